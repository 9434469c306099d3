"""End-to-end orchestration: train, predict, evaluate.

The training flow mirrors the system it models: fit PCA on all training
proposals, learn the metric on pool exemplars and project the pool, build
per-proposal fused vectors, fit a GMM on a capped subsample of them,
encode normalized Fisher vectors per bag, pick the fusion trade-off by
cross-validation when several candidates are given, and train one-vs-all
linear classifiers on the encoded bags.

Everything is seeded from one config value and every stage that draws
randomness builds a fresh generator from it, so a pipeline run and the
equivalent chain of CLI subcommands produce byte-identical artifacts, for
any --threads value.
"""

from __future__ import annotations

import os
import time
import warnings
from contextlib import contextmanager
from dataclasses import dataclass, fields

import numpy as np

from . import classifier, evaluation, fisher, gmm, labelview, metric, pca
from .binio import FileFormatError
from .datamodel import (Dataset, LabeledExemplar, ScoreMatrix, read_bag_file,
                        read_pool_file)
from .parallel import ordered_map

MODES = ("fev", "fev+lv")

BUNDLE_MANIFEST = "bundle.cfg"
BUNDLE_FILES = {
    "pca": "pca.mila",
    "gmm": "gmm.milg",
    "classifiers": "classifiers.milc",
    "metric": "metric.milw",
    "pool": "pool.milq",
}


class PipelineStageError(RuntimeError):
    """A stage failed; carries the stage name and the underlying cause."""

    def __init__(self, stage: str, cause: BaseException):
        self.stage = stage
        self.cause = cause
        super().__init__(f"stage {stage!r} failed: {cause}")


@dataclass
class PipelineConfig:
    """Flat run description; every field doubles as a config-file key.

    The one naming exception: the fusion trade-off candidates are the
    `lambda` key in files and flags but the `lambdas` field here (the
    word is reserved in Python). A single candidate skips the
    cross-validation stage.
    """

    train_bags: str = ""
    test_bags: str = ""
    pool: str = ""
    out_dir: str = ""
    mode: str = "fev+lv"
    components: int = 128
    pca_energy: float = 0.9
    k: int = 50
    khat: int = 10
    alpha: float = 1.0
    lambdas: tuple[float, ...] = (1.0, 0.5, 0.25)
    d_out: int = 128
    lmnn_lr: float = 0.02
    lmnn_epochs: int = 200
    clf_loss: str = "hinge"
    clf_reg: float = 1e-4
    clf_lr: float = 0.1
    clf_epochs: int = 200
    gmm_iters: int = 100
    subsample_cap: int = 500_000
    cv_folds: int = 3
    ap_mode: str = "all-points"
    seed: int = 0
    threads: int = 1

    def __post_init__(self):
        if self.mode not in MODES:
            raise ValueError(f"mode must be one of {MODES}, got {self.mode!r}")
        if not 0.0 < self.pca_energy <= 1.0:
            raise ValueError(f"pca_energy must be in (0, 1], got {self.pca_energy}")
        if not self.lambdas or any(lam <= 0 for lam in self.lambdas):
            raise ValueError(f"every lambda candidate must be > 0, got {self.lambdas}")
        for name in ("components", "k", "khat", "d_out", "lmnn_epochs",
                     "gmm_iters", "subsample_cap", "threads"):
            if getattr(self, name) < 1:
                raise ValueError(f"{name} must be >= 1, got {getattr(self, name)}")
        if self.cv_folds < 2:
            raise ValueError(f"cv_folds must be >= 2, got {self.cv_folds}")
        if self.alpha < 0 or self.lmnn_lr <= 0:
            raise ValueError(f"need alpha >= 0 and lmnn_lr > 0, got "
                             f"{self.alpha} and {self.lmnn_lr}")
        if self.ap_mode not in evaluation.AP_MODES:
            raise ValueError(f"ap_mode must be one of {evaluation.AP_MODES}, "
                             f"got {self.ap_mode!r}")
        self.classifier_config()

    def classifier_config(self) -> classifier.ClassifierConfig:
        return classifier.ClassifierConfig(loss=self.clf_loss, reg=self.clf_reg,
                                           lr=self.clf_lr, epochs=self.clf_epochs,
                                           seed=self.seed)


# --- config file handling ---------------------------------------------------

_KEY_TO_FIELD = {"lambda": "lambdas"}
_FIELD_TO_KEY = {v: k for k, v in _KEY_TO_FIELD.items()}


def parse_lambdas(text: str) -> tuple[float, ...]:
    return tuple(float(part) for part in text.split(",") if part.strip())


# field annotations are strings (postponed evaluation), so key on them
_CONVERTERS = {
    "str": str,
    "int": int,
    "float": float,
    "tuple[float, ...]": parse_lambdas,
}


def config_keys() -> tuple[str, ...]:
    return tuple(_FIELD_TO_KEY.get(f.name, f.name) for f in fields(PipelineConfig))


def parse_config_file(path) -> dict[str, str]:
    """Flat UTF-8 key=value lines; '#' starts a comment; blanks ignored."""
    values: dict[str, str] = {}
    with open(path, "r", encoding="utf-8") as fh:
        for lineno, raw in enumerate(fh, start=1):
            line = raw.split("#", 1)[0].strip()
            if not line:
                continue
            key, sep, value = line.partition("=")
            if not sep:
                raise FileFormatError(path, 0, f"line {lineno}: expected key=value, "
                                               f"got {line!r}")
            values[key.strip()] = value.strip()
    return values


def build_config(file_values: dict[str, str] | None = None,
                 overrides: dict[str, object] | None = None) -> PipelineConfig:
    """Defaults, then config-file values, then explicit overrides."""
    merged: dict[str, object] = {}
    types = {f.name: f.type for f in fields(PipelineConfig)}
    for key, raw in (file_values or {}).items():
        name = _KEY_TO_FIELD.get(key, key)
        if name not in types:
            raise ValueError(f"unknown config key {key!r}; valid keys: "
                             f"{', '.join(sorted(config_keys()))}")
        try:
            merged[name] = _CONVERTERS[types[name]](raw)
        except ValueError as exc:
            raise ValueError(f"config key {key!r}: {exc}") from exc
    for key, value in (overrides or {}).items():
        if value is not None:
            merged[_KEY_TO_FIELD.get(key, key)] = value
    return PipelineConfig(**merged)


# --- artifacts ---------------------------------------------------------------


@dataclass
class ArtifactBundle:
    """Everything needed to score new bags, as trained by run_train."""

    mode: str
    k: int
    fitted_lambda: float | None
    class_names: tuple[str, ...]
    pca: pca.PcaModel
    gmm: gmm.GmmModel
    classifiers: classifier.LinearClassifierSet
    metric: metric.MetricProjection | None = None
    pool: labelview.CandidatePool | None = None

    def __post_init__(self):
        if self.mode not in MODES:
            raise ValueError(f"mode must be one of {MODES}, got {self.mode!r}")
        if self.mode == "fev+lv" and (self.metric is None or self.pool is None
                                      or self.fitted_lambda is None):
            raise ValueError("mode fev+lv requires metric, pool and fitted lambda")


def save_bundle(bundle: ArtifactBundle, out_dir) -> None:
    os.makedirs(out_dir, exist_ok=True)
    lines = [f"mode={bundle.mode}",
             f"classes={','.join(bundle.class_names)}"]
    pca.save_model(bundle.pca, os.path.join(out_dir, BUNDLE_FILES["pca"]))
    gmm.save_model(bundle.gmm, os.path.join(out_dir, BUNDLE_FILES["gmm"]))
    classifier.save_model(bundle.classifiers,
                          os.path.join(out_dir, BUNDLE_FILES["classifiers"]))
    if bundle.mode == "fev+lv":
        lines += [f"k={bundle.k}", f"lambda={bundle.fitted_lambda!r}"]
        metric.save_model(bundle.metric, os.path.join(out_dir, BUNDLE_FILES["metric"]))
        labelview.save_pool(bundle.pool, os.path.join(out_dir, BUNDLE_FILES["pool"]))
    with open(os.path.join(out_dir, BUNDLE_MANIFEST), "w", encoding="utf-8") as fh:
        fh.write("\n".join(lines) + "\n")


def load_bundle(out_dir) -> ArtifactBundle:
    manifest = os.path.join(out_dir, BUNDLE_MANIFEST)
    values = parse_config_file(manifest)
    try:
        mode = values["mode"]
        names = tuple(values["classes"].split(","))
    except KeyError as exc:
        raise FileFormatError(manifest, 0, f"missing manifest key {exc}") from exc
    if mode not in MODES:
        raise FileFormatError(manifest, 0, f"unknown mode {mode!r}")
    proj = pool = None
    k, lam = 1, None
    if mode == "fev+lv":
        try:
            k, lam = int(values["k"]), float(values["lambda"])
        except KeyError as exc:
            raise FileFormatError(manifest, 0, f"missing manifest key {exc}") from exc
        proj = metric.load_model(os.path.join(out_dir, BUNDLE_FILES["metric"]))
        pool = labelview.load_pool(os.path.join(out_dir, BUNDLE_FILES["pool"]))
    return ArtifactBundle(
        mode=mode, k=k, fitted_lambda=lam, class_names=names,
        pca=pca.load_model(os.path.join(out_dir, BUNDLE_FILES["pca"])),
        gmm=gmm.load_model(os.path.join(out_dir, BUNDLE_FILES["gmm"])),
        classifiers=classifier.load_model(os.path.join(out_dir, BUNDLE_FILES["classifiers"])),
        metric=proj, pool=pool)


# --- stage plumbing ----------------------------------------------------------


@contextmanager
def _stage(name: str, log):
    start = time.perf_counter()
    try:
        yield
    except PipelineStageError:
        raise
    except Exception as exc:
        raise PipelineStageError(name, exc) from exc
    if log:
        log(f"[{name}] done in {time.perf_counter() - start:.2f}s")


def train_metric_stage(exemplars: list[LabeledExemplar], cfg: PipelineConfig
                       ) -> metric.MetricProjection:
    """Metric training with the step size set relative to the start point.

    cfg.lmnn_lr is the Frobenius length of the very first descent step;
    dividing by the gradient norm at the initial projection makes one
    setting usable across data scales. The resulting literal rate stays
    fixed for the whole descent.
    """
    feats = np.stack([ex.features for ex in exemplars])
    classes = np.array([ex.class_index for ex in exemplars])
    eta = metric.select_target_neighbors(feats, classes, cfg.khat)
    start = metric.initial_projection(feats, cfg.d_out)
    gnorm = float(np.linalg.norm(metric.lmnn_gradient(start, feats, classes,
                                                      eta, cfg.alpha)))
    rate = cfg.lmnn_lr / gnorm if gnorm > 0 else cfg.lmnn_lr
    lmnn_cfg = metric.LmnnConfig(alpha=cfg.alpha, khat=cfg.khat, d_out=cfg.d_out,
                                 learning_rate=rate, epochs=cfg.lmnn_epochs,
                                 seed=cfg.seed)
    proj, _ = metric.train(feats, classes, lmnn_cfg)
    return proj


def fused_bag_matrices(ds: Dataset, pca_model: pca.PcaModel,
                       proj: metric.MetricProjection | None,
                       pool: labelview.CandidatePool | None,
                       k: int, lam: float, threads: int = 1) -> list[np.ndarray]:
    """Per-bag proposal matrices ready for GMM fitting and FV encoding.

    Without a metric/pool (mode fev) this is just the PCA feature view;
    with them, each row is [pca(x), lam * label_view(x)].
    """
    if proj is None:
        return ordered_map(lambda bag: pca.project(pca_model, bag.instances),
                           ds.bags, threads)
    fusion = labelview.FusionConfig(lam=lam)
    return ordered_map(
        lambda bag: labelview.encode_bag_views(bag, pca_model, proj, pool, k, fusion),
        ds.bags, threads)


def fit_gmm_stage(fused: list[np.ndarray], cfg: PipelineConfig
                  ) -> tuple[gmm.GmmModel, list[float]]:
    """Fit the codebook on a seeded uniform subsample of all fused rows."""
    stacked = np.vstack(fused)
    if stacked.shape[0] > cfg.subsample_cap:
        rng = np.random.default_rng(cfg.seed)
        keep = rng.choice(stacked.shape[0], size=cfg.subsample_cap, replace=False)
        keep.sort()
        stacked = stacked[keep]
    em_cfg = gmm.EmConfig(max_iter=cfg.gmm_iters, seed=cfg.seed)
    return gmm.fit_em(stacked, cfg.components, em_cfg)


def encode_fvs(fused: list[np.ndarray], model: gmm.GmmModel,
               threads: int = 1) -> np.ndarray:
    """Normalized Fisher vector per bag, stacked in bag order."""
    rows = ordered_map(lambda mat: fisher.normalize(fisher.encode(model, mat)).values,
                       fused, threads)
    return np.stack(rows)


def _cv_score(fvs: np.ndarray, labels: np.ndarray, cfg: PipelineConfig) -> float:
    """Mean validation mAP of classifiers over seeded bag folds."""
    rng = np.random.default_rng(cfg.seed)
    folds = np.array_split(rng.permutation(fvs.shape[0]), cfg.cv_folds)
    scores = []
    for fold in folds:
        train_idx = np.setdiff1d(np.arange(fvs.shape[0]), fold)
        with warnings.catch_warnings():
            warnings.simplefilter("ignore")
            model = classifier.train_ova(fvs[train_idx], labels[train_idx],
                                         cfg.classifier_config())
            predicted = classifier.predict(model, fvs[fold])
            try:
                _, map_value = evaluation.mean_average_precision(
                    predicted, labels[fold], cfg.ap_mode)
            except ValueError:
                continue
        scores.append(map_value)
    if not scores:
        raise ValueError("no cross-validation fold had a scoreable class")
    return float(np.mean(scores))


def run_train(cfg: PipelineConfig, log=None) -> ArtifactBundle:
    """Execute the training flow; any stage failure names its stage."""
    with _stage("config", log):
        if not cfg.train_bags:
            raise ValueError("train_bags is required")
        if cfg.mode == "fev+lv" and not cfg.pool:
            raise ValueError("mode fev+lv requires a pool file")

    with _stage("load-train", log):
        ds = read_bag_file(cfg.train_bags)
        labels = ds.label_matrix()
        if not labels.any():
            raise ValueError("training bags carry no positive labels")

    with _stage("pca", log):
        pca_model = pca.fit(np.vstack([bag.instances for bag in ds.bags]),
                            cfg.pca_energy)
        if log:
            log(f"[pca] kept {pca_model.output_dim} of {pca_model.input_dim} "
                f"dimensions at energy {cfg.pca_energy}")

    proj = pool = None
    if cfg.mode == "fev+lv":
        with _stage("lmnn", log):
            exemplars, pool_classes = read_pool_file(cfg.pool)
            if pool_classes != ds.num_classes:
                raise ValueError(f"pool declares {pool_classes} classes, "
                                 f"training bags have {ds.num_classes}")
            proj = train_metric_stage(exemplars, cfg)
        with _stage("pool", log):
            pool = labelview.build_pool(exemplars, proj, ds.num_classes)
            if cfg.k > pool.size:
                raise ValueError(f"k={cfg.k} exceeds pool size {pool.size}")
            if log:
                log(f"[pool] {pool.size} exemplars covering classes "
                    f"{sorted(pool.class_coverage)} (seed {cfg.seed})")

    candidates = cfg.lambdas if cfg.mode == "fev+lv" else (1.0,)
    per_lambda: dict[float, tuple[gmm.GmmModel, np.ndarray]] = {}
    for lam in candidates:
        with _stage("fuse", log):
            fused = fused_bag_matrices(ds, pca_model, proj, pool, cfg.k, lam,
                                       cfg.threads)
        with _stage("gmm", log):
            model, trace = fit_gmm_stage(fused, cfg)
            if log:
                log(f"[gmm] lambda={lam}: {len(trace)} EM iterations, "
                    f"final log-likelihood {trace[-1]:.4f} (seed {cfg.seed})")
        with _stage("encode", log):
            per_lambda[lam] = (model, encode_fvs(fused, model, cfg.threads))

    if len(candidates) > 1:
        with _stage("cv", log):
            means = {lam: _cv_score(per_lambda[lam][1], labels, cfg)
                     for lam in candidates}
            fitted = max(candidates, key=lambda lam: means[lam])
            if log:
                for lam in candidates:
                    log(f"[cv] lambda={lam}: mean validation mAP {means[lam]:.4f}")
                log(f"[cv] selected lambda={fitted}")
    else:
        fitted = candidates[0]

    gmm_model, fvs = per_lambda[fitted]
    with _stage("classifier", log):
        clf = classifier.train_ova(fvs, labels, cfg.classifier_config())

    return ArtifactBundle(
        mode=cfg.mode, k=cfg.k,
        fitted_lambda=fitted if cfg.mode == "fev+lv" else None,
        class_names=ds.class_names, pca=pca_model, gmm=gmm_model,
        classifiers=clf, metric=proj, pool=pool)


def run_predict(bundle: ArtifactBundle, ds: Dataset, threads: int = 1,
                log=None) -> ScoreMatrix:
    """Score every bag of `ds` with a trained bundle."""
    with _stage("predict", log):
        if ds.feature_dim != bundle.pca.input_dim:
            raise ValueError(f"bags have dimension {ds.feature_dim}, bundle "
                             f"expects {bundle.pca.input_dim}")
        if ds.num_classes != len(bundle.class_names):
            raise ValueError(f"bags declare {ds.num_classes} classes, bundle "
                             f"has {len(bundle.class_names)}")
        fused = fused_bag_matrices(ds, bundle.pca, bundle.metric, bundle.pool,
                                   bundle.k, bundle.fitted_lambda or 1.0, threads)
        fvs = encode_fvs(fused, bundle.gmm, threads)
        return classifier.predict(bundle.classifiers, fvs,
                                  bag_ids=[bag.id for bag in ds.bags])


def run_eval(scores: ScoreMatrix, labels: np.ndarray, mode: str = "all-points",
             class_names=None) -> tuple[list[float | None], float, str]:
    """Per-class APs, mAP, and a formatted text report."""
    aps, map_value = evaluation.mean_average_precision(scores, labels, mode)
    names = list(class_names) if class_names else [f"class_{c}" for c in range(len(aps))]
    return aps, map_value, evaluation.format_report(aps, map_value, names)
