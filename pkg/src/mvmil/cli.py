"""Command-line interface.

One subcommand per pipeline stage plus `pipeline` itself, which chains
them. Every `pipeline` config key can come from a flat key=value file
(--config) or a flag of the same name; flags win. Running the stages by
hand with matching seeds produces byte-identical artifacts to `pipeline`.
"""

from __future__ import annotations

import argparse
import os
import sys
from dataclasses import fields

import numpy as np

from . import classifier, evaluation, fisher, gmm, labelview, metric, pca, pipeline, synthgen
from .binio import FileFormatError
from .datamodel import (default_class_names, read_bag_file, read_pool_file,
                        read_score_csv, write_bag_file, write_pool_file,
                        write_score_csv)


def _int_pair(text: str) -> tuple[int, int]:
    parts = text.split(",")
    if len(parts) != 2:
        raise argparse.ArgumentTypeError(f"expected LO,HI, got {text!r}")
    return int(parts[0]), int(parts[1])


def _int_list(text: str) -> tuple[int, ...]:
    return tuple(int(part) for part in text.split(",") if part.strip())


def _cmd_synth(args) -> int:
    cfg = synthgen.SynthConfig(
        seed=args.seed, num_classes=args.classes, feature_dim=args.dim,
        num_bags=args.bags, instances_per_bag=args.instances,
        class_cluster_spread=args.spread, background_fraction=args.background,
        labels_per_bag=args.labels, exemplars_per_class=args.exemplars_per_class,
        pool_classes=args.pool_classes)
    ds, exemplars = synthgen.generate(cfg)
    write_bag_file(ds, args.out)
    print(f"wrote {ds.num_bags} bags ({ds.num_classes} classes, "
          f"dimension {ds.feature_dim}) to {args.out}")
    if args.pool_out:
        write_pool_file(exemplars, cfg.num_classes, args.pool_out)
        print(f"wrote {len(exemplars)} exemplars to {args.pool_out}")
    return 0


def _cmd_pca_fit(args) -> int:
    ds = read_bag_file(args.bags)
    model = pca.fit(np.vstack([bag.instances for bag in ds.bags]), args.energy)
    pca.save_model(model, args.out)
    print(f"kept {model.output_dim} of {model.input_dim} dimensions "
          f"(energy {args.energy}) -> {args.out}")
    return 0


def _cmd_lmnn_train(args) -> int:
    exemplars, _ = read_pool_file(args.pool)
    cfg = pipeline.PipelineConfig(
        khat=args.khat, alpha=args.alpha, d_out=args.d_out,
        lmnn_lr=args.lr, lmnn_epochs=args.epochs, seed=args.seed)
    proj = pipeline.train_metric_stage(exemplars, cfg)
    metric.save_model(proj, args.out)
    print(f"trained {proj.output_dim}x{proj.input_dim} projection on "
          f"{len(exemplars)} exemplars -> {args.out}")
    return 0


def _cmd_pool_build(args) -> int:
    exemplars, num_classes = read_pool_file(args.pool)
    proj = metric.load_model(args.metric)
    pool = labelview.build_pool(exemplars, proj, num_classes)
    labelview.save_pool(pool, args.out)
    print(f"projected pool of {pool.size} exemplars covering classes "
          f"{sorted(pool.class_coverage)} -> {args.out}")
    return 0


def _load_view_args(args):
    ds = read_bag_file(args.bags)
    pca_model = pca.load_model(args.pca)
    proj = pool = None
    if args.metric or args.pool:
        if not (args.metric and args.pool):
            raise ValueError("--metric and --pool must be given together")
        proj = metric.load_model(args.metric)
        pool = labelview.load_pool(args.pool)
    return ds, pca_model, proj, pool


def _cmd_gmm_train(args) -> int:
    ds, pca_model, proj, pool = _load_view_args(args)
    fused = pipeline.fused_bag_matrices(ds, pca_model, proj, pool, args.k,
                                        args.lam, args.threads)
    cfg = pipeline.PipelineConfig(components=args.components, gmm_iters=args.iters,
                                  subsample_cap=args.cap, seed=args.seed)
    model, trace = pipeline.fit_gmm_stage(fused, cfg)
    gmm.save_model(model, args.out)
    print(f"fit {model.num_components} components on dimension {model.dim} in "
          f"{len(trace)} EM iterations -> {args.out}")
    return 0


def _cmd_encode(args) -> int:
    ds, pca_model, proj, pool = _load_view_args(args)
    model = gmm.load_model(args.gmm)
    fused = pipeline.fused_bag_matrices(ds, pca_model, proj, pool, args.k,
                                        args.lam, args.threads)
    fvs = pipeline.encode_fvs(fused, model, args.threads)
    fisher.save_matrix(fvs, [bag.id for bag in ds.bags], args.out)
    print(f"encoded {fvs.shape[0]} bags to {fvs.shape[1]}-dimensional "
          f"Fisher vectors -> {args.out}")
    return 0


def _cmd_train(args) -> int:
    fvs, ids = fisher.load_matrix(args.features)
    ds = read_bag_file(args.bags)
    bag_ids = [bag.id for bag in ds.bags]
    if ids != bag_ids:
        raise ValueError(f"feature rows {ids[:3]}... do not match bag file "
                         f"order {bag_ids[:3]}...")
    cfg = classifier.ClassifierConfig(loss=args.loss, reg=args.reg, lr=args.lr,
                                      epochs=args.epochs, seed=args.seed)
    model = classifier.train_ova(fvs, ds.label_matrix(), cfg)
    classifier.save_model(model, args.out)
    print(f"trained {model.num_classes} one-vs-all classifiers "
          f"({cfg.loss} loss) -> {args.out}")
    return 0


def _cmd_predict(args) -> int:
    fvs, ids = fisher.load_matrix(args.features)
    model = classifier.load_model(args.classifier)
    matrix = classifier.predict(model, fvs, bag_ids=ids)
    write_score_csv(matrix, default_class_names(model.num_classes), args.out)
    print(f"scored {len(ids)} bags -> {args.out}")
    return 0


def _cmd_eval(args) -> int:
    matrix, names = read_score_csv(args.scores)
    ds = read_bag_file(args.bags)
    if len(names) != ds.num_classes:
        raise ValueError(f"scores have {len(names)} classes, bags have "
                         f"{ds.num_classes}")
    by_id = {bag.id: bag.labels for bag in ds.bags}
    missing = [i for i in matrix.bag_ids if i not in by_id]
    if missing:
        raise ValueError(f"score rows without a matching bag: {missing[:3]}...")
    labels = np.stack([by_id[i] for i in matrix.bag_ids])
    aps, map_value = evaluation.mean_average_precision(matrix, labels, args.mode)
    print(evaluation.format_report(aps, map_value, names), end="")
    if args.pr_out:
        os.makedirs(args.pr_out, exist_ok=True)
        for col, (name, ap) in enumerate(zip(names, aps)):
            if ap is None:
                continue
            curve = evaluation.average_precision(matrix.scores[:, col],
                                                 labels[:, col] == 1, args.mode)
            path = os.path.join(args.pr_out, f"pr_{name}.csv")
            with open(path, "w", encoding="utf-8") as fh:
                fh.write("recall,precision\n")
                for r, p in zip(curve.recall, curve.precision):
                    fh.write(f"{r!r},{p!r}\n")
    return 0


def _cmd_pipeline(args) -> int:
    file_values = pipeline.parse_config_file(args.config) if args.config else {}
    overrides = {f.name: getattr(args, f.name)
                 for f in fields(pipeline.PipelineConfig) if hasattr(args, f.name)}
    cfg = pipeline.build_config(file_values, overrides)
    if not cfg.out_dir:
        raise ValueError("out_dir is required")

    log = print if not args.quiet else None
    bundle = pipeline.run_train(cfg, log=log)
    pipeline.save_bundle(bundle, cfg.out_dir)
    print(f"bundle -> {cfg.out_dir}")

    if cfg.test_bags:
        test_ds = read_bag_file(cfg.test_bags)
        matrix = pipeline.run_predict(bundle, test_ds, cfg.threads, log=log)
        scores_path = os.path.join(cfg.out_dir, "scores.csv")
        write_score_csv(matrix, bundle.class_names, scores_path)
        print(f"scores -> {scores_path}")
        labels = test_ds.label_matrix()
        if labels.any():
            _, _, report = pipeline.run_eval(matrix, labels, cfg.ap_mode,
                                             bundle.class_names)
            with open(os.path.join(cfg.out_dir, "eval.txt"), "w",
                      encoding="utf-8") as fh:
                fh.write(report)
            print(report, end="")
        elif log:
            log("[eval] skipped: test bags carry no labels")
    return 0


def _add_view_flags(p: argparse.ArgumentParser) -> None:
    p.add_argument("--bags", required=True, help="input bag file")
    p.add_argument("--pca", required=True, help="PCA model file")
    p.add_argument("--metric", help="metric projection file (label view)")
    p.add_argument("--pool", help="projected pool file (label view)")
    p.add_argument("--k", type=int, default=50, help="label-view neighbors")
    p.add_argument("--lambda", dest="lam", type=float, default=1.0,
                   help="label-view scale at fusion")
    p.add_argument("--threads", type=int, default=1)


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="mvmil",
        description="Multi-view multi-instance bag classification pipeline.")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("synth", help="generate a synthetic dataset")
    p.add_argument("--out", required=True, help="output bag file")
    p.add_argument("--pool-out", help="optional output exemplar pool file")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--classes", type=int, default=6)
    p.add_argument("--dim", type=int, default=32)
    p.add_argument("--bags", type=int, default=100)
    p.add_argument("--instances", type=_int_pair, default=(20, 60),
                   help="instances per bag as LO,HI")
    p.add_argument("--labels", type=_int_pair, default=(1, 3),
                   help="positive labels per bag as LO,HI")
    p.add_argument("--spread", type=float, default=1.0)
    p.add_argument("--background", type=float, default=0.0,
                   help="fraction of background instances")
    p.add_argument("--exemplars-per-class", type=int, default=20)
    p.add_argument("--pool-classes", type=_int_list,
                   help="restrict pool exemplars to these classes, e.g. 0,1,2")
    p.set_defaults(func=_cmd_synth)

    p = sub.add_parser("pca-fit", help="fit PCA on all training proposals")
    p.add_argument("--bags", required=True)
    p.add_argument("--energy", type=float, default=0.9)
    p.add_argument("--out", required=True)
    p.set_defaults(func=_cmd_pca_fit)

    p = sub.add_parser("lmnn-train", help="learn the metric on pool exemplars")
    p.add_argument("--pool", required=True, help="exemplar pool file")
    p.add_argument("--d-out", type=int, default=128)
    p.add_argument("--khat", type=int, default=10)
    p.add_argument("--alpha", type=float, default=1.0)
    p.add_argument("--lr", type=float, default=0.02,
                   help="length of the first descent step")
    p.add_argument("--epochs", type=int, default=200)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out", required=True)
    p.set_defaults(func=_cmd_lmnn_train)

    p = sub.add_parser("pool-build", help="project the exemplar pool")
    p.add_argument("--pool", required=True, help="exemplar pool file")
    p.add_argument("--metric", required=True, help="metric projection file")
    p.add_argument("--out", required=True)
    p.set_defaults(func=_cmd_pool_build)

    p = sub.add_parser("gmm-train", help="fit the codebook on fused proposals")
    _add_view_flags(p)
    p.add_argument("--components", type=int, default=128)
    p.add_argument("--iters", type=int, default=100)
    p.add_argument("--cap", type=int, default=500_000,
                   help="subsample cap on fused vectors")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out", required=True)
    p.set_defaults(func=_cmd_gmm_train)

    p = sub.add_parser("encode", help="encode bags as Fisher vectors")
    _add_view_flags(p)
    p.add_argument("--gmm", required=True, help="GMM model file")
    p.add_argument("--out", required=True)
    p.set_defaults(func=_cmd_encode)

    p = sub.add_parser("train", help="train one-vs-all classifiers")
    p.add_argument("--features", required=True, help="encoded Fisher vectors")
    p.add_argument("--bags", required=True, help="bag file supplying labels")
    p.add_argument("--loss", choices=classifier.LOSS_TAGS, default="hinge")
    p.add_argument("--reg", type=float, default=1e-4)
    p.add_argument("--lr", type=float, default=0.1)
    p.add_argument("--epochs", type=int, default=200)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out", required=True)
    p.set_defaults(func=_cmd_train)

    p = sub.add_parser("predict", help="score encoded bags")
    p.add_argument("--features", required=True, help="encoded Fisher vectors")
    p.add_argument("--classifier", required=True, help="classifier model file")
    p.add_argument("--out", required=True, help="output score CSV")
    p.set_defaults(func=_cmd_predict)

    p = sub.add_parser("eval", help="evaluate a score CSV against bag labels")
    p.add_argument("--scores", required=True)
    p.add_argument("--bags", required=True)
    p.add_argument("--mode", choices=evaluation.AP_MODES, default="all-points")
    p.add_argument("--pr-out", help="directory for per-class PR-curve CSVs")
    p.set_defaults(func=_cmd_eval)

    p = sub.add_parser("pipeline", help="run the full train/predict/eval flow")
    p.add_argument("--config", help="flat key=value config file")
    p.add_argument("--quiet", action="store_true", help="suppress stage logs")
    p.add_argument("--train-bags", dest="train_bags")
    p.add_argument("--test-bags", dest="test_bags")
    p.add_argument("--pool")
    p.add_argument("--out-dir", dest="out_dir")
    p.add_argument("--mode", choices=pipeline.MODES)
    p.add_argument("--components", type=int)
    p.add_argument("--pca-energy", dest="pca_energy", type=float)
    p.add_argument("--k", type=int)
    p.add_argument("--khat", type=int)
    p.add_argument("--alpha", type=float)
    p.add_argument("--lambda", dest="lambdas", type=pipeline.parse_lambdas,
                   help="fusion trade-off candidates, e.g. 1,0.5,0.25")
    p.add_argument("--d-out", dest="d_out", type=int)
    p.add_argument("--lmnn-lr", dest="lmnn_lr", type=float)
    p.add_argument("--lmnn-epochs", dest="lmnn_epochs", type=int)
    p.add_argument("--clf-loss", dest="clf_loss", choices=classifier.LOSS_TAGS)
    p.add_argument("--clf-reg", dest="clf_reg", type=float)
    p.add_argument("--clf-lr", dest="clf_lr", type=float)
    p.add_argument("--clf-epochs", dest="clf_epochs", type=int)
    p.add_argument("--gmm-iters", dest="gmm_iters", type=int)
    p.add_argument("--subsample-cap", dest="subsample_cap", type=int)
    p.add_argument("--cv-folds", dest="cv_folds", type=int)
    p.add_argument("--ap-mode", dest="ap_mode", choices=evaluation.AP_MODES)
    p.add_argument("--seed", type=int)
    p.add_argument("--threads", type=int)
    p.set_defaults(func=_cmd_pipeline)

    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        return args.func(args)
    except (FileFormatError, pipeline.PipelineStageError, ValueError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
