"""Multi-view multi-instance bag classification.

Bags of per-proposal feature vectors are encoded as Fisher vectors over a
GMM codebook fit on fused proposal representations: a PCA feature view
concatenated with a label view built from the nearest strong-label
exemplars in a learned large-margin metric space. One-vs-all linear
classifiers score the encoded bags; ranking quality is reported as
AP/mAP. See the README for the CLI walkthrough.
"""

from __future__ import annotations

from .binio import FileFormatError
from .classifier import ClassifierConfig, LinearClassifierSet, predict, train_ova
from .datamodel import (Bag, Dataset, LabeledExemplar, ScoreMatrix,
                        default_class_names, read_bag_file, read_pool_file,
                        read_score_csv, write_bag_file, write_pool_file,
                        write_score_csv)
from .evaluation import PrCurve, average_precision, mean_average_precision
from .fisher import FisherVector, encode, encode_dataset, normalize
from .gmm import EmConfig, GmmModel, Responsibilities, fit_em, log_likelihood, soft_assign
from .labelview import (CandidatePool, FusionConfig, LabelViewVector, build_pool,
                        encode_bag_views, encode_label_view, fuse, knn)
from .metric import (LmnnConfig, MetricProjection, TargetNeighborSet, lmnn_gradient,
                     lmnn_loss, select_target_neighbors)
from .pca import PcaModel
from .pipeline import (ArtifactBundle, PipelineConfig, PipelineStageError,
                       build_config, load_bundle, parse_config_file, run_eval,
                       run_predict, run_train, save_bundle)
from .synthgen import SynthConfig, generate

__version__ = "0.1.0"

__all__ = [
    "ArtifactBundle", "Bag", "CandidatePool", "ClassifierConfig", "Dataset",
    "EmConfig", "FileFormatError", "FisherVector", "FusionConfig", "GmmModel",
    "LabelViewVector", "LabeledExemplar", "LinearClassifierSet", "LmnnConfig",
    "MetricProjection", "PcaModel", "PipelineConfig", "PipelineStageError",
    "PrCurve", "Responsibilities", "ScoreMatrix", "SynthConfig",
    "TargetNeighborSet", "average_precision", "build_config", "build_pool",
    "default_class_names", "encode", "encode_bag_views", "encode_dataset",
    "encode_label_view", "fit_em", "fuse", "generate", "knn", "lmnn_gradient",
    "lmnn_loss", "load_bundle", "log_likelihood", "mean_average_precision",
    "normalize", "parse_config_file", "predict", "read_bag_file",
    "read_pool_file", "read_score_csv", "run_eval", "run_predict", "run_train",
    "save_bundle", "select_target_neighbors", "soft_assign", "train_ova",
    "write_bag_file", "write_pool_file", "write_score_csv",
]
