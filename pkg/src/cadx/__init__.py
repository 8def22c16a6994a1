"""Lung-nodule texture CADx: LBP-TOP features, boosted trees / RBF SVM, random vs TPE search."""

from .boosting import GBTClassifier, GBTModel, GBTParams, predict_proba_gbt, train_gbt
from .dataset import LabeledDataset, read_features_csv, write_features_csv
from .evaluation import (
    ExperimentConfig,
    ExperimentReport,
    accuracy,
    build_feature_cache,
    log_loss,
    loocv_loss,
    loocv_predict,
    roc_auc,
    run_experiment,
)
from .hpo import ParamSpace, ParamSpec, SearchResult, TpeConfig, full_space, run_search, sample_random, tpe_suggest
from .svm import SMOConvergenceError, SVMClassifier, SVMModel, SVMParams, predict_proba_svm, train_svm
from .synthdata import SynthConfig, generate_dataset, generate_volumes
from .texture import FeatureVector, LBPTOPTransformer, LbpParams, lbp_top, lbp_top_counts, riu2_encode
from .volume import NoduleRef, Volume, crop_cube, load_volume, read_manifest, resample_isotropic, write_volume

__version__ = "0.1.0"
