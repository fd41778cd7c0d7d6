"""Fisher-guided token selection toolkit for frozen-backbone forgery analysis."""

from .feature_store import (
    FeatureStoreError,
    FeatureTensor,
    SampleManifest,
    SampleRecord,
    TokenLayout,
    load_manifest,
    read_feature_file,
    save_manifest,
    select_tokens,
    write_feature_file,
)
from .fisher import (
    ClassStats,
    Embedding,
    SelectionConfig,
    TokenRanking,
    aggregate,
    compute_class_stats,
    fisher_scores,
    select_top_k,
)
from .classifiers import (
    CentroidModel,
    LinearProbe,
    Prediction,
    TrainingMeta,
    centroid_predict,
    fit_centroids,
    fit_probe,
    probe_predict,
)
from .metrics import ScoredSample, accuracy, average_precision, group_by_generator, roc_auc
from .harness import EvalReport, ExperimentConfig, run_experiment

__version__ = "0.1.0"
