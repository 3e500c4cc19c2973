"""Cross-validated recursive stacking of heterogeneous prediction experts.

The pipeline augments each instance's concept vector with out-of-fold expert
predictions level by level, trains a neural complementary expert alongside a
per-instance combination network against the meta loss, and serves a single
model that blends every candidate's class distribution.
"""

from .dataio import (
    ConceptVector,
    DataFormatError,
    Dataset,
    FoldMap,
    LabelSpace,
    assign_folds,
    fold_complement,
    parse_libsvm,
    synth_gaussian_mixture,
    write_libsvm,
)
from .experts import (
    Block,
    ExpertSpec,
    TrainedExpert,
    fit_expert,
    predict_batch,
    predict_expert,
)
from .metastack import (
    AttentionReport,
    AugmentedDataset,
    StackConfig,
    SuperConeModel,
    TrainTrace,
    adapt_experts,
    attention_report,
    build_meta_level,
    h_train_forward,
    meta_train,
    predict_final,
    predict_final_batch,
    train_supercone,
    uniform_rosters,
)
from .metrics import MetricsReport, evaluate_predictions
from .modelio import load_model, save_model
from .neuralcore import MetaParams, Structure, init_meta_params

__version__ = "0.1.0"

__all__ = [
    "AttentionReport",
    "AugmentedDataset",
    "Block",
    "ConceptVector",
    "DataFormatError",
    "Dataset",
    "ExpertSpec",
    "FoldMap",
    "LabelSpace",
    "MetaParams",
    "MetricsReport",
    "StackConfig",
    "Structure",
    "SuperConeModel",
    "TrainTrace",
    "TrainedExpert",
    "adapt_experts",
    "assign_folds",
    "attention_report",
    "build_meta_level",
    "evaluate_predictions",
    "fit_expert",
    "fold_complement",
    "h_train_forward",
    "init_meta_params",
    "load_model",
    "meta_train",
    "parse_libsvm",
    "predict_batch",
    "predict_expert",
    "predict_final",
    "predict_final_batch",
    "save_model",
    "synth_gaussian_mixture",
    "train_supercone",
    "uniform_rosters",
    "write_libsvm",
    "__version__",
]
