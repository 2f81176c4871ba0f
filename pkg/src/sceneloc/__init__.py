"""Scene-location recognition over sampled video frame sequences.

The pipeline: a scene catalog names frame ranges per location; a feature
backbone turns sampled frames into fixed-width vectors; six trainable
aggregation heads collapse each frame sequence into a location distribution;
and a comparison harness scores the heads against each other across episode
datasets with nonparametric tests.
"""

from .catalog import (
    Catalog,
    FramePlan,
    SceneRecord,
    cap_class_frequency,
    parse_catalog,
    sample_frame_indices,
    serialize_catalog,
)
from .errors import (
    CatalogError,
    DivergenceError,
    FeatureFormatError,
    RunMatrixError,
    SamplingError,
    SceneLocError,
    SceneLookupError,
    SplitError,
)
from .evaluation import (
    ComparisonReport,
    EpisodeRunMatrix,
    Summary,
    accuracy,
    compare_heads,
    read_run_matrix,
    render_report_text,
    summarize,
    win_matrix,
    write_run_matrix,
)
from .features import (
    BackboneSpec,
    FeatureDataset,
    FeatureSequence,
    assemble_input,
    mock_features,
    read_feature_file,
    write_feature_file,
)
from .heads import (
    MODEL_NAMES,
    MODEL_ORDER,
    ForwardTrace,
    HeadKind,
    HeadModel,
    dense_timedistributed,
    head_backward,
    head_forward,
    init_params,
    load_checkpoint,
    save_checkpoint,
    softmax,
)
from .stats import (
    FriedmanResult,
    WilcoxonResult,
    friedman_test,
    holm_adjust,
    wilcoxon_signed_rank,
)
from .synthetic import SyntheticSpec, generate_synthetic
from .training import (
    TrainConfig,
    TrainReport,
    balanced_sample,
    cross_entropy,
    grad_check,
    optimizer_step,
    stratified_split,
    train,
)

__version__ = "0.1.0"
