"""Two-stream recurrent clip classifiers with cascade attention, in numpy."""

from .attention import AttentionOutput, attend, attend_backward, dot_score
from .data import (
    CLASS_NAMES,
    ClipSample,
    DatasetManifest,
    SyntheticTask,
    SyntheticTaskSpec,
    generate_synthetic,
    load_split,
    make_synthetic,
    read_clip,
    subsample,
    write_clip,
)
from .estimator import CascadeAttentionClassifier, check_clips
from .exceptions import (
    ArgumentError,
    CascadeAttnError,
    ConfigError,
    ContractError,
    DataError,
    DimensionError,
    FormatError,
    NumericError,
)
from .metrics import (
    EvalReport,
    accuracy,
    average_precision,
    confusion_matrix,
    mean_average_precision,
    rater_disagreement,
)
from .models import (
    ArchitectureKind,
    ClipPrediction,
    Model,
    ModelConfig,
    backward_clip,
    build_model,
    count_params,
    forward_clip,
    load_checkpoint,
    comparison_config,
    save_checkpoint,
)
from .optim import AdamState, TrainConfig, TrainingState, adam_apply, cross_entropy, evaluate, train
from .rnn import LstmLayerParams, LstmStack, LstmState, lstm_backward, lstm_forward, lstm_step
from .tensor import GradCheckReport, concat, finite_difference_gradcheck, matmul, softmax

__version__ = "0.1.0"
