"""Streaming continual-learning engine for two-class EEG motor-movement
classification: threshold-triggered finetuning with transfer, replay, and
distillation strategies, an int8-backbone on-device-learning path, and the
trial-budget / ITR / latency / energy accounting that goes with it.
"""

from .dsp import (
    BiquadCascade,
    PreprocessSettings,
    RawRecording,
    TrialWindow,
    apply_filter,
    design_bandpass,
    design_notch,
    extract_trials,
    moving_average_detrend,
    preprocess_recording,
)
from .errors import ConfigurationError, IngestionError, ParameterError, TrainingError
from .metrics import RunLog, aggregate, wolpaw_itr
from .model import (
    ArchSpec,
    MIBMINet,
    TrainConfig,
    Trainer,
    evaluate,
    init_model,
    load_checkpoint,
    save_checkpoint,
)
from .quantize import (
    CostModel,
    HeadParams,
    QuantBackbone,
    calibrate_quantize,
    estimate_cost,
    odl_step,
    qforward,
)
from .strategies import ReplayBuffer, lwf_loss
from .synth import (
    GeneratorSpec,
    SessionRecord,
    generate_dataset,
    generate_probe,
    generate_session,
    read_session,
    write_session,
)
from .workflow import (
    FloatLearner,
    OdlLearner,
    SessionLog,
    TorConfig,
    chain_tl,
    evaluate_sessions,
    pretrain,
    tor_session,
    tor_workflow,
)

__version__ = "0.1.0"
