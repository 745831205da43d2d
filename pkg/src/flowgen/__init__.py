"""Flow-matching vs. diffusion generation of multichannel physiological signals, with evaluation metrics."""

from .errors import ConfigError, ContractViolation, FlowgenError, FormatError, NumericError
from .signal import (
    ConditionVector,
    LabeledDataset,
    MultiLeadSignal,
    SynthSpec,
    load_dataset,
    reconstruct_twelve_lead,
    save_dataset,
    synth_dataset,
)

__version__ = "0.1.0"
