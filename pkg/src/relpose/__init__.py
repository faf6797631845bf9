"""2D-to-3D human pose lifting with relative (positional and temporal) input encodings."""
from .config import RunConfig, TrainSettings, load_config, parse_config
from .encoding import PoseSequence2D, TemporalOperator, assemble_input, positional_encode, temporal_encode
from .errors import ConfigurationError, DataError, NumericalError, RelPoseError
from .evaluation import mpjpe, movement_range, p_mpjpe, procrustes_align
from .model import FeatureFusionNetwork, GroupPartition, ModelConfig

__version__ = "0.1.0"

__all__ = [
    "ConfigurationError",
    "DataError",
    "FeatureFusionNetwork",
    "GroupPartition",
    "ModelConfig",
    "NumericalError",
    "PoseSequence2D",
    "RelPoseError",
    "RunConfig",
    "TemporalOperator",
    "TrainSettings",
    "assemble_input",
    "load_config",
    "movement_range",
    "mpjpe",
    "p_mpjpe",
    "parse_config",
    "positional_encode",
    "procrustes_align",
    "temporal_encode",
]
