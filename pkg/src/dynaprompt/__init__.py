"""Dynamic test-time prompt tuning on a toy vision-language classifier."""

from .harness import RunConfig, RunResult, StrategySpec, gradcheck, run, sweep_buffer_size, sweep_order
from .model import ModelConfig, Prompt
from .augment import AugConfig
from .stream import PRESETS, StreamConfig, collapse_stream

__all__ = [
    "AugConfig", "ModelConfig", "PRESETS", "Prompt", "RunConfig", "RunResult", "StrategySpec", "StreamConfig",
    "collapse_stream", "gradcheck", "run", "sweep_buffer_size", "sweep_order",
]
