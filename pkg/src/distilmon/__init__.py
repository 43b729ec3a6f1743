"""distilmon: teacher-student knowledge sharing for decentralized
time-series process monitoring.

A data-rich unit trains a small 1-D CNN on its windowed sensor streams; a
data-poor unit then trains the same architecture on its own (smaller, noisier,
differently distributed) data against a combined objective, mixing hard-label
cross-entropy with a temperature-softened match to the frozen teacher's output
distribution. Everything is deterministic given a seed.
"""

__version__ = "0.1.0"

from .data import SensorStream, TimeWindow, WindowConfig
from .distillation import DistillConfig
from .network import ArchitectureSpec, CnnParameters
from .numerics import RngStream, derive_stream
from .orchestrator import TrainConfig

__all__ = [
    "ArchitectureSpec",
    "CnnParameters",
    "DistillConfig",
    "RngStream",
    "SensorStream",
    "TimeWindow",
    "TrainConfig",
    "WindowConfig",
    "derive_stream",
    "__version__",
]
