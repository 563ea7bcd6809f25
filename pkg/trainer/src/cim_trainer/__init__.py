"""Hardware-aware quantized training and export for the CIM accelerator."""

__version__ = "0.1.0"

from .export import ExportError, export_bundle, from_bytes, to_bytes
from .hw import HwNoiseSpec
from .intsim import IntLayer, accuracy, forward, predict
from .model import QuantMlp, QuantScheme, train

__all__ = [
    "ExportError", "HwNoiseSpec", "IntLayer", "QuantMlp", "QuantScheme",
    "accuracy", "export_bundle", "forward", "from_bytes", "predict",
    "to_bytes", "train", "__version__",
]
