"""Bridge from published CLIP visual-tower checkpoints to molex archives."""

from . import archive, convert, namemap
from .convert import ConversionError
from .namemap import PRESETS

__all__ = ["archive", "convert", "namemap", "ConversionError", "PRESETS"]

__version__ = "0.1.0"
