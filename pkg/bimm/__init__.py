"""
bimm - dual-branch masked image and video modelling at desk scale.
"""
__version__ = "0.1.0"

from . import errors
from .card import to_markdown_card, to_markdown_table
from .config import Config
from .manifest import RunManifest
from .parser import parse_input
from .validator import SchemaError

__all__ = [
    "__version__",
    "Config",
    "RunManifest",
    "SchemaError",
    "errors",
    "parse_input",
    "to_markdown_card",
    "to_markdown_table",
]
