from .constants import VERSION
from .errors import HdrRdoError
from .params import ChromaOffsetPolicy, NormalisationPolicy, ParamsBase

__version__ = VERSION

__all__ = [
    "ChromaOffsetPolicy",
    "HdrRdoError",
    "NormalisationPolicy",
    "ParamsBase",
    "__version__",
]
