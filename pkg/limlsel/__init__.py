# limlsel - LIML estimation and LAIC/LBIC model selection for binary-outcome IV models
from .version import VERSION, __version__

__all__ = ["VERSION", "__version__"]
