"""Self-similar profiles and large-time behaviour for u_t = Lap(u^m) - |x|^sigma u^p."""
from .params import Exponents, ParameterError, Params, RegimeLabel, classify_regime, derive_exponents

__all__ = ["Params", "Exponents", "ParameterError", "RegimeLabel", "classify_regime", "derive_exponents"]
__version__ = "0.1.0"
