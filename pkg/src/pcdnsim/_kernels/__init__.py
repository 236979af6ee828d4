"""Hot byte-level kernels: compiled extension when built, numpy fallback otherwise.

Set PCDNSIM_PURE=1 to force the pure-python backend.
"""

import os

from pcdnsim._kernels import _pykernels

if os.environ.get("PCDNSIM_PURE") == "1":
    _impl = _pykernels
    BACKEND = "python"
else:
    try:
        from pcdnsim._kernels import _ckernels as _impl

        BACKEND = "compiled"
    except ImportError:
        _impl = _pykernels
        BACKEND = "python"

MASK64 = _pykernels.MASK64
digest64 = _impl.digest64
gen_bytes = _impl.gen_bytes
mix64 = _impl.mix64

__all__ = ["BACKEND", "MASK64", "digest64", "gen_bytes", "mix64"]
