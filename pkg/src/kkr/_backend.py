"""Select the Gram-assembly implementation at import time.

``KKR_BACKEND=python`` forces the numpy code; ``KKR_BACKEND=cython`` makes a
missing compiled core an ImportError instead of a silent fallback.
"""

import os

from . import _kernels_py

_choice = os.environ.get("KKR_BACKEND", "auto").lower()
if _choice not in ("auto", "python", "cython"):
    raise ImportError(f"KKR_BACKEND must be auto, python or cython, not {_choice!r}")

_ckernels = None
if _choice != "python":
    try:
        from . import _ckernels
    except ImportError:
        if _choice == "cython":
            raise

NAME = "cython" if _ckernels is not None else "python"

if _ckernels is not None:
    koopman_gram = _ckernels.koopman_gram
else:
    koopman_gram = _kernels_py.koopman_gram

rbf_tensor = _kernels_py.rbf_tensor
contract_pullback = _kernels_py.contract_pullback
accumulate_blocks = _kernels_py.accumulate_blocks
sqdist = _kernels_py.sqdist
