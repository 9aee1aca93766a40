"""Conv kernel backend selection.

The compiled Cython core is preferred when its extension imported
successfully; the pure-numpy fallback is otherwise used transparently.
Set PLLS_CONV_BACKEND=numpy or =cython to force a choice (forcing
cython raises if the extension is missing).
"""

import os

from . import _conv_numpy

_FORCED = os.environ.get("PLLS_CONV_BACKEND", "").strip().lower()

try:
    from . import _convcore
except ImportError:
    _convcore = None

if _FORCED == "numpy":
    _impl = _conv_numpy
elif _FORCED == "cython":
    if _convcore is None:
        raise ImportError(
            "PLLS_CONV_BACKEND=cython but the compiled extension is unavailable"
        )
    _impl = _convcore
else:
    _impl = _convcore if _convcore is not None else _conv_numpy

BACKEND = "cython" if _impl is _convcore and _convcore is not None else "numpy"

conv2d_forward = _impl.conv2d_forward
conv2d_input_grad = _impl.conv2d_input_grad
conv2d_kernel_grad = _impl.conv2d_kernel_grad
