"""Backend selection for the hot kernels.

The compiled Cython extension is preferred; a pure-numpy fallback with the
same canonical accumulation order is used when the extension is missing.
Set SPARSETRACE_BACKEND=python or =compiled to force a choice.
"""

import os

from . import _pykernels

_choice = os.environ.get("SPARSETRACE_BACKEND", "auto")

if _choice == "python":
    _impl = _pykernels
    BACKEND = "python"
else:
    try:
        from . import _ckernels as _impl  # type: ignore[no-redef]

        BACKEND = "compiled"
    except ImportError:
        if _choice == "compiled":
            raise
        _impl = _pykernels
        BACKEND = "python"

conv2d_forward = _impl.conv2d_forward
conv2d_backward_input = _impl.conv2d_backward_input
conv2d_backward_kernel = _impl.conv2d_backward_kernel
dense_forward = _impl.dense_forward
dense_backward = _impl.dense_backward
maxpool_forward = _impl.maxpool_forward
maxpool_backward = _impl.maxpool_backward
