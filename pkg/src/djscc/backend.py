"""Kernel backend selection.

The convolution kernels dominate runtime and exist in two
implementations: a numba-jitted one (default) and a pure numpy one.
``DJSCC_BACKEND=numpy`` forces the fallback; ``DJSCC_BACKEND=numba``
makes a missing/broken numba an import error instead of a silent
downgrade.

Both modules export the same three functions with identical semantics:

``conv2d_forward(x, w, b, stride, pad)``
    x [N,C,H,W], w [O,C,kH,kW], b [O] -> y [N,O,Ho,Wo], cross-correlation.
``conv2d_grad_input(gy, w, stride, pad, H, W)``
    adjoint wrt x; also the forward map of transposed convolution.
``conv2d_grad_weight(gy, x, stride, pad, kH, kW)``
    adjoint wrt w.
"""
import os

_requested = os.environ.get("DJSCC_BACKEND", "").strip().lower()
if _requested not in ("", "numba", "numpy"):
    raise RuntimeError(
        f"DJSCC_BACKEND must be 'numba' or 'numpy', got {_requested!r}")

if _requested == "numpy":
    from . import _kernels_numpy as _impl
    BACKEND = "numpy"
else:
    try:
        from . import _kernels_numba as _impl
        BACKEND = "numba"
    except ImportError:
        if _requested == "numba":
            raise
        from . import _kernels_numpy as _impl
        BACKEND = "numpy"

conv2d_forward = _impl.conv2d_forward
conv2d_grad_input = _impl.conv2d_grad_input
conv2d_grad_weight = _impl.conv2d_grad_weight
