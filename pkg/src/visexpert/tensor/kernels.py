"""Kernel backend selection.

The compiled extension is used when it was built; otherwise the numpy
implementation is used.  ``VISEXPERT_KERNELS=python`` forces the fallback,
``VISEXPERT_KERNELS=compiled`` makes a missing extension an ImportError
and uses every compiled kernel.

In ``auto`` mode the elementwise SwiGLU gate stays on numpy even when the
extension is present: numpy's vectorised exp/tanh beat a scalar libm loop
(see benchmarks/bench_kernels.py).
"""
import os

from . import _kernels_py as python_backend

_choice = os.environ.get("VISEXPERT_KERNELS", "auto").lower()

compiled_backend = None
if _choice != "python":
    try:
        from . import _ckernels as compiled_backend
    except ImportError:
        if _choice == "compiled":
            raise

BACKEND = "compiled" if compiled_backend is not None else "python"
_impl = compiled_backend if compiled_backend is not None else python_backend

conv2x2_s2_forward = _impl.conv2x2_s2_forward
conv2x2_s2_backward = _impl.conv2x2_s2_backward
softmax_rows = _impl.softmax_rows
softmax_rows_backward = _impl.softmax_rows_backward
_gate_impl = _impl if _choice == "compiled" else python_backend
swiglu_gate = _gate_impl.swiglu_gate
swiglu_gate_backward = _gate_impl.swiglu_gate_backward
