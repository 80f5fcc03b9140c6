"""Hot training kernels: compiled core with a pure-numpy fallback.

The Cython extension is preferred when it was built; setting the environment
variable ``BODE_PURE_PYTHON=1`` before import forces the numpy twin (used by
the parity tests and the kernel benchmark).
"""

import os

if os.environ.get("BODE_PURE_PYTHON"):
    from . import _py as _impl

    BACKEND = "python"
else:
    try:
        from . import _corecy as _impl  # type: ignore[attr-defined]

        BACKEND = "cython"
    except ImportError:
        from . import _py as _impl

        BACKEND = "python"

relu_ = _impl.relu_
relu_dropout_ = _impl.relu_dropout_
backprop_mask_ = _impl.backprop_mask_
softplus_floor = _impl.softplus_floor
sigmoid_scale_ = _impl.sigmoid_scale_
gaussian_nll = _impl.gaussian_nll
adamw_ = _impl.adamw_
dense_forward = _impl.dense_forward
dense_backward = _impl.dense_backward


def backend_name() -> str:
    return BACKEND
