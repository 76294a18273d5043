"""Integer kernels with a compiled backend and a numpy fallback.

The compiled extension is used when it was built; set
``AOCSTREAM_PURE_PYTHON=1`` to force the fallback.  ``BACKEND`` names the
active one.
"""
import os

from . import _pykernels

_FUNCS = ("conv_accumulate", "depthwise_accumulate", "window_conv",
          "window_depthwise", "window_max", "window_sum")

_impl = _pykernels
BACKEND = "python"
if os.environ.get("AOCSTREAM_PURE_PYTHON") != "1":
    try:
        from . import _ckernels as _impl  # noqa: F811
        BACKEND = "cython"
    except ImportError:
        _impl = _pykernels

conv_accumulate = _impl.conv_accumulate
depthwise_accumulate = _impl.depthwise_accumulate
window_conv = _impl.window_conv
window_depthwise = _impl.window_depthwise
window_max = _impl.window_max
window_sum = _impl.window_sum


def backends():
    """Available backends as ``{name: module}`` (for tests and benchmarks)."""
    found = {"python": _pykernels}
    try:
        from . import _ckernels
        found["cython"] = _ckernels
    except ImportError:
        pass
    return found
