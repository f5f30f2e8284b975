"""Select the compiled kernels when available, else the numpy fallback.

Set ``HDMED_PURE_PYTHON=1`` before import to force the fallback.
"""
import os

from . import _pykernels

BACKEND = "python"
_impl = _pykernels

if os.environ.get("HDMED_PURE_PYTHON", "").strip() not in {"1", "true", "yes"}:
    try:
        from . import _ckernels as _impl  # noqa: F811

        BACKEND = "cython"
    except ImportError:
        _impl = _pykernels

cd_sweep = _impl.cd_sweep
admm_block = _impl.admm_block
ger_block = _impl.ger_block


def get_backend(name=None):
    """Return the kernel module named ``name`` ('cython' or 'python')."""
    if name is None:
        return _impl
    if name == "python":
        return _pykernels
    if name == "cython":
        from . import _ckernels

        return _ckernels
    raise ValueError(f"unknown kernel backend {name!r}")

homotopy_path = _impl.homotopy_path

# homotopy_path status codes
HOMOTOPY_OK = _pykernels.OK
HOMOTOPY_RAY = _pykernels.RAY
HOMOTOPY_MESSAGES = {
    _pykernels.SINGULAR: "singular pivot",
    _pykernels.ILL_CONDITIONED: "ill-conditioned active block",
    _pykernels.EMPTY: "support emptied",
    _pykernels.MAX_STEPS: "step limit reached",
}
