"""Kernel backend selection.

The hot loops (scheduled circuit evaluation, EM sweeps, rANS coding) have
two implementations with identical semantics: a Cython extension
(`_ckern`) and a pure-numpy fallback (`pykern`).  The compiled backend is
preferred when importable; set PCZIP_KERNELS=python or PCZIP_KERNELS=c to
force one.  Quantized tables are floating-point derived, so archives must
be decoded with the same backend that encoded them (bit-identical table
reproduction is guaranteed per backend, not across backends).
"""

import os

from . import pykern

_choice = os.environ.get("PCZIP_KERNELS", "").lower()

if _choice in ("python", "py"):
    active = pykern
    BACKEND = "python"
elif _choice in ("c", "cython", "compiled"):
    from . import _ckern  # noqa: F401  (raises if the extension is missing)

    active = _ckern
    BACKEND = "c"
else:
    try:
        from . import _ckern

        active = _ckern
        BACKEND = "c"
    except ImportError:
        active = pykern
        BACKEND = "python"


def get_backend(name: str | None = None):
    """Return a kernels module by name ('c', 'python', or None=active)."""
    if name is None:
        return active
    if name in ("python", "py"):
        return pykern
    if name in ("c", "cython", "compiled"):
        from . import _ckern

        return _ckern
    raise ValueError(f"unknown backend {name!r}")
