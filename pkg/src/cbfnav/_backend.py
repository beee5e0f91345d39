"""Kernel backend selection.

The compiled ``_ckernels`` extension is used when it imports; otherwise the
pure-Python ``_pykernels`` module. Set ``CBFNAV_BACKEND=python`` to force the
fallback.
"""

import os

kernels = None

if os.environ.get("CBFNAV_BACKEND", "").lower() != "python":
    try:
        from . import _ckernels as kernels
    except ImportError:
        kernels = None

if kernels is None:
    from . import _pykernels as kernels

BACKEND = kernels.BACKEND
