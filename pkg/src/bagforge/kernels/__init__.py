"""Kernel backend selection.

Two interchangeable backends provide the hot kernels:

* ``c``  — Cython extension (``_ck``), built via ``setup.py build_ext``;
* ``py`` — numpy implementations (``pyk``), always available.

The compiled backend is preferred when importable.  Set the environment
variable ``BAGFORGE_KERNELS`` to ``c`` or ``py`` to force one; forcing
``c`` when the extension is not built is a configuration error.

Each backend exposes: ``matmul``, ``softmax_rows``, ``layer_norm_rows``,
``pairwise_sq_dists``.
"""

import os

from ..errors import ConfigError
from . import pyk

try:
    from . import _ck
except ImportError:
    _ck = None

_choice = os.environ.get("BAGFORGE_KERNELS", "auto")
if _choice == "py":
    _active = pyk
elif _choice == "c":
    if _ck is None:
        raise ConfigError("BAGFORGE_KERNELS=c but the compiled extension is not built")
    _active = _ck
elif _choice == "auto":
    _active = _ck if _ck is not None else pyk
else:
    raise ConfigError(f"BAGFORGE_KERNELS must be c, py or auto, got {_choice!r}")

import numpy as _np

if _active is pyk:
    matmul = pyk.matmul  # BLAS takes transposed strides directly
else:
    def matmul(a, b):
        # typed memoryviews need C-contiguous inputs
        return _active.matmul(_np.ascontiguousarray(a), _np.ascontiguousarray(b))

softmax_rows = _active.softmax_rows
layer_norm_rows = _active.layer_norm_rows
pairwise_sq_dists = _active.pairwise_sq_dists


def backend_name() -> str:
    """Name of the backend selected at import ("c" or "py")."""
    return _active.NAME


def available_backends() -> dict:
    """Importable backends keyed by name (for the benchmark)."""
    out = {"py": pyk}
    if _ck is not None:
        out["c"] = _ck
    return out
