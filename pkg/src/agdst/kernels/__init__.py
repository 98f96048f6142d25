"""Hot numeric kernels with a compiled backend and a numpy fallback.

The compiled extension is used when it imports; otherwise the numpy
versions in :mod:`._fallback` are used.  :func:`set_backend` switches at
runtime (tests and the benchmark run both).
"""

from __future__ import annotations

from types import ModuleType

from . import _fallback

try:
    from . import _ckernels
except ImportError:  # extension not built
    _ckernels = None

_BACKENDS: dict[str, ModuleType] = {"python": _fallback}
if _ckernels is not None:
    _BACKENDS["compiled"] = _ckernels

_NAMES = (
    "layer_norm_fwd",
    "layer_norm_bwd",
    "causal_softmax_fwd",
    "causal_softmax_bwd",
    "gelu_fwd",
    "gelu_bwd",
    "xent_fwd_bwd",
    "scatter_add_rows",
    "edit_distance",
)

BACKEND = ""


def available_backends() -> tuple[str, ...]:
    return tuple(_BACKENDS)


def get_backend(name: str) -> ModuleType:
    try:
        return _BACKENDS[name]
    except KeyError:
        raise ValueError(f"kernel backend {name!r} unavailable; have {available_backends()}") from None


def set_backend(name: str) -> None:
    global BACKEND
    mod = get_backend(name)
    g = globals()
    for fn in _NAMES:
        g[fn] = getattr(mod, fn)
    BACKEND = name


set_backend("compiled" if _ckernels is not None else "python")
