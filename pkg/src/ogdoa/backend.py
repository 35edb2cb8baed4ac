"""Numerical backend selection for the EM iteration body.

Two interchangeable implementations exist: a compiled extension
(``ogdoa._kernel``, built from Cython) that fuses one whole EM iteration
into a single call, and a pure-numpy fallback that composes the public
operations from :mod:`ogdoa.inference`. The compiled kernel is preferred
when importable; set ``OGDOA_BACKEND=python`` or ``compiled`` to force a
choice. ``benchmarks/backend_bench.py`` compares the two.
"""

from __future__ import annotations

import os
from dataclasses import dataclass
from typing import Callable

__all__ = ["Backend", "get_backend", "default_backend_name", "available_backends"]

_ENV_VAR = "OGDOA_BACKEND"


@dataclass(frozen=True)
class Backend:
    """One EM-step implementation.

    ``prepare(dictionary, y)`` builds a per-run context; ``step(ctx,
    alpha, alpha0, beta, config)`` performs one EM iteration and returns
    ``(alpha_new, alpha0_new, beta_new, log_evidence_of_entering_state)``.
    """

    name: str
    prepare: Callable
    step: Callable


def _python_backend() -> Backend:
    from . import _kernel_py

    return Backend(name="python", prepare=_kernel_py.prepare, step=_kernel_py.step)


def _compiled_backend() -> Backend | None:
    try:
        from . import _kernel
    except ImportError:
        return None
    import numpy as np

    from .inference import _log_prior_terms

    def prepare(dictionary, y_working):
        return (
            np.ascontiguousarray(dictionary.A),
            np.ascontiguousarray(dictionary.B),
            np.ascontiguousarray(y_working, dtype=complex),
            dictionary.grid.interval / 2.0,
        )

    def step(ctx, alpha, alpha0, beta, config):
        a_mat, b_mat, y_working, half = ctx
        alpha_new, alpha0_new, beta_new, gauss = _kernel.em_step(
            a_mat,
            b_mat,
            y_working,
            np.ascontiguousarray(alpha, dtype=float),
            float(alpha0),
            np.ascontiguousarray(beta, dtype=float),
            config.sources,
            config.rho,
            config.c,
            config.d,
            half,
        )
        evidence = gauss + _log_prior_terms(alpha, alpha0, config)
        return alpha_new, alpha0_new, beta_new, evidence

    return Backend(name="compiled", prepare=prepare, step=step)


def available_backends() -> tuple[str, ...]:
    names = ["python"]
    if _compiled_backend() is not None:
        names.insert(0, "compiled")
    return tuple(names)


def default_backend_name() -> str:
    forced = os.environ.get(_ENV_VAR, "").strip().lower()
    if forced and forced != "auto":
        return forced
    return "compiled" if _compiled_backend() is not None else "python"


def get_backend(name: str | None = None) -> Backend:
    """Resolve a backend by name, or the default when name is None."""
    resolved = (name or default_backend_name()).strip().lower()
    if resolved == "python":
        return _python_backend()
    if resolved == "compiled":
        backend = _compiled_backend()
        if backend is None:
            raise RuntimeError(
                "compiled kernel unavailable; build the extension or use OGDOA_BACKEND=python"
            )
        return backend
    raise ValueError(f"unknown backend {resolved!r}; expected 'python' or 'compiled'")
