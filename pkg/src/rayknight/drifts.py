"""Compilation helpers for user-supplied drift functions."""

from __future__ import annotations

from typing import Callable

import numba
import numpy as np

_jit_cache: dict = {}


def jit_drift(g: Callable) -> Callable:
    """Compile a plain Python drift ``g(a, b)`` with numba (cached per callable)."""
    if isinstance(g, numba.core.registry.CPUDispatcher):
        return g
    if g not in _jit_cache:
        _jit_cache[g] = numba.njit(g)
    return _jit_cache[g]


def integrate_drift_g(g: Callable) -> Callable:
    """Feller drift ``f(t, l) = 2 * int_0^l g(t, y) dy`` for an exploration drift ``g``.

    The factor 2 comes from the Tanaka identity ``L = 2 int 1{H <= t} dH``. The
    integral uses 8-point Gauss-Legendre, exact for polynomial ``g`` of degree
    up to 15 in its second argument.
    """
    nodes, weights = np.polynomial.legendre.leggauss(8)
    u = (nodes + 1.0) / 2.0
    w = weights / 2.0
    gj = jit_drift(g)

    @numba.njit
    def f(t, l):
        acc = 0.0
        for i in range(8):
            acc += w[i] * gj(t, l * u[i])
        return 2.0 * l * acc

    return f
