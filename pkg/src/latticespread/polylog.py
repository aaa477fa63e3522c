"""Polylogarithms on the unit circle and the imaginary error function.

``Li_s(exp(i theta))`` is evaluated with the expansion about ``mu = 0``::

    Li_s(e^mu) = Gamma(1-s) (-mu)^(s-1) + sum_k zeta(s-k) mu^k / k!

(with the logarithmic form for positive integer ``s``), which converges for
``|mu| < 2 pi``.  The angle is first reduced to ``(-pi, pi]`` so that at most
``|mu| = pi`` is used and the terms shrink like ``2**-k``.  Non-positive
integer orders are rational functions of ``z`` and are evaluated directly.
"""

from __future__ import annotations

import math
from functools import lru_cache

import numpy as np
import scipy.special

_NTERMS = 64


def _wrap(theta) -> np.ndarray:
    """Reduce angles to ``(-pi, pi]``."""
    theta = np.asarray(theta, dtype=float)
    w = np.remainder(theta + math.pi, 2 * math.pi) - math.pi
    return np.where(w == -math.pi, math.pi, w)


@lru_cache(maxsize=64)
def _series_coefficients(s: float) -> tuple[np.ndarray, int]:
    """``zeta(s-k)/k!`` for ``k < _NTERMS``; the log term index (or -1)."""
    is_int = float(s).is_integer() and s >= 1
    skip = int(s) - 1 if is_int else -1
    coef = np.zeros(_NTERMS)
    for k in range(_NTERMS):
        if k == skip:
            continue
        m = s - k
        if m == 1.0:
            continue
        # zeta vanishes at the negative even integers
        if m < 0 and float(m).is_integer() and int(m) % 2 == 0:
            continue
        coef[k] = scipy.special.zeta(m) / math.factorial(k)
    return coef, skip


def polylog_unit_circle(s: float, theta) -> np.ndarray:
    """``Li_s(exp(i theta))`` for real order ``s`` and real ``theta``.

    Diverges at ``theta = 0 (mod 2 pi)`` for ``s <= 1``; that point returns
    ``nan`` (or the finite ``zeta(s)`` when ``s > 1``).
    """
    s = float(s)
    w = _wrap(theta)
    if s <= 0 and s.is_integer():
        return _polylog_rational(int(s), w)
    mu = 1j * w
    coef, skip = _series_coefficients(s)
    # Horner in mu
    acc = np.zeros_like(mu)
    for c in coef[::-1]:
        acc = acc * mu + c
    zero = w == 0.0
    with np.errstate(divide="ignore", invalid="ignore"):
        if skip >= 0:
            n = skip + 1
            harmonic = sum(1.0 / j for j in range(1, n))
            lead = mu**skip / math.factorial(skip) * (harmonic - np.log(-mu))
        else:
            lead = scipy.special.gamma(1.0 - s) * (-mu) ** (s - 1.0)
        out = acc + lead
    if np.any(zero):
        out = np.where(zero, scipy.special.zeta(s) if s > 1 else np.nan, out)
    return out


def _polylog_rational(n: int, w: np.ndarray) -> np.ndarray:
    z = np.exp(1j * w)
    # 1 - z without cancellation near w = 0
    one_minus = -2j * np.sin(0.5 * w) * np.exp(0.5j * w)
    with np.errstate(divide="ignore", invalid="ignore"):
        if n == 0:
            out = z / one_minus
        elif n == -1:
            out = z / one_minus**2
        elif n == -2:
            out = z * (1 + z) / one_minus**3
        elif n == -3:
            out = z * (1 + 4 * z + z * z) / one_minus**4
        else:
            raise ValueError(f"polylog order {n} not supported")
    return np.where(w == 0.0, np.nan, out)


def clausen2(theta) -> np.ndarray:
    """``Cl_2(theta) = sum sin(k theta)/k^2``."""
    return polylog_unit_circle(2, theta).imag


def clausen3(theta) -> np.ndarray:
    """``Cl_3(theta) = sum cos(k theta)/k^3``."""
    return polylog_unit_circle(3, theta).real


def erfi(z) -> np.ndarray:
    """Imaginary error function ``-i erf(i z)`` for complex ``z``.

    Uses the Faddeeva function: ``erfi(z) = -i (1 - exp(z^2) w(-z))``.
    """
    z = np.asarray(z, dtype=np.complex128)
    return -1j * (1.0 - np.exp(z * z) * scipy.special.wofz(-z))
