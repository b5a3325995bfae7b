"""Stieltjes transforms of the reference measures.

All functions accept Python scalars or numpy arrays and broadcast. Scalars in,
scalars out.
"""
from dataclasses import dataclass
from math import factorial

import numpy as np

from .exceptions import BranchError, PoleError

POLE_TOL = 1e-12


@dataclass(frozen=True)
class BernoulliMeasure:
    """``y * delta_1 + (1 - y) * delta_0``, the ESD of a rank ``y*N`` projection."""

    y: float

    def __post_init__(self):
        if not 0.0 <= self.y <= 1.0:
            raise ValueError(f"Bernoulli weight must lie in [0, 1], got {self.y}")


def _ratio(mu):
    return mu.y if isinstance(mu, BernoulliMeasure) else float(mu)


def _out(x, like):
    return x.item() if np.ndim(like) == 0 else x


def nevanlinna_sqrt(w):
    """Square root with ``Im sqrt(w) >= 0`` whenever ``Im w >= 0``.

    For ``Im w == 0`` and ``w < 0`` the root ``+i sqrt(|w|)`` is returned.
    """
    w = np.asarray(w, dtype=complex)
    r = np.sqrt(w)
    flip = (r.imag < 0) & (w.imag >= 0)
    r = np.where(flip, -r, r)
    return _out(r, w)


def bernoulli_stieltjes(mu, z):
    """``m(z) = y/(1 - z) - (1 - y)/z``."""
    y = _ratio(mu)
    z_arr = np.asarray(z, dtype=complex)
    if np.any(np.abs(z_arr) < POLE_TOL) and y < 1:
        raise PoleError("Stieltjes transform evaluated at the atom z=0")
    if np.any(np.abs(z_arr - 1) < POLE_TOL) and y > 0:
        raise PoleError("Stieltjes transform evaluated at the atom z=1")
    with np.errstate(divide="ignore", invalid="ignore"):
        m = np.where(y > 0, y / (1 - z_arr), 0) - np.where(y < 1, (1 - y) / z_arr, 0)
    return _out(m, z)


def bernoulli_stieltjes_derivative(mu, z):
    y = _ratio(mu)
    z_arr = np.asarray(z, dtype=complex)
    with np.errstate(divide="ignore", invalid="ignore"):
        d = y / (1 - z_arr) ** 2 + (1 - y) / z_arr**2
    return _out(d, z)


def f_recip(mu, w, order=0):
    """Derivatives of the negative reciprocal Stieltjes transform ``F = -1/m``.

    ``F(w) = w - y + y(1-y)/(1-y-w)``; order ``n >= 2`` gives
    ``y(1-y) n! / (1-y-w)^(n+1)``.
    """
    if order not in (0, 1, 2, 3):
        raise ValueError("order must be 0, 1, 2 or 3")
    y = _ratio(mu)
    w_arr = np.asarray(w, dtype=complex)
    gap = 1 - y - w_arr
    c = y * (1 - y)
    if c != 0 and np.any(np.abs(gap) < POLE_TOL):
        raise PoleError(f"F is singular at w = 1 - y = {1 - y}")
    with np.errstate(divide="ignore", invalid="ignore"):
        if order == 0:
            val = w_arr - y + (c / gap if c else 0)
        elif order == 1:
            val = 1 + (c / gap**2 if c else 0) + 0 * w_arr
        else:
            val = (c * factorial(order) / gap ** (order + 1) if c else 0) + 0 * w_arr
    return _out(np.asarray(val, dtype=complex), w)


def mp_stieltjes(y, z, order=0):
    """Stieltjes transform of the Marchenko-Pastur law with ratio ``y``.

    The measure includes the atom ``(1 - y)_+`` at zero, so ``m`` solves
    ``1 + (z - y + 1) m + z m^2 = 0``. ``order=1`` returns ``dm/dz``.
    """
    if order not in (0, 1):
        raise ValueError("order must be 0 or 1")
    if y < 0:
        raise ValueError("ratio must be nonnegative")
    z_arr = np.asarray(z, dtype=complex)
    if np.any(np.abs(z_arr) < POLE_TOL):
        raise PoleError("Marchenko-Pastur transform requested at z=0")
    lo, hi = (1 - np.sqrt(y)) ** 2, (1 + np.sqrt(y)) ** 2
    real = z_arr.imag == 0
    inside = real & (z_arr.real > lo) & (z_arr.real < hi)
    if np.any(inside):
        raise BranchError(
            "z lies on the real axis inside the Marchenko-Pastur support; "
            "offset it into the upper half plane"
        )
    # sqrt(z-lo)*sqrt(z-hi) with principal roots is the branch analytic off [lo, hi]
    # and ~ z at infinity, which gives Im m > 0 on C+.
    with np.errstate(divide="ignore", invalid="ignore"):
        root = np.sqrt(z_arr - lo) * np.sqrt(z_arr - hi)
        m = (-(z_arr - y + 1) + root) / (2 * z_arr)
    # y == 0 degenerates to delta_0
    if order == 0:
        return _out(m, z)
    dm = -(m + m**2) / (z_arr - y + 1 + 2 * z_arr * m)
    return _out(dm, z)


def semicircle_stieltjes(z):
    """``m_sc(z) = (-z + sqrt(z^2 - 4))/2`` on the Nevanlinna branch."""
    z_arr = np.asarray(z, dtype=complex)
    if np.any((z_arr.imag == 0) & (np.abs(z_arr.real) <= 2)):
        raise BranchError("z lies on the real axis inside [-2, 2]")
    m = (-z_arr + np.sqrt(z_arr - 2) * np.sqrt(z_arr + 2)) / 2
    return _out(m, z)


def mp_density(y, x):
    """Density of the absolutely continuous part of the Marchenko-Pastur law."""
    x = np.asarray(x, dtype=float)
    lo, hi = (1 - np.sqrt(y)) ** 2, (1 + np.sqrt(y)) ** 2
    with np.errstate(divide="ignore", invalid="ignore"):
        d = np.sqrt(np.clip((hi - x) * (x - lo), 0, None)) / (2 * np.pi * x)
    d = np.where((x > lo) & (x < hi), d, 0.0)
    return _out(d, x)


def mp_edges(y):
    return (1 - np.sqrt(y)) ** 2, (1 + np.sqrt(y)) ** 2
