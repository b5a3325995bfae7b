"""Sample block correlation matrices and their linear spectral statistics."""
from dataclasses import dataclass

import numpy as np

from .exceptions import DimensionError, SingularBlockError
from .freeconv import YVector

SINGULAR_RTOL = 1e-12
ZERO_CLAMP = 1e-10


@dataclass(frozen=True)
class BlockLayout:
    """Block sizes ``p`` and sample count ``N``.

    With an unknown mean the ratios use ``N_eff = N - 1``.
    """

    p: tuple
    N: int
    mean_known: bool = True

    def __post_init__(self):
        p = tuple(int(v) for v in np.atleast_1d(self.p))
        if not p or min(p) < 1:
            raise DimensionError(f"block sizes must be positive integers, got {self.p}")
        if int(self.N) < 2:
            raise DimensionError("need at least two observations")
        object.__setattr__(self, "p", p)
        object.__setattr__(self, "N", int(self.N))

    @property
    def k(self):
        return len(self.p)

    @property
    def p_total(self):
        return sum(self.p)

    @property
    def N_eff(self):
        return self.N if self.mean_known else self.N - 1

    @property
    def y(self):
        return np.array(self.p, dtype=float) / self.N_eff

    @property
    def y_total(self):
        return self.p_total / self.N_eff

    @property
    def yvector(self):
        return YVector(tuple(self.y))

    def with_mean(self, mean_known):
        return BlockLayout(self.p, self.N, mean_known)

    def slices(self):
        edges = np.concatenate([[0], np.cumsum(self.p)])
        return [slice(int(a), int(b)) for a, b in zip(edges[:-1], edges[1:])]


@dataclass(frozen=True)
class DataMatrix:
    """``p_total x N`` observations, variables in rows."""

    values: np.ndarray
    layout: BlockLayout

    def __post_init__(self):
        v = np.asarray(self.values, dtype=float)
        if v.ndim != 2:
            raise DimensionError("data must be a 2-d array")
        if v.shape[0] != self.layout.p_total:
            raise DimensionError(
                f"block sizes sum to {self.layout.p_total} but data has {v.shape[0]} variables"
            )
        if v.shape[1] != self.layout.N:
            raise DimensionError(f"layout expects N={self.layout.N}, data has {v.shape[1]} columns")
        if not np.all(np.isfinite(v)):
            raise DimensionError("data contains non-finite values")
        object.__setattr__(self, "values", v)

    @classmethod
    def from_observations(cls, X, p, mean_known=False):
        """Build from an ``N x p_total`` table (observations as rows)."""
        X = np.asarray(X, dtype=float)
        if X.ndim != 2:
            raise DimensionError("data must be a 2-d array")
        return cls(X.T, BlockLayout(tuple(p), X.shape[0], mean_known))

    def blocks(self):
        return [self.values[s] for s in self.layout.slices()]


def center(data):
    """Subtract each row's sample mean."""
    if data.layout.N < 2:
        raise DimensionError("centering needs N >= 2")
    v = data.values - data.values.mean(axis=1, keepdims=True)
    return DataMatrix(v, data.layout)


def _whitened_blocks(data, mean_known):
    if not mean_known:
        data = center(data)
    out = []
    for t, Y in enumerate(data.blocks()):
        gram = Y @ Y.T
        w, V = np.linalg.eigh(gram)
        if w.max() <= 0 or w.min() < SINGULAR_RTOL * w.max():
            raise SingularBlockError(
                f"block {t} has a singular Gram matrix (p_t={Y.shape[0]}, "
                f"smallest/largest eigenvalue {w.min() / max(w.max(), 1e-300):.2e})",
                block=t,
            )
        out.append((V / np.sqrt(w)) @ V.T @ Y)
    return out


def block_correlation(data, mean_known=None):
    """``diag(G_t^{-1/2}) Y Y' diag(G_t^{-1/2})`` with ``G_t = Y_t Y_t'``."""
    if mean_known is None:
        mean_known = data.layout.mean_known
    W = np.vstack(_whitened_blocks(data, mean_known))
    B = W @ W.T
    return (B + B.T) / 2


def build_projection_sum(data, mean_known=None):
    """``H = sum_t Y_t' G_t^{-1} Y_t``, an ``N x N`` sum of rank-``p_t`` projections."""
    if mean_known is None:
        mean_known = data.layout.mean_known
    W = np.vstack(_whitened_blocks(data, mean_known))
    H = W.T @ W
    return (H + H.T) / 2


@dataclass(frozen=True)
class SpectrumResult:
    eigenvalues: np.ndarray
    layout: BlockLayout = None
    mean_known: bool = True

    @property
    def nonzero(self):
        return self.eigenvalues[self.eigenvalues > 0]


def _clamp(ev):
    ev = np.sort(np.asarray(ev, dtype=float))
    ev[np.abs(ev) < ZERO_CLAMP] = 0.0
    return ev


def spectrum(B, layout=None, mean_known=True):
    """Sorted eigenvalues of a symmetric matrix, small ones clamped to 0."""
    B = np.asarray(B, dtype=float)
    if B.ndim != 2 or B.shape[0] != B.shape[1]:
        raise DimensionError("spectrum needs a square matrix")
    if not np.allclose(B, B.T, atol=1e-10):
        raise ValueError("matrix is not symmetric")
    try:
        ev = np.linalg.eigvalsh(B)
    except np.linalg.LinAlgError as exc:
        raise RuntimeError(f"eigensolver failed: {exc}") from exc
    return SpectrumResult(_clamp(ev), layout, mean_known)


def data_spectrum(data, mean_known=None):
    """Eigenvalues of the block correlation matrix of ``data``.

    Uses the ``p x p`` matrix when ``p_total <= N_eff``, otherwise the
    ``N x N`` projection sum padded with zeros.
    """
    if mean_known is None:
        mean_known = data.layout.mean_known
    lay = data.layout.with_mean(mean_known)
    W = np.vstack(_whitened_blocks(data, mean_known))
    p, N = W.shape
    if lay.p_total <= lay.N_eff:
        ev = np.linalg.eigvalsh(W @ W.T)
    else:
        evH = np.sort(np.linalg.eigvalsh(W.T @ W))[::-1][: min(p, N)]
        ev = np.concatenate([evH, np.zeros(p - evH.size)])
    return SpectrumResult(_clamp(ev), lay, mean_known)


def _poly(coefs):
    c = np.asarray(coefs, dtype=float)
    return lambda x: np.polynomial.polynomial.polyval(x, c)


def lss(spec, f):
    """Linear spectral statistic.

    ``f`` is ``"square"`` (Schott, ``sum lambda^2``), ``"log"`` (Wilks,
    ``sum log lambda``), a sequence of polynomial coefficients ``c0, c1, ...``
    or a vectorized callable.  For the last two the value is ``Tr f(H)`` over the
    ``N`` eigenvalues of the projection sum, i.e. the block correlation spectrum
    plus ``(N - p) f(0)``; this is the quantity the asymptotic centering targets.
    """
    ev = np.asarray(spec.eigenvalues, dtype=float)
    if isinstance(f, str):
        if f == "square":
            return float(np.sum(ev**2))
        if f == "log":
            bad = np.flatnonzero(ev <= 1e-12)
            if bad.size:
                raise ValueError(
                    f"log of nonpositive eigenvalue at index {bad[0]} (value {ev[bad[0]]:.3e}); "
                    "the log statistic needs p_total < N_eff"
                )
            return float(np.sum(np.log(ev)))
        raise ValueError(f"unknown test function {f!r}")
    fun = f if callable(f) else _poly(f)
    total = float(np.sum(fun(ev)))
    if spec.layout is not None:
        total += (spec.layout.N - spec.layout.p_total) * float(fun(np.zeros(1))[0])
    return total
