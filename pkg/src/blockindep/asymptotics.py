"""Asymptotic null mean and variance of linear spectral statistics.

Three routes: closed forms for the Schott (``sum lambda^2``) and Wilks
(``sum log lambda``) statistics, contour integration of the general CLT over
the subordination functions, and the Marchenko-Pastur approximation for small
blocks.  Statistics are standardized by the square root of the variance.
"""
import math
import warnings
from dataclasses import dataclass, field, replace

import numpy as np
from scipy.stats import norm

from . import freeconv
from .blockstat import BlockLayout
from .exceptions import ContourError, DegenerateVarianceError, QuadratureError, RegimeError
from .measures import mp_edges, mp_stieltjes

DEGENERATE_VARIANCE = 1e-3
QUAD_RTOL = 1e-8
SEPARATION_TOL = 1e-4
CONVENTION = "z = (S - mean) / sqrt(variance)"


@dataclass(frozen=True)
class LssParams:
    mean: float
    variance: float
    method: str
    mean_known: bool
    warnings: tuple = ()
    centering: float = None
    bias: float = None
    quad_error: float = None
    convention: str = CONVENTION

    @property
    def degenerate(self):
        return self.variance < DEGENERATE_VARIANCE


def _finish(mean, variance, method, mean_known, notes=(), **extra):
    notes = list(notes)
    if variance < DEGENERATE_VARIANCE:
        notes.append(
            f"degenerate variance {variance:.3g} < {DEGENERATE_VARIANCE}: normal approximation unreliable"
        )
    return LssParams(float(mean), float(variance), method, bool(mean_known), tuple(notes), **extra)


def _layout(layout, mean_known):
    if not isinstance(layout, BlockLayout):
        raise TypeError("expected a BlockLayout")
    return layout.with_mean(mean_known)


# --- closed forms ----------------------------------------------------------------


def schott_params(layout, mean_known=True):
    """Mean ``N(sum_{r!=s} y_r y_s + y)`` and variance ``4 sum_{r!=s} y_r y_s (1-y_r)(1-y_s)``."""
    lay = _layout(layout, mean_known)
    y = lay.y
    cross = y.sum() ** 2 - np.sum(y**2)
    q = y * (1 - y)
    a1 = lay.N_eff * (cross + y.sum())
    b1 = 4 * (q.sum() ** 2 - np.sum(q**2))
    notes = []
    if np.any(y >= 1):
        notes.append("some block has p_t >= N_eff; block correlation undefined")
    return _finish(a1, b1, "schott-closed", mean_known, notes)


def wilks_params(layout, mean_known=True):
    """Closed-form mean and variance of ``log det B``; needs ``p_total < N_eff``."""
    lay = _layout(layout, mean_known)
    y, yt = lay.y, lay.y_total
    if yt >= 1:
        raise RegimeError(
            f"log statistic needs p_total < N_eff (y = {yt:.4g} >= 1); "
            "the log determinant of the block correlation matrix is -inf"
        )
    N = lay.N_eff
    a2 = np.sum((N - np.array(lay.p) - 0.5) * np.log1p(-y)) - (N - lay.p_total - 0.5) * math.log1p(-yt)
    b2 = -2 * math.log1p(-yt) + 2 * np.sum(np.log1p(-y))
    return _finish(a2, b2, "wilks-closed", mean_known)


# --- contours ----------------------------------------------------------------------


@dataclass(frozen=True)
class ContourSpec:
    """Closed contour, counterclockwise, symmetric about the real axis.

    ``gamma0`` is the keyhole: rectangle ``[-M1, M1] x [-M2, M2]`` with the
    disc ``|z| <= eps1`` and the strip ``|Im z| < sqrt(eps1^2 - eps2^2)`` on the
    negative axis cut out.  ``gamma`` is the plain rectangle and encloses 0.
    """

    kind: str
    eps1: float
    eps2: float
    M1: float
    M2: float
    nodes: int = 16

    def __post_init__(self):
        if self.kind not in ("gamma0", "gamma"):
            raise ValueError("kind must be 'gamma0' or 'gamma'")
        if not (self.eps1 > self.eps2 > 0 and self.M2 > self.M1 > 0):
            raise ContourError("need eps1 > eps2 > 0 and M2 > M1 > 0")
        if self.kind == "gamma0" and self.eps1 >= self.M1:
            raise ContourError("arc radius must be smaller than M1")

    @property
    def height(self):
        return math.sqrt(self.eps1**2 - self.eps2**2)

    def segments(self):
        """Upper-half pieces as ('line', a, b) or ('arc', r, theta_from, theta_to)."""
        M1, M2 = self.M1, self.M2
        if self.kind == "gamma":
            h = self.height
            return [
                ("line", complex(M1, 0), complex(M1, h)),
                ("line", complex(M1, h), complex(M1, M2)),
                ("line", complex(M1, M2), complex(-M1, M2)),
                ("line", complex(-M1, M2), complex(-M1, h)),
                ("line", complex(-M1, h), complex(-M1, 0)),
            ]
        h = self.height
        segs = [
            ("line", complex(M1, 0), complex(M1, M2)),
            ("line", complex(M1, M2), complex(-M1, M2)),
            ("line", complex(-M1, M2), complex(-M1, h)),
        ]
        # strip above the negative axis, graded towards the arc
        xs = [-M1]
        x = -self.eps2
        marks = []
        while x > -M1:
            marks.append(x)
            x *= 2
        xs += sorted(marks)
        for a, b in zip(xs[:-1], xs[1:]):
            segs.append(("line", complex(a, h), complex(b, h)))
        theta0 = math.atan2(h, -self.eps2)
        segs.append(("arc", self.eps1, theta0, 0.0))
        return segs

    def quadrature(self, n=None):
        """Nodes and ``dz`` weights for the full closed contour."""
        n = n or self.nodes
        t, w = np.polynomial.legendre.leggauss(n)
        zs, ws = [], []
        for seg in self.segments():
            if seg[0] == "line":
                _, a, b = seg
                zs.append(a + (b - a) * (t + 1) / 2)
                ws.append((b - a) / 2 * w)
            else:
                _, r, th0, th1 = seg
                th = th0 + (th1 - th0) * (t + 1) / 2
                z = r * np.exp(1j * th)
                zs.append(z)
                ws.append(1j * z * (th1 - th0) / 2 * w)
        z, wt = np.concatenate(zs), np.concatenate(ws)
        # lower half: mirror image traversed in the opposite direction
        return np.concatenate([z, z.conj()]), np.concatenate([wt, -wt.conj()])

    def scaled(self, factor):
        """Larger contour enclosing this one: M scaled up, eps scaled down."""
        return replace(self, eps1=self.eps1 / factor, eps2=self.eps2 / factor,
                       M1=self.M1 * factor, M2=self.M2 * factor)


def _hull(a, b, extra=()):
    pts = [a, b] + [x for x in extra if x > 0]
    return min(pts), max(pts)


def _contour_pair(a, b, kind, y_total):
    if kind == "gamma0":
        if y_total >= 1:
            raise ContourError(
                "origin-avoiding contour needs y < 1: with p_total >= N_eff the spectrum reaches 0 "
                "and the log statistic is undefined"
            )
        if a <= 0:
            raise ContourError("support touches the origin; cannot place the small arc")
    eps1 = a / 3 if a > 0 else 0.1
    g1 = ContourSpec(kind, eps1, eps1 / 2, b + 1, b + 2)
    return g1, g1.scaled(1.5)


def _kind_for(f_kind):
    return "gamma0" if f_kind == "log" else "gamma"


def build_contours(layout, f_kind="square", mean_known=True):
    """Two nested contours around the support of the limiting spectral law."""
    lay = _layout(layout, mean_known)
    yv = lay.yvector
    a, b = freeconv.support_interval(yv)
    a, b = _hull(a, b, freeconv.atoms(yv).keys())
    if yv.k == 1:
        a, b = 1.0, 1.0
    return _contour_pair(a, b, _kind_for(f_kind), lay.y_total)


# --- test functions ------------------------------------------------------------------


def _test_function(f):
    """Return (callable on complex arrays, kind tag)."""
    if isinstance(f, str):
        table = {
            "square": lambda z: z**2,
            "log": np.log,
            "identity": lambda z: z + 0 * z,
            "x": lambda z: z + 0 * z,
        }
        if f not in table:
            raise ValueError(f"unknown test function {f!r}")
        return table[f], ("log" if f == "log" else f)
    if callable(f):
        return f, "callable"
    c = np.asarray(f, dtype=float)
    return (lambda z: np.polynomial.polynomial.polyval(z, c)), "poly"


# --- contour engine -------------------------------------------------------------------


@dataclass
class _NodeData:
    z: np.ndarray
    w: np.ndarray
    fz: np.ndarray
    m: np.ndarray
    dm: np.ndarray
    d2m: np.ndarray
    omega: np.ndarray = None
    domega: np.ndarray = None
    d2omega: np.ndarray = None


def _free_nodes(yv, contour, n, fun):
    z, w = contour.quadrature(n)
    half = z.size // 2
    g = freeconv.evaluate(yv, z[:half])
    conj = lambda a: np.concatenate([a, a.conj()])
    return _NodeData(
        z, w, fun(z), conj(g.m), conj(g.dm), conj(g.d2m),
        conj(g.omega), conj(g.domega), conj(g.d2omega),
    )


def _mp_nodes(y, contour, n, fun):
    z, w = contour.quadrature(n)
    m = mp_stieltjes(y, z)
    dm = mp_stieltjes(y, z, order=1)
    d2m = -(2 * dm + 4 * m * dm + 2 * z * dm**2) / (z - y + 1 + 2 * z * m)
    return _NodeData(z, w, fun(z), m, dm, d2m)


def _check_sep(n1, n2, notes):
    sep = np.abs(n1.m[:, None] - n2.m[None, :]).min()
    if sep < 1e-10:
        raise ContourError(f"contours intersect: min |m(z1) - m(z2)| = {sep:.2e}")
    if sep < SEPARATION_TOL:
        # nested keyhole strips run close together when the support starts near 0;
        # the kernel is analytic on the diagonal so this only costs a few digits
        notes.append(f"contour images only {sep:.1e} apart (< {SEPARATION_TOL})")


def _free_terms(k, n1, n2, N_eff, correction):
    bracket = (n1.d2omega / n1.domega).sum(axis=1) + (k - 1) * (2 * n1.dm / n1.m - n1.d2m / n1.dm)
    bias = -np.sum(n1.fz * bracket * n1.w) / (4j * np.pi)
    if correction:
        # mean removal: +f(0) when the contour encloses 0, nothing otherwise
        bias += np.sum(n1.fz / n1.z * n1.w) / (2j * np.pi)
    centering = -N_eff * np.sum(n1.fz * n1.m * n1.w) / (2j * np.pi)
    dz = n1.z[:, None] - n2.z[None, :]
    K = -1 / dz**2 - (k - 1) * np.outer(n1.dm, n2.dm) / (n1.m[:, None] - n2.m[None, :]) ** 2
    for t in range(k):
        dw = n1.omega[:, t][:, None] - n2.omega[:, t][None, :]
        K += np.outer(n1.domega[:, t], n2.domega[:, t]) / dw**2
    var = -(n1.fz * n1.w) @ K @ (n2.fz * n2.w) / (2 * np.pi**2)
    return centering, bias, var


def _mp_terms(lay, y, n1, n2, correction):
    N_eff = lay.N_eff
    yt = lay.y
    s = np.sum(N_eff * yt**2 / (1 - yt))
    m, dm = n1.m, n1.dm
    bracket = -s * m * dm / (1 + m) ** 3 + y * (dm**2 - m**2 * dm) / (m * (1 + m) ** 3)
    # counterclockwise orientation: the overall sign is opposite to the printed formula
    bias = -np.sum(n1.fz * bracket * n1.w) / (2j * np.pi)
    if correction:
        bias += np.sum(n1.fz / n1.z * n1.w) / (2j * np.pi)
    centering = -N_eff * np.sum(n1.fz * m * n1.w) / (2j * np.pi)
    dz = n1.z[:, None] - n2.z[None, :]
    K = (
        np.outer(n1.dm, n2.dm) / (n1.m[:, None] - n2.m[None, :]) ** 2
        - 1 / dz**2
        - y * np.outer(n1.dm / (1 + n1.m) ** 2, n2.dm / (1 + n2.m) ** 2)
    )
    var = -(n1.fz * n1.w) @ K @ (n2.fz * n2.w) / (2 * np.pi**2)
    return centering, bias, var


def _integrate(evaluate_pair, scale, n0=16, n_max=512):
    n = n0
    prev = None
    while n <= n_max:
        centering, bias, var = evaluate_pair(n)
        cur = np.array([centering, bias, var])
        if prev is not None:
            change = np.abs(cur - prev)
            ref = np.maximum(np.abs(cur), scale)
            if np.all(change <= QUAD_RTOL * ref):
                imag = np.abs(cur.imag)
                if np.any(imag > 1e-8 * np.maximum(np.abs(cur), 1.0)):
                    raise QuadratureError(f"imaginary parts {imag} do not vanish")
                return cur.real, float(np.max(change / ref))
        prev = cur
        n *= 2
    raise QuadratureError(f"contour quadrature did not stabilise by {n_max} nodes per segment")


def contour_lss_params(layout, f="square", mean_known=True, contours=None):
    """Mean ``N_eff int f dmu + a_f`` and variance ``sigma_f^2`` by contour quadrature."""
    lay = _layout(layout, mean_known)
    fun, f_kind = _test_function(f)
    yv = lay.yvector
    if contours is None:
        contours = build_contours(lay, f_kind, mean_known)
    g1, g2 = contours
    k = yv.k

    notes = []

    def pair(n):
        n1 = _free_nodes(yv, g1, n, fun)
        n2 = _free_nodes(yv, g2, n, fun)
        if n == 16:
            _check_sep(n1, n2, notes)
        return _free_terms(k, n1, n2, lay.N_eff, not mean_known)

    (centering, bias, var), err = _integrate(pair, scale=1.0)
    return _finish(centering + bias, var, "contour-free", mean_known, notes,
                   centering=float(centering), bias=float(bias), quad_error=err)


def mp_lss_params(layout, f="square", mean_known=True, contours=None):
    """CLT parameters with the Marchenko-Pastur law in place of the free convolution."""
    lay = _layout(layout, mean_known)
    fun, f_kind = _test_function(f)
    y = lay.y_total
    notes = []
    if max(lay.p) ** 2 > lay.N_eff:
        notes.append(f"p_max^2 = {max(lay.p) ** 2} exceeds N_eff = {lay.N_eff}: MP approximation is rough")
    if contours is None:
        a, b = mp_edges(y)
        contours = _contour_pair(a, b, _kind_for(f_kind), y)
    g1, g2 = contours

    def pair(n):
        n1 = _mp_nodes(y, g1, n, fun)
        n2 = _mp_nodes(y, g2, n, fun)
        if n == 16:
            _check_sep(n1, n2, notes)
        return _mp_terms(lay, y, n1, n2, not mean_known)

    (centering, bias, var), err = _integrate(pair, scale=1.0)
    return _finish(centering + bias, var, "contour-mp", mean_known, notes,
                   centering=float(centering), bias=float(bias), quad_error=err)


# --- reporting ------------------------------------------------------------------------


@dataclass(frozen=True)
class TestReport:
    statistic: float
    mean: float
    variance: float
    z_score: float
    p_value: float
    method: str
    warnings: tuple = field(default_factory=tuple)
    convention: str = CONVENTION

    __test__ = False  # not a pytest class


def run_test(statistic, params):
    """Standardize and attach a two-sided normal p-value.

    With a degenerate variance the z-score is still reported but the p-value
    is NaN and the warning travels with the report.
    """
    if not params.variance > 0:
        raise DegenerateVarianceError(f"variance {params.variance} is not positive")
    z = (statistic - params.mean) / math.sqrt(params.variance)
    p = float("nan") if params.degenerate else float(2 * norm.sf(abs(z)))
    return TestReport(float(statistic), params.mean, params.variance, float(z), p,
                      params.method, params.warnings)


def lss_params(layout, statistic="schott", mean_known=True, method="closed"):
    """Dispatch on statistic name (schott, wilks, or a test function) and method."""
    f = {"schott": "square", "wilks": "log"}.get(statistic, statistic) if isinstance(statistic, str) else statistic
    if method == "closed":
        if f == "square":
            return schott_params(layout, mean_known)
        if f == "log":
            return wilks_params(layout, mean_known)
        raise ValueError("closed forms exist only for the schott and wilks statistics")
    if f == "log" and _layout(layout, mean_known).y_total >= 1:
        raise RegimeError("log statistic needs p_total < N_eff")
    if method == "contour":
        return contour_lss_params(layout, f, mean_known)
    if method == "mp":
        return mp_lss_params(layout, f, mean_known)
    raise ValueError(f"unknown method {method!r}")


def warn_if_degenerate(params):
    for w in params.warnings:
        warnings.warn(w, RuntimeWarning, stacklevel=2)
