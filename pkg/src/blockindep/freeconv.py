"""Free additive convolution of Bernoulli laws through subordination.

The solver works in the variable ``F = -1/m`` (the reciprocal Cauchy transform of
the convolution).  With ``L_t = sqrt((F - 1)^2 + 4 y_t F)`` the subordination
functions are ``omega_t = (1 + F + L_t)/2`` and the spectral parameter is the
explicit function

    z(F) = k/2 + (1 - k/2) F + sum_t L_t / 2,

so evaluating the transform at ``z`` is a scalar root find.  The sign of each
``L_t`` is fixed by continuation from ``Im z`` large, where ``L_t ~ F``.
"""
from dataclasses import dataclass, field
from functools import lru_cache

import numpy as np
from scipy.optimize import brentq

from .exceptions import (
    BranchError,
    ConvergenceError,
    EdgeProximityError,
    SingularJacobianError,
)

STEP_TOL = 1e-12
RESIDUAL_TOL = 1e-10
EPS = np.finfo(float).eps
MAX_ITER = 200
EDGE_TOL = 1e-6
BRANCH_TOL = 1e-8


@dataclass(frozen=True)
class YVector:
    """Block ratios ``y_t = p_t / N``."""

    y: tuple

    def __post_init__(self):
        vals = tuple(float(v) for v in np.atleast_1d(np.asarray(self.y, dtype=float)))
        if not vals:
            raise ValueError("need at least one block ratio")
        for v in vals:
            if not 0.0 <= v < 1.0:
                raise ValueError(f"block ratios must lie in [0, 1), got {v}")
        object.__setattr__(self, "y", vals)

    @property
    def k(self):
        return len(self.y)

    @property
    def y_total(self):
        return float(sum(self.y))

    @property
    def array(self):
        return np.array(self.y)


def as_yvector(y):
    return y if isinstance(y, YVector) else YVector(tuple(np.atleast_1d(y)))


@dataclass(frozen=True)
class SubordinationSolution:
    z: complex
    m: complex
    omega: np.ndarray = field(repr=False)
    residual: float

    @property
    def F(self):
        return -1.0 / self.m


# --- branch bookkeeping -------------------------------------------------------


def _quad(F, yv):
    F = F[:, None]
    return (F - 1) ** 2 + 4 * yv * F


def _pick(Q, ref):
    r = np.sqrt(Q)
    return np.where(np.abs(r - ref) <= np.abs(r + ref), r, -r)


def _z_of(F, L, k):
    return k / 2 + (1 - k / 2) * F + L.sum(axis=1) / 2


def _zF_of(F, L, yv, k):
    Lp = (F[:, None] - 1 + 2 * yv) / L
    return 1 - k / 2 + Lp.sum(axis=1) / 2, Lp


def _newton(F, L, z, yv, tol, maxit):
    """Vectorized Newton on ``z(F) = z``; returns (F, L, ok)."""
    k = yv.size
    F, L = F.copy(), L.copy()
    active = np.ones(F.shape, bool)
    ok = np.zeros(F.shape, bool)
    for _ in range(maxit):
        idx = np.flatnonzero(active)
        if idx.size == 0:
            break
        f, l = F[idx], L[idx]
        zf, Lp = _zF_of(f, l, yv, k)
        with np.errstate(divide="ignore", invalid="ignore"):
            zr = _z_of(f, l, k) - z[idx]
            dF = -zr / zf
        bad = ~np.isfinite(dF)
        cap = 0.5 * (1 + np.abs(f))
        big = np.abs(dF) > cap
        dF = np.where(big, dF * cap / np.where(big, np.abs(dF), 1), dF)
        dF[bad] = 0
        fn = f + dF
        ln = _pick(_quad(fn, yv), l + Lp * dF[:, None])
        F[idx], L[idx] = fn, ln
        # near a zero of m, F is huge and z(F) cancels to rounding level
        floor = np.abs(zr) <= 8 * EPS * (1 + np.abs(f) + np.abs(z[idx]))
        done = ((np.abs(dF) <= tol * (1 + np.abs(fn))) | floor) & ~bad
        ok[idx[done]] = True
        active[idx[done | bad]] = False
    return F, L, ok


def _continue(yv, z):
    """Solve for points with ``Im z >= 0`` by descending from large ``Im z``."""
    k, y = yv.size, yv.sum()
    n = z.size
    x, target = z.real, z.imag
    eta = np.maximum(10 * (1 + y), 2 * target)
    F = x + 1j * eta - y
    L = _pick(_quad(F, yv), F[:, None] + 2 * yv - 1)
    F, L, ok = _newton(F, L, x + 1j * eta, yv, 1e-13, 60)
    if not ok.all():
        raise ConvergenceError("continuation failed to start", best=F, residual=None)

    ratio = np.full(n, 0.3)
    failed = np.zeros(n, bool)
    while True:
        todo = np.flatnonzero((eta > target) & ~failed)
        if todo.size == 0:
            break
        e0, tg = eta[todo], target[todo]
        e1 = tg + (e0 - tg) * ratio[todo]
        e1 = np.where(e1 - tg < np.maximum(0.25 * tg, 1e-8), tg, e1)
        f0, l0 = F[todo], L[todo]
        zf, Lp = _zF_of(f0, l0, yv, k)
        dF = 1j * (e1 - e0) / zf
        fp = f0 + dF
        lp = _pick(_quad(fp, yv), l0 + Lp * dF[:, None])
        zt = x[todo] + 1j * e1
        f1, l1, conv = _newton(fp, lp, zt, yv, 1e-11, 30)
        om = (1 + f1[:, None] + l1) / 2
        slack = 1e-9 * (1 + np.abs(om))
        good = (
            conv
            & np.all(om.imag >= e1[:, None] - slack, axis=1)
            & (f1.imag >= e1 - 1e-9 * (1 + np.abs(f1)))
            & (np.abs(f1 - fp) <= 0.5 * np.abs(dF) + 1e-9 * (1 + np.abs(f1)))
        )
        acc, rej = todo[good], todo[~good]
        F[acc], L[acc], eta[acc] = f1[good], l1[good], e1[good]
        ratio[acc] = np.maximum(ratio[acc] ** 2, 0.3)
        ratio[rej] = np.sqrt(ratio[rej])
        failed[rej[ratio[rej] > 1 - 1e-7]] = True
    if failed.any():
        bad = np.flatnonzero(failed)
        raise ConvergenceError(
            f"continuation stalled for {bad.size} point(s), first at z={z[bad[0]]}",
            best=F[bad],
        )
    F, L, ok = _newton(F, L, z, yv, STEP_TOL, MAX_ITER)
    return F, L, ok


def _residual(F, L, z, yv):
    """Backward residual of the subordination system.

    Each ``omega_t`` is checked through ``m_t(omega_t) = m`` relative to
    ``1 + |m|`` and the sum rule ``sum omega_t - z = (k-1) F`` relative to
    ``1 + |F|``.  Both stay well conditioned at zeros of ``m`` (poles of ``F``),
    where the equivalent check on ``F_t(omega_t)`` loses all accuracy.
    """
    k = yv.size
    om = (1 + F[:, None] + L) / 2
    m = -1 / F
    with np.errstate(divide="ignore", invalid="ignore"):
        mt = yv / (1 - om) - (1 - yv) / om
        r_t = np.abs(mt - m[:, None]).max(axis=1) / (1 + np.abs(m))
        r_s = np.abs(om.sum(axis=1) - z - (k - 1) * F) / (1 + np.abs(F))
    return np.maximum(r_t, r_s), om


def _solve_arrays(y, z, check=True):
    """Return (F, L, omega, residual) for an array of spectral parameters."""
    yv = as_yvector(y)
    ya = yv.array
    z = np.atleast_1d(np.asarray(z, dtype=complex)).ravel()
    if not np.all(np.isfinite(z)):
        raise ValueError("spectral parameter must be finite")
    near = np.abs(z.imag) < EDGE_TOL
    if near.any() and yv.k > 1:
        a, b = support_interval(yv)
        hit = near & (z.real > a - EDGE_TOL) & (z.real < b + EDGE_TOL)
        if hit.any():
            raise EdgeProximityError(
                f"z={z[hit][0]} is within {EDGE_TOL} of the support [{a:.6g}, {b:.6g}]"
            )
    lower = z.imag < 0
    zu = np.where(lower, z.conj(), z)
    if yv.k == 1:
        # one block: omega = z and m is the Bernoulli transform; this also avoids the
        # branch point L = 0 that the F parametrization has in C+ when k = 1
        with np.errstate(divide="ignore", invalid="ignore"):
            m = ya[0] / (1 - zu) - (1 - ya[0]) / zu
        F = -1 / m
        L = (2 * zu - 1 - F)[:, None]
        ok = np.isfinite(F)
    else:
        F, L, ok = _continue(ya, zu)
    res, om = _residual(F, L, zu, ya)
    if check:
        if not ok.all() or np.any(res > RESIDUAL_TOL) or not np.all(np.isfinite(res)):
            i = int(np.argmax(np.where(np.isfinite(res), res, np.inf)))
            raise ConvergenceError(
                f"subordination residual {res[i]:.3g} at z={z[i]}", best=F[i], residual=res[i]
            )
        viol = om.imag < zu.imag[:, None] - 1e-12 * (1 + np.abs(om))
        if viol.any():
            raise BranchError("Im omega_t < Im z: continuation landed on a wrong branch")
    F = np.where(lower, F.conj(), F)
    L = np.where(lower[:, None], L.conj(), L)
    om = np.where(lower[:, None], om.conj(), om)
    return F, L, om, res


def solve_point(y, z):
    """Evaluate ``m`` and the subordination functions at a single ``z``."""
    zc = complex(z)
    F, _, om, res = _solve_arrays(y, [zc])
    return SubordinationSolution(z=zc, m=complex(-1 / F[0]), omega=om[0], residual=float(res[0]))


def solve_points(y, zs):
    """Vectorized ``solve_point``; returns a list of solutions."""
    zs = np.atleast_1d(np.asarray(zs, dtype=complex))
    F, _, om, res = _solve_arrays(y, zs)
    return [
        SubordinationSolution(z=complex(z), m=complex(-1 / f), omega=o, residual=float(r))
        for z, f, o, r in zip(zs, F, om, res)
    ]


# --- independent k-dimensional oracle ---------------------------------------------


def _kd_newton(ya, z, om, tol, maxit):
    k = ya.size
    c = ya * (1 - ya)

    def phi(w):
        Fm = w - ya + c / (1 - ya - w)
        return (k - 1) * Fm - w.sum() + z

    r = phi(om)
    for it in range(1, maxit + 1):
        q = c / (1 - ya - om) ** 2
        d = (k - 1) * (1 + q)
        if np.any(np.abs(d) < 1e-300):
            raise SingularJacobianError("diagonal part of the Jacobian vanished", best=om)
        dinv = 1 / d
        # 1 - sum 1/d written without cancelling the leading 1
        denom = (np.sum(q / (1 + q)) - 1) / (k - 1)
        if abs(denom) < 1e-14:
            raise SingularJacobianError(
                f"|1 - 1'D^-1 1| = {abs(denom):.2e} below tolerance", best=om
            )
        # (D - 11')^-1 = D^-1 + D^-1 11' D^-1 / (1 - 1'D^-1 1)
        step = -(dinv * r + dinv * (dinv @ r) / denom)
        lam, nr = 1.0, np.abs(r).max()
        while True:
            trial = om + lam * step
            rt = phi(trial)
            # damp only to keep omega in the half plane Im omega_t >= Im z; a residual
            # decrease test stalls where the components live on very different scales
            inside = np.all(trial.imag >= z.imag * (1 - 1e-12)) and np.all(np.isfinite(rt))
            if inside or np.abs(rt).max() <= nr or lam < 1e-4:
                break
            lam /= 2
        om, r = trial, rt
        if np.abs(lam * step).max() <= tol * (1 + np.abs(om).max()):
            return om, it
        # residual at rounding level: the step is then limited by conditioning
        scale = (k - 1) * np.abs(c / (1 - ya - om)).max() + k * np.abs(om).max() + abs(z)
        if np.abs(r).max() <= 64 * EPS * scale:
            return om, it
    raise ConvergenceError("k-dimensional Newton did not converge", best=om,
                           residual=float(np.abs(r).max()))


def solve_newton_kd(y, z, omega0=None, tol=STEP_TOL, maxit=MAX_ITER):
    """Newton on the full system ``(k-1) F_t(omega_t) - sum omega + z = 0``.

    With ``omega0`` the iteration starts there; otherwise it walks down from
    large ``Im z`` with its own ladder.  Kept as an oracle for ``solve_point``.
    """
    yv = as_yvector(y)
    ya, k = yv.array, yv.k
    z = complex(z)
    if k == 1:
        from .measures import bernoulli_stieltjes

        return SubordinationSolution(z=z, m=complex(bernoulli_stieltjes(ya[0], z)),
                                     omega=np.array([z]), residual=0.0)
    flip = z.imag < 0
    zu = z.conjugate() if flip else z
    if omega0 is not None:
        om = np.asarray(omega0, dtype=complex).copy()
        if om.shape != (k,):
            raise ValueError(f"omega0 needs {k} entries")
        if flip:
            om = om.conj()
        om, _ = _kd_newton(ya, zu, om, tol, maxit)
    else:
        eta = max(10 * (1 + yv.y_total), 2 * zu.imag)
        om, _ = _kd_newton(ya, zu.real + 1j * eta, np.full(k, zu.real + 1j * eta) + yv.y_total - ya,
                           1e-10, maxit)
        ratio = 0.5
        while eta > zu.imag:
            nxt = eta * ratio if eta * ratio > 1.25 * zu.imag else zu.imag
            try:
                om, _ = _kd_newton(ya, zu.real + 1j * nxt, om, 1e-10, maxit)
            except ConvergenceError:
                # shrink the step; near a zero of m, omega moves on the scale of Im z
                ratio = np.sqrt(ratio)
                if ratio > 1 - 1e-6:
                    raise
                continue
            eta, ratio = nxt, max(ratio**2, 0.5)
        om, _ = _kd_newton(ya, zu, om, tol, maxit)
    c = ya * (1 - ya)
    Fm = om - ya + c / (1 - ya - om)
    res = float(np.abs((k - 1) * Fm - om.sum() + zu).max())
    m = -(k - 1) / (om.sum() - zu)
    if flip:
        om, m = om.conj(), m.conjugate()
    return SubordinationSolution(z=z, m=complex(m), omega=om, residual=res)


# --- derivatives --------------------------------------------------------------------


def _derivs(F, L, ya, order=2):
    k = ya.size
    if np.any(np.abs(L) < BRANCH_TOL):
        raise EdgeProximityError("evaluation point is at a branch point of the square root")
    Lp = (F[:, None] - 1 + 2 * ya) / L
    Lpp = 4 * ya * (1 - ya) / L**3
    zF = 1 - k / 2 + Lp.sum(axis=1) / 2
    if np.any(np.abs(zF) < 1e-14):
        raise EdgeProximityError("dz/dF vanishes: point sits on a spectral edge")
    dF = 1 / zF
    dm = dF / F**2
    dom = dF[:, None] * (1 + Lp) / 2
    if order == 1:
        return dm, dom, None, None
    d2F = -(Lpp.sum(axis=1) / 2) / zF**3
    d2m = d2F / F**2 - 2 * dF**2 / F**3
    d2om = (d2F[:, None] * (1 + Lp) + dF[:, None] ** 2 * Lpp) / 2
    return dm, dom, d2m, d2om


def derivatives(sol, y, order=1):
    """z-derivatives at a converged solution.

    Returns ``(m_derivs, omega_derivs)``: a list ``[m', m'']`` truncated to
    ``order`` and an ``(order, k)`` array of omega derivatives.
    """
    if order not in (1, 2):
        raise ValueError("order must be 1 or 2")
    ya = as_yvector(y).array
    F = np.array([-1 / sol.m])
    L = 2 * np.asarray(sol.omega)[None, :] - 1 - F[:, None]
    dm, dom, d2m, d2om = _derivs(F, L, ya, order)
    if order == 1:
        return [complex(dm[0])], dom
    return [complex(dm[0]), complex(d2m[0])], np.vstack([dom, d2om])


@dataclass(frozen=True)
class SubordinationGrid:
    """Solutions and derivatives at many points, as arrays."""

    z: np.ndarray
    m: np.ndarray
    omega: np.ndarray
    dm: np.ndarray
    d2m: np.ndarray
    domega: np.ndarray
    d2omega: np.ndarray
    residual: np.ndarray


def evaluate(y, zs):
    yv = as_yvector(y)
    zs = np.atleast_1d(np.asarray(zs, dtype=complex)).ravel()
    F, L, om, res = _solve_arrays(yv, zs)
    dm, dom, d2m, d2om = _derivs(F, L, yv.array, 2)
    return SubordinationGrid(zs, -1 / F, om, dm, d2m, dom, d2om, res)


# --- measure-level quantities ------------------------------------------------------


def atoms(y, tol=1e-12):
    """Atoms of the convolution as ``{location: mass}``.

    Uses the two-measure rule: ``mu + nu`` has an atom at ``a + b`` of mass
    ``mu({a}) + nu({b}) - 1`` whenever that is positive.
    """
    ys = as_yvector(y).y
    cur = {0.0: 1 - ys[0], 1.0: ys[0]}
    for yt in ys[1:]:
        nxt = {}
        for loc, w in cur.items():
            for b, v in ((0.0, 1 - yt), (1.0, yt)):
                if w + v - 1 > tol:
                    nxt[loc + b] = w + v - 1
        cur = nxt
    cur = {loc: w for loc, w in cur.items() if w > tol}
    return dict(sorted(cur.items()))


def density_grid(y, xs, eps, all_atoms=False):
    """Stieltjes inversion ``Im m(x + i eps)/pi`` on a grid.

    The atom at 0 is removed (its Poisson kernel is subtracted); with
    ``all_atoms`` every atom is removed.  Use ``atoms`` for their masses.
    """
    if eps <= 0:
        raise ValueError("eps must be positive")
    xs = np.asarray(xs, dtype=float)
    F, _, _, _ = _solve_arrays(y, xs + 1j * eps)
    dens = (-1 / F).imag / np.pi
    for loc, w in atoms(y).items():
        if loc == 0.0 or all_atoms:
            dens = dens - w * eps / (np.pi * ((xs - loc) ** 2 + eps**2))
    return np.clip(dens, 0.0, None)


def moments(y, orders=(1, 2), n=512):
    """Moments of the convolution from a trapezoid rule on a circle around the support."""
    yv = as_yvector(y)
    R = yv.k + 1.0
    theta = (np.arange(n) + 0.5) * np.pi / n  # upper half; the rest by symmetry
    z = R * np.exp(1j * theta)
    F, _, _, _ = _solve_arrays(yv, z)
    m = -1 / F
    dz = 1j * z * (np.pi / n)
    out = []
    for j in orders:
        # int x^j dmu = -(1/2 pi i) closed integral of z^j m(z) dz
        upper = np.sum(z**j * m * dz)
        total = upper - np.conj(upper)
        out.append(float((-total / (2j * np.pi)).real))
    return out


@lru_cache(maxsize=256)
def _support(y):
    ya = np.array(y)
    k = ya.size
    if k == 1:
        return 1.0, 1.0

    def branch(F, sign):
        F = np.atleast_1d(np.asarray(F, dtype=float))
        L = sign * np.sqrt((F[:, None] - 1) ** 2 + 4 * ya * F[:, None])
        z = k / 2 + (1 - k / 2) * F + L.sum(axis=1) / 2
        zF = 1 - k / 2 + ((F[:, None] - 1 + 2 * ya) / L).sum(axis=1) / 2
        return z, zF

    def edge(grid, sign):
        _, zF = branch(grid, sign)
        hit = np.flatnonzero(zF <= 0)
        if hit.size == 0:
            return None
        i = hit[0]
        if i == 0:
            return float(branch(grid[0], sign)[0][0])
        root = brentq(lambda f: branch(f, sign)[1][0], grid[i - 1], grid[i], xtol=1e-15)
        return float(branch(root, sign)[0][0])

    pos = np.logspace(-10, 6, 8001)
    # right edge: F decreases from +inf on the branch L ~ +F
    b = edge(pos[::-1], 1.0)
    if b is None:
        b = float(k)
    # left edge: F increases from -inf on the branch L ~ F (negative there)
    left = np.concatenate([-pos[::-1], [0.0], pos])
    a = edge(left, -1.0)
    if a is None:
        a = 0.0
    return max(a, 0.0), b


def support_interval(y):
    """Numerically detected edges ``(a, b)`` of the continuous part of the support."""
    return _support(as_yvector(y).y)
