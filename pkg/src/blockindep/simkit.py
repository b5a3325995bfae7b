"""Monte Carlo harness for size and power of the block independence tests."""
import os
from concurrent.futures import ThreadPoolExecutor
from dataclasses import asdict, dataclass, field, fields

import numpy as np
from scipy import stats

from .asymptotics import lss_params
from .blockstat import BlockLayout, DataMatrix, data_spectrum, lss
from .exceptions import ConfigError, SingularBlockError

THREADS_ENV = "BLOCKINDEP_THREADS"

CHOICES = {
    "dist": ("D1", "D2", "D3"),
    "cov": ("M1", "M2", "M3"),
    "regime": ("G1", "G2", "G3"),
    "alt": ("H0", "H1", "H2", "H3"),
    "statistic": ("schott", "wilks"),
    "method": ("closed", "contour", "mp"),
}
SCENARIOS = ("S1", "S2", "S3")


@dataclass(frozen=True)
class SimConfig:
    """One simulation design.

    ``blocks`` is a scenario tag (S1: four equal blocks, S2: blocks of size 2,
    S3: sizes 2, 2, p/2-2, p/2-2) or an explicit list of block sizes.  ``p`` is
    the total dimension used by the scenario tags; ``N`` overrides ``regime``.
    """

    dist: str = "D1"
    cov: str = "M1"
    regime: str = "G1"
    blocks: object = "S1"
    p: int = 32
    N: int = None
    alt: str = "H0"
    rho: float = 0.0
    reps: int = 1000
    seed: int = 0
    statistic: str = "schott"
    method: str = "closed"
    alpha: float = 0.05

    def __post_init__(self):
        for name, allowed in CHOICES.items():
            if getattr(self, name) not in allowed:
                raise ConfigError(
                    f"{name}: {getattr(self, name)!r} is not one of {', '.join(allowed)}", field=name
                )
        if isinstance(self.blocks, str):
            if self.blocks not in SCENARIOS:
                raise ConfigError(f"blocks: {self.blocks!r} is not one of S1, S2, S3 or a list", "blocks")
        else:
            try:
                sizes = tuple(int(b) for b in self.blocks)
            except (TypeError, ValueError):
                raise ConfigError("blocks: expected a scenario tag or a list of integers", "blocks")
            if not sizes or min(sizes) < 1:
                raise ConfigError("blocks: sizes must be positive", "blocks")
            object.__setattr__(self, "blocks", sizes)
        if int(self.reps) < 1:
            raise ConfigError("reps: must be at least 1", "reps")
        if not float(self.rho) >= 0:
            raise ConfigError("rho: must be nonnegative", "rho")
        if not 0 < float(self.alpha) < 1:
            raise ConfigError("alpha: must lie in (0, 1)", "alpha")
        if not 0 <= int(self.seed) < 2**64:
            raise ConfigError("seed: must be a 64-bit unsigned integer", "seed")
        sizes = self.block_sizes()
        N = self.sample_size()
        if max(sizes) >= N - 1:
            raise ConfigError(f"N: N - 1 = {N - 1} must exceed every block size", "N")
        if self.statistic == "wilks" and sum(sizes) >= N - 1:
            raise ConfigError(f"statistic: wilks needs p < N - 1 (p={sum(sizes)}, N={N})", "statistic")

    def block_sizes(self):
        if not isinstance(self.blocks, str):
            return self.blocks
        p = int(self.p)
        if self.blocks == "S1":
            if p % 4:
                raise ConfigError("p: scenario S1 needs p divisible by 4", "p")
            return (p // 4,) * 4
        if self.blocks == "S2":
            if p % 2:
                raise ConfigError("p: scenario S2 needs even p", "p")
            return (2,) * (p // 2)
        if p % 2 or p < 6:
            raise ConfigError("p: scenario S3 needs even p >= 6", "p")
        return (2, 2, p // 2 - 2, p // 2 - 2)

    def sample_size(self):
        if self.N is not None:
            return int(self.N)
        sizes = self.block_sizes()
        p = sum(sizes)
        return {"G1": 2 * p, "G2": p + 3, "G3": 3 * max(sizes)}[self.regime]

    def layout(self):
        return BlockLayout(self.block_sizes(), self.sample_size(), mean_known=False)

    def to_dict(self):
        d = asdict(self)
        if not isinstance(d["blocks"], str):
            d["blocks"] = list(d["blocks"])
        return d

    @classmethod
    def from_dict(cls, data, path="config"):
        if not isinstance(data, dict):
            raise ConfigError(f"{path}: expected a mapping", path)
        known = {f.name for f in fields(cls)}
        extra = sorted(set(data) - known)
        if extra:
            raise ConfigError(f"{path}.{extra[0]}: unknown field", f"{path}.{extra[0]}")
        try:
            return cls(**data)
        except ConfigError as exc:
            raise ConfigError(f"{path}.{exc}", f"{path}.{exc.field}") from None


@dataclass(frozen=True)
class EmpiricalResult:
    raw: np.ndarray
    standardized: np.ndarray
    rejection_rate: float
    ks: float
    mean: float
    variance: float
    config: SimConfig
    params: dict = field(default_factory=dict)

    def to_dict(self):
        return {
            "config": self.config.to_dict(),
            "params": dict(self.params),
            "rejection_rate": self.rejection_rate,
            "ks": self.ks,
            "standardized_mean": self.mean,
            "standardized_variance": self.variance,
            "raw": self.raw.tolist(),
            "standardized": self.standardized.tolist(),
        }


# --- populations ----------------------------------------------------------------


def _block_cov(tag, pt, rng):
    if tag == "M1":
        return np.eye(pt)
    if tag == "M2":
        j = np.arange(1, pt + 1)
        b = np.sqrt(0.5 + j / (pt + 1))
        toeplitz = 0.3 ** (np.abs(j[:, None] - j[None, :]) ** (1 / 3))
        return b[:, None] * toeplitz * b[None, :]
    U = rng.uniform(1, 5, size=(pt, 2 * pt))
    return U @ U.T / pt


def _sym_sqrt(S, what="covariance"):
    w, V = np.linalg.eigh(S)
    if w.min() <= 1e-12 * max(w.max(), 1e-300):
        raise ValueError(f"{what} is not positive definite (smallest eigenvalue {w.min():.3e})")
    return (V * np.sqrt(w)) @ V.T


def block_covariances(cov, layout, rng=None):
    rng = rng if rng is not None else np.random.default_rng(0)
    return [_block_cov(cov, pt, rng) for pt in layout.p]


def covariance_factory(cov, layout, rng=None):
    """Block-diagonal square root of the population covariance."""
    blocks = block_covariances(cov, layout, rng)
    T = np.zeros((layout.p_total, layout.p_total))
    for s, S in zip(layout.slices(), blocks):
        T[s, s] = _sym_sqrt(S, f"{cov} block")
    return T


def alternative_factory(alt, rho, layout, diag_blocks=None):
    """Full covariance with cross blocks set by the alternative."""
    sl = layout.slices()
    if diag_blocks is None:
        diag_blocks = [np.eye(pt) for pt in layout.p]
    D = np.zeros((layout.p_total, layout.p_total))
    for s, S in zip(sl, diag_blocks):
        D[s, s] = S
    C = np.zeros_like(D)
    if alt != "H0":
        for i, si in enumerate(sl):
            for j, sj in enumerate(sl):
                if i == j:
                    continue
                pi, pj = si.stop - si.start, sj.stop - sj.start
                if alt == "H1":
                    blk = np.ones((pi, pj))
                elif alt == "H2":
                    blk = np.eye(pi, pj)
                elif alt == "H3":
                    blk = np.zeros((pi, pj))
                    blk[0, 0] = 1.0
                else:
                    raise ConfigError(f"alt: unknown alternative {alt!r}", "alt")
                C[si, sj] = blk
    Sigma = D + rho * C
    if np.linalg.eigvalsh(Sigma).min() <= 0:
        Dh = np.linalg.inv(_sym_sqrt(D))
        lam = np.linalg.eigvalsh(Dh @ C @ Dh).min()
        limit = -1 / lam if lam < 0 else np.inf
        raise ValueError(
            f"covariance not positive definite at rho={rho}; alternative {alt} allows rho < {limit:.6g}"
        )
    return Sigma


def _draw(dist, shape, rng):
    if dist == "D1":
        return rng.standard_normal(shape)
    if dist == "D2":
        return (rng.chisquare(1, size=shape) - 1) / np.sqrt(2)
    return rng.standard_t(5, size=shape) / np.sqrt(5 / 3)


def sample_population(config, rng, sqrt_sigma=None):
    """One ``p x N`` draw ``Y = T X`` with standardized i.i.d. entries in ``X``."""
    lay = config.layout()
    X = _draw(config.dist, (lay.p_total, lay.N), rng)
    Y = X if sqrt_sigma is None else sqrt_sigma @ X
    return DataMatrix(Y, lay)


def _stream(seed, *key):
    return np.random.Generator(np.random.Philox(np.random.SeedSequence(int(seed), spawn_key=key)))


def population_root(config):
    """``Sigma^(1/2)`` for the configured covariance and alternative (fixed per seed)."""
    lay = config.layout()
    diag = block_covariances(config.cov, lay, _stream(config.seed, 0))
    if config.alt == "H0" or config.rho == 0:
        T = np.zeros((lay.p_total, lay.p_total))
        for s, S in zip(lay.slices(), diag):
            T[s, s] = _sym_sqrt(S)
        return T
    return _sym_sqrt(alternative_factory(config.alt, config.rho, lay, diag))


def thread_count():
    env = os.environ.get(THREADS_ENV)
    if env:
        try:
            return max(1, int(env))
        except ValueError:
            raise ConfigError(f"{THREADS_ENV} must be an integer, got {env!r}", THREADS_ENV)
    return os.cpu_count() or 1


def ks_normal(values):
    """Kolmogorov-Smirnov distance to the standard normal."""
    x = np.asarray(values, dtype=float)
    if x.size == 0:
        raise ValueError("need at least one value")
    return float(stats.kstest(x, "norm").statistic)


def run_experiment(config, threads=None):
    lay = config.layout()
    f = "square" if config.statistic == "schott" else "log"
    params = lss_params(lay, config.statistic, mean_known=False, method=config.method)
    T = population_root(config)

    def one(rep):
        data = sample_population(config, _stream(config.seed, 1, rep), T)
        try:
            return lss(data_spectrum(data, mean_known=False), f)
        except SingularBlockError as exc:
            raise SingularBlockError(f"replication {rep}: {exc}", block=exc.block) from exc

    n = threads or thread_count()
    reps = range(int(config.reps))
    if n == 1:
        raw = [one(r) for r in reps]
    else:
        with ThreadPoolExecutor(max_workers=n) as pool:
            raw = list(pool.map(one, reps))
    raw = np.asarray(raw)
    z = (raw - params.mean) / np.sqrt(params.variance)
    crit = stats.norm.isf(config.alpha / 2)
    return EmpiricalResult(
        raw=raw,
        standardized=z,
        rejection_rate=float(np.mean(np.abs(z) > crit)),
        ks=ks_normal(z),
        mean=float(z.mean()),
        variance=float(z.var(ddof=1)) if z.size > 1 else 0.0,
        config=config,
        params={"mean": params.mean, "variance": params.variance, "method": params.method,
                "warnings": list(params.warnings), "convention": params.convention},
    )


def histogram_table(values, bins=40, lo=-4.0, hi=4.0):
    """Rows of (left, right, empirical density, standard normal density at the midpoint)."""
    dens, edges = np.histogram(values, bins=bins, range=(lo, hi), density=True)
    mid = (edges[:-1] + edges[1:]) / 2
    return np.column_stack([edges[:-1], edges[1:], dens, stats.norm.pdf(mid)])
