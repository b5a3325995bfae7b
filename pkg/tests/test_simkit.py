import numpy as np
import pytest
from scipy import stats

from blockindep import simkit as sk
from blockindep.blockstat import BlockLayout
from blockindep.exceptions import ConfigError


def test_config_layouts():
    assert sk.SimConfig(blocks="S1", p=32, regime="G1").layout().p == (8, 8, 8, 8)
    assert sk.SimConfig(blocks="S1", p=32, regime="G1").layout().N == 64
    c = sk.SimConfig(blocks="S2", p=32, regime="G2")
    assert c.layout().k == 16 and c.layout().N == 35
    c = sk.SimConfig(blocks="S3", p=32, regime="G3")
    assert c.layout().p == (2, 2, 14, 14) and c.layout().N == 42
    assert sk.SimConfig(blocks=[3, 5], N=20).layout().N == 20


@pytest.mark.parametrize(
    "kwargs,field",
    [
        ({"dist": "D4"}, "dist"),
        ({"alt": "H9"}, "alt"),
        ({"blocks": "S7"}, "blocks"),
        ({"reps": 0}, "reps"),
        ({"rho": -0.1}, "rho"),
        ({"statistic": "wilks", "blocks": [8, 8], "N": 17}, "statistic"),
    ],
)
def test_config_validation(kwargs, field):
    with pytest.raises(ConfigError) as exc:
        sk.SimConfig(**kwargs)
    assert exc.value.field == field


def test_config_dict_round_trip_and_paths():
    c = sk.SimConfig(blocks=[4, 4], N=30, reps=10)
    assert sk.SimConfig.from_dict(c.to_dict()) == c
    with pytest.raises(ConfigError) as exc:
        sk.SimConfig.from_dict({"cov": "M7"})
    assert exc.value.field == "config.cov"
    with pytest.raises(ConfigError, match="unknown field"):
        sk.SimConfig.from_dict({"colour": 1})


def test_gaussian_rows():
    c = sk.SimConfig(blocks=[2, 2], N=20000)
    d = sk.sample_population(c, np.random.default_rng(0))
    v = d.values[0].var()
    assert abs(v - 1) < 5 / np.sqrt(20000)


def test_chi2_skewness_and_t5_kurtosis():
    rng = np.random.default_rng(1)
    x = sk._draw("D2", 400000, rng)
    assert abs(x.mean()) < 0.01 and abs(x.var() - 1) < 0.02
    assert stats.skew(x) == pytest.approx(2 * np.sqrt(2), rel=0.05)
    t = sk._draw("D3", 2000000, rng)
    assert abs(t.var() - 1) < 0.02
    # sample kurtosis of t_5 converges slowly (infinite 8th moment): loose window
    assert stats.kurtosis(t, fisher=False) == pytest.approx(9, rel=0.2)


def test_covariance_factory():
    lay = BlockLayout((2, 3), 20)
    assert np.allclose(sk.covariance_factory("M1", lay), np.eye(5))
    S = sk.block_covariances("M2", BlockLayout((2,), 20))[0]
    B = np.diag(np.sqrt([0.5 + 1 / 3, 0.5 + 2 / 3]))
    assert np.allclose(S, B @ np.array([[1, 0.3], [0.3, 1]]) @ B)
    rng = np.random.default_rng(2)
    for _ in range(100):
        S = sk.block_covariances("M3", BlockLayout((6,), 20), rng)[0]
        assert np.linalg.eigvalsh(S).min() > 0
    T = sk.covariance_factory("M2", lay)
    assert np.allclose(T[:2, :2] @ T[:2, :2], sk.block_covariances("M2", lay)[0])
    assert np.all(T[:2, 2:] == 0)


def test_alternative_factory():
    lay = BlockLayout((2, 3, 2), 20)
    assert np.allclose(sk.alternative_factory("H1", 0.0, lay), np.eye(7))
    S = sk.alternative_factory("H3", 0.2, lay)
    for i, si in enumerate(lay.slices()):
        for j, sj in enumerate(lay.slices()):
            if i != j:
                assert np.count_nonzero(S[si, sj]) == 1
    S = sk.alternative_factory("H1", 0.5, BlockLayout((1, 1), 20))
    assert np.allclose(S, [[1, 0.5], [0.5, 1]])
    S = sk.alternative_factory("H2", 0.3, lay)
    assert np.allclose(S[0:2, 2:5], 0.3 * np.eye(2, 3))
    with pytest.raises(ValueError, match="allows rho <"):
        sk.alternative_factory("H1", 0.9, BlockLayout((4, 4), 20))


def test_scale_invariance():
    base = sk.SimConfig(blocks=[3, 4], N=30, reps=5, seed=9)
    rng = np.random.default_rng(0)
    d = sk.sample_population(base, sk._stream(9, 1, 0))
    from blockindep.blockstat import DataMatrix, data_spectrum

    scales = np.repeat([3.0, 0.2], [3, 4])[:, None]
    scaled = DataMatrix(d.values * scales, d.layout)
    assert np.allclose(data_spectrum(d).eigenvalues, data_spectrum(scaled).eigenvalues, atol=1e-10)


def test_ks_normal():
    rng = np.random.default_rng(5)
    assert sk.ks_normal(rng.standard_normal(2000)) < 1.63 / np.sqrt(2000)
    assert sk.ks_normal(np.zeros(50)) >= 0.5
    assert sk.ks_normal(rng.standard_normal(2000) + 1) > 0.3
    with pytest.raises(ValueError):
        sk.ks_normal([])


def test_null_schott_experiment():
    c = sk.SimConfig(blocks=[8, 8, 8, 8], N=64, reps=2000, seed=1)
    r = sk.run_experiment(c)
    assert abs(r.mean) < 0.1 and 0.85 <= r.variance <= 1.15
    assert 0.035 <= r.rejection_rate <= 0.065
    assert len(r.raw) == 2000 and 0 <= r.rejection_rate <= 1


def test_power_increases():
    lo = sk.run_experiment(sk.SimConfig(blocks=[8, 8, 8, 8], N=64, reps=500, seed=2, alt="H2", rho=0.0))
    hi = sk.run_experiment(sk.SimConfig(blocks=[8, 8, 8, 8], N=64, reps=500, seed=2, alt="H2", rho=0.2))
    assert hi.rejection_rate > lo.rejection_rate


def test_determinism_across_runs_and_threads(monkeypatch):
    c = sk.SimConfig(blocks=[4, 4, 4], N=30, reps=40, seed=123, cov="M3", dist="D2")
    a = sk.run_experiment(c, threads=1)
    b = sk.run_experiment(c, threads=3)
    monkeypatch.setenv(sk.THREADS_ENV, "2")
    e = sk.run_experiment(c)
    assert np.array_equal(a.raw, b.raw) and np.array_equal(a.raw, e.raw)
    assert a.to_dict() == b.to_dict()


def test_universality_of_ks():
    ks = []
    for dist in ("D1", "D2", "D3"):
        c = sk.SimConfig(dist=dist, blocks=[8, 8, 8, 8], N=64, reps=2000, seed=4)
        ks.append(sk.run_experiment(c).ks)
    assert max(ks) - min(ks) < 0.05


def test_histogram_table():
    t = sk.histogram_table(np.random.default_rng(0).standard_normal(1000), bins=8)
    assert t.shape == (8, 4)
    assert np.all(t[:, 1] > t[:, 0])
