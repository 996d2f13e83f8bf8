import math

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st
from scipy.special import ndtr

from dalmp import risk as R


def spec(**kw):
    base = dict(capacity_mw=100.0, heat_rate=7.5, gas_price=3.0, startup_cost=0.0, sigma=0.2)
    base.update(kw)
    return R.RiskSpec(**base)


def test_normal_cdf_accuracy():
    xs = np.linspace(-8, 8, 4001)
    err = max(abs(R.normal_cdf(float(x)) - float(ndtr(x))) for x in xs)
    assert err <= 1e-12


@pytest.mark.parametrize("field,value", [("capacity_mw", 0.0), ("heat_rate", -1.0), ("gas_price", -0.1),
                                         ("startup_cost", -5.0), ("sigma", -0.1),
                                         ("confidence_threshold", 1.0), ("confidence_threshold", 0.0)])
def test_invalid_spec(field, value):
    with pytest.raises(R.InvalidSpecError):
        spec(**{field: value}).validate()


def test_estimate_sigma_examples():
    assert R.estimate_sigma(np.zeros(40)) == 0.0
    assert R.estimate_sigma([0.1, -0.1] * 20) == pytest.approx(0.1, abs=1e-15)
    draws = np.random.default_rng(0).normal(0, 0.2, 100_000)
    assert R.estimate_sigma(draws) == pytest.approx(0.2, abs=0.005)
    with pytest.raises(R.InsufficientResidualsError):
        R.estimate_sigma(np.zeros(29))


def test_hourly_loss_examples():
    s = spec()
    be = math.log(s.breakeven)
    assert R.hourly_loss_probability(be, s) == 0.5
    assert R.hourly_loss_probability(be + s.sigma, s) == pytest.approx(0.15865525393145707, abs=1e-12)
    assert R.hourly_loss_probability(be + 0.01, spec(sigma=0.0)) == 0.0
    assert R.hourly_loss_probability(be - 0.01, spec(sigma=0.0)) == 1.0


@given(sigma=st.floats(0.01, 2.0), gas=st.floats(0.5, 10.0), a=st.floats(-3, 3), b=st.floats(-3, 3))
def test_hourly_loss_monotone_and_half_at_breakeven(sigma, gas, a, b):
    s = spec(sigma=sigma, gas_price=gas)
    assert R.hourly_loss_probability(math.log(s.breakeven), s) == 0.5
    lo, hi = sorted((a, b))
    p_lo = R.hourly_loss_probability(math.log(s.breakeven) + lo, s)
    p_hi = R.hourly_loss_probability(math.log(s.breakeven) + hi, s)
    assert 0.0 <= p_hi <= p_lo <= 1.0


def test_single_hour_monte_carlo_matches_analytic():
    s = spec(sigma=0.3)
    mu = [math.log(s.breakeven) + 0.1] * 24
    n = 100_000
    block = R.block_profit_distribution(mu, [5], s, n_samples=n, seed=1)
    p = R.hourly_loss_probability(mu[0], s)
    assert abs(block.p_loss - p) <= 3 * math.sqrt(p * (1 - p) / n)


def test_zero_sigma_point_mass():
    s = spec(sigma=0.0, startup_cost=500.0)
    mu = np.log(np.linspace(20, 30, 24))
    block = R.block_profit_distribution(mu, range(1, 25), s, n_samples=10_000)
    expected = s.capacity_mw * np.sum(np.exp(mu) - s.breakeven) - s.startup_cost
    assert np.allclose(block.samples, expected, rtol=1e-12)
    assert len(set(block.quantiles.values())) == 1


def test_huge_startup_cost_forces_loss():
    block = R.block_profit_distribution(np.full(24, 5.0), range(1, 25), spec(startup_cost=1e15),
                                        n_samples=10_000)
    assert block.p_loss == 1.0


@pytest.mark.parametrize("hours", [[], [0], [25], [3, 3]])
def test_invalid_hours(hours):
    with pytest.raises(R.InvalidHoursError):
        R.block_profit_distribution(np.zeros(24), hours, spec(), n_samples=10_000)


def test_recommendation_boundary():
    s = spec()
    assert R.recommend_shutdown(0.95, s) is R.Recommendation.SHUTDOWN
    assert R.recommend_shutdown(0.90, s) is R.Recommendation.RUN
    assert R.recommend_shutdown(0.50, s) is R.Recommendation.RUN


def test_block_loss_monotone_in_costs():
    mu = np.full(24, math.log(22.0))
    hours = range(8, 20)
    sc_sweep = [R.block_profit_distribution(mu, hours, spec(startup_cost=sc), n_samples=20_000, seed=4).p_loss
                for sc in (0, 1000, 5000, 20_000, 80_000)]
    gas_sweep = [R.block_profit_distribution(mu, hours, spec(gas_price=g), n_samples=20_000, seed=4).p_loss
                 for g in (2.0, 2.5, 2.9, 3.3, 4.0)]
    assert sc_sweep == sorted(sc_sweep) and gas_sweep == sorted(gas_sweep)
    assert sc_sweep[0] < sc_sweep[-1] and gas_sweep[0] < gas_sweep[-1]


def test_monte_carlo_variance_halves():
    s = spec(sigma=0.3)
    mu = np.full(24, math.log(s.breakeven) + 0.05)

    def spread(n):
        return np.var([R.block_profit_distribution(mu, [1, 2, 3], s, n_samples=n, seed=k).p_loss
                       for k in range(20)], ddof=1)

    ratio = spread(10_000) / spread(20_000)
    # the ratio of two 19-dof sample variances has a wide sampling distribution
    assert 1.0 < ratio < 4.5


def test_shards_are_deterministic():
    mu = np.log(np.linspace(15, 35, 24))
    a = R.block_profit_distribution(mu, range(1, 25), spec(), n_samples=30_001, seed=9, n_shards=4)
    b = R.block_profit_distribution(mu, range(1, 25), spec(), n_samples=30_001, seed=9, n_shards=4)
    c = R.block_profit_distribution(mu, range(1, 25), spec(), n_samples=30_001, seed=9, n_shards=1)
    assert np.array_equal(a.samples, b.samples) and a.samples.size == 30_001
    assert not np.array_equal(a.samples, c.samples)
    assert abs(a.p_loss - c.p_loss) < 0.02


def test_assess_report(tmp_path):
    mu = np.log(np.r_[np.full(12, 15.0), np.full(12, 40.0)])
    report = R.assess(mu, spec(startup_cost=1000.0), hours=range(1, 25), n_samples=10_000)
    assert np.all((report.hourly_p_loss >= 0) & (report.hourly_p_loss <= 1))
    qs = list(report.block.quantiles.values())
    assert qs == sorted(qs)
    report.write_csv(tmp_path / "risk.csv")
    lines = (tmp_path / "risk.csv").read_text().splitlines()
    assert len(lines) == 25 and lines[1].split(",")[4] == f"{report.hourly_p_loss[0]:.4f}"
    assert f"{report.block.p_loss:.4f}" in report.summary()
