import math
import warnings

import numpy as np
import pytest
from scipy import stats

from forkjoin_tail.asymptotics import first_passage_cdf
from forkjoin_tail.model import DomainError, FirstPassageSpec, ModelParams, lambda_fraction
from forkjoin_tail.numerics import RngStream
from forkjoin_tail.simulator import (
    ISDegeneracyWarning,
    PathConfig,
    SimKind,
    TiltConfig,
    bridge_max_sample,
    default_tilt,
    empirical_clt_statistic,
    estimate_sup_exceedance,
    estimate_tail_crude,
    estimate_tail_tilted,
    queue_suprema,
    sample_first_passage,
    sample_first_passage_many,
    simulate_drifted_sup,
    simulate_max_backlog,
    simulate_paths,
)

REF = ModelParams(1.0, 1.0, 1.0)


def overlap(x, y):
    return x.stats.ci_low <= y.stats.ci_high and y.stats.ci_low <= x.stats.ci_high


def test_config_validation():
    for bad in (dict(horizon_mult=0.5), dict(steps=1), dict(steps=10.5), dict(horizon_mult=math.inf)):
        with pytest.raises(DomainError):
            PathConfig(**bad)
    with pytest.raises(DomainError):
        TiltConfig(theta_a=math.nan)
    with pytest.raises(DomainError):
        TiltConfig(service_mix=0.0)
    with pytest.raises(DomainError):
        TiltConfig(designated_queue=-1)
    with pytest.raises(DomainError):
        estimate_tail_crude(REF.with_n(4), 1.0, PathConfig(steps=16), 0, 1)


def test_max_backlog_nonnegative_and_deterministic():
    p = REF.with_n(8)
    cfg = PathConfig(4, 256, True)
    samples = [simulate_max_backlog(p, 1.0, cfg, RngStream(3, r)) for r in range(50)]
    assert min(samples) >= 0
    again = [simulate_max_backlog(p, 1.0, cfg, RngStream(3, r)) for r in range(50)]
    assert samples == again


def test_adding_queues_never_lowers_the_maximum():
    cfg = PathConfig(4, 256, False)
    for r in range(30):
        stream = RngStream(9, r)
        small = simulate_max_backlog(REF.with_n(5), 1.0, cfg, stream, level=3.0)
        big = simulate_max_backlog(REF.with_n(6), 1.0, cfg, stream, level=3.0)
        assert big >= small


def test_queue_permutation_gives_same_suprema():
    p = REF.with_n(7)
    cfg = PathConfig(4, 128, False)
    perm = np.array([3, 0, 6, 1, 5, 2, 4])
    for r in range(5):
        base = queue_suprema(p, 1.0, cfg, RngStream(4, r))
        permuted = queue_suprema(p, 1.0, cfg, RngStream(4, r), queue_ids=perm)
        assert np.array_equal(permuted, base[perm])
        assert sorted(permuted) == sorted(base)
        assert simulate_max_backlog(p, 1.0, cfg, RngStream(4, r)) == base.max()


def test_refinement_and_horizon_monotone_under_common_numbers():
    p = REF.with_n(4)
    for r in range(10):
        paths = simulate_paths(p, 1.0, PathConfig(8, 512), RngStream(6, r))
        fine = max(paths.values.max(), 0.0)
        coarse = max(paths.values[:, 1::2].max(), 0.0)   # same path, half the grid points
        short = max(paths.values[:, :256].max(), 0.0)    # same path, half the horizon
        assert coarse <= fine and short <= fine


def test_single_process_sup_is_exponential():
    # sigma_a = 0, N = 1: the backlog is the sup of sigma B(t) - beta t ~ Exp(2 beta / sigma^2)
    cfg = PathConfig(horizon_mult=8, steps=2**14, bridge_correction=True)
    sigma, beta = 1.0, 1.0
    sups = [simulate_drifted_sup(-beta, sigma, 8 * sigma**2 / beta**2, cfg, RngStream(12, r)) for r in range(10**4)]
    ks = stats.kstest(sups, "expon", args=(0, sigma**2 / (2 * beta))).statistic
    assert ks < 0.02


def test_crude_single_queue_reference():
    # N = 1 with threshold log 3: P(sup of a drift -1, variance-2 BM > log 3) = 1/3
    est = estimate_tail_crude(REF, 0.5, PathConfig(16, 4096, True), 10**5, 2718, level=math.log(3))
    assert est.kind is SimKind.CRUDE
    assert abs(est.p_hat - 1 / 3) <= 3 * est.stderr + 0.01


def test_crude_unreachable_level():
    est = estimate_tail_crude(REF.with_n(16), 1e4, PathConfig(4, 64), 200, 1)
    assert est.p_hat == 0.0 and est.stderr == 0.0 and est.hits == 0


def test_crude_refinement_diagnostic():
    p = REF.with_n(16)
    a = estimate_tail_crude(p, 0.6, PathConfig(4, 256, True), 20000, 31)
    b = estimate_tail_crude(p, 0.6, PathConfig(8, 512, True), 20000, 32)
    assert abs(a.p_hat - b.p_hat) < 2 * math.hypot(a.stderr, b.stderr)


def test_zero_tilt_is_bit_identical_to_crude():
    p = REF.with_n(16)
    cfg = PathConfig(4, 256, True)
    crude = estimate_tail_crude(p, 0.6, cfg, 3000, 77)
    tilt = estimate_tail_tilted(p, 0.6, cfg, TiltConfig(0.0, 0.0), 3000, 77)
    assert (tilt.p_hat, tilt.stderr, tilt.hits) == (crude.p_hat, crude.stderr, crude.hits)
    assert tilt.kind is SimKind.TILTED


def test_default_tilts():
    t = default_tilt(REF, 0.5)
    assert t.theta_a == pytest.approx(2 * lambda_fraction(REF, 0.5)) and t.theta_i == 0.0
    t = default_tilt(REF, 2.5)
    assert (t.theta_a, t.theta_i, t.service_mix) == (1.0, 1.0, 1.0)
    c = default_tilt(REF, REF.a_star)
    assert c.theta_a == pytest.approx(2 * lambda_fraction(REF, REF.a_star) * REF.beta, rel=1e-14)
    assert c.service_mix == 0.5
    p = ModelParams(0.7, 1.9, 1.3)
    assert 2 * p.beta * p.sigma_a**2 / p.total_var == pytest.approx(2 * lambda_fraction(p, p.a_star) * p.beta)


def test_tilted_agrees_with_crude_at_moderate_level():
    p = REF.with_n(16)
    cfg = PathConfig(4, 128, True)
    crude = estimate_tail_crude(p, 0.6, cfg, 20000, 5)
    tilted = estimate_tail_tilted(p, 0.6, cfg, None, 20000, 6)
    assert overlap(crude, tilted)
    assert tilted.ess <= tilted.reps


@pytest.mark.parametrize("tilt", [
    TiltConfig(theta_a=1.0, theta_i=1.0, designated_queue=2),
    TiltConfig(theta_a=1.0, theta_i=1.0),
    TiltConfig(theta_a=1.0, theta_i=1.0, service_mix=0.3),
    TiltConfig(theta_a=0.5, theta_i=0.0, stopped=False),
])
def test_tilt_variants_unbiased(tilt):
    p = REF.with_n(4)
    cfg = PathConfig(4, 128, True)
    crude = estimate_tail_crude(p, 1.6, cfg, 40000, 8)
    est = estimate_tail_tilted(p, 1.6, cfg, tilt, 8000, 9)
    assert overlap(crude, est)


def test_designated_queue_out_of_range():
    with pytest.raises(DomainError):
        estimate_tail_tilted(REF.with_n(4), 2.0, PathConfig(4, 64), TiltConfig(1.0, 1.0, designated_queue=9), 2000, 1)


def test_degenerate_weights_warn():
    with pytest.warns(ISDegeneracyWarning):
        est = estimate_tail_tilted(REF.with_n(4), 8.0, PathConfig(4, 64), TiltConfig(0.1, 0.0), 20, 1)
    assert est.ess < 10 and est.warnings


def test_tilt_reduces_variance_at_deep_level(capsys):
    # diagnostic only: reported, not asserted
    p = REF.with_n(64)
    cfg = PathConfig(4, 512, True)
    crude = estimate_tail_crude(p, 2.2, cfg, 1000, 3)
    with warnings.catch_warnings():
        warnings.simplefilter("ignore", ISDegeneracyWarning)
        tilted = estimate_tail_tilted(p, 2.2, cfg, None, 1000, 3)
    print(f"N=64 a=2.2: crude {crude.p_hat:.3g} +- {crude.stderr:.2g} ({crude.hits} hits), "
          f"tilted {tilted.p_hat:.3g} +- {tilted.stderr:.2g}")
    assert tilted.ess <= tilted.reps


def test_threads_do_not_change_results():
    p = REF.with_n(8)
    cfg = PathConfig(4, 128, True)
    one = estimate_tail_tilted(p, 2.0, cfg, None, 301, 13, threads=1)
    four = estimate_tail_tilted(p, 2.0, cfg, None, 301, 13, threads=4)
    assert one == four
    c1 = estimate_tail_crude(p, 1.0, cfg, 301, 13, threads=1)
    c3 = estimate_tail_crude(p, 1.0, cfg, 301, 13, threads=3)
    assert c1 == c3


def test_sup_exceedance_identity_small():
    q = REF.with_n(8)
    lam = lambda_fraction(q, 0.5)
    from forkjoin_tail.model import level

    spec = FirstPassageSpec((1 - lam) * level(q, 0.5), -(1 - lam) * q.beta, q.sigma)
    est = estimate_sup_exceedance(spec, PathConfig(8, 1024, True), 20000, 1)
    assert abs(est.p_hat - 1 / 8) <= 3 * est.stderr + 0.01
    with pytest.raises(DomainError):
        estimate_sup_exceedance(FirstPassageSpec(1.0, 0.5, 1.0), PathConfig(), 10, 1)


def test_first_passage_positive_drift_mean():
    spec = FirstPassageSpec(1.5, 0.8, 1.1)
    finite, t = sample_first_passage_many(spec, RngStream(21), 10**5)
    assert finite.all()
    se = t.std(ddof=1) / math.sqrt(t.size)
    assert abs(t.mean() - spec.level / spec.drift) < 3 * se
    assert stats.kstest(t, lambda u: first_passage_cdf(spec, u)).statistic < 0.01


def test_first_passage_negative_drift_finiteness():
    spec = FirstPassageSpec(1.0, -1.0, 1.0)
    finite, t = sample_first_passage_many(spec, RngStream(22), 10**5)
    p = math.exp(-2)
    assert abs(finite.mean() - p) < 3 * math.sqrt(p * (1 - p) / 1e5)
    assert np.isnan(t[~finite]).all()
    assert stats.kstest(t[finite], lambda u: first_passage_cdf(spec, u) / p).statistic < 0.02


def test_first_passage_zero_drift_is_levy():
    spec = FirstPassageSpec(1.0, 0.0, 2.0)
    finite, t = sample_first_passage_many(spec, RngStream(23), 20000)
    assert finite.all()
    assert stats.kstest(t, lambda u: first_passage_cdf(spec, u)).statistic < 0.02


def test_single_first_passage_draw():
    ok, t = sample_first_passage(FirstPassageSpec(1.0, 1.0, 1.0), RngStream(1))
    assert ok and t > 0
    results = [sample_first_passage(FirstPassageSpec(5.0, -1.0, 1.0), RngStream(1, r)) for r in range(50)]
    assert all(t is None for ok, t in results if not ok)


def test_bridge_max_properties():
    gen = RngStream(30).generator(1)
    x0 = gen.normal(size=1000)
    x1 = gen.normal(size=1000)
    m = bridge_max_sample(x0, x1, 0.3, 1.2, RngStream(31))
    assert np.all(m >= np.maximum(x0, x1))
    tiny = bridge_max_sample(x0, x1, 1e-14, 1.2, RngStream(31))
    assert np.allclose(tiny, np.maximum(x0, x1), atol=1e-6)
    with pytest.raises(DomainError):
        bridge_max_sample(0.0, 0.0, 0.0, 1.0, RngStream(1))


def test_bridge_max_exceedance_law():
    x0, x1, dt, vol, c = 0.2, -0.1, 0.5, 1.3, 1.0
    m = bridge_max_sample(x0, x1, dt, vol, RngStream(32), size=10**5)
    p = math.exp(-2 * (c - x0) * (c - x1) / (vol**2 * dt))
    assert abs((m > c).mean() - p) < 3 * math.sqrt(p * (1 - p) / 1e5)


def test_clt_statistic_small():
    p = REF.with_n(64)
    cfg = PathConfig(4, 256, True)
    summary, sample = empirical_clt_statistic(p, cfg, 50, 17)
    assert summary.n == 50 and sample.shape == (50,)
    m0 = simulate_max_backlog(p, 0.0, cfg, RngStream(17, 0))
    assert sample[0] == pytest.approx((m0 - 0.5 * math.log(64)) / math.sqrt(math.log(64)), rel=1e-14)
    with pytest.raises(DomainError):
        empirical_clt_statistic(REF.with_n(1), cfg, 5, 1)
