import numpy as np
import pytest

from riscellfree.correlation import CorrelationSet, scaled_covariances
from riscellfree.errors import InvalidParameterError, InvalidPowerError
from riscellfree.estimation import PilotPlan
from riscellfree.montecarlo import (
    MomentAccumulator,
    check_assumption1,
    concentration_spread,
    downlink_deterministic_equivalent,
    downlink_sinr_monte_carlo,
    sample_decision_statistics,
    uplink_deterministic_equivalent,
    uplink_sinr_monte_carlo,
)
from riscellfree.throughput import LinkModel

from scenarios import random_link_model


def _single_user(rho_u=1.0, rho_d=1.0):
    cs = scaled_covariances(np.eye(2), [0.0], [[0.0]], 1.0, 1.0)
    return LinkModel(np.array([[1.0]]), cs, PilotPlan.orthogonal(1), 1.0, rho_u, rho_d)


def test_single_user_uplink_matches_closed_form():
    est = uplink_sinr_monte_carlo(_single_user(), np.ones(2), 100_000, rng=1)
    assert abs(est.sinr[0] - 0.25) <= est.ci_half_width[0]


def test_zero_power_gives_zero_sinr():
    assert uplink_sinr_monte_carlo(_single_user(rho_u=0.0), np.ones(2), 1000).sinr[0] == 0
    assert downlink_sinr_monte_carlo(_single_user(rho_d=0.0), np.ones(2), 1000).sinr[0] == 0


def test_trials_validated():
    with pytest.raises(InvalidParameterError):
        uplink_sinr_monte_carlo(_single_user(), np.ones(2), 10)


def test_downlink_budget_checked():
    model = _single_user().replace(downlink_eta=np.array([[100.0]]))
    with pytest.raises(InvalidPowerError):
        downlink_sinr_monte_carlo(model, np.ones(2), 1000)


@pytest.mark.parametrize("fn", [uplink_sinr_monte_carlo, downlink_sinr_monte_carlo])
def test_bit_identical_across_thread_counts(fn):
    model, phi = random_link_model(np.random.default_rng(7))
    a = fn(model, phi, 5000, rng=11, threads=1, block_size=256)
    b = fn(model, phi, 5000, rng=11, threads=4, block_size=256)
    np.testing.assert_array_equal(a.sinr, b.sinr)
    np.testing.assert_array_equal(a.ci_half_width, b.ci_half_width)


def test_confidence_interval_shrinks():
    model, phi = random_link_model(np.random.default_rng(8))
    small = uplink_sinr_monte_carlo(model, phi, 2000, rng=1)
    large = uplink_sinr_monte_carlo(model, phi, 32_000, rng=1)
    ratio = large.ci_half_width / small.ci_half_width
    assert np.all(ratio < 0.4) and np.all(ratio > 0.15)


def test_moment_accumulator_merge_matches_single_pass():
    rng = np.random.default_rng(0)
    x = rng.standard_normal((300, 2, 3))
    whole = MomentAccumulator(2, 3)
    whole.update(x)
    parts = []
    for chunk in np.array_split(x, 7):
        acc = MomentAccumulator(2, 3)
        acc.update(chunk)
        parts.append(acc)
    merged = MomentAccumulator.merge(parts)
    np.testing.assert_allclose(merged.mean(), whole.mean(), rtol=1e-13)
    np.testing.assert_allclose(merged.cov(), whole.cov(), rtol=1e-12, atol=1e-15)
    np.testing.assert_allclose(whole.cov()[0], np.cov(x[:, 0].T, ddof=1), rtol=1e-10)


def test_corrected_closed_form_within_confidence_band():
    rng = np.random.default_rng(9)
    for i in range(3):
        model, phi = random_link_model(rng, max_m=4, max_k=3, max_n=8)
        up, down = model.closed_form(phi, include_shared_ris_terms=True)
        mu = uplink_sinr_monte_carlo(model, phi, 40_000, rng=i)
        md = downlink_sinr_monte_carlo(model, phi, 40_000, rng=i)
        assert np.all(np.abs(mu.sinr - up) <= 2 * mu.ci_half_width + 1e-12)
        assert np.all(np.abs(md.sinr - down) <= 2 * md.ci_half_width + 1e-12)


def test_deterministic_equivalent_single_user():
    model = _single_user()
    s = model.stats(np.ones(2))
    de = uplink_deterministic_equivalent(model, np.ones(2))
    assert de[0, 0] == pytest.approx(np.sqrt(model.pilot_snr) * s.c[0, 0] * 1.0)
    assert downlink_deterministic_equivalent(model, np.ones(2))[0, 0] > 0


def test_large_mn_without_surface_is_zero():
    model = _single_user()
    assert not np.any(uplink_deterministic_equivalent(model, np.ones(2), "large_MN"))
    assert not np.any(downlink_deterministic_equivalent(model, np.ones(2), "large_MN"))
    with pytest.raises(InvalidParameterError):
        uplink_deterministic_equivalent(model, np.ones(2), "huge")


def test_noiseless_single_user_statistic_near_equivalent():
    # with strong pilots and no noise the estimate is the channel and r/M concentrates quickly
    m = 400
    cs = scaled_covariances(np.eye(2), np.zeros(m), np.zeros((m, 1)), 1.0, 1.0)
    model = LinkModel(np.ones((m, 1)), cs, PilotPlan.orthogonal(1), 1e6, 1e9, 1e9)
    assert concentration_spread(model, np.ones(2), 2000, rng=0) < 0.1


def test_decision_statistics_shapes():
    model, phi = random_link_model(np.random.default_rng(10))
    r, s = sample_decision_statistics(model, phi, 123, rng=1, direction="downlink")
    assert r.shape == (123, model.k) and s.shape == (123, model.k)
    with pytest.raises(InvalidParameterError):
        sample_decision_statistics(model, phi, 10, direction="both")


def test_assumption_check():
    rep = check_assumption1(scaled_covariances(np.eye(4), [1.0], [[1.0]], 1.0, 1.0))
    assert rep.ok
    np.testing.assert_allclose(rep.ap_spectral_norm, 1.0)
    np.testing.assert_allclose(rep.ap_normalized_trace, 1.0)
    z = np.zeros((1, 4, 4))
    rep = check_assumption1(CorrelationSet.from_matrices(z, z[:, None]))
    assert not rep.ok and rep.degenerate_aps == [0]
