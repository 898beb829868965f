import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from riscellfree.channel import AggregatedSampler
from riscellfree.correlation import scaled_covariances
from riscellfree.errors import InvalidParameterError
from riscellfree.estimation import (
    PilotPlan,
    estimate_channels,
    mmse_coefficients,
    nmse,
    pilot_projection,
    stats_from_traces,
)

from scenarios import random_link_model


def _no_ris(m, k):
    return scaled_covariances(np.eye(2), np.zeros(m), np.zeros((m, k)), 1.0, 1.0)


def test_pilot_plan_round_robin():
    plan = PilotPlan.round_robin(5, 2)
    np.testing.assert_array_equal(plan.assignment, [0, 1, 0, 1, 0])
    assert plan.sharing[0, 2] and plan.sharing[0, 4] and not plan.sharing[0, 1]
    assert not plan.is_orthogonal
    assert PilotPlan.orthogonal(3).is_orthogonal


def test_pilot_plan_rejects_out_of_range_index():
    with pytest.raises(InvalidParameterError):
        PilotPlan(2, [0, 2])


def test_single_user_no_ris_substitution():
    s = mmse_coefficients([[1.0]], _no_ris(1, 1), np.ones(2), PilotPlan.orthogonal(1), 1.0)
    assert s.c[0, 0] == pytest.approx(0.5)
    assert s.gamma[0, 0] == pytest.approx(0.5)
    assert s.err_var[0, 0] == pytest.approx(0.5)
    assert nmse(s)[0, 0] == pytest.approx(0.5)


def test_absent_channel_gives_zero_estimate():
    s = mmse_coefficients([[0.0]], _no_ris(1, 1), np.ones(2), PilotPlan.orthogonal(1), 1.0)
    assert s.c[0, 0] == 0 and s.gamma[0, 0] == 0
    assert np.isnan(nmse(s)[0, 0])


def test_zero_pilot_power_is_well_defined():
    s = mmse_coefficients([[0.0]], _no_ris(1, 1), np.ones(2), PilotPlan.orthogonal(1), 0.0)
    assert s.c[0, 0] == 0


def test_zero_coefficient_gives_zero_estimate():
    s = mmse_coefficients([[0.0]], _no_ris(1, 1), np.ones(2), PilotPlan.orthogonal(1), 1.0)
    assert estimate_channels(np.array([[3.0 + 1j]]), s)[0, 0] == 0


def test_nmse_vanishes_with_strong_pilots():
    s = mmse_coefficients([[1.0]], _no_ris(1, 1), np.ones(2), PilotPlan.orthogonal(1), 1e9)
    assert nmse(s)[0, 0] < 1e-8


@pytest.mark.parametrize("ptd", [0.1, 1.0, 10.0, 1e4])
def test_contamination_floor(ptd):
    s = mmse_coefficients([[ptd, ptd]], _no_ris(1, 2), np.ones(2), PilotPlan(1, [0, 0]), 1.0)
    expected = 1 - ptd / (2 * ptd + 1)
    np.testing.assert_allclose(nmse(s)[0], expected, rtol=1e-12)
    assert np.all(nmse(s) > 0.5)


def test_gamma_plus_error_equals_delta():
    rng = np.random.default_rng(0)
    for _ in range(200):
        model, phi = random_link_model(rng)
        s = model.stats(phi)
        np.testing.assert_allclose(s.gamma + s.err_var, s.delta, rtol=1e-14, atol=0)


@settings(max_examples=1000, deadline=None)
@given(
    seed=st.integers(0, 2**32 - 1),
    p=st.floats(1e-3, 1e3),
    factor=st.floats(1.01, 100.0),
)
def test_nmse_bounded_and_decreasing_in_pilot_energy(seed, p, factor):
    rng = np.random.default_rng(seed)
    m, k = int(rng.integers(1, 5)), int(rng.integers(1, 5))
    tau_p = int(rng.integers(1, k + 1))
    plan = PilotPlan(tau_p, rng.integers(0, tau_p, k))
    delta = rng.uniform(0, 2, (m, k)) * (rng.random((m, k)) > 0.1)
    chi = np.zeros((m, k, k))
    lo = nmse(stats_from_traces(delta, np.zeros_like(delta), chi, plan, p))
    hi = nmse(stats_from_traces(delta, np.zeros_like(delta), chi, plan, p * factor))
    ok = delta > 0
    assert np.all((lo[ok] >= 0) & (lo[ok] <= 1))
    assert np.all((hi[ok] >= 0) & (hi[ok] <= 1))
    assert np.all(hi[ok] <= lo[ok])
    assert np.all(np.isnan(lo[~ok]))


def _pilot_draws(trials=100_000, seed=1):
    rng = np.random.default_rng(seed)
    model, phi = random_link_model(np.random.default_rng(42), max_m=3, max_k=3, max_n=8)
    u = AggregatedSampler(model.large_scale, model.correlations, phi).sample(rng, trials)
    y = pilot_projection(u, model.plan, model.pilot_snr, rng=rng)
    return model, phi, u, y


def test_pilot_projection_variance():
    model, phi, u, y = _pilot_draws()
    s = model.stats(phi)
    ptau = model.pilot_snr * model.plan.tau_p
    expected = ptau * (s.delta @ model.plan.sharing.astype(float)) + 1
    np.testing.assert_allclose(np.mean(np.abs(y) ** 2, axis=0), expected, rtol=0.02)


def test_estimate_power_and_orthogonal_error():
    model, phi, u, y = _pilot_draws()
    s = model.stats(phi)
    uh = estimate_channels(y, s)
    np.testing.assert_allclose(np.mean(np.abs(uh) ** 2, axis=0), s.gamma, rtol=0.02)
    prod = uh * np.conj(u - uh)
    se = np.std(prod, axis=0) / np.sqrt(prod.shape[0])
    assert np.all(np.abs(np.mean(prod, axis=0)) < 5 * se)


def test_empirical_nmse():
    model, phi, u, y = _pilot_draws()
    s = model.stats(phi)
    err = np.mean(np.abs(u - estimate_channels(y, s)) ** 2, axis=0) / s.delta
    np.testing.assert_allclose(err, nmse(s), rtol=0.03)


def test_pilot_projection_needs_rng_for_noise():
    with pytest.raises(InvalidParameterError):
        pilot_projection(np.ones((1, 1)), PilotPlan.orthogonal(1), 1.0)
