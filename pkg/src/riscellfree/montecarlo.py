"""Monte Carlo estimation of the MR uplink/downlink SINR and of the large-M limits.

Trials are processed in fixed-size blocks. Block ``i`` draws from its own
generator seeded by ``(master_seed, stream, i)``, and the per-block sums
are merged with :func:`math.fsum` in block order, so estimates do not
depend on how many worker threads were used.
"""

from __future__ import annotations

import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from typing import Optional

import numpy as np

from .channel import AggregatedSampler, complex_normal
from .correlation import CorrelationSet
from .errors import InvalidParameterError
from .estimation import EstimationStats, pilot_projection
from .phase import as_phi
from .throughput import LinkModel, PowerConfig, check_downlink_budget

UPLINK_STREAM = 1
DOWNLINK_STREAM = 2
DECISION_STREAM = 3
Z95 = 1.96
BLOCK_BUDGET = 2_000_000


class MomentAccumulator:
    """Sums and outer-product sums of per-user feature vectors.

    Parameters
    ----------
    k : int
        Number of users.
    f : int
        Features per user.
    """

    def __init__(self, k: int, f: int):
        self.n = 0
        self.total = np.zeros((k, f))
        self.outer = np.zeros((k, f, f))

    def update(self, features: np.ndarray) -> None:
        """Add a ``(B, K, F)`` block of real features."""
        self.n += features.shape[0]
        self.total += features.sum(axis=0)
        self.outer += np.einsum("bki,bkj->kij", features, features)

    @classmethod
    def merge(cls, parts) -> "MomentAccumulator":
        """Combine accumulators with correctly rounded summation."""
        parts = list(parts)
        k, f = parts[0].total.shape
        out = cls(k, f)
        out.n = sum(p.n for p in parts)
        out.total = _fsum_stack([p.total for p in parts])
        out.outer = _fsum_stack([p.outer for p in parts])
        return out

    def mean(self) -> np.ndarray:
        return self.total / self.n

    def cov(self) -> np.ndarray:
        mu = self.mean()
        if self.n < 2:
            return np.full(self.outer.shape, np.nan)
        c = (self.outer - self.n * mu[:, :, None] * mu[:, None, :]) / (self.n - 1)
        return c


def _fsum_stack(arrays):
    stack = np.stack(arrays)
    flat = stack.reshape(stack.shape[0], -1)
    return np.array([math.fsum(col) for col in flat.T]).reshape(stack.shape[1:])


@dataclass
class SinrEstimate:
    """Monte Carlo SINR per user with 95% confidence half-widths.

    ``terms`` holds the estimated expectations: desired-signal power
    ``ds``, beamforming uncertainty ``bu``, total inter-user interference
    ``ui`` and noise ``no``.
    """

    sinr: np.ndarray
    ci_half_width: np.ndarray
    trials: int
    terms: dict = field(default_factory=dict)


def _assemble(acc: MomentAccumulator, a1, a2, a3, a4) -> SinrEstimate:
    """SINR ``a1 |E a|^2 / (a1 Var(a) + a2 E[ui] + a3 E[no] + a4)`` with delta-method CI.

    Features per user are ``(Re a, Im a, |a|^2, ui[, no])``.
    """
    mu = acc.mean()
    k, f = mu.shape
    x, y, s, ui = mu[:, 0], mu[:, 1], mu[:, 2], mu[:, 3]
    no = mu[:, 4] if f > 4 else np.zeros(k)
    a1 = np.broadcast_to(np.asarray(a1, dtype=float), (k,))
    ds = a1 * (x**2 + y**2)
    bu = a1 * np.maximum(s - x**2 - y**2, 0.0)
    den = bu + a2 * ui + a3 * no + a4
    sinr = np.zeros(k)
    ok = (ds > 0) & (den > 0)
    sinr[ok] = ds[ok] / den[ok]
    half = np.full(k, np.inf)
    if acc.n >= 2:
        cov = acc.cov()
        half = np.zeros(k)
        for i in np.flatnonzero(ok):
            d2 = den[i] ** 2
            g = np.zeros(f)
            g[0] = 2 * a1[i] * x[i] * (den[i] + ds[i]) / d2
            g[1] = 2 * a1[i] * y[i] * (den[i] + ds[i]) / d2
            g[2] = -ds[i] * a1[i] / d2
            g[3] = -ds[i] * a2 / d2
            if f > 4:
                g[4] = -ds[i] * a3 / d2
            var = float(g @ cov[i] @ g) / acc.n
            half[i] = Z95 * math.sqrt(max(var, 0.0))
    terms = {"ds": ds, "bu": bu, "ui": a2 * ui, "no": a3 * no + a4}
    return SinrEstimate(sinr=sinr, ci_half_width=half, trials=acc.n, terms=terms)


def block_rng(seed: int, stream: int, block: int) -> np.random.Generator:
    return np.random.default_rng(np.random.SeedSequence(int(seed), spawn_key=(stream, block)))


def resolve_seed(rng_or_seed) -> int:
    if isinstance(rng_or_seed, np.random.Generator):
        return int(rng_or_seed.integers(0, 2**63 - 1))
    return int(rng_or_seed)


def default_block_size(m: int, k: int, rank: int) -> int:
    return int(min(1000, max(16, BLOCK_BUDGET // max(1, m * k * max(rank, 1)))))


class _Simulation:
    """Shared state for uplink/downlink trial blocks."""

    def __init__(self, model: LinkModel, phase, check_budget: bool):
        self.model = model
        self.phi = as_phi(phase)
        self.stats: EstimationStats = model.stats(self.phi)
        self.power: PowerConfig = model.power(self.stats)
        if check_budget:
            check_downlink_budget(self.stats, self.power)
        self.sampler = AggregatedSampler(model.large_scale, model.correlations, self.phi)

    def draw(self, rng, batch):
        u = self.sampler.sample(rng, batch)
        y = pilot_projection(u, self.model.plan, self.model.pilot_snr, rng=rng)
        return u, self.stats.c * y

    def uplink_features(self, rng, batch):
        u, uh = self.draw(rng, batch)
        C = np.conj(uh).transpose(0, 2, 1) @ u
        a = np.diagonal(C, axis1=1, axis2=2)
        eta = self.power.uplink_eta
        ui = (np.abs(C) ** 2) @ eta - eta * np.abs(a) ** 2
        no = np.sum(np.abs(uh) ** 2, axis=1)
        return np.stack([a.real, a.imag, np.abs(a) ** 2, ui, no], axis=-1)

    def downlink_features(self, rng, batch):
        u, uh = self.draw(rng, batch)
        D = u.transpose(0, 2, 1) @ (np.sqrt(self.power.downlink_eta) * np.conj(uh))
        a = np.diagonal(D, axis1=1, axis2=2)
        ui = np.sum(np.abs(D) ** 2, axis=2) - np.abs(a) ** 2
        return np.stack([a.real, a.imag, np.abs(a) ** 2, ui], axis=-1)


def _run_blocks(fn, k, f, trials, seed, stream, block_size, threads):
    n_blocks = -(-trials // block_size)

    def work(i):
        size = min(block_size, trials - i * block_size)
        acc = MomentAccumulator(k, f)
        acc.update(fn(block_rng(seed, stream, i), size))
        return acc

    if threads > 1:
        with ThreadPoolExecutor(max_workers=threads) as pool:
            parts = list(pool.map(work, range(n_blocks)))
    else:
        parts = [work(i) for i in range(n_blocks)]
    return MomentAccumulator.merge(parts)


def _check_trials(trials, min_trials):
    if trials < min_trials:
        raise InvalidParameterError(f"need at least {min_trials} trials, got {trials}")


def uplink_sinr_monte_carlo(
    model: LinkModel,
    phase,
    trials: int,
    rng=0,
    threads: int = 1,
    block_size: Optional[int] = None,
    min_trials: int = 100,
) -> SinrEstimate:
    """Empirical uplink SINR with MR combining, as a ratio of estimated expectations.

    The data-noise and data-symbol expectations are taken analytically given
    each channel draw (``E|sum_m u_hat* w|^2 = sum_m |u_hat|^2``); channels
    and pilot noise are sampled.
    """
    _check_trials(trials, min_trials)
    sim = _Simulation(model, phase, check_budget=False)
    bs = block_size or default_block_size(model.m, model.k, sim.sampler.rank)
    acc = _run_blocks(sim.uplink_features, model.k, 5, trials, resolve_seed(rng), UPLINK_STREAM, bs, threads)
    rho = sim.power.uplink_snr
    return _assemble(acc, rho * sim.power.uplink_eta, rho, 1.0, 0.0)


def downlink_sinr_monte_carlo(
    model: LinkModel,
    phase,
    trials: int,
    rng=0,
    threads: int = 1,
    block_size: Optional[int] = None,
    min_trials: int = 100,
) -> SinrEstimate:
    """Empirical downlink SINR with MR precoding.

    Raises
    ------
    InvalidPowerError
        If the power-control coefficients violate a per-AP budget.
    """
    _check_trials(trials, min_trials)
    sim = _Simulation(model, phase, check_budget=True)
    bs = block_size or default_block_size(model.m, model.k, sim.sampler.rank)
    acc = _run_blocks(sim.downlink_features, model.k, 4, trials, resolve_seed(rng), DOWNLINK_STREAM, bs, threads)
    rho = sim.power.downlink_snr
    return _assemble(acc, rho, rho, 0.0, 1.0)


def _check_regime(regime):
    if regime not in ("large_M", "large_MN"):
        raise InvalidParameterError(f"regime must be 'large_M' or 'large_MN', got {regime!r}")


def uplink_deterministic_equivalent(model: LinkModel, phase, regime: str = "large_M") -> np.ndarray:
    """Limit of ``r_uk / (sqrt(rho_u) M)`` as coefficients of the symbols.

    Returns a ``(K, K)`` array whose row ``k`` holds the coefficient of
    ``s_k'``; entries outside the pilot-sharing set are zero. ``large_MN``
    keeps only the cascaded part and divides by ``M N`` instead of ``M``.
    """
    _check_regime(regime)
    stats = model.stats(phase)
    power = model.power(stats)
    ptau = model.pilot_snr * model.plan.tau_p
    m, n = model.m, model.correlations.n
    if regime == "large_M":
        base, scale = stats.delta, m
    else:
        base, scale = stats.trace, m * n
    coef = (stats.c.T @ base) * np.sqrt(power.uplink_eta * ptau)[None, :] / scale
    return np.where(model.plan.sharing, coef, 0.0)


def downlink_deterministic_equivalent(model: LinkModel, phase, regime: str = "large_M") -> np.ndarray:
    """Limit of ``r_dk / (sqrt(rho_d) M)``; row ``k`` holds the coefficient of ``q_k'``."""
    _check_regime(regime)
    stats = model.stats(phase)
    power = model.power(stats)
    ptau = model.pilot_snr * model.plan.tau_p
    m, n = model.m, model.correlations.n
    if regime == "large_M":
        base, scale = stats.delta, m
    else:
        base, scale = stats.trace, m * n
    coef = base.T @ (np.sqrt(power.downlink_eta * ptau) * stats.c) / scale
    return np.where(model.plan.sharing, coef, 0.0)


def sample_decision_statistics(model: LinkModel, phase, samples: int, rng=0, direction: str = "uplink"):
    """Draw normalized received signals together with the transmitted symbols.

    Returns
    -------
    r : (samples, K) complex
        ``r_uk / (sqrt(rho_u) M)`` or ``r_dk / (sqrt(rho_d) M)``.
    symbols : (samples, K) complex
        Unit-variance Gaussian data symbols.
    """
    if direction not in ("uplink", "downlink"):
        raise InvalidParameterError(f"direction must be 'uplink' or 'downlink', got {direction!r}")
    sim = _Simulation(model, phase, check_budget=direction == "downlink")
    seed = resolve_seed(rng)
    bs = default_block_size(model.m, model.k, sim.sampler.rank)
    rs, ss = [], []
    for i in range(-(-samples // bs)):
        g = block_rng(seed, DECISION_STREAM, i)
        size = min(bs, samples - i * bs)
        u, uh = sim.draw(g, size)
        s = complex_normal(g, (size, model.k))
        if direction == "uplink":
            rho = sim.power.uplink_snr
            w = complex_normal(g, (size, model.m))
            y = np.sum(u * np.sqrt(sim.power.uplink_eta) * s[:, None, :], axis=2)
            if rho > 0:
                y = y + w / np.sqrt(rho)
            r = np.einsum("bmk,bm->bk", np.conj(uh), y)
        else:
            rho = sim.power.downlink_snr
            w = complex_normal(g, (size, model.k))
            xm = np.sum(np.sqrt(sim.power.downlink_eta) * np.conj(uh) * s[:, None, :], axis=2)
            r = np.einsum("bmk,bm->bk", u, xm) + (w / np.sqrt(rho) if rho > 0 else 0.0)
        rs.append(r / model.m)
        ss.append(s)
    return np.concatenate(rs), np.concatenate(ss)


def concentration_spread(model: LinkModel, phase, samples: int, rng=0, direction="uplink", regime="large_M"):
    """Relative RMS deviation of the normalized received signal from its deterministic equivalent.

    Pooled over users: ``sqrt(sum_k E|r_k - sum_k' D_kk' s_k'|^2 / sum_k ||D_k||^2)``.
    """
    if direction == "uplink":
        de = uplink_deterministic_equivalent(model, phase, regime)
    else:
        de = downlink_deterministic_equivalent(model, phase, regime)
    r, s = sample_decision_statistics(model, phase, samples, rng, direction)
    scale = 1.0 if regime == "large_M" else 1.0 / model.correlations.n
    dev = r * scale - s @ de.T
    ref = float(np.sum(np.abs(de) ** 2))
    if ref == 0:
        return float(np.sqrt(np.mean(np.sum(np.abs(dev) ** 2, axis=1))))
    return float(np.sqrt(np.mean(np.sum(np.abs(dev) ** 2, axis=1)) / ref))


@dataclass
class AssumptionReport:
    """Finite-N proxies of the bounded-norm / nonvanishing-trace conditions."""

    ap_spectral_norm: np.ndarray
    ap_normalized_trace: np.ndarray
    link_spectral_norm: np.ndarray
    link_normalized_trace: np.ndarray
    degenerate_aps: list
    degenerate_links: list

    @property
    def ok(self) -> bool:
        return not self.degenerate_aps and not self.degenerate_links


def check_assumption1(correlations: CorrelationSet, tol: float = 0.0) -> AssumptionReport:
    """Spectral norms and normalized traces of every covariance; zero-trace ones are flagged."""
    n = correlations.n
    if correlations.is_scaled:
        norm_r = float(np.linalg.norm(correlations.base, 2))
        tr_r = float(np.trace(correlations.base).real) / n
        ap_norm = correlations.ap_scale * norm_r
        ap_tr = correlations.ap_scale * tr_r
        link_norm = correlations.link_scale * norm_r
        link_tr = correlations.link_scale * tr_r
    else:
        ap_norm = np.linalg.norm(correlations.explicit_ap, 2, axis=(-2, -1))
        ap_tr = np.trace(correlations.explicit_ap, axis1=-2, axis2=-1).real / n
        link_norm = np.linalg.norm(correlations.explicit_link, 2, axis=(-2, -1))
        link_tr = np.trace(correlations.explicit_link, axis1=-2, axis2=-1).real / n
    bad_ap = [int(i) for i in np.flatnonzero(ap_tr <= tol)]
    bad_link = [tuple(int(v) for v in ix) for ix in np.argwhere(link_tr <= tol)]
    return AssumptionReport(ap_norm, ap_tr, link_norm, link_tr, bad_ap, bad_link)
