"""Closed-form uplink/downlink SINR with MR processing and net throughput."""

from __future__ import annotations

from dataclasses import dataclass, replace

import numpy as np

from .errors import InvalidParameterError, InvalidPowerError, ShapeError
from .correlation import CorrelationSet
from .estimation import EstimationStats, PilotPlan, mmse_coefficients
from .phase import as_phi

DAMPING = 1e-12
BUDGET_TOL = 1e-9


@dataclass(frozen=True, eq=False)
class PowerConfig:
    """Normalized SNRs and power-control coefficients.

    ``uplink_eta`` has shape ``(K,)`` and ``downlink_eta`` shape ``(M, K)``.
    """

    pilot_snr: float
    uplink_snr: float
    downlink_snr: float
    uplink_eta: np.ndarray
    downlink_eta: np.ndarray

    def __post_init__(self):
        for name in ("pilot_snr", "uplink_snr", "downlink_snr"):
            v = getattr(self, name)
            if not np.isfinite(v) or v < 0:
                raise InvalidParameterError(f"{name} must be finite and nonnegative, got {v}")
        eu = np.asarray(self.uplink_eta, dtype=float)
        ed = np.asarray(self.downlink_eta, dtype=float)
        if eu.ndim != 1 or ed.ndim != 2:
            raise ShapeError("uplink_eta must be (K,) and downlink_eta (M, K)")
        if np.any(eu < 0) or np.any(eu > 1):
            raise InvalidParameterError("uplink power coefficients must lie in [0, 1]")
        if np.any(ed < 0) or np.any(~np.isfinite(ed)):
            raise InvalidParameterError("downlink power coefficients must be finite and nonnegative")
        object.__setattr__(self, "uplink_eta", eu)
        object.__setattr__(self, "downlink_eta", ed)

    @classmethod
    def with_default_control(cls, stats: EstimationStats, pilot_snr, uplink_snr, downlink_snr) -> "PowerConfig":
        eu, ed = default_power_control(stats)
        return cls(pilot_snr, uplink_snr, downlink_snr, eu, ed)

    def replace(self, **changes) -> "PowerConfig":
        return replace(self, **changes)


@dataclass(frozen=True)
class FrameConfig:
    """Coherence-interval layout. ``bandwidth_mhz`` in MHz, lengths in symbols."""

    bandwidth_mhz: float = 20.0
    tau_c: int = 200
    tau_p: int = 5
    nu_u: float = 0.5
    nu_d: float = 0.5

    def __post_init__(self):
        if self.bandwidth_mhz <= 0:
            raise InvalidParameterError("bandwidth must be positive")
        if not 0 < self.tau_p < self.tau_c:
            raise InvalidParameterError(f"need 0 < tau_p < tau_c, got {self.tau_p}, {self.tau_c}")
        if not (0 <= self.nu_u <= 1 and 0 <= self.nu_d <= 1) or abs(self.nu_u + self.nu_d - 1) > 1e-12:
            raise InvalidParameterError("duplex fractions must lie in [0, 1] and sum to 1")

    @property
    def prelog(self) -> float:
        return 1.0 - self.tau_p / self.tau_c


def default_power_control(stats: EstimationStats):
    """``eta_k = 1`` and ``eta_mk = 1 / sum_k' gamma_mk'``.

    APs whose estimates are all zero get the damped denominator ``1e-12``,
    so the budget still holds because every ``gamma_mk`` there is zero.
    """
    total = stats.gamma.sum(axis=1, keepdims=True)
    total = np.where(total > 0, total, DAMPING)
    eta_d = np.broadcast_to(1.0 / total, stats.gamma.shape).copy()
    return np.ones(stats.k), eta_d


def check_downlink_budget(stats: EstimationStats, power: PowerConfig) -> np.ndarray:
    """Per-AP load ``sum_k eta_mk gamma_mk``; raises if any exceeds one."""
    if power.downlink_eta.shape != stats.gamma.shape:
        raise ShapeError(f"downlink_eta {power.downlink_eta.shape} does not match stats {stats.gamma.shape}")
    load = np.sum(power.downlink_eta * stats.gamma, axis=1)
    if np.any(load > 1.0 + BUDGET_TOL):
        worst = int(np.argmax(load))
        raise InvalidPowerError(f"AP {worst} exceeds its power budget: load {load[worst]:.6g} > 1")
    return load


def _safe_ratio(num, den):
    out = np.zeros_like(num)
    ok = num > 0
    out[ok] = num[ok] / den[ok]
    return out


def _ul_terms(stats: EstimationStats, power: PowerConfig, plan: PilotPlan):
    rho = power.uplink_snr
    ptau = power.pilot_snr * plan.tau_p
    eta = power.uplink_eta
    if eta.shape != (stats.k,):
        raise ShapeError(f"uplink_eta has shape {eta.shape}, expected ({stats.k},)")
    c2 = stats.c**2
    A = c2.T @ stats.xi
    ni = 2 * rho * ptau * eta * np.diagonal(A) + rho * ((stats.gamma.T @ stats.delta) @ eta)
    no = stats.gamma.sum(axis=0)
    num = rho * eta * no**2
    return rho, ptau, eta, A, num, ni, no


def uplink_sinr_closed_form(
    stats: EstimationStats, power: PowerConfig, plan: PilotPlan, include_shared_ris_terms: bool = False
) -> np.ndarray:
    """Uplink SINR per user with MR combining.

    ``SINR_k = rho eta_k (sum_m gamma_mk)^2 / (CI_k + NI_k + NO_k)``. With
    ``include_shared_ris_terms`` the denominator also carries the fourth-order
    coupling between users whose cascaded channels share one AP-RIS link,
    which the independence-based expression leaves out.
    """
    rho, ptau, eta, A, num, ni, no = _ul_terms(stats, power, plan)
    off = plan.sharing & ~np.eye(plan.k, dtype=bool)
    B = stats.c.T @ stats.delta
    ci = 2 * rho * ptau * np.sum(off * A * eta, axis=1) + ptau * rho * np.sum(off * B**2 * eta, axis=1)
    den = ci + ni + no
    if include_shared_ris_terms:
        den = den + _ul_shared_terms(stats, eta, plan, rho, ptau)
    return _safe_ratio(num, den)


def _ul_shared_terms(stats, eta, plan, rho, ptau):
    S = plan.sharing.astype(float)
    chi = stats.chi
    # Q[m, k, k'] = sum over k'' in P_k, k'' != k', of chi[m, k'', k']
    Q = np.einsum("ij,mjl->mil", S, chi) - S[None] * np.diagonal(chi, axis1=1, axis2=2)[:, None, :]
    return rho * ptau * np.einsum("mk,mkl,l->k", stats.c**2, Q, eta)


def uplink_sinr_orthogonal(stats: EstimationStats, power: PowerConfig, plan: PilotPlan) -> np.ndarray:
    """Uplink SINR when every user has its own pilot (no coherent interference)."""
    if not plan.is_orthogonal:
        raise InvalidParameterError("orthogonal-pilot expression needs an injective pilot assignment")
    _, _, _, _, num, ni, no = _ul_terms(stats, power, plan)
    return _safe_ratio(num, ni + no)


def _dl_terms(stats: EstimationStats, power: PowerConfig, plan: PilotPlan):
    check_downlink_budget(stats, power)
    rho = power.downlink_snr
    ptau = power.pilot_snr * plan.tau_p
    eta = power.downlink_eta
    ec2 = eta * stats.c**2
    A = stats.xi.T @ ec2
    ni = 2 * rho * ptau * np.diagonal(A) + rho * np.sum(stats.delta.T @ (eta * stats.gamma), axis=1)
    num = rho * np.sum(np.sqrt(eta) * stats.gamma, axis=0) ** 2
    return rho, ptau, eta, A, num, ni


def downlink_sinr_closed_form(
    stats: EstimationStats, power: PowerConfig, plan: PilotPlan, include_shared_ris_terms: bool = False
) -> np.ndarray:
    """Downlink SINR per user with MR precoding.

    ``SINR_k = rho (sum_m sqrt(eta_mk) gamma_mk)^2 / (CI_k + NI_k + 1)``.
    See :func:`uplink_sinr_closed_form` for ``include_shared_ris_terms``.

    Raises
    ------
    InvalidPowerError
        If some AP violates ``sum_k eta_mk gamma_mk <= 1``.
    """
    rho, ptau, eta, A, num, ni = _dl_terms(stats, power, plan)
    off = plan.sharing & ~np.eye(plan.k, dtype=bool)
    B = stats.delta.T @ (np.sqrt(eta) * stats.c)
    ci = 2 * rho * ptau * np.sum(off * A, axis=1) + rho * ptau * np.sum(off * B**2, axis=1)
    den = ci + ni + 1.0
    if include_shared_ris_terms:
        den = den + _dl_shared_terms(stats, eta, plan, rho, ptau)
    return _safe_ratio(num, den)


def _dl_shared_terms(stats, eta, plan, rho, ptau):
    S = plan.sharing.astype(float)
    chi = stats.chi
    # Q[m, k', k] = sum over k'' in P_k', k'' != k, of chi[m, k'', k]
    Q = np.einsum("ij,mjl->mil", S, chi) - S[None] * np.diagonal(chi, axis1=1, axis2=2)[:, None, :]
    return rho * ptau * np.einsum("mj,mjk->k", eta * stats.c**2, Q)


def downlink_sinr_orthogonal(stats: EstimationStats, power: PowerConfig, plan: PilotPlan) -> np.ndarray:
    """Downlink SINR when every user has its own pilot."""
    if not plan.is_orthogonal:
        raise InvalidParameterError("orthogonal-pilot expression needs an injective pilot assignment")
    _, _, _, _, num, ni = _dl_terms(stats, power, plan)
    return _safe_ratio(num, ni + 1.0)


def net_throughput(sinr, frame: FrameConfig, direction: str) -> np.ndarray:
    """Net throughput in Mbps, ``B nu (1 - tau_p/tau_c) log2(1 + SINR)``."""
    if direction not in ("uplink", "downlink"):
        raise InvalidParameterError(f"direction must be 'uplink' or 'downlink', got {direction!r}")
    nu = frame.nu_u if direction == "uplink" else frame.nu_d
    sinr = np.asarray(sinr, dtype=float)
    return frame.bandwidth_mhz * nu * frame.prelog * np.log1p(sinr) / np.log(2.0)


@dataclass(frozen=True, eq=False)
class LinkModel:
    """Large-scale state of one network drop, independent of the phase shifts.

    Power-control coefficients left as ``None`` follow
    :func:`default_power_control` at whichever phase configuration is used.
    """

    large_scale: np.ndarray
    correlations: CorrelationSet
    plan: PilotPlan
    pilot_snr: float
    uplink_snr: float
    downlink_snr: float
    uplink_eta: np.ndarray = None
    downlink_eta: np.ndarray = None

    @property
    def m(self) -> int:
        return self.correlations.m

    @property
    def k(self) -> int:
        return self.correlations.k

    def stats(self, phi) -> EstimationStats:
        return mmse_coefficients(self.large_scale, self.correlations, as_phi(phi), self.plan, self.pilot_snr)

    def power(self, stats: EstimationStats) -> PowerConfig:
        eu, ed = default_power_control(stats)
        if self.uplink_eta is not None:
            eu = self.uplink_eta
        if self.downlink_eta is not None:
            ed = self.downlink_eta
        return PowerConfig(self.pilot_snr, self.uplink_snr, self.downlink_snr, eu, ed)

    def closed_form(self, phi, include_shared_ris_terms: bool = False):
        """``(uplink SINR, downlink SINR)`` per user."""
        stats = self.stats(phi)
        power = self.power(stats)
        up = uplink_sinr_closed_form(stats, power, self.plan, include_shared_ris_terms)
        down = downlink_sinr_closed_form(stats, power, self.plan, include_shared_ris_terms)
        return up, down

    def replace(self, **changes) -> "LinkModel":
        return replace(self, **changes)
