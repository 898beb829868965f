"""Uplink pilot training and linear MMSE estimation of aggregated channels."""

from __future__ import annotations

from dataclasses import dataclass
from typing import Optional, Sequence

import numpy as np

from .channel import ChannelRealization, aggregate, complex_normal
from .correlation import CorrelationSet
from .errors import InvalidParameterError, ShapeError


@dataclass(frozen=True, eq=False)
class PilotPlan:
    """Pilot assignment. ``assignment[k]`` is the 0-based pilot index of user ``k``."""

    tau_p: int
    assignment: np.ndarray

    def __post_init__(self):
        a = np.asarray(self.assignment, dtype=int)
        if int(self.tau_p) != self.tau_p or self.tau_p < 1:
            raise InvalidParameterError(f"tau_p must be a positive integer, got {self.tau_p}")
        if a.ndim != 1 or a.size == 0:
            raise ShapeError("assignment must be a non-empty 1-D array")
        if np.any(a < 0) or np.any(a >= self.tau_p):
            raise InvalidParameterError(f"pilot indices must lie in [0, {self.tau_p})")
        object.__setattr__(self, "tau_p", int(self.tau_p))
        object.__setattr__(self, "assignment", a)

    @classmethod
    def round_robin(cls, k_users: int, tau_p: int) -> "PilotPlan":
        """User ``k`` gets pilot ``k mod tau_p``."""
        return cls(tau_p, np.arange(k_users) % tau_p)

    @classmethod
    def orthogonal(cls, k_users: int) -> "PilotPlan":
        return cls(k_users, np.arange(k_users))

    @property
    def k(self) -> int:
        return self.assignment.size

    @property
    def sharing(self) -> np.ndarray:
        """Boolean ``(K, K)`` matrix, true where two users share a pilot."""
        a = self.assignment
        return a[:, None] == a[None, :]

    @property
    def reuse_sets(self) -> list:
        """``P_k`` for every user, each including ``k`` itself."""
        s = self.sharing
        return [np.flatnonzero(s[k]) for k in range(self.k)]

    @property
    def is_orthogonal(self) -> bool:
        return np.unique(self.assignment).size == self.k


@dataclass(frozen=True, eq=False)
class EstimationStats:
    """Per-link statistics of the MMSE estimator.

    All arrays are ``(M, K)`` except ``chi`` which is ``(M, K, K)`` with
    ``chi[m, a, b] = tr(Phi^H R_m Phi R~_ma Phi^H R_m Phi R~_mb)`` and
    ``chi[m, k, k] == xi[m, k]``.
    """

    c: np.ndarray
    gamma: np.ndarray
    delta: np.ndarray
    xi: np.ndarray
    err_var: np.ndarray
    trace: np.ndarray
    chi: np.ndarray

    @property
    def m(self) -> int:
        return self.c.shape[0]

    @property
    def k(self) -> int:
        return self.c.shape[1]


def _ptau(pilot_snr, plan):
    if not np.isfinite(pilot_snr) or pilot_snr < 0:
        raise InvalidParameterError(f"pilot SNR must be finite and nonnegative, got {pilot_snr}")
    return pilot_snr * plan.tau_p


def stats_from_traces(beta, trace, chi, plan: PilotPlan, pilot_snr: float) -> EstimationStats:
    """Estimator statistics given ``beta``, ``T = tr(Phi^H R_m Phi R~_mk)`` and the fourth-order traces."""
    beta = np.asarray(beta, dtype=float)
    trace = np.asarray(trace, dtype=float)
    if beta.shape != trace.shape or beta.shape[1] != plan.k:
        raise ShapeError(f"inconsistent shapes: beta {beta.shape}, trace {trace.shape}, plan K={plan.k}")
    ptau = _ptau(pilot_snr, plan)
    delta = beta + trace
    denom = ptau * (delta @ plan.sharing.astype(float)) + 1.0
    c = np.sqrt(ptau) * delta / denom
    gamma = np.sqrt(ptau) * delta * c
    chi = np.asarray(chi, dtype=float)
    xi = np.diagonal(chi, axis1=1, axis2=2).copy()
    return EstimationStats(
        c=c, gamma=gamma, delta=delta, xi=xi, err_var=np.maximum(delta - gamma, 0.0), trace=trace, chi=chi
    )


def mmse_coefficients(large_scale, correlations: CorrelationSet, phi, plan: PilotPlan, pilot_snr: float) -> EstimationStats:
    """Closed-form MMSE coefficients ``c_mk`` and the derived statistics.

    ``c_mk = sqrt(p tau_p) delta_mk / (p tau_p sum_{k' in P_k} delta_mk' + 1)`` and
    ``gamma_mk = sqrt(p tau_p) delta_mk c_mk``.
    """
    T = correlations.trace_products(phi)
    X = correlations.fourth_order_traces(phi)
    return stats_from_traces(large_scale, T, X, plan, pilot_snr)


def pilot_projection(
    channels,
    plan: PilotPlan,
    pilot_snr: float,
    phi=None,
    rng: Optional[np.random.Generator] = None,
    noise: bool = True,
) -> np.ndarray:
    """Projected pilot observations ``y_pmk = sqrt(p tau_p) sum_{k' in P_k} u_mk' + w_pmk``.

    ``channels`` is either a :class:`ChannelRealization` or an array of
    aggregated channels with shape ``(..., M, K)``. The noise is drawn once
    per (AP, pilot) so users sharing a pilot see the same sample.
    """
    if isinstance(channels, ChannelRealization):
        u = channels.aggregated if channels.aggregated is not None else aggregate(channels, phi)
    else:
        u = np.asarray(channels)
    if u.shape[-1] != plan.k:
        raise ShapeError(f"channels have K={u.shape[-1]}, plan has K={plan.k}")
    ptau = _ptau(pilot_snr, plan)
    y = np.sqrt(ptau) * (u @ plan.sharing.astype(u.dtype))
    if noise:
        if rng is None:
            raise InvalidParameterError("an rng is required when noise is enabled")
        w = complex_normal(rng, u.shape[:-1] + (plan.tau_p,))
        y = y + w[..., plan.assignment]
    return y


def estimate_channels(y_p, stats: EstimationStats) -> np.ndarray:
    """MMSE estimates ``u_hat_mk = c_mk y_pmk``."""
    return stats.c * np.asarray(y_p)


def nmse(stats: EstimationStats, plan: PilotPlan = None, pilot_snr: float = None) -> np.ndarray:
    """``E|e_mk|^2 / E|u_mk|^2``; entries with ``delta_mk = 0`` are NaN.

    ``plan`` and ``pilot_snr`` are accepted for signature symmetry; the
    statistics already encode them.
    """
    out = np.full(stats.delta.shape, np.nan)
    ok = stats.delta > 0
    out[ok] = stats.err_var[ok] / stats.delta[ok]
    return np.clip(out, 0.0, 1.0, where=ok, out=out)
