"""RIS phase-shift policies and the sum-NMSE objective."""

from __future__ import annotations

import itertools
from dataclasses import dataclass

import numpy as np

from .correlation import CorrelationSet, phase_vector
from .errors import InvalidPhaseError, ShapeError, SizeError
from .estimation import PilotPlan

GRID_MAX_N = 6
GRID_MAX_RES = 16
TIE_RTOL = 1e-12


@dataclass(frozen=True, eq=False)
class PhaseConfig:
    """Phase shifts ``theta_n`` in radians, each in ``[-pi, pi]``."""

    thetas: np.ndarray

    def __post_init__(self):
        t = np.asarray(self.thetas, dtype=float)
        if t.ndim != 1 or t.size == 0:
            raise ShapeError("thetas must be a non-empty 1-D array")
        if np.any(~np.isfinite(t)) or np.any(np.abs(t) > np.pi + 1e-12):
            raise InvalidPhaseError("phase shifts must lie in [-pi, pi]")
        object.__setattr__(self, "thetas", t)

    @property
    def n(self) -> int:
        return self.thetas.size

    @property
    def phi(self) -> np.ndarray:
        """Diagonal of ``Phi = diag(exp(j theta))``."""
        return np.exp(1j * self.thetas)

    def matrix(self) -> np.ndarray:
        return np.diag(self.phi)


def as_phi(phase) -> np.ndarray:
    """Phase-shift diagonal from a :class:`PhaseConfig`, a diagonal or a matrix."""
    if isinstance(phase, PhaseConfig):
        return phase.phi
    return phase_vector(phase)


def wrap_phase(theta):
    """Map angles to ``[-pi, pi]``."""
    return np.angle(np.exp(1j * np.asarray(theta, dtype=float)))


def equal_phase_design(n: int, theta0: float = np.pi / 4) -> PhaseConfig:
    """All ``n`` elements share the phase ``theta0``."""
    return PhaseConfig(np.full(int(n), float(theta0)))


def random_phase_design(n: int, rng: np.random.Generator) -> PhaseConfig:
    """I.i.d. phases uniform on ``[-pi, pi]``."""
    return PhaseConfig(rng.uniform(-np.pi, np.pi, int(n)))


@dataclass(frozen=True, eq=False)
class NmseProblem:
    """Everything the sum-NMSE objective depends on besides the phases."""

    large_scale: np.ndarray
    correlations: CorrelationSet
    plan: PilotPlan
    pilot_snr: float

    def _weights(self):
        """``W[m, k] = R_m o R~_mk^T`` so that ``T_mk = v^H W_mk v``."""
        c = self.correlations
        if c.is_scaled:
            return c.base * c.base.T
        return c.explicit_ap * np.swapaxes(c.explicit_link, -1, -2)

    def nmse_batch(self, phis: np.ndarray) -> np.ndarray:
        """Sum NMSE for a ``(C, N)`` stack of phase vectors."""
        phis = np.atleast_2d(phis)
        c = self.correlations
        W = self._weights()
        if c.is_scaled:
            t0 = np.einsum("ci,ij,cj->c", np.conj(phis), W, phis).real
            T = np.maximum(t0, 0.0)[:, None, None] * (c.ap_scale[:, None] * c.link_scale)[None]
        else:
            T = np.maximum(np.einsum("ci,mkij,cj->cmk", np.conj(phis), W, phis).real, 0.0)
        ptau = self.pilot_snr * self.plan.tau_p
        delta = np.asarray(self.large_scale)[None] + T
        denom = ptau * (delta @ self.plan.sharing.astype(float)) + 1.0
        nm = 1.0 - ptau * delta / denom
        nm = np.where(delta > 0, nm, 0.0)
        return nm.sum(axis=(1, 2))


def sum_nmse(phase: PhaseConfig, problem: NmseProblem) -> float:
    """Total NMSE over all (AP, user) pairs, skipping links with ``delta = 0``."""
    if phase.n != problem.correlations.n:
        raise ShapeError(f"phase has N={phase.n}, correlations have N={problem.correlations.n}")
    return float(problem.nmse_batch(phase.phi[None])[0])


def grid_search_phases(problem: NmseProblem, grid_resolution: int, chunk: int = 8192):
    """Exhaustive minimization of :func:`sum_nmse` over ``{-pi + 2 pi i / res}^N``.

    Ties (relative difference below 1e-12) go to the lexicographically
    smallest phase vector.

    Returns
    -------
    best : PhaseConfig
    value : float
    """
    n = problem.correlations.n
    if n > GRID_MAX_N or grid_resolution > GRID_MAX_RES:
        raise SizeError(f"grid search limited to N <= {GRID_MAX_N} and resolution <= {GRID_MAX_RES}")
    if grid_resolution < 1:
        raise SizeError("grid resolution must be positive")
    levels = -np.pi + 2 * np.pi * np.arange(grid_resolution) / grid_resolution
    best_val = np.inf
    best_idx = None
    it = itertools.product(range(grid_resolution), repeat=n)
    while True:
        block = np.array(list(itertools.islice(it, chunk)), dtype=int)
        if block.size == 0:
            break
        vals = problem.nmse_batch(np.exp(1j * levels[block]))
        i = int(np.argmin(vals))
        # strict improvement only, so earlier (smaller) vectors win ties
        if best_idx is None or vals[i] < best_val - TIE_RTOL * abs(best_val):
            tol = TIE_RTOL * abs(vals[i])
            first = int(np.flatnonzero(vals <= vals[i] + tol)[0])
            best_val, best_idx = float(vals[first]), block[first]
    return PhaseConfig(levels[best_idx]), best_val
