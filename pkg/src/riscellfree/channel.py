"""Channel sampling, aggregated channels and their analytic moments."""

from __future__ import annotations

from dataclasses import dataclass
from typing import Optional

import numpy as np

from .correlation import CorrelationSet, phase_vector, rotated_product, trace_product
from .errors import InvalidParameterError, ShapeError


def complex_normal(rng: np.random.Generator, shape) -> np.ndarray:
    """Standard circularly-symmetric complex Gaussian samples, CN(0, 1)."""
    re = rng.standard_normal(shape)
    im = rng.standard_normal(shape)
    return (re + 1j * im) * np.sqrt(0.5)


@dataclass(frozen=True, eq=False)
class ChannelRealization:
    """One draw of the direct, AP-RIS and RIS-user channels.

    Attributes
    ----------
    direct : (M, K) complex
        Direct AP-user channels ``g_mk``.
    ap_ris : (M, N) complex
        AP-RIS channels ``h_m``.
    ris_user : (M, K, N) complex
        RIS-user channels ``z_mk``.
    aggregated : (M, K) complex or None
        ``u_mk`` once :func:`aggregate` has been applied.
    """

    direct: np.ndarray
    ap_ris: np.ndarray
    ris_user: np.ndarray
    aggregated: Optional[np.ndarray] = None

    def with_phase(self, phi) -> "ChannelRealization":
        return ChannelRealization(self.direct, self.ap_ris, self.ris_user, aggregate(self, phi))


def _check_large_scale(large_scale, correlations: CorrelationSet) -> np.ndarray:
    beta = np.asarray(large_scale, dtype=float)
    if beta.shape != (correlations.m, correlations.k):
        raise ShapeError(f"large_scale has shape {beta.shape}, correlations expect {(correlations.m, correlations.k)}")
    if np.any(~np.isfinite(beta)) or np.any(beta < 0):
        raise InvalidParameterError("large-scale coefficients must be finite and nonnegative")
    return beta


def sample_channels(large_scale, correlations: CorrelationSet, rng: np.random.Generator) -> ChannelRealization:
    """Draw ``g_mk ~ CN(0, beta_mk)``, ``h_m ~ CN(0, R_m)`` and ``z_mk ~ CN(0, R~_mk)``."""
    beta = _check_large_scale(large_scale, correlations)
    m, k = beta.shape
    g = np.sqrt(beta) * complex_normal(rng, (m, k))
    Fa = correlations.ap_factors()
    Fl = correlations.link_factors()
    h = np.einsum("mnr,mr->mn", Fa, complex_normal(rng, (m, Fa.shape[-1])))
    z = np.einsum("mknr,mkr->mkn", Fl, complex_normal(rng, (m, k, Fl.shape[-1])))
    return ChannelRealization(direct=g, ap_ris=h, ris_user=z)


def aggregate(realization: ChannelRealization, phi) -> np.ndarray:
    """Aggregated channels ``u_mk = g_mk + h_m^H Phi z_mk``."""
    v = phase_vector(phi)
    h = realization.ap_ris
    if h.shape[-1] != v.size:
        raise ShapeError(f"phase vector has {v.size} entries, channels have N={h.shape[-1]}")
    cascade = np.einsum("mn,mkn->mk", np.conj(h) * v, realization.ris_user)
    return realization.direct + cascade


class AggregatedSampler:
    """Draws batches of aggregated channels ``u`` with shape ``(B, M, K)``.

    Given ``h_m``, the cascaded terms ``h_m^H Phi z_mk`` of different users
    are independent ``CN(0, v_mk)`` with ``v_mk = h_m^H Phi R~_mk Phi^H h_m``.
    Sampling that conditional law reproduces the joint distribution of
    ``u`` exactly (including the dependence through the shared ``h_m``)
    without forming the N-dimensional RIS-user channels.
    """

    def __init__(self, large_scale, correlations: CorrelationSet, phi):
        self.beta = _check_large_scale(large_scale, correlations)
        self.corr = correlations
        self.phi = phase_vector(phi)
        if self.phi.size != correlations.n:
            raise ShapeError(f"phase vector has {self.phi.size} entries, expected N={correlations.n}")
        self.m, self.k = self.beta.shape
        if correlations.is_scaled:
            F = correlations._base_factor
            # h_m = sqrt(a_m) F w gives v_mk = a_m l_mk ||F^H Phi^H F w||^2
            self._gram = F.conj().T @ (np.conj(self.phi)[:, None] * F)
            self._scale = correlations.ap_scale[:, None] * correlations.link_scale
            self.rank = F.shape[1]
        else:
            self._Fa = correlations.ap_factors()
            Fl = correlations.link_factors()
            m, k, n, r = Fl.shape
            # v_mk = ||Fl_mk^H Phi^H h_m||^2
            self._Fl = np.conj(Fl).transpose(0, 2, 1, 3).reshape(m, n, k * r)
            self._rl = r
            self.rank = max(self._Fa.shape[-1], r)

    def sample(self, rng: np.random.Generator, batch: int) -> np.ndarray:
        b, m, k = batch, self.m, self.k
        u = np.sqrt(self.beta) * complex_normal(rng, (b, m, k))
        if self.corr.is_scaled:
            r = self._gram.shape[0]
            if r == 0 or not np.any(self._scale):
                return u
            w = complex_normal(rng, (m, b, r))
            q = w @ self._gram.T
            energy = np.sum(q.real**2 + q.imag**2, axis=-1).T
            v = energy[:, :, None] * self._scale[None]
        else:
            Fa = self._Fa
            if Fa.shape[-1] == 0 or self._rl == 0:
                return u
            w = complex_normal(rng, (m, b, Fa.shape[-1]))
            h = w @ Fa.transpose(0, 2, 1)
            x = h * np.conj(self.phi)
            y = (x @ self._Fl).reshape(m, b, k, self._rl)
            v = np.sum(y.real**2 + y.imag**2, axis=-1).transpose(1, 0, 2)
        u += np.sqrt(v) * complex_normal(rng, (b, m, k))
        return u


def aggregated_moments(beta, R_ap, R_link, phi):
    """Second and fourth moments of ``u = g + h^H Phi z``.

    Returns
    -------
    second : float
        ``beta + T`` with ``T = tr(Phi^H R_ap Phi R_link)``.
    fourth : float
        ``2 (beta + T)^2 + 2 tr((Phi^H R_ap Phi R_link)^2)``.
    """
    T = trace_product(phi, R_ap, R_link)
    P = rotated_product(phi, R_ap, R_link)
    xi = max(float(np.real(np.sum(P * P.T))), 0.0)
    second = beta + T
    return second, 2.0 * second**2 + 2.0 * xi


def quadratic_form_moment(R, Mmat) -> float:
    """``E|x^H M x|^2`` for ``x ~ CN(0, R)``: ``|tr(RM)|^2 + tr(R M R M^H)``."""
    R = np.asarray(R)
    Mmat = np.asarray(Mmat)
    RM = R @ Mmat
    RMh = R @ Mmat.conj().T
    return float(abs(np.trace(RM)) ** 2 + np.real(np.sum(RM * RMh.T)))
