"""RIS element geometry, spatial-correlation matrices and trace functionals.

Two storage layouts are supported by :class:`CorrelationSet`:

* *scaled*: every AP-RIS and RIS-user covariance is a nonnegative multiple
  of one base matrix (the isotropic-scattering model used in all
  experiments). Only the base and the scale factors are stored, so a
  100 x 10 link grid with a 900-element surface stays small.
* *explicit*: arbitrary per-AP and per-link PSD matrices, kept dense.
  Used by the oracle tests on random covariances.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from functools import cached_property
from typing import Optional

import numpy as np

from .errors import InvalidGeometryError, InvalidParameterError, InvalidPhaseError, NotPSDError, ShapeError

PSD_NEG_TOL = 1e-9
EIG_FLOOR = 1e-12
UNIT_MODULUS_TOL = 1e-9
IMAG_TOL = 1e-9


@dataclass(frozen=True)
class RisGeometry:
    """Planar RIS with ``n_h`` elements per row and ``n_v`` per column."""

    n_h: int
    n_v: int
    d_h: float
    d_v: float
    wavelength: float

    def __post_init__(self):
        if int(self.n_h) != self.n_h or int(self.n_v) != self.n_v:
            raise InvalidGeometryError("element counts must be integers")
        if self.n_h < 1 or self.n_v < 1:
            raise InvalidGeometryError(f"need n_h, n_v >= 1, got {self.n_h}, {self.n_v}")
        for name in ("d_h", "d_v", "wavelength"):
            value = getattr(self, name)
            if not np.isfinite(value) or value <= 0:
                raise InvalidGeometryError(f"{name} must be positive, got {value}")

    @property
    def n(self) -> int:
        return int(self.n_h) * int(self.n_v)

    @property
    def element_area(self) -> float:
        return self.d_h * self.d_v

    def positions(self) -> np.ndarray:
        return build_ris_geometry(self.n_h, self.n_v, self.d_h, self.d_v, self.wavelength)


def build_ris_geometry(n_h, n_v, d_h, d_v, wavelength) -> np.ndarray:
    """Element positions as an ``(N, 3)`` array, row-major over the surface.

    Element ``x`` (1-indexed) sits at ``[0, mod(x-1, n_h) d_h, floor((x-1)/n_h) d_v]``.
    """
    RisGeometry(n_h, n_v, d_h, d_v, wavelength)
    idx = np.arange(int(n_h) * int(n_v))
    pos = np.zeros((idx.size, 3))
    pos[:, 1] = (idx % n_h) * d_h
    pos[:, 2] = (idx // n_h) * d_v
    return pos


def sinc_correlation_matrix(geometry: RisGeometry) -> np.ndarray:
    """Correlation matrix ``sinc(2 |u_i - u_j| / wavelength)`` of an isotropic field."""
    pos = geometry.positions()
    dist = np.linalg.norm(pos[:, None, :] - pos[None, :, :], axis=-1)
    # np.sinc is sin(pi x)/(pi x) with the removable singularity at 0 set to 1
    R = np.sinc(2.0 * dist / geometry.wavelength)
    np.fill_diagonal(R, 1.0)
    return R


def psd_factor(C: np.ndarray) -> np.ndarray:
    """Return ``F`` with ``F @ F.conj().T == C`` for a PSD matrix ``C``.

    Eigenvalues below ``1e-12 * lambda_max`` are dropped, so ``F`` has as
    many columns as the numerical rank of ``C`` (zero for the zero matrix).

    Raises
    ------
    NotPSDError
        If the smallest eigenvalue is below ``-1e-9 * lambda_max``.
    """
    C = np.asarray(C)
    if C.ndim != 2 or C.shape[0] != C.shape[1]:
        raise ShapeError(f"expected a square matrix, got shape {C.shape}")
    C = 0.5 * (C + C.conj().T)
    w, V = np.linalg.eigh(C)
    lam_max = w[-1] if w.size else 0.0
    if lam_max <= 0:
        if w.size and w[0] < -PSD_NEG_TOL * max(abs(w[0]), 1.0):
            raise NotPSDError(f"matrix has negative eigenvalue {w[0]:.3e}")
        return np.zeros((C.shape[0], 0), dtype=V.dtype)
    if w[0] < -PSD_NEG_TOL * lam_max:
        raise NotPSDError(f"min eigenvalue {w[0]:.3e} below -1e-9 * lambda_max ({lam_max:.3e})")
    keep = w > EIG_FLOOR * lam_max
    return V[:, keep] * np.sqrt(w[keep])


def phase_vector(phi) -> np.ndarray:
    """Diagonal of a phase-shift matrix, given either the diagonal or the matrix."""
    phi = np.asarray(phi)
    if phi.ndim == 2:
        off = phi - np.diag(np.diag(phi))
        if np.any(np.abs(off) > UNIT_MODULUS_TOL):
            raise InvalidPhaseError("phase-shift matrix must be diagonal")
        phi = np.diag(phi)
    if phi.ndim != 1:
        raise InvalidPhaseError(f"expected a vector or diagonal matrix, got shape {phi.shape}")
    phi = phi.astype(complex)
    if np.any(np.abs(np.abs(phi) - 1.0) > UNIT_MODULUS_TOL):
        raise InvalidPhaseError("phase-shift entries must have unit modulus")
    return phi


def _real_trace(value, what):
    if abs(value.imag) > IMAG_TOL * max(1.0, abs(value.real)):
        raise ArithmeticError(f"{what} has imaginary residue {value.imag:.3e}")
    return float(value.real)


def trace_product(phi, R_ap, R_link) -> float:
    """``tr(Phi^H R_ap Phi R_link)``, real and nonnegative for PSD inputs."""
    v = phase_vector(phi)
    R_ap = np.asarray(R_ap)
    R_link = np.asarray(R_link)
    # [Phi^H R Phi]_{ij} = conj(v_i) R_ij v_j ; tr(A B) = sum(A * B.T)
    A = np.conj(v)[:, None] * R_ap * v[None, :]
    t = _real_trace(np.sum(A * R_link.T), "trace product")
    return max(t, 0.0)


def rotated_product(phi, R_ap, R_link) -> np.ndarray:
    """The matrix ``Phi^H R_ap Phi R_link``."""
    v = phase_vector(phi)
    return (np.conj(v)[:, None] * np.asarray(R_ap) * v[None, :]) @ np.asarray(R_link)


def scaled_covariances(R, alpha_ap, alpha_link, d_h, d_v) -> "CorrelationSet":
    """AP-RIS and RIS-user covariances ``alpha * d_h * d_v * R``."""
    alpha_ap = np.asarray(alpha_ap, dtype=float)
    alpha_link = np.asarray(alpha_link, dtype=float)
    if alpha_ap.ndim != 1 or alpha_link.ndim != 2 or alpha_link.shape[0] != alpha_ap.shape[0]:
        raise ShapeError(f"alpha_ap must be (M,), alpha_link (M, K); got {alpha_ap.shape}, {alpha_link.shape}")
    for name, a in (("alpha_ap", alpha_ap), ("alpha_link", alpha_link)):
        if np.any(~np.isfinite(a)) or np.any(a < 0):
            raise InvalidParameterError(f"{name} must be finite and nonnegative")
    if d_h <= 0 or d_v <= 0:
        raise InvalidParameterError("element dimensions must be positive")
    area = d_h * d_v
    return CorrelationSet(base=np.asarray(R), ap_scale=alpha_ap * area, link_scale=alpha_link * area)


@dataclass(frozen=True, eq=False)
class CorrelationSet:
    """Base correlation ``R`` plus the per-AP ``R_m`` and per-link ``R~_mk``.

    Build with :func:`scaled_covariances` or :meth:`from_matrices`.
    """

    base: np.ndarray
    ap_scale: Optional[np.ndarray] = None
    link_scale: Optional[np.ndarray] = None
    explicit_ap: Optional[np.ndarray] = field(default=None, repr=False)
    explicit_link: Optional[np.ndarray] = field(default=None, repr=False)

    def __post_init__(self):
        base = np.asarray(self.base)
        if base.ndim != 2 or base.shape[0] != base.shape[1]:
            raise ShapeError(f"base must be square, got {base.shape}")
        n = base.shape[0]
        if self.explicit_ap is None:
            if self.ap_scale is None or self.link_scale is None:
                raise ShapeError("scaled CorrelationSet needs ap_scale and link_scale")
            ap = np.asarray(self.ap_scale, dtype=float)
            link = np.asarray(self.link_scale, dtype=float)
            if ap.ndim != 1 or link.shape != (ap.size, link.shape[-1]) or link.ndim != 2:
                raise ShapeError(f"scales must be (M,) and (M, K); got {ap.shape}, {link.shape}")
            if np.any(ap < 0) or np.any(link < 0):
                raise InvalidParameterError("covariance scales must be nonnegative")
            object.__setattr__(self, "ap_scale", ap)
            object.__setattr__(self, "link_scale", link)
        else:
            ap = np.asarray(self.explicit_ap)
            link = np.asarray(self.explicit_link)
            if ap.ndim != 3 or ap.shape[1:] != (n, n):
                raise ShapeError(f"per-AP matrices must be (M, N, N), got {ap.shape}")
            if link.ndim != 4 or link.shape[0] != ap.shape[0] or link.shape[2:] != (n, n):
                raise ShapeError(f"per-link matrices must be (M, K, N, N), got {link.shape}")
            object.__setattr__(self, "explicit_ap", ap)
            object.__setattr__(self, "explicit_link", link)
        object.__setattr__(self, "base", base)

    @classmethod
    def from_matrices(cls, per_ap, per_link, base=None) -> "CorrelationSet":
        per_ap = np.asarray(per_ap)
        per_link = np.asarray(per_link)
        if base is None:
            base = np.eye(per_ap.shape[-1])
        return cls(base=base, explicit_ap=per_ap, explicit_link=per_link)

    @property
    def is_scaled(self) -> bool:
        return self.explicit_ap is None

    @property
    def n(self) -> int:
        return self.base.shape[0]

    @property
    def m(self) -> int:
        return self.ap_scale.size if self.is_scaled else self.explicit_ap.shape[0]

    @property
    def k(self) -> int:
        return self.link_scale.shape[1] if self.is_scaled else self.explicit_link.shape[1]

    def ap_cov(self, m: int) -> np.ndarray:
        if self.is_scaled:
            return self.ap_scale[m] * self.base
        return self.explicit_ap[m]

    def link_cov(self, m: int, k: int) -> np.ndarray:
        if self.is_scaled:
            return self.link_scale[m, k] * self.base
        return self.explicit_link[m, k]

    @property
    def per_ap(self) -> np.ndarray:
        """Dense ``(M, N, N)`` stack of AP-RIS covariances."""
        if self.is_scaled:
            return self.ap_scale[:, None, None] * self.base[None]
        return self.explicit_ap

    @property
    def per_link(self) -> np.ndarray:
        """Dense ``(M, K, N, N)`` stack of RIS-user covariances."""
        if self.is_scaled:
            return self.link_scale[:, :, None, None] * self.base[None, None]
        return self.explicit_link

    def without_ris(self) -> "CorrelationSet":
        """Same shapes with every covariance set to zero (no surface deployed)."""
        if self.is_scaled:
            return CorrelationSet(self.base, np.zeros_like(self.ap_scale), np.zeros_like(self.link_scale))
        return CorrelationSet.from_matrices(
            np.zeros_like(self.explicit_ap), np.zeros_like(self.explicit_link), self.base
        )

    @cached_property
    def _base_factor(self) -> np.ndarray:
        return psd_factor(self.base)

    def ap_factors(self) -> np.ndarray:
        """``(M, N, r)`` factors with ``F_m F_m^H = R_m`` (zero-padded to a common rank)."""
        if self.is_scaled:
            F = self._base_factor
            return np.sqrt(self.ap_scale)[:, None, None] * F[None]
        return _stack_factors([psd_factor(C) for C in self.explicit_ap], self.n)

    def link_factors(self) -> np.ndarray:
        """``(M, K, N, r)`` factors of the RIS-user covariances."""
        if self.is_scaled:
            F = self._base_factor
            return np.sqrt(self.link_scale)[:, :, None, None] * F[None, None]
        m, k = self.explicit_link.shape[:2]
        flat = _stack_factors([psd_factor(C) for C in self.explicit_link.reshape(m * k, self.n, self.n)], self.n)
        return flat.reshape(m, k, self.n, flat.shape[-1])

    def trace_products(self, phi) -> np.ndarray:
        """``T[m, k] = tr(Phi^H R_m Phi R~_mk)`` for every link."""
        v = phase_vector(phi)
        if self.is_scaled:
            t0 = trace_product(v, self.base, self.base)
            return self.ap_scale[:, None] * self.link_scale * t0
        A = np.conj(v)[None, :, None] * self.explicit_ap * v[None, None, :]
        T = np.einsum("mij,mkji->mk", A, self.explicit_link)
        return np.maximum(T.real, 0.0)

    def fourth_order_traces(self, phi) -> np.ndarray:
        """``X[m, a, b] = tr(Phi^H R_m Phi R~_ma Phi^H R_m Phi R~_mb)``.

        The diagonal ``X[m, k, k]`` is the usual ``tr((Phi^H R_m Phi R~_mk)^2)``.
        Off-diagonal entries couple two users through the shared AP-RIS channel.
        """
        v = phase_vector(phi)
        if self.is_scaled:
            P = rotated_product(v, self.base, self.base)
            x0 = max(_real_trace(np.sum(P * P.T), "fourth-order trace"), 0.0)
            s = self.link_scale
            return (self.ap_scale**2)[:, None, None] * s[:, :, None] * s[:, None, :] * x0
        A = np.conj(v)[None, :, None] * self.explicit_ap * v[None, None, :]
        B = np.einsum("mij,mkjl->mkil", A, self.explicit_link)
        X = np.einsum("maij,mbji->mab", B, B)
        return np.maximum(X.real, 0.0)


def _stack_factors(factors, n):
    r = max([f.shape[1] for f in factors] + [0])
    out = np.zeros((len(factors), n, r), dtype=complex)
    for i, f in enumerate(factors):
        out[i, :, : f.shape[1]] = f
    return out
