"""Randomized small link models shared by the statistical tests."""

import numpy as np

from riscellfree.correlation import CorrelationSet, RisGeometry, scaled_covariances, sinc_correlation_matrix
from riscellfree.estimation import PilotPlan
from riscellfree.throughput import LinkModel


def random_psd(rng, n, trace=1.0, rank=None):
    r = n if rank is None else rank
    A = rng.standard_normal((n, r)) + 1j * rng.standard_normal((n, r))
    C = A @ A.conj().T
    return C * (trace / np.trace(C).real)


def mixed_plan(rng, k):
    """Pilot plan with at least one shared pilot and, when K > 2, one private pilot."""
    tau_p = int(rng.integers(1, k)) if k > 2 else 1
    assignment = np.arange(k) % tau_p
    rng.shuffle(assignment)
    return PilotPlan(tau_p, assignment)


def random_link_model(rng, max_m=8, max_k=4, max_n=16, structured=None):
    """Normalized model where direct and cascaded paths are comparable.

    ``structured`` picks scaled sinc covariances (True) or unstructured
    random PSD matrices (False); None chooses at random.
    """
    m = int(rng.integers(2, max_m + 1))
    k = int(rng.integers(2, max_k + 1))
    if structured is None:
        structured = bool(rng.integers(0, 2))
    beta = rng.uniform(0.2, 1.0, (m, k))
    ris_strength = 10 ** rng.uniform(-1, 1)
    if structured:
        n_h = int(rng.integers(2, 5))
        n_v = int(rng.integers(1, max_n // n_h + 1))
        lam = 1.0
        d = rng.uniform(0.2, 0.5) * lam
        R = sinc_correlation_matrix(RisGeometry(n_h, n_v, d, d, lam))
        n = n_h * n_v
        a = rng.uniform(0.5, 1.5, m)
        l_ = rng.uniform(0.5, 1.5, (m, k))
        # tr(R^2) is the equal-phase trace product at unit scales
        s = np.sqrt(ris_strength / np.sum(R * R))
        corr = scaled_covariances(R, a * s, l_ * s, 1.0, 1.0)
    else:
        n = int(rng.integers(4, max_n + 1))
        ap = np.stack([random_psd(rng, n, np.sqrt(ris_strength * n) * rng.uniform(0.5, 1.5)) for _ in range(m)])
        link = np.stack(
            [[random_psd(rng, n, np.sqrt(ris_strength * n) * rng.uniform(0.5, 1.5)) / n for _ in range(k)]
             for _ in range(m)]
        )
        corr = CorrelationSet.from_matrices(ap, link)
    plan = mixed_plan(rng, k)
    p, rho_u, rho_d = 10 ** rng.uniform(0, 1, 3)
    model = LinkModel(beta, corr, plan, p, rho_u, rho_d)
    thetas = rng.uniform(-np.pi, np.pi, n) if rng.integers(0, 2) else np.full(n, rng.uniform(-np.pi, np.pi))
    return model, np.exp(1j * thetas)
