"""Hermite-Gaussian mode sorting (HG-SPADE) aligned to x = 0."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import ConfigError, ConvergenceError, TruncationError
from .hgbasis import line_mode_probs, poisson_tail, poisson_weights
from .info import FisherMatrix
from .scene import GaussianPsf, PhotonBudget, SceneGeometry, source_offsets, source_positions

DEFAULT_Q_MAX = 50
TAIL_TOL = 1e-10
PROB_FLOOR = 1e-300
FI_RTOL = 1e-8
MAX_Q_MAX = 3200


@dataclass(frozen=True)
class ModalDistribution:
    """Outcome law of the mode sorter over q = 0..q_max.

    ``d_theta1`` and ``d_theta2`` are the analytic derivatives of ``probs``
    with respect to the scene parameters, in PSF units (per sigma).
    """

    probs: np.ndarray
    tail_mass: float
    d_theta1: np.ndarray
    d_theta2: np.ndarray
    tail_tol: float = TAIL_TOL

    @property
    def q_max(self) -> int:
        return len(self.probs) - 1

    @property
    def converged(self) -> bool:
        return self.tail_mass < self.tail_tol


def _folded_mean(a: np.ndarray) -> np.ndarray:
    """Mean over axis 0, summing mirrored rows first.

    Rows s and n-1-s of a symmetric scene then cancel exactly when they
    are exact negatives.
    """
    n = a.shape[0]
    half = n // 2
    pairs = a[:half] + a[::-1][:half]
    total = pairs.sum(axis=0)
    if n % 2:
        total = total + a[half]
    return total / n


def hg_mode_probs(
    geometry: SceneGeometry,
    psf: GaussianPsf | None = None,
    q_max: int = DEFAULT_Q_MAX,
    tail_tol: float = TAIL_TOL,
    check: bool = True,
) -> ModalDistribution:
    """Mode probabilities P(q) and their parameter derivatives."""
    if q_max < 0:
        raise ConfigError("q_max must be >= 0")
    psf = psf or GaussianPsf()
    geo = geometry.in_psf_units(psf)
    if geo.is_line:
        if geo.theta2 == 0:
            raise ConfigError("degenerate line; use n=1 point")
        lo, hi = geo.endpoints
        probs, _ = line_mode_probs(lo, hi, q_max)
        w_hi = poisson_weights(hi * hi / 4, q_max)
        w_lo = poisson_weights(lo * lo / 4, q_max)
        d1 = (w_hi - w_lo) / geo.theta2
        d2 = (w_hi + w_lo) / (2 * geo.theta2) - probs / geo.theta2
        tail = max(0.0, 1.0 - float(probs.sum()))
    else:
        xs = source_positions(geo)
        mean = xs * xs / 4
        w = poisson_weights(mean, q_max)
        lower = np.concatenate([np.zeros((len(xs), 1)), w[:, :-1]], axis=1)
        dw = (xs / 2)[:, None] * (lower - w)
        probs = w.mean(axis=0)
        d1 = _folded_mean(dw)
        d2 = _folded_mean(dw * source_offsets(geo.n)[:, None])
        tail = float(np.mean(poisson_tail(mean, q_max)))
    dist = ModalDistribution(probs, tail, d1, d2, tail_tol)
    if check and not dist.converged:
        raise TruncationError(
            f"HG tail mass {tail:.3e} >= {tail_tol:.1e} at q_max={q_max}; increase q_max",
            deficit=tail,
            q_max=q_max,
        )
    return dist


def modal_fisher(dist: ModalDistribution) -> np.ndarray:
    """Per-photon 2x2 Fisher matrix in PSF units from a modal distribution."""
    p = dist.probs
    keep = p > PROB_FLOOR
    d = np.stack([dist.d_theta1[keep], dist.d_theta2[keep]])
    return (d / p[keep]) @ d.T


def _hg_fisher_at(geometry, psf, q_max, tail_tol):
    dist = hg_mode_probs(geometry, psf, q_max, tail_tol=tail_tol)
    return modal_fisher(dist)


def hg_spade_fisher(
    geometry: SceneGeometry,
    psf: GaussianPsf | None = None,
    budget: PhotonBudget | None = None,
    q_max: int | None = None,
    tail_tol: float = TAIL_TOL,
) -> FisherMatrix:
    """HG-SPADE Fisher matrix.

    With ``q_max=None`` the basis starts at 50 modes and is doubled until
    the tail mass is below ``tail_tol`` and both diagonal entries change by
    less than 1e-8 relative.
    """
    psf = psf or GaussianPsf()
    budget = budget or PhotonBudget()
    if q_max is not None:
        m = _hg_fisher_at(geometry, psf, q_max, tail_tol)
    else:
        m, q = _converged_hg(geometry, psf, tail_tol)
    s2 = psf.sigma**2
    return FisherMatrix(m[0, 0] / s2, m[1, 1] / s2, m[0, 1] / s2, budget.n_mean)


def _converged_hg(geometry, psf, tail_tol):
    q = DEFAULT_Q_MAX
    prev = None
    history = []
    while q <= MAX_Q_MAX:
        try:
            m = _hg_fisher_at(geometry, psf, q, tail_tol)
        except TruncationError:
            q *= 2
            continue
        diag = np.array([m[0, 0], m[1, 1]])
        history.append((q, diag))
        if prev is not None:
            change = np.abs(diag - prev) <= FI_RTOL * np.maximum(np.abs(diag), 1e-300)
            if np.all(change | (diag == prev)):
                return m, q
        prev = diag
        q *= 2
    raise ConvergenceError("HG-SPADE Fisher information did not converge in q_max", history[-2:])


def hg_spade_fisher_centroid(geometry, psf=None, budget=None, q_max=None) -> float:
    """Total centroid information N * J_HG,11 (1/length^2)."""
    return hg_spade_fisher(geometry, psf, budget, q_max).total11


def hg_spade_fisher_separation(geometry, psf=None, budget=None, q_max=None) -> float:
    """Total extent information N * J_HG,22 (1/length^2)."""
    return hg_spade_fisher(geometry, psf, budget, q_max).total22


def hg_mode_terms(geometry, psf=None, q_max: int = DEFAULT_Q_MAX) -> list[dict]:
    """Per-mode centroid contributions: q, P(q), dP/dtheta1, term (per photon, PSF units)."""
    dist = hg_mode_probs(geometry, psf, q_max)
    rows = []
    for q, (p, d) in enumerate(zip(dist.probs, dist.d_theta1)):
        term = d * d / p if p > PROB_FLOOR else 0.0
        rows.append({"q": q, "P": float(p), "dP_dtheta1": float(d), "term": float(term)})
    return rows
