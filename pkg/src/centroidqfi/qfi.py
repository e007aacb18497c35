"""Quantum Fisher information and symmetric logarithmic derivatives.

Operators live in the truncated HG Fock basis q = 0..q_max.  Derivative
operators and SLDs carry physical units (1/length), so the QFI built from
them is already in 1/length^2.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field

import numpy as np
from scipy import linalg

from .errors import ConfigError, ConvergenceError, NumericalError, TruncationError
from .hgbasis import hg_coefficient_derivatives, hg_coefficients, line_rho, poisson_tail
from .info import QfiMatrix
from .scene import (
    GaussianPsf,
    PhotonBudget,
    SceneGeometry,
    delta_k_squared,
    source_offsets,
    source_positions,
)
from .spade import PROB_FLOOR, ModalDistribution, _folded_mean

TRUNC_TOL = 1e-8
EIG_FLOOR = 1e-12
NEG_EIG_TOL = 1e-12
SLD_RESID_TOL = 1e-8
QFI_RTOL = 1e-8
DEFAULT_Q_MAX = 50
MAX_Q_MAX = 1600


@dataclass(frozen=True)
class HgOperator:
    """Real symmetric operator in the truncated HG basis."""

    entries: np.ndarray
    deficit: float = 0.0

    def __post_init__(self):
        a = np.asarray(self.entries, dtype=float)
        if a.ndim != 2 or a.shape[0] != a.shape[1]:
            raise ValueError("HgOperator needs a square matrix")
        object.__setattr__(self, "entries", a)

    @property
    def dim(self) -> int:
        return self.entries.shape[0]

    @property
    def q_max(self) -> int:
        return self.dim - 1

    def trace(self) -> float:
        return float(np.trace(self.entries))

    def asymmetry(self) -> float:
        return float(np.max(np.abs(self.entries - self.entries.T), initial=0.0))


# density operator --------------------------------------------------------


def _tail_deficit(geo: SceneGeometry, q_max: int) -> float:
    if geo.is_line:
        return None
    xs = source_positions(geo)
    return float(np.mean(poisson_tail(xs * xs / 4, q_max)))


def rho1_hg(
    geometry: SceneGeometry,
    psf: GaussianPsf | None = None,
    q_max: int = DEFAULT_Q_MAX,
    trunc_tol: float = TRUNC_TOL,
    check: bool = True,
) -> HgOperator:
    """Single-photon density operator in the HG basis.

    ``deficit`` is the probability mass beyond ``q_max``.  Raises
    :class:`TruncationError` when it reaches ``trunc_tol`` (unless
    ``check`` is false).
    """
    if q_max < 0:
        raise ConfigError("q_max must be >= 0")
    psf = psf or GaussianPsf()
    geo = geometry.in_psf_units(psf)
    if geo.is_line:
        if geo.theta2 == 0:
            raise ConfigError("degenerate line; use n=1 point")
        lo, hi = geo.endpoints
        rho, _ = line_rho(lo, hi, q_max)
        rho = 0.5 * (rho + rho.T)
        deficit = max(0.0, 1.0 - float(np.trace(rho)))
    else:
        c = hg_coefficients(source_positions(geo), q_max)
        rho = _folded_mean(c[:, :, None] * c[:, None, :])
        deficit = _tail_deficit(geo, q_max)
    if check and deficit >= trunc_tol:
        raise TruncationError(
            f"rho1 trace deficit {deficit:.3e} >= {trunc_tol:.1e} at q_max={q_max}; increase q_max",
            deficit=deficit,
            q_max=q_max,
        )
    return HgOperator(rho, deficit)


def drho1_hg(
    geometry: SceneGeometry,
    psf: GaussianPsf | None = None,
    q_max: int = DEFAULT_Q_MAX,
    which: str = "theta1",
    rho: HgOperator | None = None,
) -> HgOperator:
    """Analytic derivative of rho1 with respect to ``theta1`` or ``theta2`` (1/length)."""
    if which not in ("theta1", "theta2"):
        raise ConfigError(f"which must be 'theta1' or 'theta2', got {which!r}")
    psf = psf or GaussianPsf()
    geo = geometry.in_psf_units(psf)
    if geo.is_line:
        if geo.theta2 == 0:
            raise ConfigError("degenerate line; use n=1 point")
        lo, hi = geo.endpoints
        c_lo = hg_coefficients(lo, q_max)
        c_hi = hg_coefficients(hi, q_max)
        p_hi = np.outer(c_hi, c_hi)
        p_lo = np.outer(c_lo, c_lo)
        if which == "theta1":
            d = (p_hi - p_lo) / geo.theta2
        else:
            if rho is None:
                rho = rho1_hg(geometry, psf, q_max, check=False)
            d = (p_hi + p_lo) / (2 * geo.theta2) - rho.entries / geo.theta2
    else:
        xs = source_positions(geo)
        c = hg_coefficients(xs, q_max)
        dc = hg_coefficient_derivatives(xs, q_max)
        w = np.ones_like(xs) if which == "theta1" else source_offsets(geo.n)
        half = dc[:, :, None] * c[:, None, :]
        d = _folded_mean(w[:, None, None] * (half + np.swapaxes(half, 1, 2)))
    return HgOperator(d / psf.sigma)


# SLD ---------------------------------------------------------------------


@dataclass(frozen=True)
class _Spectrum:
    values: np.ndarray
    vectors: np.ndarray
    mask: np.ndarray
    denom: np.ndarray


def _spectrum(rho: HgOperator, eig_floor: float) -> _Spectrum:
    vals, vecs = linalg.eigh(rho.entries)
    if vals[0] < -NEG_EIG_TOL:
        raise NumericalError(f"rho1 has eigenvalue {vals[0]:.3e} below -{NEG_EIG_TOL:g}; truncation is broken")
    vals = np.clip(vals, 0.0, None)
    denom = vals[:, None] + vals[None, :]
    mask = denom > eig_floor * vals.max()
    return _Spectrum(vals, vecs, mask, denom)


def _sld(spec: _Spectrum, rho: HgOperator, drho: HgOperator, resid_tol: float) -> HgOperator:
    e = spec.vectors
    d = e.T @ drho.entries @ e
    lp = np.where(spec.mask, 2.0 * d / np.where(spec.mask, spec.denom, 1.0), 0.0)
    sld = e @ lp @ e.T
    sld = 0.5 * (sld + sld.T)
    resid = drho.entries - 0.5 * (rho.entries @ sld + sld @ rho.entries)
    rp = np.where(spec.mask, e.T @ resid @ e, 0.0)
    r = float(np.linalg.norm(rp))
    if r > resid_tol * max(1.0, float(np.linalg.norm(drho.entries))):
        raise NumericalError(f"SLD relation residual {r:.3e} exceeds {resid_tol:g}")
    return HgOperator(sld)


def sld_from_rho(
    rho: HgOperator,
    drho: HgOperator,
    eig_floor: float = EIG_FLOOR,
    resid_tol: float = SLD_RESID_TOL,
) -> HgOperator:
    """Solve d rho = (rho L + L rho)/2 in the eigenbasis of ``rho``.

    Eigenvalue pairs with ``D_j + D_k <= eig_floor * D_max`` are dropped.
    """
    return _sld(_spectrum(rho, eig_floor), rho, drho, resid_tol)


def _qfi_at(geometry, psf, q_max, trunc_tol):
    rho = rho1_hg(geometry, psf, q_max, trunc_tol)
    spec = _spectrum(rho, EIG_FLOOR)
    l1 = _sld(spec, rho, drho1_hg(geometry, psf, q_max, "theta1", rho), SLD_RESID_TOL)
    l2 = _sld(spec, rho, drho1_hg(geometry, psf, q_max, "theta2", rho), SLD_RESID_TOL)
    r = rho.entries

    def sym(a, b):
        return 0.5 * float(np.trace(r @ (a.entries @ b.entries + b.entries @ a.entries)))

    return np.array([[sym(l1, l1), sym(l1, l2)], [sym(l1, l2), sym(l2, l2)]])


def qfi_matrix(
    geometry: SceneGeometry,
    psf: GaussianPsf | None = None,
    budget: PhotonBudget | None = None,
    q_max: int | None = None,
    trunc_tol: float = TRUNC_TOL,
) -> QfiMatrix:
    """Numerical QFI matrix, ``k_mu,nu = tr(rho {L_mu, L_nu}) / 2`` per photon.

    With ``q_max=None`` the basis is doubled from 50 until both diagonal
    entries change by less than 1e-8 relative.
    """
    psf = psf or GaussianPsf()
    budget = budget or PhotonBudget()
    if q_max is not None:
        k = _qfi_at(geometry, psf, q_max, trunc_tol)
        used = q_max
    else:
        k, used = _converged_qfi(geometry, psf, trunc_tol)
    single = geometry.n == 1
    return QfiMatrix(
        float(k[0, 0]),
        0.0 if single else float(k[1, 1]),
        0.0 if single else float(k[0, 1]),
        budget.n_mean,
        k22_defined=not single,
        q_max=used,
    )


def _converged_qfi(geometry, psf, trunc_tol):
    q = DEFAULT_Q_MAX
    prev = None
    history = []
    while q <= MAX_Q_MAX:
        try:
            k = _qfi_at(geometry, psf, q, trunc_tol)
        except TruncationError:
            q *= 2
            continue
        diag = np.diag(k).copy()
        history.append((q, diag))
        if prev is not None:
            close = np.abs(diag - prev) <= QFI_RTOL * np.abs(diag)
            if np.all(close | (diag == prev)):
                return k, q
        prev = diag
        q *= 2
    raise ConvergenceError("QFI did not converge in q_max", history[-2:])


# closed forms ------------------------------------------------------------


def qfi_one_point(psf: GaussianPsf | None = None, budget: PhotonBudget | None = None) -> QfiMatrix:
    """Single point source: k11 = 4 dk^2 = 1/sigma^2 per photon; k22 undefined."""
    psf = psf or GaussianPsf()
    budget = budget or PhotonBudget()
    return QfiMatrix(4.0 * delta_k_squared(psf), 0.0, 0.0, budget.n_mean, k22_defined=False)


@dataclass(frozen=True)
class SldEntries:
    """Two-point SLD entries in the orthonormalized 4-vector basis.

    Indices are 1-based as (row, column); ``l1`` and ``l2`` list the upper
    triangular non-zero entries of the centroid and extent SLDs.
    """

    available: bool
    delta: float
    gamma: float
    b_squared: float
    c3: float
    c4: float
    eigenvalues: tuple[float, float]
    l1: dict = field(default_factory=dict)
    l2: dict = field(default_factory=dict)

    def k11_from_entries(self) -> float:
        """tr(rho L1^2) with rho = diag(D1, D2, 0, 0)."""
        d1, d2 = self.eigenvalues
        l1 = self.l1
        return d1 * (l1[(1, 2)] ** 2 + l1[(1, 4)] ** 2) + d2 * (l1[(1, 2)] ** 2 + l1[(2, 3)] ** 2)

    def k22_from_entries(self) -> float:
        d1, d2 = self.eigenvalues
        l2 = self.l2
        return d1 * (l2[(1, 1)] ** 2 + l2[(1, 3)] ** 2) + d2 * (l2[(2, 2)] ** 2 + l2[(2, 4)] ** 2)


def qfi_two_point_analytic(
    theta2: float,
    psf: GaussianPsf | None = None,
    budget: PhotonBudget | None = None,
) -> tuple[QfiMatrix, SldEntries]:
    """Closed-form two-point QFI and SLD entries for the Gaussian PSF."""
    psf = psf or GaussianPsf()
    budget = budget or PhotonBudget()
    if theta2 < 0:
        raise ConfigError("theta2 must be >= 0")
    s2 = psf.sigma**2
    dk2 = delta_k_squared(psf)
    delta = math.exp(-theta2 * theta2 / (8 * s2))
    gamma = -theta2 / (4 * s2) * delta
    b2 = delta * (1 / (4 * s2) - theta2 * theta2 / (16 * s2 * s2))
    k11 = 4 * (dk2 - gamma * gamma)
    eig = ((1 - delta) / 2, (1 + delta) / 2)
    q = QfiMatrix(k11, dk2, 0.0, budget.n_mean)
    if delta == 1.0:
        return q, SldEntries(False, delta, gamma, b2, math.nan, math.nan, eig)
    c3 = math.sqrt(max(dk2 + b2 - gamma * gamma / (1 - delta), 0.0))
    c4 = math.sqrt(max(dk2 - b2 - gamma * gamma / (1 + delta), 0.0))
    l1 = {
        (1, 2): 2 * gamma * delta / math.sqrt(1 - delta * delta),
        (1, 4): 2 * c4 / math.sqrt(1 - delta),
        (2, 3): 2 * c3 / math.sqrt(1 + delta),
    }
    l2 = {
        (1, 1): -gamma / (1 - delta),
        (1, 3): -c3 / math.sqrt(1 - delta),
        (2, 2): gamma / (1 + delta),
        (2, 4): -c4 / math.sqrt(1 + delta),
    }
    return q, SldEntries(True, delta, gamma, b2, c3, c4, eig, l1, l2)


# SLD eigenbasis measurement --------------------------------------------------


def _sign_fix(vecs: np.ndarray, tol: float = 1e-12) -> np.ndarray:
    """Flip each column so that its first non-negligible coordinate is positive."""
    out = vecs.copy()
    for j in range(out.shape[1]):
        nz = np.flatnonzero(np.abs(out[:, j]) > tol)
        if len(nz) and out[nz[0], j] < 0:
            out[:, j] = -out[:, j]
    return out


@dataclass(frozen=True)
class SldMeasurement:
    """Projective measurement onto the eigenvectors of the centroid SLD.

    ``basis`` holds the eigenvectors as columns (HG coordinates), ordered
    by descending eigenvalue.  ``reference_theta`` is in length units.
    """

    reference_theta: tuple[float, float]
    eigenvalues: np.ndarray
    basis: np.ndarray
    n_sources: int | None
    sigma: float = 1.0

    @property
    def dim(self) -> int:
        return self.basis.shape[0]

    @property
    def q_max(self) -> int:
        return self.dim - 1

    @property
    def psf(self) -> GaussianPsf:
        return GaussianPsf(self.sigma)

    def geometry(self, theta1: float, theta2: float) -> SceneGeometry:
        return SceneGeometry(self.n_sources, theta1, theta2)

    def outcome_distribution(self, geometry: SceneGeometry) -> ModalDistribution:
        """Outcome probabilities |<v_i|.|>|^2 under ``geometry`` plus derivatives.

        Derivatives are in PSF units (per sigma), like the HG-SPADE law.
        The residual outcome carries the truncation deficit.
        """
        geo = geometry.in_psf_units(self.psf)
        v = self.basis
        if geo.is_line:
            rho = rho1_hg(geometry, self.psf, self.q_max, check=False)
            d1 = drho1_hg(geometry, self.psf, self.q_max, "theta1", rho).entries * self.sigma
            d2 = drho1_hg(geometry, self.psf, self.q_max, "theta2", rho).entries * self.sigma
            probs = np.clip(np.einsum("qi,qk,ki->i", v, rho.entries, v), 0.0, None)
            dp1 = np.einsum("qi,qk,ki->i", v, d1, v)
            dp2 = np.einsum("qi,qk,ki->i", v, d2, v)
            tail = rho.deficit
        else:
            xs = source_positions(geo)
            a = hg_coefficients(xs, self.q_max) @ v
            da = hg_coefficient_derivatives(xs, self.q_max) @ v
            probs = np.mean(a * a, axis=0)
            g = 2 * a * da
            dp1 = _folded_mean(g)
            dp2 = _folded_mean(g * source_offsets(geo.n)[:, None])
            tail = _tail_deficit(geo, self.q_max)
        return ModalDistribution(probs, tail, dp1, dp2)

    def outcome_probs(self, geometry: SceneGeometry) -> np.ndarray:
        return self.outcome_distribution(geometry).probs

    def fisher(self, geometry: SceneGeometry) -> np.ndarray:
        """Per-photon classical Fisher matrix (1/length^2) of this measurement."""
        dist = self.outcome_distribution(geometry)
        keep = dist.probs > PROB_FLOOR
        d = np.stack([dist.d_theta1[keep], dist.d_theta2[keep]])
        return (d / dist.probs[keep]) @ d.T / self.sigma**2

    def to_dict(self) -> dict:
        return {
            "reference_theta": list(self.reference_theta),
            "dim": self.dim,
            "eigenvalues": self.eigenvalues.tolist(),
            "basis_vectors": self.basis.T.tolist(),
            "n_sources": self.n_sources,
            "sigma": self.sigma,
        }

    def to_json(self) -> str:
        return json.dumps(self.to_dict())

    @classmethod
    def from_dict(cls, d: dict) -> "SldMeasurement":
        basis = np.array(d["basis_vectors"], dtype=float).T
        if basis.shape != (d["dim"], d["dim"]):
            raise ConfigError("basis_vectors shape does not match dim")
        return cls(
            tuple(d["reference_theta"]),
            np.array(d["eigenvalues"], dtype=float),
            basis,
            d.get("n_sources"),
            float(d.get("sigma", 1.0)),
        )

    @classmethod
    def from_json(cls, text: str) -> "SldMeasurement":
        return cls.from_dict(json.loads(text))


def _reference_q_max(geometry, psf, trunc_tol):
    q = DEFAULT_Q_MAX
    while q <= MAX_Q_MAX:
        rho = rho1_hg(geometry, psf, q, trunc_tol, check=False)
        if rho.deficit < trunc_tol:
            return q, rho
        q *= 2
    raise ConvergenceError("no q_max up to %d meets the truncation tolerance" % MAX_Q_MAX)


def sld_measurement(
    geometry_hat: SceneGeometry,
    psf: GaussianPsf | None = None,
    q_max: int | None = None,
    trunc_tol: float = TRUNC_TOL,
) -> SldMeasurement:
    """Eigenbasis of the centroid SLD evaluated at the reference scene."""
    psf = psf or GaussianPsf()
    if q_max is None:
        q_max, rho = _reference_q_max(geometry_hat, psf, trunc_tol)
    else:
        rho = rho1_hg(geometry_hat, psf, q_max, trunc_tol)
    l1 = sld_from_rho(rho, drho1_hg(geometry_hat, psf, q_max, "theta1", rho))
    vals, vecs = linalg.eigh(l1.entries)
    order = np.argsort(-vals, kind="stable")
    vals, vecs = vals[order], _sign_fix(vecs[:, order])
    return SldMeasurement(
        (geometry_hat.theta1, geometry_hat.theta2), vals, vecs, geometry_hat.n, psf.sigma
    )
