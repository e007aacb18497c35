"""Maximum-likelihood estimation and the two-stage adaptive receiver.

Estimators work in PSF units internally and report lengths in the
batch's units.  The optimizer is a coarse grid over the search box
followed by Newton steps on the analytic score, with a golden-section
fallback on theta1 when the local Hessian is not negative definite.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np
from scipy import optimize

from .direct import DENSITY_FLOOR, ArrivalDensity, direct_imaging_fisher
from .errors import ConfigError, ConvergenceError, ModelDataMismatch
from .qfi import SldMeasurement, sld_measurement
from .scene import GaussianPsf, SceneGeometry
from .simulate import MeasurementBatch, make_rng, map_tasks, sample_direct, sample_sld, task_seed
from .spade import PROB_FLOOR, ModalDistribution, hg_mode_probs, modal_fisher

GRID_POINTS = 81
GRAD_TOL = 1e-7  # per photon, in PSF units
FLAT_LOGLIK = 3.0  # log-likelihood margin over a zero-information point
_FD_STEP = 1e-5
_UNIT = GaussianPsf(1.0)
_LINE_MIN_EXTENT = 1e-3


@dataclass(frozen=True)
class SearchBox:
    """Parameter box in PSF units (multiples of sigma)."""

    theta1: tuple[float, float] = (-6.0, 6.0)
    theta2: tuple[float, float] = (0.0, 12.0)

    def __post_init__(self):
        for name in ("theta1", "theta2"):
            lo, hi = getattr(self, name)
            if not hi > lo:
                raise ConfigError(f"search box {name} range must be increasing, got {(lo, hi)}")
        if self.theta2[0] < 0:
            raise ConfigError("search box theta2 must be >= 0")

    def restrict_theta1(self, center: float, half_width: float) -> "SearchBox":
        lo = max(self.theta1[0], center - half_width)
        hi = min(self.theta1[1], center + half_width)
        if not hi > lo:
            raise ConfigError("theta1 window does not intersect the search box")
        return SearchBox((lo, hi), self.theta2)


@dataclass(frozen=True)
class EstimationResult:
    theta1_hat: float
    theta2_hat: float
    loglik: float
    n_photons_used: int
    converged: bool
    stderr_model: float
    flags: tuple[str, ...] = ()
    grad_norm: float = 0.0
    fisher_per_photon: np.ndarray | None = field(default=None, repr=False)


# likelihood problems (PSF units) ---------------------------------------------


class _DirectProblem:
    def __init__(self, x, n_sources):
        self.x = np.asarray(x, dtype=float)
        self.n_sources = n_sources
        self.n = len(self.x)

    def _density(self, t1, t2):
        return ArrivalDensity(SceneGeometry(self.n_sources, t1, t2), _UNIT)

    def loglik(self, t1, t2):
        lam = self._density(t1, t2).density(self.x)
        return float(np.sum(np.log(np.maximum(lam, DENSITY_FLOOR))))

    def score(self, t1, t2):
        dens = self._density(t1, t2)
        lam = np.maximum(dens.density(self.x), DENSITY_FLOOR)
        d1, d2 = dens.gradient(self.x)
        return np.array([np.sum(d1 / lam), np.sum(d2 / lam)])

    def fisher(self, t1, t2):
        return direct_imaging_fisher(SceneGeometry(self.n_sources, t1, t2)).matrix(per_photon=True)


class HgModel:
    """HG-SPADE outcome law as a function of (theta1, theta2) in PSF units."""

    # the sorter is aligned at x = 0, where the centroid information vanishes
    zero_information_theta1 = 0.0

    def __init__(self, n_sources: int | None, q_max: int = 50):
        self.n_sources = n_sources
        self.q_max = q_max

    @property
    def n_outcomes(self) -> int:
        return self.q_max + 1

    def distribution(self, t1, t2) -> ModalDistribution:
        return hg_mode_probs(SceneGeometry(self.n_sources, t1, t2), _UNIT, self.q_max, check=False)


class SldModel:
    """Outcome law of a fixed SLD-eigenbasis measurement (PSF-unit parameters)."""

    def __init__(self, measurement: SldMeasurement):
        self.measurement = measurement

    @property
    def n_outcomes(self) -> int:
        return self.measurement.dim

    def distribution(self, t1, t2) -> ModalDistribution:
        s = self.measurement.sigma
        return self.measurement.outcome_distribution(SceneGeometry(self.measurement.n_sources, t1 * s, t2 * s))


class _ModalProblem:
    def __init__(self, counts, model):
        self.counts = np.asarray(counts, dtype=float)
        self.model = model
        self.n = int(self.counts.sum())
        self.seen = self.counts > 0

    def loglik(self, t1, t2):
        p = self.model.distribution(t1, t2).probs[self.seen]
        return float(np.sum(self.counts[self.seen] * np.log(np.maximum(p, PROB_FLOOR))))

    def score(self, t1, t2):
        d = self.model.distribution(t1, t2)
        c = self.counts[self.seen]
        p = np.maximum(d.probs[self.seen], PROB_FLOOR)
        return np.array([np.sum(c * d.d_theta1[self.seen] / p), np.sum(c * d.d_theta2[self.seen] / p)])

    def fisher(self, t1, t2):
        return modal_fisher(self.model.distribution(t1, t2))


# optimizer ----------------------------------------------------------------------


def _hessian(problem, t, free):
    h = _FD_STEP
    k = len(free)
    hess = np.zeros((k, k))
    for a, i in enumerate(free):
        up, dn = t.copy(), t.copy()
        up[i] += h
        dn[i] -= h
        hess[:, a] = (problem.score(*up)[free] - problem.score(*dn)[free]) / (2 * h)
    return 0.5 * (hess + hess.T)


def _golden_theta1(problem, t, lo, hi):
    res = optimize.minimize_scalar(
        lambda a: -problem.loglik(a, t[1]), bounds=(lo[0], hi[0]), method="bounded", options={"xatol": 1e-10}
    )
    return np.array([res.x, t[1]])


def _maximize(problem, box: SearchBox, theta2_fixed, n_grid=GRID_POINTS, max_iter=60):
    """Grid search then safeguarded Newton. Returns (theta, loglik, score, hessian, flags)."""
    g1 = np.linspace(*box.theta1, n_grid)
    free = [0] if theta2_fixed is not None else [0, 1]
    g2 = np.array([theta2_fixed]) if theta2_fixed is not None else np.linspace(*box.theta2, n_grid)
    vals = np.array([[problem.loglik(a, b) for b in g2] for a in g1])
    i, j = np.unravel_index(np.argmax(vals), vals.shape)
    # Newton is confined to the grid cells around the best node
    lo = np.array([g1[max(i - 1, 0)], g2[max(j - 1, 0)]])
    hi = np.array([g1[min(i + 1, n_grid - 1)], g2[min(j + 1, len(g2) - 1)]])
    t = np.array([g1[i], g2[j]], dtype=float)
    ll = vals[i, j]
    flags = []
    used_golden = False
    for _ in range(max_iter):
        g = problem.score(*t)[free]
        hess = _hessian(problem, t, free)
        if np.any(np.linalg.eigvalsh(hess) >= 0):
            if used_golden:
                break
            t = _golden_theta1(problem, t, lo, hi)
            ll = problem.loglik(*t)
            used_golden = True
            flags.append("golden-fallback")
            continue
        step = np.zeros(2)
        step[free] = -np.linalg.solve(hess, g)
        accepted = False
        for _ in range(40):
            cand = np.clip(t + step, lo, hi)
            cll = problem.loglik(*cand)
            if cll >= ll:
                accepted = True
                break
            step *= 0.5
        if not accepted:
            break
        moved = np.max(np.abs(cand - t))
        t, ll = cand, cll
        if moved <= 1e-12 * (1 + np.max(np.abs(t))):
            break
    g = problem.score(*t)[free]
    hess = _hessian(problem, t, free)
    return t, ll, g, hess, flags


def _finish(problem, t, ll, g, hess, flags, box, theta2_fixed, sigma, extra_flags=()):
    n = problem.n
    flags = list(flags) + list(extra_flags)
    grad_norm = float(np.linalg.norm(g))
    converged = grad_norm <= GRAD_TOL * max(n, 1)
    edge = 1e-9 * (1 + abs(t[0]))
    on_edge = t[0] <= box.theta1[0] + edge or t[0] >= box.theta1[1] - edge
    if theta2_fixed is None:
        on_edge |= t[1] <= box.theta2[0] + 1e-9 or t[1] >= box.theta2[1] - 1e-9
    if on_edge:
        flags.append("boundary")
        converged = False
    fisher = problem.fisher(*t)
    if _is_flat(problem, t, ll, hess, fisher):
        flags.append("flat-curvature")
        converged = False
    if not grad_norm <= GRAD_TOL * max(n, 1):
        flags.append("gradient-not-small")
    stderr = _stderr(fisher, n, theta2_fixed is not None)
    return EstimationResult(
        float(t[0] * sigma),
        float(t[1] * sigma),
        ll,
        n,
        bool(converged),
        stderr * sigma,
        tuple(flags),
        grad_norm,
        fisher / sigma**2,
    )


def _is_flat(problem, t, ll, hess, fisher):
    """No usable curvature in theta1 at the estimate.

    Besides a non-negative Hessian or vanishing information, a receiver
    with a known zero-information centroid (the HG sorter aligned at 0)
    is flagged when the data cannot tell the estimate from that point.
    """
    if hess[0, 0] >= 0 or fisher[0, 0] <= 0:
        return True
    null = getattr(getattr(problem, "model", None), "zero_information_theta1", None)
    if null is None:
        return False
    return ll - problem.loglik(null, t[1]) < FLAT_LOGLIK


def _stderr(fisher, n, theta1_only):
    if theta1_only:
        f = fisher[0, 0]
        return 1.0 / math.sqrt(n * f) if f > 0 else math.inf
    try:
        cov = np.linalg.inv(n * fisher)
    except np.linalg.LinAlgError:
        return math.inf
    return math.sqrt(cov[0, 0]) if cov[0, 0] > 0 else math.inf


def _theta2_box(box, n_sources):
    if n_sources is None and box.theta2[0] < _LINE_MIN_EXTENT:
        return SearchBox(box.theta1, (_LINE_MIN_EXTENT, box.theta2[1]))
    return box


# public estimators -----------------------------------------------------------------


def mle_direct(
    batch: MeasurementBatch,
    psf: GaussianPsf | None = None,
    search_box: SearchBox | None = None,
    estimate_theta2: bool = False,
    theta2: float | None = None,
) -> EstimationResult:
    """Direct-imaging MLE of theta1 (and theta2 if ``estimate_theta2``).

    When theta2 is not estimated it is held at ``theta2`` (length units),
    defaulting to the scene recorded in the batch.
    """
    if batch.kind != "DirectImaging":
        raise ConfigError(f"mle_direct needs a DirectImaging batch, got {batch.kind}")
    psf = psf or GaussianPsf(batch.sigma)
    box = search_box or SearchBox()
    n_src = batch.scene.n
    x = batch.outcomes * batch.sigma / psf.sigma
    problem = _DirectProblem(x, n_src)
    if n_src == 1:
        t = np.array([float(np.mean(x)), 0.0])
        if not box.theta1[0] <= t[0] <= box.theta1[1]:
            t[0] = float(np.clip(t[0], *box.theta1))
        return _finish(problem, t, problem.loglik(*t), problem.score(*t)[:1], _hessian(problem, t, [0]),
                       ["closed-form"], box, 0.0, psf.sigma)
    box = _theta2_box(box, n_src)
    fixed = None if estimate_theta2 else (batch.scene.theta2 if theta2 is None else theta2) / psf.sigma
    t, ll, g, hess, flags = _maximize(problem, box, fixed)
    return _finish(problem, t, ll, g, hess, flags, box, fixed, psf.sigma)


def mle_modal(
    batch: MeasurementBatch,
    model,
    search_box: SearchBox | None = None,
    estimate_theta2: bool = False,
    theta2: float | None = None,
) -> EstimationResult:
    """MLE from a modal batch under ``model`` (:class:`HgModel` or :class:`SldModel`).

    Raises :class:`ModelDataMismatch` if some observed outcome has
    probability below 1e-300 everywhere on the search grid.
    """
    if not batch.is_modal:
        raise ConfigError("mle_modal needs an HgSpade or SldBasis batch")
    if batch.n_outcomes != model.n_outcomes:
        raise ConfigError(f"batch has {batch.n_outcomes} outcomes but the model has {model.n_outcomes}")
    box = _theta2_box(search_box or SearchBox(), getattr(model, "n_sources", None) or _model_sources(model))
    sigma = batch.sigma
    counts = batch.counts()
    problem = _ModalProblem(counts, model)
    fixed = None if estimate_theta2 else (batch.scene.theta2 if theta2 is None else theta2) / sigma
    _check_support(problem, box, fixed)
    extra = ["tail-outcomes-excluded"] if batch.tail_count else []
    t, ll, g, hess, flags = _maximize(problem, box, fixed)
    return _finish(problem, t, ll, g, hess, flags, box, fixed, sigma, extra)


def _model_sources(model):
    m = getattr(model, "measurement", None)
    return m.n_sources if m is not None else None


def _check_support(problem, box, theta2_fixed, n_grid=GRID_POINTS):
    g1 = np.linspace(*box.theta1, n_grid)
    g2 = [theta2_fixed] if theta2_fixed is not None else np.linspace(*box.theta2, 9)
    best = np.zeros(problem.model.n_outcomes)
    for a in g1:
        for b in g2:
            best = np.maximum(best, problem.model.distribution(a, b).probs)
    bad = np.flatnonzero(problem.seen & (best < PROB_FLOOR))
    if len(bad):
        raise ModelDataMismatch(f"model-data mismatch: outcome(s) {bad.tolist()} have zero probability in the search box")


# two-stage receiver ----------------------------------------------------------------

MIN_STAGE1 = 100


@dataclass(frozen=True)
class TwoStageConfig:
    """Photon split for the two-stage receiver.

    Stage 1 uses ``max(100, ceil(total_photons ** alpha))`` direct-imaging
    photons; the rest go to the SLD eigenbasis at the stage-1 estimate.
    """

    total_photons: int
    alpha: float = 0.5
    stage1_kind: str = "DirectImaging"
    estimate_theta2: bool = False
    min_stage1: int = MIN_STAGE1

    def __post_init__(self):
        if not 0 < self.alpha < 1:
            raise ConfigError(f"alpha must lie in (0, 1), got {self.alpha!r}")
        if self.stage1_kind != "DirectImaging":
            raise ConfigError(f"stage1_kind must be 'DirectImaging', got {self.stage1_kind!r}")
        if int(self.total_photons) != self.total_photons or self.total_photons < 1:
            raise ConfigError("total_photons must be a positive integer")
        if self.total_photons - self.stage1_photons < 1:
            raise ConfigError(
                f"total_photons={self.total_photons} leaves no photons for stage 2 "
                f"(stage 1 uses {self.stage1_photons})"
            )

    @property
    def stage1_photons(self) -> int:
        return max(self.min_stage1, math.ceil(self.total_photons**self.alpha))

    @property
    def stage2_photons(self) -> int:
        return int(self.total_photons) - self.stage1_photons


@dataclass(frozen=True)
class TwoStageResult:
    result: EstimationResult
    stage1: EstimationResult
    measurement: SldMeasurement
    trace: dict


WINDOW_STDERRS = 8.0


def two_stage_adaptive(
    config: TwoStageConfig,
    true_geometry: SceneGeometry,
    psf: GaussianPsf | None = None,
    seed: int = 0,
    q_max: int | None = None,
    search_box: SearchBox | None = None,
) -> TwoStageResult:
    """Direct-imaging pre-estimate, then SLD-eigenbasis measurement at that estimate.

    The stage-2 likelihood is maximized over theta1 within eight stage-1
    standard errors of the pre-estimate.  Raises :class:`ConvergenceError`
    (carrying the trace) when stage 1 does not converge.
    """
    psf = psf or GaussianPsf()
    box = search_box or SearchBox()
    n1, n2 = config.stage1_photons, config.stage2_photons
    b1 = sample_direct(true_geometry, psf, n1, task_seed(seed, 1))
    est1 = mle_direct(b1, psf, box, config.estimate_theta2)
    trace = {
        "seed": int(seed),
        "stage1_photons": n1,
        "stage2_photons": n2,
        "stage1_theta1": est1.theta1_hat,
        "stage1_theta2": est1.theta2_hat,
        "stage1_stderr": est1.stderr_model,
        "stage1_flags": list(est1.flags),
        "stage1_fisher11": float(est1.fisher_per_photon[0, 0]),
    }
    if not est1.converged:
        raise ConvergenceError(f"stage 1 did not converge ({', '.join(est1.flags)})", trace)
    ref = SceneGeometry(true_geometry.n, est1.theta1_hat, max(est1.theta2_hat, 0.0))
    meas = sld_measurement(ref, psf, q_max)
    b2 = sample_sld(meas, true_geometry, n2, task_seed(seed, 2))
    half = max(WINDOW_STDERRS * est1.stderr_model, 0.05 * psf.sigma) / psf.sigma
    window = box.restrict_theta1(est1.theta1_hat / psf.sigma, half)
    est2 = mle_modal(b2, SldModel(meas), window, config.estimate_theta2, theta2=est1.theta2_hat)
    trace.update(
        {
            "reference_theta": list(meas.reference_theta),
            "q_max": meas.q_max,
            "final_theta1": est2.theta1_hat,
            "final_theta2": est2.theta2_hat,
            "final_stderr": est2.stderr_model,
            "stage2_fisher11": float(est2.fisher_per_photon[0, 0]),
            "final_flags": list(est2.flags),
            "loglik": est2.loglik,
        }
    )
    return TwoStageResult(est2, est1, meas, trace)


def _two_stage_trial(config, geometry, psf, seed, q_max):
    try:
        return two_stage_adaptive(config, geometry, psf, seed, q_max)
    except ConvergenceError as exc:
        return exc


def two_stage_trials(
    config: TwoStageConfig,
    geometry: SceneGeometry,
    psf: GaussianPsf | None = None,
    seed: int = 0,
    n_trials: int = 200,
    q_max: int | None = None,
    workers: int | None = None,
) -> list:
    """Independent trials seeded from ``(seed, trial_id)``; aborted trials come back as exceptions."""
    args = [(config, geometry, psf, task_seed(seed, i), q_max) for i in range(n_trials)]
    return map_tasks(_two_stage_trial, args, workers)


# benchmarking --------------------------------------------------------------------------


def _reference_11(reference):
    if hasattr(reference, "k11"):
        return reference.k11
    if hasattr(reference, "j11"):
        return reference.j11
    return float(reference)


def efficiency_report(
    trials,
    reference,
    n_photons: int | None = None,
    truth: float | None = None,
    n_boot: int = 2000,
    seed: int = 0,
) -> dict:
    """Empirical spread of theta1 estimates against a per-photon information reference.

    ``ratio = N * Var(theta1_hat) * reference_11``, with a percentile
    bootstrap 95% interval.  ``model_ratio_median`` is the median of
    ``N * stderr_model^2 * reference_11`` over trials.
    """
    results = [t.result if isinstance(t, TwoStageResult) else t for t in trials]
    if len(results) < 30:
        raise ConfigError(f"efficiency_report needs at least 30 trials, got {len(results)}")
    ref11 = float(_reference_11(reference))
    if n_photons is None:
        n_photons = results[0].n_photons_used
    est = np.array([r.theta1_hat for r in results])
    var = float(np.var(est, ddof=1))
    ratio = n_photons * var * ref11
    rng = make_rng(seed)
    idx = rng.integers(len(est), size=(n_boot, len(est)))
    boot = np.var(est[idx], axis=1, ddof=1) * n_photons * ref11
    lo, hi = np.percentile(boot, [2.5, 97.5])
    se = np.array([r.stderr_model for r in results])
    return {
        "n_trials": len(results),
        "n_photons": int(n_photons),
        "reference_11": ref11,
        "mean": float(est.mean()),
        "bias": None if truth is None else float(est.mean() - truth),
        "variance": var,
        "ratio": float(ratio),
        "ratio_ci": [max(0.0, float(lo)), float(hi)],
        "model_ratio_median": float(np.median(n_photons * se**2 * ref11)),
        "converged_fraction": float(np.mean([r.converged for r in results])),
    }
