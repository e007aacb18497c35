"""Parameter sweeps, figure-data presets and convergence diagnostics.

Information columns are per photon in units of 1/sigma^2 (i.e. N/sigma^2
for the whole budget); lengths are in units of sigma.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Callable

import numpy as np

from .direct import direct_imaging_fisher, direct_imaging_fisher_smallsep_series
from .errors import CentroidQfiError, ConfigError, NumericalError
from .qfi import _qfi_at, qfi_matrix, qfi_two_point_analytic, rho1_hg
from .scene import GaussianPsf, SceneGeometry
from .simulate import map_tasks
from .spade import hg_mode_probs, hg_spade_fisher, modal_fisher

VARIABLES = ("theta2", "theta1", "n", "q_max", "alpha", "N")


class _Row:
    """Lazily evaluated, memoized receivers for one scene."""

    def __init__(self, geometry, psf, q_max, alpha):
        self.geometry = geometry
        self.psf = psf
        self.q_max = q_max
        self.alpha = alpha
        self._memo = {}

    def _get(self, key, fn):
        if key not in self._memo:
            self._memo[key] = fn()
        return self._memo[key]

    @property
    def direct(self):
        return self._get("direct", lambda: direct_imaging_fisher(self.geometry, self.psf).matrix(True))

    @property
    def qfi(self):
        return self._get("qfi", lambda: qfi_matrix(self.geometry, self.psf, q_max=self.q_max).matrix(True))

    @property
    def hg(self):
        return self._get("hg", lambda: hg_spade_fisher(self.geometry, self.psf, q_max=self.q_max).matrix(True))

    @property
    def s2(self):
        return self.psf.sigma**2

    @property
    def extent(self):
        return self.geometry.theta2 / self.psf.sigma


def _analytic_k11(r: _Row):
    if r.geometry.n != 2:
        raise ConfigError("k11_analytic is only defined for n=2")
    return qfi_two_point_analytic(r.geometry.theta2, r.psf)[0].k11 * r.s2


def _trace_deficit(r: _Row):
    return rho1_hg(r.geometry, r.psf, r.q_max or 50, check=False).deficit


QUANTITIES: dict[str, Callable[[_Row], float]] = {
    "j11_direct": lambda r: r.direct[0, 0] * r.s2,
    "j22_direct": lambda r: r.direct[1, 1] * r.s2,
    "j12_direct": lambda r: r.direct[0, 1] * r.s2,
    "k11": lambda r: r.qfi[0, 0] * r.s2,
    "k22": lambda r: r.qfi[1, 1] * r.s2,
    "k12": lambda r: r.qfi[0, 1] * r.s2,
    "j11_hg": lambda r: r.hg[0, 0] * r.s2,
    "j22_hg": lambda r: r.hg[1, 1] * r.s2,
    "ratio_j11_k11": lambda r: r.direct[0, 0] / r.qfi[0, 0],
    "ratio_j22_k22": lambda r: r.direct[1, 1] / r.qfi[1, 1],
    "ratio_hg_k11": lambda r: r.hg[0, 0] / r.qfi[0, 0],
    "theta2_times_k11": lambda r: r.extent * r.qfi[0, 0] * r.s2,
    "theta2_times_j11": lambda r: r.extent * r.direct[0, 0] * r.s2,
    "k11_analytic": _analytic_k11,
    "j11_series": lambda r: direct_imaging_fisher_smallsep_series(r.geometry.theta2, r.psf) * r.s2,
    "trace_deficit": _trace_deficit,
}


@dataclass(frozen=True)
class SweepSpec:
    """One swept variable over a strictly monotone grid.

    ``fixed`` holds scene-descriptor fields (``kind``, ``n``, ``theta1``,
    ``theta2``, ``sigma``, ``n_photons``) and optionally ``q_max`` and
    ``alpha``.  Lengths in ``grid`` and ``fixed`` are in units of sigma.
    """

    variable: str
    grid: tuple
    fixed: dict = field(default_factory=dict)
    outputs: tuple = ("k11", "j11_direct")
    label: str = ""

    def __post_init__(self):
        if self.variable not in VARIABLES:
            raise ConfigError(f"sweep variable must be one of {VARIABLES}, got {self.variable!r}")
        g = np.asarray(self.grid, dtype=float)
        if g.size == 0:
            raise ConfigError("sweep grid is empty")
        d = np.diff(g)
        if g.size > 1 and not (np.all(d > 0) or np.all(d < 0)):
            raise ConfigError("sweep grid must be strictly monotone")
        unknown = [q for q in self.outputs if q not in QUANTITIES]
        if unknown:
            raise ConfigError(f"unknown quantity name(s): {', '.join(unknown)}; known: {', '.join(QUANTITIES)}")
        object.__setattr__(self, "grid", tuple(float(v) for v in g))
        object.__setattr__(self, "outputs", tuple(self.outputs))


def _scene_for(spec: SweepSpec, value: float):
    f = dict(spec.fixed)
    f[spec.variable] = value
    sigma = float(f.get("sigma", 1.0))
    psf = GaussianPsf(sigma)
    kind = f.get("kind", "points")
    t1 = float(f.get("theta1", 0.0)) * sigma
    t2 = float(f.get("theta2", 0.0)) * sigma
    if kind == "line":
        geo = SceneGeometry.line(t1, t2)
    else:
        n = f.get("n")
        if n is None:
            raise ConfigError("sweep needs 'n' for kind 'points'")
        if float(n) != int(float(n)):
            raise ConfigError(f"n must be an integer, got {n!r}")
        geo = SceneGeometry.points(int(float(n)), t1, t2)
    q_max = f.get("q_max")
    return geo, psf, None if q_max is None else int(q_max), f.get("alpha")


def _evaluate_row(spec: SweepSpec, value: float) -> dict:
    row = {spec.variable: value}
    try:
        geo, psf, q_max, alpha = _scene_for(spec, value)
        r = _Row(geo, psf, q_max, alpha)
        for name in spec.outputs:
            row[name] = float(QUANTITIES[name](r))
        row["error"] = ""
    except CentroidQfiError as exc:
        for name in spec.outputs:
            row.setdefault(name, math.nan)
        row["error"] = f"{type(exc).__name__}: {exc}"
    return row


def run_sweep(spec: SweepSpec, workers: int | None = None) -> list[dict]:
    """One row per grid point; a failing row records its error and the sweep continues."""
    return map_tasks(_evaluate_row, [(spec, v) for v in spec.grid], workers)


# figure presets ---------------------------------------------------------------


def _linspace(a, b, k):
    return tuple(np.round(np.linspace(a, b, k), 12))


_FIG_N = (2, 3, 4, 6)


def _series(fixed_list, variable, grid, outputs):
    out = []
    for label, fixed in fixed_list:
        out.append(SweepSpec(variable, grid, fixed, outputs, label))
    return out


def _points_and_line(theta1=0.0, line=True):
    items = [(f"n={n}", {"kind": "points", "n": n, "theta1": theta1}) for n in _FIG_N]
    if line:
        items.append(("line", {"kind": "line", "theta1": theta1}))
    return items


def preset(name: str) -> list[SweepSpec]:
    """Sweep specs that regenerate the data behind each figure."""
    if name == "fig1":
        items = [("n=2", {"kind": "points", "n": 2}), ("line", {"kind": "line"})]
        return _series(items, "theta2", _linspace(0.05, 8.0, 160), ("k22", "j22_direct", "j22_hg"))
    if name == "fig2a":
        return _series(_points_and_line(), "theta2", _linspace(0.05, 8.0, 160), ("k11", "j11_direct"))
    if name == "fig2b":
        items = [("line", {"kind": "line"})]
        return _series(items, "theta2", _linspace(0.5, 40.0, 80), ("theta2_times_k11", "theta2_times_j11"))
    if name == "fig3":
        # the n=6 minimum sits near theta2 = 14 sigma, so the grid runs to 30
        return _series(_points_and_line(), "theta2", _linspace(0.1, 30.0, 300), ("ratio_j11_k11",))
    if name in ("fig4a", "fig4b"):
        base = {"kind": "points", "n": 2} if name == "fig4a" else {"kind": "line"}
        items = [(f"theta1={t}", dict(base, theta1=t)) for t in (0.5, 1.0, 2.0)]
        specs = _series(items, "theta2", _linspace(0.05, 8.0, 160), ("j11_hg",))
        specs.append(SweepSpec("theta2", _linspace(0.05, 8.0, 160), base, ("k11", "j11_direct"), "reference"))
        return specs
    raise ConfigError(f"unknown preset {name!r}; choose from fig1, fig2a, fig2b, fig3, fig4a, fig4b")


PRESETS = ("fig1", "fig2a", "fig2b", "fig3", "fig4a", "fig4b")


def run_preset(name: str, workers: int | None = None) -> list[dict]:
    rows = []
    for spec in preset(name):
        for row in run_sweep(spec, workers):
            rows.append({"series": spec.label, **row})
    return rows


# convergence diagnostics --------------------------------------------------------


DIAGNOSE_Q = (25, 50, 100, 200)


def diagnose_convergence(
    geometry: SceneGeometry,
    psf: GaussianPsf | None = None,
    q_values=DIAGNOSE_Q,
    trunc_tol: float = 1e-8,
) -> dict:
    """k11, j11_hg and rho1 trace deficits at several truncations.

    A truncation is marked insufficient when its trace deficit reaches
    ``trunc_tol``; the report recommends the smallest sufficient q_max.
    """
    psf = psf or GaussianPsf()
    rows = []
    for q in q_values:
        row = {"q_max": int(q)}
        rho = rho1_hg(geometry, psf, q, check=False)
        row["trace_deficit"] = rho.deficit
        row["sufficient"] = bool(rho.deficit < trunc_tol)
        try:
            k = _qfi_at(geometry, psf, q, math.inf)
            row["k11"] = float(k[0, 0] * psf.sigma**2)
        except NumericalError as exc:
            row["k11"] = math.nan
            row["error"] = str(exc)
        dist = hg_mode_probs(geometry, psf, q, check=False)
        row["j11_hg"] = float(modal_fisher(dist)[0, 0])
        row["hg_tail_mass"] = dist.tail_mass
        rows.append(row)
    for prev, cur in zip(rows, rows[1:]):
        if prev["k11"] and math.isfinite(prev["k11"]):
            cur["k11_rel_change"] = abs(cur["k11"] - prev["k11"]) / abs(cur["k11"]) if cur["k11"] else 0.0
    direct = direct_imaging_fisher(geometry, psf)
    ok = [r["q_max"] for r in rows if r["sufficient"]]
    if ok:
        advice = f"q_max={ok[0]} meets the truncation tolerance"
    else:
        advice = f"all truncations insufficient; increase q_max above {max(q_values)}"
    return {
        "scene": geometry.label(),
        "theta1": geometry.theta1,
        "theta2": geometry.theta2,
        "sigma": psf.sigma,
        "rows": rows,
        "j11_direct": direct.j11 * psf.sigma**2,
        "direct_quadrature_error": direct.error_estimate * psf.sigma**2,
        "recommendation": advice,
        "recommended_q_max": ok[0] if ok else None,
    }
