"""Ideal direct imaging: arrival density and its Fisher information."""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
from scipy import special

from .errors import ConfigError
from .info import FisherMatrix
from .quadrature import ATOL, RTOL, integrate_vector
from .scene import GaussianPsf, PhotonBudget, SceneGeometry, source_offsets, source_positions

WINDOW_HALO = 12.0  # in units of sigma
DENSITY_FLOOR = 1e-300
_MAX_BREAKPOINTS = 256


@dataclass(frozen=True)
class ArrivalDensity:
    """Photon arrival density Lambda(x) on the image plane and its gradients."""

    geometry: SceneGeometry
    psf: GaussianPsf

    def __post_init__(self):
        if self.geometry.is_line and self.geometry.theta2 == 0:
            raise ConfigError("degenerate line; use n=1 point")

    def _g(self, u):
        s = self.psf.sigma
        return np.exp(-u * u / (2 * s * s)) / (math.sqrt(2 * math.pi) * s)

    def density(self, x):
        x = np.asarray(x, dtype=float)
        geo = self.geometry
        if geo.is_line:
            s = self.psf.sigma
            half = geo.theta2 / 2
            # reflect onto the left half: both ndtr arguments stay small there
            u = -np.abs(x - geo.theta1) / s
            return (special.ndtr(u + half / s) - special.ndtr(u - half / s)) / geo.theta2
        xs = source_positions(geo)
        u = x[..., None] - xs
        return self._g(u).mean(axis=-1)

    __call__ = density

    def gradient(self, x):
        """(d Lambda / d theta1, d Lambda / d theta2) at ``x``."""
        x = np.asarray(x, dtype=float)
        geo = self.geometry
        if geo.is_line:
            lo, hi = geo.endpoints
            g_lo = self._g(x - lo)
            g_hi = self._g(x - hi)
            d1 = (g_hi - g_lo) / geo.theta2
            d2 = (g_lo + g_hi) / (2 * geo.theta2) - self.density(x) / geo.theta2
            return d1, d2
        s2 = self.psf.sigma**2
        xs = source_positions(geo)
        u = x[..., None] - xs
        core = u / s2 * self._g(u)
        d1 = core.mean(axis=-1)
        d2 = (core * source_offsets(geo.n)).mean(axis=-1)
        return d1, d2

    def d_theta1(self, x):
        return self.gradient(x)[0]

    def d_theta2(self, x):
        return self.gradient(x)[1]

    def window(self) -> tuple[float, float]:
        halo = WINDOW_HALO * self.psf.sigma
        lo, hi = self._support()
        return lo - halo, hi + halo

    def _support(self):
        if self.geometry.is_line:
            return self.geometry.endpoints
        xs = source_positions(self.geometry)
        return float(xs[0]), float(xs[-1])

    def breakpoints(self) -> list[float]:
        geo = self.geometry
        if geo.is_line:
            lo, hi = geo.endpoints
            return [lo, geo.theta1, hi]
        xs = source_positions(geo)
        if len(xs) > _MAX_BREAKPOINTS:
            xs = np.linspace(xs[0], xs[-1], _MAX_BREAKPOINTS)
        return list(xs)


def arrival_density(geometry: SceneGeometry, psf: GaussianPsf) -> ArrivalDensity:
    return ArrivalDensity(geometry, psf)


def density_gradient(density: ArrivalDensity, x):
    return density.gradient(x)


def direct_imaging_fisher(
    geometry: SceneGeometry,
    psf: GaussianPsf | None = None,
    budget: PhotonBudget | None = None,
    rtol: float = RTOL,
    atol: float = ATOL,
) -> FisherMatrix:
    """Fisher information matrix of ideal continuum direct detection.

    Integrates (dLambda_mu dLambda_nu) / Lambda over the window
    ``[support - 12 sigma, support + 12 sigma]`` in PSF units and rescales
    by ``1/sigma^2``.
    """
    psf = psf or GaussianPsf()
    budget = budget or PhotonBudget()
    dens = ArrivalDensity(geometry.in_psf_units(psf), GaussianPsf(1.0))

    def integrand(x):
        lam = dens.density(x)
        d1, d2 = dens.gradient(x)
        ok = lam > DENSITY_FLOOR
        inv = np.where(ok, 1.0 / np.where(ok, lam, 1.0), 0.0)
        return np.stack([d1 * d1, d2 * d2, d1 * d2], axis=-1) * inv[:, None]

    lo, hi = dens.window()
    value, err = integrate_vector(integrand, lo, hi, points=dens.breakpoints(), rtol=rtol, atol=atol)
    s2 = psf.sigma**2
    return FisherMatrix(
        j11=float(value[0]) / s2,
        j22=float(value[1]) / s2,
        j12=float(value[2]) / s2,
        n_photons=budget.n_mean,
        error_estimate=float(err) / s2,
    )


SERIES_WINDOW = 0.5


def direct_imaging_fisher_smallsep_series(theta2: float, psf: GaussianPsf | None = None) -> float:
    """Small-separation series of the two-point centroid information, per photon.

    1/s^2 - t^2/(4 s^4) + t^4/(16 s^6) - t^6/(64 s^8), valid for t/s <= 0.5.
    """
    psf = psf or GaussianPsf()
    r = theta2 / psf.sigma
    if not 0 <= r <= SERIES_WINDOW:
        raise ConfigError(f"series valid for 0 <= theta2/sigma <= {SERIES_WINDOW}, got {r:.4g}")
    r2 = r * r
    return (1 - r2 / 4 + r2 * r2 / 16 - r2**3 / 64) / psf.sigma**2
