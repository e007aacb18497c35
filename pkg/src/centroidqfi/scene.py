"""Imaging scene: Gaussian PSF, source geometry and photon budget.

Lengths are carried in the user's units (the same units as ``sigma``).
Every numerical routine converts the scene to PSF units (sigma = 1) with
:meth:`SceneGeometry.in_psf_units` and converts information quantities back
by dividing by ``sigma**2``.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, replace
from typing import Any, Mapping

import numpy as np

from .errors import ConfigError


@dataclass(frozen=True)
class GaussianPsf:
    """Coherent Gaussian PSF of width ``sigma`` (amplitude, not intensity)."""

    sigma: float = 1.0

    def __post_init__(self):
        if not (self.sigma > 0 and math.isfinite(self.sigma)):
            raise ConfigError(f"sigma must be a positive finite number, got {self.sigma!r}")

    def __call__(self, x):
        return psf_value(self, x)


def psf_value(psf: GaussianPsf, x):
    """Amplitude psi(x) = (2 pi sigma^2)^(-1/4) exp(-x^2 / (4 sigma^2))."""
    s = psf.sigma
    x = np.asarray(x, dtype=float)
    return (2.0 * np.pi * s * s) ** -0.25 * np.exp(-x * x / (4.0 * s * s))


def psf_derivative(psf: GaussianPsf, x):
    """d psi / dx."""
    x = np.asarray(x, dtype=float)
    return -x / (2.0 * psf.sigma**2) * psf_value(psf, x)


def delta_k_squared(psf: GaussianPsf) -> float:
    """Integral of (psi')^2, equal to 1/(4 sigma^2) for the Gaussian PSF."""
    return 1.0 / (4.0 * psf.sigma**2)


@dataclass(frozen=True)
class PhotonBudget:
    n_mean: float = 1.0

    def __post_init__(self):
        if not (self.n_mean > 0 and math.isfinite(self.n_mean)):
            raise ConfigError(f"photon budget must be positive, got {self.n_mean!r}")


@dataclass(frozen=True)
class SceneGeometry:
    """A linear array of ``n`` equally bright points, or a uniform line.

    ``theta1`` is the centroid and ``theta2`` the end-to-end extent.  For a
    line ``n`` is ``None``.
    """

    n: int | None
    theta1: float = 0.0
    theta2: float = 0.0

    def __post_init__(self):
        if self.n is not None:
            if int(self.n) != self.n or self.n < 1:
                raise ConfigError(f"number of sources must be an integer >= 1, got {self.n!r}")
            object.__setattr__(self, "n", int(self.n))
        object.__setattr__(self, "theta1", float(self.theta1))
        object.__setattr__(self, "theta2", float(self.theta2))
        if not math.isfinite(self.theta1) or not math.isfinite(self.theta2):
            raise ConfigError("theta1 and theta2 must be finite")
        if self.theta2 < 0:
            raise ConfigError(f"theta2 must be >= 0, got {self.theta2!r}")
        if self.n == 1 and self.theta2 != 0:
            raise ConfigError("a single point source has no extent; theta2 must be 0")

    @classmethod
    def points(cls, n: int, theta1: float = 0.0, theta2: float = 0.0) -> "SceneGeometry":
        return cls(n, theta1, theta2)

    @classmethod
    def line(cls, theta1: float = 0.0, theta2: float = 1.0) -> "SceneGeometry":
        return cls(None, theta1, theta2)

    @property
    def is_line(self) -> bool:
        return self.n is None

    @property
    def endpoints(self) -> tuple[float, float]:
        return self.theta1 - self.theta2 / 2, self.theta1 + self.theta2 / 2

    def with_params(self, theta1: float | None = None, theta2: float | None = None) -> "SceneGeometry":
        kw = {}
        if theta1 is not None:
            kw["theta1"] = theta1
        if theta2 is not None:
            kw["theta2"] = theta2
        return replace(self, **kw)

    def in_psf_units(self, psf: GaussianPsf) -> "SceneGeometry":
        if psf.sigma == 1.0:
            return self
        return replace(self, theta1=self.theta1 / psf.sigma, theta2=self.theta2 / psf.sigma)

    def label(self) -> str:
        return "line" if self.is_line else f"n={self.n}"


def source_offsets(n: int) -> np.ndarray:
    """d x_s / d theta2 for each source, i.e. (s-1)/(n-1) - 1/2.

    Computed as k / (2(n-1)) with symmetric integers k so that mirrored
    sources carry exactly opposite offsets.
    """
    if n == 1:
        return np.zeros(1)
    k = 2.0 * np.arange(n) - (n - 1)
    return k / (2.0 * (n - 1))


def source_positions(geometry: SceneGeometry) -> np.ndarray:
    """Ascending source positions x_s = theta1 + theta2 * offset_s."""
    if geometry.is_line:
        raise ConfigError("continuum geometry has no discrete positions")
    return geometry.theta1 + geometry.theta2 * source_offsets(geometry.n)


# JSON scene descriptor ------------------------------------------------------

_SCENE_KEYS = {"kind", "n", "theta1", "theta2", "sigma", "n_photons"}


def scene_from_dict(d: Mapping[str, Any]) -> tuple[SceneGeometry, GaussianPsf, PhotonBudget]:
    """Parse ``{"kind", "n", "theta1", "theta2", "sigma", "n_photons"}``."""
    unknown = set(d) - _SCENE_KEYS
    if unknown:
        raise ConfigError(f"unknown scene field(s): {', '.join(sorted(unknown))}")
    kind = d.get("kind", "points")
    if kind not in ("points", "line"):
        raise ConfigError(f"scene field 'kind' must be 'points' or 'line', got {kind!r}")
    for key in ("theta1", "theta2", "sigma", "n_photons"):
        if key in d and not isinstance(d[key], (int, float)):
            raise ConfigError(f"scene field {key!r} must be a number")
    psf = GaussianPsf(float(d.get("sigma", 1.0)))
    budget = PhotonBudget(float(d.get("n_photons", 1.0)))
    theta1 = float(d.get("theta1", 0.0))
    theta2 = float(d.get("theta2", 0.0))
    if kind == "line":
        geometry = SceneGeometry.line(theta1, theta2)
    else:
        if "n" not in d:
            raise ConfigError("scene field 'n' is required for kind 'points'")
        if not isinstance(d["n"], int) or isinstance(d["n"], bool):
            raise ConfigError("scene field 'n' must be an integer")
        geometry = SceneGeometry.points(d["n"], theta1, theta2)
    return geometry, psf, budget


def scene_to_dict(geometry: SceneGeometry, psf: GaussianPsf, budget: PhotonBudget | None = None) -> dict:
    d = {
        "kind": "line" if geometry.is_line else "points",
        "theta1": geometry.theta1,
        "theta2": geometry.theta2,
        "sigma": psf.sigma,
        "n_photons": (budget or PhotonBudget()).n_mean,
    }
    if not geometry.is_line:
        d["n"] = geometry.n
    return d
