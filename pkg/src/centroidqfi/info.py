"""Per-photon information matrices over (theta1, theta2)."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np


@dataclass(frozen=True)
class FisherMatrix:
    """Classical Fisher information of one receiver.

    ``j11``, ``j22``, ``j12`` are per photon (1/length^2); the totals for the
    budget are ``n_photons`` times larger, see :meth:`matrix`.
    """

    j11: float
    j22: float
    j12: float
    n_photons: float = 1.0
    error_estimate: float = 0.0

    def matrix(self, per_photon: bool = False) -> np.ndarray:
        m = np.array([[self.j11, self.j12], [self.j12, self.j22]])
        return m if per_photon else self.n_photons * m

    @property
    def total11(self) -> float:
        return self.n_photons * self.j11

    @property
    def total22(self) -> float:
        return self.n_photons * self.j22


@dataclass(frozen=True)
class QfiMatrix:
    """Quantum Fisher information, per photon, with the photon budget.

    ``k22_defined`` is false for a single point, where the extent parameter
    does not exist and ``k22`` is reported as 0.
    """

    k11: float
    k22: float
    k12: float
    n_photons: float = 1.0
    k22_defined: bool = True
    q_max: int | None = None

    def matrix(self, per_photon: bool = False) -> np.ndarray:
        m = np.array([[self.k11, self.k12], [self.k12, self.k22]])
        return m if per_photon else self.n_photons * m

    @property
    def total11(self) -> float:
        return self.n_photons * self.k11

    @property
    def total22(self) -> float:
        return self.n_photons * self.k22
