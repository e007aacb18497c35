"""Seeded photon-by-photon simulation of the three receivers.

Every batch carries its seed and the name of the bit generator, so a
batch can be replayed exactly.  Parallel tasks draw from independent
streams derived from ``(seed, task_index)``.
"""

from __future__ import annotations

import io
import warnings
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass
from typing import Callable, Sequence

import numpy as np

from .errors import ConfigError
from .qfi import SldMeasurement
from .scene import GaussianPsf, SceneGeometry, source_positions
from .spade import ModalDistribution

RNG_ALGORITHM = "PCG64"
KINDS = ("DirectImaging", "HgSpade", "SldBasis")
TAIL_OUTCOME = -1
COUNT_MODES = ("exact", "poisson")


def make_rng(seed: int) -> np.random.Generator:
    return np.random.Generator(np.random.PCG64(seed))


def task_seed(seed: int, index: int) -> int:
    """Independent 64-bit seed for parallel task ``index`` of a run seeded with ``seed``."""
    return int(np.random.SeedSequence([int(seed), int(index)]).generate_state(1, np.uint64)[0])


@dataclass(frozen=True)
class MeasurementBatch:
    """Detected outcomes of one simulated exposure.

    ``outcomes`` are arrival positions in PSF units (x / sigma) for direct
    imaging, or outcome indices for modal receivers, where ``-1`` marks the
    truncation residual.
    """

    kind: str
    outcomes: np.ndarray
    seed: int
    scene: SceneGeometry
    sigma: float = 1.0
    n_outcomes: int | None = None
    count_mode: str = "exact"
    n_requested: int | None = None
    rng_algorithm: str = RNG_ALGORITHM

    def __post_init__(self):
        if self.kind not in KINDS:
            raise ConfigError(f"unknown batch kind {self.kind!r}")
        if self.count_mode not in COUNT_MODES:
            raise ConfigError(f"count_mode must be one of {COUNT_MODES}")

    @property
    def n_photons_drawn(self) -> int:
        return int(len(self.outcomes))

    @property
    def is_modal(self) -> bool:
        return self.kind != "DirectImaging"

    def positions(self) -> np.ndarray:
        """Arrival positions in length units (direct imaging only)."""
        if self.is_modal:
            raise ConfigError("modal batches carry outcome indices, not positions")
        return self.outcomes * self.sigma

    def counts(self) -> np.ndarray:
        """Counts per outcome index 0..n_outcomes-1 (residual outcomes excluded)."""
        if not self.is_modal:
            raise ConfigError("direct-imaging batches have no count vector")
        o = self.outcomes
        return np.bincount(o[o >= 0], minlength=self.n_outcomes)

    @property
    def tail_count(self) -> int:
        return int(np.count_nonzero(self.outcomes == TAIL_OUTCOME)) if self.is_modal else 0

    # serialization -----------------------------------------------------

    def header(self) -> dict:
        return {
            "kind": self.kind,
            "seed": self.seed,
            "n": self.n_photons_drawn,
            "sigma": self.sigma,
            "theta1": self.scene.theta1,
            "theta2": self.scene.theta2,
            "n_sources": "line" if self.scene.is_line else self.scene.n,
            "n_outcomes": self.n_outcomes,
            "count_mode": self.count_mode,
            "rng": self.rng_algorithm,
        }

    def to_csv(self) -> str:
        buf = io.StringIO()
        for k, v in self.header().items():
            buf.write(f"# {k}={v}\n")
        buf.write("outcome\n")
        fmt = "%d" if self.is_modal else "%.17g"
        np.savetxt(buf, self.outcomes, fmt=fmt)
        return buf.getvalue()

    @classmethod
    def from_csv(cls, text: str) -> "MeasurementBatch":
        meta = {}
        lines = text.splitlines()
        i = 0
        while i < len(lines) and lines[i].startswith("#"):
            k, _, v = lines[i][1:].strip().partition("=")
            meta[k] = v
            i += 1
        if i >= len(lines) or lines[i].strip() != "outcome":
            raise ConfigError("batch CSV lacks the 'outcome' column header")
        modal = meta["kind"] != "DirectImaging"
        values = np.array(lines[i + 1:], dtype=float)
        outcomes = values.astype(np.int64) if modal else values
        n_src = meta["n_sources"]
        scene = SceneGeometry(None if n_src == "line" else int(n_src), float(meta["theta1"]), float(meta["theta2"]))
        n_out = meta.get("n_outcomes", "None")
        return cls(
            meta["kind"],
            outcomes,
            int(meta["seed"]),
            scene,
            float(meta["sigma"]),
            None if n_out == "None" else int(n_out),
            meta.get("count_mode", "exact"),
            rng_algorithm=meta.get("rng", RNG_ALGORITHM),
        )

    def count_vector_bytes(self) -> bytes:
        """Compact form of a modal batch: little-endian int64 counts, residual last."""
        vec = np.append(self.counts(), self.tail_count).astype("<i8")
        return vec.tobytes()


def counts_from_bytes(data: bytes) -> tuple[np.ndarray, int]:
    """Inverse of :meth:`MeasurementBatch.count_vector_bytes`: ``(counts, tail_count)``."""
    vec = np.frombuffer(data, dtype="<i8")
    return vec[:-1].astype(np.int64), int(vec[-1])


def _draw_count(rng, n_photons, count_mode):
    if n_photons < 1:
        raise ConfigError("n_photons must be >= 1")
    if count_mode == "poisson":
        return int(rng.poisson(n_photons))
    if count_mode != "exact":
        raise ConfigError(f"count_mode must be one of {COUNT_MODES}")
    return int(n_photons)


def sample_direct(
    geometry: SceneGeometry,
    psf: GaussianPsf | None,
    n_photons: int,
    seed: int,
    count_mode: str = "exact",
) -> MeasurementBatch:
    """Exact draws from the arrival density: pick a source (or a point on the line), add PSF noise."""
    psf = psf or GaussianPsf()
    rng = make_rng(seed)
    k = _draw_count(rng, n_photons, count_mode)
    geo = geometry.in_psf_units(psf)
    if geo.is_line:
        lo, _ = geo.endpoints
        centers = lo + geo.theta2 * rng.random(k)
    else:
        xs = source_positions(geo)
        centers = xs[rng.integers(len(xs), size=k)] if len(xs) > 1 else np.full(k, xs[0])
    x = centers + rng.standard_normal(k)
    return MeasurementBatch("DirectImaging", x, int(seed), geometry, psf.sigma, None, count_mode, int(n_photons))


def _sample_categorical(dist: ModalDistribution, rng, k):
    p = np.append(np.clip(dist.probs, 0.0, None), max(dist.tail_mass, 0.0))
    p = p / p.sum()
    idx = rng.choice(len(p), size=k, p=p)
    idx[idx == len(p) - 1] = TAIL_OUTCOME
    n_tail = int(np.count_nonzero(idx == TAIL_OUTCOME))
    if n_tail:
        warnings.warn(f"{n_tail} photon(s) landed in the truncation residual; excluded from likelihoods")
    return idx


def sample_modes(
    distribution: ModalDistribution,
    n_photons: int,
    seed: int,
    scene: SceneGeometry | None = None,
    psf: GaussianPsf | None = None,
    count_mode: str = "exact",
) -> MeasurementBatch:
    """Categorical HG-mode draws over q = 0..q_max plus the residual outcome."""
    psf = psf or GaussianPsf()
    rng = make_rng(seed)
    k = _draw_count(rng, n_photons, count_mode)
    idx = _sample_categorical(distribution, rng, k)
    scene = scene or SceneGeometry(1, 0.0, 0.0)
    return MeasurementBatch(
        "HgSpade", idx, int(seed), scene, psf.sigma, len(distribution.probs), count_mode, int(n_photons)
    )


def sample_sld(
    measurement: SldMeasurement,
    true_geometry: SceneGeometry,
    n_photons: int,
    seed: int,
    count_mode: str = "exact",
) -> MeasurementBatch:
    """Draws over SLD-eigenbasis outcome indices under the true scene."""
    rng = make_rng(seed)
    k = _draw_count(rng, n_photons, count_mode)
    dist = measurement.outcome_distribution(true_geometry)
    idx = _sample_categorical(dist, rng, k)
    return MeasurementBatch(
        "SldBasis", idx, int(seed), true_geometry, measurement.sigma, measurement.dim, count_mode, int(n_photons)
    )


def map_tasks(func: Callable, arg_list: Sequence, workers: int | None = None) -> list:
    """Apply ``func`` to each argument tuple; results come back in task order."""
    if workers is None or workers <= 1:
        return [func(*a) for a in arg_list]
    with ProcessPoolExecutor(max_workers=workers) as ex:
        return list(ex.map(func, *zip(*arg_list)))


def sample_direct_parallel(geometry, psf, n_photons, seed, n_tasks, workers=None) -> list[MeasurementBatch]:
    """``n_tasks`` independent direct-imaging batches, seeds derived from ``(seed, index)``."""
    args = [(geometry, psf, n_photons, task_seed(seed, i)) for i in range(n_tasks)]
    return map_tasks(sample_direct, args, workers)
