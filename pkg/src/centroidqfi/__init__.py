"""Centroid estimation limits for incoherent sources under a Gaussian PSF.

Classical Fisher information of direct imaging and Hermite-Gaussian mode
sorting, the quantum Fisher information with its SLD eigenbasis, seeded
photon simulation and maximum-likelihood estimation including the
two-stage adaptive receiver.
"""

__version__ = "0.1.0"

from .direct import ArrivalDensity, direct_imaging_fisher, direct_imaging_fisher_smallsep_series
from .errors import (
    CentroidQfiError,
    ConfigError,
    ConvergenceError,
    ModelDataMismatch,
    NumericalError,
    QuadratureError,
    TruncationError,
)
from .estimation import (
    EstimationResult,
    HgModel,
    SearchBox,
    SldModel,
    TwoStageConfig,
    efficiency_report,
    mle_direct,
    mle_modal,
    two_stage_adaptive,
)
from .info import FisherMatrix, QfiMatrix
from .qfi import (
    HgOperator,
    SldMeasurement,
    drho1_hg,
    qfi_matrix,
    qfi_one_point,
    qfi_two_point_analytic,
    rho1_hg,
    sld_from_rho,
    sld_measurement,
)
from .scene import GaussianPsf, PhotonBudget, SceneGeometry
from .simulate import MeasurementBatch, sample_direct, sample_modes, sample_sld
from .spade import (
    ModalDistribution,
    hg_mode_probs,
    hg_spade_fisher,
    hg_spade_fisher_centroid,
    hg_spade_fisher_separation,
)
