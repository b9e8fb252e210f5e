"""Gage-radar rainfall fusion on a regular lattice.

Zero-inflated log-Gaussian observation models share a latent log-rain
field with a CAR prior and displacement-driven dynamics; inference is
adaptive random-walk Metropolis, and a forward simulator doubles as the
verification oracle.
"""

from .grid import Grid, Displacement, cells_per_ms, neighbors, shifted_index
from .ingest import (
    GageRecord,
    IngestError,
    InputPaths,
    ObservationSet,
    RadarRecord,
    StationRecord,
    load_observations,
    screen_gage_zeros,
    standard_zr,
    write_observations,
)
from .covariates import CovariateFields, TpsModel, build_covariates, gcv_select, tps_fit, tps_predict
from .splines import TensorBasis, bspline_1d, tensor_basis
from .car import CarSpec, SparsePrecision, car_full_conditional, car_logdensity, car_precision, sample_car
from .model import (
    ModelConfig,
    ModelState,
    PosteriorEvaluator,
    PriorConfig,
    displacement_field,
    dynamics_mean,
    gage_loglik,
    log_posterior,
    logistic_zero_prob,
    model_preset,
    radar_loglik,
)
from .mcmc import (
    PosteriorSamples,
    SamplerConfig,
    adapt_scale,
    metropolis_block,
    run_chain,
    trace_summary,
)
from .products import (
    LatentFieldSpec,
    RainMap,
    ZeroProbMap,
    dic,
    holdout_coverage,
    latent_covariance,
    posterior_rain_map,
    zero_prob_map,
)
from .simulate import ScenarioSpec, default_scenario, empirical_covariance, simulate_dataset

__version__ = "0.1.0"
