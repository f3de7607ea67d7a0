"""Fast-rate FIR identification from slow-rate output measurements.

Identifies fast-rate finite impulse response models of linear systems from
fast-rate inputs and slow-rate (downsampled) outputs by kernel-regularized
least squares, enabling frequency-response estimation beyond the Nyquist
frequency of the output sampler.
"""

from .errors import (
    InvalidStartError,
    NonUniqueModelError,
    NumericalError,
    OracleInapplicableError,
)
from .estimator import (
    FitReport,
    HyperparameterVector,
    RegularizedProblem,
    apply_hyperparameters,
    goodness_of_fit,
    load_model,
    marginal_likelihood,
    optimize_hyperparameters,
    predict_fast_output,
    primal_check,
    regularized_fir,
    save_model,
)
from .kernels import (
    DiagonalCorrelated,
    KernelMatrix,
    KernelSpec,
    KernelSum,
    ResonantPole,
    StableSpline,
    Tikhonov,
    build_kernel_matrix,
    kernel_entry,
    kernel_spec_from_json,
    kernel_spec_to_json,
    validate_psd,
)
from .regressor import (
    IdentifiabilityReport,
    NonUniqueReason,
    RegressorMatrix,
    build_regressor,
    identifiability_check,
    least_squares_fir,
)
from .signals import (
    FastSignal,
    FirModel,
    FrfSample,
    SlowSignal,
    dft,
    downsample,
    fir_frf,
    full_band,
    random_multisine,
    random_noise,
    snr_variance_ratio,
)
from .sim import (
    NOMINAL_PLANT,
    ContinuousPlant,
    DiscretePlant,
    MonteCarloConfig,
    MonteCarloResult,
    StateSpace,
    build_plant,
    plant_frf,
    run_monte_carlo,
    simulate,
    zoh_discretize,
)

__version__ = "0.1.0"
