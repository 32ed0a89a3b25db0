"""Loss analysis for superconducting coplanar resonators.

Notch-type S21 models (linear and Kerr), two-step complex least-squares trace
fitting, HEMT-referenced power calibration, TLS plus power-independent loss
fits over (T, n_ph) surfaces, DC film parameters, a seeded synthetic data
generator and a batch pipeline.
"""
from .errors import (
    ConfigurationError,
    DataError,
    DataQualityError,
    FitError,
    NoResonanceError,
    ParameterDomainError,
    ParseError,
    ReslossError,
    RootFindingError,
    TemperatureLookupError,
    UnphysicalFitError,
)
from .fitting import (
    ComplexTrace,
    DuffingFit,
    FitOptions,
    NotchFit,
    classify_coupling,
    estimate_initial,
    fit_background,
    fit_duffing,
    fit_full,
    fit_trace,
)
from .loss import (
    LossFitOptions,
    LossSurface,
    PILossSeries,
    TLSModelParams,
    fit_loss_surface,
    single_photon_inverse_q,
    tls_inverse_q,
    tls_inverse_q_simple,
    total_inverse_q,
)
from .power import (
    AttenuationCurve,
    CalibrationModel,
    calibrate_attenuation,
    circulating_power,
    photon_number_linear,
)
from .scattering import (
    DuffingParams,
    NotchParams,
    diameter_correct,
    eval_duffing_s21,
    eval_full_notch,
    eval_ideal_notch,
)
from .transport import (
    TransportCurve,
    bc2_zero,
    extract_tc,
    fit_bc2_slope,
    gl_coherence_length,
    mean_free_path,
)

__version__ = "0.1.0"
