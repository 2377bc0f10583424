//! Time-dependent coefficients and the explicit bound machinery.

mod algebra;
mod bounds;
mod derive;
mod poly;

pub use algebra::{
    bracket_norm, dual_exponent, f_g_p, gamma_delta_p, positive_sum, CoefficientPair,
    GrowthTermSpec, HolderTermSpec,
};
pub use bounds::{
    c11_series_check, check_power_envelope, gamma_exponent_check, gronwall_curve,
    EnvelopeReport, GammaExponentNote, PowerEnvelope, SeriesEntry, SeriesReport,
    SERIES_TERM_FLOOR,
};
pub use derive::{derive_growth_spec, derive_holder_spec};
pub use poly::{CoefficientFn, FnTime, PiecewisePoly, Shape, TimeFn};
