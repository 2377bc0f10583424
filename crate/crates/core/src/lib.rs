//! Numerical laboratory for McKean-Vlasov SDEs: Wasserstein geometry of
//! empirical measures, Bihari and Osgood functionals, explicit stability and
//! growth coefficients, Euler-Maruyama particle systems, the Picard
//! construction of strong solutions and Monte-Carlo stability checks.

pub mod assignment;
pub mod bundle;
pub mod catalog;
pub mod coeff;
pub mod config;
pub mod engine;
pub mod error;
pub mod experiment;
pub mod measure;
pub mod model;
pub mod modulus;
pub mod numeric;
pub mod osgood;
pub mod picard;
pub mod stability;
pub mod table;
pub mod yw;

pub use error::{Error, Result};
