//! Verification lab and optimization toolkit for the minimal surface system
//! in codimension two and higher.

pub mod area;
pub mod calibration;
pub mod ck;
pub mod experiments;
pub mod grid;
pub mod hodograph;
pub mod hopf;
pub mod jets;
pub mod linalg;
pub mod minimize;
pub mod mss;
pub mod parallel;
pub mod report;
pub mod scalar;
pub mod slag;

pub use jets::{CompiledJet, Jet, JetError, JetMatrix, MapJet};
pub use linalg::Mat;
pub use scalar::{Field, Rational, Real};

/// Exact jets over the rationals.
pub type ExactJet = Jet<Rational>;
/// Float jets for interoperation with grid code.
pub type FloatJet = Jet<f64>;
pub type ExactMapJet = MapJet<Rational>;
pub type ExactJetMatrix = JetMatrix<Rational>;
