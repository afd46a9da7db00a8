//! Numerics for constant mean curvature tori in the round three-sphere.
//!
//! The library builds flat rank-one data on a torus, assembles the associated
//! family of flat `SL(2, C)` connections on a four-punctured sphere quotient,
//! computes monodromy representations, solves for unitarizing sections, and
//! deforms spectral data in the weight parameter while keeping the closing
//! conditions satisfied. Surfaces are recovered at the two unit-circle Sym
//! points and exported as quad meshes in the three-sphere.

pub use num_complex::Complex64 as C64;

pub mod abelianization;
pub mod checkpoint;
pub mod elliptic;
pub mod jacobian;
pub mod monodromy;
pub mod msection;
pub mod path;
pub mod quadrature;
pub mod reconstruct;
pub mod solve;
pub mod spectral;
pub mod transport;

/// Default tolerance for iterative solves and closing-condition checks.
pub const DEFAULT_TOL: f64 = 1e-12;

/// Distance threshold for classifying a point as lying on a half-lattice orbit.
pub const HALF_LATTICE_TOL: f64 = 1e-9;

/// Errors produced by the library.
#[derive(Debug, thiserror::Error)]
pub enum Error {
    /// An input lies outside the domain a routine is defined on.
    #[error("domain error: {0}")]
    Domain(String),
    /// A line-bundle parameter sits on a half-lattice point where the
    /// eigenline construction degenerates.
    #[error("spin degeneracy at chi = {chi}")]
    SpinDegeneracy { chi: C64 },
    /// Evaluation at or too close to a pole of a meromorphic function.
    #[error("evaluation at a pole near {location}")]
    Pole { location: C64 },
    /// Adaptive integration failed to reach the requested accuracy.
    #[error("integration failure: {0}")]
    Integration(String),
    /// An iterative solver stalled before reaching its tolerance.
    #[error("no convergence after {iterations} iterations (residual {residual:.3e})")]
    NoConvergence { iterations: usize, residual: f64 },
    /// A Newton iteration left its basin or ran out of steps; the last
    /// iterate is carried for diagnosis.
    #[error("newton diverged after {iterations} steps (residual {residual:.3e}, last iterate {last})")]
    NewtonDivergence {
        iterations: usize,
        residual: f64,
        last: C64,
    },
    /// A candidate root satisfied the reduced residuals but failed the full
    /// certification check.
    #[error("candidate {alpha} fails certification (defect {defect:.3e})")]
    SpuriousRoot { alpha: C64, defect: f64 },
    /// The requested configuration admits no solution.
    #[error("infeasible: {0}")]
    Infeasible(String),
    /// Surface reconstruction is not available for the given data.
    #[error("reconstruction unavailable: {0}")]
    Reconstruction(String),
    /// A checkpoint file could not be read or written.
    #[error("checkpoint error: {0}")]
    Checkpoint(String),
    /// Underlying I/O failure.
    #[error(transparent)]
    Io(#[from] std::io::Error),
    /// Malformed JSON encountered while loading a checkpoint.
    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

pub type Result<T> = std::result::Result<T, Error>;
