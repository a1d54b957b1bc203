//! Symbolic differential-algebra engine for zero-curvature (Lax pair)
//! verification and extended Estabrook-Wahlquist prolongation cascades on
//! variable-coefficient KdV/MKdV-type evolution equations, with Painlevé
//! truncation machinery and a numerical cross-check lab.

pub mod error;
pub mod symcore;
pub mod jetalg;
pub mod liealg;
pub mod ew;
pub mod numlab;
pub mod painleve;
pub mod papercases;
pub mod par;
pub mod parser;
pub mod zcc;

pub use error::{Error, Result};
