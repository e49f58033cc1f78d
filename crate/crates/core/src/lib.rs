//! Effective energy densities for thin periodic films with manifold-valued
//! fields and linear-growth integrands.

pub mod cell;
pub mod cli;
pub mod config;
pub mod error;
pub mod extrapolate;
pub mod functional;
pub mod geodesic;
pub mod grid;
pub mod hypotheses;
pub mod integrand;
pub mod jump;
pub mod manifold;
pub mod optim;
pub mod provenance;
pub mod table;
pub mod vtk;

pub use error::{Error, Result};

pub type Vec2 = nalgebra::Vector2<f64>;
pub type Vec3 = nalgebra::Vector3<f64>;
pub type Mat3 = nalgebra::Matrix3<f64>;
pub type Mat3x2 = nalgebra::Matrix3x2<f64>;
