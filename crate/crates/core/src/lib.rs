//! Computational toolkit for translation surfaces of genus two.
//!
//! The library is organized around a pipeline: build a surface from polygons
//! ([`surface`]), triangulate and reduce to Delaunay form ([`tri`]), enumerate
//! saddle connections and measure injectivity radii ([`saddle`]), decompose
//! periodic directions into cylinders ([`cyl`]), act by SL(2,R) ([`sl2`]),
//! track absolute periods in a fixed homology chart ([`periods`]), and on top
//! of that run the quantitative experiments: nondivergence windows
//! ([`nondiv`]) and the near-return / closing analysis that searches for
//! affine symmetries ([`closing`]).

pub mod canon;
pub mod closing;
pub mod config;
pub mod cyl;
pub mod error;
pub mod geom;
pub mod nondiv;
pub mod periods;
pub mod saddle;
pub mod sl2;
pub mod surface;
pub mod tri;

pub use error::{Error, Result};
