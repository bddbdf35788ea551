// Negated comparisons are used deliberately so that NaN fails validation.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod cocycle;
pub mod dec;
pub mod dist;
pub mod error;
pub mod flexible;
pub mod geometry;
pub mod oseledets;
pub mod report;
pub mod rng;
pub mod skyscraper;
pub mod verify;

pub use cocycle::{MatrixDistribution, OrbitWindow};
pub use dist::ScalarDist;
pub use error::{Error, Result};
pub use flexible::{ConstructionReport, EtaSpec, GapWitness, Mode};
pub use geometry::{Mat2, ProjLine, Side, SplittingPair};
pub use oseledets::{AngleTailReport, Verdict};
pub use skyscraper::TowerVector;
