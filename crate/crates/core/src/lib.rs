//! Lyapunov exponents, empirical measures and entropy estimators for smooth maps of
//! intervals and tori, together with a finite-smoothness interval map whose Lebesgue-positive
//! Cantor set has positive exponent but zero entropy.
//!
//! Numerical code is generic over [`Scalar`] (`f32` or `f64`); the aliases below fix `f64`
//! or `f32`.

pub mod cocycle;
pub mod counterexample;
pub mod entropy;
pub mod error;
pub mod experiment;
pub mod linalg;
pub mod logspace;
pub mod measures;
pub mod scalar;
pub mod space;
pub mod systems;

pub use error::{Error, Result};
pub use scalar::Scalar;

pub type PointF64 = space::Point<f64>;
pub type PointF32 = space::Point<f32>;
pub type PhaseSpaceF64 = space::PhaseSpace<f64>;
pub type PhaseSpaceF32 = space::PhaseSpace<f32>;
pub type MatF64 = linalg::Mat<f64>;
pub type MatF32 = linalg::Mat<f32>;
pub type SystemF64 = systems::SystemSpec<f64>;
pub type SystemF32 = systems::SystemSpec<f32>;
pub type EmpiricalMeasureF64 = measures::EmpiricalMeasure<f64>;
pub type EmpiricalMeasureF32 = measures::EmpiricalMeasure<f32>;
pub type MeasureSetF64 = measures::MeasureSet<f64>;
pub type TestFunctionFamilyF64 = measures::TestFunctionFamily<f64>;
pub type PartitionF64 = entropy::Partition<f64>;
pub type PartitionF32 = entropy::Partition<f32>;
pub type CocycleRecordF64 = cocycle::CocycleRecord<f64>;
pub type LyapunovReportF64 = cocycle::LyapunovReport<f64>;
pub type LyapunovReportF32 = cocycle::LyapunovReport<f32>;
pub type StrongExponentReportF64 = cocycle::StrongExponentReport<f64>;

#[cfg(doctest)]
#[doc = include_str!("../../../README.md")]
pub struct ReadmeDoctests;
