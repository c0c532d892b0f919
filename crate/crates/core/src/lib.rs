//! Stress-field super-resolution toolkit.
//!
//! * [`fem`] generates coarse and fine plane-stress solutions.
//! * [`codec`] turns stress fields into contour image triples and back.
//! * [`physloss`] evaluates the equilibrium residual penalty and the MSE.
//! * [`nn`] and [`models`] hold the convolution kernels, U-Net and U-Net++.
//! * [`pipeline`] ties dataset generation, training and evaluation together.
//! * [`selftest`] holds quick numerical checks run by the command line.

pub mod codec;
pub mod fem;
pub mod models;
pub mod nn;
pub mod physloss;
pub mod pipeline;
pub mod selftest;
