//! Survival analysis with learned kernels.
//!
//! A neural embedding `psi` defines the Gaussian kernel
//! `K(x, x') = exp(-|psi(x) - psi(x')|^2)`, which weights training subjects in
//! Beran's conditional Kaplan-Meier estimator. Survival-time estimates derived
//! from the resulting curves are wrapped in marginal or kernel-weighted split
//! conformal prediction sets.
//!
//! ```
//! use kernsurv::data::SurvivalDataset;
//! use kernsurv::estimator::{kaplan_meier, FittedConditionalKM};
//! use kernsurv::kernel::Kernel;
//!
//! let data = SurvivalDataset::from_parts(
//!     vec![vec![0.0], vec![1.0], vec![2.0], vec![3.0]],
//!     &[1.0, 2.0, 3.0, 4.0],
//!     &[true, false, true, true],
//! )?;
//! let km = kaplan_meier(&data)?;
//! assert_eq!(km.at(3.5), 0.375);
//!
//! let fit = FittedConditionalKM::on_observed_times(data, Kernel::Box { sigma: 1.5 })?;
//! let curve = fit.conditional_km(&[1.0])?;
//! assert_eq!(curve.median(), 3.0);
//! # Ok::<(), kernsurv::Error>(())
//! ```

pub mod conformal;
pub mod data;
pub mod error;
pub mod estimator;
pub mod eval;
pub mod kernel;
pub mod neural;

pub use error::{Error, Result};
