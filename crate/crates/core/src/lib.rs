//! Potential-outcome simulation of dose-escalation trials.
//!
//! Every notional patient in a simulated trial carries a latent uniform per
//! endpoint; thresholding that uniform against the true dose curve yields the
//! outcome the patient *would* show at every dose. Competing designs are then
//! replayed over the same pre-simulated datasets, so differences in their
//! operating characteristics are not swamped by simulation noise.
//!
//! The crate is organised as:
//!
//! - [`po_engine`]: latent draws, potential-outcome matrices, dataset files.
//! - [`designs`]: escalation designs behind one decision interface.
//! - [`trial_runner`]: replays a design over a dataset.
//! - [`metrics`]: paired and independent contrasts with Monte Carlo error.
//! - [`cli`]: manifest handling and the `dosesim` subcommands.

pub mod cli;
pub mod designs;
pub mod metrics;
pub mod po_engine;
pub mod stats;
pub mod trial_runner;

pub use designs::{Action, DesignConfig, ObservedData};
pub use po_engine::{DoseCurve, LatentPatient, PoDataset, Scenario};
pub use trial_runner::{run_trial, TrialResult};
