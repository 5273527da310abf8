//! Pharmacokinetic molecular-communication channel: closed-form one-compartment
//! responses, sampled-signal algebra, a bench-platform twin, an on-off keyed
//! modem and parameter estimation.

#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod channel;
pub mod cli;
pub mod engine;
pub mod error;
pub mod estimation;
pub mod modem;
pub mod ode;
pub mod platform;
pub mod scenario;
pub mod signal;

pub use channel::{DoseEvent, DoseSchedule, Normalization, PkParams, Route};
pub use engine::Engine;
pub use error::{Error, Result};
pub use signal::{Deconvolution, SampledSignal, SignalRole};
