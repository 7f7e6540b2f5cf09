//! Churn prediction on daily activity time series.
//!
//! The pipeline: sparse activity logs become dense per-player daily series
//! ([`timeseries`]), churn labels are derived from inactivity windows
//! ([`labeling`]), sliding-window learning and test sets are assembled under
//! eligibility rules ([`dataset`]), two-layer recurrent networks (GRU, LSTM
//! or nBRC) score trajectories ([`rnn`]), RMSprop minimizes binary
//! cross-entropy over full-sequence backpropagation through time ([`optim`]),
//! and confusion-matrix metrics aggregate over seeds ([`metrics`]). A
//! configurable synthetic population generator ([`synth`]) stands in for
//! production data, and [`experiments`] wires everything into three
//! reproducible experiment protocols.

pub mod dataset;
pub mod error;
pub mod experiments;
pub mod labeling;
pub mod metrics;
pub mod optim;
pub mod reference;
pub mod rnn;
pub mod synth;
pub mod timeseries;

pub use error::{Error, Result};
