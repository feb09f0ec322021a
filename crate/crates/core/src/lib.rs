//! NARMA-10 benchmark suite comparing a feedback-driven quantum reservoir,
//! an echo state network, a classical LSTM and a quantum-gated LSTM.
//!
//! Every model consumes the same seeded [`timeseries::Series`] and reports a
//! [`metrics::BenchRecord`]. Reservoir models (ESN, QRC) train only a linear
//! [`readout::TrainedReadout`]; the recurrent models train end to end with Adam.

pub mod bench;
pub mod error;
pub mod esn;
pub mod metrics;
pub mod optim;
pub mod qlstm;
pub mod qrc;
pub mod quantum;
pub mod readout;
pub mod recurrent;
pub mod seed;
pub mod timeseries;

pub use error::{BenchError, Result};
