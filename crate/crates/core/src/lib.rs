//! LSTM state-space models with infinity-norm ISS certificates, ISS-penalised
//! training and a thermal benchmark plant.

pub mod iss;
pub mod lstm;
pub mod numerics;
pub mod data;
pub mod training;
pub mod thermal;
