//! Core algorithms for collecting and evaluating an aircraft-sound dataset
//! from ADS-B triggered recordings.

pub mod adsb;
pub mod capture;
pub mod dataset;
pub mod eval;
pub mod features;
pub mod models;
pub mod monitor;
pub mod pipeline;
pub mod review;
pub mod simulate;
pub mod track;
pub mod trigger;
