//! Truck-to-shipment matching from GPS pings.
//!
//! Pings are discretized into hexagonal cells, compared against historical
//! lane corridors, scored by a boosted-tree classifier and post-processed
//! into confidence-labelled assignments. A synthetic fleet simulator and an
//! evaluation harness exercise the whole pipeline end to end.

pub mod dataset;
pub mod domain;
pub mod eval;
pub mod features;
pub mod geo;
pub mod lanestore;
pub mod model;
pub mod pipeline;
pub mod sim;
