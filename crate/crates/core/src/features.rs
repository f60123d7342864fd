//! The four-number description of a (shipment, candidate truck) pair.

use std::collections::HashSet;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::domain::{Ping, Pingset, Shipment, HOUR};
use crate::geo::{haversine_km, lane_code, trajectory_cell, GeoError, HexCell};
use crate::lanestore::{LaneRecord, LaneStore};

pub const N_FEATURES: usize = 4;

pub const FEATURE_NAMES: [&str; N_FEATURES] = [
    "hours_since_pickup",
    "dist_to_dest_km",
    "overlap_cells",
    "pings_in_overlap",
];

#[derive(Debug, Error)]
pub enum FeatureError {
    #[error("pingset of truck `{0}` is empty")]
    EmptyPingset(String),
    #[error(transparent)]
    Geo(#[from] GeoError),
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FeatureVector {
    /// Latest ping time minus the pickup appointment, hours (may be negative).
    pub hours_since_pickup: f64,
    /// Great-circle distance from the latest ping to the dropoff.
    pub dist_to_dest_km: f64,
    /// Trajectory cells shared by the truck and the lane record.
    pub overlap_cells: u32,
    /// Truck pings that fall inside the shared cells.
    pub pings_in_overlap: u32,
}

impl FeatureVector {
    /// Model input order; fixed for I/O stability.
    pub fn to_array(&self) -> [f64; N_FEATURES] {
        [
            self.hours_since_pickup,
            self.dist_to_dest_km,
            f64::from(self.overlap_cells),
            f64::from(self.pings_in_overlap),
        ]
    }

    /// Same vector with the hexcell-derived features zeroed.
    pub fn without_hexcells(&self) -> FeatureVector {
        FeatureVector {
            overlap_cells: 0,
            pings_in_overlap: 0,
            ..*self
        }
    }
}

/// Computes the feature vector of `pingset` as a candidate for `shipment`.
///
/// An unknown lane is a cold start, not an error: the overlap features are
/// zero and the temporal/distance ones are still computed.
pub fn extract_features(
    shipment: &Shipment,
    pingset: &Pingset,
    store: &LaneStore,
) -> Result<FeatureVector, FeatureError> {
    let lane = lane_code(&shipment.pickup.location, &shipment.dropoff.location)?;
    let record = store.lookup(&lane);
    let mut acc = FeatureAccumulator::new(shipment, record);
    for ping in pingset.pings() {
        acc.push(ping);
    }
    acc.features()
        .ok_or_else(|| FeatureError::EmptyPingset(pingset.truck_id().to_string()))
}

/// Incremental feature computation over a time-ordered ping stream.
///
/// After pushing a pingset's pings in order, [`features`](Self::features)
/// equals [`extract_features`] on that pingset.
#[derive(Debug, Clone)]
pub struct FeatureAccumulator<'a> {
    shipment: &'a Shipment,
    record: Option<&'a LaneRecord>,
    latest: Option<Ping>,
    overlap: HashSet<HexCell>,
    pings_in_overlap: u32,
    n_pings: usize,
}

impl<'a> FeatureAccumulator<'a> {
    pub fn new(shipment: &'a Shipment, record: Option<&'a LaneRecord>) -> Self {
        Self {
            shipment,
            record,
            latest: None,
            overlap: HashSet::new(),
            pings_in_overlap: 0,
            n_pings: 0,
        }
    }

    pub fn push(&mut self, ping: &Ping) {
        self.push_with_cell(ping, trajectory_cell(&ping.position));
    }

    /// Like [`push`](Self::push) with the trajectory cell already computed.
    pub fn push_with_cell(&mut self, ping: &Ping, cell: HexCell) {
        if self.record.is_some_and(|r| r.contains(&cell)) {
            self.overlap.insert(cell);
            self.pings_in_overlap += 1;
        }
        self.n_pings += 1;
        if self.latest.as_ref().is_none_or(|l| l.timestamp <= ping.timestamp) {
            self.latest = Some(ping.clone());
        }
    }

    pub fn n_pings(&self) -> usize {
        self.n_pings
    }

    pub fn latest(&self) -> Option<&Ping> {
        self.latest.as_ref()
    }

    pub fn features(&self) -> Option<FeatureVector> {
        let latest = self.latest.as_ref()?;
        Some(FeatureVector {
            hours_since_pickup: (latest.timestamp - self.shipment.pickup.appointment) as f64 / HOUR as f64,
            dist_to_dest_km: haversine_km(&latest.position, &self.shipment.dropoff.location),
            overlap_cells: self.overlap.len() as u32,
            pings_in_overlap: self.pings_in_overlap,
        })
    }
}
