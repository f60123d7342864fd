//! Training rows from completed journeys: snapshots of the true truck
//! (label 1) and of trucks that left the same pickup for other destinations
//! (label 0).

use std::collections::{BTreeSet, HashMap};
use std::fs::File;
use std::io::{self, BufRead, BufReader, BufWriter, Write};
use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use thiserror::Error;

use crate::domain::{Pingset, Shipment};
use crate::features::{FeatureAccumulator, FeatureVector};
use crate::geo::{lane_code, ping_to_hex, GeoError, GeoPoint, LANE_RES};
use crate::lanestore::{LaneRecord, LaneStore};
use crate::model::TrainRow;
use crate::pipeline::{filter_candidates, Fleet, PipelineConfig};
use crate::sim::GroundTruth;

pub const MIN_ALTERNATIVE_DESTINATIONS: usize = 5;
pub const DEFAULT_POSITIVE_FRACTION: f64 = 0.3;
pub const DEFAULT_VALIDATION_FRACTION: f64 = 0.2;

pub const DATASET_HEADER: &str =
    "shipment_id,truck_id,label,hours_since_pickup,dist_to_dest_km,overlap_cells,pings_in_overlap";

#[derive(Debug, Error)]
pub enum DatasetError {
    #[error("snapshot ping counts must be strictly ascending and at least 1")]
    InvalidSnapshotSpec,
    #[error("decoy truck `{truck}` ends on the shipment's own lane")]
    DecoyOnLane { truck: String },
    #[error(transparent)]
    Geo(#[from] GeoError),
    #[error("fraction must lie in (0, 1), got {0}")]
    InvalidFraction(f64),
    #[error("i/o error: {0}")]
    Io(#[from] io::Error),
    #[error("dataset line {line}: {msg}")]
    Format { line: usize, msg: String },
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SnapshotSpec {
    ping_counts: Vec<usize>,
}

impl Default for SnapshotSpec {
    fn default() -> Self {
        Self {
            ping_counts: vec![20, 25, 30, 40, 60, 90],
        }
    }
}

impl SnapshotSpec {
    pub fn new(ping_counts: Vec<usize>) -> Result<Self, DatasetError> {
        let ascending = ping_counts.windows(2).all(|w| w[0] < w[1]);
        if ping_counts.is_empty() || ping_counts[0] == 0 || !ascending {
            return Err(DatasetError::InvalidSnapshotSpec);
        }
        Ok(Self { ping_counts })
    }

    pub fn ping_counts(&self) -> &[usize] {
        &self.ping_counts
    }
}

/// Features of each prefix whose length is a snapshot count.
pub fn snapshot_features(
    s: &Shipment,
    pingset: &Pingset,
    record: Option<&LaneRecord>,
    spec: &SnapshotSpec,
) -> Vec<FeatureVector> {
    let mut acc = FeatureAccumulator::new(s, record);
    let mut counts = spec.ping_counts.iter().peekable();
    let mut out = Vec::new();
    for ping in pingset.pings() {
        acc.push(ping);
        if counts.peek() == Some(&&acc.n_pings()) {
            counts.next();
            out.push(acc.features().expect("accumulator has pings"));
        }
    }
    out
}

fn rows(s: &Shipment, pingset: &Pingset, record: Option<&LaneRecord>, spec: &SnapshotSpec, label: u8) -> Vec<TrainRow> {
    snapshot_features(s, pingset, record, spec)
        .into_iter()
        .map(|features| TrainRow {
            features,
            label,
            group: s.shipment_id.clone(),
            truck_id: pingset.truck_id().to_string(),
        })
        .collect()
}

fn record_for<'a>(s: &Shipment, store: &'a LaneStore) -> Result<Option<&'a LaneRecord>, DatasetError> {
    Ok(store.lookup(&lane_code(&s.pickup.location, &s.dropoff.location)?))
}

/// Label-1 snapshot rows of the truck that served `s`.
pub fn make_positive_rows(
    s: &Shipment,
    true_pingset: &Pingset,
    store: &LaneStore,
    spec: &SnapshotSpec,
) -> Result<Vec<TrainRow>, DatasetError> {
    Ok(rows(s, true_pingset, record_for(s, store)?, spec, 1))
}

/// A truck seen at the pickup that was bound for `dest`.
#[derive(Debug, Clone, Copy)]
pub struct Decoy<'a> {
    pub pingset: &'a Pingset,
    pub dest: GeoPoint,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum DatasetWarning {
    InsufficientDecoys { shipment_id: String, destinations: usize },
}

#[derive(Debug, Clone, PartialEq)]
pub struct NegativeRows {
    pub rows: Vec<TrainRow>,
    pub warning: Option<DatasetWarning>,
}

/// Label-0 snapshot rows of decoy trucks.
///
/// Every decoy must end outside the shipment's destination lane cell.
pub fn make_negative_rows(
    s: &Shipment,
    decoys: &[Decoy<'_>],
    store: &LaneStore,
    spec: &SnapshotSpec,
) -> Result<NegativeRows, DatasetError> {
    negative_rows_with(s, decoys, record_for(s, store)?, spec)
}

fn negative_rows_with(
    s: &Shipment,
    decoys: &[Decoy<'_>],
    record: Option<&LaneRecord>,
    spec: &SnapshotSpec,
) -> Result<NegativeRows, DatasetError> {
    let dest_cell = ping_to_hex(&s.dropoff.location, LANE_RES)?;
    let mut destinations = BTreeSet::new();
    for d in decoys {
        let cell = ping_to_hex(&d.dest, LANE_RES)?;
        if cell == dest_cell {
            return Err(DatasetError::DecoyOnLane {
                truck: d.pingset.truck_id().to_string(),
            });
        }
        destinations.insert(cell);
    }
    let warning = (destinations.len() < MIN_ALTERNATIVE_DESTINATIONS).then(|| {
        log::warn!(
            "shipment {}: only {} alternative destinations among decoys",
            s.shipment_id,
            destinations.len()
        );
        DatasetWarning::InsufficientDecoys {
            shipment_id: s.shipment_id.clone(),
            destinations: destinations.len(),
        }
    });
    let rows = decoys
        .iter()
        .flat_map(|d| rows(s, d.pingset, record, spec, 0))
        .collect();
    Ok(NegativeRows { rows, warning })
}

// ---------------------------------------------------------------------------
// Whole-dataset construction
// ---------------------------------------------------------------------------

#[derive(Debug, Clone, PartialEq)]
pub struct DatasetConfig {
    pub spec: SnapshotSpec,
    /// Target share of positive rows, reached by subsampling negatives.
    pub positive_fraction: f64,
    /// Remove each shipment's own journey from its lane record first, so
    /// training overlap looks like overlap on unseen journeys.
    pub leave_one_out: bool,
    pub seed: u64,
}

impl Default for DatasetConfig {
    fn default() -> Self {
        Self {
            spec: SnapshotSpec::default(),
            positive_fraction: DEFAULT_POSITIVE_FRACTION,
            leave_one_out: true,
            seed: 0,
        }
    }
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct DatasetReport {
    pub shipments: usize,
    pub positives: usize,
    pub negatives: usize,
    /// Negative rows removed to reach the target class ratio.
    pub dropped_negatives: usize,
    /// Shipments skipped because their truck is unknown or their lane is degenerate.
    pub skipped_shipments: usize,
    pub warnings: Vec<DatasetWarning>,
}

/// Rows for every history shipment. Decoys are the carrier's trucks that pass
/// the candidate filter, minus the true truck and minus trucks whose known
/// destination lies in the shipment's destination cell.
pub fn build_training_rows(
    history: &[&Shipment],
    fleet: &Fleet,
    truth: &GroundTruth,
    store: &LaneStore,
    pcfg: &PipelineConfig,
    dcfg: &DatasetConfig,
) -> Result<(Vec<TrainRow>, DatasetReport), DatasetError> {
    if !(dcfg.positive_fraction > 0.0 && dcfg.positive_fraction < 1.0) {
        return Err(DatasetError::InvalidFraction(dcfg.positive_fraction));
    }
    let carriers = truth.carriers();
    let mut report = DatasetReport::default();
    let mut positives = Vec::new();
    let mut negatives = Vec::new();
    for s in history {
        let Some(true_id) = truth.true_truck.get(&s.shipment_id) else {
            report.skipped_shipments += 1;
            continue;
        };
        let Ok(lane) = lane_code(&s.pickup.location, &s.dropoff.location) else {
            report.skipped_shipments += 1;
            continue;
        };
        let dest_cell = lane.dest();
        let windowed = fleet.windowed(s, Some(&carriers));
        let Some(true_set) = windowed.iter().find(|p| p.truck_id() == true_id) else {
            report.skipped_shipments += 1;
            continue;
        };
        let stored = store.lookup(&lane);
        let loo = match stored {
            Some(r) if dcfg.leave_one_out => Some(r.without(true_set)),
            _ => None,
        };
        let record = if dcfg.leave_one_out { loo.as_ref() } else { stored };

        let decoys: Vec<Decoy<'_>> = filter_candidates(s, &windowed, pcfg, Some(&carriers))
            .into_iter()
            .filter(|p| p.truck_id() != true_id)
            .filter_map(|p| {
                let dest = truth.trucks.get(p.truck_id())?.dest;
                let off_lane = ping_to_hex(&dest, LANE_RES).is_ok_and(|c| c != dest_cell);
                off_lane.then_some(Decoy { pingset: p, dest })
            })
            .collect();
        positives.extend(rows(s, true_set, record, &dcfg.spec, 1));
        let neg = negative_rows_with(s, &decoys, record, &dcfg.spec)?;
        negatives.extend(neg.rows);
        report.warnings.extend(neg.warning);
        report.shipments += 1;
    }

    let f = dcfg.positive_fraction;
    let wanted = positives.len() as f64 * (1.0 - f) / f;
    let keep = if negatives.is_empty() {
        1.0
    } else {
        (wanted / negatives.len() as f64).min(1.0)
    };
    let mut rng = ChaCha8Rng::seed_from_u64(dcfg.seed);
    let before = negatives.len();
    negatives.retain(|_| rng.gen::<f64>() < keep);
    report.dropped_negatives = before - negatives.len();
    report.positives = positives.len();
    report.negatives = negatives.len();

    // Interleave by shipment so files read naturally.
    let order: HashMap<&str, usize> = history
        .iter()
        .enumerate()
        .map(|(i, s)| (s.shipment_id.as_str(), i))
        .collect();
    let mut all = positives;
    all.extend(negatives);
    all.sort_by_key(|r| (order[r.group.as_str()], 1 - r.label));
    Ok((all, report))
}

/// (positives, negatives).
pub fn class_counts(rows: &[TrainRow]) -> (usize, usize) {
    let pos = rows.iter().filter(|r| r.label == 1).count();
    (pos, rows.len() - pos)
}

/// Splits by shipment so no shipment's rows straddle the two parts.
pub fn grouped_split(
    rows: &[TrainRow],
    validation_fraction: f64,
    seed: u64,
) -> Result<(Vec<TrainRow>, Vec<TrainRow>), DatasetError> {
    if !(validation_fraction > 0.0 && validation_fraction < 1.0) {
        return Err(DatasetError::InvalidFraction(validation_fraction));
    }
    let groups: BTreeSet<&str> = rows.iter().map(|r| r.group.as_str()).collect();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let validation: BTreeSet<&str> = groups
        .into_iter()
        .filter(|_| rng.gen::<f64>() < validation_fraction)
        .collect();
    let (val, train): (Vec<TrainRow>, Vec<TrainRow>) = rows
        .iter()
        .cloned()
        .partition(|r| validation.contains(r.group.as_str()));
    Ok((train, val))
}

// ---------------------------------------------------------------------------
// Files
// ---------------------------------------------------------------------------

pub fn write_dataset(rows: &[TrainRow], path: &Path) -> Result<(), DatasetError> {
    let mut w = BufWriter::new(File::create(path)?);
    writeln!(w, "{DATASET_HEADER}")?;
    for r in rows {
        let f = &r.features;
        writeln!(
            w,
            "{},{},{},{:?},{:?},{},{}",
            r.group, r.truck_id, r.label, f.hours_since_pickup, f.dist_to_dest_km, f.overlap_cells, f.pings_in_overlap
        )?;
    }
    w.flush()?;
    Ok(())
}

pub fn read_dataset(path: &Path) -> Result<Vec<TrainRow>, DatasetError> {
    let reader = BufReader::new(File::open(path)?);
    let mut lines = reader.lines();
    match lines.next().transpose()? {
        Some(h) if h.trim() == DATASET_HEADER => {}
        _ => {
            return Err(DatasetError::Format {
                line: 1,
                msg: "missing dataset header".into(),
            })
        }
    }
    let mut out = Vec::new();
    for (i, line) in lines.enumerate() {
        let line = line?;
        let n = i + 2;
        if line.trim().is_empty() {
            continue;
        }
        let bad = |msg: &str| DatasetError::Format {
            line: n,
            msg: msg.to_string(),
        };
        let f: Vec<&str> = line.split(',').collect();
        if f.len() != 7 {
            return Err(bad("expected 7 fields"));
        }
        let label: u8 = f[2].parse().map_err(|_| bad("label"))?;
        if label > 1 {
            return Err(bad("label must be 0 or 1"));
        }
        let features = FeatureVector {
            hours_since_pickup: f[3].parse().map_err(|_| bad("hours_since_pickup"))?,
            dist_to_dest_km: f[4].parse().map_err(|_| bad("dist_to_dest_km"))?,
            overlap_cells: f[5].parse().map_err(|_| bad("overlap_cells"))?,
            pings_in_overlap: f[6].parse().map_err(|_| bad("pings_in_overlap"))?,
        };
        if !features.hours_since_pickup.is_finite()
            || !features.dist_to_dest_km.is_finite()
            || features.dist_to_dest_km < 0.0
        {
            return Err(bad("non-finite or negative feature"));
        }
        out.push(TrainRow {
            features,
            label,
            group: f[0].to_string(),
            truck_id: f[1].to_string(),
        });
    }
    Ok(out)
}
