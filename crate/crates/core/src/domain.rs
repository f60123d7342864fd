//! Pings, shipments and pingsets, plus the line-delimited JSON files they
//! travel in.

use std::collections::HashMap;
use std::fs::File;
use std::io::{self, BufRead, BufReader, BufWriter, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::geo::{haversine_km, GeoError, GeoPoint};

/// Seconds since the Unix epoch, UTC.
pub type Timestamp = i64;

pub const HOUR: Timestamp = 3600;

/// Candidate pingsets are windowed to the appointments widened by this much.
pub const WINDOW_MARGIN: Timestamp = 6 * HOUR;

#[derive(Debug, Error)]
pub enum DomainError {
    #[error(transparent)]
    Geo(#[from] GeoError),
    #[error("truck id must be non-empty")]
    EmptyTruckId,
    #[error("timestamp must be positive, got {0}")]
    BadTimestamp(Timestamp),
    #[error("pickup appointment {pickup} is not before dropoff appointment {dropoff}")]
    AppointmentOrder { pickup: Timestamp, dropoff: Timestamp },
    #[error("pickup and dropoff coincide")]
    ZeroLengthShipment,
    #[error("pingset pings must share truck `{expected}`, found `{found}`")]
    MixedTrucks { expected: String, found: String },
    #[error("pingset timestamps must be non-decreasing")]
    Unordered,
}

#[derive(Debug, Error)]
pub enum LoadError {
    #[error("i/o error on {path}: {source}")]
    Io { path: String, source: io::Error },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize, Default)]
pub struct Place {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub country: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub state: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub city: Option<String>,
}

/// One GPS observation.
#[derive(Debug, Clone, PartialEq)]
pub struct Ping {
    pub truck_id: String,
    pub position: GeoPoint,
    pub timestamp: Timestamp,
    /// Local timezone offset; carried for schema fidelity, unused by features.
    pub tz_offset_minutes: i32,
    pub place: Place,
}

impl Ping {
    pub fn new(truck_id: impl Into<String>, position: GeoPoint, timestamp: Timestamp) -> Result<Self, DomainError> {
        let truck_id = truck_id.into();
        if truck_id.is_empty() {
            return Err(DomainError::EmptyTruckId);
        }
        if timestamp <= 0 {
            return Err(DomainError::BadTimestamp(timestamp));
        }
        Ok(Self {
            truck_id,
            position,
            timestamp,
            tz_offset_minutes: 0,
            place: Place::default(),
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Stop {
    pub location: GeoPoint,
    pub appointment: Timestamp,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Shipment {
    pub shipment_id: String,
    pub pickup: Stop,
    pub dropoff: Stop,
    pub carrier_id: String,
}

impl Shipment {
    pub fn new(
        shipment_id: impl Into<String>,
        carrier_id: impl Into<String>,
        pickup: Stop,
        dropoff: Stop,
    ) -> Result<Self, DomainError> {
        for t in [pickup.appointment, dropoff.appointment] {
            if t <= 0 {
                return Err(DomainError::BadTimestamp(t));
            }
        }
        if pickup.appointment >= dropoff.appointment {
            return Err(DomainError::AppointmentOrder {
                pickup: pickup.appointment,
                dropoff: dropoff.appointment,
            });
        }
        if haversine_km(&pickup.location, &dropoff.location) <= 0.0 {
            return Err(DomainError::ZeroLengthShipment);
        }
        Ok(Self {
            shipment_id: shipment_id.into(),
            pickup,
            dropoff,
            carrier_id: carrier_id.into(),
        })
    }

    pub fn haul_km(&self) -> f64 {
        haversine_km(&self.pickup.location, &self.dropoff.location)
    }

    /// Interval used to window candidate pingsets for this shipment.
    pub fn ping_window(&self) -> (Timestamp, Timestamp) {
        (
            self.pickup.appointment - WINDOW_MARGIN,
            self.dropoff.appointment + WINDOW_MARGIN,
        )
    }
}

/// Time-ordered pings of one truck.
#[derive(Debug, Clone, PartialEq)]
pub struct Pingset {
    truck_id: String,
    pings: Vec<Ping>,
}

impl Pingset {
    /// Builds a pingset, sorting pings into canonical time order.
    pub fn new(truck_id: impl Into<String>, mut pings: Vec<Ping>) -> Result<Self, DomainError> {
        let truck_id = truck_id.into();
        if truck_id.is_empty() {
            return Err(DomainError::EmptyTruckId);
        }
        if let Some(p) = pings.iter().find(|p| p.truck_id != truck_id) {
            return Err(DomainError::MixedTrucks {
                expected: truck_id,
                found: p.truck_id.clone(),
            });
        }
        pings.sort_by(canonical_order);
        Ok(Self { truck_id, pings })
    }

    pub fn empty(truck_id: impl Into<String>) -> Self {
        Self {
            truck_id: truck_id.into(),
            pings: Vec::new(),
        }
    }

    pub fn truck_id(&self) -> &str {
        &self.truck_id
    }

    pub fn pings(&self) -> &[Ping] {
        &self.pings
    }

    pub fn len(&self) -> usize {
        self.pings.len()
    }

    pub fn is_empty(&self) -> bool {
        self.pings.is_empty()
    }

    pub fn latest(&self) -> Option<&Ping> {
        self.pings.last()
    }

    pub fn first_ts(&self) -> Option<Timestamp> {
        self.pings.first().map(|p| p.timestamp)
    }

    pub fn last_ts(&self) -> Option<Timestamp> {
        self.pings.last().map(|p| p.timestamp)
    }

    /// The first `n` pings (or all of them).
    pub fn prefix(&self, n: usize) -> Pingset {
        Pingset {
            truck_id: self.truck_id.clone(),
            pings: self.pings[..n.min(self.pings.len())].to_vec(),
        }
    }

    /// Pings with `start <= t <= end`.
    pub fn window(&self, start: Timestamp, end: Timestamp) -> Pingset {
        let lo = self.pings.partition_point(|p| p.timestamp < start);
        let hi = self.pings.partition_point(|p| p.timestamp <= end);
        Pingset {
            truck_id: self.truck_id.clone(),
            pings: if lo < hi {
                self.pings[lo..hi].to_vec()
            } else {
                Vec::new()
            },
        }
    }

    pub fn push(&mut self, ping: Ping) -> Result<(), DomainError> {
        if ping.truck_id != self.truck_id {
            return Err(DomainError::MixedTrucks {
                expected: self.truck_id.clone(),
                found: ping.truck_id,
            });
        }
        if self.last_ts().is_some_and(|t| t > ping.timestamp) {
            return Err(DomainError::Unordered);
        }
        self.pings.push(ping);
        Ok(())
    }
}

/// Time order, ties broken by position so the result never depends on input order.
fn canonical_order(a: &Ping, b: &Ping) -> std::cmp::Ordering {
    a.timestamp
        .cmp(&b.timestamp)
        .then_with(|| a.position.lat().total_cmp(&b.position.lat()))
        .then_with(|| a.position.lon().total_cmp(&b.position.lon()))
}

/// The truck's pings inside the closed interval `[start, end]`, sorted.
pub fn window_pingset(pings: &[Ping], truck: &str, start: Timestamp, end: Timestamp) -> Pingset {
    let mut selected: Vec<Ping> = pings
        .iter()
        .filter(|p| p.truck_id == truck && p.timestamp >= start && p.timestamp <= end)
        .cloned()
        .collect();
    selected.sort_by(canonical_order);
    Pingset {
        truck_id: truck.to_string(),
        pings: selected,
    }
}

/// Groups pings by truck into pingsets, ordered by truck id.
pub fn group_by_truck(pings: &[Ping]) -> Vec<Pingset> {
    let mut by_truck: HashMap<&str, Vec<Ping>> = HashMap::new();
    for p in pings {
        by_truck.entry(p.truck_id.as_str()).or_default().push(p.clone());
    }
    let mut out: Vec<Pingset> = by_truck
        .into_iter()
        .map(|(id, pings)| Pingset::new(id, pings).expect("grouped by truck"))
        .collect();
    out.sort_by(|a, b| a.truck_id.cmp(&b.truck_id));
    out
}

// ---------------------------------------------------------------------------
// Files
// ---------------------------------------------------------------------------

#[derive(Debug, Serialize, Deserialize)]
struct PingRecord {
    truck_id: String,
    lat: f64,
    lon: f64,
    ts_utc: Timestamp,
    tz_offset_min: i32,
    #[serde(flatten)]
    place: Place,
}

#[derive(Debug, Serialize, Deserialize)]
struct ShipmentRecord {
    shipment_id: String,
    carrier_id: String,
    pickup_lat: f64,
    pickup_lon: f64,
    pickup_appt_utc: Timestamp,
    drop_lat: f64,
    drop_lon: f64,
    drop_appt_utc: Timestamp,
}

/// A line that could not be turned into a record.
#[derive(Debug, Clone, PartialEq)]
pub struct SkippedLine {
    pub line: usize,
    pub reason: String,
}

/// Records read from a file along with the lines that were skipped.
#[derive(Debug, Clone)]
pub struct Loaded<T> {
    pub records: Vec<T>,
    pub skipped: Vec<SkippedLine>,
}

fn read_jsonl<R, T, F>(path: &Path, convert: F) -> Result<Loaded<T>, LoadError>
where
    R: for<'de> Deserialize<'de>,
    F: Fn(R) -> Result<T, String>,
{
    let io_err = |source| LoadError::Io {
        path: path.display().to_string(),
        source,
    };
    let reader = BufReader::new(File::open(path).map_err(io_err)?);
    let mut records = Vec::new();
    let mut skipped = Vec::new();
    for (i, line) in reader.lines().enumerate() {
        let line = line.map_err(io_err)?;
        if line.trim().is_empty() {
            continue;
        }
        match serde_json::from_str::<R>(&line)
            .map_err(|e| e.to_string())
            .and_then(&convert)
        {
            Ok(r) => records.push(r),
            Err(reason) => skipped.push(SkippedLine { line: i + 1, reason }),
        }
    }
    if !skipped.is_empty() {
        log::warn!("{}: skipped {} malformed line(s)", path.display(), skipped.len());
    }
    Ok(Loaded { records, skipped })
}

/// Reads a ping file; malformed lines are skipped and reported.
pub fn load_pings(path: &Path) -> Result<Loaded<Ping>, LoadError> {
    read_jsonl(path, |r: PingRecord| {
        let position = GeoPoint::new(r.lat, r.lon).map_err(|e| e.to_string())?;
        let mut ping = Ping::new(r.truck_id, position, r.ts_utc).map_err(|e| e.to_string())?;
        ping.tz_offset_minutes = r.tz_offset_min;
        ping.place = r.place;
        Ok(ping)
    })
}

pub fn load_shipments(path: &Path) -> Result<Loaded<Shipment>, LoadError> {
    read_jsonl(path, |r: ShipmentRecord| {
        let pickup = Stop {
            location: GeoPoint::new(r.pickup_lat, r.pickup_lon).map_err(|e| e.to_string())?,
            appointment: r.pickup_appt_utc,
        };
        let dropoff = Stop {
            location: GeoPoint::new(r.drop_lat, r.drop_lon).map_err(|e| e.to_string())?,
            appointment: r.drop_appt_utc,
        };
        Shipment::new(r.shipment_id, r.carrier_id, pickup, dropoff).map_err(|e| e.to_string())
    })
}

fn write_jsonl<T: Serialize>(path: &Path, records: impl Iterator<Item = T>) -> io::Result<()> {
    let mut w = BufWriter::new(File::create(path)?);
    for r in records {
        serde_json::to_writer(&mut w, &r)?;
        w.write_all(b"\n")?;
    }
    w.flush()
}

pub fn write_pings<'a>(path: &Path, pings: impl IntoIterator<Item = &'a Ping>) -> io::Result<()> {
    write_jsonl(
        path,
        pings.into_iter().map(|p| PingRecord {
            truck_id: p.truck_id.clone(),
            lat: p.position.lat(),
            lon: p.position.lon(),
            ts_utc: p.timestamp,
            tz_offset_min: p.tz_offset_minutes,
            place: p.place.clone(),
        }),
    )
}

pub fn write_shipments<'a>(path: &Path, shipments: impl IntoIterator<Item = &'a Shipment>) -> io::Result<()> {
    write_jsonl(
        path,
        shipments.into_iter().map(|s| ShipmentRecord {
            shipment_id: s.shipment_id.clone(),
            carrier_id: s.carrier_id.clone(),
            pickup_lat: s.pickup.location.lat(),
            pickup_lon: s.pickup.location.lon(),
            pickup_appt_utc: s.pickup.appointment,
            drop_lat: s.dropoff.location.lat(),
            drop_lon: s.dropoff.location.lon(),
            drop_appt_utc: s.dropoff.appointment,
        }),
    )
}
