//! Historical lane mapping: lane code to the trajectory cells (with ping
//! counts) that completed journeys on that lane passed through.
//!
//! Contributions are kept in per-day buckets so a rolling window can drop
//! expired days without replaying history. Lookups see an aggregated record
//! that is maintained incrementally.

use std::collections::{BTreeMap, HashMap};
use std::fs::File;
use std::io::{self, BufRead, BufReader, BufWriter, Write};
use std::path::Path;
use std::sync::{Arc, RwLock};

use chrono::{DateTime, NaiveDate};
use thiserror::Error;

use crate::domain::{Pingset, Shipment, Timestamp};
use crate::geo::{lane_code, trajectory_cell, GeoError, HexCell, LaneCode, TRAJECTORY_RES};

pub const DEFAULT_WINDOW_DAYS: u32 = 365;
const SECS_PER_DAY: i64 = 86_400;
const HEADER: &str = "# itm-lanes v1";

#[derive(Debug, Error)]
pub enum LaneStoreError {
    #[error("window_days must be positive")]
    InvalidWindow,
    #[error("i/o error: {0}")]
    Io(#[from] io::Error),
    #[error("line {line}: {msg}")]
    Format { line: usize, msg: String },
}

fn format_err(line: usize, msg: impl Into<String>) -> LaneStoreError {
    LaneStoreError::Format { line, msg: msg.into() }
}

/// Days since the Unix epoch (UTC).
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct DayBucket(i64);

impl DayBucket {
    pub fn of(ts: Timestamp) -> Self {
        DayBucket(ts.div_euclid(SECS_PER_DAY))
    }

    pub fn start(&self) -> Timestamp {
        self.0 * SECS_PER_DAY
    }

    fn to_date_string(self) -> String {
        DateTime::from_timestamp(self.start(), 0)
            .expect("day bucket within chrono range")
            .format("%Y-%m-%d")
            .to_string()
    }

    fn parse_date(s: &str) -> Option<Self> {
        let d = NaiveDate::parse_from_str(s, "%Y-%m-%d").ok()?;
        let ts = d.and_hms_opt(0, 0, 0)?.and_utc().timestamp();
        Some(DayBucket::of(ts))
    }
}

/// Aggregated view of one lane.
#[derive(Debug, Clone, PartialEq)]
pub struct LaneRecord {
    pub lane: LaneCode,
    /// Resolution-6 cell to number of pings observed in it; every count >= 1.
    pub cell_counts: HashMap<HexCell, u64>,
    /// Start (UTC midnight) of the most recent contributing day.
    pub last_updated: Timestamp,
}

impl LaneRecord {
    pub fn contains(&self, cell: &HexCell) -> bool {
        self.cell_counts.contains_key(cell)
    }

    /// The record with one journey's contribution taken back out.
    pub fn without(&self, pingset: &Pingset) -> LaneRecord {
        let mut out = self.clone();
        for ping in pingset.pings() {
            let cell = trajectory_cell(&ping.position);
            if let Some(n) = out.cell_counts.get_mut(&cell) {
                *n -= 1;
                if *n == 0 {
                    out.cell_counts.remove(&cell);
                }
            }
        }
        out
    }
}

#[derive(Debug, Clone, PartialEq)]
struct LaneHistory {
    buckets: BTreeMap<DayBucket, BTreeMap<HexCell, u64>>,
    record: LaneRecord,
}

impl LaneHistory {
    fn new(lane: LaneCode) -> Self {
        Self {
            buckets: BTreeMap::new(),
            record: LaneRecord {
                lane,
                cell_counts: HashMap::new(),
                last_updated: 0,
            },
        }
    }

    fn add(&mut self, day: DayBucket, cell: HexCell, count: u64) {
        *self.buckets.entry(day).or_default().entry(cell).or_insert(0) += count;
        *self.record.cell_counts.entry(cell).or_insert(0) += count;
        self.record.last_updated = self.record.last_updated.max(day.start());
    }

    /// Drops buckets older than `cutoff`; returns whether the lane is now empty.
    fn evict_before(&mut self, cutoff: DayBucket) -> bool {
        let keep = self.buckets.split_off(&cutoff);
        let expired = std::mem::replace(&mut self.buckets, keep);
        for (_, cells) in expired {
            for (cell, n) in cells {
                let slot = self
                    .record
                    .cell_counts
                    .get_mut(&cell)
                    .expect("aggregate tracks buckets");
                *slot -= n;
                if *slot == 0 {
                    self.record.cell_counts.remove(&cell);
                }
            }
        }
        self.record.last_updated = self.buckets.keys().next_back().map_or(0, |d| d.start());
        self.buckets.is_empty()
    }
}

/// Tally of an ingestion pass.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct IngestReport {
    pub ingested: usize,
    pub skipped_same_cell: usize,
    pub evicted_lanes: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct LaneStore {
    lanes: HashMap<LaneCode, LaneHistory>,
    window_days: u32,
}

impl Default for LaneStore {
    fn default() -> Self {
        Self {
            lanes: HashMap::new(),
            window_days: DEFAULT_WINDOW_DAYS,
        }
    }
}

impl LaneStore {
    pub fn new(window_days: u32) -> Result<Self, LaneStoreError> {
        if window_days == 0 {
            return Err(LaneStoreError::InvalidWindow);
        }
        Ok(Self {
            lanes: HashMap::new(),
            window_days,
        })
    }

    pub fn window_days(&self) -> u32 {
        self.window_days
    }

    pub fn len(&self) -> usize {
        self.lanes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.lanes.is_empty()
    }

    pub fn lookup(&self, lane: &LaneCode) -> Option<&LaneRecord> {
        self.lanes.get(lane).map(|h| &h.record)
    }

    pub fn records(&self) -> impl Iterator<Item = &LaneRecord> {
        self.lanes.values().map(|h| &h.record)
    }

    /// Adds one completed journey. The contribution is dated by the dropoff
    /// appointment.
    pub fn ingest(&mut self, shipment: &Shipment, pingset: &Pingset) -> Result<(), GeoError> {
        let lane = lane_code(&shipment.pickup.location, &shipment.dropoff.location)?;
        if pingset.is_empty() {
            return Ok(());
        }
        let day = DayBucket::of(shipment.dropoff.appointment);
        let history = self.lanes.entry(lane).or_insert_with(|| LaneHistory::new(lane));
        for ping in pingset.pings() {
            history.add(day, trajectory_cell(&ping.position), 1);
        }
        Ok(())
    }

    fn ingest_all(&mut self, completed: &[(Shipment, Pingset)]) -> IngestReport {
        let mut report = IngestReport::default();
        for (s, p) in completed {
            match self.ingest(s, p) {
                Ok(()) => report.ingested += 1,
                Err(GeoError::SameCellLane(_)) => report.skipped_same_cell += 1,
                Err(e) => unreachable!("validated shipment produced {e}"),
            }
        }
        report
    }

    /// Removes contributions whose day is `window_days` or more before `now`.
    pub fn evict(&mut self, now: Timestamp) -> usize {
        let cutoff = DayBucket(DayBucket::of(now).0 - i64::from(self.window_days) + 1);
        let before = self.lanes.len();
        self.lanes.retain(|_, h| !h.evict_before(cutoff));
        before - self.lanes.len()
    }

    // -----------------------------------------------------------------------
    // Persistence
    // -----------------------------------------------------------------------

    pub fn write_to<W: Write>(&self, mut w: W) -> io::Result<()> {
        writeln!(w, "{HEADER} window_days={}", self.window_days)?;
        let mut lanes: Vec<_> = self.lanes.iter().collect();
        lanes.sort_by_key(|(lane, _)| **lane);
        let mut n = 0usize;
        for (lane, history) in lanes {
            for (day, cells) in &history.buckets {
                write!(w, "{lane} {}", day.to_date_string())?;
                for (cell, count) in cells {
                    write!(w, " {cell}={count}")?;
                }
                writeln!(w)?;
                n += 1;
            }
        }
        writeln!(w, "# end lines={n}")
    }

    pub fn read_from<R: BufRead>(r: R) -> Result<Self, LaneStoreError> {
        let mut lines = r.lines().enumerate();
        let (_, header) = lines.next().ok_or_else(|| format_err(1, "empty file"))?;
        let header = header?;
        let window = header
            .strip_prefix(HEADER)
            .and_then(|rest| rest.trim().strip_prefix("window_days="))
            .and_then(|v| v.parse::<u32>().ok())
            .ok_or_else(|| format_err(1, "missing or malformed header"))?;
        let mut store = LaneStore::new(window).map_err(|_| format_err(1, "window_days must be positive"))?;
        let mut data_lines = 0usize;
        for (i, line) in lines {
            let lineno = i + 1;
            let line = line?;
            if let Some(rest) = line.strip_prefix("# end lines=") {
                let declared: usize = rest
                    .trim()
                    .parse()
                    .map_err(|_| format_err(lineno, "malformed trailer"))?;
                if declared != data_lines {
                    return Err(format_err(
                        lineno,
                        format!("trailer declares {declared} lines, read {data_lines}"),
                    ));
                }
                return Ok(store);
            }
            if line.starts_with('#') || line.trim().is_empty() {
                continue;
            }
            store.parse_line(&line, lineno)?;
            data_lines += 1;
        }
        Err(format_err(data_lines + 2, "truncated file: missing end trailer"))
    }

    fn parse_line(&mut self, line: &str, lineno: usize) -> Result<(), LaneStoreError> {
        let mut parts = line.split_ascii_whitespace();
        let lane: LaneCode = parts
            .next()
            .ok_or_else(|| format_err(lineno, "missing lane code"))?
            .parse()
            .map_err(|e: GeoError| format_err(lineno, e.to_string()))?;
        let day = parts
            .next()
            .and_then(DayBucket::parse_date)
            .ok_or_else(|| format_err(lineno, "missing or malformed date"))?;
        let history = self.lanes.entry(lane).or_insert_with(|| LaneHistory::new(lane));
        if history.buckets.contains_key(&day) {
            return Err(format_err(
                lineno,
                format!("duplicate bucket {lane} {}", day.to_date_string()),
            ));
        }
        let mut any = false;
        for entry in parts {
            let (cell, count) = entry
                .split_once('=')
                .ok_or_else(|| format_err(lineno, format!("malformed cell entry `{entry}`")))?;
            let cell: HexCell = cell.parse().map_err(|e: GeoError| format_err(lineno, e.to_string()))?;
            if cell.resolution() != TRAJECTORY_RES {
                return Err(format_err(
                    lineno,
                    format!("cell {cell} is not resolution {TRAJECTORY_RES}"),
                ));
            }
            let count: u64 = count
                .parse()
                .ok()
                .filter(|&c| c >= 1)
                .ok_or_else(|| format_err(lineno, format!("malformed count in `{entry}`")))?;
            history.add(day, cell, count);
            any = true;
        }
        if !any {
            return Err(format_err(lineno, "bucket without cells"));
        }
        Ok(())
    }

    pub fn save(&self, path: &Path) -> Result<(), LaneStoreError> {
        let mut w = BufWriter::new(File::create(path)?);
        self.write_to(&mut w)?;
        w.flush()?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self, LaneStoreError> {
        Self::read_from(BufReader::new(File::open(path)?))
    }
}

/// Builds a store from ground-truth (shipment, pingset) pairs.
pub fn build_lane_store(completed: &[(Shipment, Pingset)]) -> (LaneStore, IngestReport) {
    let mut store = LaneStore::default();
    let report = store.ingest_all(completed);
    (store, report)
}

/// Adds new completed journeys and applies the rolling window at `now`.
pub fn refresh(mut store: LaneStore, new: &[(Shipment, Pingset)], now: Timestamp) -> (LaneStore, IngestReport) {
    let mut report = store.ingest_all(new);
    report.evicted_lanes = store.evict(now);
    (store, report)
}

/// Store shared between many readers and a single refreshing writer.
/// Readers hold an `Arc` snapshot; a refresh swaps the snapshot atomically.
#[derive(Debug, Default)]
pub struct SharedLaneStore {
    current: RwLock<Arc<LaneStore>>,
}

impl SharedLaneStore {
    pub fn new(store: LaneStore) -> Self {
        Self {
            current: RwLock::new(Arc::new(store)),
        }
    }

    pub fn snapshot(&self) -> Arc<LaneStore> {
        Arc::clone(&self.current.read().expect("lane store lock poisoned"))
    }

    pub fn refresh(&self, new: &[(Shipment, Pingset)], now: Timestamp) -> IngestReport {
        let mut guard = self.current.write().expect("lane store lock poisoned");
        let (next, report) = refresh((**guard).clone(), new, now);
        *guard = Arc::new(next);
        report
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::domain::{Ping, Stop};
    use crate::geo::GeoPoint;
    use proptest::prelude::*;

    const DAY: i64 = SECS_PER_DAY;
    const T0: i64 = 1_704_067_200; // 2024-01-01

    fn pt(lat: f64, lon: f64) -> GeoPoint {
        GeoPoint::new(lat, lon).unwrap()
    }

    fn shipment(id: &str, drop_ts: i64) -> Shipment {
        Shipment::new(
            id,
            "C",
            Stop {
                location: pt(37.3382, -121.8863),
                appointment: drop_ts - 8 * 3600,
            },
            Stop {
                location: pt(34.0522, -118.2437),
                appointment: drop_ts,
            },
        )
        .unwrap()
    }

    /// Pings placed at the centres of the given cells (A, B, C, D below).
    fn pingset_at(truck: &str, points: &[GeoPoint]) -> Pingset {
        let pings = points
            .iter()
            .enumerate()
            .map(|(i, p)| Ping::new(truck, *p, T0 + i as i64 * 300).unwrap())
            .collect();
        Pingset::new(truck, pings).unwrap()
    }

    fn cells() -> [GeoPoint; 4] {
        [pt(36.5, -120.5), pt(36.0, -120.0), pt(35.5, -119.5), pt(35.0, -119.0)]
    }

    fn lane() -> LaneCode {
        let s = shipment("x", T0);
        lane_code(&s.pickup.location, &s.dropoff.location).unwrap()
    }

    #[test]
    fn counts_pings_per_cell() {
        let [a, b, ..] = cells();
        let (store, report) = build_lane_store(&[(shipment("S1", T0), pingset_at("T", &[a, a, b]))]);
        assert_eq!(report.ingested, 1);
        let rec = store.lookup(&lane()).unwrap();
        assert_eq!(rec.cell_counts[&trajectory_cell(&a)], 2);
        assert_eq!(rec.cell_counts[&trajectory_cell(&b)], 1);
        assert_eq!(rec.cell_counts.len(), 2);
        assert_eq!(rec.last_updated, DayBucket::of(T0).start());
    }

    #[test]
    fn counts_add_across_shipments() {
        let [a, b, c, _] = cells();
        let (store, _) = build_lane_store(&[
            (shipment("S1", T0), pingset_at("T1", &[a, b])),
            (shipment("S2", T0 + DAY), pingset_at("T2", &[b, c])),
        ]);
        let rec = store.lookup(&lane()).unwrap();
        let got: Vec<u64> = [a, b, c].iter().map(|p| rec.cell_counts[&trajectory_cell(p)]).collect();
        assert_eq!(got, vec![1, 2, 1]);
    }

    #[test]
    fn empty_input_gives_empty_store() {
        let (store, _) = build_lane_store(&[]);
        assert!(store.is_empty());
        assert!(store.lookup(&lane()).is_none());
    }

    #[test]
    fn same_cell_lanes_are_tallied() {
        let p = pt(40.0, -100.0);
        let s = Shipment::new(
            "S",
            "C",
            Stop {
                location: p,
                appointment: T0,
            },
            Stop {
                location: p.destination(0.0, 2.0),
                appointment: T0 + 3600,
            },
        )
        .unwrap();
        let (store, report) = build_lane_store(&[(s, pingset_at("T", &[p]))]);
        assert!(store.is_empty());
        assert_eq!(report.skipped_same_cell, 1);
    }

    #[test]
    fn refresh_identity_and_enrichment() {
        let [a, b, c, _] = cells();
        let (store, _) = build_lane_store(&[(shipment("S1", T0), pingset_at("T", &[a, b]))]);
        let (same, _) = refresh(store.clone(), &[], T0 + DAY);
        assert_eq!(same, store);
        let (enriched, _) = refresh(store, &[(shipment("S2", T0 + DAY), pingset_at("T", &[c]))], T0 + DAY);
        assert!(enriched.lookup(&lane()).unwrap().cell_counts[&trajectory_cell(&c)] >= 1);
    }

    #[test]
    fn old_contributions_are_evicted() {
        let [a, b, ..] = cells();
        let now = T0 + 400 * DAY;
        let (store, _) = build_lane_store(&[
            (shipment("old", T0), pingset_at("T", &[a])),
            (shipment("new", now - 10 * DAY), pingset_at("T", &[b])),
        ]);
        let (store, report) = refresh(store, &[], now);
        assert_eq!(report.evicted_lanes, 0);
        let rec = store.lookup(&lane()).unwrap();
        assert!(!rec.contains(&trajectory_cell(&a)));
        assert!(rec.contains(&trajectory_cell(&b)));
        assert_eq!(rec.last_updated, DayBucket::of(now - 10 * DAY).start());

        let (gone, report) = refresh(store, &[], now + 400 * DAY);
        assert!(gone.is_empty());
        assert_eq!(report.evicted_lanes, 1);
    }

    #[test]
    fn window_boundary() {
        let [a, ..] = cells();
        let (store, _) = build_lane_store(&[(shipment("S", T0), pingset_at("T", &[a]))]);
        let (kept, _) = refresh(store.clone(), &[], T0 + 364 * DAY);
        assert_eq!(kept.len(), 1);
        let (dropped, _) = refresh(store, &[], T0 + 365 * DAY);
        assert!(dropped.is_empty());
    }

    #[test]
    fn lookup_does_not_change_store() {
        let [a, b, ..] = cells();
        let (store, _) = build_lane_store(&[(shipment("S", T0), pingset_at("T", &[a, b]))]);
        let mut before = Vec::new();
        store.write_to(&mut before).unwrap();
        let _ = store.lookup(&lane());
        let _ = store.lookup(&LaneCode::new(lane().dest(), lane().origin()).unwrap());
        let mut after = Vec::new();
        store.write_to(&mut after).unwrap();
        assert_eq!(before, after);
    }

    #[test]
    fn empty_store_roundtrip() {
        let store = LaneStore::new(30).unwrap();
        let mut buf = Vec::new();
        store.write_to(&mut buf).unwrap();
        assert_eq!(LaneStore::read_from(&buf[..]).unwrap(), store);
    }

    #[test]
    fn truncated_file_is_rejected() {
        let [a, b, c, d] = cells();
        let (store, _) = build_lane_store(&[
            (shipment("S1", T0), pingset_at("T", &[a, b])),
            (shipment("S2", T0 + DAY), pingset_at("T", &[c, d])),
        ]);
        let mut buf = Vec::new();
        store.write_to(&mut buf).unwrap();
        let text = String::from_utf8(buf).unwrap();
        // cut at a line boundary and mid-line
        let lines: Vec<&str> = text.lines().collect();
        let cut_lines = lines[..lines.len() - 1].join("\n");
        assert!(matches!(
            LaneStore::read_from(cut_lines.as_bytes()),
            Err(LaneStoreError::Format { .. })
        ));
        let cut_mid = &text[..text.len() / 2];
        assert!(matches!(
            LaneStore::read_from(cut_mid.as_bytes()),
            Err(LaneStoreError::Format { .. })
        ));
    }

    #[test]
    fn format_errors_carry_line_numbers() {
        let bad = format!("{HEADER} window_days=365\n{} 2024-01-01 zz=1\n# end lines=1\n", lane());
        match LaneStore::read_from(bad.as_bytes()) {
            Err(LaneStoreError::Format { line, .. }) => assert_eq!(line, 2),
            other => panic!("expected format error, got {other:?}"),
        }
        assert!(LaneStore::read_from("garbage\n".as_bytes()).is_err());
        assert!(LaneStore::new(0).is_err());
    }

    #[test]
    fn line_format_is_stable() {
        let [a, ..] = cells();
        let (store, _) = build_lane_store(&[(shipment("S", T0), pingset_at("T", &[a, a]))]);
        let mut buf = Vec::new();
        store.write_to(&mut buf).unwrap();
        let text = String::from_utf8(buf).unwrap();
        let expected = format!(
            "{HEADER} window_days=365\n{} 2024-01-01 {}=2\n# end lines=1\n",
            lane(),
            trajectory_cell(&a)
        );
        assert_eq!(text, expected);
    }

    #[test]
    fn shared_store_swaps_snapshots() {
        let [a, b, ..] = cells();
        let shared = SharedLaneStore::new(LaneStore::default());
        let before = shared.snapshot();
        shared.refresh(&[(shipment("S", T0), pingset_at("T", &[a, b]))], T0);
        assert!(before.is_empty());
        assert_eq!(shared.snapshot().len(), 1);
    }

    fn arb_journeys() -> impl Strategy<Value = Vec<(Shipment, Pingset)>> {
        let origins = [pt(37.3, -121.9), pt(40.7, -74.0), pt(41.9, -87.6)];
        let dests = [pt(34.05, -118.24), pt(39.95, -75.17), pt(39.1, -84.5)];
        proptest::collection::vec(
            (
                0usize..3,
                0usize..3,
                0i64..30,
                proptest::collection::vec((-0.5f64..0.5, -0.5f64..0.5), 1..8),
            ),
            0..12,
        )
        .prop_map(move |specs| {
            specs
                .into_iter()
                .enumerate()
                .map(|(i, (o, d, day, offsets))| {
                    let s = Shipment::new(
                        format!("S{i}"),
                        "C",
                        Stop {
                            location: origins[o],
                            appointment: T0 + day * DAY,
                        },
                        Stop {
                            location: dests[d],
                            appointment: T0 + day * DAY + 3600,
                        },
                    )
                    .unwrap();
                    let pts: Vec<GeoPoint> = offsets
                        .iter()
                        .map(|(dl, dn)| pt(origins[o].lat() + dl, origins[o].lon() + dn))
                        .collect();
                    (s, pingset_at(&format!("T{i}"), &pts))
                })
                .collect()
        })
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(64))]

        #[test]
        fn build_equals_refresh_in_any_order(journeys in arb_journeys(), split in 0usize..12) {
            let split = split.min(journeys.len());
            let (whole, _) = build_lane_store(&journeys);
            let (left, right) = journeys.split_at(split);
            let now = T0;
            let (ab, _) = refresh(refresh(LaneStore::default(), left, now).0, right, now);
            let (ba, _) = refresh(refresh(LaneStore::default(), right, now).0, left, now);
            prop_assert_eq!(&whole, &ab);
            prop_assert_eq!(&whole, &ba);
        }

        #[test]
        fn eviction_never_increases_counts(journeys in arb_journeys(), d1 in 0i64..400, d2 in 0i64..400) {
            let (store, _) = build_lane_store(&journeys);
            let (n1, n2) = (T0 + d1.min(d2) * DAY, T0 + d1.max(d2) * DAY);
            let (s1, _) = refresh(store, &[], n1);
            let (s2, _) = refresh(s1.clone(), &[], n2);
            for rec in s2.records() {
                let earlier = s1.lookup(&rec.lane).unwrap();
                for (cell, n) in &rec.cell_counts {
                    prop_assert!(*n <= earlier.cell_counts[cell]);
                }
            }
            prop_assert!(s2.records().all(|r| r.cell_counts.keys().all(|c| c.resolution() == TRAJECTORY_RES)));
        }

        #[test]
        fn persistence_roundtrip(journeys in arb_journeys()) {
            let (store, _) = build_lane_store(&journeys);
            let mut buf = Vec::new();
            store.write_to(&mut buf).unwrap();
            prop_assert_eq!(LaneStore::read_from(&buf[..]).unwrap(), store);
        }
    }
}
