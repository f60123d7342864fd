//! Coverage, precision and destination-proximity metrics; shadow comparison
//! of the learned matcher against the rule baseline; ablation runs.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::fs::File;
use std::io::{self, BufRead, BufReader, BufWriter, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::domain::{Pingset, Shipment, HOUR};
use crate::features::FeatureAccumulator;
use crate::geo::{haversine_km, lane_code, GeoPoint};
use crate::lanestore::LaneStore;
use crate::model::BoostedModel;
use crate::pipeline::{
    itm1_match, replay_shipment, AssignmentPolicy, Confidence, DecisionRecord, Engine, EvalPoint, Fleet, PipelineConfig,
};
use crate::sim::GroundTruth;

/// A truck "visits" a stop when it pings within this distance...
pub const VISIT_RADIUS_KM: f64 = 1.0;
/// ...and within this many seconds of the appointment.
pub const VISIT_SLACK_S: i64 = 2 * HOUR;

#[derive(Debug, Error)]
pub enum EvalError {
    #[error("median of an empty set")]
    EmptySet,
    #[error("i/o error: {0}")]
    Io(#[from] io::Error),
    #[error("decision log line {line}: {msg}")]
    Format { line: usize, msg: String },
}

/// Whether `truck` visited both stops of `s` on time.
pub fn is_correct(s: &Shipment, truck: &Pingset) -> bool {
    let visits = |stop: &crate::domain::Stop| {
        truck.pings().iter().any(|p| {
            (p.timestamp - stop.appointment).abs() <= VISIT_SLACK_S
                && haversine_km(&p.position, &stop.location) <= VISIT_RADIUS_KM
        })
    };
    visits(&s.pickup) && visits(&s.dropoff)
}

/// Remaining distance to the dropoff as a percentage of the full haul.
pub fn dpp(s: &Shipment, latest: &GeoPoint) -> f64 {
    100.0 * haversine_km(latest, &s.dropoff.location) / s.haul_km()
}

/// Median; an even count averages the middle pair.
pub fn mdd(distances: &[f64]) -> Result<f64, EvalError> {
    if distances.is_empty() {
        return Err(EvalError::EmptySet);
    }
    let mut v = distances.to_vec();
    v.sort_by(f64::total_cmp);
    let n = v.len();
    Ok(if n % 2 == 1 {
        v[n / 2]
    } else {
        (v[n / 2 - 1] + v[n / 2]) / 2.0
    })
}

/// Area under the ROC curve via the rank-sum statistic (ties get half credit).
pub fn roc_auc(labels: &[u8], scores: &[f64]) -> Option<f64> {
    assert_eq!(labels.len(), scores.len());
    let mut idx: Vec<usize> = (0..scores.len()).collect();
    idx.sort_by(|&a, &b| scores[a].total_cmp(&scores[b]));
    let n_pos = labels.iter().filter(|&&l| l == 1).count();
    let n_neg = labels.len() - n_pos;
    if n_pos == 0 || n_neg == 0 {
        return None;
    }
    let mut rank_sum = 0.0;
    let mut i = 0;
    while i < idx.len() {
        let mut j = i;
        while j + 1 < idx.len() && scores[idx[j + 1]] == scores[idx[i]] {
            j += 1;
        }
        let avg_rank = (i + j) as f64 / 2.0 + 1.0;
        rank_sum += idx[i..=j].iter().filter(|&&k| labels[k] == 1).count() as f64 * avg_rank;
        i = j + 1;
    }
    let u = rank_sum - (n_pos * (n_pos + 1)) as f64 / 2.0;
    Some(u / (n_pos as f64 * n_neg as f64))
}

// ---------------------------------------------------------------------------
// Reports
// ---------------------------------------------------------------------------

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct Counts {
    pub n_eligible: usize,
    pub n_assigned: usize,
    pub n_correct: usize,
}

impl Counts {
    pub fn coverage(&self) -> f64 {
        if self.n_eligible == 0 {
            0.0
        } else {
            self.n_assigned as f64 / self.n_eligible as f64
        }
    }

    /// Absent when nothing was assigned.
    pub fn precision(&self) -> Option<f64> {
        (self.n_assigned > 0).then(|| self.n_correct as f64 / self.n_assigned as f64)
    }

    fn add(&mut self, assigned: bool, correct: bool) {
        self.n_eligible += 1;
        self.n_assigned += usize::from(assigned);
        self.n_correct += usize::from(assigned && correct);
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub enum DppBucket {
    AtMost(f64),
    AtLeast(f64),
}

impl DppBucket {
    pub const DEFAULT: [DppBucket; 3] = [
        DppBucket::AtMost(25.0),
        DppBucket::AtMost(50.0),
        DppBucket::AtLeast(80.0),
    ];

    pub fn contains(&self, dpp: f64) -> bool {
        match *self {
            DppBucket::AtMost(t) => dpp <= t,
            DppBucket::AtLeast(t) => dpp >= t,
        }
    }

    pub fn label(&self) -> String {
        match *self {
            DppBucket::AtMost(t) => format!("<={t}%"),
            DppBucket::AtLeast(t) => format!(">={t}%"),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BucketStats {
    pub bucket: String,
    pub n: usize,
    pub precision: Option<f64>,
    pub mdd_km: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub name: String,
    pub coverage: f64,
    pub precision: Option<f64>,
    #[serde(flatten)]
    pub counts: Counts,
    pub per_engine: BTreeMap<String, Counts>,
    pub dpp_buckets: Vec<BucketStats>,
    pub distance_strata: BTreeMap<String, Counts>,
}

/// One shipment's outcome under one configuration.
#[derive(Debug, Clone, PartialEq)]
pub struct ShipmentResult {
    pub record: DecisionRecord,
    pub haul_km: f64,
    pub correct: bool,
    pub log: Vec<EvalPoint>,
    /// Correctness of every truck that was ever assigned, for bucket stats.
    pub truck_correct: BTreeMap<String, bool>,
}

fn stratum(haul_km: f64) -> &'static str {
    match haul_km {
        d if d <= 40.0 => "a: <=40 km",
        d if d <= 300.0 => "b: 40-300 km",
        d if d <= 600.0 => "c: 300-600 km",
        _ => "d: >600 km",
    }
}

/// Coverage and precision from decision records and a correctness oracle.
pub fn counts_from_records<'a>(records: impl IntoIterator<Item = (&'a DecisionRecord, bool)>) -> Counts {
    let mut c = Counts::default();
    for (r, correct) in records {
        c.add(r.assigned_truck.is_some(), correct);
    }
    c
}

/// Aggregates per-shipment results into a report.
pub fn summarize(
    name: &str,
    results: &[ShipmentResult],
    shipments: &BTreeMap<String, &Shipment>,
    buckets: &[DppBucket],
) -> EvalReport {
    let counts = counts_from_records(results.iter().map(|r| (&r.record, r.correct)));
    let mut per_engine: BTreeMap<String, Counts> = BTreeMap::new();
    let mut strata: BTreeMap<String, Counts> = BTreeMap::new();
    for r in results {
        let assigned = r.record.assigned_truck.is_some();
        per_engine
            .entry(r.record.engine.to_string())
            .or_default()
            .add(assigned, r.correct);
        strata
            .entry(stratum(r.haul_km).to_string())
            .or_default()
            .add(assigned, r.correct);
    }
    let dpp_buckets = buckets
        .iter()
        .map(|b| {
            let mut hits = Vec::new();
            for r in results {
                let s = shipments[&r.record.shipment_id];
                let first = r.log.iter().find_map(|e| {
                    let truck = e.assigned_truck.as_ref()?;
                    let pos = e.assigned_position?;
                    b.contains(dpp(s, &pos))
                        .then(|| (truck, haversine_km(&pos, &s.dropoff.location)))
                });
                if let Some((truck, dist)) = first {
                    hits.push((r.truck_correct.get(truck).copied().unwrap_or(false), dist));
                }
            }
            let n = hits.len();
            let dists: Vec<f64> = hits.iter().map(|h| h.1).collect();
            BucketStats {
                bucket: b.label(),
                n,
                precision: (n > 0).then(|| hits.iter().filter(|h| h.0).count() as f64 / n as f64),
                mdd_km: mdd(&dists).ok(),
            }
        })
        .collect();
    EvalReport {
        name: name.to_string(),
        coverage: counts.coverage(),
        precision: counts.precision(),
        counts,
        per_engine,
        dpp_buckets,
        distance_strata: strata,
    }
}

/// Evaluation inputs shared by every engine and configuration.
pub struct EvalContext<'a> {
    pub shipments: Vec<&'a Shipment>,
    pub fleet: &'a Fleet,
    pub truth: &'a GroundTruth,
    pub store: &'a LaneStore,
    /// Restrict candidates to the shipment's carrier.
    pub use_carriers: bool,
}

impl EvalContext<'_> {
    fn carriers(&self) -> Option<crate::pipeline::Carriers> {
        self.use_carriers.then(|| self.truth.carriers())
    }

    fn by_id(&self) -> BTreeMap<String, &Shipment> {
        self.shipments.iter().map(|s| (s.shipment_id.clone(), *s)).collect()
    }

    /// Whether `truck` really carried `s`, judged at the true stop locations.
    pub fn correct(&self, s: &Shipment, truck: &str) -> bool {
        let truth = self.truth.true_shipment(s).unwrap_or_else(|| s.clone());
        self.fleet.get(truck).is_some_and(|p| is_correct(&truth, p))
    }

    fn result(&self, s: &Shipment, record: DecisionRecord, log: Vec<EvalPoint>) -> ShipmentResult {
        let mut truck_correct = BTreeMap::new();
        for id in log
            .iter()
            .filter_map(|e| e.assigned_truck.as_ref())
            .chain(record.assigned_truck.as_ref())
        {
            if !truck_correct.contains_key(id) {
                truck_correct.insert(id.clone(), self.correct(s, id));
            }
        }
        let correct = record.assigned_truck.as_ref().is_some_and(|id| truck_correct[id]);
        ShipmentResult {
            record,
            haul_km: s.haul_km(),
            correct,
            log,
            truck_correct,
        }
    }

    /// The learned matcher (with short-haul routing), replayed over time.
    pub fn run_itm2(&self, model: &BoostedModel, cfg: &PipelineConfig) -> Vec<ShipmentResult> {
        let carriers = self.carriers();
        let run = |s: &&Shipment| {
            let out = replay_shipment(s, self.fleet, self.store, model, cfg, carriers.as_ref());
            self.result(s, out.record(&s.shipment_id), out.log)
        };
        parallel_map(&self.shipments, run)
    }

    /// The rule baseline on every shipment.
    pub fn run_itm1(&self, cfg: &PipelineConfig) -> Vec<ShipmentResult> {
        let carriers = self.carriers();
        let run = |s: &&Shipment| {
            let windowed = self.fleet.windowed(s, carriers.as_ref());
            let d = itm1_match(s, &windowed, cfg, carriers.as_ref());
            let pings = windowed.iter().map(Pingset::len).sum();
            self.result(s, DecisionRecord::new(&s.shipment_id, &d, 1, pings), Vec::new())
        };
        parallel_map(&self.shipments, run)
    }
}

fn parallel_map<T: Sync, R: Send>(items: &[T], f: impl Fn(&T) -> R + Sync) -> Vec<R> {
    let threads = std::thread::available_parallelism().map_or(1, |n| n.get()).min(16);
    let chunk = items.len().div_ceil(threads).max(1);
    std::thread::scope(|scope| {
        let handles: Vec<_> = items
            .chunks(chunk)
            .map(|part| scope.spawn(|| part.iter().map(&f).collect::<Vec<R>>()))
            .collect();
        handles
            .into_iter()
            .flat_map(|h| h.join().expect("worker panicked"))
            .collect()
    })
}

#[derive(Debug, Clone)]
pub struct ShadowResult {
    pub itm2: EvalReport,
    pub itm1: EvalReport,
    pub itm2_results: Vec<ShipmentResult>,
    pub itm1_results: Vec<ShipmentResult>,
}

/// Runs both engines on identical requests.
pub fn shadow_run(ctx: &EvalContext<'_>, model: &BoostedModel, cfg: &PipelineConfig) -> ShadowResult {
    let by_id = ctx.by_id();
    let itm2_results = ctx.run_itm2(model, cfg);
    let itm1_results = ctx.run_itm1(cfg);
    ShadowResult {
        itm2: summarize("ITM2", &itm2_results, &by_id, &DppBucket::DEFAULT),
        itm1: summarize("ITM1", &itm1_results, &by_id, &[]),
        itm2_results,
        itm1_results,
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Ablation {
    Full,
    /// Argmax assigned without thresholds.
    NoPostprocess,
    /// No thresholds and no hexcell features (model trained without them too).
    NoHexcell,
}

impl Ablation {
    pub const ALL: [Ablation; 3] = [Ablation::Full, Ablation::NoPostprocess, Ablation::NoHexcell];

    pub fn name(&self) -> &'static str {
        match self {
            Ablation::Full => "full",
            Ablation::NoPostprocess => "no_postprocess",
            Ablation::NoHexcell => "no_hexcell",
        }
    }

    pub fn parse(s: &str) -> Option<Self> {
        Self::ALL.into_iter().find(|a| a.name() == s)
    }

    /// Whether the model for this configuration is trained without hexcell features.
    pub fn masks_hexcells(&self) -> bool {
        *self == Ablation::NoHexcell
    }

    pub fn pipeline_config(&self, base: &PipelineConfig) -> PipelineConfig {
        let mut cfg = base.clone();
        match self {
            Ablation::Full => {}
            Ablation::NoPostprocess => cfg.policy = AssignmentPolicy::Unconditional,
            Ablation::NoHexcell => {
                cfg.policy = AssignmentPolicy::Unconditional;
                cfg.use_hexcell_features = false;
            }
        }
        cfg
    }
}

/// One report per configuration on identical evaluation data.
pub fn ablate(ctx: &EvalContext<'_>, base: &PipelineConfig, runs: &[(Ablation, &BoostedModel)]) -> Vec<EvalReport> {
    let by_id = ctx.by_id();
    runs.iter()
        .map(|(a, model)| {
            let results = ctx.run_itm2(model, &a.pipeline_config(base));
            summarize(a.name(), &results, &by_id, &DppBucket::DEFAULT)
        })
        .collect()
}

/// Each shipment paired with its true truck's windowed pings; shipments
/// whose truck is unknown are left out.
pub fn completed_journeys(shipments: &[&Shipment], fleet: &Fleet, truth: &GroundTruth) -> Vec<(Shipment, Pingset)> {
    shipments
        .iter()
        .filter_map(|s| {
            let truck = fleet.get(truth.true_truck.get(&s.shipment_id)?)?;
            let (start, end) = s.ping_window();
            Some(((*s).clone(), truck.window(start, end)))
        })
        .collect()
}

/// Model probability for the truck's prefix ending at the first ping that
/// has covered `fraction` of the haul (by remaining distance).
pub fn probability_at_progress(
    s: &Shipment,
    truck: &Pingset,
    store: &LaneStore,
    model: &BoostedModel,
    fraction: f64,
) -> Option<f64> {
    let record = lane_code(&s.pickup.location, &s.dropoff.location)
        .ok()
        .and_then(|l| store.lookup(&l));
    let target = 100.0 * (1.0 - fraction);
    let mut acc = FeatureAccumulator::new(s, record);
    for ping in truck.pings() {
        acc.push(ping);
        if ping.timestamp >= s.pickup.appointment && dpp(s, &ping.position) <= target {
            return Some(model.predict(&acc.features()?));
        }
    }
    None
}

// ---------------------------------------------------------------------------
// Output
// ---------------------------------------------------------------------------

fn pct(x: Option<f64>) -> String {
    x.map_or("n/a".to_string(), |v| format!("{:.1}%", 100.0 * v))
}

/// Human-readable table of one or more reports.
pub fn render_reports(reports: &[EvalReport]) -> String {
    let mut out = String::new();
    let _ = writeln!(
        out,
        "eligible = every shipment routed to the engine; deferred or unassigned ones count against coverage"
    );
    let _ = writeln!(
        out,
        "{:<16} {:>9} {:>9} {:>9} {:>9} {:>9}",
        "config", "eligible", "assigned", "correct", "coverage", "precision"
    );
    for r in reports {
        let c = r.counts;
        let _ = writeln!(
            out,
            "{:<16} {:>9} {:>9} {:>9} {:>9} {:>9}",
            r.name,
            c.n_eligible,
            c.n_assigned,
            c.n_correct,
            pct(Some(r.coverage)),
            pct(r.precision)
        );
    }
    for r in reports.iter().filter(|r| !r.dpp_buckets.is_empty()) {
        let _ = writeln!(out, "\n{}: precision by destination proximity", r.name);
        let _ = writeln!(out, "{:<10} {:>6} {:>10} {:>10}", "DPP", "n", "precision", "MDD (km)");
        for b in &r.dpp_buckets {
            let _ = writeln!(
                out,
                "{:<10} {:>6} {:>10} {:>10}",
                b.bucket,
                b.n,
                pct(b.precision),
                b.mdd_km.map_or("n/a".into(), |d| format!("{d:.1}"))
            );
        }
    }
    for r in reports {
        let _ = writeln!(out, "\n{}: by engine and haul distance", r.name);
        for (k, c) in r.per_engine.iter().chain(&r.distance_strata) {
            let _ = writeln!(
                out,
                "  {:<16} n={:<5} coverage={:<7} precision={}",
                k,
                c.n_eligible,
                pct(Some(c.coverage())),
                pct(c.precision())
            );
        }
    }
    out
}

/// Machine-readable reports, one JSON object per line.
pub fn write_reports_jsonl(reports: &[EvalReport], path: &Path) -> io::Result<()> {
    let mut w = BufWriter::new(File::create(path)?);
    for r in reports {
        serde_json::to_writer(&mut w, r)?;
        writeln!(w)?;
    }
    w.flush()
}

pub fn write_decisions<'a>(records: impl IntoIterator<Item = &'a DecisionRecord>, path: &Path) -> io::Result<()> {
    let mut w = BufWriter::new(File::create(path)?);
    writeln!(w, "{}", DecisionRecord::CSV_HEADER)?;
    for r in records {
        writeln!(w, "{}", r.to_csv())?;
    }
    w.flush()
}

pub fn read_decisions(path: &Path) -> Result<Vec<DecisionRecord>, EvalError> {
    let reader = BufReader::new(File::open(path)?);
    let mut out = Vec::new();
    for (i, line) in reader.lines().enumerate() {
        let line = line?;
        let n = i + 1;
        if n == 1 {
            if line.trim() != DecisionRecord::CSV_HEADER {
                return Err(EvalError::Format {
                    line: 1,
                    msg: "missing decision header".into(),
                });
            }
            continue;
        }
        if line.trim().is_empty() {
            continue;
        }
        let bad = |msg: &str| EvalError::Format {
            line: n,
            msg: msg.to_string(),
        };
        let f: Vec<&str> = line.split(',').collect();
        if f.len() != 7 {
            return Err(bad("expected 7 fields"));
        }
        let engine = match f[1] {
            "ITM1" => Engine::Itm1,
            "ITM2" => Engine::Itm2,
            _ => return Err(bad("engine must be ITM1 or ITM2")),
        };
        let confidence = match f[4] {
            "LOW" => Confidence::Low,
            "MEDIUM" => Confidence::Medium,
            "HIGH" => Confidence::High,
            _ => return Err(bad("unknown confidence")),
        };
        out.push(DecisionRecord {
            shipment_id: f[0].to_string(),
            engine,
            assigned_truck: (f[2] != "NONE").then(|| f[2].to_string()),
            probability: if f[3].is_empty() {
                None
            } else {
                Some(f[3].parse().map_err(|_| bad("probability"))?)
            },
            confidence,
            eval_count: f[5].parse().map_err(|_| bad("eval_count"))?,
            pings_seen: f[6].parse().map_err(|_| bad("pings_seen"))?,
        });
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::domain::{Ping, Stop};
    use crate::pipeline::{DecisionStatus, MatchDecision};
    use proptest::prelude::*;

    const T0: i64 = 1_704_067_200;

    fn pt(lat: f64, lon: f64) -> GeoPoint {
        GeoPoint::new(lat, lon).unwrap()
    }

    fn shipment() -> Shipment {
        Shipment::new(
            "S",
            "C",
            Stop {
                location: pt(40.0, -100.0),
                appointment: T0,
            },
            Stop {
                location: pt(40.0, -96.0),
                appointment: T0 + 6 * HOUR,
            },
        )
        .unwrap()
    }

    fn truck(stops: &[(GeoPoint, i64)]) -> Pingset {
        Pingset::new(
            "T",
            stops.iter().map(|(p, t)| Ping::new("T", *p, *t).unwrap()).collect(),
        )
        .unwrap()
    }

    #[test]
    fn correctness_rule() {
        let s = shipment();
        let on_time = truck(&[
            (s.pickup.location, T0 + 600),
            (s.dropoff.location.destination(0.0, 0.5), T0 + 6 * HOUR),
        ]);
        assert!(is_correct(&s, &on_time));
        let late = truck(&[(s.pickup.location, T0), (s.dropoff.location, T0 + 9 * HOUR)]);
        assert!(!is_correct(&s, &late));
        let decoy = truck(&[(s.pickup.location, T0), (pt(43.0, -100.0), T0 + 6 * HOUR)]);
        assert!(!is_correct(&s, &decoy));
    }

    #[test]
    fn dpp_values() {
        let s = shipment();
        assert!((dpp(&s, &s.pickup.location) - 100.0).abs() < 1e-9);
        assert_eq!(dpp(&s, &s.dropoff.location), 0.0);
        let mid = s.pickup.location.interpolate(&s.dropoff.location, 0.5);
        assert!((dpp(&s, &mid) - 50.0).abs() < 1.0);
    }

    #[test]
    fn median_convention() {
        assert!(matches!(mdd(&[]), Err(EvalError::EmptySet)));
        assert_eq!(mdd(&[7.0]).unwrap(), 7.0);
        assert_eq!(mdd(&[4.0, 1.0, 3.0, 2.0]).unwrap(), 2.5);
    }

    #[test]
    fn auc_values() {
        assert_eq!(roc_auc(&[0, 0, 1, 1], &[0.1, 0.2, 0.8, 0.9]), Some(1.0));
        assert_eq!(roc_auc(&[1, 1, 0, 0], &[0.1, 0.2, 0.8, 0.9]), Some(0.0));
        assert_eq!(roc_auc(&[0, 1], &[0.5, 0.5]), Some(0.5));
        assert_eq!(roc_auc(&[1, 1], &[0.5, 0.6]), None);
    }

    fn rec(id: &str, truck: Option<&str>) -> DecisionRecord {
        let mut d = MatchDecision::empty(Engine::Itm2, DecisionStatus::NoCandidates);
        if let Some(t) = truck {
            d = crate::pipeline::postprocess(&[(t.to_string(), 0.9)], &Default::default());
        }
        DecisionRecord::new(id, &d, 2, 10)
    }

    #[test]
    fn decision_log_roundtrip_and_recount() {
        let records = vec![rec("A", Some("T1")), rec("B", None), rec("C", Some("T3"))];
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("d.csv");
        write_decisions(&records, &path).unwrap();
        let back = read_decisions(&path).unwrap();
        assert_eq!(back.len(), 3);
        assert_eq!(back[0].assigned_truck.as_deref(), Some("T1"));
        assert_eq!(back[1].assigned_truck, None);
        let correct = |r: &DecisionRecord| r.assigned_truck.as_deref() == Some("T1");
        let c = counts_from_records(back.iter().map(|r| (r, correct(r))));
        assert_eq!((c.n_eligible, c.n_assigned, c.n_correct), (3, 2, 1));
        assert!((c.coverage() - 2.0 / 3.0).abs() < 1e-12);
        assert_eq!(c.precision(), Some(0.5));
        assert_eq!(Counts::default().precision(), None);
    }

    #[test]
    fn ablation_configs() {
        let base = PipelineConfig::default();
        assert_eq!(Ablation::Full.pipeline_config(&base), base);
        let np = Ablation::NoPostprocess.pipeline_config(&base);
        assert_eq!(np.policy, AssignmentPolicy::Unconditional);
        assert!(np.use_hexcell_features);
        let nh = Ablation::NoHexcell.pipeline_config(&base);
        assert!(!nh.use_hexcell_features);
        assert_eq!(Ablation::parse("no_hexcell"), Some(Ablation::NoHexcell));
    }

    proptest! {
        #[test]
        fn median_matches_sort_oracle(v in proptest::collection::vec(0.0f64..1000.0, 1..50)) {
            let mut s = v.clone();
            s.sort_by(|a, b| a.partial_cmp(b).unwrap());
            let n = s.len();
            let oracle = if n % 2 == 1 { s[n / 2] } else { (s[n / 2 - 1] + s[n / 2]) / 2.0 };
            prop_assert_eq!(mdd(&v).unwrap(), oracle);
        }

        #[test]
        fn auc_matches_pair_count(v in proptest::collection::vec((0u8..2, 0u32..10), 2..40)) {
            let labels: Vec<u8> = v.iter().map(|x| x.0).collect();
            let scores: Vec<f64> = v.iter().map(|x| f64::from(x.1)).collect();
            let (mut wins, mut pairs) = (0.0, 0.0);
            for i in 0..v.len() {
                for j in 0..v.len() {
                    if labels[i] == 1 && labels[j] == 0 {
                        pairs += 1.0;
                        wins += if scores[i] > scores[j] { 1.0 } else if scores[i] == scores[j] { 0.5 } else { 0.0 };
                    }
                }
            }
            let auc = roc_auc(&labels, &scores);
            if pairs == 0.0 {
                prop_assert!(auc.is_none());
            } else {
                prop_assert!((auc.unwrap() - wins / pairs).abs() < 1e-12);
            }
        }
    }
}
