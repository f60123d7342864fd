//! Candidate filtering, scoring, threshold post-processing and the
//! incremental matching session, plus the 500 m rule baseline.

use std::cmp::Ordering;
use std::collections::{BTreeMap, HashMap};
use std::fmt;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::domain::{Ping, Pingset, Shipment, Timestamp, HOUR};
use crate::features::{FeatureAccumulator, FeatureVector};
use crate::geo::{haversine_km, lane_code, trajectory_cell, GeoPoint};
use crate::lanestore::LaneStore;
use crate::model::BoostedModel;

/// Pickup radius of the rule-based baseline.
pub const ITM1_RADIUS_KM: f64 = 0.5;

#[derive(Debug, Error, PartialEq)]
pub enum PipelineError {
    #[error("no candidate has the minimum number of pings yet")]
    NoEligibleCandidates,
    #[error("invalid thresholds: need 0 < tau_min <= tau_medium <= tau_high < 1, got {0}/{1}/{2}")]
    InvalidThresholds(f64, f64, f64),
    #[error("invalid pipeline config: {0}")]
    InvalidConfig(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct Thresholds {
    pub tau_min: f64,
    pub tau_medium: f64,
    pub tau_high: f64,
}

impl Default for Thresholds {
    fn default() -> Self {
        Self {
            tau_min: 0.3,
            tau_medium: 0.5,
            tau_high: 0.8,
        }
    }
}

impl Thresholds {
    pub fn new(tau_min: f64, tau_medium: f64, tau_high: f64) -> Result<Self, PipelineError> {
        let t = Self {
            tau_min,
            tau_medium,
            tau_high,
        };
        t.validate()?;
        Ok(t)
    }

    pub fn validate(&self) -> Result<(), PipelineError> {
        if 0.0 < self.tau_min
            && self.tau_min <= self.tau_medium
            && self.tau_medium <= self.tau_high
            && self.tau_high < 1.0
        {
            Ok(())
        } else {
            Err(PipelineError::InvalidThresholds(
                self.tau_min,
                self.tau_medium,
                self.tau_high,
            ))
        }
    }

    pub fn label(&self, p: f64) -> Confidence {
        if p >= self.tau_high {
            Confidence::High
        } else if p >= self.tau_medium {
            Confidence::Medium
        } else {
            Confidence::Low
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "UPPERCASE")]
pub enum Confidence {
    Low,
    Medium,
    High,
}

impl fmt::Display for Confidence {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Confidence::Low => "LOW",
            Confidence::Medium => "MEDIUM",
            Confidence::High => "HIGH",
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Engine {
    #[serde(rename = "ITM1")]
    Itm1,
    #[serde(rename = "ITM2")]
    Itm2,
}

impl fmt::Display for Engine {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Engine::Itm1 => "ITM1",
            Engine::Itm2 => "ITM2",
        })
    }
}

/// Why a decision carries no assignment, or that it does.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DecisionStatus {
    Assigned,
    /// Candidates were scored but none reached `tau_min`.
    BelowMinimum,
    /// Candidates exist but none has enough pings, or the decision is not due yet.
    Deferred,
    NoCandidates,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Ranked {
    pub truck_id: String,
    pub probability: f64,
    pub confidence: Confidence,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MatchDecision {
    pub assigned_truck: Option<String>,
    /// Descending by probability.
    pub ranked: Vec<Ranked>,
    pub engine: Engine,
    pub status: DecisionStatus,
}

impl MatchDecision {
    pub fn empty(engine: Engine, status: DecisionStatus) -> Self {
        Self {
            assigned_truck: None,
            ranked: Vec::new(),
            engine,
            status,
        }
    }

    fn assigned_entry(&self) -> Option<&Ranked> {
        let id = self.assigned_truck.as_ref()?;
        self.ranked.iter().find(|r| &r.truck_id == id)
    }

    pub fn probability(&self) -> Option<f64> {
        self.assigned_entry().map(|r| r.probability)
    }

    /// The assigned truck's label; LOW when nothing is assigned.
    pub fn confidence(&self) -> Confidence {
        self.assigned_entry().map_or(Confidence::Low, |r| r.confidence)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum AssignmentPolicy {
    /// Threshold post-processing; HIGH assignments are final.
    #[default]
    Thresholded,
    /// Argmax assigned without thresholds once the candidate pool is closed.
    Unconditional,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct PipelineConfig {
    pub pickup_radius_km: f64,
    pub min_pings: usize,
    pub reeval_every_pings: usize,
    pub thresholds: Thresholds,
    pub short_haul_km: f64,
    pub appointment_slack_hours: f64,
    pub policy: AssignmentPolicy,
    /// When false the overlap features are zeroed before prediction.
    pub use_hexcell_features: bool,
}

impl Default for PipelineConfig {
    fn default() -> Self {
        Self {
            pickup_radius_km: 1.0,
            min_pings: 20,
            reeval_every_pings: 5,
            thresholds: Thresholds::default(),
            short_haul_km: 40.0,
            appointment_slack_hours: 2.0,
            policy: AssignmentPolicy::Thresholded,
            use_hexcell_features: true,
        }
    }
}

impl PipelineConfig {
    pub fn validate(&self) -> Result<(), PipelineError> {
        self.thresholds.validate()?;
        let ok = self.pickup_radius_km > 0.0
            && self.min_pings > 0
            && self.reeval_every_pings > 0
            && self.short_haul_km > 0.0
            && self.appointment_slack_hours > 0.0;
        if ok {
            Ok(())
        } else {
            Err(PipelineError::InvalidConfig(
                "radius, ping counts, short-haul distance and slack must be positive".into(),
            ))
        }
    }

    pub fn slack_s(&self) -> Timestamp {
        (self.appointment_slack_hours * HOUR as f64).round() as Timestamp
    }

    fn features(&self, f: FeatureVector) -> FeatureVector {
        if self.use_hexcell_features {
            f
        } else {
            f.without_hexcells()
        }
    }
}

/// Truck id -> carrier id. Absent map means carrier data is unavailable.
pub type Carriers = HashMap<String, String>;

fn carrier_ok(s: &Shipment, truck: &str, carriers: Option<&Carriers>) -> bool {
    carriers.is_none_or(|m| m.get(truck).is_some_and(|c| *c == s.carrier_id))
}

fn witnesses(s: &Shipment, ping: &Ping, radius_km: f64, slack: Timestamp) -> bool {
    (ping.timestamp - s.pickup.appointment).abs() <= slack
        && haversine_km(&ping.position, &s.pickup.location) <= radius_km
}

/// Trucks with a ping within the pickup radius inside the appointment slack.
pub fn filter_candidates<'a>(
    s: &Shipment,
    fleet: &'a [Pingset],
    cfg: &PipelineConfig,
    carriers: Option<&Carriers>,
) -> Vec<&'a Pingset> {
    let slack = cfg.slack_s();
    fleet
        .iter()
        .filter(|p| carrier_ok(s, p.truck_id(), carriers))
        .filter(|p| {
            p.pings()
                .iter()
                .any(|ping| witnesses(s, ping, cfg.pickup_radius_km, slack))
        })
        .collect()
}

fn by_probability(a: &(String, f64), b: &(String, f64)) -> Ordering {
    b.1.total_cmp(&a.1).then_with(|| a.0.cmp(&b.0))
}

/// Model probability for each candidate with at least `min_pings` pings.
pub fn score_candidates(
    s: &Shipment,
    candidates: &[&Pingset],
    store: &LaneStore,
    model: &BoostedModel,
    cfg: &PipelineConfig,
) -> Result<Vec<(String, f64)>, PipelineError> {
    let record = lane_code(&s.pickup.location, &s.dropoff.location)
        .ok()
        .and_then(|l| store.lookup(&l));
    let scored: Vec<(String, f64)> = candidates
        .iter()
        .filter(|p| p.len() >= cfg.min_pings)
        .map(|p| {
            let mut acc = FeatureAccumulator::new(s, record);
            p.pings().iter().for_each(|ping| acc.push(ping));
            let f = acc.features().expect("eligible pingsets are non-empty");
            (p.truck_id().to_string(), model.predict(&cfg.features(f)))
        })
        .collect();
    if scored.is_empty() {
        Err(PipelineError::NoEligibleCandidates)
    } else {
        Ok(scored)
    }
}

/// Threshold post-processing of scored candidates.
///
/// Candidates under `tau_min` are dropped, the rest ranked by probability
/// (ties by truck id) and labelled; the top one is assigned.
pub fn postprocess(scored: &[(String, f64)], t: &Thresholds) -> MatchDecision {
    let mut kept: Vec<(String, f64)> = scored.iter().filter(|(_, p)| *p >= t.tau_min).cloned().collect();
    if kept.is_empty() {
        return MatchDecision::empty(Engine::Itm2, DecisionStatus::BelowMinimum);
    }
    kept.sort_by(by_probability);
    let ranked: Vec<Ranked> = kept
        .into_iter()
        .map(|(truck_id, probability)| Ranked {
            confidence: t.label(probability),
            truck_id,
            probability,
        })
        .collect();
    MatchDecision {
        assigned_truck: Some(ranked[0].truck_id.clone()),
        ranked,
        engine: Engine::Itm2,
        status: DecisionStatus::Assigned,
    }
}

/// Argmax assignment with no threshold; every candidate is kept in the ranking.
pub fn assign_unconditionally(scored: &[(String, f64)], t: &Thresholds) -> MatchDecision {
    if scored.is_empty() {
        return MatchDecision::empty(Engine::Itm2, DecisionStatus::NoCandidates);
    }
    let mut all = scored.to_vec();
    all.sort_by(by_probability);
    let ranked: Vec<Ranked> = all
        .into_iter()
        .map(|(truck_id, probability)| Ranked {
            confidence: t.label(probability),
            truck_id,
            probability,
        })
        .collect();
    MatchDecision {
        assigned_truck: Some(ranked[0].truck_id.clone()),
        ranked,
        engine: Engine::Itm2,
        status: DecisionStatus::Assigned,
    }
}

fn is_short_haul(s: &Shipment, cfg: &PipelineConfig) -> bool {
    // Stops in one lane cell cannot be matched against lane history either.
    s.haul_km() <= cfg.short_haul_km || lane_code(&s.pickup.location, &s.dropoff.location).is_err()
}

/// One-shot matching over the pings seen so far.
pub fn match_shipment(
    s: &Shipment,
    fleet: &[Pingset],
    store: &LaneStore,
    model: &BoostedModel,
    cfg: &PipelineConfig,
    carriers: Option<&Carriers>,
) -> MatchDecision {
    if is_short_haul(s, cfg) {
        return itm1_match(s, fleet, cfg, carriers);
    }
    let candidates = filter_candidates(s, fleet, cfg, carriers);
    if candidates.is_empty() {
        return MatchDecision::empty(Engine::Itm2, DecisionStatus::NoCandidates);
    }
    match score_candidates(s, &candidates, store, model, cfg) {
        Err(_) => MatchDecision::empty(Engine::Itm2, DecisionStatus::Deferred),
        Ok(scored) => match cfg.policy {
            AssignmentPolicy::Thresholded => postprocess(&scored, &cfg.thresholds),
            AssignmentPolicy::Unconditional => assign_unconditionally(&scored, &cfg.thresholds),
        },
    }
}

/// Rule baseline: the truck whose closest on-time ping is within 500 m of
/// the pickup; nearest wins. Trajectories and lanes are ignored.
pub fn itm1_match(s: &Shipment, fleet: &[Pingset], cfg: &PipelineConfig, carriers: Option<&Carriers>) -> MatchDecision {
    let slack = cfg.slack_s();
    let mut best: Option<(f64, &str)> = None;
    for p in fleet.iter().filter(|p| carrier_ok(s, p.truck_id(), carriers)) {
        let nearest = p
            .pings()
            .iter()
            .filter(|ping| (ping.timestamp - s.pickup.appointment).abs() <= slack)
            .map(|ping| haversine_km(&ping.position, &s.pickup.location))
            .fold(f64::INFINITY, f64::min);
        if nearest <= ITM1_RADIUS_KM {
            let better = match best {
                None => true,
                Some((d, id)) => nearest < d || (nearest == d && p.truck_id() < id),
            };
            if better {
                best = Some((nearest, p.truck_id()));
            }
        }
    }
    match best {
        None => MatchDecision::empty(Engine::Itm1, DecisionStatus::NoCandidates),
        Some((_, id)) => MatchDecision {
            assigned_truck: Some(id.to_string()),
            ranked: vec![Ranked {
                truck_id: id.to_string(),
                probability: 1.0,
                confidence: Confidence::High,
            }],
            engine: Engine::Itm1,
            status: DecisionStatus::Assigned,
        },
    }
}

// ---------------------------------------------------------------------------
// Incremental session
// ---------------------------------------------------------------------------

/// One evaluation of a session, kept for proximity analysis.
#[derive(Debug, Clone, PartialEq)]
pub struct EvalPoint {
    pub timestamp: Timestamp,
    pub pings_seen: usize,
    pub assigned_truck: Option<String>,
    pub probability: Option<f64>,
    /// Latest ping of the assigned truck at this evaluation.
    pub assigned_position: Option<GeoPoint>,
}

#[derive(Debug, Clone)]
struct TruckState<'a> {
    acc: FeatureAccumulator<'a>,
    candidate: bool,
}

/// Streaming matcher for one shipment. Feed pings in time order through
/// [`step`](Self::step); call [`finish`](Self::finish) when the window closes.
#[derive(Debug, Clone)]
pub struct MatchSession<'a> {
    shipment: &'a Shipment,
    record: Option<&'a crate::lanestore::LaneRecord>,
    model: &'a BoostedModel,
    cfg: &'a PipelineConfig,
    carriers: Option<&'a Carriers>,
    window: (Timestamp, Timestamp),
    trucks: BTreeMap<String, TruckState<'a>>,
    since_eval: usize,
    pings_seen: usize,
    eval_count: usize,
    now: Timestamp,
    committed: bool,
    current: MatchDecision,
    log: Vec<EvalPoint>,
}

impl<'a> MatchSession<'a> {
    pub fn new(
        shipment: &'a Shipment,
        store: &'a LaneStore,
        model: &'a BoostedModel,
        cfg: &'a PipelineConfig,
        carriers: Option<&'a Carriers>,
    ) -> Self {
        let record = lane_code(&shipment.pickup.location, &shipment.dropoff.location)
            .ok()
            .and_then(|l| store.lookup(&l));
        Self {
            shipment,
            record,
            model,
            cfg,
            carriers,
            window: shipment.ping_window(),
            trucks: BTreeMap::new(),
            since_eval: 0,
            pings_seen: 0,
            eval_count: 0,
            now: Timestamp::MIN,
            committed: false,
            current: MatchDecision::empty(Engine::Itm2, DecisionStatus::NoCandidates),
            log: Vec::new(),
        }
    }

    /// Ingests pings; returns the latest decision if an evaluation ran.
    pub fn step(&mut self, new_pings: &[Ping]) -> Option<MatchDecision> {
        let mut out = None;
        let slack = self.cfg.slack_s();
        for ping in new_pings {
            if ping.timestamp < self.window.0 || ping.timestamp > self.window.1 {
                continue;
            }
            if !carrier_ok(self.shipment, &ping.truck_id, self.carriers) {
                continue;
            }
            self.now = self.now.max(ping.timestamp);
            let (shipment, record) = (self.shipment, self.record);
            let state = self.trucks.entry(ping.truck_id.clone()).or_insert_with(|| TruckState {
                acc: FeatureAccumulator::new(shipment, record),
                candidate: false,
            });
            state.acc.push_with_cell(ping, trajectory_cell(&ping.position));
            if !state.candidate && witnesses(shipment, ping, self.cfg.pickup_radius_km, slack) {
                state.candidate = true;
            }
            if state.candidate {
                self.pings_seen += 1;
                self.since_eval += 1;
                if self.since_eval >= self.cfg.reeval_every_pings {
                    self.since_eval = 0;
                    out = Some(self.evaluate(false));
                }
            }
        }
        out
    }

    /// Final decision once no more pings will arrive.
    pub fn finish(&mut self) -> MatchDecision {
        if self.since_eval > 0 || self.eval_count == 0 {
            self.since_eval = 0;
            self.evaluate(true)
        } else if self.cfg.policy == AssignmentPolicy::Unconditional && !self.committed {
            self.evaluate(true)
        } else {
            self.current.clone()
        }
    }

    pub fn decision(&self) -> &MatchDecision {
        &self.current
    }

    pub fn eval_count(&self) -> usize {
        self.eval_count
    }

    pub fn pings_seen(&self) -> usize {
        self.pings_seen
    }

    pub fn log(&self) -> &[EvalPoint] {
        &self.log
    }

    fn evaluate(&mut self, closing: bool) -> MatchDecision {
        self.eval_count += 1;
        if !self.committed {
            let any_candidate = self.trucks.values().any(|t| t.candidate);
            let scored: Vec<(String, f64)> = self
                .trucks
                .iter()
                .filter(|(_, t)| t.candidate && t.acc.n_pings() >= self.cfg.min_pings)
                .map(|(id, t)| {
                    let f = t.acc.features().expect("eligible trucks have pings");
                    (id.clone(), self.model.predict(&self.cfg.features(f)))
                })
                .collect();
            self.current = if !any_candidate {
                MatchDecision::empty(Engine::Itm2, DecisionStatus::NoCandidates)
            } else if scored.is_empty() {
                MatchDecision::empty(Engine::Itm2, DecisionStatus::Deferred)
            } else {
                // Nothing is final while new candidates may still reach the pickup.
                let pool_closed = closing || self.now >= self.shipment.pickup.appointment + self.cfg.slack_s();
                match self.cfg.policy {
                    AssignmentPolicy::Thresholded => {
                        let d = postprocess(&scored, &self.cfg.thresholds);
                        self.committed = pool_closed && d.confidence() == Confidence::High;
                        d
                    }
                    AssignmentPolicy::Unconditional => {
                        if pool_closed {
                            self.committed = true;
                            assign_unconditionally(&scored, &self.cfg.thresholds)
                        } else {
                            MatchDecision::empty(Engine::Itm2, DecisionStatus::Deferred)
                        }
                    }
                }
            };
        }
        let assigned_position = self
            .current
            .assigned_truck
            .as_ref()
            .and_then(|id| self.trucks.get(id))
            .and_then(|t| t.acc.latest())
            .map(|p| p.position);
        self.log.push(EvalPoint {
            timestamp: self.now,
            pings_seen: self.pings_seen,
            assigned_truck: self.current.assigned_truck.clone(),
            probability: self.current.probability(),
            assigned_position,
        });
        self.current.clone()
    }
}

/// Decision line of the matcher's output log.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DecisionRecord {
    pub shipment_id: String,
    pub engine: Engine,
    pub assigned_truck: Option<String>,
    pub probability: Option<f64>,
    pub confidence: Confidence,
    pub eval_count: usize,
    pub pings_seen: usize,
}

impl DecisionRecord {
    pub fn new(shipment_id: &str, d: &MatchDecision, eval_count: usize, pings_seen: usize) -> Self {
        Self {
            shipment_id: shipment_id.to_string(),
            engine: d.engine,
            assigned_truck: d.assigned_truck.clone(),
            probability: d.probability(),
            confidence: d.confidence(),
            eval_count,
            pings_seen,
        }
    }

    pub const CSV_HEADER: &'static str =
        "shipment_id,engine,assigned_truck,probability,confidence,eval_count,pings_seen";

    pub fn to_csv(&self) -> String {
        format!(
            "{},{},{},{},{},{},{}",
            self.shipment_id,
            self.engine,
            self.assigned_truck.as_deref().unwrap_or("NONE"),
            self.probability.map_or(String::new(), |p| format!("{p:.6}")),
            self.confidence,
            self.eval_count,
            self.pings_seen
        )
    }
}

// ---------------------------------------------------------------------------
// Fleet replay
// ---------------------------------------------------------------------------

/// Pings grouped by truck with time-range access.
#[derive(Debug, Clone, Default)]
pub struct Fleet {
    sets: Vec<Pingset>,
    by_id: HashMap<String, usize>,
}

impl Fleet {
    pub fn new(pings: &[Ping]) -> Self {
        Self::from_pingsets(crate::domain::group_by_truck(pings))
    }

    pub fn from_pingsets(sets: Vec<Pingset>) -> Self {
        let by_id = sets
            .iter()
            .enumerate()
            .map(|(i, p)| (p.truck_id().to_string(), i))
            .collect();
        Self { sets, by_id }
    }

    pub fn pingsets(&self) -> &[Pingset] {
        &self.sets
    }

    pub fn get(&self, truck: &str) -> Option<&Pingset> {
        self.by_id.get(truck).map(|&i| &self.sets[i])
    }

    /// Every truck's pings inside the shipment's window (non-empty only),
    /// restricted to the shipment's carrier when carrier data is given.
    pub fn windowed(&self, s: &Shipment, carriers: Option<&Carriers>) -> Vec<Pingset> {
        let (start, end) = s.ping_window();
        self.sets
            .iter()
            .filter(|p| carrier_ok(s, p.truck_id(), carriers))
            .map(|p| p.window(start, end))
            .filter(|p| !p.is_empty())
            .collect()
    }
}

/// Outcome of replaying a shipment's window through a [`MatchSession`].
#[derive(Debug, Clone, PartialEq)]
pub struct SessionOutcome {
    pub decision: MatchDecision,
    pub eval_count: usize,
    pub pings_seen: usize,
    pub log: Vec<EvalPoint>,
}

impl SessionOutcome {
    pub fn record(&self, shipment_id: &str) -> DecisionRecord {
        DecisionRecord::new(shipment_id, &self.decision, self.eval_count, self.pings_seen)
    }
}

/// Streams the shipment's candidate pings in time order, as they would have
/// arrived live. Short hauls go to the rule baseline on the full window.
pub fn replay_shipment(
    s: &Shipment,
    fleet: &Fleet,
    store: &LaneStore,
    model: &BoostedModel,
    cfg: &PipelineConfig,
    carriers: Option<&Carriers>,
) -> SessionOutcome {
    let windowed = fleet.windowed(s, carriers);
    if is_short_haul(s, cfg) {
        return SessionOutcome {
            decision: itm1_match(s, &windowed, cfg, carriers),
            eval_count: 1,
            pings_seen: windowed.iter().map(Pingset::len).sum(),
            log: Vec::new(),
        };
    }
    // Trucks that never become candidates cannot influence the session.
    let candidates = filter_candidates(s, &windowed, cfg, carriers);
    let mut stream: Vec<&Ping> = candidates.iter().flat_map(|p| p.pings()).collect();
    stream.sort_by(|a, b| a.timestamp.cmp(&b.timestamp).then_with(|| a.truck_id.cmp(&b.truck_id)));
    let mut session = MatchSession::new(s, store, model, cfg, carriers);
    for ping in stream {
        session.step(std::slice::from_ref(ping));
    }
    let decision = session.finish();
    SessionOutcome {
        decision,
        eval_count: session.eval_count(),
        pings_seen: session.pings_seen(),
        log: session.log().to_vec(),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::domain::Stop;
    use crate::model::{Node, Tree};
    use proptest::prelude::*;

    const T0: i64 = 1_704_067_200;

    fn pt(lat: f64, lon: f64) -> GeoPoint {
        GeoPoint::new(lat, lon).unwrap()
    }

    fn shipment(pickup: GeoPoint, dropoff: GeoPoint) -> Shipment {
        Shipment::new(
            "S",
            "C",
            Stop {
                location: pickup,
                appointment: T0,
            },
            Stop {
                location: dropoff,
                appointment: T0 + 8 * HOUR,
            },
        )
        .unwrap()
    }

    fn long_shipment() -> Shipment {
        shipment(pt(40.0, -100.0), pt(40.0, -94.0))
    }

    fn parked(truck: &str, at: GeoPoint, from: Timestamp, n: usize) -> Pingset {
        let pings = (0..n)
            .map(|i| Ping::new(truck, at, from + 300 * i as i64).unwrap())
            .collect();
        Pingset::new(truck, pings).unwrap()
    }

    fn scored(v: &[(&str, f64)]) -> Vec<(String, f64)> {
        v.iter().map(|(t, p)| (t.to_string(), *p)).collect()
    }

    /// Probability rises as the latest ping gets closer to the dropoff.
    fn distance_model() -> BoostedModel {
        let tree = Tree::new(vec![
            Node::Split {
                feature: 1,
                threshold: 100.0,
                left: 1,
                right: 2,
            },
            Node::Leaf { value: 3.0 },
            Node::Leaf { value: -1.0 },
        ])
        .unwrap();
        BoostedModel::new(vec![tree], 0.0, 1.0, 2)
    }

    #[test]
    fn thresholds_validate() {
        assert!(Thresholds::new(0.3, 0.5, 0.8).is_ok());
        assert!(Thresholds::new(0.5, 0.3, 0.8).is_err());
        assert!(Thresholds::new(0.0, 0.5, 0.8).is_err());
        assert!(Thresholds::new(0.3, 0.5, 1.0).is_err());
    }

    #[test]
    fn postprocess_examples() {
        let t = Thresholds::default();
        let d = postprocess(&[], &t);
        assert_eq!((d.assigned_truck.clone(), d.confidence()), (None, Confidence::Low));
        let d = postprocess(&scored(&[("A", 0.1), ("B", 0.29)]), &t);
        assert_eq!(d.status, DecisionStatus::BelowMinimum);
        assert!(d.assigned_truck.is_none());

        let d = postprocess(&scored(&[("C", 0.35), ("A", 0.85), ("B", 0.6)]), &t);
        assert_eq!(d.assigned_truck.as_deref(), Some("A"));
        let labels: Vec<_> = d.ranked.iter().map(|r| (r.truck_id.as_str(), r.confidence)).collect();
        assert_eq!(
            labels,
            [
                ("A", Confidence::High),
                ("B", Confidence::Medium),
                ("C", Confidence::Low)
            ]
        );

        let d = postprocess(&scored(&[("B", 0.7), ("A", 0.7)]), &t);
        assert_eq!(d.assigned_truck.as_deref(), Some("A"));
    }

    #[test]
    fn filter_examples() {
        let s = long_shipment();
        let cfg = PipelineConfig::default();
        let fleet = vec![
            parked("near", s.pickup.location.destination(10.0, 0.3), T0 - HOUR, 5),
            parked("far", s.pickup.location.destination(10.0, 5.0), T0 - HOUR, 5),
            parked("geo", s.pickup.location.destination(10.0, 0.8), T0 - HOUR, 5),
            parked("late", s.pickup.location, T0 + 3 * HOUR, 5),
        ];
        let ids: Vec<_> = filter_candidates(&s, &fleet, &cfg, None)
            .iter()
            .map(|p| p.truck_id())
            .collect();
        assert_eq!(ids, ["near", "geo"]);
        let itm1 = itm1_match(&s, &fleet, &cfg, None);
        assert_eq!(itm1.assigned_truck.as_deref(), Some("near"));
        let only_geo = vec![fleet[2].clone()];
        assert!(itm1_match(&s, &only_geo, &cfg, None).assigned_truck.is_none());
        assert_eq!(filter_candidates(&s, &only_geo, &cfg, None).len(), 1);

        let mut carriers = Carriers::new();
        carriers.insert("near".into(), "OTHER".into());
        carriers.insert("geo".into(), "C".into());
        let ids: Vec<_> = filter_candidates(&s, &fleet, &cfg, Some(&carriers))
            .iter()
            .map(|p| p.truck_id())
            .collect();
        assert_eq!(ids, ["geo"]);
    }

    #[test]
    fn itm1_prefers_nearest_regardless_of_destination() {
        let s = long_shipment();
        let cfg = PipelineConfig::default();
        let fleet = vec![
            parked("true", s.pickup.location.destination(0.0, 0.4), T0, 3),
            parked("decoy", s.pickup.location.destination(180.0, 0.1), T0, 3),
        ];
        assert_eq!(
            itm1_match(&s, &fleet, &cfg, None).assigned_truck.as_deref(),
            Some("decoy")
        );
    }

    #[test]
    fn scoring_defers_short_pingsets_and_is_order_independent() {
        let s = long_shipment();
        let cfg = PipelineConfig::default();
        let model = distance_model();
        let store = LaneStore::default();
        let a = parked("A", s.pickup.location, T0, 10);
        assert_eq!(
            score_candidates(&s, &[&a], &store, &model, &cfg),
            Err(PipelineError::NoEligibleCandidates)
        );
        let b = parked("B", s.dropoff.location.destination(0.0, 20.0), T0, 25);
        let c = parked("C", s.pickup.location, T0, 25);
        let fwd = score_candidates(&s, &[&b, &c], &store, &model, &cfg).unwrap();
        let mut rev = score_candidates(&s, &[&c, &b], &store, &model, &cfg).unwrap();
        rev.reverse();
        assert_eq!(fwd, rev);
    }

    #[test]
    fn short_haul_goes_to_itm1() {
        let p = pt(40.0, -100.0);
        let s = shipment(p, p.destination(90.0, 30.0));
        let fleet = vec![parked("A", p, T0, 3)];
        let d = match_shipment(
            &s,
            &fleet,
            &LaneStore::default(),
            &distance_model(),
            &PipelineConfig::default(),
            None,
        );
        assert_eq!(d.engine, Engine::Itm1);
        assert_eq!(d.assigned_truck.as_deref(), Some("A"));
    }

    #[test]
    fn no_candidates_is_an_empty_decision() {
        let s = long_shipment();
        let d = match_shipment(
            &s,
            &[],
            &LaneStore::default(),
            &distance_model(),
            &PipelineConfig::default(),
            None,
        );
        assert_eq!(
            (d.engine, d.status, d.assigned_truck),
            (Engine::Itm2, DecisionStatus::NoCandidates, None)
        );
    }

    #[test]
    fn session_cadence() {
        let s = long_shipment();
        let cfg = PipelineConfig {
            min_pings: 1,
            ..Default::default()
        };
        let store = LaneStore::default();
        let model = distance_model();
        let mut session = MatchSession::new(&s, &store, &model, &cfg, None);
        let truck = parked("A", s.pickup.location, T0, 10);
        for ping in &truck.pings()[..4] {
            assert!(session.step(std::slice::from_ref(ping)).is_none());
        }
        assert!(session.step(std::slice::from_ref(&truck.pings()[4])).is_some());
        assert_eq!(session.eval_count(), 1);
    }

    #[test]
    fn high_assignment_is_sticky() {
        let s = long_shipment();
        let cfg = PipelineConfig {
            min_pings: 1,
            reeval_every_pings: 1,
            ..Default::default()
        };
        let store = LaneStore::default();
        let model = distance_model();
        let mut session = MatchSession::new(&s, &store, &model, &cfg, None);
        let close = T0 + cfg.slack_s();
        // Z waits at the pickup, then jumps near the dropoff once the pool is closed: HIGH.
        let near_dest = s.dropoff.location.destination(0.0, 10.0);
        let z = [
            Ping::new("Z", s.pickup.location, T0).unwrap(),
            Ping::new("Z", near_dest, close).unwrap(),
        ];
        session.step(&z);
        assert_eq!(session.decision().assigned_truck.as_deref(), Some("Z"));
        assert_eq!(session.decision().confidence(), Confidence::High);
        // A scores the same and would win the tie, but Z is final.
        let a = [
            Ping::new("A", s.pickup.location, close).unwrap(),
            Ping::new("A", s.dropoff.location, close + 300).unwrap(),
        ];
        session.step(&a);
        assert_eq!(session.finish().assigned_truck.as_deref(), Some("Z"));
    }

    #[test]
    fn high_before_pool_closes_is_provisional() {
        let s = long_shipment();
        let cfg = PipelineConfig {
            min_pings: 1,
            reeval_every_pings: 1,
            ..Default::default()
        };
        let store = LaneStore::default();
        let model = distance_model();
        let mut session = MatchSession::new(&s, &store, &model, &cfg, None);
        let near_dest = s.dropoff.location.destination(0.0, 10.0);
        session.step(&[
            Ping::new("Z", s.pickup.location, T0).unwrap(),
            Ping::new("Z", near_dest, T0 + 300).unwrap(),
        ]);
        assert_eq!(session.decision().confidence(), Confidence::High);
        session.step(&[
            Ping::new("A", s.pickup.location, T0 + 600).unwrap(),
            Ping::new("A", near_dest, T0 + 900).unwrap(),
        ]);
        assert_eq!(session.finish().assigned_truck.as_deref(), Some("A"));
    }

    #[test]
    fn unconditional_waits_for_pool_to_close() {
        let s = long_shipment();
        let cfg = PipelineConfig {
            min_pings: 1,
            reeval_every_pings: 1,
            policy: AssignmentPolicy::Unconditional,
            ..Default::default()
        };
        let store = LaneStore::default();
        let model = distance_model();
        let mut session = MatchSession::new(&s, &store, &model, &cfg, None);
        let d = session.step(&[Ping::new("A", s.pickup.location, T0).unwrap()]).unwrap();
        assert_eq!(d.status, DecisionStatus::Deferred);
        let d = session
            .step(&[Ping::new("A", s.pickup.location, T0 + cfg.slack_s()).unwrap()])
            .unwrap();
        assert_eq!(d.assigned_truck.as_deref(), Some("A"));
        // Committed: a later, better truck changes nothing.
        session.step(&[
            Ping::new("B", s.pickup.location, T0 + cfg.slack_s()).unwrap(),
            Ping::new("B", s.dropoff.location, T0 + cfg.slack_s() + 60).unwrap(),
        ]);
        assert_eq!(session.finish().assigned_truck.as_deref(), Some("A"));
    }

    #[test]
    fn decision_record_csv() {
        let d = postprocess(&scored(&[("A", 0.85)]), &Thresholds::default());
        let r = DecisionRecord::new("S1", &d, 3, 40);
        assert_eq!(r.to_csv(), "S1,ITM2,A,0.850000,HIGH,3,40");
        let none = DecisionRecord::new(
            "S2",
            &MatchDecision::empty(Engine::Itm1, DecisionStatus::NoCandidates),
            1,
            0,
        );
        assert_eq!(none.to_csv(), "S2,ITM1,NONE,,LOW,1,0");
    }

    fn brute_force(scored: &[(String, f64)], t: &Thresholds) -> (Option<String>, Vec<(String, Confidence)>) {
        let mut best: Option<(String, f64)> = None;
        for (id, p) in scored {
            if *p < t.tau_min {
                continue;
            }
            best = match best {
                Some((bid, bp)) if bp > *p || (bp == *p && bid < *id) => Some((bid, bp)),
                _ => Some((id.clone(), *p)),
            };
        }
        let mut labelled: Vec<(String, f64, Confidence)> = scored
            .iter()
            .filter(|(_, p)| *p >= t.tau_min)
            .map(|(id, p)| {
                let c = if *p >= t.tau_high {
                    Confidence::High
                } else if *p >= t.tau_medium {
                    Confidence::Medium
                } else {
                    Confidence::Low
                };
                (id.clone(), *p, c)
            })
            .collect();
        labelled.sort_by(|a, b| b.1.partial_cmp(&a.1).unwrap().then(a.0.cmp(&b.0)));
        (
            best.map(|b| b.0),
            labelled.into_iter().map(|(id, _, c)| (id, c)).collect(),
        )
    }

    proptest! {
        #[test]
        fn postprocess_matches_brute_force(
            probs in proptest::collection::vec(0u32..=20, 0..=6),
            a in 1u32..=9, b in 1u32..=9, c in 1u32..=9,
        ) {
            let mut taus = [a, b, c];
            taus.sort_unstable();
            let t = Thresholds::new(taus[0] as f64 / 10.0, taus[1] as f64 / 10.0, taus[2] as f64 / 10.0).unwrap();
            let s: Vec<(String, f64)> = probs.iter().enumerate().map(|(i, p)| (format!("T{i}"), *p as f64 * 0.05)).collect();
            let d = postprocess(&s, &t);
            let (assigned, labels) = brute_force(&s, &t);
            prop_assert_eq!(d.assigned_truck.clone(), assigned);
            let got: Vec<_> = d.ranked.iter().map(|r| (r.truck_id.clone(), r.confidence)).collect();
            prop_assert_eq!(got, labels);
        }

        #[test]
        fn argmax_is_invariant_under_monotone_transforms(probs in proptest::collection::vec(0.0f64..1.0, 1..8)) {
            let t = Thresholds::new(1e-9, 0.5, 0.8).unwrap();
            let s: Vec<(String, f64)> = probs.iter().enumerate().map(|(i, p)| (format!("T{i}"), *p + 1e-6)).collect();
            let squashed: Vec<(String, f64)> = s.iter().map(|(id, p)| (id.clone(), p.sqrt() * 0.9)).collect();
            prop_assert_eq!(postprocess(&s, &t).assigned_truck, postprocess(&squashed, &t).assigned_truck);
        }

        #[test]
        fn decision_validity(probs in proptest::collection::vec(0.0f64..1.0, 0..8)) {
            let t = Thresholds::default();
            let s: Vec<(String, f64)> = probs.iter().enumerate().map(|(i, p)| (format!("T{i}"), *p)).collect();
            let d = postprocess(&s, &t);
            if let Some(a) = &d.assigned_truck {
                prop_assert_eq!(&d.ranked[0].truck_id, a);
                prop_assert!(d.ranked[0].probability >= t.tau_min);
            }
            prop_assert!(d.ranked.windows(2).all(|w| w[0].probability >= w[1].probability));
        }

        #[test]
        fn filter_soundness(offsets in proptest::collection::vec((0.0f64..3.0, -4i64..4), 1..10)) {
            let s = long_shipment();
            let cfg = PipelineConfig::default();
            let fleet: Vec<Pingset> = offsets
                .iter()
                .enumerate()
                .map(|(i, (km, h))| parked(&format!("T{i}"), s.pickup.location.destination(45.0, *km), T0 + h * HOUR, 2))
                .collect();
            let kept = filter_candidates(&s, &fleet, &cfg, None);
            for p in &fleet {
                let witness = p.pings().iter().any(|x| haversine_km(&x.position, &s.pickup.location) <= 1.0
                    && (x.timestamp - T0).abs() <= 2 * HOUR);
                prop_assert_eq!(witness, kept.iter().any(|k| k.truck_id() == p.truck_id()));
            }
        }
    }
}
