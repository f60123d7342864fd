//! Synthetic fleet with labelled ground truth.
//!
//! Cities are scattered over a mid-continent box. Lanes connect city pairs
//! and each lane has a few distinct corridors (piecewise great-circle routes
//! bent through offset waypoints). Every shipment gets one true truck that
//! dwells at the pickup, drives one of the lane's corridors and dwells at the
//! dropoff, plus decoy trucks of the same carrier that wait at the same
//! facility and then leave for other cities. Shipment stop coordinates are
//! perturbed to imitate geocoding error; pings are not.

use std::collections::{BTreeMap, BTreeSet, HashMap};
use std::fs;
use std::io::{self, BufWriter, Write};
use std::path::Path;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::domain::{
    group_by_truck, load_pings, load_shipments, write_pings, write_shipments, LoadError, Ping, Pingset, Place,
    Shipment, Stop, Timestamp, HOUR,
};
use crate::geo::{haversine_km, lane_code, trajectory_cell, GeoPoint, LaneCode};

const REGION_LAT: (f64, f64) = (33.0, 43.0);
const REGION_LON: (f64, f64) = (-100.0, -84.0);
const MIN_CITY_SEPARATION_KM: f64 = 120.0;
const LANE_LEN_KM: (f64, f64) = (150.0, 700.0);
const MAX_DECOY_TRIP_KM: f64 = 1000.0;
const JOURNEY_JITTER_KM: f64 = 5.0;
const GPS_NOISE_KM: f64 = 0.015;
const TRUE_PARKING_KM: f64 = 0.3;
const DECOY_PARKING_KM: (f64, f64) = (0.05, 0.9);
/// 2024-01-01T00:00:00Z
pub const DEFAULT_START_TS: Timestamp = 1_704_067_200;

#[derive(Debug, Error)]
pub enum SimError {
    #[error("inconsistent simulator config: {0}")]
    Config(String),
    #[error(transparent)]
    Load(#[from] LoadError),
    #[error("i/o error: {0}")]
    Io(#[from] io::Error),
    #[error("world file {file} line {line}: {msg}")]
    Format { file: String, line: usize, msg: String },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SimConfig {
    pub n_cities: usize,
    pub n_lanes: usize,
    pub n_shipments: usize,
    pub n_carriers: usize,
    pub routes_per_lane: usize,
    pub ping_interval_s: i64,
    pub ping_dropout: f64,
    /// Upper bound (or exact value, see `geocode_noise_fixed`) of stop error.
    pub geocode_noise_km: f64,
    pub geocode_noise_fixed: bool,
    pub decoys_per_shipment: usize,
    pub speed_kmh: f64,
    pub appointment_jitter_h: f64,
    pub horizon_days: u32,
    pub start_ts: Timestamp,
    pub seed: u64,
}

impl Default for SimConfig {
    fn default() -> Self {
        Self {
            n_cities: 16,
            n_lanes: 40,
            n_shipments: 500,
            n_carriers: 8,
            routes_per_lane: 3,
            ping_interval_s: 300,
            ping_dropout: 0.1,
            geocode_noise_km: 1.0,
            geocode_noise_fixed: false,
            decoys_per_shipment: 5,
            speed_kmh: 70.0,
            appointment_jitter_h: 0.5,
            horizon_days: 90,
            start_ts: DEFAULT_START_TS,
            seed: 0,
        }
    }
}

impl SimConfig {
    pub fn validate(&self) -> Result<(), SimError> {
        let bad = |m: &str| Err(SimError::Config(m.to_string()));
        if self.n_cities < 2 || self.n_lanes == 0 || self.n_shipments == 0 || self.n_carriers == 0 {
            return bad("city, lane, shipment and carrier counts must be positive (at least 2 cities)");
        }
        if self.routes_per_lane == 0 || self.ping_interval_s <= 0 || self.horizon_days == 0 {
            return bad("routes_per_lane, ping_interval_s and horizon_days must be positive");
        }
        if !(0.0..1.0).contains(&self.ping_dropout) {
            return bad("ping_dropout must lie in [0, 1)");
        }
        if !(self.geocode_noise_km >= 0.0 && self.geocode_noise_km.is_finite()) {
            return bad("geocode_noise_km must be non-negative");
        }
        if !(self.speed_kmh > 0.0 && self.appointment_jitter_h >= 0.0) {
            return bad("speed must be positive and jitter non-negative");
        }
        if self.decoys_per_shipment + 2 > self.n_cities {
            return Err(SimError::Config(format!(
                "{} decoys per shipment need {} cities (distinct alternative destinations), have {}",
                self.decoys_per_shipment,
                self.decoys_per_shipment + 2,
                self.n_cities
            )));
        }
        if self.start_ts <= 0 {
            return bad("start_ts must be positive");
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct City {
    pub name: String,
    pub location: GeoPoint,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum TruckRole {
    True,
    Decoy,
}

/// What a truck actually did.
#[derive(Debug, Clone, PartialEq)]
pub struct TruckRoute {
    pub truck_id: String,
    pub carrier_id: String,
    pub shipment_id: String,
    pub role: TruckRole,
    pub origin: GeoPoint,
    pub dest: GeoPoint,
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct GroundTruth {
    /// shipment id -> the truck that served it.
    pub true_truck: BTreeMap<String, String>,
    pub trucks: BTreeMap<String, TruckRoute>,
}

impl GroundTruth {
    /// The shipment with its true (un-geocoded) stop coordinates.
    pub fn true_shipment(&self, s: &Shipment) -> Option<Shipment> {
        let truck = self.trucks.get(self.true_truck.get(&s.shipment_id)?)?;
        Some(Shipment {
            pickup: Stop {
                location: truck.origin,
                appointment: s.pickup.appointment,
            },
            dropoff: Stop {
                location: truck.dest,
                appointment: s.dropoff.appointment,
            },
            ..s.clone()
        })
    }

    pub fn carriers(&self) -> HashMap<String, String> {
        self.trucks
            .values()
            .map(|t| (t.truck_id.clone(), t.carrier_id.clone()))
            .collect()
    }

    /// Decoy trucks generated alongside a shipment.
    pub fn decoys_of<'a>(&'a self, shipment_id: &'a str) -> impl Iterator<Item = &'a TruckRoute> + 'a {
        self.trucks
            .values()
            .filter(move |t| t.role == TruckRole::Decoy && t.shipment_id == shipment_id)
    }
}

/// A generated world. Shipment stops carry geocoding noise; `ground_truth`
/// keeps the true coordinates.
#[derive(Debug, Clone, PartialEq)]
pub struct World {
    pub cities: Vec<City>,
    pub shipments: Vec<Shipment>,
    pub pings: Vec<Ping>,
    pub ground_truth: GroundTruth,
}

impl World {
    pub fn fleet(&self) -> Vec<Pingset> {
        group_by_truck(&self.pings)
    }

    pub fn shipment(&self, id: &str) -> Option<&Shipment> {
        self.shipments.iter().find(|s| s.shipment_id == id)
    }
}

fn mix(seed: u64, a: u64, b: u64, tag: u64) -> u64 {
    // splitmix64 over the combined words
    let mut z = seed ^ a.wrapping_mul(0x9E37_79B9_7F4A_7C15) ^ b.wrapping_mul(0xC2B2_AE3D_27D4_EB4F) ^ tag;
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Point displaced from `p` in a uniformly random direction.
fn displace(rng: &mut ChaCha8Rng, p: &GeoPoint, km: f64) -> GeoPoint {
    if km <= 0.0 {
        return *p;
    }
    p.destination(rng.gen_range(0.0..360.0), km)
}

/// Piecewise great-circle path with cumulative lengths.
#[derive(Debug, Clone)]
struct Polyline {
    points: Vec<GeoPoint>,
    cumulative: Vec<f64>,
}

impl Polyline {
    fn new(points: Vec<GeoPoint>) -> Self {
        let mut cumulative = vec![0.0];
        for w in points.windows(2) {
            let last = *cumulative.last().unwrap();
            cumulative.push(last + haversine_km(&w[0], &w[1]));
        }
        Self { points, cumulative }
    }

    fn length(&self) -> f64 {
        *self.cumulative.last().unwrap()
    }

    fn at(&self, s: f64) -> GeoPoint {
        if s <= 0.0 {
            return self.points[0];
        }
        if s >= self.length() {
            return *self.points.last().unwrap();
        }
        let k = self.cumulative.partition_point(|&c| c <= s) - 1;
        let seg = self.cumulative[k + 1] - self.cumulative[k];
        if seg <= 0.0 {
            return self.points[k];
        }
        self.points[k].interpolate(&self.points[k + 1], (s - self.cumulative[k]) / seg)
    }
}

struct Generator<'a> {
    cfg: &'a SimConfig,
    cities: Vec<City>,
    rng: ChaCha8Rng,
    pings: Vec<Ping>,
}

impl Generator<'_> {
    /// Offsets (km, at mid-route) of the lane's corridors.
    fn corridors(&self, o: usize, d: usize) -> Vec<Vec<(f64, f64)>> {
        let mut rng = ChaCha8Rng::seed_from_u64(mix(self.cfg.seed, o as u64, d as u64, 0xC0));
        let len = haversine_km(&self.cities[o].location, &self.cities[d].location);
        let spacing = (0.12 * len).clamp(25.0, 60.0);
        let r = self.cfg.routes_per_lane;
        (0..r)
            .map(|k| {
                let offset = (k as f64 - (r as f64 - 1.0) / 2.0) * spacing + rng.gen_range(-3.0..3.0);
                let n_wp = rng.gen_range(1..=3);
                (0..n_wp)
                    .map(|j| {
                        let f = (j as f64 + 1.0) / (n_wp as f64 + 1.0) + rng.gen_range(-0.05..0.05);
                        (f, offset * (std::f64::consts::PI * f).sin())
                    })
                    .collect()
            })
            .collect()
    }

    /// One journey's path between two exact endpoints along corridor `route`.
    fn journey(&mut self, from: GeoPoint, to: GeoPoint, o: usize, d: usize, route: usize) -> Polyline {
        let shape = &self.corridors(o, d)[route];
        let (co, cd) = (self.cities[o].location, self.cities[d].location);
        let mut pts = vec![from];
        for &(f, offset) in shape {
            let base = co.interpolate(&cd, f);
            let perp = (base.bearing_to(&cd) + 90.0) % 360.0;
            let jitter = self.rng.gen_range(-JOURNEY_JITTER_KM..JOURNEY_JITTER_KM);
            pts.push(base.destination(perp, offset + jitter));
        }
        pts.push(to);
        Polyline::new(pts)
    }

    fn tz_offset(p: &GeoPoint) -> i32 {
        ((p.lon() / 15.0).round() * 60.0) as i32
    }

    /// Emits pings for a truck that waits at the path start from `present_from`
    /// until `depart`, drives at `speed_kmh`, and waits at the path end for
    /// `dwell_end_s`. Returns the arrival time.
    #[allow(clippy::too_many_arguments)]
    fn drive(
        &mut self,
        truck: &str,
        path: &Polyline,
        present_from: Timestamp,
        depart: Timestamp,
        speed_kmh: f64,
        dwell_end_s: Timestamp,
        start_city: &str,
        end_city: &str,
    ) -> Timestamp {
        let travel_s = (path.length() / speed_kmh * HOUR as f64).round() as Timestamp;
        let arrive = depart + travel_s;
        let end = arrive + dwell_end_s;
        let interval = self.cfg.ping_interval_s;
        let mut t = present_from + self.rng.gen_range(0..interval);
        let mut first = true;
        while t <= end {
            let (pos, city) = if t <= depart {
                (path.points[0], Some(start_city))
            } else if t >= arrive {
                (*path.points.last().unwrap(), Some(end_city))
            } else {
                (path.at(speed_kmh * (t - depart) as f64 / HOUR as f64), None)
            };
            let dropped = !first && self.rng.gen::<f64>() < self.cfg.ping_dropout;
            let gps_err = self.rng.gen_range(0.0..GPS_NOISE_KM);
            let noisy = displace(&mut self.rng, &pos, gps_err);
            if !dropped {
                let mut ping = Ping::new(truck, noisy, t).expect("simulated ping is valid");
                ping.tz_offset_minutes = Self::tz_offset(&noisy);
                ping.place = Place {
                    country: Some("US".into()),
                    state: None,
                    city: city.map(str::to_string),
                };
                self.pings.push(ping);
            }
            first = false;
            t += interval;
        }
        arrive
    }

    /// A parking spot within `km` of `stop` that stays in the stop's trajectory cell.
    fn parking_in_cell(&mut self, stop: &GeoPoint, max_km: f64) -> GeoPoint {
        let cell = trajectory_cell(stop);
        for _ in 0..32 {
            let km = self.rng.gen_range(0.0..max_km);
            let p = displace(&mut self.rng, stop, km);
            if trajectory_cell(&p) == cell {
                return p;
            }
        }
        *stop
    }
}

fn place_cities(rng: &mut ChaCha8Rng, n: usize) -> Result<Vec<City>, SimError> {
    let mut cities: Vec<City> = Vec::with_capacity(n);
    let mut attempts = 0;
    while cities.len() < n {
        attempts += 1;
        if attempts > 100_000 {
            return Err(SimError::Config(format!(
                "cannot place {n} cities {MIN_CITY_SEPARATION_KM} km apart"
            )));
        }
        let p = GeoPoint::new(
            rng.gen_range(REGION_LAT.0..REGION_LAT.1),
            rng.gen_range(REGION_LON.0..REGION_LON.1),
        )
        .expect("region inside valid range");
        if cities
            .iter()
            .all(|c| haversine_km(&c.location, &p) >= MIN_CITY_SEPARATION_KM)
            && cities.iter().all(|c| lane_code(&c.location, &p).is_ok())
        {
            cities.push(City {
                name: format!("CITY-{:02}", cities.len()),
                location: p,
            });
        }
    }
    Ok(cities)
}

/// Generates a world; identical configs give identical worlds.
pub fn generate_world(cfg: &SimConfig) -> Result<World, SimError> {
    cfg.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let cities = place_cities(&mut rng, cfg.n_cities)?;

    let mut lane_pool: Vec<(usize, usize)> = Vec::new();
    for o in 0..cities.len() {
        for d in 0..cities.len() {
            let len = haversine_km(&cities[o].location, &cities[d].location);
            if o != d && (LANE_LEN_KM.0..=LANE_LEN_KM.1).contains(&len) {
                lane_pool.push((o, d));
            }
        }
    }
    // A lane needs enough alternative destinations reachable from its origin.
    lane_pool.retain(|&(o, d)| {
        let alternatives = (0..cities.len())
            .filter(|&c| c != o && c != d)
            .filter(|&c| haversine_km(&cities[o].location, &cities[c].location) <= MAX_DECOY_TRIP_KM)
            .count();
        alternatives >= cfg.decoys_per_shipment
    });
    if lane_pool.len() < cfg.n_lanes {
        return Err(SimError::Config(format!(
            "only {} eligible lanes between {} cities, {} requested",
            lane_pool.len(),
            cfg.n_cities,
            cfg.n_lanes
        )));
    }
    lane_pool.shuffle(&mut rng);
    lane_pool.truncate(cfg.n_lanes);
    lane_pool.sort_unstable();

    let mut gen = Generator {
        cfg,
        cities,
        rng,
        pings: Vec::new(),
    };
    let mut shipments = Vec::with_capacity(cfg.n_shipments);
    let mut truth = GroundTruth::default();
    let jitter_s = (cfg.appointment_jitter_h * HOUR as f64).round() as Timestamp;
    let horizon_s = i64::from(cfg.horizon_days) * 86_400;
    let mut truck_seq = 0usize;

    for n in 0..cfg.n_shipments {
        let shipment_id = format!("SHP-{n:05}");
        let carrier_id = format!("CAR-{:02}", gen.rng.gen_range(0..cfg.n_carriers));
        let (o, d) = lane_pool[gen.rng.gen_range(0..lane_pool.len())];
        let (city_o, city_d) = (gen.cities[o].clone(), gen.cities[d].clone());
        let pickup_appt = cfg.start_ts + gen.rng.gen_range(0..horizon_s);

        // True truck.
        truck_seq += 1;
        let true_id = format!("TRK-{truck_seq:06}");
        let pickup_spot = gen.parking_in_cell(&city_o.location, TRUE_PARKING_KM);
        let drop_spot = gen.parking_in_cell(&city_d.location, TRUE_PARKING_KM);
        let route = gen.rng.gen_range(0..cfg.routes_per_lane);
        let path = gen.journey(pickup_spot, drop_spot, o, d, route);
        let speed = cfg.speed_kmh * gen.rng.gen_range(0.9..1.1);
        let present_from = pickup_appt - gen.rng.gen_range(HOUR / 4..=3 * HOUR / 2);
        let depart = pickup_appt + gen.rng.gen_range(0..=jitter_s);
        let drop_dwell = jitter_s + cfg.ping_interval_s + gen.rng.gen_range(HOUR / 2..=3 * HOUR / 2);
        let arrive = gen.drive(
            &true_id,
            &path,
            present_from,
            depart,
            speed,
            drop_dwell,
            &city_o.name,
            &city_d.name,
        );
        let drop_appt = (arrive + gen.rng.gen_range(0..=jitter_s)).max(pickup_appt + 1);

        // Geocoded (reported) stops.
        let noise = |rng: &mut ChaCha8Rng| {
            if cfg.geocode_noise_fixed {
                cfg.geocode_noise_km
            } else {
                rng.gen_range(0.0..=cfg.geocode_noise_km)
            }
        };
        let (np, nd) = (noise(&mut gen.rng), noise(&mut gen.rng));
        let reported_pickup = displace(&mut gen.rng, &city_o.location, np);
        let reported_drop = displace(&mut gen.rng, &city_d.location, nd);
        let shipment = Shipment::new(
            &shipment_id,
            &carrier_id,
            Stop {
                location: reported_pickup,
                appointment: pickup_appt,
            },
            Stop {
                location: reported_drop,
                appointment: drop_appt,
            },
        )
        .expect("simulated shipment is valid");
        truth.true_truck.insert(shipment_id.clone(), true_id.clone());
        truth.trucks.insert(
            true_id.clone(),
            TruckRoute {
                truck_id: true_id,
                carrier_id: carrier_id.clone(),
                shipment_id: shipment_id.clone(),
                role: TruckRole::True,
                origin: city_o.location,
                dest: city_d.location,
            },
        );

        // Decoys: same facility and carrier, other destinations, biased
        // towards destinations that share the initial heading.
        let heading = city_o.location.bearing_to(&city_d.location);
        let mut options: Vec<(usize, f64)> = (0..gen.cities.len())
            .filter(|&c| c != o && c != d)
            .filter(|&c| haversine_km(&city_o.location, &gen.cities[c].location) <= MAX_DECOY_TRIP_KM)
            .map(|c| {
                let b = city_o.location.bearing_to(&gen.cities[c].location);
                let diff = ((b - heading + 540.0) % 360.0 - 180.0).abs().to_radians();
                (c, (1.0 + diff.cos()).powi(2) + 0.05)
            })
            .collect();
        for _ in 0..cfg.decoys_per_shipment {
            let total: f64 = options.iter().map(|(_, w)| w).sum();
            let mut pick = gen.rng.gen_range(0.0..total);
            let k = options
                .iter()
                .position(|(_, w)| {
                    pick -= w;
                    pick < 0.0
                })
                .unwrap_or(options.len() - 1);
            let (dc, _) = options.swap_remove(k);
            let dest_city = gen.cities[dc].clone();
            truck_seq += 1;
            let decoy_id = format!("TRK-{truck_seq:06}");
            let park_km = gen.rng.gen_range(DECOY_PARKING_KM.0..DECOY_PARKING_KM.1);
            let spot = displace(&mut gen.rng, &city_o.location, park_km);
            let drop_km = gen.rng.gen_range(0.0..TRUE_PARKING_KM);
            let decoy_drop = displace(&mut gen.rng, &dest_city.location, drop_km);
            let route = gen.rng.gen_range(0..cfg.routes_per_lane);
            let path = gen.journey(spot, decoy_drop, o, dc, route);
            let speed = cfg.speed_kmh * gen.rng.gen_range(0.9..1.1);
            let present_from = pickup_appt - gen.rng.gen_range(HOUR / 4..=2 * HOUR);
            let depart = (pickup_appt + gen.rng.gen_range(-HOUR / 4..=HOUR)).max(present_from + HOUR / 6);
            let dwell = gen.rng.gen_range(HOUR / 2..=3 * HOUR / 2);
            gen.drive(
                &decoy_id,
                &path,
                present_from,
                depart,
                speed,
                dwell,
                &city_o.name,
                &dest_city.name,
            );
            truth.trucks.insert(
                decoy_id.clone(),
                TruckRoute {
                    truck_id: decoy_id,
                    carrier_id: carrier_id.clone(),
                    shipment_id: shipment_id.clone(),
                    role: TruckRole::Decoy,
                    origin: city_o.location,
                    dest: dest_city.location,
                },
            );
        }
        shipments.push(shipment);
    }

    let mut pings = gen.pings;
    pings.sort_by(|a, b| a.timestamp.cmp(&b.timestamp).then_with(|| a.truck_id.cmp(&b.truck_id)));
    Ok(World {
        cities: gen.cities,
        shipments,
        pings,
        ground_truth: truth,
    })
}

// ---------------------------------------------------------------------------
// History / evaluation split
// ---------------------------------------------------------------------------

#[derive(Debug, Clone, PartialEq, Default)]
pub struct Split {
    pub history: Vec<String>,
    pub eval: Vec<String>,
    /// Lanes deliberately kept out of history.
    pub cold_lanes: Vec<LaneCode>,
}

/// Partitions shipments into history (lane store + training) and evaluation.
///
/// Roughly `history_fraction` of shipments go to history. Evaluation
/// shipments whose lane never occurs in history are moved to history, except
/// on `cold_start_lanes` lanes chosen at random, whose shipments all go to
/// evaluation.
pub fn split_history_vs_eval(world: &World, history_fraction: f64, cold_start_lanes: usize, seed: u64) -> Split {
    assert!(
        history_fraction > 0.0 && history_fraction < 1.0,
        "history fraction must lie in (0, 1)"
    );
    let mut rng = ChaCha8Rng::seed_from_u64(mix(seed, 0x5, 0x17, 0x5B));
    let lane_of = |s: &Shipment| lane_code(&s.pickup.location, &s.dropoff.location).ok();

    let lanes: BTreeSet<LaneCode> = world.shipments.iter().filter_map(lane_of).collect();
    let mut lanes: Vec<LaneCode> = lanes.into_iter().collect();
    lanes.shuffle(&mut rng);
    let cold: BTreeSet<LaneCode> = lanes.into_iter().take(cold_start_lanes).collect();

    let mut history = Vec::new();
    let mut eval = Vec::new();
    for s in &world.shipments {
        let lane = lane_of(s);
        if lane.is_some_and(|l| cold.contains(&l)) {
            eval.push(s);
        } else if rng.gen::<f64>() < history_fraction {
            history.push(s);
        } else {
            eval.push(s);
        }
    }
    let history_lanes: BTreeSet<LaneCode> = history.iter().filter_map(|s| lane_of(s)).collect();
    let (keep, moved): (Vec<&Shipment>, Vec<&Shipment>) = eval.into_iter().partition(|s| match lane_of(s) {
        Some(l) => cold.contains(&l) || history_lanes.contains(&l),
        None => true,
    });
    // Shipments moved back to history seed their lane; later ones on the same
    // lane can stay in evaluation.
    let mut seeded = BTreeSet::new();
    let mut eval: Vec<&Shipment> = keep;
    for s in moved {
        let l = lane_of(s).expect("moved shipments have a lane");
        if seeded.insert(l) {
            history.push(s);
        } else {
            eval.push(s);
        }
    }
    let order: HashMap<&str, usize> = world
        .shipments
        .iter()
        .enumerate()
        .map(|(i, s)| (s.shipment_id.as_str(), i))
        .collect();
    let ids = |v: Vec<&Shipment>| {
        let mut out: Vec<String> = v.into_iter().map(|s| s.shipment_id.clone()).collect();
        out.sort_by_key(|id| order[id.as_str()]);
        out
    };
    Split {
        history: ids(history),
        eval: ids(eval),
        cold_lanes: cold.into_iter().collect(),
    }
}

// ---------------------------------------------------------------------------
// Files
// ---------------------------------------------------------------------------

pub const PINGS_FILE: &str = "pings.jsonl";
pub const SHIPMENTS_FILE: &str = "shipments.jsonl";
pub const GROUND_TRUTH_FILE: &str = "ground_truth.csv";
pub const TRUCKS_FILE: &str = "trucks.csv";
pub const SPLIT_FILE: &str = "split.csv";

/// Writes the world's ping, shipment and ground-truth files into `dir`.
pub fn write_world(world: &World, dir: &Path) -> Result<(), SimError> {
    fs::create_dir_all(dir)?;
    write_pings(&dir.join(PINGS_FILE), &world.pings)?;
    write_shipments(&dir.join(SHIPMENTS_FILE), &world.shipments)?;

    let mut gt = BufWriter::new(fs::File::create(dir.join(GROUND_TRUTH_FILE))?);
    writeln!(gt, "shipment_id,true_truck_id")?;
    for s in &world.shipments {
        writeln!(
            gt,
            "{},{}",
            s.shipment_id, world.ground_truth.true_truck[&s.shipment_id]
        )?;
    }
    gt.flush()?;

    let mut tw = BufWriter::new(fs::File::create(dir.join(TRUCKS_FILE))?);
    writeln!(
        tw,
        "truck_id,carrier_id,shipment_id,role,origin_lat,origin_lon,dest_lat,dest_lon"
    )?;
    for t in world.ground_truth.trucks.values() {
        let role = match t.role {
            TruckRole::True => "true",
            TruckRole::Decoy => "decoy",
        };
        writeln!(
            tw,
            "{},{},{},{},{:?},{:?},{:?},{:?}",
            t.truck_id,
            t.carrier_id,
            t.shipment_id,
            role,
            t.origin.lat(),
            t.origin.lon(),
            t.dest.lat(),
            t.dest.lon()
        )?;
    }
    tw.flush()?;
    Ok(())
}

pub fn write_split(split: &Split, path: &Path) -> io::Result<()> {
    let mut w = BufWriter::new(fs::File::create(path)?);
    writeln!(w, "shipment_id,part")?;
    for id in &split.history {
        writeln!(w, "{id},history")?;
    }
    for id in &split.eval {
        writeln!(w, "{id},eval")?;
    }
    w.flush()
}

fn csv_lines(path: &Path, header: &str) -> Result<Vec<(usize, Vec<String>)>, SimError> {
    let file = path.display().to_string();
    let text = fs::read_to_string(path)?;
    let mut lines = text.lines().enumerate();
    match lines.next() {
        Some((_, h)) if h.trim() == header => {}
        _ => {
            return Err(SimError::Format {
                file,
                line: 1,
                msg: format!("expected header `{header}`"),
            })
        }
    }
    Ok(lines
        .filter(|(_, l)| !l.trim().is_empty())
        .map(|(i, l)| (i + 1, l.split(',').map(|f| f.trim().to_string()).collect()))
        .collect())
}

pub fn read_split(path: &Path) -> Result<Split, SimError> {
    let mut split = Split::default();
    for (line, f) in csv_lines(path, "shipment_id,part")? {
        match f.as_slice() {
            [id, part] if part == "history" => split.history.push(id.clone()),
            [id, part] if part == "eval" => split.eval.push(id.clone()),
            _ => {
                return Err(SimError::Format {
                    file: path.display().to_string(),
                    line,
                    msg: "expected `<shipment_id>,history|eval`".into(),
                })
            }
        }
    }
    Ok(split)
}

/// Reads a world written by [`write_world`]. City metadata is not persisted.
pub fn read_world(dir: &Path) -> Result<World, SimError> {
    let pings = load_pings(&dir.join(PINGS_FILE))?.records;
    let shipments = load_shipments(&dir.join(SHIPMENTS_FILE))?.records;
    let mut truth = GroundTruth::default();
    let gt_path = dir.join(GROUND_TRUTH_FILE);
    for (line, f) in csv_lines(&gt_path, "shipment_id,true_truck_id")? {
        let [s, t] = f.as_slice() else {
            return Err(SimError::Format {
                file: gt_path.display().to_string(),
                line,
                msg: "expected two fields".into(),
            });
        };
        truth.true_truck.insert(s.clone(), t.clone());
    }
    let trucks_path = dir.join(TRUCKS_FILE);
    for (line, f) in csv_lines(
        &trucks_path,
        "truck_id,carrier_id,shipment_id,role,origin_lat,origin_lon,dest_lat,dest_lon",
    )? {
        let bad = |msg: &str| SimError::Format {
            file: trucks_path.display().to_string(),
            line,
            msg: msg.to_string(),
        };
        if f.len() != 8 {
            return Err(bad("expected eight fields"));
        }
        let num = |i: usize| f[i].parse::<f64>().map_err(|_| bad("malformed coordinate"));
        let origin = GeoPoint::new(num(4)?, num(5)?).map_err(|_| bad("invalid origin"))?;
        let dest = GeoPoint::new(num(6)?, num(7)?).map_err(|_| bad("invalid destination"))?;
        let role = match f[3].as_str() {
            "true" => TruckRole::True,
            "decoy" => TruckRole::Decoy,
            _ => return Err(bad("role must be true or decoy")),
        };
        truth.trucks.insert(
            f[0].clone(),
            TruckRoute {
                truck_id: f[0].clone(),
                carrier_id: f[1].clone(),
                shipment_id: f[2].clone(),
                role,
                origin,
                dest,
            },
        );
    }
    Ok(World {
        cities: Vec::new(),
        shipments,
        pings,
        ground_truth: truth,
    })
}
