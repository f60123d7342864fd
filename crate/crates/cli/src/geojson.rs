//! GeoJSON views of one shipment: the truck's trajectory, the lane's cells,
//! the truck's cells and their overlap.

use std::collections::{BTreeMap, BTreeSet};

use itm::domain::{Pingset, Shipment};
use itm::geo::{trajectory_cell, GeoPoint, HexCell};
use itm::lanestore::LaneRecord;
use serde_json::{json, Value};

fn coord(p: &GeoPoint) -> Value {
    json!([p.lon(), p.lat()])
}

fn collection(features: Vec<Value>) -> Value {
    json!({ "type": "FeatureCollection", "features": features })
}

fn cell_feature(cell: &HexCell, props: Value) -> Value {
    let mut ring: Vec<Value> = cell.boundary().iter().map(coord).collect();
    if let Some(first) = ring.first().cloned() {
        ring.push(first);
    }
    json!({
        "type": "Feature",
        "geometry": { "type": "Polygon", "coordinates": [ring] },
        "properties": props,
    })
}

pub struct Layers {
    pub trajectory: Value,
    pub lane_cells: Value,
    pub truck_cells: Value,
    pub overlap_cells: Value,
}

pub fn layers(s: &Shipment, truck: &Pingset, record: Option<&LaneRecord>) -> Layers {
    let line: Vec<Value> = truck.pings().iter().map(|p| coord(&p.position)).collect();
    let stop = |name: &str, at: &GeoPoint, appointment: i64| {
        json!({
            "type": "Feature",
            "geometry": { "type": "Point", "coordinates": coord(at) },
            "properties": { "stop": name, "shipment_id": s.shipment_id, "appointment": appointment },
        })
    };
    let trajectory = collection(vec![
        json!({
            "type": "Feature",
            "geometry": { "type": "LineString", "coordinates": line },
            "properties": { "truck_id": truck.truck_id(), "pings": truck.len() },
        }),
        stop("pickup", &s.pickup.location, s.pickup.appointment),
        stop("dropoff", &s.dropoff.location, s.dropoff.appointment),
    ]);

    let lane: BTreeMap<HexCell, u64> = record
        .map(|r| r.cell_counts.iter().map(|(c, n)| (*c, *n)).collect())
        .unwrap_or_default();
    let mut truck_counts: BTreeMap<HexCell, u64> = BTreeMap::new();
    for p in truck.pings() {
        *truck_counts.entry(trajectory_cell(&p.position)).or_insert(0) += 1;
    }
    let overlap: BTreeSet<HexCell> = truck_counts.keys().filter(|c| lane.contains_key(c)).copied().collect();

    let lane_cells = collection(
        lane.iter()
            .map(|(c, n)| cell_feature(c, json!({ "cell": c.to_string(), "lane_pings": n })))
            .collect(),
    );
    let truck_cells = collection(
        truck_counts
            .iter()
            .map(|(c, n)| cell_feature(c, json!({ "cell": c.to_string(), "truck_pings": n })))
            .collect(),
    );
    let overlap_cells = collection(
        overlap
            .iter()
            .map(|c| {
                cell_feature(
                    c,
                    json!({ "cell": c.to_string(), "truck_pings": truck_counts[c], "lane_pings": lane[c] }),
                )
            })
            .collect(),
    );
    Layers {
        trajectory,
        lane_cells,
        truck_cells,
        overlap_cells,
    }
}
