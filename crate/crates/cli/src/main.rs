//! `itm`: simulate fleets, build lane history, train the ranker and run the
//! matcher and its evaluations from the command line.

mod config;
mod geojson;

use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{anyhow, bail, Context, Result};
use clap::{Args, Parser, Subcommand};
use itm::dataset::{build_training_rows, grouped_split, read_dataset, write_dataset};
use itm::domain::Shipment;
use itm::eval::{
    ablate, completed_journeys, read_decisions, render_reports, roc_auc, shadow_run, summarize, write_decisions,
    write_reports_jsonl, Ablation, EvalContext, ShipmentResult,
};
use itm::geo::lane_code;
use itm::lanestore::{build_lane_store, refresh, LaneStore};
use itm::model::{logloss, train, train_with_report, BoostedModel, TrainRow};
use itm::pipeline::Fleet;
use itm::sim::{
    generate_world, read_split, read_world, split_history_vs_eval, write_split, write_world, Split, World,
    GROUND_TRUTH_FILE, PINGS_FILE, SHIPMENTS_FILE, SPLIT_FILE, TRUCKS_FILE,
};
use log::info;
use serde::Serialize;
use serde_json::json;
use sha2::{Digest, Sha256};

use crate::config::Config;

const LANES_FILE: &str = "lanes.jsonl";
const DATASET_FILE: &str = "dataset.csv";
const MODEL_FILE: &str = "model.txt";
const DECISIONS_FILE: &str = "decisions.csv";
const MANIFEST_FILE: &str = "manifest.json";

#[derive(Parser)]
#[command(name = "itm", version, about = "Truck-to-shipment matching pipeline")]
struct Cli {
    #[command(flatten)]
    global: GlobalArgs,
    #[command(subcommand)]
    command: Cmd,
}

#[derive(Args)]
struct GlobalArgs {
    /// TOML file overriding the built-in defaults.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Output directory.
    #[arg(long, global = true)]
    out: Option<PathBuf>,
    /// Print the effective configuration as TOML and exit.
    #[arg(long, global = true)]
    print_config: bool,
    #[arg(long, global = true)]
    tau_min: Option<f64>,
    #[arg(long, global = true)]
    tau_medium: Option<f64>,
    #[arg(long, global = true)]
    tau_high: Option<f64>,
    #[arg(long, global = true)]
    pickup_radius_km: Option<f64>,
    #[arg(long, global = true)]
    min_pings: Option<usize>,
    #[arg(long, global = true)]
    short_haul_km: Option<f64>,
}

#[derive(Subcommand)]
enum Cmd {
    /// Generate a synthetic world and its history/evaluation split.
    Simulate {
        #[arg(long)]
        shipments: Option<usize>,
        #[arg(long)]
        decoys: Option<usize>,
        /// Largest stop geocode error, km.
        #[arg(long)]
        noise_km: Option<f64>,
        /// Use exactly `noise_km` for every stop.
        #[arg(long)]
        noise_fixed: bool,
    },
    /// Build the lane store from the history shipments' journeys.
    BuildLanes {
        #[arg(long)]
        world: PathBuf,
    },
    /// Add the evaluation shipments' journeys to a lane store and evict stale days.
    RefreshLanes {
        #[arg(long)]
        world: PathBuf,
        #[arg(long)]
        lanes: PathBuf,
        /// Eviction reference time (Unix seconds); defaults to the latest dropoff.
        #[arg(long)]
        now: Option<i64>,
    },
    /// Snapshot training rows for the history shipments.
    MakeDataset {
        #[arg(long)]
        world: PathBuf,
        #[arg(long)]
        lanes: PathBuf,
    },
    /// Train the boosted ranker.
    Train {
        #[arg(long)]
        dataset: PathBuf,
        #[arg(long)]
        n_trees: Option<usize>,
    },
    /// Replay the evaluation shipments through the matcher.
    Match {
        #[arg(long)]
        world: PathBuf,
        #[arg(long)]
        lanes: PathBuf,
        #[arg(long)]
        model: PathBuf,
        /// Match only this shipment.
        #[arg(long)]
        shipment: Option<String>,
    },
    /// Run the learned matcher and the rule baseline on the same requests.
    ShadowEval {
        #[arg(long)]
        world: PathBuf,
        #[arg(long)]
        lanes: PathBuf,
        #[arg(long)]
        model: PathBuf,
    },
    /// Compare the full matcher with its ablations, training each model.
    Ablate {
        #[arg(long)]
        world: PathBuf,
        #[arg(long)]
        lanes: PathBuf,
        #[arg(long)]
        dataset: PathBuf,
        #[arg(long)]
        n_trees: Option<usize>,
        /// Comma-separated subset of full, no_postprocess, no_hexcell.
        #[arg(long, value_delimiter = ',')]
        configs: Option<Vec<String>>,
    },
    /// Write trajectory, lane, truck and overlap cells of one shipment.
    ExportGeojson {
        #[arg(long)]
        world: PathBuf,
        #[arg(long)]
        lanes: PathBuf,
        /// Defaults to the first evaluation shipment with lane history.
        #[arg(long)]
        shipment: Option<String>,
        /// Defaults to the shipment's true truck.
        #[arg(long)]
        truck: Option<String>,
    },
    /// Coverage and precision of a decision log against ground truth.
    Metrics {
        #[arg(long)]
        world: PathBuf,
        #[arg(long)]
        decisions: PathBuf,
    },
}

impl Cmd {
    fn name(&self) -> &'static str {
        match self {
            Cmd::Simulate { .. } => "simulate",
            Cmd::BuildLanes { .. } => "build-lanes",
            Cmd::RefreshLanes { .. } => "refresh-lanes",
            Cmd::MakeDataset { .. } => "make-dataset",
            Cmd::Train { .. } => "train",
            Cmd::Match { .. } => "match",
            Cmd::ShadowEval { .. } => "shadow-eval",
            Cmd::Ablate { .. } => "ablate",
            Cmd::ExportGeojson { .. } => "export-geojson",
            Cmd::Metrics { .. } => "metrics",
        }
    }
}

fn effective_config(g: &GlobalArgs, cmd: &Cmd) -> Result<Config> {
    let mut cfg = match &g.config {
        Some(path) => Config::from_file(path)?,
        None => Config::default(),
    };
    if let Some(seed) = g.seed {
        cfg.seed = seed;
    }
    cfg.sync_seed();
    let t = &mut cfg.pipeline.thresholds;
    t.tau_min = g.tau_min.unwrap_or(t.tau_min);
    t.tau_medium = g.tau_medium.unwrap_or(t.tau_medium);
    t.tau_high = g.tau_high.unwrap_or(t.tau_high);
    let p = &mut cfg.pipeline;
    p.pickup_radius_km = g.pickup_radius_km.unwrap_or(p.pickup_radius_km);
    p.min_pings = g.min_pings.unwrap_or(p.min_pings);
    p.short_haul_km = g.short_haul_km.unwrap_or(p.short_haul_km);
    match cmd {
        Cmd::Simulate {
            shipments,
            decoys,
            noise_km,
            noise_fixed,
        } => {
            cfg.sim.n_shipments = shipments.unwrap_or(cfg.sim.n_shipments);
            cfg.sim.decoys_per_shipment = decoys.unwrap_or(cfg.sim.decoys_per_shipment);
            cfg.sim.geocode_noise_km = noise_km.unwrap_or(cfg.sim.geocode_noise_km);
            cfg.sim.geocode_noise_fixed |= noise_fixed;
        }
        Cmd::Train { n_trees, .. } | Cmd::Ablate { n_trees, .. } => {
            cfg.train.n_trees = n_trees.unwrap_or(cfg.train.n_trees);
        }
        _ => {}
    }
    cfg.pipeline.validate()?;
    cfg.sim.validate()?;
    Ok(cfg)
}

// ---------------------------------------------------------------------------
// Artifacts
// ---------------------------------------------------------------------------

/// Fails with the artifact's name and the subcommand that produces it.
fn require(path: &Path, produced_by: &str) -> Result<()> {
    if path.exists() {
        Ok(())
    } else {
        bail!("missing artifact {} (produced by `itm {produced_by}`)", path.display())
    }
}

fn sha256(path: &Path) -> Result<String> {
    let bytes = fs::read(path).with_context(|| format!("cannot read {}", path.display()))?;
    Ok(format!("{:x}", Sha256::digest(&bytes)))
}

struct LoadedWorld {
    world: World,
    split: Split,
    fleet: Fleet,
}

impl LoadedWorld {
    fn shipments(&self, ids: &[String]) -> Result<Vec<&Shipment>> {
        ids.iter()
            .map(|id| {
                self.world
                    .shipment(id)
                    .ok_or_else(|| anyhow!("split names unknown shipment {id}"))
            })
            .collect()
    }
}

/// Input files read by a run, for the manifest.
#[derive(Default)]
struct Inputs(Vec<PathBuf>);

impl Inputs {
    fn world(&mut self, dir: &Path) -> Result<LoadedWorld> {
        for f in [PINGS_FILE, SHIPMENTS_FILE, GROUND_TRUTH_FILE, TRUCKS_FILE, SPLIT_FILE] {
            let p = dir.join(f);
            require(&p, "simulate")?;
            self.0.push(p);
        }
        let world = read_world(dir).with_context(|| format!("cannot load world from {}", dir.display()))?;
        let split = read_split(&dir.join(SPLIT_FILE))?;
        let fleet = Fleet::new(&world.pings);
        Ok(LoadedWorld { world, split, fleet })
    }

    fn lanes(&mut self, path: &Path) -> Result<LaneStore> {
        require(path, "build-lanes")?;
        self.0.push(path.to_path_buf());
        LaneStore::load(path).with_context(|| format!("cannot load lane store {}", path.display()))
    }

    fn dataset(&mut self, path: &Path) -> Result<Vec<TrainRow>> {
        require(path, "make-dataset")?;
        self.0.push(path.to_path_buf());
        read_dataset(path).with_context(|| format!("cannot load dataset {}", path.display()))
    }

    fn model(&mut self, path: &Path) -> Result<BoostedModel> {
        require(path, "train")?;
        self.0.push(path.to_path_buf());
        BoostedModel::load(path).with_context(|| format!("cannot load model {}", path.display()))
    }

    fn decisions(&mut self, path: &Path) -> Result<Vec<itm::pipeline::DecisionRecord>> {
        require(path, "match")?;
        self.0.push(path.to_path_buf());
        read_decisions(path).with_context(|| format!("cannot load decisions {}", path.display()))
    }
}

#[derive(Serialize)]
struct Manifest<'a> {
    command: &'a str,
    version: &'a str,
    config: &'a Config,
    inputs: BTreeMap<String, String>,
    outputs: BTreeMap<String, String>,
}

/// Hashes of every input and of every file in `out`; no timestamps, so the
/// manifest is as reproducible as the outputs.
fn write_manifest(out: &Path, command: &str, cfg: &Config, inputs: &Inputs) -> Result<()> {
    let mut in_hashes = BTreeMap::new();
    for p in &inputs.0 {
        in_hashes.insert(p.display().to_string(), sha256(p)?);
    }
    let mut outputs = BTreeMap::new();
    for entry in fs::read_dir(out)? {
        let path = entry?.path();
        let name = path
            .file_name()
            .map(|n| n.to_string_lossy().into_owned())
            .unwrap_or_default();
        if path.is_file() && name != MANIFEST_FILE {
            outputs.insert(name, sha256(&path)?);
        }
    }
    let manifest = Manifest {
        command,
        version: env!("CARGO_PKG_VERSION"),
        config: cfg,
        inputs: in_hashes,
        outputs,
    };
    fs::write(out.join(MANIFEST_FILE), serde_json::to_string_pretty(&manifest)? + "\n")?;
    Ok(())
}

fn write_json(path: &Path, value: &impl Serialize) -> Result<()> {
    fs::write(path, serde_json::to_string_pretty(value)? + "\n")?;
    Ok(())
}

// ---------------------------------------------------------------------------
// Subcommands
// ---------------------------------------------------------------------------

fn simulate(cfg: &Config, out: &Path) -> Result<()> {
    let world = generate_world(&cfg.sim)?;
    write_world(&world, out)?;
    let split = split_history_vs_eval(&world, cfg.split.history_fraction, cfg.split.cold_start_lanes, cfg.seed);
    write_split(&split, &out.join(SPLIT_FILE))?;
    info!(
        "{} shipments, {} pings; {} history / {} evaluation",
        world.shipments.len(),
        world.pings.len(),
        split.history.len(),
        split.eval.len()
    );
    Ok(())
}

fn build_lanes(w: &LoadedWorld, out: &Path) -> Result<()> {
    let history = w.shipments(&w.split.history)?;
    let (store, report) = build_lane_store(&completed_journeys(&history, &w.fleet, &w.world.ground_truth));
    store.save(&out.join(LANES_FILE))?;
    write_json(
        &out.join("ingest.json"),
        &json!({ "ingested": report.ingested, "skipped_same_cell": report.skipped_same_cell, "lanes": store.len() }),
    )?;
    info!("{} lanes from {} journeys", store.len(), report.ingested);
    Ok(())
}

fn refresh_lanes(w: &LoadedWorld, store: LaneStore, now: Option<i64>, out: &Path) -> Result<()> {
    let new = completed_journeys(&w.shipments(&w.split.eval)?, &w.fleet, &w.world.ground_truth);
    let now = now
        .or_else(|| new.iter().map(|(s, _)| s.dropoff.appointment).max())
        .unwrap_or(0);
    let (store, report) = refresh(store, &new, now);
    store.save(&out.join(LANES_FILE))?;
    write_json(
        &out.join("ingest.json"),
        &json!({
            "ingested": report.ingested,
            "skipped_same_cell": report.skipped_same_cell,
            "evicted_lanes": report.evicted_lanes,
            "lanes": store.len(),
            "now": now,
        }),
    )?;
    Ok(())
}

fn make_dataset(cfg: &Config, w: &LoadedWorld, store: &LaneStore, out: &Path) -> Result<()> {
    let history = w.shipments(&w.split.history)?;
    let (rows, report) = build_training_rows(
        &history,
        &w.fleet,
        &w.world.ground_truth,
        store,
        &cfg.pipeline,
        &cfg.dataset_config()?,
    )?;
    write_dataset(&rows, &out.join(DATASET_FILE))?;
    let warnings: Vec<String> = report.warnings.iter().map(|w| format!("{w:?}")).collect();
    write_json(
        &out.join("dataset_report.json"),
        &json!({
            "shipments": report.shipments,
            "positives": report.positives,
            "negatives": report.negatives,
            "dropped_negatives": report.dropped_negatives,
            "skipped_shipments": report.skipped_shipments,
            "warnings": warnings,
        }),
    )?;
    info!("{} positive and {} negative rows", report.positives, report.negatives);
    Ok(())
}

fn score_rows(model: &BoostedModel, rows: &[TrainRow]) -> (Option<f64>, Option<f64>) {
    if rows.is_empty() {
        return (None, None);
    }
    let labels: Vec<u8> = rows.iter().map(|r| r.label).collect();
    let probs: Vec<f64> = rows.iter().map(|r| model.predict(&r.features)).collect();
    let y: Vec<f64> = labels.iter().map(|&l| f64::from(l)).collect();
    (roc_auc(&labels, &probs), logloss(&y, &probs).ok())
}

fn train_cmd(cfg: &Config, rows: &[TrainRow], out: &Path) -> Result<()> {
    let vf = cfg.dataset.validation_fraction;
    let (train_rows, val_rows) = if vf > 0.0 {
        grouped_split(rows, vf, cfg.seed)?
    } else {
        (rows.to_vec(), Vec::new())
    };
    let (model, report) = train_with_report(&train_rows, &cfg.train)?;
    model.save(&out.join(MODEL_FILE))?;
    let (train_auc, train_loss) = score_rows(&model, &train_rows);
    let (val_auc, val_loss) = score_rows(&model, &val_rows);
    write_json(
        &out.join("train_report.json"),
        &json!({
            "train_rows": train_rows.len(),
            "validation_rows": val_rows.len(),
            "train_auc": train_auc,
            "train_logloss": train_loss,
            "validation_auc": val_auc,
            "validation_logloss": val_loss,
            "round_logloss": report.losses,
        }),
    )?;
    info!("{} trees; validation AUC {:?}", model.n_trees(), val_auc);
    Ok(())
}

fn context<'a>(
    cfg: &Config,
    w: &'a LoadedWorld,
    shipments: Vec<&'a Shipment>,
    store: &'a LaneStore,
) -> EvalContext<'a> {
    EvalContext {
        shipments,
        fleet: &w.fleet,
        truth: &w.world.ground_truth,
        store,
        use_carriers: cfg.eval.use_carriers,
    }
}

fn match_cmd(
    cfg: &Config,
    w: &LoadedWorld,
    store: &LaneStore,
    model: &BoostedModel,
    only: Option<&str>,
    out: &Path,
) -> Result<()> {
    let shipments = match only {
        Some(id) => vec![w.world.shipment(id).ok_or_else(|| anyhow!("unknown shipment {id}"))?],
        None => w.shipments(&w.split.eval)?,
    };
    let results = context(cfg, w, shipments, store).run_itm2(model, &cfg.pipeline);
    write_decisions(results.iter().map(|r| &r.record), &out.join(DECISIONS_FILE))?;
    info!(
        "{} of {} shipments assigned",
        results.iter().filter(|r| r.record.assigned_truck.is_some()).count(),
        results.len()
    );
    Ok(())
}

fn shadow_eval(cfg: &Config, w: &LoadedWorld, store: &LaneStore, model: &BoostedModel, out: &Path) -> Result<()> {
    let ctx = context(cfg, w, w.shipments(&w.split.eval)?, store);
    let shadow = shadow_run(&ctx, model, &cfg.pipeline);
    write_decisions(
        shadow.itm2_results.iter().map(|r| &r.record),
        &out.join("itm2_decisions.csv"),
    )?;
    write_decisions(
        shadow.itm1_results.iter().map(|r| &r.record),
        &out.join("itm1_decisions.csv"),
    )?;
    let reports = [shadow.itm2, shadow.itm1];
    write_reports_jsonl(&reports, &out.join("report.jsonl"))?;
    let table = render_reports(&reports);
    fs::write(out.join("report.txt"), &table)?;
    print!("{table}");
    Ok(())
}

fn ablate_cmd(
    cfg: &Config,
    w: &LoadedWorld,
    store: &LaneStore,
    rows: &[TrainRow],
    configs: &[Ablation],
    out: &Path,
) -> Result<()> {
    let mut models: BTreeMap<bool, BoostedModel> = BTreeMap::new();
    for masked in configs.iter().map(|a| a.masks_hexcells()) {
        if models.contains_key(&masked) {
            continue;
        }
        let rows: Vec<TrainRow> = if masked {
            rows.iter()
                .map(|r| TrainRow {
                    features: r.features.without_hexcells(),
                    ..r.clone()
                })
                .collect()
        } else {
            rows.to_vec()
        };
        let model = train(&rows, &cfg.train)?;
        model.save(&out.join(if masked { "model_no_hexcell.txt" } else { MODEL_FILE }))?;
        models.insert(masked, model);
    }
    let runs: Vec<(Ablation, &BoostedModel)> = configs.iter().map(|a| (*a, &models[&a.masks_hexcells()])).collect();
    let ctx = context(cfg, w, w.shipments(&w.split.eval)?, store);
    let reports = ablate(&ctx, &cfg.pipeline, &runs);
    write_reports_jsonl(&reports, &out.join("report.jsonl"))?;
    let table = render_reports(&reports);
    fs::write(out.join("report.txt"), &table)?;
    print!("{table}");
    Ok(())
}

fn export_geojson(
    w: &LoadedWorld,
    store: &LaneStore,
    shipment: Option<&str>,
    truck: Option<&str>,
    out: &Path,
) -> Result<()> {
    let record_of = |s: &Shipment| {
        lane_code(&s.pickup.location, &s.dropoff.location)
            .ok()
            .and_then(|l| store.lookup(&l))
    };
    let s = match shipment {
        Some(id) => w.world.shipment(id).ok_or_else(|| anyhow!("unknown shipment {id}"))?,
        None => *w
            .shipments(&w.split.eval)?
            .iter()
            .find(|s| record_of(s).is_some())
            .ok_or_else(|| anyhow!("no evaluation shipment has lane history"))?,
    };
    let truck_id = match truck {
        Some(t) => t.to_string(),
        None => w
            .world
            .ground_truth
            .true_truck
            .get(&s.shipment_id)
            .cloned()
            .ok_or_else(|| anyhow!("no known truck for {}; pass --truck", s.shipment_id))?,
    };
    let pings = w
        .fleet
        .get(&truck_id)
        .ok_or_else(|| anyhow!("unknown truck {truck_id}"))?;
    let (start, end) = s.ping_window();
    let layers = geojson::layers(s, &pings.window(start, end), record_of(s));
    write_json(&out.join("trajectory.geojson"), &layers.trajectory)?;
    write_json(&out.join("lane_cells.geojson"), &layers.lane_cells)?;
    write_json(&out.join("truck_cells.geojson"), &layers.truck_cells)?;
    write_json(&out.join("overlap_cells.geojson"), &layers.overlap_cells)?;
    info!("exported {} / {}", s.shipment_id, truck_id);
    Ok(())
}

fn metrics(cfg: &Config, w: &LoadedWorld, records: Vec<itm::pipeline::DecisionRecord>, out: &Path) -> Result<()> {
    let mut shipments = Vec::new();
    for r in &records {
        shipments.push(
            w.world
                .shipment(&r.shipment_id)
                .ok_or_else(|| anyhow!("decision for unknown shipment {}", r.shipment_id))?,
        );
    }
    let empty = LaneStore::default();
    let ctx = context(cfg, w, shipments.clone(), &empty);
    let results: Vec<ShipmentResult> = records
        .into_iter()
        .zip(&shipments)
        .map(|(record, s)| {
            let correct = record.assigned_truck.as_ref().is_some_and(|t| ctx.correct(s, t));
            let truck_correct = record.assigned_truck.iter().map(|t| (t.clone(), correct)).collect();
            ShipmentResult {
                record,
                haul_km: s.haul_km(),
                correct,
                log: Vec::new(),
                truck_correct,
            }
        })
        .collect();
    let by_id = shipments.iter().map(|s| (s.shipment_id.clone(), *s)).collect();
    let report = summarize("decisions", &results, &by_id, &[]);
    write_reports_jsonl(std::slice::from_ref(&report), &out.join("report.jsonl"))?;
    let table = render_reports(std::slice::from_ref(&report));
    fs::write(out.join("report.txt"), &table)?;
    print!("{table}");
    Ok(())
}

fn run(cli: Cli) -> Result<()> {
    let cfg = effective_config(&cli.global, &cli.command)?;
    if cli.global.print_config {
        print!("{}", cfg.to_toml()?);
        return Ok(());
    }
    let out = cli.global.out.as_deref().expect("checked by main");
    fs::create_dir_all(out).with_context(|| format!("cannot create {}", out.display()))?;
    let mut inputs = Inputs::default();
    match &cli.command {
        Cmd::Simulate { .. } => simulate(&cfg, out)?,
        Cmd::BuildLanes { world } => {
            let w = inputs.world(world)?;
            build_lanes(&w, out)?;
        }
        Cmd::RefreshLanes { world, lanes, now } => {
            let w = inputs.world(world)?;
            let store = inputs.lanes(lanes)?;
            refresh_lanes(&w, store, *now, out)?;
        }
        Cmd::MakeDataset { world, lanes } => {
            let w = inputs.world(world)?;
            let store = inputs.lanes(lanes)?;
            make_dataset(&cfg, &w, &store, out)?;
        }
        Cmd::Train { dataset, .. } => {
            let rows = inputs.dataset(dataset)?;
            train_cmd(&cfg, &rows, out)?;
        }
        Cmd::Match {
            world,
            lanes,
            model,
            shipment,
        } => {
            let w = inputs.world(world)?;
            let store = inputs.lanes(lanes)?;
            let model = inputs.model(model)?;
            match_cmd(&cfg, &w, &store, &model, shipment.as_deref(), out)?;
        }
        Cmd::ShadowEval { world, lanes, model } => {
            let w = inputs.world(world)?;
            let store = inputs.lanes(lanes)?;
            let model = inputs.model(model)?;
            shadow_eval(&cfg, &w, &store, &model, out)?;
        }
        Cmd::Ablate {
            world,
            lanes,
            dataset,
            configs,
            ..
        } => {
            let configs: Vec<Ablation> = match configs {
                None => Ablation::ALL.to_vec(),
                Some(names) => names
                    .iter()
                    .map(|n| Ablation::parse(n).ok_or_else(|| anyhow!("unknown ablation `{n}`")))
                    .collect::<Result<_>>()?,
            };
            let w = inputs.world(world)?;
            let store = inputs.lanes(lanes)?;
            let rows = inputs.dataset(dataset)?;
            ablate_cmd(&cfg, &w, &store, &rows, &configs, out)?;
        }
        Cmd::ExportGeojson {
            world,
            lanes,
            shipment,
            truck,
        } => {
            let w = inputs.world(world)?;
            let store = inputs.lanes(lanes)?;
            export_geojson(&w, &store, shipment.as_deref(), truck.as_deref(), out)?;
        }
        Cmd::Metrics { world, decisions } => {
            let w = inputs.world(world)?;
            let records = inputs.decisions(decisions)?;
            metrics(&cfg, &w, records, out)?;
        }
    }
    write_manifest(out, cli.command.name(), &cfg, &inputs)
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    let cli = Cli::parse();
    if cli.global.out.is_none() && !cli.global.print_config {
        eprintln!("error: --out <DIR> is required for `itm {}`", cli.command.name());
        return ExitCode::from(2);
    }
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(1)
        }
    }
}
