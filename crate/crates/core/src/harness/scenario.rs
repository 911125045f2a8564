use std::collections::BTreeMap;
use std::io::Write;
use std::path::Path;
use std::sync::Arc;

use serde::Serialize;

use super::experiments::{RecognizerRow, SelectorRow, StitchRow};
use super::{HarnessError, ScenarioConfig};
use crate::client::{vio_step, ClientSession, CycleInput, CycleOutcome};
use crate::federation::transport::Loopback;
use crate::federation::{Registry, SimulatedService};
use crate::geometry::{compose, inverse, rotation_angle, translation_distance, Pose};
use crate::rng::{child_seed, stream};
use crate::stats::{median, percentile, rmse};

pub const CSV_HEADER: &str =
    "cycle,t,selected_service,provisional,fix,ate_selected,confidence,stitch_updates,pos_err_m,rot_err_rad";

/// One line of `cycles.csv`.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct CycleRow {
    pub cycle: u64,
    pub t: f64,
    pub selected_service: String,
    pub provisional: u8,
    pub fix: u8,
    pub ate_selected: Option<f64>,
    pub confidence: Option<f64>,
    pub stitch_updates: usize,
    pub pos_err_m: f64,
    pub rot_err_rad: f64,
}

/// Aggregates written to `summary.json`. Experiment sections stay empty for
/// plain scenario runs.
#[derive(Clone, Debug, Default, PartialEq, Serialize)]
pub struct Summary {
    pub seed: u64,
    pub cycles: usize,
    pub fixed_cycles: usize,
    pub provisional_cycles: usize,
    pub registry_queries: u64,
    pub localize_requests: u64,
    pub requests_received: BTreeMap<String, u64>,
    pub pose_estimations: BTreeMap<String, u64>,
    pub selected_cycles: BTreeMap<String, u64>,
    pub stitch_updates: usize,
    pub blacklisted: Vec<String>,
    /// RMSE of fixed output positions against ground truth in the
    /// application frame, without re-alignment.
    pub output_rmse_m: f64,
    pub pos_err_median_m: f64,
    pub pos_err_p95_m: f64,
    pub rot_err_median_rad: f64,
    pub stitch_error: Vec<StitchRow>,
    pub selector: Vec<SelectorRow>,
    pub recognizer: Vec<RecognizerRow>,
}

#[derive(Clone, Debug)]
pub struct MetricsReport {
    pub rows: Vec<CycleRow>,
    pub summary: Summary,
    pub outcomes: Vec<CycleOutcome>,
    /// Ground-truth camera poses in the application frame, one per cycle.
    pub ground_truth: Vec<Pose>,
}

impl MetricsReport {
    pub fn csv_bytes(&self) -> Vec<u8> {
        let mut buf = Vec::new();
        write_csv(&mut buf, &self.rows).expect("in-memory write");
        buf
    }

    pub fn summary_json(&self) -> String {
        serde_json::to_string_pretty(&self.summary).expect("summary serialises")
    }

    /// Writes `cycles.csv` and `summary.json` into `dir`.
    pub fn write_to(&self, dir: &Path) -> Result<(), HarnessError> {
        std::fs::create_dir_all(dir)?;
        std::fs::write(dir.join("cycles.csv"), self.csv_bytes())?;
        std::fs::write(dir.join("summary.json"), self.summary_json() + "\n")?;
        Ok(())
    }
}

/// Writes serialisable rows with a header line.
pub fn write_csv<W: Write, T: Serialize>(w: W, rows: &[T]) -> Result<(), HarnessError> {
    let mut out = csv::Writer::from_writer(w);
    for r in rows {
        out.serialize(r)?;
    }
    out.flush()?;
    Ok(())
}

pub fn run_scenario(cfg: &ScenarioConfig) -> Result<MetricsReport, HarnessError> {
    cfg.validate()?;
    let registry = Arc::new(Registry::new(cfg.services.clone(), child_seed(cfg.seed, &["registry"]))?);
    let services: Vec<Arc<SimulatedService>> = cfg
        .services
        .iter()
        .map(|d| Arc::new(SimulatedService::new(d.clone(), cfg.seed)))
        .collect();
    let federation = Loopback::new(Arc::clone(&registry), services.iter().cloned());
    let mut session = ClientSession::new(cfg.client.clone());

    let path = &cfg.device_path;
    let device_from_world = inverse(&path.pose_at(0.0));
    let mut vio_rng = stream(cfg.seed, &["vio"]);
    let mut vio = Pose::identity();
    let mut prev_t = 0.0;

    let mut rows = Vec::new();
    let mut outcomes = Vec::new();
    let mut ground_truth = Vec::new();
    for t in cfg.cycle_times() {
        let world = path.pose_at(t);
        if t > 0.0 {
            let motion = compose(&inverse(&path.pose_at(prev_t)), &world);
            let dist = path.distance_at(t) - path.distance_at(prev_t);
            vio = vio_step(&vio, &cfg.vio, &motion, dist, &mut vio_rng);
        }
        prev_t = t;
        let input = CycleInput {
            t,
            vio_pose: vio,
            query_pose: world,
            gps: [world.translation.x, world.translation.y],
        };
        let outcome = session.localization_cycle(&federation, &input);
        let truth = compose(&device_from_world, &world);
        rows.push(CycleRow {
            cycle: outcome.cycle,
            t,
            selected_service: outcome.selected_service.clone().unwrap_or_default(),
            provisional: outcome.provisional as u8,
            fix: outcome.fix as u8,
            ate_selected: outcome.ate_selected.filter(|a| a.is_finite()),
            confidence: outcome.confidence,
            stitch_updates: outcome.stitch_updates.len(),
            pos_err_m: translation_distance(&outcome.pose, &truth),
            rot_err_rad: rotation_angle(&outcome.pose.rotation, &truth.rotation),
        });
        outcomes.push(outcome);
        ground_truth.push(truth);
    }

    let fixed: Vec<&CycleRow> = rows.iter().filter(|r| r.fix == 1).collect();
    let pos: Vec<f64> = fixed.iter().map(|r| r.pos_err_m).collect();
    let rot: Vec<f64> = fixed.iter().map(|r| r.rot_err_rad).collect();
    let mut selected_cycles = BTreeMap::new();
    for r in &fixed {
        *selected_cycles.entry(r.selected_service.clone()).or_insert(0) += 1;
    }
    let summary = Summary {
        seed: cfg.seed,
        cycles: rows.len(),
        fixed_cycles: fixed.len(),
        provisional_cycles: rows.iter().filter(|r| r.provisional == 1).count(),
        registry_queries: session.registry_queries(),
        localize_requests: session.requests_sent(),
        requests_received: services
            .iter()
            .map(|s| (s.descriptor().service_id.clone(), s.received_count()))
            .collect(),
        pose_estimations: services
            .iter()
            .map(|s| (s.descriptor().service_id.clone(), s.pose_estimation_count()))
            .collect(),
        selected_cycles,
        stitch_updates: rows.iter().map(|r| r.stitch_updates).sum(),
        blacklisted: cfg
            .services
            .iter()
            .filter(|s| session.is_blacklisted(&s.service_id))
            .map(|s| s.service_id.clone())
            .collect(),
        output_rmse_m: rmse(pos.iter().map(|e| e * e)),
        pos_err_median_m: median(&pos),
        pos_err_p95_m: percentile(&pos, 95.0),
        rot_err_median_rad: median(&rot),
        ..Summary::default()
    };
    Ok(MetricsReport {
        rows,
        summary,
        outcomes,
        ground_truth,
    })
}
