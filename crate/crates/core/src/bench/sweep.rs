use std::fmt;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::config::SweepConfig;
use super::scene::DemoScene;
use super::BenchError;
use crate::diffusion::Context;
use crate::guide::{collision_cost_within, goal_similarity, guided_sample, GuidanceParams, GuidedOutcome};
use crate::percept::SvgPolyline;
use crate::traj::Trajectory;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum SweepAxis {
    /// Goal weight.
    Alpha,
    /// Collision weight.
    Beta,
    /// Selection trade-off.
    Gamma,
}

impl fmt::Display for SweepAxis {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Self::Alpha => "alpha",
            Self::Beta => "beta",
            Self::Gamma => "gamma",
        })
    }
}

impl SweepAxis {
    pub fn apply(self, base: &GuidanceParams, value: f64) -> GuidanceParams {
        let mut p = base.clone();
        match self {
            Self::Alpha => p.goal_weight = value,
            Self::Beta => p.collision_weight = value,
            Self::Gamma => p.selection_weight = value,
        }
        p
    }
}

/// Cost table row. `chosen_*` describe the selected sample, `mean_*` the
/// whole guided batch.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepRow {
    pub axis: SweepAxis,
    pub value: f64,
    pub chosen: usize,
    pub chosen_goal_similarity: f64,
    pub chosen_collision_cost: f64,
    pub chosen_clearance: f64,
    pub mean_goal_similarity: f64,
    pub mean_collision_cost: f64,
    pub mean_clearance: f64,
}

pub struct SweepRun {
    pub axis: SweepAxis,
    pub value: f64,
    pub params: GuidanceParams,
    pub outcome: GuidedOutcome,
}

pub struct SweepReport {
    pub rows: Vec<SweepRow>,
    pub runs: Vec<SweepRun>,
}

/// Guided sampling on `scene` with the same seed for every run.
pub fn sample_scene(scene: &DemoScene, params: &GuidanceParams, seed: u64) -> Result<GuidedOutcome, BenchError> {
    let scale_value = scene.scale;
    let scale = move |_: &Trajectory| scale_value;
    let guidance = scene.guidance(&scale);
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    Ok(guided_sample(
        &Context::default(),
        &scene.predictor,
        &scene.schedule,
        &guidance,
        params,
        &mut rng,
        seed,
        true,
    )?)
}

pub fn row_for(scene: &DemoScene, axis: SweepAxis, value: f64, params: &GuidanceParams, out: &GuidedOutcome) -> SweepRow {
    let sim = |t: &Trajectory| goal_similarity(t, out.goal, params.direction_index);
    let coll = |t: &Trajectory| collision_cost_within(t, &scene.tsdf, &scene.footprint, params.collision_horizon).cost;
    let n = out.samples.len() as f64;
    let mean = |f: &dyn Fn(&Trajectory) -> f64| out.samples.iter().map(f).sum::<f64>() / n;
    let chosen = out.chosen_trajectory();
    SweepRow {
        axis,
        value,
        chosen: out.chosen,
        chosen_goal_similarity: sim(chosen),
        chosen_collision_cost: coll(chosen),
        chosen_clearance: scene.clearance(chosen),
        mean_goal_similarity: mean(&sim),
        mean_collision_cost: mean(&coll),
        mean_clearance: mean(&|t| scene.clearance(t)),
    }
}

pub fn run_sweep(scene: &DemoScene, base: &GuidanceParams, config: &SweepConfig) -> Result<SweepReport, BenchError> {
    let mut rows = Vec::new();
    let mut runs = Vec::new();
    for (axis, values) in [
        (SweepAxis::Alpha, &config.alphas),
        (SweepAxis::Beta, &config.betas),
        (SweepAxis::Gamma, &config.gammas),
    ] {
        for &value in values {
            let params = axis.apply(base, value);
            let outcome = sample_scene(scene, &params, config.seed)?;
            rows.push(row_for(scene, axis, value, &params, &outcome));
            runs.push(SweepRun {
                axis,
                value,
                params,
                outcome,
            });
        }
    }
    Ok(SweepReport { rows, runs })
}

fn polyline(t: &Trajectory, color: &str, width: f64) -> SvgPolyline {
    let mut points = vec![crate::geom::Vec2::ZERO];
    points.extend_from_slice(t.points());
    SvgPolyline {
        points,
        color: color.into(),
        width,
    }
}

/// TSDF heatmap with the guided samples in grey, the chosen one in red and
/// the elected goal direction in blue.
pub fn overlay_svg(scene: &DemoScene, outcome: &GuidedOutcome) -> String {
    let mut lines: Vec<SvgPolyline> = outcome
        .samples
        .iter()
        .enumerate()
        .filter(|(i, _)| *i != outcome.chosen)
        .map(|(_, t)| polyline(t, "#555555", 1.5))
        .collect();
    lines.push(polyline(outcome.chosen_trajectory(), "#d62728", 3.0));
    lines.push(SvgPolyline {
        points: vec![crate::geom::Vec2::ZERO, outcome.goal * 1.5],
        color: "#1f77b4".into(),
        width: 1.5,
    });
    scene.tsdf.svg_heatmap(80.0, &lines)
}

pub fn rows_csv(rows: &[SweepRow]) -> Result<String, BenchError> {
    let mut w = csv::Writer::from_writer(Vec::new());
    for r in rows {
        w.serialize(r)?;
    }
    let bytes = w.into_inner().map_err(|e| BenchError::Csv(e.into_error().into()))?;
    Ok(String::from_utf8(bytes).expect("csv output is utf-8"))
}
