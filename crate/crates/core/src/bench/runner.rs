use std::io::{Read, Write};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::config::{BenchConfig, ScaleSource};
use super::pipeline::{suite_worlds, Resources, SuiteWorld};
use super::BenchError;
use crate::control::ControllerKind;
use crate::sim::{run_episode, split_seed, PolicyStack, Termination};

/// One episode of a benchmark run.
///
/// CSV columns follow field order: `suite, controller, scale_source,
/// guidance, world, topomap, repeat, seed, fraction, collisions, distance,
/// duration, plans, termination`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpisodeRow {
    pub suite: String,
    pub controller: ControllerKind,
    pub scale_source: ScaleSource,
    pub guidance: bool,
    pub world: usize,
    pub topomap: usize,
    pub repeat: usize,
    pub seed: u64,
    pub fraction: f64,
    pub collisions: u32,
    pub distance: f64,
    pub duration: f64,
    pub plans: u32,
    pub termination: Termination,
}

/// Cell of the experiment grid.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct CellKey {
    pub controller: ControllerKind,
    pub scale_source: ScaleSource,
    pub guidance: bool,
}

impl CellKey {
    pub fn label(&self) -> String {
        format!(
            "{}/{}{}",
            self.controller,
            self.scale_source,
            if self.guidance { "/guided" } else { "" }
        )
    }
}

impl EpisodeRow {
    pub fn cell(&self) -> CellKey {
        CellKey {
            controller: self.controller,
            scale_source: self.scale_source,
            guidance: self.guidance,
        }
    }
}

pub fn cells(config: &BenchConfig) -> Vec<CellKey> {
    let mut out = Vec::new();
    for &controller in &config.controllers {
        for &scale_source in &config.scale_sources {
            for &guidance in &config.guidance {
                out.push(CellKey {
                    controller,
                    scale_source,
                    guidance,
                });
            }
        }
    }
    out
}

/// Seed of repeat `repeat` on route `topomap` of world `world`; shared by all
/// cells so comparisons are paired.
pub fn episode_seed(suite_seed: u64, world: usize, topomap: usize, repeat: usize) -> u64 {
    let route = split_seed(split_seed(suite_seed, world as u64), topomap as u64);
    split_seed(route, repeat as u64)
}

/// Runs every cell of `config` over the suite. Rows come back in cell,
/// world, topomap, repeat order regardless of thread count.
pub fn run_suite(config: &BenchConfig, resources: &Resources) -> Result<Vec<EpisodeRow>, BenchError> {
    config.validate()?;
    let worlds = suite_worlds(&config.suite)?;
    run_suite_on(config, resources, &worlds)
}

pub fn run_suite_on(config: &BenchConfig, resources: &Resources, worlds: &[SuiteWorld]) -> Result<Vec<EpisodeRow>, BenchError> {
    let mut stacks = Vec::new();
    for key in cells(config) {
        let mut stack = PolicyStack::new(resources.policy.clone(), resources.estimator(key.scale_source, config)?, key.controller);
        stack.control = config.control;
        stack.guidance = key.guidance.then(|| config.guidance_params.clone());
        stacks.push((key, stack));
    }
    let mut jobs = Vec::new();
    for cell in 0..stacks.len() {
        for (w, sw) in worlds.iter().enumerate() {
            for m in 0..sw.topomaps.len() {
                for r in 0..config.suite.seeds {
                    jobs.push((cell, w, m, r));
                }
            }
        }
    }
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(config.parallelism)
        .build()
        .map_err(|e| BenchError::Config(format!("thread pool: {e}")))?;
    pool.install(|| {
        jobs.par_iter()
            .map(|&(cell, w, m, r)| {
                let (key, stack) = &stacks[cell];
                let seed = episode_seed(config.suite.seed, w, m, r);
                let res = run_episode(stack, &worlds[w].topomaps[m], &worlds[w].world, &config.suite.episode, seed)?;
                Ok(EpisodeRow {
                    suite: config.suite.name.clone(),
                    controller: key.controller,
                    scale_source: key.scale_source,
                    guidance: key.guidance,
                    world: w,
                    topomap: m,
                    repeat: r,
                    seed,
                    fraction: res.fraction,
                    collisions: res.collisions,
                    distance: res.distance,
                    duration: res.duration,
                    plans: res.plans,
                    termination: res.termination,
                })
            })
            .collect()
    })
}

pub fn write_csv<W: Write>(rows: &[EpisodeRow], out: W) -> Result<(), BenchError> {
    let mut w = csv::Writer::from_writer(out);
    for row in rows {
        w.serialize(row)?;
    }
    w.flush().map_err(|e| BenchError::Csv(e.into()))?;
    Ok(())
}

pub fn read_csv<R: Read>(input: R) -> Result<Vec<EpisodeRow>, BenchError> {
    csv::Reader::from_reader(input)
        .deserialize()
        .map(|r| r.map_err(BenchError::from))
        .collect()
}
