//! End-to-end acceptance checks. Every criterion prints one PASS/FAIL line
//! straight to stderr so the summary shows up without `--nocapture`.

use std::io::Write;
use std::sync::{Arc, OnceLock};
use std::time::{Duration, Instant};

use groundnav::bench::{
    policy_corpus, run_suite, run_sweep, sample_scene, scale_corpus, train_policy, train_scale, write_csv, BenchConfig,
    DemoLayout, DemoScene, EpisodeRow, Resources, ScaleSource, SuiteConfig, SweepAxis, SweepConfig,
};
use groundnav::control::ControllerKind;
use groundnav::diffusion::MlpPredictor;
use groundnav::geom::Vec2;
use groundnav::guide::{collision_cost, collision_cost_within, goal_cost, select_action, GuidanceParams, RobotFootprint};
use groundnav::percept::{Tsdf, TsdfParams};
use groundnav::scale::{ConstantScale, ScaleEstimator, TrainedScale};
use groundnav::sim::{
    expert_policy, l_corridor, run_episode, DiffusionPolicy, EpisodeConfig, PolicySource, PolicyStack, Termination, TopoMap,
    TopoParams,
};
use groundnav::traj::{
    apply_scale, integrate, normalize, stats_denormalize, stats_normalize, ActionStats, Deltas, Trajectory,
};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use statrs::distribution::{Binomial, DiscreteCDF};

fn report(id: u32, name: &str, pass: bool, detail: &str) {
    let line = format!("[{}] {id:>2} {name}: {detail}\n", if pass { "PASS" } else { "FAIL" });
    let _ = std::io::stderr().lock().write_all(line.as_bytes());
}

struct Trained {
    policy: MlpPredictor,
    policy_time: Duration,
    scale: TrainedScale,
    scale_time: Duration,
}

fn trained() -> &'static Trained {
    static CELL: OnceLock<Trained> = OnceLock::new();
    CELL.get_or_init(|| {
        let cfg = BenchConfig::default().training;
        let corpus = policy_corpus(&cfg).unwrap();
        let t = Instant::now();
        let policy = train_policy(&corpus, &cfg).unwrap().predictor;
        let policy_time = t.elapsed();
        let corpus = scale_corpus(&cfg).unwrap();
        let t = Instant::now();
        let scale = train_scale(&corpus, &cfg).unwrap();
        let scale_time = t.elapsed();
        Trained {
            policy,
            policy_time,
            scale,
            scale_time,
        }
    })
}

fn resources() -> Resources {
    let t = trained();
    Resources {
        policy: PolicySource::Diffusion(DiffusionPolicy::from_mlp(t.policy.clone()).unwrap()),
        learned: Some(Arc::new(t.scale.regressor.clone().unwrap()) as Arc<dyn ScaleEstimator>),
    }
}

fn mean_of(rows: &[EpisodeRow], keep: impl Fn(&EpisodeRow) -> bool, value: impl Fn(&EpisodeRow) -> f64) -> f64 {
    let picked: Vec<f64> = rows.iter().filter(|r| keep(r)).map(value).collect();
    assert!(!picked.is_empty(), "no rows in cell");
    picked.iter().sum::<f64>() / picked.len() as f64
}

fn csv_bytes(rows: &[EpisodeRow]) -> Vec<u8> {
    let mut out = Vec::new();
    write_csv(rows, &mut out).unwrap();
    out
}

/// Reruns `config` on its first `worlds` worlds with one thread and compares
/// the CSV bytes with the matching rows of the full run.
fn rerun_matches(config: &BenchConfig, full: &[EpisodeRow], worlds: usize) -> bool {
    let mut sub = config.clone();
    sub.suite.worlds = worlds;
    sub.parallelism = 1;
    let again = run_suite(&sub, &resources()).unwrap();
    let expected: Vec<EpisodeRow> = full.iter().filter(|r| r.world < worlds).cloned().collect();
    !again.is_empty() && csv_bytes(&again) == csv_bytes(&expected)
}

#[test]
fn benchmark_suites() {
    let res = resources();
    let mut ok = true;

    let maze = BenchConfig {
        controllers: vec![ControllerKind::Velocity, ControllerKind::Position],
        scale_sources: vec![ScaleSource::Oracle],
        ..BenchConfig::default()
    };
    let t = Instant::now();
    let rows = run_suite(&maze, &res).unwrap();
    let runtime = t.elapsed();
    let velocity = mean_of(&rows, |r| r.controller == ControllerKind::Velocity, |r| r.fraction);
    let position = mean_of(&rows, |r| r.controller == ControllerKind::Position, |r| r.fraction);
    let pass = position - velocity >= 0.05 && runtime <= Duration::from_secs(30 * 60);
    ok &= pass;
    report(
        1,
        "controller ordering",
        pass,
        &format!(
            "position {position:.3} vs velocity {velocity:.3} (gap {:+.3}, need >= 0.05) over {} episodes in {:.0} s (limit 1800 s)",
            position - velocity,
            rows.len(),
            runtime.as_secs_f64()
        ),
    );

    let scales = BenchConfig {
        controllers: vec![ControllerKind::Position],
        scale_sources: vec![ScaleSource::Learned, ScaleSource::Constant],
        ..maze.clone()
    };
    let scale_rows = run_suite(&scales, &res).unwrap();
    let learned = mean_of(&scale_rows, |r| r.scale_source == ScaleSource::Learned, |r| r.fraction);
    let constant = mean_of(&scale_rows, |r| r.scale_source == ScaleSource::Constant, |r| r.fraction);
    let pass = position - learned >= 0.03 && learned - constant >= 0.03;
    ok &= pass;
    report(
        2,
        "scale-source ordering",
        pass,
        &format!(
            "oracle {position:.3}, learned {learned:.3}, constant {constant:.3} (gaps {:+.3} and {:+.3}, need >= 0.03 each)",
            position - learned,
            learned - constant
        ),
    );

    let dense = BenchConfig {
        controllers: vec![ControllerKind::Velocity],
        scale_sources: vec![ScaleSource::Oracle],
        guidance: vec![false, true],
        suite: SuiteConfig::dense(),
        ..BenchConfig::default()
    };
    let dense_rows = run_suite(&dense, &res).unwrap();
    let frac = |g: bool| mean_of(&dense_rows, |r| r.guidance == g, |r| r.fraction);
    let coll = |g: bool| mean_of(&dense_rows, |r| r.guidance == g, |r| f64::from(r.collisions));
    let (f_off, f_on, c_off, c_on) = (frac(false), frac(true), coll(false), coll(true));
    let pass = f_on - f_off >= 0.03 && c_on <= 0.9 * c_off;
    ok &= pass;
    report(
        3,
        "guidance effect",
        pass,
        &format!(
            "fraction {f_off:.3} -> {f_on:.3} ({:+.3}, need >= +0.03), collisions/episode {c_off:.3} -> {c_on:.3} ({:+.1} %, need <= -10 %)",
            f_on - f_off,
            100.0 * (c_on / c_off - 1.0)
        ),
    );

    let same = [rerun_matches(&maze, &rows, 3), rerun_matches(&scales, &scale_rows, 3), rerun_matches(&dense, &dense_rows, 2)];
    let pass = same.iter().all(|&s| s);
    ok &= pass;
    report(
        12,
        "determinism",
        pass,
        &format!("single-thread reruns byte-identical per suite (maze/oracle, maze/scales, dense guided): {same:?}"),
    );

    assert!(ok, "benchmark criteria failed; see the PASS/FAIL lines above");
}

#[test]
fn corner_cutting_in_l_corridor() {
    let world = l_corridor(0.7, 3.0).unwrap();
    let topo = TopoParams::default();
    let route = vec![Vec2::ZERO, Vec2::new(3.0, 0.0), Vec2::new(3.0, 2.6)];
    let map = TopoMap::from_route("l-corridor", route, topo.node_spacing, topo.capture_radius);
    let scale: Arc<dyn ScaleEstimator> = Arc::new(ConstantScale::oracle(0.25).unwrap());
    let mut outcomes = Vec::new();
    for kind in [ControllerKind::Velocity, ControllerKind::Position] {
        let stack = PolicyStack::new(expert_policy(0.25), scale.clone(), kind);
        let runs: Vec<_> = (0..5)
            .map(|seed| run_episode(&stack, &map, &world, &EpisodeConfig::default(), seed).unwrap())
            .collect();
        outcomes.push(runs);
    }
    let velocity_collides = outcomes[0].iter().all(|r| r.collisions > 0);
    let position_completes = outcomes[1].iter().all(|r| r.termination == Termination::Goal && r.collisions == 0);
    let pass = velocity_collides && position_completes;
    let fmt = |runs: &[groundnav::sim::EpisodeResult]| {
        runs.iter().map(|r| format!("{}@{:.2}", r.termination.as_str(), r.fraction)).collect::<Vec<_>>().join(" ")
    };
    report(
        4,
        "corner cutting",
        pass,
        &format!("velocity [{}], position [{}]", fmt(&outcomes[0]), fmt(&outcomes[1])),
    );
    assert!(pass);
}

fn random_trajectory(rng: &mut ChaCha8Rng, spacing: f64) -> Trajectory {
    let mut heading = rng.random_range(-3.0..3.0);
    let mut p = Vec2::ZERO;
    let points = (0..8)
        .map(|_| {
            heading += rng.random_range(-0.8..0.8);
            p += Vec2::from_angle(heading) * (spacing * rng.random_range(0.2..1.8));
            p
        })
        .collect();
    Trajectory::new(points).unwrap()
}

#[test]
fn normalization_round_trips() {
    let mut rng = ChaCha8Rng::seed_from_u64(2024);
    let trajs: Vec<Trajectory> = (0..10_000)
        .map(|_| {
            let spacing = rng.random_range(0.05..2.0);
            random_trajectory(&mut rng, spacing)
        })
        .collect();
    let mut metric_failures = 0;
    let mut worst_metric = 0.0f64;
    let mut unit = Vec::with_capacity(trajs.len());
    for t in &trajs {
        let (deltas, scale) = normalize(t).unwrap();
        let back = apply_scale(&integrate(&deltas), scale);
        let err = t.points().iter().zip(back.points()).map(|(a, b)| a.distance(*b)).fold(0.0, f64::max);
        worst_metric = worst_metric.max(err);
        metric_failures += usize::from(err > 1e-9);
        unit.push(deltas);
    }
    let stats = ActionStats::from_deltas(&unit).unwrap();
    let mut stats_failures = 0;
    let mut worst_stats = 0.0f64;
    for d in &unit {
        let Deltas(back) = stats_denormalize(&stats_normalize(d, &stats), &stats);
        let err = d.0.iter().zip(&back).map(|(a, b)| (a.x - b.x).abs().max((a.y - b.y).abs())).fold(0.0, f64::max);
        worst_stats = worst_stats.max(err);
        stats_failures += usize::from(err > 1e-12);
    }
    let pass = metric_failures == 0 && stats_failures == 0;
    report(
        5,
        "normalization round trips",
        pass,
        &format!(
            "10000 trajectories: metric failures {metric_failures} (worst {worst_metric:.1e} m), stats failures {stats_failures} (worst {worst_stats:.1e})"
        ),
    );
    assert!(pass);
}

/// Random obstacle blobs on the default planning window.
fn random_tsdf(rng: &mut ChaCha8Rng) -> Tsdf {
    let params = TsdfParams::default();
    let (nx, ny) = params.dims();
    let mut occ = vec![false; nx * ny];
    for _ in 0..rng.random_range(2..8) {
        let (ci, cj) = (rng.random_range(0..nx) as i64, rng.random_range(0..ny) as i64);
        let r = rng.random_range(0..6i64);
        for j in (cj - r).max(0)..=(cj + r).min(ny as i64 - 1) {
            for i in (ci - r).max(0)..=(ci + r).min(nx as i64 - 1) {
                if (i - ci).pow(2) + (j - cj).pow(2) <= r * r {
                    occ[j as usize * nx + i as usize] = true;
                }
            }
        }
    }
    Tsdf::from_occupancy(&occ, nx, ny, params.origin(), &params).unwrap()
}

/// Away from cell boundaries by at least 1 % of a cell, and inside the lattice.
fn interior(tsdf: &Tsdf, p: Vec2) -> bool {
    let (nx, ny) = tsdf.dims();
    let f = (p - tsdf.origin()) * (1.0 / tsdf.resolution());
    let clear = |v: f64, n: usize| v > 1.0 && v < n as f64 - 2.0 && (v - v.round()).abs() > 0.01;
    clear(f.x, nx) && clear(f.y, ny)
}

fn relative_error(analytic: &[f64], numeric: &[f64]) -> f64 {
    let norm = |v: &[f64]| v.iter().map(|x| x * x).sum::<f64>().sqrt();
    let diff: Vec<f64> = analytic.iter().zip(numeric).map(|(a, b)| a - b).collect();
    let scale = norm(analytic).max(norm(numeric));
    if scale < 1e-9 {
        0.0
    } else {
        norm(&diff) / scale
    }
}

/// Central differences of `f` over every waypoint coordinate.
fn fd_gradient(traj: &Trajectory, f: impl Fn(&Trajectory) -> f64) -> Vec<f64> {
    const H: f64 = 1e-6;
    let pts = traj.points().to_vec();
    let mut out = Vec::with_capacity(2 * pts.len());
    for t in 0..pts.len() {
        for axis in 0..2 {
            let shifted = |s: f64| {
                let mut q = pts.clone();
                if axis == 0 {
                    q[t].x += s;
                } else {
                    q[t].y += s;
                }
                f(&Trajectory::new(q).unwrap())
            };
            out.push((shifted(H) - shifted(-H)) / (2.0 * H));
        }
    }
    out
}

fn flat(g: &[Vec2]) -> Vec<f64> {
    g.iter().flat_map(|v| [v.x, v.y]).collect()
}

#[test]
fn gradients_match_finite_differences() {
    const PROBES: usize = 1000;
    const TOL: f64 = 1e-4;
    let mut rng = ChaCha8Rng::seed_from_u64(77);
    let scenes: Vec<Tsdf> = (0..20).map(|_| random_tsdf(&mut rng)).collect();
    let footprint = RobotFootprint::default();

    let mut tsdf_pass = 0;
    let mut n = 0;
    while n < PROBES {
        let tsdf = &scenes[n % scenes.len()];
        let lo = tsdf.origin();
        let hi = tsdf.upper_corner();
        let p = Vec2::new(rng.random_range(lo.x..hi.x), rng.random_range(lo.y..hi.y));
        if !interior(tsdf, p) {
            continue;
        }
        n += 1;
        let h = 1e-6;
        let fd = [
            (tsdf.value(p + Vec2::new(h, 0.0)) - tsdf.value(p - Vec2::new(h, 0.0))) / (2.0 * h),
            (tsdf.value(p + Vec2::new(0.0, h)) - tsdf.value(p - Vec2::new(0.0, h))) / (2.0 * h),
        ];
        let g = tsdf.value_grad(p).gradient;
        tsdf_pass += usize::from(relative_error(&[g.x, g.y], &fd) <= TOL);
    }

    let mut coll_pass = 0;
    let mut n = 0;
    while n < PROBES {
        let tsdf = &scenes[n % scenes.len()];
        let start = Vec2::new(rng.random_range(-0.3..2.0), rng.random_range(-1.5..1.5));
        let traj = random_trajectory(&mut rng, 0.25);
        let traj = Trajectory::new(traj.points().iter().map(|&p| p + start).collect()).unwrap();
        let mut prev = Vec2::ZERO;
        let probes_ok = traj.points().iter().all(|&a| {
            let nrm = (a - prev).normalized().unwrap().perp();
            prev = a;
            [a, a + nrm * footprint.half_width, a - nrm * footprint.half_width].iter().all(|&q| interior(tsdf, q))
        });
        if !probes_ok {
            continue;
        }
        n += 1;
        let analytic = flat(&collision_cost(&traj, tsdf, &footprint).gradient);
        let numeric = fd_gradient(&traj, |t| collision_cost(t, tsdf, &footprint).cost);
        coll_pass += usize::from(relative_error(&analytic, &numeric) <= TOL);
    }

    let mut goal_pass = 0;
    for _ in 0..PROBES {
        let spacing = rng.random_range(0.1..1.0);
        let traj = random_trajectory(&mut rng, spacing);
        let goal = Vec2::from_angle(rng.random_range(-3.1..3.1)) * rng.random_range(0.5..3.0);
        let index = rng.random_range(1..=8);
        let analytic = flat(&goal_cost(&traj, goal, index).gradient);
        let numeric = fd_gradient(&traj, |t| goal_cost(t, goal, index).cost);
        goal_pass += usize::from(relative_error(&analytic, &numeric) <= TOL);
    }

    let rate = |k: usize| k as f64 / PROBES as f64;
    let pass = [tsdf_pass, coll_pass, goal_pass].iter().all(|&k| rate(k) >= 0.995);
    report(
        6,
        "gradient checks",
        pass,
        &format!(
            "{PROBES} probes each at rel. tol 1e-4: tsdf {:.1} %, collision {:.1} %, goal {:.1} % (need >= 99.5 %)",
            100.0 * rate(tsdf_pass),
            100.0 * rate(coll_pass),
            100.0 * rate(goal_pass)
        ),
    );
    assert!(pass);
}

#[test]
fn distance_transform_matches_brute_force() {
    let mut rng = ChaCha8Rng::seed_from_u64(31);
    let mut mismatched_scenes = 0;
    let mut cells = 0;
    for scene in 0..200 {
        let nx = rng.random_range(2..=64);
        let ny = rng.random_range(2..=64);
        let density = match scene % 50 {
            0 => 0.0,
            1 => 1.0,
            _ => rng.random_range(0.0..0.15),
        };
        let occ: Vec<bool> = (0..nx * ny).map(|_| rng.random_bool(density)).collect();
        let params = TsdfParams {
            resolution: [0.02, 0.05, 0.1][scene % 3],
            tau_free: rng.random_range(0.3..2.0),
            tau_obs: rng.random_range(0.1..0.5),
            dilation_cells: scene % 3,
            ..TsdfParams::default()
        };
        let tsdf = Tsdf::from_occupancy(&occ, nx, ny, Vec2::ZERO, &params).unwrap();

        let r = params.dilation_cells as i64;
        let at = |i: i64, j: i64| occ[j as usize * nx + i as usize];
        let dilated: Vec<bool> = (0..nx * ny)
            .map(|c| {
                let (i, j) = ((c % nx) as i64, (c / nx) as i64);
                (-r..=r).any(|dj| {
                    (-r..=r).any(|di| {
                        let (a, b) = (i + di, j + dj);
                        a >= 0 && b >= 0 && a < nx as i64 && b < ny as i64 && at(a, b)
                    })
                })
            })
            .collect();
        let nearest = |c: usize, want: bool| {
            let (i, j) = ((c % nx) as f64, (c / nx) as f64);
            (0..nx * ny)
                .filter(|&o| dilated[o] == want)
                .map(|o| ((o % nx) as f64 - i).hypot((o / nx) as f64 - j))
                .fold(f64::INFINITY, f64::min)
        };
        let bad = (0..nx * ny).any(|c| {
            let v = if dilated[c] {
                -(nearest(c, false) - 0.5) * params.resolution
            } else {
                (nearest(c, true) - 0.5) * params.resolution
            };
            v.clamp(-params.tau_obs, params.tau_free) as f32 != tsdf.values()[c]
        });
        mismatched_scenes += usize::from(bad);
        cells += nx * ny;
    }
    let pass = mismatched_scenes == 0;
    report(
        7,
        "distance-transform oracle",
        pass,
        &format!("200 scenes, {cells} cells, {mismatched_scenes} scenes with any mismatch"),
    );
    assert!(pass);
}

#[test]
fn guided_samples_have_lower_collision_cost() {
    // One pillar straight ahead and a policy that heads right at it.
    let layout = DemoLayout {
        pillar_center: Vec2::new(1.2, 0.0),
        pillar_half: 0.2,
        modes: vec![(0.0, 1.0)],
        mode_std: 0.05,
    };
    let scene = DemoScene::with_layout(&layout).unwrap();
    let guided = GuidanceParams::default();
    let unguided = GuidanceParams {
        step_size: 0.0,
        ..guided
    };
    let mean_cost = |params: &GuidanceParams, seed: u64| {
        let out = sample_scene(&scene, params, seed).unwrap();
        out.samples.iter().map(|t| collision_cost(t, &scene.tsdf, &scene.footprint).cost).sum::<f64>() / out.samples.len() as f64
    };
    let (mut wins, mut losses) = (0u64, 0u64);
    let mut diff = 0.0;
    for seed in 0..64 {
        let (g, u) = (mean_cost(&guided, seed), mean_cost(&unguided, seed));
        diff += g - u;
        if g < u {
            wins += 1;
        } else if g > u {
            losses += 1;
        }
    }
    let n = wins + losses;
    let p = if wins == 0 {
        1.0
    } else {
        Binomial::new(0.5, n).unwrap().sf(wins - 1)
    };
    let pass = p < 0.01;
    report(
        8,
        "guided vs unguided sign test",
        pass,
        &format!(
            "64 paired seeds: guided lower in {wins}, higher in {losses}, mean difference {:+.4}; one-sided p = {p:.2e} (need < 0.01)",
            diff / 64.0
        ),
    );
    assert!(pass);
}

#[test]
fn selection_reduces_to_single_objectives() {
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let scenes: Vec<Tsdf> = (0..10).map(|_| random_tsdf(&mut rng)).collect();
    let footprint = RobotFootprint::default();
    let (mut goal_ok, mut clear_ok) = (0, 0);
    for set in 0..1000 {
        let tsdf = &scenes[set % scenes.len()];
        let count = rng.random_range(2..=12);
        let spacing = rng.random_range(0.1..0.4);
        let samples: Vec<Trajectory> = (0..count).map(|_| random_trajectory(&mut rng, spacing)).collect();
        let goal = Vec2::from_angle(rng.random_range(-3.1..3.1));
        let index = rng.random_range(1..=8);
        let horizon = if set % 2 == 0 { None } else { Some(3) };

        let cosine = |t: &Trajectory| {
            let w = t.points()[index - 1];
            (w.x * goal.x + w.y * goal.y) / (w.x.hypot(w.y) * goal.x.hypot(goal.y))
        };
        let best_goal = (0..count).fold(0, |b, i| if cosine(&samples[i]) > cosine(&samples[b]) { i } else { b });
        let cost = |t: &Trajectory| collision_cost_within(t, tsdf, &footprint, horizon).cost;
        let best_clear = (0..count).fold(0, |b, i| if cost(&samples[i]) < cost(&samples[b]) { i } else { b });

        goal_ok += usize::from(select_action(&samples, tsdf, goal, 1.0, &footprint, index, horizon) == best_goal);
        clear_ok += usize::from(select_action(&samples, tsdf, goal, 0.0, &footprint, index, horizon) == best_clear);
    }
    let pass = goal_ok == 1000 && clear_ok == 1000;
    report(
        9,
        "selection reductions",
        pass,
        &format!("1000 sets: gamma=1 matches argmax cosine {goal_ok}/1000, gamma=0 matches argmin collision cost {clear_ok}/1000"),
    );
    assert!(pass);
}

#[test]
fn gamma_sweep_on_demo_scene() {
    let scene = DemoScene::new().unwrap();
    let config = SweepConfig {
        gammas: vec![0.0, 0.5, 1.0],
        ..SweepConfig::default()
    };
    let rep = run_sweep(&scene, &BenchConfig::default().guidance_params, &config).unwrap();
    let g: Vec<_> = rep.rows.iter().filter(|r| r.axis == SweepAxis::Gamma).collect();
    let (zero, half, one) = (g[0], g[1], g[2]);
    let distinct = zero.chosen != half.chosen && half.chosen != one.chosen && zero.chosen != one.chosen;
    let clearance = zero.chosen_clearance >= half.chosen_clearance && half.chosen_clearance >= one.chosen_clearance;
    let similarity = one.chosen_goal_similarity >= half.chosen_goal_similarity
        && half.chosen_goal_similarity >= zero.chosen_goal_similarity;
    let pass = distinct && clearance && similarity;
    let show = |r: &groundnav::bench::SweepRow| {
        format!("#{} cos {:.3} clearance {:.3}", r.chosen, r.chosen_goal_similarity, r.chosen_clearance)
    };
    report(
        10,
        "gamma sweep",
        pass,
        &format!("seed {}: gamma 0 {}, gamma 0.5 {}, gamma 1 {}", config.seed, show(zero), show(half), show(one)),
    );
    assert!(pass);
}

#[test]
fn scale_regressor_sanity() {
    let t = trained();
    let rel = t.scale.relative_validation_mae();
    let pass = rel < 0.2 && t.scale_time <= Duration::from_secs(600);
    report(
        11,
        "scale regressor",
        pass,
        &format!(
            "validation MAE {:.4} m = {:.1} % of mean target over {} held-out samples (need < 20 %), trained in {:.0} s (limit 600 s; policy took {:.0} s)",
            t.scale.validation_mae,
            100.0 * rel,
            t.scale.validation_count,
            t.scale_time.as_secs_f64(),
            t.policy_time.as_secs_f64()
        ),
    );
    assert!(pass);
}
