//! Acceptance suite. Prints one PASS/FAIL line per criterion and exits
//! nonzero if any criterion fails.

use std::path::Path;
use std::time::Instant;

use hmloc::assoc::{associate_ray, RAY_GATE};
use hmloc::estimator::{schur_marginal, NormalEquation, StateBlock};
use hmloc::factors::{check_jacobians, inertial_residual, CheckOptions};
use hmloc::gmm::{build_voxel_index, GaussianComponent};
use hmloc::imu::integrate;
use hmloc::sim::{generate_trajectory, generate_world};
use hmloc::state::predict_with_imu;
use hmloc::{CameraPose, Extrinsics, Feature, Gravity, ImuBias, ImuNoiseParams, LocalizerConfig, SimConfig, StateVector};
use hmloc_cli::{cmd_bench_assoc, cmd_bench_opt, main_with, Metrics, RunConfig};
use nalgebra::{DMatrix, DVector, Vector2, Vector3};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use statrs::distribution::{ChiSquared, ContinuousCDF};

struct Outcome {
    pass: bool,
    detail: String,
}

fn outcome(pass: bool, detail: String) -> Outcome {
    Outcome { pass, detail }
}

fn jacobians() -> Outcome {
    let opts = CheckOptions { configs: 100, ..Default::default() };
    let t = Instant::now();
    let report = check_jacobians(&opts);
    let secs = t.elapsed().as_secs_f64();
    let failed: Vec<_> = report.failures().map(|b| b.name.clone()).collect();
    let min_configs = report.blocks.iter().map(|b| b.configs).min().unwrap_or(0);
    let pass = failed.is_empty() && report.blocks.len() >= 12 && min_configs >= 100 && secs < 10.0;
    outcome(
        pass,
        format!("{} blocks, >= {min_configs} configs each, {secs:.2} s, failing {failed:?}", report.blocks.len()),
    )
}

fn random_system(rng: &mut ChaCha8Rng, n: usize) -> (DMatrix<f64>, DVector<f64>) {
    let a = DMatrix::from_fn(n + 4, n, |_, _| rng.sample::<f64, _>(StandardNormal));
    let h = a.transpose() * a + DMatrix::identity(n, n) * 0.1;
    let b = DVector::from_fn(n, |_, _| rng.sample::<f64, _>(StandardNormal));
    (h, b)
}

fn blocks(rng: &mut ChaCha8Rng, n: usize) -> Vec<StateBlock> {
    let mut out = Vec::new();
    let mut offset = 0;
    while offset < n {
        let size = rng.random_range(1..=6).min(n - offset);
        out.push(StateBlock { id: out.len() as u64, offset, size });
        offset += size;
    }
    out
}

fn covariance_recovery() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(0xc0ffee);
    let mut worst_cov = 0.0f64;
    let mut worst_mean = 0.0f64;
    for _ in 0..100 {
        let n = rng.random_range(2..=30);
        let (h, b) = random_system(&mut rng, n);
        let ordering = blocks(&mut rng, n);
        let keep = ordering[rng.random_range(0..ordering.len())];
        let ne = NormalEquation { h: h.clone(), b: b.clone(), ordering };
        let Ok((h_bar, b_bar)) = schur_marginal(&ne, keep.id) else {
            return outcome(false, format!("schur_marginal failed on a {n}x{n} system"));
        };
        let inv = h.clone().try_inverse().unwrap();
        let sigma_ref = inv.view((keep.offset, keep.offset), (keep.size, keep.size)).into_owned();
        let sigma = h_bar.clone().try_inverse().unwrap();
        worst_cov = worst_cov.max((sigma - &sigma_ref).amax());
        let mean_ref = (&inv * &b).rows(keep.offset, keep.size).into_owned();
        worst_mean = worst_mean.max((h_bar.try_inverse().unwrap() * b_bar - mean_ref).amax());
    }

    // Monte-Carlo: x ~ N(0, H⁻¹) via x = L⁻ᵀz with H = LLᵀ
    let samples = 100_000;
    let mut worst_mc = 0.0f64;
    for n in [12, 30] {
        let (h, _) = random_system(&mut rng, n);
        let ordering = blocks(&mut rng, n);
        let keep = ordering[ordering.len() / 2];
        let ne = NormalEquation { h: h.clone(), b: DVector::zeros(n), ordering };
        let sigma = schur_marginal(&ne, keep.id).unwrap().0.try_inverse().unwrap();
        let l_t = h.cholesky().unwrap().l().transpose();
        let mut acc = DMatrix::<f64>::zeros(keep.size, keep.size);
        for _ in 0..samples {
            let z = DVector::from_fn(n, |_, _| rng.sample::<f64, _>(StandardNormal));
            let x = l_t.solve_upper_triangular(&z).unwrap();
            let xk = x.rows(keep.offset, keep.size);
            acc += xk * xk.transpose();
        }
        let s = acc / samples as f64;
        worst_mc = worst_mc.max((&s - &sigma).norm() / sigma.norm());
    }
    let pass = worst_cov <= 1e-8 && worst_mean <= 1e-8 && worst_mc <= 0.05;
    outcome(
        pass,
        format!("max |Σ - inv(H)_kk| {worst_cov:.2e}, max mean err {worst_mean:.2e}, Monte-Carlo rel err {:.2}%", 100.0 * worst_mc),
    )
}

fn preintegration() -> Outcome {
    let cfg = SimConfig::noiseless();
    let scn = hmloc::Scenario::generate(&cfg).unwrap();
    let g = Gravity::standard();
    let noise = ImuNoiseParams::default();
    let mut worst_res = 0.0f64;
    for k in 0..scn.gt.frames.len() - 1 {
        let (xj, xk) = (&scn.gt.frames[k], &scn.gt.frames[k + 1]);
        let f = integrate(&scn.meas.frames[k + 1].imu, xj.bias(), noise).unwrap();
        let r = inertial_residual(xj, xk, &f, &g).unwrap();
        worst_res = worst_res.max(r.amax());
    }
    // one-step prediction from the closed-form state against the closed-form next state
    let mut worst_pred = 0.0f64;
    let an = &scn.gt.analytic;
    for k in 0..an.len() - 1 {
        let x = StateVector::from_world_pose(&an[k].rot_wb, &an[k].position, an[k].velocity, ImuBias::zero(), an[k].t);
        let f = integrate(&scn.gt.imu[k], ImuBias::zero(), noise).unwrap();
        let p = predict_with_imu(&x, &f, &g).unwrap();
        worst_pred = worst_pred.max((p.position - an[k + 1].position).norm());
    }
    let pass = worst_res < 1e-8 && worst_pred < 1e-3 && an.len() == 201;
    outcome(pass, format!("{} frames, max |residual| {worst_res:.2e}, max prediction error {worst_pred:.2e} m", an.len()))
}

/// Exhaustive reference: every component whose Mahalanobis line distance is
/// inside the gate and whose plane is crossed in front of the camera within
/// range, keeping the smallest distance.
fn oracle_pick(origin: &Vector3<f64>, dir: &Vector3<f64>, comps: &[GaussianComponent], max_range: f64) -> Option<(u32, f64, f64)> {
    comps
        .iter()
        .filter_map(|c| {
            let (dist, depth) = line_metrics(origin, dir, c)?;
            (dist <= RAY_GATE && depth > 0.0 && depth <= max_range).then_some((c.id, dist, depth))
        })
        .min_by(|a, b| a.1.total_cmp(&b.1).then(a.2.total_cmp(&b.2)).then(a.0.cmp(&b.0)))
}

/// Distance from the quadratic's minimum along the line; depth where the line
/// crosses the plane through the mean normal to the smallest-variance axis.
fn line_metrics(origin: &Vector3<f64>, dir: &Vector3<f64>, c: &GaussianComponent) -> Option<(f64, f64)> {
    let p = c.cov.try_inverse()?;
    let o = origin - c.mean;
    let lambda = -(dir.dot(&(p * o))) / dir.dot(&(p * dir));
    let x = o + dir * lambda;
    let dist = x.dot(&(p * x)).max(0.0).sqrt();
    let eig = c.cov.symmetric_eigen();
    let i = eig.eigenvalues.imin();
    let n = eig.eigenvectors.column(i).into_owned();
    let den = n.dot(dir);
    if den.abs() < 1e-9 {
        return None;
    }
    Some((dist, n.dot(&(c.mean - origin)) / den))
}

/// Depth at which the ray enters the component's gate ellipsoid.
fn gate_entry(origin: &Vector3<f64>, dir: &Vector3<f64>, c: &GaussianComponent) -> Option<f64> {
    let p = c.cov.try_inverse()?;
    let o = origin - c.mean;
    let (a, b, k) = (dir.dot(&(p * dir)), dir.dot(&(p * o)), o.dot(&(p * o)) - RAY_GATE * RAY_GATE);
    let disc = b * b - a * k;
    (disc >= 0.0).then(|| ((-b - disc.sqrt()) / a).max(0.0))
}

fn association_oracle() -> Outcome {
    let cfg = SimConfig { n_components: 200, ..SimConfig::default() };
    let world = generate_world(&cfg).unwrap();
    let gt = generate_trajectory(&cfg).unwrap();
    let lc = LocalizerConfig::default();
    let grid = build_voxel_index(&world.mixture, lc.voxel_size, lc.mass_threshold).unwrap();
    let cam = cfg.camera().unwrap();
    let extr = Extrinsics::forward_looking();
    let comps = world.mixture.components();
    let slack = 3f64.sqrt() * lc.voxel_size;
    let mut rng = ChaCha8Rng::seed_from_u64(4242);
    let (mut gated, mut agree, mut explained, mut unexplained) = (0usize, 0usize, 0usize, 0usize);
    let step = gt.frames.len() / 50;
    for x in gt.frames.iter().step_by(step).take(50) {
        let pose = CameraPose::from_state(x, &extr);
        for id in 0..100u64 {
            let f = Feature {
                u: Vector2::new(rng.random_range(0.0..cam.width as f64), rng.random_range(0.0..cam.height as f64)),
                score: 1.0,
                track_id: id,
            };
            let ray = pose.ray(&cam, &f);
            let got = associate_ray(&ray, &grid, &world.mixture, &lc.assoc);
            let want = oracle_pick(&ray.origin, &ray.bearing, comps, lc.assoc.max_range);
            if got.is_none() && want.is_none() {
                continue;
            }
            gated += 1;
            match (got, want) {
                (Some(a), Some((w, _, _))) if a.component_id == w => agree += 1,
                (Some(a), Some((w, _, _))) => {
                    // the ray-cast pick must be a passing component the ray reaches no later than the oracle's
                    let picked = world.mixture.get(a.component_id);
                    let gated = line_metrics(&ray.origin, &ray.bearing, picked).is_some_and(|(d, _)| d <= RAY_GATE);
                    let entry = |c| gate_entry(&ray.origin, &ray.bearing, c);
                    let ok = gated
                        && matches!((entry(picked), entry(world.mixture.get(w))), (Some(p), Some(o)) if p <= o + slack);
                    if ok {
                        explained += 1;
                    } else {
                        unexplained += 1;
                    }
                }
                _ => unexplained += 1,
            }
        }
    }
    let rate = agree as f64 / gated.max(1) as f64;
    let pass = gated > 0 && rate >= 0.98 && unexplained == 0;
    outcome(
        pass,
        format!("{gated} gated rays, agreement {:.2}%, {explained} disagreements explained, {unexplained} unexplained", 100.0 * rate),
    )
}

fn association_cost() -> Outcome {
    let cfg = RunConfig::standard(hmloc::Mode::VIL);
    let rows = match rayon::ThreadPoolBuilder::new().num_threads(1).build().unwrap().install(|| cmd_bench_assoc(&cfg)) {
        Ok(r) => r,
        Err(e) => return outcome(false, e.to_string()),
    };
    let mean = |m: &str, n: usize| rows.iter().find(|r| r.method == m && r.components == n).map(|r| r.mean_ms);
    let (Some(r100), Some(r1000), Some(p100), Some(p1000)) =
        (mean("raycast", 100), mean("raycast", 1000), mean("projection", 100), mean("projection", 1000))
    else {
        return outcome(false, format!("unexpected rows {rows:?}"));
    };
    let (rf, pf) = (r1000 / r100, p1000 / p100);
    let pass = rows.len() == 4 && rf < 1.3 && pf > rf;
    outcome(
        pass,
        format!("ray-cast {r100:.3} -> {r1000:.3} ms (x{rf:.2}), projection {p100:.3} -> {p1000:.3} ms (x{pf:.2})"),
    )
}

fn pose_prior_speed() -> Outcome {
    let cfg = RunConfig::standard(hmloc::Mode::VIL);
    let rows = match rayon::ThreadPoolBuilder::new().num_threads(1).build().unwrap().install(|| cmd_bench_opt(&cfg)) {
        Ok(r) => r,
        Err(e) => return outcome(false, e.to_string()),
    };
    if rows.len() != 2 {
        return outcome(false, format!("expected 2 rows, got {}", rows.len()));
    }
    let (a, b) = (&rows[0], &rows[1]);
    let speedup = a.mean_ms / b.mean_ms;
    let ratio = b.final_rmse_m / a.final_rmse_m;
    let pass = speedup >= 1.5 && ratio <= 1.2;
    outcome(
        pass,
        format!(
            "{} {:.2} ms rmse {:.4} m, {} {:.2} ms rmse {:.4} m; speedup {speedup:.2}, rmse ratio {ratio:.3}",
            a.backend, a.mean_ms, a.final_rmse_m, b.backend, b.mean_ms, b.final_rmse_m
        ),
    )
}

fn run_cli(config: &str, dir: &Path, name: &str) -> Result<Metrics, String> {
    let cfg_path = dir.join(format!("{name}.toml"));
    std::fs::write(&cfg_path, config).unwrap();
    let out = dir.join(name);
    let args = ["hmloc", "run", "--config", cfg_path.to_str().unwrap(), "--out", out.to_str().unwrap()];
    let code = main_with(args);
    if code != 0 {
        return Err(format!("{name}: exit code {code}"));
    }
    let text = std::fs::read_to_string(out.join("metrics.json")).map_err(|e| e.to_string())?;
    serde_json::from_str(&text).map_err(|e| e.to_string())
}

const STANDARD: &str = "mode = \"V+I+L\"\n[sim]\nseed = 7\n[sim.trajectory]\nkind = \"circle\"\n";
const NOISELESS: &str = "mode = \"V+I+L\"\n[sim]\npreset = \"noiseless\"\n[sim.trajectory]\nkind = \"circle\"\n";

fn end_to_end(dir: &Path) -> Outcome {
    let std_m = match run_cli(STANDARD, dir, "standard") {
        Ok(m) => m,
        Err(e) => return outcome(false, e),
    };
    let clean = match run_cli(NOISELESS, dir, "noiseless") {
        Ok(m) => m,
        Err(e) => return outcome(false, e),
    };
    let dropout = SimConfig::default().dropout;
    let pass = std_m.mape_m <= 0.02 && std_m.recall_pct == 100.0 && clean.mape_m < 1e-6 && dropout == 0.3;
    outcome(
        pass,
        format!(
            "standard mAPE {:.4} m recall {:.1}% (dropout {dropout}, {} temporal factors); noiseless mAPE {:.2e} m",
            std_m.mape_m, std_m.recall_pct, std_m.temporal_factors, clean.mape_m
        ),
    )
}

fn gate_constant() -> Outcome {
    let q = ChiSquared::new(3.0).unwrap().inverse_cdf(0.95).sqrt();
    outcome((RAY_GATE - q).abs() <= 0.01, format!("gate {RAY_GATE}, sqrt(chi2_3(0.95)) = {q:.4}"))
}

fn without_timing(path: &Path) -> serde_json::Value {
    let mut v: serde_json::Value = serde_json::from_str(&std::fs::read_to_string(path).unwrap()).unwrap();
    v.as_object_mut().unwrap().remove("per_stage_timing");
    v
}

fn determinism(dir: &Path) -> Outcome {
    if let Err(e) = run_cli(STANDARD, dir, "repeat") {
        return outcome(false, e);
    }
    let (a, b) = (dir.join("standard"), dir.join("repeat"));
    let read = |p: &Path| std::fs::read(p).unwrap();
    let same_est = read(&a.join("est.tum")) == read(&b.join("est.tum"));
    let same_gt = read(&a.join("gt.tum")) == read(&b.join("gt.tum"));
    let same_metrics = without_timing(&a.join("metrics.json")) == without_timing(&b.join("metrics.json"));
    outcome(
        same_est && same_gt && same_metrics,
        format!("est.tum identical {same_est}, gt.tum identical {same_gt}, metrics identical {same_metrics}"),
    )
}

fn main() {
    let dir = tempfile::tempdir().unwrap();
    let start = Instant::now();
    let criteria: Vec<(&str, Box<dyn Fn() -> Outcome>)> = vec![
        ("Jacobian suite", Box::new(jacobians)),
        ("covariance recovery", Box::new(covariance_recovery)),
        ("preintegration consistency", Box::new(preintegration)),
        ("association oracle equivalence", Box::new(association_oracle)),
        ("association cost bound", Box::new(association_cost)),
        ("pose-prior optimization", Box::new(pose_prior_speed)),
        ("end-to-end localization", Box::new(|| end_to_end(dir.path()))),
        ("gate constant", Box::new(gate_constant)),
        ("determinism", Box::new(|| determinism(dir.path()))),
    ];
    let mut failed = 0;
    for (i, (name, f)) in criteria.iter().enumerate() {
        let t = Instant::now();
        let o = f();
        failed += usize::from(!o.pass);
        let tag = if o.pass { "PASS" } else { "FAIL" };
        println!("{tag} {}. {name}: {} [{:.1} s]", i + 1, o.detail, t.elapsed().as_secs_f64());
    }
    println!("acceptance: {} of {} criteria passed in {:.1} s", criteria.len() - failed, criteria.len(), start.elapsed().as_secs_f64());
    if failed > 0 {
        std::process::exit(1);
    }
}
