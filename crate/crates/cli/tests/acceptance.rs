//! Acceptance gate: one PASS/FAIL line per criterion, nonzero exit on any FAIL.

use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, ExitCode};
use std::time::Instant;

use rand::{Rng, SeedableRng};
use rayon::prelude::*;

use ricker_core::branching::{delta_constant, BranchingModel};
use ricker_core::deterministic::{
    find_invariant_box, fixed_points, mutual_invasibility, time_average_1d, GridSpec,
};
use ricker_core::lab::{
    fit_retention, retention_check, sweep_k, QsdMethod, RetentionOptions, SweepOptions, SweepRecord,
};
use ricker_core::qsd::{
    monte_carlo_qsd, power_iterate_qsd, McOptions, PowerOptions, TruncatedChain,
    DEFAULT_OVERFLOW_BUDGET,
};
use ricker_core::rng::RngStreams;
use ricker_core::{ModelParams, NormedState, OffspringLaw, PopulationState, Species};

struct Verdict {
    pass: bool,
    detail: String,
}

fn verdict(pass: bool, detail: impl Into<String>) -> Verdict {
    Verdict {
        pass,
        detail: detail.into(),
    }
}

fn attracting(k: f64) -> ModelParams {
    ModelParams::with_equal_k(1.2, 1.2, k, 0.5, 0.5).unwrap()
}

/// Normed Ricker map written out by hand.
fn ricker_map(p: &ModelParams, x: f64, y: f64) -> (f64, f64) {
    let be = p.b * p.k / p.k_tilde;
    let ae = p.a * p.k_tilde / p.k;
    (x * (p.r - x - be * y).exp(), y * (p.r_tilde - ae * x - y).exp())
}

fn fixed_point_suite() -> Verdict {
    let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(11);
    let mut checked = 0;
    let mut worst = 0.0f64;
    let mut failures = 0;
    while checked < 200 {
        let p = ModelParams::new(
            rng.random_range(0.1..3.0),
            rng.random_range(0.1..3.0),
            rng.random_range(0.05..2.0),
            rng.random_range(0.05..2.0),
            rng.random_range(0.0..1.5),
            rng.random_range(0.0..1.5),
        )
        .unwrap();
        if !mutual_invasibility(&p) {
            continue;
        }
        checked += 1;
        let rep = fixed_points(&p);
        let Some(c) = rep.coexistence else {
            failures += 1;
            continue;
        };
        let (fx, fy) = ricker_map(&p, c.x, c.y);
        let res = (fx - c.x).abs().max((fy - c.y).abs());
        worst = worst.max(res).max(rep.max_residual);
        if !(c.x > 0.0 && c.y > 0.0) || res > 1e-10 || rep.max_residual > 1e-10 {
            failures += 1;
        }
    }
    verdict(
        failures == 0,
        format!("{checked} invasible sets, worst residual {worst:.2e}, {failures} failures"),
    )
}

fn time_average_law() -> Verdict {
    let mut worst = 0.0f64;
    for r in [1.5, 2.5, 2.9] {
        for k in [0.5, 1.0, 2.0] {
            for x0 in [0.3, 1.7] {
                let avg = time_average_1d(x0, r, k, 100_000).unwrap();
                worst = worst.max((avg - r / k).abs());
            }
        }
    }
    verdict(worst <= 1e-3, format!("max |average - r/K| = {worst:.2e}"))
}

fn base_pmf(law: &OffspringLaw, mean: f64) -> Vec<f64> {
    let mut out: Vec<f64> = Vec::new();
    let mut k = 0usize;
    while k as f64 <= mean || out.last().is_some_and(|p| *p > 1e-20) {
        let p = match law {
            OffspringLaw::Poisson => {
                if k == 0 {
                    (-mean).exp()
                } else {
                    out[k - 1] * mean / k as f64
                }
            }
            OffspringLaw::Geometric => {
                let q = mean / (1.0 + mean);
                (1.0 - q) * q.powi(k as i32)
            }
            _ => unreachable!(),
        };
        out.push(p);
        k += 1;
    }
    out
}

fn convolve(a: &[f64], b: &[f64]) -> Vec<f64> {
    let mut out = vec![0.0; a.len() + b.len() - 1];
    for (i, x) in a.iter().enumerate() {
        for (j, y) in b.iter().enumerate() {
            out[i + j] += x * y;
        }
    }
    out
}

fn pmf_oracle() -> Verdict {
    let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(3);
    let mut worst_tv = 0.0f64;
    let mut worst_moment = 0.0f64;
    for law in [OffspringLaw::Poisson, OffspringLaw::Geometric] {
        for _ in 0..50 {
            let p = ModelParams::new(
                rng.random_range(0.1..1.5),
                rng.random_range(0.1..1.5),
                rng.random_range(0.05..0.6),
                rng.random_range(0.05..0.6),
                rng.random_range(0.0..1.0),
                rng.random_range(0.0..1.0),
            )
            .unwrap()
            .with_offspring(law.clone());
            let model = BranchingModel::new(p.clone()).unwrap();
            let state = PopulationState::new(rng.random_range(0..=10), rng.random_range(0..=10));
            for species in [Species::U, Species::V] {
                let (parents, r, k, pressure) = match species {
                    Species::U => (state.m, p.r, p.k, p.k * (state.m as f64 + p.b * state.n as f64)),
                    Species::V => (state.n, p.r_tilde, p.k_tilde, p.k_tilde * (p.a * state.m as f64 + state.n as f64)),
                };
                let surv = (-pressure).exp();
                let mu = r.exp();
                let base = base_pmf(&law, mu);
                let mut single: Vec<f64> = base.iter().map(|q| surv * q).collect();
                single[0] += 1.0 - surv;
                let mut oracle = vec![1.0];
                for _ in 0..parents {
                    oracle = convolve(&oracle, &single);
                }
                let pmf = model.exact_transition_pmf(state, species).unwrap();
                let len = oracle.len().max(pmf.len());
                let tv = 0.5
                    * (0..len)
                        .map(|i| (pmf.get(i) - oracle.get(i).copied().unwrap_or(0.0)).abs())
                        .sum::<f64>();
                worst_tv = worst_tv.max(tv);

                let var = match law {
                    OffspringLaw::Poisson => mu,
                    _ => mu * (1.0 + mu),
                };
                let m = parents as f64;
                let mean = k * m * surv * mu;
                let variance = k * k * m * (surv * var + surv * (1.0 - surv) * mu * mu);
                worst_moment = worst_moment
                    .max((k * pmf.mean() - mean).abs())
                    .max((k * k * pmf.variance() - variance).abs() / variance.max(1.0));
                if parents > 0 {
                    let at = p.normed(state);
                    let cm = model.conditional_mean(at).coord(species);
                    let cv = match species {
                        Species::U => model.conditional_variance(at).0,
                        Species::V => model.conditional_variance(at).1,
                    };
                    worst_moment = worst_moment
                        .max((cm - mean).abs())
                        .max((cv - variance).abs() / variance.max(1.0));
                }
            }
        }
    }
    verdict(
        worst_tv <= 1e-12 && worst_moment <= 1e-9,
        format!("50 states per law, both species, worst TV {worst_tv:.2e}, worst moment error {worst_moment:.2e}"),
    )
}

struct Solved {
    model: BranchingModel,
    chain: TruncatedChain,
    pi: Vec<f64>,
    lambda: f64,
}

fn solve_instance() -> Solved {
    let model = BranchingModel::new(attracting(0.15)).unwrap();
    let chain = TruncatedChain::build(&model, 60, DEFAULT_OVERFLOW_BUDGET).unwrap();
    let est = power_iterate_qsd(&chain, &PowerOptions::default()).unwrap();
    Solved {
        model,
        chain,
        pi: est.pi,
        lambda: est.lambda,
    }
}

fn qsd_eigen_check(s: &Solved) -> Verdict {
    let n = s.pi.len();
    // dense πQ from individual entries
    let pq: Vec<f64> = (0..n)
        .into_par_iter()
        .map(|j| {
            let to = s.chain.state(j);
            (0..n).map(|i| s.pi[i] * s.chain.entry(s.chain.state(i), to)).sum()
        })
        .collect();
    let residual: f64 = pq.iter().zip(&s.pi).map(|(a, b)| (a - s.lambda * b).abs()).sum();
    let lambda_ok = s.lambda > 0.0 && s.lambda < 1.0;

    let shifted = attracting(0.15).with_offspring(OffspringLaw::ShiftedPoisson);
    let sm = BranchingModel::new(shifted.clone()).unwrap();
    let sc = TruncatedChain::build_adaptive(&sm, DEFAULT_OVERFLOW_BUDGET, 400_000).unwrap();
    let se = power_iterate_qsd(&sc, &PowerOptions::default()).unwrap();
    let bound = 1.0 - delta_constant().powf(2.0 / 0.15);

    let mc = monte_carlo_qsd(
        &s.model,
        &McOptions {
            n_particles: 10_000,
            t_max: 300,
            burn_in: 50,
            initial: None,
        },
        &RngStreams::new(2024),
    )
    .unwrap();
    let tv = mc.distribution.total_variation(&s.chain.distribution(&s.pi));
    verdict(
        residual <= 1e-10 && lambda_ok && se.lambda <= bound && tv <= 0.05,
        format!(
            "residual {residual:.2e}, lambda {:.6}, q0-free lambda {:.6} <= {bound:.6}, MC TV {tv:.4}",
            s.lambda, se.lambda
        ),
    )
}

fn lifetime_consistency(s: &Solved) -> Verdict {
    let mut cdf = Vec::with_capacity(s.pi.len());
    let mut acc = 0.0;
    for p in &s.pi {
        acc += p;
        cdf.push(acc);
    }
    let streams = RngStreams::new(77);
    let life: Vec<f64> = (0..10_000u64)
        .into_par_iter()
        .map(|i| {
            let mut rng = streams.stream(i);
            let u = rng.random::<f64>() * acc;
            let idx = cdf.partition_point(|c| *c < u).min(cdf.len() - 1);
            s.model.lifetime(s.chain.state(idx), &mut rng, 10_000_000).unwrap() as f64
        })
        .collect();
    let n = life.len() as f64;
    let mean = life.iter().sum::<f64>() / n;
    let se = (life.iter().map(|l| (l - mean).powi(2)).sum::<f64>() / (n - 1.0) / n).sqrt();
    let expect = 1.0 / (1.0 - s.lambda);
    let z = (mean - expect) / se;
    verdict(
        z.abs() <= 3.0,
        format!("mean {mean:.4} vs 1/(1-lambda) {expect:.4}, {z:+.2} SE"),
    )
}

fn sweep_records() -> Vec<SweepRecord> {
    let opts = SweepOptions {
        method: QsdMethod::Matrix,
        ..Default::default()
    };
    sweep_k(&attracting(0.3), &[0.3, 0.2, 0.15, 0.1], &opts, &RngStreams::new(5))
        .unwrap()
        .into_iter()
        .map(|o| o.record.expect("matrix QSD at every K"))
        .collect()
}

fn scaling(records: &[SweepRecord]) -> Verdict {
    let pts: Vec<(f64, f64)> = records.iter().map(|r| (1.0 / r.k, -(1.0 - r.lambda).ln())).collect();
    let n = pts.len() as f64;
    let mx = pts.iter().map(|p| p.0).sum::<f64>() / n;
    let my = pts.iter().map(|p| p.1).sum::<f64>() / n;
    let sxy: f64 = pts.iter().map(|p| (p.0 - mx) * (p.1 - my)).sum();
    let sxx: f64 = pts.iter().map(|p| (p.0 - mx).powi(2)).sum();
    let syy: f64 = pts.iter().map(|p| (p.1 - my).powi(2)).sum();
    let slope = sxy / sxx;
    let r2 = sxy * sxy / (sxx * syy);
    verdict(slope > 0.0 && r2 >= 0.9, format!("slope {slope:.4}, R^2 {r2:.5}"))
}

fn point_mass(records: &[SweepRecord]) -> Verdict {
    let fp = fixed_points(&records[0].params).coexistence.unwrap();
    let dist: Vec<f64> = records.iter().map(|r| r.qsd_mean.dist(&fp)).collect();
    let trace: Vec<f64> = records.iter().map(|r| r.qsd_cov[0][0] + r.qsd_cov[1][1]).collect();
    let decreasing = |v: &[f64]| v.windows(2).all(|w| w[1] < w[0]);
    let last = *dist.last().unwrap();
    verdict(
        decreasing(&dist) && last <= 0.15 && decreasing(&trace),
        format!("distance {dist:.4?}, trace {trace:.4?}"),
    )
}

fn strip_decay(records: &[SweepRecord]) -> Verdict {
    let w = 0.05;
    let strip = |r: &SweepRecord, pick: fn(NormedState) -> f64| {
        r.distribution.mass_where(&r.params, |p| pick(p) < w)
    };
    let sx: Vec<f64> = records.iter().map(|r| strip(r, |p| p.x)).collect();
    let sy: Vec<f64> = records.iter().map(|r| strip(r, |p| p.y)).collect();
    let ok = |v: &[f64]| v.windows(2).all(|w| w[1] <= w[0]);
    let vacuous = sx.iter().chain(&sy).all(|m| *m == 0.0);
    verdict(
        ok(&sx) && ok(&sy),
        format!(
            "strip x {sx:?}, strip y {sy:?}{}",
            if vacuous { " (no lattice point has x or y below the width)" } else { "" }
        ),
    )
}

fn deviation_bound_check() -> Verdict {
    let params = ModelParams::with_equal_k(1.5, 1.5, 0.2, 0.5, 0.5).unwrap();
    let model = BranchingModel::new(params.clone()).unwrap();
    let at = NormedState::new(1.0, 1.0);
    let state = PopulationState::new(5, 5);
    let dev = 0.3;
    let bound = model.deviation_bound(dev, at, Species::U).unwrap();
    let surv = (-0.2f64 * (5.0 + 0.5 * 5.0)).exp();
    let mean = 0.2 * 5.0 * surv * 1.5f64.exp();
    let streams = RngStreams::new(9);
    let samples = 1_000_000u64;
    let hits: u64 = (0..100u64)
        .into_par_iter()
        .map(|chunk| {
            let mut rng = streams.stream(chunk);
            (0..samples / 100)
                .filter(|_| 0.2 * model.step(state, &mut rng).m as f64 - mean >= dev)
                .count() as u64
        })
        .sum();
    let freq = hits as f64 / samples as f64;
    verdict(freq <= bound, format!("frequency {freq:.5} <= bound {bound:.5}"))
}

fn retention() -> Verdict {
    let inv = find_invariant_box(&attracting(0.3), &GridSpec::default()).unwrap().unwrap();
    let ks = [0.3, 0.15, 0.075];
    let opts = RetentionOptions::default();
    let streams = RngStreams::new(31);
    let results: Vec<_> = ks
        .iter()
        .enumerate()
        .map(|(i, &k)| retention_check(&attracting(k), &inv.rect, inv.iterate, &opts, &streams.derive(i as u64)).unwrap())
        .collect();
    let fit = fit_retention(&results, opts.confidence).unwrap();
    let holds = results
        .iter()
        .all(|r| r.points.iter().all(|p| p.retention >= 1.0 - (-fit.w_hat / r.k).exp()));
    let slope = fit.slope_fit.map(|f| f.slope).unwrap_or(f64::NAN);
    let worst: Vec<f64> = results.iter().map(|r| r.worst_point().retention).collect();
    verdict(
        fit.w_hat > 0.0 && holds && slope > 0.0,
        format!(
            "box [{:.3}, {:.3}]^2, N = {}, worst retention {worst:.4?}, w_hat {:.4}, slope {slope:.4}",
            inv.rect.x_lo, inv.rect.x_hi, inv.iterate, fit.w_hat
        ),
    )
}

fn snapshot(dir: &Path) -> Vec<(PathBuf, Vec<u8>)> {
    let mut out = Vec::new();
    let mut stack = vec![dir.to_path_buf()];
    while let Some(d) = stack.pop() {
        for e in fs::read_dir(&d).unwrap() {
            let p = e.unwrap().path();
            if p.is_dir() {
                stack.push(p);
            } else {
                out.push((p.strip_prefix(dir).unwrap().to_path_buf(), fs::read(&p).unwrap()));
            }
        }
    }
    out.sort();
    out
}

fn determinism() -> Verdict {
    let configs = Path::new(env!("CARGO_MANIFEST_DIR")).join("../../configs");
    let tmp = tempfile::tempdir().unwrap();
    let jobs = [
        ("analyze", "attracting.toml"),
        ("simulate", "attracting.toml"),
        ("qsd", "attracting.toml"),
        ("sweep", "attracting.toml"),
        ("cycles", "repelling.toml"),
    ];
    let mut bad = Vec::new();
    let mut files = 0;
    for (cmd, cfg) in jobs {
        let run = |tag: &str| {
            let out = tmp.path().join(format!("{cmd}-{tag}"));
            let o = Command::new(env!("CARGO_BIN_EXE_ricker"))
                .args([cmd, "--config"])
                .arg(configs.join(cfg))
                .arg("--out-dir")
                .arg(&out)
                .output()
                .unwrap();
            (o.status.success(), o.stdout, snapshot(&out))
        };
        let (ok1, stdout1, files1) = run("a");
        let (ok2, stdout2, files2) = run("b");
        files += files1.len();
        if !(ok1 && ok2) || stdout1 != stdout2 || files1 != files2 || files1.is_empty() {
            bad.push(cmd);
        }
    }
    verdict(
        bad.is_empty(),
        format!("5 commands, {files} files compared, mismatches {bad:?}"),
    )
}

fn main() -> ExitCode {
    let mut all = true;
    let mut report = |id: usize, name: &str, f: &mut dyn FnMut() -> Verdict| {
        let t = Instant::now();
        let v = f();
        all &= v.pass;
        println!(
            "criterion {id:>2} [{}] {name}: {} ({:.1}s)",
            if v.pass { "PASS" } else { "FAIL" },
            v.detail,
            t.elapsed().as_secs_f64()
        );
    };
    report(1, "fixed points", &mut fixed_point_suite);
    report(2, "1-D time average", &mut time_average_law);
    report(3, "transition pmf oracle", &mut pmf_oracle);
    let solved = solve_instance();
    report(4, "QSD eigenpair", &mut || qsd_eigen_check(&solved));
    report(5, "lifetime from QSD start", &mut || lifetime_consistency(&solved));
    let records = sweep_records();
    report(6, "lambda(K) scaling", &mut || scaling(&records));
    report(7, "point-mass convergence", &mut || point_mass(&records));
    report(8, "strip decay", &mut || strip_decay(&records));
    report(9, "large-deviation bound", &mut deviation_bound_check);
    report(10, "retention", &mut retention);
    report(11, "CLI determinism", &mut determinism);
    if all {
        println!("acceptance: all criteria passed");
        ExitCode::SUCCESS
    } else {
        println!("acceptance: FAILED");
        ExitCode::FAILURE
    }
}
