//! End-to-end acceptance checks, one test per criterion. Each prints a
//! single `criterion N: PASS|FAIL ...` line to stderr, uncaptured, so the
//! summary shows up in the test log whether or not the check passes.
//!
//! The full-scale profiles are `#[ignore]`d; run them with
//! `cargo test --release -p cvtomo-cli --test acceptance -- --ignored`.

use std::f64::consts::TAU;
use std::io::Write;
use std::path::Path;
use std::process::Command;
use std::time::Instant;

use cvtomo::analysis::cat_report;
use cvtomo::bures::{build_density, sample_prior};
use cvtomo::calibrate::{
    denormalize_quadratures, ingest, BlockGeometry, CalibrationRecord, ChannelCalibration, RawTrace,
};
use cvtomo::fock::{apply_loss, fidelity, make_state, FidelityReference, LossyDensityMatrix, Parity, StateSpec, C64};
use cvtomo::measurement::{heterodyne_pdf, homodyne_pdf, MeasurementConfig, QuadratureDataset, Scheme};
use cvtomo::sampler::{
    bayesian_mean, estimate_functional, run_chain, Chain, FlatTarget, FunctionalStats, PosteriorEnsemble,
    SamplerConfig, StepSize,
};
use cvtomo::simulate::{scaling_experiment, simulate_dataset, ScalingConfig, ScalingRow, SimConfig, DEFAULT_RESOLUTION};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn report(n: u32, pass: bool, what: &str, detail: &str, started: Instant) {
    let verdict = if pass { "PASS" } else { "FAIL" };
    let line = format!(
        "criterion {n}: {verdict} {what}: {detail} [{:.1} s]\n",
        started.elapsed().as_secs_f64()
    );
    let _ = std::io::stderr().write_all(line.as_bytes());
    assert!(pass, "criterion {n} failed: {detail}");
}

fn trapezoid(f: impl Fn(f64) -> f64, half: f64, n: usize) -> f64 {
    let h = 2.0 * half / n as f64;
    let mut s = 0.5 * (f(-half) + f(half));
    for i in 1..n {
        s += f(-half + i as f64 * h);
    }
    s * h
}

fn fidelity_stats(ens: &PosteriorEnsemble, truth: &FidelityReference) -> FunctionalStats {
    estimate_functional(ens, |rho| truth.fidelity(rho).unwrap()).unwrap()
}

#[test]
fn criterion_1_density_normalization() {
    let t0 = Instant::now();
    let mut rng = ChaCha8Rng::seed_from_u64(101);
    let (mut worst1, mut worst2) = (0.0f64, 0.0f64);
    for _ in 0..20 {
        let rho = LossyDensityMatrix::lossless(build_density(&sample_prior(&mut rng, 11).unwrap()).unwrap());
        for theta in [0.0, 1.1] {
            let i1 = trapezoid(|x| homodyne_pdf(x, theta, &rho).unwrap(), 12.0, 4800);
            let i2 = trapezoid(|x| trapezoid(|p| heterodyne_pdf(x, p, theta, &rho).unwrap(), 9.0, 360), 9.0, 360);
            worst1 = worst1.max((i1 - 1.0).abs());
            worst2 = worst2.max((i2 - 1.0).abs());
        }
    }
    let pass = worst1 <= 1e-6 && worst2 <= 1e-3 && t0.elapsed().as_secs() < 60;
    report(1, pass, "density normalization", &format!("max |int f1 - 1| = {worst1:.2e}, max |int f2 - 1| = {worst2:.2e}"), t0);
}

#[test]
fn criterion_2_loss_channel() {
    let t0 = Instant::now();
    let c1 = make_state(&StateSpec::Coherent { alpha: C64::new(1.0, 0.0) }, 20).unwrap();
    let c05 = make_state(&StateSpec::Coherent { alpha: C64::new(0.5, 0.0) }, 20).unwrap();
    let diff = apply_loss(&c1, 0.25).unwrap().state().max_abs_diff(&c05);
    let mut rng = ChaCha8Rng::seed_from_u64(102);
    let mut worst = 0.0f64;
    for _ in 0..100 {
        let dim = rng.random_range(2..=21);
        let rho = build_density(&sample_prior(&mut rng, dim).unwrap()).unwrap();
        let eta = rng.random::<f64>();
        worst = worst.max((apply_loss(&rho, eta).unwrap().state().trace() - 1.0).abs());
    }
    let pass = diff <= 1e-6 && worst <= 1e-12 && t0.elapsed().as_secs() < 10;
    report(2, pass, "loss channel", &format!("max |L(coh 1) - coh 0.5| = {diff:.2e}, max trace error = {worst:.2e}"), t0);
}

#[test]
fn criterion_3_prior_recovery() {
    let t0 = Instant::now();
    let dim = 3;
    let target = FlatTarget { dim };
    let cfg = SamplerConfig::new(10_000, 10, 103).with_beta(StepSize::Fixed(0.3)).with_burn_in(0);
    let mut chain = Chain::new(&target, cfg).unwrap();
    chain.run_to_end().unwrap();
    let chain_mean = bayesian_mean(&chain.into_ensemble().unwrap()).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(203);
    let direct = PosteriorEnsemble::from_params((0..100_000).map(|_| sample_prior(&mut rng, dim).unwrap()).collect()).unwrap();
    let direct_mean = bayesian_mean(&direct).unwrap();
    let mixed = cvtomo::fock::DensityMatrix::maximally_mixed(dim);
    let (e_chain, e_direct) = (chain_mean.max_abs_diff(&mixed), direct_mean.max_abs_diff(&mixed));
    let pass = e_chain <= 0.02 && e_direct <= 0.02 && t0.elapsed().as_secs() < 120;
    report(3, pass, "prior recovery", &format!("pCN max |mean - I/3| = {e_chain:.4}, direct = {e_direct:.4}"), t0);
}

/// Heterodyne coherent state `alpha0 = -2.78 - 0.54i`, fidelities at K=7998 and K=1600.
fn coherent_rerun(cutoff: usize, thinning: usize, tol: f64, seed: u64) -> (bool, String) {
    let alpha = C64::new(-2.78, -0.54);
    let sim = SimConfig::new(StateSpec::Coherent { alpha }, Scheme::Heterodyne, 7998, 1.0, cutoff, seed);
    let data = simulate_dataset(&sim).unwrap();
    let truth = FidelityReference::new(&sim.truth().unwrap()).unwrap();
    let m = MeasurementConfig::new(1.0, cutoff).unwrap();
    let mut pass = true;
    let mut parts = Vec::new();
    for (k, target) in [(7998, 0.958), (1600, 0.86)] {
        let s = SamplerConfig::new(1024, thinning, seed + k as u64);
        let ens = run_chain(&data.prefix(k), &m, &s).unwrap();
        let f = truth.fidelity(&bayesian_mean(&ens).unwrap()).unwrap();
        let sd = fidelity_stats(&ens, &truth).std;
        let ok = (f - target).abs() <= tol;
        pass &= ok;
        parts.push(format!("K={k}: F={f:.4}+-{sd:.4} (want {target}+-{tol}, acc {:.2})", ens.meta.acceptance_rate));
    }
    (pass, parts.join("; "))
}

#[test]
fn criterion_4_coherent_rerun_reduced() {
    let t0 = Instant::now();
    let (pass, detail) = coherent_rerun(10, 1 << 11, 0.08, 104);
    report(4, pass, "coherent heterodyne rerun, n_c=10 T=2^11", &detail, t0);
}

#[test]
#[ignore = "hours; full-scale profile"]
fn criterion_4_coherent_rerun_full() {
    let t0 = Instant::now();
    let (pass, detail) = coherent_rerun(20, 1 << 14, 0.05, 104);
    report(4, pass, "coherent heterodyne rerun, n_c=20 T=2^14", &detail, t0);
}

const FAMILIES: [&str; 4] = ["coherent", "thermal", "squeezed", "fock"];

fn scaling(family: &str, scheme: Scheme, ks: &[usize], r: usize, t: usize, seed: u64) -> Vec<ScalingRow> {
    scaling_experiment(&ScalingConfig {
        family: family.into(),
        mean_photons: vec![1.5],
        k_subsets: ks.to_vec(),
        scheme,
        eta: 1.0,
        cutoff: 10,
        sampler: SamplerConfig::new(r, t, seed),
        seed,
        grid_resolution: DEFAULT_RESOLUTION,
    })
    .unwrap()
}

/// Each row's fidelity may fall below its predecessor's by at most the larger of the two stds.
fn monotone(rows: &[ScalingRow]) -> bool {
    rows.windows(2).all(|w| w[1].fid_mean >= w[0].fid_mean - w[0].fid_std.max(w[1].fid_std))
}

fn curve(rows: &[ScalingRow]) -> String {
    rows.iter().map(|r| format!("{}:{:.3}", r.k, r.fid_mean)).collect::<Vec<_>>().join(" ")
}

#[test]
fn criterion_5_scaling_smoke() {
    let t0 = Instant::now();
    let mut pass = true;
    let mut parts = Vec::new();
    for family in FAMILIES {
        for scheme in [Scheme::Homodyne, Scheme::Heterodyne] {
            let rows = scaling(family, scheme, &[100, 1600], 512, 1 << 9, 105);
            let ok = monotone(&rows);
            pass &= ok;
            parts.push(format!("{family}/{}[{}]{}", scheme.short(), curve(&rows), if ok { "" } else { "!" }));
        }
    }
    report(5, pass, "fidelity grows with K (smoke, K<=1600)", &parts.join(" "), t0);
}

#[test]
#[ignore = "overnight; full-scale profile"]
fn criterion_5_scaling_full() {
    let t0 = Instant::now();
    let ks = [1, 400, 800, 1600, 3200, 6400, 8000];
    let mut pass = true;
    let mut parts = Vec::new();
    let mut at_8000 = std::collections::HashMap::new();
    for seed in [105, 205, 305] {
        for family in FAMILIES {
            for scheme in [Scheme::Homodyne, Scheme::Heterodyne] {
                let rows = scaling(family, scheme, &ks, 1024, 1 << 11, seed);
                pass &= monotone(&rows);
                parts.push(format!("s{seed} {family}/{}[{}]", scheme.short(), curve(&rows)));
                at_8000.entry((family, scheme.short())).or_insert_with(Vec::new).push(rows.last().unwrap().fid_mean);
            }
        }
    }
    let mean = |f: &str, s: &str| at_8000[&(f, s)].iter().sum::<f64>() / 3.0;
    let thermal_below = mean("thermal", "het") < mean("coherent", "het");
    let fock_hom_better = mean("fock", "hom") > mean("fock", "het");
    parts.push(format!(
        "thermal/het {:.4} < coherent/het {:.4}: {thermal_below}; fock hom {:.4} > het {:.4}: {fock_hom_better}",
        mean("thermal", "het"),
        mean("coherent", "het"),
        mean("fock", "hom"),
        mean("fock", "het")
    ));
    report(5, pass && thermal_below && fock_hom_better, "scaling properties (full)", &parts.join("; "), t0);
}

#[test]
fn criterion_6_homodyne_heterodyne_consistency() {
    let t0 = Instant::now();
    let alpha = C64::new(1.5f64.sqrt(), 0.0);
    let sim = SimConfig::new(StateSpec::Coherent { alpha }, Scheme::Heterodyne, 4000, 1.0, 10, 106);
    let data = simulate_dataset(&sim).unwrap();
    let truth = FidelityReference::new(&sim.truth().unwrap()).unwrap();
    let s = SamplerConfig::new(1024, 1 << 10, 106);
    let run = |ds: &QuadratureDataset, eta: f64| {
        let ens = run_chain(ds, &MeasurementConfig::new(eta, 10).unwrap(), &s).unwrap();
        let f = truth.fidelity(&bayesian_mean(&ens).unwrap()).unwrap();
        (f, fidelity_stats(&ens, &truth).std)
    };
    let (f_x, sd_x) = run(&data.x_only(), 0.5);
    let (f_full, sd_full) = run(&data, 1.0);
    let pass = f_x >= 0.85 && f_full >= 0.85 && f_x <= f_full + sd_x.max(sd_full);
    report(
        6,
        pass,
        "x-only (eta=0.5) vs full heterodyne (eta=1)",
        &format!("F_x={f_x:.4}+-{sd_x:.4}, F_full={f_full:.4}+-{sd_full:.4}"),
        t0,
    );
}

#[test]
fn criterion_7_cat_end_to_end() {
    let t0 = Instant::now();
    let eta = 0.853;
    let spec = StateSpec::Cat { alpha: C64::new(1.64, 0.0), parity: Parity::Odd };
    let sim = SimConfig::new(spec, Scheme::Homodyne, 1100, eta, 10, 107);
    let data = simulate_dataset(&sim).unwrap();
    let ens = run_chain(&data, &MeasurementConfig::new(eta, 10).unwrap(), &SamplerConfig::new(1024, 1 << 13, 107)).unwrap();
    let fit = cat_report(&ens, Parity::Odd, 4.0).unwrap();
    let rho_b = bayesian_mean(&ens).unwrap();
    let lossy_truth = apply_loss(&sim.truth().unwrap(), eta).unwrap();
    let f_lossy = fidelity(apply_loss(&rho_b, eta).unwrap().state(), lossy_truth.state()).unwrap();
    let ordered = [fit.alpha_abs, fit.fidelity].iter().all(|e| e.lower <= e.mean && e.mean <= e.upper);
    // The fidelity threshold is against the lossy truth; the nearest-cat
    // overlap is reported alongside but measures distance to an ideal cat.
    let pass = (fit.alpha_abs.mean - 1.64).abs() <= 0.2 && f_lossy >= 0.8 && ordered;
    report(
        7,
        pass,
        "odd cat, homodyne, eta=0.853",
        &format!(
            "|alpha| = {}, nearest-cat overlap = {}, F(L(rho_B), lossy truth) = {f_lossy:.4}, bounds ordered: {ordered}",
            fit.alpha_abs, fit.fidelity
        ),
        t0,
    );
}

#[test]
fn criterion_8_calibration_round_trip() {
    let t0 = Instant::now();
    let g = BlockGeometry::default();
    let rate = 2.5e9;
    let n = (0.8e-3 * rate) as usize;
    let ramp = 5.0e3;
    let period = (rate / ramp) as usize;
    let edges: Vec<usize> = (0..n).step_by(period).collect();
    let points = n / g.spacing - 2;
    // Known quadratures and the phases a linear ramp assigns to them.
    let mut rng = ChaCha8Rng::seed_from_u64(108);
    let q: Vec<Vec<f64>> = (0..2).map(|_| (0..points).map(|_| rng.random::<f64>() * 8.0 - 4.0).collect()).collect();
    let cal = CalibrationRecord {
        lo_power_mw: 12.0,
        channels: vec![
            ChannelCalibration { sn_mean: 0.013, sn_var: 2.1e-4, electronics_var: Some(1.0e-5) },
            ChannelCalibration { sn_mean: -0.008, sn_var: 1.7e-4, electronics_var: Some(1.1e-5) },
        ],
        fit: None,
    };
    let volts = denormalize_quadratures(&q, &cal).unwrap();
    let trace = RawTrace::synthesize(&volts, g, n, rate, edges, 37, &[0.013, -0.008]).unwrap();
    let report_ = ingest(&trace, &cal, g, Some(ramp)).unwrap();
    let recs = report_.dataset.records();
    let per_sweep = period / g.spacing;
    let mut worst = 0.0f64;
    for (i, r) in recs.iter().enumerate() {
        let k = i + report_.dropped_before;
        let pos = (k + 1) % per_sweep;
        let theta = TAU * pos as f64 / per_sweep as f64;
        worst = worst.max((r.x - q[0][k]).abs()).max((r.p.unwrap() - q[1][k]).abs()).max((r.theta - theta).abs());
    }
    let pass = recs.len() == 7998 && report_.sweeps == 4 && worst <= 1e-9 && t0.elapsed().as_secs() < 10;
    report(
        8,
        pass,
        "calibration round trip",
        &format!("{} points, {} sweeps, max deviation {worst:.2e}", recs.len(), report_.sweeps),
        t0,
    );
}

#[test]
fn criterion_9_determinism() {
    let t0 = Instant::now();
    let dir = tempfile::tempdir().unwrap();
    let bin = env!("CARGO_BIN_EXE_cvtomo");
    let path = |p: &Path| p.to_str().unwrap().to_string();
    let sim = dir.path().join("sim");
    let status = Command::new(bin)
        .args(["simulate", "--state", "thermal:0.8", "--scheme", "het", "--K", "300", "--nc", "5", "--seed", "9", "--out", &path(&sim)])
        .status()
        .unwrap();
    assert!(status.success());
    let out = dir.path().join("inf");
    let cfg = dir.path().join("infer.toml");
    std::fs::write(
        &cfg,
        format!(
            "data = {:?}\nout = {:?}\nnc = 5\nR = 64\nT = 8\nseed = 9\nchains = 2\n",
            path(&sim.join("data.csv")),
            path(&out)
        ),
    )
    .unwrap();
    let files = ["ensemble.jsonl", "ensemble.meta.json", "rho_b.json", "diagnostics.csv"];
    let mut runs = Vec::new();
    for _ in 0..2 {
        let status = Command::new(bin).args(["infer", "--config", &path(&cfg)]).status().unwrap();
        assert!(status.success());
        runs.push(files.map(|f| std::fs::read(out.join(f)).unwrap()));
        std::fs::remove_dir_all(&out).unwrap();
    }
    let same = runs[0] == runs[1];
    let pass = same && t0.elapsed().as_secs() < 60;
    report(9, pass, "determinism", &format!("byte-identical {}: {same}", files.join(", ")), t0);
}
