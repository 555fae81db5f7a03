//! Acceptance suite: one PASS/FAIL line per criterion.

use std::f64::consts::PI;
use std::sync::Arc;
use std::time::Instant;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use maxhom::bloch::{BlochOptions, FiberContext, Label};
use maxhom::cell::{solve_cell_problems, CorrectorSet};
use maxhom::coefficients::{CoefficientFamily, CoefficientSet, LayeredEta, TrigSeries};
use maxhom::config::RunConfig;
use maxhom::germ::{fibonacci_sphere, mu12, BranchVerdict, GermAnalysis};
use maxhom::harness::{pi_bound_check, sweep, Scenario, SweepReport};
use maxhom::lattice::Lattice;
use maxhom::linalg::{cspectral_norm, Mat3, Mu0, Vec3, C64};
use maxhom::solver::SolverOptions;
use maxhom::spectral::{eval_on_grid, Band};

type Outcome = (bool, String);

fn cell(fam: CoefficientFamily, mu0: Mu0, grid: [usize; 3]) -> (CoefficientSet, CorrectorSet) {
    let cs = CoefficientSet::new(Lattice::standard(), fam, mu0, grid).expect("coefficients");
    let cells = solve_cell_problems(&cs, &SolverOptions::default()).expect("cell problems");
    (cs, cells)
}

fn anisotropic_constant() -> (CoefficientFamily, Mu0) {
    let eta = Mat3::new(2.0, 0.3, 0.1, 0.3, 1.5, 0.0, 0.1, 0.0, 1.0);
    let mu0 = Mu0::new(Mat3::new(1.2, 0.1, 0.0, 0.1, 0.9, 0.0, 0.0, 0.0, 1.0)).unwrap();
    (CoefficientFamily::constant(eta, 1.5), mu0)
}

fn divergence_free_columns() -> CoefficientFamily {
    let b = TrigSeries::new(2.0, &[0.4], &[0.7]);
    CoefficientFamily::Layered {
        eta: LayeredEta::diagonal(TrigSeries::constant(1.5), b.clone(), b),
        nu: TrigSeries::new(1.0, &[0.3], &[]),
    }
}

fn layered_config(phi_zero: bool) -> RunConfig {
    let mut cfg = RunConfig::default();
    cfg.grid.cell = [16, 1, 1];
    cfg.grid.torus_base = [8, 8, 8];
    cfg.grid.points_per_period = 16;
    cfg.sweep.scenario = if phi_zero { "layered_phi0" } else { "layered" }.into();
    cfg.sweep.inverse_eps = vec![2, 4, 8, 16];
    cfg.sweep.tau = 1.0;
    cfg.sweep.data.phi_zero = phi_zero;
    cfg
}

fn criterion_1() -> Outcome {
    let (fam, mu0) = anisotropic_constant();
    let (cs, cells) = cell(fam.clone(), mu0.clone(), [8, 8, 8]);
    let eta = cs.periodic.eta_at(&Vec3::zeros());
    let sol = cells.max_solution_coefficient();
    let eta_err = (cells.eta0 - eta).amax();
    let nu_err = (cells.nu_under - 1.5).abs();
    let germ = GermAnalysis::new(&cells, cs.lattice.cell_volume);
    let f_max = germ.f.f_matrix.amax();
    let mut cfg = RunConfig {
        coefficients: fam,
        mu0: [0, 1, 2].map(|i| [0, 1, 2].map(|j| mu0.m[(i, j)])),
        ..Default::default()
    };
    cfg.grid.cell = [8, 8, 8];
    cfg.sweep.inverse_eps = vec![2, 4];
    // the remaining gap is leapfrog time error, O(dt²)
    cfg.wave.dt_max = 5e-4;
    let sc = Scenario::new(&cfg).expect("scenario");
    let mut prop: f64 = 0.0;
    for n in [2, 4] {
        let p = sc.run_point(n, cfg.sweep.tau).expect("run");
        prop = prop.max(p.get("e_v").unwrap()).max(p.get("e_z").unwrap());
    }
    let ok = sol <= 1e-10 && eta_err <= 1e-12 && nu_err <= 1e-12 && f_max == 0.0 && prop <= 1e-6;
    (
        ok,
        format!(
            "max cell solution {sol:.1e}, |eta0-eta| {eta_err:.1e}, |nu_-nu| {nu_err:.1e}, max|F| {f_max:e}, propagate gap {prop:.2e} (dt_max 5e-4)"
        ),
    )
}

fn criterion_2() -> Outcome {
    let mut worst = f64::INFINITY;
    for seed in 0..20u64 {
        let fam = CoefficientFamily::Random {
            seed: 1000 + seed,
            harmonics: 1,
            contrast: 0.7,
            nu_amplitude: 0.3,
        };
        let (_, c) = cell(fam, Mu0::identity(), [10, 10, 10]);
        let s = c.diagnostics.voigt_reuss_slack;
        worst = worst.min(s[0]).min(s[1]);
    }
    (worst >= -1e-8, format!("min eigenvalue slack over 20 seeds {worst:.3e}"))
}

/// Composite Simpson on [0, x] with `n` (even) panels.
fn simpson(f: &dyn Fn(f64) -> f64, x: f64, n: usize) -> f64 {
    let h = x / n as f64;
    let mut s = f(0.0) + f(x);
    for i in 1..n {
        s += f(i as f64 * h) * if i % 2 == 1 { 4.0 } else { 2.0 };
    }
    s * h / 3.0
}

fn criterion_3() -> Outcome {
    let (_, c) = cell(CoefficientFamily::layered_isotropic(), Mu0::identity(), [32, 1, 1]);
    let a = |s: f64| 2.0 + s.sin();
    // 1D oracle: η⁰₁₁ = harmonic mean, η⁰₂₂ = η⁰₃₃ = arithmetic mean
    let harm = 2.0 * PI / simpson(&|s| 1.0 / a(s), 2.0 * PI, 4096);
    let arith = simpson(&a, 2.0 * PI, 4096) / (2.0 * PI);
    let expect = Mat3::from_diagonal(&Vec3::new(harm, arith, arith));
    let eta_err = (c.eta0 - expect).amax();
    let closed = (c.eta0 - Mat3::from_diagonal(&Vec3::new(3f64.sqrt(), 2.0, 2.0))).amax();
    // Ψ₃₂: ψ' = 1 − a/η⁰₂₂ with zero mean; Ψ₁₂ = Ψ₂₂ = 0
    let dpsi = |s: f64| 1.0 - a(s) / arith;
    let raw = |x: f64| simpson(&dpsi, x, 2048);
    let m = 64;
    let xs: Vec<f64> = (0..m).map(|k| 2.0 * PI * k as f64 / m as f64).collect();
    let mean = simpson(&raw, 2.0 * PI, 256) / (2.0 * PI);
    let psi = c.psi();
    let mut err: f64 = 0.0;
    for i in 0..3 {
        let vals = eval_on_grid(&c.band.modes, psi.entry(i, 1), [m, 1, 1]);
        for (k, x) in xs.iter().enumerate() {
            let e = if i == 2 { raw(*x) - mean } else { 0.0 };
            err = err.max((vals[k] - C64::new(e, 0.0)).norm());
        }
    }
    let ok = eta_err <= 1e-8 && closed <= 1e-8 && err <= 1e-8;
    (
        ok,
        format!("|eta0 - oracle| {eta_err:.1e} (closed form {closed:.1e}), max |Psi col 2 - oracle| {err:.1e}"),
    )
}

/// Compares Bloch fits with the germ at 10 directions; returns (max rel γ error, max |μ₃|/γ₃).
fn germ_vs_bloch(fam: CoefficientFamily, mu0: Mu0, grid: [usize; 3], cutoff: [usize; 3]) -> (f64, f64, bool) {
    let cs = CoefficientSet::new(Lattice::standard(), fam, mu0.clone(), grid).unwrap();
    let cells = solve_cell_problems(&cs, &SolverOptions::default()).unwrap();
    let germ = GermAnalysis::new(&cells, cs.lattice.cell_volume);
    let ctx = FiberContext::new(&cs, cutoff).unwrap();
    let opts = BlochOptions::default();
    let tg = ctx.default_t_grid(opts.t_points);
    let mut worst_gamma: f64 = 0.0;
    let mut worst_mu3: f64 = 0.0;
    let mut labels_ok = true;
    for theta in fibonacci_sphere(10) {
        let sp = germ.spectrum(&theta).unwrap();
        let fit = ctx.branch_fit(&theta, &tg, &opts).unwrap();
        let Some(gb) = fit.gradient_branch() else {
            labels_ok = false;
            continue;
        };
        let mut js: Vec<f64> = (0..fit.gamma.len()).filter(|&b| b != gb).map(|b| fit.gamma[b]).collect();
        js.sort_by(f64::total_cmp);
        let mut gj = vec![sp.gamma[0], sp.gamma[1]];
        gj.sort_by(f64::total_cmp);
        for i in 0..2 {
            worst_gamma = worst_gamma.max((js[i] - gj[i]).abs() / gj[i]);
        }
        worst_gamma = worst_gamma.max((fit.gamma[gb] - sp.gamma[2]).abs() / sp.gamma[2]);
        worst_mu3 = worst_mu3.max(fit.mu[gb].abs() / sp.gamma[2]);
    }
    (worst_gamma, worst_mu3, labels_ok)
}

fn criterion_4() -> Outcome {
    let (cfam, cmu) = anisotropic_constant();
    let runs = [
        ("constant", germ_vs_bloch(cfam, cmu, [4, 4, 4], [3, 3, 3])),
        (
            "layered",
            germ_vs_bloch(CoefficientFamily::layered_isotropic(), Mu0::identity(), [49, 1, 1], [24, 0, 0]),
        ),
        (
            "divergence-free columns",
            germ_vs_bloch(divergence_free_columns(), Mu0::identity(), [49, 1, 1], [24, 0, 0]),
        ),
    ];
    let ok = runs.iter().all(|(_, (g, m, l))| *g <= 1e-4 && *m <= 1e-3 && *l);
    let detail = runs
        .iter()
        .map(|(n, (g, m, l))| format!("{n}: rel gamma {g:.1e}, |mu3|/gamma3 {m:.1e}{}", if *l { "" } else { ", G label missing" }))
        .collect::<Vec<_>>()
        .join("; ");
    (ok, detail)
}

fn criterion_5() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let scenarios = [
        (CoefficientFamily::crossing_example(), Mu0::identity(), [32, 1, 1]),
        (
            CoefficientFamily::Random {
                seed: 77,
                harmonics: 1,
                contrast: 0.6,
                nu_amplitude: 0.3,
            },
            Mu0::new(Mat3::new(1.3, 0.2, 0.0, 0.2, 1.0, 0.1, 0.0, 0.1, 0.8)).unwrap(),
            [10, 10, 10],
        ),
    ];
    let mut worst: f64 = 0.0;
    for (fam, mu0, grid) in scenarios {
        let (cs, cells) = cell(fam, mu0, grid);
        let g = GermAnalysis::new(&cells, cs.lattice.cell_volume);
        for _ in 0..50 {
            let theta = Vec3::new(
                rng.random_range(-1.0..1.0),
                rng.random_range(-1.0..1.0),
                rng.random_range(-1.0..1.0),
            )
            .normalize();
            worst = worst.max(cspectral_norm(&(g.n_theta(&theta) - g.n_theta_m_route(&theta))));
        }
    }
    // Example-1 threshold coefficients at the crossing direction vs the Bloch cubic fit
    let (cs, cells) = cell(CoefficientFamily::crossing_example(), Mu0::identity(), [49, 1, 1]);
    let germ = GermAnalysis::new(&cells, cs.lattice.cell_volume);
    let cond = germ.check_conditions(2000);
    let theta = cond.min_gap_direction;
    let sp = germ.spectrum(&theta).unwrap();
    let m = match mu12(&theta, &sp.gamma, germ.f.f(&theta), &cells.mu0) {
        Ok(m) => m,
        Err(e) => return (false, format!("route defect {worst:.1e}; mu12 unavailable: {e}")),
    };
    let ctx = FiberContext::new(&cs, [24, 0, 0]).unwrap();
    let fit = ctx.branch_fit(&theta, &ctx.default_t_grid(8), &BlochOptions::default()).unwrap();
    let mut js: Vec<f64> = (0..3).filter(|&b| fit.branch_label[b] != Label::G).map(|b| fit.mu[b]).collect();
    js.sort_by(f64::total_cmp);
    let mut expect = m.mu.to_vec();
    expect.sort_by(f64::total_cmp);
    let rel = (0..2).map(|i| (js.get(i).copied().unwrap_or(f64::NAN) - expect[i]).abs() / expect[i].abs()).fold(0.0, f64::max);
    let ok = worst <= 1e-7 && rel <= 0.05 && cond.condition2 == BranchVerdict::Crossing;
    (
        ok,
        format!("max route defect {worst:.1e} over 100 directions; mu12 {expect:?} vs fit {js:?} (rel {rel:.2e})"),
    )
}

/// η⁻¹ = M + Hess ψ with a small trigonometric ψ, so that the flux is constant and η⁰ = η̲ = M⁻¹.
fn hessian_construction() -> (f64, f64) {
    let lattice = Lattice::standard();
    let band = Arc::new(Band::new(lattice.clone(), [12, 12, 12]).unwrap());
    let m = Mat3::new(1.0, 0.2, 0.0, 0.2, 1.3, 0.1, 0.0, 0.1, 0.9);
    let hess = |x: &Vec3| {
        // ψ = 0.08 cos(x₁ + x₂) + 0.05 sin(x₂ − 2x₃) + 0.04 cos(x₃)
        let mut h = Mat3::zeros();
        let k1 = Vec3::new(1.0, 1.0, 0.0);
        let k2 = Vec3::new(0.0, 1.0, -2.0);
        let k3 = Vec3::new(0.0, 0.0, 1.0);
        h -= k1 * k1.transpose() * (0.08 * (x[0] + x[1]).cos());
        h -= k2 * k2.transpose() * (0.05 * (x[1] - 2.0 * x[2]).sin());
        h -= k3 * k3.transpose() * (0.04 * x[2].cos());
        h
    };
    let pts = band.padded_points();
    let eta: Vec<Mat3> = pts.iter().map(|x| (m + hess(x)).try_inverse().unwrap()).collect();
    let cells = CorrectorSet::solve(
        band,
        Mu0::identity(),
        Arc::new(eta),
        Arc::new(vec![1.0; pts.len()]),
        false,
        &SolverOptions::default(),
    )
    .unwrap();
    let g = GermAnalysis::new(&cells, lattice.cell_volume);
    let eta_err = (cells.eta0 - m.try_inverse().unwrap()).amax();
    (g.f.sym_norm() / g.condition1_threshold(), eta_err)
}

fn criterion_6() -> Outcome {
    let (fam, mu0) = anisotropic_constant();
    let (cs, c) = cell(fam, mu0, [8, 8, 8]);
    let g = GermAnalysis::new(&c, cs.lattice.cell_volume);
    let r_const = g.f.sym_norm() / g.condition1_threshold();
    let (cs, c) = cell(divergence_free_columns(), Mu0::identity(), [32, 1, 1]);
    let g = GermAnalysis::new(&c, cs.lattice.cell_volume);
    let r_div = g.f.sym_norm() / g.condition1_threshold();
    let (r_hess, hess_eta) = hessian_construction();
    let ball = |n: usize| {
        let fam = CoefficientFamily::Ball {
            kappa: 4.0,
            theta: 0.1,
            radius: 0.3,
            width: None,
            center: [0.3, 0.2, 0.1],
            nu: 1.0,
        };
        let (cs, c) = cell(fam, Mu0::identity(), [n, n, n]);
        GermAnalysis::new(&c, cs.lattice.cell_volume).f.sym_norm()
    };
    let seq: Vec<f64> = [12, 18, 24].iter().map(|&n| ball(n)).collect();
    let monotone = seq.windows(2).all(|w| w[1] < w[0]);
    let ok = r_const <= 1.0 && r_div <= 1.0 && r_hess <= 1.0 && monotone;
    (
        ok,
        format!(
            "|sym F|/threshold: constant {r_const:.1e}, divergence-free columns {r_div:.1e}, eta0 = eta_ {r_hess:.1e} (|eta0 - M^-1| {hess_eta:.1e}); ball grids 12/18/24: {seq:?}"
        ),
    )
}

fn slope(r: &SweepReport, name: &str) -> f64 {
    r.metric(name).and_then(|m| m.fit.as_ref()).map(|f| f.slope).unwrap_or(f64::NAN)
}

fn local(r: &SweepReport, name: &str) -> String {
    r.metric(name).map(|m| format!("{:.2?}", m.local_slopes)).unwrap_or_default()
}

fn criterion_7(r: &SweepReport) -> Outcome {
    let s = slope(r, "e_v");
    (s >= 0.9, format!("e_v slope {s:.3} (pairwise {})", local(r, "e_v")))
}

fn criterion_8(r: &SweepReport) -> Outcome {
    let names = ["e_corr_h1", "e_flux", "e_u", "e_w"];
    let ok = names.iter().all(|n| slope(r, n) >= 0.9);
    let detail = names
        .iter()
        .map(|n| format!("{n} {:.3} (pairwise {})", slope(r, n), local(r, n)))
        .collect::<Vec<_>>()
        .join("; ");
    (ok, detail)
}

fn criterion_9() -> Outcome {
    let r = pi_bound_check(&Lattice::standard(), [24, 24, 24], &[0.5, 0.25, 0.125], &[0.5, 1.0, 1.5, 2.0], 20, 99)
        .expect("pi bound");
    (
        r.violations == 0,
        format!("{} checks, {} violations, max ratio {:.3}", r.checks, r.violations, r.max_ratio),
    )
}

fn criterion_10(reports: &[&SweepReport]) -> Outcome {
    let mut div: f64 = 0.0;
    let mut energy: f64 = 0.0;
    let mut runs = 0;
    for r in reports {
        for d in &r.diagnostics {
            div = div.max(d.divergence_drift);
            energy = energy.max(d.energy_drift);
            runs += 1;
        }
    }
    (
        div <= 1e-8 && energy <= 1e-6 && runs == 8,
        format!("{runs} runs: max divergence drift {div:.1e}, max energy drift {energy:.1e}"),
    )
}

fn report(n: usize, start: Instant, (ok, detail): Outcome, failures: &mut Vec<usize>) {
    if !ok {
        failures.push(n);
    }
    println!(
        "criterion {n}: {} - {detail} [{:.1}s]",
        if ok { "PASS" } else { "FAIL" },
        start.elapsed().as_secs_f64()
    );
}

fn main() {
    let mut failures = Vec::new();
    let t = Instant::now();
    report(1, t, criterion_1(), &mut failures);
    let t = Instant::now();
    report(2, t, criterion_2(), &mut failures);
    let t = Instant::now();
    report(3, t, criterion_3(), &mut failures);
    let t = Instant::now();
    report(4, t, criterion_4(), &mut failures);
    let t = Instant::now();
    report(5, t, criterion_5(), &mut failures);
    let t = Instant::now();
    report(6, t, criterion_6(), &mut failures);

    let t = Instant::now();
    let plain = sweep(&Scenario::new(&layered_config(false)).expect("scenario")).expect("sweep");
    report(7, t, criterion_7(&plain), &mut failures);
    let t = Instant::now();
    let phi0 = sweep(&Scenario::new(&layered_config(true)).expect("scenario")).expect("sweep");
    report(8, t, criterion_8(&phi0), &mut failures);
    let t = Instant::now();
    report(9, t, criterion_9(), &mut failures);
    let t = Instant::now();
    report(10, t, criterion_10(&[&plain, &phi0]), &mut failures);

    if failures.is_empty() {
        println!("acceptance: all criteria pass");
    } else {
        println!("acceptance: failing criteria {failures:?}");
        std::process::exit(1);
    }
}
