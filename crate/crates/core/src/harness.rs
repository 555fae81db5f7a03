//! ε-sweeps comparing oscillating and homogenized solutions, rate fits and the Π_ε bound check.

use std::sync::Arc;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::Serialize;
use statrs::distribution::{ContinuousCDF, StudentsT};

use crate::cell::{solve_cell_problems, CorrectorSet};
use crate::coefficients::CoefficientSet;
use crate::config::RunConfig;
use crate::error::{Error, Result};
use crate::germ::GermAnalysis;
use crate::lattice::Lattice;
use crate::linalg::C64;
use crate::solver::{zeros3, VField};
use crate::spectral::{hs_norm_sq, Band};
use crate::wave::{
    project_mu_solenoidal, random_band_limited, sub, CorrectorVariant, TorusProblem,
};

#[derive(Debug, Clone, Serialize)]
pub struct RateFit {
    pub slope: f64,
    pub intercept: f64,
    /// Root-mean-square residual of the log–log fit.
    pub residual: f64,
    /// 95% confidence interval of the slope; unbounded with three points or fewer than three.
    pub slope_ci: [f64; 2],
    pub points: usize,
    pub notes: Vec<String>,
}

/// Least squares of log(error) against log(ε).
pub fn rate_fit(errors: &[f64], epsilons: &[f64]) -> Result<RateFit> {
    if errors.len() != epsilons.len() {
        return Err(Error::Invalid("errors and epsilons differ in length".into()));
    }
    let mut notes = Vec::new();
    let mut xs = Vec::new();
    let mut ys = Vec::new();
    for (e, h) in errors.iter().zip(epsilons) {
        if *e > 0.0 && e.is_finite() && *h > 0.0 {
            xs.push(h.ln());
            ys.push(e.ln());
        } else {
            notes.push(format!("excluded eps = {h}: error {e:e} is not positive"));
        }
    }
    let k = xs.len();
    if k < 3 {
        return Err(Error::Invalid(format!("rate fit needs at least 3 positive errors, got {k}")));
    }
    let kf = k as f64;
    let mx = xs.iter().sum::<f64>() / kf;
    let my = ys.iter().sum::<f64>() / kf;
    let sxx: f64 = xs.iter().map(|x| (x - mx).powi(2)).sum();
    if sxx == 0.0 {
        return Err(Error::Invalid("rate fit needs distinct epsilons".into()));
    }
    let sxy: f64 = xs.iter().zip(&ys).map(|(x, y)| (x - mx) * (y - my)).sum();
    let slope = sxy / sxx;
    let intercept = my - slope * mx;
    let ssr: f64 = xs.iter().zip(&ys).map(|(x, y)| (y - intercept - slope * x).powi(2)).sum();
    let residual = (ssr / kf).sqrt();
    let slope_ci = if k > 2 {
        let se = (ssr / (kf - 2.0) / sxx).sqrt();
        let t = StudentsT::new(0.0, 1.0, kf - 2.0)
            .map(|d| d.inverse_cdf(0.975))
            .unwrap_or(f64::INFINITY);
        [slope - t * se, slope + t * se]
    } else {
        [f64::NEG_INFINITY, f64::INFINITY]
    };
    Ok(RateFit {
        slope,
        intercept,
        residual,
        slope_ci,
        points: k,
        notes,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum Verdict {
    Pass,
    /// Slope significantly above the expected order.
    BetterThanBound,
    Fail,
    /// All errors at the solver floor; no slope is meaningful.
    Degenerate,
    /// Fewer than four usable ε points.
    Insufficient,
}

/// Which estimate a metric is compared with.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum Estimate {
    /// Principal term in L₂, data in H².
    PrincipalL2,
    /// Corrected approximation with φ = 0, data in H³.
    Corrected,
    /// Recovered electric fields with φ = 0, data in H³.
    RecoveredFields,
}

#[derive(Debug, Clone, Serialize)]
pub struct MetricSeries {
    pub metric: String,
    pub estimate: Estimate,
    /// Sobolev index of the data norm used for `relative`.
    pub data_s: f64,
    pub values: Vec<f64>,
    /// values / (‖φ‖_{H^s} + ‖f‖_{H^s}).
    pub relative: Vec<f64>,
    /// values / ‖curl f‖_{L₂}.
    pub relative_curl: Vec<f64>,
    pub fit: Option<RateFit>,
    /// Slopes between consecutive ε points.
    pub local_slopes: Vec<f64>,
    pub verdict: Verdict,
    pub note: Option<String>,
    /// Counted towards the scenario verdict.
    pub checked: bool,
}

#[derive(Debug, Clone, Serialize)]
pub struct PointDiagnostics {
    pub eps: f64,
    pub n: usize,
    pub grid: [usize; 3],
    pub dt: f64,
    pub steps: usize,
    pub energy_drift: f64,
    pub divergence_drift: f64,
}

#[derive(Debug, Clone, Serialize)]
pub struct DataNorms {
    pub phi_h2: f64,
    pub f_h2: f64,
    pub f_h3: f64,
    pub curl_f_l2: f64,
}

#[derive(Debug, Clone, Serialize)]
pub struct SweepReport {
    pub scenario: String,
    pub eps: Vec<f64>,
    pub tau: f64,
    pub phi_zero: bool,
    pub data_norms: DataNorms,
    pub metrics: Vec<MetricSeries>,
    pub diagnostics: Vec<PointDiagnostics>,
    pub warnings: Vec<String>,
    pub verdict: Verdict,
    pub restriction: String,
}

impl SweepReport {
    pub fn metric(&self, name: &str) -> Option<&MetricSeries> {
        self.metrics.iter().find(|m| m.metric == name)
    }

    pub fn to_csv(&self) -> String {
        let mut s = String::from("scenario,eps,tau,metric,value\n");
        for m in &self.metrics {
            for (e, v) in self.eps.iter().zip(&m.values) {
                s.push_str(&format!("{},{e:e},{},{},{v:e}\n", self.scenario, self.tau, m.metric));
            }
        }
        for d in &self.diagnostics {
            s.push_str(&format!("{},{:e},{},energy_drift,{:e}\n", self.scenario, d.eps, self.tau, d.energy_drift));
            s.push_str(&format!(
                "{},{:e},{},divergence_drift,{:e}\n",
                self.scenario, d.eps, self.tau, d.divergence_drift
            ));
        }
        s
    }
}

/// Everything that does not depend on ε: coefficients, cell solutions and data seeds.
#[derive(Debug, Clone)]
pub struct Scenario {
    pub config: RunConfig,
    pub coefficients: CoefficientSet,
    pub cells: Arc<CorrectorSet>,
}

/// Errors of one ε point.
#[derive(Debug, Clone, Serialize)]
pub struct PointErrors {
    pub values: Vec<(String, f64)>,
    pub diagnostics: PointDiagnostics,
    pub data_norms: DataNorms,
}

impl PointErrors {
    pub fn get(&self, name: &str) -> Option<f64> {
        self.values.iter().find(|v| v.0 == name).map(|v| v.1)
    }
}

const RESTRICTION: &str = "posed on a torus of n³ coefficient periods with band-limited lattice-periodic data; \
rates are observed on fixed data and are consistent with, not a verification of, operator-norm bounds";

impl Scenario {
    pub fn new(config: &RunConfig) -> Result<Self> {
        config.validate()?;
        let coefficients = config.coefficient_set()?;
        let cells = Arc::new(solve_cell_problems(&coefficients, &config.solver)?);
        Ok(Self {
            config: config.clone(),
            coefficients,
            cells,
        })
    }

    /// Torus grid for ε = 1/n: `points_per_period`·n along axes with coefficient variation.
    pub fn torus_grid(&self, n: usize) -> [usize; 3] {
        let varying = self.coefficients.model().varying_axes();
        let g = &self.config.grid;
        [0, 1, 2].map(|j| {
            if varying[j] {
                g.points_per_period * n
            } else {
                g.torus_base[j]
            }
        })
    }

    pub fn torus(&self, n: usize) -> Result<TorusProblem> {
        TorusProblem::new(
            &self.coefficients,
            self.cells.clone(),
            n,
            self.torus_grid(n),
            self.config.wave,
        )
    }

    /// (φ, f, ψ = −curl f) on the torus band.
    pub fn data(&self, t: &TorusProblem) -> (VField, VField, VField) {
        let d = &self.config.sweep.data;
        let nm = t.band.n_modes();
        let phi = if d.phi_zero {
            zeros3(nm)
        } else {
            let raw = random_band_limited(&t.band, d.max_index, d.decay, d.phi_seed);
            project_mu_solenoidal(&t.band, &t.mu0, &raw)
        };
        let f = random_band_limited(&t.band, d.max_index, d.decay, d.f_seed);
        let c = t.curl_band(&f);
        let psi: VField = [0, 1, 2].map(|k| c[k].iter().map(|x| -x).collect());
        (phi, f, psi)
    }

    /// Runs both problems at ε = 1/n, time τ, and measures every error quantity.
    pub fn run_point(&self, n: usize, tau: f64) -> Result<PointErrors> {
        let t = self.torus(n)?;
        let (phi, f, psi) = self.data(&t);
        let traj = t.propagate_eps(&phi, &psi, tau)?;
        let hom = t.propagate_homogenized(&phi, &psi, tau);
        let es = t.recover_eps(&traj, &f)?;
        let hs = t.recover_homogenized(&hom, &f)?;

        let v_eps = t.to_padded(&es.v);
        let mut values = vec![
            ("e_v".to_string(), t.l2(&sub(&v_eps, &t.to_padded(&hs.v)))),
            ("e_z".to_string(), t.l2(&sub(&t.to_padded(&es.z), &t.to_padded(&hs.z)))),
        ];
        let flux_eps = t.flux_eps(&es.v);
        let du_eps = sub(&es.u, &es.u0);
        let dw_eps = sub(&es.w, &es.w0);
        for (variant, suffix) in [(CorrectorVariant::Plain, ""), (CorrectorVariant::Smoothed, "_smoothed")] {
            let a = t.apply_corrector(&hs, variant);
            values.push((format!("e_corr_h1{suffix}"), t.hs(&sub(&v_eps, &a.v), 1.0)));
            values.push((format!("e_flux{suffix}"), t.l2(&sub(&flux_eps, &a.flux))));
            values.push((format!("e_u{suffix}"), t.l2(&sub(&du_eps, &a.u_diff))));
            values.push((format!("e_w{suffix}"), t.l2(&sub(&dw_eps, &a.w_diff))));
        }
        let data_norms = DataNorms {
            phi_h2: t.hs_band(&phi, 2.0),
            f_h2: t.hs_band(&f, 2.0),
            f_h3: t.hs_band(&f, 3.0),
            curl_f_l2: t.hs_band(&psi, 0.0),
        };
        Ok(PointErrors {
            values,
            diagnostics: PointDiagnostics {
                eps: t.eps,
                n,
                grid: t.band.grid,
                dt: traj.dt,
                steps: traj.steps,
                energy_drift: traj.energy_drift,
                divergence_drift: traj.divergence_drift,
            },
            data_norms,
        })
    }
}

fn metric_meta(name: &str, phi_zero: bool) -> (Estimate, f64, bool) {
    let base = name.trim_end_matches("_smoothed");
    let smoothed = base.len() != name.len();
    match base {
        "e_v" => (Estimate::PrincipalL2, 2.0, true),
        "e_z" => (Estimate::PrincipalL2, 2.0, false),
        "e_corr_h1" | "e_flux" => (Estimate::Corrected, 3.0, phi_zero && !smoothed),
        _ => (Estimate::RecoveredFields, 3.0, phi_zero && !smoothed),
    }
}

/// Runs every ε of the scenario in parallel and fits the rates.
pub fn sweep(scenario: &Scenario) -> Result<SweepReport> {
    let cfg = &scenario.config.sweep;
    let results: Vec<(usize, Result<PointErrors>)> = cfg
        .inverse_eps
        .par_iter()
        .map(|&n| (n, scenario.run_point(n, cfg.tau)))
        .collect();
    let mut warnings = Vec::new();
    let mut points = Vec::new();
    for (n, r) in results {
        match r {
            Ok(p) => points.push(p),
            Err(e @ Error::Unresolved { .. }) => warnings.push(format!("skipped eps = 1/{n}: {e}")),
            Err(e) => return Err(e),
        }
    }
    if points.is_empty() {
        return Err(Error::Invalid("no resolvable eps in the sweep".into()));
    }
    let eps: Vec<f64> = points.iter().map(|p| p.diagnostics.eps).collect();
    let norms = points[0].data_norms.clone();
    let names: Vec<String> = points[0].values.iter().map(|v| v.0.clone()).collect();
    let mut metrics = Vec::new();
    for name in names {
        let values: Vec<f64> = points.iter().map(|p| p.get(&name).unwrap_or(f64::NAN)).collect();
        let (estimate, data_s, checked) = metric_meta(&name, cfg.data.phi_zero);
        let data_norm = if data_s == 2.0 { norms.phi_h2 + norms.f_h2 } else { norms.f_h3 };
        let rel = |d: f64| values.iter().map(|v| if d > 0.0 { v / d } else { f64::NAN }).collect();
        let (fit, verdict, note) = judge(&values, &eps, cfg.floor, cfg.expected_slope, cfg.slope_margin);
        let local_slopes = local_slopes(&values, &eps);
        metrics.push(MetricSeries {
            local_slopes,
            relative: rel(data_norm),
            relative_curl: rel(norms.curl_f_l2),
            metric: name,
            estimate,
            data_s,
            values,
            fit,
            verdict,
            note,
            checked,
        });
    }
    let verdict = if metrics
        .iter()
        .filter(|m| m.checked)
        .any(|m| matches!(m.verdict, Verdict::Fail | Verdict::Insufficient))
    {
        Verdict::Fail
    } else if metrics.iter().filter(|m| m.checked).all(|m| m.verdict == Verdict::Degenerate) {
        Verdict::Degenerate
    } else {
        Verdict::Pass
    };
    Ok(SweepReport {
        scenario: cfg.scenario.clone(),
        eps,
        tau: cfg.tau,
        phi_zero: cfg.data.phi_zero,
        data_norms: norms,
        metrics,
        diagnostics: points.into_iter().map(|p| p.diagnostics).collect(),
        warnings,
        verdict,
        restriction: RESTRICTION.into(),
    })
}

fn local_slopes(values: &[f64], eps: &[f64]) -> Vec<f64> {
    values
        .windows(2)
        .zip(eps.windows(2))
        .map(|(v, e)| (v[0] / v[1]).ln() / (e[0] / e[1]).ln())
        .collect()
}

fn judge(values: &[f64], eps: &[f64], floor: f64, expected: f64, margin: f64) -> (Option<RateFit>, Verdict, Option<String>) {
    if values.iter().all(|v| *v <= floor) {
        return (None, Verdict::Degenerate, Some("degenerate: errors at floor".into()));
    }
    let fit = match rate_fit(values, eps) {
        Ok(f) => f,
        Err(e) => return (None, Verdict::Insufficient, Some(e.to_string())),
    };
    let verdict = if fit.points < 4 {
        Verdict::Insufficient
    } else if fit.slope < expected - margin {
        Verdict::Fail
    } else if fit.slope_ci[0] > expected + margin {
        Verdict::BetterThanBound
    } else {
        Verdict::Pass
    };
    let note = (verdict == Verdict::Insufficient).then(|| format!("only {} usable eps points", fit.points));
    (Some(fit), verdict, note)
}

#[derive(Debug, Clone, Serialize)]
pub struct TauProbeReport {
    pub scenario: String,
    pub eps: f64,
    pub taus: Vec<f64>,
    /// e_v(τ)/ε
    pub scaled_errors: Vec<f64>,
    /// Exponent p in e_v ∼ (1+τ)^p; None when the errors are at the floor.
    pub growth_exponent: Option<f64>,
    /// f ≡ 0 for this scenario, so square-root growth is expected.
    pub improved_expected: bool,
    pub exponent_bound: f64,
    pub consistent: bool,
    pub note: Option<String>,
}

/// Records e_v(τ)/ε at fixed ε and fits its growth in 1+τ.
pub fn tau_scaling_probe(scenario: &Scenario, taus: &[f64], n: usize) -> Result<TauProbeReport> {
    let germ = GermAnalysis::new(&scenario.cells, scenario.coefficients.lattice.cell_volume);
    let improved = germ.check_conditions(scenario.config.germ.sphere_samples).condition1;
    let results: Vec<Result<PointErrors>> = taus.par_iter().map(|&tau| scenario.run_point(n, tau)).collect();
    let mut errs = Vec::new();
    for r in results {
        errs.push(r?.get("e_v").unwrap_or(f64::NAN));
    }
    let eps = 1.0 / n as f64;
    let bound = if improved { 0.7 } else { 1.2 };
    let floor = scenario.config.sweep.floor;
    let (growth, note) = if errs.iter().all(|e| *e <= floor) {
        (None, Some("degenerate: errors at floor".to_string()))
    } else {
        let x: Vec<f64> = taus.iter().map(|t| 1.0 + t).collect();
        // rate_fit regresses log e on log x
        match rate_fit(&errs, &x) {
            Ok(f) => (Some(f.slope), None),
            Err(e) => (None, Some(e.to_string())),
        }
    };
    Ok(TauProbeReport {
        scenario: scenario.config.sweep.scenario.clone(),
        eps,
        taus: taus.to_vec(),
        scaled_errors: errs.iter().map(|e| e / eps).collect(),
        consistent: growth.is_none_or(|g| g <= bound),
        growth_exponent: growth,
        improved_expected: improved,
        exponent_bound: bound,
        note,
    })
}

#[derive(Debug, Clone, Serialize)]
pub struct PiBoundReport {
    pub checks: usize,
    pub violations: usize,
    /// max of ‖(I−Π_ε)u‖ / (r0^{-s} ε^s ‖u‖_{H^s})
    pub max_ratio: f64,
    pub eps: Vec<f64>,
    pub s: Vec<f64>,
}

/// Checks ‖(I−Π_ε)u‖_{L₂} ≤ r0^{-s} ε^s ‖u‖_{H^s} on seeded random fields.
pub fn pi_bound_check(lattice: &Lattice, grid: [usize; 3], eps: &[f64], s_list: &[f64], fields: usize, seed: u64) -> Result<PiBoundReport> {
    let band = Band::new(lattice.clone(), grid)?;
    let max_index = band.modes.iter().flat_map(|m| m.iter().map(|x| x.abs())).max().unwrap_or(0);
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let seeds: Vec<u64> = (0..fields).map(|_| rand::Rng::random(&mut rng)).collect();
    let rows: Vec<(usize, usize, f64)> = seeds
        .par_iter()
        .enumerate()
        .map(|(i, &sd)| {
            // vary the spectral decay so both smooth and rough fields are sampled
            let decay = 0.5 + (i % 4) as f64;
            let u = random_band_limited(&band, max_index, decay, sd);
            let comps: Vec<&[C64]> = u.iter().map(|c| c.as_slice()).collect();
            let mut checks = 0;
            let mut viol = 0;
            let mut worst: f64 = 0.0;
            for &e in eps {
                let mut tail = zeros3(band.n_modes());
                for (k, xi) in band.xi.iter().enumerate() {
                    if !lattice.in_scaled_brillouin(xi, e) {
                        for d in 0..3 {
                            tail[d][k] = u[d][k];
                        }
                    }
                }
                let tcomps: Vec<&[C64]> = tail.iter().map(|c| c.as_slice()).collect();
                let lhs = hs_norm_sq(&band.xi, &tcomps, 0.0).sqrt();
                for &s in s_list {
                    let rhs = (e / lattice.r0).powf(s) * hs_norm_sq(&band.xi, &comps, s).sqrt();
                    checks += 1;
                    if lhs > rhs {
                        viol += 1;
                    }
                    if rhs > 0.0 {
                        worst = worst.max(lhs / rhs);
                    }
                }
            }
            (checks, viol, worst)
        })
        .collect();
    Ok(PiBoundReport {
        checks: rows.iter().map(|r| r.0).sum(),
        violations: rows.iter().map(|r| r.1).sum(),
        max_ratio: rows.iter().map(|r| r.2).fold(0.0, f64::max),
        eps: eps.to_vec(),
        s: s_list.to_vec(),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::coefficients::CoefficientFamily;
    use crate::linalg::{Mat3, Vec3};
    use proptest::prelude::*;
    use rand::Rng;

    #[test]
    fn linear_and_three_halves_rates_are_exact() {
        let eps = [0.5, 0.25, 0.125, 0.0625];
        let e1: Vec<f64> = eps.iter().map(|e| 3.0 * e).collect();
        let f = rate_fit(&e1, &eps).unwrap();
        assert!((f.slope - 1.0).abs() < 1e-10);
        assert!((f.intercept - 3f64.ln()).abs() < 1e-10);
        let e2: Vec<f64> = eps.iter().map(|e: &f64| 0.7 * e.powf(1.5)).collect();
        assert!((rate_fit(&e2, &eps).unwrap().slope - 1.5).abs() < 1e-10);
    }

    #[test]
    fn noisy_linear_errors_give_slope_near_one() {
        let mut rng = ChaCha8Rng::seed_from_u64(42);
        let eps = [0.5, 0.25, 0.125, 0.0625, 1.0 / 32.0];
        for _ in 0..200 {
            let e: Vec<f64> = eps.iter().map(|h| h * (1.0 + rng.random_range(-0.05..0.05))).collect();
            let f = rate_fit(&e, &eps).unwrap();
            assert!((0.9..=1.1).contains(&f.slope), "{}", f.slope);
            assert!(f.slope_ci[0] <= f.slope && f.slope <= f.slope_ci[1]);
        }
    }

    #[test]
    fn nonpositive_errors_are_excluded_with_note() {
        let eps = [0.5, 0.25, 0.125, 0.0625];
        let f = rate_fit(&[0.5, 0.0, 0.125, 0.0625], &eps).unwrap();
        assert_eq!(f.points, 3);
        assert_eq!(f.notes.len(), 1);
        assert!(rate_fit(&[0.5, 0.0, -1.0, 0.0625], &eps).is_err());
    }

    #[test]
    fn judge_flags_floor_and_short_series() {
        let eps = [0.5, 0.25, 0.125, 0.0625];
        let (_, v, n) = judge(&[1e-9, 2e-9, 1e-10, 0.0], &eps, 1e-6, 1.0, 0.1);
        assert_eq!(v, Verdict::Degenerate);
        assert_eq!(n.as_deref(), Some("degenerate: errors at floor"));
        let (_, v, _) = judge(&[0.5, 0.25, 0.125], &eps[..3], 1e-6, 1.0, 0.1);
        assert_eq!(v, Verdict::Insufficient);
        let (_, v, _) = judge(&[0.25, 0.0625, 0.015625, 0.00390625], &eps, 1e-6, 1.0, 0.1);
        assert_eq!(v, Verdict::BetterThanBound);
        let (_, v, _) = judge(&[0.5, 0.4, 0.35, 0.3], &eps, 1e-6, 1.0, 0.1);
        assert_eq!(v, Verdict::Fail);
    }

    #[test]
    fn pi_bound_holds_on_random_fields() {
        let r = pi_bound_check(&Lattice::standard(), [12, 12, 12], &[0.5, 0.25], &[0.5, 1.0, 1.5, 2.0], 4, 9).unwrap();
        assert_eq!(r.checks, 4 * 2 * 4);
        assert_eq!(r.violations, 0);
        assert!(r.max_ratio > 0.0 && r.max_ratio <= 1.0);
    }

    #[test]
    fn constant_scenario_is_degenerate_at_floor() {
        let mut cfg = RunConfig {
            coefficients: CoefficientFamily::constant(Mat3::from_diagonal(&Vec3::new(2.0, 1.5, 1.0)), 1.0),
            ..Default::default()
        };
        cfg.grid.cell = [4, 4, 4];
        cfg.sweep.scenario = "constant".into();
        cfg.sweep.inverse_eps = vec![2, 4, 8, 16];
        cfg.wave.dt_max = 5e-4;
        let sc = Scenario::new(&cfg).unwrap();
        let rep = sweep(&sc).unwrap();
        for m in &rep.metrics {
            assert!(m.values.iter().all(|v| *v <= 1e-6), "{} {:?}", m.metric, m.values);
        }
        assert_eq!(rep.verdict, Verdict::Degenerate);
        assert!(rep.to_csv().starts_with("scenario,eps,tau,metric,value\n"));
    }

    #[test]
    fn sweep_report_is_deterministic() {
        let mut cfg = RunConfig::default();
        cfg.grid.cell = [16, 1, 1];
        cfg.sweep.inverse_eps = vec![2, 4];
        cfg.sweep.tau = 0.3;
        let sc = Scenario::new(&cfg).unwrap();
        let a = serde_json::to_string(&sweep(&sc).unwrap()).unwrap();
        let b = serde_json::to_string(&sweep(&sc).unwrap()).unwrap();
        assert_eq!(a, b);
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(64))]
        #[test]
        fn power_law_slope_is_recovered(c in 0.01f64..100.0, p in 0.2f64..3.0) {
            let eps = [0.5, 0.25, 0.125, 0.0625];
            let e: Vec<f64> = eps.iter().map(|h: &f64| c * h.powf(p)).collect();
            let f = rate_fit(&e, &eps).unwrap();
            prop_assert!((f.slope - p).abs() < 1e-9);
            prop_assert!(f.residual < 1e-9);
        }
    }
}
