//! Run configurations, report assembly and the JSON/CSV writers behind the CLI.
//!
//! Reports embed the configuration that produced them and contain no
//! timestamps, so a repeated run writes byte-identical JSON.

use std::fs;
use std::io::Write;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::cocycle::{sample_onestep, MatrixDistribution, OrbitWindow};
use crate::error::{Error, Result};
use crate::flexible::{plan_flexible, verify_flexible, ConstructionReport, EtaSpec, Mode};
use crate::geometry::{transfer_cost_bounded, SplittingPair};
use crate::oseledets::{
    angle_samples, angle_tail_report_from_neg_log_sin, depth_for_gap, estimate_e1_backward,
    estimate_e2_forward, lyapunov_estimates, AngleMethod, AngleTailReport,
};
use crate::rng::derive_seed;
use crate::verify::CheckOutcome;

pub const DEFAULT_THRESHOLDS: [f64; 5] = [4.0, 8.0, 16.0, 32.0, 64.0];

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RunConfig {
    pub command: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub spec: Option<String>,
    pub steps: u64,
    pub trials: u64,
    #[serde(with = "crate::dec::u64_string")]
    pub seed: u64,
    pub thresholds: Vec<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub mode: Option<Mode>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub r1: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub r2: Option<f64>,
}

impl RunConfig {
    pub fn new(command: &str, steps: u64, trials: u64, seed: u64) -> Self {
        RunConfig {
            command: command.to_string(),
            spec: None,
            steps,
            trials,
            seed,
            thresholds: DEFAULT_THRESHOLDS.to_vec(),
            mode: None,
            r1: None,
            r2: None,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.steps == 0 {
            return Err(Error::NoData("steps must be at least 1".into()));
        }
        if self.thresholds.windows(2).any(|w| !(w[0] < w[1])) {
            return Err(Error::Unsupported(
                "thresholds must be strictly increasing".into(),
            ));
        }
        Ok(())
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct OnestepReport {
    pub config: RunConfig,
    pub distribution: MatrixDistribution,
    pub lambda_hat: [f64; 2],
    /// Estimated `E₁`, `E₂` at time 0, as line angles in `[0, π)`.
    pub e1_angle: f64,
    pub e2_angle: f64,
    pub estimator_depth: usize,
    pub angle_method: AngleMethod,
    pub angle_tail: AngleTailReport,
}

/// Exponents and splitting from one window of `steps` factors, plus the
/// angle tail over `trials` independent orbits. Returns the raw
/// `-log sin θ` samples alongside.
pub fn onestep_report(
    nu: &MatrixDistribution,
    config: &RunConfig,
) -> Result<(OnestepReport, Vec<f64>)> {
    config.validate()?;
    let half = (config.steps as usize / 2).max(1);
    let window = sample_onestep(nu, half, config.seed)?;
    let (l1, l2) = lyapunov_estimates(&window);
    let depth = depth_for_gap(l1 - l2).min(half);
    let e1 = estimate_e1_backward(&window, depth)?;
    let e2 = estimate_e2_forward(&window, depth)?;
    let (values, method) = angle_samples(
        nu,
        config.trials.max(1) as usize,
        None,
        derive_seed(config.seed, 1),
    )?;
    let angle_tail = angle_tail_report_from_neg_log_sin(&values, &config.thresholds)?;
    let report = OnestepReport {
        config: config.clone(),
        distribution: nu.clone(),
        lambda_hat: [l1, l2],
        e1_angle: e1.alpha(),
        e2_angle: e2.alpha(),
        estimator_depth: depth,
        angle_method: method,
        angle_tail,
    };
    Ok((report, values))
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct FlexibleReport {
    pub config: RunConfig,
    pub eta: EtaSpec,
    pub construction: ConstructionReport,
    /// Hard checks of the run; any failure means the construction is broken.
    pub checks: Vec<CheckOutcome>,
}

impl FlexibleReport {
    pub fn passed(&self) -> bool {
        self.checks.iter().all(|c| c.passed)
    }
}

fn check(name: &str, passed: bool, detail: String) -> CheckOutcome {
    CheckOutcome {
        name: name.to_string(),
        passed,
        detail,
        seconds: 0.0,
    }
}

/// Simulates and verifies a construction. Infeasible budgets surface as
/// [`Error::UnboundedGap`].
pub fn flexible_report(eta: &EtaSpec, config: &RunConfig) -> Result<(FlexibleReport, OrbitWindow)> {
    config.validate()?;
    let mode = config
        .mode
        .ok_or_else(|| Error::Unsupported("flexible runs need a mode".into()))?;
    let (r1, r2) = (config.r1.unwrap_or(0.5), config.r2.unwrap_or(-0.5));
    let window = plan_flexible(eta, r1, r2, mode)?.simulate(config.steps as usize, config.seed)?;
    let r = verify_flexible(&window, eta, r1, r2)?;
    let mut checks = vec![
        check(
            "invariance",
            r.invariance_error < 1e-9,
            format!("max angle {:.3e}", r.invariance_error),
        ),
        check(
            "parallelogram",
            r.parallelogram.min_slack >= -1e-9,
            format!("min slack {:.3e}", r.parallelogram.min_slack),
        ),
    ];
    match mode {
        Mode::Bounded { budget } => {
            checks.push(check(
                "step cost below budget",
                r.max_step_cost < budget,
                format!("max {} vs {budget}", r.max_step_cost),
            ));
            let jump = r.max_label_jump.unwrap_or(0);
            checks.push(check(
                "label steps",
                jump <= 1,
                format!("max |Δℓ| = {jump}"),
            ));
        }
        Mode::Lowcost { epsilon } => checks.push(check(
            "mean step cost below epsilon",
            r.mean_step_cost < epsilon + 3.0 * r.mean_step_cost_se,
            format!(
                "{} ± {} vs {epsilon}",
                r.mean_step_cost, r.mean_step_cost_se
            ),
        )),
    }
    let report = FlexibleReport {
        config: config.clone(),
        eta: eta.clone(),
        construction: r,
        checks,
    };
    Ok((report, window))
}

pub fn to_json<T: Serialize>(value: &T) -> String {
    let mut s = serde_json::to_string_pretty(value).expect("reports serialize");
    s.push('\n');
    s
}

pub fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    fs::write(path, to_json(value))?;
    Ok(())
}

/// Columns `threshold,mean,std_err`.
pub fn write_tail_csv<W: Write>(out: W, report: &AngleTailReport) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record(["threshold", "mean", "std_err"])?;
    for t in &report.truncated_means {
        w.write_record([
            t.threshold.to_string(),
            t.mean.to_string(),
            t.std_err.to_string(),
        ])?;
    }
    w.flush()?;
    Ok(())
}

/// Columns `trial,neg_log_sin`.
pub fn write_samples_csv<W: Write>(out: W, values: &[f64]) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record(["trial", "neg_log_sin"])?;
    for (i, v) in values.iter().enumerate() {
        w.write_record([i.to_string(), v.to_string()])?;
    }
    w.flush()?;
    Ok(())
}

/// Columns `index,cost,label,theta`: cost of the move to the next step
/// (empty on the last row), label (empty when the window has none) and the
/// gap angle of the prescribed splitting.
pub fn write_steps_csv<W: Write>(out: W, window: &OrbitWindow) -> Result<()> {
    let f: &[SplittingPair] = window
        .prescribed_f
        .as_deref()
        .ok_or_else(|| Error::NoData("window carries no prescribed splitting".into()))?;
    let mut w = csv::Writer::from_writer(out);
    w.write_record(["index", "cost", "label", "theta"])?;
    for (k, x) in f.iter().enumerate() {
        let index = window.start() + k as i64;
        let cost = f
            .get(k + 1)
            .map(|y| transfer_cost_bounded(x, y).to_string())
            .unwrap_or_default();
        let label = window
            .label(index)
            .map(|l| l.to_string())
            .unwrap_or_default();
        w.write_record([index.to_string(), cost, label, x.gap().to_string()])?;
    }
    w.flush()?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::flexible::example_eta_four_cells;
    use crate::geometry::{Mat2, Side};
    use crate::oseledets::Verdict;
    use approx::assert_abs_diff_eq;
    use std::f64::consts::{FRAC_PI_2, LN_2};

    #[test]
    fn onestep_diagonal() {
        let nu = MatrixDistribution::delta(Mat2::diag(2.0, 0.5));
        let config = RunConfig::new("onestep", 2000, 50, 3);
        let (r, values) = onestep_report(&nu, &config).unwrap();
        assert_abs_diff_eq!(r.lambda_hat[0], LN_2, epsilon = 1e-12);
        assert_abs_diff_eq!(r.lambda_hat[1], -LN_2, epsilon = 1e-12);
        assert_abs_diff_eq!(r.e1_angle, 0.0, epsilon = 1e-12);
        assert_abs_diff_eq!(r.e2_angle, FRAC_PI_2, epsilon = 1e-12);
        assert_eq!(values.len(), 50);
        assert_eq!(r.angle_tail.verdict, Verdict::Converging);
    }

    #[test]
    fn reports_are_reproducible() {
        let nu = MatrixDistribution::Triangular {
            phi: crate::dist::ScalarDist::constant(1.0),
            psi: crate::dist::ScalarDist::Dyadic,
        };
        let config = RunConfig::new("onestep", 1000, 200, 9);
        let a = to_json(&onestep_report(&nu, &config).unwrap().0);
        let b = to_json(&onestep_report(&nu, &config).unwrap().0);
        assert_eq!(a, b);
        assert!(a.contains("\"seed\": \"9\""));
    }

    #[test]
    fn flexible_atom_report() {
        let eta = EtaSpec::atom(0.4, 0.9, Side::Plus);
        let mut config = RunConfig::new("flexible", 3000, 0, 1);
        config.mode = Some(Mode::Bounded { budget: 0.2 });
        let (r, window) = flexible_report(&eta, &config).unwrap();
        assert!(r.passed());
        assert_eq!(r.construction.cell_tv, 0.0);
        let mut buf = Vec::new();
        write_steps_csv(&mut buf, &window).unwrap();
        let text = String::from_utf8(buf).unwrap();
        let mut lines = text.lines();
        assert_eq!(lines.next(), Some("index,cost,label,theta"));
        assert_eq!(lines.next(), Some("-1500,0,0,0.9"));
        assert_eq!(text.lines().count(), 3001);
    }

    #[test]
    fn infeasible_budget_is_an_unbounded_gap() {
        let mut config = RunConfig::new("flexible", 100, 0, 1);
        config.mode = Some(Mode::Bounded { budget: 0.1 });
        let err = flexible_report(&example_eta_four_cells(), &config).unwrap_err();
        match err {
            Error::UnboundedGap { witness, .. } => {
                assert_eq!(witness.side_a, vec![0, 1, 2]);
                assert_eq!(witness.side_b, vec![3]);
            }
            e => panic!("{e}"),
        }
    }

    #[test]
    fn tail_csv_layout() {
        let r = angle_tail_report_from_neg_log_sin(&[0.5, 1.5], &[1.0, 2.0]).unwrap();
        let mut buf = Vec::new();
        write_tail_csv(&mut buf, &r).unwrap();
        let text = String::from_utf8(buf).unwrap();
        assert_eq!(text.lines().next(), Some("threshold,mean,std_err"));
        assert!(text.lines().nth(1).unwrap().starts_with("1,0.75,"));
    }

    #[test]
    fn config_validation() {
        assert!(RunConfig::new("x", 0, 1, 0).validate().is_err());
        let mut c = RunConfig::new("x", 1, 1, 0);
        c.thresholds = vec![2.0, 1.0];
        assert!(c.validate().is_err());
    }
}
