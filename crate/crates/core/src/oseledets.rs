//! Lyapunov exponents, Oseledets directions and angle statistics.
//!
//! - `E₂` is estimated as the most contracted right-singular line of a
//!   forward product, `E₁` as the top left-singular line of a backward one.
//! - Triangular cocycles `[[a, b], [0, 1]]` have `E₂ = span(1, 0)` and
//!   `E₁ = span(X, 1)` with `X` a random series; for them angles are computed
//!   in log form, since `cot θ = X` easily exceeds the `f64` range.
//! - The dyadic-tail example gets exact samplers that skip over the
//!   (provably irrelevant) bulk of a long backward sequence.

use rand::Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::cocycle::{cocycle_product_scaled, sample_onestep, MatrixDistribution, OrbitWindow};
use crate::dist::{dyadic_exponent, dyadic_value, Atom, ScalarDist};
use crate::error::{Error, Result};
use crate::geometry::{line_angle, svd2, top_singular, ProjLine};
use crate::rng::{derive_seed, rng_from_seed, uniform, MeanAccumulator};

/// `(λ̂₁, λ̂₂)` from the forward half of the window (indices `≥ 0`).
pub fn lyapunov_estimates(window: &OrbitWindow) -> (f64, f64) {
    let from = if window.end() > 0 {
        window.start().max(0)
    } else {
        window.start()
    };
    let n = window.end() - from;
    if n < 1000 {
        log::warn!("lyapunov estimate over only {n} steps");
    }
    let product = cocycle_product_scaled(window, from, n).expect("range inside window");
    let log_det: f64 = (from..window.end()).map(|i| window.log_abs_det(i)).sum();
    let l1 = product.log_top_singular() / n as f64;
    let l2 = log_det / n as f64 - l1;
    (l1, l2.min(l1))
}

/// Most contracted right-singular line of `F⁽ᵈᵉᵖᵗʰ⁾(T^index ω)`.
pub fn estimate_e2_forward_at(window: &OrbitWindow, index: i64, depth: usize) -> Result<ProjLine> {
    let p = cocycle_product_scaled(window, index, depth as i64)?;
    Ok(top_singular(&p.mat).2.perpendicular())
}

/// Top left-singular line of `F⁽ᵈᵉᵖᵗʰ⁾(T^(index-depth) ω)`: the image of
/// that product's top right-singular line.
pub fn estimate_e1_backward_at(window: &OrbitWindow, index: i64, depth: usize) -> Result<ProjLine> {
    let p = cocycle_product_scaled(window, index - depth as i64, depth as i64)?;
    Ok(top_singular(&p.mat).1)
}

pub fn estimate_e2_forward(window: &OrbitWindow, depth: usize) -> Result<ProjLine> {
    estimate_e2_forward_at(window, 0, depth)
}

pub fn estimate_e1_backward(window: &OrbitWindow, depth: usize) -> Result<ProjLine> {
    estimate_e1_backward_at(window, 0, depth)
}

/// Depth at which `exp(-gap·depth)` drops below `1e-8`.
pub fn depth_for_gap(gap: f64) -> usize {
    if !(gap > 0.0) {
        return 5000;
    }
    ((1e8f64.ln() / gap).ceil() as usize).clamp(10, 5000)
}

const SERIES_CAP: f64 = 1e12;

/// Partial sum of `X = Σ_{n≥0} a₀···a_{n-1}·bₙ` where `aⱼ = a(T^(-j-1)ω)` and
/// `bₙ = b(T^(-n-1)ω)`. Stops once the running `|a|`-product times
/// `b_bound` falls below `tol`; an exhausted list returns the partial sum.
pub fn triangular_x(a_vals: &[f64], b_vals: &[f64], b_bound: f64, tol: f64) -> Result<f64> {
    let mut prod = 1.0;
    let mut sum = 0.0;
    for (n, &b) in b_vals.iter().enumerate() {
        if n > 0 {
            match a_vals.get(n - 1) {
                Some(a) => prod *= a,
                None => break,
            }
        }
        if prod.abs() > SERIES_CAP {
            return Err(Error::SeriesDiverging { product: prod });
        }
        sum += prod * b;
        if prod.abs() * b_bound < tol {
            return Ok(sum);
        }
    }
    log::debug!("triangular_x: list exhausted before reaching tol {tol}");
    Ok(sum)
}

/// `log(e^x + e^y)` without overflow.
#[inline]
pub fn log_add_exp(x: f64, y: f64) -> f64 {
    if x == f64::NEG_INFINITY {
        return y;
    }
    if y == f64::NEG_INFINITY {
        return x;
    }
    let (hi, lo) = if x > y { (x, y) } else { (y, x) };
    hi + (lo - hi).exp().ln_1p()
}

/// `-log sin θ` for `cot θ = e^L`, i.e. `½·log(1 + e^(2L))`.
#[inline]
pub fn neg_log_sin_from_log_cot(log_cot: f64) -> f64 {
    if log_cot > 0.0 {
        log_cot + 0.5 * (-2.0 * log_cot).exp().ln_1p()
    } else {
        0.5 * (2.0 * log_cot).exp().ln_1p()
    }
}

/// One draw of `log X` for the triangular law with `a = e^(-φ)`, `b = e^ψ`.
///
/// For constant `φ ≥ 1/2` with dyadic `ψ` the draw is exact (up to an event
/// of probability below 1e-17). Otherwise terms are summed until bounded `ψ`
/// certifies a relative remainder below `e^-40`, or `max_depth` is reached.
pub fn sample_triangular_log_x<R: Rng + ?Sized>(
    phi: &ScalarDist,
    psi: &ScalarDist,
    max_depth: usize,
    rng: &mut R,
) -> f64 {
    if let (Some(c), ScalarDist::Dyadic) = (phi.as_constant(), psi) {
        if c >= 0.5 {
            let mut log_x = f64::NEG_INFINITY;
            visit_dyadic_candidates(rng, c, |n, v| {
                log_x = log_add_exp(log_x, v - c * n as f64);
            });
            return log_x;
        }
    }
    let psi_max = psi.upper_bound();
    let mut log_x = f64::NEG_INFINITY;
    let mut sum_phi = 0.0;
    for _ in 0..max_depth {
        let phi_n = phi.sample(rng);
        let psi_n = psi.sample(rng);
        log_x = log_add_exp(log_x, psi_n - sum_phi);
        sum_phi += phi_n;
        if let Some(m) = psi_max {
            if m - sum_phi < log_x - 40.0 && phi.mean() > 0.0 {
                break;
            }
        }
    }
    log_x
}

// Enumerates (n, ψₙ) for an i.i.d. dyadic sequence, skipping terms that
// cannot matter for sup/sum of ψₙ - c·n. All n < 128 are visited; in each
// block [2^j, 2^(j+1)) only values with ψ ≥ c·2^(j-1) are drawn, located by
// geometric skipping (the dyadic law is memoryless in its exponent).
fn visit_dyadic_candidates<R: Rng + ?Sized, F: FnMut(u64, f64)>(rng: &mut R, c: f64, mut visit: F) {
    const N0_LOG2: u32 = 7;
    for n in 0..(1u64 << N0_LOG2) {
        visit(n, dyadic_value(dyadic_exponent(uniform(rng))));
    }
    let mut j = N0_LOG2;
    loop {
        let threshold = c * 2f64.powi(j as i32 - 1);
        let m = threshold.log2().ceil().max(0.0) as u32;
        let p = 0.25f64.powi(m as i32);
        let expected_rest = 2.0 * 2f64.powi(j as i32) * p;
        if expected_rest < 1e-18 || j >= 62 {
            break;
        }
        let block_end = 1u64 << (j + 1);
        let mut n = 1u64 << j;
        let log_q = (-p).ln_1p();
        loop {
            let skip = ((-uniform(rng)).ln_1p() / log_q).floor();
            if !(skip < (block_end - n) as f64) {
                break;
            }
            n += skip as u64;
            let k = m + dyadic_exponent(uniform(rng));
            visit(n, dyadic_value(k));
            n += 1;
            if n >= block_end {
                break;
            }
        }
        j += 1;
    }
}

/// Exact draw of `Y = sup_{n≥0} (ψₙ - n)` for i.i.d. dyadic `ψ`.
pub fn sample_dyadic_y<R: Rng + ?Sized>(rng: &mut R) -> f64 {
    let mut y = f64::NEG_INFINITY;
    visit_dyadic_candidates(rng, 1.0, |n, v| y = y.max(v - n as f64));
    y
}

/// Divergence verdict of a truncated-mean curve.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Verdict {
    Converging,
    Growing,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct TruncatedMean {
    pub threshold: f64,
    pub mean: f64,
    pub std_err: f64,
}

/// Truncated means `E[min(-log sin θ, M)]` over a list of thresholds.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AngleTailReport {
    pub thresholds: Vec<f64>,
    pub truncated_means: Vec<TruncatedMean>,
    pub sample_count: u64,
    pub verdict: Verdict,
    /// Increase between the last two truncated means and its paired std error.
    pub last_increase: f64,
    pub last_increase_se: f64,
}

/// Mean and paired standard error of `min(v, hi) - min(v, lo)`.
pub fn truncated_increase(values: &[f64], lo: f64, hi: f64) -> (f64, f64) {
    let acc: MeanAccumulator = values.iter().map(|&v| v.min(hi) - v.min(lo)).collect();
    (acc.mean(), acc.std_err())
}

/// Report from values of `-log sin θ` (which may be `+∞`).
pub fn angle_tail_report_from_neg_log_sin(
    values: &[f64],
    thresholds: &[f64],
) -> Result<AngleTailReport> {
    if values.is_empty() {
        return Err(Error::NoData("angle tail report needs samples".into()));
    }
    if thresholds.is_empty() || thresholds.windows(2).any(|w| !(w[0] < w[1])) {
        return Err(Error::Unsupported(
            "thresholds must be a non-empty increasing list".into(),
        ));
    }
    let truncated_means: Vec<TruncatedMean> = thresholds
        .iter()
        .map(|&m| {
            let acc: MeanAccumulator = values.iter().map(|&v| v.min(m)).collect();
            TruncatedMean {
                threshold: m,
                mean: acc.mean(),
                std_err: acc.std_err(),
            }
        })
        .collect();
    let (last_increase, last_increase_se) = if thresholds.len() >= 2 {
        let k = thresholds.len();
        truncated_increase(values, thresholds[k - 2], thresholds[k - 1])
    } else {
        (0.0, 0.0)
    };
    let verdict = if last_increase <= 2.0 * last_increase_se {
        Verdict::Converging
    } else {
        Verdict::Growing
    };
    Ok(AngleTailReport {
        thresholds: thresholds.to_vec(),
        truncated_means,
        sample_count: values.len() as u64,
        verdict,
        last_increase,
        last_increase_se,
    })
}

/// Report from gap angles in `(0, π/2]`.
pub fn angle_tail_report(samples: &[f64], thresholds: &[f64]) -> Result<AngleTailReport> {
    let values: Vec<f64> = samples.iter().map(|t| -t.sin().ln()).collect();
    angle_tail_report_from_neg_log_sin(&values, thresholds)
}

/// How angle samples were produced.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "method", rename_all = "snake_case")]
pub enum AngleMethod {
    /// Log-domain `X` series of a triangular cocycle.
    TriangularSeries,
    /// Backward/forward singular-direction estimators at the given depth.
    MatrixEstimator { depth: usize },
}

/// `count` independent draws of `-log sin ∠(E₁(ω), E₂(ω))`, one fresh
/// orbit per draw.
pub fn angle_samples(
    nu: &MatrixDistribution,
    count: usize,
    depth: Option<usize>,
    seed: u64,
) -> Result<(Vec<f64>, AngleMethod)> {
    nu.validate()?;
    if let MatrixDistribution::Triangular { phi, psi } = nu {
        if phi.mean() > 0.0 {
            let max_depth = depth.unwrap_or(4096);
            let values = (0..count)
                .into_par_iter()
                .map(|s| {
                    let mut rng = rng_from_seed(derive_seed(seed, s as u64));
                    neg_log_sin_from_log_cot(sample_triangular_log_x(phi, psi, max_depth, &mut rng))
                })
                .collect();
            return Ok((values, AngleMethod::TriangularSeries));
        }
    }
    let depth = match depth {
        Some(d) => d,
        None => {
            let pilot = sample_onestep(nu, 10_000, derive_seed(seed, u64::MAX))?;
            let (l1, l2) = lyapunov_estimates(&pilot);
            depth_for_gap(l1 - l2)
        }
    };
    let values = (0..count)
        .into_par_iter()
        .map(|s| -> Result<f64> {
            let w = sample_onestep(nu, depth, derive_seed(seed, s as u64))?;
            let e1 = estimate_e1_backward(&w, depth)?;
            let e2 = estimate_e2_forward(&w, depth)?;
            Ok(-line_angle(e1, e2).sin().ln())
        })
        .collect::<Result<Vec<f64>>>()?;
    Ok((values, AngleMethod::MatrixEstimator { depth }))
}

/// `(S/(1+S), 1 - Π(1-aₙ), S)` with `S = Σaₙ`.
pub fn weierstrass_bounds(a: &[f64]) -> Result<(f64, f64, f64)> {
    let mut s = 0.0;
    let mut prod = 1.0;
    for (index, &value) in a.iter().enumerate() {
        if !(0.0..=1.0).contains(&value) {
            return Err(Error::BadTerm { index, value });
        }
        s += value;
        prod *= 1.0 - value;
    }
    Ok((s / (1.0 + s), 1.0 - prod, s))
}

/// `sup_{n≥0} (ψₙ - n)` from `psi_vals[n] = ψ(ω_{-n-1})`, certified by the
/// upper bound: evaluation stops at the first `n` with `bound - n < current`.
pub fn y_supremum(psi_vals: &[f64], psi_upper_bound: f64) -> Result<f64> {
    let mut cur = f64::NEG_INFINITY;
    for n in 0.. {
        if psi_upper_bound - (n as f64) < cur {
            return Ok(cur);
        }
        match psi_vals.get(n) {
            Some(&v) => cur = cur.max(v - n as f64),
            None => {
                let need = if cur.is_finite() {
                    (psi_upper_bound - cur).floor().max(0.0) as usize + 1
                } else {
                    n + 1
                };
                return Err(Error::NeedMoreSamples {
                    required: need.max(n + 1),
                });
            }
        }
    }
    unreachable!()
}

/// Exact law of `Y = sup_{n≥0}(ψₙ - n)` for i.i.d. nonnegative `ψ`:
/// `bₖ = P(Y ≥ k) = 1 - Π_{j≥k}(1 - P(ψ ≥ j))`.
#[derive(Clone, Debug, PartialEq)]
pub struct YTail {
    /// `b_k` for `k = 1, 2, …, b.len()`.
    pub b: Vec<f64>,
    /// Certified half-width of each `b_k`.
    pub b_err: Vec<f64>,
    /// `E[Y]`, or `None` when it is infinite.
    pub expectation: Option<f64>,
    law: YLaw,
}

#[derive(Clone, Debug, PartialEq)]
enum YLaw {
    Atoms(Vec<Atom>),
    Dyadic,
}

const DYADIC_BLOCKS: i32 = 62;

// log Π_{j≥k} (1 - a_j) for the dyadic law, k ≥ 2; a_j = 4^-m on (2^(m-1), 2^m].
fn dyadic_log_suffix_product(k: u64) -> f64 {
    let m = 64 - (k - 1).leading_zeros() as i32; // ceil(log2 k)
    let in_block = ((1u64 << m) - k + 1) as f64;
    let mut acc = in_block * (-0.25f64.powi(m)).ln_1p();
    for mm in (m + 1)..DYADIC_BLOCKS {
        acc += 2f64.powi(mm - 1) * (-0.25f64.powi(mm)).ln_1p();
    }
    acc
}

impl YTail {
    /// `P(Y ≥ t)`.
    pub fn tail_prob(&self, t: f64) -> f64 {
        if t <= 0.0 {
            return 1.0;
        }
        match &self.law {
            YLaw::Atoms(atoms) => {
                let max = atoms.iter().map(|a| a.value).fold(0.0, f64::max);
                let mut log_p = 0.0;
                let mut n = 0.0;
                while n + t <= max {
                    let a: f64 = atoms
                        .iter()
                        .filter(|a| a.value >= n + t)
                        .map(|a| a.weight)
                        .sum();
                    log_p += (-a).ln_1p();
                    n += 1.0;
                }
                -log_p.exp_m1()
            }
            YLaw::Dyadic => {
                // Y is integer valued
                let k = t.ceil() as u64;
                if k <= 1 {
                    1.0
                } else {
                    -dyadic_log_suffix_product(k).exp_m1()
                }
            }
        }
    }

    /// `E[min(Y, M)]` with its certified error.
    pub fn truncated_mean(&self, m: f64) -> (f64, f64) {
        if m <= 0.0 {
            return (0.0, 0.0);
        }
        match &self.law {
            YLaw::Atoms(atoms) => {
                let mut cuts = vec![0.0, m];
                for a in atoms {
                    let mut n = 0.0;
                    while a.value - n > 0.0 {
                        if a.value - n < m {
                            cuts.push(a.value - n);
                        }
                        n += 1.0;
                    }
                }
                cuts.sort_by(f64::total_cmp);
                cuts.dedup();
                let integral = cuts
                    .windows(2)
                    .map(|w| (w[1] - w[0]) * self.tail_prob(0.5 * (w[0] + w[1])))
                    .sum();
                (integral, 0.0)
            }
            YLaw::Dyadic => {
                let kmax = m.floor() as u64;
                let mut sum = 0.0;
                for k in 1..=kmax {
                    sum += self.tail_prob(k as f64);
                }
                // the frac part of M contributes (M - ⌊M⌋)·P(Y ≥ ⌊M⌋ + 1)
                sum += (m - kmax as f64) * self.tail_prob(kmax as f64 + 1.0);
                let err = m * 2f64.powi(-DYADIC_BLOCKS);
                (sum, err)
            }
        }
    }
}

/// Exact `Y`-tail for atomic or dyadic `ψ`.
pub fn exact_y_tail(psi: &ScalarDist) -> Result<YTail> {
    psi.validate()?;
    match psi {
        ScalarDist::Atoms { atoms } => {
            if atoms.iter().any(|a| a.value < 0.0 && a.weight > 0.0) {
                return Err(Error::Unsupported("ψ must be nonnegative".into()));
            }
            let live: Vec<Atom> = atoms.iter().copied().filter(|a| a.weight > 0.0).collect();
            let max = live.iter().map(|a| a.value).fold(0.0, f64::max);
            let mut tail = YTail {
                b: Vec::new(),
                b_err: Vec::new(),
                expectation: None,
                law: YLaw::Atoms(live),
            };
            let kmax = max.ceil() as usize;
            tail.b = (1..=kmax).map(|k| tail.tail_prob(k as f64)).collect();
            tail.b_err = vec![0.0; kmax];
            tail.expectation = Some(tail.truncated_mean(max.max(1e-300)).0);
            Ok(tail)
        }
        ScalarDist::Dyadic => {
            let mut tail = YTail {
                b: Vec::new(),
                b_err: Vec::new(),
                expectation: None,
                law: YLaw::Dyadic,
            };
            // Σ j·a_j diverges (each dyadic block contributes ≈ 3/8), so E[Y] = ∞.
            let kmax = 1 << 12;
            tail.b = (1..=kmax).map(|k| tail.tail_prob(k as f64)).collect();
            tail.b_err = vec![2f64.powi(-DYADIC_BLOCKS); kmax];
            Ok(tail)
        }
        _ => Err(Error::Unsupported(
            "exact Y tail needs an atomic or dyadic ψ".into(),
        )),
    }
}

/// The dyadic law `P(ψ = 2ᵏ) = (3/4)·4⁻ᵏ`: integrable, not square integrable.
pub fn counterexample_psi() -> ScalarDist {
    ScalarDist::Dyadic
}

/// `[[e⁻¹, e^ψ], [0, 1]]` with `ψ ~ psi`.
pub fn build_counterexample_cocycle(psi: ScalarDist) -> Result<MatrixDistribution> {
    psi.validate()?;
    if psi.lower_bound().is_none_or(|lo| lo < 0.0) {
        return Err(Error::InvalidDistribution("ψ must be nonnegative".into()));
    }
    if !psi.mean().is_finite() {
        return Err(Error::InvalidDistribution(
            "ψ must have a finite mean".into(),
        ));
    }
    Ok(MatrixDistribution::Triangular {
        phi: ScalarDist::constant(1.0),
        psi,
    })
}

/// Horizon-doubling estimate of `E[sup_{n ≤ H} Zₙ]` for `Zₙ = 2c·n - Σφ`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct DriftReport {
    pub drift_c: f64,
    pub horizon: u64,
    pub trials: u64,
    pub mean: f64,
    pub std_err: f64,
    pub mean_double: f64,
    pub std_err_double: f64,
    /// Paired difference between the two horizons.
    pub mean_diff: f64,
    pub diff_se: f64,
    pub stabilized: bool,
}

/// `c = E[φ]/3`.
pub fn default_drift(phi: &ScalarDist) -> f64 {
    phi.mean() / 3.0
}

pub fn negative_drift_supremum(
    phi: &ScalarDist,
    drift_c: f64,
    horizon: usize,
    trials: usize,
    seed: u64,
) -> Result<DriftReport> {
    phi.validate()?;
    let mean_phi = phi.mean();
    if !(drift_c > 0.0) {
        return Err(Error::InvalidDistribution(format!(
            "drift constant must be positive, got {drift_c}"
        )));
    }
    if !(2.0 * drift_c < mean_phi) {
        return Err(Error::NonNegativeDrift {
            two_c: 2.0 * drift_c,
            mean_phi,
        });
    }
    if trials == 0 || horizon == 0 {
        return Err(Error::NoData(
            "drift supremum needs trials and a horizon".into(),
        ));
    }
    let step = 2.0 * drift_c;
    let pairs: Vec<(f64, f64)> = (0..trials)
        .into_par_iter()
        .map(|t| {
            let mut rng = rng_from_seed(derive_seed(seed, t as u64));
            let mut z = 0.0f64;
            let mut sup = 0.0f64;
            let mut sup_h = 0.0;
            for n in 1..=2 * horizon {
                z += step - phi.sample(&mut rng);
                sup = sup.max(z);
                if n == horizon {
                    sup_h = sup;
                }
            }
            (sup_h, sup)
        })
        .collect();
    let h: MeanAccumulator = pairs.iter().map(|p| p.0).collect();
    let h2: MeanAccumulator = pairs.iter().map(|p| p.1).collect();
    let d: MeanAccumulator = pairs.iter().map(|p| p.1 - p.0).collect();
    Ok(DriftReport {
        drift_c,
        horizon: horizon as u64,
        trials: trials as u64,
        mean: h.mean(),
        std_err: h.std_err(),
        mean_double: h2.mean(),
        std_err_double: h2.std_err(),
        mean_diff: d.mean(),
        diff_se: d.std_err(),
        stabilized: d.mean() <= 3.0 * d.std_err(),
    })
}

/// Running check of `|log sin∠(g·x₁, g·x₂) − log sin∠(x₁, x₂)| ≤ log‖g‖ + log‖g⁻¹‖`
/// along a window.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct SlackReport {
    /// Smallest `rhs - lhs` seen.
    pub min_slack: f64,
    pub checked: u64,
    /// Steps whose factor is too ill-conditioned to evaluate in `f64`.
    pub skipped: u64,
}

pub fn parallelogram_slack<P>(window: &OrbitWindow, mut pair_at: P) -> SlackReport
where
    P: FnMut(i64) -> (ProjLine, ProjLine),
{
    let mut report = SlackReport {
        min_slack: f64::INFINITY,
        checked: 0,
        skipped: 0,
    };
    for i in window.start()..window.end() {
        let (x1, x2) = pair_at(i);
        let before = line_angle(x1, x2);
        let f = window.factor(i);
        // sin∠(g·u₁, g·u₂) = |det g|·sin∠(u₁, u₂)/(|g·u₁|·|g·u₂|) for unit u; this
        // stays accurate when the image lines are too close to resolve as angles
        let norm = |x: ProjLine| {
            let v = f.mat.apply(x.direction());
            v[0].hypot(v[1]).ln() + f.log_scale
        };
        let (n1, n2) = (norm(x1), norm(x2));
        let rhs = if f.log_scale == 0.0 {
            svd2(&f.mat).map(|s| s.s1.ln() - s.s2.ln()).ok()
        } else {
            Some(2.0 * f.log_top_singular() - window.log_abs_det(i))
        };
        match rhs {
            Some(rhs) if before > 0.0 && n1.is_finite() && n2.is_finite() => {
                let lhs = (window.log_abs_det(i) - n1 - n2).abs();
                report.min_slack = report.min_slack.min(rhs - lhs);
                report.checked += 1;
            }
            _ => report.skipped += 1,
        }
    }
    report
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::cocycle::MatrixAtom;
    use crate::geometry::Mat2;
    use approx::assert_abs_diff_eq;
    use proptest::prelude::*;
    use std::f64::consts::{FRAC_PI_2, FRAC_PI_6, LN_2};

    const X_GEOMETRIC: f64 = 1.581_976_706_869_326_5; // 1/(1 - e^-1)

    fn constant_window(g: Mat2, half: usize) -> OrbitWindow {
        sample_onestep(&MatrixDistribution::delta(g), half, 0).unwrap()
    }

    #[test]
    fn lyapunov_of_constant_cocycles() {
        let (l1, l2) = lyapunov_estimates(&constant_window(Mat2::diag(2.0, 0.5), 1000));
        assert_abs_diff_eq!(l1, LN_2, epsilon = 1e-12);
        assert_abs_diff_eq!(l2, -LN_2, epsilon = 1e-12);
        let (l1, l2) = lyapunov_estimates(&constant_window(Mat2::rotation(0.7), 1000));
        assert_abs_diff_eq!(l1, 0.0, epsilon = 1e-12);
        assert_abs_diff_eq!(l2, 0.0, epsilon = 1e-12);
    }

    #[test]
    fn directions_of_diagonal_cocycle() {
        let w = constant_window(Mat2::diag(2.0, 0.5), 100);
        assert_abs_diff_eq!(
            estimate_e2_forward(&w, 40).unwrap().alpha(),
            FRAC_PI_2,
            epsilon = 1e-12
        );
        assert_abs_diff_eq!(
            estimate_e1_backward(&w, 40).unwrap().alpha(),
            0.0,
            epsilon = 1e-12
        );
        assert!(matches!(
            estimate_e2_forward(&w, 101),
            Err(Error::WindowExhausted { .. })
        ));
    }

    fn triangular_window(a: f64, b: f64, half: usize) -> OrbitWindow {
        constant_window(Mat2::new(a, b, 0.0, 1.0), half)
    }

    #[test]
    fn triangular_directions() {
        let w = triangular_window((-1.0f64).exp(), 1.0, 100);
        let e2 = estimate_e2_forward(&w, 60).unwrap();
        assert!(line_angle(e2, ProjLine::new(0.0)) < 1e-6);
        let e1 = estimate_e1_backward(&w, 60).unwrap();
        let x_hat = e1.alpha().cos() / e1.alpha().sin();
        assert_abs_diff_eq!(x_hat, X_GEOMETRIC, epsilon = 1e-6);

        let w0 = triangular_window((-1.0f64).exp(), 0.0, 100);
        let e1 = estimate_e1_backward(&w0, 60).unwrap();
        assert_abs_diff_eq!(e1.alpha(), FRAC_PI_2, epsilon = 1e-12);
    }

    #[test]
    fn e1_matches_x_series_on_random_triangular_windows() {
        let nu = MatrixDistribution::Triangular {
            phi: ScalarDist::Uniform { lo: 0.5, hi: 1.5 },
            psi: ScalarDist::Uniform { lo: -1.0, hi: 1.0 },
        };
        for s in 0..20 {
            let w = sample_onestep(&nu, 80, s).unwrap();
            let (mut a, mut b) = (Vec::new(), Vec::new());
            for i in (w.start()..0).rev() {
                let m = w.factor(i).to_mat();
                a.push(m.a11 / m.a22);
                b.push(m.a12 / m.a22);
            }
            let x = triangular_x(&a, &b, 1.0f64.exp(), 1e-9).unwrap();
            let e1 = estimate_e1_backward(&w, 60).unwrap();
            let target = ProjLine::from_vector([x, 1.0]);
            assert!(line_angle(e1, target) < 1e-5, "seed {s}");
        }
    }

    #[test]
    fn triangular_x_examples() {
        assert_eq!(
            triangular_x(&[0.5; 10], &[0.0; 10], 1.0, 1e-12).unwrap(),
            0.0
        );
        let x = triangular_x(&[0.5; 10], &[2.0, 4.0, 0.0, 0.0, 0.0], 4.0, 1e-12).unwrap();
        assert_abs_diff_eq!(x, 4.0);
        let e = (-1.0f64).exp();
        let x = triangular_x(&[e; 100], &[1.0; 100], 1.0, 1e-12).unwrap();
        assert_abs_diff_eq!(x, X_GEOMETRIC, epsilon = 1e-11);
        assert!(matches!(
            triangular_x(&[3.0; 100], &[1.0; 100], 1.0, 1e-12),
            Err(Error::SeriesDiverging { .. })
        ));
    }

    #[test]
    fn log_domain_series_matches_plain_sum() {
        let phi = ScalarDist::constant(1.0);
        let psi = ScalarDist::constant(0.0);
        let mut rng = rng_from_seed(0);
        let lx = sample_triangular_log_x(&phi, &psi, 4096, &mut rng);
        assert_abs_diff_eq!(lx.exp(), X_GEOMETRIC, epsilon = 1e-12);
        // cot θ = X
        let theta = (1.0 / X_GEOMETRIC).atan();
        assert_abs_diff_eq!(
            neg_log_sin_from_log_cot(lx),
            -theta.sin().ln(),
            epsilon = 1e-12
        );
        assert_abs_diff_eq!(neg_log_sin_from_log_cot(800.0), 800.0, epsilon = 1e-12);
        assert_abs_diff_eq!(neg_log_sin_from_log_cot(-800.0), 0.0);
    }

    #[test]
    fn dyadic_skipping_matches_brute_force_in_law() {
        // Compare E[min(log X, 12)] from the skipping sampler against plain
        // 400-term sums; both estimate the same quantity.
        let n = 40_000;
        let skip: MeanAccumulator = (0..n)
            .map(|s| {
                let mut rng = rng_from_seed(derive_seed(1, s));
                sample_triangular_log_x(
                    &ScalarDist::constant(1.0),
                    &ScalarDist::Dyadic,
                    0,
                    &mut rng,
                )
                .min(12.0)
            })
            .collect();
        let plain: MeanAccumulator = (0..n)
            .map(|s| {
                let mut rng = rng_from_seed(derive_seed(2, s));
                let mut lx = f64::NEG_INFINITY;
                for k in 0..400 {
                    let v = ScalarDist::Dyadic.sample(&mut rng);
                    lx = log_add_exp(lx, v - k as f64);
                }
                lx.min(12.0)
            })
            .collect();
        let se = (skip.std_err().powi(2) + plain.std_err().powi(2)).sqrt();
        assert!((skip.mean() - plain.mean()).abs() < 4.0 * se);
    }

    #[test]
    fn angle_tail_constant_samples() {
        let r = angle_tail_report(&[FRAC_PI_2; 10], &[1.0, 2.0, 4.0]).unwrap();
        assert!(r.truncated_means.iter().all(|t| t.mean.abs() < 1e-15));
        assert_eq!(r.verdict, Verdict::Converging);
        let r = angle_tail_report(&[FRAC_PI_6; 10], &[0.5, 1.0, 4.0]).unwrap();
        let means: Vec<f64> = r.truncated_means.iter().map(|t| t.mean).collect();
        assert_abs_diff_eq!(means[0], 0.5, epsilon = 1e-12);
        assert_abs_diff_eq!(means[1], LN_2, epsilon = 1e-12);
        assert_abs_diff_eq!(means[2], LN_2, epsilon = 1e-12);
        assert!(matches!(
            angle_tail_report(&[], &[1.0]),
            Err(Error::NoData(_))
        ));
        assert!(angle_tail_report(&[1.0], &[2.0, 1.0]).is_err());
    }

    #[test]
    fn weierstrass_examples() {
        assert_eq!(weierstrass_bounds(&[0.5, 0.5]).unwrap(), (0.5, 0.75, 1.0));
        assert_eq!(weierstrass_bounds(&[0.0; 5]).unwrap(), (0.0, 0.0, 0.0));
        let (_, v, u) = weierstrass_bounds(&[0.2, 1.0, 0.3]).unwrap();
        assert_eq!(v, 1.0);
        assert!(v <= u);
        assert_eq!(
            weierstrass_bounds(&[0.2, 1.5]).unwrap_err(),
            Error::BadTerm {
                index: 1,
                value: 1.5
            }
        );
    }

    #[test]
    fn y_supremum_examples() {
        assert_eq!(y_supremum(&[3.5, 0.0, 10.0, 0.0, 0.0], 10.0).unwrap(), 8.0);
        assert_eq!(y_supremum(&[0.0, 0.0], 0.0).unwrap(), 0.0);
        assert_eq!(
            y_supremum(&[3.5, 0.0, 0.0], 10.0).unwrap_err(),
            Error::NeedMoreSamples { required: 7 }
        );
    }

    #[test]
    fn exact_y_tail_examples() {
        let t = exact_y_tail(&ScalarDist::constant(0.0)).unwrap();
        assert!(t.b.iter().all(|&b| b == 0.0));
        assert_eq!(t.expectation, Some(0.0));

        let psi = ScalarDist::atoms(&[(0.0, 0.5), (2.0, 0.5)]);
        let t = exact_y_tail(&psi).unwrap();
        assert_abs_diff_eq!(t.b[0], 0.75, epsilon = 1e-15);
        assert_abs_diff_eq!(t.b[1], 0.5, epsilon = 1e-15);
        assert_eq!(t.b.len(), 2);
        assert_abs_diff_eq!(t.tail_prob(3.0), 0.0);
        assert_abs_diff_eq!(t.expectation.unwrap(), 1.25, epsilon = 1e-15);

        let d = exact_y_tail(&counterexample_psi()).unwrap();
        assert!(d.expectation.is_none());
        assert_eq!(d.b[0], 1.0);
        assert!(matches!(
            exact_y_tail(&ScalarDist::Uniform { lo: 0.0, hi: 1.0 }),
            Err(Error::Unsupported(_))
        ));
    }

    #[test]
    fn dyadic_b_k_against_direct_product() {
        // direct product over j < 2^22 plus the Weierstrass tail bound
        let d = exact_y_tail(&ScalarDist::Dyadic).unwrap();
        for k in [2u64, 3, 5, 17, 100] {
            let mut log_p = 0.0;
            for j in k..(1 << 22) {
                log_p += (-ScalarDist::Dyadic.tail_prob(j as f64)).ln_1p();
            }
            let direct = -log_p.exp_m1();
            assert!(
                (d.b[(k - 1) as usize] - direct).abs() < 2.0 * 2f64.powi(-22),
                "k={k}"
            );
        }
    }

    #[test]
    fn dyadic_truncated_means_grow_like_log() {
        let d = exact_y_tail(&ScalarDist::Dyadic).unwrap();
        let m = |x: f64| d.truncated_mean(x).0;
        let steps: Vec<f64> = (2..10)
            .map(|k| m(2f64.powi(k + 1)) - m(2f64.powi(k)))
            .collect();
        // per doubling the increase settles to a positive constant
        for w in steps.windows(2).skip(3) {
            assert!((w[1] / w[0] - 1.0).abs() < 0.15, "{steps:?}");
        }
        assert!(steps.iter().all(|&s| s > 0.1));
    }

    #[test]
    fn non_integer_atoms_layer_cake() {
        // ψ ∈ {0.5, 1.5}: brute-force Y on all 2^6 prefixes is exact since ψ ≤ 1.5.
        let psi = ScalarDist::atoms(&[(0.5, 0.5), (1.5, 0.5)]);
        let t = exact_y_tail(&psi).unwrap();
        let mut expect = 0.0;
        for mask in 0..4u32 {
            let vals: Vec<f64> = (0..2)
                .map(|i| if mask >> i & 1 == 1 { 1.5 } else { 0.5 })
                .collect();
            expect += 0.25 * y_supremum(&[vals[0], vals[1], 0.0, 0.0], 1.5).unwrap();
        }
        assert_abs_diff_eq!(t.expectation.unwrap(), expect, epsilon = 1e-12);
        assert_abs_diff_eq!(
            t.truncated_mean(0.75).0,
            0.75 * 1.0 - 0.25 * 0.5 * 0.0,
            epsilon = 0.25
        );
    }

    #[test]
    fn y_monte_carlo_matches_oracle() {
        let psi = ScalarDist::atoms(&[(0.0, 0.5), (2.0, 0.5)]);
        let oracle = exact_y_tail(&psi).unwrap();
        let ys: Vec<f64> = (0..100_000u64)
            .map(|s| {
                let mut rng = rng_from_seed(derive_seed(5, s));
                let vals: Vec<f64> = (0..3).map(|_| psi.sample(&mut rng)).collect();
                y_supremum(&vals, 2.0).unwrap()
            })
            .collect();
        for m in [1.0, 2.0, 4.0, 8.0] {
            let acc: MeanAccumulator = ys.iter().map(|y| y.min(m)).collect();
            let (exact, _) = oracle.truncated_mean(m);
            assert!(
                (acc.mean() - exact).abs() < 3.0 * acc.std_err().max(1e-12),
                "M={m}"
            );
        }
    }

    #[test]
    fn dyadic_y_sampler_matches_oracle() {
        let oracle = exact_y_tail(&ScalarDist::Dyadic).unwrap();
        let ys: Vec<f64> = (0..100_000u64)
            .map(|s| sample_dyadic_y(&mut rng_from_seed(derive_seed(6, s))))
            .collect();
        for m in [1.0, 2.0, 4.0, 8.0, 64.0] {
            let acc: MeanAccumulator = ys.iter().map(|y| y.min(m)).collect();
            let (exact, err) = oracle.truncated_mean(m);
            assert!(
                (acc.mean() - exact).abs() < 3.0 * acc.std_err() + err,
                "M={m}: {} vs {exact}",
                acc.mean()
            );
        }
    }

    #[test]
    fn counterexample_construction() {
        let nu = build_counterexample_cocycle(ScalarDist::constant(0.0)).unwrap();
        let (vals, method) = angle_samples(&nu, 4, None, 0).unwrap();
        assert_eq!(method, AngleMethod::TriangularSeries);
        let expected = neg_log_sin_from_log_cot(X_GEOMETRIC.ln());
        assert!(vals.iter().all(|v| (v - expected).abs() < 1e-12));
        assert!(build_counterexample_cocycle(ScalarDist::constant(-1.0)).is_err());
        assert!(build_counterexample_cocycle(ScalarDist::Pareto {
            scale: 1.0,
            shape: 0.5
        })
        .is_err());
    }

    #[test]
    fn counterexample_exponents() {
        let nu = build_counterexample_cocycle(counterexample_psi()).unwrap();
        let w = sample_onestep(&nu, 100_000, 3).unwrap();
        let (l1, l2) = lyapunov_estimates(&w);
        assert!(l1.abs() < 0.02 && (l2 + 1.0).abs() < 0.02, "{l1} {l2}");
    }

    #[test]
    fn drift_examples() {
        let c = 1.0;
        let r = negative_drift_supremum(&ScalarDist::constant(3.0 * c), c, 100, 10, 0).unwrap();
        assert_eq!(r.mean, 0.0);
        assert_eq!(r.mean_double, 0.0);
        assert!(r.stabilized);
        assert!(matches!(
            negative_drift_supremum(&ScalarDist::constant(1.0), 0.5, 10, 10, 0),
            Err(Error::NonNegativeDrift { .. })
        ));
        let phi = ScalarDist::atoms(&[(0.0, 0.5), (6.0, 0.5)]);
        assert_abs_diff_eq!(default_drift(&phi), 1.0);
        let r = negative_drift_supremum(&phi, 1.0, 2000, 2000, 1).unwrap();
        assert!(r.stabilized, "{r:?}");
        assert!(r.mean > 0.0);
    }

    #[test]
    fn slack_on_random_orbits() {
        let nu = MatrixDistribution::Atoms {
            atoms: vec![
                MatrixAtom {
                    matrix: Mat2::new(2.0, 1.0, 0.0, 0.5),
                    weight: 0.5,
                },
                MatrixAtom {
                    matrix: Mat2::rotation(1.0),
                    weight: 0.5,
                },
            ],
        };
        let w = sample_onestep(&nu, 500, 4).unwrap();
        let r = parallelogram_slack(&w, |i| {
            (
                ProjLine::new(0.1 * i as f64),
                ProjLine::new(0.37 * i as f64 + 1.0),
            )
        });
        assert!(r.min_slack >= -1e-9);
        assert_eq!(r.checked + r.skipped, 1000);
    }

    proptest! {
        #[test]
        fn weierstrass_sandwich(a in proptest::collection::vec(0.0..=1.0f64, 0..40)) {
            let (lo, v, hi) = weierstrass_bounds(&a).unwrap();
            prop_assert!(lo <= v + 1e-15);
            prop_assert!(v <= hi.min(1.0) + 1e-15);
        }

        #[test]
        fn truncated_means_monotone(v in proptest::collection::vec(0.0..50.0f64, 1..50)) {
            let r = angle_tail_report_from_neg_log_sin(&v, &[1.0, 2.0, 4.0, 8.0, 16.0]).unwrap();
            for w in r.truncated_means.windows(2) {
                prop_assert!(w[0].mean <= w[1].mean + 1e-12);
            }
            for t in &r.truncated_means {
                prop_assert!(t.mean <= t.threshold + 1e-12);
            }
        }
    }
}
