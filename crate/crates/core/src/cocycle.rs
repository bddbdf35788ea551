//! Cocycle models and the product machinery `F⁽ⁿ⁾`.
//!
//! Long products are accumulated as a normalized matrix plus a log scale,
//! renormalized every [`RENORM_PERIOD`] factors. Factors themselves may carry
//! a log scale too: the heavy-tailed triangular family has entries like
//! `e^(2^20)` that no `f64` can hold.

use rand::Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::dist::ScalarDist;
use crate::error::{Error, Result};
use crate::geometry::{log_norm_max, top_singular, Mat2};
use crate::rng::{derive_seed, rng_from_seed, MeanAccumulator};

pub const RENORM_PERIOD: usize = 32;

/// The matrix `exp(log_scale)·mat`.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct ScaledMat2 {
    pub mat: Mat2,
    pub log_scale: f64,
}

impl ScaledMat2 {
    pub const IDENTITY: ScaledMat2 = ScaledMat2 {
        mat: Mat2::IDENTITY,
        log_scale: 0.0,
    };

    pub fn new(mat: Mat2, log_scale: f64) -> Self {
        Self { mat, log_scale }
    }

    /// Moves the largest entry magnitude into the log scale.
    pub fn renormalize(&mut self) {
        let m = self.mat.max_abs();
        if m > 0.0 && m.is_finite() {
            self.mat = self.mat.scale(1.0 / m);
            self.log_scale += m.ln();
        }
    }

    /// `self ← factor · self`.
    #[inline]
    pub fn left_mul(&mut self, factor: &ScaledMat2) {
        self.mat = factor.mat * self.mat;
        self.log_scale += factor.log_scale;
    }

    /// Plain matrix; overflows to infinity when the scale is too large.
    pub fn to_mat(&self) -> Mat2 {
        self.mat.scale(self.log_scale.exp())
    }

    /// `log s1` of the represented matrix.
    pub fn log_top_singular(&self) -> f64 {
        self.log_scale + top_singular(&self.mat).0.ln()
    }

    pub fn inverse(&self) -> Result<ScaledMat2> {
        let d = self.mat.det();
        if d == 0.0 || !d.is_finite() {
            return Err(Error::NotInvertible { det: d });
        }
        let adj = Mat2::new(self.mat.a22, -self.mat.a12, -self.mat.a21, self.mat.a11);
        let mut out = ScaledMat2::new(adj.scale(d.signum()), -self.log_scale - d.abs().ln());
        out.renormalize();
        Ok(out)
    }
}

/// Per-factor log scale and exact `log|det|` for windows of scaled factors.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct FactorScale {
    pub log_scale: f64,
    pub log_abs_det: f64,
}

/// A finite two-sided trace of one orbit: `F(Tⁱω)` for `i` in
/// `offset .. offset + len`, with optional prescribed splittings and labels.
#[derive(Clone, Debug, PartialEq)]
pub struct OrbitWindow {
    pub offset: i64,
    pub matrices: Vec<Mat2>,
    pub scales: Option<Vec<FactorScale>>,
    pub prescribed_f: Option<Vec<crate::geometry::SplittingPair>>,
    pub labels: Option<Vec<u32>>,
    pub seed: u64,
}

impl OrbitWindow {
    pub fn new(offset: i64, matrices: Vec<Mat2>, seed: u64) -> Result<Self> {
        if matrices.is_empty() {
            return Err(Error::NoData(
                "orbit window needs at least one matrix".into(),
            ));
        }
        Ok(Self {
            offset,
            matrices,
            scales: None,
            prescribed_f: None,
            labels: None,
            seed,
        })
    }

    fn check_len(&self, len: usize, what: &str) -> Result<()> {
        if len != self.matrices.len() {
            return Err(Error::NoData(format!(
                "{what} has length {len}, window has {}",
                self.matrices.len()
            )));
        }
        Ok(())
    }

    pub fn with_scales(mut self, scales: Vec<FactorScale>) -> Result<Self> {
        self.check_len(scales.len(), "scales")?;
        self.scales = Some(scales);
        Ok(self)
    }

    pub fn with_prescribed(mut self, f: Vec<crate::geometry::SplittingPair>) -> Result<Self> {
        self.check_len(f.len(), "prescribed_f")?;
        self.prescribed_f = Some(f);
        Ok(self)
    }

    pub fn with_labels(mut self, labels: Vec<u32>) -> Result<Self> {
        self.check_len(labels.len(), "labels")?;
        self.labels = Some(labels);
        Ok(self)
    }

    pub fn len(&self) -> usize {
        self.matrices.len()
    }

    pub fn is_empty(&self) -> bool {
        self.matrices.is_empty()
    }

    pub fn start(&self) -> i64 {
        self.offset
    }

    /// One past the last index.
    pub fn end(&self) -> i64 {
        self.offset + self.matrices.len() as i64
    }

    fn slot(&self, index: i64) -> usize {
        (index - self.offset) as usize
    }

    pub fn check_range(&self, start: i64, end: i64) -> Result<()> {
        if start < self.start() || end > self.end() || start > end {
            return Err(Error::WindowExhausted {
                start,
                end,
                window_start: self.start(),
                window_end: self.end(),
            });
        }
        Ok(())
    }

    /// The factor at `index` with its log scale.
    pub fn factor(&self, index: i64) -> ScaledMat2 {
        let k = self.slot(index);
        let log_scale = self.scales.as_ref().map_or(0.0, |s| s[k].log_scale);
        ScaledMat2::new(self.matrices[k], log_scale)
    }

    pub fn log_abs_det(&self, index: i64) -> f64 {
        let k = self.slot(index);
        match &self.scales {
            Some(s) => s[k].log_abs_det,
            None => self.matrices[k].det().abs().ln(),
        }
    }

    pub fn prescribed(&self, index: i64) -> Option<&crate::geometry::SplittingPair> {
        self.prescribed_f.as_ref().map(|f| &f[self.slot(index)])
    }

    pub fn label(&self, index: i64) -> Option<u32> {
        self.labels.as_ref().map(|l| l[self.slot(index)])
    }
}

/// `F⁽ⁿ⁾(T^from ω)` in scaled form; `n < 0` gives the inverse of the forward
/// product starting at `from + n`.
pub fn cocycle_product_scaled(window: &OrbitWindow, from: i64, n: i64) -> Result<ScaledMat2> {
    if n < 0 {
        return cocycle_product_scaled(window, from + n, -n)?.inverse();
    }
    window.check_range(from, from + n)?;
    let mut acc = ScaledMat2::IDENTITY;
    for (step, i) in (from..from + n).enumerate() {
        acc.left_mul(&window.factor(i));
        if (step + 1) % RENORM_PERIOD == 0 {
            acc.renormalize();
        }
    }
    acc.renormalize();
    if n == 0 {
        acc = ScaledMat2::IDENTITY;
    }
    Ok(acc)
}

/// `F⁽ⁿ⁾(T^from ω) = F(T^{from+n-1}ω)···F(T^from ω)`, with `F⁽⁰⁾ = I`.
pub fn cocycle_product(window: &OrbitWindow, from: i64, n: i64) -> Result<Mat2> {
    Ok(cocycle_product_scaled(window, from, n)?.to_mat())
}

/// A weighted matrix atom.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct MatrixAtom {
    pub matrix: Mat2,
    #[serde(with = "crate::dec")]
    pub weight: f64,
}

/// The law ν of one i.i.d. factor.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase")]
pub enum MatrixDistribution {
    Atoms {
        atoms: Vec<MatrixAtom>,
    },
    /// `[[e^(-φ), e^ψ], [0, 1]]` with independent `φ` and `ψ`.
    Triangular {
        phi: ScalarDist,
        psi: ScalarDist,
    },
    /// `R(angle)·diag(e^g, e^(-g))` with independent `angle` and `g`.
    Rotgain {
        angle: ScalarDist,
        log_gain: ScalarDist,
    },
}

/// One sampled factor: the matrix in scaled form and its exact `log|det|`.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Factor {
    pub scaled: ScaledMat2,
    pub log_abs_det: f64,
}

impl MatrixDistribution {
    pub fn from_json(text: &str) -> Result<Self> {
        let nu: MatrixDistribution = serde_json::from_str(text).map_err(|e| {
            Error::InvalidDistribution(format!("bad matrix distribution JSON: {e}"))
        })?;
        nu.validate()?;
        Ok(nu)
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("distribution serializes")
    }

    pub fn delta(g: Mat2) -> Self {
        MatrixDistribution::Atoms {
            atoms: vec![MatrixAtom {
                matrix: g,
                weight: 1.0,
            }],
        }
    }

    pub fn validate(&self) -> Result<()> {
        match self {
            MatrixDistribution::Atoms { atoms } => {
                if atoms.is_empty() {
                    return Err(Error::InvalidDistribution("empty atom list".into()));
                }
                let mut total = 0.0;
                for a in atoms {
                    a.matrix.check_invertible()?;
                    if !(a.weight >= 0.0) {
                        return Err(Error::InvalidDistribution(format!(
                            "negative weight {}",
                            a.weight
                        )));
                    }
                    total += a.weight;
                }
                if (total - 1.0).abs() > 1e-12 {
                    return Err(Error::InvalidDistribution(format!(
                        "weights sum to {total}, not 1"
                    )));
                }
                Ok(())
            }
            MatrixDistribution::Triangular { phi, psi } => {
                phi.validate()?;
                psi.validate()
            }
            MatrixDistribution::Rotgain { angle, log_gain } => {
                angle.validate()?;
                log_gain.validate()
            }
        }
    }

    pub fn sample_factor<R: Rng + ?Sized>(&self, rng: &mut R) -> Factor {
        match self {
            MatrixDistribution::Atoms { atoms } => {
                let u = crate::rng::uniform(rng);
                let mut acc = 0.0;
                let mut pick = atoms.last().expect("validated").matrix;
                for a in atoms {
                    acc += a.weight;
                    if u < acc {
                        pick = a.matrix;
                        break;
                    }
                }
                Factor {
                    scaled: ScaledMat2::new(pick, 0.0),
                    log_abs_det: pick.det().abs().ln(),
                }
            }
            MatrixDistribution::Triangular { phi, psi } => {
                let phi = phi.sample(rng);
                let psi = psi.sample(rng);
                triangular_factor(phi, psi)
            }
            MatrixDistribution::Rotgain { angle, log_gain } => {
                let beta = angle.sample(rng);
                let g = log_gain.sample(rng);
                let m = Mat2::rotation(beta) * Mat2::diag(g.exp(), (-g).exp());
                Factor {
                    scaled: ScaledMat2::new(m, 0.0),
                    log_abs_det: 0.0,
                }
            }
        }
    }

    /// Whether sampled factors can need a log scale.
    pub fn needs_scales(&self) -> bool {
        matches!(self, MatrixDistribution::Triangular { .. })
    }
}

/// `[[e^(-φ), e^ψ], [0, 1]]` normalized so its largest entry is 1.
pub fn triangular_factor(phi: f64, psi: f64) -> Factor {
    let ls = psi.max(-phi).max(0.0);
    Factor {
        scaled: ScaledMat2::new(
            Mat2::new((-phi - ls).exp(), (psi - ls).exp(), 0.0, (-ls).exp()),
            ls,
        ),
        log_abs_det: -phi,
    }
}

/// `log max(‖g‖, ‖g⁻¹‖)` for a factor that may be too large to materialize.
pub fn log_norm_max_factor(f: &Factor) -> f64 {
    if f.scaled.log_scale == 0.0 && f.scaled.mat.is_invertible() {
        if let Ok(v) = log_norm_max(&f.scaled.mat) {
            return v;
        }
    }
    let log_s1 = f.scaled.log_top_singular();
    let log_s2 = f.log_abs_det - log_s1;
    log_s1.max(-log_s2).max(0.0)
}

/// i.i.d. window over `[-half_width, half_width)`, drawn in index order.
pub fn sample_onestep(
    nu: &MatrixDistribution,
    half_width: usize,
    seed: u64,
) -> Result<OrbitWindow> {
    if half_width == 0 {
        return Err(Error::NoData("half_width must be at least 1".into()));
    }
    nu.validate()?;
    let n = 2 * half_width;
    let mut rng = rng_from_seed(seed);
    let mut matrices = Vec::with_capacity(n);
    let mut scales = Vec::with_capacity(if nu.needs_scales() { n } else { 0 });
    for _ in 0..n {
        let f = nu.sample_factor(&mut rng);
        matrices.push(f.scaled.mat);
        if nu.needs_scales() {
            scales.push(FactorScale {
                log_scale: f.scaled.log_scale,
                log_abs_det: f.log_abs_det,
            });
        }
    }
    let window = OrbitWindow::new(-(half_width as i64), matrices, seed)?;
    if nu.needs_scales() {
        window.with_scales(scales)
    } else {
        Ok(window)
    }
}

/// Monte Carlo moment of `log max(‖g‖, ‖g⁻¹‖)`, with the exact value for atoms.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct MomentEstimate {
    pub order: u32,
    pub mean: f64,
    pub std_err: f64,
    pub trials: u64,
    pub exact: Option<f64>,
}

const MOMENT_CHUNK: usize = 4096;

pub fn moment(
    nu: &MatrixDistribution,
    order: u32,
    trials: usize,
    seed: u64,
) -> Result<MomentEstimate> {
    if !(order == 1 || order == 2) {
        return Err(Error::Unsupported(format!("moment order {order}")));
    }
    if trials == 0 {
        return Err(Error::NoData("moment needs at least one trial".into()));
    }
    nu.validate()?;
    let pow = |x: f64| if order == 1 { x } else { x * x };
    let exact = match nu {
        MatrixDistribution::Atoms { atoms } => Some(
            atoms
                .iter()
                .map(|a| a.weight * pow(log_norm_max(&a.matrix).unwrap_or(f64::INFINITY)))
                .sum(),
        ),
        _ => None,
    };
    let chunks = trials.div_ceil(MOMENT_CHUNK);
    let parts: Vec<MeanAccumulator> = (0..chunks)
        .into_par_iter()
        .map(|c| {
            let mut rng = rng_from_seed(derive_seed(seed, c as u64));
            let len = MOMENT_CHUNK.min(trials - c * MOMENT_CHUNK);
            (0..len)
                .map(|_| pow(log_norm_max_factor(&nu.sample_factor(&mut rng))))
                .collect()
        })
        .collect();
    let acc = parts.iter().fold(MeanAccumulator::new(), |a, b| a.merge(b));
    Ok(MomentEstimate {
        order,
        mean: acc.mean(),
        std_err: acc.std_err(),
        trials: trials as u64,
        exact,
    })
}

/// Pearson chi-square test of independence on a contingency table; returns
/// the p-value. Rows or columns with zero total are ignored.
pub fn independence_p_value(table: &[Vec<u64>]) -> f64 {
    use statrs::distribution::{ChiSquared, ContinuousCDF};
    let rows: Vec<&Vec<u64>> = table.iter().filter(|r| r.iter().sum::<u64>() > 0).collect();
    if rows.is_empty() {
        return 1.0;
    }
    let ncols = rows[0].len();
    let col_tot: Vec<u64> = (0..ncols)
        .map(|j| rows.iter().map(|r| r[j]).sum())
        .collect();
    let live: Vec<usize> = (0..ncols).filter(|&j| col_tot[j] > 0).collect();
    let total: u64 = col_tot.iter().sum();
    if rows.len() < 2 || live.len() < 2 {
        return 1.0;
    }
    let mut stat = 0.0;
    for r in &rows {
        let rt: u64 = r.iter().sum();
        for &j in &live {
            let expected = rt as f64 * col_tot[j] as f64 / total as f64;
            let d = r[j] as f64 - expected;
            stat += d * d / expected;
        }
    }
    let dof = ((rows.len() - 1) * (live.len() - 1)) as f64;
    let chi = ChiSquared::new(dof).expect("positive degrees of freedom");
    1.0 - chi.cdf(stat)
}
