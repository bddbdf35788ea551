//! Scalar laws with inverse-CDF samplers.
//!
//! Each draw consumes exactly one uniform variate, which keeps runs
//! bit-reproducible however the draws are interleaved.

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::rng::uniform;

/// A weighted point mass.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Atom {
    #[serde(with = "crate::dec")]
    pub value: f64,
    #[serde(with = "crate::dec")]
    pub weight: f64,
}

/// A real-valued law, tagged by `kind` in JSON.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase")]
pub enum ScalarDist {
    Atoms {
        atoms: Vec<Atom>,
    },
    Uniform {
        #[serde(with = "crate::dec")]
        lo: f64,
        #[serde(with = "crate::dec")]
        hi: f64,
    },
    Exponential {
        #[serde(with = "crate::dec")]
        rate: f64,
    },
    /// `P(X = 2^k) = (3/4)·4^(-k)` for `k ≥ 0`: mean 3/2, infinite variance.
    Dyadic,
    Pareto {
        #[serde(with = "crate::dec")]
        scale: f64,
        #[serde(with = "crate::dec")]
        shape: f64,
    },
    /// `shift + scale·X` with `X` drawn from `base`.
    Affine {
        base: Box<ScalarDist>,
        #[serde(with = "crate::dec")]
        scale: f64,
        #[serde(with = "crate::dec")]
        shift: f64,
    },
}

const LN_4: f64 = 2.0 * std::f64::consts::LN_2;

impl ScalarDist {
    pub fn constant(value: f64) -> Self {
        ScalarDist::Atoms {
            atoms: vec![Atom { value, weight: 1.0 }],
        }
    }

    pub fn atoms(pairs: &[(f64, f64)]) -> Self {
        ScalarDist::Atoms {
            atoms: pairs
                .iter()
                .map(|&(value, weight)| Atom { value, weight })
                .collect(),
        }
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::InvalidDistribution(m));
        match self {
            ScalarDist::Atoms { atoms } => {
                if atoms.is_empty() {
                    return bad("empty atom list".into());
                }
                let mut total = 0.0;
                for a in atoms {
                    if !a.value.is_finite() {
                        return bad(format!("non-finite atom value {}", a.value));
                    }
                    if !(a.weight >= 0.0) {
                        return bad(format!("negative weight {}", a.weight));
                    }
                    total += a.weight;
                }
                if (total - 1.0).abs() > 1e-12 {
                    return bad(format!("weights sum to {total}, not 1"));
                }
            }
            ScalarDist::Uniform { lo, hi } => {
                if !(lo.is_finite() && hi.is_finite() && lo <= hi) {
                    return bad(format!("uniform bounds [{lo}, {hi}]"));
                }
            }
            ScalarDist::Exponential { rate } => {
                if !(*rate > 0.0 && rate.is_finite()) {
                    return bad(format!("exponential rate {rate}"));
                }
            }
            ScalarDist::Dyadic => {}
            ScalarDist::Pareto { scale, shape } => {
                if !(*scale > 0.0 && *shape > 0.0 && scale.is_finite() && shape.is_finite()) {
                    return bad(format!("pareto scale {scale}, shape {shape}"));
                }
            }
            ScalarDist::Affine { base, scale, shift } => {
                if !(scale.is_finite() && shift.is_finite()) {
                    return bad(format!("affine scale {scale}, shift {shift}"));
                }
                base.validate()?;
            }
        }
        Ok(())
    }

    /// Inverse CDF evaluated at `u ∈ [0, 1)`.
    pub fn quantile(&self, u: f64) -> f64 {
        match self {
            ScalarDist::Atoms { atoms } => {
                let mut acc = 0.0;
                for a in atoms {
                    acc += a.weight;
                    if u < acc {
                        return a.value;
                    }
                }
                // rounding left u above the last partial sum
                atoms
                    .iter()
                    .rev()
                    .find(|a| a.weight > 0.0)
                    .map_or(atoms[0].value, |a| a.value)
            }
            ScalarDist::Uniform { lo, hi } => lo + u * (hi - lo),
            ScalarDist::Exponential { rate } => -(-u).ln_1p() / rate,
            ScalarDist::Dyadic => dyadic_value(dyadic_exponent(u)),
            ScalarDist::Pareto { scale, shape } => scale * (1.0 - u).powf(-1.0 / shape),
            ScalarDist::Affine { base, scale, shift } => shift + scale * base.quantile(u),
        }
    }

    pub fn sample<R: Rng + ?Sized>(&self, rng: &mut R) -> f64 {
        self.quantile(uniform(rng))
    }

    pub fn mean(&self) -> f64 {
        match self {
            ScalarDist::Atoms { atoms } => atoms.iter().map(|a| a.value * a.weight).sum(),
            ScalarDist::Uniform { lo, hi } => 0.5 * (lo + hi),
            ScalarDist::Exponential { rate } => 1.0 / rate,
            ScalarDist::Dyadic => 1.5,
            ScalarDist::Pareto { scale, shape } => {
                if *shape > 1.0 {
                    shape * scale / (shape - 1.0)
                } else {
                    f64::INFINITY
                }
            }
            ScalarDist::Affine { base, scale, shift } => {
                if *scale == 0.0 {
                    *shift
                } else {
                    shift + scale * base.mean()
                }
            }
        }
    }

    /// `E[X²]`, possibly infinite.
    pub fn second_moment(&self) -> f64 {
        match self {
            ScalarDist::Atoms { atoms } => atoms.iter().map(|a| a.value * a.value * a.weight).sum(),
            ScalarDist::Uniform { lo, hi } => (lo * lo + lo * hi + hi * hi) / 3.0,
            ScalarDist::Exponential { rate } => 2.0 / (rate * rate),
            ScalarDist::Dyadic => f64::INFINITY,
            ScalarDist::Pareto { scale, shape } => {
                if *shape > 2.0 {
                    shape * scale * scale / (shape - 2.0)
                } else {
                    f64::INFINITY
                }
            }
            ScalarDist::Affine { base, scale, shift } => {
                if *scale == 0.0 {
                    return shift * shift;
                }
                let m2 = base.second_moment();
                if m2.is_infinite() {
                    return f64::INFINITY;
                }
                scale * scale * m2 + 2.0 * scale * shift * base.mean() + shift * shift
            }
        }
    }

    /// `P(X ≥ t)`.
    pub fn tail_prob(&self, t: f64) -> f64 {
        match self {
            ScalarDist::Atoms { atoms } => atoms
                .iter()
                .filter(|a| a.value >= t)
                .map(|a| a.weight)
                .sum(),
            ScalarDist::Affine { base, scale, shift } => {
                if *scale > 0.0 {
                    base.tail_prob((t - shift) / scale)
                } else if *scale < 0.0 {
                    1.0 - base.prob_gt((t - shift) / scale)
                } else if *shift >= t {
                    1.0
                } else {
                    0.0
                }
            }
            ScalarDist::Dyadic => {
                if t <= 1.0 {
                    1.0
                } else {
                    0.25_f64.powi(dyadic_ceil_log2(t))
                }
            }
            _ => self.prob_gt(t),
        }
    }

    /// `P(X > t)`.
    pub fn prob_gt(&self, t: f64) -> f64 {
        match self {
            ScalarDist::Atoms { atoms } => {
                atoms.iter().filter(|a| a.value > t).map(|a| a.weight).sum()
            }
            ScalarDist::Uniform { lo, hi } => {
                if t < *lo {
                    1.0
                } else if t >= *hi {
                    0.0
                } else {
                    (hi - t) / (hi - lo)
                }
            }
            ScalarDist::Exponential { rate } => (-rate * t.max(0.0)).exp(),
            ScalarDist::Dyadic => {
                if t < 1.0 {
                    1.0
                } else {
                    // X > t iff X ≥ the next power of two strictly above t
                    let k = (t.log2().floor() as i32) + 1;
                    0.25_f64.powi(k)
                }
            }
            ScalarDist::Pareto { scale, shape } => {
                if t < *scale {
                    1.0
                } else {
                    (scale / t).powf(*shape)
                }
            }
            ScalarDist::Affine { base, scale, shift } => {
                if *scale > 0.0 {
                    base.prob_gt((t - shift) / scale)
                } else if *scale < 0.0 {
                    1.0 - base.tail_prob((t - shift) / scale)
                } else if *shift > t {
                    1.0
                } else {
                    0.0
                }
            }
        }
    }

    /// Supremum of the support, when finite.
    pub fn upper_bound(&self) -> Option<f64> {
        match self {
            ScalarDist::Atoms { atoms } => atoms
                .iter()
                .filter(|a| a.weight > 0.0)
                .map(|a| a.value)
                .reduce(f64::max),
            ScalarDist::Uniform { hi, .. } => Some(*hi),
            ScalarDist::Affine { base, scale, shift } => {
                if *scale > 0.0 {
                    base.upper_bound().map(|b| shift + scale * b)
                } else if *scale < 0.0 {
                    base.lower_bound().map(|b| shift + scale * b)
                } else {
                    Some(*shift)
                }
            }
            _ => None,
        }
    }

    /// Infimum of the support, when finite.
    pub fn lower_bound(&self) -> Option<f64> {
        match self {
            ScalarDist::Atoms { atoms } => atoms
                .iter()
                .filter(|a| a.weight > 0.0)
                .map(|a| a.value)
                .reduce(f64::min),
            ScalarDist::Uniform { lo, .. } => Some(*lo),
            ScalarDist::Exponential { .. } => Some(0.0),
            ScalarDist::Dyadic => Some(1.0),
            ScalarDist::Pareto { scale, .. } => Some(*scale),
            ScalarDist::Affine { base, scale, shift } => {
                if *scale > 0.0 {
                    base.lower_bound().map(|b| shift + scale * b)
                } else if *scale < 0.0 {
                    base.upper_bound().map(|b| shift + scale * b)
                } else {
                    Some(*shift)
                }
            }
        }
    }

    /// The single value of a point mass, if this law is one.
    pub fn as_constant(&self) -> Option<f64> {
        match self {
            ScalarDist::Atoms { atoms } => {
                let mut live = atoms.iter().filter(|a| a.weight > 0.0);
                let first = live.next()?.value;
                live.all(|a| a.value == first).then_some(first)
            }
            ScalarDist::Affine { base, scale, shift } => {
                if *scale == 0.0 {
                    Some(*shift)
                } else {
                    base.as_constant().map(|b| shift + scale * b)
                }
            }
            ScalarDist::Uniform { lo, hi } if lo == hi => Some(*lo),
            _ => None,
        }
    }
}

/// Exponent `K` of the dyadic law from one uniform: `P(K ≥ k) = 4^(-k)`.
#[inline]
pub fn dyadic_exponent(u: f64) -> u32 {
    (-(-u).ln_1p() / LN_4).floor() as u32
}

#[inline]
pub fn dyadic_value(k: u32) -> f64 {
    2.0_f64.powi(k as i32)
}

// Smallest integer k with 2^k ≥ t, for t > 1.
fn dyadic_ceil_log2(t: f64) -> i32 {
    let mut k = t.log2().ceil() as i32;
    while k > 0 && 2.0_f64.powi(k - 1) >= t {
        k -= 1;
    }
    while 2.0_f64.powi(k) < t {
        k += 1;
    }
    k
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::rng_from_seed;
    use approx::assert_abs_diff_eq;

    #[test]
    fn dyadic_law_constants() {
        // weights (3/4)·4^-k sum to 1, mean (3/4)·Σ2^-k = 3/2
        let w: f64 = (0..60).map(|k| 0.75 * 0.25_f64.powi(k)).sum();
        assert_abs_diff_eq!(w, 1.0, epsilon = 1e-15);
        let m: f64 = (0..60).map(|k| 0.75 * 0.5_f64.powi(k)).sum();
        assert_abs_diff_eq!(m, ScalarDist::Dyadic.mean(), epsilon = 1e-15);
        // each term of the second moment is (3/4)·4^-k·4^k = 3/4
        for k in 0..10 {
            let term = 0.75 * 0.25_f64.powi(k) * dyadic_value(k as u32).powi(2);
            assert_abs_diff_eq!(term, 0.75, epsilon = 1e-15);
        }
        assert!(ScalarDist::Dyadic.second_moment().is_infinite());
    }

    #[test]
    fn dyadic_tail_probabilities() {
        let d = ScalarDist::Dyadic;
        assert_eq!(d.tail_prob(1.0), 1.0);
        assert_eq!(d.tail_prob(2.0), 0.25);
        assert_eq!(d.tail_prob(3.0), 1.0 / 16.0);
        assert_eq!(d.tail_prob(4.0), 1.0 / 16.0);
        assert_eq!(d.prob_gt(4.0), 1.0 / 64.0);
        assert_eq!(d.prob_gt(0.5), 1.0);
    }

    #[test]
    fn dyadic_sampler_frequencies() {
        let mut rng = rng_from_seed(11);
        let n = 200_000;
        let mut counts = [0usize; 4];
        for _ in 0..n {
            let k = dyadic_exponent(uniform(&mut rng)) as usize;
            if k < 4 {
                counts[k] += 1;
            }
        }
        for (k, &c) in counts.iter().enumerate() {
            let p = 0.75 * 0.25_f64.powi(k as i32);
            let sigma = (p * (1.0 - p) / n as f64).sqrt();
            assert!((c as f64 / n as f64 - p).abs() < 4.0 * sigma, "k={k}");
        }
    }

    #[test]
    fn atom_quantiles() {
        let d = ScalarDist::atoms(&[(0.0, 0.5), (2.0, 0.5)]);
        assert_eq!(d.quantile(0.0), 0.0);
        assert_eq!(d.quantile(0.4999), 0.0);
        assert_eq!(d.quantile(0.5), 2.0);
        assert_eq!(d.quantile(0.999_999), 2.0);
        assert_eq!(d.mean(), 1.0);
        assert_eq!(d.tail_prob(2.0), 0.5);
        assert_eq!(d.prob_gt(2.0), 0.0);
        assert_eq!(d.upper_bound(), Some(2.0));
    }

    #[test]
    fn affine_pareto_moments() {
        let phi = ScalarDist::Affine {
            base: Box::new(ScalarDist::Pareto {
                scale: 1.0,
                shape: 1.5,
            }),
            scale: -1.0,
            shift: 4.0,
        };
        assert_abs_diff_eq!(phi.mean(), 1.0, epsilon = 1e-15);
        assert!(phi.second_moment().is_infinite());
        assert_eq!(phi.upper_bound(), Some(3.0));
        assert_abs_diff_eq!(phi.tail_prob(2.0), 1.0 - 0.5_f64.powf(1.5), epsilon = 1e-15);
    }

    #[test]
    fn validation() {
        assert!(ScalarDist::atoms(&[(0.0, 0.5), (1.0, 0.4)])
            .validate()
            .is_err());
        assert!(ScalarDist::Uniform { lo: 1.0, hi: 0.0 }.validate().is_err());
        assert!(ScalarDist::Exponential { rate: 0.0 }.validate().is_err());
        assert!(ScalarDist::Dyadic.validate().is_ok());
    }

    #[test]
    fn json_shape() {
        let d = ScalarDist::atoms(&[(0.0, 0.5), (2.0, 0.5)]);
        let s = serde_json::to_string(&d).unwrap();
        assert_eq!(
            s,
            r#"{"kind":"atoms","atoms":[{"value":"0.0","weight":"0.5"},{"value":"2.0","weight":"0.5"}]}"#
        );
        let back: ScalarDist = serde_json::from_str(&s).unwrap();
        assert_eq!(back, d);
        let dy: ScalarDist = serde_json::from_str(r#"{"kind":"dyadic"}"#).unwrap();
        assert_eq!(dy, ScalarDist::Dyadic);
    }
}
