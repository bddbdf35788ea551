//! Skyscraper bases realized as stationary renewal chains.
//!
//! A point sits at `(height, level)`; it climbs its tower one level per step
//! and, on leaving the top, lands on the base of a fresh tower whose height
//! is drawn with probability `∝ π_k/k`. Started from height `~ π` and a
//! uniform level, the chain is stationary and the union of towers of height
//! `k` has measure `π_k`.

use std::collections::BTreeMap;
use std::io::Write;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::rng::{rng_from_seed, uniform};

const MASS_TOL: f64 = 1e-12;

/// Tower-measure vector `k ↦ π_k` with cached samplers.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "TowerVectorJson", into = "TowerVectorJson")]
pub struct TowerVector {
    entries: BTreeMap<u32, f64>,
    heights: Vec<u32>,
    // cumulative π_k
    stationary_cdf: Vec<f64>,
    // cumulative π_k/k, normalized
    return_cdf: Vec<f64>,
}

#[derive(Serialize, Deserialize)]
struct TowerVectorJson {
    heights: BTreeMap<u32, crate::dec::Dec>,
}

impl TryFrom<TowerVectorJson> for TowerVector {
    type Error = Error;
    fn try_from(j: TowerVectorJson) -> Result<Self> {
        TowerVector::new(j.heights.into_iter().map(|(k, v)| (k, v.0)))
    }
}

impl From<TowerVector> for TowerVectorJson {
    fn from(t: TowerVector) -> Self {
        TowerVectorJson {
            heights: t
                .entries
                .into_iter()
                .map(|(k, v)| (k, crate::dec::Dec(v)))
                .collect(),
        }
    }
}

pub fn gcd(mut a: u64, mut b: u64) -> u64 {
    while b != 0 {
        (a, b) = (b, a % b);
    }
    a
}

fn cumulative(xs: impl Iterator<Item = f64>) -> Vec<f64> {
    let mut acc = 0.0;
    let mut out: Vec<f64> = xs
        .map(|x| {
            acc += x;
            acc
        })
        .collect();
    let total = acc;
    for c in &mut out {
        *c /= total;
    }
    if let Some(last) = out.last_mut() {
        *last = 1.0;
    }
    out
}

impl TowerVector {
    /// Validates `Σπ = 1`, `π ≥ 0` and `gcd{k : π_k > 0} = 1`. Zero entries are dropped.
    pub fn new(entries: impl IntoIterator<Item = (u32, f64)>) -> Result<Self> {
        let mut map = BTreeMap::new();
        for (k, v) in entries {
            if k == 0 {
                return Err(Error::BadTowerVector("tower heights start at 1".into()));
            }
            if !(v >= 0.0) || !v.is_finite() {
                return Err(Error::BadTowerVector(format!(
                    "π_{k} = {v} is not a finite nonnegative number"
                )));
            }
            if v > 0.0 {
                *map.entry(k).or_insert(0.0) += v;
            }
        }
        if map.is_empty() {
            return Err(Error::BadTowerVector(
                "no tower has positive measure".into(),
            ));
        }
        let total: f64 = map.values().sum();
        if (total - 1.0).abs() > MASS_TOL {
            return Err(Error::BadTowerVector(format!(
                "masses sum to {total}, not 1"
            )));
        }
        let g = map.keys().fold(0u64, |g, &k| gcd(g, k as u64));
        if g != 1 {
            return Err(Error::BadTowerVector(format!(
                "heights share the factor {g}"
            )));
        }
        let heights: Vec<u32> = map.keys().copied().collect();
        let stationary_cdf = cumulative(map.values().copied());
        let return_cdf = cumulative(map.iter().map(|(&k, &v)| v / k as f64));
        Ok(TowerVector {
            entries: map,
            heights,
            stationary_cdf,
            return_cdf,
        })
    }

    pub fn from_json(text: &str) -> Result<Self> {
        serde_json::from_str(text).map_err(|e| Error::BadTowerVector(e.to_string()))
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("tower vector serializes")
    }

    pub fn entries(&self) -> &BTreeMap<u32, f64> {
        &self.entries
    }

    pub fn get(&self, k: u32) -> f64 {
        self.entries.get(&k).copied().unwrap_or(0.0)
    }

    pub fn heights(&self) -> &[u32] {
        &self.heights
    }

    /// Mean return time to the base, `1/μ(B) = 1/Σ π_k/k`.
    pub fn mean_return_time(&self) -> f64 {
        1.0 / self
            .entries
            .iter()
            .map(|(&k, &v)| v / k as f64)
            .sum::<f64>()
    }

    fn pick(&self, cdf: &[f64], u: f64) -> u32 {
        let i = cdf.partition_point(|&c| c <= u).min(cdf.len() - 1);
        self.heights[i]
    }

    /// Height drawn with probability `π_k`.
    pub fn sample_stationary_height<R: Rng + ?Sized>(&self, rng: &mut R) -> u32 {
        self.pick(&self.stationary_cdf, uniform(rng))
    }

    /// Height drawn with probability `∝ π_k/k`.
    pub fn sample_return_height<R: Rng + ?Sized>(&self, rng: &mut R) -> u32 {
        self.pick(&self.return_cdf, uniform(rng))
    }
}

/// Tower coordinates of a point: height `k` and level `i ∈ [0, k)`.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct SkyscraperState {
    pub height: u32,
    pub level: u32,
}

impl SkyscraperState {
    pub fn new(height: u32, level: u32) -> Self {
        assert!(
            level < height,
            "level {level} outside tower of height {height}"
        );
        SkyscraperState { height, level }
    }

    pub fn at_base(&self) -> bool {
        self.level == 0
    }
}

/// `μ(B_k) = π_k/k`.
pub fn kac_base_measures(pi: &TowerVector) -> BTreeMap<u32, f64> {
    pi.entries
        .iter()
        .map(|(&k, &v)| (k, v / k as f64))
        .collect()
}

pub fn renewal_start_stationary<R: Rng + ?Sized>(pi: &TowerVector, rng: &mut R) -> SkyscraperState {
    let height = pi.sample_stationary_height(rng);
    let level = ((uniform(rng) * height as f64) as u32).min(height - 1);
    SkyscraperState { height, level }
}

pub fn renewal_start_stationary_seeded(pi: &TowerVector, seed: u64) -> SkyscraperState {
    renewal_start_stationary(pi, &mut rng_from_seed(seed))
}

pub fn renewal_step<R: Rng + ?Sized>(
    state: SkyscraperState,
    pi: &TowerVector,
    rng: &mut R,
) -> SkyscraperState {
    if state.level + 1 < state.height {
        SkyscraperState {
            height: state.height,
            level: state.level + 1,
        }
    } else {
        SkyscraperState {
            height: pi.sample_return_height(rng),
            level: 0,
        }
    }
}

/// `steps + 1` states of a stationary trajectory.
pub fn renewal_trajectory(pi: &TowerVector, steps: usize, seed: u64) -> Vec<SkyscraperState> {
    let mut rng = rng_from_seed(seed);
    let mut s = renewal_start_stationary(pi, &mut rng);
    let mut out = Vec::with_capacity(steps + 1);
    out.push(s);
    for _ in 0..steps {
        s = renewal_step(s, pi, &mut rng);
        out.push(s);
    }
    out
}

/// Heights allowed in labeled skyscrapers: 1, 4, 6, 8, …
pub fn is_label_height(k: u32) -> bool {
    k == 1 || (k >= 4 && k.is_multiple_of(2))
}

/// Distance to the nearer end of the tower, `min(i, k-1-i)`.
pub fn label_of(state: SkyscraperState) -> Result<u32> {
    if !is_label_height(state.height) {
        return Err(Error::BadHeightForLabels {
            height: state.height,
        });
    }
    Ok(state.level.min(state.height - 1 - state.level))
}

fn check_p(p: &[f64]) -> Result<()> {
    if p.is_empty() {
        return Err(Error::BadTowerVector("empty p sequence".into()));
    }
    for (i, &v) in p.iter().enumerate() {
        if !(v > 0.0) || !v.is_finite() {
            return Err(Error::BadTowerVector(format!(
                "p_{i} = {v} is not positive"
            )));
        }
    }
    for (i, w) in p.windows(2).enumerate() {
        if !(w[1] < w[0]) {
            return Err(Error::NeedStrictDecrease {
                index: i + 1,
                prev: w[0],
                next: w[1],
            });
        }
    }
    let total: f64 = p.iter().sum();
    if (total - 1.0).abs() > 1e-9 {
        return Err(Error::BadTowerVector(format!("p sums to {total}, not 1")));
    }
    Ok(())
}

/// Finite `p` with `p_N = 0` past its end. The rounding residual `1 - Σp`
/// goes to `p₀`, which keeps the sequence strictly decreasing.
fn normalized_p(p: &[f64]) -> Result<Vec<f64>> {
    check_p(p)?;
    let mut q = p.to_vec();
    let total: f64 = q.iter().sum();
    q[0] += 1.0 - total;
    Ok(q)
}

/// `π₁ = p₀ - p₁`, `π_{2n+2} = (n+1)(pₙ - p_{n+1})` for `n ≥ 1`.
pub fn bounded_tower_vector(p: &[f64]) -> Result<TowerVector> {
    let q = normalized_p(p)?;
    let at = |n: usize| q.get(n).copied().unwrap_or(0.0);
    let mut entries = vec![(1u32, at(0) - at(1))];
    for n in 1..q.len() {
        entries.push((2 * n as u32 + 2, (n + 1) as f64 * (at(n) - at(n + 1))));
    }
    // telescoping leaves rounding of order 1e-16 per term
    let total: f64 = entries.iter().map(|e| e.1).sum();
    entries[0].1 += 1.0 - total;
    TowerVector::new(entries)
}

/// `μ(L_j)` summed tower by tower: a tower of height `2n+2` has two levels
/// carrying each label `0..=n`, each of measure `π/(2n+2)`.
pub fn label_measures(p: &[f64]) -> Result<Vec<f64>> {
    let pi = bounded_tower_vector(p)?;
    let n_max = p.len() - 1;
    let mut mu = vec![0.0; n_max + 1];
    for (&k, &v) in pi.entries() {
        let per_level = v / k as f64;
        for level in 0..k {
            let l = label_of(SkyscraperState { height: k, level })? as usize;
            mu[l] += per_level;
        }
    }
    Ok(mu)
}

/// Geometric `pₙ = (1-r)·rⁿ`, truncated once the tail is below `1e-12`.
pub fn geometric_p(ratio: f64) -> Vec<f64> {
    assert!(ratio > 0.0 && ratio < 1.0);
    let mut p = Vec::new();
    let mut tail = 1.0;
    while tail >= MASS_TOL {
        let v = tail * (1.0 - ratio);
        p.push(v);
        tail -= v;
    }
    p
}

/// `{"p": [...]}`.
pub fn p_from_json(text: &str) -> Result<Vec<f64>> {
    #[derive(Deserialize)]
    struct P {
        p: Vec<crate::dec::Dec>,
    }
    let parsed: P = serde_json::from_str(text).map_err(|e| Error::BadTowerVector(e.to_string()))?;
    Ok(parsed.p.into_iter().map(|d| d.0).collect())
}

/// A strictly decreasing refinement of a weight list.
#[derive(Clone, Debug, PartialEq)]
pub struct Refinement {
    pub weights: Vec<f64>,
    /// `source[i]`: index of the input weight that piece `i` came from.
    pub source: Vec<usize>,
}

/// Walks the list and splits any weight `p` not below its predecessor's last
/// piece `w` into `k` nearly equal parts `∝ (m+k-1, …, m+1, m)` with
/// `m = k(k-1)`, taking `k ≥ 2` minimal with the largest part below `w`.
/// Parts within a factor `1 + 1/k` of each other keep the smallest piece
/// close to `p/k`, so repeated splits grow the list only linearly.
/// Zero weights are dropped.
pub fn refine_weights(p: &[f64]) -> Refinement {
    let mut weights = Vec::new();
    let mut source = Vec::new();
    let mut prev = f64::INFINITY;
    for (n, &w) in p.iter().enumerate() {
        if !(w > 0.0) {
            continue;
        }
        if w < prev {
            weights.push(w);
            source.push(n);
            prev = w;
            continue;
        }
        let parts = |k: u64| {
            let m = k * (k - 1);
            let total = (k * m + k * (k - 1) / 2) as f64;
            (m, total)
        };
        let mut k = 2u64;
        loop {
            let (m, total) = parts(k);
            if w * (m + k - 1) as f64 / total < prev {
                break;
            }
            k += 1;
        }
        let (m, total) = parts(k);
        for j in (m..m + k).rev() {
            weights.push(w * j as f64 / total);
            source.push(n);
        }
        prev = *weights.last().expect("k ≥ 2 pieces");
    }
    Refinement { weights, source }
}

/// Heights for the low-cost skyscraper.
#[derive(Clone, Debug, PartialEq)]
pub struct LowcostTowers {
    /// Strictly increasing heights.
    pub heights: Vec<u32>,
    /// `piece[i]`: which input piece the tower of `heights[i]` serves.
    pub piece: Vec<usize>,
    pub pi: TowerVector,
}

/// Minimal strictly increasing `kₙ` with `Cₙ/kₙ < ε/2`. When the heights
/// share a factor, a companion tower of height `k_last + 1` takes half of
/// the last piece's mass.
pub fn lowcost_heights(costs: &[f64], p: &[f64], epsilon: f64) -> Result<LowcostTowers> {
    if !(epsilon > 0.0) {
        return Err(Error::BadTowerVector(format!(
            "epsilon must be positive, got {epsilon}"
        )));
    }
    if costs.len() != p.len() || costs.is_empty() {
        return Err(Error::BadTowerVector("need one cost cap per piece".into()));
    }
    let mut heights: Vec<u32> = Vec::with_capacity(costs.len() + 1);
    for &c in costs {
        if !(c >= 0.0) || !c.is_finite() {
            return Err(Error::BadTowerVector(format!(
                "cost cap {c} must be finite and nonnegative"
            )));
        }
        let min_k = (2.0 * c / epsilon).floor() as u64 + 1;
        let k = heights.last().map_or(1, |&h| h as u64 + 1).max(min_k);
        heights.push(
            u32::try_from(k).map_err(|_| Error::BadTowerVector(format!("height {k} too large")))?,
        );
    }
    let mut piece: Vec<usize> = (0..p.len()).collect();
    let mut masses = p.to_vec();
    let g = heights.iter().fold(0u64, |g, &k| gcd(g, k as u64));
    if g != 1 {
        let last = *heights.last().expect("nonempty");
        heights.push(last + 1);
        piece.push(p.len() - 1);
        let half = masses[p.len() - 1] / 2.0;
        masses[p.len() - 1] = half;
        masses.push(half);
    }
    let pi = TowerVector::new(heights.iter().copied().zip(masses))?;
    Ok(LowcostTowers { heights, piece, pi })
}

/// CSV with columns `step,height,level,label`; `label` is empty for
/// heights that carry no label.
pub fn write_trajectory_csv<W: Write>(out: W, states: &[SkyscraperState]) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record(["step", "height", "level", "label"])?;
    for (step, s) in states.iter().enumerate() {
        let label = label_of(*s).map(|l| l.to_string()).unwrap_or_default();
        w.write_record([
            step.to_string(),
            s.height.to_string(),
            s.level.to_string(),
            label,
        ])?;
    }
    w.flush()?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;
    use proptest::prelude::*;
    use std::collections::HashMap;

    fn tv(pairs: &[(u32, f64)]) -> TowerVector {
        TowerVector::new(pairs.iter().copied()).unwrap()
    }

    #[test]
    fn kac_examples() {
        let m = kac_base_measures(&tv(&[(1, 0.5), (2, 0.5)]));
        assert_eq!(m[&1], 0.5);
        assert_eq!(m[&2], 0.25);
        let m = kac_base_measures(&tv(&[(2, 0.5), (3, 0.5)]));
        assert_abs_diff_eq!(m[&3], 1.0 / 6.0);
        let total: f64 = m.iter().map(|(&k, &v)| k as f64 * v).sum();
        assert_abs_diff_eq!(total, 1.0, epsilon = 1e-12);
        assert_eq!(kac_base_measures(&tv(&[(1, 1.0)]))[&1], 1.0);
    }

    #[test]
    fn invalid_tower_vectors() {
        assert!(matches!(
            TowerVector::new([(2, 0.5), (4, 0.5)]),
            Err(Error::BadTowerVector(_))
        ));
        assert!(matches!(
            TowerVector::new([(1, 0.5)]),
            Err(Error::BadTowerVector(_))
        ));
        assert!(matches!(
            TowerVector::new([(1, 1.5), (2, -0.5)]),
            Err(Error::BadTowerVector(_))
        ));
    }

    #[test]
    fn json_round_trip() {
        let t = tv(&[(1, 0.25), (4, 0.75)]);
        assert_eq!(TowerVector::from_json(&t.to_json()).unwrap(), t);
        let t = TowerVector::from_json(r#"{"heights": {"2": 0.5, "3": "0.5"}}"#).unwrap();
        assert_eq!(t.get(3), 0.5);
        assert_eq!(
            p_from_json(r#"{"p": ["0.75", 0.25]}"#).unwrap(),
            vec![0.75, 0.25]
        );
    }

    #[test]
    fn renewal_basics() {
        let one = tv(&[(1, 1.0)]);
        let mut rng = rng_from_seed(0);
        let mut s = renewal_start_stationary(&one, &mut rng);
        assert_eq!(s, SkyscraperState::new(1, 0));
        for _ in 0..10 {
            s = renewal_step(s, &one, &mut rng);
            assert_eq!(s, SkyscraperState::new(1, 0));
        }
        assert_eq!(
            renewal_step(
                SkyscraperState::new(3, 0),
                &tv(&[(3, 0.5), (4, 0.5)]),
                &mut rng
            ),
            SkyscraperState::new(3, 1)
        );
    }

    fn within_3_sigma(count: u64, n: u64, p: f64) -> bool {
        let sigma = (n as f64 * p * (1.0 - p)).sqrt();
        (count as f64 - n as f64 * p).abs() <= 3.0 * sigma.max(1.0)
    }

    #[test]
    fn stationary_start_occupancy() {
        let pi = tv(&[(1, 0.5), (2, 0.5)]);
        let n = 100_000u64;
        let mut rng = rng_from_seed(11);
        let mut hits = 0;
        let mut height2 = 0;
        for _ in 0..n {
            let s = renewal_start_stationary(&pi, &mut rng);
            hits += (s == SkyscraperState::new(2, 1)) as u64;
            height2 += (s.height == 2) as u64;
        }
        assert!(within_3_sigma(hits, n, 0.25));
        assert!(within_3_sigma(height2, n, 0.5));
    }

    #[test]
    fn stationarity_after_many_steps() {
        let pi = tv(&[(1, 0.2), (3, 0.5), (4, 0.3)]);
        let n = 20_000u64;
        let mut counts: HashMap<SkyscraperState, u64> = HashMap::new();
        for t in 0..n {
            let mut rng = rng_from_seed(crate::rng::derive_seed(3, t));
            let mut s = renewal_start_stationary(&pi, &mut rng);
            for _ in 0..1000 {
                s = renewal_step(s, &pi, &mut rng);
            }
            *counts.entry(s).or_default() += 1;
        }
        for (&k, &v) in pi.entries() {
            for level in 0..k {
                let c = counts
                    .get(&SkyscraperState::new(k, level))
                    .copied()
                    .unwrap_or(0);
                assert!(within_3_sigma(c, n, v / k as f64), "({k},{level}): {c}");
            }
        }
    }

    #[test]
    fn labels_match_figure_towers() {
        let labels = |k: u32| -> Vec<u32> {
            (0..k)
                .map(|i| label_of(SkyscraperState::new(k, i)).unwrap())
                .collect()
        };
        assert_eq!(labels(1), vec![0]);
        assert_eq!(labels(4), vec![0, 1, 1, 0]);
        assert_eq!(labels(6), vec![0, 1, 2, 2, 1, 0]);
        assert_eq!(
            label_of(SkyscraperState::new(3, 0)),
            Err(Error::BadHeightForLabels { height: 3 })
        );
    }

    #[test]
    fn bounded_tower_vector_examples() {
        let p: Vec<f64> = (0..60).map(|n| 0.5f64.powi(n + 1)).collect();
        let pi = bounded_tower_vector(&p).unwrap();
        assert_abs_diff_eq!(pi.get(1), 0.25, epsilon = 1e-15);
        assert_abs_diff_eq!(pi.get(4), 0.25, epsilon = 1e-15);
        assert_abs_diff_eq!(pi.get(6), 3.0 / 16.0, epsilon = 1e-15);
        assert_abs_diff_eq!(pi.get(8), 0.125, epsilon = 1e-15);
        assert_eq!(pi.get(2), 0.0);

        let p: Vec<f64> = (0..40).map(|n| 2.0 / 3.0 * 3f64.powi(-n)).collect();
        let pi = bounded_tower_vector(&p).unwrap();
        assert_abs_diff_eq!(pi.get(1), 4.0 / 9.0, epsilon = 1e-15);
        assert_abs_diff_eq!(pi.get(4), 8.0 / 27.0, epsilon = 1e-15);

        assert!(matches!(
            bounded_tower_vector(&[0.5, 0.5]),
            Err(Error::NeedStrictDecrease { index: 1, .. })
        ));
    }

    #[test]
    fn label_measures_equal_p() {
        let p = geometric_p(0.5);
        let mu = label_measures(&p).unwrap();
        assert_abs_diff_eq!(mu[0], 0.5, epsilon = 1e-12);
        for (a, b) in mu.iter().zip(&p) {
            assert_abs_diff_eq!(a, b, epsilon = 1e-12);
        }
        assert_abs_diff_eq!(mu.iter().sum::<f64>(), 1.0, epsilon = 1e-12);
    }

    #[test]
    fn empirical_label_frequencies() {
        let p = geometric_p(0.5);
        let pi = bounded_tower_vector(&p).unwrap();
        let traj = renewal_trajectory(&pi, 1_000_000, 17);
        let labels: Vec<u32> = traj.iter().map(|s| label_of(*s).unwrap()).collect();
        assert!(labels.windows(2).all(|w| w[0].abs_diff(w[1]) <= 1));
        let xs: Vec<f64> = labels.iter().map(|&l| (l == 1) as u32 as f64).collect();
        let (m, se) = crate::rng::batch_means(&xs, 100);
        assert!((m - p[1]).abs() <= 3.0 * se, "{m} vs {} (se {se})", p[1]);
    }

    #[test]
    fn refine_examples() {
        let r = refine_weights(&[0.5, 0.3, 0.2]);
        assert_eq!(r.weights, vec![0.5, 0.3, 0.2]);
        assert_eq!(r.source, vec![0, 1, 2]);
        let r = refine_weights(&[0.5, 0.5]);
        assert_abs_diff_eq!(r.weights[1], 0.3, epsilon = 1e-15);
        assert_abs_diff_eq!(r.weights[2], 0.2, epsilon = 1e-15);
        assert_eq!(r.source, vec![0, 1, 1]);
    }

    #[test]
    fn lowcost_examples() {
        let t = lowcost_heights(&[1.0; 3], &[0.5, 0.3, 0.2], 1.0).unwrap();
        assert_eq!(t.heights, vec![3, 4, 5]);
        let t = lowcost_heights(&[1.0; 3], &[0.5, 0.3, 0.2], 1e9).unwrap();
        assert_eq!(t.heights, vec![1, 2, 3]);
        // 2C/ε = 2 exactly: k = 2 would give C/k = ε/2, not strictly below
        let t = lowcost_heights(&[1.0], &[1.0], 1.0).unwrap();
        assert_eq!(t.heights, vec![3, 4]);
        assert_eq!(t.piece, vec![0, 0]);
        assert_abs_diff_eq!(t.pi.get(3), 0.5);
    }

    #[test]
    fn trajectory_csv() {
        let pi = bounded_tower_vector(&[0.75, 0.25]).unwrap();
        let traj = renewal_trajectory(&pi, 5, 0);
        let mut buf = Vec::new();
        write_trajectory_csv(&mut buf, &traj).unwrap();
        let text = String::from_utf8(buf).unwrap();
        assert!(text.starts_with("step,height,level,label\n0,"));
        assert_eq!(text.lines().count(), 7);
    }

    proptest! {
        #[test]
        fn refine_is_strictly_decreasing(raw in proptest::collection::vec(0.01..1.0f64, 1..12)) {
            let total: f64 = raw.iter().sum();
            let p: Vec<f64> = raw.iter().map(|x| x / total).collect();
            let r = refine_weights(&p);
            prop_assert!(r.weights.windows(2).all(|w| w[1] < w[0]));
            prop_assert!((r.weights.iter().sum::<f64>() - 1.0).abs() < 1e-12);
            for (i, &s) in r.source.iter().enumerate() {
                prop_assert!(r.weights[i] <= p[s] + 1e-15);
            }
        }

        #[test]
        fn bounded_vectors_satisfy_kac(raw in proptest::collection::vec(0.01..1.0f64, 1..12)) {
            let total: f64 = raw.iter().sum();
            let p = refine_weights(&raw.iter().map(|x| x / total).collect::<Vec<_>>()).weights;
            let pi = bounded_tower_vector(&p).unwrap();
            let kac: f64 = kac_base_measures(&pi).iter().map(|(&k, &v)| k as f64 * v).sum();
            prop_assert!((kac - 1.0).abs() < 1e-12);
            let mu = label_measures(&p).unwrap();
            for (a, b) in mu.iter().zip(&p) {
                prop_assert!((a - b).abs() < 1e-12);
            }
        }

        #[test]
        fn lowcost_contract(costs in proptest::collection::vec(0.0..20.0f64, 1..8), eps in 0.05..5.0f64) {
            let mut c = costs.clone();
            c.sort_by(f64::total_cmp);
            let p = vec![1.0 / c.len() as f64; c.len()];
            let t = lowcost_heights(&c, &p, eps).unwrap();
            prop_assert!(t.heights.windows(2).all(|w| w[0] < w[1]));
            for (&k, &i) in t.heights.iter().zip(&t.piece) {
                prop_assert!(c[i] / (k as f64) < eps / 2.0);
            }
        }
    }
}
