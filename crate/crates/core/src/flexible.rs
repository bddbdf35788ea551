//! Cocycles with prescribed exponents and prescribed Oseledets distribution.
//!
//! A target law η on splitting pairs is a mixture of cells: rectangles in
//! `(α, θ)` coordinates (`α` the angle of `x₁`, `θ` the gap angle) on one
//! side of `x₁`, each carrying a uniform law (an atom when degenerate).
//! A renewal skyscraper decides when the splitting `f` may move; each step
//! applies `F = Φ̃(ρf, ρf′)·Ψ(f)`, which carries `f` to `f′` and stretches the
//! two lines by `e^ψ₁`, `e^ψ₂`.
//!
//! The travel cost used throughout is `|log sin(θ′/2) − log sin(θ/2)|`, a
//! distance in the coordinate `g(θ) = log sin(θ/2)`; every sup/inf cost
//! between cells is therefore interval arithmetic on `g`-ranges.

use std::collections::BTreeMap;
use std::f64::consts::{FRAC_PI_2, PI};
use std::fmt;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::cocycle::OrbitWindow;
use crate::error::{Error, Result};
use crate::geometry::{
    eigen_matrix, half_gap_log_sine, interp_matrix, line_angle, log_norm_max, projective_action,
    section_rho, transfer_cost_bounded, Mat2, Side, SplittingPair,
};
use crate::oseledets::{
    estimate_e1_backward_at, estimate_e2_forward_at, lyapunov_estimates, parallelogram_slack,
    SlackReport,
};
use crate::rng::{batch_means, rng_from_seed, uniform};
use crate::skyscraper::{
    bounded_tower_vector, label_of, lowcost_heights, refine_weights, renewal_start_stationary,
    renewal_step, SkyscraperState, TowerVector,
};

const MASS_TOL: f64 = 1e-12;

/// Inverse of `g(θ) = log sin(θ/2)`.
fn theta_of_g(g: f64) -> f64 {
    2.0 * g.exp().min(1.0).asin()
}

fn interval_distance(a: (f64, f64), b: (f64, f64)) -> f64 {
    (b.0 - a.1).max(a.0 - b.1).max(0.0)
}

/// A compact rectangle `[α_lo, α_hi] × [θ_lo, θ_hi]` of splitting pairs with
/// `x₂ = x₁ ± θ` according to `side`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Cell {
    #[serde(with = "crate::dec")]
    pub alpha_lo: f64,
    #[serde(with = "crate::dec")]
    pub alpha_hi: f64,
    #[serde(with = "crate::dec")]
    pub theta_lo: f64,
    #[serde(with = "crate::dec")]
    pub theta_hi: f64,
    #[serde(default)]
    pub side: Side,
}

impl Cell {
    pub fn rect(alpha: (f64, f64), theta: (f64, f64), side: Side) -> Self {
        Cell {
            alpha_lo: alpha.0,
            alpha_hi: alpha.1,
            theta_lo: theta.0,
            theta_hi: theta.1,
            side,
        }
    }

    pub fn atom(alpha: f64, theta: f64, side: Side) -> Self {
        Self::rect((alpha, alpha), (theta, theta), side)
    }

    pub fn validate(&self) -> Result<()> {
        let all = [self.alpha_lo, self.alpha_hi, self.theta_lo, self.theta_hi];
        if all.iter().any(|v| !v.is_finite()) {
            return Err(Error::InvalidEta(format!(
                "cell {self:?} has non-finite bounds"
            )));
        }
        if !(self.theta_lo > 0.0 && self.theta_lo <= self.theta_hi && self.theta_hi <= FRAC_PI_2) {
            return Err(Error::InvalidEta(format!(
                "cell gap range [{}, {}] must satisfy 0 < lo <= hi <= pi/2",
                self.theta_lo, self.theta_hi
            )));
        }
        if !(self.alpha_lo <= self.alpha_hi && self.alpha_hi - self.alpha_lo < PI) {
            return Err(Error::InvalidEta(format!(
                "cell angle range [{}, {}] must have width below pi",
                self.alpha_lo, self.alpha_hi
            )));
        }
        Ok(())
    }

    pub fn is_atom(&self) -> bool {
        self.alpha_lo == self.alpha_hi && self.theta_lo == self.theta_hi
    }

    /// `[g(θ_lo), g(θ_hi)]`.
    pub fn g_range(&self) -> (f64, f64) {
        (
            half_gap_log_sine(self.theta_lo),
            half_gap_log_sine(self.theta_hi),
        )
    }

    /// Uniform draw restricted to gap angles in `[t_lo, t_hi]`.
    pub fn sample_with_gaps<R: Rng + ?Sized>(
        &self,
        t_lo: f64,
        t_hi: f64,
        rng: &mut R,
    ) -> SplittingPair {
        let alpha = self.alpha_lo + uniform(rng) * (self.alpha_hi - self.alpha_lo);
        let theta = t_lo + uniform(rng) * (t_hi - t_lo);
        SplittingPair::from_coords(alpha, theta, self.side).expect("cell gaps are positive")
    }

    pub fn sample<R: Rng + ?Sized>(&self, rng: &mut R) -> SplittingPair {
        self.sample_with_gaps(self.theta_lo, self.theta_hi, rng)
    }

    fn alpha_offset(&self, alpha: f64) -> f64 {
        // periodic distance from alpha to [alpha_lo, alpha_hi] modulo π
        let w = self.alpha_hi - self.alpha_lo;
        let d = (alpha - self.alpha_lo).rem_euclid(PI);
        if d <= w {
            0.0
        } else {
            (d - w).min(PI - d)
        }
    }

    pub fn contains(&self, x: &SplittingPair, tol: f64) -> bool {
        let (alpha, theta, side) = x.coords();
        let side_ok = side == self.side || theta >= FRAC_PI_2 - tol;
        side_ok
            && self.alpha_offset(alpha) <= tol
            && theta >= self.theta_lo - tol
            && theta <= self.theta_hi + tol
    }

    /// The cell in the global chart `(α, t)` with `x₂ = α + t`, `t ∈ (0, π)`.
    fn chart_t_range(&self) -> (f64, f64) {
        match self.side {
            Side::Plus => (self.theta_lo, self.theta_hi),
            Side::Minus => (PI - self.theta_hi, PI - self.theta_lo),
        }
    }

    fn chart_distance(&self, alpha: f64, t: f64) -> f64 {
        let (lo, hi) = self.chart_t_range();
        let dt = (lo - t).max(t - hi).max(0.0);
        self.alpha_offset(alpha).hypot(dt)
    }

    /// `P(θ ≤ t)` (`left = false`) or `P(θ < t)` (`left = true`).
    fn theta_cdf(&self, t: f64, left: bool) -> f64 {
        if self.theta_lo == self.theta_hi {
            let hit = if left {
                self.theta_lo < t
            } else {
                self.theta_lo <= t
            };
            return hit as u8 as f64;
        }
        ((t - self.theta_lo) / (self.theta_hi - self.theta_lo)).clamp(0.0, 1.0)
    }
}

/// Countably many further atoms, `θ_k = θ₀·ρ_θ^k` with weight `w₀·ρ_w^k`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum TailRule {
    GeometricAtoms {
        #[serde(with = "crate::dec")]
        alpha: f64,
        #[serde(default)]
        side: Side,
        #[serde(with = "crate::dec")]
        theta0: f64,
        #[serde(with = "crate::dec")]
        theta_ratio: f64,
        #[serde(with = "crate::dec")]
        weight0: f64,
        #[serde(with = "crate::dec")]
        weight_ratio: f64,
    },
}

impl TailRule {
    pub fn total_mass(&self) -> f64 {
        match *self {
            TailRule::GeometricAtoms {
                weight0,
                weight_ratio,
                ..
            } => weight0 / (1.0 - weight_ratio),
        }
    }

    fn validate(&self) -> Result<()> {
        let TailRule::GeometricAtoms {
            alpha,
            theta0,
            theta_ratio,
            weight0,
            weight_ratio,
            ..
        } = *self;
        let ok = alpha.is_finite()
            && theta0 > 0.0
            && theta0 <= FRAC_PI_2
            && theta_ratio > 0.0
            && theta_ratio <= 1.0
            && weight0 > 0.0
            && weight_ratio > 0.0
            && weight_ratio < 1.0;
        if ok {
            Ok(())
        } else {
            Err(Error::InvalidEta(format!("bad tail rule {self:?}")))
        }
    }

    /// Atoms until the remaining mass drops below `1e-12`; that remainder is
    /// added to the last atom kept.
    fn expand(&self) -> Vec<EtaPiece> {
        let TailRule::GeometricAtoms {
            alpha,
            side,
            theta0,
            theta_ratio,
            weight0,
            weight_ratio,
        } = *self;
        let mut out: Vec<EtaPiece> = Vec::new();
        let mut theta = theta0;
        let mut w = weight0;
        for _ in 0..10_000 {
            out.push(EtaPiece {
                weight: w,
                cell: Cell::atom(alpha, theta, side),
            });
            let rest = w * weight_ratio / (1.0 - weight_ratio);
            if rest < MASS_TOL || theta * theta_ratio < 1e-300 {
                out.last_mut().expect("just pushed").weight += rest;
                break;
            }
            theta *= theta_ratio;
            w *= weight_ratio;
        }
        out
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct EtaPiece {
    #[serde(with = "crate::dec")]
    pub weight: f64,
    pub cell: Cell,
}

/// `η = Σ pₙ ηₙ` over cells, optionally followed by a tail rule.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EtaSpec {
    pub pieces: Vec<EtaPiece>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub tail: Option<TailRule>,
}

impl EtaSpec {
    pub fn from_json(text: &str) -> Result<Self> {
        let eta: EtaSpec =
            serde_json::from_str(text).map_err(|e| Error::InvalidEta(e.to_string()))?;
        decompose_eta(&eta)?;
        Ok(eta)
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("eta serializes")
    }

    pub fn atom(alpha: f64, theta: f64, side: Side) -> Self {
        EtaSpec {
            pieces: vec![EtaPiece {
                weight: 1.0,
                cell: Cell::atom(alpha, theta, side),
            }],
            tail: None,
        }
    }
}

/// Four cells (three uniform, one atom) on both sides, with gaps of at most
/// 0.125 in `g` between neighbours.
pub fn example_eta_four_cells() -> EtaSpec {
    let piece = |weight, cell| EtaPiece { weight, cell };
    EtaSpec {
        pieces: vec![
            piece(0.4, Cell::rect((0.2, 0.6), (0.35, 0.55), Side::Plus)),
            piece(0.3, Cell::rect((1.0, 1.4), (0.6, 0.9), Side::Minus)),
            piece(0.2, Cell::rect((2.0, 2.3), (0.95, 1.25), Side::Plus)),
            piece(0.1, Cell::atom(2.8, 1.45, Side::Minus)),
        ],
        tail: None,
    }
}

/// Positive-weight pieces in spec order followed by the expanded tail.
pub fn decompose_eta(eta: &EtaSpec) -> Result<Vec<EtaPiece>> {
    let mut out = Vec::with_capacity(eta.pieces.len());
    for (i, p) in eta.pieces.iter().enumerate() {
        p.cell.validate()?;
        if !(p.weight >= 0.0) || !p.weight.is_finite() {
            return Err(Error::InvalidEta(format!(
                "piece {i} has weight {}",
                p.weight
            )));
        }
        if p.weight == 0.0 {
            log::warn!("dropping zero-mass piece {i}");
            continue;
        }
        out.push(*p);
    }
    if let Some(tail) = &eta.tail {
        tail.validate()?;
        out.extend(tail.expand());
    }
    if out.is_empty() {
        return Err(Error::InvalidEta("no piece has positive mass".into()));
    }
    let total: f64 = out.iter().map(|p| p.weight).sum();
    if (total - 1.0).abs() > MASS_TOL {
        return Err(Error::InvalidEta(format!("weights sum to {total}, not 1")));
    }
    Ok(out)
}

/// `Cₙ = sup` of the travel cost over `Kₙ × Kₙ`, `Kₙ` the union of the
/// first `n + 1` cells.
pub fn cumulative_cost_caps(pieces: &[EtaPiece]) -> Vec<f64> {
    let mut lo = f64::INFINITY;
    let mut hi = f64::NEG_INFINITY;
    pieces
        .iter()
        .map(|p| {
            let (a, b) = p.cell.g_range();
            lo = lo.min(a);
            hi = hi.max(b);
            hi - lo
        })
        .collect()
}

/// A bipartition of the cells whose cheapest crossing costs at least the budget.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GapWitness {
    pub budget: f64,
    pub side_a: Vec<usize>,
    pub side_b: Vec<usize>,
    pub mass_a: f64,
    pub mass_b: f64,
    /// Infimum of the cost over pairs with one point on each side.
    pub crossing_cost: f64,
}

impl fmt::Display for GapWitness {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(
            f,
            "cells {:?} (mass {}) and {:?} (mass {}) are separated: cheapest crossing costs {} >= {}",
            self.side_a, self.mass_a, self.side_b, self.mass_b, self.crossing_cost, self.budget
        )
    }
}

fn crossing_cost(cells: &[Cell], a: &[usize], b: &[usize]) -> f64 {
    let mut best = f64::INFINITY;
    for &i in a {
        for &j in b {
            best = best.min(interval_distance(cells[i].g_range(), cells[j].g_range()));
        }
    }
    best
}

/// Cells joined when their infimum cost is below `b`; fits iff connected.
/// Returns the component of cell 0 against the rest when it does not.
pub fn budget_fit_pieces(pieces: &[EtaPiece], b: f64) -> Option<GapWitness> {
    let cells: Vec<Cell> = pieces.iter().map(|p| p.cell).collect();
    let ranges: Vec<(f64, f64)> = cells.iter().map(Cell::g_range).collect();
    let n = cells.len();
    let mut seen = vec![false; n];
    let mut stack = vec![0];
    seen[0] = true;
    while let Some(v) = stack.pop() {
        for u in 0..n {
            if !seen[u] && interval_distance(ranges[v], ranges[u]) < b {
                seen[u] = true;
                stack.push(u);
            }
        }
    }
    if seen.iter().all(|&s| s) {
        return None;
    }
    let side_a: Vec<usize> = (0..n).filter(|&i| seen[i]).collect();
    let side_b: Vec<usize> = (0..n).filter(|&i| !seen[i]).collect();
    let mass = |s: &[usize]| s.iter().map(|&i| pieces[i].weight).sum();
    Some(GapWitness {
        budget: b,
        crossing_cost: crossing_cost(&cells, &side_a, &side_b),
        mass_a: mass(&side_a),
        mass_b: mass(&side_b),
        side_a,
        side_b,
    })
}

/// Outcome of [`budget_fit_check`].
#[derive(Clone, Debug, PartialEq)]
pub struct BudgetCheck {
    pub fits: bool,
    pub witness: Option<GapWitness>,
}

pub fn budget_fit_check(eta: &EtaSpec, b: f64) -> Result<BudgetCheck> {
    if !(b > 0.0) {
        return Err(Error::InvalidEta(format!(
            "budget must be positive, got {b}"
        )));
    }
    let pieces = decompose_eta(eta)?;
    let witness = budget_fit_pieces(&pieces, b);
    Ok(BudgetCheck {
        fits: witness.is_none(),
        witness,
    })
}

/// Exhaustive oracle: every bipartition must have a crossing pair cheaper than `b`.
pub fn budget_fit_brute_force(cells: &[Cell], b: f64) -> bool {
    let n = cells.len();
    assert!(n <= 20, "brute force is exponential");
    if n < 2 {
        return true;
    }
    // fixing cell n-1 on side B halves the enumeration
    (1u32..(1 << (n - 1))).all(|mask| {
        let a: Vec<usize> = (0..n).filter(|&i| mask >> i & 1 == 1).collect();
        let bb: Vec<usize> = (0..n).filter(|&i| mask >> i & 1 == 0).collect();
        crossing_cost(cells, &a, &bb) < b
    })
}

/// Part of a cell restricted to gap angles in `[theta_lo, theta_hi]`,
/// carrying `mass` of η.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Region {
    pub cell: usize,
    pub theta_lo: f64,
    pub theta_hi: f64,
    pub mass: f64,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum LinkKind {
    /// A whole walk vertex (its current share).
    Body,
    /// Near the point of the current vertex closest to the next one.
    Outgoing,
    /// Near the point of the next vertex closest to the current one.
    Incoming,
}

/// One element `Eₙ` of the chain: a sub-measure of η with total mass `weight`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ChainPiece {
    pub kind: LinkKind,
    pub vertex: usize,
    pub regions: Vec<Region>,
    pub weight: f64,
}

impl ChainPiece {
    pub fn g_range(&self) -> (f64, f64) {
        self.regions
            .iter()
            .fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), r| {
                (
                    lo.min(half_gap_log_sine(r.theta_lo)),
                    hi.max(half_gap_log_sine(r.theta_hi)),
                )
            })
    }
}

/// Chain of sub-measures with consecutive sup-cost below the budget.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Chain {
    pub budget: f64,
    pub pieces: Vec<ChainPiece>,
    /// `max sup c` over `Ēₙ ∪ Ēₙ₊₁`.
    pub max_link_cost: f64,
    /// Walk over the sliced cells.
    pub walk: Vec<usize>,
}

#[derive(Clone, Copy, Debug)]
struct Vertex {
    cell: usize,
    theta_lo: f64,
    theta_hi: f64,
    mass: f64,
}

impl Vertex {
    fn g_range(&self) -> (f64, f64) {
        (
            half_gap_log_sine(self.theta_lo),
            half_gap_log_sine(self.theta_hi),
        )
    }

    /// Gap angles of this vertex whose `g` lies in `[a, b]`.
    fn theta_sub_range(&self, a: f64, b: f64) -> (f64, f64) {
        if self.theta_lo == self.theta_hi {
            return (self.theta_lo, self.theta_hi);
        }
        let lo = theta_of_g(a).clamp(self.theta_lo, self.theta_hi);
        let hi = theta_of_g(b).clamp(self.theta_lo, self.theta_hi);
        (lo, hi)
    }
}

// Cells cut into θ-slices of g-spread at most b/2.
fn slice_vertices(pieces: &[EtaPiece], b: f64) -> Vec<Vertex> {
    let mut out = Vec::new();
    for (c, p) in pieces.iter().enumerate() {
        let cell = &p.cell;
        let (g_lo, g_hi) = cell.g_range();
        let spread = g_hi - g_lo;
        if cell.theta_lo == cell.theta_hi || spread <= 0.5 * b {
            out.push(Vertex {
                cell: c,
                theta_lo: cell.theta_lo,
                theta_hi: cell.theta_hi,
                mass: p.weight,
            });
            continue;
        }
        let m = (spread / (0.5 * b)).ceil() as usize;
        let edges: Vec<f64> = (0..=m)
            .map(|j| match j {
                0 => cell.theta_lo,
                j if j == m => cell.theta_hi,
                j => theta_of_g(g_lo + spread * j as f64 / m as f64),
            })
            .collect();
        let width = cell.theta_hi - cell.theta_lo;
        for w in edges.windows(2) {
            out.push(Vertex {
                cell: c,
                theta_lo: w[0],
                theta_hi: w[1],
                mass: p.weight * (w[1] - w[0]) / width,
            });
        }
    }
    out
}

// Depth-first walk returning to the parent after each child: consecutive
// entries are always neighbours.
fn euler_walk(adjacent: &[Vec<usize>]) -> Vec<usize> {
    let n = adjacent.len();
    let mut seen = vec![false; n];
    seen[0] = true;
    let mut walk = vec![0];
    let mut stack: Vec<(usize, usize)> = vec![(0, 0)];
    while let Some(top) = stack.last_mut() {
        let (v, next) = *top;
        match adjacent[v][next..].iter().position(|&u| !seen[u]) {
            Some(offset) => {
                let u = adjacent[v][next + offset];
                top.1 = next + offset + 1;
                seen[u] = true;
                walk.push(u);
                stack.push((u, 0));
            }
            None => {
                stack.pop();
                if let Some(&(p, _)) = stack.last() {
                    walk.push(p);
                }
            }
        }
    }
    walk
}

/// Sub-measures `E₀, E₁, …` covering η with `sup c < b` on every `Ēₙ ∪ Ēₙ₊₁`.
///
/// Cells are sliced so that each slice has spread below `b`; a depth-first
/// walk visits all slices through neighbours (infimum cost `< b`). Between
/// walk steps `v → w` two connectors sit around the closest points of `v`
/// and `w`, each of `g`-width `(b − dist)/3`. Where several chain pieces
/// cover the same part of a slice, its mass is shared equally.
pub fn march_chain(pieces: &[EtaPiece], b: f64) -> Result<Chain> {
    if !(b > 0.0) {
        return Err(Error::InvalidEta(format!(
            "budget must be positive, got {b}"
        )));
    }
    if let Some(witness) = budget_fit_pieces(pieces, b) {
        return Err(Error::UnboundedGap { budget: b, witness });
    }
    let vertices = slice_vertices(pieces, b);
    let ranges: Vec<(f64, f64)> = vertices.iter().map(Vertex::g_range).collect();
    let adjacent: Vec<Vec<usize>> = (0..vertices.len())
        .map(|v| {
            (0..vertices.len())
                .filter(|&u| u != v && interval_distance(ranges[v], ranges[u]) < b)
                .collect()
        })
        .collect();
    let walk = euler_walk(&adjacent);

    // (kind, vertex, θ sub-range) per chain piece
    let mut items: Vec<(LinkKind, usize, (f64, f64))> = Vec::new();
    for (t, &v) in walk.iter().enumerate() {
        let vx = &vertices[v];
        items.push((LinkKind::Body, v, (vx.theta_lo, vx.theta_hi)));
        let Some(&w) = walk.get(t + 1) else { break };
        let (a, c) = (ranges[v], ranges[w]);
        let h = (b - interval_distance(a, c)) / 3.0;
        let (out_g, in_g) = if a.1 < c.0 {
            ((a.1 - h, a.1), (c.0, c.0 + h))
        } else if c.1 < a.0 {
            ((a.0, a.0 + h), (c.1 - h, c.1))
        } else {
            let mid = 0.5 * (a.0.max(c.0) + a.1.min(c.1));
            ((mid - h, mid + h), (mid - h, mid + h))
        };
        items.push((LinkKind::Outgoing, v, vx.theta_sub_range(out_g.0, out_g.1)));
        items.push((
            LinkKind::Incoming,
            w,
            vertices[w].theta_sub_range(in_g.0, in_g.1),
        ));
    }

    let mut regions: Vec<Vec<Region>> = vec![Vec::new(); items.len()];
    for (v, vx) in vertices.iter().enumerate() {
        let covering: Vec<(usize, (f64, f64))> = items
            .iter()
            .enumerate()
            .filter(|(_, it)| it.1 == v)
            .map(|(i, it)| (i, it.2))
            .collect();
        if vx.theta_lo == vx.theta_hi {
            let share = vx.mass / covering.len() as f64;
            for &(i, _) in &covering {
                regions[i].push(Region {
                    cell: vx.cell,
                    theta_lo: vx.theta_lo,
                    theta_hi: vx.theta_hi,
                    mass: share,
                });
            }
            continue;
        }
        let mut cuts: Vec<f64> = covering.iter().flat_map(|&(_, r)| [r.0, r.1]).collect();
        cuts.sort_by(f64::total_cmp);
        cuts.dedup();
        let width = vx.theta_hi - vx.theta_lo;
        for seg in cuts.windows(2) {
            let (x, y) = (seg[0], seg[1]);
            let owners: Vec<usize> = covering
                .iter()
                .filter(|(_, r)| r.0 <= x && r.1 >= y)
                .map(|&(i, _)| i)
                .collect();
            let share = vx.mass * (y - x) / width / owners.len() as f64;
            for i in owners {
                regions[i].push(Region {
                    cell: vx.cell,
                    theta_lo: x,
                    theta_hi: y,
                    mass: share,
                });
            }
        }
    }

    let chain_pieces: Vec<ChainPiece> = items
        .iter()
        .zip(regions)
        .filter(|(_, r)| !r.is_empty())
        .map(|(&(kind, vertex, _), regions)| ChainPiece {
            kind,
            vertex,
            weight: regions.iter().map(|r| r.mass).sum(),
            regions,
        })
        .collect();

    let mut max_link_cost: f64 = 0.0;
    for (i, pair) in chain_pieces.windows(2).enumerate() {
        let (a, c) = (pair[0].g_range(), pair[1].g_range());
        let sup = a.1.max(c.1) - a.0.min(c.0);
        if !(sup < b) {
            return Err(Error::BudgetViolated {
                step: i,
                cost: sup,
                budget: b,
            });
        }
        max_link_cost = max_link_cost.max(sup);
    }
    if let Some(p) = chain_pieces.first() {
        let (lo, hi) = p.g_range();
        max_link_cost = max_link_cost.max(hi - lo);
    }
    Ok(Chain {
        budget: b,
        pieces: chain_pieces,
        max_link_cost,
        walk,
    })
}

/// `ψⱼ = rⱼ·β / ∫β dη` with `β` a continuous bump equal to 1 on every cell
/// and vanishing at chart distance `θ_lo/2` from it.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PsiPair {
    pub r1: f64,
    pub r2: f64,
    pub cells: Vec<Cell>,
    /// `∫β dη`.
    pub beta_mass: f64,
}

pub fn build_psi_pair(eta: &EtaSpec, r1: f64, r2: f64) -> Result<PsiPair> {
    if !(r1.is_finite() && r2.is_finite() && r1 >= r2) {
        return Err(Error::InvalidEta(format!(
            "need finite r1 >= r2, got ({r1}, {r2})"
        )));
    }
    let pieces = decompose_eta(eta)?;
    // β ≡ 1 on every cell, so ∫β dη is the total mass
    let beta_mass = pieces.iter().map(|p| p.weight).sum();
    Ok(PsiPair {
        r1,
        r2,
        cells: pieces.iter().map(|p| p.cell).collect(),
        beta_mass,
    })
}

impl PsiPair {
    pub fn beta(&self, x: &SplittingPair) -> f64 {
        let alpha = x.x1.alpha();
        let t = (x.x2.alpha() - alpha).rem_euclid(PI);
        self.cells.iter().fold(0.0, |best: f64, c| {
            let d = c.chart_distance(alpha, t);
            best.max(1.0 - d / (0.5 * c.theta_lo))
        })
    }

    pub fn eval(&self, x: &SplittingPair) -> (f64, f64) {
        let s = self.beta(x) / self.beta_mass;
        (self.r1 * s, self.r2 * s)
    }
}

/// `Υ(f, f′) = Φ̃(ρf, ρf′)·Ψ(f)`.
pub fn assemble_f(f_now: &SplittingPair, f_next: &SplittingPair, psi: &PsiPair) -> Result<Mat2> {
    let (p1, p2) = psi.eval(f_now);
    Ok(interp_matrix(&section_rho(f_now), &section_rho(f_next))? * eigen_matrix(f_now, p1, p2)?)
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "mode", rename_all = "lowercase")]
pub enum Mode {
    /// Mean travel cost below `epsilon`.
    Lowcost { epsilon: f64 },
    /// Every step's travel cost below `budget`.
    Bounded { budget: f64 },
}

#[derive(Clone, Debug, PartialEq)]
struct PieceSampler {
    regions: Vec<Region>,
    cdf: Vec<f64>,
}

impl PieceSampler {
    fn new(regions: Vec<Region>) -> Self {
        let total: f64 = regions.iter().map(|r| r.mass).sum();
        let mut acc = 0.0;
        let mut cdf: Vec<f64> = regions
            .iter()
            .map(|r| {
                acc += r.mass;
                acc / total
            })
            .collect();
        *cdf.last_mut().expect("piece has a region") = 1.0;
        PieceSampler { regions, cdf }
    }

    fn sample<R: Rng + ?Sized>(&self, cells: &[Cell], rng: &mut R) -> SplittingPair {
        let u = uniform(rng);
        let i = self
            .cdf
            .partition_point(|&c| c <= u)
            .min(self.cdf.len() - 1);
        let r = &self.regions[i];
        cells[r.cell].sample_with_gaps(r.theta_lo, r.theta_hi, rng)
    }
}

/// Everything fixed before simulation: pieces, towers and ψ.
#[derive(Clone, Debug, PartialEq)]
pub struct FlexiblePlan {
    pub mode: Mode,
    pub psi: PsiPair,
    pub pieces: Vec<EtaPiece>,
    pub tower: TowerVector,
    /// Low-cost mode: piece served by each tower height.
    pub tower_piece: BTreeMap<u32, usize>,
    /// Bounded mode: chain piece drawn at each label.
    pub label_piece: Vec<usize>,
    /// Bounded mode: the chain before weight refinement.
    pub chain: Option<Chain>,
    samplers: Vec<PieceSampler>,
}

pub fn plan_flexible(eta: &EtaSpec, r1: f64, r2: f64, mode: Mode) -> Result<FlexiblePlan> {
    let psi = build_psi_pair(eta, r1, r2)?;
    let pieces = decompose_eta(eta)?;
    match mode {
        Mode::Lowcost { epsilon } => {
            let caps = cumulative_cost_caps(&pieces);
            let weights: Vec<f64> = pieces.iter().map(|p| p.weight).collect();
            let towers = lowcost_heights(&caps, &weights, epsilon)?;
            let samplers = pieces
                .iter()
                .enumerate()
                .map(|(c, p)| {
                    PieceSampler::new(vec![Region {
                        cell: c,
                        theta_lo: p.cell.theta_lo,
                        theta_hi: p.cell.theta_hi,
                        mass: p.weight,
                    }])
                })
                .collect();
            Ok(FlexiblePlan {
                mode,
                psi,
                tower_piece: towers
                    .heights
                    .iter()
                    .copied()
                    .zip(towers.piece.iter().copied())
                    .collect(),
                tower: towers.pi,
                pieces,
                label_piece: Vec::new(),
                chain: None,
                samplers,
            })
        }
        Mode::Bounded { budget } => {
            let chain = march_chain(&pieces, budget)?;
            let weights: Vec<f64> = chain.pieces.iter().map(|p| p.weight).collect();
            let refined = refine_weights(&weights);
            let tower = bounded_tower_vector(&refined.weights)?;
            let samplers = chain
                .pieces
                .iter()
                .map(|p| PieceSampler::new(p.regions.clone()))
                .collect();
            Ok(FlexiblePlan {
                mode,
                psi,
                pieces,
                tower,
                tower_piece: BTreeMap::new(),
                label_piece: refined.source,
                chain: Some(chain),
                samplers,
            })
        }
    }
}

impl FlexiblePlan {
    fn cells(&self) -> Vec<Cell> {
        self.pieces.iter().map(|p| p.cell).collect()
    }

    /// Window of `steps` factors indexed from `-steps/2`.
    pub fn simulate(&self, steps: usize, seed: u64) -> Result<OrbitWindow> {
        if steps == 0 {
            return Err(Error::NoData("simulation needs at least one step".into()));
        }
        let cells = self.cells();
        let mut rng = rng_from_seed(seed);
        let mut state = renewal_start_stationary(&self.tower, &mut rng);
        let draw = |state: SkyscraperState,
                    rng: &mut rand_chacha::ChaCha8Rng|
         -> Result<(SplittingPair, u32)> {
            match self.mode {
                Mode::Lowcost { .. } => {
                    let piece = self.tower_piece[&state.height];
                    Ok((self.samplers[piece].sample(&cells, rng), piece as u32))
                }
                Mode::Bounded { .. } => {
                    let label = label_of(state)?;
                    let piece = self.label_piece[label as usize];
                    Ok((self.samplers[piece].sample(&cells, rng), label))
                }
            }
        };
        let (mut f, mut label) = draw(state, &mut rng)?;
        let mut matrices = Vec::with_capacity(steps);
        let mut prescribed = Vec::with_capacity(steps);
        let mut labels = Vec::with_capacity(steps);
        for step in 0..steps {
            let next_state = renewal_step(state, &self.tower, &mut rng);
            let (next_f, next_label) = match self.mode {
                Mode::Lowcost { .. } if !next_state.at_base() => (f, label),
                _ => draw(next_state, &mut rng)?,
            };
            if let Mode::Bounded { budget } = self.mode {
                let cost = transfer_cost_bounded(&f, &next_f);
                if !(cost < budget) {
                    return Err(Error::BudgetViolated { step, cost, budget });
                }
            }
            matrices.push(assemble_f(&f, &next_f, &self.psi)?);
            prescribed.push(f);
            labels.push(label);
            (state, f, label) = (next_state, next_f, next_label);
        }
        let window =
            OrbitWindow::new(-((steps / 2) as i64), matrices, seed)?.with_prescribed(prescribed)?;
        match self.mode {
            Mode::Bounded { .. } => window.with_labels(labels),
            Mode::Lowcost { .. } => Ok(window),
        }
    }
}

pub fn simulate_flexible(
    eta: &EtaSpec,
    r1: f64,
    r2: f64,
    mode: Mode,
    steps: usize,
    seed: u64,
) -> Result<OrbitWindow> {
    plan_flexible(eta, r1, r2, mode)?.simulate(steps, seed)
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct CellFrequency {
    pub expected: f64,
    pub observed: f64,
}

/// Estimated Oseledets lines against the prescribed ones.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Agreement {
    pub depth: usize,
    pub times: usize,
    /// Fraction of times with both lines within `1e-3` rad.
    pub fraction: f64,
    pub max_error: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ConstructionReport {
    pub steps: u64,
    #[serde(with = "crate::dec::u64_string")]
    pub seed: u64,
    pub r1: f64,
    pub r2: f64,
    pub lambda_hat: [f64; 2],
    /// Total variation over the cell partition (mass outside every cell counts fully).
    pub cell_tv: f64,
    pub cells: Vec<CellFrequency>,
    pub outside_fraction: f64,
    /// Kolmogorov–Smirnov distance of the gap-angle marginal.
    pub theta_ks: f64,
    pub max_step_cost: f64,
    pub mean_step_cost: f64,
    pub mean_step_cost_se: f64,
    /// Mean of `log max(‖F‖, ‖F⁻¹‖)`.
    pub mean_log_norm_max: f64,
    /// Birkhoff averages of `ψ₁∘f`, `ψ₂∘f`.
    pub birkhoff_psi: [f64; 2],
    pub agreement: Option<Agreement>,
    pub max_label_jump: Option<u32>,
    /// Largest angle between `F_i·f_i` and `f_{i+1}`, over both lines.
    pub invariance_error: f64,
    pub parallelogram: SlackReport,
}

/// `sup_t |F_emp(t) − F(t)|`, checking both one-sided limits at every sample
/// and at every atom of the target.
pub fn ks_distance<C>(samples: &[f64], cdf: C, atoms: &[f64]) -> f64
where
    C: Fn(f64, bool) -> f64,
{
    let mut xs = samples.to_vec();
    xs.sort_by(f64::total_cmp);
    let n = xs.len() as f64;
    let emp = |t: f64, left: bool| {
        let k = if left {
            xs.partition_point(|&x| x < t)
        } else {
            xs.partition_point(|&x| x <= t)
        };
        k as f64 / n
    };
    let mut points = xs.clone();
    points.extend_from_slice(atoms);
    points.dedup();
    points
        .iter()
        .map(|&t| {
            (emp(t, true) - cdf(t, true))
                .abs()
                .max((emp(t, false) - cdf(t, false)).abs())
        })
        .fold(0.0, f64::max)
}

pub fn verify_flexible(
    window: &OrbitWindow,
    eta: &EtaSpec,
    r1: f64,
    r2: f64,
) -> Result<ConstructionReport> {
    let f = window
        .prescribed_f
        .as_ref()
        .ok_or_else(|| Error::NoData("window carries no prescribed splitting".into()))?;
    if window.len() < 2 {
        return Err(Error::NoData("window too short to verify".into()));
    }
    let pieces = decompose_eta(eta)?;
    let psi = build_psi_pair(eta, r1, r2)?;
    let n = f.len();

    let mut counts = vec![0u64; pieces.len()];
    let mut outside = 0u64;
    for x in f {
        match pieces.iter().position(|p| p.cell.contains(x, 1e-9)) {
            Some(c) => counts[c] += 1,
            None => outside += 1,
        }
    }
    let cells: Vec<CellFrequency> = pieces
        .iter()
        .zip(&counts)
        .map(|(p, &c)| CellFrequency {
            expected: p.weight,
            observed: c as f64 / n as f64,
        })
        .collect();
    let outside_fraction = outside as f64 / n as f64;
    let cell_tv = 0.5
        * (cells
            .iter()
            .map(|c| (c.observed - c.expected).abs())
            .sum::<f64>()
            + outside_fraction);

    let atoms: Vec<f64> = pieces
        .iter()
        .filter(|p| p.cell.theta_lo == p.cell.theta_hi)
        .map(|p| p.cell.theta_lo)
        .collect();
    // recovered gaps carry rounding error; snap them onto nearby atoms
    let thetas: Vec<f64> = f
        .iter()
        .map(|x| {
            let t = x.gap();
            atoms
                .iter()
                .copied()
                .find(|a| (a - t).abs() <= 1e-9)
                .unwrap_or(t)
        })
        .collect();
    let theta_ks = ks_distance(
        &thetas,
        |t, left| {
            pieces
                .iter()
                .map(|p| p.weight * p.cell.theta_cdf(t, left))
                .sum()
        },
        &atoms,
    );

    let costs: Vec<f64> = f
        .windows(2)
        .map(|w| transfer_cost_bounded(&w[0], &w[1]))
        .collect();
    let max_step_cost = costs.iter().copied().fold(0.0, f64::max);
    let (mean_step_cost, mean_step_cost_se) = batch_means(&costs, 100);

    let mut norm_sum = 0.0;
    for m in &window.matrices {
        norm_sum += log_norm_max(m)?;
    }
    let mean_log_norm_max = norm_sum / n as f64;
    let (s1, s2) = f.iter().fold((0.0, 0.0), |(a, b), x| {
        let (p1, p2) = psi.eval(x);
        (a + p1, b + p2)
    });

    let mut invariance_error: f64 = 0.0;
    for (i, w) in f.windows(2).enumerate() {
        let m = &window.matrices[i];
        invariance_error = invariance_error
            .max(line_angle(projective_action(m, w[0].x1), w[1].x1))
            .max(line_angle(projective_action(m, w[0].x2), w[1].x2));
    }

    let max_label_jump = window
        .labels
        .as_ref()
        .map(|l| l.windows(2).map(|w| w[0].abs_diff(w[1])).max().unwrap_or(0));

    let agreement = if r1 > r2 {
        Some(oseledets_agreement(window, f, r1 - r2)?)
    } else {
        None
    };
    let (l1, l2) = lyapunov_estimates(window);
    let start = window.start();
    let parallelogram = parallelogram_slack(window, |i| {
        let x = &f[(i - start) as usize];
        (x.x1, x.x2)
    });

    Ok(ConstructionReport {
        steps: n as u64,
        seed: window.seed,
        r1,
        r2,
        lambda_hat: [l1, l2],
        cell_tv,
        cells,
        outside_fraction,
        theta_ks,
        max_step_cost,
        mean_step_cost,
        mean_step_cost_se,
        mean_log_norm_max,
        birkhoff_psi: [s1 / n as f64, s2 / n as f64],
        agreement,
        max_label_jump,
        invariance_error,
        parallelogram,
    })
}

fn oseledets_agreement(window: &OrbitWindow, f: &[SplittingPair], gap: f64) -> Result<Agreement> {
    let depth = (20.0 / gap).ceil() as usize * 10;
    let lo = window.start() + depth as i64;
    let hi = window.end() - depth as i64;
    if hi <= lo {
        return Err(Error::NoData(format!(
            "window of {} steps cannot fit agreement depth {depth} on both sides",
            window.len()
        )));
    }
    let times = 100usize;
    let span = (hi - lo) as f64;
    let mut good = 0usize;
    let mut max_error: f64 = 0.0;
    for k in 0..times {
        let i = lo + ((k as f64 + 0.5) / times as f64 * span) as i64;
        let x = &f[(i - window.start()) as usize];
        let e1 = estimate_e1_backward_at(window, i, depth)?;
        let e2 = estimate_e2_forward_at(window, i, depth)?;
        let err = line_angle(e1, x.x1).max(line_angle(e2, x.x2));
        max_error = max_error.max(err);
        good += (err < 1e-3) as usize;
    }
    Ok(Agreement {
        depth,
        times,
        fraction: good as f64 / times as f64,
        max_error,
    })
}
