//! Closed-form 2×2 linear algebra and projective geometry of the real
//! projective line.
//!
//! Lines in ℝ² are stored as canonical angles in `[0, π)`; unit vectors as
//! angles in `[0, 2π)`. Nothing here iterates: the SVD is the explicit
//! rotation–diagonal–rotation factorisation of a 2×2 matrix.

use std::f64::consts::{FRAC_PI_2, PI, TAU};
use std::ops::Mul;

use serde::{Deserialize, Serialize};

use crate::dec::Dec;
use crate::error::{Error, Result};

/// Determinants at or below this magnitude are treated as singular.
pub const DET_GUARD: f64 = 1e-300;
/// Vector pairs whose gap sine falls below this cannot be inverted reliably.
pub const ILL_CONDITIONED: f64 = 1e-12;

/// A real 2×2 matrix `[[a11, a12], [a21, a22]]`.
///
/// Serialized row-major as four decimal strings.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(from = "[Dec; 4]", into = "[Dec; 4]")]
pub struct Mat2 {
    pub a11: f64,
    pub a12: f64,
    pub a21: f64,
    pub a22: f64,
}

impl Mat2 {
    pub const IDENTITY: Mat2 = Mat2::new(1.0, 0.0, 0.0, 1.0);

    pub const fn new(a11: f64, a12: f64, a21: f64, a22: f64) -> Self {
        Self { a11, a12, a21, a22 }
    }

    /// Builds a matrix and rejects it unless it is invertible.
    pub fn try_new(a11: f64, a12: f64, a21: f64, a22: f64) -> Result<Self> {
        let m = Self::new(a11, a12, a21, a22);
        m.check_invertible()?;
        Ok(m)
    }

    pub const fn diag(d1: f64, d2: f64) -> Self {
        Self::new(d1, 0.0, 0.0, d2)
    }

    /// Counter-clockwise rotation by `beta` radians.
    pub fn rotation(beta: f64) -> Self {
        let (s, c) = beta.sin_cos();
        Self::new(c, -s, s, c)
    }

    /// Matrix with the given columns.
    pub fn from_columns(c1: [f64; 2], c2: [f64; 2]) -> Self {
        Self::new(c1[0], c2[0], c1[1], c2[1])
    }

    #[inline]
    pub fn det(&self) -> f64 {
        self.a11 * self.a22 - self.a12 * self.a21
    }

    pub fn is_invertible(&self) -> bool {
        let det = self.det();
        det.is_finite() && det.abs() > DET_GUARD
    }

    pub fn check_invertible(&self) -> Result<()> {
        if self.is_invertible() {
            Ok(())
        } else {
            Err(Error::NotInvertible { det: self.det() })
        }
    }

    pub fn inverse(&self) -> Result<Self> {
        self.check_invertible()?;
        let d = self.det();
        Ok(Self::new(
            self.a22 / d,
            -self.a12 / d,
            -self.a21 / d,
            self.a11 / d,
        ))
    }

    pub fn transpose(&self) -> Self {
        Self::new(self.a11, self.a21, self.a12, self.a22)
    }

    #[inline]
    pub fn apply(&self, v: [f64; 2]) -> [f64; 2] {
        [
            self.a11 * v[0] + self.a12 * v[1],
            self.a21 * v[0] + self.a22 * v[1],
        ]
    }

    pub fn scale(&self, s: f64) -> Self {
        Self::new(self.a11 * s, self.a12 * s, self.a21 * s, self.a22 * s)
    }

    pub fn entries(&self) -> [f64; 4] {
        [self.a11, self.a12, self.a21, self.a22]
    }

    pub fn max_abs(&self) -> f64 {
        self.entries().iter().fold(0.0_f64, |m, x| m.max(x.abs()))
    }

    pub fn max_abs_diff(&self, other: &Mat2) -> f64 {
        self.entries()
            .iter()
            .zip(other.entries())
            .fold(0.0_f64, |m, (a, b)| m.max((a - b).abs()))
    }

    pub fn is_finite(&self) -> bool {
        self.entries().iter().all(|x| x.is_finite())
    }
}

impl From<[Dec; 4]> for Mat2 {
    fn from(e: [Dec; 4]) -> Self {
        Mat2::new(e[0].0, e[1].0, e[2].0, e[3].0)
    }
}

impl From<Mat2> for [Dec; 4] {
    fn from(m: Mat2) -> Self {
        m.entries().map(Dec)
    }
}

impl Mul for Mat2 {
    type Output = Mat2;

    #[inline]
    fn mul(self, r: Mat2) -> Mat2 {
        Mat2::new(
            self.a11 * r.a11 + self.a12 * r.a21,
            self.a11 * r.a12 + self.a12 * r.a22,
            self.a21 * r.a11 + self.a22 * r.a21,
            self.a21 * r.a12 + self.a22 * r.a22,
        )
    }
}

/// A point of ℝP¹: the line through the origin at angle `alpha ∈ [0, π)`.
#[derive(Clone, Copy, Debug, PartialEq, PartialOrd, Serialize, Deserialize)]
#[serde(from = "Dec", into = "Dec")]
pub struct ProjLine {
    alpha: f64,
}

impl ProjLine {
    /// Canonicalises any angle into `[0, π)`.
    pub fn new(angle: f64) -> Self {
        let mut alpha = angle.rem_euclid(PI);
        if alpha >= PI {
            alpha = 0.0;
        }
        Self { alpha }
    }

    pub fn from_vector(v: [f64; 2]) -> Self {
        Self::new(v[1].atan2(v[0]))
    }

    #[inline]
    pub fn alpha(&self) -> f64 {
        self.alpha
    }

    /// Unit representative with angle in `[0, π)`.
    pub fn direction(&self) -> [f64; 2] {
        let (s, c) = self.alpha.sin_cos();
        [c, s]
    }

    pub fn perpendicular(&self) -> Self {
        Self::new(self.alpha + FRAC_PI_2)
    }
}

impl From<Dec> for ProjLine {
    fn from(d: Dec) -> Self {
        ProjLine::new(d.0)
    }
}

impl From<ProjLine> for Dec {
    fn from(x: ProjLine) -> Self {
        Dec(x.alpha)
    }
}

/// Two unit vectors stored by their angles in `[0, 2π)`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct UnitVectorPair {
    u1: f64,
    u2: f64,
}

fn canonical_vector_angle(a: f64) -> f64 {
    let mut v = a.rem_euclid(TAU);
    if v >= TAU {
        v = 0.0;
    }
    v
}

impl UnitVectorPair {
    pub fn new(u1: f64, u2: f64) -> Result<Self> {
        let pair = Self {
            u1: canonical_vector_angle(u1),
            u2: canonical_vector_angle(u2),
        };
        let gap_sine = pair.gap_sine().abs();
        if gap_sine < ILL_CONDITIONED {
            return Err(Error::IllConditionedPair { gap_sine });
        }
        Ok(pair)
    }

    pub fn from_vectors(u1: [f64; 2], u2: [f64; 2]) -> Result<Self> {
        Self::new(u1[1].atan2(u1[0]), u2[1].atan2(u2[0]))
    }

    pub fn angles(&self) -> (f64, f64) {
        (self.u1, self.u2)
    }

    pub fn u1(&self) -> [f64; 2] {
        let (s, c) = self.u1.sin_cos();
        [c, s]
    }

    pub fn u2(&self) -> [f64; 2] {
        let (s, c) = self.u2.sin_cos();
        [c, s]
    }

    /// Signed sine of the angle from `u1` to `u2` (the determinant of `[u1 u2]`).
    pub fn gap_sine(&self) -> f64 {
        (self.u2 - self.u1).sin()
    }

    /// Angle between the two vectors, in `[0, π]`.
    pub fn vector_angle(&self) -> f64 {
        let d = (self.u1 - self.u2).rem_euclid(TAU);
        d.min(TAU - d)
    }

    /// Replaces `u1` by `-u1` and/or `u2` by `-u2`.
    pub fn with_signs(&self, flip1: bool, flip2: bool) -> Self {
        Self {
            u1: canonical_vector_angle(self.u1 + if flip1 { PI } else { 0.0 }),
            u2: canonical_vector_angle(self.u2 + if flip2 { PI } else { 0.0 }),
        }
    }

    /// The pair of lines spanned by the vectors.
    pub fn project(&self) -> Result<SplittingPair> {
        SplittingPair::new(ProjLine::new(self.u1), ProjLine::new(self.u2))
    }
}

/// Orientation of the second line relative to the first in cell coordinates.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize, Default)]
#[serde(rename_all = "lowercase")]
pub enum Side {
    /// `x2 = x1 + θ` (mod π).
    #[default]
    Plus,
    /// `x2 = x1 − θ` (mod π).
    Minus,
}

/// A point `(x1, x2)` of `(ℝP¹ × ℝP¹) ∖ diagonal`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct SplittingPair {
    pub x1: ProjLine,
    pub x2: ProjLine,
}

impl SplittingPair {
    pub fn new(x1: ProjLine, x2: ProjLine) -> Result<Self> {
        if line_angle(x1, x2) <= 0.0 {
            return Err(Error::DegenerateSplitting);
        }
        Ok(Self { x1, x2 })
    }

    pub fn from_angles(a1: f64, a2: f64) -> Result<Self> {
        Self::new(ProjLine::new(a1), ProjLine::new(a2))
    }

    /// Pair at line angle `alpha` for `x1` and gap `theta ∈ (0, π/2]` on `side`.
    pub fn from_coords(alpha: f64, theta: f64, side: Side) -> Result<Self> {
        let x2 = match side {
            Side::Plus => alpha + theta,
            Side::Minus => alpha - theta,
        };
        Self::from_angles(alpha, x2)
    }

    /// Inverse of [`SplittingPair::from_coords`]: `(alpha, theta, side)`.
    pub fn coords(&self) -> (f64, f64, Side) {
        let d = (self.x2.alpha - self.x1.alpha).rem_euclid(PI);
        if d <= FRAC_PI_2 {
            (self.x1.alpha, d, Side::Plus)
        } else {
            (self.x1.alpha, PI - d, Side::Minus)
        }
    }

    /// Gap angle `θ = ∠(x1, x2) ∈ (0, π/2]`.
    pub fn gap(&self) -> f64 {
        line_angle(self.x1, self.x2)
    }
}

/// Singular value decomposition `g = U·diag(s1, s2)·Vᵀ`.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Svd2 {
    pub s1: f64,
    pub s2: f64,
    /// Line of the top left singular vector `u1`.
    pub left: ProjLine,
    /// Line of the top right singular vector `v1`.
    pub right: ProjLine,
    u1_angle: f64,
    v1_angle: f64,
    orientation: f64,
}

impl Svd2 {
    /// Recomposes `U·diag(s1, s2)·Vᵀ`.
    pub fn reconstruct(&self) -> Mat2 {
        let (su, cu) = self.u1_angle.sin_cos();
        let (sv, cv) = self.v1_angle.sin_cos();
        let u = Mat2::new(cu, -self.orientation * su, su, self.orientation * cu);
        let vt = Mat2::new(cv, sv, -sv, cv);
        u * Mat2::diag(self.s1, self.s2) * vt
    }

    /// Line of the bottom right singular vector (most contracted direction).
    pub fn right_minor(&self) -> ProjLine {
        self.right.perpendicular()
    }
}

struct RawSvd {
    sx: f64,
    sy: f64,
    u1_angle: f64,
    v1_angle: f64,
}

// g = R(φ)·diag(sx, sy)·R(θ) with sx ≥ |sy|.
fn raw_svd(g: &Mat2) -> RawSvd {
    let e = 0.5 * (g.a11 + g.a22);
    let f = 0.5 * (g.a11 - g.a22);
    let gg = 0.5 * (g.a21 + g.a12);
    let h = 0.5 * (g.a21 - g.a12);
    let q = e.hypot(h);
    let r = f.hypot(gg);
    let a1 = gg.atan2(f);
    let a2 = h.atan2(e);
    let theta = 0.5 * (a2 - a1);
    let phi = 0.5 * (a2 + a1);
    RawSvd {
        sx: q + r,
        sy: q - r,
        u1_angle: phi,
        v1_angle: -theta,
    }
}

/// Closed-form SVD of an invertible 2×2 matrix.
pub fn svd2(g: &Mat2) -> Result<Svd2> {
    g.check_invertible()?;
    let raw = raw_svd(g);
    let s1 = raw.sx;
    // |det| / s1 is accurate where q - r would cancel.
    let s2 = g.det().abs() / s1;
    Ok(Svd2 {
        s1,
        s2,
        left: ProjLine::new(raw.u1_angle),
        right: ProjLine::new(raw.v1_angle),
        u1_angle: raw.u1_angle,
        v1_angle: raw.v1_angle,
        orientation: if raw.sy < 0.0 || g.det() < 0.0 {
            -1.0
        } else {
            1.0
        },
    })
}

/// Top singular value with its left and right lines; defined for any matrix,
/// including the numerically rank-one products met in long cocycle runs.
pub fn top_singular(g: &Mat2) -> (f64, ProjLine, ProjLine) {
    let raw = raw_svd(g);
    (
        raw.sx,
        ProjLine::new(raw.u1_angle),
        ProjLine::new(raw.v1_angle),
    )
}

/// `log max(‖g‖, ‖g⁻¹‖) = max(log s1, −log s2)`.
pub fn log_norm_max(g: &Mat2) -> Result<f64> {
    let svd = svd2(g)?;
    Ok(svd.s1.ln().max(-svd.s2.ln()).max(0.0))
}

/// Angle between two lines, in `[0, π/2]`.
pub fn line_angle(x1: ProjLine, x2: ProjLine) -> f64 {
    let d = (x1.alpha - x2.alpha).abs();
    d.min(PI - d)
}

pub fn projective_action(g: &Mat2, x: ProjLine) -> ProjLine {
    ProjLine::from_vector(g.apply(x.direction()))
}

/// Both sides of `|log sin∠(g·x1, g·x2) − log sin∠(x1, x2)| ≤ log‖g‖ + log‖g⁻¹‖`.
pub fn angle_drift_gap(g: &Mat2, x1: ProjLine, x2: ProjLine) -> Result<(f64, f64)> {
    let before = line_angle(x1, x2);
    if before <= 0.0 {
        return Err(Error::DegenerateSplitting);
    }
    let svd = svd2(g)?;
    let after = line_angle(projective_action(g, x1), projective_action(g, x2));
    let lhs = (after.sin().ln() - before.sin().ln()).abs();
    let rhs = svd.s1.ln() - svd.s2.ln();
    Ok((lhs, rhs))
}

/// The unique matrix sending `xt.u1 ↦ yt.u1` and `xt.u2 ↦ yt.u2`.
pub fn interp_matrix(xt: &UnitVectorPair, yt: &UnitVectorPair) -> Result<Mat2> {
    for pair in [xt, yt] {
        let gap_sine = pair.gap_sine().abs();
        if gap_sine < ILL_CONDITIONED {
            return Err(Error::IllConditionedPair { gap_sine });
        }
    }
    let u = Mat2::from_columns(xt.u1(), xt.u2());
    let v = Mat2::from_columns(yt.u1(), yt.u2());
    // det U = sin(u2 - u1), bounded away from zero above.
    let d = xt.gap_sine();
    let u_inv = Mat2::new(u.a22 / d, -u.a12 / d, -u.a21 / d, u.a11 / d);
    Ok(v * u_inv)
}

/// Singular values of [`interp_matrix`] from the vector angles alone:
/// `(sin(θ′/2)/sin(θ/2), cos(θ′/2)/cos(θ/2))`.
pub fn interp_singular_values(theta: f64, theta_prime: f64) -> Result<(f64, f64)> {
    for angle in [theta, theta_prime] {
        if !(angle > 0.0 && angle < PI) {
            return Err(Error::DegeneratePair { angle });
        }
    }
    Ok((
        (0.5 * theta_prime).sin() / (0.5 * theta).sin(),
        (0.5 * theta_prime).cos() / (0.5 * theta).cos(),
    ))
}

/// Canonical lift of a splitting pair to unit vectors whose vector angle
/// equals the gap angle (never more than π/2).
pub fn section_rho(x: &SplittingPair) -> UnitVectorPair {
    let a1 = x.x1.alpha;
    let mut a2 = x.x2.alpha;
    if (a1 - a2).abs() > FRAC_PI_2 {
        a2 += PI;
    }
    UnitVectorPair {
        u1: canonical_vector_angle(a1),
        u2: canonical_vector_angle(a2),
    }
}

/// Matrix with eigenline `x1` at eigenvalue `exp(log_e1)` and eigenline `x2`
/// at `exp(log_e2)`.
pub fn eigen_matrix(x: &SplittingPair, log_e1: f64, log_e2: f64) -> Result<Mat2> {
    if log_e1 == 0.0 && log_e2 == 0.0 {
        return Ok(Mat2::IDENTITY);
    }
    let lift = section_rho(x);
    let gap_sine = lift.gap_sine();
    if gap_sine.abs() < ILL_CONDITIONED {
        return Err(Error::IllConditionedPair {
            gap_sine: gap_sine.abs(),
        });
    }
    let u = Mat2::from_columns(lift.u1(), lift.u2());
    let u_inv = Mat2::new(
        u.a22 / gap_sine,
        -u.a12 / gap_sine,
        -u.a21 / gap_sine,
        u.a11 / gap_sine,
    );
    Ok(u * Mat2::diag(log_e1.exp(), log_e2.exp()) * u_inv)
}

/// `log sin(θ/2)` for a gap angle; the coordinate in which the bounded
/// transfer cost is a plain distance.
#[inline]
pub fn half_gap_log_sine(theta: f64) -> f64 {
    (0.5 * theta).sin().ln()
}

/// Symmetric cost `|log sin(θ′/2) − log sin(θ/2)|` between two splittings.
pub fn transfer_cost_bounded(x: &SplittingPair, y: &SplittingPair) -> f64 {
    (half_gap_log_sine(y.gap()) - half_gap_log_sine(x.gap())).abs()
}

/// Maximum of `gauge(Φ̃(x̃, ỹ)·Ψ(x))` over all 16 unit-vector lifts of `(x, y)`.
///
/// The gauge must dominate `log max(‖g‖, ‖g⁻¹‖)` on every matrix evaluated;
/// otherwise [`Error::InvalidGauge`] is returned.
pub fn transfer_cost_general<N>(
    x: &SplittingPair,
    y: &SplittingPair,
    psi1: f64,
    psi2: f64,
    gauge: N,
) -> Result<f64>
where
    N: Fn(&Mat2) -> f64,
{
    let psi = eigen_matrix(x, psi1, psi2)?;
    let base_x = section_rho(x);
    let base_y = section_rho(y);
    let mut best = f64::NEG_INFINITY;
    for sx in 0..4u8 {
        let xt = base_x.with_signs(sx & 1 == 1, sx & 2 == 2);
        for sy in 0..4u8 {
            let yt = base_y.with_signs(sy & 1 == 1, sy & 2 == 2);
            let g = interp_matrix(&xt, &yt)? * psi;
            let value = gauge(&g);
            let bound = log_norm_max(&g)?;
            if value < bound - 1e-12 * bound.abs().max(1.0) {
                return Err(Error::InvalidGauge { value, bound });
            }
            best = best.max(value);
        }
    }
    Ok(best)
}
