//! Force fields with manufactured exact solutions, background velocities and
//! the explicit dipole approximation.

use std::io::{BufRead, Write};
use std::sync::Arc;

use nalgebra::{Matrix3, Vector3};
use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::geometry::ParticleConfig;
use crate::kernels::{
    ball_convolution, oseen_grad_unchecked, oseen_hessian_contract, oseen_unchecked, DipoleSpec, DipoleSum, Point, SumPlan, SymStrain,
};
use crate::quadrature::{gauss_legendre_interval, BallRule, SphereRule};

/// Immutable velocity field evaluator.
pub trait FlowField: Send + Sync {
    fn value(&self, x: &Point) -> Vector3<f64>;

    /// Jacobian `J[(a, m)] = ∂_m u_a`.
    fn gradient(&self, x: &Point) -> Matrix3<f64>;

    fn symmetric_gradient(&self, x: &Point) -> Matrix3<f64> {
        let g = self.gradient(x);
        (g + g.transpose()) * 0.5
    }
}

impl<T: FlowField + ?Sized> FlowField for Arc<T> {
    fn value(&self, x: &Point) -> Vector3<f64> {
        (**self).value(x)
    }
    fn gradient(&self, x: &Point) -> Matrix3<f64> {
        (**self).gradient(x)
    }
}

impl<T: FlowField + ?Sized> FlowField for &T {
    fn value(&self, x: &Point) -> Vector3<f64> {
        (**self).value(x)
    }
    fn gradient(&self, x: &Point) -> Matrix3<f64> {
        (**self).gradient(x)
    }
}

/// The zero field.
#[derive(Clone, Copy, Debug, Default)]
pub struct ZeroField;

impl FlowField for ZeroField {
    fn value(&self, _x: &Point) -> Vector3<f64> {
        Vector3::zeros()
    }
    fn gradient(&self, _x: &Point) -> Matrix3<f64> {
        Matrix3::zeros()
    }
}

/// Field given by closures for the value and the Jacobian.
pub struct AnalyticField<V, G> {
    pub value: V,
    pub gradient: G,
}

impl<V, G> FlowField for AnalyticField<V, G>
where
    V: Fn(&Point) -> Vector3<f64> + Send + Sync,
    G: Fn(&Point) -> Matrix3<f64> + Send + Sync,
{
    fn value(&self, x: &Point) -> Vector3<f64> {
        (self.value)(x)
    }
    fn gradient(&self, x: &Point) -> Matrix3<f64> {
        (self.gradient)(x)
    }
}

/// Affine field `u0 + A(x − x0)`.
#[derive(Clone, Copy, Debug)]
pub struct AffineField {
    pub origin: Point,
    pub offset: Vector3<f64>,
    pub matrix: Matrix3<f64>,
}

impl FlowField for AffineField {
    fn value(&self, x: &Point) -> Vector3<f64> {
        self.offset + self.matrix * (x - self.origin)
    }
    fn gradient(&self, _x: &Point) -> Matrix3<f64> {
        self.matrix
    }
}

/// `a·u + b·w`.
pub struct Combination<A, B> {
    pub a: A,
    pub b: B,
    pub ca: f64,
    pub cb: f64,
}

impl<A: FlowField, B: FlowField> FlowField for Combination<A, B> {
    fn value(&self, x: &Point) -> Vector3<f64> {
        self.a.value(x) * self.ca + self.b.value(x) * self.cb
    }
    fn gradient(&self, x: &Point) -> Matrix3<f64> {
        self.a.gradient(x) * self.ca + self.b.gradient(x) * self.cb
    }
}

/// Compactly supported force `f = −Δv0` built from the divergence-free
/// velocity `v0 = ∇ψ × a`, `ψ(x) = (1 − |x−c|²/w²)⁴` on `|x−c| < w`.
/// The free Stokes solution with this force is `v0` with zero pressure.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct ForceField {
    pub amplitude: Vector3<f64>,
    pub support_radius: f64,
    pub center: Point,
}

pub fn manufactured_force(amplitude: Vector3<f64>, support_radius: f64, center: Point) -> Result<ForceField> {
    if !(support_radius > 0.0) || !support_radius.is_finite() {
        return Err(Error::InvalidInput(format!("support radius must be positive, got {support_radius}")));
    }
    Ok(ForceField { amplitude, support_radius, center })
}

impl ForceField {
    /// `t = 1 − |x−c|²/w²` and `r = x − c`, or `None` outside the support.
    fn local(&self, x: &Point) -> Option<(f64, Point)> {
        let r = x - self.center;
        let w2 = self.support_radius * self.support_radius;
        let t = 1.0 - r.norm_squared() / w2;
        (t > 0.0).then_some((t, r))
    }

    /// Force density `f = −(48/w⁴) t(9t − 4) (r × a)`.
    pub fn force(&self, x: &Point) -> Vector3<f64> {
        match self.local(x) {
            None => Vector3::zeros(),
            Some((t, r)) => {
                let w4 = self.support_radius.powi(4);
                r.cross(&self.amplitude) * (-48.0 / w4 * t * (9.0 * t - 4.0))
            }
        }
    }

    /// Exact free velocity `v0 = −(8/w²) t³ (r × a)`.
    pub fn exact_velocity(&self, x: &Point) -> Vector3<f64> {
        match self.local(x) {
            None => Vector3::zeros(),
            Some((t, r)) => {
                let w2 = self.support_radius.powi(2);
                r.cross(&self.amplitude) * (-8.0 / w2 * t * t * t)
            }
        }
    }

    /// Exact Jacobian of `v0`.
    pub fn exact_gradient(&self, x: &Point) -> Matrix3<f64> {
        match self.local(x) {
            None => Matrix3::zeros(),
            Some((t, r)) => {
                let w2 = self.support_radius.powi(2);
                let rxa = r.cross(&self.amplitude);
                // ∂_m (r × a)_a = −[a]×.
                let ra = -self.amplitude.cross_matrix();
                (rxa * r.transpose() * (-6.0 / w2 * t * t) + ra * (t * t * t)) * (-8.0 / w2)
            }
        }
    }

    /// Largest force magnitude, from the radial profile.
    pub fn sup_norm(&self) -> f64 {
        let w = self.support_radius;
        let a = self.amplitude.norm();
        (0..=2000)
            .map(|k| {
                let t = k as f64 / 2000.0;
                48.0 / w.powi(4) * t * (9.0 * t - 4.0).abs() * w * (1.0 - t).sqrt() * a
            })
            .fold(0.0, f64::max)
    }

    /// Hölder data (exponent, constant): the force is Lipschitz; the constant
    /// bounds |∇f| along the radial profile.
    pub fn holder(&self) -> (f64, f64) {
        let w = self.support_radius;
        let a = self.amplitude.norm();
        // |∇f| ≤ (48/w⁴)|a| (|t(9t−4)| + ρ·|d/dρ t(9t−4)|) with dt/dρ = −2ρ/w².
        let lip = (0..=2000)
            .map(|k| {
                let t = k as f64 / 2000.0;
                let rho2 = w * w * (1.0 - t);
                48.0 / w.powi(4) * a * ((t * (9.0 * t - 4.0)).abs() + rho2 * 2.0 / (w * w) * (18.0 * t - 4.0).abs())
            })
            .fold(0.0, f64::max);
        (1.0, lip)
    }

    pub fn scaled(&self, s: f64) -> ForceField {
        ForceField { amplitude: self.amplitude * s, ..*self }
    }
}

/// The exact free velocity `v0` of a manufactured force.
#[derive(Clone, Copy, Debug)]
pub struct FreeVelocity(pub ForceField);

impl FlowField for FreeVelocity {
    fn value(&self, x: &Point) -> Vector3<f64> {
        self.0.exact_velocity(x)
    }
    fn gradient(&self, x: &Point) -> Matrix3<f64> {
        self.0.exact_gradient(x)
    }
}

/// Whether the particle volume is removed from the force.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum BackgroundMode {
    Full,
    Punctured,
}

/// Quadrature for the per-ball corrections.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct BallQuadrature {
    pub radial: usize,
    pub angular: usize,
    /// Remainder quadrature is applied within `near_factor·R` of a center.
    pub near_factor: f64,
}

impl Default for BallQuadrature {
    fn default() -> Self {
        BallQuadrature { radial: 8, angular: 26, near_factor: 4.0 }
    }
}

#[derive(Clone, Debug)]
struct BallTerm {
    center: Point,
    f0: Vector3<f64>,
    /// ∫_B (f − f(X)) and ∫_B (f − f(X)) ⊗ (y − X).
    m0: Vector3<f64>,
    m1: Matrix3<f64>,
}

/// Background velocity `v = Φ∗(1_Ω f)`: the free solution minus the Oseen
/// convolution of the force over each ball.
///
/// Each ball term is split as `G(x−X) f(X) + ∫_B Φ(x−y)(f(y) − f(X)) dy`; the
/// first part is closed form, the second (smaller by a factor R) is computed
/// by quadrature near the ball and by its first two moments further out.
#[derive(Clone, Debug)]
pub struct BackgroundVelocity {
    pub force: ForceField,
    pub mode: BackgroundMode,
    balls: Vec<BallTerm>,
    radius: f64,
    quad: BallQuadrature,
    ball_rule: Option<BallRule>,
    sphere: SphereRule,
    radial: (Vec<f64>, Vec<f64>),
}

pub fn background_velocity(
    f: &ForceField,
    cfg: Option<&ParticleConfig>,
    mode: BackgroundMode,
    quad: BallQuadrature,
) -> Result<BackgroundVelocity> {
    let sphere = SphereRule::lebedev(quad.angular)
        .ok_or_else(|| Error::Quadrature(format!("no {}-point sphere rule", quad.angular)))?;
    if quad.radial == 0 || quad.radial > 64 {
        return Err(Error::Quadrature(format!("radial order {} outside 1..=64", quad.radial)));
    }
    let mut balls = Vec::new();
    let mut radius = 0.0;
    let mut ball_rule = None;
    if mode == BackgroundMode::Punctured {
        let cfg = cfg.ok_or_else(|| Error::InvalidInput("punctured background needs a configuration".into()))?;
        radius = cfg.radius;
        let rule = BallRule::new(radius, quad.radial, &sphere);
        for c in &cfg.centers {
            if (c - f.center).norm() < f.support_radius + cfg.radius {
                let f0 = f.force(c);
                let mut m0 = Vector3::zeros();
                let mut m1 = Matrix3::zeros();
                for (off, w) in rule.offsets.iter().zip(&rule.weights) {
                    let g = f.force(&(c + off)) - f0;
                    m0 += g * *w;
                    m1 += g * off.transpose() * *w;
                }
                balls.push(BallTerm { center: *c, f0, m0, m1 });
            }
        }
        ball_rule = Some(rule);
    }
    let radial = gauss_legendre_interval(quad.radial, 0.0, 1.0);
    Ok(BackgroundVelocity { force: *f, mode, balls, radius, quad, ball_rule, sphere, radial })
}

impl BackgroundVelocity {
    /// Number of balls that intersect the force support.
    pub fn active_balls(&self) -> usize {
        self.balls.len()
    }

    /// Convolution of `f − f(X)` over one ball, value and Jacobian.
    fn remainder(&self, x: &Point, center: &Point, f0: &Vector3<f64>) -> (Vector3<f64>, Matrix3<f64>) {
        let rel = x - center;
        let dist = rel.norm();
        let mut val = Vector3::zeros();
        let mut jac = Matrix3::zeros();
        if dist > self.radius {
            let rule = self.ball_rule.as_ref().expect("punctured mode");
            for (off, w) in rule.offsets.iter().zip(&rule.weights) {
                let y = center + off;
                let g = self.force.force(&y) - f0;
                if g == Vector3::zeros() {
                    continue;
                }
                let z = x - y;
                val += oseen_unchecked(&z) * g * *w;
                let dg = oseen_grad_unchecked(&z);
                for k in 0..3 {
                    jac.set_column(k, &(jac.column(k) + dg[k] * g * *w));
                }
            }
        } else {
            // Rays from x: Φ(−tθ) t² = t Φ(θ) and ∂Φ(−tθ) t² = −∂Φ(θ).
            let four_pi = 4.0 * std::f64::consts::PI;
            for (n, wn) in self.sphere.directions.iter().zip(&self.sphere.weights) {
                let b = rel.dot(n);
                let disc = b * b + self.radius * self.radius - dist * dist;
                let tmax = -b + disc.max(0.0).sqrt();
                if tmax <= 0.0 {
                    continue;
                }
                let mut m0 = Vector3::zeros();
                let mut m1 = Vector3::zeros();
                for (s, ws) in self.radial.0.iter().zip(&self.radial.1) {
                    let t = s * tmax;
                    let g = self.force.force(&(x + n * t)) - f0;
                    m0 += g * (ws * tmax);
                    m1 += g * (ws * tmax * t);
                }
                let w = four_pi * wn;
                val += oseen_unchecked(n) * m1 * w;
                let dg = oseen_grad_unchecked(n);
                for k in 0..3 {
                    jac.set_column(k, &(jac.column(k) - dg[k] * m0 * w));
                }
            }
        }
        (val, jac)
    }

    /// Sum of the ball corrections `Σ_i Φ∗(1_{B_i} f)` and their Jacobian.
    pub fn correction(&self, x: &Point) -> (Vector3<f64>, Matrix3<f64>) {
        let mut val = Vector3::zeros();
        let mut jac = Matrix3::zeros();
        let near = self.quad.near_factor * self.radius;
        for b in &self.balls {
            let rel = x - b.center;
            let (g, dg) = ball_convolution(self.radius, &rel);
            val += g * b.f0;
            for k in 0..3 {
                jac.set_column(k, &(jac.column(k) + dg[k] * b.f0));
            }
            if rel.norm() < near {
                let (v, j) = self.remainder(x, &b.center, &b.f0);
                val += v;
                jac += j;
            } else {
                // Φ(z − y') ≈ Φ(z) − y'·∇Φ(z) for y' = y − X.
                val += oseen_unchecked(&rel) * b.m0;
                let dg = oseen_grad_unchecked(&rel);
                for m in 0..3 {
                    val -= dg[m] * b.m1.column(m);
                    jac.set_column(m, &(jac.column(m) + dg[m] * b.m0));
                }
                jac -= oseen_hessian_contract(&rel, &b.m1);
            }
        }
        (val, jac)
    }
}

impl FlowField for BackgroundVelocity {
    fn value(&self, x: &Point) -> Vector3<f64> {
        let v = self.force.exact_velocity(x);
        if self.balls.is_empty() {
            return v;
        }
        v - self.correction(x).0
    }

    fn gradient(&self, x: &Point) -> Matrix3<f64> {
        let g = self.force.exact_gradient(x);
        if self.balls.is_empty() {
            return g;
        }
        g - self.correction(x).1
    }
}

/// Where strains are sampled.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum StrainMode {
    Point,
    SurfaceAvg,
}

/// Trace deviation beyond which a sampled strain is rejected (relative to
/// max(1, |e|)).
pub const STRAIN_TRACE_LIMIT: f64 = 1e-6;

/// Strains `ε_i` at each particle, with the largest trace/asymmetry removed
/// by the projection.
pub fn strain_at_centers(
    field: &dyn FlowField,
    cfg: &ParticleConfig,
    mode: StrainMode,
    rule: &SphereRule,
) -> Result<(Vec<SymStrain>, f64)> {
    let raw: Vec<Matrix3<f64>> = (0..cfg.n())
        .into_par_iter()
        .map(|i| sample_strain(field, &cfg.centers[i], cfg.radius, mode, rule))
        .collect();
    project_strains(raw)
}

pub(crate) fn sample_strain(
    field: &dyn FlowField,
    center: &Point,
    radius: f64,
    mode: StrainMode,
    rule: &SphereRule,
) -> Matrix3<f64> {
    match mode {
        StrainMode::Point => field.symmetric_gradient(center),
        StrainMode::SurfaceAvg => {
            let mut acc = Matrix3::zeros();
            for (n, w) in rule.directions.iter().zip(&rule.weights) {
                acc += field.symmetric_gradient(&(center + n * radius)) * *w;
            }
            acc
        }
    }
}

pub(crate) fn project_strains(raw: Vec<Matrix3<f64>>) -> Result<(Vec<SymStrain>, f64)> {
    let mut worst: f64 = 0.0;
    let mut out = Vec::with_capacity(raw.len());
    for m in raw {
        if !m.iter().all(|v| v.is_finite()) {
            return Err(Error::Strain("non-finite strain sample".into()));
        }
        let rel = m.trace().abs() / m.norm().max(1.0);
        if rel > STRAIN_TRACE_LIMIT {
            return Err(Error::Strain(format!("trace deviation {rel:e} exceeds {STRAIN_TRACE_LIMIT:e}")));
        }
        let (s, dev) = SymStrain::project(m);
        worst = worst.max(dev);
        out.push(s);
    }
    Ok((out, worst))
}

/// Strains below this norm produce no dipole.
pub const NEGLIGIBLE_STRAIN: f64 = 1e-14;

pub(crate) fn dipole_specs(cfg: &ParticleConfig, strains: &[SymStrain]) -> Vec<DipoleSpec> {
    cfg.centers
        .iter()
        .zip(strains)
        .filter(|(_, e)| e.norm() >= NEGLIGIBLE_STRAIN)
        .map(|(c, e)| DipoleSpec { center: *c, radius: cfg.radius, strain: *e })
        .collect()
}

/// `base − Σ_i d_i`.
#[derive(Clone)]
pub struct DipoleCorrected {
    pub base: Arc<dyn FlowField>,
    pub dipoles: DipoleSum,
}

impl FlowField for DipoleCorrected {
    fn value(&self, x: &Point) -> Vector3<f64> {
        self.base.value(x) - self.dipoles.value(x)
    }
    fn gradient(&self, x: &Point) -> Matrix3<f64> {
        self.base.gradient(x) - self.dipoles.gradient(x)
    }
}

/// Explicit dipole approximation `ũ = v − Σ_i d_i[ε_i]`.
pub fn explicit_dipole_approx(
    v: Arc<dyn FlowField>,
    cfg: &ParticleConfig,
    strains: &[SymStrain],
    plan: &SumPlan,
) -> Result<DipoleCorrected> {
    if strains.len() != cfg.n() {
        return Err(Error::InvalidInput(format!("{} strains for {} particles", strains.len(), cfg.n())));
    }
    let dipoles = DipoleSum::new(dipole_specs(cfg, strains), *plan)?;
    Ok(DipoleCorrected { base: v, dipoles })
}

/// Evaluate a field at many points in parallel, preserving order.
pub fn sample_values(field: &dyn FlowField, points: &[Point]) -> Vec<Vector3<f64>> {
    points.par_iter().map(|x| field.value(x)).collect()
}

/// CSV "x,y,z,ux,uy,uz".
pub fn write_samples<W: Write>(field: &dyn FlowField, points: &[Point], mut w: W) -> Result<()> {
    writeln!(w, "x,y,z,ux,uy,uz")?;
    for (x, u) in points.iter().zip(sample_values(field, points)) {
        writeln!(w, "{:.16e},{:.16e},{:.16e},{:.16e},{:.16e},{:.16e}", x.x, x.y, x.z, u.x, u.y, u.z)?;
    }
    Ok(())
}

/// Read rows of CSV with a header; returns points and, when present, the
/// value columns.
pub fn read_samples<R: BufRead>(r: R) -> Result<(Vec<Point>, Option<Vec<Vector3<f64>>>)> {
    let mut pts = Vec::new();
    let mut vals = Vec::new();
    let mut width = None;
    for (i, line) in r.lines().enumerate() {
        let line = line?;
        let t = line.trim();
        if t.is_empty() || (i == 0 && t.starts_with('x')) {
            continue;
        }
        let v: Vec<f64> = t
            .split(',')
            .map(|s| s.trim().parse::<f64>())
            .collect::<std::result::Result<_, _>>()
            .map_err(|e| Error::Parse { line: i + 1, message: e.to_string() })?;
        if v.len() != 3 && v.len() != 6 {
            return Err(Error::Parse { line: i + 1, message: format!("expected 3 or 6 columns, got {}", v.len()) });
        }
        if *width.get_or_insert(v.len()) != v.len() {
            return Err(Error::Parse { line: i + 1, message: "inconsistent column count".into() });
        }
        pts.push(Point::new(v[0], v[1], v[2]));
        if v.len() == 6 {
            vals.push(Vector3::new(v[3], v[4], v[5]));
        }
    }
    Ok((pts, (width == Some(6)).then_some(vals)))
}
