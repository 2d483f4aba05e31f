//! Closed-form Stokes kernels: Oseen tensor, its gradient, the pressure
//! kernel, stresslet contraction, the single-sphere strain dipole, the rotlet
//! and the Oseen convolution of a uniform ball.

use nalgebra::{Matrix3, Vector3};
use std::f64::consts::PI;

use crate::error::{Error, Result};

pub type Point = Vector3<f64>;

/// Absolute tolerance on symmetry and trace for strain matrices.
pub const STRAIN_TOL: f64 = 1e-12;

/// Symmetric trace-free 3×3 matrix.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct SymStrain(Matrix3<f64>);

impl SymStrain {
    pub fn zero() -> SymStrain {
        SymStrain(Matrix3::zeros())
    }

    /// Accept `m` only if it is symmetric and trace-free within [`STRAIN_TOL`].
    pub fn new(m: Matrix3<f64>) -> Result<SymStrain> {
        let dev = Self::deviation(&m);
        if !dev.is_finite() || dev > STRAIN_TOL {
            return Err(Error::Strain(format!("deviation from symmetric trace-free is {dev:e}")));
        }
        Ok(Self::project(m).0)
    }

    /// Symmetrize and remove the trace. Returns the projected strain and the
    /// size of the removed part so callers can report it.
    pub fn project(m: Matrix3<f64>) -> (SymStrain, f64) {
        let dev = Self::deviation(&m);
        let s = 0.5 * (m + m.transpose());
        let t = s.trace() / 3.0;
        (SymStrain(s - Matrix3::identity() * t), dev)
    }

    /// Largest of the antisymmetric part and the trace, both absolute.
    pub fn deviation(m: &Matrix3<f64>) -> f64 {
        let asym = (m - m.transpose()).abs().max() * 0.5;
        asym.max(m.trace().abs())
    }

    pub fn matrix(&self) -> &Matrix3<f64> {
        &self.0
    }

    pub fn norm(&self) -> f64 {
        self.0.norm()
    }

    pub fn scale(&self, s: f64) -> SymStrain {
        SymStrain(self.0 * s)
    }
}

impl std::ops::Add for SymStrain {
    type Output = SymStrain;
    fn add(self, o: SymStrain) -> SymStrain {
        SymStrain(self.0 + o.0)
    }
}

impl std::ops::Sub for SymStrain {
    type Output = SymStrain;
    fn sub(self, o: SymStrain) -> SymStrain {
        SymStrain(self.0 - o.0)
    }
}

fn check_nonsingular(x: &Point) -> Result<f64> {
    let r = x.norm();
    if r == 0.0 || !r.is_finite() {
        return Err(Error::SingularPoint(r));
    }
    Ok(r)
}

/// Oseen tensor Φ(x) = (I/|x| + x⊗x/|x|³)/(8π).
pub fn oseen(x: &Point) -> Result<Matrix3<f64>> {
    check_nonsingular(x)?;
    Ok(oseen_unchecked(x))
}

#[inline]
pub fn oseen_unchecked(x: &Point) -> Matrix3<f64> {
    let r2 = x.norm_squared();
    let r = r2.sqrt();
    let c = 1.0 / (8.0 * PI * r);
    (Matrix3::identity() + x * x.transpose() / r2) * c
}

/// Gradient of the Oseen tensor: `g[k][(i, j)] = ∂_k Φ_ij(x)`.
pub fn oseen_grad(x: &Point) -> Result<[Matrix3<f64>; 3]> {
    check_nonsingular(x)?;
    Ok(oseen_grad_unchecked(x))
}

#[inline]
pub fn oseen_grad_unchecked(x: &Point) -> [Matrix3<f64>; 3] {
    let r2 = x.norm_squared();
    let r = r2.sqrt();
    let c3 = 1.0 / (8.0 * PI * r2 * r);
    let c5 = 3.0 * c3 / r2;
    let mut g = [Matrix3::zeros(); 3];
    for (k, gk) in g.iter_mut().enumerate() {
        for i in 0..3 {
            for j in 0..3 {
                let mut v = -x[i] * x[j] * x[k] * c5;
                if i == j {
                    v -= x[k] * c3;
                }
                if i == k {
                    v += x[j] * c3;
                }
                if j == k {
                    v += x[i] * c3;
                }
                gk[(i, j)] = v;
            }
        }
    }
    g
}

/// Second derivatives of the Oseen tensor contracted with a first-moment
/// matrix: returns `H[(i, k)] = Σ_{j,m} ∂_k ∂_m Φ_ij(x) D[(j, m)]`.
pub fn oseen_hessian_contract(x: &Point, d: &Matrix3<f64>) -> Matrix3<f64> {
    let r2 = x.norm_squared();
    let r = r2.sqrt();
    let i3 = 1.0 / (r2 * r);
    let i5 = i3 / r2;
    let i7 = i5 / r2;
    let delta = |a: usize, b: usize| if a == b { 1.0 } else { 0.0 };
    let mut h = Matrix3::zeros();
    for i in 0..3 {
        for k in 0..3 {
            let mut acc = 0.0;
            for j in 0..3 {
                for m in 0..3 {
                    let dd = d[(j, m)];
                    if dd == 0.0 {
                        continue;
                    }
                    let mut v = delta(i, j) * (-delta(k, m) * i3 + 3.0 * x[k] * x[m] * i5);
                    v += (delta(i, m) * delta(j, k) + delta(j, m) * delta(i, k)) * i3;
                    v -= 3.0 * (delta(i, m) * x[j] + delta(j, m) * x[i]) * x[k] * i5;
                    v -= 3.0 * (delta(i, k) * x[j] * x[m] + delta(j, k) * x[i] * x[m] + delta(k, m) * x[i] * x[j]) * i5;
                    v += 15.0 * x[i] * x[j] * x[m] * x[k] * i7;
                    acc += v * dd;
                }
            }
            h[(i, k)] = acc / (8.0 * PI);
        }
    }
    h
}

/// Pressure kernel Π(x) = x/(4π|x|³).
pub fn pressure_kernel(x: &Point) -> Result<Point> {
    let r = check_nonsingular(x)?;
    Ok(x / (4.0 * PI * r * r * r))
}

/// Stresslet contraction `ε_ki ∂_k Φ_ij(x) = −3 x (x·εx) / (8π|x|⁵)`.
pub fn stresslet_dir(eps: &SymStrain, x: &Point) -> Result<Point> {
    check_nonsingular(x)?;
    Ok(stresslet_unchecked(eps.matrix(), x))
}

#[inline]
pub fn stresslet_unchecked(eps: &Matrix3<f64>, x: &Point) -> Point {
    let r2 = x.norm_squared();
    let r5 = r2 * r2 * r2.sqrt();
    let q = x.dot(&(eps * x));
    x * (-3.0 * q / (8.0 * PI * r5))
}

/// Parameters of a strain dipole: a sphere of radius `radius` at `center`
/// that cancels the ambient strain `strain`.
#[derive(Clone, Copy, Debug)]
pub struct DipoleSpec {
    pub center: Point,
    pub radius: f64,
    pub strain: SymStrain,
}

impl DipoleSpec {
    pub fn new(center: Point, radius: f64, strain: SymStrain) -> Result<DipoleSpec> {
        if !(radius > 0.0) || !radius.is_finite() {
            return Err(Error::InvalidInput(format!("dipole radius must be positive, got {radius}")));
        }
        Ok(DipoleSpec { center, radius, strain })
    }
}

/// Relative slack that keeps points on the sphere (up to roundoff) on the
/// interior branch, so that gradients sampled on the surface see the rigid
/// interior.
const SURFACE_SLACK: f64 = 1e-10;

#[inline]
fn is_inside(rho2: f64, radius: f64) -> bool {
    rho2 <= radius * radius * (1.0 + SURFACE_SLACK)
}

/// Explicit dipole field: `ε(x−X)` inside the sphere and the exterior
/// solution `(5/2)R³ r q/ρ⁵ + R⁵(εr/ρ⁵ − (5/2) r q/ρ⁷)` outside, where
/// `r = x−X`, `ρ = |r|`, `q = r·εr`.
pub fn dipole_field(spec: &DipoleSpec, x: &Point) -> Point {
    dipole_value_raw(&spec.center, spec.radius, spec.strain.matrix(), x)
}

#[inline]
pub(crate) fn dipole_value_raw(center: &Point, radius: f64, eps: &Matrix3<f64>, x: &Point) -> Point {
    let r = x - center;
    let rho2 = r.norm_squared();
    let er = eps * r;
    if is_inside(rho2, radius) {
        return er;
    }
    let q = r.dot(&er);
    let r3 = radius * radius * radius;
    let r5 = r3 * radius * radius;
    let inv2 = 1.0 / rho2;
    let inv5 = inv2 * inv2 / rho2.sqrt();
    let inv7 = inv5 * inv2;
    r * (2.5 * q * (r3 * inv5 - r5 * inv7)) + er * (r5 * inv5)
}

/// Leading (stresslet) part of the exterior dipole field, `(5/2)R³ r q/ρ⁵`.
pub fn dipole_leading(spec: &DipoleSpec, x: &Point) -> Point {
    let r = x - spec.center;
    let rho2 = r.norm_squared();
    let q = r.dot(&(spec.strain.matrix() * r));
    let r3 = spec.radius.powi(3);
    r * (2.5 * r3 * q / (rho2 * rho2 * rho2.sqrt()))
}

/// Jacobian of the dipole field, `J[(a, m)] = ∂_m d_a`.
pub fn dipole_gradient(spec: &DipoleSpec, x: &Point) -> Matrix3<f64> {
    dipole_gradient_raw(&spec.center, spec.radius, spec.strain.matrix(), x)
}

#[inline]
pub(crate) fn dipole_gradient_raw(
    center: &Point,
    radius: f64,
    eps: &Matrix3<f64>,
    x: &Point,
) -> Matrix3<f64> {
    let r = x - center;
    let rho2 = r.norm_squared();
    if is_inside(rho2, radius) {
        return *eps;
    }
    let er = eps * r;
    let q = r.dot(&er);
    let r3 = radius * radius * radius;
    let r5 = r3 * radius * radius;
    let inv2 = 1.0 / rho2;
    let inv5 = inv2 * inv2 / rho2.sqrt();
    let inv7 = inv5 * inv2;
    let inv9 = inv7 * inv2;
    // d = c(ρ) q r + R⁵ εr/ρ⁵ with c = (5/2)(R³/ρ⁵ − R⁵/ρ⁷).
    let c = 2.5 * (r3 * inv5 - r5 * inv7);
    let dc_over_rho = 2.5 * (-5.0 * r3 * inv7 + 7.0 * r5 * inv9);
    let r_er = r * er.transpose();
    let r_r = r * r.transpose();
    let er_r = er * r.transpose();
    Matrix3::identity() * (c * q)
        + r_er * (2.0 * c)
        + r_r * (q * dc_over_rho)
        + eps * (r5 * inv5)
        + er_r * (-5.0 * r5 * inv7)
}

/// Rotlet: `ω∧(x−X)` inside, `R³ ω∧(x−X)/|x−X|³` outside.
pub fn rotlet_field(center: &Point, radius: f64, omega: &Point, x: &Point) -> Point {
    let r = x - center;
    let rho2 = r.norm_squared();
    let w = omega.cross(&r);
    if is_inside(rho2, radius) {
        w
    } else {
        w * (radius.powi(3) / (rho2 * rho2.sqrt()))
    }
}

/// Jacobian of the rotlet, `J[(a, m)] = ∂_m u_a`.
pub fn rotlet_gradient(center: &Point, radius: f64, omega: &Point, x: &Point) -> Matrix3<f64> {
    let r = x - center;
    let rho2 = r.norm_squared();
    let cross = omega.cross_matrix();
    if is_inside(rho2, radius) {
        return cross;
    }
    let rho3 = rho2 * rho2.sqrt();
    let r3 = radius.powi(3);
    let w = omega.cross(&r);
    cross * (r3 / rho3) - w * r.transpose() * (3.0 * r3 / (rho3 * rho2))
}

/// Oseen convolution of the indicator of a ball of radius `radius` centred at
/// the origin, `G(x) = ∫_B Φ(x−y) dy`, and its gradient `dg[k] = ∂_k G`.
///
/// Built from the radial function `h(r) = ∫_B |x−y| dy` through
/// `Φ = (δΔ − ∇∇)|x|/(8π)`.
pub fn ball_convolution(radius: f64, x: &Point) -> (Matrix3<f64>, [Matrix3<f64>; 3]) {
    let r2 = x.norm_squared();
    let r = r2.sqrt();
    let big_r2 = radius * radius;
    // a = h'/r, b = a'/r, db = b'.
    let (a, b, db) = if r >= radius {
        let v = 4.0 / 3.0 * PI * big_r2 * radius;
        let r3 = r2 * r;
        let r4 = r2 * r2;
        (
            v * (1.0 / r - big_r2 / (5.0 * r3)),
            v * (-1.0 / r3 + 0.6 * big_r2 / (r3 * r2)),
            v * (3.0 / r4 - 3.0 * big_r2 / (r4 * r2)),
        )
    } else {
        (4.0 * PI / 3.0 * big_r2 - 4.0 * PI / 15.0 * r2, -8.0 * PI / 15.0, 0.0)
    };
    let c = 1.0 / (8.0 * PI);
    let xx = x * x.transpose();
    let g = (Matrix3::identity() * (2.0 * a + b * r2) - xx * b) * c;
    let diag = 4.0 * b + r * db;
    let off = if r > 0.0 { db / r } else { 0.0 };
    let mut dg = [Matrix3::zeros(); 3];
    for (k, m) in dg.iter_mut().enumerate() {
        for i in 0..3 {
            for j in 0..3 {
                let mut v = -off * x[i] * x[j] * x[k];
                if i == j {
                    v += diag * x[k];
                }
                if i == k {
                    v -= b * x[j];
                }
                if j == k {
                    v -= b * x[i];
                }
                m[(i, j)] = v * c;
            }
        }
    }
    (g, dg)
}

/// Sum `n` terms in a fixed pairwise tree so that the rounding pattern is a
/// function of `n` alone.
pub fn pairwise_sum<T, F>(n: usize, term: &F) -> T
where
    T: std::ops::Add<Output = T> + Default,
    F: Fn(usize) -> T,
{
    fn rec<T, F>(lo: usize, hi: usize, term: &F) -> T
    where
        T: std::ops::Add<Output = T> + Default,
        F: Fn(usize) -> T,
    {
        if hi - lo <= 8 {
            let mut acc = T::default();
            for j in lo..hi {
                acc = acc + term(j);
            }
            return acc;
        }
        let mid = lo + (hi - lo) / 2;
        rec(lo, mid, term) + rec(mid, hi, term)
    }
    rec(0, n, term)
}

/// How many-body dipole sums are evaluated.
#[derive(Clone, Copy, Debug, PartialEq)]
pub enum SumMethod {
    Direct,
    Tree,
}

/// Summation plan. `theta`, `order` and `tol` only matter for the tree.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct SumPlan {
    pub method: SumMethod,
    pub theta: f64,
    pub order: usize,
    pub tol: f64,
}

impl SumPlan {
    pub fn direct() -> SumPlan {
        SumPlan { method: SumMethod::Direct, theta: 0.5, order: 2, tol: 1e-6 }
    }

    pub fn tree(theta: f64, order: usize) -> SumPlan {
        SumPlan { method: SumMethod::Tree, theta, order, tol: 1e-6 }
    }

    pub fn validate(&self) -> Result<()> {
        if self.method == SumMethod::Tree
            && (!(self.theta > 0.0 && self.theta <= 1.0) || self.order > 2 || !(self.tol > 0.0))
        {
            return Err(Error::InvalidInput(format!(
                "tree plan needs theta in (0, 1], order <= 2 and tol > 0, got {self:?}"
            )));
        }
        Ok(())
    }
}

impl Default for SumPlan {
    fn default() -> Self {
        SumPlan::direct()
    }
}

/// A fixed collection of dipoles, evaluable at arbitrary points.
#[derive(Clone, Debug)]
pub struct DipoleSum {
    specs: Vec<DipoleSpec>,
    tree: Option<crate::tree::DipoleTree>,
    plan: SumPlan,
}

impl DipoleSum {
    pub fn new(specs: Vec<DipoleSpec>, plan: SumPlan) -> Result<DipoleSum> {
        plan.validate()?;
        let tree = match plan.method {
            SumMethod::Direct => None,
            SumMethod::Tree => {
                if let Some(first) = specs.first() {
                    if specs.iter().any(|s| s.radius != first.radius) {
                        return Err(Error::InvalidInput("tree summation needs a common radius".into()));
                    }
                }
                Some(crate::tree::DipoleTree::build(&specs, plan.theta, plan.order, plan.tol))
            }
        };
        Ok(DipoleSum { specs, tree, plan })
    }

    pub fn specs(&self) -> &[DipoleSpec] {
        &self.specs
    }

    pub fn plan(&self) -> SumPlan {
        self.plan
    }

    /// Direct sum in fixed pairwise order.
    pub fn value_direct(&self, x: &Point) -> Point {
        let s = &self.specs;
        pairwise_sum(s.len(), &|j| dipole_value_raw(&s[j].center, s[j].radius, s[j].strain.matrix(), x))
    }

    pub fn value(&self, x: &Point) -> Point {
        match &self.tree {
            Some(t) => t.evaluate(x),
            None => self.value_direct(x),
        }
    }

    pub fn gradient(&self, x: &Point) -> Matrix3<f64> {
        let s = &self.specs;
        pairwise_sum(s.len(), &|j| dipole_gradient_raw(&s[j].center, s[j].radius, s[j].strain.matrix(), x))
    }

    /// Gradient with the contribution of dipole `skip` left out.
    pub fn gradient_excluding(&self, x: &Point, skip: usize) -> Matrix3<f64> {
        let s = &self.specs;
        pairwise_sum(s.len(), &|j| {
            if j == skip {
                Matrix3::zeros()
            } else {
                dipole_gradient_raw(&s[j].center, s[j].radius, s[j].strain.matrix(), x)
            }
        })
    }

    /// Evaluate at many points. With a tree plan, a seeded 1% sample is
    /// checked against the direct sum.
    pub fn values(&self, points: &[Point]) -> Result<Vec<Point>> {
        use rayon::prelude::*;
        let out: Vec<Point> = points.par_iter().map(|x| self.value(x)).collect();
        if self.tree.is_some() && !points.is_empty() {
            let err = self.sampled_tree_error(points, &out);
            if err > 10.0 * self.plan.tol {
                return Err(Error::Accuracy { observed: err, limit: 10.0 * self.plan.tol });
            }
        }
        Ok(out)
    }

    fn sampled_tree_error(&self, points: &[Point], approx: &[Point]) -> f64 {
        use rand::{Rng, SeedableRng};
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(0x7e57);
        let count = (points.len() / 100).max(1);
        let mut worst: f64 = 0.0;
        for _ in 0..count {
            let i = rng.gen_range(0..points.len());
            let exact = self.value_direct(&points[i]);
            worst = worst.max(relative_error(&approx[i], &exact));
        }
        worst
    }
}

pub(crate) fn relative_error(approx: &Point, exact: &Point) -> f64 {
    let e = (approx - exact).norm();
    if e == 0.0 {
        0.0
    } else {
        e / exact.norm().max(f64::MIN_POSITIVE)
    }
}

/// Evaluate `Σ_i d_i(x)` at each point.
pub fn sum_dipoles(specs: &[DipoleSpec], points: &[Point], plan: &SumPlan) -> Result<Vec<Point>> {
    DipoleSum::new(specs.to_vec(), *plan)?.values(points)
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn random_point(rng: &mut ChaCha8Rng) -> Point {
        Point::new(rng.gen_range(-1.0..1.0), rng.gen_range(-1.0..1.0), rng.gen_range(-1.0..1.0))
    }

    fn random_strain(rng: &mut ChaCha8Rng) -> SymStrain {
        let m = Matrix3::from_fn(|_, _| rng.gen_range(-1.0..1.0));
        SymStrain::project(m).0
    }

    #[test]
    fn oseen_unit_vector() {
        let phi = oseen(&Point::x()).unwrap();
        let expect = Matrix3::from_diagonal(&Vector3::new(2.0, 1.0, 1.0)) / (8.0 * PI);
        assert!((phi - expect).norm() < 1e-16);
        assert!(matches!(oseen(&Point::zeros()), Err(Error::SingularPoint(_))));
    }

    #[test]
    fn oseen_symmetry_and_homogeneity() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        for _ in 0..50 {
            let x = random_point(&mut rng);
            let lam: f64 = rng.gen_range(0.1..10.0);
            let p = oseen(&x).unwrap();
            assert!((p - p.transpose()).norm() < 1e-15);
            assert!((p - oseen(&-x).unwrap()).norm() < 1e-15);
            let pl = oseen(&(x * lam)).unwrap();
            assert!((pl * lam - p).norm() < 1e-13 * p.norm());
            let g = oseen_grad(&x).unwrap();
            let gl = oseen_grad(&(x * lam)).unwrap();
            for k in 0..3 {
                assert!((gl[k] * lam * lam - g[k]).norm() < 1e-13 * g[k].norm());
            }
            let pk = pressure_kernel(&x).unwrap();
            assert!((pressure_kernel(&(x * lam)).unwrap() * lam * lam - pk).norm() < 1e-13 * pk.norm());
            assert!((pressure_kernel(&-x).unwrap() + pk).norm() < 1e-15);
        }
    }

    #[test]
    fn oseen_grad_component_and_fd() {
        let g = oseen_grad(&Point::x()).unwrap();
        assert!((g[0][(0, 0)] + 1.0 / (4.0 * PI)).abs() < 1e-16);
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let h = 1e-5;
        for _ in 0..20 {
            let x = random_point(&mut rng).normalize();
            let g = oseen_grad(&x).unwrap();
            for k in 0..3 {
                let mut e = Point::zeros();
                e[k] = h;
                let fd = (oseen(&(x + e)).unwrap() - oseen(&(x - e)).unwrap()) / (2.0 * h);
                assert!((fd - g[k]).abs().max() < 1e-8);
            }
        }
    }

    #[test]
    fn oseen_hessian_matches_fd() {
        let x = Point::new(0.4, -0.7, 0.5);
        let d = Matrix3::new(0.1, 0.2, -0.3, 0.5, -0.1, 0.7, 0.2, 0.4, -0.6);
        let h = oseen_hessian_contract(&x, &d);
        let step = 1e-6;
        for k in 0..3 {
            let mut e = Point::zeros();
            e[k] = step;
            let gp = oseen_grad_unchecked(&(x + e));
            let gm = oseen_grad_unchecked(&(x - e));
            for i in 0..3 {
                let mut fd = 0.0;
                for j in 0..3 {
                    for m in 0..3 {
                        fd += (gp[m][(i, j)] - gm[m][(i, j)]) / (2.0 * step) * d[(j, m)];
                    }
                }
                assert!((fd - h[(i, k)]).abs() < 1e-7, "{fd} {}", h[(i, k)]);
            }
        }
    }

    #[test]
    fn pressure_kernel_values() {
        let p = pressure_kernel(&Point::z()).unwrap();
        assert!((p - Point::new(0.0, 0.0, 1.0 / (4.0 * PI))).norm() < 1e-16);
    }

    #[test]
    fn stresslet_examples() {
        let eps = SymStrain::new(Matrix3::from_diagonal(&Vector3::new(1.0, -0.5, -0.5))).unwrap();
        let s = stresslet_dir(&eps, &Point::x()).unwrap();
        assert!((s - Point::new(-3.0 / (8.0 * PI), 0.0, 0.0)).norm() < 1e-16);
        let eps = SymStrain::new(Matrix3::from_diagonal(&Vector3::new(1.0, -1.0, 0.0))).unwrap();
        assert_eq!(stresslet_dir(&eps, &Point::z()).unwrap(), Point::zeros());
    }

    #[test]
    fn strain_validation() {
        assert!(SymStrain::new(Matrix3::identity()).is_err());
        let mut m = Matrix3::zeros();
        m[(0, 1)] = 1.0;
        assert!(SymStrain::new(m).is_err());
        let (s, dev) = SymStrain::project(m);
        assert!((dev - 0.5).abs() < 1e-15);
        assert_eq!(s.matrix()[(0, 1)], 0.5);
        assert_eq!(s.matrix()[(1, 0)], 0.5);
    }

    #[test]
    fn dipole_continuity_and_gradient() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        for _ in 0..20 {
            let eps = random_strain(&mut rng);
            let spec = DipoleSpec::new(random_point(&mut rng), 0.1, eps).unwrap();
            let n = random_point(&mut rng).normalize();
            let x = spec.center + n * 0.1;
            let d = dipole_field(&spec, &x);
            assert!((d - eps.matrix() * (n * 0.1)).norm() < 1e-12);
            // Exterior branch evaluated exactly on the sphere.
            let outside = x + n * 1e-9;
            assert!((dipole_field(&spec, &outside) - d).norm() < 1e-8);
            // Exterior gradient against central differences.
            let y = spec.center + n * 0.25;
            let jac = dipole_gradient(&spec, &y);
            let h = 1e-6;
            for m in 0..3 {
                let mut e = Point::zeros();
                e[m] = h;
                let fd = (dipole_field(&spec, &(y + e)) - dipole_field(&spec, &(y - e))) / (2.0 * h);
                for a in 0..3 {
                    assert!((fd[a] - jac[(a, m)]).abs() < 1e-7, "{} {}", fd[a], jac[(a, m)]);
                }
            }
            assert!(jac.trace().abs() < 1e-12);
        }
    }

    #[test]
    fn rotlet_continuity_and_gradient() {
        let omega = Point::new(0.3, -0.2, 0.9);
        let c = Point::new(0.1, 0.2, 0.3);
        let n = Point::new(1.0, 2.0, -2.0) / 3.0;
        let on = rotlet_field(&c, 0.2, &omega, &(c + n * 0.2));
        assert!((on - omega.cross(&(n * 0.2))).norm() < 1e-15);
        let y = c + n * 0.5;
        let jac = rotlet_gradient(&c, 0.2, &omega, &y);
        let h = 1e-6;
        for m in 0..3 {
            let mut e = Point::zeros();
            e[m] = h;
            let fd = (rotlet_field(&c, 0.2, &omega, &(y + e)) - rotlet_field(&c, 0.2, &omega, &(y - e))) / (2.0 * h);
            for a in 0..3 {
                assert!((fd[a] - jac[(a, m)]).abs() < 1e-8);
            }
        }
    }

    #[test]
    fn ball_convolution_matches_quadrature() {
        use crate::quadrature::gauss_legendre_interval;
        let radius = 0.3;
        // Spherical-coordinate product rule: radial × polar × azimuthal Gauss.
        let (rs, wr) = gauss_legendre_interval(40, 0.0, radius);
        let (ct, wt) = gauss_legendre_interval(80, -1.0, 1.0);
        let (ph, wp) = gauss_legendre_interval(160, 0.0, 2.0 * PI);
        for x in [Point::new(0.5, 0.2, -0.1), Point::new(1.3, 0.0, 0.4)] {
            let (g, dg) = ball_convolution(radius, &x);
            let mut q = Matrix3::zeros();
            for (r, a) in rs.iter().zip(&wr) {
                for (c, b) in ct.iter().zip(&wt) {
                    let st = (1.0 - c * c).sqrt();
                    for (p, d) in ph.iter().zip(&wp) {
                        let y = Point::new(st * p.cos(), st * p.sin(), *c) * *r;
                        q += oseen_unchecked(&(x - y)) * (a * b * d * r * r);
                    }
                }
            }
            assert!((g - q).norm() < 1e-9 * q.norm(), "{g} {q}");
            let h = 1e-5;
            for k in 0..3 {
                let mut e = Point::zeros();
                e[k] = h;
                let fd = (ball_convolution(radius, &(x + e)).0 - ball_convolution(radius, &(x - e)).0) / (2.0 * h);
                assert!((fd - dg[k]).norm() < 1e-8);
            }
        }
        // Inside: closed form (R²/3 − 2r²/15) I + x xᵀ/15, continuous at r = R.
        let x = Point::new(0.1, -0.05, 0.12);
        let (g, _) = ball_convolution(radius, &x);
        let expect = Matrix3::identity() * (radius * radius / 3.0 - 2.0 * x.norm_squared() / 15.0)
            + x * x.transpose() / 15.0;
        assert!((g - expect).norm() < 1e-15);
        let s = Point::new(0.0, radius, 0.0);
        let (gi, _) = ball_convolution(radius, &(s * (1.0 - 1e-12)));
        let (go, _) = ball_convolution(radius, &(s * (1.0 + 1e-12)));
        assert!((gi - go).norm() < 1e-10);
    }

    #[test]
    fn pairwise_sum_matches_naive() {
        let s: f64 = pairwise_sum(1000, &|j| j as f64);
        assert_eq!(s, 499500.0);
        let e: f64 = pairwise_sum(0, &|j| j as f64);
        assert_eq!(e, 0.0);
    }
}
