//! Norms of field differences on Ω_δ and on bounded sets, the dissipation
//! energy, and log-log scaling fits.

use nalgebra::Vector3;
use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::fields::{FlowField, ForceField};
use crate::geometry::{ParticleConfig, RegionPredicate};
use crate::kernels::Point;
use crate::quadrature::{gauss_legendre_interval, SphereRule};

/// Structured sample set for sup norms: a uniform grid over `[−half_width,
/// half_width]³` plus rings at `exclusion_radius·factor` around every center.
#[derive(Clone, Debug, PartialEq)]
pub struct SupSampler {
    pub spacing: f64,
    pub half_width: f64,
    pub ring_factors: Vec<f64>,
    /// Number of directions per ring (a Lebedev size).
    pub ring_points: usize,
}

impl Default for SupSampler {
    fn default() -> SupSampler {
        SupSampler { spacing: 0.1, half_width: 1.25, ring_factors: vec![1.01, 1.1, 1.5], ring_points: 26 }
    }
}

impl SupSampler {
    /// Same sampler with the grid spacing divided by `k`.
    pub fn refined(&self, k: usize) -> SupSampler {
        SupSampler { spacing: self.spacing / k as f64, ..self.clone() }
    }

    /// Sample points inside the region, in a fixed order.
    pub fn points(&self, region: &RegionPredicate) -> Result<Vec<Point>> {
        if !(self.spacing > 0.0) || !(self.half_width > 0.0) {
            return Err(Error::InvalidInput("sampler spacing and width must be positive".into()));
        }
        let rule = SphereRule::lebedev(self.ring_points)
            .ok_or_else(|| Error::InvalidInput(format!("no {}-point sphere rule", self.ring_points)))?;
        let n = (2.0 * self.half_width / self.spacing).round() as usize;
        let mut pts = Vec::new();
        for k in 0..=n {
            for j in 0..=n {
                for i in 0..=n {
                    let p = Point::new(i as f64, j as f64, k as f64) * self.spacing - Point::repeat(self.half_width);
                    if region.contains(&p) {
                        pts.push(p);
                    }
                }
            }
        }
        let r = region.exclusion_radius;
        for c in region.centers() {
            for f in &self.ring_factors {
                for d in &rule.directions {
                    let p = c + d * (r * f);
                    if region.contains(&p) {
                        pts.push(p);
                    }
                }
            }
        }
        if pts.is_empty() {
            return Err(Error::EmptyRegion);
        }
        Ok(pts)
    }
}

/// Field values at the points, in parallel.
pub fn evaluate(field: &dyn FlowField, points: &[Point]) -> Vec<Vector3<f64>> {
    points.par_iter().map(|p| field.value(p)).collect()
}

/// max |a − b| over paired samples.
pub fn sup_of_difference(a: &[Vector3<f64>], b: &[Vector3<f64>]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y).norm()).fold(0.0, f64::max)
}

/// Sup over the structured sample set of `|a − b|`.
pub fn sup_norm_diff(a: &dyn FlowField, b: &dyn FlowField, region: &RegionPredicate, sampler: &SupSampler) -> Result<f64> {
    let pts = sampler.points(region)?;
    Ok(pts.par_iter().map(|p| (a.value(p) - b.value(p)).norm()).reduce(|| 0.0, f64::max))
}

/// Bounded integration domain.
#[derive(Clone, Copy, Debug, PartialEq)]
pub enum Domain {
    Ball { center: Point, radius: f64 },
    Box { lo: Point, hi: Point },
}

impl Domain {
    fn contains(&self, x: &Point) -> bool {
        match self {
            Domain::Ball { center, radius } => (x - center).norm() <= *radius,
            Domain::Box { lo, hi } => (0..3).all(|a| x[a] >= lo[a] && x[a] <= hi[a]),
        }
    }

    fn bounds(&self) -> (Point, Point) {
        match self {
            Domain::Ball { center, radius } => (center - Point::repeat(*radius), center + Point::repeat(*radius)),
            Domain::Box { lo, hi } => (*lo, *hi),
        }
    }
}

/// Composite Gauss rule on cubes covering the domain; cubes cut by a
/// particle surface are split into eight before applying the rule.
#[derive(Clone, Debug, PartialEq)]
pub struct CellQuadrature {
    pub cell: f64,
    pub order: usize,
}

impl Default for CellQuadrature {
    fn default() -> CellQuadrature {
        CellQuadrature { cell: 0.125, order: 2 }
    }
}

/// Quadrature nodes and weights.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct WeightedPoints {
    pub points: Vec<Point>,
    pub weights: Vec<f64>,
}

impl CellQuadrature {
    pub fn nodes(&self, domain: &Domain, cfg: Option<&ParticleConfig>) -> Result<WeightedPoints> {
        if !(self.cell > 0.0) || self.order == 0 {
            return Err(Error::Quadrature("cell size and order must be positive".into()));
        }
        let (lo, hi) = domain.bounds();
        let dims: Vec<usize> = (0..3).map(|a| ((hi[a] - lo[a]) / self.cell).ceil().max(1.0) as usize).collect();
        let half_diag = 0.5 * 3f64.sqrt() * self.cell;
        let mut out = WeightedPoints::default();
        for k in 0..dims[2] {
            for j in 0..dims[1] {
                for i in 0..dims[0] {
                    let corner = lo + Point::new(i as f64, j as f64, k as f64) * self.cell;
                    let center = corner + Point::repeat(0.5 * self.cell);
                    let cut = cfg.is_some_and(|c| {
                        c.centers.iter().any(|x| ((center - x).norm() - c.radius).abs() <= half_diag)
                    });
                    if cut {
                        let sub = 0.5 * self.cell;
                        for s in 0..8 {
                            let off = Point::new((s & 1) as f64, ((s >> 1) & 1) as f64, ((s >> 2) & 1) as f64) * sub;
                            self.push_cell(&mut out, corner + off, sub, domain);
                        }
                    } else {
                        self.push_cell(&mut out, corner, self.cell, domain);
                    }
                }
            }
        }
        if out.points.is_empty() {
            return Err(Error::EmptyRegion);
        }
        Ok(out)
    }

    fn push_cell(&self, out: &mut WeightedPoints, corner: Point, size: f64, domain: &Domain) {
        let (x, w) = gauss_legendre_interval(self.order, 0.0, size);
        for (c, wc) in x.iter().zip(&w) {
            for (b, wb) in x.iter().zip(&w) {
                for (a, wa) in x.iter().zip(&w) {
                    let p = corner + Point::new(*a, *b, *c);
                    if domain.contains(&p) {
                        out.points.push(p);
                        out.weights.push(wa * wb * wc);
                    }
                }
            }
        }
    }
}

/// `(Σ w |d|^p)^{1/p}` for difference magnitudes `d`.
pub fn lp_from_differences(diffs: &[f64], weights: &[f64], p: f64) -> Result<f64> {
    check_p(p)?;
    let s: f64 = diffs.iter().zip(weights).map(|(d, w)| w * d.powf(p)).sum();
    if !s.is_finite() {
        return Err(Error::Quadrature("non-finite L^p integrand".into()));
    }
    Ok(s.powf(1.0 / p))
}

fn check_p(p: f64) -> Result<()> {
    if !(1.0..=1.5).contains(&p) {
        return Err(Error::InvalidInput(format!("p = {p} outside [1, 3/2]")));
    }
    Ok(())
}

/// `‖a − b‖_{L^p(U)}` for p ∈ [1, 3/2], including ball interiors.
pub fn lp_norm_diff(
    a: &dyn FlowField,
    b: &dyn FlowField,
    domain: &Domain,
    p: f64,
    quad: &CellQuadrature,
    cfg: Option<&ParticleConfig>,
) -> Result<f64> {
    check_p(p)?;
    let nodes = quad.nodes(domain, cfg)?;
    let diffs: Vec<f64> = nodes.points.par_iter().map(|x| (a.value(x) - b.value(x)).norm()).collect();
    lp_from_differences(&diffs, &nodes.weights, p)
}

/// Dissipation energy over a ball with its estimated tail.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct EnergyReport {
    /// `∫_{B_radius} |ew|² − f^N·w`.
    pub energy: f64,
    /// `∫_{B_radius} |ew|²`.
    pub gradient_energy: f64,
    /// Estimate of `∫_{|x|>radius} |ew|²` assuming `|ew|² ∝ |x|⁻⁴`.
    pub tail: f64,
    pub radius: f64,
}

/// Quadrature spec for the energy.
#[derive(Clone, Debug, PartialEq)]
pub struct EnergyQuadrature {
    pub radius: f64,
    pub cells: CellQuadrature,
    /// Maximum tolerated tail fraction of the gradient energy.
    pub tail_tolerance: f64,
}

impl Default for EnergyQuadrature {
    fn default() -> EnergyQuadrature {
        EnergyQuadrature { radius: 3.0, cells: CellQuadrature { cell: 0.1, order: 2 }, tail_tolerance: 1e-3 }
    }
}

/// `E(w) = ∫ |ew|² − f^N·w` with `f^N = f` outside the balls and 0 inside.
pub fn dissipation_energy(
    w: &dyn FlowField,
    f: &ForceField,
    cfg: Option<&ParticleConfig>,
    quad: &EnergyQuadrature,
) -> Result<EnergyReport> {
    let domain = Domain::Ball { center: Point::zeros(), radius: quad.radius };
    let nodes = quad.cells.nodes(&domain, cfg)?;
    let inside = |x: &Point| cfg.is_some_and(|c| c.centers.iter().any(|y| (x - y).norm() < c.radius));
    let terms: Vec<(f64, f64)> = nodes
        .points
        .par_iter()
        .zip(&nodes.weights)
        .map(|(x, wt)| {
            let e = w.symmetric_gradient(x).norm_squared();
            let fx = f.force(x);
            let work = if fx == Vector3::zeros() || inside(x) { 0.0 } else { fx.dot(&w.value(x)) };
            (e * wt, work * wt)
        })
        .collect();
    // Sequential sums keep the result independent of the thread count.
    let grad: f64 = terms.iter().map(|t| t.0).sum();
    let work: f64 = terms.iter().map(|t| t.1).sum();
    let rule = SphereRule::lebedev(50).expect("50-point rule");
    let shell = rule.average(&Point::zeros(), quad.radius, |x, _| w.symmetric_gradient(&x).norm_squared());
    let tail = 4.0 * std::f64::consts::PI * shell * quad.radius.powi(3);
    if !(grad.is_finite() && work.is_finite()) {
        return Err(Error::Quadrature("non-finite energy integrand".into()));
    }
    if grad > 0.0 && tail > quad.tail_tolerance * grad {
        return Err(Error::Quadrature(format!(
            "energy tail {tail:.3e} exceeds {} of the gradient energy {grad:.3e}",
            quad.tail_tolerance
        )));
    }
    Ok(EnergyReport { energy: grad - work, gradient_energy: grad, tail, radius: quad.radius })
}

/// Least-squares slope of log y against log x, with the coefficient of
/// determination (None when the y values have zero variance).
pub fn fit_scaling_exponent(pairs: &[(f64, f64)]) -> Result<(f64, Option<f64>)> {
    if pairs.len() < 3 {
        return Err(Error::InvalidInput(format!("need at least 3 pairs, got {}", pairs.len())));
    }
    if pairs.iter().any(|&(x, y)| !(x > 0.0) || !(y > 0.0)) {
        return Err(Error::InvalidInput("scaling fit needs positive values".into()));
    }
    let lx: Vec<f64> = pairs.iter().map(|p| p.0.ln()).collect();
    let ly: Vec<f64> = pairs.iter().map(|p| p.1.ln()).collect();
    let n = pairs.len() as f64;
    let mx = lx.iter().sum::<f64>() / n;
    let my = ly.iter().sum::<f64>() / n;
    let sxx: f64 = lx.iter().map(|x| (x - mx).powi(2)).sum();
    let syy: f64 = ly.iter().map(|y| (y - my).powi(2)).sum();
    let sxy: f64 = lx.iter().zip(&ly).map(|(x, y)| (x - mx) * (y - my)).sum();
    if sxx <= 1e-300 * n {
        return Err(Error::DegenerateFit("all x values are equal".into()));
    }
    let slope = sxy / sxx;
    let r2 = if syy <= 1e-28 * n * (1.0 + my * my) { None } else { Some(sxy * sxy / (sxx * syy)) };
    Ok((slope, r2))
}

/// `d^k Σ_{j≠i} |x − X_j|^{−k}` where `X_i` is the center nearest to `x`.
pub fn scaled_inverse_sum(cfg: &ParticleConfig, x: &Point, k: i32) -> f64 {
    let nearest = cfg.nearest(x);
    let d = cfg.d_min();
    let s: f64 = cfg
        .centers
        .iter()
        .enumerate()
        .filter(|(j, _)| Some(*j) != nearest)
        .map(|(_, c)| (x - c).norm().powi(-k))
        .sum();
    d.powi(k) * s
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::fields::{AffineField, ZeroField};
    use crate::geometry::{generate_lattice, omega_delta_mask};
    use nalgebra::Matrix3;

    fn constant(c: Vector3<f64>) -> AffineField {
        AffineField { origin: Point::zeros(), offset: c, matrix: Matrix3::zeros() }
    }

    #[test]
    fn sup_norm_basics() {
        let cfg = generate_lattice(2, 0.01, 1.0, 0.0, 0).unwrap();
        let region = omega_delta_mask(&cfg, 0.1).unwrap();
        let s = SupSampler { spacing: 0.25, ..Default::default() };
        let c = Vector3::new(0.3, -0.4, 1.2);
        assert_eq!(sup_norm_diff(&ZeroField, &ZeroField, &region, &s).unwrap(), 0.0);
        let d = sup_norm_diff(&constant(c), &ZeroField, &region, &s).unwrap();
        assert!((d - c.norm()).abs() < 1e-15);
        for p in s.points(&region).unwrap() {
            assert!(region.contains(&p));
        }
    }

    #[test]
    fn lp_of_constant_difference() {
        let c = Vector3::new(0.0, 0.6, 0.8);
        let lo = Point::new(-0.5, -0.25, 0.0);
        let hi = Point::new(0.5, 0.25, 1.0);
        let domain = Domain::Box { lo, hi };
        let vol: f64 = 0.5;
        for p in [1.0, 1.25, 1.5] {
            let v = lp_norm_diff(&constant(c), &ZeroField, &domain, p, &CellQuadrature::default(), None).unwrap();
            assert!((v - vol.powf(1.0 / p)).abs() < 1e-12);
        }
        assert!(lp_norm_diff(&ZeroField, &ZeroField, &domain, 2.0, &CellQuadrature::default(), None).is_err());
        let ball = Domain::Ball { center: Point::zeros(), radius: 1.0 };
        let cfg = generate_lattice(2, 0.01, 1.0, 0.0, 0).unwrap();
        let q = CellQuadrature { cell: 0.05, order: 2 };
        let nodes = q.nodes(&ball, Some(&cfg)).unwrap();
        let vol: f64 = nodes.weights.iter().sum();
        assert!((vol - 4.0 * std::f64::consts::PI / 3.0).abs() < 2e-2);
    }

    #[test]
    fn fit_exponents() {
        let pairs: Vec<(f64, f64)> = (1..6).map(|i| (i as f64, (i * i) as f64)).collect();
        let (s, r2) = fit_scaling_exponent(&pairs).unwrap();
        assert!((s - 2.0).abs() < 1e-12 && (r2.unwrap() - 1.0).abs() < 1e-12);
        let flat: Vec<(f64, f64)> = (1..6).map(|i| (i as f64, 3.0)).collect();
        let (s, r2) = fit_scaling_exponent(&flat).unwrap();
        assert!(s.abs() < 1e-12 && r2.is_none());
        assert!(matches!(fit_scaling_exponent(&[(1.0, 1.0), (1.0, 2.0), (1.0, 3.0)]), Err(Error::DegenerateFit(_))));
    }

    #[test]
    fn energy_of_zero_and_rigid_fields() {
        let f = crate::fields::manufactured_force(Vector3::new(1.0, 0.0, 0.0), 0.4, Point::zeros()).unwrap();
        let q = EnergyQuadrature { radius: 1.0, cells: CellQuadrature { cell: 0.25, order: 2 }, tail_tolerance: 1e-3 };
        assert_eq!(dissipation_energy(&ZeroField, &f, None, &q).unwrap().energy, 0.0);
        let zero = f.scaled(0.0);
        let rigid = AffineField {
            origin: Point::zeros(),
            offset: Vector3::new(1.0, 2.0, 0.0),
            matrix: Vector3::new(0.0, 0.0, 1.0).cross_matrix(),
        };
        let e = dissipation_energy(&rigid, &zero, None, &q).unwrap();
        assert!(e.energy.abs() < 1e-14);
    }
}
