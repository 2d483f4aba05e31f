//! Rigid projections on spheres and the method of reflections with
//! stresslet-dipole corrections.

use std::io::Write;
use std::sync::Arc;

use nalgebra::{Matrix3, Vector3};
use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::fields::{
    dipole_specs, explicit_dipole_approx, project_strains, sample_strain, DipoleCorrected, FlowField, StrainMode,
};
use crate::geometry::ParticleConfig;
use crate::kernels::{dipole_gradient_raw, DipoleSum, Point, SumPlan, SymStrain};
use crate::quadrature::SphereRule;

/// Rigid-body motion `V + ω∧(x − center)`.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct RigidMotion {
    pub velocity: Vector3<f64>,
    pub omega: Vector3<f64>,
    pub center: Point,
}

impl FlowField for RigidMotion {
    fn value(&self, x: &Point) -> Vector3<f64> {
        self.velocity + self.omega.cross(&(x - self.center))
    }
    fn gradient(&self, _x: &Point) -> Matrix3<f64> {
        self.omega.cross_matrix()
    }
}

/// Projection onto rigid motions on the sphere `∂B_R(center)`:
/// `V = ⨍ w`, `ω = (3/2R²) ⨍ (x − X)∧w`.
pub fn rigid_projection(field: &dyn FlowField, center: &Point, radius: f64, rule: &SphereRule) -> Result<RigidMotion> {
    let mut v = Vector3::zeros();
    let mut m = Vector3::zeros();
    for (n, w) in rule.directions.iter().zip(&rule.weights) {
        let r = n * radius;
        let u = field.value(&(center + r));
        if !u.iter().all(|c| c.is_finite()) {
            return Err(Error::Quadrature("non-finite field value on the sphere".into()));
        }
        v += u * *w;
        m += r.cross(&u) * *w;
    }
    Ok(RigidMotion { velocity: v, omega: m * (1.5 / (radius * radius)), center: *center })
}

/// Per-iteration record of the reflection residuals.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct ResidualTrace {
    /// Max over particles of the norm of the surface-averaged strain of the
    /// current iterate; entry k belongs to v_k.
    pub residuals: Vec<f64>,
    /// Max over particles and surface nodes of the pointwise strain norm.
    pub pointwise: Vec<f64>,
    /// residuals[k+1]/residuals[k].
    pub ratios: Vec<f64>,
    pub iterations: usize,
}

impl ResidualTrace {
    pub fn mean_ratio(&self) -> f64 {
        if self.ratios.is_empty() {
            return 0.0;
        }
        self.ratios.iter().sum::<f64>() / self.ratios.len() as f64
    }

    /// CSV "k,residual,ratio"; the ratio is empty for k = 0.
    pub fn write_csv<W: Write>(&self, mut w: W) -> Result<()> {
        writeln!(w, "k,residual,ratio")?;
        for (k, r) in self.residuals.iter().enumerate() {
            if k == 0 {
                writeln!(w, "{k},{r:.16e},")?;
            } else {
                writeln!(w, "{k},{r:.16e},{:.16e}", self.ratios[k - 1])?;
            }
        }
        Ok(())
    }
}

/// Strain residuals of the current field on each ball, before a step.
#[derive(Clone, Debug)]
pub struct StepResiduals {
    /// Surface-averaged strain of the field on each ball.
    pub averaged: Vec<SymStrain>,
    /// Max pointwise strain norm over the surface nodes of each ball.
    pub pointwise: Vec<f64>,
}

impl StepResiduals {
    pub fn max_averaged(&self) -> f64 {
        self.averaged.iter().map(|e| e.norm()).fold(0.0, f64::max)
    }
    pub fn max_pointwise(&self) -> f64 {
        self.pointwise.iter().copied().fold(0.0, f64::max)
    }
}

/// One reflection on an arbitrary field: subtract the dipoles that cancel the
/// surface-averaged strain on every ball.
pub fn reflection_step(
    field: Arc<dyn FlowField>,
    cfg: &ParticleConfig,
    plan: &SumPlan,
    rule: &SphereRule,
) -> Result<(DipoleCorrected, StepResiduals)> {
    let samples: Vec<(Matrix3<f64>, f64)> = (0..cfg.n())
        .into_par_iter()
        .map(|i| {
            let c = cfg.centers[i];
            let mut worst: f64 = 0.0;
            for n in &rule.directions {
                worst = worst.max(field.symmetric_gradient(&(c + n * cfg.radius)).norm());
            }
            (sample_strain(&*field, &c, cfg.radius, StrainMode::SurfaceAvg, rule), worst)
        })
        .collect();
    let (raw, pointwise): (Vec<_>, Vec<_>) = samples.into_iter().unzip();
    let (averaged, _) = project_strains(raw)?;
    let next = explicit_dipole_approx(field, cfg, &averaged, plan)?;
    Ok((next, StepResiduals { averaged, pointwise }))
}

/// Result of the reflection iteration: `base − Σ_i d_i[E_i]`.
#[derive(Clone)]
pub struct Reflected {
    pub field: DipoleCorrected,
    /// Total dipole strength on each particle.
    pub strengths: Vec<SymStrain>,
    pub trace: ResidualTrace,
}

/// Iterate reflections until the averaged residual falls below
/// `tol·(initial residual)` or `k_max` steps were taken.
///
/// Because dipoles are linear in their strain, the k-th iterate is
/// `v − Σ_i d_i[E_i^k]` and one step updates
/// `E_i ← E_i + ⨍_{∂B_i} e(v_k)`, evaluated with the rigid interior branch of
/// the particle's own dipole.
pub fn reflect_until(
    field: Arc<dyn FlowField>,
    cfg: &ParticleConfig,
    tol: f64,
    k_max: usize,
    plan: &SumPlan,
    rule: &SphereRule,
) -> Result<Reflected> {
    let n = cfg.n();
    let radius = cfg.radius;
    // Strain of the base field at every surface node, and its averages.
    let base_nodes: Vec<Vec<Matrix3<f64>>> = (0..n)
        .into_par_iter()
        .map(|i| {
            let c = cfg.centers[i];
            rule.directions.iter().map(|d| field.symmetric_gradient(&(c + d * radius))).collect()
        })
        .collect();
    let raw_avg: Vec<Matrix3<f64>> = (0..n)
        .into_par_iter()
        .map(|i| sample_strain(&*field, &cfg.centers[i], radius, StrainMode::SurfaceAvg, rule))
        .collect();
    let (base_avg, _) = project_strains(raw_avg)?;

    let mut strengths = vec![SymStrain::zero(); n];
    let mut trace = ResidualTrace::default();
    let mut residual = base_avg.clone();
    let mut pointwise = base_nodes
        .iter()
        .map(|nodes| nodes.iter().map(|e| e.norm()).fold(0.0, f64::max))
        .fold(0.0, f64::max);
    let first = max_norm(&residual);
    trace.residuals.push(first);
    trace.pointwise.push(pointwise);
    let mut k = 0;
    while k < k_max && trace.residuals[k] > tol * first {
        for i in 0..n {
            strengths[i] = strengths[i] + residual[i];
        }
        k += 1;
        let (r, p) = residuals_for(cfg, &base_avg, &base_nodes, &strengths, rule)?;
        residual = r;
        pointwise = p;
        let res = max_norm(&residual);
        let prev = trace.residuals[k - 1];
        trace.ratios.push(if prev > 0.0 { res / prev } else { 0.0 });
        trace.residuals.push(res);
        trace.pointwise.push(pointwise);
        if res > 10.0 * prev {
            return Err(Error::Contractivity { before: prev, after: res });
        }
    }
    trace.iterations = k;
    if trace.residuals[k] > tol * first {
        let ratio = trace.ratios.last().copied().unwrap_or(1.0);
        if ratio >= 0.9 {
            return Err(Error::NonConvergence { iterations: k, ratio });
        }
    }
    let dipoles = DipoleSum::new(dipole_specs(cfg, &strengths), *plan)?;
    Ok(Reflected { field: DipoleCorrected { base: field, dipoles }, strengths, trace })
}

fn max_norm(e: &[SymStrain]) -> f64 {
    e.iter().map(|s| s.norm()).fold(0.0, f64::max)
}

/// Surface-averaged and pointwise strain of `v − Σ_j d_j[E_j]` on each ball.
fn residuals_for(
    cfg: &ParticleConfig,
    base_avg: &[SymStrain],
    base_nodes: &[Vec<Matrix3<f64>>],
    strengths: &[SymStrain],
    rule: &SphereRule,
) -> Result<(Vec<SymStrain>, f64)> {
    let n = cfg.n();
    let radius = cfg.radius;
    let active: Vec<usize> = (0..n).filter(|&j| strengths[j].norm() > 0.0).collect();
    let per: Vec<(Matrix3<f64>, f64)> = (0..n)
        .into_par_iter()
        .map(|i| {
            let c = cfg.centers[i];
            let mut avg = Matrix3::zeros();
            let mut worst: f64 = 0.0;
            for (q, (d, w)) in rule.directions.iter().zip(&rule.weights).enumerate() {
                let x = c + d * radius;
                let mut g = Matrix3::zeros();
                for &j in &active {
                    if j != i {
                        g += dipole_gradient_raw(&cfg.centers[j], radius, strengths[j].matrix(), &x);
                    }
                }
                let sym = (g + g.transpose()) * 0.5;
                avg += sym * *w;
                let point = base_nodes[i][q] - strengths[i].matrix() - sym;
                worst = worst.max(point.norm());
            }
            (avg, worst)
        })
        .collect();
    let mut out = Vec::with_capacity(n);
    let mut worst: f64 = 0.0;
    for (i, (avg, p)) in per.into_iter().enumerate() {
        let (others, _) = SymStrain::project(avg);
        out.push(base_avg[i] - strengths[i] - others);
        worst = worst.max(p);
    }
    Ok((out, worst))
}
