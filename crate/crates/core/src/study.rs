//! Convergence studies along a schedule of (N, φ) pairs: the full pipeline
//! per entry, the report CSV and plots, and the viscosity-coefficient sweep.

use std::io::Write;
use std::path::Path;
use std::sync::Arc;
use std::time::Instant;

use nalgebra::Vector3;
use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::fields::{
    background_velocity, explicit_dipole_approx, manufactured_force, strain_at_centers, BackgroundMode,
    BallQuadrature, FlowField, ForceField, StrainMode,
};
use crate::geometry::{
    coarse_density_anchored, default_delta, generate_lattice, generate_rsa, lattice_spacing, omega_delta_mask,
    validate_assumptions, DensityField, ParticleConfig, DEFAULT_C_SEP, DEFAULT_EPS_PHI_LOG,
};
use crate::homogenize::{HomogenizeOptions, Homogenizer};
use crate::kernels::{Point, SumPlan};
use crate::metrics::{evaluate, lp_from_differences, sup_of_difference, CellQuadrature, Domain, SupSampler};
use crate::quadrature::SphereRule;
use crate::reflections::reflect_until;

/// How configurations are generated.
#[derive(Clone, Copy, Debug, PartialEq)]
pub enum Generator {
    Lattice { jitter: f64 },
    Rsa { gap_factor: f64 },
}

/// One (N, φ) pair; N = n_per_axis³.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct ScheduleEntry {
    pub n_per_axis: usize,
    pub phi: f64,
    /// Boundary-layer width; defaults to N^{−5/12}.
    pub delta: Option<f64>,
    /// Coarse cube side; defaults to the lattice-aligned choice.
    pub cube_side: Option<f64>,
}

impl ScheduleEntry {
    pub fn new(n_per_axis: usize, phi: f64) -> ScheduleEntry {
        ScheduleEntry { n_per_axis, phi, delta: None, cube_side: None }
    }

    pub fn n(&self) -> usize {
        self.n_per_axis.pow(3)
    }

    pub fn delta(&self) -> f64 {
        self.delta.unwrap_or_else(|| default_delta(self.n()))
    }
}

/// Finite rendering of the limit N → ∞, φ log N → 0.
#[derive(Clone, Debug, PartialEq)]
pub struct Schedule {
    pub entries: Vec<ScheduleEntry>,
    pub seed: u64,
    pub generator: Generator,
    pub box_scale: f64,
}

impl Schedule {
    /// N ∈ {64, 216, 512, 1000} with φ ∈ {0.03, 0.02, 0.015, 0.01} on jittered
    /// lattices in the unit ball.
    pub fn standard() -> Schedule {
        Schedule {
            entries: vec![
                ScheduleEntry::new(4, 0.03),
                ScheduleEntry::new(6, 0.02),
                ScheduleEntry::new(8, 0.015),
                ScheduleEntry::new(10, 0.01),
            ],
            seed: 20240611,
            generator: Generator::Lattice { jitter: 0.1 },
            box_scale: 1.0,
        }
    }

    /// N strictly increasing and φ log N strictly decreasing.
    pub fn validate(&self) -> Result<()> {
        if self.entries.is_empty() {
            return Err(Error::InvalidInput("empty schedule".into()));
        }
        for w in self.entries.windows(2) {
            let (a, b) = (&w[0], &w[1]);
            if b.n() <= a.n() {
                return Err(Error::InvalidInput("N must increase strictly along the schedule".into()));
            }
            if b.phi * (b.n() as f64).ln() >= a.phi * (a.n() as f64).ln() {
                return Err(Error::InvalidInput("phi·log N must decrease strictly along the schedule".into()));
            }
        }
        Ok(())
    }

    /// Seed of entry `i`, split from the root seed.
    pub fn entry_seed(&self, i: usize) -> u64 {
        // SplitMix64 step on root ⊕ index.
        let mut z = self.seed ^ (i as u64).wrapping_mul(0x9E37_79B9_7F4A_7C15);
        z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
        z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
        z ^ (z >> 31)
    }

    pub fn config(&self, i: usize) -> Result<ParticleConfig> {
        let e = &self.entries[i];
        match self.generator {
            Generator::Lattice { jitter } => generate_lattice(e.n_per_axis, e.phi, self.box_scale, jitter, self.entry_seed(i)),
            Generator::Rsa { gap_factor } => generate_rsa(e.n(), e.phi, self.box_scale, gap_factor, self.entry_seed(i)),
        }
    }

    /// Coarse cube side for entry `i`: for lattices, `m·d` with m the divisor
    /// of n closest to `N^{−1/6}/d`, so cubes tile the lattice cells exactly;
    /// otherwise `N^{−1/6}`.
    pub fn cube_side(&self, i: usize) -> f64 {
        let e = &self.entries[i];
        if let Some(s) = e.cube_side {
            return s;
        }
        let target = (e.n() as f64).powf(-1.0 / 6.0) * self.box_scale;
        match self.generator {
            Generator::Lattice { .. } => {
                let n = e.n_per_axis;
                let d = lattice_spacing(n, self.box_scale);
                let m = (1..=n)
                    .filter(|m| n % m == 0)
                    .min_by(|a, b| {
                        let da = (*a as f64 - target / d).abs();
                        let db = (*b as f64 - target / d).abs();
                        da.partial_cmp(&db).unwrap()
                    })
                    .unwrap_or(1);
                m as f64 * d
            }
            Generator::Rsa { .. } => target,
        }
    }

    /// Anchor vertex of the cube grid.
    fn cube_anchor(&self, i: usize) -> Point {
        match self.generator {
            Generator::Lattice { .. } => {
                let n = self.entries[i].n_per_axis;
                Point::repeat(-0.5 * n as f64 * lattice_spacing(n, self.box_scale))
            }
            Generator::Rsa { .. } => Point::repeat(-(self.box_scale + 1.0)),
        }
    }
}

/// Force used by the studies.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct ForceSpec {
    pub amplitude: Vector3<f64>,
    pub support_radius: f64,
    pub center: Point,
}

impl Default for ForceSpec {
    fn default() -> ForceSpec {
        ForceSpec { amplitude: Vector3::new(0.3, -0.5, 1.0), support_radius: 0.45, center: Point::zeros() }
    }
}

impl ForceSpec {
    pub fn build(&self) -> Result<ForceField> {
        manufactured_force(self.amplitude, self.support_radius, self.center)
    }
}

/// Numerical settings of a study.
#[derive(Clone, Debug, PartialEq)]
pub struct StudyOptions {
    pub force: ForceSpec,
    pub sampler: SupSampler,
    pub lp_quadrature: CellQuadrature,
    /// U = B_{factor·L} for the L^p columns.
    pub lp_radius_factor: f64,
    /// Upper bound on the homogenization grid spacing; the spacing used is
    /// min(s/2, grid_h_max).
    pub grid_h_max: f64,
    pub reflect_tol: f64,
    pub reflect_max_iter: usize,
    pub plan: SumPlan,
    pub strain_points: usize,
    pub ball_quadrature: BallQuadrature,
    pub fixed_point_tol: f64,
    pub fixed_point_max_iter: usize,
    pub c_sep: f64,
    pub eps_phi_log: f64,
    /// Record wall times; when false the wall_ms column is 0 so reports are
    /// byte-for-byte reproducible.
    pub record_timings: bool,
}

impl Default for StudyOptions {
    fn default() -> StudyOptions {
        StudyOptions {
            force: ForceSpec::default(),
            sampler: SupSampler::default(),
            lp_quadrature: CellQuadrature::default(),
            lp_radius_factor: 2.0,
            grid_h_max: 0.05,
            reflect_tol: 1e-6,
            reflect_max_iter: 20,
            plan: SumPlan::direct(),
            strain_points: 26,
            ball_quadrature: BallQuadrature::default(),
            fixed_point_tol: 1e-10,
            fixed_point_max_iter: 50,
            c_sep: DEFAULT_C_SEP,
            eps_phi_log: DEFAULT_EPS_PHI_LOG,
            record_timings: false,
        }
    }
}

/// One row of the report.
#[derive(Clone, Debug, PartialEq)]
pub struct ReportRow {
    pub n: usize,
    pub phi: f64,
    pub radius: f64,
    pub d_min: f64,
    pub delta: f64,
    pub s: f64,
    pub err_sup_over_phi: f64,
    pub err_l1_over_phi: f64,
    pub err_l32_over_phi: f64,
    pub v_vhat_over_phi: f64,
    pub ut_uhat_over_phi: f64,
    pub uhat_ubar_over_phi2: f64,
    pub reflect_iters: usize,
    pub wall_ms: u64,
    /// Why the entry failed, if it did; numeric columns are then NaN.
    pub failure: Option<String>,
}

impl ReportRow {
    pub fn failed(e: &ScheduleEntry, message: String) -> ReportRow {
        ReportRow {
            n: e.n(),
            phi: e.phi,
            radius: f64::NAN,
            d_min: f64::NAN,
            delta: e.delta(),
            s: f64::NAN,
            err_sup_over_phi: f64::NAN,
            err_l1_over_phi: f64::NAN,
            err_l32_over_phi: f64::NAN,
            v_vhat_over_phi: f64::NAN,
            ut_uhat_over_phi: f64::NAN,
            uhat_ubar_over_phi2: f64::NAN,
            reflect_iters: 0,
            wall_ms: 0,
            failure: Some(message),
        }
    }
}

/// Report CSV columns, in order.
pub const COLUMNS: [&str; 14] = [
    "N",
    "phi",
    "R",
    "d_min",
    "delta",
    "s",
    "err_sup_over_phi",
    "err_l1_over_phi",
    "err_l32_over_phi",
    "v_vhat_over_phi",
    "ut_uhat_over_phi",
    "uhat_ubar_over_phi2",
    "reflect_iters",
    "wall_ms",
];

/// Ratio columns that get a plot.
pub const RATIO_COLUMNS: [&str; 6] = [
    "err_sup_over_phi",
    "err_l1_over_phi",
    "err_l32_over_phi",
    "v_vhat_over_phi",
    "ut_uhat_over_phi",
    "uhat_ubar_over_phi2",
];

/// Rows of a study in schedule order.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct ExperimentReport {
    pub rows: Vec<ReportRow>,
}

impl ExperimentReport {
    /// Values of a ratio column, in row order.
    pub fn column(&self, name: &str) -> Option<Vec<f64>> {
        let get: fn(&ReportRow) -> f64 = match name {
            "err_sup_over_phi" => |r| r.err_sup_over_phi,
            "err_l1_over_phi" => |r| r.err_l1_over_phi,
            "err_l32_over_phi" => |r| r.err_l32_over_phi,
            "v_vhat_over_phi" => |r| r.v_vhat_over_phi,
            "ut_uhat_over_phi" => |r| r.ut_uhat_over_phi,
            "uhat_ubar_over_phi2" => |r| r.uhat_ubar_over_phi2,
            _ => return None,
        };
        Some(self.rows.iter().map(get).collect())
    }

    pub fn write_csv<W: Write>(&self, mut w: W) -> Result<()> {
        writeln!(w, "{}", COLUMNS.join(","))?;
        for r in &self.rows {
            writeln!(
                w,
                "{},{:e},{:e},{:e},{:e},{:e},{:e},{:e},{:e},{:e},{:e},{:e},{},{}",
                r.n,
                r.phi,
                r.radius,
                r.d_min,
                r.delta,
                r.s,
                r.err_sup_over_phi,
                r.err_l1_over_phi,
                r.err_l32_over_phi,
                r.v_vhat_over_phi,
                r.ut_uhat_over_phi,
                r.uhat_ubar_over_phi2,
                r.reflect_iters,
                r.wall_ms
            )?;
        }
        Ok(())
    }

    /// One SVG per ratio column: log-scaled N on x, linear y.
    pub fn write_plots(&self, dir: &Path) -> Result<Vec<std::path::PathBuf>> {
        let mut out = Vec::new();
        for name in RATIO_COLUMNS {
            let ys = self.column(name).unwrap_or_default();
            let pts: Vec<(f64, f64)> =
                self.rows.iter().zip(ys).filter(|(_, y)| y.is_finite()).map(|(r, y)| (r.n as f64, y)).collect();
            let path = dir.join(format!("{name}.svg"));
            std::fs::write(&path, svg_plot(name, &pts))?;
            out.push(path);
        }
        Ok(out)
    }
}

fn svg_plot(title: &str, pts: &[(f64, f64)]) -> String {
    let (w, h, m) = (480.0, 320.0, 50.0);
    let mut s = format!(
        "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"{w}\" height=\"{h}\" viewBox=\"0 0 {w} {h}\">\n\
         <rect width=\"100%\" height=\"100%\" fill=\"white\"/>\n\
         <text x=\"{}\" y=\"20\" text-anchor=\"middle\" font-family=\"sans-serif\" font-size=\"14\">{title}</text>\n\
         <line x1=\"{m}\" y1=\"{}\" x2=\"{}\" y2=\"{}\" stroke=\"black\"/>\n\
         <line x1=\"{m}\" y1=\"{m}\" x2=\"{m}\" y2=\"{}\" stroke=\"black\"/>\n",
        w / 2.0,
        h - m,
        w - m,
        h - m,
        h - m
    );
    if !pts.is_empty() {
        let lx: Vec<f64> = pts.iter().map(|p| p.0.ln()).collect();
        let (x0, x1) = (lx.iter().cloned().fold(f64::INFINITY, f64::min), lx.iter().cloned().fold(f64::NEG_INFINITY, f64::max));
        let y1 = pts.iter().map(|p| p.1).fold(0.0, f64::max) * 1.1;
        let y0 = pts.iter().map(|p| p.1).fold(0.0, f64::min);
        let sx = |x: f64| if x1 > x0 { m + (x - x0) / (x1 - x0) * (w - 2.0 * m) } else { w / 2.0 };
        let sy = |y: f64| if y1 > y0 { h - m - (y - y0) / (y1 - y0) * (h - 2.0 * m) } else { h / 2.0 };
        let path: Vec<String> = pts.iter().zip(&lx).map(|(p, x)| format!("{:.2},{:.2}", sx(*x), sy(p.1))).collect();
        s.push_str(&format!("<polyline fill=\"none\" stroke=\"steelblue\" stroke-width=\"2\" points=\"{}\"/>\n", path.join(" ")));
        for (p, x) in pts.iter().zip(&lx) {
            s.push_str(&format!(
                "<circle cx=\"{:.2}\" cy=\"{:.2}\" r=\"3\" fill=\"steelblue\"/>\n\
                 <text x=\"{:.2}\" y=\"{}\" text-anchor=\"middle\" font-family=\"sans-serif\" font-size=\"10\">{}</text>\n",
                sx(*x),
                sy(p.1),
                sx(*x),
                h - m + 15.0,
                p.0
            ));
        }
        s.push_str(&format!(
            "<text x=\"{}\" y=\"{}\" font-family=\"sans-serif\" font-size=\"10\">{:.3e}</text>\n\
             <text x=\"{}\" y=\"{}\" font-family=\"sans-serif\" font-size=\"10\">{:.3e}</text>\n",
            4.0,
            sy(y1) + 4.0,
            y1,
            4.0,
            sy(y0) + 4.0,
            y0
        ));
    }
    s.push_str(&format!("<text x=\"{}\" y=\"{}\" text-anchor=\"middle\" font-family=\"sans-serif\" font-size=\"12\">N (log scale)</text>\n</svg>\n", w / 2.0, h - 10.0));
    s
}

/// Everything built for one schedule entry.
pub struct EntryRun {
    pub cfg: ParticleConfig,
    pub density: DensityField,
    pub homogenizer: Homogenizer,
    /// Ω_δ sample points and the values of u_approx there.
    pub samples: Vec<Point>,
    pub u_approx: Vec<Vector3<f64>>,
    pub row: ReportRow,
}

/// Run the pipeline for entry `i`: configuration → background flow →
/// reflections → u_approx; coarse density → mollify → v̂ → û → ū; norms.
pub fn run_entry(schedule: &Schedule, i: usize, opts: &StudyOptions) -> Result<EntryRun> {
    let start = Instant::now();
    let entry = schedule.entries[i];
    let cfg = schedule.config(i)?;
    let report = validate_assumptions(&cfg, opts.c_sep, opts.eps_phi_log);
    if !report.all_pass() {
        return Err(Error::InvalidInput(format!("assumptions failed: {report}")));
    }
    let force = opts.force.build()?;
    let phi = cfg.phi();
    let delta = entry.delta();
    let rule = SphereRule::lebedev(opts.strain_points)
        .ok_or_else(|| Error::InvalidInput(format!("no {}-point sphere rule", opts.strain_points)))?;

    // Microscopic side.
    let v: Arc<dyn FlowField> =
        Arc::new(background_velocity(&force, Some(&cfg), BackgroundMode::Punctured, opts.ball_quadrature)?);
    let reflected = reflect_until(v.clone(), &cfg, opts.reflect_tol, opts.reflect_max_iter, &opts.plan, &rule)?;
    let (strains, _) = strain_at_centers(&*v, &cfg, StrainMode::SurfaceAvg, &rule)?;
    let explicit = explicit_dipole_approx(v.clone(), &cfg, &strains, &opts.plan)?;

    // Homogenized side.
    let s = schedule.cube_side(i);
    let density = coarse_density_anchored(&cfg, s, schedule.cube_anchor(i))?.mollify(0.5 * s)?;
    let h = (0.5 * s).min(opts.grid_h_max);
    let hopts = HomogenizeOptions {
        fixed_point_tol: opts.fixed_point_tol,
        max_iter: opts.fixed_point_max_iter,
        ..HomogenizeOptions::new(phi, h)
    };
    let homogenizer = Homogenizer::new(&force, &density, hopts)?;
    let hat_v = homogenizer.hat_v();
    let hat_u = homogenizer.hat_u();
    let (bar_u, _) = homogenizer.bar_u()?;

    // Sup norms over Ω_δ.
    let region = omega_delta_mask(&cfg, delta)?;
    let samples = opts.sampler.points(&region)?;
    let v_s = evaluate(&*v, &samples);
    let dk = reflected.field.dipoles.values(&samples)?;
    let d1 = explicit.dipoles.values(&samples)?;
    let u_approx: Vec<Vector3<f64>> = v_s.iter().zip(&dk).map(|(a, b)| a - b).collect();
    let u_tilde: Vec<Vector3<f64>> = v_s.iter().zip(&d1).map(|(a, b)| a - b).collect();
    let hv = evaluate(&hat_v, &samples);
    let hu = evaluate(&hat_u, &samples);
    let bu = evaluate(&bar_u, &samples);

    // L^p over U, interiors included.
    let domain = Domain::Ball { center: Point::zeros(), radius: opts.lp_radius_factor * cfg.box_scale };
    let nodes = opts.lp_quadrature.nodes(&domain, Some(&cfg))?;
    let diffs: Vec<f64> = nodes.points.par_iter().map(|x| (reflected.field.value(x) - bar_u.value(x)).norm()).collect();

    let row = ReportRow {
        n: cfg.n(),
        phi,
        radius: cfg.radius,
        d_min: cfg.d_min(),
        delta,
        s,
        err_sup_over_phi: sup_of_difference(&u_approx, &bu) / phi,
        err_l1_over_phi: lp_from_differences(&diffs, &nodes.weights, 1.0)? / phi,
        err_l32_over_phi: lp_from_differences(&diffs, &nodes.weights, 1.5)? / phi,
        v_vhat_over_phi: sup_of_difference(&v_s, &hv) / phi,
        ut_uhat_over_phi: sup_of_difference(&u_tilde, &hu) / phi,
        uhat_ubar_over_phi2: sup_of_difference(&hu, &bu) / (phi * phi),
        reflect_iters: reflected.trace.iterations,
        wall_ms: if opts.record_timings { start.elapsed().as_millis() as u64 } else { 0 },
        failure: None,
    };
    Ok(EntryRun { cfg, density, homogenizer, samples, u_approx, row })
}

/// Run every entry in order; failed entries are recorded, not fatal.
pub fn convergence_study(schedule: &Schedule, opts: &StudyOptions) -> Result<ExperimentReport> {
    schedule.validate()?;
    let mut report = ExperimentReport::default();
    for i in 0..schedule.entries.len() {
        let row = match run_entry(schedule, i, opts) {
            Ok(run) => run.row,
            Err(e) => ReportRow::failed(&schedule.entries[i], e.to_string()),
        };
        report.rows.push(row);
    }
    Ok(report)
}

/// Result of minimizing `‖u_approx − ū_β‖_∞(Ω_δ)` over β.
#[derive(Clone, Debug, PartialEq)]
pub struct BetaSweep {
    pub beta: f64,
    pub objective: f64,
    /// Every (β, objective) evaluated, in evaluation order.
    pub evaluations: Vec<(f64, f64)>,
}

/// Coarse scan of β over `[lo, hi]` followed by golden-section refinement
/// around the best scan point.
pub fn beta_sweep(run: &EntryRun, lo: f64, hi: f64, scan: usize, tol: f64) -> Result<BetaSweep> {
    if !(hi > lo) || scan < 3 {
        return Err(Error::InvalidInput("beta sweep needs lo < hi and at least 3 scan points".into()));
    }
    let phi = run.homogenizer.options().phi;
    let mut evaluations = Vec::new();
    let mut objective = |beta: f64| -> Result<f64> {
        let (u, _) = run.homogenizer.bar_u_beta(beta)?;
        let vals = evaluate(&u, &run.samples);
        let j = sup_of_difference(&run.u_approx, &vals) / phi;
        evaluations.push((beta, j));
        Ok(j)
    };
    let step = (hi - lo) / (scan - 1) as f64;
    let mut best = (lo, f64::INFINITY);
    let mut k_best = 0;
    for k in 0..scan {
        let b = lo + k as f64 * step;
        let j = objective(b)?;
        if j < best.1 {
            best = (b, j);
            k_best = k;
        }
    }
    let mut a = lo + k_best.saturating_sub(1) as f64 * step;
    let mut b = (lo + (k_best + 1) as f64 * step).min(hi);
    let g = (5f64.sqrt() - 1.0) / 2.0;
    let mut c = b - g * (b - a);
    let mut d = a + g * (b - a);
    let mut fc = objective(c)?;
    let mut fd = objective(d)?;
    while b - a > tol {
        if fc < fd {
            b = d;
            d = c;
            fd = fc;
            c = b - g * (b - a);
            fc = objective(c)?;
        } else {
            a = c;
            c = d;
            fc = fd;
            d = a + g * (b - a);
            fd = objective(d)?;
        }
    }
    for (beta, j) in [(c, fc), (d, fd)] {
        if j < best.1 {
            best = (beta, j);
        }
    }
    Ok(BetaSweep { beta: best.0, objective: best.1, evaluations })
}
