//! Particle configurations, assumption checks, coarse-grained density and the
//! boundary-layer region.

use std::io::{BufRead, Write};
use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::kernels::Point;

/// Identical spheres of radius `radius` centred at `centers`, all inside the
/// ball of radius `box_scale`.
#[derive(Clone, Debug, PartialEq)]
pub struct ParticleConfig {
    pub centers: Vec<Point>,
    pub radius: f64,
    pub box_scale: f64,
    pub seed: u64,
}

impl ParticleConfig {
    /// Build and check containment and non-overlap.
    pub fn new(centers: Vec<Point>, radius: f64, box_scale: f64, seed: u64) -> Result<ParticleConfig> {
        if !(radius > 0.0) || !(box_scale > 0.0) {
            return Err(Error::InvalidInput(format!("radius {radius} and box scale {box_scale} must be positive")));
        }
        let cfg = ParticleConfig { centers, radius, box_scale, seed };
        cfg.check()?;
        Ok(cfg)
    }

    pub fn check(&self) -> Result<()> {
        let far = self.max_center_norm();
        if far + self.radius >= self.box_scale {
            return Err(Error::Domain(format!(
                "max |X_i| + R = {} is not below L = {}",
                far + self.radius,
                self.box_scale
            )));
        }
        let d = self.d_min();
        if d <= 2.0 * self.radius {
            return Err(Error::Overlap { d_min: d, two_r: 2.0 * self.radius });
        }
        Ok(())
    }

    pub fn n(&self) -> usize {
        self.centers.len()
    }

    /// Volume fraction in the rescaled convention φ = N R³.
    pub fn phi(&self) -> f64 {
        self.n() as f64 * self.radius.powi(3)
    }

    pub fn max_center_norm(&self) -> f64 {
        self.centers.iter().map(|c| c.norm()).fold(0.0, f64::max)
    }

    /// Minimum pairwise distance, +∞ for fewer than two particles.
    pub fn d_min(&self) -> f64 {
        min_pairwise_distance(&self.centers)
    }

    /// Index of the particle nearest to `x`.
    pub fn nearest(&self, x: &Point) -> Option<usize> {
        let mut best = None;
        let mut bd = f64::INFINITY;
        for (i, c) in self.centers.iter().enumerate() {
            let d = (c - x).norm_squared();
            if d < bd {
                bd = d;
                best = Some(i);
            }
        }
        best
    }

    pub fn write<W: Write>(&self, mut w: W) -> Result<()> {
        writeln!(w, "SSL1")?;
        writeln!(w, "{} {:.16e} {:.16e} {}", self.n(), self.radius, self.box_scale, self.seed)?;
        for c in &self.centers {
            writeln!(w, "{:.16e} {:.16e} {:.16e}", c.x, c.y, c.z)?;
        }
        Ok(())
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let f = std::fs::File::create(path)?;
        self.write(std::io::BufWriter::new(f))
    }

    /// Parse the text format without enforcing the geometric invariants, so
    /// that invalid configurations can still be inspected and reported on.
    pub fn read<R: BufRead>(r: R) -> Result<ParticleConfig> {
        let mut lines = r.lines().enumerate();
        let mut next = |what: &str| -> Result<(usize, String)> {
            for (i, l) in lines.by_ref() {
                let l = l?;
                if !l.trim().is_empty() {
                    return Ok((i + 1, l));
                }
            }
            Err(Error::Parse { line: 0, message: format!("unexpected end of file, expected {what}") })
        };
        let (ln, magic) = next("header")?;
        if magic.trim() != "SSL1" {
            return Err(Error::Parse { line: ln, message: format!("bad magic {magic:?}") });
        }
        let (ln, head) = next("N R L seed")?;
        let parts: Vec<&str> = head.split_whitespace().collect();
        if parts.len() != 4 {
            return Err(Error::Parse { line: ln, message: "expected 'N R L seed'".into() });
        }
        let perr = |m: String| Error::Parse { line: ln, message: m };
        let n: usize = parts[0].parse().map_err(|e| perr(format!("N: {e}")))?;
        let radius: f64 = parts[1].parse().map_err(|e| perr(format!("R: {e}")))?;
        let box_scale: f64 = parts[2].parse().map_err(|e| perr(format!("L: {e}")))?;
        let seed: u64 = parts[3].parse().map_err(|e| perr(format!("seed: {e}")))?;
        let mut centers = Vec::with_capacity(n);
        for _ in 0..n {
            let (ln, l) = next("center")?;
            let v: Vec<f64> = l
                .split_whitespace()
                .map(|t| t.parse::<f64>())
                .collect::<std::result::Result<_, _>>()
                .map_err(|e| Error::Parse { line: ln, message: format!("coordinate: {e}") })?;
            if v.len() != 3 {
                return Err(Error::Parse { line: ln, message: "expected 'x y z'".into() });
            }
            centers.push(Point::new(v[0], v[1], v[2]));
        }
        Ok(ParticleConfig { centers, radius, box_scale, seed })
    }

    pub fn load(path: &Path) -> Result<ParticleConfig> {
        let f = std::fs::File::open(path)?;
        ParticleConfig::read(std::io::BufReader::new(f))
    }
}

/// Minimum pairwise distance via a cell list; +∞ for fewer than two points.
pub fn min_pairwise_distance(points: &[Point]) -> f64 {
    let n = points.len();
    if n < 2 {
        return f64::INFINITY;
    }
    if n <= 64 {
        let mut best = f64::INFINITY;
        for i in 0..n {
            for j in (i + 1)..n {
                best = best.min((points[i] - points[j]).norm());
            }
        }
        return best;
    }
    let mut lo = Point::repeat(f64::INFINITY);
    let mut hi = Point::repeat(f64::NEG_INFINITY);
    for p in points {
        lo = lo.inf(p);
        hi = hi.sup(p);
    }
    let ext = (hi - lo).max().max(1e-300);
    // About two points per cell on average.
    let cells = ((n as f64 / 2.0).cbrt().ceil() as usize).clamp(1, 128);
    let cell = ext / cells as f64 * (1.0 + 1e-12);
    let grid = CellList::new(points, lo, cell, cells);
    // Search radius grows until a candidate is found; min is associative, so
    // the reduction is exact regardless of scheduling.
    (0..n)
        .into_par_iter()
        .map(|i| grid.nearest_other(points, i))
        .reduce(|| f64::INFINITY, f64::min)
}

struct CellList {
    lo: Point,
    cell: f64,
    dims: usize,
    starts: Vec<usize>,
    items: Vec<usize>,
}

impl CellList {
    fn new(points: &[Point], lo: Point, cell: f64, dims: usize) -> CellList {
        let ncell = dims * dims * dims;
        let mut counts = vec![0usize; ncell + 1];
        let keys: Vec<usize> = points.iter().map(|p| Self::key_of(p, &lo, cell, dims)).collect();
        for &k in &keys {
            counts[k + 1] += 1;
        }
        for c in 1..=ncell {
            counts[c] += counts[c - 1];
        }
        let mut fill = counts.clone();
        let mut items = vec![0; points.len()];
        for (i, &k) in keys.iter().enumerate() {
            items[fill[k]] = i;
            fill[k] += 1;
        }
        CellList { lo, cell, dims, starts: counts, items }
    }

    fn coord(p: &Point, lo: &Point, cell: f64, dims: usize) -> [usize; 3] {
        let mut c = [0; 3];
        for a in 0..3 {
            c[a] = (((p[a] - lo[a]) / cell).floor().max(0.0) as usize).min(dims - 1);
        }
        c
    }

    fn key_of(p: &Point, lo: &Point, cell: f64, dims: usize) -> usize {
        let c = Self::coord(p, lo, cell, dims);
        (c[2] * dims + c[1]) * dims + c[0]
    }

    fn nearest_other(&self, points: &[Point], i: usize) -> f64 {
        let c = Self::coord(&points[i], &self.lo, self.cell, self.dims);
        let mut best = f64::INFINITY;
        let mut ring = 1usize;
        loop {
            let lo: Vec<usize> = c.iter().map(|&v| v.saturating_sub(ring)).collect();
            let hi: Vec<usize> = c.iter().map(|&v| (v + ring).min(self.dims - 1)).collect();
            for z in lo[2]..=hi[2] {
                for y in lo[1]..=hi[1] {
                    for x in lo[0]..=hi[0] {
                        let k = (z * self.dims + y) * self.dims + x;
                        for &j in &self.items[self.starts[k]..self.starts[k + 1]] {
                            if j != i {
                                best = best.min((points[i] - points[j]).norm());
                            }
                        }
                    }
                }
            }
            // Everything within ring·cell has been seen.
            if best <= ring as f64 * self.cell || ring >= self.dims {
                return best;
            }
            ring += 1;
        }
    }
}

/// Cubic lattice of `n_per_axis³` centers filling the cube inscribed in the
/// ball of radius `box_scale`, optionally jittered.
pub fn generate_lattice(n_per_axis: usize, phi: f64, box_scale: f64, jitter: f64, seed: u64) -> Result<ParticleConfig> {
    if n_per_axis == 0 {
        return Err(Error::InvalidInput("n_per_axis must be at least 1".into()));
    }
    if !(0.0..=0.3).contains(&jitter) {
        return Err(Error::InvalidInput(format!("jitter {jitter} outside [0, 0.3]")));
    }
    if !(phi > 0.0) || !(box_scale > 0.0) {
        return Err(Error::InvalidInput("phi and box scale must be positive".into()));
    }
    let n = n_per_axis;
    let count = n * n * n;
    let radius = (phi / count as f64).cbrt();
    let spacing = lattice_spacing(n, box_scale);
    let guaranteed = spacing * (1.0 - 2.0 * jitter);
    if count > 1 && 2.0 * radius >= guaranteed {
        return Err(Error::Overlap { d_min: guaranteed, two_r: 2.0 * radius });
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let half = 0.5 * (n as f64 - 1.0);
    let mut centers = Vec::with_capacity(count);
    for k in 0..n {
        for j in 0..n {
            for i in 0..n {
                let base = Point::new(i as f64 - half, j as f64 - half, k as f64 - half) * spacing;
                let off = if jitter > 0.0 { random_in_ball(&mut rng) * (jitter * spacing) } else { Point::zeros() };
                centers.push(base + off);
            }
        }
    }
    let cfg = ParticleConfig { centers, radius, box_scale, seed };
    cfg.check()?;
    Ok(cfg)
}

/// Spacing of the lattice generated for `n` points per axis.
pub fn lattice_spacing(n_per_axis: usize, box_scale: f64) -> f64 {
    2.0 * box_scale / (3f64.sqrt() * n_per_axis as f64)
}

fn random_in_ball(rng: &mut ChaCha8Rng) -> Point {
    loop {
        let p = Point::new(rng.gen_range(-1.0..1.0), rng.gen_range(-1.0..1.0), rng.gen_range(-1.0..1.0));
        if p.norm_squared() <= 1.0 {
            return p;
        }
    }
}

/// Random sequential adsorption of `n` spheres in the ball of radius
/// `box_scale − R`, keeping centers at least `gap_factor·2R` apart.
pub fn generate_rsa(n: usize, phi: f64, box_scale: f64, gap_factor: f64, seed: u64) -> Result<ParticleConfig> {
    if n == 0 {
        return Err(Error::InvalidInput("need at least one particle".into()));
    }
    if !(gap_factor >= 1.0) || !(phi > 0.0) || !(box_scale > 0.0) {
        return Err(Error::InvalidInput("need gap_factor >= 1, phi > 0, L > 0".into()));
    }
    let radius = (phi / n as f64).cbrt();
    let inner = box_scale - radius;
    if !(inner > 0.0) {
        return Err(Error::Domain(format!("R = {radius} does not fit in L = {box_scale}")));
    }
    // Strict inequality |X| + R < L, with a relative margin against rounding.
    let inner = inner * (1.0 - 1e-12);
    let excl = gap_factor * 2.0 * radius;
    let cells = ((2.0 * inner / excl).floor() as usize).clamp(1, 256);
    let cell = 2.0 * inner / cells as f64;
    let mut grid: Vec<Vec<usize>> = vec![Vec::new(); cells * cells * cells];
    let lo = Point::repeat(-inner);
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut centers: Vec<Point> = Vec::with_capacity(n);
    let cap = 1_000_000u64.saturating_mul(n as u64);
    let mut attempts = 0u64;
    let reach = (excl / cell).ceil() as isize;
    while centers.len() < n {
        if attempts >= cap {
            return Err(Error::Saturation { attempts, placed: centers.len(), target: n });
        }
        attempts += 1;
        let p = random_in_ball(&mut rng) * inner;
        let c = CellList::coord(&p, &lo, cell, cells);
        let mut ok = true;
        'scan: for dz in -reach..=reach {
            for dy in -reach..=reach {
                for dx in -reach..=reach {
                    let q = [c[0] as isize + dx, c[1] as isize + dy, c[2] as isize + dz];
                    if q.iter().any(|&v| v < 0 || v >= cells as isize) {
                        continue;
                    }
                    let k = ((q[2] as usize * cells) + q[1] as usize) * cells + q[0] as usize;
                    for &j in &grid[k] {
                        if (centers[j] - p).norm() < excl {
                            ok = false;
                            break 'scan;
                        }
                    }
                }
            }
        }
        if ok {
            let k = (c[2] * cells + c[1]) * cells + c[0];
            grid[k].push(centers.len());
            centers.push(p);
        }
    }
    Ok(ParticleConfig { centers, radius, box_scale, seed })
}

/// Outcome of the assumption checks; the flags never raise.
#[derive(Clone, Debug, PartialEq)]
pub struct AssumptionReport {
    pub n: usize,
    pub d_min: f64,
    /// N^{-1/3}/d_min.
    pub separation_constant: f64,
    /// φ log N.
    pub phi_log_n: f64,
    pub passes: AssumptionFlags,
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct AssumptionFlags {
    /// All spheres inside the ball of radius L.
    pub contained: bool,
    /// d_min > 2R.
    pub non_overlapping: bool,
    /// N^{-1/3} ≤ C d_min.
    pub separated: bool,
    /// φ log N below the dilution threshold.
    pub dilute: bool,
}

impl AssumptionReport {
    pub fn all_pass(&self) -> bool {
        let p = self.passes;
        p.contained && p.non_overlapping && p.separated && p.dilute
    }
}

impl std::fmt::Display for AssumptionReport {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        let flag = |b: bool| if b { "pass" } else { "FAIL" };
        writeln!(f, "N                    {}", self.n)?;
        writeln!(f, "d_min                {:.6e}", self.d_min)?;
        writeln!(f, "N^(-1/3)/d_min       {:.6e}", self.separation_constant)?;
        writeln!(f, "phi log N            {:.6e}", self.phi_log_n)?;
        writeln!(f, "containment          {}", flag(self.passes.contained))?;
        writeln!(f, "non-overlap          {}", flag(self.passes.non_overlapping))?;
        writeln!(f, "separation           {}", flag(self.passes.separated))?;
        write!(f, "dilution             {}", flag(self.passes.dilute))
    }
}

/// Default separation constant and dilution threshold.
pub const DEFAULT_C_SEP: f64 = 4.0;
pub const DEFAULT_EPS_PHI_LOG: f64 = 0.5;

pub fn validate_assumptions(cfg: &ParticleConfig, c_sep: f64, eps_phi_log: f64) -> AssumptionReport {
    let n = cfg.n();
    let d_min = cfg.d_min();
    let sep = if n == 0 { 0.0 } else { (n as f64).powf(-1.0 / 3.0) / d_min };
    let phi_log_n = if n == 0 { 0.0 } else { cfg.phi() * (n as f64).ln() };
    let contained = cfg.max_center_norm() + cfg.radius < cfg.box_scale;
    AssumptionReport {
        n,
        d_min,
        separation_constant: sep,
        phi_log_n,
        passes: AssumptionFlags {
            contained,
            non_overlapping: d_min > 2.0 * cfg.radius,
            separated: sep <= c_sep,
            dilute: phi_log_n <= eps_phi_log,
        },
    }
}

/// Default boundary-layer width δ = N^{-5/12}.
pub fn default_delta(n: usize) -> f64 {
    (n as f64).powf(-5.0 / 12.0)
}

/// Default coarse-graining cube side s = N^{-1/6}.
pub fn default_cube_side(n: usize) -> f64 {
    (n as f64).powf(-1.0 / 6.0)
}

/// Piecewise-constant coarse-grained density on a cube grid, optionally with
/// a mollified Lipschitz version.
#[derive(Clone, Debug)]
pub struct DensityField {
    pub cube_side: f64,
    /// Lower corner of cube (0, 0, 0).
    pub origin: Point,
    pub dims: [usize; 3],
    counts: Vec<u32>,
    pub n_particles: usize,
    pub mollifier_width: Option<f64>,
}

/// Cube grid covering the ball of radius L + 1 with lower corner at −(L+1).
pub fn coarse_density(cfg: &ParticleConfig, s: f64) -> Result<DensityField> {
    let a = cfg.box_scale + 1.0;
    coarse_density_anchored(cfg, s, Point::repeat(-a))
}

/// Cube grid whose vertices include `anchor`, covering the ball of radius
/// L + 1 and every center.
pub fn coarse_density_anchored(cfg: &ParticleConfig, s: f64, anchor: Point) -> Result<DensityField> {
    if !(s > 0.0) || !s.is_finite() {
        return Err(Error::Grid(format!("cube side must be positive, got {s}")));
    }
    let reach = cfg.box_scale + 1.0;
    let mut origin = Point::zeros();
    let mut dims = [0usize; 3];
    for a in 0..3 {
        let lo = cfg.centers.iter().map(|c| c[a]).fold(-reach, f64::min);
        let hi = cfg.centers.iter().map(|c| c[a]).fold(reach, f64::max);
        let k0 = ((lo - anchor[a]) / s).floor();
        origin[a] = anchor[a] + k0 * s;
        let k1 = ((hi - anchor[a]) / s).floor() + 1.0;
        dims[a] = (k1 - k0) as usize;
    }
    let total = dims[0] * dims[1] * dims[2];
    if total > 200_000_000 {
        return Err(Error::Grid(format!("cube grid {dims:?} too large")));
    }
    let mut counts = vec![0u32; total];
    let mut field = DensityField { cube_side: s, origin, dims, counts: Vec::new(), n_particles: cfg.n(), mollifier_width: None };
    for c in &cfg.centers {
        let j = field.cube_of(c).ok_or_else(|| Error::Grid("center outside cube grid".into()))?;
        counts[field.linear(j)] += 1;
    }
    field.counts = counts;
    Ok(field)
}

/// Tensor-product quartic bump on [−w, w] and its antiderivative.
fn bump(t: f64, w: f64) -> f64 {
    let u = t / w;
    if u.abs() >= 1.0 {
        0.0
    } else {
        let v = 1.0 - u * u;
        15.0 / (16.0 * w) * v * v
    }
}

fn bump_cdf(t: f64, w: f64) -> f64 {
    let u = t / w;
    if u <= -1.0 {
        0.0
    } else if u >= 1.0 {
        1.0
    } else {
        0.5 + 15.0 / 16.0 * (u - 2.0 * u * u * u / 3.0 + u.powi(5) / 5.0)
    }
}

impl DensityField {
    /// Half-open cube index containing `x` (lower faces inclusive).
    pub fn cube_of(&self, x: &Point) -> Option<[usize; 3]> {
        let mut j = [0usize; 3];
        for a in 0..3 {
            let k = ((x[a] - self.origin[a]) / self.cube_side).floor();
            if k < 0.0 || k >= self.dims[a] as f64 {
                return None;
            }
            j[a] = k as usize;
        }
        Some(j)
    }

    fn linear(&self, j: [usize; 3]) -> usize {
        (j[2] * self.dims[1] + j[1]) * self.dims[0] + j[0]
    }

    pub fn count(&self, j: [usize; 3]) -> u32 {
        self.counts[self.linear(j)]
    }

    /// ρ^N on cube j: (4π/3) n(A_j)/(N s³).
    pub fn rho_cube(&self, j: [usize; 3]) -> f64 {
        self.rho_of_count(self.count(j))
    }

    fn rho_of_count(&self, c: u32) -> f64 {
        if self.n_particles == 0 {
            return 0.0;
        }
        4.0 * std::f64::consts::PI / 3.0 * c as f64 / (self.n_particles as f64 * self.cube_side.powi(3))
    }

    pub fn total_count(&self) -> u64 {
        self.counts.iter().map(|&c| c as u64).sum()
    }

    /// Piecewise-constant ρ^N(x).
    pub fn rho_n(&self, x: &Point) -> f64 {
        self.cube_of(x).map(|j| self.rho_cube(j)).unwrap_or(0.0)
    }

    /// ∫ρ^N = Σ_j ρ^N(A_j) s³.
    pub fn mass(&self) -> f64 {
        let s3 = self.cube_side.powi(3);
        self.counts.iter().map(|&c| self.rho_of_count(c) * s3).sum()
    }

    pub fn sup_norm(&self) -> f64 {
        self.counts.iter().map(|&c| self.rho_of_count(c)).fold(0.0, f64::max)
    }

    /// Occupied cubes as (index, count, ρ^N), in index order.
    pub fn occupied(&self) -> Vec<([usize; 3], u32, f64)> {
        let mut out = Vec::new();
        for z in 0..self.dims[2] {
            for y in 0..self.dims[1] {
                for x in 0..self.dims[0] {
                    let j = [x, y, z];
                    let c = self.count(j);
                    if c > 0 {
                        out.push((j, c, self.rho_of_count(c)));
                    }
                }
            }
        }
        out
    }

    pub fn write_csv<W: Write>(&self, mut w: W) -> Result<()> {
        writeln!(w, "jx,jy,jz,count,rho")?;
        for (j, c, r) in self.occupied() {
            writeln!(w, "{},{},{},{},{:.16e}", j[0], j[1], j[2], c, r)?;
        }
        Ok(())
    }

    /// Mollified copy with the given bump width.
    pub fn mollify(&self, width: f64) -> Result<DensityField> {
        if !(width > 0.0) || !width.is_finite() {
            return Err(Error::Grid(format!("mollifier width must be positive, got {width}")));
        }
        let mut out = self.clone();
        out.mollifier_width = Some(width);
        Ok(out)
    }

    /// Mollified density; equals ρ^N when no mollifier is set.
    pub fn rho(&self, x: &Point) -> f64 {
        self.rho_with_gradient(x).0
    }

    pub fn gradient(&self, x: &Point) -> Point {
        self.rho_with_gradient(x).1
    }

    pub fn rho_with_gradient(&self, x: &Point) -> (f64, Point) {
        let Some(w) = self.mollifier_width else {
            return (self.rho_n(x), Point::zeros());
        };
        let s = self.cube_side;
        let mut range = [(0usize, 0usize); 3];
        for a in 0..3 {
            let lo = ((x[a] - w - self.origin[a]) / s).floor().max(0.0);
            let hi = ((x[a] + w - self.origin[a]) / s).floor().min(self.dims[a] as f64 - 1.0);
            if hi < lo {
                return (0.0, Point::zeros());
            }
            range[a] = (lo as usize, hi as usize);
        }
        // Per-axis factors: I(t) = C(t − lo) − C(t − hi), with derivatives.
        let mut fac: [Vec<(f64, f64)>; 3] = Default::default();
        for a in 0..3 {
            for j in range[a].0..=range[a].1 {
                let lo = self.origin[a] + j as f64 * s;
                let hi = lo + s;
                let v = bump_cdf(x[a] - lo, w) - bump_cdf(x[a] - hi, w);
                let d = bump(x[a] - lo, w) - bump(x[a] - hi, w);
                fac[a].push((v, d));
            }
        }
        let mut val = 0.0;
        let mut grad = Point::zeros();
        for (kz, &(vz, dz)) in fac[2].iter().enumerate() {
            for (ky, &(vy, dy)) in fac[1].iter().enumerate() {
                for (kx, &(vx, dx)) in fac[0].iter().enumerate() {
                    let c = self.count([range[0].0 + kx, range[1].0 + ky, range[2].0 + kz]);
                    if c == 0 {
                        continue;
                    }
                    let r = self.rho_of_count(c);
                    val += r * vx * vy * vz;
                    grad += Point::new(dx * vy * vz, vx * dy * vz, vx * vy * dz) * r;
                }
            }
        }
        (val, grad)
    }

    /// Lipschitz constant of the mollified density:
    /// |∇ρ| ≤ √3 ‖ρ^N‖_∞ ∫|k'| with ∫|k'| = 2k(0) = 15/(8w).
    pub fn lipschitz(&self) -> Option<f64> {
        self.mollifier_width.map(|w| 3f64.sqrt() * self.sup_norm() * 15.0 / (8.0 * w))
    }

    /// Axis-aligned box containing the support of the (mollified) density.
    pub fn support_box(&self) -> (Point, Point) {
        let w = self.mollifier_width.unwrap_or(0.0);
        let mut lo = Point::repeat(f64::INFINITY);
        let mut hi = Point::repeat(f64::NEG_INFINITY);
        for (j, _, _) in self.occupied() {
            for a in 0..3 {
                let l = self.origin[a] + j[a] as f64 * self.cube_side;
                lo[a] = lo[a].min(l - w);
                hi[a] = hi[a].max(l + self.cube_side + w);
            }
        }
        (lo, hi)
    }
}

pub fn mollify_density(grid: &DensityField, width: f64) -> Result<DensityField> {
    grid.mollify(width)
}

/// Membership test for Ω_δ: points at distance ≥ max(2R, δ) from every
/// center.
#[derive(Clone, Debug)]
pub struct RegionPredicate {
    pub exclusion_radius: f64,
    centers: Vec<Point>,
    lo: Point,
    cell: f64,
    dims: [usize; 3],
    starts: Vec<usize>,
    items: Vec<usize>,
}

pub fn omega_delta_mask(cfg: &ParticleConfig, delta: f64) -> Result<RegionPredicate> {
    if !(delta > 0.0) {
        return Err(Error::InvalidInput(format!("delta must be positive, got {delta}")));
    }
    Ok(RegionPredicate::new(&cfg.centers, (2.0 * cfg.radius).max(delta)))
}

impl RegionPredicate {
    pub fn new(centers: &[Point], exclusion_radius: f64) -> RegionPredicate {
        let mut lo = Point::repeat(f64::INFINITY);
        let mut hi = Point::repeat(f64::NEG_INFINITY);
        for p in centers {
            lo = lo.inf(p);
            hi = hi.sup(p);
        }
        if centers.is_empty() {
            lo = Point::zeros();
            hi = Point::zeros();
        }
        let cell = exclusion_radius.max(1e-12);
        let mut dims = [1usize; 3];
        for a in 0..3 {
            dims[a] = (((hi[a] - lo[a]) / cell).floor() as usize + 1).min(512);
        }
        let cell = (0..3).map(|a| (hi[a] - lo[a]) / dims[a] as f64).fold(cell, f64::max);
        let ncell = dims[0] * dims[1] * dims[2];
        let key = |p: &Point| {
            let mut c = [0usize; 3];
            for a in 0..3 {
                c[a] = (((p[a] - lo[a]) / cell).floor().max(0.0) as usize).min(dims[a] - 1);
            }
            (c[2] * dims[1] + c[1]) * dims[0] + c[0]
        };
        let mut starts = vec![0usize; ncell + 1];
        for p in centers {
            starts[key(p) + 1] += 1;
        }
        for c in 1..=ncell {
            starts[c] += starts[c - 1];
        }
        let mut fill = starts.clone();
        let mut items = vec![0; centers.len()];
        for (i, p) in centers.iter().enumerate() {
            let k = key(p);
            items[fill[k]] = i;
            fill[k] += 1;
        }
        RegionPredicate { exclusion_radius, centers: centers.to_vec(), lo, cell, dims, starts, items }
    }

    /// Distance from `x` to the nearest center, if within one cell.
    fn near_distance(&self, x: &Point) -> f64 {
        let mut best = f64::INFINITY;
        let mut c = [0isize; 3];
        for a in 0..3 {
            c[a] = ((x[a] - self.lo[a]) / self.cell).floor() as isize;
        }
        for dz in -1..=1 {
            for dy in -1..=1 {
                for dx in -1..=1 {
                    let q = [c[0] + dx, c[1] + dy, c[2] + dz];
                    if (0..3).any(|a| q[a] < 0 || q[a] >= self.dims[a] as isize) {
                        continue;
                    }
                    let k = (q[2] as usize * self.dims[1] + q[1] as usize) * self.dims[0] + q[0] as usize;
                    for &j in &self.items[self.starts[k]..self.starts[k + 1]] {
                        best = best.min((self.centers[j] - x).norm());
                    }
                }
            }
        }
        best
    }

    pub fn contains(&self, x: &Point) -> bool {
        self.near_distance(x) >= self.exclusion_radius
    }

    /// Upper bound (4π/3) N r³ on the excluded volume.
    pub fn excluded_volume(&self) -> f64 {
        4.0 * std::f64::consts::PI / 3.0 * self.centers.len() as f64 * self.exclusion_radius.powi(3)
    }

    pub fn centers(&self) -> &[Point] {
        &self.centers
    }
}
