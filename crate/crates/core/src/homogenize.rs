//! Homogenized solves: v̂ = Φ∗((1−φρ)f), the intermediate field û with an
//! explicit stresslet layer, and the variable-viscosity field ū with
//! coefficient 2 + βφρ (β = 5 is Einstein's value).
//!
//! All three are Oseen convolutions. The unknown is split as
//! `ū = a·v0 + w` where `v0 = Φ∗f` is known in closed form and
//! `ρ_ref = ρ(force center)`. Since `div(ρ e v0) = e v0·∇ρ − ρ f/2`, the
//! fixed-point map `ū ↦ v̂ + Φ∗div(βφρ eū)` becomes
//!
//!   a' = (1 − φρ_ref) − (β/2)φρ_ref·a,
//!   w' = Φ∗[−φ(ρ−ρ_ref)f + βφ(a(e v0·∇ρ − (ρ−ρ_ref)f/2) + div(ρ e w))],
//!
//! whose source vanishes where ρ is flat around the force. `w'` is computed
//! on a node grid by zero-padded FFT convolution with cell-averaged kernels.

use std::f64::consts::PI;
use std::io::Write;
use std::sync::Arc;

use nalgebra::{Matrix3, Vector3};
use rayon::prelude::*;
use rustfft::num_complex::Complex64;
use rustfft::{Fft, FftPlanner};

use crate::error::{Error, Result};
use crate::fields::{FlowField, ForceField};
use crate::geometry::DensityField;
use crate::kernels::{oseen_grad_unchecked, oseen_hessian_contract, oseen_unchecked, Point};
use crate::quadrature::gauss_legendre;

/// Density entering the homogenized problem.
pub trait Density: Sync {
    fn rho_with_gradient(&self, x: &Point) -> (f64, Point);
    /// Box containing the support.
    fn support_box(&self) -> (Point, Point);
    /// Whether the density is Lipschitz (mollified).
    fn is_lipschitz(&self) -> bool {
        true
    }
}

impl Density for DensityField {
    fn rho_with_gradient(&self, x: &Point) -> (f64, Point) {
        DensityField::rho_with_gradient(self, x)
    }
    fn support_box(&self) -> (Point, Point) {
        DensityField::support_box(self)
    }
    fn is_lipschitz(&self) -> bool {
        self.mollifier_width.is_some()
    }
}

/// Radial bump `height·(1 − |x−c|²/a²)³`, a smooth test density.
#[derive(Clone, Copy, Debug)]
pub struct BumpDensity {
    pub center: Point,
    pub radius: f64,
    pub height: f64,
}

impl Density for BumpDensity {
    fn rho_with_gradient(&self, x: &Point) -> (f64, Point) {
        let r = x - self.center;
        let t = 1.0 - r.norm_squared() / (self.radius * self.radius);
        if t <= 0.0 {
            return (0.0, Point::zeros());
        }
        (self.height * t * t * t, r * (-6.0 * self.height * t * t / (self.radius * self.radius)))
    }
    fn support_box(&self) -> (Point, Point) {
        (self.center - Point::repeat(self.radius), self.center + Point::repeat(self.radius))
    }
}

/// Solver settings.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct HomogenizeOptions {
    pub phi: f64,
    /// Grid spacing.
    pub h: f64,
    /// Relative tolerance on successive strain differences.
    pub fixed_point_tol: f64,
    pub max_iter: usize,
    /// Viscosity coefficient β in 2 + βφρ.
    pub beta: f64,
}

impl HomogenizeOptions {
    pub fn new(phi: f64, h: f64) -> HomogenizeOptions {
        HomogenizeOptions { phi, h, fixed_point_tol: 1e-10, max_iter: 50, beta: 5.0 }
    }

    pub fn with_beta(mut self, beta: f64) -> HomogenizeOptions {
        self.beta = beta;
        self
    }
}

/// Limit on φ‖ρ‖_∞ for the options to be usable at all.
pub const HEADROOM_LIMIT: f64 = 0.4;
/// Limit on φ‖ρ‖_∞ under which the fixed point is guaranteed to contract.
pub const CONTRACTION_LIMIT: f64 = 0.1;

/// Uniform node grid `origin + i·h`.
#[derive(Clone, Debug, PartialEq)]
pub struct Grid {
    pub origin: Point,
    pub h: f64,
    pub dims: [usize; 3],
}

impl Grid {
    pub fn len(&self) -> usize {
        self.dims[0] * self.dims[1] * self.dims[2]
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn index(&self, i: usize, j: usize, k: usize) -> usize {
        (k * self.dims[1] + j) * self.dims[0] + i
    }

    pub fn coords(&self, idx: usize) -> [usize; 3] {
        let i = idx % self.dims[0];
        let j = (idx / self.dims[0]) % self.dims[1];
        [i, j, idx / (self.dims[0] * self.dims[1])]
    }

    pub fn node(&self, idx: usize) -> Point {
        let c = self.coords(idx);
        self.origin + Point::new(c[0] as f64, c[1] as f64, c[2] as f64) * self.h
    }

    /// Grid covering `[lo, hi]` with `pad` extra nodes on each side.
    fn covering(lo: Point, hi: Point, h: f64, pad: usize) -> Result<Grid> {
        let mut dims = [0; 3];
        for a in 0..3 {
            dims[a] = ((hi[a] - lo[a]) / h).ceil() as usize + 1 + 2 * pad;
        }
        if dims.iter().product::<usize>() > 16_000_000 {
            return Err(Error::Grid(format!("homogenization grid {dims:?} too large")));
        }
        Ok(Grid { origin: lo - Point::repeat(pad as f64 * h), h, dims })
    }
}

/// 3-D complex FFT over a row-major box.
struct Fft3 {
    dims: [usize; 3],
    forward: [Arc<dyn Fft<f64>>; 3],
    inverse: [Arc<dyn Fft<f64>>; 3],
}

impl Fft3 {
    fn new(dims: [usize; 3]) -> Fft3 {
        let mut planner = FftPlanner::new();
        let forward = dims.map(|n| planner.plan_fft_forward(n));
        let inverse = dims.map(|n| planner.plan_fft_inverse(n));
        Fft3 { dims, forward, inverse }
    }

    fn len(&self) -> usize {
        self.dims.iter().product()
    }

    /// Unnormalized transform in place.
    fn run(&self, data: &mut [Complex64], inverse: bool) {
        let plans = if inverse { &self.inverse } else { &self.forward };
        let [nx, ny, nz] = self.dims;
        data.par_chunks_mut(nx).for_each(|line| plans[0].process(line));
        data.par_chunks_mut(nx * ny).for_each(|plane| {
            let mut line = vec![Complex64::default(); ny];
            for i in 0..nx {
                for j in 0..ny {
                    line[j] = plane[j * nx + i];
                }
                plans[1].process(&mut line);
                for j in 0..ny {
                    plane[j * nx + i] = line[j];
                }
            }
        });
        let nxy = nx * ny;
        let columns: Vec<Vec<Complex64>> = (0..nxy)
            .into_par_iter()
            .map(|p| {
                let mut line: Vec<Complex64> = (0..nz).map(|k| data[k * nxy + p]).collect();
                plans[2].process(&mut line);
                line
            })
            .collect();
        for (p, line) in columns.into_iter().enumerate() {
            for (k, v) in line.into_iter().enumerate() {
                data[k * nxy + p] = v;
            }
        }
    }
}

/// Smallest integer ≥ n whose prime factors are 2, 3 and 5.
fn smooth_size(n: usize) -> usize {
    let mut m = n.max(1);
    loop {
        let mut r = m;
        for p in [2, 3, 5] {
            while r % p == 0 {
                r /= p;
            }
        }
        if r == 1 {
            return m;
        }
        m += 1;
    }
}

const SYM: [(usize, usize); 6] = [(0, 0), (1, 1), (2, 2), (0, 1), (0, 2), (1, 2)];

/// `∫_cell Φ(y) dy` over the cube of side h centered at `m·h`.
///
/// The self cell is split into six pyramids with apex at the origin; on each,
/// `Φ(t p) = Φ(p)/t` makes the radial integral exact, leaving
/// `(h/4)∫_face Φ(p) dA`.
pub fn cell_integral(m: [i64; 3], h: f64) -> Matrix3<f64> {
    let far = m.iter().map(|v| v.abs()).max().unwrap_or(0);
    if far == 0 {
        let (x, w) = gauss_legendre(16);
        let half = 0.5 * h;
        let mut total = Matrix3::zeros();
        for axis in 0..3 {
            let (b, c) = ((axis + 1) % 3, (axis + 2) % 3);
            for sign in [-1.0, 1.0] {
                for (u, wu) in x.iter().zip(&w) {
                    for (v, wv) in x.iter().zip(&w) {
                        let mut p = Point::zeros();
                        p[axis] = sign * half;
                        p[b] = u * half;
                        p[c] = v * half;
                        total += oseen_unchecked(&p) * (wu * wv * half * half);
                    }
                }
            }
        }
        return total * (h / 4.0);
    }
    let q = match far {
        1 => 12,
        2 => 8,
        3..=6 => 4,
        _ => 2,
    };
    let (x, w) = gauss_legendre(q);
    let c = Point::new(m[0] as f64, m[1] as f64, m[2] as f64) * h;
    let half = 0.5 * h;
    let mut total = Matrix3::zeros();
    for (a, wa) in x.iter().zip(&w) {
        for (b, wb) in x.iter().zip(&w) {
            for (d, wd) in x.iter().zip(&w) {
                let y = c + Point::new(*a, *b, *d) * half;
                total += oseen_unchecked(&y) * (wa * wb * wd);
            }
        }
    }
    total * (half * half * half)
}

/// Cached Fourier transform of the cell-integrated kernel on a grid.
struct Convolver {
    grid: Grid,
    fft: Fft3,
    kernel: [Vec<Complex64>; 6],
}

impl Convolver {
    fn new(grid: &Grid) -> Convolver {
        let padded = grid.dims.map(|n| smooth_size(2 * n - 1));
        let fft = Fft3::new(padded);
        let [px, py, pz] = padded;
        let offset = |i: usize, p: usize, n: usize| -> Option<i64> {
            if i < n {
                Some(i as i64)
            } else if i + n > p {
                Some(i as i64 - p as i64)
            } else {
                None
            }
        };
        let values: Vec<Matrix3<f64>> = (0..fft.len())
            .into_par_iter()
            .map(|idx| {
                let i = idx % px;
                let j = (idx / px) % py;
                let k = idx / (px * py);
                match (offset(i, px, grid.dims[0]), offset(j, py, grid.dims[1]), offset(k, pz, grid.dims[2])) {
                    (Some(a), Some(b), Some(c)) => cell_integral([a, b, c], grid.h),
                    _ => Matrix3::zeros(),
                }
            })
            .collect();
        let kernel = SYM.map(|(a, b)| {
            let mut data: Vec<Complex64> = values.iter().map(|m| Complex64::new(m[(a, b)], 0.0)).collect();
            fft.run(&mut data, false);
            data
        });
        Convolver { grid: grid.clone(), fft, kernel }
    }

    /// `(Φ∗F)(x_n) = Σ_m ∫_{cell m} Φ(x_n − y) dy F_m`.
    fn convolve(&self, source: &[Vector3<f64>]) -> Vec<Vector3<f64>> {
        let [px, py, _] = self.fft.dims;
        let g = &self.grid;
        let total = self.fft.len();
        let mut comps: Vec<Vec<Complex64>> = (0..3)
            .map(|c| {
                let mut data = vec![Complex64::default(); total];
                for (idx, f) in source.iter().enumerate() {
                    let [i, j, k] = g.coords(idx);
                    data[(k * py + j) * px + i] = Complex64::new(f[c], 0.0);
                }
                self.fft.run(&mut data, false);
                data
            })
            .collect();
        let out: Vec<Vec<Complex64>> = (0..3)
            .map(|a| {
                let mut data: Vec<Complex64> = (0..total)
                    .into_par_iter()
                    .map(|t| {
                        let mut s = Complex64::default();
                        for (kc, &(p, q)) in SYM.iter().enumerate() {
                            if p == a {
                                s += self.kernel[kc][t] * comps[q][t];
                            } else if q == a {
                                s += self.kernel[kc][t] * comps[p][t];
                            }
                        }
                        s
                    })
                    .collect();
                self.fft.run(&mut data, true);
                data
            })
            .collect();
        comps.clear();
        let scale = 1.0 / total as f64;
        (0..g.len())
            .map(|idx| {
                let [i, j, k] = g.coords(idx);
                let t = (k * py + j) * px + i;
                Vector3::new(out[0][t].re, out[1][t].re, out[2][t].re) * scale
            })
            .collect()
    }
}

/// Aggregated source nodes for evaluating `Φ∗F` away from the grid.
#[derive(Clone, Debug)]
struct SourceBlock {
    center: Point,
    radius: f64,
    m0: Vector3<f64>,
    m1: Matrix3<f64>,
    /// m2[j] = Σ q_j (y − c)(y − c)ᵀ.
    m2: [Matrix3<f64>; 3],
    nodes: Vec<(Point, Vector3<f64>)>,
}

const BLOCK: usize = 4;
const FAR_FACTOR: f64 = 5.0;

fn build_blocks(grid: &Grid, source: &[Vector3<f64>]) -> Vec<SourceBlock> {
    let nb = grid.dims.map(|n| n.div_ceil(BLOCK));
    let mut blocks = Vec::new();
    let vol = grid.h.powi(3);
    for bk in 0..nb[2] {
        for bj in 0..nb[1] {
            for bi in 0..nb[0] {
                let mut nodes = Vec::new();
                for k in bk * BLOCK..((bk + 1) * BLOCK).min(grid.dims[2]) {
                    for j in bj * BLOCK..((bj + 1) * BLOCK).min(grid.dims[1]) {
                        for i in bi * BLOCK..((bi + 1) * BLOCK).min(grid.dims[0]) {
                            let idx = grid.index(i, j, k);
                            if source[idx] != Vector3::zeros() {
                                nodes.push((grid.node(idx), source[idx] * vol));
                            }
                        }
                    }
                }
                if nodes.is_empty() {
                    continue;
                }
                let center = nodes.iter().map(|(p, _)| p).sum::<Point>() / nodes.len() as f64;
                let radius = nodes.iter().map(|(p, _)| (p - center).norm()).fold(0.0, f64::max) + 0.5 * grid.h;
                let mut m0 = Vector3::zeros();
                let mut m1 = Matrix3::zeros();
                let mut m2 = [Matrix3::zeros(); 3];
                for (p, q) in &nodes {
                    let d = p - center;
                    m0 += q;
                    m1 += q * d.transpose();
                    let dd = d * d.transpose();
                    for (j, m) in m2.iter_mut().enumerate() {
                        *m += dd * q[j];
                    }
                }
                blocks.push(SourceBlock { center, radius, m0, m1, m2, nodes });
            }
        }
    }
    blocks
}

/// `½ Σ_{j,m,l} ∂_m∂_lΦ_ij(x) T_jml` for `T_jml = t[j][(m, l)]` symmetric in
/// (m, l), in closed form.
fn quadrupole(x: &Point, t: &[Matrix3<f64>; 3]) -> Vector3<f64> {
    let r2 = x.norm_squared();
    let r = r2.sqrt();
    let i3 = 1.0 / (r2 * r);
    let i5 = i3 / r2;
    let i7 = i5 / r2;
    let tx = [t[0] * x, t[1] * x, t[2] * x];
    // u_i = xᵀT_i x, w = Σ_j x_j T_j x, s_j = tr T_j, c_i = Σ_j (T_j)_{ji}.
    let u = Vector3::new(x.dot(&tx[0]), x.dot(&tx[1]), x.dot(&tx[2]));
    let w = tx[0] * x[0] + tx[1] * x[1] + tx[2] * x[2];
    let s = Vector3::new(t[0].trace(), t[1].trace(), t[2].trace());
    let c = t[0].row(0).transpose() + t[1].row(1).transpose() + t[2].row(2).transpose();
    let v = u * (3.0 * i5) + (c * 2.0 - s) * i3 - (w * 2.0 + x * (2.0 * c.dot(x) + s.dot(x))) * (3.0 * i5)
        + x * (15.0 * x.dot(&u) * i7);
    v / (16.0 * PI)
}

/// `Φ∗F` known at grid nodes, interpolated tricubically inside the grid and
/// summed directly (with block aggregation) outside.
#[derive(Clone, Debug)]
pub struct GridConvolution {
    grid: Arc<Grid>,
    values: Arc<Vec<Vector3<f64>>>,
    blocks: Arc<Vec<SourceBlock>>,
}

/// Cubic Lagrange weights on nodes −1, 0, 1, 2 at t ∈ [0, 1], and their
/// derivatives in t.
fn cubic_weights(t: f64) -> ([f64; 4], [f64; 4]) {
    let w = [
        -t * (t - 1.0) * (t - 2.0) / 6.0,
        (t + 1.0) * (t - 1.0) * (t - 2.0) / 2.0,
        -(t + 1.0) * t * (t - 2.0) / 2.0,
        (t + 1.0) * t * (t - 1.0) / 6.0,
    ];
    let d = [
        -(3.0 * t * t - 6.0 * t + 2.0) / 6.0,
        (3.0 * t * t - 4.0 * t - 1.0) / 2.0,
        -(3.0 * t * t - 2.0 * t - 2.0) / 2.0,
        (3.0 * t * t - 1.0) / 6.0,
    ];
    (w, d)
}

impl GridConvolution {
    fn new(grid: Arc<Grid>, values: Vec<Vector3<f64>>, source: &[Vector3<f64>]) -> GridConvolution {
        let blocks = build_blocks(&grid, source);
        GridConvolution { grid, values: Arc::new(values), blocks: Arc::new(blocks) }
    }

    pub fn grid(&self) -> &Grid {
        &self.grid
    }

    pub fn node_values(&self) -> &[Vector3<f64>] {
        &self.values
    }

    /// Base node and fractional offsets for interpolation, if the 4×4×4
    /// stencil lies inside the grid.
    fn stencil(&self, x: &Point) -> Option<([usize; 3], [f64; 3])> {
        let g = &self.grid;
        let mut base = [0; 3];
        let mut frac = [0.0; 3];
        for a in 0..3 {
            let s = (x[a] - g.origin[a]) / g.h;
            let i = s.floor();
            if i < 1.0 || i + 2.0 > (g.dims[a] - 1) as f64 {
                return None;
            }
            base[a] = i as usize;
            frac[a] = s - i;
        }
        Some((base, frac))
    }

    fn interpolate(&self, base: [usize; 3], frac: [f64; 3]) -> (Vector3<f64>, Matrix3<f64>) {
        let g = &self.grid;
        let (wx, dx) = cubic_weights(frac[0]);
        let (wy, dy) = cubic_weights(frac[1]);
        let (wz, dz) = cubic_weights(frac[2]);
        let mut val = Vector3::zeros();
        let mut jac = Matrix3::zeros();
        for c in 0..4 {
            for b in 0..4 {
                for a in 0..4 {
                    let v = self.values[g.index(base[0] + a - 1, base[1] + b - 1, base[2] + c - 1)];
                    val += v * (wx[a] * wy[b] * wz[c]);
                    let d = Vector3::new(dx[a] * wy[b] * wz[c], wx[a] * dy[b] * wz[c], wx[a] * wy[b] * dz[c]);
                    jac += v * d.transpose();
                }
            }
        }
        (val, jac / g.h)
    }

    fn direct(&self, x: &Point, with_gradient: bool) -> (Vector3<f64>, Matrix3<f64>) {
        let mut val = Vector3::zeros();
        let mut jac = Matrix3::zeros();
        for b in self.blocks.iter() {
            let rel = x - b.center;
            if rel.norm() > FAR_FACTOR * b.radius {
                // Φ(z − d) ≈ Φ(z) − d_m ∂_mΦ(z) + ½ d_m d_l ∂_m∂_lΦ(z).
                val += oseen_unchecked(&rel) * b.m0;
                let dg = oseen_grad_unchecked(&rel);
                for m in 0..3 {
                    val -= dg[m] * b.m1.column(m);
                }
                val += quadrupole(&rel, &b.m2);
                if with_gradient {
                    for m in 0..3 {
                        jac.set_column(m, &(jac.column(m) + dg[m] * b.m0));
                    }
                    jac -= oseen_hessian_contract(&rel, &b.m1);
                }
            } else {
                for (p, q) in &b.nodes {
                    let z = x - p;
                    val += oseen_unchecked(&z) * q;
                    if with_gradient {
                        let dg = oseen_grad_unchecked(&z);
                        for m in 0..3 {
                            jac.set_column(m, &(jac.column(m) + dg[m] * q));
                        }
                    }
                }
            }
        }
        (val, jac)
    }

    pub fn value(&self, x: &Point) -> Vector3<f64> {
        match self.stencil(x) {
            Some((b, f)) => self.interpolate(b, f).0,
            None => self.direct(x, false).0,
        }
    }

    pub fn gradient(&self, x: &Point) -> Matrix3<f64> {
        match self.stencil(x) {
            Some((b, f)) => self.interpolate(b, f).1,
            None => self.direct(x, true).1,
        }
    }
}

/// `a·v0 + w`: a multiple of the free solution plus a grid convolution.
#[derive(Clone, Debug)]
pub struct HomogenizedField {
    pub force: ForceField,
    pub a: f64,
    pub w: GridConvolution,
}

impl FlowField for HomogenizedField {
    fn value(&self, x: &Point) -> Vector3<f64> {
        self.force.exact_velocity(x) * self.a + self.w.value(x)
    }
    fn gradient(&self, x: &Point) -> Matrix3<f64> {
        self.force.exact_gradient(x) * self.a + self.w.gradient(x)
    }
}

/// Residual history of the ū fixed point.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct FixedPointTrace {
    /// Sup over grid nodes of |e(ū^{m+1}) − e(ū^m)|, m = 0, 1, ...
    pub residuals: Vec<f64>,
    pub ratios: Vec<f64>,
    pub iterations: usize,
}

impl FixedPointTrace {
    /// CSV "m,residual,ratio"; the ratio is empty for the first row.
    pub fn write_csv<W: Write>(&self, mut w: W) -> Result<()> {
        writeln!(w, "m,residual,ratio")?;
        for (m, r) in self.residuals.iter().enumerate() {
            if m == 0 {
                writeln!(w, "{m},{r:.16e},")?;
            } else {
                writeln!(w, "{m},{r:.16e},{:.16e}", self.ratios[m - 1])?;
            }
        }
        Ok(())
    }
}

/// Precomputed grid data shared by the three solves.
pub struct Homogenizer {
    opts: HomogenizeOptions,
    force: ForceField,
    grid: Arc<Grid>,
    convolver: Convolver,
    rho: Vec<f64>,
    grad_rho: Vec<Point>,
    /// Cell averages of (ρ − ρ_ref)f; f is only continuous at the edge of its
    /// support, so point values would make the error depend on grid alignment.
    rf: Vec<Vector3<f64>>,
    ev0: Vec<Matrix3<f64>>,
    rho_ref: f64,
    rho_max: f64,
}

/// Extra nodes beyond the union of the supports of ρ and f.
const PAD: usize = 5;

impl Homogenizer {
    pub fn new(f: &ForceField, rho: &dyn Density, opts: HomogenizeOptions) -> Result<Homogenizer> {
        if !(opts.h > 0.0) || !opts.h.is_finite() {
            return Err(Error::Grid(format!("grid spacing must be positive, got {}", opts.h)));
        }
        if !(opts.phi >= 0.0) || !opts.phi.is_finite() {
            return Err(Error::InvalidInput(format!("phi must be non-negative, got {}", opts.phi)));
        }
        if !rho.is_lipschitz() {
            return Err(Error::InvalidInput("density must be mollified".into()));
        }
        let (rlo, rhi) = rho.support_box();
        let reach = Point::repeat(f.support_radius);
        let mut lo = f.center - reach;
        let mut hi = f.center + reach;
        if rlo.iter().all(|v| v.is_finite()) {
            lo = lo.inf(&rlo);
            hi = hi.sup(&rhi);
        }
        let grid = Arc::new(Grid::covering(lo, hi, opts.h, PAD)?);
        let nodes: Vec<(f64, Point, Matrix3<f64>)> = (0..grid.len())
            .into_par_iter()
            .map(|idx| {
                let x = grid.node(idx);
                let (r, g) = rho.rho_with_gradient(&x);
                let j = f.exact_gradient(&x);
                (r, g, (j + j.transpose()) * 0.5)
            })
            .collect();
        let rho_max = nodes.iter().map(|n| n.0).fold(0.0, f64::max);
        if opts.phi * rho_max >= HEADROOM_LIMIT {
            return Err(Error::InvalidInput(format!(
                "phi·sup rho = {} leaves no contraction headroom (limit {HEADROOM_LIMIT})",
                opts.phi * rho_max
            )));
        }
        let convolver = Convolver::new(&grid);
        let rho_ref = rho.rho_with_gradient(&f.center).0;
        let (q, qw) = gauss_legendre(4);
        let reach = f.support_radius + opts.h;
        let rf = (0..grid.len())
            .into_par_iter()
            .map(|idx| {
                let x = grid.node(idx);
                if (x - f.center).norm() > reach {
                    return Vector3::zeros();
                }
                let mut acc = Vector3::zeros();
                for (a, wa) in q.iter().zip(&qw) {
                    for (b, wb) in q.iter().zip(&qw) {
                        for (c, wc) in q.iter().zip(&qw) {
                            let y = x + Point::new(*a, *b, *c) * (0.5 * opts.h);
                            let fy = f.force(&y);
                            if fy != Vector3::zeros() {
                                acc += fy * ((rho.rho_with_gradient(&y).0 - rho_ref) * wa * wb * wc);
                            }
                        }
                    }
                }
                acc * 0.125
            })
            .collect();
        let mut out = Homogenizer {
            opts,
            force: f.clone(),
            grid,
            convolver,
            rho: Vec::with_capacity(nodes.len()),
            grad_rho: Vec::with_capacity(nodes.len()),
            rf,
            ev0: Vec::with_capacity(nodes.len()),
            rho_ref,
            rho_max,
        };
        for (r, g, e) in nodes {
            out.rho.push(r);
            out.grad_rho.push(g);
            out.ev0.push(e);
        }
        Ok(out)
    }

    pub fn grid(&self) -> &Grid {
        &self.grid
    }

    pub fn options(&self) -> HomogenizeOptions {
        self.opts
    }

    /// φ·max over grid nodes of ρ.
    pub fn phi_rho_max(&self) -> f64 {
        self.opts.phi * self.rho_max
    }

    /// `F − (h²/12)Δ_h F`: removes the leading error of treating F as
    /// piecewise constant on cells, which is `(h²/12)Φ∗ΔF`.
    fn corrected(&self, source: &[Vector3<f64>]) -> Vec<Vector3<f64>> {
        let g = &*self.grid;
        let [nx, ny, nz] = g.dims;
        (0..g.len())
            .into_par_iter()
            .map(|idx| {
                let [i, j, k] = g.coords(idx);
                if i == 0 || j == 0 || k == 0 || i + 1 == nx || j + 1 == ny || k + 1 == nz {
                    return source[idx];
                }
                let lap = source[g.index(i + 1, j, k)]
                    + source[g.index(i - 1, j, k)]
                    + source[g.index(i, j + 1, k)]
                    + source[g.index(i, j - 1, k)]
                    + source[g.index(i, j, k + 1)]
                    + source[g.index(i, j, k - 1)]
                    - source[idx] * 6.0;
                source[idx] - lap / 12.0
            })
            .collect()
    }

    fn convolve(&self, source: &[Vector3<f64>]) -> (Vec<Vector3<f64>>, Vec<Vector3<f64>>) {
        let corrected = self.corrected(source);
        (self.convolver.convolve(&corrected), corrected)
    }

    fn field(&self, a: f64, source: &[Vector3<f64>]) -> (HomogenizedField, Vec<Vector3<f64>>) {
        let (values, corrected) = self.convolve(source);
        let w = GridConvolution::new(self.grid.clone(), values.clone(), &corrected);
        (HomogenizedField { force: self.force.clone(), a, w }, values)
    }

    fn hat_v_parts(&self) -> (f64, Vec<Vector3<f64>>) {
        let phi = self.opts.phi;
        let source = self.rf.iter().map(|r| r * -phi).collect();
        (1.0 - phi * self.rho_ref, source)
    }

    /// v̂ = Φ∗((1 − φρ)f).
    pub fn hat_v(&self) -> HomogenizedField {
        let (a, source) = self.hat_v_parts();
        self.field(a, &source).0
    }

    /// Symmetric gradient of grid values by central differences; zero on the
    /// outermost layer.
    fn strain(&self, w: &[Vector3<f64>]) -> Vec<Matrix3<f64>> {
        let g = &*self.grid;
        let [nx, ny, nz] = g.dims;
        (0..g.len())
            .into_par_iter()
            .map(|idx| {
                let [i, j, k] = g.coords(idx);
                if i == 0 || j == 0 || k == 0 || i + 1 == nx || j + 1 == ny || k + 1 == nz {
                    return Matrix3::zeros();
                }
                let inv = 0.5 / g.h;
                let dx = (w[g.index(i + 1, j, k)] - w[g.index(i - 1, j, k)]) * inv;
                let dy = (w[g.index(i, j + 1, k)] - w[g.index(i, j - 1, k)]) * inv;
                let dz = (w[g.index(i, j, k + 1)] - w[g.index(i, j, k - 1)]) * inv;
                let jac = Matrix3::from_columns(&[dx, dy, dz]);
                (jac + jac.transpose()) * 0.5
            })
            .collect()
    }

    /// Source of the update map for coefficient β at iterate (a, e w).
    fn update_source(&self, beta: f64, a: f64, ew: &[Matrix3<f64>]) -> Vec<Vector3<f64>> {
        let g = &*self.grid;
        let phi = self.opts.phi;
        let [nx, ny, nz] = g.dims;
        let flux: Vec<Matrix3<f64>> = (0..g.len()).map(|i| ew[i] * self.rho[i]).collect();
        (0..g.len())
            .into_par_iter()
            .map(|idx| {
                let mut s = self.rf[idx] * -phi;
                if phi == 0.0 || beta == 0.0 {
                    return s;
                }
                let mut inner = (self.ev0[idx] * self.grad_rho[idx] - self.rf[idx] * 0.5) * a;
                let [i, j, k] = g.coords(idx);
                if i >= 1 && j >= 1 && k >= 1 && i + 1 < nx && j + 1 < ny && k + 1 < nz {
                    let inv = 0.5 / g.h;
                    let div = (flux[g.index(i + 1, j, k)].column(0) - flux[g.index(i - 1, j, k)].column(0)
                        + flux[g.index(i, j + 1, k)].column(1)
                        - flux[g.index(i, j - 1, k)].column(1)
                        + flux[g.index(i, j, k + 1)].column(2)
                        - flux[g.index(i, j, k - 1)].column(2))
                        * inv;
                    inner += div;
                }
                s += inner * (beta * phi);
                s
            })
            .collect()
    }

    fn next_a(&self, beta: f64, a: f64) -> f64 {
        let phi = self.opts.phi;
        (1.0 - phi * self.rho_ref) - 0.5 * beta * phi * self.rho_ref * a
    }

    /// û = v̂ + Φ∗div(5φρ e v̂): one application of the β = 5 update map to v̂.
    pub fn hat_u(&self) -> HomogenizedField {
        let (a0, s0) = self.hat_v_parts();
        let w0 = self.convolve(&s0).0;
        let ew = self.strain(&w0);
        let source = self.update_source(5.0, a0, &ew);
        self.field(self.next_a(5.0, a0), &source).0
    }

    /// Fixed point of the update map for coefficient `opts.beta`, started at
    /// v̂.
    pub fn bar_u(&self) -> Result<(HomogenizedField, FixedPointTrace)> {
        self.bar_u_beta(self.opts.beta)
    }

    pub fn bar_u_beta(&self, beta: f64) -> Result<(HomogenizedField, FixedPointTrace)> {
        if self.phi_rho_max() > CONTRACTION_LIMIT {
            return Err(Error::InvalidInput(format!(
                "phi·sup rho = {} exceeds the contraction limit {CONTRACTION_LIMIT}",
                self.phi_rho_max()
            )));
        }
        let (mut a, s0) = self.hat_v_parts();
        let mut w = self.convolve(&s0).0;
        let mut source;
        let mut ew = self.strain(&w);
        let mut trace = FixedPointTrace::default();
        let scale = self
            .ev0
            .iter()
            .zip(&ew)
            .map(|(e0, e)| (e0 * a + e).norm())
            .fold(0.0, f64::max)
            .max(f64::MIN_POSITIVE);
        let mut stalled = 0;
        loop {
            let next_source = self.update_source(beta, a, &ew);
            let next_a = self.next_a(beta, a);
            let (next_w, next_source) = self.convolve(&next_source);
            let next_ew = self.strain(&next_w);
            let res = (0..self.grid.len())
                .into_par_iter()
                .map(|i| (self.ev0[i] * (next_a - a) + next_ew[i] - ew[i]).norm())
                .reduce(|| 0.0, f64::max);
            if let Some(&prev) = trace.residuals.last() {
                let ratio = if prev > 0.0 { res / prev } else { 0.0 };
                trace.ratios.push(ratio);
                stalled = if ratio >= 0.95 { stalled + 1 } else { 0 };
            }
            trace.residuals.push(res);
            a = next_a;
            w = next_w;
            ew = next_ew;
            source = next_source;
            trace.iterations += 1;
            if stalled >= 3 {
                return Err(Error::NonContractive { ratios: trace.ratios.clone() });
            }
            if res <= self.opts.fixed_point_tol * scale {
                break;
            }
            if trace.iterations >= self.opts.max_iter {
                let ratio = trace.ratios.last().copied().unwrap_or(1.0);
                return Err(Error::NonConvergence { iterations: trace.iterations, ratio });
            }
        }
        let field = HomogenizedField { force: self.force.clone(), a, w: GridConvolution::new(self.grid.clone(), w, &source) };
        Ok((field, trace))
    }

    /// Sup over grid nodes of the change made by one more application of the
    /// update map to `u`.
    pub fn update_defect(&self, u: &HomogenizedField, beta: f64) -> f64 {
        let ew = self.strain(u.w.node_values());
        let source = self.update_source(beta, u.a, &ew);
        let a = self.next_a(beta, u.a);
        let w = self.convolve(&source).0;
        (0..self.grid.len())
            .map(|i| (self.force.exact_velocity(&self.grid.node(i)) * (a - u.a) + w[i] - u.w.node_values()[i]).norm())
            .fold(0.0, f64::max)
    }

    /// Curl of the momentum residual `−div((2 + βφρ)eū) − (1 − φρ)f` on the
    /// nodes of a check grid of spacing `h` over `[lo, hi]`, all by central
    /// differences. The curl annihilates the pressure gradient, so it vanishes
    /// exactly when the divergence-free part of the residual does. Returns the
    /// sup of the curl and the sup of `curl((1 − φρ)f)` for scale.
    pub fn momentum_residual(
        &self,
        u: &dyn FlowField,
        rho: &dyn Density,
        beta: f64,
        lo: Point,
        hi: Point,
        h: f64,
    ) -> (f64, f64) {
        let phi = self.opts.phi;
        let grid = match Grid::covering(lo, hi, h, 0) {
            Ok(g) => g,
            Err(_) => return (f64::NAN, f64::NAN),
        };
        let force = &self.force;
        let residual = |x: &Point| -> Vector3<f64> {
            let mut div = Vector3::zeros();
            for m in 0..3 {
                let mut d = Point::zeros();
                d[m] = h;
                let flux = |y: &Point| {
                    let (r, _) = rho.rho_with_gradient(y);
                    u.symmetric_gradient(y) * (2.0 + beta * phi * r)
                };
                div += (flux(&(x + d)).column(m) - flux(&(x - d)).column(m)) / (2.0 * h);
            }
            let (r, _) = rho.rho_with_gradient(x);
            -div - force.force(x) * (1.0 - phi * r)
        };
        let rhs = |x: &Point| -> Vector3<f64> {
            let (r, _) = rho.rho_with_gradient(x);
            force.force(x) * (1.0 - phi * r)
        };
        let curl = |g: &dyn Fn(&Point) -> Vector3<f64>, x: &Point| -> Vector3<f64> {
            let mut jac = Matrix3::zeros();
            for m in 0..3 {
                let mut d = Point::zeros();
                d[m] = h;
                jac.set_column(m, &((g(&(x + d)) - g(&(x - d))) / (2.0 * h)));
            }
            Vector3::new(jac[(2, 1)] - jac[(1, 2)], jac[(0, 2)] - jac[(2, 0)], jac[(1, 0)] - jac[(0, 1)])
        };
        let (a, b) = (0..grid.len())
            .into_par_iter()
            .map(|i| {
                let x = grid.node(i);
                (curl(&residual, &x).norm(), curl(&rhs, &x).norm())
            })
            .reduce(|| (0.0, 0.0), |p, q| (p.0.max(q.0), p.1.max(q.1)));
        (a, b)
    }
}

/// v̂ for the given force and density.
pub fn solve_hat_v(f: &ForceField, rho: &dyn Density, opts: HomogenizeOptions) -> Result<HomogenizedField> {
    Ok(Homogenizer::new(f, rho, opts)?.hat_v())
}

/// û for the given force and density (β = 5).
pub fn solve_hat_u(f: &ForceField, rho: &dyn Density, opts: HomogenizeOptions) -> Result<HomogenizedField> {
    Ok(Homogenizer::new(f, rho, opts)?.hat_u())
}

/// ū for coefficient `opts.beta`.
pub fn solve_bar_u(
    f: &ForceField,
    rho: &dyn Density,
    opts: HomogenizeOptions,
) -> Result<(HomogenizedField, FixedPointTrace)> {
    Homogenizer::new(f, rho, opts)?.bar_u()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::fields::manufactured_force;
    use crate::quadrature::{gauss_legendre, gauss_legendre_interval};

    fn force() -> ForceField {
        manufactured_force(Vector3::new(0.3, -0.5, 1.0), 0.45, Point::zeros()).unwrap()
    }

    fn bump() -> BumpDensity {
        BumpDensity { center: Point::new(0.15, -0.1, 0.05), radius: 0.6, height: 2.0 }
    }

    #[test]
    fn self_cell_trace_matches_closed_form() {
        let h = 0.3;
        let m = cell_integral([0, 0, 0], h);
        // tr Φ = 1/(2π r), and ∫_{unit cube} 1/r = 3 ln(2+√3) − π/2.
        let exact = h * h * (3.0 * (2.0 + 3f64.sqrt()).ln() - std::f64::consts::FRAC_PI_2) / (2.0 * std::f64::consts::PI);
        assert!((m.trace() - exact).abs() < 1e-12 * exact);
        assert!((m - m.transpose()).norm() < 1e-15);
        assert!((m[(0, 0)] - m[(1, 1)]).abs() < 1e-14 && m[(0, 1)].abs() < 1e-14);
    }

    #[test]
    fn neighbor_cell_matches_fine_gauss() {
        let h = 0.2;
        for off in [[1, 0, -1], [1, 0, 0], [0, 2, 1]] {
        let m = cell_integral(off, h);
        let (x, w) = gauss_legendre_interval(24, -0.5 * h, 0.5 * h);
        let c = Point::new(off[0] as f64, off[1] as f64, off[2] as f64) * h;
        let mut fine = Matrix3::zeros();
        for (a, wa) in x.iter().zip(&w) {
            for (b, wb) in x.iter().zip(&w) {
                for (d, wd) in x.iter().zip(&w) {
                    fine += oseen_unchecked(&(c + Point::new(*a, *b, *d))) * (wa * wb * wd);
                }
            }
        }
        assert!((m - fine).norm() < 1e-8 * fine.norm(), "{off:?}");
        }
    }

    #[test]
    fn fft_convolution_matches_direct_sum() {
        let grid = Grid { origin: Point::new(-0.3, -0.2, 0.1), h: 0.1, dims: [7, 5, 6] };
        let conv = Convolver::new(&grid);
        let source: Vec<Vector3<f64>> = (0..grid.len())
            .map(|i| {
                let t = i as f64;
                Vector3::new((0.3 * t).sin(), (0.7 * t).cos(), 0.1 * t - 1.0)
            })
            .collect();
        let out = conv.convolve(&source);
        for n in [0, 17, 101, grid.len() - 1] {
            let cn = grid.coords(n);
            let mut s = Vector3::zeros();
            for (m, f) in source.iter().enumerate() {
                let cm = grid.coords(m);
                let off = [0, 1, 2].map(|a| cn[a] as i64 - cm[a] as i64);
                s += cell_integral(off, grid.h) * f;
            }
            assert!((out[n] - s).norm() < 1e-12 * s.norm().max(1.0), "{n}");
        }
    }

    #[test]
    fn zero_density_gives_free_solution() {
        let f = force();
        let rho = BumpDensity { height: 0.0, ..bump() };
        let v = solve_hat_v(&f, &rho, HomogenizeOptions::new(0.05, 0.1)).unwrap();
        for x in [Point::new(0.1, 0.2, -0.1), Point::new(1.5, 0.3, 0.2)] {
            assert_eq!(v.value(&x), f.exact_velocity(&x));
        }
        let u = solve_hat_u(&f, &rho, HomogenizeOptions::new(0.0, 0.1)).unwrap();
        let x = Point::new(0.05, -0.1, 0.2);
        assert_eq!(u.value(&x), f.exact_velocity(&x));
    }

    /// φ·Φ∗((ρ − ρ_ref)f)(x) in spherical coordinates about x, where the
    /// Oseen singularity is cancelled by the volume element.
    fn spherical_oracle(f: &ForceField, rho: &BumpDensity, phi: f64, x: &Point) -> Vector3<f64> {
        let rref = rho.rho_with_gradient(&f.center).0;
        let (ct, wt) = gauss_legendre(60);
        let np = 120;
        let reach = (x - f.center).norm() + f.support_radius;
        let segments = 100;
        let len = reach / segments as f64;
        let mut acc = Vector3::zeros();
        for (c, wc) in ct.iter().zip(&wt) {
            let st = (1.0 - c * c).sqrt();
            for k in 0..np {
                let ph = 2.0 * std::f64::consts::PI * (k as f64 + 0.5) / np as f64;
                let n = Point::new(st * ph.cos(), st * ph.sin(), *c);
                let wang = wc * 2.0 * std::f64::consts::PI / np as f64;
                let kernel = oseen_unchecked(&n);
                for seg in 0..segments {
                    let (r, wr) = gauss_legendre_interval(6, seg as f64 * len, (seg + 1) as f64 * len);
                    for (rr, ww) in r.iter().zip(&wr) {
                        let y = x - n * *rr;
                        let fy = f.force(&y);
                        if fy != Vector3::zeros() {
                            acc += kernel * fy * ((rho.rho_with_gradient(&y).0 - rref) * rr * ww * wang);
                        }
                    }
                }
            }
        }
        acc * phi
    }

    /// Same integral for x outside the support of f, in spherical coordinates
    /// about the force center.
    fn exterior_oracle(f: &ForceField, rho: &BumpDensity, phi: f64, x: &Point) -> Vector3<f64> {
        let rref = rho.rho_with_gradient(&f.center).0;
        let (ct, wt) = gauss_legendre(48);
        let (rr, wr) = gauss_legendre_interval(40, 0.0, f.support_radius);
        let np = 96;
        let mut acc = Vector3::zeros();
        for (c, wc) in ct.iter().zip(&wt) {
            let st = (1.0 - c * c).sqrt();
            for k in 0..np {
                let ph = 2.0 * std::f64::consts::PI * (k as f64 + 0.5) / np as f64;
                let n = Point::new(st * ph.cos(), st * ph.sin(), *c);
                let wang = wc * 2.0 * std::f64::consts::PI / np as f64;
                for (r, w) in rr.iter().zip(&wr) {
                    let y = f.center + n * *r;
                    let weight = (rho.rho_with_gradient(&y).0 - rref) * r * r * w * wang;
                    acc += oseen_unchecked(&(x - y)) * f.force(&y) * weight;
                }
            }
        }
        acc * phi
    }

    #[test]
    fn hat_v_matches_spherical_oracle() {
        let f = force();
        let rho = bump();
        let phi = 0.02;
        let v = solve_hat_v(&f, &rho, HomogenizeOptions::new(phi, 0.05)).unwrap();
        let rref = rho.rho_with_gradient(&f.center).0;
        for x in [Point::new(0.2, 0.3, 0.1), Point::new(1.4, 0.2, -0.3)] {
            let corr = if (x - f.center).norm() > f.support_radius {
                exterior_oracle(&f, &rho, phi, &x)
            } else {
                spherical_oracle(&f, &rho, phi, &x)
            };
            let exact = f.exact_velocity(&x) * (1.0 - phi * rref) - corr;
            let err = (v.value(&x) - exact).norm();
            assert!(err < 5e-3 * corr.norm(), "{err} {}", corr.norm());
        }
    }

    #[test]
    fn hat_v_converges_with_h() {
        let f = force();
        let rho = bump();
        let x = [Point::new(0.2, 0.3, 0.1), Point::new(0.5, -0.3, 0.2), Point::new(1.3, 0.4, -0.2)];
        let vals: Vec<Vec<Vector3<f64>>> = [0.1, 0.05, 0.025]
            .iter()
            .map(|&h| {
                let v = solve_hat_v(&f, &rho, HomogenizeOptions::new(0.02, h)).unwrap();
                x.iter().map(|p| v.value(p)).collect()
            })
            .collect();
        for i in 0..x.len() {
            let r = (vals[0][i] - vals[1][i]).norm() / (vals[1][i] - vals[2][i]).norm();
            assert!(r >= 3.0, "ratio {r}");
        }
    }

    #[test]
    fn uniform_density_gives_scaled_free_solution() {
        // Constant ρ over the force support: ū = v0 (1 − φρ)/(1 + βφρ/2).
        let f = force();
        let rho = BumpDensity { center: Point::zeros(), radius: 100.0, height: 1.5 };
        struct Flat(BumpDensity);
        impl Density for Flat {
            fn rho_with_gradient(&self, _x: &Point) -> (f64, Point) {
                (self.0.height, Point::zeros())
            }
            fn support_box(&self) -> (Point, Point) {
                (Point::repeat(f64::NAN), Point::repeat(f64::NAN))
            }
        }
        let phi = 0.04;
        let (u, trace) = solve_bar_u(&f, &Flat(rho), HomogenizeOptions::new(phi, 0.1)).unwrap();
        let alpha = (1.0 - phi * 1.5) / (1.0 + 2.5 * phi * 1.5);
        assert!((u.a - alpha).abs() < 1e-10 * alpha, "{} {}", u.a, alpha);
        assert!(trace.iterations < 30);
    }

    #[test]
    fn first_iterate_is_hat_u_and_fixed_point_contracts() {
        let f = force();
        let rho = bump();
        let opts = HomogenizeOptions { max_iter: 1, ..HomogenizeOptions::new(0.025, 0.06) };
        let hz = Homogenizer::new(&f, &rho, opts).unwrap();
        let hat_u = hz.hat_u();
        let one = match hz.bar_u() {
            Ok((u, _)) => u,
            Err(Error::NonConvergence { .. }) => {
                // One step taken: rebuild the first iterate explicitly.
                let (a0, s0) = hz.hat_v_parts();
                let ew = hz.strain(&hz.convolve(&s0).0);
                let s = hz.update_source(5.0, a0, &ew);
                hz.field(hz.next_a(5.0, a0), &s).0
            }
            Err(e) => panic!("{e}"),
        };
        for x in [Point::new(0.1, 0.0, 0.2), Point::new(2.0, 1.0, 0.0)] {
            assert_eq!(one.value(&x), hat_u.value(&x));
        }
        let opts = HomogenizeOptions::new(0.025, 0.06);
        let hz = Homogenizer::new(&f, &rho, opts).unwrap();
        let (u, trace) = hz.bar_u().unwrap();
        assert!(trace.iterations <= 12, "{trace:?}");
        assert!(trace.ratios.iter().all(|&r| r < 0.5), "{trace:?}");
        let defect = hz.update_defect(&u, 5.0);
        let scale = f.exact_velocity(&Point::new(0.1, 0.1, 0.1)).norm();
        assert!(defect <= 1e-8 * scale, "{defect}");
    }

    #[test]
    fn interpolation_reproduces_cubics() {
        let grid = Arc::new(Grid { origin: Point::new(-0.5, -0.5, -0.5), h: 0.1, dims: [11, 11, 11] });
        let p = |x: &Point| Vector3::new(x[0].powi(3) - x[1] * x[2], x[1] * x[1] * x[0], 1.0 + x[2].powi(3));
        let values: Vec<Vector3<f64>> = (0..grid.len()).map(|i| p(&grid.node(i))).collect();
        let zero = vec![Vector3::zeros(); grid.len()];
        let c = GridConvolution::new(grid, values, &zero);
        let x = Point::new(0.013, -0.271, 0.222);
        assert!((c.value(&x) - p(&x)).norm() < 1e-13);
        let g = c.gradient(&x);
        let exact = Matrix3::new(3.0 * x[0] * x[0], -x[2], -x[1], x[1] * x[1], 2.0 * x[1] * x[0], 0.0, 0.0, 0.0, 3.0 * x[2] * x[2]);
        assert!((g - exact).norm() < 1e-12);
    }

    #[test]
    fn quadrupole_matches_hessian_contraction() {
        let x = Point::new(0.7, -1.1, 0.4);
        let mut t = [Matrix3::zeros(); 3];
        for (j, m) in t.iter_mut().enumerate() {
            let a = Matrix3::from_fn(|p, q| ((p * 3 + q + 2 * j) as f64 * 0.37).sin());
            *m = a + a.transpose();
        }
        let mut expect = Vector3::zeros();
        for l in 0..3 {
            // Matrix (j, m) ↦ T_jml.
            let slice = Matrix3::from_fn(|j, m| t[j][(m, l)]);
            expect += oseen_hessian_contract(&x, &slice).column(l) * 0.5;
        }
        assert!((quadrupole(&x, &t) - expect).norm() < 1e-14 * expect.norm());
    }

    #[test]
    fn trace_csv_header() {
        let t = FixedPointTrace { residuals: vec![1.0, 0.1], ratios: vec![0.1], iterations: 2 };
        let mut buf = Vec::new();
        t.write_csv(&mut buf).unwrap();
        assert!(String::from_utf8(buf).unwrap().starts_with("m,residual,ratio\n"));
    }
}
