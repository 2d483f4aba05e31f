//! Octree summation of dipole fields with error-controlled Taylor expansions.

use nalgebra::{Matrix3, Vector3};

use crate::kernels::{dipole_value_raw, pairwise_sum, DipoleSpec, Point};

/// Second-order forward-mode jet: value, gradient and Hessian with respect to
/// the evaluation point.
#[derive(Clone, Copy, Debug)]
pub struct Jet2 {
    pub v: f64,
    pub g: Vector3<f64>,
    pub h: Matrix3<f64>,
}

impl Jet2 {
    pub fn constant(v: f64) -> Jet2 {
        Jet2 { v, g: Vector3::zeros(), h: Matrix3::zeros() }
    }

    pub fn variable(v: f64, k: usize) -> Jet2 {
        let mut g = Vector3::zeros();
        g[k] = 1.0;
        Jet2 { v, g, h: Matrix3::zeros() }
    }

    /// Apply a scalar function given its value and first two derivatives.
    pub fn chain(&self, f: f64, df: f64, d2f: f64) -> Jet2 {
        Jet2 { v: f, g: self.g * df, h: self.g * self.g.transpose() * d2f + self.h * df }
    }

    pub fn scale(&self, s: f64) -> Jet2 {
        Jet2 { v: self.v * s, g: self.g * s, h: self.h * s }
    }
}

impl std::ops::Add for Jet2 {
    type Output = Jet2;
    fn add(self, o: Jet2) -> Jet2 {
        Jet2 { v: self.v + o.v, g: self.g + o.g, h: self.h + o.h }
    }
}

impl std::ops::Sub for Jet2 {
    type Output = Jet2;
    fn sub(self, o: Jet2) -> Jet2 {
        Jet2 { v: self.v - o.v, g: self.g - o.g, h: self.h - o.h }
    }
}

impl std::ops::Mul for Jet2 {
    type Output = Jet2;
    fn mul(self, o: Jet2) -> Jet2 {
        Jet2 {
            v: self.v * o.v,
            g: self.g * o.v + o.g * self.v,
            h: self.h * o.v + o.h * self.v + self.g * o.g.transpose() + o.g * self.g.transpose(),
        }
    }
}

/// Symmetric basis: diagonal entries then (0,1), (0,2), (1,2) pairs.
const BASIS: [(usize, usize); 6] = [(0, 0), (1, 1), (2, 2), (0, 1), (0, 2), (1, 2)];

fn strain_coords(eps: &Matrix3<f64>) -> [f64; 6] {
    let mut c = [0.0; 6];
    for (b, &(k, l)) in BASIS.iter().enumerate() {
        c[b] = eps[(k, l)];
    }
    c
}

/// Exterior dipole kernel for basis strain `b`, as jets in the evaluation
/// offset `r`.
fn basis_kernel_jets(radius: f64, r: &Point) -> [[Jet2; 3]; 6] {
    let rj = [Jet2::variable(r.x, 0), Jet2::variable(r.y, 1), Jet2::variable(r.z, 2)];
    let s = rj[0] * rj[0] + rj[1] * rj[1] + rj[2] * rj[2];
    let sv = s.v;
    let inv5 = s.chain(sv.powf(-2.5), -2.5 * sv.powf(-3.5), 8.75 * sv.powf(-4.5));
    let inv7 = s.chain(sv.powf(-3.5), -3.5 * sv.powf(-4.5), 15.75 * sv.powf(-5.5));
    let r3 = radius.powi(3);
    let r5 = r3 * radius * radius;
    let c = inv5.scale(2.5 * r3) - inv7.scale(2.5 * r5);
    let mut out = [[Jet2::constant(0.0); 3]; 6];
    for (b, &(k, l)) in BASIS.iter().enumerate() {
        // ε = E_kl + E_lk (or E_kk): εr and q = r·εr.
        let mut er = [Jet2::constant(0.0); 3];
        let q;
        if k == l {
            er[k] = rj[k];
            q = rj[k] * rj[k];
        } else {
            er[k] = rj[l];
            er[l] = rj[k];
            q = (rj[k] * rj[l]).scale(2.0);
        }
        let cq = c * q;
        for a in 0..3 {
            out[b][a] = rj[a] * cq + er[a] * inv5.scale(r5);
        }
    }
    out
}

#[derive(Clone, Debug)]
struct Node {
    center: Point,
    extent: f64,
    m0: [f64; 6],
    m1: [Vector3<f64>; 6],
    m2: [Matrix3<f64>; 6],
    children: Vec<usize>,
    members: Vec<usize>,
}

/// Immutable octree over dipole sources.
#[derive(Clone, Debug)]
pub struct DipoleTree {
    nodes: Vec<Node>,
    centers: Vec<Point>,
    strains: Vec<Matrix3<f64>>,
    radius: f64,
    theta: f64,
    order: usize,
    tol: f64,
}

const LEAF_SIZE: usize = 8;

impl DipoleTree {
    /// All specs must share one radius.
    pub fn build(specs: &[DipoleSpec], theta: f64, order: usize, tol: f64) -> DipoleTree {
        let radius = specs.first().map(|s| s.radius).unwrap_or(1.0);
        let mut tree = DipoleTree {
            nodes: Vec::new(),
            centers: specs.iter().map(|s| s.center).collect(),
            strains: specs.iter().map(|s| *s.strain.matrix()).collect(),
            radius,
            theta,
            order: order.min(2),
            tol,
        };
        if !specs.is_empty() {
            let idx: Vec<usize> = (0..specs.len()).collect();
            let (lo, hi) = bounds(&tree.centers, &idx);
            let half = 0.5 * (hi - lo).max() + 1e-12;
            tree.build_node(idx, 0.5 * (lo + hi), half);
        }
        tree
    }

    fn build_node(&mut self, idx: Vec<usize>, box_center: Point, half: f64) -> usize {
        let id = self.nodes.len();
        let center = idx.iter().fold(Point::zeros(), |a, &j| a + self.centers[j]) / idx.len() as f64;
        let mut node = Node {
            center,
            extent: 0.0,
            m0: [0.0; 6],
            m1: [Vector3::zeros(); 6],
            m2: [Matrix3::zeros(); 6],
            children: Vec::new(),
            members: Vec::new(),
        };
        for &j in &idx {
            let y = self.centers[j] - center;
            node.extent = node.extent.max(y.norm());
            let c = strain_coords(&self.strains[j]);
            let yy = y * y.transpose();
            for b in 0..6 {
                node.m0[b] += c[b];
                node.m1[b] += y * c[b];
                node.m2[b] += yy * c[b];
            }
        }
        self.nodes.push(node);
        if idx.len() <= LEAF_SIZE || half < 1e-12 {
            self.nodes[id].members = idx;
            return id;
        }
        let mut octants: [Vec<usize>; 8] = Default::default();
        for &j in &idx {
            let p = self.centers[j];
            let o = (p.x >= box_center.x) as usize
                | (((p.y >= box_center.y) as usize) << 1)
                | (((p.z >= box_center.z) as usize) << 2);
            octants[o].push(j);
        }
        let mut children = Vec::new();
        for (o, sub) in octants.into_iter().enumerate() {
            if sub.is_empty() {
                continue;
            }
            let off = Point::new(
                if o & 1 != 0 { 0.5 } else { -0.5 },
                if o & 2 != 0 { 0.5 } else { -0.5 },
                if o & 4 != 0 { 0.5 } else { -0.5 },
            ) * half;
            children.push(self.build_node(sub, box_center + off, 0.5 * half));
        }
        self.nodes[id].children = children;
        id
    }

    /// Multipole acceptance: the geometric opening criterion and a truncation
    /// estimate of the Taylor remainder relative to the cluster's own scale.
    fn accept(&self, node: &Node, dist: f64) -> bool {
        let a = node.extent;
        if dist <= a + self.radius || a > self.theta * dist {
            return false;
        }
        let ratio = a / dist;
        let p = self.order as i32;
        let growth = ((dist + a) / (dist - a)).powi(2 + p + 1);
        let estimate = (p as f64 + 2.0) * ratio.powi(p + 1) * growth;
        estimate <= 0.1 * self.tol
    }

    pub fn evaluate(&self, x: &Point) -> Point {
        if self.nodes.is_empty() {
            return Point::zeros();
        }
        let mut acc = Point::zeros();
        self.eval_node(0, x, &mut acc);
        acc
    }

    fn eval_node(&self, id: usize, x: &Point, acc: &mut Point) {
        let node = &self.nodes[id];
        let r0 = x - node.center;
        let dist = r0.norm();
        if node.children.is_empty() {
            let m = &node.members;
            *acc += pairwise_sum(m.len(), &|t| {
                let j = m[t];
                dipole_value_raw(&self.centers[j], self.radius, &self.strains[j], x)
            });
            return;
        }
        if self.accept(node, dist) {
            *acc += self.expand(node, &r0);
            return;
        }
        for &c in &node.children {
            self.eval_node(c, x, acc);
        }
    }

    fn expand(&self, node: &Node, r0: &Point) -> Point {
        let jets = basis_kernel_jets(self.radius, r0);
        let mut out = Point::zeros();
        for b in 0..6 {
            for a in 0..3 {
                let j = &jets[b][a];
                let mut v = node.m0[b] * j.v;
                if self.order >= 1 {
                    v -= node.m1[b].dot(&j.g);
                }
                if self.order >= 2 {
                    v += 0.5 * node.m2[b].component_mul(&j.h).sum();
                }
                out[a] += v;
            }
        }
        out
    }

    /// Number of clusters accepted for expansion when evaluating at `x`
    /// (diagnostic).
    pub fn accepted_clusters(&self, x: &Point) -> usize {
        fn rec(t: &DipoleTree, id: usize, x: &Point) -> usize {
            let node = &t.nodes[id];
            let dist = (x - node.center).norm();
            if !node.children.is_empty() && t.accept(node, dist) {
                return 1;
            }
            node.children.iter().map(|&c| rec(t, c, x)).sum()
        }
        if self.nodes.is_empty() {
            0
        } else {
            rec(self, 0, x)
        }
    }
}

fn bounds(points: &[Point], idx: &[usize]) -> (Point, Point) {
    let mut lo = Point::repeat(f64::INFINITY);
    let mut hi = Point::repeat(f64::NEG_INFINITY);
    for &j in idx {
        lo = lo.inf(&points[j]);
        hi = hi.sup(&points[j]);
    }
    (lo, hi)
}
