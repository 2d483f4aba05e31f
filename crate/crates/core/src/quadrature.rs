//! Gauss–Legendre rules, Lebedev sphere rules and ball product rules.

use nalgebra::Vector3;

/// Gauss–Legendre nodes and weights on [-1, 1], computed by Newton iteration
/// on the Legendre recurrence.
pub fn gauss_legendre(n: usize) -> (Vec<f64>, Vec<f64>) {
    assert!(n >= 1, "Gauss-Legendre rule needs at least one node");
    let mut nodes = vec![0.0; n];
    let mut weights = vec![0.0; n];
    let m = n.div_ceil(2);
    for i in 0..m {
        let mut x = (std::f64::consts::PI * (i as f64 + 0.75) / (n as f64 + 0.5)).cos();
        let mut dp = 0.0;
        for _ in 0..100 {
            let (p, d) = legendre(n, x);
            dp = d;
            let dx = p / d;
            x -= dx;
            if dx.abs() < 1e-16 {
                break;
            }
        }
        let (_, d) = legendre(n, x);
        if d != 0.0 {
            dp = d;
        }
        let w = 2.0 / ((1.0 - x * x) * dp * dp);
        nodes[i] = -x;
        nodes[n - 1 - i] = x;
        weights[i] = w;
        weights[n - 1 - i] = w;
    }
    (nodes, weights)
}

fn legendre(n: usize, x: f64) -> (f64, f64) {
    let mut p0 = 1.0;
    let mut p1 = x;
    if n == 0 {
        return (1.0, 0.0);
    }
    for k in 2..=n {
        let kf = k as f64;
        let p2 = ((2.0 * kf - 1.0) * x * p1 - (kf - 1.0) * p0) / kf;
        p0 = p1;
        p1 = p2;
    }
    let dp = n as f64 * (x * p1 - p0) / (x * x - 1.0);
    (p1, dp)
}

/// Gauss–Legendre rule mapped to [a, b].
pub fn gauss_legendre_interval(n: usize, a: f64, b: f64) -> (Vec<f64>, Vec<f64>) {
    let (x, w) = gauss_legendre(n);
    let half = 0.5 * (b - a);
    let mid = 0.5 * (a + b);
    (
        x.iter().map(|t| mid + half * t).collect(),
        w.iter().map(|v| v * half).collect(),
    )
}

/// A quadrature rule on the unit sphere; weights sum to one so that the rule
/// computes surface averages.
#[derive(Clone, Debug)]
pub struct SphereRule {
    pub directions: Vec<Vector3<f64>>,
    pub weights: Vec<f64>,
    /// Highest polynomial degree integrated exactly.
    pub degree: usize,
}

impl SphereRule {
    /// Lebedev rule with the given number of points (6, 14, 26 or 50).
    pub fn lebedev(points: usize) -> Option<SphereRule> {
        let mut rule = SphereRule { directions: Vec::new(), weights: Vec::new(), degree: 0 };
        match points {
            6 => {
                rule.push_axes(1.0 / 6.0);
                rule.degree = 3;
            }
            14 => {
                rule.push_axes(1.0 / 15.0);
                rule.push_corners(3.0 / 40.0);
                rule.degree = 5;
            }
            26 => {
                rule.push_axes(1.0 / 21.0);
                rule.push_edges(4.0 / 105.0);
                rule.push_corners(9.0 / 280.0);
                rule.degree = 7;
            }
            50 => {
                rule.push_axes(4.0 / 315.0);
                rule.push_edges(64.0 / 2835.0);
                rule.push_corners(27.0 / 1280.0);
                let l = 1.0 / 11f64.sqrt();
                let m = 3.0 / 11f64.sqrt();
                rule.push_llm(l, m, 14641.0 / 725760.0);
                rule.degree = 11;
            }
            _ => return None,
        }
        Some(rule)
    }

    /// The Lebedev rule with the fewest points that is exact to `degree`.
    pub fn for_degree(degree: usize) -> SphereRule {
        let points = match degree {
            0..=3 => 6,
            4..=5 => 14,
            6..=7 => 26,
            _ => 50,
        };
        SphereRule::lebedev(points).expect("tabulated rule")
    }

    pub fn len(&self) -> usize {
        self.directions.len()
    }

    pub fn is_empty(&self) -> bool {
        self.directions.is_empty()
    }

    /// Average of `g` over the sphere of radius `r` about `center`.
    pub fn average<T, F>(&self, center: &Vector3<f64>, r: f64, mut g: F) -> T
    where
        T: std::ops::Add<Output = T> + std::ops::Mul<f64, Output = T> + Default,
        F: FnMut(&Vector3<f64>, &Vector3<f64>) -> T,
    {
        let mut acc = T::default();
        for (n, w) in self.directions.iter().zip(&self.weights) {
            let x = center + n * r;
            acc = acc + g(&x, n) * *w;
        }
        acc
    }

    fn push_axes(&mut self, w: f64) {
        for k in 0..3 {
            for s in [1.0, -1.0] {
                let mut v = Vector3::zeros();
                v[k] = s;
                self.directions.push(v);
                self.weights.push(w);
            }
        }
    }

    fn push_edges(&mut self, w: f64) {
        let a = std::f64::consts::FRAC_1_SQRT_2;
        for (i, j) in [(0, 1), (0, 2), (1, 2)] {
            for si in [1.0, -1.0] {
                for sj in [1.0, -1.0] {
                    let mut v = Vector3::zeros();
                    v[i] = si * a;
                    v[j] = sj * a;
                    self.directions.push(v);
                    self.weights.push(w);
                }
            }
        }
    }

    fn push_corners(&mut self, w: f64) {
        let a = 1.0 / 3f64.sqrt();
        for sx in [1.0, -1.0] {
            for sy in [1.0, -1.0] {
                for sz in [1.0, -1.0] {
                    self.directions.push(Vector3::new(sx * a, sy * a, sz * a));
                    self.weights.push(w);
                }
            }
        }
    }

    fn push_llm(&mut self, l: f64, m: f64, w: f64) {
        for k in 0..3 {
            for s1 in [1.0, -1.0] {
                for s2 in [1.0, -1.0] {
                    for s3 in [1.0, -1.0] {
                        let mut v = Vector3::new(s1 * l, s2 * l, s3 * l);
                        v[k] = s3 * m;
                        v[(k + 1) % 3] = s1 * l;
                        v[(k + 2) % 3] = s2 * l;
                        self.directions.push(v);
                        self.weights.push(w);
                    }
                }
            }
        }
    }
}

/// Product rule on a ball: Gauss radial nodes (with the r² Jacobian) times a
/// sphere rule. Weights sum to the ball volume.
#[derive(Clone, Debug)]
pub struct BallRule {
    /// Offsets from the ball center.
    pub offsets: Vec<Vector3<f64>>,
    pub weights: Vec<f64>,
}

impl BallRule {
    pub fn new(radius: f64, radial: usize, sphere: &SphereRule) -> BallRule {
        let (r, wr) = gauss_legendre_interval(radial, 0.0, radius);
        let four_pi = 4.0 * std::f64::consts::PI;
        let mut offsets = Vec::with_capacity(radial * sphere.len());
        let mut weights = Vec::with_capacity(radial * sphere.len());
        for (ri, wi) in r.iter().zip(&wr) {
            for (n, wn) in sphere.directions.iter().zip(&sphere.weights) {
                offsets.push(n * *ri);
                weights.push(four_pi * wn * wi * ri * ri);
            }
        }
        BallRule { offsets, weights }
    }
}
