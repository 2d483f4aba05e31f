//! Run configuration: flat `key = value` lines grouped by `[section]`
//! headers. Every key has a default; unknown keys are rejected.

use std::fmt::Write as _;

use suspension::kernels::{Point, SumMethod};
use suspension::study::{Generator, Schedule, ScheduleEntry, StudyOptions};

#[derive(Clone, Debug, PartialEq)]
pub struct RunConfig {
    pub schedule: Schedule,
    pub options: StudyOptions,
    pub output_dir: Option<String>,
    pub plots: bool,
    pub beta_sweep: bool,
    pub beta_range: (f64, f64),
}

impl Default for RunConfig {
    fn default() -> RunConfig {
        RunConfig {
            schedule: Schedule::standard(),
            options: StudyOptions::default(),
            output_dir: None,
            plots: true,
            beta_sweep: false,
            beta_range: (3.0, 7.0),
        }
    }
}

#[derive(Debug, PartialEq)]
pub struct ConfigError {
    pub line: usize,
    pub message: String,
}

impl std::fmt::Display for ConfigError {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "config line {}: {}", self.line, self.message)
    }
}

fn list(v: &str) -> Result<Vec<f64>, String> {
    v.split(',').map(|t| t.trim().parse::<f64>().map_err(|e| format!("'{}': {e}", t.trim()))).collect()
}

fn scalar<T: std::str::FromStr>(v: &str) -> Result<T, String>
where
    T::Err: std::fmt::Display,
{
    v.parse::<T>().map_err(|e| format!("'{v}': {e}"))
}

fn vec3(v: &str) -> Result<Point, String> {
    let x = list(v)?;
    if x.len() != 3 {
        return Err(format!("expected three comma-separated numbers, got '{v}'"));
    }
    Ok(Point::new(x[0], x[1], x[2]))
}

fn boolean(v: &str) -> Result<bool, String> {
    match v {
        "true" | "yes" | "1" => Ok(true),
        "false" | "no" | "0" => Ok(false),
        _ => Err(format!("expected true or false, got '{v}'")),
    }
}

impl RunConfig {
    pub fn parse(text: &str) -> Result<RunConfig, ConfigError> {
        let mut cfg = RunConfig::default();
        let mut section = String::new();
        let mut n_axis: Option<Vec<usize>> = None;
        let mut phis: Option<Vec<f64>> = None;
        let mut deltas: Option<Vec<f64>> = None;
        let mut jitter = 0.1;
        let mut gap = 2.0;
        let mut kind = "lattice".to_string();
        let mut last_line = 0;
        for (i, raw) in text.lines().enumerate() {
            let line = i + 1;
            last_line = line;
            let t = raw.split('#').next().unwrap_or("").trim();
            if t.is_empty() {
                continue;
            }
            if let Some(name) = t.strip_prefix('[').and_then(|s| s.strip_suffix(']')) {
                section = name.trim().to_string();
                if !["schedule", "force", "numerics", "assumptions", "output"].contains(&section.as_str()) {
                    return Err(ConfigError { line, message: format!("unknown section [{section}]") });
                }
                continue;
            }
            let (key, value) = t
                .split_once('=')
                .map(|(k, v)| (k.trim(), v.trim()))
                .ok_or_else(|| ConfigError { line, message: format!("expected 'key = value', got '{t}'") })?;
            let o = &mut cfg.options;
            let r: Result<(), String> = match (section.as_str(), key) {
                ("schedule", "n_per_axis") => list(value).map(|v| n_axis = Some(v.iter().map(|&x| x as usize).collect())),
                ("schedule", "phi") => list(value).map(|v| phis = Some(v)),
                ("schedule", "delta") => list(value).map(|v| deltas = Some(v)),
                ("schedule", "seed") => scalar(value).map(|v| cfg.schedule.seed = v),
                ("schedule", "generator") => match value {
                    "lattice" | "rsa" => {
                        kind = value.to_string();
                        Ok(())
                    }
                    _ => Err(format!("generator must be lattice or rsa, got '{value}'")),
                },
                ("schedule", "jitter") => scalar(value).map(|v| jitter = v),
                ("schedule", "gap_factor") => scalar(value).map(|v| gap = v),
                ("schedule", "box_scale") => scalar(value).map(|v| cfg.schedule.box_scale = v),
                ("force", "amplitude") => vec3(value).map(|v| o.force.amplitude = v),
                ("force", "support_radius") => scalar(value).map(|v| o.force.support_radius = v),
                ("force", "center") => vec3(value).map(|v| o.force.center = v),
                ("numerics", "grid_h_max") => scalar(value).map(|v| o.grid_h_max = v),
                ("numerics", "reflect_tol") => scalar(value).map(|v| o.reflect_tol = v),
                ("numerics", "reflect_max_iter") => scalar(value).map(|v| o.reflect_max_iter = v),
                ("numerics", "strain_points") => scalar(value).map(|v| o.strain_points = v),
                ("numerics", "sum_method") => match value {
                    "direct" => {
                        o.plan.method = SumMethod::Direct;
                        Ok(())
                    }
                    "tree" => {
                        o.plan.method = SumMethod::Tree;
                        Ok(())
                    }
                    _ => Err(format!("sum_method must be direct or tree, got '{value}'")),
                },
                ("numerics", "tree_theta") => scalar(value).map(|v| o.plan.theta = v),
                ("numerics", "tree_order") => scalar(value).map(|v| o.plan.order = v),
                ("numerics", "tree_tol") => scalar(value).map(|v| o.plan.tol = v),
                ("numerics", "sampler_spacing") => scalar(value).map(|v| o.sampler.spacing = v),
                ("numerics", "sampler_half_width") => scalar(value).map(|v| o.sampler.half_width = v),
                ("numerics", "ring_factors") => list(value).map(|v| o.sampler.ring_factors = v),
                ("numerics", "ring_points") => scalar(value).map(|v| o.sampler.ring_points = v),
                ("numerics", "lp_cell") => scalar(value).map(|v| o.lp_quadrature.cell = v),
                ("numerics", "lp_order") => scalar(value).map(|v| o.lp_quadrature.order = v),
                ("numerics", "lp_radius_factor") => scalar(value).map(|v| o.lp_radius_factor = v),
                ("numerics", "ball_radial") => scalar(value).map(|v| o.ball_quadrature.radial = v),
                ("numerics", "ball_angular") => scalar(value).map(|v| o.ball_quadrature.angular = v),
                ("numerics", "ball_near_factor") => scalar(value).map(|v| o.ball_quadrature.near_factor = v),
                ("numerics", "fixed_point_tol") => scalar(value).map(|v| o.fixed_point_tol = v),
                ("numerics", "fixed_point_max_iter") => scalar(value).map(|v| o.fixed_point_max_iter = v),
                ("assumptions", "c_sep") => scalar(value).map(|v| o.c_sep = v),
                ("assumptions", "eps_phi_log") => scalar(value).map(|v| o.eps_phi_log = v),
                ("output", "dir") => {
                    cfg.output_dir = Some(value.to_string());
                    Ok(())
                }
                ("output", "record_timings") => boolean(value).map(|v| o.record_timings = v),
                ("output", "plots") => boolean(value).map(|v| cfg.plots = v),
                ("output", "beta_sweep") => boolean(value).map(|v| cfg.beta_sweep = v),
                ("output", "beta_range") => list(value).and_then(|v| match v[..] {
                    [a, b] => {
                        cfg.beta_range = (a, b);
                        Ok(())
                    }
                    _ => Err("beta_range needs two numbers".into()),
                }),
                ("", _) => Err(format!("key '{key}' outside any [section]")),
                _ => Err(format!("unknown key '{key}' in [{section}]")),
            };
            r.map_err(|message| ConfigError { line, message })?;
        }
        cfg.schedule.generator = match kind.as_str() {
            "rsa" => Generator::Rsa { gap_factor: gap },
            _ => Generator::Lattice { jitter },
        };
        let err = |message: String| ConfigError { line: last_line, message };
        if n_axis.is_some() || phis.is_some() || deltas.is_some() {
            let n = n_axis.unwrap_or_else(|| cfg.schedule.entries.iter().map(|e| e.n_per_axis).collect());
            let p = phis.unwrap_or_else(|| cfg.schedule.entries.iter().map(|e| e.phi).collect());
            if n.len() != p.len() {
                return Err(err(format!("n_per_axis has {} entries but phi has {}", n.len(), p.len())));
            }
            if let Some(d) = &deltas {
                if d.len() != n.len() {
                    return Err(err(format!("delta has {} entries, expected {}", d.len(), n.len())));
                }
            }
            cfg.schedule.entries = n
                .iter()
                .zip(&p)
                .enumerate()
                .map(|(i, (&n, &phi))| ScheduleEntry { delta: deltas.as_ref().map(|d| d[i]), ..ScheduleEntry::new(n, phi) })
                .collect();
        }
        cfg.schedule.validate().map_err(|e| err(e.to_string()))?;
        cfg.options.plan.validate().map_err(|e| err(e.to_string()))?;
        Ok(cfg)
    }

    /// Full configuration with every key spelled out.
    pub fn render(&self) -> String {
        let join = |v: &[f64]| v.iter().map(|x| format!("{x}")).collect::<Vec<_>>().join(", ");
        let p3 = |p: &Point| format!("{}, {}, {}", p.x, p.y, p.z);
        let s = &self.schedule;
        let o = &self.options;
        let mut t = String::new();
        let _ = writeln!(t, "[schedule]");
        let _ = writeln!(
            t,
            "n_per_axis = {}",
            s.entries.iter().map(|e| e.n_per_axis.to_string()).collect::<Vec<_>>().join(", ")
        );
        let _ = writeln!(t, "phi = {}", join(&s.entries.iter().map(|e| e.phi).collect::<Vec<_>>()));
        if s.entries.iter().any(|e| e.delta.is_some()) {
            let _ = writeln!(t, "delta = {}", join(&s.entries.iter().map(|e| e.delta()).collect::<Vec<_>>()));
        }
        let _ = writeln!(t, "seed = {}", s.seed);
        match s.generator {
            Generator::Lattice { jitter } => {
                let _ = writeln!(t, "generator = lattice\njitter = {jitter}");
            }
            Generator::Rsa { gap_factor } => {
                let _ = writeln!(t, "generator = rsa\ngap_factor = {gap_factor}");
            }
        }
        let _ = writeln!(t, "box_scale = {}", s.box_scale);
        let _ = writeln!(t, "\n[force]");
        let _ = writeln!(t, "amplitude = {}", p3(&o.force.amplitude));
        let _ = writeln!(t, "support_radius = {}", o.force.support_radius);
        let _ = writeln!(t, "center = {}", p3(&o.force.center));
        let _ = writeln!(t, "\n[numerics]");
        let _ = writeln!(t, "grid_h_max = {}", o.grid_h_max);
        let _ = writeln!(t, "reflect_tol = {}", o.reflect_tol);
        let _ = writeln!(t, "reflect_max_iter = {}", o.reflect_max_iter);
        let _ = writeln!(t, "strain_points = {}", o.strain_points);
        let _ = writeln!(t, "sum_method = {}", if o.plan.method == SumMethod::Tree { "tree" } else { "direct" });
        let _ = writeln!(t, "tree_theta = {}", o.plan.theta);
        let _ = writeln!(t, "tree_order = {}", o.plan.order);
        let _ = writeln!(t, "tree_tol = {}", o.plan.tol);
        let _ = writeln!(t, "sampler_spacing = {}", o.sampler.spacing);
        let _ = writeln!(t, "sampler_half_width = {}", o.sampler.half_width);
        let _ = writeln!(t, "ring_factors = {}", join(&o.sampler.ring_factors));
        let _ = writeln!(t, "ring_points = {}", o.sampler.ring_points);
        let _ = writeln!(t, "lp_cell = {}", o.lp_quadrature.cell);
        let _ = writeln!(t, "lp_order = {}", o.lp_quadrature.order);
        let _ = writeln!(t, "lp_radius_factor = {}", o.lp_radius_factor);
        let _ = writeln!(t, "ball_radial = {}", o.ball_quadrature.radial);
        let _ = writeln!(t, "ball_angular = {}", o.ball_quadrature.angular);
        let _ = writeln!(t, "ball_near_factor = {}", o.ball_quadrature.near_factor);
        let _ = writeln!(t, "fixed_point_tol = {}", o.fixed_point_tol);
        let _ = writeln!(t, "fixed_point_max_iter = {}", o.fixed_point_max_iter);
        let _ = writeln!(t, "\n[assumptions]");
        let _ = writeln!(t, "c_sep = {}", o.c_sep);
        let _ = writeln!(t, "eps_phi_log = {}", o.eps_phi_log);
        let _ = writeln!(t, "\n[output]");
        if let Some(d) = &self.output_dir {
            let _ = writeln!(t, "dir = {d}");
        }
        let _ = writeln!(t, "record_timings = {}", o.record_timings);
        let _ = writeln!(t, "plots = {}", self.plots);
        let _ = writeln!(t, "beta_sweep = {}", self.beta_sweep);
        let _ = writeln!(t, "beta_range = {}, {}", self.beta_range.0, self.beta_range.1);
        t
    }
}
