//! Scenario files: flat dotted keys (`domain.x_max = 1.0`, `sensors.0.kind = "point"`).
//!
//! Parsing reports the offending line and field; [`Scenario::to_text`] writes
//! a canonical form that parses back to an equal scenario.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt::Write as _;

use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::observer::{GainSpec, InputSpec};
use crate::report::fmt_f64;
use crate::sensing::{Edge, Profile, SensorSpec};
use crate::spectral::{Mode, Rectangle, SlowSpec, DEFAULT_SLOW_THRESHOLD};

pub const DEFAULT_SEED: u64 = 42;

#[derive(Debug, Clone, PartialEq)]
pub enum EstimatorKind {
    Identity,
    /// Reduced estimator with `L = diag(rates)`.
    General { rates: Vec<f64> },
}

#[derive(Debug, Clone, PartialEq)]
pub enum InitialSpec {
    /// Coefficients uniform in `[−scale, scale]` from the scenario seed.
    Random { scale: f64 },
    Explicit(Vec<f64>),
    SingleMode { mode: Mode, amplitude: f64 },
}

/// Actuator matrix (`n × p`, row-major) and a piecewise-constant signal.
#[derive(Debug, Clone, PartialEq)]
pub struct InputConfig {
    pub actuators: usize,
    pub b: Vec<f64>,
    pub starts: Vec<f64>,
    /// `starts.len() × actuators`, row-major.
    pub values: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Scenario {
    pub domain: Rectangle,
    pub region: Rectangle,
    pub shift: f64,
    pub orders: (usize, usize),
    pub slow: SlowSpec,
    /// Horizon of the observability margins.
    pub horizon: f64,
    pub sensors: Vec<SensorSpec>,
    pub gain: GainSpec,
    pub estimator: EstimatorKind,
    pub initial: InitialSpec,
    /// Observer initial state; zero when absent.
    pub observer_initial: Option<Vec<f64>>,
    pub input: Option<InputConfig>,
    pub t_final: f64,
    pub dt: f64,
    /// Tail fraction for decay fits and floors.
    pub tail: f64,
    pub seed: u64,
}

impl Default for Scenario {
    fn default() -> Self {
        Self {
            domain: Rectangle::unit(),
            region: Rectangle::unit(),
            shift: 0.0,
            orders: (4, 4),
            slow: SlowSpec::Threshold(DEFAULT_SLOW_THRESHOLD),
            horizon: 1.0,
            sensors: vec![],
            gain: GainSpec::PerModeShift { sigma_star: 1.0 },
            estimator: EstimatorKind::Identity,
            initial: InitialSpec::Random { scale: 1.0 },
            observer_initial: None,
            input: None,
            t_final: 10.0,
            dt: 0.005,
            tail: crate::regional::DEFAULT_TAIL,
            seed: DEFAULT_SEED,
        }
    }
}

impl Scenario {
    pub fn mode_count(&self) -> usize {
        (self.orders.0 + 1) * (self.orders.1 + 1)
    }

    /// Observer dimension for a system with `n` modes.
    pub fn observer_dim(&self, n: usize) -> usize {
        match &self.estimator {
            EstimatorKind::Identity => n,
            EstimatorKind::General { rates } => rates.len(),
        }
    }

    /// Initial plant coefficients for `modes` (in mode-set order).
    pub fn initial_state(&self, modes: &[Mode]) -> Result<DVector<f64>> {
        let n = modes.len();
        match &self.initial {
            InitialSpec::Random { scale } => {
                let mut rng = ChaCha8Rng::seed_from_u64(self.seed);
                Ok(DVector::from_fn(n, |_, _| rng.random_range(-1.0..=1.0) * scale))
            }
            InitialSpec::Explicit(c) if c.len() == n => Ok(DVector::from_row_slice(c)),
            InitialSpec::Explicit(c) => Err(Error::config(
                "initial.coeffs",
                format!("expected {n} coefficients, found {}", c.len()),
            )),
            InitialSpec::SingleMode { mode, amplitude } => {
                let k = modes.iter().position(|m| m == mode).ok_or_else(|| {
                    Error::config("initial.i", format!("mode {mode} is outside the truncation"))
                })?;
                let mut z = DVector::zeros(n);
                z[k] = *amplitude;
                Ok(z)
            }
        }
    }

    pub fn observer_state(&self, k: usize) -> Result<DVector<f64>> {
        match &self.observer_initial {
            None => Ok(DVector::zeros(k)),
            Some(c) if c.len() == k => Ok(DVector::from_row_slice(c)),
            Some(c) => Err(Error::config(
                "observer_initial.coeffs",
                format!("expected {k} coefficients, found {}", c.len()),
            )),
        }
    }

    /// Actuator matrix and signal for a system with `n` modes.
    pub fn input_for(&self, n: usize) -> Result<(Option<DMatrix<f64>>, InputSpec)> {
        let Some(cfg) = &self.input else {
            return Ok((None, InputSpec::Zero));
        };
        if cfg.b.len() != n * cfg.actuators {
            return Err(Error::config(
                "input.b",
                format!("expected {} entries ({n} modes x {} actuators), found {}", n * cfg.actuators, cfg.actuators, cfg.b.len()),
            ));
        }
        let b = DMatrix::from_row_slice(n, cfg.actuators, &cfg.b);
        let values = cfg
            .values
            .chunks(cfg.actuators.max(1))
            .map(DVector::from_row_slice)
            .collect();
        Ok((
            Some(b),
            InputSpec::PiecewiseConstant {
                starts: cfg.starts.clone(),
                values,
            },
        ))
    }

    pub fn parse(text: &str) -> Result<Scenario> {
        let table: toml::Table = text.parse().map_err(|e: toml::de::Error| Error::Config {
            line: e.span().map(|s| line_of_offset(text, s.start)),
            field: None,
            message: e.message().to_string(),
        })?;
        let mut flat = BTreeMap::new();
        flatten("", &toml::Value::Table(table), &mut flat, text)?;
        let mut f = Fields {
            text,
            map: flat,
            used: BTreeSet::new(),
        };
        let scn = parse_fields(&mut f)?;
        f.finish()?;
        Ok(scn)
    }

    /// Canonical flat text; `Scenario::parse(&s.to_text()) == Ok(s)`.
    pub fn to_text(&self) -> String {
        let mut out = String::new();
        let mut put = |k: &str, v: String| {
            let _ = writeln!(out, "{k} = {v}");
        };
        for (name, r) in [("domain", &self.domain), ("region", &self.region)] {
            put(&format!("{name}.x_min"), fmt_f64(r.x_min));
            put(&format!("{name}.x_max"), fmt_f64(r.x_max));
            put(&format!("{name}.y_min"), fmt_f64(r.y_min));
            put(&format!("{name}.y_max"), fmt_f64(r.y_max));
        }
        put("shift", fmt_f64(self.shift));
        put("truncation.n1", self.orders.0.to_string());
        put("truncation.n2", self.orders.1.to_string());
        match self.slow {
            SlowSpec::Groups(j) => put("slow.groups", j.to_string()),
            SlowSpec::Threshold(s) => put("slow.sigma_min", fmt_f64(s)),
        }
        put("horizon", fmt_f64(self.horizon));
        for (i, s) in self.sensors.iter().enumerate() {
            let key = |k: &str| format!("sensors.{i}.{k}");
            put(&key("kind"), quote(s.kind()));
            match s {
                SensorSpec::InteriorPoint { at } | SensorSpec::BoundaryPoint { at } => {
                    put(&key("x"), fmt_f64(at[0]));
                    put(&key("y"), fmt_f64(at[1]));
                }
                SensorSpec::InteriorZone { support, profile } => {
                    put(&key("x_min"), fmt_f64(support.x_min));
                    put(&key("x_max"), fmt_f64(support.x_max));
                    put(&key("y_min"), fmt_f64(support.y_min));
                    put(&key("y_max"), fmt_f64(support.y_max));
                    profile_lines(profile, &key, &mut put);
                }
                SensorSpec::BoundaryZone {
                    edge, from, to, profile, ..
                } => {
                    put(&key("edge"), quote(edge.name()));
                    put(&key("from"), fmt_f64(*from));
                    put(&key("to"), fmt_f64(*to));
                    profile_lines(profile, &key, &mut put);
                }
                SensorSpec::Filament { polyline, weight } => {
                    let xs: Vec<f64> = polyline.iter().map(|p| p[0]).collect();
                    let ys: Vec<f64> = polyline.iter().map(|p| p[1]).collect();
                    put(&key("xs"), fmt_list(&xs));
                    put(&key("ys"), fmt_list(&ys));
                    profile_lines(weight, &key, &mut put);
                }
            }
        }
        put("gain.kind", quote(self.gain.kind()));
        match &self.gain {
            GainSpec::Riccati { rho } => put("gain.rho", fmt_f64(*rho)),
            GainSpec::PerModeShift { sigma_star } => put("gain.sigma_star", fmt_f64(*sigma_star)),
            GainSpec::Explicit { h } => {
                put("gain.rows", h.nrows().to_string());
                put("gain.cols", h.ncols().to_string());
                let data: Vec<f64> = h.transpose().iter().copied().collect();
                put("gain.h", fmt_list(&data));
            }
        }
        match &self.estimator {
            EstimatorKind::Identity => put("estimator.kind", quote("identity")),
            EstimatorKind::General { rates } => {
                put("estimator.kind", quote("general"));
                put("estimator.rates", fmt_list(rates));
            }
        }
        match &self.initial {
            InitialSpec::Random { scale } => {
                put("initial.kind", quote("random"));
                put("initial.scale", fmt_f64(*scale));
            }
            InitialSpec::Explicit(c) => {
                put("initial.kind", quote("explicit"));
                put("initial.coeffs", fmt_list(c));
            }
            InitialSpec::SingleMode { mode, amplitude } => {
                put("initial.kind", quote("mode"));
                put("initial.i", mode.i.to_string());
                put("initial.j", mode.j.to_string());
                put("initial.amplitude", fmt_f64(*amplitude));
            }
        }
        if let Some(c) = &self.observer_initial {
            put("observer_initial.coeffs", fmt_list(c));
        }
        match &self.input {
            None => put("input.kind", quote("zero")),
            Some(cfg) => {
                put("input.kind", quote("piecewise"));
                put("input.actuators", cfg.actuators.to_string());
                put("input.b", fmt_list(&cfg.b));
                put("input.starts", fmt_list(&cfg.starts));
                put("input.values", fmt_list(&cfg.values));
            }
        }
        put("time.t_final", fmt_f64(self.t_final));
        put("time.dt", fmt_f64(self.dt));
        put("time.tail", fmt_f64(self.tail));
        // TOML integers are signed 64-bit, so larger seeds are written as strings.
        match i64::try_from(self.seed) {
            Ok(_) => put("seed", self.seed.to_string()),
            Err(_) => put("seed", quote(&self.seed.to_string())),
        }
        out
    }
}

fn quote(s: &str) -> String {
    format!("\"{s}\"")
}

fn fmt_list(v: &[f64]) -> String {
    let items: Vec<String> = v.iter().map(|x| fmt_f64(*x)).collect();
    format!("[{}]", items.join(", "))
}

fn profile_lines(p: &Profile, key: &dyn Fn(&str) -> String, put: &mut dyn FnMut(&str, String)) {
    match p {
        Profile::Uniform => put(&key("profile"), quote("uniform")),
        Profile::SymmetricTriangle { center } => {
            put(&key("profile"), quote("triangle"));
            put(&key("profile_center"), fmt_list(center));
        }
        Profile::Tabulated { shape, values } => {
            put(&key("profile"), quote("tabulated"));
            put(&key("profile_shape"), format!("[{}, {}]", shape[0], shape[1]));
            put(&key("profile_values"), fmt_list(values));
        }
    }
}

fn line_of_offset(text: &str, offset: usize) -> usize {
    text[..offset.min(text.len())].matches('\n').count() + 1
}

fn flatten(prefix: &str, v: &toml::Value, out: &mut BTreeMap<String, toml::Value>, text: &str) -> Result<()> {
    match v {
        toml::Value::Table(t) => {
            for (k, v) in t {
                let key = if prefix.is_empty() { k.clone() } else { format!("{prefix}.{k}") };
                flatten(&key, v, out, text)?;
            }
        }
        toml::Value::Array(items) if items.iter().any(|i| i.is_table()) => {
            return Err(Error::Config {
                line: find_line(text, prefix),
                field: Some(prefix.to_string()),
                message: "arrays of tables are not supported; use dotted keys such as sensors.0.kind".into(),
            });
        }
        other => {
            out.insert(prefix.to_string(), other.clone());
        }
    }
    Ok(())
}

/// Line where `key` (or, inside a table section, its last segment) is assigned.
fn find_line(text: &str, key: &str) -> Option<usize> {
    let assigns = |line: &str, k: &str| {
        line.trim_start()
            .strip_prefix(k)
            .is_some_and(|rest| rest.trim_start().starts_with('='))
    };
    let last = key.rsplit('.').next().unwrap_or(key);
    text.lines()
        .position(|l| assigns(l, key))
        .or_else(|| text.lines().position(|l| assigns(l, last)))
        .map(|i| i + 1)
}

struct Fields<'a> {
    text: &'a str,
    map: BTreeMap<String, toml::Value>,
    used: BTreeSet<String>,
}

impl Fields<'_> {
    fn err(&self, key: &str, message: impl Into<String>) -> Error {
        Error::Config {
            line: find_line(self.text, key),
            field: Some(key.to_string()),
            message: message.into(),
        }
    }

    fn get(&mut self, key: &str) -> Option<toml::Value> {
        let v = self.map.get(key).cloned();
        if v.is_some() {
            self.used.insert(key.to_string());
        }
        v
    }

    fn has(&self, key: &str) -> bool {
        self.map.contains_key(key)
    }

    fn number(&self, key: &str, v: &toml::Value) -> Result<f64> {
        let x = match v {
            toml::Value::Float(x) => *x,
            toml::Value::Integer(i) => *i as f64,
            _ => return Err(self.err(key, format!("expected a number, found {}", v.type_str()))),
        };
        if x.is_nan() {
            return Err(self.err(key, "NaN is not allowed"));
        }
        Ok(x)
    }

    fn f64_opt(&mut self, key: &str) -> Result<Option<f64>> {
        match self.get(key) {
            None => Ok(None),
            Some(v) => self.number(key, &v).map(Some),
        }
    }

    fn f64_or(&mut self, key: &str, default: f64) -> Result<f64> {
        Ok(self.f64_opt(key)?.unwrap_or(default))
    }

    fn f64_req(&mut self, key: &str) -> Result<f64> {
        self.f64_opt(key)?.ok_or_else(|| self.err(key, "missing required field"))
    }

    fn finite(&mut self, key: &str) -> Result<f64> {
        let x = self.f64_req(key)?;
        if !x.is_finite() {
            return Err(self.err(key, "must be finite"));
        }
        Ok(x)
    }

    fn positive_or(&mut self, key: &str, default: f64) -> Result<f64> {
        let x = self.f64_or(key, default)?;
        if !(x > 0.0 && x.is_finite()) {
            return Err(self.err(key, format!("must be positive and finite, got {x}")));
        }
        Ok(x)
    }

    fn uint_opt(&mut self, key: &str) -> Result<Option<u64>> {
        match self.get(key) {
            None => Ok(None),
            Some(toml::Value::Integer(i)) if i >= 0 => Ok(Some(i as u64)),
            Some(v) => Err(self.err(key, format!("expected a nonnegative integer, found {v}"))),
        }
    }

    fn usize_or(&mut self, key: &str, default: usize) -> Result<usize> {
        Ok(self.uint_opt(key)?.map(|v| v as usize).unwrap_or(default))
    }

    fn usize_req(&mut self, key: &str) -> Result<usize> {
        self.uint_opt(key)?
            .map(|v| v as usize)
            .ok_or_else(|| self.err(key, "missing required field"))
    }

    fn str_opt(&mut self, key: &str) -> Result<Option<String>> {
        match self.get(key) {
            None => Ok(None),
            Some(toml::Value::String(s)) => Ok(Some(s)),
            Some(v) => Err(self.err(key, format!("expected a string, found {}", v.type_str()))),
        }
    }

    fn list_opt(&mut self, key: &str) -> Result<Option<Vec<f64>>> {
        match self.get(key) {
            None => Ok(None),
            Some(toml::Value::Array(items)) => items.iter().map(|v| self.number(key, v)).collect::<Result<_>>().map(Some),
            Some(v) => Err(self.err(key, format!("expected an array of numbers, found {}", v.type_str()))),
        }
    }

    fn list_req(&mut self, key: &str) -> Result<Vec<f64>> {
        self.list_opt(key)?.ok_or_else(|| self.err(key, "missing required field"))
    }

    fn finite_list(&mut self, key: &str) -> Result<Vec<f64>> {
        let v = self.list_req(key)?;
        if v.iter().any(|x| !x.is_finite()) {
            return Err(self.err(key, "entries must be finite"));
        }
        Ok(v)
    }

    fn rect(&mut self, prefix: &str) -> Result<Rectangle> {
        let x_min = self.finite(&format!("{prefix}.x_min"))?;
        let x_max = self.finite(&format!("{prefix}.x_max"))?;
        let y_min = self.finite(&format!("{prefix}.y_min"))?;
        let y_max = self.finite(&format!("{prefix}.y_max"))?;
        Rectangle::new(x_min, x_max, y_min, y_max).map_err(|e| self.err(&format!("{prefix}.x_min"), e.to_string()))
    }

    fn finish(self) -> Result<()> {
        match self.map.keys().find(|k| !self.used.contains(*k)) {
            Some(k) => Err(self.err(k, "unknown field")),
            None => Ok(()),
        }
    }
}

fn parse_profile(f: &mut Fields, prefix: &str) -> Result<Profile> {
    let key = format!("{prefix}.profile");
    match f.str_opt(&key)?.as_deref().unwrap_or("uniform") {
        "uniform" => Ok(Profile::Uniform),
        "triangle" => {
            let c = f.finite_list(&format!("{prefix}.profile_center"))?;
            if c.len() != 2 {
                return Err(f.err(&format!("{prefix}.profile_center"), "expected [x, y]"));
            }
            Ok(Profile::SymmetricTriangle { center: [c[0], c[1]] })
        }
        "tabulated" => {
            let skey = format!("{prefix}.profile_shape");
            let s = f.list_req(&skey)?;
            if s.len() != 2 || s.iter().any(|v| v.fract() != 0.0 || *v < 1.0) {
                return Err(f.err(&skey, "expected [nx, ny] with positive integers"));
            }
            let values = f.finite_list(&format!("{prefix}.profile_values"))?;
            Ok(Profile::Tabulated {
                shape: [s[0] as usize, s[1] as usize],
                values,
            })
        }
        other => Err(f.err(&key, format!("unknown profile `{other}` (uniform, triangle, tabulated)"))),
    }
}

fn parse_sensor(f: &mut Fields, i: usize, domain: &Rectangle) -> Result<SensorSpec> {
    let p = format!("sensors.{i}");
    let kind_key = format!("{p}.kind");
    let kind = f.str_opt(&kind_key)?.ok_or_else(|| f.err(&kind_key, "missing required field"))?;
    let sensor = match kind.as_str() {
        "point" | "boundary_point" => {
            let at = [f.finite(&format!("{p}.x"))?, f.finite(&format!("{p}.y"))?];
            if kind == "point" {
                SensorSpec::InteriorPoint { at }
            } else {
                SensorSpec::BoundaryPoint { at }
            }
        }
        "zone" => SensorSpec::InteriorZone {
            support: f.rect(&p)?,
            profile: parse_profile(f, &p)?,
        },
        "boundary_zone" => {
            let ekey = format!("{p}.edge");
            let name = f.str_opt(&ekey)?.ok_or_else(|| f.err(&ekey, "missing required field"))?;
            let edge = Edge::parse(&name).ok_or_else(|| f.err(&ekey, format!("unknown edge `{name}` (bottom, top, left, right)")))?;
            let from = f.finite(&format!("{p}.from"))?;
            let to = f.finite(&format!("{p}.to"))?;
            SensorSpec::boundary_zone(domain, edge, from, to, parse_profile(f, &p)?)
        }
        "filament" => {
            let xs = f.finite_list(&format!("{p}.xs"))?;
            let ys = f.finite_list(&format!("{p}.ys"))?;
            if xs.len() != ys.len() {
                return Err(f.err(&format!("{p}.ys"), "xs and ys must have equal length"));
            }
            SensorSpec::Filament {
                polyline: xs.iter().zip(&ys).map(|(x, y)| [*x, *y]).collect(),
                weight: parse_profile(f, &p)?,
            }
        }
        other => {
            return Err(f.err(
                &kind_key,
                format!("unknown sensor kind `{other}` (point, zone, boundary_zone, boundary_point, filament)"),
            ))
        }
    };
    sensor.validate(domain).map_err(|e| f.err(&kind_key, e.to_string()))?;
    Ok(sensor)
}

fn parse_fields(f: &mut Fields) -> Result<Scenario> {
    let d = Scenario::default();
    let domain = if f.has("domain.x_min") { f.rect("domain")? } else { d.domain };
    let region = if f.has("region.x_min") { f.rect("region")? } else { domain };
    if !domain.contains_rect(&region) {
        return Err(f.err("region.x_min", format!("region {region} is not contained in the domain {domain}")));
    }
    let shift = f.f64_or("shift", d.shift)?;
    if !shift.is_finite() {
        return Err(f.err("shift", "must be finite"));
    }
    let orders = (f.usize_or("truncation.n1", d.orders.0)?, f.usize_or("truncation.n2", d.orders.1)?);
    let slow = match (f.uint_opt("slow.groups")?, f.f64_opt("slow.sigma_min")?) {
        (Some(_), Some(_)) => return Err(f.err("slow.groups", "give either slow.groups or slow.sigma_min, not both")),
        (Some(j), None) => SlowSpec::Groups(j as usize),
        (None, Some(s)) if s.is_finite() => SlowSpec::Threshold(s),
        (None, Some(_)) => return Err(f.err("slow.sigma_min", "must be finite")),
        (None, None) => d.slow,
    };
    let horizon = f.positive_or("horizon", d.horizon)?;

    let mut indices = BTreeSet::new();
    for k in f.map.keys() {
        if let Some(rest) = k.strip_prefix("sensors.") {
            let idx = rest.split('.').next().unwrap_or("");
            let i: usize = idx.parse().map_err(|_| f.err(k, format!("sensor index `{idx}` is not a number")))?;
            indices.insert(i);
        }
    }
    if let Some((pos, _)) = indices.iter().enumerate().find(|(pos, i)| *pos != **i) {
        return Err(f.err("sensors", format!("sensor indices must be 0, 1, 2, ...; index {pos} is missing")));
    }
    let sensors = (0..indices.len()).map(|i| parse_sensor(f, i, &domain)).collect::<Result<Vec<_>>>()?;

    let gain = match f.str_opt("gain.kind")?.as_deref() {
        None => d.gain.clone(),
        Some("per_mode_shift") => GainSpec::PerModeShift {
            sigma_star: f.positive_or("gain.sigma_star", 1.0)?,
        },
        Some("riccati") => GainSpec::Riccati {
            rho: f.positive_or("gain.rho", 1.0)?,
        },
        Some("explicit") => {
            let rows = f.usize_req("gain.rows")?;
            let cols = f.usize_req("gain.cols")?;
            let data = f.finite_list("gain.h")?;
            if data.len() != rows * cols {
                return Err(f.err("gain.h", format!("expected {} entries, found {}", rows * cols, data.len())));
            }
            GainSpec::Explicit {
                h: DMatrix::from_row_slice(rows, cols, &data),
            }
        }
        Some(other) => return Err(f.err("gain.kind", format!("unknown gain `{other}` (riccati, per_mode_shift, explicit)"))),
    };

    let estimator = match f.str_opt("estimator.kind")?.as_deref() {
        None | Some("identity") => EstimatorKind::Identity,
        Some("general") => {
            let rates = f.finite_list("estimator.rates")?;
            if rates.is_empty() || rates.iter().any(|r| *r >= 0.0) {
                return Err(f.err("estimator.rates", "need at least one rate, all negative"));
            }
            EstimatorKind::General { rates }
        }
        Some(other) => return Err(f.err("estimator.kind", format!("unknown estimator `{other}` (identity, general)"))),
    };

    let n = (orders.0 + 1) * (orders.1 + 1);
    let initial = match f.str_opt("initial.kind")?.as_deref() {
        None | Some("random") => InitialSpec::Random {
            scale: {
                let s = f.f64_or("initial.scale", 1.0)?;
                if !(s >= 0.0 && s.is_finite()) {
                    return Err(f.err("initial.scale", "must be nonnegative and finite"));
                }
                s
            },
        },
        Some("explicit") => {
            let c = f.finite_list("initial.coeffs")?;
            if c.len() != n {
                return Err(f.err("initial.coeffs", format!("expected {n} coefficients, found {}", c.len())));
            }
            InitialSpec::Explicit(c)
        }
        Some("mode") => {
            let mode = Mode::new(f.usize_req("initial.i")?, f.usize_req("initial.j")?);
            if mode.i > orders.0 || mode.j > orders.1 {
                return Err(f.err("initial.i", format!("mode {mode} is outside the truncation")));
            }
            let amplitude = f.f64_or("initial.amplitude", 1.0)?;
            if !amplitude.is_finite() {
                return Err(f.err("initial.amplitude", "must be finite"));
            }
            InitialSpec::SingleMode { mode, amplitude }
        }
        Some(other) => return Err(f.err("initial.kind", format!("unknown initial state `{other}` (random, explicit, mode)"))),
    };
    let observer_initial = if f.has("observer_initial.coeffs") {
        Some(f.finite_list("observer_initial.coeffs")?)
    } else {
        None
    };

    let input = match f.str_opt("input.kind")?.as_deref() {
        None | Some("zero") => None,
        Some("piecewise") => {
            let actuators = f.usize_req("input.actuators")?;
            let b = f.finite_list("input.b")?;
            let starts = f.finite_list("input.starts")?;
            let values = f.finite_list("input.values")?;
            if b.len() != n * actuators {
                return Err(f.err("input.b", format!("expected {} entries, found {}", n * actuators, b.len())));
            }
            if starts.is_empty() || starts.windows(2).any(|w| !(w[0] < w[1])) {
                return Err(f.err("input.starts", "must be nonempty and strictly increasing"));
            }
            if values.len() != starts.len() * actuators {
                return Err(f.err("input.values", format!("expected {} entries, found {}", starts.len() * actuators, values.len())));
            }
            Some(InputConfig {
                actuators,
                b,
                starts,
                values,
            })
        }
        Some(other) => return Err(f.err("input.kind", format!("unknown input `{other}` (zero, piecewise)"))),
    };

    let t_final = f.positive_or("time.t_final", d.t_final)?;
    let dt = f.positive_or("time.dt", d.dt)?;
    if dt > t_final {
        return Err(f.err("time.dt", format!("time step {dt} exceeds the final time {t_final}")));
    }
    let tail = f.positive_or("time.tail", d.tail)?;
    if tail > 1.0 {
        return Err(f.err("time.tail", "must lie in (0, 1]"));
    }
    let seed = match f.get("seed") {
        None => d.seed,
        Some(toml::Value::Integer(i)) if i >= 0 => i as u64,
        Some(toml::Value::String(s)) => s.parse().map_err(|_| f.err("seed", format!("`{s}` is not a 64-bit unsigned integer")))?,
        Some(v) => return Err(f.err("seed", format!("expected a nonnegative integer, found {v}"))),
    };

    Ok(Scenario {
        domain,
        region,
        shift,
        orders,
        slow,
        horizon,
        sensors,
        gain,
        estimator,
        initial,
        observer_initial,
        input,
        t_final,
        dt,
        tail,
        seed,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    const SAMPLE: &str = r#"
domain.x_min = 0.0
domain.x_max = 1.0
domain.y_min = 0.0
domain.y_max = 2
region.x_min = 0.25
region.x_max = 0.75
region.y_min = 0.5
region.y_max = 1.5
sensors.0.kind = "point"
sensors.0.x = 0.3
sensors.0.y = 0.7
sensors.1.kind = "zone"
sensors.1.x_min = 0.1
sensors.1.x_max = 0.3
sensors.1.y_min = 0.2
sensors.1.y_max = 0.4
sensors.1.profile = "triangle"
sensors.1.profile_center = [0.2, 0.3]
gain.kind = "riccati"
gain.rho = 2.0
time.dt = 0.01
"#;

    #[test]
    fn parses_and_round_trips() {
        let s = Scenario::parse(SAMPLE).unwrap();
        assert_eq!(s.domain.y_max, 2.0);
        assert_eq!(s.sensors.len(), 2);
        assert_eq!(s.gain, GainSpec::Riccati { rho: 2.0 });
        assert_eq!(s.seed, DEFAULT_SEED);
        let again = Scenario::parse(&s.to_text()).unwrap();
        assert_eq!(again, s);
        assert_eq!(again.to_text(), s.to_text());
    }

    #[test]
    fn errors_name_line_and_field() {
        let text = SAMPLE.replace("sensors.0.x = 0.3", "sensors.0.x = \"a\"");
        match Scenario::parse(&text).unwrap_err() {
            Error::Config { line, field, .. } => {
                assert_eq!(field.as_deref(), Some("sensors.0.x"));
                assert_eq!(line, Some(11));
            }
            other => panic!("unexpected {other:?}"),
        }
        let text = format!("{SAMPLE}bogus = 1\n");
        assert!(matches!(Scenario::parse(&text), Err(Error::Config { field: Some(f), .. }) if f == "bogus"));
        let text = SAMPLE.replace("sensors.0.x = 0.3", "sensors.0.x = 1.3");
        assert!(Scenario::parse(&text).unwrap_err().is_config_error());
        assert!(matches!(Scenario::parse("domain.x_min = ["), Err(Error::Config { line: Some(1), .. })));
    }

    #[test]
    fn random_initial_state_is_seeded() {
        let s = Scenario::parse(SAMPLE).unwrap();
        let modes: Vec<Mode> = (0..5).map(|i| Mode::new(i, 0)).collect();
        let a = s.initial_state(&modes).unwrap();
        assert_eq!(a, s.initial_state(&modes).unwrap());
        let other = Scenario { seed: 7, ..s.clone() };
        assert_ne!(a, other.initial_state(&modes).unwrap());
        assert!(a.iter().all(|v| v.abs() <= 1.0));
    }
}
