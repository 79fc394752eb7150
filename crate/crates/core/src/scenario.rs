//! Scenario files: a TOML document describing a model, run settings, the
//! checks to perform and output options.
//!
//! ```toml
//! [model]
//! r1 = 0.5
//! r2 = { kind = "sinusoid", mean = 0.5, amplitude = 0.1, angular_frequency = 1.0, phase = 0.0 }
//! b1 = 1.0
//! b2 = 1.0
//! K1 = 2.0
//! K2 = { kind = "table", knots = [0.0, 10.0], values = [2.0, 3.0] }
//! eps1 = 0.5
//! eps2 = 0.5
//! alpha1 = 0.2
//! alpha2 = 0.2
//! x0 = 1.0
//! y0 = 1.0
//!
//! [[model.marks]]
//! weight = 1.0
//! gamma1 = 0.1
//! gamma2 = -0.05
//!
//! [run]            # all optional
//! dt = 0.001
//! horizon = 100.0
//! n_paths = 100
//! base_seed = 0
//!
//! [checks]         # all optional, everything off by default
//! sandwich = true
//! sandwich_rel_tol = 0.01   # default 10 * dt
//! regime = true
//! persistence = true
//! extinction = true
//! martingale = true
//! moments = [0.5, 2.0]
//! permanence_epsilon = 0.1
//! convergence_levels = 3
//!
//! [output]
//! path_stride = 1
//! write_paths = true
//! ```

use std::ops::Range;
use std::path::Path;

use serde::Deserialize;
use thiserror::Error;
use toml::{Spanned, Table, Value};

use crate::coeffs::{Coefficient, Mark, MarkTable, Shape};
use crate::sim::{ModelSpec, SpeciesParams};

pub const DEFAULT_DT: f64 = 1e-3;
pub const DEFAULT_HORIZON: f64 = 100.0;
pub const DEFAULT_PATHS: usize = 100;
/// Smallest ensemble for which the permanence probe is meaningful.
pub const PERMANENCE_MIN_PATHS: usize = 100;

#[derive(Debug, Error)]
pub enum ScenarioError {
    #[error("cannot read {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
    #[error("line {line}: {message}")]
    Syntax { line: usize, message: String },
    #[error("line {line}: {message}")]
    Invalid { line: usize, message: String },
    #[error("{0}")]
    Inconsistent(String),
}

#[derive(Debug, Clone, PartialEq)]
pub struct RunConfig {
    pub dt: f64,
    pub horizon: f64,
    pub n_paths: usize,
    pub base_seed: u64,
}

impl Default for RunConfig {
    fn default() -> Self {
        RunConfig {
            dt: DEFAULT_DT,
            horizon: DEFAULT_HORIZON,
            n_paths: DEFAULT_PATHS,
            base_seed: 0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct Checks {
    pub sandwich: bool,
    pub sandwich_rel_tol: Option<f64>,
    pub regime: bool,
    pub persistence: bool,
    pub extinction: bool,
    pub martingale: bool,
    pub moments: Vec<f64>,
    pub permanence_epsilon: Option<f64>,
    pub convergence_levels: Option<u32>,
}

impl Checks {
    pub fn is_empty(&self) -> bool {
        *self == Checks::default()
    }

    /// Configured sandwich tolerance, defaulting to `10 dt`.
    pub fn sandwich_tolerance(&self, dt: f64) -> f64 {
        self.sandwich_rel_tol.unwrap_or(10.0 * dt)
    }

    /// Any check that needs a Monte Carlo ensemble.
    pub fn needs_ensemble(&self) -> bool {
        self.sandwich
            || self.regime
            || self.persistence
            || self.extinction
            || self.martingale
            || !self.moments.is_empty()
            || self.permanence_epsilon.is_some()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct OutputConfig {
    /// Write every `path_stride`-th grid point to path CSVs.
    pub path_stride: usize,
    /// Write per-path CSVs in ensemble runs; `None` leaves it to the command.
    pub write_paths: Option<bool>,
}

impl Default for OutputConfig {
    fn default() -> Self {
        OutputConfig {
            path_stride: 1,
            write_paths: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Scenario {
    pub model: ModelSpec,
    pub run: RunConfig,
    pub checks: Checks,
    pub output: OutputConfig,
}

impl Scenario {
    pub fn new(model: ModelSpec) -> Self {
        Scenario {
            model,
            run: RunConfig::default(),
            checks: Checks::default(),
            output: OutputConfig::default(),
        }
    }

    /// Cross-field checks; rerun after command-line overrides.
    pub fn validate(&self) -> Result<(), ScenarioError> {
        let bad = |m: String| Err(ScenarioError::Inconsistent(m));
        let r = &self.run;
        if !(r.dt.is_finite() && r.dt > 0.0) {
            return bad(format!("dt must be positive and finite, got {}", r.dt));
        }
        if !(r.horizon.is_finite() && r.horizon > 0.0) {
            return bad(format!("horizon must be positive and finite, got {}", r.horizon));
        }
        if r.horizon / r.dt > 1e9 {
            return bad(format!("horizon / dt = {} exceeds 1e9 steps", r.horizon / r.dt));
        }
        if r.n_paths == 0 {
            return bad("n_paths must be at least 1".into());
        }
        if r.base_seed > i64::MAX as u64 {
            return bad(format!("base_seed must not exceed {}", i64::MAX));
        }
        if self.checks.permanence_epsilon.is_some() && r.n_paths < PERMANENCE_MIN_PATHS {
            return bad(format!(
                "permanence check needs n_paths >= {PERMANENCE_MIN_PATHS}, got {}",
                r.n_paths
            ));
        }
        Ok(())
    }

    pub fn to_toml_string(&self) -> String {
        toml::to_string(&self.to_table()).expect("scenario tables always serialize")
    }

    /// The scenario as a TOML table, with every setting spelled out.
    pub fn to_table(&self) -> Table {
        let mut model = Table::new();
        for s in crate::coeffs::Species::BOTH {
            let n = s.number();
            let p = self.model.params(s);
            for (key, c) in [
                ("r", &p.growth),
                ("b", &p.interaction),
                ("K", &p.saturation),
                ("eps", &p.crowding),
                ("alpha", &p.volatility),
            ] {
                model.insert(format!("{key}{n}"), coefficient_value(c));
            }
        }
        model.insert("x0".into(), Value::Float(self.model.initial(crate::coeffs::Species::X)));
        model.insert("y0".into(), Value::Float(self.model.initial(crate::coeffs::Species::Y)));
        let marks: Vec<Value> = self
            .model
            .marks()
            .marks()
            .iter()
            .map(|m| {
                let mut t = Table::new();
                t.insert("weight".into(), Value::Float(m.weight()));
                t.insert("gamma1".into(), coefficient_value(m.gamma(crate::coeffs::Species::X)));
                t.insert("gamma2".into(), coefficient_value(m.gamma(crate::coeffs::Species::Y)));
                Value::Table(t)
            })
            .collect();
        if !marks.is_empty() {
            model.insert("marks".into(), Value::Array(marks));
        }

        let mut run = Table::new();
        run.insert("dt".into(), Value::Float(self.run.dt));
        run.insert("horizon".into(), Value::Float(self.run.horizon));
        run.insert("n_paths".into(), Value::Integer(self.run.n_paths as i64));
        run.insert("base_seed".into(), Value::Integer(self.run.base_seed as i64));

        let c = &self.checks;
        let mut checks = Table::new();
        for (key, on) in [
            ("sandwich", c.sandwich),
            ("regime", c.regime),
            ("persistence", c.persistence),
            ("extinction", c.extinction),
            ("martingale", c.martingale),
        ] {
            checks.insert(key.into(), Value::Boolean(on));
        }
        if let Some(tol) = c.sandwich_rel_tol {
            checks.insert("sandwich_rel_tol".into(), Value::Float(tol));
        }
        checks.insert(
            "moments".into(),
            Value::Array(c.moments.iter().map(|&q| Value::Float(q)).collect()),
        );
        if let Some(eps) = c.permanence_epsilon {
            checks.insert("permanence_epsilon".into(), Value::Float(eps));
        }
        if let Some(levels) = c.convergence_levels {
            checks.insert("convergence_levels".into(), Value::Integer(levels as i64));
        }

        let mut output = Table::new();
        output.insert("path_stride".into(), Value::Integer(self.output.path_stride as i64));
        if let Some(w) = self.output.write_paths {
            output.insert("write_paths".into(), Value::Boolean(w));
        }

        let mut doc = Table::new();
        doc.insert("model".into(), Value::Table(model));
        doc.insert("run".into(), Value::Table(run));
        doc.insert("checks".into(), Value::Table(checks));
        doc.insert("output".into(), Value::Table(output));
        doc
    }
}

fn coefficient_value(c: &Coefficient) -> Value {
    match c.shape() {
        Shape::Constant(v) => Value::Float(*v),
        Shape::Sinusoid {
            mean,
            amplitude,
            angular_frequency,
            phase,
        } => {
            let mut t = Table::new();
            t.insert("kind".into(), Value::String("sinusoid".into()));
            t.insert("mean".into(), Value::Float(*mean));
            t.insert("amplitude".into(), Value::Float(*amplitude));
            t.insert("angular_frequency".into(), Value::Float(*angular_frequency));
            t.insert("phase".into(), Value::Float(*phase));
            Value::Table(t)
        }
        Shape::Table { knots, values } => {
            let floats = |v: &[f64]| Value::Array(v.iter().map(|&x| Value::Float(x)).collect());
            let mut t = Table::new();
            t.insert("kind".into(), Value::String("table".into()));
            t.insert("knots".into(), floats(knots));
            t.insert("values".into(), floats(values));
            Value::Table(t)
        }
    }
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct RawScenario {
    model: Spanned<RawModel>,
    #[serde(default)]
    run: Option<Spanned<RawRun>>,
    #[serde(default)]
    checks: Option<Spanned<RawChecks>>,
    #[serde(default)]
    output: Option<Spanned<RawOutput>>,
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct RawModel {
    r1: Spanned<Value>,
    r2: Spanned<Value>,
    b1: Spanned<Value>,
    b2: Spanned<Value>,
    #[serde(rename = "K1")]
    k1: Spanned<Value>,
    #[serde(rename = "K2")]
    k2: Spanned<Value>,
    eps1: Spanned<Value>,
    eps2: Spanned<Value>,
    alpha1: Spanned<Value>,
    alpha2: Spanned<Value>,
    x0: Spanned<f64>,
    y0: Spanned<f64>,
    #[serde(default)]
    marks: Vec<Spanned<RawMark>>,
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct RawMark {
    weight: Spanned<f64>,
    gamma1: Spanned<Value>,
    gamma2: Spanned<Value>,
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct RawRun {
    dt: Option<Spanned<f64>>,
    horizon: Option<Spanned<f64>>,
    n_paths: Option<Spanned<i64>>,
    base_seed: Option<Spanned<i64>>,
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct RawChecks {
    #[serde(default)]
    sandwich: bool,
    sandwich_rel_tol: Option<Spanned<f64>>,
    #[serde(default)]
    regime: bool,
    #[serde(default)]
    persistence: bool,
    #[serde(default)]
    extinction: bool,
    #[serde(default)]
    martingale: bool,
    #[serde(default)]
    moments: Option<Spanned<Vec<f64>>>,
    permanence_epsilon: Option<Spanned<f64>>,
    convergence_levels: Option<Spanned<i64>>,
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct RawOutput {
    path_stride: Option<Spanned<i64>>,
    write_paths: Option<bool>,
}

struct Source<'a>(&'a str);

impl Source<'_> {
    fn line(&self, span: Range<usize>) -> usize {
        let end = span.start.min(self.0.len());
        self.0.as_bytes()[..end].iter().filter(|&&b| b == b'\n').count() + 1
    }

    fn invalid<T>(&self, span: Range<usize>, message: impl ToString) -> Result<T, ScenarioError> {
        Err(ScenarioError::Invalid {
            line: self.line(span),
            message: message.to_string(),
        })
    }
}

fn number(table: &Table, key: &str, default: Option<f64>) -> Result<f64, String> {
    match table.get(key) {
        Some(Value::Float(f)) => Ok(*f),
        Some(Value::Integer(i)) => Ok(*i as f64),
        Some(other) => Err(format!("`{key}` must be a number, found {}", other.type_str())),
        None => default.ok_or_else(|| format!("missing `{key}`")),
    }
}

fn numbers(table: &Table, key: &str) -> Result<Vec<f64>, String> {
    match table.get(key) {
        Some(Value::Array(items)) => items
            .iter()
            .map(|v| match v {
                Value::Float(f) => Ok(*f),
                Value::Integer(i) => Ok(*i as f64),
                other => Err(format!("`{key}` entries must be numbers, found {}", other.type_str())),
            })
            .collect(),
        Some(other) => Err(format!("`{key}` must be an array, found {}", other.type_str())),
        None => Err(format!("missing `{key}`")),
    }
}

fn only_keys(table: &Table, allowed: &[&str]) -> Result<(), String> {
    match table.keys().find(|k| !allowed.contains(&k.as_str())) {
        Some(k) => Err(format!("unknown key `{k}`")),
        None => Ok(()),
    }
}

fn parse_coefficient(value: &Value) -> Result<Coefficient, String> {
    let c = match value {
        Value::Float(f) => Coefficient::constant(*f),
        Value::Integer(i) => Coefficient::constant(*i as f64),
        Value::Table(t) => match t.get("kind").and_then(Value::as_str) {
            Some("constant") => {
                only_keys(t, &["kind", "value"])?;
                Coefficient::constant(number(t, "value", None)?)
            }
            Some("sinusoid") => {
                only_keys(t, &["kind", "mean", "amplitude", "angular_frequency", "phase"])?;
                Coefficient::sinusoid(
                    number(t, "mean", None)?,
                    number(t, "amplitude", None)?,
                    number(t, "angular_frequency", None)?,
                    number(t, "phase", Some(0.0))?,
                )
            }
            Some("table") => {
                only_keys(t, &["kind", "knots", "values"])?;
                Coefficient::table(numbers(t, "knots")?, numbers(t, "values")?)
            }
            Some(other) => return Err(format!("unknown coefficient kind `{other}`")),
            None => return Err("coefficient table needs `kind = \"constant\" | \"sinusoid\" | \"table\"`".into()),
        },
        other => {
            return Err(format!(
                "coefficient must be a number or a table, found {}",
                other.type_str()
            ))
        }
    };
    c.map_err(|e| e.to_string())
}

fn species_params(src: &Source, fields: [(&str, &Spanned<Value>); 5]) -> Result<SpeciesParams, ScenarioError> {
    use crate::coeffs::Floor::*;
    let floors = [Positive, NonNegative, Positive, Positive, NonNegative];
    let mut coeffs = Vec::with_capacity(5);
    for ((name, value), floor) in fields.into_iter().zip(floors) {
        let c = match parse_coefficient(value.get_ref()) {
            Ok(c) => c,
            Err(m) => return src.invalid(value.span(), format!("{name}: {m}")),
        };
        if let Err(e) = c.require(floor, name) {
            return src.invalid(value.span(), e);
        }
        coeffs.push(c);
    }
    let mut it = coeffs.into_iter();
    let mut next = || it.next().expect("five coefficients");
    Ok(SpeciesParams {
        growth: next(),
        interaction: next(),
        saturation: next(),
        crowding: next(),
        volatility: next(),
    })
}

fn build_model(src: &Source, raw: &Spanned<RawModel>) -> Result<ModelSpec, ScenarioError> {
    let m = raw.get_ref();
    let x = species_params(
        src,
        [
            ("r1", &m.r1),
            ("b1", &m.b1),
            ("K1", &m.k1),
            ("eps1", &m.eps1),
            ("alpha1", &m.alpha1),
        ],
    )?;
    let y = species_params(
        src,
        [
            ("r2", &m.r2),
            ("b2", &m.b2),
            ("K2", &m.k2),
            ("eps2", &m.eps2),
            ("alpha2", &m.alpha2),
        ],
    )?;
    let mut marks = Vec::with_capacity(m.marks.len());
    for mark in &m.marks {
        let raw_mark = mark.get_ref();
        let gamma = |v: &Spanned<Value>, name: &str| match parse_coefficient(v.get_ref()) {
            Ok(c) => Ok(c),
            Err(msg) => src.invalid(v.span(), format!("{name}: {msg}")),
        };
        let g1 = gamma(&raw_mark.gamma1, "gamma1")?;
        let g2 = gamma(&raw_mark.gamma2, "gamma2")?;
        for (v, g, name) in [(&raw_mark.gamma1, &g1, "gamma1"), (&raw_mark.gamma2, &g2, "gamma2")] {
            if let Err(e) = g.require(crate::coeffs::Floor::AboveMinusOne, name) {
                return src.invalid(v.span(), e);
            }
        }
        match Mark::new(*raw_mark.weight.get_ref(), g1, g2) {
            Ok(mk) => marks.push(mk),
            Err(e) => return src.invalid(raw_mark.weight.span(), e),
        }
    }
    for v in [&m.x0, &m.y0] {
        if !(v.get_ref().is_finite() && *v.get_ref() > 0.0) {
            return src.invalid(
                v.span(),
                format!("initial state must be positive and finite, got {}", v.get_ref()),
            );
        }
    }
    ModelSpec::new(x, y, MarkTable::new(marks), *m.x0.get_ref(), *m.y0.get_ref())
        .or_else(|e| src.invalid(raw.span(), e))
}

fn positive(src: &Source, v: &Spanned<f64>, name: &str) -> Result<f64, ScenarioError> {
    let x = *v.get_ref();
    if x.is_finite() && x > 0.0 {
        Ok(x)
    } else {
        src.invalid(v.span(), format!("{name} must be positive and finite, got {x}"))
    }
}

fn count(src: &Source, v: &Spanned<i64>, name: &str, min: i64) -> Result<i64, ScenarioError> {
    let x = *v.get_ref();
    if x >= min {
        Ok(x)
    } else {
        src.invalid(v.span(), format!("{name} must be at least {min}, got {x}"))
    }
}

/// Parses and validates a scenario document.
pub fn from_toml_str(text: &str) -> Result<Scenario, ScenarioError> {
    let src = Source(text);
    let raw: RawScenario = toml::from_str(text).map_err(|e| ScenarioError::Syntax {
        line: e.span().map_or(1, |s| src.line(s)),
        message: e.message().trim_end().to_string(),
    })?;
    let model = build_model(&src, &raw.model)?;

    let mut run = RunConfig::default();
    if let Some(r) = &raw.run {
        let r = r.get_ref();
        if let Some(v) = &r.dt {
            run.dt = positive(&src, v, "dt")?;
        }
        if let Some(v) = &r.horizon {
            run.horizon = positive(&src, v, "horizon")?;
        }
        if let Some(v) = &r.n_paths {
            run.n_paths = count(&src, v, "n_paths", 1)? as usize;
        }
        if let Some(v) = &r.base_seed {
            run.base_seed = count(&src, v, "base_seed", 0)? as u64;
        }
    }

    let mut checks = Checks::default();
    let mut permanence_span = None;
    if let Some(c) = &raw.checks {
        let c = c.get_ref();
        checks.sandwich = c.sandwich;
        checks.regime = c.regime;
        checks.persistence = c.persistence;
        checks.extinction = c.extinction;
        checks.martingale = c.martingale;
        if let Some(v) = &c.sandwich_rel_tol {
            checks.sandwich_rel_tol = Some(positive(&src, v, "sandwich_rel_tol")?);
        }
        if let Some(v) = &c.moments {
            if let Some(q) = v.get_ref().iter().find(|q| !(q.is_finite() && **q > 0.0)) {
                return src.invalid(v.span(), format!("moment orders must be positive and finite, got {q}"));
            }
            checks.moments = v.get_ref().clone();
        }
        if let Some(v) = &c.permanence_epsilon {
            let eps = *v.get_ref();
            if !(eps > 0.0 && eps < 1.0) {
                return src.invalid(v.span(), format!("permanence_epsilon must lie in (0, 1), got {eps}"));
            }
            checks.permanence_epsilon = Some(eps);
            permanence_span = Some(v.span());
        }
        if let Some(v) = &c.convergence_levels {
            let levels = count(&src, v, "convergence_levels", 3)?;
            if levels > 16 {
                return src.invalid(v.span(), format!("convergence_levels must be at most 16, got {levels}"));
            }
            checks.convergence_levels = Some(levels as u32);
        }
    }

    let mut output = OutputConfig::default();
    if let Some(o) = &raw.output {
        let o = o.get_ref();
        if let Some(v) = &o.path_stride {
            output.path_stride = count(&src, v, "path_stride", 1)? as usize;
        }
        output.write_paths = o.write_paths;
    }

    let scenario = Scenario {
        model,
        run,
        checks,
        output,
    };
    match (scenario.validate(), permanence_span) {
        (Err(ScenarioError::Inconsistent(m)), Some(span)) if scenario.checks.permanence_epsilon.is_some() => {
            src.invalid(span, m)
        }
        (Err(e), _) => Err(e),
        (Ok(()), _) => Ok(scenario),
    }
}

pub fn load_scenario(path: impl AsRef<Path>) -> Result<Scenario, ScenarioError> {
    let path = path.as_ref();
    let text = std::fs::read_to_string(path).map_err(|source| ScenarioError::Io {
        path: path.display().to_string(),
        source,
    })?;
    from_toml_str(&text)
}
