//! Run configuration files.
//!
//! A run file names a model family, its parameters in the library's JSON
//! form, a list of queries, an optional simulation block and where to write
//! the report. Errors carry a pointer to the offending line or field.

use std::fmt;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use serde_json::Value;
use skipfree::panel::PanelSpec;
use skipfree::simulate::SimConfig;
use thiserror::Error;

#[derive(Debug, Error, PartialEq)]
#[error("{pointer}: {message}")]
pub struct ConfigError {
    /// `line L column C` for syntax errors, a JSON pointer otherwise.
    pub pointer: String,
    pub message: String,
}

impl ConfigError {
    pub fn at(pointer: impl Into<String>, message: impl fmt::Display) -> Self {
        ConfigError { pointer: pointer.into(), message: message.to_string() }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ModelKind {
    Chain,
    Cpp,
    Mbi,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum QueryKind {
    Hit,
    TwoSided,
    ExitInterval,
    PassageUp,
    Resolvent,
    TransientGf,
}

impl QueryKind {
    pub fn name(self) -> &'static str {
        match self {
            QueryKind::Hit => "hit",
            QueryKind::TwoSided => "two_sided",
            QueryKind::ExitInterval => "exit_interval",
            QueryKind::PassageUp => "passage_up",
            QueryKind::Resolvent => "resolvent",
            QueryKind::TransientGf => "transient_gf",
        }
    }

    /// Argument names, in the order used by the positional form.
    pub fn arg_names(self) -> &'static [&'static str] {
        match self {
            QueryKind::Hit | QueryKind::Resolvent => &["x", "y"],
            QueryKind::TwoSided | QueryKind::ExitInterval => &["x", "a", "b"],
            QueryKind::PassageUp => &["x", "b"],
            QueryKind::TransientGf => &["x", "t", "s"],
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Format {
    #[default]
    Csv,
    Json,
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct OutputSpec {
    #[serde(default)]
    pub format: Format,
    /// Standard output when absent.
    #[serde(default)]
    pub path: Option<PathBuf>,
}

#[derive(Debug, Clone, PartialEq, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawQuery {
    kind: QueryKind,
    #[serde(default)]
    args: Value,
}

#[derive(Debug, Clone, PartialEq, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawConfig {
    model: ModelKind,
    params: Value,
    #[serde(default)]
    queries: Vec<RawQuery>,
    #[serde(default)]
    sim: Option<SimConfig>,
    #[serde(default)]
    output: OutputSpec,
}

/// Query arguments after validation. Integer arguments are states; `t` and
/// `s` of `transient_gf` are reals.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Args {
    Pair { x: i64, y: i64 },
    Window { x: i64, a: i64, b: i64 },
    Up { x: i64, b: i64 },
    Gf { x: i64, t: f64, s: f64 },
}

impl fmt::Display for Args {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match *self {
            Args::Pair { x, y } => write!(f, "x={x};y={y}"),
            Args::Window { x, a, b } => write!(f, "x={x};a={a};b={b}"),
            Args::Up { x, b } => write!(f, "x={x};b={b}"),
            Args::Gf { x, t, s } => write!(f, "x={x};t={t};s={s}"),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Query {
    pub kind: QueryKind,
    pub args: Args,
}

#[derive(Debug, Clone, PartialEq)]
pub struct RunConfig {
    pub model: ModelKind,
    pub params: Value,
    pub queries: Vec<Query>,
    pub sim: Option<SimConfig>,
    pub output: OutputSpec,
}

fn read_json(path: &Path) -> Result<String, ConfigError> {
    std::fs::read_to_string(path).map_err(|e| ConfigError::at(path.display().to_string(), e))
}

fn parse_typed<D: for<'de> Deserialize<'de>>(text: &str) -> Result<D, ConfigError> {
    let de = &mut serde_json::Deserializer::from_str(text);
    serde_path_to_error::deserialize(de).map_err(|e| {
        let inner = e.inner();
        let pointer = match e.path().to_string().as_str() {
            "." => format!("line {} column {}", inner.line(), inner.column()),
            p => format!("{p} (line {} column {})", inner.line(), inner.column()),
        };
        ConfigError::at(pointer, inner)
    })
}

impl RunConfig {
    pub fn from_path(path: &Path) -> Result<Self, ConfigError> {
        Self::from_str(&read_json(path)?)
    }

    #[allow(clippy::should_implement_trait)]
    pub fn from_str(text: &str) -> Result<Self, ConfigError> {
        let raw: RawConfig = parse_typed(text)?;
        if let Some(sim) = &raw.sim {
            sim.validate().map_err(|e| ConfigError::at("/sim", e))?;
        }
        let queries = raw
            .queries
            .iter()
            .enumerate()
            .map(|(i, q)| parse_args(q.kind, &q.args, i).map(|args| Query { kind: q.kind, args }))
            .collect::<Result<_, _>>()?;
        Ok(RunConfig { model: raw.model, params: raw.params, queries, sim: raw.sim, output: raw.output })
    }
}

fn parse_args(kind: QueryKind, v: &Value, i: usize) -> Result<Args, ConfigError> {
    let names = kind.arg_names();
    let base = format!("/queries/{i}/args");
    let lookup = |k: usize| -> Result<&Value, ConfigError> {
        let name = names[k];
        let found = match v {
            Value::Object(m) => m.get(name),
            Value::Array(a) => a.get(k),
            _ => return Err(ConfigError::at(&base, "expected an object or an array")),
        };
        found.ok_or_else(|| ConfigError::at(&base, format!("missing argument `{name}`")))
    };
    let expected = names.len();
    let given = match v {
        Value::Object(m) => {
            if let Some(extra) = m.keys().find(|k| !names.contains(&k.as_str())) {
                return Err(ConfigError::at(format!("{base}/{extra}"), format!("unknown argument for {}", kind.name())));
            }
            m.len()
        }
        Value::Array(a) => a.len(),
        _ => 0,
    };
    if given > expected {
        return Err(ConfigError::at(&base, format!("{} takes {expected} arguments", kind.name())));
    }
    let int = |k: usize| -> Result<i64, ConfigError> {
        lookup(k)?
            .as_i64()
            .ok_or_else(|| ConfigError::at(format!("{base}/{}", names[k]), "expected an integer state"))
    };
    let real = |k: usize| -> Result<f64, ConfigError> {
        lookup(k)?
            .as_f64()
            .filter(|x| x.is_finite())
            .ok_or_else(|| ConfigError::at(format!("{base}/{}", names[k]), "expected a finite number"))
    };
    Ok(match kind {
        QueryKind::Hit | QueryKind::Resolvent => Args::Pair { x: int(0)?, y: int(1)? },
        QueryKind::TwoSided | QueryKind::ExitInterval => {
            let (x, a, b) = (int(0)?, int(1)?, int(2)?);
            if !(a <= x && x < b) {
                return Err(ConfigError::at(&base, format!("need a <= x < b (x={x}, a={a}, b={b})")));
            }
            Args::Window { x, a, b }
        }
        QueryKind::PassageUp => Args::Up { x: int(0)?, b: int(1)? },
        QueryKind::TransientGf => Args::Gf { x: int(0)?, t: real(1)?, s: real(2)? },
    })
}

/// Panel files are [`PanelSpec`] JSON.
pub fn panel_from_path(path: &Path) -> Result<PanelSpec, ConfigError> {
    let spec: PanelSpec = parse_typed(&read_json(path)?)?;
    if let Some(sim) = &spec.sim {
        sim.validate().map_err(|e| ConfigError::at("/sim", e))?;
    }
    Ok(spec)
}
