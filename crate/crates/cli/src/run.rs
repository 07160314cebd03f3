//! Query evaluation for the `run`, `simulate` and `validate` subcommands.

use num::rational::BigRational;
use serde_json::Value;
use skipfree::chain::{ChainAnalysis, ChainError, FiniteSkipFreeChain};
use skipfree::cpp::{CppError, CppParams, CppTables, Regime};
use skipfree::mbi::{default_horizon, Classification, MbiError, MbiParams, MbiTables};
use skipfree::oracle;
use skipfree::panel::{self, PanelError, PanelSpec, Row};
use skipfree::scalar::{Mode, Scalar};
use skipfree::simulate::{self, give_up_distance, Estimate, Event, Observable, SimConfig, SimError, SimModel};
use thiserror::Error;

use crate::config::{Args, ConfigError, ModelKind, Query, QueryKind, RunConfig};
use crate::report::{Record, Report};

#[derive(Debug, Error)]
pub enum ModelError {
    #[error(transparent)]
    Chain(#[from] ChainError),
    #[error(transparent)]
    Cpp(#[from] CppError),
    #[error(transparent)]
    Mbi(#[from] MbiError),
    #[error(transparent)]
    Sim(#[from] SimError),
    #[error(transparent)]
    Panel(#[from] PanelError),
}

#[derive(Debug, Error)]
pub enum RunError {
    #[error("config error at {0}")]
    Config(#[from] ConfigError),
    #[error("model error at {pointer}: {source}")]
    Model { pointer: String, source: ModelError },
}

impl RunError {
    fn model(pointer: impl Into<String>, e: impl Into<ModelError>) -> Self {
        RunError::Model { pointer: pointer.into(), source: e.into() }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Options {
    pub mode: Mode,
    /// Float tolerance for closed form against oracle.
    pub tol: f64,
    /// Replaces the simulation seed of the input file.
    pub seed: Option<u64>,
}

impl Default for Options {
    fn default() -> Self {
        Options { mode: Mode::Float, tol: 1e-9, seed: None }
    }
}

/// Share of Monte Carlo checks that must land within three standard errors
/// for `validate` to pass.
pub const MC_PASS_SHARE: f64 = 0.99;

enum Model<T> {
    Chain(ChainAnalysis<T>),
    Cpp(CppTables<T>),
    Mbi(MbiTables<T>),
}

fn build<T: Scalar>(kind: ModelKind, params: &Value, queries: &[Query]) -> Result<Model<T>, RunError> {
    let bad = |e: &dyn std::fmt::Display| ConfigError::at("/params", e);
    Ok(match kind {
        ModelKind::Chain => {
            let chain = FiniteSkipFreeChain::<T>::from_json(params).map_err(|e| bad(&e))?;
            Model::Chain(ChainAnalysis::new(chain).map_err(|e| RunError::model("/params", e))?)
        }
        ModelKind::Cpp => {
            let prm = CppParams::<T>::from_json(params).map_err(|e| bad(&e))?;
            Model::Cpp(CppTables::build(&prm, 64).map_err(|e| RunError::model("/params", e))?)
        }
        ModelKind::Mbi => {
            let prm = MbiParams::<T>::from_json(params).map_err(|e| bad(&e))?;
            let reach = queries.iter().map(|q| top_state(&q.args)).max().unwrap_or(0).max(0);
            Model::Mbi(MbiTables::build(&prm, default_horizon(reach as usize)).map_err(|e| RunError::model("/params", e))?)
        }
    })
}

fn top_state(a: &Args) -> i64 {
    match *a {
        Args::Pair { x, y } => x.max(y),
        Args::Window { b, .. } | Args::Up { b, .. } => b,
        Args::Gf { x, .. } => x,
    }
}

impl<T: Scalar> Model<T> {
    /// Rejects query kinds that the model cannot answer.
    fn admit(&self, q: &Query) -> Result<(), String> {
        match (self, q.kind) {
            (Model::Chain(_), QueryKind::TransientGf) => Err("transient_gf needs a cpp or mbi model".into()),
            (Model::Cpp(t), QueryKind::Resolvent) if t.regime == Regime::RecurrentCritical => {
                Err("resolvent is infinite for a recurrent process".into())
            }
            (Model::Mbi(t), QueryKind::Resolvent) if t.class() == Classification::Recurrent => {
                Err("resolvent is infinite for a recurrent process".into())
            }
            _ => Ok(()),
        }
    }

    fn s0(&self) -> f64 {
        match self {
            Model::Chain(_) => 1.0,
            Model::Cpp(t) => t.s0.to_f64_lossy(),
            Model::Mbi(t) => t.s0.to_f64_lossy(),
        }
    }

    fn sim_model(&self) -> SimModel {
        match self {
            Model::Chain(an) => SimModel::from_chain(an.chain()),
            Model::Cpp(t) => SimModel::from_cpp(&t.params),
            Model::Mbi(t) => SimModel::from_mbi(&t.params),
        }
    }

    /// Closed form and, where a finite linear system decides the event, the
    /// oracle value.
    fn evaluate(&self, q: &Query) -> Result<Evaluated<T>, ModelError> {
        use QueryKind as K;
        let exact = |v: T| Evaluated::Exact(v, None);
        let checked = |v: T, o: T| Evaluated::Exact(v, Some(o));
        Ok(match (self, q.kind, q.args) {
            (Model::Chain(an), K::Hit, Args::Pair { x, y }) => checked(an.hit_prob(x, y)?, oracle::hit_prob(an.chain(), x, y)?),
            (Model::Chain(an), K::Resolvent, Args::Pair { x, y }) => {
                let c = an.chain();
                let (i, j) = ((x - c.lo()) as usize, (y - c.lo()) as usize);
                let direct = an.resolvent().raw[(i, j)].clone();
                checked(an.resolvent_closed(x, y)?, direct)
            }
            (Model::Chain(an), K::TwoSided, Args::Window { x, a, b }) => {
                checked(an.two_sided_exit(x, a, b)?, oracle::two_sided_exit(an.chain(), x, a, b)?)
            }
            (Model::Chain(an), K::ExitInterval, Args::Window { x, a, b }) => {
                checked(an.exit_interval_prob(x, a, b)?, oracle::exit_interval_prob(an.chain(), x, a, b)?)
            }
            (Model::Chain(an), K::PassageUp, Args::Up { x, b }) => {
                checked(an.passage_up_prob(x, b)?, oracle::passage_up(an.chain(), x, b)?)
            }
            (Model::Cpp(t), K::Hit, Args::Pair { x, y }) => exact(t.hit_prob(x, y)?),
            (Model::Cpp(t), K::Resolvent, Args::Pair { x, y }) => exact(t.resolvent_g(x, y)?),
            (Model::Cpp(t), K::TwoSided, Args::Window { x, a, b }) => {
                let o = oracle::two_sided_exit(&t.lumped_window(a, b)?, x, a, b)?;
                checked(t.two_sided_exit_down(x, a, b)?, o)
            }
            (Model::Cpp(t), K::ExitInterval, Args::Window { x, a, b }) => {
                let o = oracle::exit_interval_prob(&t.lumped_window(a, b)?, x, a, b)?;
                checked(t.exit_interval_prob(x, a, b)?, o)
            }
            (Model::Cpp(t), K::PassageUp, Args::Up { x, b }) => exact(t.passage_up_prob(x, b)?),
            (Model::Cpp(t), K::TransientGf, Args::Gf { x, t: time, s }) => {
                let p = t.params.convert(Scalar::to_f64_lossy);
                let mbp = MbiTables::build(&MbiParams::branching(p.alpha, p.mu, p.p)?, 16)?;
                Evaluated::Float(mbp.transient_gf(x, time, s)?)
            }
            (Model::Mbi(t), K::Hit, Args::Pair { x, y }) => exact(t.hit_prob(x, y)?),
            (Model::Mbi(t), K::Resolvent, Args::Pair { x, y }) => exact(t.resolvent_g(x, y)?),
            (Model::Mbi(t), K::TwoSided, Args::Window { x, a, b }) => {
                let o = oracle::two_sided_exit(&t.lumped_window(a, b)?, x, a, b)?;
                checked(t.two_sided_exit(x, a, b)?, o)
            }
            (Model::Mbi(t), K::ExitInterval, Args::Window { x, a, b }) => {
                let o = oracle::exit_interval_prob(&t.lumped_window(a, b)?, x, a, b)?;
                checked(t.exit_interval_prob(x, a, b)?, o)
            }
            (Model::Mbi(t), K::PassageUp, Args::Up { x, b }) => exact(t.passage_up_prob(x, b)?),
            (Model::Mbi(t), K::TransientGf, Args::Gf { x, t: time, s }) => Evaluated::Float(t.transient_gf(x, time, s)?),
            _ => unreachable!("arguments are parsed per kind and kinds are admitted per model"),
        })
    }

    /// The simulation that estimates the query, if there is one.
    fn mc_request(&self, q: &Query) -> Option<(i64, Event, Observable)> {
        use QueryKind as K;
        let chain = matches!(self, Model::Chain(_));
        let success = |x, e| Some((x, e, Observable::Success));
        match (q.kind, q.args) {
            (K::TwoSided, Args::Window { x, a, b }) => success(x, Event::TwoSided { a, b }),
            (K::ExitInterval, Args::Window { x, a, b }) => success(x, Event::Exit { a, b }),
            (K::PassageUp, Args::Up { x, b }) => success(x, Event::PassUp { b, give_up_below: None }),
            (K::Hit, Args::Pair { x, y }) if chain => success(x, Event::Hit { y, give_up_above: None, give_up_below: None }),
            // upward hits can overshoot and drift away; only downward ones are simulated
            (K::Hit, Args::Pair { x, y }) if y <= x => {
                let s0 = self.s0();
                let ceiling = (s0 < 1.0).then(|| x + give_up_distance(s0));
                success(x, Event::Hit { y, give_up_above: ceiling, give_up_below: None })
            }
            (K::Resolvent, Args::Pair { x, y }) => match self {
                Model::Chain(an) => {
                    let never = Event::PassUp { b: an.chain().hi() + 1, give_up_below: None };
                    Some((x, never, Observable::Occupation { y }))
                }
                _ => None,
            },
            _ => None,
        }
    }
}

enum Evaluated<T> {
    Exact(T, Option<T>),
    /// Computed in binary64 whatever the mode.
    Float(f64),
}

impl<T: Scalar> Evaluated<T> {
    fn row(&self, q: &Query, tol: f64) -> (Row, f64) {
        let (kind, args) = (q.kind.name(), q.args.to_string());
        match self {
            Evaluated::Exact(v, o) => (Row::compare(kind, args, v, o.as_ref(), tol), v.to_f64_lossy()),
            Evaluated::Float(v) => (Row::compare::<f64>(kind, args, v, None, tol), *v),
        }
    }
}

fn sim_config(cfg: &Option<SimConfig>, opts: &Options, index: usize) -> Option<SimConfig> {
    cfg.as_ref().map(|c| {
        let seed = opts.seed.unwrap_or(c.seed).wrapping_add(index as u64);
        SimConfig { seed, ..c.clone() }
    })
}

fn mc_estimate<T: Scalar>(m: &Model<T>, sim: &SimModel, q: &Query, cfg: &SimConfig, i: usize) -> Result<Option<Estimate>, RunError> {
    let Some((x0, event, observable)) = m.mc_request(q) else {
        return Ok(None);
    };
    let req = simulate::Request { model: sim, x0, event, observable, weighting: None };
    simulate::estimate(&req, cfg).map(Some).map_err(|e| RunError::model(format!("/queries/{i}"), e))
}

fn run_typed<T: Scalar>(cfg: &RunConfig, opts: &Options) -> Result<Report, RunError> {
    let model = build::<T>(cfg.model, &cfg.params, &cfg.queries)?;
    for (i, q) in cfg.queries.iter().enumerate() {
        model.admit(q).map_err(|m| ConfigError::at(format!("/queries/{i}/kind"), m))?;
    }
    let sim = model.sim_model();
    let mut records = Vec::with_capacity(cfg.queries.len());
    for (i, q) in cfg.queries.iter().enumerate() {
        let value = model.evaluate(q).map_err(|e| RunError::model(format!("/queries/{i}"), e))?;
        let (mut row, target) = value.row(q, opts.tol);
        if let Some(sc) = sim_config(&cfg.sim, opts, i) {
            if let Some(est) = mc_estimate(&model, &sim, q, &sc, i)? {
                row = row.with_mc(target, est);
            }
        }
        records.push(Record::from_row(&row));
    }
    Ok(Report::new(records))
}

/// Closed forms, oracles and (when configured) simulation for every query.
pub fn run(cfg: &RunConfig, opts: &Options) -> Result<Report, RunError> {
    match opts.mode {
        Mode::Float => run_typed::<f64>(cfg, opts),
        Mode::Rational => run_typed::<BigRational>(cfg, opts),
    }
}

/// Simulation estimates only. Queries without a simulation are reported
/// without an estimate.
pub fn simulate_only(cfg: &RunConfig, opts: &Options) -> Result<Report, RunError> {
    let model = build::<f64>(cfg.model, &cfg.params, &cfg.queries)?;
    for (i, q) in cfg.queries.iter().enumerate() {
        model.admit(q).map_err(|m| ConfigError::at(format!("/queries/{i}/kind"), m))?;
    }
    let sim = model.sim_model();
    let base = Some(cfg.sim.clone().unwrap_or_default());
    let mut records = Vec::with_capacity(cfg.queries.len());
    for (i, q) in cfg.queries.iter().enumerate() {
        let sc = sim_config(&base, opts, i).expect("base config present");
        let est = mc_estimate(&model, &sim, q, &sc, i)?;
        records.push(Record::estimate_only(q.kind.name(), q.args.to_string(), est));
    }
    Ok(Report::new(records))
}

/// Outcome of `validate`: the report and whether the panel passed.
pub struct Validation {
    pub report: Report,
    pub passed: bool,
}

/// Identity panel in the requested mode, then the Monte Carlo panel when the
/// spec asks for one. Identities must all hold; simulation checks must reach
/// [`MC_PASS_SHARE`].
pub fn validate(spec: &PanelSpec, opts: &Options) -> Result<Validation, RunError> {
    let identities = match opts.mode {
        Mode::Float => panel::identity_panel::<f64>(spec, opts.tol),
        Mode::Rational => panel::identity_panel::<BigRational>(spec, opts.tol),
    }
    .map_err(|e| RunError::model("/", e))?;
    let mut passed = identities.all_pass();
    let mut records: Vec<Record> = identities.rows.iter().map(Record::from_row).collect();
    if spec.mc_checks > 0 {
        let base = spec.sim.clone().unwrap_or_default();
        let cfg = SimConfig { seed: opts.seed.unwrap_or(base.seed), ..base };
        let mc = panel::mc_panel(spec.seed, spec.mc_checks, &cfg).map_err(|e| RunError::model("/sim", e))?;
        let needed = (MC_PASS_SHARE * spec.mc_checks as f64).ceil() as usize;
        passed &= mc.passed() >= needed;
        records.extend(mc.rows.iter().map(Record::from_row));
    }
    Ok(Validation { report: Report::new(records), passed })
}
