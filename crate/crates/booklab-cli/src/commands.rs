//! Subcommands and file emission. Every file starts with the header line
//! from [`Config::header`]; timings go to stderr only so that outputs are
//! reproducible byte for byte.

use crate::config::{Config, ConfigError};
use anyhow::Context;
use booklab::book::BookState;
use booklab::broker::{
    simulate_broker, write_broker_csv, BrokerRun, Controller, Side, VolumeController, VolumeParams,
    VwapController,
};
use booklab::dp::{
    map_range, Exec, Passive, PolicySource, PolicyTable, SpaceSpec, StateSpace, TablePolicy,
};
use booklab::hft::{ou_tree, simulate_hft, solve_hft};
use booklab::market::{
    replay, run_market, summarize, write_agent_csv, write_log_csv, write_summary, AgentKind,
    AgentMeta, Brain, EventLog, Limits, MarketAgent, MarketSpec, ReplayLog,
};
use booklab::mm::{simulate_mm, solve_mm, PathSummary};
use booklab::prior::{build_default_kernel, KernelModel};
use booklab::rng::{purpose, stream};
use booklab::stats::{flow_stats, histogram, mean, sd, stderr, write_histogram_csv};
use booklab::vwap::vwap_coeffs;
use booklab::AgentState;
use clap::{Parser, Subcommand, ValueEnum};
use serde::{Deserialize, Serialize};
use std::collections::BTreeMap;
use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};
use std::time::Instant;
use thiserror::Error;

#[derive(Debug, Parser)]
#[command(
    name = "booklab",
    version,
    about = "Limit order book agents: solve, simulate, run a shared market."
)]
pub struct Cli {
    /// Config file (flat section.key = value); the built-in default if omitted.
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,
    #[arg(long, global = true, default_value_t = 1)]
    pub seed: u64,
    /// Output directory; policies are read from and written to it.
    #[arg(long, global = true, default_value = "out")]
    pub out: PathBuf,
    /// Number of Monte Carlo paths (default: stats.paths).
    #[arg(long, global = true)]
    pub paths: Option<usize>,
    /// `key=value`, repeatable. A key without a section sets it in every
    /// section that has it.
    #[arg(long = "override", global = true, value_name = "KEY=VALUE")]
    pub overrides: Vec<String>,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Solve a dynamic programme and write its policy and value tables.
    Solve { target: SolveTarget },
    /// Monte Carlo paths, per-path results, histograms and a summary.
    Simulate { target: SimTarget },
    /// One MM, one HFT and four brokers on a shared book.
    RunMarket {
        /// Re-execute a saved replay file and write its summary instead.
        #[arg(long)]
        replay: Option<PathBuf>,
    },
    /// Exogenous flow statistics of the prior.
    Stats,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum SolveTarget {
    Mm,
    Hft,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum SimTarget {
    Mm,
    Hft,
    Volume,
    Vwap,
}

#[derive(Debug, Error)]
pub enum CliError {
    #[error(transparent)]
    Config(#[from] ConfigError),
    #[error("policy file {0} not found; run `booklab solve {1}` first")]
    MissingPolicy(PathBuf, &'static str),
    #[error("policy does not match the configuration: {0}")]
    Mismatch(String),
    #[error(transparent)]
    Other(#[from] anyhow::Error),
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Config(_) => 2,
            CliError::MissingPolicy(..) => 3,
            CliError::Mismatch(_) => 4,
            CliError::Other(_) => 1,
        }
    }
}

type Result<T> = std::result::Result<T, CliError>;

struct Ctx {
    cfg: Config,
    seed: u64,
    out: PathBuf,
    paths: usize,
    exec: Exec,
}

impl Ctx {
    fn header(&self) -> String {
        self.cfg.header(self.seed)
    }

    fn create(&self, name: &str) -> Result<BufWriter<File>> {
        let p = self.out.join(name);
        let f = File::create(&p).with_context(|| format!("creating {}", p.display()))?;
        Ok(BufWriter::new(f))
    }

    fn kernel(&self) -> Result<KernelModel> {
        let prior = self
            .cfg
            .prior()
            .map_err(|e| ConfigError::Value(e.to_string()))?;
        Ok(build_default_kernel(&prior).context("building the event kernel")?)
    }

    fn write_kv(&self, name: &str, kv: &BTreeMap<String, String>) -> Result<()> {
        let mut w = self.create(name)?;
        writeln!(w, "{}", self.header()).context(name.to_string())?;
        for (k, v) in kv {
            writeln!(w, "{k}={v}").context(name.to_string())?;
        }
        w.flush().context(name.to_string())?;
        Ok(())
    }
}

pub fn run(cli: Cli) -> Result<()> {
    let cfg = Config::load(cli.config.as_deref(), &cli.overrides)?;
    std::fs::create_dir_all(&cli.out).with_context(|| format!("creating {}", cli.out.display()))?;
    let ctx = Ctx {
        paths: cli.paths.unwrap_or(cfg.stats.paths),
        exec: cfg.run.exec,
        cfg,
        seed: cli.seed,
        out: cli.out,
    };
    match cli.command {
        Command::Solve {
            target: SolveTarget::Mm,
        } => solve_mm_cmd(&ctx),
        Command::Solve {
            target: SolveTarget::Hft,
        } => solve_hft_cmd(&ctx),
        Command::Simulate {
            target: SimTarget::Mm,
        } => simulate_mm_cmd(&ctx),
        Command::Simulate {
            target: SimTarget::Hft,
        } => simulate_hft_cmd(&ctx),
        Command::Simulate {
            target: SimTarget::Volume,
        } => simulate_broker_cmd(&ctx, BrokerKind::Volume),
        Command::Simulate {
            target: SimTarget::Vwap,
        } => simulate_broker_cmd(&ctx, BrokerKind::Vwap),
        Command::RunMarket { replay: None } => run_market_cmd(&ctx),
        Command::RunMarket { replay: Some(p) } => replay_cmd(&ctx, &p),
        Command::Stats => stats_cmd(&ctx),
    }
}

fn fmt(v: f64) -> String {
    format!("{v:.10}")
}

fn solve_mm_cmd(ctx: &Ctx) -> Result<()> {
    let km = ctx.kernel()?;
    let p = ctx.cfg.mm_params();
    let t0 = Instant::now();
    let mut s = solve_mm(&p, &km, false, ctx.exec).context("solving the market maker")?;
    eprintln!(
        "mm: {} states, {} steps, solved in {:.2?}",
        s.space.len(),
        p.steps(),
        t0.elapsed()
    );
    let note = ctx.header();
    s.solution.policy.header.note = note.clone();
    s.solution.values.header.note = note;
    s.solution
        .policy
        .write_to(&ctx.out.join("mm.policy"))
        .context("writing mm.policy")?;
    s.solution
        .values
        .write_to(&ctx.out.join("mm.values"))
        .context("writing mm.values")?;
    let book = ctx.cfg.mm_initial().book();
    let mut kv = grid_kv(&s.space, &s.model, &s.solution.policy, p.dt);
    kv.insert("i_star".into(), p.i_star.to_string());
    kv.insert("q_max".into(), p.q_max.to_string());
    kv.insert(
        "j_cap".into(),
        p.j_cap.map_or("none".into(), |j| j.to_string()),
    );
    if let Some(v) = s.value0(&book, &AgentState::flat()) {
        kv.insert("value0".into(), fmt(v));
    }
    ctx.write_kv("mm_grid.txt", &kv)
}

fn solve_hft_cmd(ctx: &Ctx) -> Result<()> {
    let km = ctx.kernel()?;
    let p = ctx.cfg.hft_params();
    let ou = ctx.cfg.ou();
    let t0 = Instant::now();
    let mut s = solve_hft(&p, &ou, &km, false, ctx.exec).context("solving the pair trader")?;
    eprintln!(
        "hft: {} states x {} layers, {} steps, solved in {:.2?}",
        s.space.len(),
        ou.grid.len(),
        p.steps(),
        t0.elapsed()
    );
    let note = ctx.header();
    s.solution.policy.header.note = note.clone();
    s.solution.values.header.note = note;
    s.solution
        .policy
        .write_to(&ctx.out.join("hft.policy"))
        .context("writing hft.policy")?;
    s.solution
        .values
        .write_to(&ctx.out.join("hft.values"))
        .context("writing hft.values")?;
    let mut kv = grid_kv(&s.space, &s.model, &s.solution.policy, p.dt);
    kv.insert("i_star".into(), p.i_star.to_string());
    kv.insert("q_max".into(), p.q_max.to_string());
    kv.insert(
        "j_cap".into(),
        p.j_cap.map_or("none".into(), |j| j.to_string()),
    );
    kv.insert(
        "tree.mean_clamped".into(),
        s.tree
            .mean_clamped
            .iter()
            .filter(|c| **c)
            .count()
            .to_string(),
    );
    kv.insert(
        "tree.var_clamped".into(),
        s.tree
            .var_clamped
            .iter()
            .filter(|c| **c)
            .count()
            .to_string(),
    );
    let layer = ou.left(ctx.cfg.hft.s0);
    if let Some(v) = s.value0(
        &ctx.cfg.hft_initial().book(),
        &AgentState::flat(),
        0.0,
        layer,
    ) {
        kv.insert("value0".into(), fmt(v));
    }
    ctx.write_kv("hft_grid.txt", &kv)
}

fn grid_kv(
    space: &StateSpace,
    m: &booklab::dp::Model,
    pol: &PolicyTable,
    dt: f64,
) -> BTreeMap<String, String> {
    let mut kv = BTreeMap::new();
    kv.insert("states".into(), space.len().to_string());
    kv.insert("layers".into(), m.n_layers.to_string());
    kv.insert("flow_edges".into(), m.flow.edges().to_string());
    kv.insert("action_edges".into(), m.actions.edges().to_string());
    kv.insert("steps".into(), pol.header.steps.to_string());
    kv.insert("dt".into(), dt.to_string());
    kv.insert("gamma_max".into(), fmt(m.gamma_max));
    kv.insert("space_hash".into(), format!("{:016x}", m.space_hash));
    kv.insert("policy_slices".into(), pol.distinct_slices().to_string());
    kv
}

/// Loads `<out>/<name>.policy` and checks it against the space, step count,
/// step length and layer count the configuration implies.
fn load_policy(
    ctx: &Ctx,
    name: &'static str,
    spec: SpaceSpec,
    steps: usize,
    dt: f64,
    layers: usize,
) -> Result<(StateSpace, PolicyTable)> {
    let path = ctx.out.join(format!("{name}.policy"));
    if !path.exists() {
        return Err(CliError::MissingPolicy(path, name));
    }
    let table =
        PolicyTable::read_from(&path).with_context(|| format!("reading {}", path.display()))?;
    let space = StateSpace::new(spec);
    table
        .check_space(spec.hash())
        .map_err(|e| CliError::Mismatch(format!("{name}: {e}")))?;
    let h = &table.header;
    let mismatch = |what: &str, have: String, want: String| {
        Err(CliError::Mismatch(format!(
            "{name}: {what} is {have} in the policy file, {want} in the config"
        )))
    };
    if h.n_states != space.len() {
        return mismatch(
            "state count",
            h.n_states.to_string(),
            space.len().to_string(),
        );
    }
    if h.steps != steps {
        return mismatch("step count", h.steps.to_string(), steps.to_string());
    }
    if h.dt != dt {
        return mismatch("dt", h.dt.to_string(), dt.to_string());
    }
    if h.n_layers != layers {
        return mismatch("layer count", h.n_layers.to_string(), layers.to_string());
    }
    Ok((space, table))
}

fn moments(kv: &mut BTreeMap<String, String>, key: &str, x: &[f64]) {
    kv.insert(format!("{key}.mean"), fmt(mean(x)));
    kv.insert(format!("{key}.sd"), fmt(sd(x)));
    kv.insert(format!("{key}.stderr"), fmt(stderr(x)));
}

fn write_hist(ctx: &Ctx, name: &str, value: &str, x: &[f64]) -> Result<()> {
    let mut w = ctx.create(name)?;
    write_histogram_csv(
        &mut w,
        &ctx.header(),
        value,
        &histogram(x, ctx.cfg.stats.bins),
    )
    .context(name.to_string())?;
    w.flush().context(name.to_string())?;
    Ok(())
}

/// Per-path results against the never-acting baseline on the same seeds.
fn write_dp_results(
    ctx: &Ctx,
    name: &str,
    runs: &[PathSummary],
    base: &[PathSummary],
) -> Result<()> {
    let file = format!("{name}_runs.csv");
    let mut w = ctx.create(&file)?;
    writeln!(w, "{}", ctx.header()).context(file.clone())?;
    writeln!(
        w,
        "path,gain,utility,actions,final_inventory,passive_gain,passive_utility"
    )
    .context(file.clone())?;
    for (k, (r, b)) in runs.iter().zip(base).enumerate() {
        writeln!(
            w,
            "{k},{:.6},{:.10e},{},{},{:.6},{:.10e}",
            r.gain, r.utility, r.actions, r.final_inventory, b.gain, b.utility
        )
        .context(file.clone())?;
    }
    w.flush().context(file)?;
    let col = |f: fn(&PathSummary) -> f64, v: &[PathSummary]| v.iter().map(f).collect::<Vec<_>>();
    let (g, u) = (col(|r| r.gain, runs), col(|r| r.utility, runs));
    let (bg, bu) = (col(|r| r.gain, base), col(|r| r.utility, base));
    write_hist(ctx, &format!("{name}_gain_hist.csv"), "gain", &g)?;
    write_hist(ctx, &format!("{name}_passive_gain_hist.csv"), "gain", &bg)?;
    let mut kv = BTreeMap::new();
    kv.insert("paths".into(), runs.len().to_string());
    moments(&mut kv, "gain", &g);
    moments(&mut kv, "utility", &u);
    moments(&mut kv, "passive.gain", &bg);
    moments(&mut kv, "passive.utility", &bu);
    let diff: Vec<f64> = u.iter().zip(&bu).map(|(a, b)| a - b).collect();
    moments(&mut kv, "utility_minus_passive", &diff);
    kv.insert(
        "actions.mean".into(),
        fmt(mean(&col(|r| r.actions as f64, runs))),
    );
    ctx.write_kv(&format!("{name}_summary.txt"), &kv)
}

fn simulate_mm_cmd(ctx: &Ctx) -> Result<()> {
    let p = ctx.cfg.mm_params();
    let (space, table) = load_policy(ctx, "mm", p.space_spec(), p.steps(), p.dt, 1)?;
    let km = ctx.kernel()?;
    let pol = TablePolicy {
        space: &space,
        policy: &table,
        caps: p.caps(),
    };
    let init = ctx.cfg.mm_initial();
    let keep = ctx.paths.min(ctx.cfg.stats.path_files);
    let t0 = Instant::now();
    let (runs, kept) = simulate_mm(&pol, &km, &p, &init, ctx.paths, keep, ctx.seed, ctx.exec)
        .context("simulating")?;
    let (base, _) = simulate_mm(&Passive, &km, &p, &init, ctx.paths, 0, ctx.seed, ctx.exec)
        .context("simulating")?;
    eprintln!("mm: {} paths in {:.2?}", ctx.paths, t0.elapsed());
    for (k, path) in kept.iter().enumerate() {
        let name = format!("mm_path_{k}.csv");
        let mut w = ctx.create(&name)?;
        booklab::mm::write_path_csv(&mut w, &ctx.header(), p.tick, path).context(name.clone())?;
        w.flush().context(name)?;
    }
    write_dp_results(ctx, "mm", &runs, &base)
}

fn simulate_hft_cmd(ctx: &Ctx) -> Result<()> {
    let p = ctx.cfg.hft_params();
    let ou = ctx.cfg.ou();
    let (space, table) = load_policy(ctx, "hft", p.space_spec(), p.steps(), p.dt, ou.grid.len())?;
    let km = ctx.kernel()?;
    let tree = ou_tree(&ou, p.dt).context("building the spread tree")?;
    let pol = TablePolicy {
        space: &space,
        policy: &table,
        caps: p.caps(),
    };
    let init = ctx.cfg.hft_initial();
    let (mode, s0) = (ctx.cfg.hft.spread_sim, ctx.cfg.hft.s0);
    let keep = ctx.paths.min(ctx.cfg.stats.path_files);
    let t0 = Instant::now();
    let (runs, kept) = simulate_hft(
        &pol, &km, &ou, &tree, &p, mode, &init, s0, ctx.paths, keep, ctx.seed, ctx.exec,
    )
    .context("simulating")?;
    let (base, _) = simulate_hft(
        &Passive, &km, &ou, &tree, &p, mode, &init, s0, ctx.paths, 0, ctx.seed, ctx.exec,
    )
    .context("simulating")?;
    eprintln!("hft: {} paths in {:.2?}", ctx.paths, t0.elapsed());
    for (k, hp) in kept.iter().enumerate() {
        let name = format!("hft_path_{k}.csv");
        let mut w = ctx.create(&name)?;
        booklab::hft::write_path_csv(&mut w, &ctx.header(), p.tick, hp).context(name.clone())?;
        w.flush().context(name)?;
    }
    write_dp_results(ctx, "hft", &runs, &base)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum BrokerKind {
    Volume,
    Vwap,
}

struct BrokerOutcome {
    traded: i64,
    finished_at: Option<f64>,
    avg_price: Option<f64>,
    market_vwap: Option<f64>,
    rel_error_pct: Option<f64>,
    band_excess: f64,
    kept: Option<BrokerRun>,
}

fn simulate_broker_cmd(ctx: &Ctx, kind: BrokerKind) -> Result<()> {
    let km = ctx.kernel()?;
    let thinning = ctx.cfg.thinning()?;
    let tick = booklab::DEFAULT_TICK;
    let (name, side, dt, horizon, book0, slack) = match kind {
        BrokerKind::Volume => {
            let v = &ctx.cfg.volume;
            (
                "volume",
                v.side,
                v.dt,
                v.horizon,
                BookState::new(v.p_b, v.p_b + v.spread, v.q_b, v.q_a),
                v.max_order,
            )
        }
        BrokerKind::Vwap => {
            let v = &ctx.cfg.vwap;
            (
                "vwap",
                v.side,
                v.dt,
                v.run_horizon,
                BookState::new(v.p_b, v.p_b + v.spread, v.q_b, v.q_a),
                v.max_order,
            )
        }
    };
    let vwap_model = match kind {
        BrokerKind::Vwap => Some(
            vwap_coeffs(&ctx.cfg.vwap_inputs()).map_err(|e| ConfigError::Value(e.to_string()))?,
        ),
        BrokerKind::Volume => None,
    };
    let keep = ctx.paths.min(ctx.cfg.stats.path_files);
    let t0 = Instant::now();
    let outcomes = map_range(
        ctx.exec,
        ctx.paths,
        |k| -> std::result::Result<BrokerOutcome, booklab::dp::DpError> {
            let mut ctrl: Box<dyn Controller> = match &vwap_model {
                None => Box::new(VolumeController::new(ctx.cfg.volume_params(), side)),
                Some(m) => Box::new(VwapController::new(m.clone(), ctx.cfg.vwap_track(), side)),
            };
            let mut rng = stream(ctx.seed, &[purpose::PATH, k as u64]);
            let run = simulate_broker(
                ctrl.as_mut(),
                &km,
                dt,
                horizon,
                tick,
                book0,
                thinning,
                &mut rng,
            )?;
            Ok(BrokerOutcome {
                traded: run.traded,
                finished_at: run.finished_at,
                avg_price: run.avg_price,
                market_vwap: run.market_vwap,
                rel_error_pct: run.rel_error_pct(),
                band_excess: run.max_band_excess(),
                kept: (k < keep).then_some(run),
            })
        },
    );
    let outcomes = outcomes
        .into_iter()
        .collect::<std::result::Result<Vec<_>, _>>()
        .context("simulating")?;
    eprintln!("{name}: {} paths in {:.2?}", ctx.paths, t0.elapsed());
    for (k, o) in outcomes.iter().enumerate() {
        if let Some(run) = &o.kept {
            let file = format!("{name}_path_{k}.csv");
            let mut w = ctx.create(&file)?;
            write_broker_csv(&mut w, &ctx.header(), run).context(file.clone())?;
            w.flush().context(file)?;
        }
    }
    let opt = |v: Option<f64>| v.map_or(String::new(), |v| format!("{v:.6}"));
    let file = format!("{name}_runs.csv");
    let mut w = ctx.create(&file)?;
    writeln!(w, "{}", ctx.header()).context(file.clone())?;
    writeln!(
        w,
        "path,traded,finished_at,avg_price,market_vwap,rel_error_pct,max_band_excess"
    )
    .context(file.clone())?;
    for (k, o) in outcomes.iter().enumerate() {
        writeln!(
            w,
            "{k},{},{},{},{},{},{:.6}",
            o.traded,
            opt(o.finished_at),
            opt(o.avg_price),
            opt(o.market_vwap),
            opt(o.rel_error_pct),
            o.band_excess
        )
        .context(file.clone())?;
    }
    w.flush().context(file)?;
    let err: Vec<f64> = outcomes.iter().filter_map(|o| o.rel_error_pct).collect();
    write_hist(
        ctx,
        &format!("{name}_rel_error_hist.csv"),
        "rel_error_pct",
        &err,
    )?;
    let mut kv = BTreeMap::new();
    kv.insert("paths".into(), outcomes.len().to_string());
    kv.insert("side".into(), format!("{side:?}").to_lowercase());
    kv.insert(
        "finished".into(),
        outcomes
            .iter()
            .filter(|o| o.finished_at.is_some())
            .count()
            .to_string(),
    );
    moments(&mut kv, "rel_error_pct", &err);
    let worst = outcomes
        .iter()
        .map(|o| o.band_excess)
        .fold(f64::NEG_INFINITY, f64::max);
    kv.insert("band_excess.max".into(), fmt(worst));
    kv.insert("band_excess.slack".into(), slack.to_string());
    kv.insert(
        "band_excess.within_slack".into(),
        outcomes
            .iter()
            .filter(|o| o.band_excess <= slack as f64 + 1e-9)
            .count()
            .to_string(),
    );
    ctx.write_kv(&format!("{name}_summary.txt"), &kv)
}

fn market_spec(cfg: &Config) -> Result<MarketSpec> {
    let prior = cfg.prior().map_err(|e| ConfigError::Value(e.to_string()))?;
    let s = &cfg.sim;
    Ok(MarketSpec {
        horizon: s.horizon,
        dt: s.dt,
        tick: cfg.mm.tick,
        q_max: prior.q_max,
        initial: BookState::new(s.p_b, s.p_b + s.spread, s.q_b, s.q_a),
        regen_near: prior.regen_near,
        regen_far: prior.regen_far,
        ou: Some(cfg.ou()),
        spread_sim: s.spread_sim,
        s0: s.s0,
        kappa_fut: cfg.hft.kappa_fut,
    })
}

/// The replay file: the header line plus everything needed to re-execute.
#[derive(Serialize, Deserialize)]
struct ReplayFile {
    header: String,
    log: ReplayLog,
}

fn run_market_cmd(ctx: &Ctx) -> Result<()> {
    let cfg = &ctx.cfg;
    let mp = cfg.mm_params();
    let hp = cfg.hft_params();
    let ou = cfg.ou();
    let (mm_space, mm_table) = load_policy(ctx, "mm", mp.space_spec(), mp.steps(), mp.dt, 1)?;
    let (hft_space, hft_table) = load_policy(
        ctx,
        "hft",
        hp.space_spec(),
        hp.steps(),
        hp.dt,
        ou.grid.len(),
    )?;
    let spec = market_spec(cfg)?;
    if mp.q_max != spec.q_max || hp.q_max != spec.q_max {
        return Err(CliError::Mismatch(format!(
            "policies solved with q_max {} / {}, market runs with {}",
            mp.q_max, hp.q_max, spec.q_max
        )));
    }
    let mm_pol = TablePolicy {
        space: &mm_space,
        policy: &mm_table,
        caps: mp.caps(),
    };
    let hft_pol = TablePolicy {
        space: &hft_space,
        policy: &hft_table,
        caps: hp.caps(),
    };
    let vwap = vwap_coeffs(&booklab::vwap::VwapInputs {
        i0: cfg.sim.vwap_target as f64,
        horizon: cfg.sim.vwap_horizon,
        ..cfg.vwap_inputs()
    })
    .map_err(|e| ConfigError::Value(e.to_string()))?;
    let vol = VolumeParams {
        target: cfg.sim.volume_target,
        ..cfg.volume_params()
    };
    let ib = Limits {
        q_max: spec.q_max,
        i_star: None,
        full_cancel_only: false,
    };
    let meta = |name: &str, kind, target, hedged| AgentMeta {
        name: name.into(),
        kind,
        target,
        hedged,
    };
    let mut agents = vec![
        MarketAgent {
            meta: meta("mm", AgentKind::Mm, None, false),
            brain: Brain::Policy {
                policy: &mm_pol as &dyn PolicySource,
                steps: mp.steps(),
                dt: mp.dt,
                limits: Limits {
                    q_max: mp.q_max,
                    i_star: Some(mp.i_star),
                    full_cancel_only: mp.full_cancel_only,
                },
            },
        },
        MarketAgent {
            meta: meta("hft", AgentKind::Hft, None, true),
            brain: Brain::Policy {
                policy: &hft_pol,
                steps: hp.steps(),
                dt: hp.dt,
                limits: Limits {
                    q_max: hp.q_max,
                    i_star: Some(hp.i_star),
                    full_cancel_only: hp.full_cancel_only,
                },
            },
        },
    ];
    for side in [Side::Buy, Side::Sell] {
        agents.push(MarketAgent {
            meta: meta("volume", AgentKind::Volume(side), Some(vol.target), false),
            brain: Brain::Broker {
                ctrl: Box::new(VolumeController::new(vol, side)),
                limits: ib,
            },
        });
    }
    for side in [Side::Buy, Side::Sell] {
        agents.push(MarketAgent {
            meta: meta(
                "vwap",
                AgentKind::Vwap(side),
                Some(cfg.sim.vwap_target),
                false,
            ),
            brain: Brain::Broker {
                ctrl: Box::new(VwapController::new(vwap.clone(), cfg.vwap_track(), side)),
                limits: ib,
            },
        });
    }
    let t0 = Instant::now();
    let log = run_market(&spec, &mut agents, ctx.seed).context("running the market")?;
    eprintln!("market: {} steps in {:.2?}", log.steps.len(), t0.elapsed());
    write_market(ctx, &log)
}

fn write_market(ctx: &Ctx, log: &EventLog) -> Result<()> {
    let header = ctx.header();
    let mut w = ctx.create("market_log.csv")?;
    write_log_csv(&mut w, &header, log).context("market_log.csv")?;
    w.flush().context("market_log.csv")?;
    for (k, a) in log.meta.agents.iter().enumerate() {
        let name = format!("market_agent_{k}_{}.csv", a.kind.label());
        let mut w = ctx.create(&name)?;
        write_agent_csv(&mut w, &header, log, k as u8).context(name.clone())?;
        w.flush().context(name)?;
    }
    let mut w = ctx.create("market_replay.json")?;
    serde_json::to_writer(
        &mut w,
        &ReplayFile {
            header: header.clone(),
            log: log.to_replay(),
        },
    )
    .context("market_replay.json")?;
    writeln!(w).context("market_replay.json")?;
    w.flush().context("market_replay.json")?;
    let mut w = ctx.create("market_summary.txt")?;
    write_summary(&mut w, &header, &summarize(log)).context("market_summary.txt")?;
    w.flush().context("market_summary.txt")?;
    Ok(())
}

/// Re-executes a replay file and writes `market_summary_replay.txt` under
/// the header the original run used.
fn replay_cmd(ctx: &Ctx, path: &Path) -> Result<()> {
    let f = File::open(path).with_context(|| format!("opening {}", path.display()))?;
    let rf: ReplayFile = serde_json::from_reader(std::io::BufReader::new(f))
        .with_context(|| format!("parsing {}", path.display()))?;
    let log = replay(&rf.log).map_err(|e| CliError::Mismatch(format!("replay: {e}")))?;
    let mut w = ctx.create("market_summary_replay.txt")?;
    write_summary(&mut w, &rf.header, &summarize(&log)).context("market_summary_replay.txt")?;
    w.flush().context("market_summary_replay.txt")?;
    Ok(())
}

fn stats_cmd(ctx: &Ctx) -> Result<()> {
    let km = ctx.kernel()?;
    let st = &ctx.cfg.stats;
    // Imb = (3 - 1) / (3 + 1) = 0.5.
    let book = BookState::new(1000, 1001, 3, 1);
    let dt = ctx.cfg.mm.dt;
    let fs = flow_stats(&km, &book, st.flow_draws, st.flow_steps, dt, ctx.seed)
        .context("sampling the flow")?;
    let mut kv = BTreeMap::new();
    kv.insert(
        "book".into(),
        format!("{}/{} {}x{}", book.p_b, book.p_a, book.q_b, book.q_a),
    );
    kv.insert("imbalance".into(), fmt(booklab::book::imbalance(&book)));
    kv.insert("draws".into(), fs.draws.to_string());
    kv.insert("market_orders".into(), fs.market_orders.to_string());
    kv.insert("ask_share".into(), fmt(fs.ask_share));
    kv.insert("steps".into(), fs.steps.to_string());
    kv.insert("dt".into(), dt.to_string());
    kv.insert("events".into(), fs.events.to_string());
    kv.insert("events_per_second".into(), fmt(fs.events_per_second));
    kv.insert("gamma".into(), fmt(km.gamma(&book).context("intensity")?));
    ctx.write_kv("flow_stats.txt", &kv)
}
