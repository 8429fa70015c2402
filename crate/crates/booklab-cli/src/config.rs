//! Flat `section.key = value` configuration. The file is TOML restricted to
//! dotted keys; every key of the built-in default must be present and no
//! other key is accepted.

use booklab::broker::{Side, VolumeParams, VwapTrackParams};
use booklab::dp::Exec;
use booklab::hft::{HftParams, OuParams, SpreadSim};
use booklab::mm::{InitialBook, Mark, MmParams};
use booklab::prior::{PriorConfig, SizeTable, Thinning};
use booklab::vwap::VwapInputs;
use serde::Deserialize;
use sha2::{Digest, Sha256};
use std::collections::BTreeMap;
use std::path::Path;
use thiserror::Error;

pub const DEFAULT_CONFIG: &str = include_str!("../../../configs/default.toml");

#[derive(Debug, Error)]
pub enum ConfigError {
    #[error("cannot read config {0}: {1}")]
    Read(String, std::io::Error),
    #[error("config is not valid key = value text: {0}")]
    Syntax(String),
    #[error("missing config key `{0}`")]
    Missing(String),
    #[error("unknown config key `{0}`")]
    Unknown(String),
    #[error("override `{0}` is not of the form key=value")]
    BadOverride(String),
    #[error("bad value for config key: {0}")]
    Value(String),
}

type Flat = BTreeMap<String, toml::Value>;

fn flatten(prefix: &str, t: &toml::Table, out: &mut Flat) {
    for (k, v) in t {
        let key = if prefix.is_empty() {
            k.clone()
        } else {
            format!("{prefix}.{k}")
        };
        match v {
            toml::Value::Table(inner) => flatten(&key, inner, out),
            _ => {
                out.insert(key, v.clone());
            }
        }
    }
}

fn parse_flat(text: &str) -> Result<Flat, ConfigError> {
    let t: toml::Table = text
        .parse()
        .map_err(|e: toml::de::Error| ConfigError::Syntax(e.to_string()))?;
    let mut out = Flat::new();
    flatten("", &t, &mut out);
    Ok(out)
}

fn unflatten(flat: &Flat) -> toml::Table {
    let mut root = toml::Table::new();
    for (k, v) in flat {
        let mut cur = &mut root;
        let parts: Vec<&str> = k.split('.').collect();
        for p in &parts[..parts.len() - 1] {
            cur = cur
                .entry(p.to_string())
                .or_insert_with(|| toml::Value::Table(toml::Table::new()))
                .as_table_mut()
                .expect("sections are tables");
        }
        cur.insert(parts[parts.len() - 1].to_string(), v.clone());
    }
    root
}

fn parse_value(raw: &str) -> toml::Value {
    match format!("v = {raw}").parse::<toml::Table>() {
        Ok(mut t) => t.remove("v").expect("key present"),
        Err(_) => toml::Value::String(raw.to_string()),
    }
}

fn apply_override(flat: &mut Flat, ov: &str) -> Result<(), ConfigError> {
    let (k, v) = ov
        .split_once('=')
        .ok_or_else(|| ConfigError::BadOverride(ov.into()))?;
    let (k, v) = (k.trim(), parse_value(v.trim()));
    if k.is_empty() {
        return Err(ConfigError::BadOverride(ov.into()));
    }
    if k.contains('.') {
        match flat.get_mut(k) {
            Some(slot) => *slot = v,
            None => return Err(ConfigError::Unknown(k.into())),
        }
    } else {
        let hits: Vec<String> = flat
            .keys()
            .filter(|f| f.rsplit('.').next() == Some(k))
            .cloned()
            .collect();
        if hits.is_empty() {
            return Err(ConfigError::Unknown(k.into()));
        }
        for h in hits {
            flat.insert(h, v.clone());
        }
    }
    Ok(())
}

/// `"none"` or a count.
#[derive(Debug, Clone, PartialEq, Deserialize)]
#[serde(untagged)]
pub enum Cap {
    Count(u32),
    Word(String),
}

fn cap(c: &Cap, key: &str) -> Result<Option<u32>, ConfigError> {
    match c {
        Cap::Count(n) => Ok(Some(*n)),
        Cap::Word(w) if w == "none" => Ok(None),
        Cap::Word(w) => Err(ConfigError::Value(format!(
            "{key} = {w:?}, expected a count or \"none\""
        ))),
    }
}

#[derive(Debug, Clone, Deserialize)]
pub struct PriorSection {
    pub limit_rate: f64,
    pub market_rate: f64,
    pub imb_slope: f64,
    pub limit_sizes: SizeTable,
    pub market_size_base: f64,
    pub market_size_slope: f64,
    pub market_centre_prob: f64,
    pub price_move_prob: f64,
    pub regen_near: SizeTable,
    pub regen_far: SizeTable,
    pub inspread_prob: f64,
    pub cancel_rate: f64,
    pub cancel_sizes: SizeTable,
    pub q_max: u32,
    pub thinning: String,
}

#[derive(Debug, Clone, Deserialize)]
pub struct MmSection {
    pub eta: f64,
    pub kappa: f64,
    pub rho_cost: f64,
    pub i_star: i32,
    pub j_cap: Cap,
    pub horizon: f64,
    pub dt: f64,
    pub max_order: u32,
    pub q_max: u32,
    pub full_cancel_only: bool,
    pub tick: f64,
    pub mirror: bool,
    pub mark: Mark,
    pub p_b: i64,
    pub spread: i64,
    pub q_b: u32,
    pub q_a: u32,
}

#[derive(Debug, Clone, Deserialize)]
pub struct HftSection {
    pub eta: f64,
    pub kappa: f64,
    pub kappa_fut: f64,
    pub rho_cost: f64,
    pub i_star: i32,
    pub j_cap: Cap,
    pub horizon: f64,
    pub dt: f64,
    pub max_order: u32,
    pub q_max: u32,
    pub full_cancel_only: bool,
    pub tick: f64,
    pub s_bar: f64,
    pub rho: f64,
    pub sigma: f64,
    pub nodes: usize,
    pub mesh: f64,
    pub s0: f64,
    pub spread_sim: SpreadSim,
    pub p_b: i64,
    pub spread: i64,
    pub q_b: u32,
    pub q_a: u32,
}

#[derive(Debug, Clone, Deserialize)]
pub struct VolumeSection {
    pub side: Side,
    pub f: f64,
    pub delta_i: f64,
    pub target: u32,
    pub interval: f64,
    pub p_hat: f64,
    pub max_order: u32,
    pub q_max: u32,
    pub dt: f64,
    pub horizon: f64,
    pub p_b: i64,
    pub spread: i64,
    pub q_b: u32,
    pub q_a: u32,
}

#[derive(Debug, Clone, Deserialize)]
pub struct VwapSection {
    pub side: Side,
    pub eta: f64,
    pub sigma: f64,
    pub beta: f64,
    pub kappa: f64,
    pub kappa_tilde: f64,
    pub horizon: f64,
    pub i0: f64,
    pub volume_curve: Vec<f64>,
    pub h_step: f64,
    pub delta_bar: f64,
    pub interval: f64,
    pub p_hat: f64,
    pub max_order: u32,
    pub q_max: u32,
    pub dt: f64,
    pub run_horizon: f64,
    pub p_b: i64,
    pub spread: i64,
    pub q_b: u32,
    pub q_a: u32,
}

#[derive(Debug, Clone, Deserialize)]
pub struct SimSection {
    pub horizon: f64,
    pub dt: f64,
    pub p_b: i64,
    pub spread: i64,
    pub q_b: u32,
    pub q_a: u32,
    pub s0: f64,
    pub spread_sim: SpreadSim,
    pub vwap_target: u32,
    pub vwap_horizon: f64,
    pub volume_target: u32,
}

#[derive(Debug, Clone, Deserialize)]
pub struct StatsSection {
    pub paths: usize,
    pub path_files: usize,
    pub bins: usize,
    pub flow_draws: usize,
    pub flow_steps: usize,
}

#[derive(Debug, Clone, Deserialize)]
pub struct RunSection {
    pub exec: Exec,
}

#[derive(Debug, Clone, Deserialize)]
pub struct Config {
    pub prior: PriorSection,
    pub mm: MmSection,
    pub hft: HftSection,
    pub volume: VolumeSection,
    pub vwap: VwapSection,
    pub sim: SimSection,
    pub stats: StatsSection,
    pub run: RunSection,
    /// First 16 hex digits of the SHA-256 of the resolved key = value list.
    #[serde(skip)]
    pub hash: String,
}

impl Config {
    pub fn default_config() -> Self {
        Self::from_text(DEFAULT_CONFIG, &[]).expect("built-in config is valid")
    }

    pub fn load(path: Option<&Path>, overrides: &[String]) -> Result<Self, ConfigError> {
        match path {
            Some(p) => {
                let text = std::fs::read_to_string(p)
                    .map_err(|e| ConfigError::Read(p.display().to_string(), e))?;
                Self::from_text(&text, overrides)
            }
            None => Self::from_text(DEFAULT_CONFIG, overrides),
        }
    }

    pub fn from_text(text: &str, overrides: &[String]) -> Result<Self, ConfigError> {
        let known = parse_flat(DEFAULT_CONFIG)?;
        let mut flat = parse_flat(text)?;
        if let Some(k) = known.keys().find(|k| !flat.contains_key(*k)) {
            return Err(ConfigError::Missing(k.clone()));
        }
        if let Some(k) = flat.keys().find(|k| !known.contains_key(*k)) {
            return Err(ConfigError::Unknown(k.clone()));
        }
        for ov in overrides {
            apply_override(&mut flat, ov)?;
        }
        let mut cfg: Config = toml::Value::Table(unflatten(&flat))
            .try_into()
            .map_err(|e: toml::de::Error| ConfigError::Value(e.to_string()))?;
        let mut h = Sha256::new();
        for (k, v) in &flat {
            h.update(format!("{k}={v}\n").as_bytes());
        }
        cfg.hash = h
            .finalize()
            .iter()
            .take(8)
            .map(|b| format!("{b:02x}"))
            .collect();
        cfg.check()?;
        Ok(cfg)
    }

    fn check(&self) -> Result<(), ConfigError> {
        self.prior()
            .map_err(|e| ConfigError::Value(e.to_string()))?;
        self.thinning()?;
        cap(&self.mm.j_cap, "mm.j_cap")?;
        cap(&self.hft.j_cap, "hft.j_cap")?;
        let bad = |k: &str, m: &str| Err(ConfigError::Value(format!("{k}: {m}")));
        for (k, dt) in [
            ("mm.dt", self.mm.dt),
            ("hft.dt", self.hft.dt),
            ("sim.dt", self.sim.dt),
            ("volume.dt", self.volume.dt),
            ("vwap.dt", self.vwap.dt),
        ] {
            if !(dt > 0.0 && dt.is_finite()) {
                return bad(k, "must be positive");
            }
        }
        if !(self.volume.f > 0.0 && self.volume.f < 1.0) {
            return bad("volume.f", "must lie in (0, 1)");
        }
        if self.volume.delta_i <= 0.0 || self.volume.target == 0 {
            return bad("volume", "delta_i > 0 and target >= 1 required");
        }
        if self.hft.nodes < 3 {
            return bad("hft.nodes", "at least 3");
        }
        if self.stats.bins == 0 {
            return bad("stats.bins", "at least 1");
        }
        // every agent lives on the kernel's queue domain
        for (k, q) in [
            ("mm.q_max", self.mm.q_max),
            ("hft.q_max", self.hft.q_max),
            ("volume.q_max", self.volume.q_max),
            ("vwap.q_max", self.vwap.q_max),
        ] {
            if q != self.prior.q_max {
                return bad(
                    k,
                    &format!("{q} differs from prior.q_max = {}", self.prior.q_max),
                );
            }
        }
        Ok(())
    }

    pub fn prior(&self) -> Result<PriorConfig, booklab::prior::PriorError> {
        let p = &self.prior;
        let cfg = PriorConfig {
            limit_rate: p.limit_rate,
            market_rate: p.market_rate,
            imb_slope: p.imb_slope,
            limit_sizes: p.limit_sizes.clone(),
            market_size_base: p.market_size_base,
            market_size_slope: p.market_size_slope,
            market_centre_prob: p.market_centre_prob,
            price_move_prob: p.price_move_prob,
            regen_near: p.regen_near.clone(),
            regen_far: p.regen_far.clone(),
            inspread_prob: p.inspread_prob,
            cancel_rate: p.cancel_rate,
            cancel_sizes: p.cancel_sizes.clone(),
            q_max: p.q_max,
        };
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn thinning(&self) -> Result<Thinning, ConfigError> {
        match self.prior.thinning.as_str() {
            "linear" => Ok(Thinning::Linear),
            "exponential" => Ok(Thinning::Exponential),
            other => Err(ConfigError::Value(format!(
                "prior.thinning = {other:?}, expected \"linear\" or \"exponential\""
            ))),
        }
    }

    pub fn mm_params(&self) -> MmParams {
        let m = &self.mm;
        MmParams {
            eta: m.eta,
            kappa: m.kappa,
            rho_cost: m.rho_cost,
            i_star: m.i_star,
            j_cap: cap(&m.j_cap, "mm.j_cap").expect("checked on load"),
            horizon: m.horizon,
            dt: m.dt,
            max_order: m.max_order,
            q_max: m.q_max,
            full_cancel_only: m.full_cancel_only,
            tick: m.tick,
            mirror: m.mirror,
            mark: m.mark,
        }
    }

    pub fn mm_initial(&self) -> InitialBook {
        InitialBook {
            p_b: self.mm.p_b,
            spread: self.mm.spread,
            q_b: self.mm.q_b,
            q_a: self.mm.q_a,
        }
    }

    pub fn hft_params(&self) -> HftParams {
        let h = &self.hft;
        HftParams {
            eta: h.eta,
            kappa: h.kappa,
            kappa_fut: h.kappa_fut,
            rho_cost: h.rho_cost,
            i_star: h.i_star,
            j_cap: cap(&h.j_cap, "hft.j_cap").expect("checked on load"),
            horizon: h.horizon,
            dt: h.dt,
            max_order: h.max_order,
            q_max: h.q_max,
            full_cancel_only: h.full_cancel_only,
            tick: h.tick,
        }
    }

    pub fn ou(&self) -> OuParams {
        let h = &self.hft;
        OuParams {
            s_bar: h.s_bar,
            rho: h.rho,
            sigma: h.sigma,
            grid: OuParams::centred_grid(h.s_bar, h.nodes, h.mesh),
        }
    }

    pub fn hft_initial(&self) -> InitialBook {
        InitialBook {
            p_b: self.hft.p_b,
            spread: self.hft.spread,
            q_b: self.hft.q_b,
            q_a: self.hft.q_a,
        }
    }

    pub fn volume_params(&self) -> VolumeParams {
        let v = &self.volume;
        VolumeParams {
            f: v.f,
            delta_i: v.delta_i,
            target: v.target,
            interval: v.interval,
            p_hat: v.p_hat,
            max_order: v.max_order,
            q_max: v.q_max,
        }
    }

    pub fn vwap_inputs(&self) -> VwapInputs {
        let v = &self.vwap;
        VwapInputs {
            eta: v.eta,
            sigma: v.sigma,
            beta: v.beta,
            kappa: v.kappa,
            kappa_tilde: v.kappa_tilde,
            horizon: v.horizon,
            i0: v.i0,
            volume: v.volume_curve.clone(),
            h_step: v.h_step,
        }
    }

    pub fn vwap_track(&self) -> VwapTrackParams {
        let v = &self.vwap;
        VwapTrackParams {
            delta_bar: v.delta_bar,
            interval: v.interval,
            p_hat: v.p_hat,
            max_order: v.max_order,
            q_max: v.q_max,
        }
    }

    /// `# booklab <version> config=<hash> seed=<seed>`
    pub fn header(&self, seed: u64) -> String {
        format!(
            "# booklab {} config={} seed={}",
            env!("CARGO_PKG_VERSION"),
            self.hash,
            seed
        )
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn default_loads() {
        let c = Config::default_config();
        assert_eq!(c.mm_params(), MmParams::default());
        assert_eq!(c.hash.len(), 16);
        assert_eq!(c.prior().unwrap(), PriorConfig::default());
    }

    #[test]
    fn missing_key_is_named() {
        let text = DEFAULT_CONFIG.replace("mm.eta = 1.0\n", "");
        match Config::from_text(&text, &[]) {
            Err(ConfigError::Missing(k)) => assert_eq!(k, "mm.eta"),
            other => panic!("{other:?}"),
        }
    }

    #[test]
    fn unknown_key_rejected() {
        let text = format!("{DEFAULT_CONFIG}\nmm.typo = 3\n");
        assert!(
            matches!(Config::from_text(&text, &[]), Err(ConfigError::Unknown(k)) if k == "mm.typo")
        );
    }

    #[test]
    fn overrides() {
        let c = Config::from_text(DEFAULT_CONFIG, &["mm.dt=0.25".into()]).unwrap();
        assert_eq!(c.mm.dt, 0.25);
        assert_eq!(c.hft.dt, 0.5);
        let c2 = Config::from_text(DEFAULT_CONFIG, &["dt=0.25".into()]).unwrap();
        assert_eq!((c2.mm.dt, c2.hft.dt, c2.sim.dt), (0.25, 0.25, 0.25));
        assert_ne!(c.hash, Config::default_config().hash);
        let c3 = Config::from_text(
            DEFAULT_CONFIG,
            &["mm.j_cap=4".into(), "volume.side=sell".into()],
        )
        .unwrap();
        assert_eq!(c3.mm_params().j_cap, Some(4));
        assert_eq!(c3.volume.side, Side::Sell);
        assert!(Config::from_text(DEFAULT_CONFIG, &["nope=1".into()]).is_err());
    }
}
