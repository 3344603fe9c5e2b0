//! Experiment configuration: a versioned TOML file, `DRCLAB_` environment
//! overrides, then command-line flags.

use std::collections::BTreeSet;
use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use drc_core::adaptive_learner::RegularizationCase;
use drc_core::adversary::LossFamily;
use drc_core::regret_lab::{
    scalar_preset, EpisodeConfig, GradientMode, MemoryChoice, ScheduleSpec, SolverOptions, SystemConfig,
};
use serde::{Deserialize, Serialize};
use toml::Value;

pub const SCHEMA_VERSION: u32 = 1;
pub const ENV_PREFIX: &str = "DRCLAB_";

/// Which per-episode traces are written.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum TraceMode {
    None,
    #[default]
    FirstSeed,
    All,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SolverConfig {
    pub restarts: usize,
    pub max_iter: usize,
    pub rel_tol: f64,
}

impl Default for SolverConfig {
    fn default() -> Self {
        let d = SolverOptions::default();
        Self {
            restarts: d.restarts,
            max_iter: d.max_iter,
            rel_tol: d.rel_tol,
        }
    }
}

impl SolverConfig {
    pub fn options(&self, seed: u64) -> SolverOptions {
        SolverOptions {
            restarts: self.restarts,
            max_iter: self.max_iter,
            rel_tol: self.rel_tol,
            seed,
        }
    }
}

/// One experiment family. Missing fields take the scalar reference setting
/// of the case being run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EpisodeBlock {
    pub name: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub system: Option<SystemConfig>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub losses: Option<LossFamily>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub schedule: Option<ScheduleSpec>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub r_m: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub memory: Option<MemoryChoice>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub gradient: Option<GradientMode>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub ldc_samples: Option<usize>,
}

impl EpisodeBlock {
    pub fn named(name: &str) -> Self {
        Self {
            name: name.into(),
            system: None,
            losses: None,
            schedule: None,
            r_m: None,
            memory: None,
            gradient: None,
            ldc_samples: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub schema_version: u32,
    #[serde(default = "default_out_dir")]
    pub out_dir: PathBuf,
    /// Episode seeds are `seed, seed + 1, ..`.
    #[serde(default)]
    pub seed: u64,
    /// Worker threads; 0 uses every core.
    #[serde(default)]
    pub parallel: usize,
    #[serde(default = "default_horizons")]
    pub horizons: Vec<usize>,
    #[serde(default = "default_cases")]
    pub cases: Vec<u32>,
    /// Decay exponents swept for the decaying-curvature cases; empty keeps
    /// each case's own exponent.
    #[serde(default)]
    pub alphas: Vec<f64>,
    #[serde(default = "default_seeds")]
    pub seeds: usize,
    #[serde(default)]
    pub traces: TraceMode,
    #[serde(default)]
    pub solver: SolverConfig,
    #[serde(default = "default_episodes")]
    pub episodes: Vec<EpisodeBlock>,
}

fn default_out_dir() -> PathBuf {
    PathBuf::from("results")
}

fn default_horizons() -> Vec<usize> {
    vec![256, 512, 1024, 2048, 4096, 8192]
}

fn default_cases() -> Vec<u32> {
    vec![1, 2, 3]
}

fn default_seeds() -> usize {
    20
}

fn default_episodes() -> Vec<EpisodeBlock> {
    vec![EpisodeBlock::named("scalar")]
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        Self {
            schema_version: SCHEMA_VERSION,
            out_dir: default_out_dir(),
            seed: 0,
            parallel: 0,
            horizons: default_horizons(),
            cases: default_cases(),
            alphas: Vec::new(),
            seeds: default_seeds(),
            traces: TraceMode::default(),
            solver: SolverConfig::default(),
            episodes: default_episodes(),
        }
    }
}

/// One sweep: a block under one case and (optionally) one decay exponent.
#[derive(Debug, Clone, PartialEq)]
pub struct RunSpec {
    pub block: String,
    pub case: RegularizationCase,
    pub alpha: Option<f64>,
    /// Directory name relative to the output root.
    pub dir: PathBuf,
}

impl ExperimentConfig {
    pub fn from_toml_str(text: &str) -> Result<Self> {
        Self::from_value(toml::from_str::<Value>(text).context("malformed TOML")?)
    }

    fn from_value(value: Value) -> Result<Self> {
        let cfg: Self = value.try_into().context("invalid configuration")?;
        Ok(cfg)
    }

    /// Read `path` and apply overrides from `vars` (usually `std::env::vars()`).
    pub fn load(path: Option<&Path>, vars: impl IntoIterator<Item = (String, String)>) -> Result<Self> {
        let mut value = match path {
            Some(p) => {
                let text = std::fs::read_to_string(p).with_context(|| format!("reading {}", p.display()))?;
                toml::from_str::<Value>(&text).with_context(|| format!("malformed TOML in {}", p.display()))?
            }
            None => Value::try_from(Self::default()).context("encoding defaults")?,
        };
        apply_overrides(&mut value, vars)?;
        Self::from_value(value)
    }

    pub fn to_toml(&self) -> Result<String> {
        toml::to_string(self).context("encoding configuration")
    }

    pub fn solver_options(&self) -> SolverOptions {
        self.solver.options(self.seed)
    }

    pub fn seed_list(&self) -> Vec<u64> {
        (0..self.seeds as u64).map(|k| self.seed + k).collect()
    }

    pub fn run_specs(&self) -> Result<Vec<RunSpec>> {
        let single = self.episodes.len() == 1;
        let mut out = Vec::new();
        for block in &self.episodes {
            for &id in &self.cases {
                let case = RegularizationCase::from_id(id)?;
                let decaying = matches!(case, RegularizationCase::DecayingSlow | RegularizationCase::DecayingFast);
                let alphas: Vec<Option<f64>> = if decaying && !self.alphas.is_empty() {
                    self.alphas.iter().map(|&a| Some(a)).collect()
                } else {
                    vec![None]
                };
                for alpha in alphas {
                    let mut leaf = format!("case{id}");
                    if let Some(a) = alpha.filter(|_| self.alphas.len() > 1) {
                        leaf.push_str(&format!("_alpha{a}"));
                    }
                    let dir = if single {
                        PathBuf::from(leaf)
                    } else {
                        PathBuf::from(&block.name).join(leaf)
                    };
                    out.push(RunSpec {
                        block: block.name.clone(),
                        case,
                        alpha,
                        dir,
                    });
                }
            }
        }
        Ok(out)
    }

    fn block(&self, name: &str) -> Result<&EpisodeBlock> {
        self.episodes
            .iter()
            .find(|b| b.name == name)
            .with_context(|| format!("no episode block named `{name}`"))
    }

    /// Episode configuration of `run` at `horizon`.
    pub fn episode(&self, run: &RunSpec, horizon: usize) -> Result<EpisodeConfig> {
        let block = self.block(&run.block)?;
        let mut cfg = scalar_preset(run.case, horizon);
        if let Some(s) = &block.system {
            cfg.system = s.clone();
        }
        if let Some(l) = block.losses {
            cfg.losses = l;
        }
        if let (Some(a), LossFamily::DecayingCurvature { alpha, .. }) = (run.alpha, &mut cfg.losses) {
            *alpha = a;
        }
        if let Some(s) = &block.schedule {
            cfg.schedule = s.clone();
        }
        if let Some(r) = block.r_m {
            cfg.r_m = r;
        }
        if let Some(m) = block.memory {
            cfg.memory = m;
        }
        if let Some(g) = block.gradient {
            cfg.gradient = g;
        }
        if let Some(n) = block.ldc_samples {
            cfg.ldc_samples = n;
        }
        cfg.seeds = self.seeds;
        Ok(cfg)
    }

    /// Every problem found without simulating; empty when the file is valid.
    pub fn validate(&self) -> Vec<String> {
        let mut problems = Vec::new();
        if self.schema_version != SCHEMA_VERSION {
            problems.push(format!(
                "schema_version: expected {SCHEMA_VERSION}, found {}",
                self.schema_version
            ));
        }
        if self.horizons.is_empty() {
            problems.push("horizons: at least one horizon is required".into());
        }
        if self.horizons.contains(&0) {
            problems.push("horizons: every horizon must be positive".into());
        }
        if self.horizons.windows(2).any(|w| w[1] <= w[0]) {
            problems.push(format!("horizons: must be strictly increasing, got {:?}", self.horizons));
        }
        if self.cases.is_empty() {
            problems.push("cases: at least one case is required".into());
        }
        for &c in &self.cases {
            if RegularizationCase::from_id(c).is_err() {
                problems.push(format!("cases: unknown case {c} (expected 1 to 4)"));
            }
        }
        if self.seeds == 0 {
            problems.push("seeds: at least one seed is required".into());
        }
        if self.seed.checked_add(self.seeds as u64).is_none() {
            problems.push("seed: seed range overflows".into());
        }
        if self.solver.restarts == 0 || self.solver.max_iter == 0 || !(self.solver.rel_tol > 0.0) {
            problems.push("solver: restarts, max_iter and rel_tol must be positive".into());
        }
        if self.episodes.is_empty() {
            problems.push("episodes: at least one episode block is required".into());
        }
        let mut names = BTreeSet::new();
        for b in &self.episodes {
            let ok = !b.name.is_empty()
                && b.name
                    .chars()
                    .all(|c| c.is_ascii_alphanumeric() || c == '-' || c == '_');
            if !ok {
                problems.push(format!(
                    "episodes.name: `{}` must be non-empty and use only letters, digits, `-` or `_`",
                    b.name
                ));
            }
            if !names.insert(b.name.as_str()) {
                problems.push(format!("episodes.name: `{}` appears twice", b.name));
            }
        }
        if !problems.is_empty() {
            return problems;
        }
        let runs = match self.run_specs() {
            Ok(r) => r,
            Err(e) => return vec![format!("{e:#}")],
        };
        for run in &runs {
            for &t in &self.horizons {
                let checked = self.episode(run, t).and_then(|c| c.resolve().map_err(Into::into));
                if let Err(e) = checked {
                    let alpha = run.alpha.map(|a| format!(", alpha {a}")).unwrap_or_default();
                    problems.push(format!(
                        "episode `{}`, case {}{alpha}, T = {t}: {e:#}",
                        run.block,
                        run.case.id()
                    ));
                }
            }
        }
        problems
    }
}

/// Apply every `DRCLAB_A__B=value` pair as `a.b = value`. Values are read as
/// TOML when they parse and as plain strings otherwise; numeric segments
/// index arrays.
pub fn apply_overrides(root: &mut Value, vars: impl IntoIterator<Item = (String, String)>) -> Result<()> {
    let mut pairs: Vec<(String, String)> = vars
        .into_iter()
        .filter_map(|(k, v)| k.strip_prefix(ENV_PREFIX).map(|rest| (rest.to_ascii_lowercase(), v)))
        .collect();
    pairs.sort();
    for (key, raw) in pairs {
        let path: Vec<&str> = key.split("__").collect();
        if path.iter().any(|s| s.is_empty()) {
            bail!("environment override `{ENV_PREFIX}{}` has an empty key segment", key.to_ascii_uppercase());
        }
        let value = parse_scalar(&raw);
        set_path(root, &path, value).with_context(|| format!("applying override for `{}`", path.join(".")))?;
    }
    Ok(())
}

fn parse_scalar(raw: &str) -> Value {
    toml::from_str::<toml::Table>(&format!("v = {raw}"))
        .ok()
        .and_then(|mut t| t.remove("v"))
        .unwrap_or_else(|| Value::String(raw.to_string()))
}

fn set_path(node: &mut Value, path: &[&str], value: Value) -> Result<()> {
    let (head, rest) = path.split_first().expect("non-empty path");
    let child = match node {
        Value::Table(t) => {
            if rest.is_empty() {
                t.insert(head.to_string(), value);
                return Ok(());
            }
            t.entry(head.to_string())
                .or_insert_with(|| Value::Table(toml::Table::new()))
        }
        Value::Array(a) => {
            let idx: usize = head
                .parse()
                .with_context(|| format!("`{head}` is not an array index"))?;
            let len = a.len();
            let slot = a
                .get_mut(idx)
                .with_context(|| format!("index {idx} out of range for an array of {len}"))?;
            if rest.is_empty() {
                *slot = value;
                return Ok(());
            }
            slot
        }
        _ => bail!("`{head}` is below a value that is neither a table nor an array"),
    };
    set_path(child, rest, value)
}

/// `1,2,3` into case ids.
pub fn parse_cases(text: &str) -> Result<Vec<u32>> {
    text.split(',')
        .map(|s| {
            let s = s.trim();
            s.parse::<u32>().with_context(|| format!("`{s}` is not a case number"))
        })
        .collect()
}

/// `a..b` doubles from `a` up to `b`; otherwise a comma-separated list.
pub fn parse_horizons(text: &str) -> Result<Vec<usize>> {
    if let Some((a, b)) = text.split_once("..") {
        let lo: usize = a.trim().parse().with_context(|| format!("bad range start `{a}`"))?;
        let hi: usize = b.trim().parse().with_context(|| format!("bad range end `{b}`"))?;
        if lo == 0 || hi < lo {
            bail!("horizon range `{text}` must satisfy 0 < start <= end");
        }
        let mut out = Vec::new();
        let mut t = lo;
        while t <= hi {
            out.push(t);
            t = match t.checked_mul(2) {
                Some(v) => v,
                None => break,
            };
        }
        Ok(out)
    } else {
        text.split(',')
            .map(|s| {
                let s = s.trim();
                s.parse::<usize>().with_context(|| format!("`{s}` is not a horizon"))
            })
            .collect()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn horizon_ranges_double() {
        assert_eq!(parse_horizons("256..8192").unwrap(), vec![256, 512, 1024, 2048, 4096, 8192]);
        assert_eq!(parse_horizons("100..500").unwrap(), vec![100, 200, 400]);
        assert_eq!(parse_horizons("64, 100").unwrap(), vec![64, 100]);
        assert!(parse_horizons("8..4").is_err());
        assert!(parse_horizons("x").is_err());
    }

    #[test]
    fn cases_parse() {
        assert_eq!(parse_cases("1,2, 3").unwrap(), vec![1, 2, 3]);
        assert!(parse_cases("1,a").is_err());
    }

    #[test]
    fn overrides_reach_nested_keys_and_arrays() {
        let mut v = Value::try_from(ExperimentConfig::default()).unwrap();
        let vars = [
            ("DRCLAB_SEEDS", "3"),
            ("DRCLAB_SOLVER__RESTARTS", "2"),
            ("DRCLAB_EPISODES__0__R_M", "0.5"),
            ("DRCLAB_HORIZONS", "[64, 128]"),
            ("DRCLAB_OUT_DIR", "elsewhere"),
            ("UNRELATED", "1"),
        ]
        .map(|(k, v)| (k.to_string(), v.to_string()));
        apply_overrides(&mut v, vars).unwrap();
        let cfg: ExperimentConfig = v.try_into().unwrap();
        assert_eq!(cfg.seeds, 3);
        assert_eq!(cfg.solver.restarts, 2);
        assert_eq!(cfg.episodes[0].r_m, Some(0.5));
        assert_eq!(cfg.horizons, vec![64, 128]);
        assert_eq!(cfg.out_dir, PathBuf::from("elsewhere"));
    }

    #[test]
    fn bad_override_index_is_reported() {
        let mut v = Value::try_from(ExperimentConfig::default()).unwrap();
        let vars = [("DRCLAB_EPISODES__4__R_M".to_string(), "1".to_string())];
        assert!(apply_overrides(&mut v, vars).is_err());
    }

    #[test]
    fn run_directories() {
        let mut cfg = ExperimentConfig {
            cases: vec![1, 3],
            ..Default::default()
        };
        let dirs: Vec<_> = cfg.run_specs().unwrap().into_iter().map(|r| r.dir).collect();
        assert_eq!(dirs, vec![PathBuf::from("case1"), PathBuf::from("case3")]);
        cfg.alphas = vec![0.1, 0.3];
        cfg.episodes.push(EpisodeBlock::named("other"));
        let dirs: Vec<_> = cfg.run_specs().unwrap().into_iter().map(|r| r.dir).collect();
        assert_eq!(dirs.len(), 6);
        assert_eq!(dirs[1], PathBuf::from("scalar/case3_alpha0.1"));
    }
}
