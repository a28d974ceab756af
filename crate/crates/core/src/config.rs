//! Flat `key = value` run configuration.
//!
//! Keys are the CLI flag names without the leading dashes. Lines starting
//! with `#` are comments. A JSON object (for instance a run manifest with a
//! `config` member) is accepted as well, so a finished run can be replayed.

use serde::{Deserialize, Serialize};
use std::collections::BTreeMap;
use std::fmt;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use crate::error::{Result, VpfpError};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum ScenarioKind {
    NoneqConv,
    EqConv,
    ApTest,
    MixedRegime,
    BumpOnTail,
}

impl ScenarioKind {
    pub const ALL: [ScenarioKind; 5] = [
        ScenarioKind::NoneqConv,
        ScenarioKind::EqConv,
        ScenarioKind::ApTest,
        ScenarioKind::MixedRegime,
        ScenarioKind::BumpOnTail,
    ];

    pub fn name(self) -> &'static str {
        match self {
            ScenarioKind::NoneqConv => "noneq_conv",
            ScenarioKind::EqConv => "eq_conv",
            ScenarioKind::ApTest => "ap_test",
            ScenarioKind::MixedRegime => "mixed_regime",
            ScenarioKind::BumpOnTail => "bump_on_tail",
        }
    }
}

impl FromStr for ScenarioKind {
    type Err = VpfpError;

    fn from_str(s: &str) -> Result<Self> {
        Self::ALL
            .into_iter()
            .find(|k| k.name() == s)
            .ok_or_else(|| VpfpError::Config(format!("unknown scenario kind '{s}'")))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum SolverKind {
    LowRank,
    Full,
}

impl SolverKind {
    pub fn name(self) -> &'static str {
        match self {
            SolverKind::LowRank => "lowrank",
            SolverKind::Full => "full",
        }
    }
}

impl FromStr for SolverKind {
    type Err = VpfpError;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "lowrank" => Ok(SolverKind::LowRank),
            "full" | "fulltensor" => Ok(SolverKind::Full),
            _ => Err(VpfpError::Config(format!(
                "unknown solver '{s}' (expected lowrank or full)"
            ))),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ScenarioConfig {
    pub scenario: ScenarioKind,
    pub nx: usize,
    pub nv: usize,
    pub rank: usize,
    /// Time step, or the coarsest step of a convergence ladder.
    pub dt: f64,
    pub t_final: f64,
    /// Uniform relaxation parameter, or the far-field value of a profile.
    pub eps: f64,
    pub order: u8,
    pub solver: SolverKind,
    pub out: Option<PathBuf>,
    pub seed: u64,
    /// Number of step sizes in a convergence ladder.
    pub levels: usize,
    /// Randomized trials per audit in the certificate suite.
    pub trials: usize,
    /// Half-width of the velocity domain.
    pub v_max: f64,
}

impl ScenarioConfig {
    /// Reference parameters of each experiment.
    pub fn defaults(scenario: ScenarioKind) -> Self {
        let base = ScenarioConfig {
            scenario,
            nx: 64,
            nv: 64,
            rank: 10,
            dt: 1e-3,
            t_final: 5e-3,
            eps: 1.0,
            order: 1,
            solver: SolverKind::LowRank,
            out: None,
            seed: 0,
            levels: 6,
            trials: 100,
            v_max: 6.0,
        };
        match scenario {
            ScenarioKind::NoneqConv => base,
            ScenarioKind::EqConv => ScenarioConfig {
                rank: 15,
                dt: 5e-5,
                t_final: 5e-4,
                order: 2,
                ..base
            },
            ScenarioKind::ApTest => ScenarioConfig {
                dt: 2.5e-3,
                t_final: 0.1,
                eps: 1e-6,
                ..base
            },
            ScenarioKind::MixedRegime => ScenarioConfig {
                nx: 100,
                nv: 128,
                rank: 13,
                dt: 1e-4,
                t_final: 0.3,
                eps: 1e-3,
                ..base
            },
            ScenarioKind::BumpOnTail => ScenarioConfig {
                nx: 100,
                nv: 128,
                rank: 6,
                dt: 1e-3,
                t_final: 0.5,
                eps: 1e-6,
                ..base
            },
        }
    }

    pub fn set(&mut self, key: &str, value: &str) -> Result<()> {
        fn num<T: FromStr>(key: &str, value: &str) -> Result<T> {
            value
                .parse()
                .map_err(|_| VpfpError::Config(format!("invalid value '{value}' for key '{key}'")))
        }
        match key.replace('_', "-").as_str() {
            "scenario" => self.scenario = value.parse()?,
            "nx" => self.nx = num(key, value)?,
            "nv" => self.nv = num(key, value)?,
            "rank" => self.rank = num(key, value)?,
            "dt" => self.dt = num(key, value)?,
            "t-final" => self.t_final = num(key, value)?,
            "eps" => self.eps = num(key, value)?,
            "order" => self.order = num(key, value)?,
            "solver" => self.solver = value.parse()?,
            "out" => self.out = (!value.is_empty()).then(|| PathBuf::from(value)),
            "seed" => self.seed = num(key, value)?,
            "levels" => self.levels = num(key, value)?,
            "trials" => self.trials = num(key, value)?,
            "v-max" => self.v_max = num(key, value)?,
            _ => return Err(VpfpError::Config(format!("unknown config key '{key}'"))),
        }
        Ok(())
    }

    /// Parses `text` on top of the defaults of its `scenario` key (or of
    /// `fallback` when absent).
    pub fn parse(text: &str, fallback: ScenarioKind) -> Result<Self> {
        let pairs = parse_pairs(text)?;
        let kind = match pairs.get("scenario") {
            Some(s) => s.parse()?,
            None => fallback,
        };
        let mut cfg = Self::defaults(kind);
        for (k, v) in &pairs {
            cfg.set(k, v)?;
        }
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path, fallback: ScenarioKind) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| {
            VpfpError::Config(format!("cannot read config {}: {e}", path.display()))
        })?;
        Self::parse(&text, fallback)
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |msg: String| Err(VpfpError::Config(msg));
        if self.nx < 2 || self.nv < 2 {
            return bad(format!(
                "grid needs nx, nv >= 2 (got {} x {})",
                self.nx, self.nv
            ));
        }
        if self.rank == 0 || self.rank > self.nx.min(self.nv) {
            return bad(format!(
                "rank {} must lie in 1..={}",
                self.rank,
                self.nx.min(self.nv)
            ));
        }
        if !(self.dt >= 0.0) || !self.dt.is_finite() {
            return bad(format!("dt must be finite and >= 0 (got {})", self.dt));
        }
        if !(self.t_final >= 0.0) || !self.t_final.is_finite() {
            return bad(format!(
                "t-final must be finite and >= 0 (got {})",
                self.t_final
            ));
        }
        if !(self.eps > 0.0) || !self.eps.is_finite() {
            return bad(format!("eps must be positive (got {})", self.eps));
        }
        if self.order != 1 && self.order != 2 {
            return bad(format!("order must be 1 or 2 (got {})", self.order));
        }
        if !(self.v_max > 0.0) {
            return bad(format!("v-max must be positive (got {})", self.v_max));
        }
        Ok(())
    }

    /// Number of steps to reach `t_final`; zero when `dt == 0`.
    pub fn n_steps(&self) -> Result<usize> {
        steps_for(self.dt, self.t_final)
    }

    /// Flat key/value echo; parsing it back gives an identical config.
    pub fn to_pairs(&self) -> BTreeMap<String, String> {
        let mut m = BTreeMap::new();
        let mut put = |k: &str, v: String| {
            m.insert(k.to_string(), v);
        };
        put("scenario", self.scenario.name().into());
        put("nx", self.nx.to_string());
        put("nv", self.nv.to_string());
        put("rank", self.rank.to_string());
        put("dt", format!("{:?}", self.dt));
        put("t-final", format!("{:?}", self.t_final));
        put("eps", format!("{:?}", self.eps));
        put("order", self.order.to_string());
        put("solver", self.solver.name().into());
        put("seed", self.seed.to_string());
        put("levels", self.levels.to_string());
        put("trials", self.trials.to_string());
        put("v-max", format!("{:?}", self.v_max));
        if let Some(out) = &self.out {
            put("out", out.display().to_string());
        }
        m
    }
}

impl fmt::Display for ScenarioConfig {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        for (k, v) in self.to_pairs() {
            writeln!(f, "{k} = {v}")?;
        }
        Ok(())
    }
}

pub fn steps_for(dt: f64, t_final: f64) -> Result<usize> {
    if dt == 0.0 {
        return Ok(0);
    }
    let n = (t_final / dt).round();
    if (n * dt - t_final).abs() > 1e-9 * t_final.max(dt) {
        return Err(VpfpError::Config(format!(
            "t-final {t_final} is not an integer multiple of dt {dt}"
        )));
    }
    Ok(n as usize)
}

/// Raw key/value pairs from flat text or from a JSON object.
pub fn parse_pairs(text: &str) -> Result<BTreeMap<String, String>> {
    let trimmed = text.trim_start();
    if trimmed.starts_with('{') {
        let json: serde_json::Value = serde_json::from_str(trimmed)?;
        let obj = json
            .get("config")
            .unwrap_or(&json)
            .as_object()
            .ok_or_else(|| VpfpError::Config("JSON config must be an object".into()))?;
        return obj
            .iter()
            .map(|(k, v)| {
                let s = match v {
                    serde_json::Value::String(s) => s.clone(),
                    serde_json::Value::Number(n) => n.to_string(),
                    other => {
                        return Err(VpfpError::Config(format!(
                            "unsupported value for '{k}': {other}"
                        )))
                    }
                };
                Ok((k.clone(), s))
            })
            .collect();
    }
    let mut out = BTreeMap::new();
    for (i, raw) in text.lines().enumerate() {
        let line = raw.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let (k, v) = line.split_once('=').ok_or_else(|| {
            VpfpError::Config(format!(
                "line {}: expected key = value, got '{line}'",
                i + 1
            ))
        })?;
        let key = k.trim().replace('_', "-");
        if out.insert(key.clone(), v.trim().to_string()).is_some() {
            return Err(VpfpError::Config(format!(
                "line {}: duplicate key '{key}'",
                i + 1
            )));
        }
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn parses_flat_text_with_comments() {
        let cfg = ScenarioConfig::parse(
            "# ladder\nscenario = noneq_conv\nnx = 32\n t_final = 0.01 \neps=1e-6\nsolver = full\n",
            ScenarioKind::ApTest,
        )
        .unwrap();
        assert_eq!(cfg.scenario, ScenarioKind::NoneqConv);
        assert_eq!(cfg.nx, 32);
        assert_eq!(cfg.t_final, 0.01);
        assert_eq!(cfg.eps, 1e-6);
        assert_eq!(cfg.solver, SolverKind::Full);
        assert_eq!(cfg.nv, 64);
    }

    #[test]
    fn rejects_bad_input() {
        let k = ScenarioKind::NoneqConv;
        assert!(ScenarioConfig::parse("nx 32", k).unwrap_err().is_config());
        assert!(ScenarioConfig::parse("foo = 1", k).unwrap_err().is_config());
        assert!(ScenarioConfig::parse("nx = many", k)
            .unwrap_err()
            .is_config());
        assert!(ScenarioConfig::parse("scenario = landau", k)
            .unwrap_err()
            .is_config());
        assert!(ScenarioConfig::parse("order = 3", k)
            .unwrap_err()
            .is_config());
        assert!(ScenarioConfig::parse("rank = 100", k)
            .unwrap_err()
            .is_config());
        assert!(ScenarioConfig::parse("nx = 3\nnx = 4", k)
            .unwrap_err()
            .is_config());
        assert!(ScenarioConfig::parse("eps = 0", k).unwrap_err().is_config());
    }

    #[test]
    fn text_and_json_roundtrip() {
        let mut cfg = ScenarioConfig::defaults(ScenarioKind::MixedRegime);
        cfg.dt = 0.1 + 0.2;
        cfg.out = Some(PathBuf::from("/tmp/x"));
        let back = ScenarioConfig::parse(&cfg.to_string(), ScenarioKind::NoneqConv).unwrap();
        assert_eq!(back, cfg);
        let json = serde_json::json!({ "config": cfg.to_pairs(), "other": [1, 2] });
        let back = ScenarioConfig::parse(&json.to_string(), ScenarioKind::NoneqConv).unwrap();
        assert_eq!(back, cfg);
    }

    #[test]
    fn step_counts() {
        assert_eq!(steps_for(0.0, 1.0).unwrap(), 0);
        assert_eq!(steps_for(1e-3, 5e-3).unwrap(), 5);
        assert_eq!(steps_for(2.5e-3, 0.1).unwrap(), 40);
        assert_eq!(steps_for(1e-3 / 32.0, 5e-3).unwrap(), 160);
        assert!(steps_for(0.3, 1.0).is_err());
    }

    #[test]
    fn defaults_are_valid() {
        for k in ScenarioKind::ALL {
            ScenarioConfig::defaults(k).validate().unwrap();
            ScenarioConfig::defaults(k).n_steps().unwrap();
            assert_eq!(k.name().parse::<ScenarioKind>().unwrap(), k);
        }
    }
}
