//! Run configuration: a TOML file with dotted sections plus `key=value`
//! overrides from the command line.

use std::fmt;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use anyhow::{Context, Result};
use dynqueue::simulator::RecordGranularity;
use dynqueue::{CriticalPoint, Family, PolicySpec, ProfileSpec};
use serde::{Deserialize, Deserializer, Serialize, Serializer};

/// Bad configuration or arguments; exits with code 2.
#[derive(Debug)]
pub struct UsageError(pub String);

impl fmt::Display for UsageError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.0)
    }
}

impl std::error::Error for UsageError {}

pub fn usage(msg: impl Into<String>) -> anyhow::Error {
    UsageError(msg.into()).into()
}

/// An arrival rate, either absolute or a multiple of `λ_eq^max` written as `"1.05x"`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum RateSpec {
    Absolute(f64),
    Relative(f64),
}

impl RateSpec {
    pub fn resolve(self, critical: &CriticalPoint) -> Result<f64> {
        match self {
            RateSpec::Absolute(v) => Ok(v),
            RateSpec::Relative(_) if critical.degenerate => Err(usage(format!(
                "relative rate {self} needs a non-degenerate critical point (x_th = {})",
                critical.x_th
            ))),
            RateSpec::Relative(m) => Ok(m * critical.lambda_eq_max),
        }
    }
}

impl fmt::Display for RateSpec {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            RateSpec::Absolute(v) => write!(f, "{v}"),
            RateSpec::Relative(m) => write!(f, "{m}x"),
        }
    }
}

impl FromStr for RateSpec {
    type Err = String;

    fn from_str(s: &str) -> std::result::Result<Self, String> {
        let s = s.trim();
        let (body, relative) = match s.strip_suffix(['x', 'X']) {
            Some(body) => (body.trim(), true),
            None => (s, false),
        };
        let v: f64 = body
            .parse()
            .map_err(|_| format!("cannot parse rate {s:?}; expected a number or \"<m>x\""))?;
        if !(v.is_finite() && v >= 0.0) {
            return Err(format!("rate {s:?} must be finite and non-negative"));
        }
        Ok(if relative {
            RateSpec::Relative(v)
        } else {
            RateSpec::Absolute(v)
        })
    }
}

impl Serialize for RateSpec {
    fn serialize<S: Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        match self {
            RateSpec::Absolute(v) => s.serialize_f64(*v),
            RateSpec::Relative(_) => s.serialize_str(&self.to_string()),
        }
    }
}

impl<'de> Deserialize<'de> for RateSpec {
    fn deserialize<D: Deserializer<'de>>(d: D) -> std::result::Result<Self, D::Error> {
        #[derive(Deserialize)]
        #[serde(untagged)]
        enum Raw {
            Int(i64),
            Float(f64),
            Text(String),
        }
        match Raw::deserialize(d)? {
            Raw::Int(v) => format!("{v}").parse(),
            Raw::Float(v) => v.to_string().parse(),
            Raw::Text(s) => s.parse(),
        }
        .map_err(serde::de::Error::custom)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PolicyKind {
    AlwaysOn,
    Threshold,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PolicySection {
    pub kind: PolicyKind,
    /// Omitted means the critical threshold `x_th`.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub threshold: Option<f64>,
}

impl Default for PolicySection {
    fn default() -> Self {
        PolicySection {
            kind: PolicyKind::Threshold,
            threshold: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ServerSection {
    pub tau: f64,
}

impl Default for ServerSection {
    fn default() -> Self {
        ServerSection { tau: 1.0 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SimSection {
    pub lambda: RateSpec,
    pub x0: f64,
    pub n0: u64,
    pub horizon_tasks: u64,
    pub record: RecordGranularity,
}

impl Default for SimSection {
    fn default() -> Self {
        SimSection {
            lambda: RateSpec::Relative(0.95),
            x0: 0.0,
            n0: 0,
            horizon_tasks: 100_000,
            record: RecordGranularity::Events,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SweepSection {
    pub lambdas: Vec<RateSpec>,
}

impl Default for SweepSection {
    fn default() -> Self {
        SweepSection {
            lambdas: [0.8, 0.9, 1.0, 1.05, 1.1].map(RateSpec::Relative).to_vec(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct EquilibriumSection {
    /// Rates for the S/R curve table; empty means `λ_eq^max` alone.
    pub curve_lambdas: Vec<RateSpec>,
    pub curve_points: usize,
}

impl Default for EquilibriumSection {
    fn default() -> Self {
        EquilibriumSection {
            curve_lambdas: Vec::new(),
            curve_points: 101,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct StaticSection {
    pub n: usize,
    /// Omitted means `x_th`.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub x: Option<f64>,
    /// Omitted means `0.01·τ`.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub grid_step: Option<f64>,
    /// Omitted means `3·τ`.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub idle_cap: Option<f64>,
}

impl Default for StaticSection {
    fn default() -> Self {
        StaticSection {
            n: 2,
            x: None,
            grid_step: None,
            idle_cap: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct OutputSection {
    pub dir: PathBuf,
}

impl Default for OutputSection {
    fn default() -> Self {
        OutputSection {
            dir: PathBuf::from("out"),
        }
    }
}

fn default_profile() -> ProfileSpec {
    ProfileSpec::new(Family::Quadratic, [4.0, 0.5, 1.0])
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    /// Reserved; every computation here is deterministic.
    #[serde(default)]
    pub seed: u64,
    #[serde(default = "default_profile")]
    pub profile: ProfileSpec,
    #[serde(default)]
    pub server: ServerSection,
    #[serde(default)]
    pub policy: PolicySection,
    #[serde(default)]
    pub sim: SimSection,
    #[serde(default)]
    pub sweep: SweepSection,
    #[serde(default)]
    pub equilibrium: EquilibriumSection,
    #[serde(default, rename = "static")]
    pub static_: StaticSection,
    #[serde(default)]
    pub output: OutputSection,
}

impl Default for RunConfig {
    fn default() -> Self {
        toml::from_str("").expect("empty config uses defaults")
    }
}

impl RunConfig {
    /// Reads `path` (or starts from defaults) and applies `overrides` in order.
    pub fn load(path: Option<&Path>, overrides: &[String]) -> Result<Self> {
        let mut table = match path {
            Some(p) => {
                let text = std::fs::read_to_string(p)
                    .with_context(|| format!("reading config {}", p.display()))?;
                toml::from_str::<toml::Table>(&text)
                    .map_err(|e| usage(format!("{}: {e}", p.display())))?
            }
            None => toml::Table::new(),
        };
        for item in overrides {
            apply_override(&mut table, item)?;
        }
        let cfg: RunConfig = toml::Value::Table(table)
            .try_into()
            .map_err(|e: toml::de::Error| usage(format!("invalid config: {}", e.message())))?;
        Ok(cfg)
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("config serializes to TOML")
    }

    pub fn policy_spec(&self, critical: &CriticalPoint) -> Result<PolicySpec> {
        let spec = match self.policy.kind {
            PolicyKind::AlwaysOn => PolicySpec::AlwaysOn,
            PolicyKind::Threshold => {
                PolicySpec::threshold(self.policy.threshold.unwrap_or(critical.x_th))?
            }
        };
        Ok(spec)
    }
}

/// Sets a dotted key, e.g. `sim.lambda=1.05x` or `profile.params=[1, 2]`.
/// Values are read as TOML and fall back to a plain string.
pub fn apply_override(table: &mut toml::Table, item: &str) -> Result<()> {
    let (key, raw) = item
        .split_once('=')
        .ok_or_else(|| usage(format!("override {item:?} is not key=value")))?;
    let key = key.trim();
    let raw = raw.trim();
    let value = toml::from_str::<toml::Table>(&format!("v = {raw}"))
        .ok()
        .and_then(|mut t| t.remove("v"))
        .unwrap_or_else(|| toml::Value::String(raw.to_string()));

    let parts: Vec<&str> = key.split('.').collect();
    if parts.iter().any(|p| p.is_empty()) {
        return Err(usage(format!("bad override key {key:?}")));
    }
    let (last, sections) = parts.split_last().expect("split yields at least one part");
    let mut cur = table;
    for section in sections {
        let entry = cur
            .entry(section.to_string())
            .or_insert_with(|| toml::Value::Table(toml::Table::new()));
        cur = entry
            .as_table_mut()
            .ok_or_else(|| usage(format!("override {key:?}: {section} is not a section")))?;
    }
    cur.insert(last.to_string(), value);
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn rate_specs_parse() {
        assert_eq!(
            "1.05x".parse::<RateSpec>().unwrap(),
            RateSpec::Relative(1.05)
        );
        assert_eq!("0.4".parse::<RateSpec>().unwrap(), RateSpec::Absolute(0.4));
        assert!("fast".parse::<RateSpec>().is_err());
        assert!("-1".parse::<RateSpec>().is_err());
    }

    #[test]
    fn defaults_and_overrides() {
        let cfg = RunConfig::load(
            None,
            &[
                "server.tau=2".into(),
                "sim.lambda=0.3".into(),
                "policy.kind=always_on".into(),
                "sweep.lambdas=[\"0.5x\", 0.2]".into(),
            ],
        )
        .unwrap();
        assert_eq!(cfg.server.tau, 2.0);
        assert_eq!(cfg.sim.lambda, RateSpec::Absolute(0.3));
        assert_eq!(cfg.policy.kind, PolicyKind::AlwaysOn);
        assert_eq!(
            cfg.sweep.lambdas,
            vec![RateSpec::Relative(0.5), RateSpec::Absolute(0.2)]
        );
        assert_eq!(cfg.profile, default_profile());
    }

    #[test]
    fn echo_round_trips() {
        let mut cfg = RunConfig::default();
        cfg.sim.lambda = RateSpec::Absolute(0.1 + 0.2);
        cfg.policy.threshold = Some(1.0 / 3.0);
        let back: RunConfig = toml::from_str(&cfg.to_toml()).unwrap();
        assert_eq!(back, cfg);
    }

    #[test]
    fn unknown_keys_are_rejected() {
        assert!(RunConfig::load(None, &["sim.lamda=0.3".into()]).is_err());
        assert!(RunConfig::load(None, &["nonsense".into()]).is_err());
    }
}
