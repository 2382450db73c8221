//! Experiment configuration: TOML on disk, validated on load.

use std::fmt;
use std::path::{Path, PathBuf};

use gradual_core::analysis::geometric_grid;
use gradual_core::potential::Potential;
use serde::{Deserialize, Deserializer, Serialize, Serializer};
use sha2::{Digest, Sha256};

use crate::CliError;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ChannelName {
    Fp,
    Mc,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum TGrid {
    Geometric { start: f64, end: f64, n: usize },
    Linear { start: f64, end: f64, n: usize },
    List { values: Vec<f64> },
}

impl Default for TGrid {
    fn default() -> Self {
        TGrid::Geometric {
            start: 0.05,
            end: 20.0,
            n: 40,
        }
    }
}

impl TGrid {
    pub fn times(&self) -> Vec<f64> {
        match self {
            TGrid::Geometric { start, end, n } => geometric_grid(*start, *end, *n),
            TGrid::Linear { start, end, n } => {
                if *n < 2 {
                    return vec![*start];
                }
                let h = (end - start) / (*n - 1) as f64;
                (0..*n).map(|i| if i + 1 == *n { *end } else { start + h * i as f64 }).collect()
            }
            TGrid::List { values } => values.clone(),
        }
    }
}

/// `x0` as an extended real: a number or one of `"inf"`, `"+inf"`, `"-inf"`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ExtReal(pub f64);

impl fmt::Display for ExtReal {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self.0 {
            v if v == f64::INFINITY => f.write_str("inf"),
            v if v == f64::NEG_INFINITY => f.write_str("-inf"),
            v => write!(f, "{v}"),
        }
    }
}

impl std::str::FromStr for ExtReal {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, String> {
        match s.trim() {
            "inf" | "+inf" | "infinity" => Ok(ExtReal(f64::INFINITY)),
            "-inf" | "-infinity" => Ok(ExtReal(f64::NEG_INFINITY)),
            t => t
                .parse::<f64>()
                .ok()
                .filter(|v| v.is_finite())
                .map(ExtReal)
                .ok_or_else(|| format!("`{t}` is neither a finite number nor +-inf")),
        }
    }
}

impl Serialize for ExtReal {
    fn serialize<S: Serializer>(&self, s: S) -> Result<S::Ok, S::Error> {
        if self.0.is_finite() {
            s.serialize_f64(self.0)
        } else {
            s.serialize_str(&self.to_string())
        }
    }
}

impl<'de> Deserialize<'de> for ExtReal {
    fn deserialize<D: Deserializer<'de>>(d: D) -> Result<Self, D::Error> {
        #[derive(Deserialize)]
        #[serde(untagged)]
        enum Raw {
            Float(f64),
            Int(i64),
            Text(String),
        }
        match Raw::deserialize(d)? {
            Raw::Float(v) if v.is_nan() => Err(serde::de::Error::custom("x0 is NaN")),
            Raw::Float(v) => Ok(ExtReal(v)),
            Raw::Int(v) => Ok(ExtReal(v as f64)),
            Raw::Text(t) => t.parse().map_err(serde::de::Error::custom),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct FpSection {
    /// Grid nodes.
    pub n: usize,
    /// Largest time step.
    pub dt: f64,
    /// Descent time for starts at infinity.
    pub t0: f64,
    /// Minimum grid half-width in rescaled units.
    pub z_extent: f64,
}

impl Default for FpSection {
    fn default() -> Self {
        Self {
            n: 4001,
            dt: 1e-3,
            t0: 1e-2,
            z_extent: 6.0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SdeSection {
    pub dt: f64,
    pub t0: f64,
    /// `tamed_euler` or `drift_implicit`.
    pub scheme: gradual_core::SdeScheme,
}

impl Default for SdeSection {
    fn default() -> Self {
        Self {
            dt: 1e-3,
            t0: gradual_core::sde::DEFAULT_T0,
            scheme: gradual_core::SdeScheme::TamedEuler,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct MixingSection {
    pub eta: Vec<f64>,
    pub deltas: Vec<f64>,
    pub margin: f64,
    /// Level used for the cut-off ratio `tau(eta) / tau(1 - eta)`.
    pub ratio_eta: f64,
}

impl Default for MixingSection {
    fn default() -> Self {
        Self {
            eta: vec![0.25, 0.5, 0.75],
            deltas: vec![0.5, 2.0],
            margin: gradual_core::analysis::NO_CUTOFF_MARGIN,
            ratio_eta: 0.25,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
/// Omitted keys take their default values.
#[serde(default, deny_unknown_fields)]
pub struct ExperimentConfig {
    pub potential: String,
    pub eps_list: Vec<f64>,
    pub x0: ExtReal,
    pub t_grid: TGrid,
    pub n_paths: usize,
    pub seed: u64,
    pub channels: Vec<ChannelName>,
    pub output_dir: PathBuf,
    pub fp: FpSection,
    pub sde: SdeSection,
    pub mixing: MixingSection,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        Self {
            potential: "power:2".into(),
            eps_list: vec![1e-1, 1e-2, 1e-3],
            x0: ExtReal(1.0),
            t_grid: TGrid::default(),
            n_paths: 10_000,
            seed: 1,
            channels: vec![ChannelName::Fp],
            output_dir: PathBuf::from("out"),
            fp: FpSection::default(),
            sde: SdeSection::default(),
            mixing: MixingSection::default(),
        }
    }
}

fn invalid(field: &str, reason: impl fmt::Display) -> CliError {
    CliError::Config(format!("field `{field}`: {reason}"))
}

impl ExperimentConfig {
    pub fn parse(text: &str) -> Result<Self, CliError> {
        let cfg: Self = toml::from_str(text).map_err(|e| CliError::Config(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self, CliError> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| CliError::Config(format!("cannot read {}: {e}", path.display())))?;
        Self::parse(&text).map_err(|e| match e {
            CliError::Config(m) => CliError::Config(format!("{}: {m}", path.display())),
            other => other,
        })
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("configuration always serializes")
    }

    /// SHA-256 of the canonical serialization without `output_dir`.
    pub fn hash(&self) -> String {
        let mut c = self.clone();
        c.output_dir = PathBuf::new();
        hex::encode(Sha256::digest(c.to_toml().as_bytes()))
    }

    pub fn potential(&self) -> Result<Potential, CliError> {
        self.potential.parse().map_err(|e| invalid("potential", e))
    }

    pub fn times(&self) -> Vec<f64> {
        self.t_grid.times()
    }

    pub fn has_channel(&self, c: ChannelName) -> bool {
        self.channels.contains(&c)
    }

    pub fn validate(&self) -> Result<(), CliError> {
        self.potential()?;
        if self.eps_list.is_empty() {
            return Err(invalid("eps_list", "must not be empty"));
        }
        if let Some(e) = self.eps_list.iter().find(|e| !(**e > 0.0 && **e <= 1.0)) {
            return Err(invalid("eps_list", format!("{e} is outside (0, 1]")));
        }
        if self.eps_list.windows(2).any(|w| w[1] >= w[0]) {
            return Err(invalid("eps_list", "must be strictly decreasing"));
        }
        match &self.t_grid {
            TGrid::Geometric { start, end, n } | TGrid::Linear { start, end, n } => {
                if !(*start >= 0.0 && end > start && end.is_finite()) {
                    return Err(invalid("t_grid", "need 0 <= start < end"));
                }
                if *n < 2 {
                    return Err(invalid("t_grid.n", "need at least 2 points"));
                }
                if matches!(self.t_grid, TGrid::Geometric { .. }) && *start == 0.0 {
                    return Err(invalid("t_grid.start", "a geometric grid needs start > 0"));
                }
            }
            TGrid::List { values } => {
                if values.is_empty() || values.iter().any(|v| !(*v >= 0.0 && v.is_finite())) {
                    return Err(invalid("t_grid.values", "need non-negative finite times"));
                }
                if values.windows(2).any(|w| w[1] <= w[0]) {
                    return Err(invalid("t_grid.values", "must be strictly increasing"));
                }
            }
        }
        if self.n_paths == 0 {
            return Err(invalid("n_paths", "must be at least 1"));
        }
        if self.channels.is_empty() {
            return Err(invalid("channels", "choose at least one of fp, mc"));
        }
        if self.fp.n < 3 {
            return Err(invalid("fp.n", "need at least 3 nodes"));
        }
        for (name, v) in [
            ("fp.dt", self.fp.dt),
            ("fp.t0", self.fp.t0),
            ("fp.z_extent", self.fp.z_extent),
            ("sde.dt", self.sde.dt),
            ("sde.t0", self.sde.t0),
        ] {
            if !(v > 0.0 && v.is_finite()) {
                return Err(invalid(name, format!("must be positive, got {v}")));
            }
        }
        if self.mixing.eta.iter().any(|e| !(*e > 0.0 && *e < 1.0)) {
            return Err(invalid("mixing.eta", "levels must lie in (0, 1)"));
        }
        if !(self.mixing.margin > 0.0 && self.mixing.margin < 0.5) {
            return Err(invalid("mixing.margin", "must lie in (0, 1/2)"));
        }
        if !(self.mixing.ratio_eta > 0.0 && self.mixing.ratio_eta < 0.5) {
            return Err(invalid("mixing.ratio_eta", "must lie in (0, 1/2)"));
        }
        if self.mixing.deltas.iter().any(|d| !(*d > 0.0)) {
            return Err(invalid("mixing.deltas", "must be positive"));
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn default_round_trips() {
        let cfg = ExperimentConfig::default();
        let back = ExperimentConfig::parse(&cfg.to_toml()).unwrap();
        assert_eq!(back, cfg);
        assert_eq!(back.hash(), cfg.hash());
    }

    #[test]
    fn infinite_start_round_trips() {
        let cfg = ExperimentConfig {
            x0: ExtReal(f64::NEG_INFINITY),
            t_grid: TGrid::List { values: vec![0.1, 0.2] },
            channels: vec![ChannelName::Fp, ChannelName::Mc],
            ..ExperimentConfig::default()
        };
        let text = cfg.to_toml();
        assert!(text.contains("x0 = \"-inf\""));
        assert_eq!(ExperimentConfig::parse(&text).unwrap(), cfg);
    }

    #[test]
    fn accepts_native_and_quoted_infinity() {
        let base = ExperimentConfig::default().to_toml();
        for (lit, v) in [("inf", f64::INFINITY), ("\"+inf\"", f64::INFINITY), ("3", 3.0), ("-2.5", -2.5)] {
            let text = base.replace("x0 = 1.0", &format!("x0 = {lit}"));
            assert_eq!(ExperimentConfig::parse(&text).unwrap().x0.0, v, "{lit}");
        }
    }

    #[test]
    fn errors_name_the_field() {
        let base = ExperimentConfig::default().to_toml();
        let bad = base.replace("eps_list = [0.1, 0.01, 0.001]", "eps_list = [0.01, 0.1]");
        let msg = ExperimentConfig::parse(&bad).unwrap_err().to_string();
        assert!(msg.contains("eps_list"), "{msg}");
        let bad = base.replace("potential = \"power:2\"", "potential = \"quartic\"");
        assert!(ExperimentConfig::parse(&bad).unwrap_err().to_string().contains("potential"));
        let bad = format!("{base}\nbogus = 1\n");
        assert!(ExperimentConfig::parse(&bad).unwrap_err().to_string().contains("bogus"));
    }

    #[test]
    fn syntax_errors_report_a_line() {
        let msg = ExperimentConfig::parse("potential = \"power:2\"\neps_list = [0.1,\n").unwrap_err().to_string();
        assert!(msg.contains("line"), "{msg}");
    }
}
