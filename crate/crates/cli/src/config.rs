//! Flat `key = value` configuration with dotted section prefixes.
//!
//! One assignment per line, `#` comments, blank lines ignored. List values
//! are whitespace- or comma-separated. Unknown keys are errors so typos
//! surface immediately, with the offending key and line number.

use std::collections::BTreeMap;
use std::fmt;
use std::str::FromStr;

use offrl_core::adversary::{AttackMode, AttackTiming};

#[derive(Debug)]
pub struct ConfigError {
    pub line: usize,
    pub key: String,
    pub message: String,
}

impl fmt::Display for ConfigError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(
            f,
            "config error at line {} (key '{}'): {}",
            self.line, self.key, self.message
        )
    }
}

impl std::error::Error for ConfigError {}

/// Raw parsed file: key -> (line, value-string).
pub struct RawConfig {
    entries: BTreeMap<String, (usize, String)>,
}

impl RawConfig {
    pub fn parse(text: &str) -> Result<Self, ConfigError> {
        let mut entries = BTreeMap::new();
        for (i, raw_line) in text.lines().enumerate() {
            let lineno = i + 1;
            let line = match raw_line.find('#') {
                Some(pos) => &raw_line[..pos],
                None => raw_line,
            }
            .trim();
            if line.is_empty() {
                continue;
            }
            let (key, value) = line.split_once('=').ok_or_else(|| ConfigError {
                line: lineno,
                key: line.to_string(),
                message: "expected 'key = value'".into(),
            })?;
            let key = key.trim().to_string();
            if key.is_empty() {
                return Err(ConfigError {
                    line: lineno,
                    key,
                    message: "empty key".into(),
                });
            }
            if entries.contains_key(&key) {
                return Err(ConfigError {
                    line: lineno,
                    key,
                    message: "duplicate key".into(),
                });
            }
            entries.insert(key, (lineno, value.trim().to_string()));
        }
        Ok(RawConfig { entries })
    }

    fn take(&mut self, key: &str) -> Option<(usize, String)> {
        self.entries.remove(key)
    }

    fn finish(self) -> Result<(), ConfigError> {
        if let Some((key, (line, _))) = self.entries.into_iter().next() {
            return Err(ConfigError {
                line,
                key,
                message: "unknown key".into(),
            });
        }
        Ok(())
    }
}

fn parse_one<T: FromStr>(key: &str, line: usize, value: &str) -> Result<T, ConfigError>
where
    T::Err: fmt::Display,
{
    value.parse::<T>().map_err(|e| ConfigError {
        line,
        key: key.to_string(),
        message: format!("cannot parse '{value}': {e}"),
    })
}

fn parse_list<T: FromStr>(key: &str, line: usize, value: &str) -> Result<Vec<T>, ConfigError>
where
    T::Err: fmt::Display,
{
    let items: Vec<&str> = value
        .split(|c: char| c == ',' || c.is_whitespace())
        .filter(|s| !s.is_empty())
        .collect();
    if items.is_empty() {
        return Err(ConfigError {
            line,
            key: key.to_string(),
            message: "empty list".into(),
        });
    }
    items.into_iter().map(|s| parse_one(key, line, s)).collect()
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum MdpKind {
    /// Low-rank mixture instance from the generator.
    Linear,
    /// One-hot instance with a rarely-sampled tempting action.
    Uneven,
}

impl FromStr for MdpKind {
    type Err = String;
    fn from_str(s: &str) -> Result<Self, String> {
        match s {
            "linear" => Ok(MdpKind::Linear),
            "uneven" => Ok(MdpKind::Uneven),
            other => Err(format!("unknown mdp kind '{other}' (linear | uneven)")),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum BehaviorKind {
    Uniform,
    /// The uneven family's safe-action-heavy behavior.
    Skewed,
}

impl FromStr for BehaviorKind {
    type Err = String;
    fn from_str(s: &str) -> Result<Self, String> {
        match s {
            "uniform" => Ok(BehaviorKind::Uniform),
            "skewed" => Ok(BehaviorKind::Skewed),
            other => Err(format!("unknown behavior '{other}' (uniform | skewed)")),
        }
    }
}

/// How the solver's per-step corruption budgets are filled.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ZetaSource {
    None,
    /// `|D| * c * eps` split evenly over steps.
    Approx,
    /// Per-step sums of the sidecar's gap bounds.
    Exact,
}

impl FromStr for ZetaSource {
    type Err = String;
    fn from_str(s: &str) -> Result<Self, String> {
        match s {
            "none" => Ok(ZetaSource::None),
            "approx" => Ok(ZetaSource::Approx),
            "exact" => Ok(ZetaSource::Exact),
            other => Err(format!("unknown zeta source '{other}' (none | approx | exact)")),
        }
    }
}

/// Alpha selection: a fixed value or `auto` for `1/sqrt(n)`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum AlphaSpec {
    Fixed(f64),
    AutoSqrtN,
}

impl AlphaSpec {
    pub fn resolve(&self, n: usize) -> f64 {
        match self {
            AlphaSpec::Fixed(a) => *a,
            AlphaSpec::AutoSqrtN => 1.0 / (n as f64).sqrt(),
        }
    }
}

impl FromStr for AlphaSpec {
    type Err = String;
    fn from_str(s: &str) -> Result<Self, String> {
        if s == "auto" {
            return Ok(AlphaSpec::AutoSqrtN);
        }
        s.parse::<f64>()
            .map(AlphaSpec::Fixed)
            .map_err(|e| format!("alpha must be a number or 'auto': {e}"))
    }
}

/// A fully parsed sweep description.
#[derive(Debug, Clone)]
pub struct SweepConfig {
    pub mdp_kind: MdpKind,
    pub d: usize,
    pub states: usize,
    pub actions: usize,
    pub horizon: usize,
    pub behavior: BehaviorKind,
    /// Grid axis: episode counts.
    pub ns: Vec<usize>,
    pub attack_mode: Option<AttackMode>,
    /// Grid axis: corruption rates.
    pub rates: Vec<f64>,
    /// Grid axis: corruption scales.
    pub scales: Vec<f64>,
    pub timing: AttackTiming,
    pub algorithms: Vec<String>,
    pub alpha: AlphaSpec,
    pub lambda: f64,
    pub beta_scale: f64,
    pub delta: f64,
    pub zeta_source: ZetaSource,
    pub replicas: usize,
    pub master_seed: u64,
}

impl SweepConfig {
    pub fn parse(text: &str) -> Result<Self, ConfigError> {
        let mut raw = RawConfig::parse(text)?;

        fn req<T: FromStr>(raw: &mut RawConfig, key: &str) -> Result<T, ConfigError>
        where
            T::Err: fmt::Display,
        {
            let (line, value) = raw.take(key).ok_or_else(|| ConfigError {
                line: 0,
                key: key.to_string(),
                message: "missing required key".into(),
            })?;
            parse_one(key, line, &value)
        }
        fn opt<T: FromStr>(raw: &mut RawConfig, key: &str, default: T) -> Result<T, ConfigError>
        where
            T::Err: fmt::Display,
        {
            match raw.take(key) {
                Some((line, value)) => parse_one(key, line, &value),
                None => Ok(default),
            }
        }
        fn opt_list<T: FromStr>(
            raw: &mut RawConfig,
            key: &str,
            default: Vec<T>,
        ) -> Result<Vec<T>, ConfigError>
        where
            T::Err: fmt::Display,
        {
            match raw.take(key) {
                Some((line, value)) => parse_list(key, line, &value),
                None => Ok(default),
            }
        }

        let mdp_kind: MdpKind = opt(&mut raw, "mdp.kind", MdpKind::Linear)?;
        let cfg = SweepConfig {
            mdp_kind,
            d: opt(&mut raw, "mdp.d", 4)?,
            states: opt(&mut raw, "mdp.states", 8)?,
            actions: opt(&mut raw, "mdp.actions", 3)?,
            horizon: opt(&mut raw, "mdp.horizon", 3)?,
            behavior: opt(
                &mut raw,
                "collect.behavior",
                if mdp_kind == MdpKind::Uneven {
                    BehaviorKind::Skewed
                } else {
                    BehaviorKind::Uniform
                },
            )?,
            ns: opt_list(&mut raw, "collect.n", vec![500])?,
            attack_mode: match raw.take("attack.mode") {
                None => None,
                Some((line, v)) if v == "none" => {
                    let _ = line;
                    None
                }
                Some((line, v)) => Some(parse_one::<AttackMode>("attack.mode", line, &v)?),
            },
            rates: opt_list(&mut raw, "attack.rate", vec![0.0])?,
            scales: opt_list(&mut raw, "attack.scale", vec![1.0])?,
            timing: match raw.take("attack.timing") {
                None => AttackTiming::PostHoc,
                Some((line, v)) => match v.as_str() {
                    "post_hoc" => AttackTiming::PostHoc,
                    "on_the_fly" => AttackTiming::OnTheFly,
                    other => {
                        return Err(ConfigError {
                            line,
                            key: "attack.timing".into(),
                            message: format!("unknown timing '{other}'"),
                        })
                    }
                },
            },
            algorithms: opt_list(
                &mut raw,
                "solver.algorithms",
                vec!["cr_pevi".to_string(), "pevi".to_string()],
            )?,
            alpha: opt(&mut raw, "solver.alpha", AlphaSpec::Fixed(0.5))?,
            lambda: opt(&mut raw, "solver.lambda", 1.0)?,
            beta_scale: opt(&mut raw, "solver.beta_scale", 0.1)?,
            delta: opt(&mut raw, "solver.delta", 0.05)?,
            zeta_source: opt(&mut raw, "solver.zeta", ZetaSource::None)?,
            replicas: opt(&mut raw, "sweep.replicas", 1)?,
            master_seed: opt(&mut raw, "sweep.master_seed", 0)?,
        };
        raw.finish()?;
        cfg.validate()?;
        Ok(cfg)
    }

    fn validate(&self) -> Result<(), ConfigError> {
        let bad = |key: &str, message: String| ConfigError {
            line: 0,
            key: key.into(),
            message,
        };
        if self.replicas == 0 {
            return Err(bad("sweep.replicas", "must be >= 1".into()));
        }
        if self.ns.iter().any(|&n| n == 0) {
            return Err(bad("collect.n", "episode counts must be >= 1".into()));
        }
        if self.algorithms.is_empty() {
            return Err(bad("solver.algorithms", "need at least one algorithm".into()));
        }
        for name in &self.algorithms {
            offrl_core::solver::algorithms::algorithm_by_name(name)
                .map_err(|e| bad("solver.algorithms", e.to_string()))?;
        }
        if self.behavior == BehaviorKind::Skewed && self.mdp_kind != MdpKind::Uneven {
            return Err(bad(
                "collect.behavior",
                "skewed behavior is defined for the uneven family only".into(),
            ));
        }
        if self.attack_mode.is_some() && self.rates.iter().all(|&c| c == 0.0) {
            return Err(bad("attack.rate", "attack configured with zero rate".into()));
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn parses_a_minimal_sweep() {
        let text = "\
# comment
mdp.d = 4
collect.n = 100, 400
solver.algorithms = cr_pevi pevi
sweep.replicas = 3
";
        let cfg = SweepConfig::parse(text).unwrap();
        assert_eq!(cfg.ns, vec![100, 400]);
        assert_eq!(cfg.replicas, 3);
        assert_eq!(cfg.algorithms, vec!["cr_pevi", "pevi"]);
    }

    #[test]
    fn unknown_key_is_named_with_its_line() {
        let err = SweepConfig::parse("mdp.d = 4\nmdp.dd = 5\n").unwrap_err();
        assert_eq!(err.line, 2);
        assert_eq!(err.key, "mdp.dd");
    }

    #[test]
    fn malformed_value_is_named() {
        let err = SweepConfig::parse("mdp.d = four\n").unwrap_err();
        assert_eq!(err.key, "mdp.d");
        assert_eq!(err.line, 1);
    }

    #[test]
    fn alpha_auto_resolves_to_inverse_sqrt_n() {
        let cfg = SweepConfig::parse("solver.alpha = auto\n").unwrap();
        assert!((cfg.alpha.resolve(400) - 0.05).abs() < 1e-15);
    }
}
