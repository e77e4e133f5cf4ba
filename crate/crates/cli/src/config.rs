//! Run configuration, read from a flat TOML file.
//!
//! Every numeric field is mandatory. In particular there is no default for
//! the perturbation size, the maturity or the master seed.

use std::path::Path;

use aew_core::{build_local_vol, build_sabr, LocalVolCev, LogNormalSabr, ModelSpec, PayoffSpec, UnderlyingMap};
use serde::{Deserialize, Serialize};

use crate::CliError;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Config {
    pub model: ModelConfig,
    pub payoff: PayoffConfig,
    pub method: MethodConfig,
    pub mc: McConfig,
    pub grid: GridConfig,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case", deny_unknown_fields)]
pub enum ModelConfig {
    LocalVol { s0: f64, beta: f64, epsilon: f64 },
    Sabr { z: f64, sigma0: f64, nu: f64, rho: f64 },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum PayoffChoice {
    Call,
    Put,
    /// Put below the initial spot, call at or above it.
    Otm,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PayoffConfig {
    pub kind: PayoffChoice,
    pub strikes: Vec<f64>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum MethodMode {
    /// Local volatility: backward induction on a spatial grid.
    Grid,
    /// Local volatility: one-step quadrature, `n = 1` only.
    Quadrature,
    /// Local volatility: nested Monte Carlo, `n ≤ 3`.
    NestedMc,
    /// SABR: marginal quadrature at `n = 1`, the two-step chain at `n = 2`.
    Sabr,
    /// SABR: one step sampling the joint proxy, `n = 1` only.
    SabrTwoDimMc,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MethodConfig {
    pub mode: MethodMode,
    pub orders: Vec<u8>,
    pub spatial_nodes: usize,
    pub quad_nodes: usize,
    /// Draws per level, outermost first; needed by `nested-mc`.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub nested_paths: Option<Vec<u64>>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum BenchmarkKind {
    /// Plain Euler–Maruyama.
    Em,
    /// Euler–Maruyama with a control variate (local volatility only).
    EmCv,
    /// Crank–Nicolson reference (local volatility only).
    Pde,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct McConfig {
    pub seed: u64,
    pub benchmark: BenchmarkKind,
    /// Benchmark paths.
    pub paths: u64,
    /// Benchmark time steps.
    pub steps: usize,
    /// Paths for the sampled weak schemes.
    pub chain_paths: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GridConfig {
    pub maturity: f64,
    pub gamma: f64,
    pub steps: Vec<usize>,
}

fn bad(field: &str, reason: impl std::fmt::Display) -> CliError {
    CliError::Config(format!("{field}: {reason}"))
}

impl Config {
    pub fn from_path(path: &Path) -> Result<Self, CliError> {
        let text = std::fs::read_to_string(path).map_err(|e| bad(&path.display().to_string(), e))?;
        Self::from_toml(&text)
    }

    pub fn from_toml(text: &str) -> Result<Self, CliError> {
        let cfg: Config = toml::from_str(text).map_err(|e| CliError::Config(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("configuration serializes")
    }

    pub fn model_spec(&self) -> Result<ModelSpec, CliError> {
        match self.model {
            ModelConfig::LocalVol { s0, beta, epsilon } => build_local_vol(s0, beta, epsilon)
                .map(ModelSpec::LocalVol)
                .map_err(|e| bad("model", e)),
            ModelConfig::Sabr { z, sigma0, nu, rho } => {
                build_sabr(z, sigma0, nu, rho).map(ModelSpec::Sabr).map_err(|e| bad("model", e))
            }
        }
    }

    pub fn model_tag(&self) -> &'static str {
        match self.model {
            ModelConfig::LocalVol { .. } => "local-vol",
            ModelConfig::Sabr { .. } => "sabr",
        }
    }

    /// Spot level the strikes refer to.
    pub fn spot(&self) -> f64 {
        match self.model {
            ModelConfig::LocalVol { s0, .. } => s0,
            ModelConfig::Sabr { z, .. } => z,
        }
    }

    /// Payoff at `strike`, mapped to the model's first coordinate.
    pub fn payoff(&self, strike: f64) -> PayoffSpec {
        let p = match self.payoff.kind {
            PayoffChoice::Call => PayoffSpec::call(strike),
            PayoffChoice::Put => PayoffSpec::put(strike),
            PayoffChoice::Otm if strike < self.spot() => PayoffSpec::put(strike),
            PayoffChoice::Otm => PayoffSpec::call(strike),
        };
        match self.model {
            ModelConfig::LocalVol { .. } => p,
            ModelConfig::Sabr { .. } => p.with_map(UnderlyingMap::ExpOfFirstCoordinate),
        }
    }

    pub fn payoffs(&self) -> Vec<PayoffSpec> {
        self.payoff.strikes.iter().map(|k| self.payoff(*k)).collect()
    }

    pub fn local_vol(&self) -> Option<LocalVolCev> {
        match self.model_spec() {
            Ok(ModelSpec::LocalVol(m)) => Some(m),
            _ => None,
        }
    }

    pub fn sabr(&self) -> Option<LogNormalSabr> {
        match self.model_spec() {
            Ok(ModelSpec::Sabr(m)) => Some(m),
            _ => None,
        }
    }

    fn validate(&self) -> Result<(), CliError> {
        let model = self.model_spec()?;
        if self.payoff.strikes.is_empty() {
            return Err(bad("payoff.strikes", "must not be empty"));
        }
        if let Some(k) = self.payoff.strikes.iter().find(|k| !(**k > 0.0 && k.is_finite())) {
            return Err(bad("payoff.strikes", format!("strikes must be positive, got {k}")));
        }
        if !(self.grid.maturity > 0.0 && self.grid.maturity.is_finite()) {
            return Err(bad("grid.maturity", format!("must be positive, got {}", self.grid.maturity)));
        }
        if !(self.grid.gamma > 0.0 && self.grid.gamma.is_finite()) {
            return Err(bad("grid.gamma", format!("must be positive, got {}", self.grid.gamma)));
        }
        if self.grid.steps.is_empty() || self.grid.steps.contains(&0) {
            return Err(bad("grid.steps", "need a nonempty list of positive step counts"));
        }
        if self.method.orders.is_empty() {
            return Err(bad("method.orders", "must not be empty"));
        }
        if self.mc.paths < 1000 {
            return Err(bad("mc.paths", format!("need at least 1000, got {}", self.mc.paths)));
        }
        if self.mc.steps == 0 {
            return Err(bad("mc.steps", "must be positive"));
        }
        let max_n = *self.grid.steps.iter().max().unwrap();
        let max_m = *self.method.orders.iter().max().unwrap();
        match (model, self.method.mode) {
            (ModelSpec::LocalVol(_), MethodMode::Grid | MethodMode::Quadrature | MethodMode::NestedMc) => {
                if max_m > 2 {
                    return Err(bad("method.orders", "local volatility supports m ≤ 2"));
                }
                if self.method.spatial_nodes < aew_core::chain::MIN_SPATIAL_NODES {
                    return Err(bad("method.spatial_nodes", "need at least 101 nodes"));
                }
                if self.method.quad_nodes < 16 {
                    return Err(bad("method.quad_nodes", "need at least 16 nodes"));
                }
                if self.method.mode == MethodMode::Quadrature && max_n > 1 {
                    return Err(bad("grid.steps", "quadrature mode prices one step only"));
                }
                if self.method.mode == MethodMode::NestedMc {
                    let levels = self.method.nested_paths.as_ref().map_or(0, Vec::len);
                    if max_n > aew_core::chain::MAX_NESTED_LEVELS {
                        return Err(bad("grid.steps", "nested-mc supports n ≤ 3; use grid mode"));
                    }
                    if levels < max_n {
                        return Err(bad("method.nested_paths", format!("need {max_n} levels, got {levels}")));
                    }
                }
            }
            (ModelSpec::Sabr(_), MethodMode::Sabr | MethodMode::SabrTwoDimMc) => {
                if max_m > 1 {
                    return Err(bad("method.orders", "SABR supports m ≤ 1"));
                }
                let limit = if self.method.mode == MethodMode::Sabr { 2 } else { 1 };
                if max_n > limit {
                    return Err(bad("grid.steps", format!("this SABR mode supports n ≤ {limit}")));
                }
                if self.grid.steps.contains(&2) && self.method.orders.contains(&0) {
                    return Err(bad("method.orders", "the SABR two-step chain is first order"));
                }
                if self.mc.chain_paths < 10_000 && (self.grid.steps.contains(&2) || self.method.mode == MethodMode::SabrTwoDimMc) {
                    return Err(bad("mc.chain_paths", "need at least 10^4 sampled paths"));
                }
                if self.mc.benchmark != BenchmarkKind::Em {
                    return Err(bad("mc.benchmark", "SABR benchmarks use plain Euler–Maruyama (em)"));
                }
            }
            (_, mode) => {
                return Err(bad("method.mode", format!("{mode:?} does not apply to model {}", self.model_tag())));
            }
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    pub(crate) const LOCAL_VOL: &str = r#"
[model]
kind = "local-vol"
s0 = 100.0
beta = 0.5
epsilon = 0.4

[payoff]
kind = "otm"
strikes = [80.0, 100.0, 120.0]

[method]
mode = "grid"
orders = [1, 2]
spatial_nodes = 201
quad_nodes = 64

[mc]
seed = 7
benchmark = "pde"
paths = 1000
steps = 10
chain_paths = 10000

[grid]
maturity = 1.0
gamma = 1.0
steps = [1, 2]
"#;

    #[test]
    fn parses_and_round_trips() {
        let cfg = Config::from_toml(LOCAL_VOL).unwrap();
        assert_eq!(cfg.model_tag(), "local-vol");
        assert_eq!(cfg.payoff(80.0).kind, aew_core::PayoffKind::Put);
        assert_eq!(cfg.payoff(100.0).kind, aew_core::PayoffKind::Call);
        assert_eq!(Config::from_toml(&cfg.to_toml()).unwrap(), cfg);
    }

    #[test]
    fn rejects_unknown_model_and_missing_fields() {
        let unknown = LOCAL_VOL.replace("kind = \"local-vol\"", "kind = \"heston\"");
        assert!(matches!(Config::from_toml(&unknown), Err(CliError::Config(_))));
        let no_eps = LOCAL_VOL.replace("epsilon = 0.4\n", "");
        let err = Config::from_toml(&no_eps).unwrap_err().to_string();
        assert!(err.contains("epsilon"), "{err}");
        let no_seed = LOCAL_VOL.replace("seed = 7\n", "");
        assert!(Config::from_toml(&no_seed).unwrap_err().to_string().contains("seed"));
        let no_t = LOCAL_VOL.replace("maturity = 1.0\n", "");
        assert!(Config::from_toml(&no_t).unwrap_err().to_string().contains("maturity"));
    }

    #[test]
    fn field_level_validation() {
        let bad_beta = LOCAL_VOL.replace("beta = 0.5", "beta = 1.5");
        assert!(Config::from_toml(&bad_beta).unwrap_err().to_string().contains("beta"));
        let sabr_mode = LOCAL_VOL.replace("mode = \"grid\"", "mode = \"sabr\"");
        assert!(Config::from_toml(&sabr_mode).unwrap_err().to_string().contains("method.mode"));
        let nested = LOCAL_VOL.replace("mode = \"grid\"", "mode = \"nested-mc\"");
        assert!(Config::from_toml(&nested).unwrap_err().to_string().contains("nested_paths"));
        let zero_step = LOCAL_VOL.replace("steps = [1, 2]", "steps = [0]");
        assert!(Config::from_toml(&zero_step).unwrap_err().to_string().contains("grid.steps"));
    }
}
