use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::ModelError;

/// Router nonlinearity applied to the expert logits.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum RouterKind {
    /// Keep the `k` largest logits and renormalise their softmax.
    TopK { k: usize, temperature: f64 },
    /// Softmax over every expert.
    FullySoft { temperature: f64 },
}

impl RouterKind {
    pub fn top_k(k: usize) -> Self {
        RouterKind::TopK { k, temperature: 1.0 }
    }

    pub fn soft() -> Self {
        RouterKind::FullySoft { temperature: 1.0 }
    }

    pub fn temperature(&self) -> f64 {
        match *self {
            RouterKind::TopK { temperature, .. } | RouterKind::FullySoft { temperature } => temperature,
        }
    }

    pub fn validate(&self, n_experts: usize) -> Result<(), ModelError> {
        let t = self.temperature();
        if !(t.is_finite() && t > 0.0) {
            return Err(ModelError::Config(format!(
                "router temperature must be positive, got {t}"
            )));
        }
        if let RouterKind::TopK { k, .. } = *self {
            if k == 0 || k > n_experts {
                return Err(ModelError::Config(format!(
                    "top-k needs 1 <= k <= {n_experts}, got {k}"
                )));
            }
        }
        Ok(())
    }
}

impl fmt::Display for RouterKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            RouterKind::TopK { k, .. } => write!(f, "topk:{k}"),
            RouterKind::FullySoft { .. } => write!(f, "soft"),
        }
    }
}

impl FromStr for RouterKind {
    type Err = String;

    /// `soft` or `topk:K`, temperature 1.
    fn from_str(s: &str) -> Result<Self, String> {
        if s == "soft" {
            return Ok(RouterKind::soft());
        }
        match s.strip_prefix("topk:") {
            Some(k) => k
                .parse::<usize>()
                .map(RouterKind::top_k)
                .map_err(|_| format!("bad k in router '{s}'")),
            None => Err(format!("router must be 'soft' or 'topk:K', got '{s}'")),
        }
    }
}

/// Architecture and optimisation settings. Missing JSON fields take the defaults.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ModelConfig {
    pub n_layers: usize,
    pub n_experts: usize,
    pub d_model: usize,
    pub d_hidden: usize,
    pub block_size: usize,
    pub batch_size: usize,
    pub n_heads: usize,
    pub vocab_size: usize,
    pub router: RouterKind,
    pub seed: u64,
    pub learning_rate: f64,
    pub adam_beta1: f64,
    pub adam_beta2: f64,
    pub adam_eps: f64,
    pub init_std: f64,
    pub ln_eps: f64,
}

impl Default for ModelConfig {
    fn default() -> Self {
        Self {
            n_layers: 3,
            n_experts: 8,
            d_model: 128,
            d_hidden: 256,
            block_size: 64,
            batch_size: 32,
            n_heads: 4,
            vocab_size: 256,
            router: RouterKind::top_k(2),
            seed: 0,
            learning_rate: 3e-4,
            adam_beta1: 0.9,
            adam_beta2: 0.999,
            adam_eps: 1e-8,
            init_std: 0.02,
            ln_eps: 1e-5,
        }
    }
}

impl ModelConfig {
    pub fn validate(&self) -> Result<(), ModelError> {
        let positive = [
            ("n_layers", self.n_layers),
            ("n_experts", self.n_experts),
            ("d_model", self.d_model),
            ("d_hidden", self.d_hidden),
            ("block_size", self.block_size),
            ("batch_size", self.batch_size),
            ("n_heads", self.n_heads),
            ("vocab_size", self.vocab_size),
        ];
        if let Some((name, _)) = positive.iter().find(|(_, v)| *v == 0) {
            return Err(ModelError::Config(format!("{name} must be positive")));
        }
        if !self.d_model.is_multiple_of(self.n_heads) {
            return Err(ModelError::Config(format!(
                "d_model {} not divisible by n_heads {}",
                self.d_model, self.n_heads
            )));
        }
        if !(self.learning_rate > 0.0 && self.init_std > 0.0 && self.ln_eps > 0.0) {
            return Err(ModelError::Config(
                "learning rate, init std and norm epsilon must be positive".into(),
            ));
        }
        self.router.validate(self.n_experts)
    }

    pub fn head_dim(&self) -> usize {
        self.d_model / self.n_heads
    }

    /// Std of residual-output projections (attention output, expert second layer).
    pub fn residual_std(&self) -> f64 {
        self.init_std / (2.0 * self.n_layers as f64).sqrt()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn defaults_match_controlled_setup() {
        let c = ModelConfig::default();
        assert_eq!(
            (
                c.n_layers,
                c.n_experts,
                c.d_model,
                c.d_hidden,
                c.block_size,
                c.batch_size
            ),
            (3, 8, 128, 256, 64, 32)
        );
        assert_eq!(c.learning_rate, 3e-4);
        assert_eq!(c.router, RouterKind::TopK { k: 2, temperature: 1.0 });
        c.validate().unwrap();
    }

    #[test]
    fn partial_json_fills_defaults() {
        let c: ModelConfig =
            serde_json::from_str(r#"{"d_model": 16, "router": {"kind": "fully_soft", "temperature": 1.0}}"#).unwrap();
        assert_eq!(c.d_model, 16);
        assert_eq!(c.n_experts, 8);
        assert_eq!(c.router, RouterKind::soft());
    }

    #[test]
    fn router_spec_parsing() {
        assert_eq!("soft".parse::<RouterKind>().unwrap(), RouterKind::soft());
        assert_eq!("topk:2".parse::<RouterKind>().unwrap(), RouterKind::top_k(2));
        assert!("topk:x".parse::<RouterKind>().is_err());
        assert!("dense".parse::<RouterKind>().is_err());
        assert_eq!(RouterKind::top_k(3).to_string(), "topk:3");
    }

    #[test]
    fn invalid_configs() {
        let mut c = ModelConfig {
            n_heads: 3,
            ..Default::default()
        };
        assert!(c.validate().is_err());
        c.n_heads = 4;
        c.router = RouterKind::top_k(9);
        assert!(c.validate().is_err());
        c.router = RouterKind::FullySoft { temperature: 0.0 };
        assert!(c.validate().is_err());
    }
}
