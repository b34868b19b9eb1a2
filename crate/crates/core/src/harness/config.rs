use std::fmt;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::losses::{
    FisherVariant, MiningStrategy, DEFAULT_GAMMA_EWC, DEFAULT_GAMMA_LWF, DEFAULT_GAMMA_MAS, DEFAULT_MARGIN,
};
use crate::nn::OptimizerKind;
use crate::sdc::KernelConfig;

/// Learning strategy for a task sequence.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum Method {
    /// Multi-head softmax classifier fine-tuned on each task.
    #[serde(rename = "FT")]
    Ft,
    /// Same training as `FT`, classified by nearest class mean on trunk
    /// features.
    #[serde(rename = "FT*")]
    FtStar,
    /// Embedding network fine-tuned with the triplet loss.
    #[serde(rename = "E-FT")]
    EFt,
    /// E-FT plus alignment of the new embedding with the previous one.
    #[serde(rename = "E-LwF")]
    ELwf,
    /// E-FT plus a Fisher-weighted quadratic penalty.
    #[serde(rename = "E-EWC")]
    EEwc,
    /// E-FT plus an output-sensitivity-weighted quadratic penalty.
    #[serde(rename = "E-MAS")]
    EMas,
    /// Embedding trained on the first task, then frozen.
    #[serde(rename = "E-Fix")]
    EFix,
    /// Embedding trained on held-out classes before the sequence, then frozen.
    #[serde(rename = "E-Pre-substitute")]
    EPreSubstitute,
    /// Embedding trained once on the union of every task.
    #[serde(rename = "Joint")]
    Joint,
}

impl Method {
    pub const ALL: [Method; 9] = [
        Method::Ft,
        Method::FtStar,
        Method::EFt,
        Method::ELwf,
        Method::EEwc,
        Method::EMas,
        Method::EFix,
        Method::EPreSubstitute,
        Method::Joint,
    ];

    pub fn label(self) -> &'static str {
        match self {
            Method::Ft => "FT",
            Method::FtStar => "FT*",
            Method::EFt => "E-FT",
            Method::ELwf => "E-LwF",
            Method::EEwc => "E-EWC",
            Method::EMas => "E-MAS",
            Method::EFix => "E-Fix",
            Method::EPreSubstitute => "E-Pre-substitute",
            Method::Joint => "Joint",
        }
    }

    pub fn from_label(label: &str) -> Option<Method> {
        Method::ALL.into_iter().find(|m| m.label() == label)
    }

    /// Trains a softmax classifier rather than an embedding network.
    pub fn is_softmax(self) -> bool {
        matches!(self, Method::Ft | Method::FtStar)
    }

    /// Whether drift compensation can be switched on.
    pub fn supports_sdc(self) -> bool {
        !matches!(self, Method::Ft | Method::FtStar | Method::Joint)
    }

    /// Default weight of the regularizer, if the method has one.
    pub fn default_gamma(self) -> Option<f64> {
        match self {
            Method::ELwf => Some(DEFAULT_GAMMA_LWF),
            Method::EEwc => Some(DEFAULT_GAMMA_EWC),
            Method::EMas => Some(DEFAULT_GAMMA_MAS),
            _ => None,
        }
    }
}

impl fmt::Display for Method {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.label())
    }
}

/// How importance maps from successive tasks are combined.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ImportanceAccumulation {
    /// Running mean over all tasks seen so far.
    #[default]
    RunningMean,
    /// Only the most recent task's estimate.
    Recompute,
}

/// Every knob of one method run.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct MethodConfig {
    pub method: Method,
    pub sdc: bool,
    /// Regularizer weight; `None` uses the method default.
    pub gamma: Option<f64>,
    pub sigma: f64,
    pub weight_floor: f64,
    pub margin: f64,
    pub lr: f64,
    pub epochs: usize,
    /// Epochs on held-out classes for `E-Pre-substitute`; `None` uses `epochs`.
    pub pretrain_epochs: Option<usize>,
    pub batch_size: usize,
    pub seed: u64,
    pub optimizer: OptimizerKind,
    pub mining: MiningStrategy,
    pub fisher_variant: FisherVariant,
    pub importance_accumulation: ImportanceAccumulation,
    pub renormalize_prototypes: bool,
}

impl Default for MethodConfig {
    fn default() -> Self {
        Self {
            method: Method::EFt,
            sdc: false,
            gamma: None,
            sigma: 0.3,
            weight_floor: 1e-12,
            margin: DEFAULT_MARGIN,
            lr: 1e-4,
            epochs: 50,
            pretrain_epochs: None,
            batch_size: 32,
            seed: 0,
            optimizer: OptimizerKind::Adam,
            mining: MiningStrategy::Semihard,
            fisher_variant: FisherVariant::TripletLoss,
            importance_accumulation: ImportanceAccumulation::RunningMean,
            renormalize_prototypes: false,
        }
    }
}

impl MethodConfig {
    pub fn new(method: Method) -> Self {
        Self {
            method,
            ..Self::default()
        }
    }

    /// Directory-safe run name, e.g. `E-FT+SDC`.
    pub fn label(&self) -> String {
        if self.sdc {
            format!("{}+SDC", self.method.label())
        } else {
            self.method.label().to_string()
        }
    }

    /// Weight applied to the regularizer (zero for methods without one).
    pub fn effective_gamma(&self) -> f64 {
        match self.method.default_gamma() {
            Some(default) => self.gamma.unwrap_or(default),
            None => 0.0,
        }
    }

    pub fn kernel(&self) -> KernelConfig {
        KernelConfig {
            sigma: self.sigma,
            weight_floor: self.weight_floor,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.sdc && !self.method.supports_sdc() {
            return Err(Error::config("sdc", format!("drift compensation does not apply to {}", self.method)));
        }
        if let Some(g) = self.gamma {
            if !(g >= 0.0 && g.is_finite()) {
                return Err(Error::config("gamma", format!("must be finite and non-negative, got {g}")));
            }
        }
        self.kernel().validate().map_err(|e| Error::config("sigma", e.to_string()))?;
        if !(self.margin >= 0.0 && self.margin.is_finite()) {
            return Err(Error::config("margin", format!("must be non-negative, got {}", self.margin)));
        }
        if !(self.lr > 0.0 && self.lr.is_finite()) {
            return Err(Error::config("lr", format!("must be positive, got {}", self.lr)));
        }
        if self.epochs == 0 {
            return Err(Error::config("epochs", "must be at least 1"));
        }
        if self.batch_size < 2 {
            return Err(Error::config("batch_size", "must be at least 2"));
        }
        Ok(())
    }
}

/// Layer widths of the trained network.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ModelConfig {
    pub hidden: Vec<usize>,
    pub embedding_dim: usize,
}

impl Default for ModelConfig {
    fn default() -> Self {
        Self {
            hidden: vec![256, 256],
            embedding_dim: 64,
        }
    }
}

impl ModelConfig {
    pub fn validate(&self) -> Result<()> {
        if self.embedding_dim == 0 {
            return Err(Error::config("model.embedding_dim", "must be positive"));
        }
        if self.hidden.contains(&0) {
            return Err(Error::config("model.hidden", "layer widths must be positive"));
        }
        Ok(())
    }
}
