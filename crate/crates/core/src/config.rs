//! Model and training configuration.

use serde::{Deserialize, Serialize};

use crate::error::{MadsError, Result};

/// Where scale/shift adaptation is applied in the frozen backbone.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SsfMode {
    /// After every block output, feeding the next block.
    PerBlock,
    /// Only on the final block output. Not faithful to per-block adaptation;
    /// for backbones that expose last-layer features only.
    FinalOnly,
}

/// Pooling over image patches before the local scorer.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PoolMode {
    Mean,
    Max,
}

/// Form of the per-word focus term.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FocusForm {
    /// Negated binary cross-entropy between max attention scores and the visual mask.
    Bce,
    /// `Σ_j log s_j` for every word regardless of the mask, without negation.
    /// Kept for auditing only.
    Literal,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ModelConfig {
    /// Width of the frozen word vectors.
    pub word_dim: usize,
    /// Semantic embedding width `r`.
    pub dim: usize,
    /// Attention projection width `r_h`.
    pub head_dim: usize,
    pub num_views: usize,
    /// Perceiver queries per view `K`.
    pub num_queries: usize,
    pub text_layers: usize,
    pub text_heads: usize,
    pub perceiver_layers: usize,
    pub mlp_ratio: usize,
    /// Longest sequence, including the [CLS] position.
    pub max_len: usize,
    /// One [CLS] token and one query set shared by all views.
    pub shared_view_tokens: bool,
    pub aggregator_prenorm: bool,
    /// Fusion ratio between the mean view core feature and the aggregated feature.
    pub beta: f64,
    pub backbone_width: usize,
    pub backbone_blocks: usize,
    pub num_patches: usize,
    pub ssf_mode: SsfMode,
    pub pool: PoolMode,
    pub focus_form: FocusForm,
    /// Divide each view's focus sum by its word count.
    pub focus_normalize_by_length: bool,
}

impl Default for ModelConfig {
    fn default() -> Self {
        Self {
            word_dim: 300,
            dim: 256,
            head_dim: 256,
            num_views: 5,
            num_queries: 4,
            text_layers: 2,
            text_heads: 4,
            perceiver_layers: 2,
            mlp_ratio: 4,
            max_len: 512,
            shared_view_tokens: false,
            aggregator_prenorm: false,
            beta: 0.5,
            backbone_width: 768,
            backbone_blocks: 12,
            num_patches: 196,
            ssf_mode: SsfMode::PerBlock,
            pool: PoolMode::Mean,
            focus_form: FocusForm::Bce,
            focus_normalize_by_length: false,
        }
    }
}

impl ModelConfig {
    pub fn validate(&self) -> Result<()> {
        let positive = [
            ("word_dim", self.word_dim),
            ("dim", self.dim),
            ("head_dim", self.head_dim),
            ("num_views", self.num_views),
            ("num_queries", self.num_queries),
            ("text_heads", self.text_heads),
            ("perceiver_layers", self.perceiver_layers),
            ("mlp_ratio", self.mlp_ratio),
            ("max_len", self.max_len),
            ("backbone_width", self.backbone_width),
            ("backbone_blocks", self.backbone_blocks),
            ("num_patches", self.num_patches),
        ];
        if let Some((name, _)) = positive.iter().find(|(_, v)| *v == 0) {
            return Err(MadsError::Config(format!("{name} must be positive")));
        }
        if self.dim % self.text_heads != 0 {
            return Err(MadsError::Config(format!(
                "dim {} is not divisible by text_heads {}",
                self.dim, self.text_heads
            )));
        }
        if self.max_len < 2 {
            return Err(MadsError::Config("max_len must leave room for [CLS] and one word".into()));
        }
        if !(0.0..=1.0).contains(&self.beta) {
            return Err(MadsError::Config(format!("beta {} outside [0, 1]", self.beta)));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct LossWeights {
    pub local: f64,
    pub focus: f64,
}

impl Default for LossWeights {
    fn default() -> Self {
        Self { local: 0.2, focus: 0.5 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TrainConfig {
    pub learning_rate: f64,
    pub weight_decay: f64,
    pub adam_beta1: f64,
    pub adam_beta2: f64,
    pub adam_eps: f64,
    pub warmup_epochs: usize,
    pub batch_size: usize,
    pub epochs: usize,
    pub dropout: f64,
    pub loss_weights: LossWeights,
    pub seed: u64,
    /// Evaluate unseen T1 after every epoch for the metrics log.
    pub eval_each_epoch: bool,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            learning_rate: 1.5e-4,
            weight_decay: 0.05,
            adam_beta1: 0.9,
            adam_beta2: 0.999,
            adam_eps: 1e-8,
            warmup_epochs: 0,
            batch_size: 64,
            epochs: 40,
            dropout: 0.25,
            loss_weights: LossWeights::default(),
            seed: 0,
            eval_each_epoch: true,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if self.batch_size == 0 {
            return Err(MadsError::Config("batch_size must be positive".into()));
        }
        if !(0.0..1.0).contains(&self.dropout) {
            return Err(MadsError::Config(format!("dropout {} outside [0, 1)", self.dropout)));
        }
        if self.learning_rate < 0.0 || !self.learning_rate.is_finite() {
            return Err(MadsError::Config("learning_rate must be finite and non-negative".into()));
        }
        if self.loss_weights.local < 0.0 || self.loss_weights.focus < 0.0 {
            return Err(MadsError::Config("loss weights must be non-negative".into()));
        }
        Ok(())
    }
}
