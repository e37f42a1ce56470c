//! Model hyperparameters and the canonical tensor registry.
//!
//! Every consumer of the parameter set (initialization, binding, checkpoints,
//! the optimizer) walks the same `tensor_specs` order, so the registry is the
//! single source of truth for names, shapes, and init rules.

use serde::{Deserialize, Serialize};

use super::{Modality, ModelError};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct GeoDecoderConfig {
    pub n_layers: usize,
    pub d_model: usize,
    pub n_heads: usize,
    pub d_ffn: usize,
    pub vocab_size: usize,
    pub image_size: usize,
    pub patch_size: usize,
    pub max_text_in: usize,
    pub max_text_out: usize,
    pub dropout: f64,
    pub temperature: f64,
}

/// Desk scale: small enough to train on a CPU in minutes.
impl Default for GeoDecoderConfig {
    fn default() -> Self {
        GeoDecoderConfig {
            n_layers: 2,
            d_model: 64,
            n_heads: 4,
            d_ffn: 256,
            vocab_size: 512,
            image_size: 96,
            patch_size: 16,
            max_text_in: 160,
            max_text_out: 64,
            dropout: 0.1,
            temperature: 1.0,
        }
    }
}

impl GeoDecoderConfig {
    /// The published 297M-parameter configuration (never instantiated here;
    /// used for parameter accounting).
    pub fn full_scale() -> Self {
        GeoDecoderConfig {
            n_layers: 12,
            d_model: 768,
            n_heads: 16,
            d_ffn: 3072,
            vocab_size: 82088,
            image_size: 224,
            patch_size: 16,
            max_text_in: 40,
            max_text_out: 20,
            dropout: 0.1,
            temperature: 1.0,
        }
    }

    pub fn validate(&self) -> Result<(), ModelError> {
        let bad = |msg: String| Err(ModelError::BadConfig(msg));
        if self.n_layers == 0 || self.d_model == 0 || self.n_heads == 0 || self.d_ffn == 0 {
            return bad("layers, d_model, heads, and ffn must be positive".into());
        }
        if self.d_model % self.n_heads != 0 {
            return bad(format!("d_model {} not divisible by {} heads", self.d_model, self.n_heads));
        }
        if self.patch_size == 0 || self.image_size % self.patch_size != 0 {
            return bad(format!(
                "image size {} not divisible by patch size {}",
                self.image_size, self.patch_size
            ));
        }
        if self.vocab_size < 5 {
            return bad(format!("vocab size {} leaves no room past the specials", self.vocab_size));
        }
        if self.max_text_in == 0 || self.max_text_out == 0 {
            return bad("text budgets must be positive".into());
        }
        if !(0.0..1.0).contains(&self.dropout) {
            return bad(format!("dropout {} outside [0, 1)", self.dropout));
        }
        if !(self.temperature > 0.0) || !self.temperature.is_finite() {
            return bad(format!("temperature {} not positive", self.temperature));
        }
        Ok(())
    }

    /// Patch tokens per image: (image_size / patch_size)².
    pub fn n_img_tokens(&self) -> usize {
        let side = self.image_size / self.patch_size;
        side * side
    }

    /// Flattened patch length: 3 channels per pixel.
    pub fn patch_dim(&self) -> usize {
        3 * self.patch_size * self.patch_size
    }

    /// Text position table length (input and output budgets, contiguous).
    pub fn n_text_positions(&self) -> usize {
        self.max_text_in + self.max_text_out
    }

    pub fn head_dim(&self) -> usize {
        self.d_model / self.n_heads
    }

    /// Closed-form scalar count over the whole registry.
    pub fn count_params(&self) -> usize {
        let (v, d, f) = (self.vocab_size, self.d_model, self.d_ffn);
        let token_embedding = v * d;
        let patch_proj = self.patch_dim() * d + d;
        let positions = (self.n_img_tokens() + self.n_text_positions()) * d;
        let attn = 4 * (d * d + d);
        let norms = 4 * d;
        let ffn = d * f + f + f * d + d;
        let experts = self.n_layers * 2 * (attn + norms + ffn);
        let final_ln = 2 * d;
        let head = d * v + v;
        token_embedding + patch_proj + positions + experts + final_ln + head
    }

    /// Tensor registry in canonical order. Checkpoints, initialization, and
    /// tape binding all follow this order exactly.
    pub fn tensor_specs(&self) -> Vec<TensorSpec> {
        let (v, d, f) = (self.vocab_size, self.d_model, self.d_ffn);
        let mut specs = vec![
            TensorSpec::new("token_embedding", vec![v, d], Init::TruncNormal),
            TensorSpec::new("patch_proj.weight", vec![self.patch_dim(), d], Init::TruncNormal),
            TensorSpec::new("patch_proj.bias", vec![d], Init::Zeros),
            TensorSpec::new("pos.image", vec![self.n_img_tokens(), d], Init::TruncNormal),
            TensorSpec::new("pos.text", vec![self.n_text_positions(), d], Init::TruncNormal),
        ];
        for layer in 0..self.n_layers {
            for m in Modality::ALL {
                let base = format!("layers.{layer}.{}", m.short());
                let mut t = |suffix: &str, shape: Vec<usize>, init: Init| {
                    specs.push(TensorSpec { name: format!("{base}.{suffix}"), shape, init });
                };
                t("ln1.gamma", vec![d], Init::Ones);
                t("ln1.beta", vec![d], Init::Zeros);
                t("attn.wq", vec![d, d], Init::TruncNormal);
                t("attn.bq", vec![d], Init::Zeros);
                t("attn.wk", vec![d, d], Init::TruncNormal);
                t("attn.bk", vec![d], Init::Zeros);
                t("attn.wv", vec![d, d], Init::TruncNormal);
                t("attn.bv", vec![d], Init::Zeros);
                t("attn.wo", vec![d, d], Init::TruncNormal);
                t("attn.bo", vec![d], Init::Zeros);
                t("ln2.gamma", vec![d], Init::Ones);
                t("ln2.beta", vec![d], Init::Zeros);
                t("ffn.w1", vec![d, f], Init::TruncNormal);
                t("ffn.b1", vec![f], Init::Zeros);
                t("ffn.w2", vec![f, d], Init::TruncNormal);
                t("ffn.b2", vec![d], Init::Zeros);
            }
        }
        specs.push(TensorSpec::new("final_ln.gamma", vec![d], Init::Ones));
        specs.push(TensorSpec::new("final_ln.beta", vec![d], Init::Zeros));
        specs.push(TensorSpec::new("head.weight", vec![d, v], Init::TruncNormal));
        specs.push(TensorSpec::new("head.bias", vec![v], Init::Zeros));
        specs
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Init {
    TruncNormal,
    Zeros,
    Ones,
}

#[derive(Debug, Clone, PartialEq)]
pub struct TensorSpec {
    pub name: String,
    pub shape: Vec<usize>,
    pub init: Init,
}

impl TensorSpec {
    fn new(name: &str, shape: Vec<usize>, init: Init) -> Self {
        TensorSpec { name: name.to_string(), shape, init }
    }

    pub fn len(&self) -> usize {
        self.shape.iter().product()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }
}

/// Index arithmetic into the registry order; forward-pass accessors use these
/// rather than name lookups.
pub(super) const GLOBAL_PREFIX_TENSORS: usize = 5;
pub(super) const TENSORS_PER_EXPERT: usize = 16;
pub(super) const GLOBAL_SUFFIX_TENSORS: usize = 4;

pub(super) fn expert_base(layer: usize, m: Modality) -> usize {
    GLOBAL_PREFIX_TENSORS + (layer * 2 + m.index()) * TENSORS_PER_EXPERT
}

pub(super) fn n_tensors(n_layers: usize) -> usize {
    GLOBAL_PREFIX_TENSORS + n_layers * 2 * TENSORS_PER_EXPERT + GLOBAL_SUFFIX_TENSORS
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn desk_parameter_count_is_pinned() {
        assert_eq!(GeoDecoderConfig::default().count_params(), 331_968);
    }

    #[test]
    fn full_scale_parameter_count_matches_published_total() {
        let n = GeoDecoderConfig::full_scale().count_params();
        assert_eq!(n, 297_066_920);
        let published = 297_000_000.0;
        assert!((n as f64 - published).abs() <= 0.01 * published);
    }

    #[test]
    fn registry_shapes_sum_to_the_closed_form() {
        for cfg in [GeoDecoderConfig::default(), GeoDecoderConfig::full_scale()] {
            let total: usize = cfg.tensor_specs().iter().map(TensorSpec::len).sum();
            assert_eq!(total, cfg.count_params());
        }
    }

    #[test]
    fn doubling_vocab_grows_count_by_embedding_plus_head() {
        let base = GeoDecoderConfig::default();
        let mut doubled = base.clone();
        doubled.vocab_size *= 2;
        let dv = doubled.vocab_size - base.vocab_size;
        let expected = 2 * (dv * base.d_model) + dv;
        assert_eq!(doubled.count_params() - base.count_params(), expected);
    }

    #[test]
    fn registry_index_arithmetic_matches_names() {
        let cfg = GeoDecoderConfig::default();
        let specs = cfg.tensor_specs();
        assert_eq!(specs.len(), n_tensors(cfg.n_layers));
        assert_eq!(specs.len(), 73);
        assert_eq!(specs[expert_base(1, Modality::Text) + 2].name, "layers.1.tx.attn.wq");
        assert_eq!(specs[expert_base(0, Modality::Image) + 12].name, "layers.0.im.ffn.w1");
        assert_eq!(specs[specs.len() - GLOBAL_SUFFIX_TENSORS].name, "final_ln.gamma");
        assert_eq!(specs.last().unwrap().name, "head.bias");
    }

    #[test]
    fn patch_grid_sizes() {
        assert_eq!(GeoDecoderConfig::default().n_img_tokens(), 36);
        assert_eq!(GeoDecoderConfig::full_scale().n_img_tokens(), 196);
    }

    #[test]
    fn validation_rejects_bad_shapes() {
        let mut c = GeoDecoderConfig::default();
        c.n_heads = 5;
        assert!(c.validate().is_err());
        let mut c = GeoDecoderConfig::default();
        c.image_size = 100;
        assert!(c.validate().is_err());
        let mut c = GeoDecoderConfig::default();
        c.dropout = 1.0;
        assert!(c.validate().is_err());
        assert!(GeoDecoderConfig::default().validate().is_ok());
        assert!(GeoDecoderConfig::full_scale().validate().is_ok());
    }

    #[test]
    fn config_serializes_with_defaults_for_missing_fields() {
        let c: GeoDecoderConfig = serde_json::from_str(r#"{"n_layers": 3}"#).unwrap();
        assert_eq!(c.n_layers, 3);
        assert_eq!(c.d_model, 64);
        let s = serde_json::to_string(&c).unwrap();
        let back: GeoDecoderConfig = serde_json::from_str(&s).unwrap();
        assert_eq!(back, c);
    }
}
