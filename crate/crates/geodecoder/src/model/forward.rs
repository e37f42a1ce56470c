//! Graph assembly: embedding, expert blocks, the output head, generation,
//! and the finite-difference oracle for the whole loss.

use std::sync::Arc;

use crate::numerics::{grad_check, GradCheckReport, NumericsError, Scalar, Tape, TensorId};
use crate::render::Raster;
use crate::textcodec::{BOS, EOS, PAD, SEP};

use super::config::{
    expert_base, n_tensors, GeoDecoderConfig, GLOBAL_SUFFIX_TENSORS,
};
use super::mask::build_attention_mask;
use super::params::GeoDecoderParams;
use super::{Modality, ModelError};

/// Flattens a raster into the patch matrix: one row per patch, patches in
/// row-major grid order, pixels row-major within the patch, three channels
/// per pixel, bytes scaled to [0, 1].
pub fn patchify<S: Scalar>(
    raster: &Raster,
    image_size: usize,
    patch_size: usize,
) -> Result<Vec<S>, ModelError> {
    if raster.width() as usize != image_size || raster.height() as usize != image_size {
        return Err(ModelError::BadImageSize {
            got_w: raster.width() as usize,
            got_h: raster.height() as usize,
            want: image_size,
        });
    }
    let side = image_size / patch_size;
    let scale = 1.0 / 255.0;
    let mut out = Vec::with_capacity(side * side * 3 * patch_size * patch_size);
    for py in 0..side {
        for px in 0..side {
            for dy in 0..patch_size {
                for dx in 0..patch_size {
                    let rgb = raster.get((px * patch_size + dx) as u32, (py * patch_size + dy) as u32);
                    for c in rgb {
                        out.push(S::from_f64_c(c as f64 * scale));
                    }
                }
            }
        }
    }
    Ok(out)
}

/// Tensor ids of one bound parameter set, in registry order.
#[derive(Debug, Clone)]
pub struct BoundParams {
    ids: Vec<TensorId>,
    n_layers: usize,
}

/// One expert's slots within a layer.
#[derive(Debug, Clone, Copy)]
struct ExpertIds {
    ln1_gamma: TensorId,
    ln1_beta: TensorId,
    wq: TensorId,
    bq: TensorId,
    wk: TensorId,
    bk: TensorId,
    wv: TensorId,
    bv: TensorId,
    wo: TensorId,
    bo: TensorId,
    ln2_gamma: TensorId,
    ln2_beta: TensorId,
    w1: TensorId,
    b1: TensorId,
    w2: TensorId,
    b2: TensorId,
}

impl BoundParams {
    pub fn from_ids(ids: Vec<TensorId>, config: &GeoDecoderConfig) -> Result<Self, ModelError> {
        let want = n_tensors(config.n_layers);
        if ids.len() != want {
            return Err(ModelError::BindMismatch(ids.len(), want));
        }
        Ok(BoundParams { ids, n_layers: config.n_layers })
    }

    /// Bound tape ids in registry order.
    pub fn ids(&self) -> &[TensorId] {
        &self.ids
    }

    fn token_embedding(&self) -> TensorId {
        self.ids[0]
    }
    fn patch_weight(&self) -> TensorId {
        self.ids[1]
    }
    fn patch_bias(&self) -> TensorId {
        self.ids[2]
    }
    fn pos_image(&self) -> TensorId {
        self.ids[3]
    }
    fn pos_text(&self) -> TensorId {
        self.ids[4]
    }

    fn expert(&self, layer: usize, m: Modality) -> ExpertIds {
        debug_assert!(layer < self.n_layers);
        let b = expert_base(layer, m);
        let id = |k: usize| self.ids[b + k];
        ExpertIds {
            ln1_gamma: id(0),
            ln1_beta: id(1),
            wq: id(2),
            bq: id(3),
            wk: id(4),
            bk: id(5),
            wv: id(6),
            bv: id(7),
            wo: id(8),
            bo: id(9),
            ln2_gamma: id(10),
            ln2_beta: id(11),
            w1: id(12),
            b1: id(13),
            w2: id(14),
            b2: id(15),
        }
    }

    fn final_ln(&self) -> (TensorId, TensorId) {
        let b = self.ids.len() - GLOBAL_SUFFIX_TENSORS;
        (self.ids[b], self.ids[b + 1])
    }
    fn head(&self) -> (TensorId, TensorId) {
        let b = self.ids.len() - GLOBAL_SUFFIX_TENSORS;
        (self.ids[b + 2], self.ids[b + 3])
    }
}

/// One training or scoring example before embedding.
///
/// `output_ids` are the supervision targets including the terminal `<eos>`.
/// The sequence places `<sep>` plus all targets but the last, so position j
/// of the suffix predicts target j. Empty `output_ids` encode the prefix
/// only (no logits).
#[derive(Debug, Clone, Copy)]
pub struct SequenceInput<'a> {
    pub raster: Option<&'a Raster>,
    pub input_ids: &'a [usize],
    pub output_ids: &'a [usize],
}

/// Forward products. `hidden` covers every position after the final norm;
/// `logits` exist only when output positions do.
#[derive(Debug, Clone, Copy)]
pub struct Activations {
    pub hidden: TensorId,
    pub logits: Option<TensorId>,
    pub n_img: usize,
    pub prefix_len: usize,
    pub seq_len: usize,
}

pub fn forward<S: Scalar>(
    tape: &mut Tape<S>,
    cfg: &GeoDecoderConfig,
    p: &BoundParams,
    input: &SequenceInput,
    dropout: f64,
) -> Result<Activations, ModelError> {
    let placed = if input.output_ids.is_empty() {
        None
    } else {
        if input.output_ids.len() > cfg.max_text_out {
            return Err(ModelError::TextBudget {
                which: "output text",
                got: input.output_ids.len(),
                budget: cfg.max_text_out,
            });
        }
        Some(&input.output_ids[..input.output_ids.len() - 1])
    };
    run(tape, cfg, p, input.raster, input.input_ids, placed, dropout)
}

/// Core graph builder. `placed_outputs = Some(o)` appends `<sep>` followed by
/// `o` and produces one logit row per suffix position; `None` builds a pure
/// prefix.
fn run<S: Scalar>(
    tape: &mut Tape<S>,
    cfg: &GeoDecoderConfig,
    p: &BoundParams,
    raster: Option<&Raster>,
    input_ids: &[usize],
    placed_outputs: Option<&[usize]>,
    dropout: f64,
) -> Result<Activations, ModelError> {
    let n_img = match raster {
        Some(_) => cfg.n_img_tokens(),
        None => 0,
    };

    // Text side: <bos> + input, then <sep> + placed outputs if any. The
    // image-only encode (no text ids, no suffix) carries no text positions.
    let has_text = !input_ids.is_empty() || placed_outputs.is_some();
    let mut text_ids: Vec<usize> = Vec::new();
    let mut prefix_text = 0;
    if has_text {
        text_ids.push(BOS);
        text_ids.extend_from_slice(input_ids);
        prefix_text = text_ids.len();
        if prefix_text > cfg.max_text_in {
            return Err(ModelError::TextBudget {
                which: "input text",
                got: prefix_text,
                budget: cfg.max_text_in,
            });
        }
    }
    let n_suffix = match placed_outputs {
        Some(o) => {
            text_ids.push(SEP);
            text_ids.extend_from_slice(o);
            let n = o.len() + 1;
            if n > cfg.max_text_out {
                return Err(ModelError::TextBudget {
                    which: "output text",
                    got: n,
                    budget: cfg.max_text_out,
                });
            }
            n
        }
        None => 0,
    };
    if let Some(&bad) = text_ids.iter().find(|&&id| id >= cfg.vocab_size) {
        return Err(ModelError::TokenOutOfRange(bad, cfg.vocab_size));
    }

    let seq_len = n_img + text_ids.len();
    if seq_len == 0 {
        return Err(ModelError::EmptySequence);
    }
    let prefix_len = n_img + prefix_text;

    // Embeddings.
    let mut parts: Vec<TensorId> = Vec::new();
    let mut segments: Vec<(Modality, usize, usize)> = Vec::new();
    if let Some(raster) = raster {
        let patches = patchify::<S>(raster, cfg.image_size, cfg.patch_size)?;
        let pt = tape.constant(vec![n_img, cfg.patch_dim()], patches)?;
        let proj = tape.matmul(pt, p.patch_weight())?;
        let proj = tape.add_bias(proj, p.patch_bias())?;
        parts.push(tape.add(proj, p.pos_image())?);
        segments.push((Modality::Image, 0, n_img));
    }
    if !text_ids.is_empty() {
        let tok = tape.embed(p.token_embedding(), &text_ids)?;
        let pos = tape.slice_rows(p.pos_text(), 0, text_ids.len())?;
        parts.push(tape.add(tok, pos)?);
        segments.push((Modality::Text, n_img, text_ids.len()));
    }
    let mut x = tape.concat_rows(&parts)?;

    let mask = build_attention_mask(n_img, prefix_text, n_suffix);
    for layer in 0..cfg.n_layers {
        x = block(tape, cfg, p, layer, x, &segments, &mask, dropout)?;
    }

    let (fg, fb) = p.final_ln();
    let hidden = tape.layer_norm(x, fg, fb)?;

    let logits = if n_suffix > 0 {
        let hs = tape.slice_rows(hidden, prefix_len, n_suffix)?;
        let (hw, hb) = p.head();
        let lg = tape.matmul(hs, hw)?;
        Some(tape.add_bias(lg, hb)?)
    } else {
        None
    };

    Ok(Activations { hidden, logits, n_img, prefix_len, seq_len })
}

/// One transformer block: per-modality norms, QKV, and FFN around a shared
/// masked attention. Residuals come from the unnormalized stream; dropout
/// sits on both residual branches.
#[allow(clippy::too_many_arguments)]
fn block<S: Scalar>(
    tape: &mut Tape<S>,
    cfg: &GeoDecoderConfig,
    p: &BoundParams,
    layer: usize,
    x: TensorId,
    segments: &[(Modality, usize, usize)],
    mask: &Arc<Vec<bool>>,
    dropout: f64,
) -> Result<TensorId, ModelError> {
    let mut q_parts = Vec::with_capacity(segments.len());
    let mut k_parts = Vec::with_capacity(segments.len());
    let mut v_parts = Vec::with_capacity(segments.len());
    for &(m, start, len) in segments {
        let e = p.expert(layer, m);
        let xm = tape.slice_rows(x, start, len)?;
        let nm = tape.layer_norm(xm, e.ln1_gamma, e.ln1_beta)?;
        let q = tape.matmul(nm, e.wq)?;
        q_parts.push(tape.add_bias(q, e.bq)?);
        let k = tape.matmul(nm, e.wk)?;
        k_parts.push(tape.add_bias(k, e.bk)?);
        let v = tape.matmul(nm, e.wv)?;
        v_parts.push(tape.add_bias(v, e.bv)?);
    }
    let q = tape.concat_rows(&q_parts)?;
    let k = tape.concat_rows(&k_parts)?;
    let v = tape.concat_rows(&v_parts)?;

    let dh = cfg.head_dim();
    let temperature = S::from_f64_c((dh as f64).sqrt());
    let mut heads = Vec::with_capacity(cfg.n_heads);
    for h in 0..cfg.n_heads {
        let qh = tape.slice_cols(q, h * dh, dh)?;
        let kh = tape.slice_cols(k, h * dh, dh)?;
        let vh = tape.slice_cols(v, h * dh, dh)?;
        let kt = tape.transpose(kh)?;
        let scores = tape.matmul(qh, kt)?;
        let probs = tape.softmax_masked(scores, Arc::clone(mask), temperature)?;
        heads.push(tape.matmul(probs, vh)?);
    }
    let merged = tape.concat_cols(&heads)?;

    let mut o_parts = Vec::with_capacity(segments.len());
    for &(m, start, len) in segments {
        let e = p.expert(layer, m);
        let am = tape.slice_rows(merged, start, len)?;
        let o = tape.matmul(am, e.wo)?;
        o_parts.push(tape.add_bias(o, e.bo)?);
    }
    let proj = tape.concat_rows(&o_parts)?;
    let proj = tape.dropout(proj, dropout)?;
    let x1 = tape.add(x, proj)?;

    let mut f_parts = Vec::with_capacity(segments.len());
    for &(m, start, len) in segments {
        let e = p.expert(layer, m);
        let xm = tape.slice_rows(x1, start, len)?;
        let nm = tape.layer_norm(xm, e.ln2_gamma, e.ln2_beta)?;
        let h1 = tape.matmul(nm, e.w1)?;
        let h1 = tape.add_bias(h1, e.b1)?;
        let a = tape.gelu(h1)?;
        let h2 = tape.matmul(a, e.w2)?;
        f_parts.push(tape.add_bias(h2, e.b2)?);
    }
    let f = tape.concat_rows(&f_parts)?;
    let f = tape.dropout(f, dropout)?;
    Ok(tape.add(x1, f)?)
}

#[derive(Debug, Clone, Copy)]
pub struct GenerateOpts {
    pub temperature: f64,
    pub max_len: usize,
}

impl GenerateOpts {
    pub fn from_config(cfg: &GeoDecoderConfig) -> Self {
        GenerateOpts { temperature: cfg.temperature, max_len: cfg.max_text_out }
    }
}

/// Greedy decoding: at each step the argmax of the temperature-scaled
/// distribution, lowest id on ties. Stops at `<eos>` (not included in the
/// result) or after `max_len` tokens. Fully deterministic.
pub fn generate<S: Scalar>(
    params: &GeoDecoderParams<S>,
    raster: Option<&Raster>,
    prompt_ids: &[usize],
    opts: &GenerateOpts,
) -> Result<Vec<usize>, ModelError> {
    let cfg = params.config().clone();
    if !(opts.temperature > 0.0) || !opts.temperature.is_finite() {
        return Err(ModelError::BadTemperature(opts.temperature));
    }
    if opts.max_len > cfg.max_text_out {
        return Err(ModelError::TextBudget {
            which: "generation length",
            got: opts.max_len,
            budget: cfg.max_text_out,
        });
    }
    let inv_t = S::from_f64_c(1.0 / opts.temperature);
    let mut out: Vec<usize> = Vec::new();
    while out.len() < opts.max_len {
        let mut tape = Tape::<S>::new();
        let bound = params.bind(&mut tape)?;
        let acts = run(&mut tape, &cfg, &bound, raster, prompt_ids, Some(&out), 0.0)?;
        let logits = acts.logits.expect("suffix present");
        let v = cfg.vocab_size;
        let row = &tape.data(logits)[out.len() * v..(out.len() + 1) * v];
        let mut best = 0;
        let mut best_val = row[0] * inv_t;
        for (c, &val) in row.iter().enumerate().skip(1) {
            let scaled = val * inv_t;
            if scaled > best_val {
                best = c;
                best_val = scaled;
            }
        }
        if best == EOS {
            break;
        }
        out.push(best);
    }
    Ok(out)
}

/// Runs the finite-difference oracle over every parameter tensor of a model
/// built at `cfg`, using a fixed synthetic scene and prompt. Dropout is off;
/// use f64.
pub fn check_gradients<S: Scalar>(
    cfg: &GeoDecoderConfig,
    seed: u64,
    samples_per_tensor: usize,
) -> Result<GradCheckReport, ModelError> {
    cfg.validate()?;
    let params = GeoDecoderParams::<S>::init(cfg, seed)?;

    let mut raster = Raster::new(cfg.image_size as u32, cfg.image_size as u32, [0, 0, 0]);
    for y in 0..cfg.image_size as u32 {
        for x in 0..cfg.image_size as u32 {
            raster.set(x, y, [(x * 7 + y * 13) as u8, (x * 3 + 41) as u8, (y * 5 + 97) as u8]);
        }
    }
    let input_ids: Vec<usize> = (0..8).map(|i| 4 + (i * 11) % (cfg.vocab_size - 4)).collect();
    let mut output_ids: Vec<usize> =
        (0..5).map(|i| 4 + (i * 17 + 3) % (cfg.vocab_size - 4)).collect();
    output_ids.push(EOS);

    let flat: Vec<(Vec<usize>, Vec<S>)> =
        params.tensors().iter().map(|t| (t.shape.clone(), t.data.to_vec())).collect();
    let build = |tape: &mut Tape<S>, ids: &[TensorId]| -> Result<TensorId, NumericsError> {
        let shim = |e: ModelError| NumericsError::BadArgument { op: "forward", detail: e.to_string() };
        let bound = BoundParams::from_ids(ids.to_vec(), cfg).map_err(shim)?;
        let input = SequenceInput {
            raster: Some(&raster),
            input_ids: &input_ids,
            output_ids: &output_ids,
        };
        let acts = forward(tape, cfg, &bound, &input, 0.0).map_err(shim)?;
        tape.cross_entropy_mean(acts.logits.expect("targets present"), &output_ids, PAD)
    };
    Ok(grad_check(build, &flat, S::from_f64_c(1e-6), samples_per_tensor, seed)?)
}
