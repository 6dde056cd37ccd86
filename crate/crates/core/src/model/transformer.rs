use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

use super::vocab::SCORE_ID;
use super::{HeadSource, ModelConfig, ModelError};
use crate::binning::BinSpec;
use crate::nn::{checkpoint, ops, ParamId, ParamSet, Tape, TensorBuffer, Var};

const INIT_STD: f64 = 0.02;

#[derive(Debug, Clone, PartialEq)]
struct LayerIds {
    ln1_gain: ParamId,
    ln1_bias: ParamId,
    wq: ParamId,
    bq: ParamId,
    wk: ParamId,
    bk: ParamId,
    wv: ParamId,
    bv: ParamId,
    wo: ParamId,
    bo: ParamId,
    ln2_gain: ParamId,
    ln2_bias: ParamId,
    w1: ParamId,
    b1: ParamId,
    w2: ParamId,
    b2: ParamId,
}

#[derive(Debug, Clone, PartialEq)]
struct Ids {
    image_w: ParamId,
    image_b: ParamId,
    token_embed: ParamId,
    pos_embed: ParamId,
    layers: Vec<LayerIds>,
    final_gain: ParamId,
    final_bias: ParamId,
    head_w: ParamId,
    head_b: ParamId,
}

/// Learnable weights of the fusion transformer, addressable by name.
#[derive(Debug, Clone, PartialEq)]
pub struct ModelParams {
    set: ParamSet,
    ids: Ids,
}

/// Expected (name, rows, cols) for every parameter, in registration order.
fn layout(c: &ModelConfig) -> Vec<(String, usize, usize)> {
    let d = c.d_model;
    let mut out = vec![
        ("image_proj.weight".into(), c.d_input, c.n_image_tokens * d),
        ("image_proj.bias".into(), 1, c.n_image_tokens * d),
        ("token_embed".into(), c.vocab_size, d),
        ("pos_embed".into(), c.sequence_capacity(), d),
    ];
    for l in 0..c.n_layers {
        let p = |s: &str| format!("layers.{l}.{s}");
        out.extend([
            (p("ln1.gain"), 1, d),
            (p("ln1.bias"), 1, d),
            (p("attn.wq"), d, d),
            (p("attn.bq"), 1, d),
            (p("attn.wk"), d, d),
            (p("attn.bk"), 1, d),
            (p("attn.wv"), d, d),
            (p("attn.bv"), 1, d),
            (p("attn.wo"), d, d),
            (p("attn.bo"), 1, d),
            (p("ln2.gain"), 1, d),
            (p("ln2.bias"), 1, d),
            (p("ffn.w1"), d, c.d_ff),
            (p("ffn.b1"), 1, c.d_ff),
            (p("ffn.w2"), c.d_ff, d),
            (p("ffn.b2"), 1, d),
        ]);
    }
    out.extend([
        ("final_ln.gain".into(), 1, d),
        ("final_ln.bias".into(), 1, d),
        ("head.weight".into(), d, c.k_bins),
        ("head.bias".into(), 1, c.k_bins),
    ]);
    out
}

impl ModelParams {
    /// Gaussian(0, 0.02) weights and embeddings, zero biases, unit layer-norm gains.
    pub fn init(config: &ModelConfig, seed: u64) -> Result<Self, ModelError> {
        config.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let normal = Normal::new(0.0, INIT_STD).expect("valid std");
        let mut set = ParamSet::new();
        for (name, rows, cols) in layout(config) {
            let values = if name.ends_with(".gain") {
                vec![1.0; rows * cols]
            } else if name.rsplit('.').next().is_some_and(|last| last.starts_with('b')) {
                vec![0.0; rows * cols]
            } else {
                (0..rows * cols).map(|_| normal.sample(&mut rng)).collect()
            };
            set.add(name, TensorBuffer::matrix(rows, cols, values)?);
        }
        Self::from_param_set(config, set)
    }

    /// Binds a loaded parameter set, checking names and shapes against `config`.
    pub fn from_param_set(config: &ModelConfig, set: ParamSet) -> Result<Self, ModelError> {
        config.validate()?;
        let expected = layout(config);
        if expected.len() != set.len() {
            return Err(ModelError::BadParameter(format!(
                "expected {} tensors, found {}",
                expected.len(),
                set.len()
            )));
        }
        for (name, rows, cols) in &expected {
            let id = set.find(name).ok_or_else(|| ModelError::BadParameter(name.clone()))?;
            let t = set.get(id);
            if t.rows() != *rows || t.cols() != *cols {
                return Err(ModelError::BadParameter(name.clone()));
            }
        }
        let f = |n: &str| set.find(n).expect("checked above");
        let layers = (0..config.n_layers)
            .map(|l| {
                let g = |s: &str| f(&format!("layers.{l}.{s}"));
                LayerIds {
                    ln1_gain: g("ln1.gain"),
                    ln1_bias: g("ln1.bias"),
                    wq: g("attn.wq"),
                    bq: g("attn.bq"),
                    wk: g("attn.wk"),
                    bk: g("attn.bk"),
                    wv: g("attn.wv"),
                    bv: g("attn.bv"),
                    wo: g("attn.wo"),
                    bo: g("attn.bo"),
                    ln2_gain: g("ln2.gain"),
                    ln2_bias: g("ln2.bias"),
                    w1: g("ffn.w1"),
                    b1: g("ffn.b1"),
                    w2: g("ffn.w2"),
                    b2: g("ffn.b2"),
                }
            })
            .collect();
        let ids = Ids {
            image_w: f("image_proj.weight"),
            image_b: f("image_proj.bias"),
            token_embed: f("token_embed"),
            pos_embed: f("pos_embed"),
            layers,
            final_gain: f("final_ln.gain"),
            final_bias: f("final_ln.bias"),
            head_w: f("head.weight"),
            head_b: f("head.bias"),
        };
        Ok(Self { set, ids })
    }

    pub fn param_set(&self) -> &ParamSet {
        &self.set
    }

    pub fn param_set_mut(&mut self) -> &mut ParamSet {
        &mut self.set
    }

    pub fn is_head(&self, id: ParamId) -> bool {
        id == self.ids.head_w || id == self.ids.head_b
    }

    pub fn head_ids(&self) -> (ParamId, ParamId) {
        (self.ids.head_w, self.ids.head_b)
    }

    pub fn to_checkpoint(&self) -> String {
        checkpoint::to_string(&self.set)
    }

    /// Records the forward computation on `tape` and returns the `1 x K` logits.
    pub(crate) fn logits_on(
        &self,
        tape: &mut Tape<'_>,
        config: &ModelConfig,
        image_features: &[f64],
        prompt_ids: &[u32],
    ) -> Result<Var, ModelError> {
        if image_features.len() != config.d_input {
            return Err(ModelError::DimensionMismatch {
                expected: config.d_input,
                got: image_features.len(),
            });
        }
        if let Some(&id) = prompt_ids.iter().find(|&&id| id as usize >= config.vocab_size) {
            return Err(ModelError::TokenOutOfRange {
                id,
                vocab_size: config.vocab_size,
            });
        }
        let ids = &self.ids;
        let d = config.d_model;
        let n_img = config.n_image_tokens;
        let prompt = &prompt_ids[..prompt_ids.len().min(config.max_prompt_tokens)];

        let x = tape.input(TensorBuffer::row_vector(image_features.to_vec())?);
        let w = tape.param(ids.image_w);
        let b = tape.param(ids.image_b);
        let img = tape.linear(x, w, b)?;
        let img = tape.reshape(img, n_img, d)?;

        let token_ids: Vec<usize> = prompt
            .iter()
            .map(|&t| t as usize)
            .chain(std::iter::once(SCORE_ID as usize))
            .collect();
        let table = tape.param(ids.token_embed);
        let tokens = tape.gather(table, &token_ids)?;
        let seq = tape.concat_rows(&[img, tokens])?;

        // The score token always sits in the last positional slot.
        let positions: Vec<usize> = (0..n_img + prompt.len())
            .chain(std::iter::once(config.sequence_capacity() - 1))
            .collect();
        let pos_table = tape.param(ids.pos_embed);
        let pos = tape.gather(pos_table, &positions)?;
        let mut h = tape.add(seq, pos)?;

        let run_layers = match config.head_source {
            HeadSource::LastLayer => config.n_layers,
            HeadSource::PreviousLayer => config.n_layers - 1,
        };
        for (l, layer) in ids.layers.iter().take(run_layers).enumerate() {
            // Only the score row of the final layer is read downstream.
            let last_only = l + 1 == run_layers;
            h = block(tape, layer, h, config.n_heads, last_only)?;
        }
        let seq_len = tape.value(h).rows();
        let score = tape.slice_rows(h, seq_len - 1, 1)?;
        let g = tape.param(ids.final_gain);
        let b = tape.param(ids.final_bias);
        let score = tape.layer_norm(score, g, b)?;
        let hw = tape.param(ids.head_w);
        let hb = tape.param(ids.head_b);
        Ok(tape.linear(score, hw, hb)?)
    }
}

/// Pre-norm transformer block. With `last_only`, queries and the
/// feed-forward path are restricted to the final row.
fn block(tape: &mut Tape<'_>, ids: &LayerIds, h: Var, n_heads: usize, last_only: bool) -> Result<Var, ModelError> {
    let p = |tape: &mut Tape<'_>, id| tape.param(id);
    let g1 = p(tape, ids.ln1_gain);
    let b1 = p(tape, ids.ln1_bias);
    let normed = tape.layer_norm(h, g1, b1)?;

    let rows = tape.value(h).rows();
    let (resid, q_src) = if last_only {
        (tape.slice_rows(h, rows - 1, 1)?, tape.slice_rows(normed, rows - 1, 1)?)
    } else {
        (h, normed)
    };

    let (wq, bq) = (p(tape, ids.wq), p(tape, ids.bq));
    let (wk, bk) = (p(tape, ids.wk), p(tape, ids.bk));
    let (wv, bv) = (p(tape, ids.wv), p(tape, ids.bv));
    let q = tape.linear(q_src, wq, bq)?;
    let k = tape.linear(normed, wk, bk)?;
    let v = tape.linear(normed, wv, bv)?;
    let attn = tape.multi_head_attention(q, k, v, n_heads)?;
    let (wo, bo) = (p(tape, ids.wo), p(tape, ids.bo));
    let attn = tape.linear(attn, wo, bo)?;
    let h = tape.add(resid, attn)?;

    let g2 = p(tape, ids.ln2_gain);
    let b2 = p(tape, ids.ln2_bias);
    let normed = tape.layer_norm(h, g2, b2)?;
    let (w1, b1) = (p(tape, ids.w1), p(tape, ids.b1));
    let (w2, b2) = (p(tape, ids.w2), p(tape, ids.b2));
    let ff = tape.linear(normed, w1, b1)?;
    let ff = tape.gelu(ff)?;
    let ff = tape.linear(ff, w2, b2)?;
    Ok(tape.add(h, ff)?)
}

/// `K` logits for one input. An empty prompt is the image-only path.
pub fn forward(
    config: &ModelConfig,
    params: &ModelParams,
    image_features: &[f64],
    prompt_ids: &[u32],
) -> Result<Vec<f64>, ModelError> {
    let mut tape = Tape::new(&params.set);
    let logits = params.logits_on(&mut tape, config, image_features, prompt_ids)?;
    Ok(tape.value(logits).values().to_vec())
}

/// Softmax over the bin logits, decoded as the expected bin center.
pub fn predict_score(
    config: &ModelConfig,
    params: &ModelParams,
    spec: &BinSpec,
    image_features: &[f64],
    prompt_ids: &[u32],
) -> Result<f64, ModelError> {
    if spec.k() != config.k_bins {
        return Err(ModelError::KMismatch {
            spec: spec.k(),
            config: config.k_bins,
        });
    }
    let logits = forward(config, params, image_features, prompt_ids)?;
    Ok(spec.decode(&ops::softmax(&logits))?)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::binning::build_bins;
    use rand::Rng;

    fn tiny() -> ModelConfig {
        ModelConfig {
            d_input: 3,
            n_image_tokens: 2,
            d_model: 8,
            n_heads: 2,
            n_layers: 2,
            d_ff: 16,
            max_prompt_tokens: 4,
            vocab_size: 7,
            k_bins: 5,
            head_source: HeadSource::LastLayer,
        }
    }

    #[test]
    fn zero_head_gives_equal_logits() {
        let c = tiny();
        let mut p = ModelParams::init(&c, 1).unwrap();
        let (hw, _) = p.head_ids();
        p.param_set_mut().get_mut(hw).values_mut().fill(0.0);
        let logits = forward(&c, &p, &[0.0; 3], &[]).unwrap();
        assert!(logits.iter().all(|&l| l == logits[0]));
        let spec = build_bins(1.0, 10.0, 5).unwrap();
        let s = predict_score(&c, &p, &spec, &[0.0; 3], &[]).unwrap();
        assert!((s - 5.5).abs() < 1e-12);
    }

    #[test]
    fn prompt_order_matters() {
        let c = tiny();
        let p = ModelParams::init(&c, 2).unwrap();
        let a = forward(&c, &p, &[0.5, -1.0, 2.0], &[3, 4, 5]).unwrap();
        let b = forward(&c, &p, &[0.5, -1.0, 2.0], &[5, 4, 3]).unwrap();
        assert_ne!(a, b);
    }

    #[test]
    fn forward_is_deterministic() {
        let c = tiny();
        let a = forward(&c, &ModelParams::init(&c, 3).unwrap(), &[0.1, 0.2, 0.3], &[4]).unwrap();
        let b = forward(&c, &ModelParams::init(&c, 3).unwrap(), &[0.1, 0.2, 0.3], &[4]).unwrap();
        let bits = |v: &[f64]| v.iter().map(|x| x.to_bits()).collect::<Vec<_>>();
        assert_eq!(bits(&a), bits(&b));
    }

    #[test]
    fn forced_one_hot_decodes_to_center() {
        let c = tiny();
        let mut p = ModelParams::init(&c, 4).unwrap();
        let (hw, hb) = p.head_ids();
        p.param_set_mut().get_mut(hw).values_mut().fill(0.0);
        let bias = p.param_set_mut().get_mut(hb).values_mut();
        bias.fill(-1e3);
        bias[3] = 1e3;
        let spec = build_bins(1.0, 10.0, 5).unwrap();
        let s = predict_score(&c, &p, &spec, &[1.0, 2.0, 3.0], &[3]).unwrap();
        assert_eq!(s, spec.centers()[3]);
    }

    #[test]
    fn predictions_match_two_step_oracle() {
        let c = tiny();
        let p = ModelParams::init(&c, 5).unwrap();
        let spec = build_bins(0.0, 5.0, 5).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(8);
        for _ in 0..100 {
            let x: Vec<f64> = (0..3).map(|_| rng.random_range(-3.0..3.0)).collect();
            let ids: Vec<u32> = (0..rng.random_range(0..5)).map(|_| rng.random_range(0..7)).collect();
            let logits = forward(&c, &p, &x, &ids).unwrap();
            let max = logits.iter().cloned().fold(f64::MIN, f64::max);
            let z: f64 = logits.iter().map(|l| (l - max).exp()).sum();
            let oracle: f64 = logits
                .iter()
                .zip(spec.centers())
                .map(|(l, b)| (l - max).exp() / z * b)
                .sum();
            let got = predict_score(&c, &p, &spec, &x, &ids).unwrap();
            assert!((got - oracle).abs() < 1e-10);
            assert!(got >= spec.centers()[0] && got <= spec.centers()[4]);
        }
    }

    #[test]
    fn rejects_bad_inputs() {
        let c = tiny();
        let p = ModelParams::init(&c, 1).unwrap();
        assert!(matches!(
            forward(&c, &p, &[0.0; 2], &[]),
            Err(ModelError::DimensionMismatch { expected: 3, got: 2 })
        ));
        assert!(matches!(
            forward(&c, &p, &[0.0; 3], &[9]),
            Err(ModelError::TokenOutOfRange { id: 9, .. })
        ));
        let spec = build_bins(0.0, 1.0, 4).unwrap();
        assert!(matches!(
            predict_score(&c, &p, &spec, &[0.0; 3], &[]),
            Err(ModelError::KMismatch { spec: 4, config: 5 })
        ));
        let bad = ModelConfig { n_heads: 3, ..tiny() };
        assert!(ModelParams::init(&bad, 0).is_err());
    }

    /// Every parameter replaced by a U(-0.5, 0.5) draw so gradients are far
    /// from the tiny values of the default initialization.
    fn randomized(c: &ModelConfig, seed: u64) -> ModelParams {
        let mut p = ModelParams::init(c, seed).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let ids: Vec<_> = p.param_set().iter().map(|(id, _, _)| id).collect();
        for id in ids {
            for v in p.param_set_mut().get_mut(id).values_mut() {
                *v = rng.random_range(-0.5..0.5);
            }
        }
        p
    }

    #[test]
    fn full_model_gradients_match_finite_differences() {
        use crate::model::{example_loss_and_gradient, Example};
        use crate::nn::check_gradients;
        for head_source in [HeadSource::LastLayer, HeadSource::PreviousLayer] {
            let c = ModelConfig { head_source, ..tiny() };
            let p = randomized(&c, 11);
            let example = Example {
                features: vec![0.3, -1.2, 0.8],
                prompt_ids: vec![3, 6, 4],
                target: 0.0,
            };
            let mut set = p.param_set().clone();
            let report = check_gradients(
                &mut set,
                |s| {
                    let params = ModelParams::from_param_set(&c, s.clone())?;
                    example_loss_and_gradient(&c, &params, &example, 2)
                },
                1e-5,
                1e-4,
                1e-7,
            )
            .unwrap();
            assert!(report.passed(), "{head_source:?}: {report:?}");
        }
    }

    #[test]
    fn previous_layer_head_source_differs() {
        let c = tiny();
        let p = ModelParams::init(&c, 6).unwrap();
        let prev = ModelConfig {
            head_source: HeadSource::PreviousLayer,
            ..tiny()
        };
        let a = forward(&c, &p, &[1.0, 0.0, -1.0], &[3]).unwrap();
        let b = forward(&prev, &p, &[1.0, 0.0, -1.0], &[3]).unwrap();
        assert_ne!(a, b);
    }

    #[test]
    fn checkpoint_round_trip_rebinds() {
        let c = tiny();
        let p = ModelParams::init(&c, 7).unwrap();
        let set = checkpoint::from_str(&p.to_checkpoint()).unwrap();
        let q = ModelParams::from_param_set(&c, set).unwrap();
        assert_eq!(p, q);
        let other = ModelConfig { k_bins: 6, ..tiny() };
        let set = checkpoint::from_str(&p.to_checkpoint()).unwrap();
        assert!(ModelParams::from_param_set(&other, set).is_err());
    }
}
