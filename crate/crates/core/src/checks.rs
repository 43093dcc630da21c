//! Finite-difference gradient suite over every differentiable tape op and the
//! composite training losses, all at 64-bit.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::Serialize;

use crate::contrastive::{build_contrastive_set, hinge_margin_loss, total_loss, ContrastiveInputs, LossConfig};
use crate::corpus::{generate_corpus, CorpusConfig, Example, Lexicon, Vocab};
use crate::error::Result;
use crate::model::{init_params, project, Layout, ModelConfig, ModelVars, ParameterSet};
use crate::tensor::gradcheck::finite_diff_check_many;
use crate::tensor::{AttnMask, Tape, Tensor, Var};

pub const OP_TOLERANCE: f64 = 1e-4;
pub const COMPOSITE_TOLERANCE: f64 = 1e-3;
pub const FD_EPS: f64 = 1e-5;

type CheckFn = Box<dyn Fn() -> Result<f64>>;

/// A named check returning its max relative error.
pub struct GradCheck {
    pub name: String,
    pub tolerance: f64,
    pub run: CheckFn,
}

impl GradCheck {
    pub fn new(name: impl Into<String>, tolerance: f64, run: impl Fn() -> Result<f64> + 'static) -> Self {
        Self { name: name.into(), tolerance, run: Box::new(run) }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct CheckOutcome {
    pub name: String,
    pub max_rel_err: f64,
    pub tolerance: f64,
    /// Set when the check itself failed to run.
    pub error: Option<String>,
}

impl CheckOutcome {
    pub fn passed(&self) -> bool {
        self.error.is_none() && self.max_rel_err < self.tolerance
    }
}

pub fn run_checks(checks: &[GradCheck]) -> Vec<CheckOutcome> {
    checks
        .iter()
        .map(|c| match (c.run)() {
            Ok(e) => CheckOutcome { name: c.name.clone(), max_rel_err: e, tolerance: c.tolerance, error: None },
            Err(e) => CheckOutcome { name: c.name.clone(), max_rel_err: f64::INFINITY, tolerance: c.tolerance, error: Some(e.to_string()) },
        })
        .collect()
}

fn random(shape: &[usize], seed: u64) -> Tensor<f64> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let n = shape.iter().product();
    Tensor::new(shape.to_vec(), (0..n).map(|_| rng.gen_range(-1.0..1.0)).collect()).expect("shape matches")
}

/// `sum(y * w)` for a fixed random `w`, so every output entry has its own weight.
fn weighted_sum(t: &mut Tape<f64>, y: Var, seed: u64) -> Result<Var> {
    let w = random(t.shape(y), seed);
    let w = t.constant(w)?;
    let p = t.mul(y, w)?;
    t.sum(p)
}

fn op(name: &str, inputs: Vec<Tensor<f64>>, f: impl Fn(&mut Tape<f64>, &[Var]) -> Result<Var> + 'static) -> GradCheck {
    GradCheck::new(name, OP_TOLERANCE, move || {
        let errs = finite_diff_check_many(&f, &inputs, FD_EPS)?;
        Ok(errs.into_iter().fold(0.0, f64::max))
    })
}

/// One check per differentiable op.
pub fn op_checks() -> Vec<GradCheck> {
    vec![
        op("matmul", vec![random(&[3, 4], 1), random(&[4, 2], 2)], |t, v| {
            let y = t.matmul(v[0], v[1])?;
            weighted_sum(t, y, 100)
        }),
        op("matmul_t", vec![random(&[4, 3], 3), random(&[2, 4], 4)], |t, v| {
            let y = t.matmul_t(v[0], true, v[1], true)?;
            weighted_sum(t, y, 101)
        }),
        op("add", vec![random(&[2, 3], 5), random(&[2, 3], 6)], |t, v| {
            let y = t.add(v[0], v[1])?;
            weighted_sum(t, y, 102)
        }),
        op("sub", vec![random(&[2, 3], 7), random(&[2, 3], 8)], |t, v| {
            let y = t.sub(v[0], v[1])?;
            weighted_sum(t, y, 103)
        }),
        op("mul", vec![random(&[2, 3], 9), random(&[2, 3], 10)], |t, v| {
            let y = t.mul(v[0], v[1])?;
            weighted_sum(t, y, 104)
        }),
        op("add_row", vec![random(&[3, 4], 11), random(&[4], 12)], |t, v| {
            let y = t.add_row(v[0], v[1])?;
            weighted_sum(t, y, 105)
        }),
        op("scale", vec![random(&[5], 13)], |t, v| {
            let y = t.scale(v[0], -1.7)?;
            weighted_sum(t, y, 106)
        }),
        op("add_scalar", vec![random(&[5], 14)], |t, v| {
            let y = t.add_scalar(v[0], 0.3)?;
            let y = t.mul(y, y)?;
            weighted_sum(t, y, 107)
        }),
        op("relu", vec![random(&[8], 15)], |t, v| {
            let y = t.relu(v[0])?;
            weighted_sum(t, y, 108)
        }),
        op("tanh", vec![random(&[8], 16)], |t, v| {
            let y = t.tanh(v[0])?;
            weighted_sum(t, y, 109)
        }),
        op("gelu", vec![random(&[8], 17)], |t, v| {
            let y = t.gelu(v[0])?;
            weighted_sum(t, y, 110)
        }),
        op("dropout", vec![random(&[4, 5], 18)], |t, v| {
            let mut rng = ChaCha8Rng::seed_from_u64(7);
            let y = t.dropout(v[0], 0.3, &mut rng)?;
            weighted_sum(t, y, 111)
        }),
        op("embedding", vec![random(&[5, 3], 19)], |t, v| {
            let y = t.embedding(v[0], &[4, 0, 4, 2])?;
            weighted_sum(t, y, 112)
        }),
        op("layer_norm", vec![random(&[3, 5], 20), random(&[5], 21), random(&[5], 22)], |t, v| {
            let y = t.layer_norm(v[0], v[1], v[2])?;
            weighted_sum(t, y, 113)
        }),
        op("attention", vec![random(&[4, 6], 23), random(&[5, 6], 24), random(&[5, 6], 25)], |t, v| {
            let mask = AttnMask::padding(vec![true, true, false, true, true]);
            let y = t.attention::<ChaCha8Rng>(v[0], v[1], v[2], 2, &mask, None)?;
            weighted_sum(t, y, 114)
        }),
        op("attention_causal", vec![random(&[5, 6], 26), random(&[5, 6], 27), random(&[5, 6], 28)], |t, v| {
            let mask = AttnMask::causal(vec![true, true, true, true, false]);
            let y = t.attention::<ChaCha8Rng>(v[0], v[1], v[2], 3, &mask, None)?;
            weighted_sum(t, y, 115)
        }),
        op("attention_dropout", vec![random(&[3, 4], 29), random(&[4, 4], 30), random(&[4, 4], 31)], |t, v| {
            let mask = AttnMask::padding(vec![true; 4]);
            let mut rng = ChaCha8Rng::seed_from_u64(8);
            let y = t.attention(v[0], v[1], v[2], 2, &mask, Some((0.25, &mut rng)))?;
            weighted_sum(t, y, 116)
        }),
        op("masked_mean_pool", vec![random(&[5, 8], 32)], |t, v| {
            let y = t.masked_mean_pool(v[0], &[true, false, true, true, false])?;
            weighted_sum(t, y, 117)
        }),
        op("cosine_similarity", vec![random(&[6], 33), random(&[6], 34)], |t, v| t.cosine_similarity(v[0], v[1])),
        op("softmax_cross_entropy", vec![random(&[6, 11], 35)], |t, v| {
            t.softmax_cross_entropy(v[0], &[0, 3, 10, 5, 5, 2], &[true, true, false, true, true, true])
        }),
        op("reshape", vec![random(&[2, 6], 36)], |t, v| {
            let y = t.reshape(v[0], &[3, 4])?;
            weighted_sum(t, y, 118)
        }),
        op("sum", vec![random(&[7], 37)], |t, v| {
            let y = t.mul(v[0], v[0])?;
            t.sum(y)
        }),
        op("add_all", vec![random(&[3], 38), random(&[3], 39), random(&[3], 40)], |t, v| {
            let y = t.add_all(v)?;
            weighted_sum(t, y, 119)
        }),
        op("hinge_margin_loss", vec![random(&[2], 41), random(&[3], 42)], |t, v| {
            let pp = (0..2).map(|i| pick(t, v[0], i)).collect::<Result<Vec<_>>>()?;
            let pm = (0..3).map(|i| Ok((pick(t, v[1], i)?, 0.01 * (i + 1) as f64))).collect::<Result<Vec<_>>>()?;
            hinge_margin_loss(t, &pp, &pm)
        }),
    ]
}

/// Scalar entry `i` of a vector, as a differentiable `[1]` var.
fn pick(t: &mut Tape<f64>, v: Var, i: usize) -> Result<Var> {
    let n = t.value(v).len();
    let mut onehot = vec![0.0; n];
    onehot[i] = 1.0;
    let w = t.constant(Tensor::new(vec![n], onehot)?)?;
    let p = t.mul(v, w)?;
    t.sum(p)
}

/// A short-reference corpus and a model small enough to probe every weight.
pub struct CompositeFixture {
    pub lex: Lexicon,
    pub vocab: Vocab,
    pub examples: Vec<Example>,
    pub config: ModelConfig,
    pub params: ParameterSet<f64>,
}

impl CompositeFixture {
    pub fn new() -> Result<Self> {
        let corpus = CorpusConfig {
            n_entities: 4,
            n_aspects: 3,
            n_opinions: 4,
            n_examples: 10,
            attribute_inventory: 3,
            min_distractors: 0,
            max_distractors: 0,
            min_reference_len: 5,
            max_reference_len: 20,
            seed: 3,
            ..CorpusConfig::default()
        };
        let (lex, examples) = generate_corpus(&corpus)?;
        let vocab = Vocab::build(&lex);
        let config = ModelConfig {
            vocab_size: vocab.len(),
            d_model: 8,
            n_heads: 2,
            n_enc_layers: 1,
            n_dec_layers: 1,
            d_ff: 12,
            max_src_len: 14,
            max_tgt_len: 22,
            dropout_rate: 0.0,
            proj_hidden: 6,
        };
        let mut params = init_params(&config, 11)?.cast::<f64>();
        // Larger weights than the training init so no gradient is vanishingly small.
        let mut rng = ChaCha8Rng::seed_from_u64(12);
        for (_, t) in params.iter_mut() {
            t.data_mut().iter_mut().for_each(|x| *x += rng.gen_range(-0.3..0.3));
        }
        Ok(Self { lex, vocab, examples, config, params })
    }

    pub fn inputs(&self, n: usize) -> Result<Vec<ContrastiveInputs>> {
        let mut rng = ChaCha8Rng::seed_from_u64(13);
        self.examples
            .iter()
            .take(n)
            .map(|e| {
                let set = build_contrastive_set(&e.tuple, &self.lex, &mut rng)?;
                ContrastiveInputs::build(e, &set, &self.lex, &self.vocab, &self.config)
            })
            .collect()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Component {
    Lm,
    Ce,
    Cd,
    Total,
}

/// Mean of one loss component over `inputs`, as a function of all weights.
pub fn composite_error(fx: &CompositeFixture, inputs: &[ContrastiveInputs], component: Component, cfg: &LossConfig) -> Result<f64> {
    let names: Vec<String> = fx.params.names().cloned().collect();
    let tensors: Vec<Tensor<f64>> = fx.params.iter().map(|(_, t)| t.clone()).collect();
    let config = fx.config.clone();
    let f = |tape: &mut Tape<f64>, vars: &[Var]| -> Result<Var> {
        let current = ParameterSet::from_map(names.iter().cloned().zip(vars.iter().map(|&v| tape.tensor(v))).collect());
        let layout = Layout::build(&config, &mut |name, _, _| Ok(vars[names.binary_search(&name).expect("known name")]))?;
        let mv = ModelVars { layout, named: names.iter().cloned().zip(vars.iter().copied()).collect() };
        let mut parts = Vec::with_capacity(inputs.len());
        for inp in inputs {
            let mut rng = ChaCha8Rng::seed_from_u64(0);
            let out = total_loss(tape, &mv, &current, &config, inp, cfg, &mut rng)?;
            parts.push(match component {
                Component::Lm => out.lm,
                Component::Ce => out.ce,
                Component::Cd => out.cd,
                Component::Total => out.total,
            });
        }
        let s = tape.add_all(&parts)?;
        tape.scale(s, 1.0 / inputs.len() as f64)
    };
    let errs = finite_diff_check_many(f, &tensors, FD_EPS)?;
    Ok(errs.into_iter().fold(0.0, f64::max))
}

/// L_LM, L_CE, L_CD and the total on one example, plus the total on a
/// two-example batch, and the projection head on its own.
pub fn composite_checks() -> Vec<GradCheck> {
    let mut out = Vec::new();
    for (name, component, n) in [
        ("loss_lm", Component::Lm, 1),
        ("loss_ce", Component::Ce, 1),
        ("loss_cd", Component::Cd, 1),
        ("loss_total", Component::Total, 1),
        ("loss_total_batch2", Component::Total, 2),
    ] {
        out.push(GradCheck::new(name, COMPOSITE_TOLERANCE, move || {
            let fx = CompositeFixture::new()?;
            let inputs = fx.inputs(n)?;
            composite_error(&fx, &inputs, component, &LossConfig::default())
        }));
    }
    out.push(op("projection", vec![random(&[8], 43), random(&[8, 6], 44), random(&[6], 45), random(&[6, 8], 46), random(&[8], 47)], |t, v| {
        let net = crate::model::Dense2 { w1: v[1], b1: v[2], w2: v[3], b2: v[4] };
        let y = project(t, &net, v[0])?;
        weighted_sum(t, y, 120)
    }));
    out
}

/// The full release suite.
pub fn all_checks() -> Vec<GradCheck> {
    let mut checks = op_checks();
    checks.extend(composite_checks());
    checks
}
