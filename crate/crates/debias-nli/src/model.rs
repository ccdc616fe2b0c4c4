//! The premise-hypothesis classifier.
//!
//! Two encoders with separate parameters per side turn token sequences into
//! fixed vectors, a combiner joins the pair, and a one-hidden-layer MLP
//! produces label log-probabilities. A second MLP, the hypothesis-only
//! head, reads the hypothesis encoding alone; it carries the only
//! parameters outside the theta groups.
//!
//! Every forward path exists twice: as a plain function over `&[f64]`
//! (prediction, evaluation, finite-difference oracles) and as a tape-graph
//! builder (training). Both call the same row kernels, so they agree
//! bitwise.

use rand::Rng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::tape::{log_softmax_row, NodeId, ParamGroup, Parameter, Tape};
use crate::tensor::{argmax, Tensor};
use crate::vocab::Vocabulary;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum EncoderKind {
    /// Sum of token embeddings.
    BagOfEmbeddings { dim: usize },
    /// Mean of token embeddings.
    MeanOfEmbeddings { dim: usize },
    /// Plain recurrent net; the final hidden state is the encoding.
    SimpleRecurrent { dim: usize, hidden: usize },
}

impl EncoderKind {
    pub fn dim(&self) -> usize {
        match *self {
            EncoderKind::BagOfEmbeddings { dim }
            | EncoderKind::MeanOfEmbeddings { dim }
            | EncoderKind::SimpleRecurrent { dim, .. } => dim,
        }
    }

    /// Width of the encoding this kind produces.
    pub fn out_width(&self) -> usize {
        match *self {
            EncoderKind::BagOfEmbeddings { dim } | EncoderKind::MeanOfEmbeddings { dim } => dim,
            EncoderKind::SimpleRecurrent { hidden, .. } => hidden,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.dim() == 0 || self.out_width() == 0 {
            return Err(Error::invalid("encoder dims must be positive"));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CombineMode {
    /// `[u; v]`
    Concat,
    /// `[u; v; u - v; u ⊙ v]`; requires equal widths.
    InferSent,
}

impl CombineMode {
    pub fn out_width(&self, enc_width: usize) -> usize {
        match self {
            CombineMode::Concat => 2 * enc_width,
            CombineMode::InferSent => 4 * enc_width,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Side {
    Premise,
    Hypothesis,
}

/// Recurrent cell weights: `h_t = tanh(x_t · w_in + h_{t-1} · w_rec + bias)`.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct RnnParams {
    pub w_in: Parameter,
    pub w_rec: Parameter,
    pub bias: Parameter,
}

/// One encoder side: an embedding table plus optional recurrent weights.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SideParams {
    pub embedding: Parameter,
    pub rnn: Option<RnnParams>,
}

/// One-hidden-layer MLP: `log_softmax(tanh(x · w1 + b1) · w2 + b2)`.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct MlpParams {
    pub w1: Parameter,
    pub b1: Parameter,
    pub w2: Parameter,
    pub b2: Parameter,
}

/// All trainable state plus the fixed pieces needed to run it
/// (vocabulary, architecture switches, label space).
#[derive(Debug, Clone)]
pub struct ModelParams {
    pub vocab: Vocabulary,
    pub encoder: EncoderKind,
    pub combine: CombineMode,
    pub labels: Vec<String>,
    pub premise: SideParams,
    pub hypothesis: SideParams,
    pub classifier: MlpParams,
    pub hyp_head: MlpParams,
}

fn uniform_tensor(rng: &mut ChaCha8Rng, shape: Vec<usize>, half_width: f64) -> Tensor {
    let n: usize = shape.iter().product();
    let data = (0..n).map(|_| rng.gen_range(-half_width..half_width)).collect();
    Tensor::new(shape, data).expect("shape/data constructed together")
}

/// Embedding rows start at unit scale. Tokens must be well separated from
/// the first epoch: with near-zero rows the four synthetic input patterns
/// coincide and the pair classifier sits on a symmetry plateau it cannot
/// leave.
const EMBEDDING_INIT: f64 = 1.0;
/// Dense layers start small, as usual.
const WEIGHT_INIT: f64 = 0.1;

fn init_side(rng: &mut ChaCha8Rng, prefix: &str, group: ParamGroup, vocab: usize, kind: EncoderKind) -> SideParams {
    let dim = kind.dim();
    let embedding = Parameter::new(
        format!("{prefix}.embedding"),
        group,
        uniform_tensor(rng, vec![vocab, dim], EMBEDDING_INIT),
    );
    let rnn = match kind {
        EncoderKind::SimpleRecurrent { hidden, .. } => Some(RnnParams {
            w_in: Parameter::new(
                format!("{prefix}.rnn.w_in"),
                group,
                uniform_tensor(rng, vec![dim, hidden], WEIGHT_INIT),
            ),
            w_rec: Parameter::new(
                format!("{prefix}.rnn.w_rec"),
                group,
                uniform_tensor(rng, vec![hidden, hidden], WEIGHT_INIT),
            ),
            bias: Parameter::new(
                format!("{prefix}.rnn.bias"),
                group,
                Tensor::zeros(vec![hidden]),
            ),
        }),
        _ => None,
    };
    SideParams { embedding, rnn }
}

fn init_mlp(
    rng: &mut ChaCha8Rng,
    prefix: &str,
    group: ParamGroup,
    input: usize,
    hidden: usize,
    out: usize,
) -> MlpParams {
    MlpParams {
        w1: Parameter::new(
            format!("{prefix}.w1"),
            group,
            uniform_tensor(rng, vec![input, hidden], WEIGHT_INIT),
        ),
        b1: Parameter::new(format!("{prefix}.b1"), group, Tensor::zeros(vec![hidden])),
        w2: Parameter::new(
            format!("{prefix}.w2"),
            group,
            uniform_tensor(rng, vec![hidden, out], WEIGHT_INIT),
        ),
        b2: Parameter::new(format!("{prefix}.b2"), group, Tensor::zeros(vec![out])),
    }
}

impl ModelParams {
    /// Fresh model with uniform(-0.1, 0.1) weights and zero biases.
    pub fn init(
        vocab: Vocabulary,
        encoder: EncoderKind,
        combine: CombineMode,
        mlp_hidden: usize,
        labels: Vec<String>,
        rng: &mut ChaCha8Rng,
    ) -> Result<Self> {
        encoder.validate()?;
        if labels.len() < 2 {
            return Err(Error::invalid("need at least two labels"));
        }
        if mlp_hidden == 0 {
            return Err(Error::invalid("mlp hidden width must be positive"));
        }
        let v = vocab.len();
        let enc_w = encoder.out_width();
        let feat_w = combine.out_width(enc_w);
        let n_labels = labels.len();
        let premise = init_side(rng, "premise", ParamGroup::PremiseEncoder, v, encoder);
        let hypothesis = init_side(rng, "hypothesis", ParamGroup::HypothesisEncoder, v, encoder);
        let classifier = init_mlp(rng, "classifier", ParamGroup::Classifier, feat_w, mlp_hidden, n_labels);
        let hyp_head = init_mlp(rng, "hyp_head", ParamGroup::HypHead, enc_w, mlp_hidden, n_labels);
        Ok(ModelParams {
            vocab,
            encoder,
            combine,
            labels,
            premise,
            hypothesis,
            classifier,
            hyp_head,
        })
    }

    pub fn n_labels(&self) -> usize {
        self.labels.len()
    }

    pub fn label_index(&self, label: &str) -> Option<usize> {
        self.labels.iter().position(|l| l == label)
    }

    fn side(&self, side: Side) -> &SideParams {
        match side {
            Side::Premise => &self.premise,
            Side::Hypothesis => &self.hypothesis,
        }
    }

    /// All parameters in a fixed order.
    pub fn params(&self) -> Vec<&Parameter> {
        let mut out = Vec::new();
        for sp in [&self.premise, &self.hypothesis] {
            out.push(&sp.embedding);
            if let Some(r) = &sp.rnn {
                out.extend([&r.w_in, &r.w_rec, &r.bias]);
            }
        }
        for mlp in [&self.classifier, &self.hyp_head] {
            out.extend([&mlp.w1, &mlp.b1, &mlp.w2, &mlp.b2]);
        }
        out
    }

    pub fn params_mut(&mut self) -> Vec<&mut Parameter> {
        let mut out = Vec::new();
        for sp in [&mut self.premise, &mut self.hypothesis] {
            out.push(&mut sp.embedding);
            if let Some(r) = &mut sp.rnn {
                out.extend([&mut r.w_in, &mut r.w_rec, &mut r.bias]);
            }
        }
        for mlp in [&mut self.classifier, &mut self.hyp_head] {
            out.extend([&mut mlp.w1, &mut mlp.b1, &mut mlp.w2, &mut mlp.b2]);
        }
        out
    }

    pub fn group_params(&self, group: ParamGroup) -> Vec<&Parameter> {
        self.params().into_iter().filter(|p| p.group == group).collect()
    }

    // ── pure forward ────────────────────────────────────────────────

    /// Encode one token sequence with the designated side's encoder.
    pub fn encode(&self, tokens: &[usize], side: Side) -> Result<Vec<f64>> {
        if tokens.is_empty() {
            return Err(Error::Empty("token sequence"));
        }
        let sp = self.side(side);
        let table = &sp.embedding.value;
        let v = table.shape()[0];
        for &t in tokens {
            if t >= v {
                return Err(Error::TokenOutOfRange { index: t, size: v });
            }
        }
        let d = self.encoder.dim();
        match self.encoder {
            EncoderKind::BagOfEmbeddings { .. } | EncoderKind::MeanOfEmbeddings { .. } => {
                let mut out = vec![0.0; d];
                for &t in tokens {
                    let row = table.row(t);
                    for j in 0..d {
                        out[j] += row[j];
                    }
                }
                if matches!(self.encoder, EncoderKind::MeanOfEmbeddings { .. }) {
                    let inv = 1.0 / tokens.len() as f64;
                    for o in out.iter_mut() {
                        *o *= inv;
                    }
                }
                Ok(out)
            }
            EncoderKind::SimpleRecurrent { hidden, .. } => {
                let rnn = sp.rnn.as_ref().expect("recurrent params present");
                let mut h: Option<Vec<f64>> = None;
                for &t in tokens {
                    let mut pre = vec![0.0; hidden];
                    matvec_into(table.row(t), &rnn.w_in.value, &mut pre);
                    if let Some(prev) = &h {
                        let mut rec = vec![0.0; hidden];
                        matvec_into(prev, &rnn.w_rec.value, &mut rec);
                        for j in 0..hidden {
                            pre[j] += rec[j];
                        }
                    }
                    for j in 0..hidden {
                        pre[j] = (pre[j] + rnn.bias.value.data()[j]).tanh();
                    }
                    h = Some(pre);
                }
                Ok(h.expect("non-empty sequence"))
            }
        }
    }

    /// Log-probabilities from the pair classifier for given features.
    pub fn classify(&self, features: &[f64]) -> Result<Vec<f64>> {
        mlp_logprobs(features, &self.classifier)
    }

    /// Log-probabilities from the hypothesis-only head.
    pub fn hyp_head_logprobs(&self, hyp_encoding: &[f64]) -> Result<Vec<f64>> {
        mlp_logprobs(hyp_encoding, &self.hyp_head)
    }

    /// Full pair path: encode both sides, combine, classify.
    pub fn pair_logprobs(&self, premise: &[usize], hypothesis: &[usize]) -> Result<Vec<f64>> {
        let u = self.encode(premise, Side::Premise)?;
        let v = self.encode(hypothesis, Side::Hypothesis)?;
        let f = combine(&u, &v, self.combine)?;
        self.classify(&f)
    }

    /// Predicted label index; ties break toward the lowest index.
    pub fn predict(&self, premise: &[usize], hypothesis: &[usize]) -> Result<usize> {
        Ok(argmax(&self.pair_logprobs(premise, hypothesis)?))
    }

    /// Hypothesis-only prediction through the head.
    pub fn predict_hyp_only(&self, hypothesis: &[usize]) -> Result<usize> {
        let v = self.encode(hypothesis, Side::Hypothesis)?;
        Ok(argmax(&self.hyp_head_logprobs(&v)?))
    }

    // ── tape builders ───────────────────────────────────────────────

    /// Register every parameter on a tape. Training graphs are built from
    /// the returned node handles.
    pub fn register(&self, tape: &mut Tape) -> ModelNodes {
        let side = |tape: &mut Tape, sp: &SideParams| SideNodes {
            embedding: tape.param(&sp.embedding),
            rnn: sp.rnn.as_ref().map(|r| RnnNodes {
                w_in: tape.param(&r.w_in),
                w_rec: tape.param(&r.w_rec),
                bias: tape.param(&r.bias),
            }),
        };
        let mlp = |tape: &mut Tape, m: &MlpParams| MlpNodes {
            w1: tape.param(&m.w1),
            b1: tape.param(&m.b1),
            w2: tape.param(&m.w2),
            b2: tape.param(&m.b2),
        };
        ModelNodes {
            premise: side(tape, &self.premise),
            hypothesis: side(tape, &self.hypothesis),
            classifier: mlp(tape, &self.classifier),
            hyp_head: mlp(tape, &self.hyp_head),
            encoder: self.encoder,
            combine: self.combine,
        }
    }
}

/// Architecture switches without the data-dependent parts (vocabulary and
/// label space).
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ModelSpec {
    pub encoder: EncoderKind,
    pub combine: CombineMode,
    pub mlp_hidden: usize,
}

impl ModelSpec {
    /// The synthetic-experiment model: 10-dim character embeddings summed
    /// per string, pair represented by concatenation, MLPs of size 20.
    pub fn synthetic() -> Self {
        ModelSpec {
            encoder: EncoderKind::BagOfEmbeddings { dim: 10 },
            combine: CombineMode::Concat,
            mlp_hidden: 20,
        }
    }

    /// Desk-scale text model: a small recurrent encoder stands in for the
    /// full-size BiLSTM, with the richer pair features.
    pub fn text() -> Self {
        ModelSpec {
            encoder: EncoderKind::SimpleRecurrent { dim: 50, hidden: 64 },
            combine: CombineMode::InferSent,
            mlp_hidden: 64,
        }
    }

    pub fn build(
        &self,
        vocab: Vocabulary,
        labels: Vec<String>,
        seed: u64,
    ) -> Result<ModelParams> {
        use rand::SeedableRng;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        ModelParams::init(vocab, self.encoder, self.combine, self.mlp_hidden, labels, &mut rng)
    }
}

/// Combine premise and hypothesis encodings into classifier features.
pub fn combine(u: &[f64], v: &[f64], mode: CombineMode) -> Result<Vec<f64>> {
    match mode {
        CombineMode::Concat => {
            let mut out = Vec::with_capacity(u.len() + v.len());
            out.extend_from_slice(u);
            out.extend_from_slice(v);
            Ok(out)
        }
        CombineMode::InferSent => {
            if u.len() != v.len() {
                return Err(Error::ShapeMismatch {
                    op: "combine_infersent",
                    lhs: vec![u.len()],
                    rhs: vec![v.len()],
                });
            }
            let mut out = Vec::with_capacity(4 * u.len());
            out.extend_from_slice(u);
            out.extend_from_slice(v);
            out.extend(u.iter().zip(v).map(|(a, b)| a - b));
            out.extend(u.iter().zip(v).map(|(a, b)| a * b));
            Ok(out)
        }
    }
}

/// `out += x · w` for a rank-1 `x` and `[k, m]` matrix, accumulating in the
/// same order as the tape's matmul.
fn matvec_into(x: &[f64], w: &Tensor, out: &mut [f64]) {
    let m = w.shape()[1];
    for (k, &a) in x.iter().enumerate() {
        let row = &w.data()[k * m..(k + 1) * m];
        for j in 0..m {
            out[j] += a * row[j];
        }
    }
}

fn mlp_logprobs(x: &[f64], mlp: &MlpParams) -> Result<Vec<f64>> {
    if x.len() != mlp.w1.value.shape()[0] {
        return Err(Error::ShapeMismatch {
            op: "mlp",
            lhs: vec![x.len()],
            rhs: mlp.w1.value.shape().to_vec(),
        });
    }
    let hidden = mlp.w1.value.shape()[1];
    let out_w = mlp.w2.value.shape()[1];
    let mut h = vec![0.0; hidden];
    matvec_into(x, &mlp.w1.value, &mut h);
    for (j, v) in h.iter_mut().enumerate() {
        *v = (*v + mlp.b1.value.data()[j]).tanh();
    }
    let mut logits = vec![0.0; out_w];
    matvec_into(&h, &mlp.w2.value, &mut logits);
    for (j, v) in logits.iter_mut().enumerate() {
        *v += mlp.b2.value.data()[j];
    }
    let mut lp = vec![0.0; out_w];
    log_softmax_row(&logits, &mut lp);
    Ok(lp)
}

// ── node handles for graph building ─────────────────────────────────

pub struct RnnNodes {
    pub w_in: NodeId,
    pub w_rec: NodeId,
    pub bias: NodeId,
}

pub struct SideNodes {
    pub embedding: NodeId,
    pub rnn: Option<RnnNodes>,
}

pub struct MlpNodes {
    pub w1: NodeId,
    pub b1: NodeId,
    pub w2: NodeId,
    pub b2: NodeId,
}

pub struct ModelNodes {
    pub premise: SideNodes,
    pub hypothesis: SideNodes,
    pub classifier: MlpNodes,
    pub hyp_head: MlpNodes,
    encoder: EncoderKind,
    combine: CombineMode,
}

impl ModelNodes {
    fn side(&self, side: Side) -> &SideNodes {
        match side {
            Side::Premise => &self.premise,
            Side::Hypothesis => &self.hypothesis,
        }
    }

    /// Encode a batch of token sequences into an `[n, width]` matrix.
    pub fn encode_batch(
        &self,
        tape: &mut Tape,
        side: Side,
        token_lists: &[Vec<usize>],
    ) -> Result<NodeId> {
        for toks in token_lists {
            if toks.is_empty() {
                return Err(Error::Empty("token sequence"));
            }
        }
        let sn = self.side(side);
        match self.encoder {
            EncoderKind::BagOfEmbeddings { .. } => {
                tape.embed_bag(sn.embedding, token_lists.to_vec(), false)
            }
            EncoderKind::MeanOfEmbeddings { .. } => {
                tape.embed_bag(sn.embedding, token_lists.to_vec(), true)
            }
            EncoderKind::SimpleRecurrent { .. } => {
                let rnn = sn.rnn.as_ref().expect("recurrent params present");
                let mut finals = Vec::with_capacity(token_lists.len());
                for toks in token_lists {
                    let mut h: Option<NodeId> = None;
                    for &t in toks {
                        let x = tape.embed_bag(sn.embedding, vec![vec![t]], false)?;
                        let xin = tape.matmul(x, rnn.w_in)?;
                        let pre = match h {
                            Some(prev) => {
                                let rec = tape.matmul(prev, rnn.w_rec)?;
                                tape.add(xin, rec)?
                            }
                            None => xin,
                        };
                        let pre = tape.add_bias(pre, rnn.bias)?;
                        h = Some(tape.tanh(pre));
                    }
                    finals.push(h.expect("non-empty sequence"));
                }
                tape.stack_rows(finals)
            }
        }
    }

    /// Combine `[n, w]` encoding matrices into classifier features.
    pub fn combine_batch(&self, tape: &mut Tape, u: NodeId, v: NodeId) -> Result<NodeId> {
        match self.combine {
            CombineMode::Concat => tape.concat(vec![u, v]),
            CombineMode::InferSent => {
                if tape.value(u).cols() != tape.value(v).cols() {
                    return Err(Error::ShapeMismatch {
                        op: "combine_infersent",
                        lhs: tape.value(u).shape().to_vec(),
                        rhs: tape.value(v).shape().to_vec(),
                    });
                }
                let diff = tape.sub(u, v)?;
                let prod = tape.mul(u, v)?;
                tape.concat(vec![u, v, diff, prod])
            }
        }
    }

    fn mlp_batch(tape: &mut Tape, x: NodeId, nodes: &MlpNodes, block_params: bool) -> Result<NodeId> {
        let (w1, b1, w2, b2) = if block_params {
            (
                tape.grad_block(nodes.w1),
                tape.grad_block(nodes.b1),
                tape.grad_block(nodes.w2),
                tape.grad_block(nodes.b2),
            )
        } else {
            (nodes.w1, nodes.b1, nodes.w2, nodes.b2)
        };
        let h = tape.matmul(x, w1)?;
        let h = tape.add_bias(h, b1)?;
        let h = tape.tanh(h);
        let o = tape.matmul(h, w2)?;
        let o = tape.add_bias(o, b2)?;
        tape.log_softmax(o)
    }

    /// Pair-classifier log-probabilities for a feature matrix.
    pub fn classify_batch(&self, tape: &mut Tape, features: NodeId, block_params: bool) -> Result<NodeId> {
        Self::mlp_batch(tape, features, &self.classifier, block_params)
    }

    /// Hypothesis-only head log-probabilities for an encoding matrix.
    pub fn hyp_head_batch(&self, tape: &mut Tape, hyp_enc: NodeId, block_params: bool) -> Result<NodeId> {
        Self::mlp_batch(tape, hyp_enc, &self.hyp_head, block_params)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;

    fn small_model(encoder: EncoderKind, combine: CombineMode) -> ModelParams {
        let vocab = Vocabulary::from_tokens(["a", "b", "c"]);
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        ModelParams::init(
            vocab,
            encoder,
            combine,
            4,
            vec!["FALSE".into(), "TRUE".into()],
            &mut rng,
        )
        .unwrap()
    }

    #[test]
    fn bag_encode_singleton_and_repeat() {
        let m = small_model(EncoderKind::BagOfEmbeddings { dim: 3 }, CombineMode::Concat);
        let e2 = m.premise.embedding.value.row(2).to_vec();
        let single = m.encode(&[2], Side::Premise).unwrap();
        assert_eq!(single, e2);
        let double = m.encode(&[2, 2], Side::Premise).unwrap();
        for (d, e) in double.iter().zip(&e2) {
            assert!((d - 2.0 * e).abs() < 1e-15);
        }
    }

    #[test]
    fn mean_encode_averages() {
        let m = small_model(EncoderKind::MeanOfEmbeddings { dim: 3 }, CombineMode::Concat);
        let e2 = m.hypothesis.embedding.value.row(2).to_vec();
        let e3 = m.hypothesis.embedding.value.row(3).to_vec();
        let got = m.encode(&[2, 3], Side::Hypothesis).unwrap();
        for ((g, a), b) in got.iter().zip(&e2).zip(&e3) {
            assert!((g - (a + b) / 2.0).abs() < 1e-15);
        }
    }

    #[test]
    fn encode_rejects_empty_and_out_of_range() {
        let m = small_model(EncoderKind::BagOfEmbeddings { dim: 3 }, CombineMode::Concat);
        assert!(matches!(m.encode(&[], Side::Premise), Err(Error::Empty(_))));
        assert!(matches!(
            m.encode(&[99], Side::Premise),
            Err(Error::TokenOutOfRange { .. })
        ));
    }

    #[test]
    fn bag_encode_is_order_invariant() {
        let m = small_model(EncoderKind::BagOfEmbeddings { dim: 3 }, CombineMode::Concat);
        let a = m.encode(&[2, 3, 4], Side::Premise).unwrap();
        let b = m.encode(&[4, 2, 3], Side::Premise).unwrap();
        for (x, y) in a.iter().zip(&b) {
            assert!((x - y).abs() < 1e-12);
        }
    }

    #[test]
    fn combine_concat_and_infersent() {
        assert_eq!(
            combine(&[1.0, 2.0], &[3.0, 4.0], CombineMode::Concat).unwrap(),
            vec![1.0, 2.0, 3.0, 4.0]
        );
        assert_eq!(
            combine(&[1.0, 2.0], &[1.0, 2.0], CombineMode::InferSent).unwrap(),
            vec![1.0, 2.0, 1.0, 2.0, 0.0, 0.0, 1.0, 4.0]
        );
        assert_eq!(
            combine(&[2.0], &[3.0], CombineMode::InferSent).unwrap(),
            vec![2.0, 3.0, -1.0, 6.0]
        );
        assert!(combine(&[1.0], &[1.0, 2.0], CombineMode::InferSent).is_err());
    }

    #[test]
    fn classify_zero_params_is_uniform() {
        let mut m = small_model(EncoderKind::BagOfEmbeddings { dim: 3 }, CombineMode::Concat);
        for p in m.params_mut() {
            for v in p.value.data_mut() {
                *v = 0.0;
            }
        }
        let lp = m.classify(&[0.5, -0.5, 1.0, 0.0, 0.0, 2.0]).unwrap();
        let ln2 = std::f64::consts::LN_2;
        assert!((lp[0] + ln2).abs() < 1e-12);
        assert!((lp[1] + ln2).abs() < 1e-12);
    }

    #[test]
    fn classify_output_bias_passes_through() {
        let mut m = small_model(EncoderKind::BagOfEmbeddings { dim: 3 }, CombineMode::Concat);
        for p in m.params_mut() {
            for v in p.value.data_mut() {
                *v = 0.0;
            }
        }
        m.classifier.b2.value.data_mut()[1] = 1.0;
        let lp = m.classify(&[1.0; 6]).unwrap();
        let mut expect = [0.0; 2];
        log_softmax_row(&[0.0, 1.0], &mut expect);
        assert!((lp[0] - expect[0]).abs() < 1e-12);
        assert!((lp[1] - expect[1]).abs() < 1e-12);
    }

    #[test]
    fn classify_normalizes_for_any_input() {
        let m = small_model(EncoderKind::BagOfEmbeddings { dim: 3 }, CombineMode::Concat);
        let lp = m.classify(&[3.0, -2.0, 0.5, 8.0, -1.0, 0.0]).unwrap();
        let total: f64 = lp.iter().map(|v| v.exp()).sum();
        assert!((total - 1.0).abs() < 1e-9);
    }

    #[test]
    fn hyp_head_uniform_with_zero_params() {
        let vocab = Vocabulary::from_tokens(["a", "b"]);
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let mut m = ModelParams::init(
            vocab,
            EncoderKind::BagOfEmbeddings { dim: 2 },
            CombineMode::Concat,
            4,
            vec!["x".into(), "y".into(), "z".into()],
            &mut rng,
        )
        .unwrap();
        for p in [&mut m.hyp_head.w1, &mut m.hyp_head.b1, &mut m.hyp_head.w2, &mut m.hyp_head.b2] {
            for v in p.value.data_mut() {
                *v = 0.0;
            }
        }
        let lp = m.hyp_head_logprobs(&[0.3, -0.7]).unwrap();
        let ln3 = 3.0_f64.ln();
        for v in lp {
            assert!((v + ln3).abs() < 1e-12);
        }
    }

    #[test]
    fn hyp_head_ignores_premise_params() {
        let mut m = small_model(EncoderKind::BagOfEmbeddings { dim: 3 }, CombineMode::Concat);
        let enc = m.encode(&[2, 4], Side::Hypothesis).unwrap();
        let before = m.hyp_head_logprobs(&enc).unwrap();
        for v in m.premise.embedding.value.data_mut() {
            *v += 17.0;
        }
        let enc_after = m.encode(&[2, 4], Side::Hypothesis).unwrap();
        let after = m.hyp_head_logprobs(&enc_after).unwrap();
        assert_eq!(before, after);
    }

    #[test]
    fn predict_tie_breaks_low_and_argmax() {
        // With all-zero parameters every pair yields uniform logits, so the
        // tie rule picks label 0.
        let mut m = small_model(EncoderKind::BagOfEmbeddings { dim: 3 }, CombineMode::Concat);
        for p in m.params_mut() {
            for v in p.value.data_mut() {
                *v = 0.0;
            }
        }
        assert_eq!(m.predict(&[2], &[3]).unwrap(), 0);
    }

    #[test]
    fn param_groups_partition_by_id() {
        use std::collections::HashSet;
        for enc in [
            EncoderKind::BagOfEmbeddings { dim: 3 },
            EncoderKind::SimpleRecurrent { dim: 3, hidden: 5 },
        ] {
            let m = small_model(enc, CombineMode::Concat);
            let all = m.params();
            let ids: HashSet<&str> = all.iter().map(|p| p.id.as_str()).collect();
            assert_eq!(ids.len(), all.len(), "duplicate parameter ids");
            let mut by_group = 0;
            for g in ParamGroup::ALL {
                by_group += m.group_params(g).len();
            }
            assert_eq!(by_group, all.len());
            assert!(m
                .group_params(ParamGroup::HypHead)
                .iter()
                .all(|p| !p.group.is_theta()));
        }
    }

    #[test]
    fn recurrent_encode_matches_tape_path() {
        let m = small_model(
            EncoderKind::SimpleRecurrent { dim: 3, hidden: 5 },
            CombineMode::Concat,
        );
        let tokens = vec![2usize, 3, 4, 2];
        let pure = m.encode(&tokens, Side::Hypothesis).unwrap();
        let mut tape = Tape::new();
        let nodes = m.register(&mut tape);
        let enc = nodes
            .encode_batch(&mut tape, Side::Hypothesis, &[tokens])
            .unwrap();
        let graph = tape.value(enc).row(0);
        for (a, b) in pure.iter().zip(graph) {
            assert_eq!(a, b, "pure and tape encoders disagree");
        }
    }

    #[test]
    fn batch_classify_matches_pure_path() {
        let m = small_model(EncoderKind::BagOfEmbeddings { dim: 3 }, CombineMode::InferSent);
        let prem = vec![vec![2usize], vec![3, 4]];
        let hyp = vec![vec![3usize], vec![2, 2]];
        let mut tape = Tape::new();
        let nodes = m.register(&mut tape);
        let u = nodes.encode_batch(&mut tape, Side::Premise, &prem).unwrap();
        let v = nodes.encode_batch(&mut tape, Side::Hypothesis, &hyp).unwrap();
        let f = nodes.combine_batch(&mut tape, u, v).unwrap();
        let lp = nodes.classify_batch(&mut tape, f, false).unwrap();
        for i in 0..2 {
            let pure = m.pair_logprobs(&prem[i], &hyp[i]).unwrap();
            for (a, b) in pure.iter().zip(tape.value(lp).row(i)) {
                assert_eq!(a, b);
            }
        }
    }
}
