//! The three training objectives and the SGD loop.
//!
//! All three minimize a composite scalar whose backward pass routes
//! per-group gradients exactly as the objectives demand. Writing `nll(...)`
//! for the mean negative log-likelihood and `adv` for the hypothesis-only
//! head:
//!
//! * **baseline** — `nll(pairs)`. Only theta groups receive gradient; the
//!   hypothesis-only head gets exact zeros.
//! * **method1** (adversarial hypothesis-only head) — the adversary's loss
//!   enters the composite at weight `beta`, twice, over one shared
//!   hypothesis encoding: a head-update branch whose input is
//!   gradient-blocked, so the head descends `beta * nll(adv)`, and an
//!   encoder branch with the head parameters blocked and the encoding
//!   passed through gradient reversal at scale `alpha`. The hypothesis
//!   encoder therefore receives exactly `-alpha` times the unreversed
//!   gradient of the `beta`-weighted adversary loss (an effective ascent
//!   coupling of `alpha * beta`), while theta otherwise descends
//!   `nll(pairs)`.
//! * **method2** (negative premise sampling) — exactly `floor(alpha * n)`
//!   batch examples get their premise replaced by one sampled uniformly
//!   from *other* training examples, labels kept, totals unchanged.
//!   Unswapped examples contribute plain NLL weighted `1 - alpha`. Swapped
//!   examples run through the shared classifier twice, both times at
//!   weight `beta`: once with both encodings blocked so the classifier
//!   itself learns the artifacts, and once with the classifier blocked,
//!   the premise encoding blocked, and the hypothesis encoding reversed at
//!   scale `alpha`, mirroring method1's routing. The premise encoder never
//!   hears about swapped terms at all.

use std::collections::BTreeMap;
use std::fmt;
use std::str::FromStr;

use rand::seq::SliceRandom;
use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::data::{Dataset, LabelMap};
use crate::error::{Error, Result};
use crate::model::{ModelParams, Side};
use crate::tape::{GradientMap, NodeId, ParamGroup, Tape};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Method {
    Baseline,
    /// Hypothesis-only adversary through gradient reversal.
    Method1,
    /// Negative premise sampling with gradient blocking.
    Method2,
}

impl FromStr for Method {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "baseline" => Ok(Method::Baseline),
            "method1" => Ok(Method::Method1),
            "method2" => Ok(Method::Method2),
            other => Err(Error::invalid(format!(
                "unknown method {other:?} (expected baseline, method1 or method2)"
            ))),
        }
    }
}

impl fmt::Display for Method {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Method::Baseline => "baseline",
            Method::Method1 => "method1",
            Method::Method2 => "method2",
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum BatchMode {
    Full,
    Size(usize),
}

impl FromStr for BatchMode {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        if s == "full" {
            return Ok(BatchMode::Full);
        }
        let n: usize = s
            .parse()
            .map_err(|_| Error::invalid(format!("bad batch size {s:?}")))?;
        if n == 0 {
            return Err(Error::invalid("batch size must be positive"));
        }
        Ok(BatchMode::Size(n))
    }
}

impl fmt::Display for BatchMode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            BatchMode::Full => f.write_str("full"),
            BatchMode::Size(n) => write!(f, "{n}"),
        }
    }
}

/// Stopping rule, always bounded by `max_epochs`.
///
/// Plain discriminative runs (baseline, or a debiasing method with
/// `alpha * beta == 0`) stop once train accuracy holds `acc_target` for
/// `acc_patience` consecutive epochs, or once the train loss moves less
/// than `min_loss_delta` between epochs.
///
/// Adversarial runs stop when the *game* is over, not when the data is
/// first fit: train accuracy at target while the adversary sits at chance
/// (within `adv_chance_margin`), sustained for `acc_patience` epochs. A
/// biased model fits the training set early with a confident adversary, so
/// bare accuracy would stop every run at the artifact solution; and the
/// loss keeps creeping for as long as the two sides trade gradient, so a
/// loss-delta rule either fires mid-fight or never. Runs whose adversary
/// never reaches chance time out at `max_epochs` still biased, which is
/// exactly the observable the sweep grids report.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ConvergenceRule {
    pub acc_target: f64,
    pub acc_patience: usize,
    pub min_loss_delta: f64,
    /// How far above chance the adversary may sit and still count as
    /// defeated.
    pub adv_chance_margin: f64,
}

impl Default for ConvergenceRule {
    fn default() -> Self {
        ConvergenceRule {
            acc_target: 1.0,
            acc_patience: 10,
            min_loss_delta: 1e-8,
            adv_chance_margin: 0.05,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrainConfig {
    pub method: Method,
    pub alpha: f64,
    pub beta: f64,
    pub lr: f64,
    pub max_epochs: usize,
    pub batch: BatchMode,
    pub seed: u64,
    /// Epochs between dev evaluations.
    pub eval_each: usize,
    pub stop: ConvergenceRule,
}

impl TrainConfig {
    /// Defaults for the synthetic experiments: full-batch SGD at lr 0.1,
    /// up to 2000 epochs.
    pub fn synthetic(method: Method, alpha: f64, beta: f64, seed: u64) -> Self {
        TrainConfig {
            method,
            alpha,
            beta,
            lr: 0.1,
            max_epochs: 2000,
            batch: BatchMode::Full,
            seed,
            eval_each: 1,
            stop: ConvergenceRule::default(),
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.alpha < 0.0 || !self.alpha.is_finite() {
            return Err(Error::invalid("alpha must be a non-negative real"));
        }
        if self.beta < 0.0 || !self.beta.is_finite() {
            return Err(Error::invalid("beta must be a non-negative real"));
        }
        if self.method == Method::Method2 && self.alpha > 1.0 {
            return Err(Error::invalid(format!(
                "method2 requires alpha in [0, 1], got {}",
                self.alpha
            )));
        }
        if self.lr < 0.0 || !self.lr.is_finite() {
            return Err(Error::invalid("lr must be non-negative"));
        }
        if self.max_epochs == 0 {
            return Err(Error::invalid("max_epochs must be positive"));
        }
        if self.eval_each == 0 {
            return Err(Error::invalid("eval_each must be positive"));
        }
        Ok(())
    }

    fn summary(&self) -> String {
        format!(
            "method={} alpha={} beta={} lr={} seed={}",
            self.method, self.alpha, self.beta, self.lr, self.seed
        )
    }
}

/// One premise substitution: `example`'s premise was replaced by
/// `donor`'s. Indices refer to the training pool.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct SwapRecord {
    pub example: usize,
    pub donor: usize,
    pub epoch: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct EpochRow {
    pub epoch: usize,
    /// Mean NLL of the model on the real (unswapped) premise-hypothesis
    /// pairs of the full training set.
    pub main_loss: f64,
    /// Mean NLL of the adversary component, when the method has one.
    pub adv_loss: Option<f64>,
    pub train_acc: f64,
    /// Accuracy of the adversary (hypothesis-only head for method1, shared
    /// classifier on this epoch's swapped pairs for method2).
    pub adv_acc: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct TrainReport {
    pub rows: Vec<EpochRow>,
    pub epochs_run: usize,
    pub converged: bool,
    /// Tokens that fell back to UNK while indexing the training set.
    pub oov_tokens: usize,
}

impl TrainReport {
    pub fn to_csv(&self) -> String {
        let mut out = String::from("epoch,main_loss,adv_loss,train_acc\n");
        for r in &self.rows {
            let adv = r.adv_loss.map(|v| v.to_string()).unwrap_or_default();
            out.push_str(&format!("{},{},{},{}\n", r.epoch, r.main_loss, adv, r.train_acc));
        }
        out
    }
}

/// A dataset example mapped into model space.
#[derive(Debug, Clone)]
pub struct IndexedExample {
    pub premise: Vec<usize>,
    pub hypothesis: Vec<usize>,
    pub label: usize,
}

/// Map a dataset through the model's vocabulary and label space. Unknown
/// tokens become UNK (counted, never fatal); unknown gold labels are an
/// error.
pub fn index_dataset(ds: &Dataset, model: &ModelParams) -> Result<(Vec<IndexedExample>, usize)> {
    let mut out = Vec::with_capacity(ds.len());
    let mut oov = 0;
    for e in &ds.examples {
        let label = model
            .label_index(&e.label)
            .ok_or_else(|| Error::UnmappedLabel(e.label.clone()))?;
        let (premise, o1) = model.vocab.encode(&e.premise);
        let (hypothesis, o2) = model.vocab.encode(&e.hypothesis);
        oov += o1 + o2;
        out.push(IndexedExample {
            premise,
            hypothesis,
            label,
        });
    }
    Ok((out, oov))
}

// ── loss graphs ──────────────────────────────────────────────────────

/// A recorded loss with handles to the nodes tests and logging care about.
pub struct BuiltLoss {
    pub tape: Tape,
    pub root: NodeId,
    /// Mean NLL over the real-pair term (absent when every example was
    /// swapped).
    pub main_nll: Option<NodeId>,
    /// Mean NLL of the adversary component (hypothesis-only head for
    /// method1, swapped pairs for method2).
    pub adv_nll: Option<NodeId>,
    /// Hypothesis encodings feeding the adversary component, pre-reversal.
    pub adv_hyp_enc: Option<NodeId>,
}

fn gather<'a>(
    pool: &'a [IndexedExample],
    batch: &[usize],
) -> (Vec<Vec<usize>>, Vec<Vec<usize>>, Vec<usize>) {
    let premises = batch.iter().map(|&i| pool[i].premise.clone()).collect();
    let hyps = batch.iter().map(|&i| pool[i].hypothesis.clone()).collect();
    let targets = batch.iter().map(|&i| pool[i].label).collect();
    (premises, hyps, targets)
}

/// Build the training loss for `batch` (indices into `pool`). `swaps` must
/// be empty unless the method is method2, and every swapped example must be
/// a member of the batch.
pub fn build_loss(
    model: &ModelParams,
    pool: &[IndexedExample],
    batch: &[usize],
    method: Method,
    alpha: f64,
    beta: f64,
    swaps: &[SwapRecord],
) -> Result<BuiltLoss> {
    if batch.is_empty() {
        return Err(Error::Empty("batch"));
    }
    let mut tape = Tape::new();
    let nodes = model.register(&mut tape);

    match method {
        Method::Baseline | Method::Method1 => {
            let (premises, hyps, targets) = gather(pool, batch);
            let u = nodes.encode_batch(&mut tape, Side::Premise, &premises)?;
            let h = nodes.encode_batch(&mut tape, Side::Hypothesis, &hyps)?;
            let f = nodes.combine_batch(&mut tape, u, h)?;
            let lp = nodes.classify_batch(&mut tape, f, false)?;
            let nll = tape.nll_pick(lp, targets.clone())?;
            let main = tape.mean(nll);

            if method == Method::Baseline {
                return Ok(BuiltLoss {
                    tape,
                    root: main,
                    main_nll: Some(main),
                    adv_nll: None,
                    adv_hyp_enc: None,
                });
            }

            // Head-update branch: the head descends its NLL at weight beta;
            // the encoding is blocked so no theta gradient leaks through.
            let h_blocked = tape.grad_block(h);
            let lp_head = nodes.hyp_head_batch(&mut tape, h_blocked, false)?;
            let nll_head = tape.nll_pick(lp_head, targets.clone())?;
            let adv = tape.mean(nll_head);
            let adv_scaled = tape.scale(adv, beta)?;

            // Encoder branch: the same beta-weighted adversary loss with
            // the head parameters blocked and the encoding reversed at
            // scale alpha, sending the hypothesis encoder *up* the
            // adversary's objective.
            let h_reversed = tape.grad_reverse(h, alpha)?;
            let lp_rev = nodes.hyp_head_batch(&mut tape, h_reversed, true)?;
            let nll_rev = tape.nll_pick(lp_rev, targets)?;
            let rev = tape.mean(nll_rev);
            let rev_scaled = tape.scale(rev, beta)?;

            let partial = tape.add(main, adv_scaled)?;
            let root = tape.add(partial, rev_scaled)?;
            Ok(BuiltLoss {
                tape,
                root,
                main_nll: Some(main),
                adv_nll: Some(adv),
                adv_hyp_enc: Some(h),
            })
        }
        Method::Method2 => {
            let swapped: BTreeMap<usize, usize> =
                swaps.iter().map(|s| (s.example, s.donor)).collect();
            let mut unswapped_idx = Vec::new();
            let mut swapped_idx = Vec::new();
            for &i in batch {
                if swapped.contains_key(&i) {
                    swapped_idx.push(i);
                } else {
                    unswapped_idx.push(i);
                }
            }
            let n = batch.len() as f64;
            let (n_u, n_s) = (unswapped_idx.len() as f64, swapped_idx.len() as f64);
            let mut terms: Vec<NodeId> = Vec::new();
            let mut main_nll = None;
            let mut adv_nll = None;
            let mut adv_hyp_enc = None;

            if !unswapped_idx.is_empty() {
                let (premises, hyps, targets) = gather(pool, &unswapped_idx);
                let u = nodes.encode_batch(&mut tape, Side::Premise, &premises)?;
                let h = nodes.encode_batch(&mut tape, Side::Hypothesis, &hyps)?;
                let f = nodes.combine_batch(&mut tape, u, h)?;
                let lp = nodes.classify_batch(&mut tape, f, false)?;
                let nll = tape.nll_pick(lp, targets)?;
                let mean = tape.mean(nll);
                main_nll = Some(mean);
                terms.push(tape.scale(mean, (1.0 - alpha) * (n_u / n))?);
            }

            if !swapped_idx.is_empty() {
                let donor_premises: Vec<Vec<usize>> = swapped_idx
                    .iter()
                    .map(|i| pool[swapped[i]].premise.clone())
                    .collect();
                let hyps: Vec<Vec<usize>> = swapped_idx
                    .iter()
                    .map(|&i| pool[i].hypothesis.clone())
                    .collect();
                let targets: Vec<usize> = swapped_idx.iter().map(|&i| pool[i].label).collect();

                // The premise encoder never learns from sampled premises.
                let u = nodes.encode_batch(&mut tape, Side::Premise, &donor_premises)?;
                let u_blocked = tape.grad_block(u);
                let h = nodes.encode_batch(&mut tape, Side::Hypothesis, &hyps)?;

                // Classifier-update branch: the shared classifier descends
                // the swapped-pair NLL at weight beta, learning the
                // artifacts; both encodings are blocked.
                let h_blocked = tape.grad_block(h);
                let f_learn = nodes.combine_batch(&mut tape, u_blocked, h_blocked)?;
                let lp_learn = nodes.classify_batch(&mut tape, f_learn, false)?;
                let nll_learn = tape.nll_pick(lp_learn, targets.clone())?;
                let mean_learn = tape.mean(nll_learn);
                adv_nll = Some(mean_learn);
                terms.push(tape.scale(mean_learn, beta * (n_s / n))?);

                // Encoder branch: the same beta-weighted swapped-pair loss
                // with the classifier blocked and the hypothesis encoding
                // reversed at scale alpha.
                let h_reversed = tape.grad_reverse(h, alpha)?;
                let f_rev = nodes.combine_batch(&mut tape, u_blocked, h_reversed)?;
                let lp_rev = nodes.classify_batch(&mut tape, f_rev, true)?;
                let nll_rev = tape.nll_pick(lp_rev, targets)?;
                let mean_rev = tape.mean(nll_rev);
                terms.push(tape.scale(mean_rev, beta * (n_s / n))?);
                adv_hyp_enc = Some(h);
            }

            let mut root = terms[0];
            for t in &terms[1..] {
                root = tape.add(root, *t)?;
            }
            Ok(BuiltLoss {
                tape,
                root,
                main_nll,
                adv_nll,
                adv_hyp_enc,
            })
        }
    }
}

/// Pick exactly `floor(alpha * batch.len())` batch members by seeded
/// shuffle and draw each a donor uniformly from the other pool entries.
pub fn select_swaps(
    batch: &[usize],
    pool_len: usize,
    alpha: f64,
    epoch: usize,
    rng: &mut ChaCha8Rng,
) -> Result<Vec<SwapRecord>> {
    let count = (alpha * batch.len() as f64).floor() as usize;
    if count == 0 {
        return Ok(Vec::new());
    }
    if pool_len < 2 {
        return Err(Error::invalid(
            "premise sampling needs at least two training examples",
        ));
    }
    let mut order: Vec<usize> = batch.to_vec();
    order.shuffle(rng);
    let mut chosen: Vec<usize> = order.into_iter().take(count).collect();
    chosen.sort_unstable();
    let mut swaps = Vec::with_capacity(count);
    for example in chosen {
        let donor = (example + 1 + rng.gen_range(0..pool_len - 1)) % pool_len;
        swaps.push(SwapRecord {
            example,
            donor,
            epoch,
        });
    }
    Ok(swaps)
}

/// One SGD update: `param <- param - lr * grad`.
pub fn sgd_step(model: &mut ModelParams, grads: &GradientMap, lr: f64) {
    for p in model.params_mut() {
        if let Some(g) = grads.get(&p.id) {
            for (v, gv) in p.value.data_mut().iter_mut().zip(g.data()) {
                *v -= lr * gv;
            }
        }
    }
}

/// Accuracy and mean real-pair NLL over indexed examples, computed with
/// the pure forward path.
pub fn train_metrics(model: &ModelParams, examples: &[IndexedExample]) -> Result<(f64, f64)> {
    let mut correct = 0usize;
    let mut nll_sum = 0.0;
    for e in examples {
        let lp = model.pair_logprobs(&e.premise, &e.hypothesis)?;
        if crate::tensor::argmax(&lp) == e.label {
            correct += 1;
        }
        nll_sum += -lp[e.label];
    }
    let n = examples.len() as f64;
    Ok((correct as f64 / n, nll_sum / n))
}

/// Hypothesis-only head accuracy over the pool (method1's adversary).
fn head_accuracy(model: &ModelParams, pool: &[IndexedExample]) -> Result<f64> {
    let mut correct = 0usize;
    for e in pool {
        if model.predict_hyp_only(&e.hypothesis)? == e.label {
            correct += 1;
        }
    }
    Ok(correct as f64 / pool.len() as f64)
}

/// Shared-classifier accuracy on swapped pairs (method2's adversary).
fn swapped_accuracy(model: &ModelParams, pool: &[IndexedExample], swaps: &[SwapRecord]) -> Result<f64> {
    let mut correct = 0usize;
    for s in swaps {
        let p = model.predict(&pool[s.donor].premise, &pool[s.example].hypothesis)?;
        if p == pool[s.example].label {
            correct += 1;
        }
    }
    Ok(correct as f64 / swaps.len() as f64)
}

/// Train `model` on `train_ds`. When `dev` is given, the best-on-dev
/// snapshot is returned (ties go to the later epoch); otherwise the final
/// parameters are.
pub fn train(
    train_ds: &Dataset,
    dev: Option<&Dataset>,
    mut model: ModelParams,
    cfg: &TrainConfig,
) -> Result<(ModelParams, TrainReport)> {
    cfg.validate()?;
    if train_ds.is_empty() {
        return Err(Error::Empty("training set"));
    }
    let (pool, oov_tokens) = index_dataset(train_ds, &model)?;
    let n = pool.len();
    let chance = 1.0 / model.n_labels() as f64;
    let adversarial = cfg.method != Method::Baseline && cfg.alpha > 0.0 && cfg.beta > 0.0;
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut report = TrainReport {
        oov_tokens,
        ..TrainReport::default()
    };
    let mut best: Option<(f64, ModelParams)> = None;
    let mut streak = 0usize;
    let mut prev_loss: Option<f64> = None;

    for epoch in 1..=cfg.max_epochs {
        let batches: Vec<Vec<usize>> = match cfg.batch {
            BatchMode::Full => vec![(0..n).collect()],
            BatchMode::Size(b) => {
                let mut order: Vec<usize> = (0..n).collect();
                order.shuffle(&mut rng);
                order.chunks(b).map(|c| c.to_vec()).collect()
            }
        };

        let mut adv_weighted = 0.0;
        let mut adv_count = 0usize;
        let mut epoch_swaps: Vec<SwapRecord> = Vec::new();
        for batch in &batches {
            let swaps = if cfg.method == Method::Method2 {
                select_swaps(batch, n, cfg.alpha, epoch, &mut rng)?
            } else {
                Vec::new()
            };
            let mut built = build_loss(&model, &pool, batch, cfg.method, cfg.alpha, cfg.beta, &swaps)?;
            epoch_swaps.extend_from_slice(&swaps);
            let root_value = built.tape.value(built.root).item();
            if !root_value.is_finite() {
                return Err(Error::Diverged {
                    epoch,
                    detail: format!("loss {root_value} ({})", cfg.summary()),
                });
            }
            if let Some(adv) = built.adv_nll {
                adv_weighted += built.tape.value(adv).item() * batch.len() as f64;
                adv_count += batch.len();
            }
            let grads = built.tape.backward(built.root)?;
            sgd_step(&mut model, &grads, cfg.lr);
        }

        let (train_acc, main_loss) = train_metrics(&model, &pool)?;
        if !main_loss.is_finite() {
            return Err(Error::Diverged {
                epoch,
                detail: format!("train NLL {main_loss} ({})", cfg.summary()),
            });
        }
        let adv_loss = (adv_count > 0).then(|| adv_weighted / adv_count as f64);
        let adv_acc = match cfg.method {
            Method::Method1 if adversarial => Some(head_accuracy(&model, &pool)?),
            Method::Method2 if adversarial && !epoch_swaps.is_empty() => {
                Some(swapped_accuracy(&model, &pool, &epoch_swaps)?)
            }
            _ => None,
        };
        report.rows.push(EpochRow {
            epoch,
            main_loss,
            adv_loss,
            train_acc,
            adv_acc,
        });
        report.epochs_run = epoch;

        // Convergence bookkeeping; see ConvergenceRule.
        let mut loss_settled = false;
        match adv_acc {
            Some(a) => {
                let game_over =
                    train_acc >= cfg.stop.acc_target && a <= chance + cfg.stop.adv_chance_margin;
                streak = if game_over { streak + 1 } else { 0 };
            }
            None => {
                streak = if train_acc >= cfg.stop.acc_target {
                    streak + 1
                } else {
                    0
                };
                loss_settled = prev_loss
                    .map(|p| (p - main_loss).abs() < cfg.stop.min_loss_delta)
                    .unwrap_or(false);
            }
        }
        prev_loss = Some(main_loss);
        let stopping = streak >= cfg.stop.acc_patience || loss_settled;
        if stopping {
            report.converged = true;
        }

        if let Some(dev_ds) = dev {
            if epoch % cfg.eval_each == 0 || stopping || epoch == cfg.max_epochs {
                let acc = evaluate(&model, dev_ds, LabelMap::Identity)?;
                let improved = best.as_ref().map(|(b, _)| acc >= *b).unwrap_or(true);
                if improved {
                    best = Some((acc, model.clone()));
                }
            }
        }
        if stopping {
            break;
        }
    }

    let final_model = match best {
        Some((_, snapshot)) => snapshot,
        None => model,
    };
    Ok((final_model, report))
}

/// Continue training a pretrained model on a target subset with the plain
/// baseline objective. A zero-size subset returns the model unchanged.
pub fn fine_tune(
    pretrained: ModelParams,
    subset: &Dataset,
    cfg: &TrainConfig,
) -> Result<(ModelParams, TrainReport)> {
    if subset.is_empty() {
        return Ok((pretrained, TrainReport::default()));
    }
    let mut cfg = cfg.clone();
    cfg.method = Method::Baseline;
    train(subset, None, pretrained, &cfg)
}

/// Fraction of examples whose mapped prediction equals the gold label.
pub fn evaluate(model: &ModelParams, ds: &Dataset, map: LabelMap) -> Result<f64> {
    if ds.is_empty() {
        return Err(Error::Empty("evaluation set"));
    }
    let mut correct = 0usize;
    for e in &ds.examples {
        let (p, _) = model.vocab.encode(&e.premise);
        let (h, _) = model.vocab.encode(&e.hypothesis);
        let predicted = model.predict(&p, &h)?;
        let mapped = map.apply(&model.labels[predicted])?;
        if mapped == e.label {
            correct += 1;
        }
    }
    Ok(correct as f64 / ds.len() as f64)
}

// ── explicit per-group objectives (the oracle side) ─────────────────

/// Mean NLL of the real pairs in `batch`, via the pure forward path.
pub fn nll_real_pairs(model: &ModelParams, pool: &[IndexedExample], batch: &[usize]) -> Result<f64> {
    let mut sum = 0.0;
    for &i in batch {
        let lp = model.pair_logprobs(&pool[i].premise, &pool[i].hypothesis)?;
        sum += -lp[pool[i].label];
    }
    Ok(sum / batch.len() as f64)
}

/// Mean NLL of the hypothesis-only head over `batch`.
pub fn nll_hyp_only(model: &ModelParams, pool: &[IndexedExample], batch: &[usize]) -> Result<f64> {
    let mut sum = 0.0;
    for &i in batch {
        let enc = model.encode(&pool[i].hypothesis, Side::Hypothesis)?;
        let lp = model.hyp_head_logprobs(&enc)?;
        sum += -lp[pool[i].label];
    }
    Ok(sum / batch.len() as f64)
}

/// Sum of NLL over swapped pairs (donor premise, original hypothesis and
/// label).
fn nll_swapped_sum(model: &ModelParams, pool: &[IndexedExample], swaps: &[SwapRecord]) -> Result<f64> {
    let mut sum = 0.0;
    for s in swaps {
        let lp = model.pair_logprobs(&pool[s.donor].premise, &pool[s.example].hypothesis)?;
        sum += -lp[pool[s.example].label];
    }
    Ok(sum)
}

/// The explicit minimization objective each parameter group follows, as a
/// pure function of the parameters. The analytic gradients of
/// [`build_loss`] must match central differences of these.
pub fn group_objective(
    model: &ModelParams,
    pool: &[IndexedExample],
    batch: &[usize],
    method: Method,
    alpha: f64,
    beta: f64,
    swaps: &[SwapRecord],
    group: ParamGroup,
) -> Result<f64> {
    match method {
        Method::Baseline => match group {
            ParamGroup::HypHead => Ok(0.0),
            _ => nll_real_pairs(model, pool, batch),
        },
        Method::Method1 => match group {
            ParamGroup::HypHead => Ok(beta * nll_hyp_only(model, pool, batch)?),
            // The encoder ascends the beta-weighted adversary loss at
            // reversal scale alpha: effective coupling alpha * beta.
            _ => Ok(nll_real_pairs(model, pool, batch)?
                - alpha * beta * nll_hyp_only(model, pool, batch)?),
        },
        Method::Method2 => {
            let swapped: Vec<usize> = swaps.iter().map(|s| s.example).collect();
            let unswapped: Vec<usize> = batch
                .iter()
                .copied()
                .filter(|i| !swapped.contains(i))
                .collect();
            let n = batch.len() as f64;
            let real_sum = if unswapped.is_empty() {
                0.0
            } else {
                nll_real_pairs(model, pool, &unswapped)? * unswapped.len() as f64
            };
            let real_term = (1.0 - alpha) * real_sum / n;
            match group {
                ParamGroup::PremiseEncoder => Ok(real_term),
                ParamGroup::HypothesisEncoder => {
                    Ok(real_term - alpha * beta * nll_swapped_sum(model, pool, swaps)? / n)
                }
                ParamGroup::Classifier => {
                    Ok(real_term + beta * nll_swapped_sum(model, pool, swaps)? / n)
                }
                ParamGroup::HypHead => Ok(0.0),
            }
        }
    }
}
