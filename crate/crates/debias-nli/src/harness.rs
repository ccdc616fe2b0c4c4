//! Experiment orchestration: hyperparameter sweeps, k-fold
//! cross-validation, hypothesis-only probes, fine-tuning learning curves,
//! and randomized gradient audits.
//!
//! Every run owns its seed and state, so grid points can execute on a
//! worker pool in any order without changing a single cell.

use rand::seq::SliceRandom;
use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

use crate::data::{Dataset, LabelMap};
use crate::error::{Error, Result};
use crate::gradcheck::finite_diff_check;
use crate::model::{ModelParams, ModelSpec, Side};
use crate::tape::{ParamGroup, Parameter, Tape};
use crate::train::{
    build_loss, evaluate, group_objective, index_dataset, select_swaps, sgd_step, train,
    fine_tune, IndexedExample, Method, SwapRecord, TrainConfig,
};
use crate::vocab::Vocabulary;

/// "Failure to learn the training set": final train accuracy below this.
pub const FAIL_TO_LEARN_THRESHOLD: f64 = 0.99;

/// Grid axes used for the synthetic phase diagrams.
pub const TABLE1_METHOD1_ALPHAS: [f64; 6] = [0.1, 0.25, 0.5, 1.0, 2.5, 5.0];
pub const TABLE1_METHOD2_ALPHAS: [f64; 5] = [0.1, 0.25, 0.5, 0.75, 1.0];
pub const TABLE1_BETAS: [f64; 12] = [0.1, 0.5, 1.0, 1.5, 2.0, 2.5, 3.0, 3.5, 4.0, 5.0, 10.0, 20.0];
/// The stronger-hyperparameter preset.
pub const STRONGER_RANGE: [f64; 8] = [1.5, 2.0, 2.5, 3.0, 3.5, 4.0, 4.5, 5.0];

#[derive(Debug, Clone)]
pub struct SweepGrid {
    pub method: Method,
    pub alphas: Vec<f64>,
    pub betas: Vec<f64>,
    pub seeds: Vec<u64>,
    /// Per-run settings; method, alpha, beta and seed are overridden per
    /// cell.
    pub base: TrainConfig,
}

impl SweepGrid {
    pub fn validate(&self) -> Result<()> {
        if self.alphas.is_empty() || self.betas.is_empty() || self.seeds.is_empty() {
            return Err(Error::invalid("sweep grid axes must be non-empty"));
        }
        for v in self.alphas.iter().chain(&self.betas) {
            if *v < 0.0 || !v.is_finite() {
                return Err(Error::invalid("grid values must be non-negative reals"));
            }
        }
        if self.method == Method::Method2 && self.alphas.iter().any(|a| *a > 1.0) {
            return Err(Error::invalid("method2 alphas must lie in [0, 1]"));
        }
        Ok(())
    }

    /// The published grid for the given method.
    pub fn table1(method: Method, seeds: Vec<u64>, base: TrainConfig) -> Self {
        let alphas = match method {
            Method::Method2 => TABLE1_METHOD2_ALPHAS.to_vec(),
            _ => TABLE1_METHOD1_ALPHAS.to_vec(),
        };
        SweepGrid {
            method,
            alphas,
            betas: TABLE1_BETAS.to_vec(),
            seeds,
            base,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum CellOutcome {
    Done {
        train_acc: f64,
        test_acc: f64,
        converged: bool,
    },
    /// The run diverged (or otherwise errored); the sweep carries on.
    Failed,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SweepCell {
    pub alpha: f64,
    pub beta: f64,
    pub seed: u64,
    pub outcome: CellOutcome,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SweepResult {
    pub method: Method,
    pub cells: Vec<SweepCell>,
}

/// A sweep's cells plus per-cell dev accuracy (kept outside the CSV
/// schema).
#[derive(Debug, Clone)]
pub struct SweepOutcome {
    pub result: SweepResult,
    pub dev_acc: Vec<Option<f64>>,
}

fn median(mut values: Vec<f64>) -> Option<f64> {
    if values.is_empty() {
        return None;
    }
    values.sort_by(f64::total_cmp);
    let n = values.len();
    Some(if n % 2 == 1 {
        values[n / 2]
    } else {
        0.5 * (values[n / 2 - 1] + values[n / 2])
    })
}

impl SweepResult {
    fn cells_at(&self, alpha: f64, beta: f64) -> impl Iterator<Item = &SweepCell> {
        self.cells
            .iter()
            .filter(move |c| c.alpha == alpha && c.beta == beta)
    }

    /// Median over seeds of test accuracy at a grid point; `None` when
    /// every seed failed.
    pub fn median_test_acc(&self, alpha: f64, beta: f64) -> Option<f64> {
        median(
            self.cells_at(alpha, beta)
                .filter_map(|c| match c.outcome {
                    CellOutcome::Done { test_acc, .. } => Some(test_acc),
                    CellOutcome::Failed => None,
                })
                .collect(),
        )
    }

    pub fn median_train_acc(&self, alpha: f64, beta: f64) -> Option<f64> {
        median(
            self.cells_at(alpha, beta)
                .filter_map(|c| match c.outcome {
                    CellOutcome::Done { train_acc, .. } => Some(train_acc),
                    CellOutcome::Failed => None,
                })
                .collect(),
        )
    }

    pub fn to_csv(&self) -> String {
        let mut out = String::from("method,alpha,beta,seed,train_acc,test_acc,converged\n");
        for c in &self.cells {
            match c.outcome {
                CellOutcome::Done {
                    train_acc,
                    test_acc,
                    converged,
                } => out.push_str(&format!(
                    "{},{},{},{},{},{},{}\n",
                    self.method, c.alpha, c.beta, c.seed, train_acc, test_acc, converged
                )),
                CellOutcome::Failed => out.push_str(&format!(
                    "{},{},{},{},,,false\n",
                    self.method, c.alpha, c.beta, c.seed
                )),
            }
        }
        out
    }

    pub fn from_csv(text: &str) -> Result<Self> {
        let mut lines = text.lines().enumerate();
        let header = lines
            .next()
            .ok_or_else(|| Error::invalid("empty sweep CSV"))?
            .1;
        if header != "method,alpha,beta,seed,train_acc,test_acc,converged" {
            return Err(Error::invalid(format!("unexpected CSV header {header:?}")));
        }
        let mut method: Option<Method> = None;
        let mut cells = Vec::new();
        for (idx, line) in lines {
            if line.is_empty() {
                continue;
            }
            let cols: Vec<&str> = line.split(',').collect();
            if cols.len() != 7 {
                return Err(Error::Parse {
                    path: "sweep csv".into(),
                    line: idx + 1,
                    msg: format!("expected 7 columns, found {}", cols.len()),
                });
            }
            let parse_f = |s: &str, what: &str| -> Result<f64> {
                s.parse().map_err(|_| Error::Parse {
                    path: "sweep csv".into(),
                    line: idx + 1,
                    msg: format!("bad {what} {s:?}"),
                })
            };
            let m: Method = cols[0].parse()?;
            if *method.get_or_insert(m) != m {
                return Err(Error::invalid("mixed methods in one sweep CSV"));
            }
            let alpha = parse_f(cols[1], "alpha")?;
            let beta = parse_f(cols[2], "beta")?;
            let seed: u64 = cols[3].parse().map_err(|_| Error::Parse {
                path: "sweep csv".into(),
                line: idx + 1,
                msg: format!("bad seed {:?}", cols[3]),
            })?;
            let outcome = if cols[4].is_empty() && cols[5].is_empty() {
                CellOutcome::Failed
            } else {
                CellOutcome::Done {
                    train_acc: parse_f(cols[4], "train_acc")?,
                    test_acc: parse_f(cols[5], "test_acc")?,
                    converged: cols[6] == "true",
                }
            };
            cells.push(SweepCell {
                alpha,
                beta,
                seed,
                outcome,
            });
        }
        if cells.is_empty() {
            return Err(Error::invalid("sweep CSV has no data rows"));
        }
        Ok(SweepResult {
            method: method.unwrap(),
            cells,
        })
    }
}

/// Render the sweep as an aligned markdown grid: one row per beta, one
/// column per alpha, cell values are median test accuracy in percent. A
/// `*` marks failure to learn the training set; a bare `*` is a failed
/// run.
pub fn render_markdown(result: &SweepResult) -> String {
    let mut alphas: Vec<f64> = result.cells.iter().map(|c| c.alpha).collect();
    alphas.sort_by(f64::total_cmp);
    alphas.dedup();
    let mut betas: Vec<f64> = result.cells.iter().map(|c| c.beta).collect();
    betas.sort_by(f64::total_cmp);
    betas.dedup();

    let mut rows: Vec<Vec<String>> = Vec::new();
    let mut header = vec![format!("{} beta\\alpha", result.method)];
    header.extend(alphas.iter().map(|a| a.to_string()));
    rows.push(header);
    for &b in &betas {
        let mut row = vec![b.to_string()];
        for &a in &alphas {
            let cell = match result.median_test_acc(a, b) {
                Some(test) => {
                    let star = result
                        .median_train_acc(a, b)
                        .map(|t| t < FAIL_TO_LEARN_THRESHOLD)
                        .unwrap_or(true);
                    format!(
                        "{}{}",
                        (test * 100.0).round() as i64,
                        if star { "*" } else { "" }
                    )
                }
                None => "*".to_string(),
            };
            row.push(cell);
        }
        rows.push(row);
    }

    let cols = rows[0].len();
    let widths: Vec<usize> = (0..cols)
        .map(|c| rows.iter().map(|r| r[c].len()).max().unwrap_or(1))
        .collect();
    let mut out = String::new();
    for (i, row) in rows.iter().enumerate() {
        out.push('|');
        for (c, cell) in row.iter().enumerate() {
            out.push_str(&format!(" {:>width$} |", cell, width = widths[c]));
        }
        out.push('\n');
        if i == 0 {
            out.push('|');
            for w in &widths {
                out.push_str(&format!("{}|", "-".repeat(w + 2)));
            }
            out.push('\n');
        }
    }
    out
}

fn run_cell(
    grid: &SweepGrid,
    spec: &ModelSpec,
    vocab: &Vocabulary,
    labels: &[String],
    train_ds: &Dataset,
    dev: Option<&Dataset>,
    test: &Dataset,
    alpha: f64,
    beta: f64,
    seed: u64,
) -> (SweepCell, Option<f64>) {
    let mut cfg = grid.base.clone();
    cfg.method = grid.method;
    cfg.alpha = alpha;
    cfg.beta = beta;
    cfg.seed = seed;
    let attempt = || -> Result<(CellOutcome, Option<f64>)> {
        let model = spec.build(vocab.clone(), labels.to_vec(), seed)?;
        let (trained, report) = train(train_ds, dev, model, &cfg)?;
        let train_acc = evaluate(&trained, train_ds, LabelMap::Identity)?;
        let test_acc = evaluate(&trained, test, LabelMap::Identity)?;
        let dev_acc = match dev {
            Some(d) => Some(evaluate(&trained, d, LabelMap::Identity)?),
            None => None,
        };
        Ok((
            CellOutcome::Done {
                train_acc,
                test_acc,
                converged: report.converged,
            },
            dev_acc,
        ))
    };
    match attempt() {
        Ok((outcome, dev_acc)) => (
            SweepCell {
                alpha,
                beta,
                seed,
                outcome,
            },
            dev_acc,
        ),
        Err(_) => (
            SweepCell {
                alpha,
                beta,
                seed,
                outcome: CellOutcome::Failed,
            },
            None,
        ),
    }
}

/// Train one model per (alpha, beta, seed) and fill the grid. Individual
/// failures mark their cell and never abort the sweep. `jobs` sizes the
/// worker pool (0 keeps the global default); results are identical for any
/// worker count.
pub fn run_sweep(
    grid: &SweepGrid,
    spec: &ModelSpec,
    train_ds: &Dataset,
    dev: Option<&Dataset>,
    test: &Dataset,
    jobs: usize,
) -> Result<SweepOutcome> {
    grid.validate()?;
    grid.base.validate()?;
    let vocab = crate::data::build_vocab(&[train_ds], 1)?;
    let labels = train_ds.label_space.clone();

    let mut points = Vec::new();
    for &alpha in &grid.alphas {
        for &beta in &grid.betas {
            for &seed in &grid.seeds {
                points.push((alpha, beta, seed));
            }
        }
    }

    let work = |points: &[(f64, f64, u64)]| -> Vec<(SweepCell, Option<f64>)> {
        points
            .par_iter()
            .map(|&(a, b, s)| run_cell(grid, spec, &vocab, &labels, train_ds, dev, test, a, b, s))
            .collect()
    };
    let outcomes = if jobs == 0 {
        work(&points)
    } else {
        rayon::ThreadPoolBuilder::new()
            .num_threads(jobs)
            .build()
            .map_err(|e| Error::invalid(format!("worker pool: {e}")))?
            .install(|| work(&points))
    };

    let mut cells = Vec::with_capacity(outcomes.len());
    let mut dev_acc = Vec::with_capacity(outcomes.len());
    for (cell, d) in outcomes {
        cells.push(cell);
        dev_acc.push(d);
    }
    Ok(SweepOutcome {
        result: SweepResult {
            method: grid.method,
            cells,
        },
        dev_acc,
    })
}

/// Pick the cell with the best dev accuracy. Ties break toward smaller
/// alpha, then smaller beta, then the earlier cell.
pub fn select_best<'a>(result: &'a SweepResult, dev_acc: &[Option<f64>]) -> Result<&'a SweepCell> {
    if result.cells.len() != dev_acc.len() {
        return Err(Error::invalid(
            "dev accuracy list does not match sweep cells",
        ));
    }
    let mut best: Option<(f64, &SweepCell)> = None;
    for (cell, acc) in result.cells.iter().zip(dev_acc) {
        let acc = match acc {
            Some(a) => *a,
            None => continue,
        };
        let better = match &best {
            None => true,
            Some((b_acc, b_cell)) => {
                acc > *b_acc
                    || (acc == *b_acc
                        && (cell.alpha < b_cell.alpha
                            || (cell.alpha == b_cell.alpha && cell.beta < b_cell.beta)))
            }
        };
        if better {
            best = Some((acc, cell));
        }
    }
    best.map(|(_, c)| c)
        .ok_or_else(|| Error::invalid("no successful cells to select from"))
}

#[derive(Debug, Clone)]
pub struct CvPoint {
    pub alpha: f64,
    pub beta: f64,
    pub fold_accs: Vec<f64>,
    pub mean: f64,
}

/// Seeded k-fold cross-validation over the grid points. Each fold trains
/// on the other k-1 folds and is scored on the held-out one.
pub fn cross_validate(
    ds: &Dataset,
    k: usize,
    grid: &SweepGrid,
    spec: &ModelSpec,
) -> Result<Vec<CvPoint>> {
    if k < 2 {
        return Err(Error::invalid("k must be at least 2"));
    }
    if k > ds.len() {
        return Err(Error::invalid(format!(
            "k = {k} exceeds dataset size {}",
            ds.len()
        )));
    }
    grid.validate()?;
    let mut order: Vec<usize> = (0..ds.len()).collect();
    let mut rng = ChaCha8Rng::seed_from_u64(grid.base.seed);
    order.shuffle(&mut rng);
    let fold_of: Vec<usize> = {
        let mut f = vec![0; ds.len()];
        for (pos, &i) in order.iter().enumerate() {
            f[i] = pos % k;
        }
        f
    };

    let subset = |pred: &dyn Fn(usize) -> bool| Dataset {
        name: ds.name.clone(),
        examples: ds
            .examples
            .iter()
            .enumerate()
            .filter(|(i, _)| pred(*i))
            .map(|(_, e)| e.clone())
            .collect(),
        label_space: ds.label_space.clone(),
        token_mode: ds.token_mode,
    };

    let mut points = Vec::new();
    for &alpha in &grid.alphas {
        for &beta in &grid.betas {
            let mut fold_accs = Vec::with_capacity(k);
            for fold in 0..k {
                let train_ds = subset(&|i| fold_of[i] != fold);
                let held = subset(&|i| fold_of[i] == fold);
                let mut cfg = grid.base.clone();
                cfg.method = grid.method;
                cfg.alpha = alpha;
                cfg.beta = beta;
                cfg.seed = grid
                    .base
                    .seed
                    .wrapping_add((fold as u64).wrapping_mul(0x9e3779b97f4a7c15));
                let vocab = crate::data::build_vocab(&[&train_ds], 1)?;
                let model = spec.build(vocab, train_ds.label_space.clone(), cfg.seed)?;
                let (trained, _) = train(&train_ds, None, model, &cfg)?;
                fold_accs.push(evaluate(&trained, &held, LabelMap::Identity)?);
            }
            let mean = fold_accs.iter().sum::<f64>() / k as f64;
            points.push(CvPoint {
                alpha,
                beta,
                fold_accs,
                mean,
            });
        }
    }
    Ok(points)
}

// ── hypothesis-only probe ────────────────────────────────────────────

#[derive(Debug, Clone)]
pub struct ProbeOutcome {
    /// Accuracy of the probe on the evaluation set, after label mapping.
    pub accuracy: f64,
    /// Accuracy of always predicting the evaluation set's most frequent
    /// label.
    pub majority_baseline: f64,
    /// Final accuracy of the probe on its own training set.
    pub train_accuracy: f64,
}

/// Loss for a classifier that reads only hypothesis encodings: plain NLL
/// through the hypothesis-only head, no reversal, no blocking.
pub fn build_probe_loss(
    model: &ModelParams,
    pool: &[IndexedExample],
    batch: &[usize],
) -> Result<(Tape, crate::tape::NodeId)> {
    if batch.is_empty() {
        return Err(Error::Empty("batch"));
    }
    let mut tape = Tape::new();
    let nodes = model.register(&mut tape);
    let hyps: Vec<Vec<usize>> = batch.iter().map(|&i| pool[i].hypothesis.clone()).collect();
    let targets: Vec<usize> = batch.iter().map(|&i| pool[i].label).collect();
    let h = nodes.encode_batch(&mut tape, Side::Hypothesis, &hyps)?;
    let lp = nodes.hyp_head_batch(&mut tape, h, false)?;
    let nll = tape.nll_pick(lp, targets)?;
    let root = tape.mean(nll);
    Ok((tape, root))
}

fn probe_train_accuracy(model: &ModelParams, pool: &[IndexedExample]) -> Result<f64> {
    let mut correct = 0;
    for e in pool {
        if model.predict_hyp_only(&e.hypothesis)? == e.label {
            correct += 1;
        }
    }
    Ok(correct as f64 / pool.len() as f64)
}

/// Train a hypothesis-only classifier on `train_ds` and score it on
/// `test_ds`, alongside the majority baseline of `test_ds`.
pub fn hypothesis_only_probe(
    train_ds: &Dataset,
    test_ds: &Dataset,
    spec: &ModelSpec,
    cfg: &TrainConfig,
    map: LabelMap,
) -> Result<ProbeOutcome> {
    cfg.validate()?;
    let vocab = crate::data::build_vocab(&[train_ds], 1)?;
    let mut model = spec.build(vocab, train_ds.label_space.clone(), cfg.seed)?;
    let (pool, _) = index_dataset(train_ds, &model)?;
    let batch: Vec<usize> = (0..pool.len()).collect();

    let mut streak = 0;
    let mut prev_loss: Option<f64> = None;
    let mut train_accuracy = 0.0;
    for epoch in 1..=cfg.max_epochs {
        let (mut tape, root) = build_probe_loss(&model, &pool, &batch)?;
        let loss = tape.value(root).item();
        if !loss.is_finite() {
            return Err(Error::Diverged {
                epoch,
                detail: format!("probe loss {loss}"),
            });
        }
        let grads = tape.backward(root)?;
        sgd_step(&mut model, &grads, cfg.lr);

        train_accuracy = probe_train_accuracy(&model, &pool)?;
        if train_accuracy >= cfg.stop.acc_target {
            streak += 1;
        } else {
            streak = 0;
        }
        let settled = prev_loss
            .map(|p| (p - loss).abs() < cfg.stop.min_loss_delta)
            .unwrap_or(false);
        prev_loss = Some(loss);
        if streak >= cfg.stop.acc_patience || settled {
            break;
        }
    }

    // Score on the evaluation set through the hypothesis-only path.
    let mut correct = 0;
    for e in &test_ds.examples {
        let (h, _) = model.vocab.encode(&e.hypothesis);
        let predicted = model.predict_hyp_only(&h)?;
        if map.apply(&model.labels[predicted])? == e.label {
            correct += 1;
        }
    }
    let accuracy = correct as f64 / test_ds.len() as f64;

    let majority = test_ds
        .majority_label()
        .ok_or(Error::Empty("evaluation set"))?;
    let majority_baseline = test_ds
        .examples
        .iter()
        .filter(|e| e.label == majority)
        .count() as f64
        / test_ds.len() as f64;

    Ok(ProbeOutcome {
        accuracy,
        majority_baseline,
        train_accuracy,
    })
}

// ── learning curves ──────────────────────────────────────────────────

#[derive(Debug, Clone, PartialEq)]
pub struct CurveRow {
    pub model_label: String,
    pub size: usize,
    pub accuracy: f64,
}

/// Nested training subsets: one seeded shuffle, prefixes of it.
pub fn nested_subsets(n: usize, sizes: &[usize], seed: u64) -> Result<Vec<Vec<usize>>> {
    for w in sizes.windows(2) {
        if w[1] <= w[0] {
            return Err(Error::invalid("subset sizes must be strictly increasing"));
        }
    }
    if let Some(&max) = sizes.last() {
        if max > n {
            return Err(Error::invalid(format!(
                "subset size {max} exceeds dataset size {n}"
            )));
        }
    }
    let mut order: Vec<usize> = (0..n).collect();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    order.shuffle(&mut rng);
    Ok(sizes.iter().map(|&s| order[..s].to_vec()).collect())
}

/// Fine-tune each pretrained model (and optionally a from-scratch
/// baseline) on nested subsets of the target training set, scoring each on
/// the evaluation set. Size 0 rows are the zero-shot transfer accuracy.
pub fn learning_curve(
    pretrained: &[(String, ModelParams)],
    scratch: Option<(&str, &ModelSpec)>,
    target_train: &Dataset,
    target_eval: &Dataset,
    sizes: &[usize],
    cfg: &TrainConfig,
) -> Result<Vec<CurveRow>> {
    let subsets = nested_subsets(target_train.len(), sizes, cfg.seed)?;
    let make_subset = |indices: &[usize]| Dataset {
        name: format!("{}-subset", target_train.name),
        examples: indices
            .iter()
            .map(|&i| target_train.examples[i].clone())
            .collect(),
        label_space: target_train.label_space.clone(),
        token_mode: target_train.token_mode,
    };

    let mut models: Vec<(String, ModelParams)> = pretrained.to_vec();
    if let Some((label, spec)) = scratch {
        let vocab = crate::data::build_vocab(&[target_train], 1)?;
        let model = spec.build(vocab, target_train.label_space.clone(), cfg.seed)?;
        models.push((label.to_string(), model));
    }

    let mut rows = Vec::new();
    for (label, model) in &models {
        for (size, indices) in sizes.iter().zip(&subsets) {
            let subset = make_subset(indices);
            let (tuned, _) = fine_tune(model.clone(), &subset, cfg)?;
            let accuracy = evaluate(&tuned, target_eval, LabelMap::Identity)?;
            rows.push(CurveRow {
                model_label: label.clone(),
                size: *size,
                accuracy,
            });
        }
    }
    Ok(rows)
}

// ── randomized gradient audit ────────────────────────────────────────

#[derive(Debug, Clone)]
pub struct GradTrial {
    pub trial: usize,
    pub max_rel_err: f64,
    pub worst: Option<(String, usize)>,
}

/// Smallest nonzero analytic gradient coordinate an audit instance may
/// have. Below roughly 1e-5, a central difference at epsilon 1e-5 in f64
/// hits its rounding floor (about 1e-11 absolute) and cannot certify a
/// 1e-6 relative error for any implementation, correct or not; instances
/// that degenerate are redrawn.
const GENERIC_GRADIENT_FLOOR: f64 = 1e-4;

struct AuditInstance {
    model: ModelParams,
    pool: Vec<IndexedExample>,
    batch: Vec<usize>,
    alpha: f64,
    beta: f64,
    swaps: Vec<SwapRecord>,
    analytic: crate::tape::GradientMap,
}

fn draw_audit_instance(method: Method, trial: usize, seed: u64, attempt: u64) -> Result<AuditInstance> {
    use crate::model::{CombineMode, EncoderKind};
    let mut rng = ChaCha8Rng::seed_from_u64(
        seed ^ (trial as u64).wrapping_mul(0x9e3779b97f4a7c15) ^ attempt.wrapping_mul(0xbf58476d1ce4e5b9),
    );
    let vocab = Vocabulary::from_tokens(["a", "b", "c", "d", "e"]);
    let n_labels = 2 + trial % 2;
    let labels: Vec<String> = (0..n_labels).map(|i| format!("L{i}")).collect();
    let encoder = match trial % 3 {
        0 => EncoderKind::BagOfEmbeddings { dim: 3 },
        1 => EncoderKind::MeanOfEmbeddings { dim: 3 },
        _ => EncoderKind::SimpleRecurrent { dim: 3, hidden: 4 },
    };
    let combine = if trial % 2 == 0 {
        CombineMode::Concat
    } else {
        CombineMode::InferSent
    };
    let mut model = ModelParams::init(vocab, encoder, combine, 4, labels, &mut rng)?;
    // Biases included: every coordinate is drawn at a generic scale.
    for p in model.params_mut() {
        for v in p.value.data_mut() {
            *v = rng.gen_range(-0.6..0.6);
        }
    }

    let batch_size = 8;
    let pool: Vec<IndexedExample> = (0..batch_size)
        .map(|_| {
            let len_p = rng.gen_range(1..=3);
            let len_h = rng.gen_range(1..=3);
            IndexedExample {
                premise: (0..len_p).map(|_| rng.gen_range(2..7)).collect(),
                hypothesis: (0..len_h).map(|_| rng.gen_range(2..7)).collect(),
                label: rng.gen_range(0..n_labels),
            }
        })
        .collect();
    let batch: Vec<usize> = (0..batch_size).collect();

    let alpha = match method {
        Method::Method2 => rng.gen_range(0.0..=1.0),
        _ => rng.gen_range(0.0..3.0),
    };
    let beta = rng.gen_range(0.0..3.0);
    let swaps: Vec<SwapRecord> = if method == Method::Method2 {
        select_swaps(&batch, pool.len(), alpha, 1, &mut rng)?
    } else {
        Vec::new()
    };

    let mut built = build_loss(&model, &pool, &batch, method, alpha, beta, &swaps)?;
    let analytic = built.tape.backward(built.root)?;
    Ok(AuditInstance {
        model,
        pool,
        batch,
        alpha,
        beta,
        swaps,
        analytic,
    })
}

fn is_generic(analytic: &crate::tape::GradientMap) -> bool {
    analytic.iter().all(|(_, t)| {
        t.data()
            .iter()
            .all(|g| *g == 0.0 || g.abs() >= GENERIC_GRADIENT_FLOOR)
    })
}

/// Random small instances of the given objective, each checked per
/// parameter group against central differences of its explicit objective.
/// Exact-zero gradient coordinates (unused embeddings, blocked groups) are
/// kept and must agree exactly; near-zero ones trigger an instance redraw
/// (see [`GENERIC_GRADIENT_FLOOR`]).
pub fn gradient_check_trials(
    method: Method,
    trials: usize,
    seed: u64,
    epsilon: f64,
) -> Result<Vec<GradTrial>> {
    let mut out = Vec::with_capacity(trials);
    for trial in 0..trials {
        let mut instance = draw_audit_instance(method, trial, seed, 0)?;
        for attempt in 1..=50u64 {
            if is_generic(&instance.analytic) {
                break;
            }
            instance = draw_audit_instance(method, trial, seed, attempt)?;
        }
        let AuditInstance {
            model,
            pool,
            batch,
            alpha,
            beta,
            swaps,
            analytic,
        } = instance;

        let mut worst_err = 0.0;
        let mut worst = None;
        for group in ParamGroup::ALL {
            let params: Vec<Parameter> = model.group_params(group).into_iter().cloned().collect();
            let report = finite_diff_check(
                |probe| {
                    let mut m = model.clone();
                    for (target, src) in m
                        .params_mut()
                        .into_iter()
                        .filter(|p| p.group == group)
                        .zip(probe)
                    {
                        target.value = src.value.clone();
                    }
                    group_objective(&m, &pool, &batch, method, alpha, beta, &swaps, group)
                },
                &params,
                &analytic,
                epsilon,
            )?;
            if report.max_rel_err > worst_err {
                worst_err = report.max_rel_err;
                worst = report.worst;
            }
        }
        out.push(GradTrial {
            trial,
            max_rel_err: worst_err,
            worst,
        });
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::synthetic::{gen_dataset_a, gen_dataset_b};

    fn quick_cfg(method: Method) -> TrainConfig {
        let mut cfg = TrainConfig::synthetic(method, 0.0, 0.0, 1);
        cfg.max_epochs = 150;
        cfg
    }

    #[test]
    fn sweep_fills_every_cell_and_statistics_hold() {
        let train = gen_dataset_b(64, 0).unwrap();
        let test = gen_dataset_a(64, 1).unwrap();
        let grid = SweepGrid {
            method: Method::Baseline,
            alphas: vec![0.0],
            betas: vec![0.0, 1.0],
            seeds: vec![1, 2, 3],
            base: quick_cfg(Method::Baseline),
        };
        let out = run_sweep(&grid, &ModelSpec::synthetic(), &train, None, &test, 2).unwrap();
        assert_eq!(out.result.cells.len(), 6);
        for c in &out.result.cells {
            match c.outcome {
                CellOutcome::Done {
                    train_acc,
                    test_acc,
                    ..
                } => {
                    assert!((0.0..=1.0).contains(&train_acc));
                    assert!((0.0..=1.0).contains(&test_acc));
                }
                CellOutcome::Failed => panic!("unexpected failure"),
            }
        }
        // medians over seeds exist per grid point
        assert!(out.result.median_test_acc(0.0, 0.0).is_some());
        assert!(out.result.median_test_acc(0.0, 1.0).is_some());
    }

    #[test]
    fn sweep_worker_count_does_not_change_cells() {
        let train = gen_dataset_b(32, 0).unwrap();
        let test = gen_dataset_a(32, 1).unwrap();
        let mut base = quick_cfg(Method::Baseline);
        base.max_epochs = 40;
        let grid = SweepGrid {
            method: Method::Baseline,
            alphas: vec![0.0],
            betas: vec![0.0],
            seeds: vec![1, 2],
            base,
        };
        let spec = ModelSpec::synthetic();
        let one = run_sweep(&grid, &spec, &train, None, &test, 1).unwrap();
        let many = run_sweep(&grid, &spec, &train, None, &test, 4).unwrap();
        assert_eq!(one.result, many.result);
    }

    #[test]
    fn sweep_records_failed_runs_without_aborting() {
        // An unusable training set makes every run fail; the sweep itself
        // must still complete with the cells marked.
        let train = Dataset {
            name: "empty".into(),
            examples: vec![],
            label_space: vec!["FALSE".into(), "TRUE".into()],
            token_mode: crate::data::TokenMode::Char,
        };
        let test = gen_dataset_a(16, 1).unwrap();
        let grid = SweepGrid {
            method: Method::Baseline,
            alphas: vec![0.0],
            betas: vec![0.0],
            seeds: vec![1, 2],
            base: quick_cfg(Method::Baseline),
        };
        let out = run_sweep(&grid, &ModelSpec::synthetic(), &train, None, &test, 1).unwrap();
        assert_eq!(out.result.cells.len(), 2);
        for c in &out.result.cells {
            assert_eq!(c.outcome, CellOutcome::Failed);
        }
        assert!(select_best(&out.result, &out.dev_acc).is_err());
    }

    #[test]
    fn select_best_prefers_smaller_alpha_then_beta() {
        let cells = vec![
            SweepCell {
                alpha: 1.0,
                beta: 1.0,
                seed: 1,
                outcome: CellOutcome::Done {
                    train_acc: 1.0,
                    test_acc: 1.0,
                    converged: true,
                },
            },
            SweepCell {
                alpha: 0.5,
                beta: 2.0,
                seed: 1,
                outcome: CellOutcome::Done {
                    train_acc: 1.0,
                    test_acc: 1.0,
                    converged: true,
                },
            },
            SweepCell {
                alpha: 0.5,
                beta: 1.0,
                seed: 1,
                outcome: CellOutcome::Done {
                    train_acc: 1.0,
                    test_acc: 1.0,
                    converged: true,
                },
            },
        ];
        let result = SweepResult {
            method: Method::Method1,
            cells,
        };
        let dev = vec![Some(0.9), Some(0.9), Some(0.9)];
        let best = select_best(&result, &dev).unwrap();
        assert_eq!((best.alpha, best.beta), (0.5, 1.0));

        // a strictly better accuracy wins regardless
        let dev = vec![Some(0.95), Some(0.9), Some(0.9)];
        let best = select_best(&result, &dev).unwrap();
        assert_eq!((best.alpha, best.beta), (1.0, 1.0));
    }

    #[test]
    fn select_best_single_point_and_empty() {
        let result = SweepResult {
            method: Method::Baseline,
            cells: vec![SweepCell {
                alpha: 0.1,
                beta: 0.2,
                seed: 7,
                outcome: CellOutcome::Done {
                    train_acc: 1.0,
                    test_acc: 0.5,
                    converged: true,
                },
            }],
        };
        let best = select_best(&result, &[Some(0.5)]).unwrap();
        assert_eq!(best.seed, 7);
        assert!(select_best(&result, &[None]).is_err());
    }

    #[test]
    fn csv_round_trip_is_lossless() {
        let result = SweepResult {
            method: Method::Method2,
            cells: vec![
                SweepCell {
                    alpha: 0.25,
                    beta: 3.5,
                    seed: 11,
                    outcome: CellOutcome::Done {
                        train_acc: 0.998877665544332,
                        test_acc: 0.123456789012345,
                        converged: true,
                    },
                },
                SweepCell {
                    alpha: 1.0,
                    beta: 20.0,
                    seed: 12,
                    outcome: CellOutcome::Failed,
                },
            ],
        };
        let back = SweepResult::from_csv(&result.to_csv()).unwrap();
        assert_eq!(back, result);
    }

    #[test]
    fn markdown_grid_shape_and_stars() {
        let mk = |alpha: f64, beta: f64, train: f64, test: f64| SweepCell {
            alpha,
            beta,
            seed: 1,
            outcome: CellOutcome::Done {
                train_acc: train,
                test_acc: test,
                converged: true,
            },
        };
        let result = SweepResult {
            method: Method::Method1,
            cells: vec![
                mk(0.1, 1.0, 1.0, 0.5),
                mk(5.0, 1.0, 1.0, 1.0),
                mk(0.1, 4.0, 0.5, 0.5), // failed to learn the training set
                SweepCell {
                    alpha: 5.0,
                    beta: 4.0,
                    seed: 1,
                    outcome: CellOutcome::Failed,
                },
            ],
        };
        let md = render_markdown(&result);
        let lines: Vec<&str> = md.lines().collect();
        assert_eq!(lines.len(), 4); // header, separator, two beta rows
        assert!(lines[0].contains("0.1") && lines[0].contains('5'));
        assert!(lines[2].contains("50") && lines[2].contains("100"));
        assert!(lines[3].contains("50*"));
        assert!(lines[3].trim_end().ends_with("* |"));
    }

    #[test]
    fn cross_validate_partitions_deterministically() {
        let ds = gen_dataset_b(4, 0).unwrap();
        let mut base = quick_cfg(Method::Baseline);
        base.max_epochs = 20;
        let grid = SweepGrid {
            method: Method::Baseline,
            alphas: vec![0.0],
            betas: vec![0.0],
            seeds: vec![1],
            base,
        };
        let spec = ModelSpec::synthetic();
        let a = cross_validate(&ds, 2, &grid, &spec).unwrap();
        let b = cross_validate(&ds, 2, &grid, &spec).unwrap();
        assert_eq!(a[0].fold_accs, b[0].fold_accs);
        assert_eq!(a[0].fold_accs.len(), 2);
        let lo = a[0].fold_accs.iter().cloned().fold(f64::INFINITY, f64::min);
        let hi = a[0]
            .fold_accs
            .iter()
            .cloned()
            .fold(f64::NEG_INFINITY, f64::max);
        assert!(a[0].mean >= lo - 1e-12 && a[0].mean <= hi + 1e-12);
        assert!(cross_validate(&ds, 5, &grid, &spec).is_err());
        assert!(cross_validate(&ds, 1, &grid, &spec).is_err());
    }

    #[test]
    fn probe_cannot_touch_premise_parameters() {
        let ds = gen_dataset_b(16, 0).unwrap();
        let spec = ModelSpec::synthetic();
        let vocab = crate::data::build_vocab(&[&ds], 1).unwrap();
        let model = spec.build(vocab, ds.label_space.clone(), 5).unwrap();
        let (pool, _) = index_dataset(&ds, &model).unwrap();
        let batch: Vec<usize> = (0..pool.len()).collect();
        let (mut tape, root) = build_probe_loss(&model, &pool, &batch).unwrap();
        let grads = tape.backward(root).unwrap();
        for p in model.group_params(ParamGroup::PremiseEncoder) {
            assert!(grads.get(&p.id).unwrap().data().iter().all(|v| *v == 0.0));
        }
        for p in model.group_params(ParamGroup::Classifier) {
            assert!(grads.get(&p.id).unwrap().data().iter().all(|v| *v == 0.0));
        }
    }

    #[test]
    fn nested_subsets_are_nested_and_validated() {
        let subsets = nested_subsets(100, &[0, 10, 30], 9).unwrap();
        assert_eq!(subsets[0].len(), 0);
        use std::collections::HashSet;
        let s1: HashSet<_> = subsets[1].iter().collect();
        let s2: HashSet<_> = subsets[2].iter().collect();
        assert!(s1.is_subset(&s2));
        assert!(nested_subsets(100, &[10, 10], 9).is_err());
        assert!(nested_subsets(5, &[10], 9).is_err());
    }

    #[test]
    fn learning_curve_size_zero_is_zero_shot() {
        let b = gen_dataset_b(32, 0).unwrap();
        let a = gen_dataset_a(32, 1).unwrap();
        let spec = ModelSpec::synthetic();
        let vocab = crate::data::build_vocab(&[&b], 1).unwrap();
        let model = spec.build(vocab, b.label_space.clone(), 3).unwrap();
        let mut cfg = quick_cfg(Method::Baseline);
        cfg.max_epochs = 60;
        let (pre, _) = train(&b, None, model, &cfg).unwrap();
        let zero_shot = evaluate(&pre, &a, LabelMap::Identity).unwrap();

        let rows = learning_curve(
            &[("pretrained".into(), pre)],
            Some(("scratch", &spec)),
            &a,
            &a,
            &[0, 8],
            &cfg,
        )
        .unwrap();
        let r0 = rows
            .iter()
            .find(|r| r.model_label == "pretrained" && r.size == 0)
            .unwrap();
        assert_eq!(r0.accuracy, zero_shot);
        assert_eq!(rows.len(), 4);
    }

    #[test]
    fn gradient_audit_passes_for_all_methods() {
        for method in [Method::Baseline, Method::Method1, Method::Method2] {
            let trials = gradient_check_trials(method, 4, 99, 1e-5).unwrap();
            for t in &trials {
                assert!(
                    t.max_rel_err < 1e-6,
                    "{method} trial {} err {} at {:?}",
                    t.trial,
                    t.max_rel_err,
                    t.worst
                );
            }
        }
    }
}
