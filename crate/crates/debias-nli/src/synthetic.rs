//! The two synthetic datasets.
//!
//! Premises are drawn from `{a, b}` and the label is TRUE exactly when the
//! first letters of premise and hypothesis agree. Dataset A is the clean
//! version. Dataset B plants an artifact: every TRUE hypothesis gets a `c`
//! appended, so the hypothesis side alone decides the label.

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use std::collections::BTreeMap;

use crate::data::{Dataset, Example, TokenMode};
use crate::error::{Error, Result};

pub const LABEL_TRUE: &str = "TRUE";
pub const LABEL_FALSE: &str = "FALSE";

fn base_pairs() -> [(&'static str, &'static str, &'static str); 4] {
    [
        ("a", "a", LABEL_TRUE),
        ("b", "b", LABEL_TRUE),
        ("a", "b", LABEL_FALSE),
        ("b", "a", LABEL_FALSE),
    ]
}

fn gen(n: usize, seed: u64, with_artifact: bool) -> Result<Dataset> {
    if n == 0 || n % 4 != 0 {
        return Err(Error::invalid(format!(
            "synthetic dataset size must be a positive multiple of 4, got {n}"
        )));
    }
    let mut examples = Vec::with_capacity(n);
    for (p, h, label) in base_pairs() {
        let hyp = if with_artifact && label == LABEL_TRUE {
            format!("{h}c")
        } else {
            h.to_string()
        };
        for _ in 0..n / 4 {
            examples.push(Example {
                premise: p.chars().map(String::from).collect(),
                hypothesis: hyp.chars().map(String::from).collect(),
                label: label.to_string(),
            });
        }
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    examples.shuffle(&mut rng);
    Ok(Dataset {
        name: if with_artifact { "synthetic-B" } else { "synthetic-A" }.to_string(),
        examples,
        label_space: vec![LABEL_FALSE.to_string(), LABEL_TRUE.to_string()],
        token_mode: TokenMode::Char,
    })
}

/// Unbiased dataset A: n/4 each of (a,a,T), (b,b,T), (a,b,F), (b,a,F),
/// shuffled by seed. `n` must be a positive multiple of 4.
pub fn gen_dataset_a(n: usize, seed: u64) -> Result<Dataset> {
    gen(n, seed, false)
}

/// Biased dataset B: dataset A with `c` appended to every TRUE hypothesis.
pub fn gen_dataset_b(n: usize, seed: u64) -> Result<Dataset> {
    gen(n, seed, true)
}

/// Result of scanning a dataset for single-symbol leaks on the hypothesis
/// side.
#[derive(Debug, Clone, PartialEq)]
pub struct BiasAudit {
    pub separator_found: bool,
    /// Symbols whose presence in the hypothesis perfectly separates the
    /// labels, with the label each polarity maps to.
    pub separators: Vec<Separator>,
    /// The labels were uniform, so any feature separates them vacuously.
    pub degenerate_labels: bool,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Separator {
    pub symbol: String,
    pub label_if_present: String,
    pub label_if_absent: String,
}

impl Separator {
    /// Apply the presence rule to one hypothesis.
    pub fn predict(&self, hypothesis: &[String]) -> &str {
        if hypothesis.iter().any(|t| *t == self.symbol) {
            &self.label_if_present
        } else {
            &self.label_if_absent
        }
    }
}

/// Exhaustively test every hypothesis-side symbol as a presence/absence
/// rule for the labels.
pub fn audit_bias(examples: &[Example]) -> BiasAudit {
    let mut labels: Vec<&str> = examples.iter().map(|e| e.label.as_str()).collect();
    labels.sort_unstable();
    labels.dedup();
    if labels.len() <= 1 {
        return BiasAudit {
            separator_found: false,
            separators: Vec::new(),
            degenerate_labels: true,
        };
    }

    // symbol -> (labels seen when present, labels seen when absent)
    let mut symbols: BTreeMap<&str, ()> = BTreeMap::new();
    for ex in examples {
        for t in &ex.hypothesis {
            symbols.entry(t.as_str()).or_insert(());
        }
    }

    let mut separators = Vec::new();
    for (&sym, _) in &symbols {
        let mut present: Option<&str> = None;
        let mut absent: Option<&str> = None;
        let mut ok = true;
        for ex in examples {
            let has = ex.hypothesis.iter().any(|t| t == sym);
            let slot = if has { &mut present } else { &mut absent };
            match slot {
                None => *slot = Some(&ex.label),
                Some(l) if *l == ex.label => {}
                Some(_) => {
                    ok = false;
                    break;
                }
            }
        }
        // Both polarities must occur, with distinct labels, to count as a
        // genuine separator rather than a constant rule.
        if let (true, Some(p), Some(a)) = (ok, present, absent) {
            if p != a {
                separators.push(Separator {
                    symbol: sym.to_string(),
                    label_if_present: p.to_string(),
                    label_if_absent: a.to_string(),
                });
            }
        }
    }

    BiasAudit {
        separator_found: !separators.is_empty(),
        separators,
        degenerate_labels: false,
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::collections::BTreeSet;

    fn as_triplets(ds: &Dataset) -> BTreeSet<(String, String, String)> {
        ds.examples
            .iter()
            .map(|e| (e.premise.join(""), e.hypothesis.join(""), e.label.clone()))
            .collect()
    }

    #[test]
    fn dataset_a_minimal_is_the_four_canonical_pairs() {
        let ds = gen_dataset_a(4, 0).unwrap();
        let got = as_triplets(&ds);
        let want: BTreeSet<_> = [
            ("a", "a", "TRUE"),
            ("b", "b", "TRUE"),
            ("a", "b", "FALSE"),
            ("b", "a", "FALSE"),
        ]
        .iter()
        .map(|(p, h, l)| (p.to_string(), h.to_string(), l.to_string()))
        .collect();
        assert_eq!(got, want);
    }

    #[test]
    fn dataset_b_minimal_has_artifact_on_true_only() {
        let ds = gen_dataset_b(4, 0).unwrap();
        let got = as_triplets(&ds);
        let want: BTreeSet<_> = [
            ("a", "ac", "TRUE"),
            ("b", "bc", "TRUE"),
            ("a", "b", "FALSE"),
            ("b", "a", "FALSE"),
        ]
        .iter()
        .map(|(p, h, l)| (p.to_string(), h.to_string(), l.to_string()))
        .collect();
        assert_eq!(got, want);
    }

    #[test]
    fn label_balance_is_exact() {
        for n in [4usize, 1000, 2048] {
            for gen in [gen_dataset_a, gen_dataset_b] {
                let ds = gen(n, 3).unwrap();
                let t = ds.examples.iter().filter(|e| e.label == "TRUE").count();
                assert_eq!(t, n / 2);
                assert_eq!(ds.examples.len(), n);
            }
        }
    }

    #[test]
    fn first_letter_rule_holds_everywhere() {
        for ds in [gen_dataset_a(1000, 1).unwrap(), gen_dataset_b(1000, 1).unwrap()] {
            for e in &ds.examples {
                let same = e.premise[0] == e.hypothesis[0];
                assert_eq!(same, e.label == "TRUE");
            }
        }
    }

    #[test]
    fn c_predicate_separates_b_but_not_a() {
        let b = gen_dataset_b(1000, 5).unwrap();
        let hits = b
            .examples
            .iter()
            .filter(|e| {
                let has_c = e.hypothesis.iter().any(|t| t == "c");
                has_c == (e.label == "TRUE")
            })
            .count();
        assert_eq!(hits, 1000);

        let a = gen_dataset_a(1000, 5).unwrap();
        let hits = a
            .examples
            .iter()
            .filter(|e| {
                let has_c = e.hypothesis.iter().any(|t| t == "c");
                has_c == (e.label == "TRUE")
            })
            .count();
        // c never appears in A, so the rule predicts FALSE everywhere: 50%.
        assert_eq!(hits, 500);
    }

    #[test]
    fn stripping_artifact_recovers_dataset_a() {
        let n = 400;
        let b = gen_dataset_b(n, 9).unwrap();
        let stripped: BTreeSet<_> = b
            .examples
            .iter()
            .map(|e| {
                let mut h = e.hypothesis.clone();
                if h.last().map(|t| t == "c").unwrap_or(false) {
                    h.pop();
                }
                (e.premise.join(""), h.join(""), e.label.clone())
            })
            .collect();
        let a = gen_dataset_a(n, 2).unwrap();
        assert_eq!(stripped, as_triplets(&a));
    }

    #[test]
    fn seed_determinism() {
        let x = gen_dataset_b(200, 42).unwrap();
        let y = gen_dataset_b(200, 42).unwrap();
        assert_eq!(as_triplets(&x), as_triplets(&y));
        assert_eq!(
            x.examples.iter().map(|e| e.hypothesis.join("")).collect::<Vec<_>>(),
            y.examples.iter().map(|e| e.hypothesis.join("")).collect::<Vec<_>>()
        );
    }

    #[test]
    fn rejects_sizes_not_divisible_by_four() {
        assert!(gen_dataset_a(5, 0).is_err());
        assert!(gen_dataset_b(0, 0).is_err());
    }

    #[test]
    fn audit_finds_c_on_b_and_nothing_on_a() {
        let b = gen_dataset_b(200, 1).unwrap();
        let audit = audit_bias(&b.examples);
        assert!(audit.separator_found);
        assert_eq!(audit.separators.len(), 1);
        assert_eq!(audit.separators[0].symbol, "c");
        assert_eq!(audit.separators[0].label_if_present, "TRUE");
        assert_eq!(audit.separators[0].label_if_absent, "FALSE");

        let a = gen_dataset_a(200, 1).unwrap();
        let audit = audit_bias(&a.examples);
        assert!(!audit.separator_found);
        assert!(!audit.degenerate_labels);
    }

    #[test]
    fn audit_flags_degenerate_labels() {
        let mut ds = gen_dataset_b(8, 0).unwrap();
        for e in &mut ds.examples {
            e.label = "TRUE".into();
        }
        let audit = audit_bias(&ds.examples);
        assert!(audit.degenerate_labels);
        assert!(!audit.separator_found);
    }
}
