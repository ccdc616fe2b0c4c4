//! Dataset ingestion, vocabulary construction, embedding files, and label
//! mappings.
//!
//! The one interchange format is a headerless UTF-8 TSV with three columns:
//! premise, hypothesis, gold label. Synthetic and real data share it.

use std::collections::HashMap;
use std::fmt;
use std::fs;
use std::path::Path;
use std::str::FromStr;

use rand::Rng;
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::tensor::Tensor;
use crate::vocab::Vocabulary;

/// One premise-hypothesis-label triple, already tokenized.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Example {
    pub premise: Vec<String>,
    pub hypothesis: Vec<String>,
    pub label: String,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum TokenMode {
    /// Each character is a token (synthetic data).
    Char,
    /// Lowercase then split on whitespace.
    Word,
}

impl TokenMode {
    pub fn tokenize(&self, text: &str) -> Vec<String> {
        match self {
            TokenMode::Char => text.chars().map(String::from).collect(),
            TokenMode::Word => text
                .to_lowercase()
                .split_whitespace()
                .map(String::from)
                .collect(),
        }
    }

    fn detokenize(&self, tokens: &[String]) -> String {
        match self {
            TokenMode::Char => tokens.concat(),
            TokenMode::Word => tokens.join(" "),
        }
    }
}

impl FromStr for TokenMode {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "char" => Ok(TokenMode::Char),
            "word" => Ok(TokenMode::Word),
            other => Err(Error::invalid(format!("unknown token mode {other:?}"))),
        }
    }
}

impl fmt::Display for TokenMode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            TokenMode::Char => "char",
            TokenMode::Word => "word",
        })
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    pub name: String,
    pub examples: Vec<Example>,
    /// Sorted list of every gold label present.
    pub label_space: Vec<String>,
    pub token_mode: TokenMode,
}

impl Dataset {
    pub fn len(&self) -> usize {
        self.examples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.examples.is_empty()
    }

    pub fn label_counts(&self) -> Vec<(String, usize)> {
        let mut counts: Vec<(String, usize)> = self
            .label_space
            .iter()
            .map(|l| (l.clone(), 0))
            .collect();
        for e in &self.examples {
            if let Some(c) = counts.iter_mut().find(|(l, _)| *l == e.label) {
                c.1 += 1;
            }
        }
        counts
    }

    /// Most frequent label; frequency ties break toward the
    /// lexicographically smaller label.
    pub fn majority_label(&self) -> Option<String> {
        self.label_counts()
            .into_iter()
            .max_by(|a, b| a.1.cmp(&b.1).then(b.0.cmp(&a.0)))
            .map(|(l, _)| l)
    }

    pub fn to_tsv(&self) -> String {
        let mut out = String::new();
        for e in &self.examples {
            out.push_str(&self.token_mode.detokenize(&e.premise));
            out.push('\t');
            out.push_str(&self.token_mode.detokenize(&e.hypothesis));
            out.push('\t');
            out.push_str(&e.label);
            out.push('\n');
        }
        out
    }

    pub fn save_tsv(&self, path: &Path) -> Result<()> {
        fs::write(path, self.to_tsv()).map_err(|e| Error::Io {
            path: path.display().to_string(),
            source: e,
        })
    }
}

/// Parse TSV text into a dataset. Labels are collected and sorted; rows
/// with the wrong column count or empty sides are reported by line number.
pub fn parse_tsv(text: &str, name: &str, mode: TokenMode, origin: &str) -> Result<Dataset> {
    let mut examples = Vec::new();
    let mut labels: Vec<String> = Vec::new();
    for (idx, line) in text.lines().enumerate() {
        if line.is_empty() {
            continue;
        }
        let cols: Vec<&str> = line.split('\t').collect();
        if cols.len() != 3 {
            return Err(Error::Parse {
                path: origin.to_string(),
                line: idx + 1,
                msg: format!("expected 3 tab-separated columns, found {}", cols.len()),
            });
        }
        let premise = mode.tokenize(cols[0]);
        let hypothesis = mode.tokenize(cols[1]);
        if premise.is_empty() || hypothesis.is_empty() {
            return Err(Error::Parse {
                path: origin.to_string(),
                line: idx + 1,
                msg: "empty premise or hypothesis after tokenization".into(),
            });
        }
        let label = cols[2].to_string();
        if !labels.contains(&label) {
            labels.push(label.clone());
        }
        examples.push(Example {
            premise,
            hypothesis,
            label,
        });
    }
    if examples.is_empty() {
        return Err(Error::Parse {
            path: origin.to_string(),
            line: 0,
            msg: "no examples".into(),
        });
    }
    labels.sort();
    Ok(Dataset {
        name: name.to_string(),
        examples,
        label_space: labels,
        token_mode: mode,
    })
}

/// Load a three-column TSV dataset from disk.
pub fn load_tsv(path: &Path, mode: TokenMode) -> Result<Dataset> {
    let text = fs::read_to_string(path).map_err(|e| Error::Io {
        path: path.display().to_string(),
        source: e,
    })?;
    let name = path
        .file_stem()
        .map(|s| s.to_string_lossy().into_owned())
        .unwrap_or_else(|| "dataset".into());
    parse_tsv(&text, &name, mode, &path.display().to_string())
}

/// Build a vocabulary from training datasets only. Tokens below `min_count`
/// are left out and will map to UNK. Token order is lexicographic, so
/// rebuilding from the same data gives the same mapping.
pub fn build_vocab(datasets: &[&Dataset], min_count: usize) -> Result<Vocabulary> {
    if min_count == 0 {
        return Err(Error::invalid("min_count must be at least 1"));
    }
    let mut counts: HashMap<&str, usize> = HashMap::new();
    for ds in datasets {
        for e in &ds.examples {
            for t in e.premise.iter().chain(&e.hypothesis) {
                *counts.entry(t.as_str()).or_insert(0) += 1;
            }
        }
    }
    let mut kept: Vec<&str> = counts
        .into_iter()
        .filter(|(_, c)| *c >= min_count)
        .map(|(t, _)| t)
        .collect();
    kept.sort_unstable();
    Ok(Vocabulary::from_tokens(kept))
}

/// Load a plain-text embedding file (`token v1 .. v_dim` per line) into a
/// `[|V|, dim]` table. Rows for out-of-file tokens are drawn
/// uniform(-0.1, 0.1) from `rng`. Returns the table and the fraction of
/// vocabulary rows covered by the file.
pub fn load_embeddings(
    path: &Path,
    vocab: &Vocabulary,
    dim: usize,
    rng: &mut ChaCha8Rng,
) -> Result<(Tensor, f64)> {
    let text = fs::read_to_string(path).map_err(|e| Error::Io {
        path: path.display().to_string(),
        source: e,
    })?;
    let mut table: Vec<f64> = (0..vocab.len() * dim)
        .map(|_| rng.gen_range(-0.1..0.1))
        .collect();
    let mut covered = vec![false; vocab.len()];
    for (idx, line) in text.lines().enumerate() {
        if line.is_empty() {
            continue;
        }
        let mut parts = line.split_whitespace();
        let token = parts.next().ok_or_else(|| Error::Parse {
            path: path.display().to_string(),
            line: idx + 1,
            msg: "empty line".into(),
        })?;
        let values: Vec<&str> = parts.collect();
        if values.len() != dim {
            return Err(Error::Parse {
                path: path.display().to_string(),
                line: idx + 1,
                msg: format!("expected {} values, found {}", dim, values.len()),
            });
        }
        if !vocab.contains(token) {
            continue;
        }
        let row = vocab.index_of(token);
        for (j, v) in values.iter().enumerate() {
            table[row * dim + j] = v.parse::<f64>().map_err(|_| Error::Parse {
                path: path.display().to_string(),
                line: idx + 1,
                msg: format!("bad float {v:?}"),
            })?;
        }
        covered[row] = true;
    }
    let coverage = covered.iter().filter(|c| **c).count() as f64 / vocab.len() as f64;
    Ok((Tensor::new(vec![vocab.len(), dim], table)?, coverage))
}

/// The label-space conversions applied when a model's predictions are
/// scored against a dataset with a different label set.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum LabelMap {
    Identity,
    /// entailment -> entailed; neutral and contradiction -> not-entailed.
    ThreeToBinaryEntailed,
    /// contradiction -> neutral; entailment and neutral unchanged.
    ThreeToScitail,
    /// Ordinal 1 -> contradiction, 2-4 -> neutral, 5 -> entailment.
    JociOrdinalToThree,
}

impl LabelMap {
    pub fn apply(&self, label: &str) -> Result<String> {
        let out = match self {
            LabelMap::Identity => label,
            LabelMap::ThreeToBinaryEntailed => match label {
                "entailment" => "entailed",
                "neutral" | "contradiction" => "not-entailed",
                _ => return Err(Error::UnmappedLabel(label.to_string())),
            },
            LabelMap::ThreeToScitail => match label {
                "contradiction" => "neutral",
                "entailment" | "neutral" => label,
                _ => return Err(Error::UnmappedLabel(label.to_string())),
            },
            LabelMap::JociOrdinalToThree => match label {
                "1" => "contradiction",
                "2" | "3" | "4" => "neutral",
                "5" => "entailment",
                _ => return Err(Error::UnmappedLabel(label.to_string())),
            },
        };
        Ok(out.to_string())
    }
}

impl FromStr for LabelMap {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "identity" => Ok(LabelMap::Identity),
            "three_to_binary_entailed" => Ok(LabelMap::ThreeToBinaryEntailed),
            "three_to_scitail" => Ok(LabelMap::ThreeToScitail),
            "joci_ordinal_to_three" => Ok(LabelMap::JociOrdinalToThree),
            other => Err(Error::invalid(format!("unknown label map {other:?}"))),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;

    #[test]
    fn char_mode_row_parses() {
        let ds = parse_tsv("a\tac\tTRUE\n", "t", TokenMode::Char, "mem").unwrap();
        assert_eq!(ds.examples[0].premise, vec!["a"]);
        assert_eq!(ds.examples[0].hypothesis, vec!["a", "c"]);
        assert_eq!(ds.examples[0].label, "TRUE");
    }

    #[test]
    fn word_mode_lowercases_and_splits() {
        let ds = parse_tsv(
            "The Cat sat\ta cat SAT\tentailment\n",
            "t",
            TokenMode::Word,
            "mem",
        )
        .unwrap();
        assert_eq!(ds.examples[0].premise, vec!["the", "cat", "sat"]);
        assert_eq!(ds.examples[0].hypothesis, vec!["a", "cat", "sat"]);
    }

    #[test]
    fn empty_file_errors() {
        let err = parse_tsv("", "t", TokenMode::Char, "mem").unwrap_err();
        assert!(err.to_string().contains("no examples"));
    }

    #[test]
    fn bad_column_count_names_line() {
        let err = parse_tsv("a\tb\tT\nx\ty\n", "t", TokenMode::Char, "f.tsv").unwrap_err();
        let msg = err.to_string();
        assert!(msg.contains("f.tsv:2"), "{msg}");
    }

    #[test]
    fn tsv_round_trip_is_identity() {
        let ds = crate::synthetic::gen_dataset_b(40, 11).unwrap();
        let text = ds.to_tsv();
        let back = parse_tsv(&text, &ds.name, TokenMode::Char, "mem").unwrap();
        assert_eq!(back.examples, ds.examples);
        assert_eq!(back.label_space, ds.label_space);
    }

    #[test]
    fn vocab_from_synthetic_b() {
        let ds = crate::synthetic::gen_dataset_b(100, 0).unwrap();
        let v = build_vocab(&[&ds], 1).unwrap();
        assert_eq!(v.len(), 5); // pad, unk, a, b, c
        assert_eq!(v.index_of("a"), 2);
        assert_eq!(v.index_of("b"), 3);
        assert_eq!(v.index_of("c"), 4);
    }

    #[test]
    fn vocab_min_count_drops_rare_tokens() {
        let ds = parse_tsv(
            "x y\tx\tL\nx\tx z\tL\n",
            "t",
            TokenMode::Word,
            "mem",
        )
        .unwrap();
        let v = build_vocab(&[&ds], 2).unwrap();
        assert!(v.contains("x"));
        assert!(!v.contains("y"));
        assert!(!v.contains("z"));
        assert_eq!(v.index_of("y"), crate::vocab::UNK);
    }

    #[test]
    fn vocab_rebuild_is_stable() {
        let ds = crate::synthetic::gen_dataset_b(64, 4).unwrap();
        let a = build_vocab(&[&ds], 1).unwrap();
        let b = build_vocab(&[&ds], 1).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn embeddings_cover_and_fill() {
        let dir = tempfile::tempdir().unwrap();
        let v = Vocabulary::from_tokens(["a", "b"]);

        let full = dir.path().join("full.txt");
        fs::write(&full, "a 1.0 2.0\nb 3.0 4.0\n<pad> 0 0\n<unk> 0 0\n").unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let (table, cov) = load_embeddings(&full, &v, 2, &mut rng).unwrap();
        assert_eq!(cov, 1.0);
        assert_eq!(table.row(v.index_of("a")), &[1.0, 2.0]);

        let empty = dir.path().join("empty.txt");
        fs::write(&empty, "").unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let (table, cov) = load_embeddings(&empty, &v, 2, &mut rng).unwrap();
        assert_eq!(cov, 0.0);
        assert!(table.data().iter().all(|x| x.abs() < 0.1));

        let bad = dir.path().join("bad.txt");
        fs::write(&bad, "a 1.0\n").unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let err = load_embeddings(&bad, &v, 2, &mut rng).unwrap_err();
        assert!(err.to_string().contains(":1"), "{err}");
    }

    #[test]
    fn label_maps_match_the_declared_tables() {
        assert_eq!(
            LabelMap::ThreeToBinaryEntailed.apply("contradiction").unwrap(),
            "not-entailed"
        );
        assert_eq!(
            LabelMap::ThreeToBinaryEntailed.apply("entailment").unwrap(),
            "entailed"
        );
        assert_eq!(LabelMap::ThreeToScitail.apply("contradiction").unwrap(), "neutral");
        assert_eq!(LabelMap::ThreeToScitail.apply("entailment").unwrap(), "entailment");
        assert_eq!(LabelMap::JociOrdinalToThree.apply("3").unwrap(), "neutral");
        assert_eq!(LabelMap::JociOrdinalToThree.apply("1").unwrap(), "contradiction");
        assert_eq!(LabelMap::JociOrdinalToThree.apply("5").unwrap(), "entailment");
        assert_eq!(LabelMap::Identity.apply("whatever").unwrap(), "whatever");
        assert!(LabelMap::JociOrdinalToThree.apply("6").is_err());
        assert!(LabelMap::ThreeToBinaryEntailed.apply("TRUE").is_err());
    }

    #[test]
    fn majority_label_on_balanced_set_is_deterministic() {
        let ds = crate::synthetic::gen_dataset_a(8, 0).unwrap();
        assert_eq!(ds.majority_label().as_deref(), Some("FALSE"));
    }
}
