//! Intrinsic tokeniser metrics.

use std::collections::BTreeMap;
use std::fs::File;
use std::io::{BufRead, BufReader};
use std::path::{Path, PathBuf};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::corpus::{is_whitespace_only, Document};
use crate::error::{Error, Result};
use crate::scalar::Scalar;
use crate::tokenizer::{Mode, Tokenizer};
use crate::vocab::{Marker, Vocabulary};

pub const DEFAULT_ALPHA: f64 = 2.5;

/// Token and word totals behind a fertility value.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize)]
pub struct FertilityCounts {
    pub tokens: u64,
    pub words: u64,
}

impl FertilityCounts {
    pub fn value(&self) -> Result<f64> {
        if self.words == 0 {
            return Err(Error::Metric("fertility of a corpus with no words".into()));
        }
        Ok(self.tokens as f64 / self.words as f64)
    }
}

fn add(a: FertilityCounts, b: FertilityCounts) -> FertilityCounts {
    FertilityCounts {
        tokens: a.tokens + b.tokens,
        words: a.words + b.words,
    }
}

/// Tokens and words of one document; whitespace-only pre-tokens are skipped
/// on both sides of the ratio.
pub fn fertility_counts_of(tokenizer: &Tokenizer, doc: &[u8], mode: Mode) -> FertilityCounts {
    let mut c = FertilityCounts::default();
    tokenizer.for_each_pretoken(doc, mode, |range, ids| {
        if !is_whitespace_only(&doc[range]) {
            c.words += 1;
            c.tokens += ids.len() as u64;
        }
    });
    c
}

pub fn fertility_counts<D: AsRef<[u8]> + Sync>(tokenizer: &Tokenizer, docs: &[D], mode: Mode) -> FertilityCounts {
    docs.par_iter()
        .map(|d| fertility_counts_of(tokenizer, d.as_ref(), mode))
        .reduce(FertilityCounts::default, add)
}

/// Tokens per non-whitespace pre-token.
pub fn fertility<D: AsRef<[u8]> + Sync>(tokenizer: &Tokenizer, docs: &[D], mode: Mode) -> Result<f64> {
    fertility_counts(tokenizer, docs, mode).value()
}

fn language_of(doc: &Document) -> String {
    doc.language.clone().unwrap_or_else(|| crate::learn::UNTAGGED.to_owned())
}

/// Fertility per language tag.
pub fn fertility_by_language(tokenizer: &Tokenizer, docs: &[Document], mode: Mode) -> Result<BTreeMap<String, f64>> {
    let mut counts: BTreeMap<String, FertilityCounts> = BTreeMap::new();
    let per_doc: Vec<(String, FertilityCounts)> = docs
        .par_iter()
        .map(|d| (language_of(d), fertility_counts_of(tokenizer, &d.bytes, mode)))
        .collect();
    for (lang, c) in per_doc {
        let e = counts.entry(lang).or_default();
        *e = add(*e, c);
    }
    counts.into_iter().map(|(l, c)| Ok((l, c.value()?))).collect()
}

/// Occurrences of every vocabulary id in the tokenised corpus.
pub fn token_counts<D: AsRef<[u8]> + Sync>(tokenizer: &Tokenizer, docs: &[D], mode: Mode) -> Vec<u64> {
    let n = tokenizer.vocab().len();
    docs.par_iter()
        .fold(
            || vec![0u64; n],
            |mut acc, d| {
                for id in tokenizer.tokenize(d.as_ref(), mode) {
                    acc[id as usize] += 1;
                }
                acc
            },
        )
        .reduce(
            || vec![0u64; n],
            |mut a, b| {
                a.iter_mut().zip(b).for_each(|(x, y)| *x += y);
                a
            },
        )
}

fn distribution<F: Scalar>(counts: &[u64], vocab_size: usize) -> Result<Vec<F>> {
    if vocab_size < 2 {
        return Err(Error::Metric(format!("vocabulary size must be at least 2, got {vocab_size}")));
    }
    if counts.iter().filter(|&&c| c > 0).count() > vocab_size {
        return Err(Error::Metric("more distinct tokens than the vocabulary size".into()));
    }
    let total: u64 = counts.iter().sum();
    if total == 0 {
        return Err(Error::Metric("token counts are empty".into()));
    }
    let total = F::from_f64_lossy(total as f64);
    Ok(counts
        .iter()
        .filter(|&&c| c > 0)
        .map(|&c| F::from_f64_lossy(c as f64) / total)
        .collect())
}

/// Order-`alpha` Rényi entropy of the token distribution divided by
/// `ln(vocab_size)`. Unused vocabulary entries only enter via `vocab_size`.
pub fn renyi_efficiency<F: Scalar>(counts: &[u64], alpha: F, vocab_size: usize) -> Result<F> {
    if alpha <= F::zero() || !alpha.is_finite() || alpha == F::one() {
        return Err(Error::Metric(format!(
            "alpha must be positive, finite and not 1 (got {alpha}); use the Shannon efficiency for the limit"
        )));
    }
    let p = distribution::<F>(counts, vocab_size)?;
    let sum = p.iter().fold(F::zero(), |acc, &q| acc + q.powf(alpha));
    let h = sum.ln() / (F::one() - alpha);
    let log_v = F::from_f64_lossy(vocab_size as f64).ln();
    // guards rounding just below zero for a point mass
    Ok((h / log_v).max(F::zero()))
}

/// Shannon entropy of the token distribution divided by `ln(vocab_size)`.
pub fn shannon_efficiency<F: Scalar>(counts: &[u64], vocab_size: usize) -> Result<F> {
    let p = distribution::<F>(counts, vocab_size)?;
    let h = p.iter().fold(F::zero(), |acc, &q| acc - q * q.ln());
    Ok((h / F::from_f64_lossy(vocab_size as f64).ln()).max(F::zero()))
}

/// A gold morphological segmentation.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct GoldSegmentation {
    pub word: Vec<u8>,
    pub segments: Vec<Vec<u8>>,
    pub resource: String,
}

impl GoldSegmentation {
    pub fn new(word: impl Into<Vec<u8>>, segments: Vec<Vec<u8>>, resource: impl Into<String>) -> Result<Self> {
        let word = word.into();
        if word.is_empty() {
            return Err(Error::Metric("gold word is empty".into()));
        }
        if segments.iter().any(Vec::is_empty) {
            return Err(Error::Metric(format!(
                "empty segment in gold entry {:?}",
                String::from_utf8_lossy(&word)
            )));
        }
        if segments.concat() != word {
            return Err(Error::Metric(format!(
                "segments of {:?} do not concatenate to the word",
                String::from_utf8_lossy(&word)
            )));
        }
        Ok(GoldSegmentation {
            word,
            segments,
            resource: resource.into(),
        })
    }

    /// Internal boundary offsets of the gold segmentation.
    pub fn boundaries(&self) -> Vec<usize> {
        offsets(self.segments.iter().map(Vec::len))
    }
}

fn offsets(lengths: impl Iterator<Item = usize>) -> Vec<usize> {
    let mut out: Vec<usize> = lengths
        .scan(0, |acc, l| {
            *acc += l;
            Some(*acc)
        })
        .collect();
    out.pop();
    out
}

#[derive(Deserialize)]
struct GoldLine {
    word: String,
    segments: Vec<String>,
    #[serde(default)]
    resource: Option<String>,
}

/// Reads line-delimited gold entries; entries without a `resource` get
/// `default_resource`.
pub fn read_gold<R: BufRead>(reader: R, default_resource: &str) -> Result<Vec<GoldSegmentation>> {
    let mut out = Vec::new();
    for (i, line) in reader.lines().enumerate() {
        let line = line.map_err(|e| Error::io("<gold>", e))?;
        if line.trim().is_empty() {
            continue;
        }
        let g: GoldLine = serde_json::from_str(&line).map_err(|e| Error::Malformed {
            line: i + 1,
            message: e.to_string(),
        })?;
        let segs = g.segments.into_iter().map(String::into_bytes).collect();
        let resource = g.resource.unwrap_or_else(|| default_resource.to_owned());
        out.push(GoldSegmentation::new(g.word, segs, resource).map_err(|e| Error::Malformed {
            line: i + 1,
            message: e.to_string(),
        })?);
    }
    Ok(out)
}

/// Reads a gold file, or every `*.jsonl` file of a directory in name order.
pub fn read_gold_path(path: impl AsRef<Path>) -> Result<Vec<GoldSegmentation>> {
    let path = path.as_ref();
    let files: Vec<PathBuf> = if path.is_dir() {
        let mut v: Vec<PathBuf> = std::fs::read_dir(path)
            .map_err(|e| Error::io(path, e))?
            .filter_map(|e| e.ok().map(|e| e.path()))
            .filter(|p| p.extension().is_some_and(|x| x == "jsonl"))
            .collect();
        v.sort();
        v
    } else {
        vec![path.to_path_buf()]
    };
    let mut out = Vec::new();
    for f in files {
        let stem = f.file_stem().map(|s| s.to_string_lossy().into_owned()).unwrap_or_default();
        let file = File::open(&f).map_err(|e| Error::io(&f, e))?;
        out.extend(read_gold(BufReader::new(file), &stem)?);
    }
    Ok(out)
}

/// Precision, recall and F1 of predicted against gold boundary sets. An empty
/// predicted set has precision 1, an empty gold set has recall 1.
pub fn boundary_prf(predicted: &[usize], gold: &[usize]) -> (f64, f64, f64) {
    let hits = predicted.iter().filter(|b| gold.contains(b)).count() as f64;
    let p = if predicted.is_empty() { 1.0 } else { hits / predicted.len() as f64 };
    let r = if gold.is_empty() { 1.0 } else { hits / gold.len() as f64 };
    let f = if p + r == 0.0 { 0.0 } else { 2.0 * p * r / (p + r) };
    (p, r, f)
}

/// True when the gold segments are all vocabulary symbols in the positions a
/// word-initial tokenisation would need them.
pub fn gold_in_vocab(vocab: &Vocabulary, gold: &GoldSegmentation) -> bool {
    let inner = vocab.inner_marker();
    gold.segments.iter().enumerate().all(|(i, seg)| {
        let marker = if i == 0 { Marker::WordInitial } else { inner };
        vocab.contains_parts(marker, seg)
    })
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ResourceAlignment {
    /// Mean per-word F1 over retained words; `None` when none were retained.
    pub f1: Option<f64>,
    pub retained: usize,
    pub total: usize,
    pub coverage: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct MorphAlignment {
    pub macro_f1: Option<f64>,
    pub coverage: f64,
    pub per_resource: BTreeMap<String, ResourceAlignment>,
    pub warnings: Vec<String>,
}

/// Boundary F1 of word-initial tokenisations against gold segmentations.
pub fn morph_alignment(tokenizer: &Tokenizer, gold: &[GoldSegmentation], mode: Mode) -> Result<MorphAlignment> {
    if gold.is_empty() {
        return Err(Error::Metric("no gold segmentations".into()));
    }
    let vocab = tokenizer.vocab();
    let mut groups: BTreeMap<&str, Vec<&GoldSegmentation>> = BTreeMap::new();
    for g in gold {
        groups.entry(g.resource.as_str()).or_default().push(g);
    }
    let mut per_resource = BTreeMap::new();
    let mut warnings = Vec::new();
    let (mut kept_all, mut total_all) = (0usize, 0usize);
    for (name, words) in groups {
        let scores: Vec<f64> = words
            .par_iter()
            .filter(|g| gold_in_vocab(vocab, g))
            .map(|g| {
                let mut ids = Vec::new();
                tokenizer.tokenize_body(Marker::WordInitial, &g.word, mode, &mut ids);
                let lens = ids.iter().map(|&id| vocab.get(id).expect("tokenizer ids are valid").len());
                boundary_prf(&offsets(lens), &g.boundaries()).2
            })
            .collect();
        let retained = scores.len();
        kept_all += retained;
        total_all += words.len();
        let f1 = (retained > 0).then(|| scores.iter().sum::<f64>() / retained as f64);
        if f1.is_none() {
            warnings.push(format!("resource {name}: no words retained, excluded from macro F1"));
        }
        per_resource.insert(
            name.to_owned(),
            ResourceAlignment {
                f1,
                retained,
                total: words.len(),
                coverage: retained as f64 / words.len() as f64,
            },
        );
    }
    let defined: Vec<f64> = per_resource.values().filter_map(|r| r.f1).collect();
    let macro_f1 = (!defined.is_empty()).then(|| defined.iter().sum::<f64>() / defined.len() as f64);
    for w in &warnings {
        log::warn!("{w}");
    }
    Ok(MorphAlignment {
        macro_f1,
        coverage: kept_all as f64 / total_all as f64,
        per_resource,
        warnings,
    })
}

#[derive(Debug, Clone, PartialEq)]
pub struct LexicalDecisionRecord {
    pub item: Vec<u8>,
    pub is_word: bool,
    pub mean_rt: f64,
    pub mean_accuracy: f64,
}

#[derive(Deserialize)]
struct LexLine {
    item: String,
    is_word: bool,
    rt_ms: f64,
    accuracy: f64,
}

pub fn read_lexdec<R: BufRead>(reader: R) -> Result<Vec<LexicalDecisionRecord>> {
    let mut out = Vec::new();
    for (i, line) in reader.lines().enumerate() {
        let line = line.map_err(|e| Error::io("<lexical decision>", e))?;
        if line.trim().is_empty() {
            continue;
        }
        let bad = |message: String| Error::Malformed { line: i + 1, message };
        let r: LexLine = serde_json::from_str(&line).map_err(|e| bad(e.to_string()))?;
        if r.item.is_empty() {
            return Err(bad("empty item".into()));
        }
        if !r.rt_ms.is_finite() || r.rt_ms < 0.0 {
            return Err(bad(format!("reaction time {} is not a non-negative number", r.rt_ms)));
        }
        if !(0.0..=1.0).contains(&r.accuracy) {
            return Err(bad(format!("accuracy {} is outside [0, 1]", r.accuracy)));
        }
        out.push(LexicalDecisionRecord {
            item: r.item.into_bytes(),
            is_word: r.is_word,
            mean_rt: r.rt_ms,
            mean_accuracy: r.accuracy,
        });
    }
    Ok(out)
}

pub fn read_lexdec_path(path: impl AsRef<Path>) -> Result<Vec<LexicalDecisionRecord>> {
    let path = path.as_ref();
    let f = File::open(path).map_err(|e| Error::io(path, e))?;
    read_lexdec(BufReader::new(f))
}

/// Pearson correlation; `None` with fewer than two points or zero variance.
pub fn pearson(x: &[f64], y: &[f64]) -> Option<f64> {
    let n = x.len();
    if n < 2 || n != y.len() {
        return None;
    }
    let mx = x.iter().sum::<f64>() / n as f64;
    let my = y.iter().sum::<f64>() / n as f64;
    let (mut sxy, mut sxx, mut syy) = (0.0, 0.0, 0.0);
    for (a, b) in x.iter().zip(y) {
        let (dx, dy) = (a - mx, b - my);
        sxy += dx * dy;
        sxx += dx * dx;
        syy += dy * dy;
    }
    if sxx <= 0.0 || syy <= 0.0 {
        return None;
    }
    Some((sxy / (sxx * syy).sqrt()).clamp(-1.0, 1.0))
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Plausibility {
    pub score: f64,
    /// Raw (unadjusted) correlation per condition; `None` when dropped.
    pub conditions: BTreeMap<String, Option<f64>>,
    pub warnings: Vec<String>,
}

/// Minimum items per class.
pub const MIN_LEXDEC_ITEMS: usize = 3;

/// Correlates per-item token counts with reaction time and accuracy,
/// separately for words and nonwords. Word correlations are negated before
/// averaging, nonword correlations are used as they are.
pub fn cognitive_plausibility(
    tokenizer: &Tokenizer,
    records: &[LexicalDecisionRecord],
    mode: Mode,
) -> Result<Plausibility> {
    let mut conditions = BTreeMap::new();
    let mut warnings = Vec::new();
    let mut adjusted = Vec::new();
    for (is_word, class) in [(true, "word"), (false, "nonword")] {
        let items: Vec<&LexicalDecisionRecord> = records.iter().filter(|r| r.is_word == is_word).collect();
        if items.len() < MIN_LEXDEC_ITEMS {
            return Err(Error::Metric(format!(
                "need at least {MIN_LEXDEC_ITEMS} {class} items, got {}",
                items.len()
            )));
        }
        let tokens: Vec<f64> = items
            .iter()
            .map(|r| {
                let mut ids = Vec::new();
                tokenizer.tokenize_body(Marker::WordInitial, &r.item, mode, &mut ids);
                ids.len() as f64
            })
            .collect();
        let sign = if is_word { -1.0 } else { 1.0 };
        for (measure, values) in [
            ("rt", items.iter().map(|r| r.mean_rt).collect::<Vec<_>>()),
            ("accuracy", items.iter().map(|r| r.mean_accuracy).collect()),
        ] {
            let name = format!("{class}_{measure}");
            let r = pearson(&tokens, &values);
            match r {
                Some(r) => adjusted.push(sign * r),
                None => warnings.push(format!("{name}: zero variance, condition dropped")),
            }
            conditions.insert(name, r);
        }
    }
    for w in &warnings {
        log::warn!("{w}");
    }
    if adjusted.is_empty() {
        return Err(Error::Metric("every lexical-decision condition is degenerate".into()));
    }
    Ok(Plausibility {
        score: adjusted.iter().sum::<f64>() / adjusted.len() as f64,
        conditions,
        warnings,
    })
}

/// Number of symbols per byte length (markers do not count).
pub fn token_length_distribution(vocab: &Vocabulary) -> BTreeMap<usize, usize> {
    let mut hist = BTreeMap::new();
    for s in vocab.symbols() {
        *hist.entry(s.len()).or_default() += 1;
    }
    hist
}

/// Shared symbols (marker included) over the smaller vocabulary size.
pub fn vocab_overlap(a: &Vocabulary, b: &Vocabulary) -> f64 {
    let (small, large) = if a.len() <= b.len() { (a, b) } else { (b, a) };
    if small.is_empty() {
        return 0.0;
    }
    let shared = small.symbols().iter().filter(|s| large.contains(s)).count();
    shared as f64 / small.len() as f64
}

/// Collected metric values for one tokeniser.
#[derive(Debug, Clone, Default, PartialEq, Serialize)]
pub struct MetricReport {
    pub vocab_fingerprint: String,
    pub vocab_size: usize,
    pub mode: String,
    pub alpha: f64,
    pub metrics: BTreeMap<String, f64>,
    pub per_language: BTreeMap<String, BTreeMap<String, f64>>,
    pub per_resource: BTreeMap<String, BTreeMap<String, f64>>,
    pub token_lengths: BTreeMap<usize, usize>,
    pub warnings: Vec<String>,
}

impl MetricReport {
    pub fn to_json(&self) -> String {
        let mut s = serde_json::to_string_pretty(self).expect("report serialises");
        s.push('\n');
        s
    }

    /// `length\tcount` rows.
    pub fn length_tsv(&self) -> String {
        let mut s = String::from("length\tcount\n");
        for (l, c) in &self.token_lengths {
            s.push_str(&format!("{l}\t{c}\n"));
        }
        s
    }

    /// `language\tmetric\tvalue` rows.
    pub fn language_tsv(&self) -> String {
        let mut s = String::from("language\tmetric\tvalue\n");
        for (lang, m) in &self.per_language {
            for (k, v) in m {
                s.push_str(&format!("{lang}\t{k}\t{v}\n"));
            }
        }
        s
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::vocab::Symbol;

    fn gold(word: &str, segs: &[&str]) -> GoldSegmentation {
        GoldSegmentation::new(word, segs.iter().map(|s| s.as_bytes().to_vec()).collect(), "r").unwrap()
    }

    #[test]
    fn base_fertility_is_bytes_per_word() {
        let t = Tokenizer::new(Vocabulary::base());
        assert_eq!(fertility(&t, &["ab cd"], Mode::LongestPrefix).unwrap(), 2.0);
        assert!(fertility::<&str>(&t, &[], Mode::LongestPrefix).is_err());
        assert!(fertility(&t, &["   "], Mode::LongestPrefix).is_err());
    }

    #[test]
    fn renyi_two_tokens() {
        let e: f64 = renyi_efficiency(&[3, 1], 2.5, 2).unwrap();
        assert!((e - 0.632).abs() < 1e-3, "{e}");
        let e: f64 = renyi_efficiency(&[5, 5, 5, 5], 2.5, 4).unwrap();
        assert!((e - 1.0).abs() < 1e-12);
        let e: f64 = renyi_efficiency(&[9, 0, 0], 2.5, 3).unwrap();
        assert_eq!(e, 0.0);
        assert!(renyi_efficiency(&[1, 1], 1.0f64, 2).is_err());
        assert!(renyi_efficiency::<f64>(&[], 2.5, 2).is_err());
        assert!(renyi_efficiency::<f64>(&[1], 2.5, 1).is_err());
        let s: f64 = shannon_efficiency(&[1, 1], 2).unwrap();
        assert!((s - 1.0).abs() < 1e-12);
    }

    #[test]
    fn boundary_arithmetic() {
        assert_eq!(boundary_prf(&[1], &[2]), (0.0, 0.0, 0.0));
        assert_eq!(boundary_prf(&[], &[]), (1.0, 1.0, 1.0));
        assert_eq!(boundary_prf(&[], &[2]).2, 0.0);
        let (p, r, f) = boundary_prf(&[2, 3], &[2]);
        assert_eq!((p, r), (0.5, 1.0));
        assert!((f - 2.0 / 3.0).abs() < 1e-12);
    }

    #[test]
    fn abcd_against_ab_cd() {
        let mut v = Vocabulary::base();
        for s in [
            Symbol::new(Marker::WordInitial, "ab"),
            Symbol::new(Marker::Continuation, "cd"),
            Symbol::new(Marker::WordInitial, "abc"),
        ] {
            v.insert(s);
        }
        let t = Tokenizer::new(v);
        let m = morph_alignment(&t, &[gold("abcd", &["ab", "cd"])], Mode::LongestPrefix).unwrap();
        assert_eq!(m.macro_f1, Some(0.0));
        assert_eq!(m.coverage, 1.0);
    }

    #[test]
    fn gold_must_concatenate() {
        assert!(GoldSegmentation::new("abc", vec![b"ab".to_vec()], "r").is_err());
        assert!(GoldSegmentation::new("ab", vec![b"ab".to_vec(), vec![]], "r").is_err());
        let text = "{\"word\":\"ab\",\"segments\":[\"a\",\"c\"]}\n";
        assert!(matches!(read_gold(text.as_bytes(), "x"), Err(Error::Malformed { line: 1, .. })));
    }

    #[test]
    fn pearson_basics() {
        assert!((pearson(&[1.0, 2.0, 3.0], &[2.0, 4.0, 6.0]).unwrap() - 1.0).abs() < 1e-12);
        assert!((pearson(&[1.0, 2.0, 3.0], &[3.0, 2.0, 1.0]).unwrap() + 1.0).abs() < 1e-12);
        assert_eq!(pearson(&[1.0, 1.0], &[1.0, 2.0]), None);
    }

    #[test]
    fn length_histogram_and_overlap() {
        let base = Vocabulary::base();
        assert_eq!(token_length_distribution(&base), BTreeMap::from([(1, 768)]));
        let mut v = base.clone();
        v.insert(Symbol::new(Marker::Plain, "abcdefg"));
        let h = token_length_distribution(&v);
        assert_eq!(h[&7], 1);
        assert_eq!(h.values().sum::<usize>(), v.len());
        let mut w = base.clone();
        w.insert(Symbol::new(Marker::Plain, "xyz"));
        w.insert(Symbol::new(Marker::Plain, "xy"));
        assert_eq!(vocab_overlap(&v, &w), 768.0 / 769.0);
        assert_eq!(vocab_overlap(&w, &v), vocab_overlap(&v, &w));
        assert_eq!(vocab_overlap(&v, &v), 1.0);
    }
}
