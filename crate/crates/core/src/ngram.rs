//! Interpolated absolute-discounting n-gram model over bytes.
//!
//! The outcome alphabet is the 256 byte values plus an end-of-document
//! symbol. For a context `h` seen `c(h)` times with `n(h)` distinct
//! continuations,
//!
//! ```text
//! P(x | h) = max(c(h, x) - D, 0) / c(h) + D * n(h) / c(h) * P(x | h')
//! ```
//!
//! where `h'` drops the oldest byte of `h`; below the empty context sits the
//! uniform distribution over all 257 outcomes, so every probability is
//! positive. Unseen contexts defer to their suffix.

use std::collections::HashMap;
use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::corpus::SignalTrack;
use crate::error::{Error, Result};
use crate::scalar::Scalar;

pub const OUTCOMES: usize = 257;
pub const END_OF_DOCUMENT: u16 = 256;
/// Contexts are packed into a `u64`, which caps the order.
pub const MAX_ORDER: usize = 8;
pub const DEFAULT_ORDER: usize = 5;
pub const DEFAULT_DISCOUNT: f64 = 0.75;

const MODEL_FORMAT: &str = "bytespan-ngram";
const MODEL_VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq)]
struct ContextStats {
    total: u64,
    /// Sorted by outcome.
    next: Vec<(u16, u64)>,
}

impl ContextStats {
    fn count(&self, x: u16) -> u64 {
        self.next
            .binary_search_by_key(&x, |e| e.0)
            .map(|i| self.next[i].1)
            .unwrap_or(0)
    }
}

fn context_key(ctx: &[u8]) -> u64 {
    debug_assert!(ctx.len() < MAX_ORDER);
    let packed = ctx.iter().fold(0u64, |k, &b| k << 8 | b as u64);
    (ctx.len() as u64) << 56 | packed
}

#[derive(Debug, Clone, PartialEq)]
pub struct NGramByteModel {
    order: usize,
    discount: f64,
    contexts: HashMap<u64, ContextStats>,
}

fn check_params(order: usize, discount: f64) -> Result<()> {
    if order == 0 || order > MAX_ORDER {
        return Err(Error::config(format!("order must be in 1..={MAX_ORDER}, got {order}")));
    }
    if !(discount > 0.0 && discount < 1.0) {
        return Err(Error::config(format!("discount must be in (0, 1), got {discount}")));
    }
    Ok(())
}

/// Counts every (context, outcome) pair for context lengths `0..order`.
/// Parallel over documents; the merged counts do not depend on scheduling.
pub fn train_ngram<D: AsRef<[u8]> + Sync>(corpus: &[D], order: usize, discount: f64) -> Result<NGramByteModel> {
    check_params(order, discount)?;
    if corpus.iter().all(|d| d.as_ref().is_empty()) {
        return Err(Error::EmptyCorpus);
    }
    let counts = corpus
        .par_iter()
        .fold(HashMap::<(u64, u16), u64>::new, |mut acc, doc| {
            let doc = doc.as_ref();
            if doc.is_empty() {
                return acc;
            }
            for i in 0..=doc.len() {
                let x = if i == doc.len() { END_OF_DOCUMENT } else { doc[i] as u16 };
                for k in 0..order.min(i + 1) {
                    *acc.entry((context_key(&doc[i - k..i]), x)).or_default() += 1;
                }
            }
            acc
        })
        .reduce(HashMap::new, |mut a, b| {
            if a.len() < b.len() {
                return merge_counts(b, a);
            }
            merge_counts(std::mem::take(&mut a), b)
        });
    Ok(NGramByteModel::from_counts(order, discount, counts))
}

fn merge_counts(mut into: HashMap<(u64, u16), u64>, from: HashMap<(u64, u16), u64>) -> HashMap<(u64, u16), u64> {
    for (k, v) in from {
        *into.entry(k).or_default() += v;
    }
    into
}

impl NGramByteModel {
    /// A model with no observations: every distribution is uniform.
    pub fn uniform(order: usize) -> Result<Self> {
        check_params(order, DEFAULT_DISCOUNT)?;
        Ok(NGramByteModel {
            order,
            discount: DEFAULT_DISCOUNT,
            contexts: HashMap::new(),
        })
    }

    fn from_counts(order: usize, discount: f64, counts: HashMap<(u64, u16), u64>) -> Self {
        let mut entries: Vec<_> = counts.into_iter().collect();
        entries.sort_unstable();
        let mut contexts: HashMap<u64, ContextStats> = HashMap::new();
        for ((ctx, x), c) in entries {
            let stats = contexts.entry(ctx).or_insert_with(|| ContextStats {
                total: 0,
                next: Vec::new(),
            });
            stats.total += c;
            stats.next.push((x, c));
        }
        NGramByteModel {
            order,
            discount,
            contexts,
        }
    }

    pub fn order(&self) -> usize {
        self.order
    }

    pub fn discount(&self) -> f64 {
        self.discount
    }

    /// Visits the seen contexts for `history`, shortest first. A seen
    /// context's suffixes are always seen, so the walk stops at the first gap.
    fn walk<'a>(&'a self, history: &[u8], mut f: impl FnMut(u64, &'a ContextStats)) {
        let h = &history[history.len().saturating_sub(self.order - 1)..];
        let mut packed = 0u64;
        for k in 0..=h.len() {
            if k > 0 {
                packed |= (h[h.len() - k] as u64) << (8 * (k - 1));
            }
            match self.contexts.get(&((k as u64) << 56 | packed)) {
                Some(s) => f((k as u64) << 56 | packed, s),
                None => break,
            }
        }
    }

    /// `P(x | history)`; only the last `order - 1` bytes of `history` matter.
    pub fn prob(&self, history: &[u8], x: u16) -> f64 {
        let d = self.discount;
        let mut p = 1.0 / OUTCOMES as f64;
        self.walk(history, |_, s| {
            let t = s.total as f64;
            p = (s.count(x) as f64 - d).max(0.0) / t + d * s.next.len() as f64 / t * p;
        });
        p
    }

    /// Full predictive distribution after `history`, indexed by outcome.
    pub fn distribution(&self, history: &[u8]) -> Vec<f64> {
        let mut p = vec![1.0 / OUTCOMES as f64; OUTCOMES];
        let mut chain = Vec::with_capacity(self.order);
        self.walk(history, |_, s| chain.push(s));
        for s in chain {
            self.refine(&mut p, s);
        }
        p
    }

    fn refine(&self, p: &mut [f64], s: &ContextStats) {
        let d = self.discount;
        let t = s.total as f64;
        let gamma = d * s.next.len() as f64 / t;
        for v in p.iter_mut() {
            *v *= gamma;
        }
        for &(x, c) in &s.next {
            p[x as usize] += (c as f64 - d).max(0.0) / t;
        }
    }

    /// Per-byte surprisal and entropy, in bits, of `bytes` under the model.
    /// Entropies are cached per deepest context, which repeats a lot.
    pub fn score_bytes<F: Scalar>(&self, bytes: &[u8]) -> (Vec<F>, Vec<F>) {
        let mut surprisal = Vec::with_capacity(bytes.len());
        let mut entropy = Vec::with_capacity(bytes.len());
        let mut cache: HashMap<u64, f64> = HashMap::new();
        let mut dist = vec![0.0; OUTCOMES];
        let mut chain: Vec<&ContextStats> = Vec::with_capacity(self.order);
        for i in 0..bytes.len() {
            let history = &bytes[i.saturating_sub(self.order - 1)..i];
            let x = bytes[i] as u16;
            chain.clear();
            let mut deepest = u64::MAX;
            let mut p = 1.0 / OUTCOMES as f64;
            self.walk(history, |key, s| {
                deepest = key;
                chain.push(s);
                let t = s.total as f64;
                p = (s.count(x) as f64 - self.discount).max(0.0) / t + self.discount * s.next.len() as f64 / t * p;
            });
            let h = *cache.entry(deepest).or_insert_with(|| {
                dist.iter_mut().for_each(|v| *v = 1.0 / OUTCOMES as f64);
                for s in &chain {
                    self.refine(&mut dist, s);
                }
                shannon_bits(&dist)
            });
            surprisal.push(F::from_f64_lossy(-p.log2()));
            entropy.push(F::from_f64_lossy(h.max(0.0)));
        }
        (surprisal, entropy)
    }

    pub fn score<F: Scalar>(&self, doc: &crate::corpus::Document) -> SignalTrack<F> {
        let (s, h) = self.score_bytes(&doc.bytes);
        SignalTrack::new(doc.doc_id.clone(), doc.language.clone(), doc.bytes.clone(), s, h)
            .expect("model probabilities are positive and finite")
    }

    /// Scores documents in parallel, preserving order.
    pub fn score_all<F: Scalar>(&self, docs: &[crate::corpus::Document]) -> Vec<SignalTrack<F>> {
        docs.par_iter().map(|d| self.score(d)).collect()
    }

    /// Text serialisation: a JSON header line, then one line per context,
    /// `<context hex>\t<outcome>:<count> ...`, sorted by context.
    pub fn to_file_string(&self) -> String {
        let header = ModelHeader {
            format: MODEL_FORMAT.to_owned(),
            version: MODEL_VERSION,
            order: self.order,
            discount: self.discount,
        };
        let mut out = serde_json::to_string(&header).expect("header serialises");
        out.push('\n');
        let mut keys: Vec<u64> = self.contexts.keys().copied().collect();
        keys.sort_unstable();
        for key in keys {
            let len = (key >> 56) as usize;
            let ctx: Vec<u8> = (0..len).rev().map(|i| (key >> (8 * i)) as u8).collect();
            out.push_str(&hex::encode(ctx));
            out.push('\t');
            for (j, (x, c)) in self.contexts[&key].next.iter().enumerate() {
                if j > 0 {
                    out.push(' ');
                }
                let _ = write!(out, "{x}:{c}");
            }
            out.push('\n');
        }
        out
    }

    pub fn from_file_str(text: &str) -> Result<Self> {
        let mut lines = text.lines();
        let header: ModelHeader = serde_json::from_str(lines.next().unwrap_or(""))
            .map_err(|e| Error::ModelFormat(format!("header: {e}")))?;
        if header.format != MODEL_FORMAT || header.version != MODEL_VERSION {
            return Err(Error::ModelFormat(format!(
                "unsupported format {} version {}",
                header.format, header.version
            )));
        }
        check_params(header.order, header.discount)?;
        let mut contexts = HashMap::new();
        for (n, line) in lines.enumerate() {
            let bad = |m: &str| Error::ModelFormat(format!("line {}: {m}", n + 2));
            let (ctx_hex, rest) = line.split_once('\t').ok_or_else(|| bad("missing tab"))?;
            let ctx = hex::decode(ctx_hex).map_err(|e| bad(&e.to_string()))?;
            if ctx.len() >= header.order {
                return Err(bad("context longer than order - 1"));
            }
            let mut next = Vec::new();
            for item in rest.split(' ').filter(|s| !s.is_empty()) {
                let (x, c) = item.split_once(':').ok_or_else(|| bad("expected outcome:count"))?;
                let x: u16 = x.parse().map_err(|_| bad("bad outcome"))?;
                let c: u64 = c.parse().map_err(|_| bad("bad count"))?;
                if x as usize >= OUTCOMES || c == 0 {
                    return Err(bad("outcome out of range or zero count"));
                }
                next.push((x, c));
            }
            if next.is_empty() || next.windows(2).any(|w| w[0].0 >= w[1].0) {
                return Err(bad("outcomes must be non-empty and strictly increasing"));
            }
            let total = next.iter().map(|e| e.1).sum();
            if contexts.insert(context_key(&ctx), ContextStats { total, next }).is_some() {
                return Err(bad("duplicate context"));
            }
        }
        Ok(NGramByteModel {
            order: header.order,
            discount: header.discount,
            contexts,
        })
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        fs::write(path, self.to_file_string()).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_file_str(&text)
    }
}

fn shannon_bits(p: &[f64]) -> f64 {
    -p.iter().filter(|&&v| v > 0.0).map(|&v| v * v.log2()).sum::<f64>()
}

#[derive(Serialize, Deserialize)]
struct ModelHeader {
    format: String,
    version: u32,
    order: usize,
    discount: f64,
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn context_keys_are_distinct() {
        let ctxs: [&[u8]; 6] = [b"", b"\0", b"\0\0", b"a", b"ab", b"ba"];
        let keys: std::collections::HashSet<u64> = ctxs.iter().map(|c| context_key(c)).collect();
        assert_eq!(keys.len(), ctxs.len());
        assert_eq!(context_key(b"ab"), (2u64 << 56) | 0x6162);
        assert_eq!(context_key(&[0xff; 7]), (7u64 << 56) | 0x00ff_ffff_ffff_ffff);
    }

    #[test]
    fn unigram_by_hand() {
        let m = train_ngram(&[b"ab"], 1, 0.75).unwrap();
        // counts a:1, b:1, EOD:1 over a total of 3
        let floor = 0.75 * 3.0 / 3.0 / 257.0;
        let seen = 0.25 / 3.0 + floor;
        assert!((m.prob(b"", b'a' as u16) - seen).abs() < 1e-15);
        assert!((m.prob(b"", END_OF_DOCUMENT) - seen).abs() < 1e-15);
        assert!((m.prob(b"", b'z' as u16) - floor).abs() < 1e-15);
        assert_eq!(m.prob(b"zzz", b'a' as u16), m.prob(b"", b'a' as u16));
    }

    #[test]
    fn distributions_are_normalised_and_positive() {
        let m = train_ngram(&[&b"the cat sat on the mat"[..], b"a hat"], 3, 0.6).unwrap();
        for h in [&b""[..], b"t", b"th", b"xth", b" m", b"q"] {
            let d = m.distribution(h);
            assert!((d.iter().sum::<f64>() - 1.0).abs() < 1e-9);
            assert!(d.iter().all(|&p| p > 0.0));
            for x in [0u16, b'e' as u16, END_OF_DOCUMENT] {
                assert!((d[x as usize] - m.prob(h, x)).abs() < 1e-15);
            }
        }
    }

    #[test]
    fn uniform_entropy() {
        let m = NGramByteModel::uniform(5).unwrap();
        let (s, h) = m.score_bytes::<f64>(b"hello");
        for v in h {
            assert!((v - 257f64.log2()).abs() < 1e-12);
        }
        for v in s {
            assert!((v - 257f64.log2()).abs() < 1e-12);
        }
    }

    #[test]
    fn parameter_errors() {
        assert!(train_ngram(&[b"x"], 0, 0.5).is_err());
        assert!(train_ngram(&[b"x"], 9, 0.5).is_err());
        assert!(train_ngram(&[b"x"], 2, 1.0).is_err());
        assert!(matches!(train_ngram::<&[u8]>(&[], 2, 0.5), Err(Error::EmptyCorpus)));
        assert!(matches!(train_ngram(&[b""], 2, 0.5), Err(Error::EmptyCorpus)));
    }

    #[test]
    fn save_load_round_trip() {
        let m = train_ngram(&[&b"abracadabra"[..], b"\xff\x00\x01"], 4, 0.75).unwrap();
        let text = m.to_file_string();
        let back = NGramByteModel::from_file_str(&text).unwrap();
        assert_eq!(back, m);
        assert_eq!(back.to_file_string(), text);
        assert!(NGramByteModel::from_file_str("{}").is_err());
    }
}
