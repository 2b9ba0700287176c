//! Reference implementations and generators shared by the integration tests.
//!
//! The references are deliberately naive: they recompute everything from
//! scratch and share only the data types and the pre-tokeniser with the
//! library.

#![allow(dead_code)]

use std::collections::HashMap;
use std::ops::Range;

use rand::Rng;

use bytespan::corpus::{pretoken_lead, pretokenize, PreTokenBoundary, PreTokenLead};
use bytespan::{ConstraintConfig, ConstraintKind, Marker, SignalTrack, Span, Symbol, Vocabulary};

/// Span starts decided position by position from the constraint definitions.
pub fn segment_oracle(track: &SignalTrack, cfg: &ConstraintConfig) -> Vec<Span> {
    let s = track.signal(cfg.signal);
    let n = s.len();
    let mut starts = Vec::new();
    for t in 0..n {
        let new_span = if track.boundaries.is_boundary(t) {
            true
        } else {
            let below = cfg.theta_g.map(|g| s[t] < g).unwrap_or(false);
            let falling = s[t] - s[t - 1] < cfg.theta_m;
            let keep = match cfg.kind {
                ConstraintKind::Global => below,
                ConstraintKind::Monotonic => falling,
                ConstraintKind::Combined => below || falling,
            };
            !keep
        };
        if new_span {
            starts.push(t);
        }
    }
    starts
        .iter()
        .enumerate()
        .map(|(i, &st)| {
            let end = starts.get(i + 1).copied().unwrap_or(n);
            Span { start: st, len: end - st }
        })
        .collect()
}

/// BPE that recounts every pair from scratch at each step.
pub struct BpeOracle {
    pub symbols: Vec<(Marker, Vec<u8>)>,
    pub merges: Vec<(u32, u32, u32)>,
    pub words: Vec<Vec<u32>>,
}

pub fn bpe_oracle(base: &Vocabulary, words: &[(Vec<u32>, u64)], target: usize) -> BpeOracle {
    let mut symbols: Vec<(Marker, Vec<u8>)> = base.symbols().iter().map(|s| (s.marker, s.bytes.clone())).collect();
    let mut seqs: Vec<Vec<u32>> = words.iter().map(|w| w.0.clone()).collect();
    let mut merges = Vec::new();
    while symbols.len() < target {
        let mut counts: HashMap<(u32, u32), u64> = HashMap::new();
        for (seq, (_, w)) in seqs.iter().zip(words) {
            for i in 1..seq.len() {
                *counts.entry((seq[i - 1], seq[i])).or_insert(0) += w;
            }
        }
        let mut best: Option<((u32, u32), u64)> = None;
        for (&pair, &c) in &counts {
            let better = match best {
                None => true,
                Some((bp, bc)) => c > bc || (c == bc && pair < bp),
            };
            if better {
                best = Some((pair, c));
            }
        }
        let Some(((l, r), c)) = best else { break };
        if c < 2 {
            break;
        }
        let marker = symbols[l as usize].0;
        let mut bytes = symbols[l as usize].1.clone();
        bytes.extend_from_slice(&symbols[r as usize].1);
        let result = match symbols.iter().position(|s| s.0 == marker && s.1 == bytes) {
            Some(i) => i as u32,
            None => {
                symbols.push((marker, bytes));
                (symbols.len() - 1) as u32
            }
        };
        merges.push((l, r, result));
        for seq in &mut seqs {
            let mut out = Vec::with_capacity(seq.len());
            let mut i = 0;
            while i < seq.len() {
                if i + 1 < seq.len() && seq[i] == l && seq[i + 1] == r {
                    out.push(result);
                    i += 2;
                } else {
                    out.push(seq[i]);
                    i += 1;
                }
            }
            *seq = out;
        }
    }
    BpeOracle {
        symbols,
        merges,
        words: seqs,
    }
}

/// Marker of the first token and the body of a pre-token.
pub fn body(doc: &[u8], range: &Range<usize>) -> (Marker, Range<usize>) {
    match pretoken_lead(doc, range) {
        PreTokenLead::WordStart { body } => (Marker::WordInitial, body..range.end),
        PreTokenLead::Attached => (Marker::Plain, range.clone()),
    }
}

/// Longest-prefix tokenisation by scanning the whole vocabulary at every
/// position.
pub fn longest_prefix_oracle(vocab: &Vocabulary, doc: &[u8]) -> Vec<u32> {
    let mut out = Vec::new();
    let b = pretokenize(doc);
    for range in b.ranges() {
        let (mut marker, body) = body(doc, &range);
        let mut pos = body.start;
        while pos < body.end {
            let rest = &doc[pos..body.end];
            let mut best: Option<(usize, u32)> = None;
            for (id, s) in vocab.symbols().iter().enumerate() {
                let fits = s.marker == marker && !s.bytes.is_empty() && rest.starts_with(&s.bytes);
                if fits && best.map(|(l, _)| s.bytes.len() > l).unwrap_or(true) {
                    best = Some((s.bytes.len(), id as u32));
                }
            }
            let (len, id) = best.expect("byte symbols exist");
            out.push(id);
            pos += len;
            marker = vocab.inner_marker();
        }
    }
    out
}

/// Bytes drawn mostly from a small alphabet so that pre-tokens and repeated
/// substrings are common, with occasional arbitrary bytes.
pub fn random_text<R: Rng>(rng: &mut R, len: usize) -> Vec<u8> {
    const ALPHABET: &[u8] = b"aabbcdeeeinorst  ,.1\n";
    (0..len)
        .map(|_| {
            if rng.gen_bool(0.05) {
                rng.gen()
            } else {
                ALPHABET[rng.gen_range(0..ALPHABET.len())]
            }
        })
        .collect()
}

/// A track over random bytes with random (not pre-tokeniser) boundaries.
/// Values come from a coarse grid so that ties are frequent.
pub fn random_track<R: Rng>(rng: &mut R, id: usize) -> SignalTrack {
    let n = rng.gen_range(1..=512);
    let bytes: Vec<u8> = (0..n).map(|_| rng.gen()).collect();
    let mut grid = |_| rng.gen_range(0..16) as f64 * 0.5;
    let surprisal: Vec<f64> = (0..n).map(&mut grid).collect();
    let entropy: Vec<f64> = (0..n).map(&mut grid).collect();
    let mut t = SignalTrack::new(format!("d{id}"), None, bytes, surprisal, entropy).unwrap();
    let mut positions = vec![0];
    for p in 1..n {
        if rng.gen_bool(0.1) {
            positions.push(p);
        }
    }
    t.boundaries = PreTokenBoundary::from_positions(positions, n);
    t
}

/// Base vocabulary plus random multi-byte symbols over the test alphabet.
pub fn random_vocab<R: Rng>(rng: &mut R, extra: usize) -> Vocabulary {
    let mut v = Vocabulary::base();
    for _ in 0..extra {
        let len = rng.gen_range(2..=6);
        let bytes = random_text(rng, len);
        let marker = match rng.gen_range(0..3) {
            0 => Marker::Plain,
            1 => Marker::Continuation,
            _ => Marker::WordInitial,
        };
        v.insert(Symbol::new(marker, bytes));
    }
    v
}

pub fn data_path(name: &str) -> std::path::PathBuf {
    std::path::Path::new(env!("CARGO_MANIFEST_DIR")).join("tests/data").join(name)
}

/// The bundled English corpus cut into documents of `lines` verses each.
pub fn kjv_documents(lines: usize) -> Vec<bytespan::Document> {
    let text = std::fs::read_to_string(data_path("kjv.txt")).expect("corpus present");
    let all: Vec<&str> = text.lines().collect();
    all.chunks(lines)
        .enumerate()
        .map(|(i, c)| {
            let mut body = c.join("\n");
            body.push('\n');
            bytespan::Document::new(format!("kjv-{i:04}"), body, Some("en".into())).unwrap()
        })
        .collect()
}
