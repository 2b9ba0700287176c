//! Byte-pair encoding: trainer and merge replay.
//!
//! Training repeatedly merges the most frequent adjacent pair of symbols
//! within pre-tokens. Ties go to the pair with the smaller `(left, right)` id
//! tuple; ids grow with creation order and base ids follow byte order, so this
//! prefers older symbols and then lexicographic order. A pair must occur at
//! least twice to be merged.

use std::cmp::Reverse;
use std::collections::{BinaryHeap, HashMap};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::vocab::{Symbol, Vocabulary};

pub const MIN_PAIR_COUNT: u64 = 2;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct MergeRule {
    pub rank: u32,
    pub left: u32,
    pub right: u32,
    pub result: u32,
}

/// Pre-token symbol sequences with their corpus frequency.
pub type WeightedWords = Vec<(Vec<u32>, u64)>;

#[derive(Debug, Clone)]
pub struct BpeOutcome {
    pub vocab: Vocabulary,
    pub merges: Vec<MergeRule>,
    /// The input words after all merges, in input order.
    pub words: Vec<Vec<u32>>,
}

type Pair = (u32, u32);

/// Trains merges on top of `vocab` until it holds `target` symbols or no pair
/// occurs [`MIN_PAIR_COUNT`] times. The returned vocabulary carries the merges.
pub fn train_bpe(mut vocab: Vocabulary, words: &[(Vec<u32>, u64)], target: usize) -> Result<BpeOutcome> {
    if target < vocab.len() {
        return Err(Error::config(format!(
            "target size {target} is smaller than the starting vocabulary ({})",
            vocab.len()
        )));
    }
    let weights: Vec<u64> = words.iter().map(|(_, c)| *c).collect();
    let mut seqs: Vec<Vec<u32>> = words.iter().map(|(w, _)| w.clone()).collect();

    let mut counts: HashMap<Pair, u64> = HashMap::new();
    let mut occurs: HashMap<Pair, Vec<usize>> = HashMap::new();
    for (i, w) in seqs.iter().enumerate() {
        for p in w.windows(2) {
            let pair = (p[0], p[1]);
            *counts.entry(pair).or_default() += weights[i];
            let list = occurs.entry(pair).or_default();
            if list.last() != Some(&i) {
                list.push(i);
            }
        }
    }
    let mut heap: BinaryHeap<(u64, Reverse<Pair>)> =
        counts.iter().map(|(&p, &c)| (c, Reverse(p))).collect();

    let mut merges = Vec::new();
    let mut delta: HashMap<Pair, i64> = HashMap::new();
    while vocab.len() < target {
        let Some((count, Reverse(pair))) = heap.pop() else { break };
        if counts.get(&pair).copied().unwrap_or(0) != count {
            continue;
        }
        if count < MIN_PAIR_COUNT {
            break;
        }
        let (left, right) = pair;
        let merged = {
            let l = vocab.get(left).expect("pair ids are in the vocabulary");
            let r = vocab.get(right).expect("pair ids are in the vocabulary");
            let mut bytes = l.bytes.clone();
            bytes.extend_from_slice(&r.bytes);
            Symbol::new(l.marker, bytes)
        };
        let (result, _) = vocab.insert(merged);
        merges.push(MergeRule {
            rank: merges.len() as u32,
            left,
            right,
            result,
        });

        let mut idxs = occurs.remove(&pair).unwrap_or_default();
        idxs.sort_unstable();
        idxs.dedup();
        delta.clear();
        for i in idxs {
            let w = &mut seqs[i];
            if !w.windows(2).any(|p| (p[0], p[1]) == pair) {
                continue;
            }
            let c = weights[i] as i64;
            for p in w.windows(2) {
                *delta.entry((p[0], p[1])).or_default() -= c;
            }
            merge_pair(w, pair, result);
            for p in w.windows(2) {
                let q = (p[0], p[1]);
                *delta.entry(q).or_default() += c;
                if q.0 == result || q.1 == result {
                    let list = occurs.entry(q).or_default();
                    if list.last() != Some(&i) {
                        list.push(i);
                    }
                }
            }
        }
        for (&p, &d) in &delta {
            if d == 0 {
                continue;
            }
            let old = counts.get(&p).copied().unwrap_or(0) as i64;
            let new = old + d;
            debug_assert!(new >= 0);
            if new == 0 {
                counts.remove(&p);
            } else {
                counts.insert(p, new as u64);
                heap.push((new as u64, Reverse(p)));
            }
        }
    }
    vocab.set_merges(merges.clone());
    Ok(BpeOutcome {
        vocab,
        merges,
        words: seqs,
    })
}

/// Replaces every non-overlapping occurrence of `pair`, left to right.
pub fn merge_pair(seq: &mut Vec<u32>, pair: (u32, u32), result: u32) {
    let mut out = 0;
    let mut i = 0;
    while i < seq.len() {
        if i + 1 < seq.len() && (seq[i], seq[i + 1]) == pair {
            seq[out] = result;
            i += 2;
        } else {
            seq[out] = seq[i];
            i += 1;
        }
        out += 1;
    }
    seq.truncate(out);
}

/// Lookup table for replaying merges at inference time.
#[derive(Debug, Clone, Default)]
pub struct MergeTable {
    by_pair: HashMap<Pair, Vec<(u32, u32)>>,
}

impl MergeTable {
    pub fn new(merges: &[MergeRule]) -> Self {
        let mut by_pair: HashMap<Pair, Vec<(u32, u32)>> = HashMap::new();
        for m in merges {
            by_pair.entry((m.left, m.right)).or_default().push((m.rank, m.result));
        }
        for v in by_pair.values_mut() {
            v.sort_unstable();
        }
        MergeTable { by_pair }
    }

    pub fn is_empty(&self) -> bool {
        self.by_pair.is_empty()
    }

    /// Applies merges in rank order, exactly as training would have.
    ///
    /// Only ranks above the last applied one are eligible: a merge whose turn
    /// has passed in training is never replayed, even if its pair reappears.
    pub fn apply(&self, seq: &mut Vec<u32>) {
        let mut floor: Option<u32> = None;
        loop {
            let mut best: Option<(u32, Pair, u32)> = None;
            for p in seq.windows(2) {
                let pair = (p[0], p[1]);
                let Some(cands) = self.by_pair.get(&pair) else { continue };
                let next = cands.iter().find(|(rank, _)| floor.is_none_or(|f| *rank > f));
                if let Some(&(rank, result)) = next {
                    if best.is_none_or(|(r, _, _)| rank < r) {
                        best = Some((rank, pair, result));
                    }
                }
            }
            let Some((rank, pair, result)) = best else { break };
            merge_pair(seq, pair, result);
            floor = Some(rank);
        }
    }
}

/// Convenience wrapper around [`MergeTable::apply`].
pub fn apply_merges(merges: &[MergeRule], seq: &[u32]) -> Vec<u32> {
    let mut out = seq.to_vec();
    MergeTable::new(merges).apply(&mut out);
    out
}
