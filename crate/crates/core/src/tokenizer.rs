//! Inference: longest-prefix matching (WordPiece style) and BPE merge replay.
//!
//! Each pre-token is tokenised on its own. Its first token is drawn from the
//! word-initial symbols when the pre-token starts a word, from the plain
//! symbols otherwise; every later token is drawn from the inner symbols
//! (continuation, or plain for a 512-symbol BPE vocabulary).

use std::collections::HashMap;
use std::ops::Range;

use rayon::prelude::*;

use crate::bpe::MergeTable;
use crate::corpus::{pretoken_lead, pretokenize, PreTokenLead};
use crate::error::{Error, Result};
use crate::vocab::{Marker, Vocabulary};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Mode {
    LongestPrefix,
    BpeMerges,
}

impl std::str::FromStr for Mode {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "longest-prefix" | "longest_prefix" => Ok(Mode::LongestPrefix),
            "bpe" | "bpe-merges" | "bpe_merges" => Ok(Mode::BpeMerges),
            other => Err(Error::config(format!("unknown mode {other:?}"))),
        }
    }
}

#[derive(Debug, Clone, Default)]
struct TrieNode {
    children: Vec<(u8, u32)>,
    id: Option<u32>,
}

/// Byte trie over the symbols of one marker.
#[derive(Debug, Clone)]
struct Trie {
    nodes: Vec<TrieNode>,
}

impl Trie {
    fn new() -> Self {
        Trie {
            nodes: vec![TrieNode::default()],
        }
    }

    fn insert(&mut self, bytes: &[u8], id: u32) {
        let mut node = 0usize;
        for &b in bytes {
            node = match self.nodes[node].children.binary_search_by_key(&b, |c| c.0) {
                Ok(i) => self.nodes[node].children[i].1 as usize,
                Err(i) => {
                    let next = self.nodes.len() as u32;
                    self.nodes.push(TrieNode::default());
                    self.nodes[node].children.insert(i, (b, next));
                    next as usize
                }
            };
        }
        self.nodes[node].id = Some(id);
    }

    /// Longest symbol that prefixes `input`: `(byte length, id)`.
    fn longest_prefix(&self, input: &[u8]) -> Option<(usize, u32)> {
        let mut node = 0usize;
        let mut best = None;
        for (i, &b) in input.iter().enumerate() {
            let children = &self.nodes[node].children;
            match children.binary_search_by_key(&b, |c| c.0) {
                Ok(j) => node = children[j].1 as usize,
                Err(_) => break,
            }
            if let Some(id) = self.nodes[node].id {
                best = Some((i + 1, id));
            }
        }
        best
    }
}

fn first_marker(lead: PreTokenLead) -> Marker {
    match lead {
        PreTokenLead::WordStart { .. } => Marker::WordInitial,
        PreTokenLead::Attached => Marker::Plain,
    }
}

/// Marker of the first token and the bytes to tokenise for pre-token `range`.
pub fn pretoken_body<'a>(doc: &'a [u8], range: &Range<usize>) -> (Marker, &'a [u8]) {
    let lead = pretoken_lead(doc, range);
    (first_marker(lead), &doc[lead.body_start(range)..range.end])
}

/// An immutable, thread-safe tokeniser over one vocabulary.
#[derive(Debug, Clone)]
pub struct Tokenizer {
    vocab: Vocabulary,
    tries: HashMap<Marker, Trie>,
    merges: MergeTable,
}

impl Tokenizer {
    pub fn new(vocab: Vocabulary) -> Self {
        let mut tries: HashMap<Marker, Trie> = HashMap::new();
        for (id, sym) in vocab.symbols().iter().enumerate() {
            tries
                .entry(sym.marker)
                .or_insert_with(Trie::new)
                .insert(&sym.bytes, id as u32);
        }
        let merges = MergeTable::new(vocab.merges());
        Tokenizer {
            vocab,
            tries,
            merges,
        }
    }

    pub fn vocab(&self) -> &Vocabulary {
        &self.vocab
    }

    /// Tokenises one pre-token body whose first token uses `first`.
    pub fn tokenize_body(&self, first: Marker, body: &[u8], mode: Mode, out: &mut Vec<u32>) {
        if body.is_empty() {
            return;
        }
        let inner = self.vocab.inner_marker();
        match mode {
            Mode::LongestPrefix => {
                let mut pos = 0;
                let mut marker = first;
                while pos < body.len() {
                    let (len, id) = self.tries[&marker]
                        .longest_prefix(&body[pos..])
                        .expect("base byte symbols are always present");
                    out.push(id);
                    pos += len;
                    marker = inner;
                }
            }
            Mode::BpeMerges => {
                let start = out.len();
                out.push(self.vocab.byte_id(first, body[0]));
                out.extend(body[1..].iter().map(|&b| self.vocab.byte_id(inner, b)));
                let mut seq = out.split_off(start);
                self.merges.apply(&mut seq);
                out.extend(seq);
            }
        }
    }

    /// Calls `f` with every pre-token range and its tokens.
    pub fn for_each_pretoken(&self, bytes: &[u8], mode: Mode, mut f: impl FnMut(Range<usize>, &[u32])) {
        let boundaries = pretokenize(bytes);
        let mut buf = Vec::new();
        for range in boundaries.ranges() {
            buf.clear();
            let (first, body) = pretoken_body(bytes, &range);
            self.tokenize_body(first, body, mode, &mut buf);
            f(range, &buf);
        }
    }

    pub fn tokenize(&self, bytes: &[u8], mode: Mode) -> Vec<u32> {
        let mut out = Vec::with_capacity(bytes.len() / 3 + 1);
        let boundaries = pretokenize(bytes);
        for range in boundaries.ranges() {
            let (first, body) = pretoken_body(bytes, &range);
            self.tokenize_body(first, body, mode, &mut out);
        }
        out
    }

    pub fn detokenize(&self, ids: &[u32]) -> Result<Vec<u8>> {
        let mut out = Vec::with_capacity(ids.len() * 4);
        for (i, &id) in ids.iter().enumerate() {
            self.vocab.render_into(id, i == 0, &mut out)?;
        }
        Ok(out)
    }
}

/// Distinct pre-token bodies of a corpus with their counts, sorted by
/// `(marker, bytes)`. Independent of document order and thread count.
pub fn count_pretokens<D: AsRef<[u8]> + Sync>(docs: &[D]) -> Vec<(Marker, Vec<u8>, u64)> {
    let merged = docs
        .par_iter()
        .fold(HashMap::<(Marker, Vec<u8>), u64>::new, |mut acc, doc| {
            let doc = doc.as_ref();
            for range in pretokenize(doc).ranges() {
                let (m, body) = pretoken_body(doc, &range);
                if !body.is_empty() {
                    *acc.entry((m, body.to_vec())).or_default() += 1;
                }
            }
            acc
        })
        .reduce(HashMap::new, |mut a, b| {
            for (k, v) in b {
                *a.entry(k).or_default() += v;
            }
            a
        });
    let mut out: Vec<_> = merged.into_iter().map(|((m, b), c)| (m, b, c)).collect();
    out.sort_unstable();
    out
}

/// Tokenises each distinct pre-token once with `tokenizer`, giving the
/// starting sequences for BPE.
pub fn initial_words(tokenizer: &Tokenizer, pretokens: &[(Marker, Vec<u8>, u64)]) -> Vec<(Vec<u32>, u64)> {
    pretokens
        .par_iter()
        .map(|(m, body, c)| {
            let mut ids = Vec::new();
            tokenizer.tokenize_body(*m, body, Mode::LongestPrefix, &mut ids);
            (ids, *c)
        })
        .collect()
}
