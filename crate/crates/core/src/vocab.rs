//! Vocabulary symbols, the base byte alphabet and the vocabulary file format.
//!
//! Every byte value exists in three variants: plain, continuation (a token
//! inside a pre-token, WordPiece's `##`) and word-initial (a token that starts
//! a word, standing in for one leading space). That gives 768 base symbols.
//! The plain BPE baseline has no continuation variants and uses 512.

use std::collections::{BTreeMap, HashMap};
use std::fmt;
use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::bpe::MergeRule;
use crate::error::{Error, Result};

pub const FORMAT_NAME: &str = "bytespan-vocab";
pub const FORMAT_VERSION: u32 = 1;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Marker {
    Plain,
    Continuation,
    WordInitial,
}

impl fmt::Display for Marker {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Marker::Plain => "plain",
            Marker::Continuation => "continuation",
            Marker::WordInitial => "word_initial",
        })
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct Symbol {
    pub marker: Marker,
    pub bytes: Vec<u8>,
}

impl Symbol {
    pub fn new(marker: Marker, bytes: impl Into<Vec<u8>>) -> Self {
        Symbol {
            marker,
            bytes: bytes.into(),
        }
    }

    pub fn len(&self) -> usize {
        self.bytes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.bytes.is_empty()
    }
}

impl fmt::Display for Symbol {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let text = String::from_utf8_lossy(&self.bytes);
        match self.marker {
            Marker::Plain => write!(f, "{text}"),
            Marker::Continuation => write!(f, "##{text}"),
            Marker::WordInitial => write!(f, "\u{120}{text}"),
        }
    }
}

/// Records how a vocabulary was produced.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct VocabMetadata {
    pub method: String,
    pub requested_size: usize,
    #[serde(default)]
    pub constraint: Option<ConstraintRecord>,
    #[serde(default)]
    pub theta_f: Option<u64>,
    #[serde(default)]
    pub theta_g_schedule: Vec<f64>,
    #[serde(default)]
    pub theta_g_selected: Option<f64>,
    /// Eligible span count after each incremental pass that was run.
    #[serde(default)]
    pub eligible_per_pass: Vec<usize>,
    #[serde(default)]
    pub seed_fraction: Option<f64>,
    #[serde(default)]
    pub seed_size: Option<usize>,
    #[serde(default)]
    pub corpus_fingerprint: Option<String>,
    /// Non-fatal conditions, e.g. too few candidates to reach the size.
    #[serde(default)]
    pub warnings: Vec<String>,
    /// Free-form settings, e.g. the command line that produced the file.
    #[serde(default)]
    pub config: BTreeMap<String, String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ConstraintRecord {
    pub kind: crate::segment::ConstraintKind,
    pub signal: crate::segment::SignalKind,
    /// Textual so that infinite thresholds survive JSON.
    pub theta_g: Option<String>,
    pub theta_m: f64,
}

impl<F: crate::Scalar> From<&crate::segment::ConstraintConfig<F>> for ConstraintRecord {
    fn from(cfg: &crate::segment::ConstraintConfig<F>) -> Self {
        ConstraintRecord {
            kind: cfg.kind,
            signal: cfg.signal,
            theta_g: cfg.theta_g.map(|g| format!("{}", g.as_f64())),
            theta_m: cfg.theta_m.as_f64(),
        }
    }
}

/// An id ↔ symbol bijection, optionally with BPE merge rules.
#[derive(Debug, Clone, PartialEq)]
pub struct Vocabulary {
    symbols: Vec<Symbol>,
    index: HashMap<Symbol, u32>,
    inner: Marker,
    base_size: usize,
    merges: Vec<MergeRule>,
    pub metadata: VocabMetadata,
}

impl Vocabulary {
    /// The 768-symbol base: plain, continuation and word-initial copies of
    /// every byte.
    pub fn base() -> Self {
        Self::base_with_inner(Marker::Continuation)
    }

    /// The 512-symbol base of the plain BPE baseline: tokens inside a word use
    /// plain symbols.
    pub fn base_plain() -> Self {
        Self::base_with_inner(Marker::Plain)
    }

    /// Base vocabulary whose non-initial tokens carry `inner`.
    pub fn base_with_inner(inner: Marker) -> Self {
        assert!(inner != Marker::WordInitial, "word-initial cannot be the inner marker");
        let mut markers = vec![Marker::Plain];
        if inner == Marker::Continuation {
            markers.push(Marker::Continuation);
        }
        markers.push(Marker::WordInitial);
        let mut v = Vocabulary {
            symbols: Vec::new(),
            index: HashMap::new(),
            inner,
            base_size: 0,
            merges: Vec::new(),
            metadata: VocabMetadata::default(),
        };
        for m in markers {
            for b in 0..=255u8 {
                v.insert(Symbol::new(m, [b]));
            }
        }
        v.base_size = v.symbols.len();
        v
    }

    pub fn len(&self) -> usize {
        self.symbols.len()
    }

    pub fn is_empty(&self) -> bool {
        self.symbols.is_empty()
    }

    pub fn base_size(&self) -> usize {
        self.base_size
    }

    /// Marker used for tokens after the first one in a pre-token.
    pub fn inner_marker(&self) -> Marker {
        self.inner
    }

    pub fn symbols(&self) -> &[Symbol] {
        &self.symbols
    }

    pub fn get(&self, id: u32) -> Option<&Symbol> {
        self.symbols.get(id as usize)
    }

    pub fn id_of(&self, symbol: &Symbol) -> Option<u32> {
        self.index.get(symbol).copied()
    }

    pub fn contains(&self, symbol: &Symbol) -> bool {
        self.index.contains_key(symbol)
    }

    pub fn contains_parts(&self, marker: Marker, bytes: &[u8]) -> bool {
        self.contains(&Symbol::new(marker, bytes))
    }

    /// Id of the single-byte base symbol.
    pub fn byte_id(&self, marker: Marker, byte: u8) -> u32 {
        let block = match (marker, self.inner) {
            (Marker::Plain, _) => 0,
            (Marker::Continuation, Marker::Continuation) => 1,
            (Marker::Continuation, _) => panic!("vocabulary has no continuation symbols"),
            (Marker::WordInitial, Marker::Continuation) => 2,
            (Marker::WordInitial, _) => 1,
        };
        block * 256 + byte as u32
    }

    /// Adds a symbol, returning its id and whether it was new.
    pub fn insert(&mut self, symbol: Symbol) -> (u32, bool) {
        assert!(!symbol.bytes.is_empty(), "symbols must be non-empty");
        if let Some(&id) = self.index.get(&symbol) {
            return (id, false);
        }
        let id = self.symbols.len() as u32;
        self.index.insert(symbol.clone(), id);
        self.symbols.push(symbol);
        (id, true)
    }

    pub fn merges(&self) -> &[MergeRule] {
        &self.merges
    }

    pub fn set_merges(&mut self, merges: Vec<MergeRule>) {
        self.merges = merges;
    }

    /// Appends the surface bytes of `id`. A word-initial token renders its
    /// leading space unless it is the first token of the sequence.
    pub fn render_into(&self, id: u32, first: bool, out: &mut Vec<u8>) -> Result<()> {
        let sym = self.get(id).ok_or(Error::UnknownId(id))?;
        if sym.marker == Marker::WordInitial && !first {
            out.push(b' ');
        }
        out.extend_from_slice(&sym.bytes);
        Ok(())
    }

    /// Rendered length of `id`, see [`Vocabulary::render_into`].
    pub fn rendered_len(&self, id: u32, first: bool) -> usize {
        let sym = &self.symbols[id as usize];
        sym.bytes.len() + usize::from(sym.marker == Marker::WordInitial && !first)
    }

    /// Same symbols in the same order (metadata and merges ignored).
    pub fn same_symbols(&self, other: &Vocabulary) -> bool {
        self.inner == other.inner && self.symbols == other.symbols
    }

    /// Hash of the serialised vocabulary.
    pub fn fingerprint(&self) -> String {
        crate::corpus::fingerprint([self.to_file_string()])
    }

    pub fn to_file_string(&self) -> String {
        let file = VocabFile {
            format: FORMAT_NAME.to_owned(),
            version: FORMAT_VERSION,
            inner_marker: self.inner,
            metadata: self.metadata.clone(),
            symbols: self
                .symbols
                .iter()
                .enumerate()
                .map(|(id, s)| SymbolEntry {
                    id: id as u32,
                    marker: s.marker,
                    bytes_hex: hex::encode(&s.bytes),
                })
                .collect(),
            merges: self.merges.clone(),
        };
        let mut text = serde_json::to_string_pretty(&file).expect("vocabulary serialises");
        text.push('\n');
        text
    }

    pub fn from_file_str(text: &str) -> Result<Self> {
        let file: VocabFile =
            serde_json::from_str(text).map_err(|e| Error::VocabFormat(e.to_string()))?;
        if file.format != FORMAT_NAME {
            return Err(Error::VocabFormat(format!("unexpected format {:?}", file.format)));
        }
        if file.version != FORMAT_VERSION {
            return Err(Error::VocabFormat(format!(
                "unsupported version {} (expected {FORMAT_VERSION})",
                file.version
            )));
        }
        if file.inner_marker == Marker::WordInitial {
            return Err(Error::VocabFormat("inner marker cannot be word_initial".into()));
        }
        let mut vocab = Vocabulary::base_with_inner(file.inner_marker);
        let base = vocab.symbols.clone();
        vocab.symbols.clear();
        vocab.index.clear();
        for (pos, entry) in file.symbols.iter().enumerate() {
            if entry.id as usize != pos {
                return Err(Error::VocabFormat(format!(
                    "symbol ids must be dense and ordered; found {} at position {pos}",
                    entry.id
                )));
            }
            let bytes = hex::decode(&entry.bytes_hex)
                .map_err(|e| Error::VocabFormat(format!("symbol {}: {e}", entry.id)))?;
            if bytes.is_empty() {
                return Err(Error::VocabFormat(format!("symbol {} is empty", entry.id)));
            }
            if entry.marker == Marker::Continuation && file.inner_marker != Marker::Continuation {
                return Err(Error::VocabFormat(format!(
                    "symbol {} is a continuation symbol in a vocabulary without them",
                    entry.id
                )));
            }
            let (_, fresh) = vocab.insert(Symbol::new(entry.marker, bytes));
            if !fresh {
                return Err(Error::VocabFormat(format!(
                    "duplicate symbol {} ({}, {})",
                    entry.id, entry.marker, entry.bytes_hex
                )));
            }
        }
        if vocab.symbols.len() < base.len() || vocab.symbols[..base.len()] != base[..] {
            return Err(Error::VocabFormat("base byte symbols missing or out of order".into()));
        }
        for (rank, m) in file.merges.iter().enumerate() {
            let err = |msg: &str| Error::VocabFormat(format!("merge {rank}: {msg}"));
            if m.rank as usize != rank {
                return Err(err("ranks must be dense and ordered"));
            }
            let (Some(l), Some(r), Some(res)) = (vocab.get(m.left), vocab.get(m.right), vocab.get(m.result)) else {
                return Err(err("id out of range"));
            };
            if res.marker != l.marker || res.bytes.len() != l.bytes.len() + r.bytes.len() || !res.bytes.starts_with(&l.bytes) || !res.bytes.ends_with(&r.bytes) {
                return Err(err("result is not the concatenation of its parts"));
            }
        }
        vocab.merges = file.merges;
        vocab.metadata = file.metadata;
        Ok(vocab)
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

#[derive(Serialize, Deserialize)]
struct VocabFile {
    format: String,
    version: u32,
    inner_marker: Marker,
    metadata: VocabMetadata,
    symbols: Vec<SymbolEntry>,
    #[serde(default)]
    merges: Vec<MergeRule>,
}

#[derive(Serialize, Deserialize)]
struct SymbolEntry {
    id: u32,
    marker: Marker,
    bytes_hex: String,
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn base_sizes() {
        let v = Vocabulary::base();
        assert_eq!(v.len(), 768);
        assert_eq!(v.base_size(), 768);
        assert_eq!(Vocabulary::base_plain().len(), 512);
        for m in [Marker::Plain, Marker::Continuation, Marker::WordInitial] {
            for b in [0u8, 97, 255] {
                let id = v.byte_id(m, b);
                assert_eq!(v.get(id).unwrap(), &Symbol::new(m, [b]));
            }
        }
        let p = Vocabulary::base_plain();
        assert_eq!(p.get(p.byte_id(Marker::WordInitial, 7)).unwrap(), &Symbol::new(Marker::WordInitial, [7]));
    }

    #[test]
    fn insert_is_idempotent() {
        let mut v = Vocabulary::base();
        let (a, fresh) = v.insert(Symbol::new(Marker::Continuation, "ing"));
        assert!(fresh);
        assert_eq!(v.insert(Symbol::new(Marker::Continuation, "ing")), (a, false));
        let (b, fresh) = v.insert(Symbol::new(Marker::WordInitial, "ing"));
        assert!(fresh);
        assert_ne!(a, b);
    }

    #[test]
    fn file_round_trip_preserves_everything() {
        let mut v = Vocabulary::base();
        let l = v.byte_id(Marker::WordInitial, b'a');
        let r = v.byte_id(Marker::Continuation, b'b');
        let (res, _) = v.insert(Symbol::new(Marker::WordInitial, "ab"));
        v.set_merges(vec![MergeRule { rank: 0, left: l, right: r, result: res }]);
        v.metadata.method = "test".into();
        v.metadata.warnings.push("short".into());
        v.metadata.theta_g_selected = Some(1.25);
        let text = v.to_file_string();
        let back = Vocabulary::from_file_str(&text).unwrap();
        assert_eq!(back, v);
        assert_eq!(back.to_file_string(), text);
    }

    #[test]
    fn duplicate_symbol_rejected() {
        let mut v = Vocabulary::base();
        v.insert(Symbol::new(Marker::Plain, "xy"));
        let mut json: serde_json::Value = serde_json::from_str(&v.to_file_string()).unwrap();
        json["symbols"]
            .as_array_mut()
            .unwrap()
            .push(serde_json::json!({"id": 769, "marker": "plain", "bytes_hex": "7879"}));
        let err = Vocabulary::from_file_str(&json.to_string()).unwrap_err();
        assert!(err.to_string().contains("duplicate"), "{err}");
    }

    #[test]
    fn version_mismatch_rejected() {
        let text = Vocabulary::base().to_file_string().replace("\"version\": 1", "\"version\": 99");
        assert!(Vocabulary::from_file_str(&text).unwrap_err().to_string().contains("version"));
        assert!(Vocabulary::from_file_str("{not json").is_err());
    }

    #[test]
    fn rendering() {
        let mut v = Vocabulary::base();
        let (w, _) = v.insert(Symbol::new(Marker::WordInitial, "the"));
        let mut out = Vec::new();
        v.render_into(w, true, &mut out).unwrap();
        v.render_into(w, false, &mut out).unwrap();
        assert_eq!(out, b"the the");
        assert_eq!(v.rendered_len(w, false), 4);
        assert!(matches!(v.render_into(9999, false, &mut out), Err(Error::UnknownId(9999))));
        assert_eq!(Symbol::new(Marker::Continuation, "ing").to_string(), "##ing");
    }
}
