//! Corpus ingestion, pre-tokenisation and the signal-file format.
//!
//! A signal file is line-delimited JSON, one record per document:
//!
//! ```text
//! {"doc_id":"gen","language":"en","bytes_hex":"496e...","surprisal":[..],"entropy":[..]}
//! ```
//!
//! The two arrays are aligned with the decoded bytes. Pre-token boundaries are
//! not stored; they are recomputed with [`pretokenize`] on load.

use std::collections::HashSet;
use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::ops::Range;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};
use crate::scalar::Scalar;
use crate::segment::SignalKind;

/// One document of a corpus.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Document {
    pub doc_id: String,
    pub bytes: Vec<u8>,
    pub language: Option<String>,
}

impl Document {
    pub fn new(doc_id: impl Into<String>, bytes: impl Into<Vec<u8>>, language: Option<String>) -> Result<Self> {
        let doc_id = doc_id.into();
        let bytes = bytes.into();
        if bytes.is_empty() {
            return Err(Error::EmptyDocument(doc_id));
        }
        Ok(Document {
            doc_id,
            bytes,
            language,
        })
    }
}

/// Sorted pre-token start offsets, always containing `0` and `len`.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct PreTokenBoundary {
    positions: Vec<usize>,
}

impl PreTokenBoundary {
    /// Builds a boundary set from arbitrary offsets, adding the endpoints and
    /// dropping duplicates and out-of-range values.
    pub fn from_positions(mut positions: Vec<usize>, len: usize) -> Self {
        positions.retain(|&p| p <= len);
        positions.push(0);
        positions.push(len);
        positions.sort_unstable();
        positions.dedup();
        PreTokenBoundary { positions }
    }

    pub fn positions(&self) -> &[usize] {
        &self.positions
    }

    /// Byte length of the document the boundaries belong to.
    pub fn len(&self) -> usize {
        *self.positions.last().unwrap_or(&0)
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// Pre-token byte ranges, in order.
    pub fn ranges(&self) -> impl Iterator<Item = Range<usize>> + '_ {
        self.positions.windows(2).map(|w| w[0]..w[1])
    }

    pub fn is_boundary(&self, pos: usize) -> bool {
        self.positions.binary_search(&pos).is_ok()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum CharClass {
    Letter,
    Digit,
    Whitespace,
    Other,
}

fn classify(c: char) -> CharClass {
    if c.is_whitespace() {
        CharClass::Whitespace
    } else if c.is_alphabetic() {
        CharClass::Letter
    } else if c.is_numeric() {
        CharClass::Digit
    } else {
        CharClass::Other
    }
}

/// Splits `bytes` into pre-tokens.
///
/// A new pre-token starts at every change between letter, digit and other
/// characters, and before every whitespace run. A whitespace run is glued to
/// the front of the pre-token that follows it. Valid UTF-8 code points are
/// never split; bytes that are not valid UTF-8 are classed as "other" one at
/// a time.
pub fn pretokenize(bytes: &[u8]) -> PreTokenBoundary {
    let mut positions = vec![0];
    let mut prev: Option<CharClass> = None;
    let mut offset = 0;
    let mut visit = |class: CharClass, offset: usize| {
        if let Some(p) = prev {
            let split = match (p, class) {
                (CharClass::Whitespace, _) => false,
                (_, CharClass::Whitespace) => true,
                (a, b) => a != b,
            };
            if split {
                positions.push(offset);
            }
        }
        prev = Some(class);
    };
    for chunk in bytes.utf8_chunks() {
        for (i, c) in chunk.valid().char_indices() {
            visit(classify(c), offset + i);
        }
        offset += chunk.valid().len();
        for i in 0..chunk.invalid().len() {
            visit(CharClass::Other, offset + i);
        }
        offset += chunk.invalid().len();
    }
    positions.push(bytes.len());
    positions.dedup();
    PreTokenBoundary { positions }
}

/// How a pre-token begins, which decides the marker of its first subword.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum PreTokenLead {
    /// Starts a word: either the first pre-token of a document (not starting
    /// with whitespace) or a pre-token led by a single consumed space. `body`
    /// is the offset after any consumed space.
    WordStart { body: usize },
    /// Follows the previous pre-token directly (class change) or starts with
    /// whitespace that is kept as content.
    Attached,
}

impl PreTokenLead {
    pub fn body_start(self, range: &Range<usize>) -> usize {
        match self {
            PreTokenLead::WordStart { body } => body,
            PreTokenLead::Attached => range.start,
        }
    }
}

/// Classifies the pre-token `range` of `doc`.
pub fn pretoken_lead(doc: &[u8], range: &Range<usize>) -> PreTokenLead {
    if range.is_empty() {
        return PreTokenLead::Attached;
    }
    let first = doc[range.start];
    if range.start == 0 {
        if first.is_ascii_whitespace() || !starts_non_whitespace(&doc[range.clone()]) {
            PreTokenLead::Attached
        } else {
            PreTokenLead::WordStart { body: 0 }
        }
    } else if first == b' ' && range.len() >= 2 {
        PreTokenLead::WordStart {
            body: range.start + 1,
        }
    } else {
        PreTokenLead::Attached
    }
}

fn starts_non_whitespace(bytes: &[u8]) -> bool {
    match bytes.utf8_chunks().next() {
        Some(chunk) => match chunk.valid().chars().next() {
            Some(c) => !c.is_whitespace(),
            None => true,
        },
        None => true,
    }
}

/// SHA-256 over length-prefixed items, as lowercase hex.
pub fn fingerprint<D: AsRef<[u8]>>(items: impl IntoIterator<Item = D>) -> String {
    let mut h = Sha256::new();
    for item in items {
        let item = item.as_ref();
        h.update((item.len() as u64).to_le_bytes());
        h.update(item);
    }
    hex::encode(h.finalize())
}

/// True when every byte of the pre-token is whitespace.
pub fn is_whitespace_only(bytes: &[u8]) -> bool {
    match std::str::from_utf8(bytes) {
        Ok(s) => s.chars().all(char::is_whitespace),
        Err(_) => false,
    }
}

/// A document with per-byte information values.
#[derive(Debug, Clone, PartialEq)]
pub struct SignalTrack<F: Scalar> {
    pub doc_id: String,
    pub language: Option<String>,
    pub bytes: Vec<u8>,
    pub surprisal: Vec<F>,
    pub entropy: Vec<F>,
    pub boundaries: PreTokenBoundary,
}

impl<F: Scalar> SignalTrack<F> {
    /// Validates lengths and values and computes the pre-token boundaries.
    pub fn new(
        doc_id: impl Into<String>,
        language: Option<String>,
        bytes: Vec<u8>,
        surprisal: Vec<F>,
        entropy: Vec<F>,
    ) -> Result<Self> {
        let doc_id = doc_id.into();
        if bytes.is_empty() {
            return Err(Error::EmptyDocument(doc_id));
        }
        for (field, values) in [("surprisal", &surprisal), ("entropy", &entropy)] {
            if values.len() != bytes.len() {
                return Err(Error::LengthMismatch {
                    doc_id,
                    field,
                    expected: bytes.len(),
                    found: values.len(),
                });
            }
            if let Some((offset, v)) = values
                .iter()
                .enumerate()
                .find(|(_, v)| !v.is_finite() || **v < F::zero())
            {
                return Err(Error::BadSignalValue {
                    doc_id,
                    field,
                    offset,
                    value: v.as_f64(),
                });
            }
        }
        let boundaries = pretokenize(&bytes);
        Ok(SignalTrack {
            doc_id,
            language,
            bytes,
            surprisal,
            entropy,
            boundaries,
        })
    }

    pub fn len(&self) -> usize {
        self.bytes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.bytes.is_empty()
    }

    pub fn signal(&self, kind: SignalKind) -> &[F] {
        match kind {
            SignalKind::Surprisal => &self.surprisal,
            SignalKind::Entropy => &self.entropy,
        }
    }

    pub fn document(&self) -> Document {
        Document {
            doc_id: self.doc_id.clone(),
            bytes: self.bytes.clone(),
            language: self.language.clone(),
        }
    }
}

#[derive(Serialize)]
struct SignalRecordOut<'a> {
    doc_id: &'a str,
    language: Option<&'a str>,
    bytes_hex: String,
    surprisal: Vec<f64>,
    entropy: Vec<f64>,
}

#[derive(Deserialize)]
struct SignalRecordIn {
    doc_id: String,
    #[serde(default)]
    language: Option<String>,
    bytes_hex: String,
    surprisal: Vec<LenientReal>,
    entropy: Vec<LenientReal>,
}

/// A number that may also arrive as `null` or as a string spelling of a
/// non-finite value, so that bad values are reported with their position
/// instead of failing the whole line.
#[derive(Deserialize)]
#[serde(untagged)]
enum LenientReal {
    Num(f64),
    Text(String),
    Null(()),
}

impl LenientReal {
    fn value(&self) -> f64 {
        match self {
            LenientReal::Num(v) => *v,
            LenientReal::Text(s) => s.trim().parse::<f64>().unwrap_or(f64::NAN),
            LenientReal::Null(()) => f64::NAN,
        }
    }
}

/// Quotes bare `NaN`, `Infinity` and `-Infinity` tokens outside of strings, as
/// produced by some JSON writers.
fn quote_non_finite_literals(line: &str) -> String {
    let mut out = String::with_capacity(line.len() + 8);
    let mut in_string = false;
    let mut escaped = false;
    let mut rest = line;
    while let Some(c) = rest.chars().next() {
        if in_string {
            out.push(c);
            if escaped {
                escaped = false;
            } else if c == '\\' {
                escaped = true;
            } else if c == '"' {
                in_string = false;
            }
            rest = &rest[c.len_utf8()..];
            continue;
        }
        if c == '"' {
            in_string = true;
            out.push(c);
            rest = &rest[1..];
            continue;
        }
        let token = ["-Infinity", "Infinity", "NaN"]
            .into_iter()
            .find(|t| rest.starts_with(t));
        if let Some(t) = token {
            out.push('"');
            out.push_str(t);
            out.push('"');
            rest = &rest[t.len()..];
        } else {
            out.push(c);
            rest = &rest[c.len_utf8()..];
        }
    }
    out
}

fn to_finite<F: Scalar>(values: &[LenientReal]) -> Vec<F> {
    values.iter().map(|v| F::from_f64_lossy(v.value())).collect()
}

/// Parses signal records from a reader. Blank lines are ignored.
pub fn read_signals<F: Scalar, R: BufRead>(reader: R) -> Result<Vec<SignalTrack<F>>> {
    let mut tracks = Vec::new();
    let mut seen = HashSet::new();
    for (idx, line) in reader.lines().enumerate() {
        let line_no = idx + 1;
        let line = line.map_err(|e| Error::Malformed {
            line: line_no,
            message: e.to_string(),
        })?;
        if line.trim().is_empty() {
            continue;
        }
        let record: SignalRecordIn = match serde_json::from_str(&line) {
            Ok(r) => r,
            Err(first) => serde_json::from_str(&quote_non_finite_literals(&line)).map_err(|_| {
                Error::Malformed {
                    line: line_no,
                    message: first.to_string(),
                }
            })?,
        };
        let bytes = hex::decode(&record.bytes_hex).map_err(|e| Error::Malformed {
            line: line_no,
            message: format!("document {}: bytes_hex: {e}", record.doc_id),
        })?;
        if !seen.insert(record.doc_id.clone()) {
            return Err(Error::DuplicateDocument(record.doc_id));
        }
        let surprisal = to_finite(&record.surprisal);
        let entropy = to_finite(&record.entropy);
        tracks.push(SignalTrack::new(
            record.doc_id,
            record.language,
            bytes,
            surprisal,
            entropy,
        )?);
    }
    Ok(tracks)
}

pub fn read_signal_file<F: Scalar>(path: impl AsRef<Path>) -> Result<Vec<SignalTrack<F>>> {
    let path = path.as_ref();
    let file = File::open(path).map_err(|e| Error::io(path, e))?;
    read_signals(BufReader::new(file))
}

/// Writes signal records; identical input gives byte-identical output.
pub fn write_signals<F: Scalar, W: Write>(tracks: &[SignalTrack<F>], mut writer: W) -> std::io::Result<()> {
    for t in tracks {
        let record = SignalRecordOut {
            doc_id: &t.doc_id,
            language: t.language.as_deref(),
            bytes_hex: hex::encode(&t.bytes),
            surprisal: t.surprisal.iter().map(|v| v.as_f64()).collect(),
            entropy: t.entropy.iter().map(|v| v.as_f64()).collect(),
        };
        serde_json::to_writer(&mut writer, &record)?;
        writer.write_all(b"\n")?;
    }
    writer.flush()
}

pub fn write_signal_file<F: Scalar>(tracks: &[SignalTrack<F>], path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    let file = File::create(path).map_err(|e| Error::io(path, e))?;
    write_signals(tracks, BufWriter::new(file)).map_err(|e| Error::io(path, e))
}

#[derive(Debug, Clone, Serialize, Deserialize, PartialEq, Eq)]
pub struct ManifestEntry {
    pub doc_id: String,
    pub path: PathBuf,
    #[serde(default)]
    pub language: Option<String>,
}

/// Reads a line-delimited manifest and loads every listed document. Relative
/// paths are resolved against the manifest's directory.
pub fn read_manifest(path: impl AsRef<Path>) -> Result<Vec<Document>> {
    let path = path.as_ref();
    let file = File::open(path).map_err(|e| Error::io(path, e))?;
    let base = path.parent().unwrap_or_else(|| Path::new("."));
    let mut docs = Vec::new();
    let mut seen = HashSet::new();
    for (idx, line) in BufReader::new(file).lines().enumerate() {
        let line = line.map_err(|e| Error::io(path, e))?;
        if line.trim().is_empty() {
            continue;
        }
        let entry: ManifestEntry = serde_json::from_str(&line).map_err(|e| Error::Malformed {
            line: idx + 1,
            message: e.to_string(),
        })?;
        if !seen.insert(entry.doc_id.clone()) {
            return Err(Error::DuplicateDocument(entry.doc_id));
        }
        let doc_path = if entry.path.is_absolute() {
            entry.path.clone()
        } else {
            base.join(&entry.path)
        };
        let bytes = std::fs::read(&doc_path).map_err(|e| Error::io(&doc_path, e))?;
        docs.push(Document::new(entry.doc_id, bytes, entry.language)?);
    }
    Ok(docs)
}

/// One document per file; the document id is the path as given.
pub fn read_files(paths: &[PathBuf], language: Option<&str>) -> Result<Vec<Document>> {
    let mut seen = HashSet::new();
    paths
        .iter()
        .map(|p| {
            let bytes = std::fs::read(p).map_err(|e| Error::io(p, e))?;
            let id = p.display().to_string();
            if !seen.insert(id.clone()) {
                return Err(Error::DuplicateDocument(id));
            }
            Document::new(id, bytes, language.map(str::to_owned))
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    fn pieces(s: &str) -> Vec<&str> {
        let b = pretokenize(s.as_bytes());
        b.ranges().map(|r| &s[r]).collect()
    }

    #[test]
    fn empty_input_has_only_endpoints() {
        assert_eq!(pretokenize(b"").positions(), &[0]);
    }

    #[test]
    fn words_keep_leading_space() {
        assert_eq!(pretokenize(b"molecules are").positions(), &[0, 9, 13]);
        assert_eq!(pieces("molecules are"), ["molecules", " are"]);
    }

    #[test]
    fn class_transitions_split() {
        assert_eq!(pretokenize(b"x1 y").positions(), &[0, 1, 2, 4]);
        assert_eq!(pieces("x1 y"), ["x", "1", " y"]);
        assert_eq!(pieces("end, then..."), ["end", ",", " then", "..."]);
        assert_eq!(pieces("a  b\n"), ["a", "  b", "\n"]);
    }

    #[test]
    fn utf8_code_points_are_not_split() {
        let s = "naïve café 東京";
        let b = pretokenize(s.as_bytes());
        for &p in b.positions() {
            assert!(s.is_char_boundary(p));
        }
        assert_eq!(pieces(s), ["naïve", " café", " 東京"]);
    }

    #[test]
    fn invalid_utf8_is_per_byte_other() {
        let bytes = [b'a', 0xff, 0xfe, b'b'];
        assert_eq!(pretokenize(&bytes).positions(), &[0, 1, 3, 4]);
    }

    #[test]
    fn leads() {
        let doc = b"ab ab,  c";
        let b = pretokenize(doc);
        let leads: Vec<_> = b.ranges().map(|r| pretoken_lead(doc, &r)).collect();
        assert_eq!(
            leads,
            [
                PreTokenLead::WordStart { body: 0 },
                PreTokenLead::WordStart { body: 3 },
                PreTokenLead::Attached,
                PreTokenLead::WordStart { body: 7 },
            ]
        );
        assert_eq!(pretoken_lead(b" x", &(0..2)), PreTokenLead::Attached);
        assert_eq!(pretoken_lead(b"a ", &(1..2)), PreTokenLead::Attached);
    }

    fn track(n: usize) -> SignalTrack<f64> {
        SignalTrack::new(
            "d",
            None,
            vec![b'a'; n],
            vec![1.0; n],
            vec![2.0; n],
        )
        .unwrap()
    }

    #[test]
    fn length_mismatch_is_rejected() {
        let err = SignalTrack::<f64>::new("d", None, b"abc".to_vec(), vec![1.0; 2], vec![1.0; 3]).unwrap_err();
        assert!(matches!(err, Error::LengthMismatch { field: "surprisal", expected: 3, found: 2, .. }));
    }

    #[test]
    fn nan_in_file_names_offset() {
        let line = r#"{"doc_id":"d7","language":null,"bytes_hex":"6162636465","surprisal":[1,1,1,1,1],"entropy":[1,1,1,NaN,1]}"#;
        let err = read_signals::<f64, _>(line.as_bytes()).unwrap_err();
        match err {
            Error::BadSignalValue { doc_id, field, offset, .. } => {
                assert_eq!((doc_id.as_str(), field, offset), ("d7", "entropy", 3));
            }
            other => panic!("unexpected {other:?}"),
        }
        let quoted = line.replace("NaN", "\"NaN\"");
        assert!(matches!(
            read_signals::<f64, _>(quoted.as_bytes()).unwrap_err(),
            Error::BadSignalValue { offset: 3, .. }
        ));
    }

    #[test]
    fn short_array_in_file() {
        let line = r#"{"doc_id":"d","bytes_hex":"6162","surprisal":[1],"entropy":[1,1]}"#;
        assert!(matches!(
            read_signals::<f64, _>(line.as_bytes()).unwrap_err(),
            Error::LengthMismatch { .. }
        ));
    }

    #[test]
    fn malformed_line_reports_line_number() {
        let text = "\n{\"doc_id\": 3}\n";
        assert!(matches!(
            read_signals::<f64, _>(text.as_bytes()).unwrap_err(),
            Error::Malformed { line: 2, .. }
        ));
    }

    #[test]
    fn negative_value_rejected() {
        let err = SignalTrack::<f32>::new("d", None, b"ab".to_vec(), vec![0.0, -0.5], vec![0.0; 2]).unwrap_err();
        assert!(matches!(err, Error::BadSignalValue { offset: 1, .. }));
    }

    #[test]
    fn empty_track_list_writes_empty_file() {
        let mut out = Vec::new();
        write_signals::<f64, _>(&[], &mut out).unwrap();
        assert!(out.is_empty());
        assert!(read_signals::<f64, _>(&out[..]).unwrap().is_empty());
    }

    #[test]
    fn writing_twice_is_byte_identical() {
        let tracks = vec![track(5), {
            let mut t = track(3);
            t.doc_id = "e".into();
            t
        }];
        let mut a = Vec::new();
        let mut b = Vec::new();
        write_signals(&tracks, &mut a).unwrap();
        write_signals(&tracks, &mut b).unwrap();
        assert_eq!(a, b);
        assert_eq!(read_signals::<f64, _>(&a[..]).unwrap(), tracks);
    }

    #[test]
    fn duplicate_doc_ids_rejected() {
        let mut out = Vec::new();
        write_signals(&[track(2), track(2)], &mut out).unwrap();
        assert!(matches!(
            read_signals::<f64, _>(&out[..]).unwrap_err(),
            Error::DuplicateDocument(_)
        ));
    }

    #[test]
    fn manifest_resolves_relative_paths() {
        let dir = tempfile::tempdir().unwrap();
        std::fs::write(dir.path().join("a.txt"), "hello there").unwrap();
        std::fs::write(
            dir.path().join("m.jsonl"),
            "{\"doc_id\":\"a\",\"path\":\"a.txt\",\"language\":\"en\"}\n",
        )
        .unwrap();
        let docs = read_manifest(dir.path().join("m.jsonl")).unwrap();
        assert_eq!(docs.len(), 1);
        assert_eq!(docs[0].bytes, b"hello there");
        assert_eq!(docs[0].language.as_deref(), Some("en"));
    }
}
