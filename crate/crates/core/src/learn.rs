//! Vocabulary learning from segmented corpora.
//!
//! Spans are keyed by marker and bytes. The first span of a pre-token that
//! starts a word is word-initial; when that pre-token opens with a space, the
//! space is absorbed by the marker (and a span consisting of the space alone
//! hands the marker to the next span). The first span of any other pre-token
//! is plain, and every later span is a continuation.
//!
//! Candidates are ranked by count (descending), then byte length
//! (ascending), then bytes and marker.

use std::cmp::Ordering;
use std::collections::{BTreeMap, HashMap};
use std::io::Write;

use rayon::prelude::*;
use serde::Serialize;

use crate::bpe::train_bpe;
use crate::corpus::{pretoken_lead, PreTokenLead, SignalTrack};
use crate::error::{Error, Result};
use crate::scalar::{quantile_sorted, Scalar};
use crate::segment::{segment, ConstraintConfig, ConstraintKind, SignalKind, Span};
use crate::tokenizer::{count_pretokens, initial_words, Tokenizer};
use crate::vocab::{ConstraintRecord, Marker, Symbol, Vocabulary};

/// Language key used for tracks without a language tag.
pub const UNTAGGED: &str = "und";

#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct SpanFrequencyTable {
    counts: HashMap<Symbol, u64>,
}

impl SpanFrequencyTable {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn add(&mut self, symbol: Symbol, count: u64) {
        if count > 0 {
            *self.counts.entry(symbol).or_default() += count;
        }
    }

    pub fn get(&self, symbol: &Symbol) -> u64 {
        self.counts.get(symbol).copied().unwrap_or(0)
    }

    pub fn len(&self) -> usize {
        self.counts.len()
    }

    pub fn is_empty(&self) -> bool {
        self.counts.is_empty()
    }

    pub fn iter(&self) -> impl Iterator<Item = (&Symbol, u64)> {
        self.counts.iter().map(|(s, &c)| (s, c))
    }

    pub fn merge(&mut self, other: SpanFrequencyTable) {
        if self.counts.len() < other.counts.len() {
            let mine = std::mem::replace(&mut self.counts, other.counts);
            for (s, c) in mine {
                *self.counts.entry(s).or_default() += c;
            }
        } else {
            for (s, c) in other.counts {
                *self.counts.entry(s).or_default() += c;
            }
        }
    }

    /// Entries not already in `vocab` with count `>= min_count`, best first.
    pub fn ranked_candidates(&self, vocab: &Vocabulary, min_count: u64) -> Vec<(Symbol, u64)> {
        let mut out: Vec<(Symbol, u64)> = self
            .counts
            .iter()
            .filter(|(s, &c)| c >= min_count && !vocab.contains(s))
            .map(|(s, &c)| (s.clone(), c))
            .collect();
        out.sort_unstable_by(candidate_order);
        out
    }

    /// Entries sorted by marker then bytes, for stable output.
    pub fn sorted(&self) -> Vec<(&Symbol, u64)> {
        let mut v: Vec<_> = self.iter().collect();
        v.sort_unstable_by(|a, b| (a.0.marker, &a.0.bytes).cmp(&(b.0.marker, &b.0.bytes)));
        v
    }
}

fn candidate_order(a: &(Symbol, u64), b: &(Symbol, u64)) -> Ordering {
    b.1.cmp(&a.1)
        .then(a.0.bytes.len().cmp(&b.0.bytes.len()))
        .then(a.0.bytes.cmp(&b.0.bytes))
        .then(a.0.marker.cmp(&b.0.marker))
}

/// Calls `emit` with the marker and bytes of every span of `track`.
pub fn for_each_keyed_span<F: Scalar>(
    track: &SignalTrack<F>,
    spans: &[Span],
    inner: Marker,
    mut emit: impl FnMut(Marker, &[u8]),
) {
    let positions = track.boundaries.positions();
    let bytes = &track.bytes;
    let mut carry_marker = false;
    for span in spans {
        let range = span.start..span.end();
        let text = &bytes[range.clone()];
        match positions.binary_search(&span.start) {
            Ok(i) if i + 1 < positions.len() => {
                let pre = positions[i]..positions[i + 1];
                match pretoken_lead(bytes, &pre) {
                    PreTokenLead::WordStart { body } if body > pre.start => {
                        if span.len == 1 {
                            carry_marker = true;
                        } else {
                            emit(Marker::WordInitial, &bytes[body..span.end()]);
                        }
                    }
                    PreTokenLead::WordStart { .. } => emit(Marker::WordInitial, text),
                    PreTokenLead::Attached => emit(Marker::Plain, text),
                }
            }
            _ if carry_marker => {
                carry_marker = false;
                emit(Marker::WordInitial, text);
            }
            _ => emit(inner, text),
        }
    }
}

fn count_track<F: Scalar>(track: &SignalTrack<F>, cfg: &ConstraintConfig<F>, table: &mut SpanFrequencyTable) {
    let spans = segment(track, cfg);
    for_each_keyed_span(track, &spans, Marker::Continuation, |m, b| {
        match table.counts.get_mut(&Symbol::new(m, b)) {
            Some(c) => *c += 1,
            None => {
                table.counts.insert(Symbol::new(m, b), 1);
            }
        }
    });
}

/// Counts the keyed spans of every track. Parallel over tracks; the result
/// does not depend on track order or thread count.
pub fn count_spans<F: Scalar>(tracks: &[SignalTrack<F>], cfg: &ConstraintConfig<F>) -> Result<SpanFrequencyTable> {
    cfg.validate()?;
    Ok(tracks
        .par_iter()
        .fold(SpanFrequencyTable::new, |mut acc, t| {
            count_track(t, cfg, &mut acc);
            acc
        })
        .reduce(SpanFrequencyTable::new, |mut a, b| {
            a.merge(b);
            a
        }))
}

/// [`count_spans`] split by the tracks' language tags.
pub fn count_spans_by_language<F: Scalar>(
    tracks: &[SignalTrack<F>],
    cfg: &ConstraintConfig<F>,
) -> Result<BTreeMap<String, SpanFrequencyTable>> {
    let mut groups: BTreeMap<String, Vec<&SignalTrack<F>>> = BTreeMap::new();
    for t in tracks {
        groups
            .entry(t.language.clone().unwrap_or_else(|| UNTAGGED.to_owned()))
            .or_default()
            .push(t);
    }
    cfg.validate()?;
    Ok(groups
        .into_iter()
        .map(|(lang, ts)| {
            let table = ts
                .par_iter()
                .fold(SpanFrequencyTable::new, |mut acc, t| {
                    count_track(t, cfg, &mut acc);
                    acc
                })
                .reduce(SpanFrequencyTable::new, |mut a, b| {
                    a.merge(b);
                    a
                });
            (lang, table)
        })
        .collect())
}

#[derive(Serialize)]
struct DumpLine<'a> {
    marker: Marker,
    bytes_hex: String,
    count: u64,
    language: Option<&'a str>,
}

/// Line-delimited dump of one or more tables, sorted by language, marker and
/// bytes.
pub fn write_table_dump<W: Write>(tables: &BTreeMap<String, SpanFrequencyTable>, mut w: W) -> std::io::Result<()> {
    for (lang, table) in tables {
        for (sym, count) in table.sorted() {
            let line = DumpLine {
                marker: sym.marker,
                bytes_hex: hex::encode(&sym.bytes),
                count,
                language: (lang != UNTAGGED).then_some(lang.as_str()),
            };
            serde_json::to_writer(&mut w, &line)?;
            w.write_all(b"\n")?;
        }
    }
    w.flush()
}

fn check_size(size: usize, base: usize) -> Result<()> {
    if size < base {
        return Err(Error::config(format!(
            "vocabulary size {size} is below the {base} base symbols"
        )));
    }
    Ok(())
}

fn short_warning(got: usize, want: usize) -> String {
    format!("only {got} symbols available for a requested size of {want}")
}

/// Base symbols plus the best-ranked spans with count `>= min_count`.
pub fn learn_frequency(table: &SpanFrequencyTable, size: usize, min_count: u64) -> Result<Vocabulary> {
    let mut vocab = Vocabulary::base();
    check_size(size, vocab.len())?;
    let slots = size - vocab.len();
    for (sym, _) in table.ranked_candidates(&vocab, min_count).into_iter().take(slots) {
        vocab.insert(sym);
    }
    let meta = &mut vocab.metadata;
    meta.method = "frequency".into();
    meta.requested_size = size;
    meta.theta_f = Some(min_count);
    if vocab.len() < size {
        let w = short_warning(vocab.len(), size);
        log::warn!("{w}");
        vocab.metadata.warnings.push(w);
    }
    Ok(vocab)
}

/// Percentiles 5, 10, ..., 95 of the chosen signal over all tracks, with
/// repeated values dropped so the schedule is strictly increasing.
pub fn default_schedule<F: Scalar>(tracks: &[SignalTrack<F>], signal: SignalKind) -> Vec<F> {
    let mut values: Vec<F> = tracks.iter().flat_map(|t| t.signal(signal).iter().copied()).collect();
    if values.is_empty() {
        return Vec::new();
    }
    values.sort_unstable_by(|a, b| a.partial_cmp(b).expect("finite signal"));
    let mut out: Vec<F> = Vec::new();
    for step in 1..=19 {
        let q = quantile_sorted(&values, step as f64 * 0.05);
        if out.last().is_none_or(|&l| q > l) {
            out.push(q);
        }
    }
    out
}

/// Raises the global threshold along `schedule` until enough spans with count
/// `>= min_count` exist, then keeps the best `size - 768` of that pass.
pub fn learn_incremental<F: Scalar>(
    tracks: &[SignalTrack<F>],
    signal: SignalKind,
    size: usize,
    min_count: u64,
    schedule: &[F],
) -> Result<Vocabulary> {
    let base = Vocabulary::base();
    check_size(size, base.len())?;
    if schedule.iter().any(|v| v.is_nan()) || schedule.windows(2).any(|w| w[0] >= w[1]) {
        return Err(Error::config("theta_g schedule must be strictly increasing"));
    }
    let want = size - base.len();
    let mut vocab = base.clone();
    let mut eligible_per_pass = Vec::new();
    let mut selected: Option<(F, Vec<(Symbol, u64)>)> = None;
    if want > 0 {
        let mut best: Option<(F, Vec<(Symbol, u64)>)> = None;
        for &theta in schedule {
            let cfg = ConstraintConfig::global(signal, theta);
            let table = count_spans(tracks, &cfg)?;
            let eligible = table.ranked_candidates(&base, min_count);
            eligible_per_pass.push(eligible.len());
            log::debug!("theta_g={theta}: {} eligible spans", eligible.len());
            if eligible.len() >= want {
                selected = Some((theta, eligible));
                break;
            }
            if best.as_ref().is_none_or(|(_, b)| eligible.len() > b.len()) {
                best = Some((theta, eligible));
            }
        }
        if selected.is_none() {
            selected = best;
        }
    }
    let chosen = selected.as_ref().map(|(t, _)| t.as_f64());
    if let Some((_, spans)) = selected {
        for (sym, _) in spans.into_iter().take(want) {
            vocab.insert(sym);
        }
    }
    let meta = &mut vocab.metadata;
    meta.method = "incremental".into();
    meta.requested_size = size;
    meta.theta_f = Some(min_count);
    meta.constraint = Some(ConstraintRecord {
        kind: ConstraintKind::Global,
        signal,
        theta_g: chosen.map(|g| g.to_string()),
        theta_m: 0.0,
    });
    meta.theta_g_schedule = schedule.iter().map(|v| v.as_f64()).collect();
    meta.theta_g_selected = chosen;
    meta.eligible_per_pass = eligible_per_pass;
    if vocab.len() < size {
        let w = format!("schedule exhausted: {}", short_warning(vocab.len(), size));
        log::warn!("{w}");
        vocab.metadata.warnings.push(w);
    }
    Ok(vocab)
}

/// Trains BPE from single bytes. `inner` selects the 768-symbol base
/// (`Continuation`, used with longest-prefix inference) or the 512-symbol base
/// of the plain baseline (`Plain`).
pub fn learn_bpe<D: AsRef<[u8]> + Sync>(docs: &[D], size: usize, inner: Marker) -> Result<Vocabulary> {
    let base = Vocabulary::base_with_inner(inner);
    check_size(size, base.len())?;
    let pretokens = count_pretokens(docs);
    let tokenizer = Tokenizer::new(base.clone());
    let words = initial_words(&tokenizer, &pretokens);
    let mut vocab = train_bpe(base, &words, size)?.vocab;
    let meta = &mut vocab.metadata;
    meta.method = if inner == Marker::Plain { "bpe" } else { "bpe-wp" }.into();
    meta.requested_size = size;
    if vocab.len() < size {
        let w = short_warning(vocab.len(), size);
        log::warn!("{w}");
        vocab.metadata.warnings.push(w);
    }
    Ok(vocab)
}

/// Learns `floor(p * (size - 768))` symbols with the frequency method, then
/// completes the vocabulary with BPE merges over the seed-tokenised corpus.
pub fn learn_seeded<F: Scalar>(
    tracks: &[SignalTrack<F>],
    cfg: &ConstraintConfig<F>,
    size: usize,
    fraction: f64,
    min_count: u64,
) -> Result<Vocabulary> {
    check_size(size, Vocabulary::base().len())?;
    if !(0.0..=1.0).contains(&fraction) {
        return Err(Error::config(format!("seed fraction must be in [0, 1], got {fraction}")));
    }
    let seed_size = 768 + (fraction * (size - 768) as f64).floor() as usize;
    let table = count_spans(tracks, cfg)?;
    let seed = learn_frequency(&table, seed_size, min_count)?;
    let seed_len = seed.len();
    let docs: Vec<&[u8]> = tracks.iter().map(|t| t.bytes.as_slice()).collect();
    let pretokens = count_pretokens(&docs);
    let tokenizer = Tokenizer::new(seed.clone());
    let words = initial_words(&tokenizer, &pretokens);
    let mut vocab = train_bpe(seed, &words, size)?.vocab;
    let meta = &mut vocab.metadata;
    meta.method = "seed-bpe".into();
    meta.requested_size = size;
    meta.theta_f = Some(min_count);
    meta.constraint = Some(ConstraintRecord::from(cfg));
    meta.seed_fraction = Some(fraction);
    meta.seed_size = Some(seed_len);
    if seed_len < seed_size {
        meta.warnings.push(format!("seed phase: {}", short_warning(seed_len, seed_size)));
    }
    if vocab.len() < size {
        let w = short_warning(vocab.len(), size);
        log::warn!("{w}");
        vocab.metadata.warnings.push(w);
    }
    Ok(vocab)
}

/// Round-robin over languages (in key order): each turn adds the language's
/// best remaining span that no other language has already contributed.
pub fn learn_balanced(
    tables: &BTreeMap<String, SpanFrequencyTable>,
    size: usize,
    min_count: u64,
) -> Result<Vocabulary> {
    if tables.is_empty() {
        return Err(Error::config("balanced learning needs at least one language table"));
    }
    let mut vocab = Vocabulary::base();
    check_size(size, vocab.len())?;
    let base = vocab.clone();
    let queues: Vec<Vec<(Symbol, u64)>> = tables.values().map(|t| t.ranked_candidates(&base, min_count)).collect();
    let mut cursors = vec![0usize; queues.len()];
    let mut contributed = vec![0usize; queues.len()];
    'outer: while vocab.len() < size {
        let mut progressed = false;
        for (lang, queue) in queues.iter().enumerate() {
            if vocab.len() >= size {
                break 'outer;
            }
            while cursors[lang] < queue.len() {
                let sym = &queue[cursors[lang]].0;
                cursors[lang] += 1;
                if vocab.insert(sym.clone()).1 {
                    contributed[lang] += 1;
                    progressed = true;
                    break;
                }
            }
        }
        if !progressed {
            break;
        }
    }
    let meta = &mut vocab.metadata;
    meta.method = "balanced".into();
    meta.requested_size = size;
    meta.theta_f = Some(min_count);
    for (lang, n) in tables.keys().zip(&contributed) {
        meta.config.insert(format!("contributed.{lang}"), n.to_string());
    }
    if vocab.len() < size {
        let w = short_warning(vocab.len(), size);
        log::warn!("{w}");
        vocab.metadata.warnings.push(w);
    }
    Ok(vocab)
}
