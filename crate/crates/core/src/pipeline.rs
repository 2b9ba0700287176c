//! Training configuration and dispatch used by the command-line tool.

use std::collections::BTreeMap;
use std::fmt;

use serde::{Deserialize, Serialize};

use crate::corpus::{fingerprint, Document, SignalTrack};
use crate::error::{Error, Result};
use crate::learn::{
    count_spans, count_spans_by_language, default_schedule, learn_balanced, learn_bpe, learn_frequency,
    learn_incremental, learn_seeded,
};
use crate::scalar::{quantile, Scalar};
use crate::segment::{ConstraintConfig, ConstraintKind, SignalKind};
use crate::vocab::{ConstraintRecord, Marker, Vocabulary};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Method {
    Frequency,
    Incremental,
    SeedBpe,
    Bpe,
    BpeWp,
    Balanced,
}

impl Method {
    pub const ALL: [Method; 6] = [
        Method::Frequency,
        Method::Incremental,
        Method::SeedBpe,
        Method::Bpe,
        Method::BpeWp,
        Method::Balanced,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Method::Frequency => "frequency",
            Method::Incremental => "incremental",
            Method::SeedBpe => "seed-bpe",
            Method::Bpe => "bpe",
            Method::BpeWp => "bpe-wp",
            Method::Balanced => "balanced",
        }
    }

    /// Whether the method reads information signals.
    pub fn needs_signals(self) -> bool {
        !matches!(self, Method::Bpe | Method::BpeWp)
    }
}

impl fmt::Display for Method {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl std::str::FromStr for Method {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        Method::ALL
            .into_iter()
            .find(|m| m.name() == s)
            .ok_or_else(|| Error::config(format!("unknown method {s:?}")))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub method: Method,
    pub constraint: ConstraintKind,
    pub signal: SignalKind,
    pub vocab_size: usize,
    pub theta_f: u64,
    /// Quantile of the signal values that fixes the global threshold.
    pub theta_g_quantile: f64,
    /// Absolute global threshold; overrides the quantile.
    pub theta_g: Option<f64>,
    pub theta_m: f64,
    pub seed_fraction: f64,
    /// Incremental schedule; the signal percentiles 5..95 when absent.
    pub schedule: Option<Vec<f64>>,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            method: Method::SeedBpe,
            constraint: ConstraintKind::Combined,
            signal: SignalKind::Surprisal,
            vocab_size: 8192,
            theta_f: 20,
            theta_g_quantile: 0.30,
            theta_g: None,
            theta_m: 0.0,
            seed_fraction: 0.5,
            schedule: None,
        }
    }
}

impl TrainConfig {
    /// Rejects settings that cannot produce a vocabulary.
    pub fn validate(&self) -> Result<()> {
        let min = if self.method == Method::Bpe { 512 } else { 768 };
        if self.vocab_size < min {
            return Err(Error::config(format!(
                "--vocab-size {} is below the {min} base symbols of {}",
                self.vocab_size, self.method
            )));
        }
        if self.method == Method::Incremental && self.constraint != ConstraintKind::Global {
            return Err(Error::config(format!(
                "the incremental method needs the global constraint: with {} segmentation the \
                 span count already exceeds typical vocabulary sizes, so the threshold search \
                 would stop at its first step",
                match self.constraint {
                    ConstraintKind::Monotonic => "monotonic",
                    _ => "combined",
                }
            )));
        }
        if !(0.0..=1.0).contains(&self.seed_fraction) {
            return Err(Error::config(format!("--seed-fraction {} is outside [0, 1]", self.seed_fraction)));
        }
        if !(0.0..=1.0).contains(&self.theta_g_quantile) {
            return Err(Error::config(format!(
                "--theta-g-quantile {} is outside [0, 1]",
                self.theta_g_quantile
            )));
        }
        if self.theta_m.is_nan() || self.theta_m < 0.0 {
            return Err(Error::config(format!("--theta-m {} must be non-negative", self.theta_m)));
        }
        if self.theta_g.is_some_and(f64::is_nan) {
            return Err(Error::config("--theta-g is NaN"));
        }
        Ok(())
    }

    /// The segmentation settings with the global threshold made absolute.
    pub fn constraint_for<F: Scalar>(&self, tracks: &[SignalTrack<F>]) -> Result<ConstraintConfig<F>> {
        let theta_m = F::from_f64_lossy(self.theta_m);
        let theta_g = || -> Result<F> {
            if let Some(g) = self.theta_g {
                return Ok(F::from_f64_lossy(g));
            }
            let values: Vec<F> = tracks.iter().flat_map(|t| t.signal(self.signal).iter().copied()).collect();
            quantile(&values, self.theta_g_quantile).ok_or(Error::EmptyCorpus)
        };
        let cfg = match self.constraint {
            ConstraintKind::Global => ConstraintConfig::global(self.signal, theta_g()?),
            ConstraintKind::Monotonic => ConstraintConfig::monotonic(self.signal, theta_m),
            ConstraintKind::Combined => ConstraintConfig::combined(self.signal, theta_g()?, theta_m),
        };
        cfg.validate()?;
        Ok(cfg)
    }

    fn as_map(&self) -> BTreeMap<String, String> {
        let value = serde_json::to_value(self).expect("config serialises");
        value
            .as_object()
            .expect("config is an object")
            .iter()
            .map(|(k, v)| {
                let text = match v {
                    serde_json::Value::String(s) => s.clone(),
                    other => other.to_string(),
                };
                (k.clone(), text)
            })
            .collect()
    }
}

/// Fingerprint of signal tracks: ids, bytes and signal values.
pub fn tracks_fingerprint<F: Scalar>(tracks: &[SignalTrack<F>]) -> String {
    let items = tracks.iter().flat_map(|t| {
        let values = |v: &[F]| v.iter().flat_map(|x| x.as_f64().to_le_bytes()).collect::<Vec<u8>>();
        [
            t.doc_id.as_bytes().to_vec(),
            t.language.clone().unwrap_or_default().into_bytes(),
            t.bytes.clone(),
            values(&t.surprisal),
            values(&t.entropy),
        ]
    });
    fingerprint(items)
}

/// Fingerprint of documents: ids, languages and bytes.
pub fn documents_fingerprint(docs: &[Document]) -> String {
    fingerprint(docs.iter().flat_map(|d| {
        [
            d.doc_id.as_bytes().to_vec(),
            d.language.clone().unwrap_or_default().into_bytes(),
            d.bytes.clone(),
        ]
    }))
}

fn finish(mut vocab: Vocabulary, cfg: &TrainConfig, fingerprint: String) -> Vocabulary {
    let config = std::mem::take(&mut vocab.metadata.config);
    vocab.metadata.config = cfg.as_map();
    vocab.metadata.config.extend(config);
    vocab.metadata.corpus_fingerprint = Some(fingerprint);
    vocab
}

/// Trains any method from signal tracks (the BPE baselines only use bytes).
pub fn train<F: Scalar>(cfg: &TrainConfig, tracks: &[SignalTrack<F>]) -> Result<Vocabulary> {
    cfg.validate()?;
    if tracks.is_empty() {
        return Err(Error::EmptyCorpus);
    }
    let fp = tracks_fingerprint(tracks);
    let vocab = match cfg.method {
        Method::Bpe | Method::BpeWp => {
            let docs: Vec<&[u8]> = tracks.iter().map(|t| t.bytes.as_slice()).collect();
            return train_bytes_only(cfg, &docs, fp);
        }
        Method::Frequency => {
            let c = cfg.constraint_for(tracks)?;
            let mut v = learn_frequency(&count_spans(tracks, &c)?, cfg.vocab_size, cfg.theta_f)?;
            v.metadata.constraint = Some(ConstraintRecord::from(&c));
            v
        }
        Method::Incremental => {
            let schedule: Vec<F> = match &cfg.schedule {
                Some(s) => s.iter().map(|&v| F::from_f64_lossy(v)).collect(),
                None => default_schedule(tracks, cfg.signal),
            };
            learn_incremental(tracks, cfg.signal, cfg.vocab_size, cfg.theta_f, &schedule)?
        }
        Method::SeedBpe => {
            let c = cfg.constraint_for(tracks)?;
            learn_seeded(tracks, &c, cfg.vocab_size, cfg.seed_fraction, cfg.theta_f)?
        }
        Method::Balanced => {
            let c = cfg.constraint_for(tracks)?;
            let mut v = learn_balanced(&count_spans_by_language(tracks, &c)?, cfg.vocab_size, cfg.theta_f)?;
            v.metadata.constraint = Some(ConstraintRecord::from(&c));
            v
        }
    };
    Ok(finish(vocab, cfg, fp))
}

/// Trains a BPE baseline from raw documents.
pub fn train_documents(cfg: &TrainConfig, docs: &[Document]) -> Result<Vocabulary> {
    cfg.validate()?;
    if cfg.method.needs_signals() {
        return Err(Error::config(format!("method {} needs a signal file", cfg.method)));
    }
    if docs.is_empty() {
        return Err(Error::EmptyCorpus);
    }
    let bytes: Vec<&[u8]> = docs.iter().map(|d| d.bytes.as_slice()).collect();
    train_bytes_only(cfg, &bytes, documents_fingerprint(docs))
}

fn train_bytes_only(cfg: &TrainConfig, docs: &[&[u8]], fp: String) -> Result<Vocabulary> {
    let inner = if cfg.method == Method::Bpe {
        Marker::Plain
    } else {
        Marker::Continuation
    };
    Ok(finish(learn_bpe(docs, cfg.vocab_size, inner)?, cfg, fp))
}
