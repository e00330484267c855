//! Classifiers over opcode-frequency vectors.
//!
//! Every model carries the [`VocabularyProjection`] fitted on its own
//! training data and the fingerprint of the opcode table it was trained
//! against. [`predict`] takes full 68-dimensional vectors and projects them
//! internally.

pub mod forest;
pub mod iforest;
pub mod lof;
mod metrics;

use std::fmt;
use std::fs;
use std::path::Path;
use std::str::FromStr;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::features::{fit_projection, project, FeatureError, FeatureVector, VocabularyProjection};
use crate::opcodes::{vocabulary_fingerprint, VOCABULARY_SIZE};

pub use forest::ForestConfig;
pub use iforest::IsoConfig;
pub use lof::LofConfig;
pub use metrics::Metrics;

pub const FORMAT_VERSION: u32 = 1;

/// Forest scores strictly above this are malicious; a tie is benign.
pub const FOREST_THRESHOLD: f64 = 0.5;

#[derive(Debug, Error)]
pub enum MlError {
    #[error("training corpus holds a single class")]
    SingleClassCorpus,
    #[error("corpus is empty")]
    EmptyCorpus,
    #[error("corpus too small: need at least {needed} samples, got {got}")]
    CorpusTooSmall { needed: usize, got: usize },
    #[error("dimension mismatch: expected {expected}, found {found}")]
    DimensionMismatch { expected: usize, found: usize },
    #[error("vocabulary fingerprint mismatch: model {model}, runtime {runtime}")]
    VocabularyFingerprintMismatch { model: String, runtime: String },
    #[error("unsupported model format version {0}")]
    UnsupportedVersion(u64),
    #[error("model kind mismatch: expected {expected}, file holds {found}")]
    KindMismatch { expected: ModelKind, found: String },
    #[error("invalid model: {0}")]
    InvalidModel(String),
    #[error("invalid configuration: {0}")]
    InvalidConfig(String),
    #[error(transparent)]
    Feature(#[from] FeatureError),
    #[error("io: {0}")]
    Io(#[from] std::io::Error),
    #[error("json: {0}")]
    Json(#[from] serde_json::Error),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Label {
    Benign,
    Malicious,
}

impl Label {
    pub fn is_malicious(self) -> bool {
        self == Label::Malicious
    }
}

impl fmt::Display for Label {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Label::Benign => "benign",
            Label::Malicious => "malicious",
        })
    }
}

impl FromStr for Label {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, String> {
        match s.trim().to_ascii_lowercase().as_str() {
            "benign" | "0" => Ok(Label::Benign),
            "malicious" | "1" => Ok(Label::Malicious),
            other => Err(format!("unknown label {other:?}")),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Sample {
    pub vector: FeatureVector,
    pub label: Label,
    pub source: String,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct LabeledCorpus {
    pub samples: Vec<Sample>,
}

impl LabeledCorpus {
    pub fn new(samples: Vec<Sample>) -> Self {
        LabeledCorpus { samples }
    }

    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }

    pub fn count(&self, label: Label) -> usize {
        self.samples.iter().filter(|s| s.label == label).count()
    }

    pub fn benign_only(&self) -> LabeledCorpus {
        LabeledCorpus { samples: self.samples.iter().filter(|s| s.label == Label::Benign).cloned().collect() }
    }

    /// Per-class shuffle, then `round(n_class * test_fraction)` of each class
    /// goes to the test side. Relative order within each side follows the
    /// shuffled order, benign first.
    pub fn stratified_split(&self, test_fraction: f64, seed: u64) -> (LabeledCorpus, LabeledCorpus) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut train = Vec::new();
        let mut test = Vec::new();
        for label in [Label::Benign, Label::Malicious] {
            let mut idx: Vec<usize> = (0..self.samples.len()).filter(|&i| self.samples[i].label == label).collect();
            for i in (1..idx.len()).rev() {
                let j = rng.random_range(0..=i as u64) as usize;
                idx.swap(i, j);
            }
            let n_test = (idx.len() as f64 * test_fraction).round() as usize;
            for (pos, &i) in idx.iter().enumerate() {
                if pos < n_test { &mut test } else { &mut train }.push(self.samples[i].clone());
            }
        }
        (LabeledCorpus::new(train), LabeledCorpus::new(test))
    }

    fn check_dims(&self) -> Result<(), MlError> {
        for s in &self.samples {
            if s.vector.projected || s.vector.dim() != VOCABULARY_SIZE {
                return Err(MlError::DimensionMismatch { expected: VOCABULARY_SIZE, found: s.vector.dim() });
            }
        }
        Ok(())
    }

    fn projected(&self) -> Result<(VocabularyProjection, Vec<Vec<f64>>), MlError> {
        self.check_dims()?;
        let projection = fit_projection(self.samples.iter().map(|s| &s.vector))?;
        let x = self
            .samples
            .iter()
            .map(|s| project(&s.vector, &projection).map(|v| v.freqs))
            .collect::<Result<_, _>>()?;
        Ok((projection, x))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ModelKind {
    RandomForest,
    IsolationForest,
    Lof,
}

impl ModelKind {
    pub fn name(self) -> &'static str {
        match self {
            ModelKind::RandomForest => "random-forest",
            ModelKind::IsolationForest => "isolation-forest",
            ModelKind::Lof => "lof",
        }
    }

    pub fn is_supervised(self) -> bool {
        self == ModelKind::RandomForest
    }
}

impl fmt::Display for ModelKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for ModelKind {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, String> {
        match s {
            "random-forest" | "forest" | "rf" => Ok(ModelKind::RandomForest),
            "isolation-forest" | "iforest" => Ok(ModelKind::IsolationForest),
            "lof" => Ok(ModelKind::Lof),
            other => Err(format!("unknown model kind {other:?}")),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "kebab-case")]
pub enum ModelParams {
    RandomForest(forest::Forest),
    IsolationForest(iforest::IsoForest),
    Lof(lof::Lof),
}

impl ModelParams {
    pub fn kind(&self) -> ModelKind {
        match self {
            ModelParams::RandomForest(_) => ModelKind::RandomForest,
            ModelParams::IsolationForest(_) => ModelKind::IsolationForest,
            ModelParams::Lof(_) => ModelKind::Lof,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainedModel {
    pub format_version: u32,
    pub kind: ModelKind,
    pub seed: u64,
    pub vocabulary_fingerprint: String,
    pub projection: VocabularyProjection,
    pub threshold: f64,
    pub params: ModelParams,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Verdict {
    Benign,
    Malicious,
}

impl fmt::Display for Verdict {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Verdict::Benign => "benign",
            Verdict::Malicious => "malicious",
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Prediction {
    pub score: f64,
    pub verdict: Verdict,
    /// Mass of the query on dimensions pruned at training time.
    pub oov_mass: f64,
}

impl TrainedModel {
    fn new(kind: ModelKind, seed: u64, projection: VocabularyProjection, threshold: f64, params: ModelParams) -> Self {
        TrainedModel {
            format_version: FORMAT_VERSION,
            kind,
            seed,
            vocabulary_fingerprint: vocabulary_fingerprint().to_string(),
            projection,
            threshold,
            params,
        }
    }

    /// Raw score on an already-projected vector.
    pub fn score_projected(&self, x: &[f64]) -> f64 {
        match &self.params {
            ModelParams::RandomForest(f) => f.score(x),
            ModelParams::IsolationForest(f) => f.score(x),
            ModelParams::Lof(l) => l.score(x),
        }
    }

    pub fn verdict_for(&self, score: f64) -> Verdict {
        if score > self.threshold {
            Verdict::Malicious
        } else {
            Verdict::Benign
        }
    }

    fn validate(&self) -> Result<(), MlError> {
        let bad = |m: &str| Err(MlError::InvalidModel(m.to_string()));
        if self.params.kind() != self.kind {
            return bad("kind field disagrees with params");
        }
        if !self.projection.is_valid() {
            return bad("projection indices out of range or unsorted");
        }
        if !self.threshold.is_finite() {
            return bad("threshold is not finite");
        }
        let d = self.projection.dim();
        match &self.params {
            ModelParams::RandomForest(f) => {
                if f.trees.is_empty() || !f.trees.iter().all(|t| t.is_consistent(d)) {
                    return bad("forest has no trees or a malformed tree");
                }
            }
            ModelParams::IsolationForest(f) => {
                if f.trees.is_empty() || f.psi < 2 || !f.trees.iter().all(|t| t.is_consistent(d)) {
                    return bad("isolation forest has no trees, psi < 2 or a malformed tree");
                }
            }
            ModelParams::Lof(l) => {
                let n = l.points.len();
                if l.k == 0 || l.k >= n || l.k_distance.len() != n || l.lrd.len() != n {
                    return bad("lof needs 1 <= k < stored points and one density per point");
                }
                if l.points.iter().any(|p| p.len() != d) {
                    return bad("lof point dimension differs from projection");
                }
            }
        }
        Ok(())
    }
}

pub fn train_random_forest(corpus: &LabeledCorpus, cfg: &ForestConfig) -> Result<TrainedModel, MlError> {
    if corpus.is_empty() {
        return Err(MlError::EmptyCorpus);
    }
    if corpus.count(Label::Benign) == 0 || corpus.count(Label::Malicious) == 0 {
        return Err(MlError::SingleClassCorpus);
    }
    if cfg.n_trees == 0 || cfg.min_leaf == 0 {
        return Err(MlError::InvalidConfig("n_trees and min_leaf must be at least 1".into()));
    }
    let (projection, x) = corpus.projected()?;
    let y: Vec<bool> = corpus.samples.iter().map(|s| s.label.is_malicious()).collect();
    let f = forest::fit(&x, &y, cfg);
    Ok(TrainedModel::new(ModelKind::RandomForest, cfg.seed, projection, FOREST_THRESHOLD, ModelParams::RandomForest(f)))
}

/// Trains on the benign samples of `corpus`; malicious samples are ignored.
pub fn train_isolation_forest(corpus: &LabeledCorpus, cfg: &IsoConfig) -> Result<TrainedModel, MlError> {
    let benign = corpus.benign_only();
    if benign.len() < 8 {
        return Err(MlError::CorpusTooSmall { needed: 8, got: benign.len() });
    }
    if cfg.n_trees == 0 || cfg.psi.is_some_and(|p| p < 2) || !(0.0..1.0).contains(&cfg.contamination) {
        return Err(MlError::InvalidConfig("need n_trees >= 1, psi >= 2, 0 <= contamination < 1".into()));
    }
    let (projection, x) = benign.projected()?;
    let f = iforest::fit(&x, cfg);
    let scores: Vec<f64> = x.iter().map(|xi| f.score(xi)).collect();
    let threshold = quantile(scores, 1.0 - cfg.contamination);
    Ok(TrainedModel::new(ModelKind::IsolationForest, cfg.seed, projection, threshold, ModelParams::IsolationForest(f)))
}

/// Trains on the benign samples of `corpus`; malicious samples are ignored.
pub fn train_lof(corpus: &LabeledCorpus, cfg: &LofConfig) -> Result<TrainedModel, MlError> {
    let benign = corpus.benign_only();
    if cfg.k == 0 || !cfg.threshold.is_finite() {
        return Err(MlError::InvalidConfig("k must be at least 1 and the threshold finite".into()));
    }
    if benign.len() <= cfg.k {
        return Err(MlError::CorpusTooSmall { needed: cfg.k + 1, got: benign.len() });
    }
    let (projection, x) = benign.projected()?;
    let l = lof::fit(&x, cfg.k);
    Ok(TrainedModel::new(ModelKind::Lof, cfg.seed, projection, cfg.threshold, ModelParams::Lof(l)))
}

/// Linear-interpolation quantile, `q` in [0, 1].
fn quantile(mut v: Vec<f64>, q: f64) -> f64 {
    v.sort_by(f64::total_cmp);
    let pos = q * (v.len() - 1) as f64;
    let lo = pos.floor() as usize;
    let hi = pos.ceil() as usize;
    v[lo] + (v[hi] - v[lo]) * (pos - lo as f64)
}

fn check_fingerprint(model: &TrainedModel) -> Result<(), MlError> {
    let runtime = vocabulary_fingerprint();
    if model.vocabulary_fingerprint != runtime {
        return Err(MlError::VocabularyFingerprintMismatch {
            model: model.vocabulary_fingerprint.clone(),
            runtime: runtime.to_string(),
        });
    }
    Ok(())
}

/// Score a full-dimensional vector.
pub fn predict(model: &TrainedModel, v: &FeatureVector) -> Result<Prediction, MlError> {
    check_fingerprint(model)?;
    let p = project(v, &model.projection)?;
    let score = model.score_projected(&p.freqs);
    Ok(Prediction { score, verdict: model.verdict_for(score), oov_mass: p.oov_mass })
}

pub fn evaluate(model: &TrainedModel, corpus: &LabeledCorpus) -> Result<Metrics, MlError> {
    if corpus.is_empty() {
        return Err(MlError::EmptyCorpus);
    }
    let mut pairs = Vec::with_capacity(corpus.len());
    for s in &corpus.samples {
        let p = predict(model, &s.vector)?;
        pairs.push((s.label.is_malicious(), p.verdict == Verdict::Malicious));
    }
    Ok(Metrics::from_pairs(pairs))
}

pub fn model_to_json(model: &TrainedModel) -> Result<String, MlError> {
    Ok(serde_json::to_string(model)?)
}

/// Parse a model, checking version, kind (when `expected` is given),
/// vocabulary fingerprint and structural invariants, in that order.
pub fn model_from_json(text: &str, expected: Option<ModelKind>) -> Result<TrainedModel, MlError> {
    let value: serde_json::Value = serde_json::from_str(text)?;
    let version = value.get("format_version").and_then(|v| v.as_u64());
    match version {
        Some(v) if v == u64::from(FORMAT_VERSION) => {}
        Some(v) => return Err(MlError::UnsupportedVersion(v)),
        None => return Err(MlError::InvalidModel("missing format_version".into())),
    }
    if let Some(want) = expected {
        let found = value.get("kind").and_then(|k| k.as_str()).unwrap_or("");
        if found != want.name() {
            return Err(MlError::KindMismatch { expected: want, found: found.to_string() });
        }
    }
    let model: TrainedModel = serde_json::from_value(value)?;
    check_fingerprint(&model)?;
    model.validate()?;
    Ok(model)
}

pub fn save_model(model: &TrainedModel, path: impl AsRef<Path>) -> Result<(), MlError> {
    let mut text = model_to_json(model)?;
    text.push('\n');
    fs::write(path, text)?;
    Ok(())
}

pub fn load_model(path: impl AsRef<Path>, expected: Option<ModelKind>) -> Result<TrainedModel, MlError> {
    model_from_json(&fs::read_to_string(path)?, expected)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::opcodes::index_of;
    use crate::opcodes::code;

    fn vector(pairs: &[(u8, u64)]) -> FeatureVector {
        let mut counts = [0u64; VOCABULARY_SIZE];
        for &(c, n) in pairs {
            counts[index_of(c).unwrap()] += n;
        }
        FeatureVector::from_counts(&counts).unwrap()
    }

    /// REDUCE-heavy malicious vectors against container-heavy benign ones,
    /// with disjoint support apart from STOP.
    fn separable(n: usize, seed: u64) -> LabeledCorpus {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let samples = (0..n)
            .map(|i| {
                let a = rng.random_range(1..20u64);
                let b = rng.random_range(1..20u64);
                if i % 2 == 0 {
                    Sample {
                        vector: vector(&[(code::GLOBAL, a), (code::REDUCE, b), (code::TUPLE1, a), (code::STOP, 1)]),
                        label: Label::Malicious,
                        source: format!("m{i}"),
                    }
                } else {
                    Sample {
                        vector: vector(&[(code::EMPTY_LIST, a), (code::APPENDS, b), (code::EMPTY_DICT, b), (code::STOP, 1)]),
                        label: Label::Benign,
                        source: format!("b{i}"),
                    }
                }
            })
            .collect();
        LabeledCorpus::new(samples)
    }

    #[test]
    fn forest_on_separable_clusters() {
        let corpus = separable(200, 1);
        let (train, test) = corpus.stratified_split(0.3, 9);
        assert_eq!(test.count(Label::Benign), 30);
        assert_eq!(test.count(Label::Malicious), 30);
        let m = train_random_forest(&train, &ForestConfig { seed: 5, ..Default::default() }).unwrap();
        let metrics = evaluate(&m, &test).unwrap();
        assert_eq!(metrics.f1, 1.0);
    }

    #[test]
    fn single_class_is_rejected() {
        let corpus = separable(20, 1).benign_only();
        assert!(matches!(train_random_forest(&corpus, &ForestConfig::default()), Err(MlError::SingleClassCorpus)));
    }

    #[test]
    fn forest_training_is_deterministic() {
        let corpus = separable(80, 2);
        let cfg = ForestConfig { n_trees: 25, seed: 11, ..Default::default() };
        assert_eq!(train_random_forest(&corpus, &cfg).unwrap(), train_random_forest(&corpus, &cfg).unwrap());
    }

    #[test]
    fn iforest_flags_exploit_against_container_corpus() {
        let benign = separable(200, 3).benign_only();
        let m = train_isolation_forest(&benign, &IsoConfig { seed: 1, ..Default::default() }).unwrap();
        let exploit = vector(&[(code::GLOBAL, 1), (code::MARK, 1), (code::STRING, 1), (code::TUPLE, 1), (code::REDUCE, 1), (code::STOP, 1)]);
        let p = predict(&m, &exploit).unwrap();
        assert_eq!(p.verdict, Verdict::Malicious, "{p:?} threshold {}", m.threshold);
        assert!(p.oov_mass > 0.0);
        let flagged = benign.samples.iter().filter(|s| predict(&m, &s.vector).unwrap().verdict == Verdict::Malicious).count();
        assert!(flagged <= 10, "{flagged}");
    }

    #[test]
    fn iforest_needs_eight_samples() {
        let small = LabeledCorpus::new(separable(14, 3).benign_only().samples);
        assert!(matches!(train_isolation_forest(&small, &IsoConfig::default()), Err(MlError::CorpusTooSmall { .. })));
    }

    #[test]
    fn lof_rejects_k_at_corpus_size() {
        let c = separable(40, 4).benign_only();
        let cfg = LofConfig { k: c.len(), ..Default::default() };
        assert!(matches!(train_lof(&c, &cfg), Err(MlError::CorpusTooSmall { .. })));
    }

    #[test]
    fn model_json_round_trip_and_errors() {
        let corpus = separable(60, 5);
        let m = train_random_forest(&corpus, &ForestConfig { n_trees: 5, ..Default::default() }).unwrap();
        let text = model_to_json(&m).unwrap();
        let back = model_from_json(&text, Some(ModelKind::RandomForest)).unwrap();
        assert_eq!(back, m);

        let wrong_version = text.replacen("\"format_version\":1", "\"format_version\":2", 1);
        assert!(matches!(model_from_json(&wrong_version, None), Err(MlError::UnsupportedVersion(2))));

        assert!(matches!(model_from_json(&text, Some(ModelKind::Lof)), Err(MlError::KindMismatch { .. })));

        let other_fp = text.replacen(vocabulary_fingerprint(), "00", 1);
        assert!(matches!(model_from_json(&other_fp, None), Err(MlError::VocabularyFingerprintMismatch { .. })));

        let mut stale = m.clone();
        stale.vocabulary_fingerprint = "deadbeef".into();
        assert!(matches!(
            predict(&stale, &corpus.samples[0].vector),
            Err(MlError::VocabularyFingerprintMismatch { .. })
        ));
    }

    #[test]
    fn quantile_interpolates() {
        assert_eq!(quantile(vec![0.0, 1.0, 2.0, 3.0, 4.0], 0.5), 2.0);
        assert!((quantile((0..=100).map(f64::from).collect(), 0.95) - 95.0).abs() < 1e-12);
        assert_eq!(quantile(vec![1.0, 3.0], 0.5), 2.0);
    }

    #[test]
    fn projected_vectors_are_rejected_for_training() {
        let mut c = separable(10, 6);
        c.samples[0].vector.freqs.pop();
        assert!(matches!(train_random_forest(&c, &ForestConfig::default()), Err(MlError::DimensionMismatch { .. })));
    }
}
