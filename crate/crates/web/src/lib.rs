//! WebAssembly bindings for the browser demo in `www/`.
//!
//! Every export returns JSON or plain text. The `*_json` functions hold the
//! logic and are ordinary Rust so they can be tested natively.

use std::collections::BTreeMap;

use pickle_sentry::corpus::{self, GenSpec, Recipe, WrapPath};
use pickle_sentry::decompiler::decompile;
use pickle_sentry::ml::{self, ForestConfig, Label, TrainedModel};
use pickle_sentry::scan::{ScanConfig, Scanner};
use pickle_sentry::unwrap::{self, Limits};
use pickle_sentry::{disassemble_all, opcode_vocabulary};
use serde::Serialize;
use wasm_bindgen::prelude::*;

#[derive(Serialize)]
struct CandidateListing {
    chain: String,
    well_formed: bool,
    malform_reason: Option<String>,
    lines: Vec<String>,
}

#[derive(Serialize)]
struct Listing {
    candidates: Vec<CandidateListing>,
    /// `(mnemonic, count)`, most frequent first.
    histogram: Vec<(String, u64)>,
    total_opcodes: u64,
}

fn candidates(bytes: &[u8]) -> Result<Vec<(String, Vec<u8>)>, String> {
    let u = unwrap::unwrap(bytes, &Limits::default()).map_err(|e| e.to_string())?;
    if u.candidates.is_empty() {
        return Err("no pickle found in input".into());
    }
    Ok(u.candidates.iter().map(|c| (c.chain_string(), c.bytes.to_vec())).collect())
}

/// Disassembly of every embedded pickle plus an opcode histogram.
pub fn disassemble_json(bytes: &[u8]) -> Result<String, String> {
    let mut counts = [0u64; pickle_sentry::VOCABULARY_SIZE];
    let mut listing = Vec::new();
    for (chain, data) in candidates(bytes)? {
        let segs = disassemble_all(&data).map_err(|e| e.to_string())?;
        let mut lines = Vec::new();
        for s in &segs {
            for e in &s.events {
                counts[e.index as usize] += 1;
                lines.push(e.to_string());
            }
        }
        let first = &segs[0];
        listing.push(CandidateListing {
            chain,
            well_formed: first.well_formed,
            malform_reason: first.malform_reason.map(|m| m.to_string()),
            lines,
        });
    }
    let vocab = opcode_vocabulary();
    let mut histogram: Vec<(String, u64)> =
        counts.iter().enumerate().filter(|(_, &c)| c > 0).map(|(i, &c)| (vocab[i].mnemonic.to_string(), c)).collect();
    histogram.sort_by(|a, b| b.1.cmp(&a.1).then(a.0.cmp(&b.0)));
    let listing = Listing { candidates: listing, total_opcodes: counts.iter().sum(), histogram };
    serde_json::to_string(&listing).map_err(|e| e.to_string())
}

/// Pseudo-source for every embedded pickle.
pub fn decompile_text(bytes: &[u8]) -> Result<String, String> {
    let cands = candidates(bytes)?;
    let mut out = String::new();
    for (chain, data) in &cands {
        out.push_str(&format!("# {chain}\n"));
        for seg in disassemble_all(data).map_err(|e| e.to_string())? {
            match decompile(&seg) {
                Ok(p) => out.push_str(&p.to_string()),
                Err(e) => out.push_str(&format!("# {e}\n")),
            }
        }
    }
    Ok(out)
}

/// A forest trained in the page on a generated corpus.
#[wasm_bindgen]
pub struct Demo {
    scanner: Scanner,
    summary: String,
}

#[derive(Serialize)]
struct TrainSummary {
    benign: usize,
    malicious: usize,
    features: usize,
    trees: usize,
    test_f1: f64,
    test_samples: usize,
}

impl Demo {
    pub fn train(seed: u64, n_benign: usize, n_malicious: usize) -> Result<Demo, String> {
        let spec = GenSpec::new(seed, n_benign, n_malicious);
        let samples = corpus::generate_samples(&spec).map_err(|e| e.to_string())?;
        let all = corpus::corpus_from_samples(&samples, &Limits::default());
        let (train, test) = all.stratified_split(0.3, seed);
        let cfg = ForestConfig { n_trees: 50, seed, ..ForestConfig::default() };
        let model: TrainedModel = ml::train_random_forest(&train, &cfg).map_err(|e| e.to_string())?;
        let metrics = ml::evaluate(&model, &test).map_err(|e| e.to_string())?;
        let summary = TrainSummary {
            benign: train.count(Label::Benign),
            malicious: train.count(Label::Malicious),
            features: model.projection.dim(),
            trees: cfg.n_trees,
            test_f1: metrics.f1,
            test_samples: test.len(),
        };
        let summary = serde_json::to_string(&summary).map_err(|e| e.to_string())?;
        Ok(Demo { scanner: Scanner::new(Some(model), ScanConfig::default()), summary })
    }

    pub fn scan_json(&self, name: &str, bytes: &[u8]) -> String {
        self.scanner.scan_bytes(name, bytes).to_json_line()
    }
}

#[wasm_bindgen]
impl Demo {
    /// Generate a corpus and train on 70% of it.
    #[wasm_bindgen(constructor)]
    pub fn new(seed: u64, n_benign: usize, n_malicious: usize) -> Result<Demo, JsError> {
        Demo::train(seed, n_benign, n_malicious).map_err(|e| JsError::new(&e))
    }

    /// Training-set sizes and held-out F1 as JSON.
    pub fn summary(&self) -> String {
        self.summary.clone()
    }

    /// Scan report as JSON.
    pub fn scan(&self, name: &str, bytes: &[u8]) -> String {
        self.scan_json(name, bytes)
    }
}

/// Recipe and wrap names offered by [`sample`], as JSON.
pub fn sample_catalog_json() -> String {
    let mut m = BTreeMap::new();
    m.insert("benign", Recipe::BENIGN.iter().map(|r| r.name()).collect::<Vec<_>>());
    m.insert("malicious", Recipe::MALICIOUS.iter().map(|r| r.name()).collect());
    m.insert("wraps", WrapPath::ALL.iter().map(|w| w.name()).collect());
    serde_json::to_string(&m).expect("static catalog")
}

/// Bytes of one generated sample; exploits can be wrapped.
pub fn sample_bytes(recipe: &str, wrap: &str, seed: u64) -> Result<Vec<u8>, String> {
    let recipe: Recipe = recipe.parse()?;
    let bytes = corpus::sample(recipe, seed);
    if wrap.is_empty() || wrap == "pkl" {
        return Ok(bytes);
    }
    let wrap: WrapPath = wrap.parse()?;
    Ok(corpus::wrap(&bytes, wrap))
}

#[wasm_bindgen(js_name = disassemble)]
pub fn disassemble_js(bytes: &[u8]) -> Result<String, JsError> {
    disassemble_json(bytes).map_err(|e| JsError::new(&e))
}

#[wasm_bindgen(js_name = decompile)]
pub fn decompile_js(bytes: &[u8]) -> Result<String, JsError> {
    decompile_text(bytes).map_err(|e| JsError::new(&e))
}

#[wasm_bindgen(js_name = sampleCatalog)]
pub fn sample_catalog_js() -> String {
    sample_catalog_json()
}

#[wasm_bindgen(js_name = sample)]
pub fn sample_js(recipe: &str, wrap: &str, seed: u64) -> Result<Vec<u8>, JsError> {
    sample_bytes(recipe, wrap, seed).map_err(|e| JsError::new(&e))
}
