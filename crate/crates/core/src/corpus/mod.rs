//! Labeled synthetic corpora: model-like benign pickles, exploit pickles and
//! their wrapped variants, plus the CSV manifest that describes them.
//!
//! Generation is single-threaded and driven by one seeded ChaCha8 stream, so a
//! spec always yields the same bytes. Exploit payloads are inert shell strings
//! (`echo ...`); nothing here ever executes them.

use std::fmt;
use std::fs;
use std::io::{Cursor, Write};
use std::path::{Path, PathBuf};
use std::rc::Rc;
use std::str::FromStr;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::ml::{Label, LabeledCorpus, Sample};
use crate::unwrap::Limits;

pub mod writer;

pub use writer::{dump, Obj};

#[derive(Debug, thiserror::Error)]
pub enum CorpusError {
    #[error("invalid spec: {0}")]
    InvalidSpec(String),
    #[error("invalid manifest: {0}")]
    InvalidManifest(String),
    #[error("{path}: {source}")]
    Io { path: PathBuf, source: std::io::Error },
    #[error(transparent)]
    Csv(#[from] csv::Error),
    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

fn io_err(path: &Path) -> impl FnOnce(std::io::Error) -> CorpusError + '_ {
    move |source| CorpusError::Io { path: path.to_path_buf(), source }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Recipe {
    /// `torch.save`-style pytorch-zip with persistent-id tensor stubs.
    StateDict,
    /// Dict of numpy-style arrays rebuilt through `_reconstruct` with raw byte buffers.
    NumpyArrays,
    /// Hyperparameter dict with scalar, list and sub-dict values.
    NestedConfig,
    /// Estimator object built with NEWOBJ + BUILD.
    Estimator,
    /// Graph whose nodes are shared and referenced through the memo.
    MemoGraph,
    /// A deny-listed callable invoked with REDUCE.
    ReduceCall,
    /// A reducer that fires and is popped before a benign-looking payload.
    EarlyTrigger,
    /// A reducer followed by a truncated or garbled tail (intentionally malformed).
    CorruptedTail,
    /// Old-style INST/OBJ instantiation of a deny-listed callable.
    InstObj,
    /// `getattr(__import__('os'), 'system')(...)` built from reducers.
    GetattrChain,
}

impl Recipe {
    pub const BENIGN: [Recipe; 5] =
        [Recipe::StateDict, Recipe::NumpyArrays, Recipe::NestedConfig, Recipe::Estimator, Recipe::MemoGraph];
    pub const MALICIOUS: [Recipe; 5] =
        [Recipe::ReduceCall, Recipe::EarlyTrigger, Recipe::CorruptedTail, Recipe::InstObj, Recipe::GetattrChain];

    pub fn name(self) -> &'static str {
        match self {
            Recipe::StateDict => "state-dict",
            Recipe::NumpyArrays => "numpy-arrays",
            Recipe::NestedConfig => "nested-config",
            Recipe::Estimator => "estimator",
            Recipe::MemoGraph => "memo-graph",
            Recipe::ReduceCall => "reduce-call",
            Recipe::EarlyTrigger => "early-trigger",
            Recipe::CorruptedTail => "corrupted-tail",
            Recipe::InstObj => "inst-obj",
            Recipe::GetattrChain => "getattr-chain",
        }
    }

    pub fn label(self) -> Label {
        if Recipe::BENIGN.contains(&self) {
            Label::Benign
        } else {
            Label::Malicious
        }
    }

    /// Whether output is deliberately not a well-formed pickle.
    pub fn is_malformed(self) -> bool {
        self == Recipe::CorruptedTail
    }

    fn extension(self) -> &'static str {
        if self == Recipe::StateDict {
            "pt"
        } else {
            "pkl"
        }
    }
}

impl fmt::Display for Recipe {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Recipe {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, String> {
        Recipe::BENIGN
            .into_iter()
            .chain(Recipe::MALICIOUS)
            .find(|r| r.name() == s)
            .ok_or_else(|| format!("unknown recipe {s:?}"))
    }
}

/// The loading paths an exploit can be hidden behind.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(try_from = "String", into = "String")]
pub enum WrapPath {
    Pkl,
    Zip,
    ZipZip,
    Tar,
    Bz2,
    Gz,
    Zlib,
    Lz4,
    Lzma,
    Xz,
}

impl WrapPath {
    pub const ALL: [WrapPath; 10] = [
        WrapPath::Pkl,
        WrapPath::Zip,
        WrapPath::ZipZip,
        WrapPath::Tar,
        WrapPath::Bz2,
        WrapPath::Gz,
        WrapPath::Zlib,
        WrapPath::Lz4,
        WrapPath::Lzma,
        WrapPath::Xz,
    ];

    pub fn name(self) -> &'static str {
        match self {
            WrapPath::Pkl => "pkl",
            WrapPath::Zip => "zip",
            WrapPath::ZipZip => "zip-zip",
            WrapPath::Tar => "tar",
            WrapPath::Bz2 => "bz2",
            WrapPath::Gz => "gz",
            WrapPath::Zlib => "zlib",
            WrapPath::Lz4 => "lz4",
            WrapPath::Lzma => "lzma",
            WrapPath::Xz => "xz",
        }
    }

    /// Manifest form, outermost layer first: `zip>zip>pkl`.
    pub fn chain(self) -> String {
        match self {
            WrapPath::Pkl => "pkl".into(),
            WrapPath::ZipZip => "zip>zip>pkl".into(),
            w => format!("{}>pkl", w.name()),
        }
    }

    fn extension(self) -> &'static str {
        match self {
            WrapPath::ZipZip => "zip",
            w => w.name(),
        }
    }
}

impl fmt::Display for WrapPath {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for WrapPath {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, String> {
        WrapPath::ALL
            .into_iter()
            .find(|w| w.name() == s || w.chain() == s)
            .ok_or_else(|| format!("unknown wrap path {s:?}"))
    }
}

impl TryFrom<String> for WrapPath {
    type Error = String;

    fn try_from(s: String) -> Result<Self, String> {
        s.parse()
    }
}

impl From<WrapPath> for String {
    fn from(w: WrapPath) -> String {
        w.name().to_string()
    }
}

fn zip_one(name: &str, data: &[u8]) -> Vec<u8> {
    use zip::write::SimpleFileOptions;
    let mut z = zip::ZipWriter::new(Cursor::new(Vec::new()));
    let opts = SimpleFileOptions::default()
        .compression_method(zip::CompressionMethod::Deflated)
        .last_modified_time(zip::DateTime::default());
    z.start_file(name, opts).expect("in-memory zip");
    z.write_all(data).expect("in-memory zip");
    z.finish().expect("in-memory zip").into_inner()
}

/// Wrap a pickle in the containers of `path`. Output is deterministic.
pub fn wrap(pickle: &[u8], path: WrapPath) -> Vec<u8> {
    fn finish<W: Write>(mut w: W, data: &[u8]) -> W {
        w.write_all(data).expect("in-memory encoder");
        w
    }
    match path {
        WrapPath::Pkl => pickle.to_vec(),
        WrapPath::Zip => zip_one("model.pkl", pickle),
        WrapPath::ZipZip => zip_one("inner.zip", &zip_one("model.pkl", pickle)),
        WrapPath::Tar => {
            let mut b = tar::Builder::new(Vec::new());
            let mut h = tar::Header::new_ustar();
            h.set_size(pickle.len() as u64);
            h.set_mode(0o644);
            h.set_mtime(0);
            b.append_data(&mut h, "model.pkl", pickle).expect("in-memory tar");
            b.into_inner().expect("in-memory tar")
        }
        WrapPath::Bz2 => {
            finish(bzip2::write::BzEncoder::new(Vec::new(), bzip2::Compression::default()), pickle)
                .finish()
                .expect("in-memory bz2")
        }
        WrapPath::Gz => finish(
            flate2::GzBuilder::new().mtime(0).write(Vec::new(), flate2::Compression::default()),
            pickle,
        )
        .finish()
        .expect("in-memory gzip"),
        WrapPath::Zlib => finish(flate2::write::ZlibEncoder::new(Vec::new(), flate2::Compression::default()), pickle)
            .finish()
            .expect("in-memory zlib"),
        WrapPath::Lz4 => finish(lz4_flex::frame::FrameEncoder::new(Vec::new()), pickle).finish().expect("in-memory lz4"),
        WrapPath::Lzma => {
            let mut out = Vec::new();
            lzma_rs::lzma_compress(&mut Cursor::new(pickle), &mut out).expect("in-memory lzma");
            out
        }
        WrapPath::Xz => {
            let mut out = Vec::new();
            lzma_rs::xz_compress(&mut Cursor::new(pickle), &mut out).expect("in-memory xz");
            out
        }
    }
}

fn all_benign() -> Vec<Recipe> {
    Recipe::BENIGN.to_vec()
}

fn all_malicious() -> Vec<Recipe> {
    Recipe::MALICIOUS.to_vec()
}

/// Corpus description. Recipes are assigned round-robin, so repeating an
/// entry weights it.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GenSpec {
    pub seed: u64,
    pub n_benign: usize,
    pub n_malicious: usize,
    #[serde(default = "all_benign")]
    pub benign_recipes: Vec<Recipe>,
    #[serde(default = "all_malicious")]
    pub malicious_recipes: Vec<Recipe>,
    /// Each malicious sample is additionally emitted once per listed path.
    #[serde(default)]
    pub wrap_paths: Vec<WrapPath>,
}

impl GenSpec {
    pub fn new(seed: u64, n_benign: usize, n_malicious: usize) -> Self {
        GenSpec {
            seed,
            n_benign,
            n_malicious,
            benign_recipes: all_benign(),
            malicious_recipes: all_malicious(),
            wrap_paths: Vec::new(),
        }
    }

    pub fn from_json(text: &str) -> Result<Self, CorpusError> {
        let spec: GenSpec = serde_json::from_str(text)?;
        spec.validate()?;
        Ok(spec)
    }

    pub fn validate(&self) -> Result<(), CorpusError> {
        if self.n_benign + self.n_malicious < 2 {
            return Err(CorpusError::InvalidSpec("n_benign + n_malicious must be at least 2".into()));
        }
        if self.n_benign > 0 && self.benign_recipes.is_empty() {
            return Err(CorpusError::InvalidSpec("benign_recipes is empty".into()));
        }
        if self.n_malicious > 0 && self.malicious_recipes.is_empty() {
            return Err(CorpusError::InvalidSpec("malicious_recipes is empty".into()));
        }
        if let Some(r) = self.benign_recipes.iter().find(|r| r.label() != Label::Benign) {
            return Err(CorpusError::InvalidSpec(format!("{r} is not a benign recipe")));
        }
        if let Some(r) = self.malicious_recipes.iter().find(|r| r.label() != Label::Malicious) {
            return Err(CorpusError::InvalidSpec(format!("{r} is not a malicious recipe")));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ManifestRow {
    /// Relative to the manifest's directory, `/`-separated.
    pub path: String,
    pub label: Label,
    pub recipe: Recipe,
    pub wrap_chain: String,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct GeneratedSample {
    pub row: ManifestRow,
    pub bytes: Vec<u8>,
}

pub const MANIFEST_NAME: &str = "manifest.csv";

/// Build every sample of `spec` in memory, benign first, then each malicious
/// base followed by its wrapped variants.
pub fn generate_samples(spec: &GenSpec) -> Result<Vec<GeneratedSample>, CorpusError> {
    spec.validate()?;
    let mut master = ChaCha8Rng::seed_from_u64(spec.seed);
    let mut out = Vec::with_capacity(spec.n_benign + spec.n_malicious * (1 + spec.wrap_paths.len()));
    for i in 0..spec.n_benign {
        let recipe = spec.benign_recipes[i % spec.benign_recipes.len()];
        let mut rng = ChaCha8Rng::seed_from_u64(master.random());
        let bytes = build(recipe, &mut rng);
        let row = ManifestRow {
            path: format!("benign/b{i:05}-{recipe}.{}", recipe.extension()),
            label: Label::Benign,
            recipe,
            wrap_chain: if recipe == Recipe::StateDict { "pytorch-zip>pkl".into() } else { "pkl".into() },
        };
        out.push(GeneratedSample { row, bytes });
    }
    for i in 0..spec.n_malicious {
        let recipe = spec.malicious_recipes[i % spec.malicious_recipes.len()];
        let mut rng = ChaCha8Rng::seed_from_u64(master.random());
        let bytes = build(recipe, &mut rng);
        for &w in &spec.wrap_paths {
            let row = ManifestRow {
                path: format!("wrapped/m{i:05}/{}.{}", w.name(), w.extension()),
                label: Label::Malicious,
                recipe,
                wrap_chain: w.chain(),
            };
            out.push(GeneratedSample { row, bytes: wrap(&bytes, w) });
        }
        let row = ManifestRow {
            path: format!("malicious/m{i:05}-{recipe}.pkl"),
            label: Label::Malicious,
            recipe,
            wrap_chain: "pkl".into(),
        };
        // base before its variants
        let at = out.len() - spec.wrap_paths.len();
        out.insert(at, GeneratedSample { row, bytes });
    }
    Ok(out)
}

/// Write every sample under `out_dir` plus `manifest.csv`.
pub fn generate(spec: &GenSpec, out_dir: &Path) -> Result<Vec<ManifestRow>, CorpusError> {
    let samples = generate_samples(spec)?;
    for s in &samples {
        let path = out_dir.join(&s.row.path);
        if let Some(parent) = path.parent() {
            fs::create_dir_all(parent).map_err(io_err(parent))?;
        }
        fs::write(&path, &s.bytes).map_err(io_err(&path))?;
    }
    let rows: Vec<ManifestRow> = samples.into_iter().map(|s| s.row).collect();
    let manifest = out_dir.join(MANIFEST_NAME);
    let file = fs::File::create(&manifest).map_err(io_err(&manifest))?;
    write_manifest(&rows, file)?;
    Ok(rows)
}

pub fn write_manifest<W: Write>(rows: &[ManifestRow], out: W) -> Result<(), CorpusError> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record(["path", "label", "recipe", "wrap_chain"])?;
    for r in rows {
        w.write_record([r.path.as_str(), &r.label.to_string(), r.recipe.name(), &r.wrap_chain])?;
    }
    w.flush().map_err(|e| CorpusError::Csv(e.into()))?;
    Ok(())
}

pub fn read_manifest<R: std::io::Read>(input: R) -> Result<Vec<ManifestRow>, CorpusError> {
    let mut r = csv::Reader::from_reader(input);
    let headers = r.headers()?.clone();
    if headers.iter().collect::<Vec<_>>() != ["path", "label", "recipe", "wrap_chain"] {
        return Err(CorpusError::InvalidManifest(format!("unexpected header {:?}", headers)));
    }
    let mut rows = Vec::new();
    for rec in r.records() {
        let rec = rec?;
        let bad = |e: String| CorpusError::InvalidManifest(format!("line {}: {e}", rec.position().map_or(0, |p| p.line())));
        rows.push(ManifestRow {
            path: rec[0].to_string(),
            label: rec[1].parse().map_err(bad)?,
            recipe: rec[2].parse().map_err(bad)?,
            wrap_chain: rec[3].to_string(),
        });
    }
    Ok(rows)
}

/// Load a manifest and compute one file-level feature vector per row.
/// Rows whose file has no decodable pickle are skipped and returned.
pub fn load_corpus(manifest: &Path, limits: &Limits) -> Result<(LabeledCorpus, Vec<String>), CorpusError> {
    let file = fs::File::open(manifest).map_err(io_err(manifest))?;
    let rows = read_manifest(file)?;
    let base = manifest.parent().unwrap_or(Path::new("."));
    let mut samples = Vec::with_capacity(rows.len());
    let mut skipped = Vec::new();
    for row in rows {
        let path = base.join(&row.path);
        let bytes = fs::read(&path).map_err(io_err(&path))?;
        match crate::scan::file_vector(&bytes, limits) {
            Ok(vector) => samples.push(Sample { vector, label: row.label, source: row.path }),
            Err(e) => skipped.push(format!("{}: {e}", row.path)),
        }
    }
    Ok((LabeledCorpus::new(samples), skipped))
}

/// In-memory counterpart of [`load_corpus`].
pub fn corpus_from_samples(samples: &[GeneratedSample], limits: &Limits) -> LabeledCorpus {
    LabeledCorpus::new(
        samples
            .iter()
            .filter_map(|s| {
                crate::scan::file_vector(&s.bytes, limits)
                    .ok()
                    .map(|vector| Sample { vector, label: s.row.label, source: s.row.path.clone() })
            })
            .collect(),
    )
}

/// One sample of `recipe` from its own seed.
pub fn sample(recipe: Recipe, seed: u64) -> Vec<u8> {
    build(recipe, &mut ChaCha8Rng::seed_from_u64(seed))
}

/// Build one sample of `recipe`.
pub fn build(recipe: Recipe, rng: &mut ChaCha8Rng) -> Vec<u8> {
    match recipe {
        Recipe::StateDict => state_dict(rng),
        Recipe::NumpyArrays => {
            let proto = library_protocol(rng);
            dump(&numpy_arrays(rng), proto)
        }
        Recipe::NestedConfig => {
            let proto = library_protocol(rng);
            dump(&config(rng), proto)
        }
        Recipe::Estimator => {
            let proto = library_protocol(rng);
            dump(&estimator(rng), proto)
        }
        Recipe::MemoGraph => {
            let proto = library_protocol(rng);
            dump(&memo_graph(rng), proto)
        }
        Recipe::ReduceCall => {
            let proto = rng.random_range(0..=5);
            let payload = deny_call(rng);
            let obj = if rng.random_bool(0.5) { payload } else { inject(rng, payload) };
            dump(&obj, proto)
        }
        Recipe::EarlyTrigger => {
            let proto = rng.random_range(2..=5);
            let payload = if rng.random_bool(0.7) { deny_call(rng) } else { getattr_chain(rng) };
            let host = small_host(rng);
            dump(&Obj::Sequence(vec![payload, host]), proto)
        }
        Recipe::CorruptedTail => corrupted_tail(rng),
        Recipe::InstObj => {
            let proto = rng.random_range(0..=2);
            let payload = inst_payload(rng);
            let obj = if rng.random_bool(0.5) { payload } else { inject(rng, payload) };
            dump(&obj, proto)
        }
        Recipe::GetattrChain => {
            let proto = rng.random_range(0..=5);
            let payload = getattr_chain(rng);
            let obj = if rng.random_bool(0.5) { payload } else { inject(rng, payload) };
            dump(&obj, proto)
        }
    }
}

/// Protocols written by current serializers: 4 is the interpreter default,
/// 5 comes from joblib-style dumpers.
fn library_protocol(rng: &mut ChaCha8Rng) -> u8 {
    if rng.random_bool(0.7) {
        4
    } else {
        5
    }
}

fn pick<'a, T>(rng: &mut ChaCha8Rng, items: &'a [T]) -> &'a T {
    &items[rng.random_range(0..items.len() as u64) as usize]
}

fn random_bytes(rng: &mut ChaCha8Rng, n: usize) -> Vec<u8> {
    let mut v = vec![0u8; n];
    rng.fill(&mut v[..]);
    v
}

const LAYER_NAMES: [&str; 8] = ["encoder", "decoder", "layers", "blocks", "conv", "fc", "embed", "head"];
const PARAM_NAMES: [&str; 6] = ["weight", "bias", "running_mean", "running_var", "scale", "proj"];
const WORDS: [&str; 16] = [
    "lr", "epochs", "batch_size", "dropout", "hidden", "optimizer", "adam", "relu", "name", "loss", "accuracy",
    "momentum", "tokens", "vocab", "seed", "schedule",
];

fn shape(rng: &mut ChaCha8Rng) -> Vec<i64> {
    let dims = rng.random_range(1..=2);
    (0..dims).map(|_| rng.random_range(1..=24)).collect()
}

fn ordered_dict(items: Vec<(Obj, Obj)>) -> Obj {
    Obj::DictItems(Box::new(Obj::call("collections", "OrderedDict", vec![])), items)
}

fn state_dict(rng: &mut ChaCha8Rng) -> Vec<u8> {
    const STORAGES: [(&str, usize); 4] =
        [("FloatStorage", 4), ("HalfStorage", 2), ("LongStorage", 8), ("BFloat16Storage", 2)];
    let prefix = *pick(rng, &["archive", "model", "checkpoint"]);
    let n = rng.random_range(6..=40);
    let layer = *pick(rng, &LAYER_NAMES);
    let mut items = Vec::with_capacity(n);
    let mut storages = Vec::with_capacity(n);
    for i in 0..n {
        let (storage, elem) = *pick(rng, &STORAGES);
        let shape = shape(rng);
        let numel: i64 = shape.iter().product();
        let mut stride = vec![1i64; shape.len()];
        for d in (0..shape.len().saturating_sub(1)).rev() {
            stride[d] = stride[d + 1] * shape[d + 1];
        }
        let key = i.to_string();
        let pid = Obj::Tuple(vec![
            Obj::str("storage"),
            Obj::global("torch", storage),
            Obj::str(key.as_str()),
            Obj::str("cpu"),
            Obj::Int(numel),
        ]);
        let tensor = Obj::call(
            "torch._utils",
            "_rebuild_tensor_v2",
            vec![
                Obj::Persistent(Box::new(pid)),
                Obj::Int(0),
                Obj::Tuple(shape.into_iter().map(Obj::Int).collect()),
                Obj::Tuple(stride.into_iter().map(Obj::Int).collect()),
                Obj::Bool(false),
                Obj::call("collections", "OrderedDict", vec![]),
            ],
        );
        let name = format!("{layer}.{}.{}", i / 2, pick(rng, &PARAM_NAMES));
        items.push((Obj::Str(name), tensor));
        storages.push((key, random_bytes(rng, numel as usize * elem)));
    }
    let metadata = ordered_dict(vec![(
        Obj::str(""),
        Obj::Dict(vec![(Obj::str("version"), Obj::Int(1))]),
    )]);
    let root = Obj::Build(
        Box::new(ordered_dict(items)),
        Box::new(Obj::Dict(vec![(Obj::str("_metadata"), metadata)])),
    );
    let data_pkl = dump(&root, 2);

    use zip::write::SimpleFileOptions;
    let opts = SimpleFileOptions::default()
        .compression_method(zip::CompressionMethod::Stored)
        .last_modified_time(zip::DateTime::default());
    let mut z = zip::ZipWriter::new(Cursor::new(Vec::new()));
    let mut put = |name: String, data: &[u8]| {
        z.start_file(name, opts).expect("in-memory zip");
        z.write_all(data).expect("in-memory zip");
    };
    put(format!("{prefix}/data.pkl"), &data_pkl);
    put(format!("{prefix}/byteorder"), b"little");
    for (key, data) in &storages {
        put(format!("{prefix}/data/{key}"), data);
    }
    put(format!("{prefix}/version"), b"3\n");
    z.finish().expect("in-memory zip").into_inner()
}

fn numpy_array(rng: &mut ChaCha8Rng, dtype: &Rc<Obj>, elem: usize, max_elems: i64) -> Obj {
    let dims = rng.random_range(1..=3);
    let mut shape: Vec<i64> = (0..dims).map(|_| rng.random_range(1..=32)).collect();
    while shape.iter().product::<i64>() > max_elems {
        let d = shape.iter().enumerate().max_by_key(|(_, &s)| s).map(|(i, _)| i).unwrap_or(0);
        shape[d] = (shape[d] / 2).max(1);
    }
    let numel: i64 = shape.iter().product();
    let base = Obj::call(
        "numpy.core.multiarray",
        "_reconstruct",
        vec![Obj::global("numpy", "ndarray"), Obj::Tuple(vec![Obj::Int(0)]), Obj::Bytes(b"b".to_vec())],
    );
    let state = Obj::Tuple(vec![
        Obj::Int(1),
        Obj::Tuple(shape.into_iter().map(Obj::Int).collect()),
        Obj::Shared(dtype.clone()),
        Obj::Bool(false),
        Obj::Bytes(random_bytes(rng, numel as usize * elem)),
    ]);
    Obj::Build(Box::new(base), Box::new(state))
}

fn numpy_dtype(rng: &mut ChaCha8Rng) -> (Rc<Obj>, usize) {
    let (code, elem) = *pick(rng, &[("f8", 8usize), ("f4", 4), ("i8", 8), ("i4", 4), ("u1", 1)]);
    let order = if elem == 1 { "|" } else { "<" };
    let dtype = Obj::Build(
        Box::new(Obj::call("numpy", "dtype", vec![Obj::str(code), Obj::Bool(false), Obj::Bool(true)])),
        Box::new(Obj::Tuple(vec![
            Obj::Int(3),
            Obj::str(order),
            Obj::None,
            Obj::None,
            Obj::None,
            Obj::Int(-1),
            Obj::Int(-1),
            Obj::Int(0),
        ])),
    );
    (Rc::new(dtype), elem)
}

fn numpy_arrays(rng: &mut ChaCha8Rng) -> Obj {
    let (dtype, elem) = numpy_dtype(rng);
    let n = rng.random_range(2..=12);
    let mut items = Vec::with_capacity(n + 1);
    for i in 0..n {
        let key = format!("{}_{i}", pick(rng, &PARAM_NAMES));
        items.push((Obj::Str(key), numpy_array(rng, &dtype, elem, 8192)));
    }
    Obj::Dict(items)
}

fn leaf(rng: &mut ChaCha8Rng) -> Obj {
    match rng.random_range(0..6) {
        0 => Obj::Int(rng.random_range(-1000..100_000)),
        1 => Obj::Float(rng.random_range(-10.0..10.0)),
        2 => Obj::Str(format!("{}_{}", pick(rng, &WORDS), rng.random_range(0..100))),
        3 => Obj::Bool(rng.random_bool(0.5)),
        4 => Obj::None,
        _ => Obj::Float(f64::from(rng.random_range(1..1000u32)) * 1e-4),
    }
}

fn nested(rng: &mut ChaCha8Rng, depth: usize) -> Obj {
    let width = rng.random_range(1..=6);
    let container = if depth >= 3 { 3 } else { rng.random_range(0..4) };
    let child = |rng: &mut ChaCha8Rng| if depth < 3 && rng.random_bool(0.3) { nested(rng, depth + 1) } else { leaf(rng) };
    match container {
        0 => Obj::List((0..width).map(|_| child(rng)).collect()),
        1 => Obj::Tuple((0..width).map(|_| child(rng)).collect()),
        _ => Obj::Dict(
            (0..width)
                .map(|i| (Obj::Str(format!("{}{i}", pick(rng, &WORDS))), child(rng)))
                .collect(),
        ),
    }
}

/// A hyperparameter or training-arguments dict.
fn config(rng: &mut ChaCha8Rng) -> Obj {
    fn scalar(rng: &mut ChaCha8Rng) -> Obj {
        match rng.random_range(0..20) {
            0..=7 => Obj::Float(f64::from(rng.random_range(1..10_000u32)) * 1e-4),
            8..=11 => Obj::Int(rng.random_range(0..5000)),
            12..=14 => Obj::Str(format!("{}_{}", pick(rng, &WORDS), rng.random_range(0..10))),
            15..=17 => Obj::Bool(rng.random_bool(0.5)),
            _ => Obj::None,
        }
    }
    let n = rng.random_range(16..=64);
    let items = (0..n)
        .map(|i| {
            let key = Obj::Str(format!("{}_{i}", pick(rng, &WORDS)));
            let value = match rng.random_range(0..10) {
                0 => Obj::List((0..rng.random_range(2..=8)).map(|_| Obj::Int(rng.random_range(1..1024))).collect()),
                1 => Obj::Dict(
                    (0..rng.random_range(3..=10)).map(|j| (Obj::Str(format!("{}{j}", pick(rng, &WORDS))), scalar(rng))).collect(),
                ),
                _ => scalar(rng),
            };
            (key, value)
        })
        .collect();
    Obj::Dict(items)
}

fn estimator(rng: &mut ChaCha8Rng) -> Obj {
    let (module, name) = *pick(
        rng,
        &[
            ("sklearn.linear_model._logistic", "LogisticRegression"),
            ("sklearn.preprocessing._data", "StandardScaler"),
            ("sklearn.svm._classes", "LinearSVC"),
            ("sklearn.decomposition._pca", "PCA"),
        ],
    );
    let (dtype, elem) = numpy_dtype(rng);
    let mut state = vec![
        (Obj::str("n_features_in_"), Obj::Int(rng.random_range(2..64))),
        (Obj::str("tol"), Obj::Float(1e-4)),
        (Obj::str("random_state"), if rng.random_bool(0.5) { Obj::None } else { Obj::Int(rng.random_range(0..100)) }),
        (Obj::str("verbose"), Obj::Int(0)),
    ];
    for attr in ["coef_", "intercept_", "classes_", "mean_", "scale_"] {
        if rng.random_bool(0.6) {
            state.push((Obj::str(attr), numpy_array(rng, &dtype, elem, 512)));
        }
    }
    state.push((Obj::str("_sklearn_version"), Obj::Str(format!("1.{}.{}", rng.random_range(0..6), rng.random_range(0..3)))));
    let obj = Obj::NewObj { module: module.into(), name: name.into(), args: vec![], kwargs: vec![] };
    Obj::Build(Box::new(obj), Box::new(Obj::Dict(state)))
}

fn memo_graph(rng: &mut ChaCha8Rng) -> Obj {
    let n = rng.random_range(4..=40);
    let nodes: Vec<Rc<Obj>> = (0..n)
        .map(|i| {
            Rc::new(Obj::Dict(vec![
                (Obj::str("id"), Obj::Int(i as i64)),
                (Obj::str("label"), Obj::Str(format!("{}_{i}", pick(rng, &WORDS)))),
            ]))
        })
        .collect();
    let names: Vec<Rc<Obj>> = (0..n.min(8)).map(|i| Rc::new(Obj::Str(format!("tok{i}")))).collect();
    let edges = (0..rng.random_range(n..=3 * n))
        .map(|_| {
            let a = nodes[rng.random_range(0..n as u64) as usize].clone();
            let b = nodes[rng.random_range(0..n as u64) as usize].clone();
            Obj::Tuple(vec![Obj::Shared(a), Obj::Shared(b)])
        })
        .collect();
    let seq = (0..rng.random_range(10..=80))
        .map(|_| Obj::Shared(names[rng.random_range(0..names.len() as u64) as usize].clone()))
        .collect();
    Obj::Dict(vec![
        (Obj::str("nodes"), Obj::List(nodes.iter().cloned().map(Obj::Shared).collect())),
        (Obj::str("edges"), Obj::List(edges)),
        (Obj::str("sequence"), Obj::List(seq)),
    ])
}

fn command(rng: &mut ChaCha8Rng) -> String {
    match rng.random_range(0..3) {
        0 => "echo pwned".into(),
        1 => format!("echo {:08x}", rng.random::<u32>()),
        _ => "echo hello > /dev/null".into(),
    }
}

/// A deny-listed callable applied to inert arguments.
fn deny_call(rng: &mut ChaCha8Rng) -> Obj {
    let cmd = command(rng);
    match rng.random_range(0..9) {
        0 => Obj::call("os", "system", vec![Obj::Str(cmd)]),
        1 => Obj::call("posix", "system", vec![Obj::Str(cmd)]),
        2 => Obj::call("nt", "system", vec![Obj::Str(cmd)]),
        3 => Obj::call("subprocess", "Popen", vec![Obj::List(cmd.split(' ').map(Obj::str).collect())]),
        4 => Obj::call("subprocess", "check_output", vec![Obj::Str(cmd)]),
        5 => Obj::call("builtins", "eval", vec![Obj::Str(format!("__import__('os').system({cmd:?})"))]),
        6 => Obj::call("builtins", "exec", vec![Obj::Str(format!("import os\nos.system({cmd:?})"))]),
        7 => Obj::call("webbrowser", "open", vec![Obj::str("http://127.0.0.1:8000/")]),
        _ => Obj::call("socket", "create_connection", vec![Obj::Tuple(vec![Obj::str("127.0.0.1"), Obj::Int(4444)])]),
    }
}

fn inst_payload(rng: &mut ChaCha8Rng) -> Obj {
    let cmd = command(rng);
    let (module, name) = *pick(rng, &[("os", "system"), ("posix", "system"), ("subprocess", "check_output")]);
    Obj::Inst { module: module.into(), name: name.into(), args: vec![Obj::Str(cmd)] }
}

fn getattr_chain(rng: &mut ChaCha8Rng) -> Obj {
    let module = if rng.random_bool(0.7) {
        Obj::call("builtins", "__import__", vec![Obj::str("os")])
    } else {
        Obj::call("importlib", "import_module", vec![Obj::str("os")])
    };
    let func = Obj::call("builtins", "getattr", vec![module, Obj::str("system")]);
    Obj::Reduce(Box::new(func), vec![Obj::Str(command(rng))])
}

/// A small object that looks like ordinary model metadata.
fn small_host(rng: &mut ChaCha8Rng) -> Obj {
    if rng.random_bool(0.5) {
        nested(rng, 2)
    } else {
        let (dtype, elem) = numpy_dtype(rng);
        Obj::Dict(vec![(Obj::str("weight"), numpy_array(rng, &dtype, elem, 64))])
    }
}

/// Hide a payload as one value inside a small container.
fn inject(rng: &mut ChaCha8Rng, payload: Obj) -> Obj {
    let mut items: Vec<(Obj, Obj)> =
        (0..rng.random_range(1..=4)).map(|i| (Obj::Str(format!("{}{i}", pick(rng, &WORDS))), leaf(rng))).collect();
    let at = rng.random_range(0..=items.len() as u64) as usize;
    items.insert(at, (Obj::str("__state__"), payload));
    Obj::Dict(items)
}

fn corrupted_tail(rng: &mut ChaCha8Rng) -> Vec<u8> {
    let proto = rng.random_range(0..=5);
    let payload = deny_call(rng);
    let host = small_host(rng);
    let mut bytes = dump(&Obj::Sequence(vec![payload, host]), proto);
    let d = crate::disasm::disassemble(&bytes).expect("non-empty");
    let reduce = d.events.iter().find(|e| e.mnemonic() == "REDUCE").map(|e| e.offset).expect("payload has REDUCE");
    let cut = rng.random_range(reduce as u64 + 1..bytes.len() as u64 - 1) as usize;
    bytes.truncate(cut);
    if rng.random_bool(0.5) {
        let n = rng.random_range(1..=8);
        let junk = random_bytes(rng, n);
        let mut garbled = bytes.clone();
        garbled.extend_from_slice(&junk);
        if !crate::disasm::disassemble(&garbled).expect("non-empty").well_formed {
            bytes = garbled;
        }
    }
    bytes
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::decompiler::extract_imports;
    use crate::disasm::disassemble_all;
    use crate::scan::{analyze, ImportPolicy};

    const RCE: [&str; 6] = ["GLOBAL", "STACK_GLOBAL", "INST", "OBJ", "NEWOBJ", "REDUCE"];

    fn candidates(bytes: &[u8]) -> Vec<Vec<u8>> {
        crate::unwrap::unwrap(bytes, &Limits::default())
            .unwrap()
            .candidates
            .into_iter()
            .map(|c| c.bytes.to_vec())
            .collect()
    }

    #[test]
    fn recipe_invariants() {
        let policy = ImportPolicy::default();
        for recipe in Recipe::BENIGN.into_iter().chain(Recipe::MALICIOUS) {
            for seed in 0..25 {
                let bytes = build(recipe, &mut ChaCha8Rng::seed_from_u64(seed));
                let cands = candidates(&bytes);
                assert_eq!(cands.len(), 1, "{recipe} seed {seed}");
                let segs = disassemble_all(&cands[0]).unwrap();
                assert_eq!(segs[0].well_formed, !recipe.is_malformed(), "{recipe} seed {seed}: {:?}", segs[0].malform_reason);
                let imports: Vec<(String, String)> = segs.iter().flat_map(extract_imports).collect();
                if recipe.label() == Label::Malicious {
                    assert!(segs[0].mnemonics().iter().any(|m| RCE.contains(m)), "{recipe} seed {seed}");
                    assert!(imports.iter().any(|(m, n)| policy.is_denied(m, n)), "{recipe} seed {seed}: {imports:?}");
                } else {
                    assert!(!imports.iter().any(|(m, n)| policy.is_denied(m, n)), "{recipe} seed {seed}: {imports:?}");
                }
            }
        }
    }

    #[test]
    fn state_dict_is_pytorch_zip() {
        let bytes = build(Recipe::StateDict, &mut ChaCha8Rng::seed_from_u64(1));
        assert_eq!(crate::unwrap::sniff(&bytes).unwrap(), crate::unwrap::ContainerKind::PytorchZip);
        let a = analyze(&candidates(&bytes)[0]).unwrap();
        assert!(a.events().any(|e| e.mnemonic() == "BINPERSID"));
    }

    #[test]
    fn wrapped_variants_unwrap_to_the_same_pickle() {
        let base = build(Recipe::ReduceCall, &mut ChaCha8Rng::seed_from_u64(9));
        for w in WrapPath::ALL {
            let wrapped = wrap(&base, w);
            let u = crate::unwrap::unwrap(&wrapped, &Limits::default()).unwrap();
            assert_eq!(u.candidates.len(), 1, "{w}");
            assert_eq!(&*u.candidates[0].bytes, &base[..], "{w}");
            let hops = u.candidates[0].origin_chain.len();
            assert_eq!(hops + 1, w.chain().split('>').count(), "{w}: {}", u.candidates[0].chain_string());
        }
    }

    #[test]
    fn trivial_spec() {
        let spec = GenSpec {
            benign_recipes: vec![Recipe::NestedConfig],
            malicious_recipes: vec![Recipe::ReduceCall],
            ..GenSpec::new(5, 1, 1)
        };
        let s = generate_samples(&spec).unwrap();
        assert_eq!(s.len(), 2);
        assert_eq!((s[0].row.label, s[0].row.recipe), (Label::Benign, Recipe::NestedConfig));
        assert_eq!((s[1].row.label, s[1].row.recipe), (Label::Malicious, Recipe::ReduceCall));
    }

    #[test]
    fn wrap_paths_add_ten_variants_per_malicious_base() {
        let spec = GenSpec { wrap_paths: WrapPath::ALL.to_vec(), ..GenSpec::new(2, 3, 2) };
        let s = generate_samples(&spec).unwrap();
        assert_eq!(s.len(), 3 + 2 * 11);
        let chains: Vec<&str> = s[4..14].iter().map(|x| x.row.wrap_chain.as_str()).collect();
        assert_eq!(chains, WrapPath::ALL.map(|w| w.chain()).iter().map(String::as_str).collect::<Vec<_>>());
        assert!(s[3].row.path.starts_with("malicious/m00000"));
    }

    #[test]
    fn deterministic_and_seed_sensitive() {
        let spec = GenSpec { wrap_paths: vec![WrapPath::Gz, WrapPath::ZipZip], ..GenSpec::new(11, 12, 6) };
        let a = generate_samples(&spec).unwrap();
        assert_eq!(a, generate_samples(&spec).unwrap());
        let b = generate_samples(&GenSpec { seed: 12, ..spec }).unwrap();
        assert_ne!(a, b);
    }

    #[test]
    fn manifest_round_trip_on_disk() {
        let dir = tempfile::tempdir().unwrap();
        let spec = GenSpec { wrap_paths: vec![WrapPath::Tar], ..GenSpec::new(3, 4, 2) };
        let rows = generate(&spec, dir.path()).unwrap();
        let text = fs::read_to_string(dir.path().join(MANIFEST_NAME)).unwrap();
        assert!(text.starts_with("path,label,recipe,wrap_chain\n"));
        assert_eq!(read_manifest(text.as_bytes()).unwrap(), rows);
        let (corpus, skipped) = load_corpus(&dir.path().join(MANIFEST_NAME), &Limits::default()).unwrap();
        assert!(skipped.is_empty(), "{skipped:?}");
        assert_eq!((corpus.count(Label::Benign), corpus.count(Label::Malicious)), (4, 4));
    }

    #[test]
    fn spec_json() {
        let spec = GenSpec::from_json(r#"{"seed": 1, "n_benign": 2, "n_malicious": 0, "wrap_paths": ["zip-zip", "gz>pkl"]}"#).unwrap();
        assert_eq!(spec.wrap_paths, [WrapPath::ZipZip, WrapPath::Gz]);
        assert_eq!(spec.benign_recipes, Recipe::BENIGN);
        assert!(GenSpec::from_json(r#"{"seed": 1, "n_benign": 1, "n_malicious": 0}"#).is_err());
        assert!(GenSpec::from_json(r#"{"seed": 1, "n_benign": 2, "n_malicious": 0, "benign_recipes": ["reduce-call"]}"#).is_err());
        assert!(GenSpec::from_json(r#"{"seed": 1, "n_benign": 2, "n_malicious": 0, "extra": 1}"#).is_err());
    }
}
