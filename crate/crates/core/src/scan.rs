//! File scanning: unwrap, disassemble, featurize, score, and fuse with the
//! import deny list.
//!
//! A file is malicious when any embedded pickle is flagged by the model or
//! (unless `ml_only`) imports a denied callable. It is suspicious when nothing
//! is malicious but a pickle is malformed, carries opcodes the model never saw,
//! imports a dual-use callable, or the unwrapper hit a limit or a corrupt
//! layer.

use std::collections::BTreeSet;
use std::fmt;
use std::fs;
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::{Path, PathBuf};
use std::str::FromStr;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::decompiler::extract_imports;
use crate::disasm::{count_all, disassemble_all, Disassembly, MalformReason, OpcodeEvent};
use crate::features::{extract_segments, FeatureVector};
use crate::opcodes::VOCABULARY_SIZE;
use crate::ml::{predict, TrainedModel, Verdict};
use crate::unwrap::{unwrap, Limits, OriginStep, UnwrapError};

#[derive(Debug, Error)]
pub enum PolicyError {
    #[error("{module}.{name} is both allowed and explicitly denied")]
    Conflict { module: String, name: String },
    #[error("bad pattern {0:?}")]
    BadPattern(String),
    #[error("policy json: {0}")]
    Json(#[from] serde_json::Error),
    #[error("io: {0}")]
    Io(#[from] std::io::Error),
}

/// `module` matches itself and its submodules; `name: None` matches any name.
#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
pub struct ImportPattern {
    pub module: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub name: Option<String>,
}

impl ImportPattern {
    pub fn any(module: &str) -> Self {
        ImportPattern { module: module.into(), name: None }
    }

    pub fn exact(module: &str, name: &str) -> Self {
        ImportPattern { module: module.into(), name: Some(name.into()) }
    }

    pub fn matches(&self, module: &str, name: &str) -> bool {
        let module_ok = module == self.module
            || module.strip_prefix(self.module.as_str()).is_some_and(|rest| rest.starts_with('.'));
        module_ok && self.name.as_deref().is_none_or(|n| n == name)
    }
}

impl FromStr for ImportPattern {
    type Err = PolicyError;

    /// `module.*` or `module.name`, split at the last dot.
    fn from_str(s: &str) -> Result<Self, PolicyError> {
        let s = s.trim();
        if let Some(m) = s.strip_suffix(".*") {
            if m.is_empty() {
                return Err(PolicyError::BadPattern(s.into()));
            }
            return Ok(ImportPattern::any(m));
        }
        match s.rsplit_once('.') {
            Some((m, n)) if !m.is_empty() && !n.is_empty() => Ok(ImportPattern::exact(m, n)),
            _ => Err(PolicyError::BadPattern(s.into())),
        }
    }
}

impl fmt::Display for ImportPattern {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}.{}", self.module, self.name.as_deref().unwrap_or("*"))
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ImportPolicy {
    pub deny: Vec<ImportPattern>,
    pub allow: BTreeSet<(String, String)>,
    pub dual_use: Vec<ImportPattern>,
}

const DENY_MODULES: [&str; 12] =
    ["os", "posix", "nt", "subprocess", "sys", "socket", "shutil", "runpy", "importlib", "pty", "webbrowser", "commands"];
const DENY_BUILTINS: [&str; 4] = ["eval", "exec", "compile", "__import__"];

impl Default for ImportPolicy {
    fn default() -> Self {
        let mut deny: Vec<ImportPattern> = DENY_MODULES.iter().map(|m| ImportPattern::any(m)).collect();
        // protocol 0-2 pickles name the builtins module `__builtin__`
        for m in ["builtins", "__builtin__"] {
            deny.extend(DENY_BUILTINS.iter().map(|n| ImportPattern::exact(m, n)));
        }
        let dual_use = vec![
            ImportPattern::exact("builtins", "getattr"),
            ImportPattern::exact("__builtin__", "getattr"),
            ImportPattern::exact("functools", "partial"),
        ];
        ImportPolicy { deny, allow: BTreeSet::new(), dual_use }
    }
}

#[derive(Debug, Deserialize)]
#[serde(untagged)]
enum PatternSpec {
    Text(String),
    Object(ImportPattern),
}

impl PatternSpec {
    fn resolve(self) -> Result<ImportPattern, PolicyError> {
        match self {
            PatternSpec::Text(s) => s.parse(),
            PatternSpec::Object(p) => Ok(p),
        }
    }
}

/// On-disk policy. Lists extend the defaults unless `replace_defaults` is set.
#[derive(Debug, Default, Deserialize)]
#[serde(deny_unknown_fields)]
struct PolicyFile {
    #[serde(default)]
    replace_defaults: bool,
    #[serde(default)]
    deny: Vec<PatternSpec>,
    #[serde(default)]
    allow: Vec<PatternSpec>,
    #[serde(default)]
    dual_use: Vec<PatternSpec>,
}

impl ImportPolicy {
    pub fn new(
        deny: Vec<ImportPattern>,
        allow: impl IntoIterator<Item = (String, String)>,
        dual_use: Vec<ImportPattern>,
    ) -> Result<Self, PolicyError> {
        let policy = ImportPolicy { deny, allow: allow.into_iter().collect(), dual_use };
        policy.check()?;
        Ok(policy)
    }

    /// Allowed pairs may carve exceptions out of wildcard denies but may not
    /// restate an exact deny entry.
    fn check(&self) -> Result<(), PolicyError> {
        for (m, n) in &self.allow {
            if self.deny.iter().any(|d| d.name.as_deref() == Some(n.as_str()) && d.module == *m) {
                return Err(PolicyError::Conflict { module: m.clone(), name: n.clone() });
            }
        }
        Ok(())
    }

    pub fn from_json(text: &str) -> Result<Self, PolicyError> {
        let file: PolicyFile = serde_json::from_str(text)?;
        let mut policy = if file.replace_defaults {
            ImportPolicy { deny: Vec::new(), allow: BTreeSet::new(), dual_use: Vec::new() }
        } else {
            ImportPolicy::default()
        };
        for d in file.deny {
            policy.deny.push(d.resolve()?);
        }
        for d in file.dual_use {
            policy.dual_use.push(d.resolve()?);
        }
        for a in file.allow {
            match a.resolve()? {
                ImportPattern { module, name: Some(name) } => {
                    policy.allow.insert((module, name));
                }
                p => return Err(PolicyError::BadPattern(format!("allow entries must be exact pairs: {p}"))),
            }
        }
        policy.check()?;
        Ok(policy)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self, PolicyError> {
        Self::from_json(&fs::read_to_string(path)?)
    }

    fn allowed(&self, module: &str, name: &str) -> bool {
        self.allow.iter().any(|(m, n)| m == module && n == name)
    }

    pub fn is_denied(&self, module: &str, name: &str) -> bool {
        !self.allowed(module, name) && self.deny.iter().any(|p| p.matches(module, name))
    }

    pub fn is_dual_use(&self, module: &str, name: &str) -> bool {
        !self.allowed(module, name) && self.dual_use.iter().any(|p| p.matches(module, name))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum RuleVerdict {
    Benign,
    Suspicious,
    Malicious,
}

impl fmt::Display for RuleVerdict {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            RuleVerdict::Benign => "benign",
            RuleVerdict::Suspicious => "suspicious",
            RuleVerdict::Malicious => "malicious",
        })
    }
}

pub fn rule_scan(imports: &[(String, String)], policy: &ImportPolicy) -> RuleVerdict {
    let mut verdict = RuleVerdict::Benign;
    for (m, n) in imports {
        if policy.is_denied(m, n) {
            return RuleVerdict::Malicious;
        }
        if policy.is_dual_use(m, n) {
            verdict = RuleVerdict::Suspicious;
        }
    }
    verdict
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum FileVerdict {
    Benign,
    Suspicious,
    Malicious,
    ScanError,
}

impl fmt::Display for FileVerdict {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            FileVerdict::Benign => "benign",
            FileVerdict::Suspicious => "suspicious",
            FileVerdict::Malicious => "malicious",
            FileVerdict::ScanError => "scan-error",
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CandidateReport {
    pub origin_chain: Vec<OriginStep>,
    pub well_formed: bool,
    pub malform_reason: Option<MalformReason>,
    pub opcode_count: u64,
    pub imports: Vec<(String, String)>,
    pub rule_verdict: RuleVerdict,
    pub ml_score: Option<f64>,
    pub ml_verdict: Option<Verdict>,
    pub oov_mass: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScanReport {
    pub path: String,
    pub file_verdict: FileVerdict,
    /// Maximum candidate score.
    pub ml_score: Option<f64>,
    pub candidates: Vec<CandidateReport>,
    pub unwrap_errors: Vec<String>,
    pub error: Option<String>,
    pub elapsed_ms: f64,
}

impl ScanReport {
    fn failed(path: String, error: String, elapsed_ms: f64) -> Self {
        ScanReport {
            path,
            file_verdict: FileVerdict::ScanError,
            ml_score: None,
            candidates: Vec::new(),
            unwrap_errors: Vec::new(),
            error: Some(error),
            elapsed_ms,
        }
    }

    /// One JSON object, keys in declaration order.
    pub fn to_json_line(&self) -> String {
        serde_json::to_string(self).expect("report serializes")
    }
}

#[derive(Debug, Clone, Default)]
pub struct ScanConfig {
    pub limits: Limits,
    pub policy: ImportPolicy,
    /// Ignore the import rules entirely; only the model decides.
    pub ml_only: bool,
}

#[derive(Debug, Clone)]
pub struct Scanner {
    pub model: Option<TrainedModel>,
    pub config: ScanConfig,
}

/// Every retained segment of one candidate.
pub struct Analyzed {
    pub segments: Vec<Disassembly>,
}

impl Analyzed {
    pub fn events(&self) -> impl Iterator<Item = &OpcodeEvent> {
        self.segments.iter().flat_map(|s| s.events.iter())
    }

    pub fn opcode_count(&self) -> usize {
        self.segments.iter().map(|s| s.events.len()).sum()
    }
}

pub fn analyze(bytes: &[u8]) -> Option<Analyzed> {
    disassemble_all(bytes).ok().map(|segments| Analyzed { segments })
}

/// Pooled opcode counts of every pickle embedded in `bytes`.
pub fn file_counts(bytes: &[u8], limits: &Limits) -> Result<[u64; VOCABULARY_SIZE], String> {
    let u = unwrap(bytes, limits).map_err(|e| e.to_string())?;
    let mut counts = [0u64; VOCABULARY_SIZE];
    for c in &u.candidates {
        if let Ok(seg) = count_all(&c.bytes) {
            counts.iter_mut().zip(seg).for_each(|(a, b)| *a += b);
        }
    }
    Ok(counts)
}

/// Feature vector of a whole file: events of all embedded pickles pooled.
pub fn file_vector(bytes: &[u8], limits: &Limits) -> Result<FeatureVector, String> {
    FeatureVector::from_counts(&file_counts(bytes, limits)?).map_err(|e| e.to_string())
}

#[cfg(not(target_arch = "wasm32"))]
struct Clock(std::time::Instant);

#[cfg(not(target_arch = "wasm32"))]
impl Clock {
    fn start() -> Self {
        Clock(std::time::Instant::now())
    }

    fn ms(&self) -> f64 {
        self.0.elapsed().as_secs_f64() * 1e3
    }
}

// no monotonic clock without a JS shim; callers on the web time externally
#[cfg(target_arch = "wasm32")]
struct Clock;

#[cfg(target_arch = "wasm32")]
impl Clock {
    fn start() -> Self {
        Clock
    }

    fn ms(&self) -> f64 {
        0.0
    }
}

impl Scanner {
    pub fn new(model: Option<TrainedModel>, config: ScanConfig) -> Self {
        Scanner { model, config }
    }

    fn scan_candidate(&self, bytes: &[u8], origin_chain: Vec<OriginStep>) -> CandidateReport {
        let mut report = CandidateReport {
            origin_chain,
            well_formed: false,
            malform_reason: None,
            opcode_count: 0,
            imports: Vec::new(),
            rule_verdict: RuleVerdict::Benign,
            ml_score: None,
            ml_verdict: None,
            oov_mass: 0.0,
        };
        let Some(a) = analyze(bytes) else {
            return report;
        };
        let first = &a.segments[0];
        report.well_formed = first.well_formed;
        report.malform_reason = first.malform_reason;
        report.opcode_count = a.opcode_count() as u64;
        let mut seen = BTreeSet::new();
        for seg in &a.segments {
            for pair in extract_imports(seg) {
                if seen.insert(pair.clone()) {
                    report.imports.push(pair);
                }
            }
        }
        report.rule_verdict = rule_scan(&report.imports, &self.config.policy);
        if let (Some(model), Ok(v)) = (&self.model, extract_segments(&a.segments)) {
            if let Ok(p) = predict(model, &v) {
                report.ml_score = Some(p.score);
                report.ml_verdict = Some(p.verdict);
                report.oov_mass = p.oov_mass;
            }
        }
        report
    }

    fn verdict(&self, candidates: &[CandidateReport], unwrap_errors: &[UnwrapError]) -> FileVerdict {
        let rules = !self.config.ml_only;
        let malicious = candidates.iter().any(|c| {
            c.ml_verdict == Some(Verdict::Malicious) || rules && c.rule_verdict == RuleVerdict::Malicious
        });
        if malicious {
            return FileVerdict::Malicious;
        }
        let suspicious = !unwrap_errors.is_empty()
            || candidates.iter().any(|c| {
                !c.well_formed || c.oov_mass > 0.0 || rules && c.rule_verdict == RuleVerdict::Suspicious
            });
        if suspicious {
            FileVerdict::Suspicious
        } else {
            FileVerdict::Benign
        }
    }

    /// Scan in-memory bytes reported under `path`.
    pub fn scan_bytes(&self, path: &str, bytes: &[u8]) -> ScanReport {
        let clock = Clock::start();
        let mut report = self.scan_bytes_untimed(path, bytes);
        report.elapsed_ms = clock.ms();
        report
    }

    fn scan_bytes_untimed(&self, path: &str, bytes: &[u8]) -> ScanReport {
        let u = match unwrap(bytes, &self.config.limits) {
            Ok(u) => u,
            Err(e) => return ScanReport::failed(path.into(), e.to_string(), 0.0),
        };
        let candidates: Vec<CandidateReport> =
            u.candidates.iter().map(|c| self.scan_candidate(&c.bytes, c.origin_chain.clone())).collect();
        let errors: Vec<UnwrapError> = u.root.errors().into_iter().cloned().collect();
        let ml_score = candidates.iter().filter_map(|c| c.ml_score).reduce(f64::max);
        ScanReport {
            path: path.into(),
            file_verdict: self.verdict(&candidates, &errors),
            ml_score,
            candidates,
            unwrap_errors: errors.iter().map(|e| e.to_string()).collect(),
            error: None,
            elapsed_ms: 0.0,
        }
    }

    /// Read and scan one file. IO failures and empty files are scan errors.
    pub fn scan_file(&self, path: &Path) -> ScanReport {
        let clock = Clock::start();
        let shown = path.display().to_string();
        let mut report = match fs::read(path) {
            Err(e) => ScanReport::failed(shown, format!("read failed: {e}"), 0.0),
            Ok(b) if b.is_empty() => ScanReport::failed(shown, "empty file".into(), 0.0),
            Ok(b) => catch_unwind(AssertUnwindSafe(|| self.scan_bytes_untimed(&shown, &b)))
                .unwrap_or_else(|_| ScanReport::failed(shown.clone(), "internal error while scanning".into(), 0.0)),
        };
        report.elapsed_ms = clock.ms();
        report
    }

    /// Scan files independently, preserving input order.
    pub fn scan_paths(&self, paths: &[PathBuf]) -> Vec<ScanReport> {
        #[cfg(feature = "parallel")]
        {
            use rayon::prelude::*;
            paths.par_iter().map(|p| self.scan_file(p)).collect()
        }
        #[cfg(not(feature = "parallel"))]
        {
            paths.iter().map(|p| self.scan_file(p)).collect()
        }
    }

    /// Every regular file under `root` in lexicographic path order.
    pub fn scan_tree(&self, root: &Path) -> Vec<ScanReport> {
        let (files, errors) = list_files(root);
        let mut reports: Vec<ScanReport> =
            errors.into_iter().map(|(p, e)| ScanReport::failed(p, e, 0.0)).collect();
        reports.extend(self.scan_paths(&files));
        reports.sort_by(|a, b| a.path.cmp(&b.path));
        reports
    }
}

/// Regular files under `root` sorted by path, following symlinks, plus
/// `(path, message)` for entries that could not be read. A file `root` lists
/// itself.
pub fn list_files(root: &Path) -> (Vec<PathBuf>, Vec<(String, String)>) {
    let mut files = Vec::new();
    let mut errors = Vec::new();
    for entry in walkdir::WalkDir::new(root).follow_links(true).sort_by_file_name() {
        match entry {
            Ok(e) if e.file_type().is_file() => files.push(e.into_path()),
            Ok(_) => {}
            Err(e) => {
                let p = e.path().map(|p| p.display().to_string()).unwrap_or_else(|| root.display().to_string());
                errors.push((p, e.to_string()));
            }
        }
    }
    (files, errors)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn pairs(v: &[(&str, &str)]) -> Vec<(String, String)> {
        v.iter().map(|(m, n)| (m.to_string(), n.to_string())).collect()
    }

    #[test]
    fn rule_examples() {
        let p = ImportPolicy::default();
        assert_eq!(rule_scan(&pairs(&[("os", "system")]), &p), RuleVerdict::Malicious);
        assert_eq!(rule_scan(&pairs(&[("builtins", "getattr")]), &p), RuleVerdict::Suspicious);
        assert_eq!(rule_scan(&pairs(&[("collections", "OrderedDict")]), &p), RuleVerdict::Benign);
        assert_eq!(rule_scan(&pairs(&[("posix", "system")]), &p), RuleVerdict::Malicious);
        assert_eq!(rule_scan(&pairs(&[("__builtin__", "eval")]), &p), RuleVerdict::Malicious);
        assert_eq!(rule_scan(&pairs(&[("os.path", "join")]), &p), RuleVerdict::Malicious);
        assert_eq!(rule_scan(&pairs(&[("osx", "thing")]), &p), RuleVerdict::Benign);
        assert_eq!(rule_scan(&pairs(&[("builtins", "print")]), &p), RuleVerdict::Benign);
    }

    #[test]
    fn adding_a_denied_import_never_lowers_the_verdict() {
        let p = ImportPolicy::default();
        let bases = [vec![], pairs(&[("builtins", "getattr")]), pairs(&[("collections", "OrderedDict")])];
        for base in bases {
            let before = rule_scan(&base, &p);
            let mut more = base.clone();
            more.push(("subprocess".into(), "Popen".into()));
            assert!(rule_scan(&more, &p) >= before);
            assert_eq!(rule_scan(&more, &p), RuleVerdict::Malicious);
        }
    }

    #[test]
    fn policy_file_extends_defaults() {
        let p = ImportPolicy::from_json(r#"{"deny": ["torch.load"], "allow": ["os.getcwd"]}"#).unwrap();
        assert!(p.is_denied("torch", "load"));
        assert!(!p.is_denied("os", "getcwd"));
        assert!(p.is_denied("os", "system"));
    }

    #[test]
    fn policy_conflict_is_rejected() {
        let e = ImportPolicy::from_json(r#"{"allow": ["builtins.eval"]}"#).unwrap_err();
        assert!(matches!(e, PolicyError::Conflict { .. }));
        let e = ImportPolicy::from_json(r#"{"allow": ["os.*"]}"#).unwrap_err();
        assert!(matches!(e, PolicyError::BadPattern(_)));
        assert!(ImportPolicy::from_json(r#"{"bogus": 1}"#).is_err());
    }

    #[test]
    fn object_patterns() {
        let p = ImportPolicy::from_json(
            r#"{"replace_defaults": true, "deny": [{"module": "a.b"}, {"module": "c", "name": "d.e"}]}"#,
        )
        .unwrap();
        assert!(p.is_denied("a.b.c", "x"));
        assert!(p.is_denied("c", "d.e"));
        assert!(!p.is_denied("os", "system"));
    }

    #[test]
    fn exploit_without_model_is_malicious_by_rule() {
        let s = Scanner::new(None, ScanConfig::default());
        let r = s.scan_bytes("x", b"cos\nsystem\n(S'echo hi'\ntR.");
        assert_eq!(r.file_verdict, FileVerdict::Malicious);
        assert_eq!(r.candidates.len(), 1);
        assert_eq!(r.candidates[0].imports, pairs(&[("os", "system")]));
        let ml_only = Scanner::new(None, ScanConfig { ml_only: true, ..Default::default() });
        assert_eq!(ml_only.scan_bytes("x", b"cos\nsystem\n(S'echo hi'\ntR.").file_verdict, FileVerdict::Benign);
    }

    #[test]
    fn malformed_is_suspicious() {
        let s = Scanner::new(None, ScanConfig::default());
        let r = s.scan_bytes("x", b"\x80\x02]q\x00(K\x01");
        assert_eq!(r.file_verdict, FileVerdict::Suspicious);
        assert!(!r.candidates[0].well_formed);
        let r = s.scan_bytes("x", b"\x80\x02]q\x00.");
        assert_eq!(r.file_verdict, FileVerdict::Benign);
    }

    #[test]
    fn report_key_order_is_stable() {
        let s = Scanner::new(None, ScanConfig::default());
        let line = s.scan_bytes("x", b"N.").to_json_line();
        let keys = ["\"path\"", "\"file_verdict\"", "\"ml_score\"", "\"candidates\"", "\"unwrap_errors\"", "\"error\"", "\"elapsed_ms\""];
        let pos: Vec<usize> = keys.iter().map(|k| line.find(k).unwrap()).collect();
        assert!(pos.windows(2).all(|w| w[0] < w[1]), "{line}");
    }
}
