//! Container and compression unwrapping.
//!
//! Input bytes are sniffed by magic number and expanded depth-first until
//! leaves are reached. Leaves that plausibly hold a pickle become
//! [`PickleCandidate`]s. Every decoder writes through a budgeted sink so a
//! decompression bomb stops at the configured limit instead of exhausting
//! memory. Errors are recorded on the node where they happen; siblings keep
//! expanding.

use std::fmt;
use std::io::{self, Cursor, Read, Write};
use std::sync::Arc;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::opcodes;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ContainerKind {
    Raw,
    Zip,
    Tar,
    Gzip,
    Bz2,
    Zlib,
    Lz4Frame,
    LzmaAlone,
    Xz,
    PytorchZip,
}

impl ContainerKind {
    pub fn name(self) -> &'static str {
        match self {
            ContainerKind::Raw => "raw",
            ContainerKind::Zip => "zip",
            ContainerKind::Tar => "tar",
            ContainerKind::Gzip => "gzip",
            ContainerKind::Bz2 => "bz2",
            ContainerKind::Zlib => "zlib",
            ContainerKind::Lz4Frame => "lz4-frame",
            ContainerKind::LzmaAlone => "lzma-alone",
            ContainerKind::Xz => "xz",
            ContainerKind::PytorchZip => "pytorch-zip",
        }
    }

    /// Archive formats hold named entries; the rest wrap a single stream.
    pub fn is_archive(self) -> bool {
        matches!(self, ContainerKind::Zip | ContainerKind::Tar | ContainerKind::PytorchZip)
    }
}

impl fmt::Display for ContainerKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Error, Serialize, Deserialize)]
#[serde(tag = "error", rename_all = "kebab-case")]
pub enum UnwrapError {
    #[error("input shorter than 6 bytes")]
    InputTooShort,
    #[error("empty input")]
    EmptyInput,
    #[error("nesting depth {depth} exceeds limit {limit}")]
    DepthExceeded { depth: usize, limit: usize },
    #[error("inflation bomb suspected: {compressed} bytes inflate past {inflated} bytes")]
    InflationBombSuspected { compressed: u64, inflated: u64 },
    #[error("inflated size passes the {limit}-byte budget")]
    InflationLimitExceeded { limit: u64 },
    #[error("archive holds more than {limit} entries")]
    TooManyEntries { limit: usize },
    #[error("corrupt {kind} container: {detail}")]
    CorruptContainer { kind: ContainerKind, detail: String },
}

impl UnwrapError {
    /// Errors raised by resource limits rather than by malformed data.
    pub fn is_limit(&self) -> bool {
        matches!(
            self,
            UnwrapError::DepthExceeded { .. }
                | UnwrapError::InflationBombSuspected { .. }
                | UnwrapError::InflationLimitExceeded { .. }
                | UnwrapError::TooManyEntries { .. }
        )
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Limits {
    pub max_depth: usize,
    /// Total inflated bytes across the whole tree.
    pub max_inflated_bytes: u64,
    /// Total archive entries across the whole tree.
    pub max_entries: usize,
}

impl Default for Limits {
    fn default() -> Self {
        Limits { max_depth: 8, max_inflated_bytes: 1 << 30, max_entries: 10_000 }
    }
}

/// Ratio above which an over-budget expansion is reported as a bomb.
pub const BOMB_RATIO: u64 = 1000;

const CANDIDATE_SUFFIXES: [&str; 6] = [".pkl", ".pickle", ".bin", ".pt", ".pth", ".joblib"];

#[derive(Debug, Clone)]
pub struct UnwrapNode {
    pub kind: ContainerKind,
    pub entry_path: String,
    pub depth: usize,
    pub payload: Arc<[u8]>,
    pub children: Vec<UnwrapNode>,
    pub error: Option<UnwrapError>,
}

impl UnwrapNode {
    /// Pre-order traversal.
    pub fn walk(&self) -> Vec<&UnwrapNode> {
        let mut out = vec![self];
        for c in &self.children {
            out.extend(c.walk());
        }
        out
    }

    pub fn errors(&self) -> Vec<&UnwrapError> {
        self.walk().into_iter().filter_map(|n| n.error.as_ref()).collect()
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct OriginStep {
    pub kind: ContainerKind,
    pub entry_path: String,
}

#[derive(Debug, Clone)]
pub struct PickleCandidate {
    pub bytes: Arc<[u8]>,
    /// Enclosing containers, outermost first.
    pub origin_chain: Vec<OriginStep>,
}

/// `zip:inner.zip > zip:model.pkl > pkl`
pub fn format_chain(steps: &[OriginStep]) -> String {
    let mut parts: Vec<String> = steps
        .iter()
        .map(|s| if s.entry_path.is_empty() { s.kind.to_string() } else { format!("{}:{}", s.kind, s.entry_path) })
        .collect();
    parts.push("pkl".into());
    parts.join(" > ")
}

impl PickleCandidate {
    pub fn chain_string(&self) -> String {
        format_chain(&self.origin_chain)
    }
}

#[derive(Debug, Clone)]
pub struct Unwrapped {
    pub root: UnwrapNode,
    pub candidates: Vec<PickleCandidate>,
}

/// Magic-number sniffing. Inputs shorter than six bytes are rejected.
pub fn sniff(input: &[u8]) -> Result<ContainerKind, UnwrapError> {
    if input.len() < 6 {
        return Err(UnwrapError::InputTooShort);
    }
    Ok(sniff_kind(input))
}

fn sniff_kind(b: &[u8]) -> ContainerKind {
    if b.len() < 6 {
        return ContainerKind::Raw;
    }
    if b.starts_with(b"PK\x03\x04") {
        return if zip_has_data_pkl(b) { ContainerKind::PytorchZip } else { ContainerKind::Zip };
    }
    if b.starts_with(&[0x1f, 0x8b]) {
        return ContainerKind::Gzip;
    }
    if b.starts_with(b"BZh") && (b'1'..=b'9').contains(&b[3]) {
        return ContainerKind::Bz2;
    }
    if b.starts_with(&[0xfd, b'7', b'z', b'X', b'Z', 0x00]) {
        return ContainerKind::Xz;
    }
    if b.starts_with(&[0x04, 0x22, 0x4d, 0x18]) {
        return ContainerKind::Lz4Frame;
    }
    if b.len() >= 262 && &b[257..262] == b"ustar" {
        return ContainerKind::Tar;
    }
    if b[0] == 0x5d && b.len() >= 13 && plausible_lzma_dict(u32::from_le_bytes([b[1], b[2], b[3], b[4]])) {
        return ContainerKind::LzmaAlone;
    }
    if b[0] == 0x78 && (u16::from(b[0]) << 8 | u16::from(b[1])) % 31 == 0 {
        return ContainerKind::Zlib;
    }
    ContainerKind::Raw
}

/// Encoders emit 2^n or 2^n + 2^(n-1) dictionary sizes between 4 KiB and 1.5 GiB.
#[allow(clippy::manual_is_multiple_of)] // is_multiple_of needs a newer toolchain than rust-version
fn plausible_lzma_dict(d: u32) -> bool {
    if !(1 << 12..=3 << 29).contains(&d) {
        return false;
    }
    d.is_power_of_two() || (d / 3).is_power_of_two() && d % 3 == 0
}

fn zip_has_data_pkl(b: &[u8]) -> bool {
    match zip::ZipArchive::new(Cursor::new(b)) {
        Ok(a) => a.file_names().any(|n| n == "data.pkl" || n.ends_with("/data.pkl")),
        Err(_) => false,
    }
}

fn plausible_pickle(bytes: &[u8], entry_path: &str) -> bool {
    let lower = entry_path.to_ascii_lowercase();
    CANDIDATE_SUFFIXES.iter().any(|s| lower.ends_with(s)) || bytes.first().is_some_and(|&c| opcodes::is_opcode(c))
}

/// Expand `input` depth-first within `limits`.
pub fn unwrap(input: &[u8], limits: &Limits) -> Result<Unwrapped, UnwrapError> {
    if input.is_empty() {
        return Err(UnwrapError::EmptyInput);
    }
    let mut ctx = Ctx { limits: *limits, inflated: 0, entries: 0, candidates: Vec::new(), chain: Vec::new() };
    let root = ctx.expand(Arc::from(input), String::new(), 0, Leaf::Root);
    Ok(Unwrapped { root, candidates: ctx.candidates })
}

#[derive(Clone, Copy, PartialEq, Eq)]
enum Leaf {
    /// The top-level input: always a candidate when not a container.
    Root,
    /// Single-stream payload or generic archive member.
    Plausible,
    /// Tar members are scanned whatever their name.
    Always,
    /// Non-pickle members of a PyTorch archive (tensor storages, metadata).
    Never,
}

struct Ctx {
    limits: Limits,
    inflated: u64,
    entries: usize,
    candidates: Vec<PickleCandidate>,
    chain: Vec<OriginStep>,
}

impl Ctx {
    fn expand(&mut self, payload: Arc<[u8]>, entry_path: String, depth: usize, leaf: Leaf) -> UnwrapNode {
        let kind = if leaf == Leaf::Never { ContainerKind::Raw } else { sniff_kind(&payload) };
        let mut node = UnwrapNode { kind, entry_path, depth, payload, children: Vec::new(), error: None };
        if kind == ContainerKind::Raw {
            let take = match leaf {
                Leaf::Root | Leaf::Always => true,
                Leaf::Plausible => plausible_pickle(&node.payload, &node.entry_path),
                Leaf::Never => false,
            };
            if take {
                self.candidates.push(PickleCandidate { bytes: node.payload.clone(), origin_chain: self.chain.clone() });
            }
            return node;
        }
        if depth >= self.limits.max_depth {
            node.error = Some(UnwrapError::DepthExceeded { depth: depth + 1, limit: self.limits.max_depth });
            return node;
        }
        let payload = node.payload.clone();
        let result = match kind {
            ContainerKind::Zip | ContainerKind::PytorchZip => self.expand_zip(&payload, kind, depth, &mut node.children),
            ContainerKind::Tar => self.expand_tar(&payload, depth, &mut node.children),
            _ => match self.decode_stream(kind, &payload) {
                Ok(inner) => {
                    self.chain.push(OriginStep { kind, entry_path: String::new() });
                    node.children.push(self.expand(inner.into(), String::new(), depth + 1, Leaf::Plausible));
                    self.chain.pop();
                    Ok(())
                }
                Err(UnwrapError::CorruptContainer { .. })
                    if matches!(kind, ContainerKind::Zlib | ContainerKind::LzmaAlone) =>
                {
                    // weak magic: treat the bytes as raw instead
                    node.kind = ContainerKind::Raw;
                    let take = leaf != Leaf::Plausible || plausible_pickle(&node.payload, &node.entry_path);
                    if take {
                        self.candidates
                            .push(PickleCandidate { bytes: node.payload.clone(), origin_chain: self.chain.clone() });
                    }
                    Ok(())
                }
                Err(e) => Err(e),
            },
        };
        if let Err(e) = result {
            node.error = Some(e);
        }
        node
    }

    fn budget_left(&self) -> u64 {
        self.limits.max_inflated_bytes.saturating_sub(self.inflated)
    }

    /// Run a decoder into a budgeted sink. Past the budget the sink keeps
    /// counting, without storing, until the bomb ratio is proven or a hard
    /// ceiling of eight budgets is reached.
    fn inflate<F>(&mut self, kind: ContainerKind, compressed: u64, run: F) -> Result<Vec<u8>, UnwrapError>
    where
        F: FnOnce(&mut BudgetSink) -> Result<(), String>,
    {
        let keep = self.budget_left();
        let proof = compressed.saturating_mul(BOMB_RATIO).saturating_add(1);
        let stop_at = proof.min(keep.saturating_mul(8)).max(keep.saturating_add(1));
        let mut sink = BudgetSink { buf: Vec::new(), keep, count: 0, stop_at };
        let outcome = run(&mut sink);
        if sink.count > keep {
            self.inflated = self.limits.max_inflated_bytes;
            return Err(if sink.count >= proof {
                UnwrapError::InflationBombSuspected { compressed, inflated: sink.count }
            } else {
                UnwrapError::InflationLimitExceeded { limit: self.limits.max_inflated_bytes }
            });
        }
        if let Err(detail) = outcome {
            return Err(UnwrapError::CorruptContainer { kind, detail });
        }
        self.inflated += sink.buf.len() as u64;
        Ok(sink.buf)
    }

    fn decode_stream(&mut self, kind: ContainerKind, data: &[u8]) -> Result<Vec<u8>, UnwrapError> {
        let n = data.len() as u64;
        let copy = |r: &mut dyn Read, w: &mut BudgetSink| io::copy(r, w).map(|_| ()).map_err(|e| e.to_string());
        match kind {
            ContainerKind::Gzip => {
                self.inflate(kind, n, |w| copy(&mut flate2::read::MultiGzDecoder::new(data), w))
            }
            ContainerKind::Zlib => self.inflate(kind, n, |w| copy(&mut flate2::read::ZlibDecoder::new(data), w)),
            ContainerKind::Bz2 => self.inflate(kind, n, |w| copy(&mut bzip2::read::MultiBzDecoder::new(data), w)),
            ContainerKind::Lz4Frame => {
                self.inflate(kind, n, |w| copy(&mut lz4_flex::frame::FrameDecoder::new(data), w))
            }
            ContainerKind::LzmaAlone => {
                let opts = lzma_rs::decompress::Options {
                    memlimit: Some(self.budget_left().min(usize::MAX as u64) as usize),
                    ..Default::default()
                };
                self.inflate(kind, n, |w| {
                    lzma_rs::lzma_decompress_with_options(&mut io::BufReader::new(data), w, &opts)
                        .map_err(|e| e.to_string())
                })
            }
            ContainerKind::Xz => self.inflate(kind, n, |w| {
                lzma_rs::xz_decompress(&mut io::BufReader::new(data), w).map_err(|e| e.to_string())
            }),
            _ => unreachable!("not a stream format"),
        }
    }

    fn count_entry(&mut self) -> Result<(), UnwrapError> {
        self.entries += 1;
        if self.entries > self.limits.max_entries {
            return Err(UnwrapError::TooManyEntries { limit: self.limits.max_entries });
        }
        Ok(())
    }

    fn expand_zip(
        &mut self,
        data: &[u8],
        kind: ContainerKind,
        depth: usize,
        children: &mut Vec<UnwrapNode>,
    ) -> Result<(), UnwrapError> {
        let corrupt = |e: zip::result::ZipError| UnwrapError::CorruptContainer { kind, detail: e.to_string() };
        let mut archive = zip::ZipArchive::new(Cursor::new(data)).map_err(corrupt)?;
        self.chain.push(OriginStep { kind, entry_path: String::new() });
        let mut outcome = Ok(());
        for i in 0..archive.len() {
            if let Err(e) = self.count_entry() {
                outcome = Err(e);
                break;
            }
            let mut entry = match archive.by_index(i) {
                Ok(e) => e,
                Err(e) => {
                    children.push(error_node(kind, format!("#{i}"), depth + 1, corrupt(e)));
                    continue;
                }
            };
            if entry.is_dir() {
                continue;
            }
            let name = entry.name().to_string();
            let compressed = entry.compressed_size().max(1);
            let bytes = self.inflate(kind, compressed, |w| io::copy(&mut entry, w).map(|_| ()).map_err(|e| e.to_string()));
            drop(entry);
            let leaf = if kind == ContainerKind::PytorchZip && !name.ends_with(".pkl") { Leaf::Never } else { Leaf::Plausible };
            self.chain.last_mut().expect("pushed above").entry_path = name.clone();
            match bytes {
                Ok(b) => children.push(self.expand(b.into(), name, depth + 1, leaf)),
                Err(e) => {
                    let stop = e.is_limit();
                    children.push(error_node(ContainerKind::Raw, name, depth + 1, e));
                    if stop {
                        break;
                    }
                }
            }
        }
        self.chain.pop();
        outcome
    }

    fn expand_tar(&mut self, data: &[u8], depth: usize, children: &mut Vec<UnwrapNode>) -> Result<(), UnwrapError> {
        let kind = ContainerKind::Tar;
        let corrupt = |e: io::Error| UnwrapError::CorruptContainer { kind, detail: e.to_string() };
        let mut archive = tar::Archive::new(data);
        self.chain.push(OriginStep { kind, entry_path: String::new() });
        let mut outcome = Ok(());
        match archive.entries() {
            Err(e) => outcome = Err(corrupt(e)),
            Ok(entries) => {
                for entry in entries {
                    if let Err(e) = self.count_entry() {
                        outcome = Err(e);
                        break;
                    }
                    let mut entry = match entry {
                        Ok(e) => e,
                        Err(e) => {
                            outcome = Err(corrupt(e));
                            break;
                        }
                    };
                    if !entry.header().entry_type().is_file() {
                        continue;
                    }
                    let name = entry.path().map(|p| p.to_string_lossy().into_owned()).unwrap_or_default();
                    let size = entry.size().max(1);
                    let bytes =
                        self.inflate(kind, size, |w| io::copy(&mut entry, w).map(|_| ()).map_err(|e| e.to_string()));
                    self.chain.last_mut().expect("pushed above").entry_path = name.clone();
                    match bytes {
                        Ok(b) => children.push(self.expand(b.into(), name, depth + 1, Leaf::Always)),
                        Err(e) => {
                            let stop = e.is_limit();
                            children.push(error_node(ContainerKind::Raw, name, depth + 1, e));
                            if stop {
                                break;
                            }
                        }
                    }
                }
            }
        }
        self.chain.pop();
        outcome
    }
}

fn error_node(kind: ContainerKind, entry_path: String, depth: usize, e: UnwrapError) -> UnwrapNode {
    UnwrapNode { kind, entry_path, depth, payload: Arc::from(&[][..]), children: Vec::new(), error: Some(e) }
}

/// Output sink that stores up to `keep` bytes and counts up to `stop_at`.
pub(crate) struct BudgetSink {
    buf: Vec<u8>,
    keep: u64,
    count: u64,
    stop_at: u64,
}

impl Write for BudgetSink {
    fn write(&mut self, data: &[u8]) -> io::Result<usize> {
        self.count += data.len() as u64;
        if self.count <= self.keep {
            self.buf.extend_from_slice(data);
        } else if !self.buf.is_empty() {
            self.buf = Vec::new();
        }
        if self.count >= self.stop_at {
            return Err(io::Error::other("inflation budget exhausted"));
        }
        Ok(data.len())
    }

    fn flush(&mut self) -> io::Result<()> {
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    const EXPLOIT: &[u8] = b"cos\nsystem\n(S'echo hi'\ntR.";

    fn gz(p: &[u8]) -> Vec<u8> {
        let mut e = flate2::write::GzEncoder::new(Vec::new(), flate2::Compression::default());
        e.write_all(p).unwrap();
        e.finish().unwrap()
    }

    fn zip_of(entries: &[(&str, &[u8])]) -> Vec<u8> {
        let mut w = zip::ZipWriter::new(Cursor::new(Vec::new()));
        let opts = zip::write::SimpleFileOptions::default().compression_method(zip::CompressionMethod::Deflated);
        for (name, data) in entries {
            w.start_file(*name, opts).unwrap();
            w.write_all(data).unwrap();
        }
        w.finish().unwrap().into_inner()
    }

    #[test]
    fn sniff_magic_table() {
        assert_eq!(sniff(&[0x1f, 0x8b, 0x08, 0, 0, 0]).unwrap(), ContainerKind::Gzip);
        assert_eq!(sniff(&[0x80, 0x04, 0x95, 0, 0, 0, 0]).unwrap(), ContainerKind::Raw);
        assert_eq!(sniff(b"BZh91AY&SY").unwrap(), ContainerKind::Bz2);
        assert_eq!(sniff(&[0xfd, b'7', b'z', b'X', b'Z', 0, 0]).unwrap(), ContainerKind::Xz);
        assert_eq!(sniff(&[0x04, 0x22, 0x4d, 0x18, 0x64, 0x40]).unwrap(), ContainerKind::Lz4Frame);
        assert_eq!(sniff(&[0x78, 0x9c, 0, 0, 0, 0]).unwrap(), ContainerKind::Zlib);
        assert_eq!(sniff(b"N."), Err(UnwrapError::InputTooShort));
    }

    #[test]
    fn sniff_pytorch_zip() {
        let z = zip_of(&[("archive/data.pkl", EXPLOIT), ("archive/version", b"3\n")]);
        assert_eq!(sniff(&z).unwrap(), ContainerKind::PytorchZip);
        let z = zip_of(&[("model.pkl", EXPLOIT)]);
        assert_eq!(sniff(&z).unwrap(), ContainerKind::Zip);
    }

    #[test]
    fn raw_passthrough() {
        let u = unwrap(EXPLOIT, &Limits::default()).unwrap();
        assert_eq!(u.candidates.len(), 1);
        assert!(u.candidates[0].origin_chain.is_empty());
        assert_eq!(&*u.candidates[0].bytes, EXPLOIT);
        assert!(u.root.children.is_empty());
    }

    #[test]
    fn tiny_input_is_raw() {
        let u = unwrap(b"N.", &Limits::default()).unwrap();
        assert_eq!(u.candidates.len(), 1);
        assert_eq!(unwrap(b"", &Limits::default()).unwrap_err(), UnwrapError::EmptyInput);
    }

    #[test]
    fn gzip_one_level() {
        let u = unwrap(&gz(EXPLOIT), &Limits::default()).unwrap();
        assert_eq!(u.candidates.len(), 1);
        assert_eq!(u.candidates[0].origin_chain, vec![OriginStep { kind: ContainerKind::Gzip, entry_path: String::new() }]);
        assert_eq!(&*u.candidates[0].bytes, EXPLOIT);
        assert_eq!(u.root.children[0].depth, 1);
    }

    #[test]
    fn nested_zip_depth_two() {
        let inner = zip_of(&[("model.pkl", EXPLOIT)]);
        let outer = zip_of(&[("inner.zip", &inner)]);
        let u = unwrap(&outer, &Limits::default()).unwrap();
        assert_eq!(u.candidates.len(), 1);
        let c = &u.candidates[0];
        assert_eq!(c.origin_chain.len(), 2);
        assert_eq!(c.origin_chain[0].entry_path, "inner.zip");
        assert_eq!(c.origin_chain[1].entry_path, "model.pkl");
        assert_eq!(u.root.children[0].children[0].depth, 2);
        assert_eq!(c.chain_string(), "zip:inner.zip > zip:model.pkl > pkl");
    }

    #[test]
    fn pytorch_storages_are_not_candidates() {
        let z = zip_of(&[("m/data.pkl", EXPLOIT), ("m/data/0", b"(\x00\x00\x80?"), ("m/byteorder", b"little")]);
        let u = unwrap(&z, &Limits::default()).unwrap();
        assert_eq!(u.candidates.len(), 1);
        assert_eq!(u.candidates[0].origin_chain[0].kind, ContainerKind::PytorchZip);
    }

    #[test]
    fn zlib_false_positive_falls_back_to_raw() {
        // 0x78 0x9c passes the header check but is not a deflate stream
        let data = [0x78, 0x9c, 0xff, 0xff, 0xff, 0xff, 0xff];
        let u = unwrap(&data, &Limits::default()).unwrap();
        assert_eq!(u.root.kind, ContainerKind::Raw);
        assert_eq!(u.candidates.len(), 1);
        assert!(u.root.error.is_none());
    }

    #[test]
    fn corrupt_gzip_is_recorded() {
        let mut g = gz(EXPLOIT);
        let n = g.len();
        g[n / 2] ^= 0xff;
        g.truncate(n - 4);
        let u = unwrap(&g, &Limits::default()).unwrap();
        assert!(matches!(u.root.error, Some(UnwrapError::CorruptContainer { kind: ContainerKind::Gzip, .. })));
        assert!(u.candidates.is_empty());
    }

    #[test]
    fn corrupt_member_does_not_stop_siblings() {
        let good = gz(EXPLOIT);
        let mut bad = gz(EXPLOIT);
        bad.truncate(12);
        let z = zip_of(&[("a.gz", &bad), ("b.gz", &good)]);
        let u = unwrap(&z, &Limits::default()).unwrap();
        assert_eq!(u.candidates.len(), 1);
        assert_eq!(u.root.errors().len(), 1);
    }

    #[test]
    fn gzip_bomb_is_stopped() {
        let zeros = vec![0u8; 64 << 20];
        let bomb = gz(&zeros);
        let limits = Limits { max_inflated_bytes: 8 << 20, ..Limits::default() };
        let u = unwrap(&bomb, &limits).unwrap();
        assert!(matches!(u.root.error, Some(UnwrapError::InflationBombSuspected { .. })), "{:?}", u.root.error);
        assert!(u.candidates.is_empty());
    }

    #[test]
    fn large_but_incompressible_is_a_plain_limit() {
        let noise: Vec<u8> = (0..200_000u32).map(|i| (i.wrapping_mul(2654435761) >> 13) as u8).collect();
        let limits = Limits { max_inflated_bytes: 100_000, ..Limits::default() };
        let u = unwrap(&gz(&noise), &limits).unwrap();
        assert!(matches!(u.root.error, Some(UnwrapError::InflationLimitExceeded { .. })), "{:?}", u.root.error);
    }

    #[test]
    fn nested_zip_bomb_is_stopped() {
        let zeros = vec![0u8; 4 << 20];
        let layer = zip_of(&[("z0.bin", &zeros), ("z1.bin", &zeros), ("z2.bin", &zeros)]);
        let outer = zip_of(&[("a.zip", &layer), ("b.zip", &layer), ("c.zip", &layer)]);
        let limits = Limits { max_inflated_bytes: 6 << 20, ..Limits::default() };
        let u = unwrap(&outer, &limits).unwrap();
        assert!(u.root.errors().iter().any(|e| e.is_limit()));
        let total: usize = u.candidates.iter().map(|c| c.bytes.len()).sum();
        assert!(total as u64 <= limits.max_inflated_bytes);
    }

    #[test]
    fn depth_limit() {
        let mut data = EXPLOIT.to_vec();
        for _ in 0..5 {
            data = gz(&data);
        }
        let limits = Limits { max_depth: 3, ..Limits::default() };
        let u = unwrap(&data, &limits).unwrap();
        assert!(u.candidates.is_empty());
        assert!(u.root.errors().iter().any(|e| matches!(e, UnwrapError::DepthExceeded { .. })));
        let u = unwrap(&data, &Limits::default()).unwrap();
        assert_eq!(u.candidates[0].origin_chain.len(), 5);
    }

    #[test]
    fn entry_limit() {
        let entries: Vec<(String, Vec<u8>)> = (0..20).map(|i| (format!("{i}.pkl"), EXPLOIT.to_vec())).collect();
        let refs: Vec<(&str, &[u8])> = entries.iter().map(|(n, d)| (n.as_str(), d.as_slice())).collect();
        let z = zip_of(&refs);
        let u = unwrap(&z, &Limits { max_entries: 5, ..Limits::default() }).unwrap();
        assert_eq!(u.candidates.len(), 5);
        assert_eq!(u.root.error, Some(UnwrapError::TooManyEntries { limit: 5 }));
    }

    #[test]
    fn lzma_dict_plausibility() {
        assert!(plausible_lzma_dict(1 << 23));
        assert!(plausible_lzma_dict(3 << 20));
        assert!(!plausible_lzma_dict(12345));
        assert!(!plausible_lzma_dict(0));
    }
}
