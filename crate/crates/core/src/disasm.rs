//! Lexical disassembly of pickle byte streams.
//!
//! Decoding is tolerant: any anomaly ends the current segment and is reported
//! through [`Disassembly::malform_reason`] instead of an error. Nothing is
//! materialized and no stack or memo is simulated here.

use std::fmt;

use num_bigint::BigInt;
use num_traits::ToPrimitive;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::opcodes::{self, code, ArgCodec, OpcodeDescriptor, VOCABULARY, VOCABULARY_SIZE};
use crate::pyrepr;

/// Arguments longer than this are length-checked and skipped, not copied.
pub const MAX_BUFFERED_ARG: u64 = 64 * 1024 * 1024;

#[derive(Debug, Error, PartialEq, Eq)]
pub enum DisasmError {
    #[error("empty input")]
    EmptyInput,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum MalformReason {
    Truncated,
    UnknownOpcode,
    BadArgument,
    MissingStop,
}

impl fmt::Display for MalformReason {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            MalformReason::Truncated => "truncated",
            MalformReason::UnknownOpcode => "unknown-opcode",
            MalformReason::BadArgument => "bad-argument",
            MalformReason::MissingStop => "missing-stop",
        })
    }
}

/// A decoded opcode argument.
#[derive(Debug, Clone, PartialEq)]
pub enum OpArg {
    Int(i64),
    BigInt(BigInt),
    /// `INT` with the literal arguments `00` / `01`.
    Bool(bool),
    Float(f64),
    Text(String),
    /// `GLOBAL` / `INST` module and qualified name.
    Global { module: String, name: String },
    Bytes(Vec<u8>),
    /// Payload above [`MAX_BUFFERED_ARG`]; only its length is kept.
    Skipped { len: u64 },
}

impl OpArg {
    pub fn as_int(&self) -> Option<i64> {
        match self {
            OpArg::Int(v) => Some(*v),
            OpArg::Bool(b) => Some(*b as i64),
            _ => None,
        }
    }

    pub fn as_text(&self) -> Option<&str> {
        match self {
            OpArg::Text(s) => Some(s),
            _ => None,
        }
    }

    fn from_bigint(v: BigInt) -> OpArg {
        match v.to_i64() {
            Some(i) => OpArg::Int(i),
            None => OpArg::BigInt(v),
        }
    }
}

impl fmt::Display for OpArg {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            OpArg::Int(v) => write!(f, "{v}"),
            OpArg::BigInt(v) => write!(f, "{v}"),
            OpArg::Bool(b) => f.write_str(if *b { "True" } else { "False" }),
            OpArg::Float(x) => f.write_str(&pyrepr::repr_float(*x)),
            OpArg::Text(s) => f.write_str(&pyrepr::repr_str(s)),
            OpArg::Global { module, name } => f.write_str(&pyrepr::repr_str(&format!("{module} {name}"))),
            OpArg::Bytes(b) if b.len() > 64 => {
                write!(f, "{}... ({} bytes)", pyrepr::repr_bytes(&b[..64]), b.len())
            }
            OpArg::Bytes(b) => f.write_str(&pyrepr::repr_bytes(b)),
            OpArg::Skipped { len } => write!(f, "<{len} bytes skipped>"),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct OpcodeEvent {
    /// Absolute byte offset in the input.
    pub offset: usize,
    /// Index into [`VOCABULARY`].
    pub index: u8,
    pub arg: Option<OpArg>,
}

impl OpcodeEvent {
    #[inline]
    pub fn descriptor(&self) -> &'static OpcodeDescriptor {
        &VOCABULARY[self.index as usize]
    }

    #[inline]
    pub fn code(&self) -> u8 {
        self.descriptor().code
    }

    #[inline]
    pub fn mnemonic(&self) -> &'static str {
        self.descriptor().mnemonic
    }
}

impl fmt::Display for OpcodeEvent {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{} {}", self.offset, self.mnemonic())?;
        if let Some(arg) = &self.arg {
            write!(f, " {arg}")?;
        }
        Ok(())
    }
}

/// One decoded pickle segment.
#[derive(Debug, Clone, PartialEq)]
pub struct Disassembly {
    pub events: Vec<OpcodeEvent>,
    /// Highest `PROTO` argument seen, or 0.
    pub protocol: u8,
    /// Offset of the segment's first byte in the input.
    pub start: usize,
    /// Bytes consumed by fully decoded events.
    pub byte_len: usize,
    pub well_formed: bool,
    pub malform_reason: Option<MalformReason>,
}

impl Disassembly {
    pub fn mnemonics(&self) -> Vec<&'static str> {
        self.events.iter().map(|e| e.mnemonic()).collect()
    }
}

/// Decode the first pickle in `input`.
pub fn disassemble(input: &[u8]) -> Result<Disassembly, DisasmError> {
    if input.is_empty() {
        return Err(DisasmError::EmptyInput);
    }
    Ok(decode_segment(input, 0, MAX_BUFFERED_ARG))
}

/// Decode every pickle in `input`.
///
/// After a well-formed segment, decoding resumes on the trailing bytes; a
/// trailing segment is kept only if it is itself well formed. The first
/// segment is always returned, malformed or not.
pub fn disassemble_all(input: &[u8]) -> Result<Vec<Disassembly>, DisasmError> {
    let first = disassemble(input)?;
    let mut next = first.start + first.byte_len;
    let resume = first.well_formed;
    let mut segments = vec![first];
    while resume && next < input.len() {
        let seg = decode_segment(input, next, MAX_BUFFERED_ARG);
        if !seg.well_formed {
            break;
        }
        next = seg.start + seg.byte_len;
        segments.push(seg);
    }
    Ok(segments)
}

pub(crate) fn decode_segment(input: &[u8], start: usize, max_buffered: u64) -> Disassembly {
    let mut cursor = Cursor { data: input, pos: start, max_buffered };
    let mut events = Vec::with_capacity(((input.len() - start) / 8).clamp(4, 1 << 16));
    let mut protocol = 0u8;
    let reason = loop {
        let offset = cursor.pos;
        let Some(byte) = cursor.byte() else {
            break Some(MalformReason::MissingStop);
        };
        let Some(index) = opcodes::index_of(byte) else {
            cursor.pos = offset;
            break Some(MalformReason::UnknownOpcode);
        };
        let desc = &VOCABULARY[index];
        let arg = match cursor.read_arg(desc.arg_codec) {
            Ok(arg) => arg,
            Err(reason) => {
                cursor.pos = offset;
                break Some(reason);
            }
        };
        if byte == code::PROTO {
            if let Some(OpArg::Int(p)) = arg {
                protocol = protocol.max(p as u8);
            }
        }
        events.push(OpcodeEvent { offset, index: index as u8, arg });
        if byte == code::STOP {
            break None;
        }
    };
    Disassembly {
        events,
        protocol,
        start,
        byte_len: cursor.pos - start,
        well_formed: reason.is_none(),
        malform_reason: reason,
    }
}

/// Marks opcodes the counting loop hands to [`Cursor::skip_arg`].
const SLOW: u8 = u8::MAX;

/// Argument width per code point for opcodes with a fixed-width argument
/// (0 for none), [`SLOW`] for variable-width arguments, `STOP` and unknown codes.
static FIXED_WIDTH: [u8; 256] = {
    let mut table = [SLOW; 256];
    let mut i = 0;
    while i < VOCABULARY_SIZE {
        let d = &VOCABULARY[i];
        table[d.code as usize] = match d.arg_codec {
            ArgCodec::None => 0,
            ArgCodec::Uint1 => 1,
            ArgCodec::Uint2 => 2,
            ArgCodec::Uint4 | ArgCodec::Int4 => 4,
            ArgCodec::Uint8 | ArgCodec::Float8BigEndian => 8,
            _ => SLOW,
        };
        i += 1;
    }
    table[code::STOP as usize] = SLOW;
    table
};

/// Opcode counts of one segment, the new position and the malformation.
fn count_segment(input: &[u8], start: usize, counts: &mut [u64; VOCABULARY_SIZE]) -> (usize, Option<MalformReason>) {
    let mut pos = start;
    loop {
        let Some(&byte) = input.get(pos) else {
            return (pos, Some(MalformReason::MissingStop));
        };
        let width = FIXED_WIDTH[byte as usize];
        let Some(index) = opcodes::index_of(byte) else {
            return (pos, Some(MalformReason::UnknownOpcode));
        };
        if width != SLOW {
            let next = pos + 1 + width as usize;
            if next > input.len() {
                return (pos, Some(MalformReason::Truncated));
            }
            counts[index] += 1;
            pos = next;
            continue;
        }
        let mut cursor = Cursor { data: input, pos: pos + 1, max_buffered: MAX_BUFFERED_ARG };
        if let Err(reason) = cursor.skip_arg(VOCABULARY[index].arg_codec) {
            return (pos, Some(reason));
        }
        counts[index] += 1;
        pos = cursor.pos;
        if byte == code::STOP {
            return (pos, None);
        }
    }
}

/// Opcode counts of every pickle in `input`, pooled over the segments
/// [`disassemble_all`] would return, without materializing arguments.
pub fn count_all(input: &[u8]) -> Result<[u64; VOCABULARY_SIZE], DisasmError> {
    if input.is_empty() {
        return Err(DisasmError::EmptyInput);
    }
    let mut counts = [0u64; VOCABULARY_SIZE];
    let (mut next, reason) = count_segment(input, 0, &mut counts);
    if reason.is_some() {
        return Ok(counts);
    }
    while next < input.len() {
        let mut seg = [0u64; VOCABULARY_SIZE];
        let (end, reason) = count_segment(input, next, &mut seg);
        if reason.is_some() {
            break;
        }
        counts.iter_mut().zip(seg).for_each(|(c, s)| *c += s);
        next = end;
    }
    Ok(counts)
}

struct Cursor<'a> {
    data: &'a [u8],
    pos: usize,
    max_buffered: u64,
}

type ArgResult = Result<Option<OpArg>, MalformReason>;

impl<'a> Cursor<'a> {
    #[inline]
    fn byte(&mut self) -> Option<u8> {
        let b = *self.data.get(self.pos)?;
        self.pos += 1;
        Some(b)
    }

    #[inline]
    fn take(&mut self, n: usize) -> Result<&'a [u8], MalformReason> {
        let end = self.pos.checked_add(n).ok_or(MalformReason::Truncated)?;
        let s = self.data.get(self.pos..end).ok_or(MalformReason::Truncated)?;
        self.pos = end;
        Ok(s)
    }

    fn array<const N: usize>(&mut self) -> Result<[u8; N], MalformReason> {
        Ok(self.take(N)?.try_into().expect("slice of length N"))
    }

    fn line(&mut self) -> Result<&'a [u8], MalformReason> {
        let rest = &self.data[self.pos..];
        let nl = rest.iter().position(|&b| b == b'\n').ok_or(MalformReason::Truncated)?;
        self.pos += nl + 1;
        Ok(&rest[..nl])
    }

    /// Length-prefixed payload: returns `None` when it exceeds the buffering
    /// limit (the bytes are still skipped).
    fn payload(&mut self, len: u64) -> Result<Option<&'a [u8]>, MalformReason> {
        let remaining = (self.data.len() - self.pos) as u64;
        if len > remaining {
            return Err(MalformReason::Truncated);
        }
        let slice = self.take(len as usize)?;
        Ok((len <= self.max_buffered).then_some(slice))
    }

    fn bytes_arg(&mut self, len: u64) -> ArgResult {
        Ok(Some(match self.payload(len)? {
            Some(b) => OpArg::Bytes(b.to_vec()),
            None => OpArg::Skipped { len },
        }))
    }

    fn latin1_arg(&mut self, len: u64) -> ArgResult {
        Ok(Some(match self.payload(len)? {
            Some(b) => OpArg::Text(latin1(b)),
            None => OpArg::Skipped { len },
        }))
    }

    fn utf8_arg(&mut self, len: u64) -> ArgResult {
        Ok(Some(match self.payload(len)? {
            Some(b) => OpArg::Text(String::from_utf8_lossy(b).into_owned()),
            None => OpArg::Skipped { len },
        }))
    }

    /// Advance past a payload of `len` bytes with the same checks as [`Self::payload`].
    #[inline]
    fn skip(&mut self, len: u64) -> Result<(), MalformReason> {
        if len > (self.data.len() - self.pos) as u64 {
            return Err(MalformReason::Truncated);
        }
        self.pos += len as usize;
        Ok(())
    }

    /// Same acceptance as [`Self::read_arg`] without building the argument.
    /// Text-line arguments are still parsed since parsing is their check.
    #[inline]
    fn skip_arg(&mut self, codec: ArgCodec) -> Result<(), MalformReason> {
        use MalformReason::BadArgument;
        match codec {
            ArgCodec::None => Ok(()),
            ArgCodec::Uint1 => self.skip(1),
            ArgCodec::Uint2 => self.skip(2),
            ArgCodec::Uint4 | ArgCodec::Int4 => self.skip(4),
            ArgCodec::Uint8 | ArgCodec::Float8BigEndian => self.skip(8),
            ArgCodec::String1 | ArgCodec::Bytes1 | ArgCodec::Unicode1 | ArgCodec::Long1 => {
                let n = self.array::<1>()?[0];
                self.skip(n as u64)
            }
            ArgCodec::String4 | ArgCodec::Long4 => {
                let n = i32::from_le_bytes(self.array()?);
                if n < 0 {
                    return Err(BadArgument);
                }
                self.skip(n as u64)
            }
            ArgCodec::Bytes4 | ArgCodec::Unicode4 => {
                let n = u32::from_le_bytes(self.array()?);
                self.skip(n as u64)
            }
            ArgCodec::Bytes8 | ArgCodec::ByteArray8 | ArgCodec::Unicode8 => {
                let n = u64::from_le_bytes(self.array()?);
                if n > i64::MAX as u64 {
                    return Err(BadArgument);
                }
                self.skip(n)
            }
            _ => self.read_arg(codec).map(drop),
        }
    }

    fn read_arg(&mut self, codec: ArgCodec) -> ArgResult {
        use MalformReason::BadArgument;
        match codec {
            ArgCodec::None => Ok(None),
            ArgCodec::Uint1 => Ok(Some(OpArg::Int(self.array::<1>()?[0] as i64))),
            ArgCodec::Uint2 => Ok(Some(OpArg::Int(u16::from_le_bytes(self.array()?) as i64))),
            ArgCodec::Uint4 => Ok(Some(OpArg::Int(u32::from_le_bytes(self.array()?) as i64))),
            ArgCodec::Uint8 => Ok(Some(OpArg::from_bigint(u64::from_le_bytes(self.array()?).into()))),
            ArgCodec::Int4 => Ok(Some(OpArg::Int(i32::from_le_bytes(self.array()?) as i64))),
            ArgCodec::Float8BigEndian => Ok(Some(OpArg::Float(f64::from_be_bytes(self.array()?)))),
            ArgCodec::DecimalIntNewline => {
                let line = self.line()?;
                match line {
                    b"00" => Ok(Some(OpArg::Bool(false))),
                    b"01" => Ok(Some(OpArg::Bool(true))),
                    _ => parse_python_int(line).map(|v| Some(OpArg::from_bigint(v))).ok_or(BadArgument),
                }
            }
            ArgCodec::DecimalLongNewline => {
                let line = self.line()?;
                let digits = line.strip_suffix(b"L").unwrap_or(line);
                parse_python_int(digits).map(|v| Some(OpArg::from_bigint(v))).ok_or(BadArgument)
            }
            ArgCodec::FloatAsciiNewline => {
                let line = self.line()?;
                parse_python_float(line).map(|x| Some(OpArg::Float(x))).ok_or(BadArgument)
            }
            ArgCodec::StringNewline => {
                let line = self.line()?;
                let inner = strip_quotes(line).ok_or(BadArgument)?;
                let decoded = escape_decode(inner).ok_or(BadArgument)?;
                Ok(Some(OpArg::Text(latin1(&decoded))))
            }
            ArgCodec::RawLine => {
                let line = self.line()?;
                Ok(Some(OpArg::Text(escaped_line(line)?)))
            }
            ArgCodec::RawLinePair => {
                let module = escaped_line(self.line()?)?;
                let name = escaped_line(self.line()?)?;
                Ok(Some(OpArg::Global { module, name }))
            }
            ArgCodec::UnicodeNewline => {
                let line = self.line()?;
                raw_unicode_escape_decode(line).map(|s| Some(OpArg::Text(s))).ok_or(BadArgument)
            }
            ArgCodec::String1 => {
                let n = self.array::<1>()?[0] as u64;
                self.latin1_arg(n)
            }
            ArgCodec::String4 => {
                let n = i32::from_le_bytes(self.array()?);
                if n < 0 {
                    return Err(BadArgument);
                }
                self.latin1_arg(n as u64)
            }
            ArgCodec::Bytes1 => {
                let n = self.array::<1>()?[0] as u64;
                self.bytes_arg(n)
            }
            ArgCodec::Bytes4 => {
                let n = u32::from_le_bytes(self.array()?) as u64;
                self.bytes_arg(n)
            }
            ArgCodec::Bytes8 | ArgCodec::ByteArray8 => {
                let n = u64::from_le_bytes(self.array()?);
                if n > i64::MAX as u64 {
                    return Err(BadArgument);
                }
                self.bytes_arg(n)
            }
            ArgCodec::Unicode1 => {
                let n = self.array::<1>()?[0] as u64;
                self.utf8_arg(n)
            }
            ArgCodec::Unicode4 => {
                let n = u32::from_le_bytes(self.array()?) as u64;
                self.utf8_arg(n)
            }
            ArgCodec::Unicode8 => {
                let n = u64::from_le_bytes(self.array()?);
                if n > i64::MAX as u64 {
                    return Err(BadArgument);
                }
                self.utf8_arg(n)
            }
            ArgCodec::Long1 => {
                let n = self.array::<1>()?[0] as u64;
                Ok(Some(match self.payload(n)? {
                    Some(b) => OpArg::from_bigint(BigInt::from_signed_bytes_le(b)),
                    None => OpArg::Skipped { len: n },
                }))
            }
            ArgCodec::Long4 => {
                let n = i32::from_le_bytes(self.array()?);
                if n < 0 {
                    return Err(BadArgument);
                }
                Ok(Some(match self.payload(n as u64)? {
                    Some(b) => OpArg::from_bigint(BigInt::from_signed_bytes_le(b)),
                    None => OpArg::Skipped { len: n as u64 },
                }))
            }
        }
    }
}

fn latin1(b: &[u8]) -> String {
    b.iter().map(|&c| c as char).collect()
}

fn escaped_line(line: &[u8]) -> Result<String, MalformReason> {
    let decoded = escape_decode(line).ok_or(MalformReason::BadArgument)?;
    Ok(match String::from_utf8(decoded) {
        Ok(s) => s,
        Err(e) => latin1(e.as_bytes()),
    })
}

fn strip_quotes(line: &[u8]) -> Option<&[u8]> {
    for q in *b"\"'" {
        if line.first() == Some(&q) {
            if line.len() < 2 || line.last() != Some(&q) {
                return (line.len() == 1).then_some(&line[1..]);
            }
            return Some(&line[1..line.len() - 1]);
        }
    }
    None
}

/// Backslash-escape decoding as applied to `bytes` literals.
fn escape_decode(s: &[u8]) -> Option<Vec<u8>> {
    let mut out = Vec::with_capacity(s.len());
    let mut i = 0;
    while i < s.len() {
        let c = s[i];
        i += 1;
        if c != b'\\' {
            out.push(c);
            continue;
        }
        let e = *s.get(i)?;
        i += 1;
        match e {
            b'\n' => {}
            b'\\' | b'\'' | b'"' => out.push(e),
            b'b' => out.push(0x08),
            b'f' => out.push(0x0c),
            b't' => out.push(b'\t'),
            b'n' => out.push(b'\n'),
            b'r' => out.push(b'\r'),
            b'v' => out.push(0x0b),
            b'a' => out.push(0x07),
            b'0'..=b'7' => {
                let mut v = (e - b'0') as u32;
                for _ in 0..2 {
                    match s.get(i) {
                        Some(&d @ b'0'..=b'7') => {
                            v = v * 8 + (d - b'0') as u32;
                            i += 1;
                        }
                        _ => break,
                    }
                }
                out.push(v as u8);
            }
            b'x' => {
                let hi = hex_val(*s.get(i)?)?;
                let lo = hex_val(*s.get(i + 1)?)?;
                i += 2;
                out.push(hi * 16 + lo);
            }
            other => {
                out.push(b'\\');
                out.push(other);
            }
        }
    }
    Some(out)
}

fn hex_val(c: u8) -> Option<u8> {
    (c as char).to_digit(16).map(|d| d as u8)
}

/// `raw-unicode-escape`: bytes map to code points, except `\uXXXX` and
/// `\UXXXXXXXX` preceded by an odd run of backslashes.
fn raw_unicode_escape_decode(s: &[u8]) -> Option<String> {
    let mut out = String::with_capacity(s.len());
    let mut i = 0;
    while i < s.len() {
        if s[i] != b'\\' {
            out.push(s[i] as char);
            i += 1;
            continue;
        }
        let run_start = i;
        while i < s.len() && s[i] == b'\\' {
            out.push('\\');
            i += 1;
        }
        let odd = (i - run_start) % 2 == 1;
        if !odd || i >= s.len() || (s[i] != b'u' && s[i] != b'U') {
            continue;
        }
        out.pop();
        let width = if s[i] == b'u' { 4 } else { 8 };
        i += 1;
        let hex = s.get(i..i + width)?;
        let mut cp = 0u32;
        for &h in hex {
            cp = cp * 16 + hex_val(h)? as u32;
        }
        i += width;
        if cp > 0x10ffff {
            return None;
        }
        out.push(char::from_u32(cp).unwrap_or('\u{fffd}'));
    }
    Some(out)
}

/// `int(s)` semantics: surrounding whitespace, optional sign, digits with
/// single underscores between them.
fn parse_python_int(raw: &[u8]) -> Option<BigInt> {
    let s = std::str::from_utf8(raw).ok()?.trim();
    let (neg, body) = match s.as_bytes().first()? {
        b'-' => (true, &s[1..]),
        b'+' => (false, &s[1..]),
        _ => (false, s),
    };
    if body.is_empty() || body.starts_with('_') || body.ends_with('_') || body.contains("__") {
        return None;
    }
    let digits: String = body.chars().filter(|&c| c != '_').collect();
    if !digits.bytes().all(|b| b.is_ascii_digit()) {
        return None;
    }
    let v: BigInt = digits.parse().ok()?;
    Some(if neg { -v } else { v })
}

fn parse_python_float(raw: &[u8]) -> Option<f64> {
    let s = std::str::from_utf8(raw).ok()?.trim();
    if s.contains("__") || s.starts_with('_') || s.ends_with('_') {
        return None;
    }
    let cleaned: String = s.chars().filter(|&c| c != '_').collect();
    cleaned.parse().ok()
}

#[cfg(test)]
mod tests {
    use super::*;

    fn events(d: &Disassembly) -> Vec<(usize, &'static str, Option<OpArg>)> {
        d.events.iter().map(|e| (e.offset, e.mnemonic(), e.arg.clone())).collect()
    }

    #[test]
    fn none_pickle() {
        let d = disassemble(&[0x4E, 0x2E]).unwrap();
        assert_eq!(events(&d), vec![(0, "NONE", None), (1, "STOP", None)]);
        assert!(d.well_formed);
        assert_eq!(d.malform_reason, None);
        assert_eq!(d.byte_len, 2);
    }

    #[test]
    fn protocol2_empty_list() {
        let d = disassemble(&[0x80, 0x02, 0x5D, 0x71, 0x00, 0x2E]).unwrap();
        assert_eq!(
            events(&d),
            vec![
                (0, "PROTO", Some(OpArg::Int(2))),
                (2, "EMPTY_LIST", None),
                (3, "BINPUT", Some(OpArg::Int(0))),
                (5, "STOP", None),
            ]
        );
        assert_eq!(d.protocol, 2);
        assert!(d.well_formed);
    }

    #[test]
    fn classic_exploit_stream() {
        let d = disassemble(b"cos\nsystem\n(S'echo hi'\ntR.").unwrap();
        assert_eq!(d.mnemonics(), ["GLOBAL", "MARK", "STRING", "TUPLE", "REDUCE", "STOP"]);
        assert_eq!(d.events[0].arg, Some(OpArg::Global { module: "os".into(), name: "system".into() }));
        assert_eq!(d.events[2].arg, Some(OpArg::Text("echo hi".into())));
        assert!(d.well_formed);
    }

    #[test]
    fn truncated_list_is_missing_stop() {
        let d = disassemble(&[0x80, 0x02, 0x5D]).unwrap();
        assert_eq!(d.mnemonics(), ["PROTO", "EMPTY_LIST"]);
        assert!(!d.well_formed);
        assert_eq!(d.malform_reason, Some(MalformReason::MissingStop));
    }

    #[test]
    fn empty_input_is_an_error() {
        assert_eq!(disassemble(&[]), Err(DisasmError::EmptyInput));
    }

    #[test]
    fn unknown_opcode_ends_segment() {
        let d = disassemble(&[b'N', 0x00, b'.']).unwrap();
        assert_eq!(d.mnemonics(), ["NONE"]);
        assert_eq!(d.malform_reason, Some(MalformReason::UnknownOpcode));
        assert_eq!(d.byte_len, 1);
    }

    #[test]
    fn truncated_argument() {
        let d = disassemble(&[b'X', 10, 0, 0, 0, b'a', b'b']).unwrap();
        assert!(d.events.is_empty());
        assert_eq!(d.malform_reason, Some(MalformReason::Truncated));
        let d = disassemble(b"cos\nsys").unwrap();
        assert_eq!(d.malform_reason, Some(MalformReason::Truncated));
    }

    #[test]
    fn bad_arguments() {
        for stream in [&b"S echo\n."[..], b"Iabc\n.", b"T\xff\xff\xff\xff.", b"Fnope\n.", b"S'x\\x4'\n."] {
            let d = disassemble(stream).unwrap();
            assert_eq!(d.malform_reason, Some(MalformReason::BadArgument), "{stream:?}");
        }
    }

    #[test]
    fn decimal_int_forms() {
        let d = disassemble(b"I01\nI00\nI-42\nL12345678901234567890123L\n.").unwrap();
        let args: Vec<_> = d.events.iter().map(|e| e.arg.clone()).collect();
        assert_eq!(args[0], Some(OpArg::Bool(true)));
        assert_eq!(args[1], Some(OpArg::Bool(false)));
        assert_eq!(args[2], Some(OpArg::Int(-42)));
        assert_eq!(args[3], Some(OpArg::BigInt("12345678901234567890123".parse().unwrap())));
    }

    #[test]
    fn long1_is_little_endian_twos_complement() {
        let d = disassemble(&[0x8a, 0x02, 0xff, 0x7f, b'.']).unwrap();
        assert_eq!(d.events[0].arg, Some(OpArg::Int(0x7fff)));
        let d = disassemble(&[0x8a, 0x01, 0xff, b'.']).unwrap();
        assert_eq!(d.events[0].arg, Some(OpArg::Int(-1)));
        let d = disassemble(&[0x8a, 0x00, b'.']).unwrap();
        assert_eq!(d.events[0].arg, Some(OpArg::Int(0)));
    }

    #[test]
    fn raw_unicode_escape() {
        assert_eq!(raw_unicode_escape_decode(b"a\xe9b").unwrap(), "aéb");
        assert_eq!(raw_unicode_escape_decode(br"\\u0041").unwrap(), r"\\u0041");
        assert_eq!(raw_unicode_escape_decode(br"\\A").unwrap(), r"\\A");
        assert_eq!(raw_unicode_escape_decode(b"\xe9").unwrap(), "é");
        assert!(raw_unicode_escape_decode(br"\u00").is_none());
    }

    #[test]
    fn escape_decoding() {
        assert_eq!(escape_decode(br"a\nb\x41\101\q").unwrap(), b"a\nbAA\\q");
        assert!(escape_decode(b"abc\\").is_none());
    }

    #[test]
    fn frame_is_recorded_not_enforced() {
        let mut s = vec![0x80, 0x04, 0x95];
        s.extend_from_slice(&1000u64.to_le_bytes());
        s.extend_from_slice(b"N.");
        let d = disassemble(&s).unwrap();
        assert_eq!(d.mnemonics(), ["PROTO", "FRAME", "NONE", "STOP"]);
        assert_eq!(d.events[1].arg, Some(OpArg::Int(1000)));
        assert!(d.well_formed);
    }

    #[test]
    fn oversized_payload_is_skipped() {
        let mut s = vec![b'B'];
        s.extend_from_slice(&20u32.to_le_bytes());
        s.extend_from_slice(&[7u8; 20]);
        s.push(b'.');
        let d = decode_segment(&s, 0, 16);
        assert_eq!(d.events[0].arg, Some(OpArg::Skipped { len: 20 }));
        assert_eq!(d.events[1].offset, 25);
        assert!(d.well_formed);
    }

    #[test]
    fn concatenated_segments() {
        let s = b"N.\x80\x02]q\x00.";
        let segs = disassemble_all(s).unwrap();
        assert_eq!(segs.len(), 2);
        assert_eq!(segs[1].start, 2);
        assert_eq!(segs[1].events[0].offset, 2);
        // malformed trailer is dropped
        let segs = disassemble_all(b"N.\x80\x02]").unwrap();
        assert_eq!(segs.len(), 1);
        // a malformed first segment is still returned
        let segs = disassemble_all(b"]").unwrap();
        assert_eq!(segs.len(), 1);
        assert!(!segs[0].well_formed);
    }

    #[test]
    fn event_display() {
        let d = disassemble(b"cos\nsystem\n(S'echo hi'\ntR.").unwrap();
        let lines: Vec<String> = d.events.iter().map(|e| e.to_string()).collect();
        assert_eq!(lines[0], "0 GLOBAL 'os system'");
        assert_eq!(lines[2], "12 STRING 'echo hi'");
    }
}
