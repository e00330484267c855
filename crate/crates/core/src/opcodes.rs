//! The pickle opcode vocabulary.
//!
//! The table covers protocols 0 through 5 and is sorted by code point. The
//! position of a descriptor in [`VOCABULARY`] is the dimension it occupies in
//! a [`FeatureVector`](crate::features::FeatureVector).

use sha2::{Digest, Sha256};
use std::fmt;
use std::sync::OnceLock;

/// Number of opcodes defined by protocols 0-5.
pub const VOCABULARY_SIZE: usize = 68;

/// How the bytes following an opcode are decoded.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum ArgCodec {
    None,
    /// `decimalnl_short`: ASCII integer terminated by `\n` (`00`/`01` are booleans).
    DecimalIntNewline,
    /// `decimalnl_long`: ASCII integer with optional trailing `L`, `\n` terminated.
    DecimalLongNewline,
    /// `stringnl`: quoted, escape-encoded string terminated by `\n`.
    StringNewline,
    /// `stringnl_noescape`: raw line, no quote stripping.
    RawLine,
    /// `stringnl_noescape_pair`: two raw lines (module, name).
    RawLinePair,
    /// `unicodestringnl`: raw-unicode-escape text terminated by `\n`.
    UnicodeNewline,
    Uint1,
    Uint2,
    Uint4,
    Uint8,
    Int4,
    Float8BigEndian,
    FloatAsciiNewline,
    /// Latin-1 string with a 1-byte length prefix.
    String1,
    /// Latin-1 string with a signed 4-byte length prefix.
    String4,
    Bytes1,
    Bytes4,
    Bytes8,
    ByteArray8,
    Unicode1,
    Unicode4,
    Unicode8,
    Long1,
    Long4,
}

impl ArgCodec {
    pub fn name(self) -> &'static str {
        match self {
            ArgCodec::None => "none",
            ArgCodec::DecimalIntNewline => "decimalnl_short",
            ArgCodec::DecimalLongNewline => "decimalnl_long",
            ArgCodec::StringNewline => "stringnl",
            ArgCodec::RawLine => "stringnl_noescape",
            ArgCodec::RawLinePair => "stringnl_noescape_pair",
            ArgCodec::UnicodeNewline => "unicodestringnl",
            ArgCodec::Uint1 => "uint1",
            ArgCodec::Uint2 => "uint2",
            ArgCodec::Uint4 => "uint4",
            ArgCodec::Uint8 => "uint8",
            ArgCodec::Int4 => "int4",
            ArgCodec::Float8BigEndian => "float8",
            ArgCodec::FloatAsciiNewline => "floatnl",
            ArgCodec::String1 => "string1",
            ArgCodec::String4 => "string4",
            ArgCodec::Bytes1 => "bytes1",
            ArgCodec::Bytes4 => "bytes4",
            ArgCodec::Bytes8 => "bytes8",
            ArgCodec::ByteArray8 => "bytearray8",
            ArgCodec::Unicode1 => "unicodestring1",
            ArgCodec::Unicode4 => "unicodestring4",
            ArgCodec::Unicode8 => "unicodestring8",
            ArgCodec::Long1 => "long1",
            ArgCodec::Long4 => "long4",
        }
    }

    /// Width of the argument when it is fixed, or of its length prefix when
    /// it is length-prefixed. `None` for newline-terminated codecs.
    pub fn fixed_width(self) -> Option<usize> {
        match self {
            ArgCodec::None => Some(0),
            ArgCodec::Uint1 | ArgCodec::String1 | ArgCodec::Bytes1 | ArgCodec::Unicode1 | ArgCodec::Long1 => Some(1),
            ArgCodec::Uint2 => Some(2),
            ArgCodec::Uint4
            | ArgCodec::Int4
            | ArgCodec::String4
            | ArgCodec::Bytes4
            | ArgCodec::Unicode4
            | ArgCodec::Long4 => Some(4),
            ArgCodec::Uint8
            | ArgCodec::Float8BigEndian
            | ArgCodec::Bytes8
            | ArgCodec::ByteArray8
            | ArgCodec::Unicode8 => Some(8),
            ArgCodec::DecimalIntNewline
            | ArgCodec::DecimalLongNewline
            | ArgCodec::StringNewline
            | ArgCodec::RawLine
            | ArgCodec::RawLinePair
            | ArgCodec::UnicodeNewline
            | ArgCodec::FloatAsciiNewline => None,
        }
    }
}

/// One entry of the opcode table.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct OpcodeDescriptor {
    pub code: u8,
    pub mnemonic: &'static str,
    pub arg_codec: ArgCodec,
    pub protocol_introduced: u8,
}

impl fmt::Display for OpcodeDescriptor {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.mnemonic)
    }
}

const fn op(code: u8, mnemonic: &'static str, arg_codec: ArgCodec, protocol_introduced: u8) -> OpcodeDescriptor {
    OpcodeDescriptor { code, mnemonic, arg_codec, protocol_introduced }
}

use ArgCodec as A;

pub static VOCABULARY: [OpcodeDescriptor; VOCABULARY_SIZE] = [
    op(b'(', "MARK", A::None, 0),
    op(b')', "EMPTY_TUPLE", A::None, 1),
    op(b'.', "STOP", A::None, 0),
    op(b'0', "POP", A::None, 0),
    op(b'1', "POP_MARK", A::None, 1),
    op(b'2', "DUP", A::None, 0),
    op(b'B', "BINBYTES", A::Bytes4, 3),
    op(b'C', "SHORT_BINBYTES", A::Bytes1, 3),
    op(b'F', "FLOAT", A::FloatAsciiNewline, 0),
    op(b'G', "BINFLOAT", A::Float8BigEndian, 1),
    op(b'I', "INT", A::DecimalIntNewline, 0),
    op(b'J', "BININT", A::Int4, 1),
    op(b'K', "BININT1", A::Uint1, 1),
    op(b'L', "LONG", A::DecimalLongNewline, 0),
    op(b'M', "BININT2", A::Uint2, 1),
    op(b'N', "NONE", A::None, 0),
    op(b'P', "PERSID", A::RawLine, 0),
    op(b'Q', "BINPERSID", A::None, 1),
    op(b'R', "REDUCE", A::None, 0),
    op(b'S', "STRING", A::StringNewline, 0),
    op(b'T', "BINSTRING", A::String4, 1),
    op(b'U', "SHORT_BINSTRING", A::String1, 1),
    op(b'V', "UNICODE", A::UnicodeNewline, 0),
    op(b'X', "BINUNICODE", A::Unicode4, 1),
    op(b']', "EMPTY_LIST", A::None, 1),
    op(b'a', "APPEND", A::None, 0),
    op(b'b', "BUILD", A::None, 0),
    op(b'c', "GLOBAL", A::RawLinePair, 0),
    op(b'd', "DICT", A::None, 0),
    op(b'e', "APPENDS", A::None, 1),
    op(b'g', "GET", A::DecimalIntNewline, 0),
    op(b'h', "BINGET", A::Uint1, 1),
    op(b'i', "INST", A::RawLinePair, 0),
    op(b'j', "LONG_BINGET", A::Uint4, 1),
    op(b'l', "LIST", A::None, 0),
    op(b'o', "OBJ", A::None, 1),
    op(b'p', "PUT", A::DecimalIntNewline, 0),
    op(b'q', "BINPUT", A::Uint1, 1),
    op(b'r', "LONG_BINPUT", A::Uint4, 1),
    op(b's', "SETITEM", A::None, 0),
    op(b't', "TUPLE", A::None, 0),
    op(b'u', "SETITEMS", A::None, 1),
    op(b'}', "EMPTY_DICT", A::None, 1),
    op(0x80, "PROTO", A::Uint1, 2),
    op(0x81, "NEWOBJ", A::None, 2),
    op(0x82, "EXT1", A::Uint1, 2),
    op(0x83, "EXT2", A::Uint2, 2),
    op(0x84, "EXT4", A::Int4, 2),
    op(0x85, "TUPLE1", A::None, 2),
    op(0x86, "TUPLE2", A::None, 2),
    op(0x87, "TUPLE3", A::None, 2),
    op(0x88, "NEWTRUE", A::None, 2),
    op(0x89, "NEWFALSE", A::None, 2),
    op(0x8a, "LONG1", A::Long1, 2),
    op(0x8b, "LONG4", A::Long4, 2),
    op(0x8c, "SHORT_BINUNICODE", A::Unicode1, 4),
    op(0x8d, "BINUNICODE8", A::Unicode8, 4),
    op(0x8e, "BINBYTES8", A::Bytes8, 4),
    op(0x8f, "EMPTY_SET", A::None, 4),
    op(0x90, "ADDITEMS", A::None, 4),
    op(0x91, "FROZENSET", A::None, 4),
    op(0x92, "NEWOBJ_EX", A::None, 4),
    op(0x93, "STACK_GLOBAL", A::None, 4),
    op(0x94, "MEMOIZE", A::None, 4),
    op(0x95, "FRAME", A::Uint8, 4),
    op(0x96, "BYTEARRAY8", A::ByteArray8, 5),
    op(0x97, "NEXT_BUFFER", A::None, 5),
    op(0x98, "READONLY_BUFFER", A::None, 5),
];

const NO_INDEX: u8 = u8::MAX;

static CODE_TO_INDEX: [u8; 256] = {
    let mut table = [NO_INDEX; 256];
    let mut i = 0;
    while i < VOCABULARY_SIZE {
        table[VOCABULARY[i].code as usize] = i as u8;
        i += 1;
    }
    table
};

/// Raw code points, for matching in the decoder and the stack simulator.
pub mod code {
    pub const MARK: u8 = b'(';
    pub const EMPTY_TUPLE: u8 = b')';
    pub const STOP: u8 = b'.';
    pub const POP: u8 = b'0';
    pub const POP_MARK: u8 = b'1';
    pub const DUP: u8 = b'2';
    pub const BINBYTES: u8 = b'B';
    pub const SHORT_BINBYTES: u8 = b'C';
    pub const FLOAT: u8 = b'F';
    pub const BINFLOAT: u8 = b'G';
    pub const INT: u8 = b'I';
    pub const BININT: u8 = b'J';
    pub const BININT1: u8 = b'K';
    pub const LONG: u8 = b'L';
    pub const BININT2: u8 = b'M';
    pub const NONE: u8 = b'N';
    pub const PERSID: u8 = b'P';
    pub const BINPERSID: u8 = b'Q';
    pub const REDUCE: u8 = b'R';
    pub const STRING: u8 = b'S';
    pub const BINSTRING: u8 = b'T';
    pub const SHORT_BINSTRING: u8 = b'U';
    pub const UNICODE: u8 = b'V';
    pub const BINUNICODE: u8 = b'X';
    pub const EMPTY_LIST: u8 = b']';
    pub const APPEND: u8 = b'a';
    pub const BUILD: u8 = b'b';
    pub const GLOBAL: u8 = b'c';
    pub const DICT: u8 = b'd';
    pub const APPENDS: u8 = b'e';
    pub const GET: u8 = b'g';
    pub const BINGET: u8 = b'h';
    pub const INST: u8 = b'i';
    pub const LONG_BINGET: u8 = b'j';
    pub const LIST: u8 = b'l';
    pub const OBJ: u8 = b'o';
    pub const PUT: u8 = b'p';
    pub const BINPUT: u8 = b'q';
    pub const LONG_BINPUT: u8 = b'r';
    pub const SETITEM: u8 = b's';
    pub const TUPLE: u8 = b't';
    pub const SETITEMS: u8 = b'u';
    pub const EMPTY_DICT: u8 = b'}';
    pub const PROTO: u8 = 0x80;
    pub const NEWOBJ: u8 = 0x81;
    pub const EXT1: u8 = 0x82;
    pub const EXT2: u8 = 0x83;
    pub const EXT4: u8 = 0x84;
    pub const TUPLE1: u8 = 0x85;
    pub const TUPLE2: u8 = 0x86;
    pub const TUPLE3: u8 = 0x87;
    pub const NEWTRUE: u8 = 0x88;
    pub const NEWFALSE: u8 = 0x89;
    pub const LONG1: u8 = 0x8a;
    pub const LONG4: u8 = 0x8b;
    pub const SHORT_BINUNICODE: u8 = 0x8c;
    pub const BINUNICODE8: u8 = 0x8d;
    pub const BINBYTES8: u8 = 0x8e;
    pub const EMPTY_SET: u8 = 0x8f;
    pub const ADDITEMS: u8 = 0x90;
    pub const FROZENSET: u8 = 0x91;
    pub const NEWOBJ_EX: u8 = 0x92;
    pub const STACK_GLOBAL: u8 = 0x93;
    pub const MEMOIZE: u8 = 0x94;
    pub const FRAME: u8 = 0x95;
    pub const BYTEARRAY8: u8 = 0x96;
    pub const NEXT_BUFFER: u8 = 0x97;
    pub const READONLY_BUFFER: u8 = 0x98;
}

/// Opcodes through which unpickling can import or invoke arbitrary callables.
pub const RCE_CAPABLE: [u8; 6] = [code::GLOBAL, code::INST, code::NEWOBJ, code::NEWOBJ_EX, code::OBJ, code::REDUCE];

/// The fixed 68-entry opcode table.
pub fn opcode_vocabulary() -> &'static [OpcodeDescriptor] {
    &VOCABULARY
}

/// Vocabulary index (feature dimension) of a code point.
#[inline]
pub fn index_of(code: u8) -> Option<usize> {
    match CODE_TO_INDEX[code as usize] {
        NO_INDEX => None,
        i => Some(i as usize),
    }
}

#[inline]
pub fn descriptor(code: u8) -> Option<&'static OpcodeDescriptor> {
    index_of(code).map(|i| &VOCABULARY[i])
}

pub fn by_mnemonic(mnemonic: &str) -> Option<&'static OpcodeDescriptor> {
    VOCABULARY.iter().find(|d| d.mnemonic == mnemonic)
}

pub fn is_opcode(byte: u8) -> bool {
    CODE_TO_INDEX[byte as usize] != NO_INDEX
}

/// Hex SHA-256 over a canonical rendering of the table. Persisted models carry
/// it so a model trained against a different table is rejected.
pub fn vocabulary_fingerprint() -> &'static str {
    static FINGERPRINT: OnceLock<String> = OnceLock::new();
    FINGERPRINT.get_or_init(|| {
        let mut hasher = Sha256::new();
        for d in VOCABULARY.iter() {
            hasher.update(format!("{:02x}:{}:{}:{}\n", d.code, d.mnemonic, d.arg_codec.name(), d.protocol_introduced));
        }
        hasher.finalize().iter().map(|b| format!("{b:02x}")).collect()
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::collections::HashSet;

    #[test]
    fn vocabulary_has_68_entries_sorted_and_unique() {
        let vocab = opcode_vocabulary();
        assert_eq!(vocab.len(), 68);
        assert!(vocab.windows(2).all(|w| w[0].code < w[1].code));
        let names: HashSet<_> = vocab.iter().map(|d| d.mnemonic).collect();
        assert_eq!(names.len(), 68);
    }

    #[test]
    fn stop_descriptor() {
        let d = descriptor(0x2E).unwrap();
        assert_eq!(d.mnemonic, "STOP");
        assert_eq!(d.arg_codec, ArgCodec::None);
    }

    #[test]
    fn index_lookup_is_consistent() {
        for (i, d) in VOCABULARY.iter().enumerate() {
            assert_eq!(index_of(d.code), Some(i));
        }
        assert_eq!(index_of(0x00), None);
        assert_eq!(index_of(0xff), None);
        assert_eq!((0..=255u8).filter(|b| is_opcode(*b)).count(), 68);
    }

    #[test]
    fn code_constants_match_table() {
        assert_eq!(descriptor(code::STACK_GLOBAL).unwrap().mnemonic, "STACK_GLOBAL");
        assert_eq!(descriptor(code::BYTEARRAY8).unwrap().protocol_introduced, 5);
        for c in RCE_CAPABLE {
            assert!(is_opcode(c));
        }
    }

    #[test]
    fn fingerprint_is_stable() {
        assert_eq!(vocabulary_fingerprint().len(), 64);
        assert_eq!(vocabulary_fingerprint(), vocabulary_fingerprint());
    }
}
