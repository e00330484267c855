#![allow(dead_code)]

use std::io::BufRead;

use flate2::read::GzDecoder;
use serde_json::Value;

/// One stream of the reference-pickler fixture.
pub struct OracleRecord {
    pub graph: i64,
    pub proto: u8,
    pub pickle: Vec<u8>,
    /// (mnemonic, offset, typed argument) as listed by the reference disassembler.
    pub ops: Vec<(String, usize, Value)>,
    /// Typed value tree for data-only graphs.
    pub value: Option<Value>,
}

pub fn hex_decode(s: &str) -> Vec<u8> {
    (0..s.len()).step_by(2).map(|i| u8::from_str_radix(&s[i..i + 2], 16).unwrap()).collect()
}

pub fn load_oracle_corpus() -> Vec<OracleRecord> {
    let path = concat!(env!("CARGO_MANIFEST_DIR"), "/tests/fixtures/oracle_corpus.jsonl.gz");
    let file = std::fs::File::open(path).expect("oracle fixture present");
    let reader = std::io::BufReader::new(GzDecoder::new(file));
    reader
        .lines()
        .map(|line| {
            let v: Value = serde_json::from_str(&line.unwrap()).unwrap();
            OracleRecord {
                graph: v["graph"].as_i64().unwrap(),
                proto: v["proto"].as_u64().unwrap() as u8,
                pickle: hex_decode(v["pickle"].as_str().unwrap()),
                ops: v["ops"]
                    .as_array()
                    .unwrap()
                    .iter()
                    .map(|op| {
                        (op[0].as_str().unwrap().to_string(), op[1].as_u64().unwrap() as usize, op[2].clone())
                    })
                    .collect(),
                value: (!v["value"].is_null()).then(|| v["value"].clone()),
            }
        })
        .collect()
}

/// Float stored as little-endian IEEE-754 hex.
pub fn float_from_hex(s: &str) -> f64 {
    let b = hex_decode(s);
    f64::from_le_bytes(b.try_into().unwrap())
}
