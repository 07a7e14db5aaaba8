//! Serializes floats with exactly six decimal places in JSON output.

use serde::ser::{Error as _, SerializeSeq};
use serde::Serializer;
use serde_json::value::RawValue;

fn raw(v: f64) -> Result<Box<RawValue>, serde_json::Error> {
    if !v.is_finite() {
        return Err(serde_json::Error::custom(format!("non-finite value {v}")));
    }
    let mut s = format!("{v:.6}");
    if s.starts_with("-") && s[1..].bytes().all(|b| b == b'0' || b == b'.') {
        s.remove(0);
    }
    RawValue::from_string(s)
}

pub fn serialize<S: Serializer>(v: &f64, s: S) -> Result<S::Ok, S::Error> {
    let r = raw(*v).map_err(S::Error::custom)?;
    serde::Serialize::serialize(&r, s)
}

pub fn serialize_slice<S: Serializer>(v: &[f64], s: S) -> Result<S::Ok, S::Error> {
    let mut seq = s.serialize_seq(Some(v.len()))?;
    for x in v {
        seq.serialize_element(&raw(*x).map_err(S::Error::custom)?)?;
    }
    seq.end()
}

pub fn serialize_nested<S: Serializer>(v: &[[f64; 4]], s: S) -> Result<S::Ok, S::Error> {
    struct Row<'a>(&'a [f64; 4]);
    impl serde::Serialize for Row<'_> {
        fn serialize<S: Serializer>(&self, s: S) -> Result<S::Ok, S::Error> {
            serialize_slice(self.0, s)
        }
    }
    let mut seq = s.serialize_seq(Some(v.len()))?;
    for row in v {
        seq.serialize_element(&Row(row))?;
    }
    seq.end()
}
