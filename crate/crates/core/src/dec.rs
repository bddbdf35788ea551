//! Decimal-string number encoding for specs and reports.
//!
//! Values are written as the shortest string that parses back to the same
//! `f64`, so a spec survives a save/load cycle bit for bit. On input both
//! strings and bare JSON numbers are accepted.

use serde::{Deserialize, Deserializer, Serialize, Serializer};

/// An `f64` that serializes as a decimal string.
#[derive(Clone, Copy, Debug, PartialEq, PartialOrd, Default)]
pub struct Dec(pub f64);

pub fn format(x: f64) -> String {
    format!("{x:?}")
}

#[derive(Deserialize)]
#[serde(untagged)]
enum NumOrString {
    Num(f64),
    Str(String),
}

fn parse<E: serde::de::Error>(v: NumOrString) -> Result<f64, E> {
    match v {
        NumOrString::Num(x) => Ok(x),
        NumOrString::Str(s) => s
            .trim()
            .parse::<f64>()
            .map_err(|e| E::custom(format!("bad decimal {s:?}: {e}"))),
    }
}

impl Serialize for Dec {
    fn serialize<S: Serializer>(&self, s: S) -> Result<S::Ok, S::Error> {
        s.serialize_str(&format(self.0))
    }
}

impl<'de> Deserialize<'de> for Dec {
    fn deserialize<D: Deserializer<'de>>(d: D) -> Result<Self, D::Error> {
        parse(NumOrString::deserialize(d)?).map(Dec)
    }
}

impl From<f64> for Dec {
    fn from(x: f64) -> Self {
        Dec(x)
    }
}

impl From<Dec> for f64 {
    fn from(d: Dec) -> Self {
        d.0
    }
}

/// Field adapter: `#[serde(with = "crate::dec")]` on an `f64`.
pub fn serialize<S: Serializer>(x: &f64, s: S) -> Result<S::Ok, S::Error> {
    Dec(*x).serialize(s)
}

pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<f64, D::Error> {
    Dec::deserialize(d).map(|x| x.0)
}

/// Field adapter for `u64` values such as seeds.
pub mod u64_string {
    use serde::{Deserialize, Deserializer, Serializer};

    pub fn serialize<S: Serializer>(x: &u64, s: S) -> Result<S::Ok, S::Error> {
        s.serialize_str(&x.to_string())
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<u64, D::Error> {
        #[derive(Deserialize)]
        #[serde(untagged)]
        enum U {
            Num(u64),
            Str(String),
        }
        match U::deserialize(d)? {
            U::Num(x) => Ok(x),
            U::Str(s) => s.trim().parse().map_err(serde::de::Error::custom),
        }
    }
}
