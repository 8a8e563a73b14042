//! Line-delimited JSON records consumed by [`build_graph`](super::build_graph).

use std::fmt;
use std::io::{BufRead, Write};

use serde::de::{self, Visitor};
use serde::{Deserialize, Deserializer, Serialize, Serializer};

use super::GraphError;

/// Literal used for a counterpart outside the institution.
pub const EXTERNAL: &str = "EXTERNAL";

/// One side of a transaction.
#[derive(Clone, Debug, PartialEq, Eq, Hash)]
pub enum Party {
    Customer(String),
    External,
}

impl Party {
    pub fn customer(id: impl Into<String>) -> Self {
        Party::Customer(id.into())
    }

    pub fn as_customer(&self) -> Option<&str> {
        match self {
            Party::Customer(id) => Some(id),
            Party::External => None,
        }
    }
}

impl Serialize for Party {
    fn serialize<S: Serializer>(&self, s: S) -> Result<S::Ok, S::Error> {
        match self {
            Party::Customer(id) => s.serialize_str(id),
            Party::External => s.serialize_str(EXTERNAL),
        }
    }
}

impl<'de> Deserialize<'de> for Party {
    fn deserialize<D: Deserializer<'de>>(d: D) -> Result<Self, D::Error> {
        struct PartyVisitor;
        impl<'de> Visitor<'de> for PartyVisitor {
            type Value = Party;
            fn expecting(&self, f: &mut fmt::Formatter) -> fmt::Result {
                f.write_str("a customer id, \"EXTERNAL\" or null")
            }
            fn visit_str<E: de::Error>(self, v: &str) -> Result<Party, E> {
                Ok(if v == EXTERNAL {
                    Party::External
                } else {
                    Party::Customer(v.to_string())
                })
            }
            fn visit_unit<E: de::Error>(self) -> Result<Party, E> {
                Ok(Party::External)
            }
            fn visit_none<E: de::Error>(self) -> Result<Party, E> {
                Ok(Party::External)
            }
        }
        d.deserialize_any(PartyVisitor)
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RawTransaction {
    pub txn_id: String,
    pub source: Party,
    pub dest: Party,
    pub timestamp: i64,
    pub features: Vec<f64>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CustomerProfile {
    pub customer_id: String,
    pub features: Vec<f64>,
}

/// Reads one JSON object per non-blank line.
pub fn read_jsonl<T: for<'de> Deserialize<'de>, R: BufRead>(reader: R) -> Result<Vec<T>, GraphError> {
    let mut out = Vec::new();
    for (i, line) in reader.lines().enumerate() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let rec = serde_json::from_str(&line)
            .map_err(|e| GraphError::Ingestion(format!("line {}: {e}", i + 1)))?;
        out.push(rec);
    }
    Ok(out)
}

pub fn write_jsonl<T: Serialize, W: Write>(mut writer: W, records: &[T]) -> Result<(), GraphError> {
    for r in records {
        let line = serde_json::to_string(r).map_err(|e| GraphError::Ingestion(e.to_string()))?;
        writeln!(writer, "{line}")?;
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn party_wire_format() {
        let t: RawTransaction = serde_json::from_str(
            r#"{"txn_id":"t1","source":"EXTERNAL","dest":"c9","timestamp":5,"features":[1.0]}"#,
        )
        .unwrap();
        assert_eq!(t.source, Party::External);
        assert_eq!(t.dest, Party::customer("c9"));
        let null: RawTransaction = serde_json::from_str(
            r#"{"txn_id":"t1","source":null,"dest":"c9","timestamp":5,"features":[]}"#,
        )
        .unwrap();
        assert_eq!(null.source, Party::External);
        let line = serde_json::to_string(&t).unwrap();
        assert!(line.contains(r#""source":"EXTERNAL""#));
    }

    #[test]
    fn jsonl_round_trip_skips_blank_lines() {
        let profiles = vec![
            CustomerProfile {
                customer_id: "a".into(),
                features: vec![0.5, 1.0],
            },
            CustomerProfile {
                customer_id: "b".into(),
                features: vec![-1.0, 2.0],
            },
        ];
        let mut buf = Vec::new();
        write_jsonl(&mut buf, &profiles).unwrap();
        buf.extend_from_slice(b"\n\n");
        let back: Vec<CustomerProfile> = read_jsonl(buf.as_slice()).unwrap();
        assert_eq!(back, profiles);
        let bad: Result<Vec<CustomerProfile>, _> = read_jsonl("{nope".as_bytes());
        assert!(matches!(bad, Err(GraphError::Ingestion(_))));
    }
}
