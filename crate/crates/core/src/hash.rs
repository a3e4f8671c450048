//! Stable content hashing for provenance records.
//!
//! JSON content is canonicalized (object keys sorted recursively, no
//! whitespace) before SHA-256, so hashes are independent of key order and
//! formatting. JSON-lines files hash the canonicalized records joined by a
//! single `\n`. Non-JSON files hash raw bytes.

use std::fs;
use std::path::Path;

use serde_json::Value;
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};

/// Writes `value` in canonical form: objects with sorted keys, arrays in
/// order, scalars via serde_json's standard formatting.
pub fn canonical_json(value: &Value) -> String {
    let mut out = String::new();
    write_canonical(value, &mut out);
    out
}

fn write_canonical(value: &Value, out: &mut String) {
    match value {
        Value::Object(map) => {
            out.push('{');
            let mut keys: Vec<&String> = map.keys().collect();
            keys.sort();
            for (i, key) in keys.iter().enumerate() {
                if i > 0 {
                    out.push(',');
                }
                out.push_str(&serde_json::to_string(key).expect("string serializes"));
                out.push(':');
                write_canonical(&map[*key], out);
            }
            out.push('}');
        }
        Value::Array(items) => {
            out.push('[');
            for (i, item) in items.iter().enumerate() {
                if i > 0 {
                    out.push(',');
                }
                write_canonical(item, out);
            }
            out.push(']');
        }
        scalar => out.push_str(&serde_json::to_string(scalar).expect("scalar serializes")),
    }
}

fn hex(digest: &[u8]) -> String {
    digest.iter().map(|b| format!("{b:02x}")).collect()
}

/// SHA-256 over the canonical form of one JSON value.
pub fn hash_json(value: &Value) -> String {
    let mut hasher = Sha256::new();
    hasher.update(canonical_json(value).as_bytes());
    hex(&hasher.finalize())
}

/// Content hash of a file. `.jsonl` files are hashed record-by-record in
/// canonical form joined by `\n`; `.json` files as one canonical value;
/// anything else as raw bytes.
pub fn hash_file(path: &Path) -> Result<String> {
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    let ext = path.extension().and_then(|e| e.to_str()).unwrap_or("");
    let mut hasher = Sha256::new();
    match ext {
        "jsonl" => {
            let text = String::from_utf8(bytes)
                .map_err(|e| Error::parse(path.display().to_string(), 0, e.to_string()))?;
            let mut first = true;
            for (lineno, line) in text.lines().enumerate() {
                if line.trim().is_empty() {
                    continue;
                }
                let value: Value = serde_json::from_str(line).map_err(|e| {
                    Error::parse(path.display().to_string(), lineno + 1, e.to_string())
                })?;
                if !first {
                    hasher.update(b"\n");
                }
                first = false;
                hasher.update(canonical_json(&value).as_bytes());
            }
        }
        "json" => {
            let value: Value = serde_json::from_slice(&bytes)
                .map_err(|e| Error::parse(path.display().to_string(), 1, e.to_string()))?;
            hasher.update(canonical_json(&value).as_bytes());
        }
        _ => hasher.update(&bytes),
    }
    Ok(hex(&hasher.finalize()))
}

#[cfg(test)]
mod tests {
    use super::*;
    use serde_json::json;

    #[test]
    fn canonical_form_sorts_keys_recursively() {
        let v = json!({"b": 1, "a": {"z": [3, 2], "y": null}});
        assert_eq!(canonical_json(&v), r#"{"a":{"y":null,"z":[3,2]},"b":1}"#);
    }

    #[test]
    fn hash_ignores_key_order() {
        let a = json!({"x": 1, "y": [true, "s"]});
        let b = json!({"y": [true, "s"], "x": 1});
        assert_eq!(hash_json(&a), hash_json(&b));
        assert_ne!(hash_json(&a), hash_json(&json!({"x": 2, "y": [true, "s"]})));
    }

    #[test]
    fn jsonl_hash_ignores_formatting() {
        let dir = tempfile::tempdir().unwrap();
        let p1 = dir.path().join("a.jsonl");
        let p2 = dir.path().join("b.jsonl");
        std::fs::write(&p1, "{\"k\": 1, \"j\": 2}\n").unwrap();
        std::fs::write(&p2, "{\"j\":2,\"k\":1}\n\n").unwrap();
        assert_eq!(hash_file(&p1).unwrap(), hash_file(&p2).unwrap());
    }
}
