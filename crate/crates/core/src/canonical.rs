//! Canonical JSON (sorted object keys, shortest round-trip floats, no
//! whitespace) and SHA-256 digests over it.

use serde::Serialize;
use sha2::{Digest, Sha256};

/// Serializes `value` canonically. Map keys come out sorted because
/// `serde_json::Map` is ordered by key.
pub fn to_vec<T: Serialize + ?Sized>(value: &T) -> Vec<u8> {
    let tree = serde_json::to_value(value).expect("value serializes to JSON");
    serde_json::to_vec(&tree).expect("JSON tree serializes")
}

pub fn to_string<T: Serialize + ?Sized>(value: &T) -> String {
    String::from_utf8(to_vec(value)).expect("JSON is UTF-8")
}

/// Re-serializes arbitrary JSON bytes into canonical form.
pub fn canonicalize(bytes: &[u8]) -> serde_json::Result<Vec<u8>> {
    let tree: serde_json::Value = serde_json::from_slice(bytes)?;
    Ok(serde_json::to_vec(&tree)?)
}

pub fn sha256(bytes: &[u8]) -> [u8; 32] {
    Sha256::digest(bytes).into()
}

pub fn sha256_hex(bytes: &[u8]) -> String {
    hex::encode(sha256(bytes))
}

/// Digest of the canonical serialization of `value`.
pub fn digest<T: Serialize + ?Sized>(value: &T) -> String {
    sha256_hex(&to_vec(value))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn keys_are_sorted_and_compact() {
        let v = serde_json::json!({"b": 1, "a": {"z": 0.1, "y": [1.0, 2.5e-7]}});
        assert_eq!(to_string(&v), r#"{"a":{"y":[1.0,2.5e-7],"z":0.1},"b":1}"#);
        let again = canonicalize(b"{ \"b\" : 1 , \"a\":{\"y\":[1.0,2.5e-7],\"z\":0.1}}").unwrap();
        assert_eq!(again, to_vec(&v));
    }

    #[test]
    fn sha256_known_vector() {
        assert_eq!(
            sha256_hex(b"abc"),
            "ba7816bf8f01cfea414140de5dae2223b00361a396177a9cb410ff61f20015ad"
        );
    }
}
