//! Canonical JSON text and content digests.
//!
//! Canonical form: UTF-8, object keys sorted lexicographically, no
//! insignificant whitespace. Multi-record files are one canonical value per
//! line, LF-terminated. Digests are lowercase hex SHA-256 over those bytes.

use serde::Serialize;
use sha2::{Digest, Sha256};

use crate::error::Result;

/// Serializes `value` to canonical JSON text.
///
/// Going through `serde_json::Value` sorts keys, since its map type is a
/// `BTreeMap` (the `preserve_order` feature must stay off).
pub fn to_string<T: Serialize + ?Sized>(value: &T) -> Result<String> {
    let tree = serde_json::to_value(value)?;
    Ok(serde_json::to_string(&tree)?)
}

pub fn to_vec<T: Serialize + ?Sized>(value: &T) -> Result<Vec<u8>> {
    to_string(value).map(String::into_bytes)
}

pub fn sha256_hex(bytes: &[u8]) -> String {
    hex::encode(Sha256::digest(bytes))
}

/// SHA-256 of the canonical serialization of `value`.
pub fn digest<T: Serialize + ?Sized>(value: &T) -> Result<String> {
    Ok(sha256_hex(&to_vec(value)?))
}

/// Low 64 bits of a hex digest read as a big-endian 256-bit integer.
pub fn digest_low_u64(hex_digest: &str) -> Result<u64> {
    let bytes = hex::decode(hex_digest)
        .map_err(|e| crate::Error::invalid(format!("bad digest `{hex_digest}`: {e}")))?;
    if bytes.len() < 8 {
        return Err(crate::Error::invalid(format!(
            "digest `{hex_digest}` too short"
        )));
    }
    let tail: [u8; 8] = bytes[bytes.len() - 8..].try_into().expect("8 bytes");
    Ok(u64::from_be_bytes(tail))
}
