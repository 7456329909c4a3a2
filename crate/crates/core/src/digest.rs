//! Content hashes for configs and artifacts.

use serde::Serialize;
use sha2::{Digest, Sha256};

use crate::error::Result;

/// Lowercase hex SHA-256 of `bytes`.
pub fn sha256_hex(bytes: &[u8]) -> String {
    Sha256::digest(bytes).iter().map(|b| format!("{b:02x}")).collect()
}

/// Hash of the canonical JSON encoding of `value`. Struct fields serialize in
/// declaration order, so equal configs hash equally.
pub fn config_hash<T: Serialize>(value: &T) -> Result<String> {
    Ok(sha256_hex(&serde_json::to_vec(value)?))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn known_vector() {
        assert_eq!(
            sha256_hex(b"abc"),
            "ba7816bf8f01cfea414140de5dae2223b00361a396177a9cb410ff61f20015ad"
        );
    }

    #[test]
    fn config_hash_is_stable() {
        #[derive(Serialize)]
        struct C {
            a: u32,
            b: &'static str,
        }
        let x = config_hash(&C { a: 1, b: "x" }).unwrap();
        assert_eq!(x, config_hash(&C { a: 1, b: "x" }).unwrap());
        assert_ne!(x, config_hash(&C { a: 2, b: "x" }).unwrap());
    }
}
