use serde::Serialize;
use sha2::{Digest, Sha256};

/// Hex SHA-256 of the value's JSON encoding.
pub fn fingerprint<T: Serialize>(value: &T) -> String {
    let bytes = serde_json::to_vec(value).expect("serializable value");
    let digest = Sha256::digest(&bytes);
    digest.iter().map(|b| format!("{b:02x}")).collect()
}
