use sha2::{Digest, Sha256};

/// Lowercase hex SHA-256 of the input bytes (64 chars).
pub fn sha256_hex(bytes: &[u8]) -> String {
    hex::encode(Sha256::digest(bytes))
}
