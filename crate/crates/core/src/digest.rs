//! Content hashes shared by the client, the cache and the mock server.

use base64::engine::general_purpose::STANDARD as B64;
use base64::Engine;
use serde_json::{json, Value};
use sha2::{Digest, Sha256};

pub fn sha256_hex(bytes: &[u8]) -> String {
    hex::encode(Sha256::digest(bytes))
}

/// Hash of a JSON value's compact serialization (object keys are sorted).
pub fn sha256_json(value: &Value) -> String {
    sha256_hex(value.to_string().as_bytes())
}

/// Digest of an image as referenced in a request: decoded bytes for `data:`
/// URLs, the URL text otherwise.
pub fn image_digest(url: &str) -> String {
    if let Some(rest) = url.strip_prefix("data:") {
        if let Some((_, payload)) = rest.split_once(";base64,") {
            if let Ok(bytes) = B64.decode(payload) {
                return sha256_hex(&bytes);
            }
        }
    }
    sha256_hex(url.as_bytes())
}

/// Stable identity of one prompt: system text, user text and image digests.
pub fn prompt_digest(system: Option<&str>, user: &str, image_digests: &[String]) -> String {
    sha256_json(&json!({
        "system": system,
        "user": user,
        "images": image_digests,
    }))
}
