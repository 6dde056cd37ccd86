use sha2::{Digest, Sha256};

/// Ordered `key=value` description of a run. Its SHA-256 identifies the run:
/// equal manifests mean equal inputs, so their outputs must be byte-equal.
#[derive(Debug, Clone, PartialEq, Eq, Default)]
pub struct Manifest {
    entries: Vec<(String, String)>,
}

impl Manifest {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn with(mut self, key: &str, value: impl ToString) -> Self {
        self.push(key, value);
        self
    }

    pub fn push(&mut self, key: &str, value: impl ToString) {
        self.entries.push((key.to_string(), value.to_string()));
    }

    pub fn get(&self, key: &str) -> Option<&str> {
        self.entries.iter().find(|(k, _)| k == key).map(|(_, v)| v.as_str())
    }

    /// Multi-line values are indented so the text stays line-oriented.
    pub fn to_text(&self) -> String {
        let mut out = String::from("rvtc-manifest 1\n");
        for (k, v) in &self.entries {
            out.push_str(k);
            out.push('=');
            out.push_str(&v.replace('\n', "\n  "));
            out.push('\n');
        }
        out
    }

    pub fn hash(&self) -> String {
        sha256_hex(self.to_text().as_bytes())
    }
}

pub fn sha256_hex(bytes: &[u8]) -> String {
    hex::encode(Sha256::digest(bytes))
}
