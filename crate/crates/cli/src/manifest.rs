use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunManifest {
    pub command: String,
    pub parameters: serde_json::Value,
    pub seed: Option<u64>,
    /// SHA-256 of the input files, concatenated in argument order.
    pub input_digest: Option<String>,
    pub tool_version: String,
}

impl RunManifest {
    pub fn new<P: Serialize>(
        command: &str,
        parameters: &P,
        seed: Option<u64>,
        inputs: &[&[u8]],
    ) -> Self {
        let input_digest = (!inputs.is_empty()).then(|| {
            let mut h = Sha256::new();
            for bytes in inputs {
                h.update(bytes);
            }
            hex::encode(h.finalize())
        });
        Self {
            command: command.to_string(),
            parameters: serde_json::to_value(parameters).expect("parameters serialize"),
            seed,
            input_digest,
            tool_version: concat!(env!("CARGO_PKG_NAME"), " ", env!("CARGO_PKG_VERSION"))
                .to_string(),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn digest_of_known_input() {
        let m = RunManifest::new("x", &(), None, &[b"abc"]);
        assert_eq!(
            m.input_digest.as_deref(),
            Some("ba7816bf8f01cfea414140de5dae2223b00361a396177a9cb410ff61f20015ad")
        );
        assert_eq!(
            RunManifest::new("x", &(), None, &[b"a", b"bc"]).input_digest,
            m.input_digest
        );
        assert!(RunManifest::new("x", &(), None, &[]).input_digest.is_none());
    }
}
