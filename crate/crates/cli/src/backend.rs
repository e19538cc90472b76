// SPDX-License-Identifier: MIT OR Apache-2.0

//! `--backend` values: `mock:<fixture.json>` or `model:<dir>`.

use std::fmt;
use std::path::PathBuf;
use std::str::FromStr;
use std::sync::Arc;

use cxaffinity::backend::{MaskedLm, MockFixture};
use cxaffinity::tokenization::TokenizerHandle;
use cxaffinity_onnx::OnnxBackend;
use serde::{Deserialize, Serialize};

use crate::CliError;

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(try_from = "String", into = "String")]
pub enum BackendSpec {
    Mock(PathBuf),
    Model(PathBuf),
}

impl FromStr for BackendSpec {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, String> {
        let (kind, path) = s
            .split_once(':')
            .ok_or_else(|| format!("backend {s:?}: expected mock:<fixture> or model:<dir>"))?;
        if path.is_empty() {
            return Err(format!("backend {s:?}: missing path"));
        }
        match kind {
            "mock" => Ok(Self::Mock(path.into())),
            "model" => Ok(Self::Model(path.into())),
            _ => Err(format!("backend {s:?}: unknown kind {kind:?}")),
        }
    }
}

impl TryFrom<String> for BackendSpec {
    type Error = String;

    fn try_from(s: String) -> Result<Self, String> {
        s.parse()
    }
}

impl From<BackendSpec> for String {
    fn from(b: BackendSpec) -> String {
        b.to_string()
    }
}

impl fmt::Display for BackendSpec {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Self::Mock(p) => write!(f, "mock:{}", p.display()),
            Self::Model(p) => write!(f, "model:{}", p.display()),
        }
    }
}

/// A tokenizer and the backend it feeds, shared read-only.
#[derive(Clone)]
pub struct Loaded {
    pub tokenizer: Arc<dyn TokenizerHandle>,
    pub backend: Arc<dyn MaskedLm>,
}

impl BackendSpec {
    pub fn load(&self) -> Result<Loaded, CliError> {
        match self {
            Self::Mock(path) => {
                let fixture = MockFixture::from_path(path).map_err(|e| CliError::Runtime(e.to_string()))?;
                let (vocab, backend) = fixture.build().map_err(|e| CliError::Runtime(e.to_string()))?;
                Ok(Loaded {
                    tokenizer: Arc::new(vocab),
                    backend: Arc::from(backend),
                })
            }
            Self::Model(dir) => {
                let (backend, tokenizer) = OnnxBackend::load_dir(dir).map_err(|e| CliError::Runtime(e.to_string()))?;
                Ok(Loaded {
                    tokenizer: Arc::new(tokenizer),
                    backend: Arc::new(backend),
                })
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn parses_both_kinds() {
        assert_eq!("mock:a.json".parse(), Ok(BackendSpec::Mock("a.json".into())));
        assert_eq!("model:/m".parse(), Ok(BackendSpec::Model("/m".into())));
        // Windows-style paths keep their colon
        assert_eq!("model:C:/m".parse(), Ok(BackendSpec::Model("C:/m".into())));
        assert!("onnx:/m".parse::<BackendSpec>().is_err());
        assert!("mock:".parse::<BackendSpec>().is_err());
        assert!("fixture.json".parse::<BackendSpec>().is_err());
    }

    #[test]
    fn display_round_trips() {
        let b = BackendSpec::Mock("x/y.json".into());
        assert_eq!(b.to_string().parse(), Ok(b));
    }
}
