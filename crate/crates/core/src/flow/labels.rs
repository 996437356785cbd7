//! Sidecar label files mapping server endpoints to app names.
//!
//! ```toml
//! [capture]
//! app = "com.openai.chatgpt"
//! content = "text"          # text | multimodal | none
//!
//! [[entries]]
//! addr = "104.18.32.47"
//! port = 443
//! app = "com.openai.chatgpt"
//! ```

use std::collections::HashMap;
use std::fmt;
use std::net::IpAddr;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use super::{Biflow, Endpoint};

pub const UNKNOWN_APP: &str = "UNK";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ContentKind {
    Text,
    Multimodal,
    None,
}

impl ContentKind {
    pub fn as_str(self) -> &'static str {
        match self {
            ContentKind::Text => "text",
            ContentKind::Multimodal => "multimodal",
            ContentKind::None => "none",
        }
    }
}

impl fmt::Display for ContentKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct FlowLabel {
    pub app: String,
    pub content: ContentKind,
}

impl FlowLabel {
    pub fn unknown() -> Self {
        FlowLabel {
            app: UNKNOWN_APP.to_string(),
            content: ContentKind::None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LabelEntry {
    pub addr: IpAddr,
    pub port: u16,
    pub app: String,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CaptureMeta {
    pub app: String,
    pub content: ContentKind,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LabelMap {
    pub capture: CaptureMeta,
    #[serde(default)]
    pub entries: Vec<LabelEntry>,
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawLabelMap {
    capture: CaptureMeta,
    #[serde(default)]
    entries: Vec<toml::Spanned<LabelEntry>>,
}

#[derive(Debug, Error)]
pub enum LabelError {
    #[error("cannot read label file {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("{origin}: {message}")]
    Schema { origin: String, message: String },
    #[error("{origin}:{line}: duplicate entry for {endpoint} (first defined on line {first_line})")]
    Duplicate {
        origin: String,
        line: usize,
        first_line: usize,
        endpoint: Endpoint,
    },
}

fn line_of(text: &str, byte: usize) -> usize {
    text[..byte.min(text.len())].bytes().filter(|&b| b == b'\n').count() + 1
}

/// Parses and validates a label document. `origin` names the source in
/// diagnostics.
pub fn parse_label_map(text: &str, origin: &str) -> Result<LabelMap, LabelError> {
    let raw: RawLabelMap = toml::from_str(text).map_err(|e| {
        let at = e
            .span()
            .map(|s| format!("line {}: ", line_of(text, s.start)))
            .unwrap_or_default();
        LabelError::Schema {
            origin: origin.to_string(),
            message: format!("{at}{}", e.message()),
        }
    })?;
    let mut seen: HashMap<Endpoint, usize> = HashMap::new();
    let mut entries = Vec::with_capacity(raw.entries.len());
    for spanned in raw.entries {
        let line = line_of(text, spanned.span().start);
        let entry = spanned.into_inner();
        let endpoint = Endpoint::new(entry.addr, entry.port);
        if let Some(&first_line) = seen.get(&endpoint) {
            return Err(LabelError::Duplicate {
                origin: origin.to_string(),
                line,
                first_line,
                endpoint,
            });
        }
        seen.insert(endpoint, line);
        entries.push(entry);
    }
    Ok(LabelMap {
        capture: raw.capture,
        entries,
    })
}

pub fn load_label_map(path: impl AsRef<Path>) -> Result<LabelMap, LabelError> {
    let path = path.as_ref();
    let text = std::fs::read_to_string(path).map_err(|source| LabelError::Io {
        path: path.to_owned(),
        source,
    })?;
    parse_label_map(&text, &path.display().to_string())
}

/// Labels each biflow by its server endpoint. Unmatched flows get app
/// `UNK` and content `none`; matched flows take the capture's content kind.
pub fn apply_labels(biflows: &mut [Biflow], map: &LabelMap) {
    let lookup: HashMap<Endpoint, &str> = map
        .entries
        .iter()
        .map(|e| (Endpoint::new(e.addr, e.port), e.app.as_str()))
        .collect();
    for flow in biflows {
        flow.label = Some(match lookup.get(&flow.server()) {
            Some(app) => FlowLabel {
                app: app.to_string(),
                content: map.capture.content,
            },
            None => FlowLabel::unknown(),
        });
    }
}
