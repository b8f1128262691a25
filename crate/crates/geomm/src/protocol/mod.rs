//! Tool descriptors, results and the registry that dispatches calls either to
//! in-process handlers or to remote servers speaking line-delimited JSON-RPC.

pub mod client;
pub mod registry;
pub mod server;
pub mod wire;

use std::collections::BTreeMap;
use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};
use serde_json::Value;
use thiserror::Error;

pub use client::{Address, RemoteEndpoint};
pub use registry::{Binding, Registry, RegistryError, ToolHandler, ToolOutput, DEFAULT_DEADLINE};

pub type Arguments = serde_json::Map<String, Value>;

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Capability {
    General,
    Knowledge,
    Perception,
    Reasoning,
}

impl Capability {
    pub const ALL: [Capability; 4] =
        [Capability::General, Capability::Knowledge, Capability::Perception, Capability::Reasoning];

    pub fn as_str(self) -> &'static str {
        match self {
            Capability::General => "general",
            Capability::Knowledge => "knowledge",
            Capability::Perception => "perception",
            Capability::Reasoning => "reasoning",
        }
    }
}

impl fmt::Display for Capability {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Capability {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        Capability::ALL
            .into_iter()
            .find(|c| c.as_str().eq_ignore_ascii_case(s.trim()))
            .ok_or_else(|| format!("unknown capability `{s}`"))
    }
}

/// What an argument means, which also fixes its JSON shape.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SemanticType {
    Text,
    TextList,
    Integer,
    Number,
    Boolean,
    ImageRef,
    ImageRefList,
    /// Filesystem path of an output or manifest.
    Path,
    MaskRef,
    Detections,
    OptionMap,
    /// List of evidence items handed to reasoning.
    Evidence,
    /// List of `{image_ref, timestamp}` objects.
    TimedImages,
    /// Any JSON value.
    Json,
}

impl SemanticType {
    fn accepts(self, v: &Value) -> bool {
        let strings = |v: &Value| v.as_array().is_some_and(|a| a.iter().all(Value::is_string));
        match self {
            SemanticType::Text | SemanticType::ImageRef | SemanticType::Path | SemanticType::MaskRef => v.is_string(),
            SemanticType::TextList | SemanticType::ImageRefList => strings(v),
            SemanticType::Integer => v.is_i64() || v.is_u64(),
            SemanticType::Number => v.is_number(),
            SemanticType::Boolean => v.is_boolean(),
            SemanticType::Detections => v.get("boxes").is_some_and(Value::is_array),
            SemanticType::OptionMap => v.as_object().is_some_and(|m| m.values().all(Value::is_string)),
            SemanticType::Evidence | SemanticType::TimedImages => {
                v.as_array().is_some_and(|a| a.iter().all(Value::is_object))
            }
            SemanticType::Json => true,
        }
    }

    /// JSON Schema fragment used in `tools/list`.
    pub fn json_schema(self) -> Value {
        use serde_json::json;
        match self {
            SemanticType::Text => json!({"type": "string"}),
            SemanticType::TextList => json!({"type": "array", "items": {"type": "string"}}),
            SemanticType::Integer => json!({"type": "integer"}),
            SemanticType::Number => json!({"type": "number"}),
            SemanticType::Boolean => json!({"type": "boolean"}),
            SemanticType::ImageRef => json!({"type": "string", "format": "image-ref"}),
            SemanticType::ImageRefList => json!({"type": "array", "items": {"type": "string", "format": "image-ref"}}),
            SemanticType::Path => json!({"type": "string", "format": "path"}),
            SemanticType::MaskRef => json!({"type": "string", "format": "mask-ref"}),
            SemanticType::Detections => json!({"type": "object", "required": ["boxes"]}),
            SemanticType::OptionMap => json!({"type": "object", "additionalProperties": {"type": "string"}}),
            SemanticType::Evidence | SemanticType::TimedImages => json!({"type": "array", "items": {"type": "object"}}),
            SemanticType::Json => json!({}),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct FieldSpec {
    #[serde(rename = "type")]
    pub ty: SemanticType,
    pub required: bool,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum OutputKind {
    Text,
    Detections,
    MaskRef,
    Labels,
    Evidence,
    ImageRef,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ToolDescriptor {
    pub name: String,
    pub description: String,
    pub capability: Capability,
    pub input_schema: BTreeMap<String, FieldSpec>,
    pub output_kind: OutputKind,
    /// Handler is not reentrant; the registry serializes its calls.
    #[serde(default)]
    pub single_flight: bool,
}

impl ToolDescriptor {
    pub fn new(name: &str, description: &str, capability: Capability, output_kind: OutputKind) -> Self {
        Self {
            name: name.into(),
            description: description.into(),
            capability,
            input_schema: BTreeMap::new(),
            output_kind,
            single_flight: false,
        }
    }

    pub fn field(mut self, name: &str, ty: SemanticType, required: bool) -> Self {
        self.input_schema.insert(name.into(), FieldSpec { ty, required });
        self
    }

    /// Checks `args` against the input schema. Unknown fields are rejected;
    /// `null` counts as absent.
    pub fn validate(&self, args: &Arguments) -> Result<(), String> {
        if let Some(extra) = args.keys().find(|k| !self.input_schema.contains_key(*k)) {
            return Err(extra.clone());
        }
        for (name, spec) in &self.input_schema {
            match args.get(name) {
                None | Some(Value::Null) if spec.required => return Err(name.clone()),
                None | Some(Value::Null) => {}
                Some(v) if !spec.ty.accepts(v) => return Err(name.clone()),
                Some(_) => {}
            }
        }
        Ok(())
    }
}

/// One block of tool output. Payloads carry structured data tagged with the
/// kind of output they hold.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case")]
pub enum ContentBlock {
    Text { text: String },
    Payload { kind: OutputKind, data: Value },
}

impl ContentBlock {
    pub fn text(s: impl Into<String>) -> Self {
        ContentBlock::Text { text: s.into() }
    }

    pub fn payload(kind: OutputKind, data: impl Serialize) -> Self {
        let data = serde_json::to_value(data).expect("payload types serialize to JSON");
        ContentBlock::Payload { kind, data }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "status", content = "message", rename_all = "snake_case")]
pub enum ToolStatus {
    Ok,
    Error(String),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ToolResult {
    pub tool: String,
    pub status: ToolStatus,
    pub content: Vec<ContentBlock>,
    pub provenance: Option<String>,
}

impl ToolResult {
    pub fn error(tool: &str, message: impl Into<String>) -> Self {
        Self { tool: tool.into(), status: ToolStatus::Error(message.into()), content: Vec::new(), provenance: None }
    }

    pub fn is_ok(&self) -> bool {
        self.status == ToolStatus::Ok
    }

    /// All text blocks joined by newlines.
    pub fn text(&self) -> String {
        let parts: Vec<&str> = self
            .content
            .iter()
            .filter_map(|b| match b {
                ContentBlock::Text { text } => Some(text.as_str()),
                ContentBlock::Payload { .. } => None,
            })
            .collect();
        parts.join("\n")
    }

    pub fn payload(&self, kind: OutputKind) -> Option<&Value> {
        self.content.iter().find_map(|b| match b {
            ContentBlock::Payload { kind: k, data } if *k == kind => Some(data),
            _ => None,
        })
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum TransportError {
    #[error("no response within {0} ms")]
    Timeout(u64),
    #[error("connection failed: {0}")]
    Connection(String),
    #[error("malformed frame at byte {position}: {reason}")]
    MalformedFrame { position: usize, reason: String },
    #[error("response id {found} does not match request id {expected}")]
    IdMismatch { expected: String, found: String },
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum CallError {
    #[error("unknown tool `{0}`")]
    UnknownTool(String),
    #[error("argument `{0}` violates the tool's input schema")]
    ArgumentSchemaViolation(String),
    #[error("transport: {0}")]
    Transport(#[from] TransportError),
    /// Any other JSON-RPC error returned by a remote server.
    #[error("remote error {code}: {message}")]
    Remote { code: i64, message: String },
}

#[cfg(test)]
mod tests {
    use super::*;
    use serde_json::json;

    fn desc() -> ToolDescriptor {
        ToolDescriptor::new("t", "d", Capability::General, OutputKind::Text)
            .field("image_ref", SemanticType::ImageRef, true)
            .field("stride", SemanticType::Integer, false)
    }

    fn args(v: Value) -> Arguments {
        v.as_object().unwrap().clone()
    }

    #[test]
    fn schema_validation() {
        let d = desc();
        assert_eq!(d.validate(&args(json!({"image_ref": "a.png"}))), Ok(()));
        assert_eq!(d.validate(&args(json!({"image_ref": "a.png", "stride": null}))), Ok(()));
        assert_eq!(d.validate(&args(json!({}))), Err("image_ref".into()));
        assert_eq!(d.validate(&args(json!({"image_ref": 3}))), Err("image_ref".into()));
        assert_eq!(d.validate(&args(json!({"image_ref": "a", "stride": 1.5}))), Err("stride".into()));
        assert_eq!(d.validate(&args(json!({"image_ref": "a", "colour": 1}))), Err("colour".into()));
    }

    #[test]
    fn result_accessors() {
        let r = ToolResult {
            tool: "box_counting".into(),
            status: ToolStatus::Ok,
            content: vec![
                ContentBlock::text("12"),
                ContentBlock::payload(OutputKind::Detections, json!({"boxes": []})),
            ],
            provenance: None,
        };
        assert_eq!(r.text(), "12");
        assert!(r.payload(OutputKind::Detections).is_some());
        assert!(r.payload(OutputKind::Labels).is_none());
    }
}
