//! Line-delimited JSON-RPC 2.0 framing for `tools/list` and `tools/call`.
//!
//! Every frame is one UTF-8 JSON object terminated by `\n`. Structured
//! payloads travel as text blocks whose `text` is the JSON encoding of the
//! payload and whose `payload_kind` names the output kind.

use std::collections::BTreeMap;

use serde::Serialize;
use serde_json::{json, Map, Value};

use super::{
    Arguments, CallError, Capability, ContentBlock, FieldSpec, OutputKind, SemanticType, ToolDescriptor, ToolResult,
    ToolStatus, TransportError,
};

pub const PARSE_ERROR: i64 = -32700;
pub const INVALID_REQUEST: i64 = -32600;
pub const METHOD_NOT_FOUND: i64 = -32601;
pub const INVALID_PARAMS: i64 = -32602;
pub const INTERNAL_ERROR: i64 = -32603;

pub const METHOD_LIST: &str = "tools/list";
pub const METHOD_CALL: &str = "tools/call";
pub const METHOD_INITIALIZE: &str = "initialize";

fn frame(v: &impl Serialize) -> Vec<u8> {
    let mut out = serde_json::to_vec(v).expect("frames always serialize");
    out.push(b'\n');
    out
}

// Field order of these structs is the order on the wire.

#[derive(Serialize)]
struct RequestFrame<'a, P: Serialize> {
    jsonrpc: &'static str,
    id: u64,
    method: &'a str,
    params: P,
}

#[derive(Serialize)]
struct CallParams<'a> {
    name: &'a str,
    arguments: &'a Arguments,
}

#[derive(Serialize)]
struct ResponseFrame<'a> {
    jsonrpc: &'static str,
    id: &'a Value,
    #[serde(skip_serializing_if = "Option::is_none")]
    result: Option<Value>,
    #[serde(skip_serializing_if = "Option::is_none")]
    error: Option<ErrorObject<'a>>,
}

#[derive(Serialize)]
struct ErrorObject<'a> {
    code: i64,
    message: &'a str,
    #[serde(skip_serializing_if = "Option::is_none")]
    data: Option<Value>,
}

#[derive(Serialize)]
struct WireBlock<'a> {
    #[serde(rename = "type")]
    ty: &'static str,
    #[serde(skip_serializing_if = "Option::is_none")]
    payload_kind: Option<OutputKind>,
    text: std::borrow::Cow<'a, str>,
}

#[derive(Serialize)]
struct WireResult<'a> {
    content: Vec<WireBlock<'a>>,
    #[serde(rename = "isError")]
    is_error: bool,
    tool: &'a str,
    #[serde(skip_serializing_if = "Option::is_none")]
    provenance: Option<&'a str>,
}

pub fn encode_request(id: u64, name: &str, arguments: &Arguments) -> Vec<u8> {
    frame(&RequestFrame { jsonrpc: "2.0", id, method: METHOD_CALL, params: CallParams { name, arguments } })
}

pub fn encode_list_request(id: u64) -> Vec<u8> {
    frame(&RequestFrame { jsonrpc: "2.0", id, method: METHOD_LIST, params: Map::new() })
}

fn malformed(position: usize, reason: impl Into<String>) -> TransportError {
    TransportError::MalformedFrame { position, reason: reason.into() }
}

/// Byte offset of a serde_json error inside `bytes`.
fn error_offset(bytes: &[u8], e: &serde_json::Error) -> usize {
    let mut line = 1;
    let mut start = 0;
    for (i, b) in bytes.iter().enumerate() {
        if line == e.line() {
            break;
        }
        if *b == b'\n' {
            line += 1;
            start = i + 1;
        }
    }
    (start + e.column().saturating_sub(1)).min(bytes.len())
}

fn parse_object(bytes: &[u8]) -> Result<Map<String, Value>, TransportError> {
    let text = std::str::from_utf8(bytes).map_err(|e| malformed(e.valid_up_to(), "invalid UTF-8"))?;
    let v: Value =
        serde_json::from_str(text.trim_end()).map_err(|e| malformed(error_offset(bytes, &e), e.to_string()))?;
    match v {
        Value::Object(m) => Ok(m),
        _ => Err(malformed(0, "frame is not a JSON object")),
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Request {
    /// `None` for notifications.
    pub id: Option<Value>,
    pub method: String,
    pub params: Value,
}

/// A request that could not be accepted, with the id to answer to.
#[derive(Debug, Clone, PartialEq)]
pub struct RejectedFrame {
    pub id: Value,
    pub code: i64,
    pub message: String,
}

pub fn decode_request(bytes: &[u8]) -> Result<Request, RejectedFrame> {
    let parsed = std::str::from_utf8(bytes)
        .map_err(|e| e.to_string())
        .and_then(|t| serde_json::from_str::<Value>(t.trim_end()).map_err(|e| e.to_string()));
    let obj = match parsed {
        Ok(Value::Object(obj)) => obj,
        Ok(_) => {
            return Err(RejectedFrame {
                id: Value::Null,
                code: INVALID_REQUEST,
                message: "frame is not a JSON object".into(),
            })
        }
        Err(message) => return Err(RejectedFrame { id: Value::Null, code: PARSE_ERROR, message }),
    };
    let id = obj.get("id").cloned();
    let reject = |message: &str| RejectedFrame {
        id: id.clone().unwrap_or(Value::Null),
        code: INVALID_REQUEST,
        message: message.into(),
    };
    if obj.get("jsonrpc").and_then(Value::as_str) != Some("2.0") {
        return Err(reject("`jsonrpc` must be \"2.0\""));
    }
    if id.as_ref().is_some_and(|v| !(v.is_string() || v.is_number() || v.is_null())) {
        return Err(reject("`id` must be a string or number"));
    }
    let Some(method) = obj.get("method").and_then(Value::as_str) else {
        return Err(reject("`method` must be a string"));
    };
    Ok(Request { id, method: method.into(), params: obj.get("params").cloned().unwrap_or(json!({})) })
}

fn block_to_wire(b: &ContentBlock) -> WireBlock<'_> {
    match b {
        ContentBlock::Text { text } => WireBlock { ty: "text", payload_kind: None, text: text.into() },
        ContentBlock::Payload { kind, data } => {
            WireBlock { ty: "text", payload_kind: Some(*kind), text: data.to_string().into() }
        }
    }
}

fn wire_result(r: &ToolResult) -> WireResult<'_> {
    let mut content = Vec::with_capacity(r.content.len() + 1);
    let is_error = match &r.status {
        ToolStatus::Ok => false,
        ToolStatus::Error(msg) => {
            content.push(WireBlock { ty: "text", payload_kind: None, text: msg.into() });
            true
        }
    };
    content.extend(r.content.iter().map(block_to_wire));
    WireResult { content, is_error, tool: &r.tool, provenance: r.provenance.as_deref() }
}

/// The `result` member for a tool call.
pub fn tool_result_to_wire(r: &ToolResult) -> Value {
    serde_json::to_value(wire_result(r)).expect("results always serialize")
}

fn block_from_wire(v: &Value) -> Result<ContentBlock, TransportError> {
    if v.get("type").and_then(Value::as_str) != Some("text") {
        return Err(malformed(0, "content block type must be \"text\""));
    }
    let text = v.get("text").and_then(Value::as_str).ok_or_else(|| malformed(0, "content block without text"))?;
    match v.get("payload_kind") {
        None => Ok(ContentBlock::text(text)),
        Some(k) => {
            let kind: OutputKind =
                serde_json::from_value(k.clone()).map_err(|_| malformed(0, format!("unknown payload_kind {k}")))?;
            let data = serde_json::from_str(text).map_err(|e| malformed(0, format!("payload is not JSON: {e}")))?;
            Ok(ContentBlock::Payload { kind, data })
        }
    }
}

pub fn tool_result_from_wire(result: &Value, default_tool: &str) -> Result<ToolResult, TransportError> {
    let content =
        result.get("content").and_then(Value::as_array).ok_or_else(|| malformed(0, "result without content array"))?;
    let is_error = result.get("isError").and_then(Value::as_bool).unwrap_or(false);
    let mut blocks = content.iter().map(block_from_wire).collect::<Result<Vec<_>, _>>()?;
    let status = if is_error {
        if blocks.is_empty() {
            ToolStatus::Error(String::new())
        } else {
            match blocks.remove(0) {
                ContentBlock::Text { text } => ToolStatus::Error(text),
                ContentBlock::Payload { .. } => return Err(malformed(0, "error result must start with a text block")),
            }
        }
    } else {
        ToolStatus::Ok
    };
    Ok(ToolResult {
        tool: result.get("tool").and_then(Value::as_str).unwrap_or(default_tool).to_string(),
        status,
        content: blocks,
        provenance: result.get("provenance").and_then(Value::as_str).map(str::to_string),
    })
}

pub fn encode_result(id: &Value, result: Value) -> Vec<u8> {
    frame(&ResponseFrame { jsonrpc: "2.0", id, result: Some(result), error: None })
}

pub fn encode_response(id: &Value, r: &ToolResult) -> Vec<u8> {
    #[derive(Serialize)]
    struct Frame<'a> {
        jsonrpc: &'static str,
        id: &'a Value,
        result: WireResult<'a>,
    }
    frame(&Frame { jsonrpc: "2.0", id, result: wire_result(r) })
}

pub fn encode_error(id: &Value, code: i64, message: &str, data: Option<Value>) -> Vec<u8> {
    frame(&ResponseFrame { jsonrpc: "2.0", id, result: None, error: Some(ErrorObject { code, message, data }) })
}

/// JSON-RPC error for a failed call, keeping enough detail to rebuild the
/// [`CallError`] on the client side.
pub fn encode_call_error(id: &Value, e: &CallError) -> Vec<u8> {
    match e {
        CallError::UnknownTool(name) => {
            encode_error(id, INVALID_PARAMS, &e.to_string(), Some(json!({"kind": "unknown_tool", "tool": name})))
        }
        CallError::ArgumentSchemaViolation(field) => encode_error(
            id,
            INVALID_PARAMS,
            &e.to_string(),
            Some(json!({"kind": "argument_schema_violation", "field": field})),
        ),
        CallError::Remote { code, message } => encode_error(id, *code, message, None),
        CallError::Transport(_) => encode_error(id, INTERNAL_ERROR, &e.to_string(), None),
    }
}

/// A response frame split into id and outcome, before any id check.
#[derive(Debug, Clone, PartialEq)]
pub struct Response {
    pub id: Value,
    pub outcome: Result<Value, Value>,
}

pub fn parse_response(bytes: &[u8]) -> Result<Response, TransportError> {
    let mut obj = parse_object(bytes)?;
    let id = obj.remove("id").ok_or_else(|| malformed(0, "response without id"))?;
    match (obj.remove("result"), obj.remove("error")) {
        (Some(r), None) => Ok(Response { id, outcome: Ok(r) }),
        (None, Some(e)) if e.is_object() => Ok(Response { id, outcome: Err(e) }),
        (None, Some(_)) => Err(malformed(0, "error member must be an object")),
        _ => Err(malformed(0, "response must carry exactly one of result and error")),
    }
}

fn call_error_from_wire(e: &Value) -> CallError {
    let code = e.get("code").and_then(Value::as_i64).unwrap_or(INTERNAL_ERROR);
    let message = e.get("message").and_then(Value::as_str).unwrap_or_default().to_string();
    let data = e.get("data");
    let field = |k: &str| data.and_then(|d| d.get(k)).and_then(Value::as_str).unwrap_or_default().to_string();
    match data.and_then(|d| d.get("kind")).and_then(Value::as_str) {
        Some("unknown_tool") => CallError::UnknownTool(field("tool")),
        Some("argument_schema_violation") => CallError::ArgumentSchemaViolation(field("field")),
        _ => CallError::Remote { code, message },
    }
}

fn check_id(found: &Value, expected: u64) -> Result<(), TransportError> {
    if found.as_u64() == Some(expected) {
        Ok(())
    } else {
        Err(TransportError::IdMismatch { expected: expected.to_string(), found: found.to_string() })
    }
}

/// Decodes a `tools/call` response for request `expected_id`.
pub fn decode_response(bytes: &[u8], expected_id: u64, tool: &str) -> Result<ToolResult, CallError> {
    let resp = parse_response(bytes)?;
    check_id(&resp.id, expected_id)?;
    match resp.outcome {
        Ok(result) => Ok(tool_result_from_wire(&result, tool)?),
        Err(e) => Err(call_error_from_wire(&e)),
    }
}

pub fn descriptor_to_wire(d: &ToolDescriptor) -> Value {
    let mut props = Map::new();
    let mut required = Vec::new();
    for (name, spec) in &d.input_schema {
        let mut schema = spec.ty.json_schema();
        schema["x-semantic-type"] = json!(spec.ty);
        props.insert(name.clone(), schema);
        if spec.required {
            required.push(Value::String(name.clone()));
        }
    }
    json!({
        "name": d.name,
        "description": d.description,
        "inputSchema": {
            "type": "object",
            "properties": props,
            "required": required,
            "additionalProperties": false,
        },
        "capability": d.capability,
        "outputKind": d.output_kind,
        "singleFlight": d.single_flight,
    })
}

pub fn descriptor_from_wire(v: &Value) -> Result<ToolDescriptor, TransportError> {
    let s = |k: &str| v.get(k).and_then(Value::as_str).ok_or_else(|| malformed(0, format!("descriptor without {k}")));
    let capability: Capability = serde_json::from_value(v.get("capability").cloned().unwrap_or(Value::Null))
        .map_err(|_| malformed(0, "descriptor without valid capability"))?;
    let output_kind: OutputKind = serde_json::from_value(v.get("outputKind").cloned().unwrap_or(Value::Null))
        .map_err(|_| malformed(0, "descriptor without valid outputKind"))?;
    let schema = v.get("inputSchema").ok_or_else(|| malformed(0, "descriptor without inputSchema"))?;
    let required: Vec<&str> = schema
        .get("required")
        .and_then(Value::as_array)
        .map(|a| a.iter().filter_map(Value::as_str).collect())
        .unwrap_or_default();
    let mut input_schema = BTreeMap::new();
    if let Some(props) = schema.get("properties").and_then(Value::as_object) {
        for (name, p) in props {
            let ty: SemanticType = p
                .get("x-semantic-type")
                .cloned()
                .and_then(|t| serde_json::from_value(t).ok())
                .unwrap_or(SemanticType::Json);
            input_schema.insert(name.clone(), FieldSpec { ty, required: required.contains(&name.as_str()) });
        }
    }
    Ok(ToolDescriptor {
        name: s("name")?.into(),
        description: s("description")?.into(),
        capability,
        input_schema,
        output_kind,
        single_flight: v.get("singleFlight").and_then(Value::as_bool).unwrap_or(false),
    })
}

pub fn encode_list_response(id: &Value, tools: &[ToolDescriptor]) -> Vec<u8> {
    encode_result(id, json!({"tools": tools.iter().map(descriptor_to_wire).collect::<Vec<_>>()}))
}

pub fn decode_list_response(bytes: &[u8], expected_id: u64) -> Result<Vec<ToolDescriptor>, CallError> {
    let resp = parse_response(bytes)?;
    check_id(&resp.id, expected_id)?;
    let result = resp.outcome.map_err(|e| call_error_from_wire(&e))?;
    let tools = result.get("tools").and_then(Value::as_array).ok_or_else(|| malformed(0, "result without tools"))?;
    Ok(tools.iter().map(descriptor_from_wire).collect::<Result<Vec<_>, _>>()?)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::protocol::{ContentBlock, OutputKind};

    fn result(kind: OutputKind) -> ToolResult {
        ToolResult {
            tool: "x".into(),
            status: ToolStatus::Ok,
            content: vec![
                ContentBlock::text("summary"),
                ContentBlock::payload(kind, json!({"a": [1, 2.5, -0.1], "b": "ü", "c": null})),
            ],
            provenance: Some("doc-1".into()),
        }
    }

    #[test]
    fn request_shape_is_exact() {
        let args: Arguments = json!({"detections": {"boxes": []}}).as_object().unwrap().clone();
        let bytes = encode_request(7, "box_counting", &args);
        assert_eq!(
            std::str::from_utf8(&bytes).unwrap(),
            "{\"jsonrpc\":\"2.0\",\"id\":7,\"method\":\"tools/call\",\"params\":{\"name\":\"box_counting\",\"arguments\":{\"detections\":{\"boxes\":[]}}}}\n"
        );
        let req = decode_request(&bytes).unwrap();
        assert_eq!(req.id, Some(json!(7)));
        assert_eq!(req.method, METHOD_CALL);
    }

    #[test]
    fn round_trip_every_output_kind() {
        for kind in [
            OutputKind::Text,
            OutputKind::Detections,
            OutputKind::MaskRef,
            OutputKind::Labels,
            OutputKind::Evidence,
            OutputKind::ImageRef,
        ] {
            let r = result(kind);
            let bytes = encode_response(&json!(3), &r);
            assert_eq!(decode_response(&bytes, 3, "x"), Ok(r));
        }
        let err = ToolResult { content: vec![ContentBlock::text("partial")], ..ToolResult::error("x", "boom") };
        assert_eq!(decode_response(&encode_response(&json!(4), &err), 4, "x"), Ok(err));
    }

    #[test]
    fn text_result_wire_shape() {
        let r = ToolResult {
            tool: "box_counting".into(),
            status: ToolStatus::Ok,
            content: vec![ContentBlock::text("12")],
            provenance: None,
        };
        assert_eq!(
            std::str::from_utf8(&encode_response(&json!(1), &r)).unwrap(),
            "{\"jsonrpc\":\"2.0\",\"id\":1,\"result\":{\"content\":[{\"type\":\"text\",\"text\":\"12\"}],\"isError\":false,\"tool\":\"box_counting\"}}\n"
        );
    }

    #[test]
    fn malformed_responses() {
        let missing_id = b"{\"jsonrpc\":\"2.0\",\"result\":{\"content\":[],\"isError\":false}}\n";
        assert!(matches!(
            decode_response(missing_id, 1, "x"),
            Err(CallError::Transport(TransportError::MalformedFrame { .. }))
        ));
        match decode_response(b"{\"id\":1,\"result\":{\"content\":[}\n", 1, "x") {
            Err(CallError::Transport(TransportError::MalformedFrame { position, .. })) => assert_eq!(position, 29),
            other => panic!("{other:?}"),
        }
        let other_id = encode_response(&json!(9), &result(OutputKind::Text));
        assert!(matches!(
            decode_response(&other_id, 1, "x"),
            Err(CallError::Transport(TransportError::IdMismatch { .. }))
        ));
    }

    #[test]
    fn call_errors_survive_the_wire() {
        for e in [CallError::UnknownTool("nope".into()), CallError::ArgumentSchemaViolation("stride".into())] {
            assert_eq!(decode_response(&encode_call_error(&json!(2), &e), 2, "x"), Err(e));
        }
    }

    #[test]
    fn rejected_requests() {
        let r = decode_request(b"{not json").unwrap_err();
        assert_eq!((r.id, r.code), (Value::Null, PARSE_ERROR));
        let r = decode_request(b"{\"jsonrpc\":\"2.0\",\"id\":5}").unwrap_err();
        assert_eq!((r.id, r.code), (json!(5), INVALID_REQUEST));
        let r = decode_request(b"[1,2]").unwrap_err();
        assert_eq!(r.code, INVALID_REQUEST);
    }

    #[test]
    fn descriptor_round_trip() {
        let d = ToolDescriptor::new("patch_tiling", "Use this tool", Capability::General, OutputKind::ImageRef)
            .field("image_ref", SemanticType::ImageRef, true)
            .field("stride", SemanticType::Integer, false);
        let listed = decode_list_response(&encode_list_response(&json!(1), std::slice::from_ref(&d)), 1).unwrap();
        assert_eq!(listed, vec![d]);
    }
}
