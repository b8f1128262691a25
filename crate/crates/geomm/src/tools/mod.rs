//! Native toolkits exposed through the registry.

pub mod general;

use std::path::PathBuf;

use serde::de::DeserializeOwned;
use serde_json::Value;

use crate::protocol::Arguments;

pub(crate) fn text<'a>(args: &'a Arguments, name: &str) -> Result<&'a str, String> {
    opt_text(args, name).ok_or_else(|| format!("missing `{name}`"))
}

pub(crate) fn opt_text<'a>(args: &'a Arguments, name: &str) -> Option<&'a str> {
    args.get(name).and_then(Value::as_str)
}

pub(crate) fn path(args: &Arguments, name: &str) -> Result<PathBuf, String> {
    text(args, name).map(PathBuf::from)
}

pub(crate) fn opt_u32(args: &Arguments, name: &str) -> Result<Option<u32>, String> {
    match args.get(name) {
        None | Some(Value::Null) => Ok(None),
        Some(v) => v
            .as_u64()
            .and_then(|n| u32::try_from(n).ok())
            .map(Some)
            .ok_or_else(|| format!("`{name}` must be a non-negative 32-bit integer")),
    }
}

pub(crate) fn u32_arg(args: &Arguments, name: &str) -> Result<u32, String> {
    opt_u32(args, name)?.ok_or_else(|| format!("missing `{name}`"))
}

pub(crate) fn opt_f64(args: &Arguments, name: &str) -> Option<f64> {
    args.get(name).and_then(Value::as_f64)
}

pub(crate) fn parse<T: DeserializeOwned>(args: &Arguments, name: &str) -> Result<T, String> {
    let v = args.get(name).cloned().unwrap_or(Value::Null);
    serde_json::from_value(v).map_err(|e| format!("`{name}`: {e}"))
}
