//! Serves a registry over line-delimited JSON-RPC.

use std::io::{self, BufRead, Write};
use std::net::{SocketAddr, TcpListener};
use std::sync::Arc;
use std::thread::{self, JoinHandle};

use serde_json::{json, Value};

use super::wire::{self, Request};
use super::{Arguments, Registry};

pub const PROTOCOL_VERSION: &str = "2024-11-05";

fn handle(registry: &Registry, req: Request) -> Option<Vec<u8>> {
    let id = req.id?;
    let frame = match req.method.as_str() {
        wire::METHOD_INITIALIZE => wire::encode_result(
            &id,
            json!({
                "protocolVersion": PROTOCOL_VERSION,
                "serverInfo": {"name": "geomm", "version": env!("CARGO_PKG_VERSION")},
                "capabilities": {"tools": {}},
            }),
        ),
        wire::METHOD_LIST => wire::encode_list_response(&id, &registry.list_tools()),
        wire::METHOD_CALL => {
            let name = req.params.get("name").and_then(Value::as_str);
            let args = match req.params.get("arguments") {
                None | Some(Value::Null) => Some(Arguments::new()),
                Some(Value::Object(m)) => Some(m.clone()),
                Some(_) => None,
            };
            match (name, args) {
                (Some(name), Some(args)) => match registry.call(name, &args) {
                    Ok(result) => wire::encode_response(&id, &result),
                    Err(e) => wire::encode_call_error(&id, &e),
                },
                _ => wire::encode_error(&id, wire::INVALID_PARAMS, "params need a name and an arguments object", None),
            }
        }
        other => wire::encode_error(&id, wire::METHOD_NOT_FOUND, &format!("unknown method `{other}`"), None),
    };
    Some(frame)
}

/// Answers frames from `input` until it ends. Bad frames get error
/// responses and never stop the loop.
pub fn serve(registry: &Registry, mut input: impl BufRead, mut output: impl Write) -> io::Result<()> {
    let mut line = Vec::new();
    loop {
        line.clear();
        if input.read_until(b'\n', &mut line)? == 0 {
            return Ok(());
        }
        if line.iter().all(u8::is_ascii_whitespace) {
            continue;
        }
        let reply = match wire::decode_request(&line) {
            Ok(req) => handle(registry, req),
            Err(rej) => Some(wire::encode_error(&rej.id, rej.code, &rej.message, None)),
        };
        if let Some(frame) = reply {
            output.write_all(&frame)?;
            output.flush()?;
        }
    }
}

/// Accepts connections forever, one thread per connection.
pub fn serve_tcp(registry: Arc<Registry>, listener: TcpListener) -> io::Result<()> {
    for stream in listener.incoming() {
        let stream = stream?;
        let registry = registry.clone();
        thread::spawn(move || {
            let Ok(read_half) = stream.try_clone() else { return };
            let _ = serve(&registry, io::BufReader::new(read_half), stream);
        });
    }
    Ok(())
}

/// Binds an ephemeral loopback port and serves `registry` on it in the
/// background.
pub fn spawn_loopback(registry: Registry) -> io::Result<(SocketAddr, JoinHandle<io::Result<()>>)> {
    let listener = TcpListener::bind("127.0.0.1:0")?;
    let addr = listener.local_addr()?;
    let registry = Arc::new(registry);
    Ok((addr, thread::spawn(move || serve_tcp(registry, listener))))
}
