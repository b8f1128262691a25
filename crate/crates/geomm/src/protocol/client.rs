use std::fmt;
use std::io::{BufRead, BufReader, Write};
use std::net::{TcpStream, ToSocketAddrs};
use std::process::{Child, Command, Stdio};
use std::str::FromStr;
use std::sync::atomic::{AtomicU64, Ordering};
use std::sync::{mpsc, Mutex};
use std::thread;
use std::time::{Duration, Instant};

use serde_json::Value;

use super::wire;
use super::{Arguments, CallError, ToolDescriptor, ToolResult, TransportError};

/// Where a remote tool server lives.
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum Address {
    /// `tcp://host:port`
    Tcp(String),
    /// `stdio:program arg ...`: a child process speaking on its stdin/stdout.
    Stdio { program: String, args: Vec<String> },
}

impl FromStr for Address {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        if let Some(rest) = s.strip_prefix("tcp://") {
            if rest.is_empty() {
                return Err(format!("address `{s}` has no host"));
            }
            Ok(Address::Tcp(rest.into()))
        } else if let Some(rest) = s.strip_prefix("stdio:") {
            let mut parts = rest.split_whitespace().map(str::to_string);
            let program = parts.next().ok_or_else(|| format!("address `{s}` names no program"))?;
            Ok(Address::Stdio { program, args: parts.collect() })
        } else {
            Err(format!("address `{s}` must start with tcp:// or stdio:"))
        }
    }
}

impl fmt::Display for Address {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Address::Tcp(a) => write!(f, "tcp://{a}"),
            Address::Stdio { program, args } if args.is_empty() => write!(f, "stdio:{program}"),
            Address::Stdio { program, args } => write!(f, "stdio:{program} {}", args.join(" ")),
        }
    }
}

struct Connection {
    writer: Box<dyn Write + Send>,
    replies: mpsc::Receiver<Vec<u8>>,
    child: Option<Child>,
}

impl Drop for Connection {
    fn drop(&mut self) {
        if let Some(child) = &mut self.child {
            let _ = child.kill();
            let _ = child.wait();
        }
    }
}

fn spawn_reader(reader: impl std::io::Read + Send + 'static) -> mpsc::Receiver<Vec<u8>> {
    let (tx, rx) = mpsc::channel();
    thread::spawn(move || {
        let mut reader = BufReader::new(reader);
        loop {
            let mut line = Vec::new();
            match reader.read_until(b'\n', &mut line) {
                Ok(0) | Err(_) => break,
                Ok(_) if line.iter().all(u8::is_ascii_whitespace) => continue,
                Ok(_) => {
                    if tx.send(line).is_err() {
                        break;
                    }
                }
            }
        }
    });
    rx
}

fn connect(address: &Address, timeout: Duration) -> Result<Connection, TransportError> {
    let conn_err = |e: std::io::Error| TransportError::Connection(format!("{address}: {e}"));
    match address {
        Address::Tcp(hostport) => {
            let addr = hostport
                .to_socket_addrs()
                .map_err(conn_err)?
                .next()
                .ok_or_else(|| TransportError::Connection(format!("{address}: no such host")))?;
            let stream = TcpStream::connect_timeout(&addr, timeout).map_err(conn_err)?;
            let _ = stream.set_nodelay(true);
            let read_half = stream.try_clone().map_err(conn_err)?;
            Ok(Connection { writer: Box::new(stream), replies: spawn_reader(read_half), child: None })
        }
        Address::Stdio { program, args } => {
            let mut child = Command::new(program)
                .args(args)
                .stdin(Stdio::piped())
                .stdout(Stdio::piped())
                .stderr(Stdio::inherit())
                .spawn()
                .map_err(conn_err)?;
            let stdin = child.stdin.take().expect("stdin was piped");
            let stdout = child.stdout.take().expect("stdout was piped");
            Ok(Connection { writer: Box::new(stdin), replies: spawn_reader(stdout), child: Some(child) })
        }
    }
}

/// Client side of one remote tool server. The connection is opened on the
/// first call and reused; one call is in flight at a time.
pub struct RemoteEndpoint {
    address: Address,
    conn: Mutex<Option<Connection>>,
    next_id: AtomicU64,
}

impl fmt::Debug for RemoteEndpoint {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("RemoteEndpoint").field("address", &self.address).finish()
    }
}

impl RemoteEndpoint {
    pub fn new(address: Address) -> Self {
        Self { address, conn: Mutex::new(None), next_id: AtomicU64::new(1) }
    }

    pub fn address(&self) -> &Address {
        &self.address
    }

    /// Sends one frame and waits for the response carrying `id`. Responses
    /// to earlier, abandoned requests are discarded.
    fn round_trip(&self, id: u64, frame: &[u8], deadline: Duration) -> Result<Vec<u8>, TransportError> {
        let start = Instant::now();
        let mut guard = self.conn.lock().unwrap_or_else(|p| p.into_inner());
        if guard.is_none() {
            *guard = Some(connect(&self.address, deadline)?);
        }
        let conn = guard.as_mut().expect("connected above");
        if let Err(e) = conn.writer.write_all(frame).and_then(|_| conn.writer.flush()) {
            *guard = None;
            return Err(TransportError::Connection(format!("{}: {e}", self.address)));
        }
        loop {
            let left = deadline.saturating_sub(start.elapsed());
            match conn.replies.recv_timeout(left) {
                Ok(line) => {
                    let resp = wire::parse_response(&line)?;
                    if resp.id.as_u64() == Some(id) {
                        return Ok(line);
                    }
                    if !matches!(resp.id, Value::Number(_)) {
                        // Null ids answer frames the server could not parse.
                        return Ok(line);
                    }
                }
                Err(mpsc::RecvTimeoutError::Timeout) => {
                    return Err(TransportError::Timeout(deadline.as_millis() as u64));
                }
                Err(mpsc::RecvTimeoutError::Disconnected) => {
                    *guard = None;
                    return Err(TransportError::Connection(format!("{}: connection closed", self.address)));
                }
            }
        }
    }

    pub fn call(&self, name: &str, args: &Arguments, deadline: Duration) -> Result<ToolResult, CallError> {
        let id = self.next_id.fetch_add(1, Ordering::Relaxed);
        let line = self.round_trip(id, &wire::encode_request(id, name, args), deadline)?;
        wire::decode_response(&line, id, name)
    }

    pub fn list_tools(&self, deadline: Duration) -> Result<Vec<ToolDescriptor>, CallError> {
        let id = self.next_id.fetch_add(1, Ordering::Relaxed);
        let line = self.round_trip(id, &wire::encode_list_request(id), deadline)?;
        wire::decode_list_response(&line, id)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn address_parsing() {
        assert_eq!("tcp://127.0.0.1:9".parse(), Ok(Address::Tcp("127.0.0.1:9".into())));
        assert_eq!(
            "stdio:geomm serve-tools --toolkit general".parse(),
            Ok(Address::Stdio {
                program: "geomm".into(),
                args: vec!["serve-tools".into(), "--toolkit".into(), "general".into()]
            })
        );
        assert!("http://x".parse::<Address>().is_err());
        assert!("stdio:".parse::<Address>().is_err());
        let a: Address = "stdio:a b".parse().unwrap();
        assert_eq!(a.to_string(), "stdio:a b");
    }

    #[test]
    fn closed_port_fails_on_call() {
        let port = {
            let l = std::net::TcpListener::bind("127.0.0.1:0").unwrap();
            l.local_addr().unwrap().port()
        };
        let ep = RemoteEndpoint::new(Address::Tcp(format!("127.0.0.1:{port}")));
        let r = ep.call("box_counting", &Arguments::new(), Duration::from_secs(2));
        assert!(matches!(r, Err(CallError::Transport(TransportError::Connection(_)))));
    }
}
