use std::collections::BTreeMap;
use std::panic::{self, AssertUnwindSafe};
use std::sync::{mpsc, Arc, Mutex};
use std::thread;
use std::time::Duration;

use thiserror::Error;

use super::client::RemoteEndpoint;
use super::{Arguments, CallError, Capability, ContentBlock, ToolDescriptor, ToolResult, ToolStatus, TransportError};

/// Per-call deadline when the caller does not supply one.
pub const DEFAULT_DEADLINE: Duration = Duration::from_secs(30);

/// Successful handler output.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct ToolOutput {
    pub content: Vec<ContentBlock>,
    pub provenance: Option<String>,
}

impl ToolOutput {
    pub fn text(s: impl Into<String>) -> Self {
        Self { content: vec![ContentBlock::text(s)], provenance: None }
    }

    pub fn block(mut self, b: ContentBlock) -> Self {
        self.content.push(b);
        self
    }

    pub fn provenance(mut self, p: impl Into<String>) -> Self {
        self.provenance = Some(p.into());
        self
    }
}

/// An in-process tool implementation. Errors become results with error
/// status, never call failures.
pub trait ToolHandler: Send + Sync + 'static {
    fn call(&self, args: &Arguments) -> Result<ToolOutput, String>;
}

impl<F> ToolHandler for F
where
    F: Fn(&Arguments) -> Result<ToolOutput, String> + Send + Sync + 'static,
{
    fn call(&self, args: &Arguments) -> Result<ToolOutput, String> {
        self(args)
    }
}

#[derive(Clone)]
pub enum Binding {
    InProcess(Arc<dyn ToolHandler>),
    Remote(Arc<RemoteEndpoint>),
}

impl Binding {
    pub fn handler(h: impl ToolHandler) -> Self {
        Binding::InProcess(Arc::new(h))
    }
}

impl std::fmt::Debug for Binding {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            Binding::InProcess(_) => f.write_str("InProcess"),
            Binding::Remote(e) => write!(f, "Remote({})", e.address()),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum RegistryError {
    #[error("a tool named `{0}` is already registered")]
    DuplicateName(String),
    #[error("tool `{0}` has an empty name or description")]
    InvalidDescriptor(String),
    #[error("could not list remote tools: {0}")]
    Discovery(CallError),
}

#[derive(Clone, Debug)]
struct Entry {
    descriptor: ToolDescriptor,
    binding: Binding,
    gate: Option<Arc<Mutex<()>>>,
}

/// Immutable set of callable tools. Building returns a new registry; calls
/// never modify it, so one registry can be shared across threads.
#[derive(Clone, Debug)]
pub struct Registry {
    tools: BTreeMap<String, Entry>,
    deadline: Duration,
}

impl Default for Registry {
    fn default() -> Self {
        Self::new()
    }
}

impl Registry {
    pub fn new() -> Self {
        Self { tools: BTreeMap::new(), deadline: DEFAULT_DEADLINE }
    }

    pub fn with_deadline(mut self, deadline: Duration) -> Self {
        self.deadline = deadline;
        self
    }

    pub fn deadline(&self) -> Duration {
        self.deadline
    }

    /// Adds a tool. Nothing is invoked or connected here.
    pub fn register_tool(mut self, descriptor: ToolDescriptor, binding: Binding) -> Result<Self, RegistryError> {
        if descriptor.name.trim().is_empty() || descriptor.description.trim().is_empty() {
            return Err(RegistryError::InvalidDescriptor(descriptor.name));
        }
        if self.tools.contains_key(&descriptor.name) {
            return Err(RegistryError::DuplicateName(descriptor.name));
        }
        let gate = descriptor.single_flight.then(|| Arc::new(Mutex::new(())));
        self.tools.insert(descriptor.name.clone(), Entry { descriptor, binding, gate });
        Ok(self)
    }

    /// Registers every tool `endpoint` lists, bound to that endpoint.
    pub fn register_remote(mut self, endpoint: Arc<RemoteEndpoint>) -> Result<Self, RegistryError> {
        let listed = endpoint.list_tools(self.deadline).map_err(RegistryError::Discovery)?;
        for d in listed {
            self = self.register_tool(d, Binding::Remote(endpoint.clone()))?;
        }
        Ok(self)
    }

    /// Union of two registries; names must not collide.
    pub fn merge(mut self, other: Registry) -> Result<Self, RegistryError> {
        for (name, entry) in other.tools {
            if self.tools.contains_key(&name) {
                return Err(RegistryError::DuplicateName(name));
            }
            self.tools.insert(name, entry);
        }
        Ok(self)
    }

    /// All descriptors sorted by name.
    pub fn list_tools(&self) -> Vec<ToolDescriptor> {
        self.tools.values().map(|e| e.descriptor.clone()).collect()
    }

    pub fn descriptor(&self, name: &str) -> Option<&ToolDescriptor> {
        self.tools.get(name).map(|e| &e.descriptor)
    }

    pub fn contains(&self, name: &str) -> bool {
        self.tools.contains_key(name)
    }

    pub fn len(&self) -> usize {
        self.tools.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tools.is_empty()
    }

    /// A copy without the tools of the given capabilities.
    pub fn without_capabilities(&self, disabled: &[Capability]) -> Registry {
        Registry {
            tools: self
                .tools
                .iter()
                .filter(|(_, e)| !disabled.contains(&e.descriptor.capability))
                .map(|(k, e)| (k.clone(), e.clone()))
                .collect(),
            deadline: self.deadline,
        }
    }

    /// Calls with the registry's default deadline.
    pub fn call(&self, name: &str, args: &Arguments) -> Result<ToolResult, CallError> {
        self.call_tool(name, args, self.deadline)
    }

    /// Validates `args`, dispatches to the binding and waits at most
    /// `deadline`. Handler failures come back as error-status results.
    pub fn call_tool(&self, name: &str, args: &Arguments, deadline: Duration) -> Result<ToolResult, CallError> {
        let entry = self.tools.get(name).ok_or_else(|| CallError::UnknownTool(name.into()))?;
        entry.descriptor.validate(args).map_err(CallError::ArgumentSchemaViolation)?;
        let _guard = entry.gate.as_ref().map(|g| g.lock().unwrap_or_else(|p| p.into_inner()));
        let mut result = match &entry.binding {
            Binding::InProcess(h) => run_in_process(name, h.clone(), args.clone(), deadline)?,
            Binding::Remote(endpoint) => endpoint.call(name, args, deadline)?,
        };
        if result.is_ok() && entry.descriptor.capability == Capability::Knowledge && result.provenance.is_none() {
            result = ToolResult::error(name, "knowledge result carries no provenance");
        }
        Ok(result)
    }
}

fn run_in_process(
    name: &str,
    handler: Arc<dyn ToolHandler>,
    args: Arguments,
    deadline: Duration,
) -> Result<ToolResult, CallError> {
    let (tx, rx) = mpsc::channel();
    thread::Builder::new()
        .name(format!("tool-{name}"))
        .spawn(move || {
            let out = panic::catch_unwind(AssertUnwindSafe(|| handler.call(&args)));
            let _ = tx.send(out);
        })
        .map_err(|e| TransportError::Connection(format!("cannot start handler thread: {e}")))?;
    let out = rx.recv_timeout(deadline).map_err(|e| match e {
        mpsc::RecvTimeoutError::Timeout => TransportError::Timeout(deadline.as_millis() as u64),
        mpsc::RecvTimeoutError::Disconnected => TransportError::Connection("handler thread vanished".into()),
    })?;
    Ok(match out {
        Ok(Ok(o)) => {
            ToolResult { tool: name.into(), status: ToolStatus::Ok, content: o.content, provenance: o.provenance }
        }
        Ok(Err(msg)) => ToolResult::error(name, msg),
        Err(p) => {
            let msg = p
                .downcast_ref::<&str>()
                .map(|s| s.to_string())
                .or_else(|| p.downcast_ref::<String>().cloned())
                .unwrap_or_else(|| "handler panicked".into());
            ToolResult::error(name, format!("handler panicked: {msg}"))
        }
    })
}
