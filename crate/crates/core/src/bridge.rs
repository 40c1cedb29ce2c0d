//! Lockstep driver for an external scheduler.
//!
//! Each message is one line of JSON. The engine opens with
//! `{"type":"init","total_nodes":N,"timestep":S}` and expects
//! `{"type":"ready"}`. Every step it then sends
//!
//! ```text
//! {"type":"tick","time":T,"new_jobs":[{"id":I,"nodes":N,"wall_limit":W,"priority":P}],"completed":[I,...]}
//! ```
//!
//! and the scheduler answers with the full set of jobs it considers running:
//!
//! ```text
//! {"type":"running","jobs":[{"id":I,"nodes":[...]},{"id":J,"count":N}]}
//! ```
//!
//! The `count` form leaves node choice to the engine's resource manager.

use std::collections::{BTreeMap, VecDeque};
use std::io::{BufRead, BufReader, Write};
use std::process::{Child, ChildStdin, ChildStdout, Command, Stdio};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::model::{JobId, NodeId, Seconds};

#[derive(Debug, Clone, PartialEq, Error)]
pub enum ProtocolError {
    #[error("malformed message `{line}`: {reason}")]
    Malformed { line: String, reason: String },
    #[error("unexpected reply `{0}`")]
    UnexpectedReply(String),
    #[error("unknown job {0}")]
    UnknownJob(JobId),
    #[error("job {0} listed twice")]
    DuplicateJob(JobId),
    #[error("job {job} cannot be placed: {reason}")]
    Capacity { job: JobId, reason: String },
    #[error("tick time {now} does not follow {prev}")]
    TimeNotIncreasing { prev: Seconds, now: Seconds },
    #[error("external scheduler closed the connection")]
    Closed,
    #[error("external scheduler i/o: {0}")]
    Io(String),
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct JobDescriptor {
    pub id: JobId,
    pub nodes: usize,
    pub wall_limit: Seconds,
    pub priority: i64,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TickRequest {
    pub time: Seconds,
    pub new_jobs: Vec<JobDescriptor>,
    pub completed: Vec<JobId>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "lowercase")]
pub enum Request {
    Init { total_nodes: usize, timestep: Seconds },
    Tick(TickRequest),
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum RunningEntry {
    Nodes { id: JobId, nodes: Vec<NodeId> },
    Count { id: JobId, count: usize },
}

impl RunningEntry {
    pub fn id(&self) -> JobId {
        match self {
            RunningEntry::Nodes { id, .. } | RunningEntry::Count { id, .. } => *id,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "lowercase")]
pub enum Response {
    Ready,
    Running { jobs: Vec<RunningEntry> },
}

pub fn encode<T: Serialize>(msg: &T) -> String {
    serde_json::to_string(msg).expect("protocol messages always serialize")
}

pub fn decode<T: for<'de> Deserialize<'de>>(line: &str) -> Result<T, ProtocolError> {
    serde_json::from_str(line.trim_end_matches(['\n', '\r'])).map_err(|e| ProtocolError::Malformed {
        line: line.trim_end().to_string(),
        reason: e.to_string(),
    })
}

/// An external scheduler as seen by the engine.
pub trait ExternalScheduler {
    fn init(&mut self, total_nodes: usize, timestep: Seconds) -> Result<(), ProtocolError>;
    fn tick(&mut self, request: &TickRequest) -> Result<Vec<RunningEntry>, ProtocolError>;
}

/// One request line out, one response line back.
pub trait Transport {
    fn exchange(&mut self, line: &str) -> Result<String, ProtocolError>;
}

/// Wraps a transport with message encoding and ordering checks.
pub struct Bridge<T: Transport> {
    transport: T,
    last_time: Option<Seconds>,
}

impl<T: Transport> Bridge<T> {
    pub fn new(transport: T) -> Self {
        Bridge {
            transport,
            last_time: None,
        }
    }

    pub fn into_inner(self) -> T {
        self.transport
    }
}

impl<T: Transport> ExternalScheduler for Bridge<T> {
    fn init(&mut self, total_nodes: usize, timestep: Seconds) -> Result<(), ProtocolError> {
        let reply = self
            .transport
            .exchange(&encode(&Request::Init { total_nodes, timestep }))?;
        match decode::<Response>(&reply)? {
            Response::Ready => Ok(()),
            Response::Running { .. } => Err(ProtocolError::UnexpectedReply(reply.trim_end().to_string())),
        }
    }

    fn tick(&mut self, request: &TickRequest) -> Result<Vec<RunningEntry>, ProtocolError> {
        if let Some(prev) = self.last_time {
            if request.time <= prev {
                return Err(ProtocolError::TimeNotIncreasing {
                    prev,
                    now: request.time,
                });
            }
        }
        self.last_time = Some(request.time);
        let reply = self.transport.exchange(&encode(&Request::Tick(request.clone())))?;
        match decode::<Response>(&reply)? {
            Response::Running { jobs } => Ok(jobs),
            Response::Ready => Err(ProtocolError::UnexpectedReply(reply.trim_end().to_string())),
        }
    }
}

/// A child process speaking the protocol over stdin/stdout.
pub struct ChildTransport {
    child: Child,
    stdin: ChildStdin,
    stdout: BufReader<ChildStdout>,
}

impl ChildTransport {
    /// Run `command` through `sh -c`.
    pub fn spawn(command: &str) -> Result<Self, ProtocolError> {
        let mut child = Command::new("sh")
            .arg("-c")
            .arg(command)
            .stdin(Stdio::piped())
            .stdout(Stdio::piped())
            .spawn()
            .map_err(|e| ProtocolError::Io(format!("spawn `{command}`: {e}")))?;
        let stdin = child.stdin.take().unwrap();
        let stdout = BufReader::new(child.stdout.take().unwrap());
        Ok(ChildTransport { child, stdin, stdout })
    }
}

impl Transport for ChildTransport {
    fn exchange(&mut self, line: &str) -> Result<String, ProtocolError> {
        writeln!(self.stdin, "{line}")
            .and_then(|_| self.stdin.flush())
            .map_err(|e| ProtocolError::Io(e.to_string()))?;
        let mut reply = String::new();
        let n = self
            .stdout
            .read_line(&mut reply)
            .map_err(|e| ProtocolError::Io(e.to_string()))?;
        if n == 0 {
            return Err(ProtocolError::Closed);
        }
        Ok(reply)
    }
}

impl Drop for ChildTransport {
    fn drop(&mut self) {
        let _ = self.child.kill();
        let _ = self.child.wait();
    }
}

/// Reference external scheduler: FCFS without backfill over the jobs it has
/// been told about, tracking only its own free-node count.
#[derive(Debug, Default)]
pub struct StubScheduler {
    total: usize,
    free: usize,
    initialized: bool,
    last_time: Option<Seconds>,
    queue: VecDeque<(JobId, usize)>,
    running: BTreeMap<JobId, usize>,
}

impl StubScheduler {
    pub fn new() -> Self {
        StubScheduler::default()
    }

    /// Handle one request line and produce the response line.
    pub fn handle(&mut self, line: &str) -> Result<String, ProtocolError> {
        match decode::<Request>(line)? {
            Request::Init { total_nodes, .. } => {
                self.total = total_nodes;
                self.free = total_nodes;
                self.initialized = true;
                Ok(encode(&Response::Ready))
            }
            Request::Tick(req) => {
                if !self.initialized {
                    return Err(ProtocolError::UnexpectedReply("tick before init".into()));
                }
                if let Some(prev) = self.last_time {
                    if req.time <= prev {
                        return Err(ProtocolError::TimeNotIncreasing { prev, now: req.time });
                    }
                }
                self.last_time = Some(req.time);
                for id in &req.completed {
                    let nodes = self.running.remove(id).ok_or(ProtocolError::UnknownJob(*id))?;
                    self.free += nodes;
                }
                for job in &req.new_jobs {
                    if job.nodes > self.total {
                        return Err(ProtocolError::Capacity {
                            job: job.id,
                            reason: format!("needs {} of {} nodes", job.nodes, self.total),
                        });
                    }
                    self.queue.push_back((job.id, job.nodes));
                }
                while let Some(&(id, nodes)) = self.queue.front() {
                    if nodes > self.free {
                        break;
                    }
                    self.queue.pop_front();
                    self.free -= nodes;
                    self.running.insert(id, nodes);
                }
                let jobs = self
                    .running
                    .iter()
                    .map(|(&id, &count)| RunningEntry::Count { id, count })
                    .collect();
                Ok(encode(&Response::Running { jobs }))
            }
        }
    }
}

impl Transport for StubScheduler {
    fn exchange(&mut self, line: &str) -> Result<String, ProtocolError> {
        self.handle(line)
    }
}

/// Serve the stub over a line stream until EOF.
pub fn run_stub(input: impl BufRead, mut output: impl Write) -> Result<(), ProtocolError> {
    let mut stub = StubScheduler::new();
    for line in input.lines() {
        let line = line.map_err(|e| ProtocolError::Io(e.to_string()))?;
        if line.trim().is_empty() {
            continue;
        }
        let reply = stub.handle(&line)?;
        writeln!(output, "{reply}")
            .and_then(|_| output.flush())
            .map_err(|e| ProtocolError::Io(e.to_string()))?;
    }
    Ok(())
}
