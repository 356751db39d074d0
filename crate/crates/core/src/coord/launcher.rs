//! Starting Level-1 instances, either on a thread of this process or as a
//! separate `l1-server` process reached over TCP.

use std::io::{BufRead, BufReader};
use std::net::{SocketAddr, TcpListener, TcpStream};
use std::path::PathBuf;
use std::process::{Child, Command, Stdio};
use std::thread::{self, JoinHandle};
use std::time::{Duration, Instant};

use log::warn;

use super::message::{FinalPayload, InitPayload, StepPayload};
use super::session::{serve, L1Session};
use super::transport::{loopback, Channel};
use super::CoordError;
use crate::level1::L1Params;
use crate::model::InstanceId;

pub const DEFAULT_TIMEOUT: Duration = Duration::from_secs(30);

/// Where Level-1 instances run.
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum L1Launcher {
    /// A thread per instance, connected by a loopback pipe.
    InProcess,
    /// A child process per instance running `<program> l1-server`.
    Subprocess { program: PathBuf },
}

enum Peer {
    Thread(JoinHandle<Result<(), CoordError>>),
    Child(Child),
}

/// An open session plus the thread or process serving it.
pub struct L1Link {
    session: L1Session,
    peer: Peer,
}

impl L1Launcher {
    pub fn open(&self, init: InitPayload, timeout: Duration) -> Result<L1Link, CoordError> {
        let instance = init.instance_id;
        let (channel, peer) = match self {
            L1Launcher::InProcess => {
                let (ours, mut theirs) = loopback(timeout);
                let handle = thread::Builder::new()
                    .name(format!("{instance}"))
                    .spawn(move || serve(&mut theirs, Some(instance), L1Params::default()))
                    .map_err(|e| CoordError::Launch(e.to_string()))?;
                (ours, Peer::Thread(handle))
            }
            L1Launcher::Subprocess { program } => {
                let mut child = Command::new(program)
                    .args(["l1-server", "--port", "0", "--instance-id"])
                    .arg(instance.0.to_string())
                    .stdin(Stdio::null())
                    .stdout(Stdio::piped())
                    .stderr(Stdio::inherit())
                    .spawn()
                    .map_err(|e| CoordError::Launch(format!("{}: {e}", program.display())))?;
                match connect_child(&mut child, timeout) {
                    Ok(ch) => (ch, Peer::Child(child)),
                    Err(e) => {
                        let _ = child.kill();
                        let _ = child.wait();
                        return Err(e);
                    }
                }
            }
        };
        match L1Session::open(channel, init) {
            Ok(session) => Ok(L1Link { session, peer }),
            Err(e) => {
                reap(peer);
                Err(e)
            }
        }
    }
}

fn connect_child(child: &mut Child, timeout: Duration) -> Result<Channel, CoordError> {
    let stdout = child.stdout.take().expect("stdout is piped");
    let mut line = String::new();
    BufReader::new(stdout)
        .read_line(&mut line)
        .map_err(|e| CoordError::Launch(e.to_string()))?;
    let addr: SocketAddr = line
        .trim()
        .strip_prefix("LISTENING ")
        .and_then(|a| a.parse().ok())
        .ok_or_else(|| CoordError::Launch(format!("unexpected l1-server banner {line:?}")))?;
    let stream = TcpStream::connect_timeout(&addr, timeout).map_err(CoordError::from_io)?;
    Channel::tcp(stream, timeout).map_err(CoordError::from_io)
}

fn reap(peer: Peer) {
    match peer {
        Peer::Thread(h) => {
            let _ = h.join();
        }
        Peer::Child(mut c) => {
            let _ = c.kill();
            let _ = c.wait();
        }
    }
}

impl L1Link {
    pub fn instance(&self) -> InstanceId {
        self.session.instance()
    }

    pub fn step(&mut self, timestep: u32) -> Result<StepPayload, CoordError> {
        self.session.step(timestep)
    }

    /// Peak resident set of the serving process, if it is a separate one.
    pub fn peer_peak_rss(&self) -> Option<u64> {
        match &self.peer {
            Peer::Child(c) => peak_rss_of(&format!("/proc/{}/status", c.id())),
            Peer::Thread(_) => None,
        }
    }

    /// Ends the session and waits for the server to exit.
    pub fn end(self) -> Result<FinalPayload, CoordError> {
        let L1Link { session, peer } = self;
        let ended = session.end();
        let joined = match peer {
            Peer::Thread(h) => match h.join() {
                Ok(r) => r,
                Err(_) => Err(CoordError::Level1("level-1 thread panicked".into())),
            },
            Peer::Child(mut c) => match c.wait() {
                Ok(status) if status.success() => Ok(()),
                Ok(status) => Err(CoordError::Level1(format!("l1-server exited with {status}"))),
                Err(e) => Err(CoordError::from_io(e)),
            },
        };
        let (fin, _) = ended?;
        if let Err(e) = joined {
            warn!("level-1 server reported after FINAL: {e}");
        }
        Ok(fin)
    }

    /// Drops the session without END, terminating the server.
    pub fn abort(self) {
        let L1Link { session, peer } = self;
        drop(session);
        reap(peer);
    }
}

/// Binds 127.0.0.1:`port`, reports the bound address, accepts one
/// connection and serves one session on it.
pub fn listen_and_serve(
    port: u16,
    instance: InstanceId,
    timeout: Duration,
    on_ready: impl FnOnce(SocketAddr),
) -> Result<(), CoordError> {
    let listener = TcpListener::bind(("127.0.0.1", port)).map_err(CoordError::from_io)?;
    on_ready(listener.local_addr().map_err(CoordError::from_io)?);
    listener.set_nonblocking(true).map_err(CoordError::from_io)?;
    let deadline = Instant::now() + timeout;
    let stream = loop {
        match listener.accept() {
            Ok((s, _)) => break s,
            Err(e) if e.kind() == std::io::ErrorKind::WouldBlock => {
                if Instant::now() >= deadline {
                    return Err(CoordError::Timeout);
                }
                thread::sleep(Duration::from_millis(2));
            }
            Err(e) => return Err(CoordError::from_io(e)),
        }
    };
    stream.set_nonblocking(false).map_err(CoordError::from_io)?;
    let mut channel = Channel::tcp(stream, timeout).map_err(CoordError::from_io)?;
    serve(&mut channel, Some(instance), L1Params::default())
}

/// `VmHWM` of a `/proc/<pid>/status` file, in bytes.
pub fn peak_rss_of(status_path: &str) -> Option<u64> {
    let text = std::fs::read_to_string(status_path).ok()?;
    parse_vm_hwm(&text)
}

/// Peak resident set of this process, in bytes.
pub fn own_peak_rss() -> Option<u64> {
    peak_rss_of("/proc/self/status")
}

fn parse_vm_hwm(status: &str) -> Option<u64> {
    let line = status.lines().find(|l| l.starts_with("VmHWM:"))?;
    let mut parts = line["VmHWM:".len()..].split_whitespace();
    let n: u64 = parts.next()?.parse().ok()?;
    match parts.next() {
        Some("kB") => Some(n * 1024),
        _ => None,
    }
}
