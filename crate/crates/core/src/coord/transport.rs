//! Line-oriented byte transports: TCP and an in-process loopback pipe.
//! Both carry exactly the bytes produced by [`encode`](super::encode).

use std::io::{self, BufRead, BufReader, Read, Write};
use std::net::TcpStream;
use std::sync::mpsc::{self, Receiver, RecvTimeoutError, Sender};
use std::time::Duration;

use super::message::{decode, encode, CoordMessage};
use super::CoordError;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Direction {
    Sent,
    Received,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct TranscriptEntry {
    pub direction: Direction,
    pub bytes: Vec<u8>,
}

/// Renders a transcript as text: one line per message, prefixed by `>` for
/// sent and `<` for received.
pub fn render_transcript(entries: &[TranscriptEntry]) -> Vec<u8> {
    let mut out = Vec::new();
    for e in entries {
        out.extend_from_slice(match e.direction {
            Direction::Sent => b"> ",
            Direction::Received => b"< ",
        });
        out.extend_from_slice(&e.bytes);
    }
    out
}

/// One end of a bidirectional message stream.
pub struct Channel {
    reader: Box<dyn BufRead + Send>,
    writer: Box<dyn Write + Send>,
    transcript: Option<Vec<TranscriptEntry>>,
}

impl Channel {
    pub fn new(reader: Box<dyn BufRead + Send>, writer: Box<dyn Write + Send>) -> Self {
        Self {
            reader,
            writer,
            transcript: None,
        }
    }

    pub fn tcp(stream: TcpStream, timeout: Duration) -> io::Result<Self> {
        stream.set_nodelay(true)?;
        stream.set_read_timeout(Some(timeout))?;
        let reader = BufReader::new(stream.try_clone()?);
        Ok(Self::new(Box::new(reader), Box::new(stream)))
    }

    /// Starts keeping a copy of every line sent and received.
    pub fn record(mut self) -> Self {
        self.transcript = Some(Vec::new());
        self
    }

    pub fn transcript(&self) -> Option<&[TranscriptEntry]> {
        self.transcript.as_deref()
    }

    pub fn take_transcript(&mut self) -> Option<Vec<TranscriptEntry>> {
        self.transcript.take()
    }

    pub fn send(&mut self, msg: &CoordMessage) -> Result<(), CoordError> {
        let bytes = encode(msg);
        self.send_raw(&bytes)
    }

    /// Writes bytes as-is. Tests use this to inject malformed traffic.
    pub fn send_raw(&mut self, bytes: &[u8]) -> Result<(), CoordError> {
        self.writer.write_all(bytes).map_err(CoordError::from_io)?;
        self.writer.flush().map_err(CoordError::from_io)?;
        if let Some(t) = self.transcript.as_mut() {
            t.push(TranscriptEntry {
                direction: Direction::Sent,
                bytes: bytes.to_vec(),
            });
        }
        Ok(())
    }

    pub fn recv(&mut self) -> Result<CoordMessage, CoordError> {
        let mut line = Vec::new();
        let n = self.reader.read_until(b'\n', &mut line).map_err(CoordError::from_io)?;
        if n == 0 {
            return Err(CoordError::Closed);
        }
        if let Some(t) = self.transcript.as_mut() {
            t.push(TranscriptEntry {
                direction: Direction::Received,
                bytes: line.clone(),
            });
        }
        decode(&line)
    }
}

struct PipeWriter {
    tx: Sender<Vec<u8>>,
}

impl Write for PipeWriter {
    fn write(&mut self, buf: &[u8]) -> io::Result<usize> {
        self.tx
            .send(buf.to_vec())
            .map_err(|_| io::Error::new(io::ErrorKind::BrokenPipe, "loopback peer gone"))?;
        Ok(buf.len())
    }

    fn flush(&mut self) -> io::Result<()> {
        Ok(())
    }
}

struct PipeReader {
    rx: Receiver<Vec<u8>>,
    buf: Vec<u8>,
    pos: usize,
    timeout: Duration,
}

impl Read for PipeReader {
    fn read(&mut self, out: &mut [u8]) -> io::Result<usize> {
        let avail = self.fill_buf()?;
        let n = avail.len().min(out.len());
        out[..n].copy_from_slice(&avail[..n]);
        self.consume(n);
        Ok(n)
    }
}

impl BufRead for PipeReader {
    fn fill_buf(&mut self) -> io::Result<&[u8]> {
        while self.pos >= self.buf.len() {
            match self.rx.recv_timeout(self.timeout) {
                Ok(chunk) => {
                    self.buf = chunk;
                    self.pos = 0;
                }
                Err(RecvTimeoutError::Timeout) => {
                    return Err(io::Error::new(io::ErrorKind::TimedOut, "loopback read timed out"))
                }
                // peer dropped: end of stream
                Err(RecvTimeoutError::Disconnected) => return Ok(&[]),
            }
        }
        Ok(&self.buf[self.pos..])
    }

    fn consume(&mut self, amt: usize) {
        self.pos += amt;
    }
}

/// Two connected in-process channel ends.
pub fn loopback(timeout: Duration) -> (Channel, Channel) {
    let (a_tx, a_rx) = mpsc::channel();
    let (b_tx, b_rx) = mpsc::channel();
    let end = |rx, tx| {
        Channel::new(
            Box::new(PipeReader {
                rx,
                buf: Vec::new(),
                pos: 0,
                timeout,
            }),
            Box::new(PipeWriter { tx }),
        )
    };
    (end(b_rx, a_tx), end(a_rx, b_tx))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn loopback_carries_lines_both_ways() {
        let (mut a, mut b) = loopback(Duration::from_secs(1));
        a.send(&CoordMessage::Continue { timestep: 3 }).unwrap();
        assert_eq!(b.recv().unwrap(), CoordMessage::Continue { timestep: 3 });
        b.send(&CoordMessage::End).unwrap();
        assert_eq!(a.recv().unwrap(), CoordMessage::End);
    }

    #[test]
    fn loopback_timeout_and_close() {
        let (mut a, b) = loopback(Duration::from_millis(20));
        assert!(matches!(a.recv(), Err(CoordError::Timeout)));
        drop(b);
        assert!(matches!(a.recv(), Err(CoordError::Closed)));
    }

    #[test]
    fn split_writes_reassemble() {
        let (mut a, mut b) = loopback(Duration::from_secs(1));
        let bytes = encode(&CoordMessage::Hello { version: 1 });
        let (x, y) = bytes.split_at(5);
        a.send_raw(x).unwrap();
        a.send_raw(y).unwrap();
        assert_eq!(b.recv().unwrap(), CoordMessage::Hello { version: 1 });
    }
}
