//! Point-to-point channels between the server (rank 0) and one client.

use std::io::{BufReader, BufWriter};
use std::net::{TcpListener, TcpStream, ToSocketAddrs};
use std::sync::mpsc::{channel, Receiver, Sender};
use std::time::Duration;

use super::wire::{read_frame, write_frame, FedMessage, DEFAULT_MAX_BODY};
use super::FedError;

/// Ordered, reliable delivery of whole messages.
pub trait Channel: Send {
    fn send(&mut self, msg: &FedMessage) -> Result<(), FedError>;
    fn recv(&mut self) -> Result<FedMessage, FedError>;
}

/// In-process channel. Messages still cross as encoded frames.
pub struct MemChannel {
    tx: Sender<Vec<u8>>,
    rx: Receiver<Vec<u8>>,
}

/// A connected pair of in-process endpoints.
pub fn mem_pair() -> (MemChannel, MemChannel) {
    let (a_tx, b_rx) = channel();
    let (b_tx, a_rx) = channel();
    (
        MemChannel { tx: a_tx, rx: a_rx },
        MemChannel { tx: b_tx, rx: b_rx },
    )
}

impl Channel for MemChannel {
    fn send(&mut self, msg: &FedMessage) -> Result<(), FedError> {
        self.tx
            .send(msg.encode()?)
            .map_err(|_| FedError::Transport("peer hung up".into()))
    }

    fn recv(&mut self) -> Result<FedMessage, FedError> {
        let bytes = self
            .rx
            .recv()
            .map_err(|_| FedError::Transport("peer hung up".into()))?;
        Ok(FedMessage::decode(&bytes)?)
    }
}

pub struct TcpChannel {
    reader: BufReader<TcpStream>,
    writer: BufWriter<TcpStream>,
    max_body: usize,
}

impl TcpChannel {
    pub fn new(stream: TcpStream) -> Result<Self, FedError> {
        stream.set_nodelay(true).map_err(io_err)?;
        let read_half = stream.try_clone().map_err(io_err)?;
        Ok(Self {
            reader: BufReader::new(read_half),
            writer: BufWriter::new(stream),
            max_body: DEFAULT_MAX_BODY,
        })
    }

    /// Connects, retrying while the server is not yet listening.
    pub fn connect(addr: impl ToSocketAddrs + Clone, attempts: usize) -> Result<Self, FedError> {
        let mut last = None;
        for _ in 0..attempts.max(1) {
            match TcpStream::connect(addr.clone()) {
                Ok(s) => return Self::new(s),
                Err(e) => {
                    last = Some(e);
                    std::thread::sleep(Duration::from_millis(50));
                }
            }
        }
        Err(io_err(last.expect("at least one attempt")))
    }
}

impl Channel for TcpChannel {
    fn send(&mut self, msg: &FedMessage) -> Result<(), FedError> {
        Ok(write_frame(&mut self.writer, msg)?)
    }

    fn recv(&mut self) -> Result<FedMessage, FedError> {
        let frame = read_frame(&mut self.reader, self.max_body)?;
        Ok(FedMessage::decode(&frame)?)
    }
}

/// Accepts exactly `k` client connections.
pub fn accept_clients(listener: &TcpListener, k: usize) -> Result<Vec<Box<dyn Channel>>, FedError> {
    let mut out: Vec<Box<dyn Channel>> = Vec::with_capacity(k);
    for _ in 0..k {
        let (stream, _) = listener.accept().map_err(io_err)?;
        out.push(Box::new(TcpChannel::new(stream)?));
    }
    Ok(out)
}

fn io_err(e: std::io::Error) -> FedError {
    FedError::Transport(e.to_string())
}
