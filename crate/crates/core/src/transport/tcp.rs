//! TCP transport: one lazily opened connection per directed pair, each
//! carrying length-prefixed frames.

use std::collections::HashMap;
use std::io::{self, BufReader, BufWriter, Read, Write};
use std::net::{Shutdown, TcpListener, TcpStream};
use std::sync::atomic::{AtomicBool, AtomicU64, Ordering};
use std::sync::mpsc::{channel, Receiver, Sender};
use std::sync::{Arc, Mutex};
use std::thread;
use std::time::Duration;

use super::{Address, Outbox, SendError, Transport};
use crate::wire::codec::{decode_frame, encode_frame, max_frame};
use crate::wire::Message;

struct Endpoint {
    port: u16,
    closed: Arc<AtomicBool>,
}

#[derive(Default)]
struct Shared {
    next: AtomicU64,
    endpoints: Mutex<HashMap<u64, Endpoint>>,
    undeliverable: AtomicU64,
}

#[derive(Clone)]
pub struct TcpTransport {
    host: String,
    shared: Arc<Shared>,
}

impl Default for TcpTransport {
    fn default() -> Self {
        TcpTransport { host: "127.0.0.1".into(), shared: Arc::default() }
    }
}

impl TcpTransport {
    pub fn new() -> Self {
        Self::default()
    }

    /// Frames that could not be written, e.g. to a crashed actor.
    pub fn undeliverable(&self) -> u64 {
        self.shared.undeliverable.load(Ordering::Relaxed)
    }
}

/// Read one frame; `Ok(None)` on a clean end of stream.
fn read_frame(r: &mut impl Read) -> io::Result<Option<Message>> {
    let mut len = [0u8; 4];
    match r.read_exact(&mut len) {
        Ok(()) => {}
        Err(e) if e.kind() == io::ErrorKind::UnexpectedEof => return Ok(None),
        Err(e) => return Err(e),
    }
    let n = u32::from_be_bytes(len) as usize;
    if n > max_frame() {
        return Err(io::Error::new(io::ErrorKind::InvalidData, format!("frame of {n} bytes exceeds limit")));
    }
    let mut buf = vec![0u8; 4 + n];
    buf[..4].copy_from_slice(&len);
    r.read_exact(&mut buf[4..])?;
    decode_frame(&buf).map(Some).map_err(|e| io::Error::new(io::ErrorKind::InvalidData, e.to_string()))
}

fn serve(stream: TcpStream, tx: Sender<Message>, closed: Arc<AtomicBool>) {
    let mut r = BufReader::new(stream);
    while let Ok(Some(m)) = read_frame(&mut r) {
        if closed.load(Ordering::Acquire) || tx.send(m).is_err() {
            break;
        }
    }
}

impl Transport for TcpTransport {
    fn kind(&self) -> &'static str {
        "tcp"
    }

    fn open(&self) -> io::Result<(Address, Receiver<Message>)> {
        let listener = TcpListener::bind((self.host.as_str(), 0))?;
        let port = listener.local_addr()?.port();
        let slot = self.shared.next.fetch_add(1, Ordering::Relaxed);
        let closed = Arc::new(AtomicBool::new(false));
        let (tx, rx) = channel();
        self.shared.endpoints.lock().unwrap().insert(slot, Endpoint { port, closed: closed.clone() });
        thread::Builder::new().name(format!("tcp-accept-{slot}")).spawn(move || {
            for stream in listener.incoming() {
                if closed.load(Ordering::Acquire) {
                    break;
                }
                let Ok(stream) = stream else { continue };
                let _ = stream.set_nodelay(true);
                let (tx, closed) = (tx.clone(), closed.clone());
                thread::spawn(move || serve(stream, tx, closed));
            }
        })?;
        Ok((Address::Tcp { host: self.host.clone(), port, slot }, rx))
    }

    fn close(&self, addr: &Address) {
        if let Some(ep) = self.shared.endpoints.lock().unwrap().remove(&addr.slot()) {
            ep.closed.store(true, Ordering::Release);
            // Wake the accept loop so it sees the flag.
            let _ = TcpStream::connect_timeout(
                &format!("{}:{}", self.host, ep.port).parse().expect("socket address"),
                Duration::from_millis(200),
            );
        }
    }

    fn outbox(&self) -> Box<dyn Outbox> {
        Box::new(TcpOutbox { shared: self.shared.clone(), conns: HashMap::new() })
    }
}

struct TcpOutbox {
    shared: Arc<Shared>,
    conns: HashMap<Address, BufWriter<TcpStream>>,
}

impl TcpOutbox {
    fn fail(&mut self, to: &Address, reason: String) -> SendError {
        if let Some(c) = self.conns.remove(to) {
            let _ = c.get_ref().shutdown(Shutdown::Both);
        }
        self.shared.undeliverable.fetch_add(1, Ordering::Relaxed);
        SendError::Undeliverable { addr: to.clone(), reason }
    }
}

impl Outbox for TcpOutbox {
    fn send(&mut self, to: &Address, msg: &Message) -> Result<(), SendError> {
        let Address::Tcp { host, port, slot } = to else {
            return Err(self.fail(to, "not a tcp address".into()));
        };
        let live = self.shared.endpoints.lock().unwrap().contains_key(slot);
        if !live {
            return Err(self.fail(to, "endpoint closed".into()));
        }
        let frame = encode_frame(msg)?;
        if !self.conns.contains_key(to) {
            match TcpStream::connect((host.as_str(), *port)) {
                Ok(s) => {
                    let _ = s.set_nodelay(true);
                    self.conns.insert(to.clone(), BufWriter::new(s));
                }
                Err(e) => return Err(self.fail(to, e.to_string())),
            }
        }
        let conn = self.conns.get_mut(to).expect("connection just inserted");
        match conn.write_all(&frame).and_then(|_| conn.flush()) {
            Ok(()) => Ok(()),
            Err(e) => Err(self.fail(to, e.to_string())),
        }
    }
}

impl Drop for TcpOutbox {
    fn drop(&mut self) {
        for c in self.conns.values_mut() {
            let _ = c.flush();
            let _ = c.get_ref().shutdown(Shutdown::Write);
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::lang::ast::{Role, SiteId};
    use crate::value::Value;
    use crate::wire::{CivToken, SessionToken};

    fn msg(n: i64) -> Message {
        let civ = CivToken {
            session: SessionToken(0xfeed),
            site: SiteId(3),
            epoch: 1,
            sender: Role::from("A"),
            receiver: Role::from("B"),
        };
        Message::chorex(civ, Value::Tuple(vec![Value::Int(n), Value::str("x")]))
    }

    #[test]
    fn frames_arrive_in_order() {
        let t = TcpTransport::new();
        let (addr, rx) = t.open().unwrap();
        let mut out = t.outbox();
        for i in 0..50 {
            out.send(&addr, &msg(i)).unwrap();
        }
        for i in 0..50 {
            assert_eq!(rx.recv_timeout(Duration::from_secs(5)).unwrap(), msg(i));
        }
        t.close(&addr);
        assert!(out.send(&addr, &msg(0)).is_err());
        assert_eq!(t.undeliverable(), 1);
    }
}
