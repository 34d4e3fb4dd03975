//! In-process transport over unbounded channels.

use std::collections::HashMap;
use std::io;
use std::sync::atomic::{AtomicU64, Ordering};
use std::sync::mpsc::{channel, Receiver, Sender};
use std::sync::{Arc, Mutex};

use super::{Address, Outbox, SendError, Transport};
use crate::wire::Message;

#[derive(Default)]
struct Shared {
    next: AtomicU64,
    inboxes: Mutex<HashMap<u64, Sender<Message>>>,
}

/// Lossless, order-preserving per (sender, receiver) pair.
#[derive(Clone, Default)]
pub struct MemTransport {
    shared: Arc<Shared>,
}

impl MemTransport {
    pub fn new() -> Self {
        Self::default()
    }
}

impl Transport for MemTransport {
    fn kind(&self) -> &'static str {
        "mem"
    }

    fn open(&self) -> io::Result<(Address, Receiver<Message>)> {
        let slot = self.shared.next.fetch_add(1, Ordering::Relaxed);
        let (tx, rx) = channel();
        self.shared.inboxes.lock().unwrap().insert(slot, tx);
        Ok((Address::Mem { slot }, rx))
    }

    fn close(&self, addr: &Address) {
        self.shared.inboxes.lock().unwrap().remove(&addr.slot());
    }

    fn outbox(&self) -> Box<dyn Outbox> {
        Box::new(MemOutbox { shared: self.shared.clone(), cache: HashMap::new() })
    }
}

struct MemOutbox {
    shared: Arc<Shared>,
    cache: HashMap<u64, Sender<Message>>,
}

impl Outbox for MemOutbox {
    fn send(&mut self, to: &Address, msg: &Message) -> Result<(), SendError> {
        let undeliverable = |reason: &str| SendError::Undeliverable { addr: to.clone(), reason: reason.into() };
        let Address::Mem { slot } = to else { return Err(undeliverable("not a mem address")) };
        let tx = match self.cache.get(slot) {
            Some(tx) => tx.clone(),
            None => {
                let tx =
                    self.shared.inboxes.lock().unwrap().get(slot).cloned().ok_or_else(|| undeliverable("closed"))?;
                self.cache.insert(*slot, tx.clone());
                tx
            }
        };
        if self.shared.inboxes.lock().unwrap().contains_key(slot) {
            tx.send(msg.clone()).map_err(|_| undeliverable("receiver gone"))
        } else {
            self.cache.remove(slot);
            Err(undeliverable("closed"))
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
            session: SessionToken(1),
            site: SiteId(0),
            epoch: 0,
            sender: Role::from("A"),
            receiver: Role::from("B"),
        };
        Message::chorex(civ, Value::Int(n))
    }

    #[test]
    fn pairwise_order_and_close() {
        let t = MemTransport::new();
        let (addr, rx) = t.open().unwrap();
        let mut out = t.outbox();
        for i in 0..100 {
            out.send(&addr, &msg(i)).unwrap();
        }
        let got: Vec<_> = rx.try_iter().map(|m| m.payload).collect();
        assert_eq!(got, (0..100).map(Value::Int).collect::<Vec<_>>());
        t.close(&addr);
        assert!(out.send(&addr, &msg(0)).is_err());
        let (addr2, _rx2) = t.open().unwrap();
        assert_ne!(addr, addr2);
    }
}
