//! Moving messages between actors: addresses, route tables, and the
//! in-process and TCP transports.

pub mod mem;
pub mod tcp;

use std::collections::BTreeMap;
use std::fmt;
use std::io;
use std::sync::mpsc::Receiver;

use thiserror::Error;

use crate::lang::ast::Role;
use crate::value::Value;
use crate::wire::codec::FrameError;
use crate::wire::Message;

/// Where a live actor can be reached. Slots are never reused within a
/// transport, so a revived actor always gets a fresh address.
#[derive(Clone, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Address {
    Mem { slot: u64 },
    Tcp { host: String, port: u16, slot: u64 },
}

impl Address {
    pub fn slot(&self) -> u64 {
        match self {
            Address::Mem { slot } | Address::Tcp { slot, .. } => *slot,
        }
    }

    pub fn to_value(&self) -> Value {
        match self {
            Address::Mem { slot } => Value::Tuple(vec![Value::atom("mem"), Value::Int(*slot as i64)]),
            Address::Tcp { host, port, slot } => Value::Tuple(vec![
                Value::atom("tcp"),
                Value::str(host.clone()),
                Value::Int(*port as i64),
                Value::Int(*slot as i64),
            ]),
        }
    }

    pub fn from_value(v: &Value) -> Result<Address, String> {
        let bad = || format!("not an address: {v}");
        let t = v.as_tuple().ok_or_else(bad)?;
        let int = |x: &Value| x.as_int().ok_or_else(bad);
        match (t.first().and_then(|a| a.as_atom()), t.len()) {
            (Some("mem"), 2) => Ok(Address::Mem { slot: int(&t[1])? as u64 }),
            (Some("tcp"), 4) => Ok(Address::Tcp {
                host: t[1].as_str().ok_or_else(bad)?.to_string(),
                port: u16::try_from(int(&t[2])?).map_err(|_| bad())?,
                slot: int(&t[3])? as u64,
            }),
            _ => Err(bad()),
        }
    }
}

impl fmt::Display for Address {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Address::Mem { slot } => write!(f, "mem:{slot}"),
            Address::Tcp { host, port, slot } => write!(f, "tcp:{host}:{port}/{slot}"),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Eq, Error)]
pub enum RouteError {
    #[error("unknown role {0}")]
    UnknownRole(Role),
}

/// The network configuration: one address per role.
#[derive(Clone, Debug, Default, PartialEq, Eq)]
pub struct RouteTable {
    routes: BTreeMap<Role, Address>,
}

impl RouteTable {
    pub fn new(routes: impl IntoIterator<Item = (Role, Address)>) -> RouteTable {
        RouteTable { routes: routes.into_iter().collect() }
    }

    pub fn get(&self, role: &Role) -> Option<&Address> {
        self.routes.get(role)
    }

    pub fn iter(&self) -> impl Iterator<Item = (&Role, &Address)> {
        self.routes.iter()
    }

    /// Point `role` at `addr`. Returns whether the table changed.
    pub fn update_route(&mut self, role: &Role, addr: Address) -> Result<bool, RouteError> {
        let slot = self.routes.get_mut(role).ok_or_else(|| RouteError::UnknownRole(role.clone()))?;
        if *slot == addr {
            return Ok(false);
        }
        *slot = addr;
        Ok(true)
    }

    pub fn to_value(&self) -> Value {
        Value::List(
            self.routes.iter().map(|(r, a)| Value::Tuple(vec![Value::atom(r.as_str()), a.to_value()])).collect(),
        )
    }

    pub fn from_value(v: &Value) -> Result<RouteTable, String> {
        let items = v.as_list().ok_or_else(|| format!("not a route table: {v}"))?;
        let mut routes = BTreeMap::new();
        for it in items {
            match it.as_tuple() {
                Some([Value::Atom(r), a]) => {
                    routes.insert(Role::new(r.clone()), Address::from_value(a)?);
                }
                _ => return Err(format!("not a route: {it}")),
            }
        }
        Ok(RouteTable { routes })
    }
}

#[derive(Debug, Error)]
pub enum SendError {
    #[error("undeliverable to {addr}: {reason}")]
    Undeliverable { addr: Address, reason: String },
    #[error(transparent)]
    Frame(#[from] FrameError),
}

/// A sending handle owned by one thread. Order is preserved per destination.
pub trait Outbox: Send {
    fn send(&mut self, to: &Address, msg: &Message) -> Result<(), SendError>;
}

pub trait Transport: Send + Sync {
    fn kind(&self) -> &'static str;
    /// Create a receiving endpoint for a new actor.
    fn open(&self) -> io::Result<(Address, Receiver<Message>)>;
    /// Stop delivering to `addr`; later sends to it are undeliverable.
    fn close(&self, addr: &Address);
    fn outbox(&self) -> Box<dyn Outbox>;
}

#[cfg(test)]
mod tests {
    use super::*;

    fn table() -> RouteTable {
        RouteTable::new([
            (Role::from("A"), Address::Mem { slot: 0 }),
            (Role::from("B"), Address::Mem { slot: 1 }),
            (Role::from("C"), Address::Mem { slot: 2 }),
        ])
    }

    #[test]
    fn update_touches_only_one_entry() {
        let mut t = table();
        assert_eq!(t.update_route(&Role::from("A"), Address::Mem { slot: 7 }), Ok(true));
        assert_eq!(t.get(&Role::from("A")), Some(&Address::Mem { slot: 7 }));
        assert_eq!(t.get(&Role::from("B")), Some(&Address::Mem { slot: 1 }));
        assert_eq!(t.get(&Role::from("C")), Some(&Address::Mem { slot: 2 }));
    }

    #[test]
    fn idempotent_update() {
        let mut t = table();
        let before = t.clone();
        assert_eq!(t.update_route(&Role::from("B"), Address::Mem { slot: 1 }), Ok(false));
        assert_eq!(t, before);
    }

    #[test]
    fn unknown_role_rejected() {
        let mut t = table();
        assert_eq!(
            t.update_route(&Role::from("Z"), Address::Mem { slot: 9 }),
            Err(RouteError::UnknownRole(Role::from("Z")))
        );
    }

    #[test]
    fn table_value_round_trip() {
        let mut t = table();
        t.update_route(&Role::from("C"), Address::Tcp { host: "127.0.0.1".into(), port: 4000, slot: 5 }).unwrap();
        assert_eq!(RouteTable::from_value(&t.to_value()), Ok(t));
    }
}
