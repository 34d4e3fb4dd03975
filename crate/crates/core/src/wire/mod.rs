//! Messages exchanged between actors, the monitor, and the transports.

pub mod codec;

use std::fmt;

use serde::{Deserialize, Serialize};

use crate::lang::ast::{Role, SiteId};
use crate::value::Value;

/// Random 128-bit identifier of one running session.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct SessionToken(pub u128);

impl fmt::Display for SessionToken {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{:032x}", self.0)
    }
}

/// Sender name used on control messages originating at the monitor.
pub const MONITOR: &str = "$monitor";

/// Communication-integrity token: a message is consumed only by the receive
/// whose session, site, epoch, sender and receiver all agree with it.
#[derive(Clone, Debug, PartialEq, Eq, Hash)]
pub struct CivToken {
    pub session: SessionToken,
    pub site: SiteId,
    /// Recovery attempt the message belongs to.
    pub epoch: u32,
    pub sender: Role,
    pub receiver: Role,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum MessageType {
    Chorex,
    Choice,
    Revive,
    Recover,
    Barrier,
}

impl MessageType {
    pub fn name(self) -> &'static str {
        match self {
            MessageType::Chorex => "chorex",
            MessageType::Choice => "choice",
            MessageType::Revive => "revive",
            MessageType::Recover => "recover",
            MessageType::Barrier => "barrier",
        }
    }

    pub fn from_name(s: &str) -> Option<Self> {
        Some(match s {
            "chorex" => MessageType::Chorex,
            "choice" => MessageType::Choice,
            "revive" => MessageType::Revive,
            "recover" => MessageType::Recover,
            "barrier" => MessageType::Barrier,
            _ => return None,
        })
    }

    /// Control messages bypass the choreography queue.
    pub fn is_control(self) -> bool {
        matches!(self, MessageType::Revive | MessageType::Recover | MessageType::Barrier)
    }
}

/// `{message_type, civ_token, payload}`.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Message {
    pub mtype: MessageType,
    /// Absent only for `revive`.
    pub civ: Option<CivToken>,
    pub payload: Value,
}

impl Message {
    pub fn chorex(civ: CivToken, payload: Value) -> Message {
        Message { mtype: MessageType::Chorex, civ: Some(civ), payload }
    }

    pub fn choice(civ: CivToken, branch: bool) -> Message {
        Message { mtype: MessageType::Choice, civ: Some(civ), payload: Value::Bool(branch) }
    }
}
