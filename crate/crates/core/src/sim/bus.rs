use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::protocol::{Message, Phase};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Channel {
    /// Mutually authenticated, keyed by the set-up keys.
    Authenticated,
    /// Sender-anonymous; only driving-phase records may use it.
    Anonymous,
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct PhaseCount {
    pub messages: u64,
    pub bytes: u64,
}

/// In-memory message bus. It only counts traffic; delivery is a direct call
/// on the receiving actor.
#[derive(Debug, Default)]
pub struct Bus {
    counts: BTreeMap<Phase, PhaseCount>,
}

impl Bus {
    pub fn send(&mut self, channel: Channel, msg: &Message) {
        assert_eq!(
            channel == Channel::Anonymous,
            matches!(msg, Message::Driving(_)),
            "driving records travel anonymously and nothing else does"
        );
        let entry = self.counts.entry(msg.phase()).or_default();
        entry.messages += 1;
        entry.bytes += msg.encode().len() as u64;
    }

    pub fn counts(&self) -> &BTreeMap<Phase, PhaseCount> {
        &self.counts
    }
}
