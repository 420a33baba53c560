//! Lossless message log between named entities.

use std::collections::BTreeMap;
use std::fmt;

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum MessageKind {
    Raw,
    Aggregated,
    Fused,
    Alert,
    Consensus,
}

impl MessageKind {
    pub const ALL: [MessageKind; 5] = [
        MessageKind::Raw,
        MessageKind::Aggregated,
        MessageKind::Fused,
        MessageKind::Alert,
        MessageKind::Consensus,
    ];

    pub fn name(self) -> &'static str {
        match self {
            MessageKind::Raw => "raw",
            MessageKind::Aggregated => "aggregated",
            MessageKind::Fused => "fused",
            MessageKind::Alert => "alert",
            MessageKind::Consensus => "consensus",
        }
    }
}

impl fmt::Display for MessageKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

/// Tier of the sending entity.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum Level {
    Node,
    Cluster,
    Uav,
}

impl Level {
    pub const ALL: [Level; 3] = [Level::Node, Level::Cluster, Level::Uav];

    pub fn name(self) -> &'static str {
        match self {
            Level::Node => "node",
            Level::Cluster => "cluster",
            Level::Uav => "uav",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Message {
    pub id: u64,
    pub src: String,
    pub dst: String,
    pub tick: u64,
    pub payload_bits: u64,
    pub kind: MessageKind,
    pub level: Level,
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct Traffic {
    pub messages: u64,
    pub bits: u64,
}

impl Traffic {
    fn add(&mut self, bits: u64) {
        self.messages += 1;
        self.bits += bits;
    }
}

/// Every message is appended to the sender's outbox and delivered to the
/// receiver's inbox at once; there is no loss.
#[derive(Debug, Clone, Default)]
pub struct Network {
    messages: Vec<Message>,
    outbox: BTreeMap<String, Vec<u64>>,
    inbox: BTreeMap<String, Vec<u64>>,
}

impl Network {
    pub fn new() -> Self {
        Self::default()
    }

    /// Logs a message and returns its id. Zero-bit payloads are raised to 1.
    pub fn send(
        &mut self,
        src: &str,
        dst: &str,
        tick: u64,
        payload_bits: u64,
        kind: MessageKind,
        level: Level,
    ) -> u64 {
        let id = self.messages.len() as u64;
        self.messages.push(Message {
            id,
            src: src.to_owned(),
            dst: dst.to_owned(),
            tick,
            payload_bits: payload_bits.max(1),
            kind,
            level,
        });
        self.outbox.entry(src.to_owned()).or_default().push(id);
        self.inbox.entry(dst.to_owned()).or_default().push(id);
        id
    }

    pub fn messages(&self) -> &[Message] {
        &self.messages
    }

    pub fn sent_by(&self, entity: &str) -> &[u64] {
        self.outbox.get(entity).map_or(&[], Vec::as_slice)
    }

    pub fn received_by(&self, entity: &str) -> &[u64] {
        self.inbox.get(entity).map_or(&[], Vec::as_slice)
    }

    pub fn entities(&self) -> impl Iterator<Item = &str> {
        let mut all: Vec<&str> = self
            .outbox
            .keys()
            .chain(self.inbox.keys())
            .map(String::as_str)
            .collect();
        all.sort_unstable();
        all.dedup();
        all.into_iter()
    }

    pub fn total(&self) -> Traffic {
        let mut t = Traffic::default();
        for m in &self.messages {
            t.add(m.payload_bits);
        }
        t
    }

    pub fn by_level(&self) -> BTreeMap<Level, Traffic> {
        let mut out: BTreeMap<Level, Traffic> = Level::ALL
            .iter()
            .map(|l| (*l, Traffic::default()))
            .collect();
        for m in &self.messages {
            out.entry(m.level).or_default().add(m.payload_bits);
        }
        out
    }

    pub fn by_kind(&self) -> BTreeMap<MessageKind, Traffic> {
        let mut out: BTreeMap<MessageKind, Traffic> = MessageKind::ALL
            .iter()
            .map(|k| (*k, Traffic::default()))
            .collect();
        for m in &self.messages {
            out.entry(m.kind).or_default().add(m.payload_bits);
        }
        out
    }
}
