//! Scripted peripheral inputs.
//!
//! A trace file holds one `addr value` pair per line (hex with `0x` or
//! decimal). Blank lines and lines starting with `#` or `;` are ignored.
//!
//! Input registers are latched: a read returns the oldest unacknowledged
//! sample for that address, and a write to the address acknowledges it.
//! Once an address has no pending samples, reads return whatever was last
//! written there (zero initially).

use std::collections::{BTreeMap, VecDeque};

use crate::error::ConfigError;
use crate::isa::parse::number;

#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct PeripheralTrace {
    pub reads: Vec<(u16, u16)>,
}

impl PeripheralTrace {
    pub fn new(reads: Vec<(u16, u16)>) -> PeripheralTrace {
        PeripheralTrace { reads }
    }

    /// All samples delivered through one address.
    pub fn feeding(addr: u16, values: impl IntoIterator<Item = u16>) -> PeripheralTrace {
        PeripheralTrace { reads: values.into_iter().map(|v| (addr, v)).collect() }
    }

    pub fn parse(text: &str) -> Result<PeripheralTrace, ConfigError> {
        let mut reads = Vec::new();
        for (i, raw) in text.lines().enumerate() {
            let line = raw.trim();
            if line.is_empty() || line.starts_with('#') || line.starts_with(';') {
                continue;
            }
            let err = |msg: &str| ConfigError::Trace { line: i + 1, msg: msg.to_string() };
            let mut parts = line.split_whitespace();
            let (Some(a), Some(v), None) = (parts.next(), parts.next(), parts.next()) else {
                return Err(err("expected `addr value`"));
            };
            let a = number(a).ok_or_else(|| err("bad address"))?;
            let v = number(v).ok_or_else(|| err("bad value"))?;
            reads.push((a, v));
        }
        Ok(PeripheralTrace { reads })
    }

    pub fn render(&self) -> String {
        self.reads.iter().map(|(a, v)| format!("0x{a:04X} 0x{v:04X}\n")).collect()
    }
}

/// One write to a peripheral address.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct GpioWrite {
    pub cycle: u64,
    pub addr: u16,
    pub value: u16,
}

/// Runtime state of the peripheral queues.
#[derive(Debug, Clone, Default)]
pub(crate) struct PeripheralQueues {
    pending: BTreeMap<u16, VecDeque<u16>>,
}

impl PeripheralQueues {
    pub(crate) fn new(trace: &PeripheralTrace) -> PeripheralQueues {
        let mut pending: BTreeMap<u16, VecDeque<u16>> = BTreeMap::new();
        for &(a, v) in &trace.reads {
            pending.entry(a).or_default().push_back(v);
        }
        PeripheralQueues { pending }
    }

    pub(crate) fn head(&self, addr: u16) -> Option<u16> {
        self.pending.get(&addr).and_then(|q| q.front().copied())
    }

    pub(crate) fn acknowledge(&mut self, addr: u16) {
        if let Some(q) = self.pending.get_mut(&addr) {
            q.pop_front();
        }
    }
}
