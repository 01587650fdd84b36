//! Counting shims threaded through the forward pass.
//!
//! Kernels never count themselves; the layer that invokes a kernel records
//! the multiply-accumulates implied by the operand shapes it just used.

use std::sync::Mutex;

use indexmap::IndexMap;
use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum CostKind {
    Attention,
    Projection,
    Mlp,
    Conv,
    Embed,
    Head,
    Norm,
}

impl CostKind {
    pub const ALL: [CostKind; 7] = [
        CostKind::Attention,
        CostKind::Projection,
        CostKind::Mlp,
        CostKind::Conv,
        CostKind::Embed,
        CostKind::Head,
        CostKind::Norm,
    ];

    pub fn name(self) -> &'static str {
        match self {
            CostKind::Attention => "attention",
            CostKind::Projection => "projection",
            CostKind::Mlp => "mlp",
            CostKind::Conv => "conv",
            CostKind::Embed => "embed",
            CostKind::Head => "head",
            CostKind::Norm => "norm",
        }
    }
}

pub trait MacSink: Sync {
    fn record(&self, label: &str, kind: CostKind, macs: u64);
}

/// Per-invocation accumulator keyed by label, in first-seen order.
#[derive(Debug, Default)]
pub struct Tally {
    entries: Mutex<IndexMap<String, (CostKind, u64)>>,
}

impl Tally {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn into_entries(self) -> IndexMap<String, (CostKind, u64)> {
        self.entries.into_inner().unwrap()
    }

    pub fn total(&self) -> u64 {
        self.entries.lock().unwrap().values().map(|e| e.1).sum()
    }
}

impl MacSink for Tally {
    fn record(&self, label: &str, kind: CostKind, macs: u64) {
        let mut entries = self.entries.lock().unwrap();
        match entries.get_mut(label) {
            Some(e) => e.1 += macs,
            None => {
                entries.insert(label.to_string(), (kind, macs));
            }
        }
    }
}

/// Scoped handle on an optional sink.
#[derive(Clone)]
pub struct Probe<'a> {
    sink: Option<&'a dyn MacSink>,
    prefix: String,
}

impl<'a> Probe<'a> {
    pub fn off() -> Self {
        Self {
            sink: None,
            prefix: String::new(),
        }
    }

    pub fn new(sink: &'a dyn MacSink) -> Self {
        Self {
            sink: Some(sink),
            prefix: String::new(),
        }
    }

    pub fn scope(&self, name: &str) -> Probe<'a> {
        let prefix = if self.prefix.is_empty() {
            name.to_string()
        } else {
            format!("{}.{name}", self.prefix)
        };
        Probe {
            sink: self.sink,
            prefix,
        }
    }

    pub fn label(&self, name: &str) -> String {
        if self.prefix.is_empty() {
            name.to_string()
        } else {
            format!("{}.{name}", self.prefix)
        }
    }

    pub fn is_on(&self) -> bool {
        self.sink.is_some()
    }

    pub fn record(&self, name: &str, kind: CostKind, macs: u64) {
        if let Some(sink) = self.sink {
            sink.record(&self.label(name), kind, macs);
        }
    }

    /// Records against the probe's own prefix.
    pub fn record_here(&self, kind: CostKind, macs: u64) {
        if let Some(sink) = self.sink {
            sink.record(&self.prefix, kind, macs);
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn scoped_labels_accumulate() {
        let tally = Tally::new();
        let p = Probe::new(&tally).scope("stage1").scope("block0");
        p.record("lw.qk", CostKind::Attention, 5);
        p.record("lw.qk", CostKind::Attention, 7);
        p.scope("head").record_here(CostKind::Head, 1);
        let e = tally.into_entries();
        assert_eq!(e["stage1.block0.lw.qk"], (CostKind::Attention, 12));
        assert_eq!(e["stage1.block0.head"].1, 1);
        Probe::off().record("x", CostKind::Mlp, 3);
    }
}
