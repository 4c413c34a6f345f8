use std::ops::AddAssign;

/// The collectives the transport implements.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum CollectiveKind {
    Broadcast,
    AllGather,
    ReduceScatter,
    AllReduce,
    Reduce,
}

impl CollectiveKind {
    pub const ALL: [CollectiveKind; 5] = [
        CollectiveKind::Broadcast,
        CollectiveKind::AllGather,
        CollectiveKind::ReduceScatter,
        CollectiveKind::AllReduce,
        CollectiveKind::Reduce,
    ];

    fn slot(self) -> usize {
        self as usize
    }

    pub fn name(self) -> &'static str {
        match self {
            CollectiveKind::Broadcast => "broadcast",
            CollectiveKind::AllGather => "all_gather",
            CollectiveKind::ReduceScatter => "reduce_scatter",
            CollectiveKind::AllReduce => "all_reduce",
            CollectiveKind::Reduce => "reduce",
        }
    }
}

/// Elementwise reduction applied by `all_reduce`, `reduce_scatter` and `reduce`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum ReduceOp {
    Sum,
    Max,
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct KindCounters {
    pub calls: u64,
    pub sent: u64,
    pub received: u64,
}

impl AddAssign for KindCounters {
    fn add_assign(&mut self, rhs: Self) {
        self.calls += rhs.calls;
        self.sent += rhs.sent;
        self.received += rhs.received;
    }
}

/// Per-rank traffic and compute tallies.
///
/// Each collective over a group of `p` charges ring-style accounting: a
/// participant moves `(p-1)/p` of the gathered or reduced payload. Broadcast
/// and reduce charge the root `(p-1)·len` and every other member `len`.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct CostCounters {
    pub elements_sent: u64,
    pub elements_received: u64,
    pub multiply_adds: u64,
    by_kind: [KindCounters; 5],
}

impl CostCounters {
    pub fn kind(&self, kind: CollectiveKind) -> KindCounters {
        self.by_kind[kind.slot()]
    }

    pub fn collective_calls(&self) -> u64 {
        self.by_kind.iter().map(|k| k.calls).sum()
    }

    /// Modeled latency: every collective round costs `ceil(log2 p)` hops.
    pub fn latency_hops(&self, p: usize) -> u64 {
        self.collective_calls() * ceil_log2(p)
    }

    pub(crate) fn charge(&mut self, kind: CollectiveKind, sent: u64, received: u64) {
        let k = &mut self.by_kind[kind.slot()];
        k.calls += 1;
        k.sent += sent;
        k.received += received;
        self.elements_sent += sent;
        self.elements_received += received;
    }

    /// Sum over a set of ranks.
    pub fn total<'a>(all: impl IntoIterator<Item = &'a CostCounters>) -> CostCounters {
        let mut acc = CostCounters::default();
        for c in all {
            acc += c.clone();
        }
        acc
    }
}

impl AddAssign for CostCounters {
    fn add_assign(&mut self, rhs: Self) {
        self.elements_sent += rhs.elements_sent;
        self.elements_received += rhs.elements_received;
        self.multiply_adds += rhs.multiply_adds;
        for (a, b) in self.by_kind.iter_mut().zip(rhs.by_kind) {
            *a += b;
        }
    }
}

pub fn ceil_log2(p: usize) -> u64 {
    if p <= 1 {
        0
    } else {
        (usize::BITS - (p - 1).leading_zeros()) as u64
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn log2_rounds_up() {
        let got: Vec<u64> = [1, 2, 3, 4, 5, 8, 9].iter().map(|&p| ceil_log2(p)).collect();
        assert_eq!(got, vec![0, 1, 2, 2, 3, 3, 4]);
    }

    #[test]
    fn charge_updates_totals_and_breakdown() {
        let mut c = CostCounters::default();
        c.charge(CollectiveKind::AllGather, 8, 8);
        c.charge(CollectiveKind::Broadcast, 0, 4);
        assert_eq!(c.elements_received, 12);
        assert_eq!(c.kind(CollectiveKind::AllGather).calls, 1);
        assert_eq!(c.kind(CollectiveKind::Broadcast).received, 4);
        assert_eq!(c.latency_hops(4), 4);
        let t = CostCounters::total([&c, &c]);
        assert_eq!(t.elements_sent, 16);
        assert_eq!(t.kind(CollectiveKind::AllGather).calls, 2);
    }
}
