//! Rendezvous slots shared by every [`Endpoint`] of one run.
//!
//! A collective call deposits its contribution into the slot keyed by
//! `(group, sequence number)`. The last member to arrive computes every
//! member's result in ascending group-position order, so the outcome never
//! depends on arrival order.

use std::collections::HashMap;
use std::future::Future;
use std::pin::Pin;
use std::sync::{Arc, Mutex, MutexGuard};
use std::task::{Context, Poll, Waker};

use super::counters::{CollectiveKind, CostCounters, ReduceOp};
use crate::error::{Error, Result};
use crate::scalar::Scalar;
use crate::topology::{Axis, AxisGroup, Coords, CubeTopology};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
struct GroupKey {
    /// `None` is the world group.
    axis: Option<Axis>,
    anchor: usize,
}

impl GroupKey {
    fn describe(&self) -> String {
        match self.axis {
            Some(a) => format!("{a}-group anchored at rank {}", self.anchor),
            None => "world group".to_string(),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
enum Op {
    Collective(CollectiveKind),
    Barrier,
}

#[derive(Debug, Clone, Copy, PartialEq)]
struct Header {
    op: Op,
    len: usize,
    root: usize,
    reduce: ReduceOp,
}

struct Slot<T> {
    header: Header,
    members: Vec<usize>,
    inputs: Vec<Option<Vec<T>>>,
    deposited: usize,
    outputs: Option<Vec<Option<Vec<T>>>>,
    error: Option<Error>,
    wakers: Vec<Waker>,
}

impl<T> Slot<T> {
    fn fail(&mut self, err: Error) {
        if self.error.is_none() && self.outputs.is_none() {
            self.error = Some(err);
            for w in self.wakers.drain(..) {
                w.wake();
            }
        }
    }
}

struct State<T> {
    slots: HashMap<(GroupKey, u64), Slot<T>>,
    counters: Vec<CostCounters>,
    finished: Vec<bool>,
    aborted: Option<String>,
    progress: u64,
}

pub(crate) struct Transport<T> {
    topo: CubeTopology,
    state: Mutex<State<T>>,
}

impl<T: Scalar> Transport<T> {
    pub(crate) fn new(topo: CubeTopology) -> Arc<Self> {
        let n = topo.ranks();
        Arc::new(Transport {
            topo,
            state: Mutex::new(State {
                slots: HashMap::new(),
                counters: vec![CostCounters::default(); n],
                finished: vec![false; n],
                aborted: None,
                progress: 0,
            }),
        })
    }

    fn lock(&self) -> MutexGuard<'_, State<T>> {
        // a panicking rank aborts the run; the data behind the lock stays usable
        self.state.lock().unwrap_or_else(|e| e.into_inner())
    }

    pub(crate) fn progress(&self) -> u64 {
        self.lock().progress
    }

    pub(crate) fn counters(&self) -> Vec<CostCounters> {
        self.lock().counters.clone()
    }

    /// Marks `rank` as done; collectives still waiting on it can never complete.
    pub(crate) fn finish(&self, rank: usize) {
        let mut st = self.lock();
        st.finished[rank] = true;
        st.progress += 1;
        for ((group, seq), slot) in st.slots.iter_mut() {
            if let Some(pos) = slot.members.iter().position(|&m| m == rank) {
                if slot.inputs[pos].is_none() {
                    slot.fail(Error::Desync {
                        group: group.describe(),
                        detail: format!("rank {rank} finished before joining collective #{seq}"),
                    });
                }
            }
        }
    }

    pub(crate) fn abort(&self, reason: String) {
        let mut st = self.lock();
        if st.aborted.is_none() {
            st.aborted = Some(reason);
        }
        st.progress += 1;
        for slot in st.slots.values_mut() {
            for w in slot.wakers.drain(..) {
                w.wake();
            }
        }
    }
}

fn combine<T: Scalar>(acc: &mut [T], other: &[T], op: ReduceOp) {
    match op {
        ReduceOp::Sum => acc.iter_mut().zip(other).for_each(|(a, &b)| *a += b),
        ReduceOp::Max => acc.iter_mut().zip(other).for_each(|(a, &b)| *a = a.max(b)),
    }
}

fn fold<T: Scalar>(inputs: &[Vec<T>], range: std::ops::Range<usize>, op: ReduceOp) -> Vec<T> {
    let mut acc = inputs[0][range.clone()].to_vec();
    for buf in &inputs[1..] {
        combine(&mut acc, &buf[range.clone()], op);
    }
    acc
}

fn compute_outputs<T: Scalar>(h: Header, inputs: Vec<Vec<T>>) -> Vec<Option<Vec<T>>> {
    let p = inputs.len();
    let out: Vec<Vec<T>> = match h.op {
        Op::Barrier => vec![Vec::new(); p],
        Op::Collective(CollectiveKind::Broadcast) => vec![inputs[h.root].clone(); p],
        Op::Collective(CollectiveKind::AllGather) => vec![inputs.concat(); p],
        Op::Collective(CollectiveKind::ReduceScatter) => {
            let s = h.len / p;
            (0..p).map(|q| fold(&inputs, q * s..(q + 1) * s, h.reduce)).collect()
        }
        Op::Collective(CollectiveKind::AllReduce) => vec![fold(&inputs, 0..h.len, h.reduce); p],
        Op::Collective(CollectiveKind::Reduce) => {
            let total = fold(&inputs, 0..h.len, h.reduce);
            (0..p)
                .map(|q| if q == h.root { total.clone() } else { Vec::new() })
                .collect()
        }
    };
    out.into_iter().map(Some).collect()
}

struct Rendezvous<'a, T> {
    transport: &'a Transport<T>,
    key: (GroupKey, u64),
    members: &'a [usize],
    position: usize,
    header: Header,
    input: Option<Vec<T>>,
}

impl<T: Scalar> Rendezvous<'_, T> {
    fn deposit(&mut self, st: &mut State<T>, input: Vec<T>) {
        let (group, seq) = self.key;
        let p = self.members.len();
        let slot = st.slots.entry(self.key).or_insert_with(|| Slot {
            header: self.header,
            members: self.members.to_vec(),
            inputs: (0..p).map(|_| None).collect(),
            deposited: 0,
            outputs: None,
            error: None,
            wakers: Vec::new(),
        });
        let h = slot.header;
        if h.op != self.header.op || h.root != self.header.root || h.reduce != self.header.reduce {
            slot.fail(Error::Desync {
                group: group.describe(),
                detail: format!(
                    "collective #{seq}: position {} called {:?} but the group is in {:?}",
                    self.position, self.header.op, h.op
                ),
            });
        } else if h.len != self.header.len {
            slot.fail(Error::LengthMismatch {
                op: "collective",
                expected: h.len,
                got: self.header.len,
            });
        }
        slot.inputs[self.position] = Some(input);
        slot.deposited += 1;
        st.progress += 1;
        let slot = st.slots.get_mut(&self.key).expect("slot just inserted");
        if let Some(gone) = slot
            .members
            .iter()
            .zip(&slot.inputs)
            .find(|(m, inp)| inp.is_none() && st.finished[**m])
        {
            let rank = *gone.0;
            slot.fail(Error::Desync {
                group: group.describe(),
                detail: format!("rank {rank} finished before joining collective #{seq}"),
            });
        }
        if slot.deposited == p && slot.error.is_none() {
            let inputs = slot.inputs.iter_mut().map(|x| x.take().unwrap()).collect();
            slot.outputs = Some(compute_outputs(slot.header, inputs));
            for w in slot.wakers.drain(..) {
                w.wake();
            }
        }
    }
}

// no field is structurally pinned
impl<T> Unpin for Rendezvous<'_, T> {}

impl<T: Scalar> Future for Rendezvous<'_, T> {
    type Output = Result<Vec<T>>;

    fn poll(self: Pin<&mut Self>, cx: &mut Context<'_>) -> Poll<Self::Output> {
        let this = self.get_mut();
        let mut st = this.transport.lock();
        if let Some(reason) = &st.aborted {
            return Poll::Ready(Err(Error::Aborted(reason.clone())));
        }
        if let Some(input) = this.input.take() {
            this.deposit(&mut st, input);
        }
        let st = &mut *st;
        let slot = st.slots.get_mut(&this.key).expect("deposited slot");
        if let Some(err) = &slot.error {
            return Poll::Ready(Err(err.clone()));
        }
        if let Some(outputs) = slot.outputs.as_mut() {
            let out = outputs[this.position].take().expect("result taken twice");
            st.progress += 1;
            if outputs.iter().all(Option::is_none) {
                st.slots.remove(&this.key);
            }
            return Poll::Ready(Ok(out));
        }
        slot.wakers.push(cx.waker().clone());
        Poll::Pending
    }
}

/// One rank's handle on the transport.
///
/// Owned by exactly one rank program; may move between threads but is never
/// shared. Every collective must be entered by all members of its group in
/// the same order.
pub struct Endpoint<T: Scalar> {
    rank: usize,
    coords: Coords,
    transport: Arc<Transport<T>>,
    seqs: HashMap<GroupKey, u64>,
}

impl<T: Scalar> Endpoint<T> {
    pub(crate) fn new(rank: usize, transport: Arc<Transport<T>>) -> Self {
        let coords = transport.topo.coords_of(rank).expect("rank in range");
        Endpoint {
            rank,
            coords,
            transport,
            seqs: HashMap::new(),
        }
    }

    pub fn rank(&self) -> usize {
        self.rank
    }

    pub fn coords(&self) -> Coords {
        self.coords
    }

    pub fn topology(&self) -> CubeTopology {
        self.transport.topo
    }

    pub fn side(&self) -> usize {
        self.transport.topo.side()
    }

    /// This rank's group along `axis`.
    pub fn group(&self, axis: Axis) -> AxisGroup {
        self.transport
            .topo
            .axis_group(self.coords, axis)
            .expect("own coordinates are valid")
    }

    pub fn counters(&self) -> CostCounters {
        self.transport.lock().counters[self.rank].clone()
    }

    /// Records local compute for the cost model.
    pub fn charge_multiply_adds(&mut self, n: u64) {
        self.transport.lock().counters[self.rank].multiply_adds += n;
    }

    fn charge(&self, kind: CollectiveKind, sent: usize, received: usize) {
        self.transport.lock().counters[self.rank].charge(kind, sent as u64, received as u64);
    }

    fn check_group(&self, g: &AxisGroup) -> Result<()> {
        if g.members.get(g.my_position) != Some(&self.rank) {
            return Err(Error::Desync {
                group: format!("{}-group", g.axis),
                detail: format!("rank {} is not member #{} of {:?}", self.rank, g.my_position, g.members),
            });
        }
        Ok(())
    }

    async fn rendezvous(
        &mut self,
        key: GroupKey,
        members: &[usize],
        position: usize,
        header: Header,
        input: Vec<T>,
    ) -> Result<Vec<T>> {
        let seq = self.seqs.entry(key).or_insert(0);
        let this_seq = *seq;
        *seq += 1;
        Rendezvous {
            transport: &self.transport,
            key: (key, this_seq),
            members,
            position,
            header,
            input: Some(input),
        }
        .await
    }

    async fn group_call(
        &mut self,
        g: &AxisGroup,
        kind: CollectiveKind,
        len: usize,
        root: usize,
        reduce: ReduceOp,
        input: Vec<T>,
    ) -> Result<Vec<T>> {
        self.check_group(g)?;
        let key = GroupKey {
            axis: Some(g.axis),
            anchor: g.anchor(),
        };
        let header = Header {
            op: Op::Collective(kind),
            len,
            root,
            reduce,
        };
        self.rendezvous(key, &g.members, g.my_position, header, input).await
    }

    /// Copies the root's buffer to every member. Non-root members pass `None`
    /// and declare the length they expect.
    pub async fn broadcast(
        &mut self,
        g: &AxisGroup,
        root_position: usize,
        len: usize,
        buf: Option<&[T]>,
    ) -> Result<Vec<T>> {
        let p = g.size();
        if root_position >= p {
            return Err(Error::OutOfRange {
                coord: root_position,
                p,
            });
        }
        let is_root = g.my_position == root_position;
        let input = match (is_root, buf) {
            (true, Some(b)) if b.len() == len => b.to_vec(),
            (true, Some(b)) => {
                return Err(Error::LengthMismatch {
                    op: "broadcast",
                    expected: len,
                    got: b.len(),
                })
            }
            (true, None) => {
                return Err(Error::LengthMismatch {
                    op: "broadcast",
                    expected: len,
                    got: 0,
                })
            }
            (false, _) => Vec::new(),
        };
        if p == 1 {
            self.charge(CollectiveKind::Broadcast, 0, 0);
            return Ok(input);
        }
        let out = self
            .group_call(g, CollectiveKind::Broadcast, len, root_position, ReduceOp::Sum, input)
            .await?;
        if is_root {
            self.charge(CollectiveKind::Broadcast, (p - 1) * len, 0);
        } else {
            self.charge(CollectiveKind::Broadcast, 0, len);
        }
        Ok(out)
    }

    /// Concatenates every member's shard in ascending group position.
    pub async fn all_gather(&mut self, g: &AxisGroup, shard: &[T]) -> Result<Vec<T>> {
        let p = g.size();
        let s = shard.len();
        if p > 1 {
            let out = self
                .group_call(g, CollectiveKind::AllGather, s, 0, ReduceOp::Sum, shard.to_vec())
                .await?;
            self.charge(CollectiveKind::AllGather, (p - 1) * s, (p - 1) * s);
            Ok(out)
        } else {
            self.charge(CollectiveKind::AllGather, 0, 0);
            Ok(shard.to_vec())
        }
    }

    /// Elementwise reduction of `p` equal buffers; position `q` keeps slice `q`.
    pub async fn reduce_scatter(&mut self, g: &AxisGroup, full: &[T], op: ReduceOp) -> Result<Vec<T>> {
        let p = g.size();
        if !full.len().is_multiple_of(p) {
            return Err(Error::LengthMismatch {
                op: "reduce_scatter",
                expected: full.len().next_multiple_of(p),
                got: full.len(),
            });
        }
        let s = full.len() / p;
        if p > 1 {
            let out = self
                .group_call(g, CollectiveKind::ReduceScatter, full.len(), 0, op, full.to_vec())
                .await?;
            self.charge(CollectiveKind::ReduceScatter, (p - 1) * s, (p - 1) * s);
            Ok(out)
        } else {
            self.charge(CollectiveKind::ReduceScatter, 0, 0);
            Ok(full.to_vec())
        }
    }

    pub async fn all_reduce(&mut self, g: &AxisGroup, buf: &[T], op: ReduceOp) -> Result<Vec<T>> {
        let p = g.size();
        let len = buf.len();
        if p > 1 {
            let out = self
                .group_call(g, CollectiveKind::AllReduce, len, 0, op, buf.to_vec())
                .await?;
            self.charge(CollectiveKind::AllReduce, (p - 1) * len, (p - 1) * len);
            Ok(out)
        } else {
            self.charge(CollectiveKind::AllReduce, 0, 0);
            Ok(buf.to_vec())
        }
    }

    /// Reduction onto one member, the adjoint of [`broadcast`](Self::broadcast).
    /// Returns `Some` at the root only.
    pub async fn reduce(
        &mut self,
        g: &AxisGroup,
        root_position: usize,
        buf: &[T],
        op: ReduceOp,
    ) -> Result<Option<Vec<T>>> {
        let p = g.size();
        if root_position >= p {
            return Err(Error::OutOfRange {
                coord: root_position,
                p,
            });
        }
        let len = buf.len();
        let is_root = g.my_position == root_position;
        if p == 1 {
            self.charge(CollectiveKind::Reduce, 0, 0);
            return Ok(Some(buf.to_vec()));
        }
        let out = self
            .group_call(g, CollectiveKind::Reduce, len, root_position, op, buf.to_vec())
            .await?;
        if is_root {
            self.charge(CollectiveKind::Reduce, 0, (p - 1) * len);
            Ok(Some(out))
        } else {
            self.charge(CollectiveKind::Reduce, len, 0);
            Ok(None)
        }
    }

    /// Collective over all ranks: clears this rank's counters once everyone
    /// has arrived.
    pub async fn reset_counters(&mut self) -> Result<()> {
        let n = self.transport.topo.ranks();
        if n > 1 {
            let key = GroupKey { axis: None, anchor: 0 };
            let members: Vec<usize> = (0..n).collect();
            let header = Header {
                op: Op::Barrier,
                len: 0,
                root: 0,
                reduce: ReduceOp::Sum,
            };
            let rank = self.rank;
            self.rendezvous(key, &members, rank, header, Vec::new()).await?;
        }
        self.transport.lock().counters[self.rank] = CostCounters::default();
        Ok(())
    }
}
