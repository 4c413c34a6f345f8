//! Drivers that execute one rank program per cube rank.

use std::future::Future;
use std::pin::Pin;
use std::sync::Arc;
use std::task::{Context, Poll, Waker};

use super::counters::CostCounters;
use super::transport::{Endpoint, Transport};
use crate::error::{Error, Result};
use crate::scalar::Scalar;
use crate::topology::CubeTopology;

/// How rank programs are interleaved.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum Schedule {
    /// One OS thread per rank.
    #[default]
    Threaded,
    /// A single thread polling ranks round-robin in rank order. Deadlocks are
    /// reported instead of hanging.
    Lockstep,
}

/// Results of an SPMD run, indexed by rank.
#[derive(Debug, Clone)]
pub struct SpmdRun<R> {
    pub results: Vec<R>,
    pub counters: Vec<CostCounters>,
}

impl<R> SpmdRun<R> {
    pub fn total_counters(&self) -> CostCounters {
        CostCounters::total(&self.counters)
    }
}

struct AbortOnDrop<T: Scalar> {
    transport: Arc<Transport<T>>,
    rank: usize,
    armed: bool,
}

impl<T: Scalar> Drop for AbortOnDrop<T> {
    fn drop(&mut self) {
        if self.armed {
            self.transport
                .abort(format!("rank {} did not complete its program", self.rank));
        }
    }
}

async fn supervised<T, R, Fut>(transport: Arc<Transport<T>>, rank: usize, fut: Fut) -> Result<R>
where
    T: Scalar,
    Fut: Future<Output = Result<R>>,
{
    let mut guard = AbortOnDrop {
        transport,
        rank,
        armed: true,
    };
    let out = fut.await;
    guard.armed = false;
    match &out {
        Ok(_) => guard.transport.finish(rank),
        Err(e) => guard.transport.abort(format!("rank {rank} failed: {e}")),
    }
    out
}

/// Runs `program` once per rank of `topo` and collects the per-rank results.
///
/// If any rank fails, the run is aborted and the first root-cause error (in
/// rank order, ignoring the induced `Aborted` errors) is returned.
pub fn run_spmd<T, R, F, Fut>(topo: CubeTopology, schedule: Schedule, program: F) -> Result<SpmdRun<R>>
where
    T: Scalar,
    R: Send,
    F: Fn(Endpoint<T>) -> Fut,
    Fut: Future<Output = Result<R>> + Send,
{
    let transport = Transport::<T>::new(topo);
    let n = topo.ranks();
    let futures: Vec<_> = (0..n)
        .map(|rank| {
            let ep = Endpoint::new(rank, Arc::clone(&transport));
            supervised(Arc::clone(&transport), rank, program(ep))
        })
        .collect();

    let outcomes = match schedule {
        Schedule::Threaded => run_threaded(futures),
        Schedule::Lockstep => run_lockstep(&transport, futures),
    };

    let mut results = Vec::with_capacity(n);
    let mut first_err: Option<Error> = None;
    for outcome in outcomes {
        match outcome {
            Ok(r) => results.push(r),
            Err(e) => {
                let induced = matches!(e, Error::Aborted(_));
                match &first_err {
                    None => first_err = Some(e),
                    Some(Error::Aborted(_)) if !induced => first_err = Some(e),
                    _ => {}
                }
            }
        }
    }
    if let Some(e) = first_err {
        return Err(e);
    }
    Ok(SpmdRun {
        results,
        counters: transport.counters(),
    })
}

fn run_threaded<R, Fut>(futures: Vec<Fut>) -> Vec<Result<R>>
where
    R: Send,
    Fut: Future<Output = Result<R>> + Send,
{
    std::thread::scope(|s| {
        let handles: Vec<_> = futures
            .into_iter()
            .map(|f| s.spawn(move || futures::executor::block_on(f)))
            .collect();
        let joined: Vec<_> = handles.into_iter().map(|h| h.join()).collect();
        joined
            .into_iter()
            .map(|j| j.unwrap_or_else(|panic| std::panic::resume_unwind(panic)))
            .collect()
    })
}

fn run_lockstep<T, R, Fut>(transport: &Transport<T>, futures: Vec<Fut>) -> Vec<Result<R>>
where
    T: Scalar,
    Fut: Future<Output = Result<R>>,
{
    let mut pending: Vec<Option<Pin<Box<Fut>>>> = futures.into_iter().map(|f| Some(Box::pin(f))).collect();
    let mut done: Vec<Option<Result<R>>> = pending.iter().map(|_| None).collect();
    let mut cx = Context::from_waker(Waker::noop());
    loop {
        let before = transport.progress();
        let mut completed = 0;
        for (slot, out) in pending.iter_mut().zip(done.iter_mut()) {
            if let Some(f) = slot {
                if let Poll::Ready(r) = f.as_mut().poll(&mut cx) {
                    *out = Some(r);
                    *slot = None;
                    completed += 1;
                }
            }
        }
        let blocked = pending.iter().filter(|f| f.is_some()).count();
        if blocked == 0 {
            break;
        }
        if completed == 0 && transport.progress() == before {
            transport.abort(format!("deadlock with {blocked} ranks blocked"));
            // surface the deadlock itself rather than the induced aborts
            for (slot, out) in pending.iter_mut().zip(done.iter_mut()) {
                if slot.take().is_some() {
                    *out = Some(Err(Error::Deadlock(blocked)));
                }
            }
        }
    }
    done.into_iter().map(|r| r.expect("every rank completed")).collect()
}
