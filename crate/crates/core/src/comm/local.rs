//! In-process transport: each rank is a thread, exchanges meet in shared
//! slots guarded by one mutex.

use std::collections::HashMap;
use std::panic::{self, AssertUnwindSafe};
use std::sync::{Arc, Condvar, Mutex, MutexGuard};
use std::thread;
use std::time::Duration;

use super::{Communicator, Exchange, ExchangeKind, Fabric, FabricComm};
use crate::error::{MscError, Result};

#[derive(Debug)]
enum Phase {
    Filling,
    Draining,
}

#[derive(Debug)]
struct Slot {
    size: usize,
    kind: ExchangeKind,
    root: usize,
    phase: Phase,
    generation: u64,
    pieces: Vec<Option<Vec<f64>>>,
    arrived: usize,
    results: Arc<Vec<Vec<f64>>>,
    readers_left: usize,
}

impl Slot {
    fn new(req: &Exchange) -> Self {
        Self {
            size: req.size,
            kind: req.kind,
            root: req.root,
            phase: Phase::Filling,
            generation: 0,
            pieces: vec![None; req.size],
            arrived: 0,
            results: Arc::new(Vec::new()),
            readers_left: 0,
        }
    }
}

#[derive(Debug, Default)]
struct State {
    slots: HashMap<u64, Slot>,
    aborted: Option<String>,
    /// Ranks that have not returned yet.
    alive: usize,
    /// First failure reported through [`LocalFabric::finish`].
    failed: Option<String>,
}

impl State {
    /// Ranks parked in an exchange that still lacks members.
    fn stuck(&self) -> usize {
        self.slots
            .values()
            .filter(|s| matches!(s.phase, Phase::Filling))
            .map(|s| s.arrived)
            .sum()
    }

    /// Once every live rank waits on an incomplete exchange nothing can
    /// complete any more.
    fn check_deadlock(&mut self) -> bool {
        if self.aborted.is_some() || self.alive == 0 || self.stuck() < self.alive {
            return false;
        }
        let reason = self
            .failed
            .clone()
            .unwrap_or_else(|| "every live rank is waiting on a collective that cannot complete".into());
        self.aborted = Some(reason);
        true
    }
}

/// Shared meeting point for the threads of one in-process job.
#[derive(Debug)]
pub struct LocalFabric {
    state: Mutex<State>,
    cv: Condvar,
    timeout: Duration,
}

impl Default for LocalFabric {
    fn default() -> Self {
        Self::new(Duration::from_secs(600))
    }
}

impl LocalFabric {
    pub fn new(timeout: Duration) -> Self {
        Self {
            state: Mutex::new(State::default()),
            cv: Condvar::new(),
            timeout,
        }
    }

    /// World communicators for ranks `0..size`.
    pub fn world(self: &Arc<Self>, size: usize) -> Vec<FabricComm> {
        self.lock().alive = size;
        (0..size)
            .map(|r| FabricComm::world(Arc::clone(self) as Arc<dyn Fabric>, r, size))
            .collect()
    }

    /// Wakes every waiting member with an error.
    pub fn abort(&self, reason: impl Into<String>) {
        let mut st = self.lock();
        st.aborted.get_or_insert_with(|| reason.into());
        self.cv.notify_all();
    }

    /// Marks a rank as returned. Ranks still running keep going; the job is
    /// aborted only once the remaining ones are all blocked.
    pub fn finish(&self, failure: Option<String>) {
        let mut st = self.lock();
        st.alive = st.alive.saturating_sub(1);
        if let Some(f) = failure {
            st.failed.get_or_insert(f);
        }
        if st.check_deadlock() {
            self.cv.notify_all();
        }
    }

    fn lock(&self) -> MutexGuard<'_, State> {
        self.state.lock().unwrap_or_else(|p| p.into_inner())
    }

    fn wait<'a>(&self, guard: MutexGuard<'a, State>) -> Result<MutexGuard<'a, State>> {
        let (g, to) = self
            .cv
            .wait_timeout(guard, self.timeout)
            .unwrap_or_else(|p| p.into_inner());
        if to.timed_out() {
            return Err(MscError::Comm("timed out waiting for a collective".into()));
        }
        Ok(g)
    }

    fn aborted(st: &State) -> Result<()> {
        match &st.aborted {
            Some(reason) => Err(MscError::Comm(format!("job aborted: {reason}"))),
            None => Ok(()),
        }
    }
}

impl Fabric for LocalFabric {
    fn exchange(&self, req: Exchange) -> Result<Vec<Vec<f64>>> {
        let mut st = self.lock();
        Self::aborted(&st)?;
        // wait until the previous round on this communicator is fully read
        while matches!(st.slots.get(&req.comm_id), Some(s) if matches!(s.phase, Phase::Draining)) {
            st = self.wait(st)?;
            Self::aborted(&st)?;
        }
        let slot = st.slots.entry(req.comm_id).or_insert_with(|| Slot::new(&req));
        if slot.arrived == 0 {
            slot.kind = req.kind;
            slot.root = req.root;
        }
        if slot.size != req.size || slot.kind != req.kind || slot.root != req.root {
            let msg = format!(
                "collective mismatch on communicator {:#x}: {:?}/root {} vs {:?}/root {}",
                req.comm_id, slot.kind, slot.root, req.kind, req.root
            );
            drop(st);
            self.abort(msg.clone());
            return Err(MscError::Comm(msg));
        }
        if slot.pieces[req.index].is_some() {
            return Err(MscError::Comm(format!("rank {} entered a collective twice", req.index)));
        }
        slot.pieces[req.index] = Some(req.payload);
        slot.arrived += 1;
        let generation = slot.generation;
        if slot.arrived == slot.size {
            let pieces = slot.pieces.iter_mut().map(|p| p.take().unwrap_or_default()).collect();
            slot.results = Arc::new(pieces);
            slot.phase = Phase::Draining;
            slot.readers_left = slot.size;
            self.cv.notify_all();
        } else {
            if st.check_deadlock() {
                self.cv.notify_all();
            }
            loop {
                let s = &st.slots[&req.comm_id];
                if matches!(s.phase, Phase::Draining) && s.generation == generation {
                    break;
                }
                Self::aborted(&st)?;
                st = self.wait(st)?;
            }
        }
        let slot = st.slots.get_mut(&req.comm_id).expect("slot exists");
        let reply = slot.kind.reply_for(req.index, slot.root, &slot.results);
        slot.readers_left -= 1;
        if slot.readers_left == 0 {
            slot.phase = Phase::Filling;
            slot.arrived = 0;
            slot.generation += 1;
            slot.results = Arc::new(Vec::new());
            self.cv.notify_all();
        }
        Ok(reply)
    }
}

/// Runs `job` on `size` threads, one per rank, and returns each rank's
/// outcome in rank order. After a rank fails or panics, the others run on
/// until they are all blocked on collectives it would have joined, and then
/// fail with a communication error.
pub fn run_local<T, F>(size: usize, job: F) -> Vec<Result<T>>
where
    T: Send,
    F: Fn(Box<dyn Communicator>) -> Result<T> + Sync,
{
    let fabric = Arc::new(LocalFabric::default());
    let worlds = fabric.world(size);
    thread::scope(|scope| {
        let handles: Vec<_> = worlds
            .into_iter()
            .map(|comm| {
                let fabric = &fabric;
                let job = &job;
                scope.spawn(move || {
                    let rank = comm.rank();
                    let out = panic::catch_unwind(AssertUnwindSafe(|| job(Box::new(comm))))
                        .unwrap_or_else(|_| Err(MscError::Comm(format!("rank {rank} panicked"))));
                    fabric.finish(out.as_ref().err().map(|e| format!("rank {rank} failed: {e}")));
                    out
                })
            })
            .collect();
        handles
            .into_iter()
            .map(|h| h.join().expect("rank panics are caught"))
            .collect()
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn collectives_on_four_ranks() {
        let out = run_local(4, |mut c| {
            let r = c.rank();
            c.barrier()?;
            let mx = c.all_reduce_max(r as f64 * 1.5)?;
            let all = c.all_gather_varcount(&vec![r as f64; r])?;
            let g = c.gather_varcount(&[r as f64 + 0.5], 2)?;
            let b = c.broadcast(&[r as f64, 42.0], 3)?;
            Ok((mx, all, g, b))
        });
        for (rank, res) in out.into_iter().enumerate() {
            let (mx, all, g, b) = res.unwrap();
            assert_eq!(mx, 4.5);
            assert_eq!(all.len(), 4);
            assert_eq!(all[3], vec![3.0; 3]);
            assert!(all[0].is_empty());
            if rank == 2 {
                assert_eq!(g.unwrap(), vec![vec![0.5], vec![1.5], vec![2.5], vec![3.5]]);
            } else {
                assert!(g.is_none());
            }
            assert_eq!(b, vec![3.0, 42.0]);
        }
    }

    #[test]
    fn split_groups_are_independent() {
        let out = run_local(6, |mut world| {
            let r = world.rank();
            let mut g = world.split(r / 2, r)?;
            let sum = g.all_gather_varcount(&[r as f64])?;
            // interleave world and group traffic
            let wmax = world.all_reduce_max(r as f64)?;
            let gmax = g.all_reduce_max(r as f64)?;
            Ok((g.rank(), g.size(), sum, wmax, gmax))
        });
        for (r, res) in out.into_iter().enumerate() {
            let (gr, gs, pieces, wmax, gmax) = res.unwrap();
            assert_eq!((gr, gs), (r % 2, 2));
            let base = (r / 2 * 2) as f64;
            assert_eq!(pieces, vec![vec![base], vec![base + 1.0]]);
            assert_eq!(wmax, 5.0);
            assert_eq!(gmax, base + 1.0);
        }
    }

    #[test]
    fn split_orders_by_key() {
        let out = run_local(3, |mut world| {
            let r = world.rank();
            let g = world.split(0, 10 - r)?;
            Ok(g.rank())
        });
        let ranks: Vec<usize> = out.into_iter().map(Result::unwrap).collect();
        assert_eq!(ranks, vec![2, 1, 0]);
    }

    #[test]
    fn failing_rank_unblocks_the_rest() {
        let out = run_local(3, |mut c| {
            if c.rank() == 1 {
                return Err(MscError::Domain("boom".into()));
            }
            c.barrier()?;
            Ok(())
        });
        assert!(out.iter().all(Result::is_err));
    }

    #[test]
    fn unrelated_groups_finish_after_a_failure() {
        let out = run_local(4, |mut world| {
            let r = world.rank();
            let mut g = world.split(r / 2, r)?;
            if r == 0 {
                return Err(MscError::Domain("boom".into()));
            }
            std::thread::sleep(Duration::from_millis(20));
            let m = g.all_reduce_max(r as f64)?;
            Ok(m)
        });
        assert!(out[0].is_err());
        assert!(matches!(out[1], Err(MscError::Comm(_))));
        assert_eq!(out[2].as_ref().unwrap(), &3.0);
        assert_eq!(out[3].as_ref().unwrap(), &3.0);
    }

    #[test]
    fn panicking_rank_is_reported() {
        let out = run_local(2, |mut c| {
            if c.rank() == 0 {
                panic!("rank zero gives up");
            }
            c.barrier()
        });
        assert!(out.iter().all(|r| matches!(r, Err(MscError::Comm(_)))));
    }

    #[test]
    fn mismatched_roots_are_reported() {
        let out = run_local(2, |mut c| {
            let root = c.rank();
            c.gather_varcount(&[1.0], root).map(drop)
        });
        assert!(out.iter().any(|r| matches!(r, Err(MscError::Comm(m)) if m.contains("mismatch"))));
    }

    #[test]
    fn many_rounds_stay_in_step() {
        let out = run_local(3, |mut c| {
            let mut acc = 0.0;
            for i in 0..200 {
                acc += c.all_reduce_max((c.rank() * i) as f64)?;
            }
            Ok(acc)
        });
        let expected: f64 = (0..200).map(|i| (2 * i) as f64).sum();
        for r in out {
            assert_eq!(r.unwrap(), expected);
        }
    }
}
