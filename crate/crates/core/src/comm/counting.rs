//! Communicator decorator that counts collective calls, used by tests to
//! check that every member of a group runs the same collectives.

use std::sync::{Arc, Mutex};

use serde::{Deserialize, Serialize};

use super::Communicator;
use crate::error::Result;

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct CallCounts {
    pub barrier: usize,
    pub all_reduce_max: usize,
    pub all_gather: usize,
    pub gather: usize,
    pub broadcast: usize,
    pub split: usize,
}

/// Counts for a communicator and, recursively, the groups split from it.
#[derive(Debug, Default)]
pub struct CountTree {
    pub counts: CallCounts,
    pub children: Vec<Arc<Mutex<CountTree>>>,
}

impl CountTree {
    /// Depth-first flattening: this communicator first, then its children.
    pub fn flatten(&self) -> Vec<CallCounts> {
        let mut out = vec![self.counts];
        for c in &self.children {
            out.extend(c.lock().unwrap_or_else(|p| p.into_inner()).flatten());
        }
        out
    }
}

pub struct CountingComm {
    inner: Box<dyn Communicator>,
    tree: Arc<Mutex<CountTree>>,
}

impl CountingComm {
    pub fn new(inner: Box<dyn Communicator>) -> Self {
        Self {
            inner,
            tree: Arc::default(),
        }
    }

    pub fn tree(&self) -> Arc<Mutex<CountTree>> {
        Arc::clone(&self.tree)
    }

    fn bump(&self, f: impl FnOnce(&mut CallCounts)) {
        f(&mut self.tree.lock().unwrap_or_else(|p| p.into_inner()).counts);
    }
}

impl Communicator for CountingComm {
    fn rank(&self) -> usize {
        self.inner.rank()
    }

    fn size(&self) -> usize {
        self.inner.size()
    }

    fn barrier(&mut self) -> Result<()> {
        self.bump(|c| c.barrier += 1);
        self.inner.barrier()
    }

    fn all_reduce_max(&mut self, value: f64) -> Result<f64> {
        self.bump(|c| c.all_reduce_max += 1);
        self.inner.all_reduce_max(value)
    }

    fn all_gather_varcount(&mut self, local: &[f64]) -> Result<Vec<Vec<f64>>> {
        self.bump(|c| c.all_gather += 1);
        self.inner.all_gather_varcount(local)
    }

    fn gather_varcount(&mut self, local: &[f64], root: usize) -> Result<Option<Vec<Vec<f64>>>> {
        self.bump(|c| c.gather += 1);
        self.inner.gather_varcount(local, root)
    }

    fn broadcast(&mut self, data: &[f64], root: usize) -> Result<Vec<f64>> {
        self.bump(|c| c.broadcast += 1);
        self.inner.broadcast(data, root)
    }

    fn split(&mut self, color: usize, key: usize) -> Result<Box<dyn Communicator>> {
        self.bump(|c| c.split += 1);
        let child = CountingComm::new(self.inner.split(color, key)?);
        self.tree
            .lock()
            .unwrap_or_else(|p| p.into_inner())
            .children
            .push(child.tree());
        Ok(Box::new(child))
    }
}
