//! Process-group communication for the SPMD pipeline.
//!
//! [`Communicator`] exposes exactly five collectives (barrier, scalar
//! max all-reduce, variable all-gather, variable gather to a root and
//! broadcast) plus group formation by color. Two transports implement it:
//! threads inside one process ([`local`]) and separate processes talking
//! to a coordinator over TCP ([`socket`]). Both reduce every collective to a
//! single primitive exchange on a [`Fabric`].

pub mod counting;
pub mod local;
pub mod socket;

use std::sync::Arc;

use crate::error::{MscError, Result};

pub use counting::{CallCounts, CountTree, CountingComm};
pub use local::{run_local, LocalFabric};

/// Handle to a group of SPMD processes. Collective calls must be made by
/// every member, in the same order.
pub trait Communicator: Send {
    fn rank(&self) -> usize;
    fn size(&self) -> usize;

    fn barrier(&mut self) -> Result<()>;

    fn all_reduce_max(&mut self, value: f64) -> Result<f64>;

    /// Every member receives every member's contribution, indexed by rank.
    fn all_gather_varcount(&mut self, local: &[f64]) -> Result<Vec<Vec<f64>>>;

    /// `root` receives every contribution; other members get `None`.
    fn gather_varcount(&mut self, local: &[f64], root: usize) -> Result<Option<Vec<Vec<f64>>>>;

    /// Every member receives `root`'s `data`; other members' `data` is ignored.
    fn broadcast(&mut self, data: &[f64], root: usize) -> Result<Vec<f64>>;

    /// Partitions the group by `color`; ranks in each new group are ordered
    /// by `(key, old rank)`.
    fn split(&mut self, color: usize, key: usize) -> Result<Box<dyn Communicator>>;
}

/// What a member wants back from an exchange.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ExchangeKind {
    /// All pieces to everyone.
    AllGather,
    /// All pieces to the root only.
    Gather,
    /// The root's piece to everyone.
    Broadcast,
}

impl ExchangeKind {
    pub(crate) fn code(self) -> u8 {
        match self {
            ExchangeKind::AllGather => 0,
            ExchangeKind::Gather => 1,
            ExchangeKind::Broadcast => 2,
        }
    }

    pub(crate) fn from_code(c: u8) -> Option<Self> {
        match c {
            0 => Some(ExchangeKind::AllGather),
            1 => Some(ExchangeKind::Gather),
            2 => Some(ExchangeKind::Broadcast),
            _ => None,
        }
    }

    /// The part of a completed exchange that member `index` receives.
    pub(crate) fn reply_for(self, index: usize, root: usize, pieces: &[Vec<f64>]) -> Vec<Vec<f64>> {
        match self {
            ExchangeKind::AllGather => pieces.to_vec(),
            ExchangeKind::Gather if index == root => pieces.to_vec(),
            ExchangeKind::Gather => Vec::new(),
            ExchangeKind::Broadcast => vec![pieces[root].clone()],
        }
    }
}

/// One member's contribution to a collective on communicator `comm_id`.
#[derive(Debug, Clone, PartialEq)]
pub struct Exchange {
    pub comm_id: u64,
    pub size: usize,
    pub index: usize,
    pub kind: ExchangeKind,
    pub root: usize,
    pub payload: Vec<f64>,
}

/// Transport that completes exchanges once every member has contributed.
pub trait Fabric: Send + Sync {
    fn exchange(&self, req: Exchange) -> Result<Vec<Vec<f64>>>;
}

/// Derives the id of a child communicator. Every member computes the same id
/// because splits happen in the same order on every member.
fn child_id(parent: u64, split_seq: u64, color: usize) -> u64 {
    let mut x = parent ^ split_seq.wrapping_mul(0x9E37_79B9_7F4A_7C15) ^ (color as u64 + 1).rotate_left(32);
    // splitmix64 finalizer
    x = (x ^ (x >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    x = (x ^ (x >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    x ^ (x >> 31)
}

/// A communicator backed by any [`Fabric`].
pub struct FabricComm {
    fabric: Arc<dyn Fabric>,
    id: u64,
    rank: usize,
    size: usize,
    splits: u64,
}

impl FabricComm {
    pub const WORLD_ID: u64 = 0;

    pub fn world(fabric: Arc<dyn Fabric>, rank: usize, size: usize) -> Self {
        Self {
            fabric,
            id: Self::WORLD_ID,
            rank,
            size,
            splits: 0,
        }
    }

    fn exchange(&self, kind: ExchangeKind, root: usize, payload: Vec<f64>) -> Result<Vec<Vec<f64>>> {
        if root >= self.size {
            return Err(MscError::Comm(format!("root {root} outside group of {}", self.size)));
        }
        self.fabric.exchange(Exchange {
            comm_id: self.id,
            size: self.size,
            index: self.rank,
            kind,
            root,
            payload,
        })
    }
}

impl Communicator for FabricComm {
    fn rank(&self) -> usize {
        self.rank
    }

    fn size(&self) -> usize {
        self.size
    }

    fn barrier(&mut self) -> Result<()> {
        self.exchange(ExchangeKind::AllGather, 0, Vec::new()).map(drop)
    }

    fn all_reduce_max(&mut self, value: f64) -> Result<f64> {
        let pieces = self.exchange(ExchangeKind::AllGather, 0, vec![value])?;
        pieces
            .iter()
            .map(|p| p.first().copied().ok_or_else(|| MscError::Comm("empty reduce piece".into())))
            .try_fold(f64::NEG_INFINITY, |acc, x| Ok(acc.max(x?)))
    }

    fn all_gather_varcount(&mut self, local: &[f64]) -> Result<Vec<Vec<f64>>> {
        self.exchange(ExchangeKind::AllGather, 0, local.to_vec())
    }

    fn gather_varcount(&mut self, local: &[f64], root: usize) -> Result<Option<Vec<Vec<f64>>>> {
        let pieces = self.exchange(ExchangeKind::Gather, root, local.to_vec())?;
        Ok((self.rank == root).then_some(pieces))
    }

    fn broadcast(&mut self, data: &[f64], root: usize) -> Result<Vec<f64>> {
        let payload = if self.rank == root { data.to_vec() } else { Vec::new() };
        let mut pieces = self.exchange(ExchangeKind::Broadcast, root, payload)?;
        pieces.pop().ok_or_else(|| MscError::Comm("empty broadcast reply".into()))
    }

    fn split(&mut self, color: usize, key: usize) -> Result<Box<dyn Communicator>> {
        let pieces = self.exchange(ExchangeKind::AllGather, 0, vec![color as f64, key as f64])?;
        let mut members: Vec<(usize, usize)> = pieces
            .iter()
            .enumerate()
            .filter(|(_, p)| p.first().map(|&c| c as usize) == Some(color))
            .map(|(r, p)| (p.get(1).copied().unwrap_or(0.0) as usize, r))
            .collect();
        members.sort_unstable();
        let rank = members
            .iter()
            .position(|&(_, r)| r == self.rank)
            .ok_or_else(|| MscError::Comm("split lost the calling rank".into()))?;
        self.splits += 1;
        Ok(Box::new(FabricComm {
            fabric: Arc::clone(&self.fabric),
            id: child_id(self.id, self.splits, color),
            rank,
            size: members.len(),
            splits: 0,
        }))
    }
}

/// Indices are shipped inside `f64` payloads; exact below 2^53.
pub(crate) fn to_f64s(xs: &[usize]) -> Vec<f64> {
    xs.iter().map(|&x| x as f64).collect()
}

pub(crate) fn to_indices(xs: &[f64]) -> Result<Vec<usize>> {
    xs.iter()
        .map(|&x| {
            if x >= 0.0 && x.fract() == 0.0 && x < 9.007_199_254_740_992e15 {
                Ok(x as usize)
            } else {
                Err(MscError::Comm(format!("{x} is not an index")))
            }
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn child_ids_differ_by_color_and_sequence() {
        let a = child_id(0, 1, 0);
        assert_ne!(a, child_id(0, 1, 1));
        assert_ne!(a, child_id(0, 2, 0));
        assert_ne!(a, 0);
    }

    #[test]
    fn reply_shapes() {
        let pieces = vec![vec![1.0], vec![2.0, 3.0]];
        assert_eq!(ExchangeKind::AllGather.reply_for(1, 0, &pieces), pieces);
        assert_eq!(ExchangeKind::Gather.reply_for(1, 0, &pieces), Vec::<Vec<f64>>::new());
        assert_eq!(ExchangeKind::Gather.reply_for(0, 0, &pieces), pieces);
        assert_eq!(ExchangeKind::Broadcast.reply_for(0, 1, &pieces), vec![vec![2.0, 3.0]]);
    }

    #[test]
    fn index_encoding() {
        assert_eq!(to_indices(&to_f64s(&[0, 7, 123_456])).unwrap(), vec![0, 7, 123_456]);
        assert!(to_indices(&[1.5]).is_err());
        assert!(to_indices(&[-1.0]).is_err());
    }
}
