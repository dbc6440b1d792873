//! SPMD multi-slice clustering over three process groups.
//!
//! The world is split into three equal groups, one per mode. Inside a group
//! each process owns a contiguous block of slices, computes their scaled
//! top eigenvectors, and the group all-gathers them so every member holds
//! the full eigen matrix. Members then compute their rows of the similarity
//! matrix and the matching row sums, which the group root gathers to run
//! cluster selection. Finally the three group roots send their clusters to
//! world rank 0.

use std::fmt;
use std::io::Write;
use std::time::Instant;

use serde::{Deserialize, Serialize};

use crate::cluster::{
    check_epsilon_hypothesis, cluster_row_sum, eigen_column, normalize, row_sum, select_cluster,
    similarity_rows, ClusterSet, EigenMatrix, MarginalVector, ModeReport, MscConfig, MscReport, Selection,
};
use crate::comm::{to_f64s, to_indices, Communicator};
use crate::error::{MscError, Result};
use crate::synth::Synthetic;
use crate::tensor::{block_range, BlockRange, Mode, SliceMatrix, Tensor3, TensorFile};

/// Somewhere slices can be fetched from one at a time.
pub trait SliceSource {
    fn dims(&self) -> [usize; 3];
    fn fetch(&mut self, mode: Mode, index: usize) -> Result<SliceMatrix>;
}

/// Regenerates slices locally from the shared seed.
impl SliceSource for Synthetic {
    fn dims(&self) -> [usize; 3] {
        Synthetic::dims(self)
    }

    fn fetch(&mut self, mode: Mode, index: usize) -> Result<SliceMatrix> {
        self.slice(mode, index)
    }
}

/// Reads only the requested slice from an MSC3 file.
impl SliceSource for TensorFile {
    fn dims(&self) -> [usize; 3] {
        TensorFile::dims(self)
    }

    fn fetch(&mut self, mode: Mode, index: usize) -> Result<SliceMatrix> {
        self.read_slice(mode, index)
    }
}

/// A tensor already in memory. Meant for in-process runs, where ranks are
/// threads sharing read-only memory; each rank still copies only its block.
impl SliceSource for &Tensor3 {
    fn dims(&self) -> [usize; 3] {
        Tensor3::dims(self)
    }

    fn fetch(&mut self, mode: Mode, index: usize) -> Result<SliceMatrix> {
        self.slice(mode, index)
    }
}

/// This process's place in the three-group layout.
pub struct GroupAssignment {
    pub mode: Mode,
    pub group: usize,
    pub group_comm: Box<dyn Communicator>,
    pub group_rank: usize,
    pub group_size: usize,
    pub global_rank: usize,
    pub world_size: usize,
    pub is_group_root: bool,
    pub is_global_root: bool,
}

impl fmt::Debug for GroupAssignment {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("GroupAssignment")
            .field("mode", &self.mode)
            .field("group_rank", &self.group_rank)
            .field("group_size", &self.group_size)
            .field("global_rank", &self.global_rank)
            .finish_non_exhaustive()
    }
}

pub const GROUP_ROOT: usize = 0;
pub const GLOBAL_ROOT: usize = 0;

/// Group of a world rank: `rank / (p / 3)`.
pub fn group_of(rank: usize, world_size: usize) -> Result<usize> {
    if world_size == 0 || !world_size.is_multiple_of(3) {
        return Err(MscError::Startup(format!(
            "process count must be a positive multiple of 3 (one group per mode), got {world_size}"
        )));
    }
    Ok(rank / (world_size / 3))
}

pub fn split_groups(world: &mut dyn Communicator) -> Result<GroupAssignment> {
    let p = world.size();
    let rank = world.rank();
    let group = group_of(rank, p)?;
    let group_comm = world.split(group, rank)?;
    let group_rank = group_comm.rank();
    let group_size = group_comm.size();
    debug_assert_eq!(group_size, p / 3);
    Ok(GroupAssignment {
        mode: Mode::from_axis(group)?,
        group,
        group_comm,
        group_rank,
        group_size,
        global_rank: rank,
        world_size: p,
        is_group_root: group_rank == GROUP_ROOT,
        is_global_root: rank == GLOBAL_ROOT,
    })
}

/// The slices one process owns and what it computed from them.
#[derive(Debug, Clone)]
pub struct LocalBlock {
    pub mode: Mode,
    /// Length of the mode.
    pub m: usize,
    pub range: BlockRange,
    pub slices: Vec<SliceMatrix>,
    /// Length of every eigen column (slice column count).
    pub col_len: usize,
    pub lambdas: Vec<f64>,
    /// Owned columns of M, flattened in slice order.
    pub local_columns: Vec<f64>,
    pub local_lambda_max: f64,
    /// Most slices held at once.
    pub peak_slices: usize,
}

impl LocalBlock {
    pub fn empty(mode: Mode, dims: [usize; 3], range: BlockRange) -> Self {
        let col_len = crate::tensor::slice_shape(dims, mode).1;
        Self {
            mode,
            m: dims[mode.axis()],
            range,
            slices: Vec::new(),
            col_len,
            lambdas: Vec::new(),
            local_columns: Vec::new(),
            local_lambda_max: 0.0,
            peak_slices: 0,
        }
    }
}

pub fn distribute<S: SliceSource + ?Sized>(source: &mut S, assignment: &GroupAssignment) -> Result<LocalBlock> {
    let dims = source.dims();
    let mode = assignment.mode;
    let range = block_range(dims[mode.axis()], assignment.group_size, assignment.group_rank)?;
    let mut block = LocalBlock::empty(mode, dims, range);
    for i in range.range() {
        let s = source
            .fetch(mode, i)
            .map_err(|e| e.at_slice(mode.number(), i).at_rank(assignment.global_rank))?;
        block.slices.push(s);
        block.peak_slices = block.peak_slices.max(block.slices.len());
    }
    Ok(block)
}

pub fn local_eigen(block: &mut LocalBlock, config: &MscConfig, rank: usize) -> Result<()> {
    block.lambdas.clear();
    block.local_columns.clear();
    for (offset, slice) in block.slices.iter().enumerate() {
        let index = block.range.start + offset;
        let (lambda, col) = eigen_column(slice, &config.spectral)
            .map_err(|e| e.at_slice(block.mode.number(), index).at_rank(rank))?;
        block.lambdas.push(lambda);
        block.local_columns.extend(col);
    }
    block.local_lambda_max = block.lambdas.iter().copied().fold(0.0, f64::max);
    Ok(())
}

/// All-gathers the owned columns and the largest eigenvalue, then
/// normalizes. Every member ends up with the same V.
pub fn assemble_v(block: &LocalBlock, comm: &mut dyn Communicator) -> Result<EigenMatrix> {
    let stride = block.col_len + 1;
    let mut packed = Vec::with_capacity(block.lambdas.len() * stride);
    for (i, &lambda) in block.lambdas.iter().enumerate() {
        packed.push(lambda);
        packed.extend_from_slice(&block.local_columns[i * block.col_len..(i + 1) * block.col_len]);
    }
    let pieces = comm.all_gather_varcount(&packed)?;
    let lambda_max = comm.all_reduce_max(block.local_lambda_max)?;

    let mut lambdas = Vec::with_capacity(block.m);
    let mut columns = Vec::with_capacity(block.m * block.col_len);
    for piece in &pieces {
        if piece.len() % stride != 0 {
            return Err(MscError::Comm(format!("eigen piece of length {} with stride {stride}", piece.len())));
        }
        for chunk in piece.chunks_exact(stride) {
            lambdas.push(chunk[0]);
            columns.extend_from_slice(&chunk[1..]);
        }
    }
    if lambdas.len() != block.m {
        return Err(MscError::Comm(format!("assembled {} columns, mode has {}", lambdas.len(), block.m)));
    }
    normalize(EigenMatrix::from_columns(block.col_len, lambdas, columns)?.with_lambda_max(lambda_max))
}

/// Owned rows of `|Vᵀ V|` and their row sums.
#[derive(Debug, Clone, PartialEq)]
pub struct LocalSimilarity {
    pub range: BlockRange,
    pub m: usize,
    pub rows: Vec<f64>,
    pub d: Vec<f64>,
}

impl LocalSimilarity {
    pub fn row(&self, global_index: usize) -> &[f64] {
        let r = global_index - self.range.start;
        &self.rows[r * self.m..(r + 1) * self.m]
    }
}

pub fn local_similarity(block: &LocalBlock, v: &EigenMatrix) -> LocalSimilarity {
    let m = v.len();
    let rows = similarity_rows(v, block.range.range());
    let d = rows.chunks(m.max(1)).take(block.range.count).map(row_sum).collect();
    LocalSimilarity {
        range: block.range,
        m,
        rows,
        d,
    }
}

/// Group-root view of one mode after selection.
#[derive(Debug, Clone, PartialEq)]
pub struct GroupSelection {
    pub selection: Selection,
    pub d: MarginalVector,
    pub eps: f64,
}

/// Gathers the row sums to the group root, in slice order.
pub fn gather_marginals(local: &LocalSimilarity, assignment: &mut GroupAssignment) -> Result<Option<MarginalVector>> {
    let Some(pieces) = assignment.group_comm.gather_varcount(&local.d, GROUP_ROOT)? else {
        return Ok(None);
    };
    let d = MarginalVector(pieces.concat());
    if d.len() != local.m {
        return Err(MscError::Comm(format!("gathered {} marginals, mode has {}", d.len(), local.m)));
    }
    Ok(Some(d))
}

fn select_at_root(d: MarginalVector, mode: Mode, eps: f64) -> Result<GroupSelection> {
    let selection = select_cluster(&d, mode, eps)?;
    Ok(GroupSelection { selection, d, eps })
}

/// Gathers `d` to the group root and selects the cluster there. Non-root
/// members get `None`.
pub fn gather_and_select(
    local: &LocalSimilarity,
    assignment: &mut GroupAssignment,
    eps: f64,
) -> Result<Option<GroupSelection>> {
    let mode = assignment.mode;
    gather_marginals(local, assignment)?
        .map(|d| select_at_root(d, mode, eps))
        .transpose()
}

/// Average similarity inside the selected cluster, assembled from the rows
/// each member owns. Collective over the group; the root gets the value.
pub fn cluster_cohesion(
    local: &LocalSimilarity,
    selected: Option<&ClusterSet>,
    assignment: &mut GroupAssignment,
) -> Result<Option<f64>> {
    let packed = selected.map(|c| to_f64s(&c.indices)).unwrap_or_default();
    let members = to_indices(&assignment.group_comm.broadcast(&packed, GROUP_ROOT)?)?;
    let partial: Vec<f64> = members
        .iter()
        .filter(|&&i| local.range.contains(i))
        .map(|&i| cluster_row_sum(local.row(i), &members))
        .collect();
    let gathered = assignment.group_comm.gather_varcount(&partial, GROUP_ROOT)?;
    Ok(gathered.map(|pieces| {
        let l = members.len() as f64;
        row_sum(&pieces.concat()) / (l * l)
    }))
}

/// One mode's result as held by the global root.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ParallelMode {
    pub report: ModeReport,
    pub gap_found: bool,
    /// `(1/|Ĵ|²) Σ_{i,j∈Ĵ} c_ij`.
    pub cohesion: f64,
}

fn pack_mode(sel: &GroupSelection, cohesion: f64) -> Vec<f64> {
    let c = &sel.selection.cluster;
    let hyp = check_epsilon_hypothesis(sel.eps, sel.d.len(), c.len());
    let mut out = vec![
        c.mode.number() as f64,
        sel.selection.iterations as f64,
        sel.eps,
        f64::from(u8::from(hyp)),
        f64::from(u8::from(sel.selection.gap_found)),
        cohesion,
        c.len() as f64,
    ];
    out.extend(to_f64s(&c.indices));
    out.extend_from_slice(sel.d.as_slice());
    out
}

fn unpack_mode(p: &[f64]) -> Result<ParallelMode> {
    if p.len() < 7 {
        return Err(MscError::Comm("short mode result".into()));
    }
    let head = to_indices(&[p[0], p[1], p[6]])?;
    let (mode, iterations, l) = (Mode::from_number(head[0])?, head[1], head[2]);
    if p.len() < 7 + l {
        return Err(MscError::Comm("truncated cluster".into()));
    }
    Ok(ParallelMode {
        report: ModeReport {
            mode,
            j: to_indices(&p[7..7 + l])?,
            d: p[7 + l..].to_vec(),
            iterations,
            eps: p[2],
            hypothesis_ok: p[3] != 0.0,
        },
        gap_found: p[4] != 0.0,
        cohesion: p[5],
    })
}

/// Collects the three group roots' results at world rank 0, tagged by mode
/// rather than by sender.
pub fn gather_result(
    world: &mut dyn Communicator,
    mine: Option<(&GroupSelection, f64)>,
) -> Result<Option<[ParallelMode; 3]>> {
    let packed = mine.map(|(sel, coh)| pack_mode(sel, coh)).unwrap_or_default();
    let Some(pieces) = world.gather_varcount(&packed, GLOBAL_ROOT)? else {
        return Ok(None);
    };
    let mut modes: [Option<ParallelMode>; 3] = [None, None, None];
    for piece in pieces.iter().filter(|p| !p.is_empty()) {
        let m = unpack_mode(piece)?;
        let slot = &mut modes[m.report.mode.axis()];
        if slot.is_some() {
            return Err(MscError::Comm(format!("two results for mode {}", m.report.mode)));
        }
        *slot = Some(m);
    }
    match modes {
        [Some(a), Some(b), Some(c)] => Ok(Some([a, b, c])),
        _ => Err(MscError::Comm("missing mode result at global root".into())),
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Phase {
    Distribute,
    Eigen,
    Assemble,
    Similarity,
    Gather,
    Select,
}

impl Phase {
    pub const ALL: [Phase; 6] = [
        Phase::Distribute,
        Phase::Eigen,
        Phase::Assemble,
        Phase::Similarity,
        Phase::Gather,
        Phase::Select,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Phase::Distribute => "distribute",
            Phase::Eigen => "eigen",
            Phase::Assemble => "assemble",
            Phase::Similarity => "similarity",
            Phase::Gather => "gather",
            Phase::Select => "select",
        }
    }

    fn code(self) -> usize {
        Phase::ALL.iter().position(|&p| p == self).expect("listed")
    }
}

impl fmt::Display for Phase {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Timing {
    pub rank: usize,
    pub group: usize,
    pub phase: Phase,
    pub seconds: f64,
}

/// Writes `rank,group,phase,seconds` lines.
pub fn write_timings_csv<W: Write>(timings: &[Timing], w: W) -> Result<()> {
    let mut out = csv::Writer::from_writer(w);
    out.write_record(["rank", "group", "phase", "seconds"])?;
    for t in timings {
        out.write_record([
            t.rank.to_string(),
            t.group.to_string(),
            t.phase.name().to_string(),
            t.seconds.to_string(),
        ])?;
    }
    out.flush()?;
    Ok(())
}

pub fn read_timings_csv<R: std::io::Read>(r: R) -> Result<Vec<Timing>> {
    csv::Reader::from_reader(r)
        .deserialize()
        .collect::<std::result::Result<Vec<Timing>, _>>()
        .map_err(Into::into)
}

/// Clustering time of a run: the slowest rank's sum over every phase except
/// data distribution.
pub fn clustering_seconds(timings: &[Timing]) -> f64 {
    let mut per_rank: std::collections::BTreeMap<usize, f64> = Default::default();
    for t in timings.iter().filter(|t| t.phase != Phase::Distribute) {
        *per_rank.entry(t.rank).or_default() += t.seconds;
    }
    per_rank.values().copied().fold(0.0, f64::max)
}

/// Final result at the global root.
#[derive(Debug, Clone, PartialEq)]
pub struct ParallelResult {
    pub modes: [ParallelMode; 3],
    pub timings: Vec<Timing>,
}

impl ParallelResult {
    pub fn clusters(&self) -> Result<[ClusterSet; 3]> {
        Ok([
            self.modes[0].report.cluster()?,
            self.modes[1].report.cluster()?,
            self.modes[2].report.cluster()?,
        ])
    }

    pub fn reports(&self) -> [&ModeReport; 3] {
        [&self.modes[0].report, &self.modes[1].report, &self.modes[2].report]
    }
}

/// What each rank returns from [`parallel_msc`].
#[derive(Debug, Clone)]
pub struct RankOutcome {
    pub rank: usize,
    pub group: usize,
    pub range: BlockRange,
    pub peak_slices: usize,
    pub timings: Vec<Timing>,
    /// The group root's full `d`; `None` elsewhere.
    pub group_d: Option<MarginalVector>,
    /// Only on the global root.
    pub result: Option<ParallelResult>,
}

struct Clock {
    rank: usize,
    group: usize,
    timings: Vec<Timing>,
}

impl Clock {
    fn time<T>(&mut self, phase: Phase, f: impl FnOnce() -> Result<T>) -> Result<T> {
        let start = Instant::now();
        let out = f();
        self.timings.push(Timing {
            rank: self.rank,
            group: self.group,
            phase,
            seconds: start.elapsed().as_secs_f64(),
        });
        out
    }
}

/// Runs the whole parallel pipeline on this rank.
pub fn parallel_msc<S: SliceSource + ?Sized>(
    world: &mut dyn Communicator,
    source: &mut S,
    config: &MscConfig,
) -> Result<RankOutcome> {
    let rank = world.rank();
    let mut assignment = split_groups(world)?;
    let mut clock = Clock {
        rank,
        group: assignment.group,
        timings: Vec::new(),
    };

    let mut block = clock.time(Phase::Distribute, || {
        let b = distribute(source, &assignment)?;
        world.barrier()?;
        Ok(b)
    })?;
    clock.time(Phase::Eigen, || local_eigen(&mut block, config, rank))?;
    let v = clock.time(Phase::Assemble, || assemble_v(&block, assignment.group_comm.as_mut()))?;
    let local = clock.time(Phase::Similarity, || Ok(local_similarity(&block, &v)))?;
    drop(v);

    let eps = config.eps_for(block.m);
    let gathered = clock.time(Phase::Gather, || gather_marginals(&local, &mut assignment))?;
    let selected = clock.time(Phase::Select, || {
        let sel = gathered.map(|d| select_at_root(d, assignment.mode, eps)).transpose()?;
        let cohesion = cluster_cohesion(&local, sel.as_ref().map(|s| &s.selection.cluster), &mut assignment)?;
        Ok(sel.zip(cohesion))
    })?;
    let modes = clock.time(Phase::Gather, || {
        gather_result(world, selected.as_ref().map(|(s, c)| (s, *c)))
    })?;

    // timing rows travel to the global root as (phase code, seconds) pairs
    let packed: Vec<f64> = clock
        .timings
        .iter()
        .flat_map(|t| [t.phase.code() as f64, t.seconds])
        .collect();
    let gathered = world.gather_varcount(&packed, GLOBAL_ROOT)?;
    let result = match (modes, gathered) {
        (Some(modes), Some(pieces)) => {
            let mut timings = Vec::new();
            for (r, piece) in pieces.iter().enumerate() {
                let group = group_of(r, world.size())?;
                for pair in piece.chunks_exact(2) {
                    let code = to_indices(&pair[..1])?[0];
                    let phase = *Phase::ALL
                        .get(code)
                        .ok_or_else(|| MscError::Comm(format!("unknown phase code {code}")))?;
                    timings.push(Timing {
                        rank: r,
                        group,
                        phase,
                        seconds: pair[1],
                    });
                }
            }
            Some(ParallelResult { modes, timings })
        }
        _ => None,
    };

    Ok(RankOutcome {
        rank,
        group: assignment.group,
        range: block.range,
        peak_slices: block.peak_slices,
        timings: clock.timings,
        group_d: selected.map(|(s, _)| s.d),
        result,
    })
}

impl ParallelResult {
    /// Result JSON as written by the global root.
    pub fn to_report(&self, timings_file: Option<String>) -> MscReport {
        let [a, b, c] = self.reports();
        MscReport {
            j1: a.clone(),
            j2: b.clone(),
            j3: c.clone(),
            timings_file,
        }
    }
}
