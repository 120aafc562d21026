//! Cluster-balanced sampling from a fitted hierarchy.
//!
//! A counting pass gives the population of every leaf. The target size is
//! then split top-down, evenly across the children of every node, with
//! small clusters capped at their population and the surplus handed to
//! their siblings. Finally each leaf keeps the `quota` windows closest to
//! its centroid, using a bounded per-leaf collection that evicts the
//! farthest member whenever a closer window arrives.

use std::cmp::Ordering;
use std::collections::BTreeSet;
use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use crate::binio::ByteReader;
use crate::error::{invalid, Error, ParseError, Result};
use crate::hkmeans::{normalize_into, ClusterHierarchy};
use crate::manifest::{ManifestEntry, Source};
use crate::model::{WindowId, WindowIndex};
use crate::shard::EmbeddingShard;

/// Target size used for the production corpus.
pub const PRODUCTION_TARGET_N: u64 = 323_532;

/// Splits `quota` across children with the given populations: equal shares,
/// children below their share capped at their population, surplus spread
/// over the rest until nothing changes. Leftover units of an uneven split go
/// to the lowest-index uncapped children.
pub fn water_fill(quota: u64, populations: &[u64]) -> Vec<u64> {
    let total: u64 = populations.iter().sum();
    let mut remaining = quota.min(total);
    let mut out = vec![0u64; populations.len()];
    let mut open: Vec<usize> = (0..populations.len()).filter(|&i| populations[i] > 0).collect();
    loop {
        if open.is_empty() || remaining == 0 {
            break;
        }
        let share = remaining / open.len() as u64;
        let (capped, rest): (Vec<usize>, Vec<usize>) =
            open.iter().partition(|&&i| populations[i] <= share);
        if capped.is_empty() {
            let extra = (remaining % open.len() as u64) as usize;
            for (j, &i) in open.iter().enumerate() {
                out[i] = share + u64::from(j < extra);
            }
            break;
        }
        for &i in &capped {
            out[i] = populations[i];
            remaining -= populations[i];
        }
        open = rest;
    }
    out
}

/// Target counts for every node of the hierarchy. `levels[0]` holds the leaf
/// quotas; the last level's quotas sum to the overall target.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct QuotaTree {
    pub target: u64,
    pub levels: Vec<Vec<u64>>,
}

impl QuotaTree {
    pub fn leaf_quotas(&self) -> &[u64] {
        &self.levels[0]
    }

    pub fn total(&self) -> u64 {
        self.levels[0].iter().sum()
    }
}

pub fn allocate_quotas(
    hierarchy: &ClusterHierarchy,
    leaf_populations: &[u64],
    n: u64,
) -> Result<QuotaTree> {
    if n == 0 {
        return Err(invalid("target size must be positive"));
    }
    if leaf_populations.len() != hierarchy.leaf_count() {
        return Err(invalid(format!(
            "{} leaf populations for {} leaves",
            leaf_populations.len(),
            hierarchy.leaf_count()
        )));
    }
    let pops = hierarchy.level_populations(leaf_populations);
    let depth = hierarchy.depth();
    let mut levels = vec![Vec::new(); depth];
    levels[depth - 1] = water_fill(n, &pops[depth - 1]);
    for l in (1..depth).rev() {
        // children of node p at level l+1 live at level l, in index order
        let parent_of = &hierarchy.parents()[l - 1];
        let mut quotas = vec![0u64; parent_of.len()];
        let mut children: Vec<Vec<usize>> = vec![Vec::new(); pops[l].len()];
        for (c, &p) in parent_of.iter().enumerate() {
            children[p as usize].push(c);
        }
        for (p, kids) in children.iter().enumerate() {
            let kid_pops: Vec<u64> = kids.iter().map(|&c| pops[l - 1][c]).collect();
            for (&c, q) in kids.iter().zip(water_fill(levels[l][p], &kid_pops)) {
                quotas[c] = q;
            }
        }
        levels[l - 1] = quotas;
    }
    Ok(QuotaTree { target: n, levels })
}

/// A window competing for a leaf slot. Orders by distance, then window id,
/// so the smallest key is the best candidate.
#[derive(Debug, Clone, Copy)]
pub struct Candidate {
    pub distance: f64,
    pub window_id: WindowId,
}

impl PartialEq for Candidate {
    fn eq(&self, other: &Self) -> bool {
        self.cmp(other) == Ordering::Equal
    }
}

impl Eq for Candidate {}

impl PartialOrd for Candidate {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}

impl Ord for Candidate {
    fn cmp(&self, other: &Self) -> Ordering {
        self.distance
            .total_cmp(&other.distance)
            .then(self.window_id.cmp(&other.window_id))
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
struct LeafSlots {
    capacity: u64,
    kept: BTreeSet<Candidate>,
}

impl LeafSlots {
    fn offer(&mut self, c: Candidate) {
        if self.capacity == 0 {
            return;
        }
        if (self.kept.len() as u64) < self.capacity {
            self.kept.insert(c);
            return;
        }
        let worst = *self.kept.last().expect("non-empty at capacity");
        if c < worst && self.kept.insert(c) {
            self.kept.pop_last();
        }
    }
}

/// Per-leaf bounded collections of the closest windows seen so far.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SelectionState {
    leaves: Vec<LeafSlots>,
}

impl SelectionState {
    pub fn new(quotas: &QuotaTree) -> Self {
        Self::with_capacities(quotas.leaf_quotas())
    }

    pub fn with_capacities(capacities: &[u64]) -> Self {
        SelectionState {
            leaves: capacities
                .iter()
                .map(|&capacity| LeafSlots {
                    capacity,
                    kept: BTreeSet::new(),
                })
                .collect(),
        }
    }

    pub fn capacities(&self) -> Vec<u64> {
        self.leaves.iter().map(|l| l.capacity).collect()
    }

    pub fn leaf_count(&self) -> usize {
        self.leaves.len()
    }

    /// Offers one window to a leaf. A full leaf swaps out its farthest
    /// member when the newcomer ranks closer.
    pub fn offer(&mut self, leaf: u32, candidate: Candidate) {
        self.leaves[leaf as usize].offer(candidate);
    }

    /// Candidates kept by `leaf`, best first.
    pub fn kept(&self, leaf: u32) -> impl Iterator<Item = &Candidate> + '_ {
        self.leaves[leaf as usize].kept.iter()
    }

    /// Worst kept candidate of a leaf: the next eviction victim.
    pub fn worst(&self, leaf: u32) -> Option<&Candidate> {
        self.leaves[leaf as usize].kept.last()
    }

    pub fn len(&self) -> usize {
        self.leaves.iter().map(|l| l.kept.len()).sum()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// All selected windows with their leaf, ordered by window id.
    pub fn selected(&self) -> Vec<(WindowId, u32)> {
        let mut out: Vec<(WindowId, u32)> = self
            .leaves
            .iter()
            .enumerate()
            .flat_map(|(leaf, slots)| slots.kept.iter().map(move |c| (c.window_id, leaf as u32)))
            .collect();
        out.sort_unstable();
        out
    }

    pub fn selected_ids(&self) -> BTreeSet<WindowId> {
        self.selected().into_iter().map(|(w, _)| w).collect()
    }

    /// Routes every record of a shard to its leaf. Rejects the whole shard
    /// if its width does not match the hierarchy.
    pub fn absorb_shard(&mut self, shard: &EmbeddingShard, hierarchy: &ClusterHierarchy) -> Result<()> {
        if shard.dim() != hierarchy.dim() {
            return Err(Error::DimMismatch {
                expected: hierarchy.dim(),
                actual: shard.dim(),
            });
        }
        let mut unit = Vec::with_capacity(shard.dim());
        for (id, v) in shard.records() {
            normalize_into(v, &mut unit)?;
            let (leaf, distance) = hierarchy.assign_normalized(&unit);
            self.offer(
                leaf,
                Candidate {
                    distance,
                    window_id: id,
                },
            );
        }
        Ok(())
    }
}

/// Per-leaf union truncated to capacity. Associative and commutative.
pub fn merge(a: SelectionState, b: SelectionState) -> Result<SelectionState> {
    if a.capacities() != b.capacities() {
        return Err(Error::QuotaMismatch);
    }
    let (mut big, small) = if a.len() >= b.len() { (a, b) } else { (b, a) };
    for (mine, theirs) in big.leaves.iter_mut().zip(small.leaves) {
        for c in theirs.kept {
            mine.offer(c);
        }
    }
    Ok(big)
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct SelectStats {
    pub shards: u64,
    pub records: u64,
    pub rejected_shards: u64,
}

/// Sequential streaming selection over a sequence of shards. Shards that
/// fail to load or have the wrong width are tallied and skipped.
pub fn stream_select<I>(
    shards: I,
    hierarchy: &ClusterHierarchy,
    quotas: &QuotaTree,
) -> (SelectionState, SelectStats)
where
    I: IntoIterator<Item = Result<EmbeddingShard>>,
{
    let mut state = SelectionState::new(quotas);
    let mut stats = SelectStats::default();
    for shard in shards {
        stats.shards += 1;
        match shard.and_then(|s| state.absorb_shard(&s, hierarchy).map(|_| s.len())) {
            Ok(n) => stats.records += n as u64,
            Err(_) => stats.rejected_shards += 1,
        }
    }
    (state, stats)
}

/// Leaf populations of one shard (the counting pass).
pub fn count_leaves(shard: &EmbeddingShard, hierarchy: &ClusterHierarchy) -> Result<Vec<u64>> {
    if shard.dim() != hierarchy.dim() {
        return Err(Error::DimMismatch {
            expected: hierarchy.dim(),
            actual: shard.dim(),
        });
    }
    let mut counts = vec![0u64; hierarchy.leaf_count()];
    let mut unit = Vec::with_capacity(shard.dim());
    for (_, v) in shard.records() {
        normalize_into(v, &mut unit)?;
        counts[hierarchy.assign_normalized(&unit).0 as usize] += 1;
    }
    Ok(counts)
}

/// Manifest entries for the selection, tagged `hkmeans` with their cluster path.
pub fn emit(
    state: &SelectionState,
    hierarchy: &ClusterHierarchy,
    index: &WindowIndex,
) -> Result<Vec<ManifestEntry>> {
    state
        .selected()
        .into_iter()
        .map(|(id, leaf)| {
            let window = index
                .get(id)
                .ok_or_else(|| invalid(format!("window {id} not in deployment config")))?;
            let mut e = ManifestEntry::new(window, Source::Hkmeans);
            e.cluster_path = Some(hierarchy.path_of_leaf(leaf));
            Ok(e)
        })
        .collect()
}

pub const CHECKPOINT_MAGIC: &[u8; 8] = b"PAMSEL01";
pub const CHECKPOINT_VERSION: u32 = 1;

/// Resumable selection progress: the state plus the names of the shards
/// already folded into it.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Checkpoint {
    pub state: SelectionState,
    pub processed: Vec<String>,
}

/// Layout (little-endian): magic `PAMSEL01`, `u32` version, `u32` leaf count;
/// per leaf `u64` capacity, `u64` kept, kept x (`u64` window id, `f64`
/// distance); then `u32` processed count and per name `u32` byte length
/// plus UTF-8 bytes.
pub fn encode_checkpoint<W: Write>(cp: &Checkpoint, mut out: W) -> Result<()> {
    out.write_all(CHECKPOINT_MAGIC)?;
    out.write_all(&CHECKPOINT_VERSION.to_le_bytes())?;
    out.write_all(&(cp.state.leaves.len() as u32).to_le_bytes())?;
    for leaf in &cp.state.leaves {
        out.write_all(&leaf.capacity.to_le_bytes())?;
        out.write_all(&(leaf.kept.len() as u64).to_le_bytes())?;
        for c in &leaf.kept {
            out.write_all(&c.window_id.0.to_le_bytes())?;
            out.write_all(&c.distance.to_bits().to_le_bytes())?;
        }
    }
    out.write_all(&(cp.processed.len() as u32).to_le_bytes())?;
    for name in &cp.processed {
        out.write_all(&(name.len() as u32).to_le_bytes())?;
        out.write_all(name.as_bytes())?;
    }
    out.flush()?;
    Ok(())
}

pub fn decode_checkpoint<R: Read>(input: R) -> Result<Checkpoint> {
    let mut r = ByteReader::new(input);
    r.magic(CHECKPOINT_MAGIC, "PAMSEL01")?;
    let version_offset = r.offset;
    let version = r.u32("version")?;
    if version != CHECKPOINT_VERSION {
        return Err(ParseError::BadVersion {
            offset: version_offset,
            version,
        }
        .into());
    }
    let n_leaves = r.u32("leaf count")? as usize;
    let mut leaves = Vec::with_capacity(n_leaves.min(1 << 16));
    for _ in 0..n_leaves {
        let capacity = r.u64("capacity")?;
        let len_offset = r.offset;
        let len = r.u64("kept count")?;
        if len > capacity {
            return Err(ParseError::InvalidField {
                offset: len_offset,
                message: format!("{len} kept exceeds capacity {capacity}"),
            }
            .into());
        }
        let mut kept = BTreeSet::new();
        for _ in 0..len {
            let id_offset = r.offset;
            let id = r.u64("window id")?;
            let distance = f64::from_bits(r.u64("distance")?);
            if !distance.is_finite() {
                return Err(ParseError::NonFinite { offset: id_offset + 8 }.into());
            }
            if !kept.insert(Candidate {
                distance,
                window_id: WindowId(id),
            }) {
                return Err(ParseError::DuplicateId { offset: id_offset, id }.into());
            }
        }
        leaves.push(LeafSlots { capacity, kept });
    }
    let n_names = r.u32("processed count")? as usize;
    let mut processed = Vec::with_capacity(n_names.min(1 << 16));
    for _ in 0..n_names {
        let len = r.u32("name length")? as usize;
        let offset = r.offset;
        let mut buf = vec![0u8; len];
        r.fill(&mut buf, "name")?;
        let name = String::from_utf8(buf).map_err(|_| ParseError::InvalidField {
            offset,
            message: "shard name is not UTF-8".into(),
        })?;
        processed.push(name);
    }
    r.finish()?;
    Ok(Checkpoint {
        state: SelectionState { leaves },
        processed,
    })
}

pub fn write_checkpoint(cp: &Checkpoint, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    let tmp = path.with_extension("tmp");
    let file = File::create(&tmp).map_err(|e| Error::io(&tmp, e))?;
    encode_checkpoint(cp, BufWriter::new(file))?;
    std::fs::rename(&tmp, path).map_err(|e| Error::io(path, e))
}

pub fn read_checkpoint(path: impl AsRef<Path>) -> Result<Checkpoint> {
    let path = path.as_ref();
    let file = File::open(path).map_err(|e| Error::io(path, e))?;
    decode_checkpoint(BufReader::new(file))
}
