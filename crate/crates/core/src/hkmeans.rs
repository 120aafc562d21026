//! Online hierarchical k-means.
//!
//! The finest level is fit on the embedding stream with mini-batch k-means
//! (per-centroid learning rate `1/n_c`), optionally alternated with
//! cluster-balanced resampling so rare modes keep their own centroids.
//! Coarser levels cluster the centroids of the level below with exact
//! Lloyd iterations. Embeddings are L2-normalized before fitting and
//! assignment, so Euclidean distance orders neighbors like cosine
//! similarity.

use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::ops::ControlFlow;
use std::path::{Path, PathBuf};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

use crate::binio::ByteReader;
use crate::error::{invalid, Error, ParseError, Result};
use crate::model::ClusterPath;
use crate::shard::read_shard_with_dim;

/// Cluster counts per level for the production corpus, finest first.
pub const PRODUCTION_LEVEL_KS: [usize; 4] = [6000, 400, 40, 10];

pub fn normalize(v: &[f32]) -> Result<Vec<f32>> {
    let mut out = Vec::with_capacity(v.len());
    normalize_into(v, &mut out)?;
    Ok(out)
}

pub(crate) fn normalize_into(v: &[f32], out: &mut Vec<f32>) -> Result<()> {
    let norm = v.iter().map(|&x| (x as f64) * (x as f64)).sum::<f64>().sqrt();
    if !norm.is_finite() {
        return Err(invalid("cannot normalize a non-finite vector"));
    }
    if norm == 0.0 {
        return Err(invalid("cannot normalize the zero vector"));
    }
    out.clear();
    out.extend(v.iter().map(|&x| (x as f64 / norm) as f32));
    Ok(())
}

pub(crate) fn sq_dist(a: &[f32], b: &[f32]) -> f64 {
    a.iter()
        .zip(b)
        .map(|(&x, &y)| {
            let d = x as f64 - y as f64;
            d * d
        })
        .sum()
}

fn sq_dist_f64(a: &[f32], b: &[f64]) -> f64 {
    a.iter()
        .zip(b)
        .map(|(&x, &y)| {
            let d = x as f64 - y;
            d * d
        })
        .sum()
}

/// Nearest row of `centroids` (row-major, width `dim`); ties go to the lower index.
pub(crate) fn nearest(point: &[f32], centroids: &[f32], dim: usize) -> (usize, f64) {
    let mut best = (0, f64::INFINITY);
    for (c, row) in centroids.chunks_exact(dim).enumerate() {
        let d = sq_dist(point, row);
        if d < best.1 {
            best = (c, d);
        }
    }
    best
}

fn nearest_f64(point: &[f32], centroids: &[f64], dim: usize) -> (usize, f64) {
    let mut best = (0, f64::INFINITY);
    for (c, row) in centroids.chunks_exact(dim).enumerate() {
        let d = sq_dist_f64(point, row);
        if d < best.1 {
            best = (c, d);
        }
    }
    best
}

/// Derives an independent seed for a named sub-step.
pub(crate) fn derive_seed(seed: u64, tag: u64) -> u64 {
    // splitmix64 finalizer
    let mut z = seed ^ tag.wrapping_mul(0x9e37_79b9_7f4a_7c15);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

/// Return value of a scan visitor: keep going or stop early.
pub type Visit = Result<ControlFlow<()>>;

/// A source of vectors that can be scanned repeatedly in a fixed order.
pub trait VectorSource: Sync {
    fn dim(&self) -> usize;

    /// Calls `visit` on every vector until it breaks or fails.
    fn scan(&self, visit: &mut dyn FnMut(&[f32]) -> Visit) -> Result<()>;
}

/// Row-major vectors held in memory.
#[derive(Debug, Clone, PartialEq)]
pub struct Points {
    dim: usize,
    data: Vec<f32>,
}

impl Points {
    pub fn new(dim: usize, data: Vec<f32>) -> Result<Self> {
        if dim == 0 || data.len() % dim != 0 {
            return Err(invalid(format!(
                "{} values do not form rows of width {dim}",
                data.len()
            )));
        }
        if data.iter().any(|x| !x.is_finite()) {
            return Err(invalid("points must be finite"));
        }
        Ok(Points { dim, data })
    }

    pub fn from_rows<R: AsRef<[f32]>>(rows: &[R]) -> Result<Self> {
        let dim = rows.first().map(|r| r.as_ref().len()).unwrap_or(1);
        let mut data = Vec::with_capacity(rows.len() * dim);
        for r in rows {
            if r.as_ref().len() != dim {
                return Err(Error::DimMismatch {
                    expected: dim,
                    actual: r.as_ref().len(),
                });
            }
            data.extend_from_slice(r.as_ref());
        }
        Points::new(dim, data)
    }

    pub fn len(&self) -> usize {
        self.data.len() / self.dim
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    pub fn row(&self, i: usize) -> &[f32] {
        &self.data[i * self.dim..(i + 1) * self.dim]
    }

    pub fn rows(&self) -> impl Iterator<Item = &[f32]> + '_ {
        self.data.chunks_exact(self.dim)
    }

    pub fn as_slice(&self) -> &[f32] {
        &self.data
    }

    /// Each row scaled to unit length.
    pub fn normalized(&self) -> Result<Points> {
        let mut data = Vec::with_capacity(self.data.len());
        let mut buf = Vec::with_capacity(self.dim);
        for r in self.rows() {
            normalize_into(r, &mut buf)?;
            data.extend_from_slice(&buf);
        }
        Ok(Points {
            dim: self.dim,
            data,
        })
    }
}

impl VectorSource for Points {
    fn dim(&self) -> usize {
        self.dim
    }

    fn scan(&self, visit: &mut dyn FnMut(&[f32]) -> Visit) -> Result<()> {
        for r in self.rows() {
            if visit(r)?.is_break() {
                break;
            }
        }
        Ok(())
    }
}

/// Shard files read one at a time, in the given order.
#[derive(Debug, Clone)]
pub struct ShardFiles {
    dim: usize,
    paths: Vec<PathBuf>,
}

impl ShardFiles {
    pub fn new(dim: usize, paths: Vec<PathBuf>) -> Self {
        ShardFiles { dim, paths }
    }
}

impl VectorSource for ShardFiles {
    fn dim(&self) -> usize {
        self.dim
    }

    fn scan(&self, visit: &mut dyn FnMut(&[f32]) -> Visit) -> Result<()> {
        for p in &self.paths {
            let shard = read_shard_with_dim(p, Some(self.dim))?;
            for (_, v) in shard.records() {
                if visit(v)?.is_break() {
                    return Ok(());
                }
            }
        }
        Ok(())
    }
}

/// Wraps a source so every vector is L2-normalized on the fly.
pub struct Normalized<'a, S: ?Sized>(pub &'a S);

impl<S: VectorSource + ?Sized> VectorSource for Normalized<'_, S> {
    fn dim(&self) -> usize {
        self.0.dim()
    }

    fn scan(&self, visit: &mut dyn FnMut(&[f32]) -> Visit) -> Result<()> {
        let mut buf = Vec::with_capacity(self.0.dim());
        self.0.scan(&mut |v| {
            normalize_into(v, &mut buf)?;
            visit(&buf)
        })
    }
}

/// Repeats every vector of the inner source according to a multiplicity table.
struct Reweighted<'a, S: ?Sized> {
    inner: &'a S,
    multiplicity: &'a [u32],
}

impl<S: VectorSource + ?Sized> VectorSource for Reweighted<'_, S> {
    fn dim(&self) -> usize {
        self.inner.dim()
    }

    fn scan(&self, visit: &mut dyn FnMut(&[f32]) -> Visit) -> Result<()> {
        let mut i = 0;
        self.inner.scan(&mut |v| {
            let m = self.multiplicity.get(i).copied().unwrap_or(0);
            i += 1;
            for _ in 0..m {
                if visit(v)?.is_break() {
                    return Ok(ControlFlow::Break(()));
                }
            }
            Ok(ControlFlow::Continue(()))
        })
    }
}

/// Centroids of one level, finest level = 1.
#[derive(Debug, Clone, PartialEq)]
pub struct CentroidSet {
    pub level: u32,
    dim: usize,
    centroids: Vec<f32>,
    counts: Vec<u64>,
}

impl CentroidSet {
    pub fn new(level: u32, dim: usize, centroids: Vec<f32>, counts: Vec<u64>) -> Result<Self> {
        if dim == 0 || centroids.is_empty() || centroids.len() % dim != 0 {
            return Err(invalid("centroid matrix must be non-empty with whole rows"));
        }
        if centroids.len() / dim != counts.len() {
            return Err(invalid("one update count per centroid"));
        }
        if centroids.iter().any(|x| !x.is_finite()) {
            return Err(invalid("centroids must be finite"));
        }
        Ok(CentroidSet {
            level,
            dim,
            centroids,
            counts,
        })
    }

    pub fn k(&self) -> usize {
        self.counts.len()
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn centroid(&self, c: usize) -> &[f32] {
        &self.centroids[c * self.dim..(c + 1) * self.dim]
    }

    pub fn centroids(&self) -> &[f32] {
        &self.centroids
    }

    /// Number of points absorbed by each centroid during fitting.
    pub fn counts(&self) -> &[u64] {
        &self.counts
    }

    /// Nearest centroid and Euclidean distance; ties go to the lower index.
    pub fn assign(&self, point: &[f32]) -> (usize, f64) {
        let (c, d2) = nearest(point, &self.centroids, self.dim);
        (c, d2.sqrt())
    }

    pub fn as_points(&self) -> Points {
        Points {
            dim: self.dim,
            data: self.centroids.clone(),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct FitConfig {
    /// Cluster counts per level, finest first, strictly decreasing.
    pub level_ks: Vec<usize>,
    pub batch_size: usize,
    pub passes: usize,
    pub resample_rounds: usize,
    pub seed: u64,
}

impl FitConfig {
    pub const DEFAULT_BATCH: usize = 4096;
    pub const DEFAULT_PASSES: usize = 2;
    pub const DEFAULT_RESAMPLE_ROUNDS: usize = 3;

    pub fn new(level_ks: Vec<usize>, seed: u64) -> Self {
        FitConfig {
            level_ks,
            batch_size: Self::DEFAULT_BATCH,
            passes: Self::DEFAULT_PASSES,
            resample_rounds: Self::DEFAULT_RESAMPLE_ROUNDS,
            seed,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.level_ks.is_empty() || self.level_ks.contains(&0) {
            return Err(invalid("level_ks must be non-empty and positive"));
        }
        if self.level_ks.windows(2).any(|w| w[0] <= w[1]) {
            return Err(invalid(format!(
                "level_ks {:?} must be strictly decreasing",
                self.level_ks
            )));
        }
        if self.batch_size == 0 || self.passes == 0 {
            return Err(invalid("batch_size and passes must be at least 1"));
        }
        Ok(())
    }
}

/// Hook invoked after every mini-batch update with the current centroids.
pub type BatchObserver<'a> = &'a mut dyn FnMut(&[f64]);

/// k-means++ seeding on an in-memory sample. Returns `None` when the sample
/// holds fewer than `k` distinct points.
pub(crate) fn kmeans_pp(sample: &[f32], dim: usize, k: usize, rng: &mut ChaCha8Rng) -> Option<Vec<f32>> {
    let n = sample.len() / dim;
    if n == 0 {
        return None;
    }
    let row = |i: usize| &sample[i * dim..(i + 1) * dim];
    let mut chosen = Vec::with_capacity(k * dim);
    let first = rng.random_range(0..n);
    chosen.extend_from_slice(row(first));
    let mut d2: Vec<f64> = (0..n).map(|i| sq_dist(row(i), row(first))).collect();
    for _ in 1..k {
        let total: f64 = d2.iter().sum();
        if total <= 0.0 {
            return None;
        }
        let mut target = rng.random::<f64>() * total;
        let mut pick = None;
        for (i, &d) in d2.iter().enumerate() {
            if d <= 0.0 {
                continue;
            }
            if target < d {
                pick = Some(i);
                break;
            }
            target -= d;
        }
        // rounding can leave target just past the last positive weight
        let pick = pick.or_else(|| d2.iter().rposition(|&d| d > 0.0))?;
        let c = row(pick).to_vec();
        for (i, d) in d2.iter_mut().enumerate() {
            *d = d.min(sq_dist(row(i), &c));
        }
        chosen.extend_from_slice(&c);
    }
    Some(chosen)
}

fn count_distinct_up_to(sample: &[f32], dim: usize, limit: usize) -> usize {
    let mut seen: Vec<&[f32]> = Vec::new();
    for r in sample.chunks_exact(dim) {
        if !seen.iter().any(|s| *s == r) {
            seen.push(r);
            if seen.len() >= limit {
                break;
            }
        }
    }
    seen.len()
}

/// Buffers a prefix of `max(10k, batch)` vectors, extending it until it holds
/// `k` distinct vectors, and seeds with k-means++ on the buffer.
fn init_from_prefix(
    source: &dyn VectorSource,
    k: usize,
    batch: usize,
    rng: &mut ChaCha8Rng,
) -> Result<Vec<f32>> {
    let dim = source.dim();
    let want = (10 * k).max(batch);
    let mut buffer: Vec<f32> = Vec::with_capacity(want * dim);
    let mut next_check = want;
    source.scan(&mut |v| {
        buffer.extend_from_slice(v);
        let n = buffer.len() / dim;
        if n == next_check {
            if count_distinct_up_to(&buffer, dim, k) >= k {
                return Ok(ControlFlow::Break(()));
            }
            next_check += want;
        }
        Ok(ControlFlow::Continue(()))
    })?;
    let n = buffer.len() / dim;
    if n < k {
        return Err(Error::DegenerateFit(format!("{n} points for k = {k}")));
    }
    kmeans_pp(&buffer, dim, k, rng)
        .ok_or_else(|| Error::DegenerateFit(format!("fewer than {k} distinct points")))
}

/// Mini-batch k-means from given initial centroids.
///
/// Each batch is assigned against the centroids frozen at the start of the
/// batch (in parallel), then absorbed serially in stream order with
/// `c <- c + (x - c) / n_c`.
pub fn minibatch_from(
    source: &dyn VectorSource,
    initial: Vec<f32>,
    batch_size: usize,
    passes: usize,
    mut observer: Option<BatchObserver<'_>>,
) -> Result<(Vec<f64>, Vec<u64>)> {
    let dim = source.dim();
    let k = initial.len() / dim;
    let mut centroids: Vec<f64> = initial.iter().map(|&x| x as f64).collect();
    let mut counts = vec![0u64; k];
    let mut batch: Vec<f32> = Vec::with_capacity(batch_size * dim);
    let mut labels: Vec<usize> = Vec::with_capacity(batch_size);

    let mut absorb = |batch: &mut Vec<f32>, centroids: &mut Vec<f64>, counts: &mut Vec<u64>| {
        if batch.is_empty() {
            return;
        }
        labels.clear();
        let frozen: &[f64] = centroids;
        batch
            .par_chunks_exact(dim)
            .map(|x| nearest_f64(x, frozen, dim).0)
            .collect_into_vec(&mut labels);
        for (x, &c) in batch.chunks_exact(dim).zip(&labels) {
            counts[c] += 1;
            let eta = 1.0 / counts[c] as f64;
            let row = &mut centroids[c * dim..(c + 1) * dim];
            for (m, &xi) in row.iter_mut().zip(x) {
                *m += eta * (xi as f64 - *m);
            }
        }
        batch.clear();
        if let Some(obs) = observer.as_mut() {
            obs(centroids);
        }
    };

    for _ in 0..passes {
        source.scan(&mut |v| {
            if v.len() != dim {
                return Err(Error::DimMismatch {
                    expected: dim,
                    actual: v.len(),
                });
            }
            batch.extend_from_slice(v);
            if batch.len() == batch_size * dim {
                absorb(&mut batch, &mut centroids, &mut counts);
            }
            Ok(ControlFlow::Continue(()))
        })?;
        absorb(&mut batch, &mut centroids, &mut counts);
    }
    Ok((centroids, counts))
}

fn to_centroid_set(level: u32, dim: usize, centroids: &[f64], counts: Vec<u64>) -> Result<CentroidSet> {
    CentroidSet::new(level, dim, centroids.iter().map(|&x| x as f32).collect(), counts)
}

/// Mini-batch k-means with k-means++ initialization over a buffered prefix.
/// Vectors are used as given.
pub fn minibatch_fit(source: &dyn VectorSource, k: usize, config: &FitConfig) -> Result<CentroidSet> {
    minibatch_fit_seeded(source, k, config.batch_size, config.passes, config.seed)
}

fn minibatch_fit_seeded(
    source: &dyn VectorSource,
    k: usize,
    batch_size: usize,
    passes: usize,
    seed: u64,
) -> Result<CentroidSet> {
    if k == 0 || batch_size == 0 || passes == 0 {
        return Err(invalid("k, batch_size and passes must be positive"));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let init = init_from_prefix(source, k, batch_size, &mut rng)?;
    let (centroids, counts) = minibatch_from(source, init, batch_size, passes, None)?;
    to_centroid_set(1, source.dim(), &centroids, counts)
}

/// Labels every vector of the source with its nearest centroid.
pub fn assign_all(source: &dyn VectorSource, set: &CentroidSet) -> Result<Vec<u32>> {
    const CHUNK: usize = 4096;
    let dim = set.dim();
    let mut labels = Vec::new();
    let mut pending: Vec<f32> = Vec::with_capacity(CHUNK * dim);
    let flush = |pending: &mut Vec<f32>, labels: &mut Vec<u32>| {
        let part: Vec<u32> = pending
            .par_chunks_exact(dim)
            .map(|x| set.assign(x).0 as u32)
            .collect();
        labels.extend(part);
        pending.clear();
    };
    source.scan(&mut |v| {
        pending.extend_from_slice(v);
        if pending.len() == CHUNK * dim {
            flush(&mut pending, &mut labels);
        }
        Ok(ControlFlow::Continue(()))
    })?;
    flush(&mut pending, &mut labels);
    Ok(labels)
}

/// Multiplicity of each point after drawing `quota` members per cluster:
/// uniformly without replacement when the cluster is large enough, with
/// replacement otherwise.
pub fn balanced_multiplicity(labels: &[u32], k: usize, quota: usize, rng: &mut ChaCha8Rng) -> Vec<u32> {
    let mut members: Vec<Vec<usize>> = vec![Vec::new(); k];
    for (i, &c) in labels.iter().enumerate() {
        members[c as usize].push(i);
    }
    let mut mult = vec![0u32; labels.len()];
    for group in &members {
        if group.is_empty() {
            continue;
        }
        if group.len() >= quota {
            for &i in rand::seq::index::sample(rng, group.len(), quota).iter().map(|j| &group[j]) {
                mult[i] += 1;
            }
        } else {
            for _ in 0..quota {
                mult[group[rng.random_range(0..group.len())]] += 1;
            }
        }
    }
    mult
}

/// Mini-batch fit alternated with cluster-balanced resampling. Each round
/// labels the data with the current centroids, draws `ceil(M/k)` points per
/// cluster and refits from scratch on the resampled stream.
pub fn resample_fit(source: &dyn VectorSource, k: usize, config: &FitConfig) -> Result<CentroidSet> {
    let mut current = minibatch_fit_seeded(
        source,
        k,
        config.batch_size,
        config.passes,
        derive_seed(config.seed, 0),
    )?;
    for round in 1..=config.resample_rounds {
        let labels = assign_all(source, &current)?;
        let quota = labels.len().div_ceil(k);
        let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(config.seed, 2 * round as u64 - 1));
        let multiplicity = balanced_multiplicity(&labels, k, quota, &mut rng);
        let resampled = Reweighted {
            inner: source,
            multiplicity: &multiplicity,
        };
        current = minibatch_fit_seeded(
            &resampled,
            k,
            config.batch_size,
            config.passes,
            derive_seed(config.seed, 2 * round as u64),
        )?;
    }
    Ok(current)
}

/// Exact Lloyd iterations from a k-means++ start, best of `restarts` starts
/// by objective (earliest start wins ties). Used for the small upper levels.
/// Returns centroids and the number of points nearest to each.
pub fn lloyd(
    points: &Points,
    k: usize,
    max_iter: usize,
    restarts: usize,
    seed: u64,
) -> Result<(Vec<f32>, Vec<u64>)> {
    let dim = points.dim;
    let n = points.len();
    if n < k || k == 0 {
        return Err(Error::DegenerateFit(format!("{n} points for k = {k}")));
    }
    let mut best: Option<(f64, Vec<f32>)> = None;
    for r in 0..restarts.max(1) {
        let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(seed, r as u64));
        let init = kmeans_pp(points.as_slice(), dim, k, &mut rng)
            .ok_or_else(|| Error::DegenerateFit(format!("fewer than {k} distinct points")))?;
        let centroids = lloyd_from(points, init, max_iter);
        let objective: f64 = points.rows().map(|x| nearest(x, &centroids, dim).1).sum();
        if best.as_ref().is_none_or(|(b, _)| objective < *b) {
            best = Some((objective, centroids));
        }
    }
    let (_, centroids) = best.expect("at least one restart");
    let mut sizes = vec![0u64; k];
    for x in points.rows() {
        sizes[nearest(x, &centroids, dim).0] += 1;
    }
    Ok((centroids, sizes))
}

fn lloyd_from(points: &Points, init: Vec<f32>, max_iter: usize) -> Vec<f32> {
    let dim = points.dim;
    let k = init.len() / dim;
    let mut centroids: Vec<f64> = init.iter().map(|&x| x as f64).collect();
    let mut labels: Vec<usize> = vec![usize::MAX; points.len()];
    for _ in 0..max_iter {
        let next: Vec<usize> = points
            .rows()
            .map(|x| nearest_f64(x, &centroids, dim).0)
            .collect();
        if next == labels {
            break;
        }
        labels = next;
        let mut sums = vec![0.0f64; k * dim];
        let mut sizes = vec![0u64; k];
        for (x, &c) in points.rows().zip(&labels) {
            sizes[c] += 1;
            for (s, &xi) in sums[c * dim..(c + 1) * dim].iter_mut().zip(x) {
                *s += xi as f64;
            }
        }
        for c in 0..k {
            if sizes[c] > 0 {
                for j in 0..dim {
                    centroids[c * dim + j] = sums[c * dim + j] / sizes[c] as f64;
                }
            }
        }
    }
    centroids.iter().map(|&x| x as f32).collect()
}

const LLOYD_MAX_ITER: usize = 200;
const LLOYD_RESTARTS: usize = 8;

/// Per-level centroid sets, finest first, and the parent of every
/// non-top centroid in the next level up.
///
/// The fitted levels target a uniform distribution over the support of the
/// data distribution: sampling evenly across clusters rather than in
/// proportion to their mass.
#[derive(Debug, Clone, PartialEq)]
pub struct ClusterHierarchy {
    levels: Vec<CentroidSet>,
    parents: Vec<Vec<u32>>,
}

impl ClusterHierarchy {
    pub fn new(levels: Vec<CentroidSet>, parents: Vec<Vec<u32>>) -> Result<Self> {
        if levels.is_empty() {
            return Err(invalid("hierarchy needs at least one level"));
        }
        if parents.len() + 1 != levels.len() {
            return Err(invalid("one parent array per non-top level"));
        }
        let dim = levels[0].dim();
        for (l, set) in levels.iter().enumerate() {
            if set.dim() != dim {
                return Err(Error::DimMismatch {
                    expected: dim,
                    actual: set.dim(),
                }
                .at_level(l + 1));
            }
        }
        for (l, p) in parents.iter().enumerate() {
            if p.len() != levels[l].k() {
                return Err(invalid(format!("level {}: parent array length", l + 1)));
            }
            if p.iter().any(|&c| c as usize >= levels[l + 1].k()) {
                return Err(invalid(format!("level {}: parent index out of range", l + 1)));
            }
        }
        Ok(ClusterHierarchy { levels, parents })
    }

    pub fn depth(&self) -> usize {
        self.levels.len()
    }

    pub fn dim(&self) -> usize {
        self.levels[0].dim()
    }

    /// Level `l`, 1-based (1 = leaves).
    pub fn level(&self, l: usize) -> &CentroidSet {
        &self.levels[l - 1]
    }

    pub fn levels(&self) -> &[CentroidSet] {
        &self.levels
    }

    /// Parent in level `l + 1` of cluster `c` at level `l`.
    pub fn parent(&self, l: usize, c: u32) -> u32 {
        self.parents[l - 1][c as usize]
    }

    pub fn parents(&self) -> &[Vec<u32>] {
        &self.parents
    }

    pub fn leaf_count(&self) -> usize {
        self.levels[0].k()
    }

    /// Root-to-leaf path of a leaf cluster.
    pub fn path_of_leaf(&self, leaf: u32) -> ClusterPath {
        let mut path = Vec::with_capacity(self.depth());
        let mut c = leaf;
        path.push(c);
        for l in 1..self.depth() {
            c = self.parent(l, c);
            path.push(c);
        }
        path.reverse();
        ClusterPath(path)
    }

    /// Leaf and distance for a vector already of unit length.
    pub fn assign_normalized(&self, unit: &[f32]) -> (u32, f64) {
        let (c, d) = self.levels[0].assign(unit);
        (c as u32, d)
    }

    /// Aggregates leaf populations up to every level; index 0 is the leaves.
    pub fn level_populations(&self, leaf_populations: &[u64]) -> Vec<Vec<u64>> {
        let mut out = vec![leaf_populations.to_vec()];
        for l in 1..self.depth() {
            let mut up = vec![0u64; self.levels[l].k()];
            for (c, &n) in out[l - 1].iter().enumerate() {
                up[self.parents[l - 1][c] as usize] += n;
            }
            out.push(up);
        }
        out
    }
}

/// Normalizes `vector` and returns its root-to-leaf path and the distance to
/// the leaf centroid.
pub fn assign_path(vector: &[f32], hierarchy: &ClusterHierarchy) -> Result<(ClusterPath, f64)> {
    if vector.len() != hierarchy.dim() {
        return Err(Error::DimMismatch {
            expected: hierarchy.dim(),
            actual: vector.len(),
        });
    }
    let unit = normalize(vector)?;
    let (leaf, d) = hierarchy.assign_normalized(&unit);
    Ok((hierarchy.path_of_leaf(leaf), d))
}

/// Fits the full hierarchy. Input vectors are normalized on the fly.
pub fn build_hierarchy(source: &dyn VectorSource, config: &FitConfig) -> Result<ClusterHierarchy> {
    config.validate()?;
    let unit = Normalized(source);
    let k1 = config.level_ks[0];
    let mut leaves = resample_fit(&unit, k1, config).map_err(|e| e.at_level(1))?;
    // report how much of the (unweighted) data each leaf holds
    let labels = assign_all(&unit, &leaves).map_err(|e| e.at_level(1))?;
    let mut sizes = vec![0u64; k1];
    for c in labels {
        sizes[c as usize] += 1;
    }
    leaves.counts = sizes;
    let mut levels = vec![leaves];
    let mut parents = Vec::new();
    for (i, &k) in config.level_ks.iter().enumerate().skip(1) {
        let below = levels.last().unwrap();
        let (centroids, _) = lloyd(&below.as_points(), k, LLOYD_MAX_ITER, LLOYD_RESTARTS, derive_seed(config.seed, 1000 + i as u64))
            .map_err(|e| e.at_level(i + 1))?;
        let parent: Vec<u32> = (0..below.k())
            .map(|c| nearest(below.centroid(c), &centroids, below.dim()).0 as u32)
            .collect();
        let mut members = vec![0u64; k];
        for (c, &p) in parent.iter().enumerate() {
            members[p as usize] += below.counts()[c];
        }
        let set = CentroidSet::new(i as u32 + 1, below.dim(), centroids, members)
            .map_err(|e| e.at_level(i + 1))?;
        parents.push(parent);
        levels.push(set);
    }
    ClusterHierarchy::new(levels, parents)
}

pub const MODEL_MAGIC: &[u8; 8] = b"PAMHKM01";

/// Model file layout (little-endian): magic `PAMHKM01`, `u32` level count,
/// `u32` dim; per level `u32` level, `u32` k, `k x u64` counts and
/// `k x dim x f32` centroids; then per non-top level `k x u32` parents.
pub fn encode_hierarchy<W: Write>(h: &ClusterHierarchy, mut out: W) -> Result<()> {
    out.write_all(MODEL_MAGIC)?;
    out.write_all(&(h.depth() as u32).to_le_bytes())?;
    out.write_all(&(h.dim() as u32).to_le_bytes())?;
    for set in &h.levels {
        out.write_all(&set.level.to_le_bytes())?;
        out.write_all(&(set.k() as u32).to_le_bytes())?;
        for c in &set.counts {
            out.write_all(&c.to_le_bytes())?;
        }
        for x in &set.centroids {
            out.write_all(&x.to_le_bytes())?;
        }
    }
    for p in &h.parents {
        for c in p {
            out.write_all(&c.to_le_bytes())?;
        }
    }
    out.flush()?;
    Ok(())
}

pub fn decode_hierarchy<R: Read>(input: R) -> Result<ClusterHierarchy> {
    let mut r = ByteReader::new(input);
    r.magic(MODEL_MAGIC, "PAMHKM01")?;
    let depth = r.u32("level count")? as usize;
    let dim = r.u32("dim")? as usize;
    if depth == 0 || dim == 0 {
        return Err(ParseError::InvalidField {
            offset: 8,
            message: "level count and dim must be positive".into(),
        }
        .into());
    }
    let mut levels = Vec::with_capacity(depth.min(64));
    for _ in 0..depth {
        let level = r.u32("level")?;
        let k_offset = r.offset;
        let k = r.u32("k")? as usize;
        if k == 0 {
            return Err(ParseError::InvalidField {
                offset: k_offset,
                message: "k must be positive".into(),
            }
            .into());
        }
        let counts = (0..k).map(|_| r.u64("count")).collect::<Result<Vec<_>>>()?;
        let mut centroids = Vec::with_capacity((k * dim).min(1 << 24));
        for _ in 0..k * dim {
            let off = r.offset;
            let x = f32::from_bits(r.u32("centroid")?);
            if !x.is_finite() {
                return Err(ParseError::NonFinite { offset: off }.into());
            }
            centroids.push(x);
        }
        levels.push(CentroidSet::new(level, dim, centroids, counts)?);
    }
    let mut parents = Vec::with_capacity(depth - 1);
    for set in &levels[..depth - 1] {
        parents.push((0..set.k()).map(|_| r.u32("parent")).collect::<Result<Vec<_>>>()?);
    }
    r.finish()?;
    ClusterHierarchy::new(levels, parents)
}

pub fn write_model(h: &ClusterHierarchy, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    let file = File::create(path).map_err(|e| Error::io(path, e))?;
    encode_hierarchy(h, BufWriter::new(file))
}

pub fn read_model(path: impl AsRef<Path>) -> Result<ClusterHierarchy> {
    let path = path.as_ref();
    let file = File::open(path).map_err(|e| Error::io(path, e))?;
    decode_hierarchy(BufReader::new(file))
}
