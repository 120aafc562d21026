//! Occurrence-threshold balancing of the AIS-aligned windows.
//!
//! Ships seen in at most `t` windows keep all of them. A ship seen in
//! `c > t` windows keeps each window with probability `t / c`, so every
//! ship contributes `min(c, t)` windows in expectation.

use std::collections::{BTreeMap, BTreeSet};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{invalid, Error, Result};
use crate::geo::AlignedWindowSet;
use crate::manifest::{ManifestEntry, Source};
use crate::model::{Mmsi, WindowId, WindowIndex};

/// Threshold used for the production corpus.
pub const PRODUCTION_THRESHOLD: u32 = 250;

/// Windows per ship.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct OccurrenceHistogram {
    counts: BTreeMap<Mmsi, u64>,
    total_windows: u64,
}

impl OccurrenceHistogram {
    pub fn from_counts(counts: BTreeMap<Mmsi, u64>) -> Result<Self> {
        if let Some((m, _)) = counts.iter().find(|(_, c)| **c == 0) {
            return Err(invalid(format!("ship {m} has zero occurrences")));
        }
        let total_windows = counts.values().sum();
        Ok(OccurrenceHistogram {
            counts,
            total_windows,
        })
    }

    pub fn count(&self, mmsi: Mmsi) -> u64 {
        self.counts.get(&mmsi).copied().unwrap_or(0)
    }

    pub fn counts(&self) -> &BTreeMap<Mmsi, u64> {
        &self.counts
    }

    pub fn total_ships(&self) -> usize {
        self.counts.len()
    }

    /// Sum of per-ship counts; a window shared by two ships counts twice.
    pub fn total_windows(&self) -> u64 {
        self.total_windows
    }

    /// Counts in descending order, ties kept in mmsi order.
    pub fn ranked(&self) -> Vec<u64> {
        let mut v: Vec<u64> = self.counts.values().copied().collect();
        v.sort_unstable_by(|a, b| b.cmp(a));
        v
    }

    /// `occurrence_rank,count` lines, rank starting at 1.
    pub fn to_rank_csv(&self) -> String {
        let mut out = String::from("occurrence_rank,count\n");
        for (r, c) in self.ranked().iter().enumerate() {
            out.push_str(&format!("{},{}\n", r + 1, c));
        }
        out
    }

    fn merge(mut self, other: OccurrenceHistogram) -> OccurrenceHistogram {
        for (m, c) in other.counts {
            *self.counts.entry(m).or_insert(0) += c;
        }
        self.total_windows += other.total_windows;
        self
    }
}

pub fn histogram(aligned: &AlignedWindowSet) -> OccurrenceHistogram {
    let windows: Vec<_> = aligned.iter().collect();
    windows
        .par_chunks(4096)
        .map(|part| {
            let mut h = OccurrenceHistogram::default();
            for (_, ships) in part {
                for m in ships.iter() {
                    *h.counts.entry(*m).or_insert(0) += 1;
                    h.total_windows += 1;
                }
            }
            h
        })
        .reduce(OccurrenceHistogram::default, OccurrenceHistogram::merge)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ThresholdOrigin {
    Detected,
    Manual,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Threshold {
    pub t: u32,
    pub origin: ThresholdOrigin,
}

impl Threshold {
    pub fn manual(t: u32) -> Result<Self> {
        if t == 0 {
            return Err(invalid("threshold must be at least 1"));
        }
        Ok(Threshold {
            t,
            origin: ThresholdOrigin::Manual,
        })
    }
}

/// Location of the knee on a descending occurrence curve.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Knee {
    /// 0-based rank into the descending curve.
    pub rank: usize,
    pub count: u64,
    /// Peak value of the normalized difference curve.
    pub difference: f64,
}

pub const KNEEDLE_SENSITIVITY: f64 = 1.0;

/// Kneedle on a descending, convex curve `y(r)`.
///
/// Ranks map to `x = r / (n-1)` and counts to `y = (c - min) / (max - min)`.
/// For a decreasing curve the difference against the chord is
/// `(1 - x) - y`; the knee is its first maximum, confirmed only if the
/// difference later falls below `peak - S / (n-1)`.
pub fn kneedle_descending(curve: &[u64], sensitivity: f64) -> Result<Knee> {
    let distinct: BTreeSet<u64> = curve.iter().copied().collect();
    if distinct.len() < 3 {
        return Err(Error::NoKnee(format!(
            "{} distinct occurrence values, need at least 3",
            distinct.len()
        )));
    }
    if curve.windows(2).any(|w| w[0] < w[1]) {
        return Err(invalid("occurrence curve must be sorted descending"));
    }
    let n = curve.len();
    let (max, min) = (curve[0] as f64, curve[n - 1] as f64);
    let span = max - min;
    let step = 1.0 / (n - 1) as f64;
    let diff: Vec<f64> = curve
        .iter()
        .enumerate()
        .map(|(r, &c)| (1.0 - r as f64 * step) - (c as f64 - min) / span)
        .collect();
    let mut best = 0;
    for (r, d) in diff.iter().enumerate() {
        if *d > diff[best] {
            best = r;
        }
    }
    let cutoff = diff[best] - sensitivity * step;
    if !diff[best + 1..].iter().any(|d| *d < cutoff) {
        return Err(Error::NoKnee("difference curve never drops below the sensitivity threshold".into()));
    }
    Ok(Knee {
        rank: best,
        count: curve[best],
        difference: diff[best],
    })
}

pub fn detect_knee(hist: &OccurrenceHistogram) -> Result<Threshold> {
    let knee = kneedle_descending(&hist.ranked(), KNEEDLE_SENSITIVITY)?;
    let t = u32::try_from(knee.count).map_err(|_| invalid("knee count exceeds u32"))?;
    Ok(Threshold {
        t,
        origin: ThresholdOrigin::Detected,
    })
}

pub fn sampling_probability(count: u64, t: u32) -> f64 {
    if count <= t as u64 {
        1.0
    } else {
        t as f64 / count as f64
    }
}

/// A retained window and the smallest ship that retained it.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord)]
pub struct Retained {
    pub window: WindowId,
    pub mmsi: Mmsi,
}

/// Seed for one ship's Bernoulli draws, independent of how ships are
/// partitioned across workers.
pub fn ship_seed(seed: u64, mmsi: Mmsi) -> u64 {
    seed ^ mmsi.0 as u64
}

/// Draws the balanced subset. Each ship walks its windows in id order with
/// its own RNG; a window survives if any of its ships keeps it.
pub fn curate(aligned: &AlignedWindowSet, threshold: Threshold, seed: u64) -> Vec<Retained> {
    let mut by_ship: BTreeMap<Mmsi, Vec<WindowId>> = BTreeMap::new();
    for (w, ships) in aligned.iter() {
        for m in ships {
            by_ship.entry(*m).or_default().push(w);
        }
    }
    let ships: Vec<_> = by_ship.into_iter().collect();
    let mut kept: Vec<Retained> = ships
        .par_iter()
        .flat_map_iter(|(mmsi, windows)| {
            let p = sampling_probability(windows.len() as u64, threshold.t);
            let mut rng = ChaCha8Rng::seed_from_u64(ship_seed(seed, *mmsi));
            windows
                .iter()
                .filter(move |_| p >= 1.0 || rng.random::<f64>() < p)
                .map(|w| Retained {
                    window: *w,
                    mmsi: *mmsi,
                })
                .collect::<Vec<_>>()
        })
        .collect();
    // sorted by (window, mmsi): first per window is the smallest mmsi
    kept.sort_unstable();
    kept.dedup_by_key(|r| r.window);
    kept
}

pub fn to_entries(retained: &[Retained], index: &WindowIndex) -> Result<Vec<ManifestEntry>> {
    retained
        .iter()
        .map(|r| {
            let window = index
                .get(r.window)
                .ok_or_else(|| invalid(format!("window {} not in deployment config", r.window)))?;
            let mut e = ManifestEntry::new(window, Source::Ais);
            e.mmsi = Some(r.mmsi);
            Ok(e)
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    fn set(pairs: &[(u64, u32)]) -> AlignedWindowSet {
        let mut s = AlignedWindowSet::new();
        for (w, m) in pairs {
            s.insert(WindowId(*w), Mmsi(*m));
        }
        s
    }

    #[test]
    fn histogram_counts_shared_windows_per_ship() {
        assert_eq!(histogram(&AlignedWindowSet::new()).total_ships(), 0);
        let h = histogram(&set(&[(1, 10), (1, 20), (2, 10)]));
        assert_eq!(h.count(Mmsi(10)), 2);
        assert_eq!(h.count(Mmsi(20)), 1);
        assert_eq!(h.total_windows(), 3);
        assert_eq!(h.to_rank_csv(), "occurrence_rank,count\n1,2\n2,1\n");
    }

    #[test]
    fn probability_law() {
        assert_eq!(sampling_probability(100, 250), 1.0);
        assert_eq!(sampling_probability(250, 250), 1.0);
        assert_eq!(sampling_probability(500, 250), 0.5);
        assert_eq!(sampling_probability(10_000, 250), 0.025);
    }

    #[test]
    fn knee_needs_three_distinct_values() {
        let h = OccurrenceHistogram::from_counts((1..=5).map(|i| (Mmsi(i), 7)).collect()).unwrap();
        assert!(matches!(detect_knee(&h), Err(Error::NoKnee(_))));
        assert!(kneedle_descending(&[9, 9, 1, 1], 1.0).is_err());
        assert!(kneedle_descending(&[1, 2, 3], 1.0).is_err());
    }

    #[test]
    fn knee_on_sharp_elbow() {
        // drops from 100 to ~10 in two ranks, then flat-ish
        let curve = [100, 40, 12, 11, 10, 9, 8, 7, 6, 5];
        let knee = kneedle_descending(&curve, 1.0).unwrap();
        assert_eq!(knee.rank, 2);
        assert_eq!(knee.count, 12);
    }

    #[test]
    fn linear_curve_has_no_knee() {
        let curve: Vec<u64> = (0..20).rev().collect();
        assert!(kneedle_descending(&curve, 1.0).is_err());
    }

    #[test]
    fn identity_regime_below_threshold() {
        let s = set(&[(1, 10), (2, 10), (3, 20), (3, 30)]);
        let kept = curate(&s, Threshold::manual(250).unwrap(), 7);
        let ids: Vec<_> = kept.iter().map(|r| r.window.0).collect();
        assert_eq!(ids, vec![1, 2, 3]);
        assert_eq!(kept[2].mmsi, Mmsi(20));
    }

    #[test]
    fn rare_ship_rescues_shared_window() {
        // ship 5 is in 1000 windows, ship 9 in one of them
        let mut pairs: Vec<(u64, u32)> = (0..1000).map(|w| (w, 5)).collect();
        pairs.push((777, 9));
        let kept = curate(&set(&pairs), Threshold::manual(10).unwrap(), 3);
        let w = kept.iter().find(|r| r.window == WindowId(777)).unwrap();
        assert!(w.mmsi == Mmsi(9) || w.mmsi == Mmsi(5));
        assert!(kept.len() < 100);
    }

    #[test]
    fn curate_is_deterministic_and_a_subset() {
        let pairs: Vec<(u64, u32)> = (0..3000).map(|w| (w, 1 + (w % 7) as u32)).collect();
        let s = set(&pairs);
        let t = Threshold::manual(100).unwrap();
        let a = curate(&s, t, 42);
        assert_eq!(a, curate(&s, t, 42));
        assert_ne!(a, curate(&s, t, 43));
        assert!(a.iter().all(|r| s.get(r.window).unwrap().contains(&r.mmsi)));
    }

    #[test]
    fn worker_count_does_not_change_output() {
        let pairs: Vec<(u64, u32)> = (0..5000).map(|w| (w * 3, 1 + (w % 13) as u32)).collect();
        let s = set(&pairs);
        let t = Threshold::manual(50).unwrap();
        let run = |n| {
            rayon::ThreadPoolBuilder::new()
                .num_threads(n)
                .build()
                .unwrap()
                .install(|| curate(&s, t, 9))
        };
        assert_eq!(run(1), run(4));
    }
}
