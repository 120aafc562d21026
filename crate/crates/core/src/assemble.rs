//! Final dataset assembly and the teacher EMA schedule used downstream.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::error::{invalid, Error, Result};
use crate::manifest::{CurationManifest, ManifestEntry, Source};
use crate::model::WINDOW_SECONDS;

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct SourceCounts {
    pub ais: u64,
    pub hkmeans: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AssemblySummary {
    pub entries: u64,
    pub ais: u64,
    pub hkmeans: u64,
    /// Windows that were in both inputs and kept as `ais`.
    pub overlap: u64,
    pub total_seconds: u64,
    pub total_hours: f64,
    pub per_hydrophone: BTreeMap<String, SourceCounts>,
}

impl AssemblySummary {
    pub fn of(manifest: &CurationManifest, overlap: u64) -> Self {
        let mut per_hydrophone: BTreeMap<String, SourceCounts> = BTreeMap::new();
        for e in manifest.entries() {
            let c = per_hydrophone.entry(e.hydrophone_id.clone()).or_default();
            match e.source {
                Source::Ais => c.ais += 1,
                Source::Hkmeans => c.hkmeans += 1,
            }
        }
        let entries = manifest.len() as u64;
        AssemblySummary {
            entries,
            ais: manifest.count(Source::Ais) as u64,
            hkmeans: manifest.count(Source::Hkmeans) as u64,
            overlap,
            total_seconds: entries * WINDOW_SECONDS,
            total_hours: hours_of(entries),
            per_hydrophone,
        }
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("summary serializes") + "\n"
    }
}

/// Hours of audio in `windows` ten-second windows.
pub fn hours_of(windows: u64) -> f64 {
    windows as f64 / 360.0
}

fn check_unique(entries: &[ManifestEntry], what: &str) -> Result<()> {
    let mut ids: Vec<_> = entries.iter().map(|e| e.window_id).collect();
    ids.sort_unstable();
    let mut dups: Vec<_> = ids.windows(2).filter(|w| w[0] == w[1]).map(|w| w[0]).collect();
    dups.dedup();
    if !dups.is_empty() {
        return Err(invalid(format!(
            "{what} entries: {}",
            Error::DuplicateWindows(dups)
        )));
    }
    Ok(())
}

/// Deduplicating union keyed by window id. When a window appears in both
/// inputs the AIS entry is kept and inherits the cluster path.
pub fn assemble(
    ais_entries: Vec<ManifestEntry>,
    hkmeans_entries: Vec<ManifestEntry>,
) -> Result<(CurationManifest, AssemblySummary)> {
    check_unique(&ais_entries, "ais")?;
    check_unique(&hkmeans_entries, "hkmeans")?;
    let mut merged: BTreeMap<_, ManifestEntry> = BTreeMap::new();
    for e in hkmeans_entries {
        merged.insert(e.window_id, e);
    }
    let mut overlap = 0;
    for mut e in ais_entries {
        if let Some(hk) = merged.remove(&e.window_id) {
            overlap += 1;
            if e.cluster_path.is_none() {
                e.cluster_path = hk.cluster_path;
            }
        }
        merged.insert(e.window_id, e);
    }
    let manifest = CurationManifest::from_entries(merged.into_values().collect())?;
    let summary = AssemblySummary::of(&manifest, overlap);
    Ok((manifest, summary))
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EmaConfig {
    pub tau0: f64,
    pub tau_end: f64,
    pub ramp_updates: u64,
}

impl Default for EmaConfig {
    fn default() -> Self {
        EmaConfig {
            tau0: 0.999,
            tau_end: 0.9999,
            ramp_updates: 20,
        }
    }
}

impl EmaConfig {
    pub fn new(tau0: f64, tau_end: f64, ramp_updates: u64) -> Result<Self> {
        if !(0.0 <= tau0 && tau0 <= tau_end && tau_end <= 1.0) {
            return Err(invalid(format!("need 0 <= tau0 ({tau0}) <= tau_end ({tau_end}) <= 1")));
        }
        if ramp_updates == 0 {
            return Err(invalid("ramp_updates must be at least 1"));
        }
        Ok(EmaConfig {
            tau0,
            tau_end,
            ramp_updates,
        })
    }
}

/// Linear ramp from `tau0` to `tau_end` over `ramp_updates` steps, constant after.
pub fn tau_at(step: u64, config: &EmaConfig) -> f64 {
    if step >= config.ramp_updates {
        return config.tau_end;
    }
    let frac = step as f64 / config.ramp_updates as f64;
    (config.tau0 + (config.tau_end - config.tau0) * frac).clamp(config.tau0, config.tau_end)
}

/// Teacher update `teacher <- tau * teacher + (1 - tau) * student`, in place.
pub fn ema_update(teacher: &mut [f64], student: &[f64], tau: f64) -> Result<()> {
    if teacher.len() != student.len() {
        return Err(Error::DimMismatch {
            expected: teacher.len(),
            actual: student.len(),
        });
    }
    for (t, &s) in teacher.iter_mut().zip(student) {
        *t = tau * *t + (1.0 - tau) * s;
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::{ClusterPath, Mmsi, WindowId};

    fn entry(id: u64, source: Source, h: &str) -> ManifestEntry {
        ManifestEntry {
            window_id: WindowId(id),
            hydrophone_id: h.into(),
            recording_id: "R".into(),
            offset_s: 0,
            source,
            mmsi: (source == Source::Ais).then_some(Mmsi(366_000_001)),
            cluster_path: (source == Source::Hkmeans).then(|| ClusterPath(vec![0, id as u32])),
        }
    }

    #[test]
    fn production_hours() {
        let total = 25_021 + 323_532;
        assert_eq!(total, 348_553);
        let h = hours_of(total);
        assert!((h - 968.2).abs() < 0.01, "{h}");
    }

    #[test]
    fn empty_ais_keeps_hkmeans() {
        let hk = vec![entry(3, Source::Hkmeans, "H1"), entry(1, Source::Hkmeans, "H2")];
        let (m, s) = assemble(vec![], hk.clone()).unwrap();
        assert_eq!(m, CurationManifest::from_entries(hk).unwrap());
        assert_eq!((s.ais, s.hkmeans, s.entries), (0, 2, 2));
        assert_eq!(s.total_seconds, 20);
    }

    #[test]
    fn collision_keeps_ais_with_path() {
        let (m, s) = assemble(
            vec![entry(5, Source::Ais, "H1")],
            vec![entry(5, Source::Hkmeans, "H1"), entry(6, Source::Hkmeans, "H1")],
        )
        .unwrap();
        assert_eq!(m.len(), 2);
        let e = &m.entries()[0];
        assert_eq!(e.source, Source::Ais);
        assert_eq!(e.mmsi, Some(Mmsi(366_000_001)));
        assert_eq!(e.cluster_path, Some(ClusterPath(vec![0, 5])));
        assert_eq!(s.overlap, 1);
        assert_eq!(s.per_hydrophone["H1"], SourceCounts { ais: 1, hkmeans: 1 });
    }

    #[test]
    fn duplicates_within_a_source_rejected() {
        let dup = vec![entry(1, Source::Ais, "H"), entry(1, Source::Ais, "H")];
        assert!(assemble(dup.clone(), vec![]).is_err());
        let dup_hk = vec![entry(1, Source::Hkmeans, "H"), entry(1, Source::Hkmeans, "H")];
        assert!(assemble(vec![], dup_hk).is_err());
    }

    #[test]
    fn assemble_is_idempotent() {
        let (m, _) = assemble(
            vec![entry(2, Source::Ais, "H1"), entry(9, Source::Ais, "H2")],
            vec![entry(2, Source::Hkmeans, "H1"), entry(4, Source::Hkmeans, "H1")],
        )
        .unwrap();
        let (ais, hk): (Vec<_>, Vec<_>) =
            m.entries().iter().cloned().partition(|e| e.source == Source::Ais);
        let (again, _) = assemble(ais, hk).unwrap();
        assert_eq!(again, m);
    }

    #[test]
    fn tau_schedule() {
        let c = EmaConfig::default();
        assert_eq!(tau_at(0, &c), 0.999);
        assert_eq!(tau_at(20, &c), 0.9999);
        assert_eq!(tau_at(500, &c), 0.9999);
        assert!((tau_at(10, &c) - 0.99945).abs() < 1e-15);
        let mut prev = 0.0;
        for step in 0..40 {
            let t = tau_at(step, &c);
            assert!(t >= prev && (c.tau0..=c.tau_end).contains(&t));
            prev = t;
        }
        assert!(EmaConfig::new(0.9, 0.8, 5).is_err());
        assert!(EmaConfig::new(0.9, 0.95, 0).is_err());
    }

    #[test]
    fn ema_identities() {
        let mut t = vec![1.0, -2.0, 0.5];
        ema_update(&mut t, &[7.0, 7.0, 7.0], 1.0).unwrap();
        assert_eq!(t, vec![1.0, -2.0, 0.5]);
        ema_update(&mut t, &[7.0, 8.0, 9.0], 0.0).unwrap();
        assert_eq!(t, vec![7.0, 8.0, 9.0]);
        let mut t = vec![1.0];
        ema_update(&mut t, &[0.0], 0.999).unwrap();
        assert_eq!(t, vec![0.999]);
        assert!(ema_update(&mut t, &[0.0, 1.0], 0.5).is_err());
    }
}
