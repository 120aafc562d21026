//! AIS-to-hydrophone alignment.
//!
//! Each hydrophone gets a square fence centered on its location. A pulse
//! that lands inside a fence while that hydrophone is recording marks the
//! containing window as carrying ship traffic.

use std::collections::{BTreeMap, BTreeSet};
use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Read, Write};
use std::path::Path;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{invalid, Error, ParseError, Result};
use crate::model::{
    timestamp, window_id_of, wrap_lon, AisPulse, DeploymentConfig, GeoPoint, Hydrophone, Mmsi,
    WindowId,
};

/// Meters per degree of latitude on a sphere of radius 6,371,000 m.
pub const METERS_PER_DEGREE: f64 = 111_195.0;

/// Side length of the production fence.
pub const DEFAULT_SIDE_KM: f64 = 4.0;

const MAX_ABS_LAT: f64 = 89.0;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GeoFence {
    pub center: GeoPoint,
    pub half_side_m: f64,
    lat_span: f64,
    lon_span: f64,
}

impl GeoFence {
    pub fn lat_span(&self) -> f64 {
        self.lat_span
    }

    pub fn lon_span(&self) -> f64 {
        self.lon_span
    }

    /// Closed-boundary test in a local equirectangular projection.
    pub fn contains(&self, point: &GeoPoint) -> bool {
        let dlat = (point.lat() - self.center.lat()).abs();
        let dlon = wrap_lon(point.lon() - self.center.lon()).abs();
        dlat <= self.lat_span && dlon <= self.lon_span
    }
}

pub fn fence_of(hydrophone: &Hydrophone, side_km: f64) -> Result<GeoFence> {
    fence_around(hydrophone.location, side_km)
}

pub fn fence_around(center: GeoPoint, side_km: f64) -> Result<GeoFence> {
    if !(side_km.is_finite() && side_km > 0.0) {
        return Err(invalid(format!("fence side {side_km} km must be positive")));
    }
    if center.lat().abs() >= MAX_ABS_LAT {
        return Err(Error::UnsupportedLatitude(center.lat()));
    }
    let half_side_m = side_km * 500.0;
    let lat_span = half_side_m / METERS_PER_DEGREE;
    let lon_span = lat_span / center.lat().to_radians().cos();
    Ok(GeoFence {
        center,
        half_side_m,
        lat_span,
        lon_span,
    })
}

/// One AIS row before coordinate validation.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PulseRecord {
    pub mmsi: u64,
    pub time: i64,
    pub lat: f64,
    pub lon: f64,
    pub vessel_type: Option<i32>,
}

impl PulseRecord {
    pub fn validate(&self) -> Result<AisPulse> {
        Ok(AisPulse {
            mmsi: Mmsi::new(self.mmsi)?,
            time: self.time,
            position: GeoPoint::new(self.lat, self.lon)?,
            vessel_type: self.vessel_type,
        })
    }
}

impl From<&AisPulse> for PulseRecord {
    fn from(p: &AisPulse) -> Self {
        PulseRecord {
            mmsi: p.mmsi.0 as u64,
            time: p.time,
            lat: p.position.lat(),
            lon: p.position.lon(),
            vessel_type: p.vessel_type,
        }
    }
}

/// Windows that carry at least one aligned pulse, each with the set of
/// ships observed in it.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct AlignedWindowSet {
    windows: BTreeMap<WindowId, BTreeSet<Mmsi>>,
}

impl AlignedWindowSet {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn insert(&mut self, window: WindowId, mmsi: Mmsi) {
        self.windows.entry(window).or_default().insert(mmsi);
    }

    /// Union of mmsi sets; associative and commutative.
    pub fn merge(mut self, other: AlignedWindowSet) -> AlignedWindowSet {
        if self.windows.len() < other.windows.len() {
            return other.merge(self);
        }
        for (w, ships) in other.windows {
            self.windows.entry(w).or_default().extend(ships);
        }
        self
    }

    pub fn len(&self) -> usize {
        self.windows.len()
    }

    pub fn is_empty(&self) -> bool {
        self.windows.is_empty()
    }

    pub fn get(&self, window: WindowId) -> Option<&BTreeSet<Mmsi>> {
        self.windows.get(&window)
    }

    pub fn iter(&self) -> impl Iterator<Item = (WindowId, &BTreeSet<Mmsi>)> + '_ {
        self.windows.iter().map(|(w, s)| (*w, s))
    }

    pub fn window_ids(&self) -> impl Iterator<Item = WindowId> + '_ {
        self.windows.keys().copied()
    }

    /// Sidecar text: `window_id,mmsi` lines sorted lexicographically.
    pub fn to_sidecar(&self) -> String {
        let mut lines: Vec<String> = self
            .windows
            .iter()
            .flat_map(|(w, ships)| ships.iter().map(move |m| format!("{w},{m}")))
            .collect();
        lines.sort_unstable();
        let mut out = String::with_capacity(lines.len() * 30);
        for line in lines {
            out.push_str(&line);
            out.push('\n');
        }
        out
    }

    pub fn from_sidecar<R: BufRead>(input: R) -> Result<Self> {
        let mut set = AlignedWindowSet::new();
        for (i, line) in input.lines().enumerate() {
            let line = line?;
            if line.is_empty() {
                continue;
            }
            let bad = |message: String| ParseError::Line {
                line: i + 1,
                message,
            };
            let (w, m) = line
                .split_once(',')
                .ok_or_else(|| bad(format!("expected window_id,mmsi: {line:?}")))?;
            let w: u64 = w.parse().map_err(|_| bad(format!("bad window id {w:?}")))?;
            let m: u64 = m.parse().map_err(|_| bad(format!("bad mmsi {m:?}")))?;
            let m = Mmsi::new(m).map_err(|e| bad(e.to_string()))?;
            set.insert(WindowId(w), m);
        }
        Ok(set)
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct RejectTally {
    /// Rows that could not be parsed at all.
    pub malformed_rows: u64,
    /// Parsed rows with out-of-range coordinates or mmsi.
    pub invalid_pulses: u64,
}

impl RejectTally {
    fn merge(self, o: RejectTally) -> RejectTally {
        RejectTally {
            malformed_rows: self.malformed_rows + o.malformed_rows,
            invalid_pulses: self.invalid_pulses + o.invalid_pulses,
        }
    }
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct Alignment {
    /// Aligned pulses in canonical order (time, mmsi, lat, lon, type), deduplicated.
    pub pulses: Vec<AisPulse>,
    pub windows: AlignedWindowSet,
    pub rejects: RejectTally,
}

struct FencedHydrophone<'a> {
    hydrophone: &'a Hydrophone,
    fence: GeoFence,
}

fn fences(config: &DeploymentConfig, side_km: f64) -> Result<Vec<FencedHydrophone<'_>>> {
    config
        .hydrophones
        .iter()
        .map(|h| {
            Ok(FencedHydrophone {
                hydrophone: h,
                fence: fence_of(h, side_km)?,
            })
        })
        .collect()
}

/// Windows of every hydrophone that recorded `pulse`. A pulse inside two
/// overlapping fences aligns to both.
fn windows_for(pulse: &AisPulse, fenced: &[FencedHydrophone<'_>]) -> Vec<WindowId> {
    let mut out = Vec::new();
    for f in fenced {
        if !f.fence.contains(&pulse.position) {
            continue;
        }
        for r in &f.hydrophone.recordings {
            if let Some(offset) = r.window_offset_at(pulse.time) {
                let id = window_id_of(&f.hydrophone.id, &r.id, offset)
                    .expect("config ids validated");
                out.push(id);
            }
        }
    }
    out
}

fn pulse_key(p: &AisPulse) -> (i64, Mmsi, u64, u64, Option<i32>) {
    (
        p.time,
        p.mmsi,
        p.position.lat().to_bits(),
        p.position.lon().to_bits(),
        p.vessel_type,
    )
}

/// Aligns raw pulses against the deployment. Invalid pulses are tallied and
/// skipped. The result does not depend on input order.
pub fn align(records: &[PulseRecord], config: &DeploymentConfig, side_km: f64) -> Result<Alignment> {
    let fenced = fences(config, side_km)?;
    let chunk = (records.len() / (4 * rayon::current_num_threads()).max(1)).max(1024);
    let partial = records
        .par_chunks(chunk)
        .map(|part| {
            let mut out = Alignment::default();
            for rec in part {
                let pulse = match rec.validate() {
                    Ok(p) => p,
                    Err(_) => {
                        out.rejects.invalid_pulses += 1;
                        continue;
                    }
                };
                let hits = windows_for(&pulse, &fenced);
                if hits.is_empty() {
                    continue;
                }
                for w in hits {
                    out.windows.insert(w, pulse.mmsi);
                }
                out.pulses.push(pulse);
            }
            out
        })
        .reduce(Alignment::default, |mut a, b| {
            a.pulses.extend(b.pulses);
            Alignment {
                pulses: a.pulses,
                windows: a.windows.merge(b.windows),
                rejects: a.rejects.merge(b.rejects),
            }
        });
    let mut result = partial;
    result.pulses.sort_by_key(pulse_key);
    result.pulses.dedup_by_key(|p| pulse_key(p));
    Ok(result)
}

/// Parses AIS CSV rows. Requires a header naming `MMSI`, `BaseDateTime`,
/// `LAT`, `LON` and `VesselType`; other columns are ignored. Unparseable
/// rows are counted in the returned tally.
pub fn read_ais_csv<R: Read>(input: R) -> Result<(Vec<PulseRecord>, RejectTally)> {
    let mut reader = csv::ReaderBuilder::new()
        .has_headers(true)
        .flexible(true)
        .trim(csv::Trim::All)
        .from_reader(input);
    let headers = match reader.headers() {
        Ok(h) => h.clone(),
        Err(e) => return Err(invalid(format!("AIS header: {e}"))),
    };
    if headers.is_empty() {
        return Ok((Vec::new(), RejectTally::default()));
    }
    let column = |name: &str| -> Result<usize> {
        headers
            .iter()
            .position(|h| h == name)
            .ok_or_else(|| invalid(format!("AIS csv missing column {name}")))
    };
    let (c_mmsi, c_time, c_lat, c_lon, c_type) = (
        column("MMSI")?,
        column("BaseDateTime")?,
        column("LAT")?,
        column("LON")?,
        column("VesselType")?,
    );
    let mut records = Vec::new();
    let mut tally = RejectTally::default();
    for row in reader.records() {
        let Ok(row) = row else {
            tally.malformed_rows += 1;
            continue;
        };
        let parsed = (|| {
            let mmsi: u64 = row.get(c_mmsi)?.parse().ok()?;
            let time = timestamp::parse(row.get(c_time)?)?;
            let lat: f64 = row.get(c_lat)?.parse().ok()?;
            let lon: f64 = row.get(c_lon)?.parse().ok()?;
            let vessel_type = match row.get(c_type)? {
                "" => None,
                t => Some(t.parse::<i32>().ok()?),
            };
            Some(PulseRecord {
                mmsi,
                time,
                lat,
                lon,
                vessel_type,
            })
        })();
        match parsed {
            Some(r) => records.push(r),
            None => tally.malformed_rows += 1,
        }
    }
    Ok((records, tally))
}

pub fn load_ais_csv(path: impl AsRef<Path>) -> Result<(Vec<PulseRecord>, RejectTally)> {
    let path = path.as_ref();
    let file = File::open(path).map_err(|e| Error::io(path, e))?;
    read_ais_csv(BufReader::new(file))
}

pub fn write_ais_csv<W: Write>(pulses: &[AisPulse], out: W) -> Result<()> {
    let mut out = BufWriter::new(out);
    writeln!(out, "MMSI,BaseDateTime,LAT,LON,VesselType")?;
    for p in pulses {
        let vt = p.vessel_type.map(|v| v.to_string()).unwrap_or_default();
        writeln!(
            out,
            "{},{},{},{},{}",
            p.mmsi,
            timestamp::format(p.time),
            p.position.lat(),
            p.position.lon(),
            vt
        )?;
    }
    out.flush()?;
    Ok(())
}

pub fn write_sidecar(set: &AlignedWindowSet, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    std::fs::write(path, set.to_sidecar()).map_err(|e| Error::io(path, e))
}

pub fn read_sidecar(path: impl AsRef<Path>) -> Result<AlignedWindowSet> {
    let path = path.as_ref();
    let file = File::open(path).map_err(|e| Error::io(path, e))?;
    AlignedWindowSet::from_sidecar(BufReader::new(file))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::Recording;
    use proptest::prelude::*;

    fn point(lat: f64, lon: f64) -> GeoPoint {
        GeoPoint::new(lat, lon).unwrap()
    }

    fn config() -> DeploymentConfig {
        DeploymentConfig {
            hydrophones: vec![
                Hydrophone {
                    id: "H1".into(),
                    location: point(36.0, -122.0),
                    recordings: vec![
                        Recording {
                            id: "R1".into(),
                            start: 1_000,
                            duration_s: 95,
                            native_sample_rate_hz: 256_000,
                        },
                        Recording {
                            id: "R2".into(),
                            start: 2_000,
                            duration_s: 100,
                            native_sample_rate_hz: 256_000,
                        },
                    ],
                },
                Hydrophone {
                    id: "H2".into(),
                    location: point(36.02, -122.0),
                    recordings: vec![Recording {
                        id: "R1".into(),
                        start: 1_000,
                        duration_s: 60,
                        native_sample_rate_hz: 64_000,
                    }],
                },
            ],
        }
    }

    fn rec(mmsi: u64, time: i64, lat: f64, lon: f64) -> PulseRecord {
        PulseRecord {
            mmsi,
            time,
            lat,
            lon,
            vessel_type: Some(70),
        }
    }

    #[test]
    fn equator_fence_spans() {
        let f = fence_around(point(0.0, 0.0), 4.0).unwrap();
        assert!((f.lat_span() - 0.017986).abs() < 5e-7);
        assert_eq!(f.lat_span(), 2000.0 / 111_195.0);
        assert_eq!(f.lon_span(), f.lat_span());
        assert_eq!(f.half_side_m, 2000.0);
    }

    #[test]
    fn high_latitude_fence_widens() {
        let eq = fence_around(point(0.0, 0.0), 4.0).unwrap();
        let f = fence_around(point(60.0, 0.0), 4.0).unwrap();
        assert!((f.lon_span() / eq.lon_span() - 2.0).abs() < 1e-12);
        assert_eq!(f.lat_span(), eq.lat_span());
        assert!(matches!(
            fence_around(point(89.0, 0.0), 4.0),
            Err(Error::UnsupportedLatitude(_))
        ));
        assert!(fence_around(point(0.0, 0.0), 0.0).is_err());
    }

    #[test]
    fn contains_cases() {
        let c = point(0.0, 0.0);
        let f = fence_around(c, 4.0).unwrap();
        assert!(f.contains(&c));
        assert!(!f.contains(&point(3000.0 / METERS_PER_DEGREE, 0.0)));
        assert!(f.contains(&point(f.lat_span(), 0.0)));
        assert!(f.contains(&point(-f.lat_span(), f.lon_span())));
        assert!(!f.contains(&point(0.0, f.lon_span() * 1.000001)));

        let tiny = fence_around(c, 1e-12).unwrap();
        assert!(tiny.contains(&c));
        assert!(!tiny.contains(&point(1e-9, 0.0)));
    }

    #[test]
    fn contains_wraps_dateline() {
        let f = fence_around(point(10.0, 179.99), 4.0).unwrap();
        assert!(f.contains(&point(10.0, -179.999)));
        assert!(!f.contains(&point(10.0, -179.9)));
    }

    #[test]
    fn pulse_outside_every_fence() {
        let out = align(&[rec(366_000_001, 1_010, 10.0, 10.0)], &config(), 4.0).unwrap();
        assert!(out.pulses.is_empty());
        assert!(out.windows.is_empty());
    }

    #[test]
    fn pulse_selects_containing_window() {
        // 0.03 deg north of H1 is 3.3 km away: only H2's fence sees it
        let out = align(&[rec(366_000_001, 1_025, 36.03, -122.0)], &config(), 4.0).unwrap();
        assert_eq!(out.pulses.len(), 1);
        let expected = window_id_of("H2", "R1", 20).unwrap();
        assert_eq!(out.windows.window_ids().collect::<Vec<_>>(), vec![expected]);
    }

    #[test]
    fn overlapping_fences_align_to_both() {
        let out = align(&[rec(366_000_001, 1_025, 36.01, -122.0)], &config(), 4.0).unwrap();
        assert_eq!(out.windows.len(), 2);
        assert!(out.windows.get(window_id_of("H1", "R1", 20).unwrap()).is_some());
    }

    #[test]
    fn two_ships_share_a_window() {
        let out = align(
            &[
                rec(366_000_001, 2_031, 36.0, -122.0),
                rec(366_000_002, 2_039, 35.99, -122.01),
                rec(366_000_002, 2_035, 35.99, -122.01),
            ],
            &config(),
            4.0,
        )
        .unwrap();
        assert_eq!(out.windows.len(), 1);
        let ships = out.windows.get(window_id_of("H1", "R2", 30).unwrap()).unwrap();
        assert_eq!(ships.len(), 2);
        assert_eq!(out.pulses.len(), 3);
    }

    #[test]
    fn requires_complete_window_inside_recording() {
        let cfg = config();
        // R1 on H1 is 95 s long: 90..95 is a partial window; 1_100..2_000 is a gap
        let out = align(
            &[
                rec(366_000_001, 1_092, 35.995, -122.0),
                rec(366_000_001, 1_500, 35.995, -122.0),
                rec(366_000_001, 999, 35.995, -122.0),
            ],
            &cfg,
            4.0,
        )
        .unwrap();
        assert!(out.windows.is_empty());
    }

    #[test]
    fn invalid_pulses_tallied() {
        let out = align(
            &[
                rec(366_000_001, 1_010, 95.0, -122.0),
                rec(0, 1_010, 36.0, -122.0),
                rec(366_000_001, 1_010, f64::NAN, -122.0),
                rec(366_000_001, 1_010, 36.0, -122.0),
            ],
            &config(),
            4.0,
        )
        .unwrap();
        assert_eq!(out.rejects.invalid_pulses, 3);
        assert_eq!(out.windows.len(), 1);
    }

    #[test]
    fn csv_parsing_tolerates_bad_rows() {
        let text = "MMSI,BaseDateTime,LAT,LON,SOG,VesselType\n\
                    366000001,2020-01-01T00:00:25,36.0,-122.0,3.1,70\n\
                    garbage\n\
                    366000002,not-a-date,36.0,-122.0,0,\n\
                    366000003,2020-01-01T00:00:25,36.0,-122.0,1.0,\n";
        let (rows, tally) = read_ais_csv(text.as_bytes()).unwrap();
        assert_eq!(rows.len(), 2);
        assert_eq!(tally.malformed_rows, 2);
        assert_eq!(rows[1].vessel_type, None);
        assert_eq!(rows[0].time, timestamp::parse("2020-01-01T00:00:25").unwrap());

        let (rows, tally) = read_ais_csv("".as_bytes()).unwrap();
        assert!(rows.is_empty());
        assert_eq!(tally, RejectTally::default());
        assert!(read_ais_csv("MMSI,LAT\n1,2\n".as_bytes()).is_err());
    }

    #[test]
    fn sidecar_sorted_lexicographically() {
        let mut set = AlignedWindowSet::new();
        set.insert(WindowId(100), Mmsi(366_000_002));
        set.insert(WindowId(9), Mmsi(366_000_001));
        set.insert(WindowId(100), Mmsi(366_000_001));
        let text = set.to_sidecar();
        assert_eq!(text, "100,366000001\n100,366000002\n9,366000001\n");
        assert_eq!(AlignedWindowSet::from_sidecar(text.as_bytes()).unwrap(), set);
        assert!(AlignedWindowSet::from_sidecar("1;2\n".as_bytes()).is_err());
    }

    fn arb_records() -> impl Strategy<Value = Vec<PulseRecord>> {
        proptest::collection::vec(
            (1u64..6, 990i64..2_110, 35.97f64..36.05, -122.03f64..-121.97)
                .prop_map(|(m, t, lat, lon)| rec(366_000_000 + m, t, lat, lon)),
            0..40,
        )
    }

    proptest! {
        #[test]
        fn order_independent(records in arb_records(), seed in any::<u64>()) {
            let a = align(&records, &config(), 4.0).unwrap();
            let mut shuffled = records.clone();
            let n = shuffled.len();
            for i in (1..n).rev() {
                let j = (seed.wrapping_mul(i as u64 + 7) >> 3) as usize % (i + 1);
                shuffled.swap(i, j);
            }
            let b = align(&shuffled, &config(), 4.0).unwrap();
            prop_assert_eq!(a, b);
        }

        #[test]
        fn shrinking_fence_never_adds_windows(records in arb_records(), side in 0.1f64..6.0, shrink in 0.0f64..1.0) {
            let big = align(&records, &config(), side).unwrap();
            let small = align(&records, &config(), side * (1.0 - shrink * 0.99)).unwrap();
            for (w, ships) in small.windows.iter() {
                let outer = big.windows.get(w).unwrap();
                prop_assert!(ships.is_subset(outer));
            }
        }

        #[test]
        fn windows_and_pulses_support_each_other(records in arb_records()) {
            let cfg = config();
            let out = align(&records, &cfg, 4.0).unwrap();
            let fenced = fences(&cfg, 4.0).unwrap();
            let mut from_pulses = AlignedWindowSet::new();
            for p in &out.pulses {
                let hits = windows_for(p, &fenced);
                prop_assert!(!hits.is_empty());
                for w in hits {
                    from_pulses.insert(w, p.mmsi);
                }
            }
            prop_assert_eq!(from_pulses, out.windows);
        }
    }
}
