//! Domain types shared by every pipeline stage: locations, hydrophones,
//! recordings, windows and the window identifier scheme.

use std::collections::{BTreeMap, HashMap, HashSet};
use std::fmt;
use std::path::Path;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{invalid, Error, Result};

/// Length of one audio window in seconds. Windows never overlap.
pub const WINDOW_SECONDS: u64 = 10;

/// Sample rate every recording is resampled to upstream. Metadata only.
pub const TARGET_SAMPLE_RATE_HZ: u32 = 16_000;

/// Embedding width produced by the upstream model.
pub const PRODUCTION_DIM: usize = 2048;

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(transparent)]
pub struct WindowId(pub u64);

impl fmt::Display for WindowId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}", self.0)
    }
}

/// Maritime Mobile Service Identity of one vessel.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(transparent)]
pub struct Mmsi(pub u32);

impl Mmsi {
    pub fn new(raw: u64) -> Result<Self> {
        if raw == 0 || raw > 999_999_999 {
            return Err(invalid(format!("mmsi {raw} outside 1..=999999999")));
        }
        Ok(Mmsi(raw as u32))
    }
}

impl fmt::Display for Mmsi {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}", self.0)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "RawGeoPoint", into = "RawGeoPoint")]
pub struct GeoPoint {
    lat: f64,
    lon: f64,
}

#[derive(Serialize, Deserialize)]
struct RawGeoPoint {
    lat: f64,
    lon: f64,
}

impl TryFrom<RawGeoPoint> for GeoPoint {
    type Error = Error;
    fn try_from(raw: RawGeoPoint) -> Result<Self> {
        GeoPoint::new(raw.lat, raw.lon)
    }
}

impl From<GeoPoint> for RawGeoPoint {
    fn from(p: GeoPoint) -> Self {
        RawGeoPoint {
            lat: p.lat,
            lon: p.lon,
        }
    }
}

impl GeoPoint {
    /// Longitude is wrapped into `[-180, 180)`; latitude must already lie in
    /// `[-90, 90]`.
    pub fn new(lat: f64, lon: f64) -> Result<Self> {
        if !lat.is_finite() || !lon.is_finite() {
            return Err(invalid(format!("non-finite coordinate ({lat}, {lon})")));
        }
        if !(-90.0..=90.0).contains(&lat) {
            return Err(invalid(format!("latitude {lat} outside [-90, 90]")));
        }
        Ok(GeoPoint {
            lat,
            lon: wrap_lon(lon),
        })
    }

    pub fn lat(&self) -> f64 {
        self.lat
    }

    pub fn lon(&self) -> f64 {
        self.lon
    }
}

pub(crate) fn wrap_lon(lon: f64) -> f64 {
    if (-180.0..180.0).contains(&lon) {
        return lon;
    }
    let wrapped = (lon + 180.0).rem_euclid(360.0) - 180.0;
    // rem_euclid can round up to exactly 360 for tiny negative inputs
    if wrapped >= 180.0 {
        wrapped - 360.0
    } else {
        wrapped
    }
}

/// UTC timestamps are whole seconds since the Unix epoch. Text form is
/// `YYYY-MM-DDTHH:MM:SS`, optionally suffixed with `Z`.
pub mod timestamp {
    use chrono::{DateTime, NaiveDateTime};
    use serde::{Deserialize, Deserializer, Serializer};

    const FORMAT: &str = "%Y-%m-%dT%H:%M:%S";

    pub fn parse(text: &str) -> Option<i64> {
        let text = text.trim();
        let text = text.strip_suffix('Z').unwrap_or(text);
        NaiveDateTime::parse_from_str(text, FORMAT)
            .ok()
            .map(|t| t.and_utc().timestamp())
    }

    pub fn format(secs: i64) -> String {
        DateTime::from_timestamp(secs, 0)
            .map(|t| t.format(FORMAT).to_string())
            .unwrap_or_else(|| secs.to_string())
    }

    pub fn serialize<S: Serializer>(secs: &i64, s: S) -> Result<S::Ok, S::Error> {
        s.serialize_str(&format(*secs))
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<i64, D::Error> {
        let text = String::deserialize(d)?;
        parse(&text)
            .ok_or_else(|| serde::de::Error::custom(format!("bad timestamp {text:?}")))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Recording {
    pub id: String,
    #[serde(with = "timestamp")]
    pub start: i64,
    pub duration_s: u64,
    pub native_sample_rate_hz: u32,
}

impl Recording {
    pub fn window_count(&self) -> u64 {
        self.duration_s / WINDOW_SECONDS
    }

    pub fn end(&self) -> i64 {
        self.start + self.duration_s as i64
    }

    /// Offset of the complete window containing `time`, if any.
    pub fn window_offset_at(&self, time: i64) -> Option<u64> {
        if time < self.start {
            return None;
        }
        let index = (time - self.start) as u64 / WINDOW_SECONDS;
        (index < self.window_count()).then_some(index * WINDOW_SECONDS)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Hydrophone {
    pub id: String,
    pub location: GeoPoint,
    pub recordings: Vec<Recording>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DeploymentConfig {
    pub hydrophones: Vec<Hydrophone>,
}

impl DeploymentConfig {
    pub fn validate(&self) -> Result<()> {
        let mut ids = HashSet::new();
        for h in &self.hydrophones {
            check_token("hydrophone id", &h.id)?;
            if !ids.insert(h.id.as_str()) {
                return Err(invalid(format!("duplicate hydrophone id {:?}", h.id)));
            }
            let mut rec_ids = HashSet::new();
            for r in &h.recordings {
                check_token("recording id", &r.id)?;
                if !rec_ids.insert(r.id.as_str()) {
                    return Err(invalid(format!(
                        "duplicate recording id {:?} on hydrophone {:?}",
                        r.id, h.id
                    )));
                }
                if r.native_sample_rate_hz == 0 {
                    return Err(invalid(format!("recording {:?}: zero sample rate", r.id)));
                }
            }
            let mut spans: Vec<_> = h.recordings.iter().map(|r| (r.start, r.end())).collect();
            spans.sort_unstable();
            if let Some(w) = spans.windows(2).find(|w| w[1].0 < w[0].1) {
                return Err(invalid(format!(
                    "hydrophone {:?}: recordings overlap at {}",
                    h.id,
                    timestamp::format(w[1].0)
                )));
            }
        }
        Ok(())
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let config: DeploymentConfig =
            serde_json::from_str(text).map_err(|e| invalid(format!("deployment config: {e}")))?;
        config.validate()?;
        Ok(config)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_json(&text)
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("config serializes")
    }

    pub fn total_windows(&self) -> u64 {
        self.hydrophones
            .iter()
            .flat_map(|h| &h.recordings)
            .map(Recording::window_count)
            .sum()
    }

    /// Every window in the deployment, hydrophone by hydrophone in config order.
    pub fn windows(&self) -> impl Iterator<Item = AudioWindow> + '_ {
        self.hydrophones.iter().flat_map(|h| {
            h.recordings.iter().flat_map(move |r| {
                (0..r.window_count()).map(move |i| {
                    let offset_s = i * WINDOW_SECONDS;
                    AudioWindow {
                        window_id: hash_window(&h.id, &r.id, offset_s),
                        hydrophone_id: h.id.clone(),
                        recording_id: r.id.clone(),
                        offset_s,
                    }
                })
            })
        })
    }
}

fn check_token(what: &str, id: &str) -> Result<()> {
    if id.is_empty() {
        return Err(invalid(format!("{what} is empty")));
    }
    if id.contains('/') || id.chars().any(char::is_control) {
        return Err(invalid(format!("{what} {id:?} contains '/' or control characters")));
    }
    Ok(())
}

#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct AudioWindow {
    pub window_id: WindowId,
    pub hydrophone_id: String,
    pub recording_id: String,
    pub offset_s: u64,
}

/// Lookup from window id back to its location in the deployment.
#[derive(Debug, Clone, Default)]
pub struct WindowIndex {
    windows: HashMap<WindowId, AudioWindow>,
}

impl WindowIndex {
    /// Fails if two windows of the deployment hash to the same id.
    pub fn build(config: &DeploymentConfig) -> Result<Self> {
        let mut windows = HashMap::with_capacity(config.total_windows() as usize);
        let mut collisions = Vec::new();
        for w in config.windows() {
            let id = w.window_id;
            if windows.insert(id, w).is_some() {
                collisions.push(id);
            }
        }
        if !collisions.is_empty() {
            return Err(Error::DuplicateWindows(collisions));
        }
        Ok(WindowIndex { windows })
    }

    pub fn get(&self, id: WindowId) -> Option<&AudioWindow> {
        self.windows.get(&id)
    }

    pub fn len(&self) -> usize {
        self.windows.len()
    }

    pub fn is_empty(&self) -> bool {
        self.windows.is_empty()
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AisPulse {
    pub mmsi: Mmsi,
    pub time: i64,
    pub position: GeoPoint,
    pub vessel_type: Option<i32>,
}

/// Number of complete windows in a recording of `duration_s` seconds.
pub fn window_count(duration_s: i64) -> Result<u64> {
    if duration_s < 0 {
        return Err(invalid(format!("negative duration {duration_s}")));
    }
    Ok(duration_s as u64 / WINDOW_SECONDS)
}

/// Stable window identifier: the first eight bytes (little-endian) of the
/// SHA-256 digest of `"{hydrophone}/{recording}/{offset_s}"`.
pub fn window_id_of(hydrophone_id: &str, recording_id: &str, offset_s: u64) -> Result<WindowId> {
    if offset_s % WINDOW_SECONDS != 0 {
        return Err(invalid(format!(
            "offset {offset_s} is not a multiple of {WINDOW_SECONDS}"
        )));
    }
    check_token("hydrophone id", hydrophone_id)?;
    check_token("recording id", recording_id)?;
    Ok(hash_window(hydrophone_id, recording_id, offset_s))
}

fn hash_window(hydrophone_id: &str, recording_id: &str, offset_s: u64) -> WindowId {
    let digest = Sha256::digest(format!("{hydrophone_id}/{recording_id}/{offset_s}").as_bytes());
    let mut head = [0u8; 8];
    head.copy_from_slice(&digest[..8]);
    WindowId(u64::from_le_bytes(head))
}

/// Root-to-leaf cluster indices, one per hierarchy level.
#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct ClusterPath(pub Vec<u32>);

impl ClusterPath {
    pub fn leaf(&self) -> Option<u32> {
        self.0.last().copied()
    }
}

impl fmt::Display for ClusterPath {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        for (i, c) in self.0.iter().enumerate() {
            if i > 0 {
                f.write_str("/")?;
            }
            write!(f, "{c}")?;
        }
        Ok(())
    }
}

impl std::str::FromStr for ClusterPath {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        if s.is_empty() {
            return Err(invalid("empty cluster path"));
        }
        s.split('/')
            .map(|part| {
                part.parse::<u32>()
                    .map_err(|_| invalid(format!("bad cluster path component {part:?}")))
            })
            .collect::<Result<Vec<_>>>()
            .map(ClusterPath)
    }
}

impl Serialize for ClusterPath {
    fn serialize<S: serde::Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        s.collect_str(self)
    }
}

impl<'de> Deserialize<'de> for ClusterPath {
    fn deserialize<D: serde::Deserializer<'de>>(d: D) -> std::result::Result<Self, D::Error> {
        let text = String::deserialize(d)?;
        text.parse().map_err(serde::de::Error::custom)
    }
}

/// Per-hydrophone window totals, used in reports.
pub fn windows_per_hydrophone(config: &DeploymentConfig) -> BTreeMap<String, u64> {
    config
        .hydrophones
        .iter()
        .map(|h| (h.id.clone(), h.recordings.iter().map(Recording::window_count).sum()))
        .collect()
}
