//! Curation manifests: one JSON object per line, keys in canonical order,
//! lines sorted by window id.

use std::fmt;
use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, ParseError, Result};
use crate::model::{AudioWindow, ClusterPath, Mmsi, WindowId};

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Source {
    Ais,
    Hkmeans,
}

impl fmt::Display for Source {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Source::Ais => "ais",
            Source::Hkmeans => "hkmeans",
        })
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ManifestEntry {
    pub window_id: WindowId,
    pub hydrophone_id: String,
    pub recording_id: String,
    pub offset_s: u64,
    pub source: Source,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub mmsi: Option<Mmsi>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub cluster_path: Option<ClusterPath>,
}

impl ManifestEntry {
    pub fn new(window: &AudioWindow, source: Source) -> Self {
        ManifestEntry {
            window_id: window.window_id,
            hydrophone_id: window.hydrophone_id.clone(),
            recording_id: window.recording_id.clone(),
            offset_s: window.offset_s,
            source,
            mmsi: None,
            cluster_path: None,
        }
    }
}

/// The assembled dataset. Entries tagged `ais` form the curated AIS subset,
/// entries tagged `hkmeans` the cluster-curated subset, and the whole
/// manifest is their union.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct CurationManifest {
    entries: Vec<ManifestEntry>,
}

impl CurationManifest {
    /// Sorts by window id; any id occurring twice is an error listing every
    /// duplicated id.
    pub fn from_entries(mut entries: Vec<ManifestEntry>) -> Result<Self> {
        entries.sort_by_key(|e| e.window_id);
        let mut dups: Vec<WindowId> = entries
            .windows(2)
            .filter(|w| w[0].window_id == w[1].window_id)
            .map(|w| w[0].window_id)
            .collect();
        dups.dedup();
        if !dups.is_empty() {
            return Err(Error::DuplicateWindows(dups));
        }
        Ok(CurationManifest { entries })
    }

    pub fn entries(&self) -> &[ManifestEntry] {
        &self.entries
    }

    pub fn into_entries(self) -> Vec<ManifestEntry> {
        self.entries
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn count(&self, source: Source) -> usize {
        self.entries.iter().filter(|e| e.source == source).count()
    }

    pub fn encode<W: Write>(&self, mut out: W) -> Result<()> {
        for e in &self.entries {
            serde_json::to_writer(&mut out, e).map_err(std::io::Error::from)?;
            out.write_all(b"\n")?;
        }
        out.flush()?;
        Ok(())
    }

    pub fn to_text(&self) -> String {
        let mut buf = Vec::new();
        self.encode(&mut buf).expect("writing to memory");
        String::from_utf8(buf).expect("manifest is utf-8")
    }

    pub fn decode<R: BufRead>(input: R) -> Result<Self> {
        let mut entries = Vec::new();
        for (i, line) in input.lines().enumerate() {
            let line = line?;
            if line.trim().is_empty() {
                continue;
            }
            let entry: ManifestEntry =
                serde_json::from_str(&line).map_err(|e| ParseError::Line {
                    line: i + 1,
                    message: e.to_string(),
                })?;
            entries.push(entry);
        }
        Self::from_entries(entries)
    }
}

pub fn write_manifest(manifest: &CurationManifest, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    let file = File::create(path).map_err(|e| Error::io(path, e))?;
    manifest.encode(BufWriter::new(file))
}

pub fn read_manifest(path: impl AsRef<Path>) -> Result<CurationManifest> {
    let path = path.as_ref();
    let file = File::open(path).map_err(|e| Error::io(path, e))?;
    CurationManifest::decode(BufReader::new(file))
}
