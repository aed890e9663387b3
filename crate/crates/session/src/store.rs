//! On-disk run archive.
//!
//! ```text
//! <root>/<run_id>/run.json            RunMeta
//! <root>/<run_id>/events.jsonl        one engine Event per line, append-only
//! <root>/<run_id>/gen<G>/ind<K>.genome.json
//! <root>/<run_id>/gen<G>/ind<K>.stl
//! <root>/<run_id>/gen<G>/ind<K>.vox
//! ```

use std::fs::{self, File, OpenOptions};
use std::io::{BufRead, BufReader, Write};
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use supershape_core::evolve::Event;
use supershape_core::{GAConfig, GenomeKind, Individual, IndividualId};
use thiserror::Error;

#[derive(Debug, Error)]
pub enum StoreError {
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        source: std::io::Error,
    },
    #[error("run {run_id}: {reason}")]
    Corrupt { run_id: String, reason: String },
}

fn io(path: &Path) -> impl FnOnce(std::io::Error) -> StoreError + '_ {
    move |source| StoreError::Io {
        path: path.to_owned(),
        source,
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RunMode {
    BasicVawt,
    ExtendedVawt,
}

impl RunMode {
    pub fn genome_kind(self) -> GenomeKind {
        match self {
            RunMode::BasicVawt => GenomeKind::Basic,
            RunMode::ExtendedVawt => GenomeKind::Extended,
        }
    }

    /// Smoothing passes applied to exported meshes.
    pub fn default_smoothing_steps(self) -> usize {
        match self {
            RunMode::BasicVawt => 3,
            RunMode::ExtendedVawt => 50,
        }
    }

    pub fn seed_name(self) -> &'static str {
        match self {
            RunMode::BasicVawt => "vawt_star_seed",
            RunMode::ExtendedVawt => "vawt_extended_seed",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunMeta {
    pub run_id: String,
    pub mode: RunMode,
    pub config: GAConfig,
    pub smoothing_steps: usize,
    pub created: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub request_token: Option<String>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ArtifactKind {
    Genome,
    Stl,
    Vox,
}

impl ArtifactKind {
    fn extension(self) -> &'static str {
        match self {
            ArtifactKind::Genome => "genome.json",
            ArtifactKind::Stl => "stl",
            ArtifactKind::Vox => "vox",
        }
    }
}

/// A run read back from disk.
#[derive(Debug)]
pub struct StoredRun {
    pub meta: RunMeta,
    pub events: Vec<Event>,
}

#[derive(Debug, Clone)]
pub struct RunStore {
    root: PathBuf,
}

impl RunStore {
    pub fn open(root: impl Into<PathBuf>) -> Result<Self, StoreError> {
        let root = root.into();
        fs::create_dir_all(&root).map_err(io(&root))?;
        Ok(Self { root })
    }

    pub fn root(&self) -> &Path {
        &self.root
    }

    pub fn run_dir(&self, run_id: &str) -> PathBuf {
        self.root.join(run_id)
    }

    pub fn artifact_path(&self, run_id: &str, ind: &Individual, kind: ArtifactKind) -> PathBuf {
        self.run_dir(run_id)
            .join(format!("gen{}", ind.generation))
            .join(format!("ind{}.{}", ind.id, kind.extension()))
    }

    /// Creates the run directory with its metadata and an empty log.
    pub fn create(&self, meta: &RunMeta) -> Result<(), StoreError> {
        let dir = self.run_dir(&meta.run_id);
        fs::create_dir(&dir).map_err(io(&dir))?;
        let json = serde_json::to_vec_pretty(meta).expect("metadata serializes");
        write_atomic(&dir.join("run.json"), &json)?;
        let log = dir.join("events.jsonl");
        File::create(&log).map_err(io(&log))?;
        Ok(())
    }

    /// Appends events and flushes them to disk.
    pub fn append(&self, run_id: &str, events: &[Event]) -> Result<(), StoreError> {
        if events.is_empty() {
            return Ok(());
        }
        let path = self.run_dir(run_id).join("events.jsonl");
        let mut buf = Vec::new();
        for e in events {
            serde_json::to_writer(&mut buf, e).expect("events serialize");
            buf.push(b'\n');
        }
        let mut f = OpenOptions::new()
            .append(true)
            .open(&path)
            .map_err(io(&path))?;
        f.write_all(&buf).map_err(io(&path))?;
        f.sync_data().map_err(io(&path))
    }

    pub fn write_artifact(
        &self,
        run_id: &str,
        ind: &Individual,
        kind: ArtifactKind,
        bytes: &[u8],
    ) -> Result<(), StoreError> {
        let path = self.artifact_path(run_id, ind, kind);
        let dir = path.parent().expect("artifact has a directory");
        fs::create_dir_all(dir).map_err(io(dir))?;
        write_atomic(&path, bytes)
    }

    pub fn read_artifact(
        &self,
        run_id: &str,
        ind: &Individual,
        kind: ArtifactKind,
    ) -> Result<Vec<u8>, StoreError> {
        let path = self.artifact_path(run_id, ind, kind);
        fs::read(&path).map_err(io(&path))
    }

    /// Every run under the root, in directory-name order.
    pub fn load_all(&self) -> Result<Vec<StoredRun>, StoreError> {
        let mut dirs: Vec<PathBuf> = fs::read_dir(&self.root)
            .map_err(io(&self.root))?
            .filter_map(|e| e.ok().map(|e| e.path()))
            .filter(|p| p.join("run.json").is_file())
            .collect();
        dirs.sort();
        dirs.iter().map(|d| self.load(d)).collect()
    }

    fn load(&self, dir: &Path) -> Result<StoredRun, StoreError> {
        let run_id = dir
            .file_name()
            .map(|n| n.to_string_lossy().into_owned())
            .unwrap_or_default();
        let corrupt = |reason: String| StoreError::Corrupt {
            run_id: run_id.clone(),
            reason,
        };
        let meta_path = dir.join("run.json");
        let meta: RunMeta = serde_json::from_slice(&fs::read(&meta_path).map_err(io(&meta_path))?)
            .map_err(|e| corrupt(format!("run.json: {e}")))?;
        if meta.run_id != run_id {
            return Err(corrupt(format!(
                "run.json names run {} but lives in {run_id}",
                meta.run_id
            )));
        }
        let log = dir.join("events.jsonl");
        let file = File::open(&log).map_err(io(&log))?;
        let mut events = Vec::new();
        for (n, line) in BufReader::new(file).lines().enumerate() {
            let line = line.map_err(io(&log))?;
            if line.trim().is_empty() {
                continue;
            }
            let event = serde_json::from_str(&line)
                .map_err(|e| corrupt(format!("events.jsonl line {}: {e}", n + 1)))?;
            events.push(event);
        }
        Ok(StoredRun { meta, events })
    }
}

/// Writes through a temporary sibling and renames, so readers never see a
/// partial file.
fn write_atomic(path: &Path, bytes: &[u8]) -> Result<(), StoreError> {
    let mut tmp = path.as_os_str().to_owned();
    tmp.push(".tmp");
    let tmp = PathBuf::from(tmp);
    let mut f = File::create(&tmp).map_err(io(&tmp))?;
    f.write_all(bytes).map_err(io(&tmp))?;
    f.sync_data().map_err(io(&tmp))?;
    fs::rename(&tmp, path).map_err(io(path))
}

/// Ids of the individuals born in `events`.
pub fn born(events: &[Event]) -> Vec<IndividualId> {
    events
        .iter()
        .filter_map(|e| match e {
            Event::Birth { id, .. } => Some(*id),
            _ => None,
        })
        .collect()
}
