//! Run registry: one JSON file listing every run plus a directory per run.
//!
//! The registry file is replaced atomically (write to a temporary file, then
//! rename), so a crash never leaves a half-written list behind.

use std::collections::BTreeMap;
use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use chrono::{DateTime, Utc};
use serde::{Deserialize, Serialize};

use crate::config::RunConfig;
use crate::runner::Summary;

pub const REGISTRY_FILE: &str = "registry.json";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum RunStatus {
    Queued,
    Running,
    Done,
    Failed,
}

impl RunStatus {
    fn rank(self) -> u8 {
        match self {
            Self::Queued => 0,
            Self::Running => 1,
            Self::Done | Self::Failed => 2,
        }
    }

    pub fn is_final(self) -> bool {
        self.rank() == 2
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunRecord {
    pub id: String,
    pub config: RunConfig,
    pub status: RunStatus,
    pub created: DateTime<Utc>,
    pub started: Option<DateTime<Utc>>,
    pub finished: Option<DateTime<Utc>>,
    pub message: Option<String>,
    /// Artifact name to file name inside the run directory.
    pub results: BTreeMap<String, String>,
    pub summary: Option<Summary>,
    pub parent: Option<String>,
    pub children: Vec<String>,
}

#[derive(Debug, Default, Serialize, Deserialize)]
struct RegistryFile {
    runs: Vec<RunRecord>,
}

#[derive(Debug)]
pub struct Registry {
    root: PathBuf,
    runs: Vec<RunRecord>,
}

pub fn run_id(n: u64) -> String {
    format!("run-{n:06}")
}

fn id_number(id: &str) -> Option<u64> {
    id.strip_prefix("run-")?.parse().ok()
}

impl Registry {
    pub fn open(root: &Path) -> Result<Self> {
        fs::create_dir_all(root.join("runs")).with_context(|| format!("creating {}", root.display()))?;
        let path = root.join(REGISTRY_FILE);
        let runs = if path.exists() {
            let text = fs::read_to_string(&path).with_context(|| format!("reading {}", path.display()))?;
            serde_json::from_str::<RegistryFile>(&text)
                .with_context(|| format!("parsing {}", path.display()))?
                .runs
        } else {
            Vec::new()
        };
        Ok(Self {
            root: root.to_path_buf(),
            runs,
        })
    }

    pub fn root(&self) -> &Path {
        &self.root
    }

    pub fn run_dir(&self, id: &str) -> PathBuf {
        self.root.join("runs").join(id)
    }

    pub fn list(&self) -> &[RunRecord] {
        &self.runs
    }

    pub fn get(&self, id: &str) -> Option<&RunRecord> {
        self.runs.iter().find(|r| r.id == id)
    }

    fn next_number(&self) -> u64 {
        self.runs.iter().filter_map(|r| id_number(&r.id)).max().unwrap_or(0) + 1
    }

    /// Register a queued run and create its directory.
    pub fn create(&mut self, config: RunConfig, parent: Option<String>) -> Result<RunRecord> {
        let id = run_id(self.next_number());
        fs::create_dir_all(self.run_dir(&id))?;
        let rec = RunRecord {
            id,
            config,
            status: RunStatus::Queued,
            created: Utc::now(),
            started: None,
            finished: None,
            message: None,
            results: BTreeMap::new(),
            summary: None,
            parent,
            children: Vec::new(),
        };
        self.runs.push(rec.clone());
        self.save()?;
        Ok(rec)
    }

    /// Apply `f` to a run and persist. Status may only move forward.
    pub fn update(&mut self, id: &str, f: impl FnOnce(&mut RunRecord)) -> Result<RunRecord> {
        let k = self
            .runs
            .iter()
            .position(|r| r.id == id)
            .with_context(|| format!("unknown run {id}"))?;
        let mut rec = self.runs[k].clone();
        let before = rec.status;
        f(&mut rec);
        if rec.status.rank() < before.rank() || (before.is_final() && rec.status != before) {
            bail!("run {id}: status cannot go from {before:?} to {:?}", rec.status);
        }
        if before != rec.status {
            match rec.status {
                RunStatus::Running => rec.started = Some(Utc::now()),
                RunStatus::Done | RunStatus::Failed => rec.finished = Some(Utc::now()),
                RunStatus::Queued => {}
            }
        }
        self.runs[k] = rec.clone();
        self.save()?;
        Ok(rec)
    }

    pub fn save(&self) -> Result<()> {
        let path = self.root.join(REGISTRY_FILE);
        let tmp = self.root.join(format!("{REGISTRY_FILE}.tmp"));
        let body = serde_json::to_vec_pretty(&RegistryFile {
            runs: self.runs.clone(),
        })?;
        {
            let mut f = fs::File::create(&tmp)?;
            f.write_all(&body)?;
            f.sync_all()?;
        }
        fs::rename(&tmp, &path).with_context(|| format!("replacing {}", path.display()))?;
        Ok(())
    }
}
