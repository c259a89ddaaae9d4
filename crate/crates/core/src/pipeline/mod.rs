//! Resumable stage runner over a work directory.
//!
//! Each stage writes its artifacts under `<workdir>/<stage dir>/` and records
//! a [`StageRecord`] in `manifest.json`. A stage whose config, upstream
//! artifacts and own artifacts are unchanged is skipped; one that exists with
//! different inputs is only rebuilt with `force`.

mod config;
mod manifest;
mod stages;

use std::fmt;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use serde::Serialize;
use thiserror::Error;

pub use config::{EncoderChoice, MllmProvider, PipelineConfig, CONFIG_KEYS};
pub use manifest::{artifact_hash, Manifest, StageRecord, WorkdirLock, LOCK_FILE, MANIFEST_FILE};
pub use stages::{ablation_rows, AblationRow, Variant};

use crate::corpus::CorpusError;
use crate::descriptor::DescriptorError;
use crate::digest::sha256_hex;
use crate::embedder::EmbedError;
use crate::graph::GraphError;
use crate::model::ModelError;

#[derive(Debug, Error)]
pub enum PipelineError {
    #[error("config error: {0}")]
    Config(String),
    #[error("stage `{0}` has not been run")]
    StageMissing(Stage),
    #[error("stage `{stage}` is stale: {reason}")]
    Stale { stage: Stage, reason: String },
    #[error("stage `{stage}` already exists with {reason}; pass --force to rebuild it")]
    Exists { stage: Stage, reason: String },
    #[error("workdir is locked ({}); delete the file if no other run is active", .0.display())]
    Locked(PathBuf),
    #[error(transparent)]
    Corpus(#[from] CorpusError),
    #[error(transparent)]
    Descriptor(#[from] DescriptorError),
    #[error(transparent)]
    Embed(#[from] EmbedError),
    #[error(transparent)]
    Graph(#[from] GraphError),
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
}

impl PipelineError {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        PipelineError::Io {
            path: path.into(),
            source,
        }
    }

    /// Process exit code: 3 for missing or stale prerequisites, 4 for
    /// configuration problems, 1 otherwise.
    pub fn exit_code(&self) -> i32 {
        match self {
            PipelineError::StageMissing(_) | PipelineError::Stale { .. } => 3,
            PipelineError::Config(_) | PipelineError::Exists { .. } => 4,
            PipelineError::Descriptor(DescriptorError::BadConfig(_)) => 4,
            PipelineError::Graph(GraphError::BadConfig(_)) => 4,
            PipelineError::Model(ModelError::BadConfig(_)) => 4,
            _ => 1,
        }
    }
}

pub type Result<T> = std::result::Result<T, PipelineError>;

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize)]
#[serde(rename_all = "kebab-case")]
pub enum Stage {
    Prepare,
    Describe,
    Encode,
    BuildGraph,
    Train,
    Evaluate,
    ExportGraph,
    Ablate,
}

impl Stage {
    pub const ALL: [Stage; 8] = [
        Stage::Prepare,
        Stage::Describe,
        Stage::Encode,
        Stage::BuildGraph,
        Stage::Train,
        Stage::Evaluate,
        Stage::ExportGraph,
        Stage::Ablate,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Stage::Prepare => "prepare",
            Stage::Describe => "describe",
            Stage::Encode => "encode",
            Stage::BuildGraph => "build-graph",
            Stage::Train => "train",
            Stage::Evaluate => "evaluate",
            Stage::ExportGraph => "export-graph",
            Stage::Ablate => "ablate",
        }
    }

    /// Directory under the workdir holding the stage's artifacts.
    pub fn dir(self) -> &'static str {
        match self {
            Stage::BuildGraph => "graph",
            Stage::ExportGraph => "export",
            s => s.name(),
        }
    }

    pub fn deps(self) -> &'static [Stage] {
        match self {
            Stage::Prepare => &[],
            Stage::Describe => &[Stage::Prepare],
            Stage::Encode => &[Stage::Describe],
            Stage::BuildGraph => &[Stage::Prepare, Stage::Encode],
            Stage::Train => &[Stage::Prepare, Stage::Encode, Stage::BuildGraph],
            Stage::Evaluate => &[Stage::Prepare, Stage::Encode, Stage::BuildGraph, Stage::Train],
            Stage::ExportGraph => &[Stage::Prepare, Stage::BuildGraph],
            Stage::Ablate => &[Stage::Prepare, Stage::Encode],
        }
    }
}

impl fmt::Display for Stage {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Stage {
    type Err = String;

    fn from_str(s: &str) -> std::result::Result<Self, Self::Err> {
        Stage::ALL
            .into_iter()
            .find(|st| st.name() == s)
            .ok_or_else(|| format!("unknown stage {s:?}"))
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct RunOptions {
    /// Rebuild stages that already exist.
    pub force: bool,
    /// Use the offline description provider regardless of the config.
    pub stub: bool,
    /// Grid-search the similarity threshold and co-occurrence width when training.
    pub grid: bool,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum Status {
    Completed,
    UpToDate,
    Partial { failures: usize },
}

#[derive(Debug, Clone)]
pub struct StageOutcome {
    pub stage: Stage,
    pub status: Status,
    pub summary: serde_json::Value,
    /// Human-readable table, for stages that produce one.
    pub report: Option<String>,
}

impl StageOutcome {
    fn up_to_date(stage: Stage, record: &StageRecord) -> Self {
        StageOutcome {
            stage,
            status: Status::UpToDate,
            summary: record.summary.clone(),
            report: None,
        }
    }
}

pub struct Pipeline {
    cfg: PipelineConfig,
    opts: RunOptions,
    manifest: Manifest,
    _lock: WorkdirLock,
}

impl Pipeline {
    /// Validates the config, creates the workdir and takes its lock.
    pub fn open(mut cfg: PipelineConfig, opts: RunOptions) -> Result<Self> {
        if opts.stub {
            cfg.mllm_provider = MllmProvider::Stub;
        }
        cfg.validate()?;
        std::fs::create_dir_all(&cfg.workdir).map_err(|e| PipelineError::io(&cfg.workdir, e))?;
        let lock = WorkdirLock::acquire(&cfg.workdir)?;
        let manifest = Manifest::load(&cfg.workdir)?;
        Ok(Pipeline {
            cfg,
            opts,
            manifest,
            _lock: lock,
        })
    }

    pub fn config(&self) -> &PipelineConfig {
        &self.cfg
    }

    pub fn manifest(&self) -> &Manifest {
        &self.manifest
    }

    pub fn workdir(&self) -> &Path {
        &self.cfg.workdir
    }

    pub fn stage_dir(&self, stage: Stage) -> PathBuf {
        self.cfg.workdir.join(stage.dir())
    }

    pub fn run(&mut self, stage: Stage) -> Result<StageOutcome> {
        match stage {
            Stage::Prepare => self.prepare(),
            Stage::Describe => self.describe(),
            Stage::Encode => self.encode(),
            Stage::BuildGraph => self.build_graph(),
            Stage::Train => self.train(),
            Stage::Evaluate => self.evaluate(),
            Stage::ExportGraph => self.export_graph(),
            Stage::Ablate => self.ablate(&Variant::ALL),
        }
    }

    fn record_of(&self, stage: Stage) -> Result<&StageRecord> {
        self.manifest
            .stages
            .get(stage.name())
            .ok_or(PipelineError::StageMissing(stage))
    }

    /// Hash of the recorded artifact hashes of `stage`'s prerequisites.
    fn recorded_upstream(&self, deps: &[Stage]) -> Result<String> {
        let mut acc = String::new();
        for &d in deps {
            acc.push_str(&format!("{}={}\n", d.name(), self.record_of(d)?.artifact_hash));
        }
        Ok(sha256_hex(acc))
    }

    /// Checks that every prerequisite exists, is unmodified on disk and was
    /// itself built from the current artifacts of its own prerequisites.
    fn verify_chain(&self, deps: &[Stage]) -> Result<()> {
        for &d in deps {
            let rec = self.record_of(d)?;
            if !rec.complete && d != Stage::Describe {
                return Err(PipelineError::Stale {
                    stage: d,
                    reason: "the stage did not complete".into(),
                });
            }
            let on_disk = artifact_hash(&self.stage_dir(d), &rec.files).map_err(|_| PipelineError::Stale {
                stage: d,
                reason: "artifact files are missing".into(),
            })?;
            if on_disk != rec.artifact_hash {
                return Err(PipelineError::Stale {
                    stage: d,
                    reason: "artifact files changed since they were recorded".into(),
                });
            }
            self.verify_chain(d.deps())?;
            if rec.upstream_hash != self.recorded_upstream(d.deps())? {
                return Err(PipelineError::Stale {
                    stage: d,
                    reason: "it was built from different upstream artifacts; rerun it".into(),
                });
            }
        }
        Ok(())
    }

    /// Verifies prerequisites and returns the upstream hash for `stage`, or
    /// `None` when the recorded run is current and no rebuild is forced.
    fn begin(&self, stage: Stage, deps: &[Stage], config_hash: &str) -> Result<Option<String>> {
        self.verify_chain(deps)?;
        let upstream = self.recorded_upstream(deps)?;
        let Some(rec) = self.manifest.stages.get(stage.name()) else {
            return Ok(Some(upstream));
        };
        if self.opts.force || !rec.complete {
            return Ok(Some(upstream));
        }
        let intact = artifact_hash(&self.stage_dir(stage), &rec.files).ok().as_deref() == Some(&rec.artifact_hash);
        let reason = if rec.config_hash != config_hash {
            "a different config"
        } else if rec.upstream_hash != upstream {
            "different upstream artifacts"
        } else if !intact {
            "modified or missing artifact files"
        } else {
            return Ok(None);
        };
        Err(PipelineError::Exists {
            stage,
            reason: reason.into(),
        })
    }

    fn finish(
        &mut self,
        stage: Stage,
        config_hash: String,
        upstream_hash: String,
        files: Vec<String>,
        complete: bool,
        summary: serde_json::Value,
    ) -> Result<()> {
        let artifact_hash = artifact_hash(&self.stage_dir(stage), &files)?;
        self.manifest.stages.insert(
            stage.name().to_string(),
            StageRecord {
                config_hash,
                upstream_hash,
                artifact_hash,
                files,
                complete,
                summary,
            },
        );
        self.manifest.save(&self.cfg.workdir)
    }

    fn stage_dir_created(&self, stage: Stage) -> Result<PathBuf> {
        let dir = self.stage_dir(stage);
        std::fs::create_dir_all(&dir).map_err(|e| PipelineError::io(&dir, e))?;
        Ok(dir)
    }
}

pub(crate) fn hash_json(value: &serde_json::Value) -> String {
    sha256_hex(value.to_string())
}
