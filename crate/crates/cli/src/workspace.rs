//! On-disk layout, stage markers and failure records.
//!
//! ```text
//! <output_dir>/<data-id>/            template, phantom, preprocess, register, jacobian
//! <output_dir>/<data-id>/runs/<run-id>/  balance .. report, config.json
//! ```
//!
//! The data id hashes only the settings the data stages read, so runs that
//! differ in training settings share registrations.

use std::fs;
use std::path::{Path, PathBuf};
use std::time::Instant;

use anyhow::{Context, Result};
use serde::Serialize;

use crate::artifacts;
use crate::config::{Arm, PipelineConfig};
use crate::error::exit_code;
use crate::stages;

pub const MARKER: &str = "stage.json";

#[derive(Debug, Clone, Copy, PartialEq, Eq, clap::ValueEnum)]
pub enum Stage {
    Phantom,
    Preprocess,
    Register,
    Jacobian,
    Balance,
    Train,
    Evaluate,
    Explain,
    RankRegions,
    Render,
    Report,
}

impl Stage {
    pub const DATA: [Stage; 4] = [Stage::Phantom, Stage::Preprocess, Stage::Register, Stage::Jacobian];
    pub const PER_ARM: [Stage; 6] = [
        Stage::Balance,
        Stage::Train,
        Stage::Evaluate,
        Stage::Explain,
        Stage::RankRegions,
        Stage::Render,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Stage::Phantom => "phantom",
            Stage::Preprocess => "preprocess",
            Stage::Register => "register",
            Stage::Jacobian => "jacobian",
            Stage::Balance => "balance",
            Stage::Train => "train",
            Stage::Evaluate => "evaluate",
            Stage::Explain => "explain",
            Stage::RankRegions => "rank",
            Stage::Render => "render",
            Stage::Report => "report",
        }
    }

    pub fn is_data(self) -> bool {
        Self::DATA.contains(&self)
    }
}

#[derive(Serialize)]
struct ErrorRecord<'a> {
    stage: &'a str,
    arm: Option<&'a str>,
    exit_code: i32,
    message: String,
}

pub struct Workspace {
    pub config: PipelineConfig,
    pub data_dir: PathBuf,
    pub run_dir: PathBuf,
    pub force: bool,
}

fn write_json(path: &Path, value: &impl Serialize) -> Result<()> {
    if let Some(parent) = path.parent() {
        fs::create_dir_all(parent).with_context(|| format!("create {}", parent.display()))?;
    }
    let text = serde_json::to_string_pretty(value)? + "\n";
    fs::write(path, text).with_context(|| format!("write {}", path.display()))
}

impl Workspace {
    /// Create the directories and record the configuration.
    pub fn open(config: PipelineConfig, force: bool) -> Result<Self> {
        let data_dir = config.output_dir.join(config.data_id());
        let run_dir = data_dir.join("runs").join(config.run_id());
        fs::create_dir_all(&run_dir).with_context(|| format!("create {}", run_dir.display()))?;
        write_json(&run_dir.join("config.json"), &config.record())?;
        Ok(Self {
            config,
            data_dir,
            run_dir,
            force,
        })
    }

    /// Directory a stage writes into.
    pub fn stage_dir(&self, stage: Stage, arm: Option<Arm>) -> PathBuf {
        let base = if stage.is_data() { &self.data_dir } else { &self.run_dir };
        match arm {
            Some(a) => base.join(stage.name()).join(a.name()),
            None => base.join(stage.name()),
        }
    }

    pub fn is_done(&self, stage: Stage, arm: Option<Arm>) -> bool {
        self.stage_dir(stage, arm).join(MARKER).is_file()
    }

    /// Run one stage unless its marker says it already completed. The report
    /// is cheap and depends on whichever arms exist, so it always reruns.
    pub fn run(&self, stage: Stage, arm: Option<Arm>) -> Result<()> {
        let label = match arm {
            Some(a) => format!("{}/{}", stage.name(), a),
            None => stage.name().to_string(),
        };
        if !self.force && stage != Stage::Report && self.is_done(stage, arm) {
            eprintln!("[{label}] up to date");
            return Ok(());
        }
        let dir = self.stage_dir(stage, arm);
        if dir.exists() {
            fs::remove_dir_all(&dir).with_context(|| format!("clear {}", dir.display()))?;
        }
        fs::create_dir_all(&dir).with_context(|| format!("create {}", dir.display()))?;
        let start = Instant::now();
        eprintln!("[{label}] start");
        let result = stages::execute(self, stage, arm, &dir);
        let manifests = self.write_manifests();
        match result.and(manifests) {
            Ok(()) => {
                write_json(
                    &dir.join(MARKER),
                    &serde_json::json!({ "stage": stage.name(), "arm": arm.map(Arm::name) }),
                )?;
                self.write_manifests()?;
                let _ = fs::remove_file(self.run_dir.join(crate::ERROR_FILE));
                eprintln!("[{label}] done in {:.1} s", start.elapsed().as_secs_f64());
                Ok(())
            }
            Err(e) => {
                let e = e.context(format!("stage {label} failed"));
                let record = ErrorRecord {
                    stage: stage.name(),
                    arm: arm.map(Arm::name),
                    exit_code: exit_code(&e),
                    message: format!("{e:#}"),
                };
                // keep whatever the stage wrote; the record is best effort
                let _ = write_json(&self.run_dir.join(crate::ERROR_FILE), &record);
                Err(e)
            }
        }
    }

    /// Refresh `artifacts.json` at both levels.
    pub fn write_manifests(&self) -> Result<()> {
        artifacts::write_manifest(&self.data_dir, &["runs"])?;
        artifacts::write_manifest(&self.run_dir, &[])?;
        Ok(())
    }

    /// Every stage for `arms`, in order.
    pub fn pipeline(&self, arms: &[Arm]) -> Result<()> {
        for stage in Stage::DATA {
            self.run(stage, None)?;
        }
        for &arm in arms {
            for stage in Stage::PER_ARM {
                self.run(stage, Some(arm))?;
            }
        }
        self.run(Stage::Report, None)
    }
}
