//! `plan.json`: the solved trajectory with enough provenance to rebuild the
//! problem it came from.

use std::fs;
use std::path::{Path, PathBuf};

use nalgebra::DVector;
use projopt::model::parse_model;
use projopt::nlpsolver::{max_violation, NlpProblem, SolverOptions, SolverResult};
use projopt::transcription::{assemble_nlp, parse_task, TaskSpec, Transcription, TrajectorySolution};
use projopt::tvlqr::GainSchedule;
use projopt::RobotModel;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{CliError, Result};

pub const BUNDLE_FORMAT: u32 = 1;

pub fn sha256_hex(bytes: &[u8]) -> String {
    Sha256::digest(bytes).iter().map(|b| format!("{b:02x}")).collect()
}

/// Task edits applied after parsing.
#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
pub struct Overrides {
    /// Nodes in every phase.
    pub nodes: Option<usize>,
    /// Friction coefficient of every phase.
    pub friction: Option<f64>,
}

impl Overrides {
    pub fn apply(&self, task: &mut TaskSpec) {
        for p in &mut task.phases {
            if let Some(n) = self.nodes {
                p.nodes = n;
            }
            if let Some(mu) = self.friction {
                p.friction = mu;
            }
        }
    }
}

/// Model and task read from disk, with their digests.
#[derive(Debug, Clone)]
pub struct Inputs {
    pub model_path: PathBuf,
    pub task_path: PathBuf,
    pub model_sha256: String,
    pub task_sha256: String,
    pub model: RobotModel,
    pub task: TaskSpec,
}

fn read(path: &Path) -> Result<String> {
    fs::read_to_string(path).map_err(CliError::io(path))
}

impl Inputs {
    pub fn load(model_path: &Path, task_path: &Path, overrides: &Overrides) -> Result<Inputs> {
        let model_text = read(model_path)?;
        let task_text = read(task_path)?;
        let model = parse_model(&model_text).map_err(|e| located(model_path, e))?;
        let mut task = parse_task(&task_text, &model).map_err(|e| located(task_path, e))?;
        overrides.apply(&mut task);
        task.validate(&model)?;
        Ok(Inputs {
            model_path: model_path.to_path_buf(),
            task_path: task_path.to_path_buf(),
            model_sha256: sha256_hex(model_text.as_bytes()),
            task_sha256: sha256_hex(task_text.as_bytes()),
            model,
            task,
        })
    }

    pub fn transcription(&self) -> Result<Transcription> {
        Ok(assemble_nlp(&self.model, &self.task)?)
    }
}

fn located(path: &Path, e: projopt::Error) -> CliError {
    CliError::Usage(format!("{}: {e}", path.display()))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Provenance {
    pub tool: String,
    pub version: String,
    pub model_path: PathBuf,
    pub model_sha256: String,
    pub task_path: PathBuf,
    pub task_sha256: String,
    pub overrides: Overrides,
    pub solver: SolverOptions,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PlanBundle {
    pub format: u32,
    pub provenance: Provenance,
    pub result: SolverResult,
    pub trajectory: TrajectorySolution,
    pub gains: Option<GainSchedule>,
}

impl PlanBundle {
    pub fn new(inputs: &Inputs, overrides: Overrides, solver: SolverOptions, result: SolverResult, trajectory: TrajectorySolution) -> Self {
        let absolute = |p: &Path| fs::canonicalize(p).unwrap_or_else(|_| p.to_path_buf());
        PlanBundle {
            format: BUNDLE_FORMAT,
            provenance: Provenance {
                tool: env!("CARGO_PKG_NAME").to_owned(),
                version: env!("CARGO_PKG_VERSION").to_owned(),
                model_path: absolute(&inputs.model_path),
                model_sha256: inputs.model_sha256.clone(),
                task_path: absolute(&inputs.task_path),
                task_sha256: inputs.task_sha256.clone(),
                overrides,
                solver,
            },
            result,
            trajectory,
            gains: None,
        }
    }

    pub fn load(path: &Path) -> Result<PlanBundle> {
        let text = read(path)?;
        let bundle: PlanBundle = serde_json::from_str(&text).map_err(|source| CliError::Json {
            path: path.to_path_buf(),
            source,
        })?;
        if bundle.format != BUNDLE_FORMAT {
            return Err(CliError::Usage(format!(
                "{}: bundle format {} is not supported (expected {BUNDLE_FORMAT})",
                path.display(),
                bundle.format
            )));
        }
        Ok(bundle)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let text = serde_json::to_string_pretty(self).map_err(|source| CliError::Json {
            path: path.to_path_buf(),
            source,
        })?;
        fs::write(path, text + "\n").map_err(CliError::io(path))
    }

    /// Reloads the model and task (from the recorded paths unless replaced)
    /// and checks their digests against the bundle.
    pub fn inputs(&self, model: Option<&Path>, task: Option<&Path>) -> Result<Inputs> {
        let pv = &self.provenance;
        let inputs = Inputs::load(
            model.unwrap_or(&pv.model_path),
            task.unwrap_or(&pv.task_path),
            &pv.overrides,
        )?;
        if inputs.model_sha256 != pv.model_sha256 {
            return Err(CliError::Provenance(format!(
                "model {} has sha256 {}, bundle recorded {}",
                inputs.model_path.display(),
                inputs.model_sha256,
                pv.model_sha256
            )));
        }
        if inputs.task_sha256 != pv.task_sha256 {
            return Err(CliError::Provenance(format!(
                "task {} has sha256 {}, bundle recorded {}",
                inputs.task_path.display(),
                inputs.task_sha256,
                pv.task_sha256
            )));
        }
        Ok(inputs)
    }

    /// Constraint violation of the stored decision vector, recomputed.
    pub fn recomputed_violation(&self, problem: &Transcription) -> Result<f64> {
        let y = DVector::from_column_slice(&self.result.y);
        if y.len() != problem.n_vars() {
            return Err(CliError::Provenance(format!(
                "bundle stores {} variables, the problem has {}",
                y.len(),
                problem.n_vars()
            )));
        }
        let (lo, hi) = problem.con_bounds();
        Ok(max_violation(&problem.constraints(&y)?, &lo, &hi))
    }
}
