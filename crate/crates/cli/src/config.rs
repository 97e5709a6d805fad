//! Experiment configuration files.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use r3dla::engine::{IdealMode, SimConfig};
use r3dla::recycle::RecycleMode;
use r3dla::skeleton::{gen_skeleton_versions, profile, SkeletonSet, TrainingParams};
use r3dla::uisa::{gen_workload, parse_program, random_program, StaticProgram, WorkloadParams};

use crate::CliError;

/// Environment variable that replaces the workload seed of every config.
pub const SEED_ENV: &str = "R3DLA_SEED";

/// Where the program comes from.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", deny_unknown_fields)]
pub enum Workload {
    /// One of the built-in generators.
    Generator(WorkloadParams),
    /// A random terminating program.
    Random { static_len: usize, outer_iters: u64 },
    /// An assembly file, relative to the config file.
    Program(PathBuf),
}

/// Which core runs the program.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Mode {
    Baseline,
    #[default]
    Dla,
}

/// Where the skeleton versions of a look-ahead run come from.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", deny_unknown_fields)]
pub enum SkeletonSource {
    /// Profile the program and generate all versions.
    Build { train_limit: u64 },
    /// A skeleton file written by `skel build`, relative to the config file.
    File(PathBuf),
    /// Branches and their backward slices only.
    ControlOnly,
    /// Every instruction.
    Full,
}

impl Default for SkeletonSource {
    fn default() -> Self {
        SkeletonSource::Build {
            train_limit: TrainingParams::default().limit,
        }
    }
}

fn default_limit() -> u64 {
    u64::MAX
}

/// One simulation: workload, machine, features and run bounds.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub workload: Workload,
    /// Generator seed; overridden by `R3DLA_SEED`.
    #[serde(default)]
    pub seed: u64,
    #[serde(default)]
    pub mode: Mode,
    #[serde(default)]
    pub sim: SimConfig,
    #[serde(default)]
    pub skeleton: SkeletonSource,
    /// Maximum committed instructions.
    #[serde(default = "default_limit")]
    pub limit: u64,
    /// Idealized front or back end (baseline runs only).
    #[serde(default)]
    pub ideal: IdealMode,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub max_cycles: Option<u64>,
    /// Report destination; stdout when absent.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub output: Option<PathBuf>,
}

impl ExperimentConfig {
    /// Reads a config file, resolving relative paths against its directory
    /// and applying the seed override.
    pub fn load(path: &Path) -> Result<Self, CliError> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| CliError::Config(format!("{}: {e}", path.display())))?;
        let mut cfg = Self::from_json(&text).map_err(|e| match e {
            CliError::Config(m) => CliError::Config(format!("{}: {m}", path.display())),
            other => other,
        })?;
        let base = path.parent().unwrap_or(Path::new("."));
        cfg.resolve_paths(base);
        cfg.apply_seed_override()?;
        Ok(cfg)
    }

    /// Parses and validates a config; paths are left as written.
    pub fn from_json(text: &str) -> Result<Self, CliError> {
        let de = &mut serde_json::Deserializer::from_str(text);
        let cfg: ExperimentConfig = serde_path_to_error::deserialize(de).map_err(|e| {
            let path = e.path().to_string();
            let inner = e.into_inner();
            if path == "." {
                CliError::Config(inner.to_string())
            } else {
                CliError::Config(format!("{path}: {inner}"))
            }
        })?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<(), CliError> {
        if self.limit == 0 {
            return Err(CliError::Config("limit: must be positive".into()));
        }
        if self.mode == Mode::Dla && self.ideal != IdealMode::None {
            return Err(CliError::Config("ideal: applies to baseline runs only".into()));
        }
        if let SkeletonSource::Build { train_limit: 0 } = self.skeleton {
            return Err(CliError::Config("skeleton.build.train_limit: must be positive".into()));
        }
        if let Workload::Random { static_len: 0, .. } = self.workload {
            return Err(CliError::Config("workload.random.static_len: must be positive".into()));
        }
        Ok(())
    }

    fn resolve_paths(&mut self, base: &Path) {
        let join = |p: &mut PathBuf| {
            if p.is_relative() {
                *p = base.join(&*p);
            }
        };
        if let Workload::Program(p) = &mut self.workload {
            join(p);
        }
        if let SkeletonSource::File(p) = &mut self.skeleton {
            join(p);
        }
        if let Some(p) = &mut self.output {
            join(p);
        }
    }

    fn apply_seed_override(&mut self) -> Result<(), CliError> {
        if let Ok(v) = std::env::var(SEED_ENV) {
            self.seed = v
                .trim()
                .parse()
                .map_err(|_| CliError::Config(format!("{SEED_ENV}: not an unsigned integer: {v:?}")))?;
        }
        Ok(())
    }

    /// SHA-256 of the canonical JSON form.
    pub fn hash(&self) -> String {
        let json = serde_json::to_string(self).expect("config serializes");
        hex::encode(Sha256::digest(json.as_bytes()))
    }

    pub fn program(&self) -> Result<StaticProgram, CliError> {
        match &self.workload {
            Workload::Generator(params) => {
                gen_workload(params, self.seed).map_err(|e| CliError::Config(format!("workload: {e}")))
            }
            Workload::Random {
                static_len,
                outer_iters,
            } => Ok(random_program(self.seed, *static_len, *outer_iters)),
            Workload::Program(path) => read_program(path),
        }
    }

    /// Skeleton versions for a look-ahead run.
    pub fn skeletons(&self, program: &StaticProgram) -> Result<SkeletonSet, CliError> {
        match &self.skeleton {
            SkeletonSource::Build { train_limit } => build_skeletons(program, *train_limit, &self.sim),
            SkeletonSource::File(path) => {
                let text = std::fs::read_to_string(path)
                    .map_err(|e| CliError::Config(format!("skeleton file {}: {e}", path.display())))?;
                let set = SkeletonSet::from_json(&text)
                    .map_err(|e| CliError::Config(format!("skeleton file {}: {e}", path.display())))?;
                set.validate(program)
                    .map_err(|e| CliError::Config(format!("skeleton file {}: {e}", path.display())))?;
                Ok(set)
            }
            SkeletonSource::ControlOnly => Ok(SkeletonSet::control_only(program)),
            SkeletonSource::Full => Ok(SkeletonSet::full(program)),
        }
    }
}

pub fn read_program(path: &Path) -> Result<StaticProgram, CliError> {
    let text = std::fs::read_to_string(path)
        .map_err(|e| CliError::Config(format!("program {}: {e}", path.display())))?;
    parse_program(&text).map_err(|e| CliError::Config(format!("program {}: {e}", path.display())))
}

/// Profiles `program` on the configured baseline core and generates every
/// skeleton version.
pub fn build_skeletons(program: &StaticProgram, train_limit: u64, sim: &SimConfig) -> Result<SkeletonSet, CliError> {
    let t = TrainingParams {
        limit: train_limit,
        core: sim.core.clone(),
    };
    let prof = profile(program, &t, &sim.cache).map_err(|e| CliError::Runtime(format!("training run: {e}")))?;
    Ok(gen_skeleton_versions(program, &prof))
}

/// Parses the `--recycle` flag: `off`, `dynamic` or `static:FILE`, where
/// FILE holds a JSON object from loop pc to version.
pub fn parse_recycle(arg: &str) -> Result<RecycleMode, CliError> {
    match arg {
        "off" => Ok(RecycleMode::Off),
        "dynamic" => Ok(RecycleMode::Dynamic),
        _ => {
            let Some(file) = arg.strip_prefix("static:") else {
                return Err(CliError::Config(format!(
                    "--recycle: expected off, dynamic or static:FILE, got {arg:?}"
                )));
            };
            let text = std::fs::read_to_string(file)
                .map_err(|e| CliError::Config(format!("--recycle {file}: {e}")))?;
            let map: BTreeMap<usize, usize> =
                serde_json::from_str(&text).map_err(|e| CliError::Config(format!("--recycle {file}: {e}")))?;
            Ok(RecycleMode::Static(map))
        }
    }
}
