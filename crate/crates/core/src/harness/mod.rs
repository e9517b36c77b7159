//! Compile-and-run harness for the expert-authored C programs in a problem pack.
//!
//! Each compile and each run gets its own scratch directory under the harness root,
//! removed when the job finishes. Jobs are admitted through a bounded gate so that at
//! most `workers` compiler or program processes run at once. OS-level isolation is
//! delegated to a [`Sandbox`] hook whose default does nothing.

mod normalize;
mod process;
mod validate;

use std::collections::HashMap;
use std::io;
use std::path::{Path, PathBuf};
use std::process::Command;
use std::sync::{Arc, Condvar, Mutex};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use tempfile::TempDir;
use thiserror::Error;

pub use normalize::normalize_output;
pub use process::{ExitKind, Limits, RunResult};
pub use validate::{validate_prefeedback, UnderstandingOutcome};

pub const SOURCE_PLACEHOLDER: &str = "{source}";
pub const OUTPUT_PLACEHOLDER: &str = "{output}";

const COMPILE_WALL_MS: u64 = 60_000;
const COMPILE_OUTPUT_BYTES: usize = 1 << 20;

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default)]
pub struct HarnessConfig {
    /// Whitespace-separated command with `{source}` and `{output}` placeholders.
    pub compiler_command: String,
    pub wall_ms: u64,
    pub max_output_bytes: usize,
    pub workers: usize,
    /// Root for scratch directories; a private temp dir when unset.
    pub work_root: Option<PathBuf>,
}

impl Default for HarnessConfig {
    fn default() -> Self {
        HarnessConfig {
            compiler_command: "cc -std=c99 -Wall -Wextra -O1 -o {output} {source}".into(),
            wall_ms: 5000,
            max_output_bytes: 65536,
            workers: std::thread::available_parallelism().map_or(4, |n| n.get()),
            work_root: None,
        }
    }
}

impl HarnessConfig {
    pub fn limits(&self) -> Limits {
        Limits { wall_ms: self.wall_ms, max_output_bytes: self.max_output_bytes }
    }
}

#[derive(Debug, Error)]
pub enum HarnessError {
    #[error("invalid harness configuration: {0}")]
    Config(String),
    #[error("compiler `{0}` not found")]
    CompilerNotFound(String),
    #[error("compilation failed:\n{diagnostics}")]
    Compile { diagnostics: String },
    #[error("failed to spawn program: {0}")]
    Spawn(#[source] io::Error),
    #[error("harness i/o error: {0}")]
    Io(#[from] io::Error),
}

impl HarnessError {
    /// Environment failures are worth retrying; source problems are not.
    pub fn is_retryable(&self) -> bool {
        matches!(self, HarnessError::Spawn(_) | HarnessError::Io(_))
    }
}

/// Hook for OS-level isolation of program runs (namespaces, seccomp, rlimits).
pub trait Sandbox: Send + Sync {
    fn configure(&self, cmd: &mut Command) -> io::Result<()>;
}

#[derive(Debug, Default, Clone, Copy)]
pub struct NoSandbox;

impl Sandbox for NoSandbox {
    fn configure(&self, _cmd: &mut Command) -> io::Result<()> {
        Ok(())
    }
}

/// A compiled executable. The build directory is removed when the last handle drops.
#[derive(Debug)]
pub struct Artifact {
    binary: PathBuf,
    warnings: String,
    _dir: TempDir,
}

impl Artifact {
    pub fn path(&self) -> &Path {
        &self.binary
    }

    /// Compiler output of a successful build (usually empty).
    pub fn warnings(&self) -> &str {
        &self.warnings
    }
}

struct Gate {
    free: Mutex<usize>,
    cv: Condvar,
}

struct GatePass<'a>(&'a Gate);

impl Gate {
    fn new(slots: usize) -> Self {
        Gate { free: Mutex::new(slots.max(1)), cv: Condvar::new() }
    }

    fn enter(&self) -> GatePass<'_> {
        let mut free = self.free.lock().unwrap_or_else(|e| e.into_inner());
        while *free == 0 {
            free = self.cv.wait(free).unwrap_or_else(|e| e.into_inner());
        }
        *free -= 1;
        GatePass(self)
    }
}

impl Drop for GatePass<'_> {
    fn drop(&mut self) {
        *self.0.free.lock().unwrap_or_else(|e| e.into_inner()) += 1;
        self.0.cv.notify_one();
    }
}

pub struct Harness {
    config: HarnessConfig,
    root: PathBuf,
    _owned_root: Option<TempDir>,
    gate: Gate,
    sandbox: Box<dyn Sandbox>,
    cache: Mutex<HashMap<String, Arc<Artifact>>>,
}

impl std::fmt::Debug for Harness {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("Harness").field("config", &self.config).field("root", &self.root).finish()
    }
}

impl Harness {
    pub fn new(config: HarnessConfig) -> Result<Self, HarnessError> {
        Self::with_sandbox(config, Box::new(NoSandbox))
    }

    pub fn with_sandbox(config: HarnessConfig, sandbox: Box<dyn Sandbox>) -> Result<Self, HarnessError> {
        if config.wall_ms == 0 || config.max_output_bytes == 0 {
            return Err(HarnessError::Config("limits must be positive".into()));
        }
        let template: Vec<&str> = config.compiler_command.split_whitespace().collect();
        if template.is_empty()
            || !template.iter().any(|t| t.contains(SOURCE_PLACEHOLDER))
            || !template.iter().any(|t| t.contains(OUTPUT_PLACEHOLDER))
        {
            return Err(HarnessError::Config(format!(
                "compiler command must name a program and contain {SOURCE_PLACEHOLDER} and {OUTPUT_PLACEHOLDER}"
            )));
        }
        let (root, owned) = match &config.work_root {
            Some(dir) => {
                std::fs::create_dir_all(dir)?;
                (dir.clone(), None)
            }
            None => {
                let tmp = tempfile::Builder::new().prefix("flipfeed-harness-").tempdir()?;
                (tmp.path().to_path_buf(), Some(tmp))
            }
        };
        Ok(Harness {
            gate: Gate::new(config.workers),
            config,
            root,
            _owned_root: owned,
            sandbox,
            cache: Mutex::new(HashMap::new()),
        })
    }

    pub fn config(&self) -> &HarnessConfig {
        &self.config
    }

    /// Compiles `source`, reusing an earlier artifact for identical source text.
    pub fn compile(&self, source: &str) -> Result<Arc<Artifact>, HarnessError> {
        let key = {
            let mut h = Sha256::new();
            h.update(self.config.compiler_command.as_bytes());
            h.update([0u8]);
            h.update(source.as_bytes());
            hex::encode(h.finalize())
        };
        if let Some(hit) = self.cache.lock().unwrap_or_else(|e| e.into_inner()).get(&key) {
            return Ok(Arc::clone(hit));
        }
        let artifact = Arc::new(self.compile_uncached(source)?);
        self.cache
            .lock()
            .unwrap_or_else(|e| e.into_inner())
            .insert(key, Arc::clone(&artifact));
        Ok(artifact)
    }

    fn compile_uncached(&self, source: &str) -> Result<Artifact, HarnessError> {
        let dir = tempfile::Builder::new().prefix("build-").tempdir_in(&self.root)?;
        let src_path = dir.path().join("main.c");
        let out_path = dir.path().join("main");
        std::fs::write(&src_path, source)?;

        let mut parts = self.config.compiler_command.split_whitespace().map(|t| {
            t.replace(SOURCE_PLACEHOLDER, &src_path.to_string_lossy())
                .replace(OUTPUT_PLACEHOLDER, &out_path.to_string_lossy())
        });
        let program = parts.next().expect("validated non-empty");
        let mut cmd = Command::new(&program);
        cmd.args(parts).current_dir(dir.path());

        let _pass = self.gate.enter();
        let limits = Limits { wall_ms: COMPILE_WALL_MS, max_output_bytes: COMPILE_OUTPUT_BYTES };
        let result = match process::run_limited(cmd, "", limits) {
            Ok(r) => r,
            Err(e) if e.kind() == io::ErrorKind::NotFound => {
                return Err(HarnessError::CompilerNotFound(program))
            }
            Err(e) => return Err(HarnessError::Spawn(e)),
        };
        let diagnostics = format!("{}{}", result.stdout, result.stderr);
        if !result.is_clean() || !out_path.exists() {
            let diagnostics = if result.timed_out {
                format!("compiler timed out after {COMPILE_WALL_MS} ms\n{diagnostics}")
            } else {
                diagnostics
            };
            return Err(HarnessError::Compile { diagnostics });
        }
        Ok(Artifact { binary: out_path, warnings: diagnostics, _dir: dir })
    }

    /// Runs a compiled program with the configured limits.
    pub fn execute(&self, artifact: &Artifact, stdin_input: &str) -> Result<RunResult, HarnessError> {
        self.execute_with(artifact, stdin_input, self.config.limits())
    }

    pub fn execute_with(
        &self,
        artifact: &Artifact,
        stdin_input: &str,
        limits: Limits,
    ) -> Result<RunResult, HarnessError> {
        if limits.wall_ms == 0 || limits.max_output_bytes == 0 {
            return Err(HarnessError::Config("limits must be positive".into()));
        }
        let workdir = tempfile::Builder::new().prefix("run-").tempdir_in(&self.root)?;
        let mut cmd = Command::new(artifact.path());
        cmd.current_dir(workdir.path())
            .env_clear()
            .env("PATH", "/usr/bin:/bin")
            .env("LC_ALL", "C");
        self.sandbox.configure(&mut cmd).map_err(HarnessError::Spawn)?;
        let _pass = self.gate.enter();
        process::run_limited(cmd, stdin_input, limits).map_err(HarnessError::Spawn)
    }
}
