use std::path::{Path, PathBuf};

use clap::Args;
use serde::de::DeserializeOwned;
use serde::Serialize;
use serde_json::{Map, Value};

use crate::error::{invalid, CliError, Result};

/// Options shared by every command. Each may also come from the config file.
#[derive(Debug, Clone, Default, Args)]
pub struct GlobalArgs {
    /// JSON run configuration; command-line flags override its values.
    #[arg(long, global = true, value_name = "FILE")]
    pub config: Option<PathBuf>,
    /// Seed for every stochastic step (required by stochastic commands).
    #[arg(long, global = true)]
    pub seed: Option<u64>,
    /// Worker threads (results do not depend on this).
    #[arg(long, global = true)]
    pub threads: Option<usize>,
    /// Directory receiving all outputs and the run manifest.
    #[arg(long, global = true, value_name = "DIR")]
    pub output_dir: Option<PathBuf>,
    /// Leave timestamps out of the run manifest so reruns are byte-identical.
    #[arg(long, global = true)]
    pub deterministic: bool,
}

const GLOBAL_KEYS: [&str; 4] = ["seed", "threads", "output_dir", "deterministic"];

#[derive(Debug, Clone)]
pub struct Resolved<C> {
    pub seed: Option<u64>,
    pub threads: Option<usize>,
    pub output_dir: Option<PathBuf>,
    pub deterministic: bool,
    pub options: C,
    /// The merged command options as recorded in the run manifest.
    pub effective: Value,
}

impl<C> Resolved<C> {
    pub fn seed(&self) -> Result<u64> {
        self.seed.ok_or_else(|| CliError::Validation("this command is stochastic and needs --seed".into()))
    }

    /// Creates the output directory.
    pub fn output_dir(&self) -> Result<PathBuf> {
        let dir = self.output_dir.clone().ok_or_else(|| CliError::Validation("--output-dir is required".into()))?;
        std::fs::create_dir_all(&dir)
            .map_err(|e| CliError::Runtime(anyhow::anyhow!("creating {}: {e}", dir.display())))?;
        Ok(dir)
    }
}

fn read_config(path: &Path) -> Result<Map<String, Value>> {
    let text = std::fs::read_to_string(path)
        .map_err(|e| CliError::Validation(format!("config {}: {e}", path.display())))?;
    let value: Value = serde_json::from_str(&text).map_err(|e| {
        CliError::Validation(format!("config {}: line {} column {}: {e}", path.display(), e.line(), e.column()))
    })?;
    match value {
        Value::Object(m) => Ok(m),
        _ => invalid(format!("config {}: expected a JSON object at the top level", path.display())),
    }
}

fn global<T: DeserializeOwned>(file: &mut Map<String, Value>, key: &str, path: &Path) -> Result<Option<T>> {
    match file.remove(key) {
        None | Some(Value::Null) => Ok(None),
        Some(v) => serde_json::from_value(v)
            .map(Some)
            .map_err(|e| CliError::Validation(format!("config {}: field `{key}`: {e}", path.display()))),
    }
}

/// Merges config-file values with flags (flags win) and checks the result
/// against the command's schema. Unknown keys are rejected by name.
pub fn resolve<C: Serialize + DeserializeOwned + Default>(globals: &GlobalArgs, flags: &C) -> Result<Resolved<C>> {
    let mut merged = Map::new();
    let (mut seed, mut threads, mut output_dir, mut deterministic) = (None, None, None, false);
    let source = globals.config.as_deref();
    if let Some(path) = source {
        let mut file = read_config(path)?;
        seed = global(&mut file, "seed", path)?;
        threads = global(&mut file, "threads", path)?;
        output_dir = global(&mut file, "output_dir", path)?;
        deterministic = global(&mut file, "deterministic", path)?.unwrap_or(false);
        let known = match serde_json::to_value(C::default()) {
            Ok(Value::Object(m)) => m,
            _ => Map::new(),
        };
        if let Some(k) = file.keys().find(|k| !known.contains_key(*k)) {
            let mut expected: Vec<&str> = known.keys().map(String::as_str).chain(GLOBAL_KEYS).collect();
            expected.sort_unstable();
            return invalid(format!(
                "config {}: unknown field `{k}`, expected one of {}",
                path.display(),
                expected.join(", ")
            ));
        }
        merged = file;
    }
    let flags = serde_json::to_value(flags).map_err(|e| CliError::Runtime(e.into()))?;
    if let Value::Object(m) = flags {
        for (k, v) in m {
            if !v.is_null() {
                merged.insert(k, v);
            }
        }
    }
    let effective = Value::Object(merged);
    let options: C = serde_json::from_value(effective.clone()).map_err(|e| {
        let origin = source.map(|p| format!("config {}", p.display())).unwrap_or_else(|| "options".into());
        CliError::Validation(format!("{origin}: {e}"))
    })?;
    Ok(Resolved {
        seed: globals.seed.or(seed),
        threads: globals.threads.or(threads),
        output_dir: globals.output_dir.clone().or(output_dir),
        deterministic: globals.deterministic || deterministic,
        options,
        effective,
    })
}

pub fn required<T>(value: Option<T>, name: &str) -> Result<T> {
    value.ok_or_else(|| CliError::Validation(format!("missing required option `{name}`")))
}

/// Fails with a validation error when a referenced input does not exist.
pub fn existing(path: &Path) -> Result<&Path> {
    if path.exists() {
        Ok(path)
    } else {
        invalid(format!("{} does not exist", path.display()))
    }
}
