//! Run manifests: every command writes the resolved configuration, seed, and
//! input paths next to its artifacts for provenance. Manifests carry no
//! timestamps, so identical invocations produce identical manifests.

use crate::config::ResolvedConfig;
use crate::util::write_atomic;
use anyhow::Result;
use serde::Serialize;
use std::path::{Path, PathBuf};

#[derive(Debug, Serialize)]
struct Manifest<'a> {
    tool: &'static str,
    version: &'static str,
    command: &'a str,
    seed: Option<u64>,
    inputs: Vec<String>,
    config: &'a ResolvedConfig,
}

pub fn write_manifest(
    out_dir: &Path,
    name: &str,
    command: &str,
    seed: Option<u64>,
    inputs: &[PathBuf],
    config: &ResolvedConfig,
) -> Result<PathBuf> {
    let manifest = Manifest {
        tool: "adlog",
        version: env!("CARGO_PKG_VERSION"),
        command,
        seed,
        inputs: inputs.iter().map(|p| p.display().to_string()).collect(),
        config,
    };
    let path = out_dir.join(format!("{name}.manifest.toml"));
    write_atomic(&path, toml::to_string_pretty(&manifest)?.as_bytes())?;
    Ok(path)
}
