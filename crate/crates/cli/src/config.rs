//! Pipeline configuration: one JSON document with optional per-stage
//! sections, or a bare section body where a command expects exactly one.

use std::path::Path;

use anyhow::{Context, Result};
use serde::de::DeserializeOwned;
use serde::Deserialize;

use evikit_core::{BlurProtocol, SimConfig};
use evikit_nn::RefidConfig;

pub const SECTION_NAMES: [&str; 6] = ["simulate", "blur", "physical", "voxel", "model", "eval"];

#[derive(Debug, Default, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PipelineConfig {
    pub simulate: Option<SimConfig>,
    pub blur: Option<BlurProtocol>,
    pub physical: Option<PhysicalConfig>,
    pub voxel: Option<VoxelConfig>,
    pub model: Option<RefidConfig>,
    pub eval: Option<EvalConfig>,
}

impl PipelineConfig {
    fn has_section(&self, section: &str) -> bool {
        match section {
            "simulate" => self.simulate.is_some(),
            "blur" => self.blur.is_some(),
            "physical" => self.physical.is_some(),
            "voxel" => self.voxel.is_some(),
            "model" => self.model.is_some(),
            "eval" => self.eval.is_some(),
            other => unreachable!("unknown section `{other}`"),
        }
    }
}

#[derive(Debug, Clone, Copy, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PhysicalConfig {
    #[serde(default = "default_c")]
    pub c: f64,
}

fn default_c() -> f64 {
    0.2
}

impl Default for PhysicalConfig {
    fn default() -> PhysicalConfig {
        PhysicalConfig { c: default_c() }
    }
}

#[derive(Debug, Clone, Copy, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct VoxelConfig {
    #[serde(default = "default_n")]
    pub n: usize,
}

fn default_n() -> usize {
    1
}

impl Default for VoxelConfig {
    fn default() -> VoxelConfig {
        VoxelConfig { n: default_n() }
    }
}

/// No knobs yet; the empty section is still validated against typos.
#[derive(Debug, Default, Clone, Copy, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EvalConfig {}

/// Reads `section` from a config file that is either a full pipeline
/// document or that section's bare body. Absent file/section -> defaults.
///
/// A pipeline document is validated as a whole, so a typo in any section
/// fails every command that reads the file, not just the one that uses the
/// broken stage.
pub fn load_section<T>(path: Option<&Path>, section: &str) -> Result<T>
where
    T: DeserializeOwned + Default,
{
    let p = match path {
        None => return Ok(T::default()),
        Some(p) => p,
    };
    let value = read_config_value(p)?;
    if is_pipeline_doc(&value) {
        let full: PipelineConfig = serde_json::from_value(value.clone())
            .with_context(|| format!("config {}", p.display()))?;
        if !full.has_section(section) {
            return Ok(T::default());
        }
        parse_section(&value[section], section, p)
    } else {
        parse_section(&value, section, p)
    }
}

fn read_config_value(path: &Path) -> Result<serde_json::Value> {
    let bytes = std::fs::read(path).with_context(|| format!("reading config {}", path.display()))?;
    serde_json::from_slice(&bytes).with_context(|| format!("config {} is not JSON", path.display()))
}

/// A document whose top-level keys are all section names is a pipeline
/// config; anything else is treated as a bare section body.
fn is_pipeline_doc(value: &serde_json::Value) -> bool {
    value
        .as_object()
        .is_some_and(|map| !map.is_empty() && map.keys().all(|k| SECTION_NAMES.contains(&k.as_str())))
}

fn parse_section<T>(body: &serde_json::Value, section: &str, path: &Path) -> Result<T>
where
    T: DeserializeOwned,
{
    serde_json::from_value(body.clone())
        .with_context(|| format!("config {}, section `{section}`", path.display()))
}
