//! Run configuration: TOML file, then `SCENECOV_` environment overrides,
//! then command-line flags.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use toml::{Table, Value};

use scenecov::actor_graph::ConstructionParams;
use scenecov::archetype::MatchPolicy;
use scenecov::coverage::HoleParams;
use scenecov::embedding::EncoderConfig;
use scenecov::embedding_analytics::{DensityParams, Metric};
use scenecov::scene::DatasetRole;
use scenecov::synth::SynthSpec;

use crate::error::{CliError, CliResult};

/// Environment variables with this prefix override config keys. Nested keys
/// are joined with `__`, e.g. `SCENECOV_ENCODER__STAGES=3`.
pub const ENV_PREFIX: &str = "SCENECOV_";

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Inputs {
    /// Map document; defaults to `<out>/map.json`.
    pub map: Option<PathBuf>,
    pub ref_scenes: Option<PathBuf>,
    pub test_scenes: Option<PathBuf>,
    /// Directory of archetype JSON files; the built-in catalog when unset.
    pub catalog: Option<PathBuf>,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct NnConfig {
    pub k: usize,
    pub metric: Metric,
}

impl Default for NnConfig {
    fn default() -> Self {
        Self {
            k: 5,
            metric: Metric::Cosine,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PcaConfig {
    pub dims: usize,
}

impl Default for PcaConfig {
    fn default() -> Self {
        Self { dims: 2 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SynthConfig {
    #[serde(rename = "ref")]
    pub reference: SynthSpec,
    pub test: SynthSpec,
}

impl Default for SynthConfig {
    fn default() -> Self {
        Self {
            reference: SynthSpec {
                source_tag: "synth-ref".into(),
                ..SynthSpec::default()
            },
            test: SynthSpec {
                label: DatasetRole::Test,
                source_tag: "synth-test".into(),
                ..SynthSpec::default()
            },
        }
    }
}

impl SynthConfig {
    pub fn spec(&self, role: DatasetRole) -> &SynthSpec {
        match role {
            DatasetRole::Ref => &self.reference,
            DatasetRole::Test => &self.test,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub seed: u64,
    pub out: PathBuf,
    /// Worker threads; 0 lets the pool decide.
    pub jobs: usize,
    pub inputs: Inputs,
    pub construction: ConstructionParams,
    pub matching: MatchPolicy,
    pub holes: HoleParams,
    pub encoder: EncoderConfig,
    pub density: DensityParams,
    pub nn: NnConfig,
    pub pca: PcaConfig,
    pub synth: SynthConfig,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            seed: 0,
            out: PathBuf::from("out"),
            jobs: 0,
            inputs: Inputs::default(),
            construction: ConstructionParams::default(),
            matching: MatchPolicy::default(),
            holes: HoleParams::default(),
            encoder: EncoderConfig::default(),
            density: DensityParams::default(),
            nn: NnConfig::default(),
            pca: PcaConfig::default(),
            synth: SynthConfig::default(),
        }
    }
}

/// Values given as global flags; they win over file and environment.
#[derive(Debug, Clone, Default)]
pub struct FlagOverrides {
    pub seed: Option<u64>,
    pub out: Option<PathBuf>,
    pub jobs: Option<usize>,
}

fn set_path(table: &mut Table, path: &[String], value: Value) -> CliResult<()> {
    let (last, parents) = path.split_last().expect("non-empty key path");
    let mut cur = table;
    for (i, key) in parents.iter().enumerate() {
        let entry = cur
            .entry(key.clone())
            .or_insert_with(|| Value::Table(Table::new()));
        cur = entry
            .as_table_mut()
            .ok_or_else(|| CliError::field(path[..=i].join("."), "is not a table"))?;
    }
    cur.insert(last.clone(), value);
    Ok(())
}

fn get_path<'a>(table: &'a Table, path: &[&str]) -> Option<&'a Value> {
    let (last, parents) = path.split_last()?;
    let mut cur = table;
    for key in parents {
        cur = cur.get(*key)?.as_table()?;
    }
    cur.get(*last)
}

/// Parses an environment value as a TOML literal, falling back to a string.
fn env_value(raw: &str) -> Value {
    format!("v = {raw}")
        .parse::<Table>()
        .ok()
        .and_then(|mut t| t.remove("v"))
        .unwrap_or_else(|| Value::String(raw.to_string()))
}

impl RunConfig {
    pub fn load(
        file: Option<&Path>,
        env: impl IntoIterator<Item = (String, String)>,
        flags: &FlagOverrides,
    ) -> CliResult<Self> {
        let mut table = match file {
            Some(path) => {
                let text = std::fs::read_to_string(path)
                    .map_err(|e| CliError::field("--config", format!("{}: {e}", path.display())))?;
                text.parse::<Table>()
                    .map_err(|e| CliError::field("--config", format!("{}: {e}", path.display())))?
            }
            None => Table::new(),
        };
        let mut env: Vec<(String, String)> = env
            .into_iter()
            .filter(|(k, _)| k.starts_with(ENV_PREFIX))
            .collect();
        env.sort();
        for (key, raw) in env {
            let path: Vec<String> = key[ENV_PREFIX.len()..]
                .split("__")
                .map(str::to_lowercase)
                .collect();
            if path.iter().any(String::is_empty) {
                return Err(CliError::field(key, "malformed override key"));
            }
            set_path(&mut table, &path, env_value(&raw))?;
        }
        if let Some(seed) = flags.seed {
            table.insert("seed".into(), Value::Integer(seed as i64));
        }
        if let Some(out) = &flags.out {
            table.insert("out".into(), Value::String(out.display().to_string()));
        }
        if let Some(jobs) = flags.jobs {
            table.insert("jobs".into(), Value::Integer(jobs as i64));
        }
        // the root seed feeds every stream not seeded explicitly
        let seed = match table.get("seed") {
            Some(Value::Integer(s)) if *s >= 0 => *s,
            Some(_) => return Err(CliError::field("seed", "must be a non-negative integer")),
            None => 0,
        };
        for (path, derived) in [
            (["encoder", "seed"].as_slice(), seed),
            (["synth", "ref", "seed"].as_slice(), seed),
            (["synth", "test", "seed"].as_slice(), seed.wrapping_add(1)),
        ] {
            if get_path(&table, path).is_none() {
                let owned: Vec<String> = path.iter().map(|s| s.to_string()).collect();
                set_path(&mut table, &owned, Value::Integer(derived))?;
            }
        }
        let mut cfg: RunConfig =
            serde_path_to_error::deserialize(Value::Table(table)).map_err(|e| {
                let field = e.path().to_string();
                let message = e.into_inner().to_string();
                CliError::field(
                    field,
                    message.lines().next().unwrap_or_default().to_string(),
                )
            })?;
        cfg.synth.reference.label = DatasetRole::Ref;
        cfg.synth.test.label = DatasetRole::Test;
        cfg.validate()?;
        Ok(cfg)
    }

    fn validate(&self) -> CliResult<()> {
        let wrap = |section: &str, e: scenecov::Error| match e {
            scenecov::Error::InvalidParameter { name, reason } => {
                CliError::field(format!("{section}.{name}"), reason)
            }
            other => CliError::Core(other),
        };
        self.construction
            .validate()
            .map_err(|e| wrap("construction", e))?;
        self.encoder.validate().map_err(|e| wrap("encoder", e))?;
        if self.nn.k == 0 {
            return Err(CliError::field("nn.k", "must be positive"));
        }
        if self.pca.dims == 0 {
            return Err(CliError::field("pca.dims", "must be positive"));
        }
        let (r, t) = (&self.synth.reference, &self.synth.test);
        if r.template != t.template || r.slots != t.slots {
            return Err(CliError::field(
                "synth.test.template",
                "REF and TEST share one map; template and slots must match",
            ));
        }
        Ok(())
    }
}
