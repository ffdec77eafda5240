use std::fs;
use std::path::{Path, PathBuf};

use anyhow::{Context, Result};
use breathorder::dataio::SynthParams;
use breathorder::encoder::{EncoderConfig, PosEncMode};
use breathorder::heads::Method;
use breathorder::trainer::TrainConfig;
use breathorder::Error;
use clap::{Args, ValueEnum};
use serde::{Deserialize, Serialize};

pub const CONFIG_FILE: &str = "config.json";

/// Everything a subcommand needs, resolved from an optional JSON file and
/// flag overrides. Serialized into every output directory.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct RunConfig {
    pub encoder: EncoderConfig,
    pub train: TrainConfig,
    pub synth: SynthParams,
    /// Dataset a run was trained on.
    pub data_dir: Option<PathBuf>,
}

impl RunConfig {
    pub fn load(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path).map_err(|e| io_error(path, e))?;
        let config = serde_json::from_str(&text).map_err(|e| Error::Config(format!("{}: {e}", path.display())))?;
        Ok(config)
    }

    pub fn write(&self, dir: &Path) -> Result<()> {
        write_json(dir, CONFIG_FILE, self)
    }

    /// Root seed shared by synthesis, initialization and training.
    pub fn seed(&self) -> u64 {
        self.train.seed
    }

    /// Synthetic clips match the encoder geometry.
    pub fn align_synth(&mut self) {
        self.synth.frames = self.encoder.frames;
        self.synth.height = self.encoder.resolution;
        self.synth.width = self.encoder.resolution;
        self.synth.channels = self.encoder.channels;
    }

    pub fn validate(&self) -> Result<()> {
        self.encoder.validate()?;
        self.train.validate()?;
        self.synth.validate()?;
        Ok(())
    }
}

pub fn io_error(path: &Path, e: std::io::Error) -> anyhow::Error {
    if e.kind() == std::io::ErrorKind::NotFound {
        Error::MissingArtifact(path.to_path_buf()).into()
    } else {
        anyhow::Error::new(e).context(path.display().to_string())
    }
}

pub fn write_json<T: Serialize>(dir: &Path, name: &str, value: &T) -> Result<()> {
    fs::create_dir_all(dir).map_err(|e| io_error(dir, e))?;
    let path = dir.join(name);
    let body = serde_json::to_string_pretty(value)? + "\n";
    fs::write(&path, body).with_context(|| path.display().to_string())
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum)]
pub enum Switch {
    On,
    Off,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum)]
pub enum Preset {
    Paper,
    Toy,
}

/// Flags shared by every subcommand that builds a [`RunConfig`].
#[derive(Clone, Debug, Default, Args)]
pub struct CommonArgs {
    /// JSON run configuration; flags below override it.
    #[arg(long)]
    pub config: Option<PathBuf>,
    /// Root seed for synthesis, initialization, splitting and shuffling.
    #[arg(long)]
    pub seed: Option<u64>,
    #[arg(long, value_parser = parse_method)]
    pub method: Option<Method>,
    #[arg(long, value_parser = parse_posenc)]
    pub posenc: Option<PosEncMode>,
    #[arg(long, value_enum)]
    pub mgm: Option<Switch>,
    #[arg(long)]
    pub keep_ratio: Option<f64>,
    /// Replaces the encoder section before other overrides apply.
    #[arg(long, value_enum)]
    pub preset: Option<Preset>,
}

fn parse_method(s: &str) -> std::result::Result<Method, String> {
    s.parse().map_err(|e: Error| e.to_string())
}

fn parse_posenc(s: &str) -> std::result::Result<PosEncMode, String> {
    s.parse().map_err(|e: Error| e.to_string())
}

impl CommonArgs {
    pub fn resolve(&self) -> Result<RunConfig> {
        let mut c = match &self.config {
            Some(path) => RunConfig::load(path)?,
            None => RunConfig::default(),
        };
        if let Some(p) = self.preset {
            c.encoder = match p {
                Preset::Paper => EncoderConfig::paper(),
                Preset::Toy => EncoderConfig::toy(),
            };
        }
        if let Some(seed) = self.seed {
            c.encoder.seed = seed;
            c.train.seed = seed;
            c.synth.seed = seed;
        }
        if let Some(m) = self.method {
            c.train.method = m;
        }
        if let Some(p) = self.posenc {
            c.encoder.posenc = p;
        }
        if let Some(m) = self.mgm {
            c.encoder.mgm_enabled = m == Switch::On;
        }
        if let Some(r) = self.keep_ratio {
            c.encoder.keep_ratio = r;
        }
        Ok(c)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn preset_applies_before_overrides() {
        let args = CommonArgs {
            preset: Some(Preset::Paper),
            seed: Some(11),
            posenc: Some(PosEncMode::Ape),
            keep_ratio: Some(0.5),
            ..CommonArgs::default()
        };
        let c = args.resolve().unwrap();
        assert_eq!(c.encoder.resolution, EncoderConfig::paper().resolution);
        assert_eq!((c.encoder.seed, c.train.seed, c.synth.seed), (11, 11, 11));
        assert_eq!(c.encoder.posenc, PosEncMode::Ape);
        assert_eq!(c.encoder.keep_ratio, 0.5);
    }

    #[test]
    fn config_round_trips_through_disk() {
        let dir = tempfile::tempdir().unwrap();
        let mut c = RunConfig::default();
        c.train.seed = 4;
        c.data_dir = Some(PathBuf::from("data"));
        c.write(dir.path()).unwrap();
        assert_eq!(RunConfig::load(&dir.path().join(CONFIG_FILE)).unwrap(), c);
    }

    #[test]
    fn malformed_config_is_a_config_error() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join(CONFIG_FILE);
        fs::write(&path, "{ not json").unwrap();
        let err = RunConfig::load(&path).unwrap_err();
        assert!(matches!(err.downcast_ref::<Error>(), Some(Error::Config(_))));
    }
}
