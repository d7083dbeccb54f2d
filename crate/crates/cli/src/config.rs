//! TOML run configuration shared by `train` and `train-verifier`.
//!
//! ```toml
//! [data]
//! root = "data"              # relative to the config file
//! test_subjects = [10, 14, 16, 20]
//! depth_min_mm = 400.0
//! depth_max_mm = 2000.0
//!
//! [train]       # generator / discriminator training
//! [verifier]    # Siamese verifier training
//! [crop]        # fx, fy, rx, ry, radius
//! [pairs]       # verifier pair lists
//! [output]      # dir, checkpoint_every
//! ```
//!
//! Every section and key is optional; unknown keys are rejected.

use std::collections::BTreeSet;
use std::fs;
use std::path::{Path, PathBuf};

use facedepth_core::data::crop::CropParams;
use facedepth_core::data::normalize::DepthRange;
use facedepth_core::training::TrainConfig;
use facedepth_core::verifier::VerifierTrainConfig;
use facedepth_core::{Error, Result};
use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DataSection {
    pub root: PathBuf,
    pub test_subjects: Vec<u32>,
    pub depth_min_mm: f64,
    pub depth_max_mm: f64,
}

impl Default for DataSection {
    fn default() -> Self {
        let r = DepthRange::default();
        Self {
            root: PathBuf::from("data"),
            test_subjects: vec![10, 14, 16, 20],
            depth_min_mm: r.min_mm,
            depth_max_mm: r.max_mm,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PairsSection {
    /// Training pairs drawn from the training subjects.
    pub n_pairs: usize,
    /// Fraction of same-subject pairs.
    pub balance: f64,
    pub seed: u64,
    /// Held-out pairs over the test subjects written next to the verifier
    /// checkpoint; `0` skips them.
    pub n_test_pairs: usize,
    pub test_seed: u64,
}

impl Default for PairsSection {
    fn default() -> Self {
        Self {
            n_pairs: 4000,
            balance: 0.5,
            seed: 1,
            n_test_pairs: 400,
            test_seed: 2,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct OutputSection {
    pub dir: PathBuf,
    /// Checkpoint period in epochs; the last epoch is always saved.
    pub checkpoint_every: u64,
}

impl Default for OutputSection {
    fn default() -> Self {
        Self {
            dir: PathBuf::from("out"),
            checkpoint_every: 1,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub data: DataSection,
    pub train: TrainConfig,
    pub verifier: VerifierTrainConfig,
    pub crop: CropParams,
    pub pairs: PairsSection,
    pub output: OutputSection,
}

impl RunConfig {
    /// Parses and validates without touching the filesystem; paths stay as
    /// written.
    pub fn parse(text: &str) -> Result<Self> {
        let cfg: Self = toml::from_str(text).map_err(|e| Error::Config(e.message().to_owned() + &span_hint(text, e.span())))?;
        cfg.validate()?;
        Ok(cfg)
    }

    /// Reads `path`; relative paths are resolved against its directory.
    /// Also returns the canonical text snapshot (unresolved paths) stored in
    /// checkpoints.
    pub fn load(path: &Path) -> Result<(Self, String)> {
        let text = fs::read_to_string(path).map_err(|e| Error::Config(format!("cannot read {}: {e}", path.display())))?;
        let cfg = Self::parse(&text)?;
        let snapshot = cfg.snapshot();
        let base = path.parent().unwrap_or(Path::new("."));
        Ok((cfg.resolved(base), snapshot))
    }

    pub fn snapshot(&self) -> String {
        toml::to_string(self).expect("config serializes")
    }

    pub fn resolved(mut self, base: &Path) -> Self {
        for p in [&mut self.data.root, &mut self.output.dir] {
            if p.is_relative() {
                *p = base.join(&*p);
            }
        }
        self
    }

    pub fn validate(&self) -> Result<()> {
        self.range()?;
        self.train.validate()?;
        self.verifier.validate()?;
        self.crop.validate()?;
        let p = &self.pairs;
        if !(0.0..=1.0).contains(&p.balance) {
            return Err(Error::Config(format!("pairs.balance {} outside [0, 1]", p.balance)));
        }
        if p.n_pairs < 2 {
            return Err(Error::Config("pairs.n_pairs must be at least 2".into()));
        }
        if self.output.checkpoint_every == 0 {
            return Err(Error::Config("output.checkpoint_every must be at least 1".into()));
        }
        if self.test_subjects().len() != self.data.test_subjects.len() {
            return Err(Error::Config("data.test_subjects lists a subject twice".into()));
        }
        Ok(())
    }

    pub fn range(&self) -> Result<DepthRange> {
        DepthRange::new(self.data.depth_min_mm, self.data.depth_max_mm)
    }

    pub fn test_subjects(&self) -> BTreeSet<u32> {
        self.data.test_subjects.iter().copied().collect()
    }
}

fn span_hint(text: &str, span: Option<std::ops::Range<usize>>) -> String {
    match span {
        Some(s) => format!(" (line {})", text[..s.start.min(text.len())].lines().count().max(1)),
        None => String::new(),
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn empty_config_is_all_defaults() {
        assert_eq!(RunConfig::parse("").unwrap(), RunConfig::default());
    }

    #[test]
    fn unknown_keys_are_rejected() {
        let e = RunConfig::parse("[train]\nlearning_rate = 0.1\n").unwrap_err();
        assert!(e.to_string().contains("learning_rate"), "{e}");
        assert!(RunConfig::parse("[model]\n").is_err());
    }

    #[test]
    fn invalid_values_are_rejected() {
        assert!(RunConfig::parse("[train]\nwidth_multiplier = 0.3\n").is_err());
        assert!(RunConfig::parse("[data]\ndepth_min_mm = 900.0\ndepth_max_mm = 800.0\n").is_err());
        assert!(RunConfig::parse("[verifier]\nimage_size = 32\n").is_err());
        assert!(RunConfig::parse("[pairs]\nbalance = 1.5\n").is_err());
    }

    #[test]
    fn snapshot_round_trips() {
        let cfg = RunConfig::parse("[train]\nlr = 0.0003\nseed = 9\n[data]\nroot = \"d\"\n").unwrap();
        assert_eq!(RunConfig::parse(&cfg.snapshot()).unwrap(), cfg);
    }

    #[test]
    fn relative_paths_follow_the_config_file() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("run.toml");
        fs::write(&path, "[data]\nroot = \"ds\"\n[output]\ndir = \"/abs/out\"\n").unwrap();
        let (cfg, snap) = RunConfig::load(&path).unwrap();
        assert_eq!(cfg.data.root, dir.path().join("ds"));
        assert_eq!(cfg.output.dir, PathBuf::from("/abs/out"));
        assert!(snap.contains("root = \"ds\""));
    }
}
