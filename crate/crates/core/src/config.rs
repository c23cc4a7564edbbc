//! Experiment configuration (TOML). Every field has a default; a file only
//! needs the fields it changes.
//!
//! ```toml
//! seed = 42               # root of every random stream
//! n_splits = 10           # random learn/val/test splits to run
//! out_dir = "runs/att"    # per-run output directory
//!
//! [dataset]
//! root = "data/att"       # root/<category>/<images>
//! resize = [96, 96]       # omit to keep native size (must then be uniform)
//!
//! [normalization]
//! mode = "sn"             # none | sn | ln
//! ln_window = 7           # ln only; odd, >= 3
//!
//! [split]
//! scheme = "per_category" # fraction | per_category | fixed_first_k_plus_random
//! n_train = 5
//! val_fraction = 0.1
//!
//! [channels.raw]          # likewise [channels.lbp] and [channels.hog]
//! enabled = true
//! n_pcs = 40
//! n_neurons = 20
//!
//! [channels.lbp]
//! points = 8
//! radius = 1
//! grid = [6, 6]
//!
//! [channels.hog]
//! cell = [8, 8]
//!
//! [search]                # architecture search replaces n_pcs / n_neurons
//! enabled = false
//! preset = "faces"        # faces | objects | large
//! pcs = { start = 1, end = 150, step = 1 }     # overrides the preset
//! neurons = { start = 20, end = 35, step = 1 }
//! refine = false
//! joint = false           # one shared point scored by fused accuracy
//!
//! [fusion]
//! mode = "sum_rule"       # sum_rule | fpt | fnpt
//!
//! [training]
//! max_epochs = 1000
//! patience = 5
//! ```

use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::dataset::SplitScheme;
use crate::error::{Error, Result};
use crate::features::{Channel, HogConfig, LbpConfig};
use crate::fusion::FusionMode;
use crate::modelsearch::{GridRange, SearchSpace};
use crate::preprocess::{Normalization, DEFAULT_LN_WINDOW};
use crate::scg::StopRule;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ExperimentConfig {
    pub seed: u64,
    pub n_splits: usize,
    pub out_dir: PathBuf,
    pub dataset: DatasetConfig,
    pub normalization: NormalizationConfig,
    pub split: SplitScheme,
    pub channels: ChannelsConfig,
    pub search: SearchConfig,
    pub fusion: FusionConfig,
    pub training: StopRule,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        Self {
            seed: 42,
            n_splits: 10,
            out_dir: PathBuf::from("runs/default"),
            dataset: DatasetConfig::default(),
            normalization: NormalizationConfig::default(),
            split: SplitScheme::PerCategory {
                n_train: 5,
                val_fraction: 0.1,
            },
            channels: ChannelsConfig::default(),
            search: SearchConfig::default(),
            fusion: FusionConfig::default(),
            training: StopRule::default(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DatasetConfig {
    pub root: PathBuf,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub resize: Option<(usize, usize)>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum NormalizationKind {
    None,
    #[default]
    Sn,
    Ln,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct NormalizationConfig {
    pub mode: NormalizationKind,
    pub ln_window: usize,
}

impl Default for NormalizationConfig {
    fn default() -> Self {
        Self {
            mode: NormalizationKind::Sn,
            ln_window: DEFAULT_LN_WINDOW,
        }
    }
}

impl NormalizationConfig {
    pub fn resolve(&self) -> Normalization {
        match self.mode {
            NormalizationKind::None => Normalization::None,
            NormalizationKind::Sn => Normalization::Sn,
            NormalizationKind::Ln => Normalization::Ln {
                ln_window: self.ln_window,
            },
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RawChannelConfig {
    pub enabled: bool,
    pub n_pcs: usize,
    pub n_neurons: usize,
}

impl Default for RawChannelConfig {
    fn default() -> Self {
        Self {
            enabled: true,
            n_pcs: 40,
            n_neurons: 20,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct LbpChannelConfig {
    pub enabled: bool,
    pub n_pcs: usize,
    pub n_neurons: usize,
    pub points: u32,
    pub radius: u32,
    pub grid: (usize, usize),
}

impl Default for LbpChannelConfig {
    fn default() -> Self {
        let lbp = LbpConfig::FACES;
        Self {
            enabled: true,
            n_pcs: 40,
            n_neurons: 20,
            points: lbp.points,
            radius: lbp.radius,
            grid: lbp.grid,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct HogChannelConfig {
    pub enabled: bool,
    pub n_pcs: usize,
    pub n_neurons: usize,
    pub cell: (usize, usize),
}

impl Default for HogChannelConfig {
    fn default() -> Self {
        Self {
            enabled: true,
            n_pcs: 40,
            n_neurons: 20,
            cell: HogConfig::FACES.cell,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ChannelsConfig {
    pub raw: RawChannelConfig,
    pub lbp: LbpChannelConfig,
    pub hog: HogChannelConfig,
}

/// A channel with its fixed architecture.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ChannelPlan {
    pub channel: Channel,
    pub n_pcs: usize,
    pub n_neurons: usize,
}

impl ChannelsConfig {
    /// Enabled channels in raw, LBP, HOG order.
    pub fn plans(&self) -> Vec<ChannelPlan> {
        let mut out = Vec::new();
        if self.raw.enabled {
            out.push(ChannelPlan {
                channel: Channel::Raw,
                n_pcs: self.raw.n_pcs,
                n_neurons: self.raw.n_neurons,
            });
        }
        if self.lbp.enabled {
            out.push(ChannelPlan {
                channel: Channel::Lbp(LbpConfig {
                    points: self.lbp.points,
                    radius: self.lbp.radius,
                    grid: self.lbp.grid,
                }),
                n_pcs: self.lbp.n_pcs,
                n_neurons: self.lbp.n_neurons,
            });
        }
        if self.hog.enabled {
            out.push(ChannelPlan {
                channel: Channel::Hog(HogConfig { cell: self.hog.cell }),
                n_pcs: self.hog.n_pcs,
                n_neurons: self.hog.n_neurons,
            });
        }
        out
    }

    pub fn apply_preset(&mut self, preset: &str) -> Result<()> {
        let (lbp, hog) = match preset {
            "faces" => (LbpConfig::FACES, HogConfig::FACES),
            "objects" | "large" => (LbpConfig::OBJECTS, HogConfig::OBJECTS),
            other => {
                return Err(Error::Config(format!("unknown preset '{other}'")));
            }
        };
        self.lbp.points = lbp.points;
        self.lbp.radius = lbp.radius;
        self.lbp.grid = lbp.grid;
        self.hog.cell = hog.cell;
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SearchConfig {
    pub enabled: bool,
    pub preset: String,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub pcs: Option<GridRange>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub neurons: Option<GridRange>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub refine: Option<bool>,
    pub joint: bool,
}

impl Default for SearchConfig {
    fn default() -> Self {
        Self {
            enabled: false,
            preset: "faces".into(),
            pcs: None,
            neurons: None,
            refine: None,
            joint: false,
        }
    }
}

impl SearchConfig {
    pub fn space(&self) -> Result<SearchSpace> {
        let mut space = SearchSpace::preset(&self.preset)?;
        if let Some(p) = self.pcs {
            space.pcs = p;
        }
        if let Some(n) = self.neurons {
            space.neurons = n;
        }
        if let Some(r) = self.refine {
            space.refine = r;
        }
        space.validate()?;
        Ok(space)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct FusionConfig {
    pub mode: FusionMode,
}

impl ExperimentConfig {
    pub fn from_toml(text: &str) -> Result<Self> {
        let cfg: Self = toml::from_str(text).map_err(|e| Error::Config(e.to_string()))?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text =
            fs::read_to_string(path).map_err(|e| Error::Config(format!("cannot read {}: {e}", path.display())))?;
        Self::from_toml(&text)
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("configuration always serializes")
    }

    pub fn validate(&self) -> Result<()> {
        if self.n_splits == 0 {
            return Err(Error::Config("n_splits must be >= 1".into()));
        }
        if let Some((h, w)) = self.dataset.resize {
            if h == 0 || w == 0 {
                return Err(Error::Config("resize dimensions must be >= 1".into()));
            }
        }
        self.normalization.resolve().validate()?;
        self.split.validate()?;
        let plans = self.channels.plans();
        if plans.is_empty() {
            return Err(Error::Config("at least one channel must be enabled".into()));
        }
        for plan in &plans {
            plan.channel.validate()?;
            if !self.search.enabled && (plan.n_pcs == 0 || plan.n_neurons == 0) {
                return Err(Error::Config(format!(
                    "{} channel needs n_pcs and n_neurons >= 1",
                    plan.channel.name()
                )));
            }
        }
        if self.search.enabled {
            self.search.space()?;
        }
        if self.training.max_epochs == 0 {
            log::warn!("max_epochs = 0: networks stay at their initial weights");
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn empty_file_gives_defaults() {
        assert_eq!(ExperimentConfig::from_toml("").unwrap(), ExperimentConfig::default());
    }

    #[test]
    fn split_schemes_default_their_validation_share() {
        for scheme in [
            "scheme = \"per_category\"\nn_train = 5",
            "scheme = \"fraction\"\ntrain_fraction = 0.5",
            "scheme = \"fixed_first_k_plus_random\"\nk_first = 2\nk_random = 1",
        ] {
            let cfg = ExperimentConfig::from_toml(&format!("[split]\n{scheme}")).unwrap();
            let vf = match cfg.split {
                SplitScheme::Fraction { val_fraction, .. }
                | SplitScheme::PerCategory { val_fraction, .. }
                | SplitScheme::FixedFirstKPlusRandom { val_fraction, .. } => val_fraction,
            };
            assert_eq!(vf, 0.1, "{scheme}");
        }
    }

    #[test]
    fn full_file_parses() {
        let text = r#"
            seed = 7
            n_splits = 3
            out_dir = "runs/x"
            [dataset]
            root = "data/att"
            resize = [96, 96]
            [normalization]
            mode = "ln"
            ln_window = 9
            [split]
            scheme = "fraction"
            train_fraction = 0.5
            val_fraction = 0.1
            [channels.lbp]
            points = 14
            grid = [10, 10]
            [channels.hog]
            enabled = false
            [search]
            enabled = true
            preset = "objects"
            pcs = { start = 1, end = 20, step = 5 }
            refine = true
            [fusion]
            mode = "fnpt"
            [training]
            max_epochs = 50
            patience = 3
        "#;
        let cfg = ExperimentConfig::from_toml(text).unwrap();
        cfg.validate().unwrap();
        assert_eq!(cfg.dataset.resize, Some((96, 96)));
        assert_eq!(cfg.normalization.resolve(), Normalization::Ln { ln_window: 9 });
        assert_eq!(cfg.channels.plans().len(), 2);
        assert_eq!(cfg.fusion.mode, FusionMode::Fnpt);
        let space = cfg.search.space().unwrap();
        assert_eq!(space.pcs, GridRange::new(1, 20, 5));
        assert_eq!(space.neurons, GridRange::new(1, 100, 1));
        assert!(space.refine);
        let again = ExperimentConfig::from_toml(&cfg.to_toml()).unwrap();
        assert_eq!(again, cfg);
    }

    #[test]
    fn unknown_fields_are_config_errors() {
        let err = ExperimentConfig::from_toml("seeed = 3").unwrap_err();
        assert_eq!(err.exit_code(), 1);
        assert!(ExperimentConfig::from_toml("[fusion]\nmode = \"product\"").is_err());
    }

    #[test]
    fn validation_catches_bad_values() {
        let mut cfg = ExperimentConfig::default();
        cfg.normalization = NormalizationConfig {
            mode: NormalizationKind::Ln,
            ln_window: 4,
        };
        assert!(cfg.validate().is_err());
        let mut cfg = ExperimentConfig::default();
        cfg.channels.raw.enabled = false;
        cfg.channels.lbp.enabled = false;
        cfg.channels.hog.enabled = false;
        assert!(cfg.validate().is_err());
    }
}
