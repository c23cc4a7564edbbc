//! End-to-end training and inference: normalize, extract the channels,
//! reduce each by PCA, classify each with an MLP, fuse.

use log::{info, warn};
use nalgebra::DMatrix;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::config::{ChannelPlan, ExperimentConfig};
use crate::dataset::ImageSet;
use crate::error::{Error, Result, StageExt};
use crate::features::Channel;
use crate::fusion::{self, build_fhn, train_fhn, FusedHybridNetwork, FusionMode, MultiBatch};
use crate::image::GrayImage;
use crate::mlp::{self, init_weights, Batch, MlpModel};
use crate::modelsearch::{
    channel_init_seed, grid_search, ChannelFeatures, GridPoint, SearchData, SearchResult, SearchSpace, SearchTarget,
};
use crate::pca::{fit_pca, PcaModel};
use crate::preprocess::Normalization;
use crate::scg::{StopRule, TrainReport};
use crate::seed;

/// Architecture search applied before the final fit.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SearchSettings {
    pub space: SearchSpace,
    /// One shared point for all channels instead of one per channel.
    pub joint: bool,
}

#[derive(Debug, Clone, PartialEq)]
pub struct PipelineSettings {
    pub normalization: Normalization,
    pub channels: Vec<ChannelPlan>,
    pub search: Option<SearchSettings>,
    pub fusion: FusionMode,
    pub rule: StopRule,
}

impl PipelineSettings {
    pub fn from_config(cfg: &ExperimentConfig) -> Result<Self> {
        cfg.validate()?;
        let search = if cfg.search.enabled {
            Some(SearchSettings {
                space: cfg.search.space()?,
                joint: cfg.search.joint,
            })
        } else {
            None
        };
        Ok(Self {
            normalization: cfg.normalization.resolve(),
            channels: cfg.channels.plans(),
            search,
            fusion: cfg.fusion.mode,
            rule: cfg.training,
        })
    }
}

/// Fitted feature path of one channel.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ChannelStage {
    pub channel: Channel,
    pub pca: PcaModel,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainedPipeline {
    pub normalization: Normalization,
    pub height: usize,
    pub width: usize,
    pub stages: Vec<ChannelStage>,
    /// Per-channel classifiers; fused by the sum rule unless `fhn` is set.
    pub members: Vec<MlpModel>,
    pub fhn: Option<FusedHybridNetwork>,
    pub category_names: Vec<String>,
}

/// Side products of training, kept for the run directory.
#[derive(Debug, Clone, PartialEq)]
pub struct TrainingLog {
    pub architecture: Vec<GridPoint>,
    pub member_reports: Vec<TrainReport>,
    pub fhn_report: Option<TrainReport>,
    /// One entry per channel, or a single entry for a joint search.
    pub searches: Vec<SearchResult>,
}

/// Per-sample fused output.
#[derive(Debug, Clone, PartialEq)]
pub struct Scored {
    /// `C x M`; each column sums to 1 (member average for the sum rule).
    pub scores: DMatrix<f64>,
    pub predictions: Vec<usize>,
}

fn normalize_all(images: &[GrayImage], norm: Normalization) -> Vec<GrayImage> {
    images.par_iter().map(|im| norm.apply(im)).collect()
}

fn extract_all(channels: &[Channel], images: &[GrayImage]) -> Result<Vec<DMatrix<f64>>> {
    channels.iter().map(|c| c.extract_matrix(images)).collect()
}

// The search uses the same init streams as the final fit, so the chosen
// point is reproduced exactly when the pipeline is trained.
fn run_search(
    learn_feats: &[DMatrix<f64>],
    val_feats: &[DMatrix<f64>],
    learn: &ImageSet,
    val: &ImageSet,
    search: SearchSettings,
    rule: StopRule,
    train_seed: u64,
) -> Result<Vec<SearchResult>> {
    let data = SearchData {
        channels: learn_feats
            .iter()
            .zip(val_feats)
            .map(|(l, v)| ChannelFeatures {
                learn: l.clone(),
                val: v.clone(),
            })
            .collect(),
        learn_labels: learn.labels().to_vec(),
        val_labels: val.labels().to_vec(),
        n_categories: learn.n_categories(),
    };
    let targets: Vec<SearchTarget> = if search.joint {
        vec![SearchTarget::JointSumRule]
    } else {
        (0..learn_feats.len()).map(SearchTarget::Channel).collect()
    };
    targets
        .into_iter()
        .map(|t| grid_search(&data, &search.space, t, rule, train_seed).stage("search"))
        .collect()
}

fn check_sets(learn: &ImageSet, val: &ImageSet) -> Result<()> {
    if learn.is_empty() || val.is_empty() {
        return Err(Error::InfeasibleSplit(format!(
            "training needs learn and validation samples (got {} and {})",
            learn.len(),
            val.len()
        )));
    }
    if (learn.height(), learn.width()) != (val.height(), val.width()) {
        return Err(Error::InvalidArgument(
            "learn and validation images differ in size".into(),
        ));
    }
    Ok(())
}

/// Per-channel feature matrices for the learn and validation sets.
type LearnVal = (Vec<DMatrix<f64>>, Vec<DMatrix<f64>>);

/// A trained channel with its learn and validation PCA features.
type FittedChannel = (ChannelStage, MlpModel, TrainReport, DMatrix<f64>, DMatrix<f64>);

fn channel_features(learn: &ImageSet, val: &ImageSet, settings: &PipelineSettings) -> Result<LearnVal> {
    settings.normalization.validate().stage("normalize")?;
    let channels: Vec<Channel> = settings.channels.iter().map(|p| p.channel).collect();
    let learn_images = normalize_all(learn.images(), settings.normalization);
    let val_images = normalize_all(val.images(), settings.normalization);
    Ok((
        extract_all(&channels, &learn_images).stage("features")?,
        extract_all(&channels, &val_images).stage("features")?,
    ))
}

/// Architecture search alone: one result per channel, or one shared result
/// for a joint search.
pub fn search_architecture(
    learn: &ImageSet,
    val: &ImageSet,
    settings: &PipelineSettings,
    search: SearchSettings,
    train_seed: u64,
) -> Result<Vec<SearchResult>> {
    check_sets(learn, val)?;
    let (learn_feats, val_feats) = channel_features(learn, val, settings)?;
    run_search(&learn_feats, &val_feats, learn, val, search, settings.rule, train_seed)
}

/// Trains on `learn`, early-stopping on `val`. Nothing outside these two sets
/// is read, so test data cannot leak into any fitted statistic.
pub fn train_pipeline(
    learn: &ImageSet,
    val: &ImageSet,
    settings: &PipelineSettings,
    train_seed: u64,
) -> Result<(TrainedPipeline, TrainingLog)> {
    if settings.channels.is_empty() {
        return Err(Error::Config("no channels enabled".into()));
    }
    check_sets(learn, val)?;
    let n_categories = learn.n_categories();
    let channels: Vec<Channel> = settings.channels.iter().map(|p| p.channel).collect();
    let (learn_feats, val_feats) = channel_features(learn, val, settings)?;

    let (architecture, searches) = match settings.search {
        None => (
            settings
                .channels
                .iter()
                .map(|p| GridPoint {
                    n_pcs: p.n_pcs,
                    n_neurons: p.n_neurons,
                })
                .collect(),
            Vec::new(),
        ),
        Some(search) => {
            let results = run_search(&learn_feats, &val_feats, learn, val, search, settings.rule, train_seed)?;
            let points = if search.joint {
                vec![results[0].best; channels.len()]
            } else {
                results.iter().map(|r| r.best).collect()
            };
            (points, results)
        }
    };

    let fitted: Vec<FittedChannel> = (0..channels.len())
        .into_par_iter()
        .map(|k| {
            let point = architecture[k];
            let pca = fit_pca(&learn_feats[k], point.n_pcs, true).stage("pca")?;
            if pca.n_components() < point.n_pcs {
                warn!(
                    "{} channel: only {} of {} components available",
                    channels[k].name(),
                    pca.n_components(),
                    point.n_pcs
                );
            }
            let x_learn = pca.project_rows(&learn_feats[k]).stage("pca")?;
            let x_val = pca.project_rows(&val_feats[k]).stage("pca")?;
            let init = init_weights(
                pca.n_components(),
                point.n_neurons,
                n_categories,
                channel_init_seed(train_seed, k),
            )
            .stage("train")?;
            let (model, report) = mlp::scg_train(
                &init,
                Batch::new(&x_learn, learn.labels()),
                Batch::new(&x_val, val.labels()),
                settings.rule,
            )
            .stage("train")?;
            info!(
                "{} channel: {} PCs, {} neurons, best epoch {} ({})",
                channels[k].name(),
                pca.n_components(),
                point.n_neurons,
                report.best_epoch,
                report.stop_reason
            );
            let stage = ChannelStage {
                channel: channels[k],
                pca,
            };
            Ok((stage, model, report, x_learn, x_val))
        })
        .collect::<Result<_>>()?;

    let mut stages = Vec::new();
    let mut members = Vec::new();
    let mut member_reports = Vec::new();
    let mut learn_x = Vec::new();
    let mut val_x = Vec::new();
    for (s, m, r, xl, xv) in fitted {
        stages.push(s);
        members.push(m);
        member_reports.push(r);
        learn_x.push(xl);
        val_x.push(xv);
    }

    let (fhn, fhn_report) = match settings.fusion {
        FusionMode::SumRule => (None, None),
        mode => {
            let init = build_fhn(&members, mode, seed::derive(train_seed, "init-fhn")).stage("fusion")?;
            let lrefs: Vec<&DMatrix<f64>> = learn_x.iter().collect();
            let vrefs: Vec<&DMatrix<f64>> = val_x.iter().collect();
            let (trained, report) = train_fhn(
                &init,
                MultiBatch {
                    inputs: &lrefs,
                    labels: learn.labels(),
                },
                MultiBatch {
                    inputs: &vrefs,
                    labels: val.labels(),
                },
                settings.rule,
            )
            .stage("fusion")?;
            (Some(trained), Some(report))
        }
    };

    let pipeline = TrainedPipeline {
        normalization: settings.normalization,
        height: learn.height(),
        width: learn.width(),
        stages,
        members,
        fhn,
        category_names: learn.category_names().to_vec(),
    };
    let log = TrainingLog {
        architecture,
        member_reports,
        fhn_report,
        searches,
    };
    Ok((pipeline, log))
}

impl TrainedPipeline {
    pub fn n_categories(&self) -> usize {
        self.category_names.len()
    }

    pub fn fusion_mode(&self) -> FusionMode {
        self.fhn.as_ref().map_or(FusionMode::SumRule, |f| f.mode())
    }

    /// PCA coordinates per channel, one row per image.
    pub fn channel_inputs(&self, images: &[GrayImage]) -> Result<Vec<DMatrix<f64>>> {
        for im in images {
            if (im.height(), im.width()) != (self.height, self.width) {
                return Err(Error::DimensionMismatch {
                    expected: self.height * self.width,
                    got: im.len(),
                })
                .stage("predict");
            }
        }
        let normalized = normalize_all(images, self.normalization);
        self.stages
            .iter()
            .map(|s| {
                let feats = s.channel.extract_matrix(&normalized).stage("features")?;
                s.pca.project_rows(&feats).stage("pca")
            })
            .collect()
    }

    /// Member posteriors, each `C x M`.
    pub fn member_posteriors(&self, images: &[GrayImage]) -> Result<Vec<DMatrix<f64>>> {
        self.channel_inputs(images)?
            .iter()
            .zip(&self.members)
            .map(|(x, m)| m.forward(x).stage("predict"))
            .collect()
    }

    pub fn score(&self, images: &[GrayImage]) -> Result<Scored> {
        match &self.fhn {
            None => {
                let posteriors = self.member_posteriors(images)?;
                let (pr, predictions) = fusion::sum_rule_fuse(&posteriors).stage("fusion")?;
                let k = posteriors.len() as f64;
                Ok(Scored {
                    scores: pr / k,
                    predictions,
                })
            }
            Some(fhn) => {
                let inputs = self.channel_inputs(images)?;
                let refs: Vec<&DMatrix<f64>> = inputs.iter().collect();
                let scores = fhn.forward(&refs).stage("fusion")?;
                let predictions = fusion::argmax_columns(&scores);
                Ok(Scored { scores, predictions })
            }
        }
    }

    pub fn predict(&self, images: &[GrayImage]) -> Result<Vec<usize>> {
        Ok(self.score(images)?.predictions)
    }
}
