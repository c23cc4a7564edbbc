//! Grid search over (number of PCs, hidden neurons).
//!
//! Every grid point is trained from the same initial seed and scored by
//! validation accuracy. The winner is the most accurate point, then the one
//! with the fewest network parameters, then the lexicographically smallest
//! `(pcs, neurons)`.

use std::collections::BTreeSet;
use std::fmt::Write as _;

use log::warn;
use nalgebra::DMatrix;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::fusion::sum_rule_fuse;
use crate::mlp::{self, init_weights, Batch};
use crate::pca::{fit_pca, PcaModel};
use crate::scg::StopRule;
use crate::seed;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GridRange {
    pub start: usize,
    pub end: usize,
    #[serde(default = "one")]
    pub step: usize,
}

fn one() -> usize {
    1
}

impl GridRange {
    pub const fn new(start: usize, end: usize, step: usize) -> Self {
        Self { start, end, step }
    }

    pub fn values(&self) -> impl Iterator<Item = usize> + '_ {
        (self.start..=self.end).step_by(self.step.max(1))
    }

    pub fn len(&self) -> usize {
        if self.end < self.start || self.step == 0 {
            0
        } else {
            (self.end - self.start) / self.step + 1
        }
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SearchSpace {
    pub pcs: GridRange,
    pub neurons: GridRange,
    /// Run a step-1 pass around the best coarse points.
    #[serde(default)]
    pub refine: bool,
    #[serde(default = "default_top_k")]
    pub top_k: usize,
}

fn default_top_k() -> usize {
    10
}

impl SearchSpace {
    pub fn faces() -> Self {
        Self {
            pcs: GridRange::new(1, 150, 1),
            neurons: GridRange::new(20, 35, 1),
            refine: false,
            top_k: 10,
        }
    }

    pub fn objects() -> Self {
        Self {
            pcs: GridRange::new(1, 50, 1),
            neurons: GridRange::new(1, 100, 1),
            refine: false,
            top_k: 10,
        }
    }

    pub fn large() -> Self {
        Self {
            pcs: GridRange::new(30, 150, 5),
            neurons: GridRange::new(5, 1000, 5),
            refine: true,
            top_k: 10,
        }
    }

    pub fn preset(name: &str) -> Result<Self> {
        match name {
            "faces" => Ok(Self::faces()),
            "objects" => Ok(Self::objects()),
            "large" => Ok(Self::large()),
            other => Err(Error::Config(format!(
                "unknown search preset '{other}' (expected faces, objects or large)"
            ))),
        }
    }

    pub fn single(n_pcs: usize, n_neurons: usize) -> Self {
        Self {
            pcs: GridRange::new(n_pcs, n_pcs, 1),
            neurons: GridRange::new(n_neurons, n_neurons, 1),
            refine: false,
            top_k: 10,
        }
    }

    pub fn validate(&self) -> Result<()> {
        for (name, r) in [("pcs", self.pcs), ("neurons", self.neurons)] {
            if r.step == 0 {
                return Err(Error::Config(format!("{name} step must be >= 1")));
            }
            if r.start == 0 || r.end < r.start {
                return Err(Error::Config(format!(
                    "{name} range {}..={} is empty or starts at 0",
                    r.start, r.end
                )));
            }
        }
        Ok(())
    }

    /// Coarse grid in row-major (pcs outer, neurons inner) order.
    pub fn coarse_points(&self) -> Vec<GridPoint> {
        self.pcs
            .values()
            .flat_map(|p| self.neurons.values().map(move |n| GridPoint { n_pcs: p, n_neurons: n }))
            .collect()
    }

    /// Step-1 neighbourhood of `center`, `+-step` wide, clipped to the ranges.
    fn window(&self, center: GridPoint) -> Vec<GridPoint> {
        let span = |r: GridRange, c: usize| {
            let lo = c.saturating_sub(r.step).max(r.start);
            let hi = (c + r.step).min(r.end);
            lo..=hi
        };
        span(self.pcs, center.n_pcs)
            .flat_map(|p| span(self.neurons, center.n_neurons).map(move |n| GridPoint { n_pcs: p, n_neurons: n }))
            .collect()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct GridPoint {
    pub n_pcs: usize,
    pub n_neurons: usize,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Evaluated {
    pub point: GridPoint,
    pub val_accuracy: f64,
    pub param_count: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Skipped {
    pub point: GridPoint,
    pub reason: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SearchResult {
    pub best: GridPoint,
    pub best_val_accuracy: f64,
    /// Sorted best first.
    pub leaderboard: Vec<Evaluated>,
    pub skipped: Vec<Skipped>,
}

impl SearchResult {
    /// Tab-separated leaderboard, skipped points last.
    pub fn leaderboard_tsv(&self) -> String {
        let mut s = String::from("n_pcs\tn_neurons\tval_accuracy\tparam_count\tstatus\n");
        for e in &self.leaderboard {
            let _ = writeln!(
                s,
                "{}\t{}\t{}\t{}\tok",
                e.point.n_pcs, e.point.n_neurons, e.val_accuracy, e.param_count
            );
        }
        for k in &self.skipped {
            let _ = writeln!(s, "{}\t{}\t\t\tskipped: {}", k.point.n_pcs, k.point.n_neurons, k.reason);
        }
        s
    }
}

fn ranking(a: &Evaluated, b: &Evaluated) -> std::cmp::Ordering {
    b.val_accuracy
        .total_cmp(&a.val_accuracy)
        .then(a.param_count.cmp(&b.param_count))
        .then(a.point.cmp(&b.point))
}

/// Pre-PCA features of one channel for the learn and validation sets.
#[derive(Debug, Clone)]
pub struct ChannelFeatures {
    pub learn: DMatrix<f64>,
    pub val: DMatrix<f64>,
}

#[derive(Debug, Clone)]
pub struct SearchData {
    pub channels: Vec<ChannelFeatures>,
    pub learn_labels: Vec<usize>,
    pub val_labels: Vec<usize>,
    pub n_categories: usize,
}

/// What a grid point is scored on.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SearchTarget {
    /// One channel's classifier on its own.
    Channel(usize),
    /// All channels share the point; scored by sum-rule fused accuracy.
    JointSumRule,
}

/// Seed used to initialise channel `k`'s network.
pub fn channel_init_seed(root: u64, k: usize) -> u64 {
    seed::derive(root, &format!("init-ch{}", k + 1))
}

struct Projected {
    learn: DMatrix<f64>,
    val: DMatrix<f64>,
    available: usize,
}

fn project_channel(ch: &ChannelFeatures, max_pcs: usize) -> Result<Projected> {
    let pca: PcaModel = fit_pca(&ch.learn, max_pcs, true)?;
    Ok(Projected {
        learn: pca.project_rows(&ch.learn)?,
        val: pca.project_rows(&ch.val)?,
        available: pca.n_components(),
    })
}

pub fn grid_search(
    data: &SearchData,
    space: &SearchSpace,
    target: SearchTarget,
    rule: StopRule,
    seed: u64,
) -> Result<SearchResult> {
    space.validate()?;
    let channels: Vec<usize> = match target {
        SearchTarget::Channel(k) if k < data.channels.len() => vec![k],
        SearchTarget::Channel(k) => {
            return Err(Error::InvalidArgument(format!("no channel {k}")));
        }
        SearchTarget::JointSumRule => (0..data.channels.len()).collect(),
    };
    if channels.is_empty() {
        return Err(Error::InvalidArgument("no channels to search".into()));
    }
    // leading components do not depend on how many are kept, so fit once
    let projected: Vec<Projected> = channels
        .iter()
        .map(|&k| project_channel(&data.channels[k], space.pcs.end))
        .collect::<Result<_>>()?;

    let evaluate = |point: GridPoint| -> Result<std::result::Result<Evaluated, Skipped>> {
        let mut posteriors = Vec::with_capacity(channels.len());
        let mut param_count = 0;
        for (&k, proj) in channels.iter().zip(&projected) {
            if point.n_pcs > proj.available {
                return Ok(Err(Skipped {
                    point,
                    reason: format!(
                        "n_pcs {} exceeds the {} available components",
                        point.n_pcs, proj.available
                    ),
                }));
            }
            let learn = proj.learn.columns(0, point.n_pcs).into_owned();
            let val = proj.val.columns(0, point.n_pcs).into_owned();
            let model = init_weights(
                point.n_pcs,
                point.n_neurons,
                data.n_categories,
                channel_init_seed(seed, k),
            )?;
            let (trained, _) = mlp::scg_train(
                &model,
                Batch::new(&learn, &data.learn_labels),
                Batch::new(&val, &data.val_labels),
                rule,
            )?;
            param_count += trained.param_count();
            posteriors.push(trained.forward(&val)?);
        }
        let (_, predictions) = sum_rule_fuse(&posteriors)?;
        let correct = predictions.iter().zip(&data.val_labels).filter(|(p, y)| p == y).count();
        Ok(Ok(Evaluated {
            point,
            val_accuracy: correct as f64 / data.val_labels.len() as f64,
            param_count,
        }))
    };

    let run = |points: &[GridPoint]| -> Result<Vec<std::result::Result<Evaluated, Skipped>>> {
        points.par_iter().map(|&p| evaluate(p)).collect()
    };

    let mut seen: BTreeSet<GridPoint> = BTreeSet::new();
    let mut leaderboard = Vec::new();
    let mut skipped = Vec::new();
    let mut absorb = |results: Vec<std::result::Result<Evaluated, Skipped>>, leaderboard: &mut Vec<Evaluated>| {
        for r in results {
            match r {
                Ok(e) => leaderboard.push(e),
                Err(s) => {
                    warn!("skipping ({}, {}): {}", s.point.n_pcs, s.point.n_neurons, s.reason);
                    skipped.push(s);
                }
            }
        }
    };

    let coarse = space.coarse_points();
    seen.extend(coarse.iter().copied());
    absorb(run(&coarse)?, &mut leaderboard);
    leaderboard.sort_by(ranking);

    if space.refine {
        let fine: Vec<GridPoint> = leaderboard
            .iter()
            .take(space.top_k)
            .flat_map(|e| space.window(e.point))
            .filter(|p| seen.insert(*p))
            .collect();
        absorb(run(&fine)?, &mut leaderboard);
        leaderboard.sort_by(ranking);
    }
    skipped.sort_by_key(|s| s.point);

    let best = leaderboard
        .first()
        .copied()
        .ok_or_else(|| Error::InvalidArgument("every grid point was infeasible for the available data".into()))?;
    Ok(SearchResult {
        best: best.point,
        best_val_accuracy: best.val_accuracy,
        leaderboard,
        skipped,
    })
}
