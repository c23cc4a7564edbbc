mod common;

use std::collections::BTreeSet;

use biorec::mlp::param_count;
use biorec::modelsearch::{grid_search, ChannelFeatures, GridPoint, GridRange, SearchData, SearchSpace, SearchTarget};
use biorec::scg::StopRule;
use common::rng;
use nalgebra::DMatrix;
use rand::Rng;

const RULE: StopRule = StopRule {
    max_epochs: 40,
    patience: 4,
};

/// Three categories around the centres drawn from `centre_seed`, in `d`
/// dimensions; `spread` controls the overlap.
fn blobs(centre_seed: u64, seed: u64, n: usize, d: usize, spread: f64) -> (DMatrix<f64>, Vec<usize>) {
    let mut c = rng(centre_seed);
    let centres = DMatrix::from_fn(3, d, |_, _| c.random_range(-2.0..2.0));
    let mut r = rng(seed);
    let labels: Vec<usize> = (0..n).map(|i| i % 3).collect();
    let x = DMatrix::from_fn(n, d, |i, j| {
        centres[(labels[i], j)] + spread * r.random_range(-1.0..1.0)
    });
    (x, labels)
}

fn data(seed: u64, channels: usize, spread: f64) -> SearchData {
    let mut feats = Vec::new();
    let mut labels = (Vec::new(), Vec::new());
    for k in 0..channels {
        let (learn, ll) = blobs(seed + 7 * k as u64, 1, 30, 6 + k, spread);
        let (val, vl) = blobs(seed + 7 * k as u64, 2, 15, 6 + k, spread);
        feats.push(ChannelFeatures { learn, val });
        labels = (ll, vl);
    }
    SearchData {
        channels: feats,
        learn_labels: labels.0,
        val_labels: labels.1,
        n_categories: 3,
    }
}

fn space(pcs: (usize, usize, usize), neurons: (usize, usize, usize), refine: bool) -> SearchSpace {
    SearchSpace {
        pcs: GridRange::new(pcs.0, pcs.1, pcs.2),
        neurons: GridRange::new(neurons.0, neurons.1, neurons.2),
        refine,
        top_k: 10,
    }
}

#[test]
fn ties_go_to_the_fewest_parameters() {
    // well separated: every point reaches full validation accuracy
    let d = data(1, 1, 0.05);
    let s = space((2, 5, 1), (3, 6, 1), false);
    let r = grid_search(&d, &s, SearchTarget::Channel(0), RULE, 9).unwrap();
    assert_eq!(r.best_val_accuracy, 1.0);
    let tied: Vec<_> = r.leaderboard.iter().filter(|e| e.val_accuracy == 1.0).collect();
    let min_params = tied.iter().map(|e| e.param_count).min().unwrap();
    assert_eq!(param_count(r.best.n_pcs, r.best.n_neurons, 3), min_params);
    let cheapest = tied
        .iter()
        .filter(|e| e.param_count == min_params)
        .map(|e| e.point)
        .min()
        .unwrap();
    assert_eq!(r.best, cheapest);
}

#[test]
fn search_is_deterministic() {
    let d = data(2, 3, 0.9);
    let s = space((1, 6, 1), (2, 8, 2), false);
    for target in [SearchTarget::Channel(1), SearchTarget::JointSumRule] {
        let a = grid_search(&d, &s, target, RULE, 5).unwrap();
        let b = grid_search(&d, &s, target, RULE, 5).unwrap();
        assert_eq!(a, b);
        assert_eq!(a.leaderboard_tsv(), b.leaderboard_tsv());
    }
}

#[test]
fn refinement_never_loses_to_the_coarse_pass() {
    for seed in 0..4 {
        let d = data(10 + seed, 1, 1.2);
        let coarse = grid_search(
            &d,
            &space((1, 6, 3), (1, 9, 4), false),
            SearchTarget::Channel(0),
            RULE,
            seed,
        )
        .unwrap();
        let refined = grid_search(
            &d,
            &space((1, 6, 3), (1, 9, 4), true),
            SearchTarget::Channel(0),
            RULE,
            seed,
        )
        .unwrap();
        assert!(refined.best_val_accuracy >= coarse.best_val_accuracy);
        // the coarse points are re-scored identically inside the refined run
        for e in &coarse.leaderboard {
            assert!(refined.leaderboard.contains(e));
        }
    }
}

#[test]
fn leaderboard_covers_the_grid_minus_skipped() {
    let d = data(3, 1, 0.5);
    // 6 features, 30 learn samples: more than 6 components is infeasible
    let s = space((4, 9, 1), (2, 3, 1), false);
    let r = grid_search(&d, &s, SearchTarget::Channel(0), RULE, 1).unwrap();
    let grid: BTreeSet<GridPoint> = s.coarse_points().into_iter().collect();
    let seen: BTreeSet<GridPoint> = r
        .leaderboard
        .iter()
        .map(|e| e.point)
        .chain(r.skipped.iter().map(|k| k.point))
        .collect();
    assert_eq!(seen, grid);
    assert_eq!(r.leaderboard.len() + r.skipped.len(), grid.len());
    assert!(r.skipped.iter().all(|k| k.point.n_pcs > 6));
    assert!(!r.skipped.is_empty());
    for w in r.leaderboard.windows(2) {
        assert!(w[0].val_accuracy >= w[1].val_accuracy);
    }
}

#[test]
fn single_point_space_returns_that_point() {
    let d = data(4, 1, 0.5);
    let r = grid_search(&d, &SearchSpace::single(3, 4), SearchTarget::Channel(0), RULE, 2).unwrap();
    assert_eq!(r.best, GridPoint { n_pcs: 3, n_neurons: 4 });
    assert_eq!(r.leaderboard.len(), 1);
}
