//! Experiment runs over random splits, architecture-search runs, reports and
//! bundle prediction. All run outputs are plain text except the bundles, and
//! nothing time-dependent is written, so a fixed seed gives byte-identical
//! files.

use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use log::info;

use crate::bundle::{load_bundle, save_bundle, ModelBundle};
use crate::config::ExperimentConfig;
use crate::dataset::{load_dataset, load_gray, make_split, ImageSet, SplitPlan};
use crate::error::{Error, Result, StageExt};
use crate::eval::{aggregate_splits, compute_metrics, roc_one_vs_rest, Aggregate, Metrics, RocCurve};
use crate::modelsearch::SearchResult;
use crate::pipeline::{search_architecture, train_pipeline, PipelineSettings, Scored, TrainedPipeline, TrainingLog};
use crate::seed;

pub fn split_seed(root: u64, split: usize) -> u64 {
    seed::derive(root, &format!("split/{split}"))
}

pub fn train_seed(root: u64, split: usize) -> u64 {
    seed::derive(root, &format!("train/{split}"))
}

#[derive(Debug, Clone)]
pub struct SplitOutcome {
    pub index: usize,
    pub plan: SplitPlan,
    pub pipeline: TrainedPipeline,
    pub log: TrainingLog,
    pub test: Scored,
    pub metrics: Metrics,
    pub roc: Option<RocCurve>,
}

#[derive(Debug, Clone)]
pub struct ExperimentOutcome {
    pub run_dir: PathBuf,
    pub splits: Vec<SplitOutcome>,
    pub aggregate: Aggregate,
}

fn split_dir(run_dir: &Path, index: usize) -> PathBuf {
    run_dir.join(format!("split_{index:02}"))
}

fn load_configured(cfg: &ExperimentConfig) -> Result<ImageSet> {
    if cfg.dataset.root.as_os_str().is_empty() {
        return Err(Error::Config("dataset.root is not set".into()));
    }
    load_dataset(&cfg.dataset.root, cfg.dataset.resize).stage("dataset")
}

/// Loads the configured dataset and runs every split.
pub fn run_experiment(cfg: &ExperimentConfig) -> Result<ExperimentOutcome> {
    cfg.validate()?;
    let set = load_configured(cfg)?;
    run_experiment_on(cfg, &set)
}

/// Runs every split on an already loaded set and writes the run directory.
pub fn run_experiment_on(cfg: &ExperimentConfig, set: &ImageSet) -> Result<ExperimentOutcome> {
    let settings = PipelineSettings::from_config(cfg)?;
    let run_dir = cfg.out_dir.clone();
    fs::create_dir_all(&run_dir)?;
    fs::write(run_dir.join("config.toml"), cfg.to_toml())?;

    let mut splits = Vec::with_capacity(cfg.n_splits);
    for s in 0..cfg.n_splits {
        let plan = make_split(set, cfg.split, split_seed(cfg.seed, s)).stage("split")?;
        let learn = set.select(&plan.learn_idx);
        let val = set.select(&plan.val_idx);
        let test = set.select(&plan.test_idx);
        let (pipeline, log) = train_pipeline(&learn, &val, &settings, train_seed(cfg.seed, s))?;
        let scored = pipeline.score(test.images())?;
        let metrics = compute_metrics(&scored.predictions, test.labels(), set.n_categories()).stage("evaluate")?;
        let roc = roc_one_vs_rest(&scored.scores, test.labels()).ok();
        info!("split {s}: test accuracy {:.4}", metrics.accuracy);

        let outcome = SplitOutcome {
            index: s,
            plan,
            pipeline,
            log,
            test: scored,
            metrics,
            roc,
        };
        write_split(&run_dir, cfg, set, &test, &outcome)?;
        splits.push(outcome);
    }

    let all: Vec<Metrics> = splits.iter().map(|o| o.metrics.clone()).collect();
    let aggregate = aggregate_splits(&all)?;
    fs::write(run_dir.join("metrics.tsv"), metrics_tsv(&splits))?;
    fs::write(run_dir.join("summary.tsv"), summary_tsv(&aggregate))?;
    Ok(ExperimentOutcome {
        run_dir,
        splits,
        aggregate,
    })
}

fn write_split(
    run_dir: &Path,
    cfg: &ExperimentConfig,
    set: &ImageSet,
    test: &ImageSet,
    o: &SplitOutcome,
) -> Result<()> {
    let dir = split_dir(run_dir, o.index);
    fs::create_dir_all(&dir)?;
    fs::write(dir.join("split.txt"), o.plan.to_text())?;
    for (stage, report) in o.pipeline.stages.iter().zip(&o.log.member_reports) {
        fs::write(
            dir.join(format!("train_{}.tsv", stage.channel.name())),
            report.to_text(),
        )?;
    }
    if let Some(report) = &o.log.fhn_report {
        fs::write(dir.join("train_fhn.tsv"), report.to_text())?;
    }
    write_leaderboards(&dir, &o.pipeline, &o.log.searches)?;
    fs::write(
        dir.join("confusion.tsv"),
        confusion_tsv(&o.metrics, set.category_names()),
    )?;
    if let Some(roc) = &o.roc {
        fs::write(dir.join("roc.tsv"), roc.to_tsv(set.category_names()))?;
        fs::write(dir.join("auc.tsv"), auc_tsv(roc, set.category_names()))?;
    }
    fs::write(
        dir.join("predictions.tsv"),
        predictions_tsv(test, &o.test, set.category_names()),
    )?;
    save_bundle(
        &ModelBundle {
            config: cfg.clone(),
            pipeline: o.pipeline.clone(),
        },
        &dir.join("bundle.bin"),
    )
}

fn write_leaderboards(dir: &Path, p: &TrainedPipeline, searches: &[SearchResult]) -> Result<()> {
    match searches {
        [] => {}
        [joint] if p.stages.len() > 1 => {
            fs::write(dir.join("leaderboard_joint.tsv"), joint.leaderboard_tsv())?;
        }
        _ => {
            for (stage, r) in p.stages.iter().zip(searches) {
                fs::write(
                    dir.join(format!("leaderboard_{}.tsv", stage.channel.name())),
                    r.leaderboard_tsv(),
                )?;
            }
        }
    }
    Ok(())
}

const METRICS_HEADER: &str = "split\taccuracy\tmacro_precision\tmacro_recall\tmacro_f1\tn_test\tarchitecture";

fn metrics_tsv(splits: &[SplitOutcome]) -> String {
    let mut s = format!("{METRICS_HEADER}\n");
    for o in splits {
        let arch: Vec<String> = o
            .pipeline
            .stages
            .iter()
            .zip(&o.pipeline.members)
            .map(|(st, m)| format!("{}:{}x{}", st.channel.name(), m.n_in(), m.n_hidden()))
            .collect();
        let m = &o.metrics;
        let _ = writeln!(
            s,
            "{}\t{}\t{}\t{}\t{}\t{}\t{}",
            o.index,
            m.accuracy,
            m.macro_precision,
            m.macro_recall,
            m.macro_f1,
            o.plan.test_idx.len(),
            arch.join(",")
        );
    }
    s
}

fn summary_tsv(a: &Aggregate) -> String {
    let mut s = String::from("metric\tmean\tstd\n");
    for (name, v) in [
        ("accuracy", a.accuracy),
        ("macro_precision", a.macro_precision),
        ("macro_recall", a.macro_recall),
        ("macro_f1", a.macro_f1),
    ] {
        let _ = writeln!(s, "{name}\t{}\t{}", v.mean, v.std);
    }
    let _ = writeln!(s, "best_accuracy\t{}\t", a.best_accuracy);
    let _ = writeln!(s, "n_splits\t{}\t", a.n_splits);
    s
}

fn confusion_tsv(m: &Metrics, names: &[String]) -> String {
    let mut s = String::from("true\\predicted");
    for n in names {
        let _ = write!(s, "\t{n}");
    }
    s.push('\n');
    for (row, n) in m.confusion.iter().zip(names) {
        s.push_str(n);
        for v in row {
            let _ = write!(s, "\t{v}");
        }
        s.push('\n');
    }
    s
}

fn auc_tsv(roc: &RocCurve, names: &[String]) -> String {
    let mut s = String::from("category\tauc\n");
    for (name, auc) in names.iter().zip(&roc.auc) {
        match auc {
            Some(a) => writeln!(s, "{name}\t{a}"),
            None => writeln!(s, "{name}\t"),
        }
        .ok();
    }
    let _ = writeln!(s, "macro\t{}", roc.macro_auc);
    s
}

fn predictions_tsv(test: &ImageSet, scored: &Scored, names: &[String]) -> String {
    let mut s = String::from("path\ttruth\tpredicted");
    for n in names {
        let _ = write!(s, "\tscore_{n}");
    }
    s.push('\n');
    for (i, (path, &truth)) in test.source_paths().iter().zip(test.labels()).enumerate() {
        let _ = write!(s, "{path}\t{}\t{}", names[truth], names[scored.predictions[i]]);
        for v in scored.scores.column(i).iter() {
            let _ = write!(s, "\t{v}");
        }
        s.push('\n');
    }
    s
}

/// Architecture search on every split's learn/validation sets; writes the
/// leaderboards and returns the results per split.
pub fn run_search(cfg: &ExperimentConfig) -> Result<Vec<Vec<SearchResult>>> {
    let mut cfg = cfg.clone();
    cfg.search.enabled = true;
    let settings = PipelineSettings::from_config(&cfg)?;
    let search = settings.search.expect("search enabled above");
    let set = load_configured(&cfg)?;
    fs::create_dir_all(&cfg.out_dir)?;
    fs::write(cfg.out_dir.join("config.toml"), cfg.to_toml())?;
    let names: Vec<&str> = settings.channels.iter().map(|p| p.channel.name()).collect();

    let mut all = Vec::with_capacity(cfg.n_splits);
    let mut best = String::from("split\ttarget\tn_pcs\tn_neurons\tval_accuracy\n");
    for s in 0..cfg.n_splits {
        let plan = make_split(&set, cfg.split, split_seed(cfg.seed, s)).stage("split")?;
        let results = search_architecture(
            &set.select(&plan.learn_idx),
            &set.select(&plan.val_idx),
            &settings,
            search,
            train_seed(cfg.seed, s),
        )?;
        let dir = split_dir(&cfg.out_dir, s);
        fs::create_dir_all(&dir)?;
        fs::write(dir.join("split.txt"), plan.to_text())?;
        for (k, r) in results.iter().enumerate() {
            let target = if search.joint { "joint" } else { names[k] };
            fs::write(dir.join(format!("leaderboard_{target}.tsv")), r.leaderboard_tsv())?;
            let _ = writeln!(
                best,
                "{s}\t{target}\t{}\t{}\t{}",
                r.best.n_pcs, r.best.n_neurons, r.best_val_accuracy
            );
        }
        all.push(results);
    }
    fs::write(cfg.out_dir.join("search.tsv"), best)?;
    Ok(all)
}

/// Human-readable summary of a finished run directory, recomputed from its
/// `metrics.tsv`.
pub fn report(run_dir: &Path) -> Result<String> {
    let path = run_dir.join("metrics.tsv");
    let text = fs::read_to_string(&path)
        .map_err(|e| Error::InvalidArgument(format!("cannot read {}: {e}", path.display())))?;
    let mut lines = text.lines();
    if lines.next() != Some(METRICS_HEADER) {
        return Err(Error::InvalidArgument(format!(
            "{} is not a metrics file",
            path.display()
        )));
    }
    let mut rows = Vec::new();
    for line in lines.filter(|l| !l.is_empty()) {
        let f: Vec<&str> = line.split('\t').collect();
        let num = |i: usize| -> Result<f64> {
            f.get(i)
                .and_then(|v| v.parse().ok())
                .ok_or_else(|| Error::InvalidArgument(format!("malformed metrics row: {line}")))
        };
        rows.push((
            f[0].to_string(),
            [num(1)?, num(2)?, num(3)?, num(4)?],
            f.get(6).copied().unwrap_or("").to_string(),
        ));
    }
    if rows.is_empty() {
        return Err(Error::InvalidArgument("metrics file has no splits".into()));
    }
    let mut s = String::new();
    let _ = writeln!(s, "run: {}", run_dir.display());
    let _ = writeln!(s, "split  accuracy  macro_f1  architecture");
    for (split, v, arch) in &rows {
        let _ = writeln!(s, "{split:>5}  {:>7.2}%  {:>7.2}%  {arch}", 100.0 * v[0], 100.0 * v[3]);
    }
    let col = |i: usize| rows.iter().map(|r| r.1[i]).collect::<Vec<_>>();
    for (i, name) in ["accuracy", "macro_precision", "macro_recall", "macro_f1"]
        .iter()
        .enumerate()
    {
        let m = crate::eval::MeanStd::of(&col(i));
        let _ = writeln!(s, "{name:<16} {:.2} ± {:.2}", 100.0 * m.mean, 100.0 * m.std);
    }
    let best = col(0).into_iter().fold(f64::NEG_INFINITY, f64::max);
    let _ = writeln!(
        s,
        "{:<16} {:.2} over {} splits",
        "best_accuracy",
        100.0 * best,
        rows.len()
    );
    Ok(s)
}

#[derive(Debug, Clone, PartialEq)]
pub struct Prediction {
    pub path: PathBuf,
    pub label: usize,
    pub category: String,
    /// Fused score per category.
    pub scores: Vec<f64>,
}

/// Scores images with a stored pipeline. Images whose size differs from the
/// training size are resized the same way the loader does.
pub fn predict_with(pipeline: &TrainedPipeline, paths: &[PathBuf]) -> Result<Vec<Prediction>> {
    let images = paths
        .iter()
        .map(|p| Ok(load_gray(p)?.resize_bilinear(pipeline.height, pipeline.width)))
        .collect::<Result<Vec<_>>>()
        .stage("load")?;
    let scored = pipeline.score(&images)?;
    Ok(paths
        .iter()
        .enumerate()
        .map(|(i, p)| Prediction {
            path: p.clone(),
            label: scored.predictions[i],
            category: pipeline.category_names[scored.predictions[i]].clone(),
            scores: scored.scores.column(i).iter().copied().collect(),
        })
        .collect())
}

pub fn predict(bundle_path: &Path, paths: &[PathBuf]) -> Result<Vec<Prediction>> {
    let bundle = load_bundle(bundle_path).stage("bundle")?;
    predict_with(&bundle.pipeline, paths)
}
