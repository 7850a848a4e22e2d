//! Experiment driver: one configured run plus optional paired baselines,
//! ablation rows and a fully supervised reference, written as CSV reports.

use std::fs;
use std::path::Path;

use crate::alloop::{
    self, run_from_base, train_base, ALConfig, Ablation, DataSplit, QueryStrategy, RunOutput,
};
use crate::dataset::load_dir;
use crate::error::{Error, Result};
use crate::harness::config::{ablation_rows, ExperimentConfig};
use crate::harness::report::{write_correlation, write_heldout};
use crate::pool::{Provenance, Sample};
use crate::segmenter::{checkpoint, DeepSupervisedNet, Segmenter};
use crate::selection::{write_scores, SCORES_HEADER};
use crate::synthetic::generate;

pub fn load_samples(cfg: &ExperimentConfig) -> Result<Vec<Sample>> {
    match &cfg.dataset_dir {
        Some(dir) => load_dir(dir),
        None => generate(&cfg.synthetic),
    }
}

pub fn make_split(cfg: &ExperimentConfig) -> Result<DataSplit> {
    DataSplit::from_samples(
        load_samples(cfg)?,
        cfg.split.initial,
        cfg.split.unlabeled,
        cfg.split.test,
        cfg.seed(),
    )
}

/// One finished run of the loop under a name.
pub struct Variant {
    pub name: String,
    pub strategy: QueryStrategy,
    pub ablation: Ablation,
    pub output: RunOutput<DeepSupervisedNet>,
}

impl Variant {
    pub fn final_dsc(&self) -> f64 {
        self.output.final_dsc()
    }

    /// Ground-truth masks consumed: initial set plus oracle queries.
    pub fn oracle_labels(&self) -> usize {
        self.output.state.count(Provenance::Initial) + self.output.state.count(Provenance::Oracle)
    }

    pub fn pseudo_labels(&self) -> usize {
        self.output.state.count(Provenance::Pseudo)
    }
}

pub struct ExperimentResults {
    pub split: DataSplit,
    pub base: DeepSupervisedNet,
    /// The configured run first, then baselines and ablation rows.
    pub variants: Vec<Variant>,
    /// Test Dice of a model trained on every initial and pool ground truth.
    pub full_supervision_dsc: Option<f64>,
}

impl ExperimentResults {
    pub fn variant(&self, name: &str) -> Option<&Variant> {
        self.variants.iter().find(|v| v.name == name)
    }
}

/// A named run: strategy and ablation flags on top of `cfg.al`.
pub type PlannedRun = (String, QueryStrategy, Ablation);

/// The runs requested by `cfg`, sharing one split and one base model.
pub fn plan(cfg: &ExperimentConfig) -> Vec<PlannedRun> {
    let mut plan = vec![(
        match cfg.al.strategy {
            QueryStrategy::Dsal => "dsal".to_string(),
            QueryStrategy::Random => "random".to_string(),
        },
        cfg.al.strategy,
        cfg.al.ablation,
    )];
    if cfg.random_baseline && cfg.al.strategy == QueryStrategy::Dsal {
        plan.push((
            "random".to_string(),
            QueryStrategy::Random,
            Ablation::ORACLE_ONLY,
        ));
    }
    if cfg.ablations {
        for (name, ablation) in ablation_rows() {
            plan.push((format!("ablation_{name}"), QueryStrategy::Dsal, ablation));
        }
    }
    plan
}

pub fn run_variants(cfg: &ExperimentConfig) -> Result<ExperimentResults> {
    run_planned(cfg, plan(cfg))
}

/// Runs `runs` from one split and one base model. Runs whose settings match
/// an earlier entry reuse its output.
pub fn run_planned(cfg: &ExperimentConfig, runs: Vec<PlannedRun>) -> Result<ExperimentResults> {
    cfg.validate()?;
    let split = make_split(cfg)?;
    let mut base = DeepSupervisedNet::new(cfg.seed());
    train_base(&mut base, &split, &cfg.al)?;

    let mut variants: Vec<Variant> = Vec::new();
    for (name, strategy, ablation) in runs {
        let al = ALConfig {
            strategy,
            ablation,
            ..cfg.al.clone()
        };
        // identical settings reuse an earlier run
        if let Some(prev) = variants.iter().find(|v| {
            v.strategy == strategy && (strategy == QueryStrategy::Random || v.ablation == ablation)
        }) {
            let output = prev.output.clone();
            variants.push(Variant {
                name,
                strategy,
                ablation,
                output,
            });
            continue;
        }
        let output = run_from_base(&split, &al, base.clone())?;
        variants.push(Variant {
            name,
            strategy,
            ablation,
            output,
        });
    }

    let full_supervision_dsc = if cfg.full_supervision {
        Some(full_supervision(&split, cfg)?)
    } else {
        None
    };
    Ok(ExperimentResults {
        split,
        base,
        variants,
        full_supervision_dsc,
    })
}

/// Trains a fresh model on every ground truth in the initial set and pool
/// with the base schedule and returns its test Dice.
pub fn full_supervision(split: &DataSplit, cfg: &ExperimentConfig) -> Result<f64> {
    let mut model = DeepSupervisedNet::new(cfg.seed());
    let masks = split
        .initial
        .iter()
        .chain(&split.unlabeled)
        .map(alloop::oracle_label)
        .collect::<Result<Vec<_>>>()?;
    let data: Vec<_> = split
        .initial
        .iter()
        .chain(&split.unlabeled)
        .map(|s| &s.image)
        .zip(&masks)
        .collect();
    model.fine_tune(&data, &cfg.al.base_train)?;
    Ok(alloop::evaluate(&model, &split.test, 0)?.test_dsc)
}

fn create_dir(path: &Path) -> Result<()> {
    fs::create_dir_all(path).map_err(|e| Error::io(path, e))
}

/// Writes one run's files into `dir`.
pub fn write_variant(dir: &Path, v: &Variant, timing: bool) -> Result<()> {
    create_dir(dir)?;
    let path = dir.join("run_log.csv");
    let file = fs::File::create(&path).map_err(|e| Error::io(&path, e))?;
    alloop::write_run_log(file, &v.output.records, timing)?;

    let path = dir.join("scores.csv");
    let mut w = csv::Writer::from_path(&path)?;
    w.write_record(SCORES_HEADER)?;
    for (t, scores, split) in &v.output.scores {
        write_scores(&mut w, *t, scores, split)?;
    }
    w.flush().map_err(|e| Error::io(&path, e))?;

    write_heldout(&dir.join("heldout.csv"), &v.output.heldout)?;
    write_correlation(dir, &v.output.heldout)?;
    if let Some(e) = &v.output.ensemble {
        let path = dir.join("ensemble.txt");
        fs::write(&path, e.to_snapshot()).map_err(|e| Error::io(&path, e))?;
    }
    checkpoint::save(&v.output.model.params, &dir.join("model.ckpt"))
}

pub const SUMMARY_HEADER: [&str; 6] = [
    "variant",
    "final_dsc",
    "oracle_labels",
    "pseudo_labels",
    "labeled_total",
    "oracle_fraction",
];

pub fn write_results(
    out: &Path,
    cfg: &ExperimentConfig,
    results: &ExperimentResults,
) -> Result<()> {
    create_dir(out)?;
    let path = out.join("config.txt");
    fs::write(&path, cfg.to_text()).map_err(|e| Error::io(&path, e))?;
    checkpoint::save(&results.base.params, &out.join("base.ckpt"))?;

    let budget = (results.split.initial.len() + results.split.unlabeled.len()) as f64;
    let path = out.join("summary.csv");
    let mut w = csv::Writer::from_path(&path)?;
    w.write_record(SUMMARY_HEADER)?;
    for v in &results.variants {
        write_variant(&out.join(&v.name), v, cfg.timing)?;
        w.write_record([
            v.name.clone(),
            v.final_dsc().to_string(),
            v.oracle_labels().to_string(),
            v.pseudo_labels().to_string(),
            v.output.state.labeled().len().to_string(),
            (v.oracle_labels() as f64 / budget).to_string(),
        ])?;
    }
    if let Some(dsc) = results.full_supervision_dsc {
        w.write_record([
            "full_supervision".to_string(),
            dsc.to_string(),
            budget.to_string(),
            "0".to_string(),
            budget.to_string(),
            "1".to_string(),
        ])?;
    }
    w.flush().map_err(|e| Error::io(&path, e))
}

/// Runs everything `cfg` asks for and writes the reports under `out`.
pub fn run_experiment(cfg: &ExperimentConfig, out: &Path) -> Result<ExperimentResults> {
    create_dir(out)?;
    let results = run_variants(cfg)?;
    write_results(out, cfg, &results)?;
    Ok(results)
}
