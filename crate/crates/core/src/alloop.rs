//! The active-learning loop: score the unlabeled pool, split queries into
//! oracle-labeled and pseudo-labeled sets, grow the labeled set, fine-tune.

use std::collections::BTreeMap;
use std::io::Write;
use std::time::{Duration, Instant};

use rand::seq::IndexedRandom;
use rand::{seq::SliceRandom, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::crf::CrfParams;
use crate::error::{Error, Result};
use crate::pool::{PoolState, Provenance, Sample};
use crate::raster::{binarize, dice, BinaryMask};
use crate::segmenter::{MultiHeadPrediction, Segmenter, TrainConfig};
use crate::selection::{score_sample, select_queries, QuerySplit, SampleScores, SelectionConfig};
use crate::weaklabeler::{
    build_ensemble, greedy_finetune, CrfEnsemble, PerturbSpec, ValidationItem,
};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum QueryStrategy {
    /// Uncertainty-ranked strong queries plus pseudo-labeled weak queries.
    Dsal,
    /// `k_strong` uniform draws without replacement; no weak queries.
    Random,
}

/// Independent switches for the pseudo-labeling components.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Ablation {
    pub pseudo_labels: bool,
    pub confidence_filter: bool,
    /// Pseudo masks from the CRF ensemble; otherwise the binarized final head.
    pub ensemble_crf: bool,
}

impl Ablation {
    pub const FULL: Ablation = Ablation {
        pseudo_labels: true,
        confidence_filter: true,
        ensemble_crf: true,
    };
    pub const ORACLE_ONLY: Ablation = Ablation {
        pseudo_labels: false,
        confidence_filter: false,
        ensemble_crf: false,
    };
}

impl Default for Ablation {
    fn default() -> Self {
        Self::FULL
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EnsembleConfig {
    pub center: CrfParams,
    /// Odd member count.
    pub members: usize,
    pub perturb: PerturbSpec,
    /// Greedy re-centering rounds run once, when pseudo-labeling starts.
    pub rounds: usize,
    pub seed: u64,
}

impl Default for EnsembleConfig {
    fn default() -> Self {
        Self {
            center: CrfParams::desk(),
            members: 5,
            perturb: PerturbSpec::default(),
            rounds: 3,
            seed: 0,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ALConfig {
    pub iterations: usize,
    pub k_strong: usize,
    pub k_weak: usize,
    pub bins: usize,
    /// First iteration (1-based) that draws weak queries.
    pub pseudo_start_iter: usize,
    /// Training of the initial model on the initial labeled set.
    pub base_train: TrainConfig,
    /// Warm-started training after each iteration; the seed is offset by `t`.
    pub finetune: TrainConfig,
    pub ensemble: EnsembleConfig,
    pub strategy: QueryStrategy,
    pub ablation: Ablation,
    /// Stop once the test Dice reaches this value.
    pub target_dsc: Option<f64>,
    /// Seeds random queries.
    pub seed: u64,
}

impl Default for ALConfig {
    fn default() -> Self {
        Self {
            iterations: 8,
            k_strong: 20,
            k_weak: 10,
            bins: 10,
            pseudo_start_iter: 3,
            base_train: TrainConfig {
                epochs: 30,
                ..TrainConfig::default()
            },
            finetune: TrainConfig {
                epochs: 4,
                learning_rate: 1e-3,
                ..TrainConfig::default()
            },
            ensemble: EnsembleConfig::default(),
            strategy: QueryStrategy::Dsal,
            ablation: Ablation::FULL,
            target_dsc: None,
            seed: 0,
        }
    }
}

impl ALConfig {
    pub fn validate(&self) -> Result<()> {
        if self.iterations == 0 {
            return Err(Error::invalid("iterations", "must be at least 1"));
        }
        if self.pseudo_start_iter == 0 {
            return Err(Error::invalid("pseudo_start_iter", "must be at least 1"));
        }
        if self.bins < 2 {
            return Err(Error::invalid("bins", "must be at least 2"));
        }
        if self.ensemble.members.is_multiple_of(2) {
            return Err(Error::invalid("ensemble.members", "must be odd"));
        }
        if let Some(t) = self.target_dsc {
            if !(0.0..=1.0).contains(&t) {
                return Err(Error::invalid("target_dsc", "must be in [0, 1]"));
            }
        }
        self.base_train.validate()?;
        self.finetune.validate()?;
        self.ensemble.center.validate()?;
        self.ensemble.perturb.validate()
    }

    fn pseudo_active(&self, t: usize) -> bool {
        self.strategy == QueryStrategy::Dsal
            && self.ablation.pseudo_labels
            && t >= self.pseudo_start_iter
    }
}

/// Initial labeled set, unlabeled pool and held-out test set.
#[derive(Debug, Clone, PartialEq)]
pub struct DataSplit {
    pub initial: Vec<Sample>,
    pub unlabeled: Vec<Sample>,
    pub test: Vec<Sample>,
}

impl DataSplit {
    /// Shuffles `samples` with `seed` and cuts consecutive blocks.
    pub fn from_samples(
        mut samples: Vec<Sample>,
        n_initial: usize,
        n_unlabeled: usize,
        n_test: usize,
        seed: u64,
    ) -> Result<Self> {
        let need = n_initial + n_unlabeled + n_test;
        if need > samples.len() {
            return Err(Error::invalid(
                "split",
                format!("{need} samples requested, dataset has {}", samples.len()),
            ));
        }
        if n_initial == 0 {
            return Err(Error::invalid(
                "split",
                "initial labeled set must not be empty",
            ));
        }
        samples.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
        let mut rest = samples.into_iter();
        let initial: Vec<Sample> = rest.by_ref().take(n_initial).collect();
        let unlabeled: Vec<Sample> = rest.by_ref().take(n_unlabeled).collect();
        let test: Vec<Sample> = rest.take(n_test).collect();
        for s in initial.iter().chain(&test) {
            if s.ground_truth.is_none() {
                return Err(Error::MissingGroundTruth(s.id.clone()));
            }
        }
        Ok(Self {
            initial,
            unlabeled,
            test,
        })
    }
}

/// The simulated strong labeler: the stored ground truth.
pub fn oracle_label(sample: &Sample) -> Result<BinaryMask> {
    sample
        .ground_truth
        .clone()
        .ok_or_else(|| Error::MissingGroundTruth(sample.id.clone()))
}

#[derive(Debug, Clone, PartialEq)]
pub struct IterationRecord {
    pub iteration: usize,
    pub strong_ids: Vec<String>,
    pub weak_ids: Vec<String>,
    /// Pool samples whose ground truth was read during this iteration.
    pub ground_truth_reads: Vec<String>,
    /// Mean Dice of the binarized final head over the test set.
    pub test_dsc: f64,
    pub pool_remaining: usize,
    pub labeled_total: usize,
    /// Scoring and selection, annotation, pool update and fine-tuning.
    pub phase_durations: [Duration; 3],
}

/// Mean-Dice estimate and true Dice of one held-out sample.
#[derive(Debug, Clone, PartialEq)]
pub struct HeldoutPair {
    pub iteration: usize,
    pub sample_id: String,
    pub mean_dsc: f64,
    pub r_dsc: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Evaluation {
    pub test_dsc: f64,
    pub pairs: Vec<HeldoutPair>,
}

/// Final-head Dice over `test` plus the per-sample (Mean-DSC, R-DSC) pairs.
pub fn evaluate<S: Segmenter>(model: &S, test: &[Sample], iteration: usize) -> Result<Evaluation> {
    let mut pairs = Vec::with_capacity(test.len());
    for s in test {
        let truth = s
            .ground_truth
            .as_ref()
            .ok_or_else(|| Error::MissingGroundTruth(s.id.clone()))?;
        let pred = model.predict(&s.image)?;
        let scores = score_sample(s.id.clone(), &pred)?;
        pairs.push(HeldoutPair {
            iteration,
            sample_id: s.id.clone(),
            mean_dsc: scores.mean_dsc,
            r_dsc: dice(&binarize(&pred.final_, 0.5)?, truth)?,
        });
    }
    let test_dsc = if pairs.is_empty() {
        0.0
    } else {
        pairs.iter().map(|p| p.r_dsc).sum::<f64>() / pairs.len() as f64
    };
    Ok(Evaluation { test_dsc, pairs })
}

#[derive(Debug, Clone, PartialEq)]
pub struct IterationOutput {
    pub state: PoolState,
    pub record: IterationRecord,
    /// Scores of the pool before selection (empty for random queries).
    pub scores: Vec<SampleScores>,
    pub split: QuerySplit,
    pub evaluation: Evaluation,
}

/// One step `t = state.iteration() + 1`. An empty pool returns `Ok(None)`.
pub fn run_iteration<S: Segmenter>(
    state: PoolState,
    model: &mut S,
    cfg: &ALConfig,
    ensemble: Option<&CrfEnsemble>,
    test: &[Sample],
) -> Result<Option<IterationOutput>> {
    if state.unlabeled().is_empty() {
        return Ok(None);
    }
    let t = state.iteration() + 1;

    // Scoring and selection see images only.
    let clock = Instant::now();
    let mut predictions: BTreeMap<&str, MultiHeadPrediction> = BTreeMap::new();
    let mut scores = Vec::new();
    let split = match cfg.strategy {
        QueryStrategy::Dsal => {
            for s in state.unlabeled() {
                let pred = model.predict(&s.image)?;
                scores.push(score_sample(s.id.clone(), &pred)?);
                predictions.insert(&s.id, pred);
            }
            select_queries(
                &scores,
                &SelectionConfig {
                    k_strong: cfg.k_strong,
                    k_weak: cfg.k_weak,
                    bins: cfg.bins,
                    pseudo_enabled: cfg.pseudo_active(t),
                    confidence_filter: cfg.ablation.confidence_filter,
                },
            )?
        }
        QueryStrategy::Random => {
            let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
            rng.set_stream(t as u64);
            let strong_ids = state
                .unlabeled()
                .choose_multiple(&mut rng, cfg.k_strong)
                .map(|s| s.id.clone())
                .collect();
            QuerySplit {
                strong_ids,
                weak_ids: Vec::new(),
                t_conf: None,
            }
        }
    };
    let phase1 = clock.elapsed();

    let clock = Instant::now();
    let by_id: BTreeMap<&str, &Sample> = state
        .unlabeled()
        .iter()
        .map(|s| (s.id.as_str(), s))
        .collect();
    let strong_masks = split
        .strong_ids
        .iter()
        .map(|id| oracle_label(by_id[id.as_str()]))
        .collect::<Result<Vec<_>>>()?;
    let mut weak_masks = Vec::with_capacity(split.weak_ids.len());
    for id in &split.weak_ids {
        let image = &by_id[id.as_str()].image;
        let p = &predictions[id.as_str()].final_;
        weak_masks.push(match (cfg.ablation.ensemble_crf, ensemble) {
            (true, Some(e)) => e.refine(image, p)?,
            _ => binarize(p, 0.5)?,
        });
    }
    let phase2 = clock.elapsed();

    let clock = Instant::now();
    let state = state
        .move_to_labeled(&split.strong_ids, strong_masks, Provenance::Oracle)?
        .move_to_labeled(&split.weak_ids, weak_masks, Provenance::Pseudo)?
        .advance();
    let data: Vec<_> = state
        .labeled()
        .iter()
        .map(|e| (&e.sample.image, &e.mask))
        .collect();
    model.fine_tune(
        &data,
        &TrainConfig {
            seed: cfg.finetune.seed.wrapping_add(t as u64),
            ..cfg.finetune
        },
    )?;
    let phase3 = clock.elapsed();

    let evaluation = evaluate(model, test, t)?;
    let record = IterationRecord {
        iteration: t,
        strong_ids: split.strong_ids.clone(),
        weak_ids: split.weak_ids.clone(),
        ground_truth_reads: split.strong_ids.clone(),
        test_dsc: evaluation.test_dsc,
        pool_remaining: state.unlabeled().len(),
        labeled_total: state.labeled().len(),
        phase_durations: [phase1, phase2, phase3],
    };
    Ok(Some(IterationOutput {
        state,
        record,
        scores,
        split,
        evaluation,
    }))
}

/// Everything a run produces. `records[0]` describes the base model.
#[derive(Debug, Clone)]
pub struct RunOutput<S> {
    pub records: Vec<IterationRecord>,
    /// `(iteration, scores, split)` per DSAL iteration.
    pub scores: Vec<(usize, Vec<SampleScores>, QuerySplit)>,
    pub heldout: Vec<HeldoutPair>,
    pub ensemble: Option<CrfEnsemble>,
    pub state: PoolState,
    pub model: S,
}

impl<S> RunOutput<S> {
    pub fn final_dsc(&self) -> f64 {
        self.records.last().map_or(0.0, |r| r.test_dsc)
    }
}

/// Trains `model` on the initial labeled set.
pub fn train_base<S: Segmenter>(model: &mut S, split: &DataSplit, cfg: &ALConfig) -> Result<()> {
    let masks = split
        .initial
        .iter()
        .map(oracle_label)
        .collect::<Result<Vec<_>>>()?;
    let data: Vec<_> = split.initial.iter().map(|s| &s.image).zip(&masks).collect();
    model.fine_tune(&data, &cfg.base_train)
}

/// Base training followed by the loop.
pub fn run<S: Segmenter>(split: &DataSplit, cfg: &ALConfig, mut model: S) -> Result<RunOutput<S>> {
    cfg.validate()?;
    train_base(&mut model, split, cfg)?;
    run_from_base(split, cfg, model)
}

/// The loop from an already trained base model.
pub fn run_from_base<S: Segmenter>(
    split: &DataSplit,
    cfg: &ALConfig,
    mut model: S,
) -> Result<RunOutput<S>> {
    cfg.validate()?;
    let mut state = PoolState::new(split.initial.clone(), split.unlabeled.clone())?;
    let base = evaluate(&model, &split.test, 0)?;
    let mut records = vec![IterationRecord {
        iteration: 0,
        strong_ids: Vec::new(),
        weak_ids: Vec::new(),
        ground_truth_reads: Vec::new(),
        test_dsc: base.test_dsc,
        pool_remaining: state.unlabeled().len(),
        labeled_total: state.labeled().len(),
        phase_durations: [Duration::ZERO; 3],
    }];
    let mut heldout = base.pairs;
    let mut scores_log = Vec::new();
    let mut ensemble: Option<CrfEnsemble> = None;

    for t in 1..=cfg.iterations {
        if cfg
            .target_dsc
            .is_some_and(|target| records.last().is_some_and(|r| r.test_dsc >= target))
        {
            break;
        }
        if ensemble.is_none() && cfg.pseudo_active(t) && cfg.ablation.ensemble_crf {
            ensemble = Some(prepare_ensemble(&model, &state, cfg)?);
        }
        let Some(out) = run_iteration(
            state.clone(),
            &mut model,
            cfg,
            ensemble.as_ref(),
            &split.test,
        )?
        else {
            break;
        };
        state = out.state;
        if cfg.strategy == QueryStrategy::Dsal {
            scores_log.push((t, out.scores, out.split));
        }
        heldout.extend(out.evaluation.pairs);
        records.push(out.record);
    }
    Ok(RunOutput {
        records,
        scores: scores_log,
        heldout,
        ensemble,
        state,
        model,
    })
}

/// Builds the ensemble around the configured center and re-centers it on
/// the current labeled set, using model predictions as unaries.
pub fn prepare_ensemble<S: Segmenter>(
    model: &S,
    state: &PoolState,
    cfg: &ALConfig,
) -> Result<CrfEnsemble> {
    let ec = &cfg.ensemble;
    let ensemble = build_ensemble(ec.center, ec.members, ec.perturb, ec.seed)?;
    if ec.rounds == 0 {
        return Ok(ensemble);
    }
    let probs = state
        .labeled()
        .iter()
        .map(|e| Ok(model.predict(&e.sample.image)?.final_))
        .collect::<Result<Vec<_>>>()?;
    let validation: Vec<ValidationItem<'_>> = state
        .labeled()
        .iter()
        .zip(&probs)
        .map(|(e, p)| (&e.sample.image, p, &e.mask))
        .collect();
    Ok(greedy_finetune(&ensemble, &validation, ec.rounds, ec.seed)?.ensemble)
}

pub const RUN_LOG_HEADER: [&str; 9] = [
    "t",
    "n_strong",
    "n_weak",
    "pool_remaining",
    "labeled_total",
    "test_dsc",
    "phase1_ms",
    "phase2_ms",
    "phase3_ms",
];

/// Writes the run log. Durations are written as 0 unless `timing` is set, so
/// logs of identical runs compare equal byte for byte.
pub fn write_run_log<W: Write>(out: W, records: &[IterationRecord], timing: bool) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record(RUN_LOG_HEADER)?;
    for r in records {
        let ms = |d: Duration| {
            if timing {
                d.as_millis().to_string()
            } else {
                "0".to_string()
            }
        };
        w.write_record([
            r.iteration.to_string(),
            r.strong_ids.len().to_string(),
            r.weak_ids.len().to_string(),
            r.pool_remaining.to_string(),
            r.labeled_total.to_string(),
            r.test_dsc.to_string(),
            ms(r.phase_durations[0]),
            ms(r.phase_durations[1]),
            ms(r.phase_durations[2]),
        ])?;
    }
    w.flush().map_err(|e| Error::Csv(e.into()))?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::raster::{ImageGrid, ProbMap};
    use crate::synthetic::{generate, SyntheticSpec};
    use std::cell::Cell;
    use std::collections::BTreeSet;

    /// Cheap stand-in: heads threshold the image at shifted levels.
    #[derive(Clone, Default)]
    struct ThresholdModel {
        shift: f64,
        tuned: Cell<usize>,
    }

    impl Segmenter for ThresholdModel {
        fn predict(&self, image: &ImageGrid) -> Result<MultiHeadPrediction> {
            let (h, w) = image.dims();
            let head = |s: f64| {
                ProbMap::new(
                    h,
                    w,
                    image
                        .values()
                        .iter()
                        .map(|&v| (v + s).clamp(0.0, 1.0))
                        .collect(),
                )
            };
            MultiHeadPrediction::new(
                head(self.shift - 0.1)?,
                head(self.shift + 0.05)?,
                head(self.shift)?,
            )
        }

        fn fine_tune(&mut self, data: &[(&ImageGrid, &BinaryMask)], _: &TrainConfig) -> Result<()> {
            if data.is_empty() {
                return Err(Error::Empty {
                    what: "training set",
                });
            }
            self.tuned.set(self.tuned.get() + 1);
            Ok(())
        }
    }

    fn split(n_initial: usize, n_unlabeled: usize, n_test: usize, seed: u64) -> DataSplit {
        let samples = generate(&SyntheticSpec {
            n_samples: n_initial + n_unlabeled + n_test,
            image_size: 12,
            ..SyntheticSpec::default()
        })
        .unwrap();
        DataSplit::from_samples(samples, n_initial, n_unlabeled, n_test, seed).unwrap()
    }

    fn small_cfg() -> ALConfig {
        ALConfig {
            iterations: 5,
            k_strong: 4,
            k_weak: 3,
            bins: 5,
            pseudo_start_iter: 2,
            ensemble: EnsembleConfig {
                rounds: 1,
                ..EnsembleConfig::default()
            },
            ..ALConfig::default()
        }
    }

    #[test]
    fn oracle_returns_ground_truth() {
        let s = split(2, 0, 0, 0).initial.remove(0);
        let m = oracle_label(&s).unwrap();
        assert_eq!(Some(&m), s.ground_truth.as_ref());
        assert_eq!(oracle_label(&s).unwrap(), m);
        let bare = Sample::new("x", s.image.clone(), None).unwrap();
        assert!(matches!(
            oracle_label(&bare),
            Err(Error::MissingGroundTruth(_))
        ));
    }

    #[test]
    fn split_is_seeded_and_checked() {
        let a = split(3, 5, 4, 7);
        assert_eq!(a, split(3, 5, 4, 7));
        assert_ne!(a.initial, split(3, 5, 4, 8).initial);
        let samples = generate(&SyntheticSpec {
            n_samples: 5,
            image_size: 8,
            ..SyntheticSpec::default()
        })
        .unwrap();
        assert!(DataSplit::from_samples(samples, 2, 2, 2, 0).is_err());
    }

    #[test]
    fn loop_bookkeeping() {
        let data = split(6, 40, 5, 1);
        let cfg = small_cfg();
        let out = run(&data, &cfg, ThresholdModel::default()).unwrap();
        assert_eq!(out.records.len(), cfg.iterations + 1);
        let mut seen = BTreeSet::new();
        let mut prev_pool = 40;
        for r in &out.records[1..] {
            for id in r.strong_ids.iter().chain(&r.weak_ids) {
                assert!(seen.insert(id.clone()), "{id} selected twice");
            }
            assert_eq!(
                r.pool_remaining,
                prev_pool - r.strong_ids.len() - r.weak_ids.len()
            );
            prev_pool = r.pool_remaining;
            assert_eq!(r.ground_truth_reads, r.strong_ids);
            assert!(r
                .weak_ids
                .iter()
                .all(|id| !r.ground_truth_reads.contains(id)));
            if r.iteration < cfg.pseudo_start_iter {
                assert!(r.weak_ids.is_empty());
            }
            assert_eq!(r.strong_ids.len(), cfg.k_strong);
        }
        let strong: usize = out.records.iter().map(|r| r.strong_ids.len()).sum();
        let weak: usize = out.records.iter().map(|r| r.weak_ids.len()).sum();
        assert_eq!(
            out.state.count(Provenance::Initial) + strong + weak,
            out.state.labeled().len()
        );
        assert_eq!(out.state.count(Provenance::Pseudo), weak);
        assert!(out.ensemble.is_some());
        assert_eq!(out.model.tuned.get(), cfg.iterations + 1);
        assert_eq!(out.heldout.len(), 5 * (cfg.iterations + 1));
    }

    #[test]
    fn runs_are_reproducible() {
        let data = split(6, 30, 4, 2);
        let strip = |mut rs: Vec<IterationRecord>| {
            rs.iter_mut()
                .for_each(|r| r.phase_durations = [Duration::ZERO; 3]);
            rs
        };
        let a = run(&data, &small_cfg(), ThresholdModel::default()).unwrap();
        let b = run(&data, &small_cfg(), ThresholdModel::default()).unwrap();
        assert_eq!(strip(a.records), strip(b.records));
        assert_eq!(a.scores, b.scores);
    }

    #[test]
    fn rsna_shaped_pool_exhausts_by_iteration_seven() {
        let data = split(10, 129, 2, 3);
        let cfg = ALConfig {
            iterations: 12,
            k_strong: 10,
            k_weak: 10,
            bins: 5,
            pseudo_start_iter: 1,
            ablation: Ablation {
                confidence_filter: false,
                ensemble_crf: false,
                ..Ablation::FULL
            },
            ..ALConfig::default()
        };
        let out = run(&data, &cfg, ThresholdModel::default()).unwrap();
        let last = out.records.last().unwrap();
        assert_eq!(last.iteration, 7);
        assert_eq!(last.pool_remaining, 0);
        assert_eq!((last.strong_ids.len(), last.weak_ids.len()), (9, 0));
    }

    #[test]
    fn oversized_query_takes_whole_pool() {
        let data = split(3, 5, 2, 4);
        let cfg = ALConfig {
            k_strong: 50,
            ..small_cfg()
        };
        let out = run(&data, &cfg, ThresholdModel::default()).unwrap();
        assert_eq!(out.records.len(), 2);
        assert_eq!(out.records[1].strong_ids.len(), 5);
    }

    #[test]
    fn random_strategy_draws_only_strong() {
        let data = split(6, 40, 3, 5);
        let cfg = ALConfig {
            strategy: QueryStrategy::Random,
            ..small_cfg()
        };
        let out = run(&data, &cfg, ThresholdModel::default()).unwrap();
        assert!(out.records.iter().all(|r| r.weak_ids.is_empty()));
        assert!(out.scores.is_empty() && out.ensemble.is_none());
        let again = run(&data, &cfg, ThresholdModel::default()).unwrap();
        let ids = |o: &RunOutput<ThresholdModel>| {
            o.records
                .iter()
                .map(|r| r.strong_ids.clone())
                .collect::<Vec<_>>()
        };
        assert_eq!(ids(&out), ids(&again));
    }

    #[test]
    fn oracle_only_ablation_has_no_pseudo_labels() {
        let data = split(6, 40, 3, 6);
        let cfg = ALConfig {
            ablation: Ablation::ORACLE_ONLY,
            ..small_cfg()
        };
        let out = run(&data, &cfg, ThresholdModel::default()).unwrap();
        assert_eq!(out.state.count(Provenance::Pseudo), 0);
    }

    #[test]
    fn target_dsc_stops_early() {
        let data = split(6, 40, 3, 7);
        let cfg = ALConfig {
            target_dsc: Some(0.0),
            ..small_cfg()
        };
        let out = run(&data, &cfg, ThresholdModel::default()).unwrap();
        assert_eq!(out.records.len(), 1);
    }

    #[test]
    fn run_log_is_stable_without_timing() {
        let r = IterationRecord {
            iteration: 1,
            strong_ids: vec!["a".into(), "b".into()],
            weak_ids: vec!["c".into()],
            ground_truth_reads: vec![],
            test_dsc: 0.5,
            pool_remaining: 7,
            labeled_total: 13,
            phase_durations: [Duration::from_millis(5); 3],
        };
        let mut buf = Vec::new();
        write_run_log(&mut buf, std::slice::from_ref(&r), false).unwrap();
        assert_eq!(
            String::from_utf8(buf).unwrap(),
            "t,n_strong,n_weak,pool_remaining,labeled_total,test_dsc,phase1_ms,phase2_ms,phase3_ms\n1,2,1,7,13,0.5,0,0,0\n"
        );
        let mut buf = Vec::new();
        write_run_log(&mut buf, &[r], true).unwrap();
        assert!(String::from_utf8(buf).unwrap().ends_with("0.5,5,5,5\n"));
    }
}
