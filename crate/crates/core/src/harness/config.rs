//! Experiment configuration as flat `key = value` text.
//!
//! Lines starting with `#` and blank lines are ignored. Keys use dotted
//! section prefixes; any key may be omitted to keep its default. Unknown or
//! repeated keys are errors. [`ExperimentConfig::to_text`] writes every key in
//! a fixed order, and parsing that text gives back the same configuration.
//!
//! A single `seed` drives every random choice: data generation, the split,
//! weight initialization, shuffling, random queries and the CRF ensemble.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::path::PathBuf;
use std::str::FromStr;

use crate::alloop::{ALConfig, Ablation, QueryStrategy};
use crate::crf::CrfParams;
use crate::error::{Error, Result};
use crate::segmenter::{LossKind, Optimizer, TrainConfig};
use crate::synthetic::{ShapeKind, SyntheticSpec};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct SplitSizes {
    pub initial: usize,
    pub unlabeled: usize,
    pub test: usize,
}

impl Default for SplitSizes {
    fn default() -> Self {
        Self {
            initial: 40,
            unlabeled: 200,
            test: 100,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ExperimentConfig {
    seed: u64,
    /// Corpus directory; the synthetic generator is used when absent.
    pub dataset_dir: Option<PathBuf>,
    pub synthetic: SyntheticSpec,
    pub split: SplitSizes,
    pub al: ALConfig,
    /// Also run the paired random-query baseline.
    pub random_baseline: bool,
    /// Also run the four ablation rows (oracle only, +pseudo, +confidence, +CRF ensemble).
    pub ablations: bool,
    /// Also train one model on the full initial + unlabeled ground truth.
    pub full_supervision: bool,
    /// Write measured phase durations into run logs.
    pub timing: bool,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        let mut cfg = Self {
            seed: 0,
            dataset_dir: None,
            synthetic: SyntheticSpec::default(),
            split: SplitSizes::default(),
            al: ALConfig::default(),
            random_baseline: true,
            ablations: false,
            full_supervision: false,
            timing: false,
        };
        cfg.set_seed(0);
        cfg
    }
}

impl ExperimentConfig {
    pub fn seed(&self) -> u64 {
        self.seed
    }

    /// Sets the master seed and every seed derived from it.
    pub fn set_seed(&mut self, seed: u64) {
        self.seed = seed;
        self.synthetic.seed = seed;
        self.al.seed = seed;
        self.al.base_train.seed = seed;
        self.al.finetune.seed = seed;
        self.al.ensemble.seed = seed;
    }

    pub fn with_seed(mut self, seed: u64) -> Self {
        self.set_seed(seed);
        self
    }

    pub fn validate(&self) -> Result<()> {
        if self.dataset_dir.is_none() {
            self.synthetic.validate()?;
            let need = self.split.initial + self.split.unlabeled + self.split.test;
            if need > self.synthetic.n_samples {
                return Err(Error::invalid(
                    "split",
                    format!(
                        "{need} samples requested, generator makes {}",
                        self.synthetic.n_samples
                    ),
                ));
            }
        }
        if self.split.initial == 0 {
            return Err(Error::invalid("split.initial", "must be positive"));
        }
        self.al.validate()
    }

    pub fn parse(text: &str) -> Result<Self> {
        let mut cfg = Self::default();
        let mut seen = BTreeMap::new();
        for (n, raw) in text.lines().enumerate() {
            let line = raw.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let loc = format!("line {}", n + 1);
            let (k, v) = line
                .split_once('=')
                .ok_or_else(|| Error::parse(&loc, "expected `key = value`"))?;
            let (k, v) = (k.trim(), v.trim());
            if seen.insert(k.to_string(), n + 1).is_some() {
                return Err(Error::parse(&loc, format!("key `{k}` repeated")));
            }
            cfg.set(k, v).map_err(|e| match e {
                Error::Parse { message, .. } => Error::parse(&loc, message),
                other => other,
            })?;
        }
        cfg.validate()?;
        Ok(cfg)
    }

    /// Applies one key. Seeds are re-derived after `seed` changes.
    pub fn set(&mut self, key: &str, value: &str) -> Result<()> {
        fn p<T: FromStr>(key: &str, v: &str) -> Result<T>
        where
            T::Err: std::fmt::Display,
        {
            v.parse()
                .map_err(|e| Error::parse(key, format!("`{key}`: cannot parse `{v}`: {e}")))
        }
        if let Some(rest) = key.strip_prefix("train.base.") {
            return set_train(&mut self.al.base_train, key, rest, value);
        }
        if let Some(rest) = key.strip_prefix("train.finetune.") {
            return set_train(&mut self.al.finetune, key, rest, value);
        }
        if let Some(rest) = key.strip_prefix("ensemble.center.") {
            let mut map = BTreeMap::new();
            for (k, v) in kv_pairs(&self.al.ensemble.center.to_kv("")) {
                map.insert(k, v);
            }
            if !map.contains_key(rest) {
                return Err(Error::parse(key, format!("unknown key `{key}`")));
            }
            map.insert(rest.to_string(), value.to_string());
            self.al.ensemble.center = CrfParams::from_kv(&map, "")?;
            return Ok(());
        }
        match key {
            "seed" => self.set_seed(p(key, value)?),
            "dataset.dir" => {
                self.dataset_dir = match value {
                    "" | "none" => None,
                    path => Some(PathBuf::from(path)),
                }
            }
            "synthetic.n_samples" => self.synthetic.n_samples = p(key, value)?,
            "synthetic.image_size" => self.synthetic.image_size = p(key, value)?,
            "synthetic.shape" => self.synthetic.shape = ShapeKind::from_str(value)?,
            "synthetic.noise_level" => self.synthetic.noise_level = p(key, value)?,
            "synthetic.occlusion_prob" => self.synthetic.occlusion_prob = p(key, value)?,
            "split.initial" => self.split.initial = p(key, value)?,
            "split.unlabeled" => self.split.unlabeled = p(key, value)?,
            "split.test" => self.split.test = p(key, value)?,
            "al.iterations" => self.al.iterations = p(key, value)?,
            "al.k_strong" => self.al.k_strong = p(key, value)?,
            "al.k_weak" => self.al.k_weak = p(key, value)?,
            "al.bins" => self.al.bins = p(key, value)?,
            "al.pseudo_start_iter" => self.al.pseudo_start_iter = p(key, value)?,
            "al.strategy" => {
                self.al.strategy = match value {
                    "dsal" => QueryStrategy::Dsal,
                    "random" => QueryStrategy::Random,
                    other => return Err(Error::parse(key, format!("unknown strategy `{other}`"))),
                }
            }
            "al.target_dsc" => {
                self.al.target_dsc = match value {
                    "none" => None,
                    v => Some(p(key, v)?),
                }
            }
            "ablation.pseudo_labels" => self.al.ablation.pseudo_labels = p(key, value)?,
            "ablation.confidence_filter" => self.al.ablation.confidence_filter = p(key, value)?,
            "ablation.ensemble_crf" => self.al.ablation.ensemble_crf = p(key, value)?,
            "ensemble.members" => self.al.ensemble.members = p(key, value)?,
            "ensemble.rounds" => self.al.ensemble.rounds = p(key, value)?,
            "ensemble.relative_sigma" => self.al.ensemble.perturb.relative_sigma = p(key, value)?,
            "ensemble.floor" => self.al.ensemble.perturb.floor = p(key, value)?,
            "ensemble.perturb_steps" => self.al.ensemble.perturb.perturb_steps = p(key, value)?,
            "experiment.random_baseline" => self.random_baseline = p(key, value)?,
            "experiment.ablations" => self.ablations = p(key, value)?,
            "experiment.full_supervision" => self.full_supervision = p(key, value)?,
            "output.timing" => self.timing = p(key, value)?,
            _ => return Err(Error::parse(key, format!("unknown key `{key}`"))),
        }
        Ok(())
    }

    /// Every key, one per line, in a fixed order.
    pub fn to_text(&self) -> String {
        let mut s = String::new();
        let mut kv = |k: &str, v: &dyn std::fmt::Display| {
            let _ = writeln!(s, "{k} = {v}");
        };
        kv("seed", &self.seed);
        kv(
            "dataset.dir",
            &self
                .dataset_dir
                .as_ref()
                .map_or("none".to_string(), |p| p.display().to_string()),
        );
        kv("synthetic.n_samples", &self.synthetic.n_samples);
        kv("synthetic.image_size", &self.synthetic.image_size);
        kv("synthetic.shape", &self.synthetic.shape);
        kv("synthetic.noise_level", &self.synthetic.noise_level);
        kv("synthetic.occlusion_prob", &self.synthetic.occlusion_prob);
        kv("split.initial", &self.split.initial);
        kv("split.unlabeled", &self.split.unlabeled);
        kv("split.test", &self.split.test);
        kv("al.iterations", &self.al.iterations);
        kv("al.k_strong", &self.al.k_strong);
        kv("al.k_weak", &self.al.k_weak);
        kv("al.bins", &self.al.bins);
        kv("al.pseudo_start_iter", &self.al.pseudo_start_iter);
        kv(
            "al.strategy",
            &match self.al.strategy {
                QueryStrategy::Dsal => "dsal",
                QueryStrategy::Random => "random",
            },
        );
        kv(
            "al.target_dsc",
            &self
                .al
                .target_dsc
                .map_or("none".to_string(), |t| t.to_string()),
        );
        kv("ablation.pseudo_labels", &self.al.ablation.pseudo_labels);
        kv(
            "ablation.confidence_filter",
            &self.al.ablation.confidence_filter,
        );
        kv("ablation.ensemble_crf", &self.al.ablation.ensemble_crf);
        for (prefix, t) in [
            ("train.base", &self.al.base_train),
            ("train.finetune", &self.al.finetune),
        ] {
            kv(&format!("{prefix}.epochs"), &t.epochs);
            kv(&format!("{prefix}.learning_rate"), &t.learning_rate);
            kv(&format!("{prefix}.batch_size"), &t.batch_size);
            kv(
                &format!("{prefix}.loss"),
                &match t.loss_kind {
                    LossKind::CrossEntropy => "cross_entropy",
                    LossKind::SoftDice => "soft_dice",
                },
            );
            kv(
                &format!("{prefix}.optimizer"),
                &match t.optimizer {
                    Optimizer::Sgd => "sgd",
                    Optimizer::Adam => "adam",
                },
            );
            kv(&format!("{prefix}.alpha_lower"), &t.loss_weights.lower);
            kv(&format!("{prefix}.alpha_middle"), &t.loss_weights.middle);
            kv(&format!("{prefix}.alpha_final"), &t.loss_weights.final_);
        }
        kv("ensemble.members", &self.al.ensemble.members);
        kv("ensemble.rounds", &self.al.ensemble.rounds);
        kv(
            "ensemble.relative_sigma",
            &self.al.ensemble.perturb.relative_sigma,
        );
        kv("ensemble.floor", &self.al.ensemble.perturb.floor);
        kv(
            "ensemble.perturb_steps",
            &self.al.ensemble.perturb.perturb_steps,
        );
        for (k, v) in kv_pairs(&self.al.ensemble.center.to_kv("ensemble.center.")) {
            kv(&k, &v);
        }
        kv("experiment.random_baseline", &self.random_baseline);
        kv("experiment.ablations", &self.ablations);
        kv("experiment.full_supervision", &self.full_supervision);
        kv("output.timing", &self.timing);
        s
    }
}

fn kv_pairs(text: &str) -> Vec<(String, String)> {
    text.lines()
        .filter_map(|l| l.split_once('='))
        .map(|(k, v)| (k.trim().to_string(), v.trim().to_string()))
        .collect()
}

fn set_train(t: &mut TrainConfig, key: &str, field: &str, value: &str) -> Result<()> {
    let real = |v: &str| -> Result<f64> {
        v.parse()
            .map_err(|e| Error::parse(key, format!("`{key}`: cannot parse `{v}`: {e}")))
    };
    let int = |v: &str| -> Result<usize> {
        v.parse()
            .map_err(|e| Error::parse(key, format!("`{key}`: cannot parse `{v}`: {e}")))
    };
    match field {
        "epochs" => t.epochs = int(value)?,
        "learning_rate" => t.learning_rate = real(value)?,
        "batch_size" => t.batch_size = int(value)?,
        "loss" => {
            t.loss_kind = match value {
                "cross_entropy" => LossKind::CrossEntropy,
                "soft_dice" => LossKind::SoftDice,
                other => return Err(Error::parse(key, format!("unknown loss `{other}`"))),
            }
        }
        "optimizer" => {
            t.optimizer = match value {
                "sgd" => Optimizer::Sgd,
                "adam" => Optimizer::Adam,
                other => return Err(Error::parse(key, format!("unknown optimizer `{other}`"))),
            }
        }
        "alpha_lower" => t.loss_weights.lower = real(value)?,
        "alpha_middle" => t.loss_weights.middle = real(value)?,
        "alpha_final" => t.loss_weights.final_ = real(value)?,
        _ => return Err(Error::parse(key, format!("unknown key `{key}`"))),
    }
    Ok(())
}

/// Ablation rows, from oracle labels only to the full method.
pub fn ablation_rows() -> [(&'static str, Ablation); 4] {
    [
        ("ds_unet", Ablation::ORACLE_ONLY),
        (
            "pseudo",
            Ablation {
                pseudo_labels: true,
                confidence_filter: false,
                ensemble_crf: false,
            },
        ),
        (
            "pseudo_confidence",
            Ablation {
                pseudo_labels: true,
                confidence_filter: true,
                ensemble_crf: false,
            },
        ),
        ("pseudo_confidence_crf", Ablation::FULL),
    ]
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn echo_round_trips() {
        let cfg = ExperimentConfig::default();
        assert_eq!(ExperimentConfig::parse(&cfg.to_text()).unwrap(), cfg);
        let mut other = ExperimentConfig::default().with_seed(42);
        other.al.ensemble.center = CrfParams::isic();
        other.al.finetune.loss_kind = LossKind::SoftDice;
        other.al.target_dsc = Some(0.9);
        other.dataset_dir = Some(PathBuf::from("/tmp/corpus"));
        other.timing = true;
        let text = other.to_text();
        assert_eq!(ExperimentConfig::parse(&text).unwrap(), other);
        assert_eq!(ExperimentConfig::parse(&text).unwrap().to_text(), text);
    }

    #[test]
    fn partial_configs_keep_defaults() {
        let cfg = ExperimentConfig::parse(
            "# comment\n\nseed = 7\nal.k_strong=5\nensemble.center.steps = 2\n",
        )
        .unwrap();
        assert_eq!(cfg.seed(), 7);
        assert_eq!(cfg.al.base_train.seed, 7);
        assert_eq!(cfg.synthetic.seed, 7);
        assert_eq!(cfg.al.k_strong, 5);
        assert_eq!(cfg.al.ensemble.center.steps, 2);
        assert_eq!(cfg.al.k_weak, ALConfig::default().k_weak);
    }

    #[test]
    fn bad_configs_are_rejected() {
        for text in [
            "nope = 1",
            "seed = x",
            "seed = 1\nseed = 2",
            "al.strategy = greedy",
            "missing equals",
            "ensemble.members = 4",
            "train.base.alpha_final = 0.7",
            "ensemble.center.nope = 1",
            "split.test = 1000",
        ] {
            assert!(ExperimentConfig::parse(text).is_err(), "{text}");
        }
        let err = ExperimentConfig::parse("seed = 1\nal.bins = x")
            .unwrap_err()
            .to_string();
        assert!(err.contains("line 2"), "{err}");
    }
}
