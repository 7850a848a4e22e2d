//! Weak labeler: an odd-sized ensemble of dense CRFs perturbed around a
//! center, combined by per-pixel majority vote.

use std::collections::BTreeMap;
use std::fmt::Write as _;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

use crate::crf::{self, CrfParams, MessagePath};
use crate::error::{Error, Result};
use crate::raster::{dice, ensure_same_dims, BinaryMask, ImageGrid, ProbMap};

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PerturbSpec {
    /// Standard deviation as a fraction of each center value.
    pub relative_sigma: f64,
    /// Lower bound applied to every perturbed value.
    pub floor: f64,
    pub perturb_steps: bool,
}

impl Default for PerturbSpec {
    fn default() -> Self {
        Self {
            relative_sigma: 0.05,
            floor: 1e-3,
            perturb_steps: false,
        }
    }
}

impl PerturbSpec {
    pub fn validate(&self) -> Result<()> {
        if !(0.0..0.5).contains(&self.relative_sigma) {
            return Err(Error::invalid(
                "relative_sigma",
                format!("{} must be in [0, 0.5)", self.relative_sigma),
            ));
        }
        if !(self.floor > 0.0 && self.floor.is_finite()) {
            return Err(Error::invalid("floor", "must be positive"));
        }
        Ok(())
    }
}

fn jitter<R: Rng>(center: f64, spec: &PerturbSpec, rng: &mut R) -> f64 {
    let sd = spec.relative_sigma * center.abs();
    let draw = if sd > 0.0 {
        Normal::new(center, sd).expect("finite sigma").sample(rng)
    } else {
        center
    };
    draw.max(spec.floor)
}

/// One member drawn around `center`. Compat weights of zero stay zero.
pub fn perturb<R: Rng>(center: &CrfParams, spec: &PerturbSpec, rng: &mut R) -> CrfParams {
    let compat = |c: f64, rng: &mut R| if c == 0.0 { 0.0 } else { jitter(c, spec, rng) };
    let gaussian_sdims = jitter(center.gaussian_sdims, spec, rng);
    let gaussian_compat = compat(center.gaussian_compat, rng);
    let bilateral_sdims = jitter(center.bilateral_sdims, spec, rng);
    let bilateral_schan = jitter(center.bilateral_schan, spec, rng);
    let bilateral_compat = compat(center.bilateral_compat, rng);
    let steps = if spec.perturb_steps {
        (jitter(center.steps as f64, spec, rng).round() as usize).max(1)
    } else {
        center.steps
    };
    CrfParams {
        gaussian_sdims,
        gaussian_compat,
        bilateral_sdims,
        bilateral_schan,
        bilateral_compat,
        steps,
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct CrfEnsemble {
    pub members: Vec<CrfParams>,
    pub center: CrfParams,
    pub spec: PerturbSpec,
    pub seed: u64,
    pub path: MessagePath,
}

/// `m` members, member `k` drawn from ChaCha stream `k` of `seed`.
pub fn build_ensemble(
    center: CrfParams,
    m: usize,
    spec: PerturbSpec,
    seed: u64,
) -> Result<CrfEnsemble> {
    if m.is_multiple_of(2) {
        return Err(Error::invalid("members", format!("{m} must be odd")));
    }
    center.validate()?;
    spec.validate()?;
    let members = (0..m)
        .map(|k| {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            rng.set_stream(k as u64);
            perturb(&center, &spec, &mut rng)
        })
        .collect();
    Ok(CrfEnsemble {
        members,
        center,
        spec,
        seed,
        path: MessagePath::Windowed,
    })
}

/// Per-pixel label held by more than half of `masks`.
pub fn majority_vote(masks: &[BinaryMask]) -> Result<BinaryMask> {
    let Some(first) = masks.first() else {
        return Err(Error::Empty { what: "vote" });
    };
    if masks.len().is_multiple_of(2) {
        return Err(Error::invalid(
            "vote",
            format!("{} masks, need an odd count", masks.len()),
        ));
    }
    let mut counts = vec![0usize; first.len()];
    for m in masks {
        ensure_same_dims(first.dims(), m.dims())?;
        for (c, &v) in counts.iter_mut().zip(m.values()) {
            *c += v as usize;
        }
    }
    let half = masks.len() / 2;
    BinaryMask::new(
        first.height(),
        first.width(),
        counts.into_iter().map(|c| u8::from(c > half)).collect(),
    )
}

impl CrfEnsemble {
    pub fn len(&self) -> usize {
        self.members.len()
    }

    pub fn is_empty(&self) -> bool {
        self.members.is_empty()
    }

    pub fn member_masks(&self, image: &ImageGrid, p: &ProbMap) -> Result<Vec<BinaryMask>> {
        self.members
            .iter()
            .map(|m| crf::infer_with(image, p, m, self.path))
            .collect()
    }

    pub fn refine(&self, image: &ImageGrid, p: &ProbMap) -> Result<BinaryMask> {
        majority_vote(&self.member_masks(image, p)?)
    }

    /// Text snapshot: header fields, the center block, then one block per member.
    pub fn to_snapshot(&self) -> String {
        let mut s = String::from("dsal-ensemble v1\n");
        let _ = writeln!(s, "seed={}", self.seed);
        let _ = writeln!(s, "members={}", self.members.len());
        let _ = writeln!(
            s,
            "path={}",
            match self.path {
                MessagePath::Exact => "exact",
                MessagePath::Windowed => "windowed",
            }
        );
        let _ = writeln!(s, "spec.relative_sigma={}", self.spec.relative_sigma);
        let _ = writeln!(s, "spec.floor={}", self.spec.floor);
        let _ = writeln!(s, "spec.perturb_steps={}", self.spec.perturb_steps);
        s.push_str(&self.center.to_kv("center."));
        for (k, m) in self.members.iter().enumerate() {
            s.push_str(&m.to_kv(&format!("member{k}.")));
        }
        s
    }

    pub fn from_snapshot(text: &str) -> Result<Self> {
        let mut lines = text.lines();
        if lines.next() != Some("dsal-ensemble v1") {
            return Err(Error::parse("ensemble snapshot", "bad magic line"));
        }
        let mut map = BTreeMap::new();
        for (n, line) in lines.enumerate() {
            let line = line.trim();
            if line.is_empty() {
                continue;
            }
            let (k, v) = line.split_once('=').ok_or_else(|| {
                Error::parse(
                    format!("ensemble snapshot line {}", n + 2),
                    "expected key=value",
                )
            })?;
            map.insert(k.to_string(), v.to_string());
        }
        let field = |k: &str| {
            map.get(k)
                .ok_or_else(|| Error::parse(format!("ensemble snapshot key {k}"), "missing"))
        };
        let bad = |k: &str, e: &dyn std::fmt::Display| {
            Error::parse(format!("ensemble snapshot key {k}"), e.to_string())
        };
        let seed: u64 = field("seed")?.parse().map_err(|e| bad("seed", &e))?;
        let count: usize = field("members")?.parse().map_err(|e| bad("members", &e))?;
        let path = match field("path")?.as_str() {
            "exact" => MessagePath::Exact,
            "windowed" => MessagePath::Windowed,
            other => return Err(bad("path", &format!("unknown path `{other}`"))),
        };
        let spec = PerturbSpec {
            relative_sigma: field("spec.relative_sigma")?
                .parse()
                .map_err(|e| bad("spec.relative_sigma", &e))?,
            floor: field("spec.floor")?
                .parse()
                .map_err(|e| bad("spec.floor", &e))?,
            perturb_steps: field("spec.perturb_steps")?
                .parse()
                .map_err(|e| bad("spec.perturb_steps", &e))?,
        };
        let center = CrfParams::from_kv(&map, "center.")?;
        let members = (0..count)
            .map(|k| CrfParams::from_kv(&map, &format!("member{k}.")))
            .collect::<Result<Vec<_>>>()?;
        if count.is_multiple_of(2) {
            return Err(bad("members", &"count must be odd"));
        }
        Ok(Self {
            members,
            center,
            spec,
            seed,
            path,
        })
    }
}

/// Validation triple: image, model probability map, reference mask.
pub type ValidationItem<'a> = (&'a ImageGrid, &'a ProbMap, &'a BinaryMask);

/// Mean validation Dice of every member and of the majority vote.
#[derive(Debug, Clone, PartialEq)]
pub struct EnsembleEvaluation {
    pub member_dice: Vec<f64>,
    pub ensemble_dice: f64,
}

impl EnsembleEvaluation {
    pub fn mean_member_dice(&self) -> f64 {
        self.member_dice.iter().sum::<f64>() / self.member_dice.len() as f64
    }

    fn best_member(&self) -> usize {
        // first index wins ties
        let mut best = 0;
        for (k, &d) in self.member_dice.iter().enumerate() {
            if d > self.member_dice[best] {
                best = k;
            }
        }
        best
    }
}

pub fn evaluate(
    ensemble: &CrfEnsemble,
    validation: &[ValidationItem<'_>],
) -> Result<EnsembleEvaluation> {
    if validation.is_empty() {
        return Err(Error::Empty {
            what: "validation set",
        });
    }
    let mut member_dice = vec![0.0; ensemble.len()];
    let mut ensemble_dice = 0.0;
    for (image, p, truth) in validation {
        let masks = ensemble.member_masks(image, p)?;
        for (acc, m) in member_dice.iter_mut().zip(&masks) {
            *acc += dice(m, truth)?;
        }
        ensemble_dice += dice(&majority_vote(&masks)?, truth)?;
    }
    let n = validation.len() as f64;
    member_dice.iter_mut().for_each(|d| *d /= n);
    Ok(EnsembleEvaluation {
        member_dice,
        ensemble_dice: ensemble_dice / n,
    })
}

#[derive(Debug, Clone, PartialEq)]
pub struct FinetuneRound {
    pub center: CrfParams,
    pub evaluation: EnsembleEvaluation,
}

#[derive(Debug, Clone, PartialEq)]
pub struct FinetuneOutcome {
    /// Best ensemble seen, by validation ensemble Dice.
    pub ensemble: CrfEnsemble,
    pub ensemble_dice: f64,
    /// One entry per evaluated ensemble, in order.
    pub history: Vec<FinetuneRound>,
}

/// Re-centers on the best member while the vote underperforms the mean member,
/// for at most `rounds` rounds, keeping the best ensemble seen.
pub fn greedy_finetune(
    ensemble: &CrfEnsemble,
    validation: &[ValidationItem<'_>],
    rounds: usize,
    seed: u64,
) -> Result<FinetuneOutcome> {
    if validation.is_empty() {
        return Err(Error::Empty {
            what: "validation set",
        });
    }
    let mut outcome = FinetuneOutcome {
        ensemble: ensemble.clone(),
        ensemble_dice: f64::NEG_INFINITY,
        history: Vec::new(),
    };
    let mut current = ensemble.clone();
    for round in 0..rounds {
        let eval = evaluate(&current, validation)?;
        if eval.ensemble_dice > outcome.ensemble_dice {
            outcome.ensemble = current.clone();
            outcome.ensemble_dice = eval.ensemble_dice;
        }
        let stop = eval.ensemble_dice >= eval.mean_member_dice();
        let next_center = current.members[eval.best_member()];
        outcome.history.push(FinetuneRound {
            center: current.center,
            evaluation: eval,
        });
        if stop || round + 1 == rounds {
            break;
        }
        let mut next = build_ensemble(
            next_center,
            current.len(),
            current.spec,
            seed.wrapping_add(round as u64 + 1),
        )?;
        next.path = current.path;
        current = next;
    }
    Ok(outcome)
}
