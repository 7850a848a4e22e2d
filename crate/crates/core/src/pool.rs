//! Samples and the labeled/unlabeled pool bookkeeping of the active-learning loop.

use std::collections::HashSet;
use std::fmt;

use crate::error::{Error, Result};
use crate::raster::{BinaryMask, ImageGrid};

/// A training or test sample. `ground_truth` is only consulted by the
/// simulated oracle and by test-set evaluation.
#[derive(Debug, Clone, PartialEq)]
pub struct Sample {
    pub id: String,
    pub image: ImageGrid,
    pub ground_truth: Option<BinaryMask>,
}

impl Sample {
    pub fn new(
        id: impl Into<String>,
        image: ImageGrid,
        ground_truth: Option<BinaryMask>,
    ) -> Result<Self> {
        if let Some(gt) = &ground_truth {
            crate::raster::ensure_same_dims(image.dims(), gt.dims())?;
        }
        Ok(Self {
            id: id.into(),
            image,
            ground_truth,
        })
    }
}

/// Where a label in the labeled set came from.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Provenance {
    Initial,
    Oracle,
    Pseudo,
}

impl fmt::Display for Provenance {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Provenance::Initial => "initial",
            Provenance::Oracle => "oracle",
            Provenance::Pseudo => "pseudo",
        })
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct LabeledEntry {
    pub sample: Sample,
    pub mask: BinaryMask,
    pub provenance: Provenance,
}

/// `L_t`, `U_t` and the iteration counter `t`.
#[derive(Debug, Clone, PartialEq)]
pub struct PoolState {
    labeled: Vec<LabeledEntry>,
    unlabeled: Vec<Sample>,
    iteration: usize,
}

impl PoolState {
    /// Builds `(L_0, U_0)`. Initial labels are the samples' ground truth.
    pub fn new(initial: Vec<Sample>, unlabeled: Vec<Sample>) -> Result<Self> {
        let mut seen = HashSet::new();
        for s in initial.iter().chain(&unlabeled) {
            if !seen.insert(s.id.as_str()) {
                return Err(Error::DuplicateId(s.id.clone()));
            }
        }
        let labeled = initial
            .into_iter()
            .map(|sample| {
                let mask = sample
                    .ground_truth
                    .clone()
                    .ok_or_else(|| Error::MissingGroundTruth(sample.id.clone()))?;
                Ok(LabeledEntry {
                    sample,
                    mask,
                    provenance: Provenance::Initial,
                })
            })
            .collect::<Result<Vec<_>>>()?;
        Ok(Self {
            labeled,
            unlabeled,
            iteration: 0,
        })
    }

    pub fn labeled(&self) -> &[LabeledEntry] {
        &self.labeled
    }

    pub fn unlabeled(&self) -> &[Sample] {
        &self.unlabeled
    }

    pub fn iteration(&self) -> usize {
        self.iteration
    }

    pub fn total(&self) -> usize {
        self.labeled.len() + self.unlabeled.len()
    }

    pub fn count(&self, provenance: Provenance) -> usize {
        self.labeled
            .iter()
            .filter(|e| e.provenance == provenance)
            .count()
    }

    /// Moves `ids` from the unlabeled pool to the labeled set with the given
    /// masks. The iteration counter is untouched; see [`PoolState::advance`].
    pub fn move_to_labeled(
        &self,
        ids: &[String],
        masks: Vec<BinaryMask>,
        provenance: Provenance,
    ) -> Result<PoolState> {
        if ids.len() != masks.len() {
            return Err(Error::invalid(
                "masks",
                format!("{} ids but {} masks", ids.len(), masks.len()),
            ));
        }
        let mut wanted = HashSet::with_capacity(ids.len());
        for id in ids {
            if !wanted.insert(id.as_str()) {
                return Err(Error::DuplicateId(id.clone()));
            }
        }
        let mut remaining = Vec::with_capacity(self.unlabeled.len());
        let mut taken = std::collections::HashMap::with_capacity(ids.len());
        for s in &self.unlabeled {
            if wanted.contains(s.id.as_str()) {
                taken.insert(s.id.as_str(), s);
            } else {
                remaining.push(s.clone());
            }
        }
        let mut labeled = self.labeled.clone();
        for (id, mask) in ids.iter().zip(masks) {
            let sample = taken
                .get(id.as_str())
                .ok_or_else(|| Error::NotInPool(id.clone()))?;
            crate::raster::ensure_same_dims(sample.image.dims(), mask.dims())?;
            labeled.push(LabeledEntry {
                sample: (*sample).clone(),
                mask,
                provenance,
            });
        }
        Ok(PoolState {
            labeled,
            unlabeled: remaining,
            iteration: self.iteration,
        })
    }

    /// Returns the state with `t` incremented by one.
    pub fn advance(mut self) -> PoolState {
        self.iteration += 1;
        self
    }
}
