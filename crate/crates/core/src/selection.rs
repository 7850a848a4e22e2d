//! Query criteria: inter-head Dice disagreement as uncertainty, mean distance
//! from 0.5 as confidence, the uppermost-histogram-bin confidence threshold,
//! and the strong/weak query split.

use std::io::Write;

use crate::error::{Error, Result};
use crate::raster::{binarize, dice, ProbMap};
use crate::segmenter::MultiHeadPrediction;

/// Offset below the minimum used as the threshold when every confidence is
/// equal, so that all samples pass the strict filter.
pub const DEGENERATE_EPS: f64 = 1e-12;

#[derive(Debug, Clone, PartialEq)]
pub struct SampleScores {
    pub sample_id: String,
    /// Dice of the binarized lower head against the binarized final head.
    pub l_dsc: f64,
    /// Dice of the binarized middle head against the binarized final head.
    pub m_dsc: f64,
    pub mean_dsc: f64,
    /// `1 - mean_dsc`.
    pub uncertainty: f64,
    /// Confidence of the final head, in `[0, 0.5]`.
    pub confidence: f64,
}

impl SampleScores {
    /// Builds scores from the two head agreements; derived fields are filled in.
    pub fn from_parts(
        sample_id: impl Into<String>,
        l_dsc: f64,
        m_dsc: f64,
        confidence: f64,
    ) -> Self {
        let mean_dsc = (l_dsc + m_dsc) / 2.0;
        Self {
            sample_id: sample_id.into(),
            l_dsc,
            m_dsc,
            mean_dsc,
            uncertainty: 1.0 - mean_dsc,
            confidence,
        }
    }
}

pub fn score_sample(
    sample_id: impl Into<String>,
    pred: &MultiHeadPrediction,
) -> Result<SampleScores> {
    let lower = binarize(&pred.lower, 0.5)?;
    let middle = binarize(&pred.middle, 0.5)?;
    let final_ = binarize(&pred.final_, 0.5)?;
    Ok(SampleScores::from_parts(
        sample_id,
        dice(&lower, &final_)?,
        dice(&middle, &final_)?,
        confidence(&pred.final_),
    ))
}

/// Mean absolute distance of the map from 0.5.
pub fn confidence(p: &ProbMap) -> f64 {
    p.values().iter().map(|v| (v - 0.5).abs()).sum::<f64>() / p.len() as f64
}

/// Start of the uppermost of `bins` equal-width bins spanning the score range.
pub fn confidence_threshold(scores: &[f64], bins: usize) -> Result<f64> {
    if bins < 2 {
        return Err(Error::invalid("bins", format!("{bins} must be at least 2")));
    }
    if scores.is_empty() {
        return Err(Error::Empty {
            what: "confidence scores",
        });
    }
    let min = scores.iter().copied().fold(f64::INFINITY, f64::min);
    let max = scores.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    if max == min {
        return Ok(min - DEGENERATE_EPS);
    }
    Ok(min + (bins - 1) as f64 / bins as f64 * (max - min))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct SelectionConfig {
    pub k_strong: usize,
    pub k_weak: usize,
    pub bins: usize,
    /// Whether weak (pseudo-labeled) queries are drawn at all.
    pub pseudo_enabled: bool,
    /// Restrict weak candidates to confidence above the threshold.
    pub confidence_filter: bool,
}

#[derive(Debug, Clone, PartialEq)]
pub struct QuerySplit {
    pub strong_ids: Vec<String>,
    pub weak_ids: Vec<String>,
    /// Confidence threshold over the scored pool; `None` for an empty pool.
    pub t_conf: Option<f64>,
}

impl QuerySplit {
    pub fn role(&self, id: &str) -> &'static str {
        if self.strong_ids.iter().any(|s| s == id) {
            "strong"
        } else if self.weak_ids.iter().any(|s| s == id) {
            "weak"
        } else {
            "none"
        }
    }
}

/// Strong queries are the `k_strong` most uncertain samples; weak queries are
/// the `k_weak` least uncertain among the rest (after the confidence filter
/// when enabled). Ties are broken by ascending id.
pub fn select_queries(scores: &[SampleScores], cfg: &SelectionConfig) -> Result<QuerySplit> {
    let t_conf = if scores.is_empty() {
        None
    } else {
        let conf: Vec<f64> = scores.iter().map(|s| s.confidence).collect();
        Some(confidence_threshold(&conf, cfg.bins)?)
    };

    let mut by_uncertainty: Vec<&SampleScores> = scores.iter().collect();
    by_uncertainty.sort_by(|a, b| {
        b.uncertainty
            .total_cmp(&a.uncertainty)
            .then_with(|| a.sample_id.cmp(&b.sample_id))
    });
    let n_strong = cfg.k_strong.min(by_uncertainty.len());
    let strong_ids: Vec<String> = by_uncertainty[..n_strong]
        .iter()
        .map(|s| s.sample_id.clone())
        .collect();

    let mut weak_ids = Vec::new();
    if cfg.pseudo_enabled {
        let mut rest: Vec<&SampleScores> = by_uncertainty[n_strong..]
            .iter()
            .copied()
            .filter(|s| !cfg.confidence_filter || t_conf.is_some_and(|t| s.confidence > t))
            .collect();
        rest.sort_by(|a, b| {
            a.uncertainty
                .total_cmp(&b.uncertainty)
                .then_with(|| a.sample_id.cmp(&b.sample_id))
        });
        weak_ids = rest
            .iter()
            .take(cfg.k_weak)
            .map(|s| s.sample_id.clone())
            .collect();
    }
    Ok(QuerySplit {
        strong_ids,
        weak_ids,
        t_conf,
    })
}

/// Ranks in descending order of value, 1-based, ties sharing their average rank.
pub fn descending_ranks(values: &[f64]) -> Vec<f64> {
    let mut order: Vec<usize> = (0..values.len()).collect();
    order.sort_by(|&a, &b| values[b].total_cmp(&values[a]));
    let mut ranks = vec![0.0; values.len()];
    let mut start = 0;
    while start < order.len() {
        let mut end = start + 1;
        while end < order.len() && values[order[end]] == values[order[start]] {
            end += 1;
        }
        let avg = (start + end + 1) as f64 / 2.0;
        for &i in &order[start..end] {
            ranks[i] = avg;
        }
        start = end;
    }
    ranks
}

/// Pearson correlation of the descending ranks of two lists. Returns 0 when
/// either list is constant.
pub fn rank_correlation(a: &[f64], b: &[f64]) -> Result<f64> {
    if a.len() != b.len() {
        return Err(Error::invalid(
            "rank_correlation",
            format!("lists have lengths {} and {}", a.len(), b.len()),
        ));
    }
    if a.len() < 3 {
        return Err(Error::invalid(
            "rank_correlation",
            format!("{} pairs, need at least 3", a.len()),
        ));
    }
    let ra = descending_ranks(a);
    let rb = descending_ranks(b);
    let n = ra.len() as f64;
    let ma = ra.iter().sum::<f64>() / n;
    let mb = rb.iter().sum::<f64>() / n;
    let (mut sab, mut saa, mut sbb) = (0.0, 0.0, 0.0);
    for (x, y) in ra.iter().zip(&rb) {
        sab += (x - ma) * (y - mb);
        saa += (x - ma) * (x - ma);
        sbb += (y - mb) * (y - mb);
    }
    if saa == 0.0 || sbb == 0.0 {
        return Ok(0.0);
    }
    Ok((sab / (saa * sbb).sqrt()).clamp(-1.0, 1.0))
}

pub const SCORES_HEADER: [&str; 8] = [
    "iteration",
    "sample_id",
    "l_dsc",
    "m_dsc",
    "mean_dsc",
    "uncertainty",
    "confidence",
    "selected_as",
];

/// Appends one row per score. Write [`SCORES_HEADER`] once beforehand.
pub fn write_scores<W: Write>(
    out: &mut csv::Writer<W>,
    iteration: usize,
    scores: &[SampleScores],
    split: &QuerySplit,
) -> Result<()> {
    for s in scores {
        out.write_record([
            iteration.to_string(),
            s.sample_id.clone(),
            s.l_dsc.to_string(),
            s.m_dsc.to_string(),
            s.mean_dsc.to_string(),
            s.uncertainty.to_string(),
            s.confidence.to_string(),
            split.role(&s.sample_id).to_string(),
        ])?;
    }
    Ok(())
}
