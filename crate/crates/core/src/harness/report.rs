//! Held-out (Mean-DSC, R-DSC) pairs and their rank correlation reports.

use std::collections::BTreeMap;
use std::fs;
use std::path::Path;

use crate::alloop::HeldoutPair;
use crate::error::{Error, Result};
use crate::selection::{descending_ranks, rank_correlation};

/// Fewest pairs accepted by [`report_correlation`].
pub const MIN_PAIRS: usize = 10;

#[derive(Debug, Clone, PartialEq)]
pub struct RankRow {
    pub mean_dsc: f64,
    pub r_dsc: f64,
    pub rank_mean_dsc: f64,
    pub rank_r_dsc: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct CorrelationReport {
    pub coefficient: f64,
    pub rows: Vec<RankRow>,
}

/// Ranks both coordinates in descending order and correlates the ranks.
pub fn report_correlation(pairs: &[(f64, f64)]) -> Result<CorrelationReport> {
    if pairs.len() < MIN_PAIRS {
        return Err(Error::invalid(
            "pairs",
            format!("{} pairs, need at least {MIN_PAIRS}", pairs.len()),
        ));
    }
    let a: Vec<f64> = pairs.iter().map(|p| p.0).collect();
    let b: Vec<f64> = pairs.iter().map(|p| p.1).collect();
    let coefficient = rank_correlation(&a, &b)?;
    let rows = descending_ranks(&a)
        .into_iter()
        .zip(descending_ranks(&b))
        .zip(pairs)
        .map(|((ra, rb), &(m, r))| RankRow {
            mean_dsc: m,
            r_dsc: r,
            rank_mean_dsc: ra,
            rank_r_dsc: rb,
        })
        .collect();
    Ok(CorrelationReport { coefficient, rows })
}

pub fn write_heldout(path: &Path, pairs: &[HeldoutPair]) -> Result<()> {
    let mut w = csv::Writer::from_path(path)?;
    w.write_record(["iteration", "sample_id", "mean_dsc", "r_dsc"])?;
    for p in pairs {
        w.write_record([
            p.iteration.to_string(),
            p.sample_id.clone(),
            p.mean_dsc.to_string(),
            p.r_dsc.to_string(),
        ])?;
    }
    w.flush().map_err(|e| Error::io(path, e))
}

pub fn read_heldout(path: &Path) -> Result<Vec<HeldoutPair>> {
    let mut r = csv::Reader::from_path(path)?;
    let mut out = Vec::new();
    for (n, rec) in r.records().enumerate() {
        let rec = rec?;
        let loc = || format!("{} row {}", path.display(), n + 2);
        let field = |i: usize| {
            rec.get(i)
                .ok_or_else(|| Error::parse(loc(), "missing column"))
        };
        let num = |i: usize| -> Result<f64> {
            field(i)?
                .parse()
                .map_err(|e| Error::parse(loc(), format!("{e}")))
        };
        out.push(HeldoutPair {
            iteration: field(0)?
                .parse()
                .map_err(|e| Error::parse(loc(), format!("{e}")))?,
            sample_id: field(1)?.to_string(),
            mean_dsc: num(2)?,
            r_dsc: num(3)?,
        });
    }
    Ok(out)
}

/// Per-iteration coefficients, in iteration order. Iterations with fewer
/// than [`MIN_PAIRS`] pairs are skipped.
pub fn correlation_by_iteration(
    pairs: &[HeldoutPair],
) -> Result<Vec<(usize, usize, CorrelationReport)>> {
    let mut groups: BTreeMap<usize, Vec<&HeldoutPair>> = BTreeMap::new();
    for p in pairs {
        groups.entry(p.iteration).or_default().push(p);
    }
    let mut out = Vec::new();
    for (t, group) in groups {
        if group.len() < MIN_PAIRS {
            continue;
        }
        let xy: Vec<(f64, f64)> = group.iter().map(|p| (p.mean_dsc, p.r_dsc)).collect();
        out.push((t, group.len(), report_correlation(&xy)?));
    }
    Ok(out)
}

/// Writes `correlation.csv` (pairs with ranks) and `correlation_summary.csv`
/// (one coefficient per iteration) next to the held-out pairs.
pub fn write_correlation(dir: &Path, pairs: &[HeldoutPair]) -> Result<()> {
    let reports = correlation_by_iteration(pairs)?;
    let path = dir.join("correlation.csv");
    let mut w = csv::Writer::from_path(&path)?;
    w.write_record([
        "iteration",
        "sample_id",
        "mean_dsc",
        "r_dsc",
        "rank_mean_dsc",
        "rank_r_dsc",
    ])?;
    let mut ids: BTreeMap<usize, Vec<&str>> = BTreeMap::new();
    for p in pairs {
        ids.entry(p.iteration).or_default().push(&p.sample_id);
    }
    for (t, _, rep) in &reports {
        for (row, id) in rep.rows.iter().zip(&ids[t]) {
            w.write_record([
                t.to_string(),
                id.to_string(),
                row.mean_dsc.to_string(),
                row.r_dsc.to_string(),
                row.rank_mean_dsc.to_string(),
                row.rank_r_dsc.to_string(),
            ])?;
        }
    }
    w.flush().map_err(|e| Error::io(&path, e))?;

    let path = dir.join("correlation_summary.csv");
    let mut w = csv::Writer::from_path(&path)?;
    w.write_record(["iteration", "n_pairs", "coefficient"])?;
    for (t, n, rep) in &reports {
        w.write_record([t.to_string(), n.to_string(), rep.coefficient.to_string()])?;
    }
    w.flush().map_err(|e| Error::io(&path, e))
}

/// Rebuilds the correlation files of every run directory under `root` that
/// holds a `heldout.csv`. Returns the directories processed.
pub fn regenerate(root: &Path) -> Result<Vec<String>> {
    let mut dirs: Vec<_> = fs::read_dir(root)
        .map_err(|e| Error::io(root, e))?
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| p.join("heldout.csv").is_file())
        .collect();
    if root.join("heldout.csv").is_file() {
        dirs.push(root.to_path_buf());
    }
    dirs.sort();
    let mut done = Vec::new();
    for d in dirs {
        write_correlation(&d, &read_heldout(&d.join("heldout.csv"))?)?;
        done.push(d.display().to_string());
    }
    Ok(done)
}
