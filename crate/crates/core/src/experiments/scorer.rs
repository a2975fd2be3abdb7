//! Scores predictions against truth using nothing but the two files.

use std::collections::{BTreeMap, HashMap};
use std::path::{Path, PathBuf};

use serde::Serialize;

use crate::error::{Error, Result};
use crate::io::formats::{read_records, PredictionRecord, TruthRecord};

/// Two-sided 95% standard-normal quantile.
pub const Z95: f64 = 1.959_963_984_540_054;

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Scores {
    pub n: usize,
    pub rmse: f64,
    /// Fraction of truths inside `mean ± 1.96 sd`.
    pub coverage95: f64,
    pub groups: usize,
    /// Groups carrying a finite prior SD.
    pub groups_with_prior: usize,
    /// Groups whose RMSE over all their items is below their RMS prior SD.
    pub groups_beating_prior: usize,
}

impl Scores {
    pub fn fraction_beating_prior(&self) -> f64 {
        if self.groups_with_prior == 0 {
            f64::NAN
        } else {
            self.groups_beating_prior as f64 / self.groups_with_prior as f64
        }
    }
}

#[derive(Default)]
struct GroupAcc {
    sq: f64,
    prior_var: f64,
    n: usize,
    n_prior: usize,
}

/// Pools any number of (truth, prediction) file pairs, e.g. one per seed.
/// Every truth row needs a prediction row with the same `(group, item)`.
pub fn score_files(pairs: &[(PathBuf, PathBuf)]) -> Result<Scores> {
    let mut groups: BTreeMap<String, GroupAcc> = BTreeMap::new();
    let (mut n, mut sq, mut covered) = (0usize, 0.0, 0usize);
    for (truth_path, pred_path) in pairs {
        let truth: Vec<TruthRecord> = read_records(truth_path)?;
        let preds: Vec<PredictionRecord> = read_records(pred_path)?;
        let index = index_predictions(pred_path, &preds)?;
        for t in &truth {
            let p = index.get(&(t.group.as_str(), t.item.as_str())).ok_or_else(|| {
                Error::invalid(format!(
                    "{}: no prediction for group '{}' item '{}'",
                    pred_path.display(),
                    t.group,
                    t.item
                ))
            })?;
            let e = t.value - p.mean;
            n += 1;
            sq += e * e;
            covered += (e.abs() <= Z95 * p.sd) as usize;
            let g = groups.entry(t.group.clone()).or_default();
            g.sq += e * e;
            g.n += 1;
            if p.prior_sd.is_finite() {
                g.prior_var += p.prior_sd * p.prior_sd;
                g.n_prior += 1;
            }
        }
    }
    if n == 0 {
        return Err(Error::invalid("no truth rows to score"));
    }
    let with_prior: Vec<&GroupAcc> = groups.values().filter(|g| g.n_prior == g.n).collect();
    Ok(Scores {
        n,
        rmse: (sq / n as f64).sqrt(),
        coverage95: covered as f64 / n as f64,
        groups: groups.len(),
        groups_with_prior: with_prior.len(),
        groups_beating_prior: with_prior.iter().filter(|g| g.sq < g.prior_var).count(),
    })
}

pub fn score_pair(truth: &Path, prediction: &Path) -> Result<Scores> {
    score_files(&[(truth.to_path_buf(), prediction.to_path_buf())])
}

fn index_predictions<'a>(
    path: &Path,
    preds: &'a [PredictionRecord],
) -> Result<HashMap<(&'a str, &'a str), &'a PredictionRecord>> {
    let mut index = HashMap::with_capacity(preds.len());
    for p in preds {
        if index.insert((p.group.as_str(), p.item.as_str()), p).is_some() {
            return Err(Error::invalid(format!(
                "{}: duplicate prediction for group '{}' item '{}'",
                path.display(),
                p.group,
                p.item
            )));
        }
    }
    Ok(index)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::io::formats::write_records;

    fn t(g: &str, i: &str, v: f64) -> TruthRecord {
        TruthRecord {
            group: g.into(),
            item: i.into(),
            value: v,
        }
    }

    fn p(g: &str, i: &str, m: f64, sd: f64, prior: f64) -> PredictionRecord {
        PredictionRecord {
            group: g.into(),
            item: i.into(),
            mean: m,
            sd,
            prior_sd: prior,
        }
    }

    #[test]
    fn hand_computed_scores() {
        let dir = tempfile::tempdir().unwrap();
        let (a, b) = (dir.path().join("t.csv"), dir.path().join("p.csv"));
        write_records(&a, &[t("v0", "0", 1.0), t("v0", "1", 2.0), t("v1", "0", 0.0)]).unwrap();
        write_records(
            &b,
            &[
                p("v1", "0", 3.0, 1.0, 1.0),
                p("v0", "1", 2.5, 1.0, 1.0),
                p("v0", "0", 1.0, 1.0, 1.0),
            ],
        )
        .unwrap();
        let s = score_pair(&a, &b).unwrap();
        assert_eq!(s.n, 3);
        assert!((s.rmse - ((0.25 + 9.0) / 3.0f64).sqrt()).abs() < 1e-15);
        assert!((s.coverage95 - 2.0 / 3.0).abs() < 1e-15);
        assert_eq!((s.groups, s.groups_with_prior, s.groups_beating_prior), (2, 2, 1));
    }

    #[test]
    fn missing_prediction_is_an_error() {
        let dir = tempfile::tempdir().unwrap();
        let (a, b) = (dir.path().join("t.csv"), dir.path().join("p.csv"));
        write_records(&a, &[t("v0", "0", 1.0)]).unwrap();
        write_records(&b, &[p("v0", "1", 1.0, 1.0, f64::NAN)]).unwrap();
        assert!(score_pair(&a, &b).is_err());
    }
}
