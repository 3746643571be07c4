//! Balanced and overall accuracy, and per-attribute / per-trait reports.

use std::collections::HashMap;
use std::io::{Read, Write};

use log::warn;
use serde::Serialize;

use crate::data::{TriLabel, POSTERIOR_SUFFIX, PSEUDO_SUFFIX};
use crate::error::{Error, Result};
use crate::math::fmt_f64;

/// Confusion counts of a binary decision: ground-truth positives and
/// negatives, and how many of each were predicted correctly.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize)]
pub struct BinaryCounts {
    #[serde(rename = "N_p")]
    pub positives: usize,
    #[serde(rename = "N_n")]
    pub negatives: usize,
    #[serde(rename = "n_p")]
    pub true_positives: usize,
    #[serde(rename = "n_n")]
    pub true_negatives: usize,
}

impl BinaryCounts {
    pub fn new(
        positives: usize,
        negatives: usize,
        true_positives: usize,
        true_negatives: usize,
    ) -> Result<Self> {
        if true_positives > positives || true_negatives > negatives {
            return Err(Error::Schema(format!(
                "correct counts ({true_positives}, {true_negatives}) exceed class sizes ({positives}, {negatives})"
            )));
        }
        Ok(BinaryCounts {
            positives,
            negatives,
            true_positives,
            true_negatives,
        })
    }

    pub fn from_decisions(predicted: &[bool], truth: &[bool]) -> Self {
        let mut c = BinaryCounts::default();
        for (&p, &t) in predicted.iter().zip(truth) {
            c.add(p, t);
        }
        c
    }

    pub fn add(&mut self, predicted: bool, truth: bool) {
        if truth {
            self.positives += 1;
            self.true_positives += usize::from(predicted);
        } else {
            self.negatives += 1;
            self.true_negatives += usize::from(!predicted);
        }
    }

    /// Swaps the roles of the two classes.
    pub fn swapped(self) -> Self {
        BinaryCounts {
            positives: self.negatives,
            negatives: self.positives,
            true_positives: self.true_negatives,
            true_negatives: self.true_positives,
        }
    }
}

/// `0.5 · (n_p / N_p + n_n / N_n)`.
pub fn balanced_accuracy(c: &BinaryCounts) -> Result<f64> {
    if c.positives == 0 || c.negatives == 0 {
        return Err(Error::OneClassAbsent {
            n_pos: c.positives,
            n_neg: c.negatives,
        });
    }
    Ok(0.5
        * (c.true_positives as f64 / c.positives as f64
            + c.true_negatives as f64 / c.negatives as f64))
}

/// `(n_p + n_n) / (N_p + N_n)`.
pub fn overall_accuracy(c: &BinaryCounts) -> Result<f64> {
    let total = c.positives + c.negatives;
    if total == 0 {
        return Err(Error::EmptySet);
    }
    Ok((c.true_positives + c.true_negatives) as f64 / total as f64)
}

/// One predicted probability for one `(sample or pair id, attribute or trait)`.
#[derive(Debug, Clone, PartialEq)]
pub struct Prediction {
    pub id: String,
    pub name: String,
    pub probability: f64,
}

/// Ground-truth tri-state labels keyed by id, with named columns.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct TruthTable {
    pub names: Vec<String>,
    pub rows: HashMap<String, Vec<TriLabel>>,
}

impl TruthTable {
    pub fn get(&self, id: &str, name: &str) -> Option<TriLabel> {
        let col = self.names.iter().position(|n| n == name)?;
        self.rows.get(id).map(|r| r[col])
    }
}

/// Per-name decision threshold on probabilities.
#[derive(Debug, Clone, PartialEq)]
pub struct Thresholds {
    pub default: f64,
    pub per_name: HashMap<String, f64>,
}

impl Default for Thresholds {
    fn default() -> Self {
        Thresholds {
            default: 0.5,
            per_name: HashMap::new(),
        }
    }
}

impl Thresholds {
    pub fn uniform(t: f64) -> Self {
        Thresholds {
            default: t,
            per_name: HashMap::new(),
        }
    }

    pub fn for_name(&self, name: &str) -> f64 {
        self.per_name.get(name).copied().unwrap_or(self.default)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ReportRow {
    pub name: String,
    #[serde(flatten)]
    pub counts: BinaryCounts,
    /// `None` when one class is absent from the truth.
    pub balanced_acc: Option<f64>,
    pub overall_acc: f64,
}

/// Thresholds every prediction whose truth is annotated and tallies one row per name.
///
/// Rows follow the first appearance of each name among the predictions.
/// Predictions for ids or names absent from the truth are skipped; an empty
/// id overlap is an error.
pub fn report(
    predictions: &[Prediction],
    truth: &TruthTable,
    thresholds: &Thresholds,
) -> Result<Vec<ReportRow>> {
    let overlap = predictions.iter().any(|p| truth.rows.contains_key(&p.id));
    if !overlap {
        return Err(Error::IdMismatch(
            "no prediction id appears in the truth table".into(),
        ));
    }
    let mut order: Vec<String> = Vec::new();
    let mut counts: HashMap<String, BinaryCounts> = HashMap::new();
    let mut skipped = 0usize;
    for p in predictions {
        let Some(label) = truth.get(&p.id, &p.name) else {
            skipped += 1;
            continue;
        };
        let Some(t) = label.as_bool() else {
            continue;
        };
        if !counts.contains_key(&p.name) {
            order.push(p.name.clone());
        }
        let decided = p.probability >= thresholds.for_name(&p.name);
        counts.entry(p.name.clone()).or_default().add(decided, t);
    }
    if skipped > 0 {
        warn!("{skipped} predictions have no matching truth cell");
    }
    order
        .into_iter()
        .map(|name| {
            let c = counts[&name];
            Ok(ReportRow {
                balanced_acc: balanced_accuracy(&c).ok(),
                overall_acc: overall_accuracy(&c)?,
                name,
                counts: c,
            })
        })
        .collect()
}

/// Multiclass decision over a group of mutually exclusive names: per id, the
/// highest-probability member of `group` becomes 1 and the rest 0 (first
/// listed wins ties). Predictions outside the group pass through.
pub fn argmax_group(predictions: &[Prediction], group: &[String]) -> Vec<Prediction> {
    let rank = |name: &str| group.iter().position(|g| g == name);
    let mut best: HashMap<&str, (f64, usize)> = HashMap::new();
    for p in predictions {
        if let Some(r) = rank(&p.name) {
            let e = best.entry(p.id.as_str()).or_insert((f64::NEG_INFINITY, usize::MAX));
            if p.probability > e.0 || (p.probability == e.0 && r < e.1) {
                *e = (p.probability, r);
            }
        }
    }
    predictions
        .iter()
        .map(|p| match rank(&p.name) {
            Some(r) => Prediction {
                probability: if best[p.id.as_str()].1 == r { 1.0 } else { 0.0 },
                ..p.clone()
            },
            None => p.clone(),
        })
        .collect()
}

const META_COLUMNS: [&str; 3] = ["source", "left_id", "right_id"];

/// Reads predictions in long form (`id,<name column>,probability`) or wide
/// form (`id,...` with per-name columns; `<name>_posterior` columns take
/// precedence over 0/1 label columns, empty cells are skipped).
pub fn read_predictions<R: Read>(reader: R) -> Result<Vec<Prediction>> {
    let mut rdr = csv::Reader::from_reader(reader);
    let header = rdr.headers()?.clone();
    if header.get(0) != Some("id") {
        return Err(Error::Schema("prediction file must start with `id`".into()));
    }
    let mut out = Vec::new();
    if header.len() == 3 && header.get(2) == Some("probability") {
        for record in rdr.records() {
            let r = record?;
            out.push(Prediction {
                id: r[0].to_string(),
                name: r[1].to_string(),
                probability: parse_prob(&r[2])?,
            });
        }
        return Ok(out);
    }

    let names: Vec<&str> = header.iter().collect();
    for record in rdr.records() {
        let r = record?;
        // label cells first, then posteriors override them
        let mut row: Vec<(&str, f64)> = Vec::new();
        for (col, name) in names.iter().enumerate().skip(1) {
            let cell = r.get(col).unwrap_or("").trim();
            if META_COLUMNS.contains(name)
                || name.ends_with(PSEUDO_SUFFIX)
                || name.ends_with(POSTERIOR_SUFFIX)
            {
                continue;
            }
            if let Some(b) = TriLabel::parse_cell(cell)?.as_bool() {
                row.push((name, if b { 1.0 } else { 0.0 }));
            }
        }
        for (col, name) in names.iter().enumerate().skip(1) {
            let cell = r.get(col).unwrap_or("").trim();
            let Some(base) = name.strip_suffix(POSTERIOR_SUFFIX) else {
                continue;
            };
            if cell.is_empty() {
                continue;
            }
            let p = parse_prob(cell)?;
            match row.iter_mut().find(|(n, _)| *n == base) {
                Some(slot) => slot.1 = p,
                None => row.push((base, p)),
            }
        }
        out.extend(row.into_iter().map(|(name, probability)| Prediction {
            id: r[0].to_string(),
            name: name.to_string(),
            probability,
        }));
    }
    Ok(out)
}

fn parse_prob(cell: &str) -> Result<f64> {
    let p: f64 = cell
        .trim()
        .parse()
        .map_err(|_| Error::Schema(format!("bad probability `{cell}`")))?;
    if !(0.0..=1.0).contains(&p) {
        return Err(Error::Schema(format!("probability {p} outside [0, 1]")));
    }
    Ok(p)
}

/// Reads a wide tri-state table (`id,...`), ignoring `source`, `left_id`,
/// `right_id` and `*_pseudo` / `*_posterior` columns.
pub fn read_truth<R: Read>(reader: R) -> Result<TruthTable> {
    let mut rdr = csv::Reader::from_reader(reader);
    let header = rdr.headers()?.clone();
    if header.get(0) != Some("id") {
        return Err(Error::Schema("truth file must start with `id`".into()));
    }
    let cols: Vec<(usize, String)> = header
        .iter()
        .enumerate()
        .skip(1)
        .filter(|(_, n)| {
            !META_COLUMNS.contains(n) && !n.ends_with(PSEUDO_SUFFIX) && !n.ends_with(POSTERIOR_SUFFIX)
        })
        .map(|(i, n)| (i, n.to_string()))
        .collect();
    let mut rows = HashMap::new();
    for record in rdr.records() {
        let r = record?;
        let labels = cols
            .iter()
            .map(|(i, _)| TriLabel::parse_cell(r.get(*i).unwrap_or("")))
            .collect::<Result<Vec<_>>>()?;
        if rows.insert(r[0].to_string(), labels).is_some() {
            return Err(Error::DuplicateId(r[0].to_string()));
        }
    }
    Ok(TruthTable {
        names: cols.into_iter().map(|(_, n)| n).collect(),
        rows,
    })
}

pub fn write_report_csv<W: Write>(rows: &[ReportRow], writer: W) -> Result<()> {
    let mut wtr = csv::Writer::from_writer(writer);
    wtr.write_record(["name", "N_p", "N_n", "n_p", "n_n", "balanced_acc", "overall_acc"])?;
    for r in rows {
        wtr.write_record([
            r.name.clone(),
            r.counts.positives.to_string(),
            r.counts.negatives.to_string(),
            r.counts.true_positives.to_string(),
            r.counts.true_negatives.to_string(),
            r.balanced_acc.map(fmt_f64).unwrap_or_default(),
            fmt_f64(r.overall_acc),
        ])?;
    }
    wtr.flush()?;
    Ok(())
}

pub fn write_report_json<W: Write>(rows: &[ReportRow], writer: W) -> Result<()> {
    serde_json::to_writer_pretty(writer, rows)?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::math::rng_for;
    use proptest::prelude::*;
    use rand::Rng;

    #[test]
    fn metric_values() {
        let perfect = BinaryCounts::new(10, 5, 10, 5).unwrap();
        assert_eq!(balanced_accuracy(&perfect).unwrap(), 1.0);
        assert_eq!(overall_accuracy(&perfect).unwrap(), 1.0);

        let all_positive = BinaryCounts::new(7, 13, 7, 0).unwrap();
        assert_eq!(balanced_accuracy(&all_positive).unwrap(), 0.5);

        let c = BinaryCounts::new(10, 10, 8, 6).unwrap();
        assert_eq!(balanced_accuracy(&c).unwrap(), 0.7);

        let wrong = BinaryCounts::new(3, 4, 0, 0).unwrap();
        assert_eq!(overall_accuracy(&wrong).unwrap(), 0.0);

        let majority = BinaryCounts::new(90, 10, 90, 0).unwrap();
        assert_eq!(overall_accuracy(&majority).unwrap(), 0.9);
        assert_eq!(balanced_accuracy(&majority).unwrap(), 0.5);
    }

    #[test]
    fn metric_errors() {
        let c = BinaryCounts::new(0, 4, 0, 2).unwrap();
        assert!(matches!(balanced_accuracy(&c), Err(Error::OneClassAbsent { .. })));
        assert!(matches!(overall_accuracy(&BinaryCounts::default()), Err(Error::EmptySet)));
        assert!(BinaryCounts::new(1, 1, 2, 0).is_err());
    }

    fn truth(rows: &[(&str, TriLabel)]) -> TruthTable {
        TruthTable {
            names: vec!["smile".into()],
            rows: rows.iter().map(|(id, l)| (id.to_string(), vec![*l])).collect(),
        }
    }

    fn pred(id: &str, p: f64) -> Prediction {
        Prediction {
            id: id.into(),
            name: "smile".into(),
            probability: p,
        }
    }

    #[test]
    fn report_single_attribute() {
        let t = truth(&[
            ("a", TriLabel::Positive),
            ("b", TriLabel::Negative),
            ("c", TriLabel::Missing),
            ("d", TriLabel::Positive),
        ]);
        let preds = vec![pred("a", 0.9), pred("b", 0.2), pred("c", 0.9), pred("d", 0.4)];
        let rows = report(&preds, &t, &Thresholds::default()).unwrap();
        assert_eq!(rows.len(), 1);
        assert_eq!(rows[0].counts, BinaryCounts::new(2, 1, 1, 1).unwrap());
        assert_eq!(rows[0].balanced_acc, Some(0.75));

        let mut buf = Vec::new();
        write_report_csv(&rows, &mut buf).unwrap();
        assert_eq!(
            String::from_utf8(buf).unwrap(),
            "name,N_p,N_n,n_p,n_n,balanced_acc,overall_acc\nsmile,2,1,1,1,0.75,0.6666666666666666\n"
        );
    }

    #[test]
    fn report_rejects_disjoint_ids() {
        let t = truth(&[("a", TriLabel::Positive)]);
        assert!(matches!(
            report(&[pred("zz", 0.5)], &t, &Thresholds::default()),
            Err(Error::IdMismatch(_))
        ));
    }

    #[test]
    fn random_predictions_score_half() {
        let mut rng = rng_for(99, 0);
        let n = 10_000;
        let truth: Vec<bool> = (0..n).map(|i| i % 2 == 0).collect();
        let predicted: Vec<bool> = (0..n).map(|_| rng.random_bool(0.5)).collect();
        let ba = balanced_accuracy(&BinaryCounts::from_decisions(&predicted, &truth)).unwrap();
        assert!((ba - 0.5).abs() <= 0.02, "{ba}");
    }

    #[test]
    fn argmax_group_one_hot() {
        let mk = |name: &str, p| Prediction { id: "x".into(), name: name.into(), probability: p };
        let group = vec!["happy".to_string(), "sad".to_string(), "angry".to_string()];
        let out = argmax_group(&[mk("happy", 0.3), mk("sad", 0.6), mk("angry", 0.6), mk("male", 0.7)], &group);
        let probs: Vec<f64> = out.iter().map(|p| p.probability).collect();
        assert_eq!(probs, vec![0.0, 1.0, 0.0, 0.7]);
    }

    #[test]
    fn reads_long_and_wide_predictions() {
        let long = read_predictions("id,trait,probability\np1,warm,0.25\n".as_bytes()).unwrap();
        assert_eq!(long, vec![Prediction { id: "p1".into(), name: "warm".into(), probability: 0.25 }]);

        let wide = "id,source,g,h,g_pseudo,g_posterior,h_pseudo,h_posterior\n\
                    a,s,1,0,1,0.8,0,\n";
        let mut got = read_predictions(wide.as_bytes()).unwrap();
        got.sort_by(|a, b| a.name.cmp(&b.name));
        assert_eq!(got[0], Prediction { id: "a".into(), name: "g".into(), probability: 0.8 });
        assert_eq!(got[1], Prediction { id: "a".into(), name: "h".into(), probability: 0.0 });
        assert_eq!(got.len(), 2);

        let t = read_truth(wide.as_bytes()).unwrap();
        assert_eq!(t.names, vec!["g", "h"]);
        assert_eq!(t.get("a", "g"), Some(TriLabel::Positive));
    }

    proptest! {
        #[test]
        fn balanced_accuracy_is_relabeling_invariant(
            np in 1usize..500, nn in 1usize..500, fp in 0.0f64..=1.0, fn_ in 0.0f64..=1.0
        ) {
            let tp = (np as f64 * fp) as usize;
            let tn = (nn as f64 * fn_) as usize;
            let c = BinaryCounts::new(np, nn, tp, tn).unwrap();
            let a = balanced_accuracy(&c).unwrap();
            let b = balanced_accuracy(&c.swapped()).unwrap();
            prop_assert_eq!(a, b);
            prop_assert!((0.0..=1.0).contains(&a));
            prop_assert_eq!(a == 1.0, tp == np && tn == nn);
        }
    }
}
