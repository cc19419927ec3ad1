use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::datasets::Distribution;
use crate::error::{Error, Result};

use super::metrics::MetricsReport;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SplitScore {
    pub accuracy: f64,
    pub worst_group: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ComparisonRow {
    pub method: String,
    /// Indexed like `ComparisonTable::distributions`; `None` where the
    /// method was not evaluated on that split.
    pub scores: Vec<Option<SplitScore>>,
    /// Minimum worst-group accuracy over the row's splits.
    pub worst_group: f64,
}

/// Methods ranked by worst-group accuracy, best first.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ComparisonTable {
    pub dataset: String,
    pub distributions: Vec<Distribution>,
    pub rows: Vec<ComparisonRow>,
}

pub fn compare_methods(reports: &[MetricsReport]) -> Result<ComparisonTable> {
    let first = reports
        .first()
        .ok_or_else(|| Error::contract("no reports to compare"))?;
    if let Some(other) = reports.iter().find(|r| r.dataset != first.dataset) {
        return Err(Error::contract(format!(
            "cannot compare reports on different datasets ({} vs {})",
            first.dataset, other.dataset
        )));
    }
    let mut distributions: Vec<Distribution> = reports.iter().map(|r| r.distribution).collect();
    distributions.sort_by_key(|d| d.to_string());
    distributions.dedup();
    let col = |d: Distribution| distributions.iter().position(|&x| x == d).expect("collected above");

    let mut by_method: BTreeMap<&str, Vec<Option<SplitScore>>> = BTreeMap::new();
    for r in reports {
        let row = by_method
            .entry(&r.method)
            .or_insert_with(|| vec![None; distributions.len()]);
        let slot = &mut row[col(r.distribution)];
        if slot.is_some() {
            return Err(Error::contract(format!(
                "duplicate report for {} on {}",
                r.method, r.distribution
            )));
        }
        *slot = Some(SplitScore {
            accuracy: r.accuracy,
            worst_group: r.worst_group,
        });
    }
    let mut rows: Vec<ComparisonRow> = by_method
        .into_iter()
        .map(|(method, scores)| ComparisonRow {
            method: method.to_string(),
            worst_group: scores
                .iter()
                .flatten()
                .map(|s| s.worst_group)
                .fold(f64::INFINITY, f64::min),
            scores,
        })
        .collect();
    // BTreeMap order is by method tag, and the sort is stable.
    rows.sort_by(|a, b| b.worst_group.total_cmp(&a.worst_group));
    Ok(ComparisonTable {
        dataset: first.dataset.clone(),
        distributions,
        rows,
    })
}

fn bad_csv(detail: impl Into<String>) -> Error {
    Error::Format {
        path: "<comparison csv>".into(),
        detail: detail.into(),
    }
}

fn parse_distribution(s: &str) -> Result<Distribution> {
    serde_json::from_value(serde_json::Value::String(s.to_string()))
        .map_err(|_| bad_csv(format!("unknown distribution {s:?} in comparison CSV")))
}

impl ComparisonTable {
    fn header(&self) -> Vec<String> {
        let mut h = vec!["dataset".to_string(), "method".to_string()];
        for d in &self.distributions {
            h.push(format!("{d}_acc"));
            h.push(format!("{d}_worst"));
        }
        h.push("worst_group".into());
        h
    }

    pub fn to_csv(&self) -> Result<String> {
        let mut w = csv::Writer::from_writer(Vec::new());
        w.write_record(self.header())?;
        let opt = |v: Option<f64>| v.map(|v| v.to_string()).unwrap_or_default();
        for r in &self.rows {
            let mut rec = vec![self.dataset.clone(), r.method.clone()];
            for s in &r.scores {
                rec.push(opt(s.as_ref().map(|s| s.accuracy)));
                rec.push(opt(s.as_ref().map(|s| s.worst_group)));
            }
            rec.push(r.worst_group.to_string());
            w.write_record(rec)?;
        }
        let bytes = w.into_inner().map_err(|e| Error::Config(e.to_string()))?;
        Ok(String::from_utf8(bytes).expect("csv output is utf-8"))
    }

    pub fn from_csv(text: &str) -> Result<Self> {
        let mut rd = csv::Reader::from_reader(text.as_bytes());
        let header = rd.headers()?.clone();
        let cols: Vec<&str> = header.iter().collect();
        if cols.len() < 3 || cols[0] != "dataset" || cols[1] != "method" || cols[cols.len() - 1] != "worst_group" {
            return Err(bad_csv("comparison CSV header is malformed"));
        }
        let mut distributions = Vec::new();
        for pair in cols[2..cols.len() - 1].chunks(2) {
            let name = pair[0]
                .strip_suffix("_acc")
                .filter(|n| pair.get(1) == Some(&format!("{n}_worst").as_str()))
                .ok_or_else(|| bad_csv(format!("unexpected comparison columns {pair:?}")))?;
            distributions.push(parse_distribution(name)?);
        }
        let num = |s: &str| -> Result<Option<f64>> {
            if s.is_empty() {
                Ok(None)
            } else {
                s.parse().map(Some).map_err(|_| bad_csv(format!("bad number {s:?}")))
            }
        };
        let mut dataset = String::new();
        let mut rows = Vec::new();
        for rec in rd.records() {
            let rec = rec?;
            dataset = rec[0].to_string();
            let mut scores = Vec::new();
            for j in 0..distributions.len() {
                let acc = num(&rec[2 + 2 * j])?;
                let worst = num(&rec[3 + 2 * j])?;
                scores.push(match (acc, worst) {
                    (Some(accuracy), Some(worst_group)) => Some(SplitScore { accuracy, worst_group }),
                    (None, None) => None,
                    _ => return Err(bad_csv("half-empty score in comparison CSV")),
                });
            }
            rows.push(ComparisonRow {
                method: rec[1].to_string(),
                scores,
                worst_group: num(&rec[rec.len() - 1])?.ok_or_else(|| bad_csv("missing worst_group"))?,
            });
        }
        Ok(Self {
            dataset,
            distributions,
            rows,
        })
    }

    /// Percentages in aligned columns.
    pub fn to_text(&self) -> String {
        let header = self.header()[1..].to_vec();
        let pct = |v: Option<f64>| v.map_or("-".to_string(), |v| format!("{:.1}", 100.0 * v));
        let body: Vec<Vec<String>> = self
            .rows
            .iter()
            .map(|r| {
                let mut cells = vec![r.method.clone()];
                for s in &r.scores {
                    cells.push(pct(s.as_ref().map(|s| s.accuracy)));
                    cells.push(pct(s.as_ref().map(|s| s.worst_group)));
                }
                cells.push(pct(Some(r.worst_group)));
                cells
            })
            .collect();
        let widths: Vec<usize> = (0..header.len())
            .map(|j| {
                body.iter()
                    .map(|r| r[j].len())
                    .chain([header[j].len()])
                    .max()
                    .unwrap_or(0)
            })
            .collect();
        let line = |cells: &[String]| {
            cells
                .iter()
                .zip(&widths)
                .enumerate()
                .map(|(j, (c, &w))| if j == 0 { format!("{c:<w$}") } else { format!("{c:>w$}") })
                .collect::<Vec<_>>()
                .join("  ")
        };
        let mut out = format!("{} ({})\n", self.dataset, "accuracy %");
        out.push_str(&line(&header));
        out.push('\n');
        for r in &body {
            out.push_str(&line(r));
            out.push('\n');
        }
        out
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::eval::EvalHead;

    fn report(method: &str, dist: Distribution, acc: f64, worst: f64) -> MetricsReport {
        MetricsReport {
            method: method.into(),
            head: EvalHead::Naive,
            dataset: "colored-mnist".into(),
            distribution: dist,
            n: 10,
            accuracy: acc,
            groups: vec![],
            worst_group: worst,
            seed: 0,
            config: serde_json::Value::Null,
        }
    }

    #[test]
    fn single_report() {
        let t = compare_methods(&[report("naive-class", Distribution::Ood, 0.2, 0.1)]).unwrap();
        assert_eq!(t.rows.len(), 1);
        assert_eq!(t.rows[0].worst_group, 0.1);
    }

    #[test]
    fn sorted_by_worst_group_then_tag() {
        let t = compare_methods(&[
            report("b", Distribution::InDist, 0.9, 0.3),
            report("b", Distribution::Ood, 0.2, 0.1),
            report("c", Distribution::Ood, 0.7, 0.6),
            report("a", Distribution::Ood, 0.5, 0.1),
        ])
        .unwrap();
        let order: Vec<&str> = t.rows.iter().map(|r| r.method.as_str()).collect();
        assert_eq!(order, ["c", "a", "b"]);
        assert_eq!(t.distributions, [Distribution::InDist, Distribution::Ood]);
        assert_eq!(t.rows[1].scores[0], None);
        assert!(t.to_text().contains("in_dist_acc"));
    }

    #[test]
    fn csv_round_trip_is_lossless() {
        let t = compare_methods(&[
            report("chroma-z2", Distribution::InDist, 0.1 + 0.2, 1.0 / 3.0),
            report("chroma-z2", Distribution::Ood, 0.7251, 0.699999),
            report("naive-class", Distribution::Ood, 0.178, 0.01),
        ])
        .unwrap();
        let csv = t.to_csv().unwrap();
        assert_eq!(ComparisonTable::from_csv(&csv).unwrap(), t);
    }

    #[test]
    fn mixed_datasets_rejected() {
        let mut other = report("x", Distribution::Ood, 0.5, 0.5);
        other.dataset = "dominoes".into();
        assert!(matches!(
            compare_methods(&[report("a", Distribution::Ood, 0.5, 0.5), other]),
            Err(Error::Contract(_))
        ));
    }
}
