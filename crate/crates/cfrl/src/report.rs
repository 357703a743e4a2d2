//! `report.txt` and `report.csv`.

use std::fmt::Write as _;
use std::path::Path;

use cfrl_core::eval::{compare, CellOutcome, ComparisonReport, EvalResult};
use serde::{Deserialize, Serialize};

use crate::logs::CsvSink;
use crate::IoError;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReportRow {
    pub method: String,
    pub task: String,
    pub dataset: String,
    pub split: usize,
    /// Empty for a failed cell.
    pub score: Option<f64>,
}

/// One row per (method, task, split) in the order the cells were run.
pub fn report_rows(outcomes: &[CellOutcome], dataset: &str) -> Vec<ReportRow> {
    let mut sorted: Vec<&CellOutcome> = outcomes.iter().collect();
    sorted.sort_by_key(|o| (o.task.label(), o.method, o.split));
    sorted
        .into_iter()
        .map(|o| ReportRow {
            method: o.method.name().to_string(),
            task: o.task.label().to_string(),
            dataset: dataset.to_string(),
            split: o.split,
            score: o.score.as_ref().ok().copied(),
        })
        .collect()
}

pub fn write_csv(path: &Path, rows: &[ReportRow]) -> Result<(), IoError> {
    let mut sink = CsvSink::open(path, false)?;
    for r in rows {
        sink.write(r)?;
    }
    sink.flush()
}

fn cell(r: &EvalResult, marks: &[(&str, &str)]) -> String {
    if !r.mean.is_finite() {
        return "failed".to_string();
    }
    let mark = marks.iter().find(|(m, _)| *m == r.method).map_or("", |(_, s)| s);
    format!("{:.3}±{:.3}{mark}", r.mean, r.std)
}

/// Aligned text table: methods down, (task, dataset) columns across, with
/// best (`*`) and runner-up (`+`) marked and a significance footer.
pub fn render_table(results: &[EvalResult], outcomes: &[CellOutcome]) -> String {
    let mut columns: Vec<(cfrl_core::env::TaskMode, String)> = Vec::new();
    let mut methods: Vec<String> = Vec::new();
    for r in results {
        if !columns.iter().any(|(t, d)| *t == r.task && *d == r.dataset) {
            columns.push((r.task, r.dataset.clone()));
        }
        if !methods.contains(&r.method) {
            methods.push(r.method.clone());
        }
    }
    columns.sort_by_key(|(t, _)| t.label());
    let comparisons = compare(results);
    let find_cmp = |t, d: &str| comparisons.iter().find(|c: &&ComparisonReport| c.task == t && c.dataset == d);

    let mut grid: Vec<Vec<String>> = Vec::new();
    let mut header = vec!["Method".to_string()];
    header.extend(columns.iter().map(|(t, d)| format!("{} {}", t.label(), d)));
    grid.push(header);
    for m in &methods {
        let mut row = vec![m.clone()];
        for (t, d) in &columns {
            let marks: Vec<(&str, &str)> =
                find_cmp(*t, d).map_or(Vec::new(), |c| vec![(c.best.as_str(), " *"), (c.second.as_str(), " +")]);
            row.push(
                results
                    .iter()
                    .find(|r| &r.method == m && r.task == *t && &r.dataset == d)
                    .map_or("-".to_string(), |r| cell(r, &marks)),
            );
        }
        grid.push(row);
    }
    let mut p_row = vec!["p-value".to_string()];
    let mut imp_row = vec!["Improvement".to_string()];
    for (t, d) in &columns {
        let c = find_cmp(*t, d);
        p_row.push(c.and_then(|c| c.p_value).map_or("-".to_string(), |p| format!("{p:.2e}")));
        imp_row.push(c.map_or("-".to_string(), |c| format!("{:.2}%", 100.0 * c.improvement)));
    }
    grid.push(p_row);
    grid.push(imp_row);

    let widths: Vec<usize> =
        (0..grid[0].len()).map(|k| grid.iter().map(|r| r[k].chars().count()).max().unwrap_or(0)).collect();
    let mut out = String::new();
    let splits = results.iter().map(|r| r.per_split.len()).max().unwrap_or(0);
    let _ = writeln!(out, "Average reward per step, mean±std over {splits} split(s)");
    let _ = writeln!(out);
    for (k, row) in grid.iter().enumerate() {
        let line: Vec<String> = row.iter().zip(&widths).map(|(c, &w)| format!("{c:<w$}")).collect();
        let _ = writeln!(out, "{}", line.join("  ").trim_end());
        if k == 0 || k == methods.len() {
            let _ = writeln!(out, "{}", "-".repeat(widths.iter().sum::<usize>() + 2 * (widths.len() - 1)));
        }
    }
    let _ = writeln!(out);
    let _ = writeln!(out, "* best, + second best; p-value: paired t-test of best vs second over splits");
    let failures: Vec<&CellOutcome> = outcomes.iter().filter(|o| o.score.is_err()).collect();
    if !failures.is_empty() {
        let _ = writeln!(out);
        let _ = writeln!(out, "Failed cells:");
        for o in failures {
            if let Err(e) = &o.score {
                let _ = writeln!(out, "  {} {} split {}: {e}", o.method.name(), o.task.label(), o.split);
            }
        }
    }
    out
}

pub fn write_text(path: &Path, text: &str) -> Result<(), IoError> {
    std::fs::write(path, text).map_err(|e| IoError::at(path, e))
}

#[cfg(test)]
mod tests {
    use super::*;
    use cfrl_core::baselines::Method;
    use cfrl_core::env::TaskMode;
    use cfrl_core::eval::aggregate;

    fn outcome(method: Method, split: usize, score: f64) -> CellOutcome {
        CellOutcome { method, task: TaskMode::TaskII, split, score: Ok(score) }
    }

    #[test]
    fn constant_stub_policies_give_a_third_improvement() {
        let outcomes: Vec<CellOutcome> =
            (0..3).flat_map(|s| [outcome(Method::Random, s, 3.0), outcome(Method::Popular, s, 4.0)]).collect();
        let results = aggregate(&outcomes, "toy");
        let text = render_table(&results, &outcomes);
        assert!(text.contains("33.33%"), "{text}");
        assert!(text.contains("4.000±0.000 *"));
        assert!(text.contains("3.000±0.000 +"));
    }

    #[test]
    fn failures_are_listed_and_blank_in_csv() {
        let mut outcomes = vec![outcome(Method::Random, 0, 0.5)];
        outcomes.push(CellOutcome {
            method: Method::Dqn,
            task: TaskMode::TaskII,
            split: 0,
            score: Err(cfrl_core::Error::Divergence("x".into())),
        });
        let results = aggregate(&outcomes, "toy");
        let text = render_table(&results, &outcomes);
        assert!(text.contains("failed"));
        assert!(text.contains("DQN task2 split 0"));
        let rows = report_rows(&outcomes, "toy");
        assert_eq!(rows.iter().filter(|r| r.score.is_none()).count(), 1);
    }
}
