//! Seed-median summaries of sweep results.

use std::fmt::Write as _;

use crate::error::{Error, Result};
use crate::sweep::ResultRow;

pub fn median(xs: &[f64]) -> f64 {
    let mut v = xs.to_vec();
    v.sort_by(f64::total_cmp);
    let n = v.len();
    if n == 0 {
        f64::NAN
    } else if n % 2 == 1 {
        v[n / 2]
    } else {
        (v[n / 2 - 1] + v[n / 2]) / 2.0
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Cell {
    pub group: String,
    pub setting: String,
    pub loss: String,
    pub median_accuracy: f64,
    pub seeds: usize,
}

fn push_unique(v: &mut Vec<String>, s: &str) {
    if !v.iter().any(|x| x == s) {
        v.push(s.to_string());
    }
}

/// Median accuracy per (setting, loss), in first-appearance order.
pub fn summarize(rows: &[ResultRow]) -> Result<Vec<Cell>> {
    if rows.is_empty() {
        return Err(Error::Data("no sweep results to report".into()));
    }
    let mut settings = Vec::new();
    let mut losses = Vec::new();
    for r in rows {
        push_unique(&mut settings, &r.setting);
        push_unique(&mut losses, &r.loss);
    }
    let mut cells = Vec::new();
    for s in &settings {
        for l in &losses {
            let matching: Vec<&ResultRow> = rows.iter().filter(|r| &r.setting == s && &r.loss == l).collect();
            if matching.is_empty() {
                continue;
            }
            let accs: Vec<f64> = matching.iter().map(|r| r.accuracy).collect();
            cells.push(Cell {
                group: matching[0].group.clone(),
                setting: s.clone(),
                loss: l.clone(),
                median_accuracy: median(&accs),
                seeds: accs.len(),
            });
        }
    }
    Ok(cells)
}

pub fn lookup(cells: &[Cell], setting: &str, loss: &str) -> Option<f64> {
    cells.iter().find(|c| c.setting == setting && c.loss == loss).map(|c| c.median_accuracy)
}

/// One markdown table per group: settings down, losses across.
pub fn tables(cells: &[Cell]) -> String {
    let mut groups = Vec::new();
    for c in cells {
        push_unique(&mut groups, &c.group);
    }
    let mut out = String::new();
    for g in &groups {
        let in_group: Vec<&Cell> = cells.iter().filter(|c| &c.group == g).collect();
        let mut settings = Vec::new();
        let mut losses = Vec::new();
        for c in &in_group {
            push_unique(&mut settings, &c.setting);
            push_unique(&mut losses, &c.loss);
        }
        let _ = writeln!(out, "## {g}\n");
        let _ = writeln!(out, "| setting | {} |", losses.join(" | "));
        let _ = writeln!(out, "|---|{}", "---|".repeat(losses.len()));
        for s in &settings {
            let vals: Vec<String> = losses
                .iter()
                .map(|l| match in_group.iter().find(|c| &c.setting == s && &c.loss == l) {
                    Some(c) => format!("{:.4}", c.median_accuracy),
                    None => "-".into(),
                })
                .collect();
            let _ = writeln!(out, "| {s} | {} |", vals.join(" | "));
        }
        out.push('\n');
    }
    out
}

pub fn plot_csv(cells: &[Cell]) -> String {
    let mut s = String::from("group,setting,loss,median_accuracy,seeds\n");
    for c in cells {
        let _ = writeln!(s, "{},{},{},{:.6},{}", c.group, c.setting, c.loss, c.median_accuracy, c.seeds);
    }
    s
}

#[cfg(test)]
mod tests {
    use super::*;

    fn row(setting: &str, loss: &str, seed: u64, acc: f64) -> ResultRow {
        ResultRow {
            setting: setting.into(),
            group: format!("g-{setting}"),
            probs: [1.0, 1.0, 0.0, 0.0],
            loss: loss.into(),
            seed,
            accuracy: acc,
            length_ratio: 1.0,
        }
    }

    #[test]
    fn medians() {
        assert_eq!(median(&[3.0, 1.0, 2.0]), 2.0);
        assert_eq!(median(&[4.0, 1.0]), 2.5);
        assert!(median(&[]).is_nan());
    }

    #[test]
    fn one_row_gives_one_table_row() {
        let cells = summarize(&[row("a", "ctc", 1, 0.5)]).unwrap();
        let t = tables(&cells);
        assert_eq!(t.lines().filter(|l| l.starts_with("| a ")).count(), 1);
        assert_eq!(plot_csv(&cells).lines().count(), 2);
        assert!(summarize(&[]).is_err());
    }

    #[test]
    fn grouping_and_order() {
        let rows = vec![
            row("b", "ctc", 1, 0.2),
            row("a", "oaxe", 1, 0.9),
            row("b", "ctc", 2, 0.4),
            row("b", "ctc", 3, 0.3),
        ];
        let cells = summarize(&rows).unwrap();
        assert_eq!(cells.len(), 2);
        assert_eq!(cells[0].setting, "b");
        assert_eq!(lookup(&cells, "b", "ctc"), Some(0.3));
        assert_eq!(tables(&cells).matches("## ").count(), 2);
    }
}
