//! Choosing the core explanation method from an evaluation table.

use std::cmp::Ordering;

use serde::{Deserialize, Serialize};
use vqi_core::metrics::EvaluationRow;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Selection {
    pub chosen: String,
    /// Method names, best first.
    pub ranking: Vec<String>,
}

// NaN sorts after every number in both directions.
fn lower_is_better(a: f64, b: f64) -> Ordering {
    match (a.is_nan(), b.is_nan()) {
        (true, true) => Ordering::Equal,
        (true, false) => Ordering::Greater,
        (false, true) => Ordering::Less,
        _ => a.total_cmp(&b),
    }
}

fn higher_is_better(a: f64, b: f64) -> Ordering {
    match (a.is_nan(), b.is_nan()) {
        (true, true) => Ordering::Equal,
        (true, false) => Ordering::Greater,
        (false, true) => Ordering::Less,
        _ => b.total_cmp(&a),
    }
}

/// Faithfulness first (least Drop, then most Increase), then speed, then EBPG.
/// Remaining ties fall back to the method name so the order is total.
pub fn compare_rows(a: &EvaluationRow, b: &EvaluationRow) -> Ordering {
    lower_is_better(a.drop, b.drop)
        .then_with(|| higher_is_better(a.increase, b.increase))
        .then_with(|| lower_is_better(a.time_s, b.time_s))
        .then_with(|| higher_is_better(a.ebpg, b.ebpg))
        .then_with(|| a.method.cmp(&b.method))
}

/// Ranks `rows` and returns the winner; `None` for an empty table.
pub fn select_core_method(rows: &[EvaluationRow]) -> Option<Selection> {
    let mut sorted: Vec<&EvaluationRow> = rows.iter().collect();
    sorted.sort_by(|a, b| compare_rows(a, b));
    let ranking: Vec<String> = sorted.iter().map(|r| r.method.clone()).collect();
    Some(Selection {
        chosen: ranking.first()?.clone(),
        ranking,
    })
}
