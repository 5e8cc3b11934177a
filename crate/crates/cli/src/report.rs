//! Classification summary: per-class accuracy, precision and recall for
//! each arm, as a Markdown table.

use std::fmt::Write as _;

use jmap_core::data::ClassLabel;
use jmap_net::Metrics;
use serde::{Deserialize, Serialize};

use crate::config::Arm;

/// Cross-validated results of one arm.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ArmMetrics {
    pub arm: Arm,
    /// Validation accuracy of each fold, in fold order.
    pub fold_accuracy: Vec<f64>,
    /// Mean of `fold_accuracy`.
    pub mean_accuracy: f64,
    /// Metrics of the summed confusion matrix; every subject counts once.
    pub pooled: Metrics,
}

impl ArmMetrics {
    pub fn from_folds(arm: Arm, folds: &[Metrics]) -> Option<Self> {
        let pooled = Metrics::pooled(folds)?;
        let fold_accuracy: Vec<f64> = folds.iter().map(|m| m.accuracy).collect();
        let mean_accuracy = fold_accuracy.iter().sum::<f64>() / fold_accuracy.len() as f64;
        Some(Self {
            arm,
            fold_accuracy,
            mean_accuracy,
            pooled,
        })
    }
}

fn pct(v: f64) -> String {
    format!("{:.1}", 100.0 * v)
}

/// One row per model: accuracy, precision and recall for CN, MCI, MLD and
/// MOD, in percent.
pub fn table(rows: &[(&str, &Metrics)]) -> String {
    let mut out = String::from("| Model |");
    for metric in ["Accuracy", "Precision", "Recall"] {
        for c in ClassLabel::ALL {
            let _ = write!(out, " {metric} {} |", c.name());
        }
    }
    out.push_str("\n|---|");
    out.push_str(&"---:|".repeat(3 * ClassLabel::ALL.len()));
    out.push('\n');
    for (name, m) in rows {
        let _ = write!(out, "| {name} |");
        let cells = [
            m.per_class.iter().map(|c| c.accuracy).collect::<Vec<_>>(),
            m.per_class.iter().map(|c| c.precision).collect(),
            m.per_class.iter().map(|c| c.recall).collect(),
        ];
        for v in cells.iter().flatten() {
            let _ = write!(out, " {} |", pct(*v));
        }
        out.push('\n');
    }
    out
}

/// Full `table2.md`: the class table followed by fold accuracies.
pub fn render(arms: &[ArmMetrics]) -> String {
    let rows: Vec<(&str, &Metrics)> = arms.iter().map(|a| (a.arm.label(), &a.pooled)).collect();
    let mut out = String::from("# Classification results\n\n");
    out.push_str(&table(&rows));
    out.push_str("\nPer-class values come from the confusion matrix summed over the validation folds.\n\n");
    out.push_str("| Model | Mean fold accuracy | Fold accuracies |\n|---|---:|---|\n");
    for a in arms {
        let folds: Vec<String> = a.fold_accuracy.iter().map(|v| pct(*v)).collect();
        let _ = writeln!(
            out,
            "| {} | {} | {} |",
            a.arm.label(),
            pct(a.mean_accuracy),
            folds.join(", ")
        );
    }
    out
}
