//! Plain-text and CSV renderings of confusion matrices and metrics.

use super::metrics::{ConfusionMatrix, MetricsReport};
use super::Emotion;

fn class_names(n: usize) -> Vec<String> {
    (0..n)
        .map(|c| Emotion::from_index(c).map_or_else(|_| format!("class{c}"), |e| e.name().to_string()))
        .collect()
}

/// Right-aligned table with true classes as rows.
pub fn confusion_table(cm: &ConfusionMatrix) -> String {
    let names = class_names(cm.n_classes());
    let width = names
        .iter()
        .map(String::len)
        .chain(cm.counts.iter().flatten().map(|v| v.to_string().len()))
        .chain(["true\\pred".len()])
        .max()
        .unwrap_or(1);
    let mut out = format!("{:>width$}", "true\\pred");
    for n in &names {
        out.push_str(&format!(" {n:>width$}"));
    }
    out.push('\n');
    for (name, row) in names.iter().zip(&cm.counts) {
        out.push_str(&format!("{name:>width$}"));
        for v in row {
            out.push_str(&format!(" {v:>width$}"));
        }
        out.push('\n');
    }
    out
}

pub fn confusion_csv(cm: &ConfusionMatrix) -> String {
    let names = class_names(cm.n_classes());
    let mut out = format!("true,{}\n", names.join(","));
    for (name, row) in names.iter().zip(&cm.counts) {
        let cells: Vec<String> = row.iter().map(u64::to_string).collect();
        out.push_str(&format!("{name},{}\n", cells.join(",")));
    }
    out
}

/// Per-fold summary lines followed by each fold's confusion table.
pub fn render_text(title: &str, report: &MetricsReport) -> String {
    let mut out = format!("{title}\n");
    for f in &report.folds {
        out.push_str(&format!(
            "fold {} (test session {}): WA {:.4}  UA {:.4}\n",
            f.fold, f.test_session, f.wa, f.ua
        ));
    }
    out.push_str(&format!("mean: WA {:.4}  UA {:.4}\n", report.mean_wa, report.mean_ua));
    for f in &report.folds {
        out.push_str(&format!("\nfold {}\n{}", f.fold, confusion_table(&f.confusion)));
    }
    out
}
