use std::fmt::Write as _;

use hermit_core::eval::ErrorBreakdown;
use hermit_core::EvalReport;
use serde::{Deserialize, Serialize};

/// Evaluation report as written to disk: the metrics plus provenance hashes.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Report {
    #[serde(flatten)]
    pub metrics: EvalReport,
    pub config_sha256: String,
    pub data_sha256: String,
}

fn cell(v: Option<f64>) -> String {
    v.map_or_else(|| "n/a".to_string(), |x| format!("{x:.4}"))
}

fn breakdown_row(out: &mut String, label: &str, b: &ErrorBreakdown) {
    let _ = writeln!(out, "{label:<22} {:>10} {:>10} {:>10}", cell(b.global), cell(b.existing), cell(b.new));
}

impl Report {
    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("report serializes") + "\n"
    }

    pub fn table(&self) -> String {
        let m = &self.metrics;
        let mut out = String::new();
        let _ = writeln!(out, "test snapshots {}  edges {}  new edges {}", m.n_test_snapshots, m.n_test_edges, m.n_new_edges);
        let _ = writeln!(out, "{:<22} {:>10} {:>10}", "link", "AUC", "AP");
        let _ = writeln!(out, "{:<22} {:>10} {:>10}", "all", cell(m.auc), cell(m.ap));
        let _ = writeln!(out, "{:<22} {:>10} {:>10}", "new", cell(m.new_auc), cell(m.new_ap));
        let _ = writeln!(out, "{:<22} {:>10} {:>10} {:>10}", "rtt (ms)", "global", "existing", "new");
        breakdown_row(&mut out, "fusion RMSE", &m.rmse_ms);
        breakdown_row(&mut out, "fusion MAE", &m.mae_ms);
        if let (Some(r), Some(a)) = (&m.baseline_rmse_ms, &m.baseline_mae_ms) {
            breakdown_row(&mut out, "tabular RMSE", r);
            breakdown_row(&mut out, "tabular MAE", a);
        }
        out
    }
}
