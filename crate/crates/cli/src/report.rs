//! Evaluation output in JSON and as a text table carrying the same numbers.

use flest_core::eval::{EvalReport, Filtering, HIT_KS};
use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalOutput {
    pub split: String,
    pub filtering: Filtering,
    /// Rounds completed by the evaluated checkpoint.
    pub round: usize,
    pub per_client: Vec<EvalReport>,
    pub aggregate: EvalReport,
}

impl EvalOutput {
    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("report serialises")
    }

    /// One row per client plus an `all` row. Numbers use the shortest
    /// representation that parses back to the same value, as the JSON does.
    pub fn to_table(&self) -> String {
        let mut header = vec!["client".to_string(), "queries".into(), "mrr".into()];
        header.extend(HIT_KS.iter().map(|k| format!("hits@{k}")));
        let mut rows = vec![header];
        let row = |name: String, r: &EvalReport| {
            let mut v = vec![name, r.num_queries.to_string(), r.mrr.to_string()];
            v.extend(HIT_KS.iter().map(|&k| r.hits_at(k).to_string()));
            v
        };
        for (i, r) in self.per_client.iter().enumerate() {
            rows.push(row(i.to_string(), r));
        }
        rows.push(row("all".into(), &self.aggregate));
        let widths: Vec<usize> = (0..rows[0].len())
            .map(|c| rows.iter().map(|r| r[c].len()).max().unwrap_or(0))
            .collect();
        let mut out = format!("split {} ({:?}), round {}\n", self.split, self.filtering, self.round).to_lowercase();
        for r in &rows {
            let cells: Vec<String> = r.iter().zip(&widths).map(|(c, w)| format!("{c:>w$}")).collect();
            out.push_str(cells.join("  ").trim_end());
            out.push('\n');
        }
        out
    }
}
