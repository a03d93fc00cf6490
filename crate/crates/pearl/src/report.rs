//! Reports: a JSONL file whose first line is a header carrying the resolved
//! config, its hash and the root seed, plus a plain-text table.

use std::fmt::Write as _;
use std::path::Path;

use serde::{Deserialize, Serialize};
use serde_json::Value;

use crate::config::RunConfig;
use crate::error::Result;
use crate::formats::write_bytes;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Header {
    pub kind: String,
    pub command: String,
    pub seed: u64,
    pub config_hash: String,
    pub config: RunConfig,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Report {
    pub header: Header,
    pub columns: Vec<String>,
    pub rows: Vec<Value>,
}

impl Report {
    pub fn new(command: &str, cfg: &RunConfig, columns: &[&str]) -> Report {
        Report {
            header: Header {
                kind: "header".into(),
                command: command.into(),
                seed: cfg.seed,
                config_hash: cfg.hash(),
                config: cfg.clone(),
            },
            columns: columns.iter().map(|c| c.to_string()).collect(),
            rows: Vec::new(),
        }
    }

    pub fn push(&mut self, row: Value) {
        self.rows.push(row);
    }

    pub fn jsonl(&self) -> String {
        let mut s = serde_json::to_string(&self.header).expect("header serializes");
        s.push('\n');
        for r in &self.rows {
            s.push_str(&serde_json::to_string(r).expect("row serializes"));
            s.push('\n');
        }
        s
    }

    /// Aligned text table over `columns`; reals print with 4 decimals.
    pub fn table(&self) -> String {
        let cell = |v: Option<&Value>| match v {
            Some(Value::Number(n)) if n.is_f64() => format!("{:.4}", n.as_f64().unwrap()),
            Some(Value::String(s)) => s.clone(),
            Some(Value::Null) | None => "-".into(),
            Some(v) => v.to_string(),
        };
        let body: Vec<Vec<String>> =
            self.rows.iter().map(|r| self.columns.iter().map(|c| cell(r.get(c))).collect()).collect();
        let widths: Vec<usize> = self
            .columns
            .iter()
            .enumerate()
            .map(|(i, c)| body.iter().map(|r| r[i].len()).chain([c.len()]).max().unwrap_or(0))
            .collect();
        let mut s = format!("# {} seed {} config {}\n", self.header.command, self.header.seed, &self.header.config_hash[..12]);
        let line = |cells: &[String]| {
            let mut l = String::new();
            for (c, w) in cells.iter().zip(&widths) {
                let _ = write!(l, "{c:>w$}  ");
            }
            l.trim_end().to_string() + "\n"
        };
        s.push_str(&line(&self.columns));
        for r in &body {
            s.push_str(&line(r));
        }
        s
    }

    /// Writes `<stem>.jsonl` and `<stem>.txt` under `dir`.
    pub fn save(&self, dir: &Path, stem: &str) -> Result<()> {
        write_bytes(&dir.join(format!("{stem}.jsonl")), self.jsonl().as_bytes())?;
        write_bytes(&dir.join(format!("{stem}.txt")), self.table().as_bytes())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use serde_json::json;

    #[test]
    fn header_first_then_rows() {
        let cfg = RunConfig::default();
        let mut r = Report::new("eval-offline", &cfg, &["name", "MRR@10"]);
        r.push(json!({"name": "full", "MRR@10": 0.25}));
        let text = r.jsonl();
        let lines: Vec<&str> = text.lines().collect();
        assert_eq!(lines.len(), 2);
        let h: Header = serde_json::from_str(lines[0]).unwrap();
        assert_eq!(h.config, cfg);
        assert_eq!(h.config_hash, cfg.hash());
        assert!(r.table().contains("0.2500"));
    }
}
