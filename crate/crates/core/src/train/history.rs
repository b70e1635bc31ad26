// SPDX-License-Identifier: Apache-2.0

use std::path::Path;

use crate::error::{Error, Result};

#[derive(Clone, Debug, PartialEq)]
pub struct LogRow {
    pub epoch: usize,
    /// One entry per column after `epoch`; `None` when not measured.
    pub values: Vec<Option<f64>>,
}

/// Per-epoch training log. Row 0 scores the initial weights.
#[derive(Clone, Debug, PartialEq)]
pub struct TrainingLog {
    pub columns: Vec<String>,
    pub rows: Vec<LogRow>,
}

impl TrainingLog {
    pub fn new(columns: &[&str]) -> Self {
        TrainingLog {
            columns: columns.iter().map(|c| c.to_string()).collect(),
            rows: Vec::new(),
        }
    }

    pub fn push(&mut self, epoch: usize, values: Vec<Option<f64>>) {
        assert_eq!(values.len(), self.columns.len(), "log row width");
        self.rows.push(LogRow { epoch, values });
    }

    /// Value of `column` in the row for `epoch`.
    pub fn value(&self, epoch: usize, column: &str) -> Option<f64> {
        let c = self.columns.iter().position(|n| n == column)?;
        self.rows.iter().find(|r| r.epoch == epoch)?.values[c]
    }

    pub fn to_csv(&self) -> String {
        let mut w = csv::Writer::from_writer(Vec::new());
        let mut header = vec!["epoch".to_string()];
        header.extend(self.columns.iter().cloned());
        w.write_record(&header).expect("in-memory write");
        for r in &self.rows {
            let mut rec = vec![r.epoch.to_string()];
            rec.extend(r.values.iter().map(|v| v.map_or(String::new(), |x| x.to_string())));
            w.write_record(&rec).expect("in-memory write");
        }
        String::from_utf8(w.into_inner().expect("in-memory flush")).expect("utf-8 csv")
    }

    pub fn write_csv(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        std::fs::write(path, self.to_csv()).map_err(|e| Error::io(path, e))
    }
}
