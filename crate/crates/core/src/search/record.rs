use std::fs::File;
use std::io::{self, BufWriter, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::morphisms::AuditRecord;

/// One row of `metrics.csv`: a node's state after one iteration.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricsRow {
    pub iter: usize,
    pub round: usize,
    pub node_id: usize,
    pub count: f64,
    pub f: f64,
    #[serde(rename = "V_train")]
    pub v_train: f64,
    #[serde(rename = "V_val")]
    pub v_val: f64,
    pub phi: f64,
    pub tau_k: f64,
    pub energy: f64,
    pub moved: f64,
}

pub trait MetricsSink {
    fn row(&mut self, row: &MetricsRow) -> io::Result<()>;

    /// Called once per iteration after its rows.
    fn flush(&mut self) -> io::Result<()> {
        Ok(())
    }
}

/// Discards everything.
#[derive(Debug, Default)]
pub struct NullSink;

impl MetricsSink for NullSink {
    fn row(&mut self, _: &MetricsRow) -> io::Result<()> {
        Ok(())
    }
}

/// Keeps rows in memory.
#[derive(Debug, Default)]
pub struct VecSink(pub Vec<MetricsRow>);

impl MetricsSink for VecSink {
    fn row(&mut self, row: &MetricsRow) -> io::Result<()> {
        self.0.push(row.clone());
        Ok(())
    }
}

/// CSV writer flushed after every iteration.
pub struct CsvSink<W: Write> {
    inner: csv::Writer<W>,
}

impl CsvSink<BufWriter<File>> {
    pub fn create(path: &Path) -> io::Result<Self> {
        Ok(CsvSink::new(BufWriter::new(File::create(path)?)))
    }
}

impl<W: Write> CsvSink<W> {
    pub fn new(w: W) -> Self {
        CsvSink { inner: csv::Writer::from_writer(w) }
    }

    pub fn into_inner(self) -> io::Result<W> {
        self.inner.into_inner().map_err(|e| e.into_error())
    }
}

impl<W: Write> MetricsSink for CsvSink<W> {
    fn row(&mut self, row: &MetricsRow) -> io::Result<()> {
        self.inner.serialize(row).map_err(io::Error::other)
    }

    fn flush(&mut self) -> io::Result<()> {
        self.inner.flush()
    }
}

/// Morphism audit log, one JSON object per line.
pub trait AuditSink {
    fn record(&mut self, rec: &AuditRecord) -> io::Result<()>;
}

impl AuditSink for Vec<AuditRecord> {
    fn record(&mut self, rec: &AuditRecord) -> io::Result<()> {
        self.push(rec.clone());
        Ok(())
    }
}

pub struct JsonlSink<W: Write>(pub W);

impl JsonlSink<BufWriter<File>> {
    pub fn create(path: &Path) -> io::Result<Self> {
        Ok(JsonlSink(BufWriter::new(File::create(path)?)))
    }
}

impl<W: Write> AuditSink for JsonlSink<W> {
    fn record(&mut self, rec: &AuditRecord) -> io::Result<()> {
        serde_json::to_writer(&mut self.0, rec).map_err(io::Error::other)?;
        self.0.write_all(b"\n")?;
        self.0.flush()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn csv_header_and_row() {
        let mut sink = CsvSink::new(Vec::new());
        let row = MetricsRow {
            iter: 3,
            round: 0,
            node_id: 1,
            count: 2.0,
            f: 0.25,
            v_train: 0.5,
            v_val: 0.75,
            phi: 0.0,
            tau_k: 0.05,
            energy: 1.5,
            moved: 0.0,
        };
        sink.row(&row).unwrap();
        sink.flush().unwrap();
        let text = String::from_utf8(sink.into_inner().unwrap()).unwrap();
        let mut lines = text.lines();
        assert_eq!(lines.next().unwrap(), "iter,round,node_id,count,f,V_train,V_val,phi,tau_k,energy,moved");
        assert_eq!(lines.next().unwrap(), "3,0,1,2.0,0.25,0.5,0.75,0.0,0.05,1.5,0.0");
    }

    #[test]
    fn jsonl_lines() {
        let mut sink = JsonlSink(Vec::new());
        let rec = AuditRecord {
            round: 1,
            child_id: 2,
            kind: "deepen".into(),
            args: serde_json::json!({"position": 1}),
            preserved: true,
            dev: 0.0,
        };
        sink.record(&rec).unwrap();
        sink.record(&rec).unwrap();
        let text = String::from_utf8(sink.0).unwrap();
        assert_eq!(text.lines().count(), 2);
        let back: AuditRecord = serde_json::from_str(text.lines().next().unwrap()).unwrap();
        assert_eq!(back, rec);
    }
}
