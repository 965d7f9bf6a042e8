//! Per-epoch metrics rows, the comma-separated metrics file, and the
//! line-delimited per-episode log.
//!
//! The metrics file holds only run-deterministic quantities so that two runs
//! with the same config and seed produce byte-identical files; wall-clock
//! timing lives in the run manifest instead.

use std::io::Write;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// One evaluation epoch.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct MetricsRow {
    pub epoch: usize,
    /// Fraction of successful test rollouts.
    pub success_rate: f64,
    pub mean_task_return: f64,
    /// Mean scaled intrinsic reward before clipping, over the epoch's updates.
    pub mean_intrinsic_pre_clip: f64,
    /// Mean intrinsic reward after clipping.
    pub mean_intrinsic_post_clip: f64,
    /// Trajectory-level bound on the held-out set (NaN when the variant has
    /// no estimator).
    pub heldout_bound: f64,
    /// Mean total object displacement per test rollout.
    pub mean_object_displacement: f64,
}

pub const METRICS_HEADER: &str = "epoch,success_rate,mean_task_return,mean_intrinsic_pre_clip,mean_intrinsic_post_clip,heldout_bound,mean_object_displacement";

/// Write `header + one row per epoch`. Floats use the shortest
/// round-trippable representation.
pub fn emit_metrics(rows: &[MetricsRow], path: impl AsRef<Path>) -> Result<()> {
    let mut f = std::io::BufWriter::new(std::fs::File::create(path.as_ref())?);
    writeln!(f, "{METRICS_HEADER}")?;
    for r in rows {
        writeln!(
            f,
            "{},{},{},{},{},{},{}",
            r.epoch,
            r.success_rate,
            r.mean_task_return,
            r.mean_intrinsic_pre_clip,
            r.mean_intrinsic_post_clip,
            r.heldout_bound,
            r.mean_object_displacement
        )?;
    }
    f.flush()?;
    Ok(())
}

pub fn parse_metrics(path: impl AsRef<Path>) -> Result<Vec<MetricsRow>> {
    let text = std::fs::read_to_string(path.as_ref())?;
    let mut lines = text.lines();
    match lines.next() {
        Some(h) if h == METRICS_HEADER => {}
        other => {
            return Err(Error::Validation(format!(
                "unexpected metrics header: {other:?}"
            )))
        }
    }
    let mut rows = Vec::new();
    for line in lines {
        let fields: Vec<&str> = line.split(',').collect();
        if fields.len() != 7 {
            return Err(Error::Validation(format!("bad metrics row '{line}'")));
        }
        let num = |i: usize| -> Result<f64> {
            fields[i]
                .parse()
                .map_err(|_| Error::Validation(format!("bad number '{}'", fields[i])))
        };
        rows.push(MetricsRow {
            epoch: fields[0]
                .parse()
                .map_err(|_| Error::Validation(format!("bad epoch '{}'", fields[0])))?,
            success_rate: num(1)?,
            mean_task_return: num(2)?,
            mean_intrinsic_pre_clip: num(3)?,
            mean_intrinsic_post_clip: num(4)?,
            heldout_bound: num(5)?,
            mean_object_displacement: num(6)?,
        });
    }
    Ok(rows)
}

/// One line of the structured episode log.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct EpisodeRecord {
    pub phase: String,
    pub epoch: usize,
    pub cycle: usize,
    pub episode: usize,
    pub skill: Option<usize>,
    pub success: bool,
    pub task_return: f64,
    pub object_displacement: f64,
    pub steps: usize,
}

/// Append-only JSON-lines writer for episode records.
pub struct EpisodeLog {
    writer: std::io::BufWriter<std::fs::File>,
}

impl EpisodeLog {
    pub fn create(path: impl AsRef<Path>) -> Result<Self> {
        Ok(Self {
            writer: std::io::BufWriter::new(std::fs::File::create(path.as_ref())?),
        })
    }

    pub fn append(&mut self, record: &EpisodeRecord) -> Result<()> {
        serde_json::to_writer(&mut self.writer, record)?;
        self.writer.write_all(b"\n")?;
        Ok(())
    }

    pub fn flush(&mut self) -> Result<()> {
        self.writer.flush()?;
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn row(epoch: usize) -> MetricsRow {
        MetricsRow {
            epoch,
            success_rate: 0.3,
            mean_task_return: 1.2345678,
            mean_intrinsic_pre_clip: -0.00012345,
            mean_intrinsic_post_clip: 0.5,
            heldout_bound: 0.087654321,
            mean_object_displacement: 0.25,
        }
    }

    #[test]
    fn empty_rows_give_header_only_file() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("metrics.csv");
        emit_metrics(&[], &path).unwrap();
        let text = std::fs::read_to_string(&path).unwrap();
        assert_eq!(text, format!("{METRICS_HEADER}\n"));
    }

    #[test]
    fn roundtrip_preserves_values_exactly() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("metrics.csv");
        let rows = vec![row(1), row(2)];
        emit_metrics(&rows, &path).unwrap();
        let back = parse_metrics(&path).unwrap();
        assert_eq!(back, rows);
    }

    #[test]
    fn nan_heldout_bound_roundtrips() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("metrics.csv");
        let mut r = row(1);
        r.heldout_bound = f64::NAN;
        emit_metrics(&[r], &path).unwrap();
        let back = parse_metrics(&path).unwrap();
        assert!(back[0].heldout_bound.is_nan());
    }

    #[test]
    fn header_matches_field_order() {
        let fields = [
            "epoch",
            "success_rate",
            "mean_task_return",
            "mean_intrinsic_pre_clip",
            "mean_intrinsic_post_clip",
            "heldout_bound",
            "mean_object_displacement",
        ];
        assert_eq!(METRICS_HEADER, fields.join(","));
        // Field order in the serialized struct matches the header.
        let json = serde_json::to_string(&row(0)).unwrap();
        let mut last = 0;
        for f in fields {
            let pos = json.find(&format!("\"{f}\"")).unwrap();
            assert!(pos >= last);
            last = pos;
        }
    }

    #[test]
    fn episode_log_appends_json_lines() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("episodes.jsonl");
        let mut log = EpisodeLog::create(&path).unwrap();
        log.append(&EpisodeRecord {
            phase: "train".into(),
            epoch: 1,
            cycle: 2,
            episode: 3,
            skill: Some(4),
            success: true,
            task_return: 5.0,
            object_displacement: 0.5,
            steps: 50,
        })
        .unwrap();
        log.flush().unwrap();
        let text = std::fs::read_to_string(&path).unwrap();
        let rec: EpisodeRecord = serde_json::from_str(text.lines().next().unwrap()).unwrap();
        assert_eq!(rec.epoch, 1);
        assert_eq!(rec.skill, Some(4));
    }
}
