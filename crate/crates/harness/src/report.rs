//! Metrics reports in JSON and CSV form, plus trajectory file I/O.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use stepcode_core::canonical::{deserialize_trajectory, serialize_trajectory, to_canonical_string};
use stepcode_core::judge::sopr;
use stepcode_core::metrics::{conflict_stats, depth_and_tokens, scep, ConflictDistribution};
use stepcode_core::reward::ConflictCase;
use stepcode_core::{AnswerStatus, Trajectory};

use crate::error::{HarnessError, Result};
use crate::suite::BenchmarkSuite;

/// Metrics over one slice of tasks (the whole suite or one subset).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SliceMetrics {
    pub subset: String,
    pub tasks: usize,
    pub sopr: f64,
    /// `None` when no step was committed at all.
    pub scep: Option<f64>,
    pub avg_depth: f64,
    pub total_tokens: u64,
    pub avg_tokens: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TaskFailure {
    pub task_id: String,
    pub error: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricsReport {
    pub suite: String,
    pub variant: String,
    pub overall: SliceMetrics,
    pub subsets: Vec<SliceMetrics>,
    /// Mean of the per-subset SoPR values.
    pub subset_avg_sopr: Option<f64>,
    pub conflict: ConflictDistribution,
    pub failures: Vec<TaskFailure>,
}

fn status_of(t: &Trajectory) -> AnswerStatus {
    t.answer_status.unwrap_or(AnswerStatus::Unsolved)
}

pub fn slice_metrics(subset: &str, trajectories: &[&Trajectory]) -> Result<SliceMetrics> {
    let owned: Vec<Trajectory> = trajectories.iter().map(|t| (*t).clone()).collect();
    let statuses: Vec<AnswerStatus> = owned.iter().map(status_of).collect();
    let sopr = sopr(&statuses).map_err(|_| HarnessError::Config(format!("subset '{subset}' has no tasks")))?;
    let dt = depth_and_tokens(&owned).map_err(|e| HarnessError::Config(e.to_string()))?;
    Ok(SliceMetrics {
        subset: subset.to_string(),
        tasks: owned.len(),
        sopr,
        scep: scep(&owned).ok(),
        avg_depth: dt.avg_depth,
        total_tokens: dt.total_tokens,
        avg_tokens: dt.avg_tokens,
    })
}

/// Aggregate finished trajectories. The result does not depend on the
/// order of `trajectories`.
pub fn build_report(
    suite: &BenchmarkSuite,
    variant: &str,
    trajectories: &[Trajectory],
    failures: Vec<TaskFailure>,
) -> Result<MetricsReport> {
    if trajectories.is_empty() {
        return Err(HarnessError::Config(format!("suite '{}' produced no trajectories", suite.name)));
    }
    let mut sorted: Vec<&Trajectory> = trajectories.iter().collect();
    sorted.sort_by(|a, b| a.task_id.cmp(&b.task_id));
    let overall = slice_metrics("all", &sorted)?;
    let mut subsets = Vec::new();
    for (label, ids) in &suite.subsets {
        let members: Vec<&Trajectory> = sorted.iter().copied().filter(|t| ids.contains(&t.task_id)).collect();
        if !members.is_empty() {
            subsets.push(slice_metrics(label, &members)?);
        }
    }
    let subset_avg_sopr =
        (!subsets.is_empty()).then(|| subsets.iter().map(|s| s.sopr).sum::<f64>() / subsets.len() as f64);
    let ordered: Vec<Trajectory> = sorted.into_iter().cloned().collect();
    let mut failures = failures;
    failures.sort_by(|a, b| a.task_id.cmp(&b.task_id));
    Ok(MetricsReport {
        suite: suite.name.clone(),
        variant: variant.to_string(),
        overall,
        subsets,
        subset_avg_sopr,
        conflict: conflict_stats(&ordered),
        failures,
    })
}

#[derive(Debug, Serialize)]
struct SliceRow<'a> {
    variant: &'a str,
    subset: &'a str,
    tasks: usize,
    sopr: f64,
    scep: Option<f64>,
    avg_depth: f64,
    total_tokens: u64,
    avg_tokens: f64,
}

fn canonical(value: &impl Serialize) -> Result<String> {
    to_canonical_string(value).map_err(|e| HarnessError::malformed("report", e))
}

pub fn write_json(value: &impl Serialize, path: &Path) -> Result<()> {
    let mut text = canonical(value)?;
    text.push('\n');
    std::fs::write(path, text).map_err(HarnessError::file(path))
}

/// Write `<stem>.json` (the list of reports) and `<stem>.csv` (one row per
/// variant and slice) into `dir`.
pub fn write_reports(reports: &[MetricsReport], dir: &Path, stem: &str) -> Result<(PathBuf, PathBuf)> {
    std::fs::create_dir_all(dir).map_err(HarnessError::file(dir))?;
    let json_path = dir.join(format!("{stem}.json"));
    if let [single] = reports {
        write_json(single, &json_path)?;
    } else {
        write_json(&reports, &json_path)?;
    }
    let csv_path = dir.join(format!("{stem}.csv"));
    let mut w = csv::Writer::from_path(&csv_path)?;
    for r in reports {
        for s in std::iter::once(&r.overall).chain(&r.subsets) {
            w.serialize(SliceRow {
                variant: &r.variant,
                subset: &s.subset,
                tasks: s.tasks,
                sopr: s.sopr,
                scep: s.scep,
                avg_depth: s.avg_depth,
                total_tokens: s.total_tokens,
                avg_tokens: s.avg_tokens,
            })?;
        }
    }
    w.flush().map_err(HarnessError::file(&csv_path))?;
    Ok((json_path, csv_path))
}

#[derive(Debug, Serialize)]
struct ConflictRow<'a> {
    case: &'a str,
    count: usize,
    percentage: f64,
}

pub fn write_conflict(dist: &ConflictDistribution, dir: &Path) -> Result<(PathBuf, PathBuf)> {
    std::fs::create_dir_all(dir).map_err(HarnessError::file(dir))?;
    let json_path = dir.join("conflict.json");
    write_json(dist, &json_path)?;
    let csv_path = dir.join("conflict.csv");
    let mut w = csv::Writer::from_path(&csv_path)?;
    for case in ConflictCase::ALL {
        w.serialize(ConflictRow {
            case: case.label(),
            count: dist.count(case),
            percentage: dist.percentage(case),
        })?;
    }
    w.flush().map_err(HarnessError::file(&csv_path))?;
    Ok((json_path, csv_path))
}

/// File-name-safe form of a task id.
pub fn file_stem(task_id: &str) -> String {
    task_id
        .chars()
        .map(|c| if c.is_ascii_alphanumeric() || matches!(c, '-' | '_' | '.') { c } else { '_' })
        .collect()
}

pub fn write_trajectories(trajectories: &[Trajectory], dir: &Path) -> Result<()> {
    std::fs::create_dir_all(dir).map_err(HarnessError::file(dir))?;
    for t in trajectories {
        let path = dir.join(format!("{}.json", file_stem(&t.task_id)));
        let bytes = serialize_trajectory(t).map_err(|e| HarnessError::malformed("trajectory", e))?;
        std::fs::write(&path, bytes).map_err(HarnessError::file(&path))?;
    }
    Ok(())
}

/// Every `*.json` trajectory in `dir`, in file-name order.
pub fn read_trajectories(dir: &Path) -> Result<Vec<Trajectory>> {
    let mut paths: Vec<PathBuf> = std::fs::read_dir(dir)
        .map_err(HarnessError::file(dir))?
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| p.extension().is_some_and(|x| x == "json"))
        .collect();
    paths.sort();
    paths
        .iter()
        .map(|p| {
            let bytes = std::fs::read(p).map_err(HarnessError::file(p))?;
            deserialize_trajectory(&bytes).map_err(|e| HarnessError::malformed(p.display().to_string(), e))
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::builtin::conflict_fixture;

    fn suite_of(ts: &[Trajectory]) -> BenchmarkSuite {
        let mut s = BenchmarkSuite {
            name: "s".into(),
            ..BenchmarkSuite::default()
        };
        s.subsets.insert("a".into(), ts.iter().take(3).map(|t| t.task_id.clone()).collect());
        s.subsets.insert("b".into(), ts.iter().skip(3).map(|t| t.task_id.clone()).collect());
        s
    }

    #[test]
    fn report_is_order_independent() {
        let ts = conflict_fixture();
        let suite = suite_of(&ts);
        let a = build_report(&suite, "v", &ts, vec![]).unwrap();
        let mut rev = ts.clone();
        rev.reverse();
        let b = build_report(&suite, "v", &rev, vec![]).unwrap();
        assert_eq!(canonical(&a).unwrap(), canonical(&b).unwrap());
        assert_eq!(a.overall.tasks, 71);
        assert_eq!(a.overall.sopr, 0.5);
        assert_eq!(a.subsets.len(), 2);
        assert_eq!(a.subset_avg_sopr, Some(0.5));
        let sum: f64 = a.conflict.percentages.values().sum();
        assert!((sum - 100.0).abs() < 1e-9);
    }

    #[test]
    fn empty_input_is_an_error() {
        assert!(build_report(&BenchmarkSuite::default(), "v", &[], vec![]).is_err());
    }

    #[test]
    fn files_round_trip() {
        let ts = conflict_fixture();
        let dir = tempfile::tempdir().unwrap();
        write_trajectories(&ts, dir.path()).unwrap();
        let mut back = read_trajectories(dir.path()).unwrap();
        back.sort_by(|a, b| a.task_id.cmp(&b.task_id));
        assert_eq!(back, ts);

        let report = build_report(&suite_of(&ts), "full", &ts, vec![]).unwrap();
        let (j, c) = write_reports(std::slice::from_ref(&report), dir.path(), "report").unwrap();
        let parsed: MetricsReport = serde_json::from_slice(&std::fs::read(j).unwrap()).unwrap();
        assert_eq!(parsed, report);
        let csv = std::fs::read_to_string(c).unwrap();
        assert_eq!(csv.lines().count(), 4);
        assert!(csv.starts_with("variant,subset,tasks,sopr,scep,avg_depth,total_tokens,avg_tokens\n"));
        assert_eq!(file_stem("a/b c"), "a_b_c");
    }
}
