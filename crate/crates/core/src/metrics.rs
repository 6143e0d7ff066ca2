//! Recall at k under a temporal IoU threshold, and the report table.

use std::collections::HashMap;
use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::record::Dataset;
use crate::retrieval::{MomentResult, QueryResults};
use crate::temporal::{tiou, TimeInterval};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum EvalTask {
    Vcmr,
    Svmr,
    Vr,
}

impl fmt::Display for EvalTask {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            EvalTask::Vcmr => "vcmr",
            EvalTask::Svmr => "svmr",
            EvalTask::Vr => "vr",
        })
    }
}

impl FromStr for EvalTask {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "vcmr" => Ok(EvalTask::Vcmr),
            "svmr" => Ok(EvalTask::Svmr),
            "vr" => Ok(EvalTask::Vr),
            other => Err(Error::Config(format!("unknown task `{other}` (vcmr|svmr|vr)"))),
        }
    }
}

/// k values and tIoU thresholds evaluated for a task.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalSpec {
    pub task: EvalTask,
    pub ks: Vec<usize>,
    pub thresholds: Vec<f64>,
}

impl EvalSpec {
    pub fn standard(task: EvalTask) -> Self {
        let (ks, thresholds) = match task {
            EvalTask::Vcmr => (vec![1, 10, 100], vec![0.5, 0.7]),
            EvalTask::Svmr => (vec![5], vec![0.5, 0.7]),
            EvalTask::Vr => (vec![100], vec![]),
        };
        Self { task, ks, thresholds }
    }

    pub fn validate(&self) -> Result<()> {
        if self.ks.contains(&0) {
            return Err(Error::Config("k must be >= 1".into()));
        }
        if self.thresholds.iter().any(|t| !(*t > 0.0 && *t <= 1.0)) {
            return Err(Error::Config("tIoU thresholds must lie in (0, 1]".into()));
        }
        Ok(())
    }
}

/// A ranked moment as seen by the metric.
#[derive(Debug, Clone, PartialEq)]
pub struct RankedMoment {
    pub video_id: String,
    pub interval: TimeInterval,
}

/// Ground truth of one query.
#[derive(Debug, Clone, PartialEq)]
pub struct GroundTruth {
    pub video_id: String,
    pub interval: TimeInterval,
}

/// Percentage of queries with a hit (same video, tIoU strictly above `tau`)
/// within the first `k` results. Queries without results count as misses.
pub fn recall_at_k(ranked: &[Vec<RankedMoment>], gt: &[GroundTruth], k: usize, tau: f64) -> f64 {
    if gt.is_empty() {
        return 0.0;
    }
    let hits = gt
        .iter()
        .enumerate()
        .filter(|(i, g)| {
            ranked.get(*i).is_some_and(|list| {
                list.iter()
                    .take(k)
                    .any(|m| m.video_id == g.video_id && tiou(&m.interval, &g.interval) > tau)
            })
        })
        .count();
    100.0 * hits as f64 / gt.len() as f64
}

/// Percentage of queries whose video appears within the first `k` videos.
pub fn video_recall_at_k(ranked: &[Vec<String>], gt: &[String], k: usize) -> f64 {
    if gt.is_empty() {
        return 0.0;
    }
    let hits = gt
        .iter()
        .enumerate()
        .filter(|(i, g)| ranked.get(*i).is_some_and(|list| list.iter().take(k).any(|v| v == *g)))
        .count();
    100.0 * hits as f64 / gt.len() as f64
}

/// One row of the report, one column per (task, tIoU, k) cell. A column is
/// `None` when its task was not evaluated.
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct ReportRow {
    pub condition: String,
    pub phi: String,
    pub theta: String,
    pub vcmr_05_r1: Option<f64>,
    pub vcmr_05_r10: Option<f64>,
    pub vcmr_05_r100: Option<f64>,
    pub vcmr_07_r1: Option<f64>,
    pub vcmr_07_r10: Option<f64>,
    pub vcmr_07_r100: Option<f64>,
    pub svmr_05_r5: Option<f64>,
    pub svmr_07_r5: Option<f64>,
    pub vr_r100: Option<f64>,
}

pub const REPORT_COLUMNS: [&str; 12] = [
    "condition",
    "phi",
    "theta",
    "VCMR-0.5 R@1",
    "VCMR-0.5 R@10",
    "VCMR-0.5 R@100",
    "VCMR-0.7 R@1",
    "VCMR-0.7 R@10",
    "VCMR-0.7 R@100",
    "SVMR-0.5 R@5",
    "SVMR-0.7 R@5",
    "VR R@100",
];

impl ReportRow {
    pub fn new(condition: impl Into<String>, phi: impl Into<String>, theta: impl Into<String>) -> Self {
        Self {
            condition: condition.into(),
            phi: phi.into(),
            theta: theta.into(),
            ..Default::default()
        }
    }

    pub fn values(&self) -> [Option<f64>; 9] {
        [
            self.vcmr_05_r1,
            self.vcmr_05_r10,
            self.vcmr_05_r100,
            self.vcmr_07_r1,
            self.vcmr_07_r10,
            self.vcmr_07_r100,
            self.svmr_05_r5,
            self.svmr_07_r5,
            self.vr_r100,
        ]
    }

    /// Fills the columns of `task` from ranked lists keyed by query id.
    pub fn fill(&mut self, task: EvalTask, results: &[RankedLists], truth: &[QueryTruth]) {
        let by_id: HashMap<&str, &RankedLists> = results.iter().map(|r| (r.query_id.as_str(), r)).collect();
        let order: Vec<Option<&RankedLists>> = truth.iter().map(|t| by_id.get(t.query_id.as_str()).copied()).collect();
        let gt: Vec<GroundTruth> = truth.iter().map(|t| t.gt.clone()).collect();
        let pick = |f: fn(&RankedLists) -> &Vec<RankedMoment>| -> Vec<Vec<RankedMoment>> {
            order.iter().map(|r| r.map(|res| f(res).clone()).unwrap_or_default()).collect()
        };
        match task {
            EvalTask::Vcmr => {
                let ranked = pick(|r| &r.moments);
                self.vcmr_05_r1 = Some(recall_at_k(&ranked, &gt, 1, 0.5));
                self.vcmr_05_r10 = Some(recall_at_k(&ranked, &gt, 10, 0.5));
                self.vcmr_05_r100 = Some(recall_at_k(&ranked, &gt, 100, 0.5));
                self.vcmr_07_r1 = Some(recall_at_k(&ranked, &gt, 1, 0.7));
                self.vcmr_07_r10 = Some(recall_at_k(&ranked, &gt, 10, 0.7));
                self.vcmr_07_r100 = Some(recall_at_k(&ranked, &gt, 100, 0.7));
            }
            EvalTask::Svmr => {
                let ranked = pick(|r| &r.svmr);
                self.svmr_05_r5 = Some(recall_at_k(&ranked, &gt, 5, 0.5));
                self.svmr_07_r5 = Some(recall_at_k(&ranked, &gt, 5, 0.7));
            }
            EvalTask::Vr => {
                let ranked: Vec<Vec<String>> = order.iter().map(|r| r.map(|res| res.videos.clone()).unwrap_or_default()).collect();
                let ids: Vec<String> = gt.iter().map(|g| g.video_id.clone()).collect();
                self.vr_r100 = Some(video_recall_at_k(&ranked, &ids, 100));
            }
        }
    }
}

/// What the metrics need from one query's results.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct RankedLists {
    pub query_id: String,
    pub moments: Vec<RankedMoment>,
    pub svmr: Vec<RankedMoment>,
    pub videos: Vec<String>,
}

impl From<&QueryResults> for RankedLists {
    fn from(r: &QueryResults) -> Self {
        let conv = |ms: &[MomentResult]| {
            ms.iter()
                .map(|m| RankedMoment {
                    video_id: m.video_id.clone(),
                    interval: m.interval,
                })
                .collect()
        };
        Self {
            query_id: r.query_id.clone(),
            moments: conv(&r.moments),
            svmr: conv(&r.svmr),
            videos: r.videos.iter().map(|v| v.video_id.clone()).collect(),
        }
    }
}

/// Ground truth keyed by query id.
#[derive(Debug, Clone, PartialEq)]
pub struct QueryTruth {
    pub query_id: String,
    pub gt: GroundTruth,
}

/// Ground truth of the given dataset queries, in that order.
pub fn query_truths(dataset: &Dataset, queries: &[usize]) -> Vec<QueryTruth> {
    queries
        .iter()
        .map(|&i| {
            let q = &dataset.queries[i];
            QueryTruth {
                query_id: q.query_id.clone(),
                gt: GroundTruth {
                    video_id: q.video_id.clone(),
                    interval: q.gt,
                },
            }
        })
        .collect()
}

fn cell(v: Option<f64>) -> String {
    v.map(|x| format!("{x:.2}")).unwrap_or_default()
}

/// CSV with a header row; values with two decimals, empty for missing cells.
pub fn report_csv(rows: &[ReportRow]) -> Result<String> {
    let mut w = csv::Writer::from_writer(Vec::new());
    let io_err = |e: csv::Error| Error::Config(format!("csv: {e}"));
    w.write_record(REPORT_COLUMNS).map_err(io_err)?;
    for r in rows {
        let mut rec = vec![r.condition.clone(), r.phi.clone(), r.theta.clone()];
        rec.extend(r.values().iter().map(|v| cell(*v)));
        w.write_record(&rec).map_err(io_err)?;
    }
    let bytes = w.into_inner().map_err(|e| Error::Config(format!("csv: {e}")))?;
    Ok(String::from_utf8(bytes).expect("csv output is utf-8"))
}

pub fn report_json(rows: &[ReportRow]) -> Result<String> {
    Ok(serde_json::to_string_pretty(rows)? + "\n")
}

pub fn read_report_json(text: &str) -> Result<Vec<ReportRow>> {
    Ok(serde_json::from_str(text)?)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn iv(a: f64, b: f64) -> TimeInterval {
        TimeInterval::new(a, b).unwrap()
    }

    fn m(v: &str, a: f64, b: f64) -> RankedMoment {
        RankedMoment {
            video_id: v.into(),
            interval: iv(a, b),
        }
    }

    fn g(v: &str, a: f64, b: f64) -> GroundTruth {
        GroundTruth {
            video_id: v.into(),
            interval: iv(a, b),
        }
    }

    #[test]
    fn perfect_and_empty() {
        let gt = vec![g("a", 0.0, 2.0), g("b", 1.0, 3.0)];
        let ranked = vec![vec![m("a", 0.0, 2.0)], vec![m("b", 1.0, 3.0)]];
        assert_eq!(recall_at_k(&ranked, &gt, 1, 0.7), 100.0);
        let miss = vec![vec![m("a", 5.0, 6.0)], vec![m("a", 1.0, 3.0)]];
        assert_eq!(recall_at_k(&miss, &gt, 10, 0.5), 0.0);
        assert_eq!(recall_at_k(&[], &gt, 10, 0.5), 0.0);
    }

    #[test]
    fn hits_at_ranks_1_3_none_12() {
        let gt: Vec<GroundTruth> = (0..4).map(|_| g("v", 0.0, 2.0)).collect();
        let filler = || m("v", 10.0, 11.0);
        let with_hit_at = |rank: Option<usize>| -> Vec<RankedMoment> {
            (1..=20)
                .map(|r| if Some(r) == rank { m("v", 0.0, 2.0) } else { filler() })
                .collect()
        };
        let ranked = vec![with_hit_at(Some(1)), with_hit_at(Some(3)), with_hit_at(None), with_hit_at(Some(12))];
        assert_eq!(recall_at_k(&ranked, &gt, 10, 0.5), 50.0);
        assert_eq!(recall_at_k(&ranked, &gt, 1, 0.5), 25.0);
        assert_eq!(recall_at_k(&ranked, &gt, 100, 0.5), 75.0);
    }

    #[test]
    fn threshold_is_strict() {
        // tIoU exactly 0.5
        let gt = vec![g("v", 0.0, 2.0)];
        let ranked = vec![vec![m("v", 1.0, 2.0)]];
        assert_eq!(tiou(&iv(1.0, 2.0), &iv(0.0, 2.0)), 0.5);
        assert_eq!(recall_at_k(&ranked, &gt, 1, 0.5), 0.0);
        assert_eq!(recall_at_k(&ranked, &gt, 1, 0.49), 100.0);
    }

    #[test]
    fn wrong_video_never_hits() {
        let gt = vec![g("v", 0.0, 2.0)];
        let ranked = vec![vec![m("w", 0.0, 2.0)]];
        assert_eq!(recall_at_k(&ranked, &gt, 1, 0.5), 0.0);
    }

    #[test]
    fn video_recall() {
        let ranked = vec![vec!["a".to_string(), "b".into()], vec!["c".into()]];
        let gt = vec!["b".to_string(), "d".into()];
        assert_eq!(video_recall_at_k(&ranked, &gt, 1), 0.0);
        assert_eq!(video_recall_at_k(&ranked, &gt, 2), 50.0);
    }

    #[test]
    fn empty_report_is_header_only() {
        let csv = report_csv(&[]).unwrap();
        assert_eq!(csv.lines().count(), 1);
        assert!(csv.starts_with("condition,phi,theta,VCMR-0.5 R@1,"));
    }

    #[test]
    fn report_row_round_trips_json() {
        let mut r = ReportRow::new("+PR", "vp", "0.5");
        r.vcmr_05_r10 = Some(12.345);
        r.vr_r100 = Some(100.0);
        let back = read_report_json(&report_json(std::slice::from_ref(&r)).unwrap()).unwrap();
        assert_eq!(back, vec![r]);
    }

    #[test]
    fn planted_grid_column_sums() {
        let rows: Vec<ReportRow> = (0..4)
            .map(|i| {
                let mut r = ReportRow::new(format!("c{i}"), "vp", "0.5");
                r.vcmr_05_r1 = Some(i as f64);
                r.vr_r100 = Some(10.0 * i as f64);
                r
            })
            .collect();
        let csv = report_csv(&rows).unwrap();
        let mut reader = csv::Reader::from_reader(csv.as_bytes());
        let (mut s1, mut s2) = (0.0, 0.0);
        for rec in reader.records() {
            let rec = rec.unwrap();
            s1 += rec[3].parse::<f64>().unwrap();
            s2 += rec[11].parse::<f64>().unwrap();
            assert_eq!(&rec[4], "");
        }
        assert_eq!((s1, s2), (6.0, 60.0));
    }

    fn brute(ranked: &[Vec<RankedMoment>], gt: &[GroundTruth], k: usize, tau: f64) -> f64 {
        let mut hits = 0;
        for (i, g) in gt.iter().enumerate() {
            let mut hit = false;
            if let Some(list) = ranked.get(i) {
                for (rank, r) in list.iter().enumerate() {
                    if rank >= k {
                        break;
                    }
                    let inter = (r.interval.t_ed.min(g.interval.t_ed) - r.interval.t_st.max(g.interval.t_st)).max(0.0);
                    let union = (r.interval.t_ed - r.interval.t_st) + (g.interval.t_ed - g.interval.t_st) - inter;
                    let t = if union > 0.0 { inter / union } else { 0.0 };
                    if r.video_id == g.video_id && t > tau {
                        hit = true;
                    }
                }
            }
            if hit {
                hits += 1;
            }
        }
        100.0 * hits as f64 / gt.len() as f64
    }

    fn arb_instance() -> impl Strategy<Value = (Vec<Vec<RankedMoment>>, Vec<GroundTruth>)> {
        let seg = (0u8..3, 0u8..10, 1u8..5).prop_map(|(v, s, l)| m(&format!("v{v}"), s as f64, (s + l) as f64));
        let gt = (0u8..3, 0u8..10, 1u8..5).prop_map(|(v, s, l)| g(&format!("v{v}"), s as f64, (s + l) as f64));
        proptest::collection::vec((proptest::collection::vec(seg, 0..15), gt), 1..8)
            .prop_map(|v| v.into_iter().unzip())
    }

    proptest! {
        #[test]
        fn matches_brute_force_and_is_monotone((ranked, gt) in arb_instance()) {
            for &k in &[1, 5, 10, 100] {
                for &tau in &[0.3, 0.5, 0.7] {
                    prop_assert_eq!(recall_at_k(&ranked, &gt, k, tau), brute(&ranked, &gt, k, tau));
                }
            }
            for &tau in &[0.5, 0.7] {
                let r1 = recall_at_k(&ranked, &gt, 1, tau);
                let r10 = recall_at_k(&ranked, &gt, 10, tau);
                let r100 = recall_at_k(&ranked, &gt, 100, tau);
                prop_assert!(r1 <= r10 && r10 <= r100);
            }
            for &k in &[1, 10, 100] {
                prop_assert!(recall_at_k(&ranked, &gt, k, 0.7) <= recall_at_k(&ranked, &gt, k, 0.5));
            }
        }
    }
}
