//! Results file: one JSON object per query, scores printed with 6 decimals.
//!
//! ```text
//! {"query_id":"q0","results":[{"video_id":"v3","t_st":2.000000,"t_ed":4.000000,"s_vcmr":..,"s_vr":..,"s_tl":..}],
//!  "videos":[{"video_id":"v3","s_vr":..}],"svmr":[...]}
//! ```
//!
//! `videos` and `svmr` are optional on read; they feed VR and SVMR recall.

use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use serde::Deserialize;

use crate::error::{Error, Result};
use crate::metrics::{RankedLists, RankedMoment};
use crate::retrieval::{MomentResult, QueryResults};
use crate::temporal::TimeInterval;

fn json_str(s: &str) -> String {
    serde_json::to_string(s).expect("string serializes")
}

fn push_moments(out: &mut String, ms: &[MomentResult]) {
    out.push('[');
    for (k, m) in ms.iter().enumerate() {
        if k > 0 {
            out.push(',');
        }
        let _ = write!(
            out,
            "{{\"video_id\":{},\"t_st\":{:.6},\"t_ed\":{:.6},\"s_vcmr\":{:.6},\"s_vr\":{:.6},\"s_tl\":{:.6}}}",
            json_str(&m.video_id),
            m.interval.t_st,
            m.interval.t_ed,
            m.s_vcmr,
            m.s_vr,
            m.s_tl
        );
    }
    out.push(']');
}

/// One line, without the trailing newline.
pub fn format_line(r: &QueryResults) -> String {
    let mut out = String::new();
    let _ = write!(out, "{{\"query_id\":{},\"results\":", json_str(&r.query_id));
    push_moments(&mut out, &r.moments);
    out.push_str(",\"videos\":[");
    for (k, v) in r.videos.iter().enumerate() {
        if k > 0 {
            out.push(',');
        }
        let _ = write!(out, "{{\"video_id\":{},\"s_vr\":{:.6}}}", json_str(&v.video_id), v.s_vr);
    }
    out.push_str("],\"svmr\":");
    push_moments(&mut out, &r.svmr);
    out.push('}');
    out
}

pub fn format_results(results: &[QueryResults]) -> String {
    let mut out = String::new();
    for r in results {
        out.push_str(&format_line(r));
        out.push('\n');
    }
    out
}

pub fn write_results(path: &Path, results: &[QueryResults]) -> Result<()> {
    if let Some(dir) = path.parent() {
        fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    }
    fs::write(path, format_results(results)).map_err(|e| Error::io(path, e))
}

#[derive(Deserialize)]
struct MomentLine {
    video_id: String,
    t_st: f64,
    t_ed: f64,
}

#[derive(Deserialize)]
struct VideoLine {
    video_id: String,
}

#[derive(Deserialize)]
struct Line {
    query_id: String,
    results: Vec<MomentLine>,
    #[serde(default)]
    videos: Vec<VideoLine>,
    #[serde(default)]
    svmr: Vec<MomentLine>,
}

fn moments(ms: Vec<MomentLine>) -> Result<Vec<RankedMoment>> {
    ms.into_iter()
        .map(|m| {
            Ok(RankedMoment {
                interval: TimeInterval::new(m.t_st, m.t_ed)?,
                video_id: m.video_id,
            })
        })
        .collect()
}

/// Parses a results file image; `path` only labels diagnostics.
pub fn parse_results(text: &str, path: &Path) -> Result<Vec<RankedLists>> {
    let mut out = Vec::new();
    for (n, line) in text.lines().enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        let at = |msg: String| Error::format(path, format!("line {}: {msg}", n + 1));
        let l: Line = serde_json::from_str(line).map_err(|e| at(e.to_string()))?;
        out.push(RankedLists {
            query_id: l.query_id,
            moments: moments(l.results).map_err(|e| at(e.to_string()))?,
            svmr: moments(l.svmr).map_err(|e| at(e.to_string()))?,
            videos: l.videos.into_iter().map(|v| v.video_id).collect(),
        });
    }
    Ok(out)
}

pub fn read_results(path: &Path) -> Result<Vec<RankedLists>> {
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    parse_results(&text, path)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::retrieval::VideoHit;

    fn moment(v: &str, st: f64, ed: f64, s: f64) -> MomentResult {
        MomentResult {
            video_id: v.into(),
            interval: TimeInterval::new(st, ed).unwrap(),
            st: st as usize,
            ed: ed as usize - 1,
            log_s_vcmr: s.ln(),
            s_vcmr: s,
            s_vr: 0.5,
            s_tl: 1.0 / 3.0,
        }
    }

    #[test]
    fn six_decimals_and_round_trip() {
        let r = QueryResults {
            query_id: "q\"1".into(),
            moments: vec![moment("v1", 0.0, 2.0, 2.5), moment("v0", 1.0, 3.0, 1.25)],
            videos: vec![VideoHit { video_id: "v1".into(), s_vr: 0.5 }],
            svmr: vec![moment("v0", 1.0, 3.0, 1.25)],
        };
        let line = format_line(&r);
        assert!(line.starts_with(r#"{"query_id":"q\"1","results":[{"video_id":"v1","t_st":0.000000,"t_ed":2.000000,"s_vcmr":2.500000,"s_vr":0.500000,"s_tl":0.333333}"#), "{line}");
        let back = parse_results(&format_results(std::slice::from_ref(&r)), Path::new("r.jsonl")).unwrap();
        assert_eq!(back, vec![RankedLists::from(&r)]);
    }

    #[test]
    fn bad_line_is_located() {
        let err = parse_results("\n{\"query_id\":1}\n", Path::new("r.jsonl")).unwrap_err().to_string();
        assert!(err.contains("r.jsonl") && err.contains("line 2"), "{err}");
    }
}
