//! Time intervals, the uniform clip grid and temporal IoU.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Slack allowed when a timestamp slightly overshoots the last clip boundary.
const BOUNDARY_TOLERANCE: f64 = 1e-6;

/// Guard against `ceil(2.0000000001) = 3` style rounding on clip boundaries.
const SNAP_EPS: f64 = 1e-9;

/// A span `[t_st, t_ed]` in seconds.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TimeInterval {
    pub t_st: f64,
    pub t_ed: f64,
}

impl TimeInterval {
    pub fn new(t_st: f64, t_ed: f64) -> Result<Self> {
        if !(t_st.is_finite() && t_ed.is_finite()) || t_st < 0.0 || t_st > t_ed {
            return Err(Error::InvalidInterval { t_st, t_ed });
        }
        Ok(Self { t_st, t_ed })
    }

    pub fn length(&self) -> f64 {
        self.t_ed - self.t_st
    }
}

/// Temporal intersection over union.
///
/// Two identical points have IoU 1; any other zero-length union gives 0.
pub fn tiou(a: &TimeInterval, b: &TimeInterval) -> f64 {
    let inter = (a.t_ed.min(b.t_ed) - a.t_st.max(b.t_st)).max(0.0);
    let union = a.t_ed.max(b.t_ed) - a.t_st.min(b.t_st);
    if union <= 0.0 {
        return if a == b { 1.0 } else { 0.0 };
    }
    (inter / union).clamp(0.0, 1.0)
}

/// Uniform discretisation of a video into `l_v` clips of `delta_t` seconds,
/// together with the admissible segment lengths `[n_min, n_max]` in clips.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ClipGrid {
    pub delta_t: f64,
    pub l_v: usize,
    pub n_min: usize,
    pub n_max: usize,
}

impl ClipGrid {
    pub fn new(delta_t: f64, l_v: usize, n_min: usize, n_max: usize) -> Result<Self> {
        if !(delta_t.is_finite() && delta_t > 0.0) {
            return Err(Error::InvalidGrid(format!("delta_t must be > 0, got {delta_t}")));
        }
        if l_v == 0 {
            return Err(Error::InvalidGrid("l_v must be >= 1".into()));
        }
        if n_min == 0 || n_min > n_max {
            return Err(Error::InvalidGrid(format!(
                "need 1 <= n_min <= n_max, got n_min={n_min} n_max={n_max}"
            )));
        }
        if n_max > l_v {
            return Err(Error::InvalidGrid(format!("n_max={n_max} exceeds l_v={l_v}")));
        }
        Ok(Self {
            delta_t,
            l_v,
            n_min,
            n_max,
        })
    }

    /// Grid for a video of `l_v` clips where the segment-length bounds are
    /// clamped to what the video can hold.
    pub fn fitted(delta_t: f64, l_v: usize, n_min: usize, n_max: usize) -> Result<Self> {
        let n_max = n_max.min(l_v);
        let n_min = n_min.min(n_max);
        Self::new(delta_t, l_v, n_min, n_max)
    }

    pub fn duration(&self) -> f64 {
        self.l_v as f64 * self.delta_t
    }

    /// Snap a continuous interval onto inclusive clip indices `(start, end)`.
    pub fn interval_to_clips(&self, iv: &TimeInterval) -> Result<(usize, usize)> {
        if iv.t_ed > self.duration() + BOUNDARY_TOLERANCE || iv.t_ed - iv.t_st <= 0.0 {
            return Err(Error::InvalidInterval {
                t_st: iv.t_st,
                t_ed: iv.t_ed,
            });
        }
        let last = self.l_v - 1;
        let st = ((iv.t_st / self.delta_t + SNAP_EPS).floor().max(0.0) as usize).min(last);
        let ed_raw = (iv.t_ed / self.delta_t - SNAP_EPS).ceil() as i64 - 1;
        let ed = (ed_raw.max(st as i64) as usize).min(last);
        Ok((st, ed))
    }

    /// Inverse of [`ClipGrid::interval_to_clips`]: `[st·δt, (ed+1)·δt]`.
    pub fn clips_to_interval(&self, st: usize, ed: usize) -> TimeInterval {
        TimeInterval {
            t_st: st as f64 * self.delta_t,
            t_ed: (ed + 1) as f64 * self.delta_t,
        }
    }
}
