use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Tolerance for comparing measurement and state times (s).
pub const TIME_EPS: f64 = 1e-9;

/// State ids and timestamps chosen a priori: `t(id) = t0 + id * spacing`.
#[derive(Debug, Clone, PartialEq)]
pub struct StateTimeline {
    t0: Option<f64>,
    spacing: f64,
    oldest_id: u64,
    next_id: u64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "SCREAMING_SNAKE_CASE")]
pub enum RoutingKind {
    Synchronized,
    Interpolated,
    Dropped,
    Cached,
}

/// Where a measurement lands on the timeline.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RoutingDecision {
    pub kind: RoutingKind,
    /// Anchor state (synchronized) or earlier of the bracketing pair (interpolated).
    pub anchor_id: Option<u64>,
    /// Offset from `anchor_id`'s timestamp.
    pub tau: f64,
    /// Delay-corrected measurement time.
    pub t: f64,
}

impl RoutingDecision {
    fn bare(kind: RoutingKind, t: f64) -> Self {
        Self { kind, anchor_id: None, tau: 0.0, t }
    }

    /// Ids the measurement is attached to.
    pub fn anchor_ids(&self) -> Vec<u64> {
        match (self.kind, self.anchor_id) {
            (RoutingKind::Synchronized, Some(i)) => vec![i],
            (RoutingKind::Interpolated, Some(i)) => vec![i, i + 1],
            _ => Vec::new(),
        }
    }
}

impl StateTimeline {
    pub fn new(spacing: f64) -> Result<Self> {
        if !(spacing > 0.0 && spacing.is_finite()) {
            return Err(Error::config("solver.spacing", "state spacing must be positive"));
        }
        Ok(Self { t0: None, spacing, oldest_id: 0, next_id: 0 })
    }

    /// Creates state 0 at `t0`.
    pub fn initialize(&mut self, t0: f64) {
        self.t0 = Some(t0);
        self.oldest_id = 0;
        self.next_id = 1;
    }

    pub fn is_initialized(&self) -> bool {
        self.t0.is_some()
    }

    pub fn spacing(&self) -> f64 {
        self.spacing
    }

    pub fn start_time(&self) -> Option<f64> {
        self.t0
    }

    pub fn timestamp(&self, id: u64) -> f64 {
        self.t0.unwrap_or(0.0) + id as f64 * self.spacing
    }

    pub fn oldest_id(&self) -> u64 {
        self.oldest_id
    }

    pub fn newest_id(&self) -> u64 {
        self.next_id.saturating_sub(1)
    }

    /// Retained states.
    pub fn len(&self) -> usize {
        (self.next_id - self.oldest_id) as usize
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// Appends `n` states and returns their `(id, timestamp)` pairs.
    pub fn extend(&mut self, n: usize) -> Result<Vec<(u64, f64)>> {
        if self.t0.is_none() {
            return Err(Error::NotInitialized);
        }
        let out = (0..n as u64).map(|k| (self.next_id + k, self.timestamp(self.next_id + k))).collect();
        self.next_id += n as u64;
        Ok(out)
    }

    /// Forgets states older than `id`.
    pub fn retire_before(&mut self, id: u64) {
        self.oldest_id = id.clamp(self.oldest_id, self.newest_id());
    }

    /// Classifies a measurement stamped `t_raw` by a sensor with delay `t_d`.
    pub fn route(&self, t_raw: f64, t_d: f64, t_sync: f64) -> RoutingDecision {
        let t = t_raw - t_d;
        if self.t0.is_none() {
            return RoutingDecision::bare(RoutingKind::Cached, t);
        }
        let (oldest, newest) = (self.oldest_id, self.newest_id());
        if t < self.timestamp(oldest) - TIME_EPS {
            return RoutingDecision::bare(RoutingKind::Dropped, t);
        }
        if t > self.timestamp(newest) + TIME_EPS {
            return RoutingDecision::bare(RoutingKind::Cached, t);
        }
        let rel = (t - self.timestamp(0)) / self.spacing;
        let k = (rel.floor().max(0.0) as u64).clamp(oldest, newest);
        let d0 = t - self.timestamp(k);
        if k == newest {
            return RoutingDecision { kind: RoutingKind::Synchronized, anchor_id: Some(k), tau: d0, t };
        }
        let d1 = self.timestamp(k + 1) - t;
        let (nearest, dist) = if d0 <= d1 { (k, d0) } else { (k + 1, -d1) };
        if dist.abs() <= t_sync + TIME_EPS {
            RoutingDecision { kind: RoutingKind::Synchronized, anchor_id: Some(nearest), tau: dist, t }
        } else {
            RoutingDecision { kind: RoutingKind::Interpolated, anchor_id: Some(k), tau: d0, t }
        }
    }
}

/// Free-function form of [`StateTimeline::route`].
pub fn route_measurement(t_meas_raw: f64, t_d: f64, timeline: &StateTimeline, t_sync: f64) -> RoutingDecision {
    timeline.route(t_meas_raw, t_d, t_sync)
}
