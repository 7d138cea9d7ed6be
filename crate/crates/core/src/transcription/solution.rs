use nalgebra::DVector;
use serde::{Deserialize, Serialize};

use crate::projection::ContactForces;

/// Contact forces recovered at one node under one phase.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NodeForces {
    pub phase: usize,
    pub node: usize,
    pub forces: ContactForces,
}

/// Optimized node trajectory. States and controls are linear in time between nodes.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrajectorySolution {
    pub times: Vec<f64>,
    pub states: Vec<DVector<f64>>,
    pub controls: Vec<DVector<f64>>,
    pub durations: Vec<f64>,
    /// First and last node of each phase.
    pub phase_nodes: Vec<(usize, usize)>,
    pub phase_contacts: Vec<Vec<usize>>,
    pub phase_friction: Vec<f64>,
    pub forces: Vec<NodeForces>,
}

impl TrajectorySolution {
    pub fn horizon(&self) -> f64 {
        *self.times.last().unwrap_or(&0.0)
    }

    pub fn n_phases(&self) -> usize {
        self.phase_nodes.len()
    }

    /// Start and end time of phase `p`.
    pub fn phase_window(&self, p: usize) -> (f64, f64) {
        let (a, b) = self.phase_nodes[p];
        (self.times[a], self.times[b])
    }

    /// Phase active at `t`; a transition instant belongs to the later phase.
    pub fn phase_at(&self, t: f64) -> usize {
        (0..self.n_phases())
            .rev()
            .find(|&p| t >= self.phase_window(p).0)
            .unwrap_or(0)
    }

    /// Interval `k` and weight `s` with `t = (1-s) t_k + s t_{k+1}`, clamped to the horizon.
    fn locate(&self, t: f64) -> (usize, f64) {
        let n = self.times.len();
        if n < 2 || t <= self.times[0] {
            return (0, 0.0);
        }
        if t >= self.times[n - 1] {
            return (n - 2, 1.0);
        }
        let k = self.times.partition_point(|&tk| tk <= t) - 1;
        let span = self.times[k + 1] - self.times[k];
        let s = if span > 0.0 { (t - self.times[k]) / span } else { 0.0 };
        (k, s)
    }

    fn lerp(values: &[DVector<f64>], k: usize, s: f64) -> DVector<f64> {
        if values.len() < 2 {
            return values[0].clone();
        }
        &values[k] * (1.0 - s) + &values[k + 1] * s
    }

    pub fn state_at(&self, t: f64) -> DVector<f64> {
        let (k, s) = self.locate(t);
        Self::lerp(&self.states, k, s)
    }

    pub fn control_at(&self, t: f64) -> DVector<f64> {
        let (k, s) = self.locate(t);
        Self::lerp(&self.controls, k, s)
    }
}
