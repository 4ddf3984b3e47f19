//! Run metrics and trajectory CSV export.

use std::io::{Read, Write};

use nalgebra::DVector;
use serde::{Deserialize, Serialize};

use crate::error::KinematicsError;
use crate::gp::{GpTrajectory, SupportState};
use crate::model::ChainModel;

/// Sampling step for metrics and exports, seconds.
pub const DEFAULT_SAMPLE_DT: f64 = 0.02;

#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct ManipStats {
    pub avg: f64,
    pub min: f64,
    pub max: f64,
}

/// Statistics of the per-sample joint speed `‖θ̇‖∞`, rad/s.
#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct VelocityStats {
    pub max: f64,
    pub avg: f64,
}

/// Seconds.
#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct Timing {
    pub total: f64,
    pub opt: f64,
    pub init: f64,
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct RunMetrics {
    pub manip: ManipStats,
    pub velocity: VelocityStats,
    pub time: Timing,
    pub solved: bool,
    pub iterations: usize,
}

pub fn manip_stats(values: &[f64]) -> ManipStats {
    if values.is_empty() {
        return ManipStats::default();
    }
    ManipStats {
        avg: values.iter().sum::<f64>() / values.len() as f64,
        min: values.iter().copied().fold(f64::INFINITY, f64::min),
        max: values.iter().copied().fold(f64::NEG_INFINITY, f64::max),
    }
}

pub fn velocity_stats<'a>(velocities: impl IntoIterator<Item = &'a DVector<f64>>) -> VelocityStats {
    let speeds: Vec<f64> = velocities.into_iter().map(|v| v.amax()).collect();
    if speeds.is_empty() {
        return VelocityStats::default();
    }
    VelocityStats {
        max: speeds.iter().copied().fold(0.0, f64::max),
        avg: speeds.iter().sum::<f64>() / speeds.len() as f64,
    }
}

/// Trajectory states and their manipulability at a fixed sampling step.
#[derive(Clone, Debug, PartialEq)]
pub struct Samples {
    pub states: Vec<SupportState>,
    pub m: Vec<f64>,
}

impl Samples {
    pub fn from_trajectory(model: &ChainModel, traj: &GpTrajectory, step: f64) -> Result<Self, KinematicsError> {
        Self::from_states(model, traj.sample(step))
    }

    pub fn from_states(model: &ChainModel, states: Vec<SupportState>) -> Result<Self, KinematicsError> {
        let m = states
            .iter()
            .map(|s| model.manipulability(&s.theta).map(|r| r.m))
            .collect::<Result<Vec<_>, _>>()?;
        Ok(Self { states, m })
    }

    pub fn manip(&self) -> ManipStats {
        manip_stats(&self.m)
    }

    pub fn velocity(&self) -> VelocityStats {
        velocity_stats(self.states.iter().map(|s| &s.theta_dot))
    }

    /// Metrics with zero timings and the given status.
    pub fn metrics(&self, solved: bool, iterations: usize) -> RunMetrics {
        RunMetrics {
            manip: self.manip(),
            velocity: self.velocity(),
            time: Timing::default(),
            solved,
            iterations,
        }
    }

    /// Writes `t,q1..qn,dq1..dqn,m` rows.
    pub fn write_csv<W: Write>(&self, out: W) -> Result<(), csv::Error> {
        let n = self.states.first().map_or(0, SupportState::dof);
        let mut w = csv::Writer::from_writer(out);
        let mut header = vec!["t".to_string()];
        header.extend((1..=n).map(|j| format!("q{j}")));
        header.extend((1..=n).map(|j| format!("dq{j}")));
        header.push("m".into());
        w.write_record(&header)?;
        for (s, m) in self.states.iter().zip(&self.m) {
            let mut row = Vec::with_capacity(2 * n + 2);
            row.push(fmt(s.time));
            row.extend(s.theta.iter().map(|v| fmt(*v)));
            row.extend(s.theta_dot.iter().map(|v| fmt(*v)));
            row.push(fmt(*m));
            w.write_record(&row)?;
        }
        w.flush()?;
        Ok(())
    }
}

/// Shortest representation that parses back to the same value.
fn fmt(v: f64) -> String {
    format!("{v:?}")
}

#[derive(Debug, thiserror::Error)]
pub enum CsvError {
    #[error(transparent)]
    Csv(#[from] csv::Error),
    #[error("bad trajectory CSV: {0}")]
    Format(String),
}

/// Reads states written by [`Samples::write_csv`]; the `m` column is
/// returned as stored.
pub fn read_csv<R: Read>(input: R) -> Result<(Vec<SupportState>, Vec<f64>), CsvError> {
    let mut r = csv::Reader::from_reader(input);
    let cols = r.headers()?.len();
    if cols < 4 || (cols - 2) % 2 != 0 {
        return Err(CsvError::Format(format!("unexpected column count {cols}")));
    }
    let n = (cols - 2) / 2;
    let mut states = Vec::new();
    let mut m = Vec::new();
    for rec in r.records() {
        let rec = rec?;
        let vals = rec
            .iter()
            .map(|f| f.parse::<f64>().map_err(|e| CsvError::Format(format!("{f:?}: {e}"))))
            .collect::<Result<Vec<_>, _>>()?;
        states.push(SupportState::new(
            DVector::from_column_slice(&vals[1..1 + n]),
            DVector::from_column_slice(&vals[1 + n..1 + 2 * n]),
            vals[0],
        ));
        m.push(vals[cols - 1]);
    }
    Ok((states, m))
}
