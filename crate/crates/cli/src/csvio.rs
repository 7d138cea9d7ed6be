//! CSV writers and matching loaders.
//!
//! `trajectory.csv`: `t, phase, q_*, v_*, u_*`, one row per node.
//!
//! `rollout.csv`: `t, phase, drift, tracking_error, q_*, v_*, u_*`, then per
//! contact point `z_<c>, fx_<c>, fy_<c>, fz_<c>, cone_<c>`.
//!
//! `gains.csv`: `t, phase, row, k_*`, one row per control row per knot, with one
//! gain column per state coordinate.
//!
//! Numbers use the shortest representation that parses back to the same `f64`.

use std::io::{Read, Write};

use nalgebra::{DMatrix, DVector};
use projopt::simulate::RolloutLog;
use projopt::transcription::TrajectorySolution;
use projopt::tvlqr::GainSchedule;
use projopt::RobotModel;

use crate::error::{CliError, Result};

/// Names of the generalized coordinates.
pub fn coordinate_names(model: &RobotModel) -> Vec<String> {
    let mut names: Vec<String> = Vec::with_capacity(model.nv());
    if !model.fixed_base() {
        names.extend(["base_x", "base_y", "base_z", "base_roll", "base_pitch", "base_yaw"].map(String::from));
    }
    names.extend(model.joints().iter().map(|j| j.name.clone()));
    names
}

pub fn state_columns(model: &RobotModel) -> Vec<String> {
    let names = coordinate_names(model);
    let q = names.iter().map(|n| format!("q_{n}"));
    let v = names.iter().map(|n| format!("v_{n}"));
    q.chain(v).collect()
}

pub fn control_columns(model: &RobotModel) -> Vec<String> {
    let base = model.base_dofs();
    coordinate_names(model)[base..].iter().map(|n| format!("u_{n}")).collect()
}

fn num(v: f64) -> String {
    format!("{v}")
}

fn push_all(row: &mut Vec<String>, v: &DVector<f64>) {
    row.extend(v.iter().map(|&x| num(x)));
}

pub fn write_trajectory(out: impl Write, model: &RobotModel, traj: &TrajectorySolution) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    let mut header = vec!["t".to_owned(), "phase".to_owned()];
    header.extend(state_columns(model));
    header.extend(control_columns(model));
    w.write_record(&header)?;
    for (k, &t) in traj.times.iter().enumerate() {
        let mut row = vec![num(t), traj.phase_at(t).to_string()];
        push_all(&mut row, &traj.states[k]);
        push_all(&mut row, &traj.controls[k]);
        w.write_record(&row)?;
    }
    w.flush().map_err(|e| CliError::Csv(e.into()))?;
    Ok(())
}

pub fn write_rollout(out: impl Write, model: &RobotModel, log: &RolloutLog) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    let mut header: Vec<String> = ["t", "phase", "drift", "tracking_error"].map(String::from).to_vec();
    header.extend(state_columns(model));
    header.extend(control_columns(model));
    for c in model.contact_points() {
        for prefix in ["z", "fx", "fy", "fz", "cone"] {
            header.push(format!("{prefix}_{}", c.label));
        }
    }
    w.write_record(&header)?;
    for i in 0..log.len() {
        let mut row = vec![
            num(log.times[i]),
            log.phases[i].to_string(),
            num(log.drift[i]),
            num(log.tracking_error[i]),
        ];
        push_all(&mut row, &log.states[i]);
        push_all(&mut row, &log.controls[i]);
        for c in 0..model.contact_points().len() {
            let f = log.forces[i][c];
            for v in [log.heights[i][c], f[0], f[1], f[2], log.cone_margins[i][c]] {
                row.push(num(v));
            }
        }
        w.write_record(&row)?;
    }
    w.flush().map_err(|e| CliError::Csv(e.into()))?;
    Ok(())
}

pub fn write_gains(out: impl Write, model: &RobotModel, sched: &GainSchedule) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    let mut header = vec!["t".to_owned(), "phase".to_owned(), "row".to_owned()];
    header.extend(state_columns(model).iter().map(|c| format!("k_{c}")));
    w.write_record(&header)?;
    for (k, gain) in sched.gains.iter().enumerate() {
        for r in 0..gain.nrows() {
            let mut row = vec![num(sched.times[k]), sched.phases[k].to_string(), r.to_string()];
            row.extend(gain.row(r).iter().map(|&v| num(v)));
            w.write_record(&row)?;
        }
    }
    w.flush().map_err(|e| CliError::Csv(e.into()))?;
    Ok(())
}

/// A numeric CSV held column-wise.
#[derive(Debug, Clone, PartialEq)]
pub struct Table {
    pub header: Vec<String>,
    pub rows: Vec<Vec<f64>>,
}

impl Table {
    pub fn read(input: impl Read) -> Result<Table> {
        let mut r = csv::Reader::from_reader(input);
        let header: Vec<String> = r.headers()?.iter().map(str::to_owned).collect();
        let mut rows = Vec::new();
        for rec in r.records() {
            let rec = rec?;
            let row = rec
                .iter()
                .zip(&header)
                .map(|(s, col)| {
                    s.parse::<f64>().map_err(|e| CliError::Table {
                        column: col.clone(),
                        message: format!("`{s}`: {e}"),
                    })
                })
                .collect::<Result<Vec<_>>>()?;
            rows.push(row);
        }
        Ok(Table { header, rows })
    }

    pub fn index(&self, column: &str) -> Result<usize> {
        self.header.iter().position(|h| h == column).ok_or_else(|| CliError::Table {
            column: column.to_owned(),
            message: "missing".into(),
        })
    }

    pub fn column(&self, column: &str) -> Result<Vec<f64>> {
        let i = self.index(column)?;
        Ok(self.rows.iter().map(|r| r[i]).collect())
    }

    /// Rows restricted to `columns`, in that order.
    pub fn vectors(&self, columns: &[String]) -> Result<Vec<DVector<f64>>> {
        let idx = columns.iter().map(|c| self.index(c)).collect::<Result<Vec<_>>>()?;
        Ok(self
            .rows
            .iter()
            .map(|r| DVector::from_iterator(idx.len(), idx.iter().map(|&i| r[i])))
            .collect())
    }

    fn indices(&self, column: &str) -> Result<Vec<usize>> {
        self.column(column)?
            .into_iter()
            .map(|v| {
                if v >= 0.0 && v.fract() == 0.0 {
                    Ok(v as usize)
                } else {
                    Err(CliError::Table {
                        column: column.to_owned(),
                        message: format!("{v} is not an index"),
                    })
                }
            })
            .collect()
    }
}

/// Node data read back from `trajectory.csv`.
#[derive(Debug, Clone, PartialEq)]
pub struct TrajectoryTable {
    pub times: Vec<f64>,
    pub phases: Vec<usize>,
    pub states: Vec<DVector<f64>>,
    pub controls: Vec<DVector<f64>>,
}

pub fn read_trajectory(input: impl Read, model: &RobotModel) -> Result<TrajectoryTable> {
    let t = Table::read(input)?;
    Ok(TrajectoryTable {
        times: t.column("t")?,
        phases: t.indices("phase")?,
        states: t.vectors(&state_columns(model))?,
        controls: t.vectors(&control_columns(model))?,
    })
}

/// Rollout series read back from `rollout.csv`.
#[derive(Debug, Clone, PartialEq)]
pub struct RolloutTable {
    pub times: Vec<f64>,
    pub phases: Vec<usize>,
    pub drift: Vec<f64>,
    pub tracking_error: Vec<f64>,
    pub states: Vec<DVector<f64>>,
    pub controls: Vec<DVector<f64>>,
    pub heights: Vec<Vec<f64>>,
    pub forces: Vec<Vec<[f64; 3]>>,
    pub cone_margins: Vec<Vec<f64>>,
}

impl RolloutTable {
    pub fn from_log(log: &RolloutLog) -> Self {
        RolloutTable {
            times: log.times.clone(),
            phases: log.phases.clone(),
            drift: log.drift.clone(),
            tracking_error: log.tracking_error.clone(),
            states: log.states.clone(),
            controls: log.controls.clone(),
            heights: log.heights.clone(),
            forces: log.forces.clone(),
            cone_margins: log.cone_margins.clone(),
        }
    }
}

pub fn read_rollout(input: impl Read, model: &RobotModel) -> Result<RolloutTable> {
    let t = Table::read(input)?;
    let labels: Vec<&str> = model.contact_points().iter().map(|c| c.label.as_str()).collect();
    let per_contact = |prefix: &str| -> Result<Vec<Vec<f64>>> {
        let cols = labels.iter().map(|l| format!("{prefix}_{l}")).collect::<Vec<_>>();
        Ok(t.vectors(&cols)?.into_iter().map(|v| v.iter().copied().collect()).collect())
    };
    let (fx, fy, fz) = (per_contact("fx")?, per_contact("fy")?, per_contact("fz")?);
    let forces = (0..t.rows.len())
        .map(|i| (0..labels.len()).map(|c| [fx[i][c], fy[i][c], fz[i][c]]).collect())
        .collect();
    Ok(RolloutTable {
        times: t.column("t")?,
        phases: t.indices("phase")?,
        drift: t.column("drift")?,
        tracking_error: t.column("tracking_error")?,
        states: t.vectors(&state_columns(model))?,
        controls: t.vectors(&control_columns(model))?,
        heights: per_contact("z")?,
        forces,
        cone_margins: per_contact("cone")?,
    })
}

/// Gain knots read back from `gains.csv`.
#[derive(Debug, Clone, PartialEq)]
pub struct GainTable {
    pub times: Vec<f64>,
    pub phases: Vec<usize>,
    pub gains: Vec<DMatrix<f64>>,
}

pub fn read_gains(input: impl Read, model: &RobotModel) -> Result<GainTable> {
    let t = Table::read(input)?;
    let cols: Vec<String> = state_columns(model).iter().map(|c| format!("k_{c}")).collect();
    let rows = t.vectors(&cols)?;
    let times = t.column("t")?;
    let phases = t.indices("phase")?;
    let index = t.indices("row")?;
    let mut out = GainTable {
        times: Vec::new(),
        phases: Vec::new(),
        gains: Vec::new(),
    };
    let mut i = 0;
    while i < rows.len() {
        if index[i] != 0 {
            return Err(CliError::Table {
                column: "row".into(),
                message: format!("knot starting at line {} does not begin with row 0", i + 2),
            });
        }
        let mut j = i;
        while j < rows.len() && index[j] == j - i && (j == i || index[j] != 0) {
            j += 1;
        }
        let mut k = DMatrix::zeros(j - i, cols.len());
        for (r, v) in rows[i..j].iter().enumerate() {
            k.row_mut(r).copy_from(&v.transpose());
        }
        out.times.push(times[i]);
        out.phases.push(phases[i]);
        out.gains.push(k);
        i = j;
    }
    Ok(out)
}
