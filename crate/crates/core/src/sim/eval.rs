use std::io::{BufRead, Write};

use nalgebra::{Quaternion, Rotation3, UnitQuaternion};

use super::SimError;
use crate::lie::{Rotation, Vec3};
use crate::state::StateVector;

const STAMP_TOL: f64 = 1e-6;

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct FrameEstimate {
    pub state: StateVector,
    pub localized: bool,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Evaluation {
    pub mape_m: f64,
    pub recall_pct: f64,
    /// Per ground-truth frame; `None` when unmatched or not localized.
    pub ape: Vec<Option<f64>>,
}

/// Absolute position error in the shared world frame, no alignment.
pub fn evaluate(est: &[FrameEstimate], gt: &[StateVector]) -> Result<Evaluation, SimError> {
    let mut ape = Vec::with_capacity(gt.len());
    let mut j = 0;
    for g in gt {
        while j < est.len() && est[j].state.stamp < g.stamp - STAMP_TOL {
            j += 1;
        }
        let hit = est.get(j).filter(|e| (e.state.stamp - g.stamp).abs() <= STAMP_TOL && e.localized);
        ape.push(hit.map(|e| (e.state.position() - g.position()).norm()));
    }
    let got: Vec<f64> = ape.iter().flatten().copied().collect();
    if got.is_empty() {
        return Err(SimError::EmptyOverlap);
    }
    Ok(Evaluation {
        mape_m: got.iter().sum::<f64>() / got.len() as f64,
        recall_pct: 100.0 * got.len() as f64 / gt.len() as f64,
        ape,
    })
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct TumPose {
    pub stamp: f64,
    pub position: Vec3,
    pub rot_wb: Rotation,
}

impl From<&StateVector> for TumPose {
    fn from(x: &StateVector) -> Self {
        TumPose { stamp: x.stamp, position: x.position(), rot_wb: x.rot_wb() }
    }
}

/// `timestamp tx ty tz qx qy qz qw`, nine decimals, `qw ≥ 0`.
pub fn write_tum<W: Write>(mut w: W, poses: &[TumPose]) -> std::io::Result<()> {
    for p in poses {
        let q = UnitQuaternion::from_rotation_matrix(&Rotation3::from_matrix_unchecked(*p.rot_wb.matrix()));
        let mut q = *q.quaternion();
        if q.w < 0.0 {
            q = -q;
        }
        let t = p.position;
        writeln!(w, "{:.9} {:.9} {:.9} {:.9} {:.9} {:.9} {:.9} {:.9}", p.stamp, t.x, t.y, t.z, q.i, q.j, q.k, q.w)?;
    }
    Ok(())
}

pub fn read_tum<R: BufRead>(r: R) -> Result<Vec<TumPose>, SimError> {
    let mut out = Vec::new();
    for (n, line) in r.lines().enumerate() {
        let line = line.map_err(|e| SimError::Io(e.to_string()))?;
        let line = line.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let v: Vec<f64> = line
            .split_whitespace()
            .map(|s| s.parse::<f64>())
            .collect::<Result<_, _>>()
            .map_err(|e| SimError::Io(format!("tum line {}: {e}", n + 1)))?;
        if v.len() != 8 {
            return Err(SimError::Io(format!("tum line {}: expected 8 fields, got {}", n + 1, v.len())));
        }
        let q = UnitQuaternion::from_quaternion(Quaternion::new(v[7], v[4], v[5], v[6]));
        out.push(TumPose {
            stamp: v[0],
            position: Vec3::new(v[1], v[2], v[3]),
            rot_wb: Rotation::from_matrix_orthonormalized(*q.to_rotation_matrix().matrix()),
        });
    }
    Ok(out)
}
