//! Forward kinematics over an open revolute chain and the pose-dependent
//! Jacobian-magnitude weights derived from it.
//!
//! Each link carries one revolute joint located at its parent's origin:
//! the link origin is `o_parent + R_parent * Rot(axis, q) * offset` and the
//! link frame is `R_parent * Rot(axis, q)`. Tracked bodies are the link
//! origins used for weighting and metrics.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::state::{self, StateVector};

pub const DEFAULT_FD_STEP: f64 = 1e-5;
pub const DEFAULT_WEIGHT_FLOOR: f64 = 0.05;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LinkSpec {
    /// Parent link index; -1 attaches to the floating base.
    pub parent: i32,
    /// Unit rotation axis in the joint frame.
    pub axis: [f64; 3],
    /// Rigid offset from the joint to the link origin, meters.
    pub offset: [f64; 3],
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ChainSpec {
    pub links: Vec<LinkSpec>,
    /// Link indices whose Cartesian positions are tracked.
    pub tracked: Vec<usize>,
}

impl ChainSpec {
    pub fn validate(&self) -> Result<()> {
        for (i, link) in self.links.iter().enumerate() {
            if link.parent >= i as i32 {
                return Err(Error::Config(format!(
                    "link {i} parent {} does not precede it",
                    link.parent
                )));
            }
            if link.parent < -1 {
                return Err(Error::Config(format!("link {i} has invalid parent")));
            }
            let n = (link.axis[0].powi(2) + link.axis[1].powi(2) + link.axis[2].powi(2)).sqrt();
            if (n - 1.0).abs() > 1e-9 {
                return Err(Error::Config(format!(
                    "link {i} axis norm {n} deviates from 1"
                )));
            }
        }
        for &b in &self.tracked {
            if b >= self.links.len() {
                return Err(Error::Config(format!("tracked body {b} out of range")));
            }
        }
        if self.tracked.is_empty() {
            return Err(Error::Config("tracked body set must be non-empty".into()));
        }
        Ok(())
    }

    pub fn joint_count(&self) -> usize {
        self.links.len()
    }

    /// Total reach along offsets; used to scale thresholds to the embodiment.
    pub fn reach(&self) -> f64 {
        self.links
            .iter()
            .map(|l| (l.offset[0].powi(2) + l.offset[1].powi(2) + l.offset[2].powi(2)).sqrt())
            .sum()
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("chain serialization cannot fail")
    }

    pub fn from_json(text: &str, path: &str) -> Result<Self> {
        let spec: ChainSpec = serde_json::from_str(text).map_err(|e| Error::json(path, e))?;
        spec.validate()?;
        Ok(spec)
    }
}

/// World positions of every link origin.
fn all_body_positions(chain: &ChainSpec, s: &StateVector) -> Result<Vec<[f64; 3]>> {
    if chain.joint_count() != s.layout.joint_count {
        return Err(Error::Layout(format!(
            "chain has {} joints, state layout has {}",
            chain.joint_count(),
            s.layout.joint_count
        )));
    }
    let root_rot = s.root_matrix()?;
    let root_pos = s.root_pos.unwrap_or([0.0; 3]);

    let mut pos = Vec::with_capacity(chain.links.len());
    let mut rot = Vec::with_capacity(chain.links.len());
    for (i, link) in chain.links.iter().enumerate() {
        let (p_parent, r_parent) = if link.parent < 0 {
            (root_pos, root_rot)
        } else {
            let pi = link.parent as usize;
            (pos[pi], rot[pi])
        };
        let joint_rot = state::axis_angle_matrix(&link.axis, s.joints[i]);
        let r = state::mat3_mul(&r_parent, &joint_rot);
        let o = state::mat3_apply(&r, &link.offset);
        pos.push([p_parent[0] + o[0], p_parent[1] + o[1], p_parent[2] + o[2]]);
        rot.push(r);
    }
    Ok(pos)
}

/// World positions of the tracked bodies.
pub fn forward_kinematics(chain: &ChainSpec, s: &StateVector) -> Result<Vec<[f64; 3]>> {
    let all = all_body_positions(chain, s)?;
    Ok(chain.tracked.iter().map(|&b| all[b]).collect())
}

/// Raw per-dimension weights: summed squared body-position sensitivity,
/// central-differenced with step `delta`. Root-position channels get the
/// analytic value (one unit Jacobian per tracked body). No normalization
/// or clamping happens here; see [`normalize_weight_batch`].
pub fn kinematic_weights_raw(chain: &ChainSpec, s: &StateVector, delta: f64) -> Result<Vec<f64>> {
    if delta <= 0.0 {
        return Err(Error::Config("finite-difference step must be > 0".into()));
    }
    let layout = s.layout;
    let d = layout.total_dim();
    let flat = state::flatten(s);
    let mut weights = vec![0.0; d];

    let body_count = chain.tracked.len() as f64;
    if let Some(off) = layout.root_pos_offset() {
        for w in weights.iter_mut().skip(off).take(3) {
            *w = body_count;
        }
    }

    let eval = |x: &[f64]| -> Result<Vec<[f64; 3]>> {
        forward_kinematics(chain, &state::unflatten(x, layout)?)
    };

    for dim in 0..d {
        if layout
            .root_pos_offset()
            .is_some_and(|off| dim >= off && dim < off + 3)
        {
            continue; // analytic
        }
        let mut plus = flat.clone();
        let mut minus = flat.clone();
        plus[dim] += delta;
        minus[dim] -= delta;
        let p_plus = eval(&plus)?;
        let p_minus = eval(&minus)?;
        let mut sum = 0.0;
        for (a, b) in p_plus.iter().zip(p_minus.iter()) {
            for k in 0..3 {
                let g = (a[k] - b[k]) / (2.0 * delta);
                sum += g * g;
            }
        }
        weights[dim] = sum;
    }
    Ok(weights)
}

/// Normalize a batch of raw weight rows to unit mean per dimension, then
/// clamp below at `floor`. Dimensions whose batch mean is (numerically)
/// zero are left raw before clamping so the floor applies directly.
pub fn normalize_weight_batch(rows: &mut [Vec<f64>], floor: f64) -> Result<()> {
    let Some(first) = rows.first() else {
        return Ok(());
    };
    let d = first.len();
    let n = rows.len() as f64;
    for dim in 0..d {
        let mean: f64 = rows.iter().map(|r| r[dim]).sum::<f64>() / n;
        if mean > 1e-300 {
            for r in rows.iter_mut() {
                r[dim] /= mean;
            }
        }
    }
    for r in rows.iter_mut() {
        for w in r.iter_mut() {
            if *w < floor {
                *w = floor;
            }
        }
    }
    Ok(())
}

/// Planar two-link arm with unit link lengths; both bodies tracked.
pub fn two_link_arm() -> ChainSpec {
    ChainSpec {
        links: vec![
            LinkSpec {
                parent: -1,
                axis: [0.0, 0.0, 1.0],
                offset: [1.0, 0.0, 0.0],
            },
            LinkSpec {
                parent: 0,
                axis: [0.0, 0.0, 1.0],
                offset: [1.0, 0.0, 0.0],
            },
        ],
        tracked: vec![0, 1],
    }
}

/// Desk-scale default embodiment: a 5-joint 3D chain with 3 tracked bodies.
/// Roughly leg-torso-arm shaped so poses change body heights and reach.
pub fn default_chain() -> ChainSpec {
    ChainSpec {
        links: vec![
            LinkSpec {
                parent: -1,
                axis: [0.0, 1.0, 0.0],
                offset: [0.0, 0.0, 0.30],
            },
            LinkSpec {
                parent: 0,
                axis: [0.0, 1.0, 0.0],
                offset: [0.0, 0.0, 0.30],
            },
            LinkSpec {
                parent: 1,
                axis: [1.0, 0.0, 0.0],
                offset: [0.0, 0.0, 0.20],
            },
            LinkSpec {
                parent: 2,
                axis: [0.0, 1.0, 0.0],
                offset: [0.15, 0.0, 0.0],
            },
            LinkSpec {
                parent: 3,
                axis: [0.0, 0.0, 1.0],
                offset: [0.15, 0.0, 0.0],
            },
        ],
        tracked: vec![1, 2, 4],
    }
}
