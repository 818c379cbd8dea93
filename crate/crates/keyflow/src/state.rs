//! Core state, rotation, and trajectory types.
//!
//! Every state vector follows one canonical flat ordering: joint angles,
//! then root position (when the layout carries one), then the 6D root
//! orientation. The 6D orientation is the first two columns of a rotation
//! matrix, completed to a full frame by Gram-Schmidt on read.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub const ROT6D_DIM: usize = 3 + 3;
pub const ROOT_POS_DIM: usize = 3;

/// Declares how a flat state vector is laid out.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct StateLayout {
    pub joint_count: usize,
    pub has_root_position: bool,
}

impl StateLayout {
    pub fn new(joint_count: usize, has_root_position: bool) -> Result<Self> {
        if joint_count == 0 {
            return Err(Error::Layout("joint_count must be >= 1".into()));
        }
        Ok(Self {
            joint_count,
            has_root_position,
        })
    }

    pub fn total_dim(&self) -> usize {
        self.joint_count
            + if self.has_root_position {
                ROOT_POS_DIM
            } else {
                0
            }
            + ROT6D_DIM
    }

    /// Index of the first root-position channel in the flat ordering.
    pub fn root_pos_offset(&self) -> Option<usize> {
        self.has_root_position.then_some(self.joint_count)
    }

    /// Index of the first rot6d channel in the flat ordering.
    pub fn rot6d_offset(&self) -> usize {
        self.joint_count
            + if self.has_root_position {
                ROOT_POS_DIM
            } else {
                0
            }
    }
}

/// One frame of robot state.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StateVector {
    pub layout: StateLayout,
    pub joints: Vec<f64>,
    pub root_pos: Option<[f64; 3]>,
    pub root_rot6d: [f64; 6],
}

impl StateVector {
    pub fn new(
        layout: StateLayout,
        joints: Vec<f64>,
        root_pos: Option<[f64; 3]>,
        root_rot6d: [f64; 6],
    ) -> Result<Self> {
        if joints.len() != layout.joint_count {
            return Err(Error::Layout(format!(
                "expected {} joints, got {}",
                layout.joint_count,
                joints.len()
            )));
        }
        if root_pos.is_some() != layout.has_root_position {
            return Err(Error::Layout(
                "root_pos present iff layout.has_root_position".into(),
            ));
        }
        Ok(Self {
            layout,
            joints,
            root_pos,
            root_rot6d,
        })
    }

    /// A state with zero joints, zero position, identity orientation.
    pub fn zeros(layout: StateLayout) -> Self {
        Self {
            layout,
            joints: vec![0.0; layout.joint_count],
            root_pos: layout.has_root_position.then_some([0.0; 3]),
            root_rot6d: IDENTITY_ROT6D,
        }
    }

    /// Root rotation matrix, re-orthonormalized from the stored 6D channels.
    pub fn root_matrix(&self) -> Result<[[f64; 3]; 3]> {
        matrix_from_rot6d(&self.root_rot6d)
    }

    pub fn is_finite(&self) -> bool {
        self.joints.iter().all(|v| v.is_finite())
            && self.root_pos.iter().flatten().all(|v| v.is_finite())
            && self.root_rot6d.iter().all(|v| v.is_finite())
    }
}

pub const IDENTITY_ROT6D: [f64; 6] = [1.0, 0.0, 0.0, 0.0, 1.0, 0.0];

/// Flatten a state into the canonical ordering.
pub fn flatten(s: &StateVector) -> Vec<f64> {
    let mut out = Vec::with_capacity(s.layout.total_dim());
    out.extend_from_slice(&s.joints);
    if let Some(p) = s.root_pos {
        out.extend_from_slice(&p);
    }
    out.extend_from_slice(&s.root_rot6d);
    out
}

/// Rebuild a state from its canonical flat form.
pub fn unflatten(x: &[f64], layout: StateLayout) -> Result<StateVector> {
    if x.len() != layout.total_dim() {
        return Err(Error::Layout(format!(
            "expected {} dims for layout, got {}",
            layout.total_dim(),
            x.len()
        )));
    }
    let j = layout.joint_count;
    let joints = x[..j].to_vec();
    let (root_pos, r0) = if layout.has_root_position {
        (Some([x[j], x[j + 1], x[j + 2]]), j + 3)
    } else {
        (None, j)
    };
    let root_rot6d = [x[r0], x[r0 + 1], x[r0 + 2], x[r0 + 3], x[r0 + 4], x[r0 + 5]];
    Ok(StateVector {
        layout,
        joints,
        root_pos,
        root_rot6d,
    })
}

fn dot3(a: &[f64; 3], b: &[f64; 3]) -> f64 {
    a[0] * b[0] + a[1] * b[1] + a[2] * b[2]
}

fn cross3(a: &[f64; 3], b: &[f64; 3]) -> [f64; 3] {
    [
        a[1] * b[2] - a[2] * b[1],
        a[2] * b[0] - a[0] * b[2],
        a[0] * b[1] - a[1] * b[0],
    ]
}

fn norm3(a: &[f64; 3]) -> f64 {
    dot3(a, a).sqrt()
}

/// First two columns of a rotation matrix, concatenated column-major.
pub fn rot6d_from_matrix(r: &[[f64; 3]; 3]) -> Result<[f64; 6]> {
    let col = |j: usize| [r[0][j], r[1][j], r[2][j]];
    let (c0, c1, c2) = (col(0), col(1), col(2));
    for c in [&c0, &c1, &c2] {
        if (norm3(c) - 1.0).abs() > 1e-6 {
            return Err(Error::InvalidRotation(format!(
                "column norm {} deviates from 1",
                norm3(c)
            )));
        }
    }
    if dot3(&c0, &c1).abs() > 1e-6 || dot3(&c0, &c2).abs() > 1e-6 || dot3(&c1, &c2).abs() > 1e-6 {
        return Err(Error::InvalidRotation("columns not orthogonal".into()));
    }
    let det = dot3(&cross3(&c0, &c1), &c2);
    if (det - 1.0).abs() > 1e-6 {
        return Err(Error::InvalidRotation(format!("determinant {det} != +1")));
    }
    Ok([c0[0], c0[1], c0[2], c1[0], c1[1], c1[2]])
}

/// Gram-Schmidt completion of a 6D orientation into a rotation matrix.
pub fn matrix_from_rot6d(v: &[f64; 6]) -> Result<[[f64; 3]; 3]> {
    let a_raw = [v[0], v[1], v[2]];
    let b_raw = [v[3], v[4], v[5]];
    let na = norm3(&a_raw);
    if na <= 1e-9 {
        return Err(Error::InvalidRotation("first column near zero".into()));
    }
    let a = [a_raw[0] / na, a_raw[1] / na, a_raw[2] / na];
    let proj = dot3(&a, &b_raw);
    let b_orth = [
        b_raw[0] - proj * a[0],
        b_raw[1] - proj * a[1],
        b_raw[2] - proj * a[2],
    ];
    let nb = norm3(&b_orth);
    if nb <= 1e-9 {
        return Err(Error::InvalidRotation(
            "columns parallel or second column near zero".into(),
        ));
    }
    let b = [b_orth[0] / nb, b_orth[1] / nb, b_orth[2] / nb];
    let c = cross3(&a, &b);
    Ok([
        [a[0], b[0], c[0]],
        [a[1], b[1], c[1]],
        [a[2], b[2], c[2]],
    ])
}

/// 3x3 matrix product.
pub fn mat3_mul(a: &[[f64; 3]; 3], b: &[[f64; 3]; 3]) -> [[f64; 3]; 3] {
    let mut out = [[0.0; 3]; 3];
    for i in 0..3 {
        for j in 0..3 {
            out[i][j] = a[i][0] * b[0][j] + a[i][1] * b[1][j] + a[i][2] * b[2][j];
        }
    }
    out
}

pub fn mat3_transpose(a: &[[f64; 3]; 3]) -> [[f64; 3]; 3] {
    let mut out = [[0.0; 3]; 3];
    for i in 0..3 {
        for j in 0..3 {
            out[i][j] = a[j][i];
        }
    }
    out
}

pub fn mat3_apply(a: &[[f64; 3]; 3], v: &[f64; 3]) -> [f64; 3] {
    [
        a[0][0] * v[0] + a[0][1] * v[1] + a[0][2] * v[2],
        a[1][0] * v[0] + a[1][1] * v[1] + a[1][2] * v[2],
        a[2][0] * v[0] + a[2][1] * v[1] + a[2][2] * v[2],
    ]
}

/// Rotation about an arbitrary unit axis (Rodrigues).
pub fn axis_angle_matrix(axis: &[f64; 3], angle: f64) -> [[f64; 3]; 3] {
    let (s, c) = angle.sin_cos();
    let t = 1.0 - c;
    let [x, y, z] = *axis;
    [
        [t * x * x + c, t * x * y - s * z, t * x * z + s * y],
        [t * x * y + s * z, t * y * y + c, t * y * z - s * x],
        [t * x * z - s * y, t * y * z + s * x, t * z * z + c],
    ]
}

/// Geodesic angle between two rotations.
pub fn rotation_angle(r: &[[f64; 3]; 3]) -> f64 {
    let tr = r[0][0] + r[1][1] + r[2][2];
    ((tr - 1.0) / 2.0).clamp(-1.0, 1.0).acos()
}

/// K uniformly spaced state frames over a fixed horizon.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct KeyframeTrajectory {
    pub layout: StateLayout,
    pub horizon_s: f64,
    pub frames: Vec<StateVector>,
}

impl KeyframeTrajectory {
    pub fn new(layout: StateLayout, horizon_s: f64, frames: Vec<StateVector>) -> Result<Self> {
        if frames.len() < 2 {
            return Err(Error::Layout("keyframe count must be >= 2".into()));
        }
        if horizon_s <= 0.0 {
            return Err(Error::Config("horizon_s must be > 0".into()));
        }
        if frames.iter().any(|f| f.layout != layout) {
            return Err(Error::Layout("all frames must share one layout".into()));
        }
        Ok(Self {
            layout,
            horizon_s,
            frames,
        })
    }

    pub fn keyframe_count(&self) -> usize {
        self.frames.len()
    }
}

/// A finite motion sequence at a declared frame rate; the corpus unit.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MotionClip {
    pub fps: f64,
    pub layout: StateLayout,
    pub name: String,
    pub category: String,
    pub frames: Vec<StateVector>,
}

impl MotionClip {
    pub fn validate(&self) -> Result<()> {
        if self.fps <= 0.0 {
            return Err(Error::Config(format!("clip {}: fps must be > 0", self.name)));
        }
        if self.frames.len() < 2 {
            return Err(Error::Config(format!(
                "clip {}: needs at least 2 frames",
                self.name
            )));
        }
        if self.frames.iter().any(|f| f.layout != self.layout) {
            return Err(Error::Layout(format!(
                "clip {}: frame layout mismatch",
                self.name
            )));
        }
        Ok(())
    }

    pub fn len(&self) -> usize {
        self.frames.len()
    }

    pub fn is_empty(&self) -> bool {
        self.frames.is_empty()
    }

    pub fn duration_s(&self) -> f64 {
        self.frames.len() as f64 / self.fps
    }
}

/// On-disk form of [`MotionClip`]: frames as flat vectors.
#[derive(Debug, Clone, Serialize, Deserialize)]
struct ClipDocument {
    fps: f64,
    layout: StateLayout,
    name: String,
    category: String,
    frames: Vec<Vec<f64>>,
}

pub fn clip_to_json(clip: &MotionClip) -> String {
    let doc = ClipDocument {
        fps: clip.fps,
        layout: clip.layout,
        name: clip.name.clone(),
        category: clip.category.clone(),
        frames: clip.frames.iter().map(flatten).collect(),
    };
    serde_json::to_string(&doc).expect("clip serialization cannot fail")
}

pub fn clip_from_json(text: &str, path: &str) -> Result<MotionClip> {
    let doc: ClipDocument = serde_json::from_str(text).map_err(|e| Error::json(path, e))?;
    let frames = doc
        .frames
        .iter()
        .map(|f| unflatten(f, doc.layout))
        .collect::<Result<Vec<_>>>()?;
    let clip = MotionClip {
        fps: doc.fps,
        layout: doc.layout,
        name: doc.name,
        category: doc.category,
        frames,
    };
    clip.validate()?;
    Ok(clip)
}

pub fn write_clip(path: &std::path::Path, clip: &MotionClip) -> Result<()> {
    std::fs::write(path, clip_to_json(clip)).map_err(|e| Error::io(path.display().to_string(), e))
}

pub fn read_clip(path: &std::path::Path) -> Result<MotionClip> {
    let text = std::fs::read_to_string(path)
        .map_err(|e| Error::io(path.display().to_string(), e))?;
    clip_from_json(&text, &path.display().to_string())
}

/// Load every `*.json` clip in a directory, sorted by file name.
pub fn read_corpus_dir(dir: &std::path::Path) -> Result<Vec<MotionClip>> {
    let mut paths: Vec<_> = std::fs::read_dir(dir)
        .map_err(|e| Error::io(dir.display().to_string(), e))?
        .filter_map(|e| e.ok())
        .map(|e| e.path())
        .filter(|p| p.extension().is_some_and(|x| x == "json"))
        .collect();
    paths.sort();
    if paths.is_empty() {
        return Err(Error::EmptyCorpus(format!(
            "no .json clips in {}",
            dir.display()
        )));
    }
    paths.iter().map(|p| read_clip(p)).collect()
}

/// The middleware-visible observation: proprioceptive state, reference
/// command, and an optional discrete token code.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Observation {
    pub proprio: StateVector,
    pub command: StateVector,
    pub token: Option<Vec<u32>>,
}

impl Observation {
    pub fn new(proprio: StateVector, command: StateVector, token: Option<Vec<u32>>) -> Result<Self> {
        if proprio.layout != command.layout {
            return Err(Error::Layout(
                "proprio and command must share one layout".into(),
            ));
        }
        Ok(Self {
            proprio,
            command,
            token,
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn layout2(has_pos: bool) -> StateLayout {
        StateLayout::new(2, has_pos).unwrap()
    }

    #[test]
    fn layout_profiles_match_expected_dims() {
        let l38 = StateLayout::new(29, true).unwrap();
        let l35 = StateLayout::new(29, false).unwrap();
        assert_eq!(l38.total_dim(), 38);
        assert_eq!(l35.total_dim(), 35);
    }

    #[test]
    fn rot6d_of_identity() {
        let id = [[1.0, 0.0, 0.0], [0.0, 1.0, 0.0], [0.0, 0.0, 1.0]];
        assert_eq!(rot6d_from_matrix(&id).unwrap(), IDENTITY_ROT6D);
    }

    #[test]
    fn rot6d_of_z_quarter_turn() {
        // 90 degrees about z: columns (0,1,0) and (-1,0,0).
        let r = axis_angle_matrix(&[0.0, 0.0, 1.0], std::f64::consts::FRAC_PI_2);
        let v = rot6d_from_matrix(&r).unwrap();
        let expect = [0.0, 1.0, 0.0, -1.0, 0.0, 0.0];
        for (a, b) in v.iter().zip(expect) {
            assert!((a - b).abs() < 1e-12, "{v:?}");
        }
    }

    #[test]
    fn rot6d_rejects_non_orthonormal() {
        let bad = [[2.0, 0.0, 0.0], [0.0, 1.0, 0.0], [0.0, 0.0, 1.0]];
        assert!(rot6d_from_matrix(&bad).is_err());
        // Determinant -1 (reflection) must also be rejected.
        let refl = [[1.0, 0.0, 0.0], [0.0, 1.0, 0.0], [0.0, 0.0, -1.0]];
        assert!(rot6d_from_matrix(&refl).is_err());
    }

    #[test]
    fn gram_schmidt_identity_and_scale_invariance() {
        let m = matrix_from_rot6d(&[1.0, 0.0, 0.0, 0.0, 1.0, 0.0]).unwrap();
        let m_scaled = matrix_from_rot6d(&[2.0, 0.0, 0.0, 0.0, 3.0, 0.0]).unwrap();
        for i in 0..3 {
            for j in 0..3 {
                let id = if i == j { 1.0 } else { 0.0 };
                assert!((m[i][j] - id).abs() < 1e-12);
                assert!((m_scaled[i][j] - id).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn gram_schmidt_hand_example() {
        // (1,0,0, 1,1,0): b orthogonalizes to (0,1,0), c = (0,0,1).
        let m = matrix_from_rot6d(&[1.0, 0.0, 0.0, 1.0, 1.0, 0.0]).unwrap();
        for i in 0..3 {
            for j in 0..3 {
                let id = if i == j { 1.0 } else { 0.0 };
                assert!((m[i][j] - id).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn gram_schmidt_rejects_degenerate() {
        assert!(matrix_from_rot6d(&[0.0; 6]).is_err());
        assert!(matrix_from_rot6d(&[1.0, 0.0, 0.0, 2.0, 0.0, 0.0]).is_err());
    }

    #[test]
    fn flatten_ordering_examples() {
        let l = layout2(true);
        let s = StateVector::new(
            l,
            vec![0.1, 0.2],
            Some([1.0, 2.0, 3.0]),
            IDENTITY_ROT6D,
        )
        .unwrap();
        assert_eq!(
            flatten(&s),
            vec![0.1, 0.2, 1.0, 2.0, 3.0, 1.0, 0.0, 0.0, 0.0, 1.0, 0.0]
        );

        let l_np = layout2(false);
        let s_np = StateVector::new(l_np, vec![0.1, 0.2], None, IDENTITY_ROT6D).unwrap();
        assert_eq!(flatten(&s_np).len(), 8);
        assert_eq!(flatten(&s_np), vec![0.1, 0.2, 1.0, 0.0, 0.0, 0.0, 1.0, 0.0]);
    }

    #[test]
    fn unflatten_rejects_dimension_mismatch() {
        assert!(unflatten(&[0.0; 10], layout2(true)).is_err());
        assert!(unflatten(&[0.0; 9], layout2(false)).is_err());
    }

    #[test]
    fn clip_json_round_trip() {
        let l = layout2(true);
        let clip = MotionClip {
            fps: 50.0,
            layout: l,
            name: "demo".into(),
            category: "test".into(),
            frames: vec![StateVector::zeros(l), StateVector::zeros(l)],
        };
        let text = clip_to_json(&clip);
        let back = clip_from_json(&text, "mem").unwrap();
        assert_eq!(clip, back);
    }

    proptest! {
        #[test]
        fn flat_round_trip_both_profiles(
            vals in proptest::collection::vec(-10.0f64..10.0, 11),
            has_pos in any::<bool>(),
        ) {
            let layout = layout2(has_pos);
            let d = layout.total_dim();
            let x = &vals[..d];
            let s = unflatten(x, layout).unwrap();
            prop_assert_eq!(flatten(&s), x.to_vec());
        }

        #[test]
        fn gram_schmidt_always_orthonormal(v in proptest::collection::vec(-2.0f64..2.0, 6)) {
            let v6 = [v[0], v[1], v[2], v[3], v[4], v[5]];
            if let Ok(m) = matrix_from_rot6d(&v6) {
                let mt = mat3_transpose(&m);
                let prod = mat3_mul(&mt, &m);
                for i in 0..3 {
                    for j in 0..3 {
                        let id = if i == j { 1.0 } else { 0.0 };
                        prop_assert!((prod[i][j] - id).abs() < 1e-9);
                    }
                }
                // det +1 within 1e-9
                let det = m[0][0]*(m[1][1]*m[2][2]-m[1][2]*m[2][1])
                    - m[0][1]*(m[1][0]*m[2][2]-m[1][2]*m[2][0])
                    + m[0][2]*(m[1][0]*m[2][1]-m[1][1]*m[2][0]);
                prop_assert!((det - 1.0).abs() < 1e-9);
            }
        }

        #[test]
        fn rot6d_projection_idempotent(v in proptest::collection::vec(-2.0f64..2.0, 6)) {
            let v6 = [v[0], v[1], v[2], v[3], v[4], v[5]];
            if let Ok(m) = matrix_from_rot6d(&v6) {
                let r6 = rot6d_from_matrix(&m).unwrap();
                let m2 = matrix_from_rot6d(&r6).unwrap();
                let r6_again = rot6d_from_matrix(&m2).unwrap();
                for (a, b) in r6.iter().zip(r6_again.iter()) {
                    prop_assert!((a - b).abs() < 1e-12);
                }
            }
        }
    }
}
