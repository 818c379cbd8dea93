//! Training-tuple construction from a motion corpus.
//!
//! Receding-horizon segment sampling: starts at a regular stride, a
//! log-uniform segment length choosing the command frame, keyframes
//! covering only the first `H` frames, residuals against the clean start
//! state, channel-wise noise on the conditioning start state only, and
//! per-keyframe kinematic weights cached into the tuples.

use ndarray::Array2;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::kinematics::{self, ChainSpec};
use crate::state::{self, KeyframeTrajectory, MotionClip, StateLayout, StateVector};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DatasetConfig {
    /// Planning-horizon length in frames (H).
    pub horizon_frames: usize,
    /// Keyframes extracted per segment (K).
    pub keyframes: usize,
    /// Start-point stride in frames; 0 means H/2.
    pub stride: usize,
    /// Longest segment length in frames (len of the log-uniform support).
    pub seg_max_frames: usize,
    /// Channel-wise noise scales for the conditioning start state.
    pub noise_joints: f64,
    pub noise_root_pos: f64,
    pub noise_rot6d: f64,
    /// Central-difference step for the kinematic weights.
    pub fd_step: f64,
    /// Minimum weight after unit-mean normalization.
    pub weight_floor: f64,
    /// Std floor applied to the normalization statistics.
    pub std_floor: f64,
}

impl Default for DatasetConfig {
    fn default() -> Self {
        DatasetConfig {
            horizon_frames: 10,
            keyframes: 8,
            stride: 0,
            seg_max_frames: 20,
            noise_joints: 0.02,
            noise_root_pos: 0.01,
            noise_rot6d: 0.01,
            fd_step: kinematics::DEFAULT_FD_STEP,
            weight_floor: kinematics::DEFAULT_WEIGHT_FLOOR,
            std_floor: 1e-6,
        }
    }
}

impl DatasetConfig {
    pub fn effective_stride(&self) -> usize {
        if self.stride > 0 {
            self.stride
        } else {
            (self.horizon_frames / 2).max(1)
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.keyframes < 2 {
            return Err(Error::Config("keyframes must be >= 2".into()));
        }
        if self.horizon_frames < 2 {
            return Err(Error::Config("horizon_frames must be >= 2".into()));
        }
        if self.seg_max_frames < self.horizon_frames {
            return Err(Error::Config(
                "seg_max_frames must be >= horizon_frames".into(),
            ));
        }
        if self.noise_joints < 0.0 || self.noise_root_pos < 0.0 || self.noise_rot6d < 0.0 {
            return Err(Error::Config("noise scales must be >= 0".into()));
        }
        Ok(())
    }
}

/// Per-dimension normalization statistics, pooled over keyframes.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NormStats {
    pub mean: Vec<f64>,
    pub std: Vec<f64>,
}

impl NormStats {
    pub fn identity(dim: usize) -> Self {
        NormStats {
            mean: vec![0.0; dim],
            std: vec![1.0; dim],
        }
    }

    pub fn normalize_rows(&self, x: &Array2<f64>) -> Array2<f64> {
        let mut out = x.clone();
        for mut row in out.rows_mut() {
            for (d, v) in row.iter_mut().enumerate() {
                *v = (*v - self.mean[d]) / self.std[d];
            }
        }
        out
    }

    pub fn denormalize_rows(&self, x: &Array2<f64>) -> Array2<f64> {
        let mut out = x.clone();
        for mut row in out.rows_mut() {
            for (d, v) in row.iter_mut().enumerate() {
                *v = *v * self.std[d] + self.mean[d];
            }
        }
        out
    }

    pub fn normalize_vec(&self, x: &[f64]) -> Vec<f64> {
        x.iter()
            .enumerate()
            .map(|(d, v)| (v - self.mean[d]) / self.std[d])
            .collect()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainingTuple {
    /// `[noisy start state, clean reference command]`, length 2D.
    pub cond: Vec<f64>,
    /// Raw (un-normalized) residual targets, K x D; row 0 is zero.
    pub residual_target: Array2<f64>,
    /// Kinematic weights per keyframe, K x D, unit-mean normalized.
    pub weights: Array2<f64>,
    pub clip_id: usize,
    pub start_frame: usize,
    pub segment_len: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Dataset {
    pub layout: StateLayout,
    pub keyframes: usize,
    pub horizon_s: f64,
    pub config: DatasetConfig,
    pub seed: u64,
    pub norm: NormStats,
    pub tuples: Vec<TrainingTuple>,
    /// Clips skipped because they were shorter than the horizon.
    pub skipped: Vec<String>,
}

/// Log-uniform segment length on `[min_frames, max_frames]`.
pub fn sample_segment_length(
    min_frames: usize,
    max_frames: usize,
    rng: &mut impl Rng,
) -> Result<usize> {
    if min_frames == 0 || min_frames > max_frames {
        return Err(Error::Config(format!(
            "segment bounds [{min_frames}, {max_frames}] invalid"
        )));
    }
    if min_frames == max_frames {
        return Ok(min_frames);
    }
    let lo = (min_frames as f64).ln();
    let hi = (max_frames as f64).ln();
    let u = rng.random_range(lo..=hi);
    let l = u.exp().round() as usize;
    Ok(l.clamp(min_frames, max_frames))
}

/// K uniformly spaced keyframes over the first `horizon` frames.
pub fn extract_keyframes(
    clip: &MotionClip,
    start: usize,
    keyframes: usize,
    horizon: usize,
) -> Result<KeyframeTrajectory> {
    if keyframes < 2 {
        return Err(Error::Config("keyframes must be >= 2".into()));
    }
    if start + horizon > clip.len() {
        return Err(Error::OutOfRange(format!(
            "segment [{start}, {}) exceeds clip {} of length {}",
            start + horizon,
            clip.name,
            clip.len()
        )));
    }
    let frames: Vec<StateVector> = (0..keyframes)
        .map(|k| {
            let off =
                (k as f64 * (horizon - 1) as f64 / (keyframes - 1) as f64).round() as usize;
            clip.frames[start + off].clone()
        })
        .collect();
    KeyframeTrajectory::new(clip.layout, horizon as f64 / clip.fps, frames)
}

/// Keyframe offsets used by [`extract_keyframes`], exposed for inspection.
pub fn keyframe_offsets(keyframes: usize, horizon: usize) -> Vec<usize> {
    (0..keyframes)
        .map(|k| (k as f64 * (horizon - 1) as f64 / (keyframes - 1) as f64).round() as usize)
        .collect()
}

/// Row k = flatten(frames[k]) - flatten(anchor).
pub fn residualize(traj: &KeyframeTrajectory, anchor: &StateVector) -> Result<Array2<f64>> {
    if anchor.layout != traj.layout {
        return Err(Error::Layout("anchor layout mismatch".into()));
    }
    let base = state::flatten(anchor);
    let d = base.len();
    let mut out = Array2::zeros((traj.frames.len(), d));
    for (k, frame) in traj.frames.iter().enumerate() {
        let flat = state::flatten(frame);
        for dim in 0..d {
            out[[k, dim]] = flat[dim] - base[dim];
        }
    }
    Ok(out)
}

/// Reconstruct absolute keyframes from an anchor and a residual matrix.
pub fn deresidualize(
    residual: &Array2<f64>,
    anchor: &StateVector,
    horizon_s: f64,
) -> Result<KeyframeTrajectory> {
    let base = state::flatten(anchor);
    let frames = residual
        .rows()
        .into_iter()
        .map(|row| {
            let flat: Vec<f64> = row.iter().zip(base.iter()).map(|(r, b)| r + b).collect();
            state::unflatten(&flat, anchor.layout)
        })
        .collect::<Result<Vec<_>>>()?;
    KeyframeTrajectory::new(anchor.layout, horizon_s, frames)
}

/// Per-dimension noise scales in canonical flat order.
pub fn noise_scales(layout: StateLayout, cfg: &DatasetConfig) -> Vec<f64> {
    let mut s = vec![cfg.noise_joints; layout.total_dim()];
    if let Some(off) = layout.root_pos_offset() {
        for v in s.iter_mut().skip(off).take(3) {
            *v = cfg.noise_root_pos;
        }
    }
    for v in s.iter_mut().skip(layout.rot6d_offset()).take(6) {
        *v = cfg.noise_rot6d;
    }
    s
}

/// `p + eps`, `eps_d ~ N(0, sigma_d^2)`.
pub fn augment_state(p: &[f64], sigma: &[f64], rng: &mut impl Rng) -> Vec<f64> {
    p.iter()
        .zip(sigma.iter())
        .map(|(v, s)| {
            if *s > 0.0 {
                let n = Normal::new(0.0, *s).expect("sigma >= 0");
                v + n.sample(rng)
            } else {
                *v
            }
        })
        .collect()
}

fn clip_stream_rng(seed: u64, clip_id: usize) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(0x4453_0000_0000_0000u64 | clip_id as u64);
    rng
}

/// Build the training set. Deterministic for a given (corpus, config,
/// seed); per-clip work runs in parallel but collects in clip order.
pub fn build_dataset(
    corpus: &[MotionClip],
    chain: &ChainSpec,
    cfg: &DatasetConfig,
    seed: u64,
) -> Result<Dataset> {
    cfg.validate()?;
    if corpus.is_empty() {
        return Err(Error::EmptyCorpus("no clips supplied".into()));
    }
    let layout = corpus[0].layout;
    for clip in corpus {
        if clip.layout != layout {
            return Err(Error::Layout(format!(
                "clip {} layout differs from corpus head",
                clip.name
            )));
        }
    }
    if chain.joint_count() != layout.joint_count {
        return Err(Error::Layout(
            "chain joint count must match corpus layout".into(),
        ));
    }

    let h = cfg.horizon_frames;
    let stride = cfg.effective_stride();
    let sigma = noise_scales(layout, cfg);

    let mut skipped = Vec::new();
    let mut eligible: Vec<(usize, &MotionClip)> = Vec::new();
    for (i, clip) in corpus.iter().enumerate() {
        if clip.len() < h {
            skipped.push(clip.name.clone());
        } else {
            eligible.push((i, clip));
        }
    }
    if eligible.is_empty() {
        return Err(Error::EmptyCorpus(
            "every clip is shorter than the horizon".into(),
        ));
    }

    let per_clip: Vec<Result<Vec<TrainingTuple>>> = eligible
        .par_iter()
        .map(|(clip_id, clip)| {
            let mut rng = clip_stream_rng(seed, *clip_id);
            let mut tuples = Vec::new();
            let mut start = 0;
            while start + h <= clip.len() {
                let max_len = cfg.seg_max_frames.min(clip.len() - start);
                let seg = sample_segment_length(h, max_len, &mut rng)?;
                let traj = extract_keyframes(clip, start, cfg.keyframes, h)?;
                let anchor = &clip.frames[start];
                let residual = residualize(&traj, anchor)?;

                let command = state::flatten(&clip.frames[start + seg - 1]);
                let clean_start = state::flatten(anchor);
                let noisy_start = augment_state(&clean_start, &sigma, &mut rng);
                let mut cond = noisy_start;
                cond.extend_from_slice(&command);

                let mut weights = Array2::zeros((cfg.keyframes, layout.total_dim()));
                for (k, frame) in traj.frames.iter().enumerate() {
                    let w = kinematics::kinematic_weights_raw(chain, frame, cfg.fd_step)?;
                    for (dim, wv) in w.iter().enumerate() {
                        weights[[k, dim]] = *wv;
                    }
                }

                tuples.push(TrainingTuple {
                    cond,
                    residual_target: residual,
                    weights,
                    clip_id: *clip_id,
                    start_frame: start,
                    segment_len: seg,
                });
                start += stride;
            }
            Ok(tuples)
        })
        .collect();

    let mut tuples = Vec::new();
    for r in per_clip {
        tuples.extend(r?);
    }
    if tuples.is_empty() {
        return Err(Error::EmptyCorpus("no training tuples produced".into()));
    }

    // Unit-mean weight normalization pooled over every tuple and keyframe.
    let mut rows: Vec<Vec<f64>> = tuples
        .iter()
        .flat_map(|t| t.weights.rows().into_iter().map(|r| r.to_vec()))
        .collect();
    kinematics::normalize_weight_batch(&mut rows, cfg.weight_floor)?;
    let mut row_iter = rows.into_iter();
    for t in &mut tuples {
        for mut wrow in t.weights.rows_mut() {
            let normed = row_iter.next().expect("row count preserved");
            for (dst, src) in wrow.iter_mut().zip(normed.iter()) {
                *dst = *src;
            }
        }
    }

    let norm = compute_norm_stats(&tuples, layout.total_dim(), cfg.std_floor);
    let fps = eligible[0].1.fps;

    Ok(Dataset {
        layout,
        keyframes: cfg.keyframes,
        horizon_s: h as f64 / fps,
        config: cfg.clone(),
        seed,
        norm,
        tuples,
        skipped,
    })
}

fn compute_norm_stats(tuples: &[TrainingTuple], dim: usize, std_floor: f64) -> NormStats {
    let mut mean = vec![0.0; dim];
    let mut count = 0usize;
    for t in tuples {
        for row in t.residual_target.rows() {
            for (d, v) in row.iter().enumerate() {
                mean[d] += v;
            }
            count += 1;
        }
    }
    let n = count as f64;
    for m in mean.iter_mut() {
        *m /= n;
    }
    let mut var = vec![0.0; dim];
    for t in tuples {
        for row in t.residual_target.rows() {
            for (d, v) in row.iter().enumerate() {
                let dv = v - mean[d];
                var[d] += dv * dv;
            }
        }
    }
    let std = var
        .iter()
        .map(|v| (v / n).sqrt().max(std_floor))
        .collect();
    NormStats { mean, std }
}

pub fn write_dataset(path: &std::path::Path, ds: &Dataset) -> Result<()> {
    let text = serde_json::to_string(ds).expect("dataset serialization cannot fail");
    std::fs::write(path, text).map_err(|e| Error::io(path.display().to_string(), e))
}

pub fn read_dataset(path: &std::path::Path) -> Result<Dataset> {
    let text = std::fs::read_to_string(path)
        .map_err(|e| Error::io(path.display().to_string(), e))?;
    serde_json::from_str(&text).map_err(|e| Error::json(path.display().to_string(), e))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::kinematics::default_chain;
    use crate::state::IDENTITY_ROT6D;

    fn layout() -> StateLayout {
        StateLayout::new(5, true).unwrap()
    }

    fn constant_clip(n: usize, value: f64) -> MotionClip {
        let l = layout();
        let frame = StateVector::new(
            l,
            vec![value; 5],
            Some([0.0, 0.0, 0.6]),
            IDENTITY_ROT6D,
        )
        .unwrap();
        MotionClip {
            fps: 50.0,
            layout: l,
            name: format!("const_{value}"),
            category: "const".into(),
            frames: vec![frame; n],
        }
    }

    fn ramp_clip(n: usize) -> MotionClip {
        let l = layout();
        let frames = (0..n)
            .map(|i| {
                let v = i as f64 * 0.01;
                StateVector::new(
                    l,
                    vec![v, -v, 0.5 * v, v * v * 0.001, 0.3],
                    Some([v * 0.1, 0.0, 0.6]),
                    IDENTITY_ROT6D,
                )
                .unwrap()
            })
            .collect();
        MotionClip {
            fps: 50.0,
            layout: l,
            name: "ramp".into(),
            category: "ramp".into(),
            frames,
        }
    }

    #[test]
    fn segment_length_degenerate_interval() {
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        for _ in 0..100 {
            assert_eq!(sample_segment_length(10, 10, &mut rng).unwrap(), 10);
        }
    }

    #[test]
    fn segment_length_bounds_and_median() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let mut draws: Vec<usize> = (0..100_000)
            .map(|_| sample_segment_length(10, 100, &mut rng).unwrap())
            .collect();
        assert!(draws.iter().all(|&l| (10..=100).contains(&l)));
        draws.sort_unstable();
        let median = draws[draws.len() / 2] as f64;
        let expect = (10.0f64 * 100.0).sqrt(); // 31.62
        assert!(
            (median - expect).abs() / expect < 0.05,
            "median {median} vs {expect}"
        );
    }

    #[test]
    fn segment_length_rejects_inverted_bounds() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        assert!(sample_segment_length(20, 10, &mut rng).is_err());
    }

    #[test]
    fn keyframe_offsets_match_hand_rounding() {
        assert_eq!(keyframe_offsets(8, 10), vec![0, 1, 3, 4, 5, 6, 8, 9]);
        assert_eq!(keyframe_offsets(2, 2), vec![0, 1]);
    }

    #[test]
    fn extract_keyframes_contract() {
        let clip = ramp_clip(40);
        let traj = extract_keyframes(&clip, 4, 8, 10).unwrap();
        assert_eq!(traj.keyframe_count(), 8);
        assert!((traj.horizon_s - 0.2).abs() < 1e-12);
        for (k, off) in keyframe_offsets(8, 10).iter().enumerate() {
            assert_eq!(traj.frames[k], clip.frames[4 + off]);
        }
        assert!(extract_keyframes(&clip, 35, 8, 10).is_err());
    }

    #[test]
    fn constant_clip_keyframes_identical() {
        let clip = constant_clip(30, 0.7);
        let traj = extract_keyframes(&clip, 0, 8, 10).unwrap();
        for f in &traj.frames {
            assert_eq!(*f, clip.frames[0]);
        }
    }

    #[test]
    fn residualize_contract() {
        let clip = ramp_clip(40);
        let traj = extract_keyframes(&clip, 0, 4, 10).unwrap();
        let anchor = clip.frames[0].clone();
        let r = residualize(&traj, &anchor).unwrap();
        for v in r.row(0) {
            assert_eq!(*v, 0.0);
        }
        // Round trip is bit-exact.
        let back = deresidualize(&r, &anchor, traj.horizon_s).unwrap();
        for (a, b) in back.frames.iter().zip(traj.frames.iter()) {
            assert_eq!(state::flatten(a), state::flatten(b));
        }
        // Shifting the anchor in one joint shifts that column uniformly.
        let mut anchor2 = anchor.clone();
        anchor2.joints[1] += 0.25;
        let r2 = residualize(&traj, &anchor2).unwrap();
        for k in 0..traj.keyframe_count() {
            assert!((r2[[k, 1]] - (r[[k, 1]] - 0.25)).abs() < 1e-12);
            assert_eq!(r2[[k, 0]], r[[k, 0]]);
        }
    }

    #[test]
    fn augment_zero_noise_is_identity() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let p = vec![0.1, -0.5, 2.0];
        assert_eq!(augment_state(&p, &[0.0, 0.0, 0.0], &mut rng), p);
    }

    #[test]
    fn augment_noise_std_matches_sigma() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let p = vec![0.0, 1.0];
        let sigma = vec![0.02, 0.3];
        let n = 100_000;
        let mut sums = [0.0f64; 2];
        let mut sq = [0.0f64; 2];
        for _ in 0..n {
            let x = augment_state(&p, &sigma, &mut rng);
            for d in 0..2 {
                let delta = x[d] - p[d];
                sums[d] += delta;
                sq[d] += delta * delta;
            }
        }
        for d in 0..2 {
            let mean = sums[d] / n as f64;
            let std = (sq[d] / n as f64 - mean * mean).sqrt();
            assert!(
                (std - sigma[d]).abs() / sigma[d] < 0.03,
                "channel {d}: std {std} vs sigma {}",
                sigma[d]
            );
        }
    }

    #[test]
    fn constant_corpus_dataset() {
        let corpus = vec![constant_clip(40, 0.3)];
        let cfg = DatasetConfig::default();
        let ds = build_dataset(&corpus, &default_chain(), &cfg, 9).unwrap();
        for t in &ds.tuples {
            assert!(t.residual_target.iter().all(|v| *v == 0.0));
        }
        assert!(ds.norm.mean.iter().all(|m| m.abs() < 1e-15));
        assert!(ds.norm.std.iter().all(|s| *s == cfg.std_floor));
    }

    #[test]
    fn tuple_count_matches_counting_oracle() {
        let lengths = [40usize, 55, 10, 9];
        let corpus: Vec<MotionClip> = lengths.iter().map(|&n| ramp_clip(n)).collect();
        let cfg = DatasetConfig::default();
        let ds = build_dataset(&corpus, &default_chain(), &cfg, 5).unwrap();
        let h = cfg.horizon_frames;
        let s = cfg.effective_stride();
        let expect: usize = lengths
            .iter()
            .filter(|&&n| n >= h)
            .map(|&n| (n - h) / s + 1)
            .sum();
        assert_eq!(ds.tuples.len(), expect);
        assert_eq!(ds.skipped.len(), 1); // the 9-frame clip
        // Segment lengths never undershoot the horizon.
        assert!(ds.tuples.iter().all(|t| t.segment_len >= h));
    }

    #[test]
    fn residual_row0_always_zero_and_supervision_clean() {
        let corpus = vec![ramp_clip(60)];
        let cfg = DatasetConfig::default();
        let ds = build_dataset(&corpus, &default_chain(), &cfg, 5).unwrap();
        for t in &ds.tuples {
            assert!(t.residual_target.row(0).iter().all(|v| *v == 0.0));
            // cond's start state is noisy, residual anchored on clean state:
            // reconstructing keyframe 0 from the residual gives the clip
            // frame, not the noisy cond.
            let clean = state::flatten(&corpus[0].frames[t.start_frame]);
            let noisy = &t.cond[..clean.len()];
            assert!(noisy.iter().zip(clean.iter()).any(|(a, b)| a != b));
        }
    }

    #[test]
    fn normalized_residuals_are_standardized() {
        let spec = crate::synth::default_corpus_spec(layout(), 21);
        let corpus = crate::synth::generate_corpus(&spec).unwrap();
        let cfg = DatasetConfig::default();
        let ds = build_dataset(&corpus, &default_chain(), &cfg, 5).unwrap();
        let d = ds.layout.total_dim();
        let mut mean = vec![0.0; d];
        let mut var = vec![0.0; d];
        let mut count = 0usize;
        for t in &ds.tuples {
            let normed = ds.norm.normalize_rows(&t.residual_target);
            for row in normed.rows() {
                for (dim, v) in row.iter().enumerate() {
                    mean[dim] += v;
                }
                count += 1;
            }
        }
        for m in mean.iter_mut() {
            *m /= count as f64;
        }
        for t in &ds.tuples {
            let normed = ds.norm.normalize_rows(&t.residual_target);
            for row in normed.rows() {
                for (dim, v) in row.iter().enumerate() {
                    var[dim] += (v - mean[dim]).powi(2);
                }
            }
        }
        for dim in 0..d {
            if ds.norm.std[dim] <= cfg.std_floor {
                continue; // flooring edge case: motionless dimension
            }
            let std = (var[dim] / count as f64).sqrt();
            assert!(mean[dim].abs() < 1e-9, "dim {dim} mean {}", mean[dim]);
            assert!((std - 1.0).abs() < 1e-9, "dim {dim} std {std}");
        }
    }

    #[test]
    fn build_is_deterministic() {
        let spec = crate::synth::default_corpus_spec(layout(), 33);
        let corpus = crate::synth::generate_corpus(&spec).unwrap();
        let cfg = DatasetConfig::default();
        let a = build_dataset(&corpus, &default_chain(), &cfg, 7).unwrap();
        let b = build_dataset(&corpus, &default_chain(), &cfg, 7).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn weights_respect_floor_and_unit_mean() {
        let spec = crate::synth::default_corpus_spec(layout(), 13);
        let corpus = crate::synth::generate_corpus(&spec).unwrap();
        let cfg = DatasetConfig::default();
        let ds = build_dataset(&corpus, &default_chain(), &cfg, 2).unwrap();
        let d = ds.layout.total_dim();
        let mut mins = vec![f64::INFINITY; d];
        let mut sums = vec![0.0; d];
        let mut rows = 0usize;
        for t in &ds.tuples {
            for row in t.weights.rows() {
                for (dim, w) in row.iter().enumerate() {
                    mins[dim] = mins[dim].min(*w);
                    sums[dim] += w;
                }
                rows += 1;
            }
        }
        for dim in 0..d {
            assert!(mins[dim] >= cfg.weight_floor);
            let mean = sums[dim] / rows as f64;
            // Means stay at 1 unless the floor binds for that dimension.
            assert!(
                (mean - 1.0).abs() < 1e-9 || mins[dim] == cfg.weight_floor,
                "dim {dim} mean {mean}"
            );
        }
    }

    #[test]
    fn empty_corpus_rejected() {
        let cfg = DatasetConfig::default();
        assert!(build_dataset(&[], &default_chain(), &cfg, 0).is_err());
    }
}
