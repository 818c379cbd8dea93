//! Deterministic synthetic motion corpora.
//!
//! Two clip families: band-limited multi-sine clips (frequencies snapped
//! to the DFT grid of the clip so spectra stay exactly inside the band)
//! and large-excursion clips that sweep joints, root height, and pitch
//! between extreme poses the way a lie-to-stand transition does.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::state::{self, MotionClip, StateLayout, StateVector};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FamilyKind {
    /// Sum of 1-3 sinusoids per channel inside the declared bands.
    Sine,
    /// Smoothstep sweep between two extreme poses plus banded jitter.
    Excursion,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FamilySpec {
    pub category: String,
    pub kind: FamilyKind,
    pub clip_count: usize,
    /// Frequency band in Hz; draws are snapped to the clip's DFT grid.
    pub freq_band_hz: (f64, f64),
    /// Joint amplitude band in radians; root channels reuse it scaled.
    pub amp_band: (f64, f64),
    pub duration_s: f64,
    pub fps: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CorpusSpec {
    pub layout: StateLayout,
    pub families: Vec<FamilySpec>,
    /// Nominal root height in meters when standing.
    pub root_height: f64,
    /// Fraction of the joint amplitude applied to root translation.
    pub root_amp_scale: f64,
    pub seed: u64,
}

impl CorpusSpec {
    pub fn validate(&self) -> Result<()> {
        for f in &self.families {
            if f.freq_band_hz.0 < 0.0 || f.freq_band_hz.1 < f.freq_band_hz.0 {
                return Err(Error::Config(format!(
                    "family {}: bad frequency band",
                    f.category
                )));
            }
            if f.amp_band.0 < 0.0 || f.amp_band.1 < f.amp_band.0 {
                return Err(Error::Config(format!(
                    "family {}: bad amplitude band",
                    f.category
                )));
            }
            if f.duration_s <= 0.0 || f.fps <= 0.0 {
                return Err(Error::Config(format!(
                    "family {}: duration and fps must be positive",
                    f.category
                )));
            }
        }
        Ok(())
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("spec serialization cannot fail")
    }

    pub fn from_json(text: &str, path: &str) -> Result<Self> {
        let spec: CorpusSpec = serde_json::from_str(text).map_err(|e| Error::json(path, e))?;
        spec.validate()?;
        Ok(spec)
    }
}

/// A compact default: two sine families plus one excursion family.
pub fn default_corpus_spec(layout: StateLayout, seed: u64) -> CorpusSpec {
    CorpusSpec {
        layout,
        families: vec![
            FamilySpec {
                category: "sway_slow".into(),
                kind: FamilyKind::Sine,
                clip_count: 4,
                freq_band_hz: (0.3, 0.8),
                amp_band: (0.15, 0.35),
                duration_s: 6.0,
                fps: 50.0,
            },
            FamilySpec {
                category: "sway_fast".into(),
                kind: FamilyKind::Sine,
                clip_count: 4,
                freq_band_hz: (0.8, 1.5),
                amp_band: (0.10, 0.25),
                duration_s: 6.0,
                fps: 50.0,
            },
            FamilySpec {
                category: "excursion".into(),
                kind: FamilyKind::Excursion,
                clip_count: 4,
                freq_band_hz: (0.3, 0.8),
                amp_band: (0.05, 0.12),
                duration_s: 6.0,
                fps: 50.0,
            },
        ],
        root_height: 0.6,
        root_amp_scale: 0.25,
        seed,
    }
}

struct SineChannel {
    offset: f64,
    terms: Vec<(f64, f64, f64)>, // (amplitude, frequency_hz, phase)
}

impl SineChannel {
    fn eval(&self, t: f64) -> f64 {
        self.offset
            + self
                .terms
                .iter()
                .map(|(a, f, p)| a * (2.0 * std::f64::consts::PI * f * t + p).sin())
                .sum::<f64>()
    }
}

/// Snap a frequency onto the DFT grid of a clip with `duration` seconds,
/// keeping at least one full period.
fn snap_to_grid(f: f64, duration: f64) -> f64 {
    let k = (f * duration).round().max(1.0);
    k / duration
}

fn draw_sine_channel(
    rng: &mut impl Rng,
    fam: &FamilySpec,
    offset_range: f64,
    amp_scale: f64,
) -> SineChannel {
    let n_terms = rng.random_range(1..=3usize);
    let amp_total = rng.random_range(fam.amp_band.0..=fam.amp_band.1) * amp_scale;
    let mut terms = Vec::with_capacity(n_terms);
    for _ in 0..n_terms {
        let f = snap_to_grid(
            rng.random_range(fam.freq_band_hz.0..=fam.freq_band_hz.1),
            fam.duration_s,
        );
        let phase = rng.random_range(0.0..(2.0 * std::f64::consts::PI));
        terms.push((amp_total / n_terms as f64, f, phase));
    }
    SineChannel {
        offset: rng.random_range(-offset_range..=offset_range),
        terms,
    }
}

fn smoothstep(u: f64) -> f64 {
    let u = u.clamp(0.0, 1.0);
    u * u * (3.0 - 2.0 * u)
}

fn generate_clip(
    spec: &CorpusSpec,
    fam: &FamilySpec,
    clip_index: usize,
    rng: &mut impl Rng,
) -> Result<MotionClip> {
    let layout = spec.layout;
    let n_frames = (fam.duration_s * fam.fps).round() as usize;
    let nj = layout.joint_count;

    let joints: Vec<SineChannel> = (0..nj)
        .map(|_| draw_sine_channel(rng, fam, 0.2, 1.0))
        .collect();
    let root_xy: Vec<SineChannel> = (0..2)
        .map(|_| draw_sine_channel(rng, fam, 0.05, spec.root_amp_scale))
        .collect();
    let root_z = draw_sine_channel(rng, fam, 0.02, spec.root_amp_scale * 0.5);
    let yaw = draw_sine_channel(rng, fam, 0.1, 1.0);
    let pitch = draw_sine_channel(rng, fam, 0.05, 0.4);

    // Excursion sweep: pose A to pose B through a smoothstep window.
    let excursion = if fam.kind == FamilyKind::Excursion {
        let rise = rng.random_range(0.35..0.55) * fam.duration_s;
        let start = rng.random_range(0.15..0.30) * fam.duration_s;
        let stand_to_lie = clip_index % 2 == 1;
        let pose_a: Vec<f64> = (0..nj).map(|_| rng.random_range(-1.3..=1.3)).collect();
        let pose_b: Vec<f64> = (0..nj).map(|_| rng.random_range(-0.3..=0.3)).collect();
        Some((start, rise, stand_to_lie, pose_a, pose_b))
    } else {
        None
    };

    let mut frames = Vec::with_capacity(n_frames);
    for i in 0..n_frames {
        let t = i as f64 / fam.fps;
        let mut q: Vec<f64> = joints.iter().map(|c| c.eval(t)).collect();
        let mut z = spec.root_height + root_z.eval(t);
        let mut pitch_v = pitch.eval(t);
        if let Some((start, rise, stand_to_lie, pose_a, pose_b)) = &excursion {
            let mut s = smoothstep((t - start) / rise);
            if *stand_to_lie {
                s = 1.0 - s;
            }
            for (j, qv) in q.iter_mut().enumerate() {
                *qv += (1.0 - s) * pose_a[j] + s * pose_b[j];
            }
            // Lying: low root, pitched ~80 degrees; standing: nominal.
            z = (0.18 + 0.82 * s) * (spec.root_height + root_z.eval(t));
            pitch_v += (1.0 - s) * 1.4;
        }
        let r = state::mat3_mul(
            &state::axis_angle_matrix(&[0.0, 0.0, 1.0], yaw.eval(t)),
            &state::axis_angle_matrix(&[0.0, 1.0, 0.0], pitch_v),
        );
        let rot6d = state::rot6d_from_matrix(&r)?;
        let root_pos = layout
            .has_root_position
            .then(|| [root_xy[0].eval(t), root_xy[1].eval(t), z]);
        frames.push(StateVector::new(layout, q, root_pos, rot6d)?);
    }

    Ok(MotionClip {
        fps: fam.fps,
        layout,
        name: format!("{}_{:03}", fam.category, clip_index),
        category: fam.category.clone(),
        frames,
    })
}

/// Deterministic corpus generation; clip `i` of family `f` draws from its
/// own RNG stream so per-clip parallelism cannot change the output.
pub fn generate_corpus(spec: &CorpusSpec) -> Result<Vec<MotionClip>> {
    spec.validate()?;
    let mut clips = Vec::new();
    for (fi, fam) in spec.families.iter().enumerate() {
        for ci in 0..fam.clip_count {
            let mut rng = clip_rng(spec.seed, fi, ci);
            clips.push(generate_clip(spec, fam, ci, &mut rng)?);
        }
    }
    if clips.is_empty() {
        return Err(Error::EmptyCorpus("corpus spec yields no clips".into()));
    }
    Ok(clips)
}

fn clip_rng(seed: u64, family_index: usize, clip_index: usize) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream((((family_index as u64) << 32) | clip_index as u64) + 1);
    rng
}

#[cfg(test)]
mod tests {
    use super::*;
    use rustfft::{num_complex::Complex, FftPlanner};

    fn test_layout() -> StateLayout {
        StateLayout::new(5, true).unwrap()
    }

    #[test]
    fn corpus_is_deterministic() {
        let spec = default_corpus_spec(test_layout(), 11);
        let a = generate_corpus(&spec).unwrap();
        let b = generate_corpus(&spec).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn clip_lengths_match_duration() {
        let spec = default_corpus_spec(test_layout(), 3);
        for clip in generate_corpus(&spec).unwrap() {
            assert_eq!(clip.len(), 300);
            assert!(clip.validate().is_ok());
        }
    }

    #[test]
    fn zero_amplitude_band_gives_constant_clips() {
        let mut spec = default_corpus_spec(test_layout(), 5);
        spec.families.truncate(1);
        spec.families[0].amp_band = (0.0, 0.0);
        // Offsets still vary per channel; constancy is across time.
        let mut fam = spec.families[0].clone();
        fam.category = "flat".into();
        spec.families = vec![fam];
        let clips = generate_corpus(&spec).unwrap();
        for clip in clips {
            let first = state::flatten(&clip.frames[0]);
            for f in &clip.frames {
                let x = state::flatten(f);
                for (a, b) in x.iter().zip(first.iter()) {
                    assert!((a - b).abs() < 1e-12);
                }
            }
        }
    }

    #[test]
    fn all_rot6d_channels_decode() {
        let spec = default_corpus_spec(test_layout(), 17);
        for clip in generate_corpus(&spec).unwrap() {
            for f in &clip.frames {
                assert!(f.root_matrix().is_ok());
            }
        }
    }

    #[test]
    fn sine_family_spectra_stay_in_band() {
        let mut spec = default_corpus_spec(test_layout(), 23);
        spec.families.truncate(1); // sway_slow, 0.3..0.8 Hz
        let band = spec.families[0].freq_band_hz;
        let duration = spec.families[0].duration_s;
        let clips = generate_corpus(&spec).unwrap();
        let clip = &clips[0];
        let n = clip.len();
        let mut planner = FftPlanner::<f64>::new();
        let fft = planner.plan_fft_forward(n);

        for joint in 0..clip.layout.joint_count {
            let mut buf: Vec<Complex<f64>> = clip
                .frames
                .iter()
                .map(|f| Complex::new(f.joints[joint], 0.0))
                .collect();
            fft.process(&mut buf);
            let mags: Vec<f64> = buf.iter().take(n / 2).map(|c| c.norm()).collect();
            let peak = mags.iter().cloned().fold(0.0, f64::max);
            // Band edges on the DFT grid, half-bin slack for the snap.
            let lo = (band.0 * duration).round() - 0.5;
            let hi = (band.1 * duration).round() + 0.5;
            for (k, m) in mags.iter().enumerate() {
                if k == 0 || *m < peak * 1e-6 {
                    continue; // DC offset or numerical dust
                }
                let kf = k as f64;
                assert!(
                    kf >= lo && kf <= hi,
                    "joint {joint}: spectral mass at bin {k} outside [{lo}, {hi}]"
                );
            }
        }
    }
}
