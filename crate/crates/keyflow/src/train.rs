//! Mini-batch training of the velocity field and checkpoint IO.

use ndarray::Array2;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::dataset::Dataset;
use crate::error::{Error, Result};
use crate::model::{weighted_velocity_loss, FlowArch, FlowBatch, FlowModel};
use crate::nn::{cosine_lr, AdamW};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub steps: u64,
    pub batch_size: usize,
    /// Peak learning rate, decayed to zero on a cosine schedule.
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub weight_decay: f64,
    pub seed: u64,
    /// Kinematics-aware loss weighting; `false` trains with unit weights.
    pub use_weights: bool,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            steps: 2000,
            batch_size: 32,
            lr: 1e-4,
            beta1: 0.9,
            beta2: 0.999,
            weight_decay: 1e-4,
            seed: 0,
            use_weights: true,
        }
    }
}

#[derive(Debug, Clone)]
pub struct TrainReport {
    pub model: FlowModel,
    pub loss_history: Vec<f64>,
}

/// Train a fresh velocity-field model on the dataset.
pub fn train_flow(arch: FlowArch, dataset: &Dataset, cfg: &TrainConfig) -> Result<TrainReport> {
    if dataset.tuples.is_empty() {
        return Err(Error::EmptyCorpus("dataset has no tuples".into()));
    }
    if cfg.batch_size == 0 || cfg.steps == 0 {
        return Err(Error::Config("steps and batch_size must be positive".into()));
    }
    let mut model = FlowModel::init(
        arch,
        dataset.layout,
        dataset.keyframes,
        dataset.horizon_s,
        dataset.norm.clone(),
        cfg.seed,
    )?;

    // Pre-normalize residual targets once.
    let x0_all: Vec<Array2<f64>> = dataset
        .tuples
        .iter()
        .map(|t| dataset.norm.normalize_rows(&t.residual_target))
        .collect();
    let unit_weights = Array2::<f64>::ones((dataset.keyframes, dataset.layout.total_dim()));

    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    rng.set_stream(0x5452_41494e_u64); // training stream

    let mut opt = AdamW::new(cfg.beta1, cfg.beta2, cfg.weight_decay);
    let mut history = Vec::with_capacity(cfg.steps as usize);
    let n = dataset.tuples.len();
    let k = dataset.keyframes;
    let d = dataset.layout.total_dim();

    for step in 0..cfg.steps {
        let mut batch = FlowBatch {
            x0: Vec::with_capacity(cfg.batch_size),
            cond: Vec::with_capacity(cfg.batch_size),
            weights: Vec::with_capacity(cfg.batch_size),
            t: Vec::with_capacity(cfg.batch_size),
            x1: Vec::with_capacity(cfg.batch_size),
        };
        for _ in 0..cfg.batch_size {
            let i = rng.random_range(0..n);
            batch.x0.push(x0_all[i].clone());
            batch.cond.push(dataset.tuples[i].cond.clone());
            batch.weights.push(if cfg.use_weights {
                dataset.tuples[i].weights.clone()
            } else {
                unit_weights.clone()
            });
            batch.t.push(rng.random_range(0.0..1.0));
            let x1 = Array2::from_shape_fn((k, d), |_| StandardNormal.sample(&mut rng));
            batch.x1.push(x1);
        }

        let (loss, grad) = weighted_velocity_loss(&model.params, arch, &batch).map_err(|e| {
            Error::Divergence(format!("step {step}: {e}; check data scaling and lr"))
        })?;
        history.push(loss);

        let lr = cosine_lr(cfg.lr, step, cfg.steps);
        let g_tensors = grad.tensors();
        let mut p_tensors = model.params.tensors_mut();
        opt.step(&mut p_tensors, &g_tensors, lr);
    }

    Ok(TrainReport {
        model,
        loss_history: history,
    })
}

pub const CHECKPOINT_VERSION: u32 = 1;

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct Checkpoint {
    pub format_version: u32,
    pub model: FlowModel,
    /// Resolved run configuration and build identifier, echoed verbatim.
    pub config_echo: serde_json::Value,
}

pub fn write_checkpoint(
    path: &std::path::Path,
    model: &FlowModel,
    config_echo: serde_json::Value,
) -> Result<()> {
    let doc = Checkpoint {
        format_version: CHECKPOINT_VERSION,
        model: model.clone(),
        config_echo,
    };
    let text = serde_json::to_string(&doc).expect("checkpoint serialization cannot fail");
    std::fs::write(path, text).map_err(|e| Error::io(path.display().to_string(), e))
}

pub fn read_checkpoint(path: &std::path::Path) -> Result<Checkpoint> {
    let text = std::fs::read_to_string(path)
        .map_err(|e| Error::io(path.display().to_string(), e))?;
    let doc: Checkpoint =
        serde_json::from_str(&text).map_err(|e| Error::json(path.display().to_string(), e))?;
    if doc.format_version != CHECKPOINT_VERSION {
        return Err(Error::Config(format!(
            "checkpoint version {} unsupported (expected {})",
            doc.format_version, CHECKPOINT_VERSION
        )));
    }
    Ok(doc)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dataset::{build_dataset, DatasetConfig};
    use crate::kinematics::default_chain;
    use crate::state::StateLayout;
    use crate::synth::{default_corpus_spec, generate_corpus};

    fn small_dataset(seed: u64) -> Dataset {
        let layout = StateLayout::new(5, true).unwrap();
        let mut spec = default_corpus_spec(layout, seed);
        for fam in &mut spec.families {
            fam.clip_count = 1;
            fam.duration_s = 2.0;
        }
        let corpus = generate_corpus(&spec).unwrap();
        build_dataset(&corpus, &default_chain(), &DatasetConfig::default(), seed).unwrap()
    }

    #[test]
    fn zero_lr_keeps_parameters() {
        let ds = small_dataset(1);
        let cfg = TrainConfig {
            steps: 5,
            batch_size: 4,
            lr: 0.0,
            seed: 3,
            ..TrainConfig::default()
        };
        let report = train_flow(FlowArch::tiny(), &ds, &cfg).unwrap();
        let fresh = FlowModel::init(
            FlowArch::tiny(),
            ds.layout,
            ds.keyframes,
            ds.horizon_s,
            ds.norm.clone(),
            cfg.seed,
        )
        .unwrap();
        assert_eq!(report.model.params, fresh.params);
    }

    #[test]
    fn fixed_seed_reproduces_loss_curve() {
        let ds = small_dataset(2);
        let cfg = TrainConfig {
            steps: 8,
            batch_size: 4,
            lr: 1e-3,
            seed: 11,
            ..TrainConfig::default()
        };
        let a = train_flow(FlowArch::tiny(), &ds, &cfg).unwrap();
        let b = train_flow(FlowArch::tiny(), &ds, &cfg).unwrap();
        assert_eq!(a.loss_history, b.loss_history);
        assert_eq!(a.model.params, b.model.params);
    }

    #[test]
    fn overfits_single_tuple() {
        let mut ds = small_dataset(3);
        ds.tuples.truncate(1);
        let cfg = TrainConfig {
            steps: 2000,
            batch_size: 8,
            lr: 1e-3,
            seed: 5,
            ..TrainConfig::default()
        };
        let report = train_flow(FlowArch::tiny(), &ds, &cfg).unwrap();
        let head: f64 =
            report.loss_history[..50].iter().sum::<f64>() / 50.0;
        let tail: f64 =
            report.loss_history[report.loss_history.len() - 50..].iter().sum::<f64>() / 50.0;
        assert!(
            tail < 0.1 * head,
            "loss did not memorize one tuple: {head} -> {tail}"
        );
    }

    #[test]
    fn checkpoint_round_trip() {
        let ds = small_dataset(4);
        let cfg = TrainConfig {
            steps: 3,
            batch_size: 2,
            seed: 7,
            ..TrainConfig::default()
        };
        let report = train_flow(FlowArch::tiny(), &ds, &cfg).unwrap();
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("model.json");
        write_checkpoint(&path, &report.model, serde_json::json!({"run": "test"})).unwrap();
        let back = read_checkpoint(&path).unwrap();
        assert_eq!(back.model, report.model);
        assert_eq!(back.format_version, CHECKPOINT_VERSION);
    }
}
