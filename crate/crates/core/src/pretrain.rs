//! Supervised pre-training of the graph encoder, shared MLP and value head
//! on execution-time prediction, plus weight transfer into an RL agent. The
//! policy head is never touched.

use crate::featurize::{featurize, FeatureLayout, GraphObservation, TagMap};
use crate::ir::{build_ast, enumerate_branches, Program};
use crate::memo::{host_fingerprint, MemoKey, MemoRecord, MemoStore};
use crate::neural::{ActorCritic, Adam, ModelError};
use crate::runtime::{Backend, BackendTag};
use crate::transforms::{canonical_key, Schedule, ScheduledProgram};
use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use std::sync::Arc;
use thiserror::Error;

/// Component prefixes that move from a pre-trained model into an agent.
pub const TRANSFERABLE: [&str; 4] = ["gat1", "gat2", "shared", "value"];

#[derive(Debug, Clone)]
pub struct PretrainSample {
    pub obs: GraphObservation,
    /// Execution time of the unscheduled program (backend units, > 0).
    pub target: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct PretrainConfig {
    pub epochs: usize,
    pub lr: f64,
    pub minibatch: usize,
    /// Standardize log-times to mean 0 / std 1 (raw seconds otherwise).
    pub normalize_log: bool,
    pub seed: u64,
}

impl Default for PretrainConfig {
    fn default() -> Self {
        PretrainConfig {
            epochs: 1500,
            lr: 1e-4,
            minibatch: 32,
            normalize_log: true,
            seed: 0,
        }
    }
}

#[derive(Debug, Error)]
pub enum PretrainError {
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error("non-finite loss at epoch {epoch}")]
    NonFinite { epoch: usize },
    #[error("no samples")]
    Empty,
}

#[derive(Debug, Clone)]
pub struct PretrainReport {
    pub loss_curve: Vec<f64>,
    pub target_mean: f64,
    pub target_std: f64,
    pub skipped: usize,
}

/// One sample per program: the graph of the unoptimized program (empty
/// schedule, leftmost branch focused) and its baseline time. Times come
/// through the memo store, so rebuilding a dataset is all hits.
pub fn build_pretrain_dataset(
    programs: &[Program],
    backend: &Arc<dyn Backend>,
    memo: &Arc<MemoStore>,
    layout: &FeatureLayout,
) -> (Vec<PretrainSample>, usize) {
    let mut samples = Vec::with_capacity(programs.len());
    let mut skipped = 0usize;
    for program in programs {
        let built = (|| -> Result<PretrainSample, String> {
            program.validate(&layout.caps).map_err(|e| e.to_string())?;
            let ast = build_ast(program);
            let branches = enumerate_branches(&ast);
            let obs = featurize(program, &ast, &branches, 0, &TagMap::new(), layout)
                .map_err(|e| e.to_string())?;
            let key = MemoKey {
                program_id: crate::memo::program_id(program),
                schedule_key: canonical_key(&Schedule::empty()),
                backend: backend.tag(),
            };
            let target = match memo.lookup(&key) {
                Some(rec) if rec.legal => rec.exec_time.expect("legal record has a time"),
                _ => {
                    let sp = ScheduledProgram::identity(program);
                    let t = backend
                        .time(program, &ast, &sp)
                        .map_err(|e| e.to_string())?;
                    let host = match backend.tag() {
                        BackendTag::Measured => Some(host_fingerprint()),
                        BackendTag::Synthetic => None,
                    };
                    memo.insert(key, MemoRecord::legal(t, backend.runs(), host))
                        .map_err(|e| e.to_string())?;
                    t
                }
            };
            Ok(PretrainSample { obs, target })
        })();
        match built {
            Ok(s) => samples.push(s),
            Err(e) => {
                eprintln!("pretrain: skipping `{}`: {e}", program.name);
                skipped += 1;
            }
        }
    }
    (samples, skipped)
}

/// MSE training of the value pathway on (graph -> time). Returns the
/// per-epoch loss curve; aborts on a non-finite loss.
pub fn pretrain(
    model: &mut ActorCritic,
    samples: &[PretrainSample],
    cfg: &PretrainConfig,
) -> Result<PretrainReport, PretrainError> {
    if samples.is_empty() {
        return Err(PretrainError::Empty);
    }
    let raw: Vec<f64> = samples
        .iter()
        .map(|s| if cfg.normalize_log { s.target.ln() } else { s.target })
        .collect();
    let mean: f64 = raw.iter().sum::<f64>() / raw.len() as f64;
    let var: f64 = raw.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / raw.len() as f64;
    let std = var.sqrt().max(1e-8);
    let targets: Vec<f64> = if cfg.normalize_log {
        raw.iter().map(|v| (v - mean) / std).collect()
    } else {
        raw.clone()
    };

    let mut optimizer = Adam::new(cfg.lr);
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut curve = Vec::with_capacity(cfg.epochs);
    for epoch in 0..cfg.epochs {
        let mut order: Vec<usize> = (0..samples.len()).collect();
        for i in (1..order.len()).rev() {
            let j = rng.random_range(0..=i);
            order.swap(i, j);
        }
        let mut epoch_loss = 0.0;
        for chunk in order.chunks(cfg.minibatch.max(1)) {
            let mut grads = model.zeros_like();
            let n = chunk.len() as f64;
            for &i in chunk {
                let (_, value, trace) = model.forward(&samples[i].obs)?;
                let err = value - targets[i];
                epoch_loss += err * err;
                let dlogits = vec![0.0; model.config.actions];
                model.backward(&trace, &dlogits, 2.0 * err / n, &mut grads);
            }
            optimizer.step_filtered(model, &grads, |name| !name.starts_with("policy"));
        }
        let loss = epoch_loss / samples.len() as f64;
        if !loss.is_finite() {
            return Err(PretrainError::NonFinite { epoch });
        }
        curve.push(loss);
    }
    Ok(PretrainReport {
        loss_curve: curve,
        target_mean: mean,
        target_std: std,
        skipped: 0,
    })
}

/// Copies GNN layers, shared MLP and value head from a pre-trained model
/// into an agent model (the policy head keeps its fresh initialization),
/// then verifies on probe graphs that value outputs transferred bit-wise.
pub fn transfer_weights(
    pretrained: &ActorCritic,
    agent_model: &mut ActorCritic,
) -> Result<(), ModelError> {
    if pretrained.config != agent_model.config {
        return Err(ModelError::Checkpoint(
            "architecture mismatch between pre-trained and agent models".into(),
        ));
    }
    let source: std::collections::HashMap<String, Vec<f64>> = pretrained
        .named_tensors()
        .into_iter()
        .map(|(n, _, d)| (n, d.to_vec()))
        .collect();
    for (name, dst) in agent_model.named_tensors_mut() {
        if TRANSFERABLE.iter().any(|p| name.starts_with(p)) {
            let src = source
                .get(&name)
                .ok_or_else(|| ModelError::Checkpoint(format!("missing tensor `{name}`")))?;
            if src.len() != dst.len() {
                return Err(ModelError::Checkpoint(format!("shape mismatch on `{name}`")));
            }
            dst.copy_from_slice(src);
        }
    }
    // probe: value outputs must match exactly before any RL update
    let mut rng = ChaCha8Rng::seed_from_u64(0x9d0b);
    for probe in 0..10 {
        let nodes = 2 + probe % 5;
        let obs = GraphObservation {
            x: (0..nodes)
                .map(|_| {
                    (0..pretrained.config.in_dim)
                        .map(|_| rng.random::<f64>() * 2.0 - 1.0)
                        .collect()
                })
                .collect(),
            edges: (1..nodes).map(|i| (i - 1, i)).collect(),
        };
        let (_, v_pre, _) = pretrained.forward(&obs)?;
        let (_, v_agent, _) = agent_model.forward(&obs)?;
        if v_pre.to_bits() != v_agent.to_bits() {
            return Err(ModelError::Checkpoint(format!(
                "transfer verification failed on probe {probe}: {v_pre} != {v_agent}"
            )));
        }
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::neural::{ModelConfig, ReadoutKind};
    use crate::runtime::SyntheticBackend;
    use crate::workloads::{generate_random_program, GeneratorConfig};

    fn tiny_model(seed: u64) -> ActorCritic {
        ActorCritic::new(
            ModelConfig {
                in_dim: 176,
                hidden: 8,
                heads: 2,
                actions: 5,
                readout: ReadoutKind::MeanMax,
            },
            seed,
        )
    }

    fn corpus(n: u64) -> Vec<Program> {
        (0..n)
            .map(|seed| {
                generate_random_program(&GeneratorConfig {
                    seed,
                    bound_choices: vec![8, 16, 32],
                    ..Default::default()
                })
            })
            .collect()
    }

    #[test]
    fn dataset_targets_are_reproducible_and_memoized() {
        let programs = corpus(6);
        let backend: Arc<dyn Backend> = Arc::new(SyntheticBackend::default());
        let memo = Arc::new(MemoStore::new());
        let layout = FeatureLayout::default();
        let (a, skipped) = build_pretrain_dataset(&programs, &backend, &memo, &layout);
        assert_eq!(skipped, 0);
        let before = memo.stats();
        let (b, _) = build_pretrain_dataset(&programs, &backend, &memo, &layout);
        let after = memo.stats();
        assert_eq!(after.hits - before.hits, 6, "rebuild is all memo hits");
        for (x, y) in a.iter().zip(&b) {
            assert_eq!(x.target.to_bits(), y.target.to_bits());
            assert_eq!(x.obs, y.obs);
        }
        // duplicate program yields an identical sample
        let mut dup = vec![programs[0].clone(), programs[0].clone()];
        dup.truncate(2);
        let (s, _) = build_pretrain_dataset(&dup, &backend, &memo, &layout);
        assert_eq!(s[0].target.to_bits(), s[1].target.to_bits());
    }

    #[test]
    fn constant_targets_reach_near_zero_loss() {
        let mut model = tiny_model(3);
        let obs_src = corpus(4);
        let backend: Arc<dyn Backend> = Arc::new(SyntheticBackend::default());
        let memo = Arc::new(MemoStore::new());
        let (mut samples, _) =
            build_pretrain_dataset(&obs_src, &backend, &memo, &FeatureLayout::default());
        for s in samples.iter_mut() {
            s.target = 42.0;
        }
        let report = pretrain(
            &mut model,
            &samples,
            &PretrainConfig {
                epochs: 150,
                lr: 1e-2,
                ..Default::default()
            },
        )
        .unwrap();
        let last = *report.loss_curve.last().unwrap();
        assert!(last < 1e-6, "constant targets should be absorbed, got {last}");
    }

    #[test]
    fn overfit_run_reaches_a_tenth_of_initial_loss() {
        let mut model = tiny_model(11);
        let programs = corpus(24);
        let backend: Arc<dyn Backend> = Arc::new(SyntheticBackend::default());
        let memo = Arc::new(MemoStore::new());
        let (samples, _) =
            build_pretrain_dataset(&programs, &backend, &memo, &FeatureLayout::default());
        let report = pretrain(
            &mut model,
            &samples,
            &PretrainConfig {
                epochs: 120,
                lr: 3e-3,
                ..Default::default()
            },
        )
        .unwrap();
        let first = report.loss_curve[0];
        let last = *report.loss_curve.last().unwrap();
        assert!(
            last <= 0.1 * first,
            "expected 10x loss reduction, got {first} -> {last}"
        );
        assert_eq!(report.loss_curve.len(), 120);
    }

    #[test]
    fn identical_inputs_give_identical_predictions() {
        let mut model = tiny_model(5);
        let programs = corpus(3);
        let backend: Arc<dyn Backend> = Arc::new(SyntheticBackend::default());
        let memo = Arc::new(MemoStore::new());
        let (samples, _) =
            build_pretrain_dataset(&programs, &backend, &memo, &FeatureLayout::default());
        pretrain(
            &mut model,
            &samples,
            &PretrainConfig {
                epochs: 5,
                ..Default::default()
            },
        )
        .unwrap();
        let (_, v1, _) = model.forward(&samples[0].obs).unwrap();
        let (_, v2, _) = model.forward(&samples[0].obs).unwrap();
        assert_eq!(v1.to_bits(), v2.to_bits());
    }

    #[test]
    fn transfer_copies_value_pathway_and_keeps_policy_fresh() {
        let mut pretrained = tiny_model(21);
        let programs = corpus(4);
        let backend: Arc<dyn Backend> = Arc::new(SyntheticBackend::default());
        let memo = Arc::new(MemoStore::new());
        let (samples, _) =
            build_pretrain_dataset(&programs, &backend, &memo, &FeatureLayout::default());
        let before_policy: Vec<Vec<f64>> = pretrained
            .named_tensors()
            .into_iter()
            .filter(|(n, _, _)| n.starts_with("policy"))
            .map(|(_, _, d)| d.to_vec())
            .collect();
        pretrain(
            &mut pretrained,
            &samples,
            &PretrainConfig {
                epochs: 10,
                lr: 1e-3,
                ..Default::default()
            },
        )
        .unwrap();
        // pre-training never touches the policy head
        let after_policy: Vec<Vec<f64>> = pretrained
            .named_tensors()
            .into_iter()
            .filter(|(n, _, _)| n.starts_with("policy"))
            .map(|(_, _, d)| d.to_vec())
            .collect();
        assert_eq!(before_policy, after_policy);

        let mut agent_model = tiny_model(99);
        transfer_weights(&pretrained, &mut agent_model).unwrap();
        // value pathway identical, policy head differs from the donor
        for (name, _, data) in agent_model.named_tensors() {
            let donor = pretrained
                .named_tensors()
                .into_iter()
                .find(|(n, _, _)| *n == name)
                .unwrap()
                .2
                .to_vec();
            if TRANSFERABLE.iter().any(|p| name.starts_with(p)) {
                assert_eq!(data, donor.as_slice(), "{name}");
            } else if name.ends_with(".w") {
                // biases start at zero in both models; weights are seeded
                assert_ne!(data, donor.as_slice(), "{name}");
            }
        }
        // forward still works post-transfer
        let (logits, value, _) = agent_model.forward(&samples[0].obs).unwrap();
        assert_eq!(logits.len(), 5);
        assert!(value.is_finite());
    }
}
