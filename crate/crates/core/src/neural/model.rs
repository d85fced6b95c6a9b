//! The actor-critic network: two GATv2 layers, a two-level readout, a shared
//! SELU MLP, and separate policy and value heads.

use super::layers::{
    readout, readout_backward, Adjacency, GatLayer, GatLayerCache, Mlp, MlpCache, ReadoutCache,
    ReadoutKind,
};
use super::tensor::Mat;
use crate::featurize::GraphObservation;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum ModelError {
    #[error("observation width {got} does not match model input width {want}")]
    WidthMismatch { got: usize, want: usize },
    #[error("empty graph")]
    EmptyGraph,
    #[error("checkpoint rejected: {0}")]
    Checkpoint(String),
}

#[derive(Debug, Clone, PartialEq)]
pub struct ModelConfig {
    pub in_dim: usize,
    pub hidden: usize,
    pub heads: usize,
    pub actions: usize,
    pub readout: ReadoutKind,
}

impl Default for ModelConfig {
    fn default() -> Self {
        ModelConfig {
            in_dim: crate::featurize::FeatureLayout::default().width,
            hidden: 128,
            heads: 4,
            actions: 56,
            readout: ReadoutKind::MeanMax,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ActorCritic {
    pub config: ModelConfig,
    pub gat1: GatLayer,
    pub gat2: GatLayer,
    pub shared: Mlp,
    pub policy: Mlp,
    pub value: Mlp,
}

pub struct ForwardTrace {
    x: Mat,
    adj: Adjacency,
    g1: GatLayerCache,
    g2: GatLayerCache,
    rd: ReadoutCache,
    graph_vec: Mat,
    shared_cache: MlpCache,
    shared_out: Mat,
    policy_cache: MlpCache,
    value_cache: MlpCache,
}

impl ActorCritic {
    pub fn new(config: ModelConfig, seed: u64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let h = config.hidden;
        let gat1 = GatLayer::new(config.heads, h, config.in_dim, &mut rng);
        let gat2 = GatLayer::new(config.heads, h, h, &mut rng);
        let shared = Mlp::new(&[4 * h, h, h], true, &mut rng);
        let policy = Mlp::new(&[h, h, h, config.actions], false, &mut rng);
        let value = Mlp::new(&[h, h, h, 1], false, &mut rng);
        ActorCritic {
            config,
            gat1,
            gat2,
            shared,
            policy,
            value,
        }
    }

    pub fn zeros_like(&self) -> Self {
        ActorCritic {
            config: self.config.clone(),
            gat1: self.gat1.zeros_like(),
            gat2: self.gat2.zeros_like(),
            shared: self.shared.zeros_like(),
            policy: self.policy.zeros_like(),
            value: self.value.zeros_like(),
        }
    }

    pub fn forward(&self, obs: &GraphObservation) -> Result<(Vec<f64>, f64, ForwardTrace), ModelError> {
        if obs.x.is_empty() {
            return Err(ModelError::EmptyGraph);
        }
        if obs.x[0].len() != self.config.in_dim {
            return Err(ModelError::WidthMismatch {
                got: obs.x[0].len(),
                want: self.config.in_dim,
            });
        }
        let x = Mat::from_rows(obs.x.clone());
        let adj = Adjacency::from_edges(x.rows, &obs.edges);
        let g1 = self.gat1.forward(&x, &adj);
        let g2 = self.gat2.forward(&g1.out, &adj);
        let (gv, rd) = readout(self.config.readout, &g1.out, &g2.out);
        let graph_vec = Mat::from_rows(vec![gv]);
        let (shared_out, shared_cache) = self.shared.forward(&graph_vec);
        let (logits_m, policy_cache) = self.policy.forward(&shared_out);
        let (value_m, value_cache) = self.value.forward(&shared_out);
        let logits = logits_m.row(0).to_vec();
        let value = value_m.row(0)[0];
        Ok((
            logits,
            value,
            ForwardTrace {
                x,
                adj,
                g1,
                g2,
                rd,
                graph_vec,
                shared_cache,
                shared_out,
                policy_cache,
                value_cache,
            },
        ))
    }

    /// Accumulates parameter gradients for d(loss)/d(logits) and
    /// d(loss)/d(value) into `grads`.
    pub fn backward(
        &self,
        trace: &ForwardTrace,
        dlogits: &[f64],
        dvalue: f64,
        grads: &mut ActorCritic,
    ) {
        let dlog = Mat::from_rows(vec![dlogits.to_vec()]);
        let dval = Mat::from_rows(vec![vec![dvalue]]);
        let mut dshared =
            self.policy
                .backward(&trace.policy_cache, &dlog, &mut grads.policy);
        let dshared_v = self
            .value
            .backward(&trace.value_cache, &dval, &mut grads.value);
        super::tensor::add_into(&mut dshared, &dshared_v);
        let dgraph =
            self.shared
                .backward(&trace.shared_cache, &dshared, &mut grads.shared);
        let h = self.config.hidden;
        let (dh1_pool, dh2) = readout_backward(
            self.config.readout,
            &trace.rd,
            h,
            h,
            dgraph.row(0),
        );
        let mut dh1 = self
            .gat2
            .backward(&trace.g1.out, &trace.adj, &trace.g2, &dh2, &mut grads.gat2);
        super::tensor::add_into(&mut dh1, &dh1_pool);
        let _dx = self
            .gat1
            .backward(&trace.x, &trace.adj, &trace.g1, &dh1, &mut grads.gat1);
        let _ = &trace.graph_vec;
        let _ = &trace.shared_out;
    }

    /// Stable names, shapes and data of every trainable tensor, in a fixed
    /// traversal order.
    pub fn named_tensors(&self) -> Vec<(String, Vec<usize>, &[f64])> {
        fn gat<'a>(out: &mut Vec<(String, Vec<usize>, &'a [f64])>, name: &str, g: &'a GatLayer) {
            for (hi, hd) in g.heads.iter().enumerate() {
                out.push((
                    format!("{name}.head{hi}.ws"),
                    vec![hd.ws.rows, hd.ws.cols],
                    hd.ws.data.as_slice(),
                ));
                out.push((
                    format!("{name}.head{hi}.wt"),
                    vec![hd.wt.rows, hd.wt.cols],
                    hd.wt.data.as_slice(),
                ));
                out.push((format!("{name}.head{hi}.a"), vec![hd.a.len()], hd.a.as_slice()));
            }
            out.push((
                format!("{name}.proj.w"),
                vec![g.proj.w.rows, g.proj.w.cols],
                g.proj.w.data.as_slice(),
            ));
            out.push((format!("{name}.proj.b"), vec![g.proj.b.len()], g.proj.b.as_slice()));
        }
        fn mlp<'a>(out: &mut Vec<(String, Vec<usize>, &'a [f64])>, name: &str, m: &'a Mlp) {
            for (li, l) in m.layers.iter().enumerate() {
                out.push((
                    format!("{name}.{li}.w"),
                    vec![l.w.rows, l.w.cols],
                    l.w.data.as_slice(),
                ));
                out.push((format!("{name}.{li}.b"), vec![l.b.len()], l.b.as_slice()));
            }
        }
        let mut out: Vec<(String, Vec<usize>, &[f64])> = Vec::new();
        gat(&mut out, "gat1", &self.gat1);
        gat(&mut out, "gat2", &self.gat2);
        mlp(&mut out, "shared", &self.shared);
        mlp(&mut out, "policy", &self.policy);
        mlp(&mut out, "value", &self.value);
        out
    }

    pub fn named_tensors_mut(&mut self) -> Vec<(String, &mut Vec<f64>)> {
        fn gat<'a>(out: &mut Vec<(String, &'a mut Vec<f64>)>, name: &str, g: &'a mut GatLayer) {
            for (hi, hd) in g.heads.iter_mut().enumerate() {
                out.push((format!("{name}.head{hi}.ws"), &mut hd.ws.data));
                out.push((format!("{name}.head{hi}.wt"), &mut hd.wt.data));
                out.push((format!("{name}.head{hi}.a"), &mut hd.a));
            }
            out.push((format!("{name}.proj.w"), &mut g.proj.w.data));
            out.push((format!("{name}.proj.b"), &mut g.proj.b));
        }
        fn mlp<'a>(out: &mut Vec<(String, &'a mut Vec<f64>)>, name: &str, m: &'a mut Mlp) {
            for (li, l) in m.layers.iter_mut().enumerate() {
                out.push((format!("{name}.{li}.w"), &mut l.w.data));
                out.push((format!("{name}.{li}.b"), &mut l.b));
            }
        }
        let mut out: Vec<(String, &mut Vec<f64>)> = Vec::new();
        gat(&mut out, "gat1", &mut self.gat1);
        gat(&mut out, "gat2", &mut self.gat2);
        mlp(&mut out, "shared", &mut self.shared);
        mlp(&mut out, "policy", &mut self.policy);
        mlp(&mut out, "value", &mut self.value);
        out
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::featurize::GraphObservation;
    use rand::Rng;

    pub(crate) fn tiny_config() -> ModelConfig {
        ModelConfig {
            in_dim: 6,
            hidden: 4,
            heads: 2,
            actions: 3,
            readout: ReadoutKind::MeanMax,
        }
    }

    pub(crate) fn random_obs(
        rng: &mut ChaCha8Rng,
        nodes: usize,
        width: usize,
    ) -> GraphObservation {
        let x = (0..nodes)
            .map(|_| (0..width).map(|_| rng.random::<f64>() * 2.0 - 1.0).collect())
            .collect();
        let edges = (1..nodes).map(|i| (i - 1, i)).collect();
        GraphObservation { x, edges }
    }

    #[test]
    fn forward_is_deterministic() {
        let model = ActorCritic::new(tiny_config(), 9);
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let obs = random_obs(&mut rng, 5, 6);
        let (l1, v1, _) = model.forward(&obs).unwrap();
        let (l2, v2, _) = model.forward(&obs).unwrap();
        assert_eq!(l1, l2);
        assert_eq!(v1.to_bits(), v2.to_bits());
    }

    #[test]
    fn permutation_invariance_of_graph_vector() {
        let model = ActorCritic::new(tiny_config(), 17);
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        for trial in 0..20 {
            let n = 2 + (trial % 5);
            let obs = random_obs(&mut rng, n, 6);
            let (logits, value, _) = model.forward(&obs).unwrap();
            // random permutation
            let mut perm: Vec<usize> = (0..n).collect();
            for i in (1..n).rev() {
                let j = rng.random_range(0..=i);
                perm.swap(i, j);
            }
            let mut px = vec![vec![]; n];
            for (old, row) in obs.x.iter().enumerate() {
                px[perm[old]] = row.clone();
            }
            let pedges = obs
                .edges
                .iter()
                .map(|&(a, b)| (perm[a], perm[b]))
                .collect();
            let pobs = GraphObservation {
                x: px,
                edges: pedges,
            };
            let (plogits, pvalue, _) = model.forward(&pobs).unwrap();
            for (a, b) in logits.iter().zip(&plogits) {
                assert!((a - b).abs() < 1e-6, "trial {trial}");
            }
            assert!((value - pvalue).abs() < 1e-6);
        }
    }

    #[test]
    fn width_mismatch_is_rejected() {
        let model = ActorCritic::new(tiny_config(), 1);
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let obs = random_obs(&mut rng, 3, 7);
        assert!(matches!(
            model.forward(&obs),
            Err(ModelError::WidthMismatch { got: 7, want: 6 })
        ));
    }

    #[test]
    fn gradients_match_central_differences() {
        let cfg = tiny_config();
        let mut model = ActorCritic::new(cfg, 23);
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let obs = random_obs(&mut rng, 4, 6);
        // scalar loss: fixed random combination of logits and value
        let wl: Vec<f64> = (0..3).map(|_| rng.random::<f64>() * 2.0 - 1.0).collect();
        let wv: f64 = rng.random::<f64>() * 2.0 - 1.0;
        let loss = |m: &ActorCritic| -> f64 {
            let (l, v, _) = m.forward(&obs).unwrap();
            l.iter().zip(&wl).map(|(a, b)| a * b).sum::<f64>() + wv * v
        };
        let mut grads = model.zeros_like();
        let (_, _, trace) = model.forward(&obs).unwrap();
        model.backward(&trace, &wl, wv, &mut grads);

        let analytic: Vec<(String, Vec<f64>)> = grads
            .named_tensors()
            .into_iter()
            .map(|(n, _, d)| (n, d.to_vec()))
            .collect();
        let eps = 1e-5;
        let mut worst: f64 = 0.0;
        let names: Vec<String> = model
            .named_tensors()
            .iter()
            .map(|(n, _, _)| n.clone())
            .collect();
        for name in names {
            let len = {
                let t = model.named_tensors_mut();
                t.into_iter().find(|(n, _)| *n == name).unwrap().1.len()
            };
            let g = &analytic.iter().find(|(n, _)| *n == name).unwrap().1;
            for k in 0..len {
                {
                    let mut t = model.named_tensors_mut();
                    let slot = t.iter_mut().find(|(n, _)| *n == name).unwrap();
                    slot.1[k] += eps;
                }
                let up = loss(&model);
                {
                    let mut t = model.named_tensors_mut();
                    let slot = t.iter_mut().find(|(n, _)| *n == name).unwrap();
                    slot.1[k] -= 2.0 * eps;
                }
                let down = loss(&model);
                {
                    let mut t = model.named_tensors_mut();
                    let slot = t.iter_mut().find(|(n, _)| *n == name).unwrap();
                    slot.1[k] += eps;
                }
                let fd = (up - down) / (2.0 * eps);
                // the 1e-6 floor absorbs central-difference roundoff noise
                // (~1e-11 for O(1) losses); real gradients sit well above it
                let denom = fd.abs().max(g[k].abs()).max(1e-6);
                let rel = (fd - g[k]).abs() / denom;
                worst = worst.max(rel);
                assert!(
                    rel < 1e-4,
                    "{name}[{k}]: analytic {} vs fd {fd} (rel {rel})",
                    g[k]
                );
            }
        }
        assert!(worst < 1e-4, "worst relative error {worst}");
    }
}
