//! Actor-critic policy with PPO training: clipped surrogate objective,
//! generalized advantage estimation, per-minibatch advantage normalization
//! and a linearly decaying entropy bonus.

use crate::featurize::GraphObservation;
use crate::neural::{ActorCritic, Adam, ModelError};
use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use thiserror::Error;

#[derive(Debug, Clone, PartialEq)]
pub struct PpoHyperparams {
    pub clip: f64,
    pub gamma: f64,
    pub lambda: f64,
    pub value_coef: f64,
    /// Entropy coefficient decays linearly from this to 0 over
    /// `total_env_steps`.
    pub entropy_start: f64,
    pub batch_size: usize,
    pub epochs: usize,
    pub minibatch: usize,
    pub lr: f64,
    pub total_env_steps: usize,
}

impl Default for PpoHyperparams {
    fn default() -> Self {
        PpoHyperparams {
            clip: 0.3,
            gamma: 0.99,
            lambda: 0.95,
            value_coef: 2.0,
            entropy_start: 0.1,
            batch_size: 512,
            epochs: 5,
            minibatch: 64,
            lr: 1e-4,
            total_env_steps: 200_000,
        }
    }
}

/// One environment step as recorded during rollout.
#[derive(Debug, Clone)]
pub struct Transition {
    pub obs: GraphObservation,
    pub action: usize,
    pub log_prob: f64,
    pub value: f64,
    pub reward: f64,
    pub done: bool,
}

/// An episode's ordered transitions: rewards finite, exactly one terminal
/// flag at the end.
#[derive(Debug, Clone, Default)]
pub struct Trajectory(pub Vec<Transition>);

impl Trajectory {
    pub fn total_reward(&self) -> f64 {
        self.0.iter().map(|t| t.reward).sum()
    }
}

/// A training sample after advantage estimation.
#[derive(Debug, Clone)]
pub struct Sample {
    pub obs: GraphObservation,
    pub action: usize,
    pub log_prob_old: f64,
    pub advantage: f64,
    pub ret: f64,
}

#[derive(Debug, Error)]
pub enum AgentError {
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error("non-finite loss: {0}")]
    NonFinite(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ActionMode {
    Sample,
    Greedy,
}

#[derive(Debug, Clone, Default)]
pub struct LossReport {
    pub policy_loss: f64,
    pub value_loss: f64,
    pub entropy: f64,
    pub total: f64,
    pub entropy_coef: f64,
}

fn log_softmax(logits: &[f64]) -> Vec<f64> {
    let m = logits.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let lse = logits.iter().map(|v| (v - m).exp()).sum::<f64>().ln() + m;
    logits.iter().map(|v| v - lse).collect()
}

/// delta_t = r_t + gamma V_{t+1} (1 - done) - V_t;
/// A_t = delta_t + gamma lambda (1 - done) A_{t+1}; returns = A + V.
/// The bootstrap value at an episode end is 0.
pub fn compute_gae(
    rewards: &[f64],
    values: &[f64],
    dones: &[bool],
    gamma: f64,
    lambda: f64,
) -> (Vec<f64>, Vec<f64>) {
    let n = rewards.len();
    assert_eq!(values.len(), n);
    assert_eq!(dones.len(), n);
    let mut advantages = vec![0.0; n];
    let mut next_adv = 0.0;
    for t in (0..n).rev() {
        let cont = if dones[t] { 0.0 } else { 1.0 };
        let next_value = if t + 1 < n && !dones[t] {
            values[t + 1]
        } else {
            0.0
        };
        let delta = rewards[t] + gamma * next_value * cont - values[t];
        next_adv = delta + gamma * lambda * cont * next_adv;
        advantages[t] = next_adv;
    }
    let returns = advantages
        .iter()
        .zip(values)
        .map(|(a, v)| a + v)
        .collect();
    (advantages, returns)
}

pub struct Agent {
    pub model: ActorCritic,
    pub hp: PpoHyperparams,
    optimizer: Adam,
    steps_seen: usize,
    rng: ChaCha8Rng,
}

impl Agent {
    pub fn new(model: ActorCritic, hp: PpoHyperparams, seed: u64) -> Self {
        let optimizer = Adam::new(hp.lr);
        Agent {
            model,
            hp,
            optimizer,
            steps_seen: 0,
            rng: ChaCha8Rng::seed_from_u64(seed),
        }
    }

    /// Current entropy coefficient: linear decay, clamped at zero.
    pub fn entropy_coef(&self) -> f64 {
        let frac = self.steps_seen as f64 / self.hp.total_env_steps as f64;
        self.hp.entropy_start * (1.0 - frac).max(0.0)
    }

    pub fn steps_seen(&self) -> usize {
        self.steps_seen
    }

    pub fn forward(&self, obs: &GraphObservation) -> Result<(Vec<f64>, f64), AgentError> {
        let (logits, value, _) = self.model.forward(obs)?;
        Ok((logits, value))
    }

    /// Draws from the policy (or takes the argmax, lowest id on ties) and
    /// returns the action's log-probability under the current policy.
    pub fn select_action(
        &mut self,
        obs: &GraphObservation,
        mode: ActionMode,
    ) -> Result<(usize, f64, f64), AgentError> {
        let (logits, value, _) = self.model.forward(obs)?;
        let logp = log_softmax(&logits);
        let action = match mode {
            ActionMode::Greedy => {
                let mut best = 0;
                for (i, v) in logits.iter().enumerate() {
                    if *v > logits[best] {
                        best = i;
                    }
                }
                best
            }
            ActionMode::Sample => {
                let r: f64 = self.rng.random();
                let mut acc = 0.0;
                let mut chosen = logp.len() - 1;
                for (i, lp) in logp.iter().enumerate() {
                    acc += lp.exp();
                    if r < acc {
                        chosen = i;
                        break;
                    }
                }
                chosen
            }
        };
        Ok((action, logp[action], value))
    }

    /// One PPO update over a complete batch: `epochs` passes of shuffled
    /// minibatches, advantages normalized per minibatch, Adam steps at the
    /// configured learning rate.
    pub fn ppo_update(&mut self, batch: &[Sample]) -> Result<LossReport, AgentError> {
        let c_ent = self.entropy_coef();
        self.steps_seen += batch.len();
        let mb = self.hp.minibatch.min(batch.len()).max(1);
        let mut report = LossReport {
            entropy_coef: c_ent,
            ..Default::default()
        };
        let mut minibatches = 0usize;
        for _ in 0..self.hp.epochs {
            let mut order: Vec<usize> = (0..batch.len()).collect();
            for i in (1..order.len()).rev() {
                let j = self.rng.random_range(0..=i);
                order.swap(i, j);
            }
            for chunk in order.chunks(mb) {
                let (pl, vl, ent, total) = self.minibatch_step(batch, chunk, c_ent)?;
                report.policy_loss += pl;
                report.value_loss += vl;
                report.entropy += ent;
                report.total += total;
                minibatches += 1;
            }
        }
        let n = minibatches.max(1) as f64;
        report.policy_loss /= n;
        report.value_loss /= n;
        report.entropy /= n;
        report.total /= n;
        Ok(report)
    }

    fn minibatch_step(
        &mut self,
        batch: &[Sample],
        idx: &[usize],
        c_ent: f64,
    ) -> Result<(f64, f64, f64, f64), AgentError> {
        let n = idx.len() as f64;
        // normalize advantages over the minibatch
        let mean: f64 = idx.iter().map(|&i| batch[i].advantage).sum::<f64>() / n;
        let var: f64 = idx
            .iter()
            .map(|&i| (batch[i].advantage - mean).powi(2))
            .sum::<f64>()
            / n;
        let std = var.sqrt() + 1e-8;

        let mut grads = self.model.zeros_like();
        let (mut policy_loss, mut value_loss, mut entropy) = (0.0, 0.0, 0.0);
        for &i in idx {
            let s = &batch[i];
            let adv = (s.advantage - mean) / std;
            let (logits, value, trace) = self.model.forward(&s.obs)?;
            let logp = log_softmax(&logits);
            let probs: Vec<f64> = logp.iter().map(|v| v.exp()).collect();
            let lp_a = logp[s.action];
            let ratio = (lp_a - s.log_prob_old).exp();
            let clipped = ratio.clamp(1.0 - self.hp.clip, 1.0 + self.hp.clip);
            let s1 = ratio * adv;
            let s2 = clipped * adv;
            let l_clip = s1.min(s2);
            let h: f64 = -probs
                .iter()
                .zip(&logp)
                .map(|(p, lp)| if *p > 0.0 { p * lp } else { 0.0 })
                .sum::<f64>();
            let verr = value - s.ret;

            policy_loss += -l_clip;
            value_loss += verr * verr;
            entropy += h;

            // d(-L_clip)/d(rho): active branch only, clip zeroes the
            // gradient outside the trust region
            let dl_drho = if s1 <= s2 {
                -adv
            } else if ratio > 1.0 - self.hp.clip && ratio < 1.0 + self.hp.clip {
                -adv
            } else {
                0.0
            };
            let scale = 1.0 / n;
            let mut dlogits = vec![0.0; logits.len()];
            for a in 0..logits.len() {
                let onehot = f64::from(a == s.action);
                let dlp = onehot - probs[a];
                // policy term
                dlogits[a] += dl_drho * ratio * dlp * scale;
                // entropy bonus: d(-c H)/dz = c * p * (logp + H)
                dlogits[a] += c_ent * probs[a] * (logp[a] + h) * scale;
            }
            let dvalue = self.hp.value_coef * 2.0 * verr * scale;
            self.model.backward(&trace, &dlogits, dvalue, &mut grads);
        }

        let total =
            (policy_loss + self.hp.value_coef * value_loss - c_ent * entropy) / n;
        if !total.is_finite() {
            return Err(AgentError::NonFinite(format!(
                "policy {policy_loss} value {value_loss} entropy {entropy}"
            )));
        }
        self.optimizer.step(&mut self.model, &grads);
        for (name, data) in self.model.named_tensors_mut() {
            if data.iter().any(|v| !v.is_finite()) {
                return Err(AgentError::NonFinite(format!(
                    "parameter {name} became non-finite"
                )));
            }
        }
        Ok((policy_loss / n, value_loss / n, entropy / n, total))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::neural::{ModelConfig, ReadoutKind};

    fn tiny_model(actions: usize, seed: u64) -> ActorCritic {
        ActorCritic::new(
            ModelConfig {
                in_dim: 4,
                hidden: 6,
                heads: 2,
                actions,
                readout: ReadoutKind::MeanMax,
            },
            seed,
        )
    }

    fn fixed_obs() -> GraphObservation {
        GraphObservation {
            x: vec![
                vec![0.1, -0.4, 0.7, 0.2],
                vec![0.9, 0.3, -0.2, 0.5],
            ],
            edges: vec![(0, 1)],
        }
    }

    #[test]
    fn softmax_of_logits_sums_to_one() {
        let agent = Agent::new(tiny_model(5, 0), PpoHyperparams::default(), 0);
        let (logits, _) = agent.forward(&fixed_obs()).unwrap();
        let p: f64 = log_softmax(&logits).iter().map(|v| v.exp()).sum();
        assert!((p - 1.0).abs() < 1e-9);
    }

    #[test]
    fn value_output_is_scalar_and_deterministic() {
        let agent = Agent::new(tiny_model(3, 1), PpoHyperparams::default(), 0);
        let (_, v1) = agent.forward(&fixed_obs()).unwrap();
        let (_, v2) = agent.forward(&fixed_obs()).unwrap();
        assert_eq!(v1.to_bits(), v2.to_bits());
    }

    #[test]
    fn dominant_logit_is_sampled_with_high_probability() {
        let mut model = tiny_model(4, 2);
        // force a dominant logit through the last policy bias
        let last = model.policy.layers.last_mut().unwrap();
        last.w.data.iter_mut().for_each(|v| *v = 0.0);
        last.b = vec![0.0, 100.0, 0.0, 0.0];
        let mut agent = Agent::new(model, PpoHyperparams::default(), 3);
        let mut hits = 0;
        for _ in 0..200 {
            let (a, _, _) = agent.select_action(&fixed_obs(), ActionMode::Sample).unwrap();
            hits += usize::from(a == 1);
        }
        assert!(hits >= 199, "{hits}");
    }

    #[test]
    fn greedy_breaks_ties_toward_lower_ids() {
        let mut model = tiny_model(4, 2);
        let last = model.policy.layers.last_mut().unwrap();
        last.w.data.iter_mut().for_each(|v| *v = 0.0);
        last.b = vec![0.0, 7.0, 7.0, 0.0];
        let mut agent = Agent::new(model, PpoHyperparams::default(), 0);
        let (a, _, _) = agent.select_action(&fixed_obs(), ActionMode::Greedy).unwrap();
        assert_eq!(a, 1);
    }

    #[test]
    fn fixed_seed_reproduces_action_sequences() {
        let run = || {
            let mut agent = Agent::new(tiny_model(6, 4), PpoHyperparams::default(), 99);
            (0..20)
                .map(|_| agent.select_action(&fixed_obs(), ActionMode::Sample).unwrap().0)
                .collect::<Vec<_>>()
        };
        assert_eq!(run(), run());
    }

    #[test]
    fn gae_matches_hand_computation() {
        // single terminal step
        let (a, r) = compute_gae(&[1.0], &[0.0], &[true], 0.99, 0.95);
        assert_eq!(a, vec![1.0]);
        assert_eq!(r, vec![1.0]);

        // two steps, terminal at t=1
        let (a, r) = compute_gae(&[0.0, 1.0], &[0.0, 0.0], &[false, true], 0.99, 0.95);
        assert!((a[0] - 0.9405).abs() < 1e-12, "{a:?}");
        assert_eq!(a[1], 1.0);
        assert_eq!(r[0], a[0]);

        // zeros in, zeros out
        let (a, _) = compute_gae(&[0.0; 4], &[0.0; 4], &[false, false, false, true], 0.99, 0.95);
        assert!(a.iter().all(|&v| v == 0.0));
    }

    #[test]
    fn clip_formula_matches_spec_example() {
        // rho = 2, A = 1, eps = 0.3: the clipped branch wins at 1.3
        let rho: f64 = 2.0;
        let adv = 1.0;
        let clipped = rho.clamp(0.7, 1.3);
        assert_eq!((rho * adv).min(clipped * adv), 1.3);
    }

    #[test]
    fn entropy_coefficient_decays_to_zero() {
        let hp = PpoHyperparams {
            total_env_steps: 100,
            batch_size: 10,
            minibatch: 5,
            ..Default::default()
        };
        let mut agent = Agent::new(tiny_model(3, 5), hp, 1);
        let mut last = f64::INFINITY;
        let batch: Vec<Sample> = (0..10)
            .map(|i| Sample {
                obs: fixed_obs(),
                action: i % 3,
                log_prob_old: (1.0f64 / 3.0).ln(),
                advantage: if i % 2 == 0 { 1.0 } else { -1.0 },
                ret: 0.5,
            })
            .collect();
        for _ in 0..12 {
            let report = agent.ppo_update(&batch).unwrap();
            assert!(report.entropy_coef <= last + 1e-12);
            last = report.entropy_coef;
        }
        assert_eq!(agent.entropy_coef(), 0.0);
    }

    #[test]
    fn parameters_stay_finite_after_updates() {
        let mut agent = Agent::new(tiny_model(4, 6), PpoHyperparams {
            batch_size: 16,
            minibatch: 8,
            ..Default::default()
        }, 2);
        let mut batch = Vec::new();
        for i in 0..16 {
            let (a, lp, v) = agent.select_action(&fixed_obs(), ActionMode::Sample).unwrap();
            let _ = v;
            batch.push(Sample {
                obs: fixed_obs(),
                action: a,
                log_prob_old: lp,
                advantage: if i % 2 == 0 { 0.5 } else { -0.5 },
                ret: 0.1,
            });
        }
        agent.ppo_update(&batch).unwrap();
        for (_, _, data) in agent.model.named_tensors() {
            assert!(data.iter().all(|v| v.is_finite()));
        }
    }

    #[test]
    fn ppo_gradient_matches_finite_differences_through_the_loss() {
        // freeze a tiny scenario and check the analytic loss gradient wrt
        // the final policy-layer bias and value-layer bias
        let model = tiny_model(3, 8);
        let obs = fixed_obs();
        let sample = Sample {
            obs: obs.clone(),
            action: 1,
            log_prob_old: (0.3f64).ln(),
            advantage: 0.8,
            ret: 0.4,
        };
        let c_ent = 0.05;
        let loss_of = |m: &ActorCritic| -> f64 {
            let (logits, value, _) = m.forward(&obs).unwrap();
            let logp = log_softmax(&logits);
            let probs: Vec<f64> = logp.iter().map(|v| v.exp()).collect();
            let ratio = (logp[sample.action] - sample.log_prob_old).exp();
            let l_clip = (ratio * sample.advantage)
                .min(ratio.clamp(0.7, 1.3) * sample.advantage);
            let h: f64 = -probs.iter().zip(&logp).map(|(p, l)| p * l).sum::<f64>();
            -l_clip + 2.0 * (value - sample.ret).powi(2) - c_ent * h
        };

        // analytic gradient with the same formulas ppo_update uses
        let (logits, value, trace) = model.forward(&obs).unwrap();
        let logp = log_softmax(&logits);
        let probs: Vec<f64> = logp.iter().map(|v| v.exp()).collect();
        let ratio = (logp[sample.action] - sample.log_prob_old).exp();
        let s1 = ratio * sample.advantage;
        let s2 = ratio.clamp(0.7, 1.3) * sample.advantage;
        let h: f64 = -probs.iter().zip(&logp).map(|(p, l)| p * l).sum::<f64>();
        let dl_drho = if s1 <= s2 {
            -sample.advantage
        } else if ratio > 0.7 && ratio < 1.3 {
            -sample.advantage
        } else {
            0.0
        };
        let mut dlogits = vec![0.0; 3];
        for a in 0..3 {
            let onehot = f64::from(a == sample.action);
            dlogits[a] = dl_drho * ratio * (onehot - probs[a])
                + c_ent * probs[a] * (logp[a] + h);
        }
        let dvalue = 2.0 * 2.0 * (value - sample.ret);
        let mut grads = model.zeros_like();
        model.backward(&trace, &dlogits, dvalue, &mut grads);

        let mut m = model.clone();
        let eps = 1e-6;
        for name in ["policy.2.b", "value.2.b"] {
            let len = {
                let t = m.named_tensors_mut();
                t.into_iter().find(|(n, _)| n == name).unwrap().1.len()
            };
            for k in 0..len {
                {
                    let mut t = m.named_tensors_mut();
                    t.iter_mut().find(|(n, _)| n == name).unwrap().1[k] += eps;
                }
                let up = loss_of(&m);
                {
                    let mut t = m.named_tensors_mut();
                    t.iter_mut().find(|(n, _)| n == name).unwrap().1[k] -= 2.0 * eps;
                }
                let down = loss_of(&m);
                {
                    let mut t = m.named_tensors_mut();
                    t.iter_mut().find(|(n, _)| n == name).unwrap().1[k] += eps;
                }
                let fd = (up - down) / (2.0 * eps);
                let g = grads
                    .named_tensors()
                    .into_iter()
                    .find(|(n, _, _)| n == name)
                    .unwrap()
                    .2[k];
                assert!(
                    (fd - g).abs() / fd.abs().max(g.abs()).max(1e-8) < 1e-4,
                    "{name}[{k}]: {g} vs {fd}"
                );
            }
        }
    }

    #[test]
    fn toy_bandit_converges_to_the_rewarding_arm() {
        let hp = PpoHyperparams {
            batch_size: 64,
            minibatch: 16,
            epochs: 5,
            lr: 3e-3,
            entropy_start: 0.05,
            total_env_steps: 64 * 40,
            ..Default::default()
        };
        let mut agent = Agent::new(tiny_model(2, 13), hp, 7);
        let obs = fixed_obs();
        for _update in 0..50 {
            let mut batch = Vec::new();
            let mut rewards = Vec::new();
            let mut values = Vec::new();
            for _ in 0..64 {
                let (a, lp, v) = agent.select_action(&obs, ActionMode::Sample).unwrap();
                let r = if a == 0 { 1.0 } else { 0.0 };
                batch.push((a, lp));
                rewards.push(r);
                values.push(v);
            }
            let dones = vec![true; 64];
            let (advs, rets) = compute_gae(&rewards, &values, &dones, 0.99, 0.95);
            let samples: Vec<Sample> = batch
                .into_iter()
                .zip(advs.iter().zip(&rets))
                .map(|((a, lp), (adv, ret))| Sample {
                    obs: obs.clone(),
                    action: a,
                    log_prob_old: lp,
                    advantage: *adv,
                    ret: *ret,
                })
                .collect();
            agent.ppo_update(&samples).unwrap();
        }
        let (a, _, _) = agent.select_action(&obs, ActionMode::Greedy).unwrap();
        assert_eq!(a, 0, "greedy policy should pick the rewarding arm");
    }
}
