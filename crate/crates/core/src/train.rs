//! The training loop: rollout collection over a program corpus, advantage
//! estimation, PPO updates, and per-iteration metrics. Also the greedy
//! inference rollout used for schedule prediction.

use crate::agent::{compute_gae, ActionMode, Agent, AgentError, Sample};
use crate::env::{Env, EnvConfig, EnvError, EpisodeTrace};
use crate::memo::MemoStore;
use crate::runtime::Backend;
use crate::transforms::Schedule;
use crate::ir::Program;
use std::sync::Arc;
use std::time::Instant;
use thiserror::Error;

#[derive(Debug, Error)]
pub enum TrainError {
    #[error(transparent)]
    Agent(#[from] AgentError),
    #[error(transparent)]
    Env(#[from] EnvError),
    #[error("empty corpus")]
    EmptyCorpus,
    #[error("model emits {model} actions but the catalogue has {catalogue}")]
    ActionMismatch { model: usize, catalogue: usize },
}

/// One CSV row of training progress. `mean_return` is the average episode
/// return in base-4 log-speedup units.
#[derive(Debug, Clone, PartialEq)]
pub struct IterationMetrics {
    pub iteration: usize,
    pub episodes: usize,
    pub env_steps: usize,
    pub mean_return: f64,
    pub entropy_coef: f64,
    pub policy_loss: f64,
    pub value_loss: f64,
    pub total_loss: f64,
    pub memo_hits: u64,
    pub memo_misses: u64,
    pub legality_checks: u64,
    pub backend_calls: u64,
    pub wall_time_s: f64,
}

impl IterationMetrics {
    pub const CSV_HEADER: &'static str = "iteration,episodes,env_steps,mean_return,entropy_coef,policy_loss,value_loss,total_loss,memo_hits,memo_misses,legality_checks,backend_calls,wall_time_s";

    pub fn csv_row(&self) -> String {
        format!(
            "{},{},{},{},{},{},{},{},{},{},{},{},{}",
            self.iteration,
            self.episodes,
            self.env_steps,
            self.mean_return,
            self.entropy_coef,
            self.policy_loss,
            self.value_loss,
            self.total_loss,
            self.memo_hits,
            self.memo_misses,
            self.legality_checks,
            self.backend_calls,
            self.wall_time_s
        )
    }
}

pub struct Trainer {
    pub agent: Agent,
    envs: Vec<Env>,
    memo: Arc<MemoStore>,
    episode_counter: usize,
    iteration: usize,
}

impl Trainer {
    pub fn new(
        corpus: Vec<Program>,
        backend: Arc<dyn Backend>,
        memo: Arc<MemoStore>,
        env_cfg: EnvConfig,
        agent: Agent,
    ) -> Result<Self, TrainError> {
        if corpus.is_empty() {
            return Err(TrainError::EmptyCorpus);
        }
        if agent.model.config.actions != env_cfg.catalogue.len() {
            return Err(TrainError::ActionMismatch {
                model: agent.model.config.actions,
                catalogue: env_cfg.catalogue.len(),
            });
        }
        let envs = corpus
            .into_iter()
            .map(|p| Env::new(p, backend.clone(), memo.clone(), env_cfg.clone()))
            .collect::<Result<Vec<_>, _>>()?;
        Ok(Trainer {
            agent,
            envs,
            memo,
            episode_counter: 0,
            iteration: 0,
        })
    }

    pub fn envs(&self) -> &[Env] {
        &self.envs
    }

    /// Runs one sampled episode on the next corpus program (round robin).
    fn collect_episode(&mut self) -> Result<(Vec<Sample>, f64), TrainError> {
        let idx = self.episode_counter % self.envs.len();
        self.episode_counter += 1;
        let env = &mut self.envs[idx];
        let mut obs = env.reset()?;
        let mut transitions: Vec<(crate::featurize::GraphObservation, usize, f64, f64)> =
            Vec::new();
        let mut rewards = Vec::new();
        let mut dones = Vec::new();
        loop {
            let (action, logp, value) = self.agent.select_action(&obs, ActionMode::Sample)?;
            let result = env.step(action)?;
            transitions.push((obs, action, logp, value));
            rewards.push(result.reward);
            dones.push(result.done);
            if result.done {
                break;
            }
            obs = result.obs.expect("non-terminal steps carry an observation");
        }
        let values: Vec<f64> = transitions.iter().map(|t| t.3).collect();
        let (advantages, returns) =
            compute_gae(&rewards, &values, &dones, self.agent.hp.gamma, self.agent.hp.lambda);
        let episode_return: f64 = rewards.iter().sum();
        let samples = transitions
            .into_iter()
            .zip(advantages.into_iter().zip(returns))
            .map(|((obs, action, log_prob_old, _), (advantage, ret))| Sample {
                obs,
                action,
                log_prob_old,
                advantage,
                ret,
            })
            .collect();
        Ok((samples, episode_return))
    }

    /// Collects at least one batch of environment steps, runs one PPO
    /// update, and reports metrics.
    pub fn run_iteration(&mut self) -> Result<IterationMetrics, TrainError> {
        let start = Instant::now();
        let stats_before = self.memo.stats();
        let counters_before: Vec<_> = self.envs.iter().map(|e| e.counters()).collect();

        let mut samples: Vec<Sample> = Vec::with_capacity(self.agent.hp.batch_size);
        let mut episode_returns = Vec::new();
        while samples.len() < self.agent.hp.batch_size {
            let (mut ep_samples, ep_return) = self.collect_episode()?;
            episode_returns.push(ep_return);
            samples.append(&mut ep_samples);
        }
        samples.truncate(self.agent.hp.batch_size);
        let env_steps = samples.len();
        let report = self.agent.ppo_update(&samples)?;

        let stats_after = self.memo.stats();
        let (mut legality, mut backend) = (0u64, 0u64);
        for (env, before) in self.envs.iter().zip(&counters_before) {
            let c = env.counters();
            legality += c.legality_checks - before.legality_checks;
            backend += c.backend_calls - before.backend_calls;
        }
        self.iteration += 1;
        Ok(IterationMetrics {
            iteration: self.iteration,
            episodes: episode_returns.len(),
            env_steps,
            mean_return: episode_returns.iter().sum::<f64>() / episode_returns.len() as f64,
            entropy_coef: report.entropy_coef,
            policy_loss: report.policy_loss,
            value_loss: report.value_loss,
            total_loss: report.total,
            memo_hits: stats_after.hits - stats_before.hits,
            memo_misses: stats_after.misses - stats_before.misses,
            legality_checks: legality,
            backend_calls: backend,
            wall_time_s: start.elapsed().as_secs_f64(),
        })
    }
}

/// Report of one greedy (no exploration, no learning) inference episode.
#[derive(Debug, Clone)]
pub struct GreedyReport {
    pub trace: EpisodeTrace,
    pub schedule: Schedule,
    pub baseline_time: f64,
    pub final_time: f64,
    /// Time spent in policy forward passes only.
    pub policy_time_s: f64,
}

/// Rolls out the greedy policy on one program. Rewards and times come from
/// the environment's backend; `policy_time_s` isolates inference latency.
pub fn greedy_rollout(agent: &mut Agent, env: &mut Env) -> Result<GreedyReport, TrainError> {
    let mut obs = env.reset()?;
    let mut policy_time = 0.0f64;
    loop {
        let t = Instant::now();
        let (action, _, _) = agent.select_action(&obs, ActionMode::Greedy)?;
        policy_time += t.elapsed().as_secs_f64();
        let result = env.step(action)?;
        if result.done {
            break;
        }
        obs = result.obs.expect("non-terminal steps carry an observation");
    }
    let trace = env.trace().expect("episode ran");
    Ok(GreedyReport {
        baseline_time: trace.baseline_time,
        final_time: trace.final_time(),
        schedule: env.schedule().expect("episode ran").clone(),
        policy_time_s: policy_time,
        trace,
    })
}
