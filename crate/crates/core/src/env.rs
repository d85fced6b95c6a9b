//! The optimization MDP: a 56-action catalogue over branch-scoped loop
//! transformations, legality-gated transitions, and base-4 log-speedup
//! rewards. Illegal and structurally inapplicable actions are uniform
//! no-ops with reward 0 (they are logged apart); "Next" moves to the next
//! branch and ends the episode from the last one.

use crate::featurize::{featurize, FeatureLayout, GraphObservation, IterTags, TagMap};
use crate::ir::{build_ast, enumerate_branches, Ast, Branch, IrError, Program};
use crate::legality::{
    compute_dependences_with_ast, resolve_skew_factor, state_is_legal, DependenceSet,
};
use crate::memo::{host_fingerprint, MemoError, MemoKey, MemoRecord, MemoStore};
use crate::runtime::{Backend, BackendTag, RuntimeError};
use crate::transforms::{
    canonical_key, targeted_nodes, Schedule, ScheduleStep, ScheduledProgram, Transformation,
};
use serde::{Deserialize, Serialize};
use std::sync::{Arc, OnceLock};
use thiserror::Error;

/// One catalogue entry. Level indices refer to the targeted branch's
/// current nest; skew factors are resolved at application time.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum ActionKind {
    Interchange { i: usize },
    Reversal { i: usize },
    Skewing { i: usize },
    Parallelization { i: usize },
    Tiling { i: usize, tx: i64, ty: i64 },
    Unrolling { factor: i64 },
    Next,
}

impl std::fmt::Display for ActionKind {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            ActionKind::Interchange { i } => write!(f, "I({},{})", i, i + 1),
            ActionKind::Reversal { i } => write!(f, "R({i})"),
            ActionKind::Skewing { i } => write!(f, "S({},{})", i, i + 1),
            ActionKind::Parallelization { i } => write!(f, "P({i})"),
            ActionKind::Tiling { i, tx, ty } => write!(f, "T({},{},{},{})", i, i + 1, tx, ty),
            ActionKind::Unrolling { factor } => write!(f, "U({factor})"),
            ActionKind::Next => write!(f, "Next"),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ActionCatalogue {
    pub actions: Vec<ActionKind>,
}

impl ActionCatalogue {
    /// The default 56-action space: 4 interchanges, 5 reversals, 3 skews,
    /// 2 parallelizations, 36 tilings, 5 unrolls, and Next.
    pub fn default_56() -> Self {
        let mut actions = Vec::with_capacity(56);
        for i in 0..4 {
            actions.push(ActionKind::Interchange { i });
        }
        for i in 0..5 {
            actions.push(ActionKind::Reversal { i });
        }
        for i in 0..3 {
            actions.push(ActionKind::Skewing { i });
        }
        for i in 0..2 {
            actions.push(ActionKind::Parallelization { i });
        }
        for i in 0..4 {
            for tx in [32, 64, 128] {
                for ty in [32, 64, 128] {
                    actions.push(ActionKind::Tiling { i, tx, ty });
                }
            }
        }
        for factor in [2, 4, 8, 16, 32] {
            actions.push(ActionKind::Unrolling { factor });
        }
        actions.push(ActionKind::Next);
        let cat = ActionCatalogue { actions };
        assert_eq!(cat.len(), 56, "default catalogue must have 56 actions");
        cat
    }

    pub fn len(&self) -> usize {
        self.actions.len()
    }

    pub fn is_empty(&self) -> bool {
        self.actions.is_empty()
    }
}

impl Default for ActionCatalogue {
    fn default() -> Self {
        Self::default_56()
    }
}

#[derive(Debug, Clone)]
pub struct EnvConfig {
    pub catalogue: ActionCatalogue,
    pub layout: FeatureLayout,
    pub step_cap: usize,
}

impl Default for EnvConfig {
    fn default() -> Self {
        EnvConfig {
            catalogue: ActionCatalogue::default_56(),
            layout: FeatureLayout::default(),
            step_cap: 64,
        }
    }
}

#[derive(Debug, Error)]
pub enum EnvError {
    #[error("action id {id} outside catalogue of {len}")]
    BadAction { id: usize, len: usize },
    #[error("episode is already over")]
    EpisodeOver,
    #[error("episode not started; call reset first")]
    NotStarted,
    #[error("memo store corrupted: {0}")]
    Memo(#[from] MemoError),
    #[error(transparent)]
    Backend(#[from] RuntimeError),
    #[error(transparent)]
    Ir(#[from] IrError),
}

#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
pub struct TraceStep {
    pub action: usize,
    pub desc: String,
    pub legal: bool,
    pub structural: bool,
    pub memo_hit: bool,
    pub reward: f64,
    pub time_after: f64,
}

/// A full episode record, exportable for replay and debugging.
#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
pub struct EpisodeTrace {
    pub program_id: String,
    pub baseline_time: f64,
    pub steps: Vec<TraceStep>,
}

impl EpisodeTrace {
    pub fn final_time(&self) -> f64 {
        self.steps
            .last()
            .map(|s| s.time_after)
            .unwrap_or(self.baseline_time)
    }

    pub fn total_reward(&self) -> f64 {
        self.steps.iter().map(|s| s.reward).sum()
    }
}

/// |sum of rewards - log4(t0 / t_final)|: zero up to float error on any
/// episode, because per-step log-speedups telescope.
pub fn return_identity_gap(trace: &EpisodeTrace) -> f64 {
    let telescoped = (trace.baseline_time / trace.final_time()).ln() / 4f64.ln();
    (trace.total_reward() - telescoped).abs()
}

#[derive(Debug, Clone)]
pub struct StepInfo {
    pub legal: bool,
    pub structural: bool,
    pub memo_hit: bool,
    pub desc: String,
}

#[derive(Debug, Clone)]
pub struct StepResult {
    pub obs: Option<GraphObservation>,
    pub reward: f64,
    pub done: bool,
    pub info: StepInfo,
}

/// Counts of the work memoization is meant to avoid. `legality_checks`
/// counts per-pair dependence verdicts; `dep_builds` counts the one-time
/// dependence-set construction per program.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct EnvCounters {
    pub legality_checks: u64,
    pub backend_calls: u64,
    pub dep_builds: u64,
}

struct Episode {
    branch_idx: usize,
    schedule: Schedule,
    scheduled: ScheduledProgram,
    tags: TagMap,
    t0: f64,
    t_cur: f64,
    steps: usize,
    done: bool,
    trace: Vec<TraceStep>,
}

pub struct Env {
    pub program: Program,
    pub program_id: String,
    pub ast: Ast,
    pub branches: Vec<Branch>,
    deps: OnceLock<DependenceSet>,
    backend: Arc<dyn Backend>,
    memo: Arc<MemoStore>,
    cfg: EnvConfig,
    counters: EnvCounters,
    episode: Option<Episode>,
}

impl Env {
    pub fn new(
        program: Program,
        backend: Arc<dyn Backend>,
        memo: Arc<MemoStore>,
        cfg: EnvConfig,
    ) -> Result<Self, EnvError> {
        program.validate(&cfg.layout.caps)?;
        let ast = build_ast(&program);
        let branches = enumerate_branches(&ast);
        let program_id = crate::memo::program_id(&program);
        Ok(Env {
            program,
            program_id,
            ast,
            branches,
            deps: OnceLock::new(),
            backend,
            memo,
            cfg,
            counters: EnvCounters::default(),
            episode: None,
        })
    }

    pub fn counters(&self) -> EnvCounters {
        self.counters
    }

    pub fn action_count(&self) -> usize {
        self.cfg.catalogue.len()
    }

    pub fn baseline_time(&self) -> Option<f64> {
        self.episode.as_ref().map(|e| e.t0)
    }

    pub fn current_time(&self) -> Option<f64> {
        self.episode.as_ref().map(|e| e.t_cur)
    }

    pub fn schedule(&self) -> Option<&Schedule> {
        self.episode.as_ref().map(|e| &e.schedule)
    }

    pub fn trace(&self) -> Option<EpisodeTrace> {
        self.episode.as_ref().map(|e| EpisodeTrace {
            program_id: self.program_id.clone(),
            baseline_time: e.t0,
            steps: e.trace.clone(),
        })
    }

    fn deps(&mut self) -> &DependenceSet {
        // computed at most once per program; warm-memo episodes that never
        // miss keep this untouched
        if self.deps.get().is_none() {
            self.counters.dep_builds += 1;
            let d = compute_dependences_with_ast(&self.program, &self.ast);
            let _ = self.deps.set(d);
        }
        self.deps.get().unwrap()
    }

    fn backend_time(&mut self, sp: &ScheduledProgram) -> Result<f64, EnvError> {
        self.counters.backend_calls += 1;
        Ok(self.backend.time(&self.program, &self.ast, sp)?)
    }

    fn record_host(&self) -> Option<String> {
        match self.backend.tag() {
            BackendTag::Measured => Some(host_fingerprint()),
            BackendTag::Synthetic => None,
        }
    }

    /// Starts an episode at the leftmost branch with an empty schedule. The
    /// baseline time comes from the memo store when warm.
    pub fn reset(&mut self) -> Result<GraphObservation, EnvError> {
        let identity = ScheduledProgram::identity(&self.program);
        let key = MemoKey {
            program_id: self.program_id.clone(),
            schedule_key: canonical_key(&Schedule::empty()),
            backend: self.backend.tag(),
        };
        let t0 = match self.memo.lookup(&key) {
            Some(rec) if rec.legal => rec.exec_time.expect("legal record has a time"),
            Some(_) => {
                return Err(EnvError::Memo(MemoError::LegalityConflict {
                    program_id: key.program_id,
                    schedule_key: key.schedule_key,
                }))
            }
            None => {
                let t = self.backend_time(&identity)?;
                self.memo.insert(
                    key,
                    MemoRecord::legal(t, self.backend.runs(), self.record_host()),
                )?;
                t
            }
        };
        self.episode = Some(Episode {
            branch_idx: 0,
            schedule: Schedule::empty(),
            scheduled: identity,
            tags: TagMap::new(),
            t0,
            t_cur: t0,
            steps: 0,
            done: false,
            trace: Vec::new(),
        });
        self.observe(0)
    }

    fn observe(&self, branch_idx: usize) -> Result<GraphObservation, EnvError> {
        let tags = self
            .episode
            .as_ref()
            .map(|e| e.tags.clone())
            .unwrap_or_default();
        Ok(featurize(
            &self.program,
            &self.ast,
            &self.branches,
            branch_idx,
            &tags,
            &self.cfg.layout,
        )?)
    }

    fn resolve(&mut self, kind: ActionKind, branch_idx: usize) -> Option<Transformation> {
        match kind {
            ActionKind::Interchange { i } => Some(Transformation::Interchange { i, j: i + 1 }),
            ActionKind::Reversal { i } => Some(Transformation::Reversal { i }),
            ActionKind::Parallelization { i } => Some(Transformation::Parallelization { i }),
            ActionKind::Tiling { i, tx, ty } => Some(Transformation::Tiling {
                i,
                j: i + 1,
                tx,
                ty,
            }),
            ActionKind::Unrolling { factor } => Some(Transformation::Unrolling { factor }),
            ActionKind::Skewing { i } => {
                // the catalogue's skew carries no factor: pick the smallest
                // one that makes the band non-negative, else 1
                let comps = self.branches[branch_idx].comps.clone();
                let state = self.episode.as_ref().expect("episode running");
                let scheduled = state.scheduled.clone();
                let deps = self.deps();
                let factor = resolve_skew_factor(deps, &scheduled, &comps, i, i + 1);
                Some(Transformation::Skewing {
                    i,
                    j: i + 1,
                    factor,
                })
            }
            ActionKind::Next => None,
        }
    }

    /// Applies one catalogue action. Structural and dependence-illegal
    /// actions leave the schedule untouched and yield reward 0; legal ones
    /// re-time the program and reward the base-4 log of the step speedup.
    pub fn step(&mut self, action_id: usize) -> Result<StepResult, EnvError> {
        let len = self.cfg.catalogue.len();
        if action_id >= len {
            return Err(EnvError::BadAction { id: action_id, len });
        }
        let kind = self.cfg.catalogue.actions[action_id];
        {
            let ep = self.episode.as_ref().ok_or(EnvError::NotStarted)?;
            if ep.done {
                return Err(EnvError::EpisodeOver);
            }
        }

        if kind == ActionKind::Next {
            let (branch_idx, was_last) = {
                let ep = self.episode.as_ref().unwrap();
                (ep.branch_idx, ep.branch_idx + 1 >= self.branches.len())
            };
            let ep = self.episode.as_mut().unwrap();
            ep.steps += 1;
            ep.branch_idx = branch_idx + 1;
            ep.done = was_last || ep.steps >= self.cfg.step_cap;
            let t_cur = ep.t_cur;
            let done = ep.done;
            let new_branch = ep.branch_idx;
            self.episode.as_mut().unwrap().trace.push(TraceStep {
                action: action_id,
                desc: "Next".into(),
                legal: true,
                structural: false,
                memo_hit: false,
                reward: 0.0,
                time_after: t_cur,
            });
            let obs = if done {
                None
            } else {
                Some(self.observe(new_branch)?)
            };
            return Ok(StepResult {
                obs,
                reward: 0.0,
                done,
                info: StepInfo {
                    legal: true,
                    structural: false,
                    memo_hit: false,
                    desc: "Next".into(),
                },
            });
        }

        let branch_idx = self.episode.as_ref().unwrap().branch_idx;
        let transform = self
            .resolve(kind, branch_idx)
            .expect("non-Next actions resolve to transformations");
        let desc = transform.to_string();
        let step = ScheduleStep {
            branch: branch_idx,
            transform,
        };

        // structural applicability first: cheap and never memoized
        let mut next_state = self.episode.as_ref().unwrap().scheduled.clone();
        let structural_err = next_state
            .apply_step(&self.ast, &self.branches, &step)
            .err();
        if let Some(err) = structural_err {
            return self.finish_noop(action_id, desc, true, false, err.to_string());
        }

        let candidate = self
            .episode
            .as_ref()
            .unwrap()
            .schedule
            .extended(branch_idx, transform);
        let key = MemoKey {
            program_id: self.program_id.clone(),
            schedule_key: canonical_key(&candidate),
            backend: self.backend.tag(),
        };
        let (legal, t_new, memo_hit) = match self.memo.lookup(&key) {
            Some(rec) => (rec.legal, rec.exec_time, true),
            None => {
                self.counters.legality_checks += 1;
                let scheduled_ok = {
                    let deps = self.deps();
                    state_is_legal(deps, &next_state)
                };
                if scheduled_ok {
                    let t = self.backend_time(&next_state)?;
                    self.memo.insert(
                        key,
                        MemoRecord::legal(t, self.backend.runs(), self.record_host()),
                    )?;
                    (true, Some(t), false)
                } else {
                    self.memo.insert(key, MemoRecord::illegal())?;
                    (false, None, false)
                }
            }
        };

        if !legal {
            return self.finish_noop(action_id, desc, false, memo_hit, String::new());
        }

        let t_new = t_new.expect("legal verdicts carry a time");
        let nodes = {
            let probe = &self.episode.as_ref().unwrap().scheduled.nests
                [self.branches[branch_idx].comps[0]];
            targeted_nodes(&self.branches[branch_idx], probe, &transform)
                .expect("structural check passed")
        };
        let ep = self.episode.as_mut().unwrap();
        let reward = (ep.t_cur / t_new).ln() / 4f64.ln();
        ep.schedule = candidate;
        ep.scheduled = next_state;
        ep.t_cur = t_new;
        ep.steps += 1;
        ep.done = ep.steps >= self.cfg.step_cap;
        for node in nodes {
            let tags = ep.tags.entry(node).or_insert_with(IterTags::default);
            match transform {
                Transformation::Parallelization { .. } => tags.parallelized = true,
                Transformation::Reversal { .. } => tags.reversed = true,
                Transformation::Skewing { .. } => tags.skewed = true,
                Transformation::Tiling { .. } => tags.tiled = true,
                Transformation::Unrolling { .. } => tags.unrolled = true,
                Transformation::Interchange { .. } => {}
            }
        }
        ep.trace.push(TraceStep {
            action: action_id,
            desc: desc.clone(),
            legal: true,
            structural: false,
            memo_hit,
            reward,
            time_after: t_new,
        });
        let done = ep.done;
        let obs = if done {
            None
        } else {
            Some(self.observe(branch_idx)?)
        };
        Ok(StepResult {
            obs,
            reward,
            done,
            info: StepInfo {
                legal: true,
                structural: false,
                memo_hit,
                desc,
            },
        })
    }

    fn finish_noop(
        &mut self,
        action_id: usize,
        desc: String,
        structural: bool,
        memo_hit: bool,
        detail: String,
    ) -> Result<StepResult, EnvError> {
        let ep = self.episode.as_mut().unwrap();
        ep.steps += 1;
        ep.done = ep.steps >= self.cfg.step_cap;
        let t_cur = ep.t_cur;
        let branch = ep.branch_idx;
        ep.trace.push(TraceStep {
            action: action_id,
            desc: desc.clone(),
            legal: false,
            structural,
            memo_hit,
            reward: 0.0,
            time_after: t_cur,
        });
        let done = ep.done;
        let obs = if done {
            None
        } else {
            Some(self.observe(branch)?)
        };
        let _ = detail;
        Ok(StepResult {
            obs,
            reward: 0.0,
            done,
            info: StepInfo {
                legal: false,
                structural,
                memo_hit,
                desc,
            },
        })
    }
}
