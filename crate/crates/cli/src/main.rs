//! Operator entry point: data generation, pre-training, RL training,
//! schedule inference, benchmarking, memo inspection and trace replay.

mod config;

use anyhow::{anyhow, bail, Context, Result};
use clap::{Parser, Subcommand};
use config::RunConfig;
use nestrl::agent::{Agent, PpoHyperparams};
use nestrl::env::{Env, EpisodeTrace};
use nestrl::featurize::{featurize, FeatureLayout, TagMap};
use nestrl::ir::{
    build_ast, enumerate_branches, parse_program, serialize_program, NodeKind, Program,
};
use nestrl::memo::MemoStore;
use nestrl::neural::{checkpoint, ActorCritic};
use nestrl::pretrain::{
    build_pretrain_dataset, pretrain, transfer_weights, PretrainConfig, TRANSFERABLE,
};
use nestrl::train::{greedy_rollout, GreedyReport, IterationMetrics, Trainer};
use nestrl::transforms::canonical_key;
use nestrl::workloads::{benchmark_suite_sized, generate_random_program, GeneratorConfig};
use std::io::Write;
use std::path::{Path, PathBuf};
use std::sync::Arc;

#[derive(Parser)]
#[command(
    name = "nestrl",
    about = "Reinforcement-learning autoscheduler for affine loop nests",
    version
)]
struct Cli {
    /// TOML run configuration; defaults apply when omitted.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Generate random training programs and a manifest.
    Datagen {
        #[arg(long, default_value_t = 100)]
        count: u64,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long, default_value = "programs")]
        out: PathBuf,
    },
    /// Pre-train the value pathway on execution-time prediction.
    Pretrain {
        /// Output checkpoint path.
        #[arg(long, default_value = "pretrained.json")]
        out: PathBuf,
    },
    /// Train the PPO agent on the program corpus.
    Train {
        /// Initialize the encoder and value head from this checkpoint.
        #[arg(long)]
        pretrained: Option<PathBuf>,
    },
    /// Infer a schedule for one program with a trained policy.
    Optimize {
        #[arg(long)]
        program: PathBuf,
        #[arg(long)]
        checkpoint: PathBuf,
        /// Fall back to the identity schedule when the found one is slower.
        #[arg(long)]
        guard: bool,
        /// Append the episode trace to this JSONL file.
        #[arg(long)]
        trace_out: Option<PathBuf>,
    },
    /// Run the benchmark suite and report speedups over unoptimized code.
    Bench {
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long)]
        guard: bool,
        /// Benchmark size knob (2D extents; cubes scale down from it).
        #[arg(long, default_value_t = 96)]
        scale: i64,
        /// Also write the table as CSV.
        #[arg(long)]
        csv: Option<PathBuf>,
    },
    /// Print memo store size and composition.
    MemoStats {
        #[arg(long)]
        memo: PathBuf,
    },
    /// Re-run recorded episode traces and verify rewards.
    Replay {
        #[arg(long)]
        trace: PathBuf,
    },
    /// Show a program's loop tree, branches and dependences.
    Inspect {
        #[arg(long)]
        program: PathBuf,
        /// Write the graph observation as X.csv / E.csv into this directory.
        #[arg(long)]
        dump_obs: Option<PathBuf>,
    },
}

fn main() {
    let cli = Cli::parse();
    if let Err(e) = run(cli) {
        eprintln!("error: {e:#}");
        std::process::exit(1);
    }
}

fn run(cli: Cli) -> Result<()> {
    let cfg = RunConfig::load(cli.config.as_deref())?;
    cfg.validate()?;
    match cli.command {
        Command::Datagen { count, seed, out } => cmd_datagen(count, seed, &out),
        Command::Pretrain { out } => cmd_pretrain(&cfg, &out),
        Command::Train { pretrained } => cmd_train(&cfg, pretrained.as_deref()),
        Command::Optimize {
            program,
            checkpoint,
            guard,
            trace_out,
        } => cmd_optimize(&cfg, &program, &checkpoint, guard, trace_out.as_deref()),
        Command::Bench {
            checkpoint,
            guard,
            scale,
            csv,
        } => cmd_bench(&cfg, &checkpoint, guard, scale, csv.as_deref()),
        Command::MemoStats { memo } => cmd_memo_stats(&memo),
        Command::Replay { trace } => cmd_replay(&cfg, &trace),
        Command::Inspect { program, dump_obs } => cmd_inspect(&program, dump_obs.as_deref()),
    }
}

fn load_corpus(dir: &Path) -> Result<Vec<Program>> {
    let mut files: Vec<PathBuf> = std::fs::read_dir(dir)
        .with_context(|| format!("reading corpus dir {}", dir.display()))?
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| p.extension().is_some_and(|e| e == "dsl"))
        .collect();
    files.sort();
    if files.is_empty() {
        bail!("no .dsl programs in {}", dir.display());
    }
    files
        .iter()
        .map(|f| {
            let text = std::fs::read_to_string(f)?;
            parse_program(&text).map_err(|e| anyhow!("{}: {e}", f.display()))
        })
        .collect()
}

fn load_or_new_memo(path: &Path) -> Result<Arc<MemoStore>> {
    if path.exists() {
        let store = MemoStore::load(path)?;
        println!(
            "memo: loaded {} records from {}",
            store.len(),
            path.display()
        );
        Ok(Arc::new(store))
    } else {
        Ok(Arc::new(MemoStore::new()))
    }
}

fn cmd_datagen(count: u64, seed: u64, out: &Path) -> Result<()> {
    std::fs::create_dir_all(out)?;
    let mut manifest = Vec::new();
    for k in 0..count {
        let gen_cfg = GeneratorConfig {
            seed: seed + k,
            ..Default::default()
        };
        let program = generate_random_program(&gen_cfg);
        let file = out.join(format!("{}.dsl", program.name));
        std::fs::write(&file, serialize_program(&program))?;
        manifest.push(serde_json::json!({
            "file": file.file_name().unwrap().to_string_lossy(),
            "name": program.name,
            "program_id": nestrl::memo::program_id(&program),
            "seed": seed + k,
        }));
    }
    let manifest_path = out.join("manifest.json");
    std::fs::write(&manifest_path, serde_json::to_string_pretty(&manifest)?)?;
    println!("wrote {count} programs and {}", manifest_path.display());
    Ok(())
}

fn cmd_pretrain(cfg: &RunConfig, out: &Path) -> Result<()> {
    let corpus = load_corpus(&cfg.paths.programs_dir)?;
    let take = cfg.pretrain.samples.min(corpus.len());
    let programs = &corpus[..take];
    let backend = cfg.training_backend();
    let memo = load_or_new_memo(&cfg.paths.memo_file)?;
    let layout = FeatureLayout::default();
    let (samples, skipped) = build_pretrain_dataset(programs, &backend, &memo, &layout);
    println!("dataset: {} samples ({skipped} skipped)", samples.len());
    let mut model = ActorCritic::new(cfg.model_config()?, cfg.seed);
    let report = pretrain(
        &mut model,
        &samples,
        &PretrainConfig {
            epochs: cfg.pretrain.epochs,
            lr: cfg.pretrain.lr,
            minibatch: cfg.pretrain.minibatch,
            normalize_log: cfg.pretrain.normalize_log,
            seed: cfg.seed,
        },
    )?;
    checkpoint::save(
        &model,
        TRANSFERABLE.iter().map(|s| s.to_string()).collect(),
        out,
    )?;
    let curve_path = out.with_extension("loss.csv");
    let mut curve = String::from("epoch,mse\n");
    for (i, l) in report.loss_curve.iter().enumerate() {
        curve.push_str(&format!("{},{}\n", i + 1, l));
    }
    std::fs::write(&curve_path, curve)?;
    memo.save(&cfg.paths.memo_file)?;
    println!(
        "pretrained: initial mse {:.6e}, final mse {:.6e}; checkpoint {}",
        report.loss_curve.first().unwrap_or(&f64::NAN),
        report.loss_curve.last().unwrap_or(&f64::NAN),
        out.display()
    );
    Ok(())
}

fn agent_from_checkpoint(path: &Path, hp: PpoHyperparams, seed: u64) -> Result<Agent> {
    let (model, _) = checkpoint::load(path)?;
    Ok(Agent::new(model, hp, seed))
}

fn cmd_train(cfg: &RunConfig, pretrained: Option<&Path>) -> Result<()> {
    let corpus = load_corpus(&cfg.paths.programs_dir)?;
    let memo = load_or_new_memo(&cfg.paths.memo_file)?;
    let backend = cfg.training_backend();
    let mut model = ActorCritic::new(cfg.model_config()?, cfg.seed);
    if let Some(ckpt) = pretrained {
        let (donor, _) = checkpoint::load(ckpt)?;
        transfer_weights(&donor, &mut model)?;
        println!(
            "initialized encoder and value head from {}",
            ckpt.display()
        );
    }
    let agent = Agent::new(model, cfg.ppo.to_hyperparams(), cfg.seed);
    let mut trainer = Trainer::new(corpus, backend, memo.clone(), cfg.env_config(), agent)?;

    std::fs::create_dir_all(&cfg.paths.checkpoint_dir)?;
    let mut metrics_file = std::fs::OpenOptions::new()
        .create(true)
        .append(true)
        .open(&cfg.paths.metrics_file)?;
    if metrics_file.metadata()?.len() == 0 {
        writeln!(metrics_file, "{}", IterationMetrics::CSV_HEADER)?;
    }

    for i in 1..=cfg.train.iterations {
        let m = trainer.run_iteration()?;
        writeln!(metrics_file, "{}", m.csv_row())?;
        metrics_file.flush()?;
        println!(
            "iter {:>4}: return {:>8.4} | entropy_coef {:.4} | loss {:>9.4} | memo {}/{} | {:>6.2}s",
            m.iteration,
            m.mean_return,
            m.entropy_coef,
            m.total_loss,
            m.memo_hits,
            m.memo_misses,
            m.wall_time_s
        );
        let last = i == cfg.train.iterations;
        if last || (cfg.train.checkpoint_every > 0 && i % cfg.train.checkpoint_every == 0) {
            let name = if last {
                "final.json".to_string()
            } else {
                format!("iter{i:05}.json")
            };
            let path = cfg.paths.checkpoint_dir.join(name);
            checkpoint::save(
                &trainer.agent.model,
                TRANSFERABLE.iter().map(|s| s.to_string()).collect(),
                &path,
            )?;
            memo.save(&cfg.paths.memo_file)?;
            println!(
                "checkpointed {} and memo ({} records)",
                path.display(),
                memo.len()
            );
        }
    }
    Ok(())
}

fn print_greedy_report(name: &str, report: &GreedyReport, guarded: bool) {
    println!("program: {name}");
    println!("  baseline time: {:.6e}", report.baseline_time);
    for step in &report.trace.steps {
        let status = if step.legal {
            "legal"
        } else if step.structural {
            "structural"
        } else {
            "illegal"
        };
        println!(
            "  step {:>16} [{status}{}] reward {:+.4} time {:.6e}",
            step.desc,
            if step.memo_hit { ", memo" } else { "" },
            step.reward,
            step.time_after
        );
    }
    let (final_time, schedule) = if guarded {
        (report.baseline_time, "∅ (guarded)".to_string())
    } else {
        (report.final_time, canonical_key(&report.schedule))
    };
    println!("  schedule: {schedule}");
    println!(
        "  final time: {:.6e}  speedup: {:.3}x",
        final_time,
        report.baseline_time / final_time
    );
    println!("  policy inference: {:.3} ms", report.policy_time_s * 1e3);
}

fn cmd_optimize(
    cfg: &RunConfig,
    program_path: &Path,
    ckpt: &Path,
    guard: bool,
    trace_out: Option<&Path>,
) -> Result<()> {
    let text = std::fs::read_to_string(program_path)?;
    let program = parse_program(&text)?;
    let name = program.name.clone();
    let memo = load_or_new_memo(&cfg.paths.memo_file)?;
    let backend = cfg.evaluation_backend();
    let mut env = Env::new(program, backend, memo, cfg.env_config())?;
    let mut agent = agent_from_checkpoint(ckpt, cfg.ppo.to_hyperparams(), cfg.seed)?;
    let report = greedy_rollout(&mut agent, &mut env)?;
    let guarded = guard && report.final_time > report.baseline_time;
    print_greedy_report(&name, &report, guarded);
    memo.save(&cfg.paths.memo_file)?;
    if let Some(path) = trace_out {
        let mut f = std::fs::OpenOptions::new()
            .create(true)
            .append(true)
            .open(path)?;
        writeln!(f, "{}", serde_json::to_string(&report.trace)?)?;
        println!("  trace appended to {}", path.display());
    }
    Ok(())
}

fn cmd_bench(
    cfg: &RunConfig,
    ckpt: &Path,
    guard: bool,
    scale: i64,
    csv: Option<&Path>,
) -> Result<()> {
    let memo = load_or_new_memo(&cfg.paths.memo_file)?;
    let backend = cfg.evaluation_backend();
    let mut agent = agent_from_checkpoint(ckpt, cfg.ppo.to_hyperparams(), cfg.seed)?;
    let mut rows: Vec<(String, f64, f64, f64, String)> = Vec::new();
    for program in benchmark_suite_sized(scale) {
        let name = program.name.clone();
        let mut env = Env::new(program, backend.clone(), memo.clone(), cfg.env_config())?;
        let report = greedy_rollout(&mut agent, &mut env)?;
        let guarded = guard && report.final_time > report.baseline_time;
        let (final_time, schedule) = if guarded {
            (report.baseline_time, "∅".to_string())
        } else {
            (report.final_time, canonical_key(&report.schedule))
        };
        rows.push((
            name,
            report.baseline_time,
            final_time,
            report.baseline_time / final_time,
            schedule,
        ));
    }
    memo.save(&cfg.paths.memo_file)?;
    let geomean = (rows.iter().map(|r| r.3.ln()).sum::<f64>() / rows.len().max(1) as f64).exp();
    println!(
        "{:<10} {:>14} {:>14} {:>9}  schedule",
        "benchmark", "baseline", "optimized", "speedup"
    );
    for (name, base, opt, speedup, schedule) in &rows {
        println!("{name:<10} {base:>14.6e} {opt:>14.6e} {speedup:>8.3}x  {schedule}");
    }
    println!("{:<10} {:>14} {:>14} {geomean:>8.3}x", "geo mean", "", "");
    if let Some(path) = csv {
        let mut out = String::from("benchmark,baseline_time,optimized_time,speedup,schedule\n");
        for (name, base, opt, speedup, schedule) in &rows {
            out.push_str(&format!("{name},{base},{opt},{speedup},\"{schedule}\"\n"));
        }
        out.push_str(&format!("geo mean,,,{geomean},\n"));
        std::fs::write(path, out)?;
        println!("table written to {}", path.display());
    }
    Ok(())
}

fn cmd_memo_stats(path: &Path) -> Result<()> {
    let store = MemoStore::load(path)?;
    println!("store: {} records ({})", store.len(), path.display());
    println!(
        "session lookups: {} hits / {} misses",
        store.stats().hits,
        store.stats().misses
    );
    Ok(())
}

fn cmd_replay(cfg: &RunConfig, trace_path: &Path) -> Result<()> {
    let text = std::fs::read_to_string(trace_path)?;
    let corpus = load_corpus(&cfg.paths.programs_dir)?;
    let by_id: std::collections::HashMap<String, &Program> = corpus
        .iter()
        .map(|p| (nestrl::memo::program_id(p), p))
        .collect();
    let memo = load_or_new_memo(&cfg.paths.memo_file)?;
    let backend = cfg.training_backend();
    let mut traces = 0usize;
    let mut steps = 0usize;
    let mut mismatches = 0usize;
    let mut backend_calls = 0u64;
    for (lineno, line) in text.lines().enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        let trace: EpisodeTrace = serde_json::from_str(line)
            .with_context(|| format!("trace line {}", lineno + 1))?;
        let program = by_id
            .get(&trace.program_id)
            .ok_or_else(|| anyhow!("no corpus program with id {}", trace.program_id))?;
        let mut env = Env::new(
            (*program).clone(),
            backend.clone(),
            memo.clone(),
            cfg.env_config(),
        )?;
        env.reset()?;
        for step in &trace.steps {
            let result = env.step(step.action)?;
            steps += 1;
            if (result.reward - step.reward).abs() > 1e-9 {
                mismatches += 1;
            }
            if result.done {
                break;
            }
        }
        backend_calls += env.counters().backend_calls;
        traces += 1;
    }
    println!(
        "replayed {traces} traces / {steps} steps: {mismatches} reward mismatches, {backend_calls} backend calls"
    );
    if mismatches > 0 {
        bail!("{mismatches} steps diverged from the recorded rewards");
    }
    Ok(())
}

fn cmd_inspect(program_path: &Path, dump_obs: Option<&Path>) -> Result<()> {
    let text = std::fs::read_to_string(program_path)?;
    let program = parse_program(&text)?;
    let ast = build_ast(&program);
    let branches = enumerate_branches(&ast);
    println!(
        "program `{}`: {} computations, {} buffers",
        program.name,
        program.computations.len(),
        program.buffers.len()
    );
    fn print_node(program: &Program, ast: &nestrl::ir::Ast, id: usize, indent: usize) {
        let pad = "  ".repeat(indent);
        match &ast.node(id).kind {
            NodeKind::Iter {
                name,
                lower,
                upper,
                level,
            } => {
                println!("{pad}for {name} in {lower}..{upper}  (level {level}, node {id})");
                for &c in &ast.node(id).children {
                    print_node(program, ast, c, indent + 1);
                }
            }
            NodeKind::Comp { comp } => {
                println!(
                    "{pad}[{}] writes {}",
                    program.computations[*comp].id,
                    program.buffers[program.computations[*comp].write.buffer].name
                );
            }
        }
    }
    for &root in &ast.roots {
        print_node(&program, &ast, root, 0);
    }
    println!("branches:");
    for b in &branches {
        println!(
            "  {}: path {:?} computations {:?}",
            b.index, b.path, b.comps
        );
    }
    let deps = nestrl::legality::compute_dependences(&program);
    println!("dependences: {}", deps.len());
    for d in &deps.deps {
        println!("  c{} -> c{} ({:?}) {:?}", d.src, d.snk, d.kind, d.dist);
    }
    if let Some(dir) = dump_obs {
        std::fs::create_dir_all(dir)?;
        let layout = FeatureLayout::default();
        let obs = featurize(&program, &ast, &branches, 0, &TagMap::new(), &layout)?;
        let mut x = String::new();
        for row in &obs.x {
            x.push_str(
                &row.iter()
                    .map(|v| v.to_string())
                    .collect::<Vec<_>>()
                    .join(","),
            );
            x.push('\n');
        }
        std::fs::write(dir.join("X.csv"), x)?;
        let mut e = String::from("parent,child\n");
        for (a, b) in &obs.edges {
            e.push_str(&format!("{a},{b}\n"));
        }
        std::fs::write(dir.join("E.csv"), e)?;
        println!("observation dumped to {}", dir.display());
    }
    Ok(())
}
