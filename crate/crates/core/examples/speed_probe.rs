// quick speed probe for the full-size model
use nestrl::agent::{ActionMode, Agent, PpoHyperparams};
use nestrl::env::{Env, EnvConfig};
use nestrl::memo::MemoStore;
use nestrl::neural::{ActorCritic, ModelConfig};
use nestrl::runtime::SyntheticBackend;
use nestrl::workloads::{generate_random_program, GeneratorConfig};
use std::sync::Arc;
use std::time::Instant;

fn main() {
    let model = ActorCritic::new(ModelConfig::default(), 0);
    let program = generate_random_program(&GeneratorConfig {
        seed: 3,
        depth_range: (2, 3),
        comps_range: (2, 2),
        ..Default::default()
    });
    let mut env = Env::new(
        program,
        Arc::new(SyntheticBackend::default()),
        Arc::new(MemoStore::new()),
        EnvConfig::default(),
    )
    .unwrap();
    let obs = env.reset().unwrap();
    println!("graph nodes: {}", obs.node_count());

    let t = Instant::now();
    let n = 200;
    for _ in 0..n {
        let _ = model.forward(&obs).unwrap();
    }
    let fwd = t.elapsed().as_secs_f64() / n as f64;
    println!("forward: {:.3} ms", fwd * 1e3);

    // forward + backward
    let t = Instant::now();
    let mut grads = model.zeros_like();
    for _ in 0..n {
        let (logits, _, trace) = model.forward(&obs).unwrap();
        let d = vec![1.0 / logits.len() as f64; logits.len()];
        model.backward(&trace, &d, 1.0, &mut grads);
    }
    let fb = t.elapsed().as_secs_f64() / n as f64;
    println!("forward+backward: {:.3} ms", fb * 1e3);

    // one full training iteration estimate (batch 512, epochs 5, mb 64)
    let mut agent = Agent::new(model, PpoHyperparams::default(), 0);
    let t = Instant::now();
    let mut steps = 0;
    let mut o = env.reset().unwrap();
    while steps < 512 {
        let (a, _, _) = agent.select_action(&o, ActionMode::Sample).unwrap();
        let r = env.step(a).unwrap();
        steps += 1;
        o = match r.obs {
            Some(x) => x,
            None => env.reset().unwrap(),
        };
    }
    println!("rollout 512 steps: {:.2} s", t.elapsed().as_secs_f64());
    let per_iter_update = fb * 512.0 * 5.0;
    println!("estimated update time/iter: {:.2} s", per_iter_update);
}
