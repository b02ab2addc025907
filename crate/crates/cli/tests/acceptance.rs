//! End-to-end acceptance run (custom harness). Prints one PASS/FAIL line per
//! criterion and exits non-zero if any criterion fails.

use std::collections::BTreeMap;
use std::path::Path;
use std::process::Command;
use std::sync::Arc;
use std::time::{Duration, Instant};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use lanedqn::bridge::{Client, CommandMessage, ErrorMessage, FrameMessage, LocalPipeline, Reply, ServeConfig, Server};
use lanedqn::camera::{render, RawImage};
use lanedqn::dqn::{argmax, batch_tensor, optimal_actions, run_training, GridWorld, LaneVisionEnv, Perception, SingleStateMdp, TrainConfig};
use lanedqn::eval::{run_success_trials, run_trial, NetDriver, OracleDriver};
use lanedqn::nn::{NetSpec, PolicyNet, Tensor};
use lanedqn::preproc::{preprocess, FrameStack, PreprocConfig};
use lanedqn::sim::{compute_reward, maps, sample_spawn, LaneEnv, LaneInfo, RewardInputs, SimConfig, OFF_TRACK_REWARD};
use lanedqn::testkit::full_battery;

type Outcome = Result<(bool, String), Box<dyn std::error::Error>>;

fn c1_gradients() -> Outcome {
    let t = Instant::now();
    let checks = full_battery(200, 11)?;
    let secs = t.elapsed().as_secs_f64();
    let worst = checks.iter().map(|c| c.max_rel_err).fold(0.0, f64::max);
    // tensors smaller than 200 entries are probed exhaustively
    let probes_ok = checks.iter().all(|c| c.probes == (c.population - c.kinks_skipped).min(200) && c.probes > 0);
    let full = checks.iter().filter(|c| c.probes >= 200).count();
    let skipped: usize = checks.iter().map(|c| c.kinks_skipped).sum();
    let ok = checks.iter().all(|c| c.passes(1e-5)) && probes_ok && secs < 120.0;
    Ok((
        ok,
        format!("{} tensors ({full} with 200 probes, rest exhaustive), {skipped} kink-straddling probes replaced, max rel err {worst:.2e}, {secs:.1}s", checks.len()),
    ))
}

fn c2_dqn_oracles() -> Outcome {
    let t = Instant::now();
    let mut grid = GridWorld::new(5, 100);
    let cfg = TrainConfig {
        lr: 1e-3,
        buffer_capacity: 10_000,
        learning_starts: 1_000,
        total_timesteps: 20_000,
        max_episode_steps: 100,
        checkpoint_every: 0,
        seed: 1,
        ..TrainConfig::paper()
    };
    let out = run_training::<f32, _>(&mut grid, NetSpec::mlp(25, vec![64], 4), &cfg, None, |_| {})?;
    let q_star = grid.value_iteration(cfg.gamma);
    let mut matched = 0;
    for s in 0..grid.goal() {
        let q = out.net.predict(&Tensor::from_vec(&[1, 1, 1, 25], grid.one_hot(s))?)?;
        if optimal_actions(&q_star[s], 1e-9).contains(&argmax(q.row(0))) {
            matched += 1;
        }
    }
    let grid_secs = t.elapsed().as_secs_f64();

    let t = Instant::now();
    let mut mdp = SingleStateMdp::new(200);
    let cfg = TrainConfig {
        lr: 1e-2,
        learning_starts: 100,
        total_timesteps: 30_000,
        target_update_every: 20,
        buffer_capacity: 1_000,
        max_episode_steps: 200,
        checkpoint_every: 0,
        ..TrainConfig::paper()
    };
    let out = run_training::<f64, _>(&mut mdp, NetSpec::mlp(1, vec![], 1), &cfg, None, |_| {})?;
    let q = out.net.predict(&Tensor::from_vec(&[1, 1, 1, 1], vec![1.0])?)?.data()[0];
    let mdp_secs = t.elapsed().as_secs_f64();
    // geometric series 1 / (1 - gamma)
    let target = 1.0 / (1.0 - cfg.gamma);

    let frac = matched as f64 / grid.goal() as f64;
    let ok = frac >= 0.95 && (q - target).abs() <= 1.0 && grid_secs < 300.0;
    Ok((ok, format!("gridworld {matched}/{} optimal ({grid_secs:.0}s), single-state Q {q:.3} vs {target:.1} ({mdp_secs:.0}s)", grid.goal())))
}

fn c3_reward() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let mut worst_ulps = 0.0f64;
    for _ in 0..10_000 {
        let inputs = RewardInputs {
            speed: rng.gen_range(-0.5..0.5),
            dist: rng.gen_range(-0.25..0.25),
            dot_dir: rng.gen_range(-1.0..=1.0),
            col_pen: if rng.gen_bool(0.2) { -rng.gen_range(0.0..=1.0) } else { 0.0 },
        };
        let lane = LaneInfo { dist: inputs.dist, dot_dir: inputs.dot_dir, in_right_lane: true, on_track: true, tangent: (1.0, 0.0), tile: None };
        let got = compute_reward(&inputs, &lane);
        // summed in the opposite order so rounding differs
        let terms = [400.0 * inputs.col_pen, -(100.0 * inputs.dist.abs()), 10.0 * inputs.speed * inputs.dot_dir];
        let want = terms[0] + terms[1] + terms[2];
        let unit = f64::EPSILON * terms.iter().map(|t| t.abs()).sum::<f64>().max(f64::MIN_POSITIVE);
        worst_ulps = worst_ulps.max((got - want).abs() / unit);
    }

    let map = Arc::new(maps::small_loop());
    let mut env = LaneEnv::new(map.clone(), SimConfig::default());
    let mut terminations = 0;
    let mut off_track_ok = true;
    for _ in 0..200 {
        env.reset(&mut rng)?;
        let turn = rng.gen_range(0..3);
        loop {
            let action = if rng.gen_bool(0.7) { turn } else { rng.gen_range(0..3) };
            let s = env.step(action)?;
            if !s.lane.on_track {
                off_track_ok &= s.reward == OFF_TRACK_REWARD && s.terminated && s.done;
            } else {
                off_track_ok &= !s.terminated;
            }
            if s.done {
                terminations += s.terminated as usize;
                break;
            }
        }
    }
    let ok = worst_ulps <= 1.0 && off_track_ok && terminations > 0 && OFF_TRACK_REWARD == -40.0;
    Ok((ok, format!("max deviation {worst_ulps:.2} rounding units over 10^4 inputs; {terminations} off-track exits, all -40 and terminal: {off_track_ok}")))
}

fn c4_desk_training() -> Result<(bool, String, Arc<PolicyNet<f32>>), Box<dyn std::error::Error>> {
    let map = Arc::new(maps::small_loop());
    let sim = SimConfig::default();
    let cfg = TrainConfig { total_timesteps: 30_000, checkpoint_every: 0, seed: 7, ..TrainConfig::desk() };
    let mut env = LaneVisionEnv::new(map.clone(), sim, Perception::desk());
    let t = Instant::now();
    let out = run_training::<f32, _>(&mut env, NetSpec::desk(), &cfg, None, |_| {})?;
    let train_secs = t.elapsed().as_secs_f64();
    let net = Arc::new(out.net);
    let mut driver = NetDriver::new(net.clone(), Perception::desk())?;
    let report = run_success_trials("small_loop", &map, &sim, &mut driver, 20, 2024)?;
    let ok = report.success_rate >= 0.7 && cfg.total_timesteps <= 100_000 && train_secs < 7200.0;
    let msg = format!("{}/20 laps after {} steps ({train_secs:.0}s training)", report.successes, cfg.total_timesteps);
    Ok((ok, msg, net))
}

fn c5_oracle_harness() -> Outcome {
    let sim = SimConfig::default();
    let mut parts = Vec::new();
    let mut ok = sim.max_episode_steps == 2500;
    for name in ["map_a", "map_b", "map_c"] {
        let map = Arc::new(maps::by_name(name).expect("bundled map"));
        let r = run_success_trials(name, &map, &sim, &mut OracleDriver::default(), 50, 5)?;
        ok &= r.successes == 50;
        parts.push(format!("{name} {}/50", r.successes));
    }
    Ok((ok, parts.join(", ")))
}

fn c6_latency() -> Outcome {
    let spec = NetSpec::paper();
    let shape = spec.input;
    let net = PolicyNet::<f32>::new(spec, 6)?;
    let mut rng = ChaCha8Rng::seed_from_u64(6);
    let obs: Vec<f32> = (0..shape.iter().product::<usize>()).map(|_| rng.gen_range(0..2) as f32).collect();
    let input = batch_tensor::<f32>(&obs, 1, shape)?;
    for _ in 0..10 {
        net.predict(&input)?;
    }
    let mut times = Vec::with_capacity(1000);
    for _ in 0..1000 {
        let t = Instant::now();
        std::hint::black_box(net.predict(&input)?);
        times.push(t.elapsed().as_secs_f64() * 1e3);
    }
    times.sort_by(f64::total_cmp);
    let median = (times[499] + times[500]) / 2.0;
    Ok((median <= 10.0, format!("median {median:.2} ms, p99 {:.2} ms over 1000 forward passes", times[989])))
}

fn dir_contents(root: &Path) -> BTreeMap<String, Vec<u8>> {
    fn walk(root: &Path, dir: &Path, out: &mut BTreeMap<String, Vec<u8>>) {
        for e in std::fs::read_dir(dir).unwrap() {
            let p = e.unwrap().path();
            if p.is_dir() {
                walk(root, &p, out);
            } else if p.file_name().unwrap() != "timing.json" {
                out.insert(p.strip_prefix(root).unwrap().display().to_string(), std::fs::read(&p).unwrap());
            }
        }
    }
    let mut out = BTreeMap::new();
    walk(root, root, &mut out);
    out
}

fn run_cli(args: &[&str], out_dir: &Path) -> Result<(), String> {
    let o = Command::new(env!("CARGO_BIN_EXE_lanedqn")).args(args).env("LANEDQN_OUTPUT_DIR", out_dir).output().map_err(|e| e.to_string())?;
    if o.status.success() {
        Ok(())
    } else {
        Err(format!("{args:?} failed: {}", String::from_utf8_lossy(&o.stderr)))
    }
}

fn c7_determinism() -> Outcome {
    let tmp = tempfile::tempdir()?;
    let train = |name: &str| {
        run_cli(
            &["train", "--profile", "desk", "--seed", "7", "--total-timesteps", "1000", "--learning-starts", "200", "--checkpoint-every", "250", "--run-name", name],
            tmp.path(),
        )
    };
    train("a")?;
    train("b")?;
    let a = dir_contents(&tmp.path().join("a"));
    let b = dir_contents(&tmp.path().join("b"));
    let train_ok = a == b && a.keys().any(|k| k.ends_with(".ldqw")) && a.contains_key("log.jsonl");

    let weights = tmp.path().join("a/weights.ldqw");
    let eval = |report: &str| {
        let report = tmp.path().join(report);
        run_cli(
            &["eval", "--profile", "desk", "--weights", weights.to_str().unwrap(), "--trials", "5", "--seed", "7", "--report", report.to_str().unwrap()],
            tmp.path(),
        )?;
        std::fs::read(report).map_err(|e| e.to_string())
    };
    let ra = eval("ra.json")?;
    let rb = eval("rb.json")?;
    let ok = train_ok && ra == rb;
    Ok((ok, format!("{} run files identical: {train_ok}; eval reports identical: {}", a.len(), ra == rb)))
}

fn recorded_rollout(perception: &Perception, frames: usize) -> Result<Vec<RawImage>, Box<dyn std::error::Error>> {
    let map = Arc::new(maps::small_loop());
    let sim = SimConfig::default();
    let mut rng = ChaCha8Rng::seed_from_u64(8);
    let mut out = Vec::with_capacity(frames);
    while out.len() < frames {
        let spawn = sample_spawn(&map, &sim.spawn, &mut rng)?;
        let trial = run_trial(&map, &sim, spawn, &mut OracleDriver::default())?;
        for pose in trial.trace.iter().take(frames - out.len()) {
            out.push(render(&map, pose, &perception.camera, None));
        }
    }
    Ok(out)
}

fn random_message_roundtrips(n: usize) -> Result<usize, String> {
    let mut rng = ChaCha8Rng::seed_from_u64(88);
    for i in 0..n {
        match i % 3 {
            0 => {
                let (w, h) = (rng.gen_range(0..24u16), rng.gen_range(0..24u16));
                let payload = (0..3 * w as usize * h as usize).map(|_| rng.gen()).collect();
                let f = FrameMessage::rgb24(w, h, payload);
                if FrameMessage::decode(&f.encode()).map_err(|e| e.to_string())? != f {
                    return Err(format!("frame {i} changed"));
                }
            }
            1 => {
                let r = Reply::Command(CommandMessage { v_left: rng.gen(), v_right: rng.gen(), action: rng.gen(), inference_us: rng.gen() });
                if Reply::decode(&r.encode()).map_err(|e| e.to_string())? != r {
                    return Err(format!("command {i} changed"));
                }
            }
            _ => {
                let len = rng.gen_range(0..64);
                let message: String = (0..len).map(|_| rng.gen::<char>()).collect();
                let r = Reply::Error(ErrorMessage { code: rng.gen(), message });
                if Reply::decode(&r.encode()).map_err(|e| e.to_string())? != r {
                    return Err(format!("error {i} changed"));
                }
            }
        }
    }
    Ok(n)
}

fn c8_bridge(net: Arc<PolicyNet<f32>>) -> Outcome {
    let perception = Perception::desk();
    let frames = recorded_rollout(&perception, 500)?;
    let server = Server::bind("127.0.0.1:0", net.clone(), ServeConfig::new(perception.preproc))?.spawn()?;
    let mut client = Client::connect(server.addr(), Duration::from_secs(10))?;
    let mut local = LocalPipeline::new(net, perception.preproc)?;
    let mut mismatches = 0;
    let mut counts = [0usize; 3];
    for f in &frames {
        let remote = client.send(f)?.action as usize;
        let (action, _) = local.infer(f)?;
        mismatches += (remote != action) as usize;
        counts[action] += 1;
    }
    drop(client);
    server.shutdown();
    let roundtrips = random_message_roundtrips(10_000)?;
    Ok((mismatches == 0, format!("{} frames, {mismatches} mismatches, actions {counts:?}; {roundtrips} random messages round-trip", frames.len())))
}

fn c9_preprocessing() -> Outcome {
    let cfg = PreprocConfig::paper();
    let mut rng = ChaCha8Rng::seed_from_u64(9);
    let (w, h) = (640, 480);
    let protected = cfg.first_source_row(h);
    let mut stack = FrameStack::new(cfg.k);
    let mut ok = true;
    let mut shape = [0; 3];
    for _ in 0..100 {
        let mut img = RawImage::new(w, h, (0..3 * w * h).map(|_| rng.gen()).collect())?;
        let frame = preprocess(&img, &cfg)?;
        ok &= frame.data.iter().all(|v| (0.0..=1.0).contains(v));
        ok &= frame.data.chunks(3).all(|p| p[2] == 0.0);
        for b in &mut img.pixels[..3 * w * protected] {
            *b = rng.gen();
        }
        ok &= preprocess(&img, &cfg)?.data == frame.data;
        let obs = stack.push(frame)?;
        shape = obs.shape();
        ok &= obs.data.iter().all(|v| (0.0..=1.0).contains(v));
    }
    ok &= shape == [40, 80, 15];
    Ok((ok, format!("100 random 640x480 images, observation shape {shape:?}, rows 0..{protected} perturbed without effect")))
}

fn report(results: &mut Vec<(usize, &'static str, bool)>, n: usize, name: &'static str, outcome: Outcome) {
    let (ok, detail) = outcome.unwrap_or_else(|e| (false, format!("error: {e}")));
    println!("criterion {n} [{}] {name}: {detail}", if ok { "PASS" } else { "FAIL" });
    results.push((n, name, ok));
}

fn main() -> std::process::ExitCode {
    let mut results = Vec::new();
    report(&mut results, 1, "gradient correctness", c1_gradients());
    report(&mut results, 2, "DQN oracle equivalence", c2_dqn_oracles());
    report(&mut results, 3, "reward exactness", c3_reward());
    let (c4, net) = match c4_desk_training() {
        Ok((ok, msg, net)) => (Ok((ok, msg)), Some(net)),
        Err(e) => (Err(e), None),
    };
    report(&mut results, 4, "desk-scale lane following", c4);
    report(&mut results, 5, "harness validity", c5_oracle_harness());
    report(&mut results, 6, "inference latency", c6_latency());
    report(&mut results, 7, "determinism", c7_determinism());
    let net = net.map(Ok).unwrap_or_else(|| PolicyNet::<f32>::new(NetSpec::desk(), 8).map(Arc::new));
    report(&mut results, 8, "bridge equivalence", net.map_err(Into::into).and_then(c8_bridge));
    report(&mut results, 9, "preprocessing contract", c9_preprocessing());
    let failed: Vec<_> = results.iter().filter(|r| !r.2).map(|r| format!("{} {}", r.0, r.1)).collect();
    if failed.is_empty() {
        println!("acceptance: all {} criteria passed", results.len());
        std::process::ExitCode::SUCCESS
    } else {
        println!("acceptance: failed criteria {failed:?}");
        std::process::ExitCode::FAILURE
    }
}
