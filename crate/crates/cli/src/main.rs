mod config;

use std::fs;
use std::io::BufWriter;
use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::sync::Arc;
use std::time::{Duration, Instant};

use anyhow::{bail, Context, Result};
use clap::{value_parser, Arg, ArgAction, ArgMatches, Command};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use lanedqn::bridge::{client_probe, percentile, ServeConfig, Server};
use lanedqn::camera::{render, RawImage};
use lanedqn::dqn::{batch_tensor, run_training, JitterMode, LaneVisionEnv};
use lanedqn::eval::{action_histogram, export_path_overlay, run_success_trials, Driver, NetDriver, OracleDriver, OverlayStyle};
use lanedqn::nn::{NetSpec, PolicyNet};
use lanedqn::preproc::preprocess;
use lanedqn::sim::{maps, Pose};

use config::{profile_in_file, read_file, ConfigError, Profile, RunConfig, KEYS};

const EXIT_USAGE: u8 = 1;
const EXIT_RUNTIME: u8 = 2;

/// `--profile`, `--config` and one flag per configuration key.
fn with_config_args(cmd: Command) -> Command {
    let cmd = cmd
        .arg(Arg::new("profile").long("profile").value_name("NAME").help("Base profile: paper or desk [default: desk]"))
        .arg(Arg::new("config").long("config").value_name("FILE").value_parser(value_parser!(PathBuf)).help("key = value file applied over the profile"));
    KEYS.iter().fold(cmd, |cmd, k| {
        cmd.arg(Arg::new(k.key).long(k.flag).value_name("VALUE").help(k.help).help_heading("Configuration"))
    })
}

fn cli() -> Command {
    Command::new("lanedqn")
        .about("Train, evaluate and serve a camera-based lane-following DQN")
        .version(env!("CARGO_PKG_VERSION"))
        .subcommand_required(true)
        .arg_required_else_help(true)
        .subcommand(
            with_config_args(Command::new("train").about("Train a policy in the simulator"))
                .arg(Arg::new("run-name").long("run-name").value_name("NAME").help("Run directory name [default: UTC timestamp]"))
                .arg(Arg::new("dry-run").long("dry-run").action(ArgAction::SetTrue).help("Print the resolved configuration and exit")),
        )
        .subcommand(
            with_config_args(Command::new("eval").about("Count completed laps from random spawns"))
                .arg(Arg::new("weights").long("weights").value_name("FILE").value_parser(value_parser!(PathBuf)).help("Policy weights"))
                .arg(Arg::new("oracle").long("oracle").action(ArgAction::SetTrue).conflicts_with("weights").help("Drive with the ground-truth controller"))
                .arg(Arg::new("trials").long("trials").value_name("N").default_value("50").value_parser(value_parser!(usize)))
                .arg(Arg::new("label").long("label").value_name("TEXT").help("Row label [default: map name]"))
                .arg(Arg::new("report").long("report").value_name("FILE").value_parser(value_parser!(PathBuf)).help("Write the report as .json or .csv"))
                .arg(Arg::new("overlays").long("overlays").value_name("DIR").value_parser(value_parser!(PathBuf)).help("Write one top-down path image per trial"))
                .arg(Arg::new("histogram").long("histogram").value_name("FILE").value_parser(value_parser!(PathBuf)).help("Write the action-confidence histogram as CSV")),
        )
        .subcommand(
            Command::new("bench")
                .about("Time single-observation forward passes")
                .arg(Arg::new("iterations").long("iterations").value_name("N").default_value("1000").value_parser(value_parser!(usize)))
                .arg(Arg::new("warmup").long("warmup").value_name("N").default_value("10").value_parser(value_parser!(usize)))
                .arg(Arg::new("seed").long("seed").value_name("N").default_value("0").value_parser(value_parser!(u64))),
        )
        .subcommand(
            with_config_args(Command::new("serve").about("Serve greedy actions over TCP"))
                .arg(Arg::new("weights").long("weights").value_name("FILE").required(true).value_parser(value_parser!(PathBuf)))
                .arg(Arg::new("listen").long("listen").value_name("ADDR").default_value("127.0.0.1:7878")),
        )
        .subcommand(
            Command::new("probe")
                .about("Send frames to a server and report latency")
                .arg(Arg::new("addr").long("addr").value_name("ADDR").default_value("127.0.0.1:7878"))
                .arg(Arg::new("count").long("count").value_name("N").default_value("100").value_parser(value_parser!(usize)))
                .arg(Arg::new("image").long("image").value_name("FILE").value_parser(value_parser!(PathBuf)).help("Frame to send [default: a rendered 640x480 view]"))
                .arg(Arg::new("timeout-ms").long("timeout-ms").value_name("MS").default_value("5000").value_parser(value_parser!(u64))),
        )
        .subcommand(
            with_config_args(Command::new("render-preview").about("Render one camera view and its preprocessed frame"))
                .arg(Arg::new("x").long("x").required(true).value_parser(value_parser!(f64)).allow_negative_numbers(true))
                .arg(Arg::new("y").long("y").required(true).value_parser(value_parser!(f64)).allow_negative_numbers(true))
                .arg(Arg::new("heading").long("heading").value_name("RAD").default_value("0").value_parser(value_parser!(f64)).allow_negative_numbers(true))
                .arg(Arg::new("out").long("out").value_name("DIR").default_value(".").value_parser(value_parser!(PathBuf))),
        )
}

/// Profile defaults, then the config file, then flags.
fn resolve_config(m: &ArgMatches) -> Result<RunConfig, ConfigError> {
    let file = m.get_one::<PathBuf>("config").map(|p| read_file(p)).transpose()?;
    let profile = match m.get_one::<String>("profile") {
        Some(p) => Profile::parse(p)?,
        None => file.as_deref().map(profile_in_file).transpose()?.flatten().unwrap_or(Profile::Desk),
    };
    let mut cfg = RunConfig::for_profile(profile);
    if let Some(text) = &file {
        cfg.apply_file(text)?;
    }
    for k in KEYS {
        if let Some(v) = m.get_one::<String>(k.key) {
            cfg.set(k.key, v)?;
        }
    }
    cfg.validate()?;
    Ok(cfg)
}

fn load_net(path: &Path, cfg: &RunConfig) -> Result<Arc<PolicyNet<f32>>> {
    let net = PolicyNet::<f32>::load_weights(path).with_context(|| format!("loading {}", path.display()))?;
    let want = cfg.preproc.observation_shape();
    if net.spec().input != want {
        bail!("{} expects input {:?} but the {} profile produces {:?}", path.display(), net.spec().input, cfg.profile.name(), want);
    }
    Ok(Arc::new(net))
}

fn cmd_train(m: &ArgMatches, cfg: RunConfig) -> Result<()> {
    let name = match m.get_one::<String>("run-name") {
        Some(n) => n.clone(),
        None => chrono::Utc::now().format("%Y%m%d-%H%M%S").to_string(),
    };
    let dir = cfg.output_dir.join(&name);
    if m.get_flag("dry-run") {
        println!("# run directory: {}", dir.display());
        print!("{}", cfg.render());
        return Ok(());
    }
    if dir.exists() && fs::read_dir(&dir)?.next().is_some() {
        bail!("run directory {} already exists and is not empty", dir.display());
    }
    let map = Arc::new(cfg.load_map().map_err(anyhow::Error::msg)?);
    fs::create_dir_all(&dir)?;
    fs::write(dir.join("config.txt"), cfg.render())?;
    let jitter = if cfg.jitter { JitterMode::Random(cfg.jitter_ranges) } else { JitterMode::Off };
    let mut env = LaneVisionEnv::new(map, cfg.sim_config(), cfg.perception()).with_jitter(jitter);
    let tc = cfg.train_config();
    eprintln!("training {} steps into {}", tc.total_timesteps, dir.display());
    let mut last = Instant::now();
    let mut recent = Vec::new();
    let out = run_training::<f32, _>(&mut env, cfg.net_spec(), &tc, Some(&dir), |e| {
        recent.push(e.ret);
        if last.elapsed() >= Duration::from_secs(30) {
            let n = recent.len().min(20);
            let mean = recent[recent.len() - n..].iter().sum::<f64>() / n as f64;
            eprintln!("step {:>8}  episode {:>5}  mean return (last {n}) {mean:.1}", e.start_step + e.length, e.index);
            last = Instant::now();
        }
    })?;
    println!(
        "trained {} steps, {} episodes, {} updates in {:.0}s; weights at {}",
        tc.total_timesteps,
        out.log.episodes.len(),
        out.log.updates.len(),
        out.wall_clock_secs,
        dir.join("weights.ldqw").display()
    );
    Ok(())
}

fn cmd_eval(m: &ArgMatches, cfg: RunConfig) -> Result<()> {
    let map = Arc::new(cfg.load_map().map_err(anyhow::Error::msg)?);
    let trials = *m.get_one::<usize>("trials").expect("has default");
    let label = m.get_one::<String>("label").cloned().unwrap_or_else(|| cfg.map.clone());
    let mut driver: Box<dyn Driver> = if m.get_flag("oracle") {
        Box::new(OracleDriver::default())
    } else {
        let Some(w) = m.get_one::<PathBuf>("weights") else { bail!("eval needs --weights or --oracle") };
        Box::new(NetDriver::new(load_net(w, &cfg)?, cfg.perception())?)
    };
    let report = run_success_trials(&label, &map, &cfg.sim_config(), driver.as_mut(), trials, cfg.seed)?;

    if let Some(path) = m.get_one::<PathBuf>("report") {
        let f = BufWriter::new(fs::File::create(path).with_context(|| path.display().to_string())?);
        if path.extension().is_some_and(|e| e.eq_ignore_ascii_case("csv")) {
            report.write_csv(f)?;
        } else {
            report.write_json(f)?;
        }
    }
    if let Some(dir) = m.get_one::<PathBuf>("overlays") {
        fs::create_dir_all(dir)?;
        for (i, t) in report.trials.iter().enumerate() {
            export_path_overlay(&t.trace, &map, dir.join(format!("trial_{i:03}.png")), &OverlayStyle::default())?;
        }
    }
    if let Some(path) = m.get_one::<PathBuf>("histogram") {
        let q: Vec<[f32; 3]> = report.trials.iter().flat_map(|t| t.q_values.iter().copied()).collect();
        if q.is_empty() && trials > 0 {
            bail!("no Q-values to histogram; the oracle driver has none");
        }
        action_histogram(&q).write_csv(BufWriter::new(fs::File::create(path)?))?;
    }
    println!("| map | trials | laps | success |");
    println!("|---|---|---|---|");
    println!("{}", report.table_row());
    Ok(())
}

fn cmd_bench(m: &ArgMatches) -> Result<()> {
    let iterations = *m.get_one::<usize>("iterations").expect("has default");
    let warmup = *m.get_one::<usize>("warmup").expect("has default");
    let seed = *m.get_one::<u64>("seed").expect("has default");
    println!("| profile | input | iterations | median ms | p99 ms |");
    println!("|---|---|---|---|---|");
    for (name, spec) in [("paper", NetSpec::paper()), ("desk", NetSpec::desk())] {
        let shape = spec.input;
        let net = PolicyNet::<f32>::new(spec, seed)?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let obs: Vec<f32> = (0..shape.iter().product::<usize>()).map(|_| if rng.gen::<bool>() { 1.0 } else { 0.0 }).collect();
        let input = batch_tensor::<f32>(&obs, 1, shape)?;
        let times = if iterations == 0 {
            Vec::new()
        } else {
            for _ in 0..warmup {
                net.predict(&input)?;
            }
            let mut t: Vec<u64> = (0..iterations)
                .map(|_| {
                    let s = Instant::now();
                    let q = net.predict(&input).expect("shape checked");
                    std::hint::black_box(q);
                    s.elapsed().as_nanos() as u64
                })
                .collect();
            t.sort_unstable();
            t
        };
        let ms = |v: Option<u64>| v.map_or("-".to_string(), |ns| format!("{:.3}", ns as f64 / 1e6));
        println!(
            "| {name} | {}x{}x{} | {iterations} | {} | {} |",
            shape[0],
            shape[1],
            shape[2],
            ms(percentile(&times, 50.0)),
            ms(percentile(&times, 99.0))
        );
    }
    Ok(())
}

fn cmd_serve(m: &ArgMatches, cfg: RunConfig) -> Result<()> {
    let net = load_net(m.get_one::<PathBuf>("weights").expect("required"), &cfg)?;
    let listen = m.get_one::<String>("listen").expect("has default");
    let server = Server::bind(listen.as_str(), net, ServeConfig::new(cfg.preproc))?;
    println!("listening on {}", server.local_addr()?);
    server.run();
    Ok(())
}

fn cmd_probe(m: &ArgMatches) -> Result<()> {
    let addr = m.get_one::<String>("addr").expect("has default");
    let count = *m.get_one::<usize>("count").expect("has default");
    let timeout = Duration::from_millis(*m.get_one::<u64>("timeout-ms").expect("has default"));
    let image = match m.get_one::<PathBuf>("image") {
        Some(p) => RawImage::load(p).with_context(|| p.display().to_string())?,
        None => {
            let map = maps::small_loop();
            let t = map.circuit()[0];
            let ((x, y), (tx, ty)) = map.point_at(t, 0.5, -0.1);
            render(&map, &Pose { x, y, heading: ty.atan2(tx) }, &lanedqn::camera::CameraConfig::default(), None)
        }
    };
    let stats = client_probe(addr.as_str(), &image, count, timeout)?;
    println!("{}", serde_json::to_string_pretty(&stats)?);
    Ok(())
}

fn cmd_render_preview(m: &ArgMatches, cfg: RunConfig) -> Result<()> {
    let map = cfg.load_map().map_err(anyhow::Error::msg)?;
    let pose = Pose {
        x: *m.get_one::<f64>("x").expect("required"),
        y: *m.get_one::<f64>("y").expect("required"),
        heading: *m.get_one::<f64>("heading").expect("has default"),
    };
    if !pose.heading.is_finite() || !map.lane_query(&pose).on_track {
        bail!("pose ({}, {}, {}) is not on the road of map `{}`", pose.x, pose.y, pose.heading, cfg.map);
    }
    let out = m.get_one::<PathBuf>("out").expect("has default");
    fs::create_dir_all(out)?;
    let raw = render(&map, &pose, &cfg.camera, None);
    let frame = preprocess(&raw, &cfg.preproc)?;
    raw.save(out.join("raw.png"))?;
    frame.to_image().save(out.join("preprocessed.png"))?;
    println!("wrote {} and {}", out.join("raw.png").display(), out.join("preprocessed.png").display());
    Ok(())
}

fn main() -> ExitCode {
    let matches = match cli().try_get_matches() {
        Ok(m) => m,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { ExitCode::from(EXIT_USAGE) } else { ExitCode::SUCCESS };
        }
    };
    let (name, sub) = matches.subcommand().expect("subcommand is required");
    let cfg = match name {
        "bench" | "probe" => None,
        _ => match resolve_config(sub) {
            Ok(c) => Some(c),
            Err(e) => {
                eprintln!("error: {e}");
                return ExitCode::from(EXIT_USAGE);
            }
        },
    };
    let result = match (name, cfg) {
        ("train", Some(c)) => cmd_train(sub, c),
        ("eval", Some(c)) => cmd_eval(sub, c),
        ("serve", Some(c)) => cmd_serve(sub, c),
        ("render-preview", Some(c)) => cmd_render_preview(sub, c),
        ("bench", _) => cmd_bench(sub),
        ("probe", _) => cmd_probe(sub),
        _ => unreachable!("unknown subcommand"),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(EXIT_RUNTIME)
        }
    }
}
