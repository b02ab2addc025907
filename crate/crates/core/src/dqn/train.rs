use std::fs;
use std::io::{BufWriter, Write};
use std::path::Path;
use std::time::Instant;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::envs::Environment;
use super::replay::{Batch, ReplayBuffer, Transition};
use super::{argmax, DqnError, TrainConfig};
use crate::nn::{AdamState, Gradients, NetSpec, NnError, PolicyNet, Tensor};
use crate::scalar::Scalar;

/// Flattened observations as a `[batch, h, w, c]` tensor.
pub fn batch_tensor<T: Scalar>(obs: &[f32], batch: usize, shape: [usize; 3]) -> Result<Tensor<T>, NnError> {
    Tensor::from_vec(&[batch, shape[0], shape[1], shape[2]], obs.iter().map(|&v| T::from_f32(v).unwrap()).collect())
}

/// `y_i = r_i + gamma * max_a Q_target(s'_i, a) * (1 - done_i)`.
pub fn td_targets<T: Scalar>(batch: &Batch, target: &PolicyNet<T>, gamma: f64) -> Result<Vec<T>, DqnError> {
    let shape = target.spec().input;
    let next_q = target.predict(&batch_tensor(&batch.next_obs, batch.size, shape)?)?;
    let gamma = T::from_f64_lossy(gamma);
    Ok((0..batch.size)
        .map(|i| {
            let row = next_q.row(i);
            let r = T::from_f32(batch.rewards[i]).unwrap();
            if batch.dones[i] {
                r
            } else {
                r + gamma * row[argmax(row)]
            }
        })
        .collect())
}

/// Huber loss (delta 1) on the taken actions, averaged over the batch, and
/// its gradient with respect to every Q output. Untaken actions get zero.
pub fn huber_loss_and_grad<T: Scalar>(q: &Tensor<T>, actions: &[usize], targets: &[T]) -> (T, Tensor<T>) {
    let b = actions.len();
    let n = q.shape()[1];
    let bt = T::from_usize(b).unwrap();
    let half = T::from_f64_lossy(0.5);
    let mut dq = Tensor::zeros(&[b, n]);
    let mut loss = T::zero();
    for i in 0..b {
        let e = q.row(i)[actions[i]] - targets[i];
        let ae = e.abs();
        if ae <= T::one() {
            loss += half * e * e;
            dq.data_mut()[i * n + actions[i]] = e / bt;
        } else {
            loss += ae - half;
            dq.data_mut()[i * n + actions[i]] = e.signum() / bt;
        }
    }
    (loss / bt, dq)
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct UpdateStats {
    pub loss: f64,
    /// The optimizer rejected a non-finite gradient and left the net unchanged.
    pub skipped: bool,
}

/// Sample a minibatch, compute targets with the frozen net, take one Adam step.
pub fn train_step<T: Scalar, R: Rng + ?Sized>(
    net: &mut PolicyNet<T>,
    target: &PolicyNet<T>,
    adam: &mut AdamState<T>,
    buffer: &ReplayBuffer,
    cfg: &TrainConfig,
    rng: &mut R,
) -> Result<UpdateStats, DqnError> {
    let batch = buffer.sample(cfg.batch_size, rng)?;
    let y = td_targets(&batch, target, cfg.gamma)?;
    let input = batch_tensor::<T>(&batch.obs, batch.size, net.spec().input)?;
    let (q, cache) = net.forward(&input)?;
    let (loss, dq) = huber_loss_and_grad(&q, &batch.actions, &y);
    let loss = loss.to_f64().unwrap();
    if !loss.is_finite() {
        return Ok(UpdateStats { loss, skipped: true });
    }
    let grads: Gradients<T> = net.backward(&cache, &dq)?;
    match adam.step(net, &grads) {
        Ok(()) => Ok(UpdateStats { loss, skipped: false }),
        Err(NnError::NonFiniteGradient) => Ok(UpdateStats { loss, skipped: true }),
        Err(e) => Err(e.into()),
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpisodeLog {
    pub index: u64,
    /// Global step at which the episode's first action was taken.
    pub start_step: u64,
    pub length: u64,
    #[serde(rename = "return")]
    pub ret: f64,
    pub terminated: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct UpdateLog {
    /// Number of environment steps taken when the update ran.
    pub step: u64,
    pub loss: f64,
    pub epsilon: f64,
    pub skipped: bool,
}

/// Everything a run produces except timing, so two runs can be compared
/// for equality.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct TrainLog {
    pub episodes: Vec<EpisodeLog>,
    pub updates: Vec<UpdateLog>,
    /// Reward of every environment step, in order.
    pub step_rewards: Vec<f64>,
    pub actions: Vec<u8>,
    pub target_syncs: u64,
}

impl TrainLog {
    /// Episodes whose returns are the exact running sum of their step rewards.
    pub fn returns_consistent(&self) -> bool {
        self.episodes.iter().all(|e| {
            let s = e.start_step as usize;
            let mut acc = 0.0;
            for r in &self.step_rewards[s..s + e.length as usize] {
                acc += r;
            }
            acc == e.ret
        })
    }

    pub fn write_csv(&self, dir: &Path) -> std::io::Result<()> {
        let mut w = BufWriter::new(fs::File::create(dir.join("episodes.csv"))?);
        writeln!(w, "episode,start_step,length,return,terminated")?;
        for e in &self.episodes {
            writeln!(w, "{},{},{},{},{}", e.index, e.start_step, e.length, e.ret, e.terminated as u8)?;
        }
        w.flush()?;
        let mut w = BufWriter::new(fs::File::create(dir.join("updates.csv"))?);
        writeln!(w, "step,loss,epsilon,skipped")?;
        for u in &self.updates {
            writeln!(w, "{},{},{},{}", u.step, u.loss, u.epsilon, u.skipped as u8)?;
        }
        w.flush()?;
        let mut w = BufWriter::new(fs::File::create(dir.join("steps.csv"))?);
        writeln!(w, "step,action,reward")?;
        for (i, (a, r)) in self.actions.iter().zip(&self.step_rewards).enumerate() {
            writeln!(w, "{},{},{}", i + 1, a, r)?;
        }
        w.flush()
    }

    pub fn write_jsonl(&self, path: &Path) -> Result<(), DqnError> {
        #[derive(Serialize)]
        #[serde(tag = "kind", rename_all = "lowercase")]
        enum Record<'a> {
            Episode(&'a EpisodeLog),
            Update(&'a UpdateLog),
        }
        let mut w = BufWriter::new(fs::File::create(path)?);
        // interleave by step so the file reads chronologically
        let (mut ei, mut ui) = (0, 0);
        while ei < self.episodes.len() || ui < self.updates.len() {
            let take_episode = match (self.episodes.get(ei), self.updates.get(ui)) {
                (Some(e), Some(u)) => e.start_step + e.length <= u.step,
                (Some(_), None) => true,
                _ => false,
            };
            let rec = if take_episode {
                ei += 1;
                Record::Episode(&self.episodes[ei - 1])
            } else {
                ui += 1;
                Record::Update(&self.updates[ui - 1])
            };
            serde_json::to_writer(&mut w, &rec)?;
            w.write_all(b"\n")?;
        }
        w.flush()?;
        Ok(())
    }
}

pub struct TrainOutcome<T> {
    pub net: PolicyNet<T>,
    pub log: TrainLog,
    pub wall_clock_secs: f64,
}

/// Collect experience with an epsilon-greedy policy (uniform random during
/// warm-up), train after `learning_starts`, hard-sync the target network.
///
/// With `out_dir` set, checkpoints go to `out_dir/checkpoints/` and the final
/// weights and logs to `out_dir/`. Wall-clock time is written separately to
/// `timing.json` so the other files are reproducible byte for byte.
pub fn run_training<T: Scalar, E: Environment>(
    env: &mut E,
    spec: NetSpec,
    cfg: &TrainConfig,
    out_dir: Option<&Path>,
    mut on_episode: impl FnMut(&EpisodeLog),
) -> Result<TrainOutcome<T>, DqnError> {
    cfg.validate()?;
    let shape = env.observation_shape();
    if spec.input != shape || spec.outputs != env.num_actions() {
        return Err(DqnError::InvalidConfig(format!(
            "network {:?} -> {} does not fit environment {:?} -> {}",
            spec.input,
            spec.outputs,
            shape,
            env.num_actions()
        )));
    }
    let started = Instant::now();
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut net = PolicyNet::<T>::new(spec, rng.gen())?;
    let mut target = net.clone();
    let mut adam = AdamState::new(&net, T::from_f64_lossy(cfg.lr));
    let obs_len = shape.iter().product();
    let mut buffer = ReplayBuffer::new(cfg.buffer_capacity, obs_len, env.num_actions(), env.codec());
    if let Some(dir) = out_dir {
        fs::create_dir_all(dir.join("checkpoints"))?;
    }

    let mut log = TrainLog::default();
    let mut obs = env.reset(&mut rng)?;
    let (mut ep_start, mut ep_ret, mut ep_len) = (0u64, 0.0f64, 0u64);
    for step in 0..cfg.total_timesteps {
        let epsilon = cfg.epsilon_at(step);
        let action = if step < cfg.learning_starts {
            rng.gen_range(0..env.num_actions())
        } else if rng.gen::<f64>() < epsilon {
            rng.gen_range(0..env.num_actions())
        } else {
            let q = net.predict(&batch_tensor::<T>(&obs, 1, shape)?)?;
            argmax(q.row(0))
        };
        let s = env.step(action)?;
        ep_len += 1;
        ep_ret += s.reward;
        let truncated = s.truncated || ep_len >= cfg.max_episode_steps;
        log.step_rewards.push(s.reward);
        log.actions.push(action as u8);
        let episode_over = s.terminated || truncated;
        let next_obs = s.obs;
        buffer.push(Transition {
            obs: std::mem::take(&mut obs),
            action,
            reward: s.reward as f32,
            next_obs: next_obs.clone(),
            done: s.terminated,
        })?;
        let taken = step + 1;

        if taken > cfg.learning_starts && taken % cfg.train_every == 0 && buffer.len() >= cfg.batch_size {
            let stats = train_step(&mut net, &target, &mut adam, &buffer, cfg, &mut rng)?;
            if !stats.loss.is_finite() {
                return Err(DqnError::NonFiniteLoss { step: taken });
            }
            log.updates.push(UpdateLog { step: taken, loss: stats.loss, epsilon, skipped: stats.skipped });
        }
        if taken % cfg.target_update_every == 0 {
            target.copy_from(&net)?;
            log.target_syncs += 1;
        }
        if let Some(dir) = out_dir {
            if cfg.checkpoint_every > 0 && taken % cfg.checkpoint_every == 0 {
                net.save_weights(dir.join("checkpoints").join(format!("step_{taken:08}.ldqw")))?;
            }
        }

        if episode_over {
            let e = EpisodeLog {
                index: log.episodes.len() as u64,
                start_step: ep_start,
                length: ep_len,
                ret: ep_ret,
                terminated: s.terminated,
            };
            on_episode(&e);
            log.episodes.push(e);
            ep_start = taken;
            ep_ret = 0.0;
            ep_len = 0;
            obs = env.reset(&mut rng)?;
        } else {
            obs = next_obs;
        }
    }

    let wall_clock_secs = started.elapsed().as_secs_f64();
    if let Some(dir) = out_dir {
        net.save_weights(dir.join("weights.ldqw"))?;
        log.write_csv(dir)?;
        log.write_jsonl(&dir.join("log.jsonl"))?;
        fs::write(dir.join("timing.json"), serde_json::json!({ "wall_clock_secs": wall_clock_secs }).to_string())?;
    }
    Ok(TrainOutcome { net, log, wall_clock_secs })
}
