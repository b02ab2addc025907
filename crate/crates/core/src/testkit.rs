//! Finite-difference gradient oracles (feature `oracles`).
//!
//! Every check uses the scalar loss `L = sum(w * y)` for a fixed random
//! weighting `w`, so that `dL/dy = w` can be fed to the analytic backward pass.
//! Probes whose `±FD_STEP` perturbation changes any ReLU sign or max-pool
//! choice are skipped and replaced, since the difference quotient is not a
//! derivative there.

use rand::seq::index::sample;
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::nn::layers::{maxpool2, maxpool2_backward, pooled_dims, relu_backward, relu_inplace, Dims};
use crate::nn::{ForwardCache, NetSpec, NnError, PolicyNet, Tensor};

/// Step for central differences in 64-bit mode. With the branch pattern held
/// fixed the network is linear in any single weight or input, so the step
/// carries no truncation error and a larger step only reduces rounding noise.
pub const FD_STEP: f64 = 1e-4;

#[derive(Debug, Clone, PartialEq)]
pub struct GradCheck {
    pub layer: String,
    pub probes: usize,
    /// Number of entries the probes were drawn from.
    pub population: usize,
    /// Candidates dropped because the finite-difference step crossed a ReLU
    /// or max-pool kink.
    pub kinks_skipped: usize,
    pub max_rel_err: f64,
}

impl GradCheck {
    pub fn passes(&self, tol: f64) -> bool {
        self.max_rel_err < tol
    }
}

/// `|a - n| / max(|a|, |n|, floor)`; the floor keeps near-zero pairs from
/// dominating through cancellation noise.
pub fn rel_err(analytic: f64, numeric: f64) -> f64 {
    let floor = 1e-6;
    (analytic - numeric).abs() / analytic.abs().max(numeric.abs()).max(floor)
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

fn probe_indices(rng: &mut ChaCha8Rng, len: usize, probes: usize) -> Vec<usize> {
    if probes >= len {
        (0..len).collect()
    } else {
        sample(rng, len, probes).into_vec()
    }
}

fn uniform(rng: &mut ChaCha8Rng, n: usize) -> Vec<f64> {
    (0..n).map(|_| rng.gen_range(-1.0..1.0)).collect()
}

/// `L(x)` and whether the pass stayed in the base pass's linear region.
fn probe_loss(net: &PolicyNet<f64>, input: &Tensor<f64>, dq: &Tensor<f64>, base: &ForwardCache<f64>) -> Result<(f64, bool), NnError> {
    let (q, cache) = net.forward(input)?;
    Ok((dot(q.data(), dq.data()), cache.same_branches(base)))
}

/// Walk a random permutation of `0..len`, keeping the first `probes`
/// candidates whose check returns `Some(err)`.
fn probe_until(
    rng: &mut ChaCha8Rng,
    len: usize,
    probes: usize,
    mut check: impl FnMut(usize) -> Result<Option<f64>, NnError>,
) -> Result<(usize, usize, f64), NnError> {
    let mut order: Vec<usize> = (0..len).collect();
    order.shuffle(rng);
    let (mut kept, mut skipped, mut worst) = (0, 0, 0f64);
    for i in order {
        if kept == probes {
            break;
        }
        match check(i)? {
            Some(e) => {
                kept += 1;
                worst = worst.max(e);
            }
            None => skipped += 1,
        }
    }
    Ok((kept, skipped, worst))
}

/// Probe `probes` random entries of every parameter tensor.
pub fn check_params(
    net: &PolicyNet<f64>,
    input: &Tensor<f64>,
    dq: &Tensor<f64>,
    probes: usize,
    seed: u64,
) -> Result<Vec<GradCheck>, NnError> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let (_, cache) = net.forward(input)?;
    let grads = net.backward(&cache, dq)?;
    let mut probe = net.clone();
    let mut out = Vec::new();
    for (p, (name, _)) in net.spec().param_layout().into_iter().enumerate() {
        let population = net.params()[p].len();
        let (kept, skipped, worst) = probe_until(&mut rng, population, probes, |i| {
            let orig = probe.params()[p].data()[i];
            probe.param_mut(p)[i] = orig + FD_STEP;
            let (up, up_same) = probe_loss(&probe, input, dq, &cache)?;
            probe.param_mut(p)[i] = orig - FD_STEP;
            let (down, down_same) = probe_loss(&probe, input, dq, &cache)?;
            probe.param_mut(p)[i] = orig;
            let numeric = (up - down) / (2.0 * FD_STEP);
            Ok((up_same && down_same).then(|| rel_err(grads.tensors[p].data()[i], numeric)))
        })?;
        out.push(GradCheck { layer: name, probes: kept, population, kinks_skipped: skipped, max_rel_err: worst });
    }
    Ok(out)
}

/// Probe the gradient with respect to the network input.
pub fn check_input(
    net: &PolicyNet<f64>,
    input: &Tensor<f64>,
    dq: &Tensor<f64>,
    probes: usize,
    seed: u64,
) -> Result<GradCheck, NnError> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let (_, cache) = net.forward(input)?;
    let (_, dx) = net.backward_with_input(&cache, dq)?;
    let mut x = input.clone();
    let (kept, skipped, worst) = probe_until(&mut rng, input.len(), probes, |i| {
        let orig = x.data()[i];
        x.data_mut()[i] = orig + FD_STEP;
        let (up, up_same) = probe_loss(net, &x, dq, &cache)?;
        x.data_mut()[i] = orig - FD_STEP;
        let (down, down_same) = probe_loss(net, &x, dq, &cache)?;
        x.data_mut()[i] = orig;
        Ok((up_same && down_same).then(|| rel_err(dx.data()[i], (up - down) / (2.0 * FD_STEP))))
    })?;
    Ok(GradCheck { layer: "input".into(), probes: kept, population: input.len(), kinks_skipped: skipped, max_rel_err: worst })
}

/// Isolated ReLU check on random inputs kept away from the kink.
pub fn check_relu(len: usize, probes: usize, seed: u64) -> GradCheck {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let x: Vec<f64> = (0..len)
        .map(|_| {
            let m = rng.gen_range(0.01..1.0);
            if rng.gen::<bool>() { m } else { -m }
        })
        .collect();
    let w = uniform(&mut rng, len);
    let loss = |x: &[f64]| {
        let mut y = x.to_vec();
        relu_inplace(&mut y);
        dot(&y, &w)
    };
    let mut act = x.clone();
    relu_inplace(&mut act);
    let mut g = w.clone();
    relu_backward(&act, &mut g);
    let idx = probe_indices(&mut rng, len, probes);
    let mut xp = x.clone();
    let mut worst = 0f64;
    for &i in &idx {
        xp[i] = x[i] + FD_STEP;
        let up = loss(&xp);
        xp[i] = x[i] - FD_STEP;
        let down = loss(&xp);
        xp[i] = x[i];
        worst = worst.max(rel_err(g[i], (up - down) / (2.0 * FD_STEP)));
    }
    GradCheck { layer: "relu".into(), probes: idx.len(), population: len, kinks_skipped: 0, max_rel_err: worst }
}

/// Isolated 2x2 max-pool check. Inputs are a shuffled grid of distinct
/// values so no window holds a near-tie.
pub fn check_maxpool(dims: Dims, probes: usize, seed: u64) -> GradCheck {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let n = dims.numel();
    let mut order: Vec<usize> = (0..n).collect();
    for i in (1..n).rev() {
        order.swap(i, rng.gen_range(0..=i));
    }
    let x: Vec<f64> = order.iter().map(|&k| k as f64 * 0.01).collect();
    let od = pooled_dims(dims);
    let w = uniform(&mut rng, od.numel());
    let loss = |x: &[f64]| {
        let mut y = vec![0.0; od.numel()];
        let mut am = vec![0u32; od.numel()];
        maxpool2(x, dims, &mut y, &mut am);
        dot(&y, &w)
    };
    let mut y = vec![0.0; od.numel()];
    let mut am = vec![0u32; od.numel()];
    maxpool2(&x, dims, &mut y, &mut am);
    let mut g = vec![0.0; n];
    maxpool2_backward(&w, &am, &mut g);
    let idx = probe_indices(&mut rng, n, probes);
    let mut xp = x.clone();
    let mut worst = 0f64;
    for &i in &idx {
        xp[i] = x[i] + FD_STEP;
        let up = loss(&xp);
        xp[i] = x[i] - FD_STEP;
        let down = loss(&xp);
        xp[i] = x[i];
        worst = worst.max(rel_err(g[i], (up - down) / (2.0 * FD_STEP)));
    }
    GradCheck { layer: "maxpool".into(), probes: idx.len(), population: n, kinks_skipped: 0, max_rel_err: worst }
}

/// The standard battery: every parameter tensor of a small conv net and of
/// the desk-profile net, the input gradient, plus isolated ReLU and pool.
pub fn full_battery(probes: usize, seed: u64) -> Result<Vec<GradCheck>, NnError> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut out = Vec::new();
    let small = NetSpec { input: [8, 16, 6], conv_filters: vec![6, 6, 8], hidden: vec![70], outputs: 3 };
    for (tag, spec, batch) in [("small", small, 3usize), ("desk", NetSpec::desk(), 2)] {
        let net = PolicyNet::<f64>::new(spec.clone(), rng.gen())?;
        let input = Tensor::from_vec(
            &[batch, spec.input[0], spec.input[1], spec.input[2]],
            uniform(&mut rng, batch * spec.input_len()),
        )?;
        let dq = Tensor::from_vec(&[batch, spec.outputs], uniform(&mut rng, batch * spec.outputs))?;
        for mut c in check_params(&net, &input, &dq, probes, rng.gen())? {
            c.layer = format!("{tag}/{}", c.layer);
            out.push(c);
        }
        let mut c = check_input(&net, &input, &dq, probes, rng.gen())?;
        c.layer = format!("{tag}/input");
        out.push(c);
    }
    out.push(check_relu(4 * probes, probes, rng.gen()));
    out.push(check_maxpool(Dims { batch: 2, height: 8, width: 12, channels: 5 }, probes, rng.gen()));
    Ok(out)
}
