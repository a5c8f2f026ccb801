//! Central finite-difference check of the hand-written backward pass.

use rand::seq::index::sample;
use serde::Serialize;

use super::matrix::Matrix;
use super::network::{Mode, Network};
use crate::error::{invalid, Result};
use crate::rng::{self, Domain};

#[derive(Debug, Clone)]
pub struct GradCheckConfig {
    pub epsilon: f64,
    pub tolerance: f64,
    /// Entries sampled per tensor; 0 checks every entry.
    pub entries_per_tensor: usize,
    /// Seeds the entry sampling.
    pub seed: u64,
}

impl Default for GradCheckConfig {
    fn default() -> Self {
        GradCheckConfig { epsilon: 1e-4, tolerance: 1e-4, entries_per_tensor: 8, seed: 0 }
    }
}

#[derive(Debug, Clone, Serialize)]
pub struct GradFailure {
    pub tensor: String,
    pub index: usize,
    pub analytic: f64,
    pub numeric: f64,
    pub relative_error: f64,
}

#[derive(Debug, Clone, Serialize)]
pub struct GradCheckReport {
    pub passed: bool,
    pub worst_relative_error: f64,
    pub worst_tensor: String,
    pub checked: usize,
    /// Sampled entries whose `±epsilon` probes switched a ReLU on or off.
    /// The loss has a kink inside the interval there, so the central
    /// difference is not a valid reference; another entry is drawn instead.
    pub skipped_at_kinks: usize,
    pub failures: Vec<GradFailure>,
}

pub fn relative_error(analytic: f64, numeric: f64) -> f64 {
    (analytic - numeric).abs() / analytic.abs().max(numeric.abs()).max(1e-8)
}

/// Compares analytic gradients of `loss(net(input))` against central
/// differences. The network runs with batch statistics and no dropout, so
/// the loss is a deterministic function of the parameters. `loss` returns
/// the scalar and its gradient with respect to the network output.
pub fn fd_gradcheck<L>(net: &Network, input: &Matrix, loss: L, cfg: &GradCheckConfig) -> Result<GradCheckReport>
where
    L: Fn(&Matrix) -> Result<(f64, Matrix)>,
{
    if !(cfg.epsilon > 0.0) {
        return invalid(format!("finite-difference step must be positive, got {}", cfg.epsilon));
    }
    let mode = Mode::Train { dropout: false };
    let mut scratch = rng::seeded(0);
    let (out, cache) = net.forward(input, mode, &mut scratch)?;
    let (_, dout) = loss(&out)?;
    let grads = net.backward(&cache, &dout)?;

    let pattern = cache.relu_pattern();
    // Loss at the probe, or `None` when the probe changed the ReLU pattern.
    let eval = |n: &Network, x: &Matrix| -> Result<Option<f64>> {
        let mut r = rng::seeded(0);
        let (o, c) = n.forward(x, mode, &mut r)?;
        Ok((c.relu_pattern() == pattern).then_some(loss(&o)?.0))
    };

    // Candidate entries in random order; checking stops after
    // `entries_per_tensor` smooth ones.
    let mut pick = rng::stream(cfg.seed, Domain::GradCheck, 0);
    let mut candidates = |len: usize| -> Vec<usize> {
        if cfg.entries_per_tensor == 0 || cfg.entries_per_tensor >= len {
            (0..len).collect()
        } else {
            sample(&mut pick, len, (4 * cfg.entries_per_tensor).min(len)).into_vec()
        }
    };
    let wanted = |len: usize| if cfg.entries_per_tensor == 0 { len } else { cfg.entries_per_tensor.min(len) };

    let eps = cfg.epsilon;
    let mut report = GradCheckReport {
        passed: true,
        worst_relative_error: 0.0,
        worst_tensor: String::new(),
        checked: 0,
        skipped_at_kinks: 0,
        failures: Vec::new(),
    };
    let mut record = |tensor: &str, index: usize, analytic: f64, numeric: f64| {
        let rel = relative_error(analytic, numeric);
        report.checked += 1;
        if rel > report.worst_relative_error || report.worst_tensor.is_empty() {
            report.worst_relative_error = rel;
            report.worst_tensor = tensor.to_string();
        }
        if !(rel < cfg.tolerance) {
            report.passed = false;
            report.failures.push(GradFailure { tensor: tensor.to_string(), index, analytic, numeric, relative_error: rel });
        }
    };

    let mut skipped = 0;
    let names = net.param_names();
    let mut probe = net.clone();
    for (t, name) in names.iter().enumerate() {
        let len = grads.params[t].len();
        let mut done = 0;
        for i in candidates(len) {
            if done == wanted(len) {
                break;
            }
            let orig = probe.trainable()[t][i];
            probe.trainable_mut()[t][i] = orig + eps;
            let up = eval(&probe, input)?;
            probe.trainable_mut()[t][i] = orig - eps;
            let down = eval(&probe, input)?;
            probe.trainable_mut()[t][i] = orig;
            match (up, down) {
                (Some(u), Some(d)) => {
                    record(name, i, grads.params[t][i], (u - d) / (2.0 * eps));
                    done += 1;
                }
                _ => skipped += 1,
            }
        }
    }

    let mut x = input.clone();
    let len = x.as_slice().len();
    let mut done = 0;
    for i in candidates(len) {
        if done == wanted(len) {
            break;
        }
        let orig = x.as_slice()[i];
        x.as_mut_slice()[i] = orig + eps;
        let up = eval(net, &x)?;
        x.as_mut_slice()[i] = orig - eps;
        let down = eval(net, &x)?;
        x.as_mut_slice()[i] = orig;
        match (up, down) {
            (Some(u), Some(d)) => {
                record("input", i, grads.input.as_slice()[i], (u - d) / (2.0 * eps));
                done += 1;
            }
            _ => skipped += 1,
        }
    }
    report.skipped_at_kinks = skipped;
    Ok(report)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::nn::network::NetConfig;
    use crate::rng::seeded;
    use rand::Rng;
    use rand_distr::StandardNormal;

    fn sum_sq(out: &Matrix) -> Result<(f64, Matrix)> {
        let v = out.as_slice().iter().map(|x| x * x).sum::<f64>() * 0.5;
        Ok((v, out.clone()))
    }

    fn random(rows: usize, cols: usize, seed: u64) -> Matrix {
        let mut r = seeded(seed);
        Matrix::new(rows, cols, (0..rows * cols).map(|_| r.sample(StandardNormal)).collect()).unwrap()
    }

    #[test]
    fn zero_epsilon_rejected() {
        let net = Network::new(NetConfig { input_dim: 3, hidden_dim: 4, output_dim: 2, ..Default::default() }, &mut seeded(0)).unwrap();
        let cfg = GradCheckConfig { epsilon: 0.0, ..Default::default() };
        assert!(fd_gradcheck(&net, &random(4, 3, 1), sum_sq, &cfg).is_err());
    }

    #[test]
    fn head_gradient_is_exact_for_quadratic_loss() {
        // With no residual blocks the head sees fixed features, so the loss is
        // exactly quadratic in the head parameters.
        let cfg = NetConfig { input_dim: 3, hidden_dim: 5, output_dim: 2, residual_blocks: 0, ..Default::default() };
        let net = Network::new(cfg, &mut seeded(2)).unwrap();
        let x = random(6, 3, 3);
        let report = fd_gradcheck(&net, &x, sum_sq, &GradCheckConfig { epsilon: 1e-5, tolerance: 1e-9, entries_per_tensor: 0, seed: 0 });
        let report = report.unwrap();
        let head: Vec<&GradFailure> = report.failures.iter().filter(|f| f.tensor.starts_with("head")).collect();
        assert!(head.is_empty(), "{head:?}");
    }

    #[test]
    fn small_full_network_passes() {
        let cfg = NetConfig { input_dim: 4, hidden_dim: 16, output_dim: 3, ..Default::default() };
        let net = Network::new(cfg, &mut seeded(4)).unwrap();
        let x = random(8, 4, 5);
        let report = fd_gradcheck(&net, &x, sum_sq, &GradCheckConfig { entries_per_tensor: 0, ..Default::default() }).unwrap();
        assert!(report.passed, "worst {} in {}: {:?}", report.worst_relative_error, report.worst_tensor, &report.failures[..report.failures.len().min(5)]);
        assert!(report.checked > 1000);
    }
}
