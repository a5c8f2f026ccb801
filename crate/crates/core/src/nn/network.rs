//! Residual fully-connected regressor: a dense stem, a stack of residual
//! blocks, and a linear head. A dense block is
//! `linear -> batch norm -> ReLU -> dropout`; a residual block is two dense
//! blocks with an identity skip around them.

use rand::Rng as _;
use rand_distr::{Distribution, Uniform};
use serde::{Deserialize, Serialize};

use super::matrix::Matrix;
use crate::error::{invalid, Error, Result};
use crate::rng::Rng;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct NetConfig {
    pub input_dim: usize,
    pub hidden_dim: usize,
    pub output_dim: usize,
    pub residual_blocks: usize,
    pub keep_prob: f64,
    pub bn_momentum: f64,
    pub bn_eps: f64,
}

impl Default for NetConfig {
    fn default() -> Self {
        NetConfig {
            input_dim: 32,
            hidden_dim: 1024,
            output_dim: 48,
            residual_blocks: 2,
            keep_prob: 0.5,
            bn_momentum: 0.1,
            // Small enough that normalized activations have unit variance to ~1e-10.
            bn_eps: 1e-10,
        }
    }
}

impl NetConfig {
    pub fn validate(&self) -> Result<()> {
        if self.input_dim == 0 || self.hidden_dim == 0 || self.output_dim == 0 {
            return invalid("network dimensions must be positive");
        }
        if !(self.keep_prob > 0.0 && self.keep_prob <= 1.0) {
            return invalid(format!("keep probability {} outside (0, 1]", self.keep_prob));
        }
        if !(self.bn_momentum > 0.0 && self.bn_momentum <= 1.0) {
            return invalid(format!("batch-norm momentum {} outside (0, 1]", self.bn_momentum));
        }
        if !(self.bn_eps >= 0.0) {
            return invalid("batch-norm epsilon must be non-negative");
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Mode {
    /// Batch statistics; dropout optional.
    Train { dropout: bool },
    /// Running statistics, no dropout.
    Eval,
}

impl Mode {
    pub const TRAIN: Mode = Mode::Train { dropout: true };
}

#[derive(Debug, Clone, PartialEq)]
pub struct Linear {
    /// `out x in`
    pub weight: Matrix,
    pub bias: Vec<f64>,
}

fn kaiming_uniform(fan_in: usize, fan_out: usize, gain: f64, rng: &mut Rng) -> Matrix {
    let bound = (gain / fan_in as f64).sqrt();
    let dist = Uniform::new_inclusive(-bound, bound).expect("finite bound");
    let w = (0..fan_in * fan_out).map(|_| dist.sample(rng)).collect();
    Matrix::new(fan_out, fan_in, w).expect("shape")
}

impl Linear {
    fn init(fan_in: usize, fan_out: usize, gain: f64, rng: &mut Rng) -> Self {
        Linear { weight: kaiming_uniform(fan_in, fan_out, gain, rng), bias: vec![0.0; fan_out] }
    }

    fn forward(&self, x: &Matrix) -> Result<Matrix> {
        let mut z = x.matmul_t(&self.weight)?;
        z.add_row_vector(&self.bias);
        Ok(z)
    }

    /// Returns (dW, db, dX).
    fn backward(&self, x: &Matrix, dz: &Matrix) -> Result<(Matrix, Vec<f64>, Matrix)> {
        let dw = dz.t_matmul(x)?;
        let db = dz.sum_rows();
        let dx = dz.matmul(&self.weight)?;
        Ok((dw, db, dx))
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct BatchNorm {
    pub gamma: Vec<f64>,
    pub beta: Vec<f64>,
    pub running_mean: Vec<f64>,
    pub running_var: Vec<f64>,
}

impl BatchNorm {
    fn new(width: usize) -> Self {
        BatchNorm {
            gamma: vec![1.0; width],
            beta: vec![0.0; width],
            running_mean: vec![0.0; width],
            running_var: vec![1.0; width],
        }
    }
}

/// Linear map, batch norm, ReLU, dropout. The linear map has no bias: the
/// batch-norm mean subtraction would cancel it, leaving a parameter with an
/// identically zero gradient.
#[derive(Debug, Clone, PartialEq)]
pub struct DenseBlock {
    /// `out x in`
    pub weight: Matrix,
    pub norm: BatchNorm,
    pub keep_prob: f64,
}

#[derive(Debug, Clone)]
struct DenseCache {
    input: Matrix,
    xhat: Matrix,
    inv_std: Vec<f64>,
    batch_mean: Vec<f64>,
    batch_var: Vec<f64>,
    /// Post-BN pre-ReLU value was positive.
    active: Vec<bool>,
    /// Inverted-dropout multipliers (0 or 1/p), when dropout was applied.
    mask: Option<Vec<f64>>,
}

impl DenseBlock {
    fn init(fan_in: usize, fan_out: usize, keep_prob: f64, rng: &mut Rng) -> Self {
        DenseBlock { weight: kaiming_uniform(fan_in, fan_out, 6.0, rng), norm: BatchNorm::new(fan_out), keep_prob }
    }

    fn forward(&self, x: &Matrix, mode: Mode, eps: f64, rng: &mut Rng) -> Result<(Matrix, DenseCache)> {
        let z = x.matmul_t(&self.weight)?;
        let (n, width) = z.shape();
        let (mean, var) = match mode {
            Mode::Train { .. } => batch_moments(&z),
            Mode::Eval => (self.norm.running_mean.clone(), self.norm.running_var.clone()),
        };
        let inv_std: Vec<f64> = var.iter().map(|v| 1.0 / (v + eps).sqrt()).collect();

        let mut xhat = z;
        let mut out = Matrix::zeros(n, width);
        let mut active = vec![false; n * width];
        for r in 0..n {
            let xr = xhat.row_mut(r);
            let or = out.row_mut(r);
            for j in 0..width {
                xr[j] = (xr[j] - mean[j]) * inv_std[j];
                let y = self.norm.gamma[j] * xr[j] + self.norm.beta[j];
                if y > 0.0 {
                    or[j] = y;
                    active[r * width + j] = true;
                }
            }
        }

        let mask = match mode {
            Mode::Train { dropout: true } if self.keep_prob < 1.0 => {
                let p = self.keep_prob;
                let scale = 1.0 / p;
                let m: Vec<f64> = (0..n * width).map(|_| if rng.random::<f64>() < p { scale } else { 0.0 }).collect();
                for (o, k) in out.as_mut_slice().iter_mut().zip(&m) {
                    *o *= k;
                }
                Some(m)
            }
            _ => None,
        };

        let cache = DenseCache { input: x.clone(), xhat, inv_std, batch_mean: mean, batch_var: var, active, mask };
        Ok((out, cache))
    }

    /// Returns ([dW, dgamma, dbeta], dX).
    fn backward(&self, cache: &DenseCache, dout: &Matrix) -> Result<([Vec<f64>; 3], Matrix)> {
        let (n, width) = dout.shape();
        let mut dy = dout.clone();
        {
            let d = dy.as_mut_slice();
            if let Some(mask) = &cache.mask {
                for (g, k) in d.iter_mut().zip(mask) {
                    *g *= k;
                }
            }
            for (g, &a) in d.iter_mut().zip(&cache.active) {
                if !a {
                    *g = 0.0;
                }
            }
        }

        let mut dgamma = vec![0.0; width];
        let mut dbeta = vec![0.0; width];
        let mut sum_dxhat = vec![0.0; width];
        let mut sum_dxhat_xhat = vec![0.0; width];
        for r in 0..n {
            let g = dy.row(r);
            let xh = cache.xhat.row(r);
            for j in 0..width {
                dgamma[j] += g[j] * xh[j];
                dbeta[j] += g[j];
                let dxh = g[j] * self.norm.gamma[j];
                sum_dxhat[j] += dxh;
                sum_dxhat_xhat[j] += dxh * xh[j];
            }
        }
        let inv_n = 1.0 / n as f64;
        let mut dz = Matrix::zeros(n, width);
        for r in 0..n {
            let g = dy.row(r);
            let xh = cache.xhat.row(r);
            let dr = dz.row_mut(r);
            for j in 0..width {
                let dxh = g[j] * self.norm.gamma[j];
                dr[j] = cache.inv_std[j] * (dxh - inv_n * sum_dxhat[j] - xh[j] * inv_n * sum_dxhat_xhat[j]);
            }
        }

        let dw = dz.t_matmul(&cache.input)?;
        let dx = dz.matmul(&self.weight)?;
        Ok(([dw.into_vec(), dgamma, dbeta], dx))
    }
}

/// Per-column mean and biased variance.
fn batch_moments(z: &Matrix) -> (Vec<f64>, Vec<f64>) {
    let (n, width) = z.shape();
    let inv_n = 1.0 / n as f64;
    let mean: Vec<f64> = z.sum_rows().into_iter().map(|s| s * inv_n).collect();
    let mut var = vec![0.0; width];
    for r in 0..n {
        for (j, v) in z.row(r).iter().enumerate() {
            let d = v - mean[j];
            var[j] += d * d;
        }
    }
    var.iter_mut().for_each(|v| *v *= inv_n);
    (mean, var)
}

#[derive(Debug, Clone, PartialEq)]
pub struct ResidualBlock {
    pub first: DenseBlock,
    pub second: DenseBlock,
}

/// Everything the backward pass needs from one forward pass.
#[derive(Debug, Clone)]
pub struct ForwardCache {
    version: u64,
    mode: Mode,
    input_shape: (usize, usize),
    stem: DenseCache,
    blocks: Vec<(DenseCache, DenseCache)>,
    head_input: Matrix,
}

impl ForwardCache {
    /// Which post-norm units were positive, over every ReLU in the network.
    pub fn relu_pattern(&self) -> Vec<bool> {
        let mut v = self.stem.active.clone();
        for (a, b) in &self.blocks {
            v.extend_from_slice(&a.active);
            v.extend_from_slice(&b.active);
        }
        v
    }
}

/// Gradients in [`Network::param_names`] order, plus the input gradient.
#[derive(Debug, Clone)]
pub struct Gradients {
    pub params: Vec<Vec<f64>>,
    pub input: Matrix,
}

#[derive(Debug, Clone)]
pub struct Network {
    pub config: NetConfig,
    pub stem: DenseBlock,
    pub blocks: Vec<ResidualBlock>,
    pub head: Linear,
    /// Bumped on every parameter mutation made through this type.
    version: u64,
}

impl PartialEq for Network {
    fn eq(&self, other: &Self) -> bool {
        self.config == other.config && self.stem == other.stem && self.blocks == other.blocks && self.head == other.head
    }
}

impl Network {
    /// Kaiming-uniform weights (`sqrt(6 / fan_in)` bounds for ReLU layers,
    /// `sqrt(3 / fan_in)` for the linear head), zero biases, unit BN scale.
    pub fn new(config: NetConfig, rng: &mut Rng) -> Result<Self> {
        config.validate()?;
        let h = config.hidden_dim;
        let p = config.keep_prob;
        let stem = DenseBlock::init(config.input_dim, h, p, rng);
        let blocks = (0..config.residual_blocks)
            .map(|_| ResidualBlock { first: DenseBlock::init(h, h, p, rng), second: DenseBlock::init(h, h, p, rng) })
            .collect();
        let head = Linear::init(h, config.output_dim, 3.0, rng);
        Ok(Network { config, stem, blocks, head, version: 0 })
    }

    pub fn version(&self) -> u64 {
        self.version
    }

    fn dense_blocks(&self) -> impl Iterator<Item = (String, &DenseBlock)> {
        std::iter::once(("stem".to_string(), &self.stem)).chain(self.blocks.iter().enumerate().flat_map(|(i, b)| {
            [(format!("block{i}.first"), &b.first), (format!("block{i}.second"), &b.second)]
        }))
    }

    fn dense_blocks_mut(&mut self) -> Vec<&mut DenseBlock> {
        dense_blocks_mut(&mut self.stem, &mut self.blocks)
    }

    /// Names of trainable tensors, in gradient/optimizer order.
    pub fn param_names(&self) -> Vec<String> {
        let mut names = Vec::new();
        for (prefix, _) in self.dense_blocks() {
            for s in ["weight", "gamma", "beta"] {
                names.push(format!("{prefix}.{s}"));
            }
        }
        names.push("head.weight".into());
        names.push("head.bias".into());
        names
    }

    pub fn trainable(&self) -> Vec<&[f64]> {
        let mut v: Vec<&[f64]> = Vec::new();
        for (_, d) in self.dense_blocks() {
            v.extend([d.weight.as_slice(), &d.norm.gamma[..], &d.norm.beta[..]]);
        }
        v.push(self.head.weight.as_slice());
        v.push(&self.head.bias);
        v
    }

    pub fn trainable_mut(&mut self) -> Vec<&mut [f64]> {
        self.version += 1;
        let mut v: Vec<&mut [f64]> = Vec::new();
        for d in dense_blocks_mut(&mut self.stem, &mut self.blocks) {
            let DenseBlock { weight, norm, .. } = d;
            v.push(weight.as_mut_slice());
            v.push(&mut norm.gamma);
            v.push(&mut norm.beta);
        }
        v.push(self.head.weight.as_mut_slice());
        v.push(&mut self.head.bias);
        v
    }

    /// Every tensor including running statistics: (name, shape, values).
    pub fn named_tensors(&self) -> Vec<(String, Vec<usize>, &[f64])> {
        let mut out = Vec::new();
        for (prefix, d) in self.dense_blocks() {
            let (o, i) = d.weight.shape();
            out.push((format!("{prefix}.weight"), vec![o, i], d.weight.as_slice()));
            out.push((format!("{prefix}.gamma"), vec![o], &d.norm.gamma[..]));
            out.push((format!("{prefix}.beta"), vec![o], &d.norm.beta[..]));
            out.push((format!("{prefix}.running_mean"), vec![o], &d.norm.running_mean[..]));
            out.push((format!("{prefix}.running_var"), vec![o], &d.norm.running_var[..]));
        }
        let (o, i) = self.head.weight.shape();
        out.push(("head.weight".into(), vec![o, i], self.head.weight.as_slice()));
        out.push(("head.bias".into(), vec![o], &self.head.bias[..]));
        out
    }

    /// Overwrites every tensor from `(name, values)` pairs produced by
    /// [`Network::named_tensors`] on a network of the same config.
    pub fn load_named(&mut self, tensors: &[(String, Vec<f64>)]) -> Result<()> {
        let expected: Vec<(String, usize)> =
            self.named_tensors().into_iter().map(|(n, _, v)| (n, v.len())).collect();
        if expected.len() != tensors.len() {
            return invalid(format!("expected {} tensors, found {}", expected.len(), tensors.len()));
        }
        for ((name, len), (got_name, values)) in expected.iter().zip(tensors) {
            if name != got_name || *len != values.len() {
                return invalid(format!("tensor {got_name} ({} values) does not match {name} ({len})", values.len()));
            }
            if let Some(v) = values.iter().find(|v| !v.is_finite()) {
                return invalid(format!("tensor {name} holds non-finite value {v}"));
            }
        }
        let mut it = tensors.iter().map(|(_, v)| v);
        for d in self.dense_blocks_mut() {
            d.weight.as_mut_slice().copy_from_slice(it.next().unwrap());
            d.norm.gamma.copy_from_slice(it.next().unwrap());
            d.norm.beta.copy_from_slice(it.next().unwrap());
            d.norm.running_mean.copy_from_slice(it.next().unwrap());
            d.norm.running_var.copy_from_slice(it.next().unwrap());
        }
        self.head.weight.as_mut_slice().copy_from_slice(it.next().unwrap());
        self.head.bias.copy_from_slice(it.next().unwrap());
        self.version += 1;
        Ok(())
    }

    pub fn forward(&self, input: &Matrix, mode: Mode, rng: &mut Rng) -> Result<(Matrix, ForwardCache)> {
        let (batch, width) = input.shape();
        if width != self.config.input_dim {
            return invalid(format!("input width {width} does not match network input {}", self.config.input_dim));
        }
        if batch == 0 {
            return invalid("empty batch");
        }
        if matches!(mode, Mode::Train { .. }) && batch < 2 {
            return invalid("training-mode batch norm needs at least 2 rows");
        }
        let eps = self.config.bn_eps;
        let (mut h, stem) = self.stem.forward(input, mode, eps, rng)?;
        let mut blocks = Vec::with_capacity(self.blocks.len());
        for b in &self.blocks {
            let (a, c1) = b.first.forward(&h, mode, eps, rng)?;
            let (mut o, c2) = b.second.forward(&a, mode, eps, rng)?;
            o.add_assign(&h);
            h = o;
            blocks.push((c1, c2));
        }
        let out = self.head.forward(&h)?;
        if !out.is_finite() {
            return Err(Error::NumericOverflow("network produced a non-finite output".into()));
        }
        let cache = ForwardCache { version: self.version, mode, input_shape: (batch, width), stem, blocks, head_input: h };
        Ok((out, cache))
    }

    /// Deterministic inference with running statistics.
    pub fn predict(&self, input: &Matrix) -> Result<Matrix> {
        // Eval mode never draws from the generator.
        let mut rng = crate::rng::seeded(0);
        Ok(self.forward(input, Mode::Eval, &mut rng)?.0)
    }

    pub fn backward(&self, cache: &ForwardCache, dout: &Matrix) -> Result<Gradients> {
        if cache.version != self.version {
            return Err(Error::InvalidState("forward cache is stale: parameters changed since the forward pass".into()));
        }
        if cache.mode == Mode::Eval {
            return Err(Error::InvalidState("backward requires a training-mode forward cache".into()));
        }
        if cache.blocks.len() != self.blocks.len() || dout.shape() != (cache.input_shape.0, self.config.output_dim) {
            return Err(Error::InvalidState(format!(
                "upstream gradient {:?} does not match cached batch {} x {}",
                dout.shape(),
                cache.input_shape.0,
                self.config.output_dim
            )));
        }

        let (dw, db, mut dh) = self.head.backward(&cache.head_input, dout)?;
        let mut block_grads: Vec<[Vec<f64>; 3]> = Vec::with_capacity(2 * self.blocks.len());
        for (b, (c1, c2)) in self.blocks.iter().zip(&cache.blocks).rev() {
            let (g2, da) = b.second.backward(c2, &dh)?;
            let (g1, mut dx) = b.first.backward(c1, &da)?;
            dx.add_assign(&dh);
            dh = dx;
            block_grads.push(g2);
            block_grads.push(g1);
        }
        let (gs, dinput) = self.stem.backward(&cache.stem, &dh)?;

        let mut params = Vec::with_capacity(3 * (1 + 2 * self.blocks.len()) + 2);
        params.extend(gs);
        for g in block_grads.into_iter().rev() {
            params.extend(g);
        }
        params.push(dw.into_vec());
        params.push(db);
        Ok(Gradients { params, input: dinput })
    }

    /// Folds the batch statistics of a training forward pass into the
    /// running estimates (unbiased variance, exponential average).
    pub fn update_running_stats(&mut self, cache: &ForwardCache) -> Result<()> {
        if !matches!(cache.mode, Mode::Train { .. }) {
            return invalid("running statistics come from training-mode passes only");
        }
        let m = self.config.bn_momentum;
        let n = cache.input_shape.0 as f64;
        let correction = n / (n - 1.0);
        let caches = std::iter::once(&cache.stem).chain(cache.blocks.iter().flat_map(|(a, b)| [a, b]));
        for (d, c) in self.dense_blocks_mut().into_iter().zip(caches) {
            for j in 0..d.norm.running_mean.len() {
                d.norm.running_mean[j] = (1.0 - m) * d.norm.running_mean[j] + m * c.batch_mean[j];
                d.norm.running_var[j] = (1.0 - m) * d.norm.running_var[j] + m * c.batch_var[j] * correction;
            }
        }
        Ok(())
    }
}

fn dense_blocks_mut<'a>(stem: &'a mut DenseBlock, blocks: &'a mut [ResidualBlock]) -> Vec<&'a mut DenseBlock> {
    let mut v = vec![stem];
    for b in blocks {
        v.push(&mut b.first);
        v.push(&mut b.second);
    }
    v
}

#[cfg(test)]
pub(crate) fn normalized_activations(net: &Network, input: &Matrix) -> Matrix {
    let mut rng = crate::rng::seeded(0);
    net.stem.forward(input, Mode::Train { dropout: false }, net.config.bn_eps, &mut rng).unwrap().1.xhat
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::seeded;
    use rand_distr::StandardNormal;

    fn small_config() -> NetConfig {
        NetConfig { input_dim: 5, hidden_dim: 12, output_dim: 4, ..NetConfig::default() }
    }

    fn random_input(rows: usize, cols: usize, seed: u64) -> Matrix {
        let mut rng = seeded(seed);
        Matrix::new(rows, cols, (0..rows * cols).map(|_| rng.sample(StandardNormal)).collect()).unwrap()
    }

    #[test]
    fn zeroed_network_outputs_head_bias() {
        let mut net = Network::new(small_config(), &mut seeded(1)).unwrap();
        for (name, t) in net.param_names().into_iter().zip(net.trainable_mut()) {
            if name.ends_with("weight") || name.ends_with("gamma") {
                t.iter_mut().for_each(|v| *v = 0.0);
            }
        }
        net.head.bias = vec![1.0, -2.0, 3.5, 0.25];
        let x = random_input(6, 5, 2);
        for mode in [Mode::Eval, Mode::TRAIN] {
            let (y, _) = net.forward(&x, mode, &mut seeded(3)).unwrap();
            for r in 0..6 {
                assert_eq!(y.row(r), &[1.0, -2.0, 3.5, 0.25]);
            }
        }
    }

    #[test]
    fn eval_is_deterministic_and_row_independent() {
        let net = Network::new(small_config(), &mut seeded(4)).unwrap();
        let x = random_input(3, 5, 5);
        let a = net.predict(&x).unwrap();
        assert_eq!(a, net.predict(&x).unwrap());
        let dup = x.gather_rows(&[1, 1, 0]);
        let b = net.predict(&dup).unwrap();
        assert_eq!(b.row(0), a.row(1));
        assert_eq!(b.row(1), a.row(1));
        assert_eq!(b.row(2), a.row(0));
    }

    #[test]
    fn shape_checks() {
        let net = Network::new(small_config(), &mut seeded(4)).unwrap();
        assert!(net.forward(&Matrix::zeros(4, 6), Mode::Eval, &mut seeded(0)).is_err());
        assert!(net.forward(&Matrix::zeros(1, 5), Mode::TRAIN, &mut seeded(0)).is_err());
        assert!(net.forward(&Matrix::zeros(1, 5), Mode::Eval, &mut seeded(0)).is_ok());
    }

    #[test]
    fn zero_upstream_gives_zero_gradients() {
        let net = Network::new(small_config(), &mut seeded(6)).unwrap();
        let x = random_input(7, 5, 7);
        let (_, cache) = net.forward(&x, Mode::TRAIN, &mut seeded(8)).unwrap();
        let g = net.backward(&cache, &Matrix::zeros(7, 4)).unwrap();
        assert!(g.params.iter().flatten().all(|v| *v == 0.0));
        assert!(g.input.as_slice().iter().all(|v| *v == 0.0));
        let shapes: Vec<usize> = net.trainable().iter().map(|t| t.len()).collect();
        assert_eq!(g.params.iter().map(Vec::len).collect::<Vec<_>>(), shapes);
    }

    #[test]
    fn stale_and_eval_caches_rejected() {
        let mut net = Network::new(small_config(), &mut seeded(6)).unwrap();
        let x = random_input(4, 5, 7);
        let (_, eval_cache) = net.forward(&x, Mode::Eval, &mut seeded(8)).unwrap();
        assert!(matches!(net.backward(&eval_cache, &Matrix::zeros(4, 4)), Err(Error::InvalidState(_))));
        let (_, cache) = net.forward(&x, Mode::TRAIN, &mut seeded(8)).unwrap();
        assert!(matches!(net.backward(&cache, &Matrix::zeros(3, 4)), Err(Error::InvalidState(_))));
        net.trainable_mut()[0][0] += 1.0;
        assert!(matches!(net.backward(&cache, &Matrix::zeros(4, 4)), Err(Error::InvalidState(_))));
    }

    #[test]
    fn single_linear_weight_gradient_is_column_sums() {
        // Only the head is exercised: dL/dW for L = sum(Y), Y = X W^T + b.
        let lin = Linear { weight: Matrix::zeros(3, 4), bias: vec![0.0; 3] };
        let x = random_input(5, 4, 9);
        let ones = Matrix::new(5, 3, vec![1.0; 15]).unwrap();
        let (dw, db, _) = lin.backward(&x, &ones).unwrap();
        let col_sums = x.sum_rows();
        for r in 0..3 {
            assert_eq!(dw.row(r), &col_sums[..]);
        }
        assert_eq!(db, vec![5.0; 3]);
    }

    #[test]
    fn batch_norm_normalizes() {
        let cfg = NetConfig { input_dim: 6, hidden_dim: 32, ..small_config() };
        let net = Network::new(cfg, &mut seeded(10)).unwrap();
        let x = random_input(64, 6, 11);
        let xhat = normalized_activations(&net, &x);
        let n = xhat.rows() as f64;
        for j in 0..xhat.cols() {
            let mean: f64 = (0..xhat.rows()).map(|r| xhat.get(r, j)).sum::<f64>() / n;
            let var: f64 = (0..xhat.rows()).map(|r| (xhat.get(r, j) - mean).powi(2)).sum::<f64>() / n;
            assert!(mean.abs() < 1e-10, "mean {mean}");
            assert!((var - 1.0).abs() < 1e-8, "var {var}");
        }
    }

    #[test]
    fn dropout_is_unbiased() {
        let cfg = NetConfig { input_dim: 3, hidden_dim: 4, residual_blocks: 0, ..small_config() };
        let net = Network::new(cfg, &mut seeded(12)).unwrap();
        let x = random_input(8, 3, 13);
        let mut rng = seeded(14);
        let (plain, _) = net.stem.forward(&x, Mode::Train { dropout: false }, 1e-10, &mut rng).unwrap();
        let trials = 20_000;
        let mut sum = vec![0.0; plain.as_slice().len()];
        for _ in 0..trials {
            let (d, _) = net.stem.forward(&x, Mode::TRAIN, 1e-10, &mut rng).unwrap();
            for (s, v) in sum.iter_mut().zip(d.as_slice()) {
                *s += v;
            }
        }
        let p = net.stem.keep_prob;
        for (s, &a) in sum.iter().zip(plain.as_slice()) {
            let mean = s / trials as f64;
            // Each draw is a/p with probability p, else 0.
            let sigma = a.abs() * ((1.0 - p) / p).sqrt() / (trials as f64).sqrt();
            assert!((mean - a).abs() <= 3.0 * sigma + 1e-15, "mean {mean} vs {a}");
        }
    }

    #[test]
    fn running_stats_update() {
        let mut net = Network::new(small_config(), &mut seeded(15)).unwrap();
        let x = random_input(10, 5, 16);
        let (_, cache) = net.forward(&x, Mode::TRAIN, &mut seeded(17)).unwrap();
        net.update_running_stats(&cache).unwrap();
        assert!(net.stem.norm.running_var.iter().all(|v| *v >= 0.0));
        assert_ne!(net.stem.norm.running_mean, vec![0.0; 12]);
    }

    #[test]
    fn named_tensors_round_trip() {
        let a = Network::new(small_config(), &mut seeded(18)).unwrap();
        let mut b = Network::new(small_config(), &mut seeded(19)).unwrap();
        assert_ne!(a, b);
        let t: Vec<(String, Vec<f64>)> = a.named_tensors().into_iter().map(|(n, _, v)| (n, v.to_vec())).collect();
        b.load_named(&t).unwrap();
        assert_eq!(a, b);
        assert!(b.load_named(&t[1..]).is_err());
    }
}
