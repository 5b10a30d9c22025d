//! Embedding networks `psi: R^d -> R^p` with batched forward and reverse-mode
//! gradients.
//!
//! Batches are `b x d` matrices, one subject per row. Parameters flatten in a
//! fixed order so the optimizer and the model file can treat every
//! architecture as a single vector:
//!
//! * basic: `[w]`
//! * diag: `[w_1, ..., w_d]`
//! * mlp: per hidden layer `W` (row-major, out x in), `b`, `gamma`, `beta`,
//!   then the output layer `W`, `b`
//! * residual: the inner mlp, then the outer basic/diag weights

use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

const BN_EPS: f64 = 1e-5;
const BN_MOMENTUM: f64 = 0.1;

/// Whether normalization layers use batch statistics or running averages.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Mode {
    Train,
    Eval,
}

/// Shape of a multilayer perceptron.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct MlpSpec {
    pub hidden_layers: usize,
    pub hidden_width: usize,
    pub output_dim: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
struct Dense {
    /// out x in
    weight: DMatrix<f64>,
    bias: DVector<f64>,
}

impl Dense {
    fn new(inputs: usize, outputs: usize, rng: &mut ChaCha8Rng, zero: bool) -> Self {
        let bound = (6.0 / inputs as f64).sqrt();
        let weight = if zero {
            DMatrix::zeros(outputs, inputs)
        } else {
            DMatrix::from_fn(outputs, inputs, |_, _| rng.random_range(-bound..bound))
        };
        Self {
            weight,
            bias: DVector::zeros(outputs),
        }
    }

    fn forward(&self, x: &DMatrix<f64>) -> DMatrix<f64> {
        let mut out = x * self.weight.transpose();
        for mut row in out.row_iter_mut() {
            row += self.bias.transpose();
        }
        out
    }

    fn num_params(&self) -> usize {
        self.weight.len() + self.bias.len()
    }

    fn push_params(&self, out: &mut Vec<f64>) {
        for r in 0..self.weight.nrows() {
            out.extend(self.weight.row(r).iter());
        }
        out.extend(self.bias.iter());
    }

    fn read_params(&mut self, src: &mut std::slice::Iter<'_, f64>) {
        let cols = self.weight.ncols();
        for r in 0..self.weight.nrows() {
            for c in 0..cols {
                self.weight[(r, c)] = *src.next().expect("length checked");
            }
        }
        for v in self.bias.iter_mut() {
            *v = *src.next().expect("length checked");
        }
    }
}

/// Running statistics of a batch-normalization layer.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunningStats {
    pub mean: Vec<f64>,
    pub var: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
struct BatchNorm {
    gamma: Vec<f64>,
    beta: Vec<f64>,
    running: RunningStats,
}

impl BatchNorm {
    fn new(width: usize) -> Self {
        Self {
            gamma: vec![1.0; width],
            beta: vec![0.0; width],
            running: RunningStats {
                mean: vec![0.0; width],
                var: vec![1.0; width],
            },
        }
    }
}

#[derive(Debug, Clone)]
struct NormCache {
    xhat: DMatrix<f64>,
    inv_std: Vec<f64>,
    batch_mean: Vec<f64>,
    batch_var: Vec<f64>,
}

/// Multilayer perceptron: `[Linear -> ReLU -> BatchNorm] x L -> Linear`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Mlp {
    spec: MlpSpec,
    input_dim: usize,
    hidden: Vec<(Dense, BatchNorm)>,
    output: Dense,
}

#[derive(Debug, Clone)]
struct MlpCache {
    /// Input of each dense layer, including the output layer.
    inputs: Vec<DMatrix<f64>>,
    pre_activations: Vec<DMatrix<f64>>,
    norms: Vec<NormCache>,
    mode: Mode,
}

impl Mlp {
    fn new(input_dim: usize, spec: MlpSpec, rng: &mut ChaCha8Rng, zero_output: bool) -> Self {
        let mut hidden = Vec::with_capacity(spec.hidden_layers);
        let mut width_in = input_dim;
        for _ in 0..spec.hidden_layers {
            hidden.push((
                Dense::new(width_in, spec.hidden_width, rng, false),
                BatchNorm::new(spec.hidden_width),
            ));
            width_in = spec.hidden_width;
        }
        let output = Dense::new(width_in, spec.output_dim, rng, zero_output);
        Self {
            spec,
            input_dim,
            hidden,
            output,
        }
    }

    fn num_params(&self) -> usize {
        self.hidden
            .iter()
            .map(|(d, n)| d.num_params() + 2 * n.gamma.len())
            .sum::<usize>()
            + self.output.num_params()
    }

    fn push_params(&self, out: &mut Vec<f64>) {
        for (dense, norm) in &self.hidden {
            dense.push_params(out);
            out.extend(&norm.gamma);
            out.extend(&norm.beta);
        }
        self.output.push_params(out);
    }

    fn read_params(&mut self, src: &mut std::slice::Iter<'_, f64>) {
        for (dense, norm) in &mut self.hidden {
            dense.read_params(src);
            for v in norm.gamma.iter_mut().chain(norm.beta.iter_mut()) {
                *v = *src.next().expect("length checked");
            }
        }
        self.output.read_params(src);
    }

    fn forward(&self, x: &DMatrix<f64>, mode: Mode) -> (DMatrix<f64>, MlpCache) {
        let b = x.nrows() as f64;
        let mut cache = MlpCache {
            inputs: Vec::with_capacity(self.hidden.len() + 1),
            pre_activations: Vec::with_capacity(self.hidden.len()),
            norms: Vec::with_capacity(self.hidden.len()),
            mode,
        };
        let mut h = x.clone();
        for (dense, norm) in &self.hidden {
            let a = dense.forward(&h);
            let r = a.map(|v| v.max(0.0));
            let width = r.ncols();
            let (mean, var) = match mode {
                Mode::Train => {
                    let mean: Vec<f64> = (0..width).map(|c| r.column(c).sum() / b).collect();
                    let var: Vec<f64> = (0..width)
                        .map(|c| r.column(c).iter().map(|v| (v - mean[c]).powi(2)).sum::<f64>() / b)
                        .collect();
                    (mean, var)
                }
                Mode::Eval => (norm.running.mean.clone(), norm.running.var.clone()),
            };
            let inv_std: Vec<f64> = var.iter().map(|v| 1.0 / (v + BN_EPS).sqrt()).collect();
            let xhat = DMatrix::from_fn(r.nrows(), width, |i, c| (r[(i, c)] - mean[c]) * inv_std[c]);
            let out = DMatrix::from_fn(r.nrows(), width, |i, c| norm.gamma[c] * xhat[(i, c)] + norm.beta[c]);
            cache.inputs.push(h);
            cache.pre_activations.push(a);
            cache.norms.push(NormCache {
                xhat,
                inv_std,
                batch_mean: mean,
                batch_var: var,
            });
            h = out;
        }
        let out = self.output.forward(&h);
        cache.inputs.push(h);
        (out, cache)
    }

    /// Parameter gradient, in flattening order, given `d loss / d output`.
    fn backward(&self, cache: &MlpCache, dout: &DMatrix<f64>, grad: &mut Vec<f64>) {
        let b = dout.nrows() as f64;
        let mut layer_grads: Vec<Vec<f64>> = Vec::with_capacity(self.hidden.len() + 1);

        let last_input = cache.inputs.last().expect("output layer input");
        let d_weight = dout.transpose() * last_input;
        let mut out_grad = Vec::with_capacity(self.output.num_params());
        for r in 0..d_weight.nrows() {
            out_grad.extend(d_weight.row(r).iter());
        }
        out_grad.extend((0..dout.ncols()).map(|c| dout.column(c).sum()));
        let mut dh = dout * &self.output.weight;

        for (l, (dense, norm)) in self.hidden.iter().enumerate().rev() {
            let nc = &cache.norms[l];
            let width = dh.ncols();
            let mut dgamma = vec![0.0; width];
            let mut dbeta = vec![0.0; width];
            let mut dr = DMatrix::zeros(dh.nrows(), width);
            for c in 0..width {
                let dxhat: Vec<f64> = dh.column(c).iter().map(|v| v * norm.gamma[c]).collect();
                dbeta[c] = dh.column(c).sum();
                dgamma[c] = dh.column(c).iter().zip(nc.xhat.column(c).iter()).map(|(g, x)| g * x).sum();
                match cache.mode {
                    Mode::Train => {
                        let sum_dxhat: f64 = dxhat.iter().sum();
                        let sum_dxhat_xhat: f64 =
                            dxhat.iter().zip(nc.xhat.column(c).iter()).map(|(g, x)| g * x).sum();
                        for i in 0..dh.nrows() {
                            dr[(i, c)] = nc.inv_std[c] / b
                                * (b * dxhat[i] - sum_dxhat - nc.xhat[(i, c)] * sum_dxhat_xhat);
                        }
                    }
                    Mode::Eval => {
                        for i in 0..dh.nrows() {
                            dr[(i, c)] = dxhat[i] * nc.inv_std[c];
                        }
                    }
                }
            }
            let a = &cache.pre_activations[l];
            let da = DMatrix::from_fn(dr.nrows(), width, |i, c| if a[(i, c)] > 0.0 { dr[(i, c)] } else { 0.0 });
            let d_weight = da.transpose() * &cache.inputs[l];
            let mut g = Vec::with_capacity(dense.num_params() + 2 * width);
            for r in 0..d_weight.nrows() {
                g.extend(d_weight.row(r).iter());
            }
            g.extend((0..width).map(|c| da.column(c).sum()));
            g.extend(dgamma);
            g.extend(dbeta);
            layer_grads.push(g);
            if l > 0 {
                dh = da * &dense.weight;
            }
        }
        for g in layer_grads.into_iter().rev() {
            grad.extend(g);
        }
        grad.extend(out_grad);
    }

    fn update_running(&mut self, cache: &MlpCache, batch: usize) {
        if cache.mode != Mode::Train || batch < 2 {
            return;
        }
        let unbias = batch as f64 / (batch - 1) as f64;
        for ((_, norm), nc) in self.hidden.iter_mut().zip(&cache.norms) {
            for c in 0..norm.gamma.len() {
                norm.running.mean[c] = (1.0 - BN_MOMENTUM) * norm.running.mean[c] + BN_MOMENTUM * nc.batch_mean[c];
                norm.running.var[c] =
                    (1.0 - BN_MOMENTUM) * norm.running.var[c] + BN_MOMENTUM * nc.batch_var[c] * unbias;
            }
        }
    }

    pub fn spec(&self) -> MlpSpec {
        self.spec
    }
}

/// Outer map of a residual network.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub enum Scaling {
    Basic(f64),
    Diag(Vec<f64>),
}

impl Scaling {
    fn apply(&self, u: &DMatrix<f64>) -> DMatrix<f64> {
        match self {
            Scaling::Basic(w) => u * *w,
            Scaling::Diag(w) => DMatrix::from_fn(u.nrows(), u.ncols(), |i, c| u[(i, c)] * w[c]),
        }
    }

    fn num_params(&self) -> usize {
        match self {
            Scaling::Basic(_) => 1,
            Scaling::Diag(w) => w.len(),
        }
    }

    fn push_params(&self, out: &mut Vec<f64>) {
        match self {
            Scaling::Basic(w) => out.push(*w),
            Scaling::Diag(w) => out.extend(w),
        }
    }

    fn read_params(&mut self, src: &mut std::slice::Iter<'_, f64>) {
        match self {
            Scaling::Basic(w) => *w = *src.next().expect("length checked"),
            Scaling::Diag(w) => {
                for v in w.iter_mut() {
                    *v = *src.next().expect("length checked");
                }
            }
        }
    }

    /// Weight gradient and input gradient for `z = scale(u)`.
    fn backward(&self, u: &DMatrix<f64>, dz: &DMatrix<f64>) -> (Vec<f64>, DMatrix<f64>) {
        match self {
            Scaling::Basic(w) => (vec![dz.dot(u)], dz * *w),
            Scaling::Diag(w) => {
                let g = (0..u.ncols()).map(|c| dz.column(c).dot(&u.column(c))).collect();
                let du = DMatrix::from_fn(dz.nrows(), dz.ncols(), |i, c| dz[(i, c)] * w[c]);
                (g, du)
            }
        }
    }
}

/// Architecture names as used on the command line.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Architecture {
    Basic,
    Diag,
    ResBasic,
    ResDiag,
    Mlp,
}

impl std::str::FromStr for Architecture {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "basic" => Ok(Self::Basic),
            "diag" => Ok(Self::Diag),
            "res-basic" => Ok(Self::ResBasic),
            "res-diag" => Ok(Self::ResDiag),
            "mlp" => Ok(Self::Mlp),
            other => Err(Error::InvalidArgument(format!("unknown architecture `{other}`"))),
        }
    }
}

impl std::fmt::Display for Architecture {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            Self::Basic => "basic",
            Self::Diag => "diag",
            Self::ResBasic => "res-basic",
            Self::ResDiag => "res-diag",
            Self::Mlp => "mlp",
        })
    }
}

/// The map `psi` whose output distances define the Gaussian kernel
/// `K(x, x') = exp(-|psi(x) - psi(x')|^2)`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "arch", rename_all = "kebab-case")]
pub enum EmbeddingNet {
    /// `psi(x) = w x`
    Basic { dim: usize, w: f64 },
    /// `psi(x) = diag(w) x`
    Diag { w: Vec<f64> },
    /// `psi(x) = outer(x + lambda * inner(x))`
    Residual {
        inner: Mlp,
        outer: Scaling,
        lambda: f64,
    },
    Mlp { net: Mlp },
}

/// Intermediate values kept by a cached forward pass.
#[derive(Debug, Clone)]
pub struct ForwardCache {
    input: DMatrix<f64>,
    inner: Option<MlpCache>,
    /// Residual only: `x + lambda * inner(x)`.
    mixed: Option<DMatrix<f64>>,
}

impl EmbeddingNet {
    /// `w = 1`, the identity map.
    pub fn basic(dim: usize) -> Self {
        Self::Basic { dim, w: 1.0 }
    }

    /// All-ones weights, the identity map.
    pub fn diag(dim: usize) -> Self {
        Self::Diag { w: vec![1.0; dim] }
    }

    pub fn mlp(input_dim: usize, hidden_layers: usize, hidden_width: usize, seed: u64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let spec = MlpSpec {
            hidden_layers,
            hidden_width,
            output_dim: input_dim,
        };
        Self::Mlp {
            net: Mlp::new(input_dim, spec, &mut rng, false),
        }
    }

    /// Residual network whose inner output layer starts at zero, so the map
    /// starts as `outer` applied to the identity.
    pub fn residual(
        input_dim: usize,
        hidden_layers: usize,
        hidden_width: usize,
        diag_outer: bool,
        lambda: f64,
        seed: u64,
    ) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let spec = MlpSpec {
            hidden_layers,
            hidden_width,
            output_dim: input_dim,
        };
        let outer = if diag_outer {
            Scaling::Diag(vec![1.0; input_dim])
        } else {
            Scaling::Basic(1.0)
        };
        Self::Residual {
            inner: Mlp::new(input_dim, spec, &mut rng, true),
            outer,
            lambda,
        }
    }

    /// Builds a freshly initialized network of the named architecture.
    pub fn build(arch: Architecture, input_dim: usize, hidden_layers: usize, hidden_width: usize, lambda: f64, seed: u64) -> Self {
        match arch {
            Architecture::Basic => Self::basic(input_dim),
            Architecture::Diag => Self::diag(input_dim),
            Architecture::ResBasic => Self::residual(input_dim, hidden_layers, hidden_width, false, lambda, seed),
            Architecture::ResDiag => Self::residual(input_dim, hidden_layers, hidden_width, true, lambda, seed),
            Architecture::Mlp => Self::mlp(input_dim, hidden_layers, hidden_width, seed),
        }
    }

    pub fn architecture(&self) -> Architecture {
        match self {
            Self::Basic { .. } => Architecture::Basic,
            Self::Diag { .. } => Architecture::Diag,
            Self::Residual { outer: Scaling::Basic(_), .. } => Architecture::ResBasic,
            Self::Residual { outer: Scaling::Diag(_), .. } => Architecture::ResDiag,
            Self::Mlp { .. } => Architecture::Mlp,
        }
    }

    pub fn input_dim(&self) -> usize {
        match self {
            Self::Basic { dim, .. } => *dim,
            Self::Diag { w } => w.len(),
            Self::Residual { inner, .. } => inner.input_dim,
            Self::Mlp { net } => net.input_dim,
        }
    }

    pub fn output_dim(&self) -> usize {
        match self {
            Self::Basic { dim, .. } => *dim,
            Self::Diag { w } => w.len(),
            Self::Residual { inner, .. } => inner.input_dim,
            Self::Mlp { net } => net.spec.output_dim,
        }
    }

    pub fn lambda(&self) -> Option<f64> {
        match self {
            Self::Residual { lambda, .. } => Some(*lambda),
            _ => None,
        }
    }

    pub fn mlp_spec(&self) -> Option<MlpSpec> {
        match self {
            Self::Residual { inner, .. } => Some(inner.spec),
            Self::Mlp { net } => Some(net.spec),
            _ => None,
        }
    }

    pub fn num_params(&self) -> usize {
        match self {
            Self::Basic { .. } => 1,
            Self::Diag { w } => w.len(),
            Self::Residual { inner, outer, .. } => inner.num_params() + outer.num_params(),
            Self::Mlp { net } => net.num_params(),
        }
    }

    pub fn params(&self) -> Vec<f64> {
        let mut out = Vec::with_capacity(self.num_params());
        match self {
            Self::Basic { w, .. } => out.push(*w),
            Self::Diag { w } => out.extend(w),
            Self::Residual { inner, outer, .. } => {
                inner.push_params(&mut out);
                outer.push_params(&mut out);
            }
            Self::Mlp { net } => net.push_params(&mut out),
        }
        out
    }

    pub fn set_params(&mut self, params: &[f64]) -> Result<()> {
        if params.len() != self.num_params() {
            return Err(Error::DimensionMismatch {
                expected: self.num_params(),
                actual: params.len(),
            });
        }
        let mut src = params.iter();
        match self {
            Self::Basic { w, .. } => *w = params[0],
            Self::Diag { w } => w.copy_from_slice(params),
            Self::Residual { inner, outer, .. } => {
                inner.read_params(&mut src);
                outer.read_params(&mut src);
            }
            Self::Mlp { net } => net.read_params(&mut src),
        }
        Ok(())
    }

    /// Batch-normalization running statistics, one entry per hidden layer.
    pub fn running_stats(&self) -> Vec<RunningStats> {
        match self {
            Self::Residual { inner: net, .. } | Self::Mlp { net } => {
                net.hidden.iter().map(|(_, n)| n.running.clone()).collect()
            }
            _ => Vec::new(),
        }
    }

    pub fn set_running_stats(&mut self, stats: &[RunningStats]) -> Result<()> {
        match self {
            Self::Residual { inner: net, .. } | Self::Mlp { net } => {
                if stats.len() != net.hidden.len() {
                    return Err(Error::DimensionMismatch {
                        expected: net.hidden.len(),
                        actual: stats.len(),
                    });
                }
                for ((_, norm), s) in net.hidden.iter_mut().zip(stats) {
                    if s.mean.len() != norm.gamma.len() || s.var.len() != norm.gamma.len() {
                        return Err(Error::DimensionMismatch {
                            expected: norm.gamma.len(),
                            actual: s.mean.len(),
                        });
                    }
                    norm.running = s.clone();
                }
                Ok(())
            }
            _ if stats.is_empty() => Ok(()),
            _ => Err(Error::DimensionMismatch {
                expected: 0,
                actual: stats.len(),
            }),
        }
    }

    fn check_dim(&self, cols: usize) -> Result<()> {
        if cols != self.input_dim() {
            return Err(Error::DimensionMismatch {
                expected: self.input_dim(),
                actual: cols,
            });
        }
        Ok(())
    }

    /// Embeds a batch; returns the `b x p` output and a cache for [`Self::backward`].
    pub fn forward_cached(&self, x: &DMatrix<f64>, mode: Mode) -> Result<(DMatrix<f64>, ForwardCache)> {
        self.check_dim(x.ncols())?;
        let mut cache = ForwardCache {
            input: x.clone(),
            inner: None,
            mixed: None,
        };
        let out = match self {
            Self::Basic { w, .. } => x * *w,
            Self::Diag { w } => DMatrix::from_fn(x.nrows(), x.ncols(), |i, c| x[(i, c)] * w[c]),
            Self::Residual { inner, outer, lambda } => {
                let (phi, ic) = inner.forward(x, mode);
                let u = x + phi * *lambda;
                let z = outer.apply(&u);
                cache.inner = Some(ic);
                cache.mixed = Some(u);
                z
            }
            Self::Mlp { net } => {
                let (z, ic) = net.forward(x, mode);
                cache.inner = Some(ic);
                z
            }
        };
        Ok((out, cache))
    }

    pub fn forward_batch(&self, x: &DMatrix<f64>, mode: Mode) -> Result<DMatrix<f64>> {
        Ok(self.forward_cached(x, mode)?.0)
    }

    /// Embeds one vector. In train mode a lone vector is its own batch.
    pub fn forward(&self, x: &[f64], mode: Mode) -> Result<Vec<f64>> {
        let m = DMatrix::from_row_slice(1, x.len(), x);
        Ok(self.forward_batch(&m, mode)?.row(0).iter().copied().collect())
    }

    /// Evaluation-mode embedding, used by every kernel built from this net.
    pub fn embed(&self, x: &[f64]) -> Result<Vec<f64>> {
        self.forward(x, Mode::Eval)
    }

    /// Parameter gradient given `d loss / d output` for the cached batch.
    pub fn backward(&self, cache: &ForwardCache, dout: &DMatrix<f64>) -> Vec<f64> {
        let x = &cache.input;
        match self {
            Self::Basic { .. } => vec![dout.dot(x)],
            Self::Diag { w } => (0..w.len()).map(|c| dout.column(c).dot(&x.column(c))).collect(),
            Self::Residual { inner, outer, lambda } => {
                let u = cache.mixed.as_ref().expect("residual cache");
                let (outer_grad, du) = outer.backward(u, dout);
                let mut grad = Vec::with_capacity(self.num_params());
                inner.backward(cache.inner.as_ref().expect("inner cache"), &(du * *lambda), &mut grad);
                grad.extend(outer_grad);
                grad
            }
            Self::Mlp { net } => {
                let mut grad = Vec::with_capacity(self.num_params());
                net.backward(cache.inner.as_ref().expect("mlp cache"), dout, &mut grad);
                grad
            }
        }
    }

    /// Folds a train-mode batch's statistics into the running averages.
    pub fn update_running_stats(&mut self, cache: &ForwardCache) {
        let batch = cache.input.nrows();
        if let Self::Residual { inner: net, .. } | Self::Mlp { net } = self {
            if let Some(ic) = &cache.inner {
                net.update_running(ic, batch);
            }
        }
    }
}

/// Stacks feature vectors into a `b x d` batch.
pub fn batch_matrix(rows: &[&[f64]]) -> DMatrix<f64> {
    let d = rows.first().map_or(0, |r| r.len());
    DMatrix::from_fn(rows.len(), d, |i, c| rows[i][c])
}
