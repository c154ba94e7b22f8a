//! Minimal differentiable-computation engine: fully connected ReLU
//! networks, Fourier-feature positional encodings, exact reverse-mode
//! gradients, Kaiming-uniform initialization, and Adam.
//!
//! Every activation is ReLU, including the output layer, so a network's
//! outputs are non-negative for all inputs and all parameter settings.
//! Forward passes record exactly the state a reverse pass needs; there is
//! no general-purpose graph, only the compositions this pipeline uses.
//!
//! The batched forward/backward pair is the training hot path: one call
//! evaluates a whole coordinate grid through dgemm, so iteration cost is
//! a handful of matrix products rather than thousands of small matvecs.

use rand::rngs::StdRng;
use rand::Rng;
use rand_distr::{Distribution, StandardNormal};

use crate::error::{Error, Result};
use crate::linalg::{self, Mat};

pub const ADAM_BETA1: f64 = 0.9;
pub const ADAM_BETA2: f64 = 0.999;
pub const ADAM_EPS: f64 = 1e-8;

/// Kaiming-uniform sample: entries i.i.d. on
/// `[-sqrt(6/fan_in), +sqrt(6/fan_in)]` (ReLU gain).
pub fn kaiming_uniform_init(rows: usize, cols: usize, fan_in: usize, rng: &mut StdRng) -> Mat {
    assert!(fan_in >= 1, "fan_in must be >= 1");
    let bound = (6.0 / fan_in as f64).sqrt();
    let mut data = Vec::with_capacity(rows * cols);
    for _ in 0..rows * cols {
        data.push((rng.random::<f64>() * 2.0 - 1.0) * bound);
    }
    Mat::from_vec(rows, cols, data)
}

/// Random Fourier-feature encoding `x -> [sin(2 pi W x), cos(2 pi W x)]`.
///
/// The projection is sampled once at construction (i.i.d. normal with
/// standard deviation `sigma`) and never trained.
#[derive(Debug, Clone)]
pub struct FourierEncoding {
    projection: Mat,
    sigma: f64,
}

impl FourierEncoding {
    pub fn sample(d: usize, input_dim: usize, sigma: f64, rng: &mut StdRng) -> Result<Self> {
        if d == 0 || input_dim == 0 {
            return Err(Error::argument("fourier encoding needs d >= 1 and input_dim >= 1"));
        }
        if !(sigma > 0.0) {
            return Err(Error::argument(format!("fourier bandwidth sigma must be > 0, got {sigma}")));
        }
        let projection = Mat::from_fn(d, input_dim, |_, _| {
            let z: f64 = StandardNormal.sample(rng);
            sigma * z
        });
        Ok(FourierEncoding { projection, sigma })
    }

    /// Construct from an explicit projection matrix (tests, checkpoints).
    pub fn from_projection(projection: Mat, sigma: f64) -> Self {
        FourierEncoding { projection, sigma }
    }

    pub fn projection(&self) -> &Mat {
        &self.projection
    }

    pub fn sigma(&self) -> f64 {
        self.sigma
    }

    pub fn input_dim(&self) -> usize {
        self.projection.cols()
    }

    /// Output dimension: `2 d` (sin block then cos block).
    pub fn encoded_dim(&self) -> usize {
        2 * self.projection.rows()
    }

    pub fn encode(&self, x: &[f64]) -> Result<Vec<f64>> {
        if x.len() != self.input_dim() {
            return Err(Error::argument(format!(
                "fourier_encode: input has {} dims, projection expects {}",
                x.len(),
                self.input_dim()
            )));
        }
        let d = self.projection.rows();
        let mut out = vec![0.0; 2 * d];
        for i in 0..d {
            let phase = core::f64::consts::TAU * linalg::dot(self.projection.row(i), x);
            out[i] = phase.sin();
            out[d + i] = phase.cos();
        }
        Ok(out)
    }

    /// Encodes a whole batch of points (rows of `points`).
    pub fn encode_batch(&self, points: &Mat) -> Result<Mat> {
        if points.cols() != self.input_dim() {
            return Err(Error::argument("encode_batch: point dimension mismatch"));
        }
        let d = self.projection.rows();
        let phases = linalg::matmul_nt(points, &self.projection);
        let mut out = Mat::zeros(points.rows(), 2 * d);
        for r in 0..points.rows() {
            let src = phases.row(r);
            let dst = out.row_mut(r);
            for i in 0..d {
                let phase = core::f64::consts::TAU * src[i];
                dst[i] = phase.sin();
                dst[d + i] = phase.cos();
            }
        }
        Ok(out)
    }
}

/// Fully connected network with ReLU at every layer, output included.
#[derive(Debug, Clone)]
pub struct Mlp {
    /// `weights[l]` has shape (out_l x in_l).
    weights: Vec<Mat>,
    biases: Vec<Vec<f64>>,
}

impl Mlp {
    /// Kaiming-uniform parameters (weights and biases alike). `dims`
    /// lists the input dimension followed by each layer's output
    /// dimension.
    pub fn kaiming(dims: &[usize], rng: &mut StdRng) -> Result<Self> {
        if dims.len() < 2 {
            return Err(Error::argument("mlp needs at least one layer"));
        }
        if dims.iter().any(|&d| d == 0) {
            return Err(Error::argument("mlp layer dimensions must be >= 1"));
        }
        let mut weights = Vec::with_capacity(dims.len() - 1);
        let mut biases = Vec::with_capacity(dims.len() - 1);
        for l in 0..dims.len() - 1 {
            weights.push(kaiming_uniform_init(dims[l + 1], dims[l], dims[l], rng));
            biases.push(kaiming_uniform_init(dims[l + 1], 1, dims[l], rng).as_slice().to_vec());
        }
        Ok(Mlp { weights, biases })
    }

    pub fn from_parts(weights: Vec<Mat>, biases: Vec<Vec<f64>>) -> Result<Self> {
        if weights.len() != biases.len() || weights.is_empty() {
            return Err(Error::argument("mlp: weights/biases layer count mismatch"));
        }
        for l in 0..weights.len() {
            if biases[l].len() != weights[l].rows() {
                return Err(Error::argument("mlp: bias length does not match layer output"));
            }
            if l + 1 < weights.len() && weights[l + 1].cols() != weights[l].rows() {
                return Err(Error::argument("mlp: consecutive layer dimensions do not chain"));
            }
        }
        Ok(Mlp { weights, biases })
    }

    pub fn depth(&self) -> usize {
        self.weights.len()
    }

    pub fn input_dim(&self) -> usize {
        self.weights[0].cols()
    }

    pub fn output_dim(&self) -> usize {
        self.weights.last().unwrap().rows()
    }

    pub fn weights(&self) -> &[Mat] {
        &self.weights
    }

    pub fn biases(&self) -> &[Vec<f64>] {
        &self.biases
    }

    pub fn param_count(&self) -> usize {
        self.weights.iter().map(|w| w.rows() * w.cols()).sum::<usize>()
            + self.biases.iter().map(|b| b.len()).sum::<usize>()
    }

    /// Parameter slices in a fixed order (W1, q1, W2, q2, ...), matching
    /// the layout used by [`MlpGrads`] and [`AdamState`].
    pub fn param_slices_mut(&mut self) -> Vec<&mut [f64]> {
        let mut out = Vec::with_capacity(2 * self.weights.len());
        for (w, b) in self.weights.iter_mut().zip(self.biases.iter_mut()) {
            out.push(w.as_mut_slice());
            out.push(b.as_mut_slice());
        }
        out
    }

    fn dims_fingerprint(&self) -> Vec<usize> {
        let mut dims = vec![self.input_dim()];
        dims.extend(self.weights.iter().map(|w| w.rows()));
        dims
    }

    fn value_fingerprint(&self) -> u64 {
        // cheap staleness sentinel: parameter count plus the raw bits of
        // one weight and one bias
        let w0 = self.weights[0].as_slice()[0].to_bits();
        let q0 = self.biases[0][0].to_bits();
        (self.param_count() as u64) ^ w0.rotate_left(17) ^ q0.rotate_left(41)
    }

    /// Single-point forward pass; the returned tape records the trace a
    /// reverse pass needs.
    pub fn forward(&self, input: &[f64]) -> Result<(Vec<f64>, Tape)> {
        if input.len() != self.input_dim() {
            return Err(Error::argument(format!(
                "mlp_forward: input has {} dims, network expects {}",
                input.len(),
                self.input_dim()
            )));
        }
        let mut activations = Vec::with_capacity(self.depth() + 1);
        let mut preacts = Vec::with_capacity(self.depth());
        activations.push(input.to_vec());
        let mut cur = input.to_vec();
        for (w, b) in self.weights.iter().zip(&self.biases) {
            let mut pre = vec![0.0; w.rows()];
            for (i, out) in pre.iter_mut().enumerate() {
                *out = linalg::dot(w.row(i), &cur) + b[i];
            }
            preacts.push(pre.clone());
            for v in pre.iter_mut() {
                *v = v.max(0.0);
            }
            cur = pre;
            activations.push(cur.clone());
        }
        let tape = Tape {
            activations,
            preacts,
            dims: self.dims_fingerprint(),
            values: self.value_fingerprint(),
        };
        Ok((cur, tape))
    }

    /// Reverse-mode gradients for one recorded forward pass. Consumes the
    /// tape; replaying a tape against a different or since-updated network
    /// is a state error.
    pub fn backward(&self, tape: Tape, upstream: &[f64]) -> Result<MlpGrads> {
        if tape.dims != self.dims_fingerprint() || tape.values != self.value_fingerprint() {
            return Err(Error::state("backward: tape does not belong to this network state"));
        }
        if upstream.len() != self.output_dim() {
            return Err(Error::argument("backward: upstream length mismatch"));
        }
        let depth = self.depth();
        let mut grads = MlpGrads::zeros_like(self);
        // dy: gradient w.r.t. the post-activation output of layer l
        let mut dy = upstream.to_vec();
        for l in (0..depth).rev() {
            // ReLU subgradient, zero at exactly zero.
            for (g, &pre) in dy.iter_mut().zip(&tape.preacts[l]) {
                if pre <= 0.0 {
                    *g = 0.0;
                }
            }
            let x_prev = &tape.activations[l];
            for i in 0..self.weights[l].rows() {
                let gi = dy[i];
                grads.biases[l][i] += gi;
                let grow = grads.weights[l].row_mut(i);
                for (gw, &xp) in grow.iter_mut().zip(x_prev) {
                    *gw += gi * xp;
                }
            }
            if l > 0 {
                let mut dx = vec![0.0; self.weights[l].cols()];
                for i in 0..self.weights[l].rows() {
                    let gi = dy[i];
                    for (d, &wv) in dx.iter_mut().zip(self.weights[l].row(i)) {
                        *d += gi * wv;
                    }
                }
                dy = dx;
            }
        }
        Ok(grads)
    }

    /// Grid forward pass: rows of `input` are points. Layer outputs are
    /// written into `tape`, reusing its buffers across iterations.
    pub fn forward_batch_into(&self, input: &Mat, tape: &mut BatchTape) {
        assert_eq!(input.cols(), self.input_dim(), "forward_batch: input dim mismatch");
        let n = input.rows();
        tape.ensure_shape(self, n);
        for l in 0..self.depth() {
            // split borrow: the layer's output buffer vs the previous one
            let (before, rest) = tape.outs.split_at_mut(l);
            let out = &mut rest[0];
            let x = if l == 0 { input } else { &before[l - 1] };
            linalg::matmul_nt_into(x, &self.weights[l], out);
            let b = &self.biases[l];
            let cols = out.cols();
            for r in 0..n {
                let row = out.row_mut(r);
                for j in 0..cols {
                    row[j] = (row[j] + b[j]).max(0.0);
                }
            }
        }
    }

    /// Smallest pre-activation magnitude over a whole batch. Gradient
    /// checks use this to stay away from ReLU kinks, where central
    /// differences and the subgradient convention legitimately disagree.
    pub fn min_abs_preactivation_batch(&self, input: &Mat) -> f64 {
        let n = input.rows();
        let mut cur = input.clone();
        let mut min_abs = f64::INFINITY;
        for l in 0..self.depth() {
            let mut pre = linalg::matmul_nt(&cur, &self.weights[l]);
            let b = &self.biases[l];
            for r in 0..n {
                let row = pre.row_mut(r);
                for (v, &bv) in row.iter_mut().zip(b) {
                    *v += bv;
                    min_abs = min_abs.min(v.abs());
                    *v = v.max(0.0);
                }
            }
            cur = pre;
        }
        min_abs
    }

    /// Reverse pass matching [`Mlp::forward_batch_into`]. `upstream` holds
    /// d(loss)/d(output) per point; gradients are overwritten.
    pub fn backward_batch_into(
        &self,
        input: &Mat,
        tape: &BatchTape,
        upstream: &Mat,
        grads: &mut MlpGrads,
        scratch: &mut BackScratch,
    ) {
        let n = input.rows();
        let depth = self.depth();
        assert_eq!(upstream.rows(), n, "backward_batch: upstream rows mismatch");
        assert_eq!(upstream.cols(), self.output_dim(), "backward_batch: upstream cols mismatch");
        scratch.ensure_shape(self, n);

        // dy starts as upstream masked by the output layer's ReLU.
        let mut cur = 0usize;
        mask_into(upstream, &tape.outs[depth - 1], &mut scratch.bufs[cur]);
        for l in (0..depth).rev() {
            let x_prev = if l == 0 { input } else { &tape.outs[l - 1] };
            {
                let dy = &scratch.bufs[cur];
                linalg::matmul_tn_into(dy, x_prev, &mut grads.weights[l]);
                let gb = &mut grads.biases[l];
                gb.iter_mut().for_each(|v| *v = 0.0);
                for r in 0..n {
                    let row = dy.row(r);
                    for (g, &v) in gb.iter_mut().zip(row) {
                        *g += v;
                    }
                }
            }
            if l > 0 {
                let nxt = cur ^ 1;
                {
                    let (dy, dx) = scratch.pair_mut(cur, nxt, n, self.weights[l].cols());
                    linalg::matmul_into(dy, &self.weights[l], dx);
                }
                // mask by the previous layer's ReLU support
                let prev_out = &tape.outs[l - 1];
                let dx = &mut scratch.bufs[nxt];
                for (g, &a) in dx.as_mut_slice().iter_mut().zip(prev_out.as_slice()) {
                    if a <= 0.0 {
                        *g = 0.0;
                    }
                }
                cur = nxt;
            }
        }
    }
}

fn mask_into(src: &Mat, support: &Mat, dst: &mut Mat) {
    dst.resize_to(src.rows(), src.cols());
    for ((d, &s), &a) in dst
        .as_mut_slice()
        .iter_mut()
        .zip(src.as_slice())
        .zip(support.as_slice())
    {
        *d = if a > 0.0 { s } else { 0.0 };
    }
}

/// Recorded trace of one single-point forward pass.
#[derive(Debug, Clone)]
pub struct Tape {
    /// Post-activation values per layer; entry 0 is the input.
    activations: Vec<Vec<f64>>,
    /// Pre-activation values per layer, for ReLU subgradients and
    /// kink-proximity checks.
    preacts: Vec<Vec<f64>>,
    dims: Vec<usize>,
    values: u64,
}

impl Tape {
    /// Smallest pre-activation magnitude seen anywhere in the pass; a
    /// finite-difference check should skip points where this is tiny.
    pub fn min_abs_preactivation(&self) -> f64 {
        self.preacts
            .iter()
            .flat_map(|layer| layer.iter().map(|v| v.abs()))
            .fold(f64::INFINITY, f64::min)
    }
}

/// Layer outputs of a batched forward pass, reused across iterations.
#[derive(Debug)]
pub struct BatchTape {
    outs: Vec<Mat>,
}

impl BatchTape {
    pub fn new() -> Self {
        BatchTape { outs: Vec::new() }
    }

    fn ensure_shape(&mut self, net: &Mlp, n: usize) {
        self.outs.resize_with(net.depth(), || Mat::zeros(0, 0));
        for (l, out) in self.outs.iter_mut().enumerate() {
            out.resize_to(n, net.weights[l].rows());
        }
    }

    /// Output of the final layer (valid after a forward pass).
    pub fn output(&self) -> &Mat {
        self.outs.last().expect("forward pass recorded")
    }
}

/// Ping-pong buffers for the batched reverse pass.
#[derive(Debug)]
pub struct BackScratch {
    bufs: [Mat; 2],
}

impl BackScratch {
    pub fn new() -> Self {
        BackScratch { bufs: [Mat::zeros(0, 0), Mat::zeros(0, 0)] }
    }

    fn ensure_shape(&mut self, net: &Mlp, n: usize) {
        let max_w = net.weights.iter().map(|w| w.rows().max(w.cols())).max().unwrap_or(0);
        for b in &mut self.bufs {
            b.reserve_capacity(n * max_w);
        }
        self.bufs[0].resize_to(n, net.output_dim());
    }

    fn pair_mut(&mut self, cur: usize, nxt: usize, n: usize, cols: usize) -> (&Mat, &mut Mat) {
        assert_ne!(cur, nxt);
        let (a, b) = self.bufs.split_at_mut(1);
        let (dy, dx) = if cur == 0 { (&a[0], &mut b[0]) } else { (&b[0], &mut a[0]) };
        dx.resize_to(n, cols);
        (dy, dx)
    }
}

/// Per-layer parameter gradients, aligned with [`Mlp`]'s layout.
#[derive(Debug, Clone)]
pub struct MlpGrads {
    pub weights: Vec<Mat>,
    pub biases: Vec<Vec<f64>>,
}

impl MlpGrads {
    pub fn zeros_like(net: &Mlp) -> Self {
        MlpGrads {
            weights: net.weights.iter().map(|w| Mat::zeros(w.rows(), w.cols())).collect(),
            biases: net.biases.iter().map(|b| vec![0.0; b.len()]).collect(),
        }
    }

    pub fn param_slices(&self) -> Vec<&[f64]> {
        let mut out = Vec::with_capacity(2 * self.weights.len());
        for (w, b) in self.weights.iter().zip(&self.biases) {
            out.push(w.as_slice());
            out.push(b.as_slice());
        }
        out
    }

    pub fn max_abs(&self) -> f64 {
        let w = self.weights.iter().map(|m| m.max_abs()).fold(0.0f64, f64::max);
        let b = self
            .biases
            .iter()
            .flat_map(|b| b.iter().map(|v| v.abs()))
            .fold(0.0f64, f64::max);
        w.max(b)
    }
}

/// Adam optimizer state: bias-corrected first/second moments above a flat
/// view of the parameters.
#[derive(Debug, Clone)]
pub struct AdamState {
    m: Vec<f64>,
    v: Vec<f64>,
    step: u64,
    pub beta1: f64,
    pub beta2: f64,
    pub epsilon: f64,
}

impl AdamState {
    pub fn new(n_params: usize) -> Self {
        AdamState {
            m: vec![0.0; n_params],
            v: vec![0.0; n_params],
            step: 0,
            beta1: ADAM_BETA1,
            beta2: ADAM_BETA2,
            epsilon: ADAM_EPS,
        }
    }

    pub fn for_net(net: &Mlp) -> Self {
        AdamState::new(net.param_count())
    }

    pub fn step_count(&self) -> u64 {
        self.step
    }

    /// One bias-corrected Adam update over matching parameter/gradient
    /// slice lists.
    pub fn step_slices(&mut self, lr: f64, params: &mut [&mut [f64]], grads: &[&[f64]]) -> Result<()> {
        let total: usize = params.iter().map(|p| p.len()).sum();
        if total != self.m.len() {
            return Err(Error::argument(format!(
                "adam_step: {total} parameters but state holds {}",
                self.m.len()
            )));
        }
        if params.len() != grads.len()
            || params.iter().zip(grads).any(|(p, g)| p.len() != g.len())
        {
            return Err(Error::argument("adam_step: parameter/gradient shape mismatch"));
        }
        self.step += 1;
        let t = self.step as i32;
        let bc1 = 1.0 - self.beta1.powi(t);
        let bc2 = 1.0 - self.beta2.powi(t);
        let mut at = 0usize;
        for (p, g) in params.iter_mut().zip(grads) {
            for (pv, &gv) in p.iter_mut().zip(g.iter()) {
                let m = &mut self.m[at];
                let v = &mut self.v[at];
                *m = self.beta1 * *m + (1.0 - self.beta1) * gv;
                *v = self.beta2 * *v + (1.0 - self.beta2) * gv * gv;
                let mhat = *m / bc1;
                let vhat = *v / bc2;
                *pv -= lr * mhat / (vhat.sqrt() + self.epsilon);
                at += 1;
            }
        }
        Ok(())
    }

    /// Convenience wrapper updating a whole network from its gradients.
    pub fn step_net(&mut self, lr: f64, net: &mut Mlp, grads: &MlpGrads) -> Result<()> {
        let gslices = grads.param_slices();
        let mut pslices = net.param_slices_mut();
        self.step_slices(lr, &mut pslices, &gslices)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;

    #[test]
    fn kaiming_bound_and_determinism() {
        let mut rng = StdRng::seed_from_u64(1);
        let m = kaiming_uniform_init(10, 6, 6, &mut rng);
        // fan_in = 6 gives bound exactly 1
        assert!(m.as_slice().iter().all(|v| v.abs() <= 1.0));
        let mut rng2 = StdRng::seed_from_u64(1);
        let m2 = kaiming_uniform_init(10, 6, 6, &mut rng2);
        assert_eq!(m.as_slice(), m2.as_slice());
    }

    #[test]
    fn kaiming_sample_mean_near_zero() {
        let mut rng = StdRng::seed_from_u64(2);
        let n = 100_000usize;
        let m = kaiming_uniform_init(n, 1, 12, &mut rng);
        let bound = (6.0 / 12.0f64).sqrt();
        let mean = m.as_slice().iter().sum::<f64>() / n as f64;
        // std of the mean for U[-b, b] is b/sqrt(3 n)
        let sigma = bound / (3.0 * n as f64).sqrt();
        assert!(mean.abs() < 3.0 * sigma, "mean {mean} vs 3 sigma {}", 3.0 * sigma);
    }

    #[test]
    fn fourier_encode_at_zero() {
        let mut rng = StdRng::seed_from_u64(3);
        let enc = FourierEncoding::sample(5, 2, 8.0, &mut rng).unwrap();
        let f = enc.encode(&[0.0, 0.0]).unwrap();
        assert_eq!(&f[..5], &[0.0; 5]);
        assert_eq!(&f[5..], &[1.0; 5]);
    }

    #[test]
    fn fourier_norm_is_d() {
        let mut rng = StdRng::seed_from_u64(4);
        let enc = FourierEncoding::sample(7, 2, 8.0, &mut rng).unwrap();
        for k in 0..10 {
            let x = [k as f64 * 0.13 - 0.5, (k as f64 * 0.31).cos()];
            let f = enc.encode(&x).unwrap();
            let n2: f64 = f.iter().map(|v| v * v).sum();
            assert!((n2 - 7.0).abs() < 1e-12);
        }
    }

    #[test]
    fn fourier_periodic_for_integer_rows() {
        let proj = Mat::from_vec(2, 2, vec![3.0, -2.0, 1.0, 4.0]);
        let enc = FourierEncoding::from_projection(proj, 1.0);
        let x = [0.37, -0.85];
        let shifted = [x[0] + 1.0, x[1]];
        let a = enc.encode(&x).unwrap();
        let b = enc.encode(&shifted).unwrap();
        for (u, v) in a.iter().zip(&b) {
            assert!((u - v).abs() < 1e-9);
        }
    }

    #[test]
    fn forward_zero_net_and_identity() {
        let zero = Mlp::from_parts(vec![Mat::zeros(3, 3)], vec![vec![0.0; 3]]).unwrap();
        let (y, _) = zero.forward(&[1.0, -2.0, 0.5]).unwrap();
        assert_eq!(y, vec![0.0; 3]);

        let ident = Mlp::from_parts(vec![Mat::identity(3)], vec![vec![0.0; 3]]).unwrap();
        let (y, _) = ident.forward(&[1.0, 2.0, 3.0]).unwrap();
        assert_eq!(y, vec![1.0, 2.0, 3.0]);
    }

    #[test]
    fn outputs_are_nonnegative() {
        let mut rng = StdRng::seed_from_u64(5);
        let net = Mlp::kaiming(&[4, 16, 16, 2], &mut rng).unwrap();
        for k in 0..50 {
            let x: Vec<f64> = (0..4).map(|i| ((k * 7 + i) as f64 * 0.61).sin() * 3.0).collect();
            let (y, _) = net.forward(&x).unwrap();
            assert!(y.iter().all(|&v| v >= 0.0));
        }
    }

    #[test]
    fn forward_dim_mismatch_is_argument_error() {
        let mut rng = StdRng::seed_from_u64(6);
        let net = Mlp::kaiming(&[4, 8, 1], &mut rng).unwrap();
        assert!(matches!(net.forward(&[1.0, 2.0]), Err(Error::Argument(_))));
    }

    #[test]
    fn stale_tape_is_state_error() {
        let mut rng = StdRng::seed_from_u64(7);
        let mut net = Mlp::kaiming(&[3, 8, 1], &mut rng).unwrap();
        let (_, tape) = net.forward(&[0.1, 0.2, 0.3]).unwrap();
        // mutate the network before replaying the tape
        net.param_slices_mut()[0][0] += 0.5;
        assert!(matches!(net.backward(tape, &[1.0]), Err(Error::State(_))));
    }

    fn loss_of(net: &Mlp, x: &[f64]) -> f64 {
        // scalar output network
        net.forward(x).unwrap().0[0]
    }

    #[test]
    fn gradients_match_finite_differences() {
        // 3-layer nets across 20 seeds, skipping near-kink configurations
        let step = 1e-5;
        let mut checked = 0usize;
        for seed in 0..20u64 {
            let mut rng = StdRng::seed_from_u64(1000 + seed);
            let mut net = Mlp::kaiming(&[3, 8, 8, 1], &mut rng).unwrap();
            // random biases so kinks are not aligned at the origin
            for slice in net.param_slices_mut() {
                for v in slice.iter_mut() {
                    if *v == 0.0 {
                        *v = (rng.random::<f64>() - 0.5) * 0.2;
                    }
                }
            }
            let x: Vec<f64> = (0..3).map(|_| rng.random::<f64>() * 2.0 - 1.0).collect();
            let (_, tape) = net.forward(&x).unwrap();
            if tape.min_abs_preactivation() < 1e-4 {
                continue;
            }
            let analytic = net.backward(tape, &[1.0]).unwrap();
            let an_slices: Vec<Vec<f64>> =
                analytic.param_slices().iter().map(|s| s.to_vec()).collect();

            let mut max_rel: f64 = 0.0;
            let n_slices = an_slices.len();
            for si in 0..n_slices {
                for pi in 0..an_slices[si].len() {
                    let orig = {
                        let mut ps = net.param_slices_mut();
                        let o = ps[si][pi];
                        ps[si][pi] = o + step;
                        o
                    };
                    let f_plus = loss_of(&net, &x);
                    {
                        let mut ps = net.param_slices_mut();
                        ps[si][pi] = orig - step;
                    }
                    let f_minus = loss_of(&net, &x);
                    {
                        let mut ps = net.param_slices_mut();
                        ps[si][pi] = orig;
                    }
                    let fd = (f_plus - f_minus) / (2.0 * step);
                    let a = an_slices[si][pi];
                    let denom = a.abs().max(fd.abs()).max(1e-6);
                    max_rel = max_rel.max((a - fd).abs() / denom);
                }
            }
            assert!(max_rel <= 1e-4, "seed {seed}: max relative error {max_rel}");
            checked += 1;
        }
        assert!(checked >= 10, "too many seeds skipped near kinks");
    }

    #[test]
    fn gradient_linearity_and_zero_cases() {
        let mut rng = StdRng::seed_from_u64(2024);
        let net = Mlp::kaiming(&[2, 6, 1], &mut rng).unwrap();
        let x = [0.4, -0.3];
        let (_, t1) = net.forward(&x).unwrap();
        let g1 = net.backward(t1, &[1.0]).unwrap();
        let (_, t2) = net.forward(&x).unwrap();
        let g2 = net.backward(t2, &[2.5]).unwrap();
        for (a, b) in g1.param_slices().iter().zip(g2.param_slices()) {
            for (x1, x2) in a.iter().zip(b.iter()) {
                assert!((2.5 * x1 - x2).abs() < 1e-12);
            }
        }
        // constant (all-dead) output has zero gradient everywhere
        let dead = Mlp::from_parts(
            vec![Mat::from_vec(1, 2, vec![-1.0, -1.0])],
            vec![vec![-1.0]],
        )
        .unwrap();
        let (y, t) = dead.forward(&[0.5, 0.5]).unwrap();
        assert_eq!(y[0], 0.0);
        let g = dead.backward(t, &[1.0]).unwrap();
        assert_eq!(g.max_abs(), 0.0);
    }

    #[test]
    fn batch_forward_matches_single() {
        let mut rng = StdRng::seed_from_u64(31);
        let net = Mlp::kaiming(&[4, 12, 12, 1], &mut rng).unwrap();
        let points = Mat::from_fn(9, 4, |i, j| ((i * 4 + j) as f64 * 0.37).sin());
        let mut tape = BatchTape::new();
        net.forward_batch_into(&points, &mut tape);
        for r in 0..9 {
            let (y, _) = net.forward(points.row(r)).unwrap();
            let b = tape.output().get(r, 0);
            assert!((y[0] - b).abs() <= 1e-12 * y[0].abs().max(1.0));
        }
    }

    #[test]
    fn batch_backward_matches_single_sum() {
        // summed per-point losses: batch gradient equals the sum of
        // single-point gradients
        let mut rng = StdRng::seed_from_u64(32);
        let net = Mlp::kaiming(&[3, 10, 1], &mut rng).unwrap();
        let points = Mat::from_fn(7, 3, |i, j| ((i * 3 + j) as f64 * 0.77).cos());
        let upstream = Mat::from_fn(7, 1, |i, _| 0.5 + i as f64 * 0.1);

        let mut tape = BatchTape::new();
        net.forward_batch_into(&points, &mut tape);
        let mut grads = MlpGrads::zeros_like(&net);
        let mut scratch = BackScratch::new();
        net.backward_batch_into(&points, &tape, &upstream, &mut grads, &mut scratch);

        let mut reference = MlpGrads::zeros_like(&net);
        for r in 0..7 {
            let (_, t) = net.forward(points.row(r)).unwrap();
            let g = net.backward(t, &[upstream.get(r, 0)]).unwrap();
            for l in 0..net.depth() {
                for (acc, v) in reference.weights[l]
                    .as_mut_slice()
                    .iter_mut()
                    .zip(g.weights[l].as_slice())
                {
                    *acc += v;
                }
                for (acc, v) in reference.biases[l].iter_mut().zip(&g.biases[l]) {
                    *acc += v;
                }
            }
        }
        for (a, b) in grads.param_slices().iter().zip(reference.param_slices()) {
            for (x, y) in a.iter().zip(b.iter()) {
                assert!((x - y).abs() <= 1e-10 * y.abs().max(1.0), "{x} vs {y}");
            }
        }
    }

    #[test]
    fn adam_zero_gradient_keeps_params() {
        let mut rng = StdRng::seed_from_u64(40);
        let mut net = Mlp::kaiming(&[2, 4, 1], &mut rng).unwrap();
        let before: Vec<f64> = net.param_slices_mut().iter().flat_map(|s| s.to_vec()).collect();
        let grads = MlpGrads::zeros_like(&net);
        let mut adam = AdamState::for_net(&net);
        adam.step_net(0.1, &mut net, &grads).unwrap();
        let after: Vec<f64> = net.param_slices_mut().iter().flat_map(|s| s.to_vec()).collect();
        assert_eq!(before, after);
    }

    #[test]
    fn adam_first_step_is_signed_lr() {
        let mut p = vec![1.0, -2.0, 0.0];
        let g = vec![3.0, -0.4, 0.0];
        let mut adam = AdamState::new(3);
        adam.step_slices(0.01, &mut [&mut p], &[&g]).unwrap();
        assert!((p[0] - (1.0 - 0.01)).abs() < 1e-6);
        assert!((p[1] - (-2.0 + 0.01)).abs() < 1e-6);
        assert_eq!(p[2], 0.0);
    }

    #[test]
    fn adam_minimizes_quadratic() {
        let target = 0.5;
        let mut x = vec![0.0];
        let mut adam = AdamState::new(1);
        for _ in 0..2000 {
            let g = vec![x[0] - target];
            adam.step_slices(1e-2, &mut [&mut x], &[&g]).unwrap();
        }
        assert!((x[0] - target).abs() <= 1e-3, "x = {}", x[0]);
    }

    #[test]
    fn adam_shape_mismatch_is_argument_error() {
        let mut p = vec![1.0, 2.0];
        let g = vec![1.0];
        let mut adam = AdamState::new(2);
        assert!(matches!(
            adam.step_slices(0.1, &mut [&mut p], &[&g]),
            Err(Error::Argument(_))
        ));
    }
}
