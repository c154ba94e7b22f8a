//! NINRF: non-negative INR factorization. K spatial networks and K
//! temporal networks (all ReLU, so all outputs are non-negative) produce
//! the factor matrices `A` and `B` on the training grids; their product
//! is pushed through the projector and fitted to the observed counts
//! under the KL loss with TV and temporal-smoothness regularizers.
//!
//! The same machinery drives the INR-B hybrid, where only `A` comes from
//! networks and `B` follows the multiplicative EM update.

use std::collections::HashMap;

use rand::rngs::StdRng;
use rand::SeedableRng;

use crate::error::{Error, Result};
use crate::linalg::{self, Mat};
use crate::neural::{AdamState, BackScratch, BatchTape, FourierEncoding, Mlp, MlpGrads};
use crate::phantom::DynamicImage;
use crate::projector::{RadonProjector, Sinogram};

use super::{KL_EPS, TV_SMOOTH_EPS};

/// Cached-activation budget; above this the trainer recomputes forward
/// passes during backward instead of keeping one tape per network.
const TAPE_CACHE_LIMIT_BYTES: usize = 1_200_000_000;

/// Everything Algorithm-style NINRF training needs.
#[derive(Debug, Clone)]
pub struct NinrfConfig {
    pub k: usize,
    pub lambda1: f64,
    pub lambda2: f64,
    pub i_max: usize,
    /// Iterations with both regularizers disabled.
    pub warmup: usize,
    pub lr_spatial: f64,
    pub lr_temporal: f64,
    /// Step-decay factor during the first `decay_switch` iterations.
    pub decay_rate_early: f64,
    /// Step-decay factor afterwards.
    pub decay_rate_late: f64,
    /// Iterations between decay steps.
    pub decay_period: usize,
    pub decay_switch: usize,
    /// Fourier feature counts and bandwidths.
    pub d1: usize,
    pub d2: usize,
    pub sigma1: f64,
    pub sigma2: f64,
    pub spatial_hidden: Vec<usize>,
    pub temporal_hidden: Vec<usize>,
    pub seed: u64,
}

impl NinrfConfig {
    /// Rat-study hyperparameters; regularization weights depend on the
    /// sinogram noise level.
    pub fn rat_study(snr_db: f64) -> Self {
        let (lambda1, lambda2) = match snr_db.round() as i64 {
            30 => (4.0, 0.1),
            20 => (10.0, 0.5),
            10 => (50.0, 5.0),
            5 => (50.0, 5.0),
            _ => (10.0, 0.5),
        };
        NinrfConfig {
            k: 5,
            lambda1,
            lambda2,
            i_max: 10_000,
            warmup: 1000,
            lr_spatial: 5e-4,
            lr_temporal: 5e-4,
            decay_rate_early: 0.98,
            decay_rate_late: 0.95,
            decay_period: 100,
            decay_switch: 1000,
            d1: 256,
            d2: 256,
            sigma1: 8.0,
            sigma2: 8.0,
            spatial_hidden: vec![256; 3],
            temporal_hidden: vec![256; 3],
            seed: 0,
        }
    }

    /// Brain-study hyperparameters (deeper/wider spatial networks).
    pub fn brain_study() -> Self {
        NinrfConfig {
            k: 6,
            lambda1: 2e4,
            lambda2: 5e-4,
            lr_spatial: 5e-3,
            lr_temporal: 5e-3,
            spatial_hidden: vec![512; 4],
            ..NinrfConfig::rat_study(20.0)
        }
    }

    /// Brain-with-tumor hyperparameters.
    pub fn tumor_study() -> Self {
        NinrfConfig { lambda1: 400.0, lambda2: 5.0, ..NinrfConfig::brain_study() }
    }

    pub fn validate(&self) -> Result<()> {
        if self.k == 0 {
            return Err(Error::argument("ninrf: K must be >= 1"));
        }
        if self.lambda1 < 0.0 || self.lambda2 < 0.0 {
            return Err(Error::argument("ninrf: regularization weights must be >= 0"));
        }
        if self.warmup > self.i_max {
            return Err(Error::argument("ninrf: warmup cannot exceed i_max"));
        }
        if !(self.lr_spatial > 0.0 && self.lr_temporal > 0.0) {
            return Err(Error::argument("ninrf: learning rates must be > 0"));
        }
        if self.decay_period == 0 {
            return Err(Error::argument("ninrf: decay period must be >= 1"));
        }
        if self.d1 == 0 || self.d2 == 0 || !(self.sigma1 > 0.0) || !(self.sigma2 > 0.0) {
            return Err(Error::argument("ninrf: invalid encoding hyperparameters"));
        }
        Ok(())
    }
}

/// One training-iteration record of the loss trace.
#[derive(Debug, Clone, Copy)]
pub struct LossRow {
    pub iteration: usize,
    pub data_term: f64,
    /// Effective spatial regularizer `lambda1 * R1` (zero during warmup).
    pub r1_term: f64,
    /// Effective temporal regularizer `lambda2 * R2` (zero during warmup).
    pub r2_term: f64,
    pub lr_spatial: f64,
    pub lr_temporal: f64,
}

impl LossRow {
    pub fn total(&self) -> f64 {
        self.data_term + self.r1_term + self.r2_term
    }
}

#[derive(Debug, Clone, Default)]
pub struct LossTrace {
    pub rows: Vec<LossRow>,
}

/// Loss decomposition of one evaluation.
#[derive(Debug, Clone, Copy)]
pub struct LossParts {
    pub data_term: f64,
    pub r1_term: f64,
    pub r2_term: f64,
}

impl LossParts {
    pub fn total(&self) -> f64 {
        self.data_term + self.r1_term + self.r2_term
    }
}

/// The trained continuous model: K spatial and K temporal INRs sharing
/// one spatial and one temporal Fourier encoding.
#[derive(Debug, Clone)]
pub struct InrFactorModel {
    pub k: usize,
    pub h: usize,
    pub w: usize,
    pub t_frames: usize,
    spatial_nets: Vec<Mlp>,
    temporal_nets: Vec<Mlp>,
    spatial_encoding: FourierEncoding,
    temporal_encoding: FourierEncoding,
    /// Counts-per-activity factor of the training sinogram; evaluation
    /// divides by it so outputs are in activity units.
    scale: f64,
    frame_times_min: Vec<f64>,
    frame_durations_min: Vec<f64>,
}

/// Training grid `{(i/h, j/w)}`, row-major with the second coordinate
/// fastest.
pub(crate) fn spatial_grid(h: usize, w: usize) -> Mat {
    Mat::from_fn(h * w, 2, |p, c| {
        let (i, j) = (p / w, p % w);
        if c == 0 {
            i as f64 / h as f64
        } else {
            j as f64 / w as f64
        }
    })
}

/// Training grid `{t/T}`.
pub(crate) fn temporal_grid(t_frames: usize) -> Mat {
    Mat::from_fn(t_frames, 1, |t, _| t as f64 / t_frames as f64)
}

/// Frame-major product `A B`; the scalar k-loop here is the canonical
/// evaluation order shared with [`InrFactorModel::evaluate`], so grid
/// evaluation and the factor-matrix product agree bitwise.
pub(crate) fn product_frames(a: &Mat, b: &Mat, out: &mut [f64]) {
    let n = a.rows();
    let k = a.cols();
    let t_frames = b.cols();
    debug_assert_eq!(b.rows(), k);
    debug_assert_eq!(out.len(), n * t_frames);
    for t in 0..t_frames {
        let frame = &mut out[t * n..(t + 1) * n];
        for (p, slot) in frame.iter_mut().enumerate() {
            let row = a.row(p);
            let mut acc = 0.0;
            for q in 0..k {
                acc += row[q] * b.get(q, t);
            }
            *slot = acc;
        }
    }
}

impl InrFactorModel {
    /// Factor matrices evaluated on the training grids. `A` is in
    /// activity units (the stored count scale is divided out), `B` is the
    /// raw temporal basis.
    pub fn factor_matrices(&self) -> (Mat, Mat) {
        let psi1 = self.spatial_encoding.encode_batch(&spatial_grid(self.h, self.w)).expect("grid");
        let psi2 = self.temporal_encoding.encode_batch(&temporal_grid(self.t_frames)).expect("grid");
        let mut a = Mat::zeros(self.h * self.w, self.k);
        let mut b = Mat::zeros(self.k, self.t_frames);
        let mut tape = BatchTape::new();
        for q in 0..self.k {
            self.spatial_nets[q].forward_batch_into(&psi1, &mut tape);
            for p in 0..a.rows() {
                a.set(p, q, tape.output().get(p, 0) / self.scale);
            }
        }
        for q in 0..self.k {
            self.temporal_nets[q].forward_batch_into(&psi2, &mut tape);
            for t in 0..self.t_frames {
                b.set(q, t, tape.output().get(t, 0));
            }
        }
        (a, b)
    }

    /// Reconstruction on the training grid, `A B` reshaped to frames.
    pub fn reconstruct_grid(&self) -> DynamicImage {
        let (a, b) = self.factor_matrices();
        let mut img = DynamicImage::zeros(
            self.h,
            self.w,
            self.frame_times_min.clone(),
            self.frame_durations_min.clone(),
        );
        product_frames(&a, &b, &mut img.data);
        img
    }

    /// Rebuilds a model from checkpointed parts.
    #[allow(clippy::too_many_arguments)]
    pub fn from_parts(
        spatial_nets: Vec<Mlp>,
        temporal_nets: Vec<Mlp>,
        spatial_encoding: FourierEncoding,
        temporal_encoding: FourierEncoding,
        h: usize,
        w: usize,
        scale: f64,
        frame_times_min: Vec<f64>,
        frame_durations_min: Vec<f64>,
    ) -> Result<Self> {
        if spatial_nets.is_empty() || spatial_nets.len() != temporal_nets.len() {
            return Err(Error::argument("model parts: spatial/temporal network counts differ"));
        }
        if !(scale > 0.0) {
            return Err(Error::argument("model parts: scale must be positive"));
        }
        let t_frames = frame_times_min.len();
        Ok(InrFactorModel {
            k: spatial_nets.len(),
            h,
            w,
            t_frames,
            spatial_nets,
            temporal_nets,
            spatial_encoding,
            temporal_encoding,
            scale,
            frame_times_min,
            frame_durations_min,
        })
    }

    /// Continuous evaluation `u(x, t) = sum_k f_k(x) g_k(t)` at arbitrary
    /// coordinates in `[0,1]^2 x [0,1]`, in activity units. Distinct
    /// spatial points and time points are evaluated once each.
    pub fn evaluate(&self, coords: &[(f64, f64, f64)]) -> Result<Vec<f64>> {
        for &(x, y, t) in coords {
            if !((0.0..=1.0).contains(&x) && (0.0..=1.0).contains(&y) && (0.0..=1.0).contains(&t)) {
                return Err(Error::argument(format!(
                    "evaluate: coordinate ({x}, {y}, {t}) outside [0,1]^2 x [0,1]"
                )));
            }
        }
        // Dedupe by exact bit pattern, preserving first-seen order.
        let mut sp_index: HashMap<(u64, u64), usize> = HashMap::new();
        let mut tm_index: HashMap<u64, usize> = HashMap::new();
        let mut sp_points: Vec<(f64, f64)> = Vec::new();
        let mut tm_points: Vec<f64> = Vec::new();
        let mut keys = Vec::with_capacity(coords.len());
        for &(x, y, t) in coords {
            let si = *sp_index.entry((x.to_bits(), y.to_bits())).or_insert_with(|| {
                sp_points.push((x, y));
                sp_points.len() - 1
            });
            let ti = *tm_index.entry(t.to_bits()).or_insert_with(|| {
                tm_points.push(t);
                tm_points.len() - 1
            });
            keys.push((si, ti));
        }

        let sp_mat = Mat::from_fn(sp_points.len(), 2, |r, c| {
            if c == 0 {
                sp_points[r].0
            } else {
                sp_points[r].1
            }
        });
        let tm_mat = Mat::from_fn(tm_points.len(), 1, |r, _| tm_points[r]);
        let psi1 = self.spatial_encoding.encode_batch(&sp_mat)?;
        let psi2 = self.temporal_encoding.encode_batch(&tm_mat)?;

        let mut a = Mat::zeros(sp_points.len(), self.k);
        let mut b = Mat::zeros(self.k, tm_points.len());
        let mut tape = BatchTape::new();
        for q in 0..self.k {
            self.spatial_nets[q].forward_batch_into(&psi1, &mut tape);
            for p in 0..a.rows() {
                a.set(p, q, tape.output().get(p, 0) / self.scale);
            }
        }
        for q in 0..self.k {
            self.temporal_nets[q].forward_batch_into(&psi2, &mut tape);
            for t in 0..b.cols() {
                b.set(q, t, tape.output().get(t, 0));
            }
        }

        let mut out = Vec::with_capacity(coords.len());
        for &(si, ti) in &keys {
            let row = a.row(si);
            let mut acc = 0.0;
            for q in 0..self.k {
                acc += row[q] * b.get(q, ti);
            }
            out.push(acc);
        }
        Ok(out)
    }

    pub fn spatial_nets(&self) -> &[Mlp] {
        &self.spatial_nets
    }

    pub fn temporal_nets(&self) -> &[Mlp] {
        &self.temporal_nets
    }

    pub fn spatial_encoding(&self) -> &FourierEncoding {
        &self.spatial_encoding
    }

    pub fn temporal_encoding(&self) -> &FourierEncoding {
        &self.temporal_encoding
    }

    pub fn scale(&self) -> f64 {
        self.scale
    }
}

#[derive(Debug, Clone)]
pub struct NinrfResult {
    pub model: InrFactorModel,
    pub trace: LossTrace,
}

/// Joint trainer for the K + K networks. Exposed so the gradient-check
/// suite can evaluate the composite loss and its reverse-mode gradients
/// at arbitrary parameter states.
pub struct NinrfTrainer<'a> {
    cfg: NinrfConfig,
    proj: &'a RadonProjector,
    counts: Vec<f64>,
    randoms: Vec<f64>,
    t_frames: usize,
    scale: f64,
    frame_times_min: Vec<f64>,
    frame_durations_min: Vec<f64>,

    psi1: Mat,
    psi2: Mat,
    spatial_nets: Vec<Mlp>,
    temporal_nets: Vec<Mlp>,
    spatial_encoding: FourierEncoding,
    temporal_encoding: FourierEncoding,
    adam_spatial: Vec<AdamState>,
    adam_temporal: Vec<AdamState>,

    iter: usize,
    trace: LossTrace,
    cache_tapes: bool,

    // work buffers
    a: Mat,
    b: Mat,
    ab: Vec<f64>,
    model: Vec<f64>,
    gab: Mat,
    up_a: Mat,
    up_b: Mat,
    col: Vec<f64>,
    ray: Vec<f64>,
    tapes_sp: Vec<BatchTape>,
    tapes_tm: Vec<BatchTape>,
    shared_tape: BatchTape,
    grads_sp: MlpGrads,
    grads_tm: MlpGrads,
    scratch: BackScratch,
    upstream: Mat,
}

impl<'a> NinrfTrainer<'a> {
    pub fn new(z: &Sinogram, proj: &'a RadonProjector, cfg: NinrfConfig) -> Result<Self> {
        cfg.validate()?;
        if z.rays() != proj.rays() {
            return Err(Error::argument("ninrf: projector/sinogram geometry mismatch"));
        }
        let (h, w, t_frames) = (proj.h, proj.w, z.t_frames);
        let hw = h * w;

        let mut rng = StdRng::seed_from_u64(cfg.seed);
        let mut spatial_dims = vec![2 * cfg.d1];
        spatial_dims.extend_from_slice(&cfg.spatial_hidden);
        spatial_dims.push(1);
        let mut temporal_dims = vec![2 * cfg.d2];
        temporal_dims.extend_from_slice(&cfg.temporal_hidden);
        temporal_dims.push(1);

        let spatial_nets: Vec<Mlp> = (0..cfg.k)
            .map(|_| Mlp::kaiming(&spatial_dims, &mut rng))
            .collect::<Result<_>>()?;
        let temporal_nets: Vec<Mlp> = (0..cfg.k)
            .map(|_| Mlp::kaiming(&temporal_dims, &mut rng))
            .collect::<Result<_>>()?;
        let spatial_encoding = FourierEncoding::sample(cfg.d1, 2, cfg.sigma1, &mut rng)?;
        let temporal_encoding = FourierEncoding::sample(cfg.d2, 1, cfg.sigma2, &mut rng)?;

        let psi1 = spatial_encoding.encode_batch(&spatial_grid(h, w))?;
        let psi2 = temporal_encoding.encode_batch(&temporal_grid(t_frames))?;

        let tape_bytes: usize = cfg.k
            * spatial_dims[1..].iter().map(|&d| d * hw * 8).sum::<usize>();
        let cache_tapes = tape_bytes <= TAPE_CACHE_LIMIT_BYTES;

        let adam_spatial = spatial_nets.iter().map(AdamState::for_net).collect();
        let adam_temporal = temporal_nets.iter().map(AdamState::for_net).collect();
        let grads_sp = MlpGrads::zeros_like(&spatial_nets[0]);
        let grads_tm = MlpGrads::zeros_like(&temporal_nets[0]);

        Ok(NinrfTrainer {
            counts: z.counts.clone(),
            randoms: z.randoms_scatters.clone(),
            t_frames,
            scale: z.scale,
            frame_times_min: z.frame_times_min.clone(),
            frame_durations_min: z.frame_durations_min.clone(),
            proj,
            psi1,
            psi2,
            spatial_nets,
            temporal_nets,
            spatial_encoding,
            temporal_encoding,
            adam_spatial,
            adam_temporal,
            iter: 0,
            trace: LossTrace::default(),
            cache_tapes,
            a: Mat::zeros(hw, cfg.k),
            b: Mat::zeros(cfg.k, t_frames),
            ab: vec![0.0; hw * t_frames],
            model: vec![0.0; proj.rays() * t_frames],
            gab: Mat::zeros(t_frames, hw),
            up_a: Mat::zeros(cfg.k, hw),
            up_b: Mat::zeros(t_frames, cfg.k),
            col: vec![0.0; hw],
            ray: vec![0.0; proj.rays()],
            tapes_sp: (0..cfg.k).map(|_| BatchTape::new()).collect(),
            tapes_tm: (0..cfg.k).map(|_| BatchTape::new()).collect(),
            shared_tape: BatchTape::new(),
            grads_sp,
            grads_tm,
            scratch: BackScratch::new(),
            upstream: Mat::zeros(0, 0),
            cfg,
        })
    }

    pub fn config(&self) -> &NinrfConfig {
        &self.cfg
    }

    pub fn iteration(&self) -> usize {
        self.iter
    }

    pub fn trace(&self) -> &LossTrace {
        &self.trace
    }

    pub fn spatial_nets_mut(&mut self) -> &mut [Mlp] {
        &mut self.spatial_nets
    }

    pub fn temporal_nets_mut(&mut self) -> &mut [Mlp] {
        &mut self.temporal_nets
    }

    /// Learning rates at an iteration index: step decay every
    /// `decay_period` iterations, at `decay_rate_early` up to
    /// `decay_switch` and `decay_rate_late` beyond.
    pub fn learning_rates_at(&self, iter: usize) -> (f64, f64) {
        let early = (iter.min(self.cfg.decay_switch) / self.cfg.decay_period) as i32;
        let late = (iter.saturating_sub(self.cfg.decay_switch) / self.cfg.decay_period) as i32;
        let f = self.cfg.decay_rate_early.powi(early) * self.cfg.decay_rate_late.powi(late);
        (self.cfg.lr_spatial * f, self.cfg.lr_temporal * f)
    }

    fn effective_lambdas(&self, iter: usize) -> (f64, f64) {
        if iter < self.cfg.warmup {
            (0.0, 0.0)
        } else {
            (self.cfg.lambda1, self.cfg.lambda2)
        }
    }

    /// Forward passes for all networks; fills `a` and `b`.
    fn forward_factors(&mut self) {
        let hw = self.a.rows();
        for q in 0..self.cfg.k {
            let tape = if self.cache_tapes { &mut self.tapes_sp[q] } else { &mut self.shared_tape };
            self.spatial_nets[q].forward_batch_into(&self.psi1, tape);
            for p in 0..hw {
                self.a.set(p, q, tape.output().get(p, 0));
            }
        }
        for q in 0..self.cfg.k {
            let tape = &mut self.tapes_tm[q];
            self.temporal_nets[q].forward_batch_into(&self.psi2, tape);
            for t in 0..self.t_frames {
                self.b.set(q, t, tape.output().get(t, 0));
            }
        }
    }

    /// Loss at the current parameters and, when `with_grads`, the
    /// upstream matrices d(loss)/dA and d(loss)/dB.
    fn loss_inner(&mut self, lambdas: (f64, f64), with_grads: bool) -> Result<LossParts> {
        let (lambda1, lambda2) = lambdas;
        let rays = self.proj.rays();
        let hw = self.a.rows();
        self.forward_factors();
        product_frames(&self.a, &self.b, &mut self.ab);

        // model = P (A B) + S, frame by frame
        for t in 0..self.t_frames {
            self.proj.forward_into(&self.ab[t * hw..(t + 1) * hw], &mut self.ray);
            let m = &mut self.model[t * rays..(t + 1) * rays];
            let s = &self.randoms[t * rays..(t + 1) * rays];
            for ((mi, &yi), &si) in m.iter_mut().zip(self.ray.iter()).zip(s) {
                *mi = yi + si;
            }
        }

        // KL value and gradient (in place over `model`)
        let mut data_term = 0.0;
        for (m, &z) in self.model.iter_mut().zip(&self.counts) {
            let q = m.max(KL_EPS);
            data_term += *m;
            if z > 0.0 {
                data_term -= z * q.ln();
            }
            if with_grads {
                // reuse the buffer for dKL/dmodel; below the clamp only
                // the linear term survives
                *m = if *m > KL_EPS { 1.0 - z / *m } else { 1.0 };
            }
        }
        if !data_term.is_finite() {
            return Err(Error::numerical(format!(
                "ninrf: non-finite data term at iteration {}",
                self.iter
            )));
        }

        if with_grads {
            // gab[t, p] = (P^T G)_p for frame t
            for t in 0..self.t_frames {
                self.proj.adjoint_into(&self.model[t * rays..(t + 1) * rays], &mut self.col);
                self.gab.row_mut(t).copy_from_slice(&self.col);
            }
            // dL/dA^T = B gab  (K x hw), dL/dB^T = gab A  (T x K)
            linalg::matmul_into(&self.b, &self.gab, &mut self.up_a);
            linalg::matmul_into(&self.gab, &self.a, &mut self.up_b);
        }

        // regularizers
        let mut r1 = 0.0;
        let mut r2 = 0.0;
        if lambda1 > 0.0 {
            for q in 0..self.cfg.k {
                for p in 0..hw {
                    self.col[p] = self.a.get(p, q);
                }
                let (tv, grad) = super::tv_isotropic(&self.col, self.proj.h, self.proj.w, TV_SMOOTH_EPS);
                r1 += tv;
                if with_grads {
                    let row = self.up_a.row_mut(q);
                    for (u, g) in row.iter_mut().zip(grad) {
                        *u += lambda1 * g;
                    }
                }
            }
        }
        if lambda2 > 0.0 {
            for q in 0..self.cfg.k {
                let (qv, grad) = super::temporal_quadratic_variation(self.b.row(q))?;
                r2 += qv;
                if with_grads {
                    for (t, g) in grad.iter().enumerate() {
                        let v = self.up_b.get(t, q) + lambda2 * g;
                        self.up_b.set(t, q, v);
                    }
                }
            }
        }

        Ok(LossParts { data_term, r1_term: lambda1 * r1, r2_term: lambda2 * r2 })
    }

    fn spatial_backward(&mut self, q: usize) {
        let hw = self.a.rows();
        self.upstream.resize_to(hw, 1);
        for p in 0..hw {
            self.upstream.set(p, 0, self.up_a.get(q, p));
        }
        let tape = if self.cache_tapes {
            &self.tapes_sp[q]
        } else {
            self.spatial_nets[q].forward_batch_into(&self.psi1, &mut self.shared_tape);
            &self.shared_tape
        };
        self.spatial_nets[q].backward_batch_into(
            &self.psi1,
            tape,
            &self.upstream,
            &mut self.grads_sp,
            &mut self.scratch,
        );
    }

    fn temporal_backward(&mut self, q: usize) {
        self.upstream.resize_to(self.t_frames, 1);
        for t in 0..self.t_frames {
            self.upstream.set(t, 0, self.up_b.get(t, q));
        }
        self.temporal_nets[q].backward_batch_into(
            &self.psi2,
            &self.tapes_tm[q],
            &self.upstream,
            &mut self.grads_tm,
            &mut self.scratch,
        );
    }

    /// Smallest pre-activation magnitude across every network on its
    /// training grid; see [`Mlp::min_abs_preactivation_batch`].
    pub fn min_abs_preactivation(&self) -> f64 {
        let sp = self
            .spatial_nets
            .iter()
            .map(|n| n.min_abs_preactivation_batch(&self.psi1))
            .fold(f64::INFINITY, f64::min);
        let tm = self
            .temporal_nets
            .iter()
            .map(|n| n.min_abs_preactivation_batch(&self.psi2))
            .fold(f64::INFINITY, f64::min);
        sp.min(tm)
    }

    /// Loss at the current parameters with the current iteration's
    /// effective regularization. Does not mutate parameters.
    pub fn loss_value(&mut self) -> Result<LossParts> {
        let lambdas = self.effective_lambdas(self.iter);
        self.loss_inner(lambdas, false)
    }

    /// Loss and per-network reverse-mode gradients at the current
    /// parameters. Does not mutate parameters.
    pub fn compute_gradients(&mut self) -> Result<(LossParts, Vec<MlpGrads>, Vec<MlpGrads>)> {
        let lambdas = self.effective_lambdas(self.iter);
        let parts = self.loss_inner(lambdas, true)?;
        let mut gs = Vec::with_capacity(self.cfg.k);
        let mut gt = Vec::with_capacity(self.cfg.k);
        for q in 0..self.cfg.k {
            self.spatial_backward(q);
            gs.push(self.grads_sp.clone());
        }
        for q in 0..self.cfg.k {
            self.temporal_backward(q);
            gt.push(self.grads_tm.clone());
        }
        Ok((parts, gs, gt))
    }

    /// One training iteration: loss, gradients, Adam updates, decay.
    pub fn step(&mut self) -> Result<LossParts> {
        let lambdas = self.effective_lambdas(self.iter);
        let (lr_s, lr_t) = self.learning_rates_at(self.iter);
        let parts = self.loss_inner(lambdas, true)?;
        for q in 0..self.cfg.k {
            self.spatial_backward(q);
            self.adam_spatial[q].step_net(lr_s, &mut self.spatial_nets[q], &self.grads_sp)?;
        }
        for q in 0..self.cfg.k {
            self.temporal_backward(q);
            self.adam_temporal[q].step_net(lr_t, &mut self.temporal_nets[q], &self.grads_tm)?;
        }
        self.trace.rows.push(LossRow {
            iteration: self.iter,
            data_term: parts.data_term,
            r1_term: parts.r1_term,
            r2_term: parts.r2_term,
            lr_spatial: lr_s,
            lr_temporal: lr_t,
        });
        self.iter += 1;
        Ok(parts)
    }

    /// Current reconstruction on the training grid, in activity units.
    pub fn current_image(&mut self) -> DynamicImage {
        self.forward_factors();
        product_frames(&self.a, &self.b, &mut self.ab);
        let mut img = DynamicImage::zeros(
            self.proj.h,
            self.proj.w,
            self.frame_times_min.clone(),
            self.frame_durations_min.clone(),
        );
        for (o, &v) in img.data.iter_mut().zip(&self.ab) {
            *o = v / self.scale;
        }
        img
    }

    pub fn into_model(self) -> InrFactorModel {
        InrFactorModel {
            k: self.cfg.k,
            h: self.proj.h,
            w: self.proj.w,
            t_frames: self.t_frames,
            spatial_nets: self.spatial_nets,
            temporal_nets: self.temporal_nets,
            spatial_encoding: self.spatial_encoding,
            temporal_encoding: self.temporal_encoding,
            scale: self.scale,
            frame_times_min: self.frame_times_min,
            frame_durations_min: self.frame_durations_min,
        }
    }

    pub fn run(mut self) -> Result<NinrfResult> {
        for _ in 0..self.cfg.i_max {
            self.step()?;
        }
        let trace = core::mem::take(&mut self.trace);
        Ok(NinrfResult { model: self.into_model(), trace })
    }
}

/// Trains NINRF per the configured schedule and returns the continuous
/// model plus the loss trace.
pub fn ninrf_train(z: &Sinogram, proj: &RadonProjector, cfg: NinrfConfig) -> Result<NinrfResult> {
    NinrfTrainer::new(z, proj, cfg)?.run()
}

/// INR-B hybrid model: INR spatial basis, matrix TACs.
#[derive(Debug, Clone)]
pub struct HybridModel {
    pub k: usize,
    pub h: usize,
    pub w: usize,
    pub t_frames: usize,
    spatial_nets: Vec<Mlp>,
    spatial_encoding: FourierEncoding,
    /// TAC matrix in count units (K x T).
    pub b: Mat,
    scale: f64,
    frame_times_min: Vec<f64>,
    frame_durations_min: Vec<f64>,
}

impl HybridModel {
    /// Spatial factor on the training grid, in activity units.
    pub fn spatial_matrix(&self) -> Mat {
        let psi1 = self.spatial_encoding.encode_batch(&spatial_grid(self.h, self.w)).expect("grid");
        let mut a = Mat::zeros(self.h * self.w, self.k);
        let mut tape = BatchTape::new();
        for q in 0..self.k {
            self.spatial_nets[q].forward_batch_into(&psi1, &mut tape);
            for p in 0..a.rows() {
                a.set(p, q, tape.output().get(p, 0) / self.scale);
            }
        }
        a
    }

    pub fn reconstruct_grid(&self) -> DynamicImage {
        let a = self.spatial_matrix();
        let mut img = DynamicImage::zeros(
            self.h,
            self.w,
            self.frame_times_min.clone(),
            self.frame_durations_min.clone(),
        );
        product_frames(&a, &self.b, &mut img.data);
        img
    }

    /// Rebuilds a hybrid model from checkpointed parts.
    #[allow(clippy::too_many_arguments)]
    pub fn from_parts(
        spatial_nets: Vec<Mlp>,
        spatial_encoding: FourierEncoding,
        b: Mat,
        h: usize,
        w: usize,
        scale: f64,
        frame_times_min: Vec<f64>,
        frame_durations_min: Vec<f64>,
    ) -> Result<Self> {
        if spatial_nets.is_empty() || spatial_nets.len() != b.rows() {
            return Err(Error::argument("model parts: network count must match TAC rows"));
        }
        if !(scale > 0.0) {
            return Err(Error::argument("model parts: scale must be positive"));
        }
        Ok(HybridModel {
            k: spatial_nets.len(),
            h,
            w,
            t_frames: b.cols(),
            spatial_nets,
            spatial_encoding,
            b,
            scale,
            frame_times_min,
            frame_durations_min,
        })
    }

    pub fn spatial_nets(&self) -> &[Mlp] {
        &self.spatial_nets
    }

    pub fn spatial_encoding(&self) -> &FourierEncoding {
        &self.spatial_encoding
    }

    pub fn scale(&self) -> f64 {
        self.scale
    }
}

#[derive(Debug, Clone)]
pub struct InrBResult {
    pub model: HybridModel,
    pub trace: LossTrace,
}

/// INR-B: Adam steps on the spatial networks alternate with one
/// multiplicative EM update of `B` per iteration.
pub fn inr_b_reconstruct(z: &Sinogram, proj: &RadonProjector, cfg: NinrfConfig) -> Result<InrBResult> {
    cfg.validate()?;
    if z.rays() != proj.rays() {
        return Err(Error::argument("inr_b: projector/sinogram geometry mismatch"));
    }
    let (h, w, t_frames) = (proj.h, proj.w, z.t_frames);
    let hw = h * w;
    let rays = proj.rays();
    let k = cfg.k;

    let mut rng = StdRng::seed_from_u64(cfg.seed);
    let mut spatial_dims = vec![2 * cfg.d1];
    spatial_dims.extend_from_slice(&cfg.spatial_hidden);
    spatial_dims.push(1);
    let mut spatial_nets: Vec<Mlp> =
        (0..k).map(|_| Mlp::kaiming(&spatial_dims, &mut rng)).collect::<Result<_>>()?;
    let spatial_encoding = FourierEncoding::sample(cfg.d1, 2, cfg.sigma1, &mut rng)?;
    let psi1 = spatial_encoding.encode_batch(&spatial_grid(h, w))?;

    // strictly positive TAC init, rescaled to the data's magnitude below
    let mut b = Mat::from_fn(k, t_frames, |_, _| 0.5 + rand::Rng::random::<f64>(&mut rng));

    let mut adam: Vec<AdamState> = spatial_nets.iter().map(AdamState::for_net).collect();
    let mut tapes: Vec<BatchTape> = (0..k).map(|_| BatchTape::new()).collect();
    let mut grads = MlpGrads::zeros_like(&spatial_nets[0]);
    let mut scratch = BackScratch::new();
    let mut a = Mat::zeros(hw, k);
    let mut pa = Mat::zeros(rays, k);
    let mut model = vec![0.0; rays * t_frames];
    let mut ratio = vec![0.0; rays * t_frames];
    let mut gab = Mat::zeros(t_frames, hw);
    let mut up_a = Mat::zeros(k, hw);
    let mut upstream = Mat::zeros(hw, 1);
    let mut col = vec![0.0; hw];
    let mut ray = vec![0.0; rays];
    let mut trace = LossTrace::default();

    let forward_a =
        |nets: &[Mlp], psi1: &Mat, tapes: &mut [BatchTape], a: &mut Mat| {
            for q in 0..nets.len() {
                nets[q].forward_batch_into(psi1, &mut tapes[q]);
                for p in 0..a.rows() {
                    a.set(p, q, tapes[q].output().get(p, 0));
                }
            }
        };
    let refresh_pa = |proj: &RadonProjector, a: &Mat, col: &mut [f64], ray: &mut [f64], pa: &mut Mat| {
        for q in 0..a.cols() {
            for p in 0..a.rows() {
                col[p] = a.get(p, q);
            }
            proj.forward_into(col, ray);
            for i in 0..ray.len() {
                pa.set(i, q, ray[i]);
            }
        }
    };
    let refresh_model = |pa: &Mat, b: &Mat, randoms: &[f64], model: &mut [f64]| {
        let rays = pa.rows();
        for t in 0..b.cols() {
            for i in 0..rays {
                let mut acc = 0.0;
                for q in 0..b.rows() {
                    acc += pa.get(i, q) * b.get(q, t);
                }
                model[t * rays + i] = acc + randoms[t * rays + i];
            }
        }
    };

    // initial magnitude calibration
    forward_a(&spatial_nets, &psi1, &mut tapes, &mut a);
    refresh_pa(proj, &a, &mut col, &mut ray, &mut pa);
    refresh_model(&pa, &b, &z.randoms_scatters, &mut model);
    let model_mean = model.iter().sum::<f64>() / model.len() as f64;
    let data_mean = z.counts.iter().sum::<f64>() / z.counts.len() as f64;
    if model_mean > 0.0 && data_mean > 0.0 {
        let s = data_mean / model_mean;
        for v in b.as_mut_slice() {
            *v *= s;
        }
    }

    for iter in 0..cfg.i_max {
        let lambda1 = if iter < cfg.warmup { 0.0 } else { cfg.lambda1 };
        let early = (iter.min(cfg.decay_switch) / cfg.decay_period) as i32;
        let late = (iter.saturating_sub(cfg.decay_switch) / cfg.decay_period) as i32;
        let lr = cfg.lr_spatial * cfg.decay_rate_early.powi(early) * cfg.decay_rate_late.powi(late);

        // ---- spatial Adam step at fixed B
        forward_a(&spatial_nets, &psi1, &mut tapes, &mut a);
        refresh_pa(proj, &a, &mut col, &mut ray, &mut pa);
        refresh_model(&pa, &b, &z.randoms_scatters, &mut model);
        let mut data_term = 0.0;
        for (m, &zi) in model.iter_mut().zip(&z.counts) {
            let q = m.max(KL_EPS);
            data_term += *m;
            if zi > 0.0 {
                data_term -= zi * q.ln();
            }
            *m = if *m > KL_EPS { 1.0 - zi / *m } else { 1.0 };
        }
        if !data_term.is_finite() {
            return Err(Error::numerical(format!("inr_b: non-finite data term at iteration {iter}")));
        }
        for t in 0..t_frames {
            proj.adjoint_into(&model[t * rays..(t + 1) * rays], &mut col);
            gab.row_mut(t).copy_from_slice(&col);
        }
        linalg::matmul_into(&b, &gab, &mut up_a);
        let mut r1 = 0.0;
        if lambda1 > 0.0 {
            for q in 0..k {
                for p in 0..hw {
                    col[p] = a.get(p, q);
                }
                let (tv, grad) = super::tv_isotropic(&col, h, w, TV_SMOOTH_EPS);
                r1 += tv;
                let row = up_a.row_mut(q);
                for (u, g) in row.iter_mut().zip(grad) {
                    *u += lambda1 * g;
                }
            }
        }
        for q in 0..k {
            for p in 0..hw {
                upstream.set(p, 0, up_a.get(q, p));
            }
            spatial_nets[q].backward_batch_into(&psi1, &tapes[q], &upstream, &mut grads, &mut scratch);
            adam[q].step_net(lr, &mut spatial_nets[q], &grads)?;
        }

        // ---- one EM update of B at the new A
        forward_a(&spatial_nets, &psi1, &mut tapes, &mut a);
        refresh_pa(proj, &a, &mut col, &mut ray, &mut pa);
        refresh_model(&pa, &b, &z.randoms_scatters, &mut model);
        for (r, (&zi, &mi)) in ratio.iter_mut().zip(z.counts.iter().zip(model.iter())) {
            *r = if mi > 0.0 { zi / mi } else { 0.0 };
        }
        let pa_col_sums: Vec<f64> = (0..k).map(|q| (0..rays).map(|i| pa.get(i, q)).sum()).collect();
        for q in 0..k {
            for t in 0..t_frames {
                let num: f64 = (0..rays).map(|i| pa.get(i, q) * ratio[t * rays + i]).sum();
                let v = b.get(q, t);
                b.set(q, t, if pa_col_sums[q] > 0.0 { v * num / pa_col_sums[q] } else { 0.0 });
            }
        }

        trace.rows.push(LossRow {
            iteration: iter,
            data_term,
            r1_term: lambda1 * r1,
            r2_term: 0.0,
            lr_spatial: lr,
            lr_temporal: 0.0,
        });
    }

    let model = HybridModel {
        k,
        h,
        w,
        t_frames,
        spatial_nets,
        spatial_encoding,
        b,
        scale: z.scale,
        frame_times_min: z.frame_times_min.clone(),
        frame_durations_min: z.frame_durations_min.clone(),
    };
    Ok(InrBResult { model, trace })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::projector::{build_projector, Sinogram};

    /// Noiseless integer counts from a rank-1 ground truth.
    fn tiny_sinogram(proj: &RadonProjector, truth: &[f64], tacs: &[f64]) -> Sinogram {
        let rays = proj.rays();
        let t_frames = tacs.len();
        let y = proj.forward(truth).unwrap();
        let mut counts = vec![0.0; rays * t_frames];
        for (t, &bt) in tacs.iter().enumerate() {
            for i in 0..rays {
                counts[t * rays + i] = (y[i] * bt).round();
            }
        }
        Sinogram {
            n_angles: proj.n_angles,
            n_bins: proj.n_bins,
            t_frames,
            counts,
            randoms_scatters: vec![0.0; rays * t_frames],
            scale: 1.0,
            frame_times_min: (0..t_frames).map(|t| t as f64 + 0.5).collect(),
            frame_durations_min: vec![1.0; t_frames],
        }
    }

    fn toy_config(k: usize, seed: u64) -> NinrfConfig {
        NinrfConfig {
            k,
            lambda1: 0.3,
            lambda2: 0.02,
            i_max: 3000,
            warmup: 300,
            lr_spatial: 3e-3,
            lr_temporal: 3e-3,
            decay_rate_early: 0.99,
            decay_rate_late: 0.90,
            decay_period: 100,
            decay_switch: 1500,
            d1: 16,
            d2: 16,
            sigma1: 2.0,
            sigma2: 0.5,
            spatial_hidden: vec![64, 64],
            temporal_hidden: vec![32, 32],
            seed,
        }
    }

    fn rank1_truth(proj: &RadonProjector) -> Vec<f64> {
        let support = proj.support();
        let (h, w) = (proj.h, proj.w);
        (0..h * w)
            .map(|p| {
                if !support[p] {
                    return 0.0;
                }
                let (i, j) = (p / w, p % w);
                let x = i as f64 / h as f64 - 0.5;
                let y = j as f64 / w as f64 - 0.5;
                400.0 * (-16.0 * (x * x + y * y)).exp()
            })
            .collect()
    }

    /// Relative L2 error against the separable ground truth, over the
    /// field of view (pixels outside the scanner circle are unobservable).
    fn fov_relative_error(
        proj: &RadonProjector,
        img: &crate::phantom::DynamicImage,
        truth: &[f64],
        tacs: &[f64],
    ) -> f64 {
        let fov = proj.support();
        let mut num = 0.0;
        let mut den = 0.0;
        for (t, &bt) in tacs.iter().enumerate() {
            for (p, &tv) in truth.iter().enumerate() {
                if !fov[p] {
                    continue;
                }
                let want = tv * bt;
                let got = img.frame(t)[p];
                num += (want - got) * (want - got);
                den += want * want;
            }
        }
        (num / den).sqrt()
    }

    #[test]
    fn ninrf_recovers_rank1_toy() {
        let proj = build_projector(8, 8, 20, 12).unwrap();
        let truth = rank1_truth(&proj);
        let tacs = [1.0, 2.0, 1.5, 0.8];
        let z = tiny_sinogram(&proj, &truth, &tacs);
        let result = ninrf_train(&z, &proj, toy_config(1, 0)).unwrap();
        let img = result.model.reconstruct_grid();
        let rel = fov_relative_error(&proj, &img, &truth, &tacs);
        assert!(rel <= 0.05, "relative reconstruction error {rel}");
    }

    #[test]
    fn warmup_toggle_changes_traced_loss() {
        let proj = build_projector(8, 8, 20, 12).unwrap();
        let truth = rank1_truth(&proj);
        let z = tiny_sinogram(&proj, &truth, &[1.0, 2.0, 1.5]);
        let mut cfg = toy_config(2, 1);
        cfg.i_max = 12;
        cfg.warmup = 6;
        cfg.lambda1 = 5.0;
        cfg.lambda2 = 5.0;
        cfg.sigma2 = 1.5;
        let result = ninrf_train(&z, &proj, cfg).unwrap();
        let rows = &result.trace.rows;
        assert_eq!(rows[5].r1_term, 0.0);
        assert_eq!(rows[5].r2_term, 0.0);
        // the regularizers enter the traced total exactly at the warmup
        // boundary
        assert!(rows[6].r1_term > 0.0);
        assert!(rows[6].r2_term > 0.0);
        assert!(rows[6].total() > rows[6].data_term);
        assert_eq!(rows[5].total(), rows[5].data_term);
    }

    #[test]
    fn decay_schedule_steps() {
        let proj = build_projector(8, 8, 20, 12).unwrap();
        let truth = rank1_truth(&proj);
        let z = tiny_sinogram(&proj, &truth, &[1.0, 2.0]);
        let mut cfg = toy_config(1, 1);
        cfg.lr_spatial = 1.0;
        cfg.lr_temporal = 1.0;
        cfg.decay_rate_early = 0.98;
        cfg.decay_rate_late = 0.95;
        cfg.decay_period = 100;
        cfg.decay_switch = 1000;
        let trainer = NinrfTrainer::new(&z, &proj, cfg).unwrap();
        assert_eq!(trainer.learning_rates_at(0).0, 1.0);
        assert_eq!(trainer.learning_rates_at(99).0, 1.0);
        assert!((trainer.learning_rates_at(100).0 - 0.98).abs() < 1e-12);
        assert!((trainer.learning_rates_at(999).0 - 0.98f64.powi(9)).abs() < 1e-12);
        let at_1000 = 0.98f64.powi(10);
        assert!((trainer.learning_rates_at(1000).0 - at_1000).abs() < 1e-12);
        assert!((trainer.learning_rates_at(1100).0 - at_1000 * 0.95).abs() < 1e-12);
    }

    #[test]
    fn evaluate_matches_factor_product_bitwise_on_grid() {
        let proj = build_projector(8, 8, 20, 12).unwrap();
        let truth = rank1_truth(&proj);
        let z = tiny_sinogram(&proj, &truth, &[1.0, 2.0, 1.5]);
        let mut cfg = toy_config(2, 5);
        cfg.i_max = 40;
        cfg.warmup = 40;
        let result = ninrf_train(&z, &proj, cfg).unwrap();
        let model = &result.model;
        let (a, b) = model.factor_matrices();
        let (h, w, tf) = (model.h, model.w, model.t_frames);
        let mut coords = Vec::new();
        for t in 0..tf {
            for p in 0..h * w {
                coords.push((
                    (p / w) as f64 / h as f64,
                    (p % w) as f64 / w as f64,
                    t as f64 / tf as f64,
                ));
            }
        }
        let values = model.evaluate(&coords).unwrap();
        let mut expected = vec![0.0; values.len()];
        product_frames(&a, &b, &mut expected);
        for (got, want) in values.iter().zip(&expected) {
            assert_eq!(got.to_bits(), want.to_bits());
        }
    }

    #[test]
    fn evaluate_finer_grid_finite_nonnegative() {
        let proj = build_projector(8, 8, 20, 12).unwrap();
        let truth = rank1_truth(&proj);
        let z = tiny_sinogram(&proj, &truth, &[1.0, 2.0]);
        let mut cfg = toy_config(1, 2);
        cfg.i_max = 30;
        cfg.warmup = 30;
        let result = ninrf_train(&z, &proj, cfg).unwrap();
        let mut coords = Vec::new();
        for i in 0..16 {
            for j in 0..16 {
                coords.push((i as f64 / 16.0, j as f64 / 16.0, 0.33));
            }
        }
        let values = result.model.evaluate(&coords).unwrap();
        assert!(values.iter().all(|v| v.is_finite() && *v >= 0.0));
    }

    #[test]
    fn evaluate_rejects_out_of_range() {
        let proj = build_projector(8, 8, 20, 12).unwrap();
        let truth = rank1_truth(&proj);
        let z = tiny_sinogram(&proj, &truth, &[1.0, 2.0]);
        let mut cfg = toy_config(1, 2);
        cfg.i_max = 2;
        cfg.warmup = 2;
        let result = ninrf_train(&z, &proj, cfg).unwrap();
        assert!(matches!(
            result.model.evaluate(&[(1.2, 0.0, 0.0)]),
            Err(crate::Error::Argument(_))
        ));
    }

    #[test]
    fn inr_b_recovers_rank1_toy() {
        // a slightly larger grid than the ninrf toy: the hard B update
        // makes the alternation brittle when single pixels carry a large
        // share of a ray
        let proj = build_projector(16, 16, 32, 23).unwrap();
        let support = proj.support();
        let truth: Vec<f64> = (0..256)
            .map(|p| {
                if !support[p] {
                    return 0.0;
                }
                let x = (p / 16) as f64 / 16.0 - 0.5;
                let y = (p % 16) as f64 / 16.0 - 0.5;
                1000.0 * (-12.0 * (x * x + y * y)).exp()
            })
            .collect();
        let tacs = [1.0, 2.0, 1.5, 0.8];
        let z = tiny_sinogram(&proj, &truth, &tacs);
        let mut cfg = toy_config(1, 0);
        cfg.lambda1 = 0.1;
        cfg.lr_spatial = 2e-3;
        cfg.sigma1 = 1.0;
        cfg.i_max = 6000;
        cfg.decay_rate_late = 0.95;
        let result = inr_b_reconstruct(&z, &proj, cfg).unwrap();
        assert!(result.model.b.as_slice().iter().all(|&v| v >= 0.0));
        let img = result.model.reconstruct_grid();
        let rel = fov_relative_error(&proj, &img, &truth, &tacs);
        assert!(rel <= 0.05, "relative reconstruction error {rel}");
    }
}
