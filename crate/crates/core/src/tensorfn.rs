//! Tensor functions, sampled tensors, unfolding ranks, and non-negative
//! rank certificates.
//!
//! A separable non-negative function `G(x, y, t) = sum_k G1_k(x,y) G2_k(t)`
//! has mode-3 unfolding rank at most K for every sampled grid. This module
//! provides the pieces to check that statement numerically: sampling,
//! unfolding, SVD-based rank, an NMF-based upper-bound certificate for the
//! non-negative rank, and conic-hull membership.

use core::fmt;

use rand::rngs::StdRng;
use rand::{Rng, SeedableRng};

use crate::error::{Error, Result};
use crate::linalg::{self, Mat};
use crate::recon::FactorPair;

/// Default relative singular-value cutoff for numerical rank decisions.
/// Sits well above the double-precision SVD noise floor.
pub const DEFAULT_RANK_TOL: f64 = 1e-8;

/// Default iteration budget for the multiplicative-update NMF certificate.
pub const DEFAULT_NMF_ITERS: usize = 2000;

/// Iteration cap for the projected-gradient NNLS used by conic membership.
pub const NNLS_MAX_ITERS: usize = 5000;

/// A bounded real function on a box `D1 x D2 x D3`, interpreted as a
/// continuous tensor.
pub struct TensorFn {
    eval: Box<dyn Fn(f64, f64, f64) -> f64 + Send + Sync>,
    domains: [(f64, f64); 3],
}

impl TensorFn {
    pub fn new(
        domains: [(f64, f64); 3],
        eval: impl Fn(f64, f64, f64) -> f64 + Send + Sync + 'static,
    ) -> Result<Self> {
        for (lo, hi) in domains {
            if !(lo.is_finite() && hi.is_finite() && lo < hi) {
                return Err(Error::argument(format!(
                    "tensor function domain [{lo}, {hi}] is not a proper interval"
                )));
            }
        }
        Ok(TensorFn { eval: Box::new(eval), domains })
    }

    /// Convenience constructor on the unit cube.
    pub fn on_unit_cube(
        eval: impl Fn(f64, f64, f64) -> f64 + Send + Sync + 'static,
    ) -> Self {
        TensorFn::new([(0.0, 1.0); 3], eval).unwrap()
    }

    pub fn domains(&self) -> [(f64, f64); 3] {
        self.domains
    }

    pub fn eval(&self, v1: f64, v2: f64, v3: f64) -> f64 {
        (self.eval)(v1, v2, v3)
    }

    /// A seeded K-term separable non-negative function: shifted spatial
    /// Gaussians paired with gamma-variate temporal curves. Component
    /// parameters are spread out so the K terms are linearly independent
    /// when sampled on any reasonable grid.
    pub fn separable_nonneg(k: usize, seed: u64) -> Result<Self> {
        let comps = SeparableComponents::random(k, seed)?;
        Ok(TensorFn {
            eval: Box::new(move |x, y, t| comps.eval(x, y, t)),
            domains: [(0.0, 1.0); 3],
        })
    }
}

impl fmt::Debug for TensorFn {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("TensorFn").field("domains", &self.domains).finish()
    }
}

/// Components of a K-term separable non-negative function.
#[derive(Debug, Clone)]
pub struct SeparableComponents {
    /// (center_x, center_y, width) of each spatial Gaussian.
    pub spatial: Vec<(f64, f64, f64)>,
    /// (peak_time, sharpness, amplitude) of each gamma-variate curve.
    pub temporal: Vec<(f64, f64, f64)>,
}

impl SeparableComponents {
    pub fn random(k: usize, seed: u64) -> Result<Self> {
        if k == 0 {
            return Err(Error::argument("separable function needs K >= 1 terms"));
        }
        let mut rng = StdRng::seed_from_u64(seed);
        let mut spatial = Vec::with_capacity(k);
        let mut temporal = Vec::with_capacity(k);
        for i in 0..k {
            // Centers on a jittered ring keep the Gaussians well separated.
            let angle = core::f64::consts::TAU * (i as f64 + 0.3 * rng.random::<f64>()) / k as f64;
            let radius = 0.22 + 0.08 * rng.random::<f64>();
            let cx = 0.5 + radius * angle.cos();
            let cy = 0.5 + radius * angle.sin();
            let width = 0.10 + 0.10 * rng.random::<f64>();
            spatial.push((cx, cy, width));
            // Peak times are strided across (0, 1) with a guaranteed gap.
            let peak = 0.15 + 0.7 * (i as f64 + 0.6 * rng.random::<f64>()) / k as f64;
            let sharp = 1.5 + 4.0 * rng.random::<f64>();
            let amp = 0.5 + rng.random::<f64>();
            temporal.push((peak, sharp, amp));
        }
        Ok(SeparableComponents { spatial, temporal })
    }

    pub fn spatial_component(&self, k: usize, x: f64, y: f64) -> f64 {
        let (cx, cy, w) = self.spatial[k];
        let d2 = (x - cx) * (x - cx) + (y - cy) * (y - cy);
        (-d2 / (2.0 * w * w)).exp()
    }

    pub fn temporal_component(&self, k: usize, t: f64) -> f64 {
        let (peak, sharp, amp) = self.temporal[k];
        if t <= 0.0 {
            return 0.0;
        }
        amp * (t / peak).powf(sharp) * (sharp * (1.0 - t / peak)).exp()
    }

    pub fn eval(&self, x: f64, y: f64, t: f64) -> f64 {
        (0..self.spatial.len())
            .map(|k| self.spatial_component(k, x, y) * self.temporal_component(k, t))
            .sum()
    }
}

/// A tensor sampled from a [`TensorFn`] on explicit coordinate grids.
#[derive(Debug, Clone)]
pub struct SampledTensor {
    n1: usize,
    n2: usize,
    n3: usize,
    /// Layout: index (i, j, k) lives at `(i * n2 + j) * n3 + k`.
    data: Vec<f64>,
    pub coords: [Vec<f64>; 3],
}

impl SampledTensor {
    pub fn from_data(n1: usize, n2: usize, n3: usize, data: Vec<f64>, coords: [Vec<f64>; 3]) -> Self {
        assert_eq!(data.len(), n1 * n2 * n3);
        SampledTensor { n1, n2, n3, data, coords }
    }

    pub fn sizes(&self) -> (usize, usize, usize) {
        (self.n1, self.n2, self.n3)
    }

    #[inline]
    pub fn get(&self, i: usize, j: usize, k: usize) -> f64 {
        self.data[(i * self.n2 + j) * self.n3 + k]
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    /// The fiber G(v1_i, v2_j, :) as a vector.
    pub fn mode3_fiber(&self, i: usize, j: usize) -> Vec<f64> {
        (0..self.n3).map(|k| self.get(i, j, k)).collect()
    }
}

/// Tucker rank of a sampled tensor: the numerical ranks of its three
/// mode unfoldings at a shared relative tolerance.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct TuckerRank {
    pub r1: usize,
    pub r2: usize,
    pub r3: usize,
}

impl TuckerRank {
    pub fn of(t: &SampledTensor, rel_tol: f64) -> Result<Self> {
        let r1 = numerical_rank(&unfold(t, 1)?, rel_tol)?;
        let r2 = numerical_rank(&unfold(t, 2)?, rel_tol)?;
        let r3 = numerical_rank(&unfold(t, 3)?, rel_tol)?;
        Ok(TuckerRank { r1, r2, r3 })
    }
}

impl fmt::Display for TuckerRank {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "({}, {}, {})", self.r1, self.r2, self.r3)
    }
}

/// Samples `f` on the cartesian product of the three coordinate vectors.
pub fn sample_tensor(f: &TensorFn, v1: &[f64], v2: &[f64], v3: &[f64]) -> Result<SampledTensor> {
    for (axis, (v, (lo, hi))) in [v1, v2, v3].iter().zip(f.domains()).enumerate() {
        if v.is_empty() {
            return Err(Error::argument(format!("coordinate vector {} is empty", axis + 1)));
        }
        for &c in v.iter() {
            if !(c >= lo && c <= hi) {
                return Err(Error::argument(format!(
                    "coordinate {c} outside domain [{lo}, {hi}] on axis {}",
                    axis + 1
                )));
            }
        }
    }
    let (n1, n2, n3) = (v1.len(), v2.len(), v3.len());
    let mut data = Vec::with_capacity(n1 * n2 * n3);
    for &a in v1 {
        for &b in v2 {
            for &c in v3 {
                let val = f.eval(a, b, c);
                if !val.is_finite() {
                    return Err(Error::data(format!(
                        "tensor function returned non-finite value at ({a}, {b}, {c})"
                    )));
                }
                data.push(val);
            }
        }
    }
    Ok(SampledTensor {
        n1,
        n2,
        n3,
        data,
        coords: [v1.to_vec(), v2.to_vec(), v3.to_vec()],
    })
}

/// Mode-`mode` unfolding (mode is 1, 2 or 3). Columns are ordered with the
/// lower remaining mode index varying fastest, so `refold` is an exact
/// inverse.
pub fn unfold(t: &SampledTensor, mode: usize) -> Result<Mat> {
    let (n1, n2, n3) = t.sizes();
    match mode {
        1 => Ok(Mat::from_fn(n1, n2 * n3, |i, c| t.get(i, c % n2, c / n2))),
        2 => Ok(Mat::from_fn(n2, n1 * n3, |j, c| t.get(c % n1, j, c / n1))),
        3 => Ok(Mat::from_fn(n3, n1 * n2, |k, c| t.get(c % n1, c / n1, k))),
        _ => Err(Error::argument(format!("unfolding mode must be 1, 2 or 3, got {mode}"))),
    }
}

/// Inverse of [`unfold`]: rebuilds the tensor data (same layout as
/// [`SampledTensor::data`]) from an unfolding.
pub fn refold(m: &Mat, mode: usize, sizes: (usize, usize, usize)) -> Result<Vec<f64>> {
    let (n1, n2, n3) = sizes;
    let expect = match mode {
        1 => (n1, n2 * n3),
        2 => (n2, n1 * n3),
        3 => (n3, n1 * n2),
        _ => return Err(Error::argument(format!("unfolding mode must be 1, 2 or 3, got {mode}"))),
    };
    if (m.rows(), m.cols()) != expect {
        return Err(Error::argument(format!(
            "refold: matrix is {}x{}, expected {}x{} for mode {mode}",
            m.rows(),
            m.cols(),
            expect.0,
            expect.1
        )));
    }
    let mut data = vec![0.0; n1 * n2 * n3];
    for i in 0..n1 {
        for j in 0..n2 {
            for k in 0..n3 {
                let v = match mode {
                    1 => m.get(i, j + k * n2),
                    2 => m.get(j, i + k * n1),
                    _ => m.get(k, i + j * n1),
                };
                data[(i * n2 + j) * n3 + k] = v;
            }
        }
    }
    Ok(data)
}

/// Count of singular values above `rel_tol` times the largest one.
/// The zero matrix has rank 0.
pub fn numerical_rank(m: &Mat, rel_tol: f64) -> Result<usize> {
    if !(rel_tol > 0.0 && rel_tol < 1.0) {
        return Err(Error::argument(format!("rank tolerance must lie in (0,1), got {rel_tol}")));
    }
    let sigmas = linalg::singular_values(m)?;
    let max = sigmas.first().copied().unwrap_or(0.0);
    if max == 0.0 {
        return Ok(0);
    }
    Ok(sigmas.iter().filter(|&&s| s > rel_tol * max).count())
}

/// Upper-bound certificate for the non-negative rank: tries to factor
/// `m ~= W H` with `W, H >= 0` by Lee-Seung multiplicative updates under
/// the Frobenius objective. Returns the factors when the relative
/// residual reaches `tol` within `iters` updates; `None` is *not* a
/// lower-bound proof, only a failed search.
pub fn nmf_certificate(m: &Mat, k: usize, iters: usize, tol: f64) -> Result<Option<FactorPair>> {
    if k == 0 {
        return Err(Error::argument("nmf_certificate: K must be >= 1"));
    }
    if !m.is_finite() {
        return Err(Error::data("nmf_certificate: matrix has non-finite entries"));
    }
    if m.as_slice().iter().any(|&v| v < 0.0) {
        return Err(Error::data("nmf_certificate: matrix has negative entries"));
    }
    let norm = m.frob_norm();
    if norm == 0.0 {
        return Ok(Some(FactorPair::new(Mat::zeros(m.rows(), k), Mat::zeros(k, m.cols()))?));
    }

    // Deterministic strictly positive initialization scaled to the data.
    let mut rng = StdRng::seed_from_u64(0x6e6d66);
    let mean = m.as_slice().iter().sum::<f64>() / (m.rows() * m.cols()) as f64;
    let scale = (mean / k as f64).max(1e-12).sqrt();
    let mut w = Mat::from_fn(m.rows(), k, |_, _| scale * (0.2 + rng.random::<f64>()));
    let mut h = Mat::from_fn(k, m.cols(), |_, _| scale * (0.2 + rng.random::<f64>()));

    const GUARD: f64 = 1e-12;
    let mut best = f64::INFINITY;
    for it in 0..iters {
        // H <- H .* (W^T M) ./ (W^T W H)
        let wtm = linalg::matmul_tn(&w, m);
        let wtw = linalg::matmul_tn(&w, &w);
        let wtwh = linalg::matmul(&wtw, &h);
        for (hv, (num, den)) in h
            .as_mut_slice()
            .iter_mut()
            .zip(wtm.as_slice().iter().zip(wtwh.as_slice()))
        {
            *hv *= num / (den + GUARD);
        }
        // W <- W .* (M H^T) ./ (W H H^T)
        let mht = linalg::matmul_nt(m, &h);
        let hht = linalg::matmul_nt(&h, &h);
        let whht = linalg::matmul(&w, &hht);
        for (wv, (num, den)) in w
            .as_mut_slice()
            .iter_mut()
            .zip(mht.as_slice().iter().zip(whht.as_slice()))
        {
            *wv *= num / (den + GUARD);
        }

        if it % 10 == 9 || it + 1 == iters {
            let wh = linalg::matmul(&w, &h);
            let mut resid2 = 0.0;
            for (a, b) in m.as_slice().iter().zip(wh.as_slice()) {
                resid2 += (a - b) * (a - b);
            }
            let rel = resid2.sqrt() / norm;
            best = best.min(rel);
            if rel <= tol {
                return Ok(Some(FactorPair::new(w, h)?));
            }
        }
    }
    let _ = best;
    Ok(None)
}

/// True when `x` lies in the conic hull of the generators, decided by a
/// non-negative least-squares fit with residual threshold
/// `tol * (1 + ||x||)`.
pub fn conic_membership(x: &[f64], generators: &[Vec<f64>], tol: f64) -> Result<bool> {
    if generators.is_empty() {
        return Err(Error::argument("conic_membership: no generators supplied"));
    }
    if generators.iter().any(|g| g.len() != x.len()) {
        return Err(Error::argument(format!(
            "conic_membership: generator length does not match target length {}",
            x.len()
        )));
    }
    let g = Mat::from_fn(x.len(), generators.len(), |i, j| generators[j][i]);
    let (_, residual) = linalg::nnls(&g, x, NNLS_MAX_ITERS)?;
    Ok(residual <= tol * (1.0 + linalg::norm2(x)))
}

/// One grid's worth of observations in a [`RankReport`].
#[derive(Debug, Clone)]
pub struct RankObservation {
    pub sizes: (usize, usize, usize),
    pub rank: TuckerRank,
}

/// Plain-text report produced by [`verify_separable_rank`].
#[derive(Debug, Clone)]
pub struct RankReport {
    pub k: usize,
    pub seed: u64,
    pub observations: Vec<RankObservation>,
}

impl RankReport {
    /// True when the mode-3 rank never exceeded K on any sampled grid.
    pub fn mode3_bounded_by_k(&self) -> bool {
        self.observations.iter().all(|o| o.rank.r3 <= self.k)
    }
}

impl fmt::Display for RankReport {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        writeln!(f, "separable rank check: K = {}, seed = {}", self.k, self.seed)?;
        for o in &self.observations {
            writeln!(
                f,
                "grid {} x {} x {}: rank_T = {}",
                o.sizes.0, o.sizes.1, o.sizes.2, o.rank
            )?;
        }
        Ok(())
    }
}

/// Builds a random K-term separable non-negative function, samples it on
/// the given grid plus two enlarged variants, and records the observed
/// Tucker ranks. Mode-3 ranks can never exceed K.
pub fn verify_separable_rank(k: usize, sizes: (usize, usize, usize), seed: u64) -> Result<RankReport> {
    if k == 0 {
        return Err(Error::argument("verify_separable_rank: K must be >= 1"));
    }
    let f = TensorFn::separable_nonneg(k, seed)?;
    let mut observations = Vec::new();
    for scale in [1.0, 1.25, 1.5] {
        let n1 = ((sizes.0 as f64 * scale).ceil() as usize).max(1);
        let n2 = ((sizes.1 as f64 * scale).ceil() as usize).max(1);
        let n3 = ((sizes.2 as f64 * scale).ceil() as usize).max(1);
        let g1 = linspace(0.0, 1.0, n1);
        let g2 = linspace(0.0, 1.0, n2);
        let g3 = linspace(0.0, 1.0, n3);
        let t = sample_tensor(&f, &g1, &g2, &g3)?;
        let rank = TuckerRank::of(&t, DEFAULT_RANK_TOL)?;
        observations.push(RankObservation { sizes: (n1, n2, n3), rank });
    }
    Ok(RankReport { k, seed, observations })
}

/// `n` evenly spaced points covering `[lo, hi]` inclusive.
pub fn linspace(lo: f64, hi: f64, n: usize) -> Vec<f64> {
    if n == 1 {
        return vec![lo];
    }
    (0..n).map(|i| lo + (hi - lo) * i as f64 / (n - 1) as f64).collect()
}
