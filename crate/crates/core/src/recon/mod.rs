//! The five reconstruction algorithms and their shared loss pieces.
//!
//! * [`em_reconstruct`] — frame-wise MLEM.
//! * [`em_nmf_reconstruct`] — multiplicative EM updates of a non-negative
//!   factor pair `U = A B`.
//! * [`map_tv_reconstruct`] — KL data term with spatial TV and temporal
//!   quadratic variation, solved by ADMM.
//! * [`ninrf_train`] — both factors parameterized by non-negative INRs
//!   and trained jointly with Adam.
//! * [`inr_b_reconstruct`] — hybrid: INR spatial factor, EM-updated TACs.
//!
//! All reconstructors work internally in count units (the sinogram's
//! scale) and divide by that scale on output, so returned images are in
//! the ground truth's activity units.

mod em;
mod em_nmf;
mod map_tv;
mod ninrf;

pub use em::{em_frame, em_reconstruct, poisson_loglik, EmFrameResult};
pub use em_nmf::{em_nmf_reconstruct, factor_image, kl_objective, EmNmfResult};
pub use map_tv::{map_tv_reconstruct, MapTvParams, MapTvResult};
pub use ninrf::{
    inr_b_reconstruct, ninrf_train, HybridModel, InrBResult, InrFactorModel, LossParts, LossRow,
    LossTrace, NinrfConfig, NinrfResult, NinrfTrainer,
};

use crate::error::{Error, Result};
use crate::linalg::Mat;
use crate::projector::RadonProjector;

/// Clamp applied to model intensities before logarithms; ReLU outputs can
/// be exactly zero.
pub const KL_EPS: f64 = 1e-9;

/// Smoothing constant inside the differentiable isotropic TV.
pub const TV_SMOOTH_EPS: f64 = 1e-8;

/// Discrete non-negative factors of a dynamic image: spatial coefficients
/// `A` (pixels x K) and TACs `B` (K x frames).
#[derive(Debug, Clone)]
pub struct FactorPair {
    a: Mat,
    b: Mat,
}

impl FactorPair {
    pub fn new(a: Mat, b: Mat) -> Result<Self> {
        if a.cols() != b.rows() {
            return Err(Error::argument(format!(
                "factor pair: A is {}x{} but B is {}x{}",
                a.rows(),
                a.cols(),
                b.rows(),
                b.cols()
            )));
        }
        if a.as_slice().iter().chain(b.as_slice()).any(|&v| v < 0.0 || !v.is_finite()) {
            return Err(Error::data("factor pair entries must be finite and non-negative"));
        }
        Ok(FactorPair { a, b })
    }

    pub fn a(&self) -> &Mat {
        &self.a
    }

    pub fn b(&self) -> &Mat {
        &self.b
    }

    pub fn k(&self) -> usize {
        self.a.cols()
    }

    /// The reconstructed image matrix `A B` (pixels x frames).
    pub fn product(&self) -> Mat {
        crate::linalg::matmul(&self.a, &self.b)
    }
}

/// Poisson KL data term `sum_i q_i - z_i log q_i` with `0 log 0 := 0` and
/// `q` clamped at [`KL_EPS`] before the logarithm. Returns the value and
/// the gradient `1 - z/q` with respect to `q`.
pub fn kl_divergence(z: &[f64], q: &[f64]) -> Result<(f64, Vec<f64>)> {
    if z.len() != q.len() {
        return Err(Error::argument("kl_divergence: length mismatch"));
    }
    if z.iter().any(|&v| v < 0.0 || !v.is_finite()) {
        return Err(Error::data("kl_divergence: counts must be finite and non-negative"));
    }
    let mut value = 0.0;
    let mut grad = vec![0.0; q.len()];
    for (g, (&zi, &qi)) in grad.iter_mut().zip(z.iter().zip(q)) {
        let qc = qi.max(KL_EPS);
        value += qi;
        if zi > 0.0 {
            value -= zi * qc.ln();
        }
        // exact derivative of the clamped value: below the clamp the log
        // term is constant, leaving only the linear part
        *g = if qi > KL_EPS { 1.0 - zi / qi } else { 1.0 };
    }
    Ok((value, grad))
}

/// KL value alone, without allocating the gradient.
pub fn kl_value(z: &[f64], q: &[f64]) -> f64 {
    let mut value = 0.0;
    for (&zi, &qi) in z.iter().zip(q) {
        value += qi;
        if zi > 0.0 {
            value -= zi * qi.max(KL_EPS).ln();
        }
    }
    value
}

/// Smoothed isotropic total variation of an `h x w` image with forward
/// differences and replicate boundary:
/// `sum_p sqrt(dx^2 + dy^2 + eps^2)`. Returns the value and its exact
/// gradient.
pub fn tv_isotropic(img: &[f64], h: usize, w: usize, eps_smooth: f64) -> (f64, Vec<f64>) {
    assert_eq!(img.len(), h * w, "tv_isotropic: image shape mismatch");
    assert!(eps_smooth > 0.0, "tv_isotropic: eps must be > 0");
    let mut value = 0.0;
    let mut grad = vec![0.0; h * w];
    for i in 0..h {
        for j in 0..w {
            let p = i * w + j;
            let dx = if j + 1 < w { img[p + 1] - img[p] } else { 0.0 };
            let dy = if i + 1 < h { img[p + w] - img[p] } else { 0.0 };
            let r = (dx * dx + dy * dy + eps_smooth * eps_smooth).sqrt();
            value += r;
            if j + 1 < w {
                grad[p + 1] += dx / r;
                grad[p] -= dx / r;
            }
            if i + 1 < h {
                grad[p + w] += dy / r;
                grad[p] -= dy / r;
            }
        }
    }
    (value, grad)
}

/// Exact (non-smoothed) isotropic TV value, used where the solver handles
/// TV by shrinkage rather than by gradients.
pub fn tv_exact_value(img: &[f64], h: usize, w: usize) -> f64 {
    let mut value = 0.0;
    for i in 0..h {
        for j in 0..w {
            let p = i * w + j;
            let dx = if j + 1 < w { img[p + 1] - img[p] } else { 0.0 };
            let dy = if i + 1 < h { img[p + w] - img[p] } else { 0.0 };
            value += (dx * dx + dy * dy).sqrt();
        }
    }
    value
}

/// Temporal quadratic variation `sum_t (b_{t+1} - b_t)^2` with its exact
/// gradient.
pub fn temporal_quadratic_variation(b: &[f64]) -> Result<(f64, Vec<f64>)> {
    if b.len() < 2 {
        return Err(Error::argument("temporal quadratic variation needs at least 2 frames"));
    }
    let mut value = 0.0;
    let mut grad = vec![0.0; b.len()];
    for t in 0..b.len() - 1 {
        let d = b[t + 1] - b[t];
        value += d * d;
        grad[t + 1] += 2.0 * d;
        grad[t] -= 2.0 * d;
    }
    Ok((value, grad))
}

/// Linear forward model abstraction so the solvers can be exercised with
/// toy operators in tests; the production implementation is
/// [`RadonProjector`].
pub(crate) trait Projection {
    fn n_rays(&self) -> usize;
    fn n_pixels(&self) -> usize;
    fn fwd(&self, u: &[f64], y: &mut [f64]);
    fn adj(&self, y: &[f64], u: &mut [f64]);
    fn sens(&self) -> Vec<f64> {
        let ones = vec![1.0; self.n_rays()];
        let mut s = vec![0.0; self.n_pixels()];
        self.adj(&ones, &mut s);
        s
    }
}

impl Projection for RadonProjector {
    fn n_rays(&self) -> usize {
        self.rays()
    }

    fn n_pixels(&self) -> usize {
        self.pixels()
    }

    fn fwd(&self, u: &[f64], y: &mut [f64]) {
        self.forward_into(u, y);
    }

    fn adj(&self, y: &[f64], u: &mut [f64]) {
        self.adjoint_into(y, u);
    }
}

/// Identity forward model for solver unit tests.
#[cfg(test)]
pub(crate) struct IdentityProjection(pub usize);

#[cfg(test)]
impl Projection for IdentityProjection {
    fn n_rays(&self) -> usize {
        self.0
    }

    fn n_pixels(&self) -> usize {
        self.0
    }

    fn fwd(&self, u: &[f64], y: &mut [f64]) {
        y.copy_from_slice(u);
    }

    fn adj(&self, y: &[f64], u: &mut [f64]) {
        u.copy_from_slice(y);
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn kl_hand_values() {
        let (v, g) = kl_divergence(&[2.0], &[1.0]).unwrap();
        assert_eq!(v, 1.0); // 1 - 2 log 1
        assert_eq!(g, vec![-1.0]);
        let (v, g) = kl_divergence(&[0.0], &[3.0]).unwrap();
        assert_eq!(v, 3.0);
        assert_eq!(g, vec![1.0]);
    }

    #[test]
    fn kl_minimized_at_counts() {
        let z = [4.0, 1.0, 0.5];
        let (_, g) = kl_divergence(&z, &z).unwrap();
        assert!(g.iter().all(|v| v.abs() < 1e-12));
        // any perturbation increases the value
        let (v0, _) = kl_divergence(&z, &z).unwrap();
        let (v1, _) = kl_divergence(&z, &[4.2, 1.0, 0.5]).unwrap();
        assert!(v1 > v0);
    }

    #[test]
    fn kl_rejects_negative_counts() {
        assert!(matches!(kl_divergence(&[-1.0], &[1.0]), Err(Error::Data(_))));
    }

    #[test]
    fn tv_constant_image_is_eps_floor() {
        let (v, g) = tv_isotropic(&[2.5; 12], 3, 4, 1e-8);
        assert!((v - 12.0 * 1e-8).abs() < 1e-12);
        assert!(g.iter().all(|x| x.abs() < 1e-6));
    }

    #[test]
    fn tv_vertical_edge_counts_rows() {
        let h = 6;
        let w = 8;
        let img: Vec<f64> =
            (0..h * w).map(|p| if p % w >= w / 2 { 1.0 } else { 0.0 }).collect();
        let (v, _) = tv_isotropic(&img, h, w, 1e-8);
        assert!((v - h as f64).abs() < 1e-5, "tv = {v}");
    }

    #[test]
    fn tv_gradient_matches_finite_differences() {
        use rand::{Rng, SeedableRng};
        let mut rng = rand::rngs::StdRng::seed_from_u64(66);
        let (h, w) = (8, 8);
        let img: Vec<f64> = (0..h * w).map(|_| rng.random::<f64>()).collect();
        let eps = 1e-3; // keep the smoothed form well away from kinks
        let (_, g) = tv_isotropic(&img, h, w, eps);
        let step = 1e-6;
        for p in 0..h * w {
            let mut plus = img.clone();
            plus[p] += step;
            let mut minus = img.clone();
            minus[p] -= step;
            let fd =
                (tv_isotropic(&plus, h, w, eps).0 - tv_isotropic(&minus, h, w, eps).0) / (2.0 * step);
            let denom = g[p].abs().max(fd.abs()).max(1e-8);
            assert!((g[p] - fd).abs() / denom <= 1e-5, "pixel {p}: {} vs {}", g[p], fd);
        }
    }

    #[test]
    fn qv_closed_forms() {
        let (v, g) = temporal_quadratic_variation(&[3.0; 7]).unwrap();
        assert_eq!(v, 0.0);
        assert!(g.iter().all(|x| *x == 0.0));
        let s = 0.7;
        let arith: Vec<f64> = (0..10).map(|t| 1.0 + s * t as f64).collect();
        let (v, _) = temporal_quadratic_variation(&arith).unwrap();
        assert!((v - 9.0 * s * s).abs() < 1e-12);
        assert!(matches!(temporal_quadratic_variation(&[1.0]), Err(Error::Argument(_))));
    }

    #[test]
    fn qv_gradient_matches_finite_differences() {
        use rand::{Rng, SeedableRng};
        let mut rng = rand::rngs::StdRng::seed_from_u64(67);
        let b: Vec<f64> = (0..10).map(|_| rng.random::<f64>() * 2.0).collect();
        let (_, g) = temporal_quadratic_variation(&b).unwrap();
        let step = 1e-6;
        for t in 0..b.len() {
            let mut plus = b.clone();
            plus[t] += step;
            let mut minus = b.clone();
            minus[t] -= step;
            let fd = (temporal_quadratic_variation(&plus).unwrap().0
                - temporal_quadratic_variation(&minus).unwrap().0)
                / (2.0 * step);
            assert!((g[t] - fd).abs() <= 1e-8 * fd.abs().max(1.0));
        }
    }

    #[test]
    fn factor_pair_rejects_negative() {
        let a = Mat::from_vec(2, 1, vec![1.0, -0.2]);
        let b = Mat::from_vec(1, 2, vec![1.0, 1.0]);
        assert!(matches!(FactorPair::new(a, b), Err(Error::Data(_))));
    }
}
