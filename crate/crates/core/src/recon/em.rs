//! Frame-wise MLEM: `u <- (u / P^T 1) .* P^T (z / (P u + s))`.

use crate::error::{Error, Result};
use crate::phantom::DynamicImage;
use crate::projector::{RadonProjector, Sinogram};

use super::Projection;

/// One frame's reconstruction plus its per-iteration log-likelihood.
#[derive(Debug, Clone)]
pub struct EmFrameResult {
    pub image: Vec<f64>,
    /// Poisson log-likelihood (up to the `log z!` constant) after each
    /// iteration; non-decreasing by the EM property.
    pub loglik: Vec<f64>,
}

/// Poisson log-likelihood `sum_i z_i log y_i - y_i`, skipping empty rays.
pub fn poisson_loglik(z: &[f64], y: &[f64]) -> f64 {
    let mut ll = 0.0;
    for (&zi, &yi) in z.iter().zip(y) {
        if yi > 0.0 {
            ll += zi * yi.ln() - yi;
        } else if zi > 0.0 {
            return f64::NEG_INFINITY;
        }
    }
    ll
}

pub(crate) fn em_frame_core<P: Projection>(
    proj: &P,
    z: &[f64],
    randoms: &[f64],
    iters: usize,
) -> Result<EmFrameResult> {
    if iters == 0 {
        return Err(Error::argument("em: iteration count must be >= 1"));
    }
    let sens = proj.sens();
    // Pixels with zero sensitivity sit outside the field of view and stay
    // frozen at zero.
    let mut u: Vec<f64> = sens.iter().map(|&s| if s > 0.0 { 1.0 } else { 0.0 }).collect();
    let mut y = vec![0.0; proj.n_rays()];
    let mut ratio = vec![0.0; proj.n_rays()];
    let mut back = vec![0.0; proj.n_pixels()];
    let mut loglik = Vec::with_capacity(iters);
    for _ in 0..iters {
        proj.fwd(&u, &mut y);
        for (yi, &si) in y.iter_mut().zip(randoms) {
            *yi += si;
        }
        for ((r, &zi), &yi) in ratio.iter_mut().zip(z).zip(&y) {
            *r = if yi > 0.0 { zi / yi } else { 0.0 };
        }
        proj.adj(&ratio, &mut back);
        for ((uv, &bv), &sv) in u.iter_mut().zip(&back).zip(&sens) {
            if sv > 0.0 {
                *uv *= bv / sv;
            }
        }
        if u.iter().any(|v| !v.is_finite()) {
            return Err(Error::numerical("em: non-finite iterate"));
        }
        proj.fwd(&u, &mut y);
        for (yi, &si) in y.iter_mut().zip(randoms) {
            *yi += si;
        }
        loglik.push(poisson_loglik(z, &y));
    }
    Ok(EmFrameResult { image: u, loglik })
}

/// MLEM on one sinogram frame with explicit randoms expectation.
pub fn em_frame(
    proj: &RadonProjector,
    z: &[f64],
    randoms: &[f64],
    iters: usize,
) -> Result<EmFrameResult> {
    if z.len() != proj.rays() || randoms.len() != proj.rays() {
        return Err(Error::argument("em_frame: sinogram length mismatch"));
    }
    em_frame_core(proj, z, randoms, iters)
}

/// Frame-wise MLEM over a full study. The result is rescaled to activity
/// units using the sinogram's calibration factor.
pub fn em_reconstruct(z: &Sinogram, proj: &RadonProjector, iters: usize) -> Result<DynamicImage> {
    if z.rays() != proj.rays() {
        return Err(Error::argument("em_reconstruct: projector/sinogram geometry mismatch"));
    }
    let mut img = DynamicImage::zeros(
        proj.h,
        proj.w,
        z.frame_times_min.clone(),
        z.frame_durations_min.clone(),
    );
    for t in 0..z.t_frames {
        let frame = em_frame(proj, z.frame(t), z.randoms_frame(t), iters)?;
        let out = img.frame_mut(t);
        for (o, v) in out.iter_mut().zip(frame.image) {
            *o = v / z.scale;
        }
    }
    Ok(img)
}
