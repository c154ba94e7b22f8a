//! Discrete Radon forward model with an exact adjoint, plus sinogram
//! synthesis: uniform randoms and SNR-calibrated Poisson noise.
//!
//! The projector is pixel-driven: each pixel center inside the inscribed
//! circle maps to one detector coordinate per angle and its unit mass is
//! split between the two nearest bins by linear interpolation. The system
//! matrix is stored explicitly (the sizes here are desk-scale), and the
//! adjoint applies the stored transpose, so the inner-product identity
//! holds to rounding.

use rand::rngs::StdRng;
use rand::SeedableRng;
use rand_distr::{Distribution, Poisson};

use crate::error::{Error, Result};
use crate::phantom::DynamicImage;

/// Explicit sparse Radon transform for one image geometry.
#[derive(Debug, Clone)]
pub struct RadonProjector {
    pub h: usize,
    pub w: usize,
    pub n_angles: usize,
    pub n_bins: usize,
    /// Projection angles in radians, uniform on [0, pi).
    pub angles: Vec<f64>,
    // CSR over rays (rows = n_angles * n_bins).
    ray_ptr: Vec<usize>,
    ray_cols: Vec<u32>,
    ray_vals: Vec<f64>,
    // CSR over pixels: the stored transpose, used by the adjoint.
    pix_ptr: Vec<usize>,
    pix_cols: Vec<u32>,
    pix_vals: Vec<f64>,
}

impl RadonProjector {
    #[inline]
    pub fn rays(&self) -> usize {
        self.n_angles * self.n_bins
    }

    #[inline]
    pub fn pixels(&self) -> usize {
        self.h * self.w
    }

    pub fn nnz(&self) -> usize {
        self.ray_vals.len()
    }

    /// Per-pixel sensitivity `P^T 1`.
    pub fn sensitivity(&self) -> Vec<f64> {
        self.adjoint(&vec![1.0; self.rays()]).expect("sized internally")
    }

    /// True for pixels inside the reconstruction circle (those that hit
    /// at least one ray).
    pub fn support(&self) -> Vec<bool> {
        (0..self.pixels()).map(|p| self.pix_ptr[p + 1] > self.pix_ptr[p]).collect()
    }

    /// `y = P u` for a single frame.
    pub fn forward(&self, u: &[f64]) -> Result<Vec<f64>> {
        if u.len() != self.pixels() {
            return Err(Error::argument(format!(
                "forward: image has {} pixels, projector expects {}",
                u.len(),
                self.pixels()
            )));
        }
        let mut y = vec![0.0; self.rays()];
        self.forward_into(u, &mut y);
        Ok(y)
    }

    /// `u = P^T s` for a single sinogram frame.
    pub fn adjoint(&self, s: &[f64]) -> Result<Vec<f64>> {
        if s.len() != self.rays() {
            return Err(Error::argument(format!(
                "adjoint: sinogram has {} entries, projector expects {}",
                s.len(),
                self.rays()
            )));
        }
        let mut u = vec![0.0; self.pixels()];
        self.adjoint_into(s, &mut u);
        Ok(u)
    }

    /// In-place forward application; sizes must already be correct.
    pub fn forward_into(&self, u: &[f64], y: &mut [f64]) {
        assert_eq!(u.len(), self.pixels());
        assert_eq!(y.len(), self.rays());
        for (r, out) in y.iter_mut().enumerate() {
            let mut acc = 0.0;
            for idx in self.ray_ptr[r]..self.ray_ptr[r + 1] {
                acc += self.ray_vals[idx] * u[self.ray_cols[idx] as usize];
            }
            *out = acc;
        }
    }

    /// In-place adjoint application; sizes must already be correct.
    pub fn adjoint_into(&self, s: &[f64], u: &mut [f64]) {
        assert_eq!(s.len(), self.rays());
        assert_eq!(u.len(), self.pixels());
        for (p, out) in u.iter_mut().enumerate() {
            let mut acc = 0.0;
            for idx in self.pix_ptr[p]..self.pix_ptr[p + 1] {
                acc += self.pix_vals[idx] * s[self.pix_cols[idx] as usize];
            }
            *out = acc;
        }
    }

    /// Projects every frame of a dynamic image; output is frame-major
    /// with `rays()` entries per frame.
    pub fn project_image(&self, img: &DynamicImage) -> Result<Vec<f64>> {
        if img.pixels() != self.pixels() {
            return Err(Error::argument("project_image: geometry mismatch"));
        }
        let mut out = Vec::with_capacity(self.rays() * img.t_frames);
        for t in 0..img.t_frames {
            out.extend(self.forward(img.frame(t))?);
        }
        Ok(out)
    }
}

/// Builds the pixel-driven projector. detector pitch equals pixel pitch,
/// and the detector must cover the image diagonal.
pub fn build_projector(h: usize, w: usize, n_angles: usize, n_bins: usize) -> Result<RadonProjector> {
    if h == 0 || w == 0 || n_angles == 0 || n_bins == 0 {
        return Err(Error::argument("build_projector: all sizes must be >= 1"));
    }
    let diag = ((h * h + w * w) as f64).sqrt();
    if (n_bins as f64) < diag {
        return Err(Error::argument(format!(
            "build_projector: {n_bins} bins cannot cover the image diagonal ({diag:.1} pixels)"
        )));
    }
    let angles: Vec<f64> =
        (0..n_angles).map(|a| a as f64 * core::f64::consts::PI / n_angles as f64).collect();

    let radius = (h.min(w) as f64) / 2.0;
    let center_off = (n_bins as f64 - 1.0) / 2.0;
    let pixels = h * w;
    let rays = n_angles * n_bins;

    // Triplets in deterministic (angle, pixel) order.
    let mut rows = Vec::new();
    let mut cols = Vec::new();
    let mut vals = Vec::new();
    for (a, &theta) in angles.iter().enumerate() {
        let (sin_t, cos_t) = theta.sin_cos();
        for r in 0..h {
            let y = r as f64 + 0.5 - h as f64 / 2.0;
            for c in 0..w {
                let x = c as f64 + 0.5 - w as f64 / 2.0;
                if x * x + y * y > radius * radius {
                    continue;
                }
                let s = x * cos_t + y * sin_t;
                let u = s + center_off;
                let b0 = u.floor();
                let frac = u - b0;
                let b0 = b0 as isize;
                let p = (r * w + c) as u32;
                if (1.0 - frac) > 0.0 {
                    debug_assert!(b0 >= 0 && (b0 as usize) < n_bins);
                    rows.push(a * n_bins + b0 as usize);
                    cols.push(p);
                    vals.push(1.0 - frac);
                }
                if frac > 0.0 {
                    debug_assert!(b0 + 1 >= 0 && ((b0 + 1) as usize) < n_bins);
                    rows.push(a * n_bins + (b0 + 1) as usize);
                    cols.push(p);
                    vals.push(frac);
                }
            }
        }
    }

    // Counting sort into CSR over rays.
    let mut ray_ptr = vec![0usize; rays + 1];
    for &r in &rows {
        ray_ptr[r + 1] += 1;
    }
    for i in 0..rays {
        ray_ptr[i + 1] += ray_ptr[i];
    }
    let nnz = vals.len();
    let mut ray_cols = vec![0u32; nnz];
    let mut ray_vals = vec![0.0; nnz];
    let mut cursor = ray_ptr.clone();
    for i in 0..nnz {
        let at = cursor[rows[i]];
        ray_cols[at] = cols[i];
        ray_vals[at] = vals[i];
        cursor[rows[i]] += 1;
    }

    // And the stored transpose, CSR over pixels.
    let mut pix_ptr = vec![0usize; pixels + 1];
    for &c in &cols {
        pix_ptr[c as usize + 1] += 1;
    }
    for i in 0..pixels {
        pix_ptr[i + 1] += pix_ptr[i];
    }
    let mut pix_cols = vec![0u32; nnz];
    let mut pix_vals = vec![0.0; nnz];
    let mut cursor = pix_ptr.clone();
    for i in 0..nnz {
        let at = cursor[cols[i] as usize];
        pix_cols[at] = rows[i] as u32;
        pix_vals[at] = vals[i];
        cursor[cols[i] as usize] += 1;
    }

    Ok(RadonProjector {
        h,
        w,
        n_angles,
        n_bins,
        angles,
        ray_ptr,
        ray_cols,
        ray_vals,
        pix_ptr,
        pix_cols,
        pix_vals,
    })
}

/// Projection data for a full study: Poisson counts, the expectation of
/// randoms/scatters, and the counts-per-activity calibration factor.
#[derive(Debug, Clone)]
pub struct Sinogram {
    pub n_angles: usize,
    pub n_bins: usize,
    pub t_frames: usize,
    /// Observed counts, frame-major, `n_angles * n_bins` entries per frame.
    pub counts: Vec<f64>,
    /// Expectation of scattered/random events in count units, same layout.
    pub randoms_scatters: Vec<f64>,
    /// Counts-per-activity scale applied before drawing Poisson samples.
    pub scale: f64,
    pub frame_times_min: Vec<f64>,
    pub frame_durations_min: Vec<f64>,
}

impl Sinogram {
    #[inline]
    pub fn rays(&self) -> usize {
        self.n_angles * self.n_bins
    }

    #[inline]
    pub fn frame(&self, t: usize) -> &[f64] {
        let n = self.rays();
        &self.counts[t * n..(t + 1) * n]
    }

    #[inline]
    pub fn randoms_frame(&self, t: usize) -> &[f64] {
        let n = self.rays();
        &self.randoms_scatters[t * n..(t + 1) * n]
    }
}

/// Spatially uniform randoms whose per-frame total is `fraction` times
/// the per-frame total of the noiseless data.
pub fn simulate_randoms(noiseless: &[f64], rays: usize, t_frames: usize, fraction: f64) -> Result<Vec<f64>> {
    if noiseless.len() != rays * t_frames {
        return Err(Error::argument("simulate_randoms: array shape mismatch"));
    }
    if !(0.0..1.0).contains(&fraction) {
        return Err(Error::argument(format!("randoms fraction {fraction} outside [0, 1)")));
    }
    let mut s = vec![0.0; noiseless.len()];
    for t in 0..t_frames {
        let total: f64 = noiseless[t * rays..(t + 1) * rays].iter().sum();
        let level = fraction * total / rays as f64;
        s[t * rays..(t + 1) * rays].fill(level);
    }
    Ok(s)
}

/// Calibration factor placing the Poisson noise floor at `target_snr_db`:
/// with counts `z ~ Poisson(c y)`, `E||z - c y||^2 = sum(c y)`, so
/// `c = 10^(SNR/10) * sum(y) / ||y||^2`.
pub fn poisson_scale(expectation: &[f64], target_snr_db: f64) -> Result<f64> {
    let sum: f64 = expectation.iter().sum();
    let power: f64 = expectation.iter().map(|v| v * v).sum();
    if sum <= 0.0 || power <= 0.0 {
        return Err(Error::data("poisson_scale: expectation is identically zero"));
    }
    Ok(10f64.powf(target_snr_db / 10.0) * sum / power)
}

/// Draws the noisy sinogram. `expectation` is the full noiseless model
/// `P U + S` in activity units and `randoms` its additive part `S`; both
/// are rescaled by the calibration factor so the stored counts and
/// randoms expectation live in count units.
pub fn calibrate_and_poisson(
    expectation: &[f64],
    randoms: &[f64],
    n_angles: usize,
    n_bins: usize,
    t_frames: usize,
    target_snr_db: f64,
    seed: u64,
    frame_times_min: Vec<f64>,
    frame_durations_min: Vec<f64>,
) -> Result<Sinogram> {
    let rays = n_angles * n_bins;
    if expectation.len() != rays * t_frames || randoms.len() != expectation.len() {
        return Err(Error::argument("calibrate_and_poisson: array shape mismatch"));
    }
    if expectation.iter().any(|v| !v.is_finite() || *v < 0.0) {
        return Err(Error::data("calibrate_and_poisson: expectation must be finite and >= 0"));
    }
    let scale = poisson_scale(expectation, target_snr_db)?;
    let mut rng = StdRng::seed_from_u64(seed);
    let mut counts = Vec::with_capacity(expectation.len());
    for &v in expectation {
        let lambda = scale * v;
        if lambda > 0.0 {
            counts.push(Poisson::new(lambda).expect("positive mean").sample(&mut rng));
        } else {
            counts.push(0.0);
        }
    }
    let randoms_scatters = randoms.iter().map(|&v| scale * v).collect();
    Ok(Sinogram {
        n_angles,
        n_bins,
        t_frames,
        counts,
        randoms_scatters,
        scale,
        frame_times_min,
        frame_durations_min,
    })
}

/// Empirical SNR of counts against their scaled expectation, in dB.
pub fn empirical_snr_db(counts: &[f64], expectation: &[f64], scale: f64) -> f64 {
    let mut signal = 0.0;
    let mut noise = 0.0;
    for (&z, &y) in counts.iter().zip(expectation) {
        let lambda = scale * y;
        signal += lambda * lambda;
        noise += (z - lambda) * (z - lambda);
    }
    10.0 * (signal / noise).log10()
}
