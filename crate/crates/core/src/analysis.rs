//! Quantitative evaluation: PSNR/SSIM against ground truth, ROI TAC
//! extraction, line profiles, and Patlak kinetic analysis.

use crate::error::{Error, Result};
use crate::phantom::{DynamicImage, Tac};

/// Gaussian window used by SSIM: 11 x 11, sigma 1.5.
pub const SSIM_WINDOW: usize = 11;
pub const SSIM_SIGMA: f64 = 1.5;
pub const SSIM_K1: f64 = 0.01;
pub const SSIM_K2: f64 = 0.03;

/// Global and per-frame image-quality scores of a reconstruction.
#[derive(Debug, Clone)]
pub struct QualityReport {
    /// PSNR of the whole sequence treated as one signal; infinite when
    /// the images are identical.
    pub psnr_3d: f64,
    /// Mean of the per-frame SSIM scores.
    pub ssim_3d: f64,
    pub per_frame_psnr: Vec<f64>,
    pub per_frame_ssim: Vec<f64>,
}

/// PSNR over all voxels with the peak taken from the reference sequence.
pub fn psnr(u: &DynamicImage, reference: &DynamicImage) -> Result<f64> {
    check_same_shape(u, reference)?;
    let peak = reference.max_value();
    let mse = mse_of(&u.data, &reference.data);
    Ok(psnr_from(peak, mse))
}

fn check_same_shape(u: &DynamicImage, reference: &DynamicImage) -> Result<()> {
    if u.h != reference.h || u.w != reference.w || u.t_frames != reference.t_frames {
        return Err(Error::argument(format!(
            "image shapes differ: {}x{}x{} vs {}x{}x{}",
            u.h, u.w, u.t_frames, reference.h, reference.w, reference.t_frames
        )));
    }
    Ok(())
}

fn mse_of(a: &[f64], b: &[f64]) -> f64 {
    let mut acc = 0.0;
    for (x, y) in a.iter().zip(b) {
        acc += (x - y) * (x - y);
    }
    acc / a.len() as f64
}

fn psnr_from(peak: f64, mse: f64) -> f64 {
    if mse == 0.0 {
        f64::INFINITY
    } else {
        10.0 * (peak * peak / mse).log10()
    }
}

/// Mean local SSIM of one frame against its reference, valid windows
/// only. The dynamic range is taken from the reference frame.
pub fn ssim_frame(u: &[f64], reference: &[f64], h: usize, w: usize) -> Result<f64> {
    if u.len() != h * w || reference.len() != h * w {
        return Err(Error::argument("ssim: frame shape mismatch"));
    }
    if h < SSIM_WINDOW || w < SSIM_WINDOW {
        return Err(Error::argument(format!(
            "ssim: image {h}x{w} is smaller than the {SSIM_WINDOW}x{SSIM_WINDOW} window"
        )));
    }
    let kernel = gaussian_kernel();
    let range = {
        let (mut lo, mut hi) = (f64::INFINITY, f64::NEG_INFINITY);
        for &v in reference {
            lo = lo.min(v);
            hi = hi.max(v);
        }
        let l = hi - lo;
        if l > 0.0 {
            l
        } else {
            1.0
        }
    };
    let c1 = (SSIM_K1 * range) * (SSIM_K1 * range);
    let c2 = (SSIM_K2 * range) * (SSIM_K2 * range);

    // Separable weighted sums of u, ref, u^2, ref^2 and u*ref.
    let fields: [&dyn Fn(usize) -> f64; 5] = [
        &|p| u[p],
        &|p| reference[p],
        &|p| u[p] * u[p],
        &|p| reference[p] * reference[p],
        &|p| u[p] * reference[p],
    ];
    let oh = h - SSIM_WINDOW + 1;
    let ow = w - SSIM_WINDOW + 1;
    let mut sums = vec![[0.0f64; 5]; oh * ow];
    let mut rowpass = vec![[0.0f64; 5]; h * ow];
    for i in 0..h {
        for oj in 0..ow {
            let mut acc = [0.0; 5];
            for (kx, &kw) in kernel.iter().enumerate() {
                let p = i * w + oj + kx;
                for (f, field) in fields.iter().enumerate() {
                    acc[f] += kw * field(p);
                }
            }
            rowpass[i * ow + oj] = acc;
        }
    }
    for oi in 0..oh {
        for oj in 0..ow {
            let mut acc = [0.0; 5];
            for (ky, &kw) in kernel.iter().enumerate() {
                let r = &rowpass[(oi + ky) * ow + oj];
                for f in 0..5 {
                    acc[f] += kw * r[f];
                }
            }
            sums[oi * ow + oj] = acc;
        }
    }

    let mut total = 0.0;
    for s in &sums {
        let [mu_u, mu_r, uu, rr, ur] = *s;
        let var_u = uu - mu_u * mu_u;
        let var_r = rr - mu_r * mu_r;
        let cov = ur - mu_u * mu_r;
        let num = (2.0 * mu_u * mu_r + c1) * (2.0 * cov + c2);
        let den = (mu_u * mu_u + mu_r * mu_r + c1) * (var_u + var_r + c2);
        total += num / den;
    }
    Ok(total / sums.len() as f64)
}

fn gaussian_kernel() -> [f64; SSIM_WINDOW] {
    let half = (SSIM_WINDOW / 2) as f64;
    let mut k = [0.0; SSIM_WINDOW];
    let mut sum = 0.0;
    for (i, v) in k.iter_mut().enumerate() {
        let d = i as f64 - half;
        *v = (-d * d / (2.0 * SSIM_SIGMA * SSIM_SIGMA)).exp();
        sum += *v;
    }
    for v in k.iter_mut() {
        *v /= sum;
    }
    k
}

/// Full quality report: global PSNR/SSIM plus per-frame curves.
pub fn quality_report(u: &DynamicImage, reference: &DynamicImage) -> Result<QualityReport> {
    check_same_shape(u, reference)?;
    let peak = reference.max_value();
    let mut per_frame_psnr = Vec::with_capacity(u.t_frames);
    let mut per_frame_ssim = Vec::with_capacity(u.t_frames);
    for t in 0..u.t_frames {
        per_frame_psnr.push(psnr_from(peak, mse_of(u.frame(t), reference.frame(t))));
        per_frame_ssim.push(ssim_frame(u.frame(t), reference.frame(t), u.h, u.w)?);
    }
    let ssim_3d = per_frame_ssim.iter().sum::<f64>() / per_frame_ssim.len() as f64;
    Ok(QualityReport {
        psnr_3d: psnr(u, reference)?,
        ssim_3d,
        per_frame_psnr,
        per_frame_ssim,
    })
}

/// Per-frame mean over a pixel mask.
pub fn extract_tac(u: &DynamicImage, roi: &[bool]) -> Result<Tac> {
    if roi.len() != u.pixels() {
        return Err(Error::argument("extract_tac: mask shape mismatch"));
    }
    let n = roi.iter().filter(|&&b| b).count();
    if n == 0 {
        return Err(Error::argument("extract_tac: empty mask"));
    }
    let mut values = Vec::with_capacity(u.t_frames);
    for t in 0..u.t_frames {
        let frame = u.frame(t);
        let mut acc = 0.0;
        for (p, &inside) in roi.iter().enumerate() {
            if inside {
                acc += frame[p];
            }
        }
        values.push(acc / n as f64);
    }
    Tac::new(values, u.frame_times_min.clone(), u.frame_durations_min.clone())
}

/// Row or column selector for [`line_profile`].
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ProfileSpec {
    Row(usize),
    Col(usize),
}

/// Extracts one row or column of a frame.
pub fn line_profile(frame: &[f64], h: usize, w: usize, spec: ProfileSpec) -> Result<Vec<f64>> {
    if frame.len() != h * w {
        return Err(Error::argument("line_profile: frame shape mismatch"));
    }
    match spec {
        ProfileSpec::Row(i) => {
            if i >= h {
                return Err(Error::argument(format!("line_profile: row {i} out of range")));
            }
            Ok(frame[i * w..(i + 1) * w].to_vec())
        }
        ProfileSpec::Col(j) => {
            if j >= w {
                return Err(Error::argument(format!("line_profile: column {j} out of range")));
            }
            Ok((0..h).map(|i| frame[i * w + j]).collect())
        }
    }
}

/// Patlak fit: slope (net influx rate), intercept, and residual.
#[derive(Debug, Clone, Copy)]
pub struct PatlakResult {
    pub ki: f64,
    pub v: f64,
    pub points_used: usize,
    pub residual: f64,
}

/// Default start of the Patlak linear regime, in minutes.
pub const PATLAK_T_START_MIN: f64 = 50.0;

/// Cumulative integral of `cp` at its frame midpoints, by trapezoid with
/// the physical anchor `Cp(0) = 0`.
fn cumulative_integral(times: &[f64], cp: &[f64]) -> Vec<f64> {
    let mut cum = Vec::with_capacity(cp.len());
    let mut acc = 0.5 * cp[0] * times[0];
    cum.push(acc);
    for i in 1..cp.len() {
        acc += 0.5 * (cp[i] + cp[i - 1]) * (times[i] - times[i - 1]);
        cum.push(acc);
    }
    cum
}

/// Ordinary least squares of `C_T/C_p` against `int C_p / C_p` over the
/// frames with midpoint time `>= t_start`.
pub fn patlak_ki(ct: &Tac, cp: &Tac, t_start_min: f64) -> Result<PatlakResult> {
    if ct.len() != cp.len() || ct.frame_times_min != cp.frame_times_min {
        return Err(Error::argument("patlak: TACs do not share a frame structure"));
    }
    let times = &ct.frame_times_min;
    let cum = cumulative_integral(times, &cp.values);
    let mut xs = Vec::new();
    let mut ys = Vec::new();
    for i in 0..times.len() {
        if times[i] < t_start_min {
            continue;
        }
        if !(cp.values[i] > 0.0) {
            return Err(Error::data(format!(
                "patlak: input function is not positive at t = {}",
                times[i]
            )));
        }
        xs.push(cum[i] / cp.values[i]);
        ys.push(ct.values[i] / cp.values[i]);
    }
    let n = xs.len();
    if n < 2 {
        return Err(Error::data(format!(
            "patlak: only {n} usable frames at t >= {t_start_min} (need at least 2)"
        )));
    }
    let (ki, v) = ols(&xs, &ys)?;
    let mut rss = 0.0;
    for (x, y) in xs.iter().zip(&ys) {
        let e = y - (ki * x + v);
        rss += e * e;
    }
    Ok(PatlakResult { ki, v, points_used: n, residual: rss.sqrt() })
}

fn ols(xs: &[f64], ys: &[f64]) -> Result<(f64, f64)> {
    let n = xs.len() as f64;
    let sx: f64 = xs.iter().sum();
    let sy: f64 = ys.iter().sum();
    let sxx: f64 = xs.iter().map(|x| x * x).sum();
    let sxy: f64 = xs.iter().zip(ys).map(|(x, y)| x * y).sum();
    let det = n * sxx - sx * sx;
    if det.abs() <= 1e-300 {
        return Err(Error::data("patlak: degenerate regression (constant abscissa)"));
    }
    let ki = (n * sxy - sx * sy) / det;
    let v = (sy - ki * sx) / n;
    Ok((ki, v))
}

/// Pixel-wise Patlak slope map. Pixels with an identically-zero time
/// series are masked out rather than fitted.
pub fn ki_map(u: &DynamicImage, cp: &Tac, t_start_min: f64) -> Result<(Vec<f64>, Vec<bool>)> {
    if cp.len() != u.t_frames || cp.frame_times_min != u.frame_times_min {
        return Err(Error::argument("ki_map: input function frames do not match the image"));
    }
    let hw = u.pixels();
    let mut ki = vec![0.0; hw];
    let mut valid = vec![false; hw];
    // shared abscissa across pixels
    let times = &u.frame_times_min;
    let cum = cumulative_integral(times, &cp.values);
    let mut xs = Vec::new();
    let mut idx = Vec::new();
    for i in 0..times.len() {
        if times[i] < t_start_min {
            continue;
        }
        if !(cp.values[i] > 0.0) {
            return Err(Error::data("ki_map: input function is not positive in the fit window"));
        }
        xs.push(cum[i] / cp.values[i]);
        idx.push(i);
    }
    if xs.len() < 2 {
        return Err(Error::data("ki_map: fewer than 2 usable frames in the fit window"));
    }
    let mut ys = vec![0.0; xs.len()];
    for p in 0..hw {
        let mut any = false;
        for (slot, &i) in ys.iter_mut().zip(&idx) {
            let v = u.data[i * hw + p];
            if v != 0.0 {
                any = true;
            }
            *slot = v / cp.values[i];
        }
        // also require some activity anywhere in the series
        if !any && u.pixel_series(p).iter().all(|&v| v == 0.0) {
            continue;
        }
        if let Ok((slope, _)) = ols(&xs, &ys) {
            ki[p] = slope;
            valid[p] = true;
        }
    }
    Ok((ki, valid))
}

/// Mean absolute and mean relative error over a region.
#[derive(Debug, Clone, Copy)]
pub struct ErrorStats {
    pub mae: f64,
    pub mre: f64,
    /// Pixels that entered the MAE average.
    pub used: usize,
    /// Region pixels excluded from the MRE because the truth is zero.
    pub zero_truth_excluded: usize,
}

/// MAE/MRE of an estimate (with validity mask) against truth over a
/// region mask. Truth zeros are excluded from the relative error and
/// counted.
pub fn error_stats(
    estimate: &[f64],
    valid: &[bool],
    truth: &[f64],
    region: &[bool],
) -> Result<ErrorStats> {
    if estimate.len() != truth.len() || valid.len() != truth.len() || region.len() != truth.len() {
        return Err(Error::argument("error_stats: shape mismatch"));
    }
    let mut abs_acc = 0.0;
    let mut rel_acc = 0.0;
    let mut used = 0usize;
    let mut rel_used = 0usize;
    let mut zero_excluded = 0usize;
    for p in 0..truth.len() {
        if !region[p] || !valid[p] {
            continue;
        }
        let err = (estimate[p] - truth[p]).abs();
        abs_acc += err;
        used += 1;
        if truth[p] != 0.0 {
            rel_acc += err / truth[p].abs();
            rel_used += 1;
        } else {
            zero_excluded += 1;
        }
    }
    if used == 0 {
        return Err(Error::argument("error_stats: region is empty after masking"));
    }
    Ok(ErrorStats {
        mae: abs_acc / used as f64,
        mre: if rel_used > 0 { rel_acc / rel_used as f64 } else { f64::NAN },
        used,
        zero_truth_excluded: zero_excluded,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::phantom::uniform_frames;

    fn image_from(h: usize, w: usize, frames: Vec<Vec<f64>>) -> DynamicImage {
        let (times, durs) = uniform_frames(frames.len(), 1.0);
        let mut img = DynamicImage::zeros(h, w, times, durs);
        for (t, f) in frames.iter().enumerate() {
            img.frame_mut(t).copy_from_slice(f);
        }
        img
    }

    #[test]
    fn psnr_identical_is_infinite() {
        let img = image_from(2, 2, vec![vec![1.0, 2.0, 3.0, 4.0]]);
        assert!(psnr(&img, &img).unwrap().is_infinite());
    }

    #[test]
    fn psnr_uniform_error_closed_form() {
        // peak 1, mse 0.01 -> 20 dB
        let h = 4;
        let w = 4;
        let truth = image_from(h, w, vec![vec![1.0; 16]]);
        let noisy = image_from(h, w, vec![vec![1.1; 16]]);
        let p = psnr(&noisy, &truth).unwrap();
        assert!((p - 20.0).abs() < 1e-9);
    }

    #[test]
    fn psnr_matches_bruteforce_loops() {
        use rand::{Rng, SeedableRng};
        let mut rng = rand::rngs::StdRng::seed_from_u64(15);
        let frames: Vec<Vec<f64>> =
            (0..3).map(|_| (0..64).map(|_| rng.random::<f64>()).collect()).collect();
        let ref_frames: Vec<Vec<f64>> =
            (0..3).map(|_| (0..64).map(|_| rng.random::<f64>()).collect()).collect();
        let u = image_from(8, 8, frames.clone());
        let r = image_from(8, 8, ref_frames.clone());
        // literal two-loop reference
        let mut peak = 0.0f64;
        let mut acc = 0.0;
        let mut n = 0usize;
        for t in 0..3 {
            for p in 0..64 {
                peak = peak.max(ref_frames[t][p]);
            }
        }
        for t in 0..3 {
            for p in 0..64 {
                let d = frames[t][p] - ref_frames[t][p];
                acc += d * d;
                n += 1;
            }
        }
        let expected = 10.0 * (peak * peak / (acc / n as f64)).log10();
        let got = psnr(&u, &r).unwrap();
        assert!((got - expected).abs() < 1e-12);
    }

    #[test]
    fn ssim_identical_is_one() {
        use rand::{Rng, SeedableRng};
        let mut rng = rand::rngs::StdRng::seed_from_u64(16);
        let frame: Vec<f64> = (0..32 * 32).map(|_| rng.random::<f64>()).collect();
        let s = ssim_frame(&frame, &frame, 32, 32).unwrap();
        assert_eq!(s, 1.0);
    }

    #[test]
    fn ssim_luminance_shift_below_one() {
        use rand::{Rng, SeedableRng};
        let mut rng = rand::rngs::StdRng::seed_from_u64(17);
        let reference: Vec<f64> = (0..32 * 32).map(|_| rng.random::<f64>()).collect();
        let shifted: Vec<f64> = reference.iter().map(|v| v + 5.0).collect();
        let s = ssim_frame(&shifted, &reference, 32, 32).unwrap();
        assert!(s < 1.0 && s > 0.0);
    }

    #[test]
    fn ssim_matches_direct_sliding_window() {
        use rand::{Rng, SeedableRng};
        let mut rng = rand::rngs::StdRng::seed_from_u64(18);
        let h = 32;
        let w = 32;
        let u: Vec<f64> = (0..h * w).map(|_| rng.random::<f64>()).collect();
        let r: Vec<f64> = (0..h * w).map(|_| rng.random::<f64>()).collect();

        // independent direct implementation
        let k1d = gaussian_kernel();
        let mut k2d = vec![0.0; SSIM_WINDOW * SSIM_WINDOW];
        for i in 0..SSIM_WINDOW {
            for j in 0..SSIM_WINDOW {
                k2d[i * SSIM_WINDOW + j] = k1d[i] * k1d[j];
            }
        }
        let (mut lo, mut hi) = (f64::INFINITY, f64::NEG_INFINITY);
        for &v in &r {
            lo = lo.min(v);
            hi = hi.max(v);
        }
        let l = hi - lo;
        let c1 = (SSIM_K1 * l).powi(2);
        let c2 = (SSIM_K2 * l).powi(2);
        let mut total = 0.0;
        let mut count = 0;
        for oi in 0..=(h - SSIM_WINDOW) {
            for oj in 0..=(w - SSIM_WINDOW) {
                let (mut mu, mut mr, mut suu, mut srr, mut sur) = (0.0, 0.0, 0.0, 0.0, 0.0);
                for i in 0..SSIM_WINDOW {
                    for j in 0..SSIM_WINDOW {
                        let kw = k2d[i * SSIM_WINDOW + j];
                        let uv = u[(oi + i) * w + (oj + j)];
                        let rv = r[(oi + i) * w + (oj + j)];
                        mu += kw * uv;
                        mr += kw * rv;
                        suu += kw * uv * uv;
                        srr += kw * rv * rv;
                        sur += kw * uv * rv;
                    }
                }
                let vu = suu - mu * mu;
                let vr = srr - mr * mr;
                let cov = sur - mu * mr;
                total += ((2.0 * mu * mr + c1) * (2.0 * cov + c2))
                    / ((mu * mu + mr * mr + c1) * (vu + vr + c2));
                count += 1;
            }
        }
        let expected = total / count as f64;
        let got = ssim_frame(&u, &r, h, w).unwrap();
        assert!((got - expected).abs() < 1e-10, "{got} vs {expected}");
    }

    #[test]
    fn ssim_rejects_small_frames() {
        let tiny = vec![0.0; 64];
        assert!(matches!(ssim_frame(&tiny, &tiny, 8, 8), Err(Error::Argument(_))));
    }

    #[test]
    fn extract_tac_single_pixel_and_mean() {
        let img = image_from(2, 2, vec![vec![1.0, 3.0, 0.0, 0.0], vec![2.0, 5.0, 0.0, 0.0]]);
        let mut mask = vec![false; 4];
        mask[0] = true;
        let tac = extract_tac(&img, &mask).unwrap();
        assert_eq!(tac.values, vec![1.0, 2.0]);
        mask[1] = true;
        let tac = extract_tac(&img, &mask).unwrap();
        assert_eq!(tac.values, vec![2.0, 3.5]);
        assert!(matches!(extract_tac(&img, &vec![false; 4]), Err(Error::Argument(_))));
    }

    #[test]
    fn line_profiles() {
        let frame = vec![1.0, 2.0, 3.0, 4.0, 5.0, 6.0];
        assert_eq!(line_profile(&frame, 2, 3, ProfileSpec::Row(1)).unwrap(), vec![4.0, 5.0, 6.0]);
        assert_eq!(line_profile(&frame, 2, 3, ProfileSpec::Col(2)).unwrap(), vec![3.0, 6.0]);
        assert!(line_profile(&frame, 2, 3, ProfileSpec::Row(2)).is_err());
    }

    #[test]
    fn patlak_exact_linear_data() {
        let (times, durs) = uniform_frames(60, 1.0);
        let cp_vals: Vec<f64> = times.iter().map(|&t| 10.0 * (-0.02 * t).exp() + 1.0).collect();
        let cp = Tac::new(cp_vals.clone(), times.clone(), durs.clone()).unwrap();
        let cum = cumulative_integral(&times, &cp_vals);
        let (ki_true, v_true) = (0.03, 0.5);
        let ct_vals: Vec<f64> = (0..60)
            .map(|i| (ki_true * cum[i] / cp_vals[i] + v_true) * cp_vals[i])
            .collect();
        let ct = Tac::new(ct_vals, times.clone(), durs.clone()).unwrap();
        let fit = patlak_ki(&ct, &cp, 50.0).unwrap();
        assert!((fit.ki - ki_true).abs() <= 1e-10);
        assert!((fit.v - v_true).abs() <= 1e-10);
        assert_eq!(fit.points_used, 10);
    }

    #[test]
    fn patlak_ct_equals_cp() {
        let (times, durs) = uniform_frames(60, 1.0);
        let cp_vals: Vec<f64> = times.iter().map(|&t| 5.0 + (t * 0.1).sin().abs()).collect();
        let cp = Tac::new(cp_vals.clone(), times.clone(), durs.clone()).unwrap();
        let ct = Tac::new(cp_vals, times, durs).unwrap();
        let fit = patlak_ki(&ct, &cp, 50.0).unwrap();
        assert!(fit.ki.abs() <= 1e-12);
        assert!((fit.v - 1.0).abs() <= 1e-12);
    }

    #[test]
    fn patlak_too_few_points_is_data_error() {
        let (times, durs) = uniform_frames(10, 1.0);
        let vals = vec![1.0; 10];
        let cp = Tac::new(vals.clone(), times.clone(), durs.clone()).unwrap();
        let ct = Tac::new(vals, times, durs).unwrap();
        assert!(matches!(patlak_ki(&ct, &cp, 9.2), Err(Error::Data(_))));
    }

    #[test]
    fn ki_map_constant_image_is_constant() {
        let (times, durs) = uniform_frames(60, 1.0);
        let cp_vals: Vec<f64> = times.iter().map(|&t| 10.0 * (-0.02 * t).exp() + 1.0).collect();
        let cp = Tac::new(cp_vals.clone(), times.clone(), durs.clone()).unwrap();
        let cum = cumulative_integral(&times, &cp_vals);
        let ct_vals: Vec<f64> =
            (0..60).map(|i| (0.02 * cum[i] / cp_vals[i] + 0.3) * cp_vals[i]).collect();

        let mut img = DynamicImage::zeros(4, 4, times.clone(), durs.clone());
        for t in 0..60 {
            // leave pixel 0 as masked background
            for p in 1..16 {
                img.frame_mut(t)[p] = ct_vals[t];
            }
        }
        let (ki, valid) = ki_map(&img, &cp, 50.0).unwrap();
        assert!(!valid[0]);
        for p in 1..16 {
            assert!(valid[p]);
            assert!((ki[p] - 0.02).abs() < 1e-10);
        }

        let region = vec![true; 16];
        let truth = vec![0.02; 16];
        let stats = error_stats(&ki, &valid, &truth, &region).unwrap();
        assert!(stats.mae < 1e-10);
        assert_eq!(stats.used, 15);
    }

    #[test]
    fn error_stats_examples() {
        let est = vec![1.0, 2.0, 3.0];
        let valid = vec![true; 3];
        let truth = vec![1.0, 2.0, 3.0];
        let region = vec![true; 3];
        let s = error_stats(&est, &valid, &truth, &region).unwrap();
        assert_eq!(s.mae, 0.0);
        assert_eq!(s.mre, 0.0);

        let est2: Vec<f64> = truth.iter().map(|v| v + 0.5).collect();
        let s = error_stats(&est2, &valid, &truth, &region).unwrap();
        assert!((s.mae - 0.5).abs() < 1e-15);

        // zero-truth pixels excluded from MRE and counted
        let truth3 = vec![0.0, 2.0, 4.0];
        let est3 = vec![0.5, 3.0, 5.0];
        let s = error_stats(&est3, &valid, &truth3, &region).unwrap();
        assert_eq!(s.zero_truth_excluded, 1);
        assert!((s.mre - (1.0 / 2.0 + 1.0 / 4.0) / 2.0).abs() < 1e-12);
    }
}
