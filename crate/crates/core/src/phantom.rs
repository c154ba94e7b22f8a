//! Ground-truth generation: procedural region maps, compartment-model
//! time-activity curves driven by the Feng arterial input function, and
//! TAC-filled dynamic images.
//!
//! All geometry is defined analytically on the unit square and sampled at
//! pixel centers, so phantoms are deterministic and resolution
//! independent.

use std::collections::BTreeMap;

use crate::error::{Error, Result};

/// Integer-labelled region map. Label 0 is background.
#[derive(Debug, Clone)]
pub struct Phantom {
    pub h: usize,
    pub w: usize,
    /// One label per pixel, row-major, length `h * w`.
    pub labels: Vec<u8>,
    pub region_names: BTreeMap<u8, String>,
}

impl Phantom {
    /// Labels actually present, excluding background.
    pub fn present_labels(&self) -> Vec<u8> {
        let mut seen = [false; 256];
        for &l in &self.labels {
            seen[l as usize] = true;
        }
        (1..=255u8).filter(|&l| seen[l as usize]).collect()
    }

    /// Boolean mask of one region.
    pub fn mask(&self, label: u8) -> Vec<bool> {
        self.labels.iter().map(|&l| l == label).collect()
    }

    /// Fraction of all pixels carrying `label`.
    pub fn region_fraction(&self, label: u8) -> f64 {
        let count = self.labels.iter().filter(|&&l| l == label).count();
        count as f64 / (self.h * self.w) as f64
    }

    fn validate(self) -> Result<Self> {
        if self.labels.len() != self.h * self.w {
            return Err(Error::data("phantom label map has wrong length"));
        }
        for l in self.present_labels() {
            if !self.region_names.contains_key(&l) {
                return Err(Error::data(format!("phantom label {l} has no region name")));
            }
        }
        Ok(self)
    }
}

/// Parameters of the three-exponential Feng arterial input function.
///
/// Rate constants are stored as positive decay rates; see
/// [`feng_input`] for the sign convention.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct FengParams {
    pub a1: f64,
    pub a2: f64,
    pub a3: f64,
    pub mu1: f64,
    pub mu2: f64,
    pub mu3: f64,
}

impl FengParams {
    /// The FDG parameter set used by the simulated brain studies.
    pub fn fdg_default() -> Self {
        FengParams {
            a1: 851.1225,
            a2: 21.8798,
            a3: 20.8113,
            mu1: 4.1339,
            mu2: 0.1191,
            mu3: 0.0104,
        }
    }
}

/// Arterial input activity at time `t` (minutes).
///
/// `Cp(t) = (A1 t - A2 - A3) e^{-mu1 t} + A2 e^{-mu2 t} + A3 e^{-mu3 t}`
/// with the rate constants taken as magnitudes so the curve decays;
/// `Cp(0) = 0` exactly by construction.
pub fn feng_input(t_min: f64, p: &FengParams) -> Result<f64> {
    if t_min < 0.0 {
        return Err(Error::argument(format!("feng_input: negative time {t_min}")));
    }
    let (m1, m2, m3) = (p.mu1.abs(), p.mu2.abs(), p.mu3.abs());
    let v = (p.a1 * t_min - p.a2 - p.a3) * (-m1 * t_min).exp()
        + p.a2 * (-m2 * t_min).exp()
        + p.a3 * (-m3 * t_min).exp();
    if !v.is_finite() {
        return Err(Error::numerical(format!("feng_input: non-finite value at t = {t_min}")));
    }
    Ok(v)
}

/// Two-tissue compartment model rates (1/min) and blood volume fraction.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CompartmentParams {
    pub k1: f64,
    pub k2: f64,
    pub k3: f64,
    pub k4: f64,
    pub vb: f64,
}

impl CompartmentParams {
    pub fn new(k1: f64, k2: f64, k3: f64, k4: f64, vb: f64) -> Result<Self> {
        if [k1, k2, k3, k4].iter().any(|&r| !(r >= 0.0) || !r.is_finite()) {
            return Err(Error::argument("compartment rates must be non-negative and finite"));
        }
        if !(0.0..=1.0).contains(&vb) {
            return Err(Error::argument(format!("blood volume fraction {vb} outside [0, 1]")));
        }
        Ok(CompartmentParams { k1, k2, k3, k4, vb })
    }

    pub fn gray_matter() -> Self {
        CompartmentParams::new(0.102, 0.130, 0.062, 0.007, 0.03).unwrap()
    }

    pub fn white_matter() -> Self {
        CompartmentParams::new(0.054, 0.109, 0.045, 0.006, 0.02).unwrap()
    }

    /// Parameter table for the six-region brain-with-tumor study.
    pub fn tumor_study_table() -> Vec<(&'static str, Self)> {
        vec![
            ("gray_matter", CompartmentParams::new(0.080, 0.140, 0.150, 0.013, 0.103).unwrap()),
            ("white_matter", CompartmentParams::new(0.050, 0.110, 0.050, 0.006, 0.026).unwrap()),
            ("caudate", CompartmentParams::new(0.120, 0.170, 0.190, 0.016, 0.101).unwrap()),
            ("putamen", CompartmentParams::new(0.150, 0.160, 0.170, 0.010, 0.092).unwrap()),
            ("thalamus", CompartmentParams::new(0.130, 0.160, 0.140, 0.012, 0.152).unwrap()),
            ("tumor", CompartmentParams::new(0.180, 0.100, 0.200, 0.015, 0.173).unwrap()),
        ]
    }

    /// Eigenrates of the two-tissue impulse response. `alpha1 <= alpha2`.
    pub fn eigenrates(&self) -> (f64, f64) {
        let s = self.k2 + self.k3 + self.k4;
        let disc = (s * s - 4.0 * self.k2 * self.k4).max(0.0).sqrt();
        ((s - disc) / 2.0, (s + disc) / 2.0)
    }

    /// Tissue impulse response of the two-tissue model,
    /// `h(t) = K1/(a2-a1) [(k3+k4-a1) e^{-a1 t} + (a2-k3-k4) e^{-a2 t}]`.
    pub fn impulse_response(&self, t_min: f64) -> f64 {
        let (a1, a2) = self.eigenrates();
        let gap = a2 - a1;
        if gap < 1e-12 {
            // Degenerate double eigenrate (includes the all-zero-rate case).
            let a = (a1 + a2) / 2.0;
            return self.k1 * (1.0 + (self.k3 + self.k4 - a) * t_min) * (-a * t_min).exp();
        }
        self.k1 / gap
            * ((self.k3 + self.k4 - a1) * (-a1 * t_min).exp()
                + (a2 - self.k3 - self.k4) * (-a2 * t_min).exp())
    }
}

/// One region's activity per frame.
#[derive(Debug, Clone, PartialEq)]
pub struct Tac {
    pub values: Vec<f64>,
    pub frame_times_min: Vec<f64>,
    pub frame_durations_min: Vec<f64>,
}

impl Tac {
    pub fn new(values: Vec<f64>, frame_times_min: Vec<f64>, frame_durations_min: Vec<f64>) -> Result<Self> {
        if values.len() != frame_times_min.len() || values.len() != frame_durations_min.len() {
            return Err(Error::argument("TAC arrays have mismatched lengths"));
        }
        if values.iter().any(|v| !v.is_finite() || *v < 0.0) {
            return Err(Error::data("TAC values must be finite and non-negative"));
        }
        Ok(Tac { values, frame_times_min, frame_durations_min })
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }
}

/// Frame midpoints and durations for `t` frames of equal length.
pub fn uniform_frames(t: usize, duration_min: f64) -> (Vec<f64>, Vec<f64>) {
    let times = (0..t).map(|i| (i as f64 + 0.5) * duration_min).collect();
    let durations = vec![duration_min; t];
    (times, durations)
}

/// The clinical-style frame schedule 15x15s, 16x60s, 9x300s.
pub fn clinical_frames() -> (Vec<f64>, Vec<f64>) {
    let mut durations = Vec::new();
    durations.extend(std::iter::repeat(0.25).take(15));
    durations.extend(std::iter::repeat(1.0).take(16));
    durations.extend(std::iter::repeat(5.0).take(9));
    let mut times = Vec::with_capacity(durations.len());
    let mut start = 0.0;
    for &d in &durations {
        times.push(start + d / 2.0);
        start += d;
    }
    (times, durations)
}

/// Step size of the fine convolution grid, in minutes. Chosen so the
/// trapezoid convolution stays within 1e-4 relative error of an exact
/// integration of the sharply peaked input function.
const CONV_DT_MIN: f64 = 0.005;

/// Tissue TAC of the two-tissue compartment model:
/// `C_T(t) = (1 - Vb) (h * Cp)(t) + Vb Cp(t)`, sampled at frame midpoints.
pub fn compartment_tac(
    p: &CompartmentParams,
    feng: &FengParams,
    frame_times_min: &[f64],
    frame_durations_min: &[f64],
) -> Result<Tac> {
    if frame_times_min.is_empty() || frame_times_min.len() != frame_durations_min.len() {
        return Err(Error::argument("compartment_tac: invalid frame arrays"));
    }
    if frame_durations_min.iter().any(|&d| d <= 0.0) {
        return Err(Error::argument("compartment_tac: frame durations must be positive"));
    }
    if frame_times_min.windows(2).any(|w| w[1] <= w[0]) {
        return Err(Error::argument("compartment_tac: frame times must be increasing"));
    }

    let mut values = Vec::with_capacity(frame_times_min.len());
    for &t in frame_times_min {
        if t < 0.0 {
            return Err(Error::argument("compartment_tac: negative frame time"));
        }
        // Composite trapezoid of h(tau) * Cp(t - tau) over [0, t]; both
        // factors are closed-form so no interpolation is needed.
        let conv = if t == 0.0 {
            0.0
        } else {
            let n = (t / CONV_DT_MIN).ceil() as usize;
            let dt = t / n as f64;
            let mut acc = 0.0;
            for i in 0..=n {
                let tau = i as f64 * dt;
                let f = p.impulse_response(tau) * feng_input(t - tau, feng)?;
                acc += if i == 0 || i == n { 0.5 * f } else { f };
            }
            acc * dt
        };
        let v = (1.0 - p.vb) * conv + p.vb * feng_input(t, feng)?;
        if !v.is_finite() {
            return Err(Error::numerical(format!("compartment_tac: non-finite value at t = {t}")));
        }
        values.push(v.max(0.0));
    }
    Tac::new(values, frame_times_min.to_vec(), frame_durations_min.to_vec())
}

#[inline]
fn in_ellipse(x: f64, y: f64, cx: f64, cy: f64, a: f64, b: f64) -> bool {
    ellipse_rho2(x, y, cx, cy, a, b) <= 1.0
}

#[inline]
fn ellipse_rho2(x: f64, y: f64, cx: f64, cy: f64, a: f64, b: f64) -> f64 {
    let dx = (x - cx) / a;
    let dy = (y - cy) / b;
    dx * dx + dy * dy
}

// Rat-abdomen geometry in unit coordinates. ROI4 is the transitional rim
// between the ROI2 organ and the surrounding ROI1 body.
const RAT_BODY: (f64, f64, f64, f64) = (0.5, 0.5, 0.42, 0.34);
const RAT_ROI2: (f64, f64, f64, f64) = (0.345, 0.455, 0.165, 0.12);
const RAT_RIM_RHO2: f64 = 1.9;
const RAT_ROI3: (f64, f64, f64) = (0.665, 0.625, 0.125);

/// Deterministic four-region rat-abdomen label map.
pub fn build_rat_phantom(h: usize, w: usize) -> Result<Phantom> {
    if h < 32 || w < 32 {
        return Err(Error::argument("rat phantom needs h, w >= 32"));
    }
    let mut labels = vec![0u8; h * w];
    for r in 0..h {
        for c in 0..w {
            let x = (c as f64 + 0.5) / w as f64;
            let y = (r as f64 + 0.5) / h as f64;
            let (bx, by, ba, bb) = RAT_BODY;
            if !in_ellipse(x, y, bx, by, ba, bb) {
                continue;
            }
            let (ox, oy, oa, ob) = RAT_ROI2;
            let rho2 = ellipse_rho2(x, y, ox, oy, oa, ob);
            let (hx, hy, hr) = RAT_ROI3;
            let label = if (x - hx) * (x - hx) + (y - hy) * (y - hy) <= hr * hr {
                3
            } else if rho2 <= 1.0 {
                2
            } else if rho2 <= RAT_RIM_RHO2 {
                4
            } else {
                1
            };
            labels[r * w + c] = label;
        }
    }
    let region_names = BTreeMap::from([
        (1u8, "ROI1".to_string()),
        (2u8, "ROI2".to_string()),
        (3u8, "ROI3".to_string()),
        (4u8, "ROI4".to_string()),
    ]);
    Phantom { h, w, labels, region_names }.validate()
}

/// Analytic pixel fraction of each rat region, used as an oracle by the
/// resolution-independence tests. Computed by dense supersampling of the
/// same analytic geometry.
pub fn rat_region_fractions_oracle() -> BTreeMap<u8, f64> {
    let n = 2048usize;
    let ph = build_rat_phantom(n, n).expect("oracle phantom");
    let mut out = BTreeMap::new();
    for l in 1..=4u8 {
        out.insert(l, ph.region_fraction(l));
    }
    out
}

/// Procedural brain stand-in: nested annuli plus ellipse insets.
/// Three regions (blood, gray, white) or six when `with_tumor`.
pub fn build_brain_phantom(h: usize, w: usize, with_tumor: bool) -> Result<Phantom> {
    if h < 64 || w < 64 {
        return Err(Error::argument("brain phantom needs h, w >= 64"));
    }
    let mut labels = vec![0u8; h * w];
    for r in 0..h {
        for c in 0..w {
            let x = (c as f64 + 0.5) / w as f64;
            let y = (r as f64 + 0.5) / h as f64;
            if !in_ellipse(x, y, 0.5, 0.5, 0.40, 0.46) {
                continue;
            }
            let inner = in_ellipse(x, y, 0.5, 0.5, 0.325, 0.385);
            let label = if !inner {
                1 // cortical gray-matter band
            } else if with_tumor {
                if (x - 0.665) * (x - 0.665) + (y - 0.625) * (y - 0.625) <= 0.07 * 0.07 {
                    6 // tumor
                } else if in_ellipse(x, y, 0.405, 0.37, 0.038, 0.085)
                    || in_ellipse(x, y, 0.595, 0.37, 0.038, 0.085)
                {
                    3 // caudate
                } else if in_ellipse(x, y, 0.345, 0.50, 0.045, 0.10)
                    || in_ellipse(x, y, 0.655, 0.50, 0.045, 0.10)
                {
                    4 // putamen
                } else if in_ellipse(x, y, 0.435, 0.60, 0.055, 0.08)
                    || in_ellipse(x, y, 0.565, 0.60, 0.055, 0.08)
                {
                    5 // thalamus
                } else {
                    2 // white matter
                }
            } else if in_ellipse(x, y, 0.44, 0.46, 0.045, 0.115)
                || in_ellipse(x, y, 0.56, 0.46, 0.045, 0.115)
                || in_ellipse(x, y, 0.5, 0.70, 0.05, 0.05)
            {
                3 // blood pool
            } else {
                2 // white matter
            };
            labels[r * w + c] = label;
        }
    }
    let region_names = if with_tumor {
        BTreeMap::from([
            (1u8, "gray_matter".to_string()),
            (2u8, "white_matter".to_string()),
            (3u8, "caudate".to_string()),
            (4u8, "putamen".to_string()),
            (5u8, "thalamus".to_string()),
            (6u8, "tumor".to_string()),
        ])
    } else {
        BTreeMap::from([
            (1u8, "gray_matter".to_string()),
            (2u8, "white_matter".to_string()),
            (3u8, "blood".to_string()),
        ])
    };
    Phantom { h, w, labels, region_names }.validate()
}

/// Non-negative spatiotemporal activity, the reconstruction target.
/// Frame-major layout: frame `t` occupies `data[t*h*w .. (t+1)*h*w]`.
#[derive(Debug, Clone, PartialEq)]
pub struct DynamicImage {
    pub h: usize,
    pub w: usize,
    pub t_frames: usize,
    pub data: Vec<f64>,
    pub frame_times_min: Vec<f64>,
    pub frame_durations_min: Vec<f64>,
}

impl DynamicImage {
    pub fn zeros(h: usize, w: usize, frame_times_min: Vec<f64>, frame_durations_min: Vec<f64>) -> Self {
        let t = frame_times_min.len();
        DynamicImage {
            h,
            w,
            t_frames: t,
            data: vec![0.0; h * w * t],
            frame_times_min,
            frame_durations_min,
        }
    }

    #[inline]
    pub fn pixels(&self) -> usize {
        self.h * self.w
    }

    #[inline]
    pub fn frame(&self, t: usize) -> &[f64] {
        let hw = self.pixels();
        &self.data[t * hw..(t + 1) * hw]
    }

    #[inline]
    pub fn frame_mut(&mut self, t: usize) -> &mut [f64] {
        let hw = self.pixels();
        &mut self.data[t * hw..(t + 1) * hw]
    }

    pub fn max_value(&self) -> f64 {
        self.data.iter().fold(0.0f64, |m, &v| m.max(v))
    }

    pub fn validate(&self) -> Result<()> {
        if self.data.len() != self.h * self.w * self.t_frames {
            return Err(Error::data("dynamic image data length mismatch"));
        }
        if self.data.iter().any(|v| !v.is_finite() || *v < 0.0) {
            return Err(Error::data("dynamic image must be finite and non-negative"));
        }
        Ok(())
    }

    /// Pixel time series at row-major pixel index `p`.
    pub fn pixel_series(&self, p: usize) -> Vec<f64> {
        let hw = self.pixels();
        (0..self.t_frames).map(|t| self.data[t * hw + p]).collect()
    }
}

/// Fills each labelled region with its TAC; background stays zero.
pub fn assemble_dynamic_image(ph: &Phantom, tacs: &BTreeMap<u8, Tac>) -> Result<DynamicImage> {
    let present = ph.present_labels();
    let mut frames_ref: Option<(&[f64], &[f64])> = None;
    for l in &present {
        let tac = tacs
            .get(l)
            .ok_or_else(|| Error::argument(format!("missing TAC for region {l}")))?;
        match frames_ref {
            None => frames_ref = Some((&tac.frame_times_min, &tac.frame_durations_min)),
            Some((t0, d0)) => {
                if t0 != tac.frame_times_min.as_slice() || d0 != tac.frame_durations_min.as_slice() {
                    return Err(Error::argument("TACs do not share a frame structure"));
                }
            }
        }
    }
    let (times, durations) = match frames_ref {
        Some((t, d)) => (t.to_vec(), d.to_vec()),
        None => return Err(Error::argument("phantom has no labelled regions")),
    };

    let hw = ph.h * ph.w;
    let t_frames = times.len();
    let mut data = vec![0.0; hw * t_frames];
    for (p, &l) in ph.labels.iter().enumerate() {
        if l == 0 {
            continue;
        }
        let tac = &tacs[&l];
        for t in 0..t_frames {
            data[t * hw + p] = tac.values[t];
        }
    }
    let img = DynamicImage {
        h: ph.h,
        w: ph.w,
        t_frames,
        data,
        frame_times_min: times,
        frame_durations_min: durations,
    };
    img.validate()?;
    Ok(img)
}

/// Gamma-variate curve normalized to peak `amp` at `t_peak`.
fn gamma_variate(t: f64, amp: f64, t_peak: f64, alpha: f64) -> f64 {
    if t <= 0.0 {
        return 0.0;
    }
    amp * (t / t_peak).powf(alpha) * (alpha * (1.0 - t / t_peak)).exp()
}

/// Saturating uptake curve `amp * (1 - e^{-t/tau})`.
fn saturating(t: f64, amp: f64, tau: f64) -> f64 {
    amp * (1.0 - (-t / tau).exp())
}

/// The four rat-abdomen TACs. The shapes are implementation ground truth:
/// two perfused organs with distinct peaks, a slowly accumulating hot
/// region, and a transitional rim that rises quickly and then stays flat.
pub fn rat_tacs(frame_times_min: &[f64], frame_durations_min: &[f64]) -> BTreeMap<u8, Tac> {
    let curve = |f: &dyn Fn(f64) -> f64| {
        let values = frame_times_min.iter().map(|&t| f(t).max(0.0)).collect();
        Tac::new(values, frame_times_min.to_vec(), frame_durations_min.to_vec()).unwrap()
    };
    BTreeMap::from([
        (1u8, curve(&|t| saturating(t, 1.9, 4.0) + gamma_variate(t, 0.38, 15.0, 2.0))),
        (2u8, curve(&|t| saturating(t, 3.1, 2.5) + gamma_variate(t, 0.8, 6.0, 2.0))),
        (3u8, curve(&|t| saturating(t, 13.0, 20.0) + gamma_variate(t, 1.7, 8.0, 2.0))),
        (4u8, curve(&|t| saturating(t, 2.7, 4.0))),
    ])
}

/// Standard rat study frame schedule: 90 one-minute frames.
pub fn rat_frame_schedule() -> (Vec<f64>, Vec<f64>) {
    uniform_frames(90, 1.0)
}

/// Brain TACs: the blood region carries the input function itself, the
/// tissue regions follow the two-tissue compartment model.
pub fn brain_tacs(
    with_tumor: bool,
    feng: &FengParams,
    frame_times_min: &[f64],
    frame_durations_min: &[f64],
) -> Result<BTreeMap<u8, Tac>> {
    let mut out = BTreeMap::new();
    if with_tumor {
        // label order matches build_brain_phantom: gray, white, caudate,
        // putamen, thalamus, tumor
        for (i, (_, params)) in CompartmentParams::tumor_study_table().iter().enumerate() {
            let label = (i + 1) as u8;
            out.insert(label, compartment_tac(params, feng, frame_times_min, frame_durations_min)?);
        }
    } else {
        out.insert(
            1u8,
            compartment_tac(&CompartmentParams::gray_matter(), feng, frame_times_min, frame_durations_min)?,
        );
        out.insert(
            2u8,
            compartment_tac(&CompartmentParams::white_matter(), feng, frame_times_min, frame_durations_min)?,
        );
        let blood: Vec<f64> = frame_times_min
            .iter()
            .map(|&t| feng_input(t, feng).map(|v| v.max(0.0)))
            .collect::<Result<_>>()?;
        out.insert(3u8, Tac::new(blood, frame_times_min.to_vec(), frame_durations_min.to_vec())?);
    }
    Ok(out)
}

/// Standard brain study frame schedule: 60 one-minute frames.
pub fn brain_frame_schedule() -> (Vec<f64>, Vec<f64>) {
    uniform_frames(60, 1.0)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn feng_is_zero_at_origin() {
        let p = FengParams::fdg_default();
        assert_eq!(feng_input(0.0, &p).unwrap(), 0.0);
    }

    #[test]
    fn feng_rejects_negative_time() {
        let p = FengParams::fdg_default();
        assert!(matches!(feng_input(-0.1, &p), Err(Error::Argument(_))));
    }

    #[test]
    fn feng_nonnegative_and_decaying() {
        let p = FengParams::fdg_default();
        let peak = (0..=9000)
            .map(|i| feng_input(i as f64 * 0.01, &p).unwrap())
            .fold(0.0f64, f64::max);
        for i in 0..=900 {
            let t = i as f64 * 0.1;
            let v = feng_input(t, &p).unwrap();
            assert!(v >= 0.0, "Cp({t}) = {v} < 0");
            assert!(v <= peak);
        }
        // value at 60 min sits far below the early peak
        let v60 = feng_input(60.0, &p).unwrap();
        assert!(v60 >= 0.0 && v60 < peak);
        // decays towards zero at long times
        assert!(feng_input(2000.0, &p).unwrap() < 1e-3);
    }

    #[test]
    fn feng_linear_in_amplitudes() {
        let p = FengParams::fdg_default();
        let doubled = FengParams { a1: 2.0 * p.a1, a2: 2.0 * p.a2, a3: 2.0 * p.a3, ..p };
        for i in 1..20 {
            let t = i as f64 * 3.1;
            let a = feng_input(t, &p).unwrap();
            let b = feng_input(t, &doubled).unwrap();
            assert!((b - 2.0 * a).abs() <= 1e-12 * a.abs().max(1.0));
        }
    }

    #[test]
    fn compartment_no_uptake_is_blood_fraction() {
        let feng = FengParams::fdg_default();
        let (times, durs) = uniform_frames(20, 1.0);
        let p = CompartmentParams::new(0.0, 0.2, 0.1, 0.01, 0.25).unwrap();
        let tac = compartment_tac(&p, &feng, &times, &durs).unwrap();
        for (v, &t) in tac.values.iter().zip(&times) {
            let cp = feng_input(t, &feng).unwrap();
            assert!((v - 0.25 * cp).abs() <= 1e-12 * cp.max(1.0));
        }
    }

    #[test]
    fn compartment_pure_blood_matches_input() {
        let feng = FengParams::fdg_default();
        let (times, durs) = uniform_frames(10, 1.0);
        let p = CompartmentParams::new(0.0, 0.1, 0.05, 0.005, 1.0).unwrap();
        let tac = compartment_tac(&p, &feng, &times, &durs).unwrap();
        for (v, &t) in tac.values.iter().zip(&times) {
            assert_eq!(*v, feng_input(t, &feng).unwrap().max(0.0));
        }
    }

    /// Fine-step RK4 integration of the two-tissue system, used as the
    /// independent oracle for the analytic-convolution implementation.
    fn ode_oracle(p: &CompartmentParams, feng: &FengParams, times: &[f64]) -> Vec<f64> {
        let t_end = *times.last().unwrap();
        let dt = 0.0005;
        let n = (t_end / dt).ceil() as usize;
        let cp = |t: f64| feng_input(t.max(0.0), feng).unwrap();
        let deriv = |c1: f64, c2: f64, t: f64| {
            let d1 = p.k1 * cp(t) - (p.k2 + p.k3) * c1 + p.k4 * c2;
            let d2 = p.k3 * c1 - p.k4 * c2;
            (d1, d2)
        };
        let (mut c1, mut c2) = (0.0, 0.0);
        let mut out = Vec::with_capacity(times.len());
        let mut next = 0usize;
        for i in 0..=n {
            let t = i as f64 * dt;
            while next < times.len() && times[next] <= t + 1e-12 {
                // sample with linear correction from the last step
                let ct = (1.0 - p.vb) * (c1 + c2) + p.vb * cp(times[next]);
                out.push(ct);
                next += 1;
            }
            if next == times.len() {
                break;
            }
            let (k1a, k1b) = deriv(c1, c2, t);
            let (k2a, k2b) = deriv(c1 + 0.5 * dt * k1a, c2 + 0.5 * dt * k1b, t + 0.5 * dt);
            let (k3a, k3b) = deriv(c1 + 0.5 * dt * k2a, c2 + 0.5 * dt * k2b, t + 0.5 * dt);
            let (k4a, k4b) = deriv(c1 + dt * k3a, c2 + dt * k3b, t + dt);
            c1 += dt / 6.0 * (k1a + 2.0 * k2a + 2.0 * k3a + k4a);
            c2 += dt / 6.0 * (k1b + 2.0 * k2b + 2.0 * k3b + k4b);
        }
        out
    }

    #[test]
    fn compartment_matches_ode_oracle_gray_matter() {
        let feng = FengParams::fdg_default();
        let (times, durs) = uniform_frames(60, 1.0);
        let p = CompartmentParams::gray_matter();
        let tac = compartment_tac(&p, &feng, &times, &durs).unwrap();
        let oracle = ode_oracle(&p, &feng, &times);
        let scale = oracle.iter().cloned().fold(0.0f64, f64::max);
        for (a, b) in tac.values.iter().zip(&oracle) {
            assert!((a - b).abs() <= 1e-4 * scale, "analytic {a} vs ode {b}");
        }
        // irreversible-ish trapping: late TAC keeps rising
        assert!(tac.values[59] > tac.values[40]);
    }

    #[test]
    fn compartment_matches_ode_oracle_random_params() {
        use rand::{Rng, SeedableRng};
        let mut rng = rand::rngs::StdRng::seed_from_u64(914);
        let feng = FengParams::fdg_default();
        let (times, durs) = uniform_frames(30, 1.5);
        for trial in 0..20 {
            let p = CompartmentParams::new(
                0.02 + 0.2 * rng.random::<f64>(),
                0.05 + 0.2 * rng.random::<f64>(),
                0.01 + 0.2 * rng.random::<f64>(),
                0.02 * rng.random::<f64>(),
                0.2 * rng.random::<f64>(),
            )
            .unwrap();
            let tac = compartment_tac(&p, &feng, &times, &durs).unwrap();
            let oracle = ode_oracle(&p, &feng, &times);
            let scale = oracle.iter().cloned().fold(0.0f64, f64::max);
            for (i, (a, b)) in tac.values.iter().zip(&oracle).enumerate() {
                assert!(
                    (a - b).abs() <= 1e-4 * scale,
                    "trial {trial} frame {i}: analytic {a} vs ode {b}"
                );
            }
        }
    }

    #[test]
    fn rat_phantom_has_four_regions() {
        let ph = build_rat_phantom(64, 64).unwrap();
        assert_eq!(ph.present_labels(), vec![1, 2, 3, 4]);
        assert_eq!(ph.labels.len(), 64 * 64);
    }

    #[test]
    fn rat_phantom_rejects_tiny_sizes() {
        assert!(matches!(build_rat_phantom(16, 64), Err(Error::Argument(_))));
    }

    #[test]
    fn rat_phantom_fractions_stable_across_resolution() {
        let p64 = build_rat_phantom(64, 64).unwrap();
        let p128 = build_rat_phantom(128, 128).unwrap();
        let oracle = rat_region_fractions_oracle();
        for l in 1..=4u8 {
            let f64_ = p64.region_fraction(l);
            let f128 = p128.region_fraction(l);
            assert!(
                (f128 - f64_).abs() <= 0.02 * f64_,
                "region {l}: {f64_} vs {f128} (oracle {})",
                oracle[&l]
            );
        }
    }

    #[test]
    fn rat_phantom_labels_partition() {
        let ph = build_rat_phantom(64, 64).unwrap();
        // every pixel has exactly one label by construction; the map is total
        assert_eq!(ph.labels.len(), 64 * 64);
        assert!(ph.labels.iter().all(|&l| l <= 4));
    }

    #[test]
    fn brain_phantom_region_counts() {
        let ph = build_brain_phantom(128, 128, false).unwrap();
        assert_eq!(ph.present_labels().len(), 3);
        let ph = build_brain_phantom(192, 192, true).unwrap();
        assert_eq!(ph.present_labels().len(), 6);
    }

    #[test]
    fn brain_phantom_deterministic() {
        let a = build_brain_phantom(128, 128, false).unwrap();
        let b = build_brain_phantom(128, 128, false).unwrap();
        assert_eq!(a.labels, b.labels);
    }

    #[test]
    fn assemble_constant_tacs_gives_support_mask() {
        let ph = build_rat_phantom(64, 64).unwrap();
        let (times, durs) = uniform_frames(3, 1.0);
        let tacs: BTreeMap<u8, Tac> = (1..=4u8)
            .map(|l| (l, Tac::new(vec![1.0; 3], times.clone(), durs.clone()).unwrap()))
            .collect();
        let img = assemble_dynamic_image(&ph, &tacs).unwrap();
        for t in 0..3 {
            for (p, &l) in ph.labels.iter().enumerate() {
                let expect = if l == 0 { 0.0 } else { 1.0 };
                assert_eq!(img.frame(t)[p], expect);
            }
        }
    }

    #[test]
    fn assemble_missing_tac_is_error() {
        let ph = build_rat_phantom(64, 64).unwrap();
        let (times, durs) = uniform_frames(3, 1.0);
        let tacs: BTreeMap<u8, Tac> = (1..=3u8)
            .map(|l| (l, Tac::new(vec![1.0; 3], times.clone(), durs.clone()).unwrap()))
            .collect();
        assert!(matches!(assemble_dynamic_image(&ph, &tacs), Err(Error::Argument(_))));
    }

    #[test]
    fn assembled_rat_image_has_low_mode3_rank() {
        use crate::linalg::Mat;
        use crate::tensorfn::numerical_rank;
        let ph = build_rat_phantom(64, 64).unwrap();
        let (times, durs) = rat_frame_schedule();
        let img = assemble_dynamic_image(&ph, &rat_tacs(&times, &durs)).unwrap();
        // mode-3 unfolding: frames as rows
        let hw = img.pixels();
        let m = Mat::from_fn(img.t_frames, hw, |t, p| img.data[t * hw + p]);
        let r = numerical_rank(&m, 1e-8).unwrap();
        assert!(r <= 4, "mode-3 rank {r} exceeds the number of distinct TACs");
    }

    #[test]
    fn single_region_image_is_scaled_mask() {
        let (times, durs) = uniform_frames(4, 1.0);
        let ph = Phantom {
            h: 64,
            w: 64,
            labels: build_rat_phantom(64, 64).unwrap().mask(2).iter().map(|&b| b as u8).collect(),
            region_names: BTreeMap::from([(1u8, "only".to_string())]),
        };
        let tac = Tac::new(vec![0.5, 1.5, 2.5, 0.25], times.clone(), durs.clone()).unwrap();
        let img =
            assemble_dynamic_image(&ph, &BTreeMap::from([(1u8, tac.clone())])).unwrap();
        for t in 0..4 {
            for (p, &l) in ph.labels.iter().enumerate() {
                let expect = if l == 1 { tac.values[t] } else { 0.0 };
                assert_eq!(img.frame(t)[p], expect);
            }
        }
    }

    #[test]
    fn clinical_schedule_shape() {
        let (times, durs) = clinical_frames();
        assert_eq!(times.len(), 40);
        assert_eq!(durs.iter().sum::<f64>(), 15.0 * 0.25 + 16.0 + 45.0);
        assert!(times.windows(2).all(|w| w[1] > w[0]));
    }
}
