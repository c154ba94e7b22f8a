//! The six pipeline commands: simulate, project, reconstruct, evaluate,
//! patlak, verify-theory. Each command reads its predecessor's files
//! from the output directory, writes its own outputs plus a manifest,
//! and never overwrites without --force.

use std::collections::BTreeMap;
use std::path::Path;

use dynpet::analysis;
use dynpet::phantom::{self, DynamicImage, Phantom, Tac};
use dynpet::projector::{self, RadonProjector, Sinogram};
use dynpet::recon;
use dynpet::tensorfn;

use crate::config::{ExperimentConfig, MethodSpec, PhantomKind};
use crate::error::{CliError, Result};
use crate::io;

fn build_phantom(cfg: &ExperimentConfig) -> Result<Phantom> {
    let s = &cfg.phantom;
    Ok(match s.kind {
        PhantomKind::Rat => phantom::build_rat_phantom(s.height, s.width)?,
        PhantomKind::Brain => phantom::build_brain_phantom(s.height, s.width, false)?,
        PhantomKind::BrainTumor => phantom::build_brain_phantom(s.height, s.width, true)?,
    })
}

fn ground_truth_tacs(cfg: &ExperimentConfig) -> Result<BTreeMap<u8, Tac>> {
    let (times, durs) = cfg.phantom.frame_times();
    Ok(match cfg.phantom.kind {
        PhantomKind::Rat => phantom::rat_tacs(&times, &durs),
        PhantomKind::Brain => {
            phantom::brain_tacs(false, &phantom::FengParams::fdg_default(), &times, &durs)?
        }
        PhantomKind::BrainTumor => {
            phantom::brain_tacs(true, &phantom::FengParams::fdg_default(), &times, &durs)?
        }
    })
}

/// Arterial input function sampled at the frame midpoints; only the
/// compartment-model phantoms have one.
fn input_function(cfg: &ExperimentConfig) -> Result<Tac> {
    match cfg.phantom.kind {
        PhantomKind::Rat => Err(CliError::data(
            "the rat phantom has no arterial input function; Patlak analysis needs a brain phantom",
        )),
        _ => {
            let (times, durs) = cfg.phantom.frame_times();
            let feng = phantom::FengParams::fdg_default();
            let values = times
                .iter()
                .map(|&t| phantom::feng_input(t, &feng).map(|v| v.max(0.0)))
                .collect::<dynpet::Result<Vec<f64>>>()?;
            Ok(Tac::new(values, times, durs)?)
        }
    }
}

fn build_projector(cfg: &ExperimentConfig) -> Result<RadonProjector> {
    Ok(projector::build_projector(
        cfg.phantom.height,
        cfg.phantom.width,
        cfg.projector.angles,
        cfg.projector.bins,
    )?)
}

fn write_image(dir: &Path, stem: &str, img: &DynamicImage) -> Result<()> {
    io::write_raw_f32(&dir.join(format!("{stem}.f32")), &img.data)?;
    let mut meta = io::Meta::new();
    meta.set("kind", "dynamic_image")
        .set("height", img.h)
        .set("width", img.w)
        .set("frames", img.t_frames)
        .set_list("frame_times_min", &img.frame_times_min)
        .set_list("frame_durations_min", &img.frame_durations_min);
    meta.write(&dir.join(format!("{stem}.meta")))?;
    Ok(())
}

fn read_image(dir: &Path, stem: &str) -> Result<DynamicImage> {
    let meta_path = dir.join(format!("{stem}.meta"));
    let meta = io::Meta::read(&meta_path)?;
    let h = io::meta_usize(&meta, "height", &meta_path)?;
    let w = io::meta_usize(&meta, "width", &meta_path)?;
    let t = io::meta_usize(&meta, "frames", &meta_path)?;
    let times = io::meta_list(&meta, "frame_times_min", &meta_path)?;
    let durs = io::meta_list(&meta, "frame_durations_min", &meta_path)?;
    let data = io::read_raw_f32(&dir.join(format!("{stem}.f32")))?;
    if data.len() != h * w * t || times.len() != t || durs.len() != t {
        return Err(CliError::data(format!("{stem}.f32 does not match its metadata")));
    }
    Ok(DynamicImage { h, w, t_frames: t, data, frame_times_min: times, frame_durations_min: durs })
}

pub fn cmd_simulate(cfg: &ExperimentConfig, out: &Path, force: bool) -> Result<()> {
    std::fs::create_dir_all(out)?;
    let outputs = ["truth.f32", "truth.meta", "labels.png", "labels.meta", "tacs.csv"];
    io::guard_overwrite(&outputs.iter().map(|f| out.join(f)).collect::<Vec<_>>(), force)?;

    let ph = build_phantom(cfg)?;
    let tacs = ground_truth_tacs(cfg)?;
    let truth = phantom::assemble_dynamic_image(&ph, &tacs)?;
    write_image(out, "truth", &truth)?;

    let labels_f64: Vec<f64> = ph.labels.iter().map(|&l| l as f64).collect();
    let (lo, hi) = io::write_png_gray8(&out.join("labels.png"), ph.w, ph.h, &labels_f64)?;
    let mut lm = io::Meta::new();
    lm.set("kind", "label_map").set("height", ph.h).set("width", ph.w);
    lm.set_f64("png_min", lo).set_f64("png_max", hi);
    for (id, name) in &ph.region_names {
        lm.set(&format!("region_{id}"), name);
    }
    lm.write(&out.join("labels.meta"))?;

    let mut header = vec!["frame".to_string(), "time_min".to_string()];
    for id in ph.region_names.keys() {
        header.push(format!("region_{id}"));
    }
    let header_refs: Vec<&str> = header.iter().map(|s| s.as_str()).collect();
    let mut csv = io::Csv::create(&out.join("tacs.csv"), &header_refs)?;
    let t_frames = truth.t_frames;
    for t in 0..t_frames {
        let mut row = vec![t.to_string(), io::fmt_g(truth.frame_times_min[t])];
        for id in ph.region_names.keys() {
            row.push(io::fmt_g(tacs[id].values[t]));
        }
        csv.row(&row)?;
    }

    io::write_manifest(out, "simulate", cfg.noise.seed, &cfg.raw.text)?;
    println!(
        "simulate: {} phantom {}x{} with {} regions, {} frames -> {}",
        cfg.phantom.kind.name(),
        ph.h,
        ph.w,
        ph.region_names.len(),
        t_frames,
        out.display()
    );
    Ok(())
}

pub fn cmd_project(cfg: &ExperimentConfig, out: &Path, force: bool) -> Result<()> {
    let outputs = ["noiseless.f32", "noiseless.meta", "randoms.f32", "counts.f32", "counts.meta"];
    io::guard_overwrite(&outputs.iter().map(|f| out.join(f)).collect::<Vec<_>>(), force)?;

    let truth = read_image(out, "truth")?;
    let proj = build_projector(cfg)?;
    if truth.pixels() != proj.pixels() {
        return Err(CliError::config("projector geometry does not match the simulated image"));
    }
    let pu = proj.project_image(&truth)?;
    let rays = proj.rays();
    let t_frames = truth.t_frames;
    let randoms = projector::simulate_randoms(&pu, rays, t_frames, cfg.noise.randoms_fraction)?;
    let expectation: Vec<f64> = pu.iter().zip(&randoms).map(|(a, b)| a + b).collect();
    let sino = projector::calibrate_and_poisson(
        &expectation,
        &randoms,
        proj.n_angles,
        proj.n_bins,
        t_frames,
        cfg.noise.snr_db,
        cfg.noise.seed,
        truth.frame_times_min.clone(),
        truth.frame_durations_min.clone(),
    )?;

    io::write_raw_f32(&out.join("noiseless.f32"), &expectation)?;
    io::write_raw_f32(&out.join("randoms.f32"), &randoms)?;
    io::write_raw_f32(&out.join("counts.f32"), &sino.counts)?;
    let mut meta = io::Meta::new();
    meta.set("kind", "sinogram")
        .set("angles", proj.n_angles)
        .set("bins", proj.n_bins)
        .set("frames", t_frames)
        .set_f64("scale", sino.scale)
        .set_f64("snr_db", cfg.noise.snr_db)
        .set("snr_definition", "power_ratio_10log10(|c*y|^2/|z-c*y|^2)")
        .set("seed", cfg.noise.seed)
        .set_f64("randoms_fraction", cfg.noise.randoms_fraction)
        .set_list("frame_times_min", &truth.frame_times_min)
        .set_list("frame_durations_min", &truth.frame_durations_min);
    meta.write(&out.join("counts.meta"))?;
    meta.write(&out.join("noiseless.meta"))?;

    let snr = projector::empirical_snr_db(&sino.counts, &expectation, sino.scale);
    io::write_manifest(out, "project", cfg.noise.seed, &cfg.raw.text)?;
    println!(
        "project: {} rays x {} frames at {} dB target (empirical {:.2} dB), scale {:.4e}",
        rays, t_frames, cfg.noise.snr_db, snr, sino.scale
    );
    Ok(())
}

fn read_sinogram(cfg: &ExperimentConfig, out: &Path) -> Result<Sinogram> {
    let meta_path = out.join("counts.meta");
    let meta = io::Meta::read(&meta_path)?;
    let angles = io::meta_usize(&meta, "angles", &meta_path)?;
    let bins = io::meta_usize(&meta, "bins", &meta_path)?;
    let frames = io::meta_usize(&meta, "frames", &meta_path)?;
    if angles != cfg.projector.angles || bins != cfg.projector.bins {
        return Err(CliError::config(format!(
            "config projector {}x{} does not match sinogram {}x{}",
            cfg.projector.angles, cfg.projector.bins, angles, bins
        )));
    }
    let scale = io::meta_f64(&meta, "scale", &meta_path)?;
    let counts = io::read_raw_f32(&out.join("counts.f32"))?;
    let randoms_activity = io::read_raw_f32(&out.join("randoms.f32"))?;
    if counts.len() != angles * bins * frames || randoms_activity.len() != counts.len() {
        return Err(CliError::data("sinogram files do not match their metadata"));
    }
    Ok(Sinogram {
        n_angles: angles,
        n_bins: bins,
        t_frames: frames,
        counts,
        randoms_scatters: randoms_activity.iter().map(|v| v * scale).collect(),
        scale,
        frame_times_min: io::meta_list(&meta, "frame_times_min", &meta_path)?,
        frame_durations_min: io::meta_list(&meta, "frame_durations_min", &meta_path)?,
    })
}

fn method_of(cfg: &ExperimentConfig) -> Result<&MethodSpec> {
    cfg.method
        .as_ref()
        .ok_or_else(|| CliError::config("this command needs a [method] section"))
}

fn write_loss_trace(path: &Path, trace: &recon::LossTrace) -> Result<()> {
    let mut csv = io::Csv::create(
        path,
        &["iteration", "data_term", "r1_term", "r2_term", "lr_spatial", "lr_temporal"],
    )?;
    for r in &trace.rows {
        csv.row(&[
            r.iteration.to_string(),
            io::fmt_g(r.data_term),
            io::fmt_g(r.r1_term),
            io::fmt_g(r.r2_term),
            io::fmt_g(r.lr_spatial),
            io::fmt_g(r.lr_temporal),
        ])?;
    }
    Ok(())
}

fn write_scalar_trace(path: &Path, name: &str, values: &[f64]) -> Result<()> {
    let mut csv = io::Csv::create(path, &["iteration", name])?;
    for (i, v) in values.iter().enumerate() {
        csv.row(&[i.to_string(), io::fmt_g(*v)])?;
    }
    Ok(())
}

/// Raw-float parameter checkpoint with a text manifest for INR models.
fn write_mlp_params(params: &mut Vec<f64>, net: &dynpet::neural::Mlp) {
    for (wm, b) in net.weights().iter().zip(net.biases()) {
        params.extend_from_slice(wm.as_slice());
        params.extend_from_slice(b);
    }
}

fn write_inr_checkpoint(dir: &Path, stem: &str, model: &recon::InrFactorModel) -> Result<()> {
    let mut params = Vec::new();
    for net in model.spatial_nets() {
        write_mlp_params(&mut params, net);
    }
    for net in model.temporal_nets() {
        write_mlp_params(&mut params, net);
    }
    params.extend_from_slice(model.spatial_encoding().projection().as_slice());
    params.extend_from_slice(model.temporal_encoding().projection().as_slice());
    let mut bytes = Vec::with_capacity(params.len() * 8);
    for v in &params {
        bytes.extend_from_slice(&v.to_le_bytes());
    }
    std::fs::write(dir.join(format!("{stem}.params")), bytes)?;

    let mut meta = io::Meta::new();
    meta.set("kind", "inr_checkpoint")
        .set("rank", model.k)
        .set("height", model.h)
        .set("width", model.w)
        .set("frames", model.t_frames)
        .set_f64("scale", model.scale());
    let dims: Vec<String> = std::iter::once(model.spatial_nets()[0].input_dim().to_string())
        .chain(model.spatial_nets()[0].weights().iter().map(|w| w.rows().to_string()))
        .collect();
    meta.set("spatial_dims", dims.join(" "));
    let dims: Vec<String> = std::iter::once(model.temporal_nets()[0].input_dim().to_string())
        .chain(model.temporal_nets()[0].weights().iter().map(|w| w.rows().to_string()))
        .collect();
    meta.set("temporal_dims", dims.join(" "));
    meta.set_f64("sigma1", model.spatial_encoding().sigma())
        .set_f64("sigma2", model.temporal_encoding().sigma())
        .set("d1", model.spatial_encoding().projection().rows())
        .set("d2", model.temporal_encoding().projection().rows());
    meta.write(&dir.join(format!("{stem}.manifest")))?;
    Ok(())
}

pub fn cmd_reconstruct(cfg: &ExperimentConfig, out: &Path, force: bool) -> Result<()> {
    let method = method_of(cfg)?;
    let name = method.name();
    let recon_stem = format!("recon_{name}");
    io::guard_overwrite(
        &[out.join(format!("{recon_stem}.f32")), out.join(format!("loss_{name}.csv"))],
        force,
    )?;

    let z = read_sinogram(cfg, out)?;
    let proj = build_projector(cfg)?;
    let image = match method {
        MethodSpec::Em { iterations } => {
            let img = recon::em_reconstruct(&z, &proj, *iterations)?;
            // per-frame final log-likelihood trace is bulky; record the
            // frame-0 history as the representative convergence curve
            let frame0 = recon::em_frame(&proj, z.frame(0), z.randoms_frame(0), *iterations)?;
            write_scalar_trace(&out.join(format!("loss_{name}.csv")), "loglik_frame0", &frame0.loglik)?;
            img
        }
        MethodSpec::EmNmf { rank, iterations } => {
            let r = recon::em_nmf_reconstruct(&z, &proj, *rank, *iterations, cfg.noise.seed)?;
            write_scalar_trace(&out.join(format!("loss_{name}.csv")), "kl_objective", &r.kl_history)?;
            let a = r.factors.a();
            let b = r.factors.b();
            let mut packed = Vec::with_capacity(a.as_slice().len() + b.as_slice().len());
            packed.extend_from_slice(a.as_slice());
            packed.extend_from_slice(b.as_slice());
            io::write_raw_f32(&out.join(format!("factors_{name}.f32")), &packed)?;
            let mut meta = io::Meta::new();
            meta.set("kind", "factor_pair")
                .set("pixels", a.rows())
                .set("rank", a.cols())
                .set("frames", b.cols())
                .set_f64("scale", z.scale);
            meta.write(&out.join(format!("factors_{name}.meta")))?;
            recon::factor_image(
                &r.factors,
                z.scale,
                proj.h,
                proj.w,
                z.frame_times_min.clone(),
                z.frame_durations_min.clone(),
            )
        }
        MethodSpec::MapTv(params) => {
            let r = recon::map_tv_reconstruct(&z, &proj, params)?;
            write_scalar_trace(&out.join(format!("loss_{name}.csv")), "objective", &r.objective)?;
            r.image
        }
        MethodSpec::InrB(ninrf_cfg) => {
            let r = recon::inr_b_reconstruct(&z, &proj, ninrf_cfg.clone())?;
            write_loss_trace(&out.join(format!("loss_{name}.csv")), &r.trace)?;
            let b = &r.model.b;
            io::write_raw_f32(&out.join(format!("tacs_matrix_{name}.f32")), b.as_slice())?;
            r.model.reconstruct_grid()
        }
        MethodSpec::Ninrf(ninrf_cfg) => {
            let r = recon::ninrf_train(&z, &proj, ninrf_cfg.clone())?;
            write_loss_trace(&out.join(format!("loss_{name}.csv")), &r.trace)?;
            write_inr_checkpoint(out, &format!("model_{name}"), &r.model)?;
            r.model.reconstruct_grid()
        }
    };
    write_image(out, &recon_stem, &image)?;
    io::write_manifest(out, &format!("reconstruct_{name}"), cfg.noise.seed, &cfg.raw.text)?;
    println!("reconstruct: method {name} -> {}", out.join(format!("{recon_stem}.f32")).display());
    Ok(())
}

pub fn cmd_evaluate(cfg: &ExperimentConfig, out: &Path, force: bool) -> Result<()> {
    let method = method_of(cfg)?;
    let name = method.name();
    io::guard_overwrite(&[out.join(format!("metrics_{name}.csv"))], force)?;

    let truth = read_image(out, "truth")?;
    let reconstruction = read_image(out, &format!("recon_{name}"))?;
    let report = analysis::quality_report(&reconstruction, &truth)?;

    let mut csv = io::Csv::create(
        &out.join(format!("metrics_{name}.csv")),
        &["frame", "psnr_db", "ssim"],
    )?;
    csv.row(&["all".into(), io::fmt_g(report.psnr_3d), io::fmt_g(report.ssim_3d)])?;
    for t in 0..truth.t_frames {
        csv.row(&[
            t.to_string(),
            io::fmt_g(report.per_frame_psnr[t]),
            io::fmt_g(report.per_frame_ssim[t]),
        ])?;
    }

    // previews: a handful of frames plus error maps
    let t_frames = truth.t_frames;
    let picks = [0, t_frames / 4, t_frames / 2, 3 * t_frames / 4, t_frames - 1];
    let mut pm = io::Meta::new();
    for &t in picks.iter() {
        let stem = format!("preview_{name}_frame{t:03}");
        let (lo, hi) =
            io::write_png_gray8(&out.join(format!("{stem}.png")), truth.w, truth.h, reconstruction.frame(t))?;
        pm.set_f64(&format!("{stem}_min"), lo).set_f64(&format!("{stem}_max"), hi);
        let err: Vec<f64> = reconstruction
            .frame(t)
            .iter()
            .zip(truth.frame(t))
            .map(|(a, b)| (a - b).abs())
            .collect();
        let stem = format!("error_{name}_frame{t:03}");
        let (lo, hi) = io::write_png_gray8(&out.join(format!("{stem}.png")), truth.w, truth.h, &err)?;
        pm.set_f64(&format!("{stem}_min"), lo).set_f64(&format!("{stem}_max"), hi);
    }
    pm.write(&out.join(format!("previews_{name}.meta")))?;

    // intensity profiles through the frame-10 image (or the middle one)
    let t_pick = 10.min(t_frames - 1);
    let row = truth.h / 2;
    let col = truth.w / 2;
    let mut csv = io::Csv::create(
        &out.join(format!("profiles_{name}.csv")),
        &["index", "row_truth", "row_recon", "col_truth", "col_recon"],
    )?;
    let rt = analysis::line_profile(truth.frame(t_pick), truth.h, truth.w, analysis::ProfileSpec::Row(row))?;
    let rr = analysis::line_profile(
        reconstruction.frame(t_pick),
        truth.h,
        truth.w,
        analysis::ProfileSpec::Row(row),
    )?;
    let ct = analysis::line_profile(truth.frame(t_pick), truth.h, truth.w, analysis::ProfileSpec::Col(col))?;
    let cr = analysis::line_profile(
        reconstruction.frame(t_pick),
        truth.h,
        truth.w,
        analysis::ProfileSpec::Col(col),
    )?;
    for i in 0..rt.len().max(ct.len()) {
        let pick = |v: &Vec<f64>| v.get(i).map(|x| io::fmt_g(*x)).unwrap_or_default();
        csv.row(&[i.to_string(), pick(&rt), pick(&rr), pick(&ct), pick(&cr)])?;
    }

    // per-region TACs of the reconstruction
    let ph = build_phantom(cfg)?;
    let mut header = vec!["frame".to_string(), "time_min".to_string()];
    for id in ph.region_names.keys() {
        header.push(format!("region_{id}"));
    }
    let header_refs: Vec<&str> = header.iter().map(|s| s.as_str()).collect();
    let mut csv = io::Csv::create(&out.join(format!("tacs_{name}.csv")), &header_refs)?;
    let region_tacs: Vec<Tac> = ph
        .region_names
        .keys()
        .map(|&id| analysis::extract_tac(&reconstruction, &ph.mask(id)))
        .collect::<dynpet::Result<_>>()?;
    for t in 0..t_frames {
        let mut row = vec![t.to_string(), io::fmt_g(truth.frame_times_min[t])];
        for tac in &region_tacs {
            row.push(io::fmt_g(tac.values[t]));
        }
        csv.row(&row)?;
    }

    io::write_manifest(out, &format!("evaluate_{name}"), cfg.noise.seed, &cfg.raw.text)?;
    println!(
        "evaluate: method {name}: PSNR {:.2} dB, SSIM {:.4}",
        report.psnr_3d, report.ssim_3d
    );
    Ok(())
}

pub fn cmd_patlak(cfg: &ExperimentConfig, out: &Path, force: bool, t_start_min: f64) -> Result<()> {
    let method = method_of(cfg)?;
    let name = method.name();
    io::guard_overwrite(&[out.join(format!("ki_{name}.csv"))], force)?;

    let truth = read_image(out, "truth")?;
    let reconstruction = read_image(out, &format!("recon_{name}"))?;
    let cp = input_function(cfg)?;
    let ph = build_phantom(cfg)?;

    // per-region Ki from mean TACs, truth vs reconstruction
    let mut csv = io::Csv::create(
        &out.join(format!("ki_{name}.csv")),
        &["region", "ki_true", "ki_recon", "abs_error", "rel_error", "map_mae", "map_mre"],
    )?;
    let (ki_recon_map, valid) = analysis::ki_map(&reconstruction, &cp, t_start_min)?;
    let mut ki_true_map = vec![0.0; truth.pixels()];
    for (&id, name_str) in &ph.region_names {
        if name_str == "blood" {
            continue; // the input function itself; Patlak does not apply
        }
        let mask = ph.mask(id);
        let tac_true = analysis::extract_tac(&truth, &mask)?;
        let tac_recon = analysis::extract_tac(&reconstruction, &mask)?;
        let fit_true = analysis::patlak_ki(&tac_true, &cp, t_start_min)?;
        let fit_recon = analysis::patlak_ki(&tac_recon, &cp, t_start_min)?;
        for (p, &inside) in mask.iter().enumerate() {
            if inside {
                ki_true_map[p] = fit_true.ki;
            }
        }
        let stats = analysis::error_stats(
            &ki_recon_map,
            &valid,
            &ki_true_map,
            &mask,
        )?;
        let abs = (fit_recon.ki - fit_true.ki).abs();
        csv.row(&[
            name_str.clone(),
            io::fmt_g(fit_true.ki),
            io::fmt_g(fit_recon.ki),
            io::fmt_g(abs),
            io::fmt_g(abs / fit_true.ki.abs().max(1e-300)),
            io::fmt_g(stats.mae),
            io::fmt_g(stats.mre),
        ])?;
    }

    io::write_raw_f32(&out.join(format!("ki_map_{name}.f32")), &ki_recon_map)?;
    let (lo, hi) =
        io::write_png_gray16(&out.join(format!("ki_map_{name}.png")), truth.w, truth.h, &ki_recon_map)?;
    let valid_f64: Vec<f64> = valid.iter().map(|&b| if b { 1.0 } else { 0.0 }).collect();
    io::write_png_gray8(&out.join(format!("ki_valid_{name}.png")), truth.w, truth.h, &valid_f64)?;
    let mut meta = io::Meta::new();
    meta.set("kind", "ki_map")
        .set("height", truth.h)
        .set("width", truth.w)
        .set_f64("t_start_min", t_start_min)
        .set_f64("png_min", lo)
        .set_f64("png_max", hi);
    meta.write(&out.join(format!("ki_map_{name}.meta")))?;

    io::write_manifest(out, &format!("patlak_{name}"), cfg.noise.seed, &cfg.raw.text)?;
    println!("patlak: method {name}, fit window t >= {t_start_min} min -> ki_{name}.csv");
    Ok(())
}

pub fn cmd_verify_theory(cfg: &ExperimentConfig, out: &Path, force: bool) -> Result<()> {
    std::fs::create_dir_all(out)?;
    let report_path = out.join("theory_report.txt");
    io::guard_overwrite(&[report_path.clone()], force)?;
    let seed = cfg.noise.seed;

    let mut text = String::new();
    text.push_str("== separable rank sweep (mode-3 rank must stay <= K) ==\n");
    for k in 1..=4 {
        let report = tensorfn::verify_separable_rank(k, (8, 8, 16), seed + k as u64)?;
        text.push_str(&report.to_string());
        text.push_str(if report.mode3_bounded_by_k() { "bound holds\n" } else { "BOUND VIOLATED\n" });
    }

    text.push_str("\n== conic membership ==\n");
    use rand::{Rng, SeedableRng};
    let mut rng = rand::rngs::StdRng::seed_from_u64(seed);
    let mut all_ok = true;
    for case in 0..10 {
        let dim = 6;
        let generators: Vec<Vec<f64>> =
            (0..4).map(|_| (0..dim).map(|_| rng.random::<f64>()).collect()).collect();
        let coef: Vec<f64> = (0..4).map(|_| rng.random::<f64>() * 2.0).collect();
        let mut inside = vec![0.0; dim];
        for (g, &c) in generators.iter().zip(&coef) {
            for (x, v) in inside.iter_mut().zip(g) {
                *x += c * v;
            }
        }
        let member = tensorfn::conic_membership(&inside, &generators, 1e-7)?;
        let outside: Vec<f64> = generators[0].iter().map(|v| -v).collect();
        let nonmember = tensorfn::conic_membership(&outside, &generators, 1e-7)?;
        all_ok &= member && !nonmember;
        text.push_str(&format!(
            "case {case}: constructed member -> {member}, negated generator -> {nonmember}\n"
        ));
    }
    text.push_str(if all_ok { "conic membership suite passed\n" } else { "conic membership suite FAILED\n" });

    std::fs::write(&report_path, &text)?;
    io::write_manifest(out, "verify-theory", seed, &cfg.raw.text)?;
    println!("verify-theory -> {}", report_path.display());
    Ok(())
}
