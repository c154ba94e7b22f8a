// temporary tuning harness, deleted before finishing
use dynpet::analysis::psnr;
use dynpet::phantom::{assemble_dynamic_image, build_rat_phantom, rat_frame_schedule, rat_tacs};
use dynpet::projector::{build_projector, calibrate_and_poisson, simulate_randoms};
use dynpet::recon::{em_nmf_reconstruct, em_reconstruct, factor_image, map_tv_reconstruct, MapTvParams};

#[test]
#[ignore]
fn tune_baselines() {
    let ph = build_rat_phantom(64, 64).unwrap();
    let (times, durs) = rat_frame_schedule();
    let tacs = rat_tacs(&times, &durs);
    let truth = assemble_dynamic_image(&ph, &tacs).unwrap();
    let proj = build_projector(64, 64, 16, 95).unwrap();
    let pu = proj.project_image(&truth).unwrap();
    let randoms = simulate_randoms(&pu, proj.rays(), truth.t_frames, 0.0).unwrap();
    let seed: u64 = std::env::var("SEED").map(|v| v.parse().unwrap()).unwrap_or(7);
    let z = calibrate_and_poisson(
        &pu,
        &randoms,
        16,
        95,
        truth.t_frames,
        20.0,
        seed,
        times.clone(),
        durs.clone(),
    )
    .unwrap();
    eprintln!("total counts {:.3e}, peak {:.2}", z.counts.iter().sum::<f64>(), truth.max_value());
    let em = em_reconstruct(&z, &proj, 100).unwrap();
    eprintln!("  EM 100: PSNR {:.2}", psnr(&em, &truth).unwrap());
    let r = em_nmf_reconstruct(&z, &proj, 5, 2000, seed).unwrap();
    let img = factor_image(&r.factors, z.scale, 64, 64, times.clone(), durs.clone());
    eprintln!("  EM-NMF K=5 2000: PSNR {:.2}", psnr(&img, &truth).unwrap());
    if std::env::var("SKIP_TV").is_ok() { return; }
    for (l1, l2, outer, cg) in [
        (0.05f64, 30.0f64, 400usize, 30usize),
    ] {
        let params = MapTvParams { lambda_tv1: l1, lambda_tv2: l2, outer_iters: outer, cg_iters: cg, ..Default::default() };
        let r = map_tv_reconstruct(&z, &proj, &params).unwrap();
        eprintln!("  MAP-TV l1={l1} l2={l2} it={outer} cg={cg}: PSNR {:.2} (obj {:.6e} -> {:.6e})",
            psnr(&r.image, &truth).unwrap(), r.objective[10], r.objective.last().unwrap());
    }
}
