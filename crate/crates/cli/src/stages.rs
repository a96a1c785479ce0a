use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use holotomo::forward::ProjectionDataset;
use holotomo::io::{read_dataset, read_fields, read_volume, write_dataset, write_fields, write_history_csv, write_real};
use holotomo::metrics::{dynamic_range, rel_error, rel_error_stack, ssim};
use holotomo::pipeline::{delta_volume, reconstruct_conventional, reconstruct_proposed, simulate as run_simulation, Reconstruction};
use holotomo::solver::{bin, History};
use ndarray::Array3;

use crate::config::RunConfig;
use crate::CliError;

const HOLO: &str = "recon-holo";
const CONVENTIONAL: &str = "recon-conventional";
const TOMO: &str = "recon-tomo";

fn stage_dir(cfg: &RunConfig, stage: &str) -> Result<PathBuf, CliError> {
    let dir = cfg.output_dir().join(stage);
    fs::create_dir_all(&dir).map_err(holotomo::HoloError::from)?;
    Ok(dir)
}

pub fn simulate(cfg: &RunConfig) -> Result<(), CliError> {
    let sim = run_simulation(&cfg.phantom_params(), &cfg.scan_params())?;
    let dir = stage_dir(cfg, "simulate")?;
    write_dataset(&dir, &sim.dataset)?;
    let voxel = sim.volume.voxel_size;
    write_real(&dir.join("truth_delta.hfr"), sim.volume.delta.clone().into_dyn(), voxel)?;
    write_real(&dir.join("truth_beta.hfr"), sim.volume.beta.clone().into_dyn(), voxel)?;
    write_fields(&dir.join("truth_psi.hfr"), &sim.psi)?;
    write_fields(&dir.join("truth_probe.hfr"), std::slice::from_ref(&sim.probe))?;
    println!(
        "simulated {} angles × {} planes on a {}² grid into {}",
        sim.dataset.n_angles(),
        sim.dataset.n_planes(),
        sim.dataset.n(),
        dir.display()
    );
    Ok(())
}

/// Block-average detector frames by the configured binning.
fn load_dataset(cfg: &RunConfig) -> Result<ProjectionDataset, CliError> {
    let ds = read_dataset(&cfg.dataset_dir())?;
    let b = cfg.geometry.binning;
    if b == 1 {
        return Ok(ds);
    }
    let frames = ds
        .frames
        .iter()
        .map(|row| row.iter().map(|f| bin(f, b)).collect::<holotomo::Result<Vec<_>>>())
        .collect::<holotomo::Result<Vec<_>>>()?;
    Ok(ProjectionDataset {
        frames,
        reference: bin(&ds.reference, b)?,
        shifts: ds.shifts.scaled(1.0 / b as f64),
        detector_pixel: ds.detector_pixel * b as f64,
        ..ds
    })
}

fn write_histories(dir: &Path, histories: &[History]) -> Result<(), CliError> {
    if let [h] = histories {
        write_history_csv(&dir.join("history.csv"), h)?;
    } else {
        for (i, h) in histories.iter().enumerate() {
            write_history_csv(&dir.join(format!("history_{i:03}.csv")), h)?;
        }
    }
    Ok(())
}

fn write_reconstruction(dir: &Path, rec: &Reconstruction) -> Result<(), CliError> {
    write_fields(&dir.join("psi.hfr"), &rec.psi)?;
    write_fields(&dir.join("probe.hfr"), &rec.probes)?;
    write_histories(dir, &rec.histories)
}

fn report(stage: &str, rec: &Reconstruction) {
    let (first, last) = rec.histories.iter().fold((0.0, 0.0), |(a, b), h| {
        (a + h.records.first().map_or(0.0, |r| r.objective), b + h.last_objective().unwrap_or(0.0))
    });
    println!("{stage}: objective {first:.6e} -> {last:.6e} over {} chunk(s)", rec.histories.len());
}

pub fn recon_holo(cfg: &RunConfig) -> Result<(), CliError> {
    let ds = load_dataset(cfg)?;
    let rec = reconstruct_proposed(&ds, &cfg.proposed_params())?;
    write_reconstruction(&stage_dir(cfg, HOLO)?, &rec)?;
    report(HOLO, &rec);
    Ok(())
}

pub fn recon_conventional(cfg: &RunConfig) -> Result<(), CliError> {
    let ds = load_dataset(cfg)?;
    let rec = reconstruct_conventional(&ds, &cfg.conventional_params())?;
    write_reconstruction(&stage_dir(cfg, CONVENTIONAL)?, &rec)?;
    report(CONVENTIONAL, &rec);
    Ok(())
}

fn volume_name(stage: &str) -> String {
    format!("delta_{}.hfr", stage.trim_start_matches("recon-"))
}

pub fn recon_tomo(cfg: &RunConfig) -> Result<(), CliError> {
    let ds = read_dataset(&cfg.dataset_dir())?;
    let lambda = ds.geometry.wavelength();
    let inputs: Vec<(&str, PathBuf)> = [HOLO, CONVENTIONAL]
        .into_iter()
        .map(|s| (s, cfg.output_dir().join(s).join("psi.hfr")))
        .filter(|(_, p)| p.exists())
        .collect();
    if inputs.is_empty() {
        return Err(CliError::new(
            "missing-input",
            format!("no phase-retrieval output under {}; run recon-holo or recon-conventional first", cfg.output_dir().display()),
        ));
    }
    let dir = stage_dir(cfg, TOMO)?;
    for (stage, path) in inputs {
        let psi = read_fields(&path, lambda)?;
        let voxel = psi[0].pixel_size();
        let vol = delta_volume(&psi, &ds.angles, lambda, cfg.tomo.iterations)?;
        write_real(&dir.join(volume_name(stage)), vol.into_dyn(), voxel)?;
        println!("{TOMO}: {} from {}", volume_name(stage), path.display());
    }
    Ok(())
}

/// `factor³` block mean.
fn bin_volume(v: &Array3<f64>, factor: usize) -> Array3<f64> {
    let n = v.dim().0 / factor;
    let w = 1.0 / (factor * factor * factor) as f64;
    let mut out = Array3::zeros((n, n, n));
    for ((z, y, x), a) in v.indexed_iter() {
        out[[z / factor, y / factor, x / factor]] += a * w;
    }
    out
}

pub fn metrics(cfg: &RunConfig) -> Result<(), CliError> {
    let data_dir = cfg.dataset_dir();
    let (truth, _) = read_volume(&data_dir.join("truth_delta.hfr"))?;
    let tomo_dir = cfg.output_dir().join(TOMO);
    let mut rows: Vec<(String, f64)> = Vec::new();
    for (stage, key) in [(HOLO, "proposed"), (CONVENTIONAL, "conventional")] {
        let path = tomo_dir.join(volume_name(stage));
        if !path.exists() {
            continue;
        }
        let (vol, _) = read_volume(&path)?;
        let gt = match truth.dim().0 / vol.dim().0 {
            1 => truth.clone(),
            f if f > 1 && vol.dim().0 * f == truth.dim().0 => bin_volume(&truth, f),
            _ => return Err(CliError::new("shape-mismatch", format!("{} does not match the ground truth grid", path.display()))),
        };
        rows.push((format!("ssim_{key}"), ssim(&vol, &gt, dynamic_range(&gt))?));
        rows.push((format!("delta_rel_error_{key}"), rel_error(&vol, &gt)?));
        let psi_path = cfg.output_dir().join(stage).join("psi.hfr");
        let truth_psi = data_dir.join("truth_psi.hfr");
        if psi_path.exists() && truth_psi.exists() {
            let a = read_fields(&psi_path, 1.0)?;
            let b = read_fields(&truth_psi, 1.0)?;
            if a.first().map(|f| f.n()) == b.first().map(|f| f.n()) {
                rows.push((format!("psi_rel_error_{key}"), rel_error_stack(&a, &b)?));
            }
        }
    }
    if rows.is_empty() {
        return Err(CliError::new(
            "missing-input",
            format!("no volumes under {}; run recon-tomo first", tomo_dir.display()),
        ));
    }
    let dir = stage_dir(cfg, "metrics")?;
    let mut csv = String::from("metric,value\n");
    let mut summary = String::new();
    for (k, v) in &rows {
        writeln!(csv, "{k},{v:e}").unwrap();
        writeln!(summary, "{k:<28} {v:.4}").unwrap();
    }
    fs::write(dir.join("metrics.csv"), csv).map_err(holotomo::HoloError::from)?;
    fs::write(dir.join("summary.txt"), &summary).map_err(holotomo::HoloError::from)?;
    print!("{summary}");
    Ok(())
}
