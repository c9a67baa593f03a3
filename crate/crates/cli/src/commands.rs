use std::collections::BTreeMap;
use std::fs;
use std::path::Path;

use rayon::prelude::*;
use serde::Serialize;

use noisekit::calibration::{fit_iso_gain, fit_log_linear_detailed, sample_params, sample_params_at_iso, CameraModel, ParamSet};
use noisekit::estimator::{procedural_pool, procedural_scene, train, virtual_camera_bank, Estimator, EstimatorCheckpoint, EstimatorConfig, SceneKind};
use noisekit::io::{read_patch, write_atomic, Manifest, SeedProvenance};
use noisekit::metrics::score_kl;
use noisekit::oracle::{estimate_params_oracle, FlatLevel};
use noisekit::rng::{derive_seed, stream_rng};
use noisekit::{synthesize_noise, Error, NoiseParams, RawPatch, Result};

use crate::files::*;
use crate::{Command, DatasetMode, Preset};

const SCENE_TAG: u64 = 0x5ce7e;

pub fn run(command: Command) -> Result<()> {
    match command {
        Command::Synthesize { clean, params, seed, out, clamp, white_level, camera_id, iso } => {
            require(&[&clean])?;
            let clean_patch = read_patch(&clean)?;
            let p = parse_params_arg(&params)?;
            let (mut noisy, _) = synthesize_noise(&clean_patch, &p, &mut stream_rng(seed, 0))?;
            if clamp {
                noisy = noisy.clamped(white_level);
            }
            let mut m = Manifest::new(camera_id);
            m.iso = iso;
            m.params = Some(p);
            m.provenance = Some(SeedProvenance::new(seed, 0, "noisekit synthesize"));
            if clamp {
                m.extensions.insert("clamp_white_level".into(), white_level.into());
            }
            write_tensor_with_manifest(&out, &noisy, &m)
        }
        Command::Calibrate { estimates, out } => calibrate(&estimates, &out),
        Command::Estimate { input, checkpoint, oracle, flat_series, dark, out, append, image_id } => {
            let (p, id) = if oracle {
                let flat = flat_series.expect("required by clap");
                let dark = dark.expect("required by clap");
                (estimate_oracle(&flat, &dark)?, image_id.unwrap_or_else(|| "oracle".into()))
            } else {
                let input = input.expect("required by clap");
                let ck = checkpoint
                    .ok_or_else(|| Error::Config("--checkpoint is required unless --oracle is given".into()))?;
                require(&[&input, &ck])?;
                let est = Estimator::new(EstimatorCheckpoint::load(&ck)?)?;
                let p = est.estimate(&read_patch(&input)?)?;
                let id = image_id
                    .unwrap_or_else(|| input.file_stem().map(|s| s.to_string_lossy().into_owned()).unwrap_or_default());
                (p, id)
            };
            if let Some(csv_path) = append {
                append_estimate(&csv_path, EstimateRow::new(id, &p))?;
            }
            write_atomic(&out, &to_json_bytes(&p)?)
        }
        Command::SampleParams { camera, count, seed, iso, out } => {
            let cam = read_camera(&camera)?;
            let rows = (0..count)
                .into_par_iter()
                .map(|i| {
                    let mut rng = stream_rng(seed, i as u64);
                    let p = match iso {
                        Some(iso) => sample_params_at_iso(&cam, iso, &mut rng)?,
                        None => sample_params(&cam, &mut rng)?,
                    };
                    Ok(EstimateRow::new(format!("sample_{i:05}"), &p))
                })
                .collect::<Result<Vec<_>>>()?;
            let bytes = estimates_csv(&rows)?;
            match out {
                Some(path) => write_atomic(&path, &bytes),
                None => {
                    use std::io::Write;
                    std::io::stdout().write_all(&bytes)?;
                    Ok(())
                }
            }
        }
        Command::GenDataset { mode, out, seed, height, width, white_level, camera, count, iso, params, levels, frames } => {
            if height == 0 || width == 0 || height % 2 != 0 || width % 2 != 0 {
                return Err(Error::Shape(format!("dataset patches need even positive dimensions, got {height}x{width}")));
            }
            match mode {
                DatasetMode::Pairs => {
                    let camera = camera.ok_or_else(|| Error::Config("pairs mode needs --camera".into()))?;
                    let cam = read_camera(&camera)?;
                    let id = camera.file_stem().map(|s| s.to_string_lossy().into_owned()).unwrap_or_default();
                    write_tree(&out, |root| gen_pairs(root, &cam, &id, count, seed, [height, width], white_level, iso))
                }
                DatasetMode::Calibration => {
                    let params = params.ok_or_else(|| Error::Config("calibration mode needs --params".into()))?;
                    let p = parse_params_arg(&params)?;
                    write_tree(&out, |root| gen_calibration(root, &p, &levels, frames, seed, [height, width]))
                }
            }
        }
        Command::EvalKl { reference, candidate, reference_clean, candidate_clean, bins, out } => {
            let r = noise_values(&reference, reference_clean.as_deref())?;
            let c = noise_values(&candidate, candidate_clean.as_deref())?;
            let report = score_kl(&r, &c, bins)?;
            let bytes = to_json_bytes(&report)?;
            if let Some(path) = out {
                write_atomic(&path, &bytes)?;
            }
            print!("{}", String::from_utf8_lossy(&bytes));
            Ok(())
        }
        Command::Train { config, preset, camera, out, log } => {
            let cfg = training_config(config.as_deref(), preset)?;
            let bank = if camera.is_empty() {
                virtual_camera_bank()
            } else {
                camera.iter().map(|p| read_camera(p)).collect::<Result<Vec<_>>>()?
            };
            let pool = procedural_pool(
                cfg.scene_pool_size,
                cfg.patch_height,
                cfg.patch_width,
                cfg.white_level,
                derive_seed(cfg.seed, SCENE_TAG),
            );
            let (ck, epochs) = train(&cfg, &pool, &bank)?;
            if let Some(path) = log {
                let mut w = csv::WriterBuilder::new().has_headers(false).from_writer(Vec::new());
                w.write_record(["stage", "epoch", "learning_rate", "total", "contrastive", "regression"])
                    .map_err(csv_error)?;
                for e in &epochs {
                    w.serialize((e.stage, e.epoch, e.learning_rate, e.loss.total, e.loss.contrastive, e.loss.regression))
                        .map_err(csv_error)?;
                }
                write_atomic(&path, &w.into_inner().map_err(|e| Error::Io(e.into_error()))?)?;
            }
            ck.save(&out)
        }
    }
}

#[derive(Serialize)]
struct LineSummary {
    slope: f64,
    intercept: f64,
    residual_std: f64,
    slope_se: f64,
}

fn calibrate(estimates: &Path, out: &Path) -> Result<()> {
    let rows = read_estimates(estimates)?;
    let mut set = ParamSet::default();
    for r in &rows {
        set.push(r.image_id.clone(), r.params()?);
    }
    let fit = fit_log_linear_detailed(&set)?;
    let mut model: CameraModel = fit.model;
    let iso_pairs: Vec<(f64, f64)> = rows.iter().filter_map(|r| r.iso.map(|iso| (iso, r.k))).collect();
    if !iso_pairs.is_empty() {
        if iso_pairs.len() != rows.len() {
            return Err(Error::Format("the iso column must be filled on every row or none".into()));
        }
        model = model.with_alpha(fit_iso_gain(&iso_pairs)?);
    }
    write_atomic(out, &to_json_bytes(&model)?)?;
    let summary: BTreeMap<&str, LineSummary> = [("read", fit.read), ("row", fit.row)]
        .into_iter()
        .map(|(k, l)| {
            (k, LineSummary { slope: l.slope, intercept: l.intercept, residual_std: l.residual_std, slope_se: l.slope_se })
        })
        .collect();
    println!("images: {}", rows.len());
    println!(
        "ln sigma   = {:.6} ln K {:+.6}  (residual std {:.6})",
        summary["read"].slope, summary["read"].intercept, summary["read"].residual_std
    );
    println!(
        "ln sigma_r = {:.6} ln K {:+.6}  (residual std {:.6})",
        summary["row"].slope, summary["row"].intercept, summary["row"].residual_std
    );
    println!("mu_c = {:.6}, K in [{}, {}]", model.mu_c_model, model.k_min, model.k_max);
    Ok(())
}

fn estimate_oracle(flat: &Path, dark: &Path) -> Result<NoiseParams> {
    let dirs = level_dirs(flat)?;
    if dirs.is_empty() {
        return Err(Error::InsufficientData(format!("no level_<value> directories in {}", flat.display())));
    }
    let series = dirs
        .into_iter()
        .map(|(level, dir)| Ok(FlatLevel { level, frames: read_patches(&dir)? }))
        .collect::<Result<Vec<_>>>()?;
    estimate_params_oracle(&series, &read_patches(dark)?)
}

fn append_estimate(path: &Path, row: EstimateRow) -> Result<()> {
    let mut rows = if path.exists() { read_estimates(path)? } else { Vec::new() };
    rows.push(row);
    write_atomic(path, &estimates_csv(&rows)?)
}

#[allow(clippy::too_many_arguments)]
fn gen_pairs(
    root: &Path,
    cam: &CameraModel,
    camera_id: &str,
    count: usize,
    seed: u64,
    [h, w]: [usize; 2],
    white_level: f64,
    iso: Option<f64>,
) -> Result<()> {
    fs::create_dir(root.join("clean"))?;
    fs::create_dir(root.join("noisy"))?;
    (0..count).into_par_iter().try_for_each(|i| {
        let mut rng = stream_rng(seed, i as u64);
        let clean = procedural_scene(SceneKind::ALL[i % SceneKind::ALL.len()], h, w, white_level, &mut rng);
        let p = match iso {
            Some(iso) => sample_params_at_iso(cam, iso, &mut rng)?,
            None => sample_params(cam, &mut rng)?,
        };
        let (noisy, _) = synthesize_noise(&clean, &p, &mut rng)?;
        let name = format!("{i:05}.{TENSOR_EXT}");
        let prov = SeedProvenance::new(seed, i as u64, "noisekit gen-dataset");
        let mut m = Manifest::new(camera_id);
        m.iso = iso;
        m.provenance = Some(prov.clone());
        write_tensor_with_manifest(&root.join("clean").join(&name), &clean, &m)?;
        m.params = Some(p);
        write_tensor_with_manifest(&root.join("noisy").join(&name), &noisy, &m)
    })
}

fn gen_calibration(root: &Path, p: &NoiseParams, levels: &[f64], frames: usize, seed: u64, [h, w]: [usize; 2]) -> Result<()> {
    if levels.is_empty() || frames == 0 {
        return Err(Error::Config("calibration mode needs at least one level and one frame".into()));
    }
    if let Some(bad) = levels.iter().find(|l| !(l.is_finite() && **l >= 0.0)) {
        return Err(Error::Domain(format!("flat levels must be finite and non-negative, got {bad}")));
    }
    let dark_dir = root.join("dark");
    fs::create_dir(&dark_dir)?;
    let mut jobs = Vec::new();
    for (li, &level) in levels.iter().enumerate() {
        let dir = root.join("flat").join(level_dir_name(level));
        fs::create_dir_all(&dir)?;
        for f in 0..frames {
            jobs.push((dir.join(format!("frame_{f:04}.{TENSOR_EXT}")), level, (li * frames + f) as u64));
        }
    }
    for f in 0..frames {
        jobs.push((dark_dir.join(format!("frame_{f:04}.{TENSOR_EXT}")), 0.0, (levels.len() * frames + f) as u64));
    }
    jobs.into_par_iter().try_for_each(|(path, level, stream)| {
        let clean = RawPatch::filled(h, w, level);
        let (noisy, _) = synthesize_noise(&clean, p, &mut stream_rng(seed, stream))?;
        let mut m = Manifest::new("calibration");
        m.params = Some(*p);
        m.provenance = Some(SeedProvenance::new(seed, stream, "noisekit gen-dataset"));
        m.extensions.insert("clean_level".into(), level.into());
        write_tensor_with_manifest(&path, &noisy, &m)
    })
}

fn noise_values(path: &Path, clean: Option<&Path>) -> Result<Vec<f64>> {
    require(&[path])?;
    if let Some(c) = clean {
        require(&[c])?;
    }
    let noisy = read_patch(path)?;
    match clean {
        None => Ok(noisy.data().iter().copied().collect()),
        Some(c) => {
            let clean = read_patch(c)?;
            if clean.shape() != noisy.shape() {
                return Err(Error::Shape(format!(
                    "{} is {:?} but its clean reference is {:?}",
                    path.display(),
                    noisy.shape(),
                    clean.shape()
                )));
            }
            Ok(noisy.data().iter().zip(clean.data().iter()).map(|(n, c)| n - c).collect())
        }
    }
}

fn training_config(path: Option<&Path>, preset: Preset) -> Result<EstimatorConfig> {
    let base = match preset {
        Preset::Default => EstimatorConfig::default(),
        Preset::Toy => EstimatorConfig::toy(),
    };
    let mut value = serde_json::to_value(base)?;
    if let Some(path) = path {
        let overrides: serde_json::Value = read_json(path)?;
        let serde_json::Value::Object(fields) = overrides else {
            return Err(Error::Config(format!("{}: training config must be a JSON object", path.display())));
        };
        for (k, v) in fields {
            value[k] = v;
        }
    }
    let cfg: EstimatorConfig = serde_json::from_value(value).map_err(|e| Error::Config(format!("training config: {e}")))?;
    cfg.validate()?;
    Ok(cfg)
}
