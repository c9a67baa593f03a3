//! Filesystem and tabular helpers shared by the commands.

use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use noisekit::calibration::CameraModel;
use noisekit::io::{encode_patch, read_patch, sidecar_path, write_atomic, Manifest};
use noisekit::{Error, NoiseParams, RawPatch, Result};

pub const ESTIMATE_HEADER: [&str; 5] = ["image_id", "K", "sigma", "mu_c", "sigma_r"];
pub const TENSOR_EXT: &str = "nraw";

#[derive(Debug, Serialize, Deserialize)]
pub struct EstimateRow {
    pub image_id: String,
    #[serde(rename = "K")]
    pub k: f64,
    pub sigma: f64,
    pub mu_c: f64,
    pub sigma_r: f64,
    #[serde(default, skip_serializing)]
    pub iso: Option<f64>,
}

impl EstimateRow {
    pub fn new(image_id: impl Into<String>, p: &NoiseParams) -> Self {
        Self { image_id: image_id.into(), k: p.k, sigma: p.sigma, mu_c: p.mu_c, sigma_r: p.sigma_r, iso: None }
    }

    pub fn params(&self) -> Result<NoiseParams> {
        NoiseParams::new(self.k, self.sigma, self.mu_c, self.sigma_r)
            .map_err(|e| Error::Format(format!("row {}: {e}", self.image_id)))
    }
}

/// Fail early, naming the path, when an input does not exist.
pub fn require(paths: &[&Path]) -> Result<()> {
    for p in paths {
        if !p.exists() {
            return Err(Error::Io(std::io::Error::new(
                std::io::ErrorKind::NotFound,
                format!("{}: no such file or directory", p.display()),
            )));
        }
    }
    Ok(())
}

pub fn csv_error(e: csv::Error) -> Error {
    if e.is_io_error() {
        match e.into_kind() {
            csv::ErrorKind::Io(io) => Error::Io(io),
            _ => unreachable!(),
        }
    } else {
        Error::Format(format!("CSV: {e}"))
    }
}

pub fn read_estimates(path: &Path) -> Result<Vec<EstimateRow>> {
    require(&[path])?;
    let mut rdr = csv::Reader::from_path(path).map_err(csv_error)?;
    let header: Vec<String> = rdr.headers().map_err(csv_error)?.iter().map(str::to_string).collect();
    let ok = header.len() >= 5
        && header.iter().zip(ESTIMATE_HEADER).all(|(a, b)| a == b)
        && (header.len() == 5 || (header.len() == 6 && header[5] == "iso"));
    if !ok {
        return Err(Error::Format(format!(
            "{}: expected header {} (optionally followed by iso), got {}",
            path.display(),
            ESTIMATE_HEADER.join(","),
            header.join(",")
        )));
    }
    rdr.deserialize().map(|r| r.map_err(csv_error)).collect()
}

pub fn estimates_csv(rows: &[EstimateRow]) -> Result<Vec<u8>> {
    let mut w = csv::WriterBuilder::new().has_headers(false).from_writer(Vec::new());
    w.write_record(ESTIMATE_HEADER).map_err(csv_error)?;
    for r in rows {
        w.serialize(r).map_err(csv_error)?;
    }
    w.into_inner().map_err(|e| Error::Io(e.into_error()))
}

pub fn read_json<T: for<'de> Deserialize<'de>>(path: &Path) -> Result<T> {
    require(&[path])?;
    let text = fs::read_to_string(path)?;
    serde_json::from_str(&text).map_err(|e| Error::Format(format!("{}: {e}", path.display())))
}

pub fn to_json_bytes<T: Serialize>(value: &T) -> Result<Vec<u8>> {
    let mut bytes = serde_json::to_vec_pretty(value)?;
    bytes.push(b'\n');
    Ok(bytes)
}

pub fn read_camera(path: &Path) -> Result<CameraModel> {
    let cam: CameraModel = read_json(path)?;
    cam.validate()?;
    Ok(cam)
}

/// A `NoiseParams` argument: inline JSON when it starts with `{`, else a path.
pub fn parse_params_arg(arg: &str) -> Result<NoiseParams> {
    let p: NoiseParams = if arg.trim_start().starts_with('{') {
        serde_json::from_str(arg).map_err(|e| Error::Format(format!("inline params: {e}")))?
    } else {
        read_json(Path::new(arg))?
    };
    p.validate()?;
    Ok(p)
}

pub fn write_tensor_with_manifest(path: &Path, patch: &RawPatch, manifest: &Manifest) -> Result<()> {
    write_atomic(path, &encode_patch(patch))?;
    write_atomic(&sidecar_path(path), manifest.to_json().as_bytes())
}

/// Tensor files directly inside `dir`, sorted by name.
pub fn tensor_files(dir: &Path) -> Result<Vec<PathBuf>> {
    require(&[dir])?;
    let mut files: Vec<PathBuf> = fs::read_dir(dir)?
        .map(|e| e.map(|e| e.path()))
        .collect::<std::io::Result<Vec<_>>>()?
        .into_iter()
        .filter(|p| p.is_file() && p.extension().is_some_and(|x| x == TENSOR_EXT))
        .collect();
    files.sort();
    Ok(files)
}

pub fn read_patches(dir: &Path) -> Result<Vec<RawPatch>> {
    let files = tensor_files(dir)?;
    if files.is_empty() {
        return Err(Error::InsufficientData(format!("no .{TENSOR_EXT} files in {}", dir.display())));
    }
    files.iter().map(|f| read_patch(f)).collect()
}

pub fn level_dir_name(level: f64) -> String {
    format!("level_{level}")
}

/// `level_<value>` subdirectories of `dir`, sorted by value.
pub fn level_dirs(dir: &Path) -> Result<Vec<(f64, PathBuf)>> {
    require(&[dir])?;
    let mut out = Vec::new();
    for entry in fs::read_dir(dir)? {
        let path = entry?.path();
        let Some(name) = path.file_name().and_then(|n| n.to_str()) else { continue };
        let Some(value) = name.strip_prefix("level_") else { continue };
        if !path.is_dir() {
            continue;
        }
        let level: f64 = value
            .parse()
            .map_err(|_| Error::Format(format!("cannot parse flat level from directory name {name}")))?;
        out.push((level, path));
    }
    out.sort_by(|a, b| a.0.total_cmp(&b.0));
    Ok(out)
}

/// Build a directory tree next to `out`, then move it into place in one rename.
pub fn write_tree(out: &Path, build: impl FnOnce(&Path) -> Result<()>) -> Result<()> {
    if out.exists() {
        return Err(Error::Config(format!("output {} already exists", out.display())));
    }
    let parent = out.parent().filter(|p| !p.as_os_str().is_empty()).unwrap_or(Path::new("."));
    let name = out.file_name().ok_or_else(|| Error::Config("output path has no file name".into()))?;
    let tmp = parent.join(format!(".{}.tmp-{}", name.to_string_lossy(), std::process::id()));
    if tmp.exists() {
        fs::remove_dir_all(&tmp)?;
    }
    fs::create_dir_all(&tmp)?;
    match build(&tmp) {
        Ok(()) => Ok(fs::rename(&tmp, out)?),
        Err(e) => {
            let _ = fs::remove_dir_all(&tmp);
            Err(e)
        }
    }
}
