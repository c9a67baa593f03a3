//! On-disk formats shared by the command-line tools.
//!
//! Tensor file (`.nraw`), all integers little-endian:
//!
//! ```text
//! magic    4 bytes  "NRAW"
//! version  u32      TENSOR_VERSION
//! dtype    u32      1 = f32
//! rank     u32
//! dims     rank × u64
//! payload  product(dims) × f32, row-major
//! ```
//!
//! Every tensor may carry a JSON [`Manifest`] sidecar with the same stem and a
//! `.json` extension.

use std::collections::BTreeMap;
use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

use ndarray::{Array3, ArrayD, IxDyn};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::noise::{NoiseParams, RawPatch};

pub const TENSOR_MAGIC: &[u8; 4] = b"NRAW";
pub const TENSOR_VERSION: u32 = 1;
pub const DTYPE_F32: u32 = 1;
pub const MANIFEST_VERSION: u32 = 1;

fn format_err(msg: impl Into<String>) -> Error {
    Error::Format(msg.into())
}

/// Little-endian cursor over a byte buffer.
pub(crate) struct Reader<'a> {
    buf: &'a [u8],
    pos: usize,
    what: &'static str,
}

impl<'a> Reader<'a> {
    pub(crate) fn new(buf: &'a [u8], what: &'static str) -> Self {
        Self { buf, pos: 0, what }
    }

    pub(crate) fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        let end = self.pos.checked_add(n).filter(|&e| e <= self.buf.len()).ok_or_else(|| {
            format_err(format!("{} truncated at byte {} (wanted {n} more)", self.what, self.pos))
        })?;
        let out = &self.buf[self.pos..end];
        self.pos = end;
        Ok(out)
    }

    pub(crate) fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().unwrap()))
    }

    pub(crate) fn u64(&mut self) -> Result<u64> {
        Ok(u64::from_le_bytes(self.take(8)?.try_into().unwrap()))
    }

    pub(crate) fn remaining(&self) -> usize {
        self.buf.len() - self.pos
    }
}

pub fn encode_tensor(tensor: &ArrayD<f64>) -> Vec<u8> {
    let mut out = Vec::with_capacity(20 + 8 * tensor.ndim() + 4 * tensor.len());
    out.extend_from_slice(TENSOR_MAGIC);
    out.extend_from_slice(&TENSOR_VERSION.to_le_bytes());
    out.extend_from_slice(&DTYPE_F32.to_le_bytes());
    out.extend_from_slice(&(tensor.ndim() as u32).to_le_bytes());
    for &d in tensor.shape() {
        out.extend_from_slice(&(d as u64).to_le_bytes());
    }
    for &v in tensor.iter() {
        out.extend_from_slice(&(v as f32).to_le_bytes());
    }
    out
}

pub fn decode_tensor(bytes: &[u8]) -> Result<ArrayD<f64>> {
    let mut r = Reader::new(bytes, "tensor file");
    if r.take(4)? != TENSOR_MAGIC {
        return Err(format_err("tensor file has wrong magic (expected NRAW)"));
    }
    let version = r.u32()?;
    if version != TENSOR_VERSION {
        return Err(format_err(format!("unsupported tensor format version {version}")));
    }
    let dtype = r.u32()?;
    if dtype != DTYPE_F32 {
        return Err(format_err(format!("unsupported tensor dtype code {dtype}")));
    }
    let rank = r.u32()? as usize;
    let mut dims = Vec::with_capacity(rank);
    for _ in 0..rank {
        dims.push(usize::try_from(r.u64()?).map_err(|_| format_err("tensor dimension overflows"))?);
    }
    let count = dims
        .iter()
        .try_fold(1usize, |acc, &d| acc.checked_mul(d))
        .ok_or_else(|| format_err("tensor size overflows"))?;
    if r.remaining() != count * 4 {
        return Err(format_err(format!(
            "tensor payload is {} bytes, expected {}",
            r.remaining(),
            count * 4
        )));
    }
    let payload = r.take(count * 4)?;
    let values: Vec<f64> = payload
        .chunks_exact(4)
        .map(|c| f32::from_le_bytes(c.try_into().unwrap()) as f64)
        .collect();
    ArrayD::from_shape_vec(IxDyn(&dims), values).map_err(|e| format_err(e.to_string()))
}

pub fn patch_to_tensor(patch: &RawPatch) -> ArrayD<f64> {
    patch.data().clone().into_dyn()
}

pub fn tensor_to_patch(tensor: ArrayD<f64>) -> Result<RawPatch> {
    let data: Array3<f64> = tensor
        .into_dimensionality()
        .map_err(|_| Error::Shape("expected a rank-3 [4][H][W] tensor".into()))?;
    RawPatch::new(data)
}

pub fn read_tensor(path: &Path) -> Result<ArrayD<f64>> {
    decode_tensor(&fs::read(path)?)
}

pub fn read_patch(path: &Path) -> Result<RawPatch> {
    tensor_to_patch(read_tensor(path)?)
}

pub fn encode_patch(patch: &RawPatch) -> Vec<u8> {
    encode_tensor(&patch_to_tensor(patch))
}

/// Write through a temporary sibling and rename into place.
pub fn write_atomic(path: &Path, bytes: &[u8]) -> Result<()> {
    let dir = path.parent().filter(|p| !p.as_os_str().is_empty()).unwrap_or(Path::new("."));
    let name = path
        .file_name()
        .ok_or_else(|| Error::Io(std::io::Error::new(std::io::ErrorKind::InvalidInput, "output path has no file name")))?;
    let tmp = dir.join(format!(".{}.tmp-{}", name.to_string_lossy(), std::process::id()));
    let result = (|| {
        let mut f = fs::File::create(&tmp)?;
        f.write_all(bytes)?;
        f.sync_all()?;
        fs::rename(&tmp, path)
    })();
    if result.is_err() {
        let _ = fs::remove_file(&tmp);
    }
    Ok(result?)
}

/// Sidecar path of a tensor file: same stem, `.json` extension.
pub fn sidecar_path(tensor_path: &Path) -> PathBuf {
    tensor_path.with_extension("json")
}

/// Where a synthetic file's randomness came from.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SeedProvenance {
    pub seed: u64,
    pub stream: u64,
    pub tool: String,
    pub tool_version: String,
}

impl SeedProvenance {
    pub fn new(seed: u64, stream: u64, tool: impl Into<String>) -> Self {
        Self { seed, stream, tool: tool.into(), tool_version: env!("CARGO_PKG_VERSION").into() }
    }
}

/// JSON sidecar describing one tensor file.
///
/// Unknown top-level keys are rejected; free-form additions go under
/// `extensions`. Readers refuse manifests newer than [`MANIFEST_VERSION`].
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Manifest {
    pub manifest_version: u32,
    pub camera_id: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub iso: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub params: Option<NoiseParams>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub provenance: Option<SeedProvenance>,
    #[serde(default, skip_serializing_if = "BTreeMap::is_empty")]
    pub extensions: BTreeMap<String, serde_json::Value>,
}

impl Manifest {
    pub fn new(camera_id: impl Into<String>) -> Self {
        Self {
            manifest_version: MANIFEST_VERSION,
            camera_id: camera_id.into(),
            iso: None,
            params: None,
            provenance: None,
            extensions: BTreeMap::new(),
        }
    }

    pub fn parse(text: &str) -> Result<Self> {
        let m: Manifest = serde_json::from_str(text)?;
        if m.manifest_version == 0 || m.manifest_version > MANIFEST_VERSION {
            return Err(format_err(format!("unsupported manifest version {}", m.manifest_version)));
        }
        if let Some(p) = &m.params {
            p.validate()?;
        }
        Ok(m)
    }

    pub fn to_json(&self) -> String {
        let mut s = serde_json::to_string_pretty(self).expect("manifest serializes");
        s.push('\n');
        s
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn rejects_corrupt_tensors() {
        let t = patch_to_tensor(&RawPatch::filled(2, 3, 1.5));
        let good = encode_tensor(&t);
        assert_eq!(good.len(), 4 + 4 + 4 + 4 + 3 * 8 + 24 * 4);
        let mut bad = good.clone();
        bad[0] = b'X';
        assert!(matches!(decode_tensor(&bad), Err(Error::Format(_))));
        assert!(decode_tensor(&good[..good.len() - 1]).is_err());
        let mut extra = good.clone();
        extra.push(0);
        assert!(decode_tensor(&extra).is_err());
        let mut dtype = good.clone();
        dtype[8] = 2;
        assert!(decode_tensor(&dtype).is_err());
    }

    #[test]
    fn tensor_must_be_a_patch() {
        let t = ArrayD::<f64>::zeros(IxDyn(&[3, 2, 2]));
        assert!(tensor_to_patch(decode_tensor(&encode_tensor(&t)).unwrap()).is_err());
        let t = ArrayD::<f64>::zeros(IxDyn(&[4, 2]));
        assert!(tensor_to_patch(t).is_err());
    }

    #[test]
    fn manifest_strictness() {
        let mut m = Manifest::new("cam0");
        m.iso = Some(800.0);
        m.params = Some(NoiseParams::new(1.0, 2.0, 0.1, 0.3).unwrap());
        m.provenance = Some(SeedProvenance::new(5, 7, "synthesize"));
        m.extensions.insert("flat_level".into(), serde_json::json!(100.0));
        let back = Manifest::parse(&m.to_json()).unwrap();
        assert_eq!(back, m);
        assert!(Manifest::parse(r#"{"manifest_version":1,"camera_id":"x","colour":1}"#).is_err());
        assert!(Manifest::parse(r#"{"manifest_version":2,"camera_id":"x"}"#).is_err());
        assert!(Manifest::parse(r#"{"manifest_version":1,"camera_id":"x","params":{"K":-1,"sigma":1,"mu_c":0,"sigma_r":1}}"#).is_err());
    }

    #[test]
    fn atomic_write_replaces() {
        let dir = std::env::temp_dir().join(format!("noisekit-io-{}", std::process::id()));
        fs::create_dir_all(&dir).unwrap();
        let p = dir.join("a.bin");
        write_atomic(&p, b"one").unwrap();
        write_atomic(&p, b"two").unwrap();
        assert_eq!(fs::read(&p).unwrap(), b"two");
        assert_eq!(fs::read_dir(&dir).unwrap().count(), 1);
        fs::remove_dir_all(&dir).unwrap();
    }

    proptest! {
        #[test]
        fn f32_payload_round_trips(values in proptest::collection::vec(-1e6f32..1e6, 4..=4 * 3 * 5)) {
            let n = values.len() / 4 * 4;
            let h = n / 4;
            let t = ArrayD::from_shape_vec(IxDyn(&[4, h, 1]), values[..n].iter().map(|&v| v as f64).collect()).unwrap();
            let bytes = encode_tensor(&t);
            let back = decode_tensor(&bytes).unwrap();
            prop_assert_eq!(&back, &t);
            prop_assert_eq!(encode_tensor(&back), bytes);
        }
    }
}
