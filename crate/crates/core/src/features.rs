//! One-level orthonormal 2-D Haar transform of packed CFA patches.
//!
//! For a 2×2 block `[[p, q], [r, s]]` of one CFA plane:
//!
//! ```text
//! LL = (p + q + r + s) / 2
//! LH = (p − q + r − s) / 2   horizontal difference
//! HL = (p + q − r − s) / 2   vertical difference (carries row banding)
//! HH = (p − q − r + s) / 2
//! ```
//!
//! Output planes are channel-major: plane `4·c + band` with band order
//! `(LL, LH, HL, HH)`, so a `4×H×W` patch becomes `16×(H/2)×(W/2)`.

use ndarray::{Array3, ArrayView3};

use crate::error::{shape, Result};
use crate::noise::{RawPatch, CHANNELS};

pub const BANDS: usize = 4;
pub const PLANES: usize = CHANNELS * BANDS;

/// The 16 subband planes of a transformed patch.
#[derive(Debug, Clone, PartialEq)]
pub struct Subbands {
    data: Array3<f64>,
}

impl Subbands {
    pub fn new(data: Array3<f64>) -> Result<Self> {
        let (c, h, w) = data.dim();
        if c != PLANES || h == 0 || w == 0 {
            return Err(shape(format!("subbands need {PLANES} non-empty planes, got {c}x{h}x{w}")));
        }
        Ok(Self { data })
    }

    pub fn data(&self) -> &Array3<f64> {
        &self.data
    }

    pub fn into_data(self) -> Array3<f64> {
        self.data
    }
}

/// Forward transform of an arbitrary `4×H×W` view (H, W even).
pub fn haar_forward(input: ArrayView3<f64>) -> Result<Array3<f64>> {
    let (c, h, w) = input.dim();
    if h % 2 != 0 || w % 2 != 0 {
        return Err(shape(format!("Haar transform needs even dimensions, got {h}x{w}")));
    }
    let (hh, hw) = (h / 2, w / 2);
    let mut out = Array3::zeros((c * BANDS, hh, hw));
    for ch in 0..c {
        for y in 0..hh {
            for x in 0..hw {
                let p = input[[ch, 2 * y, 2 * x]];
                let q = input[[ch, 2 * y, 2 * x + 1]];
                let r = input[[ch, 2 * y + 1, 2 * x]];
                let s = input[[ch, 2 * y + 1, 2 * x + 1]];
                out[[ch * BANDS, y, x]] = 0.5 * (p + q + r + s);
                out[[ch * BANDS + 1, y, x]] = 0.5 * (p - q + r - s);
                out[[ch * BANDS + 2, y, x]] = 0.5 * (p + q - r - s);
                out[[ch * BANDS + 3, y, x]] = 0.5 * (p - q - r + s);
            }
        }
    }
    Ok(out)
}

pub fn haar_dwt2(patch: &RawPatch) -> Result<Subbands> {
    haar_forward(patch.data().view()).map(|data| Subbands { data })
}

pub fn haar_idwt2(subbands: &Subbands) -> Result<RawPatch> {
    let (c, hh, hw) = subbands.data.dim();
    if c != PLANES {
        return Err(shape(format!("inverse Haar needs {PLANES} planes, got {c}")));
    }
    let d = &subbands.data;
    let mut out = Array3::zeros((CHANNELS, 2 * hh, 2 * hw));
    for ch in 0..CHANNELS {
        for y in 0..hh {
            for x in 0..hw {
                let ll = d[[ch * BANDS, y, x]];
                let lh = d[[ch * BANDS + 1, y, x]];
                let hl = d[[ch * BANDS + 2, y, x]];
                let hhb = d[[ch * BANDS + 3, y, x]];
                out[[ch, 2 * y, 2 * x]] = 0.5 * (ll + lh + hl + hhb);
                out[[ch, 2 * y, 2 * x + 1]] = 0.5 * (ll - lh + hl - hhb);
                out[[ch, 2 * y + 1, 2 * x]] = 0.5 * (ll + lh - hl - hhb);
                out[[ch, 2 * y + 1, 2 * x + 1]] = 0.5 * (ll - lh - hl + hhb);
            }
        }
    }
    RawPatch::new(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::stream_rng;
    use proptest::prelude::*;
    use rand::Rng;

    fn random_patch(seed: u64, h: usize, w: usize) -> RawPatch {
        let mut rng = stream_rng(seed, 0);
        RawPatch::new(Array3::from_shape_simple_fn((4, h, w), || rng.random_range(-50.0..200.0))).unwrap()
    }

    #[test]
    fn constant_patch() {
        let sb = haar_dwt2(&RawPatch::filled(4, 6, 3.0)).unwrap();
        for ch in 0..4 {
            assert!(sb.data().index_axis(ndarray::Axis(0), ch * 4).iter().all(|&v| v == 6.0));
            for band in 1..4 {
                assert!(sb.data().index_axis(ndarray::Axis(0), ch * 4 + band).iter().all(|&v| v == 0.0));
            }
        }
    }

    #[test]
    fn worked_block() {
        let block = ndarray::array![[1.0, 2.0], [3.0, 4.0]];
        let mut data = Array3::zeros((4, 2, 2));
        for ch in 0..4 {
            data.index_axis_mut(ndarray::Axis(0), ch).assign(&block);
        }
        let sb = haar_dwt2(&RawPatch::new(data).unwrap()).unwrap();
        for ch in 0..4 {
            let bands: Vec<f64> = (0..4).map(|b| sb.data()[[ch * 4 + b, 0, 0]]).collect();
            assert_eq!(bands, vec![5.0, -1.0, -2.0, 0.0]);
        }
    }

    #[test]
    fn odd_dims_rejected() {
        assert!(haar_dwt2(&RawPatch::zeros(3, 4)).is_err());
        assert!(haar_dwt2(&RawPatch::zeros(4, 5)).is_err());
        assert!(haar_idwt2(&Subbands { data: Array3::zeros((8, 2, 2)) }).is_err());
        assert!(Subbands::new(Array3::zeros((15, 2, 2))).is_err());
    }

    #[test]
    fn zero_subbands_invert_to_zero() {
        let z = haar_idwt2(&Subbands::new(Array3::zeros((16, 3, 5))).unwrap()).unwrap();
        assert_eq!(z.shape(), [4, 6, 10]);
        assert!(z.data().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn row_banding_lands_in_vertical_band() {
        // alternate +1/-1 physical rows within each plane
        let mut data = Array3::zeros((4, 4, 4));
        for ((_, y, _), v) in data.indexed_iter_mut() {
            *v = if y % 2 == 0 { 1.0 } else { -1.0 };
        }
        let sb = haar_dwt2(&RawPatch::new(data).unwrap()).unwrap();
        assert!(sb.data().index_axis(ndarray::Axis(0), 2).iter().all(|&v| v == 2.0));
        assert!(sb.data().index_axis(ndarray::Axis(0), 1).iter().all(|&v| v == 0.0));
    }

    proptest! {
        #[test]
        fn reconstruction_and_energy(seed in any::<u64>(), h in 1usize..6, w in 1usize..6) {
            let x = random_patch(seed, 2 * h, 2 * w);
            let sb = haar_dwt2(&x).unwrap();
            let back = haar_idwt2(&sb).unwrap();
            let err = (back.data() - x.data()).iter().fold(0.0f64, |m, v| m.max(v.abs()));
            prop_assert!(err <= 1e-6);
            let e_in: f64 = x.data().iter().map(|v| v * v).sum();
            let e_out: f64 = sb.data().iter().map(|v| v * v).sum();
            prop_assert!((e_in - e_out).abs() <= 1e-6 * e_in);
        }

        #[test]
        fn linearity(seed in any::<u64>(), a in -5.0f64..5.0) {
            let x = random_patch(seed, 4, 6);
            let y = random_patch(seed ^ 1, 4, 6);
            let combo = RawPatch::new(x.data() * a + y.data()).unwrap();
            let lhs = haar_dwt2(&combo).unwrap().into_data();
            let rhs = haar_dwt2(&x).unwrap().into_data() * a + haar_dwt2(&y).unwrap().into_data();
            let err = (&lhs - &rhs).iter().fold(0.0f64, |m, v| m.max(v.abs()));
            prop_assert!(err <= 1e-9);
        }
    }
}
