//! Log-mel features, patch grids, random masking and positional embeddings.

mod mel;
mod patch;

pub use mel::{band_centers_hz, hanning, hz_to_mel, log_mel, mel_filterbank, mel_to_hz, AudioFeature, MelConfig};
pub use patch::{
    kept_count, normalize_patches, patchify_map, random_mask, unshuffle_with_pad, FrameImage, PatchGrid, PatchSet,
    Patchify,
};

use crate::nn::Tensor;

/// Fixed 2-D sine-cosine table, `[rows·cols × dim]`: the first half of each
/// row encodes the grid row, the second half the grid column.
pub fn sincos_2d(rows: usize, cols: usize, dim: usize) -> Tensor {
    assert!(dim.is_multiple_of(4), "positional width {dim} must be divisible by 4");
    let quarter = dim / 4;
    let omega: Vec<f64> = (0..quarter).map(|i| 1.0 / 10_000f64.powf(i as f64 / quarter as f64)).collect();
    let mut data = Vec::with_capacity(rows * cols * dim);
    for r in 0..rows {
        for c in 0..cols {
            for coord in [r as f64, c as f64] {
                data.extend(omega.iter().map(|w| (coord * w).sin()));
                data.extend(omega.iter().map(|w| (coord * w).cos()));
            }
        }
    }
    Tensor::new(vec![rows * cols, dim], data).expect("table shape")
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn sincos_rows_are_distinct() {
        let t = sincos_2d(4, 4, 16);
        assert_eq!(t.shape(), &[16, 16]);
        for a in 0..16 {
            for b in a + 1..16 {
                assert_ne!(t.row(a), t.row(b));
            }
        }
        // origin: sin terms 0, cos terms 1
        assert_eq!(&t.row(0)[..4], &[0.0; 4]);
        assert_eq!(&t.row(0)[4..8], &[1.0; 4]);
    }
}
