use rand::Rng;

use crate::tensor::Tensor;

/// Zero padding applied before the random crop.
pub const CROP_PAD: usize = 2;

/// Reverses the column order of an `[H, W, C]` image.
pub fn flip_columns(img: &Tensor<f32>) -> Tensor<f32> {
    let (h, w, c) = (img.shape()[0], img.shape()[1], img.shape()[2]);
    let src = img.data();
    let mut out = Vec::with_capacity(src.len());
    for r in 0..h {
        for col in (0..w).rev() {
            let base = (r * w + col) * c;
            out.extend_from_slice(&src[base..base + c]);
        }
    }
    Tensor::new(img.shape().to_vec(), out).expect("same shape")
}

/// Zero-pads by `pad` cells on every spatial border, then crops back to the
/// original size starting at `(row_off, col_off)` in the padded image.
pub fn pad_crop(img: &Tensor<f32>, pad: usize, row_off: usize, col_off: usize) -> Tensor<f32> {
    let (h, w, c) = (img.shape()[0], img.shape()[1], img.shape()[2]);
    assert!(row_off <= 2 * pad && col_off <= 2 * pad, "crop offset outside padded image");
    let src = img.data();
    let mut out = vec![0f32; src.len()];
    for r in 0..h {
        // row in the original image, if inside it
        let Some(sr) = (r + row_off).checked_sub(pad).filter(|&v| v < h) else {
            continue;
        };
        for col in 0..w {
            let Some(sc) = (col + col_off).checked_sub(pad).filter(|&v| v < w) else {
                continue;
            };
            let (d, s) = ((r * w + col) * c, (sr * w + sc) * c);
            out[d..d + c].copy_from_slice(&src[s..s + c]);
        }
    }
    Tensor::new(img.shape().to_vec(), out).expect("same shape")
}

/// Random horizontal flip (p = 0.5) followed by a zero-pad-and-crop.
pub fn augment(img: &Tensor<f32>, rng: &mut impl Rng) -> Tensor<f32> {
    let flipped = if rng.gen_bool(0.5) {
        flip_columns(img)
    } else {
        img.clone()
    };
    let dr = rng.gen_range(0..=2 * CROP_PAD);
    let dc = rng.gen_range(0..=2 * CROP_PAD);
    pad_crop(&flipped, CROP_PAD, dr, dc)
}
