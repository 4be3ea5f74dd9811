//! Baseline image augmentations on `[3, H, W]` observations.

use rand::Rng as _;

use super::{AugmentMethod, AugmentSpec};
use crate::nn::params::orthogonal;
use crate::rng::Rng;

const CHANNELS: usize = 3;

/// Fill one random rectangle (sides in `[min_side, max_side]`) with a
/// uniform random color.
pub fn cutout_color(obs: &mut [f64], size: usize, min_side: usize, max_side: usize, rng: &mut Rng) {
    let h = rng.random_range(min_side..=max_side);
    let w = rng.random_range(min_side..=max_side);
    let y0 = rng.random_range(0..=size - h);
    let x0 = rng.random_range(0..=size - w);
    let color: [f64; CHANNELS] = [rng.random(), rng.random(), rng.random()];
    for (c, &col) in color.iter().enumerate() {
        for y in y0..y0 + h {
            let row = c * size * size + y * size;
            obs[row + x0..row + x0 + w].fill(col);
        }
    }
}

/// Side length of the intermediate image for random cropping.
pub fn crop_resize_size(size: usize, scale: f64) -> usize {
    (scale * size as f64).round() as usize
}

/// Bilinear resize of a `[C, H, H]` image to `[C, out, out]` with
/// half-pixel-centred sampling and edge clamping.
pub fn bilinear_resize(img: &[f64], channels: usize, size: usize, out: usize) -> Vec<f64> {
    let scale = size as f64 / out as f64;
    let coords: Vec<(usize, usize, f64)> = (0..out)
        .map(|o| {
            let src = ((o as f64 + 0.5) * scale - 0.5).clamp(0.0, (size - 1) as f64);
            let lo = src.floor() as usize;
            let hi = (lo + 1).min(size - 1);
            (lo, hi, src - lo as f64)
        })
        .collect();
    let mut res = Vec::with_capacity(channels * out * out);
    for c in 0..channels {
        let plane = &img[c * size * size..(c + 1) * size * size];
        for &(y0, y1, fy) in &coords {
            for &(x0, x1, fx) in &coords {
                let top = plane[y0 * size + x0] * (1.0 - fx) + plane[y0 * size + x1] * fx;
                let bot = plane[y1 * size + x0] * (1.0 - fx) + plane[y1 * size + x1] * fx;
                res.push(top * (1.0 - fy) + bot * fy);
            }
        }
    }
    res
}

/// Upscale by `scale`, then take the `size × size` window at `(dy, dx)`.
pub fn random_crop_at(obs: &mut [f64], size: usize, scale: f64, dy: usize, dx: usize) {
    let big = crop_resize_size(size, scale);
    let up = bilinear_resize(obs, CHANNELS, size, big);
    for c in 0..CHANNELS {
        for y in 0..size {
            let src = c * big * big + (y + dy) * big + dx;
            let dst = c * size * size + y * size;
            obs[dst..dst + size].copy_from_slice(&up[src..src + size]);
        }
    }
}

pub fn random_crop(obs: &mut [f64], size: usize, scale: f64, rng: &mut Rng) {
    let slack = crop_resize_size(size, scale) - size;
    let dy = rng.random_range(0..=slack);
    let dx = rng.random_range(0..=slack);
    random_crop_at(obs, size, scale, dy, dx);
}

/// Orthogonal `3×3`, 3→3-channel kernel laid out `[out][in][ky][kx]`.
pub fn random_conv_kernel(rng: &mut Rng) -> Vec<f64> {
    orthogonal(CHANNELS, CHANNELS * 9, 1.0, rng)
}

/// Convolve with edge-replicated same padding, then min-max rescale the
/// whole image to `[0, 1]`.
pub fn random_conv_with_kernel(obs: &mut [f64], size: usize, kernel: &[f64]) {
    let plane = size * size;
    let mut out = vec![0.0; CHANNELS * plane];
    let clampi = |v: isize| v.clamp(0, size as isize - 1) as usize;
    for o in 0..CHANNELS {
        for y in 0..size {
            for x in 0..size {
                let mut acc = 0.0;
                for i in 0..CHANNELS {
                    for ky in 0..3 {
                        let sy = clampi(y as isize + ky as isize - 1);
                        for kx in 0..3 {
                            let sx = clampi(x as isize + kx as isize - 1);
                            acc += kernel[((o * CHANNELS + i) * 3 + ky) * 3 + kx] * obs[i * plane + sy * size + sx];
                        }
                    }
                }
                out[o * plane + y * size + x] = acc;
            }
        }
    }
    let lo = out.iter().copied().fold(f64::INFINITY, f64::min);
    let hi = out.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let range = hi - lo;
    for (dst, v) in obs.iter_mut().zip(out) {
        *dst = if range > 1e-12 { (v - lo) / range } else { v.clamp(0.0, 1.0) };
    }
}

pub fn random_conv(obs: &mut [f64], size: usize, rng: &mut Rng) {
    let k = random_conv_kernel(rng);
    random_conv_with_kernel(obs, size, &k);
}

/// Apply a per-image augmentation to a batch in place. Mixing methods and
/// `none` leave the batch untouched.
pub fn augment_batch(spec: &AugmentSpec, obs: &mut [f64], size: usize, rng: &mut Rng) {
    let len = CHANNELS * size * size;
    match spec.method {
        AugmentMethod::CutoutColor => {
            let max = spec.cutout_max_side.unwrap_or(size / 2);
            for img in obs.chunks_mut(len) {
                cutout_color(img, size, spec.cutout_min_side, max, rng);
            }
        }
        AugmentMethod::RandomCrop => {
            for img in obs.chunks_mut(len) {
                random_crop(img, size, spec.crop_scale, rng);
            }
        }
        AugmentMethod::RandomConv => {
            let k = random_conv_kernel(rng);
            for img in obs.chunks_mut(len) {
                random_conv_with_kernel(img, size, &k);
            }
        }
        AugmentMethod::None | AugmentMethod::Mixreg | AugmentMethod::MixobsOnly => {}
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::rng_from_seed;

    fn random_image(size: usize, rng: &mut Rng) -> Vec<f64> {
        (0..3 * size * size).map(|_| rng.random()).collect()
    }

    #[test]
    fn cutout_is_local_and_bounded() {
        let mut rng = rng_from_seed(1);
        let mut total = 0usize;
        let trials = 2000;
        for _ in 0..trials {
            let orig = random_image(32, &mut rng);
            let mut img = orig.clone();
            cutout_color(&mut img, 32, 2, 16, &mut rng);
            // One color per channel inside the rectangle, original elsewhere.
            let changed: Vec<usize> = (0..32 * 32).filter(|&p| img[p] != orig[p]).collect();
            assert!(changed.len() <= 16 * 16);
            total += changed.len();
            for c in 0..3 {
                for p in 0..1024 {
                    let v = img[c * 1024 + p];
                    assert!(v == orig[c * 1024 + p] || v == img[c * 1024 + changed[0]]);
                }
            }
        }
        let frac = total as f64 / (trials * 1024) as f64;
        assert!(frac > 0.0 && frac <= 0.25, "{frac}");
    }

    #[test]
    fn crop_geometry() {
        assert_eq!(crop_resize_size(32, 75.0 / 64.0), 38);
        assert_eq!(crop_resize_size(64, 75.0 / 64.0), 75);
        let mut c = vec![0.37; 3 * 32 * 32];
        let mut rng = rng_from_seed(2);
        random_crop(&mut c, 32, 75.0 / 64.0, &mut rng);
        assert!(c.iter().all(|v| (v - 0.37).abs() < 1e-15));
    }

    #[test]
    fn resize_to_same_size_is_identity() {
        let mut rng = rng_from_seed(3);
        let img = random_image(8, &mut rng);
        let same = bilinear_resize(&img, 3, 8, 8);
        for (a, b) in img.iter().zip(&same) {
            assert!((a - b).abs() < 1e-12);
        }
    }

    #[test]
    fn centered_crop_resamples_center_region() {
        // A horizontal ramp keeps its slope (scaled by 1/scale) under the crop.
        let size = 32;
        let mut img = vec![0.0; 3 * size * size];
        for c in 0..3 {
            for y in 0..size {
                for x in 0..size {
                    img[c * 1024 + y * size + x] = x as f64 / 31.0;
                }
            }
        }
        random_crop_at(&mut img, size, 75.0 / 64.0, 3, 3);
        let step = img[10 * size + 11] - img[10 * size + 10];
        let want = (32.0 / 38.0) / 31.0;
        assert!((step - want).abs() < 1e-12, "{step} vs {want}");
        // Centered crop keeps the middle of the ramp near the middle.
        let mid = 0.5 * (img[16 * size + 15] + img[16 * size + 16]);
        assert!((mid - 0.5).abs() < 0.02, "{mid}");
    }

    #[test]
    fn random_conv_contracts() {
        let mut rng = rng_from_seed(4);
        let orig = random_image(16, &mut rng);
        let mut id = vec![0.0; 81];
        for c in 0..3 {
            id[((c * 3 + c) * 3 + 1) * 3 + 1] = 1.0;
        }
        let mut img = orig.clone();
        random_conv_with_kernel(&mut img, 16, &id);
        let lo = orig.iter().copied().fold(f64::INFINITY, f64::min);
        let hi = orig.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        for (a, b) in img.iter().zip(&orig) {
            assert!((a - (b - lo) / (hi - lo)).abs() < 1e-12);
        }
        let mut flat = vec![0.3; 3 * 256];
        random_conv(&mut flat, 16, &mut rng);
        // Spatially constant within every channel.
        for plane in flat.chunks(256) {
            assert!(plane.iter().all(|v| *v == plane[0]));
        }
        let mut img = orig;
        random_conv(&mut img, 16, &mut rng);
        assert!(img.iter().all(|v| (0.0..=1.0).contains(v)));
    }

    #[test]
    fn kernel_rows_are_orthonormal() {
        let k = random_conv_kernel(&mut rng_from_seed(5));
        for a in 0..3 {
            for b in 0..3 {
                let dot: f64 = (0..27).map(|t| k[a * 27 + t] * k[b * 27 + t]).sum();
                assert!((dot - f64::from(u8::from(a == b))).abs() < 1e-10);
            }
        }
    }
}
