use rand::Rng;

use crate::tasks::ImageShape;

const SCALES: [f64; 4] = [0.95, 0.975, 1.0, 1.025];
const MAX_ROTATION_DEG: f64 = 50.0;
const MAX_JITTER: f64 = 0.1;
const CROP_PAD: usize = 2;
const NOISE: f64 = 10.0 / 255.0;

/// The augmentations chosen for one image. Each is applied with
/// probability one half when drawn with [`AugmentPlan::draw`].
#[derive(Debug, Clone, PartialEq, Default)]
pub struct AugmentPlan {
    /// Degrees, counter-clockwise.
    pub rotation: Option<f64>,
    pub scale: Option<f64>,
    /// Additive offset per channel.
    pub jitter: Option<Vec<f64>>,
    /// Row and column offsets into the zero-padded image, each in `0..=4`.
    pub crop: Option<(usize, usize)>,
    /// Additive uniform noise in `[-10/255, 10/255]`, drawn per pixel.
    pub noise: bool,
}

impl AugmentPlan {
    pub fn identity() -> Self {
        AugmentPlan::default()
    }

    pub fn draw<R: Rng + ?Sized>(channels: usize, rng: &mut R) -> Self {
        let mut coin = || rng.random_bool(0.5);
        let (rot, scl, jit, crp, noi) = (coin(), coin(), coin(), coin(), coin());
        AugmentPlan {
            rotation: rot.then(|| rng.random_range(-MAX_ROTATION_DEG..=MAX_ROTATION_DEG)),
            scale: scl.then(|| SCALES[rng.random_range(0..SCALES.len())]),
            jitter: jit.then(|| {
                (0..channels)
                    .map(|_| rng.random_range(-MAX_JITTER..=MAX_JITTER))
                    .collect()
            }),
            crop: crp.then(|| {
                (
                    rng.random_range(0..=2 * CROP_PAD),
                    rng.random_range(0..=2 * CROP_PAD),
                )
            }),
            noise: noi,
        }
    }

    /// Applies the plan in the order rotation, scale, jitter, crop, noise and
    /// clamps the result to `[0, 1]`.
    pub fn apply<R: Rng + ?Sized>(
        &self,
        image: &[f64],
        shape: ImageShape,
        rng: &mut R,
    ) -> Vec<f64> {
        let mut img = image.to_vec();
        if let Some(deg) = self.rotation {
            let (s, c) = deg.to_radians().sin_cos();
            img = warp(&img, shape, |dx, dy| (c * dx + s * dy, -s * dx + c * dy));
        }
        if let Some(f) = self.scale {
            img = warp(&img, shape, |dx, dy| (dx / f, dy / f));
        }
        let [ch, h, w] = shape;
        if let Some(j) = &self.jitter {
            for (c, off) in j.iter().enumerate().take(ch) {
                img[c * h * w..(c + 1) * h * w]
                    .iter_mut()
                    .for_each(|p| *p += off);
            }
        }
        if let Some((oy, ox)) = self.crop {
            let src = img.clone();
            for c in 0..ch {
                for y in 0..h {
                    for x in 0..w {
                        let sy = (y + oy).checked_sub(CROP_PAD).filter(|&v| v < h);
                        let sx = (x + ox).checked_sub(CROP_PAD).filter(|&v| v < w);
                        img[c * h * w + y * w + x] = match (sy, sx) {
                            (Some(sy), Some(sx)) => src[c * h * w + sy * w + sx],
                            _ => 0.0,
                        };
                    }
                }
            }
        }
        if self.noise {
            img.iter_mut()
                .for_each(|p| *p += rng.random_range(-NOISE..=NOISE));
        }
        img.iter_mut().for_each(|p| *p = p.clamp(0.0, 1.0));
        img
    }
}

/// Resamples every channel through `map`, which sends an output offset
/// from the image center to the matching input offset. Bilinear
/// interpolation; samples outside the image read as zero.
fn warp(img: &[f64], shape: ImageShape, map: impl Fn(f64, f64) -> (f64, f64)) -> Vec<f64> {
    let [ch, h, w] = shape;
    let (cy, cx) = ((h as f64 - 1.0) / 2.0, (w as f64 - 1.0) / 2.0);
    let mut out = vec![0.0; img.len()];
    for y in 0..h {
        for x in 0..w {
            let (dx, dy) = map(x as f64 - cx, y as f64 - cy);
            let (sx, sy) = (cx + dx, cy + dy);
            for c in 0..ch {
                out[c * h * w + y * w + x] =
                    bilinear(&img[c * h * w..(c + 1) * h * w], h, w, sy, sx);
            }
        }
    }
    out
}

fn bilinear(plane: &[f64], h: usize, w: usize, y: f64, x: f64) -> f64 {
    let (y0, x0) = (y.floor(), x.floor());
    let (fy, fx) = (y - y0, x - x0);
    let at = |yy: f64, xx: f64| -> f64 {
        if yy < 0.0 || xx < 0.0 || yy >= h as f64 || xx >= w as f64 {
            0.0
        } else {
            plane[yy as usize * w + xx as usize]
        }
    };
    let mut v = 0.0;
    for (yy, wy) in [(y0, 1.0 - fy), (y0 + 1.0, fy)] {
        for (xx, wx) in [(x0, 1.0 - fx), (x0 + 1.0, fx)] {
            let wt = wy * wx;
            if wt != 0.0 {
                v += wt * at(yy, xx);
            }
        }
    }
    v
}

/// Draws and applies a random augmentation.
pub fn augment<R: Rng + ?Sized>(image: &[f64], shape: ImageShape, rng: &mut R) -> Vec<f64> {
    AugmentPlan::draw(shape[0], rng).apply(image, shape, rng)
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn ramp(shape: ImageShape) -> Vec<f64> {
        let n: usize = shape.iter().product();
        (0..n).map(|i| i as f64 / n as f64).collect()
    }

    #[test]
    fn identity_plan_is_a_no_op() {
        let img = ramp([3, 5, 4]);
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        assert_eq!(
            AugmentPlan::identity().apply(&img, [3, 5, 4], &mut rng),
            img
        );
    }

    #[test]
    fn unit_rotation_and_scale_are_identity() {
        let img = ramp([1, 5, 5]);
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let plan = AugmentPlan {
            rotation: Some(0.0),
            scale: Some(1.0),
            ..AugmentPlan::identity()
        };
        let out = plan.apply(&img, [1, 5, 5], &mut rng);
        for (a, b) in out.iter().zip(&img) {
            assert!((a - b).abs() < 1e-12);
        }
    }

    #[test]
    fn one_pixel_rotation_passes_through() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let plan = AugmentPlan {
            rotation: Some(37.0),
            ..AugmentPlan::identity()
        };
        assert_eq!(plan.apply(&[0.4], [1, 1, 1], &mut rng), vec![0.4]);
    }

    #[test]
    fn right_angle_rotation_permutes_pixels() {
        let img = ramp([1, 3, 3]);
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let plan = AugmentPlan {
            rotation: Some(90.0),
            ..AugmentPlan::identity()
        };
        let out = plan.apply(&img, [1, 3, 3], &mut rng);
        let mut a = out.clone();
        let mut b = img.clone();
        a.sort_by(f64::total_cmp);
        b.sort_by(f64::total_cmp);
        for (x, y) in a.iter().zip(&b) {
            assert!((x - y).abs() < 1e-9);
        }
        assert!((out[4] - img[4]).abs() < 1e-12);
    }

    #[test]
    fn centered_crop_is_identity_and_shift_zero_fills() {
        let img = ramp([1, 4, 4]);
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let centered = AugmentPlan {
            crop: Some((2, 2)),
            ..AugmentPlan::identity()
        };
        assert_eq!(centered.apply(&img, [1, 4, 4], &mut rng), img);
        let shifted = AugmentPlan {
            crop: Some((0, 2)),
            ..AugmentPlan::identity()
        };
        let out = shifted.apply(&img, [1, 4, 4], &mut rng);
        assert_eq!(&out[..8], &[0.0; 8]);
        assert_eq!(&out[8..], &img[..8]);
    }

    #[test]
    fn noise_only_is_bounded() {
        let img = vec![0.5; 48];
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let plan = AugmentPlan {
            noise: true,
            ..AugmentPlan::identity()
        };
        for _ in 0..100 {
            let out = plan.apply(&img, [3, 4, 4], &mut rng);
            assert!(out
                .iter()
                .zip(&img)
                .all(|(a, b)| (a - b).abs() <= NOISE + 1e-15));
            assert!(out != img);
        }
    }

    #[test]
    fn jitter_shifts_whole_channels() {
        let img = vec![0.5; 2 * 2 * 2];
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let plan = AugmentPlan {
            jitter: Some(vec![0.1, -0.05]),
            ..AugmentPlan::identity()
        };
        let out = plan.apply(&img, [2, 2, 2], &mut rng);
        assert!(out[..4].iter().all(|p| (p - 0.6).abs() < 1e-12));
        assert!(out[4..].iter().all(|p| (p - 0.45).abs() < 1e-12));
    }
}
