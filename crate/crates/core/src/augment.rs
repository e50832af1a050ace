//! Training-set augmentation: every corpus image is scaled to a square base
//! size, then each subset draws a random flip, scale, rotation and integer
//! shift and crops the result.
//!
//! Geometry is an inverse mapping. Output pixel center `q` (in crop
//! coordinates, pixel `(i, j)` has center `(i + 0.5, j + 0.5)`) reads the
//! flipped base image at
//!
//! ```text
//! p = o + c + shift + R(-theta) (q - c) / scale
//! ```
//!
//! where `c = crop / 2` and `o = (base - crop) / 2` rounded down, so the
//! identity transform is an exact crop starting at pixel `o`. Scales above 1
//! zoom in; a positive shift moves the crop window right/down. Samples whose
//! position falls outside the outermost pixel centers take the fill color.

use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::featnet::LabeledImage;
use crate::img::{Image, ImageError};

#[derive(Debug, Error)]
pub enum AugmentError {
    #[error("invalid augmentation policy: {0}")]
    Policy(String),
    #[error("corpus is empty")]
    EmptyCorpus,
    #[error(transparent)]
    Image(#[from] ImageError),
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Flip {
    Horizontal,
    Vertical,
    Both,
    None,
}

impl Flip {
    /// Branch order matching [`AugmentPolicy::flip_probs`].
    pub const ALL: [Flip; 4] = [Flip::Horizontal, Flip::Vertical, Flip::Both, Flip::None];
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AugmentPolicy {
    /// Probabilities of horizontal, vertical, both, none.
    pub flip_probs: [f64; 4],
    pub scale_range: (f64, f64),
    pub rotate_range_deg: (f64, f64),
    pub shift_range_px: (i32, i32),
    pub crop_size: usize,
    pub base_size: usize,
    pub num_subsets: usize,
}

impl Default for AugmentPolicy {
    fn default() -> Self {
        AugmentPolicy {
            flip_probs: [0.25; 4],
            scale_range: (0.83, 1.2),
            rotate_range_deg: (-30.0, 30.0),
            shift_range_px: (-5, 5),
            crop_size: 119,
            base_size: 128,
            num_subsets: 4,
        }
    }
}

impl AugmentPolicy {
    pub fn validate(&self) -> Result<(), AugmentError> {
        let bad = |m: &str| Err(AugmentError::Policy(m.to_string()));
        if self.flip_probs.iter().any(|p| !(p.is_finite() && *p >= 0.0)) {
            return bad("flip probabilities must be finite and non-negative");
        }
        if (self.flip_probs.iter().sum::<f64>() - 1.0).abs() > 1e-9 {
            return bad("flip probabilities must sum to 1");
        }
        let (s0, s1) = self.scale_range;
        if !(s0.is_finite() && s1.is_finite() && s0 > 0.0 && s0 <= s1) {
            return bad("scale range must be positive and ordered");
        }
        let (r0, r1) = self.rotate_range_deg;
        if !(r0.is_finite() && r1.is_finite() && r0 <= r1) {
            return bad("rotation range must be finite and ordered");
        }
        if self.shift_range_px.0 > self.shift_range_px.1 {
            return bad("shift range must be ordered");
        }
        if self.crop_size == 0 || self.crop_size > self.base_size {
            return bad("crop size must be positive and at most the base size");
        }
        if self.num_subsets == 0 {
            return bad("at least one subset is required");
        }
        Ok(())
    }

    pub fn crop_offset(&self) -> usize {
        (self.base_size - self.crop_size) / 2
    }
}

/// One concrete draw of the random transform.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct AugmentParams {
    pub flip: Flip,
    pub scale: f64,
    pub rotate_deg: f64,
    /// `(dx, dy)` in pixels.
    pub shift: (i32, i32),
}

impl AugmentParams {
    pub const IDENTITY: AugmentParams = AugmentParams {
        flip: Flip::None,
        scale: 1.0,
        rotate_deg: 0.0,
        shift: (0, 0),
    };
}

pub fn sample_params(policy: &AugmentPolicy, rng: &mut impl Rng) -> AugmentParams {
    let u: f64 = rng.gen();
    let mut acc = 0.0;
    let mut flip = Flip::None;
    for (branch, p) in Flip::ALL.iter().zip(policy.flip_probs) {
        acc += p;
        if u < acc {
            flip = *branch;
            break;
        }
    }
    AugmentParams {
        flip,
        scale: rng.gen_range(policy.scale_range.0..=policy.scale_range.1),
        rotate_deg: rng.gen_range(policy.rotate_range_deg.0..=policy.rotate_range_deg.1),
        shift: (
            rng.gen_range(policy.shift_range_px.0..=policy.shift_range_px.1),
            rng.gen_range(policy.shift_range_px.0..=policy.shift_range_px.1),
        ),
    }
}

pub fn scale_to_base(image: &Image, policy: &AugmentPolicy) -> Result<Image, AugmentError> {
    Ok(image.resize_bilinear(policy.base_size, policy.base_size)?)
}

fn sample(img: &Image, c: usize, u: f64, v: f64) -> Option<f32> {
    let (w, h) = ((img.width() - 1) as f64, (img.height() - 1) as f64);
    if !(u >= 0.0 && u <= w && v >= 0.0 && v <= h) {
        return None;
    }
    let (x0, y0) = (u.floor() as usize, v.floor() as usize);
    let (x1, y1) = ((x0 + 1).min(img.width() - 1), (y0 + 1).min(img.height() - 1));
    let (tx, ty) = ((u - x0 as f64) as f32, (v - y0 as f64) as f32);
    let top = img.get(c, x0, y0) * (1.0 - tx) + img.get(c, x1, y0) * tx;
    let bottom = img.get(c, x0, y1) * (1.0 - tx) + img.get(c, x1, y1) * tx;
    Some(top * (1.0 - ty) + bottom * ty)
}

/// Applies a fixed transform to a base-size image.
pub fn apply(
    base: &Image,
    params: &AugmentParams,
    policy: &AugmentPolicy,
    fill: [f32; 3],
) -> Result<Image, AugmentError> {
    let n = policy.base_size;
    if base.width() != n || base.height() != n {
        return Err(ImageError::Size {
            expected_w: n,
            expected_h: n,
            width: base.width(),
            height: base.height(),
        }
        .into());
    }
    let flipped = match params.flip {
        Flip::None => base.clone(),
        Flip::Horizontal => base.flip_horizontal(),
        Flip::Vertical => base.flip_vertical(),
        Flip::Both => base.flip_horizontal().flip_vertical(),
    };
    let crop = policy.crop_size;
    let half = crop as f64 / 2.0;
    let center = (
        policy.crop_offset() as f64 + half + params.shift.0 as f64,
        policy.crop_offset() as f64 + half + params.shift.1 as f64,
    );
    let (sin, cos) = params.rotate_deg.to_radians().sin_cos();
    let inv = 1.0 / params.scale;
    let mut out = Image::new(crop, crop)?;
    for y in 0..crop {
        for x in 0..crop {
            let (dx, dy) = (x as f64 + 0.5 - half, y as f64 + 0.5 - half);
            // R(-theta) applied to (dx, dy), then back to pixel-index coordinates.
            let u = center.0 + (cos * dx + sin * dy) * inv - 0.5;
            let v = center.1 + (-sin * dx + cos * dy) * inv - 0.5;
            let mut rgb = fill;
            for (c, value) in rgb.iter_mut().enumerate() {
                if let Some(s) = sample(&flipped, c, u, v) {
                    *value = s;
                }
            }
            out.set_pixel(x, y, rgb);
        }
    }
    Ok(out)
}

pub fn augment_example(
    base: &Image,
    policy: &AugmentPolicy,
    fill: [f32; 3],
    rng: &mut impl Rng,
) -> Result<Image, AugmentError> {
    let params = sample_params(policy, rng);
    apply(base, &params, policy, fill)
}

/// Random stream for example `index` of `subset`: a ChaCha8 generator seeded
/// with `seed` on stream `subset * corpus_len + index`. Every example is
/// independent of evaluation order.
pub fn example_rng(seed: u64, subset: usize, index: usize, corpus_len: usize) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream((subset * corpus_len + index) as u64);
    rng
}

/// `num_subsets` augmented replicas of the corpus, subset-major: example
/// `k * corpus.len() + i` is subset `k`'s version of corpus item `i`.
pub fn build_training_set(
    corpus: &[LabeledImage],
    policy: &AugmentPolicy,
    fill: [f32; 3],
    seed: u64,
) -> Result<Vec<LabeledImage>, AugmentError> {
    policy.validate()?;
    if corpus.is_empty() {
        return Err(AugmentError::EmptyCorpus);
    }
    let bases = corpus
        .iter()
        .map(|ex| scale_to_base(&ex.image, policy))
        .collect::<Result<Vec<_>, _>>()?;
    let mut out = Vec::with_capacity(policy.num_subsets * corpus.len());
    for subset in 0..policy.num_subsets {
        for (i, (base, ex)) in bases.iter().zip(corpus).enumerate() {
            let mut rng = example_rng(seed, subset, i, corpus.len());
            out.push(LabeledImage {
                image: augment_example(base, policy, fill, &mut rng)?,
                label: ex.label,
            });
        }
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn noise(size: usize, seed: u64) -> Image {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        Image::from_fn(size, size, |_, _| [rng.gen(), rng.gen(), rng.gen()]).unwrap()
    }

    fn with(flip: Flip) -> AugmentParams {
        AugmentParams { flip, ..AugmentParams::IDENTITY }
    }

    #[test]
    fn default_policy_is_valid() {
        let p = AugmentPolicy::default();
        p.validate().unwrap();
        assert_eq!(p.crop_offset(), 4);
    }

    #[test]
    fn invalid_policies_rejected() {
        let p = AugmentPolicy { flip_probs: [0.3, 0.25, 0.25, 0.25], ..AugmentPolicy::default() };
        assert!(p.validate().is_err());
        let p = AugmentPolicy { crop_size: 129, ..AugmentPolicy::default() };
        assert!(p.validate().is_err());
        let p = AugmentPolicy { scale_range: (1.2, 0.83), ..AugmentPolicy::default() };
        assert!(p.validate().is_err());
    }

    #[test]
    fn identity_is_exact_center_crop() {
        let policy = AugmentPolicy::default();
        let img = noise(128, 1);
        let out = apply(&img, &AugmentParams::IDENTITY, &policy, [0.0; 3]).unwrap();
        assert_eq!(out, img.crop(4, 4, 119, 119).unwrap());
    }

    #[test]
    fn flips_are_crops_of_mirrored_input() {
        let policy = AugmentPolicy::default();
        let img = noise(128, 2);
        let h = apply(&img, &with(Flip::Horizontal), &policy, [0.0; 3]).unwrap();
        assert_eq!(h, img.flip_horizontal().crop(4, 4, 119, 119).unwrap());
        let v = apply(&img, &with(Flip::Vertical), &policy, [0.0; 3]).unwrap();
        assert_eq!(v, img.flip_vertical().crop(4, 4, 119, 119).unwrap());
        let b = apply(&img, &with(Flip::Both), &policy, [0.0; 3]).unwrap();
        // Both flips equal a 180 degree rotation of the pixel grid.
        let rot = Image::from_fn(128, 128, |x, y| img.pixel(127 - x, 127 - y)).unwrap();
        assert_eq!(b, rot.crop(4, 4, 119, 119).unwrap());
    }

    #[test]
    fn integer_shift_moves_the_window() {
        let policy = AugmentPolicy::default();
        let img = noise(128, 3);
        let p = AugmentParams { shift: (3, -2), ..AugmentParams::IDENTITY };
        let out = apply(&img, &p, &policy, [0.0; 3]).unwrap();
        assert_eq!(out, img.crop(7, 2, 119, 119).unwrap());
    }

    #[test]
    fn half_turn_reverses_the_crop() {
        let policy = AugmentPolicy::default();
        let img = noise(128, 4);
        let p = AugmentParams { rotate_deg: 180.0, ..AugmentParams::IDENTITY };
        let out = apply(&img, &p, &policy, [0.0; 3]).unwrap();
        for y in 0..119 {
            for x in 0..119 {
                let want = img.pixel(122 - x, 122 - y);
                let got = out.pixel(x, y);
                for c in 0..3 {
                    assert!((want[c] - got[c]).abs() < 1e-5);
                }
            }
        }
    }

    /// Bilinear sampling reproduces affine functions exactly, so the output
    /// of any in-bounds transform of a ramp image is the ramp evaluated at
    /// the hand-computed source position.
    #[test]
    fn ramp_follows_the_documented_mapping() {
        let policy = AugmentPolicy::default();
        let ramp = Image::from_fn(128, 128, |x, y| {
            [x as f32 / 127.0, y as f32 / 127.0, (x + y) as f32 / 254.0]
        })
        .unwrap();
        let p = AugmentParams {
            flip: Flip::Horizontal,
            scale: 1.15,
            rotate_deg: 20.0,
            shift: (2, -3),
        };
        let out = apply(&ramp, &p, &policy, [9.0; 3]).unwrap();
        let (s, c) = 20f64.to_radians().sin_cos();
        let mut checked = 0;
        for y in 0..119 {
            for x in 0..119 {
                let (dx, dy) = (x as f64 - 59.0, y as f64 - 59.0);
                let u = 63.0 + 2.0 + (c * dx + s * dy) / 1.15;
                let v = 63.0 - 3.0 + (-s * dx + c * dy) / 1.15;
                if !(0.0..=127.0).contains(&u) || !(0.0..=127.0).contains(&v) {
                    assert_eq!(out.pixel(x, y), [9.0; 3]);
                    continue;
                }
                // The flip mirrors x before sampling.
                let src_x = 127.0 - u;
                let got = out.pixel(x, y);
                assert!((got[0] as f64 - src_x / 127.0).abs() < 1e-5);
                assert!((got[1] as f64 - v / 127.0).abs() < 1e-5);
                assert!((got[2] as f64 - (src_x + v) / 254.0).abs() < 1e-5);
                checked += 1;
            }
        }
        assert!(checked > 10_000);
    }

    #[test]
    fn zoom_out_fills_corners_with_mean() {
        let policy = AugmentPolicy::default();
        let img = noise(128, 5);
        let p = AugmentParams { scale: 0.83, rotate_deg: 30.0, ..AugmentParams::IDENTITY };
        let fill = [0.4, 0.5, 0.6];
        let out = apply(&img, &p, &policy, fill).unwrap();
        assert_eq!(out.pixel(0, 0), fill);
        assert_eq!(out.pixel(118, 118), fill);
        assert_ne!(out.pixel(59, 59), fill);
    }

    #[test]
    fn wrong_input_size_rejected() {
        let policy = AugmentPolicy::default();
        let img = noise(100, 0);
        assert!(matches!(
            apply(&img, &AugmentParams::IDENTITY, &policy, [0.0; 3]),
            Err(AugmentError::Image(ImageError::Size { .. }))
        ));
    }

    #[test]
    fn flip_frequencies_match_policy() {
        let policy = AugmentPolicy::default();
        let mut rng = ChaCha8Rng::seed_from_u64(99);
        let mut counts = [0usize; 4];
        for _ in 0..10_000 {
            let p = sample_params(&policy, &mut rng);
            counts[Flip::ALL.iter().position(|f| *f == p.flip).unwrap()] += 1;
            assert!((0.83..=1.2).contains(&p.scale));
            assert!((-30.0..=30.0).contains(&p.rotate_deg));
            assert!((-5..=5).contains(&p.shift.0) && (-5..=5).contains(&p.shift.1));
        }
        for c in counts {
            assert!((c as f64 / 10_000.0 - 0.25).abs() < 0.02, "{counts:?}");
        }
    }

    #[test]
    fn degenerate_flip_policy() {
        let policy = AugmentPolicy { flip_probs: [0.0, 1.0, 0.0, 0.0], ..Default::default() };
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        for _ in 0..100 {
            assert_eq!(sample_params(&policy, &mut rng).flip, Flip::Vertical);
        }
    }

    #[test]
    fn scale_to_base_cases() {
        let policy = AugmentPolicy::default();
        let img = noise(128, 6);
        assert_eq!(scale_to_base(&img, &policy).unwrap(), img);
        let flat = Image::filled(256, 256, [0.25, 0.5, 0.75]).unwrap();
        let scaled = scale_to_base(&flat, &policy).unwrap();
        assert_eq!(scaled, Image::filled(128, 128, [0.25, 0.5, 0.75]).unwrap());
    }

    #[test]
    fn training_set_shape_labels_and_determinism() {
        let policy = AugmentPolicy::default();
        let corpus: Vec<LabeledImage> = (0..100)
            .map(|i| LabeledImage { image: noise(40 + i % 7, i as u64), label: i % 10 })
            .collect();
        let a = build_training_set(&corpus, &policy, [0.5; 3], 7).unwrap();
        assert_eq!(a.len(), 400);
        for (k, ex) in a.iter().enumerate() {
            assert_eq!((ex.image.width(), ex.image.height()), (119, 119));
            assert_eq!(ex.label, corpus[k % 100].label);
            assert!(ex.image.data().iter().all(|v| v.is_finite()));
        }
        let b = build_training_set(&corpus, &policy, [0.5; 3], 7).unwrap();
        assert_eq!(a, b);
        let c = build_training_set(&corpus, &policy, [0.5; 3], 8).unwrap();
        assert_ne!(a, c);
        // Subsets are independent draws of the same source.
        assert_ne!(a[0].image, a[100].image);
    }

    #[test]
    fn empty_corpus_rejected() {
        assert!(matches!(
            build_training_set(&[], &AugmentPolicy::default(), [0.0; 3], 0),
            Err(AugmentError::EmptyCorpus)
        ));
    }
}
