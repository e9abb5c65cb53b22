//! Stochastic views and mixed batches.
//!
//! Each sample/view pair draws from its own RNG stream keyed by
//! `(seed, epoch, sample_index, view_id)`, so the augmented batch does not
//! depend on batch composition, iteration order or thread count.

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Gamma};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::data::ImageShape;
use crate::error::{Error, Result};
use crate::tensor::Tensor;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct AugmentConfig {
    /// Crop side length as a fraction of the image side, drawn uniformly.
    pub crop_scale_min: f64,
    pub crop_scale_max: f64,
    pub flip_prob: f64,
    pub jitter_prob: f64,
    /// Multiplicative intensity factor range.
    pub gain_min: f64,
    pub gain_max: f64,
    /// Additive intensity offset range.
    pub shift_min: f64,
    pub shift_max: f64,
}

impl Default for AugmentConfig {
    fn default() -> Self {
        AugmentConfig {
            crop_scale_min: 0.6,
            crop_scale_max: 1.0,
            flip_prob: 0.5,
            jitter_prob: 0.8,
            gain_min: 0.8,
            gain_max: 1.2,
            shift_min: -0.1,
            shift_max: 0.1,
        }
    }
}

impl AugmentConfig {
    /// Configuration under which every view equals its source image.
    pub fn identity() -> Self {
        AugmentConfig {
            crop_scale_min: 1.0,
            crop_scale_max: 1.0,
            flip_prob: 0.0,
            jitter_prob: 0.0,
            ..Self::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        let unit = |name: &str, v: f64| {
            if (0.0..=1.0).contains(&v) {
                Ok(())
            } else {
                Err(Error::Config(format!("{name} must be in [0, 1], got {v}")))
            }
        };
        unit("aug_flip_prob", self.flip_prob)?;
        unit("aug_jitter_prob", self.jitter_prob)?;
        if !(self.crop_scale_min > 0.0
            && self.crop_scale_min <= self.crop_scale_max
            && self.crop_scale_max <= 1.0)
        {
            return Err(Error::Config(format!(
                "crop scale range must satisfy 0 < min <= max <= 1, got [{}, {}]",
                self.crop_scale_min, self.crop_scale_max
            )));
        }
        if !(self.gain_min <= self.gain_max && self.shift_min <= self.shift_max) {
            return Err(Error::Config("jitter ranges must have min <= max".into()));
        }
        Ok(())
    }
}

/// Two augmented views of the same images, row-aligned.
#[derive(Clone, Debug, PartialEq)]
pub struct ViewPair {
    pub y_a: Tensor,
    pub y_b: Tensor,
    /// Dataset index of each row; together with the epoch this identifies
    /// the RNG streams that produced the row.
    pub sample_ids: Vec<usize>,
}

/// A validated permutation of `0..n`.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Permutation(Vec<usize>);

impl Permutation {
    pub fn new(p: Vec<usize>) -> Result<Self> {
        let mut seen = vec![false; p.len()];
        for &i in &p {
            if i >= p.len() || seen[i] {
                return Err(Error::Permutation(format!("{p:?} is not a permutation")));
            }
            seen[i] = true;
        }
        Ok(Permutation(p))
    }

    pub fn identity(n: usize) -> Self {
        Permutation((0..n).collect())
    }

    /// Uniform random permutation by Fisher-Yates shuffle.
    pub fn random(n: usize, rng: &mut impl Rng) -> Self {
        let mut p: Vec<usize> = (0..n).collect();
        p.shuffle(rng);
        Permutation(p)
    }

    pub fn as_slice(&self) -> &[usize] {
        &self.0
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }
}

/// `y_m = lambda·y_a + (1-lambda)·y_b[perm]`, with the permutation kept for
/// the ground-truth correlations.
#[derive(Clone, Debug, PartialEq)]
pub struct MixedBatch {
    pub y_m: Tensor,
    pub lambda: f64,
    pub perm: Permutation,
}

/// Deterministic 64-bit seed for a tuple of stream coordinates.
pub fn stream_seed(parts: &[u64]) -> u64 {
    // splitmix64 finalizer folded over the parts
    let mut h: u64 = 0x243F_6A88_85A3_08D3;
    for &p in parts {
        h ^= p;
        h = h.wrapping_add(0x9E37_79B9_7F4A_7C15);
        h = (h ^ (h >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
        h = (h ^ (h >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
        h ^= h >> 31;
    }
    h
}

pub fn keyed_rng(parts: &[u64]) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(stream_seed(parts))
}

const VIEW_STREAM: u64 = 0x5649_4557;

/// Mirrors every row of every channel plane.
pub fn hflip(img: &[f64], shape: ImageShape) -> Vec<f64> {
    let (h, w) = (shape.height, shape.width);
    let mut out = img.to_vec();
    for c in 0..shape.channels {
        for y in 0..h {
            let base = c * h * w + y * w;
            out[base..base + w].reverse();
        }
    }
    out
}

/// Crops the `crop_h × crop_w` window at `(top, left)` and resizes it back to
/// the full image with bilinear interpolation (corner-aligned, so a full-size
/// crop is returned unchanged).
pub fn crop_resize(
    img: &[f64],
    shape: ImageShape,
    top: usize,
    left: usize,
    crop_h: usize,
    crop_w: usize,
) -> Vec<f64> {
    let (h, w) = (shape.height, shape.width);
    let axis = |out_len: usize, in_len: usize, i: usize| -> (usize, usize, f64) {
        if out_len <= 1 || in_len <= 1 {
            return (0, 0, 0.0);
        }
        let pos = i as f64 * (in_len - 1) as f64 / (out_len - 1) as f64;
        let lo = (pos.floor() as usize).min(in_len - 1);
        let hi = (lo + 1).min(in_len - 1);
        (lo, hi, pos - lo as f64)
    };
    let mut out = vec![0.0; img.len()];
    for c in 0..shape.channels {
        let plane = &img[c * h * w..(c + 1) * h * w];
        for y in 0..h {
            let (y0, y1, fy) = axis(h, crop_h, y);
            for x in 0..w {
                let (x0, x1, fx) = axis(w, crop_w, x);
                let px = |yy: usize, xx: usize| plane[(top + yy) * w + left + xx];
                let v = if fx == 0.0 && fy == 0.0 {
                    px(y0, x0)
                } else {
                    let top_row = px(y0, x0) * (1.0 - fx) + px(y0, x1) * fx;
                    let bottom_row = px(y1, x0) * (1.0 - fx) + px(y1, x1) * fx;
                    top_row * (1.0 - fy) + bottom_row * fy
                };
                out[c * h * w + y * w + x] = v;
            }
        }
    }
    out
}

/// One stochastic view of one image: crop-and-resize, flip, intensity jitter.
pub fn augment_image(
    img: &[f64],
    shape: ImageShape,
    cfg: &AugmentConfig,
    rng: &mut impl Rng,
) -> Vec<f64> {
    let (h, w) = (shape.height, shape.width);
    let scale = if cfg.crop_scale_min < cfg.crop_scale_max {
        rng.random_range(cfg.crop_scale_min..=cfg.crop_scale_max)
    } else {
        cfg.crop_scale_min
    };
    let crop_h = ((scale * h as f64).round() as usize).clamp(1, h);
    let crop_w = ((scale * w as f64).round() as usize).clamp(1, w);
    let mut out = if crop_h == h && crop_w == w {
        img.to_vec()
    } else {
        let top = rng.random_range(0..=h - crop_h);
        let left = rng.random_range(0..=w - crop_w);
        crop_resize(img, shape, top, left, crop_h, crop_w)
    };
    if cfg.flip_prob > 0.0 && rng.random_bool(cfg.flip_prob) {
        out = hflip(&out, shape);
    }
    if cfg.jitter_prob > 0.0 && rng.random_bool(cfg.jitter_prob) {
        let gain = rng.random_range(cfg.gain_min..=cfg.gain_max);
        let shift = rng.random_range(cfg.shift_min..=cfg.shift_max);
        out.iter_mut()
            .for_each(|v| *v = (*v * gain + shift).clamp(0.0, 1.0));
    }
    out
}

/// Two independently augmented copies of `images`. Row `r` is keyed by
/// `sample_ids[r]`.
pub fn make_views(
    images: &Tensor,
    sample_ids: &[usize],
    shape: ImageShape,
    epoch: usize,
    seed: u64,
    cfg: &AugmentConfig,
) -> Result<ViewPair> {
    let (n, dim) = images.expect_matrix("make_views")?;
    if dim != shape.pixels() {
        return Err(Error::dim(
            "make_views",
            format!("row width {dim} but image shape holds {}", shape.pixels()),
        ));
    }
    if sample_ids.len() != n {
        return Err(Error::dim(
            "make_views",
            format!("{} sample ids for {n} rows", sample_ids.len()),
        ));
    }
    if let Some(v) = images.data().iter().find(|v| !(0.0..=1.0).contains(*v)) {
        return Err(Error::InputRange(format!("pixel value {v} outside [0, 1]")));
    }
    let view = |view_id: u64| -> Result<Tensor> {
        let rows: Vec<Vec<f64>> = (0..n)
            .into_par_iter()
            .map(|r| {
                let mut rng = keyed_rng(&[
                    VIEW_STREAM,
                    seed,
                    epoch as u64,
                    sample_ids[r] as u64,
                    view_id,
                ]);
                augment_image(images.row(r), shape, cfg, &mut rng)
            })
            .collect();
        Tensor::new(vec![n, dim], rows.concat())
    };
    Ok(ViewPair {
        y_a: view(0)?,
        y_b: view(1)?,
        sample_ids: sample_ids.to_vec(),
    })
}

/// Draws the mix ratio from `Beta(alpha, alpha)`, strictly inside `(0, 1)`.
pub fn sample_lambda(alpha: f64, rng: &mut impl Rng) -> Result<f64> {
    if !(alpha > 0.0 && alpha.is_finite()) {
        return Err(Error::Parameter(format!("Beta alpha must be > 0, got {alpha}")));
    }
    loop {
        let l = if alpha == 1.0 {
            rng.random::<f64>()
        } else {
            let g = Gamma::new(alpha, 1.0)
                .map_err(|e| Error::Parameter(format!("Gamma({alpha}, 1): {e}")))?;
            let x = g.sample(rng);
            let y = g.sample(rng);
            x / (x + y)
        };
        if l > 0.0 && l < 1.0 {
            return Ok(l);
        }
    }
}

/// Interpolates view A with the permuted view B.
pub fn mix_batch(pair: &ViewPair, lambda: f64, perm: Permutation) -> Result<MixedBatch> {
    if !(0.0..=1.0).contains(&lambda) {
        return Err(Error::Parameter(format!("mix ratio {lambda} outside [0, 1]")));
    }
    let (n, d) = pair.y_a.expect_matrix("mix_batch")?;
    if pair.y_b.shape() != pair.y_a.shape() {
        return Err(Error::dim("mix_batch", "views differ in shape"));
    }
    if perm.len() != n {
        return Err(Error::Permutation(format!(
            "permutation of {} for a batch of {n}",
            perm.len()
        )));
    }
    let mut y_m = Vec::with_capacity(n * d);
    for (i, &j) in perm.as_slice().iter().enumerate() {
        y_m.extend(
            pair.y_a
                .row(i)
                .iter()
                .zip(pair.y_b.row(j))
                .map(|(&a, &b)| lambda * a + (1.0 - lambda) * b),
        );
    }
    Ok(MixedBatch {
        y_m: Tensor::new(vec![n, d], y_m)?,
        lambda,
        perm,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn sq(h: usize, w: usize, c: usize) -> ImageShape {
        ImageShape {
            height: h,
            width: w,
            channels: c,
        }
    }

    fn images(n: usize, shape: ImageShape) -> Tensor {
        let d = shape.pixels();
        Tensor::new(
            vec![n, d],
            (0..n * d).map(|i| ((i * 7919) % 256) as f64 / 255.0).collect(),
        )
        .unwrap()
    }

    #[test]
    fn identity_config_is_noop() {
        let shape = sq(4, 4, 3);
        let x = images(5, shape);
        let ids: Vec<usize> = (0..5).collect();
        let v = make_views(&x, &ids, shape, 3, 11, &AugmentConfig::identity()).unwrap();
        assert_eq!(v.y_a, x);
        assert_eq!(v.y_b, x);
    }

    #[test]
    fn views_are_keyed_and_deterministic() {
        let shape = sq(6, 6, 1);
        let x = images(4, shape);
        let cfg = AugmentConfig::default();
        let a = make_views(&x, &[10, 11, 12, 13], shape, 2, 5, &cfg).unwrap();
        let b = make_views(&x, &[10, 11, 12, 13], shape, 2, 5, &cfg).unwrap();
        assert_eq!(a, b);
        assert_ne!(a.y_a, a.y_b);
        let c = make_views(&x, &[10, 11, 12, 13], shape, 3, 5, &cfg).unwrap();
        assert_ne!(a.y_a, c.y_a);

        // a row's view depends only on its own key, not its batch position
        let single = make_views(&x.select_rows(&[2]).unwrap(), &[12], shape, 2, 5, &cfg).unwrap();
        assert_eq!(single.y_a.row(0), a.y_a.row(2));
    }

    #[test]
    fn flip_index_arithmetic() {
        let out = hflip(&[1.0, 2.0, 3.0, 4.0], sq(2, 2, 1));
        assert_eq!(out, vec![2.0, 1.0, 4.0, 3.0]);
    }

    #[test]
    fn full_crop_resize_is_identity() {
        let shape = sq(5, 3, 2);
        let x = images(1, shape);
        assert_eq!(crop_resize(x.row(0), shape, 0, 0, 5, 3), x.row(0));
    }

    #[test]
    fn rejects_out_of_range_pixels() {
        let shape = sq(1, 2, 1);
        let x = Tensor::from_rows(&[[0.5, 1.5]]);
        assert!(matches!(
            make_views(&x, &[0], shape, 0, 0, &AugmentConfig::default()),
            Err(Error::InputRange(_))
        ));
    }

    #[test]
    fn lambda_uniform_mean() {
        let mut rng = ChaCha8Rng::seed_from_u64(42);
        let n = 100_000;
        let mut s = 0.0;
        for _ in 0..n {
            let l = sample_lambda(1.0, &mut rng).unwrap();
            assert!(l > 0.0 && l < 1.0);
            s += l;
        }
        assert!((s / n as f64 - 0.5).abs() < 0.01);
    }

    #[test]
    fn lambda_beta_support_and_reproducibility() {
        let mut a = ChaCha8Rng::seed_from_u64(1);
        let mut b = ChaCha8Rng::seed_from_u64(1);
        for _ in 0..1000 {
            let x = sample_lambda(0.4, &mut a).unwrap();
            assert!(x > 0.0 && x < 1.0);
            assert_eq!(x, sample_lambda(0.4, &mut b).unwrap());
        }
        assert!(sample_lambda(0.0, &mut a).is_err());
        assert!(sample_lambda(-1.0, &mut a).is_err());
    }

    #[test]
    fn mix_endpoints_and_midpoint() {
        let pair = ViewPair {
            y_a: Tensor::from_rows(&[[0.1, 0.2], [0.3, 0.4]]),
            y_b: Tensor::from_rows(&[[0.5, 0.6], [0.7, 0.8]]),
            sample_ids: vec![0, 1],
        };
        let p = Permutation::new(vec![1, 0]).unwrap();
        assert_eq!(mix_batch(&pair, 1.0, p.clone()).unwrap().y_m, pair.y_a);
        assert_eq!(
            mix_batch(&pair, 0.0, p.clone()).unwrap().y_m,
            pair.y_b.select_rows(&[1, 0]).unwrap()
        );
        let one = ViewPair {
            y_a: Tensor::from_rows(&[[0.0]]),
            y_b: Tensor::from_rows(&[[2.0]]),
            sample_ids: vec![0],
        };
        let m = mix_batch(&one, 0.5, Permutation::identity(1)).unwrap();
        assert_eq!(m.y_m.data(), &[1.0]);
        assert!(mix_batch(&pair, 0.5, Permutation::identity(3)).is_err());
        assert!(mix_batch(&pair, 1.5, p).is_err());
    }

    #[test]
    fn permutation_validation() {
        assert!(Permutation::new(vec![0, 0]).is_err());
        assert!(Permutation::new(vec![0, 2]).is_err());
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let p = Permutation::random(50, &mut rng);
        assert!(Permutation::new(p.as_slice().to_vec()).is_ok());
    }
}
