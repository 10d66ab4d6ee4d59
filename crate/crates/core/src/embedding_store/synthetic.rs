//! Synthetic cross-modal datasets.
//!
//! Two orthonormal directions `u_img` and `u_txt` are drawn from the seed.
//! A record's image embedding is `normalize(noise + s * alpha * u_img)` with
//! `s = +/-1`, and likewise for text.
//!
//! - `xor`: image sign encodes bit `a`, text sign encodes bit `b`, and the
//!   label is `a XOR b`. No linear function of the averaged embedding
//!   separates the classes.
//! - `single_modality`: half the records carry the label in the image
//!   direction and pure noise as text (`image_signal`), the other half the
//!   reverse (`text_signal`).

use std::fmt;
use std::str::FromStr;

use rand::seq::SliceRandom;
use rand::Rng;
use rand_distr::StandardNormal;

use super::{Dataset, EmbeddingRecord, Label, MetaTag};
use crate::error::{Error, Result};
use crate::rng::{self, Purpose};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SyntheticMode {
    Xor,
    SingleModality,
}

impl fmt::Display for SyntheticMode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            SyntheticMode::Xor => "xor",
            SyntheticMode::SingleModality => "single_modality",
        })
    }
}

impl FromStr for SyntheticMode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "xor" => Ok(SyntheticMode::Xor),
            "single_modality" => Ok(SyntheticMode::SingleModality),
            other => Err(Error::InvalidArgument(format!(
                "unknown synthetic mode {other:?}"
            ))),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SyntheticConfig {
    pub n: usize,
    pub dim: usize,
    pub mode: SyntheticMode,
    /// Signal strength along the label direction.
    pub alpha: f64,
    /// Per-coordinate standard deviation of the isotropic noise.
    pub noise_sigma: f64,
    pub seed: u64,
}

impl Default for SyntheticConfig {
    fn default() -> Self {
        Self {
            n: 1000,
            dim: super::DEFAULT_DIM,
            mode: SyntheticMode::Xor,
            alpha: 0.5,
            noise_sigma: 0.1,
            seed: 0,
        }
    }
}

impl SyntheticConfig {
    fn validate(&self) -> Result<()> {
        if self.n < 2 {
            return Err(Error::InvalidArgument("synthetic n must be >= 2".into()));
        }
        if self.dim < 2 {
            return Err(Error::InvalidArgument(
                "synthetic dim must be >= 2 (two orthonormal directions)".into(),
            ));
        }
        if !(self.alpha > 0.0) || !self.alpha.is_finite() {
            return Err(Error::InvalidArgument(format!(
                "alpha must be positive, got {}",
                self.alpha
            )));
        }
        if !(self.noise_sigma >= 0.0) || !self.noise_sigma.is_finite() {
            return Err(Error::InvalidArgument(format!(
                "noise_sigma must be >= 0, got {}",
                self.noise_sigma
            )));
        }
        if self.mode == SyntheticMode::SingleModality && self.noise_sigma == 0.0 {
            return Err(Error::InvalidArgument(
                "single_modality needs noise_sigma > 0 (noise-only embeddings)".into(),
            ));
        }
        Ok(())
    }
}

fn normalize(v: &mut [f64]) -> f64 {
    let n = v.iter().map(|x| x * x).sum::<f64>().sqrt();
    v.iter_mut().for_each(|x| *x /= n);
    n
}

/// The two orthonormal signal directions `(u_img, u_txt)` for a seed.
pub fn synthetic_directions(dim: usize, seed: u64) -> (Vec<f64>, Vec<f64>) {
    let mut rng = rng::keyed(seed, Purpose::Synthetic, 0, 0);
    let mut u: Vec<f64> = (0..dim).map(|_| rng.sample(StandardNormal)).collect();
    let mut w: Vec<f64> = (0..dim).map(|_| rng.sample(StandardNormal)).collect();
    normalize(&mut u);
    let proj: f64 = u.iter().zip(&w).map(|(a, b)| a * b).sum();
    w.iter_mut().zip(&u).for_each(|(x, a)| *x -= proj * a);
    normalize(&mut w);
    (u, w)
}

fn embed(direction: &[f64], sign: f64, cfg: &SyntheticConfig, rng: &mut impl Rng) -> Vec<f32> {
    let mut v: Vec<f64> = direction
        .iter()
        .map(|&d| cfg.noise_sigma * rng.sample::<f64, _>(StandardNormal) + sign * cfg.alpha * d)
        .collect();
    normalize(&mut v);
    v.into_iter().map(|x| x as f32).collect()
}

fn noise_only(dim: usize, sigma: f64, rng: &mut impl Rng) -> Vec<f32> {
    let mut v: Vec<f64> = (0..dim)
        .map(|_| sigma * rng.sample::<f64, _>(StandardNormal))
        .collect();
    normalize(&mut v);
    v.into_iter().map(|x| x as f32).collect()
}

/// Generates a tagged (format version 2) dataset with ids `0..n`.
///
/// Labels are balanced to within one; in `single_modality` mode the two
/// groups are balanced to within one as well.
pub fn generate_synthetic(config: &SyntheticConfig) -> Result<Dataset> {
    config.validate()?;
    let (u_img, u_txt) = synthetic_directions(config.dim, config.seed);
    let sign = |bit: bool| if bit { 1.0 } else { -1.0 };

    // (label, image-carries-signal) assignments, balanced then shuffled
    let mut plan: Vec<(bool, bool)> = (0..config.n)
        .map(|i| (i % 2 == 1, (i / 2) % 2 == 0))
        .collect();
    plan.shuffle(&mut rng::keyed(config.seed, Purpose::Synthetic, 2, 0));

    let records = plan
        .into_iter()
        .enumerate()
        .map(|(i, (label, image_group))| {
            let mut rng = rng::keyed(config.seed, Purpose::Synthetic, 1, i as u64);
            let (image_emb, text_emb, meta_tag) = match config.mode {
                SyntheticMode::Xor => {
                    let a: bool = rng.random();
                    let b = a ^ label;
                    let img = embed(&u_img, sign(a), config, &mut rng);
                    let txt = embed(&u_txt, sign(b), config, &mut rng);
                    (img, txt, MetaTag::None)
                }
                SyntheticMode::SingleModality if image_group => {
                    let img = embed(&u_img, sign(label), config, &mut rng);
                    let txt = noise_only(config.dim, config.noise_sigma, &mut rng);
                    (img, txt, MetaTag::ImageSignal)
                }
                SyntheticMode::SingleModality => {
                    let img = noise_only(config.dim, config.noise_sigma, &mut rng);
                    let txt = embed(&u_txt, sign(label), config, &mut rng);
                    (img, txt, MetaTag::TextSignal)
                }
            };
            EmbeddingRecord {
                id: i as u64,
                label: Label::from_bit(label),
                image_emb,
                text_emb,
                flipped_image_emb: None,
                meta_tag,
            }
        })
        .collect();
    Dataset::new(config.dim, records, true)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::embedding_store::l2_norm;

    fn cfg(mode: SyntheticMode, n: usize, noise: f64, seed: u64) -> SyntheticConfig {
        SyntheticConfig {
            n,
            dim: 64,
            mode,
            alpha: 0.5,
            noise_sigma: noise,
            seed,
        }
    }

    #[test]
    fn directions_are_orthonormal() {
        let (u, w) = synthetic_directions(512, 3);
        let dot = |a: &[f64], b: &[f64]| a.iter().zip(b).map(|(x, y)| x * y).sum::<f64>();
        assert!((dot(&u, &u) - 1.0).abs() < 1e-12);
        assert!((dot(&w, &w) - 1.0).abs() < 1e-12);
        assert!(dot(&u, &w).abs() < 1e-12);
    }

    #[test]
    fn zero_noise_xor_hits_directions_exactly() {
        let c = cfg(SyntheticMode::Xor, 40, 0.0, 11);
        let d = generate_synthetic(&c).unwrap();
        let (u_img, u_txt) = synthetic_directions(c.dim, c.seed);
        let pos: Vec<f32> = u_img.iter().map(|&x| x as f32).collect();
        let neg: Vec<f32> = u_img.iter().map(|&x| -x as f32).collect();
        let tpos: Vec<f32> = u_txt.iter().map(|&x| x as f32).collect();
        let tneg: Vec<f32> = u_txt.iter().map(|&x| -x as f32).collect();
        let mut saw_a1_b0 = false;
        for r in d.records() {
            let a = r.image_emb == pos;
            assert!(a || r.image_emb == neg);
            let b = r.text_emb == tpos;
            assert!(b || r.text_emb == tneg);
            assert_eq!(r.label, Label::from_bit(a ^ b));
            if a && !b {
                saw_a1_b0 = true;
                assert_eq!(r.label, Label::Hateful);
            }
        }
        assert!(saw_a1_b0);
    }

    #[test]
    fn labels_balanced() {
        for (n, mode) in [
            (1000, SyntheticMode::Xor),
            (1001, SyntheticMode::SingleModality),
        ] {
            let d = generate_synthetic(&cfg(mode, n, 0.1, 5)).unwrap();
            let (b, h, u) = d.label_counts();
            assert_eq!(u, 0);
            assert!(b.abs_diff(h) <= 1, "{b} {h}");
            if n == 1000 {
                assert_eq!((b, h), (500, 500));
            }
        }
    }

    #[test]
    fn single_modality_groups_and_tags() {
        let d = generate_synthetic(&cfg(SyntheticMode::SingleModality, 400, 0.1, 6)).unwrap();
        let (u_img, u_txt) = synthetic_directions(64, 6);
        let proj = |v: &[f32], u: &[f64]| v.iter().zip(u).map(|(&a, b)| a as f64 * b).sum::<f64>();
        let mut groups = [0usize; 2];
        for r in d.records() {
            let s = if r.label == Label::Hateful { 1.0 } else { -1.0 };
            match r.meta_tag {
                MetaTag::ImageSignal => {
                    groups[0] += 1;
                    assert!(s * proj(&r.image_emb, &u_img) > 0.1);
                }
                MetaTag::TextSignal => {
                    groups[1] += 1;
                    assert!(s * proj(&r.text_emb, &u_txt) > 0.1);
                }
                MetaTag::None => panic!("untagged record"),
            }
        }
        assert_eq!(groups, [200, 200]);
    }

    #[test]
    fn unit_norm_and_deterministic() {
        for mode in [SyntheticMode::Xor, SyntheticMode::SingleModality] {
            let c = cfg(mode, 200, 0.3, 8);
            let d = generate_synthetic(&c).unwrap();
            for r in d.records() {
                assert!((l2_norm(&r.image_emb) - 1.0).abs() < 1e-6);
                assert!((l2_norm(&r.text_emb) - 1.0).abs() < 1e-6);
            }
            assert_eq!(d, generate_synthetic(&c).unwrap());
            assert!(d.is_tagged());
            assert_ne!(
                d,
                generate_synthetic(&SyntheticConfig { seed: 9, ..c }).unwrap()
            );
        }
    }

    #[test]
    fn rejects_bad_config() {
        let ok = cfg(SyntheticMode::Xor, 10, 0.1, 0);
        assert!(generate_synthetic(&SyntheticConfig { n: 1, ..ok.clone() }).is_err());
        assert!(generate_synthetic(&SyntheticConfig {
            alpha: 0.0,
            ..ok.clone()
        })
        .is_err());
        assert!(generate_synthetic(&SyntheticConfig {
            noise_sigma: -1.0,
            ..ok.clone()
        })
        .is_err());
        assert!(generate_synthetic(&SyntheticConfig {
            mode: SyntheticMode::SingleModality,
            noise_sigma: 0.0,
            ..ok
        })
        .is_err());
    }
}
