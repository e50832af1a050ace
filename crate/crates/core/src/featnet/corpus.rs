//! Training corpora: a directory of images plus a label manifest.
//!
//! Manifest format (UTF-8 text, one entry per line):
//!
//! ```text
//! # comment lines and blank lines are ignored
//! relative/path/to/image.png 3
//! another image.ppm 0
//! ```
//!
//! The class index is the last whitespace-separated token of the line; the
//! path is everything before it (trimmed), so paths may contain spaces.
//! Paths are resolved relative to the corpus directory.

use std::path::{Path, PathBuf};

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use thiserror::Error;

use crate::img::{Image, ImageError};

/// Number of shuffled images the preprocessing mean is computed from.
pub const MEAN_RGB_SAMPLE: usize = 10_000;

#[derive(Debug, Error)]
pub enum CorpusError {
    #[error("manifest line {line}: {reason}")]
    Manifest { line: usize, reason: String },
    #[error("corpus is empty")]
    Empty,
    #[error("{path}: {source}")]
    Image { path: PathBuf, source: ImageError },
    #[error("manifest io: {0}")]
    Io(#[from] std::io::Error),
}

#[derive(Clone, Debug, PartialEq)]
pub struct LabeledImage {
    pub image: Image,
    pub label: usize,
}

pub fn parse_manifest(text: &str) -> Result<Vec<(PathBuf, usize)>, CorpusError> {
    let mut entries = Vec::new();
    for (i, raw) in text.lines().enumerate() {
        let line = raw.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let err = |reason: &str| CorpusError::Manifest {
            line: i + 1,
            reason: reason.to_string(),
        };
        let (path, class) = line
            .rsplit_once(char::is_whitespace)
            .ok_or_else(|| err("expected `<path> <class>`"))?;
        let class: usize = class.parse().map_err(|_| err("class must be a non-negative integer"))?;
        let path = path.trim();
        if path.is_empty() {
            return Err(err("missing path"));
        }
        entries.push((PathBuf::from(path), class));
    }
    Ok(entries)
}

pub fn load_corpus(dir: impl AsRef<Path>, manifest: impl AsRef<Path>) -> Result<Vec<LabeledImage>, CorpusError> {
    let dir = dir.as_ref();
    let entries = parse_manifest(&std::fs::read_to_string(manifest)?)?;
    entries
        .into_iter()
        .map(|(rel, label)| {
            let path = dir.join(rel);
            Image::load(&path)
                .map(|image| LabeledImage { image, label })
                .map_err(|source| CorpusError::Image { path, source })
        })
        .collect()
}

/// Per-channel mean over the first [`MEAN_RGB_SAMPLE`] images of a seeded
/// shuffle of the corpus, weighting every pixel equally.
pub fn compute_mean_rgb<'a>(
    images: impl IntoIterator<Item = &'a Image>,
    seed: u64,
) -> Result<[f32; 3], CorpusError> {
    let mut images: Vec<&Image> = images.into_iter().collect();
    if images.is_empty() {
        return Err(CorpusError::Empty);
    }
    images.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
    let mut sums = [0.0f64; 3];
    let mut pixels = 0usize;
    for img in images.iter().take(MEAN_RGB_SAMPLE) {
        let n = img.width() * img.height();
        for (s, m) in sums.iter_mut().zip(img.channel_means()) {
            *s += m * n as f64;
        }
        pixels += n;
    }
    Ok(sums.map(|s| (s / pixels as f64) as f32))
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::Rng;

    #[test]
    fn gray_corpus_mean() {
        let imgs = vec![Image::filled(8, 8, [0.5; 3]).unwrap(); 3];
        assert_eq!(compute_mean_rgb(&imgs, 0).unwrap(), [0.5; 3]);
    }

    #[test]
    fn black_and_white_average() {
        let imgs = [Image::filled(4, 4, [0.0; 3]).unwrap(), Image::filled(4, 4, [1.0; 3]).unwrap()];
        assert_eq!(compute_mean_rgb(&imgs, 3).unwrap(), [0.5; 3]);
    }

    #[test]
    fn random_corpus_matches_direct_sum() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let imgs: Vec<Image> = (0..20)
            .map(|_| Image::from_fn(5, 7, |_, _| [rng.gen(), rng.gen(), rng.gen()]).unwrap())
            .collect();
        let mut expect = [0.0f64; 3];
        let mut n = 0.0;
        for img in &imgs {
            for y in 0..7 {
                for x in 0..5 {
                    for (c, e) in expect.iter_mut().enumerate() {
                        *e += img.pixel(x, y)[c] as f64;
                    }
                    n += 1.0;
                }
            }
        }
        let got = compute_mean_rgb(&imgs, 5).unwrap();
        for c in 0..3 {
            assert!((got[c] as f64 - expect[c] / n).abs() < 1e-6);
        }
    }

    #[test]
    fn empty_corpus_is_an_error() {
        assert!(matches!(compute_mean_rgb(&Vec::<Image>::new(), 0), Err(CorpusError::Empty)));
    }

    #[test]
    fn manifest_parsing() {
        let m = parse_manifest("# header\n\na.png 3\nsub dir/b c.ppm\t12\n").unwrap();
        assert_eq!(m, vec![(PathBuf::from("a.png"), 3), (PathBuf::from("sub dir/b c.ppm"), 12)]);
        assert!(matches!(parse_manifest("a.png x"), Err(CorpusError::Manifest { line: 1, .. })));
        assert!(parse_manifest("justapath").is_err());
    }

    #[test]
    fn loads_corpus_from_disk() {
        let dir = tempfile::tempdir().unwrap();
        let img = Image::filled(3, 2, [1.0, 0.0, 0.0]).unwrap();
        img.save(dir.path().join("r.png")).unwrap();
        std::fs::write(dir.path().join("labels.txt"), "r.png 4\n").unwrap();
        let corpus = load_corpus(dir.path(), dir.path().join("labels.txt")).unwrap();
        assert_eq!(corpus, vec![LabeledImage { image: img, label: 4 }]);
    }
}
