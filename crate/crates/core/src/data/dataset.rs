//! Paired hazy/clean datasets, read from disk or generated.

use std::collections::BTreeMap;
use std::fs;
use std::ops::Range;
use std::path::{Path, PathBuf};

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::data::haze::{synthesize_haze, synthetic_clean, HazeParams, HazePreset};
use crate::data::image::{load_image, save_image};
use crate::error::{Error, Result};
use crate::tensor::Tensor;

#[derive(Debug, Clone, PartialEq)]
pub enum Provenance {
    File { hazy: PathBuf, clean: PathBuf },
    Synthetic(HazeParams),
}

/// A hazy image and its clean reference, each `(1, 3, h, w)` in `[0, 1]`.
#[derive(Debug, Clone)]
pub struct ImagePair {
    pub id: String,
    pub hazy: Tensor<f32>,
    pub clean: Tensor<f32>,
    pub provenance: Provenance,
}

/// Relative split weights; the default 320 : 35 : 45 divides 400 pairs
/// exactly.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Split {
    pub train: f64,
    pub val: f64,
    pub test: f64,
}

impl Default for Split {
    fn default() -> Self {
        Split {
            train: 320.0,
            val: 35.0,
            test: 45.0,
        }
    }
}

impl Split {
    /// `(train, val, test)` counts for `n` pairs. Validation and test are
    /// rounded to nearest; training takes the rest.
    pub fn counts(&self, n: usize) -> Result<(usize, usize, usize)> {
        let total = self.train + self.val + self.test;
        if [self.train, self.val, self.test].iter().any(|w| !(*w >= 0.0)) || !(total > 0.0) {
            return Err(Error::Config(format!(
                "split weights must be non-negative with a positive sum, got {}/{}/{}",
                self.train, self.val, self.test
            )));
        }
        let part = |w: f64| ((n as f64) * w / total).round() as usize;
        let (val, test) = (part(self.val), part(self.test));
        let val = val.min(n);
        let test = test.min(n - val);
        Ok((n - val - test, val, test))
    }
}

#[derive(Debug, Clone)]
pub struct Dataset {
    pub pairs: Vec<ImagePair>,
    train: Range<usize>,
    val: Range<usize>,
    test: Range<usize>,
}

impl Dataset {
    /// Splits in order: the first pairs train, then validation, then test.
    pub fn new(pairs: Vec<ImagePair>, split: Split) -> Result<Self> {
        if pairs.is_empty() {
            return Err(Error::Dataset("no image pairs".into()));
        }
        let (tr, va, _) = split.counts(pairs.len())?;
        Ok(Dataset {
            train: 0..tr,
            val: tr..tr + va,
            test: tr + va..pairs.len(),
            pairs,
        })
    }

    pub fn len(&self) -> usize {
        self.pairs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.pairs.is_empty()
    }

    pub fn train(&self) -> &[ImagePair] {
        &self.pairs[self.train.clone()]
    }

    pub fn val(&self) -> &[ImagePair] {
        &self.pairs[self.val.clone()]
    }

    pub fn test(&self) -> &[ImagePair] {
        &self.pairs[self.test.clone()]
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SyntheticSpec {
    pub count: usize,
    pub height: usize,
    pub width: usize,
    /// `None` cycles through thin, moderate and thick.
    pub preset: Option<HazePreset>,
    pub seed: u64,
}

/// Pair `i` depends only on `seed` and `i`.
pub fn synthetic_pairs(spec: &SyntheticSpec) -> Result<Vec<ImagePair>> {
    if spec.height == 0 || spec.width == 0 {
        return Err(Error::Dataset("synthetic images need a positive size".into()));
    }
    (0..spec.count)
        .map(|i| {
            let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
            rng.set_stream(i as u64);
            let preset = spec.preset.unwrap_or(HazePreset::ALL[i % 3]);
            let clean = synthetic_clean(spec.height, spec.width, &mut rng);
            let params = HazeParams::sample(preset, &mut rng);
            let hazy = synthesize_haze(&clean, &params, &mut rng)?;
            Ok(ImagePair {
                id: format!("synth{i:04}_{}", preset.name()),
                hazy,
                clean,
                provenance: Provenance::Synthetic(params),
            })
        })
        .collect()
}

fn is_image(path: &Path) -> bool {
    path.extension()
        .and_then(|e| e.to_str())
        .is_some_and(|e| matches!(e.to_ascii_lowercase().as_str(), "png" | "ppm"))
}

fn list_images(dir: &Path) -> Result<BTreeMap<String, PathBuf>> {
    let entries = fs::read_dir(dir).map_err(|e| Error::io(dir, e))?;
    let mut out = BTreeMap::new();
    for entry in entries {
        let path = entry.map_err(|e| Error::io(dir, e))?.path();
        if path.is_file() && is_image(&path) {
            let stem = path
                .file_stem()
                .and_then(|s| s.to_str())
                .unwrap_or_default()
                .to_string();
            if let Some(prev) = out.insert(stem, path.clone()) {
                return Err(Error::Dataset(format!(
                    "{} and {} share a basename",
                    prev.display(),
                    path.display()
                )));
            }
        }
    }
    Ok(out)
}

/// Pairs `<root>/hazy/<name>` with `<root>/clean/<name>` by basename, in
/// sorted name order.
pub fn load_pairs(root: &Path) -> Result<Vec<ImagePair>> {
    if !root.is_dir() {
        return Err(Error::Dataset(format!("{} is not a directory", root.display())));
    }
    let hazy = list_images(&root.join("hazy"))?;
    let clean = list_images(&root.join("clean"))?;
    if let Some((_, p)) = hazy.iter().find(|(k, _)| !clean.contains_key(*k)) {
        return Err(Error::Dataset(format!("{} has no clean counterpart", p.display())));
    }
    if let Some((_, p)) = clean.iter().find(|(k, _)| !hazy.contains_key(*k)) {
        return Err(Error::Dataset(format!("{} has no hazy counterpart", p.display())));
    }
    if hazy.is_empty() {
        return Err(Error::Dataset(format!(
            "no images under {}",
            root.join("hazy").display()
        )));
    }
    hazy.into_iter()
        .map(|(id, hazy_path)| {
            let clean_path = clean[&id].clone();
            let h = load_image(&hazy_path)?;
            let c = load_image(&clean_path)?;
            if h.shape() != c.shape() {
                return Err(Error::Dataset(format!(
                    "{}: hazy {} and clean {} differ in size",
                    id,
                    h.shape(),
                    c.shape()
                )));
            }
            Ok(ImagePair {
                id,
                hazy: h,
                clean: c,
                provenance: Provenance::File {
                    hazy: hazy_path,
                    clean: clean_path,
                },
            })
        })
        .collect()
}

#[derive(Debug, Clone, PartialEq)]
pub enum Source {
    Dir(PathBuf),
    Synthetic(SyntheticSpec),
}

pub fn make_dataset(source: &Source, split: Split) -> Result<Dataset> {
    let pairs = match source {
        Source::Dir(root) => load_pairs(root)?,
        Source::Synthetic(spec) => synthetic_pairs(spec)?,
    };
    Dataset::new(pairs, split)
}

/// Writes `<root>/hazy/<id>.png` and `<root>/clean/<id>.png`.
pub fn write_pairs(root: &Path, pairs: &[ImagePair]) -> Result<()> {
    for sub in ["hazy", "clean"] {
        let dir = root.join(sub);
        fs::create_dir_all(&dir).map_err(|e| Error::io(&dir, e))?;
    }
    for p in pairs {
        save_image(&p.hazy, &root.join("hazy").join(format!("{}.png", p.id)))?;
        save_image(&p.clean, &root.join("clean").join(format!("{}.png", p.id)))?;
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn default_split_of_400() {
        assert_eq!(Split::default().counts(400).unwrap(), (320, 35, 45));
        assert_eq!(Split::default().counts(1).unwrap(), (1, 0, 0));
        let bad = Split {
            train: -1.0,
            ..Split::default()
        };
        assert!(bad.counts(10).is_err());
    }

    #[test]
    fn empty_dataset_is_an_error() {
        assert!(matches!(
            Dataset::new(Vec::new(), Split::default()),
            Err(Error::Dataset(_))
        ));
    }
}
