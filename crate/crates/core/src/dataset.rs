//! Directory-of-categories image corpora and stratified, seeded splits.

use std::fmt::{self, Write as _};
use std::fs;
use std::path::{Path, PathBuf};

use image::{DynamicImage, ImageReader};
use rand::seq::SliceRandom;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::image::GrayImage;
use crate::seed;

/// Grayscale images of one shared size with category labels.
#[derive(Debug, Clone)]
pub struct ImageSet {
    images: Vec<GrayImage>,
    labels: Vec<usize>,
    category_names: Vec<String>,
    source_paths: Vec<String>,
    height: usize,
    width: usize,
}

impl ImageSet {
    pub fn new(
        images: Vec<GrayImage>,
        labels: Vec<usize>,
        category_names: Vec<String>,
        source_paths: Vec<String>,
    ) -> Result<Self> {
        let invalid = |msg: String| Err(Error::InvalidArgument(msg));
        if images.is_empty() {
            return invalid("image set is empty".into());
        }
        if labels.len() != images.len() || source_paths.len() != images.len() {
            return invalid("labels and paths must match the image count".into());
        }
        let (height, width) = (images[0].height(), images[0].width());
        if let Some(i) = images
            .iter()
            .position(|im| im.height() != height || im.width() != width)
        {
            return Err(Error::MixedDimensions {
                path: PathBuf::from(&source_paths[i]),
                got_h: images[i].height(),
                got_w: images[i].width(),
                want_h: height,
                want_w: width,
            });
        }
        let n_categories = category_names.len();
        let mut seen = vec![false; n_categories];
        for &l in &labels {
            if l >= n_categories {
                return invalid(format!("label {l} outside [0, {n_categories})"));
            }
            seen[l] = true;
        }
        if let Some(c) = seen.iter().position(|s| !s) {
            return Err(Error::EmptyCategory(category_names[c].clone()));
        }
        if images
            .iter()
            .any(|im| im.pixels().iter().any(|v| !(0.0..=1.0).contains(v)))
        {
            return invalid("intensities must lie in [0, 1]".into());
        }
        Ok(Self {
            images,
            labels,
            category_names,
            source_paths,
            height,
            width,
        })
    }

    pub fn len(&self) -> usize {
        self.images.len()
    }

    pub fn is_empty(&self) -> bool {
        self.images.is_empty()
    }

    pub fn n_categories(&self) -> usize {
        self.category_names.len()
    }

    pub fn images(&self) -> &[GrayImage] {
        &self.images
    }

    pub fn labels(&self) -> &[usize] {
        &self.labels
    }

    pub fn category_names(&self) -> &[String] {
        &self.category_names
    }

    pub fn source_paths(&self) -> &[String] {
        &self.source_paths
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn width(&self) -> usize {
        self.width
    }

    /// Sample indices of each category, in set order.
    pub fn indices_by_category(&self) -> Vec<Vec<usize>> {
        let mut out = vec![Vec::new(); self.n_categories()];
        for (i, &l) in self.labels.iter().enumerate() {
            out[l].push(i);
        }
        out
    }

    /// New set holding `indices` in the given order. Category list is kept,
    /// so categories absent from `indices` are allowed here.
    pub fn select(&self, indices: &[usize]) -> ImageSet {
        ImageSet {
            images: indices.iter().map(|&i| self.images[i].clone()).collect(),
            labels: indices.iter().map(|&i| self.labels[i]).collect(),
            category_names: self.category_names.clone(),
            source_paths: indices.iter().map(|&i| self.source_paths[i].clone()).collect(),
            height: self.height,
            width: self.width,
        }
    }
}

/// Decodes an image file to grayscale intensities in [0, 1] using
/// 0.299 R + 0.587 G + 0.114 B for colour inputs.
pub fn load_gray(path: &Path) -> Result<GrayImage> {
    let decode_err = |reason: String| Error::Decode {
        path: path.to_path_buf(),
        reason,
    };
    let img = ImageReader::open(path)
        .map_err(|e| decode_err(e.to_string()))?
        .with_guessed_format()
        .map_err(|e| decode_err(e.to_string()))?
        .decode()
        .map_err(|e| decode_err(e.to_string()))?;
    Ok(to_gray(&img))
}

fn to_gray(img: &DynamicImage) -> GrayImage {
    let (w, h) = (img.width() as usize, img.height() as usize);
    let wide = matches!(
        img,
        DynamicImage::ImageLuma16(_)
            | DynamicImage::ImageLumaA16(_)
            | DynamicImage::ImageRgb16(_)
            | DynamicImage::ImageRgba16(_)
    );
    let data: Vec<f64> = match (img.color().has_color(), wide) {
        (false, false) => img
            .to_luma8()
            .into_raw()
            .into_iter()
            .map(|v| f64::from(v) / 255.0)
            .collect(),
        (false, true) => img
            .to_luma16()
            .into_raw()
            .into_iter()
            .map(|v| f64::from(v) / 65535.0)
            .collect(),
        (true, false) => img
            .to_rgb8()
            .into_raw()
            .chunks_exact(3)
            .map(|p| luma(f64::from(p[0]), f64::from(p[1]), f64::from(p[2])) / 255.0)
            .collect(),
        (true, true) => img
            .to_rgb16()
            .into_raw()
            .chunks_exact(3)
            .map(|p| luma(f64::from(p[0]), f64::from(p[1]), f64::from(p[2])) / 65535.0)
            .collect(),
    };
    GrayImage::new(h, w, data.into_iter().map(|v| v.clamp(0.0, 1.0)).collect())
        .expect("decoded buffer matches its dimensions")
}

#[inline]
fn luma(r: f64, g: f64, b: f64) -> f64 {
    0.299 * r + 0.587 * g + 0.114 * b
}

fn sorted_entries(dir: &Path) -> Result<Vec<PathBuf>> {
    let mut entries: Vec<PathBuf> = fs::read_dir(dir)?
        .filter_map(|e| e.ok())
        .map(|e| e.path())
        .filter(|p| {
            p.file_name()
                .and_then(|n| n.to_str())
                .is_some_and(|n| !n.starts_with('.'))
        })
        .collect();
    entries.sort();
    Ok(entries)
}

/// Loads `root/<category>/<image>` into an [`ImageSet`]. Categories are
/// labelled in lexicographic directory order; every visible regular file
/// inside a category directory must decode.
pub fn load_dataset(root: &Path, resize_to: Option<(usize, usize)>) -> Result<ImageSet> {
    if !root.is_dir() {
        return Err(Error::NoCategories(root.to_path_buf()));
    }
    let categories: Vec<PathBuf> = sorted_entries(root)?.into_iter().filter(|p| p.is_dir()).collect();
    if categories.is_empty() {
        return Err(Error::NoCategories(root.to_path_buf()));
    }

    let mut files = Vec::new();
    let mut category_names = Vec::with_capacity(categories.len());
    for (label, dir) in categories.iter().enumerate() {
        let name = dir
            .file_name()
            .map(|n| n.to_string_lossy().into_owned())
            .unwrap_or_default();
        let images: Vec<PathBuf> = sorted_entries(dir)?.into_iter().filter(|p| p.is_file()).collect();
        if images.is_empty() {
            return Err(Error::EmptyCategory(name));
        }
        files.extend(images.into_iter().map(|p| (label, p)));
        category_names.push(name);
    }

    let decoded: Vec<GrayImage> = files
        .par_iter()
        .map(|(_, path)| {
            let img = load_gray(path)?;
            Ok(match resize_to {
                Some((h, w)) => img.resize_bilinear(h, w),
                None => img,
            })
        })
        .collect::<Result<_>>()?;

    let (labels, paths): (Vec<usize>, Vec<String>) = files
        .into_iter()
        .map(|(l, p)| (l, p.to_string_lossy().into_owned()))
        .unzip();
    ImageSet::new(decoded, labels, category_names, paths)
}

/// How samples are assigned to learn/validation/test.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "scheme", rename_all = "snake_case", deny_unknown_fields)]
pub enum SplitScheme {
    /// `train_fraction` of every category goes to training, of which
    /// `val_fraction` is held out for validation.
    Fraction {
        train_fraction: f64,
        #[serde(default = "default_val_fraction")]
        val_fraction: f64,
    },
    /// A fixed number of training samples per category.
    PerCategory {
        n_train: usize,
        #[serde(default = "default_val_fraction")]
        val_fraction: f64,
    },
    /// The first `k_first` samples of each category (set order) plus
    /// `k_random` more drawn at random go to training.
    FixedFirstKPlusRandom {
        k_first: usize,
        k_random: usize,
        #[serde(default = "default_val_fraction")]
        val_fraction: f64,
    },
}

fn default_val_fraction() -> f64 {
    0.1
}

impl SplitScheme {
    fn val_fraction(&self) -> f64 {
        match *self {
            SplitScheme::Fraction { val_fraction, .. }
            | SplitScheme::PerCategory { val_fraction, .. }
            | SplitScheme::FixedFirstKPlusRandom { val_fraction, .. } => val_fraction,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let vf = self.val_fraction();
        if !(0.0..1.0).contains(&vf) {
            return Err(Error::Config(format!("val_fraction {vf} outside [0, 1)")));
        }
        if let SplitScheme::Fraction { train_fraction, .. } = *self {
            if !(train_fraction > 0.0 && train_fraction < 1.0) {
                return Err(Error::Config(format!("train_fraction {train_fraction} outside (0, 1)")));
            }
        }
        Ok(())
    }
}

impl fmt::Display for SplitScheme {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match *self {
            SplitScheme::Fraction {
                train_fraction,
                val_fraction,
            } => write!(
                f,
                "fraction train_fraction={train_fraction} val_fraction={val_fraction}"
            ),
            SplitScheme::PerCategory { n_train, val_fraction } => {
                write!(f, "per_category n_train={n_train} val_fraction={val_fraction}")
            }
            SplitScheme::FixedFirstKPlusRandom {
                k_first,
                k_random,
                val_fraction,
            } => write!(
                f,
                "fixed_first_k_plus_random k_first={k_first} k_random={k_random} val_fraction={val_fraction}"
            ),
        }
    }
}

/// Disjoint, sorted learn/validation/test index sets.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SplitPlan {
    pub learn_idx: Vec<usize>,
    pub val_idx: Vec<usize>,
    pub test_idx: Vec<usize>,
    pub seed: u64,
    pub scheme: SplitScheme,
}

impl SplitPlan {
    /// Plain-text record: seed, scheme, then the three sorted index lists.
    pub fn to_text(&self) -> String {
        let list = |v: &[usize]| v.iter().map(usize::to_string).collect::<Vec<_>>().join(" ");
        let mut s = String::new();
        let _ = writeln!(s, "seed {}", self.seed);
        let _ = writeln!(s, "scheme {}", self.scheme);
        let _ = writeln!(s, "learn {}", list(&self.learn_idx));
        let _ = writeln!(s, "val {}", list(&self.val_idx));
        let _ = writeln!(s, "test {}", list(&self.test_idx));
        s
    }
}

/// Splits `total` into integer parts proportional to `quotas` (which must
/// sum to `total` up to rounding). Floors first, then hands the remainder to
/// the largest fractional parts, lower index first on ties.
fn largest_remainder(quotas: &[f64], total: usize) -> Vec<usize> {
    let mut counts: Vec<usize> = quotas.iter().map(|q| q.floor() as usize).collect();
    let assigned: usize = counts.iter().sum();
    let mut order: Vec<usize> = (0..quotas.len()).collect();
    order.sort_by(|&a, &b| {
        let ra = quotas[a] - quotas[a].floor();
        let rb = quotas[b] - quotas[b].floor();
        rb.total_cmp(&ra).then(a.cmp(&b))
    });
    for &c in order.iter().take(total.saturating_sub(assigned)) {
        counts[c] += 1;
    }
    counts
}

fn round_half_up(x: f64) -> usize {
    (x + 0.5 + 1e-9).floor() as usize
}

/// Draws a stratified split. Each category's samples are shuffled by a
/// generator seeded from `seed` (categories in index order); validation
/// samples are taken from the front of each category's training share.
pub fn make_split(set: &ImageSet, scheme: SplitScheme, seed: u64) -> Result<SplitPlan> {
    scheme.validate()?;
    let by_cat = set.indices_by_category();
    let sizes: Vec<usize> = by_cat.iter().map(Vec::len).collect();
    let n_total: usize = sizes.iter().sum();

    let train_counts: Vec<usize> = match scheme {
        SplitScheme::Fraction { train_fraction, .. } => {
            let quotas: Vec<f64> = sizes.iter().map(|&n| n as f64 * train_fraction).collect();
            largest_remainder(&quotas, round_half_up(n_total as f64 * train_fraction))
        }
        SplitScheme::PerCategory { n_train, .. } => vec![n_train; sizes.len()],
        SplitScheme::FixedFirstKPlusRandom { k_first, k_random, .. } => vec![k_first + k_random; sizes.len()],
    };
    for (c, (&t, &n)) in train_counts.iter().zip(&sizes).enumerate() {
        if t >= n {
            return Err(Error::InfeasibleSplit(format!(
                "category '{}' has {n} samples but {t} are requested for training \
                 (at least one test sample is required)",
                set.category_names()[c]
            )));
        }
    }
    let n_train: usize = train_counts.iter().sum();
    if n_train == 0 {
        return Err(Error::InfeasibleSplit("no training samples".into()));
    }

    let vf = scheme.val_fraction();
    let val_quotas: Vec<f64> = train_counts.iter().map(|&t| t as f64 * vf).collect();
    let val_counts = largest_remainder(&val_quotas, round_half_up(n_train as f64 * vf));
    if val_counts.iter().zip(&train_counts).any(|(&v, &t)| t > 0 && v >= t) {
        return Err(Error::InfeasibleSplit(
            "validation share leaves a category without learning samples".into(),
        ));
    }

    let mut rng = seed::rng(seed);
    let (mut learn, mut val, mut test) = (Vec::new(), Vec::new(), Vec::new());
    for (c, members) in by_cat.iter().enumerate() {
        let train: Vec<usize> = match scheme {
            SplitScheme::FixedFirstKPlusRandom { k_first, k_random, .. } => {
                let mut rest = members[k_first..].to_vec();
                rest.shuffle(&mut rng);
                let mut train = members[..k_first].to_vec();
                train.extend_from_slice(&rest[..k_random]);
                test.extend_from_slice(&rest[k_random..]);
                train.shuffle(&mut rng);
                train
            }
            _ => {
                let mut shuffled = members.clone();
                shuffled.shuffle(&mut rng);
                test.extend_from_slice(&shuffled[train_counts[c]..]);
                shuffled.truncate(train_counts[c]);
                shuffled
            }
        };
        val.extend_from_slice(&train[..val_counts[c]]);
        learn.extend_from_slice(&train[val_counts[c]..]);
    }
    learn.sort_unstable();
    val.sort_unstable();
    test.sort_unstable();
    Ok(SplitPlan {
        learn_idx: learn,
        val_idx: val,
        test_idx: test,
        seed,
        scheme,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn toy_set(per_category: &[usize]) -> ImageSet {
        let mut images = Vec::new();
        let mut labels = Vec::new();
        let mut paths = Vec::new();
        for (c, &n) in per_category.iter().enumerate() {
            for i in 0..n {
                images.push(GrayImage::filled(2, 2, (c as f64 + 1.0) / 100.0));
                labels.push(c);
                paths.push(format!("c{c}/{i}"));
            }
        }
        let names = (0..per_category.len()).map(|c| format!("c{c}")).collect();
        ImageSet::new(images, labels, names, paths).unwrap()
    }

    #[test]
    fn fraction_scheme_matches_worked_example() {
        let set = toy_set(&[20; 10]);
        let scheme = SplitScheme::Fraction {
            train_fraction: 0.5,
            val_fraction: 0.1,
        };
        let plan = make_split(&set, scheme, 3).unwrap();
        assert_eq!(plan.learn_idx.len(), 90);
        assert_eq!(plan.val_idx.len(), 10);
        assert_eq!(plan.test_idx.len(), 100);
    }

    #[test]
    fn per_category_counts() {
        let set = toy_set(&[10; 10]);
        let plan = make_split(
            &set,
            SplitScheme::PerCategory {
                n_train: 5,
                val_fraction: 0.2,
            },
            11,
        )
        .unwrap();
        for c in 0..10 {
            let count = |idx: &[usize]| idx.iter().filter(|&&i| set.labels()[i] == c).count();
            assert_eq!(count(&plan.test_idx), 5);
            assert_eq!(count(&plan.learn_idx), 4);
            assert_eq!(count(&plan.val_idx), 1);
        }
    }

    #[test]
    fn taking_every_sample_for_training_is_rejected() {
        let set = toy_set(&[4, 4]);
        let err = make_split(
            &set,
            SplitScheme::PerCategory {
                n_train: 4,
                val_fraction: 0.0,
            },
            0,
        )
        .unwrap_err();
        assert!(matches!(err, Error::InfeasibleSplit(_)));
    }

    #[test]
    fn remainders_go_to_lowest_categories() {
        // 3 categories x 5 train, val 0.1 -> quota 0.5 each, total round(1.5) = 2
        let set = toy_set(&[8, 8, 8]);
        let plan = make_split(
            &set,
            SplitScheme::PerCategory {
                n_train: 5,
                val_fraction: 0.1,
            },
            5,
        )
        .unwrap();
        let val_per_cat: Vec<usize> = (0..3)
            .map(|c| plan.val_idx.iter().filter(|&&i| set.labels()[i] == c).count())
            .collect();
        assert_eq!(val_per_cat, vec![1, 1, 0]);
    }

    #[test]
    fn fixed_first_k_keeps_leading_samples_in_training() {
        let set = toy_set(&[6, 6]);
        let plan = make_split(
            &set,
            SplitScheme::FixedFirstKPlusRandom {
                k_first: 2,
                k_random: 1,
                val_fraction: 0.0,
            },
            9,
        )
        .unwrap();
        for first in [0, 1, 6, 7] {
            assert!(plan.learn_idx.contains(&first));
        }
        assert_eq!(plan.learn_idx.len(), 6);
        assert_eq!(plan.test_idx.len(), 6);
    }

    #[test]
    fn split_text_record_lists_sorted_indices() {
        let set = toy_set(&[3, 3]);
        let plan = make_split(
            &set,
            SplitScheme::PerCategory {
                n_train: 2,
                val_fraction: 0.0,
            },
            1,
        )
        .unwrap();
        let text = plan.to_text();
        assert!(text.starts_with("seed 1\nscheme per_category n_train=2 val_fraction=0\n"));
        assert_eq!(text.lines().count(), 5);
    }

    #[test]
    fn imageset_rejects_out_of_range_intensity() {
        let err = ImageSet::new(
            vec![GrayImage::filled(1, 1, 1.5)],
            vec![0],
            vec!["a".into()],
            vec!["a/0".into()],
        );
        assert!(err.is_err());
    }
}
