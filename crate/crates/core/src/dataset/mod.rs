//! Labeled datasets: label parsing, mirror and exposure augmentation, grouped
//! train/val/test splitting and epoch arithmetic.

mod manifest;

use std::collections::{BTreeMap, HashMap, HashSet};
use std::fmt;
use std::str::FromStr;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::DatasetError;
use crate::geometry::YoloBox;
use crate::image::Image;

pub use manifest::{label_path_for, load_manifest, materialize_augmentation, write_manifest};

/// Widest exposure change accepted, as a fraction of the original value.
pub const MAX_EXPOSURE_GAIN: f64 = 0.15;

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Split {
    Train,
    Val,
    Test,
}

impl Split {
    pub fn as_str(&self) -> &'static str {
        match self {
            Split::Train => "train",
            Split::Val => "val",
            Split::Test => "test",
        }
    }
}

impl fmt::Display for Split {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Split {
    type Err = DatasetError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "train" => Ok(Split::Train),
            "val" => Ok(Split::Val),
            "test" => Ok(Split::Test),
            other => Err(DatasetError::Manifest(format!("unknown split {other:?}"))),
        }
    }
}

/// One labeled image.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SampleLabel {
    pub image_id: String,
    /// Image location relative to the manifest directory.
    pub image_path: String,
    pub image_w: u32,
    pub image_h: u32,
    pub boxes: Vec<YoloBox>,
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct DatasetManifest {
    pub samples: Vec<SampleLabel>,
    pub split_of: BTreeMap<String, Split>,
    pub class_names: Vec<String>,
}

impl DatasetManifest {
    pub fn new(samples: Vec<SampleLabel>, class_names: Vec<String>) -> Self {
        Self {
            samples,
            split_of: BTreeMap::new(),
            class_names,
        }
    }

    pub fn validate(&self) -> Result<(), DatasetError> {
        let mut seen = HashSet::new();
        for s in &self.samples {
            if !seen.insert(s.image_id.as_str()) {
                return Err(DatasetError::IdCollision(s.image_id.clone()));
            }
            if s.image_w == 0 || s.image_h == 0 {
                return Err(DatasetError::Manifest(format!(
                    "{}: image dimensions must be positive",
                    s.image_id
                )));
            }
        }
        if let Some(k) = self.split_of.keys().find(|k| !seen.contains(k.as_str())) {
            return Err(DatasetError::Manifest(format!(
                "split assigned to unknown sample {k:?}"
            )));
        }
        Ok(())
    }

    /// Number of samples in (train, val, test).
    pub fn split_counts(&self) -> (usize, usize, usize) {
        self.split_of
            .values()
            .fold((0, 0, 0), |(tr, va, te), s| match s {
                Split::Train => (tr + 1, va, te),
                Split::Val => (tr, va + 1, te),
                Split::Test => (tr, va, te + 1),
            })
    }

    pub fn samples_in(&self, split: Split) -> impl Iterator<Item = &SampleLabel> {
        self.samples
            .iter()
            .filter(move |s| self.split_of.get(&s.image_id) == Some(&split))
    }
}

/// The id an augmented sample was derived from (`"a#mirror"` -> `"a"`).
pub fn source_id(image_id: &str) -> &str {
    image_id.split('#').next().unwrap_or(image_id)
}

/// Parses a darknet-style label file: one `class cx cy w h` record per line.
pub fn parse_label_file(text: &str) -> Result<Vec<YoloBox>, DatasetError> {
    let mut boxes = Vec::new();
    for (i, line) in text.lines().enumerate() {
        let line_no = i + 1;
        let fields: Vec<&str> = line.split_whitespace().collect();
        if fields.is_empty() {
            continue;
        }
        let err = |reason: String| DatasetError::Label {
            line: line_no,
            reason,
        };
        if fields.len() != 5 {
            return Err(err(format!("expected 5 fields, found {}", fields.len())));
        }
        let class_id: u32 = fields[0]
            .parse()
            .map_err(|_| err(format!("class id {:?} is not a non-negative integer", fields[0])))?;
        let mut vals = [0.0f64; 4];
        for (slot, raw) in vals.iter_mut().zip(&fields[1..]) {
            *slot = raw
                .parse()
                .map_err(|_| err(format!("{raw:?} is not a number")))?;
        }
        let b = YoloBox::new(class_id, vals[0], vals[1], vals[2], vals[3])
            .map_err(|e| err(e.to_string()))?;
        boxes.push(b);
    }
    Ok(boxes)
}

pub fn format_label_file(boxes: &[YoloBox]) -> String {
    boxes
        .iter()
        .map(|b| format!("{} {} {} {} {}\n", b.class_id, b.cx, b.cy, b.w, b.h))
        .collect()
}

pub fn mirror_image(img: &Image) -> Image {
    let (w, h) = (img.width(), img.height());
    let row = w as usize * 3;
    let src = img.as_raw();
    let mut out = Vec::with_capacity(src.len());
    for y in 0..h as usize {
        let line = &src[y * row..(y + 1) * row];
        for px in line.chunks_exact(3).rev() {
            out.extend_from_slice(px);
        }
    }
    Image::new(w, h, out).expect("same dimensions as source")
}

/// Mirrors the boxes of a label horizontally. The id is left untouched.
pub fn mirror_label(label: &SampleLabel) -> SampleLabel {
    SampleLabel {
        boxes: label
            .boxes
            .iter()
            .map(|b| YoloBox { cx: 1.0 - b.cx, ..*b })
            .collect(),
        ..label.clone()
    }
}

pub fn mirror_sample(img: &Image, label: &SampleLabel) -> (Image, SampleLabel) {
    (mirror_image(img), mirror_label(label))
}

fn check_gain(gain: f64) -> Result<(), DatasetError> {
    if gain.is_finite() && (-MAX_EXPOSURE_GAIN..=MAX_EXPOSURE_GAIN).contains(&gain) {
        Ok(())
    } else {
        Err(DatasetError::GainOutOfBand(gain))
    }
}

/// Scales every channel value by `1 + gain`, rounding half up and clamping to 0..=255.
pub fn adjust_exposure(img: &Image, gain: f64) -> Result<Image, DatasetError> {
    check_gain(gain)?;
    let factor = 1.0 + gain;
    let lut: Vec<u8> = (0..=255u8)
        .map(|v| {
            // snap float noise so that exact halves (e.g. 10 * 1.15) round up
            let scaled = (f64::from(v) * factor * 1e9).round() / 1e9;
            (scaled + 0.5).floor().clamp(0.0, 255.0) as u8
        })
        .collect();
    Ok(img.map_values(|v| lut[v as usize]))
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct AugmentOptions {
    pub mirror: bool,
    pub exposure_gains: Vec<f64>,
}

impl AugmentOptions {
    pub fn validate(&self) -> Result<(), DatasetError> {
        self.exposure_gains.iter().try_for_each(|&g| check_gain(g))
    }

    /// Output samples per source sample.
    pub fn multiplicity(&self) -> usize {
        1 + usize::from(self.mirror) + self.exposure_gains.len()
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Derivation {
    Mirror,
    Exposure(f64),
}

impl Derivation {
    fn id_suffix(&self) -> String {
        match self {
            Derivation::Mirror => "#mirror".to_string(),
            Derivation::Exposure(g) => format!("#exp{g:+}"),
        }
    }

    fn path_suffix(&self) -> String {
        match self {
            Derivation::Mirror => "_mirror".to_string(),
            Derivation::Exposure(g) => format!("_exp{g:+}"),
        }
    }
}

/// One output row of an augmentation run.
#[derive(Debug, Clone, PartialEq)]
pub struct AugmentedSample {
    /// Index of the source sample in the input manifest.
    pub source: usize,
    /// `None` for the unmodified original.
    pub derivation: Option<Derivation>,
    pub label: SampleLabel,
}

fn derived_path(path: &str, suffix: &str) -> String {
    let stem = match path.rfind('.') {
        Some(dot) if !path[dot..].contains('/') => &path[..dot],
        _ => path,
    };
    format!("{stem}{suffix}.png")
}

/// Plans the augmented dataset: original, optional mirror, then one copy per gain,
/// for every source sample in order.
pub fn plan_augmentation(
    manifest: &DatasetManifest,
    opts: &AugmentOptions,
) -> Result<Vec<AugmentedSample>, DatasetError> {
    opts.validate()?;
    let mut derivations = Vec::with_capacity(opts.multiplicity());
    derivations.push(None);
    if opts.mirror {
        derivations.push(Some(Derivation::Mirror));
    }
    derivations.extend(opts.exposure_gains.iter().map(|&g| Some(Derivation::Exposure(g))));

    let mut out = Vec::with_capacity(manifest.samples.len() * derivations.len());
    let mut ids = HashSet::new();
    for (i, sample) in manifest.samples.iter().enumerate() {
        for d in &derivations {
            let label = match d {
                None => sample.clone(),
                Some(d) => {
                    let base = match d {
                        Derivation::Mirror => mirror_label(sample),
                        Derivation::Exposure(_) => sample.clone(),
                    };
                    SampleLabel {
                        image_id: format!("{}{}", sample.image_id, d.id_suffix()),
                        image_path: derived_path(&sample.image_path, &d.path_suffix()),
                        ..base
                    }
                }
            };
            if !ids.insert(label.image_id.clone()) {
                return Err(DatasetError::IdCollision(label.image_id));
            }
            out.push(AugmentedSample {
                source: i,
                derivation: *d,
                label,
            });
        }
    }
    Ok(out)
}

/// Label-level augmentation. Derived samples inherit the split of their source.
pub fn augment_dataset(
    manifest: &DatasetManifest,
    opts: &AugmentOptions,
) -> Result<DatasetManifest, DatasetError> {
    let plan = plan_augmentation(manifest, opts)?;
    let mut split_of = BTreeMap::new();
    for a in &plan {
        if let Some(&s) = manifest.split_of.get(&manifest.samples[a.source].image_id) {
            split_of.insert(a.label.image_id.clone(), s);
        }
    }
    Ok(DatasetManifest {
        samples: plan.into_iter().map(|a| a.label).collect(),
        split_of,
        class_names: manifest.class_names.clone(),
    })
}

/// Seeded train/val/test split. Samples sharing a source id (an original and its
/// augmented copies) always land in the same split.
pub fn split_dataset(
    manifest: &DatasetManifest,
    counts: (usize, usize, usize),
    seed: u64,
) -> Result<DatasetManifest, DatasetError> {
    let (n_train, n_val, n_test) = counts;
    let total = n_train + n_val + n_test;
    if total != manifest.samples.len() {
        return Err(DatasetError::CountMismatch {
            expected: total,
            actual: manifest.samples.len(),
        });
    }

    // groups in first-appearance order so the shuffle input is stable
    let mut index: HashMap<&str, usize> = HashMap::new();
    let mut groups: Vec<Vec<&str>> = Vec::new();
    for s in &manifest.samples {
        let key = source_id(&s.image_id);
        let g = *index.entry(key).or_insert_with(|| {
            groups.push(Vec::new());
            groups.len() - 1
        });
        groups[g].push(s.image_id.as_str());
    }

    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    groups.shuffle(&mut rng);
    // first-fit decreasing keeps mixed group sizes packable; the shuffle order
    // is kept among groups of equal size
    groups.sort_by_key(|g| std::cmp::Reverse(g.len()));

    let order = [Split::Train, Split::Val, Split::Test];
    let mut remaining = [n_train, n_val, n_test];
    let mut split_of = BTreeMap::new();
    for g in groups {
        let slot = remaining
            .iter()
            .position(|&r| r >= g.len())
            .ok_or(DatasetError::UnsatisfiableGrouping { counts })?;
        remaining[slot] -= g.len();
        for id in g {
            split_of.insert(id.to_string(), order[slot]);
        }
    }

    Ok(DatasetManifest {
        samples: manifest.samples.clone(),
        split_of,
        class_names: manifest.class_names.clone(),
    })
}

/// Weight updates needed for one pass over `n_samples` at `batch_size`.
pub fn iterations_per_epoch(n_samples: u64, batch_size: u64) -> Result<u64, DatasetError> {
    if batch_size == 0 {
        return Err(DatasetError::ZeroBatch);
    }
    if n_samples == 0 {
        return Err(DatasetError::ZeroSamples);
    }
    Ok(n_samples.div_ceil(batch_size))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn sample(id: &str, boxes: Vec<YoloBox>) -> SampleLabel {
        SampleLabel {
            image_id: id.to_string(),
            image_path: format!("images/{id}.jpg"),
            image_w: 64,
            image_h: 48,
            boxes,
        }
    }

    fn manifest(n: usize) -> DatasetManifest {
        DatasetManifest::new(
            (0..n).map(|i| sample(&format!("s{i:04}"), vec![])).collect(),
            vec!["smoke".into()],
        )
    }

    #[test]
    fn parse_label_examples() {
        let b = parse_label_file("0 0.5 0.5 0.2 0.1").unwrap();
        assert_eq!(b, vec![YoloBox::new(0, 0.5, 0.5, 0.2, 0.1).unwrap()]);
        assert!(parse_label_file("").unwrap().is_empty());
        assert!(parse_label_file("\n  \n").unwrap().is_empty());
        match parse_label_file("0 0.5 0.5") {
            Err(DatasetError::Label { line: 1, .. }) => {}
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn parse_label_reports_line_number() {
        let text = "0 0.5 0.5 0.2 0.1\n\n0 0.5 x 0.2 0.1\n";
        match parse_label_file(text) {
            Err(DatasetError::Label { line: 3, reason }) => assert!(reason.contains("\"x\"")),
            other => panic!("unexpected {other:?}"),
        }
        assert!(matches!(
            parse_label_file("-1 0.5 0.5 0.2 0.1"),
            Err(DatasetError::Label { line: 1, .. })
        ));
        assert!(matches!(
            parse_label_file("0 0.95 0.5 0.2 0.1"),
            Err(DatasetError::Label { line: 1, .. })
        ));
    }

    #[test]
    fn mirror_examples() {
        let s = sample("a", vec![YoloBox::new(0, 0.3, 0.4, 0.2, 0.2).unwrap()]);
        let m = mirror_label(&s);
        assert!((m.boxes[0].cx - 0.7).abs() < 1e-15);
        assert_eq!(m.boxes[0].cy, 0.4);

        let img = Image::new(3, 1, vec![10, 10, 10, 20, 20, 20, 30, 30, 30]).unwrap();
        assert_eq!(
            mirror_image(&img).as_raw(),
            &[30, 30, 30, 20, 20, 20, 10, 10, 10]
        );
    }

    #[test]
    fn exposure_examples() {
        let img = Image::new(2, 1, vec![100, 240, 0, 255, 10, 1]).unwrap();
        let up = adjust_exposure(&img, 0.15).unwrap();
        assert_eq!(up.as_raw()[0], 115);
        assert_eq!(up.as_raw()[1], 255);
        // 10 * 1.15 = 11.5 rounds half up
        assert_eq!(up.as_raw()[4], 12);
        assert_eq!(adjust_exposure(&img, 0.0).unwrap(), img);
        assert!(matches!(
            adjust_exposure(&img, 0.2),
            Err(DatasetError::GainOutOfBand(_))
        ));
        assert!(adjust_exposure(&img, -0.16).is_err());
    }

    #[test]
    fn augment_multiplicity_and_ids() {
        let m = manifest(10);
        let opts = AugmentOptions {
            mirror: true,
            exposure_gains: vec![-0.15, 0.15],
        };
        let out = augment_dataset(&m, &opts).unwrap();
        assert_eq!(out.samples.len(), 40);
        let ids: Vec<&str> = out.samples[..4].iter().map(|s| s.image_id.as_str()).collect();
        assert_eq!(ids, ["s0000", "s0000#mirror", "s0000#exp-0.15", "s0000#exp+0.15"]);
        assert_eq!(out.samples[1].image_path, "images/s0000_mirror.png");

        let mirror_only = AugmentOptions {
            mirror: true,
            exposure_gains: vec![],
        };
        assert_eq!(augment_dataset(&manifest(1520), &mirror_only).unwrap().samples.len(), 3040);
        assert!(augment_dataset(&manifest(0), &opts).unwrap().samples.is_empty());
    }

    #[test]
    fn augment_detects_collisions() {
        let mut m = manifest(1);
        m.samples.push(sample("s0000#mirror", vec![]));
        let opts = AugmentOptions {
            mirror: true,
            exposure_gains: vec![],
        };
        assert!(matches!(
            augment_dataset(&m, &opts),
            Err(DatasetError::IdCollision(id)) if id == "s0000#mirror"
        ));
        let dup_gain = AugmentOptions {
            mirror: false,
            exposure_gains: vec![0.1, 0.1],
        };
        assert!(augment_dataset(&manifest(1), &dup_gain).is_err());
    }

    #[test]
    fn augmented_samples_inherit_split() {
        let mut m = manifest(2);
        m.split_of.insert("s0000".into(), Split::Test);
        let out = augment_dataset(
            &m,
            &AugmentOptions {
                mirror: true,
                exposure_gains: vec![],
            },
        )
        .unwrap();
        assert_eq!(out.split_of.get("s0000#mirror"), Some(&Split::Test));
        assert_eq!(out.split_of.get("s0001#mirror"), None);
    }

    #[test]
    fn split_examples() {
        let m = manifest(2712);
        let a = split_dataset(&m, (2405, 228, 79), 7).unwrap();
        assert_eq!(a.split_counts(), (2405, 228, 79));
        let b = split_dataset(&m, (2405, 228, 79), 7).unwrap();
        assert_eq!(a.split_of, b.split_of);
        let c = split_dataset(&m, (2405, 228, 79), 8).unwrap();
        assert_ne!(a.split_of, c.split_of);

        match split_dataset(&manifest(2), (1, 0, 0), 1) {
            Err(DatasetError::CountMismatch {
                expected: 1,
                actual: 2,
            }) => {}
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn split_keeps_groups_together() {
        let aug = augment_dataset(
            &manifest(30),
            &AugmentOptions {
                mirror: true,
                exposure_gains: vec![0.1],
            },
        )
        .unwrap();
        let out = split_dataset(&aug, (60, 18, 12), 3).unwrap();
        assert_eq!(out.split_counts(), (60, 18, 12));
        for s in &out.samples {
            assert_eq!(out.split_of[&s.image_id], out.split_of[source_id(&s.image_id)]);
        }
        assert!(matches!(
            split_dataset(&aug, (61, 17, 12), 3),
            Err(DatasetError::UnsatisfiableGrouping { .. })
        ));
    }

    #[test]
    fn iterations_examples() {
        assert_eq!(iterations_per_epoch(1000, 32).unwrap(), 32);
        assert_eq!(iterations_per_epoch(1024, 32).unwrap(), 32);
        assert_eq!(iterations_per_epoch(1, 1).unwrap(), 1);
        assert!(matches!(iterations_per_epoch(10, 0), Err(DatasetError::ZeroBatch)));
    }
}
