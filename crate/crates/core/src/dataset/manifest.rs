//! On-disk dataset layout.
//!
//! ```text
//! manifest.csv      id,path,width,height,split   (split may be empty)
//! classes.txt       one class name per line, line number = class id
//! images/a.jpg      image, path relative to the manifest directory
//! images/a.txt      labels for images/a.jpg
//! ```

use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use super::{
    adjust_exposure, format_label_file, mirror_image, parse_label_file, plan_augmentation,
    AugmentOptions, DatasetManifest, Derivation, SampleLabel, Split,
};
use crate::error::DatasetError;
use crate::image::Image;

const CLASSES_FILE: &str = "classes.txt";

#[derive(Debug, Serialize, Deserialize)]
struct ManifestRow {
    id: String,
    path: String,
    width: u32,
    height: u32,
    #[serde(default)]
    split: String,
}

/// `images/a.jpg` -> `images/a.txt`.
pub fn label_path_for(image_path: &Path) -> PathBuf {
    image_path.with_extension("txt")
}

fn manifest_dir(path: &Path) -> PathBuf {
    path.parent().map(Path::to_path_buf).unwrap_or_default()
}

pub fn load_manifest(path: &Path) -> Result<DatasetManifest, DatasetError> {
    let dir = manifest_dir(path);
    let text = fs::read_to_string(path).map_err(|e| DatasetError::io(path, e))?;
    let mut reader = csv::Reader::from_reader(text.as_bytes());

    let mut manifest = DatasetManifest::default();
    for (i, row) in reader.deserialize::<ManifestRow>().enumerate() {
        let row = row.map_err(|e| DatasetError::Manifest(format!("record {}: {e}", i + 1)))?;
        let label_file = label_path_for(&dir.join(&row.path));
        let boxes = match fs::read_to_string(&label_file) {
            Ok(t) => parse_label_file(&t).map_err(|e| {
                DatasetError::Manifest(format!("{}: {e}", label_file.display()))
            })?,
            // no label file means a background image
            Err(e) if e.kind() == std::io::ErrorKind::NotFound => Vec::new(),
            Err(e) => return Err(DatasetError::io(label_file, e)),
        };
        if !row.split.trim().is_empty() {
            manifest
                .split_of
                .insert(row.id.clone(), row.split.trim().parse::<Split>()?);
        }
        manifest.samples.push(SampleLabel {
            image_id: row.id,
            image_path: row.path,
            image_w: row.width,
            image_h: row.height,
            boxes,
        });
    }

    let classes = dir.join(CLASSES_FILE);
    manifest.class_names = match fs::read_to_string(&classes) {
        Ok(t) => t.lines().map(str::trim).filter(|l| !l.is_empty()).map(String::from).collect(),
        Err(e) if e.kind() == std::io::ErrorKind::NotFound => vec!["smoke".to_string()],
        Err(e) => return Err(DatasetError::io(classes, e)),
    };
    manifest.validate()?;
    Ok(manifest)
}

/// Writes `manifest.csv` and `classes.txt`. Label files are not touched.
pub fn write_manifest(manifest: &DatasetManifest, path: &Path) -> Result<(), DatasetError> {
    manifest.validate()?;
    let mut writer = csv::Writer::from_writer(Vec::new());
    for s in &manifest.samples {
        writer
            .serialize(ManifestRow {
                id: s.image_id.clone(),
                path: s.image_path.clone(),
                width: s.image_w,
                height: s.image_h,
                split: manifest
                    .split_of
                    .get(&s.image_id)
                    .map(|s| s.to_string())
                    .unwrap_or_default(),
            })
            .map_err(|e| DatasetError::Manifest(e.to_string()))?;
    }
    let bytes = writer
        .into_inner()
        .map_err(|e| DatasetError::Manifest(e.to_string()))?;
    fs::write(path, bytes).map_err(|e| DatasetError::io(path, e))?;

    let classes = manifest_dir(path).join(CLASSES_FILE);
    let mut text = manifest.class_names.join("\n");
    text.push('\n');
    fs::write(&classes, text).map_err(|e| DatasetError::io(classes, e))
}

fn write_new(path: &Path, bytes: &[u8]) -> Result<(), DatasetError> {
    if let Some(parent) = path.parent() {
        fs::create_dir_all(parent).map_err(|e| DatasetError::io(parent, e))?;
    }
    let mut f = fs::OpenOptions::new()
        .write(true)
        .create_new(true)
        .open(path)
        .map_err(|e| {
            if e.kind() == std::io::ErrorKind::AlreadyExists {
                DatasetError::IdCollision(path.display().to_string())
            } else {
                DatasetError::io(path, e)
            }
        })?;
    std::io::Write::write_all(&mut f, bytes).map_err(|e| DatasetError::io(path, e))
}

/// Runs an augmentation against real files: copies originals, renders derived
/// images and labels, and writes the output manifest into `out_dir`.
///
/// Refuses to overwrite any existing file in `out_dir`.
pub fn materialize_augmentation(
    manifest: &DatasetManifest,
    manifest_path: &Path,
    opts: &AugmentOptions,
    out_dir: &Path,
) -> Result<DatasetManifest, DatasetError> {
    let out_manifest = out_dir.join("manifest.csv");
    if out_manifest.exists() {
        return Err(DatasetError::IdCollision(out_manifest.display().to_string()));
    }
    let plan = plan_augmentation(manifest, opts)?;
    let src_dir = manifest_dir(manifest_path);

    let mut decoded: BTreeMap<usize, Image> = BTreeMap::new();
    let mut split_of = BTreeMap::new();
    for item in &plan {
        let source = &manifest.samples[item.source];
        let src_image = src_dir.join(&source.image_path);
        let dst_image = out_dir.join(&item.label.image_path);
        match item.derivation {
            None => {
                let bytes = fs::read(&src_image).map_err(|e| DatasetError::io(&src_image, e))?;
                write_new(&dst_image, &bytes)?;
            }
            Some(d) => {
                if !decoded.contains_key(&item.source) {
                    let bytes =
                        fs::read(&src_image).map_err(|e| DatasetError::io(&src_image, e))?;
                    decoded.clear();
                    decoded.insert(item.source, Image::decode(&bytes)?);
                }
                let img = &decoded[&item.source];
                let out = match d {
                    Derivation::Mirror => mirror_image(img),
                    Derivation::Exposure(g) => adjust_exposure(img, g)?,
                };
                write_new(&dst_image, &out.encode_png()?)?;
            }
        }
        write_new(
            &label_path_for(&dst_image),
            format_label_file(&item.label.boxes).as_bytes(),
        )?;
        if let Some(&s) = manifest.split_of.get(&source.image_id) {
            split_of.insert(item.label.image_id.clone(), s);
        }
    }

    let out = DatasetManifest {
        samples: plan.into_iter().map(|a| a.label).collect(),
        split_of,
        class_names: manifest.class_names.clone(),
    };
    write_manifest(&out, &out_manifest)?;
    Ok(out)
}
