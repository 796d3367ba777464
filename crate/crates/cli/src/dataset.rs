use std::path::Path;

use smokewatch_core::dataset::{
    load_manifest, materialize_augmentation, split_dataset, write_manifest, AugmentOptions,
};
use smokewatch_core::DatasetError;

use crate::output::Failure;

fn classify(e: DatasetError) -> Failure {
    match e {
        DatasetError::Io { .. } | DatasetError::IdCollision(_) | DatasetError::Image(_) => Failure::runtime(e),
        _ => Failure::usage(e),
    }
}

fn load(path: &Path) -> Result<smokewatch_core::dataset::DatasetManifest, Failure> {
    load_manifest(path).map_err(|e| match e {
        // an unreadable input is a bad argument, not a runtime fault
        DatasetError::Io { .. } => Failure::usage(e),
        other => classify(other),
    })
}

pub fn augment(input: &Path, out: &Path, mirror: bool, exposure: Vec<f64>) -> Result<(), Failure> {
    let opts = AugmentOptions {
        mirror,
        exposure_gains: exposure,
    };
    opts.validate().map_err(Failure::usage)?;
    let manifest = load(input)?;
    let result = materialize_augmentation(&manifest, input, &opts, out).map_err(classify)?;
    println!(
        "wrote {} samples ({} source x {}) to {}",
        result.samples.len(),
        manifest.samples.len(),
        opts.multiplicity(),
        out.join("manifest.csv").display()
    );
    Ok(())
}

pub fn split(input: &Path, counts: &[usize], seed: u64, out: Option<&Path>) -> Result<(), Failure> {
    let &[train, val, test] = counts else {
        return Err(Failure::usage(format!(
            "--counts takes three values (train,val,test), got {}",
            counts.len()
        )));
    };
    let manifest = load(input)?;
    let result = split_dataset(&manifest, (train, val, test), seed).map_err(classify)?;
    let dest = out.unwrap_or(input);
    write_manifest(&result, dest).map_err(classify)?;
    let (tr, va, te) = result.split_counts();
    println!("train {tr}, val {va}, test {te} (seed {seed}) -> {}", dest.display());
    Ok(())
}
