use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

use anyhow::{Context, Result};
use beansplit::dataset::{self, DatasetManifest, LabeledImage, Partition};
use beansplit::pipeline::{Pipeline, PipelineConfig};
use beansplit::segnet::{self, NetError, NetworkWeights};

/// Bad invocation that clap cannot catch (exit code 2).
#[derive(Debug)]
pub struct UsageError(pub String);

impl std::fmt::Display for UsageError {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(&self.0)
    }
}

impl std::error::Error for UsageError {}

pub fn usage(msg: impl Into<String>) -> anyhow::Error {
    UsageError(msg.into()).into()
}

/// 2 for usage errors, 4 for numeric divergence, 3 for everything else.
pub fn exit_code(err: &anyhow::Error) -> i32 {
    for cause in err.chain() {
        if cause.downcast_ref::<UsageError>().is_some() {
            return 2;
        }
        let diverged = matches!(cause.downcast_ref::<NetError>(), Some(NetError::NonFiniteLoss { .. }))
            || matches!(
                cause.downcast_ref::<beansplit::Error>(),
                Some(beansplit::Error::Net(NetError::NonFiniteLoss { .. }))
            );
        if diverged {
            return 4;
        }
    }
    3
}

/// Writes through a temporary sibling and renames, so readers never see a
/// partial file.
pub fn write_atomic(path: &Path, contents: &[u8]) -> Result<()> {
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        fs::create_dir_all(dir).with_context(|| format!("creating {}", dir.display()))?;
    }
    let mut tmp = path.as_os_str().to_owned();
    tmp.push(format!(".tmp{}", std::process::id()));
    let tmp = PathBuf::from(tmp);
    let mut file = fs::File::create(&tmp).with_context(|| format!("writing {}", tmp.display()))?;
    file.write_all(contents)?;
    file.sync_all()?;
    fs::rename(&tmp, path).with_context(|| format!("writing {}", path.display()))?;
    Ok(())
}

pub fn read_text(path: &Path) -> Result<String> {
    fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))
}

pub fn read_json<T: serde::de::DeserializeOwned>(path: &Path) -> Result<T> {
    serde_json::from_str(&read_text(path)?).with_context(|| format!("parsing {}", path.display()))
}

pub fn base_dir(path: &Path) -> &Path {
    path.parent().unwrap_or(Path::new("."))
}

pub fn load_manifest(path: &Path) -> Result<DatasetManifest> {
    dataset::load_manifest(&read_text(path)?).with_context(|| format!("manifest {}", path.display()))
}

/// Labeled images of one partition, paths resolved against the manifest.
pub fn load_images(manifest_path: &Path, manifest: &DatasetManifest, partition: Partition) -> Result<Vec<LabeledImage>> {
    dataset::load_partition(manifest, base_dir(manifest_path), partition)
        .with_context(|| format!("loading {partition} images"))
}

pub fn load_weights(path: &Path) -> Result<NetworkWeights> {
    let bytes = fs::read(path).with_context(|| format!("reading {}", path.display()))?;
    segnet::deserialize_weights(&bytes).with_context(|| format!("weights {}", path.display()))
}

pub fn load_pipeline(config_path: &Path) -> Result<Pipeline> {
    let config: PipelineConfig = read_json(config_path)?;
    Pipeline::load(&config, base_dir(config_path)).with_context(|| format!("pipeline {}", config_path.display()))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn exit_codes() {
        assert_eq!(exit_code(&usage("x")), 2);
        let diverged: anyhow::Error = NetError::NonFiniteLoss { epoch: 3 }.into();
        assert_eq!(exit_code(&diverged.context("training")), 4);
        let wrapped: anyhow::Error = beansplit::Error::Net(NetError::NonFiniteLoss { epoch: 1 }).into();
        assert_eq!(exit_code(&wrapped), 4);
        assert_eq!(exit_code(&anyhow::anyhow!("bad file")), 3);
    }

    #[test]
    fn atomic_write_replaces() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("sub/out.txt");
        write_atomic(&p, b"one").unwrap();
        write_atomic(&p, b"two").unwrap();
        assert_eq!(fs::read(&p).unwrap(), b"two");
        assert_eq!(fs::read_dir(p.parent().unwrap()).unwrap().count(), 1);
    }
}
