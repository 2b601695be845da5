//! Atomic structure conversion: snapshot, rebuild under the target
//! structure, verify the logical content, then swap the manifest.
//!
//! On disk a partition is a directory holding `manifest.json` and one
//! `gen-NNNNNN.snap` snapshot per generation. The manifest names the active
//! generation; replacing it by rename is the only step that changes which
//! generation readers see.

use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::schema::StorageStructure;
use crate::sim::{CostParams, Partition, Snapshot};

pub const MANIFEST_VERSION: u32 = 1;
const MANIFEST: &str = "manifest.json";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PartitionManifest {
    pub version: u32,
    pub partition_id: String,
    pub structure: StorageStructure,
    /// Data files of the active generation, relative to the partition directory.
    pub files: Vec<String>,
    pub generation: u64,
}

/// Where an injected failure interrupts [`PartitionDir::convert`].
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum FailPoint {
    /// Flip one cell of the rebuilt partition before verification.
    CorruptBuild,
    /// Stop after the new generation is written, before the manifest is touched.
    AfterBuild,
    /// Stop after the replacement manifest is written but before the rename.
    BeforeSwap,
}

fn snap_name(generation: u64) -> String {
    format!("gen-{generation:06}.snap")
}

fn parse_generation(name: &str) -> Option<u64> {
    name.strip_prefix("gen-")?.strip_suffix(".snap")?.parse().ok()
}

fn injected(at: &str) -> Error {
    Error::Io(format!("injected failure {at}"))
}

/// Rebuilds `source` under `target` in memory and checks that every
/// (key, column, value) cell survived.
pub fn convert(source: &Partition, target: &StorageStructure) -> Result<Partition> {
    convert_inner(source, target, None)
}

fn convert_inner(source: &Partition, target: &StorageStructure, fail: Option<FailPoint>) -> Result<Partition> {
    target.validate(source.schema())?;
    let snap = source.snapshot();
    let mut built = snap.restore(target, source.params())?;
    if fail == Some(FailPoint::CorruptBuild) {
        built = corrupt_one_cell(&snap, target, source.params())?;
    }
    verify(&snap, &built)?;
    Ok(built)
}

fn corrupt_one_cell(snap: &Snapshot, target: &StorageStructure, params: &CostParams) -> Result<Partition> {
    let mut rows = snap.rows.clone();
    match rows.first_mut() {
        Some((_, r)) if !r.is_empty() => r[0] ^= 1,
        _ => rows.push((u64::MAX, vec![0; snap.schema.num_values()].into_boxed_slice())),
    }
    Partition::from_rows(&snap.schema, target, params, rows)
}

/// Full content comparison; reports the first differing key.
pub fn verify(expected: &Snapshot, built: &Partition) -> Result<()> {
    let got = built.snapshot();
    if got.rows.len() != expected.rows.len() {
        return Err(Error::ConversionVerifyFailed(format!(
            "row count {} != {}",
            got.rows.len(),
            expected.rows.len()
        )));
    }
    if let Some(((k, _), _)) = expected.rows.iter().zip(&got.rows).find(|(a, b)| a != b) {
        return Err(Error::ConversionVerifyFailed(format!("key {k} differs")));
    }
    if !built.groups_consistent() {
        return Err(Error::ConversionVerifyFailed(
            "column groups disagree on key set".into(),
        ));
    }
    Ok(())
}

/// A partition persisted as versioned snapshots plus a manifest.
#[derive(Debug, Clone)]
pub struct PartitionDir {
    dir: PathBuf,
    manifest: PartitionManifest,
}

impl PartitionDir {
    /// Writes `partition` as generation 1 of a new partition directory.
    pub fn create(dir: &Path, partition_id: &str, partition: &Partition) -> Result<Self> {
        fs::create_dir_all(dir)?;
        if dir.join(MANIFEST).exists() {
            return Err(Error::Io(format!("{} already holds a partition", dir.display())));
        }
        let generation = next_generation(dir, 0)?;
        let file = snap_name(generation);
        write_durable(&dir.join(&file), &partition.snapshot().to_bytes())?;
        let manifest = PartitionManifest {
            version: MANIFEST_VERSION,
            partition_id: partition_id.to_string(),
            structure: partition.structure().clone(),
            files: vec![file],
            generation,
        };
        swap_manifest(dir, &manifest, None)?;
        Ok(PartitionDir {
            dir: dir.to_path_buf(),
            manifest,
        })
    }

    pub fn open(dir: &Path) -> Result<Self> {
        let text = fs::read_to_string(dir.join(MANIFEST))?;
        let manifest: PartitionManifest =
            serde_json::from_str(&text).map_err(|e| Error::Parse(format!("manifest: {e}")))?;
        if manifest.version != MANIFEST_VERSION {
            return Err(Error::UnsupportedVersion {
                what: "manifest",
                found: manifest.version,
            });
        }
        if let Some(f) = manifest.files.iter().find(|f| !dir.join(f).is_file()) {
            return Err(Error::Io(format!("manifest references missing file {f}")));
        }
        Ok(PartitionDir {
            dir: dir.to_path_buf(),
            manifest,
        })
    }

    pub fn manifest(&self) -> &PartitionManifest {
        &self.manifest
    }

    pub fn path(&self) -> &Path {
        &self.dir
    }

    pub fn snapshot(&self) -> Result<Snapshot> {
        let snap = Snapshot::read_from(&self.dir.join(&self.manifest.files[0]))?;
        self.manifest.structure.validate(&snap.schema)?;
        Ok(snap)
    }

    /// Loads the active generation under its recorded structure.
    pub fn load(&self, params: &CostParams) -> Result<Partition> {
        self.snapshot()?.restore(&self.manifest.structure, params)
    }

    /// Converts the partition to `target`. Any error, injected or real,
    /// leaves the previous generation active.
    pub fn convert(
        &mut self,
        target: &StorageStructure,
        params: &CostParams,
        fail: Option<FailPoint>,
    ) -> Result<Partition> {
        let source = self.load(params)?;
        let built = convert_inner(&source, target, fail)?;
        let generation = next_generation(&self.dir, self.manifest.generation)?;
        let file = snap_name(generation);
        write_durable(&self.dir.join(&file), &built.snapshot().to_bytes())?;
        if fail == Some(FailPoint::AfterBuild) {
            return Err(injected("after build"));
        }
        let manifest = PartitionManifest {
            structure: target.clone(),
            files: vec![file],
            generation,
            ..self.manifest.clone()
        };
        swap_manifest(&self.dir, &manifest, fail)?;
        let old = std::mem::replace(&mut self.manifest, manifest);
        for f in &old.files {
            let _ = fs::remove_file(self.dir.join(f));
        }
        Ok(built)
    }
}

/// One past the highest generation ever written here, so numbers of
/// abandoned builds are never reused.
fn next_generation(dir: &Path, active: u64) -> Result<u64> {
    let mut max = active;
    for entry in fs::read_dir(dir)? {
        if let Some(g) = entry?.file_name().to_str().and_then(parse_generation) {
            max = max.max(g);
        }
    }
    Ok(max + 1)
}

fn write_durable(path: &Path, bytes: &[u8]) -> Result<()> {
    let mut f = fs::File::create(path)?;
    f.write_all(bytes)?;
    f.sync_all()?;
    Ok(())
}

fn swap_manifest(dir: &Path, manifest: &PartitionManifest, fail: Option<FailPoint>) -> Result<()> {
    let tmp = dir.join(format!("{MANIFEST}.tmp"));
    let text = serde_json::to_string_pretty(manifest).expect("manifest serializes");
    write_durable(&tmp, text.as_bytes())?;
    if fail == Some(FailPoint::BeforeSwap) {
        return Err(injected("before swap"));
    }
    fs::rename(&tmp, dir.join(MANIFEST))?;
    if let Ok(d) = fs::File::open(dir) {
        let _ = d.sync_all();
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::schema::{lineitem_schema, DataLayout, EngineKind};
    use crate::sim::Request;

    fn structure(engine: EngineKind, layout: &str) -> StorageStructure {
        let s = lineitem_schema();
        let layout = match layout {
            "nsm" => DataLayout::nsm(&s),
            "dsm" => DataLayout::dsm(&s),
            text => DataLayout::parse(text, &s).unwrap(),
        };
        StorageStructure::new(engine, layout, &s).unwrap()
    }

    fn source(rows: u64) -> Partition {
        let s = lineitem_schema();
        let mut p =
            Partition::with_rows(&s, &structure(EngineKind::LsmRow, "nsm"), &CostParams::default(), rows).unwrap();
        p.exec(&Request::Insert {
            keys: vec![3, 99_999_999],
        })
        .unwrap();
        p
    }

    #[test]
    fn identical_target_is_a_no_op() {
        let p = source(500);
        let q = convert(&p, p.structure()).unwrap();
        assert_eq!(q.snapshot(), p.snapshot());
        assert_eq!(q.structure(), p.structure());
    }

    #[test]
    fn nsm_dsm_round_trip() {
        let p = source(800);
        let d = convert(&p, &structure(EngineKind::Columnar, "dsm")).unwrap();
        let back = convert(&d, &structure(EngineKind::LsmRow, "nsm")).unwrap();
        assert_eq!(back.snapshot(), p.snapshot());
    }

    #[test]
    fn ten_thousand_rows_to_two_groups_on_bplus() {
        let p = source(10_000);
        let target = structure(EngineKind::BPlusRow, "(V2,V3,V7)(V1,V4,V5,V6,V8,V9,V10,V11,V12)");
        let q = convert(&p, &target).unwrap();
        let (a, b) = (p.snapshot(), q.snapshot());
        assert_eq!(a.rows.len(), 10_002);
        // cell-by-cell diff
        for ((ka, ra), (kb, rb)) in a.rows.iter().zip(&b.rows) {
            assert_eq!(ka, kb);
            for c in 0..ra.len() {
                assert_eq!(ra[c], rb[c], "key {ka} column {c}");
            }
        }
    }

    #[test]
    fn invalid_target_is_rejected() {
        let p = source(10);
        let bad = StorageStructure {
            engine: EngineKind::Columnar,
            layout: DataLayout::nsm(&lineitem_schema()),
        };
        assert!(matches!(convert(&p, &bad), Err(Error::TargetInvalid(_))));
    }

    #[test]
    fn corrupt_build_fails_verification() {
        let p = source(50);
        let r = convert_inner(
            &p,
            &structure(EngineKind::BPlusRow, "dsm"),
            Some(FailPoint::CorruptBuild),
        );
        assert!(matches!(r, Err(Error::ConversionVerifyFailed(_))));
    }

    #[test]
    fn persisted_conversion_and_failures() {
        let tmp = tempfile::tempdir().unwrap();
        let params = CostParams::default();
        let p = source(300);
        let mut d = PartitionDir::create(tmp.path(), "p0", &p).unwrap();
        assert_eq!(d.manifest().generation, 1);
        let dsm = structure(EngineKind::Columnar, "dsm");
        for fp in [FailPoint::CorruptBuild, FailPoint::AfterBuild, FailPoint::BeforeSwap] {
            assert!(d.convert(&dsm, &params, Some(fp)).is_err());
            let reopened = PartitionDir::open(tmp.path()).unwrap();
            assert_eq!(reopened.manifest().structure, *p.structure());
            assert_eq!(reopened.load(&params).unwrap().snapshot(), p.snapshot());
        }
        d.convert(&dsm, &params, None).unwrap();
        let reopened = PartitionDir::open(tmp.path()).unwrap();
        assert_eq!(reopened.manifest().structure, dsm);
        // the two abandoned builds consumed generations 2 and 3
        assert_eq!(reopened.manifest().generation, 4);
        assert_eq!(reopened.load(&params).unwrap().snapshot(), p.snapshot());
        assert!(!tmp.path().join(snap_name(1)).exists());
    }

    #[test]
    fn unknown_manifest_version_is_rejected() {
        let tmp = tempfile::tempdir().unwrap();
        PartitionDir::create(tmp.path(), "p0", &source(5)).unwrap();
        let path = tmp.path().join(MANIFEST);
        let text = fs::read_to_string(&path)
            .unwrap()
            .replace("\"version\": 1", "\"version\": 99");
        fs::write(&path, text).unwrap();
        assert!(matches!(
            PartitionDir::open(tmp.path()),
            Err(Error::UnsupportedVersion {
                what: "manifest",
                found: 99
            })
        ));
    }
}
