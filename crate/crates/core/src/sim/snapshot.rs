//! Engine-independent logical snapshots.
//!
//! Binary layout, little-endian:
//!
//! ```text
//! "SSNP" | version u32 | schema_len u32 | schema (JSON) | rows u64 | values u32
//!        | rows x (key u64, values x u64) | sha256 of all preceding bytes
//! ```

use std::path::Path;

use sha2::{Digest, Sha256};

use super::paged::Row;
use super::{CostParams, Partition};
use crate::error::{Error, Result};
use crate::schema::{StorageStructure, TableSchema};

const MAGIC: &[u8; 4] = b"SSNP";
pub const SNAPSHOT_VERSION: u32 = 1;

/// Full logical content of a partition: key -> one cell per value column.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Snapshot {
    pub schema: TableSchema,
    pub rows: Vec<(u64, Row)>,
}

impl Snapshot {
    /// Rebuilds a partition holding exactly this content.
    pub fn restore(&self, structure: &StorageStructure, params: &CostParams) -> Result<Partition> {
        Partition::from_rows(&self.schema, structure, params, self.rows.clone())
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let schema = serde_json::to_vec(&self.schema).expect("schema serializes");
        let nvals = self.schema.num_values();
        let mut out = Vec::with_capacity(32 + schema.len() + self.rows.len() * 8 * (nvals + 1));
        out.extend_from_slice(MAGIC);
        out.extend_from_slice(&SNAPSHOT_VERSION.to_le_bytes());
        out.extend_from_slice(&(schema.len() as u32).to_le_bytes());
        out.extend_from_slice(&schema);
        out.extend_from_slice(&(self.rows.len() as u64).to_le_bytes());
        out.extend_from_slice(&(nvals as u32).to_le_bytes());
        for (k, r) in &self.rows {
            out.extend_from_slice(&k.to_le_bytes());
            for v in r.iter() {
                out.extend_from_slice(&v.to_le_bytes());
            }
        }
        let digest = Sha256::digest(&out);
        out.extend_from_slice(&digest);
        out
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        let corrupt = |m: &str| Error::CorruptSnapshot(m.to_string());
        if bytes.len() < 4 + 4 + 4 + 32 || &bytes[..4] != MAGIC {
            return Err(corrupt("bad magic"));
        }
        let (body, digest) = bytes.split_at(bytes.len() - 32);
        if Sha256::digest(body).as_slice() != digest {
            return Err(corrupt("checksum mismatch"));
        }
        let mut r = Reader { buf: body, pos: 4 };
        let version = r.u32()?;
        if version != SNAPSHOT_VERSION {
            return Err(Error::UnsupportedVersion {
                what: "snapshot",
                found: version,
            });
        }
        let slen = r.u32()? as usize;
        let schema: TableSchema =
            serde_json::from_slice(r.take(slen)?).map_err(|e| corrupt(&format!("schema: {e}")))?;
        schema.validate()?;
        let n = r.u64()? as usize;
        let nvals = r.u32()? as usize;
        if nvals != schema.num_values() {
            return Err(corrupt("value count disagrees with schema"));
        }
        let mut rows = Vec::with_capacity(n.min(body.len() / 8));
        for _ in 0..n {
            let k = r.u64()?;
            let vals: Row = (0..nvals).map(|_| r.u64()).collect::<Result<_>>()?;
            rows.push((k, vals));
        }
        if r.pos != body.len() {
            return Err(corrupt("trailing bytes"));
        }
        Ok(Snapshot { schema, rows })
    }

    pub fn write_to(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.to_bytes())?;
        Ok(())
    }

    pub fn read_from(path: &Path) -> Result<Self> {
        Self::from_bytes(&std::fs::read(path)?)
    }
}

struct Reader<'a> {
    buf: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        let end = self.pos.checked_add(n).filter(|&e| e <= self.buf.len());
        let end = end.ok_or_else(|| Error::CorruptSnapshot("truncated".into()))?;
        let s = &self.buf[self.pos..end];
        self.pos = end;
        Ok(s)
    }

    fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().unwrap()))
    }

    fn u64(&mut self) -> Result<u64> {
        Ok(u64::from_le_bytes(self.take(8)?.try_into().unwrap()))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::schema::{DataLayout, EngineKind, FieldSpec, LengthKind};
    use crate::sim::Request;

    fn schema() -> TableSchema {
        TableSchema::new(
            "t",
            vec![
                FieldSpec::key("k", LengthKind::Fixed, 8),
                FieldSpec::value("a", LengthKind::Fixed, 4),
                FieldSpec::value("b", LengthKind::Fixed, 4),
                FieldSpec::value("c", LengthKind::Variable, 30),
            ],
        )
        .unwrap()
    }

    #[test]
    fn round_trip_across_structures() {
        let s = schema();
        let nsm = StorageStructure::new(EngineKind::LsmRow, DataLayout::nsm(&s), &s).unwrap();
        let mut p = Partition::with_rows(&s, &nsm, &CostParams::default(), 300).unwrap();
        p.exec(&Request::Insert {
            keys: vec![5, 77, 123_456],
        })
        .unwrap();
        let snap = p.snapshot();
        assert_eq!(snap.rows.len(), 303);
        let back = Snapshot::from_bytes(&snap.to_bytes()).unwrap();
        assert_eq!(back, snap);

        let dsm = StorageStructure::new(EngineKind::Columnar, DataLayout::dsm(&s), &s).unwrap();
        let q = snap.restore(&dsm, &CostParams::default()).unwrap();
        assert_eq!(q.snapshot(), snap);
        assert!(q.groups_consistent());
    }

    #[test]
    fn empty_snapshot() {
        let s = schema();
        let st = StorageStructure::new(EngineKind::BPlusRow, DataLayout::nsm(&s), &s).unwrap();
        let p = Partition::new(&s, &st, &CostParams::default()).unwrap();
        let snap = p.snapshot();
        assert!(snap.rows.is_empty());
        let q = Snapshot::from_bytes(&snap.to_bytes())
            .unwrap()
            .restore(&st, &CostParams::default())
            .unwrap();
        assert_eq!(q.rows(), 0);
    }

    #[test]
    fn corruption_is_detected() {
        let s = schema();
        let st = StorageStructure::new(EngineKind::BPlusRow, DataLayout::nsm(&s), &s).unwrap();
        let p = Partition::with_rows(&s, &st, &CostParams::default(), 10).unwrap();
        let mut bytes = p.snapshot().to_bytes();
        let mid = bytes.len() / 2;
        bytes[mid] ^= 0xff;
        assert!(matches!(Snapshot::from_bytes(&bytes), Err(Error::CorruptSnapshot(_))));
        assert!(matches!(Snapshot::from_bytes(b"nope"), Err(Error::CorruptSnapshot(_))));
    }
}
