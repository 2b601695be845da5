//! Shared domain types: schemas, access operations, workloads, column-group
//! layouts and storage structures.
//!
//! Key fields form an opaque prefix of the schema. Column groups partition
//! the value fields only; every group carries a full copy of the key fields
//! on disk, so a group's physical row width is `key bytes + group bytes`.

use std::cmp::Ordering;
use std::collections::{BTreeSet, HashSet};
use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, OpClass, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FieldRole {
    Key,
    Value,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LengthKind {
    Fixed,
    Variable,
}

/// Largest width accepted for a fixed-length (numeric-style) field.
pub const MAX_FIXED_BYTES: u32 = 8;

#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct FieldSpec {
    pub name: String,
    pub role: FieldRole,
    pub length_kind: LengthKind,
    pub avg_length_bytes: u32,
}

impl FieldSpec {
    pub fn key(name: impl Into<String>, kind: LengthKind, bytes: u32) -> Self {
        FieldSpec {
            name: name.into(),
            role: FieldRole::Key,
            length_kind: kind,
            avg_length_bytes: bytes,
        }
    }

    pub fn value(name: impl Into<String>, kind: LengthKind, bytes: u32) -> Self {
        FieldSpec {
            name: name.into(),
            role: FieldRole::Value,
            length_kind: kind,
            avg_length_bytes: bytes,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TableSchema {
    pub name: String,
    pub fields: Vec<FieldSpec>,
}

impl TableSchema {
    /// Builds a schema and checks its invariants.
    pub fn new(name: impl Into<String>, fields: Vec<FieldSpec>) -> Result<Self> {
        let schema = TableSchema {
            name: name.into(),
            fields,
        };
        schema.validate()?;
        Ok(schema)
    }

    pub fn validate(&self) -> Result<()> {
        let keys = self.fields.iter().filter(|f| f.role == FieldRole::Key).count();
        if keys == 0 {
            return Err(Error::InvalidSchema(format!("`{}` has no key field", self.name)));
        }
        if keys == self.fields.len() {
            return Err(Error::InvalidSchema(format!("`{}` has no value field", self.name)));
        }
        if self.fields[..keys].iter().any(|f| f.role != FieldRole::Key) {
            return Err(Error::InvalidSchema(format!(
                "`{}`: key fields must form a prefix",
                self.name
            )));
        }
        let mut seen = HashSet::new();
        for f in &self.fields {
            if !seen.insert(f.name.as_str()) {
                return Err(Error::InvalidSchema(format!("duplicate field `{}`", f.name)));
            }
            if f.avg_length_bytes == 0 {
                return Err(Error::InvalidSchema(format!("field `{}` has zero length", f.name)));
            }
            if f.length_kind == LengthKind::Fixed && f.avg_length_bytes > MAX_FIXED_BYTES {
                return Err(Error::InvalidSchema(format!(
                    "fixed field `{}` is wider than {MAX_FIXED_BYTES} bytes",
                    f.name
                )));
            }
        }
        Ok(())
    }

    pub fn key_fields(&self) -> impl Iterator<Item = &FieldSpec> {
        self.fields.iter().filter(|f| f.role == FieldRole::Key)
    }

    pub fn value_fields(&self) -> impl Iterator<Item = &FieldSpec> {
        self.fields.iter().filter(|f| f.role == FieldRole::Value)
    }

    pub fn value_names(&self) -> Vec<String> {
        self.value_fields().map(|f| f.name.clone()).collect()
    }

    pub fn num_values(&self) -> usize {
        self.value_fields().count()
    }

    pub fn key_bytes(&self) -> u64 {
        self.key_fields().map(|f| f.avg_length_bytes as u64).sum()
    }

    /// Position of a value column among the value fields.
    pub fn value_index(&self, name: &str) -> Option<usize> {
        self.value_fields().position(|f| f.name == name)
    }

    pub fn value_field(&self, name: &str) -> Result<&FieldSpec> {
        self.value_fields()
            .find(|f| f.name == name)
            .ok_or_else(|| Error::UnknownColumn(name.to_string()))
    }
}

/// Orders names so that embedded numbers compare numerically (`V2 < V10`).
pub fn natural_cmp(a: &str, b: &str) -> Ordering {
    let (mut ia, mut ib) = (a.as_bytes(), b.as_bytes());
    loop {
        match (ia.first(), ib.first()) {
            (None, None) => return a.cmp(b),
            (None, Some(_)) => return Ordering::Less,
            (Some(_), None) => return Ordering::Greater,
            (Some(ca), Some(cb)) if ca.is_ascii_digit() && cb.is_ascii_digit() => {
                let na = ia.iter().take_while(|c| c.is_ascii_digit()).count();
                let nb = ib.iter().take_while(|c| c.is_ascii_digit()).count();
                let (da, db) = (trim_zeros(&ia[..na]), trim_zeros(&ib[..nb]));
                let ord = da.len().cmp(&db.len()).then_with(|| da.cmp(db));
                if ord != Ordering::Equal {
                    return ord;
                }
                ia = &ia[na..];
                ib = &ib[nb..];
            }
            (Some(ca), Some(cb)) => {
                if ca != cb {
                    return ca.cmp(cb);
                }
                ia = &ia[1..];
                ib = &ib[1..];
            }
        }
    }
}

fn trim_zeros(d: &[u8]) -> &[u8] {
    let z = d.iter().take_while(|&&c| c == b'0').count();
    &d[z.min(d.len().saturating_sub(1))..]
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum OpType {
    PointLookup,
    RangeScan,
    Insert,
}

impl OpType {
    pub fn class(self) -> OpClass {
        match self {
            OpType::Insert => OpClass::Write,
            _ => OpClass::Read,
        }
    }

    pub fn as_str(self) -> &'static str {
        match self {
            OpType::PointLookup => "point_lookup",
            OpType::RangeScan => "range_scan",
            OpType::Insert => "insert",
        }
    }
}

/// One data-access operation, possibly repeated `frequency` times.
///
/// `columns` names the value columns read; an empty set means all of them.
/// Inserts always write every column.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AccessOp {
    pub op_type: OpType,
    pub columns: Vec<String>,
    pub result_rows: u64,
    pub selectivity: f64,
    pub key_randomness: Option<f64>,
    pub frequency: u64,
    pub age: u32,
}

impl AccessOp {
    pub fn point_lookup(columns: &[&str], table_rows: u64) -> Self {
        AccessOp {
            op_type: OpType::PointLookup,
            columns: sorted_names(columns.iter().map(|c| c.to_string())),
            result_rows: 1,
            selectivity: ratio(1, table_rows),
            key_randomness: None,
            frequency: 1,
            age: 0,
        }
    }

    pub fn range_scan(columns: &[&str], rows: u64, table_rows: u64) -> Self {
        AccessOp {
            op_type: OpType::RangeScan,
            columns: sorted_names(columns.iter().map(|c| c.to_string())),
            result_rows: rows,
            selectivity: ratio(rows, table_rows),
            key_randomness: None,
            frequency: 1,
            age: 0,
        }
    }

    pub fn insert(rows: u64, key_randomness: f64, table_rows: u64) -> Self {
        AccessOp {
            op_type: OpType::Insert,
            columns: Vec::new(),
            result_rows: rows,
            selectivity: ratio(rows, table_rows),
            key_randomness: Some(key_randomness.clamp(0.0, 1.0)),
            frequency: 1,
            age: 0,
        }
    }

    pub fn with_frequency(mut self, frequency: u64) -> Self {
        self.frequency = frequency;
        self
    }

    pub fn with_age(mut self, age: u32) -> Self {
        self.age = age;
        self
    }

    pub fn class(&self) -> OpClass {
        self.op_type.class()
    }

    /// Columns this op reads, resolving the empty set to every value column.
    pub fn read_columns(&self, schema: &TableSchema) -> Vec<String> {
        if self.columns.is_empty() || self.op_type == OpType::Insert {
            schema.value_names()
        } else {
            self.columns.clone()
        }
    }

    pub fn validate(&self, schema: &TableSchema) -> Result<()> {
        for c in &self.columns {
            schema.value_field(c)?;
        }
        if self.frequency == 0 {
            return Err(Error::InvalidOp("frequency must be positive".into()));
        }
        if !(0.0..=1.0).contains(&self.selectivity) || self.selectivity.is_nan() {
            return Err(Error::InvalidOp(format!(
                "selectivity {} outside [0,1]",
                self.selectivity
            )));
        }
        match self.op_type {
            OpType::PointLookup if self.result_rows > 1 => {
                Err(Error::InvalidOp("point lookup returns at most one row".into()))
            }
            OpType::Insert => match self.key_randomness {
                Some(r) if (0.0..=1.0).contains(&r) => {
                    if self.result_rows == 0 {
                        Err(Error::InvalidOp("insert of zero rows".into()))
                    } else {
                        Ok(())
                    }
                }
                _ => Err(Error::InvalidOp("insert needs key randomness in [0,1]".into())),
            },
            _ if self.key_randomness.is_some() => {
                Err(Error::InvalidOp("key randomness is only defined for inserts".into()))
            }
            _ => Ok(()),
        }
    }
}

fn ratio(rows: u64, table_rows: u64) -> f64 {
    if table_rows == 0 {
        if rows == 0 {
            0.0
        } else {
            1.0
        }
    } else {
        (rows as f64 / table_rows as f64).min(1.0)
    }
}

fn sorted_names(names: impl Iterator<Item = String>) -> Vec<String> {
    let mut v: Vec<String> = names.collect::<BTreeSet<_>>().into_iter().collect();
    v.sort_by(|a, b| natural_cmp(a, b));
    v
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Workload {
    pub table: String,
    pub ops: Vec<AccessOp>,
    pub initial_table_rows: u64,
}

impl Workload {
    pub fn validate(&self, schema: &TableSchema) -> Result<()> {
        if self.table != schema.name {
            return Err(Error::SchemaMismatch(format!(
                "workload targets `{}`, schema is `{}`",
                self.table, schema.name
            )));
        }
        self.ops.iter().try_for_each(|op| op.validate(schema))
    }

    /// Total number of executed requests once frequencies are expanded.
    pub fn executed_ops(&self) -> u64 {
        self.ops.iter().map(|o| o.frequency).sum()
    }
}

/// A partition of the value columns into disjoint column groups.
#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct DataLayout {
    groups: Vec<Vec<String>>,
}

impl DataLayout {
    /// Builds a layout in canonical form without checking it against a schema.
    pub fn new<I, G, S>(groups: I) -> Self
    where
        I: IntoIterator<Item = G>,
        G: IntoIterator<Item = S>,
        S: Into<String>,
    {
        let mut groups: Vec<Vec<String>> = groups
            .into_iter()
            .map(|g| sorted_names(g.into_iter().map(Into::into)))
            .collect();
        groups.sort_by(|a, b| match (a.first(), b.first()) {
            (Some(x), Some(y)) => natural_cmp(x, y),
            (x, y) => x.is_some().cmp(&y.is_some()),
        });
        DataLayout { groups }
    }

    pub fn nsm(schema: &TableSchema) -> Self {
        DataLayout::new([schema.value_names()])
    }

    pub fn dsm(schema: &TableSchema) -> Self {
        DataLayout::new(schema.value_names().into_iter().map(|c| [c]))
    }

    pub fn groups(&self) -> &[Vec<String>] {
        &self.groups
    }

    pub fn len(&self) -> usize {
        self.groups.len()
    }

    pub fn is_empty(&self) -> bool {
        self.groups.is_empty()
    }

    pub fn is_nsm(&self) -> bool {
        self.groups.len() == 1
    }

    pub fn is_dsm(&self) -> bool {
        self.groups.iter().all(|g| g.len() == 1)
    }

    /// True when every group of `self` lies inside one group of `coarser`.
    pub fn refines(&self, coarser: &DataLayout) -> bool {
        self.groups
            .iter()
            .all(|g| coarser.groups.iter().any(|c| g.iter().all(|col| c.contains(col))))
    }

    /// Indices of groups that share at least one column with `columns`.
    pub fn touched_groups(&self, columns: &[String]) -> Vec<usize> {
        self.groups
            .iter()
            .enumerate()
            .filter(|(_, g)| g.iter().any(|c| columns.contains(c)))
            .map(|(i, _)| i)
            .collect()
    }

    /// Parses the canonical text form, e.g. `(a,b)(c)`, or `nsm` / `dsm`.
    pub fn parse(text: &str, schema: &TableSchema) -> Result<Self> {
        let t = text.trim();
        let layout = match t.to_ascii_lowercase().as_str() {
            "nsm" => DataLayout::nsm(schema),
            "dsm" => DataLayout::dsm(schema),
            _ => {
                let mut groups = Vec::new();
                let mut rest = t;
                while !rest.is_empty() {
                    let open = rest
                        .strip_prefix('(')
                        .ok_or_else(|| Error::Parse(format!("expected `(` in layout `{text}`")))?;
                    let close = open
                        .find(')')
                        .ok_or_else(|| Error::Parse(format!("unbalanced `(` in layout `{text}`")))?;
                    let group: Vec<String> = open[..close]
                        .split(',')
                        .map(|s| s.trim().to_string())
                        .filter(|s| !s.is_empty())
                        .collect();
                    groups.push(group);
                    rest = open[close + 1..].trim_start();
                }
                DataLayout::new(groups)
            }
        };
        validate_layout(&layout, schema)?;
        Ok(layout)
    }
}

impl fmt::Display for DataLayout {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        for g in &self.groups {
            write!(f, "({})", g.join(","))?;
        }
        Ok(())
    }
}

/// Checks that the layout's groups partition the schema's value columns.
pub fn validate_layout(layout: &DataLayout, schema: &TableSchema) -> Result<()> {
    let mut seen = HashSet::new();
    for group in layout.groups() {
        if group.is_empty() {
            return Err(Error::Parse("empty column group".into()));
        }
        for c in group {
            schema.value_field(c)?;
            if !seen.insert(c.as_str()) {
                return Err(Error::OverlappingGroups(c.clone()));
            }
        }
    }
    for f in schema.value_fields() {
        if !seen.contains(f.name.as_str()) {
            return Err(Error::MissingColumn(f.name.clone()));
        }
    }
    Ok(())
}

/// Physical row width of one column group: all key bytes plus the group's
/// value bytes.
pub fn row_bytes_for_group<S: AsRef<str>>(schema: &TableSchema, group: &[S]) -> Result<u64> {
    let mut bytes = schema.key_bytes();
    for c in group {
        bytes += schema.value_field(c.as_ref())?.avg_length_bytes as u64;
    }
    Ok(bytes)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum EngineKind {
    BPlusRow,
    LsmRow,
    Columnar,
}

impl EngineKind {
    pub const ALL: [EngineKind; 3] = [EngineKind::BPlusRow, EngineKind::LsmRow, EngineKind::Columnar];

    pub fn as_str(self) -> &'static str {
        match self {
            EngineKind::BPlusRow => "bplus",
            EngineKind::LsmRow => "lsm",
            EngineKind::Columnar => "columnar",
        }
    }
}

impl fmt::Display for EngineKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for EngineKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "bplus" | "b+" | "bplus_row" | "btree" => Ok(EngineKind::BPlusRow),
            "lsm" | "lsm_row" => Ok(EngineKind::LsmRow),
            "columnar" | "column" => Ok(EngineKind::Columnar),
            other => Err(Error::Parse(format!("unknown engine `{other}`"))),
        }
    }
}

/// An (engine, layout) pair: the unit of recommendation.
#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct StorageStructure {
    pub engine: EngineKind,
    pub layout: DataLayout,
}

impl StorageStructure {
    pub fn new(engine: EngineKind, layout: DataLayout, schema: &TableSchema) -> Result<Self> {
        let s = StorageStructure { engine, layout };
        s.validate(schema)?;
        Ok(s)
    }

    pub fn validate(&self, schema: &TableSchema) -> Result<()> {
        validate_layout(&self.layout, schema)?;
        if self.engine == EngineKind::Columnar && !self.layout.is_dsm() {
            return Err(Error::TargetInvalid(format!(
                "columnar engine requires DSM, got {}",
                self.layout
            )));
        }
        Ok(())
    }
}

impl fmt::Display for StorageStructure {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{} {}", self.engine, self.layout)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Candidate {
    pub structure: StorageStructure,
    pub predicted_cost_us: f64,
}

/// The TPC-H LINEITEM table with anonymized names: keys K1..K4, values V1..V12.
pub fn lineitem_schema() -> TableSchema {
    use LengthKind::*;
    let mut fields = vec![
        FieldSpec::key("K1", Fixed, 8),
        FieldSpec::key("K2", Fixed, 4),
        FieldSpec::key("K3", Fixed, 4),
        FieldSpec::key("K4", Fixed, 4),
    ];
    let values = [
        (Fixed, 8),
        (Fixed, 8),
        (Fixed, 8),
        (Fixed, 8),
        (Fixed, 1),
        (Fixed, 1),
        (Fixed, 4),
        (Fixed, 4),
        (Fixed, 4),
        (Variable, 12),
        (Variable, 5),
        (Variable, 27),
    ];
    for (i, (k, b)) in values.into_iter().enumerate() {
        fields.push(FieldSpec::value(format!("V{}", i + 1), k, b));
    }
    TableSchema::new("lineitem", fields).unwrap()
}

#[cfg(test)]
pub(crate) mod tests {
    use super::*;

    pub fn lineitem() -> TableSchema {
        lineitem_schema()
    }

    fn small() -> TableSchema {
        TableSchema::new(
            "t",
            vec![
                FieldSpec::key("k", LengthKind::Fixed, 8),
                FieldSpec::value("a", LengthKind::Fixed, 4),
                FieldSpec::value("b", LengthKind::Fixed, 4),
            ],
        )
        .unwrap()
    }

    #[test]
    fn nsm_and_split_layouts_validate() {
        let s = lineitem();
        assert!(validate_layout(&DataLayout::nsm(&s), &s).is_ok());
        assert!(validate_layout(&DataLayout::dsm(&s), &s).is_ok());
        let split = DataLayout::new([
            vec!["V2", "V3", "V7"],
            vec!["V1", "V4", "V5", "V6", "V8", "V9", "V10", "V11", "V12"],
        ]);
        assert!(validate_layout(&split, &s).is_ok());
        assert_eq!(split.to_string(), "(V1,V4,V5,V6,V8,V9,V10,V11,V12)(V2,V3,V7)");
    }

    #[test]
    fn layout_errors() {
        let s = lineitem();
        let mut groups: Vec<Vec<String>> = vec![vec!["V1".into()], vec!["V1".into(), "V2".into()]];
        groups.extend((3..=12).map(|i| vec![format!("V{i}")]));
        assert_eq!(
            validate_layout(&DataLayout::new(groups), &s),
            Err(Error::OverlappingGroups("V1".into()))
        );
        let missing = DataLayout::new([vec!["V1"]]);
        assert!(matches!(validate_layout(&missing, &s), Err(Error::MissingColumn(_))));
        let unknown = DataLayout::new([vec!["Z"]]);
        assert_eq!(validate_layout(&unknown, &s), Err(Error::UnknownColumn("Z".into())));
    }

    #[test]
    fn group_row_bytes() {
        let s = small();
        assert_eq!(row_bytes_for_group(&s, &["a"]).unwrap(), 12);
        assert_eq!(row_bytes_for_group(&s, &["a", "b"]).unwrap(), 16);
        assert!(matches!(row_bytes_for_group(&s, &["zz"]), Err(Error::UnknownColumn(_))));

        let mut fields = vec![
            FieldSpec::key("k1", LengthKind::Fixed, 8),
            FieldSpec::key("k2", LengthKind::Variable, 12),
        ];
        fields.extend((0..4).map(|i| FieldSpec::value(format!("v{i}"), LengthKind::Variable, 25)));
        let wide = TableSchema::new("w", fields).unwrap();
        assert_eq!(row_bytes_for_group(&wide, &wide.value_names()).unwrap(), 120);
    }

    #[test]
    fn schema_invariants() {
        use LengthKind::Fixed;
        assert!(TableSchema::new("x", vec![FieldSpec::value("a", Fixed, 4)]).is_err());
        assert!(TableSchema::new("x", vec![FieldSpec::key("k", Fixed, 4)]).is_err());
        let not_prefix = vec![
            FieldSpec::value("a", Fixed, 4),
            FieldSpec::key("k", Fixed, 4),
            FieldSpec::value("b", Fixed, 4),
        ];
        assert!(TableSchema::new("x", not_prefix).is_err());
        let wide_fixed = vec![FieldSpec::key("k", Fixed, 4), FieldSpec::value("a", Fixed, 16)];
        assert!(TableSchema::new("x", wide_fixed).is_err());
        let dup = vec![FieldSpec::key("k", Fixed, 4), FieldSpec::value("k", Fixed, 4)];
        assert!(TableSchema::new("x", dup).is_err());
    }

    #[test]
    fn layout_text_round_trip() {
        let s = lineitem();
        let l = DataLayout::parse("(V2, V3,V7)(V1,V4,V5,V6,V8,V9,V10,V11,V12)", &s).unwrap();
        assert_eq!(DataLayout::parse(&l.to_string(), &s).unwrap(), l);
        assert!(DataLayout::parse("nsm", &s).unwrap().is_nsm());
        assert!(DataLayout::parse("DSM", &s).unwrap().is_dsm());
        assert!(DataLayout::parse("(V1", &s).is_err());
    }

    #[test]
    fn natural_order() {
        let mut v = vec!["V10", "V2", "V1", "a", "V02"];
        v.sort_by(|a, b| natural_cmp(a, b));
        assert_eq!(v, vec!["V1", "V02", "V2", "V10", "a"]);
    }

    #[test]
    fn columnar_requires_dsm() {
        let s = small();
        assert!(StorageStructure::new(EngineKind::Columnar, DataLayout::nsm(&s), &s).is_err());
        assert!(StorageStructure::new(EngineKind::Columnar, DataLayout::dsm(&s), &s).is_ok());
        assert!(StorageStructure::new(EngineKind::LsmRow, DataLayout::nsm(&s), &s).is_ok());
    }

    #[test]
    fn op_validation() {
        let s = small();
        assert!(AccessOp::point_lookup(&["a"], 10).validate(&s).is_ok());
        assert!(AccessOp::range_scan(&["q"], 5, 10).validate(&s).is_err());
        let mut bad = AccessOp::point_lookup(&[], 10);
        bad.result_rows = 3;
        assert!(bad.validate(&s).is_err());
        let mut no_rand = AccessOp::insert(3, 0.0, 10);
        no_rand.key_randomness = None;
        assert!(no_rand.validate(&s).is_err());
        let scan = AccessOp::range_scan(&[], 500, 10_000);
        assert!((scan.selectivity - 0.05).abs() < 1e-15);
        assert_eq!(scan.read_columns(&s), vec!["a", "b"]);
    }
}
