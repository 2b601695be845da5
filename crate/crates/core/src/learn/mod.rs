//! Learned cost model: a surge classifier plus boosted regressors for each
//! (engine, operation class).

pub mod gbdt;
pub mod logistic;
pub mod outliers;

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::bench::{PerfRecord, RecordSource};
use crate::error::{Error, OpClass, Result};
use crate::features::{extract_features, FeatureVector, StructureState, FEATURE_VERSION, NUM_FEATURES};
use crate::schema::{AccessOp, EngineKind, StorageStructure, TableSchema, Workload};

pub use gbdt::{BoostedRegressor, GbdtParams};
pub use logistic::SurgeClassifier;
pub use outliers::{drop_outliers_read, split_outliers_write, surge_labels, DbscanParams};

/// How the write model combines its parts.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum WriteComposition {
    /// `f_o(x) p(x) + f_r(x)`; `f_o` learns the signed difference between a
    /// surge point's cost and the regular-cost prediction there.
    #[default]
    Additive,
    /// `f_o(x) p(x) + f_r(x) (1 - p(x))`; `f_o` learns the full cost of a
    /// surge point.
    Complementary,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct LearnConfig {
    pub gbdt: GbdtParams,
    pub surge_k: f64,
    pub dbscan_eps: f64,
    pub dbscan_min_pts: usize,
    pub max_drop: f64,
    /// Ridge penalty on the classifier weights.
    pub logistic_l2: f64,
    pub min_records: usize,
    pub composition: WriteComposition,
}

impl Default for LearnConfig {
    fn default() -> Self {
        LearnConfig {
            gbdt: GbdtParams::default(),
            surge_k: 5.0,
            dbscan_eps: 0.5,
            dbscan_min_pts: 8,
            max_drop: 0.2,
            logistic_l2: 100.0,
            min_records: 50,
            composition: WriteComposition::Additive,
        }
    }
}

impl LearnConfig {
    fn dbscan(&self) -> DbscanParams {
        DbscanParams {
            eps: self.dbscan_eps,
            min_pts: self.dbscan_min_pts,
            max_drop: self.max_drop,
        }
    }
}

/// A regressor fitted on log per-row times. Exponentiating a log-space
/// fit estimates the conditional median; `correction` models the local
/// mean of the exponentiated residual and `smearing` rescales so that
/// predicted totals match over the training rows.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LogRegressor {
    pub model: BoostedRegressor,
    pub correction: BoostedRegressor,
    pub smearing: f64,
}

const LOG_FLOOR: f64 = 1e-6;
const MIN_CORRECTION: f64 = 0.05;

impl LogRegressor {
    /// `weights` are the row counts each per-row target is spread over.
    pub fn fit(rows: &[&[f64]], targets: &[f64], weights: &[f64], params: &GbdtParams) -> Self {
        let y: Vec<f64> = targets.iter().map(|t| t.max(LOG_FLOOR).ln()).collect();
        let model = BoostedRegressor::fit(rows, &y, params);
        let ratio: Vec<f64> = rows.iter().zip(&y).map(|(r, t)| (t - model.predict(r)).exp()).collect();
        let correction = BoostedRegressor::fit(rows, &ratio, params);
        let mut m = LogRegressor {
            model,
            correction,
            smearing: 1.0,
        };
        let (mut actual, mut fitted) = (0.0, 0.0);
        for ((r, t), w) in rows.iter().zip(targets).zip(weights) {
            actual += w * t.max(LOG_FLOOR);
            fitted += w * m.predict(r);
        }
        if fitted > 0.0 && actual > 0.0 {
            m.smearing = actual / fitted;
        }
        m
    }

    pub fn constant(value: f64) -> Self {
        LogRegressor {
            model: BoostedRegressor::constant(value.max(LOG_FLOOR).ln()),
            correction: BoostedRegressor::constant(1.0),
            smearing: 1.0,
        }
    }

    pub fn predict(&self, x: &[f64]) -> f64 {
        let c = self.correction.predict(x).max(MIN_CORRECTION);
        let v = self.model.predict(x).exp() * c * self.smearing;
        if v.is_finite() {
            v.max(0.0)
        } else {
            0.0
        }
    }
}

/// Cost model of surge points.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub enum SurgeCost {
    /// Ratio of a surge point's cost to the regular-cost prediction; the
    /// surge increment is `f_r(x) (R(x) - 1)` and may be negative where
    /// `f_r` extrapolates high.
    Increment(LogRegressor),
    /// Full per-row cost.
    Full(LogRegressor),
}

impl SurgeCost {
    pub fn predict(&self, x: &[f64], f_r: f64) -> f64 {
        match self {
            SurgeCost::Increment(ratio) => f_r * (ratio.predict(x) - 1.0),
            SurgeCost::Full(m) => m.predict(x),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub enum ClassModel {
    Read {
        f: LogRegressor,
    },
    Write {
        surge: SurgeClassifier,
        f_o: SurgeCost,
        f_r: LogRegressor,
    },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EngineModel {
    pub engine: EngineKind,
    pub class: OpClass,
    pub records: usize,
    pub model: ClassModel,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CostModel {
    pub feature_version: String,
    /// Bumped on every retrain that starts from a previous model.
    pub model_version: u32,
    pub config: LearnConfig,
    pub parts: Vec<EngineModel>,
}

pub const MODEL_MAGIC: &[u8; 4] = b"SSCM";
pub const MODEL_FORMAT_VERSION: u32 = 1;

fn rows_of(records: &[PerfRecord]) -> Vec<&[f64]> {
    records.iter().map(|r| r.features.values().as_slice()).collect()
}

fn train_part(engine: EngineKind, class: OpClass, records: &[PerfRecord], cfg: &LearnConfig) -> Result<EngineModel> {
    let model = match class {
        OpClass::Read => {
            let kept = drop_outliers_read(records, &cfg.dbscan())?;
            let t: Vec<f64> = kept.iter().map(|r| r.elapsed_per_row_us).collect();
            let w: Vec<f64> = kept.iter().map(PerfRecord::rows).collect();
            ClassModel::Read {
                f: LogRegressor::fit(&rows_of(&kept), &t, &w, &cfg.gbdt),
            }
        }
        OpClass::Write => {
            let labels = write_labels(records, cfg.surge_k)?;
            let (mut regular, mut surges) = (Vec::new(), Vec::new());
            for (r, &s) in records.iter().zip(&labels) {
                if s {
                    surges.push(r)
                } else {
                    regular.push(r)
                }
            }
            let surge = SurgeClassifier::fit(&rows_of(records), &labels, cfg.logistic_l2);
            let f_r = fit_or_constant(&regular, |r| r.elapsed_per_row_us, &cfg.gbdt, records);
            let f_o = match cfg.composition {
                WriteComposition::Complementary => {
                    SurgeCost::Full(fit_or_constant(&surges, |r| r.elapsed_per_row_us, &cfg.gbdt, records))
                }
                WriteComposition::Additive if surges.is_empty() => SurgeCost::Increment(LogRegressor::constant(1.0)),
                WriteComposition::Additive => SurgeCost::Increment(fit_or_constant(
                    &surges,
                    |r| r.elapsed_per_row_us / f_r.predict(r.features.values()).max(LOG_FLOOR),
                    &cfg.gbdt,
                    records,
                )),
            };
            ClassModel::Write { surge, f_o, f_r }
        }
    };
    Ok(EngineModel {
        engine,
        class,
        records: records.len(),
        model,
    })
}

/// Benchmark records carry a reliable surge flag; the threshold rule only
/// applies to runtime records.
fn write_labels(records: &[PerfRecord], k: f64) -> Result<Vec<bool>> {
    let runtime: Vec<PerfRecord> = records
        .iter()
        .filter(|r| r.source == RecordSource::Runtime)
        .cloned()
        .collect();
    let mut rt = if runtime.is_empty() {
        Vec::new()
    } else {
        surge_labels(&runtime, k)?
    }
    .into_iter();
    Ok(records
        .iter()
        .map(|r| match r.source {
            RecordSource::Runtime => rt.next().unwrap_or(r.surge),
            RecordSource::Benchmark => r.surge,
        })
        .collect())
}

fn fit_or_constant(
    subset: &[&PerfRecord],
    target: impl Fn(&PerfRecord) -> f64,
    params: &GbdtParams,
    all: &[PerfRecord],
) -> LogRegressor {
    if subset.is_empty() {
        let mut t: Vec<f64> = all.iter().map(|r| r.elapsed_per_row_us).collect();
        t.sort_by(f64::total_cmp);
        return LogRegressor::constant(t[t.len() / 2]);
    }
    let t: Vec<f64> = subset.iter().map(|r| target(r)).collect();
    let w: Vec<f64> = subset.iter().map(|r| r.rows()).collect();
    let rows: Vec<&[f64]> = subset.iter().map(|r| r.features.values().as_slice()).collect();
    LogRegressor::fit(&rows, &t, &w, params)
}

impl CostModel {
    /// Trains one model per (engine, class); classes train in parallel.
    pub fn train(records: &[PerfRecord], cfg: &LearnConfig) -> Result<Self> {
        let mut jobs = Vec::new();
        for engine in EngineKind::ALL {
            for class in [OpClass::Read, OpClass::Write] {
                let part: Vec<PerfRecord> = records
                    .iter()
                    .filter(|r| r.engine == engine && r.class() == class)
                    .cloned()
                    .collect();
                if part.len() < cfg.min_records.max(1) {
                    return Err(Error::InsufficientData {
                        engine,
                        class,
                        have: part.len(),
                        need: cfg.min_records.max(1),
                    });
                }
                jobs.push((engine, class, part));
            }
        }
        let parts = std::thread::scope(|s| {
            let handles: Vec<_> = jobs
                .iter()
                .map(|(e, c, recs)| s.spawn(move || train_part(*e, *c, recs, cfg)))
                .collect();
            handles
                .into_iter()
                .map(|h| h.join().expect("training thread panicked"))
                .collect::<Result<Vec<_>>>()
        })?;
        Ok(CostModel {
            feature_version: FEATURE_VERSION.to_string(),
            model_version: 1,
            config: cfg.clone(),
            parts,
        })
    }

    /// Retrains on `records`, carrying the version forward.
    pub fn retrain(&self, records: &[PerfRecord]) -> Result<Self> {
        let mut m = CostModel::train(records, &self.config)?;
        m.model_version = self.model_version + 1;
        Ok(m)
    }

    /// Whether the record count grew enough since the last training.
    pub fn needs_retrain(&self, record_count: usize) -> bool {
        let trained: usize = self.parts.iter().map(|p| p.records).sum();
        record_count as f64 >= trained as f64 * 1.1
    }

    fn check_version(&self) -> Result<()> {
        if self.feature_version != FEATURE_VERSION {
            return Err(Error::FeatureVersionMismatch {
                expected: FEATURE_VERSION.into(),
                found: self.feature_version.clone(),
            });
        }
        Ok(())
    }

    pub fn part(&self, engine: EngineKind, class: OpClass) -> Result<&EngineModel> {
        self.parts
            .iter()
            .find(|p| p.engine == engine && p.class == class)
            .ok_or(Error::ModelMissing)
    }

    /// Surge probability of a write.
    pub fn surge_probability(&self, engine: EngineKind, x: &FeatureVector) -> Result<f64> {
        self.check_version()?;
        match &self.part(engine, OpClass::Write)?.model {
            ClassModel::Write { surge, .. } => Ok(surge.probability(x.values())),
            ClassModel::Read { .. } => Err(Error::ModelMissing),
        }
    }

    /// Predicted per-row time of one operation on one group.
    pub fn predict_op(&self, engine: EngineKind, class: OpClass, x: &FeatureVector) -> Result<f64> {
        self.check_version()?;
        let v = x.values();
        let out = match &self.part(engine, class)?.model {
            ClassModel::Read { f } => f.predict(v),
            ClassModel::Write { surge, f_o, f_r } => {
                let p = surge.probability(v);
                match self.config.composition {
                    WriteComposition::Additive => {
                        let r = f_r.predict(v);
                        compose_additive(f_o.predict(v, r), p, r)
                    }
                    WriteComposition::Complementary => {
                        let r = f_r.predict(v);
                        f_o.predict(v, r) * p + r * (1.0 - p)
                    }
                }
            }
        };
        Ok(if out.is_finite() { out.max(0.0) } else { 0.0 })
    }

    /// Predicted total time of `op` (all repetitions) under `structure`.
    pub fn predict_access(
        &self,
        structure: &StorageStructure,
        schema: &TableSchema,
        op: &AccessOp,
        state: &StructureState,
    ) -> Result<f64> {
        let class = op.op_type.class();
        let groups = structure.layout.touched_groups(&op.read_columns(schema));
        let rows = op.result_rows.max(1) as f64;
        let mut total = 0.0;
        for g in groups {
            let x = extract_features(schema, op, &structure.layout.groups()[g], &state.group(g))?;
            total += self.predict_op(structure.engine, class, &x)? * rows;
        }
        Ok(total * op.frequency as f64)
    }

    pub fn predict_workload(
        &self,
        structure: &StorageStructure,
        schema: &TableSchema,
        workload: &Workload,
        state: &StructureState,
    ) -> Result<f64> {
        workload.validate(schema)?;
        workload
            .ops
            .iter()
            .map(|op| self.predict_access(structure, schema, op, state))
            .sum()
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let mut out = MODEL_MAGIC.to_vec();
        out.extend_from_slice(&MODEL_FORMAT_VERSION.to_le_bytes());
        out.extend(bincode::serialize(self).expect("model serializes"));
        out
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        if bytes.len() < 8 || &bytes[..4] != MODEL_MAGIC {
            return Err(Error::Parse("not a cost-model file".into()));
        }
        let version = u32::from_le_bytes(bytes[4..8].try_into().unwrap());
        if version != MODEL_FORMAT_VERSION {
            return Err(Error::UnsupportedVersion {
                what: "cost model",
                found: version,
            });
        }
        let m: CostModel = bincode::deserialize(&bytes[8..]).map_err(|e| Error::Parse(format!("cost model: {e}")))?;
        m.check_version()?;
        Ok(m)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.to_bytes())?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::from_bytes(&std::fs::read(path)?)
    }
}

/// The write composition as printed: surge cost weighted by its
/// probability, plus the regular cost.
pub fn compose_additive(f_o: f64, p: f64, f_r: f64) -> f64 {
    f_o * p + f_r
}

/// Number of features a model consumes.
pub const MODEL_INPUTS: usize = NUM_FEATURES;
