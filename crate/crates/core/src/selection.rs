//! Turning frozen-selector confidences into a kept subset.
//!
//! Ratio mode keeps the lowest-confidence `ceil(rho·|C_k|)` members of every
//! cluster; threshold mode keeps everything strictly below a global `tau`.
//! Both produce a [`SelectionManifest`], written as JSON Lines: one header
//! object, then one object per sample in cache order.

use std::collections::{HashMap, HashSet};
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};
use serde_json::value::RawValue;

use crate::cache::FeatureStore;
use crate::error::{Error, Result};
use crate::kmeans::ClusterModel;
use crate::matrix::ceil_fraction;
use crate::selector::{confidences, SelectorCheckpoint};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ScoreRow {
    pub cluster: usize,
    pub confidence: f64,
}

/// Per-sample cluster and confidence, in cache order.
#[derive(Debug, Clone, PartialEq)]
pub struct ScoreTable {
    pub ids: Vec<String>,
    pub rows: Vec<ScoreRow>,
    /// Number of clusters the `cluster` column ranges over.
    pub k: usize,
    /// Class count of the selector that produced the confidences.
    pub selector_k: usize,
}

impl ScoreTable {
    pub fn len(&self) -> usize {
        self.rows.len()
    }

    pub fn is_empty(&self) -> bool {
        self.rows.is_empty()
    }

    fn check(&self) -> Result<()> {
        if self.ids.len() != self.rows.len() {
            return Err(Error::DimensionMismatch {
                expected: self.rows.len(),
                got: self.ids.len(),
            });
        }
        if let Some(r) = self.rows.iter().find(|r| r.cluster >= self.k) {
            return Err(Error::LabelOutOfRange {
                label: r.cluster,
                k: self.k,
            });
        }
        Ok(())
    }

    /// Writes `{"id","cluster","confidence"}` per line.
    pub fn write_jsonl(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        let f = std::fs::File::create(path).map_err(|e| Error::io(path, e))?;
        let mut w = BufWriter::new(f);
        for (id, row) in self.ids.iter().zip(&self.rows) {
            let line = serde_json::json!({
                "id": id,
                "cluster": row.cluster,
                "confidence": row.confidence,
            });
            serde_json::to_writer(&mut w, &line)?;
            w.write_all(b"\n").map_err(|e| Error::io(path, e))?;
        }
        w.flush().map_err(|e| Error::io(path, e))
    }
}

/// Scores every cached sample with a frozen selector.
pub fn score_all(
    checkpoint: &SelectorCheckpoint,
    store: &FeatureStore,
    model: &ClusterModel,
) -> Result<ScoreTable> {
    if store.features().cols() != checkpoint.input_dim() {
        return Err(Error::DimensionMismatch {
            expected: checkpoint.input_dim(),
            got: store.features().cols(),
        });
    }
    if model.assignments.len() != store.len() {
        return Err(Error::DimensionMismatch {
            expected: store.len(),
            got: model.assignments.len(),
        });
    }
    let conf = confidences(&checkpoint.params, store.features())?;
    Ok(ScoreTable {
        ids: store.ids().to_vec(),
        rows: model
            .assignments
            .iter()
            .zip(conf)
            .map(|(&cluster, confidence)| ScoreRow {
                cluster,
                confidence,
            })
            .collect(),
        k: model.k,
        selector_k: checkpoint.k(),
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum SelectionMode {
    Ratio,
    Threshold,
}

impl std::str::FromStr for SelectionMode {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "ratio" => Ok(SelectionMode::Ratio),
            "threshold" => Ok(SelectionMode::Threshold),
            other => Err(Error::Config(format!("unknown selection mode {other:?}"))),
        }
    }
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct ManifestProvenance {
    pub cache_digest: String,
    pub checkpoint_digest: String,
    pub cluster_model_digest: String,
    pub seed: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ManifestEntry {
    pub id: String,
    pub cluster: usize,
    pub confidence: f64,
    pub selected: bool,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SelectionManifest {
    pub mode: SelectionMode,
    pub rho: Option<f64>,
    pub tau: Option<f64>,
    /// Per-cluster confidence threshold.
    pub thresholds: Vec<f64>,
    pub provenance: ManifestProvenance,
    pub entries: Vec<ManifestEntry>,
}

#[derive(Debug, Serialize, Deserialize)]
struct ManifestHeader {
    mode: SelectionMode,
    #[serde(skip_serializing_if = "Option::is_none", default)]
    rho: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none", default)]
    tau: Option<f64>,
    thresholds: Vec<f64>,
    provenance: ManifestProvenance,
}

impl SelectionManifest {
    pub fn selected_count(&self) -> usize {
        self.entries.iter().filter(|e| e.selected).count()
    }

    pub fn selected_ids(&self) -> impl Iterator<Item = &str> {
        self.entries
            .iter()
            .filter(|e| e.selected)
            .map(|e| e.id.as_str())
    }

    /// Selected count per cluster.
    pub fn selected_per_cluster(&self) -> Vec<usize> {
        let mut c = vec![0; self.thresholds.len()];
        for e in self.entries.iter().filter(|e| e.selected) {
            c[e.cluster] += 1;
        }
        c
    }

    pub fn to_jsonl(&self) -> Result<Vec<u8>> {
        let header = ManifestHeader {
            mode: self.mode,
            rho: self.rho,
            tau: self.tau,
            thresholds: self.thresholds.clone(),
            provenance: self.provenance.clone(),
        };
        let mut out = serde_json::to_vec(&header)?;
        out.push(b'\n');
        for e in &self.entries {
            serde_json::to_writer(&mut out, e)?;
            out.push(b'\n');
        }
        Ok(out)
    }

    pub fn from_jsonl(bytes: &[u8]) -> Result<Self> {
        let mut lines = BufReader::new(bytes).lines();
        let first = lines
            .next()
            .ok_or_else(|| Error::Malformed {
                what: "manifest",
                reason: "empty file".into(),
            })?
            .map_err(|e| Error::io("<manifest>", e))?;
        let header: ManifestHeader = serde_json::from_str(&first)?;
        let mut entries = Vec::new();
        for line in lines {
            let line = line.map_err(|e| Error::io("<manifest>", e))?;
            if line.trim().is_empty() {
                continue;
            }
            entries.push(serde_json::from_str(&line)?);
        }
        Ok(SelectionManifest {
            mode: header.mode,
            rho: header.rho,
            tau: header.tau,
            thresholds: header.thresholds,
            provenance: header.provenance,
            entries,
        })
    }

    pub fn write(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        std::fs::write(path, self.to_jsonl()?).map_err(|e| Error::io(path, e))
    }

    pub fn read(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
        Self::from_jsonl(&bytes)
    }
}

fn entries(table: &ScoreTable, selected: &[bool]) -> Vec<ManifestEntry> {
    table
        .ids
        .iter()
        .zip(&table.rows)
        .zip(selected)
        .map(|((id, r), &s)| ManifestEntry {
            id: id.clone(),
            cluster: r.cluster,
            confidence: r.confidence,
            selected: s,
        })
        .collect()
}

/// Keeps the `ceil(rho·|C_k|)` lowest-confidence members of each cluster,
/// ties broken by cache index. `τ_k` is the confidence of the last kept
/// member (0 when a cluster keeps nothing).
pub fn select_by_ratio(table: &ScoreTable, rho: f64) -> Result<SelectionManifest> {
    if !(rho > 0.0 && rho <= 1.0) {
        return Err(Error::BadRatio(rho));
    }
    table.check()?;
    let mut members: Vec<Vec<usize>> = vec![Vec::new(); table.k];
    for (i, r) in table.rows.iter().enumerate() {
        members[r.cluster].push(i);
    }
    let mut selected = vec![false; table.len()];
    let mut thresholds = vec![0.0; table.k];
    for (j, m) in members.iter_mut().enumerate() {
        // indices are ascending, so a stable sort on confidence keeps the index tie-break
        m.sort_by(|&a, &b| {
            table.rows[a]
                .confidence
                .total_cmp(&table.rows[b].confidence)
        });
        let keep = ceil_fraction(rho, m.len());
        for &i in &m[..keep] {
            selected[i] = true;
        }
        if keep > 0 {
            thresholds[j] = table.rows[m[keep - 1]].confidence;
        }
    }
    Ok(SelectionManifest {
        mode: SelectionMode::Ratio,
        rho: Some(rho),
        tau: None,
        thresholds,
        provenance: ManifestProvenance::default(),
        entries: entries(table, &selected),
    })
}

/// Keeps every sample with confidence strictly below `tau`.
pub fn select_by_threshold(table: &ScoreTable, tau: f64) -> Result<SelectionManifest> {
    if tau.is_nan() {
        return Err(Error::Config("threshold is NaN".into()));
    }
    table.check()?;
    let floor = 1.0 / table.selector_k.max(1) as f64;
    if tau < floor || tau > 1.0 {
        tracing::warn!(tau, floor, "threshold outside [1/K, 1]");
    }
    let selected: Vec<bool> = table.rows.iter().map(|r| r.confidence < tau).collect();
    Ok(SelectionManifest {
        mode: SelectionMode::Threshold,
        rho: None,
        tau: Some(tau),
        thresholds: vec![tau; table.k],
        provenance: ManifestProvenance::default(),
        entries: entries(table, &selected),
    })
}

#[derive(Deserialize)]
struct RecordId {
    id: serde_json::Value,
}

fn id_string(v: &serde_json::Value) -> Option<String> {
    match v {
        serde_json::Value::String(s) => Some(s.clone()),
        serde_json::Value::Number(n) => Some(n.to_string()),
        _ => None,
    }
}

/// Copies the selected records of a JSON-array dataset, in source order and
/// byte-for-byte as they appear in the source.
pub fn emit_subset(manifest: &SelectionManifest, source: &str) -> Result<String> {
    let records: Vec<&RawValue> = serde_json::from_str(source)?;
    let mut present = HashSet::with_capacity(records.len());
    let mut ids = Vec::with_capacity(records.len());
    for (pos, raw) in records.iter().enumerate() {
        let rec: RecordId = serde_json::from_str(raw.get())?;
        let id = id_string(&rec.id).ok_or_else(|| Error::Malformed {
            what: "dataset",
            reason: format!("record {pos} has a non-scalar id"),
        })?;
        present.insert(id.clone());
        ids.push(id);
    }
    let missing: Vec<String> = manifest
        .entries
        .iter()
        .filter(|e| !present.contains(&e.id))
        .map(|e| e.id.clone())
        .collect();
    if !missing.is_empty() {
        return Err(Error::MissingId(missing));
    }
    let keep: HashMap<&str, bool> = manifest
        .entries
        .iter()
        .map(|e| (e.id.as_str(), e.selected))
        .collect();
    let mut out = String::from("[");
    let mut first = true;
    for (raw, id) in records.iter().zip(&ids) {
        if keep.get(id.as_str()).copied().unwrap_or(false) {
            if !first {
                out.push(',');
            }
            out.push_str(raw.get());
            first = false;
        }
    }
    out.push(']');
    Ok(out)
}

pub fn emit_subset_file(
    manifest_path: impl AsRef<Path>,
    dataset_path: impl AsRef<Path>,
    out_path: impl AsRef<Path>,
) -> Result<usize> {
    let manifest = SelectionManifest::read(manifest_path)?;
    let dataset_path = dataset_path.as_ref();
    let source = std::fs::read_to_string(dataset_path).map_err(|e| Error::io(dataset_path, e))?;
    let subset = emit_subset(&manifest, &source)?;
    let out_path = out_path.as_ref();
    std::fs::write(out_path, subset).map_err(|e| Error::io(out_path, e))?;
    Ok(manifest.selected_count())
}
