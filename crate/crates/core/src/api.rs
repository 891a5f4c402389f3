//! Request and response bodies shared by the HTTP service and its client,
//! plus the file-level operations that have no home in another module.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::cache::LoadOptions;
use crate::digest::file_digest;
use crate::error::{Error, ErrorClass, Result};
use crate::pipeline::{score_cache, write_scores, ScoreEntry};
use crate::selection::emit_subset_file;
use crate::synthetic::{gen_synthetic, SyntheticSpec};

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct GenRequest {
    #[serde(flatten)]
    pub spec: SyntheticSpec,
    pub out: PathBuf,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct GenResponse {
    pub path: PathBuf,
    pub n: usize,
    pub d: usize,
    pub outliers: usize,
    pub digest: String,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ScoreRequest {
    pub checkpoint: PathBuf,
    pub cache: PathBuf,
    /// When set, scores go to this JSONL file instead of the response.
    #[serde(default)]
    pub out: Option<PathBuf>,
    #[serde(default)]
    pub prenormalize: bool,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ScoreResponse {
    pub n: usize,
    #[serde(default)]
    pub out: Option<PathBuf>,
    #[serde(default)]
    pub entries: Vec<ScoreEntry>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SubsetRequest {
    pub manifest: PathBuf,
    pub dataset: PathBuf,
    pub out: PathBuf,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SubsetResponse {
    pub selected: usize,
    pub out: PathBuf,
}

/// Error body returned by the service for every failed request.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ErrorBody {
    pub error: String,
    pub kind: String,
    pub class: ErrorClass,
    pub exit_code: i32,
}

impl From<&Error> for ErrorBody {
    fn from(e: &Error) -> Self {
        ErrorBody {
            error: e.to_string(),
            kind: e.kind().to_owned(),
            class: e.class(),
            exit_code: e.class().exit_code(),
        }
    }
}

pub fn gen(req: &GenRequest) -> Result<GenResponse> {
    ensure_parent(&req.out)?;
    let data = gen_synthetic(&req.spec, &req.out)?;
    Ok(GenResponse {
        path: req.out.clone(),
        n: data.records.len(),
        d: req.spec.d,
        outliers: data.components.iter().filter(|c| c.is_none()).count(),
        digest: file_digest(&req.out)?,
    })
}

pub fn score(req: &ScoreRequest) -> Result<ScoreResponse> {
    let entries = score_cache(
        &req.checkpoint,
        &req.cache,
        LoadOptions {
            prenormalize_modalities: req.prenormalize,
        },
    )?;
    let n = entries.len();
    match &req.out {
        Some(path) => {
            ensure_parent(path)?;
            write_scores(&entries, path)?;
            Ok(ScoreResponse {
                n,
                out: Some(path.clone()),
                entries: Vec::new(),
            })
        }
        None => Ok(ScoreResponse {
            n,
            out: None,
            entries,
        }),
    }
}

pub fn subset(req: &SubsetRequest) -> Result<SubsetResponse> {
    ensure_parent(&req.out)?;
    let selected = emit_subset_file(&req.manifest, &req.dataset, &req.out)?;
    Ok(SubsetResponse {
        selected,
        out: req.out.clone(),
    })
}

fn ensure_parent(path: &Path) -> Result<()> {
    match path.parent() {
        Some(dir) if !dir.as_os_str().is_empty() => {
            std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))
        }
        _ => Ok(()),
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn gen_request_is_flat_json() {
        let body = r#"{"k_true":2,"n":10,"d":3,"separation":2.0,"outlier_fraction":0.1,"seed":4,"out":"x.ofac"}"#;
        let req: GenRequest = serde_json::from_str(body).unwrap();
        assert_eq!(req.spec.n, 10);
        assert_eq!(req.spec.noise, 1.0);
        assert_eq!(req.out, PathBuf::from("x.ofac"));
    }

    #[test]
    fn error_body_carries_exit_code() {
        let body = ErrorBody::from(&Error::BadRatio(2.0));
        assert_eq!(body.kind, "bad_ratio");
        assert_eq!(body.class, ErrorClass::Config);
        assert_eq!(body.exit_code, 2);
    }
}
