//! Shared plumbing for the command-line surface and the C ABI: run
//! manifests, hypothesis/config file formats, and covariance selection.

use std::path::{Path, PathBuf};
use std::time::Instant;

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};
use crate::estimators::{unit_ols, GroupFit, Method};
use crate::panel::{LinearHypothesis, PanelDataset};
use crate::simulation::SimConfig;
use crate::variance::{
    default_bandwidth, driscoll_kraay_cov, pesaran_group_cov, theoretical_cov, CovMethod,
    GroupCovariances,
};

/// Hypothesis file format: `R` as a list of rows plus the target vector.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct HypothesisFile {
    pub r_matrix: Vec<Vec<f64>>,
    pub r_vec: Vec<f64>,
}

impl HypothesisFile {
    pub fn parse(json: &str) -> Result<LinearHypothesis> {
        let file: HypothesisFile = serde_json::from_str(json)?;
        file.build()
    }

    pub fn build(&self) -> Result<LinearHypothesis> {
        if self.r_matrix.is_empty() {
            return Err(Error::InvalidInput("hypothesis needs at least one row".into()));
        }
        let rows = self.r_matrix.len();
        let cols = self.r_matrix[0].len();
        if self.r_matrix.iter().any(|r| r.len() != cols) {
            return Err(Error::InvalidInput("R rows have unequal lengths".into()));
        }
        let flat: Vec<f64> = self.r_matrix.iter().flatten().cloned().collect();
        LinearHypothesis::new(
            DMatrix::from_row_slice(rows, cols, &flat),
            DVector::from_vec(self.r_vec.clone()),
        )
    }
}

/// A study: one or more simulation scenarios run back to back.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct StudyConfig {
    pub name: String,
    pub scenarios: Vec<SimConfig>,
}

impl StudyConfig {
    /// Accepts either a full study or a bare scenario object.
    pub fn parse(json: &str) -> Result<StudyConfig> {
        if let Ok(study) = serde_json::from_str::<StudyConfig>(json) {
            if study.scenarios.is_empty() {
                return Err(Error::InvalidInput("study has no scenarios".into()));
            }
            return Ok(study);
        }
        let single: SimConfig = serde_json::from_str(json)?;
        Ok(StudyConfig {
            name: "study".into(),
            scenarios: vec![single],
        })
    }
}

/// Provenance record written next to command outputs.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct RunManifest {
    pub command: String,
    pub config_hash: String,
    pub seed: u64,
    pub wall_time_secs: f64,
    pub version: String,
    pub outputs: Vec<OutputFile>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct OutputFile {
    pub path: String,
    pub bytes: u64,
}

impl RunManifest {
    pub fn start(command: String, config_bytes: &[u8], seed: u64) -> ManifestBuilder {
        ManifestBuilder {
            command,
            config_hash: sha256_hex(config_bytes),
            seed,
            started: Instant::now(),
            outputs: Vec::new(),
        }
    }
}

pub struct ManifestBuilder {
    command: String,
    config_hash: String,
    seed: u64,
    started: Instant,
    outputs: Vec<PathBuf>,
}

impl ManifestBuilder {
    pub fn add_output<P: AsRef<Path>>(&mut self, path: P) {
        self.outputs.push(path.as_ref().to_path_buf());
    }

    /// Verify every declared output exists and is non-empty, then write the
    /// manifest itself.
    pub fn finish<P: AsRef<Path>>(self, manifest_path: P) -> Result<RunManifest> {
        let mut outputs = Vec::with_capacity(self.outputs.len());
        for p in &self.outputs {
            let meta = std::fs::metadata(p)
                .map_err(|e| Error::InvalidInput(format!("output {} missing: {e}", p.display())))?;
            if meta.len() == 0 {
                return Err(Error::InvalidInput(format!("output {} is empty", p.display())));
            }
            outputs.push(OutputFile {
                path: p.display().to_string(),
                bytes: meta.len(),
            });
        }
        let manifest = RunManifest {
            command: self.command,
            config_hash: self.config_hash,
            seed: self.seed,
            wall_time_secs: self.started.elapsed().as_secs_f64(),
            version: env!("CARGO_PKG_VERSION").to_string(),
            outputs,
        };
        std::fs::write(manifest_path, serde_json::to_string_pretty(&manifest)?)?;
        Ok(manifest)
    }
}

pub fn sha256_hex(bytes: &[u8]) -> String {
    let mut hasher = Sha256::new();
    hasher.update(bytes);
    let digest = hasher.finalize();
    digest.iter().map(|b| format!("{b:02x}")).collect()
}

/// The common Gram matrix of the panel, erroring when unit Grams disagree
/// (theory-mode covariances assume a shared design).
pub fn common_gram(d: &PanelDataset) -> Result<DMatrix<f64>> {
    let first = d.unit_gram(0);
    let scale = first.abs().max().max(1.0);
    for i in 1..d.n() {
        let diff = (d.unit_gram(i) - &first).abs().max();
        if diff > 1e-8 * scale {
            return Err(Error::InvalidInput(format!(
                "theory covariance needs identical unit Gram matrices; unit {} deviates by {diff:.3e}",
                d.unit_ids()[i]
            )));
        }
    }
    Ok(first)
}

/// Build the working covariance for a fit. The panel is the one the fit was
/// estimated on (pre-augmentation for GFE; dummies are added here).
pub fn covariance_for_fit(
    d: &PanelDataset,
    fit: &GroupFit,
    method: CovMethod,
    bandwidth: Option<usize>,
    sigma2: Option<f64>,
) -> Result<GroupCovariances> {
    let augmented;
    let d_model = if fit.method == Method::Gfe {
        augmented = d.augment_time_dummies()?;
        &augmented
    } else {
        d
    };
    match method {
        CovMethod::Pesaran => {
            if fit.method != Method::Tsk {
                return Err(Error::InvalidInput(
                    "Pesaran covariance applies to TSK fits (unit-level estimates)".into(),
                ));
            }
            let b = unit_ols(d_model)?;
            pesaran_group_cov(&b, &fit.gamma)
        }
        CovMethod::DriscollKraay => {
            let bw = bandwidth.unwrap_or_else(|| default_bandwidth(d_model.t()));
            driscoll_kraay_cov(d_model, &fit.gamma, &fit.alpha, bw)
        }
        CovMethod::Theoretical => {
            let s2 = sigma2.ok_or_else(|| {
                Error::InvalidInput("theory covariance needs --sigma2".into())
            })?;
            let gram = common_gram(d_model)?;
            theoretical_cov(&gram, s2, &fit.gamma)
        }
    }
}

/// Default covariance pairing: Pesaran for TSK, Driscoll-Kraay for PCR/GFE.
pub fn default_covariance(method: Method) -> CovMethod {
    match method {
        Method::Tsk => CovMethod::Pesaran,
        Method::Pcr | Method::Gfe => CovMethod::DriscollKraay,
    }
}

/// Human-readable group summary table for a fit.
pub fn fit_summary(fit: &GroupFit, unit_ids: &[String]) -> String {
    let mut s = String::new();
    s.push_str(&format!(
        "method: {}   groups: {}   objective: {:.6e}   iterations: {}   converged: {}\n",
        fit.method,
        fit.group_count,
        fit.objective,
        fit.trace.m(),
        fit.trace.converged
    ));
    s.push_str(&format!(
        "restarts: {} (winner: {})\n",
        fit.restarts, fit.winning_restart
    ));
    let sizes = fit.gamma.group_sizes();
    for g in 0..fit.group_count {
        let coefs = fit.group_slopes(g);
        let coef_str = coefs
            .iter()
            .map(|c| format!("{c:+.6}"))
            .collect::<Vec<_>>()
            .join("  ");
        s.push_str(&format!("group {}: n = {:<4} slopes: {coef_str}\n", g + 1, sizes[g]));
        let members = fit.gamma.members(g);
        let shown: Vec<&str> = members
            .iter()
            .take(12)
            .map(|&i| unit_ids[i].as_str())
            .collect();
        let suffix = if members.len() > 12 { ", ..." } else { "" };
        s.push_str(&format!("  units: {}{}\n", shown.join(", "), suffix));
    }
    s
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn hypothesis_file_round_trip() {
        let json = r#"{"r_matrix": [[1.0, 0.0, -1.0, 0.0], [0.0, 1.0, 0.0, -1.0]], "r_vec": [0.0, 0.0]}"#;
        let h = HypothesisFile::parse(json).unwrap();
        assert_eq!(h.restrictions(), 2);
        assert_eq!(h.coef_len(), 4);
    }

    #[test]
    fn hypothesis_file_rejects_rank_deficient() {
        let json = r#"{"r_matrix": [[1.0, -1.0], [2.0, -2.0]], "r_vec": [0.0, 0.0]}"#;
        assert!(HypothesisFile::parse(json).is_err());
    }

    #[test]
    fn three_row_cross_group_hypothesis_accepted() {
        // 3 x 8 restriction comparing a coefficient across four groups of two
        let json = r#"{
            "r_matrix": [
                [1,0, 0,0, 0,0, -1,0],
                [0,0, 1,0, 0,0, -1,0],
                [0,0, 0,0, 1,0, -1,0]
            ],
            "r_vec": [0, 0, 0]
        }"#;
        let h = HypothesisFile::parse(json).unwrap();
        assert_eq!(h.restrictions(), 3);
        assert_eq!(h.coef_len(), 8);
    }

    #[test]
    fn study_config_accepts_single_scenario() {
        let json = r#"{"n": 12, "t": 8, "reps": 1, "seed": 1, "dgp": "dgp1", "case": "baseline"}"#;
        let study = StudyConfig::parse(json).unwrap();
        assert_eq!(study.scenarios.len(), 1);
    }

    #[test]
    fn sha256_known_value() {
        assert_eq!(
            sha256_hex(b"abc"),
            "ba7816bf8f01cfea414140de5dae2223b00361a396177a9cb410ff61f20015ad"
        );
    }

    #[test]
    fn manifest_verifies_outputs() {
        let dir = tempfile::tempdir().unwrap();
        let out = dir.path().join("data.csv");
        std::fs::write(&out, "x\n1\n").unwrap();
        let mut b = RunManifest::start("cmd".into(), b"cfg", 7);
        b.add_output(&out);
        let manifest = b.finish(dir.path().join("manifest.json")).unwrap();
        assert_eq!(manifest.outputs.len(), 1);
        assert!(manifest.outputs[0].bytes > 0);

        let mut b = RunManifest::start("cmd".into(), b"cfg", 7);
        b.add_output(dir.path().join("missing.csv"));
        assert!(b.finish(dir.path().join("m2.json")).is_err());
    }
}
