//! Pipeline configuration.
//!
//! Every field has a default, so `{}` is a valid configuration. Unknown keys
//! are rejected to catch misspelled weight names.

use std::path::Path;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::{Error, Result};

/// Strategy for the intrinsic refinement stage.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "lowercase")]
pub enum RefineMode {
    /// Train the non-linear embedding deformation.
    #[default]
    Neural,
    /// Orthogonal ICP on the rectified embeddings.
    Linear,
    /// Use the rectified embeddings as they are.
    None,
}

impl std::str::FromStr for RefineMode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "neural" => Ok(RefineMode::Neural),
            "linear" => Ok(RefineMode::Linear),
            "none" => Ok(RefineMode::None),
            other => Err(Error::Config(format!(
                "unknown refine mode '{other}' (expected neural, linear or none)"
            ))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct OptimizerSettings {
    pub iterations: usize,
    pub learning_rate: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PipelineConfig {
    /// Number of non-constant eigenfunctions.
    pub k: usize,
    /// Template smoothing: posed data, edge preservation, Laplacian smoothness.
    pub w1: f64,
    pub w2: f64,
    pub w3: f64,
    /// Coarse fit: full Chamfer, boundary Chamfer, clipped edge stretch.
    pub w4: f64,
    pub w5: f64,
    pub w6: f64,
    /// Refinement: full Chamfer, boundary Chamfer, deformation magnitude.
    pub w7: f64,
    pub w8: f64,
    pub w9: f64,
    /// Geometry and color balance of augmented embeddings.
    pub beta1: f64,
    pub beta2: f64,
    /// Transfer neighbors, boundary boost and inverse-distance regularizer.
    pub knn: usize,
    pub c_boost: f64,
    pub eps: f64,
    /// Template smoothing; the learning rate is relative to the bounding-box diagonal.
    pub stage0: OptimizerSettings,
    pub stage1: OptimizerSettings,
    pub stage2: OptimizerSettings,
    /// Hidden layer widths of both deformation networks.
    pub hidden: Vec<usize>,
    pub seed: u64,
    /// Fit in coordinates scaled to the target's unit bounding-box diagonal.
    pub normalize: bool,
    /// Use per-vertex colors in the Chamfer data terms when both meshes have them.
    pub use_colors: bool,
    pub refine: RefineMode,
    /// Rounds of orthogonal ICP for the linear refinement.
    pub icp_rounds: usize,
    /// Area samples per mesh for the evaluation metrics.
    pub eval_samples: usize,
}

impl Default for PipelineConfig {
    fn default() -> Self {
        PipelineConfig {
            k: 60,
            w1: 1e4,
            w2: 1e3,
            w3: 1.0,
            w4: 1.0,
            w5: 1.0,
            w6: 10.0,
            w7: 1.0,
            w8: 1.0,
            w9: 0.1,
            beta1: 1.0,
            beta2: 0.3,
            knn: 6,
            c_boost: 10.0,
            eps: 1e-9,
            stage0: OptimizerSettings {
                iterations: 1500,
                learning_rate: 1e-3,
            },
            stage1: OptimizerSettings {
                iterations: 2000,
                learning_rate: 1e-4,
            },
            stage2: OptimizerSettings {
                iterations: 3000,
                learning_rate: 1e-3,
            },
            hidden: vec![256; 4],
            seed: 0,
            normalize: true,
            use_colors: true,
            refine: RefineMode::Neural,
            icp_rounds: 10,
            eval_samples: 100_000,
        }
    }
}

impl PipelineConfig {
    pub fn from_json(text: &str) -> Result<Self> {
        let cfg: PipelineConfig =
            serde_json::from_str(text).map_err(|e| Error::Config(format!("line {} column {}: {e}", e.line(), e.column())))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_json(&text).map_err(|e| match e {
            Error::Config(msg) => Error::Config(format!("{}: {msg}", path.display())),
            other => other,
        })
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("config serializes")
    }

    /// Hex SHA-256 of the canonical JSON form.
    pub fn hash(&self) -> String {
        let digest = Sha256::digest(serde_json::to_vec(self).expect("config serializes"));
        digest.iter().map(|b| format!("{b:02x}")).collect()
    }

    pub fn validate(&self) -> Result<()> {
        let weights = [
            ("w1", self.w1),
            ("w2", self.w2),
            ("w3", self.w3),
            ("w4", self.w4),
            ("w5", self.w5),
            ("w6", self.w6),
            ("w7", self.w7),
            ("w8", self.w8),
            ("w9", self.w9),
            ("beta1", self.beta1),
            ("beta2", self.beta2),
            ("c_boost", self.c_boost),
            ("eps", self.eps),
        ];
        for (name, w) in weights {
            if !(w.is_finite() && w >= 0.0) {
                return Err(Error::Config(format!("{name} must be finite and non-negative, got {w}")));
            }
        }
        if self.k < 2 {
            return Err(Error::Config(format!("k must be at least 2, got {}", self.k)));
        }
        if self.knn < 1 {
            return Err(Error::Config("knn must be at least 1".into()));
        }
        for (name, s) in [("stage0", self.stage0), ("stage1", self.stage1), ("stage2", self.stage2)] {
            if !(s.learning_rate.is_finite() && s.learning_rate > 0.0) {
                return Err(Error::Config(format!("{name}.learning_rate must be positive")));
            }
        }
        if self.hidden.is_empty() || self.hidden.contains(&0) {
            return Err(Error::Config("hidden widths must be a non-empty list of positive integers".into()));
        }
        if self.icp_rounds < 1 {
            return Err(Error::Config("icp_rounds must be at least 1".into()));
        }
        if self.eval_samples < 1 {
            return Err(Error::Config("eval_samples must be at least 1".into()));
        }
        Ok(())
    }
}
