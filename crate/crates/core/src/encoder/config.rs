use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// One multi-scale grouping branch: query-ball size/radius and its pointwise MLP widths.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BranchSpec {
    pub group_size: usize,
    pub radius: f32,
    pub mlp: Vec<usize>,
}

impl BranchSpec {
    pub fn new(group_size: usize, radius: f32, mlp: &[usize]) -> Self {
        Self {
            group_size,
            radius,
            mlp: mlp.to_vec(),
        }
    }

    pub fn out_dim(&self) -> usize {
        self.mlp.last().copied().unwrap_or(0)
    }
}

/// A set-abstraction stage: anchor count plus parallel grouping branches.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StageSpec {
    pub n_anchors: usize,
    pub branches: Vec<BranchSpec>,
}

impl StageSpec {
    pub fn out_dim(&self) -> usize {
        self.branches.iter().map(BranchSpec::out_dim).sum()
    }
}

/// Metric used by the query balls.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "lowercase")]
pub enum DistanceSpace {
    /// Euclidean over (time, frequency, amplitude).
    #[default]
    Tfa,
    /// Euclidean over (time, frequency); amplitude only enters as a feature.
    Tf,
}

/// Full encoder layout.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LayerSpec {
    pub n_peaks: usize,
    pub sa1: StageSpec,
    pub sa2: StageSpec,
    pub global_mlp: Vec<usize>,
    #[serde(default)]
    pub distance: DistanceSpace,
    #[serde(default = "default_bn_eps")]
    pub bn_eps: f32,
    #[serde(default = "default_bn_momentum")]
    pub bn_momentum: f32,
}

fn default_bn_eps() -> f32 {
    1e-5
}

fn default_bn_momentum() -> f32 {
    0.1
}

impl Default for LayerSpec {
    /// 256 peaks; SA1 with 200 anchors, SA2 with 100, then a global stage.
    fn default() -> Self {
        Self {
            n_peaks: 256,
            sa1: StageSpec {
                n_anchors: 200,
                branches: vec![
                    BranchSpec::new(4, 0.1, &[16, 16, 32]),
                    BranchSpec::new(8, 0.2, &[32, 32, 64]),
                    BranchSpec::new(16, 0.3, &[32, 48, 64]),
                ],
            },
            sa2: StageSpec {
                n_anchors: 100,
                branches: vec![
                    BranchSpec::new(4, 0.2, &[32, 32, 64]),
                    BranchSpec::new(8, 0.3, &[64, 64, 128]),
                    BranchSpec::new(16, 0.4, &[64, 64, 128]),
                ],
            },
            global_mlp: vec![128, 256, 128],
            distance: DistanceSpace::Tfa,
            bn_eps: default_bn_eps(),
            bn_momentum: default_bn_momentum(),
        }
    }
}

impl LayerSpec {
    pub fn embedding_dim(&self) -> usize {
        self.global_mlp.last().copied().unwrap_or(0)
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |msg: String| Err(Error::Config(msg));
        if self.sa1.n_anchors == 0 || self.sa1.n_anchors > self.n_peaks {
            return bad(format!(
                "SA1 anchors {} must be in 1..={}",
                self.sa1.n_anchors, self.n_peaks
            ));
        }
        if self.sa2.n_anchors == 0 || self.sa2.n_anchors > self.sa1.n_anchors {
            return bad(format!(
                "SA2 anchors {} must be in 1..={}",
                self.sa2.n_anchors, self.sa1.n_anchors
            ));
        }
        for (name, stage) in [("sa1", &self.sa1), ("sa2", &self.sa2)] {
            if stage.branches.is_empty() {
                return bad(format!("{name} has no branches"));
            }
            for (j, b) in stage.branches.iter().enumerate() {
                if b.group_size == 0 || !(b.radius > 0.0) || b.mlp.is_empty() || b.mlp.contains(&0)
                {
                    return bad(format!("{name} branch {j} is malformed: {b:?}"));
                }
            }
        }
        for (j, (b1, b2)) in self.sa1.branches.iter().zip(&self.sa2.branches).enumerate() {
            if b2.radius < b1.radius {
                return bad(format!(
                    "branch {j}: SA2 radius {} is smaller than SA1 radius {}",
                    b2.radius, b1.radius
                ));
            }
        }
        if self.global_mlp.is_empty() || self.global_mlp.contains(&0) {
            return bad("global MLP must have non-zero widths".into());
        }
        if !(self.bn_eps > 0.0) || !(0.0..=1.0).contains(&self.bn_momentum) {
            return bad("batch-norm eps must be > 0 and momentum in [0, 1]".into());
        }
        Ok(())
    }
}
