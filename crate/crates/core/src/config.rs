//! Run configuration for the command-line front end (TOML, or JSON).

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::cell::CellProblemConfig;
use crate::error::{Error, Result};
use crate::functional::{GammaConfig, Scenario};
use crate::grid::Quadrature;
use crate::hypotheses::HypothesisOptions;
use crate::integrand::{Builtin, GrowthConstants, IntegrandSpec};
use crate::jump::JumpProblemConfig;
use crate::manifold::{ManifoldKind, ManifoldSpec};
use crate::optim::LbfgsOptions;
use crate::table::{DensityPropertyOptions, XiGrid};
use crate::{Vec2, Vec3};

/// Configured points farther than this from the manifold are rejected;
/// closer ones are moved onto it.
pub const POINT_SNAP_TOL: f64 = 1e-3;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ManifoldBlock {
    #[serde(flatten)]
    pub kind: ManifoldKind,
    #[serde(default)]
    pub delta0: Option<f64>,
    #[serde(default)]
    pub mesh_nodes: Option<usize>,
}

impl Default for ManifoldBlock {
    fn default() -> Self {
        ManifoldBlock { kind: ManifoldKind::Sphere, delta0: None, mesh_nodes: None }
    }
}

impl ManifoldBlock {
    pub fn build(&self) -> Result<ManifoldSpec> {
        let delta0 = self.delta0.unwrap_or(0.5 * self.kind.reach());
        let nodes = self.mesh_nodes.unwrap_or(ManifoldSpec::DEFAULT_MESH_NODES);
        ManifoldSpec::with_options(self.kind.clone(), delta0, nodes)
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct IntegrandBlock {
    #[serde(flatten)]
    pub builtin: Builtin,
    #[serde(default)]
    pub weights: Option<[f64; 3]>,
    /// Declared constants replacing the builtin defaults.
    #[serde(default)]
    pub constants: Option<GrowthConstants>,
}

impl Default for IntegrandBlock {
    fn default() -> Self {
        IntegrandBlock { builtin: Builtin::Norm, weights: None, constants: None }
    }
}

impl IntegrandBlock {
    pub fn build(&self) -> Result<IntegrandSpec> {
        let spec = IntegrandSpec::builtin_weighted(self.builtin.clone(), self.weights.unwrap_or([1.0; 3]))?;
        Ok(match self.constants {
            Some(c) => {
                c.validate()?;
                spec.with_constants(c)
            }
            None => spec,
        })
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct BulkGrid {
    pub s_points: Vec<[f64; 3]>,
    pub xi: XiGrid,
    pub recession: bool,
    /// Run the density property suite on the table.
    pub properties: Option<DensityPropertyOptions>,
}

impl Default for BulkGrid {
    fn default() -> Self {
        BulkGrid {
            s_points: vec![[0.0, 0.0, 1.0]],
            xi: XiGrid::List { points: vec![[1.0, 0.0, 0.0, 0.0]] },
            recession: false,
            properties: None,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct JumpPair {
    pub a: [f64; 3],
    pub b: [f64; 3],
    pub nu: [f64; 2],
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct JumpGrid {
    pub pairs: Vec<JumpPair>,
    /// Every (a, b, ν) of endpoints × endpoints × normals.
    pub endpoints: Vec<[f64; 3]>,
    pub normals: Vec<[f64; 2]>,
    /// Run the symmetry and endpoint-bound checks on the product grid.
    pub properties: bool,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Grids {
    pub bulk: BulkGrid,
    pub jump: JumpGrid,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct GammaBlock {
    pub scenario: Scenario,
    pub h_list: Vec<f64>,
    pub n_xy: usize,
    pub n3: usize,
    pub smoothing_eps: Vec<f64>,
    pub lbfgs: LbfgsOptions,
    pub quadrature: Quadrature,
    pub kappa: f64,
    pub jump_threshold: f64,
    pub tolerance: f64,
    /// Bulk table (JSON written by `bulk`) used instead of an inline one.
    pub bulk_table: Option<PathBuf>,
    /// Jump table (JSON written by `jump`) used instead of an inline one.
    pub jump_table: Option<PathBuf>,
}

impl Default for GammaBlock {
    fn default() -> Self {
        let g = GammaConfig::default();
        GammaBlock {
            scenario: g.scenario,
            h_list: g.h_list,
            n_xy: g.n_xy,
            n3: g.n3,
            smoothing_eps: g.smoothing_eps,
            lbfgs: g.lbfgs,
            quadrature: g.quadrature,
            kappa: g.kappa,
            jump_threshold: g.jump_threshold,
            tolerance: g.tolerance,
            bulk_table: None,
            jump_table: None,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "kebab-case")]
pub enum OutputFormat {
    Csv,
    Json,
    #[default]
    Both,
}

impl OutputFormat {
    pub fn csv(self) -> bool {
        matches!(self, OutputFormat::Csv | OutputFormat::Both)
    }

    pub fn json(self) -> bool {
        matches!(self, OutputFormat::Json | OutputFormat::Both)
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct OutputBlock {
    /// Left out of the configuration fingerprint.
    pub dir: PathBuf,
    pub format: OutputFormat,
    /// Dump minimizers as legacy VTK structured grids.
    pub vtk: bool,
}

impl Default for OutputBlock {
    fn default() -> Self {
        OutputBlock { dir: PathBuf::from("out"), format: OutputFormat::Both, vtk: false }
    }
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    /// Seeds every randomized stage (hypothesis sampling, cell restarts,
    /// rank-one lines).
    pub seed: u64,
    pub manifold: ManifoldBlock,
    pub integrand: IntegrandBlock,
    pub check: HypothesisOptions,
    pub cell: CellProblemConfig,
    pub jump: JumpProblemConfig,
    pub gamma: GammaBlock,
    pub grids: Grids,
    pub output: OutputBlock,
}

impl RunConfig {
    /// Parse TOML, or JSON when the text starts with `{`.
    pub fn parse(text: &str) -> Result<Self> {
        let cfg: RunConfig = if text.trim_start().starts_with('{') {
            serde_json::from_str(text).map_err(|e| Error::Config(e.to_string()))?
        } else {
            toml::from_str(text).map_err(|e| Error::Config(e.to_string()))?
        };
        let seed = cfg.seed;
        Ok(cfg.with_seed(seed))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::Config(format!("{}: {e}", path.display())))?;
        RunConfig::parse(&text)
    }

    pub fn with_seed(mut self, seed: u64) -> Self {
        self.seed = seed;
        self.check.seed = seed;
        self.cell.seed = seed;
        if let Some(p) = self.grids.bulk.properties.as_mut() {
            p.seed = seed;
        }
        self
    }

    /// Check everything that can be checked before solving.
    pub fn validate(&self) -> Result<(ManifoldSpec, IntegrandSpec)> {
        let wrap = |e: Error| match e {
            Error::Config(m) => Error::Config(m),
            other => Error::Config(other.to_string()),
        };
        let m = self.manifold.build().map_err(wrap)?;
        let f = self.integrand.build().map_err(wrap)?;
        self.cell.validate().map_err(wrap)?;
        self.jump.validate().map_err(wrap)?;
        self.gamma_config().validate().map_err(wrap)?;
        if self.check.sample_budget == 0 || !(self.check.xi_radius > 0.0) {
            return Err(Error::Config("check needs a positive sample budget and xi radius".into()));
        }
        if self.grids.jump.endpoints.is_empty() != self.grids.jump.normals.is_empty() {
            return Err(Error::Config("jump endpoints and normals must be given together".into()));
        }
        Ok((m, f))
    }

    pub fn gamma_config(&self) -> GammaConfig {
        let g = &self.gamma;
        GammaConfig {
            scenario: g.scenario,
            h_list: g.h_list.clone(),
            n_xy: g.n_xy,
            n3: g.n3,
            smoothing_eps: g.smoothing_eps.clone(),
            lbfgs: g.lbfgs,
            quadrature: g.quadrature,
            kappa: g.kappa,
            jump_threshold: g.jump_threshold,
            tolerance: g.tolerance,
            cell: self.cell.clone(),
            jump: self.jump.clone(),
        }
    }
}

/// Move a configured point onto the manifold, or reject it.
pub fn snap_point(manifold: &ManifoldSpec, p: [f64; 3]) -> Result<Vec3> {
    let v = Vec3::from(p);
    let d = manifold.distance(&v);
    if !(d <= POINT_SNAP_TOL) {
        return Err(Error::Config(format!("point {p:?} is {d:.3e} away from the manifold")));
    }
    manifold.nearest_point(&v).map_err(|e| Error::Config(e.to_string()))
}

pub fn unit_normal(nu: [f64; 2]) -> Result<Vec2> {
    let v = Vec2::from(nu);
    if !(v.norm() > 0.0) {
        return Err(Error::Config(format!("normal {nu:?} is zero")));
    }
    Ok(v.normalize())
}
