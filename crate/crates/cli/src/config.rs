//! Experiment configuration: a TOML file with `[scene]`, `[multiplier]`,
//! `[quadrature]`, `[params]` and `[output]` sections.

use std::path::{Path, PathBuf};

use paralab::paralin::{Nonlinearity, ParalinParams};
use paralab::scene::{build_scene, Scene, SceneKind, SceneSpec};
use paralab::sobolev::SobolevParams;
use paralab::speccalc::{MultiplierFamily, QuadratureOptions};
use serde::{Deserialize, Serialize};

use crate::error::CliError;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Experiment {
    Geometry,
    Reconstruct,
    Decompose,
    Sobolev,
    Paralinearize,
    Smoothing,
    Propagate,
}

impl Experiment {
    pub fn name(self) -> &'static str {
        match self {
            Experiment::Geometry => "geometry",
            Experiment::Reconstruct => "reconstruct",
            Experiment::Decompose => "decompose",
            Experiment::Sobolev => "sobolev",
            Experiment::Paralinearize => "paralinearize",
            Experiment::Smoothing => "smoothing",
            Experiment::Propagate => "propagate",
        }
    }
}

#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub experiment: Experiment,
    /// Free text shown in suite summaries.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub label: Option<String>,
    #[serde(default)]
    pub seed: u64,
    #[serde(default)]
    pub scene: SceneConfig,
    #[serde(default)]
    pub multiplier: MultiplierConfig,
    #[serde(default)]
    pub quadrature: QuadratureConfig,
    #[serde(default)]
    pub params: Params,
    #[serde(default)]
    pub output: OutputConfig,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SceneConfig {
    pub kind: String,
    #[serde(default)]
    pub sizes: Vec<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub h: Option<f64>,
    /// Scene file for `kind = "graph"`, relative to the config file.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub path: Option<PathBuf>,
}

impl Default for SceneConfig {
    fn default() -> Self {
        SceneConfig { kind: "circle".into(), sizes: vec![64], h: None, path: None }
    }
}

#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MultiplierConfig {
    pub order: u32,
}

impl Default for MultiplierConfig {
    fn default() -> Self {
        MultiplierConfig { order: 8 }
    }
}

#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct QuadratureConfig {
    #[serde(default = "default_npd")]
    pub nodes_per_decade: usize,
    #[serde(default = "default_pad")]
    pub pad: f64,
    #[serde(default = "default_ppc")]
    pub points_per_cell: usize,
}

fn default_npd() -> usize {
    16
}

fn default_pad() -> f64 {
    4.0
}

fn default_ppc() -> usize {
    1
}

impl Default for QuadratureConfig {
    fn default() -> Self {
        QuadratureConfig { nodes_per_decade: default_npd(), pad: default_pad(), points_per_cell: default_ppc() }
    }
}

impl QuadratureConfig {
    pub fn options(&self) -> QuadratureOptions {
        QuadratureOptions {
            nodes_per_decade: self.nodes_per_decade,
            pad_decades: self.pad,
            points_per_cell: self.points_per_cell,
        }
    }
}

/// Experiment parameters. Unset fields get per-experiment defaults during
/// validation, so the echoed config lists every value that was used.
#[derive(Clone, Debug, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Params {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub s: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub p: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub q: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub eps: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub rho: Option<f64>,
    /// Directional exponents for `propagate`.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub rho_values: Option<Vec<f64>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub nonlinearity: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub coeffs: Option<Vec<f64>>,
    /// Inclusive depth range for `smoothing`.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub k_range: Option<[usize; 2]>,
    /// Lacunary depth for `paralinearize`.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub depth: Option<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub samples: Option<usize>,
    /// Structural identity exponent for `sobolev`; skipped when unset.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub beta: Option<f64>,
    /// Extra decay in the heat kernel bound.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub delta: Option<f64>,
    /// Hard bound on the doubling constant for `geometry`; recorded only when unset.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub doubling_max: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub recipe: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub s_target: Option<f64>,
    /// Transport direction for `transport_eq`.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub a: Option<i32>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub refinements: Option<Vec<usize>>,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct OutputConfig {
    #[serde(default = "default_out_dir")]
    pub dir: PathBuf,
    /// File stem for the JSON and CSV artifacts; defaults to the experiment name.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub stem: Option<String>,
}

fn default_out_dir() -> PathBuf {
    PathBuf::from("out")
}

impl Default for OutputConfig {
    fn default() -> Self {
        OutputConfig { dir: default_out_dir(), stem: None }
    }
}

fn bad(field: &str, reason: impl Into<String>) -> CliError {
    CliError::Config { field: field.into(), reason: reason.into() }
}

fn from_core(field: &str, e: paralab::Error) -> CliError {
    match e {
        paralab::Error::InvalidParameter { reason, .. } => bad(field, reason),
        other => bad(field, other.to_string()),
    }
}

impl ExperimentConfig {
    pub fn new(experiment: Experiment) -> Self {
        ExperimentConfig {
            experiment,
            label: None,
            seed: 0,
            scene: SceneConfig::default(),
            multiplier: MultiplierConfig::default(),
            quadrature: QuadratureConfig::default(),
            params: Params::default(),
            output: OutputConfig::default(),
        }
    }

    /// Reads a config file; a relative scene path is resolved against the file's directory.
    pub fn load(path: &Path) -> Result<Self, CliError> {
        let text = std::fs::read_to_string(path).map_err(|source| CliError::Io { path: path.into(), source })?;
        let mut cfg: ExperimentConfig =
            toml::from_str(&text).map_err(|e| CliError::Parse { path: path.into(), msg: e.to_string() })?;
        if let Some(p) = &cfg.scene.path {
            if p.is_relative() {
                let base = path.parent().unwrap_or_else(|| Path::new("."));
                cfg.scene.path = Some(base.join(p));
            }
        }
        if cfg.output.stem.is_none() {
            cfg.output.stem = path.file_stem().map(|s| s.to_string_lossy().into_owned());
        }
        Ok(cfg)
    }

    pub fn stem(&self) -> String {
        self.output.stem.clone().unwrap_or_else(|| self.experiment.name().into())
    }

    pub fn family(&self) -> Result<MultiplierFamily, CliError> {
        MultiplierFamily::new(self.multiplier.order).map_err(|e| from_core("multiplier.order", e))
    }

    pub fn nonlinearity(&self) -> Result<Nonlinearity, CliError> {
        let tag = self.params.nonlinearity.as_deref().unwrap_or("sin");
        let coeffs = self.params.coeffs.as_deref().unwrap_or(&[]);
        Nonlinearity::parse(tag, coeffs).map_err(|e| from_core("params.nonlinearity", e))
    }

    pub fn build_scene(&self) -> Result<Scene, CliError> {
        let kind = SceneKind::parse(&self.scene.kind)
            .ok_or_else(|| bad("scene.kind", format!("unknown scene kind `{}`", self.scene.kind)))?;
        let sizes = &self.scene.sizes;
        let want = |k: usize| -> Result<(), CliError> {
            if sizes.len() == k {
                Ok(())
            } else {
                Err(bad("scene.sizes", format!("{} needs {k} sizes, got {}", kind.name(), sizes.len())))
            }
        };
        let h = self.scene.h;
        let spec = match kind {
            SceneKind::Circle => {
                want(1)?;
                SceneSpec::Circle { n: sizes[0], h }
            }
            SceneKind::Torus2 => {
                want(2)?;
                SceneSpec::Torus2 { nx: sizes[0], ny: sizes[1], h }
            }
            SceneKind::Heisenberg => {
                want(3)?;
                SceneSpec::Heisenberg { nx: sizes[0], ny: sizes[1], nz: sizes[2], h }
            }
            SceneKind::Graph => {
                let path = self.scene.path.as_ref().ok_or_else(|| bad("scene.path", "graph scenes need a file"))?;
                return Scene::load(path).map_err(|e| match e {
                    paralab::Error::Io(source) => CliError::Io { path: path.clone(), source },
                    other => bad("scene.path", format!("{}: {other}", path.display())),
                });
            }
        };
        build_scene(&spec).map_err(|e| from_core("scene", e))
    }

    /// Checks every field the experiment uses and fills unset parameters with
    /// their defaults. Returns the built scene.
    pub fn validate(&mut self) -> Result<Scene, CliError> {
        let scene = self.build_scene()?;
        self.family()?;
        let q = &self.quadrature;
        if q.nodes_per_decade < 2 {
            return Err(bad("quadrature.nodes_per_decade", format!("need at least 2, got {}", q.nodes_per_decade)));
        }
        if !(q.pad >= 0.0 && q.pad.is_finite()) {
            return Err(bad("quadrature.pad", format!("must be a finite nonnegative number of decades, got {}", q.pad)));
        }
        if !(1..=5).contains(&q.points_per_cell) {
            return Err(bad("quadrature.points_per_cell", format!("must lie in 1..=5, got {}", q.points_per_cell)));
        }
        let p = &mut self.params;
        let s = *p.s.get_or_insert(0.8);
        let pe = *p.p.get_or_insert(2.0);
        if !(pe > 1.0) {
            return Err(bad("params.p", format!("exponent must exceed 1, got {pe}")));
        }
        if !(s >= 0.0 && s.is_finite()) {
            return Err(bad("params.s", format!("must be a finite nonnegative number, got {s}")));
        }
        let samples_default = match self.experiment {
            Experiment::Reconstruct => 50,
            Experiment::Sobolev => 5,
            _ => 20,
        };
        if *p.samples.get_or_insert(samples_default) == 0 {
            return Err(bad("params.samples", "need at least one sample"));
        }
        match self.experiment {
            Experiment::Geometry => {
                let d = *p.delta.get_or_insert(1.0);
                if !(d > 0.0) {
                    return Err(bad("params.delta", format!("must be positive, got {d}")));
                }
                if let Some(c) = p.doubling_max {
                    if !(c >= 1.0) {
                        return Err(bad("params.doubling_max", format!("must be at least 1, got {c}")));
                    }
                }
            }
            Experiment::Reconstruct => {}
            Experiment::Decompose => {
                if let Some(qv) = p.q {
                    if !(qv > 1.0) {
                        return Err(bad("params.q", format!("exponent must exceed 1, got {qv}")));
                    }
                    if 1.0 / pe + 1.0 / qv >= 1.0 {
                        return Err(bad("params.q", format!("need 1/p + 1/q < 1, got p = {pe}, q = {qv}")));
                    }
                }
            }
            Experiment::Sobolev => {
                let rho = *p.rho.get_or_insert(1.0);
                SobolevParams::new(s, pe, rho).map_err(|e| from_core("params.rho", e))?;
                if let Some(b) = p.beta {
                    let cap = self.multiplier.order as f64 - 2.0;
                    if !(b > 0.0 && b < cap) {
                        return Err(bad("params.beta", format!("must lie in (0, N−2) = (0, {cap}), got {b}")));
                    }
                }
            }
            Experiment::Paralinearize | Experiment::Smoothing => {
                let eps = *p.eps.get_or_insert(0.05);
                p.nonlinearity.get_or_insert_with(|| "sin".into());
                let nl = self.nonlinearity()?;
                if !nl.vanishes_at_zero() {
                    return Err(bad("params.nonlinearity", format!("{} must vanish at 0", nl.name())));
                }
                let p = &mut self.params;
                let params = ParalinParams::for_scene(&scene, s, pe, eps).map_err(|e| from_core("params.eps", e))?;
                if self.experiment == Experiment::Smoothing {
                    params.require_range().map_err(|e| from_core("params.s", e))?;
                    let [lo, hi] = *p.k_range.get_or_insert([3, 6]);
                    if lo > hi || hi > 30 {
                        return Err(bad("params.k_range", format!("need lo <= hi <= 30, got [{lo}, {hi}]")));
                    }
                } else if *p.depth.get_or_insert(4) > 30 {
                    return Err(bad("params.depth", "depth must be at most 30"));
                }
            }
            Experiment::Propagate => {
                let default_recipe = if scene.kind() == SceneKind::Torus2 { "transport_eq" } else { "gradient_eq" };
                let recipe = p.recipe.get_or_insert_with(|| default_recipe.into()).clone();
                let d = paralab::paralin::theorem_dimension(&scene).map_err(|e| from_core("scene", e))?;
                let gap = s - d / pe;
                match recipe.as_str() {
                    "gradient_eq" => {
                        p.s_target.get_or_insert(2.0 * s - d / pe);
                    }
                    "transport_eq" => {
                        p.a.get_or_insert(1);
                    }
                    other => return Err(bad("params.recipe", format!("unknown recipe `{other}`"))),
                }
                if p.rho_values.is_none() {
                    if !(gap > 0.0) {
                        return Err(bad("params.rho_values", format!("no default: s − d/p = {gap} is not positive")));
                    }
                    p.rho_values = Some(vec![0.5 * gap, gap + 0.4]);
                }
                if let Some(r) = p.rho_values.as_ref().unwrap().iter().find(|r| !(**r >= 0.0)) {
                    return Err(bad("params.rho_values", format!("must be nonnegative, got {r}")));
                }
                let refs = p.refinements.get_or_insert_with(|| vec![1, 2, 4]);
                if refs.is_empty() || refs.contains(&0) {
                    return Err(bad("params.refinements", "need positive refinement factors"));
                }
            }
        }
        Ok(scene)
    }
}
