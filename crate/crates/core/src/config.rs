//! TOML scenario files.
//!
//! ```toml
//! version = 1
//! seed = 7
//!
//! [scene]
//! frequency_hz = 300e9
//! bandwidth_hz = 50e9
//! tx = [0.5, 1.0, 1.5]
//!
//! [[scene.surfaces]]
//! id = "south"
//! corner = [0.0, 0.0, 0.0]
//! edge_u = [10.0, 0.0, 0.0]
//! edge_v = [0.0, 0.0, 3.0]
//! reflection_loss_db = 10.0
//!
//! [[scene.surfaces]]
//! id = "corner-mount"
//! corner = [9.0, 0.0, 1.4]
//! edge_u = [0.1, 0.1, 0.0]
//! edge_v = [0.0, 0.0, 0.2]
//! panel = "p1"
//!
//! [[scene.panels]]
//! id = "p1"
//! m_cells = 32
//! n_cells = 32
//! cell_spacing_m = 1e-4
//! mode = "controlled_reflect"
//! target_direction = [0.0, 1.0, 0.0]
//!
//! [[scene.users]]
//! position = [5.0, 1.0, 1.5]
//! rate_threshold_bps = 1e9
//!
//! [sweep]
//! tx_power_dbm = 20.0
//! panel_elements = [50, 600, 1200]
//! grid = { x = [0.0, 10.0], y = [0.0, 10.0], z = 1.5, resolution_m = 0.1 }
//!
//! [allocation]
//! p_t_tot_w = 4.0
//! n_a_tot = 1048576
//! m_s_tot = 1200
//! snr_threshold_db = 10.0
//! power_levels_w = [0.5, 1.0]
//! antenna_block = 65536
//! element_block = 10
//! ```

use std::path::Path;

use num_complex::Complex64;
use serde::Deserialize;
use thiserror::Error;

use crate::allocator::{Discretization, Normalizers, ResourceProblem, SearchMode, Totals, User};
use crate::geometry::{Material, Surface, Vec3};
use crate::metasurface::{MetaAtomSpec, Panel, PanelMode};
use crate::scene::{Scene, SceneError, SceneSpec, DEFAULT_MAX_BOUNCES, DEFAULT_WALL_LOSS_DB};
use crate::Diagnostics;

pub const SCHEMA_VERSION: i64 = 1;

#[derive(Debug, Error)]
pub enum ConfigError {
    #[error("cannot read {path}: {source}")]
    Io { path: String, source: std::io::Error },
    #[error("{0}")]
    Parse(String),
    #[error("{0}")]
    Invalid(Diagnostics),
}

impl From<Diagnostics> for ConfigError {
    fn from(d: Diagnostics) -> Self {
        ConfigError::Invalid(d)
    }
}

type Complex = [f64; 2];

fn complex(c: Complex) -> Complex64 {
    Complex64::new(c[0], c[1])
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ScenarioConfig {
    pub version: i64,
    #[serde(default)]
    pub seed: u64,
    pub scene: SceneConfig,
    #[serde(default)]
    pub sweep: Option<SweepConfig>,
    #[serde(default)]
    pub allocation: Option<AllocationConfig>,
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SceneConfig {
    #[serde(default = "default_frequency")]
    pub frequency_hz: f64,
    #[serde(default = "default_bandwidth")]
    pub bandwidth_hz: f64,
    #[serde(default)]
    pub absorption_coeff_per_m: f64,
    #[serde(default = "default_bounces")]
    pub max_bounces: usize,
    pub tx: Vec3,
    #[serde(default)]
    pub rx: Vec<Vec3>,
    #[serde(default)]
    pub surfaces: Vec<SurfaceConfig>,
    #[serde(default)]
    pub panels: Vec<PanelConfig>,
    #[serde(default)]
    pub users: Vec<UserConfig>,
}

fn default_frequency() -> f64 {
    300e9
}

fn default_bandwidth() -> f64 {
    50e9
}

fn default_bounces() -> usize {
    DEFAULT_MAX_BOUNCES
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SurfaceConfig {
    pub id: String,
    pub corner: Vec3,
    pub edge_u: Vec3,
    pub edge_v: Vec3,
    #[serde(default)]
    pub reflection_loss_db: Option<f64>,
    /// Id of the panel mounted on this surface.
    #[serde(default)]
    pub panel: Option<String>,
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AtomConfig {
    pub gamma_b: Complex,
    pub mu_r: Complex,
    pub eps_r: Complex,
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PanelConfig {
    pub id: String,
    pub m_cells: usize,
    pub n_cells: usize,
    pub cell_spacing_m: f64,
    pub mode: String,
    #[serde(default = "one")]
    pub reflection_magnitude: f64,
    #[serde(default = "one")]
    pub element_exponent: f64,
    #[serde(default)]
    pub atom: Option<AtomConfig>,
    #[serde(default)]
    pub target_direction: Option<Vec3>,
    #[serde(default)]
    pub gamma_x: Option<Complex>,
    #[serde(default)]
    pub gamma_y: Option<Complex>,
    #[serde(default)]
    pub exit_port: Option<Vec3>,
    #[serde(default)]
    pub insertion_loss_db: Option<f64>,
}

fn one() -> f64 {
    1.0
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct UserConfig {
    pub position: Vec3,
    #[serde(default)]
    pub rate_threshold_bps: f64,
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GridConfig {
    /// `[min, max]` in metres.
    pub x: [f64; 2],
    pub y: [f64; 2],
    pub z: f64,
    pub resolution_m: f64,
}

impl GridConfig {
    fn cells(lo: f64, hi: f64, res: f64) -> usize {
        ((hi - lo) / res - 1e-9).ceil().max(0.0) as usize
    }

    /// Cell centers, row-major with y outer.
    pub fn points(&self) -> Vec<Vec3> {
        let nx = Self::cells(self.x[0], self.x[1], self.resolution_m);
        let ny = Self::cells(self.y[0], self.y[1], self.resolution_m);
        let mut out = Vec::with_capacity(nx * ny);
        for j in 0..ny {
            let y = self.y[0] + (j as f64 + 0.5) * self.resolution_m;
            for i in 0..nx {
                let x = self.x[0] + (i as f64 + 0.5) * self.resolution_m;
                out.push(Vec3::new(x, y, self.z));
            }
        }
        out
    }
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SweepConfig {
    #[serde(default)]
    pub tx_power_dbm: f64,
    #[serde(default)]
    pub grid: Option<GridConfig>,
    #[serde(default)]
    pub panel_elements: Vec<u64>,
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AllocationConfig {
    pub p_t_tot_w: f64,
    pub n_a_tot: u64,
    pub m_s_tot: u64,
    pub snr_threshold_db: f64,
    #[serde(default = "half")]
    pub objective_weight: f64,
    pub power_levels_w: Vec<f64>,
    #[serde(default = "one_u64")]
    pub antenna_block: u64,
    #[serde(default = "one_u64")]
    pub element_block: u64,
    #[serde(default = "default_distance_norm")]
    pub distance_norm_m: f64,
    #[serde(default = "default_rate_norm")]
    pub rate_norm_bps: f64,
    #[serde(default)]
    pub mode: Option<String>,
}

fn half() -> f64 {
    0.5
}

fn one_u64() -> u64 {
    1
}

fn default_distance_norm() -> f64 {
    10.0
}

fn default_rate_norm() -> f64 {
    1e12
}

const SEARCH_MODES: [&str; 3] = ["auto", "exhaustive", "greedy"];

impl ScenarioConfig {
    pub fn from_toml(text: &str) -> Result<Self, ConfigError> {
        let de = toml::Deserializer::parse(text).map_err(|e| ConfigError::Parse(e.to_string()))?;
        serde_path_to_error::deserialize(de).map_err(|e| {
            let path = e.path().to_string();
            let inner = e.into_inner();
            let msg = inner.message().to_string();
            let location = inner
                .span()
                .map(|s| {
                    let line = text[..s.start.min(text.len())].matches('\n').count() + 1;
                    format!(" (line {line})")
                })
                .unwrap_or_default();
            if path == "." || path.is_empty() {
                ConfigError::Parse(format!("{msg}{location}"))
            } else {
                ConfigError::Parse(format!("{path}: {msg}{location}"))
            }
        })
    }

    pub fn load(path: &Path) -> Result<Self, ConfigError> {
        let text = std::fs::read_to_string(path).map_err(|source| ConfigError::Io {
            path: path.display().to_string(),
            source,
        })?;
        Self::from_toml(&text)
    }

    /// Every problem in the file, scene and allocation included.
    pub fn validate(&self) -> Result<(), ConfigError> {
        let mut d = self.structural_diagnostics();
        match self.scene_spec() {
            Ok(spec) => {
                if let Err(SceneError::Invalid(sd)) = Scene::new(spec) {
                    d.0.extend(sd.0);
                }
            }
            Err(pd) => d.0.extend(pd.0),
        }
        if let Some(a) = &self.allocation {
            let problem = self.problem_unchecked(a);
            if let Some(Err(crate::allocator::AllocError::InvalidProblem(pd))) = problem.map(|p| p.validate()) {
                d.0.extend(pd.0);
            }
        }
        if d.is_empty() {
            Ok(())
        } else {
            Err(ConfigError::Invalid(d))
        }
    }

    fn structural_diagnostics(&self) -> Diagnostics {
        let mut d = Diagnostics::default();
        if self.version != SCHEMA_VERSION {
            d.push("version", format!("must be {SCHEMA_VERSION}, got {}", self.version));
        }
        if let Some(s) = &self.sweep {
            if !s.tx_power_dbm.is_finite() {
                d.push("sweep.tx_power_dbm", "must be finite");
            }
            if let Some(g) = &s.grid {
                if !(g.resolution_m > 0.0 && g.resolution_m.is_finite()) {
                    d.push("sweep.grid.resolution_m", "must be > 0");
                }
                if !(g.x[1] > g.x[0]) {
                    d.push("sweep.grid.x", "must be [min, max] with max > min");
                }
                if !(g.y[1] > g.y[0]) {
                    d.push("sweep.grid.y", "must be [min, max] with max > min");
                }
                if !g.z.is_finite() {
                    d.push("sweep.grid.z", "must be finite");
                }
            }
            if s.panel_elements.contains(&0) {
                d.push("sweep.panel_elements", "values must be > 0");
            }
        }
        if let Some(a) = &self.allocation {
            if let Some(m) = &a.mode {
                if !SEARCH_MODES.contains(&m.as_str()) {
                    d.push(
                        "allocation.mode",
                        format!("unknown mode {m:?}; valid modes: {}", SEARCH_MODES.join(", ")),
                    );
                }
            }
        }
        d
    }

    fn panel(&self, i: usize, p: &PanelConfig, d: &mut Diagnostics) -> Option<Panel> {
        let base = format!("scene.panels[{i}]");
        let need_vec = |v: Option<Vec3>, field: &str, d: &mut Diagnostics| {
            if v.is_none() {
                d.push(format!("{base}.{field}"), format!("is required for mode {:?}", p.mode));
            }
            v.unwrap_or(Vec3::ZERO)
        };
        let mode = match p.mode.as_str() {
            "specular" => PanelMode::Specular,
            "controlled_reflect" => PanelMode::ControlledReflect {
                target_direction: need_vec(p.target_direction, "target_direction", d),
            },
            "polarization_convert" => PanelMode::PolarizationConvert {
                gamma_x: complex(p.gamma_x.unwrap_or([1.0, 0.0])),
                gamma_y: complex(p.gamma_y.unwrap_or([1.0, 0.0])),
            },
            "absorb" => PanelMode::Absorb,
            "waveguide" => PanelMode::Waveguide {
                exit_port: need_vec(p.exit_port, "exit_port", d),
                insertion_loss_db: p.insertion_loss_db.unwrap_or(0.0),
            },
            other => {
                d.push(
                    format!("{base}.mode"),
                    format!("unknown mode {other:?}; valid modes: {}", PanelMode::NAMES.join(", ")),
                );
                return None;
            }
        };
        let atom = match &p.atom {
            Some(a) => MetaAtomSpec {
                gamma_b: complex(a.gamma_b),
                mu_r: complex(a.mu_r),
                eps_r: complex(a.eps_r),
            },
            None if matches!(mode, PanelMode::Absorb) => MetaAtomSpec::matched_absorber(),
            None => MetaAtomSpec::reflective(),
        };
        match Panel::new(p.id.clone(), p.m_cells, p.n_cells, p.cell_spacing_m, mode, atom) {
            Ok(panel) => Some(
                panel
                    .with_reflection_magnitude(p.reflection_magnitude)
                    .with_element_exponent(p.element_exponent),
            ),
            Err(e) => {
                d.push(base, e.to_string());
                None
            }
        }
    }

    fn scene_spec(&self) -> Result<SceneSpec, Diagnostics> {
        let s = &self.scene;
        let mut d = Diagnostics::default();
        let panels: Vec<Panel> = s
            .panels
            .iter()
            .enumerate()
            .filter_map(|(i, p)| self.panel(i, p, &mut d))
            .collect();
        let surfaces = s
            .surfaces
            .iter()
            .map(|c| {
                let material = match &c.panel {
                    Some(id) => Material::Panel { panel_id: id.clone() },
                    None => Material::PlainWall {
                        reflection_loss_db: c.reflection_loss_db.unwrap_or(DEFAULT_WALL_LOSS_DB),
                    },
                };
                Surface::new(&c.id, c.corner, c.edge_u, c.edge_v, material)
            })
            .collect();
        if !d.is_empty() {
            return Err(d);
        }
        Ok(SceneSpec {
            tx_position: s.tx,
            rx_positions: s.rx.clone(),
            surfaces,
            panels,
            frequency_hz: s.frequency_hz,
            bandwidth_hz: s.bandwidth_hz,
            absorption_coeff_per_m: s.absorption_coeff_per_m,
            max_bounces: s.max_bounces,
        })
    }

    /// Build the scene, reporting every problem found.
    pub fn build_scene(&self) -> Result<Scene, ConfigError> {
        let mut d = self.structural_diagnostics();
        let spec = match self.scene_spec() {
            Ok(spec) => spec,
            Err(pd) => {
                d.0.extend(pd.0);
                return Err(d.into());
            }
        };
        match Scene::new(spec) {
            Ok(scene) if d.is_empty() => Ok(scene),
            Ok(_) => Err(d.into()),
            Err(SceneError::Invalid(sd)) => {
                d.0.extend(sd.0);
                Err(d.into())
            }
        }
    }

    pub fn users(&self) -> Vec<User> {
        self.scene
            .users
            .iter()
            .map(|u| User {
                position: u.position,
                rate_threshold_bps: u.rate_threshold_bps,
            })
            .collect()
    }

    fn problem_unchecked(&self, a: &AllocationConfig) -> Option<ResourceProblem> {
        let scene = Scene::new(self.scene_spec().ok()?).ok()?;
        Some(ResourceProblem {
            scene,
            users: self.users(),
            totals: Totals {
                p_t_tot_w: a.p_t_tot_w,
                n_a_tot: a.n_a_tot,
                m_s_tot: a.m_s_tot,
            },
            snr_threshold_db: a.snr_threshold_db,
            objective_weight: a.objective_weight,
            discretization: Discretization {
                power_levels_w: a.power_levels_w.clone(),
                antenna_block: a.antenna_block,
                element_block: a.element_block,
            },
            normalizers: Normalizers {
                distance_m: a.distance_norm_m,
                rate_bps: a.rate_norm_bps,
            },
            mode: match a.mode.as_deref() {
                Some("exhaustive") => SearchMode::Exhaustive,
                Some("greedy") => SearchMode::Greedy,
                _ => SearchMode::Auto,
            },
        })
    }

    /// The allocation problem described by the file.
    pub fn resource_problem(&self) -> Result<ResourceProblem, ConfigError> {
        let Some(a) = &self.allocation else {
            let mut d = Diagnostics::default();
            d.push("allocation", "block is required");
            return Err(d.into());
        };
        self.build_scene()?;
        let problem = self.problem_unchecked(a).expect("scene validated above");
        match problem.validate() {
            Ok(()) => Ok(problem),
            Err(crate::allocator::AllocError::InvalidProblem(d)) => Err(d.into()),
            Err(e) => unreachable!("validate only reports diagnostics: {e}"),
        }
    }
}
