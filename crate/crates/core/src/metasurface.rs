//! Meta-atom reflection physics and reflectarray panels.
//!
//! A meta-atom reflects an incident field with a complex coefficient
//! `Γ = Γᵇ·e^{iΦ}`. Programming the phase `Φ` cell by cell steers the
//! reflected beam; making the two orthogonal coefficients differ converts
//! polarization; matching permeability and permittivity absorbs the wave.

use std::f64::consts::{FRAC_PI_2, PI, TAU};

use num_complex::Complex64;
use thiserror::Error;

use crate::geometry::Vec3;
use crate::wavenumber;

#[derive(Debug, Error, PartialEq)]
pub enum MetasurfaceError {
    #[error("active meta-atom not supported: |gamma| = {0} > 1")]
    ActiveMetaAtom(f64),
    #[error("singular impedance: mu_r + n = 0")]
    SingularImpedance,
    #[error("angle {0} rad outside [-pi/2, pi/2]")]
    AngleOutOfRange(f64),
    #[error("degenerate incidence: source lies on the panel plane")]
    DegenerateIncidence,
    #[error("invalid plane wave: {0}")]
    InvalidWave(&'static str),
    #[error("invalid panel: {0}")]
    InvalidPanel(String),
}

/// Tolerance on the unit length of direction vectors.
pub const UNIT_TOLERANCE: f64 = 1e-12;

/// Complex reflection coefficient `Γᵇ·e^{iΦ}` of a passive meta-atom.
pub fn reflection_coefficient(gamma_b: Complex64, phase: f64) -> Result<Complex64, MetasurfaceError> {
    let mag = gamma_b.norm();
    if mag > 1.0 {
        return Err(MetasurfaceError::ActiveMetaAtom(mag));
    }
    Ok(gamma_b * Complex64::from_polar(1.0, phase))
}

/// Linear phase slope (rad/m) that reflects a plane wave arriving at
/// `theta_in` toward `theta_ref`: `(ω/c)(sin θ_in − sin θ_ref)`.
pub fn steering_phase_gradient(theta_in: f64, theta_ref: f64, frequency_hz: f64) -> Result<f64, MetasurfaceError> {
    for a in [theta_in, theta_ref] {
        if !(a.abs() <= FRAC_PI_2) {
            return Err(MetasurfaceError::AngleOutOfRange(a));
        }
    }
    Ok(wavenumber(frequency_hz) * (theta_in.sin() - theta_ref.sin()))
}

/// Absorptivity together with its reflectivity complement.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Absorptivity {
    /// β ∈ [0, 1].
    pub absorptivity: f64,
    /// R = 1 − β.
    pub reflectivity: f64,
}

/// `β = 1 − |(μ_r − n)/(μ_r + n)|²` with `n = √(μ_r ε_r)` on the principal
/// branch.
pub fn absorptivity(mu_r: Complex64, eps_r: Complex64) -> Result<Absorptivity, MetasurfaceError> {
    let n = (mu_r * eps_r).sqrt();
    let den = mu_r + n;
    if den.norm() == 0.0 {
        return Err(MetasurfaceError::SingularImpedance);
    }
    let reflectivity = ((mu_r - n) / den).norm_sqr().min(1.0);
    Ok(Absorptivity {
        absorptivity: 1.0 - reflectivity,
        reflectivity,
    })
}

/// A monochromatic plane wave with transverse components `E_x`, `E_y`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PlaneWave {
    pub e_x: Complex64,
    pub e_y: Complex64,
    pub frequency_hz: f64,
    pub direction: Vec3,
}

impl PlaneWave {
    pub fn new(e_x: Complex64, e_y: Complex64, frequency_hz: f64, direction: Vec3) -> Result<Self, MetasurfaceError> {
        if !(frequency_hz > 0.0) {
            return Err(MetasurfaceError::InvalidWave("frequency must be > 0"));
        }
        if (direction.norm() - 1.0).abs() > UNIT_TOLERANCE {
            return Err(MetasurfaceError::InvalidWave("direction must be a unit vector"));
        }
        Ok(Self {
            e_x,
            e_y,
            frequency_hz,
            direction,
        })
    }

    pub fn power(&self) -> f64 {
        self.e_x.norm_sqr() + self.e_y.norm_sqr()
    }
}

/// Reflect a wave off an anisotropic meta-atom with per-axis coefficients.
/// The reflected direction is the specular mirror about `normal`.
pub fn polarization_reflect(
    wave: &PlaneWave,
    gamma_x: Complex64,
    gamma_y: Complex64,
    normal: Vec3,
) -> Result<PlaneWave, MetasurfaceError> {
    for g in [gamma_x, gamma_y] {
        if g.norm() > 1.0 {
            return Err(MetasurfaceError::ActiveMetaAtom(g.norm()));
        }
    }
    let normal = normal
        .normalized()
        .ok_or(MetasurfaceError::InvalidWave("normal must be nonzero"))?;
    Ok(PlaneWave {
        e_x: gamma_x * wave.e_x,
        e_y: gamma_y * wave.e_y,
        frequency_hz: wave.frequency_hz,
        direction: wave.direction.reflect_direction(normal),
    })
}

/// Material parameters of a single meta-atom.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MetaAtomSpec {
    /// Boundary reflection coefficient Γᵇ.
    pub gamma_b: Complex64,
    pub mu_r: Complex64,
    pub eps_r: Complex64,
}

impl MetaAtomSpec {
    /// A strongly mismatched, mostly reflecting atom.
    pub fn reflective() -> Self {
        Self {
            gamma_b: Complex64::new(0.95, 0.0),
            mu_r: Complex64::new(1.0, 0.0),
            eps_r: Complex64::new(400.0, 0.0),
        }
    }

    /// An impedance-matched atom (μ_r = ε_r), which absorbs fully.
    pub fn matched_absorber() -> Self {
        Self {
            gamma_b: Complex64::new(0.0, 0.0),
            mu_r: Complex64::new(2.0, 0.5),
            eps_r: Complex64::new(2.0, 0.5),
        }
    }

    pub fn absorptivity(&self) -> Result<Absorptivity, MetasurfaceError> {
        absorptivity(self.mu_r, self.eps_r)
    }
}

/// Operating mode of a panel.
#[derive(Debug, Clone, PartialEq)]
pub enum PanelMode {
    Specular,
    ControlledReflect { target_direction: Vec3 },
    PolarizationConvert { gamma_x: Complex64, gamma_y: Complex64 },
    Absorb,
    Waveguide { exit_port: Vec3, insertion_loss_db: f64 },
}

impl PanelMode {
    pub const NAMES: [&'static str; 5] = [
        "specular",
        "controlled_reflect",
        "polarization_convert",
        "absorb",
        "waveguide",
    ];

    pub fn name(&self) -> &'static str {
        match self {
            PanelMode::Specular => "specular",
            PanelMode::ControlledReflect { .. } => "controlled_reflect",
            PanelMode::PolarizationConvert { .. } => "polarization_convert",
            PanelMode::Absorb => "absorb",
            PanelMode::Waveguide { .. } => "waveguide",
        }
    }

    /// Whether the panel re-radiates the incident wave toward the receiver.
    pub fn reflects(&self) -> bool {
        matches!(
            self,
            PanelMode::Specular | PanelMode::ControlledReflect { .. } | PanelMode::PolarizationConvert { .. }
        )
    }
}

/// An `M × N` grid of meta-atoms placed in the world frame.
///
/// Cell `(m, n)` sits at local coordinates `(m·spacing, n·spacing)` measured
/// from `origin` along `local_x` and `normal × local_x`. Per-cell arrays are
/// stored with index `m * n_cells + n`.
#[derive(Debug, Clone, PartialEq)]
pub struct Panel {
    pub id: String,
    pub m_cells: usize,
    pub n_cells: usize,
    pub cell_spacing: f64,
    /// Reflection magnitude r_mn ∈ [0, 1].
    pub r_mn: Vec<f64>,
    /// Phase shift ψ ∈ [0, 2π).
    pub psi_mn: Vec<f64>,
    /// Exponent q of the cell pattern `R_mn(θ) = r_mn·cos^q θ`.
    pub element_exponent: f64,
    pub mode: PanelMode,
    pub atom: MetaAtomSpec,
    pub origin: Vec3,
    pub normal: Vec3,
    pub local_x: Vec3,
}

impl Panel {
    /// A panel with unit reflection magnitude, zero phase and a cosine cell
    /// pattern, lying in the world xy-plane facing +z.
    pub fn new(
        id: impl Into<String>,
        m_cells: usize,
        n_cells: usize,
        cell_spacing: f64,
        mode: PanelMode,
        atom: MetaAtomSpec,
    ) -> Result<Self, MetasurfaceError> {
        if m_cells == 0 || n_cells == 0 {
            return Err(MetasurfaceError::InvalidPanel("cell counts must be >= 1".into()));
        }
        if !(cell_spacing > 0.0 && cell_spacing.is_finite()) {
            return Err(MetasurfaceError::InvalidPanel("cell spacing must be > 0".into()));
        }
        let cells = m_cells * n_cells;
        Ok(Self {
            id: id.into(),
            m_cells,
            n_cells,
            cell_spacing,
            r_mn: vec![1.0; cells],
            psi_mn: vec![0.0; cells],
            element_exponent: 1.0,
            mode,
            atom,
            origin: Vec3::ZERO,
            normal: Vec3::Z,
            local_x: Vec3::X,
        })
    }

    pub fn with_reflection_magnitude(mut self, r: f64) -> Self {
        self.r_mn.iter_mut().for_each(|v| *v = r);
        self
    }

    pub fn with_element_exponent(mut self, q: f64) -> Self {
        self.element_exponent = q;
        self
    }

    /// Place the panel so that its cell grid is centered on `center`.
    pub fn centered_on(mut self, center: Vec3, normal: Vec3, local_x: Vec3) -> Result<Self, MetasurfaceError> {
        let normal = normal
            .normalized()
            .ok_or_else(|| MetasurfaceError::InvalidPanel("normal must be nonzero".into()))?;
        let lx = local_x - normal * local_x.dot(normal);
        let lx = lx
            .normalized()
            .ok_or_else(|| MetasurfaceError::InvalidPanel("local_x must not be parallel to normal".into()))?;
        self.normal = normal;
        self.local_x = lx;
        let half_x = (self.m_cells - 1) as f64 * self.cell_spacing / 2.0;
        let half_y = (self.n_cells - 1) as f64 * self.cell_spacing / 2.0;
        self.origin = center - lx * half_x - self.local_y() * half_y;
        Ok(self)
    }

    pub fn cell_count(&self) -> usize {
        self.m_cells * self.n_cells
    }

    pub fn local_y(&self) -> Vec3 {
        self.normal.cross(self.local_x)
    }

    #[inline]
    pub fn index(&self, m: usize, n: usize) -> usize {
        m * self.n_cells + n
    }

    /// Local coordinates `(x_mn, y_mn)`.
    pub fn cell_local(&self, m: usize, n: usize) -> (f64, f64) {
        (m as f64 * self.cell_spacing, n as f64 * self.cell_spacing)
    }

    pub fn cell_world(&self, m: usize, n: usize) -> Vec3 {
        let (x, y) = self.cell_local(m, n);
        self.origin + self.local_x * x + self.local_y() * y
    }

    pub fn center(&self) -> Vec3 {
        let half_x = (self.m_cells - 1) as f64 * self.cell_spacing / 2.0;
        let half_y = (self.n_cells - 1) as f64 * self.cell_spacing / 2.0;
        self.origin + self.local_x * half_x + self.local_y() * half_y
    }

    /// Elevation from the normal and azimuth from `local_x` of a world
    /// direction, `θ ∈ [0, π]`, `φ ∈ [0, 2π)`.
    pub fn angles_of(&self, direction: Vec3) -> (f64, f64) {
        let d = direction.normalized().unwrap_or(self.normal);
        let theta = d.dot(self.normal).clamp(-1.0, 1.0).acos();
        let phi = d.dot(self.local_y()).atan2(d.dot(self.local_x)).rem_euclid(TAU);
        (theta, phi)
    }

    /// World direction for panel-frame angles.
    pub fn direction_from_angles(&self, theta: f64, phi: f64) -> Vec3 {
        let (st, ct) = theta.sin_cos();
        let (sp, cp) = phi.sin_cos();
        self.local_x * (st * cp) + self.local_y() * (st * sp) + self.normal * ct
    }

    /// Structural problems, as `(field, message)` pairs.
    pub fn problems(&self) -> Vec<(&'static str, String)> {
        let mut out = Vec::new();
        if self.m_cells == 0 || self.n_cells == 0 {
            out.push(("m_cells", "must be >= 1".to_string()));
        }
        if !(self.cell_spacing > 0.0 && self.cell_spacing.is_finite()) {
            out.push(("cell_spacing_m", "must be > 0".to_string()));
        }
        if self.r_mn.iter().any(|r| !(0.0..=1.0).contains(r)) {
            out.push(("reflection_magnitude", "must be in [0, 1]".to_string()));
        }
        if !(self.element_exponent >= 0.0 && self.element_exponent.is_finite()) {
            out.push(("element_exponent", "must be >= 0".to_string()));
        }
        if self.atom.gamma_b.norm() > 1.0 {
            out.push(("atom.gamma_b", "must satisfy |gamma_b| <= 1 (passive)".to_string()));
        }
        if absorptivity(self.atom.mu_r, self.atom.eps_r).is_err() {
            out.push(("atom", "mu_r + sqrt(mu_r eps_r) must be nonzero".to_string()));
        }
        match &self.mode {
            PanelMode::ControlledReflect { target_direction } => {
                if (target_direction.norm() - 1.0).abs() > 1e-9 {
                    out.push(("target_direction", "must be a unit vector".to_string()));
                }
            }
            PanelMode::PolarizationConvert { gamma_x, gamma_y } => {
                if gamma_x.norm() > 1.0 {
                    out.push(("gamma_x", "must satisfy |gamma_x| <= 1".to_string()));
                }
                if gamma_y.norm() > 1.0 {
                    out.push(("gamma_y", "must satisfy |gamma_y| <= 1".to_string()));
                }
            }
            PanelMode::Waveguide { insertion_loss_db, .. } => {
                if !(*insertion_loss_db >= 0.0) {
                    out.push(("insertion_loss_db", "must be >= 0".to_string()));
                }
            }
            PanelMode::Specular | PanelMode::Absorb => {}
        }
        out
    }

    /// Replace the phase profile, wrapping each value into `[0, 2π)`.
    pub fn set_phase_profile(&mut self, psi: Vec<f64>) {
        assert_eq!(psi.len(), self.cell_count(), "phase profile size mismatch");
        self.psi_mn = psi.into_iter().map(wrap_phase).collect();
    }
}

/// Wrap a phase into `[0, 2π)`.
pub fn wrap_phase(p: f64) -> f64 {
    let w = p.rem_euclid(TAU);
    // rem_euclid can round up to exactly TAU for tiny negative inputs
    if w >= TAU {
        0.0
    } else {
        w
    }
}

/// Per-cell phases that make the re-radiated field from a point source
/// cohere toward `target_direction` at `frequency_hz`.
///
/// The incident field reaches cell `(m, n)` with phase `−k₀·|cell − source|`
/// and leaves toward `target` with phase `+k₀·(cell · target)`, so the
/// compensating shift is `k₀·(|cell − source| − cell · target)`, wrapped to
/// `[0, 2π)`. Cell positions are taken relative to the panel origin.
pub fn synthesize_phase_profile(
    panel: &Panel,
    frequency_hz: f64,
    source_point: Vec3,
    target_direction: Vec3,
) -> Result<Vec<f64>, MetasurfaceError> {
    let height = (source_point - panel.origin).dot(panel.normal);
    if height.abs() <= 1e-12 {
        return Err(MetasurfaceError::DegenerateIncidence);
    }
    let target = target_direction
        .normalized()
        .ok_or_else(|| MetasurfaceError::InvalidPanel("target direction must be nonzero".into()))?;
    let k0 = wavenumber(frequency_hz);
    let tx = target.dot(panel.local_x);
    let ty = target.dot(panel.local_y());
    let mut psi = Vec::with_capacity(panel.cell_count());
    for m in 0..panel.m_cells {
        for n in 0..panel.n_cells {
            let (x, y) = panel.cell_local(m, n);
            let incident = panel.cell_world(m, n).distance(source_point);
            psi.push(wrap_phase(k0 * (incident - (x * tx + y * ty))));
        }
    }
    Ok(psi)
}

/// Wrap an angle to `[-π, π)`.
pub fn wrap_signed(a: f64) -> f64 {
    (a + PI).rem_euclid(TAU) - PI
}
