//! Reflectarray array factor and multipath tap assembly.
//!
//! A channel is a list of taps, one per traced path. Each tap carries a
//! complex amplitude α and a delay τ; the wideband response is
//! `H(f) = Σ α·e^{−j2πfτ}`.

use std::f64::consts::{FRAC_PI_2, PI, TAU};
use std::io::Write;

use num_complex::Complex64;
use thiserror::Error;

use crate::geometry::Vec3;
use crate::metasurface::{Panel, PanelMode};
use crate::scene::{PathKind, Scene, TracedPath};
use crate::{wavenumber, SPEED_OF_LIGHT};

#[derive(Debug, Error, PartialEq)]
pub enum ChannelError {
    #[error("angle out of range: theta = {theta}, phi = {phi}")]
    AngleOutOfRange { theta: f64, phi: f64 },
    #[error("distance must be > 0, got {0}")]
    NonPositiveDistance(f64),
    #[error("path {path} references unknown panel {panel:?}")]
    UnknownPanel { path: usize, panel: String },
    #[error("path {0} has no matching loss factor for an interaction")]
    MalformedPath(usize),
}

/// Complex array gain at one departure direction.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ArrayFactorResult {
    pub value: Complex64,
    pub theta_t: f64,
    pub phi_t: f64,
    pub frequency_hz: f64,
}

fn check_angles(theta: f64, phi: f64) -> Result<(), ChannelError> {
    if (0.0..=FRAC_PI_2).contains(&theta) && (0.0..TAU).contains(&phi) {
        Ok(())
    } else {
        Err(ChannelError::AngleOutOfRange { theta, phi })
    }
}

/// Cell pattern `R_mn(θ) = r_mn·cos^q θ`.
fn cell_pattern(panel: &Panel, theta: f64) -> f64 {
    let c = theta.cos().max(0.0);
    if panel.element_exponent == 0.0 {
        1.0
    } else {
        c.powf(panel.element_exponent)
    }
}

/// `A(f) = Σₙ Σₘ R_mn · exp(j k₀ [x_mn sinθ cosφ + y_mn sinθ sinφ] + j ψ_mn)`.
///
/// The panel-center departure angles are used for every cell.
pub fn array_factor(panel: &Panel, frequency_hz: f64, theta_t: f64, phi_t: f64) -> Result<ArrayFactorResult, ChannelError> {
    check_angles(theta_t, phi_t)?;
    let k0 = wavenumber(frequency_hz);
    let (st, _) = theta_t.sin_cos();
    let (sp, cp) = phi_t.sin_cos();
    let (ux, uy) = (st * cp, st * sp);
    let pattern = cell_pattern(panel, theta_t);
    let mut value = Complex64::new(0.0, 0.0);
    for m in 0..panel.m_cells {
        for n in 0..panel.n_cells {
            let i = panel.index(m, n);
            let (x, y) = panel.cell_local(m, n);
            let phase = k0 * (x * ux + y * uy) + panel.psi_mn[i];
            value += Complex64::from_polar(panel.r_mn[i] * pattern, phase);
        }
    }
    Ok(ArrayFactorResult {
        value,
        theta_t,
        phi_t,
        frequency_hz,
    })
}

/// Array factor for illumination by a point source: each cell additionally
/// carries the incident phase `−k₀·(|cell − source| − |center − source|)`.
/// For a source far along the normal this reduces to [`array_factor`].
pub fn array_factor_from_source(
    panel: &Panel,
    frequency_hz: f64,
    source: Vec3,
    theta_t: f64,
    phi_t: f64,
) -> Result<ArrayFactorResult, ChannelError> {
    check_angles(theta_t, phi_t)?;
    let k0 = wavenumber(frequency_hz);
    let (st, _) = theta_t.sin_cos();
    let (sp, cp) = phi_t.sin_cos();
    let (ux, uy) = (st * cp, st * sp);
    let pattern = cell_pattern(panel, theta_t);
    let reference = panel.center().distance(source);
    let mut value = Complex64::new(0.0, 0.0);
    for m in 0..panel.m_cells {
        for n in 0..panel.n_cells {
            let i = panel.index(m, n);
            let (x, y) = panel.cell_local(m, n);
            let incident = panel.cell_world(m, n).distance(source) - reference;
            let phase = k0 * (x * ux + y * uy - incident) + panel.psi_mn[i];
            value += Complex64::from_polar(panel.r_mn[i] * pattern, phase);
        }
    }
    Ok(ArrayFactorResult {
        value,
        theta_t,
        phi_t,
        frequency_hz,
    })
}

/// Linear amplitude factor of one panel interaction, for a wave arriving
/// from `from` and leaving toward `to`.
///
/// Re-radiating modes give `|A|/(M·N)·√(1 − β)`; polarization conversion
/// additionally scales by the RMS of `|Γ_x|`, `|Γ_y|`. Absorbing panels
/// return the absorbed share `|A|/(M·N)·√β`. Waveguides return the entry
/// insertion loss. Receivers behind the panel get 0.
pub fn panel_interaction_loss(panel: &Panel, frequency_hz: f64, from: Vec3, to: Vec3) -> f64 {
    if let PanelMode::Waveguide { insertion_loss_db, .. } = panel.mode {
        return 10f64.powf(-insertion_loss_db / 20.0);
    }
    let center = panel.center();
    let (theta, phi) = panel.angles_of(to - center);
    if theta > FRAC_PI_2 {
        return 0.0;
    }
    let af = match array_factor_from_source(panel, frequency_hz, from, theta, phi) {
        Ok(af) => af.value.norm() / panel.cell_count() as f64,
        Err(_) => return 0.0,
    };
    let beta = panel.atom.absorptivity().map(|a| a.absorptivity).unwrap_or(1.0);
    let g = match &panel.mode {
        PanelMode::Specular | PanelMode::ControlledReflect { .. } => af * (1.0 - beta).sqrt(),
        PanelMode::PolarizationConvert { gamma_x, gamma_y } => {
            af * (1.0 - beta).sqrt() * ((gamma_x.norm_sqr() + gamma_y.norm_sqr()) / 2.0).sqrt()
        }
        PanelMode::Absorb => af * beta.sqrt(),
        PanelMode::Waveguide { .. } => unreachable!(),
    };
    g.clamp(0.0, 1.0)
}

/// Free-space spreading times exponential absorption, as an amplitude:
/// `(c / 4πfd)·e^{−K·d/2}`, capped at 1 inside the reactive near field.
pub fn spreading_loss_amplitude(frequency_hz: f64, distance_m: f64, absorption_coeff_per_m: f64) -> Result<f64, ChannelError> {
    if !(distance_m > 0.0) {
        return Err(ChannelError::NonPositiveDistance(distance_m));
    }
    let friis = SPEED_OF_LIGHT / (4.0 * PI * frequency_hz * distance_m);
    Ok(friis.min(1.0) * (-absorption_coeff_per_m * distance_m / 2.0).exp())
}

/// Power loss in dB corresponding to [`spreading_loss_amplitude`].
pub fn path_loss_db(frequency_hz: f64, distance_m: f64, absorption_coeff_per_m: f64) -> Result<f64, ChannelError> {
    let a = spreading_loss_amplitude(frequency_hz, distance_m, absorption_coeff_per_m)?;
    Ok(-20.0 * a.log10())
}

/// One multipath component.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ChannelTap {
    pub amplitude: Complex64,
    pub delay: f64,
    pub kind: PathKind,
    /// Index into the path list the response was assembled from.
    pub path_ref: usize,
}

/// Tap list for one transmitter/receiver pair at one frequency.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct ChannelResponse {
    pub taps: Vec<ChannelTap>,
    pub frequency_hz: f64,
}

impl ChannelResponse {
    /// Σ|α|² over taps that deliver energy to the receiver.
    pub fn gain(&self) -> f64 {
        self.taps
            .iter()
            .filter(|t| t.kind != PathKind::Absorbed)
            .map(|t| t.amplitude.norm_sqr())
            .sum()
    }

    /// Σ|α|² over all taps, including absorbed bookkeeping taps.
    pub fn total_energy(&self) -> f64 {
        self.taps.iter().map(|t| t.amplitude.norm_sqr()).sum()
    }

    /// Merge another response, keeping delay order.
    pub fn merge(mut self, other: ChannelResponse, path_offset: usize) -> ChannelResponse {
        self.taps.extend(other.taps.into_iter().map(|mut t| {
            t.path_ref += path_offset;
            t
        }));
        sort_taps(&mut self.taps);
        self
    }

    /// Write the taps as CSV: `kind,delay_s,re_alpha,im_alpha,power_db`.
    pub fn write_csv<W: Write>(&self, out: W) -> csv::Result<()> {
        let mut w = csv::Writer::from_writer(out);
        w.write_record(["kind", "delay_s", "re_alpha", "im_alpha", "power_db"])?;
        for t in &self.taps {
            let p = t.amplitude.norm_sqr();
            let power_db = if p > 0.0 { 10.0 * p.log10() } else { f64::NEG_INFINITY };
            w.write_record([
                t.kind.name().to_string(),
                format!("{:e}", t.delay),
                format!("{:e}", t.amplitude.re),
                format!("{:e}", t.amplitude.im),
                format!("{power_db:.6}"),
            ])?;
        }
        w.flush()?;
        Ok(())
    }
}

fn sort_taps(taps: &mut [ChannelTap]) {
    taps.sort_by(|a, b| {
        a.delay
            .total_cmp(&b.delay)
            .then(a.kind.order().cmp(&b.kind.order()))
            .then(a.path_ref.cmp(&b.path_ref))
    });
}

/// Build the tap list from traced paths with uniform terminal gains.
pub fn assemble_channel(
    paths: &[TracedPath],
    scene: &Scene,
    tx_gain: Complex64,
    rx_gain: Complex64,
) -> Result<ChannelResponse, ChannelError> {
    assemble_channel_with(paths, scene, |_| (tx_gain, rx_gain))
}

/// Build the tap list, asking `gains` for the transmit and receive array
/// gains of each path (evaluated at its departure and arrival directions).
///
/// LoS and reflected taps use the spreading loss over the total unfolded
/// length times the product of per-interaction losses. Waveguided taps use
/// the spreading of the entry and exit legs separately with the entry loss
/// between them; the guide itself is lossless.
pub fn assemble_channel_with<F>(paths: &[TracedPath], scene: &Scene, gains: F) -> Result<ChannelResponse, ChannelError>
where
    F: Fn(&TracedPath) -> (Complex64, Complex64),
{
    let f = scene.frequency_hz;
    let k = scene.absorption_coeff_per_m;
    let mut taps = Vec::with_capacity(paths.len());
    for (i, path) in paths.iter().enumerate() {
        for it in &path.interactions {
            if let Some(pid) = it.panel_id() {
                if scene.panel(pid).is_none() {
                    return Err(ChannelError::UnknownPanel {
                        path: i,
                        panel: pid.to_string(),
                    });
                }
            }
        }
        if path.segment_losses.len() != path.interactions.len() {
            return Err(ChannelError::MalformedPath(i));
        }
        let (gt, gr) = gains(path);
        let interaction_product: f64 = path.segment_losses.iter().product();
        let magnitude = match path.kind {
            PathKind::Waveguided => {
                let entry = path.vertices[0].distance(path.vertices[1]);
                let exit = path.vertices[path.vertices.len() - 2].distance(path.vertices[path.vertices.len() - 1]);
                spreading_loss_amplitude(f, entry, k)? * interaction_product * spreading_loss_amplitude(f, exit, k)?
            }
            PathKind::Los | PathKind::Reflected | PathKind::Absorbed => {
                spreading_loss_amplitude(f, path.total_length, k)? * interaction_product
            }
        };
        taps.push(ChannelTap {
            amplitude: gt * gr * magnitude,
            delay: path.delay,
            kind: path.kind,
            path_ref: i,
        });
    }
    sort_taps(&mut taps);
    Ok(ChannelResponse { taps, frequency_hz: f })
}

/// `P_t · Σ|α|²`, excluding absorbed taps. Tap powers add incoherently.
pub fn received_power_w(response: &ChannelResponse, p_t_w: f64) -> f64 {
    p_t_w * response.gain()
}

/// `H(f) = Σ α·e^{−j2πfτ}` at each grid frequency. Absorbed taps are
/// excluded.
pub fn frequency_response(response: &ChannelResponse, freq_grid: &[f64]) -> Vec<Complex64> {
    freq_grid
        .iter()
        .map(|&f| {
            response
                .taps
                .iter()
                .filter(|t| t.kind != PathKind::Absorbed)
                .map(|t| t.amplitude * Complex64::from_polar(1.0, -TAU * f * t.delay))
                .sum()
        })
        .collect()
}

/// Convert watts to dBm.
pub fn watts_to_dbm(p_w: f64) -> f64 {
    10.0 * (p_w * 1e3).log10()
}

/// Convert dBm to watts.
pub fn dbm_to_watts(p_dbm: f64) -> f64 {
    10f64.powf(p_dbm / 10.0) * 1e-3
}
