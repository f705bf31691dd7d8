//! Deterministic indoor mm-wave/THz propagation with reconfigurable
//! reflectarray panels.
//!
//! The crate is organized bottom-up:
//!
//! - [`geometry`]: vectors, rectangles, segment intersection.
//! - [`metasurface`]: meta-atom reflection physics and panel phase synthesis.
//! - [`scene`]: the indoor environment and deterministic path tracing.
//! - [`channel`]: reflectarray array factor and multipath tap assembly.
//! - [`capacity`]: channel matrices and log-det / closed-form rates.
//! - [`allocator`]: per-user power/antenna/element allocation.
//! - [`config`] and [`cli`]: the scenario file format and the batch commands.

pub mod allocator;
pub mod capacity;
pub mod channel;
pub mod cli;
pub mod config;
pub mod geometry;
pub mod metasurface;
pub mod scene;

use std::fmt;

/// Speed of light in vacuum (m/s).
pub const SPEED_OF_LIGHT: f64 = 299_792_458.0;

/// Boltzmann constant (J/K).
pub const BOLTZMANN: f64 = 1.380_649e-23;

/// Reference noise temperature (K).
pub const NOISE_TEMPERATURE_K: f64 = 290.0;

/// Free-space wavenumber k₀ = 2πf/c.
pub fn wavenumber(frequency_hz: f64) -> f64 {
    2.0 * std::f64::consts::PI * frequency_hz / SPEED_OF_LIGHT
}

/// One validation problem, addressed by a dotted field path such as
/// `scene.surfaces[2].edge_u`.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Diagnostic {
    pub path: String,
    pub message: String,
}

impl Diagnostic {
    pub fn new(path: impl Into<String>, message: impl Into<String>) -> Self {
        Self {
            path: path.into(),
            message: message.into(),
        }
    }
}

impl fmt::Display for Diagnostic {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        if self.path.is_empty() {
            write!(f, "{}", self.message)
        } else {
            write!(f, "{} {}", self.path, self.message)
        }
    }
}

/// A list of diagnostics rendered one per line.
#[derive(Debug, Clone, PartialEq, Eq, Default)]
pub struct Diagnostics(pub Vec<Diagnostic>);

impl Diagnostics {
    pub fn push(&mut self, path: impl Into<String>, message: impl Into<String>) {
        self.0.push(Diagnostic::new(path, message));
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    pub fn iter(&self) -> impl Iterator<Item = &Diagnostic> {
        self.0.iter()
    }
}

impl fmt::Display for Diagnostics {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        for (i, d) in self.0.iter().enumerate() {
            if i > 0 {
                writeln!(f)?;
            }
            write!(f, "{d}")?;
        }
        Ok(())
    }
}

impl std::error::Error for Diagnostics {}
