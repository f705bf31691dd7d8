//! Favorable-propagation channel matrices and achievable rates.
//!
//! `H = G·A^{1/2}` combines i.i.d. small-scale fading `G` with per-antenna
//! large-scale gains `A = diag(α₁, …, α_N)`. Rates are evaluated either from
//! `B·log₂ det(I + P_t·HᴴH)` or from the rank-one closed form
//! `B·log₂(1 + P_t·M·N)`. The two are never substituted for each other.

use nalgebra::DMatrix;
use num_complex::Complex64;
use rand::SeedableRng;
use rand_chacha::ChaCha20Rng;
use rand_distr::{Distribution, StandardNormal};
use thiserror::Error;

use crate::{BOLTZMANN, NOISE_TEMPERATURE_K};

#[derive(Debug, Error, PartialEq)]
pub enum CapacityError {
    #[error("large-scale gain alpha[{index}] = {value} must be >= 0")]
    NegativeGain { index: usize, value: f64 },
    #[error("gain count {got} does not match {expected} matrix columns")]
    DimensionMismatch { expected: usize, got: usize },
    #[error("channel matrix has non-finite entries")]
    NonFinite,
    #[error("channel matrix must be at least 1x1")]
    Empty,
    #[error("transmit power must be >= 0, got {0}")]
    NegativePower(f64),
    #[error("noise power must be > 0, got {0}")]
    NonPositiveNoise(f64),
}

/// Complex channel matrix with `M` rows (receive/reflect elements) and `N`
/// columns (transmit antennas).
#[derive(Debug, Clone, PartialEq)]
pub struct ChannelMatrix {
    pub entries: DMatrix<Complex64>,
}

impl ChannelMatrix {
    pub fn new(entries: DMatrix<Complex64>) -> Result<Self, CapacityError> {
        if entries.nrows() == 0 || entries.ncols() == 0 {
            return Err(CapacityError::Empty);
        }
        if entries.iter().any(|z| !z.re.is_finite() || !z.im.is_finite()) {
            return Err(CapacityError::NonFinite);
        }
        Ok(Self { entries })
    }

    /// All-ones `m × n` matrix, the coherent rank-one channel.
    pub fn ones(m: usize, n: usize) -> Self {
        Self {
            entries: DMatrix::from_element(m, n, Complex64::new(1.0, 0.0)),
        }
    }

    pub fn identity(n: usize) -> Self {
        Self {
            entries: DMatrix::identity(n, n),
        }
    }

    pub fn rows(&self) -> usize {
        self.entries.nrows()
    }

    pub fn cols(&self) -> usize {
        self.entries.ncols()
    }
}

/// Seeded draw of i.i.d. circularly-symmetric complex Gaussian entries with
/// zero mean and unit variance.
///
/// Generator contract: a ChaCha20 stream seeded with
/// `ChaCha20Rng::seed_from_u64(seed)` and switched to `stream`; entries are
/// filled column-major, each taking two `StandardNormal` samples (real then
/// imaginary) scaled by `1/√2`.
#[derive(Debug, Clone, PartialEq)]
pub struct FadingDraw {
    pub seed: u64,
    pub stream: u64,
    pub g: DMatrix<Complex64>,
}

impl FadingDraw {
    pub fn generate(seed: u64, stream: u64, rows: usize, cols: usize) -> Self {
        let mut rng = ChaCha20Rng::seed_from_u64(seed);
        rng.set_stream(stream);
        let scale = std::f64::consts::FRAC_1_SQRT_2;
        let g = DMatrix::from_fn(rows, cols, |_, _| {
            let re: f64 = StandardNormal.sample(&mut rng);
            let im: f64 = StandardNormal.sample(&mut rng);
            Complex64::new(re * scale, im * scale)
        });
        Self { seed, stream, g }
    }

    /// A deterministic draw from explicit entries, mostly for tests.
    pub fn from_matrix(g: DMatrix<Complex64>) -> Self {
        Self { seed: 0, stream: 0, g }
    }
}

/// `H = G·diag(α)^{1/2}`: column `n` of `G` scaled by `√α_n`.
pub fn compose_channel_matrix(draw: &FadingDraw, alphas: &[f64]) -> Result<ChannelMatrix, CapacityError> {
    if alphas.len() != draw.g.ncols() {
        return Err(CapacityError::DimensionMismatch {
            expected: draw.g.ncols(),
            got: alphas.len(),
        });
    }
    if let Some((index, &value)) = alphas.iter().enumerate().find(|(_, a)| !(**a >= 0.0)) {
        return Err(CapacityError::NegativeGain { index, value });
    }
    let mut h = draw.g.clone();
    for (n, a) in alphas.iter().enumerate() {
        let s = a.sqrt();
        h.column_mut(n).iter_mut().for_each(|z| *z *= s);
    }
    ChannelMatrix::new(h)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum RateFormula {
    Determinant,
    ClosedForm,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RateResult {
    pub bits_per_s: f64,
    pub formula: RateFormula,
}

/// `B·log₂ det(I + P_t·HᴴH)` via the eigenvalues of the smaller Gram matrix.
///
/// `HᴴH` and `HHᴴ` share nonzero eigenvalues, so the `min(M, N)` square
/// Gram matrix is decomposed. `p_t` is the noise-normalized transmit power.
pub fn capacity_det(h: &ChannelMatrix, p_t: f64, b_hz: f64) -> Result<RateResult, CapacityError> {
    if !(p_t >= 0.0) {
        return Err(CapacityError::NegativePower(p_t));
    }
    if h.entries.iter().any(|z| !z.re.is_finite() || !z.im.is_finite()) {
        return Err(CapacityError::NonFinite);
    }
    if p_t == 0.0 {
        return Ok(RateResult {
            bits_per_s: 0.0,
            formula: RateFormula::Determinant,
        });
    }
    let hm = &h.entries;
    let gram = if hm.ncols() <= hm.nrows() {
        hm.adjoint() * hm
    } else {
        hm * hm.adjoint()
    };
    let eig = gram.symmetric_eigenvalues();
    let bits: f64 = eig.iter().map(|&l| (p_t * l.max(0.0)).ln_1p()).sum::<f64>() / std::f64::consts::LN_2;
    Ok(RateResult {
        bits_per_s: b_hz * bits.max(0.0),
        formula: RateFormula::Determinant,
    })
}

/// `B·log₂(1 + P_t·M·N)`.
pub fn capacity_closed_form(p_t: f64, m: u64, n: u64, b_hz: f64) -> RateResult {
    let snr = p_t * m as f64 * n as f64;
    RateResult {
        bits_per_s: b_hz * snr.ln_1p() / std::f64::consts::LN_2,
        formula: RateFormula::ClosedForm,
    }
}

/// Thermal noise `k_B·T·B` at 290 K.
pub fn thermal_noise_w(bandwidth_hz: f64) -> f64 {
    BOLTZMANN * NOISE_TEMPERATURE_K * bandwidth_hz
}

/// `10·log₁₀(P_r / P_n)`.
pub fn snr_db(received_power_w: f64, noise_power_w: f64) -> Result<f64, CapacityError> {
    if !(noise_power_w > 0.0) {
        return Err(CapacityError::NonPositiveNoise(noise_power_w));
    }
    Ok(10.0 * (received_power_w / noise_power_w).log10())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn compose_scales_columns() {
        let draw = FadingDraw::from_matrix(DMatrix::from_element(2, 3, Complex64::new(1.0, 0.0)));
        let h = compose_channel_matrix(&draw, &[1.0, 4.0, 9.0]).unwrap();
        for r in 0..2 {
            for (c, s) in [1.0, 2.0, 3.0].iter().enumerate() {
                assert_eq!(h.entries[(r, c)], Complex64::new(*s, 0.0));
            }
        }
        let draw = FadingDraw::generate(7, 0, 3, 2);
        assert_eq!(compose_channel_matrix(&draw, &[1.0, 1.0]).unwrap().entries, draw.g);
        let zero = compose_channel_matrix(&draw, &[0.0, 0.0]).unwrap();
        assert!(zero.entries.iter().all(|z| z.norm() == 0.0));
        assert_eq!(
            compose_channel_matrix(&draw, &[1.0, -1.0]),
            Err(CapacityError::NegativeGain { index: 1, value: -1.0 })
        );
    }

    #[test]
    fn det_capacity_examples() {
        let b = 50e9;
        assert_eq!(capacity_det(&ChannelMatrix::ones(4, 3), 0.0, b).unwrap().bits_per_s, 0.0);
        // det(2I) = 2^N
        let r = capacity_det(&ChannelMatrix::identity(5), 1.0, b).unwrap().bits_per_s;
        assert!((r - 5.0 * b).abs() / (5.0 * b) < 1e-12);
        // rank one: single eigenvalue M·N
        let r = capacity_det(&ChannelMatrix::ones(3, 7), 2.0, b).unwrap().bits_per_s;
        let expected = b * (1.0f64 + 2.0 * 21.0).log2();
        assert!((r - expected).abs() / expected < 1e-12);
    }

    #[test]
    fn closed_form_examples() {
        let b = 50e9;
        assert!((capacity_closed_form(1.0, 1, 1, b).bits_per_s - b).abs() / b < 1e-15);
        assert_eq!(capacity_closed_form(0.0, 10, 10, b).bits_per_s, 0.0);
        let big = capacity_closed_form(1.0, 1 << 20, 1 << 20, b).bits_per_s;
        assert!((big - 2.0e12).abs() / 2.0e12 < 1e-3, "{big}");
    }

    #[test]
    fn noise_and_snr() {
        assert_eq!(snr_db(1.0, 1.0).unwrap(), 0.0);
        assert!((snr_db(100.0, 1.0).unwrap() - 20.0).abs() < 1e-12);
        assert!(snr_db(1.0, 0.0).is_err());
        let n = thermal_noise_w(50e9);
        assert!((n - 2.0e-10).abs() < 0.01e-10);
        // −96.99 dBW, i.e. −66.99 dBm
        assert!((10.0 * n.log10() + 96.985).abs() < 0.01);
    }

    #[test]
    fn draws_are_seed_deterministic() {
        let a = FadingDraw::generate(42, 3, 4, 4);
        let b = FadingDraw::generate(42, 3, 4, 4);
        let c = FadingDraw::generate(42, 4, 4, 4);
        assert_eq!(a.g, b.g);
        assert_ne!(a.g, c.g);
    }

    #[test]
    fn non_finite_rejected() {
        let mut m = DMatrix::from_element(2, 2, Complex64::new(1.0, 0.0));
        m[(0, 1)] = Complex64::new(f64::NAN, 0.0);
        assert_eq!(ChannelMatrix::new(m.clone()), Err(CapacityError::NonFinite));
        let h = ChannelMatrix { entries: m };
        assert_eq!(capacity_det(&h, 1.0, 1.0), Err(CapacityError::NonFinite));
    }
}
