//! Linear array geometries and their steering vectors.
//!
//! Sensor positions are stored in half-wavelength units, so the phase of the
//! m-th steering element is `-pi * d_m * sin(theta)` and the carrier
//! wavelength never appears downstream. Angles are radians measured from
//! boresight and restricted to the open interval (-pi/2, pi/2).

use nalgebra::{DMatrix, DVector};
use num_complex::Complex64;

use crate::error::{Error, Result};

/// Absolute tolerance below which two steering angles count as duplicates.
pub const DUPLICATE_ANGLE_TOL: f64 = 1e-12;

/// A linear array described by its sensor positions in half-wavelength units.
///
/// Positions are strictly increasing with the first sensor at the origin.
/// Values are immutable after construction and safe to share across threads.
#[derive(Debug, Clone, PartialEq)]
pub struct ArrayGeometry {
    positions: Vec<f64>,
    label: String,
}

impl ArrayGeometry {
    /// Builds a geometry from raw positions, validating the translation
    /// convention (first sensor at 0, strictly increasing, at least 2).
    pub fn from_positions(positions: Vec<f64>, label: impl Into<String>) -> Result<Self> {
        if positions.len() < 2 {
            return Err(Error::TooFewSensors(positions.len()));
        }
        if positions[0] != 0.0 {
            return Err(Error::InvalidPositions);
        }
        if positions.windows(2).any(|w| !(w[1] > w[0])) {
            return Err(Error::InvalidPositions);
        }
        Ok(Self {
            positions,
            label: label.into(),
        })
    }

    /// Uniform linear array with `num_sensors` elements spaced `spacing`
    /// half-wavelengths apart.
    pub fn ula(num_sensors: usize, spacing: f64) -> Result<Self> {
        if num_sensors < 2 {
            return Err(Error::TooFewSensors(num_sensors));
        }
        if !(spacing > 0.0) || !spacing.is_finite() {
            return Err(Error::InvalidSpacing(spacing));
        }
        let positions = (0..num_sensors).map(|m| m as f64 * spacing).collect();
        Ok(Self {
            positions,
            label: "ula".to_string(),
        })
    }

    /// Coprime pair array: the union of an n-element subarray at spacing m
    /// and a 2m-element subarray at spacing n, sharing the origin sensor.
    ///
    /// For coprime m < n this yields 2m + n - 1 distinct sensors.
    pub fn coprime(m: usize, n: usize) -> Result<Self> {
        if m == 0 || n == 0 || m >= n || gcd(m, n) != 1 {
            return Err(Error::NotCoprime { m, n });
        }
        let mut positions: Vec<usize> = (0..n).map(|i| i * m).collect();
        positions.extend((0..2 * m).map(|i| i * n));
        positions.sort_unstable();
        positions.dedup();
        let positions: Vec<f64> = positions.into_iter().map(|p| p as f64).collect();
        Ok(Self {
            positions,
            label: format!("coprime({m},{n})"),
        })
    }

    pub fn positions(&self) -> &[f64] {
        &self.positions
    }

    /// Number of sensors M.
    pub fn num_sensors(&self) -> usize {
        self.positions.len()
    }

    pub fn label(&self) -> &str {
        &self.label
    }

    /// Steering vector a(theta) with unit-modulus entries
    /// `exp(-j pi d_m sin(theta))`.
    pub fn steering_vector(&self, theta: f64) -> Result<DVector<Complex64>> {
        check_angle(theta)?;
        let s = theta.sin();
        Ok(DVector::from_iterator(
            self.num_sensors(),
            self.positions
                .iter()
                .map(|&d| Complex64::from_polar(1.0, -std::f64::consts::PI * d * s)),
        ))
    }

    /// Angular derivative of the steering vector,
    /// `-j pi d_m cos(theta) * exp(-j pi d_m sin(theta))`.
    pub fn steering_derivative(&self, theta: f64) -> Result<DVector<Complex64>> {
        check_angle(theta)?;
        let (s, c) = theta.sin_cos();
        Ok(DVector::from_iterator(
            self.num_sensors(),
            self.positions.iter().map(|&d| {
                let phase = Complex64::from_polar(1.0, -std::f64::consts::PI * d * s);
                Complex64::new(0.0, -std::f64::consts::PI * d * c) * phase
            }),
        ))
    }

    /// M x K steering matrix whose k-th column is `a(thetas[k])`.
    ///
    /// Rejects duplicated angles: two sources from the same direction make
    /// the model unidentifiable.
    pub fn steering_matrix(&self, thetas: &[f64]) -> Result<DMatrix<Complex64>> {
        for (i, &a) in thetas.iter().enumerate() {
            for &b in &thetas[i + 1..] {
                if (a - b).abs() < DUPLICATE_ANGLE_TOL {
                    return Err(Error::DuplicateAngles);
                }
            }
        }
        let m = self.num_sensors();
        let mut out = DMatrix::zeros(m, thetas.len());
        for (k, &theta) in thetas.iter().enumerate() {
            out.set_column(k, &self.steering_vector(theta)?);
        }
        Ok(out)
    }
}

fn check_angle(theta: f64) -> Result<()> {
    if !theta.is_finite() || theta.abs() >= std::f64::consts::FRAC_PI_2 {
        return Err(Error::AngleOutOfRange(theta));
    }
    Ok(())
}

fn gcd(mut a: usize, mut b: usize) -> usize {
    while b != 0 {
        (a, b) = (b, a % b);
    }
    a
}
