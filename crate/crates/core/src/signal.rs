//! Hybrid coherent/incoherent source ensembles, the exact observation
//! covariance and its angular derivatives, and Gaussian snapshot generation.
//!
//! The first `L` sources are scaled copies `beta_l * s_1(t)` of a common
//! reference signal (multipath), the remaining `K - L` sources are mutually
//! independent. `L = 1` is the fully incoherent case. Free powers are
//! `[sigma_1^2, sigma_{L+1}^2, ..., sigma_K^2]`; the powers of coherent
//! sources 2..L are determined by `|beta_l|^2 sigma_1^2`.

use nalgebra::{DMatrix, DVector};
use num_complex::Complex64;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

use crate::array::ArrayGeometry;
use crate::error::{Error, Result};

/// Source powers, coherence structure, and noise power of a K-source scene.
#[derive(Debug, Clone, PartialEq)]
pub struct SourceEnsemble {
    num_sources: usize,
    beta: Vec<Complex64>,
    powers: Vec<f64>,
    noise_power: f64,
}

impl SourceEnsemble {
    /// Builds an ensemble with `beta.len()` coherent sources sharing the
    /// reference signal and `powers = [sigma_1^2, sigma_{L+1}^2, ...]`
    /// (length `K - L + 1`).
    pub fn new(
        num_sources: usize,
        beta: Vec<Complex64>,
        powers: Vec<f64>,
        noise_power: f64,
    ) -> Result<Self> {
        if num_sources == 0 {
            return Err(Error::InvalidEnsemble("need at least one source"));
        }
        let coherent = beta.len();
        if coherent == 0 || coherent > num_sources {
            return Err(Error::InvalidEnsemble(
                "coherent count must lie in 1..=num_sources",
            ));
        }
        if beta[0] != Complex64::new(1.0, 0.0) {
            return Err(Error::InvalidEnsemble("beta[0] must equal 1 exactly"));
        }
        if powers.len() != num_sources - coherent + 1 {
            return Err(Error::InvalidEnsemble(
                "powers must hold sigma_1^2 plus one entry per incoherent source",
            ));
        }
        if powers.iter().any(|&p| !(p > 0.0) || !p.is_finite()) {
            return Err(Error::InvalidEnsemble("all source powers must be positive"));
        }
        if !(noise_power > 0.0) || !noise_power.is_finite() {
            return Err(Error::InvalidEnsemble("noise power must be positive"));
        }
        Ok(Self {
            num_sources,
            beta,
            powers,
            noise_power,
        })
    }

    /// Fully incoherent ensemble (`L = 1`) with one power per source.
    pub fn incoherent(powers: Vec<f64>, noise_power: f64) -> Result<Self> {
        let k = powers.len();
        Self::new(k, vec![Complex64::new(1.0, 0.0)], powers, noise_power)
    }

    pub fn num_sources(&self) -> usize {
        self.num_sources
    }

    /// Number of mutually coherent sources L (1 means fully incoherent).
    pub fn coherent_count(&self) -> usize {
        self.beta.len()
    }

    pub fn beta(&self) -> &[Complex64] {
        &self.beta
    }

    /// `||beta||_2^2`, the coherent power gain.
    pub fn beta_norm_sq(&self) -> f64 {
        self.beta.iter().map(|b| b.norm_sqr()).sum()
    }

    /// Free powers `[sigma_1^2, sigma_{L+1}^2, ..., sigma_K^2]`.
    pub fn powers(&self) -> &[f64] {
        &self.powers
    }

    pub fn noise_power(&self) -> f64 {
        self.noise_power
    }

    /// Reference-source SNR `eta_1 = sigma_1^2 / sigma_n^2`.
    pub fn reference_snr(&self) -> f64 {
        self.powers[0] / self.noise_power
    }

    /// SNRs of the incoherent sources `eta_{L+1}, ..., eta_K`.
    pub fn incoherent_snrs(&self) -> Vec<f64> {
        self.powers[1..]
            .iter()
            .map(|&p| p / self.noise_power)
            .collect()
    }

    /// Same ensemble with a different noise power. SNR sweeps scale the
    /// noise while keeping all source powers and beta fixed.
    pub fn with_noise_power(&self, noise_power: f64) -> Result<Self> {
        Self::new(
            self.num_sources,
            self.beta.clone(),
            self.powers.clone(),
            noise_power,
        )
    }

    /// Same ensemble with the phases of `beta[1..]` replaced; magnitudes are
    /// preserved and `beta[0]` stays 1.
    pub fn with_coherent_phases(&self, phases: &[f64]) -> Result<Self> {
        if phases.len() + 1 != self.beta.len() {
            return Err(Error::InvalidEnsemble(
                "need one phase per coherent source beyond the reference",
            ));
        }
        let mut beta = self.beta.clone();
        for (b, &phi) in beta[1..].iter_mut().zip(phases) {
            *b = Complex64::from_polar(b.norm(), phi);
        }
        Self::new(self.num_sources, beta, self.powers.clone(), self.noise_power)
    }

    /// K x K signal covariance: a rank-one `sigma_1^2 beta beta^H` block for
    /// the coherent sources, diagonal powers for the rest.
    pub fn signal_covariance(&self) -> DMatrix<Complex64> {
        let k = self.num_sources;
        let l = self.coherent_count();
        let mut s = DMatrix::zeros(k, k);
        for i in 0..l {
            for j in 0..l {
                s[(i, j)] = self.beta[i] * self.beta[j].conj() * self.powers[0];
            }
        }
        for (idx, &p) in self.powers[1..].iter().enumerate() {
            let d = l + idx;
            s[(d, d)] = Complex64::new(p, 0.0);
        }
        s
    }
}

/// A complete simulation scene: geometry, ensemble, snapshot count, and the
/// uniform DOA prior with its minimum-separation constraint.
#[derive(Debug, Clone)]
pub struct Scenario {
    pub geometry: ArrayGeometry,
    pub ensemble: SourceEnsemble,
    snapshots: usize,
    prior_min: f64,
    prior_max: f64,
    min_separation: f64,
}

impl Scenario {
    pub fn new(
        geometry: ArrayGeometry,
        ensemble: SourceEnsemble,
        snapshots: usize,
        prior_min: f64,
        prior_max: f64,
        min_separation: f64,
    ) -> Result<Self> {
        if snapshots == 0 {
            return Err(Error::InvalidScenario("need at least one snapshot"));
        }
        if !(prior_min < prior_max) {
            return Err(Error::InvalidScenario("prior interval is empty"));
        }
        if prior_min <= -std::f64::consts::FRAC_PI_2 || prior_max >= std::f64::consts::FRAC_PI_2 {
            return Err(Error::InvalidScenario(
                "prior must lie inside (-pi/2, pi/2)",
            ));
        }
        if min_separation < 0.0 {
            return Err(Error::InvalidScenario("minimum separation must be >= 0"));
        }
        let k = ensemble.num_sources() as f64;
        if (k - 1.0) * min_separation >= prior_max - prior_min {
            return Err(Error::InvalidScenario(
                "minimum separation leaves no room to place all sources",
            ));
        }
        Ok(Self {
            geometry,
            ensemble,
            snapshots,
            prior_min,
            prior_max,
            min_separation,
        })
    }

    pub fn snapshots(&self) -> usize {
        self.snapshots
    }

    pub fn prior_min(&self) -> f64 {
        self.prior_min
    }

    pub fn prior_max(&self) -> f64 {
        self.prior_max
    }

    /// Prior width `zeta = prior_max - prior_min` in radians.
    pub fn prior_width(&self) -> f64 {
        self.prior_max - self.prior_min
    }

    pub fn min_separation(&self) -> f64 {
        self.min_separation
    }

    pub fn with_snapshots(&self, snapshots: usize) -> Result<Self> {
        Self::new(
            self.geometry.clone(),
            self.ensemble.clone(),
            snapshots,
            self.prior_min,
            self.prior_max,
            self.min_separation,
        )
    }

    pub fn with_ensemble(&self, ensemble: SourceEnsemble) -> Result<Self> {
        Self::new(
            self.geometry.clone(),
            ensemble,
            self.snapshots,
            self.prior_min,
            self.prior_max,
            self.min_separation,
        )
    }
}

/// Exact M x M observation covariance `A Sigma A^H + sigma_n^2 I`,
/// symmetrized to suppress rounding drift.
pub fn observation_covariance(
    geometry: &ArrayGeometry,
    ensemble: &SourceEnsemble,
    thetas: &[f64],
) -> Result<DMatrix<Complex64>> {
    if thetas.len() != ensemble.num_sources() {
        return Err(Error::InvalidScenario(
            "need exactly one DOA per source",
        ));
    }
    let a = geometry.steering_matrix(thetas)?;
    let sigma = ensemble.signal_covariance();
    let mut r = &a * sigma * a.adjoint();
    for i in 0..geometry.num_sensors() {
        r[(i, i)] += ensemble.noise_power();
    }
    Ok(hermitize(r))
}

/// Derivative of the observation covariance with respect to the i-th DOA:
/// `da_i (Sigma A^H)_{i,:} + (A Sigma)_{:,i} da_i^H`.
pub fn covariance_derivative(
    geometry: &ArrayGeometry,
    ensemble: &SourceEnsemble,
    thetas: &[f64],
    source: usize,
) -> Result<DMatrix<Complex64>> {
    if thetas.len() != ensemble.num_sources() {
        return Err(Error::InvalidScenario("need exactly one DOA per source"));
    }
    if source >= ensemble.num_sources() {
        return Err(Error::SourceIndexOutOfRange {
            index: source,
            num_sources: ensemble.num_sources(),
        });
    }
    let a = geometry.steering_matrix(thetas)?;
    let sigma = ensemble.signal_covariance();
    let a_sigma = &a * &sigma;
    let da = geometry.steering_derivative(thetas[source])?;
    let col = a_sigma.column(source);
    // da_i row_i(Sigma A^H) = da_i (col_i(A Sigma))^H since Sigma is Hermitian.
    let m = geometry.num_sensors();
    let mut out = DMatrix::zeros(m, m);
    for r in 0..m {
        for c in 0..m {
            out[(r, c)] = da[r] * col[c].conj() + col[r] * da[c].conj();
        }
    }
    Ok(hermitize(out))
}

/// Draws an M x T snapshot matrix `X = A s(t) + n(t)` with circular complex
/// Gaussian signals and noise. Bit-deterministic for a fixed seed.
pub fn generate_snapshots(
    scenario: &Scenario,
    thetas: &[f64],
    seed: u64,
) -> Result<DMatrix<Complex64>> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    generate_snapshots_with_rng(scenario, thetas, &mut rng)
}

/// Snapshot generation on a caller-provided stream; used by the Monte-Carlo
/// harness to keep all per-trial randomness on one seeded stream.
pub fn generate_snapshots_with_rng(
    scenario: &Scenario,
    thetas: &[f64],
    rng: &mut impl Rng,
) -> Result<DMatrix<Complex64>> {
    let ensemble = &scenario.ensemble;
    let a = scenario.geometry.steering_matrix(thetas)?;
    let m = scenario.geometry.num_sensors();
    let k = ensemble.num_sources();
    let l = ensemble.coherent_count();
    let t_count = scenario.snapshots();

    let mut x = DMatrix::<Complex64>::zeros(m, t_count);
    let mut s = DVector::<Complex64>::zeros(k);
    let noise_scale = (ensemble.noise_power() / 2.0).sqrt();
    for t in 0..t_count {
        let s1 = draw_circular(rng, ensemble.powers()[0]);
        for (row, beta) in ensemble.beta().iter().enumerate() {
            s[row] = beta * s1;
        }
        for (idx, &p) in ensemble.powers()[1..].iter().enumerate() {
            s[l + idx] = draw_circular(rng, p);
        }
        let mut col = &a * &s;
        for e in col.iter_mut() {
            let re: f64 = StandardNormal.sample(rng);
            let im: f64 = StandardNormal.sample(rng);
            *e += Complex64::new(re * noise_scale, im * noise_scale);
        }
        x.set_column(t, &col);
    }
    Ok(x)
}

/// Circular complex Gaussian with E{|x|^2} = power: two independent real
/// normals scaled by sqrt(power / 2).
fn draw_circular(rng: &mut impl Rng, power: f64) -> Complex64 {
    let scale = (power / 2.0).sqrt();
    let re: f64 = StandardNormal.sample(rng);
    let im: f64 = StandardNormal.sample(rng);
    Complex64::new(re * scale, im * scale)
}

/// `(R + R^H) / 2`.
pub(crate) fn hermitize(r: DMatrix<Complex64>) -> DMatrix<Complex64> {
    let adj = r.adjoint();
    (r + adj).scale(0.5)
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    fn c(re: f64, im: f64) -> Complex64 {
        Complex64::new(re, im)
    }

    #[test]
    fn incoherent_signal_covariance_is_diagonal() {
        let ens = SourceEnsemble::incoherent(vec![1.0, 2.0], 1.0).unwrap();
        let s = ens.signal_covariance();
        assert_eq!(s[(0, 0)], c(1.0, 0.0));
        assert_eq!(s[(1, 1)], c(2.0, 0.0));
        assert_eq!(s[(0, 1)], c(0.0, 0.0));
    }

    #[test]
    fn coherent_block_expands_beta_outer_product() {
        // K = L = 2, beta = [1, 0.9]: Sigma = [[1, 0.9], [0.9, 0.81]].
        let ens =
            SourceEnsemble::new(2, vec![c(1.0, 0.0), c(0.9, 0.0)], vec![1.0], 1.0).unwrap();
        let s = ens.signal_covariance();
        assert_relative_eq!(s[(0, 0)].re, 1.0);
        assert_relative_eq!(s[(0, 1)].re, 0.9);
        assert_relative_eq!(s[(1, 0)].re, 0.9);
        assert_relative_eq!(s[(1, 1)].re, 0.81);
    }

    #[test]
    fn coherent_block_has_rank_one() {
        let ens = SourceEnsemble::new(
            3,
            vec![c(1.0, 0.0), c(0.9, 0.2), c(-0.3, 0.7)],
            vec![2.0],
            1.0,
        )
        .unwrap();
        let s = ens.signal_covariance();
        let eig = s.symmetric_eigen();
        let mut ev: Vec<f64> = eig.eigenvalues.iter().copied().collect();
        ev.sort_by(|a, b| b.partial_cmp(a).unwrap());
        assert!(ev[0] > 0.0);
        assert!(ev[1].abs() < 1e-12 * ev[0]);
    }

    #[test]
    fn ensemble_validation() {
        assert!(SourceEnsemble::new(2, vec![c(0.9, 0.0)], vec![1.0, 1.0], 1.0).is_err());
        assert!(SourceEnsemble::new(2, vec![], vec![1.0, 1.0], 1.0).is_err());
        assert!(SourceEnsemble::new(2, vec![c(1.0, 0.0)], vec![1.0], 1.0).is_err());
        assert!(SourceEnsemble::incoherent(vec![1.0, -1.0], 1.0).is_err());
        assert!(SourceEnsemble::incoherent(vec![1.0], 0.0).is_err());
    }

    #[test]
    fn observation_covariance_single_source_by_hand() {
        // a = [1, 1] at boresight: a a^H + I = [[2, 1], [1, 2]].
        let g = ArrayGeometry::ula(2, 1.0).unwrap();
        let ens = SourceEnsemble::incoherent(vec![1.0], 1.0).unwrap();
        let r = observation_covariance(&g, &ens, &[0.0]).unwrap();
        assert_relative_eq!(r[(0, 0)].re, 2.0, epsilon = 1e-14);
        assert_relative_eq!(r[(0, 1)].re, 1.0, epsilon = 1e-14);
        assert_relative_eq!(r[(1, 0)].re, 1.0, epsilon = 1e-14);
        assert_relative_eq!(r[(1, 1)].re, 2.0, epsilon = 1e-14);
    }

    #[test]
    fn observation_covariance_trace_and_floor() {
        let g = ArrayGeometry::ula(6, 1.0).unwrap();
        let ens = SourceEnsemble::new(
            3,
            vec![c(1.0, 0.0), c(0.8, 0.3)],
            vec![1.5, 0.7],
            0.4,
        )
        .unwrap();
        let thetas = [-0.4, 0.1, 0.9];
        let r = observation_covariance(&g, &ens, &thetas).unwrap();
        // Unit-modulus steering entries: Tr R = M sigma_n^2 + M Tr Sigma.
        let m = 6.0;
        let tr_sigma = ens.signal_covariance().trace().re;
        let tr: f64 = r.diagonal().iter().map(|e| e.re).sum();
        assert_relative_eq!(tr, m * 0.4 + m * tr_sigma, max_relative = 1e-12);
        // Smallest eigenvalue sits at or above the noise floor.
        let eig = r.symmetric_eigen();
        let min = eig.eigenvalues.iter().cloned().fold(f64::INFINITY, f64::min);
        assert!(min >= 0.4 - 1e-10, "min eigenvalue {min}");
    }

    #[test]
    fn covariance_derivative_matches_finite_difference() {
        let g = ArrayGeometry::ula(5, 1.0).unwrap();
        let ens = SourceEnsemble::new(
            3,
            vec![c(1.0, 0.0), c(0.6, -0.5)],
            vec![1.0, 2.0],
            0.5,
        )
        .unwrap();
        let thetas = [-0.5, 0.2, 0.8];
        let h = 1e-6;
        for i in 0..3 {
            let d = covariance_derivative(&g, &ens, &thetas, i).unwrap();
            let mut hi = thetas;
            hi[i] += h;
            let mut lo = thetas;
            lo[i] -= h;
            let fd = (observation_covariance(&g, &ens, &hi).unwrap()
                - observation_covariance(&g, &ens, &lo).unwrap())
                / c(2.0 * h, 0.0);
            let err = (&d - &fd).norm() / fd.norm();
            assert!(err < 1e-5, "source {i}: rel Frobenius error {err}");
            // Hermitian by construction.
            assert!((&d - d.adjoint()).norm() < 1e-14);
        }
    }

    #[test]
    fn covariance_derivative_vanishes_for_powerless_source() {
        let g = ArrayGeometry::ula(4, 1.0).unwrap();
        let ens = SourceEnsemble::incoherent(vec![1.0, 1e-300], 1.0).unwrap();
        let d = covariance_derivative(&g, &ens, &[0.1, -0.4], 1).unwrap();
        assert!(d.norm() < 1e-290);
    }

    #[test]
    fn covariance_derivative_index_check() {
        let g = ArrayGeometry::ula(4, 1.0).unwrap();
        let ens = SourceEnsemble::incoherent(vec![1.0], 1.0).unwrap();
        assert!(matches!(
            covariance_derivative(&g, &ens, &[0.1], 1),
            Err(Error::SourceIndexOutOfRange { .. })
        ));
    }

    #[test]
    fn snapshots_are_deterministic_for_fixed_seed() {
        let g = ArrayGeometry::ula(4, 1.0).unwrap();
        let ens = SourceEnsemble::incoherent(vec![1.0, 0.5], 1.0).unwrap();
        let sc = Scenario::new(g, ens, 16, -1.0, 1.0, 0.0).unwrap();
        let a = generate_snapshots(&sc, &[-0.3, 0.4], 7).unwrap();
        let b = generate_snapshots(&sc, &[-0.3, 0.4], 7).unwrap();
        assert_eq!(a, b);
        let cth = generate_snapshots(&sc, &[-0.3, 0.4], 8).unwrap();
        assert_ne!(a, cth);
    }

    #[test]
    fn noise_only_limit_recovers_identity_scale() {
        // Source powers ~ 1e-12: the sample covariance is sigma_n^2 I.
        let g = ArrayGeometry::ula(3, 1.0).unwrap();
        let ens = SourceEnsemble::incoherent(vec![1e-12], 2.0).unwrap();
        let sc = Scenario::new(g, ens, 60_000, -1.0, 1.0, 0.0).unwrap();
        let x = generate_snapshots(&sc, &[0.2], 123).unwrap();
        let rhat = crate::music::sample_covariance(&x);
        let mut eye = DMatrix::<Complex64>::identity(3, 3);
        eye *= c(2.0, 0.0);
        let rel = (&rhat - &eye).norm() / eye.norm();
        assert!(rel < 0.01, "rel error {rel}");
    }

    #[test]
    fn scenario_validation() {
        let g = ArrayGeometry::ula(4, 1.0).unwrap();
        let ens = SourceEnsemble::incoherent(vec![1.0, 1.0, 1.0], 1.0).unwrap();
        // ζ = 0.2 rad cannot hold 3 sources spaced 0.15 rad apart.
        assert!(Scenario::new(g.clone(), ens.clone(), 10, -0.1, 0.1, 0.15).is_err());
        assert!(Scenario::new(g.clone(), ens.clone(), 0, -1.0, 1.0, 0.0).is_err());
        assert!(Scenario::new(g, ens, 10, 1.0, -1.0, 0.0).is_err());
    }
}
