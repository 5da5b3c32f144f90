use nalgebra::{DMatrix, DVector};
use rand::seq::index::sample;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::baselines::SupportSet;
use crate::error::{BsblError, Result};

/// Deterministic generator for a seed.
pub fn rng_for(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

/// Derive an independent stream seed from a base seed and a tag (splitmix64).
pub fn derive_seed(seed: u64, tag: u64) -> u64 {
    let mut z = seed
        .wrapping_add(tag.wrapping_mul(0x9E37_79B9_7F4A_7C15))
        .wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Symmetric Toeplitz matrix with entries `r^{|j−k|}`.
pub fn toeplitz_ar(d: usize, r: f64) -> Result<DMatrix<f64>> {
    if !(r.abs() < 1.0) {
        return Err(BsblError::InvalidCoefficient(r));
    }
    if d == 0 {
        return Err(BsblError::InvalidSpec(
            "Toeplitz size must be at least 1".into(),
        ));
    }
    let powers: Vec<f64> = (0..d)
        .scan(1.0, |p, _| {
            let cur = *p;
            *p *= r;
            Some(cur)
        })
        .collect();
    Ok(DMatrix::from_fn(d, d, |j, k| powers[j.abs_diff(k)]))
}

/// Intra-block AR coefficient: fixed, or drawn uniformly per block.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum CorrelationSpec {
    Fixed(f64),
    Uniform { lo: f64, hi: f64 },
}

impl CorrelationSpec {
    fn validate(&self) -> Result<()> {
        let ok = match *self {
            CorrelationSpec::Fixed(r) => r.abs() < 1.0,
            CorrelationSpec::Uniform { lo, hi } => lo.abs() < 1.0 && hi.abs() < 1.0 && lo <= hi,
        };
        if ok {
            Ok(())
        } else {
            Err(BsblError::InvalidSpec(format!(
                "invalid correlation range {self:?}"
            )))
        }
    }

    fn draw(&self, rng: &mut ChaCha8Rng) -> f64 {
        match *self {
            CorrelationSpec::Fixed(r) => r,
            CorrelationSpec::Uniform { lo, hi } if lo == hi => lo,
            CorrelationSpec::Uniform { lo, hi } => rng.random_range(lo..hi),
        }
    }

    /// Representative value for records: the fixed value or the range midpoint.
    pub fn nominal(&self) -> f64 {
        match *self {
            CorrelationSpec::Fixed(r) => r,
            CorrelationSpec::Uniform { lo, hi } => 0.5 * (lo + hi),
        }
    }
}

/// Block-sparse signal with uniform block size and AR(1)-correlated blocks.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SignalSpec {
    pub g: usize,
    pub d: usize,
    pub k_active: usize,
    pub r: CorrelationSpec,
    /// Variance scale of every nonzero block.
    pub amplitude: f64,
}

impl SignalSpec {
    pub fn new(g: usize, d: usize, k_active: usize, r: CorrelationSpec) -> Self {
        Self {
            g,
            d,
            k_active,
            r,
            amplitude: 1.0,
        }
    }

    pub fn n(&self) -> usize {
        self.g * self.d
    }

    pub fn validate(&self) -> Result<()> {
        if self.g == 0 || self.d == 0 {
            return Err(BsblError::InvalidSpec(
                "need at least one block of size ≥ 1".into(),
            ));
        }
        if self.k_active > self.g {
            return Err(BsblError::InvalidSpec(format!(
                "{} active blocks requested out of {}",
                self.k_active, self.g
            )));
        }
        if !(self.amplitude > 0.0) {
            return Err(BsblError::InvalidSpec("amplitude must be positive".into()));
        }
        self.r.validate()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct GeneratedSignal {
    pub x: DVector<f64>,
    pub support: SupportSet,
    /// AR coefficient used for each support block, in support order.
    pub r_values: Vec<f64>,
}

/// Draw `k_active` random blocks from `N(0, amplitude · Toeplitz(r))`.
pub fn gen_block_sparse_signal(spec: &SignalSpec, seed: u64) -> Result<GeneratedSignal> {
    spec.validate()?;
    let mut rng = rng_for(seed);
    let mut blocks = sample(&mut rng, spec.g, spec.k_active).into_vec();
    blocks.sort_unstable();
    let mut x = DVector::zeros(spec.n());
    let mut r_values = Vec::with_capacity(blocks.len());
    let scale = spec.amplitude.sqrt();
    for &b in &blocks {
        let r = spec.r.draw(&mut rng);
        let chol = toeplitz_ar(spec.d, r)?.cholesky().ok_or_else(|| {
            BsblError::InvalidSpec(format!("Toeplitz({r}) not positive definite"))
        })?;
        let z = DVector::from_fn(spec.d, |_, _| rng.sample::<f64, _>(StandardNormal));
        x.rows_mut(b * spec.d, spec.d)
            .copy_from(&(chol.l() * z * scale));
        r_values.push(r);
    }
    Ok(GeneratedSignal {
        x,
        support: SupportSet::new(blocks, spec.g)?,
        r_values,
    })
}

/// I.i.d. standard normal `M × N` matrix.
pub fn gen_gaussian_matrix(m: usize, n: usize, seed: u64) -> DMatrix<f64> {
    let mut rng = rng_for(seed);
    // Fill column by column so the stream order is fixed.
    DMatrix::from_fn(m, n, |_, _| rng.sample::<f64, _>(StandardNormal))
}

/// `M × N` matrix of zeros with exactly `ones_per_column` ones per column
/// at random rows.
pub fn gen_sparse_binary_matrix(
    m: usize,
    n: usize,
    ones_per_column: usize,
    seed: u64,
) -> Result<DMatrix<f64>> {
    if ones_per_column > m {
        return Err(BsblError::InvalidSpec(format!(
            "{ones_per_column} ones per column exceed {m} rows"
        )));
    }
    let mut rng = rng_for(seed);
    let mut phi = DMatrix::zeros(m, n);
    for j in 0..n {
        for i in sample(&mut rng, m, ones_per_column) {
            phi[(i, j)] = 1.0;
        }
    }
    Ok(phi)
}

/// Add white Gaussian noise scaled so that `20·log10(‖y_clean‖/‖n‖)` equals
/// `snr_db` for this realization. An infinite SNR returns `y_clean` unchanged.
pub fn add_noise_at_snr(y_clean: &DVector<f64>, snr_db: f64, seed: u64) -> Result<DVector<f64>> {
    if snr_db == f64::INFINITY {
        return Ok(y_clean.clone());
    }
    if snr_db.is_nan() || snr_db == f64::NEG_INFINITY {
        return Err(BsblError::InvalidSpec(format!("invalid SNR {snr_db}")));
    }
    let signal = y_clean.norm();
    if !(signal > 0.0) {
        return Err(BsblError::InvalidObservation(
            "cannot set an SNR relative to a zero signal".into(),
        ));
    }
    let mut rng = rng_for(seed);
    let mut noise = DVector::from_fn(y_clean.len(), |_, _| rng.sample::<f64, _>(StandardNormal));
    let target = signal / 10f64.powf(snr_db / 20.0);
    let norm = noise.norm();
    noise *= target / norm;
    Ok(y_clean + noise)
}

/// Parameters of a synthetic quasi-periodic, ECG-like recording: a train of
/// narrow Gaussian pulses (one sharp spike and two wider bumps per beat) on
/// a slowly wandering baseline.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EcgSpec {
    pub n: usize,
    /// Mean beat period in samples.
    pub period: f64,
    /// Relative beat-to-beat jitter of the period.
    pub jitter: f64,
    /// Width (standard deviation, samples) of the sharp spike.
    pub spike_width: f64,
    /// Width of the slower bumps before and after the spike.
    pub wave_width: f64,
    /// Amplitude of the low-frequency baseline wander.
    pub baseline: f64,
}

impl Default for EcgSpec {
    fn default() -> Self {
        Self {
            n: 512,
            period: 120.0,
            jitter: 0.08,
            spike_width: 3.0,
            wave_width: 9.0,
            baseline: 0.3,
        }
    }
}

pub fn gen_ecg_like(spec: &EcgSpec, seed: u64) -> Result<DVector<f64>> {
    if spec.n == 0 || !(spec.period > 0.0) || !(spec.spike_width > 0.0) || !(spec.wave_width > 0.0)
    {
        return Err(BsblError::InvalidSpec(format!(
            "invalid ECG-like spec {spec:?}"
        )));
    }
    let mut rng = rng_for(seed);
    let n = spec.n;
    let mut x = DVector::zeros(n);
    let bump = |x: &mut DVector<f64>, center: f64, width: f64, height: f64| {
        for (t, v) in x.iter_mut().enumerate() {
            let u = (t as f64 - center) / width;
            if u.abs() < 8.0 {
                *v += height * (-0.5 * u * u).exp();
            }
        }
    };
    let mut beat = -rng.random_range(0.0..spec.period);
    while beat < n as f64 + spec.period {
        let height = 1.0 + 0.1 * rng.sample::<f64, _>(StandardNormal);
        bump(&mut x, beat, spec.spike_width, height);
        bump(
            &mut x,
            beat - 0.2 * spec.period,
            spec.wave_width,
            0.15 * height,
        );
        bump(
            &mut x,
            beat + 0.3 * spec.period,
            1.5 * spec.wave_width,
            0.3 * height,
        );
        let step = spec.period * (1.0 + spec.jitter * rng.random_range(-1.0..1.0));
        beat += step.max(1.0);
    }
    let phase: f64 = rng.random_range(0.0..std::f64::consts::TAU);
    let cycles: f64 = rng.random_range(0.3..1.0);
    for (t, v) in x.iter_mut().enumerate() {
        *v += spec.baseline * (std::f64::consts::TAU * cycles * t as f64 / n as f64 + phase).sin();
    }
    Ok(x)
}
