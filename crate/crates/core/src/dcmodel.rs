//! Linearized (DC) measurement model `z = Hx + e`, `e ~ N(0, σ²Σ̄)`.

use std::ops::{Deref, DerefMut};
use std::sync::Arc;

use nalgebra::{DMatrix, DVector};
use rand::Rng;
use rand_distr::StandardNormal;

use crate::error::{Error, Result};
use crate::linalg::{numerical_rank, SparseRows};
use crate::netmodel::{GridNetwork, MeterId, MeterLayout};
use crate::rng::stream_rng;

macro_rules! vector_newtype {
    ($(#[$doc:meta])* $name:ident) => {
        $(#[$doc])*
        #[derive(Debug, Clone, PartialEq)]
        pub struct $name(pub DVector<f64>);

        impl $name {
            pub fn zeros(len: usize) -> Self {
                $name(DVector::zeros(len))
            }

            pub fn from_vec(v: Vec<f64>) -> Self {
                $name(DVector::from_vec(v))
            }

            pub fn into_inner(self) -> DVector<f64> {
                self.0
            }
        }

        impl Deref for $name {
            type Target = DVector<f64>;
            fn deref(&self) -> &DVector<f64> {
                &self.0
            }
        }

        impl DerefMut for $name {
            fn deref_mut(&mut self) -> &mut DVector<f64> {
                &mut self.0
            }
        }

        impl From<DVector<f64>> for $name {
            fn from(v: DVector<f64>) -> Self {
                $name(v)
            }
        }
    };
}

vector_newtype!(
    /// Voltage phase angles (radians) at every bus except the reference.
    StateVector
);
vector_newtype!(
    /// One value per layout row: measurements, noise, or an attack vector.
    MeasurementVector
);

/// Diagonal noise covariance split as `Σ = σ² Σ̄` with `trace(Σ̄) = 1`.
#[derive(Debug, Clone, PartialEq)]
pub struct NoiseModel {
    pub sigma_bar: DVector<f64>,
    pub sigma2: f64,
}

impl NoiseModel {
    /// Builds the split from per-meter standard deviations.
    pub fn from_std(stds: &[f64]) -> Result<Self> {
        if stds.is_empty() || stds.iter().any(|&s| !(s > 0.0) || !s.is_finite()) {
            return Err(Error::InvalidInput("noise standard deviations must be positive".into()));
        }
        let var: Vec<f64> = stds.iter().map(|s| s * s).collect();
        let total: f64 = var.iter().sum();
        Ok(NoiseModel {
            sigma_bar: DVector::from_iterator(var.len(), var.iter().map(|v| v / total)),
            sigma2: total,
        })
    }

    /// Same standard deviation on every one of `m` meters.
    pub fn uniform(m: usize, std: f64) -> Result<Self> {
        Self::from_std(&vec![std; m])
    }

    pub fn len(&self) -> usize {
        self.sigma_bar.len()
    }

    pub fn is_empty(&self) -> bool {
        self.sigma_bar.is_empty()
    }

    /// Diagonal of `Σ`.
    pub fn variances(&self) -> DVector<f64> {
        &self.sigma_bar * self.sigma2
    }

    pub fn std(&self, row: usize) -> f64 {
        (self.sigma2 * self.sigma_bar[row]).sqrt()
    }

    /// Same shape, different total scale.
    pub fn with_sigma2(&self, sigma2: f64) -> Self {
        NoiseModel { sigma_bar: self.sigma_bar.clone(), sigma2 }
    }

    /// Draws `e ~ N(0, Σ)`.
    pub fn sample<R: Rng + ?Sized>(&self, rng: &mut R) -> DVector<f64> {
        DVector::from_iterator(
            self.len(),
            (0..self.len()).map(|i| {
                let g: f64 = rng.sample(StandardNormal);
                g * self.std(i)
            }),
        )
    }
}

/// How noise variance is spread across meters.
#[derive(Debug, Clone, PartialEq, Default)]
pub enum NoiseProfile {
    #[default]
    Uniform,
    /// Relative variances, one per meter; normalized to unit mean.
    Weights(Vec<f64>),
}

/// Noise-to-signal amplitude ratio for an SNR in decibels.
pub fn snr_to_ratio(snr_db: f64) -> f64 {
    10f64.powf(-snr_db / 20.0)
}

/// Noise model for a meter SNR: per-meter std `ρ · A`, with
/// `ρ = 10^(−snr/20)` and `A` the RMS of the noiseless nominal measurements.
pub fn noise_model(m: usize, profile: &NoiseProfile, snr_db: f64, nominal_z: &DVector<f64>) -> Result<NoiseModel> {
    if !snr_db.is_finite() {
        return Err(Error::InvalidInput("SNR must be finite".into()));
    }
    if nominal_z.is_empty() {
        return Err(Error::InvalidInput("nominal measurement vector is empty".into()));
    }
    let rms = (nominal_z.norm_squared() / nominal_z.len() as f64).sqrt();
    if !(rms > 0.0) {
        return Err(Error::InvalidInput("nominal measurement signal is zero".into()));
    }
    let base = snr_to_ratio(snr_db) * rms;
    let stds: Vec<f64> = match profile {
        NoiseProfile::Uniform => vec![base; m],
        NoiseProfile::Weights(w) => {
            if w.len() != m {
                return Err(Error::InvalidInput(format!(
                    "noise weight count {} does not match meter count {m}",
                    w.len()
                )));
            }
            let mean = w.iter().sum::<f64>() / m as f64;
            if !(mean > 0.0) {
                return Err(Error::InvalidInput("noise weights must be positive".into()));
            }
            w.iter().map(|wi| base * (wi / mean).sqrt()).collect()
        }
    };
    NoiseModel::from_std(&stds)
}

/// DC measurement matrix for `layout`, reference column removed.
///
/// Flow row `i→j` is `B_ij (e_i − e_j)`; an injection row is the sum of the
/// outgoing flow rows at that bus.
pub fn build_h(net: &GridNetwork, layout: &MeterLayout) -> Result<DMatrix<f64>> {
    let n = net.state_dim();
    let mut h = DMatrix::zeros(layout.len(), n);
    let add_flow = |h: &mut DMatrix<f64>, row: usize, i: usize, j: usize| {
        let line = net.line_between(i, j).expect("validated meter");
        let b = net.lines[line].susceptance;
        if let Some(c) = net.angle_column(i) {
            h[(row, c)] += b;
        }
        if let Some(c) = net.angle_column(j) {
            h[(row, c)] -= b;
        }
    };
    for (row, meter) in layout.meters().iter().enumerate() {
        net.validate_meter(meter)?;
        match *meter {
            MeterId::LineFlow { from, to } => add_flow(&mut h, row, from, to),
            MeterId::Injection(i) => {
                for &(j, _) in net.neighbors(i) {
                    add_flow(&mut h, row, i, j);
                }
            }
        }
    }
    let rank = numerical_rank(&h);
    if rank < n {
        return Err(Error::Unobservable(format!("rank(H) = {rank} < {n}")));
    }
    Ok(h)
}

/// DC model: measurement matrix, meter layout and noise covariance.
#[derive(Debug, Clone)]
pub struct LinearModel {
    pub net: Arc<GridNetwork>,
    pub layout: MeterLayout,
    pub h: DMatrix<f64>,
    pub noise: NoiseModel,
    sparse: SparseRows,
}

impl LinearModel {
    pub fn new(net: Arc<GridNetwork>, layout: MeterLayout, noise: NoiseModel) -> Result<Self> {
        if noise.len() != layout.len() {
            return Err(Error::InvalidInput(format!(
                "noise model has {} rows, layout has {}",
                noise.len(),
                layout.len()
            )));
        }
        let h = build_h(&net, &layout)?;
        let sparse = SparseRows::from_dense(&h);
        Ok(LinearModel { net, layout, h, noise, sparse })
    }

    /// Model with uniform unit-trace shape and `σ² = 1`.
    pub fn with_unit_noise(net: Arc<GridNetwork>, layout: MeterLayout) -> Result<Self> {
        let m = layout.len();
        let noise = NoiseModel::uniform(m, (1.0 / m as f64).sqrt())?;
        Self::new(net, layout, noise)
    }

    pub fn with_noise(&self, noise: NoiseModel) -> Result<Self> {
        if noise.len() != self.layout.len() {
            return Err(Error::InvalidInput("noise model length mismatch".into()));
        }
        Ok(LinearModel { noise, ..self.clone() })
    }

    pub fn state_dim(&self) -> usize {
        self.h.ncols()
    }

    pub fn meter_count(&self) -> usize {
        self.h.nrows()
    }

    pub fn sparse(&self) -> &SparseRows {
        &self.sparse
    }

    /// Noiseless measurements `Hx`.
    pub fn measure(&self, x: &DVector<f64>) -> MeasurementVector {
        MeasurementVector(&self.h * x)
    }

    /// `Hx` at the case operating point.
    pub fn nominal_measurements(&self) -> MeasurementVector {
        self.measure(&DVector::from_vec(self.net.operating_angles()))
    }

    /// Rows of the listed meters.
    pub fn rows_of(&self, meters: &[MeterId]) -> Result<Vec<usize>> {
        self.layout.rows_of(meters)
    }
}

/// `Hx + e + a` with `e` drawn from stream 0 of `seed`.
pub fn simulate_dc(model: &LinearModel, x: &StateVector, a: &MeasurementVector, seed: u64) -> MeasurementVector {
    let mut rng = stream_rng(seed, 0);
    simulate_dc_with(model, x, a, &mut rng)
}

pub fn simulate_dc_with<R: Rng + ?Sized>(
    model: &LinearModel,
    x: &StateVector,
    a: &MeasurementVector,
    rng: &mut R,
) -> MeasurementVector {
    let e = model.noise.sample(rng);
    MeasurementVector(&model.h * &x.0 + e + &a.0)
}
