//! Weighted least squares with iterative bad-data detection and removal.
//!
//! Each iteration fits the currently active meters, runs the J-test on the
//! weighted residual energy, and if it fires removes the meter with the
//! largest normalized residual. DC and AC models share the loop through
//! [`EstimationModel`].

pub mod chi2;

use std::fmt::Write as _;

use nalgebra::{DMatrix, DVector};

use crate::dcmodel::LinearModel;
use crate::error::{Error, Result};
use crate::linalg::{spd_factor, SparseRows};

/// `W_ii` below this marks meter `i` as a single-element critical set.
pub const CRITICAL_TOL: f64 = 1e-10;
/// Normalized residuals within this relative distance of the maximum tie.
pub const TIE_RTOL: f64 = 1e-9;

/// Result of one weighted least-squares fit on a subset of meters.
#[derive(Debug, Clone)]
pub struct Fit {
    /// Estimated parameters (DC: angles; AC: angles then magnitudes).
    pub estimate: DVector<f64>,
    /// Residuals on the active rows, in the order given.
    pub residual: DVector<f64>,
    /// Measurement Jacobian rows for the active meters at the estimate.
    pub jacobian: SparseRows,
}

/// A measurement model the iterative estimator can run on.
pub trait EstimationModel: Sync {
    /// Total number of measurement rows.
    fn meter_count(&self) -> usize;
    /// Number of estimated parameters.
    fn param_dim(&self) -> usize;
    /// Leading parameters that are bus angles.
    fn angle_dim(&self) -> usize;
    /// Diagonal of the noise covariance.
    fn variances(&self) -> DVector<f64>;
    /// Weighted least-squares fit on rows `active` with weights `weights[k]`
    /// for row `active[k]`. `warm` is a starting point for iterative models.
    fn fit(&self, z: &DVector<f64>, active: &[usize], weights: &[f64], warm: Option<&DVector<f64>>) -> Result<Fit>;
}

/// Linear WLS on sparse rows: returns `(x̂, z − Hx̂)`.
pub fn wls_sparse(h: &SparseRows, weights: &[f64], z: &DVector<f64>) -> Result<(DVector<f64>, DVector<f64>)> {
    let chol = spd_factor(h.weighted_gram(weights))?;
    let x = chol.solve(&h.weighted_transpose_mul(weights, z));
    let r = z - h.mul_vec(&x);
    Ok((x, r))
}

/// `x̂ = (HᵀΣ⁻¹H)⁻¹HᵀΣ⁻¹z` and residual `r = z − Hx̂ = Wz`.
pub fn wls_linear(h: &DMatrix<f64>, variances: &DVector<f64>, z: &DVector<f64>) -> Result<(DVector<f64>, DVector<f64>)> {
    if h.nrows() != z.len() || variances.len() != z.len() {
        return Err(Error::InvalidInput("dimension mismatch in wls_linear".into()));
    }
    let w: Vec<f64> = variances.iter().map(|v| 1.0 / v).collect();
    wls_sparse(&SparseRows::from_dense(h), &w, z)
}

impl EstimationModel for LinearModel {
    fn meter_count(&self) -> usize {
        LinearModel::meter_count(self)
    }

    fn param_dim(&self) -> usize {
        self.state_dim()
    }

    fn angle_dim(&self) -> usize {
        self.state_dim()
    }

    fn variances(&self) -> DVector<f64> {
        self.noise.variances()
    }

    fn fit(&self, z: &DVector<f64>, active: &[usize], weights: &[f64], _warm: Option<&DVector<f64>>) -> Result<Fit> {
        let jacobian = self.sparse().select(active);
        let za = DVector::from_iterator(active.len(), active.iter().map(|&i| z[i]));
        let (estimate, residual) = wls_sparse(&jacobian, weights, &za)?;
        Ok(Fit { estimate, residual, jacobian })
    }
}

/// Outcome of the J(x̂)-test.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct JTest {
    pub statistic: f64,
    pub threshold: f64,
    pub dof: usize,
    pub bad: bool,
}

/// `J = rᵀΣ⁻¹r` against `τ = χ²_{1−α}(m − n)`; with no redundancy the data
/// are always declared good.
pub fn jtest(r: &DVector<f64>, variances: &DVector<f64>, n: usize, alpha: f64) -> JTest {
    let statistic: f64 = r.iter().zip(variances.iter()).map(|(ri, v)| ri * ri / v).sum();
    let dof = r.len().saturating_sub(n);
    let threshold = detection_threshold(dof, alpha);
    JTest { statistic, threshold, dof, bad: dof > 0 && statistic > threshold }
}

/// `χ²_{1−α}(dof)`, infinite when `dof = 0`.
pub fn detection_threshold(dof: usize, alpha: f64) -> f64 {
    if dof == 0 {
        f64::INFINITY
    } else {
        chi2::quantile(1.0 - alpha, dof)
    }
}

/// Diagonal of `W = I − H G⁻¹HᵀΣ⁻¹` computed row by row from sparse `H`.
pub fn sensitivity_diagonal(h: &SparseRows, weights: &[f64]) -> Result<Vec<f64>> {
    let chol = spd_factor(h.weighted_gram(weights))?;
    let ginv = chol.inverse();
    Ok(h.row_quadratic_forms(&ginv)
        .into_iter()
        .zip(weights)
        .map(|(q, w)| 1.0 - w * q)
        .collect())
}

/// Meters whose residual is structurally zero.
pub fn critical_flags(w_diag: &[f64]) -> Vec<bool> {
    w_diag.iter().map(|&w| w < CRITICAL_TOL).collect()
}

/// `r̃_i = r_i / √((WΣ)_ii)`, and `0` for meters flagged critical.
pub fn normalized_residuals(r: &DVector<f64>, wsigma_diag: &[f64], critical: &[bool]) -> Result<DVector<f64>> {
    let mut out = DVector::zeros(r.len());
    for i in 0..r.len() {
        if critical[i] {
            continue;
        }
        let d = wsigma_diag[i];
        if !(d > 0.0) || !d.is_finite() {
            return Err(Error::Numerical(format!(
                "residual variance {d:e} at row {i} is not positive but the meter is not critical"
            )));
        }
        out[i] = r[i] / d.sqrt();
    }
    Ok(out)
}

/// Rows attaining `max |r̃_i|` (within [`TIE_RTOL`]), ascending. `None` when
/// every entry is zero.
pub fn identify_worst(rn: &DVector<f64>) -> Option<Vec<usize>> {
    let max = rn.amax();
    if !(max > 0.0) {
        return None;
    }
    let cut = max * (1.0 - TIE_RTOL);
    Some((0..rn.len()).filter(|&i| rn[i].abs() >= cut).collect())
}

/// Dense residual operators for a linear model on a fixed meter set.
#[derive(Debug, Clone)]
pub struct ResidualOps {
    /// `I − H(HᵀΣ⁻¹H)⁻¹HᵀΣ⁻¹`
    pub w: DMatrix<f64>,
    /// Diagonal of `Ω`.
    pub omega: DVector<f64>,
    pub critical: Vec<bool>,
    pub tau: f64,
    pub dof: usize,
}

impl ResidualOps {
    pub fn new(h: &DMatrix<f64>, variances: &DVector<f64>, alpha: f64) -> Result<Self> {
        let (m, n) = h.shape();
        let inv_var = DVector::from_iterator(m, variances.iter().map(|v| 1.0 / v));
        let mut hw = h.transpose();
        for (j, mut col) in hw.column_iter_mut().enumerate() {
            col *= inv_var[j];
        }
        let ginv = spd_factor(&hw * h)?.inverse();
        let w = DMatrix::identity(m, m) - h * ginv * hw;
        let critical: Vec<bool> = (0..m).map(|i| w[(i, i)] < CRITICAL_TOL).collect();
        let omega = DVector::from_fn(m, |i, _| {
            if critical[i] {
                0.0
            } else {
                1.0 / (w[(i, i)] * variances[i]).sqrt()
            }
        });
        let dof = m.saturating_sub(n);
        Ok(ResidualOps { w, omega, critical, tau: detection_threshold(dof, alpha), dof })
    }

    /// `ΩW`.
    pub fn omega_w(&self) -> DMatrix<f64> {
        let mut out = self.w.clone();
        for (i, mut row) in out.row_iter_mut().enumerate() {
            row *= self.omega[i];
        }
        out
    }
}

/// One pass of the estimate / detect / identify loop.
#[derive(Debug, Clone)]
pub struct IterationRecord {
    pub estimate: DVector<f64>,
    /// Residuals over all rows; removed rows hold zero.
    pub residual: DVector<f64>,
    /// Normalized residuals over all rows; removed rows hold zero.
    pub normalized_residual: DVector<f64>,
    pub j_statistic: f64,
    pub threshold: f64,
    pub dof: usize,
    /// Row removed at the end of this iteration.
    pub removed_row: Option<usize>,
}

/// Full record of an iterative estimation run.
#[derive(Debug, Clone, Default)]
pub struct EstimationTrace {
    pub iterations: Vec<IterationRecord>,
    pub final_estimate: DVector<f64>,
    /// Removed rows, in removal order.
    pub removal_sequence: Vec<usize>,
}

impl EstimationTrace {
    /// Number of estimation passes `N`.
    pub fn n(&self) -> usize {
        self.iterations.len()
    }

    /// Whether the first J-test fired.
    pub fn detected(&self) -> bool {
        self.iterations.first().is_some_and(|it| it.j_statistic > it.threshold)
    }

    /// One line per iteration: `k J tau removed |x|`.
    pub fn to_text(&self, label: impl Fn(usize) -> String) -> String {
        let mut out = String::from("# k J tau dof removed estimate_norm\n");
        for (k, it) in self.iterations.iter().enumerate() {
            let removed = it.removed_row.map_or_else(|| "-".to_string(), &label);
            writeln!(
                out,
                "{} {:.6e} {:.6e} {} {} {:.6e}",
                k + 1,
                it.j_statistic,
                it.threshold,
                it.dof,
                removed,
                it.estimate.norm()
            )
            .expect("write to string");
        }
        out
    }
}

/// Runs the iterative loop with false-alarm rate `alpha`. Ties in
/// identification go to the lowest row index.
pub fn iterative_estimation<M: EstimationModel + ?Sized>(model: &M, z: &DVector<f64>, alpha: f64) -> Result<EstimationTrace> {
    if !(alpha > 0.0 && alpha < 1.0) {
        return Err(Error::InvalidInput(format!("alpha must lie in (0, 1), got {alpha}")));
    }
    let m = model.meter_count();
    if z.len() != m {
        return Err(Error::InvalidInput(format!("measurement vector has {} rows, model has {m}", z.len())));
    }
    let variances = model.variances();
    let n = model.param_dim();
    let mut active: Vec<usize> = (0..m).collect();
    let mut trace = EstimationTrace::default();
    let mut warm: Option<DVector<f64>> = None;

    loop {
        let weights: Vec<f64> = active.iter().map(|&i| 1.0 / variances[i]).collect();
        let fit = match model.fit(z, &active, &weights, warm.as_ref()) {
            Ok(fit) => fit,
            Err(Error::Unobservable(_)) if !trace.removal_sequence.is_empty() => {
                let removed_row = *trace.removal_sequence.last().expect("nonempty");
                return Err(Error::EstimationInfeasible { removed_row, trace: Box::new(trace) });
            }
            Err(e) => return Err(e),
        };
        let var_a = DVector::from_iterator(active.len(), active.iter().map(|&i| variances[i]));
        let test = jtest(&fit.residual, &var_a, n, alpha);

        let mut residual = DVector::zeros(m);
        for (k, &i) in active.iter().enumerate() {
            residual[i] = fit.residual[k];
        }
        let mut record = IterationRecord {
            estimate: fit.estimate.clone(),
            residual,
            normalized_residual: DVector::zeros(m),
            j_statistic: test.statistic,
            threshold: test.threshold,
            dof: test.dof,
            removed_row: None,
        };

        if !test.bad {
            trace.iterations.push(record);
            trace.final_estimate = fit.estimate;
            return Ok(trace);
        }

        let w_diag = sensitivity_diagonal(&fit.jacobian, &weights)?;
        let critical = critical_flags(&w_diag);
        let wsig: Vec<f64> = w_diag.iter().zip(var_a.iter()).map(|(w, v)| w * v).collect();
        let rn = normalized_residuals(&fit.residual, &wsig, &critical)?;
        for (k, &i) in active.iter().enumerate() {
            record.normalized_residual[i] = rn[k];
        }
        let Some(ties) = identify_worst(&rn) else {
            trace.iterations.push(record);
            trace.final_estimate = fit.estimate;
            return Err(Error::UnidentifiableBadData { trace: Box::new(trace) });
        };
        let row = active[ties[0]];
        record.removed_row = Some(row);
        trace.iterations.push(record);
        trace.removal_sequence.push(row);
        trace.final_estimate = fit.estimate.clone();
        active.remove(ties[0]);
        warm = Some(fit.estimate);
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dcmodel::{noise_model, simulate_dc_with, MeasurementVector, NoiseProfile, StateVector};
    use crate::netmodel::{full_meter_layout, load_case};
    use crate::rng::stream_rng;
    use std::sync::Arc;

    fn model14(snr: f64) -> LinearModel {
        let net = Arc::new(load_case("ieee14").unwrap());
        let layout = full_meter_layout(&net);
        let base = LinearModel::with_unit_noise(net, layout).unwrap();
        let nm = noise_model(54, &NoiseProfile::Uniform, snr, &base.nominal_measurements()).unwrap();
        base.with_noise(nm).unwrap()
    }

    #[test]
    fn consistent_data_is_fitted_exactly() {
        let m = model14(40.0);
        let x = DVector::from_fn(13, |i, _| 0.02 * i as f64 - 0.1);
        let z = &m.h * &x;
        let (xh, r) = wls_linear(&m.h, &m.noise.variances(), &z).unwrap();
        assert!((xh - x).amax() < 1e-12);
        assert!(r.amax() < 1e-12);
    }

    #[test]
    fn normal_equations_hold() {
        let m = model14(30.0);
        let mut rng = stream_rng(1, 0);
        let x = StateVector::zeros(13);
        let z = simulate_dc_with(&m, &x, &MeasurementVector::zeros(54), &mut rng);
        let var = m.noise.variances();
        let (_, r) = wls_linear(&m.h, &var, &z).unwrap();
        let g = m.h.transpose() * r.component_div(&var);
        assert!(g.amax() < 1e-9 * z.amax() / var.min());
    }

    #[test]
    fn jtest_zero_residual_and_no_redundancy() {
        let var = DVector::from_element(5, 1.0);
        assert!(!jtest(&DVector::zeros(5), &var, 2, 0.04).bad);
        let big = DVector::from_element(5, 1e6);
        assert!(!jtest(&big, &var, 5, 0.04).bad);
        assert!(jtest(&big, &var, 4, 0.04).bad);
    }

    #[test]
    fn identify_worst_cases() {
        assert_eq!(identify_worst(&DVector::from_vec(vec![0.1, -3.0, 2.0])), Some(vec![1]));
        assert_eq!(identify_worst(&DVector::from_vec(vec![2.0, -2.0])), Some(vec![0, 1]));
        assert_eq!(identify_worst(&DVector::from_vec(vec![-2.0, 2.0])), Some(vec![0, 1]));
        assert_eq!(identify_worst(&DVector::zeros(3)), None);
    }

    #[test]
    fn sparse_sensitivity_diagonal_matches_dense() {
        let m = model14(30.0);
        let var = m.noise.variances();
        let ops = ResidualOps::new(&m.h, &var, 0.04).unwrap();
        let weights: Vec<f64> = var.iter().map(|v| 1.0 / v).collect();
        let d = sensitivity_diagonal(m.sparse(), &weights).unwrap();
        for (i, di) in d.iter().enumerate() {
            assert!((di - ops.w[(i, i)]).abs() < 1e-12);
        }
        assert!((&ops.w * &ops.w - &ops.w).amax() < 1e-9);
        assert!((&ops.w * &m.h).amax() < 1e-9 * m.h.amax());
    }

    #[test]
    fn single_bus_leaf_meter_becomes_critical_after_removal() {
        // Bus 8 hangs off bus 7 only. Without the injections at 7 and 8 and
        // the flow 7-8, the flow 8-7 is the only meter that sees bus 8.
        let m = model14(30.0);
        let net = &m.net;
        let b7 = net.bus_index(7).unwrap();
        let b8 = net.bus_index(8).unwrap();
        let drop = m
            .rows_of(&[
                crate::netmodel::MeterId::Injection(b8),
                crate::netmodel::MeterId::Injection(b7),
                crate::netmodel::MeterId::LineFlow { from: b7, to: b8 },
            ])
            .unwrap();
        let keep = crate::linalg::complement(54, &drop);
        let h = crate::linalg::select_rows(&m.h, &keep);
        let var = DVector::from_iterator(keep.len(), keep.iter().map(|&i| m.noise.variances()[i]));
        let ops = ResidualOps::new(&h, &var, 0.04).unwrap();
        let row = keep
            .iter()
            .position(|&i| i == m.layout.index_of(&crate::netmodel::MeterId::LineFlow { from: b8, to: b7 }).unwrap())
            .unwrap();
        assert!(ops.critical[row]);
        assert_eq!(ops.omega[row], 0.0);
    }

    #[test]
    fn gross_error_is_removed_first() {
        let m = model14(40.0);
        let mut rng = stream_rng(9, 0);
        let x = StateVector(DVector::from_vec(m.net.operating_angles()));
        let row = 20;
        let mut a = MeasurementVector::zeros(54);
        a[row] = 50.0 * m.noise.std(row);
        let z = simulate_dc_with(&m, &x, &a, &mut rng);
        let trace = iterative_estimation(&m, &z, 0.04).unwrap();
        assert_eq!(trace.removal_sequence.first(), Some(&row));
        let clean = &z.0 - &a.0;
        let good = iterative_estimation(&m, &clean, 0.04).unwrap();
        assert!((&trace.final_estimate - &good.final_estimate).amax() < 1e-2);
    }

    #[test]
    fn trace_text_has_one_line_per_iteration() {
        let m = model14(40.0);
        let mut a = MeasurementVector::zeros(54);
        a[3] = 1.0;
        let z = &m.h * DVector::from_element(13, 0.01) + &a.0;
        let trace = iterative_estimation(&m, &z, 0.04).unwrap();
        let text = trace.to_text(|r| m.net.meter_label(&m.layout.meter(r)));
        assert_eq!(text.lines().count(), trace.n() + 1);
        assert_eq!(trace.removal_sequence.len(), trace.n() - 1);
    }

    #[test]
    fn alpha_out_of_range_rejected() {
        let m = model14(40.0);
        let z = DVector::zeros(54);
        assert!(matches!(iterative_estimation(&m, &z, 0.0), Err(Error::InvalidInput(_))));
        assert!(matches!(iterative_estimation(&m, &z, 1.0), Err(Error::InvalidInput(_))));
    }
}
