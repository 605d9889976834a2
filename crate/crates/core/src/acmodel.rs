//! Nonlinear AC measurement model and Gauss–Newton WLS.
//!
//! The AC layout extends a DC meter layout: the `m` active-power rows in
//! the DC order, then the `m` matching reactive-power rows, then a single
//! voltage-magnitude row at the reference bus. The estimated parameter
//! vector holds the non-reference angles followed by every bus magnitude.

use std::sync::Arc;

use nalgebra::{DMatrix, DVector};

use crate::dcmodel::NoiseModel;
use crate::error::{Error, Result};
use crate::estimator::{EstimationModel, Fit};
use crate::linalg::{spd_factor, SparseRows};
use crate::netmodel::{GridNetwork, MeterId, MeterLayout};

/// Step norm at which Gauss–Newton stops.
pub const GN_TOL: f64 = 1e-8;
pub const GN_MAX_ITER: usize = 50;
/// Consecutive step-norm increases treated as divergence.
pub const GN_DIVERGENCE_RUN: usize = 5;
/// Step norm still accepted when the iteration limit is hit.
const GN_ACCEPT_TOL: f64 = 1e-6;

/// Bus voltages in polar form. `angles[reference] = 0`.
#[derive(Debug, Clone, PartialEq)]
pub struct AcState {
    pub magnitudes: DVector<f64>,
    pub angles: DVector<f64>,
}

impl AcState {
    /// `1∠0` at every bus.
    pub fn flat(net: &GridNetwork) -> Self {
        let nb = net.bus_count();
        AcState { magnitudes: DVector::from_element(nb, 1.0), angles: DVector::zeros(nb) }
    }

    /// Operating point from the case file, angles shifted so the reference is 0.
    pub fn operating(net: &GridNetwork) -> Self {
        let ref_angle = net.buses[net.reference_bus].operating_angle;
        AcState {
            magnitudes: DVector::from_iterator(net.bus_count(), net.buses.iter().map(|b| b.operating_magnitude)),
            angles: DVector::from_iterator(net.bus_count(), net.buses.iter().map(|b| b.operating_angle - ref_angle)),
        }
    }

    /// `[non-reference angles; magnitudes]`.
    pub fn to_params(&self, net: &GridNetwork) -> DVector<f64> {
        let n = net.state_dim();
        let nb = net.bus_count();
        let mut p = DVector::zeros(n + nb);
        for c in 0..n {
            p[c] = self.angles[net.column_bus(c)];
        }
        p.rows_mut(n, nb).copy_from(&self.magnitudes);
        p
    }

    pub fn from_params(net: &GridNetwork, p: &DVector<f64>) -> Self {
        let n = net.state_dim();
        let nb = net.bus_count();
        let mut angles = DVector::zeros(nb);
        for c in 0..n {
            angles[net.column_bus(c)] = p[c];
        }
        AcState { magnitudes: p.rows(n, nb).into_owned(), angles }
    }

    /// Non-reference angles, the DC state.
    pub fn reduced_angles(&self, net: &GridNetwork) -> DVector<f64> {
        DVector::from_iterator(net.state_dim(), (0..net.state_dim()).map(|c| self.angles[net.column_bus(c)]))
    }
}

/// What an extended-layout row measures.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum AcQuantity {
    Active(MeterId),
    Reactive(MeterId),
    VoltageMagnitude(usize),
}

#[derive(Debug, Clone, Copy)]
struct PiLine {
    g: f64,
    b: f64,
    half_shunt: f64,
}

/// AC model over an extended meter layout.
#[derive(Debug, Clone)]
pub struct AcModel {
    pub net: Arc<GridNetwork>,
    /// The active-power (DC) layout the extension is built from.
    pub base_layout: MeterLayout,
    pub quantities: Vec<AcQuantity>,
    pub noise: NoiseModel,
    lines: Vec<PiLine>,
}

impl AcModel {
    pub fn new(net: Arc<GridNetwork>, base_layout: MeterLayout, noise: NoiseModel) -> Result<Self> {
        for m in base_layout.meters() {
            net.validate_meter(m)?;
        }
        let mut quantities: Vec<AcQuantity> = base_layout.meters().iter().map(|&m| AcQuantity::Active(m)).collect();
        quantities.extend(base_layout.meters().iter().map(|&m| AcQuantity::Reactive(m)));
        quantities.push(AcQuantity::VoltageMagnitude(net.reference_bus));
        if noise.len() != quantities.len() {
            return Err(Error::InvalidInput(format!(
                "noise model has {} rows, extended AC layout has {}",
                noise.len(),
                quantities.len()
            )));
        }
        let lines = net
            .lines
            .iter()
            .map(|l| {
                let (g, b) = l.series_admittance();
                PiLine { g, b, half_shunt: l.shunt_charging / 2.0 }
            })
            .collect();
        Ok(AcModel { net, base_layout, quantities, noise, lines })
    }

    /// Model with uniform unit-trace noise shape and `σ² = 1`.
    pub fn with_unit_noise(net: Arc<GridNetwork>, base_layout: MeterLayout) -> Result<Self> {
        let m = 2 * base_layout.len() + 1;
        Self::new(net, base_layout, NoiseModel::uniform(m, (1.0 / m as f64).sqrt())?)
    }

    pub fn with_noise(&self, noise: NoiseModel) -> Result<Self> {
        if noise.len() != self.quantities.len() {
            return Err(Error::InvalidInput("noise model length mismatch".into()));
        }
        Ok(AcModel { noise, ..self.clone() })
    }

    /// Rows in the extended layout, `2m + 1`.
    pub fn len(&self) -> usize {
        self.quantities.len()
    }

    pub fn is_empty(&self) -> bool {
        self.quantities.is_empty()
    }

    /// Number of active-power rows `m`; they occupy rows `0..m`.
    pub fn active_len(&self) -> usize {
        self.base_layout.len()
    }

    pub fn param_count(&self) -> usize {
        self.net.state_dim() + self.net.bus_count()
    }

    /// Places an active-row vector into the extended layout, zeros elsewhere.
    pub fn embed_active(&self, a: &DVector<f64>) -> DVector<f64> {
        let mut out = DVector::zeros(self.len());
        out.rows_mut(0, a.len().min(self.active_len())).copy_from(&a.rows(0, a.len().min(self.active_len())));
        out
    }

    pub fn row_label(&self, row: usize) -> String {
        match self.quantities[row] {
            AcQuantity::Active(m) => format!("P{}", self.net.meter_label(&m)),
            AcQuantity::Reactive(m) => format!("Q{}", self.net.meter_label(&m)),
            AcQuantity::VoltageMagnitude(b) => format!("V{}", self.net.buses[b].number),
        }
    }

    fn flow(&self, s: &AcState, from: usize, to: usize) -> (f64, f64) {
        let l = self.lines[self.net.line_between(from, to).expect("validated meter")];
        let (vi, vj) = (s.magnitudes[from], s.magnitudes[to]);
        let (sin, cos) = (s.angles[from] - s.angles[to]).sin_cos();
        let p = vi * vi * l.g - vi * vj * (l.g * cos + l.b * sin);
        let q = -vi * vi * (l.b + l.half_shunt) - vi * vj * (l.g * sin - l.b * cos);
        (p, q)
    }

    fn meter_pq(&self, s: &AcState, meter: MeterId) -> (f64, f64) {
        match meter {
            MeterId::LineFlow { from, to } => self.flow(s, from, to),
            MeterId::Injection(i) => self.net.neighbors(i).iter().fold((0.0, 0.0), |(p, q), &(j, _)| {
                let (fp, fq) = self.flow(s, i, j);
                (p + fp, q + fq)
            }),
        }
    }

    /// Partial derivatives of the flow `from→to`, as
    /// `(dθ_from, dθ_to, dV_from, dV_to)` for P and for Q.
    fn flow_partials(&self, s: &AcState, from: usize, to: usize) -> ([f64; 4], [f64; 4]) {
        let l = self.lines[self.net.line_between(from, to).expect("validated meter")];
        let (vi, vj) = (s.magnitudes[from], s.magnitudes[to]);
        let (sin, cos) = (s.angles[from] - s.angles[to]).sin_cos();
        let a = l.g * cos + l.b * sin;
        let c = l.g * sin - l.b * cos;
        let p = [vi * vj * c, -vi * vj * c, 2.0 * vi * l.g - vj * a, -vi * a];
        let q = [-vi * vj * a, vi * vj * a, -2.0 * vi * (l.b + l.half_shunt) - vj * c, -vi * c];
        (p, q)
    }

    fn push_flow_row(&self, s: &AcState, from: usize, to: usize, reactive: bool, row: &mut Vec<(usize, f64)>) {
        let (p, q) = self.flow_partials(s, from, to);
        let d = if reactive { q } else { p };
        let n = self.net.state_dim();
        if let Some(c) = self.net.angle_column(from) {
            row.push((c, d[0]));
        }
        if let Some(c) = self.net.angle_column(to) {
            row.push((c, d[1]));
        }
        row.push((n + from, d[2]));
        row.push((n + to, d[3]));
    }

    fn jacobian_row(&self, s: &AcState, q: AcQuantity) -> Vec<(usize, f64)> {
        let mut row = Vec::new();
        let (meter, reactive) = match q {
            AcQuantity::Active(m) => (m, false),
            AcQuantity::Reactive(m) => (m, true),
            AcQuantity::VoltageMagnitude(b) => return vec![(self.net.state_dim() + b, 1.0)],
        };
        match meter {
            MeterId::LineFlow { from, to } => self.push_flow_row(s, from, to, reactive, &mut row),
            MeterId::Injection(i) => {
                for &(j, _) in self.net.neighbors(i) {
                    self.push_flow_row(s, i, j, reactive, &mut row);
                }
                row.sort_unstable_by_key(|&(c, _)| c);
                row.dedup_by(|next, kept| {
                    if next.0 == kept.0 {
                        kept.1 += next.1;
                        true
                    } else {
                        false
                    }
                });
            }
        }
        row
    }

    fn value(&self, s: &AcState, q: AcQuantity) -> f64 {
        match q {
            AcQuantity::Active(m) => self.meter_pq(s, m).0,
            AcQuantity::Reactive(m) => self.meter_pq(s, m).1,
            AcQuantity::VoltageMagnitude(b) => s.magnitudes[b],
        }
    }

    /// Noiseless extended measurement vector `h(s)`.
    pub fn measure(&self, s: &AcState) -> DVector<f64> {
        DVector::from_iterator(self.len(), self.quantities.iter().map(|&q| self.value(s, q)))
    }

    fn measure_rows(&self, s: &AcState, rows: &[usize]) -> DVector<f64> {
        DVector::from_iterator(rows.len(), rows.iter().map(|&r| self.value(s, self.quantities[r])))
    }

    /// Jacobian rows for `rows`, columns `[non-reference angles; magnitudes]`.
    pub fn jacobian_sparse(&self, s: &AcState, rows: &[usize]) -> SparseRows {
        SparseRows::new(
            self.param_count(),
            rows.iter().map(|&r| self.jacobian_row(s, self.quantities[r])).collect(),
        )
    }

    /// Dense Jacobian of [`AcModel::measure`].
    pub fn jacobian(&self, s: &AcState) -> DMatrix<f64> {
        let rows: Vec<usize> = (0..self.len()).collect();
        self.jacobian_sparse(s, &rows).to_dense()
    }
}

/// Noiseless extended measurements at `s`.
pub fn ac_measure(model: &AcModel, s: &AcState) -> DVector<f64> {
    model.measure(s)
}

/// Analytic Jacobian at `s`.
pub fn ac_jacobian(model: &AcModel, s: &AcState) -> DMatrix<f64> {
    model.jacobian(s)
}

/// Outcome of a Gauss–Newton solve.
#[derive(Debug, Clone)]
pub struct GaussNewton {
    pub params: DVector<f64>,
    /// `z − h(x̂)` on the rows used.
    pub residual: DVector<f64>,
    pub jacobian: SparseRows,
    pub iterations: usize,
    pub converged: bool,
}

/// Gauss–Newton on rows `rows` with weights `weights` from parameter vector
/// `start`.
pub fn gauss_newton_rows(
    model: &AcModel,
    z: &DVector<f64>,
    rows: &[usize],
    weights: &[f64],
    start: &DVector<f64>,
) -> Result<GaussNewton> {
    let net = &model.net;
    let zr = DVector::from_iterator(rows.len(), rows.iter().map(|&r| z[r]));
    let mut x = start.clone();
    let mut last_step = f64::INFINITY;
    let mut growth = 0;
    for it in 1..=GN_MAX_ITER {
        let s = AcState::from_params(net, &x);
        let r = &zr - model.measure_rows(&s, rows);
        let jac = model.jacobian_sparse(&s, rows);
        let chol = spd_factor(jac.weighted_gram(weights))?;
        let step = chol.solve(&jac.weighted_transpose_mul(weights, &r));
        let norm = step.norm();
        if !norm.is_finite() {
            return Err(Error::NonConvergence { iterations: it });
        }
        x += &step;
        if x.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonConvergence { iterations: it });
        }
        if norm > last_step {
            growth += 1;
            if growth >= GN_DIVERGENCE_RUN {
                return Err(Error::NonConvergence { iterations: it });
            }
        } else {
            growth = 0;
        }
        last_step = norm;
        if norm < GN_TOL || it == GN_MAX_ITER {
            let s = AcState::from_params(net, &x);
            let residual = &zr - model.measure_rows(&s, rows);
            let jacobian = model.jacobian_sparse(&s, rows);
            return Ok(GaussNewton { params: x, residual, jacobian, iterations: it, converged: norm < GN_TOL });
        }
    }
    unreachable!("loop returns on its final iteration")
}

/// Weighted Gauss–Newton over every row with `Σ⁻¹` weights, started at `init`.
pub fn gauss_newton_wls(model: &AcModel, z: &DVector<f64>, init: &AcState) -> Result<(AcState, DVector<f64>)> {
    if z.len() != model.len() {
        return Err(Error::InvalidInput(format!("expected {} measurements, got {}", model.len(), z.len())));
    }
    let rows: Vec<usize> = (0..model.len()).collect();
    let weights: Vec<f64> = model.noise.variances().iter().map(|v| 1.0 / v).collect();
    let gn = gauss_newton_rows(model, z, &rows, &weights, &init.to_params(&model.net))?;
    if !gn.converged && gn.iterations >= GN_MAX_ITER {
        return Err(Error::NonConvergence { iterations: gn.iterations });
    }
    Ok((AcState::from_params(&model.net, &gn.params), gn.residual))
}

impl EstimationModel for AcModel {
    fn meter_count(&self) -> usize {
        self.len()
    }

    fn param_dim(&self) -> usize {
        self.param_count()
    }

    fn angle_dim(&self) -> usize {
        self.net.state_dim()
    }

    fn variances(&self) -> DVector<f64> {
        self.noise.variances()
    }

    fn fit(&self, z: &DVector<f64>, active: &[usize], weights: &[f64], warm: Option<&DVector<f64>>) -> Result<Fit> {
        let start = match warm {
            Some(w) => w.clone(),
            None => AcState::flat(&self.net).to_params(&self.net),
        };
        let gn = gauss_newton_rows(self, z, active, weights, &start)?;
        if !gn.converged {
            let s = AcState::from_params(&self.net, &gn.params);
            let r = DVector::from_iterator(active.len(), active.iter().map(|&i| z[i]))
                - self.measure_rows(&s, active);
            let chol = spd_factor(gn.jacobian.weighted_gram(weights))?;
            let step = chol.solve(&gn.jacobian.weighted_transpose_mul(weights, &r));
            if step.norm() > GN_ACCEPT_TOL {
                return Err(Error::NonConvergence { iterations: gn.iterations });
            }
        }
        Ok(Fit { estimate: gn.params, residual: gn.residual, jacobian: gn.jacobian })
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dcmodel::LinearModel;
    use crate::estimator::wls_linear;
    use crate::linalg::numerical_rank;
    use crate::netmodel::{full_meter_layout, load_case, GridNetwork, Line};
    use crate::rng::stream_rng;
    use rand::Rng;

    fn model14() -> AcModel {
        let net = Arc::new(load_case("ieee14").unwrap());
        let layout = full_meter_layout(&net);
        AcModel::with_unit_noise(net, layout).unwrap()
    }

    fn random_state(net: &GridNetwork, seed: u64) -> AcState {
        let mut rng = stream_rng(seed, 0);
        let mut s = AcState::operating(net);
        for b in 0..net.bus_count() {
            s.magnitudes[b] += rng.random_range(-0.05..0.05);
            if b != net.reference_bus {
                s.angles[b] += rng.random_range(-0.1..0.1);
            }
        }
        s
    }

    fn lossless(net: &GridNetwork) -> GridNetwork {
        let lines: Vec<Line> = net
            .lines
            .iter()
            .map(|l| Line {
                series_resistance: 0.0,
                series_reactance: 1.0 / l.susceptance,
                shunt_charging: 0.0,
                ..l.clone()
            })
            .collect();
        GridNetwork::new(net.name.clone(), net.base_mva, net.buses.clone(), lines, net.reference_bus).unwrap()
    }

    #[test]
    fn extended_layout_shape() {
        let m = model14();
        assert_eq!(m.len(), 109);
        assert_eq!(m.param_count(), 27);
        assert_eq!(m.quantities[108], AcQuantity::VoltageMagnitude(m.net.reference_bus));
    }

    #[test]
    fn jacobian_matches_central_differences() {
        let m = model14();
        for seed in 0..10 {
            let s = random_state(&m.net, seed);
            let p = s.to_params(&m.net);
            let j = m.jacobian(&s);
            let h = 1e-6;
            for c in 0..p.len() {
                let mut up = p.clone();
                let mut dn = p.clone();
                up[c] += h;
                dn[c] -= h;
                let fd = (m.measure(&AcState::from_params(&m.net, &up)) - m.measure(&AcState::from_params(&m.net, &dn)))
                    / (2.0 * h);
                let scale = j.column(c).amax().max(1.0);
                let err = (fd - j.column(c)).amax() / scale;
                assert!(err < 1e-6, "seed {seed} column {c}: {err}");
            }
        }
    }

    #[test]
    fn full_rank_at_operating_point() {
        let m = model14();
        let j = m.jacobian(&AcState::operating(&m.net));
        assert_eq!(numerical_rank(&j), 27);
    }

    #[test]
    fn flat_state_lossless_flows_vanish() {
        let net = Arc::new(lossless(&load_case("ieee14").unwrap()));
        let m = AcModel::with_unit_noise(net.clone(), full_meter_layout(&net)).unwrap();
        let z = m.measure(&AcState::flat(&net));
        assert!(z.rows(0, 108).amax() < 1e-12);
    }

    #[test]
    fn injection_is_sum_of_incident_flows() {
        let m = model14();
        let s = random_state(&m.net, 3);
        let z = m.measure(&s);
        for b in 0..m.net.bus_count() {
            let inj = m.base_layout.index_of(&MeterId::Injection(b)).unwrap();
            let (mut p, mut q) = (0.0, 0.0);
            for &(j, _) in m.net.neighbors(b) {
                let r = m.base_layout.index_of(&MeterId::LineFlow { from: b, to: j }).unwrap();
                p += z[r];
                q += z[r + m.active_len()];
            }
            assert!((z[inj] - p).abs() < 1e-12);
            assert!((z[inj + m.active_len()] - q).abs() < 1e-12);
        }
    }

    #[test]
    fn flat_angle_block_equals_dc_matrix() {
        let net = Arc::new(load_case("ieee14").unwrap());
        let layout = full_meter_layout(&net);
        let ac = AcModel::with_unit_noise(net.clone(), layout.clone()).unwrap();
        let dc = LinearModel::with_unit_noise(net.clone(), layout).unwrap();
        let j = ac.jacobian(&AcState::flat(&net));
        let block = j.view((0, 0), (54, 13));
        assert!((block - &dc.h).amax() < 1e-9);
    }

    #[test]
    fn noiseless_recovery_from_flat_start() {
        let m = model14();
        let s = random_state(&m.net, 7);
        let z = m.measure(&s);
        let (est, r) = gauss_newton_wls(&m, &z, &AcState::flat(&m.net)).unwrap();
        assert!((est.to_params(&m.net) - s.to_params(&m.net)).amax() < 1e-7);
        assert!(r.amax() < 1e-9);
    }

    #[test]
    fn small_angle_lossless_estimate_matches_linear_wls() {
        let net = Arc::new(lossless(&load_case("ieee14").unwrap()));
        let layout = full_meter_layout(&net);
        let ac = AcModel::with_unit_noise(net.clone(), layout.clone()).unwrap();
        let dc = LinearModel::with_unit_noise(net.clone(), layout).unwrap();
        let mut rng = stream_rng(2, 0);
        let x = DVector::from_fn(13, |_, _| rng.random_range(-0.01..0.01));
        let z_dc = &dc.h * &x + DVector::from_fn(54, |_, _| rng.random_range(-1e-3..1e-3));
        let (x_dc, _) = wls_linear(&dc.h, &dc.noise.variances(), &z_dc).unwrap();
        let mut z_ac = DVector::zeros(ac.len());
        z_ac.rows_mut(0, 54).copy_from(&z_dc);
        z_ac[108] = 1.0;
        let (est, _) = gauss_newton_wls(&ac, &z_ac, &AcState::flat(&net)).unwrap();
        assert!((est.reduced_angles(&net) - x_dc).amax() < 1e-3);
    }
}
