//! Framing, covert and conservative attack construction.
//!
//! A framing attack on adversary meters `S_A` must become covert once the
//! framed meters `S_F` are removed, so it lies in `R(H₀) ∩ A` where `H₀` is
//! `H` with the `S_F` rows zeroed and `A` is the set of vectors supported
//! on `S_A`. Within that subspace the direction maximizing the normalized
//! residual energy on `S_F` solves a generalized eigenproblem.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::dcmodel::LinearModel;
use crate::error::{Error, Result};
use crate::estimator::ResidualOps;
use crate::linalg::{complement, null_space_basis, orthonormal_columns, select_rows, spd_factor};
use crate::netmodel::{GridNetwork, MeterId, MeterLayout};

/// Default headroom of the conservative attack, as a fraction of `τ`.
pub const DEFAULT_BETA: f64 = 0.5;

/// Orthonormal basis of `R(H₀) ∩ A`.
#[derive(Debug, Clone)]
pub struct FeasibleBasis {
    /// `m × p`, zero outside the adversary rows.
    pub b: DMatrix<f64>,
    pub adversary_rows: Vec<usize>,
    pub framed_rows: Vec<usize>,
}

impl FeasibleBasis {
    pub fn dim(&self) -> usize {
        self.b.ncols()
    }
}

fn check_sets(layout: &MeterLayout, s_a: &[MeterId], s_f: &[MeterId]) -> Result<(Vec<usize>, Vec<usize>)> {
    if s_a.is_empty() {
        return Err(Error::InvalidInput("adversary set is empty".into()));
    }
    if let Some(m) = s_a.iter().find(|m| s_f.contains(m)) {
        return Err(Error::InvalidInput(format!("meter {m} is both adversary and framed")));
    }
    let mut ra = layout.rows_of(s_a)?;
    let mut rf = layout.rows_of(s_f)?;
    ra.sort_unstable();
    rf.sort_unstable();
    Ok((ra, rf))
}

/// Basis of the attack directions that are covert after `S_F` is removed.
pub fn feasible_basis(model: &LinearModel, s_a: &[MeterId], s_f: &[MeterId]) -> Result<FeasibleBasis> {
    let (ra, rf) = check_sets(&model.layout, s_a, s_f)?;
    let m = model.meter_count();
    let mut union = ra.clone();
    union.extend(&rf);
    let hbar = select_rows(&model.h, &complement(m, &union));
    let null = null_space_basis(&hbar);
    if null.ncols() == 0 {
        return Err(Error::NoFramingAttack);
    }
    let mut cols = &model.h * null;
    let mut on_a = vec![false; m];
    for &r in &ra {
        on_a[r] = true;
    }
    for (i, mut row) in cols.row_iter_mut().enumerate() {
        if !on_a[i] {
            row.fill(0.0);
        }
    }
    let b = orthonormal_columns(&cols);
    if b.ncols() == 0 {
        return Err(Error::NoFramingAttack);
    }
    let mut b = b;
    for (i, mut row) in b.row_iter_mut().enumerate() {
        if !on_a[i] {
            row.fill(0.0);
        }
    }
    Ok(FeasibleBasis { b, adversary_rows: ra, framed_rows: rf })
}

/// Optimal framing direction and its scale.
#[derive(Debug, Clone)]
pub struct AttackPlan {
    pub s_adversary: Vec<MeterId>,
    pub s_framed: Vec<MeterId>,
    /// Unit vector `a*`, zero outside `S_A`.
    pub direction: DVector<f64>,
    /// Scale `η`; its sign orients the attack.
    pub eta: f64,
    /// `‖R_F Ω W a*‖²`.
    pub objective_value: f64,
    /// Dimension `p` of the feasible subspace.
    pub feasible_dim: usize,
    /// `‖Pq* + λQq*‖ / ‖P‖` at the solution.
    pub kkt_residual: f64,
    /// The objective vanishes on the whole feasible subspace.
    pub degenerate: bool,
}

impl AttackPlan {
    /// `η·a*`.
    pub fn attack_vector(&self) -> DVector<f64> {
        &self.direction * self.eta
    }

    /// Flips `a*` so that `η` and the plan keep their meaning.
    pub fn negate_direction(&mut self) {
        self.direction.neg_mut();
    }
}

/// Largest eigenpair of `A v = λ C v` for symmetric `A` and SPD `C`, with
/// `vᵀCv = 1`.
pub fn generalized_max_eig(a: &DMatrix<f64>, c: &DMatrix<f64>) -> Result<(f64, DVector<f64>)> {
    let chol = spd_factor(c.clone()).map_err(|_| Error::Numerical("constraint matrix is not positive definite".into()))?;
    let l = chol.l();
    let linv = l
        .clone()
        .try_inverse()
        .ok_or_else(|| Error::Numerical("Cholesky factor is singular".into()))?;
    let mut s = &linv * a * linv.transpose();
    s = (&s + s.transpose()) * 0.5;
    let eig = s.symmetric_eigen();
    let (k, &lambda) = eig
        .eigenvalues
        .iter()
        .enumerate()
        .max_by(|x, y| x.1.total_cmp(y.1))
        .ok_or_else(|| Error::Numerical("empty eigenproblem".into()))?;
    if !lambda.is_finite() {
        return Err(Error::Numerical("eigenvalue is not finite".into()));
    }
    let v = linv.transpose() * eig.eigenvectors.column(k);
    let norm = (v.transpose() * c * &v)[(0, 0)].sqrt();
    Ok((lambda, v / norm))
}

fn orient(v: &mut DVector<f64>) {
    if let Some(&first) = v.iter().find(|x| x.abs() > 1e-12 * v.amax()) {
        if first < 0.0 {
            v.neg_mut();
        }
    }
}

/// Direction maximizing `‖R_F Ω W a‖²` over unit `a ∈ R(H₀) ∩ A`.
///
/// With `M = R_F Ω W B` the objective is `qᵀMᵀMq` under `qᵀBᵀBq = 1`; the
/// maximizer is the top generalized eigenvector and the maximum equals the
/// eigenvalue. `Ω` and `W` are taken at the first iteration on the full
/// layout. The returned direction has its first nonzero entry positive and
/// `η = 1`.
pub fn framing_direction(model: &LinearModel, s_a: &[MeterId], s_f: &[MeterId]) -> Result<AttackPlan> {
    let basis = feasible_basis(model, s_a, s_f)?;
    let ops = ResidualOps::new(&model.h, &model.noise.variances(), 0.5)?;
    let omega_w = ops.omega_w();
    let mrows = select_rows(&(omega_w * &basis.b), &basis.framed_rows);
    let p_neg = mrows.transpose() * &mrows;
    let q = basis.b.transpose() * &basis.b;
    let (lambda, qv) = generalized_max_eig(&p_neg, &q)?;
    let kkt = (-&p_neg * &qv + lambda * &q * &qv).norm() / p_neg.norm().max(f64::MIN_POSITIVE);
    let mut direction = &basis.b * &qv;
    let norm = direction.norm();
    if !(norm > 0.0) {
        return Err(Error::Numerical("framing direction vanished".into()));
    }
    direction /= norm;
    orient(&mut direction);
    let scale = p_neg.amax();
    let degenerate = scale == 0.0 || lambda <= 1e-12 * scale;
    Ok(AttackPlan {
        s_adversary: basis.adversary_rows.iter().map(|&r| model.layout.meter(r)).collect(),
        s_framed: basis.framed_rows.iter().map(|&r| model.layout.meter(r)).collect(),
        direction,
        eta: 1.0,
        objective_value: lambda.max(0.0),
        feasible_dim: basis.dim(),
        kkt_residual: kkt,
        degenerate,
    })
}

/// `‖R_F Ω W a‖²` evaluated directly.
pub fn framing_objective(model: &LinearModel, s_f: &[MeterId], a: &DVector<f64>) -> Result<f64> {
    let ops = ResidualOps::new(&model.h, &model.noise.variances(), 0.5)?;
    let rn = ops.omega_w() * a;
    let rows = model.layout.rows_of(s_f)?;
    Ok(rows.iter().map(|&r| rn[r] * rn[r]).sum())
}

/// How to size an attack.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum AttackScale {
    /// Use this `η` directly.
    Eta(f64),
    /// Choose `|η|` so that `‖a‖₁ = pct/100 · nominal_l1`; the sign comes
    /// from the plan.
    Percent { pct: f64, nominal_l1: f64 },
}

/// `a = η·a*` for the requested scale.
pub fn scale_attack(plan: &AttackPlan, target: AttackScale) -> Result<DVector<f64>> {
    let l1 = plan.direction.lp_norm(1);
    if !(l1 > 0.0) {
        return Err(Error::InvalidInput("attack direction is zero".into()));
    }
    let eta = match target {
        AttackScale::Eta(e) => e,
        AttackScale::Percent { pct, nominal_l1 } => {
            let sign = if plan.eta < 0.0 { -1.0 } else { 1.0 };
            sign * pct / 100.0 * nominal_l1 / l1
        }
    };
    Ok(&plan.direction * eta)
}

/// `a = Hy`.
pub fn covert_attack(model: &LinearModel, y: &DVector<f64>) -> Result<DVector<f64>> {
    if y.len() != model.state_dim() {
        return Err(Error::InvalidInput("state shift has the wrong length".into()));
    }
    if y.iter().all(|&v| v == 0.0) {
        return Err(Error::InvalidInput("covert shift must be nonzero".into()));
    }
    Ok(&model.h * y)
}

/// Result of the conservative design.
#[derive(Debug, Clone)]
pub enum ConservativeAttack {
    /// Largest state shift whose deterministic residual energy equals `β·τ`.
    Bounded { a: DVector<f64>, shift_sq: f64, budget: f64 },
    /// `S_A` supports an attack with zero residual, so the objective is unbounded.
    CovertCapable,
}

/// Maximizes `‖G⁻¹HᵀΣ⁻¹a‖²` over `a ∈ A` subject to `(Wa)ᵀΣ⁻¹(Wa) ≤ β·τ`.
pub fn conservative_attack(model: &LinearModel, s_a: &[MeterId], alpha: f64, beta: f64) -> Result<ConservativeAttack> {
    if s_a.is_empty() {
        return Err(Error::InvalidInput("adversary set is empty".into()));
    }
    if !(beta > 0.0) {
        return Err(Error::InvalidInput("beta must be positive".into()));
    }
    let mut rows = model.layout.rows_of(s_a)?;
    rows.sort_unstable();
    rows.dedup();
    let var = model.noise.variances();
    let ops = ResidualOps::new(&model.h, &var, alpha)?;
    let m = model.meter_count();

    let mut hw = model.h.transpose();
    for (j, mut col) in hw.column_iter_mut().enumerate() {
        col /= var[j];
    }
    let k_full = spd_factor(&hw * &model.h)?.solve(&hw);
    let k = DMatrix::from_fn(k_full.nrows(), rows.len(), |i, j| k_full[(i, rows[j])]);
    let a_mat = k.transpose() * &k;
    // Σ⁻¹W is symmetric and idempotent in the Σ⁻¹ inner product.
    let c = DMatrix::from_fn(rows.len(), rows.len(), |i, j| {
        let v = ops.w[(rows[i], rows[j])] / var[rows[i]];
        let u = ops.w[(rows[j], rows[i])] / var[rows[j]];
        0.5 * (u + v)
    });
    let c_eig = c.clone().symmetric_eigen();
    let cmax = c_eig.eigenvalues.amax();
    if c_eig.eigenvalues.iter().any(|&e| e <= 1e-10 * cmax) {
        return Ok(ConservativeAttack::CovertCapable);
    }
    let budget = beta * ops.tau;
    let (lambda, mut u) = generalized_max_eig(&a_mat, &c)?;
    u *= budget.sqrt();
    orient(&mut u);
    let mut a = DVector::zeros(m);
    for (j, &r) in rows.iter().enumerate() {
        a[r] = u[j];
    }
    Ok(ConservativeAttack::Bounded { a, shift_sq: lambda * budget, budget })
}

/// One direction entry in a plan file.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DirectionEntry {
    pub meter: String,
    pub value: f64,
}

/// Serialized form of an [`AttackPlan`]; meters use the command-line syntax.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PlanFile {
    pub case: String,
    pub adversary: Vec<String>,
    pub framed: Vec<String>,
    pub direction: Vec<DirectionEntry>,
    pub eta: f64,
    pub objective: f64,
    pub feasible_dim: usize,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub magnitude_pct: Option<f64>,
}

impl PlanFile {
    pub fn from_plan(net: &GridNetwork, layout: &MeterLayout, plan: &AttackPlan, case: &str) -> Self {
        let direction = plan
            .s_adversary
            .iter()
            .map(|m| DirectionEntry {
                meter: net.meter_label(m),
                value: plan.direction[layout.index_of(m).expect("plan meters are in the layout")],
            })
            .collect();
        PlanFile {
            case: case.to_string(),
            adversary: plan.s_adversary.iter().map(|m| net.meter_label(m)).collect(),
            framed: plan.s_framed.iter().map(|m| net.meter_label(m)).collect(),
            direction,
            eta: plan.eta,
            objective: plan.objective_value,
            feasible_dim: plan.feasible_dim,
            magnitude_pct: None,
        }
    }

    /// Rebuilds the plan against a model on the same case.
    pub fn to_plan(&self, model: &LinearModel) -> Result<AttackPlan> {
        let net = &model.net;
        let parse = |v: &[String]| v.iter().map(|s| net.parse_meter(s)).collect::<Result<Vec<_>>>();
        let s_adversary = parse(&self.adversary)?;
        let s_framed = parse(&self.framed)?;
        let mut direction = DVector::zeros(model.meter_count());
        for e in &self.direction {
            let m = net.parse_meter(&e.meter)?;
            if !s_adversary.contains(&m) {
                return Err(Error::InvalidInput(format!("direction entry {} is not an adversary meter", e.meter)));
            }
            let row = model.layout.index_of(&m).ok_or_else(|| Error::InvalidMeter(e.meter.clone()))?;
            direction[row] = e.value;
        }
        Ok(AttackPlan {
            s_adversary,
            s_framed,
            direction,
            eta: self.eta,
            objective_value: self.objective,
            feasible_dim: self.feasible_dim,
            kkt_residual: 0.0,
            degenerate: self.objective == 0.0,
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::netmodel::{full_meter_layout, load_case};
    use std::sync::Arc;

    fn model14() -> LinearModel {
        let net = Arc::new(load_case("ieee14").unwrap());
        let layout = full_meter_layout(&net);
        LinearModel::with_unit_noise(net, layout).unwrap()
    }

    fn meters(m: &LinearModel, s: &str) -> Vec<MeterId> {
        m.net.parse_meter_list(s).unwrap()
    }

    #[test]
    fn fig3_feasible_space_is_one_dimensional() {
        let m = model14();
        let sa = meters(&m, "2-3,3-4,4-3");
        let sf = meters(&m, "3-2,2,3,4");
        let basis = feasible_basis(&m, &sa, &sf).unwrap();
        assert_eq!(basis.dim(), 1);
        let plan = framing_direction(&m, &sa, &sf).unwrap();
        assert_eq!(plan.feasible_dim, 1);
        assert!((plan.direction.norm() - 1.0).abs() < 1e-10);
        let rows = m.layout.rows_of(&sa).unwrap();
        for i in 0..54 {
            if !rows.contains(&i) {
                assert_eq!(plan.direction[i], 0.0);
            }
        }
        let direct = framing_objective(&m, &sf, &plan.direction).unwrap();
        assert!((direct - plan.objective_value).abs() <= 1e-9 * direct.max(1.0));
        assert!(plan.kkt_residual < 1e-8);
    }

    #[test]
    fn overlap_and_empty_sets_rejected() {
        let m = model14();
        let sa = meters(&m, "2-3");
        assert!(matches!(feasible_basis(&m, &sa, &sa), Err(Error::InvalidInput(_))));
        assert!(matches!(feasible_basis(&m, &[], &sa), Err(Error::InvalidInput(_))));
    }

    #[test]
    fn no_framing_attack_without_critical_union() {
        let m = model14();
        let sa = meters(&m, "2-3");
        let sf = meters(&m, "3-2");
        assert!(matches!(feasible_basis(&m, &sa, &sf), Err(Error::NoFramingAttack)));
    }

    #[test]
    fn two_disjoint_critical_sets_give_p_two() {
        let m = model14();
        let sa = meters(&m, "2-3,3-4,4-3,6-12,12-6,12-13");
        let sf = meters(&m, "2,3,4,3-2,6,12,13,13-12");
        let basis = feasible_basis(&m, &sa, &sf).unwrap();
        assert!(basis.dim() >= 2);
        let gram = basis.b.transpose() * &basis.b;
        assert!((gram - DMatrix::identity(basis.dim(), basis.dim())).amax() < 1e-10);
    }

    #[test]
    fn scaling_modes() {
        let m = model14();
        let plan = framing_direction(&m, &meters(&m, "2-3,3-4,4-3"), &meters(&m, "3-2,2,3,4")).unwrap();
        assert!(scale_attack(&plan, AttackScale::Eta(0.0)).unwrap().iter().all(|&v| v == 0.0));
        let a1 = scale_attack(&plan, AttackScale::Percent { pct: 1.0, nominal_l1: 10.0 }).unwrap();
        let a2 = scale_attack(&plan, AttackScale::Percent { pct: 2.0, nominal_l1: 10.0 }).unwrap();
        assert!((a1.lp_norm(1) - 0.1).abs() < 1e-12);
        assert!((a2.lp_norm(1) / a1.lp_norm(1) - 2.0).abs() < 1e-12);
        let mut neg = plan.clone();
        neg.eta = -1.0;
        let an = scale_attack(&neg, AttackScale::Percent { pct: 1.0, nominal_l1: 10.0 }).unwrap();
        assert!((an + a1).amax() < 1e-15);
    }

    #[test]
    fn covert_attack_is_h_times_y() {
        let m = model14();
        let y = DVector::from_element(13, 0.1);
        assert!((covert_attack(&m, &y).unwrap() - &m.h * &y).amax() < 1e-15);
        assert!(covert_attack(&m, &DVector::zeros(13)).is_err());
    }

    #[test]
    fn conservative_meets_budget_and_scales_with_it() {
        let m = model14();
        let sa = meters(&m, "2-3,3-4,4-3");
        let ConservativeAttack::Bounded { a, budget, .. } = conservative_attack(&m, &sa, 0.04, 0.5).unwrap() else {
            panic!("three meters cannot be covert");
        };
        let var = m.noise.variances();
        let ops = ResidualOps::new(&m.h, &var, 0.04).unwrap();
        let r = &ops.w * &a;
        let energy: f64 = r.iter().zip(var.iter()).map(|(x, v)| x * x / v).sum();
        assert!((energy - budget).abs() < 1e-9 * budget);
        let ConservativeAttack::Bounded { a: a2, .. } = conservative_attack(&m, &sa, 0.04, 1.0).unwrap() else {
            panic!()
        };
        assert!((a2.norm() / a.norm() - 2f64.sqrt()).abs() < 1e-9);
    }

    #[test]
    fn conservative_detects_covert_capable_sets() {
        let m = model14();
        let cut = crate::observability::Cut::from_side(&m.net, &[m.net.bus_index(8).unwrap()]).unwrap();
        let set = crate::observability::critical_set_from_cut(&m.net, &m.layout, &cut).unwrap();
        assert!(matches!(
            conservative_attack(&m, &set.members, 0.04, 0.5).unwrap(),
            ConservativeAttack::CovertCapable
        ));
    }

    #[test]
    fn plan_file_round_trip() {
        let m = model14();
        let plan = framing_direction(&m, &meters(&m, "2-3,3-4,4-3"), &meters(&m, "3-2,2,3,4")).unwrap();
        let file = PlanFile::from_plan(&m.net, &m.layout, &plan, "ieee14");
        let json = serde_json::to_string(&file).unwrap();
        let back: PlanFile = serde_json::from_str(&json).unwrap();
        let again = back.to_plan(&m).unwrap();
        assert!((again.direction - &plan.direction).amax() < 1e-15);
        assert_eq!(again.s_framed, plan.s_framed);
    }
}
