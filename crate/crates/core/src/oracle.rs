//! Noiseless limit of the iterative estimator and attack-impact prediction.
//!
//! As `σ² → 0` the estimator keeps removing meters until the residual is
//! exactly zero, using `Σ̄` for weights and normalization. Ties in the
//! largest normalized residual are explored as separate branches, so the
//! result lists every reachable removal sequence and final estimate.

use nalgebra::DVector;
use serde::Serialize;

use crate::attack::AttackPlan;
use crate::dcmodel::LinearModel;
use crate::error::{Error, Result};
use crate::estimator::{critical_flags, identify_worst, normalized_residuals, sensitivity_diagonal, EstimationModel};
use crate::linalg::{complement, null_space_basis, select_rows, zero_rows};
use crate::netmodel::{GridNetwork, MeterId, MeterLayout};
use crate::observability::{critical_set_from_cut, half_partition, Cut, MeterSet};

/// Maximum number of explored branches.
pub const BRANCH_CAP: usize = 64;
/// Residual energy below `ZERO_RTOL · aᵀΣ̄⁻¹a` counts as zero.
pub const ZERO_RTOL: f64 = 1e-9;
/// Final estimates closer than this (max-norm) are the same estimate.
pub const DEDUP_TOL: f64 = 1e-8;

/// How a branch of the noiseless run ended.
#[derive(Debug, Clone, PartialEq)]
pub enum BranchOutcome {
    Final(DVector<f64>),
    /// Removing the last meter left the state unobservable.
    Infeasible,
    /// Residual nonzero but every normalized residual is zero.
    Unidentifiable,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Branch {
    /// Removed rows in order.
    pub sequence: Vec<usize>,
    pub outcome: BranchOutcome,
}

/// All outcomes of the noiseless iterative estimation on one attack vector.
#[derive(Debug, Clone)]
pub struct OracleResult {
    pub branches: Vec<Branch>,
    /// Distinct final estimates.
    pub final_estimates: Vec<DVector<f64>>,
    /// Removal sequences of the branches that reached a final estimate.
    pub removal_sequences: Vec<Vec<usize>>,
    /// Exactly one final estimate, no truncation and no failed branch.
    pub condition_holds: bool,
    /// The final estimate when `condition_holds`.
    pub y: Option<DVector<f64>>,
    pub truncated: bool,
}

impl OracleResult {
    pub fn branch_count(&self) -> usize {
        self.branches.len()
    }

    pub fn failed_branches(&self) -> usize {
        self.branches.iter().filter(|b| !matches!(b.outcome, BranchOutcome::Final(_))).count()
    }

    /// `seq` is one of the oracle's removal sequences.
    pub fn contains_sequence(&self, seq: &[usize]) -> bool {
        self.removal_sequences.iter().any(|s| s == seq)
    }

    /// Some oracle sequence is a prefix of `seq`.
    pub fn prefix_of(&self, seq: &[usize]) -> bool {
        self.removal_sequences.iter().any(|s| seq.starts_with(s))
    }
}

struct Pending {
    active: Vec<usize>,
    sequence: Vec<usize>,
}

/// Runs the noiseless loop on attack vector `a`.
pub fn noiseless_iterative_se(model: &LinearModel, a: &DVector<f64>) -> Result<OracleResult> {
    let m = model.meter_count();
    if a.len() != m {
        return Err(Error::InvalidInput(format!("attack vector has {} rows, model has {m}", a.len())));
    }
    let n = model.state_dim();
    let sbar = &model.noise.sigma_bar;
    let energy: f64 = a.iter().zip(sbar.iter()).map(|(x, s)| x * x / s).sum();
    let eps = ZERO_RTOL * energy;

    let mut branches = Vec::new();
    let mut stack = vec![Pending { active: (0..m).collect(), sequence: Vec::new() }];
    let mut truncated = false;

    while let Some(Pending { active, sequence }) = stack.pop() {
        let weights: Vec<f64> = active.iter().map(|&i| 1.0 / sbar[i]).collect();
        let fit = match model.fit(a, &active, &weights, None) {
            Ok(f) => f,
            Err(Error::Unobservable(_)) if !sequence.is_empty() => {
                branches.push(Branch { sequence, outcome: BranchOutcome::Infeasible });
                continue;
            }
            Err(e) => return Err(e),
        };
        let q: f64 = fit.residual.iter().zip(&weights).map(|(r, w)| r * r * w).sum();
        if active.len() <= n || q <= eps {
            branches.push(Branch { sequence, outcome: BranchOutcome::Final(fit.estimate) });
            continue;
        }
        let w_diag = sensitivity_diagonal(&fit.jacobian, &weights)?;
        let critical = critical_flags(&w_diag);
        let wsig: Vec<f64> = w_diag.iter().zip(&active).map(|(w, &i)| w * sbar[i]).collect();
        let rn = normalized_residuals(&fit.residual, &wsig, &critical)?;
        let Some(ties) = identify_worst(&rn) else {
            branches.push(Branch { sequence, outcome: BranchOutcome::Unidentifiable });
            continue;
        };
        let room = BRANCH_CAP.saturating_sub(branches.len() + stack.len());
        let take = ties.len().min(room.max(1));
        if take < ties.len() {
            truncated = true;
        }
        // Push in reverse so the lowest row is explored first.
        for &k in ties[..take].iter().rev() {
            let mut next_active = active.clone();
            next_active.remove(k);
            let mut next_seq = sequence.clone();
            next_seq.push(active[k]);
            stack.push(Pending { active: next_active, sequence: next_seq });
        }
    }

    let mut final_estimates: Vec<DVector<f64>> = Vec::new();
    let mut removal_sequences = Vec::new();
    for b in &branches {
        if let BranchOutcome::Final(x) = &b.outcome {
            removal_sequences.push(b.sequence.clone());
            if !final_estimates.iter().any(|f| (f - x).amax() <= DEDUP_TOL) {
                final_estimates.push(x.clone());
            }
        }
    }
    let failed = branches.iter().any(|b| !matches!(b.outcome, BranchOutcome::Final(_)));
    let condition_holds = final_estimates.len() == 1 && !truncated && !failed;
    let y = condition_holds.then(|| final_estimates[0].clone());
    Ok(OracleResult { branches, final_estimates, removal_sequences, condition_holds, y, truncated })
}

/// A critical set split in two, with its null direction.
#[derive(Debug, Clone)]
pub struct Partition {
    pub s1: MeterSet,
    pub s2: MeterSet,
    /// Unit null vector of `H̄`, first nonzero entry positive.
    pub delta_x: DVector<f64>,
    /// `H` with the `S₂` rows zeroed.
    pub h1: nalgebra::DMatrix<f64>,
    /// `H` with the `S₁` rows zeroed.
    pub h2: nalgebra::DMatrix<f64>,
}

impl Partition {
    pub fn new(model: &LinearModel, s1: MeterSet, s2: MeterSet) -> Result<Self> {
        let r1 = model.layout.rows_of(&s1.members)?;
        let r2 = model.layout.rows_of(&s2.members)?;
        if r1.iter().any(|r| r2.contains(r)) {
            return Err(Error::InvalidInput("partition halves overlap".into()));
        }
        let mut union = r1.clone();
        union.extend(&r2);
        let hbar = select_rows(&model.h, &complement(model.meter_count(), &union));
        let null = null_space_basis(&hbar);
        if null.ncols() != 1 {
            return Err(Error::InvalidInput(format!(
                "partition union leaves a {}-dimensional null space, expected 1",
                null.ncols()
            )));
        }
        let mut delta_x = null.column(0).into_owned();
        delta_x /= delta_x.norm();
        let tol = 1e-12 * delta_x.amax();
        if delta_x.iter().find(|v| v.abs() > tol).is_some_and(|&v| v < 0.0) {
            delta_x.neg_mut();
        }
        Ok(Partition { h1: zero_rows(&model.h, &r2), h2: zero_rows(&model.h, &r1), s1, s2, delta_x })
    }

    /// Partition built from a cut's critical set by [`half_partition`].
    pub fn from_cut(model: &LinearModel, cut: &Cut) -> Result<Self> {
        let set = critical_set_from_cut(&model.net, &model.layout, cut)?;
        let hp = half_partition(&model.net, &model.layout, &set, cut)?;
        Self::new(model, hp.s1, hp.s2)
    }

    /// `H₁Δx`.
    pub fn first_attack(&self) -> DVector<f64> {
        &self.h1 * &self.delta_x
    }

    /// `H₂Δx`.
    pub fn second_attack(&self) -> DVector<f64> {
        &self.h2 * &self.delta_x
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum Verdict {
    Holds,
    Fails,
    Unknown,
}

/// Outcome of checking whether a partition yields a unique final estimate.
#[derive(Debug, Clone)]
pub struct Theorem2Check {
    pub verdict: Verdict,
    pub y: Option<DVector<f64>>,
    /// `Δx − y`.
    pub complement: Option<DVector<f64>>,
    pub oracle: OracleResult,
}

/// Runs the oracle on `H₁Δx`.
pub fn check_theorem2(model: &LinearModel, partition: &Partition) -> Result<Theorem2Check> {
    let oracle = noiseless_iterative_se(model, &partition.first_attack())?;
    let verdict = if oracle.truncated {
        Verdict::Unknown
    } else if oracle.condition_holds {
        Verdict::Holds
    } else {
        Verdict::Fails
    };
    let y = oracle.y.clone();
    let complement = y.as_ref().map(|y| &partition.delta_x - y);
    Ok(Theorem2Check { verdict, y, complement, oracle })
}

/// Predicted perturbation when the adversary holds `S₁` (`η·y`) or `S₂`
/// (`η·(Δx − y)`).
pub fn predict_from_partition(check: &Theorem2Check, adversary_is_first: bool, eta: f64) -> Result<DVector<f64>> {
    match (check.verdict, &check.y, &check.complement) {
        (Verdict::Holds, Some(y), Some(c)) => Ok(if adversary_is_first { y * eta } else { c * eta }),
        _ => Err(inconclusive(&check.oracle)),
    }
}

fn inconclusive(o: &OracleResult) -> Error {
    Error::OracleInconclusive(format!(
        "{} branches, {} distinct final estimates, {} failed branches{}",
        o.branch_count(),
        o.final_estimates.len(),
        o.failed_branches(),
        if o.truncated { ", exploration truncated" } else { "" }
    ))
}

/// `η · (final estimate of the oracle on a*)` for a framing plan.
pub fn predict_perturbation(model: &LinearModel, plan: &AttackPlan) -> Result<DVector<f64>> {
    let oracle = noiseless_iterative_se(model, &plan.direction)?;
    match &oracle.y {
        Some(y) => Ok(y * plan.eta),
        None => Err(inconclusive(&oracle)),
    }
}

/// Target for orienting an attack: the predicted angle change at `bus`
/// should have the sign of `positive`.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct TargetDirection {
    pub bus: usize,
    pub positive: bool,
}

impl TargetDirection {
    /// Parses `"+12"` or `"-3"` (case-file bus numbers; a bare number means positive).
    pub fn parse(net: &GridNetwork, text: &str) -> Result<Self> {
        let t = text.trim();
        let (positive, rest) = match t.strip_prefix('-') {
            Some(r) => (false, r),
            None => (true, t.strip_prefix('+').unwrap_or(t)),
        };
        let num: u32 = rest
            .trim()
            .parse()
            .map_err(|_| Error::InvalidInput(format!("cannot parse target direction '{text}'")))?;
        let bus = net
            .bus_index(num)
            .ok_or_else(|| Error::InvalidInput(format!("unknown bus {num} in target direction")))?;
        if bus == net.reference_bus {
            return Err(Error::InvalidInput("the reference bus angle cannot be targeted".into()));
        }
        Ok(TargetDirection { bus, positive })
    }
}

/// Sets the sign of `plan.eta` so that the predicted perturbation points
/// toward `target`. Returns the prediction for `|η| = 1` after orientation.
pub fn orient_plan(model: &LinearModel, plan: &mut AttackPlan, target: TargetDirection) -> Result<DVector<f64>> {
    let oracle = noiseless_iterative_se(model, &plan.direction)?;
    let y = oracle.y.clone().ok_or_else(|| inconclusive(&oracle))?;
    let col = model.net.angle_column(target.bus).expect("target is not the reference bus");
    let flip = (y[col] < 0.0) == target.positive;
    plan.eta = if flip { -plan.eta.abs() } else { plan.eta.abs() };
    Ok(if flip { -y } else { y })
}

#[derive(Debug, Serialize)]
struct BranchReport {
    sequence: Vec<String>,
    outcome: &'static str,
    #[serde(skip_serializing_if = "Option::is_none")]
    estimate: Option<Vec<f64>>,
}

#[derive(Debug, Serialize)]
struct OracleReport {
    condition: &'static str,
    truncated: bool,
    branch_count: usize,
    branches: Vec<BranchReport>,
    final_estimates: Vec<Vec<f64>>,
}

/// JSON report of every branch, sequence and final estimate. Estimates
/// list the non-reference bus angles in radians.
pub fn oracle_report(net: &GridNetwork, layout: &MeterLayout, result: &OracleResult) -> String {
    let label = |seq: &[usize]| seq.iter().map(|&r| net.meter_label(&layout.meter(r))).collect();
    let branches = result
        .branches
        .iter()
        .map(|b| {
            let (outcome, estimate) = match &b.outcome {
                BranchOutcome::Final(x) => ("final", Some(x.iter().copied().collect())),
                BranchOutcome::Infeasible => ("infeasible", None),
                BranchOutcome::Unidentifiable => ("unidentifiable", None),
            };
            BranchReport { sequence: label(&b.sequence), outcome, estimate }
        })
        .collect();
    let report = OracleReport {
        condition: if result.truncated {
            "unknown"
        } else if result.condition_holds {
            "true"
        } else {
            "false"
        },
        truncated: result.truncated,
        branch_count: result.branch_count(),
        branches,
        final_estimates: result.final_estimates.iter().map(|x| x.iter().copied().collect()).collect(),
    };
    serde_json::to_string_pretty(&report).expect("report serializes")
}

/// Labels of the removed rows.
pub fn sequence_labels(net: &GridNetwork, layout: &MeterLayout, seq: &[usize]) -> Vec<String> {
    seq.iter().map(|&r| net.meter_label(&layout.meter(r))).collect()
}

/// Meters of a removal sequence.
pub fn sequence_meters(layout: &MeterLayout, seq: &[usize]) -> Vec<MeterId> {
    seq.iter().map(|&r| layout.meter(r)).collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::attack::framing_direction;
    use crate::netmodel::{full_meter_layout, load_case};
    use std::sync::Arc;

    fn model14() -> LinearModel {
        let net = Arc::new(load_case("ieee14").unwrap());
        let layout = full_meter_layout(&net);
        LinearModel::with_unit_noise(net, layout).unwrap()
    }

    fn bus3_partition(m: &LinearModel) -> Partition {
        let cut = Cut::from_side(&m.net, &[m.net.bus_index(3).unwrap()]).unwrap();
        Partition::from_cut(m, &cut).unwrap()
    }

    #[test]
    fn zero_attack_is_trivially_unique() {
        let m = model14();
        let r = noiseless_iterative_se(&m, &DVector::zeros(54)).unwrap();
        assert!(r.condition_holds);
        assert_eq!(r.removal_sequences, vec![Vec::<usize>::new()]);
        assert!(r.y.unwrap().amax() == 0.0);
    }

    #[test]
    fn covert_attack_passes_untouched() {
        let m = model14();
        let y = DVector::from_fn(13, |i, _| 0.01 * (i as f64 - 6.0));
        let r = noiseless_iterative_se(&m, &(&m.h * &y)).unwrap();
        assert!(r.condition_holds);
        assert!(r.removal_sequences[0].is_empty());
        assert!((r.y.unwrap() - y).amax() < 1e-10);
    }

    #[test]
    fn bus3_partition_satisfies_condition() {
        let m = model14();
        let p = bus3_partition(&m);
        // Off the partition rows both products reduce to H̄Δx, which is zero
        // up to rounding.
        assert!((&p.h1 * &p.delta_x + &p.h2 * &p.delta_x - &m.h * &p.delta_x).amax() < 1e-13 * m.h.amax());
        let check = check_theorem2(&m, &p).unwrap();
        assert_eq!(check.verdict, Verdict::Holds);
        let y = check.y.clone().unwrap();
        let c = check.complement.clone().unwrap();
        assert!(y.amax() > 1e-6 || c.amax() > 1e-6);
        assert!((&y + &c - &p.delta_x).amax() <= 4.0 * f64::EPSILON);

        let flipped = noiseless_iterative_se(&m, &-p.first_attack()).unwrap();
        assert!((flipped.y.unwrap() + &y).amax() < 1e-10);
        let mut a = flipped.removal_sequences.clone();
        let mut b = check.oracle.removal_sequences.clone();
        a.sort();
        b.sort();
        assert_eq!(a, b);
    }

    #[test]
    fn predictions_of_both_halves_sum_to_delta_x() {
        let m = model14();
        let p = bus3_partition(&m);
        let check = check_theorem2(&m, &p).unwrap();
        let first = predict_from_partition(&check, true, 2.5).unwrap();
        let second = predict_from_partition(&check, false, 2.5).unwrap();
        assert!((first + second - &p.delta_x * 2.5).amax() < 1e-12);
        assert!(predict_from_partition(&check, true, 0.0).unwrap().amax() == 0.0);
    }

    #[test]
    fn orientation_follows_target() {
        let m = model14();
        let sa = m.net.parse_meter_list("2-3,3-4,4-3").unwrap();
        let sf = m.net.parse_meter_list("3-2,2,3,4").unwrap();
        let mut plan = framing_direction(&m, &sa, &sf).unwrap();
        for positive in [true, false] {
            let target = TargetDirection { bus: m.net.bus_index(3).unwrap(), positive };
            orient_plan(&m, &mut plan, target).unwrap();
            let pred = predict_perturbation(&m, &plan).unwrap();
            let col = m.net.angle_column(target.bus).unwrap();
            assert_eq!(pred[col] > 0.0, positive);
        }
        assert!(TargetDirection::parse(&m.net, "-3").is_ok());
        assert!(TargetDirection::parse(&m.net, "+1").is_err());
    }

    #[test]
    fn report_is_json() {
        let m = model14();
        let p = bus3_partition(&m);
        let check = check_theorem2(&m, &p).unwrap();
        let text = oracle_report(&m.net, &m.layout, &check.oracle);
        let v: serde_json::Value = serde_json::from_str(&text).unwrap();
        assert_eq!(v["condition"], "true");
    }
}
