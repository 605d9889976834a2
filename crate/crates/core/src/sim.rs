//! Monte Carlo experiments: SNR sweeps of the iterative estimator under
//! framing, conservative and no attack.
//!
//! Run `r` of an experiment draws its true state and a standard-normal noise
//! pattern from stream `r` of the seed. The same draws are reused for every
//! SNR and every attack, and the noise pattern is scaled by each SNR's
//! per-meter standard deviation. Results do not depend on the number of
//! worker threads.

use std::fmt::Write as _;
use std::path::Path;
use std::sync::Arc;

use nalgebra::DVector;
use rand::Rng;
use rand_distr::StandardNormal;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::acmodel::{AcModel, AcState};
use crate::attack::{conservative_attack, framing_direction, scale_attack, AttackPlan, AttackScale, ConservativeAttack};
use crate::dcmodel::{noise_model, LinearModel, NoiseModel, NoiseProfile};
use crate::error::{Error, Result};
use crate::estimator::{iterative_estimation, EstimationModel};
use crate::netmodel::{full_meter_layout, load_case, GridNetwork, MeterLayout};
use crate::oracle::{orient_plan, TargetDirection};
use crate::rng::stream_rng;

pub const DEFAULT_SEED: u64 = 20_110;
pub const DEFAULT_ALPHA: f64 = 0.04;
pub const DEFAULT_ANGLE_STD_DEG: f64 = 1.15;
pub const DEFAULT_MAGNITUDE_STD_PU: f64 = 0.01;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "lowercase")]
pub enum ModelKind {
    Dc,
    #[default]
    Ac,
}

impl ModelKind {
    pub fn as_str(self) -> &'static str {
        match self {
            ModelKind::Dc => "dc",
            ModelKind::Ac => "ac",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum AttackKind {
    None,
    Framing,
    Conservative,
}

impl AttackKind {
    pub fn as_str(self) -> &'static str {
        match self {
            AttackKind::None => "none",
            AttackKind::Framing => "framing",
            AttackKind::Conservative => "conservative",
        }
    }

    fn parse(s: &str) -> Option<Self> {
        match s {
            "none" => Some(AttackKind::None),
            "framing" => Some(AttackKind::Framing),
            "conservative" => Some(AttackKind::Conservative),
            _ => None,
        }
    }
}

fn default_alpha() -> f64 {
    DEFAULT_ALPHA
}
fn default_seed() -> u64 {
    DEFAULT_SEED
}
fn default_beta() -> f64 {
    crate::attack::DEFAULT_BETA
}
fn default_angle_std() -> f64 {
    DEFAULT_ANGLE_STD_DEG
}
fn default_magnitude_std() -> f64 {
    DEFAULT_MAGNITUDE_STD_PU
}
fn default_attacks() -> Vec<AttackKind> {
    vec![AttackKind::None, AttackKind::Conservative, AttackKind::Framing]
}

/// One attack scenario of an experiment.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ScenarioConfig {
    pub name: String,
    /// Adversary meters, e.g. `"2-3,3-4,4-3"`.
    #[serde(default)]
    pub adversary: String,
    /// Framed meters.
    #[serde(default)]
    pub framed: String,
    #[serde(default = "default_attacks")]
    pub attacks: Vec<AttackKind>,
    /// Framing magnitudes, `‖a‖₁` as a percentage of `‖z‖₁`.
    #[serde(default)]
    pub magnitudes_pct: Vec<f64>,
    /// Orient the framing attack so this bus angle moves with the given sign,
    /// e.g. `"+12"` or `"-3"`.
    #[serde(default)]
    pub target: Option<String>,
}

/// A full experiment read from TOML.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    /// Built-in case name or path to a CDF file.
    pub case: String,
    #[serde(default)]
    pub model: ModelKind,
    pub snr_db: Vec<f64>,
    pub runs: usize,
    #[serde(default = "default_alpha")]
    pub alpha: f64,
    #[serde(default = "default_seed")]
    pub seed: u64,
    /// Conservative attack budget as a fraction of the detection threshold.
    #[serde(default = "default_beta")]
    pub beta: f64,
    #[serde(default = "default_angle_std")]
    pub angle_std_deg: f64,
    #[serde(default = "default_magnitude_std")]
    pub magnitude_std_pu: f64,
    /// Relative noise variances per meter (DC rows, or extended AC rows).
    #[serde(default)]
    pub noise_weights: Option<Vec<f64>>,
    #[serde(default)]
    pub scenario: Vec<ScenarioConfig>,
}

impl ExperimentConfig {
    pub fn from_toml(text: &str) -> Result<Self> {
        let cfg: ExperimentConfig = toml::from_str(text).map_err(|e| Error::Config(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::from_toml(&std::fs::read_to_string(path)?)
    }

    pub fn validate(&self) -> Result<()> {
        if self.runs == 0 {
            return Err(Error::Config("runs must be at least 1".into()));
        }
        if !(self.alpha > 0.0 && self.alpha < 1.0) {
            return Err(Error::Config(format!("alpha must lie in (0, 1), got {}", self.alpha)));
        }
        if self.snr_db.is_empty() || self.snr_db.iter().any(|s| !s.is_finite()) {
            return Err(Error::Config("snr_db must be a nonempty list of finite values".into()));
        }
        if !(self.beta > 0.0) {
            return Err(Error::Config("beta must be positive".into()));
        }
        if self.angle_std_deg < 0.0 || self.magnitude_std_pu < 0.0 {
            return Err(Error::Config("state standard deviations must be nonnegative".into()));
        }
        for s in &self.scenario {
            if s.attacks.is_empty() {
                return Err(Error::Config(format!("scenario '{}' lists no attacks", s.name)));
            }
            if s.name.contains([',', '"', '\n']) {
                return Err(Error::Config(format!("scenario name '{}' may not contain commas or quotes", s.name)));
            }
            if s.attacks.contains(&AttackKind::Framing) && s.magnitudes_pct.is_empty() {
                return Err(Error::Config(format!("scenario '{}' has a framing attack but no magnitudes", s.name)));
            }
            if s.magnitudes_pct.iter().any(|p| !p.is_finite() || *p < 0.0) {
                return Err(Error::Config("magnitudes must be nonnegative".into()));
            }
        }
        Ok(())
    }
}

/// True state around the operating point: angles (non-reference) get
/// `N(0, angle_std)` perturbations, magnitudes `N(0, magnitude_std)`.
pub fn gen_true_state<R: Rng + ?Sized>(net: &GridNetwork, angle_std_rad: f64, magnitude_std: f64, rng: &mut R) -> AcState {
    let mut s = AcState::operating(net);
    for b in 0..net.bus_count() {
        let ga: f64 = rng.sample(StandardNormal);
        let gv: f64 = rng.sample(StandardNormal);
        if b != net.reference_bus {
            s.angles[b] += angle_std_rad * ga;
        }
        s.magnitudes[b] += magnitude_std * gv;
    }
    s
}

/// Aggregated statistics of one `(scenario, snr, attack, magnitude)` cell.
#[derive(Debug, Clone, PartialEq)]
pub struct CurvePoint {
    pub scenario: String,
    pub model: ModelKind,
    pub snr_db: f64,
    pub attack: AttackKind,
    /// `‖a‖₁ / ‖z‖₁` in percent (0 for no attack).
    pub magnitude_pct: f64,
    pub runs_ok: usize,
    pub runs_failed: usize,
    /// Mean of `‖x̂ − x‖₂` over the angle part, radians.
    pub mean_err_l2_rad: f64,
    /// Standard error of that mean, radians.
    pub std_err: f64,
    pub mean_n: f64,
    /// Fraction of successful runs whose first J-test fired.
    pub detection_rate: f64,
    /// Mean signed angle error per bus, degrees (reference bus 0).
    pub mean_perturbation_deg: Vec<f64>,
    /// Fraction of successful runs that removed each row.
    pub removal_fraction: Vec<f64>,
}

impl CurvePoint {
    pub fn mean_err_l2_deg(&self) -> f64 {
        self.mean_err_l2_rad.to_degrees()
    }
}

/// All points of an experiment in a stable order.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct ErrorCurve {
    pub points: Vec<CurvePoint>,
}

impl ErrorCurve {
    pub fn find(&self, scenario: &str, attack: AttackKind, snr_db: f64, magnitude_pct: Option<f64>) -> Option<&CurvePoint> {
        self.points.iter().find(|p| {
            p.scenario == scenario
                && p.attack == attack
                && p.snr_db == snr_db
                && magnitude_pct.is_none_or(|m| (p.magnitude_pct - m).abs() < 1e-9)
        })
    }
}

struct RunOutcome {
    err: DVector<f64>,
    n: usize,
    detected: bool,
    removed: Vec<usize>,
}

enum Estimator {
    Dc(LinearModel),
    Ac(AcModel),
}

impl Estimator {
    fn as_model(&self) -> &dyn EstimationModel {
        match self {
            Estimator::Dc(m) => m,
            Estimator::Ac(m) => m,
        }
    }
}

/// Planned attack vector of one curve, in the estimator's row layout.
struct Curve {
    attack: AttackKind,
    magnitude_pct: f64,
    vector: Option<DVector<f64>>,
}

struct Setup {
    net: Arc<GridNetwork>,
    layout: MeterLayout,
}

fn setup(cfg: &ExperimentConfig) -> Result<Setup> {
    let net = Arc::new(load_case(&cfg.case)?);
    let layout = full_meter_layout(&net);
    Ok(Setup { net, layout })
}

fn profile(cfg: &ExperimentConfig, rows: usize) -> Result<NoiseProfile> {
    match &cfg.noise_weights {
        None => Ok(NoiseProfile::Uniform),
        Some(w) if w.len() == rows => Ok(NoiseProfile::Weights(w.clone())),
        Some(w) => Err(Error::Config(format!("noise_weights has {} entries, expected {rows}", w.len()))),
    }
}

/// Estimator and DC design model for one SNR. The design model carries the
/// per-meter noise of the estimator's active rows.
fn models_for_snr(cfg: &ExperimentConfig, s: &Setup, snr: f64) -> Result<(Estimator, LinearModel)> {
    let dc_unit = LinearModel::with_unit_noise(s.net.clone(), s.layout.clone())?;
    match cfg.model {
        ModelKind::Dc => {
            let nominal = dc_unit.nominal_measurements();
            let nm = noise_model(s.layout.len(), &profile(cfg, s.layout.len())?, snr, &nominal)?;
            let dc = dc_unit.with_noise(nm)?;
            Ok((Estimator::Dc(dc.clone()), dc))
        }
        ModelKind::Ac => {
            let ac_unit = AcModel::with_unit_noise(s.net.clone(), s.layout.clone())?;
            let nominal = ac_unit.measure(&AcState::operating(&s.net));
            let nm = noise_model(ac_unit.len(), &profile(cfg, ac_unit.len())?, snr, &nominal)?;
            let stds: Vec<f64> = (0..s.layout.len()).map(|i| nm.std(i)).collect();
            let design = dc_unit.with_noise(NoiseModel::from_std(&stds)?)?;
            Ok((Estimator::Ac(ac_unit.with_noise(nm)?), design))
        }
    }
}

/// `‖z‖₁` of the noiseless measurements at the operating point. In AC mode
/// this covers every extended row, active and reactive.
fn nominal_l1(cfg: &ExperimentConfig, s: &Setup) -> Result<f64> {
    Ok(match cfg.model {
        ModelKind::Dc => LinearModel::with_unit_noise(s.net.clone(), s.layout.clone())?.nominal_measurements().lp_norm(1),
        ModelKind::Ac => {
            let ac = AcModel::with_unit_noise(s.net.clone(), s.layout.clone())?;
            ac.measure(&AcState::operating(&s.net)).lp_norm(1)
        }
    })
}

/// Framing plan for a scenario, oriented toward its target when given.
pub fn scenario_plan(model: &LinearModel, scenario: &ScenarioConfig) -> Result<AttackPlan> {
    let net = &model.net;
    let sa = net.parse_meter_list(&scenario.adversary)?;
    let sf = net.parse_meter_list(&scenario.framed)?;
    let mut plan = framing_direction(model, &sa, &sf)?;
    if let Some(t) = &scenario.target {
        orient_plan(model, &mut plan, TargetDirection::parse(net, t)?)?;
    }
    Ok(plan)
}

fn curves_for(
    cfg: &ExperimentConfig,
    scenario: &ScenarioConfig,
    design: &LinearModel,
    plan: Option<&AttackPlan>,
    nominal_l1: f64,
) -> Result<Vec<Curve>> {
    let mut out = Vec::new();
    for &kind in &scenario.attacks {
        match kind {
            AttackKind::None => out.push(Curve { attack: kind, magnitude_pct: 0.0, vector: Some(DVector::zeros(design.meter_count())) }),
            AttackKind::Framing => {
                let plan = plan.expect("plan built for framing scenarios");
                for &pct in &scenario.magnitudes_pct {
                    let a = scale_attack(plan, AttackScale::Percent { pct, nominal_l1 })?;
                    out.push(Curve { attack: kind, magnitude_pct: pct, vector: Some(a) });
                }
            }
            AttackKind::Conservative => {
                let sa = design.net.parse_meter_list(&scenario.adversary)?;
                match conservative_attack(design, &sa, cfg.alpha, cfg.beta)? {
                    ConservativeAttack::Bounded { a, .. } => {
                        let pct = 100.0 * a.lp_norm(1) / nominal_l1;
                        out.push(Curve { attack: kind, magnitude_pct: pct, vector: Some(a) });
                    }
                    ConservativeAttack::CovertCapable => {
                        out.push(Curve { attack: kind, magnitude_pct: f64::NAN, vector: None });
                    }
                }
            }
        }
    }
    Ok(out)
}

fn one_run(
    cfg: &ExperimentConfig,
    net: &GridNetwork,
    est: &Estimator,
    noise: &NoiseModel,
    curves: &[Curve],
    run: usize,
) -> Vec<Option<RunOutcome>> {
    let mut rng = stream_rng(cfg.seed, run as u64);
    let truth = gen_true_state(net, cfg.angle_std_deg.to_radians(), cfg.magnitude_std_pu, &mut rng);
    let len = noise.len();
    let pattern: Vec<f64> = (0..len).map(|_| rng.sample(StandardNormal)).collect();
    let (clean, x_true) = match est {
        Estimator::Dc(m) => {
            let x = truth.reduced_angles(net);
            (&m.h * &x, x)
        }
        Estimator::Ac(m) => (m.measure(&truth), truth.reduced_angles(net)),
    };
    let noisy = DVector::from_fn(len, |i, _| clean[i] + noise.std(i) * pattern[i]);
    let n_ang = est.as_model().angle_dim();
    curves
        .iter()
        .map(|c| {
            let a = c.vector.as_ref()?;
            let mut z = noisy.clone();
            for (i, v) in a.iter().enumerate() {
                z[i] += v;
            }
            let trace = iterative_estimation(est.as_model(), &z, cfg.alpha).ok()?;
            let err = trace.final_estimate.rows(0, n_ang) - &x_true;
            Some(RunOutcome { err, n: trace.n(), detected: trace.detected(), removed: trace.removal_sequence.clone() })
        })
        .collect()
}

fn aggregate(
    scenario: &str,
    cfg: &ExperimentConfig,
    net: &GridNetwork,
    snr: f64,
    curve: &Curve,
    rows: usize,
    outcomes: &[Option<&RunOutcome>],
) -> CurvePoint {
    let ok: Vec<&RunOutcome> = outcomes.iter().filter_map(|o| *o).collect();
    let k = ok.len();
    let nb = net.bus_count();
    let mut mean_perturbation_deg = vec![0.0; nb];
    let mut removal_fraction = vec![0.0; rows];
    let (mut sum, mut sumsq, mut sum_n, mut det) = (0.0, 0.0, 0.0, 0usize);
    for o in &ok {
        let e = o.err.norm();
        sum += e;
        sumsq += e * e;
        sum_n += o.n as f64;
        det += o.detected as usize;
        for (c, v) in o.err.iter().enumerate() {
            mean_perturbation_deg[net.column_bus(c)] += v.to_degrees();
        }
        for &r in &o.removed {
            removal_fraction[r] += 1.0;
        }
    }
    let kf = k as f64;
    let mean = if k > 0 { sum / kf } else { f64::NAN };
    let std_err = if k > 1 { ((sumsq - kf * mean * mean).max(0.0) / (kf - 1.0)).sqrt() / kf.sqrt() } else { f64::NAN };
    if k > 0 {
        mean_perturbation_deg.iter_mut().for_each(|v| *v /= kf);
        removal_fraction.iter_mut().for_each(|v| *v /= kf);
    }
    CurvePoint {
        scenario: scenario.to_string(),
        model: cfg.model,
        snr_db: snr,
        attack: curve.attack,
        magnitude_pct: curve.magnitude_pct,
        runs_ok: k,
        runs_failed: outcomes.len() - k,
        mean_err_l2_rad: mean,
        std_err,
        mean_n: if k > 0 { sum_n / kf } else { f64::NAN },
        detection_rate: if k > 0 { det as f64 / kf } else { f64::NAN },
        mean_perturbation_deg,
        removal_fraction,
    }
}

/// Runs one scenario of `cfg` over every SNR.
pub fn run_scenario(cfg: &ExperimentConfig, scenario: &ScenarioConfig) -> Result<ErrorCurve> {
    cfg.validate()?;
    let s = setup(cfg)?;
    let l1 = nominal_l1(cfg, &s)?;
    let mut points = Vec::new();
    let mut plan: Option<AttackPlan> = None;
    for &snr in &cfg.snr_db {
        let (est, design) = models_for_snr(cfg, &s, snr)?;
        if plan.is_none() && scenario.attacks.contains(&AttackKind::Framing) {
            plan = Some(scenario_plan(&design, scenario)?);
        }
        let mut curves = curves_for(cfg, scenario, &design, plan.as_ref(), l1)?;
        let rows = est.as_model().meter_count();
        if let Estimator::Ac(ac) = &est {
            for c in &mut curves {
                c.vector = c.vector.as_ref().map(|a| ac.embed_active(a));
            }
        }
        let noise = match &est {
            Estimator::Dc(m) => m.noise.clone(),
            Estimator::Ac(m) => m.noise.clone(),
        };
        let results: Vec<Vec<Option<RunOutcome>>> = (0..cfg.runs)
            .into_par_iter()
            .map(|r| one_run(cfg, &s.net, &est, &noise, &curves, r))
            .collect();
        for (ci, curve) in curves.iter().enumerate() {
            let col: Vec<Option<&RunOutcome>> = results.iter().map(|r| r[ci].as_ref()).collect();
            points.push(aggregate(&scenario.name, cfg, &s.net, snr, curve, rows, &col));
        }
    }
    Ok(ErrorCurve { points })
}

/// Runs every scenario; points are ordered by scenario, SNR, then curve.
pub fn run_experiment(cfg: &ExperimentConfig) -> Result<ErrorCurve> {
    let mut all = ErrorCurve::default();
    for sc in &cfg.scenario {
        all.points.extend(run_scenario(cfg, sc)?.points);
    }
    Ok(all)
}

/// `(bus number, mean angle perturbation in degrees)` sorted by decreasing
/// magnitude.
pub fn perturbation_profile(net: &GridNetwork, point: &CurvePoint) -> Vec<(u32, f64)> {
    let mut v: Vec<(u32, f64)> = point
        .mean_perturbation_deg
        .iter()
        .enumerate()
        .filter(|&(b, _)| b != net.reference_bus)
        .map(|(b, &d)| (net.buses[b].number, d))
        .collect();
    v.sort_by(|a, b| b.1.abs().total_cmp(&a.1.abs()));
    v
}

pub const CSV_HEADER: &str = "scenario,model,snr_db,attack,magnitude_pct,runs_ok,runs_failed,mean_err_l2_rad,std_err,mean_N,detection_rate,mean_err_l2_deg";

/// CSV text for `curve`, one row per point.
pub fn to_csv(curve: &ErrorCurve) -> String {
    let mut out = String::from(CSV_HEADER);
    out.push('\n');
    for p in &curve.points {
        writeln!(
            out,
            "{},{},{},{},{},{},{},{},{},{},{},{}",
            p.scenario,
            p.model.as_str(),
            p.snr_db,
            p.attack.as_str(),
            p.magnitude_pct,
            p.runs_ok,
            p.runs_failed,
            p.mean_err_l2_rad,
            p.std_err,
            p.mean_n,
            p.detection_rate,
            p.mean_err_l2_deg()
        )
        .expect("write to string");
    }
    out
}

pub fn export_csv(curve: &ErrorCurve, path: &Path) -> Result<()> {
    std::fs::write(path, to_csv(curve))?;
    Ok(())
}

/// A parsed CSV row.
#[derive(Debug, Clone, PartialEq)]
pub struct CsvRow {
    pub scenario: String,
    pub model: ModelKind,
    pub snr_db: f64,
    pub attack: AttackKind,
    pub magnitude_pct: f64,
    pub runs_ok: usize,
    pub runs_failed: usize,
    pub mean_err_l2_rad: f64,
    pub std_err: f64,
    pub mean_n: f64,
    pub detection_rate: f64,
    pub mean_err_l2_deg: f64,
}

pub fn parse_csv(text: &str) -> Result<Vec<CsvRow>> {
    let mut lines = text.lines();
    match lines.next() {
        Some(h) if h.trim() == CSV_HEADER => {}
        _ => return Err(Error::InvalidInput("missing or unexpected CSV header".into())),
    }
    let mut out = Vec::new();
    for (k, line) in lines.enumerate().filter(|(_, l)| !l.trim().is_empty()) {
        let f: Vec<&str> = line.split(',').collect();
        let bad = || Error::InvalidInput(format!("malformed CSV row {}", k + 2));
        if f.len() != 12 {
            return Err(bad());
        }
        let num = |i: usize| f[i].parse::<f64>().map_err(|_| bad());
        let int = |i: usize| f[i].parse::<usize>().map_err(|_| bad());
        out.push(CsvRow {
            scenario: f[0].to_string(),
            model: match f[1] {
                "dc" => ModelKind::Dc,
                "ac" => ModelKind::Ac,
                _ => return Err(bad()),
            },
            snr_db: num(2)?,
            attack: AttackKind::parse(f[3]).ok_or_else(bad)?,
            magnitude_pct: num(4)?,
            runs_ok: int(5)?,
            runs_failed: int(6)?,
            mean_err_l2_rad: num(7)?,
            std_err: num(8)?,
            mean_n: num(9)?,
            detection_rate: num(10)?,
            mean_err_l2_deg: num(11)?,
        });
    }
    Ok(out)
}

pub fn read_csv(path: &Path) -> Result<Vec<CsvRow>> {
    parse_csv(&std::fs::read_to_string(path)?)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn fig3_dc(runs: usize) -> ExperimentConfig {
        ExperimentConfig::from_toml(&format!(
            r#"
case = "ieee14"
model = "dc"
snr_db = [30.0, 46.0]
runs = {runs}
seed = 7

[[scenario]]
name = "fig3"
adversary = "2-3,3-4,4-3"
framed = "3-2,2,3,4"
magnitudes_pct = [1.0, 2.0]
"#
        ))
        .unwrap()
    }

    #[test]
    fn config_validation() {
        let mut cfg = fig3_dc(10);
        cfg.runs = 0;
        assert!(matches!(cfg.validate(), Err(Error::Config(_))));
        assert!(ExperimentConfig::from_toml("case = \"ieee14\"\nsnr_db = []\nruns = 3\n").is_err());
        assert!(ExperimentConfig::from_toml("case = \"ieee14\"\nsnr_db = [30.0]\nruns = 3\nbogus = 1\n").is_err());
    }

    #[test]
    fn true_state_zero_variance_is_operating_point() {
        let net = load_case("ieee14").unwrap();
        let mut rng = stream_rng(1, 0);
        assert_eq!(gen_true_state(&net, 0.0, 0.0, &mut rng), AcState::operating(&net));
    }

    #[test]
    fn true_state_spread() {
        let net = load_case("ieee14").unwrap();
        let op = AcState::operating(&net);
        let mut rng = stream_rng(7, 0);
        let draws = 10_000;
        let (mut sq, mut vmin) = (0.0, f64::INFINITY);
        for _ in 0..draws {
            let s = gen_true_state(&net, DEFAULT_ANGLE_STD_DEG.to_radians(), DEFAULT_MAGNITUDE_STD_PU, &mut rng);
            let d = s.angles[5] - op.angles[5];
            sq += d * d;
            vmin = s.magnitudes.iter().copied().fold(vmin, f64::min);
            assert_eq!(s.angles[net.reference_bus], 0.0);
        }
        let std_deg = (sq / draws as f64).sqrt().to_degrees();
        assert!((std_deg / DEFAULT_ANGLE_STD_DEG - 1.0).abs() < 0.05, "{std_deg}");
        assert!(vmin > 0.0);
    }

    #[test]
    fn scenario_is_deterministic_and_shaped() {
        let cfg = fig3_dc(40);
        let a = run_experiment(&cfg).unwrap();
        let b = run_experiment(&cfg).unwrap();
        assert_eq!(to_csv(&a), to_csv(&b));
        // 2 SNRs × (none + conservative + 2 framing magnitudes)
        assert_eq!(a.points.len(), 8);
        let none46 = a.find("fig3", AttackKind::None, 46.0, None).unwrap();
        let fr46 = a.find("fig3", AttackKind::Framing, 46.0, Some(2.0)).unwrap();
        assert!(fr46.mean_err_l2_rad > 5.0 * none46.mean_err_l2_rad);
    }

    #[test]
    fn csv_round_trip() {
        let cfg = fig3_dc(5);
        let curve = run_experiment(&cfg).unwrap();
        let rows = parse_csv(&to_csv(&curve)).unwrap();
        assert_eq!(rows.len(), curve.points.len());
        for (r, p) in rows.iter().zip(&curve.points) {
            assert_eq!(r.mean_err_l2_rad.to_bits(), p.mean_err_l2_rad.to_bits());
            assert_eq!(r.snr_db, p.snr_db);
            assert_eq!(r.runs_ok, p.runs_ok);
        }
        assert_eq!(parse_csv(&to_csv(&ErrorCurve::default())).unwrap().len(), 0);
        assert_eq!(to_csv(&ErrorCurve::default()).lines().count(), 1);
    }
}
