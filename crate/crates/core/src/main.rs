use std::path::PathBuf;
use std::process::ExitCode;
use std::sync::Arc;

use clap::{Args, Parser, Subcommand};
use nalgebra::DVector;

use framing::acmodel::{AcModel, AcState};
use framing::attack::{framing_direction, scale_attack, AttackPlan, AttackScale, PlanFile};
use framing::dcmodel::LinearModel;
use framing::netmodel::{full_meter_layout, load_case, GridNetwork};
use framing::observability::{critical_set_from_cut, cut_listing, find_cuts_contraction, is_critical_set, is_observable, rank_without, Cut};
use framing::oracle::{
    check_theorem2, noiseless_iterative_se, oracle_report, orient_plan, predict_perturbation, sequence_labels, Partition,
    TargetDirection, Verdict,
};
use framing::sim::{export_csv, perturbation_profile, run_experiment, to_csv, AttackKind, ExperimentConfig, DEFAULT_SEED};
use framing::{Error, Result};

#[derive(Parser)]
#[command(name = "framing", version, about = "State estimation, bad-data processing and data-framing attacks")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args)]
struct CaseArg {
    /// Built-in case (ieee14, ieee118) or path to an IEEE CDF file.
    #[arg(long, default_value = "ieee14")]
    case: String,
}

#[derive(Subcommand)]
enum Command {
    /// Bus, line and meter counts with the observability verdict.
    NetInfo(CaseArg),
    /// Cuts found by random contraction, with their critical sets.
    Cuts {
        #[command(flatten)]
        case: CaseArg,
        #[arg(long, default_value_t = 20_000)]
        runs: usize,
        #[arg(long)]
        seed: Option<u64>,
    },
    /// Checks whether a meter set is critical.
    CriticalCheck {
        #[command(flatten)]
        case: CaseArg,
        /// Meters, e.g. "2,3,4,2-3,3-2,3-4,4-3".
        #[arg(long)]
        meters: String,
    },
    /// Designs the optimal framing direction and writes a plan file.
    AttackDesign {
        #[command(flatten)]
        case: CaseArg,
        #[arg(long)]
        adversary: String,
        #[arg(long)]
        framed: String,
        /// Attack size as a percentage of the nominal measurement l1 norm.
        #[arg(long, conflicts_with = "eta")]
        magnitude_pct: Option<f64>,
        /// Attack scale used directly.
        #[arg(long, allow_hyphen_values = true)]
        eta: Option<f64>,
        /// Orient the attack so this bus angle moves with the given sign, e.g. "+12".
        #[arg(long, allow_hyphen_values = true)]
        target: Option<String>,
        /// Nominal measurements used for --magnitude-pct.
        #[arg(long, value_enum, default_value = "ac")]
        model: ModelArg,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Noiseless prediction of an attack's effect on the state estimate.
    AttackPredict {
        #[command(flatten)]
        case: CaseArg,
        /// Plan file from attack-design.
        #[arg(long, conflicts_with_all = ["cut", "adversary"])]
        plan: Option<PathBuf>,
        /// Buses on one side of a cut; checks the half partition of its critical set.
        #[arg(long, conflicts_with = "adversary")]
        cut: Option<String>,
        #[arg(long, requires = "framed")]
        adversary: Option<String>,
        #[arg(long)]
        framed: Option<String>,
        #[arg(long, default_value_t = 1.0, allow_hyphen_values = true)]
        eta: f64,
        /// Write the full oracle report (JSON) here.
        #[arg(long)]
        report: Option<PathBuf>,
    },
    /// Runs an experiment config and prints a summary.
    SimRun {
        #[command(flatten)]
        opts: SimOpts,
    },
    /// Runs the SNR by magnitude grid of a config and writes CSV.
    SimSweep {
        #[command(flatten)]
        opts: SimOpts,
        /// Override the SNR list, e.g. "26,31,36,41,46".
        #[arg(long)]
        snr: Option<String>,
        /// Override every scenario's magnitude list.
        #[arg(long)]
        magnitudes: Option<String>,
    },
}

#[derive(Clone, Copy, clap::ValueEnum)]
enum ModelArg {
    Dc,
    Ac,
}

#[derive(Args)]
struct SimOpts {
    /// TOML experiment config.
    #[arg(long)]
    config: PathBuf,
    #[arg(long)]
    runs: Option<usize>,
    #[arg(long)]
    seed: Option<u64>,
    /// CSV output path; stdout when absent.
    #[arg(long)]
    out: Option<PathBuf>,
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli.command) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}

fn model_for(case: &str) -> Result<LinearModel> {
    let net = Arc::new(load_case(case)?);
    let layout = full_meter_layout(&net);
    LinearModel::with_unit_noise(net, layout)
}

fn seed_or_default(seed: Option<u64>) -> u64 {
    seed.unwrap_or_else(|| {
        eprintln!("seed={DEFAULT_SEED} (default)");
        DEFAULT_SEED
    })
}

fn run(cmd: Command) -> Result<()> {
    match cmd {
        Command::NetInfo(c) => net_info(&c.case),
        Command::Cuts { case, runs, seed } => cuts(&case.case, runs, seed_or_default(seed)),
        Command::CriticalCheck { case, meters } => critical_check(&case.case, &meters),
        Command::AttackDesign { case, adversary, framed, magnitude_pct, eta, target, model, out } => {
            attack_design(&case.case, &adversary, &framed, magnitude_pct, eta, target.as_deref(), model, out)
        }
        Command::AttackPredict { case, plan, cut, adversary, framed, eta, report } => {
            attack_predict(&case.case, plan, cut, adversary.zip(framed), eta, report)
        }
        Command::SimRun { opts } => sim(opts, None, None, true),
        Command::SimSweep { opts, snr, magnitudes } => sim(opts, snr, magnitudes, false),
    }
}

fn net_info(case: &str) -> Result<()> {
    let net = Arc::new(load_case(case)?);
    let layout = full_meter_layout(&net);
    let m = layout.len();
    let h = framing::dcmodel::build_h(&net, &layout);
    let (observable, rank) = match h {
        Ok(h) => (is_observable(&h), rank_without(&h, &[])),
        Err(Error::Unobservable(_)) => (false, 0),
        Err(e) => return Err(e),
    };
    println!("buses={} meters={m} observable={}", net.bus_count(), if observable { "yes" } else { "no" });
    println!("lines={} state_dim={} rank={rank}", net.line_count(), net.state_dim());
    println!("reference_bus={}", net.buses[net.reference_bus].number);
    Ok(())
}

fn cuts(case: &str, runs: usize, seed: u64) -> Result<()> {
    if runs == 0 {
        return Err(Error::InvalidInput("--runs must be at least 1".into()));
    }
    let model = model_for(case)?;
    let found = find_cuts_contraction(&model.net, runs, seed)?;
    let sizes: Vec<usize> = found
        .iter()
        .filter_map(|c| critical_set_from_cut(&model.net, &model.layout, c).ok())
        .map(|s| s.len())
        .collect();
    println!("cuts={} runs={runs} seed={seed}", found.len());
    if !sizes.is_empty() {
        println!("mean_critical_set_size={:.2}", sizes.iter().sum::<usize>() as f64 / sizes.len() as f64);
    }
    print!("{}", cut_listing(&model, &found)?);
    Ok(())
}

fn critical_check(case: &str, meters: &str) -> Result<()> {
    let model = model_for(case)?;
    let set = model.net.parse_meter_list(meters)?;
    let rows = model.layout.rows_of(&set)?;
    let critical = is_critical_set(&model, &set)?;
    println!("meters={} size={}", model.net.meter_list_label(&set), set.len());
    println!("rank_without={} state_dim={}", rank_without(&model.h, &rows), model.state_dim());
    println!("critical={}", if critical { "yes" } else { "no" });
    Ok(())
}

/// `‖z‖₁` of the noiseless measurements at the operating point. In AC mode
/// this covers every extended row, active and reactive.
fn nominal_l1(model: &LinearModel, kind: ModelArg) -> Result<f64> {
    Ok(match kind {
        ModelArg::Dc => model.nominal_measurements().lp_norm(1),
        ModelArg::Ac => {
            let ac = AcModel::with_unit_noise(model.net.clone(), model.layout.clone())?;
            ac.measure(&AcState::operating(&model.net)).lp_norm(1)
        }
    })
}

#[allow(clippy::too_many_arguments)]
fn attack_design(
    case: &str,
    adversary: &str,
    framed: &str,
    magnitude_pct: Option<f64>,
    eta: Option<f64>,
    target: Option<&str>,
    kind: ModelArg,
    out: Option<PathBuf>,
) -> Result<()> {
    let model = model_for(case)?;
    let sa = model.net.parse_meter_list(adversary)?;
    let sf = model.net.parse_meter_list(framed)?;
    let mut plan = framing_direction(&model, &sa, &sf)?;
    if let Some(t) = target {
        orient_plan(&model, &mut plan, TargetDirection::parse(&model.net, t)?)?;
    }
    if let Some(pct) = magnitude_pct {
        if !(pct.is_finite() && pct >= 0.0) {
            return Err(Error::InvalidInput("--magnitude-pct must be nonnegative".into()));
        }
        let a = scale_attack(&plan, AttackScale::Percent { pct, nominal_l1: nominal_l1(&model, kind)? })?;
        plan.eta = a.dot(&plan.direction);
    } else if let Some(e) = eta {
        plan.eta = e;
    }
    println!("feasible_dim={}", plan.feasible_dim);
    println!("objective={:.12e}", plan.objective_value);
    println!("kkt_residual={:.3e}", plan.kkt_residual);
    println!("eta={:.12e}", plan.eta);
    if plan.degenerate {
        println!("warning: the framing objective vanishes on the feasible subspace");
    }
    for m in &plan.s_adversary {
        let r = model.layout.index_of(m).expect("adversary meter in layout");
        println!("a[{}]={:.12e}", model.net.meter_label(m), plan.direction[r] * plan.eta);
    }
    let mut file = PlanFile::from_plan(&model.net, &model.layout, &plan, case);
    file.magnitude_pct = magnitude_pct;
    let json = serde_json::to_string_pretty(&file).map_err(|e| Error::InvalidInput(e.to_string()))?;
    match out {
        Some(p) => {
            std::fs::write(&p, json + "\n")?;
            println!("plan={}", p.display());
        }
        None => println!("{json}"),
    }
    Ok(())
}

fn print_angles(net: &GridNetwork, label: &str, v: &DVector<f64>) {
    println!("{label} (bus, radians, degrees):");
    for (c, x) in v.iter().enumerate() {
        let bus = net.buses[net.column_bus(c)].number;
        println!("  {bus:>4} {x:>+.9e} {:>+.6}", x.to_degrees());
    }
}

fn attack_predict(
    case: &str,
    plan_path: Option<PathBuf>,
    cut: Option<String>,
    sets: Option<(String, String)>,
    eta: f64,
    report: Option<PathBuf>,
) -> Result<()> {
    let model = model_for(case)?;
    let net = model.net.clone();
    let write_report = |o: &framing::oracle::OracleResult| -> Result<()> {
        if let Some(p) = &report {
            std::fs::write(p, oracle_report(&net, &model.layout, o) + "\n")?;
        }
        Ok(())
    };
    if let Some(side) = cut {
        let buses: Vec<usize> = side
            .split(',')
            .map(|t| {
                let n: u32 = t.trim().parse().map_err(|_| Error::InvalidInput(format!("bad bus number '{t}'")))?;
                net.bus_index(n).ok_or_else(|| Error::InvalidInput(format!("unknown bus {n}")))
            })
            .collect::<Result<_>>()?;
        let cut = Cut::from_side(&net, &buses)?;
        let p = Partition::from_cut(&model, &cut)?;
        let check = check_theorem2(&model, &p)?;
        write_report(&check.oracle)?;
        println!("s1={}", net.meter_list_label(&p.s1.members));
        println!("s2={}", net.meter_list_label(&p.s2.members));
        println!("branches={}", check.oracle.branch_count());
        for s in &check.oracle.removal_sequences {
            println!("sequence={}", sequence_labels(&net, &model.layout, s).join(","));
        }
        let verdict = match check.verdict {
            Verdict::Holds => "true",
            Verdict::Fails => "false",
            Verdict::Unknown => "unknown",
        };
        println!("condition={verdict}");
        print_angles(&net, "delta_x", &p.delta_x);
        if let (Some(y), Some(c)) = (&check.y, &check.complement) {
            print_angles(&net, "y", &(y * eta));
            print_angles(&net, "delta_x_minus_y", &(c * eta));
            Ok(())
        } else {
            Err(Error::OracleInconclusive(format!("condition={verdict}")))
        }
    } else {
        let plan: AttackPlan = if let Some(p) = plan_path {
            let text = std::fs::read_to_string(&p)?;
            let file: PlanFile = serde_json::from_str(&text).map_err(|e| Error::InvalidInput(format!("{}: {e}", p.display())))?;
            file.to_plan(&model)?
        } else if let Some((a, f)) = sets {
            let mut plan = framing_direction(&model, &net.parse_meter_list(&a)?, &net.parse_meter_list(&f)?)?;
            plan.eta = eta;
            plan
        } else {
            return Err(Error::InvalidInput("give --plan, --cut, or --adversary with --framed".into()));
        };
        let oracle = noiseless_iterative_se(&model, &plan.direction)?;
        write_report(&oracle)?;
        println!("branches={}", oracle.branch_count());
        for s in &oracle.removal_sequences {
            println!("sequence={}", sequence_labels(&net, &model.layout, s).join(","));
        }
        println!("condition={}", if oracle.truncated { "unknown" } else if oracle.condition_holds { "true" } else { "false" });
        let y = predict_perturbation(&model, &plan)?;
        println!("eta={:.12e}", plan.eta);
        print_angles(&net, "y", &y);
        Ok(())
    }
}

fn parse_list(text: &str, what: &str) -> Result<Vec<f64>> {
    text.split(',')
        .map(|t| t.trim().parse::<f64>().map_err(|_| Error::InvalidInput(format!("bad {what} value '{t}'"))))
        .collect()
}

fn sim(opts: SimOpts, snr: Option<String>, magnitudes: Option<String>, summary: bool) -> Result<()> {
    let mut cfg = ExperimentConfig::load(&opts.config)?;
    if let Some(r) = opts.runs {
        cfg.runs = r;
    }
    if let Some(s) = opts.seed {
        cfg.seed = s;
    }
    if let Some(s) = snr {
        cfg.snr_db = parse_list(&s, "SNR")?;
    }
    if let Some(m) = magnitudes {
        let mags = parse_list(&m, "magnitude")?;
        for sc in &mut cfg.scenario {
            sc.magnitudes_pct = mags.clone();
        }
    }
    cfg.validate()?;
    eprintln!("seed={} runs={} model={}", cfg.seed, cfg.runs, cfg.model.as_str());
    let curve = run_experiment(&cfg)?;
    match &opts.out {
        Some(p) => export_csv(&curve, p)?,
        None if !summary => print!("{}", to_csv(&curve)),
        None => {}
    }
    if summary {
        let net = load_case(&cfg.case)?;
        println!("scenario model snr_db attack magnitude_pct runs_ok runs_failed mean_err_deg mean_N detection_rate top_buses");
        for p in &curve.points {
            let top = if p.attack == AttackKind::None {
                String::from("-")
            } else {
                perturbation_profile(&net, p)
                    .iter()
                    .take(3)
                    .map(|(b, d)| format!("{b}:{d:+.3}"))
                    .collect::<Vec<_>>()
                    .join(",")
            };
            println!(
                "{} {} {} {} {:.3} {} {} {:.6} {:.3} {:.4} {}",
                p.scenario,
                p.model.as_str(),
                p.snr_db,
                p.attack.as_str(),
                p.magnitude_pct,
                p.runs_ok,
                p.runs_failed,
                p.mean_err_l2_deg(),
                p.mean_n,
                p.detection_rate,
                top
            );
        }
    }
    Ok(())
}
