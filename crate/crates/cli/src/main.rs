//! Command-line front end for the radial workbench: exponent tables, phase
//! portraits, invariant manifold traces, solution-family structure, and the
//! closed-form rescaling check. All emission is byte-deterministic for a
//! given config.

use std::fs::{self, File};
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{Context, Result};
use clap::{Args, Parser, Subcommand, ValueEnum};
use serde::{Deserialize, Serialize};

use fowler_core::error::Error as CoreError;
use fowler_core::fowler::{PhasePoint, PiecewiseSystem, SideSystem};
use fowler_core::integrate::{
    integrate, write_trajectory_csv, Direction, EventSpec, FieldRef, Trajectory,
};
use fowler_core::manifolds::{
    equilibria, trace_manifold, BranchTag, Equilibrium, ManifoldBranch, Stability, TraceOptions,
};
use fowler_core::params::{ExponentSet, ProblemConfig, Regime};
use fowler_core::report::json_string;
use fowler_core::shooting::{
    find_structure, scaling_report, write_intersections_csv, write_thresholds_csv,
    BranchSummary, Family, StructureOptions, StructureReport,
};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

/// One flat document: the problem plus every knob a command might use, all
/// with defaults, so a report can echo the fully-resolved configuration.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct RunConfig {
    n: u32,
    eta: f64,
    k1: f64,
    q1: f64,
    delta1: f64,
    k2: f64,
    q2: f64,
    delta2: f64,
    #[serde(default = "defaults::rho")]
    rho: f64,
    #[serde(default = "defaults::family")]
    family: String,
    #[serde(default = "defaults::k_max")]
    k_max: usize,
    #[serde(default = "defaults::horizon")]
    horizon: f64,
    #[serde(default = "defaults::budget")]
    budget: f64,
    #[serde(default = "defaults::spiral_budget")]
    spiral_budget: f64,
    #[serde(default = "defaults::scan_points")]
    scan_points: usize,
    #[serde(default = "defaults::probes_per_interval")]
    probes_per_interval: usize,
    #[serde(default = "defaults::label_rel_tol")]
    label_rel_tol: f64,
    #[serde(default = "defaults::max_points")]
    max_points: usize,
    #[serde(default)]
    seed: u64,
    #[serde(default = "defaults::trajectories")]
    trajectories: usize,
    #[serde(default = "defaults::k_bar")]
    k_bar: f64,
    #[serde(default = "defaults::rho_bar")]
    rho_bar: f64,
}

mod defaults {
    use fowler_core::shooting::{DEFAULT_PROBE_HORIZON, DEFAULT_SCAN_POINTS, LABEL_REL_TOL};

    pub fn rho() -> f64 {
        1.0
    }
    pub fn family() -> String {
        "regular".into()
    }
    pub fn k_max() -> usize {
        2
    }
    pub fn horizon() -> f64 {
        DEFAULT_PROBE_HORIZON
    }
    pub fn budget() -> f64 {
        1e9
    }
    pub fn spiral_budget() -> f64 {
        1e3
    }
    pub fn scan_points() -> usize {
        DEFAULT_SCAN_POINTS
    }
    pub fn probes_per_interval() -> usize {
        8
    }
    pub fn label_rel_tol() -> f64 {
        LABEL_REL_TOL
    }
    pub fn max_points() -> usize {
        100_000
    }
    pub fn trajectories() -> usize {
        6
    }
    pub fn k_bar() -> f64 {
        1.0
    }
    pub fn rho_bar() -> f64 {
        1.0
    }
}

impl RunConfig {
    fn problem(&self) -> ProblemConfig {
        ProblemConfig {
            n: self.n,
            eta: self.eta,
            k1: self.k1,
            q1: self.q1,
            delta1: self.delta1,
            k2: self.k2,
            q2: self.q2,
            delta2: self.delta2,
            rho: self.rho,
        }
    }

    fn family(&self) -> Result<Family> {
        match self.family.as_str() {
            "regular" => Ok(Family::Regular),
            "decay" => Ok(Family::Decay),
            other => Err(CoreError::Domain(format!(
                "family must be \"regular\" or \"decay\", got \"{other}\""
            ))
            .into()),
        }
    }

    fn structure_options(&self) -> StructureOptions {
        StructureOptions {
            k_max: self.k_max,
            horizon: self.horizon,
            scan_points: self.scan_points,
            probes_per_interval: self.probes_per_interval,
            budget: self.budget,
            spiral_budget: self.spiral_budget,
            max_points: self.max_points,
            label_rel_tol: self.label_rel_tol,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
enum Format {
    Json,
    Csv,
    Both,
}

impl Format {
    fn json(self) -> bool {
        self != Format::Csv
    }
    fn csv(self) -> bool {
        self != Format::Json
    }
}

#[derive(Parser)]
#[command(
    name = "fowler",
    version,
    about = "Workbench for radial profiles of sign-changing reactions through their phase-plane form"
)]
struct Cli {
    #[command(subcommand)]
    cmd: Cmd,
}

#[derive(Args)]
struct CommonArgs {
    /// Flat TOML config; unknown keys are rejected
    #[arg(long)]
    config: PathBuf,
    /// Output directory; stdout-only summaries when omitted where possible
    #[arg(long)]
    out: Option<PathBuf>,
    #[arg(long, value_enum, default_value = "both")]
    format: Format,
}

#[derive(Args)]
struct StructureArgs {
    #[command(flatten)]
    common: CommonArgs,
    /// Refine thresholds 0..=k_max
    #[arg(long)]
    k_max: Option<usize>,
    /// Far-side integration span per probe, in log-radius
    #[arg(long)]
    horizon: Option<f64>,
    /// Arclength budget of the scanned branch
    #[arg(long)]
    budget: Option<f64>,
    /// Which label family to scan: regular (d) or decay (L)
    #[arg(long)]
    family: Option<String>,
}

#[derive(Args)]
struct PortraitArgs {
    #[command(flatten)]
    common: CommonArgs,
    /// Time span of the generic trajectories
    #[arg(long)]
    horizon: Option<f64>,
    /// Arclength budget per manifold branch
    #[arg(long)]
    budget: Option<f64>,
}

#[derive(Args)]
struct ScalingArgs {
    #[command(flatten)]
    common: CommonArgs,
    /// Coupling multiplier applied to both sides
    #[arg(long)]
    k_bar: Option<f64>,
    /// New switch radius
    #[arg(long)]
    rho_bar: Option<f64>,
    #[arg(long)]
    horizon: Option<f64>,
    #[arg(long)]
    budget: Option<f64>,
}

#[derive(Subcommand)]
enum Cmd {
    /// Derived exponents, regime, and portrait panel for each side
    Exponents(CommonArgs),
    /// Equilibria, manifold branches, and generic trajectories
    Portrait(PortraitArgs),
    /// Invariant manifold branches with seeding diagnostics
    Manifolds(PortraitArgs),
    /// Threshold structure of a one-parameter solution family
    Structure(StructureArgs),
    /// Rescaling check of the ground-state threshold, radius, and maximum
    ScalingCheck(ScalingArgs),
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let outcome = match cli.cmd {
        Cmd::Exponents(a) => cmd_exponents(a),
        Cmd::Portrait(a) => cmd_portrait(a),
        Cmd::Manifolds(a) => cmd_manifolds(a),
        Cmd::Structure(a) => cmd_structure(a),
        Cmd::ScalingCheck(a) => cmd_scaling(a),
    };
    match outcome {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(exit_code(&e))
        }
    }
}

fn exit_code(e: &anyhow::Error) -> u8 {
    if let Some(core) = e.downcast_ref::<CoreError>() {
        return match core {
            CoreError::Domain(_) => 2,
            CoreError::Regime(_) => 3,
            _ => 4,
        };
    }
    if e.downcast_ref::<toml::de::Error>().is_some() {
        return 2;
    }
    if let Some(io) = e.downcast_ref::<std::io::Error>() {
        // a missing or unreadable config is a config error; failures while
        // writing results are numerical-pipeline failures
        if io.kind() == std::io::ErrorKind::NotFound {
            return 2;
        }
    }
    4
}

fn load_config(path: &Path) -> Result<RunConfig> {
    let text = fs::read_to_string(path)
        .with_context(|| format!("reading config {}", path.display()))?;
    let cfg: RunConfig = toml::from_str(&text)
        .with_context(|| format!("parsing config {}", path.display()))?;
    Ok(cfg)
}

fn out_dir(out: &Option<PathBuf>) -> Result<Option<PathBuf>> {
    match out {
        None => Ok(None),
        Some(d) => {
            fs::create_dir_all(d).with_context(|| format!("creating {}", d.display()))?;
            Ok(Some(d.clone()))
        }
    }
}

fn write_file(dir: &Path, name: &str, contents: &str) -> Result<()> {
    let path = dir.join(name);
    fs::write(&path, contents).with_context(|| format!("writing {}", path.display()))?;
    Ok(())
}

fn regime_name(r: Regime) -> &'static str {
    match r {
        Regime::NodeUnstable => "unstable node",
        Regime::CenterUnstable => "center-unstable",
        Regime::Saddle => "saddle",
        Regime::CenterStable => "center-stable",
        Regime::NodeStable => "stable node",
    }
}

fn stability_name(s: Stability) -> &'static str {
    match s {
        Stability::NodeUnstable => "node-unstable",
        Stability::FocusUnstable => "focus-unstable",
        Stability::Saddle => "saddle",
        Stability::Center => "center",
        Stability::CenterUnstable => "center-unstable",
        Stability::CenterStable => "center-stable",
        Stability::FocusStable => "focus-stable",
        Stability::NodeStable => "node-stable",
    }
}

fn kind_name(k: fowler_core::manifolds::EquilibriumKind) -> &'static str {
    use fowler_core::manifolds::EquilibriumKind::*;
    match k {
        Origin => "origin",
        PPlus => "P+",
        PMinus => "P-",
    }
}

/// Which panel of the portrait family a side belongs to. Only the
/// positive-coupling saddle pictures split further by growth regime.
fn panel_note(k: f64, e: &ExponentSet) -> String {
    let sign = if k > 0.0 { "K>0" } else { "K<0" };
    let qualifier = if k > 0.0 && e.regime == Regime::Saddle {
        if e.hamiltonian {
            ", l=2^*"
        } else if e.l > e.sobolev {
            ", l>2^*"
        } else {
            ", l<2^*"
        }
    } else {
        ""
    };
    format!("{}, {} panel{}", regime_name(e.regime), sign, qualifier)
}

// ---------------------------------------------------------------------------
// exponents

#[derive(Serialize)]
struct SideReport {
    k_tilde: f64,
    panel: String,
    exponents: ExponentSet,
    equilibria: Vec<Equilibrium>,
}

#[derive(Serialize)]
struct ExponentsReport {
    config: RunConfig,
    side1: SideReport,
    side2: SideReport,
}

fn side_report(side: &SideSystem) -> SideReport {
    SideReport {
        k_tilde: side.k,
        panel: panel_note(side.k, &side.exp),
        exponents: side.exp,
        equilibria: equilibria(side),
    }
}

fn cmd_exponents(args: CommonArgs) -> Result<()> {
    let cfg = load_config(&args.config)?;
    let sys = PiecewiseSystem::from_config(&cfg.problem())?;
    let report = ExponentsReport {
        config: cfg,
        side1: side_report(&sys.side1),
        side2: side_report(&sys.side2),
    };
    let json = json_string(&report)?;
    for (label, side) in [("side 1", &report.side1), ("side 2", &report.side2)] {
        println!(
            "{label}: l = {:.6}, alpha = {:.6}, kappa = {:.6}, lambda = {:.6}, Lambda = {:.6} [{}]",
            side.exponents.l,
            side.exponents.alpha,
            side.exponents.kappa,
            side.exponents.lambda_lo,
            side.exponents.lambda_hi,
            side.panel,
        );
    }
    match out_dir(&args.out)? {
        Some(dir) => write_file(&dir, "exponents.json", &json)?,
        None => println!("{json}"),
    }
    Ok(())
}

// ---------------------------------------------------------------------------
// portrait and manifolds

const PORTRAIT_TAGS: [BranchTag; 4] = [
    BranchTag::UnstablePlus,
    BranchTag::UnstableMinus,
    BranchTag::StablePlus,
    BranchTag::StableMinus,
];

fn tag_file_stem(tag: BranchTag) -> &'static str {
    match tag {
        BranchTag::UnstablePlus => "unstable-plus",
        BranchTag::UnstableMinus => "unstable-minus",
        BranchTag::StablePlus => "stable-plus",
        BranchTag::StableMinus => "stable-minus",
    }
}

/// Traces every branch the regime admits; regime refusals are recorded, all
/// other failures propagate.
fn trace_all(
    side: &SideSystem,
    opts: &TraceOptions,
) -> Result<Vec<(BranchTag, std::result::Result<ManifoldBranch, String>)>> {
    let mut out = Vec::new();
    for tag in PORTRAIT_TAGS {
        match trace_manifold(side, tag, opts) {
            Ok(b) => out.push((tag, Ok(b))),
            Err(CoreError::Regime(msg)) => out.push((tag, Err(msg))),
            Err(e) => return Err(e.into()),
        }
    }
    Ok(out)
}

fn equilibria_csv(sys: &PiecewiseSystem) -> String {
    let mut s = String::from("side,kind,x,y,stability,E\n");
    for (no, side) in [(1u8, &sys.side1), (2u8, &sys.side2)] {
        for eq in equilibria(side) {
            s.push_str(&format!(
                "{},{},{:.16e},{:.16e},{},{:.16e}\n",
                no,
                kind_name(eq.kind),
                eq.location[0],
                eq.location[1],
                stability_name(eq.stability),
                eq.energy,
            ));
        }
    }
    s
}

#[derive(Serialize)]
struct ManifoldsReport {
    config: RunConfig,
    side1: Vec<BranchOutcome>,
    side2: Vec<BranchOutcome>,
}

#[derive(Serialize)]
struct BranchOutcome {
    tag: String,
    file: Option<String>,
    summary: Option<BranchSummary>,
    refused: Option<String>,
}

fn branch_outcomes(
    side_no: u8,
    traced: &[(BranchTag, std::result::Result<ManifoldBranch, String>)],
    dir: Option<&Path>,
    csv: bool,
) -> Result<Vec<BranchOutcome>> {
    let mut out = Vec::new();
    for (tag, res) in traced {
        match res {
            Ok(branch) => {
                let mut file = None;
                if let (Some(dir), true) = (dir, csv) {
                    let name = format!("side{}-{}.csv", side_no, tag_file_stem(*tag));
                    let f = File::create(dir.join(&name))
                        .with_context(|| format!("creating {name}"))?;
                    let mut w = BufWriter::new(f);
                    fowler_core::manifolds::write_branch_csv(&mut w, branch)?;
                    w.flush()?;
                    file = Some(name);
                }
                out.push(BranchOutcome {
                    tag: tag.label().to_string(),
                    file,
                    summary: Some(BranchSummary::of(branch)),
                    refused: None,
                });
            }
            Err(msg) => out.push(BranchOutcome {
                tag: tag.label().to_string(),
                file: None,
                summary: None,
                refused: Some(msg.clone()),
            }),
        }
    }
    Ok(out)
}

fn cmd_manifolds(args: PortraitArgs) -> Result<()> {
    let mut cfg = load_config(&args.common.config)?;
    if let Some(b) = args.budget {
        cfg.budget = b;
    }
    let sys = PiecewiseSystem::from_config(&cfg.problem())?;
    let opts = TraceOptions {
        max_arclength: cfg.spiral_budget.min(cfg.budget),
        max_points: cfg.max_points,
        ..TraceOptions::default()
    };
    let dir = out_dir(&args.common.out)?;
    let traced1 = trace_all(&sys.side1, &opts)?;
    let traced2 = trace_all(&sys.side2, &opts)?;
    let report = ManifoldsReport {
        config: cfg,
        side1: branch_outcomes(1, &traced1, dir.as_deref(), args.common.format.csv())?,
        side2: branch_outcomes(2, &traced2, dir.as_deref(), args.common.format.csv())?,
    };
    for (label, outcomes) in [("side 1", &report.side1), ("side 2", &report.side2)] {
        for o in outcomes {
            match (&o.summary, &o.refused) {
                (Some(s), _) => println!(
                    "{label} {}: {} points, {} sign changes, arclength {:.3e}, ends by {}",
                    o.tag, s.points, s.crossings, s.arclength, s.termination
                ),
                (None, Some(msg)) => println!("{label} {}: not traced ({msg})", o.tag),
                _ => {}
            }
        }
    }
    if args.common.format.json() {
        let json = json_string(&report)?;
        match &dir {
            Some(d) => write_file(d, "manifolds.json", &json)?,
            None => println!("{json}"),
        }
    }
    Ok(())
}

#[derive(Serialize)]
struct PortraitReport {
    config: RunConfig,
    side1: PortraitSide,
    side2: PortraitSide,
    files: Vec<String>,
}

#[derive(Serialize)]
struct PortraitSide {
    panel: String,
    exponents: ExponentSet,
    equilibria: Vec<Equilibrium>,
    branches: Vec<BranchOutcome>,
}

fn cmd_portrait(args: PortraitArgs) -> Result<()> {
    let mut cfg = load_config(&args.common.config)?;
    if let Some(h) = args.horizon {
        cfg.horizon = h;
    }
    if let Some(b) = args.budget {
        cfg.budget = b;
    }
    let sys = PiecewiseSystem::from_config(&cfg.problem())?;
    let dir = out_dir(&args.common.out)?;
    let mut files = Vec::new();

    let opts = TraceOptions {
        max_arclength: cfg.spiral_budget.min(cfg.budget),
        max_points: cfg.max_points,
        ..TraceOptions::default()
    };
    let traced1 = trace_all(&sys.side1, &opts)?;
    let traced2 = trace_all(&sys.side2, &opts)?;
    let csv = args.common.format.csv();
    let b1 = branch_outcomes(1, &traced1, dir.as_deref(), csv)?;
    let b2 = branch_outcomes(2, &traced2, dir.as_deref(), csv)?;
    files.extend(b1.iter().chain(&b2).filter_map(|o| o.file.clone()));

    if let (Some(d), true) = (&dir, csv) {
        write_file(d, "equilibria.csv", &equilibria_csv(&sys))?;
        files.push("equilibria.csv".into());

        // a deterministic sprinkle of generic trajectories per side
        let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
        let horizon = cfg.horizon.min(20.0);
        for (no, side) in [(1u8, &sys.side1), (2u8, &sys.side2)] {
            let scale = equilibria(side)
                .iter()
                .map(|e| e.location[0].abs())
                .fold(1.0f64, f64::max);
            for i in 0..cfg.trajectories {
                let r = scale * (0.4 + 1.6 * rng.gen::<f64>());
                let th = std::f64::consts::TAU * rng.gen::<f64>();
                let start = PhasePoint { x: r * th.cos(), y: r * th.sin(), t: 0.0 };
                for dir_tag in [Direction::Forward, Direction::Backward] {
                    let traj = run_generic(side, no, start, dir_tag, horizon)?;
                    let name = format!(
                        "side{}-traj{:02}-{}.csv",
                        no,
                        i,
                        match dir_tag {
                            Direction::Forward => "fwd",
                            Direction::Backward => "bwd",
                        }
                    );
                    let f = File::create(d.join(&name))
                        .with_context(|| format!("creating {name}"))?;
                    let mut w = BufWriter::new(f);
                    write_trajectory_csv(
                        &mut w,
                        FieldRef::Autonomous { system: side, label: no },
                        &traj,
                    )?;
                    w.flush()?;
                    files.push(name);
                }
            }
        }
    }

    let report = PortraitReport {
        side1: PortraitSide {
            panel: panel_note(sys.side1.k, &sys.side1.exp),
            exponents: sys.side1.exp,
            equilibria: equilibria(&sys.side1),
            branches: b1,
        },
        side2: PortraitSide {
            panel: panel_note(sys.side2.k, &sys.side2.exp),
            exponents: sys.side2.exp,
            equilibria: equilibria(&sys.side2),
            branches: b2,
        },
        config: cfg,
        files,
    };
    println!(
        "side 1: {} | side 2: {} | {} files",
        report.side1.panel,
        report.side2.panel,
        report.files.len()
    );
    if args.common.format.json() {
        let json = json_string(&report)?;
        match &dir {
            Some(d) => write_file(d, "portrait.json", &json)?,
            None => println!("{json}"),
        }
    }
    Ok(())
}

fn run_generic(
    side: &SideSystem,
    no: u8,
    start: PhasePoint,
    dir: Direction,
    horizon: f64,
) -> Result<Trajectory> {
    let spec = EventSpec::default();
    match integrate(
        FieldRef::Autonomous { system: side, label: no },
        start,
        dir,
        horizon,
        &spec,
    ) {
        Ok(t) => Ok(t),
        // a backward leg may explode immediately from a generic start; keep
        // whatever prefix exists rather than failing the whole portrait
        Err(CoreError::StepFailure { .. }) => Ok(Trajectory {
            samples: vec![fowler_core::integrate::Sample {
                t: start.t,
                x: start.x,
                y: start.y,
                s: 0.0,
            }],
            events: Vec::new(),
            termination: fowler_core::integrate::EventKind::BlowUp,
            direction: dir,
            recorded: Vec::new(),
        }),
        Err(e) => Err(e.into()),
    }
}

// ---------------------------------------------------------------------------
// structure and scaling

fn cmd_structure(args: StructureArgs) -> Result<()> {
    let mut cfg = load_config(&args.common.config)?;
    if let Some(k) = args.k_max {
        cfg.k_max = k;
    }
    if let Some(h) = args.horizon {
        cfg.horizon = h;
    }
    if let Some(b) = args.budget {
        cfg.budget = b;
    }
    if let Some(f) = &args.family {
        cfg.family = f.clone();
    }
    let family = cfg.family()?;
    let sys = PiecewiseSystem::from_config(&cfg.problem())?;
    let report = find_structure(&sys, family, &cfg.structure_options())?;
    print_structure_summary(&report);

    let dir = out_dir(&args.common.out)?;
    if let Some(d) = &dir {
        if args.common.format.json() {
            write_file(d, "structure.json", &wrap_structure(&cfg, &report)?)?;
        }
        if args.common.format.csv() {
            let f = File::create(d.join("thresholds.csv"))?;
            let mut w = BufWriter::new(f);
            write_thresholds_csv(&mut w, &report)?;
            w.flush()?;
            let f = File::create(d.join("intersections.csv"))?;
            let mut w = BufWriter::new(f);
            write_intersections_csv(&mut w, &report.intersections)?;
            w.flush()?;
        }
    } else if args.common.format.json() {
        println!("{}", wrap_structure(&cfg, &report)?);
    }
    Ok(())
}

#[derive(Serialize)]
struct StructureDocument<'a> {
    config: &'a RunConfig,
    report: &'a StructureReport,
}

fn wrap_structure(cfg: &RunConfig, report: &StructureReport) -> Result<String> {
    Ok(json_string(&StructureDocument { config: cfg, report })?)
}

fn print_structure_summary(report: &StructureReport) {
    let letter = match report.family {
        Family::Regular => "D",
        Family::Decay => "L",
    };
    println!("{}", report.regime_note);
    for th in &report.thresholds {
        println!(
            "{}_{} = {:.12e}  (bracket width {:.1e}, {} sign changes below)",
            letter, th.k, th.label, th.tolerance, th.k
        );
    }
    match report.label_supremum {
        Some(s) => println!("label supremum ~ {s:.6e} (scanned branch blows up)"),
        None => println!("label reach {:.6e} within budget", report.label_reach),
    }
    println!(
        "intersections: {} | parity {} | windows {} | transversality {}",
        report.intersections.len(),
        report.parity_ok,
        report.windows_ok,
        report.transversal_ok
    );
    for w in &report.warnings {
        println!("note: {w}");
    }
}

fn cmd_scaling(args: ScalingArgs) -> Result<()> {
    let mut cfg = load_config(&args.common.config)?;
    if let Some(k) = args.k_bar {
        cfg.k_bar = k;
    }
    if let Some(r) = args.rho_bar {
        cfg.rho_bar = r;
    }
    if let Some(h) = args.horizon {
        cfg.horizon = h;
    }
    if let Some(b) = args.budget {
        cfg.budget = b;
    }
    let check = scaling_report(&cfg.problem(), cfg.k_bar, cfg.rho_bar, &cfg.structure_options())?;
    println!(
        "base:      D_0 = {:.12e}, R_0 = {:.12e}, U_0 = {:.12e}",
        check.base.d0, check.base.r0, check.base.u0
    );
    println!(
        "scaled:    D_0 = {:.12e}, R_0 = {:.12e}, U_0 = {:.12e}",
        check.scaled.d0, check.scaled.r0, check.scaled.u0
    );
    println!(
        "predicted: D_0 = {:.12e}, R_0 = {:.12e}, U_0 = {:.12e}",
        check.predicted.d0, check.predicted.r0, check.predicted.u0
    );
    println!(
        "rel err:   D_0 = {:.3e}, R_0 = {:.3e}, U_0 = {:.3e}",
        check.rel_err.d0, check.rel_err.r0, check.rel_err.u0
    );

    #[derive(Serialize)]
    struct ScalingDocument<'a> {
        config: &'a RunConfig,
        check: &'a fowler_core::shooting::ScalingCheck,
    }
    let json = json_string(&ScalingDocument { config: &cfg, check: &check })?;
    match out_dir(&args.common.out)? {
        Some(d) => write_file(&d, "scaling.json", &json)?,
        None => {
            if args.common.format.json() {
                println!("{json}");
            }
        }
    }
    Ok(())
}
