mod emit;
mod select;

use std::path::PathBuf;
use std::process::ExitCode;

use anyhow::Context;
use clap::{Args, Parser, Subcommand};
use serde::Serialize;
use strata_core::config::Config;
use strata_core::geom::V2;
use strata_core::sl2::Mat2;
use strata_core::{closing, cyl, nondiv, saddle, surface, tri};

use emit::{resolve_out_dir, write_csv, write_json};
use select::SurfaceSel;

#[derive(Parser, Debug)]
#[command(
    name = "strata-lab",
    version,
    about = "Experiments on genus-2 translation surfaces: saddle connections, \
             injectivity radius, nondivergence measurements, Margulis functions, \
             and Veech-group element searches."
)]
struct Cli {
    /// Output directory for result files (default: $STRATA_LAB_OUT, else `.`).
    #[arg(long, global = true)]
    out: Option<PathBuf>,
    /// Seed for the sampling subcommands. Identical argv and seed give
    /// byte-identical outputs (timestamps live only in metadata).
    #[arg(long, global = true, default_value_t = 0)]
    seed: u64,
    /// Cap the worker-thread count (default: one per core).
    #[arg(long, global = true)]
    jobs: Option<usize>,
    /// Override a named constant, e.g. `--constant nu=0.4` (repeatable).
    #[arg(long = "constant", global = true, value_name = "NAME=VALUE")]
    constants: Vec<String>,
    /// Override a named budget, e.g. `--budget flips=500000` (repeatable).
    #[arg(long = "budget", global = true, value_name = "NAME=VALUE")]
    budgets: Vec<String>,
    #[command(subcommand)]
    cmd: Cmd,
}

#[derive(Subcommand, Debug)]
enum Cmd {
    /// Validate or serialize surfaces.
    #[command(subcommand)]
    Surface(SurfaceCmd),
    /// Saddle-connection queries.
    #[command(subcommand)]
    Sc(ScCmd),
    /// Injectivity radius, optionally after the deformation a_t u_s.
    Inj(InjArgs),
    /// Cylinder decomposition in a fixed direction.
    Cyl(CylArgs),
    /// Nondivergence measurements on flowed surfaces.
    #[command(subcommand)]
    Nondiv(NondivCmd),
    /// Margulis function over a near-return scan of the flowed box.
    Margulis(MargulisArgs),
    /// Veech-group membership tests and element searches.
    #[command(subcommand)]
    Veech(VeechCmd),
    /// Closed-orbit dichotomy runs.
    #[command(subcommand)]
    Closing(ClosingCmd),
}

#[derive(Subcommand, Debug)]
enum SurfaceCmd {
    /// Check stratum membership and report genus, cone angles, and area.
    Validate {
        #[command(flatten)]
        sel: SurfaceSel,
    },
    /// Emit the surface itself as JSON (for editing or reloading).
    Build {
        #[command(flatten)]
        sel: SurfaceSel,
    },
}

#[derive(Subcommand, Debug)]
enum ScCmd {
    /// Enumerate saddle connections up to a holonomy-length bound.
    Enum {
        #[command(flatten)]
        sel: SurfaceSel,
        /// Length bound.
        #[arg(long = "L")]
        l: f64,
    },
}

#[derive(Args, Debug)]
struct InjArgs {
    #[command(flatten)]
    sel: SurfaceSel,
    /// Diagonal-flow time; requires --s.
    #[arg(long, requires = "s", allow_hyphen_values = true)]
    t: Option<f64>,
    /// Horocycle shear; requires --t.
    #[arg(long, requires = "t", allow_hyphen_values = true)]
    s: Option<f64>,
}

#[derive(Args, Debug)]
struct CylArgs {
    #[command(flatten)]
    sel: SurfaceSel,
    /// Direction as `X,Y`.
    #[arg(long, allow_hyphen_values = true)]
    dir: String,
}

#[derive(Subcommand, Debug)]
enum NondivCmd {
    /// Fraction of a shear interval where the flowed surface stays thin.
    Mw {
        #[command(flatten)]
        sel: SurfaceSel,
        /// Diagonal-flow time.
        #[arg(long)]
        t: f64,
        /// Sublevel thresholds, comma-separated.
        #[arg(long, value_delimiter = ',')]
        eps: Vec<f64>,
        /// Shear interval as `LO,HI`.
        #[arg(long, default_value = "0,1", allow_hyphen_values = true)]
        interval: String,
        /// Grid points across the interval.
        #[arg(long, default_value_t = 10_000)]
        grid: usize,
    },
    /// Property check: length functions are (2,1)-good on shear intervals.
    Good {
        #[command(flatten)]
        sel: SurfaceSel,
        /// Enumerate connections up to this length.
        #[arg(long = "L", default_value_t = 2.0)]
        l: f64,
        /// Random (connection, interval) trials.
        #[arg(long, default_value_t = 1_000)]
        trials: usize,
        /// Grid points per interval.
        #[arg(long, default_value_t = 10_000)]
        grid: usize,
    },
    /// Monte Carlo check of the quadratic sublevel-measure bound.
    Polybound {
        /// Coefficients `a1,a2,a3`.
        #[arg(long, allow_hyphen_values = true)]
        a: String,
        /// Interval center.
        #[arg(long, default_value_t = 0.5, allow_hyphen_values = true)]
        c: f64,
        /// Sublevel constant.
        #[arg(long = "C", default_value_t = 1.0)]
        big_c: f64,
        /// Growth exponent.
        #[arg(long = "D")]
        d: f64,
        /// Flow time.
        #[arg(long)]
        t: f64,
        /// Window parameter (coefficients must clear 10*eta^2).
        #[arg(long, default_value_t = 0.1)]
        eta: f64,
        /// Monte Carlo sample count (at least 1e5).
        #[arg(long, default_value_t = 100_000)]
        samples: u64,
    },
}

#[derive(Args, Debug)]
struct MargulisArgs {
    #[command(flatten)]
    sel: SurfaceSel,
    /// Flow time defining the sampled box.
    #[arg(long)]
    t: f64,
    /// Box scale (default: exp(-t/degree) from the active constants).
    #[arg(long)]
    beta: Option<f64>,
    /// Margulis exponent in (0,1) (default: the `nu` constant).
    #[arg(long)]
    nu: Option<f64>,
    /// Grid shape `LOWER,DIAG,UPPER`.
    #[arg(long, default_value = "3,3,9")]
    grid: String,
    /// Balance tolerance for the stable/unstable split
    /// (default: the `tau_bal` constant).
    #[arg(long)]
    tau: Option<f64>,
}

#[derive(Subcommand, Debug)]
enum VeechCmd {
    /// Test whether a matrix stabilizes the surface.
    Member {
        #[command(flatten)]
        sel: SurfaceSel,
        /// Row-major entries `a,b,c,d`.
        #[arg(long, allow_hyphen_values = true)]
        matrix: String,
    },
    /// Search for a parabolic stabilizer fixing a periodic direction.
    Parabolic {
        #[command(flatten)]
        sel: SurfaceSel,
        /// Direction as `X,Y`.
        #[arg(long, allow_hyphen_values = true)]
        dir: String,
    },
    /// Combine parabolic stabilizers into a hyperbolic element.
    Hyperbolic {
        #[command(flatten)]
        sel: SurfaceSel,
        /// Candidate directions, `X,Y;X,Y;...`.
        #[arg(long, default_value = "1,0;0,1", allow_hyphen_values = true)]
        dirs: String,
    },
}

#[derive(Subcommand, Debug)]
enum ClosingCmd {
    /// Run the recurrence-or-closed-orbit dichotomy at flow time t.
    Run {
        #[command(flatten)]
        sel: SurfaceSel,
        /// Flow time.
        #[arg(long)]
        t: f64,
        /// Polynomial degree bound (default: the degree derived from the
        /// active constants).
        #[arg(long = "D")]
        degree: Option<f64>,
        /// Shear samples across [0,1].
        #[arg(long, default_value_t = 4)]
        samples: usize,
    },
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(exit_code_for(&e))
        }
    }
}

/// Budget exhaustion and unmet preconditions get distinct codes so callers
/// can retry with bigger budgets or different parameters; bad parameters
/// are usage errors.
fn exit_code_for(e: &anyhow::Error) -> u8 {
    match e.downcast_ref::<strata_core::Error>() {
        Some(strata_core::Error::BudgetExceeded { .. }) => 3,
        Some(strata_core::Error::PreconditionUnmet(_)) => 4,
        Some(strata_core::Error::InvalidParameter(_)) => 2,
        _ => 1,
    }
}

fn run(cli: Cli) -> anyhow::Result<()> {
    if let Some(j) = cli.jobs {
        // A second build_global in the same process is reported as an
        // error by rayon; the pool that exists keeps working.
        let _ = rayon::ThreadPoolBuilder::new()
            .num_threads(j.max(1))
            .build_global();
    }
    let mut cfg = Config::default();
    apply_constant_overrides(&mut cfg, &cli.constants)?;
    apply_budget_overrides(&mut cfg, &cli.budgets)?;

    let argv: Vec<String> = std::env::args().collect();
    let out_dir = resolve_out_dir(&cli.out);
    let seed = cli.seed;
    let ctx = Ctx {
        cfg,
        argv,
        out_dir,
        seed,
    };

    match cli.cmd {
        Cmd::Surface(c) => run_surface(c, &ctx),
        Cmd::Sc(c) => run_sc(c, &ctx),
        Cmd::Inj(a) => run_inj(a, &ctx),
        Cmd::Cyl(a) => run_cyl(a, &ctx),
        Cmd::Nondiv(c) => run_nondiv(c, &ctx),
        Cmd::Margulis(a) => run_margulis(a, &ctx),
        Cmd::Veech(c) => run_veech(c, &ctx),
        Cmd::Closing(c) => run_closing(c, &ctx),
    }
}

struct Ctx {
    cfg: Config,
    argv: Vec<String>,
    out_dir: PathBuf,
    seed: u64,
}

impl Ctx {
    fn emit<T: Serialize>(&self, slug: &str, result: T) -> anyhow::Result<()> {
        write_json(slug, result, &self.argv, self.seed, &self.out_dir, &self.cfg)
    }

    fn emit_csv(&self, slug: &str, header: &str, rows: &[String]) -> anyhow::Result<()> {
        write_csv(slug, header, rows, &self.out_dir)
    }
}

fn apply_constant_overrides(cfg: &mut Config, pairs: &[String]) -> anyhow::Result<()> {
    for pair in pairs {
        let (name, value) = split_override(pair)?;
        let slot = match name {
            "c1" => &mut cfg.constants.c1,
            "c2" => &mut cfg.constants.c2,
            "kappa1" => &mut cfg.constants.kappa1,
            "kappa2" => &mut cfg.constants.kappa2,
            "alpha" => &mut cfg.constants.alpha,
            "kappa4" => &mut cfg.constants.kappa4,
            "nu" => &mut cfg.constants.nu,
            "tau_bal" => &mut cfg.constants.tau_bal,
            "k_sheet" => &mut cfg.constants.k_sheet,
            "k_bad" => &mut cfg.constants.k_bad,
            "c0" => &mut cfg.constants.c0,
            _ => {
                return Err(strata_core::Error::invalid_parameter(format!(
                    "unknown constant `{name}`"
                ))
                .into())
            }
        };
        *slot = value
            .parse::<f64>()
            .with_context(|| format!("constant `{name}`"))?;
    }
    Ok(())
}

fn apply_budget_overrides(cfg: &mut Config, pairs: &[String]) -> anyhow::Result<()> {
    for pair in pairs {
        let (name, value) = split_override(pair)?;
        let slot = match name {
            "enumeration" => &mut cfg.budgets.enumeration,
            "flips" => &mut cfg.budgets.flips,
            "separatrix" => &mut cfg.budgets.separatrix,
            "degenerate_variants" => &mut cfg.budgets.degenerate_variants,
            "hyperbolic_words" => &mut cfg.budgets.hyperbolic_words,
            _ => {
                return Err(strata_core::Error::invalid_parameter(format!(
                    "unknown budget `{name}`"
                ))
                .into())
            }
        };
        *slot = value
            .parse::<u64>()
            .with_context(|| format!("budget `{name}`"))?;
    }
    Ok(())
}

fn split_override(pair: &str) -> anyhow::Result<(&str, &str)> {
    pair.split_once('=').ok_or_else(|| {
        strata_core::Error::invalid_parameter(format!(
            "override `{pair}` must have the form NAME=VALUE"
        ))
        .into()
    })
}

fn run_surface(cmd: SurfaceCmd, ctx: &Ctx) -> anyhow::Result<()> {
    match cmd {
        SurfaceCmd::Validate { sel } => {
            let s = sel.load()?;
            let report = surface::validate(&s)?;
            ctx.emit("surface-validate", report)
        }
        SurfaceCmd::Build { sel } => {
            let s = sel.load()?;
            surface::validate(&s)?;
            // Round-trip through Value so the envelope nests the surface
            // instead of embedding a JSON string.
            let value: serde_json::Value = serde_json::from_str(&surface::to_json(&s)?)?;
            ctx.emit("surface-build", value)
        }
    }
}

#[derive(Serialize)]
struct ScEnumResult {
    length_bound: f64,
    count: usize,
    connections: Vec<saddle::SaddleConnection>,
}

fn run_sc(cmd: ScCmd, ctx: &Ctx) -> anyhow::Result<()> {
    match cmd {
        ScCmd::Enum { sel, l } => {
            let s = sel.load_checked(&ctx.cfg)?;
            let mut connections = saddle::enumerate_surface(&s, l, &ctx.cfg)?;
            connections.sort_by(|x, y| {
                x.length
                    .total_cmp(&y.length)
                    .then(x.hol[0].total_cmp(&y.hol[0]))
                    .then(x.hol[1].total_cmp(&y.hol[1]))
            });
            let rows: Vec<String> = connections
                .iter()
                .map(|sc| {
                    format!(
                        "{},{},{},{},{}",
                        sc.hol[0], sc.hol[1], sc.length, sc.start_class, sc.end_class
                    )
                })
                .collect();
            ctx.emit_csv("sc-enum", "hol_x,hol_y,length,start,end", &rows)?;
            ctx.emit(
                "sc-enum",
                ScEnumResult {
                    length_bound: l,
                    count: connections.len(),
                    connections,
                },
            )
        }
    }
}

#[derive(Serialize)]
struct InjResult {
    #[serde(skip_serializing_if = "Option::is_none")]
    t: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    s: Option<f64>,
    injectivity_radius: f64,
}

fn run_inj(a: InjArgs, ctx: &Ctx) -> anyhow::Result<()> {
    let s = a.sel.load_checked(&ctx.cfg)?;
    let r = match (a.t, a.s) {
        (Some(t), Some(shear)) => {
            let m = Mat2::diag_flow(t).mul(&Mat2::upper(shear));
            saddle::injectivity_radius_along(&s, &m, &ctx.cfg)?
        }
        _ => saddle::injectivity_radius(&s, &ctx.cfg)?,
    };
    ctx.emit(
        "inj",
        InjResult {
            t: a.t,
            s: a.s,
            injectivity_radius: r,
        },
    )
}

#[derive(Serialize)]
struct CylEntry {
    direction: V2,
    circumference: f64,
    height: f64,
    modulus: f64,
}

#[derive(Serialize)]
struct CylResult {
    direction: V2,
    count: usize,
    cylinders: Vec<CylEntry>,
}

fn run_cyl(a: CylArgs, ctx: &Ctx) -> anyhow::Result<()> {
    let dir = select::parse_direction(&a.dir)?;
    let s = a.sel.load_checked(&ctx.cfg)?;
    let cylinders: Vec<CylEntry> = cyl::cylinder_decomposition(&s, dir, &ctx.cfg)?
        .into_iter()
        .map(|c| CylEntry {
            direction: c.direction,
            circumference: c.circumference,
            height: c.height,
            modulus: c.modulus(),
        })
        .collect();
    let rows: Vec<String> = cylinders
        .iter()
        .map(|c| {
            format!(
                "{},{},{},{},{}",
                c.direction[0], c.direction[1], c.circumference, c.height, c.modulus
            )
        })
        .collect();
    ctx.emit_csv("cyl", "dir_x,dir_y,circumference,height,modulus", &rows)?;
    ctx.emit(
        "cyl",
        CylResult {
            direction: dir,
            count: cylinders.len(),
            cylinders,
        },
    )
}

#[derive(Serialize)]
struct MwResult {
    t: f64,
    interval: (f64, f64),
    grid: usize,
    sweeps: Vec<nondiv::MWFractionReport>,
}

fn run_nondiv(cmd: NondivCmd, ctx: &Ctx) -> anyhow::Result<()> {
    match cmd {
        NondivCmd::Mw {
            sel,
            t,
            eps,
            interval,
            grid,
        } => {
            if eps.is_empty() {
                return Err(strata_core::Error::invalid_parameter(
                    "--eps needs at least one threshold",
                )
                .into());
            }
            let interval = select::parse_pair(&interval)?;
            let s = sel.load_checked(&ctx.cfg)?;
            let sweeps: Vec<nondiv::MWFractionReport> = eps
                .iter()
                .map(|&e| nondiv::mw_fraction(&s, t, e, interval, grid, &ctx.cfg))
                .collect::<Result<_, _>>()?;
            let rows: Vec<String> = sweeps
                .iter()
                .map(|r| format!("{},{},{},{}", r.epsilon, r.fraction, r.bound, r.flagged))
                .collect();
            ctx.emit_csv("nondiv-mw", "eps,fraction,bound,flagged", &rows)?;
            ctx.emit(
                "nondiv-mw",
                MwResult {
                    t,
                    interval,
                    grid,
                    sweeps,
                },
            )
        }
        NondivCmd::Good {
            sel,
            l,
            trials,
            grid,
        } => {
            let s = sel.load_checked(&ctx.cfg)?;
            let t = tri::delaunay(&s, &ctx.cfg)?;
            let report = nondiv::good_sweep(&t, l, trials, grid, ctx.seed, &ctx.cfg)?;
            ctx.emit("nondiv-good", report)
        }
        NondivCmd::Polybound {
            a,
            c,
            big_c,
            d,
            t,
            eta,
            samples,
        } => {
            let parts: Vec<f64> = a
                .split(',')
                .map(|p| p.trim().parse::<f64>())
                .collect::<Result<_, _>>()
                .context("--a must be three comma-separated coefficients")?;
            if parts.len() != 3 {
                return Err(strata_core::Error::invalid_parameter(
                    "--a must have exactly three coefficients",
                )
                .into());
            }
            let report = nondiv::polynomial_bound_mc(
                [parts[0], parts[1], parts[2]],
                c,
                big_c,
                d,
                t,
                eta,
                samples,
                ctx.seed,
            )?;
            ctx.emit("nondiv-polybound", report)
        }
    }
}

#[derive(Serialize)]
struct MargulisElement {
    z_index: usize,
    r_proxy: f64,
    returns: usize,
    f: f64,
}

#[derive(Serialize)]
struct MargulisResult {
    t: f64,
    beta: f64,
    nu: f64,
    grid: (usize, usize, usize),
    tau_bal: f64,
    pairs_examined: usize,
    skipped_pairs: usize,
    coincident_pairs: usize,
    return_count: usize,
    sheet_bound_ok: bool,
    max_f: f64,
    elements: Vec<MargulisElement>,
    returns: Vec<closing::NearReturn>,
}

fn run_margulis(a: MargulisArgs, ctx: &Ctx) -> anyhow::Result<()> {
    let k = &ctx.cfg.constants;
    let beta = a.beta.unwrap_or_else(|| k.beta(a.t));
    let nu = a.nu.unwrap_or(k.nu);
    let tau_bal = a.tau.unwrap_or(k.tau_bal);
    let grid = select::parse_grid(&a.grid)?;
    let s = a.sel.load_checked(&ctx.cfg)?;
    let scan = closing::near_returns(&s, a.t, beta, grid, tau_bal, &ctx.cfg)?;
    let sheet_bound_ok = closing::sheet_count_check(&scan.returns, a.t, k.kappa4, &ctx.cfg)?;
    let mut elements = Vec::with_capacity(scan.r_proxies.len());
    let mut max_f = 0.0f64;
    for (z, &r_proxy) in scan.r_proxies.iter().enumerate() {
        let mine: Vec<closing::NearReturn> = scan
            .returns
            .iter()
            .filter(|r| r.z_index == z)
            .cloned()
            .collect();
        let f = closing::margulis_f_with_proxy(r_proxy, &mine, nu)?;
        max_f = max_f.max(f);
        elements.push(MargulisElement {
            z_index: z,
            r_proxy,
            returns: mine.len(),
            f,
        });
    }
    let rows: Vec<String> = elements
        .iter()
        .map(|e| format!("{},{},{},{}", e.z_index, e.r_proxy, e.returns, e.f))
        .collect();
    ctx.emit_csv("margulis", "z_index,r_proxy,returns,f", &rows)?;
    ctx.emit(
        "margulis",
        MargulisResult {
            t: a.t,
            beta,
            nu,
            grid,
            tau_bal,
            pairs_examined: scan.pairs_examined,
            skipped_pairs: scan.skipped_pairs,
            coincident_pairs: scan.coincident_pairs,
            return_count: scan.returns.len(),
            sheet_bound_ok,
            max_f,
            elements,
            returns: scan.returns,
        },
    )
}

#[derive(Serialize)]
struct MemberResult {
    matrix: Mat2,
    member: bool,
}

#[derive(Serialize)]
struct ParabolicResult {
    direction: V2,
    found: bool,
    #[serde(skip_serializing_if = "Option::is_none")]
    matrix: Option<Mat2>,
    #[serde(skip_serializing_if = "Option::is_none")]
    trace: Option<f64>,
}

#[derive(Serialize)]
struct HyperbolicResult {
    directions: Vec<V2>,
    found: bool,
    #[serde(skip_serializing_if = "Option::is_none")]
    matrix: Option<Mat2>,
    #[serde(skip_serializing_if = "Option::is_none")]
    trace: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    translation_length: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    transcript: Option<closing::MembershipTranscript>,
}

fn run_veech(cmd: VeechCmd, ctx: &Ctx) -> anyhow::Result<()> {
    match cmd {
        VeechCmd::Member { sel, matrix } => {
            let m = select::parse_matrix(&matrix)?;
            let s = sel.load_checked(&ctx.cfg)?;
            let member = closing::veech_contains(&s, &m, &ctx.cfg)?;
            ctx.emit("veech-member", MemberResult { matrix: m, member })
        }
        VeechCmd::Parabolic { sel, dir } => {
            let direction = select::parse_direction(&dir)?;
            let s = sel.load_checked(&ctx.cfg)?;
            let found = closing::find_parabolic(&s, direction, &ctx.cfg)?;
            ctx.emit(
                "veech-parabolic",
                ParabolicResult {
                    direction,
                    found: found.is_some(),
                    trace: found.as_ref().map(Mat2::trace),
                    matrix: found,
                },
            )
        }
        VeechCmd::Hyperbolic { sel, dirs } => {
            let directions = select::parse_directions(&dirs)?;
            let s = sel.load_checked(&ctx.cfg)?;
            let found = closing::find_hyperbolic(&s, &directions, &ctx.cfg)?;
            let mut result = HyperbolicResult {
                directions,
                found: found.is_some(),
                matrix: found.map(|(m, _)| m),
                trace: found.map(|(m, _)| m.trace()),
                translation_length: found.map(|(_, len)| len),
                transcript: None,
            };
            if let Some((g, _)) = &found {
                if let Some((len, transcript)) = closing::certify_hyperbolic(&s, g, &ctx.cfg)? {
                    result.translation_length = Some(len);
                    result.transcript = Some(transcript);
                }
            }
            ctx.emit("veech-hyperbolic", result)
        }
    }
}

fn run_closing(cmd: ClosingCmd, ctx: &Ctx) -> anyhow::Result<()> {
    match cmd {
        ClosingCmd::Run {
            sel,
            t,
            degree,
            samples,
        } => {
            let degree = degree.unwrap_or_else(|| ctx.cfg.constants.degree());
            let s = sel.load_checked(&ctx.cfg)?;
            let report = closing::dichotomy_driver(&s, t, degree, samples, &ctx.cfg)?;
            ctx.emit("closing-run", report)
        }
    }
}
