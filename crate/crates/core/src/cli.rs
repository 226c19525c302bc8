//! Command-line front end. Each stage reads and writes explicit files so
//! that cycles and PRCs can be reused across reductions and certificates.

use std::collections::BTreeMap;
use std::ffi::OsString;
use std::io::Write;
use std::path::{Path, PathBuf};

use clap::{CommandFactory, Parser, Subcommand, ValueEnum};

use crate::analysis::{verify_certificate, MseCurve, VerifyOptions};
use crate::cycle::{find_limit_cycle, CycleFile, CycleOptions, LimitCycle, Section};
use crate::dynamics::schema::{fingerprint, load_model, load_network, read_json};
use crate::dynamics::{builtin_model, Builtin, Graph, ModelSpec, NetworkSpec, BUILTIN_NAMES};
use crate::error::{Error, Result};
use crate::phasered::{averaged_phase_model, ito_strat_compare, write_compare_csv, PhaseModelFile};
use crate::prc::{prc1_direct, prc2_direct, prc_adjoint, AdjointOptions, DirectOptions, PrcPair};
use crate::sdesim::{
    run_ensemble, simulate, FullNetworkSim, Functional, FunctionalContext, InitialCondition,
    NoiseOptions, SdeSystem,
};
use crate::synccert::{certify, BoundOptions, Certificate, CertifyOptions, Frame, Omega1};

#[derive(Parser, Debug)]
#[command(name = "phasekit", version, about = "Phase reduction and synchronization certificates for noisy coupled oscillators")]
struct Cli {
    /// Worker threads for ensembles and grid scans (0 = one per core).
    #[arg(long, global = true, env = "PHASEKIT_THREADS", default_value_t = 0)]
    threads: usize,

    /// Repeat for more log output (-v info, -vv debug). RUST_LOG overrides.
    #[arg(short, long, global = true, action = clap::ArgAction::Count)]
    verbose: u8,

    #[command(subcommand)]
    command: Cmd,
}

#[derive(Subcommand, Debug)]
enum Cmd {
    /// Locate a stable limit cycle and sample it on a uniform phase grid.
    Cycle(CycleArgs),
    /// Compute first- (and second-) order phase response curves.
    Prc(PrcArgs),
    /// Reduce a coupled network to an averaged phase model.
    Reduce(ReduceArgs),
    /// Evaluate the synchronization theorems on a phase model.
    Certify(CertifyArgs),
    /// Euler-Maruyama paths or Monte-Carlo ensembles.
    Simulate(SimulateArgs),
    /// Compare an ensemble's decay rate against a certificate.
    Verify(VerifyArgs),
    /// Tabulate Z^T Z' against tr H along the cycle.
    CompareIto(CompareArgs),
}

#[derive(clap::Args, Debug)]
struct CycleArgs {
    /// Model JSON file or built-in name (hopf, vanderpol).
    #[arg(long)]
    model: String,
    /// Built-in parameters, "k=v,k=v".
    #[arg(long, default_value = "")]
    params: String,
    /// Initial state, comma separated (default: all ones).
    #[arg(long, allow_hyphen_values = true)]
    guess: Option<String>,
    /// Phase grid size G.
    #[arg(long, default_value_t = 1024)]
    grid: usize,
    /// Poincare section point (default: post-transient state).
    #[arg(long, allow_hyphen_values = true, requires = "section_normal")]
    section_point: Option<String>,
    /// Poincare section normal (default: flow direction).
    #[arg(long, allow_hyphen_values = true, requires = "section_point")]
    section_normal: Option<String>,
    /// Convergence tolerance on return time and return point.
    #[arg(long, default_value_t = 1e-10)]
    tol: f64,
    /// Transient length in estimated periods.
    #[arg(long, default_value_t = 20.0)]
    transient: f64,
    #[arg(long, default_value = "cycle.json")]
    out: PathBuf,
}

#[derive(ValueEnum, Clone, Copy, Debug)]
enum Method {
    Adjoint,
    Direct,
}

#[derive(clap::Args, Debug)]
struct PrcArgs {
    /// Model JSON file or built-in name.
    #[arg(long)]
    model: String,
    #[arg(long, default_value = "")]
    params: String,
    /// cycle.json written by `phasekit cycle`.
    #[arg(long)]
    cycle: PathBuf,
    #[arg(long, value_enum, default_value_t = Method::Adjoint)]
    method: Method,
    /// 1 for Z only, 2 for Z and H.
    #[arg(long, default_value_t = 2, value_parser = clap::value_parser!(u8).range(1..=2))]
    order: u8,
    /// Adjoint: integration steps per grid interval.
    #[arg(long, default_value_t = 4)]
    substeps: usize,
    /// Adjoint: maximum backward passes.
    #[arg(long, default_value_t = 50)]
    max_periods: usize,
    /// Direct: perturbation size.
    #[arg(long, default_value_t = 1e-3)]
    r: f64,
    /// Direct: use every n-th grid phase.
    #[arg(long, default_value_t = 1)]
    stride: usize,
    #[arg(long, default_value = "prc.csv")]
    out: PathBuf,
}

#[derive(clap::Args, Debug)]
struct ReduceArgs {
    /// Network JSON file or built-in network.
    #[arg(long)]
    network: String,
    #[arg(long, default_value = "")]
    params: String,
    #[arg(long)]
    cycle: PathBuf,
    /// PRC CSV; must include H when sigma or delta is nonzero.
    #[arg(long)]
    prc: PathBuf,
    #[arg(long, default_value = "phase_model.json")]
    out: PathBuf,
}

#[derive(clap::Args, Debug)]
struct CertifyArgs {
    /// phase_model.json written by `phasekit reduce` or by hand.
    #[arg(long)]
    phase_model: PathBuf,
    /// Source network, used to check and record the fingerprint.
    #[arg(long)]
    network: Option<String>,
    #[arg(long, default_value = "")]
    params: String,
    #[arg(long)]
    graph: Option<String>,
    /// Phase-difference interval "lo,hi".
    #[arg(long, default_value = "-1.5707963267948966,1.5707963267948966", allow_hyphen_values = true)]
    omega1: String,
    /// Moment order p for the p-th moment statement.
    #[arg(long)]
    moment: Option<f64>,
    /// Initial scan points per bound.
    #[arg(long, default_value_t = 4096)]
    bound_grid: usize,
    #[arg(long, default_value = "cert.json")]
    out: PathBuf,
}

#[derive(clap::Args, Debug)]
struct SimulateArgs {
    /// Network JSON file or built-in network (leader_follower).
    #[arg(long, conflicts_with = "phase_model", required_unless_present = "phase_model")]
    network: Option<String>,
    /// Simulate a phase model instead of the full network.
    #[arg(long)]
    phase_model: Option<PathBuf>,
    #[arg(long, default_value = "")]
    params: String,
    /// Graph for built-in networks: line, ring, complete.
    #[arg(long)]
    graph: Option<String>,
    /// Cycle of the node model; sets the default step to T/2048.
    #[arg(long)]
    cycle: Option<PathBuf>,
    /// Every node sees the same W.
    #[arg(long)]
    common_noise: bool,
    /// W_ij = W_ji.
    #[arg(long)]
    shared_edge_noise: bool,
    /// Final time.
    #[arg(long, default_value_t = 100.0)]
    t: f64,
    /// Step (default T/2048 for oscillators, else 1e-3).
    #[arg(long)]
    h: Option<f64>,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// 1 writes a single path; more writes ensemble statistics.
    #[arg(long, default_value_t = 1)]
    trials: usize,
    /// Record every n-th step (default: about 2000 rows).
    #[arg(long)]
    record_every: Option<usize>,
    /// Ensemble functionals, comma separated.
    #[arg(long, default_value = "disagreement2,disagreement")]
    functionals: String,
    /// Fixed initial state, N*m values node by node.
    #[arg(long, allow_hyphen_values = true, conflicts_with = "x0_uniform")]
    x0: Option<String>,
    /// Uniform initial coordinates "lo,hi", drawn per trial.
    #[arg(long, allow_hyphen_values = true)]
    x0_uniform: Option<String>,
    #[arg(long, default_value = "ens.csv")]
    out: PathBuf,
}

#[derive(clap::Args, Debug)]
struct VerifyArgs {
    #[arg(long)]
    ensemble: PathBuf,
    #[arg(long)]
    cert: PathBuf,
    /// Fit window "t0,t1" (default: the later half of the run).
    #[arg(long, allow_hyphen_values = true)]
    window: Option<String>,
    /// Pass requires fitted rate >= safety x certified rate.
    #[arg(long, default_value_t = 0.8)]
    safety: f64,
    #[arg(long, default_value_t = 1000)]
    resamples: usize,
    #[arg(long, default_value_t = 0.95)]
    level: f64,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long, default_value = "report.json")]
    out: PathBuf,
}

#[derive(clap::Args, Debug)]
struct CompareArgs {
    #[arg(long)]
    prc: PathBuf,
    #[arg(long, default_value = "compare.csv")]
    out: PathBuf,
}

/// Parse and run; returns the process exit code.
pub fn run<I, T>(argv: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let argv: Vec<OsString> = argv.into_iter().map(Into::into).collect();
    let cli = match Cli::try_parse_from(&argv) {
        Ok(c) => c,
        Err(e) => return clap_failure(e, &argv),
    };
    let level = match cli.verbose {
        0 => "warn",
        1 => "info",
        _ => "debug",
    };
    let _ = env_logger::Builder::from_env(env_logger::Env::default().default_filter_or(level))
        .format_timestamp(None)
        .try_init();

    let pool = match rayon::ThreadPoolBuilder::new().num_threads(cli.threads).build() {
        Ok(p) => p,
        Err(e) => {
            eprintln!("error: threads: {e}");
            return 1;
        }
    };
    match pool.install(|| dispatch(cli.command)) {
        Ok(()) => 0,
        Err(e) => {
            eprintln!("error: {e}");
            if e.is_numerical() {
                2
            } else {
                1
            }
        }
    }
}

fn clap_failure(e: clap::Error, argv: &[OsString]) -> i32 {
    use clap::error::ErrorKind;
    match e.kind() {
        ErrorKind::DisplayHelp | ErrorKind::DisplayVersion => {
            let _ = e.print();
            return 0;
        }
        ErrorKind::DisplayHelpOnMissingArgumentOrSubcommand => {
            let _ = e.print();
            return 1;
        }
        _ => {}
    }
    let _ = e.print();
    if e.kind() == ErrorKind::UnknownArgument {
        let root = Cli::command();
        let sub = argv
            .iter()
            .skip(1)
            .filter_map(|a| a.to_str())
            .find_map(|a| root.find_subcommand(a));
        let cmd = sub.unwrap_or(&root);
        let flags: Vec<String> = cmd
            .get_arguments()
            .chain(root.get_arguments().filter(|a| a.is_global_set()))
            .filter_map(|a| a.get_long().map(|l| format!("--{l}")))
            .chain(["--help".to_string()])
            .collect();
        eprintln!("valid flags for `{}`: {}", cmd.get_name(), flags.join(" "));
    }
    1
}

fn dispatch(cmd: Cmd) -> Result<()> {
    match cmd {
        Cmd::Cycle(a) => cmd_cycle(a),
        Cmd::Prc(a) => cmd_prc(a),
        Cmd::Reduce(a) => cmd_reduce(a),
        Cmd::Certify(a) => cmd_certify(a),
        Cmd::Simulate(a) => cmd_simulate(a),
        Cmd::Verify(a) => cmd_verify(a),
        Cmd::CompareIto(a) => cmd_compare(a),
    }
}

fn parse_params(s: &str) -> Result<BTreeMap<String, f64>> {
    let mut out = BTreeMap::new();
    for item in s.split(',').map(str::trim).filter(|t| !t.is_empty()) {
        let bad = || Error::InvalidSpec(format!("params: expected k=v, got `{item}`"));
        let (k, v) = item.split_once('=').ok_or_else(bad)?;
        let v: f64 = v.trim().parse().map_err(|_| bad())?;
        out.insert(k.trim().to_string(), v);
    }
    Ok(out)
}

fn parse_list(field: &str, s: &str) -> Result<Vec<f64>> {
    s.split(',')
        .map(|t| {
            t.trim()
                .parse::<f64>()
                .map_err(|_| Error::InvalidSpec(format!("{field}: `{}` is not a number", t.trim())))
        })
        .collect()
}

fn parse_pair(field: &str, s: &str) -> Result<(f64, f64)> {
    match parse_list(field, s)?[..] {
        [a, b] => Ok((a, b)),
        _ => Err(Error::InvalidSpec(format!("{field}: expected \"a,b\", got `{s}`"))),
    }
}

/// A path to an existing file, otherwise a built-in name.
fn resolve_model(arg: &str, params: &str) -> Result<ModelSpec> {
    if Path::new(arg).is_file() {
        return load_model(Path::new(arg));
    }
    match builtin_model(arg, &parse_params(params)?, None) {
        Ok(Builtin::Model(m)) => Ok(m),
        Ok(Builtin::Network(_)) => Err(Error::InvalidSpec(format!("model: `{arg}` is a network"))),
        Err(Error::InvalidSpec(msg)) if !BUILTIN_NAMES.contains(&arg) => Err(Error::InvalidSpec(format!(
            "model: `{arg}` is neither a file nor a built-in ({msg})"
        ))),
        Err(e) => Err(e),
    }
}

fn resolve_network(arg: &str, params: &str, graph: Option<&str>) -> Result<NetworkSpec> {
    if Path::new(arg).is_file() {
        return load_network(Path::new(arg));
    }
    let graph = graph
        .map(|g| Graph::from_name(g).ok_or_else(|| Error::InvalidSpec(format!("graph: unknown graph `{g}`"))))
        .transpose()?;
    match builtin_model(arg, &parse_params(params)?, graph.as_ref()) {
        Ok(Builtin::Network(n)) => Ok(n),
        Ok(Builtin::Model(_)) => Err(Error::InvalidSpec(format!(
            "network: `{arg}` is a node model; write a network file around it"
        ))),
        Err(Error::InvalidSpec(msg)) if !BUILTIN_NAMES.contains(&arg) => Err(Error::InvalidSpec(format!(
            "network: `{arg}` is neither a file nor a built-in ({msg})"
        ))),
        Err(e) => Err(e),
    }
}

fn read_cycle(path: &Path) -> Result<LimitCycle> {
    read_json::<CycleFile>(path)?.to_cycle()
}

fn read_prc(path: &Path) -> Result<PrcPair> {
    let f = std::fs::File::open(path).map_err(|e| Error::io(path.display().to_string(), e))?;
    PrcPair::read_csv(std::io::BufReader::new(f))
}

/// Render into memory, then write a temp file beside `path` and rename it.
fn write_atomic(path: &Path, render: impl FnOnce(&mut Vec<u8>) -> Result<()>) -> Result<()> {
    let mut buf = Vec::new();
    render(&mut buf)?;
    let dir = match path.parent() {
        Some(d) if !d.as_os_str().is_empty() => d,
        _ => Path::new("."),
    };
    let name = path.display().to_string();
    let mut tmp = tempfile::NamedTempFile::new_in(dir).map_err(|e| Error::io(&name, e))?;
    tmp.write_all(&buf).map_err(|e| Error::io(&name, e))?;
    tmp.persist(path).map_err(|e| Error::io(&name, e.error))?;
    Ok(())
}

fn write_json<T: serde::Serialize>(path: &Path, value: &T) -> Result<()> {
    write_atomic(path, |buf| {
        serde_json::to_writer_pretty(&mut *buf, value)
            .map_err(|e| Error::Internal(format!("json encoding: {e}")))?;
        buf.push(b'\n');
        Ok(())
    })
}

fn cmd_cycle(a: CycleArgs) -> Result<()> {
    let model = resolve_model(&a.model, &a.params)?.compile()?;
    let x0 = match &a.guess {
        Some(g) => parse_list("guess", g)?,
        None => vec![1.0; model.dim()],
    };
    let section = match (&a.section_point, &a.section_normal) {
        (Some(p), Some(n)) => Some(Section {
            point: parse_list("section-point", p)?,
            normal: parse_list("section-normal", n)?,
        }),
        _ => None,
    };
    let opts = CycleOptions {
        grid: a.grid,
        section,
        tol: a.tol,
        transient_periods: a.transient,
        ..CycleOptions::default()
    };
    let cycle = find_limit_cycle(&model, &x0, &opts)?;
    write_json(&a.out, &CycleFile::from_cycle(&cycle))?;
    println!("T = {:.12} (closure error {:.2e}) -> {}", cycle.period(), cycle.closure_error(), a.out.display());
    Ok(())
}

fn cmd_prc(a: PrcArgs) -> Result<()> {
    let model = resolve_model(&a.model, &a.params)?.compile()?;
    let cycle = read_cycle(&a.cycle)?;
    let prc = match a.method {
        Method::Adjoint => {
            let opts = AdjointOptions {
                max_periods: a.max_periods,
                substeps: a.substeps,
                ..AdjointOptions::default()
            };
            prc_adjoint(&model, &cycle, a.order, &opts)?
        }
        Method::Direct => {
            let opts = DirectOptions {
                r: a.r,
                stride: a.stride,
                ..DirectOptions::default()
            };
            if a.order == 1 {
                prc1_direct(&model, &cycle, &opts)?
            } else {
                prc2_direct(&model, &cycle, &opts)?
            }
        }
    };
    write_atomic(&a.out, |buf| prc.write_csv(buf))?;
    println!("{} phases -> {}", prc.len(), a.out.display());
    Ok(())
}

fn cmd_reduce(a: ReduceArgs) -> Result<()> {
    let spec = resolve_network(&a.network, &a.params, None)?;
    let fp = fingerprint(&spec);
    let net = spec.compile()?;
    let cycle = read_cycle(&a.cycle)?;
    let prc = read_prc(&a.prc)?;
    let model = averaged_phase_model(&net, &cycle, &prc)?;
    write_json(&a.out, &model.to_file(Some(fp)))?;
    println!("phase model for {} nodes -> {}", model.n, a.out.display());
    Ok(())
}

fn cmd_certify(a: CertifyArgs) -> Result<()> {
    let file: PhaseModelFile = read_json(&a.phase_model)?;
    let net = file.to_network()?;
    let fp = match &a.network {
        Some(n) => {
            let fp = fingerprint(&resolve_network(n, &a.params, a.graph.as_deref())?);
            if let Some(stored) = file.fingerprint.as_ref().filter(|s| **s != fp) {
                return Err(Error::InvalidSpec(format!(
                    "network: fingerprint {fp} does not match the phase model's {stored}"
                )));
            }
            Some(fp)
        }
        None => file.fingerprint.clone(),
    };
    let opts = CertifyOptions {
        omega1: Omega1::parse(&a.omega1)?,
        bounds: BoundOptions {
            grid: a.bound_grid,
            ..BoundOptions::default()
        },
        frame: Frame { omega: file.omega() },
        moment: a.moment,
        fingerprint: fp,
    };
    let cert = certify(&net, &opts)?;
    write_json(&a.out, &cert)?;
    println!("c = {:.6e}; verdict: {}", cert.rate.c, cert.verdict);
    Ok(())
}

fn default_record_every(steps: usize) -> usize {
    steps.div_ceil(2000).max(1)
}

fn cmd_simulate(a: SimulateArgs) -> Result<()> {
    let functionals: Vec<Functional> = a
        .functionals
        .split(',')
        .map(str::trim)
        .filter(|s| !s.is_empty())
        .map(|s| Functional::from_name(s).ok_or_else(|| Error::InvalidSpec(format!("functionals: unknown `{s}`"))))
        .collect::<Result<_>>()?;
    let period = match &a.cycle {
        Some(p) => Some(read_cycle(p)?.period()),
        None => None,
    };

    let (phase, full, fp) = if let Some(path) = &a.phase_model {
        let file: PhaseModelFile = read_json(path)?;
        let net = file.to_network()?;
        (Some((net, file.omega())), None, file.fingerprint)
    } else {
        let spec = resolve_network(a.network.as_deref().unwrap_or_default(), &a.params, a.graph.as_deref())?;
        let fp = fingerprint(&spec);
        let x0 = spec.x0.clone();
        (None, Some((spec.compile()?, x0)), Some(fp))
    };
    let period = period.or_else(|| {
        phase
            .as_ref()
            .and_then(|(_, om)| om.filter(|w| *w > 0.0))
            .map(|w| std::f64::consts::TAU / w)
    });
    let h = a.h.unwrap_or_else(|| period.map_or(1e-3, |t| t / 2048.0));
    let steps = crate::sdesim::step_count(a.t, h)?;
    let record_every = a.record_every.unwrap_or_else(|| default_record_every(steps));

    let opts = NoiseOptions {
        common_noise: a.common_noise,
        shared_edge_noise: a.shared_edge_noise,
    };
    let full_sim;
    let phase_net;
    let (sys, n, node_dim, weights, stored_x0): (&dyn SdeSystem, usize, usize, Vec<f64>, Option<Vec<f64>>) =
        match (&phase, &full) {
            (Some((net, _)), _) => {
                if a.common_noise {
                    log::info!("phase models always use the common noise of their reduction");
                }
                let mut net = net.clone();
                net.shared_edge_noise = a.shared_edge_noise;
                phase_net = net;
                (&phase_net, phase_net.n, 1, phase_net.weights.clone(), None)
            }
            (None, Some((net, x0))) => {
                full_sim = FullNetworkSim::new(net, opts);
                (&full_sim, net.n, net.dim(), net.weights.clone(), x0.as_ref().map(|r| r.concat()))
            }
            _ => unreachable!(),
        };
    let dim = n * node_dim;
    let init = if let Some(s) = &a.x0 {
        let x = parse_list("x0", s)?;
        if x.len() != dim {
            return Err(Error::InvalidSpec(format!("x0: expected {dim} values, got {}", x.len())));
        }
        InitialCondition::Fixed(x)
    } else if let Some(s) = &a.x0_uniform {
        let (lo, hi) = parse_pair("x0-uniform", s)?;
        InitialCondition::Uniform { lo: vec![lo; dim], hi: vec![hi; dim] }
    } else if let Some(x) = stored_x0 {
        InitialCondition::Fixed(x)
    } else if phase.is_some() {
        InitialCondition::Uniform { lo: vec![-0.3; dim], hi: vec![0.3; dim] }
    } else {
        return Err(Error::InvalidSpec(
            "x0: pass --x0 or --x0-uniform, or set x0 in the network file".into(),
        ));
    };

    if a.trials <= 1 {
        let x0 = init.draw(a.seed, 0);
        let path = simulate(sys, &x0, a.t, h, a.seed, 0, record_every)?;
        write_atomic(&a.out, |buf| path.write_csv(buf, node_dim))?;
        println!("{} samples, h = {h:e} -> {}", path.len(), a.out.display());
        return Ok(());
    }
    if node_dim != 1 && functionals.contains(&Functional::OrderParameter) {
        return Err(Error::InvalidSpec("functionals: `order` needs scalar phases".into()));
    }
    let ctx = FunctionalContext { n, node_dim, weights };
    let ens = run_ensemble(sys, &init, a.t, h, record_every, a.trials, a.seed, &functionals, &ctx)?;
    write_atomic(&a.out, |buf| ens.write_csv(buf, fp.as_deref()))?;
    println!(
        "{} of {} trials completed, h = {h:e} -> {}",
        ens.completed.len(),
        a.trials,
        a.out.display()
    );
    Ok(())
}

fn cmd_verify(a: VerifyArgs) -> Result<()> {
    let text = std::fs::read_to_string(&a.ensemble).map_err(|e| Error::io(a.ensemble.display().to_string(), e))?;
    let mse = MseCurve::read_csv(&text)?;
    let cert: Certificate = read_json(&a.cert)?;
    let opts = VerifyOptions {
        window: a.window.as_deref().map(|w| parse_pair("window", w)).transpose()?,
        safety: a.safety,
        resamples: a.resamples,
        level: a.level,
        seed: a.seed,
    };
    let report = verify_certificate(&mse, &cert, &opts)?;
    write_json(&a.out, &report)?;
    println!("{}", report.verdict);
    Ok(())
}

fn cmd_compare(a: CompareArgs) -> Result<()> {
    let prc = read_prc(&a.prc)?;
    let rows = ito_strat_compare(&prc)?;
    write_atomic(&a.out, |buf| write_compare_csv(&rows, buf))?;
    println!("{} rows -> {}", rows.len(), a.out.display());
    Ok(())
}
