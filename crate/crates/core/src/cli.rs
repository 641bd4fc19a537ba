//! The `recur-moments` command line.
//!
//! Exit codes: 0 success, 2 input error, 3 precondition or verdict failure.
//! `RECUR_MOMENTS_THREADS` sets the worker thread count.

use std::ffi::OsString;
use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand, ValueEnum};
use serde_json::{json, Value};

use crate::chain::{ChainRef, ParametricChain, TransitionKernel};
use crate::constructions::{demo_exponential, demo_sharp, DemoReport};
use crate::error::{Error, Result};
use crate::logspace::fmt17;
use crate::momentfn::{classify, ClassifyBudget, MomentFunction, Verdict};
use crate::moments::{json_f64, mc_f_moment, passage_f_moment, MomentPolicy};
use crate::passage::{first_passage_law, AtomicDist, PassageLaw};

/// Seed used when `--seed` is not given.
pub const DEFAULT_SEED: u64 = 20_011_127;

pub const EXIT_OK: i32 = 0;
pub const EXIT_INPUT: i32 = 2;
pub const EXIT_FAILURE: i32 = 3;

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum Format {
    Csv,
    Json,
}

#[derive(Debug, Parser)]
#[command(
    name = "recur-moments",
    version,
    about = "Passage-time laws and generalized moments of Markov chains"
)]
pub struct Cli {
    /// Write artifacts here instead of printing them.
    #[arg(long, global = true)]
    pub output_dir: Option<PathBuf>,
    #[arg(long, global = true, default_value_t = DEFAULT_SEED)]
    pub seed: u64,
    /// Artifact format; each command has its own default.
    #[arg(long, global = true, value_enum)]
    pub format: Option<Format>,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Args)]
pub struct ChainArgs {
    /// `two-state:<p>` or `petal:<json file>`.
    #[arg(long, conflicts_with = "chain", required_unless_present = "chain")]
    pub builtin: Option<String>,
    /// Kernel JSON file.
    #[arg(long)]
    pub chain: Option<PathBuf>,
    #[arg(long)]
    pub from: String,
    #[arg(long)]
    pub to: String,
    #[arg(long, default_value_t = 1000)]
    pub horizon: usize,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// First-passage (or return-time) law.
    Fpt(ChainArgs),
    /// Check submultiplicativity and subexponential growth of a function.
    Classify {
        /// `power:<p>`, `logpow:<q>`, `exp:<delta>`, `burst:default`, `burst:file=<path>`.
        fspec: String,
        #[arg(long, default_value_t = 6)]
        extensions: usize,
    },
    /// `E f(T)` with a certified interval or a divergence verdict.
    Moment {
        fspec: String,
        #[command(flatten)]
        chain: ChainArgs,
        #[arg(long, allow_negative_numbers = true)]
        threshold: Option<f64>,
        /// Accept windowed growth estimates for functions without a registered bound.
        #[arg(long)]
        allow_uncertified: bool,
        /// Add a Monte Carlo estimate from this many samples.
        #[arg(long)]
        mc: Option<u64>,
        #[arg(long, default_value_t = 10_000)]
        cap: u64,
        /// Double the horizon up to this value until the interval is tight.
        #[arg(long)]
        max_horizon: Option<usize>,
        /// Target width of the certified interval on the log scale.
        #[arg(long, default_value_t = 1e-6)]
        log_width: f64,
    },
    /// Counterexample pipelines.
    #[command(subcommand)]
    Demo(DemoCommand),
}

#[derive(Debug, Subcommand)]
pub enum DemoCommand {
    /// Burst function on the petal chain.
    Sharp {
        #[arg(long = "f", default_value = "burst:default")]
        fspec: String,
        #[arg(long, default_value_t = 0.5)]
        p: f64,
        #[arg(long, default_value_t = 50)]
        kmax: u64,
        #[arg(long, allow_negative_numbers = true)]
        threshold: Option<f64>,
    },
    /// Exponential function on the two-state chain.
    Exponential {
        #[arg(long, default_value_t = 0.1)]
        delta: f64,
        #[arg(long, default_value_t = 0.05)]
        p: f64,
        #[arg(long, allow_negative_numbers = true)]
        threshold: Option<f64>,
    },
}

/// A loaded chain: always a kernel, plus the parametric form when built in.
struct Loaded {
    kernel: TransitionKernel,
    parametric: Option<ParametricChain>,
}

impl Loaded {
    fn chain_ref(&self) -> ChainRef<'_> {
        match &self.parametric {
            Some(p) => ChainRef::Parametric(p),
            None => ChainRef::Kernel(&self.kernel),
        }
    }
}

fn atoms_from_json(v: &Value, key: &str) -> Result<AtomicDist> {
    let rows = v[key]
        .as_array()
        .ok_or_else(|| Error::Parse(format!("petal spec needs `{key}` as [[x, p], ...]")))?;
    let pairs = rows
        .iter()
        .map(|r| match (r[0].as_u64(), r[1].as_f64()) {
            (Some(x), Some(p)) => Ok((x, p)),
            _ => Err(Error::Parse(format!("bad atom in `{key}`"))),
        })
        .collect::<Result<Vec<_>>>()?;
    AtomicDist::from_probs(&pairs)
}

/// `{"u1": [[x, p], ...], "u2": [[y, q], ...], "p": <exit probability>}`.
pub fn load_petal_spec(path: &Path) -> Result<ParametricChain> {
    let v: Value = serde_json::from_str(&fs::read_to_string(path)?)?;
    let p = v["p"]
        .as_f64()
        .ok_or_else(|| Error::Parse("petal spec needs a numeric `p`".into()))?;
    ParametricChain::petal(atoms_from_json(&v, "u1")?, atoms_from_json(&v, "u2")?, p)
}

fn load_chain(args: &ChainArgs) -> Result<Loaded> {
    if let Some(path) = &args.chain {
        return Ok(Loaded {
            kernel: TransitionKernel::from_json_file(path)?,
            parametric: None,
        });
    }
    let spec = args.builtin.as_deref().unwrap_or_default();
    let parametric = match spec.split_once(':') {
        Some(("two-state", p)) => ParametricChain::two_state(
            p.parse()
                .map_err(|_| Error::Parse(format!("bad probability `{p}`")))?,
        )?,
        Some(("petal", file)) => load_petal_spec(Path::new(file))?,
        _ => return Err(Error::Parse(format!("unknown builtin chain `{spec}`"))),
    };
    Ok(Loaded {
        kernel: parametric.to_kernel()?,
        parametric: Some(parametric),
    })
}

/// Text output of one command: the artifact files and a summary.
struct Output {
    files: Vec<(String, String)>,
    summary: String,
    code: i32,
}

fn law_json(law: &PassageLaw, from: &str, to: &str) -> Value {
    json!({
        "from": from,
        "to": to,
        "horizon": law.horizon(),
        "mean_within_horizon": json_f64(law.truncated_mean()),
        "log_tail_mass": json_f64(law.log_tail_mass()),
        "tail_cert": law.tail_cert().map_or(Value::Null, |c| json!({"N0": c.n0, "rho": c.rho, "period": c.period})),
        "pmf": law.support().map(|(n, lp)| json!([n, json_f64(lp.exp())])).collect::<Vec<_>>(),
    })
}

fn pretty(v: &Value) -> String {
    let mut s = serde_json::to_string_pretty(v).expect("json");
    s.push('\n');
    s
}

fn cmd_fpt(args: &ChainArgs, format: Format) -> Result<Output> {
    let chain = load_chain(args)?;
    let (i, j) = (
        chain.kernel.index_of(&args.from)?,
        chain.kernel.index_of(&args.to)?,
    );
    let law = first_passage_law(&chain.kernel, i, j, args.horizon)?;
    let mut summary = format!(
        "T({} -> {}) over n <= {}\nmean within horizon: {}\ntail mass: {}\n",
        args.from,
        args.to,
        law.horizon(),
        fmt17(law.truncated_mean()),
        fmt17(law.log_tail_mass().exp())
    );
    match law.tail_cert() {
        Some(c) => summary.push_str(&format!(
            "tail certificate: N0 = {}, rho = {}, period = {}\n",
            c.n0,
            fmt17(c.rho),
            c.period
        )),
        None => summary.push_str("tail certificate: none\n"),
    }
    let file = match format {
        Format::Csv => ("fpt.csv".to_string(), law.to_csv()),
        Format::Json => (
            "fpt.json".to_string(),
            pretty(&law_json(&law, &args.from, &args.to)),
        ),
    };
    Ok(Output {
        files: vec![file],
        summary,
        code: EXIT_OK,
    })
}

fn witness_csv(v: &Verdict) -> String {
    let mut s = String::from("x,y,log_ratio\n");
    if let Verdict::ViolatesCi(ws) = v {
        for w in ws {
            s.push_str(&format!("{},{},{}\n", w.x, w.y, fmt17(w.log_ratio)));
        }
    }
    s
}

fn cmd_classify(fspec: &str, extensions: usize, format: Format) -> Result<Output> {
    let f: MomentFunction = fspec.parse()?;
    let budget = ClassifyBudget {
        extensions,
        ..ClassifyBudget::default()
    };
    let verdict = classify(&f, &budget)?;
    let mut j = json!({ "function": f.name(), "verdict": verdict.label() });
    match &verdict {
        Verdict::ViolatesCi(ws) => {
            j["witnesses"] = ws
                .iter()
                .map(|w| json!({"x": w.x, "y": w.y, "log_ratio": json_f64(w.log_ratio)}))
                .collect();
        }
        Verdict::ViolatesCii(rate) => j["rate"] = json_f64(*rate),
        _ => {}
    }
    let mut summary = format!("{}: {}\n", f.name(), verdict.label());
    if let Verdict::ViolatesCii(rate) = verdict {
        summary.push_str(&format!("growth rate: {}\n", fmt17(rate)));
    }
    if let Verdict::ViolatesCi(ws) = &verdict {
        summary.push_str(&format!(
            "largest log-ratio: {} at x = {}, y = {}\n",
            fmt17(ws[0].log_ratio),
            ws[0].x,
            ws[0].y
        ));
    }
    let mut files = vec![("classify.json".to_string(), pretty(&j))];
    if matches!(verdict, Verdict::ViolatesCi(_)) || format == Format::Csv {
        files.push(("witnesses.csv".to_string(), witness_csv(&verdict)));
    }
    if format == Format::Csv {
        files.swap(0, 1);
    }
    Ok(Output {
        files,
        summary,
        code: EXIT_OK,
    })
}

struct MomentArgs<'a> {
    fspec: &'a str,
    chain: &'a ChainArgs,
    threshold: Option<f64>,
    allow_uncertified: bool,
    mc: Option<u64>,
    cap: u64,
    max_horizon: Option<usize>,
    log_width: f64,
    seed: u64,
}

fn cmd_moment(a: MomentArgs<'_>, format: Format) -> Result<Output> {
    let f: MomentFunction = a.fspec.parse()?;
    let chain = load_chain(a.chain)?;
    let (i, j) = (
        chain.kernel.index_of(&a.chain.from)?,
        chain.kernel.index_of(&a.chain.to)?,
    );
    let policy = MomentPolicy {
        divergence_threshold: a.threshold,
        require_cert: !a.allow_uncertified,
        ..MomentPolicy::default()
    };
    let h = a.chain.horizon;
    let est = passage_f_moment(
        &chain.kernel,
        i,
        j,
        &f,
        &policy,
        h,
        a.max_horizon.unwrap_or(h).max(h),
        a.log_width,
    )?;
    let mut out = est.to_json();
    out["function"] = json!(f.name());
    out["from"] = json!(a.chain.from);
    out["to"] = json!(a.chain.to);
    let mut summary = format!(
        "E f(T({} -> {})) with f = {}: {}\nlog partial sum: {}\n",
        a.chain.from,
        a.chain.to,
        f.name(),
        est.verdict.label(),
        fmt17(est.log_partial_sum)
    );
    if let Some(hi) = est.log_upper() {
        summary.push_str(&format!("log upper bound: {}\n", fmt17(hi)));
    }
    let mut mc_row = String::new();
    if let Some(n) = a.mc {
        let sampler = chain.chain_ref().sampler(&a.chain.from, &a.chain.to)?;
        let mc = mc_f_moment(sampler.as_ref(), &f, n, a.cap, a.seed)?;
        out["mc"] = mc.to_json();
        summary.push_str(&format!(
            "monte carlo: mean {} +- {} (log {}), censored {}\n",
            fmt17(mc.mean()),
            fmt17(mc.std_err_linear()),
            fmt17(mc.mean_log_f),
            fmt17(mc.censored_fraction)
        ));
        mc_row = format!(
            ",{},{},{},{}",
            fmt17(mc.mean_log_f),
            fmt17(mc.std_err),
            fmt17(mc.censored_fraction),
            n
        );
    }
    let file = match format {
        Format::Json => ("moment.json".to_string(), pretty(&out)),
        Format::Csv => {
            let mut s = String::from("log_partial_sum,log_tail_bound,verdict,N");
            if a.mc.is_some() {
                s.push_str(",mc_mean_log_f,mc_std_err,mc_censored_fraction,mc_n_samples");
            }
            s.push_str(&format!(
                "\n{},{},{},{}{}\n",
                fmt17(est.log_partial_sum),
                est.log_tail_bound.map(fmt17).unwrap_or_default(),
                est.verdict.label(),
                est.horizon,
                mc_row
            ));
            ("moment.csv".to_string(), s)
        }
    };
    Ok(Output {
        files: vec![file],
        summary,
        code: EXIT_OK,
    })
}

fn demo_output(report: DemoReport) -> Output {
    let code = if report.success() {
        EXIT_OK
    } else {
        EXIT_FAILURE
    };
    Output {
        files: vec![
            ("demo.json".to_string(), pretty(&report.to_json())),
            ("trace.csv".to_string(), report.trace_csv()),
        ],
        summary: report.text_summary(),
        code,
    }
}

fn dispatch(cli: &Cli) -> Result<Output> {
    match &cli.command {
        Command::Fpt(args) => cmd_fpt(args, cli.format.unwrap_or(Format::Csv)),
        Command::Classify { fspec, extensions } => {
            cmd_classify(fspec, *extensions, cli.format.unwrap_or(Format::Json))
        }
        Command::Moment {
            fspec,
            chain,
            threshold,
            allow_uncertified,
            mc,
            cap,
            max_horizon,
            log_width,
        } => cmd_moment(
            MomentArgs {
                fspec,
                chain,
                threshold: *threshold,
                allow_uncertified: *allow_uncertified,
                mc: *mc,
                cap: *cap,
                max_horizon: *max_horizon,
                log_width: *log_width,
                seed: cli.seed,
            },
            cli.format.unwrap_or(Format::Json),
        ),
        Command::Demo(DemoCommand::Sharp {
            fspec,
            p,
            kmax,
            threshold,
        }) => {
            let f: MomentFunction = fspec.parse()?;
            Ok(demo_output(demo_sharp(&f, *p, *kmax, *threshold)?))
        }
        Command::Demo(DemoCommand::Exponential {
            delta,
            p,
            threshold,
        }) => Ok(demo_output(demo_exponential(*delta, *p, *threshold)?)),
    }
}

/// Exit code for a library error.
pub fn exit_code(e: &Error) -> i32 {
    match e {
        Error::Precondition(_) | Error::TooFewWitnesses(_) | Error::BudgetExhausted { .. } => {
            EXIT_FAILURE
        }
        _ => EXIT_INPUT,
    }
}

fn configure_threads() {
    if let Some(n) = std::env::var("RECUR_MOMENTS_THREADS")
        .ok()
        .and_then(|v| v.parse::<usize>().ok())
    {
        // a second call in the same process keeps the first pool
        let _ = rayon::ThreadPoolBuilder::new()
            .num_threads(n.max(1))
            .build_global();
    }
}

/// Runs one invocation. Without `--output-dir` the first artifact goes to
/// `out` and the summary to `err`; with it, artifacts are written as files
/// and the summary goes to `out`.
pub fn run_with(cli: &Cli, out: &mut dyn Write, err: &mut dyn Write) -> i32 {
    configure_threads();
    let result = dispatch(cli).and_then(|o| {
        match &cli.output_dir {
            Some(dir) => {
                fs::create_dir_all(dir)?;
                for (name, body) in &o.files {
                    fs::write(dir.join(name), body)?;
                }
                out.write_all(o.summary.as_bytes())?;
            }
            None => {
                if let Some((_, body)) = o.files.first() {
                    out.write_all(body.as_bytes())?;
                }
                err.write_all(o.summary.as_bytes())?;
            }
        }
        Ok(o.code)
    });
    match result {
        Ok(code) => code,
        Err(e) => {
            let _ = writeln!(err, "error: {e}");
            exit_code(&e)
        }
    }
}

/// Parses `args` (program name first) and runs; clap usage errors exit 2.
pub fn run<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    match Cli::try_parse_from(args) {
        Ok(cli) => run_with(
            &cli,
            &mut std::io::stdout().lock(),
            &mut std::io::stderr().lock(),
        ),
        Err(e) => {
            let _ = e.print();
            if e.use_stderr() {
                EXIT_INPUT
            } else {
                EXIT_OK
            }
        }
    }
}
