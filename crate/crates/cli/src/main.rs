//! `phpoisson` command-line tool.
//!
//! Every subcommand writes its main output to stdout (or `--out`) and ends
//! CSV output with a `# tail_bound=...` comment line. Subcommands whose
//! output is JSON report the bound on stderr instead, so the JSON stays
//! parseable.
//!
//! Exit status: 0 success, 1 I/O error, 2 parse or usage error, 3 invalid
//! model or input, 4 divergent representation, 5 numerical failure. Errors
//! print one line to stderr: `error kind=<kind> reason="<message>"`.

use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};

use phpoisson::compound::{self, SeverityDensity};
use phpoisson::em::{self, Acceleration, EMParams, FitOptions};
use phpoisson::genab0::{self, DiscreteDensity, GenAB0Rep};
use phpoisson::io::{self, Model, NumberFormat};
use phpoisson::phpoisson::{self as ph, Moments, PHPoissonRep};
use phpoisson::simulate::{self, SimConfig};
use phpoisson::Error;

const DEFAULT_TOL: f64 = 1e-12;
const DEFAULT_N_CAP: usize = 100_000;
/// Horizon for (a,b,1) densities when `--n-max` is not given.
const DEFAULT_AB1_N_MAX: usize = 200;
/// Truncation of the exact conditional sampler.
const EXACT_SAMPLER_TAIL: f64 = 1e-15;

#[derive(Parser, Debug)]
#[command(name = "phpoisson", version, about = "Matrix-form Poisson count distributions")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args, Debug, Clone)]
struct Common {
    /// Write the main output here instead of stdout.
    #[arg(long)]
    out: Option<PathBuf>,
    /// Truncation tolerance for series and densities.
    #[arg(long, default_value_t = DEFAULT_TOL)]
    tol: f64,
    /// Significant digits for CSV numbers (default: shortest exact form).
    #[arg(long)]
    digits: Option<usize>,
    /// Human-readable tables and indented JSON.
    #[arg(long)]
    pretty: bool,
}

impl Common {
    fn fmt(&self) -> NumberFormat {
        self.digits.map_or(NumberFormat::RoundTrip, NumberFormat::Digits)
    }
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Density of a model as CSV `n,p`.
    Pmf {
        #[arg(long)]
        model: PathBuf,
        /// Fixed horizon; by default the density is truncated at `--tol`.
        #[arg(long)]
        n_max: Option<usize>,
        #[command(flatten)]
        common: Common,
    },
    /// Mean, variance, CV and factorial moments.
    Moments {
        #[arg(long)]
        model: PathBuf,
        /// Highest factorial moment to report.
        #[arg(long, default_value_t = 4)]
        order: usize,
        #[command(flatten)]
        common: Common,
    },
    /// Remove phases unreachable from the support of beta (genab0 models).
    Reduce {
        #[arg(long)]
        model: PathBuf,
        #[command(flatten)]
        common: Common,
    },
    /// Convert between ph-poisson and physical representations.
    Convert {
        #[arg(long)]
        model: PathBuf,
        #[command(flatten)]
        common: Common,
    },
    /// Compound density `n,g` of a frequency model and a severity CSV.
    Compound {
        #[arg(long)]
        model: PathBuf,
        #[arg(long)]
        severity: PathBuf,
        /// Horizon; by default mean + 10 standard deviations of the sum.
        #[arg(long)]
        n_max: Option<usize>,
        #[command(flatten)]
        common: Common,
    },
    /// Draw samples of N(1) given survival past time 1.
    Simulate {
        #[arg(long)]
        model: PathBuf,
        #[arg(long, default_value_t = 1000)]
        n_samples: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long, value_enum, default_value_t = Method::Rejection)]
        method: Method,
        /// Per-sample attempt limit of the rejection sampler.
        #[arg(long, default_value_t = simulate::DEFAULT_MAX_REJECTIONS)]
        max_rejections: u64,
        /// Emit `value,count` rows instead of one value per line.
        #[arg(long)]
        histogram: bool,
        #[command(flatten)]
        common: Common,
    },
    /// EM fit of a physical model to a sample; writes the trace CSV.
    Fit {
        #[arg(long)]
        sample: PathBuf,
        /// JSON with optional theta0, order, max_iter, tol, seed, plain_em.
        #[arg(long)]
        config: Option<PathBuf>,
        /// Starting model (physical); overrides the config's theta0.
        #[arg(long)]
        model: Option<PathBuf>,
        /// Order of the default mixture start.
        #[arg(long)]
        order: Option<usize>,
        #[arg(long)]
        max_iter: Option<usize>,
        /// Stop once the relative log-likelihood gain drops below this.
        #[arg(long)]
        fit_tol: Option<f64>,
        #[arg(long)]
        seed: Option<u64>,
        /// Disable SQUAREM extrapolation.
        #[arg(long)]
        plain_em: bool,
        /// Write the fitted model JSON here (default: `# model=` comment).
        #[arg(long)]
        model_out: Option<PathBuf>,
        #[command(flatten)]
        common: Common,
    },
    /// Stationarity residuals of a physical model on a sample.
    Kkt {
        #[arg(long)]
        model: PathBuf,
        #[arg(long)]
        sample: PathBuf,
        #[command(flatten)]
        common: Common,
    },
}

#[derive(ValueEnum, Debug, Clone, Copy, PartialEq, Eq)]
enum Method {
    Rejection,
    Exact,
}

/// Failure with the exit status it maps to.
#[derive(Debug)]
struct Failure {
    code: u8,
    kind: &'static str,
    reason: String,
}

impl From<Error> for Failure {
    fn from(e: Error) -> Self {
        let (code, kind) = match &e {
            Error::Io(_) => (1, "io"),
            Error::Parse(_) => (2, "parse"),
            Error::Dimension(_) => (3, "dimension"),
            Error::Invalid(_) => (3, "invalid"),
            Error::ImpossibleObservation { .. } => (3, "impossible-observation"),
            Error::Divergence(_) => (4, "divergence"),
            Error::Numerical(_) => (5, "numerical"),
            Error::Consistency { .. } => (5, "consistency"),
            Error::Acceptance { .. } => (5, "acceptance"),
        };
        Failure {
            code,
            kind,
            reason: e.to_string(),
        }
    }
}

fn usage(reason: impl Into<String>) -> Failure {
    Failure {
        code: 2,
        kind: "usage",
        reason: reason.into(),
    }
}

fn invalid(reason: impl Into<String>) -> Failure {
    Failure {
        code: 3,
        kind: "invalid",
        reason: reason.into(),
    }
}

type CliResult<T> = std::result::Result<T, Failure>;

fn emit(common: &Common, text: &str) -> CliResult<()> {
    match &common.out {
        Some(path) => write_file(path, text),
        None => {
            print!("{text}");
            Ok(())
        }
    }
}

fn write_file(path: &Path, text: &str) -> CliResult<()> {
    fs::write(path, text).map_err(|e| Error::Io(e).into())
}

fn footer(tail: f64) -> String {
    format!("# tail_bound={tail:e}\n")
}

/// The model as a genab0 representation, when it has one.
fn as_genab0(model: &Model) -> CliResult<GenAB0Rep> {
    Ok(match model {
        Model::GenAB0(r) => r.clone(),
        Model::PHPoisson(r) => ph::as_genab0(r),
        Model::Physical(p) => ph::as_genab0(&ph::from_physical(p)?),
        Model::GenAB1(_) => return Err(invalid("genab1 models are not supported by this subcommand")),
    })
}

fn as_ph_poisson(model: &Model) -> CliResult<Option<PHPoissonRep>> {
    Ok(match model {
        Model::PHPoisson(r) => Some(r.clone()),
        Model::Physical(p) => Some(ph::from_physical(p)?),
        _ => None,
    })
}

fn density(model: &Model, n_max: Option<usize>, tol: f64) -> CliResult<DiscreteDensity> {
    if let Some(rep) = as_ph_poisson(model)? {
        return Ok(match n_max {
            Some(n) => ph::density(&rep, n),
            None => ph::density_to_tol(&rep, tol, DEFAULT_N_CAP),
        });
    }
    Ok(match model {
        Model::GenAB1(r) => genab0::density_ab1(r, n_max.unwrap_or(DEFAULT_AB1_N_MAX))?,
        other => {
            let rep = as_genab0(other)?;
            match n_max {
                Some(n) => genab0::density(&rep, n)?,
                None => genab0::density_to_tol(&rep, tol, DEFAULT_N_CAP)?,
            }
        }
    })
}

fn moments_of(model: &Model, order: usize, tol: f64) -> CliResult<Moments> {
    let k = order.max(2);
    if let Some(rep) = as_ph_poisson(model)? {
        return Ok(ph::moments(&rep, k)?);
    }
    let rep = as_genab0(model)?;
    let fm = (0..=k)
        .map(|n| genab0::factorial_moment(&rep, n, tol))
        .collect::<phpoisson::Result<Vec<_>>>()?;
    Ok(Moments::from_factorial(fm))
}

fn moments_table(m: &Moments, common: &Common) -> String {
    let fmt = common.fmt();
    let mut rows: Vec<(String, f64)> = vec![
        ("mean".into(), m.mean),
        ("variance".into(), m.variance),
        ("cv".into(), m.cv),
    ];
    rows.extend(m.factorial.iter().enumerate().skip(1).map(|(n, v)| (format!("factorial_{n}"), *v)));
    let mut out = String::new();
    if common.pretty {
        for (name, v) in rows {
            let _ = writeln!(out, "{name:<14}{v:>16.6}");
        }
    } else {
        out.push_str("quantity,value\n");
        for (name, v) in rows {
            let _ = writeln!(out, "{name},{}", fmt.fmt(v));
        }
    }
    out
}

fn run(cli: Cli) -> CliResult<()> {
    match cli.command {
        Command::Pmf { model, n_max, common } => {
            let model = io::read_model(&model)?;
            let d = density(&model, n_max, common.tol)?;
            let mut out = io::density_csv(&d, common.fmt());
            out.push_str(&footer(d.tail_bound()));
            emit(&common, &out)
        }
        Command::Moments { model, order, common } => {
            let model = io::read_model(&model)?;
            let m = moments_of(&model, order, common.tol)?;
            let mut out = moments_table(&m, &common);
            // closed forms for PH-Poisson; certified series otherwise
            let tail = if as_ph_poisson(&model)?.is_some() { 0.0 } else { common.tol };
            out.push_str(&footer(tail));
            emit(&common, &out)
        }
        Command::Reduce { model, common } => {
            let rep = match io::read_model(&model)? {
                Model::GenAB0(r) => r,
                other => return Err(invalid(format!("reduce expects a genab0 model, got {}", other.kind()))),
            };
            let reduced = genab0::reduce_useless(&rep);
            let json = io::model_to_json(&Model::GenAB0(reduced), common.pretty)?;
            emit(&common, &format!("{json}\n"))?;
            eprint!("{}", footer(0.0));
            Ok(())
        }
        Command::Convert { model, common } => {
            let converted = match io::read_model(&model)? {
                Model::PHPoisson(r) => Model::Physical(ph::to_physical(&r, None)?),
                Model::Physical(p) => Model::PHPoisson(ph::from_physical(&p)?),
                other => {
                    return Err(invalid(format!(
                        "convert expects a ph-poisson or physical model, got {}",
                        other.kind()
                    )))
                }
            };
            let json = io::model_to_json(&converted, common.pretty)?;
            emit(&common, &format!("{json}\n"))?;
            eprint!("{}", footer(0.0));
            Ok(())
        }
        Command::Compound {
            model,
            severity,
            n_max,
            common,
        } => {
            let model = io::read_model(&model)?;
            let rep = as_genab0(&model)?;
            let f: SeverityDensity = io::read_severity(&severity)?;
            let n_max = match n_max {
                Some(n) => n,
                None => {
                    let m = moments_of(&model, 2, common.tol)?;
                    compound::suggest_horizon(m.mean, m.variance, &f)
                }
            };
            let g = compound::panjer_vector(&rep, &f, n_max)?;
            let mut out = io::series_csv("n,g", g.probs(), common.fmt());
            out.push_str(&footer(g.tail_bound()));
            emit(&common, &out)
        }
        Command::Simulate {
            model,
            n_samples,
            seed,
            method,
            max_rejections,
            histogram,
            common,
        } => {
            let phys = match io::read_model(&model)? {
                Model::Physical(p) => p,
                Model::PHPoisson(r) => ph::to_physical(&r, None)?,
                other => return Err(invalid(format!("simulate expects a physical model, got {}", other.kind()))),
            };
            let config = SimConfig::new(phys, n_samples, seed)?.with_max_rejections(max_rejections);
            let (data, note, tail) = match method {
                Method::Rejection => {
                    let draw = simulate::draw_conditional(&config)?;
                    let note = format!(
                        "# acceptance_rate={:e} analytic={:e} attempts={}\n",
                        draw.acceptance_rate, draw.analytic_acceptance, draw.attempts
                    );
                    (draw.data, note, 0.0)
                }
                Method::Exact => (simulate::draw_conditional_exact(&config)?, String::new(), EXACT_SAMPLER_TAIL),
            };
            let mut out = io::sample_csv(&data, histogram);
            out.push_str(&note);
            out.push_str(&footer(tail));
            emit(&common, &out)
        }
        Command::Fit {
            sample,
            config,
            model,
            order,
            max_iter,
            fit_tol,
            seed,
            plain_em,
            model_out,
            common,
        } => {
            let data = io::read_sample(&sample)?;
            let cfg = match &config {
                Some(path) => io::read_fit_config(path)?,
                None => io::FitConfig::default(),
            };
            let theta0 = match &model {
                Some(path) => match io::read_model(path)? {
                    Model::Physical(p) => Some(EMParams::from_physical(p)?),
                    other => return Err(invalid(format!("fit expects a physical start, got {}", other.kind()))),
                },
                None => cfg.theta0()?,
            };
            let theta0 = match theta0 {
                Some(t) => t,
                None => em::default_start(&data, order.or(cfg.order).unwrap_or(2))?,
            };
            let opts = FitOptions {
                max_iter: max_iter.or(cfg.max_iter).unwrap_or(em::DEFAULT_MAX_ITER),
                tol: fit_tol.or(cfg.tol).unwrap_or(em::DEFAULT_TOL_EM),
                acceleration: if plain_em || cfg.plain_em.unwrap_or(false) {
                    Acceleration::None
                } else {
                    Acceleration::Squarem
                },
            };
            if opts.max_iter == 0 {
                return Err(usage("max-iter must be at least 1"));
            }
            let trace = em::fit_with(&data, &theta0, &opts)?;
            let fitted = Model::Physical(trace.final_theta().physical().clone());
            let mut out = io::trace_csv(&trace, common.fmt());
            let last = trace.records.last().expect("trace holds the start");
            let _ = writeln!(
                out,
                "# iterations={} converged={} loglik={:?} seed={}",
                last.iter,
                trace.converged,
                last.loglik,
                seed.or(cfg.seed).map_or("none".to_string(), |s| s.to_string())
            );
            match &model_out {
                Some(path) => write_file(path, &format!("{}\n", io::model_to_json(&fitted, common.pretty)?))?,
                None => {
                    let _ = writeln!(out, "# model={}", io::model_to_json(&fitted, false)?);
                }
            }
            out.push_str(&footer(0.0));
            emit(&common, &out)
        }
        Command::Kkt { model, sample, common } => {
            let theta = match io::read_model(&model)? {
                Model::Physical(p) => EMParams::from_physical(p)?,
                other => return Err(invalid(format!("kkt expects a physical model, got {}", other.kind()))),
            };
            let data = io::read_sample(&sample)?;
            let stats = em::e_step(&theta, &data)?;
            let report = em::kkt_residuals(&theta, &data, &stats)?;
            let fmt = common.fmt();
            let mut out = String::from("quantity,i,j,value\n");
            let _ = writeln!(out, "r_nu,,,{}", fmt.fmt(report.r_nu));
            let _ = writeln!(out, "r_alpha,,,{}", fmt.fmt(report.r_alpha));
            for (i, row) in report.r_p.iter().enumerate() {
                for (j, v) in row.iter().enumerate() {
                    let value = v.map_or("inactive".to_string(), |x| fmt.fmt(x));
                    let _ = writeln!(out, "r_p,{},{},{value}", i + 1, j + 1);
                }
            }
            if let Some(eq) = &report.stochastic_equality {
                for i in 0..eq.rows() {
                    for j in 0..eq.cols() {
                        let _ = writeln!(out, "stochastic_eq,{},{},{}", i + 1, j + 1, fmt.fmt(eq[(i, j)]));
                    }
                }
            }
            let _ = writeln!(out, "# max_abs={:e} n={}", report.max_abs(), data.len());
            out.push_str(&footer(0.0));
            emit(&common, &out)
        }
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(f) => {
            let reason = f.reason.replace('\\', "\\\\").replace('"', "\\\"").replace('\n', " ");
            eprintln!("error kind={} reason=\"{reason}\"", f.kind);
            ExitCode::from(f.code)
        }
    }
}
