use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use olec::engine::{greedy_color, run_paper_algorithm, verify_coloring};
use olec::harness::{
    check_marginals, check_negative_dependence, generate_instance, load_instance,
    parse_trace_point, read_instance_file, resolve_q, run_trials_on, trials_csv, Algorithm,
    ExperimentConfig, ExperimentReport, GeneratorSpec, InstanceSource, QPolicy,
    MIN_TRACE_SAMPLES,
};
use olec::instance::OnlineInstance;

/// Exit code for a completed command whose verdict is negative.
const EXIT_CHECK_FAILED: u8 = 3;

#[derive(Parser)]
#[command(name = "olec", version, about = "Online bipartite edge coloring experiments")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Write a generated instance in the text format.
    Gen {
        /// `regular:<side>:<delta>:<seed>` or `gadget:<r>:<k>`.
        spec: GeneratorSpec,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Run seeded trials and write a JSON report.
    Run(RunArgs),
    /// Check a coloring against an instance.
    Verify {
        #[arg(long)]
        instance: PathBuf,
        /// One line per arrival with the colors of its edges in neighbor order.
        #[arg(long)]
        coloring: PathBuf,
    },
    /// Summarize a report and re-check its traced indicators.
    Stats {
        #[arg(long)]
        report: PathBuf,
        #[arg(long, default_value_t = MIN_TRACE_SAMPLES)]
        min_samples: usize,
    },
}

#[derive(Args)]
struct RunArgs {
    /// JSON experiment config; command-line flags override its fields.
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long, conflicts_with = "generate")]
    instance: Option<PathBuf>,
    #[arg(long)]
    generate: Option<GeneratorSpec>,
    #[arg(long, value_enum)]
    algo: Option<Algorithm>,
    /// An integer, `auto`, or `appendix:<r>`.
    #[arg(long)]
    q: Option<QPolicy>,
    #[arg(long)]
    trials: Option<usize>,
    #[arg(long)]
    seed: Option<u64>,
    /// `t:c:v1[,v2...]`; repeatable.
    #[arg(long = "trace", value_parser = parse_trace_arg)]
    trace: Vec<olec::engine::TracePoint>,
    /// Include per-trial records in the report.
    #[arg(long)]
    per_trial: bool,
    /// Report path; stdout if absent.
    #[arg(long)]
    out: Option<PathBuf>,
    /// Per-trial CSV path.
    #[arg(long)]
    csv: Option<PathBuf>,
    /// Write the coloring of trial 0 here.
    #[arg(long)]
    coloring_out: Option<PathBuf>,
}

fn parse_trace_arg(s: &str) -> Result<olec::engine::TracePoint, String> {
    parse_trace_point(s).map_err(|e| e.to_string())
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    match dispatch(Cli::parse()) {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::FAILURE
        }
    }
}

fn dispatch(cli: Cli) -> Result<ExitCode> {
    match cli.command {
        Command::Gen { spec, out } => {
            let instance = generate_instance(&spec)?;
            write_output(out.as_deref(), &instance.to_text())?;
            Ok(ExitCode::SUCCESS)
        }
        Command::Run(args) => run(args),
        Command::Verify { instance, coloring } => verify(&instance, &coloring),
        Command::Stats {
            report,
            min_samples,
        } => stats(&report, min_samples),
    }
}

fn write_output(path: Option<&Path>, text: &str) -> Result<()> {
    match path {
        Some(p) => fs::write(p, text).with_context(|| format!("writing {}", p.display())),
        None => {
            std::io::stdout().write_all(text.as_bytes())?;
            Ok(())
        }
    }
}

fn build_config(args: &RunArgs) -> Result<ExperimentConfig> {
    let source = match (&args.instance, &args.generate) {
        (Some(p), _) => Some(InstanceSource::File(p.clone())),
        (_, Some(g)) => Some(InstanceSource::Generate(*g)),
        _ => None,
    };
    let mut config = match &args.config {
        Some(path) => {
            let text = fs::read_to_string(path)
                .with_context(|| format!("reading {}", path.display()))?;
            let mut c: ExperimentConfig = serde_json::from_str(&text)
                .with_context(|| format!("parsing {}", path.display()))?;
            if let Some(s) = source {
                c.instance = s;
            }
            c
        }
        None => match source {
            Some(s) => ExperimentConfig::new(s),
            None => bail!("one of --instance, --generate or --config is required"),
        },
    };
    if let Some(a) = args.algo {
        config.algorithm = a;
    }
    if let Some(q) = args.q {
        config.q = q;
    }
    if let Some(t) = args.trials {
        config.trials = t;
    }
    if let Some(s) = args.seed {
        config.seed = s;
    }
    if !args.trace.is_empty() {
        config.trace = args.trace.clone();
    }
    config.per_trial |= args.per_trial;
    config.validate()?;
    Ok(config)
}

fn run(args: RunArgs) -> Result<ExitCode> {
    let mut config = build_config(&args)?;
    let instance = load_instance(&config.instance)?;
    let keep_trials = config.per_trial;
    config.per_trial |= args.csv.is_some();
    let mut report = run_trials_on(&config, &instance)?;
    if let (Some(path), Some(records)) = (&args.csv, &report.trials) {
        fs::write(path, trials_csv(records))
            .with_context(|| format!("writing {}", path.display()))?;
    }
    if !keep_trials {
        report.trials = None;
        report.config.per_trial = false;
    }
    if let Some(path) = &args.coloring_out {
        let record = match config.algorithm {
            Algorithm::Paper => {
                let (q, _) = resolve_q(config.q, &instance);
                let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
                run_paper_algorithm(&instance, q, &mut rng)?
            }
            Algorithm::Greedy => greedy_color(&instance),
        };
        let text: String = record
            .edge_colors
            .iter()
            .map(|edges| {
                let cols: Vec<String> = edges.iter().map(|&(_, c)| c.to_string()).collect();
                cols.join(" ") + "\n"
            })
            .collect();
        fs::write(path, text).with_context(|| format!("writing {}", path.display()))?;
    }
    write_output(args.out.as_deref(), &(report.to_json() + "\n"))?;
    Ok(ExitCode::SUCCESS)
}

fn read_coloring(instance: &OnlineInstance, path: &Path) -> Result<Vec<Vec<(u32, u32)>>> {
    let text = fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
    text.lines()
        .enumerate()
        .map(|(t, line)| {
            let colors = line
                .split_whitespace()
                .map(|c| c.parse::<u32>())
                .collect::<Result<Vec<_>, _>>()
                .with_context(|| format!("coloring line {}", t + 1))?;
            let neighbors = instance.arrivals().get(t).map(Vec::as_slice).unwrap_or(&[]);
            // Unpaired entries surface as mismatches in the verdict.
            let mut edges: Vec<(u32, u32)> =
                neighbors.iter().copied().zip(colors.iter().copied()).collect();
            if colors.len() > neighbors.len() {
                edges.extend(colors[neighbors.len()..].iter().map(|&c| (u32::MAX, c)));
            }
            Ok(edges)
        })
        .collect()
}

fn verify(instance_path: &Path, coloring: &Path) -> Result<ExitCode> {
    let instance = read_instance_file(instance_path)?;
    let edges = read_coloring(&instance, coloring)?;
    let verdict = verify_coloring(&instance, &edges);
    println!("distinct_colors {}", verdict.distinct_colors);
    if verdict.is_proper() {
        println!("proper");
        return Ok(ExitCode::SUCCESS);
    }
    for issue in &verdict.issues {
        println!("{issue:?}");
    }
    println!("improper ({} issues)", verdict.issues.len());
    Ok(ExitCode::from(EXIT_CHECK_FAILED))
}

fn stats(path: &Path, min_samples: usize) -> Result<ExitCode> {
    let text = fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
    let report: ExperimentReport =
        serde_json::from_str(&text).with_context(|| format!("parsing {}", path.display()))?;
    let a = &report.aggregate;
    let r = &report.resolved;
    println!("instance      n={} delta={} arrivals={}", r.n, r.delta, r.num_arrivals);
    match r.q {
        Some(q) => println!("palette       {} (q={q})", r.palette_size),
        None => println!("palette       {} (greedy)", r.palette_size),
    }
    println!("trials        {} ({} errored)", a.trials, a.errored);
    println!(
        "failure mode  {} trials, rate {:.4}",
        a.trials_with_failure, a.failure_mode_entry_rate
    );
    println!("invalid       {} trials, rate {:.4}", a.invalid_trials, a.invalid_rate);
    if let Some(c) = &a.colors_used {
        println!("colors used   min {} max {} mean {:.2}", c.min, c.max, c.mean);
    }
    let (Some(q), false) = (r.q, a.traces.is_empty()) else {
        return Ok(ExitCode::SUCCESS);
    };
    let marg = check_marginals(a, r.delta, q, min_samples)?;
    for c in &marg.checks {
        println!(
            "marginal t={} c={} v={} d={} emp={:.4} target={:.4} tol={:.4} {}",
            c.t,
            c.color,
            c.node,
            c.degree_before,
            c.empirical,
            c.target,
            c.tolerance,
            if c.pass { "ok" } else { "FAIL" }
        );
    }
    let neg = check_negative_dependence(a, min_samples)?;
    for c in &neg.checks {
        println!(
            "joint t={} c={} nodes={:?} joint={:.4} product={:.4} slack={:.4} {}",
            c.t,
            c.color,
            c.nodes,
            c.joint,
            c.product,
            c.slack,
            if c.pass { "ok" } else { "FAIL" }
        );
    }
    if marg.pass && neg.pass {
        Ok(ExitCode::SUCCESS)
    } else {
        Ok(ExitCode::from(EXIT_CHECK_FAILED))
    }
}
