use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use gensyn::baselines::Method;
use gensyn::graph::{build_graph, order_variables};
use gensyn::pipeline::{self, Manifest, RunConfig, RunReport, DEFAULT_TAU_GRID};
use gensyn::tables::MarginalSet;
use gensyn::truth::{make_ground_truth, GroundTruthSpec, TARGET_LOCATION};
use gensyn::{Error, Schema};

mod plot;

const EXIT_CONFIG: u8 = 2;
const EXIT_NUMERICAL: u8 = 3;
const EXIT_PARTIAL: u8 = 4;

#[derive(Parser)]
#[command(name = "gensyn", version, about = "Synthetic categorical microdata from aggregate tables")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Generate populations and metrics for one location or a manifest of locations.
    Run {
        #[arg(long, required_unless_present = "manifest", conflicts_with = "manifest")]
        config: Option<PathBuf>,
        /// TOML file with `[[location]]` entries (name, config).
        #[arg(long)]
        manifest: Option<PathBuf>,
        /// gensyn, maxent, conditional, sync, syntropy, synthacs or all; repeatable.
        #[arg(long, value_delimiter = ',')]
        method: Vec<String>,
        #[arg(long, conflicts_with = "tau_sweep")]
        tau: Option<f64>,
        /// Sweep τ over {10, 1, 0.1, 0.01} / N unless the config lists its own grid.
        #[arg(long)]
        tau_sweep: bool,
        #[arg(long)]
        seed: Option<u64>,
        /// Output directory (single-location runs only).
        #[arg(long, conflicts_with = "manifest")]
        output: Option<PathBuf>,
    },
    /// Draw a ground-truth population and derive its aggregate tables.
    Truth {
        #[arg(long)]
        spec: PathBuf,
        /// Output directory; defaults to `truth` beside the spec.
        #[arg(long)]
        out: Option<PathBuf>,
        #[arg(long)]
        seed: Option<u64>,
    },
    /// Print the dependency graph (DOT) and the variable order.
    Graph {
        #[arg(long)]
        config: PathBuf,
    },
    /// Render SVG charts from a run's output directory.
    Plot {
        #[arg(long)]
        report: PathBuf,
    },
}

fn error_code(e: &Error) -> u8 {
    if e.is_input_error() {
        EXIT_CONFIG
    } else {
        EXIT_NUMERICAL
    }
}

fn report_code(report: &RunReport) -> u8 {
    report.exit_code() as u8
}

fn print_report(report: &RunReport, out: &Path) {
    for m in &report.methods {
        match (&m.metrics, &m.error) {
            (Some(r), _) => {
                let opt = |v: Option<f64>| v.map_or("-".to_string(), |x| format!("{x:.4}"));
                println!(
                    "{:12} tae {:>10.1}  kl {:>8}  frobenius {:>8}",
                    m.method,
                    r.tae,
                    opt(r.kl),
                    opt(r.frobenius)
                );
            }
            (None, Some(e)) => println!("{:12} FAILED: {e}", m.method),
            (None, None) => println!("{:12} FAILED", m.method),
        }
    }
    for p in &report.tau_sweep {
        let rare: Vec<String> = p.recovery_error.iter().map(|(k, v)| format!("{k}={v:.0}%")).collect();
        println!(
            "tau {:.3e}  support {:>6}  kl {}  {}",
            p.tau,
            p.support,
            p.kl.map_or("-".into(), |k| format!("{k:.4}")),
            rare.join(" ")
        );
    }
    println!("outputs in {}", out.display());
}

fn apply_overrides(cfg: &mut RunConfig, method: &[String], tau: Option<f64>, tau_sweep: bool, seed: Option<u64>) {
    if !method.is_empty() {
        cfg.methods = method.to_vec();
    }
    if tau.is_some() {
        cfg.tau = tau;
    }
    if tau_sweep && cfg.tau_sweep.is_none() {
        cfg.tau_sweep = Some(DEFAULT_TAU_GRID.to_vec());
    }
    if let Some(s) = seed {
        cfg.seed = s;
    }
}

fn cmd_run(
    config: Option<PathBuf>,
    manifest: Option<PathBuf>,
    method: Vec<String>,
    tau: Option<f64>,
    tau_sweep: bool,
    seed: Option<u64>,
    output: Option<PathBuf>,
) -> Result<u8, Error> {
    if let Some(path) = manifest {
        let m = Manifest::load(&path)?;
        let results = pipeline::run_manifest(&m, |cfg| apply_overrides(cfg, &method, tau, tau_sweep, seed));
        let mut codes = Vec::new();
        for (name, r) in results {
            match r {
                Ok(report) => {
                    println!("[{name}]");
                    print_report(&report, Path::new(""));
                    codes.push(report_code(&report));
                }
                Err(e) => {
                    eprintln!("[{name}] {e}");
                    codes.push(error_code(&e));
                }
            }
        }
        return Ok(match codes.iter().filter(|&&c| c != 0).count() {
            0 => 0,
            n if n < codes.len() => EXIT_PARTIAL,
            _ => codes.into_iter().max().unwrap_or(0),
        });
    }
    let path = config.expect("clap requires --config without --manifest");
    let mut cfg = RunConfig::load(&path)?;
    apply_overrides(&mut cfg, &method, tau, tau_sweep, seed);
    if let Some(o) = output {
        cfg.output = o;
    }
    let report = pipeline::run(&cfg)?;
    print_report(&report, &cfg.output);
    Ok(report_code(&report))
}

fn cmd_truth(spec_path: PathBuf, out: Option<PathBuf>, seed: Option<u64>) -> Result<u8, Error> {
    let mut spec = GroundTruthSpec::load(&spec_path)?;
    if let Some(s) = seed {
        spec.seed = s;
    }
    let out = out.unwrap_or_else(|| spec_path.parent().unwrap_or(Path::new(".")).join("truth"));
    let gt = make_ground_truth(&spec)?;
    let files = gt.save(&out)?;
    // ready-to-run configuration for every method against the new truth
    let rel = |p: &Path| PathBuf::from(p.file_name().expect("saved files have names"));
    let mut cfg = RunConfig::new(rel(&files.schema), rel(&files.d1), rel(&files.d2), rel(&files.d3), spec.population);
    cfg.reference = Some(rel(&files.reference));
    cfg.methods = vec!["all".into()];
    cfg.seed = spec.seed;
    cfg.output = PathBuf::from("results");
    cfg.save(out.join("run.toml"))?;
    println!(
        "truth population of {} over {} variables, {} auxiliary locations",
        gt.population.size(),
        gt.schema.len(),
        gt.d3.location_count()
    );
    println!("wrote {} (run with: gensyn run --config {})", out.display(), out.join("run.toml").display());
    Ok(0)
}

fn cmd_graph(path: PathBuf) -> Result<u8, Error> {
    let cfg = RunConfig::load(&path)?;
    let schema = Schema::load(&cfg.schema)?;
    let d1 = MarginalSet::load(&cfg.d1, &schema, TARGET_LOCATION)?;
    let graph = build_graph(&schema)?;
    let order = order_variables(&graph, &d1, cfg.order_mode()?)?;
    print!("{}", graph.to_dot());
    let names: Vec<String> = order
        .iter()
        .map(|&v| format!("{} (level {})", schema.variable(v).name, graph.level(v)))
        .collect();
    println!("// order: {}", names.join(" -> "));
    Ok(0)
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let result = match cli.command {
        Command::Run {
            config,
            manifest,
            method,
            tau,
            tau_sweep,
            seed,
            output,
        } => {
            if let Some(bad) = method
                .iter()
                .find(|m| !m.eq_ignore_ascii_case("all") && m.parse::<Method>().is_err())
            {
                eprintln!("error: unknown method `{bad}`");
                return ExitCode::from(EXIT_CONFIG);
            }
            cmd_run(config, manifest, method, tau, tau_sweep, seed, output)
        }
        Command::Truth { spec, out, seed } => cmd_truth(spec, out, seed),
        Command::Graph { config } => cmd_graph(config),
        Command::Plot { report } => plot::render(&report).map(|files| {
            for f in files {
                println!("wrote {}", f.display());
            }
            0
        }),
    };
    match result {
        Ok(code) => ExitCode::from(code),
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(error_code(&e))
        }
    }
}
