use std::io::{BufReader, Write};
use std::net::TcpListener;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use facesym::artifacts::write_json;
use facesym::config::{Overrides, BRIDGE_ENV};
use facesym::error::config_error;
use facesym::export::{export, fmt_f64};
use facesym::pipeline::{Run, Stage};
use facesym::{CliError, CliResult, RunConfig};
use facesym_core::classify::conformance::conformance_suite;
use facesym_core::classify::loopback::{serve, EchoModel};
use facesym_core::classify::Endpoint;
use facesym_core::probe::{occlusion_saliency, render_intervention};
use facesym_core::stats::{majority_ci, CiConfig, CITestSample, SyntheticCase};
use facesym_core::EmotionLabel;

#[derive(Parser)]
#[command(name = "facesym", version, about = "Symmetry audits of facial expression classifiers")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args, Clone)]
struct RunArgs {
    /// Run config (TOML, or JSON for `.json` files).
    #[arg(short, long)]
    config: Option<PathBuf>,
    #[arg(long)]
    seed: Option<u64>,
    /// Number of individuals.
    #[arg(short = 'n', long)]
    individuals: Option<usize>,
    /// Comma-separated emotions, e.g. `happy,sad`.
    #[arg(long, value_delimiter = ',')]
    emotions: Option<Vec<EmotionLabel>>,
    /// Run directory.
    #[arg(short, long)]
    output: Option<PathBuf>,
    /// Worker threads for the individual × emotion fan-out.
    #[arg(short, long)]
    workers: Option<usize>,
    /// Permutation rounds per test.
    #[arg(long)]
    permutations: Option<usize>,
}

impl RunArgs {
    fn load(&self) -> CliResult<RunConfig> {
        let mut config = match &self.config {
            Some(path) => RunConfig::load(path)?,
            None => RunConfig::default(),
        };
        config.apply(&Overrides {
            seed: self.seed,
            individuals: self.individuals,
            emotions: self.emotions.clone(),
            output: self.output.clone(),
            workers: self.workers,
            permutations: self.permutations,
        });
        config.apply_bridge_env(std::env::var(BRIDGE_ENV).ok());
        config.validate()?;
        Ok(config)
    }
}

#[derive(Subcommand)]
enum Command {
    /// Draw identity and appearance for every individual.
    Sample(RunArgs),
    /// Fit each individual's target expression per emotion at s = t = 1.
    Optimize(RunArgs),
    /// Evaluate the classifier over the (s, t) intervention grids.
    Grid(RunArgs),
    /// Local impact scores from the grids.
    Score(RunArgs),
    /// Permutation tests, Holm correction and per-emotion reports.
    Sigtest(RunArgs),
    /// All stages, then tables into `<output>/tables`.
    Run(RunArgs),
    /// Global-score and significant-count tables over finished runs.
    Export {
        #[arg(required = true)]
        runs: Vec<PathBuf>,
        /// Output directory; defaults to `<run>/tables` for a single run.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Conditional-independence battery on a CSV with columns x,y,z or on a
    /// synthetic case.
    Citest {
        #[arg(long, conflicts_with = "synthetic", required_unless_present = "synthetic")]
        input: Option<PathBuf>,
        #[arg(long, value_enum)]
        synthetic: Option<Synthetic>,
        #[arg(long, default_value_t = 500)]
        n: usize,
        #[arg(long, default_value_t = 0.01)]
        delta: f64,
        #[arg(long, default_value_t = 0)]
        seed: u64,
    },
    /// Occlusion saliency of one fitted face at s = t = 1.
    Saliency {
        #[command(flatten)]
        run: RunArgs,
        #[arg(long)]
        individual: usize,
        #[arg(long)]
        emotion: EmotionLabel,
        #[arg(long, default_value_t = 16)]
        patch: u32,
        #[arg(long, default_value_t = 8)]
        stride: u32,
        /// JSON heatmap destination.
        #[arg(long)]
        out: PathBuf,
        /// Also write the rendered face as PNG.
        #[arg(long)]
        png: Option<PathBuf>,
    },
    /// Serve the echo model over stdio, or TCP with `--tcp`.
    #[command(hide = true)]
    BridgeEcho {
        #[arg(long)]
        tcp: Option<String>,
    },
    /// Check a bridge endpoint against the wire protocol.
    #[command(hide = true)]
    BridgeCheck {
        endpoint: String,
        #[arg(long, default_value = "echo")]
        model: String,
    },
}

#[derive(Clone, Copy, clap::ValueEnum)]
enum Synthetic {
    Independent,
    Dependent,
    Duplicate,
}

fn stage(args: &RunArgs, stage: Stage) -> CliResult<()> {
    let config = args.load()?;
    let classifier = if matches!(stage, Stage::Optimize | Stage::Grid) { Some(config.classifier.build()?) } else { None };
    let run = Run::open(config)?;
    let out = run.stage(stage, classifier.as_deref())?;
    println!(
        "{}: {} computed, {} reused, {} classifier calls",
        stage.as_str(),
        out.computed,
        out.reused,
        out.classifier_calls
    );
    Ok(())
}

fn run_all(args: &RunArgs) -> CliResult<()> {
    let config = args.load()?;
    let classifier = config.classifier.build()?;
    let run = Run::open(config)?;
    let summary = run.run_all(classifier.as_ref())?;
    for s in &summary.stages {
        println!("{}: {} computed, {} reused", s.stage.as_str(), s.computed, s.reused);
    }
    println!("classifier calls: {}", summary.classifier_calls());
    for r in &summary.reports {
        println!(
            "{}: global score {}, significant {}/{}",
            r.emotion,
            fmt_f64(r.global_score),
            r.significant_count,
            r.n
        );
    }
    export(&[run.dir().to_path_buf()], &run.dir().join("tables"))?;
    Ok(())
}

fn read_ci_csv(path: &Path) -> CliResult<CITestSample> {
    let mut reader = csv::Reader::from_path(path)?;
    let mut sample = CITestSample { x: vec![], y: vec![], z: vec![] };
    for row in reader.deserialize::<(f64, f64, f64)>() {
        let (x, y, z) = row?;
        sample.x.push(x);
        sample.y.push(y);
        sample.z.push(z);
    }
    Ok(sample)
}

fn citest(input: Option<&Path>, synthetic: Option<Synthetic>, n: usize, delta: f64, seed: u64) -> CliResult<()> {
    let sample = match (input, synthetic) {
        (Some(p), _) => read_ci_csv(p)?,
        (None, Some(case)) => {
            let case = match case {
                Synthetic::Independent => SyntheticCase::Independent,
                Synthetic::Dependent => SyntheticCase::Dependent,
                Synthetic::Duplicate => SyntheticCase::Duplicate,
            };
            case.sample(n, seed)
        }
        (None, None) => return Err(config_error("citest needs --input or --synthetic")),
    };
    let decision = majority_ci(&sample, delta, &CiConfig { seed, ..CiConfig::default() })?;
    println!("{}", serde_json::to_string_pretty(&decision).expect("decisions serialize"));
    Ok(())
}

#[allow(clippy::too_many_arguments)]
fn saliency(
    args: &RunArgs,
    individual: usize,
    emotion: EmotionLabel,
    patch: u32,
    stride: u32,
    out: &Path,
    png: Option<&Path>,
) -> CliResult<()> {
    let config = args.load()?;
    if individual >= config.individuals {
        return Err(config_error(format!("individual {individual} outside 0..{}", config.individuals)));
    }
    let classifier = config.classifier.build()?;
    let run = Run::open(config)?;
    let ind = run.fitted_individual(emotion, individual)?;
    let settings = &run.config().render;
    let image = render_intervention(run.model(), &ind, ind.expression(emotion)?, 1.0, 1.0, settings)?;
    let fill = settings.background;
    let map = occlusion_saliency(classifier.as_ref(), &image, emotion, patch, stride, fill)?;
    write_json(out, &map)?;
    if let Some(p) = png {
        image.save_png(p)?;
    }
    println!("baseline {} over {}x{} patches", fmt_f64(map.baseline), map.rows, map.cols);
    Ok(())
}

fn bridge_echo(tcp: Option<&str>) -> CliResult<()> {
    let model = EchoModel::default();
    match tcp {
        None => {
            let stdin = std::io::stdin();
            serve(&model, stdin.lock(), std::io::stdout().lock())?;
        }
        Some(addr) => {
            let listener = TcpListener::bind(addr).map_err(|e| CliError::io(addr, e))?;
            let local = listener.local_addr().map_err(|e| CliError::io(addr, e))?;
            // the bound address goes first so callers can pass port 0
            println!("tcp://{local}");
            std::io::stdout().flush().map_err(|e| CliError::io("stdout", e))?;
            for stream in listener.incoming().flatten() {
                let model = model.clone();
                std::thread::spawn(move || {
                    if let Ok(read_half) = stream.try_clone() {
                        let _ = serve(&model, BufReader::new(read_half), stream);
                    }
                });
            }
        }
    }
    Ok(())
}

fn bridge_check(endpoint: &str, model: &str) -> CliResult<()> {
    let endpoint: Endpoint = endpoint.parse()?;
    let results = conformance_suite(&endpoint, model);
    for r in &results {
        println!("{} {}: {}", if r.passed { "PASS" } else { "FAIL" }, r.name, r.detail);
    }
    if results.iter().all(|r| r.passed) {
        Ok(())
    } else {
        Err(CliError::Core(facesym_core::Error::Transport(format!("{endpoint} failed the conformance suite"))))
    }
}

fn dispatch(cli: Cli) -> CliResult<()> {
    match cli.command {
        Command::Sample(a) => stage(&a, Stage::Sample),
        Command::Optimize(a) => stage(&a, Stage::Optimize),
        Command::Grid(a) => stage(&a, Stage::Grid),
        Command::Score(a) => stage(&a, Stage::Score),
        Command::Sigtest(a) => stage(&a, Stage::Sigtest),
        Command::Run(a) => run_all(&a),
        Command::Export { runs, out } => {
            let out = match (out, runs.as_slice()) {
                (Some(o), _) => o,
                (None, [one]) => one.join("tables"),
                (None, _) => return Err(config_error("--out is required when exporting several runs")),
            };
            let tables = export(&runs, &out)?;
            println!("wrote {} × {} tables to {}", tables.emotions.len(), tables.runs.len(), out.display());
            Ok(())
        }
        Command::Citest { input, synthetic, n, delta, seed } => citest(input.as_deref(), synthetic, n, delta, seed),
        Command::Saliency { run, individual, emotion, patch, stride, out, png } => {
            saliency(&run, individual, emotion, patch, stride, &out, png.as_deref())
        }
        Command::BridgeEcho { tcp } => bridge_echo(tcp.as_deref()),
        Command::BridgeCheck { endpoint, model } => bridge_check(&endpoint, &model),
    }
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            // clap would exit with 2, which is reserved for transport errors
            return if e.use_stderr() { ExitCode::from(1) } else { ExitCode::SUCCESS };
        }
    };
    match dispatch(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
