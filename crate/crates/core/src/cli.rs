//! Command-line front end. Exit codes: 0 success, 1 usage error, 2 runtime
//! error.

use std::ffi::OsString;
use std::net::TcpListener;
use std::path::{Path, PathBuf};
use std::time::Duration;

use clap::{Args, Parser, Subcommand, ValueEnum};
use serde::de::DeserializeOwned;
use serde::Serialize;

use crate::accuracy::AccuracyOracle;
use crate::design_space::{derive_mapping, Architecture, InputSpec, SpaceConfig};
use crate::dispatch::{dispatch_or_fallback, RuntimeConstraints};
use crate::engine::{
    execute_reference, run_device, serve_connection, DeviceOptions, EdgeOptions, Emulation, InputFrame, PipelineMode,
};
use crate::perf::{estimate_cost, LatencyLut, SystemConfig};
use crate::predictor::{
    build_dataset, generate_labeled, predict_accuracy_report, train, write_dataset_jsonl, OverheadModel,
    PredictorModel, TrainConfig,
};
use crate::search::{search, ArchitectureZoo, Evaluator, SearchConfig};

// stdout may be a closed pipe (`coinfer ... | head`); that is not an error
macro_rules! out {
    ($($t:tt)*) => {{
        use std::io::Write;
        let _ = writeln!(std::io::stdout(), $($t)*);
    }};
}

pub const EXIT_OK: i32 = 0;
pub const EXIT_USAGE: i32 = 1;
pub const EXIT_RUNTIME: i32 = 2;

#[derive(Parser, Debug)]
#[command(
    name = "coinfer",
    version,
    about = "GNN architecture and device/edge mapping search with a split-inference runtime"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Build a latency lookup table for both profiles of a system.
    GenLut(GenLutArgs),
    /// Search architectures and write the zoo.
    Search(SearchArgs),
    /// Train the latency predictor on synthetic measurements.
    TrainPredictor(TrainArgs),
    /// Predict end-to-end latency of one architecture.
    Predict(PredictArgs),
    /// Print the cost estimate of one architecture.
    Estimate(EstimateArgs),
    /// Serve the edge half of an architecture.
    ServeEdge(ServeEdgeArgs),
    /// Run the device half against a serving edge.
    RunDevice(RunDeviceArgs),
    /// Pick a zoo member for the given live constraints.
    Dispatch(DispatchArgs),
}

#[derive(Clone, Copy, Debug, ValueEnum)]
enum LutMode {
    /// Time the local kernels and scale by each profile's multipliers.
    Measure,
    /// Analytic operation counts, no timing.
    Synthetic,
}

#[derive(Args, Debug)]
struct GenLutArgs {
    #[arg(long)]
    space: PathBuf,
    #[arg(long)]
    system: PathBuf,
    #[arg(long)]
    out: PathBuf,
    #[arg(long, value_enum, default_value = "measure")]
    mode: LutMode,
    #[arg(long, default_value_t = 3)]
    repeats: usize,
    #[arg(long, default_value_t = 0)]
    seed: u64,
}

#[derive(Args, Debug)]
struct SearchArgs {
    #[arg(long)]
    space: PathBuf,
    #[arg(long)]
    system: PathBuf,
    #[arg(long)]
    lut: PathBuf,
    /// Use a trained predictor for latency instead of the cost estimate.
    #[arg(long)]
    predictor: Option<PathBuf>,
    /// `{hash: accuracy}` table; the synthetic surrogate otherwise.
    #[arg(long)]
    accuracy_table: Option<PathBuf>,
    #[arg(long, default_value_t = 0.0)]
    lambda: f64,
    #[arg(long = "T", default_value_t = 2000)]
    iterations: usize,
    #[arg(long = "Tf", default_value_t = 10)]
    tuning: usize,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long, default_value_t = 5)]
    capacity: usize,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args, Debug)]
struct TrainArgs {
    #[arg(long)]
    space: PathBuf,
    #[arg(long)]
    system: PathBuf,
    #[arg(long)]
    lut: PathBuf,
    #[arg(long, default_value_t = 9000)]
    samples: usize,
    #[arg(long, default_value_t = 200)]
    epochs: usize,
    #[arg(long, default_value_t = 1e-3)]
    lr: f64,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long)]
    out: PathBuf,
    /// Also write the labeled graphs as JSON lines.
    #[arg(long)]
    dataset_out: Option<PathBuf>,
}

#[derive(Args, Debug)]
struct PredictArgs {
    #[arg(long)]
    model: PathBuf,
    #[arg(long)]
    arch: PathBuf,
    #[arg(long)]
    system: PathBuf,
    #[arg(long)]
    lut: PathBuf,
}

#[derive(Args, Debug)]
struct EstimateArgs {
    #[arg(long)]
    arch: PathBuf,
    #[arg(long)]
    system: PathBuf,
    #[arg(long)]
    lut: PathBuf,
}

#[derive(Args, Debug)]
struct EmulationArgs {
    /// System config whose profile multipliers slow the kernels down.
    #[arg(long)]
    system: Option<PathBuf>,
    #[arg(long, requires = "system")]
    emulate: bool,
    #[arg(long)]
    no_compress: bool,
}

#[derive(Args, Debug)]
struct ServeEdgeArgs {
    #[arg(long)]
    bind: String,
    #[arg(long)]
    arch: PathBuf,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Exit after the first session instead of serving forever.
    #[arg(long)]
    once: bool,
    /// Extra compute delay per edge segment.
    #[arg(long, default_value_t = 0.0)]
    inject_delay_ms: f64,
    #[command(flatten)]
    emulation: EmulationArgs,
}

#[derive(Args, Debug)]
struct RunDeviceArgs {
    #[arg(long)]
    edge: String,
    #[arg(long)]
    arch: PathBuf,
    #[arg(long, default_value_t = 16)]
    frames: usize,
    /// Input spec JSON; must agree with the architecture's input.
    #[arg(long)]
    input_spec: Option<PathBuf>,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Seed of the random input frames.
    #[arg(long, default_value_t = 1)]
    input_seed: u64,
    #[arg(long)]
    throttle_mbps: Option<f64>,
    #[arg(long, conflicts_with = "sequential")]
    pipeline: bool,
    #[arg(long)]
    sequential: bool,
    #[arg(long, default_value_t = 10.0)]
    timeout_s: f64,
    #[arg(long)]
    stats_out: Option<PathBuf>,
    /// Compare every output with the single-process reference.
    #[arg(long)]
    verify: bool,
    #[command(flatten)]
    emulation: EmulationArgs,
}

#[derive(Args, Debug)]
struct DispatchArgs {
    #[arg(long)]
    zoo: PathBuf,
    #[arg(long)]
    system: PathBuf,
    #[arg(long)]
    lut: PathBuf,
    #[arg(long)]
    bandwidth: f64,
    #[arg(long)]
    lat_budget: f64,
    #[arg(long)]
    energy_budget: f64,
}

/// Runtime failure: printed to stderr, exit code 2.
struct Failure(String);

impl<E: std::fmt::Display> From<E> for Failure {
    fn from(e: E) -> Self {
        Failure(e.to_string())
    }
}

type Outcome = Result<(), Failure>;

fn read_json<T: DeserializeOwned>(path: &Path) -> Result<T, Failure> {
    let text = std::fs::read_to_string(path).map_err(|e| Failure(format!("{}: {e}", path.display())))?;
    serde_json::from_str(&text).map_err(|e| Failure(format!("{}: {e}", path.display())))
}

fn read_arch(path: &Path) -> Result<Architecture, Failure> {
    let text = std::fs::read_to_string(path).map_err(|e| Failure(format!("{}: {e}", path.display())))?;
    let arch = Architecture::from_json(&text).map_err(|e| Failure(format!("{}: {e}", path.display())))?;
    derive_mapping(&arch).map_err(|e| Failure(format!("{}: {e}", path.display())))?;
    Ok(arch)
}

fn read_system(path: &Path) -> Result<SystemConfig, Failure> {
    let sys: SystemConfig = read_json(path)?;
    sys.validate()?;
    Ok(sys)
}

fn write_text(path: &Path, text: &str) -> Outcome {
    std::fs::write(path, text).map_err(|e| Failure(format!("{}: {e}", path.display())))
}

fn to_pretty(value: &impl Serialize) -> String {
    serde_json::to_string_pretty(value).expect("serializable")
}

fn emulation(args: &EmulationArgs, device: bool) -> Result<Emulation, Failure> {
    if !args.emulate {
        return Ok(Emulation::none());
    }
    let sys = read_system(args.system.as_deref().expect("clap enforces --system"))?;
    Ok(Emulation::profile(if device { sys.device } else { sys.edge }))
}

fn gen_lut(a: GenLutArgs) -> Outcome {
    let space: SpaceConfig = read_json(&a.space)?;
    space.check().map_err(Failure)?;
    let sys = read_system(&a.system)?;
    let lut = match a.mode {
        LutMode::Measure => LatencyLut::measure(&space, &sys, a.repeats, a.seed),
        LutMode::Synthetic => LatencyLut::synthetic(&space, &sys),
    };
    write_text(&a.out, &serde_json::to_string_pretty(&lut)?)?;
    eprintln!("wrote {} entries to {}", lut.len(), a.out.display());
    Ok(())
}

fn run_search(a: SearchArgs) -> Outcome {
    let space: SpaceConfig = read_json(&a.space)?;
    let sys = read_system(&a.system)?;
    let lut: LatencyLut = read_json(&a.lut)?;
    let oracle = match &a.accuracy_table {
        Some(p) => AccuracyOracle::table_from_json(&std::fs::read_to_string(p)?)?,
        None => AccuracyOracle::Synthetic,
    };
    let model = match &a.predictor {
        Some(p) => Some(PredictorModel::from_json(&std::fs::read_to_string(p)?)?),
        None => None,
    };
    let evaluator = model.as_ref().map_or(Evaluator::CostEstimate, Evaluator::Predictor);
    let cfg = SearchConfig {
        iterations: a.iterations,
        tuning_iterations: a.tuning,
        lambda: a.lambda,
        seed: a.seed,
        zoo_capacity: a.capacity,
    };
    let out = search(&space, &sys, &lut, &oracle, evaluator, &cfg)?;
    write_text(&a.out, &out.zoo.to_json())?;
    eprintln!("{}", out.stats);
    Ok(())
}

fn train_predictor(a: TrainArgs) -> Outcome {
    let space: SpaceConfig = read_json(&a.space)?;
    let sys = read_system(&a.system)?;
    let lut: LatencyLut = read_json(&a.lut)?;
    let samples = generate_labeled(&space, &sys, &lut, &OverheadModel::default(), a.samples, a.seed)?;
    let (graphs, norm) = build_dataset(&samples, &sys, &lut)?;
    if let Some(p) = &a.dataset_out {
        write_text(p, &write_dataset_jsonl(&graphs))?;
    }
    let mut model = PredictorModel::standard(a.seed);
    model.latency_norm = norm;
    let cfg = TrainConfig { epochs: a.epochs, learning_rate: a.lr, seed: a.seed, ..TrainConfig::default() };
    let report = train(&mut model, &graphs, &cfg)?;
    let held_out: Vec<_> = report.val_indices.iter().map(|&i| graphs[i].clone()).collect();
    let quality = predict_accuracy_report(&model, &held_out, 0.1)?;
    write_text(&a.out, &model.to_json())?;
    let last = report.history.last().expect("at least one epoch");
    out!(
        "{}",
        to_pretty(&serde_json::json!({
            "final_epoch": last,
            "held_out_within_10pct": quality.within_bound_fraction,
            "held_out_pairwise_order": quality.pairwise_order_accuracy,
        }))
    );
    Ok(())
}

fn predict(a: PredictArgs) -> Outcome {
    let model = PredictorModel::from_json(&std::fs::read_to_string(&a.model)?)?;
    let arch = read_arch(&a.arch)?;
    let sys = read_system(&a.system)?;
    let lut: LatencyLut = read_json(&a.lut)?;
    let ms = model.predict_arch(&arch, &sys, &lut)?;
    out!("{}", to_pretty(&serde_json::json!({ "latency_ms": ms })));
    Ok(())
}

fn estimate(a: EstimateArgs) -> Outcome {
    let arch = read_arch(&a.arch)?;
    let sys = read_system(&a.system)?;
    let lut: LatencyLut = read_json(&a.lut)?;
    out!("{}", to_pretty(&estimate_cost(&arch, &sys, &lut)?));
    Ok(())
}

fn serve(a: ServeEdgeArgs) -> Outcome {
    let arch = read_arch(&a.arch)?;
    if !(a.inject_delay_ms >= 0.0 && a.inject_delay_ms.is_finite()) {
        return Err(Failure("--inject-delay-ms must be finite and >= 0".into()));
    }
    let opts = EdgeOptions {
        seed: a.seed,
        compress: !a.emulation.no_compress,
        injected_delay: Duration::from_secs_f64(a.inject_delay_ms / 1e3),
        emulation: emulation(&a.emulation, false)?,
        ..EdgeOptions::default()
    };
    let listener = TcpListener::bind(&a.bind)?;
    eprintln!("edge listening on {}", listener.local_addr()?);
    loop {
        let (stream, peer) = listener.accept()?;
        match serve_connection(stream, &arch, &opts) {
            Ok(stats) => eprintln!("session with {peer} done: {}", serde_json::to_string(&stats)?),
            Err(e) if a.once => return Err(e.into()),
            Err(e) => eprintln!("session with {peer} failed: {e}"),
        }
        if a.once {
            return Ok(());
        }
    }
}

fn device(a: RunDeviceArgs) -> Outcome {
    let arch = read_arch(&a.arch)?;
    if let Some(p) = &a.input_spec {
        let spec: InputSpec = read_json(p)?;
        if spec != arch.input {
            return Err(Failure("input spec does not match the architecture's input".into()));
        }
    }
    if a.throttle_mbps.is_some_and(|m| !(m > 0.0)) {
        return Err(Failure("--throttle-mbps must be positive".into()));
    }
    if !(a.timeout_s > 0.0 && a.timeout_s.is_finite()) {
        return Err(Failure("--timeout-s must be positive".into()));
    }
    let opts = DeviceOptions {
        seed: a.seed,
        mode: if a.sequential { PipelineMode::Sequential } else { PipelineMode::Pipelined },
        throttle_mbps: a.throttle_mbps,
        timeout: Duration::from_secs_f64(a.timeout_s),
        compress: !a.emulation.no_compress,
        emulation: emulation(&a.emulation, true)?,
        ..DeviceOptions::default()
    };
    let frames = InputFrame::random_batch(&arch.input, a.frames, a.input_seed);
    let run = run_device(a.edge.as_str(), &arch, &frames, &opts)?;
    if let Some(p) = &a.stats_out {
        write_text(p, &to_pretty(&run.stats))?;
    }
    out!("{}", serde_json::to_string(&run.stats)?);
    if !run.stats.failed_frames.is_empty() {
        return Err(Failure(format!("{} frames failed", run.stats.failed_frames.len())));
    }
    if a.verify {
        for (i, (frame, out)) in frames.iter().zip(&run.outputs).enumerate() {
            let reference = execute_reference(&arch, frame, a.seed)?;
            let diff = out.as_ref().and_then(|o| o.max_abs_diff(&reference));
            match diff {
                Some(d) if d <= 1e-5 => {}
                _ => return Err(Failure(format!("frame {i} differs from the reference ({diff:?})"))),
            }
        }
        eprintln!("all {} outputs match the reference", frames.len());
    }
    Ok(())
}

fn run_dispatch(a: DispatchArgs) -> Outcome {
    let zoo = ArchitectureZoo::from_json(&std::fs::read_to_string(&a.zoo)?)?;
    let sys = read_system(&a.system)?;
    let lut: LatencyLut = read_json(&a.lut)?;
    let constraints = RuntimeConstraints {
        latency_budget_ms: a.lat_budget,
        energy_budget_j: a.energy_budget,
        current_bandwidth_mbps: a.bandwidth,
    };
    let choice = dispatch_or_fallback(&zoo, &constraints, &sys, &lut)?;
    if choice.fallback {
        eprintln!(
            "warning: no member fits the budgets; falling back to the fastest ({:.3} ms, {:.4} J)",
            choice.member.latency_ms, choice.member.energy_j
        );
    }
    out!("{}", to_pretty(&choice.member.arch));
    Ok(())
}

/// Parses `argv` (program name first) and runs the subcommand.
pub fn cli_main<I, T>(argv: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(argv) {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { EXIT_USAGE } else { EXIT_OK };
        }
    };
    let result = match cli.command {
        Command::GenLut(a) => gen_lut(a),
        Command::Search(a) => run_search(a),
        Command::TrainPredictor(a) => train_predictor(a),
        Command::Predict(a) => predict(a),
        Command::Estimate(a) => estimate(a),
        Command::ServeEdge(a) => serve(a),
        Command::RunDevice(a) => device(a),
        Command::Dispatch(a) => run_dispatch(a),
    };
    match result {
        Ok(()) => EXIT_OK,
        Err(Failure(msg)) => {
            eprintln!("error: {msg}");
            EXIT_RUNTIME
        }
    }
}
