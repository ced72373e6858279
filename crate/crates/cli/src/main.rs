//! `hqstream` command-line front end.
//!
//! Exit status: 0 on success, 2 for usage or input errors, 3 when the codec
//! reports a broken internal invariant.

use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};
use hqstream::optimizer::{optimize_schedule, Corpus, FitSettings, RateModel};
use hqstream::quant::DEFAULT_THRESHOLD;
use hqstream::stream::{
    decode, encode, layer_counts, level_grid, measure, selected_by, sig9, to_csv, truncate, ContainerView,
    EncodeConfig, RdRow, Target,
};
use hqstream::{load_latent, sample_source, store_latent, ImportanceMap, ScheduleFile, SourceConfig};

#[derive(Parser)]
#[command(name = "hqstream", version, about = "Progressive latent codec with learned hierarchical quantization")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Draw a synthetic Gaussian latent and write it as a latent file.
    Sample {
        /// Source description (TOML); the default 4x64x64 source if absent.
        #[arg(long)]
        source: Option<PathBuf>,
        #[arg(long)]
        seed: Option<u64>,
        #[arg(short, long)]
        output: PathBuf,
    },
    /// Encode a latent file into a progressive container.
    Encode {
        input: PathBuf,
        #[arg(long)]
        schedule: PathBuf,
        /// Boundary adjustment threshold; overrides the schedule file.
        #[arg(long)]
        threshold: Option<f64>,
        #[arg(short, long)]
        output: PathBuf,
    },
    /// Decode a container, or a prefix of one, into a latent file.
    Decode {
        input: PathBuf,
        #[command(flatten)]
        target: TargetArgs,
        #[arg(short, long)]
        output: PathBuf,
    },
    /// Cut a container down to the shortest prefix reaching a point.
    Truncate {
        input: PathBuf,
        #[command(flatten)]
        target: TargetArgs,
        #[arg(short, long)]
        output: PathBuf,
    },
    /// Fit a step schedule to a latent file or a synthetic source.
    Fit(FitArgs),
    /// Rate and distortion of a container at a sweep of points, as CSV.
    RdCurve {
        /// Original latent the distortion is measured against.
        input: PathBuf,
        /// Encode `input` with this schedule first.
        #[arg(long, conflicts_with = "container", required_unless_present = "container")]
        schedule: Option<PathBuf>,
        /// Measure an existing container of `input`.
        #[arg(long)]
        container: Option<PathBuf>,
        /// Points to measure; a grid over every layer if absent.
        #[arg(long, value_delimiter = ',')]
        point: Vec<f64>,
        /// Grid points per layer.
        #[arg(long, default_value_t = 4)]
        steps: usize,
        #[arg(long, value_enum, default_value_t = Format::Csv)]
        format: Format,
        #[arg(short, long)]
        output: Option<PathBuf>,
    },
    /// Print the header and segment layout of a container.
    Inspect {
        input: PathBuf,
        #[arg(long, value_enum, default_value_t = Format::Human)]
        format: Format,
    },
}

#[derive(Args)]
#[group(multiple = false)]
struct TargetArgs {
    /// Real-valued point in [0, L].
    #[arg(long)]
    point: Option<f64>,
    /// Payload byte budget after the header.
    #[arg(long)]
    bytes: Option<u64>,
}

impl TargetArgs {
    fn target(&self) -> Target {
        match (self.point, self.bytes) {
            (Some(l), _) => Target::Level(l),
            (None, Some(b)) => Target::PayloadBytes(b),
            (None, None) => Target::Full,
        }
    }
}

#[derive(Args)]
struct FitArgs {
    /// Latent file to fit; a synthetic source if absent.
    input: Option<PathBuf>,
    #[arg(long, conflicts_with = "input")]
    source: Option<PathBuf>,
    /// Optimizer settings (TOML); flags override it.
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    layers: Option<usize>,
    #[arg(long)]
    lambda_base: Option<f64>,
    #[arg(long, value_enum)]
    mode: Option<Mode>,
    #[arg(long)]
    max_evals: Option<usize>,
    #[arg(long, value_enum, default_value_t = Format::Human)]
    format: Format,
    /// Schedule file to write.
    #[arg(short, long)]
    output: PathBuf,
}

#[derive(Clone, Copy, ValueEnum)]
enum Format {
    Csv,
    Human,
}

#[derive(Clone, Copy, ValueEnum)]
enum Mode {
    Exact,
    Surrogate,
}

struct Failure {
    code: u8,
    message: String,
}

impl From<hqstream::Error> for Failure {
    fn from(e: hqstream::Error) -> Self {
        Failure {
            code: if e.is_internal() { 3 } else { 2 },
            message: e.to_string(),
        }
    }
}

fn input_error(message: String) -> Failure {
    Failure { code: 2, message }
}

type Outcome = Result<(), Failure>;

fn read(path: &Path) -> Result<Vec<u8>, Failure> {
    fs::read(path).map_err(|e| input_error(format!("{}: {e}", path.display())))
}

fn read_text(path: &Path) -> Result<String, Failure> {
    fs::read_to_string(path).map_err(|e| input_error(format!("{}: {e}", path.display())))
}

fn write(path: &Path, bytes: &[u8]) -> Outcome {
    fs::write(path, bytes).map_err(|e| input_error(format!("{}: {e}", path.display())))
}

/// Fails early if inputs are missing or an output directory does not exist.
fn check_paths(inputs: &[&Path], outputs: &[&Path]) -> Outcome {
    for p in inputs {
        if !p.is_file() {
            return Err(input_error(format!("{}: no such file", p.display())));
        }
    }
    for p in outputs {
        let dir = p.parent().filter(|d| !d.as_os_str().is_empty()).unwrap_or(Path::new("."));
        if !dir.is_dir() {
            return Err(input_error(format!("{}: directory does not exist", dir.display())));
        }
    }
    Ok(())
}

fn load_source(path: Option<&Path>, seed: Option<u64>) -> Result<SourceConfig, Failure> {
    let mut cfg = match path {
        Some(p) => SourceConfig::parse(&read_text(p)?)?,
        None => SourceConfig::default(),
    };
    if let Some(s) = seed {
        cfg.seed = s;
    }
    Ok(cfg)
}

fn cmd_sample(source: Option<PathBuf>, seed: Option<u64>, output: PathBuf) -> Outcome {
    let inputs: Vec<&Path> = source.iter().map(PathBuf::as_path).collect();
    check_paths(&inputs, &[&output])?;
    let cfg = load_source(source.as_deref(), seed)?;
    let (latent, params) = sample_source(&cfg)?;
    write(&output, &store_latent(&latent, &params, None)?)?;
    println!("{}: {} latent, seed {}", output.display(), latent.shape(), cfg.seed);
    Ok(())
}

fn cmd_encode(input: PathBuf, schedule: PathBuf, threshold: Option<f64>, output: PathBuf) -> Outcome {
    check_paths(&[&input, &schedule], &[&output])?;
    let file = load_latent(&read(&input)?)?;
    let sf = ScheduleFile::parse(&read_text(&schedule)?)?;
    let s = sf.schedule()?;
    let cfg = EncodeConfig {
        threshold: threshold.or(sf.threshold).unwrap_or(DEFAULT_THRESHOLD),
        importance: file.importance,
    };
    let c = encode(&file.latent, &file.params, &s, &cfg)?;
    let bytes = c.to_bytes()?;
    write(&output, &bytes)?;
    let sizes: Vec<String> = c.segments.iter().map(|s| s.len().to_string()).collect();
    println!(
        "{}: {} bytes, header {}, layers [{}]",
        output.display(),
        bytes.len(),
        c.header_len(),
        sizes.join(", ")
    );
    Ok(())
}

fn describe_point(level: f64, point: hqstream::ProgressPoint) -> String {
    format!("point {} ({point})", sig9(level))
}

fn cmd_decode(input: PathBuf, target: TargetArgs, output: PathBuf) -> Outcome {
    check_paths(&[&input], &[&output])?;
    let bytes = read(&input)?;
    let header = ContainerView::parse(&bytes)?.header;
    let d = decode(&bytes, target.target())?;
    write(&output, &store_latent(&d.latent, &header.params, header.importance.as_ref())?)?;
    println!("{}: {}", output.display(), describe_point(d.level, d.point));
    Ok(())
}

fn cmd_truncate(input: PathBuf, target: TargetArgs, output: PathBuf) -> Outcome {
    check_paths(&[&input], &[&output])?;
    let bytes = read(&input)?;
    let t = truncate(&bytes, target.target())?;
    write(&output, &t.bytes)?;
    println!(
        "{}: {} of {} bytes, {}{}",
        output.display(),
        t.bytes.len(),
        bytes.len(),
        describe_point(t.level, t.point),
        if t.clamped { ", input ends before the requested point" } else { "" }
    );
    Ok(())
}

fn cmd_fit(a: FitArgs) -> Outcome {
    let mut inputs: Vec<&Path> = Vec::new();
    inputs.extend(a.input.as_deref());
    inputs.extend(a.source.as_deref());
    inputs.extend(a.config.as_deref());
    check_paths(&inputs, &[&a.output])?;
    let mut settings = match &a.config {
        Some(p) => FitSettings::parse(&read_text(p)?)?,
        None => FitSettings::default(),
    };
    if let Some(l) = a.layers {
        settings.layers = l;
    }
    if let Some(b) = a.lambda_base {
        settings.lambda_base = b;
    }
    if let Some(m) = a.mode {
        settings.model = match m {
            Mode::Exact => RateModel::Exact,
            Mode::Surrogate => RateModel::Surrogate,
        };
    }
    if let Some(s) = a.seed {
        settings.seed = s;
    }
    if let Some(n) = a.max_evals {
        settings.max_evals = n;
    }
    let cfg = settings.config()?;
    let corpus = match &a.input {
        Some(p) => {
            let f = load_latent(&read(p)?)?;
            let im = f.importance.unwrap_or_else(|| ImportanceMap::from_sigma(&f.params));
            Corpus::with_importance(f.latent, f.params, im)?
        }
        None => {
            let src = load_source(a.source.as_deref(), a.seed)?;
            let (y, p) = sample_source(&src)?;
            Corpus::new(y, p)?
        }
    };
    let fit = optimize_schedule(&corpus, &cfg)?;
    let file = ScheduleFile::from_schedule(&fit.schedule, Some(settings.threshold));
    write(&a.output, file.to_toml().as_bytes())?;
    if fit.exhausted {
        eprintln!("warning: evaluation budget exhausted; writing the best schedule found");
    }
    match a.format {
        Format::Csv => {
            println!("layer,rate,distortion,lambda");
            for l in 0..fit.report.rate.len() {
                println!(
                    "{},{},{},{}",
                    l + 1,
                    sig9(fit.report.rate[l]),
                    sig9(fit.report.distortion[l]),
                    sig9(fit.report.lambda[l])
                );
            }
        }
        Format::Human => {
            println!("{}: {} layers x {} channels", a.output.display(), fit.schedule.layers(), fit.schedule.channels());
            println!(
                "loss {} (start {}, best ternary {}), {} evaluations",
                sig9(fit.report.total),
                sig9(fit.initial_loss),
                sig9(fit.trit_loss),
                fit.evals
            );
            for l in 0..fit.report.rate.len() {
                println!(
                    "  layer {}: rate {} bits, distortion {}",
                    l + 1,
                    sig9(fit.report.rate[l]),
                    sig9(fit.report.distortion[l])
                );
            }
        }
    }
    Ok(())
}

fn human_rows(rows: &[RdRow]) -> String {
    let mut s = format!(
        "{:>10} {:>12} {:>14} {:>10} {:>8}\n",
        "point", "bpp", "msqe", "selected", "payload"
    );
    for r in rows {
        let _ = writeln!(
            s,
            "{:>10} {:>12} {:>14} {:>10} {:>8}",
            sig9(r.point),
            sig9(r.bpp),
            sig9(r.msqe),
            sig9(r.selection_ratio),
            r.payload_bytes
        );
    }
    s
}

#[allow(clippy::too_many_arguments)]
fn cmd_rd_curve(
    input: PathBuf,
    schedule: Option<PathBuf>,
    container: Option<PathBuf>,
    points: Vec<f64>,
    steps: usize,
    format: Format,
    output: Option<PathBuf>,
) -> Outcome {
    let mut inputs: Vec<&Path> = vec![&input];
    inputs.extend(schedule.as_deref());
    inputs.extend(container.as_deref());
    let outputs: Vec<&Path> = output.iter().map(PathBuf::as_path).collect();
    check_paths(&inputs, &outputs)?;
    let file = load_latent(&read(&input)?)?;
    let bytes = match (&schedule, &container) {
        (Some(s), _) => {
            let sf = ScheduleFile::parse(&read_text(s)?)?;
            let cfg = EncodeConfig {
                threshold: sf.threshold.unwrap_or(DEFAULT_THRESHOLD),
                importance: file.importance.clone(),
            };
            encode(&file.latent, &file.params, &sf.schedule()?, &cfg)?.to_bytes()?
        }
        (None, Some(c)) => read(c)?,
        (None, None) => return Err(input_error("either --schedule or --container is required".into())),
    };
    let layers = ContainerView::parse(&bytes)?.header.layers();
    let levels = if points.is_empty() { level_grid(layers, steps) } else { points };
    let rows = measure(&bytes, &file.latent, &levels)?;
    let text = match format {
        Format::Csv => to_csv(&rows),
        Format::Human => human_rows(&rows),
    };
    match output {
        Some(p) => write(&p, text.as_bytes())?,
        None => print!("{text}"),
    }
    Ok(())
}

fn cmd_inspect(input: PathBuf, format: Format) -> Outcome {
    check_paths(&[&input], &[])?;
    let bytes = read(&input)?;
    let view = ContainerView::parse(&bytes)?;
    let h = &view.header;
    let counts = layer_counts(h);
    let d = decode(&bytes, Target::Full)?;
    let selected = selected_by(h, d.point);
    let mut out = String::new();
    let row_range = |row: &[f64]| {
        let lo = row.iter().copied().fold(f64::INFINITY, f64::min);
        let hi = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        (lo, hi)
    };
    match format {
        Format::Human => {
            let _ = writeln!(out, "shape       {} ({} components)", h.shape, h.shape.len());
            let _ = writeln!(out, "layers      {}", h.layers());
            let _ = writeln!(out, "intervals   K = {}", h.quant.k);
            let _ = writeln!(out, "threshold   {}", sig9(h.quant.threshold));
            let _ = writeln!(
                out,
                "importance  {}",
                if h.importance.is_some() { "stored" } else { "from sigma" }
            );
            let _ = writeln!(out, "header      {} bytes", view.header_len);
            let _ = writeln!(
                out,
                "segments    {} of {} present, {}",
                view.segments.len(),
                h.layers(),
                if view.is_complete() { "complete" } else { "truncated" }
            );
            for l in 1..=h.layers() {
                let (lo, hi) = row_range(h.schedule.delta_row(l));
                let size = match view.segments.get(l - 1) {
                    Some(s) if s.is_complete() => format!("{} bytes", s.declared),
                    Some(s) => format!("{} of {} bytes", s.payload.len(), s.declared),
                    None => "absent".to_string(),
                };
                let _ = writeln!(
                    out,
                    "  layer {l}: {} components, step [{}, {}], gamma {}, {size}",
                    counts[l - 1],
                    sig9(lo),
                    sig9(hi),
                    sig9(h.schedule.gamma(l))
                );
            }
            let _ = writeln!(out, "reaches     {}, {} components coded at least once", describe_point(d.level, d.point), selected);
        }
        Format::Csv => {
            let _ = writeln!(out, "layer,components,delta_min,delta_max,gamma,declared_bytes,present_bytes");
            for l in 1..=h.layers() {
                let (lo, hi) = row_range(h.schedule.delta_row(l));
                let (declared, present) = match view.segments.get(l - 1) {
                    Some(s) => (s.declared.to_string(), s.payload.len()),
                    None => (String::new(), 0),
                };
                let _ = writeln!(
                    out,
                    "{l},{},{},{},{},{declared},{present}",
                    counts[l - 1],
                    sig9(lo),
                    sig9(hi),
                    sig9(h.schedule.gamma(l))
                );
            }
        }
    }
    print!("{out}");
    Ok(())
}

fn configure_threads() -> Outcome {
    let Ok(v) = std::env::var("HQSTREAM_THREADS") else {
        return Ok(());
    };
    let n: usize = v
        .trim()
        .parse()
        .ok()
        .filter(|&n| n > 0)
        .ok_or_else(|| input_error(format!("HQSTREAM_THREADS={v:?} is not a positive integer")))?;
    rayon::ThreadPoolBuilder::new()
        .num_threads(n)
        .build_global()
        .map_err(|e| input_error(format!("thread pool: {e}")))
}

fn run(cli: Cli) -> Outcome {
    configure_threads()?;
    match cli.command {
        Command::Sample { source, seed, output } => cmd_sample(source, seed, output),
        Command::Encode {
            input,
            schedule,
            threshold,
            output,
        } => cmd_encode(input, schedule, threshold, output),
        Command::Decode { input, target, output } => cmd_decode(input, target, output),
        Command::Truncate { input, target, output } => cmd_truncate(input, target, output),
        Command::Fit(a) => cmd_fit(a),
        Command::RdCurve {
            input,
            schedule,
            container,
            point,
            steps,
            format,
            output,
        } => cmd_rd_curve(input, schedule, container, point, steps, format, output),
        Command::Inspect { input, format } => cmd_inspect(input, format),
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(f) => {
            eprintln!("error: {}", f.message);
            ExitCode::from(f.code)
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use clap::CommandFactory;
    use hqstream::stream::CSV_HEADER;

    #[test]
    fn arguments_are_consistent() {
        Cli::command().debug_assert();
    }

    #[test]
    fn csv_header_is_shared() {
        assert!(to_csv(&[]).starts_with(CSV_HEADER));
    }
}
