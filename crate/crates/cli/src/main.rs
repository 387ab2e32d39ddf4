use std::fs;
use std::io::{self, Write};
use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::time::Instant;

use clap::{Args, Parser, Subcommand};
use serde::Serialize;

use gmmc_core::allocator::{self, AllocationProblem};
use gmmc_core::codec::{self, EncodeOptions, DEFAULT_MAX_PIXELS};
use gmmc_core::gmm::{pmf_table, GmmParams};
use gmmc_core::metrics::{self, RdReport};
use gmmc_core::{CodecModel, Error, ImagePlane, LatentTensor, PayloadRate};

const SCHEMA: u32 = 1;

#[derive(Parser)]
#[command(name = "gmmc", version, about = "Gaussian-mixture learned image codec")]
struct Cli {
    /// Worker threads for encode/eval (default: all cores)
    #[arg(long, global = true, env = "GMMC_THREADS")]
    threads: Option<usize>,
    /// Print timings to stderr
    #[arg(short, long, global = true)]
    verbose: bool,
    #[command(subcommand)]
    command: Command,
}

#[derive(Args)]
struct ModelArgs {
    #[arg(long, default_value = "models/toy-k3-n128.gmmp")]
    model: PathBuf,
    /// Abort unless the model has this many mixture components
    #[arg(long)]
    k: Option<usize>,
    /// Abort unless the model has this many latent channels
    #[arg(long)]
    n: Option<usize>,
}

#[derive(Subcommand)]
enum Command {
    /// PNG to container
    Encode {
        #[command(flatten)]
        model: ModelArgs,
        #[arg(long = "in")]
        input: PathBuf,
        #[arg(long)]
        out: PathBuf,
        #[arg(long)]
        report: Option<PathBuf>,
        #[arg(long, default_value_t = DEFAULT_MAX_PIXELS)]
        max_pixels: u64,
    },
    /// Container to PNG
    Decode {
        #[command(flatten)]
        model: ModelArgs,
        #[arg(long = "in")]
        input: PathBuf,
        #[arg(long)]
        out: PathBuf,
        #[arg(long)]
        report: Option<PathBuf>,
    },
    /// MS-SSIM, distortion and optionally the rate-distortion loss
    Eval {
        #[arg(long)]
        orig: PathBuf,
        #[arg(long)]
        recon: PathBuf,
        #[arg(long, requires = "bits")]
        lambda: Option<f64>,
        /// Total coded bits of the reconstruction
        #[arg(long, requires = "lambda")]
        bits: Option<u64>,
    },
    /// Choose one λ per image under a bpp budget
    Allocate {
        /// CSV with header image_id,pixels,lambda,bpp,ms_ssim
        #[arg(long)]
        table: PathBuf,
        #[arg(long)]
        budget_bpp: f64,
        #[arg(long, default_value_t = allocator::DEFAULT_GRANULARITY_BITS)]
        granularity: u64,
        /// Write the assignment here instead of stdout
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Print `symbol,probability` for all 512 symbols of one mixture
    PmfDump {
        #[arg(long)]
        k: usize,
        #[arg(long, value_delimiter = ',', allow_hyphen_values = true)]
        weights: Vec<f64>,
        #[arg(long, value_delimiter = ',', allow_hyphen_values = true)]
        means: Vec<f64>,
        #[arg(long, value_delimiter = ',', allow_hyphen_values = true)]
        scales: Vec<f64>,
    },
    /// Write the deterministic toy model
    GenModel {
        #[arg(long, default_value_t = 3)]
        k: usize,
        #[arg(long, default_value_t = 128)]
        n: usize,
        #[arg(long, default_value_t = 2024)]
        seed: u64,
        #[arg(long)]
        out: PathBuf,
    },
}

#[derive(Debug)]
enum CliError {
    Io(String),
    Model(String),
    Corrupt(String),
    Other(String),
}

impl CliError {
    fn code(&self) -> u8 {
        match self {
            CliError::Other(_) => 1,
            CliError::Io(_) => 2,
            CliError::Model(_) => 3,
            CliError::Corrupt(_) => 4,
        }
    }
}

impl std::fmt::Display for CliError {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            CliError::Io(m) | CliError::Model(m) | CliError::Corrupt(m) | CliError::Other(m) => f.write_str(m),
        }
    }
}

impl From<Error> for CliError {
    fn from(e: Error) -> Self {
        let msg = e.to_string();
        match e {
            Error::Io(_) => CliError::Io(msg),
            Error::ModelMismatch(_) | Error::ModelFormat(_) => CliError::Model(msg),
            Error::CorruptStream(_) | Error::TruncatedStream | Error::UnsupportedVersion(_) => CliError::Corrupt(msg),
            _ => CliError::Other(msg),
        }
    }
}

fn io_err(path: &Path, e: impl std::fmt::Display) -> CliError {
    CliError::Io(format!("{}: {e}", path.display()))
}

type CliResult<T> = std::result::Result<T, CliError>;

#[derive(Serialize)]
struct PayloadJson {
    estimated_bits: f64,
    quantized_bits: f64,
    actual_bits: u64,
    symbols: u64,
}

impl From<PayloadRate> for PayloadJson {
    fn from(r: PayloadRate) -> Self {
        PayloadJson {
            estimated_bits: r.estimated_bits,
            quantized_bits: r.quantized_bits,
            actual_bits: r.actual_bits,
            symbols: r.symbols,
        }
    }
}

#[derive(Serialize)]
struct EncodeReport {
    schema: u32,
    width: usize,
    height: usize,
    k: usize,
    n: usize,
    container_bytes: usize,
    bpp: f64,
    zero_channels: usize,
    estimated_bits: f64,
    quantized_bits: f64,
    actual_bits: u64,
    main: PayloadJson,
    hyper: PayloadJson,
    latent_checksum: String,
    hyper_checksum: String,
}

#[derive(Serialize)]
struct DecodeReport {
    schema: u32,
    width: usize,
    height: usize,
    latent_checksum: String,
    hyper_checksum: String,
}

#[derive(Serialize)]
struct EvalReport {
    schema: u32,
    ms_ssim: f64,
    distortion: f64,
    #[serde(skip_serializing_if = "Option::is_none")]
    bpp: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    lambda: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    rd_loss: Option<f64>,
}

/// crc32 over the little-endian symbols.
fn checksum(t: &LatentTensor) -> String {
    let mut h = crc32fast::Hasher::new();
    for v in t.as_slice() {
        h.update(&v.to_le_bytes());
    }
    format!("{:08x}", h.finalize())
}

fn load_model(args: &ModelArgs) -> CliResult<CodecModel> {
    let model = CodecModel::load(&args.model).map_err(|e| match e {
        Error::Io(io) => io_err(&args.model, io),
        other => CliError::from(other),
    })?;
    if let Some(k) = args.k.filter(|&k| k != model.k()) {
        return Err(CliError::Model(format!("--k {k} but the model has K = {}", model.k())));
    }
    if let Some(n) = args.n.filter(|&n| n != model.n()) {
        return Err(CliError::Model(format!("--n {n} but the model has N = {}", model.n())));
    }
    Ok(model)
}

fn read_png(path: &Path) -> CliResult<ImagePlane> {
    let img = image::open(path).map_err(|e| io_err(path, e))?.to_rgb8();
    let (w, h) = img.dimensions();
    Ok(ImagePlane::from_rgb8(h as usize, w as usize, img.as_raw())?)
}

fn write_png(path: &Path, img: &ImagePlane) -> CliResult<()> {
    let buf = image::RgbImage::from_raw(img.width() as u32, img.height() as u32, img.to_rgb8())
        .ok_or_else(|| CliError::Other("image buffer size mismatch".into()))?;
    buf.save(path).map_err(|e| io_err(path, e))
}

fn write_json(path: &Path, value: &impl Serialize) -> CliResult<()> {
    let text = serde_json::to_string_pretty(value).map_err(|e| CliError::Other(e.to_string()))?;
    fs::write(path, text + "\n").map_err(|e| io_err(path, e))
}

fn run(cli: Cli) -> CliResult<()> {
    if let Some(t) = cli.threads {
        rayon::ThreadPoolBuilder::new()
            .num_threads(t)
            .build_global()
            .map_err(|e| CliError::Other(e.to_string()))?;
    }
    let started = Instant::now();
    let verbose = cli.verbose;
    match cli.command {
        Command::Encode {
            model,
            input,
            out,
            report,
            max_pixels,
        } => {
            let model = load_model(&model)?;
            let img = read_png(&input)?;
            let enc = codec::encode_image(&img, &model, &EncodeOptions { max_pixels })?;
            fs::write(&out, &enc.bytes).map_err(|e| io_err(&out, e))?;
            if let Some(path) = report {
                let r = &enc.report;
                write_json(
                    &path,
                    &EncodeReport {
                        schema: SCHEMA,
                        width: img.width(),
                        height: img.height(),
                        k: model.k(),
                        n: model.n(),
                        container_bytes: r.container_bytes,
                        bpp: r.bpp,
                        zero_channels: r.zero_channels,
                        estimated_bits: r.main.estimated_bits + r.hyper.estimated_bits,
                        quantized_bits: r.main.quantized_bits + r.hyper.quantized_bits,
                        actual_bits: r.main.actual_bits + r.hyper.actual_bits,
                        main: r.main.into(),
                        hyper: r.hyper.into(),
                        latent_checksum: checksum(&enc.latents),
                        hyper_checksum: checksum(&enc.hyper_latents),
                    },
                )?;
            }
            if verbose {
                eprintln!("encoded {} bytes ({:.4} bpp) in {:?}", enc.bytes.len(), enc.report.bpp, started.elapsed());
            }
        }
        Command::Decode {
            model,
            input,
            out,
            report,
        } => {
            let model = load_model(&model)?;
            let bytes = fs::read(&input).map_err(|e| io_err(&input, e))?;
            let dec = codec::decode_container(&bytes, &model)?;
            write_png(&out, &dec.image)?;
            if let Some(path) = report {
                write_json(
                    &path,
                    &DecodeReport {
                        schema: SCHEMA,
                        width: dec.image.width(),
                        height: dec.image.height(),
                        latent_checksum: checksum(&dec.latents),
                        hyper_checksum: checksum(&dec.hyper_latents),
                    },
                )?;
            }
            if verbose {
                eprintln!("decoded in {:?}", started.elapsed());
            }
        }
        Command::Eval {
            orig,
            recon,
            lambda,
            bits,
        } => {
            let a = read_png(&orig)?;
            let b = read_png(&recon)?;
            let score = metrics::ms_ssim(&a, &b)?;
            let mut report = EvalReport {
                schema: SCHEMA,
                ms_ssim: score,
                distortion: 1.0 - score,
                bpp: None,
                lambda: None,
                rd_loss: None,
            };
            if let (Some(l), Some(bits)) = (lambda, bits) {
                let pixels = (a.width() * a.height()) as u64;
                let rd = RdReport::new(bits as f64, 0.0, bits as f64 / pixels as f64, pixels, score, l)?;
                report.bpp = Some(rd.bpp);
                report.lambda = Some(l);
                report.rd_loss = Some(rd.loss);
            }
            let text = serde_json::to_string_pretty(&report).map_err(|e| CliError::Other(e.to_string()))?;
            println!("{text}");
        }
        Command::Allocate {
            table,
            budget_bpp,
            granularity,
            out,
        } => {
            let file = fs::File::open(&table).map_err(|e| io_err(&table, e))?;
            let images = allocator::read_csv(io::BufReader::new(file))?;
            let problem = AllocationProblem::new(images, budget_bpp)?;
            let alloc = allocator::allocate_dp(&problem, granularity)?;
            let summary = allocator::summarize(&alloc, &problem);
            match out {
                Some(path) => {
                    let f = fs::File::create(&path).map_err(|e| io_err(&path, e))?;
                    allocator::write_allocation(io::BufWriter::new(f), &alloc, &summary)?;
                }
                None => allocator::write_allocation(io::stdout().lock(), &alloc, &summary)?,
            }
            if !alloc.feasible {
                eprintln!("warning: budget is below the cheapest assignment; emitted the minimum-rate choice");
            }
        }
        Command::PmfDump {
            k,
            weights,
            means,
            scales,
        } => {
            if weights.len() != k || means.len() != k || scales.len() != k {
                return Err(CliError::Other(format!(
                    "--k {k} needs {k} weights, means and scales"
                )));
            }
            let params = GmmParams::new(weights, means, scales)?;
            let table = pmf_table(&params);
            let mut stdout = io::BufWriter::new(io::stdout().lock());
            for (i, p) in table.iter().enumerate() {
                writeln!(stdout, "{},{}", gmmc_core::SymbolAlphabet::symbol(i), p)
                    .map_err(|e| CliError::Io(e.to_string()))?;
            }
            stdout.flush().map_err(|e| CliError::Io(e.to_string()))?;
        }
        Command::GenModel { k, n, seed, out } => {
            let model = CodecModel::toy(k, n, seed)?;
            model.save(&out).map_err(|e| match e {
                Error::Io(io) => io_err(&out, io),
                other => other.into(),
            })?;
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { ExitCode::from(1) } else { ExitCode::SUCCESS };
        }
    };
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("gmmc: {e}");
            ExitCode::from(e.code())
        }
    }
}
