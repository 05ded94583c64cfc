//! `dqrp` command-line tool: code databases, image encode/decode and theory
//! analysis.

mod io;

use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{Context, Result};
use clap::{Args, Parser, Subcommand, ValueEnum};

use dqrp::analysis::{flip_rates, likelihood_buckets, lk_table, log_grid, pk_table, planes_to_code, FlipExperiment};
use dqrp::coding_theory::RatePolicy;
use dqrp::ldpc::CodeDatabase;
use dqrp::measurement::OperatorKind;
use dqrp::par::Exec;
use dqrp::pipeline::{
    decode_image, encode_image, metrics_report, plane_mode_counts, reference_levels, synthetic_scene, tune_delta, CodecParams,
    Container, DecodeOptions, ImageSet,
};
use dqrp::prediction::PredictionMode;
use dqrp::reconstruction::ReconConfig;

use io::Bands;

#[derive(Parser, Debug)]
#[command(name = "dqrp", version, about = "Distributed coding of quantized random projections")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// LDPC code databases.
    Codes {
        #[command(subcommand)]
        action: CodesAction,
    },
    /// Encodes bands 1.. of a multispectral image against band 0.
    Encode(EncodeArgs),
    /// Decodes a container given band 0 and writes the reconstructed bands.
    Decode(DecodeArgs),
    /// Writes theory curves or Monte Carlo comparisons as CSV.
    Analyze {
        #[command(subcommand)]
        kind: AnalyzeKind,
    },
}

#[derive(Subcommand, Debug)]
enum CodesAction {
    /// Builds one code per rate and writes the database.
    Generate {
        #[arg(long, default_value_t = 4000)]
        measurements: usize,
        /// Rate list as `start:step:end` or comma-separated values.
        #[arg(long, default_value = "0.05:0.05:0.95")]
        rates: String,
        #[arg(long, default_value_t = 11)]
        seed: u64,
        #[arg(long)]
        out: PathBuf,
    },
}

#[derive(Args, Debug)]
struct InputArgs {
    /// Band image (PGM); repeat in band order, reference first.
    #[arg(long = "band")]
    bands: Vec<PathBuf>,
    /// Flat little-endian u16 file with a `<file>.json` sidecar.
    #[arg(long, conflicts_with = "bands")]
    raw: Option<PathBuf>,
    /// Generated test scene, `WIDTHxHEIGHT`.
    #[arg(long, conflicts_with_all = ["bands", "raw"])]
    synthetic: Option<String>,
    #[arg(long, default_value_t = 7)]
    scene_seed: u64,
}

#[derive(Args, Debug)]
struct EncodeArgs {
    #[command(flatten)]
    input: InputArgs,
    #[arg(long)]
    out: PathBuf,
    #[arg(long)]
    codes: PathBuf,
    /// Block side; blocks hold `blocks²` pixels.
    #[arg(long, default_value_t = 64)]
    blocks: usize,
    #[arg(long, default_value_t = 4000)]
    measurements: usize,
    #[arg(long, default_value_t = 11)]
    bits: u32,
    /// Quantizer step; repeat once per coded band or give one for all.
    #[arg(long = "delta", default_value = "10")]
    deltas: Vec<f64>,
    /// Tune each band's step to this payload rate (bits per pixel).
    #[arg(long = "target-bpp", conflicts_with = "epsilon")]
    target_bpp: Vec<f64>,
    #[arg(long, value_enum, default_value_t = ModeArg::Linear)]
    mode: ModeArg,
    #[arg(long, value_enum, default_value_t = OperatorArg::Srht)]
    operator: OperatorArg,
    /// Skip planes whose flip probability is below this.
    #[arg(long, default_value_t = 0.001)]
    cutoff: f64,
    #[arg(long, default_value_t = 0.05)]
    backoff: f64,
    #[arg(long, default_value_t = 1)]
    seed_op: u64,
    #[arg(long, default_value_t = 2)]
    seed_dither: u64,
    /// Plan every block for this prediction error instead of the estimate.
    #[arg(long)]
    epsilon: Option<f64>,
}

#[derive(Args, Debug)]
struct DecodeArgs {
    /// Band 0 alone, or every band to also report PSNR and bit errors.
    #[command(flatten)]
    input: InputArgs,
    #[arg(long)]
    container: PathBuf,
    #[arg(long)]
    codes: Option<PathBuf>,
    /// Directory for `band<i>.pgm`, a flat `bands.bin` and `report.json`.
    #[arg(long)]
    out_dir: PathBuf,
    #[arg(long, default_value_t = 0.1)]
    lambda: f64,
    #[arg(long, default_value_t = 0.3)]
    tau: f64,
    #[arg(long, default_value_t = 500)]
    max_iters: usize,
}

#[derive(Subcommand, Debug)]
enum AnalyzeKind {
    /// `p_k` against the normalized error `εσ/Δ`.
    #[command(name = "pk_curves", alias = "pk-curves")]
    PkCurves {
        #[arg(long, default_value_t = 6)]
        k_max: u32,
        #[arg(long, default_value_t = 0.1)]
        s_min: f64,
        #[arg(long, default_value_t = 10.0)]
        s_max: f64,
        #[arg(long, default_value_t = 41)]
        points: usize,
        #[arg(long)]
        out: PathBuf,
    },
    /// `L_k(c)` against the prediction distance.
    #[command(name = "lk_curves", alias = "lk-curves")]
    LkCurves {
        #[arg(long, default_value_t = 3)]
        k: u32,
        #[arg(long = "scale", default_values_t = [0.25, 0.5, 1.0, 2.0])]
        scales: Vec<f64>,
        #[arg(long, default_value_t = 65)]
        points: usize,
        #[arg(long)]
        out: PathBuf,
    },
    /// Number of coded planes against the quantizer step.
    #[command(name = "planes_to_code", alias = "planes-to-code")]
    PlanesToCode {
        #[arg(long, default_value_t = 400.0)]
        epsilon: f64,
        #[arg(long, default_value_t = 4096)]
        n: usize,
        #[arg(long, default_value_t = 11)]
        bits: usize,
        #[arg(long, default_value_t = 0.5)]
        delta_min: f64,
        #[arg(long, default_value_t = 100.0)]
        delta_max: f64,
        #[arg(long, default_value_t = 40)]
        points: usize,
        #[arg(long = "cutoff", default_values_t = [1e-2, 1e-3, 1e-4])]
        cutoffs: Vec<f64>,
        #[arg(long)]
        out: PathBuf,
    },
    /// Empirical plane flip rates next to `p_k`, or with `--likelihood-k`
    /// bucketed conditional flip rates next to `L_k`.
    #[command(name = "montecarlo")]
    MonteCarlo {
        #[arg(long, value_enum, default_value_t = OperatorArg::Gaussian)]
        operator: OperatorArg,
        #[arg(long, default_value_t = 256)]
        n: usize,
        #[arg(long, default_value_t = 256)]
        m: usize,
        #[arg(long, default_value_t = 5)]
        k_max: u32,
        #[arg(long = "scale", default_values_t = [0.25, 0.5, 1.0, 2.0, 4.0])]
        scales: Vec<f64>,
        #[arg(long, default_value_t = 400)]
        trials: usize,
        #[arg(long, default_value_t = 1)]
        seed: u64,
        #[arg(long)]
        likelihood_k: Option<u32>,
        #[arg(long, default_value_t = 20)]
        buckets: usize,
        #[arg(long)]
        out: PathBuf,
    },
}

#[derive(ValueEnum, Clone, Copy, Debug)]
enum ModeArg {
    Linear,
    Successive,
}

#[derive(ValueEnum, Clone, Copy, Debug)]
enum OperatorArg {
    Srht,
    Gaussian,
}

impl From<ModeArg> for PredictionMode {
    fn from(m: ModeArg) -> Self {
        match m {
            ModeArg::Linear => PredictionMode::Linear,
            ModeArg::Successive => PredictionMode::Successive,
        }
    }
}

impl From<OperatorArg> for OperatorKind {
    fn from(o: OperatorArg) -> Self {
        match o {
            OperatorArg::Srht => OperatorKind::Srht,
            OperatorArg::Gaussian => OperatorKind::Gaussian,
        }
    }
}

/// Decoding finished but some syndrome planes did not converge.
#[derive(Debug)]
struct NonConvergence(usize);

impl std::fmt::Display for NonConvergence {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "{} syndrome-coded planes did not converge", self.0)
    }
}

impl std::error::Error for NonConvergence {}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(exit_code(&e))
        }
    }
}

fn exit_code(e: &anyhow::Error) -> u8 {
    if e.downcast_ref::<NonConvergence>().is_some() {
        return 3;
    }
    match e.downcast_ref::<dqrp::Error>() {
        Some(dqrp::Error::InvalidParameter(_) | dqrp::Error::LengthMismatch { .. } | dqrp::Error::Saturation { .. }) => 2,
        _ if e.downcast_ref::<Validation>().is_some() => 2,
        _ => 1,
    }
}

/// Flag combination rejected before any work starts.
#[derive(Debug)]
struct Validation(String);

impl std::fmt::Display for Validation {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(&self.0)
    }
}

impl std::error::Error for Validation {}

fn invalid(msg: impl Into<String>) -> anyhow::Error {
    Validation(msg.into()).into()
}

fn run(cli: Cli) -> Result<()> {
    match cli.command {
        Command::Codes { action: CodesAction::Generate { measurements, rates, seed, out } } => {
            let rates = parse_rates(&rates)?;
            let db = CodeDatabase::build(measurements, &rates, seed, Exec::default())?;
            fs::write(&out, db.to_bytes()).with_context(|| format!("writing {}", out.display()))?;
            println!("wrote {} codes at m = {} to {}", db.len(), measurements, out.display());
            Ok(())
        }
        Command::Encode(args) => encode(args),
        Command::Decode(args) => decode(args),
        Command::Analyze { kind } => analyze(kind),
    }
}

fn parse_rates(arg: &str) -> Result<Vec<f64>> {
    let parts: Vec<&str> = arg.split(':').collect();
    let rates = if parts.len() == 3 {
        let [start, step, end] = [parts[0], parts[1], parts[2]].map(str::parse::<f64>);
        let (start, step, end) = (start?, step?, end?);
        if !(step > 0.0) || end < start {
            return Err(invalid(format!("bad rate range {arg}")));
        }
        let count = ((end - start) / step + 1e-9).floor() as usize + 1;
        (0..count).map(|i| ((start + step * i as f64) * 1e9).round() / 1e9).collect()
    } else {
        arg.split(',').map(|s| s.trim().parse::<f64>()).collect::<Result<Vec<_>, _>>()?
    };
    if rates.is_empty() || rates.iter().any(|r| !(*r > 0.0 && *r < 1.0)) || rates.windows(2).any(|w| w[1] <= w[0]) {
        return Err(invalid(format!("rates must increase strictly inside (0, 1): {arg}")));
    }
    Ok(rates)
}

fn load_input(input: &InputArgs) -> Result<Bands> {
    if let Some(arg) = &input.synthetic {
        let (w, h) = arg
            .split_once('x')
            .and_then(|(a, b)| Some((a.parse::<usize>().ok()?, b.parse::<usize>().ok()?)))
            .ok_or_else(|| invalid(format!("--synthetic expects WIDTHxHEIGHT, got {arg}")))?;
        let set = synthetic_scene(w, h, 4, input.scene_seed)?;
        return Ok(Bands { width: set.width, height: set.height, bit_depth: set.bit_depth, data: set.bands });
    }
    if let Some(raw) = &input.raw {
        return io::read_raw(raw);
    }
    if input.bands.is_empty() {
        return Err(invalid("give --band files, --raw or --synthetic"));
    }
    io::read_pgm_bands(&input.bands)
}

fn load_codes(path: &Path) -> Result<CodeDatabase> {
    let bytes = fs::read(path).with_context(|| format!("reading code database {}", path.display()))?;
    Ok(CodeDatabase::read_from(bytes.as_slice())?)
}

fn encode(args: EncodeArgs) -> Result<()> {
    let bands = load_input(&args.input)?;
    let images = ImageSet::new(bands.width, bands.height, bands.bit_depth, bands.data)?;
    let coded = images.band_count() - 1;
    let deltas = match args.deltas.len() {
        1 => vec![args.deltas[0]; coded],
        n if n == coded => args.deltas.clone(),
        n => return Err(invalid(format!("{n} --delta values for {coded} coded bands"))),
    };
    let codes = load_codes(&args.codes)?;
    let policy = RatePolicy { rates: codes.rates().to_vec(), backoff: args.backoff, cutoff_skip: args.cutoff, ..RatePolicy::default() };
    let mut params = CodecParams {
        block: args.blocks,
        measurements: args.measurements,
        bits: args.bits,
        deltas,
        mode: args.mode.into(),
        operator: args.operator.into(),
        policy,
        seed_op: args.seed_op,
        seed_dither: args.seed_dither,
        epsilon_override: args.epsilon,
    };
    params.validate(coded)?;
    if codes.m() != params.measurements {
        return Err(invalid(format!("code database has m = {}, encoder uses m = {}", codes.m(), params.measurements)));
    }
    if !args.target_bpp.is_empty() {
        let targets = match args.target_bpp.len() {
            1 => vec![args.target_bpp[0]; coded],
            n if n == coded => args.target_bpp.clone(),
            n => return Err(invalid(format!("{n} --target-bpp values for {coded} coded bands"))),
        };
        for (i, &t) in targets.iter().enumerate() {
            params.deltas[i] = tune_delta(&images, &params, i + 1, t, 0.02, &codes, Exec::default())?;
            eprintln!("band {}: step {:.4} for {t} bpp", i + 1, params.deltas[i]);
        }
    }
    let container = encode_image(&images, &params, &codes, Exec::default())?;
    let bytes = container.to_bytes()?;
    fs::write(&args.out, &bytes).with_context(|| format!("writing {}", args.out.display()))?;
    print_encode_summary(&container, images.width * images.height);
    Ok(())
}

fn print_encode_summary(container: &Container, pixels: usize) {
    let modes = plane_mode_counts(container);
    println!("{:>5} {:>9} {:>9} {:>6} {:>6} {:>9}", "band", "step", "bpp", "raw", "synd", "skip");
    for (i, (bits, counts)) in container.band_bits().iter().zip(&modes).enumerate() {
        println!(
            "{:>5} {:>9.4} {:>9.4} {:>6} {:>6} {:>9}",
            i + 1,
            container.manifest.params.deltas[i],
            bits.payload as f64 / pixels as f64,
            counts[1],
            counts[2],
            counts[0]
        );
    }
    let total: u64 = container.band_bits().iter().map(|b| b.total()).sum();
    println!("serialized bits {total} ({:.5} bpp over coded bands)", total as f64 / (modes.len() * pixels) as f64);
}

fn decode(args: DecodeArgs) -> Result<()> {
    let bytes = fs::read(&args.container).with_context(|| format!("reading {}", args.container.display()))?;
    let container = Container::from_bytes(&bytes)?;
    let codes_path = args.codes.as_ref().ok_or_else(|| invalid("decoding needs the code database (--codes)"))?;
    let codes = load_codes(codes_path)?;
    let input = load_input(&args.input)?;
    let man = &container.manifest;
    if (input.width, input.height) != (man.width, man.height) {
        return Err(invalid(format!("reference is {}x{}, container holds {}x{}", input.width, input.height, man.width, man.height)));
    }
    let opts = DecodeOptions {
        recon: ReconConfig { lambda: args.lambda, max_iters: args.max_iters, ..ReconConfig::default() },
        tau: args.tau,
        ..DecodeOptions::default()
    };
    opts.recon.validate()?;
    let decoded = decode_image(&container, &input.data[0], &codes, &opts, Exec::default())?;
    fs::create_dir_all(&args.out_dir)?;
    for (i, band) in decoded.bands.iter().enumerate() {
        io::write_pgm(&args.out_dir.join(format!("band{i}.pgm")), man.width, man.height, man.bit_depth, band)?;
    }
    let flat = Bands { width: man.width, height: man.height, bit_depth: man.bit_depth, data: decoded.bands.clone() };
    io::write_raw(&args.out_dir.join("bands.bin"), &flat)?;
    if input.data.len() == man.bands {
        let original = ImageSet::new(input.width, input.height, man.bit_depth, input.data)?;
        let truth = reference_levels(&original, &man.params)?;
        let report = metrics_report(&original, &decoded, &container, Some(&truth))?;
        println!("{report}");
        fs::write(args.out_dir.join("report.json"), serde_json::to_vec_pretty(&report)?)?;
    } else {
        for (i, bits) in container.band_bits().iter().enumerate() {
            println!("band {}: {:.4} bpp payload", i + 1, bits.payload as f64 / (man.width * man.height) as f64);
        }
    }
    match decoded.failed_planes() {
        0 => Ok(()),
        n => Err(NonConvergence(n).into()),
    }
}

fn csv_writer(path: &Path) -> Result<csv::Writer<fs::File>> {
    csv::Writer::from_path(path).with_context(|| format!("creating {}", path.display()))
}

fn analyze(kind: AnalyzeKind) -> Result<()> {
    match kind {
        AnalyzeKind::PkCurves { k_max, s_min, s_max, points, out } => {
            let scales = log_grid(s_min, s_max, points)?;
            let mut w = csv_writer(&out)?;
            let mut header = vec!["scale".to_string()];
            header.extend((1..=k_max).map(|k| format!("p{k}")));
            w.write_record(&header)?;
            for (s, row) in scales.iter().zip(pk_table(k_max, &scales)) {
                let mut rec = vec![s.to_string()];
                rec.extend(row.iter().map(f64::to_string));
                w.write_record(&rec)?;
            }
            w.flush()?;
        }
        AnalyzeKind::LkCurves { k, scales, points, out } => {
            let mut w = csv_writer(&out)?;
            let mut header = vec!["c".to_string()];
            header.extend(scales.iter().map(|s| format!("L{k}_s{s}")));
            w.write_record(&header)?;
            for (c, row) in lk_table(k, &scales, points)? {
                let mut rec = vec![c.to_string()];
                rec.extend(row.iter().map(f64::to_string));
                w.write_record(&rec)?;
            }
            w.flush()?;
        }
        AnalyzeKind::PlanesToCode { epsilon, n, bits, delta_min, delta_max, points, cutoffs, out } => {
            if n == 0 {
                return Err(invalid("--n must be positive"));
            }
            let deltas = log_grid(delta_min, delta_max, points)?;
            let table = planes_to_code(epsilon, 1.0 / (n as f64).sqrt(), bits, &deltas, &cutoffs)?;
            let mut w = csv_writer(&out)?;
            let mut header = vec!["delta".to_string()];
            header.extend(cutoffs.iter().map(|c| format!("planes_cutoff_{c}")));
            w.write_record(&header)?;
            for (d, row) in deltas.iter().zip(table) {
                let mut rec = vec![d.to_string()];
                rec.extend(row.iter().map(usize::to_string));
                w.write_record(&rec)?;
            }
            w.flush()?;
        }
        AnalyzeKind::MonteCarlo { operator, n, m, k_max, scales, trials, seed, likelihood_k, buckets, out } => {
            if m == 0 || m > n || trials == 0 {
                return Err(invalid("need 0 < m <= n and at least one trial"));
            }
            let exp = FlipExperiment { operator: operator.into(), n, m, trials, seed };
            let mut w = csv_writer(&out)?;
            match likelihood_k {
                None => {
                    w.write_record(["k", "scale", "theory", "empirical", "bits"])?;
                    for c in flip_rates(&exp, k_max, &scales, Exec::default())? {
                        w.write_record([c.k.to_string(), c.scale.to_string(), c.theory.to_string(), c.empirical.to_string(), c.bits.to_string()])?;
                    }
                }
                Some(k) => {
                    w.write_record(["scale", "c_lo", "c_hi", "samples", "theory", "empirical"])?;
                    for &s in &scales {
                        for b in likelihood_buckets(&exp, k, s, buckets, Exec::default())? {
                            w.write_record([
                                s.to_string(),
                                b.lo.to_string(),
                                b.hi.to_string(),
                                b.samples.to_string(),
                                b.theory.to_string(),
                                b.empirical.to_string(),
                            ])?;
                        }
                    }
                }
            }
            w.flush()?;
        }
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn rate_ranges() {
        let r = parse_rates("0.05:0.05:0.95").unwrap();
        assert_eq!(r.len(), 19);
        assert_eq!(r[0], 0.05);
        assert_eq!(r[18], 0.95);
        assert_eq!(parse_rates("0.2,0.5").unwrap(), vec![0.2, 0.5]);
        assert!(parse_rates("0.5,0.2").is_err());
        assert!(parse_rates("0.5:0:0.9").is_err());
        assert!(parse_rates("0.5:0.1:1.2").is_err());
    }

    #[test]
    fn cli_definition_is_consistent() {
        use clap::CommandFactory;
        Cli::command().debug_assert();
    }
}
