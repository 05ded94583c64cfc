//! Encodes and decodes a synthetic four-band scene and prints the report.
//!
//! `cargo run --release --example roundtrip -- [size] [delta] [linear|successive]`

use dqrp::ldpc::CodeDatabase;
use dqrp::par::Exec;
use dqrp::pipeline::{decode_image, encode_image, metrics_report, reference_levels, synthetic_scene, CodecParams, DecodeOptions};
use dqrp::prediction::PredictionMode;

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let args: Vec<String> = std::env::args().collect();
    let size: usize = args.get(1).map_or(Ok(128), |s| s.parse())?;
    let delta: f64 = args.get(2).map_or(Ok(30.0), |s| s.parse())?;
    let mode: PredictionMode = args.get(3).map_or(Ok(PredictionMode::Linear), |s| s.parse())?;
    let params = CodecParams { deltas: vec![delta; 3], mode, ..CodecParams::default() };
    let images = synthetic_scene(size, size, 4, 7)?;
    let t = std::time::Instant::now();
    let codes = CodeDatabase::build(params.measurements, &params.policy.rates, 11, Exec::default())?;
    eprintln!("codes built in {:.1?}", t.elapsed());
    let t = std::time::Instant::now();
    let container = encode_image(&images, &params, &codes, Exec::default())?;
    eprintln!("encoded in {:.1?}", t.elapsed());
    let t = std::time::Instant::now();
    let decoded = decode_image(&container, &images.bands[0], &codes, &DecodeOptions::default(), Exec::default())?;
    eprintln!("decoded in {:.1?}", t.elapsed());
    let truth = reference_levels(&images, &params)?;
    println!("{}", metrics_report(&images, &decoded, &container, Some(&truth))?);
    Ok(())
}
