use dqrp::coding_theory::{PlaneMode, RatePolicy};
use dqrp::ldpc::CodeDatabase;
use dqrp::par::Exec;
use dqrp::pipeline::*;
use dqrp::prediction::PredictionMode;
use std::sync::OnceLock;

const M: usize = 900;

fn codes() -> &'static CodeDatabase {
    static DB: OnceLock<CodeDatabase> = OnceLock::new();
    DB.get_or_init(|| CodeDatabase::build(M, &RatePolicy::default().rates, 31, Exec::default()).unwrap())
}

fn params(mode: PredictionMode, delta: f64) -> CodecParams {
    CodecParams { block: 32, measurements: M, deltas: vec![delta; 3], mode, ..CodecParams::default() }
}

fn round_trip(images: &ImageSet, p: &CodecParams) -> (Container, DecodedImage, MetricsReport) {
    let container = encode_image(images, p, codes(), Exec::default()).unwrap();
    let decoded = decode_image(&container, &images.bands[0], codes(), &DecodeOptions::default(), Exec::default()).unwrap();
    let truth = reference_levels(images, p).unwrap();
    let report = metrics_report(images, &decoded, &container, Some(&truth)).unwrap();
    (container, decoded, report)
}

#[test]
fn both_modes_recover_every_measurement() {
    let images = synthetic_scene(80, 70, 4, 3).unwrap();
    // a tight skip cutoff leaves no plane to chance
    let policy = RatePolicy { cutoff_skip: 1e-8, ..RatePolicy::default() };
    for mode in [PredictionMode::Linear, PredictionMode::Successive] {
        let p = CodecParams { policy: policy.clone(), ..params(mode, 6.0) };
        let (container, decoded, report) = round_trip(&images, &p);
        assert_eq!(container.blocks.len(), 3 * 9);
        assert_eq!(decoded.failed_planes(), 0, "{mode:?}");
        for b in &report.bands {
            assert_eq!(b.ber, Some(0.0), "{mode:?} band {}", b.band);
            if let Some(pred) = b.prediction_psnr {
                assert!(b.psnr > pred, "{mode:?} band {}", b.band);
            }
        }
        assert_eq!(decoded.bands[0], images.bands[0]);
    }
}

#[test]
fn default_cutoff_keeps_bit_errors_rare() {
    let images = synthetic_scene(80, 70, 4, 3).unwrap();
    let (_, decoded, report) = round_trip(&images, &params(PredictionMode::Linear, 6.0));
    assert_eq!(decoded.failed_planes(), 0);
    assert!(report.bands.iter().all(|b| b.ber.unwrap() < 1e-3));
}

#[test]
fn successive_prediction_is_no_worse_than_linear() {
    let images = synthetic_scene(96, 96, 4, 5).unwrap();
    let lin = encode_image(&images, &params(PredictionMode::Linear, 6.0), codes(), Exec::default()).unwrap();
    let suc = encode_image(&images, &params(PredictionMode::Successive, 6.0), codes(), Exec::default()).unwrap();
    let eps = |c: &Container, band: u8| {
        c.blocks.iter().filter(|b| b.header.band == band).map(|b| b.header.epsilon.powi(2)).sum::<f64>()
    };
    // band 1 has the same single regressor in both modes
    assert!(eps(&suc, 1) <= 1.01 * eps(&lin, 1));
    for band in 2..=3 {
        assert!(eps(&suc, band) < eps(&lin, band), "band {band}");
    }
    let payload = |c: &Container| c.band_bits().iter().map(|b| b.payload).sum::<u64>();
    assert!(payload(&suc) < payload(&lin));
}

#[test]
fn affine_bands_leave_at_most_the_lowest_plane() {
    let base = synthetic_scene(64, 64, 2, 8).unwrap().bands.remove(0);
    let bands = vec![
        base.clone(),
        base.iter().map(|v| 0.5 * v + 20.0).collect(),
        base.iter().map(|v| 0.9 * v + 3.0).collect(),
        base.iter().map(|v| 0.25 * v + 60.0).collect(),
    ];
    let images = ImageSet::new(64, 64, 8, bands).unwrap();
    let (container, _, report) = round_trip(&images, &params(PredictionMode::Linear, 8.0));
    // only the 16-bit statistics separate prediction from source
    for b in &container.blocks {
        assert!(b.header.epsilon < 2.0);
        assert!(b.plan.entries[1..].iter().all(|e| e.mode == PlaneMode::Skip));
    }
    for b in &report.bands {
        assert!(b.prediction_psnr.unwrap() > 50.0);
    }
    let exact = CodecParams { epsilon_override: Some(0.0), ..params(PredictionMode::Linear, 8.0) };
    let (container, _, report) = round_trip(&images, &exact);
    assert!(plane_mode_counts(&container).iter().all(|c| c[1] + c[2] == 0));
    assert!(report.bands.iter().all(|b| b.bpp == 0.0 && b.ber.unwrap() < 1e-3));
}

#[test]
fn blocks_are_encoded_independently() {
    let images = synthetic_scene(64, 64, 4, 9).unwrap();
    let crop = ImageSet::new(
        32,
        32,
        8,
        images.bands.iter().map(|b| (0..32).flat_map(|r| b[r * 64..r * 64 + 32].to_vec()).collect()).collect(),
    )
    .unwrap();
    for mode in [PredictionMode::Linear, PredictionMode::Successive] {
        let p = params(mode, 6.0);
        let full = encode_image(&images, &p, codes(), Exec::default()).unwrap();
        let part = encode_image(&crop, &p, codes(), Exec::default()).unwrap();
        let first: Vec<_> = full.blocks.iter().filter(|b| b.header.block_index == 0).collect();
        assert_eq!(first.len(), part.blocks.len());
        for (a, b) in first.iter().zip(&part.blocks) {
            assert_eq!(a.to_bytes(), b.to_bytes());
        }
    }
}

#[test]
fn sequential_and_parallel_agree() {
    let images = synthetic_scene(64, 48, 4, 10).unwrap();
    let p = params(PredictionMode::Successive, 6.0);
    let seq = encode_image(&images, &p, codes(), Exec::Sequential).unwrap();
    let par = encode_image(&images, &p, codes(), Exec::Parallel).unwrap();
    assert_eq!(seq.to_bytes().unwrap(), par.to_bytes().unwrap());
    let opts = DecodeOptions::default();
    let a = decode_image(&seq, &images.bands[0], codes(), &opts, Exec::Sequential).unwrap();
    let b = decode_image(&seq, &images.bands[0], codes(), &opts, Exec::Parallel).unwrap();
    assert_eq!(a, b);
}

#[test]
fn container_rejects_damage() {
    let images = synthetic_scene(40, 40, 3, 11).unwrap();
    let p = CodecParams { deltas: vec![6.0; 2], ..params(PredictionMode::Linear, 6.0) };
    let bytes = encode_image(&images, &p, codes(), Exec::default()).unwrap().to_bytes().unwrap();
    assert!(Container::from_bytes(&bytes).is_ok());
    let mut extra = bytes.clone();
    extra.push(0);
    assert!(Container::from_bytes(&extra).is_err());
    assert!(Container::from_bytes(&bytes[..bytes.len() - 2]).is_err());
    let mut magic = bytes.clone();
    magic[3] ^= 0x20;
    assert!(Container::from_bytes(&magic).is_err());
}

#[test]
fn decoder_checks_reference_and_codes() {
    let images = synthetic_scene(32, 32, 2, 12).unwrap();
    let p = CodecParams { deltas: vec![6.0], ..params(PredictionMode::Linear, 6.0) };
    let container = encode_image(&images, &p, codes(), Exec::default()).unwrap();
    let opts = DecodeOptions::default();
    assert!(decode_image(&container, &images.bands[0][..100], codes(), &opts, Exec::default()).is_err());
    let other = CodeDatabase::build(M, &RatePolicy::default().rates, 32, Exec::default()).unwrap();
    assert!(decode_image(&container, &images.bands[0], &other, &opts, Exec::default()).is_err());
    assert!(encode_image(&images, &CodecParams { deltas: vec![6.0; 2], ..p }, codes(), Exec::default()).is_err());
}

#[test]
fn tiling_replicates_edges() {
    let t = Tiling { width: 5, height: 3, block: 4 };
    assert_eq!((t.blocks_x(), t.blocks_y(), t.count()), (2, 1, 2));
    let band: Vec<f64> = (0..15).map(f64::from).collect();
    let b1 = t.extract(&band, 1);
    assert_eq!(&b1[..4], &[4.0, 4.0, 4.0, 4.0]);
    assert_eq!(&b1[12..], &[14.0, 14.0, 14.0, 14.0]);
    let mut out = vec![0.0; 15];
    for b in 0..2 {
        t.insert(&mut out, b, &t.extract(&band, b));
    }
    assert_eq!(out, band);
}

#[test]
fn rate_columns_add_up() {
    let images = synthetic_scene(64, 64, 4, 13).unwrap();
    let (container, _, report) = round_trip(&images, &params(PredictionMode::Successive, 8.0));
    let pixels = (64 * 64) as f64;
    let bits = container.band_bits();
    let payload: u64 = bits.iter().map(|b| b.payload).sum();
    let stats: u64 = bits.iter().map(|b| b.stats).sum();
    assert!((report.overall_bpp - (payload + stats) as f64 / (3.0 * pixels)).abs() < 1e-12);
    assert!((report.overhead_bpp - stats as f64 / (3.0 * pixels)).abs() < 1e-12);
    let band_sum: f64 = report.bands.iter().map(|b| b.bpp).sum::<f64>() / 3.0;
    assert!((report.overall_bpp - band_sum - report.overhead_bpp).abs() < 1e-12);
    assert_eq!(report.serialized_bits, bits.iter().map(|b| b.total()).sum::<u64>());
    for (b, m) in bits.iter().zip(&report.bands) {
        assert!((m.bpp - b.payload as f64 / pixels).abs() < 1e-12);
    }
}

#[test]
fn step_tuning_reaches_the_target_rate() {
    let images = synthetic_scene(64, 64, 2, 14).unwrap();
    let p = CodecParams { deltas: vec![8.0], ..params(PredictionMode::Linear, 8.0) };
    let delta = tune_delta(&images, &p, 1, 0.5, 0.05, codes(), Exec::default()).unwrap();
    let tuned = CodecParams { deltas: vec![delta], ..p };
    let rate = band_rate(&images, &tuned, 1, codes(), Exec::default()).unwrap();
    assert!((rate - 0.5).abs() <= 0.05, "{rate} at delta {delta}");
}

#[test]
fn synthetic_scene_is_deterministic_and_in_range() {
    let a = synthetic_scene(50, 40, 4, 1).unwrap();
    assert_eq!(a, synthetic_scene(50, 40, 4, 1).unwrap());
    assert_ne!(a, synthetic_scene(50, 40, 4, 2).unwrap());
    assert!(a.bands.iter().flatten().all(|&v| (0.0..=255.0).contains(&v)));
    assert!(synthetic_scene(50, 40, 1, 1).is_err());
}
