mod common;

use proptest::prelude::*;
use rand::Rng;
use rcc_core::chain::DEFAULT_STATE_CAP;
use rcc_core::codec::arith::{ac_decode, ac_encode, quantize_pmf, QuantizedPmf, TOTAL};
use rcc_core::codec::*;
use rcc_core::gibbs::{gibbs_sample, SamplerConfig};
use rcc_core::lattice::{block_chain, column_chain, Clamp};
use rcc_core::model::*;
use rcc_core::moment::{fit, FitOptions};
use rcc_core::par::Execution;
use rcc_core::rng::rng_from_seed;
use rcc_core::RccError;

const CAP: usize = DEFAULT_STATE_CAP;

fn random_pmf<R: Rng>(rng: &mut R, n: usize) -> Vec<f64> {
    let w: Vec<f64> = (0..n).map(|_| rng.random::<f64>() + 1e-3).collect();
    let s: f64 = w.iter().sum();
    w.iter().map(|v| v / s).collect()
}

#[test]
fn quantized_random_pmf_is_close() {
    let mut rng = rng_from_seed(3);
    for _ in 0..100 {
        let pmf = random_pmf(&mut rng, 8);
        let qp = quantize_pmf(&pmf).unwrap();
        assert_eq!(qp.counts().iter().sum::<u32>(), TOTAL);
        for (s, p) in pmf.iter().enumerate() {
            // largest-remainder rounding is within one count of the ideal
            assert!((qp.probability(s) - p).abs() <= 1.0 / TOTAL as f64 + 1e-12);
        }
    }
}

#[test]
fn uniform_binary_stream_length() {
    let mut rng = rng_from_seed(4);
    let symbols: Vec<usize> = (0..1000).map(|_| rng.random_range(0..2)).collect();
    let provider = |_: &[usize]| quantize_pmf(&[0.5, 0.5]);
    let bits = ac_encode(&symbols, provider).unwrap();
    assert!((1000..=1002).contains(&bits.len()), "{}", bits.len());
    assert_eq!(ac_decode(bits.bytes(), 1000, provider).unwrap(), symbols);
}

#[test]
fn skewed_stream_length_matches_accounting() {
    let pmf = QuantizedPmf::from_counts(&[60000, 5536]).unwrap();
    let mut rng = rng_from_seed(5);
    for _ in 0..20 {
        let symbols: Vec<usize> = (0..2000).map(|_| usize::from(rng.random::<f64>() < 0.1)).collect();
        let ideal: f64 = symbols.iter().map(|&s| -(pmf.count(s) as f64 / TOTAL as f64).log2()).sum();
        let bits = ac_encode(&symbols, |_| Ok(pmf.clone())).unwrap();
        assert!((bits.len() as f64 - ideal).abs() <= 2.0, "{} vs {ideal}", bits.len());
        assert_eq!(ac_decode(bits.bytes(), symbols.len(), |_| Ok(pmf.clone())).unwrap(), symbols);
    }
}

proptest! {
    #[test]
    fn quantize_invariants(weights in prop::collection::vec(0.0f64..1.0, 1..64)) {
        let total: f64 = weights.iter().sum();
        prop_assume!(total > 0.0);
        let pmf: Vec<f64> = weights.iter().map(|w| w / total).collect();
        let a = quantize_pmf(&pmf).unwrap();
        prop_assert_eq!(a.counts().iter().sum::<u32>(), TOTAL);
        prop_assert!(a.counts().iter().all(|&c| c >= 1));
        prop_assert!(a.cumulative().windows(2).all(|w| w[0] < w[1]));
        prop_assert_eq!(a, quantize_pmf(&pmf).unwrap());
    }

    #[test]
    fn adaptive_stream_round_trip(
        symbols in prop::collection::vec(0usize..5, 0..400),
        seed in any::<u64>(),
    ) {
        // pmf depends on the previous symbol only, through a fixed random table
        let mut rng = rng_from_seed(seed);
        let tables: Vec<QuantizedPmf> = (0..6).map(|_| quantize_pmf(&random_pmf(&mut rng, 5)).unwrap()).collect();
        let provider = |prev: &[usize]| Ok(tables[prev.last().map_or(5, |&s| s)].clone());
        let bits = ac_encode(&symbols, provider).unwrap();
        let model: f64 = symbols.iter().enumerate()
            .map(|(t, &s)| tables[if t == 0 { 5 } else { symbols[t - 1] }].bits(s)).sum();
        prop_assert!(bits.len() as f64 <= model + 2.0);
        prop_assert_eq!(ac_decode(bits.bytes(), symbols.len(), provider).unwrap(), symbols);
    }
}

#[test]
fn uniform_line_costs_one_bit_per_pixel() {
    let shape = LatticeShape::new(1, 64).unwrap();
    let reduced = LatticeModel::new(PairwiseFamily::ising(), ComponentVector::zeros(shape)).unwrap();
    let mut rng = rng_from_seed(6);
    for _ in 0..10 {
        let line = Configuration::new(shape, (0..64).map(|_| rng.random_range(0..2)).collect()).unwrap();
        let enc = encode_line(&line, &reduced, CAP).unwrap();
        assert!((64..=66).contains(&enc.bits), "{}", enc.bits);
        assert_eq!(decode_line(&enc.bytes, &reduced, CAP).unwrap(), line);
    }
}

#[test]
fn uniform_strip_ignores_boundary() {
    let model = common::ising(5, 7, 0.0);
    let mut rng = rng_from_seed(7);
    for _ in 0..10 {
        let x = Configuration::new(model.shape(), (0..35).map(|_| rng.random_range(0..2)).collect()).unwrap();
        let clamp = Clamp::both(x.row(0), x.row(4));
        let strip = x.rows(1..4).unwrap();
        let enc = encode_strip(&strip, &model, 1..4, clamp, CAP).unwrap();
        assert!((21..=23).contains(&enc.bits), "{}", enc.bits);
        assert_eq!(decode_strip(&enc.bytes, &model, 1..4, clamp, CAP).unwrap(), strip);
    }
}

#[test]
fn strip_round_trip_random_boundaries() {
    let mut rng = rng_from_seed(8);
    for _ in 0..20 {
        let model = common::random_model(&mut rng, LatticeShape::new(6, 5).unwrap(), 3, 1.5);
        let x = Configuration::new(model.shape(), (0..30).map(|_| rng.random_range(0..3)).collect()).unwrap();
        let clamp = Clamp::both(x.row(1), x.row(5));
        let strip = x.rows(2..5).unwrap();
        let enc = encode_strip(&strip, &model, 2..5, clamp, CAP).unwrap();
        assert!(enc.bits as f64 <= enc.model_bits + 2.0);
        assert_eq!(decode_strip(&enc.bytes, &model, 2..5, clamp, CAP).unwrap(), strip);
    }
}

#[test]
fn block_model_bits_are_the_chain_log_probability() {
    // the pixelwise factorisation must reproduce -log2 p(block) exactly
    let mut rng = rng_from_seed(9);
    let model = common::random_model(&mut rng, LatticeShape::new(3, 4).unwrap(), 2, 1.0);
    let chain = block_chain(&model, CAP).unwrap();
    let en = common::Enumeration::new(&model);
    for (i, x) in en.configs.iter().enumerate().step_by(97) {
        let enc = BlockModel::new(chain.clone()).encode(x).unwrap();
        assert!((enc.ideal_bits + en.prob(i).log2()).abs() < 1e-9);
    }
}

#[test]
fn line_payload_tracks_cross_entropy() {
    // 1 x 16 line in the middle of an 8 x 16 Ising lattice
    let model = common::ising(8, 16, 0.4);
    let whole = block_chain(&model, CAP).unwrap();
    let target = whole.moments(&whole.posterior()).restrict_rows(3..4).unwrap();
    let fitted = fit(model.family(), &target, &ComponentVector::zeros(target.shape()), &FitOptions::default()).unwrap();
    let reduced = LatticeModel::new(model.family().clone(), fitted.theta_hat.clone()).unwrap();
    let cross_bits = (block_chain(&reduced, CAP).unwrap().log_partition() - fitted.theta_hat.dot(&target)) / std::f64::consts::LN_2;

    let cfg = SamplerConfig {
        burn_in: 1000,
        thinning: 10,
        seed: 11,
        sample_count: 200,
    };
    let images = gibbs_sample(&model, &cfg).unwrap();
    let mut total = 0u64;
    for img in &images {
        let line = img.rows(3..4).unwrap();
        let enc = encode_line(&line, &reduced, CAP).unwrap();
        assert_eq!(decode_line(&enc.bytes, &reduced, CAP).unwrap(), line);
        total += enc.bits;
    }
    let mean = total as f64 / images.len() as f64;
    assert!((mean / cross_bits - 1.0).abs() < 0.05, "mean {mean} vs {cross_bits}");
}

#[test]
fn strip_payload_tracks_conditional_entropy() {
    // 3-row strips of a 16-column lattice; the oracle is the exact entropy of
    // each clamped strip, averaged over the same boundaries
    let model = common::ising(5, 16, 0.4);
    let cfg = SamplerConfig {
        burn_in: 1000,
        thinning: 10,
        seed: 12,
        sample_count: 200,
    };
    let mut payload = 0u64;
    let mut entropy = 0.0;
    for img in gibbs_sample(&model, &cfg).unwrap() {
        let clamp = Clamp::both(img.row(0), img.row(4));
        let chain = column_chain(&model, 1..4, clamp, CAP).unwrap();
        entropy += chain.posterior().entropy() / std::f64::consts::LN_2;
        let enc = encode_strip(&img.rows(1..4).unwrap(), &model, 1..4, clamp, CAP).unwrap();
        payload += enc.bits;
    }
    assert!((payload as f64 / entropy - 1.0).abs() < 0.05, "{payload} vs {entropy}");
}

fn header(model: &LatticeModel, nl: usize, ns: usize) -> StreamHeader {
    let layout = build_layout(model.shape().rows, nl, ns).unwrap();
    let line_shape = LatticeShape::new(nl, model.shape().cols).unwrap();
    let theta_star = (0..layout.line_count())
        .map(|i| {
            let mut t = ComponentVector::zeros(line_shape);
            t.values_mut().iter_mut().for_each(|v| *v = 0.3 + 0.01 * i as f64);
            t
        })
        .collect();
    StreamHeader::new(model.clone(), layout, theta_star, 0xfeed).unwrap()
}

#[test]
fn uniform_image_rate_bounds() {
    let model = common::ising(13, 6, 0.0);
    let mut h = header(&model, 1, 5);
    h.theta_star.iter_mut().for_each(|t| t.values_mut().iter_mut().for_each(|v| *v = 0.0));
    let k = h.layout.k() as f64;
    let mut rng = rng_from_seed(13);
    for _ in 0..10 {
        let x = Configuration::new(model.shape(), (0..78).map(|_| rng.random_range(0..2)).collect()).unwrap();
        let enc = encode_image(&x, &h, CAP, Execution::default()).unwrap();
        let rate = enc.rate();
        assert!(rate >= 1.0 && rate <= 1.0 + 2.0 * (2.0 * k + 1.0) / 78.0, "{rate}");
    }
}

#[test]
fn image_round_trip_and_header() {
    let model = common::ising(14, 6, 0.4);
    let h = header(&model, 2, 1);
    let images = gibbs_sample(
        &model,
        &SamplerConfig {
            burn_in: 50,
            thinning: 2,
            seed: 14,
            sample_count: 5,
        },
    )
    .unwrap();
    for x in &images {
        let enc = encode_image(x, &h, CAP, Execution::Sequential).unwrap();
        assert_eq!(&enc.bytes[..4], b"RCC1");
        assert_eq!(enc.lines.len() + enc.strips.len(), 2 * h.layout.k() + 1);
        let par = encode_image(x, &h, CAP, Execution::default()).unwrap();
        assert_eq!(enc.bytes, par.bytes);
        let dec = decode_image(&enc.bytes, CAP, Execution::default()).unwrap();
        assert_eq!(&dec.config, x);
        assert_eq!(dec.header, h);
    }
}

#[test]
fn corrupt_streams_are_rejected() {
    let model = common::ising(7, 4, 0.4);
    let h = header(&model, 1, 2);
    let x = Configuration::filled(model.shape(), 1);
    let bytes = encode_image(&x, &h, CAP, Execution::default()).unwrap().bytes;
    let corrupt = |b: &[u8]| matches!(decode_image(b, CAP, Execution::default()), Err(RccError::CorruptStream(_)));

    assert!(corrupt(&bytes[..bytes.len() - 1]));
    assert!(corrupt(&bytes[..10]));
    let mut extra = bytes.clone();
    extra.push(0);
    assert!(corrupt(&extra));
    let mut magic = bytes.clone();
    magic[0] = b'X';
    assert!(corrupt(&magic));
    let mut version = bytes.clone();
    version[4] = 9;
    assert!(corrupt(&version));
    // perturb the first fitted parameter: the checksum no longer matches
    let theta_len = model.shape().components();
    let tables = 3 * 4 + (2 + 4 + 4) * 8;
    let first_star = 4 + 1 + 1 + 16 + tables + 4 + theta_len * 8 + 4;
    let mut tweaked = bytes.clone();
    tweaked[first_star + 1] ^= 0x40;
    assert!(corrupt(&tweaked));
}

#[test]
fn layout_mismatch_is_reported() {
    let model = common::ising(7, 4, 0.4);
    let h = header(&model, 1, 2);
    let x = Configuration::filled(LatticeShape::new(6, 4).unwrap(), 0);
    assert!(matches!(encode_image(&x, &h, CAP, Execution::default()), Err(RccError::LayoutMismatch(_))));
    let layout = build_layout(7, 1, 2).unwrap();
    assert!(matches!(
        StreamHeader::new(model.clone(), layout, vec![], 0),
        Err(RccError::LayoutMismatch(_))
    ));
}
