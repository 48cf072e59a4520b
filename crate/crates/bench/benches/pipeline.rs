use std::hint::black_box;

use criterion::{criterion_group, criterion_main, Criterion};

use flyover_core::adsb::cpr::encode_cpr;
use flyover_core::adsb::{crc24, decode_cpr_global, AirbornePositionMsg, CprFormat};
use flyover_core::dataset::SEGMENT_SAMPLES;
use flyover_core::eval::average_precision;
use flyover_core::features::Mfcc;
use flyover_core::models::{ModelKind, ModelSpec, INPUT_SHAPE};

fn pseudo(i: usize) -> f64 {
    ((i as f64 * 12.9898).sin() * 43758.5453).fract()
}

fn crc(c: &mut Criterion) {
    let msg: Vec<u8> = (0..11u8).map(|i| i.wrapping_mul(37)).collect();
    c.bench_function("crc24_112bit", |b| b.iter(|| crc24(black_box(&msg))));
}

fn cpr(c: &mut Criterion) {
    let msg = |format| {
        let (cpr_lat, cpr_lon) = encode_cpr(-34.95, 138.53, format);
        AirbornePositionMsg {
            cpr_format: format,
            cpr_lat,
            cpr_lon,
            altitude_ft: Some(3000),
            surface: false,
        }
    };
    let (even, odd) = (msg(CprFormat::Even), msg(CprFormat::Odd));
    c.bench_function("cpr_global_decode", |b| b.iter(|| decode_cpr_global(black_box(&even), black_box(&odd), CprFormat::Odd)));
}

fn mfcc(c: &mut Criterion) {
    let m = Mfcc::new();
    let samples: Vec<f64> = (0..SEGMENT_SAMPLES).map(|i| pseudo(i) * 0.1).collect();
    c.bench_function("mfcc_5s_segment", |b| b.iter(|| m.segment("bench", black_box(&samples)).unwrap()));
}

fn ap(c: &mut Criterion) {
    let scores: Vec<f64> = (0..10_000).map(pseudo).collect();
    let labels: Vec<bool> = (0..10_000).map(|i| pseudo(i + 7) > 0.3).collect();
    c.bench_function("average_precision_10k", |b| b.iter(|| average_precision(black_box(&scores), &labels).unwrap()));
}

fn forward(c: &mut Criterion) {
    let x: Vec<f64> = (0..INPUT_SHAPE.len()).map(pseudo).collect();
    for kind in [ModelKind::Mlp, ModelKind::Cnn] {
        let net = ModelSpec::for_kind(kind, 0).build().unwrap();
        c.bench_function(&format!("{kind}_forward"), |b| b.iter(|| net.predict(black_box(&x)).unwrap()));
    }
}

criterion_group!(benches, crc, cpr, mfcc, ap, forward);
criterion_main!(benches);
