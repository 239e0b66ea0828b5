use std::time::Instant;

use deer::pscan::{solve_recurrence, solve_recurrence_sequential, ScanConfig};
use deer::{scan_inclusive, sequential_scan, LinearRecurrenceSystem, ScanElement, SmallMatrix};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn random_system(n: usize, len: usize, rng: &mut ChaCha8Rng) -> LinearRecurrenceSystem<f64> {
    // spectral radius kept below one so long products stay bounded
    let scale = 0.9 / n as f64;
    let t = (0..len * n * n).map(|_| rng.gen_range(-scale..scale)).collect();
    let b = (0..len * n).map(|_| rng.gen_range(-1.0..1.0)).collect();
    let y0 = (0..n).map(|_| rng.gen_range(-1.0..1.0)).collect();
    LinearRecurrenceSystem::new(n, t, b, y0).unwrap()
}

fn rel_close(a: &[f64], b: &[f64], tol: f64) -> bool {
    let scale = b.iter().fold(1.0f64, |m, v| m.max(v.abs()));
    a.len() == b.len() && a.iter().zip(b).all(|(x, y)| (x - y).abs() <= tol * scale)
}

#[test]
fn parallel_scan_matches_serial_on_200_random_systems() {
    let mut rng = ChaCha8Rng::seed_from_u64(2024);
    let dims = [1, 2, 4, 8];
    let lens = [1, 10, 1000];
    for case in 0..200 {
        let n = dims[case % 4];
        let len = lens[(case / 4) % 3];
        let sys = random_system(n, len, &mut rng);
        let chunk = [1, 7, 64, 256][case % 4];
        let par = solve_recurrence(&sys, &ScanConfig::with_chunk_size(chunk));
        let ser = solve_recurrence_sequential(&sys);
        assert!(rel_close(&par, &ser, 1e-11), "case {case}: n={n} L={len} chunk={chunk}");
    }
}

#[test]
fn element_api_matches_serial_oracle() {
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let n = 2;
    let init = ScanElement::initial(vec![0.3, -0.2]);
    let elems: Vec<_> = (0..1000)
        .map(|_| {
            let m = SmallMatrix::new(n, (0..4).map(|_| rng.gen_range(-0.45..0.45)).collect()).unwrap();
            ScanElement::new(m, vec![rng.gen_range(-1.0..1.0), rng.gen_range(-1.0..1.0)]).unwrap()
        })
        .collect();
    let par = scan_inclusive(&init, &elems, &ScanConfig::default()).unwrap();
    let ser = sequential_scan(&init, &elems).unwrap();
    for (p, s) in par.iter().zip(&ser) {
        assert!(rel_close(p, s, 1e-12));
    }
}

#[test]
fn bitwise_identical_across_thread_counts() {
    let mut rng = ChaCha8Rng::seed_from_u64(77);
    let sys = random_system(4, 20_000, &mut rng);
    let cfg = ScanConfig::with_chunk_size(128);
    let run = |threads: usize| {
        rayon::ThreadPoolBuilder::new()
            .num_threads(threads)
            .build()
            .unwrap()
            .install(|| solve_recurrence(&sys, &cfg))
    };
    let base: Vec<u64> = run(1).iter().map(|v| v.to_bits()).collect();
    for threads in [2, 3, 8] {
        let other: Vec<u64> = run(threads).iter().map(|v| v.to_bits()).collect();
        assert_eq!(base, other, "{threads} threads");
    }
}

#[test]
fn more_workers_scan_faster_on_long_sequences() {
    let hw = std::thread::available_parallelism().map_or(1, |n| n.get());
    if hw < 8 {
        eprintln!("skipping work-scaling check: {hw} hardware threads available, 8 needed");
        return;
    }
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let sys = random_system(2, 1_000_000, &mut rng);
    let cfg = ScanConfig::default();
    let time = |threads: usize| {
        let pool = rayon::ThreadPoolBuilder::new().num_threads(threads).build().unwrap();
        pool.install(|| solve_recurrence(&sys, &cfg));
        let start = Instant::now();
        for _ in 0..3 {
            pool.install(|| solve_recurrence(&sys, &cfg));
        }
        start.elapsed()
    };
    let one = time(1);
    let eight = time(8);
    assert!(eight < one, "8 workers {eight:?} vs 1 worker {one:?}");
}
