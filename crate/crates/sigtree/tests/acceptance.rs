//! Release checklist: nine end-to-end checks covering solver correctness,
//! metric behavior, storage size, tree structure, search cost, exact-match
//! completeness, scaling against the linear baseline, retrieval quality,
//! and persistence. Each check prints one PASS/FAIL line, so
//! `cargo test --test acceptance -- --nocapture` reads as a checklist.
//!
//! The scaling checks share one benchmark run over corpus sizes
//! {100, 1000, 10000} with 50 queries per size.

use std::sync::OnceLock;
use std::time::Instant;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use sigtree::{
    bench, build_from_images, cost_matrix, default_palette, emd, load_index, oracle_transport,
    save_index, solve_transport, synthetic_corpus, BenchReport, CostMatrix, Histogram,
    IndexConfig, STree, SearchMode, Signature, TreeParams, WeightVector,
};

static BENCH: OnceLock<(BenchReport, f64)> = OnceLock::new();

fn bench_report() -> &'static (BenchReport, f64) {
    BENCH.get_or_init(|| {
        let t0 = Instant::now();
        let report =
            bench(&[100, 1000, 10000], 50, &IndexConfig::default()).expect("benchmark run");
        (report, t0.elapsed().as_secs_f64())
    })
}

fn verdict(label: &str, pass: bool, detail: &str) -> bool {
    println!("acceptance {label}: {} ({detail})", if pass { "PASS" } else { "FAIL" });
    pass
}

fn random_weights(rng: &mut ChaCha8Rng, bins: usize, total: f64) -> Vec<f64> {
    loop {
        let w: Vec<f64> = (0..bins).map(|_| rng.random_range(0.0..100.0)).collect();
        let sum: f64 = w.iter().sum();
        if sum > 1e-9 {
            return w.into_iter().map(|x| x * total / sum).collect();
        }
    }
}

fn random_image_signature(rng: &mut ChaCha8Rng, bins: usize, m: u16) -> Signature {
    let mut weights = vec![0.0f64; bins];
    for w in weights.iter_mut() {
        if rng.random_bool(0.5) {
            *w = rng.random_range(0.05..1.0);
        }
    }
    if weights.iter().all(|&w| w == 0.0) {
        weights[rng.random_range(0..bins)] = 1.0;
    }
    let h = Histogram::from_weights(&weights).expect("positive weights normalize");
    Signature::encode(&h, m)
}

#[test]
fn c1_transport_solver_matches_oracle() {
    let mut rng = ChaCha8Rng::seed_from_u64(0xE1);
    let t0 = Instant::now();
    let mut max_diff = 0.0f64;
    for _ in 0..200 {
        let rows = rng.random_range(1..=4usize);
        let cols = rng.random_range(1..=4usize);
        let mut supply: Vec<f64> = (0..rows).map(|_| rng.random_range(0..=20) as f64).collect();
        let mut demand: Vec<f64> = (0..cols).map(|_| rng.random_range(0..=20) as f64).collect();
        if supply.iter().all(|&x| x == 0.0) {
            supply[0] = rng.random_range(1..=20) as f64;
        }
        if demand.iter().all(|&x| x == 0.0) {
            demand[0] = rng.random_range(1..=20) as f64;
        }
        let cost = CostMatrix::new(
            rows,
            cols,
            (0..rows * cols).map(|_| rng.random_range(0..=100) as f64).collect(),
        )
        .unwrap();
        let solved = solve_transport(&supply, &demand, &cost).unwrap().total_cost();
        let oracle = oracle_transport(&supply, &demand, &cost, 1.0).unwrap();
        max_diff = max_diff.max((solved - oracle).abs());
    }
    let secs = t0.elapsed().as_secs_f64();
    let pass = max_diff <= 1e-9 && secs < 10.0;
    let detail = format!("200 instances, max cost gap {max_diff:.2e}, {secs:.2}s");
    assert!(verdict("1 solver vs oracle", pass, &detail), "{detail}");
}

#[test]
fn c2_emd_metric_properties() {
    let palette = default_palette();
    let cost = cost_matrix(&palette);
    let mut rng = ChaCha8Rng::seed_from_u64(0xE2);
    let t0 = Instant::now();
    let (mut worst_id, mut worst_sym, mut worst_tri, mut min_val) = (0.0f64, 0.0f64, 0.0f64, f64::MAX);
    for _ in 0..1000 {
        let a = WeightVector::new(random_weights(&mut rng, palette.len(), 100.0));
        let b = WeightVector::new(random_weights(&mut rng, palette.len(), 100.0));
        let c = WeightVector::new(random_weights(&mut rng, palette.len(), 100.0));
        let ab = emd(&a, &b, &cost).unwrap();
        let ba = emd(&b, &a, &cost).unwrap();
        let bc = emd(&b, &c, &cost).unwrap();
        let ac = emd(&a, &c, &cost).unwrap();
        min_val = min_val.min(ab.min(bc).min(ac));
        worst_id = worst_id.max(emd(&a, &a, &cost).unwrap());
        worst_sym = worst_sym.max((ab - ba).abs());
        worst_tri = worst_tri.max(ac - (ab + bc));
    }
    let secs = t0.elapsed().as_secs_f64();
    let pass = min_val >= 0.0
        && worst_id <= 1e-12
        && worst_sym <= 1e-9
        && worst_tri <= 1e-6
        && secs < 30.0;
    let detail = format!(
        "1000 triples, identity {worst_id:.1e}, symmetry {worst_sym:.1e}, triangle {worst_tri:.1e}, {secs:.2}s"
    );
    assert!(verdict("2 EMD metric suite", pass, &detail), "{detail}");
}

#[test]
fn c3_signature_storage_size() {
    let h = Histogram::from_weights(&[3.0, 1.0, 0.0, 4.0, 0.0, 0.0, 2.0, 0.0, 0.0, 0.0, 0.0, 0.0, 0.0, 0.0, 0.0, 0.0])
        .unwrap();
    let sig = Signature::encode(&h, 8);
    let gch_bytes = 16 * std::mem::size_of::<f32>();
    let saving = 100 * (gch_bytes - sig.byte_len()) / gch_bytes;

    let mut formula_holds = true;
    for n in [1u16, 2, 3, 5, 8, 16, 31, 32, 64] {
        for m in [1u16, 2, 7, 8, 9, 16, 32] {
            let z = Signature::zero(n, m);
            let expected = (n as usize * m as usize).div_ceil(8);
            formula_holds &= z.byte_len() == expected && z.packed_bits().len() == expected;
        }
    }

    let pass = sig.byte_len() == 16 && gch_bytes == 64 && saving == 75 && formula_holds;
    let detail = format!(
        "signature {} B vs GCH {gch_bytes} B = {saving}% saved; ceil(n*m/8) holds: {formula_holds}",
        sig.byte_len()
    );
    assert!(verdict("3 signature storage", pass, &detail), "{detail}");
}

#[test]
fn c4_tree_structure_after_bulk_inserts() {
    let palette = default_palette();
    let params = TreeParams { max_entries: 6, min_entries: 2, bins: 16, bits_per_block: 8 };
    let mut tree = STree::new(params, cost_matrix(&palette)).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(0xE4);
    let t0 = Instant::now();
    for oid in 0..10_000u64 {
        let sig = random_image_signature(&mut rng, palette.len(), 8);
        tree.insert(sig, oid).unwrap();
    }
    let violations = tree.validate();
    let secs = t0.elapsed().as_secs_f64();
    let pass = violations.is_empty() && tree.len() == 10_000 && secs < 120.0;
    let detail = format!(
        "10000 inserts, height {}, {} violations, {secs:.1}s",
        tree.height(),
        violations.len()
    );
    assert!(verdict("4 tree structural suite", pass, &detail), "{detail}");
}

#[test]
fn c5_search_cost_bounds() {
    let (report, _) = bench_report();
    let m = IndexConfig::default().max_entries;
    let mut pass = true;
    let mut parts = Vec::new();
    for row in &report.rows {
        let bound = (m * (row.height + 1)) as u64;
        pass &= row.max_single_evaluations <= bound;
        if row.size >= 1000 {
            pass &= (row.max_single_evaluations as f64) < row.query_emd_comparisons_linear;
            pass &= row.query_emd_comparisons_single < row.query_emd_comparisons_linear;
        }
        parts.push(format!("n={}: max {} <= {}", row.size, row.max_single_evaluations, bound));
    }
    let detail = parts.join(", ");
    assert!(verdict("5 search cost bound", pass, &detail), "{detail}");
}

#[test]
fn c6_exact_match_completeness() {
    let config = IndexConfig::default();
    let corpus = synthetic_corpus(1000, &config);
    let index = build_from_images(&corpus, &config).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(0xE6);
    let mut found = 0usize;
    for _ in 0..100 {
        let oid = rng.random_range(0..corpus.len());
        let result = index.query(&corpus[oid].1, 10, SearchMode::MultiPath, false).unwrap();
        let top = &result.hits[0];
        if top.oid == oid as u64 && top.distance == 0.0 {
            found += 1;
        }
    }
    let pass = found == 100;
    let detail = format!("{found}/100 self-queries at rank 1 with distance 0");
    assert!(verdict("6 exact-match completeness", pass, &detail), "{detail}");
}

#[test]
fn c7_scaling_vs_linear() {
    let (report, secs) = bench_report();
    let by_size = |s: usize| report.rows.iter().find(|r| r.size == s).expect("bench row");
    let (r1k, r10k) = (by_size(1000), by_size(10_000));

    let ratio = |big: f64, small: f64| if small > 0.0 { big / small } else { f64::INFINITY };
    let single_ratio = ratio(r10k.query_emd_comparisons_single, r1k.query_emd_comparisons_single);
    let multi_ratio = ratio(r10k.query_emd_comparisons_multi, r1k.query_emd_comparisons_multi);
    let linear_ratio = r10k.query_emd_comparisons_linear / r1k.query_emd_comparisons_linear;
    let columns_populated = report
        .rows
        .iter()
        .all(|r| r.build_ms > 0.0 && r.query_ms_each > 0.0 && r.build_emd_comparisons > 0);

    let pass = single_ratio < 10.0
        && multi_ratio < 10.0
        && linear_ratio == 10.0
        && columns_populated
        && *secs < 900.0;
    let detail = format!(
        "10k/1k comparison ratios: single {single_ratio:.2}x, multi {multi_ratio:.2}x, linear {linear_ratio:.0}x, bench {secs:.0}s"
    );
    assert!(verdict("7 scaling curve", pass, &detail), "{detail}");
}

#[test]
fn c8_recall_floor() {
    let (report, _) = bench_report();
    let row = report.rows.iter().find(|r| r.size == 1000).expect("bench row");
    let single = row.recall_at_10_vs_linear;
    let multi = row.recall_at_10_multi;
    let pass = single >= 0.5 && multi >= single;
    let detail =
        format!("1000 images, 50 queries: single-path recall@10 {single:.3}, multi-path {multi:.3}");
    assert!(verdict("8 retrieval quality floor", pass, &detail), "{detail}");
}

#[test]
fn c9_determinism_and_persistence() {
    let config = IndexConfig::default();
    let corpus = synthetic_corpus(300, &config);
    let index = build_from_images(&corpus, &config).unwrap();
    let again = build_from_images(&corpus, &config).unwrap();
    let byte_identical = index.to_bytes() == again.to_bytes();

    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("acceptance.stree");
    save_index(&index, &path).unwrap();
    let loaded = load_index(&path).unwrap();

    let mut rng = ChaCha8Rng::seed_from_u64(0xE9);
    let mut identical_results = true;
    for _ in 0..20 {
        let img = &corpus[rng.random_range(0..corpus.len())].1;
        for mode in [SearchMode::SinglePath, SearchMode::MultiPath] {
            let a = index.query(img, 10, mode, false).unwrap();
            let b = loaded.query(img, 10, mode, false).unwrap();
            identical_results &= a.hits.len() == b.hits.len()
                && a.hits.iter().zip(&b.hits).all(|(x, y)| {
                    x.oid == y.oid
                        && x.distance.to_bits() == y.distance.to_bits()
                        && x.path == y.path
                });
        }
    }

    let pass = byte_identical && identical_results;
    let detail = format!(
        "rebuild byte-identical: {byte_identical}, save/load query parity over 20 queries: {identical_results}"
    );
    assert!(verdict("9 determinism & persistence", pass, &detail), "{detail}");
}
