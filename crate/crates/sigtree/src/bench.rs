//! Synthetic corpora and the benchmark harness comparing tree-filtered
//! search against the linear baseline.
//!
//! Corpus images are 64x64 stripes of 4 or 5 palette colors. Images come in
//! families that share a color/proportion prototype with per-image jitter,
//! which gives every image close neighbors for recall measurements, while a
//! signature dedup pass plus a fixed per-image weight total keep all
//! pairwise distances strictly positive.

use std::collections::HashSet;
use std::fmt::Write as _;
use std::time::Instant;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::engine::{build_from_images, EngineError, IndexConfig, QueryResult};
use crate::palette::{histogram, Palette};
use crate::raster::RawImage;
use crate::signature::Signature;
use crate::stree::SearchMode;

pub const BENCH_CSV_HEADER: &str = "size,build_emd_comparisons,build_ms,query_emd_comparisons_single,query_emd_comparisons_multi,query_emd_comparisons_linear,query_ms_each,recall_at_10_vs_linear";

/// One benchmark corpus size. The CSV carries the first eight fields; the
/// rest are diagnostics for assertions and logs. Query comparison columns
/// are means over the query set of every EMD solved per query (tree
/// steering plus exact re-ranking of candidates), which makes them
/// comparable with the linear column, where scanning and ranking are the
/// same work. `max_single_evaluations` tracks steering alone, the count
/// the per-node capacity bound applies to. Recall is against the
/// linear-scan top 10, and `query_ms_each` is the mean single-path
/// latency.
#[derive(Debug, Clone)]
pub struct BenchRow {
    pub size: usize,
    pub build_emd_comparisons: u64,
    pub build_ms: f64,
    pub query_emd_comparisons_single: f64,
    pub query_emd_comparisons_multi: f64,
    pub query_emd_comparisons_linear: f64,
    pub query_ms_each: f64,
    pub recall_at_10_vs_linear: f64,
    pub recall_at_10_multi: f64,
    pub height: usize,
    pub max_single_evaluations: u64,
}

#[derive(Debug, Clone)]
pub struct BenchReport {
    pub rows: Vec<BenchRow>,
}

impl BenchReport {
    pub fn to_csv(&self) -> String {
        let mut out = String::from(BENCH_CSV_HEADER);
        out.push('\n');
        for r in &self.rows {
            writeln!(
                out,
                "{},{},{:.3},{:.2},{:.2},{:.2},{:.4},{:.4}",
                r.size,
                r.build_emd_comparisons,
                r.build_ms,
                r.query_emd_comparisons_single,
                r.query_emd_comparisons_multi,
                r.query_emd_comparisons_linear,
                r.query_ms_each,
                r.recall_at_10_vs_linear
            )
            .expect("writing to a String cannot fail");
        }
        out
    }
}

struct Prototype {
    colors: Vec<usize>,
    levels: Vec<u32>,
}

/// Common level sum of every generated image. A shared total matters
/// because the EMD here does partial matching (total flow is the smaller
/// mass), which puts any two images whose weight vectors nest pointwise at
/// distance zero; with equal totals, distance zero means equal signatures,
/// and the dedup pass forbids those.
const LEVEL_SUM: u32 = 10;

/// Family blueprint: 4 or 5 colors drawn from a window of six adjacent
/// palette slots (wrapping), so families sharing a window stay closer in
/// EMD than families from distant windows. Quantization levels out of 8
/// sum to LEVEL_SUM, which both fixes the total weight and makes the
/// painted proportions land exactly on the intended levels.
fn random_prototype(rng: &mut ChaCha8Rng, palette_len: usize) -> Prototype {
    let window = palette_len.min(6);
    let k = rng.random_range(4..=5usize).min(window);
    let base = rng.random_range(0..palette_len);
    let colors: Vec<usize> = rand::seq::index::sample(rng, window, k)
        .into_iter()
        .map(|c| (base + c) % palette_len)
        .collect();
    let mut levels = vec![1u32; k];
    for _ in 0..LEVEL_SUM.saturating_sub(k as u32) {
        let open: Vec<usize> = (0..k).filter(|&b| levels[b] < 8).collect();
        let b = open[rng.random_range(0..open.len())];
        levels[b] += 1;
    }
    Prototype { colors, levels }
}

/// Stripe proportions hitting the given levels: level l out of 8 maps to
/// the middle of its quantization cell.
fn proportions_for(levels: &[u32]) -> Vec<f64> {
    levels.iter().map(|&l| (l as f64 - 0.5) / 8.0).collect()
}

/// Moves `steps` single level units between randomly chosen block pairs,
/// keeping the level sum (and so the total weight) unchanged.
fn stepped(rng: &mut ChaCha8Rng, levels: &[u32], steps: u32) -> Vec<u32> {
    let mut out = levels.to_vec();
    for _ in 0..steps {
        let up: Vec<usize> = (0..out.len()).filter(|&b| out[b] < 8).collect();
        let down: Vec<usize> = (0..out.len()).filter(|&b| out[b] > 1).collect();
        if up.is_empty() || down.is_empty() {
            continue;
        }
        let i = up[rng.random_range(0..up.len())];
        let j = down[rng.random_range(0..down.len())];
        if i == j {
            continue;
        }
        out[i] += 1;
        out[j] -= 1;
    }
    out
}

/// Vertical color stripes with widths proportional to `proportions`.
fn paint_stripes(side: u32, palette: &Palette, colors: &[usize], proportions: &[f64]) -> RawImage {
    let total: f64 = proportions.iter().sum();
    let mut bounds = Vec::with_capacity(colors.len());
    let mut cum = 0.0;
    for (i, p) in proportions.iter().enumerate() {
        cum += p;
        let b = if i + 1 == proportions.len() {
            side
        } else {
            ((cum / total) * side as f64).round() as u32
        };
        bounds.push(b.min(side));
    }
    let mut row = Vec::with_capacity(side as usize);
    let mut region = 0;
    for x in 0..side {
        while region + 1 < bounds.len() && x >= bounds[region] {
            region += 1;
        }
        row.push(palette.color(colors[region]).rgb);
    }
    let mut pixels = Vec::with_capacity((side * side) as usize);
    for _ in 0..side {
        pixels.extend_from_slice(&row);
    }
    RawImage::new(side, side, pixels).expect("stripe painter fills the raster exactly")
}

/// Deterministic synthetic corpus of `size` images named in generation
/// order. Images come in consecutive runs of 6 sharing a family prototype;
/// each member shifts the prototype by a level step or two, and any image
/// whose signature collides with an earlier one, or whose total weight
/// drifts off the corpus-wide value, is re-stepped harder (eventually
/// re-drawn from scratch). Unique signatures plus a common weight total
/// keep every pairwise distance strictly positive.
pub fn synthetic_corpus(size: usize, config: &IndexConfig) -> Vec<(String, RawImage)> {
    const SIDE: u32 = 64;
    const FAMILY: usize = 6;
    let palette = &config.palette;
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let families = size.div_ceil(FAMILY).max(1);
    let prototypes: Vec<Prototype> =
        (0..families).map(|_| random_prototype(&mut rng, palette.len())).collect();

    let mut seen: HashSet<Vec<u8>> = HashSet::with_capacity(size);
    let mut expected_total: Option<f64> = None;
    let mut out = Vec::with_capacity(size);
    for i in 0..size {
        let proto = &prototypes[i / FAMILY];
        let member = (i % FAMILY) as u32;
        let mut attempt = 0u32;
        let image = loop {
            let (colors, levels) = if attempt < 24 {
                let steps = if member == 0 && attempt == 0 { 0 } else { 1 + attempt / 4 };
                (proto.colors.clone(), stepped(&mut rng, &proto.levels, steps))
            } else {
                let fresh = random_prototype(&mut rng, palette.len());
                (fresh.colors, fresh.levels)
            };
            let img = paint_stripes(SIDE, palette, &colors, &proportions_for(&levels));
            let h = histogram(&img, palette, config.dominant_threshold)
                .expect("painted images are never empty");
            let sig = Signature::encode(&h, config.bits_per_block);
            let total = sig.weight_vector().total();
            let mut key = Vec::new();
            sig.serialize_into(&mut key);
            if total == *expected_total.get_or_insert(total) && seen.insert(key) {
                break img;
            }
            attempt += 1;
        };
        out.push((format!("synthetic/{i:06}.ppm"), image));
    }
    out
}

fn recall_against(truth: &QueryResult, probe: &QueryResult) -> f64 {
    let truth_oids: HashSet<u64> = truth.hits.iter().map(|h| h.oid).collect();
    if truth_oids.is_empty() {
        return 1.0;
    }
    let hit = probe.hits.iter().filter(|h| truth_oids.contains(&h.oid)).count();
    hit as f64 / truth_oids.len() as f64
}

/// Builds one synthetic index per corpus size, then answers `query_count`
/// queries (drawn from the indexed images) with single-path, multi-path,
/// and linear scan, recording comparison counts, latency, and recall@10
/// against the linear ground truth.
pub fn bench(
    sizes: &[usize],
    query_count: usize,
    config: &IndexConfig,
) -> Result<BenchReport, EngineError> {
    if sizes.is_empty() || sizes[0] == 0 {
        return Err(EngineError::InvalidArgument("need at least one positive size".into()));
    }
    if sizes.windows(2).any(|w| w[1] <= w[0]) {
        return Err(EngineError::InvalidArgument("sizes must be strictly ascending".into()));
    }
    if query_count == 0 {
        return Err(EngineError::InvalidArgument("need at least one query".into()));
    }

    const K: usize = 10;
    let mut rows = Vec::with_capacity(sizes.len());
    for &size in sizes {
        let corpus = synthetic_corpus(size, config);
        let t0 = Instant::now();
        let index = build_from_images(&corpus, config)?;
        let build_ms = t0.elapsed().as_secs_f64() * 1e3;
        let build_emd_comparisons = index.tree().emd_evaluations();

        let mut pick = ChaCha8Rng::seed_from_u64(config.seed);
        pick.set_stream(1);

        let mut single_evals = 0u64;
        let mut multi_evals = 0u64;
        let mut linear_evals = 0u64;
        let mut max_single_evaluations = 0u64;
        let mut single_ms = 0.0;
        let mut recall_single = 0.0;
        let mut recall_multi = 0.0;
        for _ in 0..query_count {
            let img = &corpus[pick.random_range(0..corpus.len())].1;
            let single = index.query(img, K, SearchMode::SinglePath, false)?;
            let multi = index.query(img, K, SearchMode::MultiPath, false)?;
            let linear = index.linear_scan(img, K)?;

            single_evals += single.emd_evaluations + single.candidate_count as u64;
            multi_evals += multi.emd_evaluations + multi.candidate_count as u64;
            linear_evals += linear.emd_evaluations;
            max_single_evaluations = max_single_evaluations.max(single.emd_evaluations);
            single_ms += single.wall_ms;
            recall_single += recall_against(&linear, &single);
            recall_multi += recall_against(&linear, &multi);
        }

        let q = query_count as f64;
        let row = BenchRow {
            size,
            build_emd_comparisons,
            build_ms,
            query_emd_comparisons_single: single_evals as f64 / q,
            query_emd_comparisons_multi: multi_evals as f64 / q,
            query_emd_comparisons_linear: linear_evals as f64 / q,
            query_ms_each: single_ms / q,
            recall_at_10_vs_linear: recall_single / q,
            recall_at_10_multi: recall_multi / q,
            height: index.tree().height(),
            max_single_evaluations,
        };
        log::info!(
            "bench size {size}: height {}, single {:.1} / multi {:.1} / linear {:.0} comparisons, recall {:.3}/{:.3}",
            row.height,
            row.query_emd_comparisons_single,
            row.query_emd_comparisons_multi,
            row.query_emd_comparisons_linear,
            row.recall_at_10_vs_linear,
            row.recall_at_10_multi,
        );
        rows.push(row);
    }
    Ok(BenchReport { rows })
}
