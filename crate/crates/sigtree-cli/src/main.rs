//! Command-line surface for the retrieval engine: build an index from a
//! directory of images, query it, benchmark tree search against the linear
//! baseline, check index files, and inspect distances or the palette.
//!
//! Exit codes: 0 success, 1 usage error, 2 data error. `SIGTREE_LOG`
//! (error|info|debug) controls log verbosity on stderr.

use std::error::Error;
use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::error::ErrorKind;
use clap::{Parser, Subcommand, ValueEnum};

use sigtree::{
    bench, build_index, cost_matrix, default_palette, emd, load_index, save_index, IndexConfig,
    SearchMode, WeightVector,
};

#[derive(Parser)]
#[command(name = "sigtree", version, about = "Color-signature image retrieval")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Copy, Clone, ValueEnum)]
enum ModeArg {
    Single,
    Multi,
}

impl From<ModeArg> for SearchMode {
    fn from(mode: ModeArg) -> Self {
        match mode {
            ModeArg::Single => SearchMode::SinglePath,
            ModeArg::Multi => SearchMode::MultiPath,
        }
    }
}

fn parse_threshold(text: &str) -> Result<f64, String> {
    let v: f64 = text.parse().map_err(|e| format!("{e}"))?;
    if (0.0..1.0).contains(&v) {
        Ok(v)
    } else {
        Err(format!("{v} is outside [0, 1)"))
    }
}

#[derive(Subcommand)]
enum Command {
    /// Build an index file from a directory of png/jpeg/ppm images
    Index {
        /// Directory scanned (non-recursively) for images
        #[arg(long, value_name = "DIR")]
        input: PathBuf,
        /// Destination index file
        #[arg(long, value_name = "FILE")]
        out: PathBuf,
        /// Quantization levels per color block
        #[arg(long, default_value_t = 8, value_parser = clap::value_parser!(u16).range(1..=64))]
        bits_per_color: u16,
        /// Node capacity M
        #[arg(long, default_value_t = 6, value_parser = clap::value_parser!(u64).range(2..))]
        max_node: u64,
        /// Minimum entries per non-root node
        #[arg(long, default_value_t = 2, value_parser = clap::value_parser!(u64).range(1..))]
        min_node: u64,
        /// Histogram fraction below which a color is dropped
        #[arg(long, default_value_t = 0.0, value_parser = parse_threshold)]
        dominant_threshold: f64,
    },
    /// Rank indexed images by distance to a query image
    Query {
        /// Index file to search
        #[arg(long, value_name = "FILE")]
        index: PathBuf,
        /// Query image (png/jpeg/ppm)
        #[arg(long, value_name = "PATH")]
        image: PathBuf,
        /// Number of results
        #[arg(long, default_value_t = 10, value_parser = clap::value_parser!(u64).range(1..))]
        k: u64,
        /// Tree walk mode; defaults to the mode stored in the index
        #[arg(long, value_enum)]
        mode: Option<ModeArg>,
        /// Machine-readable output
        #[arg(long)]
        json: bool,
    },
    /// Benchmark tree search against linear scan on synthetic corpora
    Bench {
        /// Corpus sizes, ascending
        #[arg(long, value_delimiter = ',', value_name = "N,N,...")]
        sizes: Vec<usize>,
        /// Queries per corpus size
        #[arg(long, default_value_t = 50, value_parser = clap::value_parser!(u64).range(1..))]
        queries: u64,
        /// Destination CSV file
        #[arg(long, value_name = "FILE")]
        out: PathBuf,
        /// Corpus and query sampling seed
        #[arg(long, default_value_t = 42)]
        seed: u64,
    },
    /// Check the structural invariants of an index file
    Validate {
        /// Index file to check
        #[arg(long, value_name = "FILE")]
        index: PathBuf,
    },
    /// Distance between two comma-separated weight vectors (debug aid)
    Emd {
        /// First vector, one weight per palette color
        #[arg(long, value_name = "CSV")]
        hist_a: String,
        /// Second vector, one weight per palette color
        #[arg(long, value_name = "CSV")]
        hist_b: String,
    },
    /// Show the color palette
    Palette {
        /// Emit the palette as CSV instead of a table
        #[arg(long)]
        dump: bool,
    },
}

fn main() -> ExitCode {
    let filter = std::env::var("SIGTREE_LOG").unwrap_or_else(|_| "error".into());
    env_logger::Builder::new().parse_filters(&filter).format_timestamp(None).init();

    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(err) => {
            let usage_ok = matches!(err.kind(), ErrorKind::DisplayHelp | ErrorKind::DisplayVersion);
            let _ = err.print();
            return ExitCode::from(if usage_ok { 0 } else { 1 });
        }
    };
    match run(cli.command) {
        Ok(()) => ExitCode::SUCCESS,
        Err(err) => {
            eprintln!("error: {err}");
            ExitCode::from(2)
        }
    }
}

fn run(command: Command) -> Result<(), Box<dyn Error>> {
    match command {
        Command::Index { input, out, bits_per_color, max_node, min_node, dominant_threshold } => {
            let config = IndexConfig {
                bits_per_block: bits_per_color,
                max_entries: max_node as usize,
                min_entries: min_node as usize,
                dominant_threshold,
                ..IndexConfig::default()
            };
            let paths = collect_images(&input)?;
            if paths.is_empty() {
                return Err(format!("no png/jpeg/ppm images in {}", input.display()).into());
            }
            let index = build_index(&paths, &config)?;
            save_index(&index, &out)?;
            println!(
                "indexed {} images into {} (tree height {})",
                index.len(),
                out.display(),
                index.tree().height()
            );
            Ok(())
        }
        Command::Query { index, image, k, mode, json } => {
            let index = load_index(&index)?;
            let img = sigtree::decode_image(&image)?;
            let mode = mode.map(SearchMode::from).unwrap_or(index.config().mode);
            let result = index.query(&img, k as usize, mode, false)?;
            log::info!(
                "{} mode: {} tree EMD evaluations, {} candidates re-ranked",
                mode.as_str(),
                result.emd_evaluations,
                result.candidate_count
            );
            if json {
                let rows: Vec<serde_json::Value> = result
                    .hits
                    .iter()
                    .enumerate()
                    .map(|(i, h)| {
                        serde_json::json!({
                            "oid": h.oid,
                            "path": h.path,
                            "distance": h.distance,
                            "rank": i + 1,
                        })
                    })
                    .collect();
                println!("{}", serde_json::Value::Array(rows));
            } else {
                println!("{:>4}  {:>10}  {:>12}  path", "rank", "oid", "distance");
                for (i, h) in result.hits.iter().enumerate() {
                    println!("{:>4}  {:>10}  {:>12.6}  {}", i + 1, h.oid, h.distance, h.path);
                }
            }
            Ok(())
        }
        Command::Bench { sizes, queries, out, seed } => {
            let config = IndexConfig { seed, ..IndexConfig::default() };
            let report = bench(&sizes, queries as usize, &config)?;
            fs::write(&out, report.to_csv())?;
            println!("wrote {} ({} rows)", out.display(), report.rows.len());
            Ok(())
        }
        Command::Validate { index } => {
            let index = load_index(&index)?;
            let violations = index.validate();
            if violations.is_empty() {
                println!("OK, 0 violations");
                Ok(())
            } else {
                for v in &violations {
                    eprintln!("violation: {v}");
                }
                Err(format!("{} violations", violations.len()).into())
            }
        }
        Command::Emd { hist_a, hist_b } => {
            let palette = default_palette();
            let a = parse_weights(&hist_a, palette.len())?;
            let b = parse_weights(&hist_b, palette.len())?;
            let cost = cost_matrix(&palette);
            let d = emd(&WeightVector::new(a), &WeightVector::new(b), &cost)?;
            println!("{d:.6}");
            Ok(())
        }
        Command::Palette { dump } => {
            let palette = default_palette();
            if dump {
                print!("{}", palette.to_csv_string());
            } else {
                println!("{:>3}  {:<12} {:>4} {:>6} {:>5}", "bin", "name", "red", "green", "blue");
                for (i, c) in palette.colors().iter().enumerate() {
                    println!(
                        "{:>3}  {:<12} {:>4} {:>6} {:>5}",
                        i, c.name, c.rgb[0], c.rgb[1], c.rgb[2]
                    );
                }
            }
            Ok(())
        }
    }
}

/// Non-recursive listing of the supported image files in `dir`, sorted so
/// oid assignment is stable across runs.
fn collect_images(dir: &Path) -> Result<Vec<PathBuf>, Box<dyn Error>> {
    let mut paths = Vec::new();
    for entry in fs::read_dir(dir)? {
        let path = entry?.path();
        if !path.is_file() {
            continue;
        }
        let ext = path.extension().and_then(|e| e.to_str()).map(str::to_ascii_lowercase);
        if matches!(ext.as_deref(), Some("png" | "jpg" | "jpeg" | "ppm")) {
            paths.push(path);
        }
    }
    paths.sort();
    Ok(paths)
}

fn parse_weights(text: &str, expected: usize) -> Result<Vec<f64>, Box<dyn Error>> {
    let weights: Vec<f64> = text
        .split(',')
        .map(|t| t.trim().parse::<f64>().map_err(|e| format!("weight {t:?}: {e}")))
        .collect::<Result<_, _>>()?;
    if weights.len() != expected {
        return Err(format!("expected {expected} weights, got {}", weights.len()).into());
    }
    if let Some(w) = weights.iter().find(|w| **w < 0.0) {
        return Err(format!("negative weight {w}").into());
    }
    Ok(weights)
}
