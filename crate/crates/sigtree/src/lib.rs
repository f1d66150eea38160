//! Color-signature image retrieval: compact binary color signatures, exact
//! Earth Mover's Distance between them, and an EMD-guided tree index with a
//! linear-scan baseline.

pub mod bench;
pub mod emd;
pub mod engine;
pub mod palette;
pub mod raster;
pub mod signature;
pub mod stree;

pub use bench::{bench, synthetic_corpus, BenchReport, BenchRow, BENCH_CSV_HEADER};
pub use emd::{cost_matrix, emd, emd_signatures, oracle_transport, solve_transport};
pub use emd::{CostMatrix, EmdError, FlowPlan};
pub use engine::{build_from_images, build_index, load_index, save_index};
pub use engine::{CorpusRecord, EngineError, Hit, Index, IndexConfig, QueryResult};
pub use palette::{default_palette, histogram, quantize_pixel};
pub use palette::{Histogram, Palette, PaletteColor, PaletteError};
pub use raster::{decode_image, RasterError, RawImage};
pub use signature::{Signature, SignatureError, WeightVector};
pub use stree::{STree, STreeError, SearchMode, SearchOutcome, SearchStats, TreeParams};
