//! End-to-end retrieval pipelines: corpus indexing, tree-filtered querying
//! with exact EMD re-ranking, a linear-scan baseline, and versioned index
//! persistence.

use std::fs;
use std::path::{Path, PathBuf};
use std::time::Instant;

use thiserror::Error;

use crate::emd::{cost_matrix, emd_signatures, CostMatrix};
use crate::palette::{default_palette, histogram, Histogram, Palette, PaletteError};
use crate::raster::{decode_image, RawImage};
use crate::signature::Signature;
use crate::stree::{STree, STreeError, SearchMode, TreeParams};

pub const INDEX_MAGIC: &[u8; 4] = b"STR1";
pub const INDEX_FORMAT_VERSION: u32 = 1;

#[derive(Debug, Error)]
pub enum EngineError {
    #[error("no valid images to index")]
    NoValidImages,
    #[error("index file not found: {0}")]
    IndexNotFound(String),
    #[error("corrupt index: {0}")]
    CorruptIndex(String),
    #[error("index file has format version {found}, this build reads version {expected}")]
    VersionMismatch { found: u32, expected: u32 },
    #[error("invalid argument: {0}")]
    InvalidArgument(String),
    #[error(transparent)]
    Palette(#[from] PaletteError),
    #[error(transparent)]
    Tree(#[from] STreeError),
    #[error("io error: {0}")]
    Io(#[from] std::io::Error),
}

/// Everything that shapes an index: the color palette, signature and node
/// geometry, the dominant-color threshold applied to histograms, the
/// default search mode, and the seed used for synthetic corpora.
#[derive(Debug, Clone)]
pub struct IndexConfig {
    pub palette: Palette,
    pub bits_per_block: u16,
    pub max_entries: usize,
    pub min_entries: usize,
    pub dominant_threshold: f64,
    pub mode: SearchMode,
    pub seed: u64,
}

impl Default for IndexConfig {
    fn default() -> Self {
        Self {
            palette: default_palette(),
            bits_per_block: 8,
            max_entries: 6,
            min_entries: 2,
            dominant_threshold: 0.0,
            mode: SearchMode::SinglePath,
            seed: 42,
        }
    }
}

/// One indexed image. The histogram is kept only for indexes built in this
/// process; loading an index restores paths and signatures but not raw
/// histograms, which the file format does not store.
#[derive(Debug, Clone)]
pub struct CorpusRecord {
    pub oid: u64,
    pub path: String,
    pub histogram: Option<Histogram>,
    pub signature: Signature,
}

#[derive(Debug, Clone)]
pub struct Hit {
    pub oid: u64,
    pub distance: f64,
    pub path: String,
}

/// Ranked answer to one query. `emd_evaluations` counts distances spent
/// steering the tree walk; the exact re-ranking pass costs one more EMD per
/// candidate and is visible through `candidate_count`.
#[derive(Debug, Clone)]
pub struct QueryResult {
    pub hits: Vec<Hit>,
    pub candidate_count: usize,
    pub emd_evaluations: u64,
    pub coverage_tests: u64,
    pub wall_ms: f64,
}

#[derive(Debug)]
pub struct Index {
    config: IndexConfig,
    cost: CostMatrix,
    tree: STree,
    records: Vec<CorpusRecord>,
}

impl Index {
    pub fn config(&self) -> &IndexConfig {
        &self.config
    }

    pub fn tree(&self) -> &STree {
        &self.tree
    }

    pub fn records(&self) -> &[CorpusRecord] {
        &self.records
    }

    pub fn len(&self) -> usize {
        self.records.len()
    }

    pub fn is_empty(&self) -> bool {
        self.records.is_empty()
    }

    /// Structural diagnostics; empty means healthy.
    pub fn validate(&self) -> Vec<String> {
        let mut v = self.tree.validate();
        if self.tree.len() != self.records.len() {
            v.push(format!(
                "tree stores {} images but the path table lists {}",
                self.tree.len(),
                self.records.len()
            ));
        }
        v
    }

    fn encode_query(&self, image: &RawImage) -> Result<Signature, EngineError> {
        let h = histogram(image, &self.config.palette, self.config.dominant_threshold)?;
        let sig = Signature::encode(&h, self.config.bits_per_block);
        log::debug!("query signature {}", sig.to_hex());
        Ok(sig)
    }

    fn rank(&self, query: &Signature, candidates: &[(Signature, u64)], k: usize) -> Vec<Hit> {
        let mut hits: Vec<Hit> = candidates
            .iter()
            .map(|(sig, oid)| Hit {
                oid: *oid,
                distance: emd_signatures(query, sig, &self.cost).unwrap_or(0.0),
                path: self.records[*oid as usize].path.clone(),
            })
            .collect();
        hits.sort_by(|a, b| a.distance.total_cmp(&b.distance).then(a.oid.cmp(&b.oid)));
        hits.truncate(k);
        hits
    }

    /// Tree-filtered search: encodes the image, walks the tree in the given
    /// mode, then re-ranks every candidate by exact EMD and returns the
    /// top k ascending, ties broken by ascending oid.
    pub fn query(
        &self,
        image: &RawImage,
        k: usize,
        mode: SearchMode,
        strict_coverage: bool,
    ) -> Result<QueryResult, EngineError> {
        if k == 0 {
            return Err(EngineError::InvalidArgument("k must be at least 1".into()));
        }
        let t0 = Instant::now();
        let sig = self.encode_query(image)?;
        let out = self.tree.search(&sig, mode, strict_coverage)?;
        let hits = self.rank(&sig, &out.hits, k);
        Ok(QueryResult {
            hits,
            candidate_count: out.hits.len(),
            emd_evaluations: out.stats.emd_evaluations,
            coverage_tests: out.stats.coverage_tests,
            wall_ms: t0.elapsed().as_secs_f64() * 1e3,
        })
    }

    /// Ground-truth baseline: exact EMD against every stored signature, so
    /// the evaluation count always equals the corpus size.
    pub fn linear_scan(&self, image: &RawImage, k: usize) -> Result<QueryResult, EngineError> {
        if k == 0 {
            return Err(EngineError::InvalidArgument("k must be at least 1".into()));
        }
        let t0 = Instant::now();
        let sig = self.encode_query(image)?;
        let all: Vec<(Signature, u64)> = self
            .records
            .iter()
            .map(|r| (r.signature.clone(), r.oid))
            .collect();
        let hits = self.rank(&sig, &all, k);
        Ok(QueryResult {
            hits,
            candidate_count: self.records.len(),
            emd_evaluations: self.records.len() as u64,
            coverage_tests: 0,
            wall_ms: t0.elapsed().as_secs_f64() * 1e3,
        })
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let mut buf = Vec::new();
        buf.extend_from_slice(INDEX_MAGIC);
        put_u32(&mut buf, INDEX_FORMAT_VERSION);

        put_u16(&mut buf, self.config.bits_per_block);
        put_u16(&mut buf, self.config.max_entries as u16);
        put_u16(&mut buf, self.config.min_entries as u16);
        put_f64(&mut buf, self.config.dominant_threshold);
        buf.push(self.config.mode.code());
        put_u64(&mut buf, self.config.seed);

        let palette = &self.config.palette;
        put_u16(&mut buf, palette.len() as u16);
        for c in palette.colors() {
            put_u16(&mut buf, c.name.len() as u16);
            buf.extend_from_slice(c.name.as_bytes());
            buf.extend_from_slice(&c.rgb);
        }

        put_u64(&mut buf, self.records.len() as u64);
        for r in &self.records {
            put_u32(&mut buf, r.path.len() as u32);
            buf.extend_from_slice(r.path.as_bytes());
        }

        let blob = self.tree.to_blob();
        put_u64(&mut buf, blob.len() as u64);
        buf.extend_from_slice(&blob);

        let crc = crc32fast::hash(&buf);
        put_u32(&mut buf, crc);
        buf
    }
}

fn put_u16(buf: &mut Vec<u8>, v: u16) {
    buf.extend_from_slice(&v.to_le_bytes());
}

fn put_u32(buf: &mut Vec<u8>, v: u32) {
    buf.extend_from_slice(&v.to_le_bytes());
}

fn put_u64(buf: &mut Vec<u8>, v: u64) {
    buf.extend_from_slice(&v.to_le_bytes());
}

fn put_f64(buf: &mut Vec<u8>, v: f64) {
    buf.extend_from_slice(&v.to_bits().to_le_bytes());
}

struct Reader<'a> {
    data: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8], EngineError> {
        if self.data.len() - self.pos < n {
            return Err(EngineError::CorruptIndex(format!(
                "truncated at byte {}",
                self.pos
            )));
        }
        let s = &self.data[self.pos..self.pos + n];
        self.pos += n;
        Ok(s)
    }

    fn u8(&mut self) -> Result<u8, EngineError> {
        Ok(self.take(1)?[0])
    }

    fn u16(&mut self) -> Result<u16, EngineError> {
        Ok(u16::from_le_bytes(self.take(2)?.try_into().unwrap()))
    }

    fn u32(&mut self) -> Result<u32, EngineError> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().unwrap()))
    }

    fn u64(&mut self) -> Result<u64, EngineError> {
        Ok(u64::from_le_bytes(self.take(8)?.try_into().unwrap()))
    }

    fn f64(&mut self) -> Result<f64, EngineError> {
        Ok(f64::from_bits(u64::from_le_bytes(self.take(8)?.try_into().unwrap())))
    }

    fn string(&mut self, len: usize) -> Result<String, EngineError> {
        let at = self.pos;
        String::from_utf8(self.take(len)?.to_vec())
            .map_err(|_| EngineError::CorruptIndex(format!("invalid utf-8 string at byte {at}")))
    }

    fn done(&self) -> bool {
        self.pos == self.data.len()
    }
}

/// Builds an index over already-decoded images. Names are sorted first and
/// oids assigned sequentially in that order, so the same inputs always
/// produce the same index bytes. Images whose histogram cannot be computed
/// are logged and skipped.
pub fn build_from_images(
    images: &[(String, RawImage)],
    config: &IndexConfig,
) -> Result<Index, EngineError> {
    let palette = &config.palette;
    if palette.len() > u16::MAX as usize {
        return Err(EngineError::InvalidArgument(format!(
            "palette of {} colors exceeds the indexable maximum",
            palette.len()
        )));
    }
    if config.max_entries > u16::MAX as usize || config.min_entries > u16::MAX as usize {
        return Err(EngineError::InvalidArgument(
            "node occupancy parameters exceed the persistable maximum".into(),
        ));
    }
    let params = TreeParams {
        max_entries: config.max_entries,
        min_entries: config.min_entries,
        bins: palette.len() as u16,
        bits_per_block: config.bits_per_block,
    };
    let mut tree = STree::new(params, cost_matrix(palette))?;

    let mut order: Vec<usize> = (0..images.len()).collect();
    order.sort_by(|&a, &b| images[a].0.cmp(&images[b].0));

    let mut records = Vec::new();
    for &i in &order {
        let (name, img) = &images[i];
        match histogram(img, palette, config.dominant_threshold) {
            Ok(h) => {
                let sig = Signature::encode(&h, config.bits_per_block);
                let oid = records.len() as u64;
                tree.insert(sig.clone(), oid)?;
                records.push(CorpusRecord {
                    oid,
                    path: name.clone(),
                    histogram: Some(h),
                    signature: sig,
                });
            }
            Err(e) => log::warn!("skipping {name}: {e}"),
        }
    }
    if records.is_empty() {
        return Err(EngineError::NoValidImages);
    }
    log::info!(
        "indexed {} images, height {}, {} EMD evaluations during build",
        records.len(),
        tree.height(),
        tree.emd_evaluations()
    );
    Ok(Index { config: config.clone(), cost: cost_matrix(palette), tree, records })
}

/// Decodes the given files and indexes them. Undecodable files are logged
/// and skipped; failing every file is an error.
pub fn build_index(paths: &[PathBuf], config: &IndexConfig) -> Result<Index, EngineError> {
    let mut named = Vec::with_capacity(paths.len());
    for p in paths {
        match decode_image(p) {
            Ok(img) => named.push((p.to_string_lossy().into_owned(), img)),
            Err(e) => log::warn!("skipping {}: {e}", p.display()),
        }
    }
    build_from_images(&named, config)
}

pub fn save_index(index: &Index, path: &Path) -> Result<(), EngineError> {
    fs::write(path, index.to_bytes())?;
    Ok(())
}

pub fn load_index(path: &Path) -> Result<Index, EngineError> {
    let bytes = match fs::read(path) {
        Err(e) if e.kind() == std::io::ErrorKind::NotFound => {
            return Err(EngineError::IndexNotFound(path.display().to_string()))
        }
        r => r?,
    };
    index_from_bytes(&bytes)
}

pub fn index_from_bytes(bytes: &[u8]) -> Result<Index, EngineError> {
    if bytes.len() < 4 || &bytes[..4] != INDEX_MAGIC {
        return Err(EngineError::CorruptIndex("bad magic".into()));
    }
    if bytes.len() < 12 {
        return Err(EngineError::CorruptIndex("file shorter than its framing".into()));
    }
    let stored_crc = u32::from_le_bytes(bytes[bytes.len() - 4..].try_into().unwrap());
    if crc32fast::hash(&bytes[..bytes.len() - 4]) != stored_crc {
        return Err(EngineError::CorruptIndex("checksum mismatch".into()));
    }

    let mut r = Reader { data: &bytes[..bytes.len() - 4], pos: 4 };
    let version = r.u32()?;
    if version != INDEX_FORMAT_VERSION {
        return Err(EngineError::VersionMismatch {
            found: version,
            expected: INDEX_FORMAT_VERSION,
        });
    }

    let bits_per_block = r.u16()?;
    let max_entries = r.u16()? as usize;
    let min_entries = r.u16()? as usize;
    let dominant_threshold = r.f64()?;
    if !(0.0..1.0).contains(&dominant_threshold) {
        return Err(EngineError::CorruptIndex(format!(
            "dominant threshold {dominant_threshold} outside [0, 1)"
        )));
    }
    let mode = SearchMode::from_code(r.u8()?)
        .ok_or_else(|| EngineError::CorruptIndex("unknown search mode".into()))?;
    let seed = r.u64()?;

    let color_count = r.u16()? as usize;
    let mut colors = Vec::with_capacity(color_count);
    for _ in 0..color_count {
        let name_len = r.u16()? as usize;
        let name = r.string(name_len)?;
        let rgb = r.take(3)?;
        colors.push(crate::palette::PaletteColor { name, rgb: [rgb[0], rgb[1], rgb[2]] });
    }
    let palette =
        Palette::new(colors).map_err(|e| EngineError::CorruptIndex(e.to_string()))?;

    let path_count = r.u64()? as usize;
    if path_count > r.data.len() {
        return Err(EngineError::CorruptIndex(format!(
            "path table claims {path_count} entries"
        )));
    }
    let mut paths = Vec::with_capacity(path_count);
    for _ in 0..path_count {
        let len = r.u32()? as usize;
        paths.push(r.string(len)?);
    }

    let blob_len = r.u64()? as usize;
    let blob = r.take(blob_len)?;
    let params = TreeParams {
        max_entries,
        min_entries,
        bins: palette.len() as u16,
        bits_per_block,
    };
    let tree = STree::from_blob(params, cost_matrix(&palette), blob).map_err(|e| match e {
        STreeError::Blob(msg) => EngineError::CorruptIndex(msg),
        other => EngineError::Tree(other),
    })?;
    if !r.done() {
        return Err(EngineError::CorruptIndex("trailing bytes after the tree".into()));
    }
    if tree.len() != path_count {
        return Err(EngineError::CorruptIndex(format!(
            "tree stores {} images but the path table lists {path_count}",
            tree.len()
        )));
    }

    let mut signatures: Vec<Option<Signature>> = vec![None; path_count];
    for (sig, oid) in tree.leaf_entries() {
        let slot = signatures
            .get_mut(oid as usize)
            .ok_or_else(|| EngineError::CorruptIndex(format!("oid {oid} out of range")))?;
        *slot = Some(sig);
    }
    let records = paths
        .into_iter()
        .enumerate()
        .map(|(i, path)| {
            let signature = signatures[i]
                .take()
                .ok_or_else(|| EngineError::CorruptIndex(format!("no leaf entry for oid {i}")))?;
            Ok(CorpusRecord { oid: i as u64, path, histogram: None, signature })
        })
        .collect::<Result<Vec<_>, EngineError>>()?;

    let config = IndexConfig {
        palette: palette.clone(),
        bits_per_block,
        max_entries,
        min_entries,
        dominant_threshold,
        mode,
        seed,
    };
    Ok(Index { config, cost: cost_matrix(&palette), tree, records })
}
