//! Fixed reference palettes and normalized color histograms.
//!
//! Every image is reduced to a histogram over an ordered list of reference
//! colors. The bin index of a color is its line position in the palette
//! file, and that ordering is what ties histograms, signatures, and the
//! ground-distance matrix together, so it must never change once an index
//! has been built.

use std::fmt;
use std::path::Path;

use thiserror::Error;

use crate::raster::RawImage;

/// Contents of the versioned default palette file (`name,R,G,B` per line).
const DEFAULT_PALETTE_CSV: &str = include_str!("../data/default_palette_v1.csv");

#[derive(Debug, Error)]
pub enum PaletteError {
    #[error("image has no pixels")]
    EmptyImage,
    #[error("palette needs at least 2 colors, got {0}")]
    TooFewColors(usize),
    #[error("palette colors {0} and {1} share the same RGB value")]
    DuplicateColor(usize, usize),
    #[error("palette line {line}: {reason}")]
    Parse { line: usize, reason: String },
    #[error("histogram has {got} bins, expected {expected}")]
    BinCountMismatch { got: usize, expected: usize },
    #[error("histogram values must be non-negative fractions summing to 1 (sum = {0})")]
    NotNormalized(f64),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

/// One named reference color.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct PaletteColor {
    pub name: String,
    pub rgb: [u8; 3],
}

/// An ordered list of reference colors. Bin index = list position.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Palette {
    colors: Vec<PaletteColor>,
}

impl Palette {
    /// Builds a palette, rejecting lists that are too short or contain
    /// duplicate RGB triples.
    pub fn new(colors: Vec<PaletteColor>) -> Result<Self, PaletteError> {
        if colors.len() < 2 {
            return Err(PaletteError::TooFewColors(colors.len()));
        }
        for i in 0..colors.len() {
            for j in i + 1..colors.len() {
                if colors[i].rgb == colors[j].rgb {
                    return Err(PaletteError::DuplicateColor(i, j));
                }
            }
        }
        Ok(Self { colors })
    }

    /// Parses the palette file format: one `name,R,G,B` line per color,
    /// UTF-8, bin index = line order. Blank lines are ignored.
    pub fn from_csv_str(text: &str) -> Result<Self, PaletteError> {
        let mut colors = Vec::new();
        for (lineno, raw) in text.lines().enumerate() {
            let line = raw.trim();
            if line.is_empty() {
                continue;
            }
            let parse = |line: usize, reason: &str| PaletteError::Parse {
                line,
                reason: reason.to_string(),
            };
            let mut parts = line.rsplitn(4, ',');
            let b = parts.next().ok_or_else(|| parse(lineno + 1, "missing B"))?;
            let g = parts.next().ok_or_else(|| parse(lineno + 1, "missing G"))?;
            let r = parts.next().ok_or_else(|| parse(lineno + 1, "missing R"))?;
            let name = parts.next().ok_or_else(|| parse(lineno + 1, "missing name"))?;
            if name.is_empty() {
                return Err(parse(lineno + 1, "empty color name"));
            }
            let channel = |s: &str| -> Result<u8, PaletteError> {
                s.trim()
                    .parse::<u8>()
                    .map_err(|e| parse(lineno + 1, &format!("bad channel {s:?}: {e}")))
            };
            colors.push(PaletteColor {
                name: name.to_string(),
                rgb: [channel(r)?, channel(g)?, channel(b)?],
            });
        }
        Self::new(colors)
    }

    pub fn from_csv_file(path: &Path) -> Result<Self, PaletteError> {
        Self::from_csv_str(&std::fs::read_to_string(path)?)
    }

    /// Renders the palette back into the `name,R,G,B` file format.
    pub fn to_csv_string(&self) -> String {
        let mut out = String::new();
        for c in &self.colors {
            out.push_str(&format!("{},{},{},{}\n", c.name, c.rgb[0], c.rgb[1], c.rgb[2]));
        }
        out
    }

    pub fn len(&self) -> usize {
        self.colors.len()
    }

    pub fn is_empty(&self) -> bool {
        self.colors.is_empty()
    }

    pub fn colors(&self) -> &[PaletteColor] {
        &self.colors
    }

    pub fn color(&self, bin: usize) -> &PaletteColor {
        &self.colors[bin]
    }
}

/// The 16-color default palette.
///
/// Fifteen of the names come from a conventional HSV-derived color range
/// (BLACK through RASPBERRY); GREEN fills the sixteenth slot. The RGB
/// coordinates are fixed constants from `data/default_palette_v1.csv` and
/// are part of the on-disk index contract.
pub fn default_palette() -> Palette {
    Palette::from_csv_str(DEFAULT_PALETTE_CSV).expect("bundled palette file is valid")
}

/// Normalized per-bin pixel fractions of one image. Values are in `[0, 1]`
/// and sum to 1 for any non-empty image.
#[derive(Debug, Clone, PartialEq)]
pub struct Histogram {
    values: Vec<f64>,
}

impl Histogram {
    /// Wraps raw fractions, requiring non-negative values that sum to 1
    /// within 1e-9.
    pub fn new(values: Vec<f64>) -> Result<Self, PaletteError> {
        let sum: f64 = values.iter().sum();
        if values.iter().any(|&v| v < 0.0) || (sum - 1.0).abs() > 1e-9 {
            return Err(PaletteError::NotNormalized(sum));
        }
        Ok(Self { values })
    }

    /// Normalizes arbitrary non-negative weights into a histogram.
    pub fn from_weights(weights: &[f64]) -> Result<Self, PaletteError> {
        let sum: f64 = weights.iter().sum();
        if weights.iter().any(|&v| v < 0.0) || sum <= 0.0 {
            return Err(PaletteError::NotNormalized(sum));
        }
        Ok(Self {
            values: weights.iter().map(|v| v / sum).collect(),
        })
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }
}

impl fmt::Display for Histogram {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let parts: Vec<String> = self.values.iter().map(|v| format!("{v:.6}")).collect();
        write!(f, "[{}]", parts.join(", "))
    }
}

/// Index of the palette color nearest to `pixel` by Euclidean distance in
/// RGB space. Ties break toward the lowest bin index, so the assignment is
/// deterministic for byte-identical indexes.
pub fn quantize_pixel(pixel: [u8; 3], palette: &Palette) -> usize {
    let mut best = 0usize;
    let mut best_d = u32::MAX;
    for (i, c) in palette.colors.iter().enumerate() {
        let d = sq_dist(pixel, c.rgb);
        if d < best_d {
            best_d = d;
            best = i;
        }
    }
    best
}

fn sq_dist(a: [u8; 3], b: [u8; 3]) -> u32 {
    let dr = a[0] as i32 - b[0] as i32;
    let dg = a[1] as i32 - b[1] as i32;
    let db = a[2] as i32 - b[2] as i32;
    (dr * dr + dg * dg + db * db) as u32
}

/// Computes the normalized color histogram of an image.
///
/// Pixels are counted per nearest palette bin; every bin whose raw fraction
/// falls below `dominant_threshold` is zeroed (the dominant-color
/// retention), and the surviving bins are renormalized to sum to 1. If the
/// threshold would zero every bin, it falls back to threshold 0 so a
/// non-empty image always yields a valid histogram.
pub fn histogram(
    image: &RawImage,
    palette: &Palette,
    dominant_threshold: f64,
) -> Result<Histogram, PaletteError> {
    debug_assert!((0.0..1.0).contains(&dominant_threshold));
    let total = image.pixel_count();
    if total == 0 {
        return Err(PaletteError::EmptyImage);
    }

    let mut counts = vec![0u64; palette.len()];
    for &px in image.pixels() {
        counts[quantize_pixel(px, palette)] += 1;
    }

    let raw: Vec<f64> = counts.iter().map(|&c| c as f64 / total as f64).collect();
    let mut kept: Vec<f64> = raw
        .iter()
        .map(|&f| if f < dominant_threshold { 0.0 } else { f })
        .collect();
    if kept.iter().sum::<f64>() <= 0.0 {
        // Threshold wiped everything; keep all nonzero bins instead.
        kept = raw;
    }
    let sum: f64 = kept.iter().sum();
    Ok(Histogram {
        values: kept.into_iter().map(|f| f / sum).collect(),
    })
}
