//! Region-grid geometry, the on-disk feature format, and a synthetic feature
//! generator used by the toy task in place of a CNN.
//!
//! An image split into `g x g` grids, scanned with `m x m`-grid regions at
//! stride `s` grids, yields `n x n` regions with `n = floor((g - m)/s) + 1`.
//! Regions are ordered row-major; that fixed scan order is what the
//! bidirectional encoder consumes.

use std::io::{Read, Write};
use std::path::Path;

use crate::error::{Error, Result};
use crate::rng::RngState;
use crate::tensor::Tensor;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct RegionGrid {
    g: usize,
    m: usize,
    s: usize,
    n: usize,
}

impl RegionGrid {
    pub fn new(g: usize, m: usize, s: usize) -> Result<Self> {
        if m < 1 || m > g {
            return Err(Error::argument(format!(
                "region size m={m} must satisfy 1 <= m <= g={g}"
            )));
        }
        if s < 1 {
            return Err(Error::argument("stride s must be >= 1"));
        }
        Ok(RegionGrid {
            g,
            m,
            s,
            n: (g - m) / s + 1,
        })
    }

    pub fn grids_per_side(&self) -> usize {
        self.g
    }

    pub fn region_size(&self) -> usize {
        self.m
    }

    pub fn stride(&self) -> usize {
        self.s
    }

    /// Regions per side.
    pub fn regions_per_side(&self) -> usize {
        self.n
    }

    /// Total region count `n^2`.
    pub fn region_total(&self) -> usize {
        self.n * self.n
    }
}

/// `n = floor((g - m)/s) + 1`.
pub fn region_count(g: usize, m: usize, s: usize) -> Result<usize> {
    Ok(RegionGrid::new(g, m, s)?.regions_per_side())
}

/// Pixel rectangle `(x0, y0, x1, y1)` of a row-major region index on an image
/// of `image_side` pixels. Used for visualization overlays only.
pub fn region_bounds(
    grid: &RegionGrid,
    index: usize,
    image_side: usize,
) -> Result<(usize, usize, usize, usize)> {
    if index >= grid.region_total() {
        return Err(Error::argument(format!(
            "region index {index} out of range for {} regions",
            grid.region_total()
        )));
    }
    if !image_side.is_multiple_of(grid.g) {
        return Err(Error::argument(format!(
            "image side {image_side} not divisible by g={}",
            grid.g
        )));
    }
    let cell = image_side / grid.g;
    let row = index / grid.n;
    let col = index % grid.n;
    let x0 = col * grid.s * cell;
    let y0 = row * grid.s * cell;
    Ok((x0, y0, x0 + grid.m * cell, y0 + grid.m * cell))
}

/// `n^2 x d` block of region features for one image, rows in row-major
/// region order.
#[derive(Debug, Clone)]
pub struct RegionFeatureBlock {
    pub grid: RegionGrid,
    pub feature_dim: usize,
    pub features: Tensor,
}

impl RegionFeatureBlock {
    pub fn new(grid: RegionGrid, feature_dim: usize, features: Tensor) -> Result<Self> {
        if features.rank() != 2
            || features.rows() != grid.region_total()
            || features.cols() != feature_dim
        {
            return Err(Error::argument(format!(
                "feature block must be [{} x {feature_dim}], got {:?}",
                grid.region_total(),
                features.shape()
            )));
        }
        if !features.is_finite() {
            return Err(Error::argument("feature block contains non-finite values"));
        }
        Ok(RegionFeatureBlock {
            grid,
            feature_dim,
            features,
        })
    }

    /// L2-normalize each region row in place (skips zero rows).
    pub fn l2_normalize(&mut self) {
        let (rows, cols) = (self.features.rows(), self.features.cols());
        let data = self.features.data_mut();
        for i in 0..rows {
            let row = &mut data[i * cols..(i + 1) * cols];
            let norm = row.iter().map(|v| v * v).sum::<f64>().sqrt();
            if norm > 0.0 {
                for v in row.iter_mut() {
                    *v /= norm;
                }
            }
        }
    }
}

// ---------------------------------------------------------------------------
// Feature file format
//
// magic "SALATTF1" (8 bytes)
// g, m, s, d_I, count: u32 LE each
// payload: count * n^2 * d_I f32 LE values, image-major, region-row-major,
// feature-minor. Values are widened to f64 in memory.
// ---------------------------------------------------------------------------

const FEATURE_MAGIC: &[u8; 8] = b"SALATTF1";

pub fn write_features(path: &Path, blocks: &[RegionFeatureBlock]) -> Result<()> {
    let (grid, d) = match blocks.first() {
        Some(b) => (b.grid, b.feature_dim),
        None => {
            return Err(Error::argument(
                "write_features: need at least one block to fix the header dims",
            ))
        }
    };
    write_features_with_header(path, grid, d, blocks)
}

/// Write the file with an explicit header, allowing `count = 0`.
pub fn write_features_with_header(
    path: &Path,
    grid: RegionGrid,
    feature_dim: usize,
    blocks: &[RegionFeatureBlock],
) -> Result<()> {
    let mut buf: Vec<u8> = Vec::new();
    buf.extend_from_slice(FEATURE_MAGIC);
    for v in [
        grid.grids_per_side(),
        grid.region_size(),
        grid.stride(),
        feature_dim,
        blocks.len(),
    ] {
        buf.extend_from_slice(&(v as u32).to_le_bytes());
    }
    for block in blocks {
        if block.grid != grid || block.feature_dim != feature_dim {
            return Err(Error::argument(
                "write_features: blocks disagree on grid or feature dim",
            ));
        }
        for &v in block.features.data() {
            buf.extend_from_slice(&(v as f32).to_le_bytes());
        }
    }
    let mut file = std::fs::File::create(path)?;
    file.write_all(&buf)?;
    Ok(())
}

pub fn load_features(path: &Path) -> Result<Vec<RegionFeatureBlock>> {
    let mut bytes = Vec::new();
    std::fs::File::open(path)?.read_to_end(&mut bytes)?;
    if bytes.len() < 8 || &bytes[..8] != FEATURE_MAGIC {
        return Err(Error::format(0, "bad feature file magic"));
    }
    let mut pos = 8usize;
    let mut take_u32 = |what: &str| -> Result<u32> {
        if pos + 4 > bytes.len() {
            return Err(Error::format(pos as u64, format!("truncated {what}")));
        }
        let v = u32::from_le_bytes([bytes[pos], bytes[pos + 1], bytes[pos + 2], bytes[pos + 3]]);
        pos += 4;
        Ok(v)
    };
    let g = take_u32("g")? as usize;
    let m = take_u32("m")? as usize;
    let s = take_u32("s")? as usize;
    let d = take_u32("d_I")? as usize;
    let count = take_u32("count")? as usize;
    let header_end = pos;

    let grid = RegionGrid::new(g, m, s)
        .map_err(|e| Error::format(8, format!("inconsistent header: {e}")))?;
    if d == 0 {
        return Err(Error::format(20, "feature dim must be positive"));
    }
    let per_block = grid.region_total() * d;
    let expected = header_end + count * per_block * 4;
    if bytes.len() != expected {
        return Err(Error::format(
            bytes.len().min(expected) as u64,
            format!(
                "payload length disagrees with header: expected {expected} bytes, file has {}",
                bytes.len()
            ),
        ));
    }

    let mut blocks = Vec::with_capacity(count);
    let mut offset = header_end;
    for _ in 0..count {
        let mut data = Vec::with_capacity(per_block);
        for k in 0..per_block {
            let at = offset + k * 4;
            let v = f32::from_le_bytes([bytes[at], bytes[at + 1], bytes[at + 2], bytes[at + 3]]);
            if !v.is_finite() {
                return Err(Error::format(at as u64, format!("non-finite value {v}")));
            }
            data.push(v as f64);
        }
        offset += per_block * 4;
        let features = Tensor::new(vec![grid.region_total(), d], data)?;
        blocks.push(RegionFeatureBlock::new(grid, d, features)?);
    }
    Ok(blocks)
}

// ---------------------------------------------------------------------------
// Synthetic features
// ---------------------------------------------------------------------------

/// Parameters of the synthetic generator: a bank of `patterns` prototype
/// vectors in `feature_dim` dims, planted into one region with Gaussian noise
/// of scale `noise_sigma` everywhere.
#[derive(Debug, Clone)]
pub struct SynthSpec {
    pub grid: RegionGrid,
    pub feature_dim: usize,
    pub patterns: usize,
    pub noise_sigma: f64,
}

/// Prototype bank plus spec; prototypes are drawn once per seed so that every
/// sample from the same generator shares them.
#[derive(Debug, Clone)]
pub struct SynthGenerator {
    spec: SynthSpec,
    prototypes: Vec<Vec<f64>>,
}

impl SynthGenerator {
    pub fn new(spec: SynthSpec, seed: u64) -> Result<Self> {
        if spec.patterns < 1 {
            return Err(Error::argument("synth spec needs at least one pattern"));
        }
        if spec.feature_dim < 1 {
            return Err(Error::argument("synth spec needs a positive feature dim"));
        }
        let mut rng = RngState::seeded(seed).derive("synth.prototypes");
        // Independent standard normal entries; in these dimensions the
        // prototypes come out close to orthogonal.
        let prototypes = (0..spec.patterns)
            .map(|_| (0..spec.feature_dim).map(|_| rng.normal()).collect())
            .collect();
        Ok(SynthGenerator { spec, prototypes })
    }

    pub fn spec(&self) -> &SynthSpec {
        &self.spec
    }

    pub fn prototype(&self, pattern: usize) -> &[f64] {
        &self.prototypes[pattern]
    }

    /// Draw one block: a uniformly chosen region carries
    /// `prototype[pattern] + noise`, every other region carries noise only.
    /// Returns the block, the planted region index and the pattern id.
    pub fn sample(&self, rng: &mut RngState) -> (RegionFeatureBlock, usize, usize) {
        let regions = self.spec.grid.region_total();
        let d = self.spec.feature_dim;
        let pattern = rng.below(self.spec.patterns);
        let target = rng.below(regions);
        let mut data = Vec::with_capacity(regions * d);
        for region in 0..regions {
            for k in 0..d {
                let base = if region == target {
                    self.prototypes[pattern][k]
                } else {
                    0.0
                };
                let noise = if self.spec.noise_sigma > 0.0 {
                    self.spec.noise_sigma * rng.normal()
                } else {
                    0.0
                };
                data.push(base + noise);
            }
        }
        let features = Tensor::new(vec![regions, d], data).expect("shape fixed by construction");
        let block = RegionFeatureBlock::new(self.spec.grid, d, features)
            .expect("generator output is finite");
        (block, target, pattern)
    }
}
