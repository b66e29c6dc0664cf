//! Criteria proposal from stitched grids of raw images.

use std::path::{Path, PathBuf};

use image::imageops::FilterType;
use image::{Rgb, RgbImage};
use serde::{Deserialize, Serialize};

use super::{accumulate_criteria, shuffled_order, ProposerError, ProposerKind, ProposerRun};
use crate::ask::vision_parsed;
use crate::exec::{par_map, ItemFailure};
use crate::parse::parse_bulleted_list;
use crate::prompts;
use crate::backends::Backends;
use crate::types::Collection;

const BLANK: Rgb<u8> = Rgb([255, 255, 255]);

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GridOptions {
    pub seed: u64,
    /// Images per grid row and column.
    pub grid_side: usize,
    /// Edge length of one tile in pixels.
    pub tile_size: u32,
    pub criteria_per_grid: usize,
    pub max_tokens: u32,
    pub workers: usize,
    /// Largest tolerated fraction of unreadable images.
    pub failure_threshold: f64,
    /// Where composed grids are written.
    pub grid_dir: PathBuf,
}

impl Default for GridOptions {
    fn default() -> Self {
        Self {
            seed: 0,
            grid_side: 8,
            tile_size: 256,
            criteria_per_grid: 5,
            max_tokens: 1024,
            workers: 4,
            failure_threshold: 0.05,
            grid_dir: PathBuf::from("grids"),
        }
    }
}

/// Index ranges of consecutive grids holding `side * side` images each.
pub fn grid_chunks(n: usize, side: usize) -> Vec<std::ops::Range<usize>> {
    let per = (side * side).max(1);
    (0..n).step_by(per).map(|s| s..(s + per).min(n)).collect()
}

/// Row-major grid of `side × side` tiles; missing or unreadable images
/// become blank tiles and are returned as failures.
pub fn compose_grid(paths: &[&str], side: usize, tile: u32) -> (RgbImage, Vec<ItemFailure>) {
    let edge = side as u32 * tile;
    let mut grid = RgbImage::from_pixel(edge, edge, BLANK);
    let mut failures = Vec::new();
    for (i, path) in paths.iter().take(side * side).enumerate() {
        let local = path.strip_prefix("file://").unwrap_or(path);
        match image::open(local) {
            Ok(img) => {
                let t = img.resize_exact(tile, tile, FilterType::Triangle).to_rgb8();
                let (x, y) = ((i % side) as i64 * tile as i64, (i / side) as i64 * tile as i64);
                image::imageops::replace(&mut grid, &t, x, y);
            }
            Err(e) => failures.push(ItemFailure::new(*path, format!("unreadable image: {e}"))),
        }
    }
    (grid, failures)
}

fn save_grid(grid: &RgbImage, dir: &Path, index: usize) -> Result<PathBuf, ProposerError> {
    std::fs::create_dir_all(dir).map_err(|e| ProposerError::Image(format!("{}: {e}", dir.display())))?;
    let path = dir.join(format!("grid_{index:03}.png"));
    grid.save(&path).map_err(|e| ProposerError::Image(format!("{}: {e}", path.display())))?;
    Ok(path)
}

/// Shuffles the collection, stitches grids of local images and asks the
/// vision model for criteria per grid.
pub fn propose_from_image_grids(
    backends: &Backends,
    collection: &Collection,
    opts: &GridOptions,
) -> Result<ProposerRun, ProposerError> {
    if collection.is_empty() {
        return Err(ProposerError::EmptyInput("empty collection"));
    }
    let side = opts.grid_side.max(1);
    let order = shuffled_order(collection.len(), opts.seed);
    let records: Vec<_> = order.iter().map(|&i| &collection.records()[i]).collect();
    let chunks = grid_chunks(records.len(), side);

    let mut failures = Vec::new();
    let mut grid_paths = Vec::with_capacity(chunks.len());
    for (gi, r) in chunks.iter().enumerate() {
        let paths: Vec<&str> = records[r.clone()].iter().map(|rec| rec.source.as_str()).collect();
        let (grid, mut missing) = compose_grid(&paths, side, opts.tile_size);
        for f in &mut missing {
            if let Some(rec) = records[r.clone()].iter().find(|rec| rec.source == f.item) {
                f.item = rec.image_id.clone();
            }
        }
        failures.extend(missing);
        grid_paths.push(save_grid(&grid, &opts.grid_dir, gi)?);
    }
    let total = collection.len();
    if failures.len() == total || failures.len() as f64 > opts.failure_threshold * total as f64 {
        return Err(ProposerError::TooManyFailures { failed: failures.len(), total, threshold: opts.failure_threshold });
    }

    let prompt = prompts::image_grid_criteria(side, side, opts.criteria_per_grid);
    let results = par_map(&grid_paths, opts.workers, |_, p| {
        vision_parsed(backends, &p.to_string_lossy(), &prompt, opts.max_tokens, 1, parse_bulleted_list)
    });
    let mut subset_criteria = Vec::with_capacity(results.len());
    for (gi, res) in results.into_iter().enumerate() {
        let parsed = res?;
        match parsed.value {
            Ok(names) => subset_criteria.push(names),
            Err(e) => {
                failures.push(ItemFailure::new(format!("grid {gi}"), format!("unparseable after {} attempts: {e}", parsed.attempts)));
                subset_criteria.push(Vec::new());
            }
        }
    }
    let raw = accumulate_criteria(
        subset_criteria.iter().flatten().map(String::as_str),
        ProposerKind::Image.provenance(),
    )?;
    if raw.is_empty() {
        return Err(ProposerError::NoCriteria);
    }
    Ok(ProposerRun {
        kind: ProposerKind::Image,
        shuffle_seed: opts.seed,
        subset_size: side * side,
        subsets: chunks.iter().map(|r| records[r.clone()].iter().map(|rec| rec.image_id.clone()).collect()).collect(),
        subset_criteria,
        raw_criteria: raw,
        failures,
    })
}
