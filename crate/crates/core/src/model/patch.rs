use crate::error::{Error, Result};
use crate::tensor::Tensor;

use super::ModelConfig;

/// Non-overlapping tiling of an image into flattened patches, in reading
/// order. Each patch is flattened row-major over `(y, x, channel)`.
#[derive(Debug, Clone, PartialEq)]
pub struct PatchGrid {
    pub patches: Tensor,
    pub grid_rows: usize,
    pub grid_cols: usize,
}

fn check(image: &[f64], side: usize, channels: usize, patch: usize) -> Result<()> {
    if image.len() != side * side * channels {
        return Err(Error::Dimension(format!(
            "image of {} values does not match {side}x{side}x{channels}",
            image.len()
        )));
    }
    if patch == 0 || side % patch != 0 {
        return Err(Error::Dimension(format!("patch size {patch} does not tile side {side}")));
    }
    Ok(())
}

/// Splits a square `side × side × channels` row-major image into patches.
pub fn patchify_raw(image: &[f64], side: usize, channels: usize, patch: usize) -> Result<PatchGrid> {
    check(image, side, channels, patch)?;
    let g = side / patch;
    let width = patch * patch * channels;
    let mut data = Vec::with_capacity(image.len());
    for gr in 0..g {
        for gc in 0..g {
            for py in 0..patch {
                let y = gr * patch + py;
                let start = (y * side + gc * patch) * channels;
                data.extend_from_slice(&image[start..start + patch * channels]);
            }
        }
    }
    Ok(PatchGrid {
        patches: Tensor::new(vec![g * g, width], data)?,
        grid_rows: g,
        grid_cols: g,
    })
}

pub fn patchify(image: &[f64], config: &ModelConfig) -> Result<PatchGrid> {
    patchify_raw(image, config.image_side, config.channels, config.patch_size)
}

/// Inverse of [`patchify_raw`].
pub fn unpatchify(grid: &PatchGrid, channels: usize) -> Vec<f64> {
    let width = grid.patches.last_dim();
    let patch = ((width / channels) as f64).sqrt().round() as usize;
    let side = grid.grid_cols * patch;
    let mut image = vec![0.0; grid.grid_rows * patch * side * channels];
    for gr in 0..grid.grid_rows {
        for gc in 0..grid.grid_cols {
            let row = grid.patches.row(gr * grid.grid_cols + gc);
            for py in 0..patch {
                let y = gr * patch + py;
                let start = (y * side + gc * patch) * channels;
                image[start..start + patch * channels]
                    .copy_from_slice(&row[py * patch * channels..(py + 1) * patch * channels]);
            }
        }
    }
    image
}
