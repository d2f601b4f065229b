//! Non-learned vertical up-sampling: nearest-row replication and bilinear
//! interpolation, plus the row-subsampling that produces training pairs.

use crate::error::{Error, Result};
use crate::geom::RangeImage;

/// Replicates each row (and its mask) `f_up` times.
pub fn upsample_nearest(image: &RangeImage, f_up: usize) -> Result<RangeImage> {
    if f_up == 0 {
        return Err(Error::invalid("up-sampling factor must be positive"));
    }
    if f_up == 1 {
        return Ok(image.clone());
    }
    let model = image.model.with_vertical_factor(f_up);
    let mut out = RangeImage::empty(model);
    for row in 0..model.height {
        let src = row / f_up;
        for col in 0..model.width {
            if image.is_valid(src, col) {
                out.set(row, col, image.depth(src, col));
            }
        }
    }
    Ok(out)
}

/// Vertical linear interpolation between valid neighbor rows with half-pixel
/// alignment; output cells that interpolate from any invalid contributing
/// row inherit the invalidity.
pub fn upsample_bilinear(image: &RangeImage, f_up: usize) -> Result<RangeImage> {
    if f_up == 0 {
        return Err(Error::invalid("up-sampling factor must be positive"));
    }
    if f_up == 1 {
        return Ok(image.clone());
    }
    let h = image.height();
    let model = image.model.with_vertical_factor(f_up);
    let mut out = RangeImage::empty(model);
    for row in 0..model.height {
        // half-pixel alignment: output row centers mapped into input rows
        let src = (row as f64 + 0.5) / f_up as f64 - 0.5;
        let (i0, i1, w1) = if src <= 0.0 {
            (0usize, 0usize, 0.0)
        } else if src >= (h - 1) as f64 {
            (h - 1, h - 1, 0.0)
        } else {
            let i0 = src.floor() as usize;
            (i0, i0 + 1, src - i0 as f64)
        };
        for col in 0..model.width {
            let contributing_valid = if i0 == i1 || w1 == 0.0 {
                image.is_valid(i0, col)
            } else {
                image.is_valid(i0, col) && image.is_valid(i1, col)
            };
            if contributing_valid {
                let d = if i0 == i1 {
                    image.depth(i0, col)
                } else {
                    image.depth(i0, col) * (1.0 - w1) + image.depth(i1, col) * w1
                };
                out.set(row, col, d);
            }
        }
    }
    Ok(out)
}

/// Keeps every `f_up`-th row starting at row 0, with its mask.
pub fn make_lr(hr: &RangeImage, f_up: usize) -> Result<RangeImage> {
    if f_up == 0 {
        return Err(Error::invalid("subsampling factor must be positive"));
    }
    if f_up == 1 {
        return Ok(hr.clone());
    }
    if hr.height() % f_up != 0 {
        return Err(Error::invalid(format!(
            "height {} not divisible by factor {}",
            hr.height(),
            f_up
        )));
    }
    let mut model = hr.model;
    model.height = hr.height() / f_up;
    let mut out = RangeImage::empty(model);
    for row in 0..model.height {
        let src = row * f_up;
        for col in 0..model.width {
            if hr.is_valid(src, col) {
                out.set(row, col, hr.depth(src, col));
            }
        }
    }
    Ok(out)
}
