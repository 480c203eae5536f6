use std::collections::VecDeque;

use super::{BoundingBox, ImagingError, RawImage, Result};

/// Tight bounding box and pixel count of the largest 4-connected component of
/// `mask`. Ties go to the component whose first pixel comes first in raster order.
pub fn largest_component(mask: &[bool], width: usize, height: usize) -> Option<(BoundingBox, usize)> {
    let mut seen = vec![false; mask.len()];
    let mut best: Option<(BoundingBox, usize)> = None;
    let mut queue = VecDeque::new();
    for start in 0..mask.len() {
        if !mask[start] || seen[start] {
            continue;
        }
        seen[start] = true;
        queue.push_back(start);
        let (mut x0, mut y0, mut x1, mut y1) = (usize::MAX, usize::MAX, 0, 0);
        let mut size = 0usize;
        while let Some(i) = queue.pop_front() {
            let (x, y) = (i % width, i / width);
            size += 1;
            x0 = x0.min(x);
            y0 = y0.min(y);
            x1 = x1.max(x);
            y1 = y1.max(y);
            let mut visit = |j: usize| {
                if mask[j] && !seen[j] {
                    seen[j] = true;
                    queue.push_back(j);
                }
            };
            if x > 0 {
                visit(i - 1);
            }
            if x + 1 < width {
                visit(i + 1);
            }
            if y > 0 {
                visit(i - width);
            }
            if y + 1 < height {
                visit(i + width);
            }
        }
        if best.is_none_or(|(_, s)| size > s) {
            best = Some((BoundingBox { x: x0, y: y0, w: x1 - x0 + 1, h: y1 - y0 + 1 }, size));
        }
    }
    best
}

/// Crops to the bounding box of the largest 4-connected region of pixels
/// brighter than `threshold`. Pixel content inside the box is unchanged.
pub fn crop_to_roi(image: &RawImage, threshold: u16) -> Result<(RawImage, BoundingBox)> {
    let mask: Vec<bool> = image.pixels().iter().map(|&p| p > threshold).collect();
    let (bbox, _) = largest_component(&mask, image.width(), image.height())
        .ok_or(ImagingError::NoForeground(threshold))?;
    Ok((image.crop(bbox)?, bbox))
}
