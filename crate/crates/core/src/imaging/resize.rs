use super::{BoundingBox, ImagingError, PreprocessedImage, RawImage, Result};
use crate::Scalar;

/// Default network input edge length.
pub const DEFAULT_TARGET_SIZE: usize = 256;

/// Content size after fitting `(h, w)` into `(target_h, target_w)` with the
/// aspect ratio preserved. Each side is at least one pixel.
pub fn fitted_extent(h: usize, w: usize, target_h: usize, target_w: usize) -> (usize, usize) {
    let scale = (target_h as f64 / h as f64).min(target_w as f64 / w as f64);
    let fit = |len: usize, target: usize| ((len as f64 * scale).round() as usize).clamp(1, target);
    (fit(h, target_h), fit(w, target_w))
}

/// Bilinear rescale into the target frame, centered zero padding on the
/// short axis, and division by `2^bits - 1`.
pub fn resize_pad_normalize<T: Scalar>(image: &RawImage, target_h: usize, target_w: usize) -> Result<PreprocessedImage<T>> {
    if target_h == 0 || target_w == 0 {
        return Err(ImagingError::ZeroDimension { width: target_w, height: target_h });
    }
    let (h, w) = (image.height(), image.width());
    let (ch, cw) = fitted_extent(h, w, target_h, target_w);
    let top = (target_h - ch) / 2;
    let left = (target_w - cw) / 2;
    let norm = image.bit_depth().max_value() as f64;

    // Half-pixel-centre sampling; an identity-sized resize samples pixel centres exactly.
    let sy = h as f64 / ch as f64;
    let sx = w as f64 / cw as f64;
    let source = |dst: usize, scale: f64, len: usize| -> (usize, usize, f64) {
        let s = ((dst as f64 + 0.5) * scale - 0.5).clamp(0.0, (len - 1) as f64);
        let i0 = s.floor() as usize;
        let i1 = (i0 + 1).min(len - 1);
        (i0, i1, s - i0 as f64)
    };

    let mut values = vec![T::zero(); target_h * target_w];
    for oy in 0..ch {
        let (y0, y1, fy) = source(oy, sy, h);
        for ox in 0..cw {
            let (x0, x1, fx) = source(ox, sx, w);
            let top_row = image.get(x0, y0) as f64 * (1.0 - fx) + image.get(x1, y0) as f64 * fx;
            let bottom_row = image.get(x0, y1) as f64 * (1.0 - fx) + image.get(x1, y1) as f64 * fx;
            let v = (top_row * (1.0 - fy) + bottom_row * fy) / norm;
            values[(top + oy) * target_w + left + ox] = T::lit(v.clamp(0.0, 1.0));
        }
    }
    Ok(PreprocessedImage {
        height: target_h,
        width: target_w,
        values,
        source_crop: BoundingBox::full(w, h),
    })
}
