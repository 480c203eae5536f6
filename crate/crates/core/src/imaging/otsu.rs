use std::cmp::Ordering;

use super::{ImagingError, RawImage, Result};

/// Score of one candidate split, `d^2 / (w0 * w1)` with
/// `d = N * sum0 - S * w0`, proportional to the between-class variance.
#[derive(Clone, Copy)]
struct Split {
    d: u128,
    q: u128,
}

/// Exact comparison by cross-multiplication; `None` on overflow.
fn cmp_exact(a: Split, b: Split) -> Option<Ordering> {
    let lhs = a.d.checked_mul(a.d)?.checked_mul(b.q)?;
    let rhs = b.d.checked_mul(b.d)?.checked_mul(a.q)?;
    Some(lhs.cmp(&rhs))
}

fn cmp_float(a: Split, b: Split) -> Ordering {
    let va = (a.d as f64) * (a.d as f64) / a.q as f64;
    let vb = (b.d as f64) * (b.d as f64) / b.q as f64;
    va.partial_cmp(&vb).unwrap_or(Ordering::Equal)
}

/// Otsu's threshold over the full `2^bits` histogram.
///
/// Foreground is `pixel > t`. Among all thresholds attaining the maximal
/// between-class variance the smallest one is returned. Comparisons are done
/// in exact integer arithmetic whenever the products fit in 128 bits.
pub fn otsu_threshold(image: &RawImage) -> Result<u16> {
    let bins = image.bit_depth().max_value() as usize + 1;
    let mut hist = vec![0u64; bins];
    for &p in image.pixels() {
        hist[p as usize] += 1;
    }
    if hist.iter().filter(|&&c| c > 0).count() < 2 {
        return Err(ImagingError::DegenerateHistogram);
    }

    let n = image.pixels().len() as u128;
    let total: u128 = hist.iter().enumerate().map(|(i, &c)| i as u128 * c as u128).sum();

    let mut splits = Vec::with_capacity(bins);
    let (mut w0, mut s0) = (0u128, 0u128);
    for (t, &count) in hist.iter().enumerate() {
        w0 += count as u128;
        s0 += t as u128 * count as u128;
        let w1 = n - w0;
        if w0 == 0 || w1 == 0 {
            continue;
        }
        // Only the square of d matters.
        let (a, b) = (n * s0, total * w0);
        let d = a.abs_diff(b);
        splits.push((t as u16, Split { d, q: w0 * w1 }));
    }

    let mut best = splits[0];
    let mut exact = true;
    for &cand in &splits[1..] {
        let ord = if exact {
            match cmp_exact(cand.1, best.1) {
                Some(o) => o,
                None => {
                    exact = false;
                    cmp_float(cand.1, best.1)
                }
            }
        } else {
            cmp_float(cand.1, best.1)
        };
        if ord == Ordering::Greater {
            best = cand;
        }
    }
    if !exact {
        // Redo the whole scan in one arithmetic mode so plateaus are judged consistently.
        best = splits[0];
        for &cand in &splits[1..] {
            if cmp_float(cand.1, best.1) == Ordering::Greater {
                best = cand;
            }
        }
    }
    Ok(best.0)
}
