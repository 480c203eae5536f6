//! Brute-force reference implementations, deliberately written without
//! reusing anything from the library.
#![allow(dead_code)]

use mammocolor::mrmc::{Condition, Outcome};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

/// Pairwise Mann-Whitney count: every (positive, negative) pair scores 2 for
/// a win and 1 for a tie, over 2 * np * nn.
pub fn auc(scores: &[f64], labels: &[bool]) -> f64 {
    let (mut num, mut pairs) = (0u128, 0u128);
    for (i, &p) in scores.iter().enumerate() {
        if !labels[i] {
            continue;
        }
        for (j, &n) in scores.iter().enumerate() {
            if labels[j] {
                continue;
            }
            pairs += 1;
            num += if p > n { 2 } else if p == n { 1 } else { 0 };
        }
    }
    num as f64 / (2 * pairs) as f64
}

/// Every distinct score tried as a `>=` threshold; Youden's J compared as
/// exact rationals, ties to higher specificity, then higher threshold.
pub fn youden(scores: &[f64], labels: &[bool]) -> f64 {
    let np = labels.iter().filter(|&&l| l).count() as i128;
    let nn = labels.len() as i128 - np;
    let mut best: Option<(i128, i128, f64)> = None;
    for &t in scores {
        let tp = scores.iter().zip(labels).filter(|(s, l)| **l && **s >= t).count() as i128;
        let tn = scores.iter().zip(labels).filter(|(s, l)| !**l && **s < t).count() as i128;
        // (sens + spec) * np * nn
        let j = tp * nn + tn * np;
        let replace = match best {
            None => true,
            Some((bj, btn, bt)) => j > bj || (j == bj && (tn > btn || (tn == btn && t > bt))),
        };
        if replace {
            best = Some((j, tn, t));
        }
    }
    best.unwrap().2
}

/// Two-sample jackknife variance of `auc(b) - auc(a)`: leave out one
/// positive at a time and one negative at a time.
pub fn jackknife_delta_variance(a: &[f64], b: &[f64], labels: &[bool]) -> f64 {
    let mut total = 0.0;
    for class in [true, false] {
        let idx: Vec<usize> = (0..labels.len()).filter(|&i| labels[i] == class).collect();
        let m = idx.len() as f64;
        let loo: Vec<f64> = idx
            .iter()
            .map(|&skip| {
                let keep: Vec<usize> = (0..labels.len()).filter(|&i| i != skip).collect();
                let pick = |v: &[f64]| keep.iter().map(|&i| v[i]).collect::<Vec<_>>();
                let l: Vec<bool> = keep.iter().map(|&i| labels[i]).collect();
                auc(&pick(b), &l) - auc(&pick(a), &l)
            })
            .collect();
        let mean = loo.iter().sum::<f64>() / m;
        total += (m - 1.0) / m * loo.iter().map(|x| (x - mean).powi(2)).sum::<f64>();
    }
    total
}

/// Fleiss' kappa from raw per-case rater labels: observed agreement is the
/// fraction of agreeing ordered rater pairs, enumerated explicitly.
pub fn fleiss_kappa(ratings: &[Vec<usize>], categories: usize) -> f64 {
    let n = ratings[0].len();
    let mut observed = 0.0;
    let mut marginal = vec![0.0; categories];
    for row in ratings {
        let mut agree = 0usize;
        for i in 0..n {
            marginal[row[i]] += 1.0;
            for j in 0..n {
                if i != j && row[i] == row[j] {
                    agree += 1;
                }
            }
        }
        observed += agree as f64 / (n * (n - 1)) as f64;
    }
    observed /= ratings.len() as f64;
    let total = (ratings.len() * n) as f64;
    let expected: f64 = marginal.iter().map(|c| (c / total) * (c / total)).sum();
    (observed - expected) / (1.0 - expected)
}

/// Between-class variance `w0 w1 (mu0 - mu1)^2` for the split `pixel <= t`.
fn between_class(hist: &[f64], t: usize) -> f64 {
    let n: f64 = hist.iter().sum();
    let (mut c0, mut s0, mut c1, mut s1) = (0.0, 0.0, 0.0, 0.0);
    for (i, &h) in hist.iter().enumerate() {
        if i <= t {
            c0 += h;
            s0 += h * i as f64;
        } else {
            c1 += h;
            s1 += h * i as f64;
        }
    }
    if c0 == 0.0 || c1 == 0.0 {
        return f64::NEG_INFINITY;
    }
    (c0 / n) * (c1 / n) * (s0 / c0 - s1 / c1).powi(2)
}

/// Smallest threshold attaining the maximal between-class variance, scanning
/// every 8-bit level.
pub fn otsu8(pixels: &[u16]) -> u16 {
    let mut hist = vec![0.0; 256];
    for &p in pixels {
        hist[p as usize] += 1.0;
    }
    let mut best = (f64::NEG_INFINITY, 0);
    for t in 0..256 {
        let v = between_class(&hist, t);
        if v > best.0 {
            best = (v, t);
        }
    }
    best.1 as u16
}

/// Relative gap between the variance at `t` and the best over all levels.
pub fn otsu8_gap(pixels: &[u16], t: u16) -> f64 {
    let mut hist = vec![0.0; 256];
    for &p in pixels {
        hist[p as usize] += 1.0;
    }
    let best = (0..256).map(|s| between_class(&hist, s)).fold(f64::NEG_INFINITY, f64::max);
    (best - between_class(&hist, t as usize)) / best
}

fn sigmoid(x: f64) -> f64 {
    1.0 / (1.0 + (-x).exp())
}

/// Readers crossed with cases crossed with two conditions (grayscale-only as
/// reference, TDCE-only as treatment) under the crossed random intercept model.
pub fn simulate_glmm(seed: u64, readers: usize, cases: usize, beta: [f64; 2], sigma_reader: f64, sigma_case: f64) -> Vec<Outcome> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let z = Normal::new(0.0, 1.0).unwrap();
    let u: Vec<f64> = (0..readers).map(|_| sigma_reader * z.sample(&mut rng)).collect();
    let v: Vec<f64> = (0..cases).map(|_| sigma_case * z.sample(&mut rng)).collect();
    let mut out = Vec::with_capacity(readers * cases * 2);
    for (r, ur) in u.iter().enumerate() {
        for (c, vc) in v.iter().enumerate() {
            for (k, condition) in [Condition::GrayscaleOnly, Condition::TdceOnly].into_iter().enumerate() {
                let p = sigmoid(beta[0] + beta[1] * k as f64 + ur + vc);
                out.push(Outcome { reader_id: format!("r{r:02}"), case_id: format!("c{c:03}"), condition, correct: rng.random_bool(p) });
            }
        }
    }
    out
}

/// Logistic regression on an intercept and a TDCE-only indicator. With one
/// binary covariate the model is saturated, so the maximum likelihood fit
/// reproduces the observed log-odds of each condition.
pub fn logistic(outcomes: &[Outcome]) -> [f64; 2] {
    let mut cells = [[0.0f64; 2]; 2];
    for o in outcomes {
        let k = usize::from(o.condition == Condition::TdceOnly);
        cells[k][0] += 1.0;
        cells[k][1] += f64::from(u8::from(o.correct));
    }
    let logit = |c: [f64; 2]| (c[1] / (c[0] - c[1])).ln();
    let b0 = logit(cells[0]);
    [b0, logit(cells[1]) - b0]
}

/// Bernoulli log-likelihood of `(intercept, TDCE-only)` coefficients.
pub fn logistic_loglik(outcomes: &[Outcome], beta: [f64; 2]) -> f64 {
    outcomes
        .iter()
        .map(|o| {
            let eta = beta[0] + if o.condition == Condition::TdceOnly { beta[1] } else { 0.0 };
            let p = sigmoid(eta);
            if o.correct { p.ln() } else { (1.0 - p).ln() }
        })
        .sum()
}
