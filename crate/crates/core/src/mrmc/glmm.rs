//! Bernoulli-logit model with crossed random intercepts for reader and case:
//!
//! `logit P(correct) = x'β + u_reader + v_case`, `u ~ N(0, σ²_r)`, `v ~ N(0, σ²_c)`.
//!
//! The marginal likelihood is approximated by Laplace's method. Random effects
//! are written as `u = σ a` with `a ~ N(0, I)`, so a zero variance is an
//! ordinary point of the parameter space and the approximation collapses to
//! plain logistic regression there.

use std::collections::{BTreeMap, BTreeSet};

use nalgebra::DMatrix;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::{Condition, MrmcError, ReaderRating, Result};
use crate::metrics::normal_two_sided_p;
use crate::pipeline::TriageLabel;

/// One reader's outcome on one case under one condition.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Outcome {
    pub reader_id: String,
    pub case_id: String,
    pub condition: Condition,
    pub correct: bool,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Subset {
    /// Correctness on every case (accuracy).
    All,
    /// Correctness on reference-positive cases (sensitivity).
    ReferencePositive,
    /// Correctness on reference-negative cases (specificity).
    ReferenceNegative,
}

/// Turns ratings into correctness outcomes for one subset. Ratings without a
/// call and cases with an excluded reference are dropped.
pub fn outcomes_from_ratings(
    ratings: &[ReaderRating],
    reference: &BTreeMap<String, TriageLabel>,
    subset: Subset,
) -> Result<Vec<Outcome>> {
    let mut out = Vec::new();
    for r in ratings {
        let label = reference.get(&r.case_id).ok_or_else(|| MrmcError::UnknownCase(r.case_id.clone()))?;
        let (Some(truth), Some(call)) = (label.as_bool(), r.call()) else {
            continue;
        };
        let keep = match subset {
            Subset::All => true,
            Subset::ReferencePositive => truth,
            Subset::ReferenceNegative => !truth,
        };
        if keep {
            out.push(Outcome {
                reader_id: r.reader_id.clone(),
                case_id: r.case_id.clone(),
                condition: r.condition,
                correct: call.is_suspicious() == truth,
            });
        }
    }
    Ok(out)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct GlmmConfig {
    pub max_iter: usize,
    /// Convergence threshold on the projected gradient norm.
    pub grad_tol: f64,
    /// Central-difference step for the outer gradient.
    pub fd_step: f64,
    /// Step for the numerical Hessian behind the standard errors.
    pub hessian_step: f64,
    /// Inner Newton stops when the Newton decrement falls below this.
    pub inner_tol: f64,
    pub max_inner: usize,
    /// A fixed effect beyond this magnitude is treated as separation.
    pub separation_bound: f64,
    pub log_var_min: f64,
    pub log_var_max: f64,
}

impl Default for GlmmConfig {
    fn default() -> Self {
        GlmmConfig {
            max_iter: 300,
            grad_tol: 1e-4,
            fd_step: 1e-4,
            hessian_step: 1e-3,
            inner_tol: 1e-12,
            max_inner: 100,
            separation_bound: 20.0,
            log_var_min: -20.0,
            log_var_max: 8.0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FixedEffect {
    pub name: String,
    pub estimate: f64,
    pub std_error: Option<f64>,
    pub z: Option<f64>,
    pub p: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GlmmFit {
    pub n_obs: usize,
    pub n_readers: usize,
    pub n_cases: usize,
    pub reference_condition: Condition,
    /// Intercept first, then one treatment contrast per other condition.
    pub fixed: Vec<FixedEffect>,
    /// Reported as 0 when the estimate sits on the lower bound.
    pub sigma2_reader: f64,
    pub sigma2_case: f64,
    pub log_likelihood: f64,
    pub converged: bool,
    pub separation: bool,
    pub iterations: usize,
    pub gradient_norm: f64,
    /// Log-likelihood after each accepted outer step, starting point first.
    pub loglik_history: Vec<f64>,
}

impl GlmmFit {
    pub fn effect(&self, name: &str) -> Option<&FixedEffect> {
        self.fixed.iter().find(|f| f.name == name)
    }
}

struct Design {
    y: Vec<f64>,
    x: Vec<f64>,
    p: usize,
    /// Levels of the factor with fewer levels (dense block) and of the other one.
    g1: Vec<usize>,
    g2: Vec<usize>,
    m1: usize,
    m2: usize,
    small_is_reader: bool,
    n_readers: usize,
    n_cases: usize,
}

impl Design {
    fn sigmas(&self, theta: &[f64]) -> (f64, f64) {
        let sr = (0.5 * theta[self.p]).exp();
        let sc = (0.5 * theta[self.p + 1]).exp();
        if self.small_is_reader {
            (sr, sc)
        } else {
            (sc, sr)
        }
    }

    fn fixed_eta(&self, beta: &[f64]) -> Vec<f64> {
        self.x.chunks(self.p).map(|row| row.iter().zip(beta).map(|(a, b)| a * b).sum()).collect()
    }
}

fn softplus(x: f64) -> f64 {
    if x > 0.0 {
        x + (-x).exp().ln_1p()
    } else {
        x.exp().ln_1p()
    }
}

fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

/// Penalized log-likelihood of the spherical random effects `a`.
fn penalized(d: &Design, eta0: &[f64], s: (f64, f64), a: &[f64]) -> f64 {
    let (a1, a2) = a.split_at(d.m1);
    let mut h = 0.0;
    for i in 0..d.y.len() {
        let eta = eta0[i] + s.0 * a1[d.g1[i]] + s.1 * a2[d.g2[i]];
        h += d.y[i] * eta - softplus(eta);
    }
    h - 0.5 * a.iter().map(|v| v * v).sum::<f64>()
}

/// Laplace approximation of the marginal log-likelihood at `theta`. `modes`
/// is used as the starting point and receives the conditional modes.
fn laplace(d: &Design, theta: &[f64], modes: &mut [f64], cfg: &GlmmConfig) -> Option<f64> {
    let eta0 = d.fixed_eta(&theta[..d.p]);
    let s = d.sigmas(theta);
    let (m1, m2) = (d.m1, d.m2);
    let mut h = penalized(d, &eta0, s, modes);
    for _ in 0..cfg.max_inner {
        let (a1, a2) = modes.split_at(m1);
        let mut g1: Vec<f64> = a1.iter().map(|v| -v).collect();
        let mut g2: Vec<f64> = a2.iter().map(|v| -v).collect();
        let mut diag1 = vec![1.0; m1];
        let mut diag2 = vec![1.0; m2];
        let mut b = DMatrix::<f64>::zeros(m1, m2);
        for i in 0..d.y.len() {
            let (j, k) = (d.g1[i], d.g2[i]);
            let mu = sigmoid(eta0[i] + s.0 * a1[j] + s.1 * a2[k]);
            let w = mu * (1.0 - mu);
            g1[j] += s.0 * (d.y[i] - mu);
            g2[k] += s.1 * (d.y[i] - mu);
            diag1[j] += s.0 * s.0 * w;
            diag2[k] += s.1 * s.1 * w;
            b[(j, k)] += s.0 * s.1 * w;
        }
        // Schur complement of the diagonal block: S = A - B D^-1 B'.
        let bd = DMatrix::from_fn(m1, m2, |j, k| b[(j, k)] / diag2[k]);
        let mut schur = -(&bd * b.transpose());
        for j in 0..m1 {
            schur[(j, j)] += diag1[j];
        }
        let chol = schur.cholesky()?;
        let logdet = diag2.iter().map(|v| v.ln()).sum::<f64>()
            + 2.0 * chol.l_dirty().diagonal().iter().map(|v| v.ln()).sum::<f64>();
        let g1v = nalgebra::DVector::from_vec(g1.clone());
        let g2v = nalgebra::DVector::from_vec(g2.clone());
        let dx1 = chol.solve(&(&g1v - &bd * &g2v));
        let rest = &g2v - b.transpose() * &dx1;
        let dx2: Vec<f64> = rest.iter().zip(&diag2).map(|(r, dk)| r / dk).collect();
        let step: Vec<f64> = dx1.iter().copied().chain(dx2).collect();
        let decrement: f64 = step.iter().zip(g1.iter().chain(&g2)).map(|(a, b)| a * b).sum();
        if decrement < cfg.inner_tol {
            return Some(h - 0.5 * logdet);
        }
        let mut t = 1.0;
        let mut accepted = false;
        for _ in 0..50 {
            let trial: Vec<f64> = modes.iter().zip(&step).map(|(a, st)| a + t * st).collect();
            let ht = penalized(d, &eta0, s, &trial);
            if ht >= h {
                modes.copy_from_slice(&trial);
                accepted = ht > h;
                h = ht;
                break;
            }
            t *= 0.5;
        }
        if !accepted {
            // No representable improvement left.
            return Some(h - 0.5 * logdet);
        }
    }
    None
}

impl Design {
    fn new(outcomes: &[Outcome]) -> Result<(Design, Condition, Vec<Condition>)> {
        let readers = index(outcomes.iter().map(|o| &o.reader_id));
        let cases = index(outcomes.iter().map(|o| &o.case_id));
        let conditions: BTreeSet<Condition> = outcomes.iter().map(|o| o.condition).collect();
        if readers.len() < 2 || cases.len() < 2 || conditions.len() < 2 {
            return Err(MrmcError::Invalid(format!(
                "need at least 2 readers, 2 cases and 2 conditions (got {}, {}, {})",
                readers.len(),
                cases.len(),
                conditions.len()
            )));
        }
        let reference = if conditions.contains(&Condition::GrayscaleOnly) {
            Condition::GrayscaleOnly
        } else {
            *conditions.iter().next().unwrap()
        };
        let contrasts: Vec<Condition> = Condition::ALL.into_iter().filter(|c| *c != reference && conditions.contains(c)).collect();
        let p = 1 + contrasts.len();
        let small_is_reader = readers.len() <= cases.len();
        let mut design = Design {
            n_readers: readers.len(),
            n_cases: cases.len(),
            y: Vec::with_capacity(outcomes.len()),
            x: Vec::with_capacity(outcomes.len() * p),
            p,
            g1: Vec::with_capacity(outcomes.len()),
            g2: Vec::with_capacity(outcomes.len()),
            m1: 0,
            m2: 0,
            small_is_reader,
        };
        for o in outcomes {
            design.y.push(if o.correct { 1.0 } else { 0.0 });
            design.x.push(1.0);
            design.x.extend(contrasts.iter().map(|c| if *c == o.condition { 1.0 } else { 0.0 }));
            let (r, c) = (readers[&o.reader_id], cases[&o.case_id]);
            let (a, b) = if small_is_reader { (r, c) } else { (c, r) };
            design.g1.push(a);
            design.g2.push(b);
        }
        (design.m1, design.m2) = if small_is_reader { (readers.len(), cases.len()) } else { (cases.len(), readers.len()) };

        Ok((design, reference, contrasts))
    }
}

struct Objective<'a> {
    design: &'a Design,
    cfg: &'a GlmmConfig,
}

impl Objective<'_> {
    fn value(&self, theta: &[f64], modes: &[f64]) -> Option<(f64, Vec<f64>)> {
        let mut m = modes.to_vec();
        let f = laplace(self.design, theta, &mut m, self.cfg)?;
        f.is_finite().then_some((f, m))
    }

    fn gradient(&self, theta: &[f64], modes: &[f64]) -> Option<Vec<f64>> {
        let h = self.cfg.fd_step;
        (0..theta.len())
            .into_par_iter()
            .map(|j| {
                let mut up = theta.to_vec();
                up[j] += h;
                let mut down = theta.to_vec();
                down[j] -= h;
                let (fu, _) = self.value(&up, modes)?;
                let (fd, _) = self.value(&down, modes)?;
                Some((fu - fd) / (2.0 * h))
            })
            .collect()
    }

    /// Central-difference Hessian restricted to `idx`.
    fn hessian(&self, theta: &[f64], modes: &[f64], idx: &[usize]) -> Option<DMatrix<f64>> {
        let h = self.cfg.hessian_step;
        let k = idx.len();
        let pairs: Vec<(usize, usize)> = (0..k).flat_map(|a| (a..k).map(move |b| (a, b))).collect();
        let f0 = self.value(theta, modes)?.0;
        let entries: Option<Vec<f64>> = pairs
            .par_iter()
            .map(|&(a, b)| {
                let (i, j) = (idx[a], idx[b]);
                let at = |di: f64, dj: f64| {
                    let mut t = theta.to_vec();
                    t[i] += di;
                    t[j] += dj;
                    self.value(&t, modes).map(|v| v.0)
                };
                if i == j {
                    Some((at(h, 0.0)? - 2.0 * f0 + at(-h, 0.0)?) / (h * h))
                } else {
                    Some((at(h, h)? - at(h, -h)? - at(-h, h)? + at(-h, -h)?) / (4.0 * h * h))
                }
            })
            .collect();
        let entries = entries?;
        let mut m = DMatrix::zeros(k, k);
        for (&(a, b), v) in pairs.iter().zip(entries) {
            m[(a, b)] = v;
            m[(b, a)] = v;
        }
        Some(m)
    }
}

fn index<'a>(items: impl Iterator<Item = &'a String>) -> BTreeMap<&'a String, usize> {
    let set: BTreeSet<&String> = items.collect();
    set.into_iter().enumerate().map(|(i, s)| (s, i)).collect()
}

/// Fits `correct ~ condition + (1|reader) + (1|case)` by Laplace-approximated
/// maximum likelihood. Conditions use treatment coding against grayscale-only
/// (or the first condition present when grayscale-only is absent). The outer
/// optimizer is a bound-constrained BFGS over the fixed effects and the two
/// log-variances; the inner problem is Newton's method for the modes.
pub fn glmm_fit(outcomes: &[Outcome], cfg: &GlmmConfig) -> Result<GlmmFit> {
    let (design, reference, contrasts) = Design::new(outcomes)?;
    let p = design.p;
    let obj = Objective { design: &design, cfg };
    let n_theta = p + 2;
    let lower: Vec<f64> = (0..n_theta).map(|j| if j < p { f64::NEG_INFINITY } else { cfg.log_var_min }).collect();
    let upper: Vec<f64> = (0..n_theta).map(|j| if j < p { f64::INFINITY } else { cfg.log_var_max }).collect();
    let clamp = |t: &mut [f64]| {
        for j in 0..n_theta {
            t[j] = t[j].clamp(lower[j], upper[j]);
        }
    };

    let ybar = design.y.iter().sum::<f64>() / design.y.len() as f64;
    let mut theta = vec![0.0; n_theta];
    theta[0] = (ybar.clamp(1e-3, 1.0 - 1e-3) / (1.0 - ybar.clamp(1e-3, 1.0 - 1e-3))).ln();
    theta[p] = -1.0;
    theta[p + 1] = -1.0;
    let failed = || MrmcError::Invalid("likelihood evaluation failed".into());
    let (mut f, mut modes) = obj.value(&theta, &vec![0.0; design.m1 + design.m2]).ok_or_else(failed)?;
    let mut g = obj.gradient(&theta, &modes).ok_or_else(failed)?;
    let mut hinv = DMatrix::<f64>::identity(n_theta, n_theta);
    let mut fresh = true;
    let mut history = vec![f];
    let mut converged = false;
    let mut separation = false;
    let mut iterations = 0;

    let free_mask = |theta: &[f64], g: &[f64]| -> Vec<bool> {
        (0..n_theta).map(|j| !((theta[j] <= lower[j] && g[j] < 0.0) || (theta[j] >= upper[j] && g[j] > 0.0))).collect()
    };
    let proj_norm = |free: &[bool], g: &[f64]| -> f64 {
        g.iter().zip(free).filter(|(_, f)| **f).map(|(v, _)| v * v).sum::<f64>().sqrt()
    };

    let mut gnorm = proj_norm(&free_mask(&theta, &g), &g);
    while iterations < cfg.max_iter {
        let free = free_mask(&theta, &g);
        gnorm = proj_norm(&free, &g);
        if gnorm < cfg.grad_tol {
            converged = true;
            break;
        }
        iterations += 1;
        let gv = nalgebra::DVector::from_fn(n_theta, |j, _| if free[j] { g[j] } else { 0.0 });
        let mut dir: Vec<f64> = (&hinv * &gv).iter().copied().collect();
        for j in 0..n_theta {
            if !free[j] {
                dir[j] = 0.0;
            }
        }
        let slope: f64 = dir.iter().zip(&g).map(|(a, b)| a * b).sum();
        if slope <= 0.0 {
            hinv = DMatrix::identity(n_theta, n_theta);
            fresh = true;
            dir = gv.iter().copied().collect();
        }
        let mut t = if fresh {
            let m = dir.iter().fold(0.0f64, |m, v| m.max(v.abs()));
            (1.0 / m).min(1.0)
        } else {
            1.0
        };
        let mut accepted = None;
        for _ in 0..60 {
            let mut trial: Vec<f64> = theta.iter().zip(&dir).map(|(a, d)| a + t * d).collect();
            clamp(&mut trial);
            let gain: f64 = trial.iter().zip(&theta).zip(&g).map(|((a, b), gj)| (a - b) * gj).sum();
            if let Some((ft, mt)) = obj.value(&trial, &modes) {
                if ft >= f + 1e-4 * gain && ft >= f {
                    accepted = Some((trial, ft, mt));
                    break;
                }
            }
            t *= 0.5;
        }
        let Some((next, fnext, mnext)) = accepted else {
            break;
        };
        let gnext = obj.gradient(&next, &mnext).ok_or_else(failed)?;
        let s = nalgebra::DVector::from_fn(n_theta, |j, _| next[j] - theta[j]);
        // Update for the minimization of -f.
        let yv = nalgebra::DVector::from_fn(n_theta, |j, _| g[j] - gnext[j]);
        let sy = s.dot(&yv);
        if sy > 1e-12 {
            if fresh {
                hinv *= sy / yv.dot(&yv);
            }
            let rho = 1.0 / sy;
            let eye = DMatrix::<f64>::identity(n_theta, n_theta);
            let left = &eye - rho * &s * yv.transpose();
            let right = &eye - rho * &yv * s.transpose();
            hinv = &left * &hinv * &right + rho * &s * s.transpose();
            fresh = false;
        }
        theta = next;
        f = fnext;
        modes = mnext;
        g = gnext;
        history.push(f);
        if theta[..p].iter().any(|b| b.abs() > cfg.separation_bound) {
            separation = true;
            break;
        }
    }
    if !converged && !separation {
        gnorm = proj_norm(&free_mask(&theta, &g), &g);
        converged = gnorm < cfg.grad_tol;
    }

    let interior: Vec<usize> = (0..n_theta).filter(|&j| j < p || theta[j] > lower[j] + 1e-8).collect();
    let cov_beta = covariance(&obj, &theta, &modes, &interior, p)
        .or_else(|| covariance(&obj, &theta, &modes, &(0..p).collect::<Vec<_>>(), p));
    let mut names = vec!["intercept".to_string()];
    names.extend(contrasts.iter().map(|c| c.to_string()));
    let fixed = names
        .into_iter()
        .enumerate()
        .map(|(j, name)| {
            let se = cov_beta.as_ref().map(|c| c[j]).filter(|v| v.is_finite() && *v > 0.0).map(f64::sqrt);
            let z = se.map(|s| theta[j] / s);
            FixedEffect { name, estimate: theta[j], std_error: se, z, p: z.map(normal_two_sided_p) }
        })
        .collect();
    let var = |j: usize| if theta[j] <= lower[j] + 1e-8 { 0.0 } else { theta[j].exp() };
    Ok(GlmmFit {
        n_obs: outcomes.len(),
        n_readers: design.n_readers,
        n_cases: design.n_cases,
        reference_condition: reference,
        fixed,
        sigma2_reader: var(p),
        sigma2_case: var(p + 1),
        log_likelihood: f,
        converged: converged && !separation,
        separation,
        iterations,
        gradient_norm: gnorm,
        loglik_history: history,
    })
}

/// Diagonal of the inverse observed information for the first `p` parameters,
/// using the Hessian over `idx` (which must start with `0..p`).
fn covariance(obj: &Objective, theta: &[f64], modes: &[f64], idx: &[usize], p: usize) -> Option<Vec<f64>> {
    let info = -obj.hessian(theta, modes, idx)?;
    let inv = info.cholesky()?.inverse();
    Some((0..p).map(|j| inv[(j, j)]).collect())
}
