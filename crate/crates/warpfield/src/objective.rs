//! The self-supervision objective: photometric and depth data terms plus
//! elastic, depth-gradient, depth-smoothness and temporal regularizers,
//! combined into a weighted total.
//!
//! Data terms and patch regularizers operate on per-pixel predictions; the
//! elastic term operates on warp Jacobians; the temporal term on warped
//! probe points at adjacent time instants. All losses are means over their
//! batch so the weights are independent of batch size.

use crate::error::{Error, Result};
use crate::num::{rl, Real};
use crate::se3::{warp_point_generic, ScrewField, WarpOptions};
use ndarray::Array2;

/// Weights of the regularization terms; the photometric term is unweighted.
#[derive(Clone, Copy, Debug, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct LossWeights {
    pub lambda_depth: f64,
    pub lambda_jacobian: f64,
    pub lambda_grad: f64,
    pub lambda_smooth: f64,
    pub lambda_tv: f64,
}

impl Default for LossWeights {
    fn default() -> Self {
        LossWeights {
            lambda_depth: 1.0,
            lambda_jacobian: 1e-6,
            lambda_grad: 1.0,
            lambda_smooth: 1e-2,
            lambda_tv: 1e-4,
        }
    }
}

/// Raw (unweighted) values of the six loss terms.
#[derive(Clone, Copy, Debug, Default, PartialEq)]
pub struct LossTerms {
    pub color: f64,
    pub depth: f64,
    pub jacobian: f64,
    pub grad: f64,
    pub smooth: f64,
    pub tv: f64,
}

/// Per-step loss report: the six terms plus their weighted total.
#[derive(Clone, Copy, Debug, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct LossReport {
    pub l_color: f64,
    pub l_depth: f64,
    pub l_jac: f64,
    pub l_grad: f64,
    pub l_smooth: f64,
    pub l_tv: f64,
    pub total: f64,
}

/// Weighted total per the objective. Terms with a zero weight are skipped
/// outright, so ablations reproduce the reduced sum bitwise. A non-finite
/// term yields a diagnostic error naming it.
pub fn total_loss(terms: &LossTerms, weights: &LossWeights) -> Result<LossReport> {
    let named: [(&'static str, f64); 6] = [
        ("color", terms.color),
        ("depth", terms.depth),
        ("jacobian", terms.jacobian),
        ("grad", terms.grad),
        ("smooth", terms.smooth),
        ("tv", terms.tv),
    ];
    for (term, v) in named {
        if !v.is_finite() {
            return Err(Error::NonFiniteLoss { term });
        }
    }
    let mut total = terms.color;
    for (w, v) in [
        (weights.lambda_depth, terms.depth),
        (weights.lambda_jacobian, terms.jacobian),
        (weights.lambda_grad, terms.grad),
        (weights.lambda_smooth, terms.smooth),
        (weights.lambda_tv, terms.tv),
    ] {
        if w != 0.0 {
            total += w * v;
        }
    }
    Ok(LossReport {
        l_color: terms.color,
        l_depth: terms.depth,
        l_jac: terms.jacobian,
        l_grad: terms.grad,
        l_smooth: terms.smooth,
        l_tv: terms.tv,
        total,
    })
}

// ---------------------------------------------------------------------------
// Photometric term
// ---------------------------------------------------------------------------

/// Mean squared RGB error over unmasked pixels.
pub fn loss_color<S: Real>(pred: &Array2<S>, gt: &Array2<S>, mask: &[S]) -> Result<S> {
    check_rows(pred, gt, mask)?;
    let mut acc = S::zero();
    let mut count = 0usize;
    for (row, &m) in mask.iter().enumerate() {
        if m > rl(0.5) {
            for c in 0..3 {
                let e = pred[(row, c)] - gt[(row, c)];
                acc += e * e;
            }
            count += 1;
        }
    }
    if count == 0 {
        return Err(Error::UndefinedBatch);
    }
    Ok(acc / rl(count as f64))
}

/// Adjoint of [`loss_color`] with respect to the predictions.
pub fn loss_color_backward<S: Real>(
    pred: &Array2<S>,
    gt: &Array2<S>,
    mask: &[S],
    upstream: S,
) -> Array2<S> {
    let count = mask.iter().filter(|m| **m > rl(0.5)).count().max(1);
    let scale = upstream * rl::<S>(2.0) / rl(count as f64);
    let mut out = Array2::zeros(pred.dim());
    for (row, &m) in mask.iter().enumerate() {
        if m > rl(0.5) {
            for c in 0..3 {
                out[(row, c)] = scale * (pred[(row, c)] - gt[(row, c)]);
            }
        }
    }
    out
}

// ---------------------------------------------------------------------------
// Depth term (Huber)
// ---------------------------------------------------------------------------

#[inline]
fn huber<S: Real>(e: S, delta: S) -> S {
    let ae = e.abs();
    if ae <= delta {
        rl::<S>(0.5) * e * e
    } else {
        delta * (ae - rl::<S>(0.5) * delta)
    }
}

#[inline]
fn huber_deriv<S: Real>(e: S, delta: S) -> S {
    if e.abs() <= delta {
        e
    } else if e > S::zero() {
        delta
    } else {
        -delta
    }
}

/// Mean Huber penalty on the depth residual over unmasked pixels.
pub fn loss_depth<S: Real>(pred: &[S], gt: &[S], mask: &[S], delta: S) -> Result<S> {
    if pred.len() != gt.len() || pred.len() != mask.len() {
        return Err(Error::Validation("depth batch length mismatch".into()));
    }
    if !(delta > S::zero()) {
        return Err(Error::invalid("huber delta must be positive"));
    }
    let mut acc = S::zero();
    let mut count = 0usize;
    for i in 0..pred.len() {
        if mask[i] > rl(0.5) {
            acc += huber(pred[i] - gt[i], delta);
            count += 1;
        }
    }
    if count == 0 {
        return Err(Error::UndefinedBatch);
    }
    Ok(acc / rl(count as f64))
}

/// Adjoint of [`loss_depth`] with respect to the predictions.
pub fn loss_depth_backward<S: Real>(
    pred: &[S],
    gt: &[S],
    mask: &[S],
    delta: S,
    upstream: S,
) -> Vec<S> {
    let count = mask.iter().filter(|m| **m > rl(0.5)).count().max(1);
    let scale = upstream / rl(count as f64);
    (0..pred.len())
        .map(|i| {
            if mask[i] > rl(0.5) {
                scale * huber_deriv(pred[i] - gt[i], delta)
            } else {
                S::zero()
            }
        })
        .collect()
}

// ---------------------------------------------------------------------------
// Elastic (Jacobian) term
// ---------------------------------------------------------------------------

/// Robust penalty on the log singular values of one warp Jacobian:
/// `rho(|log sigma|_F, c)` with the Geman-McClure function
/// `rho(r, c) = 2 (r/c)^2 / ((r/c)^2 + 4)`.
///
/// Returns the value and its gradient with respect to the Jacobian. The
/// gradient uses the smooth equivalent `q = |log sigma|^2 =
/// 1/4 |log(J^T J)|_F^2`, whose derivative `dq/dJ = J (J^T J)^{-1} log(J^T J)`
/// stays finite at coincident singular values (in particular at J = I).
pub fn jacobian_penalty_with_grad<S: Real>(j: &[[S; 3]; 3], c: S) -> Result<(S, [[S; 3]; 3])> {
    if !j.iter().flatten().all(|v| v.is_finite()) {
        return Err(Error::invalid("non-finite Jacobian"));
    }
    let c64 = c.to64();

    // Value and gradient both flow through the symmetric eigensystem of
    // J^T J: eigenvalues are squared singular values, so
    // q = sum ln(sigma)^2 = sum (ln(lambda)/2)^2. Singular values below
    // 1e-12 are clamped before the logarithm.
    let mut s = [[0.0f64; 3]; 3];
    for r in 0..3 {
        for col in 0..3 {
            let mut acc = 0.0;
            for k in 0..3 {
                acc += j[k][r].to64() * j[k][col].to64();
            }
            s[r][col] = acc;
        }
    }
    let (lams, fs) = sym3_eigenvalues_and_apply(&s, |lam| {
        let l = lam.max(1e-24);
        l.ln() / l
    });
    let mut q = 0.0;
    for lam in lams {
        q += (0.5 * lam.max(1e-24).ln()).powi(2);
    }
    let denom = q + 4.0 * c64 * c64;
    let rho = 2.0 * q / denom;
    let drho_dq = 8.0 * c64 * c64 / (denom * denom);

    // dq/dJ = J * f(S) with f(lam) = ln(lam)/lam  (from q = 1/4 |log S|^2)
    let mut grad = [[S::zero(); 3]; 3];
    for r in 0..3 {
        for col in 0..3 {
            let mut acc = 0.0;
            for k in 0..3 {
                acc += j[r][k].to64() * fs[k][col];
            }
            grad[r][col] = rl(drho_dq * acc);
        }
    }
    Ok((rl(rho), grad))
}

/// Robust elastic penalty summed over a batch of warp Jacobians, divided by
/// the batch size.
pub fn loss_jacobian<S: Real>(jacobians: &[[[S; 3]; 3]], c: S) -> Result<S> {
    if !(c > S::zero()) {
        return Err(Error::invalid("robust scale must be positive"));
    }
    if jacobians.is_empty() {
        return Err(Error::UndefinedBatch);
    }
    let mut acc = S::zero();
    for j in jacobians {
        acc += jacobian_penalty_with_grad(j, c)?.0;
    }
    Ok(acc / rl(jacobians.len() as f64))
}

// ---------------------------------------------------------------------------
// Depth-gradient term
// ---------------------------------------------------------------------------

fn check_patch<S: Real>(
    pred: &Array2<S>,
    gt: &Array2<S>,
    mask: &Array2<S>,
    min_side: usize,
) -> Result<()> {
    let dim = pred.dim();
    if gt.dim() != dim || mask.dim() != dim {
        return Err(Error::Validation("patch shape mismatch".into()));
    }
    if dim.0 < min_side || dim.1 < min_side {
        return Err(Error::invalid(format!(
            "patch {}x{} smaller than {min_side}x{min_side} stencil",
            dim.0, dim.1
        )));
    }
    Ok(())
}

/// First-order consistency of the depth residual inside a patch: the mean
/// absolute forward difference of `E = pred - gt`, horizontally plus
/// vertically. Differences straddling a masked pixel are dropped.
pub fn loss_grad<S: Real>(pred: &Array2<S>, gt: &Array2<S>, mask: &Array2<S>) -> Result<S> {
    check_patch(pred, gt, mask, 2)?;
    let (h, w) = pred.dim();
    let half: S = rl(0.5);
    let mut acc_x = S::zero();
    let mut n_x = 0usize;
    let mut acc_y = S::zero();
    let mut n_y = 0usize;
    for r in 0..h {
        for c in 0..w {
            if mask[(r, c)] <= half {
                continue;
            }
            let e0 = pred[(r, c)] - gt[(r, c)];
            if c + 1 < w && mask[(r, c + 1)] > half {
                let e1 = pred[(r, c + 1)] - gt[(r, c + 1)];
                acc_x += (e1 - e0).abs();
                n_x += 1;
            }
            if r + 1 < h && mask[(r + 1, c)] > half {
                let e1 = pred[(r + 1, c)] - gt[(r + 1, c)];
                acc_y += (e1 - e0).abs();
                n_y += 1;
            }
        }
    }
    let mx = if n_x > 0 { acc_x / rl(n_x as f64) } else { S::zero() };
    let my = if n_y > 0 { acc_y / rl(n_y as f64) } else { S::zero() };
    Ok(mx + my)
}

/// Adjoint of [`loss_grad`] with respect to the predicted depth patch.
pub fn loss_grad_backward<S: Real>(
    pred: &Array2<S>,
    gt: &Array2<S>,
    mask: &Array2<S>,
    upstream: S,
) -> Array2<S> {
    let (h, w) = pred.dim();
    let half: S = rl(0.5);
    // Count retained pairs first (the means need the totals).
    let mut n_x = 0usize;
    let mut n_y = 0usize;
    for r in 0..h {
        for c in 0..w {
            if mask[(r, c)] <= half {
                continue;
            }
            if c + 1 < w && mask[(r, c + 1)] > half {
                n_x += 1;
            }
            if r + 1 < h && mask[(r + 1, c)] > half {
                n_y += 1;
            }
        }
    }
    let sx = if n_x > 0 { upstream / rl(n_x as f64) } else { S::zero() };
    let sy = if n_y > 0 { upstream / rl(n_y as f64) } else { S::zero() };
    let mut out = Array2::zeros(pred.dim());
    let sign = |v: S| {
        if v > S::zero() {
            S::one()
        } else if v < S::zero() {
            -S::one()
        } else {
            S::zero()
        }
    };
    for r in 0..h {
        for c in 0..w {
            if mask[(r, c)] <= half {
                continue;
            }
            let e0 = pred[(r, c)] - gt[(r, c)];
            if c + 1 < w && mask[(r, c + 1)] > half {
                let e1 = pred[(r, c + 1)] - gt[(r, c + 1)];
                let s = sign(e1 - e0) * sx;
                out[(r, c + 1)] += s;
                out[(r, c)] -= s;
            }
            if r + 1 < h && mask[(r + 1, c)] > half {
                let e1 = pred[(r + 1, c)] - gt[(r + 1, c)];
                let s = sign(e1 - e0) * sy;
                out[(r + 1, c)] += s;
                out[(r, c)] -= s;
            }
        }
    }
    out
}

// ---------------------------------------------------------------------------
// Depth-smoothness term
// ---------------------------------------------------------------------------

/// Edge-weighted second-order smoothness of the predicted depth patch:
/// mean of `exp(-|lap C|) (|Dxx| + |Dxy| + |Dyy|)` with 3-point second
/// differences, the mixed term by forward-forward differences, each family
/// averaged over its own valid stencil sites. Stencils touching a masked
/// pixel are dropped.
pub fn loss_smooth<S: Real>(
    pred: &Array2<S>,
    laplacian: &Array2<S>,
    mask: &Array2<S>,
) -> Result<S> {
    check_patch(pred, laplacian, mask, 3)?;
    let (h, w) = pred.dim();
    let half: S = rl(0.5);
    let weight = |r: usize, c: usize| (-laplacian[(r, c)]).exp();

    let mut acc_xx = S::zero();
    let mut n_xx = 0usize;
    let mut acc_yy = S::zero();
    let mut n_yy = 0usize;
    let mut acc_xy = S::zero();
    let mut n_xy = 0usize;
    for r in 0..h {
        for c in 0..w {
            if c >= 1 && c + 1 < w
                && mask[(r, c - 1)] > half
                && mask[(r, c)] > half
                && mask[(r, c + 1)] > half
            {
                let dxx = pred[(r, c - 1)] - rl::<S>(2.0) * pred[(r, c)] + pred[(r, c + 1)];
                acc_xx += weight(r, c) * dxx.abs();
                n_xx += 1;
            }
            if r >= 1 && r + 1 < h
                && mask[(r - 1, c)] > half
                && mask[(r, c)] > half
                && mask[(r + 1, c)] > half
            {
                let dyy = pred[(r - 1, c)] - rl::<S>(2.0) * pred[(r, c)] + pred[(r + 1, c)];
                acc_yy += weight(r, c) * dyy.abs();
                n_yy += 1;
            }
            if r + 1 < h && c + 1 < w
                && mask[(r, c)] > half
                && mask[(r, c + 1)] > half
                && mask[(r + 1, c)] > half
                && mask[(r + 1, c + 1)] > half
            {
                let dxy = pred[(r + 1, c + 1)] - pred[(r + 1, c)] - pred[(r, c + 1)] + pred[(r, c)];
                acc_xy += weight(r, c) * dxy.abs();
                n_xy += 1;
            }
        }
    }
    let mean = |acc: S, n: usize| if n > 0 { acc / rl(n as f64) } else { S::zero() };
    Ok(mean(acc_xx, n_xx) + mean(acc_xy, n_xy) + mean(acc_yy, n_yy))
}

/// Adjoint of [`loss_smooth`] with respect to the predicted depth patch.
pub fn loss_smooth_backward<S: Real>(
    pred: &Array2<S>,
    laplacian: &Array2<S>,
    mask: &Array2<S>,
    upstream: S,
) -> Array2<S> {
    let (h, w) = pred.dim();
    let half: S = rl(0.5);
    let weight = |r: usize, c: usize| (-laplacian[(r, c)]).exp();
    let sign = |v: S| {
        if v > S::zero() {
            S::one()
        } else if v < S::zero() {
            -S::one()
        } else {
            S::zero()
        }
    };

    // site counts per family
    let mut n_xx = 0usize;
    let mut n_yy = 0usize;
    let mut n_xy = 0usize;
    for r in 0..h {
        for c in 0..w {
            if c >= 1 && c + 1 < w
                && mask[(r, c - 1)] > half && mask[(r, c)] > half && mask[(r, c + 1)] > half
            {
                n_xx += 1;
            }
            if r >= 1 && r + 1 < h
                && mask[(r - 1, c)] > half && mask[(r, c)] > half && mask[(r + 1, c)] > half
            {
                n_yy += 1;
            }
            if r + 1 < h && c + 1 < w
                && mask[(r, c)] > half && mask[(r, c + 1)] > half
                && mask[(r + 1, c)] > half && mask[(r + 1, c + 1)] > half
            {
                n_xy += 1;
            }
        }
    }
    let sxx = if n_xx > 0 { upstream / rl(n_xx as f64) } else { S::zero() };
    let syy = if n_yy > 0 { upstream / rl(n_yy as f64) } else { S::zero() };
    let sxy = if n_xy > 0 { upstream / rl(n_xy as f64) } else { S::zero() };

    let mut out = Array2::zeros(pred.dim());
    let two: S = rl(2.0);
    for r in 0..h {
        for c in 0..w {
            if c >= 1 && c + 1 < w
                && mask[(r, c - 1)] > half && mask[(r, c)] > half && mask[(r, c + 1)] > half
            {
                let dxx = pred[(r, c - 1)] - two * pred[(r, c)] + pred[(r, c + 1)];
                let g = sign(dxx) * weight(r, c) * sxx;
                out[(r, c - 1)] += g;
                out[(r, c)] -= two * g;
                out[(r, c + 1)] += g;
            }
            if r >= 1 && r + 1 < h
                && mask[(r - 1, c)] > half && mask[(r, c)] > half && mask[(r + 1, c)] > half
            {
                let dyy = pred[(r - 1, c)] - two * pred[(r, c)] + pred[(r + 1, c)];
                let g = sign(dyy) * weight(r, c) * syy;
                out[(r - 1, c)] += g;
                out[(r, c)] -= two * g;
                out[(r + 1, c)] += g;
            }
            if r + 1 < h && c + 1 < w
                && mask[(r, c)] > half && mask[(r, c + 1)] > half
                && mask[(r + 1, c)] > half && mask[(r + 1, c + 1)] > half
            {
                let dxy = pred[(r + 1, c + 1)] - pred[(r + 1, c)] - pred[(r, c + 1)] + pred[(r, c)];
                let g = sign(dxy) * weight(r, c) * sxy;
                out[(r + 1, c + 1)] += g;
                out[(r + 1, c)] -= g;
                out[(r, c + 1)] -= g;
                out[(r, c)] += g;
            }
        }
    }
    out
}

// ---------------------------------------------------------------------------
// Temporal term
// ---------------------------------------------------------------------------

/// Squared displacement between warped probe points at adjacent times,
/// averaged over the probes.
///
/// Interior times use both neighbors; at the time-range edges the single
/// available neighbor term is halved.
pub fn loss_tv<S: Real, F: ScrewField<S>>(
    field: &F,
    probe_points: &Array2<S>,
    t: S,
    dt: S,
    opts: WarpOptions,
) -> Result<S> {
    if !(dt > S::zero()) {
        return Err(Error::invalid("dt must be positive"));
    }
    let n = probe_points.dim().0;
    if n == 0 {
        return Err(Error::UndefinedBatch);
    }
    let warp_at = |time: S| -> Vec<[S; 3]> {
        (0..n)
            .map(|i| {
                let x = [
                    probe_points[(i, 0)],
                    probe_points[(i, 1)],
                    probe_points[(i, 2)],
                ];
                let s = field.screw(x, time);
                warp_point_generic(&s.a, &s.b, &x, opts.unnormalized_translation)
            })
            .collect()
    };
    let center = warp_at(t);
    let has_prev = t - dt >= -S::epsilon();
    let has_next = t + dt <= S::one() + S::epsilon();
    let edge_scale: S = if has_prev && has_next {
        S::one()
    } else {
        rl(0.5)
    };
    let mut acc = S::zero();
    for (present, time) in [(has_prev, t - dt), (has_next, t + dt)] {
        if !present {
            continue;
        }
        let shifted = warp_at(time);
        for i in 0..n {
            let mut d2 = S::zero();
            for c in 0..3 {
                let d = center[i][c] - shifted[i][c];
                d2 += d * d;
            }
            acc += edge_scale * d2;
        }
    }
    Ok(acc / rl(n as f64))
}

/// Value and adjoints of one temporal difference term
/// `scale * mean_i |center_i - shifted_i|^2`.
///
/// Returns `(value, d/dcenter, d/dshifted)`.
pub fn tv_pair_with_grad<S: Real>(
    center: &Array2<S>,
    shifted: &Array2<S>,
    scale: S,
    upstream: S,
) -> (S, Array2<S>, Array2<S>) {
    let n = center.dim().0;
    let inv_n: S = scale / rl(n as f64);
    let mut value = S::zero();
    let mut dc = Array2::zeros(center.dim());
    let mut ds = Array2::zeros(shifted.dim());
    let two: S = rl(2.0);
    for i in 0..n {
        for c in 0..3 {
            let d = center[(i, c)] - shifted[(i, c)];
            value += d * d;
            let g = upstream * inv_n * two * d;
            dc[(i, c)] = g;
            ds[(i, c)] = -g;
        }
    }
    (value * inv_n, dc, ds)
}


fn check_rows<S: Real>(pred: &Array2<S>, gt: &Array2<S>, mask: &[S]) -> Result<()> {
    if pred.dim() != gt.dim() || pred.dim().0 != mask.len() {
        return Err(Error::Validation("batch shape mismatch".into()));
    }
    Ok(())
}
