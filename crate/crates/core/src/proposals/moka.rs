//! Mixture weights for the MoKA proposal.

use log::warn;

use crate::kernels::{kernel_sums_many, InteractionKernel, KernelSumPlan};
use crate::points::Points;

use super::self_normalize;

const EG_STEPS: usize = 200;
const EG_STEP: f64 = 0.1;
const POLISH_SWEEPS: usize = 20;
const LOG_RATIO_CLAMP: f64 = 30.0;
const TIE_RTOL: f64 = 1e-12;

/// Per-kernel swarm densities `D_p(X_i) = (K_p * mu)(X_i)`, each normalized
/// to sum to one over the swarm. Returns `None` when every kernel density
/// vanishes (which cannot happen for a nonempty swarm in exact arithmetic).
pub fn normalized_kernel_columns(
    swarm: &Points,
    kernels: &[InteractionKernel],
    plan: &KernelSumPlan,
) -> Vec<Option<Vec<f64>>> {
    let n = swarm.len();
    let w = vec![1.0 / n as f64; n];
    kernel_sums_many(swarm, swarm, kernels, &w, plan)
        .into_iter()
        .map(|col| {
            let s: f64 = col.iter().sum();
            (s > 0.0 && s.is_finite()).then(|| col.iter().map(|v| v / s).collect())
        })
        .collect()
}

/// `(1/N) sum_i |sum_p a_p D_p(X_i) - pi~(X_i)|`.
pub fn markov_objective(cols: &[Vec<f64>], pi: &[f64], alphas: &[f64]) -> f64 {
    let n = pi.len();
    let mut acc = 0.0;
    for i in 0..n {
        let mut m = -pi[i];
        for (c, a) in cols.iter().zip(alphas) {
            m += a * c[i];
        }
        acc += m.abs();
    }
    acc / n as f64
}

/// Minimizes the L1 mismatch between the kernel mixture and the
/// self-normalized target over the simplex.
///
/// Exponentiated-gradient descent from the uniform point, followed by exact
/// line searches along pairwise mass transfers. The result is never worse
/// than the uniform point or any vertex; ties (up to a relative 1e-12)
/// resolve to uniform.
pub fn moka_weights_markov(
    swarm: &Points,
    kernels: &[InteractionKernel],
    log_pi: &[f64],
    plan: &KernelSumPlan,
) -> Vec<f64> {
    let p = kernels.len();
    let uniform = vec![1.0 / p as f64; p];
    if p == 1 {
        return vec![1.0];
    }
    let raw = normalized_kernel_columns(swarm, kernels, plan);
    if raw.iter().all(Option::is_none) {
        warn!("all kernel densities vanish on the swarm; using uniform mixture weights");
        return uniform;
    }
    let n = swarm.len();
    // A kernel whose column vanishes contributes nothing.
    let cols: Vec<Vec<f64>> = raw.into_iter().map(|c| c.unwrap_or_else(|| vec![0.0; n])).collect();
    let pi = self_normalize(log_pi);
    optimize_simplex_l1(&cols, &pi)
}

pub(crate) fn optimize_simplex_l1(cols: &[Vec<f64>], pi: &[f64]) -> Vec<f64> {
    let p = cols.len();
    let n = pi.len();
    let uniform = vec![1.0 / p as f64; p];
    let f_uniform = markov_objective(cols, pi, &uniform);

    let mut a = uniform.clone();
    let mut best = a.clone();
    let mut f_best = f_uniform;
    let mut grad = vec![0.0; p];
    for _ in 0..EG_STEPS {
        grad.iter_mut().for_each(|g| *g = 0.0);
        for i in 0..n {
            let mut m = -pi[i];
            for (c, ak) in cols.iter().zip(&a) {
                m += ak * c[i];
            }
            let s = if m > 0.0 {
                1.0
            } else if m < 0.0 {
                -1.0
            } else {
                0.0
            };
            for (g, c) in grad.iter_mut().zip(cols) {
                *g += s * c[i];
            }
        }
        let gmax = grad.iter().fold(0.0f64, |m, g| m.max(g.abs()));
        if gmax == 0.0 {
            break;
        }
        let mut z = 0.0;
        for (ak, g) in a.iter_mut().zip(&grad) {
            *ak *= (-EG_STEP * g / gmax).exp();
            z += *ak;
        }
        a.iter_mut().for_each(|ak| *ak /= z);
        let f = markov_objective(cols, pi, &a);
        if f < f_best {
            f_best = f;
            best.copy_from_slice(&a);
        }
    }

    for v in 0..p {
        let mut e = vec![0.0; p];
        e[v] = 1.0;
        let f = markov_objective(cols, pi, &e);
        if f < f_best {
            f_best = f;
            best = e;
        }
    }

    polish(cols, pi, &mut best, &mut f_best);

    // Differences at rounding level count as ties.
    if f_best < f_uniform * (1.0 - TIE_RTOL) {
        best
    } else {
        uniform
    }
}

/// Exact minimization along `a + t (e_p - e_q)` for every ordered pair,
/// repeated until no pair improves. The objective restricted to such a line
/// is convex piecewise linear, minimized at a weighted median of its
/// breakpoints.
fn polish(cols: &[Vec<f64>], pi: &[f64], a: &mut [f64], f_best: &mut f64) {
    let p = cols.len();
    let n = pi.len();
    let mut resid = vec![0.0; n];
    let mut pts: Vec<(f64, f64)> = Vec::with_capacity(n);
    for _ in 0..POLISH_SWEEPS {
        let mut improved = false;
        for u in 0..p {
            for v in (u + 1)..p {
                for (i, r) in resid.iter_mut().enumerate() {
                    let mut m = -pi[i];
                    for (c, ak) in cols.iter().zip(a.iter()) {
                        m += ak * c[i];
                    }
                    *r = m;
                }
                // t moves mass from v to u: a_u += t, a_v -= t, t in [-a_u, a_v].
                pts.clear();
                for i in 0..n {
                    let c = cols[u][i] - cols[v][i];
                    if c != 0.0 {
                        pts.push((-resid[i] / c, c.abs()));
                    }
                }
                if pts.is_empty() {
                    continue;
                }
                pts.sort_by(|x, y| x.0.total_cmp(&y.0));
                let total: f64 = pts.iter().map(|x| x.1).sum();
                let mut acc = 0.0;
                let mut t = pts[pts.len() - 1].0;
                for &(tk, wk) in &pts {
                    acc += wk;
                    if acc >= 0.5 * total {
                        t = tk;
                        break;
                    }
                }
                let t = t.clamp(-a[u], a[v]);
                if t == 0.0 {
                    continue;
                }
                let mut cand = a.to_vec();
                cand[u] += t;
                cand[v] -= t;
                cand[u] = cand[u].max(0.0);
                cand[v] = cand[v].max(0.0);
                let z: f64 = cand.iter().sum();
                cand.iter_mut().for_each(|x| *x /= z);
                let f = markov_objective(cols, pi, &cand);
                if f < *f_best * (1.0 - 1e-15) {
                    *f_best = f;
                    a.copy_from_slice(&cand);
                    improved = true;
                }
            }
        }
        if !improved {
            break;
        }
    }
}

/// Adaptive weights from the previous step: kernel `p` gets weight
/// proportional to the geometric mean of `alpha` over the draws that used
/// it (log ratios clamped to `[-30, 30]`). Kernels without draws get
/// `floor`; all weights are floored then renormalized. `components` holds
/// the kernel of each draw (`None` for exploration draws, which are ignored).
pub fn moka_weights_adaptive(n_kernels: usize, components: &[Option<usize>], log_alpha: &[f64], floor: f64) -> Vec<f64> {
    let mut sum = vec![0.0; n_kernels];
    let mut count = vec![0usize; n_kernels];
    for (c, la) in components.iter().zip(log_alpha) {
        if let Some(p) = *c {
            sum[p] += la.clamp(-LOG_RATIO_CLAMP, LOG_RATIO_CLAMP);
            count[p] += 1;
        }
    }
    let means: Vec<Option<f64>> = sum
        .iter()
        .zip(&count)
        .map(|(s, c)| (*c > 0).then(|| s / *c as f64))
        .collect();
    let top = means.iter().flatten().copied().fold(f64::NEG_INFINITY, f64::max);
    if top == f64::NEG_INFINITY {
        return vec![1.0 / n_kernels as f64; n_kernels];
    }
    let raw: Vec<f64> = means.iter().map(|m| m.map_or(0.0, |m| (m - top).exp())).collect();
    let z: f64 = raw.iter().sum();
    let mut w: Vec<f64> = raw
        .iter()
        .zip(&means)
        .map(|(r, m)| if m.is_some() { (r / z).max(floor) } else { floor })
        .collect();
    let z: f64 = w.iter().sum();
    w.iter_mut().for_each(|x| *x /= z);
    w
}
