//! Linear-chain CRF over per-position emission scores.
//!
//! Transitions live in a `[k+2, k+2]` matrix with two virtual states:
//! start = `k`, stop = `k+1`. A path `y` scores
//! `trans[start][y0] + sum_t em[t][yt] + sum_t trans[yt][yt+1] + trans[yL-1][stop]`.
//! The log-partition runs the forward algorithm in log space; gradients
//! come from forward-backward marginals.

use alloc::format;
use alloc::vec;
use alloc::vec::Vec;

use crate::error::{GlyceError, Result};
use crate::math::{exp, log_sum_exp};
use crate::tensor::Tensor;

fn check_dims(emissions: &Tensor, transitions: &Tensor, labels: Option<&[usize]>) -> Result<(usize, usize)> {
    let es = emissions.shape();
    if es.len() != 2 || es[0] == 0 || es[1] == 0 {
        return Err(GlyceError::Shape(format!(
            "crf: emissions {es:?}, expected non-empty [l, k]"
        )));
    }
    let (l, k) = (es[0], es[1]);
    let ts = transitions.shape();
    if ts != [k + 2, k + 2] {
        return Err(GlyceError::Shape(format!(
            "crf: transitions {ts:?}, expected [{}, {}]",
            k + 2,
            k + 2
        )));
    }
    if let Some(ls) = labels {
        check_labels(ls, l, k)?;
    }
    Ok((l, k))
}

fn check_labels(labels: &[usize], l: usize, k: usize) -> Result<()> {
    if labels.len() != l {
        return Err(GlyceError::Contract(format!(
            "crf: {} labels for {l} positions",
            labels.len()
        )));
    }
    for &y in labels {
        if y >= k {
            return Err(GlyceError::Index(format!(
                "crf: label {y} out of range for {k} states"
            )));
        }
    }
    Ok(())
}

/// Score of one labeled path.
pub fn crf_score(emissions: &Tensor, transitions: &Tensor, labels: &[usize]) -> Result<f64> {
    let (l, k) = check_dims(emissions, transitions, Some(labels))?;
    Ok(score_raw(emissions.values(), l, k, transitions.values(), labels))
}

fn score_raw(em: &[f64], l: usize, k: usize, trans: &[f64], labels: &[usize]) -> f64 {
    let kt = k + 2;
    let (start, stop) = (k, k + 1);
    let mut s = trans[start * kt + labels[0]];
    for t in 0..l {
        s += em[t * k + labels[t]];
        if t + 1 < l {
            s += trans[labels[t] * kt + labels[t + 1]];
        }
    }
    s + trans[labels[l - 1] * kt + stop]
}

/// Log of the path-sum (partition function), forward algorithm.
pub fn crf_log_partition(emissions: &Tensor, transitions: &Tensor) -> Result<f64> {
    let (l, k) = check_dims(emissions, transitions, None)?;
    let alpha = forward_pass(emissions.values(), l, k, transitions.values());
    Ok(final_log_z(&alpha, l, k, transitions.values()))
}

fn forward_pass(em: &[f64], l: usize, k: usize, trans: &[f64]) -> Vec<f64> {
    let kt = k + 2;
    let start = k;
    let mut alpha = vec![0.0; l * k];
    for j in 0..k {
        alpha[j] = trans[start * kt + j] + em[j];
    }
    let mut scratch = vec![0.0; k];
    for t in 1..l {
        for j in 0..k {
            for i in 0..k {
                scratch[i] = alpha[(t - 1) * k + i] + trans[i * kt + j];
            }
            alpha[t * k + j] = em[t * k + j] + log_sum_exp(&scratch);
        }
    }
    alpha
}

fn final_log_z(alpha: &[f64], l: usize, k: usize, trans: &[f64]) -> f64 {
    let kt = k + 2;
    let stop = k + 1;
    let finals: Vec<f64> = (0..k)
        .map(|i| alpha[(l - 1) * k + i] + trans[i * kt + stop])
        .collect();
    log_sum_exp(&finals)
}

/// `log_partition - score`; non-negative up to rounding.
pub fn crf_nll(emissions: &Tensor, transitions: &Tensor, labels: &[usize]) -> Result<f64> {
    Ok(crf_log_partition(emissions, transitions)? - crf_score(emissions, transitions, labels)?)
}

/// Most probable path and its score; ties break toward the lower label
/// index at every backtrack step, so the result is deterministic.
pub fn crf_viterbi(emissions: &Tensor, transitions: &Tensor) -> Result<(Vec<usize>, f64)> {
    let (l, k) = check_dims(emissions, transitions, None)?;
    let em = emissions.values();
    let trans = transitions.values();
    let kt = k + 2;
    let (start, stop) = (k, k + 1);
    let mut delta = vec![f64::NEG_INFINITY; l * k];
    let mut back = vec![0usize; l * k];
    for j in 0..k {
        delta[j] = trans[start * kt + j] + em[j];
    }
    for t in 1..l {
        for j in 0..k {
            let mut best = f64::NEG_INFINITY;
            let mut best_i = 0;
            for i in 0..k {
                let s = delta[(t - 1) * k + i] + trans[i * kt + j];
                if s > best {
                    best = s;
                    best_i = i;
                }
            }
            delta[t * k + j] = best + em[t * k + j];
            back[t * k + j] = best_i;
        }
    }
    let mut best = f64::NEG_INFINITY;
    let mut last = 0;
    for i in 0..k {
        let s = delta[(l - 1) * k + i] + trans[i * kt + stop];
        if s > best {
            best = s;
            last = i;
        }
    }
    let mut path = vec![0usize; l];
    path[l - 1] = last;
    for t in (1..l).rev() {
        path[t - 1] = back[t * k + path[t]];
    }
    Ok((path, best))
}

/// NLL plus its gradients with respect to the emissions (`[l*k]`) and the
/// transition matrix (`[(k+2)^2]`): expected counts minus observed counts.
pub(crate) fn nll_with_grads(
    em: &[f64],
    l: usize,
    k: usize,
    trans: &[f64],
    labels: &[usize],
) -> Result<(f64, Vec<f64>, Vec<f64>)> {
    if l == 0 || k == 0 {
        return Err(GlyceError::Shape("crf: empty sequence or label set".into()));
    }
    check_labels(labels, l, k)?;
    let kt = k + 2;
    let (start, stop) = (k, k + 1);

    let alpha = forward_pass(em, l, k, trans);
    let log_z = final_log_z(&alpha, l, k, trans);

    // beta[t][i] = log sum over suffixes starting with state i at t+1..
    let mut beta = vec![0.0; l * k];
    for i in 0..k {
        beta[(l - 1) * k + i] = trans[i * kt + stop];
    }
    let mut scratch = vec![0.0; k];
    for t in (0..l - 1).rev() {
        for i in 0..k {
            for j in 0..k {
                scratch[j] = trans[i * kt + j] + em[(t + 1) * k + j] + beta[(t + 1) * k + j];
            }
            beta[t * k + i] = log_sum_exp(&scratch);
        }
    }

    let mut d_em = vec![0.0; l * k];
    for t in 0..l {
        for j in 0..k {
            let marginal = exp(alpha[t * k + j] + beta[t * k + j] - log_z);
            let observed = if labels[t] == j { 1.0 } else { 0.0 };
            d_em[t * k + j] = marginal - observed;
        }
    }

    let mut d_trans = vec![0.0; kt * kt];
    for j in 0..k {
        let first = exp(alpha[j] + beta[j] - log_z);
        let observed = if labels[0] == j { 1.0 } else { 0.0 };
        d_trans[start * kt + j] = first - observed;
    }
    for i in 0..k {
        let last = exp(alpha[(l - 1) * k + i] + beta[(l - 1) * k + i] - log_z);
        let observed = if labels[l - 1] == i { 1.0 } else { 0.0 };
        d_trans[i * kt + stop] = last - observed;
    }
    for t in 0..l.saturating_sub(1) {
        for i in 0..k {
            for j in 0..k {
                let pair = exp(
                    alpha[t * k + i]
                        + trans[i * kt + j]
                        + em[(t + 1) * k + j]
                        + beta[(t + 1) * k + j]
                        - log_z,
                );
                let observed = if labels[t] == i && labels[t + 1] == j { 1.0 } else { 0.0 };
                d_trans[i * kt + j] += pair - observed;
            }
        }
    }

    let nll = log_z - score_raw(em, l, k, trans, labels);
    Ok((nll, d_em, d_trans))
}

/// Every path of length `l` over `k` states; oracle helper for tests.
pub fn enumerate_paths(l: usize, k: usize) -> Vec<Vec<usize>> {
    let mut paths = Vec::new();
    let mut cur = vec![0usize; l];
    loop {
        paths.push(cur.clone());
        let mut t = l;
        loop {
            if t == 0 {
                return paths;
            }
            t -= 1;
            cur[t] += 1;
            if cur[t] < k {
                break;
            }
            cur[t] = 0;
        }
    }
}
