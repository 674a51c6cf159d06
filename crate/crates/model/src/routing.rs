//! Router nonlinearities and their vector-Jacobian product.

use moegeom_core::Scalar;

use crate::config::RouterKind;

/// Routing weights for one token. Top-k keeps the `k` largest logits
/// (ties broken toward the lower expert index) and renormalises their
/// softmax; fully-soft is a plain softmax. Logits are divided by the
/// temperature first.
pub fn route<T: Scalar>(logits: &[T], kind: &RouterKind) -> Vec<T> {
    let mut out = vec![T::zero(); logits.len()];
    route_into(logits, kind, &mut out);
    out
}

pub fn route_into<T: Scalar>(logits: &[T], kind: &RouterKind, out: &mut [T]) {
    let inv_t = T::one() / T::lit(kind.temperature());
    out.iter_mut().for_each(|v| *v = T::zero());
    match *kind {
        RouterKind::FullySoft { .. } => {
            let all: Vec<usize> = (0..logits.len()).collect();
            softmax_over(logits, inv_t, &all, out);
        }
        RouterKind::TopK { k, .. } => {
            let selected = top_k_indices(logits, k);
            softmax_over(logits, inv_t, &selected, out);
        }
    }
}

/// Indices of the `k` largest logits, by descending logit then ascending index.
pub fn top_k_indices<T: Scalar>(logits: &[T], k: usize) -> Vec<usize> {
    let mut idx: Vec<usize> = (0..logits.len()).collect();
    idx.sort_by(|&a, &b| {
        logits[b]
            .partial_cmp(&logits[a])
            .unwrap_or(std::cmp::Ordering::Equal)
            .then(a.cmp(&b))
    });
    idx.truncate(k.min(logits.len()));
    idx.sort_unstable();
    idx
}

fn softmax_over<T: Scalar>(logits: &[T], inv_t: T, selected: &[usize], out: &mut [T]) {
    let max = selected.iter().map(|&i| logits[i]).fold(T::neg_infinity(), T::max);
    let mut total = T::zero();
    for &i in selected {
        let e = ((logits[i] - max) * inv_t).exp();
        out[i] = e;
        total += e;
    }
    for &i in selected {
        out[i] /= total;
    }
}

/// Gradient with respect to the logits given `d_gates`, treating the top-k
/// selection as fixed: only experts with a positive gate receive gradient.
pub fn route_backward<T: Scalar>(gates: &[T], d_gates: &[T], temperature: f64, d_logits: &mut [T]) {
    let inv_t = T::one() / T::lit(temperature);
    let inner: T = gates
        .iter()
        .zip(d_gates)
        .filter(|(g, _)| **g > T::zero())
        .map(|(&g, &d)| g * d)
        .sum();
    for ((dl, &g), &dg) in d_logits.iter_mut().zip(gates).zip(d_gates) {
        *dl = if g > T::zero() {
            g * (dg - inner) * inv_t
        } else {
            T::zero()
        };
    }
}
