//! Recording MoE inputs, routing weights and expert Jacobian statistics.
//!
//! Per-token Jacobians are never materialised. Since
//! `J_e(x) = W2·diag(gelu'(W1·x + b1))·W1` is linear in the slope vector, the
//! routing-weighted mean Jacobian equals `W2·diag(s̄)·W1` where `s̄` is the
//! routing-weighted mean slope, which is what the buffer accumulates.

use moegeom_core::matrix::Matrix;
use moegeom_core::pipeline::{ExpertJacobianStat, LayerCapture};
use moegeom_core::Scalar;

use crate::activation::gelu_prime;
use crate::expert::ExpertMlp;
use crate::transformer::{Forward, MoeTransformer};
use crate::ModelError;

#[derive(Debug, Clone, PartialEq)]
struct LayerRecord {
    hidden: Vec<f64>,
    routing: Vec<f64>,
    /// Per expert: `Σ g·gelu'(pre)` over routed tokens.
    slope_sum: Vec<Vec<f64>>,
    weight: Vec<f64>,
    count: Vec<usize>,
}

/// Activations gathered over one or more forward passes of a single model.
#[derive(Debug, Clone, PartialEq)]
pub struct CaptureBuffer {
    d_model: usize,
    n_experts: usize,
    layers: Vec<LayerRecord>,
}

impl CaptureBuffer {
    pub fn new<T: Scalar>(model: &MoeTransformer<T>) -> Self {
        let c = &model.config;
        let record = LayerRecord {
            hidden: Vec::new(),
            routing: Vec::new(),
            slope_sum: vec![vec![0.0; c.d_hidden]; c.n_experts],
            weight: vec![0.0; c.n_experts],
            count: vec![0; c.n_experts],
        };
        Self {
            d_model: c.d_model,
            n_experts: c.n_experts,
            layers: vec![record; c.n_layers],
        }
    }

    pub fn n_layers(&self) -> usize {
        self.layers.len()
    }

    /// Tokens recorded so far (the same for every layer).
    pub fn n_tokens(&self) -> usize {
        self.layers.first().map_or(0, |l| l.hidden.len() / self.d_model)
    }

    /// Appends the MoE inputs and routing weights of every layer of `fwd`.
    pub fn record<T: Scalar>(&mut self, model: &MoeTransformer<T>, fwd: &Forward<T>) -> Result<(), ModelError> {
        let c = &model.config;
        if (c.d_model, c.n_experts, c.n_layers) != (self.d_model, self.n_experts, self.layers.len()) {
            return Err(ModelError::Config(
                "capture buffer was created for a different architecture".into(),
            ));
        }
        let e_count = self.n_experts;
        for (l, rec) in self.layers.iter_mut().enumerate() {
            rec.hidden.extend(fwd.moe_inputs(l).iter().map(|v| v.as_f64()));
            let gates = fwd.gates(l);
            rec.routing.extend(gates.iter().map(|v| v.as_f64()));
            for e in 0..e_count {
                let (rows, pre) = fwd.expert_pre(l, e);
                let h = rec.slope_sum[e].len();
                for (i, &r) in rows.iter().enumerate() {
                    let g = gates[r * e_count + e].as_f64();
                    for (acc, &z) in rec.slope_sum[e].iter_mut().zip(&pre[i * h..(i + 1) * h]) {
                        *acc += g * gelu_prime(z).as_f64();
                    }
                    rec.weight[e] += g;
                    rec.count[e] += 1;
                }
            }
        }
        Ok(())
    }

    /// One [`LayerCapture`] per MoE layer, with weighted-mean Jacobians built
    /// from `model`'s expert weights.
    pub fn to_layer_captures<T: Scalar>(&self, model: &MoeTransformer<T>) -> Result<Vec<LayerCapture>, ModelError> {
        let n = self.n_tokens();
        self.layers
            .iter()
            .zip(&model.blocks)
            .enumerate()
            .map(|(l, (rec, block))| {
                let jacobians = block
                    .moe
                    .experts
                    .iter()
                    .enumerate()
                    .map(|(e, ex)| {
                        let mean = if rec.count[e] == 0 {
                            Matrix::zeros(self.d_model, self.d_model)
                        } else {
                            let slope: Vec<f64> = rec.slope_sum[e].iter().map(|s| s / rec.weight[e]).collect();
                            cast_expert(ex).jacobian_from_slope(&slope)
                        };
                        ExpertJacobianStat::from_parts(e, mean, rec.weight[e], rec.count[e])
                    })
                    .collect::<Result<Vec<_>, _>>()?;
                let capture = LayerCapture {
                    layer_id: l,
                    hidden: Matrix::new(n, self.d_model, rec.hidden.clone())?,
                    routing: Matrix::new(n, self.n_experts, rec.routing.clone())?,
                    jacobians: Some(jacobians),
                    dense: None,
                };
                capture.validate()?;
                Ok(capture)
            })
            .collect()
    }
}

fn cast_expert<T: Scalar>(ex: &ExpertMlp<T>) -> ExpertMlp<f64> {
    ExpertMlp {
        w1: ex.w1.cast(),
        b1: ex.b1.iter().map(|v| v.as_f64()).collect(),
        w2: ex.w2.cast(),
        b2: ex.b2.iter().map(|v| v.as_f64()).collect(),
    }
}

/// Which corpus tokens a capture run reads.
#[derive(Debug, Clone, Copy, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
pub struct CaptureOptions {
    /// Total tokens, rounded down to whole `block_size` windows.
    pub tokens: usize,
}

impl Default for CaptureOptions {
    fn default() -> Self {
        Self { tokens: 4096 }
    }
}

/// Start offsets of the capture windows: evenly spaced over the corpus.
pub fn capture_offsets(corpus_len: usize, block_size: usize, tokens: usize) -> Result<Vec<usize>, ModelError> {
    let windows = tokens / block_size;
    if windows == 0 || corpus_len < block_size {
        return Err(ModelError::CorpusTooShort {
            len: corpus_len,
            needed: block_size.max(tokens),
        });
    }
    let span = corpus_len - block_size;
    Ok((0..windows)
        .map(|i| if windows == 1 { 0 } else { i * span / (windows - 1) })
        .collect())
}

/// Runs `model` over deterministic windows of `corpus` and records every layer.
pub fn capture_corpus<T: Scalar>(
    model: &MoeTransformer<T>,
    corpus: &[u8],
    opts: CaptureOptions,
) -> Result<CaptureBuffer, ModelError> {
    let t = model.config.block_size;
    let offsets = capture_offsets(corpus.len(), t, opts.tokens)?;
    let mut buf = CaptureBuffer::new(model);
    for chunk in offsets.chunks(model.config.batch_size) {
        let tokens: Vec<usize> = chunk
            .iter()
            .flat_map(|&o| corpus[o..o + t].iter().map(|&b| b as usize))
            .collect();
        let fwd = model.forward(&tokens, chunk.len())?;
        buf.record(model, &fwd)?;
    }
    Ok(buf)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::config::{ModelConfig, RouterKind};
    use moegeom_core::pipeline::{stream_jacobians, JacobianWeighting};

    fn small(router: RouterKind) -> MoeTransformer<f64> {
        MoeTransformer::new(ModelConfig {
            n_layers: 2,
            n_experts: 4,
            d_model: 8,
            d_hidden: 16,
            block_size: 8,
            batch_size: 3,
            n_heads: 2,
            router,
            seed: 5,
            init_std: 0.2,
            ..Default::default()
        })
        .unwrap()
    }

    #[test]
    fn rows_and_simplex() {
        let m = small(RouterKind::top_k(2));
        let mut buf = CaptureBuffer::new(&m);
        m.model_forward(&[10, 20, 30, 40, 50], Some(&mut buf)).unwrap();
        let caps = buf.to_layer_captures(&m).unwrap();
        assert_eq!(caps.len(), 2);
        for c in &caps {
            assert_eq!(c.hidden.shape(), (5, 8));
            for r in 0..5 {
                let s: f64 = c.routing.row(r).iter().sum();
                assert!((s - 1.0).abs() < 1e-9);
                assert_eq!(c.routing.row(r).iter().filter(|&&g| g > 0.0).count(), 2);
            }
        }
    }

    #[test]
    fn recorded_routing_is_the_mixture_routing() {
        let m = small(RouterKind::soft());
        let tokens = [1, 2, 3, 4];
        let fwd = m.forward(&tokens, 1).unwrap();
        let mut buf = CaptureBuffer::new(&m);
        buf.record(&m, &fwd).unwrap();
        let caps = buf.to_layer_captures(&m).unwrap();
        for (l, (c, b)) in caps.iter().zip(&m.blocks).enumerate() {
            assert_eq!(c.routing.as_slice(), fwd.gates(l));
            assert_eq!(c.hidden.as_slice(), fwd.moe_inputs(l));
            // the single-token path reduces in a different order
            for r in 0..tokens.len() {
                for (a, g) in b.moe.gates(c.hidden.row(r)).iter().zip(c.routing.row(r)) {
                    assert!((a - g).abs() < 1e-14);
                }
            }
        }
    }

    #[test]
    fn factored_means_match_streamed_per_token_jacobians() {
        for router in [RouterKind::top_k(2), RouterKind::soft()] {
            let m = small(router);
            let corpus: Vec<u8> = (0..200u32).map(|i| (i * 37 % 251) as u8).collect();
            let buf = capture_corpus(&m, &corpus, CaptureOptions { tokens: 48 }).unwrap();
            let caps = buf.to_layer_captures(&m).unwrap();
            for (c, b) in caps.iter().zip(&m.blocks) {
                let streamed = stream_jacobians(&c.routing, 8, 8, JacobianWeighting::Routing, |t, e| {
                    b.moe.experts[e].jacobian(c.hidden.row(t))
                });
                for (a, s) in c.jacobians.as_ref().unwrap().iter().zip(&streamed) {
                    assert_eq!(a.sample_count(), s.sample_count());
                    assert!((a.total_weight() - s.total_weight()).abs() < 1e-10);
                    assert!(a.mean_jacobian().max_abs_diff(s.mean_jacobian()) < 1e-10);
                }
            }
        }
    }

    #[test]
    fn offsets_cover_corpus() {
        assert_eq!(capture_offsets(100, 10, 30).unwrap(), vec![0, 45, 90]);
        assert_eq!(capture_offsets(100, 10, 10).unwrap(), vec![0]);
        assert!(capture_offsets(5, 10, 30).is_err());
    }
}
