//! Layer captures stored in an MGT1 container.
//!
//! Per layer `L` the following sections are recognised; anything else is
//! ignored by the reader:
//!
//! | section                  | shape                  |
//! |--------------------------|------------------------|
//! | `layer.L.hidden`         | `N × d`                |
//! | `layer.L.routing`        | `N × E`                |
//! | `layer.L.jacobian.mean`  | `E × d_out × d_in`     |
//! | `layer.L.jacobian.weight`| `E`                    |
//! | `layer.L.jacobian.count` | `E`                    |
//! | `layer.L.dense`          | `M × d` (optional)     |

use super::container::{Dtype, DumpContainer, DumpHeader, Tensor};
use super::InterchangeError;
use crate::matrix::Matrix;
use crate::pipeline::{ExpertJacobianStat, LayerCapture};

fn name(layer: usize, part: &str) -> String {
    format!("layer.{layer}.{part}")
}

/// Builds a container holding `layers`; hidden states and dense rows are
/// stored at `hidden_dtype`, everything else in double precision.
pub fn captures_to_container(
    mut header: DumpHeader,
    layers: &[LayerCapture],
    hidden_dtype: Dtype,
) -> Result<DumpContainer, InterchangeError> {
    header.layers = layers.iter().map(|l| l.layer_id).collect();
    header.token_counts = layers.iter().map(|l| l.n_tokens()).collect();
    header.dtype = hidden_dtype.name().into();
    if let Some(first) = layers.first() {
        header.n_experts = first.n_experts();
        header.d_model = first.hidden.cols();
    }
    let mut c = DumpContainer::new(header);
    for l in layers {
        l.validate()?;
        let id = l.layer_id;
        c.push(name(id, "hidden"), Tensor::from_matrix(&l.hidden, hidden_dtype));
        c.push(name(id, "routing"), Tensor::from_matrix(&l.routing, Dtype::F64));
        if let Some(stats) = &l.jacobians {
            let (d_out, d_in) = stats.first().map_or((0, 0), |s| s.mean_jacobian().shape());
            let mut data = Vec::with_capacity(stats.len() * d_out * d_in);
            for s in stats {
                if s.mean_jacobian().shape() != (d_out, d_in) {
                    return Err(InterchangeError::ShapeMismatch {
                        section: name(id, "jacobian.mean"),
                        detail: "experts disagree on Jacobian shape".into(),
                    });
                }
                data.extend_from_slice(s.mean_jacobian().as_slice());
            }
            c.push(
                name(id, "jacobian.mean"),
                Tensor::f64(vec![stats.len(), d_out, d_in], data),
            );
            c.push(
                name(id, "jacobian.weight"),
                Tensor::f64(vec![stats.len()], stats.iter().map(|s| s.total_weight()).collect()),
            );
            c.push(
                name(id, "jacobian.count"),
                Tensor::f64(
                    vec![stats.len()],
                    stats.iter().map(|s| s.sample_count() as f64).collect(),
                ),
            );
        }
        if let Some(dense) = &l.dense {
            c.push(name(id, "dense"), Tensor::from_matrix(dense, hidden_dtype));
        }
    }
    Ok(c)
}

fn matrix_section(c: &DumpContainer, section: &str) -> Result<Matrix<f64>, InterchangeError> {
    let t = c
        .get(section)
        .ok_or_else(|| InterchangeError::MissingSection(section.to_string()))?;
    if t.shape.len() != 2 {
        return Err(InterchangeError::ShapeMismatch {
            section: section.to_string(),
            detail: format!("expected rank 2, found shape {:?}", t.shape),
        });
    }
    Matrix::new(t.shape[0], t.shape[1], t.to_f64_vec())
        .map_err(|e| InterchangeError::Malformed(format!("{section}: {e}")))
}

/// Decodes every layer listed in the header.
pub fn captures_from_container(c: &DumpContainer) -> Result<Vec<LayerCapture>, InterchangeError> {
    c.header
        .layers
        .iter()
        .map(|&id| {
            let hidden = matrix_section(c, &name(id, "hidden"))?;
            let routing = matrix_section(c, &name(id, "routing"))?;
            let jacobians = match c.get(&name(id, "jacobian.mean")) {
                None => None,
                Some(t) => {
                    if t.shape.len() != 3 {
                        return Err(InterchangeError::ShapeMismatch {
                            section: name(id, "jacobian.mean"),
                            detail: format!("expected rank 3, found shape {:?}", t.shape),
                        });
                    }
                    let (e, d_out, d_in) = (t.shape[0], t.shape[1], t.shape[2]);
                    let vals = t.to_f64_vec();
                    let weights = vector_section(c, &name(id, "jacobian.weight"), e)?;
                    let counts = vector_section(c, &name(id, "jacobian.count"), e)?;
                    let mut stats = Vec::with_capacity(e);
                    for k in 0..e {
                        let block = vals[k * d_out * d_in..(k + 1) * d_out * d_in].to_vec();
                        let mean = Matrix::new(d_out, d_in, block)
                            .map_err(|err| InterchangeError::Malformed(format!("expert {k} Jacobian: {err}")))?;
                        stats.push(ExpertJacobianStat::from_parts(k, mean, weights[k], counts[k] as usize)?);
                    }
                    Some(stats)
                }
            };
            let dense = match c.get(&name(id, "dense")) {
                None => None,
                Some(_) => Some(matrix_section(c, &name(id, "dense"))?),
            };
            let capture = LayerCapture {
                layer_id: id,
                hidden,
                routing,
                jacobians,
                dense,
            };
            capture.validate()?;
            Ok(capture)
        })
        .collect()
}

fn vector_section(c: &DumpContainer, section: &str, len: usize) -> Result<Vec<f64>, InterchangeError> {
    let t = c
        .get(section)
        .ok_or_else(|| InterchangeError::MissingSection(section.to_string()))?;
    if t.shape != [len] {
        return Err(InterchangeError::ShapeMismatch {
            section: section.to_string(),
            detail: format!("expected [{len}], found {:?}", t.shape),
        });
    }
    Ok(t.to_f64_vec())
}
