//! Model checkpoints in the MGT1 container: the config lives in the header
//! and each parameter tensor in a `param.<name>` section.

use moegeom_core::interchange::{DumpContainer, DumpHeader, Tensor};
use moegeom_core::Scalar;
use serde_json::{json, Value};

use crate::config::ModelConfig;
use crate::transformer::MoeTransformer;
use crate::ModelError;

pub const CHECKPOINT_KIND: &str = "checkpoint";

fn tensor_of<T: Scalar>(shape: Vec<usize>, data: &[T]) -> Tensor {
    if T::DTYPE == "f32" {
        Tensor::f32(shape, data.iter().map(|v| v.as_f64() as f32).collect())
    } else {
        Tensor::f64(shape, data.iter().map(|v| v.as_f64()).collect())
    }
}

/// Serialises `model`. Extra header fields (seed, provenance) go in `extra`.
pub fn to_container<T: Scalar>(
    model: &MoeTransformer<T>,
    creator: &str,
    extra: serde_json::Map<String, Value>,
) -> DumpContainer {
    let cfg = &model.config;
    let mut header = DumpHeader {
        model: "moe-transformer".into(),
        layers: (0..cfg.n_layers).collect(),
        n_experts: cfg.n_experts,
        d_model: cfg.d_model,
        dtype: T::DTYPE.into(),
        creator: creator.into(),
        extra,
        ..Default::default()
    };
    header.extra.insert("kind".into(), json!(CHECKPOINT_KIND));
    header
        .extra
        .insert("config".into(), serde_json::to_value(cfg).expect("config serialises"));
    let mut c = DumpContainer::new(header);
    for p in model.params() {
        c.push(format!("param.{}", p.name), tensor_of(p.shape, p.data));
    }
    c
}

/// Config stored in a checkpoint header.
pub fn checkpoint_config(c: &DumpContainer) -> Result<ModelConfig, ModelError> {
    if c.header.extra.get("kind").and_then(Value::as_str) != Some(CHECKPOINT_KIND) {
        return Err(ModelError::Checkpoint("container is not a model checkpoint".into()));
    }
    let cfg = c
        .header
        .extra
        .get("config")
        .ok_or_else(|| ModelError::Checkpoint("header has no config".into()))?;
    serde_json::from_value(cfg.clone()).map_err(|e| ModelError::Checkpoint(format!("bad config: {e}")))
}

/// Rebuilds a model; every parameter section must be present with its exact shape.
pub fn from_container<T: Scalar>(c: &DumpContainer) -> Result<MoeTransformer<T>, ModelError> {
    let cfg = checkpoint_config(c)?;
    cfg.validate()?;
    let mut model = MoeTransformer::<T>::zeros(&cfg);
    let specs: Vec<(String, Vec<usize>)> = model.params().into_iter().map(|p| (p.name, p.shape)).collect();
    for ((name, shape), dst) in specs.into_iter().zip(model.params_mut()) {
        let section = format!("param.{name}");
        let t = c
            .get(&section)
            .ok_or_else(|| ModelError::Checkpoint(format!("missing section {section}")))?;
        if t.shape != shape {
            return Err(ModelError::Checkpoint(format!(
                "{section}: shape {:?}, expected {shape:?}",
                t.shape
            )));
        }
        for (d, v) in dst.iter_mut().zip(t.to_f64_vec()) {
            *d = T::lit(v);
        }
    }
    Ok(model)
}
