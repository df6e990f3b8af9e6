//! Parameter persistence in the safetensors container.

use std::collections::HashMap;

use safetensors::tensor::{Dtype, SafeTensors, TensorView};

use crate::element::Element;
use crate::error::{GradError, Result};
use crate::params::ParamStore;
use crate::tensor::Tensor;

fn ckpt_err(e: impl std::fmt::Display) -> GradError {
    GradError::Checkpoint(e.to_string())
}

fn to_bytes<E: Element>(t: &Tensor<E>) -> Vec<u8> {
    let mut out = Vec::with_capacity(t.numel() * std::mem::size_of::<E>());
    for v in t.data() {
        match E::DTYPE {
            "F64" => out.extend_from_slice(&v.to_f64().unwrap().to_le_bytes()),
            _ => out.extend_from_slice(&v.to_f32().unwrap().to_le_bytes()),
        }
    }
    out
}

fn from_view<E: Element>(view: &TensorView<'_>) -> Result<Tensor<E>> {
    let raw = view.data();
    let data: Vec<E> = match view.dtype() {
        Dtype::F32 => raw
            .chunks_exact(4)
            .map(|c| E::from_f64_lossy(f32::from_le_bytes(c.try_into().unwrap()) as f64))
            .collect(),
        Dtype::F64 => raw
            .chunks_exact(8)
            .map(|c| E::from_f64_lossy(f64::from_le_bytes(c.try_into().unwrap())))
            .collect(),
        other => return Err(GradError::Checkpoint(format!("unsupported dtype {other:?}"))),
    };
    Tensor::new(view.shape().to_vec(), data)
}

impl<E: Element> ParamStore<E> {
    /// Serializes all parameters plus string metadata.
    pub fn to_safetensors(&self, metadata: HashMap<String, String>) -> Result<Vec<u8>> {
        let dtype = if E::DTYPE == "F64" { Dtype::F64 } else { Dtype::F32 };
        let buffers: Vec<(String, Vec<usize>, Vec<u8>)> =
            self.iter().map(|(n, t)| (n.to_string(), t.shape().to_vec(), to_bytes(t))).collect();
        let views = buffers
            .iter()
            .map(|(n, s, b)| Ok((n.clone(), TensorView::new(dtype, s.clone(), b).map_err(ckpt_err)?)))
            .collect::<Result<Vec<_>>>()?;
        safetensors::serialize(views, Some(metadata)).map_err(ckpt_err)
    }

    /// Overwrites every parameter from `bytes`; names and shapes must match exactly.
    pub fn load_safetensors(&mut self, bytes: &[u8]) -> Result<HashMap<String, String>> {
        let st = SafeTensors::deserialize(bytes).map_err(ckpt_err)?;
        let mut names: Vec<&str> = st.names();
        names.sort_unstable();
        let mut mine: Vec<String> = self.iter().map(|(n, _)| n.to_string()).collect();
        mine.sort_unstable();
        if names != mine {
            let missing: Vec<_> = mine.iter().filter(|n| !names.contains(&n.as_str())).take(5).collect();
            return Err(GradError::Checkpoint(format!(
                "parameter set mismatch ({} stored vs {} expected); missing e.g. {missing:?}",
                names.len(),
                mine.len()
            )));
        }
        for name in mine {
            let id = self.id(&name)?;
            let t = from_view::<E>(&st.tensor(&name).map_err(ckpt_err)?)?;
            if t.shape() != self.value(id).shape() {
                return Err(GradError::Checkpoint(format!(
                    "shape mismatch for {name}: stored {:?}, expected {:?}",
                    t.shape(),
                    self.value(id).shape()
                )));
            }
            *self.value_mut(id) = t;
        }
        read_metadata(bytes)
    }
}

pub fn read_metadata(bytes: &[u8]) -> Result<HashMap<String, String>> {
    let (_, meta) = SafeTensors::read_metadata(bytes).map_err(ckpt_err)?;
    Ok(meta.metadata().clone().unwrap_or_default())
}
