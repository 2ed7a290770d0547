//! Weight blobs in safetensors layout with a JSON header stored under the
//! `header` metadata key. Tensors are named `<set>/<param>`.

use std::collections::{BTreeMap, HashMap};
use std::fs;
use std::path::Path;

use loopgan_tensor::{ParamSet, Scalar, Tensor};
use safetensors::tensor::{Dtype, TensorView};
use safetensors::SafeTensors;
use serde::de::DeserializeOwned;
use serde::Serialize;

use crate::error::{Error, Result};
use crate::real::Real;

fn dtype_of<T: Real>() -> Dtype {
    if T::DTYPE == "f64" {
        Dtype::F64
    } else {
        Dtype::F32
    }
}

pub fn save<T: Real, H: Serialize>(path: &Path, header: &H, sets: &[(&str, &ParamSet<T>)]) -> Result<()> {
    let mut bytes: Vec<(String, Vec<usize>, Vec<u8>)> = Vec::new();
    for (set, params) in sets {
        for (name, t) in params.iter() {
            let mut b = Vec::with_capacity(t.len() * std::mem::size_of::<T>());
            T::extend_le_bytes(t.data(), &mut b);
            bytes.push((format!("{set}/{name}"), t.shape().to_vec(), b));
        }
    }
    let views: Vec<(String, TensorView<'_>)> = bytes
        .iter()
        .map(|(n, s, b)| Ok((n.clone(), TensorView::new(dtype_of::<T>(), s.clone(), b).map_err(|e| Error::format("tensor", e))?)))
        .collect::<Result<_>>()?;
    let header = serde_json::to_string(header).map_err(|e| Error::format("checkpoint header", e))?;
    let meta = Some(HashMap::from([("header".to_string(), header)]));
    let blob = safetensors::serialize(views, &meta).map_err(|e| Error::format("checkpoint", e))?;
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    }
    fs::write(path, blob).map_err(|e| Error::io(path, e))
}

/// A loaded checkpoint: header plus every tensor, converted to `T`.
pub struct Loaded<T> {
    pub header_json: String,
    tensors: BTreeMap<String, Tensor<T>>,
}

impl<T: Real> Loaded<T> {
    pub fn header<H: DeserializeOwned>(&self) -> Result<H> {
        serde_json::from_str(&self.header_json).map_err(|e| Error::format("checkpoint header", e))
    }

    /// Copies set `set` into `params`, whose names and shapes must match.
    pub fn restore(&self, set: &str, params: &mut ParamSet<T>) -> Result<()> {
        let names: Vec<String> = params.iter().map(|(n, _)| n.to_string()).collect();
        let prefix = format!("{set}/");
        let stored = self.tensors.keys().filter(|k| k.starts_with(&prefix)).count();
        if stored != names.len() {
            return Err(Error::format("checkpoint", format!("set {set} has {stored} tensors, model expects {}", names.len())));
        }
        for (id, name) in params.ids().zip(names).collect::<Vec<_>>() {
            let key = format!("{prefix}{name}");
            let t = self.tensors.get(&key).ok_or_else(|| Error::format("checkpoint", format!("missing tensor {key}")))?;
            let dst = params.get_mut(id);
            if dst.shape() != t.shape() {
                return Err(Error::Shape(format!("{key}: stored {:?}, model {:?}", t.shape(), dst.shape())));
            }
            dst.clone_from(t);
        }
        Ok(())
    }
}

pub fn load<T: Real>(path: &Path) -> Result<Loaded<T>> {
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    let what = path.display().to_string();
    let (_, meta) = SafeTensors::read_metadata(&bytes).map_err(|e| Error::format(&what, e))?;
    let header_json = meta
        .metadata()
        .as_ref()
        .and_then(|m| m.get("header").cloned())
        .ok_or_else(|| Error::format(&what, "no header metadata"))?;
    let st = SafeTensors::deserialize(&bytes).map_err(|e| Error::format(&what, e))?;
    let mut tensors = BTreeMap::new();
    for (name, view) in st.iter() {
        let data: Vec<T> = match view.dtype() {
            Dtype::F32 => f32::from_le_bytes_slice(view.data()).into_iter().map(|x| T::lit(x as f64)).collect(),
            Dtype::F64 => f64::from_le_bytes_slice(view.data()).into_iter().map(T::lit).collect(),
            other => return Err(Error::format(&what, format!("unsupported dtype {other:?}"))),
        };
        tensors.insert(name.to_string(), Tensor::new(view.shape(), data));
    }
    Ok(Loaded { header_json, tensors })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn round_trip_preserves_values_and_header() {
        let mut p = ParamSet::<f32>::new();
        let mut rng = crate::real::rng_for(0, &[]);
        p.add("a", Tensor::randn(&[2, 3], 1.0, &mut rng));
        p.add("b.c", Tensor::randn(&[4], 1.0, &mut rng));
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("x.safetensors");
        save(&path, &serde_json::json!({"step": 3}), &[("gen", &p)]).unwrap();
        let loaded = load::<f32>(&path).unwrap();
        let h: serde_json::Value = loaded.header().unwrap();
        assert_eq!(h["step"], 3);
        let mut q = p.zeros_like();
        loaded.restore("gen", &mut q).unwrap();
        assert_eq!(p, q);
        let as64 = load::<f64>(&path).unwrap();
        let mut r = p.cast::<f64>().zeros_like();
        as64.restore("gen", &mut r).unwrap();
        assert_eq!(r, p.cast::<f64>());
        assert!(loaded.restore("other", &mut q).is_err());
    }
}
