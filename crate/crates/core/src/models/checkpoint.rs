//! Safetensors checkpoints: f32 weights, f64 preprocessing statistics and a
//! JSON model spec in the header metadata.

use std::collections::HashMap;
use std::path::Path;

use indexmap::IndexMap;
use ndarray::{Array2, ArrayD, IxDyn};
use safetensors::tensor::{Dtype, TensorView};
use safetensors::SafeTensors;

use super::network::Network;
use super::spec::ModelSpec;
use crate::dataset::SIDE;
use crate::preprocess::PixelStats;
use crate::{Error, Result};

pub const CHECKPOINT_FORMAT: &str = "engagement-ckpt-v1";

const MEAN_KEY: &str = "pixel_stats.mean";
const STD_KEY: &str = "pixel_stats.std";

#[derive(Debug, Clone)]
pub struct Checkpoint {
    pub spec: ModelSpec,
    pub params: IndexMap<String, ArrayD<f32>>,
    pub pixel_stats: Option<PixelStats>,
    pub step: u64,
    pub val_metric: Option<f64>,
}

impl Checkpoint {
    pub fn from_network(net: &Network<f32>, pixel_stats: Option<PixelStats>, step: u64, val_metric: Option<f64>) -> Self {
        Checkpoint {
            spec: net.spec().clone(),
            params: net.params().clone(),
            pixel_stats,
            step,
            val_metric,
        }
    }

    pub fn network(&self) -> Result<Network<f32>> {
        Network::from_params(self.spec.clone(), self.params.clone())
    }

    pub fn to_bytes(&self) -> Result<Vec<u8>> {
        let ckpt_err = |e: safetensors::SafeTensorError| Error::Checkpoint(e.to_string());
        let mut f32_bytes: Vec<(String, Vec<usize>, Vec<u8>)> = Vec::new();
        for (name, t) in &self.params {
            let bytes = t.as_standard_layout().iter().flat_map(|v| v.to_le_bytes()).collect();
            f32_bytes.push((name.clone(), t.shape().to_vec(), bytes));
        }
        let mut f64_bytes: Vec<(String, Vec<usize>, Vec<u8>)> = Vec::new();
        if let Some(stats) = &self.pixel_stats {
            for (name, t) in [(MEAN_KEY, &stats.mean), (STD_KEY, &stats.std)] {
                let bytes = t.as_standard_layout().iter().flat_map(|v| v.to_le_bytes()).collect();
                f64_bytes.push((name.to_string(), t.shape().to_vec(), bytes));
            }
        }
        let mut views = Vec::new();
        for (name, shape, bytes) in &f32_bytes {
            views.push((name.as_str(), TensorView::new(Dtype::F32, shape.clone(), bytes).map_err(ckpt_err)?));
        }
        for (name, shape, bytes) in &f64_bytes {
            views.push((name.as_str(), TensorView::new(Dtype::F64, shape.clone(), bytes).map_err(ckpt_err)?));
        }

        let mut meta = HashMap::new();
        meta.insert("format".to_string(), CHECKPOINT_FORMAT.to_string());
        meta.insert("architecture".to_string(), self.spec.architecture.id().to_string());
        meta.insert("num_classes".to_string(), self.spec.num_classes.to_string());
        meta.insert("step".to_string(), self.step.to_string());
        if let Some(m) = self.val_metric {
            meta.insert("val_metric".to_string(), m.to_string());
        }
        meta.insert("spec".to_string(), serde_json::to_string(&self.spec)?);
        safetensors::serialize(views, &Some(meta)).map_err(ckpt_err)
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        let ckpt_err = |e: safetensors::SafeTensorError| Error::Checkpoint(e.to_string());
        let (_, header) = SafeTensors::read_metadata(bytes).map_err(ckpt_err)?;
        let tensors = SafeTensors::deserialize(bytes).map_err(ckpt_err)?;
        let meta = header
            .metadata()
            .as_ref()
            .ok_or_else(|| Error::Checkpoint("checkpoint has no metadata".into()))?;
        let get = |k: &str| {
            meta.get(k)
                .ok_or_else(|| Error::Checkpoint(format!("checkpoint metadata lacks {k}")))
        };
        if get("format")? != CHECKPOINT_FORMAT {
            return Err(Error::Checkpoint(format!("unknown checkpoint format {}", get("format")?)));
        }
        let spec: ModelSpec = serde_json::from_str(get("spec")?)?;
        let step = get("step")?
            .parse()
            .map_err(|_| Error::Checkpoint("step is not an integer".into()))?;
        let val_metric = match meta.get("val_metric") {
            Some(v) => Some(v.parse().map_err(|_| Error::Checkpoint("val_metric is not a number".into()))?),
            None => None,
        };

        let mut params = IndexMap::new();
        for (name, _) in spec.param_shapes() {
            let view = tensors
                .tensor(&name)
                .map_err(|_| Error::Checkpoint(format!("checkpoint lacks tensor {name}")))?;
            if view.dtype() != Dtype::F32 {
                return Err(Error::Checkpoint(format!("tensor {name} is {:?}, expected F32", view.dtype())));
            }
            let values: Vec<f32> = view
                .data()
                .chunks_exact(4)
                .map(|c| f32::from_le_bytes(c.try_into().unwrap()))
                .collect();
            let arr = ArrayD::from_shape_vec(IxDyn(view.shape()), values)
                .map_err(|e| Error::Checkpoint(format!("tensor {name}: {e}")))?;
            params.insert(name, arr);
        }

        let pixel_stats = match (tensors.tensor(MEAN_KEY), tensors.tensor(STD_KEY)) {
            (Ok(m), Ok(s)) => Some(PixelStats {
                mean: read_grid(&m, MEAN_KEY)?,
                std: read_grid(&s, STD_KEY)?,
            }),
            (Err(_), Err(_)) => None,
            _ => return Err(Error::Checkpoint("pixel statistics are incomplete".into())),
        };

        // shape check happens against the spec
        Network::from_params(spec.clone(), params.clone())?;
        Ok(Checkpoint {
            spec,
            params,
            pixel_stats,
            step,
            val_metric,
        })
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let bytes = self.to_bytes()?;
        if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
            std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        }
        std::fs::write(path, bytes).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
        Self::from_bytes(&bytes).map_err(|e| match e {
            Error::Checkpoint(msg) => Error::Checkpoint(format!("{}: {msg}", path.display())),
            other => other,
        })
    }
}

fn read_grid(view: &TensorView<'_>, name: &str) -> Result<Array2<f64>> {
    if view.dtype() != Dtype::F64 || view.shape() != [SIDE, SIDE] {
        return Err(Error::Checkpoint(format!(
            "{name} must be F64 [{SIDE}, {SIDE}], found {:?} {:?}",
            view.dtype(),
            view.shape()
        )));
    }
    let values: Vec<f64> = view
        .data()
        .chunks_exact(8)
        .map(|c| f64::from_le_bytes(c.try_into().unwrap()))
        .collect();
    Ok(Array2::from_shape_vec((SIDE, SIDE), values).unwrap())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::models::{build_small_cnn_with, SmallCnnConfig};

    fn tiny() -> Network<f32> {
        let cfg = SmallCnnConfig {
            conv_filters: [2, 3],
            fc_width: 4,
            ..Default::default()
        };
        Network::init(build_small_cnn_with(2, &cfg).unwrap(), 3).unwrap()
    }

    fn stats() -> PixelStats {
        PixelStats {
            mean: Array2::from_shape_fn((SIDE, SIDE), |(i, j)| (i as f64 - j as f64) / 7.0),
            std: Array2::from_shape_fn((SIDE, SIDE), |(i, j)| 1.0 + (i * j) as f64 / 1e3),
        }
    }

    #[test]
    fn round_trip_is_bit_exact() {
        let net = tiny();
        let ck = Checkpoint::from_network(&net, Some(stats()), 1234, Some(0.625));
        let back = Checkpoint::from_bytes(&ck.to_bytes().unwrap()).unwrap();
        assert_eq!(back.spec, ck.spec);
        assert_eq!(back.step, 1234);
        assert_eq!(back.val_metric, Some(0.625));
        for (k, v) in &ck.params {
            let w = &back.params[k];
            assert!(v.iter().zip(w.iter()).all(|(a, b)| a.to_bits() == b.to_bits()), "{k}");
        }
        let s = back.pixel_stats.unwrap();
        assert_eq!(s.mean, stats().mean);
        assert_eq!(s.std, stats().std);
    }

    #[test]
    fn truncated_file_is_rejected() {
        let bytes = Checkpoint::from_network(&tiny(), None, 0, None).to_bytes().unwrap();
        for cut in [0, 7, bytes.len() / 2, bytes.len() - 1] {
            assert!(matches!(Checkpoint::from_bytes(&bytes[..cut]), Err(Error::Checkpoint(_))));
        }
    }

    #[test]
    fn save_and_load() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("nested/model.safetensors");
        let net = tiny();
        Checkpoint::from_network(&net, None, 5, None).save(&path).unwrap();
        let back = Checkpoint::load(&path).unwrap();
        assert!(back.pixel_stats.is_none());
        assert_eq!(back.network().unwrap().params(), net.params());
    }
}
