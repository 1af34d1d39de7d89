use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::checkpoint::Checkpoint;
use super::network::{init_tensor, Network};
use super::spec::ModelSpec;
use crate::{Error, Result};

/// Builds `target` from a pretrained checkpoint: every tensor except the
/// final classification layer is copied unchanged, the final layer is freshly
/// initialized from `seed`.
pub fn transfer_init(target: ModelSpec, source: &Checkpoint, seed: u64) -> Result<Network<f32>> {
    if target.architecture != source.spec.architecture {
        return Err(Error::Architecture(format!(
            "cannot initialize a {} from a {} checkpoint",
            target.architecture.id(),
            source.spec.architecture.id()
        )));
    }
    let final_layer = target
        .final_layer()
        .ok_or_else(|| Error::Architecture("target has no dense output layer".into()))?
        .to_string();
    if source.spec.final_layer() != Some(final_layer.as_str()) {
        return Err(Error::Architecture(format!(
            "source output layer {:?} does not match target {final_layer}",
            source.spec.final_layer()
        )));
    }

    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut params = indexmap::IndexMap::new();
    for (name, shape) in target.param_shapes() {
        let owner = name.rsplit_once('.').map(|(l, _)| l).unwrap_or(&name);
        if owner == final_layer {
            params.insert(name.clone(), init_tensor(&name, &shape, &mut rng));
            continue;
        }
        let src = source.params.get(&name).ok_or_else(|| {
            Error::Architecture(format!("source checkpoint has no tensor {name}"))
        })?;
        if src.shape() != shape.as_slice() {
            return Err(Error::Architecture(format!(
                "tensor {name}: source shape {:?}, target {shape:?}",
                src.shape()
            )));
        }
        params.insert(name, src.clone());
    }
    Network::from_params(target, params)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::models::{build_small_cnn_with, build_vgg_variant_with, SmallCnnConfig, VggConfig};

    fn small_vgg(classes: usize) -> ModelSpec {
        let cfg = VggConfig {
            block_widths: [2, 2, 3, 3],
            fc_widths: [4, 4],
            ..Default::default()
        };
        build_vgg_variant_with(classes, &cfg).unwrap()
    }

    #[test]
    fn copies_all_but_final_layer() {
        let src = Network::<f32>::init(small_vgg(7), 1).unwrap();
        let ck = Checkpoint::from_network(&src, None, 10, None);
        let net = transfer_init(small_vgg(2), &ck, 9).unwrap();
        for (name, t) in net.params() {
            if name.starts_with("fc3.") {
                assert_eq!(t.shape()[t.ndim() - 1], 2);
            } else {
                let s = &src.params()[name];
                assert!(t.iter().zip(s.iter()).all(|(a, b)| a.to_bits() == b.to_bits()), "{name}");
            }
        }
        let again = transfer_init(small_vgg(2), &ck, 9).unwrap();
        assert_eq!(again.params(), net.params());
        assert!(net.params()["fc3.bias"].iter().all(|&b| b == 0.0));
    }

    #[test]
    fn rejects_other_architecture() {
        let cfg = SmallCnnConfig {
            conv_filters: [2, 2],
            fc_width: 3,
            ..Default::default()
        };
        let src = Network::<f32>::init(build_small_cnn_with(7, &cfg).unwrap(), 1).unwrap();
        let ck = Checkpoint::from_network(&src, None, 0, None);
        assert!(matches!(transfer_init(small_vgg(2), &ck, 0), Err(Error::Architecture(_))));
    }

    #[test]
    fn rejects_width_mismatch() {
        let src = Network::<f32>::init(small_vgg(7), 1).unwrap();
        let ck = Checkpoint::from_network(&src, None, 0, None);
        let cfg = VggConfig {
            block_widths: [2, 2, 3, 4],
            fc_widths: [4, 4],
            ..Default::default()
        };
        let target = build_vgg_variant_with(2, &cfg).unwrap();
        assert!(matches!(transfer_init(target, &ck, 0), Err(Error::Architecture(_))));
    }
}
