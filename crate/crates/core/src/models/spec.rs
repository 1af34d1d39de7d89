//! Declarative layer lists for the three learned architectures.

use serde::{Deserialize, Serialize};

use crate::dataset::SIDE;
use crate::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Architecture {
    SmallCnn,
    Vgg,
}

impl Architecture {
    pub fn id(self) -> &'static str {
        match self {
            Architecture::SmallCnn => "small-cnn",
            Architecture::Vgg => "vgg",
        }
    }
}

impl std::str::FromStr for Architecture {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "small-cnn" | "cnn" => Ok(Architecture::SmallCnn),
            "vgg" | "vggnet" => Ok(Architecture::Vgg),
            other => Err(Error::Validation(format!("unknown architecture {other:?}"))),
        }
    }
}

/// Cross-channel local response normalization:
/// `y_c = x_c / (bias + alpha * sum_{|j-c|<=depth_radius} x_j^2)^beta`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LrnParams {
    pub depth_radius: usize,
    pub bias: f64,
    pub alpha: f64,
    pub beta: f64,
}

impl Default for LrnParams {
    fn default() -> Self {
        LrnParams {
            depth_radius: 5,
            bias: 2.0,
            alpha: 1e-4,
            beta: 0.75,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Layer {
    Conv {
        name: String,
        in_channels: usize,
        out_channels: usize,
        kernel: usize,
        padding: usize,
    },
    Relu,
    Lrn(LrnParams),
    MaxPool {
        size: usize,
        stride: usize,
    },
    Dropout {
        rate: f64,
    },
    Flatten,
    Dense {
        name: String,
        in_features: usize,
        out_features: usize,
    },
    Softmax,
}

impl Layer {
    /// Parameter tensor names and shapes owned by this layer.
    pub fn params(&self) -> Vec<(String, Vec<usize>)> {
        match self {
            Layer::Conv {
                name,
                in_channels,
                out_channels,
                kernel,
                ..
            } => vec![
                (
                    format!("{name}.weight"),
                    vec![*out_channels, *in_channels, *kernel, *kernel],
                ),
                (format!("{name}.bias"), vec![*out_channels]),
            ],
            Layer::Dense {
                name,
                in_features,
                out_features,
            } => vec![
                (format!("{name}.weight"), vec![*in_features, *out_features]),
                (format!("{name}.bias"), vec![*out_features]),
            ],
            _ => Vec::new(),
        }
    }
}

/// Activation shape flowing between layers.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Shape {
    Map { channels: usize, height: usize, width: usize },
    Flat(usize),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelSpec {
    pub architecture: Architecture,
    pub input_channels: usize,
    pub input_size: usize,
    pub num_classes: usize,
    pub layers: Vec<Layer>,
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct Census {
    pub conv: usize,
    pub dense: usize,
    pub max_pool: usize,
    pub lrn: usize,
    pub dropout: usize,
}

impl ModelSpec {
    pub fn census(&self) -> Census {
        let mut c = Census::default();
        for l in &self.layers {
            match l {
                Layer::Conv { .. } => c.conv += 1,
                Layer::Dense { .. } => c.dense += 1,
                Layer::MaxPool { .. } => c.max_pool += 1,
                Layer::Lrn(_) => c.lrn += 1,
                Layer::Dropout { .. } => c.dropout += 1,
                _ => {}
            }
        }
        c
    }

    pub fn param_shapes(&self) -> Vec<(String, Vec<usize>)> {
        self.layers.iter().flat_map(Layer::params).collect()
    }

    pub fn param_count(&self) -> usize {
        self.param_shapes()
            .iter()
            .map(|(_, s)| s.iter().product::<usize>())
            .sum()
    }

    /// Name of the final dense (classification) layer.
    pub fn final_layer(&self) -> Option<&str> {
        self.layers.iter().rev().find_map(|l| match l {
            Layer::Dense { name, .. } => Some(name.as_str()),
            _ => None,
        })
    }

    /// Same network with the final dense layer resized to `num_classes`.
    pub fn with_num_classes(&self, num_classes: usize) -> Result<ModelSpec> {
        check_classes(num_classes)?;
        let mut spec = self.clone();
        let last = spec
            .layers
            .iter_mut()
            .rev()
            .find_map(|l| match l {
                Layer::Dense { out_features, .. } => Some(out_features),
                _ => None,
            })
            .ok_or_else(|| Error::Architecture("spec has no dense output layer".into()))?;
        *last = num_classes;
        spec.num_classes = num_classes;
        spec.shapes()?;
        Ok(spec)
    }

    /// Output shape after every layer; errors on inconsistent wiring.
    pub fn shapes(&self) -> Result<Vec<Shape>> {
        let mut cur = Shape::Map {
            channels: self.input_channels,
            height: self.input_size,
            width: self.input_size,
        };
        let mut out = Vec::with_capacity(self.layers.len());
        for (i, layer) in self.layers.iter().enumerate() {
            let bad = |msg: String| Error::Architecture(format!("layer {i} ({layer:?}): {msg}"));
            cur = match (layer, cur) {
                (
                    Layer::Conv {
                        in_channels,
                        out_channels,
                        kernel,
                        padding,
                        ..
                    },
                    Shape::Map { channels, height, width },
                ) => {
                    if *in_channels != channels {
                        return Err(bad(format!("expects {in_channels} channels, got {channels}")));
                    }
                    if height + 2 * padding < *kernel || width + 2 * padding < *kernel {
                        return Err(bad("kernel larger than input".into()));
                    }
                    Shape::Map {
                        channels: *out_channels,
                        height: height + 2 * padding - kernel + 1,
                        width: width + 2 * padding - kernel + 1,
                    }
                }
                (Layer::MaxPool { size, stride }, Shape::Map { channels, height, width }) => {
                    if height < *size || width < *size || *stride == 0 {
                        return Err(bad("pool window larger than input".into()));
                    }
                    Shape::Map {
                        channels,
                        height: (height - size) / stride + 1,
                        width: (width - size) / stride + 1,
                    }
                }
                (Layer::Lrn(_), s @ Shape::Map { .. }) => s,
                (Layer::Relu | Layer::Dropout { .. }, s) => s,
                (Layer::Flatten, Shape::Map { channels, height, width }) => {
                    Shape::Flat(channels * height * width)
                }
                (
                    Layer::Dense {
                        in_features,
                        out_features,
                        ..
                    },
                    Shape::Flat(n),
                ) => {
                    if *in_features != n {
                        return Err(bad(format!("expects {in_features} features, got {n}")));
                    }
                    Shape::Flat(*out_features)
                }
                (Layer::Softmax, s @ Shape::Flat(_)) => s,
                (_, s) => return Err(bad(format!("cannot follow shape {s:?}"))),
            };
            out.push(cur);
        }
        if cur != Shape::Flat(self.num_classes) {
            return Err(Error::Architecture(format!(
                "network ends in {cur:?}, expected {} classes",
                self.num_classes
            )));
        }
        if !matches!(self.layers.last(), Some(Layer::Softmax)) {
            return Err(Error::Architecture("final layer must be a softmax".into()));
        }
        Ok(out)
    }
}

/// Widths and regularization of the two-convolution baseline.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SmallCnnConfig {
    pub conv_filters: [usize; 2],
    pub kernel: usize,
    pub fc_width: usize,
    pub conv_dropout: f64,
    pub fc_dropout: f64,
    pub lrn: LrnParams,
}

impl Default for SmallCnnConfig {
    fn default() -> Self {
        SmallCnnConfig {
            conv_filters: [32, 64],
            kernel: 3,
            fc_width: 512,
            conv_dropout: 0.25,
            fc_dropout: 0.5,
            lrn: LrnParams::default(),
        }
    }
}

/// Widths and regularization of the four-block VGG-style network.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct VggConfig {
    pub block_widths: [usize; 4],
    pub fc_widths: [usize; 2],
    pub conv_dropout: f64,
    pub fc_dropout: f64,
    pub lrn: LrnParams,
}

impl Default for VggConfig {
    fn default() -> Self {
        VggConfig {
            block_widths: [64, 128, 256, 512],
            fc_widths: [1024, 1024],
            conv_dropout: 0.25,
            fc_dropout: 0.5,
            lrn: LrnParams::default(),
        }
    }
}

fn check_classes(num_classes: usize) -> Result<()> {
    if num_classes < 2 {
        return Err(Error::Validation(format!(
            "a classifier needs at least 2 classes, got {num_classes}"
        )));
    }
    Ok(())
}

fn conv(name: String, in_channels: usize, out_channels: usize, kernel: usize) -> Layer {
    Layer::Conv {
        name,
        in_channels,
        out_channels,
        kernel,
        padding: kernel / 2,
    }
}

const POOL: Layer = Layer::MaxPool { size: 2, stride: 2 };

pub fn build_small_cnn(num_classes: usize) -> Result<ModelSpec> {
    build_small_cnn_with(num_classes, &SmallCnnConfig::default())
}

/// Conv → ReLU → dropout → LRN → max-pool → Conv → ReLU → dropout → max-pool
/// → FC → ReLU → dropout → FC → softmax.
pub fn build_small_cnn_with(num_classes: usize, cfg: &SmallCnnConfig) -> Result<ModelSpec> {
    check_classes(num_classes)?;
    let [f1, f2] = cfg.conv_filters;
    let side = SIDE / 2 / 2;
    let layers = vec![
        conv("conv1".into(), 1, f1, cfg.kernel),
        Layer::Relu,
        Layer::Dropout { rate: cfg.conv_dropout },
        Layer::Lrn(cfg.lrn),
        POOL,
        conv("conv2".into(), f1, f2, cfg.kernel),
        Layer::Relu,
        Layer::Dropout { rate: cfg.conv_dropout },
        POOL,
        Layer::Flatten,
        Layer::Dense {
            name: "fc1".into(),
            in_features: f2 * side * side,
            out_features: cfg.fc_width,
        },
        Layer::Relu,
        Layer::Dropout { rate: cfg.fc_dropout },
        Layer::Dense {
            name: "fc2".into(),
            in_features: cfg.fc_width,
            out_features: num_classes,
        },
        Layer::Softmax,
    ];
    let spec = ModelSpec {
        architecture: Architecture::SmallCnn,
        input_channels: 1,
        input_size: SIDE,
        num_classes,
        layers,
    };
    spec.shapes()?;
    Ok(spec)
}

pub fn build_vgg_variant(num_classes: usize) -> Result<ModelSpec> {
    build_vgg_variant_with(num_classes, &VggConfig::default())
}

/// Four blocks of two 3×3 convolutions (each followed by ReLU and dropout),
/// LRN after the first block, 2×2/2 max-pool after every block, then three
/// fully connected layers ending in a softmax.
pub fn build_vgg_variant_with(num_classes: usize, cfg: &VggConfig) -> Result<ModelSpec> {
    check_classes(num_classes)?;
    let mut layers = Vec::new();
    let mut in_ch = 1;
    for (b, &width) in cfg.block_widths.iter().enumerate() {
        for c in 0..2 {
            layers.push(conv(format!("block{}.conv{}", b + 1, c + 1), in_ch, width, 3));
            layers.push(Layer::Relu);
            layers.push(Layer::Dropout { rate: cfg.conv_dropout });
            in_ch = width;
        }
        if b == 0 {
            layers.push(Layer::Lrn(cfg.lrn));
        }
        layers.push(POOL);
    }
    let side = SIDE >> cfg.block_widths.len();
    layers.push(Layer::Flatten);
    let mut in_f = in_ch * side * side;
    for (i, &w) in cfg.fc_widths.iter().enumerate() {
        layers.push(Layer::Dense {
            name: format!("fc{}", i + 1),
            in_features: in_f,
            out_features: w,
        });
        layers.push(Layer::Relu);
        layers.push(Layer::Dropout { rate: cfg.fc_dropout });
        in_f = w;
    }
    layers.push(Layer::Dense {
        name: format!("fc{}", cfg.fc_widths.len() + 1),
        in_features: in_f,
        out_features: num_classes,
    });
    layers.push(Layer::Softmax);
    let spec = ModelSpec {
        architecture: Architecture::Vgg,
        input_channels: 1,
        input_size: SIDE,
        num_classes,
        layers,
    };
    spec.shapes()?;
    Ok(spec)
}
