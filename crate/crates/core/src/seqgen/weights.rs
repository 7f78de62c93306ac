use std::ops::Range;

use rand::Rng;
use serde::{Deserialize, Serialize};

use super::token::{Stats, Token, INPUT_DIM};
use crate::error::{Error, Result};
use crate::geom::Plane;
use crate::synth::rng;

/// Depth encoder variant.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum EncoderKind {
    /// Three valid convolutions (7×7/2, 5×5/2 + pool, 3×3/2 + pool) and two
    /// dense layers: 64 → 29 → 13 → 6 → 2 → 1 spatially, 128 channels out.
    Full,
    /// 4×4 average downsampling to 16×16 followed by two dense layers.
    Tiny,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default)]
pub struct ModelConfig {
    /// LSTM width H.
    pub hidden: usize,
    /// LSTM depth L.
    pub layers: usize,
    /// Mixture components K.
    pub mixtures: usize,
    /// Width of the summary vector y.
    pub summary: usize,
    /// Hidden widths of the rotation value and axis heads.
    pub head_hidden: [usize; 2],
    /// Width of the depth feature d.
    pub depth_dim: usize,
    pub encoder: EncoderKind,
}

impl Default for ModelConfig {
    fn default() -> Self {
        ModelConfig {
            hidden: 400,
            layers: 3,
            mixtures: 20,
            summary: 400,
            head_hidden: [64, 32],
            depth_dim: 32,
            encoder: EncoderKind::Full,
        }
    }
}

impl ModelConfig {
    /// Small tier for tests and quick experiments.
    pub fn tiny() -> Self {
        ModelConfig {
            hidden: 32,
            layers: 2,
            mixtures: 5,
            summary: 32,
            head_hidden: [16, 8],
            depth_dim: 32,
            encoder: EncoderKind::Tiny,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let dims = [
            self.hidden,
            self.layers,
            self.mixtures,
            self.summary,
            self.head_hidden[0],
            self.head_hidden[1],
            self.depth_dim,
        ];
        if dims.contains(&0) {
            return Err(Error::invalid("model dimensions must be positive"));
        }
        Ok(())
    }

    /// Raw MDN output width: K logits, 2K means, 2K log-deviations, K
    /// correlation pre-activations and the stop logit.
    pub fn mdn_width(&self) -> usize {
        6 * self.mixtures + 1
    }
}

#[derive(Debug, Clone, PartialEq)]
pub(crate) struct LayerSlots {
    pub wx: Range<usize>,
    pub wh: Range<usize>,
    /// Input from the layer below (from `d` on the first layer).
    pub wc: Range<usize>,
    /// Depth injection on layers above the first.
    pub wd: Option<Range<usize>>,
    pub b: Range<usize>,
}

#[derive(Debug, Clone, PartialEq)]
pub(crate) struct MlpSlots {
    pub w: [Range<usize>; 3],
    pub b: [Range<usize>; 3],
    pub widths: [usize; 4],
}

#[derive(Debug, Clone, PartialEq)]
pub(crate) enum EncoderSlots {
    Full {
        conv: [(Range<usize>, Range<usize>); 3],
        fc: [(Range<usize>, Range<usize>); 2],
    },
    Tiny {
        fc: [(Range<usize>, Range<usize>); 2],
    },
}

#[derive(Debug, Clone, PartialEq)]
pub(crate) struct Slots {
    pub layers: Vec<LayerSlots>,
    pub wy: Range<usize>,
    pub by: Range<usize>,
    pub mdn_w: Range<usize>,
    pub mdn_b: Range<usize>,
    pub rot: MlpSlots,
    pub axis: MlpSlots,
    pub encoder: EncoderSlots,
}

/// Named tensor inside the flat parameter vector.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TensorInfo {
    pub name: String,
    pub shape: Vec<usize>,
    #[serde(skip)]
    pub offset: usize,
}

impl TensorInfo {
    pub fn len(&self) -> usize {
        self.shape.iter().product()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn range(&self) -> Range<usize> {
        self.offset..self.offset + self.len()
    }

    fn is_bias(&self) -> bool {
        self.shape.len() == 1
    }
}

struct Builder {
    tensors: Vec<TensorInfo>,
    next: usize,
}

impl Builder {
    fn add(&mut self, name: impl Into<String>, shape: &[usize]) -> Range<usize> {
        let t = TensorInfo {
            name: name.into(),
            shape: shape.to_vec(),
            offset: self.next,
        };
        self.next += t.len();
        let r = t.range();
        self.tensors.push(t);
        r
    }

    fn dense(&mut self, name: &str, rows: usize, cols: usize) -> (Range<usize>, Range<usize>) {
        (self.add(format!("{name}.w"), &[rows, cols]), self.add(format!("{name}.b"), &[rows]))
    }

    fn mlp(&mut self, name: &str, input: usize, hidden: [usize; 2]) -> MlpSlots {
        let widths = [input, hidden[0], hidden[1], 1];
        let l0 = self.dense(&format!("{name}.0"), widths[1], widths[0]);
        let l1 = self.dense(&format!("{name}.1"), widths[2], widths[1]);
        let l2 = self.dense(&format!("{name}.2"), widths[3], widths[2]);
        MlpSlots {
            w: [l0.0, l1.0, l2.0],
            b: [l0.1, l1.1, l2.1],
            widths,
        }
    }
}

pub(crate) fn layout(cfg: &ModelConfig) -> (Vec<TensorInfo>, Slots) {
    let mut b = Builder {
        tensors: Vec::new(),
        next: 0,
    };
    let (h, d) = (cfg.hidden, cfg.depth_dim);
    let layers = (0..cfg.layers)
        .map(|l| LayerSlots {
            wx: b.add(format!("lstm.{l}.wx"), &[h, INPUT_DIM]),
            wh: b.add(format!("lstm.{l}.wh"), &[h, h]),
            wc: b.add(format!("lstm.{l}.wc"), &[h, if l == 0 { d } else { h }]),
            wd: (l > 0).then(|| b.add(format!("lstm.{l}.wd"), &[h, d])),
            b: b.add(format!("lstm.{l}.b"), &[h]),
        })
        .collect();
    let (wy, by) = b.dense("out", cfg.summary, h * cfg.layers);
    let (mdn_w, mdn_b) = b.dense("mdn", cfg.mdn_width(), cfg.summary);
    let rot = b.mlp("rot_value", cfg.summary, cfg.head_hidden);
    let axis = b.mlp("rot_axis", cfg.summary, cfg.head_hidden);
    let encoder = match cfg.encoder {
        EncoderKind::Full => {
            let c0 = (b.add("enc.conv0.w", &[32, 1, 7, 7]), b.add("enc.conv0.b", &[32]));
            let c1 = (b.add("enc.conv1.w", &[64, 32, 5, 5]), b.add("enc.conv1.b", &[64]));
            let c2 = (b.add("enc.conv2.w", &[128, 64, 3, 3]), b.add("enc.conv2.b", &[128]));
            let f0 = b.dense("enc.fc0", 64, 128);
            let f1 = b.dense("enc.fc1", d, 64);
            EncoderSlots::Full {
                conv: [c0, c1, c2],
                fc: [f0, f1],
            }
        }
        EncoderKind::Tiny => {
            let f0 = b.dense("enc.fc0", 64, 256);
            let f1 = b.dense("enc.fc1", d, 64);
            EncoderSlots::Tiny { fc: [f0, f1] }
        }
    };
    let slots = Slots {
        layers,
        wy,
        by,
        mdn_w,
        mdn_b,
        rot,
        axis,
        encoder,
    };
    (b.tensors, slots)
}

/// One retrieval bank entry: the encoded depth feature of a training view
/// (empty for sequences trained without one), the first primitive of that
/// shape's sequence and the shape's symmetry plane.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BankEntry {
    pub name: String,
    pub feature: Vec<f64>,
    pub first: [Token; 3],
    #[serde(default)]
    pub symmetry_plane: Option<Plane>,
}

/// All learned parameters in one flat vector, with the normalization
/// statistics and retrieval bank that travel with them.
#[derive(Debug, Clone, PartialEq)]
pub struct ModelWeights {
    pub config: ModelConfig,
    pub stats: Option<Stats>,
    pub params: Vec<f64>,
    pub bank: Vec<BankEntry>,
    tensors: Vec<TensorInfo>,
    pub(crate) slots: Slots,
}

impl ModelWeights {
    /// All parameters zero.
    pub fn zeros(config: ModelConfig) -> Result<Self> {
        config.validate()?;
        let (tensors, slots) = layout(&config);
        let n = tensors.last().map_or(0, |t| t.offset + t.len());
        Ok(ModelWeights {
            config,
            stats: None,
            params: vec![0.0; n],
            bank: Vec::new(),
            tensors,
            slots,
        })
    }

    /// Weights uniform in `±1/sqrt(fan_in)`, biases zero.
    pub fn init(config: ModelConfig, seed: u64) -> Result<Self> {
        let mut w = Self::zeros(config)?;
        let mut r = rng(seed);
        for t in &w.tensors {
            if t.is_bias() {
                continue;
            }
            let fan_in: usize = t.shape[1..].iter().product();
            let k = 1.0 / (fan_in.max(1) as f64).sqrt();
            for v in &mut w.params[t.range()] {
                *v = r.random_range(-k..k);
            }
        }
        Ok(w)
    }

    pub fn len(&self) -> usize {
        self.params.len()
    }

    pub fn is_empty(&self) -> bool {
        self.params.is_empty()
    }

    pub fn tensors(&self) -> &[TensorInfo] {
        &self.tensors
    }

    pub fn tensor(&self, name: &str) -> Option<&[f64]> {
        self.tensors.iter().find(|t| t.name == name).map(|t| &self.params[t.range()])
    }

    pub fn tensor_mut(&mut self, name: &str) -> Option<&mut [f64]> {
        let r = self.tensors.iter().find(|t| t.name == name)?.range();
        Some(&mut self.params[r])
    }

    pub(crate) fn p(&self, r: &Range<usize>) -> &[f64] {
        &self.params[r.clone()]
    }

    pub fn to_container(&self) -> WeightContainer {
        WeightContainer {
            format: WEIGHT_FORMAT.to_string(),
            version: WEIGHT_VERSION,
            config: self.config,
            stats: self.stats,
            tensors: self
                .tensors
                .iter()
                .map(|t| NamedTensor {
                    name: t.name.clone(),
                    shape: t.shape.clone(),
                    data: self.params[t.range()].to_vec(),
                })
                .collect(),
            bank: self.bank.clone(),
        }
    }

    pub fn from_container(c: WeightContainer) -> Result<Self> {
        if c.format != WEIGHT_FORMAT {
            return Err(Error::Format(format!("not a weight file: format {:?}", c.format)));
        }
        if c.version != WEIGHT_VERSION {
            return Err(Error::Format(format!("unsupported weight file version {}", c.version)));
        }
        let mut w = Self::zeros(c.config)?;
        if c.tensors.len() != w.tensors.len() {
            return Err(Error::ShapeMismatch(format!(
                "{} tensors in file, {} expected",
                c.tensors.len(),
                w.tensors.len()
            )));
        }
        for (t, info) in c.tensors.into_iter().zip(w.tensors.clone()) {
            if t.name != info.name || t.shape != info.shape || t.data.len() != info.len() {
                return Err(Error::ShapeMismatch(format!(
                    "tensor {} {:?} does not match expected {} {:?}",
                    t.name, t.shape, info.name, info.shape
                )));
            }
            w.params[info.range()].copy_from_slice(&t.data);
        }
        w.stats = c.stats;
        w.bank = c.bank;
        Ok(w)
    }
}

pub const WEIGHT_FORMAT: &str = "primrnn-weights";
pub const WEIGHT_VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NamedTensor {
    pub name: String,
    pub shape: Vec<usize>,
    pub data: Vec<f64>,
}

/// Serialized form of [`ModelWeights`].
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WeightContainer {
    pub format: String,
    pub version: u32,
    pub config: ModelConfig,
    pub stats: Option<Stats>,
    pub tensors: Vec<NamedTensor>,
    #[serde(default)]
    pub bank: Vec<BankEntry>,
}
