use std::fmt;
use std::str::FromStr;

use nalgebra::DMatrix;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::attributes::NUM_ATTRIBUTES;
use crate::error::{Error, Result};

pub const PARAMS_FORMAT_VERSION: u32 = 1;

/// Topology used to combine embedding tokens with attribute queries.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(into = "String", try_from = "String")]
pub enum FusionStrategy {
    CrossFertilize(u32),
    SelfEnhance(u32),
    AttrOnly,
    #[default]
    PreprocAttr,
    PreprocBoth,
    ConcatThenSelf,
}

impl FusionStrategy {
    pub const ALL: [FusionStrategy; 6] = [
        FusionStrategy::CrossFertilize(2),
        FusionStrategy::SelfEnhance(2),
        FusionStrategy::AttrOnly,
        FusionStrategy::PreprocAttr,
        FusionStrategy::PreprocBoth,
        FusionStrategy::ConcatThenSelf,
    ];

    pub fn validate(&self) -> Result<()> {
        match self {
            FusionStrategy::CrossFertilize(0) | FusionStrategy::SelfEnhance(0) => {
                Err(Error::Config("strategy rounds must be at least 1".into()))
            }
            _ => Ok(()),
        }
    }

    pub fn uses_adaptor(&self) -> bool {
        !matches!(self, FusionStrategy::AttrOnly)
    }
}

impl fmt::Display for FusionStrategy {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            FusionStrategy::CrossFertilize(r) => write!(f, "cross-fertilize:{r}"),
            FusionStrategy::SelfEnhance(r) => write!(f, "self-enhance:{r}"),
            FusionStrategy::AttrOnly => f.write_str("attr-only"),
            FusionStrategy::PreprocAttr => f.write_str("preproc-attr"),
            FusionStrategy::PreprocBoth => f.write_str("preproc-both"),
            FusionStrategy::ConcatThenSelf => f.write_str("concat-self"),
        }
    }
}

impl FromStr for FusionStrategy {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let (name, rounds) = match s.split_once(':') {
            Some((n, r)) => {
                let r = r.parse::<u32>().map_err(|_| Error::Config(format!("bad round count in {s:?}")))?;
                (n, Some(r))
            }
            None => (s, None),
        };
        let strategy = match (name, rounds) {
            ("cross-fertilize", r) => FusionStrategy::CrossFertilize(r.unwrap_or(1)),
            ("self-enhance", r) => FusionStrategy::SelfEnhance(r.unwrap_or(1)),
            ("attr-only", None) => FusionStrategy::AttrOnly,
            ("preproc-attr", None) => FusionStrategy::PreprocAttr,
            ("preproc-both", None) => FusionStrategy::PreprocBoth,
            ("concat-self", None) => FusionStrategy::ConcatThenSelf,
            _ => return Err(Error::Config(format!("unknown fusion strategy {s:?}"))),
        };
        strategy.validate()?;
        Ok(strategy)
    }
}

impl From<FusionStrategy> for String {
    fn from(s: FusionStrategy) -> String {
        s.to_string()
    }
}

impl TryFrom<String> for FusionStrategy {
    type Error = Error;

    fn try_from(s: String) -> Result<Self> {
        s.parse()
    }
}

/// Where the attribute queries come from.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum A1Source {
    /// The detector's attribute observation.
    #[default]
    Observed,
    /// A learned linear map from the embedding followed by a sigmoid.
    LinearHead,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct FusionDims {
    pub dim: usize,
    pub tokens: usize,
    pub classes: usize,
}

impl FusionDims {
    pub fn token_dim(&self) -> usize {
        self.dim / self.tokens
    }

    pub fn validate(&self) -> Result<()> {
        if self.dim == 0 || self.tokens == 0 || self.classes == 0 {
            return Err(Error::Config("fusion dimensions must be positive".into()));
        }
        if self.dim % self.tokens != 0 {
            return Err(Error::Config(format!(
                "embedding dim {} is not divisible by token count {}",
                self.dim, self.tokens
            )));
        }
        Ok(())
    }
}

/// Query, key and value projections of one attention block.
#[derive(Debug, Clone, PartialEq)]
pub struct Attn {
    pub wq: DMatrix<f64>,
    pub wk: DMatrix<f64>,
    pub wv: DMatrix<f64>,
}

impl Attn {
    fn zeros(t: usize) -> Self {
        Attn { wq: DMatrix::zeros(t, t), wk: DMatrix::zeros(t, t), wv: DMatrix::zeros(t, t) }
    }
}

/// Every trainable tensor. Also used to hold gradients.
#[derive(Debug, Clone, PartialEq)]
pub struct Tensors {
    pub w1: DMatrix<f64>,
    pub b1: DMatrix<f64>,
    pub w2: DMatrix<f64>,
    pub b2: DMatrix<f64>,
    pub attr_embed: DMatrix<f64>,
    pub main: Attn,
    pub rev: Attn,
    pub sa_attr: Attn,
    pub sa_emb: Attn,
    pub sa_joint: Attn,
    pub head_h: DMatrix<f64>,
    pub head_c: DMatrix<f64>,
    pub id_w: DMatrix<f64>,
    pub id_b: DMatrix<f64>,
    pub a1_w: DMatrix<f64>,
    pub a1_b: DMatrix<f64>,
}

macro_rules! tensor_list {
    ($self:ident, $($ref:tt)*) => {
        vec![
            ("w1", $($ref)* $self.w1),
            ("b1", $($ref)* $self.b1),
            ("w2", $($ref)* $self.w2),
            ("b2", $($ref)* $self.b2),
            ("attr_embed", $($ref)* $self.attr_embed),
            ("main.wq", $($ref)* $self.main.wq),
            ("main.wk", $($ref)* $self.main.wk),
            ("main.wv", $($ref)* $self.main.wv),
            ("rev.wq", $($ref)* $self.rev.wq),
            ("rev.wk", $($ref)* $self.rev.wk),
            ("rev.wv", $($ref)* $self.rev.wv),
            ("sa_attr.wq", $($ref)* $self.sa_attr.wq),
            ("sa_attr.wk", $($ref)* $self.sa_attr.wk),
            ("sa_attr.wv", $($ref)* $self.sa_attr.wv),
            ("sa_emb.wq", $($ref)* $self.sa_emb.wq),
            ("sa_emb.wk", $($ref)* $self.sa_emb.wk),
            ("sa_emb.wv", $($ref)* $self.sa_emb.wv),
            ("sa_joint.wq", $($ref)* $self.sa_joint.wq),
            ("sa_joint.wk", $($ref)* $self.sa_joint.wk),
            ("sa_joint.wv", $($ref)* $self.sa_joint.wv),
            ("head_h", $($ref)* $self.head_h),
            ("head_c", $($ref)* $self.head_c),
            ("id_w", $($ref)* $self.id_w),
            ("id_b", $($ref)* $self.id_b),
            ("a1_w", $($ref)* $self.a1_w),
            ("a1_b", $($ref)* $self.a1_b),
        ]
    };
}

impl Tensors {
    pub fn zeros(dims: &FusionDims) -> Self {
        let (d, t, k, m) = (dims.dim, dims.token_dim(), dims.classes, NUM_ATTRIBUTES);
        Tensors {
            w1: DMatrix::zeros(d, d),
            b1: DMatrix::zeros(d, 1),
            w2: DMatrix::zeros(d, d),
            b2: DMatrix::zeros(d, 1),
            attr_embed: DMatrix::zeros(m, t),
            main: Attn::zeros(t),
            rev: Attn::zeros(t),
            sa_attr: Attn::zeros(t),
            sa_emb: Attn::zeros(t),
            sa_joint: Attn::zeros(t),
            head_h: DMatrix::zeros(m, t),
            head_c: DMatrix::zeros(m, 1),
            id_w: DMatrix::zeros(k, d),
            id_b: DMatrix::zeros(k, 1),
            a1_w: DMatrix::zeros(m, d),
            a1_b: DMatrix::zeros(m, 1),
        }
    }

    pub fn named(&self) -> Vec<(&'static str, &DMatrix<f64>)> {
        tensor_list!(self, &)
    }

    pub fn named_mut(&mut self) -> Vec<(&'static str, &mut DMatrix<f64>)> {
        tensor_list!(self, &mut)
    }

    pub fn len(&self) -> usize {
        self.named().iter().map(|(_, m)| m.len()).sum()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// `self += alpha * other`
    pub fn axpy(&mut self, alpha: f64, other: &Tensors) {
        for ((_, a), (_, b)) in self.named_mut().into_iter().zip(other.named()) {
            a.zip_apply(b, |x, y| *x += alpha * y);
        }
    }

    pub fn scale(&mut self, alpha: f64) {
        for (_, a) in self.named_mut() {
            *a *= alpha;
        }
    }

    pub fn all_finite(&self) -> bool {
        self.named().iter().all(|(_, m)| m.iter().all(|v| v.is_finite()))
    }
}

/// All trainable state of the attribute head plus its shape header.
#[derive(Debug, Clone, PartialEq)]
pub struct FusionParams {
    pub dims: FusionDims,
    pub strategy: FusionStrategy,
    pub a1_source: A1Source,
    /// Divide attention scores by the square root of the token width.
    pub scaled_attention: bool,
    pub tensors: Tensors,
}

impl FusionParams {
    /// All-zero parameters (adaptor is then an exact identity).
    pub fn zeros(dims: FusionDims, strategy: FusionStrategy) -> Result<Self> {
        dims.validate()?;
        strategy.validate()?;
        Ok(FusionParams {
            dims,
            strategy,
            a1_source: A1Source::Observed,
            scaled_attention: false,
            tensors: Tensors::zeros(&dims),
        })
    }

    /// Seeded random initialization.
    pub fn init(dims: FusionDims, strategy: FusionStrategy, seed: u64) -> Result<Self> {
        let mut p = Self::zeros(dims, strategy)?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let d = dims.dim as f64;
        let t = dims.token_dim() as f64;
        let mut fill = |m: &mut DMatrix<f64>, std: f64| {
            let n = Normal::new(0.0, std).expect("positive std");
            m.iter_mut().for_each(|v| *v = n.sample(&mut rng));
        };
        let tt = &mut p.tensors;
        fill(&mut tt.w1, 1.0 / d.sqrt());
        fill(&mut tt.w2, 1.0 / d.sqrt());
        fill(&mut tt.attr_embed, 1.0);
        for a in [&mut tt.main, &mut tt.rev, &mut tt.sa_attr, &mut tt.sa_emb, &mut tt.sa_joint] {
            fill(&mut a.wq, 1.0 / t.sqrt());
            fill(&mut a.wk, 1.0 / t.sqrt());
            fill(&mut a.wv, 1.0 / t.sqrt());
        }
        fill(&mut tt.head_h, 1.0 / t.sqrt());
        fill(&mut tt.id_w, 1.0 / d.sqrt());
        fill(&mut tt.a1_w, 1.0 / d.sqrt());
        Ok(p)
    }

    pub fn validate(&self) -> Result<()> {
        self.dims.validate()?;
        self.strategy.validate()?;
        let expected = Tensors::zeros(&self.dims);
        for ((name, a), (_, b)) in self.tensors.named().into_iter().zip(expected.named()) {
            if a.shape() != b.shape() {
                return Err(Error::Config(format!(
                    "tensor {name} has shape {:?}, expected {:?}",
                    a.shape(),
                    b.shape()
                )));
            }
        }
        if !self.tensors.all_finite() {
            return Err(Error::Numerical("non-finite parameter".into()));
        }
        Ok(())
    }

    pub fn to_json(&self) -> String {
        let blob = ParamsBlob {
            format: "attmot-fusion".into(),
            version: PARAMS_FORMAT_VERSION,
            dims: self.dims,
            strategy: self.strategy,
            a1_source: self.a1_source,
            scaled_attention: self.scaled_attention,
            tensors: self
                .tensors
                .named()
                .into_iter()
                .map(|(name, m)| TensorBlob {
                    name: name.to_string(),
                    rows: m.nrows(),
                    cols: m.ncols(),
                    data: m.transpose().iter().copied().collect(),
                })
                .collect(),
        };
        serde_json::to_string(&blob).expect("params serialize")
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let blob: ParamsBlob =
            serde_json::from_str(text).map_err(|e| Error::Config(format!("invalid fusion params: {e}")))?;
        if blob.format != "attmot-fusion" || blob.version != PARAMS_FORMAT_VERSION {
            return Err(Error::Config(format!(
                "unsupported fusion params format {} v{}",
                blob.format, blob.version
            )));
        }
        let mut p = FusionParams::zeros(blob.dims, blob.strategy)?;
        p.a1_source = blob.a1_source;
        p.scaled_attention = blob.scaled_attention;
        let mut slots = p.tensors.named_mut();
        if blob.tensors.len() != slots.len() {
            return Err(Error::Config(format!("expected {} tensors, found {}", slots.len(), blob.tensors.len())));
        }
        for (t, (name, slot)) in blob.tensors.into_iter().zip(slots.iter_mut()) {
            if t.name != *name || (t.rows, t.cols) != slot.shape() || t.data.len() != t.rows * t.cols {
                return Err(Error::Config(format!("tensor {} does not match header", t.name)));
            }
            **slot = DMatrix::from_row_slice(t.rows, t.cols, &t.data);
        }
        drop(slots);
        p.validate()?;
        Ok(p)
    }
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct ParamsBlob {
    format: String,
    version: u32,
    dims: FusionDims,
    strategy: FusionStrategy,
    a1_source: A1Source,
    scaled_attention: bool,
    tensors: Vec<TensorBlob>,
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct TensorBlob {
    name: String,
    rows: usize,
    cols: usize,
    data: Vec<f64>,
}
