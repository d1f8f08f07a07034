//! Value types shared by every stage of the pipeline.

use serde::{Deserialize, Serialize};

use crate::attributes::AttributeVector;
use crate::error::{Error, Result};

/// Axis-aligned box in pixel coordinates, top-left anchored.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BBox {
    pub left: f64,
    pub top: f64,
    pub width: f64,
    pub height: f64,
}

impl BBox {
    pub fn new(left: f64, top: f64, width: f64, height: f64) -> Result<Self> {
        let b = BBox { left, top, width, height };
        b.validate()?;
        Ok(b)
    }

    pub fn validate(&self) -> Result<()> {
        let fields = [self.left, self.top, self.width, self.height];
        if fields.iter().any(|v| !v.is_finite()) {
            return Err(Error::InvalidBox(format!("non-finite field in {self:?}")));
        }
        if self.width <= 0.0 || self.height <= 0.0 {
            return Err(Error::InvalidBox(format!(
                "non-positive extent {}x{}",
                self.width, self.height
            )));
        }
        Ok(())
    }

    pub fn from_center(cx: f64, cy: f64, width: f64, height: f64) -> Self {
        BBox { left: cx - width / 2.0, top: cy - height / 2.0, width, height }
    }

    #[inline]
    pub fn right(&self) -> f64 {
        self.left + self.width
    }

    #[inline]
    pub fn bottom(&self) -> f64 {
        self.top + self.height
    }

    #[inline]
    pub fn area(&self) -> f64 {
        self.width * self.height
    }

    #[inline]
    pub fn center(&self) -> (f64, f64) {
        (self.left + self.width / 2.0, self.top + self.height / 2.0)
    }

    /// Area of the overlap with `other`, zero when disjoint.
    pub fn intersection_area(&self, other: &BBox) -> f64 {
        let w = self.right().min(other.right()) - self.left.max(other.left);
        let h = self.bottom().min(other.bottom()) - self.top.max(other.top);
        if w <= 0.0 || h <= 0.0 {
            0.0
        } else {
            w * h
        }
    }

    /// Clips to `[0, width] x [0, height]`; `None` if nothing remains.
    pub fn clip(&self, image_width: f64, image_height: f64) -> Option<BBox> {
        let l = self.left.max(0.0);
        let t = self.top.max(0.0);
        let r = self.right().min(image_width);
        let b = self.bottom().min(image_height);
        if r - l <= 0.0 || b - t <= 0.0 {
            None
        } else {
            Some(BBox { left: l, top: t, width: r - l, height: b - t })
        }
    }

    /// Rounds every field to the 2-decimal grid used by the MOT text format.
    pub fn quantized(&self) -> BBox {
        BBox {
            left: round2(self.left),
            top: round2(self.top),
            width: round2(self.width),
            height: round2(self.height),
        }
    }
}

pub(crate) fn round2(v: f64) -> f64 {
    (v * 100.0).round() / 100.0
}

/// Appearance feature vector. Dimension is fixed within a run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct Embedding(pub Vec<f64>);

impl Embedding {
    pub fn new(values: Vec<f64>) -> Result<Self> {
        if values.iter().any(|v| !v.is_finite()) {
            return Err(Error::Numerical("embedding has non-finite entries".into()));
        }
        Ok(Embedding(values))
    }

    pub fn zeros(dim: usize) -> Self {
        Embedding(vec![0.0; dim])
    }

    #[inline]
    pub fn dim(&self) -> usize {
        self.0.len()
    }

    #[inline]
    pub fn as_slice(&self) -> &[f64] {
        &self.0
    }

    pub fn norm(&self) -> f64 {
        self.0.iter().map(|v| v * v).sum::<f64>().sqrt()
    }

    /// Unit-norm copy; errors on the zero vector.
    pub fn normalized(&self) -> Result<Embedding> {
        let n = self.norm();
        if n == 0.0 || !n.is_finite() {
            return Err(Error::DegenerateEmbedding);
        }
        Ok(Embedding(self.0.iter().map(|v| v / n).collect()))
    }
}

/// One detector output for one frame.
#[derive(Debug, Clone, PartialEq)]
pub struct Detection {
    pub frame: u32,
    pub bbox: BBox,
    pub confidence: f64,
    pub embedding: Embedding,
    pub attr_obs: AttributeVector,
}

/// One annotated ground-truth box.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GtEntry {
    pub frame: u32,
    pub identity: u32,
    pub bbox: BBox,
    pub visibility: f64,
    /// MOTChallenge active flag; inactive entries are ignore regions.
    pub active: bool,
}

/// One tracker output row. `id == 0` means no identity was assigned.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TrackOutput {
    pub frame: u32,
    pub id: u32,
    pub bbox: BBox,
    pub confidence: f64,
}
