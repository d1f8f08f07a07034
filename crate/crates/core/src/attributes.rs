//! The 32-slot pedestrian attribute layout and the attribute vector type.
//!
//! Slot layout:
//!
//! | slots  | meaning                                   | group kind |
//! |--------|-------------------------------------------|------------|
//! | 0      | gender (male = 1)                         | binary     |
//! | 1..=3  | body shape thin / medium / fat            | one-hot    |
//! | 4..=6  | hair bald / short / long                  | one-hot    |
//! | 7      | long sleeve                               | binary     |
//! | 8      | upper-body long                           | binary     |
//! | 9      | skirt (0 = pants)                         | binary     |
//! | 10     | lower-body long                           | binary     |
//! | 11..13 | backpack, hat, boots                      | binary     |
//! | 14..=22| upper-body colors                         | multi-hot  |
//! | 23..=31| lower-body colors                         | multi-hot  |

use std::ops::Range;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub const NUM_ATTRIBUTES: usize = 32;

pub const COLOR_NAMES: [&str; 9] =
    ["black", "white", "gray", "red", "green", "blue", "yellow", "brown", "purple"];

pub const GENDER: usize = 0;
pub const BODY_SHAPE: Range<usize> = 1..4;
pub const HAIR_LENGTH: Range<usize> = 4..7;
pub const LONG_SLEEVE: usize = 7;
pub const UPPER_LONG: usize = 8;
pub const SKIRT: usize = 9;
pub const LOWER_LONG: usize = 10;
pub const BACKPACK: usize = 11;
pub const HAT: usize = 12;
pub const BOOTS: usize = 13;
pub const UPPER_COLOR: Range<usize> = 14..23;
pub const LOWER_COLOR: Range<usize> = 23..32;

/// Standalone yes/no slots, in slot order.
pub const BINARY_SLOTS: [usize; 8] =
    [GENDER, LONG_SLEEVE, UPPER_LONG, SKIRT, LOWER_LONG, BACKPACK, HAT, BOOTS];

pub const ONE_HOT_GROUPS: [Range<usize>; 2] = [BODY_SHAPE, HAIR_LENGTH];
pub const MULTI_HOT_GROUPS: [Range<usize>; 2] = [UPPER_COLOR, LOWER_COLOR];

pub fn attribute_name(slot: usize) -> String {
    const SHAPES: [&str; 3] = ["thin", "medium", "fat"];
    const HAIR: [&str; 3] = ["bald", "short", "long"];
    match slot {
        GENDER => "male".into(),
        s if BODY_SHAPE.contains(&s) => format!("body_{}", SHAPES[s - BODY_SHAPE.start]),
        s if HAIR_LENGTH.contains(&s) => format!("hair_{}", HAIR[s - HAIR_LENGTH.start]),
        LONG_SLEEVE => "long_sleeve".into(),
        UPPER_LONG => "upper_long".into(),
        SKIRT => "skirt".into(),
        LOWER_LONG => "lower_long".into(),
        BACKPACK => "backpack".into(),
        HAT => "hat".into(),
        BOOTS => "boots".into(),
        s if UPPER_COLOR.contains(&s) => format!("upper_{}", COLOR_NAMES[s - UPPER_COLOR.start]),
        s if LOWER_COLOR.contains(&s) => format!("lower_{}", COLOR_NAMES[s - LOWER_COLOR.start]),
        _ => format!("slot_{slot}"),
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum AttrMode {
    /// Ground-truth bits, each 0 or 1, group constraints enforced.
    Binary,
    /// Probabilities or soft observations in `[0, 1]`.
    Prob,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AttributeVector {
    values: [f64; NUM_ATTRIBUTES],
    mode: AttrMode,
}

impl AttributeVector {
    pub fn binary(bits: [u8; NUM_ATTRIBUTES]) -> Result<Self> {
        let mut values = [0.0; NUM_ATTRIBUTES];
        for (v, &b) in values.iter_mut().zip(&bits) {
            if b > 1 {
                return Err(Error::InvalidAttributes(format!("non-binary value {b}")));
            }
            *v = f64::from(b);
        }
        let v = AttributeVector { values, mode: AttrMode::Binary };
        v.validate()?;
        Ok(v)
    }

    pub fn prob(values: [f64; NUM_ATTRIBUTES]) -> Result<Self> {
        let v = AttributeVector { values, mode: AttrMode::Prob };
        v.validate()?;
        Ok(v)
    }

    /// Builds a probability vector from a slice, checking the length.
    pub fn prob_from_slice(values: &[f64]) -> Result<Self> {
        if values.len() != NUM_ATTRIBUTES {
            return Err(Error::DimensionMismatch { expected: NUM_ATTRIBUTES, got: values.len() });
        }
        let mut arr = [0.0; NUM_ATTRIBUTES];
        arr.copy_from_slice(values);
        Self::prob(arr)
    }

    pub fn splat(value: f64) -> Result<Self> {
        Self::prob([value; NUM_ATTRIBUTES])
    }

    pub fn validate(&self) -> Result<()> {
        if self.values.iter().any(|v| !v.is_finite() || *v < 0.0 || *v > 1.0) {
            return Err(Error::InvalidAttributes("value outside [0, 1]".into()));
        }
        if self.mode == AttrMode::Prob {
            return Ok(());
        }
        if self.values.iter().any(|&v| v != 0.0 && v != 1.0) {
            return Err(Error::InvalidAttributes("binary vector holds a non-binary value".into()));
        }
        for group in ONE_HOT_GROUPS {
            let sum: f64 = self.values[group.clone()].iter().sum();
            if sum != 1.0 {
                return Err(Error::InvalidAttributes(format!(
                    "one-hot group {}..{} has {} bits set",
                    group.start, group.end, sum
                )));
            }
        }
        for group in MULTI_HOT_GROUPS {
            let sum: f64 = self.values[group.clone()].iter().sum();
            if sum < 1.0 {
                return Err(Error::InvalidAttributes(format!(
                    "color group {}..{} has no color set",
                    group.start, group.end
                )));
            }
        }
        Ok(())
    }

    #[inline]
    pub fn values(&self) -> &[f64; NUM_ATTRIBUTES] {
        &self.values
    }

    #[inline]
    pub fn mode(&self) -> AttrMode {
        self.mode
    }

    /// Same values, reinterpreted as probabilities.
    pub fn to_prob(&self) -> AttributeVector {
        AttributeVector { values: self.values, mode: AttrMode::Prob }
    }

    /// Bits of a binary vector (values rounded for probability vectors).
    pub fn bits(&self) -> [u8; NUM_ATTRIBUTES] {
        let mut out = [0u8; NUM_ATTRIBUTES];
        for (o, v) in out.iter_mut().zip(&self.values) {
            *o = u8::from(*v >= 0.5);
        }
        out
    }
}
