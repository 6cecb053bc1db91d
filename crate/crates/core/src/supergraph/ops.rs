use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Deserializer, Serialize, Serializer};

use crate::error::Error;

/// A candidate node operation. Both kinds use odd square kernels with
/// same-size padding and no bias.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum OpKind {
    /// Depthwise `k×k` followed by a pointwise `1×1`.
    DwSeparable(usize),
    Conv(usize),
}

impl OpKind {
    pub fn kernel(self) -> usize {
        match self {
            OpKind::DwSeparable(k) | OpKind::Conv(k) => k,
        }
    }

    pub fn pad(self) -> usize {
        (self.kernel() - 1) / 2
    }

    /// Weight scalars for one block mapping `in_ch` to `out_ch` channels.
    pub fn param_count(self, in_ch: usize, out_ch: usize) -> usize {
        match self {
            OpKind::DwSeparable(k) => in_ch * k * k + out_ch * in_ch,
            OpKind::Conv(k) => out_ch * in_ch * k * k,
        }
    }

    /// Depthwise-separable 3/5/7 then standard 3/5/7.
    pub fn default_set() -> Vec<OpKind> {
        vec![
            OpKind::DwSeparable(3),
            OpKind::DwSeparable(5),
            OpKind::DwSeparable(7),
            OpKind::Conv(3),
            OpKind::Conv(5),
            OpKind::Conv(7),
        ]
    }
}

impl fmt::Display for OpKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            OpKind::DwSeparable(k) => write!(f, "dwsep{k}x{k}"),
            OpKind::Conv(k) => write!(f, "conv{k}x{k}"),
        }
    }
}

impl FromStr for OpKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let bad = || Error::InvalidArgument(format!("unknown operation `{s}`"));
        let (ctor, rest): (fn(usize) -> OpKind, &str) = if let Some(r) = s.strip_prefix("dwsep") {
            (OpKind::DwSeparable, r)
        } else if let Some(r) = s.strip_prefix("conv") {
            (OpKind::Conv, r)
        } else {
            return Err(bad());
        };
        let (a, b) = rest.split_once('x').ok_or_else(bad)?;
        let k: usize = a.parse().map_err(|_| bad())?;
        if b.parse::<usize>().ok() != Some(k) || k.is_multiple_of(2) {
            return Err(bad());
        }
        Ok(ctor(k))
    }
}

impl Serialize for OpKind {
    fn serialize<S: Serializer>(&self, s: S) -> Result<S::Ok, S::Error> {
        s.collect_str(self)
    }
}

impl<'de> Deserialize<'de> for OpKind {
    fn deserialize<D: Deserializer<'de>>(d: D) -> Result<Self, D::Error> {
        let s = String::deserialize(d)?;
        s.parse().map_err(serde::de::Error::custom)
    }
}
