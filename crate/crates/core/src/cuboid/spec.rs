use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{config, Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize, Default)]
#[serde(rename_all = "lowercase")]
pub enum Strategy {
    #[default]
    Local,
    Dilated,
}

impl fmt::Display for Strategy {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Strategy::Local => "local",
            Strategy::Dilated => "dilated",
        })
    }
}

impl FromStr for Strategy {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.trim() {
            "local" | "l" => Ok(Strategy::Local),
            "dilated" | "d" => Ok(Strategy::Dilated),
            other => config(format!("unknown strategy `{other}`")),
        }
    }
}

/// One decomposition stage: cuboid extents, grouping strategy and shift,
/// all ordered (T, H, W).
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct CuboidSpec {
    pub size: [usize; 3],
    #[serde(default)]
    pub strategy: Strategy,
    #[serde(default)]
    pub shift: [usize; 3],
}

impl CuboidSpec {
    pub fn local(size: [usize; 3]) -> Self {
        Self { size, strategy: Strategy::Local, shift: [0; 3] }
    }

    pub fn dilated(size: [usize; 3]) -> Self {
        Self { size, strategy: Strategy::Dilated, shift: [0; 3] }
    }

    pub fn with_shift(mut self, shift: [usize; 3]) -> Self {
        self.shift = shift;
        self
    }

    pub fn validate(&self) -> Result<()> {
        if self.size.contains(&0) {
            return config(format!("cuboid size {:?} has a zero extent", self.size));
        }
        Ok(())
    }

    /// The stage actually run on `dims`: an axis whose cuboid covers the
    /// whole extent is clamped to it and loses its shift.
    pub fn clamped(&self, dims: [usize; 3]) -> Self {
        let mut out = *self;
        for a in 0..3 {
            if out.size[a] >= dims[a] {
                out.size[a] = dims[a];
                out.shift[a] = 0;
            }
        }
        out
    }

    pub fn volume(&self) -> usize {
        self.size.iter().product()
    }
}

fn tuple(s: &str) -> Result<[usize; 3]> {
    let inner = s.trim().trim_start_matches('(').trim_end_matches(')');
    let parts: Vec<&str> = inner.split(',').map(str::trim).collect();
    if parts.len() != 3 {
        return config(format!("expected a (T,H,W) triple, got `{s}`"));
    }
    let mut out = [0; 3];
    for (o, p) in out.iter_mut().zip(parts) {
        *o = p.parse().map_err(|_| Error::Config(format!("`{p}` is not a non-negative integer")))?;
    }
    Ok(out)
}

impl fmt::Display for CuboidSpec {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let [t, h, w] = self.size;
        let [a, b, c] = self.shift;
        write!(f, "({t},{h},{w})/{}/({a},{b},{c})", self.strategy)
    }
}

impl FromStr for CuboidSpec {
    type Err = Error;

    /// `(bT,bH,bW)`, optionally followed by `/strategy` and `/(sT,sH,sW)`.
    fn from_str(s: &str) -> Result<Self> {
        let fields: Vec<&str> = s.split('/').collect();
        let size = tuple(fields[0])?;
        let strategy = match fields.get(1) {
            Some(st) => st.parse()?,
            None => Strategy::Local,
        };
        let shift = match fields.get(2) {
            Some(sh) => tuple(sh)?,
            None => [0; 3],
        };
        if fields.len() > 3 {
            return config(format!("too many fields in stage `{s}`"));
        }
        let spec = CuboidSpec { size, strategy, shift };
        spec.validate()?;
        Ok(spec)
    }
}
