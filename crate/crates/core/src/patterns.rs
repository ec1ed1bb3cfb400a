//! Named cuboid-stage sequences, their validation against a tensor shape,
//! and an exact multiply-accumulate cost model.

use std::fmt;
use std::path::Path;
use std::str::FromStr;

use cuboidcast_tensor::counter::SOFTMAX_FLOPS_PER_ELEMENT;
use cuboidcast_tensor::OpCounts;
use serde::{Deserialize, Serialize};

use crate::cuboid::{AxisMap, CuboidSpec};
use crate::error::{config, Error, Result};

/// Pattern families. `Generic` carries explicit stages.
#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub enum Template {
    Axial,
    DividedSpaceTime,
    VideoSwin { p: usize, m: usize },
    SpatialLocalDilate { m: usize },
    AxialSpaceDilate { m: usize },
    /// One stage covering the whole tensor.
    Full,
    Generic(Vec<CuboidSpec>),
}

impl Template {
    pub fn build(&self, dims: [usize; 3]) -> Result<Vec<CuboidSpec>> {
        let [t, h, w] = dims;
        if dims.contains(&0) {
            return config(format!("empty extent in {dims:?}"));
        }
        let l = CuboidSpec::local;
        let d = CuboidSpec::dilated;
        Ok(match *self {
            Template::Axial => vec![l([t, 1, 1]), l([1, h, 1]), l([1, 1, w])],
            Template::DividedSpaceTime => vec![l([t, 1, 1]), l([1, h, w])],
            Template::VideoSwin { p, m } => {
                if p == 0 || m == 0 {
                    return config("video_swin needs P, M >= 1");
                }
                vec![l([p, m, m]), l([p, m, m]).with_shift([p / 2, m / 2, m / 2])]
            }
            Template::SpatialLocalDilate { m } => {
                if m == 0 {
                    return config("spatial_local_dilate needs M >= 1");
                }
                vec![l([t, 1, 1]), l([1, m, m]), d([1, m, m])]
            }
            Template::AxialSpaceDilate { m } => {
                for (axis, extent) in [("H", h), ("W", w)] {
                    if m == 0 || extent % m != 0 {
                        return config(format!("axial_space_dilate: M={m} does not divide {axis}={extent}"));
                    }
                }
                let (bh, bw) = (h / m, w / m);
                vec![l([t, 1, 1]), d([1, bh, 1]), l([1, bh, 1]), d([1, 1, bw]), l([1, 1, bw])]
            }
            Template::Full => vec![l(dims)],
            Template::Generic(ref stages) => {
                if stages.is_empty() {
                    return config("generic pattern has no stages");
                }
                for s in stages {
                    s.validate()?;
                }
                stages.clone()
            }
        })
    }

    /// Human-readable family name, e.g. `Video-Swin 2x8`.
    pub fn label(&self) -> String {
        match self {
            Template::Axial => "Axial".into(),
            Template::DividedSpaceTime => "Divided Space-Time".into(),
            Template::VideoSwin { p, m } => format!("Video-Swin {p}x{m}"),
            Template::SpatialLocalDilate { m } => format!("Spatial Local-Dilate-{m}"),
            Template::AxialSpaceDilate { m } => format!("Axial Space Dilate-{m}"),
            Template::Full => "Full".into(),
            Template::Generic(_) => "Generic".into(),
        }
    }
}

impl fmt::Display for Template {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Template::Axial => f.write_str("axial"),
            Template::DividedSpaceTime => f.write_str("divided_space_time"),
            Template::VideoSwin { p, m } => write!(f, "video_swin_{p}x{m}"),
            Template::SpatialLocalDilate { m } => write!(f, "spatial_local_dilate_{m}"),
            Template::AxialSpaceDilate { m } => write!(f, "axial_space_dilate_{m}"),
            Template::Full => f.write_str("full"),
            Template::Generic(stages) => f.write_str(&stages_to_text(stages)),
        }
    }
}

fn num(s: &str, what: &str) -> Result<usize> {
    s.parse().map_err(|_| Error::Config(format!("bad {what} `{s}`")))
}

impl FromStr for Template {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let s = s.trim();
        if s.contains('(') {
            return Ok(Template::Generic(parse_stages(s)?));
        }
        let lower = s.to_ascii_lowercase().replace(['-', ' '], "_");
        let suffix = |prefix: &str| lower.strip_prefix(prefix).map(|r| r.trim_start_matches('_'));
        if lower == "axial" {
            return Ok(Template::Axial);
        }
        if matches!(lower.as_str(), "divided_space_time" | "dst") {
            return Ok(Template::DividedSpaceTime);
        }
        if lower == "full" {
            return Ok(Template::Full);
        }
        if let Some(rest) = suffix("video_swin") {
            let (p, m) = rest.split_once('x').ok_or_else(|| Error::Config(format!("video_swin needs PxM, got `{s}`")))?;
            return Ok(Template::VideoSwin { p: num(p, "P")?, m: num(m, "M")? });
        }
        for prefix in ["spatial_local_dilate", "spatial_local_dilated", "spatial_local_global"] {
            if let Some(m) = suffix(prefix) {
                if !m.is_empty() && !m.starts_with(|c: char| c.is_ascii_alphabetic()) {
                    return Ok(Template::SpatialLocalDilate { m: num(m, "M")? });
                }
            }
        }
        if let Some(m) = suffix("axial_space_dilate") {
            return Ok(Template::AxialSpaceDilate { m: num(m, "M")? });
        }
        config(format!("unknown pattern `{s}`"))
    }
}

impl Serialize for Template {
    fn serialize<S: serde::Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        s.serialize_str(&self.to_string())
    }
}

impl<'de> Deserialize<'de> for Template {
    fn deserialize<D: serde::Deserializer<'de>>(d: D) -> std::result::Result<Self, D::Error> {
        let s = String::deserialize(d)?;
        s.parse().map_err(serde::de::Error::custom)
    }
}

/// `(bT,bH,bW)/strategy/(sT,sH,sW)` stages joined by `->`.
pub fn stages_to_text(stages: &[CuboidSpec]) -> String {
    stages.iter().map(|s| s.to_string()).collect::<Vec<_>>().join("->")
}

pub fn parse_stages(text: &str) -> Result<Vec<CuboidSpec>> {
    let stages = text.split("->").map(|s| s.trim().parse()).collect::<Result<Vec<CuboidSpec>>>()?;
    if stages.is_empty() {
        return config("pattern has no stages");
    }
    Ok(stages)
}

/// A pattern expanded for one tensor shape, plus its global-vector count.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct PatternConfig {
    pub name: String,
    pub stages: Vec<CuboidSpec>,
    #[serde(default)]
    pub globals: usize,
}

impl PatternConfig {
    pub fn build(template: &Template, dims: [usize; 3], globals: usize) -> Result<Self> {
        Ok(Self { name: template.to_string(), stages: template.build(dims)?, globals })
    }

    pub fn to_text(&self) -> String {
        stages_to_text(&self.stages)
    }

    /// Cuboid sizes joined by arrows, as in the pattern table.
    pub fn size_row(&self) -> String {
        self.stages
            .iter()
            .map(|s| format!("({}, {}, {})", s.size[0], s.size[1], s.size[2]))
            .collect::<Vec<_>>()
            .join("->")
    }

    pub fn load(path: &Path) -> Result<Self> {
        let cfg: PatternConfig = serde_json::from_str(&std::fs::read_to_string(path)?)?;
        if cfg.stages.is_empty() {
            return config(format!("{}: pattern has no stages", path.display()));
        }
        for s in &cfg.stages {
            s.validate()?;
        }
        Ok(cfg)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        std::fs::write(path, serde_json::to_string_pretty(self)?)?;
        Ok(())
    }

    pub fn template(&self) -> Template {
        self.name.parse().unwrap_or_else(|_| Template::Generic(self.stages.clone()))
    }
}

/// Stage as it will run on a given shape.
#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct StageCheck {
    pub requested: CuboidSpec,
    pub effective: CuboidSpec,
    pub padded: [usize; 3],
    pub warnings: Vec<String>,
}

/// Padded extents per stage; cuboids larger than the tensor are reported and
/// clamped.
pub fn validate_pattern(cfg: &PatternConfig, dims: [usize; 3]) -> Vec<StageCheck> {
    cfg.stages
        .iter()
        .enumerate()
        .map(|(i, s)| {
            let effective = s.clamped(dims);
            let mut warnings = Vec::new();
            for (a, axis) in ["T", "H", "W"].iter().enumerate() {
                if s.size[a] > dims[a] {
                    warnings.push(format!("stage {i}: cuboid {axis}={} exceeds extent {}, clamped", s.size[a], dims[a]));
                }
            }
            let padded = std::array::from_fn(|a| dims[a].div_ceil(effective.size[a]) * effective.size[a]);
            if padded != dims {
                warnings.push(format!("stage {i}: padded {dims:?} -> {padded:?}"));
            }
            StageCheck { requested: *s, effective, padded, warnings }
        })
        .collect()
}

/// Widths that fix the cost of one block.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct BlockDims {
    pub channels: usize,
    pub globals: usize,
    pub heads: usize,
    pub ffn_ratio: usize,
    pub global_ffn_ratio: usize,
}

impl BlockDims {
    pub fn new(channels: usize, globals: usize) -> Self {
        Self { channels, globals, heads: 4, ffn_ratio: 4, global_ffn_ratio: 1 }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct StageCost {
    pub spec: CuboidSpec,
    pub cuboids: usize,
    /// Local cuboid attention including its projections.
    pub attention: OpCounts,
    /// Global-vector update including its projections.
    pub global_attention: OpCounts,
    /// Token and global feed-forward layers.
    pub ffn: OpCounts,
    /// Score-matrix entries over all heads.
    pub attention_map: u64,
    pub params: u64,
}

impl StageCost {
    pub fn total(&self) -> OpCounts {
        self.attention + self.global_attention + self.ffn
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct CostReport {
    pub pattern: String,
    pub dims: [usize; 3],
    pub block: BlockDims,
    pub stages: Vec<StageCost>,
    pub attention_only: u64,
    pub total: u64,
    pub counts: OpCounts,
    pub attention_map: u64,
    pub params: u64,
    /// Same block with a single full-tensor stage and no globals.
    pub full_attention_total: u64,
    pub full_attention_scores: u64,
}

/// Sum over cuboids of the squared unpadded token count.
fn sum_sq_valid(spec: &CuboidSpec, dims: [usize; 3]) -> u64 {
    (0..3)
        .map(|a| {
            let ax = AxisMap::new(dims[a], spec.size[a], spec.shift[a], spec.strategy);
            (0..ax.count).map(|n| (ax.valid_in(n) as u64).pow(2)).sum::<u64>()
        })
        .product()
}

fn attend_counts(tokens: u64, pairs: u64, c: u64, heads: u64) -> OpCounts {
    OpCounts {
        linear_macs: tokens * c * 4 * c,
        conv_macs: 0,
        score_macs: pairs * c,
        value_macs: pairs * c,
        softmax_flops: pairs * heads * SOFTMAX_FLOPS_PER_ELEMENT,
    }
}

fn ffn_counts(rows: u64, c: u64, hidden: u64) -> OpCounts {
    OpCounts { linear_macs: rows * 2 * c * hidden, ..Default::default() }
}

pub fn stage_cost(spec: &CuboidSpec, dims: [usize; 3], b: &BlockDims) -> StageCost {
    let eff = spec.clamped(dims);
    let tokens: u64 = dims.iter().map(|&d| d as u64).product();
    let (c, p, heads) = (b.channels as u64, b.globals as u64, b.heads as u64);
    let local_pairs = sum_sq_valid(&eff, dims) + p * tokens;
    let attention = attend_counts(tokens, local_pairs, c, heads);
    let (global_attention, global_ffn, global_params) = if p > 0 {
        let hg = b.global_ffn_ratio as u64 * c;
        let pairs = p * (p + tokens);
        let params = 2 * c + (4 * c * c + c) + (2 * c + 2 * c * hg + hg + c);
        (attend_counts(p, pairs, c, heads), ffn_counts(p, c, hg), params)
    } else {
        (OpCounts::default(), OpCounts::default(), 0)
    };
    let h = b.ffn_ratio as u64 * c;
    let local_params = 2 * c + (4 * c * c + c) + (2 * c + 2 * c * h + h + c);
    let cuboids = (0..3).map(|a| dims[a].div_ceil(eff.size[a])).product();
    StageCost {
        spec: eff,
        cuboids,
        attention,
        global_attention,
        ffn: ffn_counts(tokens, c, h) + global_ffn,
        attention_map: (local_pairs + if p > 0 { p * (p + tokens) } else { 0 }) * heads,
        params: local_params + global_params,
    }
}

/// Analytic cost of one block of `cfg` on a single `[T, H, W, C]` sample.
pub fn cost_model(cfg: &PatternConfig, dims: [usize; 3], block: &BlockDims) -> CostReport {
    let stages: Vec<StageCost> = cfg.stages.iter().map(|s| stage_cost(s, dims, block)).collect();
    let counts = stages.iter().fold(OpCounts::default(), |acc, s| acc + s.total());
    let attention_only = stages.iter().map(|s| (s.attention + s.global_attention).total()).sum();
    let full = stage_cost(&CuboidSpec::local(dims), dims, &BlockDims { globals: 0, ..*block });
    CostReport {
        pattern: cfg.name.clone(),
        dims,
        block: *block,
        attention_only,
        total: counts.total(),
        counts,
        attention_map: stages.iter().map(|s| s.attention_map).sum(),
        params: stages.iter().map(|s| s.params).sum(),
        stages,
        full_attention_total: full.total().total(),
        full_attention_scores: full.attention.score_macs,
    }
}

/// One row of the pattern sweep.
#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct SearchEntry {
    pub template: Template,
    pub globals: usize,
}

impl SearchEntry {
    pub fn label(&self) -> String {
        if self.globals > 0 {
            format!("{} + global", self.template.label())
        } else {
            self.template.label()
        }
    }
}

pub const SEARCH_GLOBALS: usize = 8;

/// Eight pattern families, each without and with global vectors.
pub fn enumerate_search_space() -> Vec<SearchEntry> {
    let families = [
        Template::Axial,
        Template::DividedSpaceTime,
        Template::VideoSwin { p: 2, m: 8 },
        Template::VideoSwin { p: 10, m: 8 },
        Template::SpatialLocalDilate { m: 2 },
        Template::SpatialLocalDilate { m: 4 },
        Template::AxialSpaceDilate { m: 2 },
        Template::AxialSpaceDilate { m: 4 },
    ];
    families
        .into_iter()
        .flat_map(|t| [0, SEARCH_GLOBALS].map(|g| SearchEntry { template: t.clone(), globals: g }))
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::cuboid::Strategy;

    #[test]
    fn names_round_trip() {
        for e in enumerate_search_space() {
            let name = e.template.to_string();
            assert_eq!(name.parse::<Template>().unwrap(), e.template);
        }
        assert_eq!("Spatial Local-Global 4".parse::<Template>().unwrap(), Template::SpatialLocalDilate { m: 4 });
    }

    #[test]
    fn strategy_alternation() {
        let s = Template::AxialSpaceDilate { m: 2 }.build([10, 32, 32]).unwrap();
        let strat: Vec<Strategy> = s.iter().map(|x| x.strategy).collect();
        use Strategy::*;
        assert_eq!(strat, vec![Local, Dilated, Local, Dilated, Local]);
        assert_eq!(s[1].size, [1, 16, 1]);
    }

    #[test]
    fn indivisible_m_names_extent() {
        let err = Template::AxialSpaceDilate { m: 3 }.build([10, 32, 30]).unwrap_err().to_string();
        assert!(err.contains("H=32"), "{err}");
    }

    #[test]
    fn pointwise_cuboid_scores() {
        let cfg = PatternConfig::build(&"(1,1,1)".parse().unwrap(), [2, 3, 4], 2).unwrap();
        let r = cost_model(&cfg, [2, 3, 4], &BlockDims::new(8, 2));
        assert_eq!(r.stages[0].attention.score_macs, 24 * 3 * 8);
    }
}
