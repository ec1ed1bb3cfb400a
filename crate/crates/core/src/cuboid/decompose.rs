use std::sync::Arc;

use cuboidcast_tensor::{Element, Tensor, NONE};

use super::spec::{CuboidSpec, Strategy};
use crate::error::{Error, Result};

/// Index map along one axis.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct AxisMap {
    pub extent: usize,
    pub block: usize,
    pub shift: usize,
    pub strategy: Strategy,
    /// Extent rounded up to a multiple of `block`.
    pub padded: usize,
    /// Number of cuboids along the axis.
    pub count: usize,
}

impl AxisMap {
    pub fn new(extent: usize, block: usize, shift: usize, strategy: Strategy) -> Self {
        let count = extent.div_ceil(block);
        let padded = count * block;
        Self { extent, block, shift: shift % padded.max(1), strategy, padded, count }
    }

    /// Padded coordinate of local element `i` of cuboid `n` (both 0-based).
    pub fn global(&self, n: usize, i: usize) -> usize {
        let raw = match self.strategy {
            Strategy::Local => self.block * n + i,
            Strategy::Dilated => n + self.count * i,
        };
        (self.shift + raw) % self.padded
    }

    /// Inverse of [`AxisMap::global`].
    pub fn local(&self, g: usize) -> (usize, usize) {
        let raw = (g + self.padded - self.shift) % self.padded;
        match self.strategy {
            Strategy::Local => (raw / self.block, raw % self.block),
            Strategy::Dilated => (raw % self.count, raw / self.count),
        }
    }

    /// Number of unpadded elements in cuboid `n`.
    pub fn valid_in(&self, n: usize) -> usize {
        (0..self.block).filter(|&i| self.global(n, i) < self.extent).count()
    }
}

/// Forward and inverse tables between `[T, H, W]` tokens and
/// `(cuboid, local slot)` pairs.
#[derive(Debug, Clone)]
pub struct Decomposition {
    pub dims: [usize; 3],
    pub spec: CuboidSpec,
    pub axes: [AxisMap; 3],
    forward: Vec<u32>,
    inverse: Vec<u32>,
}

impl Decomposition {
    /// Builds the map for `spec` exactly as given (no clamping).
    pub fn new(dims: [usize; 3], spec: CuboidSpec) -> Result<Self> {
        spec.validate()?;
        if dims.contains(&0) {
            return Err(Error::Config(format!("empty input extent {dims:?}")));
        }
        let axes: [AxisMap; 3] = std::array::from_fn(|a| AxisMap::new(dims[a], spec.size[a], spec.shift[a], spec.strategy));
        let n_cuboids: usize = axes.iter().map(|a| a.count).product();
        let len = spec.volume();
        let tokens: usize = dims.iter().product();
        let mut forward = vec![NONE; n_cuboids * len];
        let mut inverse = vec![NONE; tokens];
        let [at, ah, aw] = axes;
        let mut slot = 0usize;
        for nt in 0..at.count {
            for nh in 0..ah.count {
                for nw in 0..aw.count {
                    for i in 0..at.block {
                        for j in 0..ah.block {
                            for k in 0..aw.block {
                                let (t, h, w) = (at.global(nt, i), ah.global(nh, j), aw.global(nw, k));
                                if t < dims[0] && h < dims[1] && w < dims[2] {
                                    let g = (t * dims[1] + h) * dims[2] + w;
                                    forward[slot] = g as u32;
                                    inverse[g] = slot as u32;
                                }
                                slot += 1;
                            }
                        }
                    }
                }
            }
        }
        Ok(Self { dims, spec, axes, forward, inverse })
    }

    pub fn tokens(&self) -> usize {
        self.dims.iter().product()
    }

    pub fn n_cuboids(&self) -> usize {
        self.axes.iter().map(|a| a.count).product()
    }

    pub fn cuboid_len(&self) -> usize {
        self.spec.volume()
    }

    pub fn padded_dims(&self) -> [usize; 3] {
        std::array::from_fn(|a| self.axes[a].padded)
    }

    /// Global token for each `(cuboid, slot)`; [`NONE`] marks padding.
    pub fn forward(&self) -> &[u32] {
        &self.forward
    }

    /// Flat `(cuboid, slot)` position of each token.
    pub fn inverse(&self) -> &[u32] {
        &self.inverse
    }

    pub fn slot_valid(&self) -> impl Iterator<Item = bool> + '_ {
        self.forward.iter().map(|&g| g != NONE)
    }

    /// Unpadded tokens per cuboid.
    pub fn valid_counts(&self) -> Vec<usize> {
        self.forward.chunks(self.cuboid_len()).map(|c| c.iter().filter(|&&g| g != NONE).count()).collect()
    }

    /// Gather index over a batched token source whose token `t` of batch `b`
    /// occupies rows `((b * tokens + t) * stride + offset)`.
    pub fn gather_index(&self, batch: usize, stride: usize, offset: usize) -> Arc<[u32]> {
        let tokens = self.tokens();
        (0..batch)
            .flat_map(|b| {
                self.forward.iter().map(move |&g| {
                    if g == NONE {
                        NONE
                    } else {
                        ((b * tokens + g as usize) * stride + offset) as u32
                    }
                })
            })
            .collect()
    }

    /// Index taking batched cuboid rows back to token order.
    pub fn merge_index(&self, batch: usize) -> Arc<[u32]> {
        let slots = self.forward.len();
        (0..batch).flat_map(|b| self.inverse.iter().map(move |&s| (b * slots) as u32 + s)).collect()
    }

    pub fn query_mask(&self, batch: usize) -> Arc<[bool]> {
        (0..batch).flat_map(|_| self.slot_valid()).collect()
    }

    /// Splits `[T, H, W, C]` into `[N, L, C]` with zeros in padded slots.
    pub fn decompose<E: Element>(&self, x: &Tensor<E>) -> Result<Tensor<E>> {
        let c = self.check(x.shape(), &[self.dims[0], self.dims[1], self.dims[2]])?;
        let mut out = vec![E::zero(); self.forward.len() * c];
        for (dst, &g) in out.chunks_mut(c.max(1)).zip(&self.forward) {
            if g != NONE {
                let g = g as usize;
                dst.copy_from_slice(&x.data()[g * c..(g + 1) * c]);
            }
        }
        Ok(Tensor::new([self.n_cuboids(), self.cuboid_len(), c], out)?)
    }

    /// Inverse of [`Decomposition::decompose`]; padded slots are dropped.
    pub fn merge<E: Element>(&self, cuboids: &Tensor<E>) -> Result<Tensor<E>> {
        let c = self.check(cuboids.shape(), &[self.n_cuboids(), self.cuboid_len()])?;
        let mut out = vec![E::zero(); self.tokens() * c];
        for (dst, &s) in out.chunks_mut(c.max(1)).zip(&self.inverse) {
            let s = s as usize;
            dst.copy_from_slice(&cuboids.data()[s * c..(s + 1) * c]);
        }
        Ok(Tensor::new([self.dims[0], self.dims[1], self.dims[2], c], out)?)
    }

    fn check(&self, shape: &[usize], lead: &[usize]) -> Result<usize> {
        if shape.len() != lead.len() + 1 || &shape[..lead.len()] != lead {
            return Err(Error::Usage(format!("shape {shape:?} does not match index map {lead:?}+[C]")));
        }
        Ok(shape[lead.len()])
    }

    /// Test hook: sends one valid slot to the wrong token so that a
    /// bijection check has something to catch.
    pub fn corrupt(&mut self) {
        let valid: Vec<usize> = (0..self.forward.len()).filter(|&s| self.forward[s] != NONE).collect();
        if let [a, .., b] = valid[..] {
            self.forward[a] = self.forward[b];
        }
    }

    /// Every token is covered by exactly one slot and the two tables agree.
    pub fn is_partition(&self) -> bool {
        let mut seen = vec![0u8; self.tokens()];
        for &g in &self.forward {
            if g != NONE {
                seen[g as usize] += 1;
            }
        }
        seen.iter().all(|&n| n == 1)
            && self.inverse.iter().enumerate().all(|(g, &s)| self.forward.get(s as usize) == Some(&(g as u32)))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn local_map_matches_hand_layout() {
        let a = AxisMap::new(6, 3, 0, Strategy::Local);
        assert_eq!((0..3).map(|i| a.global(1, i)).collect::<Vec<_>>(), vec![3, 4, 5]);
        let d = AxisMap::new(6, 3, 0, Strategy::Dilated);
        assert_eq!((0..3).map(|i| d.global(1, i)).collect::<Vec<_>>(), vec![1, 3, 5]);
    }

    #[test]
    fn shifted_local_wraps() {
        let a = AxisMap::new(4, 2, 1, Strategy::Local);
        assert_eq!((0..2).map(|i| a.global(1, i)).collect::<Vec<_>>(), vec![3, 0]);
        assert_eq!(a.local(0), (1, 1));
    }

    #[test]
    fn padded_axis_counts() {
        let a = AxisMap::new(5, 3, 0, Strategy::Local);
        assert_eq!((a.padded, a.count), (6, 2));
        assert_eq!((a.valid_in(0), a.valid_in(1)), (3, 2));
    }

    #[test]
    fn corrupted_map_is_not_a_partition() {
        let mut d = Decomposition::new([2, 2, 2], CuboidSpec::local([1, 2, 2])).unwrap();
        assert!(d.is_partition());
        d.corrupt();
        assert!(!d.is_partition());
    }
}
