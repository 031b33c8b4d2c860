//! Dense two-channel displacement fields.

use crate::error::{Error, Result};
use crate::tensor::{BitMask, Tensor};

/// Per-pixel (u, v) displacement grid in pixel units at its stated level.
///
/// `level` is the downsample factor relative to full resolution (1, 8 or 16);
/// upsampling by `s` multiplies the components by `s`.
#[derive(Debug, Clone, PartialEq)]
pub struct FlowField {
    pub height: usize,
    pub width: usize,
    pub level: usize,
    /// Horizontal component, `[H, W]` row-major.
    pub u: Vec<f32>,
    /// Vertical component, `[H, W]` row-major.
    pub v: Vec<f32>,
    /// Optional validity mask; `None` means all pixels valid.
    pub valid: Option<BitMask>,
}

impl FlowField {
    pub fn zeros(height: usize, width: usize, level: usize) -> Self {
        FlowField {
            height,
            width,
            level,
            u: vec![0.0; height * width],
            v: vec![0.0; height * width],
            valid: None,
        }
    }

    pub fn constant(height: usize, width: usize, level: usize, u: f32, v: f32) -> Self {
        FlowField {
            height,
            width,
            level,
            u: vec![u; height * width],
            v: vec![v; height * width],
            valid: None,
        }
    }

    pub fn from_components(
        height: usize,
        width: usize,
        level: usize,
        u: Vec<f32>,
        v: Vec<f32>,
    ) -> Result<Self> {
        if u.len() != height * width || v.len() != height * width {
            return Err(Error::invalid(format!(
                "flow component length {}/{} does not match {height}x{width}",
                u.len(),
                v.len()
            )));
        }
        Ok(FlowField {
            height,
            width,
            level,
            u,
            v,
            valid: None,
        })
    }

    #[inline]
    pub fn idx(&self, row: usize, col: usize) -> usize {
        row * self.width + col
    }

    #[inline]
    pub fn is_valid(&self, i: usize) -> bool {
        match &self.valid {
            Some(m) => m.get(i),
            None => true,
        }
    }

    pub fn valid_count(&self) -> usize {
        match &self.valid {
            Some(m) => m.count_true(),
            None => self.u.len(),
        }
    }

    /// Per-pixel magnitude `sqrt(u^2 + v^2)`.
    pub fn magnitude(&self, i: usize) -> f32 {
        (self.u[i] * self.u[i] + self.v[i] * self.v[i]).sqrt()
    }

    /// `[2, H, W]` tensor view (u plane then v plane), used by samplers.
    pub fn to_tensor(&self) -> Tensor {
        let mut data = Vec::with_capacity(2 * self.u.len());
        data.extend_from_slice(&self.u);
        data.extend_from_slice(&self.v);
        Tensor::new(vec![2, self.height, self.width], data).expect("shape by construction")
    }

    /// Averages full-resolution ground truth down to a coarser level by
    /// block-mean over valid pixels, dividing the components by `factor`.
    /// Used to compare predictions at 1/8 or 1/16 against level-1 truth.
    pub fn downsample(&self, factor: usize) -> Result<FlowField> {
        if factor == 0 {
            return Err(Error::invalid("downsample factor must be >= 1".to_string()));
        }
        let oh = self.height.div_ceil(factor);
        let ow = self.width.div_ceil(factor);
        let mut u = vec![0.0f32; oh * ow];
        let mut v = vec![0.0f32; oh * ow];
        let mut mask = BitMask::new_false(oh * ow);
        for i in 0..oh {
            for j in 0..ow {
                let mut n = 0u32;
                let (mut su, mut sv) = (0.0f32, 0.0f32);
                for y in i * factor..((i + 1) * factor).min(self.height) {
                    for x in j * factor..((j + 1) * factor).min(self.width) {
                        let p = self.idx(y, x);
                        if self.is_valid(p) {
                            n += 1;
                            su += self.u[p];
                            sv += self.v[p];
                        }
                    }
                }
                if n > 0 {
                    let o = i * ow + j;
                    u[o] = su / n as f32 / factor as f32;
                    v[o] = sv / n as f32 / factor as f32;
                    mask.set(o, true);
                }
            }
        }
        Ok(FlowField {
            height: oh,
            width: ow,
            level: self.level * factor,
            u,
            v,
            valid: Some(mask),
        })
    }
}
