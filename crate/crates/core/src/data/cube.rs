use crate::error::{bail, Result};
use crate::scalar::Scalar;
use crate::tensor::Tensor;

/// A `W x H x L` cube stored band-major: value `(x, y, s)` lives at
/// `(s * H + y) * W + x`.
#[derive(Clone, Debug, PartialEq)]
pub struct HsiCube {
    width: usize,
    height: usize,
    bands: usize,
    data: Vec<f32>,
}

impl HsiCube {
    pub fn new(width: usize, height: usize, bands: usize, data: Vec<f32>) -> Result<Self> {
        if width == 0 || height == 0 || bands == 0 {
            bail!(Dimension, "cube extents must be positive, got {width}x{height}x{bands}");
        }
        if data.len() != width * height * bands {
            bail!(Dimension, "cube {width}x{height}x{bands} needs {} values, got {}", width * height * bands, data.len());
        }
        if let Some(i) = data.iter().position(|v| !v.is_finite()) {
            bail!(Domain, "cube value {i} is not finite");
        }
        Ok(Self { width, height, bands, data })
    }

    pub fn zeros(width: usize, height: usize, bands: usize) -> Self {
        Self { width, height, bands, data: vec![0.0; width * height * bands] }
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn bands(&self) -> usize {
        self.bands
    }

    pub fn data(&self) -> &[f32] {
        &self.data
    }

    #[inline]
    pub fn index(&self, x: usize, y: usize, s: usize) -> usize {
        (s * self.height + y) * self.width + x
    }

    pub fn get(&self, x: usize, y: usize, s: usize) -> f32 {
        self.data[self.index(x, y, s)]
    }

    pub fn set(&mut self, x: usize, y: usize, s: usize, v: f32) {
        let i = self.index(x, y, s);
        self.data[i] = v;
    }

    /// One band as a `W * H` slice (row `y`, column `x`).
    pub fn band(&self, s: usize) -> &[f32] {
        let n = self.width * self.height;
        &self.data[s * n..(s + 1) * n]
    }

    pub fn band_mut(&mut self, s: usize) -> &mut [f32] {
        let n = self.width * self.height;
        &mut self.data[s * n..(s + 1) * n]
    }

    /// Network input `[W, H, L, 1]`.
    pub fn to_tensor<T: Scalar>(&self) -> Tensor<T> {
        let (h, l) = (self.height, self.bands);
        Tensor::from_fn(&[self.width, h, l, 1], |i| {
            let (s, xy) = (i % l, i / l);
            T::of(self.get(xy / h, xy % h, s) as f64)
        })
    }
}

/// Binary label map stored row-major: pixel `(x, y)` at `y * W + x`.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Mask {
    width: usize,
    height: usize,
    data: Vec<u8>,
}

impl Mask {
    pub fn new(width: usize, height: usize, data: Vec<u8>) -> Result<Self> {
        if width == 0 || height == 0 {
            bail!(Dimension, "mask extents must be positive, got {width}x{height}");
        }
        if data.len() != width * height {
            bail!(Dimension, "mask {width}x{height} needs {} values, got {}", width * height, data.len());
        }
        if let Some(i) = data.iter().position(|&v| v > 1) {
            bail!(Domain, "mask value {} at {i} is not 0 or 1", data[i]);
        }
        Ok(Self { width, height, data })
    }

    pub fn zeros(width: usize, height: usize) -> Self {
        Self { width, height, data: vec![0; width * height] }
    }

    pub fn from_fn(width: usize, height: usize, mut f: impl FnMut(usize, usize) -> bool) -> Self {
        let mut m = Self::zeros(width, height);
        for y in 0..height {
            for x in 0..width {
                m.data[y * width + x] = u8::from(f(x, y));
            }
        }
        m
    }

    /// Mask from a `[W, H]` map (index `x * H + y`) by `value >= threshold`.
    pub fn from_map<T: Scalar>(map: &Tensor<T>, threshold: T) -> Result<Self> {
        let &[w, h] = map.shape() else {
            bail!(Dimension, "expected a [W, H] map, got {:?}", map.shape());
        };
        let d = map.data();
        Ok(Self::from_fn(w, h, |x, y| d[x * h + y] >= threshold))
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn data(&self) -> &[u8] {
        &self.data
    }

    pub fn get(&self, x: usize, y: usize) -> bool {
        self.data[y * self.width + x] != 0
    }

    pub fn set(&mut self, x: usize, y: usize, on: bool) {
        self.data[y * self.width + x] = u8::from(on);
    }

    pub fn count(&self) -> usize {
        self.data.iter().map(|&v| v as usize).sum()
    }

    /// Target map `[W, H]` matching the network output layout.
    pub fn to_tensor<T: Scalar>(&self) -> Tensor<T> {
        let h = self.height;
        Tensor::from_fn(&[self.width, h], |i| if self.get(i / h, i % h) { T::one() } else { T::zero() })
    }
}
