//! Dense NCHW tensors in double precision.

use crate::error::{Error, Result};
use crate::img::{Image, SoftMask};

/// A 4-D array laid out `[batch, channels, height, width]`, row-major.
/// All engine math runs in `f64`: gradient checks then verify the exact
/// arithmetic the network trains with.
#[derive(Debug, Clone, PartialEq)]
pub struct Tensor {
    shape: [usize; 4],
    data: Vec<f64>,
}

impl Tensor {
    pub fn zeros(shape: [usize; 4]) -> Tensor {
        Tensor { shape, data: vec![0.0; shape.iter().product()] }
    }

    pub fn from_vec(shape: [usize; 4], data: Vec<f64>) -> Result<Tensor> {
        let numel: usize = shape.iter().product();
        if data.len() != numel {
            return Err(Error::shape(
                "Tensor::from_vec",
                format!("shape {shape:?} wants {numel} values, got {}", data.len()),
            ));
        }
        Ok(Tensor { shape, data })
    }

    pub fn splat(shape: [usize; 4], value: f64) -> Tensor {
        Tensor { shape, data: vec![value; shape.iter().product()] }
    }

    /// 1-element tensor holding a scalar (shape `[1,1,1,1]`).
    pub fn scalar(v: f64) -> Tensor {
        Tensor { shape: [1, 1, 1, 1], data: vec![v] }
    }

    pub fn shape(&self) -> [usize; 4] {
        self.shape
    }

    pub fn numel(&self) -> usize {
        self.data.len()
    }

    pub fn is_scalar(&self) -> bool {
        self.data.len() == 1
    }

    /// The value of a 1-element tensor.
    pub fn item(&self) -> f64 {
        debug_assert!(self.is_scalar());
        self.data[0]
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [f64] {
        &mut self.data
    }

    #[inline]
    pub fn at(&self, n: usize, c: usize, y: usize, x: usize) -> f64 {
        let [_, ch, h, w] = self.shape;
        self.data[((n * ch + c) * h + y) * w + x]
    }

    #[inline]
    pub fn set(&mut self, n: usize, c: usize, y: usize, x: usize, v: f64) {
        let [_, ch, h, w] = self.shape;
        self.data[((n * ch + c) * h + y) * w + x] = v;
    }

    /// View an image as a 1-batch tensor (HWC interleaved -> NCHW planes).
    pub fn from_image(img: &Image) -> Tensor {
        let (w, h, ch) = (img.width(), img.height(), img.channels());
        let mut t = Tensor::zeros([1, ch, h, w]);
        for y in 0..h {
            for x in 0..w {
                for c in 0..ch {
                    t.set(0, c, y, x, img.get(x, y, c) as f64);
                }
            }
        }
        t
    }

    pub fn from_mask(mask: &SoftMask) -> Tensor {
        Tensor::from_image(&mask.to_image())
    }

    /// Back to an interleaved image, clamping into `[0,1]`.
    pub fn to_image(&self) -> Result<Image> {
        let [n, ch, h, w] = self.shape;
        if n != 1 {
            return Err(Error::shape("Tensor::to_image", format!("batch must be 1, got {n}")));
        }
        let mut data = vec![0.0f32; w * h * ch];
        for y in 0..h {
            for x in 0..w {
                for c in 0..ch {
                    data[(y * w + x) * ch + c] = self.at(0, c, y, x).clamp(0.0, 1.0) as f32;
                }
            }
        }
        Image::from_data(w, h, ch, data)
    }

    pub fn to_mask(&self) -> Result<SoftMask> {
        let [n, ch, ..] = self.shape;
        if n != 1 || ch != 1 {
            return Err(Error::shape(
                "Tensor::to_mask",
                format!("want [1,1,h,w], got {:?}", self.shape),
            ));
        }
        SoftMask::from_image(&self.to_image()?)
    }

    /// Stack single-channel planes and images channel-wise into one
    /// 1-batch tensor (all inputs must share spatial dims).
    pub fn stack_channels(parts: &[&Tensor]) -> Result<Tensor> {
        let first = parts.first().ok_or_else(|| Error::shape("stack_channels", "no inputs"))?;
        let [_, _, h, w] = first.shape();
        let mut ch = 0;
        for p in parts {
            let [n, c, ph, pw] = p.shape();
            if n != 1 || ph != h || pw != w {
                return Err(Error::shape(
                    "stack_channels",
                    format!("want [1,*,{h},{w}], got {:?}", p.shape()),
                ));
            }
            ch += c;
        }
        let mut data = Vec::with_capacity(ch * h * w);
        for p in parts {
            data.extend_from_slice(p.data());
        }
        Tensor::from_vec([1, ch, h, w], data)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn from_vec_validates_length() {
        assert!(Tensor::from_vec([1, 2, 3, 4], vec![0.0; 24]).is_ok());
        assert!(Tensor::from_vec([1, 2, 3, 4], vec![0.0; 23]).is_err());
    }

    #[test]
    fn image_round_trip_preserves_layout() {
        let img = Image::from_data(2, 1, 3, vec![0.1, 0.2, 0.3, 0.4, 0.5, 0.6]).unwrap();
        let t = Tensor::from_image(&img);
        assert_eq!(t.shape(), [1, 3, 1, 2]);
        // Plane-major: channel 0 = [0.1, 0.4], channel 1 = [0.2, 0.5], ...
        assert!((t.at(0, 0, 0, 1) - 0.4 as f64).abs() < 1e-7);
        assert!((t.at(0, 2, 0, 0) - 0.3 as f64).abs() < 1e-7);
        let back = t.to_image().unwrap();
        for (a, b) in back.data().iter().zip(img.data()) {
            assert!((a - b).abs() < 1e-7);
        }
    }

    #[test]
    fn to_image_clamps() {
        let t = Tensor::from_vec([1, 1, 1, 2], vec![-0.5, 1.5]).unwrap();
        let img = t.to_image().unwrap();
        assert_eq!(img.data(), &[0.0, 1.0]);
    }

    #[test]
    fn stacking_concatenates_planes() {
        let a = Tensor::from_vec([1, 1, 1, 2], vec![1.0, 2.0]).unwrap();
        let b = Tensor::from_vec([1, 2, 1, 2], vec![3.0, 4.0, 5.0, 6.0]).unwrap();
        let s = Tensor::stack_channels(&[&a, &b]).unwrap();
        assert_eq!(s.shape(), [1, 3, 1, 2]);
        assert_eq!(s.data(), &[1.0, 2.0, 3.0, 4.0, 5.0, 6.0]);
        let bad = Tensor::zeros([1, 1, 2, 2]);
        assert!(Tensor::stack_channels(&[&a, &bad]).is_err());
    }
}
