// SPDX-License-Identifier: Apache-2.0

use super::Scalar;

/// A single-sample feature stack of shape `[channels, height, width]`.
#[derive(Clone, Debug, PartialEq)]
pub struct Tensor<T> {
    pub c: usize,
    pub h: usize,
    pub w: usize,
    pub data: Vec<T>,
}

impl<T: Scalar> Tensor<T> {
    pub fn zeros(c: usize, h: usize, w: usize) -> Self {
        Tensor {
            c,
            h,
            w,
            data: vec![T::zero(); c * h * w],
        }
    }

    pub fn from_vec(c: usize, h: usize, w: usize, data: Vec<T>) -> Self {
        assert_eq!(data.len(), c * h * w, "tensor data does not match shape");
        Tensor { c, h, w, data }
    }

    /// Constant planes, one per value.
    pub fn planes(values: &[T], h: usize, w: usize) -> Self {
        let mut data = Vec::with_capacity(values.len() * h * w);
        for v in values {
            data.extend(std::iter::repeat_n(*v, h * w));
        }
        Tensor::from_vec(values.len(), h, w, data)
    }

    pub fn plane_len(&self) -> usize {
        self.h * self.w
    }

    pub fn channel(&self, c: usize) -> &[T] {
        let n = self.plane_len();
        &self.data[c * n..(c + 1) * n]
    }

    pub fn shape(&self) -> (usize, usize, usize) {
        (self.c, self.h, self.w)
    }

    /// Stacks tensors of equal spatial size along channels.
    pub fn concat(parts: &[&Tensor<T>]) -> Self {
        let (h, w) = (parts[0].h, parts[0].w);
        let mut data = Vec::with_capacity(parts.iter().map(|t| t.data.len()).sum());
        let mut c = 0;
        for t in parts {
            assert_eq!((t.h, t.w), (h, w), "concat of mismatched grids");
            data.extend_from_slice(&t.data);
            c += t.c;
        }
        Tensor { c, h, w, data }
    }

    /// Inverse of [`Tensor::concat`] for the given channel counts.
    pub fn split(&self, channels: &[usize]) -> Vec<Tensor<T>> {
        assert_eq!(channels.iter().sum::<usize>(), self.c, "split does not cover tensor");
        let n = self.plane_len();
        let mut at = 0;
        channels
            .iter()
            .map(|&c| {
                let t = Tensor::from_vec(c, self.h, self.w, self.data[at * n..(at + c) * n].to_vec());
                at += c;
                t
            })
            .collect()
    }

    pub fn add_assign(&mut self, other: &Tensor<T>) {
        assert_eq!(self.shape(), other.shape(), "tensor shapes differ");
        for (a, b) in self.data.iter_mut().zip(&other.data) {
            *a = *a + *b;
        }
    }

    pub fn cast<U: Scalar>(&self) -> Tensor<U> {
        Tensor {
            c: self.c,
            h: self.h,
            w: self.w,
            data: self.data.iter().map(|v| U::of(v.f64())).collect(),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn concat_split_roundtrip() {
        let a = Tensor::<f64>::from_vec(1, 2, 2, vec![1.0, 2.0, 3.0, 4.0]);
        let b = Tensor::<f64>::planes(&[7.0, 8.0], 2, 2);
        let c = Tensor::concat(&[&a, &b]);
        assert_eq!(c.c, 3);
        assert_eq!(c.channel(2), &[8.0; 4]);
        let parts = c.split(&[1, 2]);
        assert_eq!(parts[0], a);
        assert_eq!(parts[1], b);
    }
}
