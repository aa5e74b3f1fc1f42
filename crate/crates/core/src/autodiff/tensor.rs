use std::fmt;

use crate::Scalar;

/// Dense row-major n-dimensional array.
#[derive(Clone, PartialEq)]
pub struct Tensor<T> {
    shape: Vec<usize>,
    data: Vec<T>,
}

impl<T: Scalar> Tensor<T> {
    /// Panics if `shape` does not describe `data.len()` elements or contains a zero extent.
    pub fn new(shape: impl Into<Vec<usize>>, data: Vec<T>) -> Self {
        let shape = shape.into();
        assert!(
            shape.iter().all(|&d| d > 0),
            "tensor shape {shape:?} has a zero extent"
        );
        let n: usize = shape.iter().product();
        assert_eq!(
            n,
            data.len(),
            "tensor shape {shape:?} needs {n} elements, got {}",
            data.len()
        );
        Self { shape, data }
    }

    pub fn zeros(shape: impl Into<Vec<usize>>) -> Self {
        Self::full(shape, T::zero())
    }

    pub fn full(shape: impl Into<Vec<usize>>, value: T) -> Self {
        let shape = shape.into();
        let n = shape.iter().product();
        Self::new(shape, vec![value; n])
    }

    pub fn scalar(value: T) -> Self {
        Self::new(vec![1], vec![value])
    }

    pub fn from_fn(shape: impl Into<Vec<usize>>, mut f: impl FnMut(usize) -> T) -> Self {
        let shape = shape.into();
        let n: usize = shape.iter().product();
        Self::new(shape, (0..n).map(&mut f).collect())
    }

    pub fn shape(&self) -> &[usize] {
        &self.shape
    }

    pub fn data(&self) -> &[T] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [T] {
        &mut self.data
    }

    pub fn into_data(self) -> Vec<T> {
        self.data
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    pub fn rank(&self) -> usize {
        self.shape.len()
    }

    /// The single element of a one-element tensor.
    pub fn item(&self) -> T {
        assert_eq!(self.data.len(), 1, "item() on tensor of shape {:?}", self.shape);
        self.data[0]
    }

    pub fn reshape(mut self, shape: impl Into<Vec<usize>>) -> Self {
        let shape = shape.into();
        assert_eq!(
            shape.iter().product::<usize>(),
            self.data.len(),
            "cannot reshape {:?} into {shape:?}",
            self.shape
        );
        self.shape = shape;
        self
    }

    pub fn map(&self, f: impl Fn(T) -> T) -> Self {
        Self {
            shape: self.shape.clone(),
            data: self.data.iter().map(|&v| f(v)).collect(),
        }
    }

    pub fn cast<U: Scalar>(&self) -> Tensor<U> {
        Tensor {
            shape: self.shape.clone(),
            data: self.data.iter().map(|v| U::lit(v.to_f64_lossy())).collect(),
        }
    }

    pub fn all_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }

    /// Copies the sub-block selected by one half-open range per dimension.
    pub fn slice(&self, ranges: &[std::ops::Range<usize>]) -> Self {
        assert_eq!(ranges.len(), self.rank(), "slice rank mismatch for {:?}", self.shape);
        for (r, &d) in ranges.iter().zip(&self.shape) {
            assert!(r.start < r.end && r.end <= d, "slice {ranges:?} out of bounds for {:?}", self.shape);
        }
        let out_shape: Vec<usize> = ranges.iter().map(|r| r.end - r.start).collect();
        let mut out = Vec::with_capacity(out_shape.iter().product());
        for_each_slice_row(&self.shape, ranges, |src| {
            out.extend_from_slice(&self.data[src..src + ranges[ranges.len() - 1].len()])
        });
        Self::new(out_shape, out)
    }

    /// Writes `block` into the sub-block selected by `ranges`.
    pub fn write_slice(&mut self, ranges: &[std::ops::Range<usize>], block: &[T]) {
        let row = ranges[ranges.len() - 1].len();
        let mut k = 0;
        let data = &mut self.data;
        for_each_slice_row(&self.shape, ranges, |dst| {
            data[dst..dst + row].copy_from_slice(&block[k..k + row]);
            k += row;
        });
    }
}

/// Calls `f` with the flat offset of every contiguous innermost row of a slice.
pub(crate) fn for_each_slice_row(
    shape: &[usize],
    ranges: &[std::ops::Range<usize>],
    mut f: impl FnMut(usize),
) {
    let rank = shape.len();
    let mut strides = vec![1usize; rank];
    for d in (0..rank.saturating_sub(1)).rev() {
        strides[d] = strides[d + 1] * shape[d + 1];
    }
    let outer = rank - 1;
    let mut idx: Vec<usize> = ranges[..outer].iter().map(|r| r.start).collect();
    loop {
        let base: usize = idx
            .iter()
            .zip(&strides)
            .map(|(i, s)| i * s)
            .sum::<usize>()
            + ranges[outer].start;
        f(base);
        // odometer increment over the outer dimensions
        let mut d = outer;
        loop {
            if d == 0 {
                return;
            }
            d -= 1;
            idx[d] += 1;
            if idx[d] < ranges[d].end {
                break;
            }
            idx[d] = ranges[d].start;
        }
    }
}

impl<T: fmt::Debug> fmt::Debug for Tensor<T> {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        const SHOWN: usize = 8;
        write!(f, "Tensor{:?}[", self.shape)?;
        for (i, v) in self.data.iter().take(SHOWN).enumerate() {
            if i > 0 {
                write!(f, ", ")?;
            }
            write!(f, "{v:?}")?;
        }
        if self.data.len() > SHOWN {
            write!(f, ", ..")?;
        }
        write!(f, "]")
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn slice_and_write_back() {
        let t = Tensor::<f32>::from_fn([2, 3, 4], |i| i as f32);
        let s = t.slice(&[1..2, 0..2, 1..3]);
        assert_eq!(s.shape(), &[1, 2, 2]);
        assert_eq!(s.data(), &[13.0, 14.0, 17.0, 18.0]);

        let mut z = Tensor::<f32>::zeros([2, 3, 4]);
        z.write_slice(&[1..2, 0..2, 1..3], s.data());
        assert_eq!(z.data()[13], 13.0);
        assert_eq!(z.data()[18], 18.0);
        assert_eq!(z.data().iter().filter(|v| **v != 0.0).count(), 4);
    }

    #[test]
    #[should_panic(expected = "needs 6 elements")]
    fn shape_data_mismatch_panics() {
        let _ = Tensor::<f32>::new([2, 3], vec![0.0; 5]);
    }
}
