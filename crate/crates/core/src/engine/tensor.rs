use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DType {
    F32,
    I32,
}

impl DType {
    pub fn code(self) -> u8 {
        match self {
            DType::F32 => 0,
            DType::I32 => 1,
        }
    }

    pub fn from_code(code: u8) -> Option<DType> {
        match code {
            0 => Some(DType::F32),
            1 => Some(DType::I32),
            _ => None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TensorData {
    F32(Vec<f32>),
    I32(Vec<i32>),
}

impl TensorData {
    pub fn len(&self) -> usize {
        match self {
            TensorData::F32(v) => v.len(),
            TensorData::I32(v) => v.len(),
        }
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }
}

/// Dense row-major tensor.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Tensor {
    dims: Vec<usize>,
    data: TensorData,
}

impl Tensor {
    /// Panics when `dims` does not match the data length.
    pub fn new(dims: Vec<usize>, data: TensorData) -> Tensor {
        assert_eq!(dims.iter().product::<usize>(), data.len(), "dims {dims:?} do not match data");
        Tensor { dims, data }
    }

    pub fn f32(dims: Vec<usize>, data: Vec<f32>) -> Tensor {
        Tensor::new(dims, TensorData::F32(data))
    }

    pub fn i32(dims: Vec<usize>, data: Vec<i32>) -> Tensor {
        Tensor::new(dims, TensorData::I32(data))
    }

    pub fn zeros(dims: Vec<usize>) -> Tensor {
        let len = dims.iter().product();
        Tensor::f32(dims, vec![0.0; len])
    }

    pub fn dims(&self) -> &[usize] {
        &self.dims
    }

    pub fn dtype(&self) -> DType {
        match self.data {
            TensorData::F32(_) => DType::F32,
            TensorData::I32(_) => DType::I32,
        }
    }

    pub fn data(&self) -> &TensorData {
        &self.data
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    pub fn as_f32(&self) -> Option<&[f32]> {
        match &self.data {
            TensorData::F32(v) => Some(v),
            TensorData::I32(_) => None,
        }
    }

    pub fn as_i32(&self) -> Option<&[i32]> {
        match &self.data {
            TensorData::I32(v) => Some(v),
            TensorData::F32(_) => None,
        }
    }

    /// `(rows, cols)` of a rank-2 tensor.
    pub fn shape2(&self) -> Option<(usize, usize)> {
        match self.dims[..] {
            [r, c] => Some((r, c)),
            _ => None,
        }
    }

    /// Largest element-wise absolute difference; `None` when dims or dtypes differ.
    pub fn max_abs_diff(&self, other: &Tensor) -> Option<f64> {
        if self.dims != other.dims {
            return None;
        }
        match (&self.data, &other.data) {
            (TensorData::F32(a), TensorData::F32(b)) => {
                Some(a.iter().zip(b).map(|(x, y)| (x - y).abs() as f64).fold(0.0, f64::max))
            }
            (TensorData::I32(a), TensorData::I32(b)) => {
                Some(a.iter().zip(b).map(|(x, y)| (*x as f64 - *y as f64).abs()).fold(0.0, f64::max))
            }
            _ => None,
        }
    }
}
