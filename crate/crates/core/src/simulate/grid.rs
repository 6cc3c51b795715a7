use serde::{Deserialize, Serialize};

/// Periodic rectangular grid for semi-discretized SPDEs.
///
/// Points sit at `x = i·h` for `i in 0..shape[axis]`, with `h = extent / shape`,
/// so the domain `[0, extent)` wraps. Flattened index is row-major over axes
/// (`ix * ny + iy` in 2-D).
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GridSpec {
    pub shape: Vec<usize>,
    pub extent: Vec<f64>,
}

const AXES: [&str; 2] = ["x", "y"];

impl GridSpec {
    pub fn new(shape: Vec<usize>, extent: Vec<f64>) -> Self {
        assert!(!shape.is_empty() && shape.len() <= 2 && shape.len() == extent.len());
        GridSpec { shape, extent }
    }

    pub fn dims(&self) -> usize {
        self.shape.len()
    }

    pub fn len(&self) -> usize {
        self.shape.iter().product()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn spacing(&self, axis: usize) -> f64 {
        self.extent[axis] / self.shape[axis] as f64
    }

    fn stride(&self, axis: usize) -> usize {
        self.shape[axis + 1..].iter().product()
    }

    pub fn index(&self, coords: &[usize]) -> usize {
        coords.iter().enumerate().map(|(a, &c)| c * self.stride(a)).sum()
    }

    pub fn coordinate(&self, index: usize, axis: usize) -> f64 {
        let i = (index / self.stride(axis)) % self.shape[axis];
        i as f64 * self.spacing(axis)
    }

    /// Leaf names: the field, its first derivatives, then second derivatives.
    pub fn feature_names(&self) -> Vec<String> {
        let axes = &AXES[..self.dims()];
        let mut names = vec!["u".to_string()];
        names.extend(axes.iter().map(|a| format!("u_{a}")));
        names.extend(axes.iter().map(|a| format!("u_{a}{a}")));
        names
    }

    pub fn feature_count(&self) -> usize {
        1 + 2 * self.dims()
    }

    /// Writes the derived features of `field` into `out[f][j]`, one column per
    /// feature in [`feature_names`](Self::feature_names) order.
    pub fn features(&self, field: &[f64], out: &mut [&mut [f64]]) {
        debug_assert_eq!(field.len(), self.len());
        debug_assert_eq!(out.len(), self.feature_count());
        let d = self.dims();
        out[0].copy_from_slice(field);
        for axis in 0..d {
            let n = self.shape[axis];
            let stride = self.stride(axis);
            let h = self.spacing(axis);
            let (c1, c2) = (0.5 / h, 1.0 / (h * h));
            for j in 0..field.len() {
                let i = (j / stride) % n;
                let base = j - i * stride;
                let up = base + ((i + 1) % n) * stride;
                let down = base + ((i + n - 1) % n) * stride;
                out[1 + axis][j] = (field[up] - field[down]) * c1;
                out[1 + d + axis][j] = (field[up] - 2.0 * field[j] + field[down]) * c2;
            }
        }
    }

    /// Allocating convenience form of [`features`](Self::features).
    pub fn feature_columns(&self, field: &[f64]) -> Vec<Vec<f64>> {
        let mut cols = vec![vec![0.0; self.len()]; self.feature_count()];
        let mut refs: Vec<&mut [f64]> = cols.iter_mut().map(|c| c.as_mut_slice()).collect();
        self.features(field, &mut refs);
        cols
    }
}
