//! Affine color restoration fitted at correspondences.

use nalgebra::{Matrix3, Matrix4, Vector3, Vector4};
use serde::{Deserialize, Serialize};

use crate::image::Image;

/// Ridge added to the normal equations.
pub const RIDGE: f64 = 1e-8;
/// Fewest color pairs accepted by [`fit_restoration`].
pub const MIN_PAIRS: usize = 8;

/// `f(C) = A C + b`, clamped to `[0, 1]` when applied.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RestorationModel {
    pub a: [[f64; 3]; 3],
    pub b: [f64; 3],
    pub pairs: usize,
    /// Root-mean-square fit residual over the pairs.
    pub rmse: f64,
    /// The fit was rejected and this is the identity model.
    pub degraded: bool,
}

impl RestorationModel {
    pub fn identity() -> Self {
        RestorationModel {
            a: [[1.0, 0.0, 0.0], [0.0, 1.0, 0.0], [0.0, 0.0, 1.0]],
            b: [0.0; 3],
            pairs: 0,
            rmse: 0.0,
            degraded: false,
        }
    }

    pub fn matrix(&self) -> Matrix3<f64> {
        Matrix3::from_fn(|i, j| self.a[i][j])
    }

    pub fn offset(&self) -> Vector3<f64> {
        Vector3::from(self.b)
    }

    pub fn apply_color(&self, c: [f64; 3]) -> [f64; 3] {
        let out = self.matrix() * Vector3::from(c) + self.offset();
        [out.x, out.y, out.z]
    }
}

/// Least-squares affine map from observed colors `C_o` to rendered colors
/// `C_r`. Pairs are `(C_o, C_r)`.
///
/// Too few pairs, or colors that do not span three dimensions, give the
/// identity model with `degraded` set.
pub fn fit_restoration(pairs: &[([f64; 3], [f64; 3])]) -> RestorationModel {
    let degraded = RestorationModel { pairs: pairs.len(), degraded: true, ..RestorationModel::identity() };
    if pairs.len() < MIN_PAIRS {
        return degraded;
    }
    let n = pairs.len() as f64;
    let mean = pairs.iter().fold(Vector3::zeros(), |acc, (o, _)| acc + Vector3::from(*o)) / n;
    let cov = pairs.iter().fold(Matrix3::zeros(), |acc, (o, _)| {
        let d = Vector3::from(*o) - mean;
        acc + d * d.transpose()
    }) / n;
    let eig = cov.symmetric_eigenvalues();
    if eig.min() < 1e-10 {
        return degraded;
    }
    let mut m = Matrix4::zeros();
    let mut rhs = nalgebra::Matrix3x4::zeros();
    for (o, r) in pairs {
        let x = Vector4::new(o[0], o[1], o[2], 1.0);
        m += x * x.transpose();
        rhs += Vector3::from(*r) * x.transpose();
    }
    m += Matrix4::identity() * RIDGE;
    let Some(inv) = m.try_inverse() else {
        return degraded;
    };
    let w = rhs * inv;
    let model = RestorationModel {
        a: std::array::from_fn(|i| std::array::from_fn(|j| w[(i, j)])),
        b: [w[(0, 3)], w[(1, 3)], w[(2, 3)]],
        pairs: pairs.len(),
        rmse: 0.0,
        degraded: false,
    };
    if !model.a.iter().flatten().chain(&model.b).all(|v| v.is_finite()) {
        return degraded;
    }
    let sse: f64 = pairs
        .iter()
        .map(|(o, r)| {
            let p = model.apply_color(*o);
            (0..3).map(|c| (p[c] - r[c]).powi(2)).sum::<f64>()
        })
        .sum();
    RestorationModel { rmse: (sse / (3.0 * n)).sqrt(), ..model }
}

/// Applies the model to every pixel and clamps to `[0, 1]`.
pub fn apply_restoration(model: &RestorationModel, img: &Image) -> Image {
    let a = model.matrix();
    let b = model.offset();
    let mut out = img.clone();
    for px in out.data_mut().chunks_exact_mut(3) {
        let v = a * Vector3::new(px[0], px[1], px[2]) + b;
        px[0] = v.x.clamp(0.0, 1.0);
        px[1] = v.y.clamp(0.0, 1.0);
        px[2] = v.z.clamp(0.0, 1.0);
    }
    out
}
