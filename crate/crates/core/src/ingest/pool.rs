use ndarray::{Array2, ArrayView4};

/// Averages an `[n, h, w, c]` activation tensor over its spatial axes.
///
/// Sums run in `f64` in row-major position order, so the result depends
/// only on the input values.
pub fn pool_spatial(tensor: ArrayView4<'_, f64>) -> Array2<f64> {
    let (n, h, w, c) = tensor.dim();
    assert!(h >= 1 && w >= 1, "spatial dims must be at least 1x1");
    let positions = (h * w) as f64;
    let mut out = Array2::<f64>::zeros((n, c));
    for i in 0..n {
        let mut acc = vec![0.0f64; c];
        for y in 0..h {
            for x in 0..w {
                for (k, a) in acc.iter_mut().enumerate() {
                    *a += tensor[[i, y, x, k]];
                }
            }
        }
        for (k, a) in acc.into_iter().enumerate() {
            out[[i, k]] = a / positions;
        }
    }
    out
}
