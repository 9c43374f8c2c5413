//! Small dense helpers shared by the clustering, matching and training code.

use ndarray::{Array1, Array2, ArrayView1, Axis};

use crate::error::{Error, Result};

pub fn norm(v: ArrayView1<f64>) -> f64 {
    v.dot(&v).sqrt()
}

/// Unit-length copy of `v`, or `None` for a zero (or non-finite) vector.
pub fn normalized(v: ArrayView1<f64>) -> Option<Array1<f64>> {
    let n = norm(v);
    if n > 0.0 && n.is_finite() {
        Some(v.mapv(|x| x / n))
    } else {
        None
    }
}

/// Row-wise L2 normalization. Fails on the first zero-norm row.
pub fn normalize_rows(m: &Array2<f64>) -> Result<Array2<f64>> {
    let mut out = m.clone();
    for (row, mut r) in out.axis_iter_mut(Axis(0)).enumerate() {
        let n = norm(r.view());
        if !(n > 0.0 && n.is_finite()) {
            return Err(Error::ZeroNorm { row });
        }
        r.mapv_inplace(|x| x / n);
    }
    Ok(out)
}

pub fn cosine(a: ArrayView1<f64>, b: ArrayView1<f64>) -> f64 {
    a.dot(&b) / (norm(a) * norm(b))
}

pub fn all_finite<'a>(values: impl IntoIterator<Item = &'a f64>) -> bool {
    values.into_iter().all(|x| x.is_finite())
}
