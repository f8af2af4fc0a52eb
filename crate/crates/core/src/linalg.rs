//! Small dense-vector helpers shared by the field modules.

#[inline]
pub fn dot(a: &[f32], b: &[f32]) -> f32 {
    debug_assert_eq!(a.len(), b.len());
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

/// Dot product accumulated in `f64`.
#[inline]
pub fn dot_f64(a: &[f32], b: &[f32]) -> f64 {
    debug_assert_eq!(a.len(), b.len());
    a.iter().zip(b).map(|(&x, &y)| x as f64 * y as f64).sum()
}

#[inline]
pub fn norm(a: &[f32]) -> f32 {
    dot_f64(a, a).sqrt() as f32
}

/// Returns the unit vector along `a`, or `None` for a zero or non-finite input.
pub fn normalized(a: &[f32]) -> Option<Vec<f32>> {
    let n = dot_f64(a, a).sqrt();
    if n > 0.0 && n.is_finite() {
        Some(a.iter().map(|&x| (x as f64 / n) as f32).collect())
    } else {
        None
    }
}

/// Normalizes in place; zero vectors are left untouched.
pub fn normalize_in_place(a: &mut [f32]) {
    let n = dot_f64(a, a).sqrt();
    if n > 0.0 && n.is_finite() {
        for x in a.iter_mut() {
            *x = (*x as f64 / n) as f32;
        }
    }
}

/// Row-wise L2 normalization of an `rows × dim` row-major matrix. Zero rows stay zero.
pub fn normalize_rows(data: &[f32], dim: usize) -> Vec<f32> {
    let mut out = data.to_vec();
    for row in out.chunks_exact_mut(dim) {
        normalize_in_place(row);
    }
    out
}

pub fn cosine(a: &[f32], b: &[f32]) -> f64 {
    let na = dot_f64(a, a).sqrt();
    let nb = dot_f64(b, b).sqrt();
    if na == 0.0 || nb == 0.0 {
        0.0
    } else {
        dot_f64(a, b) / (na * nb)
    }
}

pub fn is_unit(a: &[f32], tol: f64) -> bool {
    (dot_f64(a, a).sqrt() - 1.0).abs() <= tol
}
