//! Small dense-vector helpers shared by the numeric modules.

pub(crate) fn dot(a: &[f64], b: &[f64]) -> f64 {
    debug_assert_eq!(a.len(), b.len());
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

pub(crate) fn norm(a: &[f64]) -> f64 {
    dot(a, a).sqrt()
}

/// Returns `None` for the zero vector.
pub(crate) fn normalized(a: &[f64]) -> Option<Vec<f64>> {
    let n = norm(a);
    if n == 0.0 || !n.is_finite() {
        return None;
    }
    Some(a.iter().map(|x| x / n).collect())
}

pub(crate) fn cosine(a: &[f64], b: &[f64]) -> f64 {
    let na = norm(a);
    let nb = norm(b);
    if na == 0.0 || nb == 0.0 {
        return 0.0;
    }
    dot(a, b) / (na * nb)
}

pub(crate) fn add_scaled(acc: &mut [f64], x: &[f64], scale: f64) {
    debug_assert_eq!(acc.len(), x.len());
    for (a, v) in acc.iter_mut().zip(x) {
        *a += scale * v;
    }
}

/// Normalized mean direction of a set of vectors, or `None` when they cancel.
pub(crate) fn mean_direction<'a, I>(dim: usize, vectors: I) -> Option<Vec<f64>>
where
    I: IntoIterator<Item = &'a [f64]>,
{
    let mut sum = vec![0.0; dim];
    for v in vectors {
        add_scaled(&mut sum, v, 1.0);
    }
    normalized(&sum)
}
