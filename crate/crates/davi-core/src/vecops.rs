//! Small dense-vector helpers shared across modules.

pub fn dot(a: &[f64], b: &[f64]) -> f64 {
    debug_assert_eq!(a.len(), b.len());
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

pub fn norm2(a: &[f64]) -> f64 {
    dot(a, a).sqrt()
}

pub fn sq_norm(a: &[f64]) -> f64 {
    dot(a, a)
}

/// a + s * b, elementwise.
pub fn add_scaled(a: &[f64], s: f64, b: &[f64]) -> Vec<f64> {
    debug_assert_eq!(a.len(), b.len());
    a.iter().zip(b).map(|(x, y)| x + s * y).collect()
}

pub fn sub(a: &[f64], b: &[f64]) -> Vec<f64> {
    debug_assert_eq!(a.len(), b.len());
    a.iter().zip(b).map(|(x, y)| x - y).collect()
}

pub fn scale(a: &[f64], s: f64) -> Vec<f64> {
    a.iter().map(|x| x * s).collect()
}

pub fn all_finite(a: &[f64]) -> bool {
    a.iter().all(|x| x.is_finite())
}

pub fn mean(rows: &[Vec<f64>]) -> Vec<f64> {
    assert!(!rows.is_empty());
    let d = rows[0].len();
    let mut out = vec![0.0; d];
    for r in rows {
        for (o, v) in out.iter_mut().zip(r) {
            *o += v;
        }
    }
    let n = rows.len() as f64;
    for o in &mut out {
        *o /= n;
    }
    out
}

/// Per-coordinate sample standard deviation (population form, divisor n).
pub fn std_per_coord(rows: &[Vec<f64>]) -> Vec<f64> {
    let m = mean(rows);
    let d = m.len();
    let mut var = vec![0.0; d];
    for r in rows {
        for i in 0..d {
            let diff = r[i] - m[i];
            var[i] += diff * diff;
        }
    }
    let n = rows.len() as f64;
    var.iter().map(|v| (v / n).sqrt()).collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn basics() {
        assert_eq!(dot(&[1.0, 2.0], &[3.0, 4.0]), 11.0);
        assert_eq!(sub(&[3.0, 4.0], &[1.0, 1.0]), vec![2.0, 3.0]);
        assert_eq!(add_scaled(&[1.0, 1.0], 2.0, &[1.0, 2.0]), vec![3.0, 5.0]);
        assert!((norm2(&[3.0, 4.0]) - 5.0).abs() < 1e-15);
    }

    #[test]
    fn moments() {
        let rows = vec![vec![1.0, 0.0], vec![3.0, 0.0]];
        assert_eq!(mean(&rows), vec![2.0, 0.0]);
        let s = std_per_coord(&rows);
        assert!((s[0] - 1.0).abs() < 1e-15);
        assert_eq!(s[1], 0.0);
    }
}
