//! Scalar helpers shared by the simulator, the network and the losses.

/// Probabilities fed to a log are kept inside `[PROB_EPS, 1 - PROB_EPS]`.
pub const PROB_EPS: f64 = 1e-7;

/// Ground-truth probabilities are kept inside `[ORACLE_EPS, 1 - ORACLE_EPS]`.
pub const ORACLE_EPS: f64 = 1e-9;

#[inline]
pub fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + libm::exp(-x))
    } else {
        let e = libm::exp(x);
        e / (1.0 + e)
    }
}

#[inline]
pub fn clamp_prob(p: f64, eps: f64) -> f64 {
    p.clamp(eps, 1.0 - eps)
}

#[inline]
pub fn ln(x: f64) -> f64 {
    libm::log(x)
}

#[inline]
pub fn exp(x: f64) -> f64 {
    libm::exp(x)
}

#[inline]
pub fn sqrt(x: f64) -> f64 {
    libm::sqrt(x)
}

#[inline]
pub fn dot(a: &[f64], b: &[f64]) -> f64 {
    debug_assert_eq!(a.len(), b.len());
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

/// `out += x · W` for a row-major `W` of shape `x.len() × out.len()`.
#[inline]
pub fn add_vec_mat(x: &[f64], w: &[f64], out: &mut [f64]) {
    let cols = out.len();
    debug_assert_eq!(w.len(), x.len() * cols);
    for (xi, row) in x.iter().zip(w.chunks_exact(cols)) {
        if *xi == 0.0 {
            continue;
        }
        for (o, wij) in out.iter_mut().zip(row) {
            *o += xi * wij;
        }
    }
}

/// `out += W · g` for a row-major `W` of shape `out.len() × g.len()`.
#[inline]
pub fn add_mat_vec(w: &[f64], g: &[f64], out: &mut [f64]) {
    let cols = g.len();
    debug_assert_eq!(w.len(), out.len() * cols);
    for (o, row) in out.iter_mut().zip(w.chunks_exact(cols)) {
        *o += dot(row, g);
    }
}

/// `W += x ⊗ g` (outer product) for a row-major `W` of shape `x.len() × g.len()`.
#[inline]
pub fn add_outer(x: &[f64], g: &[f64], w: &mut [f64]) {
    let cols = g.len();
    debug_assert_eq!(w.len(), x.len() * cols);
    for (xi, row) in x.iter().zip(w.chunks_exact_mut(cols)) {
        if *xi == 0.0 {
            continue;
        }
        for (wij, gj) in row.iter_mut().zip(g) {
            *wij += xi * gj;
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn sigmoid_anchors() {
        assert_eq!(sigmoid(0.0), 0.5);
        assert!((sigmoid(ln(3.0)) - 0.75).abs() < 1e-15);
        assert!(sigmoid(-800.0) >= 0.0 && sigmoid(800.0) <= 1.0);
    }

    #[test]
    fn vec_mat_products() {
        // W = [[1, 2], [3, 4], [5, 6]]
        let w = [1.0, 2.0, 3.0, 4.0, 5.0, 6.0];
        let mut out = [0.0; 2];
        add_vec_mat(&[1.0, 0.0, -1.0], &w, &mut out);
        assert_eq!(out, [-4.0, -4.0]);
        let mut back = [0.0; 3];
        add_mat_vec(&w, &[1.0, 1.0], &mut back);
        assert_eq!(back, [3.0, 7.0, 11.0]);
        let mut acc = [0.0; 6];
        add_outer(&[1.0, 2.0, 0.0], &[1.0, -1.0], &mut acc);
        assert_eq!(acc, [1.0, -1.0, 2.0, -2.0, 0.0, 0.0]);
    }
}
