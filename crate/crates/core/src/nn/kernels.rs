//! Small dense kernels with a fixed summation order, so results do not
//! depend on how many rows are processed at once.

#[inline]
pub fn dot(a: &[f64], b: &[f64]) -> f64 {
    debug_assert_eq!(a.len(), b.len());
    let mut acc = [0.0f64; 8];
    let chunks = a.len() / 8;
    for c in 0..chunks {
        let x = &a[c * 8..c * 8 + 8];
        let y = &b[c * 8..c * 8 + 8];
        for k in 0..8 {
            acc[k] += x[k] * y[k];
        }
    }
    let mut tail = 0.0;
    for k in chunks * 8..a.len() {
        tail += a[k] * b[k];
    }
    ((acc[0] + acc[1]) + (acc[2] + acc[3])) + ((acc[4] + acc[5]) + (acc[6] + acc[7])) + tail
}

/// `y += alpha * x`
#[inline]
pub fn axpy(alpha: f64, x: &[f64], y: &mut [f64]) {
    debug_assert_eq!(x.len(), y.len());
    for (yi, xi) in y.iter_mut().zip(x) {
        *yi += alpha * xi;
    }
}

/// `out += W x` for row-major `W` of shape `[out.len(), x.len()]`.
pub fn matvec_add(w: &[f64], x: &[f64], out: &mut [f64]) {
    let cols = x.len();
    debug_assert_eq!(w.len(), out.len() * cols);
    for (o, row) in out.iter_mut().zip(w.chunks_exact(cols)) {
        *o += dot(row, x);
    }
}

/// `out += W^T v` for row-major `W` of shape `[v.len(), out.len()]`.
pub fn matvec_t_add(w: &[f64], v: &[f64], out: &mut [f64]) {
    let cols = out.len();
    debug_assert_eq!(w.len(), v.len() * cols);
    for (&vi, row) in v.iter().zip(w.chunks_exact(cols)) {
        if vi != 0.0 {
            axpy(vi, row, out);
        }
    }
}

/// `G += u x^T` for row-major `G` of shape `[u.len(), x.len()]`.
pub fn outer_add(g: &mut [f64], u: &[f64], x: &[f64]) {
    let cols = x.len();
    debug_assert_eq!(g.len(), u.len() * cols);
    for (&ui, row) in u.iter().zip(g.chunks_exact_mut(cols)) {
        if ui != 0.0 {
            axpy(ui, x, row);
        }
    }
}

/// Rows per block in the batched kernels below.
const BLOCK: usize = 16;

/// `out[t] += W a[t]` for every row `t` of `a` (`[m, k]`), with `W` of shape
/// `[n, k]` and `out` of shape `[m, n]`. Same per-element sums as
/// [`matvec_add`].
pub fn matmul_nt_add(a: &[f64], w: &[f64], k: usize, out: &mut [f64]) {
    let m = a.len() / k;
    let n = w.len() / k;
    debug_assert_eq!(out.len(), m * n);
    for t0 in (0..m).step_by(BLOCK) {
        let t1 = (t0 + BLOCK).min(m);
        for (r, row) in w.chunks_exact(k).enumerate() {
            for t in t0..t1 {
                out[t * n + r] += dot(&a[t * k..(t + 1) * k], row);
            }
        }
    }
}

/// `G += D^T X` with `D` of shape `[m, n]`, `X` of shape `[m, k]` and `G`
/// of shape `[n, k]`; rows of `D` are summed in increasing order.
pub fn outer_sum_add(g: &mut [f64], d: &[f64], x: &[f64], k: usize) {
    let n = g.len() / k;
    let m = x.len() / k;
    debug_assert_eq!(d.len(), m * n);
    for t0 in (0..m).step_by(BLOCK) {
        let t1 = (t0 + BLOCK).min(m);
        for (r, grow) in g.chunks_exact_mut(k).enumerate() {
            for t in t0..t1 {
                let dv = d[t * n + r];
                if dv != 0.0 {
                    axpy(dv, &x[t * k..(t + 1) * k], grow);
                }
            }
        }
    }
}

/// `out[t] += W^T d[t]` for every row of `d` (`[m, n]`), `W` of shape
/// `[n, k]`, `out` of shape `[m, k]`.
pub fn matmul_nn_add(d: &[f64], w: &[f64], k: usize, out: &mut [f64]) {
    let n = w.len() / k;
    let m = d.len() / n;
    debug_assert_eq!(out.len(), m * k);
    for t0 in (0..m).step_by(BLOCK) {
        let t1 = (t0 + BLOCK).min(m);
        for (r, row) in w.chunks_exact(k).enumerate() {
            for t in t0..t1 {
                let dv = d[t * n + r];
                if dv != 0.0 {
                    axpy(dv, row, &mut out[t * k..(t + 1) * k]);
                }
            }
        }
    }
}

#[inline]
pub fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn dot_matches_naive() {
        let a: Vec<f64> = (0..19).map(|i| i as f64 * 0.5 - 3.0).collect();
        let b: Vec<f64> = (0..19).map(|i| (i as f64).sin()).collect();
        let naive: f64 = a.iter().zip(&b).map(|(x, y)| x * y).sum();
        assert!((dot(&a, &b) - naive).abs() < 1e-12);
    }

    #[test]
    fn transposed_matvec() {
        // W = [[1,2],[3,4],[5,6]]
        let w = [1.0, 2.0, 3.0, 4.0, 5.0, 6.0];
        let mut out = [0.0; 3];
        matvec_add(&w, &[1.0, 1.0], &mut out);
        assert_eq!(out, [3.0, 7.0, 11.0]);
        let mut out = [0.0; 2];
        matvec_t_add(&w, &[1.0, 0.0, 1.0], &mut out);
        assert_eq!(out, [6.0, 8.0]);
    }

    #[test]
    fn batched_kernels_match_row_kernels() {
        let (m, n, k) = (37, 5, 11);
        let f = |i: usize| ((i * 7919) % 23) as f64 / 7.0 - 1.5;
        let a: Vec<f64> = (0..m * k).map(f).collect();
        let w: Vec<f64> = (0..n * k).map(|i| f(i + 3)).collect();
        let d: Vec<f64> = (0..m * n).map(|i| f(i + 5)).collect();

        let mut out = vec![0.0; m * n];
        matmul_nt_add(&a, &w, k, &mut out);
        for t in 0..m {
            let mut row = vec![0.0; n];
            matvec_add(&w, &a[t * k..(t + 1) * k], &mut row);
            assert_eq!(&out[t * n..(t + 1) * n], &row[..]);
        }

        let mut g = vec![0.0; n * k];
        outer_sum_add(&mut g, &d, &a, k);
        let mut g_ref = vec![0.0; n * k];
        for t in 0..m {
            outer_add(&mut g_ref, &d[t * n..(t + 1) * n], &a[t * k..(t + 1) * k]);
        }
        assert_eq!(g, g_ref);

        let mut dx = vec![0.0; m * k];
        matmul_nn_add(&d, &w, k, &mut dx);
        for t in 0..m {
            let mut row = vec![0.0; k];
            matvec_t_add(&w, &d[t * n..(t + 1) * n], &mut row);
            for (x, y) in dx[t * k..(t + 1) * k].iter().zip(&row) {
                assert!((x - y).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn sigmoid_is_stable() {
        assert_eq!(sigmoid(0.0), 0.5);
        assert!(sigmoid(-1000.0) >= 0.0 && sigmoid(1000.0) <= 1.0);
    }
}
