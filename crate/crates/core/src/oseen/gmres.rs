//! Restarted GMRES with right preconditioning and modified Gram-Schmidt.

pub struct GmresStats {
    pub iterations: usize,
    pub cycles: usize,
    pub converged: bool,
    /// Lucky breakdown or stagnation with a nonzero residual.
    pub breakdown: bool,
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

fn norm(a: &[f64]) -> f64 {
    dot(a, a).sqrt()
}

/// Solves A x = b starting from `x`.
///
/// `accept(r, ‖r‖)` is called with every true residual; it returns `None` to
/// stop with success or `Some(target)` for the residual-norm target of the
/// next cycle.
#[allow(clippy::too_many_arguments)]
pub fn gmres(
    mut apply: impl FnMut(&[f64], &mut [f64]),
    mut precond: impl FnMut(&[f64], &mut [f64]),
    b: &[f64],
    x: &mut [f64],
    restart: usize,
    max_cycles: usize,
    mut accept: impl FnMut(&[f64], f64) -> Option<f64>,
) -> GmresStats {
    let n = b.len();
    let m = restart.max(1);
    let mut r = vec![0.0; n];
    let mut w = vec![0.0; n];
    let mut z = vec![0.0; n];
    let residual = |apply: &mut dyn FnMut(&[f64], &mut [f64]), x: &[f64], r: &mut [f64], w: &mut [f64]| {
        apply(x, w);
        for i in 0..n {
            r[i] = b[i] - w[i];
        }
    };
    residual(&mut apply, x, &mut r, &mut w);
    let mut beta = norm(&r);
    let mut stats = GmresStats { iterations: 0, cycles: 0, converged: false, breakdown: false };
    let mut basis: Vec<Vec<f64>> = Vec::new();
    let mut hess = vec![vec![0.0; m]; m + 1];
    let mut cs = vec![0.0; m];
    let mut sn = vec![0.0; m];
    let mut g = vec![0.0; m + 1];
    let mut last_beta = f64::INFINITY;
    loop {
        let target = match accept(&r, beta) {
            None => {
                stats.converged = true;
                return stats;
            }
            Some(t) => t,
        };
        if stats.cycles >= max_cycles || beta == 0.0 {
            return stats;
        }
        if beta >= last_beta * (1.0 - 1e-12) && stats.cycles > 0 {
            // no progress over a whole cycle
            stats.breakdown = true;
            return stats;
        }
        last_beta = beta;
        stats.cycles += 1;
        if basis.is_empty() {
            basis.push(vec![0.0; n]);
        }
        for i in 0..n {
            basis[0][i] = r[i] / beta;
        }
        g.iter_mut().for_each(|v| *v = 0.0);
        g[0] = beta;
        let mut used = 0;
        for j in 0..m {
            precond(&basis[j], &mut z);
            apply(&z, &mut w);
            for i in 0..=j {
                let hij = dot(&w, &basis[i]);
                hess[i][j] = hij;
                let vi = &basis[i];
                for (wk, vk) in w.iter_mut().zip(vi) {
                    *wk -= hij * vk;
                }
            }
            let hn = norm(&w);
            hess[j + 1][j] = hn;
            if basis.len() < j + 2 {
                basis.push(vec![0.0; n]);
            }
            if hn > 0.0 {
                let inv = 1.0 / hn;
                for (vk, wk) in basis[j + 1].iter_mut().zip(&w) {
                    *vk = wk * inv;
                }
            }
            for i in 0..j {
                let t = cs[i] * hess[i][j] + sn[i] * hess[i + 1][j];
                hess[i + 1][j] = -sn[i] * hess[i][j] + cs[i] * hess[i + 1][j];
                hess[i][j] = t;
            }
            let (a, bb) = (hess[j][j], hess[j + 1][j]);
            let den = a.hypot(bb);
            let (c, s) = if den == 0.0 { (1.0, 0.0) } else { (a / den, bb / den) };
            cs[j] = c;
            sn[j] = s;
            hess[j][j] = c * a + s * bb;
            hess[j + 1][j] = 0.0;
            g[j + 1] = -s * g[j];
            g[j] *= c;
            stats.iterations += 1;
            used = j + 1;
            if g[j + 1].abs() <= target || hn == 0.0 {
                break;
            }
        }
        // back substitution
        let mut y = vec![0.0; used];
        for i in (0..used).rev() {
            let mut s = g[i];
            for k in i + 1..used {
                s -= hess[i][k] * y[k];
            }
            y[i] = if hess[i][i] != 0.0 { s / hess[i][i] } else { 0.0 };
        }
        w.iter_mut().for_each(|v| *v = 0.0);
        for (i, yi) in y.iter().enumerate() {
            for (wk, vk) in w.iter_mut().zip(&basis[i]) {
                *wk += yi * vk;
            }
        }
        precond(&w, &mut z);
        for (xk, zk) in x.iter_mut().zip(&z) {
            *xk += zk;
        }
        residual(&mut apply, x, &mut r, &mut w);
        beta = norm(&r);
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn solves_small_nonsymmetric_system() {
        let n = 30;
        let a = |x: &[f64], y: &mut [f64]| {
            for i in 0..n {
                let mut s = 4.0 * x[i];
                if i > 0 {
                    s -= 1.5 * x[i - 1];
                }
                if i + 1 < n {
                    s -= 0.5 * x[i + 1];
                }
                y[i] = s;
            }
        };
        let xs: Vec<f64> = (0..n).map(|i| (i as f64).sin()).collect();
        let mut b = vec![0.0; n];
        a(&xs, &mut b);
        let mut x = vec![0.0; n];
        let st = gmres(a, |r, z| z.copy_from_slice(r), &b, &mut x, 8, 50, |_, beta| {
            (beta > 1e-12).then_some(1e-13)
        });
        assert!(st.converged);
        for i in 0..n {
            assert!((x[i] - xs[i]).abs() < 1e-10);
        }
    }
}
