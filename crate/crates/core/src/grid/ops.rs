//! Discrete differential operators and quadrature on the MAC grid.
//!
//! Operators that need a full stencil return zero on faces where it does not
//! fit (the array shell). Masked quantities are handled by the callers.

use serde::{Deserialize, Serialize};

use super::{CellMask, EdgeField, Grid, Layout, ScalarField, VectorField};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ConvectionScheme {
    #[default]
    Centered,
    Upwind,
}

/// True when the 7-point stencil around face `c` of component d fits.
#[inline]
pub fn face_interior(grid: &Grid, d: usize, c: [usize; 3]) -> bool {
    let n = grid.n;
    (0..3).all(|e| {
        let hi = if e == d { n - 1 } else { n - 2 };
        c[e] >= 1 && c[e] <= hi
    })
}

/// MAC divergence. With a mask, non-fluid cells report zero.
pub fn divergence(v: &VectorField, grid: &Grid, mask: Option<&CellMask>) -> ScalarField {
    let cl = grid.cells();
    let fl: [Layout; 3] = std::array::from_fn(|d| grid.faces(d));
    let inv_h = 1.0 / grid.h;
    let mut out = ScalarField::zeros(grid);
    for (idx, o) in out.data.iter_mut().enumerate() {
        if let Some(m) = mask {
            if !m.is_fluid(idx) {
                continue;
            }
        }
        let [i, j, k] = cl.coords(idx);
        let mut s = 0.0;
        for d in 0..3 {
            let f = fl[d].index(i, j, k);
            s += v.comp[d][f + fl[d].strides[d]] - v.comp[d][f];
        }
        *o = s * inv_h;
    }
    out
}

/// (p(c⁺) − p(c⁻))/h on faces with two neighbouring cells.
pub fn gradient(p: &ScalarField, grid: &Grid) -> VectorField {
    let cl = grid.cells();
    let inv_h = 1.0 / grid.h;
    let mut out = VectorField::zeros(grid);
    for d in 0..3 {
        let fl = grid.faces(d);
        for (idx, o) in out.comp[d].iter_mut().enumerate() {
            let c = fl.coords(idx);
            if c[d] == 0 || c[d] == grid.n {
                continue;
            }
            let plus = cl.index(c[0], c[1], c[2]);
            *o = (p.data[plus] - p.data[plus - cl.strides[d]]) * inv_h;
        }
    }
    out
}

/// 7-point Laplacian of each component.
pub fn laplacian(v: &VectorField, grid: &Grid) -> VectorField {
    let inv_h2 = 1.0 / (grid.h * grid.h);
    let mut out = VectorField::zeros(grid);
    for d in 0..3 {
        let fl = grid.faces(d);
        let s = fl.strides;
        let x = &v.comp[d];
        for (idx, o) in out.comp[d].iter_mut().enumerate() {
            let c = fl.coords(idx);
            if !face_interior(grid, d, c) {
                continue;
            }
            let mut acc = -6.0 * x[idx];
            for st in s {
                acc += x[idx + st] + x[idx - st];
            }
            *o = acc * inv_h2;
        }
    }
    out
}

/// Component e of `t` interpolated to face `c` of component d.
#[inline]
pub fn interpolate_to_face(t: &VectorField, grid: &Grid, d: usize, c: [usize; 3], e: usize) -> f64 {
    let fd = grid.faces(d);
    if e == d {
        return t.comp[d][fd.index(c[0], c[1], c[2])];
    }
    let le = grid.faces(e);
    let mut b = c;
    b[d] -= 1;
    let base = le.index(b[0], b[1], b[2]);
    let sd = le.strides[d];
    let se = le.strides[e];
    let a = &t.comp[e];
    0.25 * (a[base] + a[base + sd] + a[base + se] + a[base + sd + se])
}

#[inline]
fn directional(x: &[f64], idx: usize, st: usize, tk: f64, inv_h: f64, scheme: ConvectionScheme) -> f64 {
    match scheme {
        ConvectionScheme::Centered => 0.5 * (x[idx + st] - x[idx - st]) * inv_h,
        ConvectionScheme::Upwind => {
            if tk > 0.0 {
                (x[idx] - x[idx - st]) * inv_h
            } else {
                (x[idx + st] - x[idx]) * inv_h
            }
        }
    }
}

/// (t·∇)v with t interpolated to the faces of v.
pub fn advect(t: &VectorField, v: &VectorField, grid: &Grid, scheme: ConvectionScheme) -> VectorField {
    let inv_h = 1.0 / grid.h;
    let mut out = VectorField::zeros(grid);
    for d in 0..3 {
        let fl = grid.faces(d);
        let x = &v.comp[d];
        for (idx, o) in out.comp[d].iter_mut().enumerate() {
            let c = fl.coords(idx);
            if !face_interior(grid, d, c) {
                continue;
            }
            let mut acc = 0.0;
            for k in 0..3 {
                let tk = interpolate_to_face(t, grid, d, c, k);
                acc += tk * directional(x, idx, fl.strides[k], tk, inv_h, scheme);
            }
            *o = acc;
        }
    }
    out
}

/// (c·∇)v for a constant transport vector c.
pub fn advect_constant(c: [f64; 3], v: &VectorField, grid: &Grid, scheme: ConvectionScheme) -> VectorField {
    let inv_h = 1.0 / grid.h;
    let mut out = VectorField::zeros(grid);
    for d in 0..3 {
        let fl = grid.faces(d);
        let x = &v.comp[d];
        for (idx, o) in out.comp[d].iter_mut().enumerate() {
            let p = fl.coords(idx);
            if !face_interior(grid, d, p) {
                continue;
            }
            let mut acc = 0.0;
            for k in 0..3 {
                if c[k] != 0.0 {
                    acc += c[k] * directional(x, idx, fl.strides[k], c[k], inv_h, scheme);
                }
            }
            *o = acc;
        }
    }
    out
}

/// Discrete curl of an edge potential. Its MAC divergence vanishes identically.
pub fn curl(a: &EdgeField, grid: &Grid) -> VectorField {
    let inv_h = 1.0 / grid.h;
    let el: [Layout; 3] = std::array::from_fn(|d| grid.edges(d));
    let mut out = VectorField::zeros(grid);
    for d in 0..3 {
        let (p, q) = ((d + 1) % 3, (d + 2) % 3);
        let fl = grid.faces(d);
        for (idx, o) in out.comp[d].iter_mut().enumerate() {
            let [i, j, k] = fl.coords(idx);
            let iq = el[q].index(i, j, k);
            let ip = el[p].index(i, j, k);
            *o = ((a.comp[q][iq + el[q].strides[p]] - a.comp[q][iq])
                - (a.comp[p][ip + el[p].strides[q]] - a.comp[p][ip]))
                * inv_h;
        }
    }
    out
}

/// Midpoint rule over fluid cells.
pub fn integrate_scalar(f: &ScalarField, mask: &CellMask) -> f64 {
    let s: f64 = mask.fluid.iter().map(|&c| f.data[c as usize]).sum();
    s * mask.grid.cell_volume()
}

/// Discrete L² pairing over the fluid region: every face carries half the
/// volume of each neighbouring fluid cell.
pub fn integrate_dot(v1: &VectorField, v2: &VectorField, mask: &CellMask) -> f64 {
    let mut s = 0.0;
    for d in 0..3 {
        for (idx, (a, b)) in v1.comp[d].iter().zip(&v2.comp[d]).enumerate() {
            let w = mask.face_weight(d, idx);
            if w > 0.0 {
                s += w * a * b;
            }
        }
    }
    s * mask.grid.cell_volume()
}

/// Plain h³-weighted sum over all faces (used for vectors vanishing off the
/// free faces, where it coincides with the fluid pairing).
pub fn dot_all(v1: &VectorField, v2: &VectorField, grid: &Grid) -> f64 {
    let mut s = 0.0;
    for d in 0..3 {
        s += v1.comp[d].iter().zip(&v2.comp[d]).map(|(a, b)| a * b).sum::<f64>();
    }
    s * grid.cell_volume()
}

/// ∫|∇v|² from the staggered differences between neighbouring faces of each
/// component, over the whole box.
pub fn gradient_sq_sum(v: &VectorField, grid: &Grid) -> f64 {
    let mut s = 0.0;
    for d in 0..3 {
        let fl = grid.faces(d);
        let x = &v.comp[d];
        for k in 0..3 {
            let st = fl.strides[k];
            for (idx, xi) in x.iter().enumerate() {
                if fl.coords(idx)[k] + 1 < fl.dims[k] {
                    let df = x[idx + st] - xi;
                    s += df * df;
                }
            }
        }
    }
    s * grid.h
}

/// ‖∇v‖₂ over the box.
pub fn h1_seminorm(v: &VectorField, grid: &Grid) -> f64 {
    gradient_sq_sum(v, grid).sqrt()
}

/// Average of the two faces of each component at every cell center.
pub fn cell_average(v: &VectorField, grid: &Grid, c: [usize; 3]) -> [f64; 3] {
    std::array::from_fn(|d| {
        let fl = grid.faces(d);
        let f = fl.index(c[0], c[1], c[2]);
        0.5 * (v.comp[d][f] + v.comp[d][f + fl.strides[d]])
    })
}

/// ∂_k v_d at the center of an interior cell, as g[d][k].
pub fn cell_gradient(v: &VectorField, grid: &Grid, c: [usize; 3]) -> [[f64; 3]; 3] {
    let inv_h = 1.0 / grid.h;
    let mut g = [[0.0; 3]; 3];
    for d in 0..3 {
        let fl = grid.faces(d);
        let x = &v.comp[d];
        let f0 = fl.index(c[0], c[1], c[2]);
        let f1 = f0 + fl.strides[d];
        for k in 0..3 {
            g[d][k] = if k == d {
                (x[f1] - x[f0]) * inv_h
            } else {
                let st = fl.strides[k];
                0.25 * ((x[f0 + st] - x[f0 - st]) + (x[f1 + st] - x[f1 - st])) * inv_h
            };
        }
    }
    g
}

/// True when `cell_gradient` can be evaluated at cell c.
#[inline]
pub fn cell_interior(grid: &Grid, c: [usize; 3]) -> bool {
    c.iter().all(|&x| x >= 1 && x + 2 <= grid.n)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::grid::{build_grid, voxelize_body, BodyShape};
    use rand::{RngExt, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn setup(n: usize) -> (Grid, CellMask) {
        let g = build_grid(2.0, n).unwrap();
        let m = voxelize_body(&BodyShape::Sphere { radius: 0.5 }, &g).unwrap();
        (g, m)
    }

    #[test]
    fn divergence_examples() {
        let (g, m) = setup(16);
        let c = VectorField::constant(&g, [1.0, -2.0, 0.5]);
        assert_eq!(divergence(&c, &g, Some(&m)).max_abs(), 0.0);
        let lin = VectorField::from_fn(&g, |x| [x[0], -x[1], 0.0]);
        assert!(divergence(&lin, &g, None).max_abs() <= 1e-12);
        let quad = VectorField::from_fn(&g, |x| [x[0] * x[0], 0.0, 0.0]);
        let dv = divergence(&quad, &g, Some(&m));
        for &c in &m.fluid {
            let x = g.cell_center(g.cells().coords(c as usize));
            // the MAC difference of x² is exact at cell centers
            assert!((dv.data[c as usize] - 2.0 * x[0]).abs() <= 1e-12);
        }
        for (idx, k) in m.cells.iter().enumerate() {
            if *k != crate::grid::CellKind::Fluid {
                assert_eq!(dv.data[idx], 0.0);
            }
        }
    }

    #[test]
    fn gradient_and_laplacian_examples() {
        let (g, _) = setup(16);
        let p = ScalarField::from_fn(&g, |_| 3.5);
        assert_eq!(gradient(&p, &g).max_abs(), 0.0);
        let v = VectorField::from_fn(&g, |x| {
            let s = x[0] * x[0] + x[1] * x[1];
            [s, s, s]
        });
        let lap = laplacian(&v, &g);
        for d in 0..3 {
            let fl = g.faces(d);
            for idx in 0..fl.len() {
                if face_interior(&g, d, fl.coords(idx)) {
                    assert!((lap.comp[d][idx] - 4.0).abs() <= 1e-10);
                }
            }
        }
    }

    #[test]
    fn advect_constant_e1_on_linear_field_is_exact() {
        let (g, _) = setup(16);
        let v = VectorField::from_fn(&g, |x| [2.0 * x[0] + x[1], -x[0] + 0.5 * x[2], 3.0 * x[0]]);
        let e1 = VectorField::constant(&g, [1.0, 0.0, 0.0]);
        for scheme in [ConvectionScheme::Centered, ConvectionScheme::Upwind] {
            let a = advect(&e1, &v, &g, scheme);
            let b = advect_constant([1.0, 0.0, 0.0], &v, &g, scheme);
            let dx = [2.0, -1.0, 3.0];
            for d in 0..3 {
                let fl = g.faces(d);
                for idx in 0..fl.len() {
                    if face_interior(&g, d, fl.coords(idx)) {
                        assert!((a.comp[d][idx] - dx[d]).abs() <= 1e-12);
                        assert!((b.comp[d][idx] - dx[d]).abs() <= 1e-12);
                    }
                }
            }
        }
    }

    #[test]
    fn interpolated_transport_is_exact_for_linear_fields() {
        let (g, _) = setup(16);
        let t = VectorField::from_fn(&g, |x| [x[1], x[2] - x[0], 2.0 * x[0] + x[1]]);
        for d in 0..3 {
            let fl = g.faces(d);
            for idx in (0..fl.len()).step_by(7) {
                let c = fl.coords(idx);
                if !face_interior(&g, d, c) {
                    continue;
                }
                let x = g.face_position(d, c);
                let exact = [x[1], x[2] - x[0], 2.0 * x[0] + x[1]];
                for e in 0..3 {
                    assert!((interpolate_to_face(&t, &g, d, c, e) - exact[e]).abs() <= 1e-13);
                }
            }
        }
    }

    #[test]
    fn curl_of_linear_potential_is_constant_and_solenoidal() {
        let g = build_grid(3.0, 16).unwrap();
        let a = [0.3, -1.2, 0.7];
        // 𝖴(x; a) = (x₃a₂, x₁a₃, x₂a₁) has curl a
        let pot = EdgeField::from_fn(&g, |x| [x[2] * a[1], x[0] * a[2], x[1] * a[0]]);
        let v = curl(&pot, &g);
        for d in 0..3 {
            assert!(v.comp[d].iter().all(|x| (x - a[d]).abs() <= 1e-12));
        }
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let mut r = EdgeField::zeros(&g);
        for c in &mut r.comp {
            c.iter_mut().for_each(|x| *x = rng.random_range(-1.0..1.0));
        }
        assert!(divergence(&curl(&r, &g), &g, None).max_abs() <= 1e-12);
    }

    #[test]
    fn integrals() {
        let (g, m) = setup(32);
        let one = ScalarField::from_fn(&g, |_| 1.0);
        let vol = integrate_scalar(&one, &m);
        let inner = (2.0 * g.radius - 2.0 * g.h).powi(3);
        let exact = inner - 4.0 / 3.0 * std::f64::consts::PI * 0.125;
        assert!((vol - exact).abs() / exact < 0.01);
        let e1 = VectorField::constant(&g, [1.0, 0.0, 0.0]);
        let e2 = VectorField::constant(&g, [0.0, 1.0, 0.0]);
        assert_eq!(integrate_dot(&e1, &e2, &m), 0.0);
        assert!((integrate_dot(&e1, &e1, &m) - vol).abs() <= 1e-9 * vol);
    }

    fn random_interior(g: &Grid, m: &CellMask, rng: &mut ChaCha8Rng) -> VectorField {
        let mut v = VectorField::zeros(g);
        for c in &mut v.comp {
            c.iter_mut().for_each(|x| *x = rng.random_range(-1.0..1.0));
        }
        m.zero_pinned(&mut v);
        v
    }

    #[test]
    fn gradient_divergence_adjoint() {
        let (g, m) = setup(16);
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        for _ in 0..20 {
            let v = random_interior(&g, &m, &mut rng);
            let mut p = ScalarField::zeros(&g);
            for &c in &m.fluid {
                p.data[c as usize] = rng.random_range(-1.0..1.0);
            }
            let gp = gradient(&p, &g);
            let lhs = dot_all(&gp, &v, &g);
            let dv = divergence(&v, &g, Some(&m));
            let rhs: f64 = p.data.iter().zip(&dv.data).map(|(a, b)| a * b).sum::<f64>() * g.cell_volume();
            let np = (p.data.iter().map(|x| x * x).sum::<f64>() * g.cell_volume()).sqrt();
            let nv = dot_all(&v, &v, &g).sqrt();
            assert!((lhs + rhs).abs() <= 1e-10 * np * nv);
        }
    }

    #[test]
    fn constant_transport_is_skew() {
        let (g, m) = setup(16);
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let v = random_interior(&g, &m, &mut rng);
        let b = [0.48, 0.6, -0.64];
        let mut a = advect_constant(b, &v, &g, ConvectionScheme::Centered);
        m.zero_pinned(&mut a);
        let e = dot_all(&a, &v, &g);
        assert!(e.abs() <= 1e-10 * dot_all(&v, &v, &g));
    }

    #[test]
    fn h1_seminorm_matches_laplacian_pairing() {
        let (g, m) = setup(16);
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let v = random_interior(&g, &m, &mut rng);
        let lap = laplacian(&v, &g);
        let pairing = -dot_all(&lap, &v, &g);
        let s = gradient_sq_sum(&v, &g);
        assert!((pairing - s).abs() <= 1e-10 * s);
    }
}
