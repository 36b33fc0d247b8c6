//! Independent reference computations for the acceptance checks. Nothing in
//! here calls into the code under test beyond plain data types.

use num_complex::Complex64 as C;

/// Characteristic polynomial coefficients of an `n × n` matrix (row-major),
/// highest degree first with leading 1, by the Faddeev–LeVerrier recursion.
pub fn char_poly(a: &[C], n: usize) -> Vec<C> {
    let mul = |x: &[C], y: &[C]| {
        let mut out = vec![C::new(0.0, 0.0); n * n];
        for i in 0..n {
            for k in 0..n {
                let xik = x[i * n + k];
                for j in 0..n {
                    out[i * n + j] += xik * y[k * n + j];
                }
            }
        }
        out
    };
    let mut coeffs = vec![C::new(1.0, 0.0)];
    let mut m = vec![C::new(0.0, 0.0); n * n];
    for k in 1..=n {
        // M_k = A M_{k-1} + c_{k-1} I ; c_k = -tr(A M_k) / k
        let mut next = mul(a, &m);
        for i in 0..n {
            next[i * n + i] += coeffs[k - 1];
        }
        let am = mul(a, &next);
        let tr: C = (0..n).map(|i| am[i * n + i]).sum();
        coeffs.push(-tr / k as f64);
        m = next;
    }
    coeffs
}

fn horner(p: &[C], z: C) -> C {
    p.iter().fold(C::new(0.0, 0.0), |acc, &c| acc * z + c)
}

fn horner_with_derivative(p: &[C], z: C) -> (C, C) {
    let mut v = C::new(0.0, 0.0);
    let mut d = C::new(0.0, 0.0);
    for &c in p {
        d = d * z + v;
        v = v * z + c;
    }
    (v, d)
}

/// All roots of a monic polynomial by Durand–Kerner, polished by Newton.
pub fn roots(p: &[C]) -> Vec<C> {
    let n = p.len() - 1;
    let bound = 1.0 + p[1..].iter().map(|c| c.norm()).fold(0.0, f64::max);
    let seed = C::new(0.4, 0.9);
    let mut z: Vec<C> = (0..n).map(|k| seed.powu(k as u32) * bound).collect();
    for _ in 0..2000 {
        let mut delta = 0.0f64;
        for i in 0..n {
            let mut den = C::new(1.0, 0.0);
            for j in 0..n {
                if i != j {
                    den *= z[i] - z[j];
                }
            }
            let step = horner(p, z[i]) / den;
            z[i] -= step;
            delta = delta.max(step.norm());
        }
        if delta < 1e-15 * bound {
            break;
        }
    }
    for zi in &mut z {
        for _ in 0..5 {
            let (v, d) = horner_with_derivative(p, *zi);
            if d.norm() == 0.0 {
                break;
            }
            *zi -= v / d;
        }
    }
    z
}

/// Eigenvalues of a Hermitian matrix from its characteristic polynomial,
/// descending.
pub fn hermitian_eigenvalues(a: &[C], n: usize) -> Vec<f64> {
    let scale = a.iter().map(|z| z.norm_sqr()).sum::<f64>().sqrt().max(f64::MIN_POSITIVE);
    let scaled: Vec<C> = a.iter().map(|z| z / scale).collect();
    let mut ev: Vec<f64> = roots(&char_poly(&scaled, n)).iter().map(|z| z.re * scale).collect();
    ev.sort_by(|x, y| y.total_cmp(x));
    ev
}

/// Specular path predicted by the image lattice of an axis-aligned box.
#[derive(Debug, Clone, Copy)]
pub struct LatticePath {
    pub delay_s: f64,
    pub gain: C,
    pub order: usize,
}

/// Images of `tx` in the closed box `[0, size]` with at most `max_order`
/// reflections. `gamma[axis] = (Γ of the wall at 0, Γ of the wall at size)`.
///
/// Along one axis the images are `2mL + x` (|m| hits on each wall) and
/// `2mL − x` (m hits on the far wall and m − 1 on the near one for m ≥ 1,
/// |m| + 1 near and |m| far for m ≤ 0).
pub fn box_lattice(
    size: [f64; 3],
    gamma: [(f64, f64); 3],
    tx: [f64; 3],
    rx: [f64; 3],
    max_order: usize,
    wavelength: f64,
    c0: f64,
) -> Vec<LatticePath> {
    let mut per_axis: Vec<Vec<(f64, usize, f64)>> = Vec::new();
    for ax in 0..3 {
        let (l, x) = (size[ax], tx[ax]);
        let (g0, g1) = gamma[ax];
        let mut opts = Vec::new();
        for m in -2i32..=2 {
            let mm = m.unsigned_abs() as usize;
            let (near, far) = (mm, mm);
            opts.push((2.0 * m as f64 * l + x, near + far, g0.powi(near as i32) * g1.powi(far as i32)));
            let (near, far) = if m >= 1 { (mm - 1, mm) } else { (mm + 1, mm) };
            opts.push((2.0 * m as f64 * l - x, near + far, g0.powi(near as i32) * g1.powi(far as i32)));
        }
        per_axis.push(opts);
    }
    let mut out = Vec::new();
    for a in &per_axis[0] {
        for b in &per_axis[1] {
            for c in &per_axis[2] {
                let order = a.1 + b.1 + c.1;
                let g = a.2 * b.2 * c.2;
                if order > max_order || g == 0.0 {
                    continue;
                }
                let d = ((a.0 - rx[0]).powi(2) + (b.0 - rx[1]).powi(2) + (c.0 - rx[2]).powi(2)).sqrt();
                let amp = g * wavelength / (4.0 * std::f64::consts::PI * d);
                out.push(LatticePath {
                    delay_s: d / c0,
                    gain: C::from_polar(amp, -2.0 * std::f64::consts::PI * d / wavelength),
                    order,
                });
            }
        }
    }
    out.sort_by(|x, y| x.delay_s.total_cmp(&y.delay_s));
    out
}
