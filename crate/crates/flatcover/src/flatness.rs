//! The flatness defect `sup_{u,v∈S} |φ(u) − φ(v) − ∇φ(u)·(u − v)|`, null
//! directions of saddle Hessians, and candidate boxes.

use std::collections::BinaryHeap;

use serde::Serialize;

use crate::error::{Error, Result};
use crate::geometry::{norm, AffineMap2, Parallelogram, Point2, Vec2};
use crate::poly2::BivariatePoly;

/// Relative gap below which a bound is reported as certified.
pub const CERT_GAP: f64 = 0.01;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum DefectMethod {
    ClosedForm,
    TaylorSplit,
    BranchAndBound,
}

#[derive(Clone, Debug, Serialize)]
pub struct FlatnessReport {
    /// Certified upper bound on the defect (exact for closed forms).
    pub defect: f64,
    pub lower: f64,
    pub argmax: [Point2; 2],
    pub certified: bool,
    pub method: DefectMethod,
}

impl FlatnessReport {
    pub fn gap(&self) -> f64 {
        if self.defect <= 0.0 {
            0.0
        } else {
            (self.defect - self.lower) / self.defect
        }
    }
}

/// `sup_{t∈[−1,1]²} |tᵀGt|` and a maximiser.
fn quad_form_sup(g: [[f64; 2]; 2]) -> (f64, [f64; 2]) {
    let q = |t: [f64; 2]| {
        (g[0][0] * t[0] * t[0] + 2.0 * g[0][1] * t[0] * t[1] + g[1][1] * t[1] * t[1]).abs()
    };
    let mut cands = vec![[1.0, 1.0], [1.0, -1.0]];
    for s in [1.0, -1.0] {
        if g[1][1] != 0.0 {
            let t2 = -g[0][1] * s / g[1][1];
            if t2.abs() <= 1.0 {
                cands.push([s, t2]);
            }
        }
        if g[0][0] != 0.0 {
            let t1 = -g[0][1] * s / g[0][0];
            if t1.abs() <= 1.0 {
                cands.push([t1, s]);
            }
        }
    }
    cands
        .into_iter()
        .map(|t| (q(t), t))
        .fold((0.0, [1.0, 1.0]), |a, b| if b.0 > a.0 { b } else { a })
}

/// Local phase `ψ(s) = φ(c + E s)`.
fn local_phase(phi: &BivariatePoly, s: &Parallelogram) -> BivariatePoly {
    phi.compose_affine_unchecked(&AffineMap2::new(s.edge_matrix(), s.center))
}

/// Defect of the quadratic part of a local phase: `2 sup |tᵀ H t| / 2`.
fn quadratic_defect(psi: &BivariatePoly) -> (f64, [f64; 2]) {
    let h = [
        [2.0 * psi.coeff(2, 0), psi.coeff(1, 1)],
        [psi.coeff(1, 1), 2.0 * psi.coeff(0, 2)],
    ];
    let (m, t) = quad_form_sup(h);
    (2.0 * m, t)
}

pub fn flat_defect(phi: &BivariatePoly, s: &Parallelogram) -> Result<FlatnessReport> {
    s.check()?;
    let psi = local_phase(phi, s);
    let (dq, t) = quadratic_defect(&psi);
    let argmax = [s.at(t), s.at([-t[0], -t[1]])];
    if psi.effective_degree() <= 2 {
        return Ok(FlatnessReport {
            defect: dq,
            lower: dq,
            argmax,
            certified: true,
            method: DefectMethod::ClosedForm,
        });
    }
    let mut tail = 0.0;
    for (j, k, c) in psi.terms() {
        if j + k >= 3 {
            tail += c.abs() * (2.0 + 2.0 * (j + k) as f64);
        }
    }
    let upper = dq + tail;
    let lower = (dq - tail).max(0.0);
    if upper <= 1e-300 || (upper - lower) <= CERT_GAP * upper {
        return Ok(FlatnessReport {
            defect: upper,
            lower,
            argmax,
            certified: true,
            method: DefectMethod::TaylorSplit,
        });
    }
    Ok(branch_and_bound(&psi, s, CERT_GAP, 200_000))
}

/// Certified band by branch and bound over `(s, r) ∈ [−1,1]⁴`, stopping at
/// relative gap `rel_gap` or after `budget` cell expansions.
pub fn flat_defect_bnb(
    phi: &BivariatePoly,
    s: &Parallelogram,
    rel_gap: f64,
    budget: usize,
) -> Result<FlatnessReport> {
    s.check()?;
    Ok(branch_and_bound(&local_phase(phi, s), s, rel_gap, budget))
}

pub fn is_flat(phi: &BivariatePoly, s: &Parallelogram, delta: f64, a: f64) -> Result<bool> {
    Ok(flat_defect(phi, s)?.defect <= a * delta)
}

/// Dense polynomial in four variables `(s1, s2, r1, r2)`.
#[derive(Clone)]
struct Poly4 {
    n: usize,
    c: Vec<f64>,
}

impl Poly4 {
    fn zero(deg: usize) -> Self {
        let n = deg + 1;
        Poly4 {
            n,
            c: vec![0.0; n * n * n * n],
        }
    }

    fn at(&self, e: [usize; 4]) -> usize {
        ((e[0] * self.n + e[1]) * self.n + e[2]) * self.n + e[3]
    }

    fn add(&mut self, e: [usize; 4], v: f64) {
        let i = self.at(e);
        self.c[i] += v;
    }

    /// `F(s, r) = ψ(s) − ψ(r) − ∇ψ(s)·(s − r)`.
    fn defect_poly(psi: &BivariatePoly) -> Self {
        let mut f = Poly4::zero(psi.degree());
        for (j, k, v) in psi.terms() {
            f.add([j, k, 0, 0], v);
            f.add([0, 0, j, k], -v);
            if j > 0 {
                f.add([j, k, 0, 0], -(j as f64) * v);
                f.add([j - 1, k, 1, 0], j as f64 * v);
            }
            if k > 0 {
                f.add([j, k, 0, 0], -(k as f64) * v);
                f.add([j, k - 1, 0, 1], k as f64 * v);
            }
        }
        f
    }

    /// Coefficients of `y ↦ F(x0 + y)`.
    fn shifted(&self, x0: [f64; 4]) -> Self {
        let mut out = self.clone();
        let n = self.n;
        let stride = [n * n * n, n * n, n, 1];
        for (var, &x) in x0.iter().enumerate() {
            if x == 0.0 {
                continue;
            }
            let st = stride[var];
            for base in 0..out.c.len() {
                if (base / st) % n != 0 {
                    continue;
                }
                // Taylor shift of the line base + e*st by x (synthetic division).
                for i in 0..n {
                    for e in (i..n - 1).rev() {
                        let hi = out.c[base + (e + 1) * st];
                        out.c[base + e * st] += x * hi;
                    }
                }
            }
        }
        out
    }

    fn bound(&self, h: f64) -> f64 {
        let n = self.n;
        let mut pw = vec![1.0; 4 * n + 1];
        for i in 1..pw.len() {
            pw[i] = pw[i - 1] * h;
        }
        let mut acc = 0.0;
        for (i, c) in self.c.iter().enumerate() {
            if *c == 0.0 {
                continue;
            }
            let deg = i / (n * n * n) + (i / (n * n)) % n + (i / n) % n + i % n;
            acc += c.abs() * pw[deg];
        }
        acc
    }
}

struct Cell {
    upper: f64,
    center: [f64; 4],
    h: f64,
}

impl PartialEq for Cell {
    fn eq(&self, o: &Self) -> bool {
        self.upper == o.upper
    }
}
impl Eq for Cell {}
impl PartialOrd for Cell {
    fn partial_cmp(&self, o: &Self) -> Option<std::cmp::Ordering> {
        Some(self.cmp(o))
    }
}
impl Ord for Cell {
    fn cmp(&self, o: &Self) -> std::cmp::Ordering {
        self.upper.total_cmp(&o.upper)
    }
}

fn branch_and_bound(
    psi: &BivariatePoly,
    s: &Parallelogram,
    rel_gap: f64,
    budget: usize,
) -> FlatnessReport {
    let g1 = psi.d1();
    let g2 = psi.d2();
    let f = |x: [f64; 4]| {
        let (u, v) = ([x[0], x[1]], [x[2], x[3]]);
        psi.eval(u) - psi.eval(v) - g1.eval(u) * (u[0] - v[0]) - g2.eval(u) * (u[1] - v[1])
    };
    let poly = Poly4::defect_poly(psi);
    let mut best = (0.0f64, [0.0; 4]);
    let consider = |x: [f64; 4], best: &mut (f64, [f64; 4])| {
        let v = f(x).abs();
        if v > best.0 {
            *best = (v, x);
        }
    };
    let special = [-1.0, 0.0, 1.0];
    for a in special {
        for b in special {
            for c in special {
                for d in special {
                    consider([a, b, c, d], &mut best);
                }
            }
        }
    }
    let mut heap = BinaryHeap::new();
    let root_upper = poly.bound(1.0);
    heap.push(Cell {
        upper: root_upper,
        center: [0.0; 4],
        h: 1.0,
    });
    let mut expansions = 0;
    let mut upper = root_upper;
    while let Some(cell) = heap.pop() {
        upper = cell.upper;
        if upper <= best.0 || upper - best.0 <= rel_gap * upper || expansions >= budget {
            heap.push(cell);
            break;
        }
        expansions += 1;
        let h = cell.h / 2.0;
        for m in 0..16 {
            let mut c = cell.center;
            for (k, ck) in c.iter_mut().enumerate() {
                *ck += if (m >> k) & 1 == 1 { h } else { -h };
            }
            consider(c, &mut best);
            let mut corner = c;
            for ck in corner.iter_mut() {
                *ck = (*ck + h * ck.signum()).clamp(-1.0, 1.0);
            }
            consider(corner, &mut best);
            let ub = poly.shifted(c).bound(h);
            if ub > best.0 {
                heap.push(Cell {
                    upper: ub,
                    center: c,
                    h,
                });
            }
        }
        if heap.is_empty() {
            upper = best.0;
            break;
        }
    }
    if let Some(top) = heap.peek() {
        upper = upper.max(top.upper).max(best.0);
    }
    let upper = upper.max(best.0);
    let lower = best.0;
    let x = best.1;
    FlatnessReport {
        defect: upper,
        lower,
        argmax: [s.at([x[0], x[1]]), s.at([x[2], x[3]])],
        certified: upper <= 1e-300 || upper - lower <= CERT_GAP * upper,
        method: DefectMethod::BranchAndBound,
    }
}

#[derive(Clone, Copy, Debug, Serialize)]
pub struct NullDirections {
    pub w: Vec2,
    pub v: Vec2,
    pub a: f64,
    pub b: f64,
}

/// `w = (−A, 1)`, `v = (1, −B)` with `A = φ₂₂/(φ₁₂ + √|H|)`, `B = φ₁₁/(φ₁₂ + √|H|)`.
pub fn null_directions(phi: &BivariatePoly, xi: Point2) -> Result<NullDirections> {
    let h = phi.hessian(xi).0;
    let (h11, h12, h22) = (h[0][0], h[0][1], h[1][1]);
    let det = h11 * h22 - h12 * h12;
    if !(det < 0.0) {
        return Err(Error::NotSaddle(xi[0], xi[1]));
    }
    let denom = h12 + (-det).sqrt();
    let scale = h11.abs() + h12.abs() + h22.abs();
    if denom.abs() <= 1e-14 * scale {
        return Err(Error::NotSaddle(xi[0], xi[1]));
    }
    let a = h22 / denom;
    let b = h11 / denom;
    Ok(NullDirections {
        w: [-a, 1.0],
        v: [1.0, -b],
        a,
        b,
    })
}

/// Unit null directions of an indefinite Hessian, valid for every saddle
/// point: the normal-form formula when its denominator is the larger of
/// `φ₁₂ ± √|H|`, the conjugate root otherwise.
pub fn null_pair(phi: &BivariatePoly, xi: Point2) -> Result<(Vec2, Vec2)> {
    let h = phi.hessian(xi).0;
    let (h11, h12, h22) = (h[0][0], h[0][1], h[1][1]);
    let det = h11 * h22 - h12 * h12;
    if !(det < 0.0) {
        return Err(Error::NotSaddle(xi[0], xi[1]));
    }
    let r = (-det).sqrt();
    let denom = if h12 >= 0.0 { h12 + r } else { h12 - r };
    let w = [-h22 / denom, 1.0];
    let v = [1.0, -h11 / denom];
    let unit = |x: Vec2| {
        let n = norm(x);
        [x[0] / n, x[1] / n]
    };
    Ok((unit(w), unit(v)))
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, serde::Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Which {
    W,
    V,
}

/// Rectangle centred at `z`, `δα × α⁻¹`, long side along `w_z` or `v_z`.
pub fn candidate_box(
    phi: &BivariatePoly,
    z: Point2,
    alpha: f64,
    delta: f64,
    which: Which,
) -> Result<Parallelogram> {
    if !(alpha >= 1.0 - 1e-12 && alpha <= delta.powf(-0.5) * (1.0 + 1e-12)) {
        return Err(Error::Input(format!("alpha {alpha} outside [1, delta^-1/2]")));
    }
    let nd = null_directions(phi, z)?;
    let dir = match which {
        Which::W => nd.w,
        Which::V => nd.v,
    };
    Parallelogram::rect_centered(z, dir, 1.0 / alpha, delta * alpha)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn hp() -> BivariatePoly {
        BivariatePoly::hyperbolic()
    }

    #[test]
    fn closed_form_examples() {
        let s = Parallelogram::axis_box(0.1, 0.4, 0.2, 0.25).unwrap();
        let r = flat_defect(&hp(), &s).unwrap();
        assert!((r.defect - 0.3 * 0.05).abs() < 1e-15);
        assert_eq!(r.method, DefectMethod::ClosedForm);
        let delta = 2f64.powi(-10);
        for m in -5..=5 {
            let w = 2f64.powi(m) * delta.sqrt();
            let h = 2f64.powi(-m) * delta.sqrt();
            let s = Parallelogram::axis_box(0.0, w, 0.0, h).unwrap();
            assert_eq!(flat_defect(&hp(), &s).unwrap().defect, delta);
        }
        let aff = BivariatePoly::from_terms(1, &[(0, 0, 1.0), (1, 0, 2.0)]).unwrap();
        assert_eq!(flat_defect(&aff, &s).unwrap().defect, 0.0);
        let sq = Parallelogram::axis_box(0.2, 0.5, 0.1, 0.4).unwrap();
        let r = flat_defect(&BivariatePoly::elliptic(), &sq).unwrap();
        assert!((r.defect - 2.0 * 0.09).abs() < 1e-15);
    }

    #[test]
    fn is_flat_examples() {
        let delta = 2f64.powi(-10);
        let cap = Parallelogram::axis_box(0.0, delta.sqrt(), 0.0, delta.sqrt()).unwrap();
        assert!(is_flat(&hp(), &cap, delta, 2.0).unwrap());
        let strip = Parallelogram::axis_box(0.0, 1.0, 0.0, delta).unwrap();
        assert!(is_flat(&hp(), &strip, delta, 2.0).unwrap());
        assert!(!is_flat(&hp(), &Parallelogram::unit_square(), delta, 2.0).unwrap());
    }

    #[test]
    fn argmax_attains_defect() {
        let s = Parallelogram::new([0.4, 0.6], [0.1, 0.05], [-0.02, 0.2]).unwrap();
        let phi = BivariatePoly::from_terms(2, &[(2, 0, 0.3), (1, 1, 1.0), (0, 2, -2.0)]).unwrap();
        let r = flat_defect(&phi, &s).unwrap();
        let [u, v] = r.argmax;
        let g = phi.gradient(u);
        let val = phi.eval(u) - phi.eval(v) - g[0] * (u[0] - v[0]) - g[1] * (u[1] - v[1]);
        assert!((val.abs() - r.defect).abs() < 1e-12);
    }

    #[test]
    fn bnb_matches_closed_form_on_quadratics() {
        let s = Parallelogram::new([0.3, 0.5], [0.2, 0.01], [0.03, 0.1]).unwrap();
        let phi = BivariatePoly::from_terms(2, &[(2, 0, 0.7), (1, 1, 1.0), (0, 2, -0.4)]).unwrap();
        let exact = flat_defect(&phi, &s).unwrap().defect;
        let b = flat_defect_bnb(&phi, &s, 1e-6, 200_000).unwrap();
        assert!(b.lower <= exact * (1.0 + 1e-12) && b.defect >= exact * (1.0 - 1e-12));
        assert!((b.lower - exact).abs() <= 1e-6 * exact);
    }

    #[test]
    fn cubic_band_certifies() {
        let phi = BivariatePoly::from_terms(3, &[(1, 1, 1.0), (3, 0, 0.5), (1, 2, -0.3)]).unwrap();
        let s = Parallelogram::axis_box(0.2, 0.7, 0.1, 0.3).unwrap();
        let r = flat_defect(&phi, &s).unwrap();
        assert!(r.certified, "{r:?}");
        assert!(r.lower <= r.defect);
        // Brute force cannot beat the certified upper bound.
        let m = 17;
        let mut brute = 0.0f64;
        for a in 0..m {
            for b in 0..m {
                for c in 0..m {
                    for d in 0..m {
                        let t = |i: usize| -1.0 + 2.0 * i as f64 / (m - 1) as f64;
                        let u = s.at([t(a), t(b)]);
                        let v = s.at([t(c), t(d)]);
                        let g = phi.gradient(u);
                        let val = phi.eval(u)
                            - phi.eval(v)
                            - g[0] * (u[0] - v[0])
                            - g[1] * (u[1] - v[1]);
                        brute = brute.max(val.abs());
                    }
                }
            }
        }
        assert!(brute <= r.defect * (1.0 + 1e-12));
        assert!(brute >= r.lower * 0.97, "brute {brute} lower {}", r.lower);
    }

    #[test]
    fn null_direction_examples() {
        let nd = null_directions(&hp(), [0.3, 0.8]).unwrap();
        assert_eq!((nd.a, nd.b), (0.0, 0.0));
        assert_eq!(nd.w, [0.0, 1.0]);
        assert_eq!(nd.v, [1.0, 0.0]);
        assert!(null_directions(&BivariatePoly::elliptic(), [0.5, 0.5]).is_err());
        let neg = hp().scale(-1.0);
        assert!(null_directions(&neg, [0.5, 0.5]).is_err());
        let (w, v) = null_pair(&neg, [0.5, 0.5]).unwrap();
        assert_eq!((w, v), ([0.0, 1.0], [1.0, 0.0]));
    }

    #[test]
    fn candidate_box_examples() {
        let delta = 2f64.powi(-8);
        let b = candidate_box(&hp(), [0.5, 0.5], delta.powf(-0.5), delta, Which::W).unwrap();
        let (l, s) = b.side_lengths();
        assert!((l - delta.sqrt()).abs() < 1e-15 && (s - delta.sqrt()).abs() < 1e-15);
        let b = candidate_box(&hp(), [0.2, 0.9], 1.0, delta, Which::V).unwrap();
        assert_eq!(b.e1, [0.5, 0.0]);
        assert!((b.e2[1] - delta / 2.0).abs() < 1e-18);
        assert!(candidate_box(&hp(), [0.2, 0.9], 0.5, delta, Which::V).is_err());
    }
}
