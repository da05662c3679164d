//! Bivariate polynomial phases `φ(ξ₁, ξ₂) = Σ a_{j,k} ξ₁^j ξ₂^k`.

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};
use crate::geometry::{AffineMap2, Mat2, Point2, Vec2};

fn idx(j: usize, k: usize) -> usize {
    let s = j + k;
    s * (s + 1) / 2 + k
}

fn len_for(d: usize) -> usize {
    (d + 1) * (d + 2) / 2
}

/// Dense triangular coefficient storage for total degree `≤ degree`.
#[derive(Clone, Debug, PartialEq)]
pub struct BivariatePoly {
    degree: usize,
    coeffs: Vec<f64>,
}

impl BivariatePoly {
    pub fn zero(degree: usize) -> Self {
        BivariatePoly {
            degree,
            coeffs: vec![0.0; len_for(degree)],
        }
    }

    pub fn from_terms(degree: usize, terms: &[(usize, usize, f64)]) -> Result<Self> {
        let mut p = BivariatePoly::zero(degree);
        for &(j, k, v) in terms {
            if j + k > degree {
                return Err(Error::Input(format!(
                    "term ({j},{k}) exceeds degree {degree}"
                )));
            }
            if !v.is_finite() {
                return Err(Error::Input(format!("coefficient of ({j},{k}) is not finite")));
            }
            p.coeffs[idx(j, k)] += v;
        }
        Ok(p)
    }

    /// `ξ₁ξ₂`.
    pub fn hyperbolic() -> Self {
        BivariatePoly::from_terms(2, &[(1, 1, 1.0)]).unwrap()
    }

    /// `ξ₁² + ξ₂²`.
    pub fn elliptic() -> Self {
        BivariatePoly::from_terms(2, &[(2, 0, 1.0), (0, 2, 1.0)]).unwrap()
    }

    /// `ξ₁² − ξ₂²`.
    pub fn saddle_diag() -> Self {
        BivariatePoly::from_terms(2, &[(2, 0, 1.0), (0, 2, -1.0)]).unwrap()
    }

    pub fn degree(&self) -> usize {
        self.degree
    }

    pub fn coeff(&self, j: usize, k: usize) -> f64 {
        if j + k > self.degree {
            0.0
        } else {
            self.coeffs[idx(j, k)]
        }
    }

    pub fn set(&mut self, j: usize, k: usize, v: f64) {
        assert!(j + k <= self.degree, "term ({j},{k}) exceeds degree");
        self.coeffs[idx(j, k)] = v;
    }

    /// Nonzero terms `(j, k, a_{j,k})` in graded order.
    pub fn terms(&self) -> Vec<(usize, usize, f64)> {
        let mut out = Vec::new();
        for s in 0..=self.degree {
            for k in 0..=s {
                let v = self.coeffs[idx(s - k, k)];
                if v != 0.0 {
                    out.push((s - k, k, v));
                }
            }
        }
        out
    }

    /// Largest `j + k` with a nonzero coefficient (0 for the zero polynomial).
    pub fn effective_degree(&self) -> usize {
        self.terms().iter().map(|t| t.0 + t.1).max().unwrap_or(0)
    }

    pub fn is_zero(&self) -> bool {
        self.coeffs.iter().all(|&c| c == 0.0)
    }

    pub fn max_abs_coeff(&self) -> f64 {
        self.coeffs.iter().fold(0.0, |m, c| m.max(c.abs()))
    }

    pub fn eval(&self, p: Point2) -> f64 {
        let d = self.degree;
        let mut acc = 0.0;
        for j in (0..=d).rev() {
            let mut inner = 0.0;
            for k in (0..=d - j).rev() {
                inner = inner * p[1] + self.coeffs[idx(j, k)];
            }
            acc = acc * p[0] + inner;
        }
        acc
    }

    /// `∂/∂ξ₁`.
    pub fn d1(&self) -> Self {
        let nd = self.degree.saturating_sub(1);
        let mut out = BivariatePoly::zero(nd);
        for (j, k, v) in self.terms() {
            if j > 0 {
                out.coeffs[idx(j - 1, k)] += v * j as f64;
            }
        }
        out
    }

    /// `∂/∂ξ₂`.
    pub fn d2(&self) -> Self {
        let nd = self.degree.saturating_sub(1);
        let mut out = BivariatePoly::zero(nd);
        for (j, k, v) in self.terms() {
            if k > 0 {
                out.coeffs[idx(j, k - 1)] += v * k as f64;
            }
        }
        out
    }

    pub fn gradient(&self, p: Point2) -> Vec2 {
        [self.d1().eval(p), self.d2().eval(p)]
    }

    /// `(φ₁₁, φ₁₂, φ₂₂)` as polynomials.
    pub fn hessian_polys(&self) -> (Self, Self, Self) {
        let a = self.d1();
        let b = self.d2();
        (a.d1(), a.d2(), b.d2())
    }

    pub fn hessian(&self, p: Point2) -> Mat2 {
        let (h11, h12, h22) = self.hessian_polys();
        let (a, b, c) = (h11.eval(p), h12.eval(p), h22.eval(p));
        Mat2::new(a, b, b, c)
    }

    /// `det H_φ` as a polynomial.
    pub fn hessian_det(&self) -> Self {
        let (h11, h12, h22) = self.hessian_polys();
        h11.mul(&h22).sub(&h12.mul(&h12))
    }

    /// Unit normal `(∂₁φ, ∂₂φ, −1)/|·|`.
    pub fn normal(&self, p: Point2) -> [f64; 3] {
        let g = self.gradient(p);
        let n = (g[0] * g[0] + g[1] * g[1] + 1.0).sqrt();
        [g[0] / n, g[1] / n, -1.0 / n]
    }

    pub fn mul(&self, o: &Self) -> Self {
        let mut out = BivariatePoly::zero(self.degree + o.degree);
        for (j, k, v) in self.terms() {
            for (a, b, w) in o.terms() {
                out.coeffs[idx(j + a, k + b)] += v * w;
            }
        }
        out
    }

    pub fn add(&self, o: &Self) -> Self {
        let mut out = BivariatePoly::zero(self.degree.max(o.degree));
        for (j, k, v) in self.terms().into_iter().chain(o.terms()) {
            out.coeffs[idx(j, k)] += v;
        }
        out
    }

    pub fn sub(&self, o: &Self) -> Self {
        self.add(&o.scale(-1.0))
    }

    pub fn scale(&self, c: f64) -> Self {
        BivariatePoly {
            degree: self.degree,
            coeffs: self.coeffs.iter().map(|v| v * c).collect(),
        }
    }

    /// Drops terms of total degree `< lo` or `> hi`.
    pub fn band(&self, lo: usize, hi: usize) -> Self {
        let mut out = self.clone();
        for s in 0..=self.degree {
            if s < lo || s > hi {
                for k in 0..=s {
                    out.coeffs[idx(s - k, k)] = 0.0;
                }
            }
        }
        out
    }

    /// `φ ∘ L`, exact coefficient expansion.
    pub fn compose_affine(&self, l: &AffineMap2) -> Result<Self> {
        if l.linear.inverse().is_none() {
            return Err(Error::Singular("compose_affine".into()));
        }
        Ok(self.compose_affine_unchecked(l))
    }

    pub(crate) fn compose_affine_unchecked(&self, l: &AffineMap2) -> Self {
        let d = self.degree;
        let m = &l.linear.0;
        let t = l.translation;
        let lin = |row: usize| {
            BivariatePoly::from_terms(1, &[(0, 0, t[row]), (1, 0, m[row][0]), (0, 1, m[row][1])])
                .unwrap()
        };
        let (l1, l2) = (lin(0), lin(1));
        let mut p1 = vec![BivariatePoly::from_terms(0, &[(0, 0, 1.0)]).unwrap()];
        let mut p2 = p1.clone();
        for _ in 0..d {
            p1.push(p1.last().unwrap().mul(&l1));
            p2.push(p2.last().unwrap().mul(&l2));
        }
        let mut out = BivariatePoly::zero(d);
        for (j, k, v) in self.terms() {
            let term = p1[j].mul(&p2[k]);
            for (a, b, w) in term.terms() {
                out.coeffs[idx(a, b)] += v * w;
            }
        }
        out
    }

    /// Coefficients of `h ↦ φ(c + h)`.
    pub fn shifted(&self, c: Point2) -> Self {
        self.compose_affine_unchecked(&AffineMap2::translation(c))
    }

    /// `t ↦ φ(origin + t·dir)`.
    pub fn restrict_line(&self, origin: Point2, dir: Vec2) -> UniPoly {
        let l = AffineMap2::new(Mat2::new(dir[0], 0.0, dir[1], 0.0), origin);
        let q = self.compose_affine_unchecked(&l);
        UniPoly((0..=self.degree).map(|j| q.coeff(j, 0)).collect())
    }

    /// Stable short identifier: hex SHA-256 of the canonical term list.
    pub fn hash_id(&self) -> String {
        let mut h = Sha256::new();
        h.update(format!("d{}", self.degree));
        for (j, k, v) in self.terms() {
            h.update(format!(";{j},{k},{:e}", v));
        }
        hex::encode(&h.finalize()[..8])
    }

    pub fn to_json(&self) -> PhaseFile {
        PhaseFile {
            degree: self.degree,
            coeffs: self
                .terms()
                .into_iter()
                .map(|(j, k, v)| (j, k, v))
                .collect(),
        }
    }

    pub fn from_json_str(s: &str) -> Result<Self> {
        let f: PhaseFile = serde_json::from_str(s)?;
        f.to_poly()
    }
}

/// On-disk phase format `{"degree": d, "coeffs": [[j, k, value], …]}`.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct PhaseFile {
    pub degree: usize,
    pub coeffs: Vec<(usize, usize, f64)>,
}

impl PhaseFile {
    pub fn to_poly(&self) -> Result<BivariatePoly> {
        let mut seen = std::collections::HashSet::new();
        for &(j, k, _) in &self.coeffs {
            if !seen.insert((j, k)) {
                return Err(Error::Input(format!("duplicate term ({j},{k})")));
            }
        }
        BivariatePoly::from_terms(self.degree, &self.coeffs)
    }
}

/// `Σ c_i t^i`.
#[derive(Clone, Debug, PartialEq)]
pub struct UniPoly(pub Vec<f64>);

impl UniPoly {
    pub fn eval(&self, t: f64) -> f64 {
        self.0.iter().rev().fold(0.0, |acc, c| acc * t + c)
    }

    pub fn max_abs_coeff(&self) -> f64 {
        self.0.iter().fold(0.0, |m, c| m.max(c.abs()))
    }
}

/// `(sup_{[0,1]} |ψ|, max |coeff|)`.
pub fn sup_vs_coeff(psi: &UniPoly) -> (f64, f64) {
    let n = 1024;
    let f = |t: f64| psi.eval(t).abs();
    let mut best = (0.0f64, 0.0f64);
    for i in 0..=n {
        let t = i as f64 / n as f64;
        let v = f(t);
        if v > best.1 {
            best = (t, v);
        }
    }
    // Golden-section refinement of the best bracket.
    let h = 1.0 / n as f64;
    let (mut a, mut b) = ((best.0 - h).max(0.0), (best.0 + h).min(1.0));
    let g = (5f64.sqrt() - 1.0) / 2.0;
    for _ in 0..80 {
        let c = b - g * (b - a);
        let d = a + g * (b - a);
        if f(c) >= f(d) {
            b = d;
        } else {
            a = c;
        }
    }
    let sup = best.1.max(f((a + b) / 2.0));
    (sup, psi.max_abs_coeff())
}

/// Dependence classes of a phase.
#[derive(Clone, Debug, PartialEq, Serialize)]
#[serde(tag = "class", rename_all = "kebab-case")]
pub enum DependenceClass {
    Affine,
    /// `φ ∘ witness = ψ(ξ₁) + aξ₂`.
    OneVariable { witness: AffineMap2 },
    TwoVariable,
}

fn near_zero_poly(p: &BivariatePoly, scale: f64) -> bool {
    p.coeffs.iter().all(|c| c.abs() <= 1e-12 * scale)
}

pub fn classify_dependence(phi: &BivariatePoly) -> DependenceClass {
    let scale = phi.coeffs.iter().map(|c| c.abs()).sum::<f64>().max(f64::MIN_POSITIVE);
    if near_zero_poly(&phi.band(2, phi.degree), scale) {
        return DependenceClass::Affine;
    }
    let det = phi.hessian_det();
    if !near_zero_poly(&det, scale * scale) {
        return DependenceClass::TwoVariable;
    }
    // Constant u with H(ξ)u ≡ 0: null vector of the stacked coefficient system.
    let (h11, h12, h22) = phi.hessian_polys();
    let mut g = [[0.0f64; 2]; 2];
    let rows: Vec<(f64, f64)> = h11
        .coeffs
        .iter()
        .zip(&h12.coeffs)
        .map(|(a, b)| (*a, *b))
        .chain(h12.coeffs.iter().zip(&h22.coeffs).map(|(a, b)| (*a, *b)))
        .collect();
    for &(a, b) in &rows {
        g[0][0] += a * a;
        g[0][1] += a * b;
        g[1][1] += b * b;
    }
    g[1][0] = g[0][1];
    let tr = g[0][0] + g[1][1];
    let disc = ((g[0][0] - g[1][1]).powi(2) + 4.0 * g[0][1] * g[0][1]).sqrt();
    let lmin = (tr - disc) / 2.0;
    let u = if g[0][1].abs() > 1e-300 {
        [g[0][1], lmin - g[0][0]]
    } else if g[0][0] <= g[1][1] {
        [1.0, 0.0]
    } else {
        [0.0, 1.0]
    };
    let n = u[0].hypot(u[1]);
    let u = [u[0] / n, u[1] / n];
    // Residual |G u|² computed from the rows; lmin itself is swamped by
    // cancellation.
    let res: f64 = rows.iter().map(|(a, b)| (a * u[0] + b * u[1]).powi(2)).sum();
    if res > 1e-20 * tr.max(f64::MIN_POSITIVE) && res > 1e-24 * scale * scale {
        return DependenceClass::TwoVariable;
    }
    let e = [u[1], -u[0]];
    DependenceClass::OneVariable {
        witness: AffineMap2::linear(Mat2::from_cols(e, u)),
    }
}

/// Searched infimum over lines meeting `[0,1]²` of the largest non-affine
/// coefficient of the restriction of `φ` of degree `≤ d`.
pub fn line_nondegeneracy(phi: &BivariatePoly, d: usize) -> f64 {
    let objective = |swap: bool, a: f64, b: f64| -> f64 {
        let (origin, dir) = if swap {
            ([b, 0.0], [a, 1.0])
        } else {
            ([0.0, b], [1.0, a])
        };
        let r = phi.restrict_line(origin, dir);
        r.0.iter()
            .enumerate()
            .skip(2)
            .take(d.saturating_sub(1))
            .fold(0.0f64, |m, (_, c)| m.max(c.abs()))
    };
    let meets = |a: f64, b: f64| {
        // Line y = a x + b over x ∈ [0,1] meets y ∈ [0,1].
        let y0 = b;
        let y1 = a + b;
        y0.min(y1) <= 1.0 && y0.max(y1) >= 0.0
    };
    let mut starts: Vec<(f64, bool, f64, f64)> = Vec::new();
    for swap in [false, true] {
        for ia in 0..=40 {
            let a = -1.0 + ia as f64 * 0.05;
            for ib in 0..=60 {
                let b = -1.0 + ib as f64 * 0.05;
                if meets(a, b) {
                    starts.push((objective(swap, a, b), swap, a, b));
                }
            }
        }
    }
    starts.sort_by(|x, y| x.0.total_cmp(&y.0));
    let mut best = starts[0].0;
    for &(_, swap, a, b) in starts.iter().take(6) {
        let f = |x: [f64; 2]| {
            if x[0].abs() > 1.0 + 1e-9 || !meets(x[0], x[1]) {
                f64::INFINITY
            } else {
                objective(swap, x[0], x[1])
            }
        };
        best = best.min(nelder_mead(f, [a, b], 0.05));
    }
    if best < 1e-9 {
        0.0
    } else {
        best
    }
}

fn nelder_mead(f: impl Fn([f64; 2]) -> f64, x0: [f64; 2], step: f64) -> f64 {
    let mut s = [x0, [x0[0] + step, x0[1]], [x0[0], x0[1] + step]];
    let mut v = s.map(&f);
    for _ in 0..400 {
        let mut order = [0usize, 1, 2];
        order.sort_by(|&a, &b| v[a].total_cmp(&v[b]));
        s = order.map(|i| s[i]);
        v = order.map(|i| v[i]);
        let size = (s[1][0] - s[0][0]).abs().max((s[1][1] - s[0][1]).abs())
            + (s[2][0] - s[0][0]).abs().max((s[2][1] - s[0][1]).abs());
        if size < 1e-14 || v[0] == 0.0 {
            break;
        }
        let c = [(s[0][0] + s[1][0]) / 2.0, (s[0][1] + s[1][1]) / 2.0];
        let lerp = |t: f64| [c[0] + t * (s[2][0] - c[0]), c[1] + t * (s[2][1] - c[1])];
        let r = lerp(-1.0);
        let fr = f(r);
        if fr < v[0] {
            let e = lerp(-2.0);
            let fe = f(e);
            if fe < fr {
                s[2] = e;
                v[2] = fe;
            } else {
                s[2] = r;
                v[2] = fr;
            }
        } else if fr < v[1] {
            s[2] = r;
            v[2] = fr;
        } else {
            let k = lerp(0.5);
            let fk = f(k);
            if fk < v[2] {
                s[2] = k;
                v[2] = fk;
            } else {
                for i in 1..3 {
                    s[i] = [(s[i][0] + s[0][0]) / 2.0, (s[i][1] + s[0][1]) / 2.0];
                    v[i] = f(s[i]);
                }
            }
        }
    }
    v.iter().cloned().fold(f64::INFINITY, f64::min)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn p(d: usize, t: &[(usize, usize, f64)]) -> BivariatePoly {
        BivariatePoly::from_terms(d, t).unwrap()
    }

    #[test]
    fn eval_examples() {
        assert_eq!(BivariatePoly::hyperbolic().eval([0.5, 0.25]), 0.125);
        assert_eq!(BivariatePoly::zero(3).eval([0.3, 0.7]), 0.0);
        assert_eq!(BivariatePoly::saddle_diag().eval([1.0, 1.0]), 0.0);
    }

    #[test]
    fn hessian_examples() {
        let det = BivariatePoly::hyperbolic().hessian_det();
        assert_eq!(det.terms(), vec![(0, 0, -1.0)]);
        let det = BivariatePoly::elliptic().hessian_det();
        assert_eq!(det.terms(), vec![(0, 0, 4.0)]);
        let det = p(3, &[(2, 1, 1.0)]).hessian_det();
        assert_eq!(det.terms(), vec![(2, 0, -4.0)]);
        assert_eq!(det.eval([1.0, 0.3]), -4.0);
    }

    #[test]
    fn normal_examples() {
        let h = BivariatePoly::hyperbolic();
        assert_eq!(h.normal([0.0, 0.0]), [0.0, 0.0, -1.0]);
        let n = h.normal([1.0, 0.0]);
        let r = 1.0 / 2f64.sqrt();
        assert!((n[0]).abs() < 1e-15 && (n[1] - r).abs() < 1e-15 && (n[2] + r).abs() < 1e-15);
    }

    #[test]
    fn compose_examples() {
        let h = BivariatePoly::hyperbolic();
        assert_eq!(h.compose_affine(&AffineMap2::IDENTITY).unwrap(), h);
        let swap = AffineMap2::linear(Mat2::new(0.0, 1.0, 1.0, 0.0));
        assert_eq!(h.compose_affine(&swap).unwrap(), h);
        let r = 1.0 / 2f64.sqrt();
        let rot = AffineMap2::linear(Mat2::new(r, r, r, -r));
        let q = BivariatePoly::saddle_diag().compose_affine(&rot).unwrap();
        assert!((q.coeff(1, 1) - 2.0).abs() < 1e-15);
        assert!(q.coeff(2, 0).abs() < 1e-15 && q.coeff(0, 2).abs() < 1e-15);
        assert!(h
            .compose_affine(&AffineMap2::linear(Mat2::new(1.0, 1.0, 2.0, 2.0)))
            .is_err());
    }

    #[test]
    fn classify_examples() {
        assert!(matches!(
            classify_dependence(&p(2, &[(2, 0, 1.0)])),
            DependenceClass::OneVariable { .. }
        ));
        assert_eq!(
            classify_dependence(&p(1, &[(0, 0, 0.3), (1, 0, 2.0), (0, 1, -1.0)])),
            DependenceClass::Affine
        );
        assert_eq!(
            classify_dependence(&BivariatePoly::hyperbolic()),
            DependenceClass::TwoVariable
        );
    }

    #[test]
    fn one_variable_witness() {
        // (ξ₁ + 2ξ₂)³ + ξ₂
        let l = p(1, &[(1, 0, 1.0), (0, 1, 2.0)]);
        let phi = l.mul(&l).mul(&l).add(&p(1, &[(0, 1, 1.0)]));
        match classify_dependence(&phi) {
            DependenceClass::OneVariable { witness } => {
                let q = phi.compose_affine(&witness).unwrap();
                for (j, k, v) in q.terms() {
                    if k > 0 {
                        assert!(j == 0 && k == 1 || v.abs() < 1e-12, "({j},{k}) = {v}");
                    }
                }
            }
            other => panic!("{other:?}"),
        }
    }

    #[test]
    fn line_nondegeneracy_examples() {
        assert_eq!(line_nondegeneracy(&BivariatePoly::hyperbolic(), 2), 0.0);
        let c = line_nondegeneracy(&BivariatePoly::elliptic(), 2);
        assert!(c >= 1.0 - 1e-12 && c < 1.0 + 1e-6, "{c}");
        assert_eq!(line_nondegeneracy(&BivariatePoly::saddle_diag(), 2), 0.0);
    }

    #[test]
    fn sup_vs_coeff_examples() {
        assert_eq!(sup_vs_coeff(&UniPoly(vec![0.0, 0.0, 1.0])), (1.0, 1.0));
        let (s, c) = sup_vs_coeff(&UniPoly(vec![0.0, 1.0, -1.0]));
        assert!((s - 0.25).abs() < 1e-12 && c == 1.0);
        assert_eq!(sup_vs_coeff(&UniPoly(vec![0.0])), (0.0, 0.0));
    }

    #[test]
    fn json_rejects_excess_degree() {
        assert!(BivariatePoly::from_json_str(r#"{"degree":2,"coeffs":[[2,1,1.0]]}"#).is_err());
        let q = BivariatePoly::from_json_str(r#"{"degree":2,"coeffs":[[1,1,1.0]]}"#).unwrap();
        assert_eq!(q, BivariatePoly::hyperbolic());
        assert!(BivariatePoly::from_json_str(r#"{"degree":2,"coeffs":[[1,1,1.0],[1,1,2]]}"#)
            .is_err());
    }
}
