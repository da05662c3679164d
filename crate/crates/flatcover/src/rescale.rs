//! Parabolic rescaling of a flat box to the unit scale, coefficient bound
//! audits, and pullback of covers.

use serde::Serialize;

use crate::cover::{CoverKind, FlatCover};
use crate::error::{Error, Result};
use crate::flatness::{flat_defect, is_flat};
use crate::geometry::{cross, norm, scale, sub, AffineMap2, Mat2, Parallelogram, Vec2};
use crate::poly2::BivariatePoly;

#[derive(Clone, Debug)]
pub struct RescaleResult {
    /// Rescaled coordinates to original coordinates.
    pub map: AffineMap2,
    /// Rigid motion taking `[0,α⁻¹]×[0,σα]` onto the box.
    pub rigid: AffineMap2,
    /// Shear putting the quadratic part into the form `ξ₁ξ₂`.
    pub shear: Mat2,
    pub phi: BivariatePoly,
    pub sigma: f64,
    pub alpha: f64,
    /// Image of the box in rescaled coordinates.
    pub domain: Parallelogram,
    /// Pieces per side of the normalization split are `2^split_level`.
    pub split_level: u32,
}

/// Drops the constant and linear terms.
fn strip_affine(p: &BivariatePoly) -> BivariatePoly {
    p.band(2, p.degree())
}

/// Edge selection and rigid motion. Returns `(rigid, long, short)`.
fn rigid_motion(s: &Parallelogram) -> (AffineMap2, f64, f64) {
    let f = [scale(s.e1, 2.0), scale(s.e2, 2.0)];
    let len = [norm(f[0]), norm(f[1])];
    let angle = |v: Vec2| v[1].atan2(v[0]).rem_euclid(std::f64::consts::PI);
    let pick = if (len[0] - len[1]).abs() <= 1e-9 * len[0].max(len[1]) {
        if angle(f[0]) <= angle(f[1]) {
            0
        } else {
            1
        }
    } else if len[0] > len[1] {
        0
    } else {
        1
    };
    let theta = angle(f[pick]);
    let u = [theta.cos(), theta.sin()];
    let mut g = f[1 - pick];
    if cross(u, g) < 0.0 {
        g = scale(g, -1.0);
    }
    let long = len[pick];
    let short = s.area() / long;
    let corner = sub(sub(s.center, scale(u, long / 2.0)), scale(g, 0.5));
    // Unit speed along u, and g normalised to its perpendicular height.
    let lin = Mat2::from_cols(u, scale(g, 1.0 / short));
    (AffineMap2::new(lin, corner), long, short)
}

/// Linear map `Sh` closest to the identity with `q(Sh y) = y₁y₂` for the
/// indefinite form `q(x) = a x₁² + b x₁x₂ + c x₂²`.
pub fn normalizing_shear(a: f64, b: f64, c: f64) -> Result<Mat2> {
    let det = a * c - b * b / 4.0;
    if !(det < 0.0) {
        return Err(Error::Unsupported(format!(
            "quadratic part {a} x1^2 + {b} x1 x2 + {c} x2^2 is not indefinite"
        )));
    }
    // Eigen-decomposition of [[a, b/2], [b/2, c]].
    let tr = a + c;
    let disc = ((a - c) * (a - c) + b * b).sqrt();
    let lp = (tr + disc) / 2.0;
    let lm = (tr - disc) / 2.0;
    let ep = if b.abs() > 1e-300 {
        let v = [b / 2.0, lp - a];
        let n = norm(v);
        [v[0] / n, v[1] / n]
    } else if a > c {
        [1.0, 0.0]
    } else {
        [0.0, 1.0]
    };
    let em = [-ep[1], ep[0]];
    let (sp, sm) = (lp.sqrt(), (-lm).sqrt());
    let p1 = [sp * ep[0] + sm * em[0], sp * ep[1] + sm * em[1]];
    let p2 = [sp * ep[0] - sm * em[0], sp * ep[1] - sm * em[1]];
    let mut best: Option<(f64, Mat2)> = None;
    for (r1, r2) in [(p1, p2), (p2, p1)] {
        for sign in [1.0, -1.0] {
            let r1 = scale(r1, sign);
            let r2 = scale(r2, sign);
            // Inverse of the rows (t r1, r2 / t).
            let dd = r1[0] * r2[1] - r1[1] * r2[0];
            let sh = |lt: f64| {
                let t = lt.exp();
                Mat2::new(r2[1] / (t * dd), -r1[1] * t / dd, -r2[0] / (t * dd), r1[0] * t / dd)
            };
            let cost = |lt: f64| {
                let m = sh(lt).0;
                (m[0][0] - 1.0).powi(2) + m[0][1].powi(2) + m[1][0].powi(2) + (m[1][1] - 1.0).powi(2)
            };
            let mut bt = (f64::INFINITY, 0.0);
            for i in -200..=200 {
                let lt = i as f64 * 0.1;
                let v = cost(lt);
                if v < bt.0 {
                    bt = (v, lt);
                }
            }
            let g = (5f64.sqrt() - 1.0) / 2.0;
            let (mut lo, mut hi) = (bt.1 - 0.1, bt.1 + 0.1);
            for _ in 0..100 {
                let x = hi - g * (hi - lo);
                let y = lo + g * (hi - lo);
                if cost(x) <= cost(y) {
                    hi = y;
                } else {
                    lo = x;
                }
            }
            let lt = (lo + hi) / 2.0;
            let v = cost(lt);
            if best.as_ref().map_or(true, |b| v < b.0) {
                best = Some((v, sh(lt)));
            }
        }
    }
    Ok(best.unwrap().1)
}

/// `φ ∘ L` with the affine part removed, then divided by `sigma`, then
/// sheared to the `ξ₁ξ₂` quadratic part.
fn normalize(p: &BivariatePoly, sigma: f64) -> Result<(BivariatePoly, Mat2)> {
    let q = strip_affine(p).scale(1.0 / sigma);
    let sh = normalizing_shear(q.coeff(2, 0), q.coeff(1, 1), q.coeff(0, 2))?;
    let mut out = q.compose_affine(&AffineMap2::linear(sh))?;
    let scale = q.max_abs_coeff().max(1.0);
    for (j, k) in [(2, 0), (0, 2)] {
        if out.coeff(j, k).abs() <= 1e-12 * scale {
            out.set(j, k, 0.0);
        }
    }
    Ok((out, sh))
}

/// Exponent `s` such that `2^s × 2^s` recentred pieces bring every
/// coefficient of degree ≥ 3 below `10^{-10d}`.
fn split_level(phi: &BivariatePoly, domain: &Parallelogram) -> u32 {
    let d = phi.effective_degree();
    if d < 3 {
        return 0;
    }
    let target = 10f64.powi(-10 * d as i32);
    let rho = domain
        .vertices()
        .iter()
        .map(|v| norm(*v))
        .fold(0.0f64, f64::max);
    let amp = (2.0 * (1.0 + rho)).powi(d as i32);
    let mut s = 0u32;
    for m in 3..=d {
        let mut k = 0.0;
        for (a, b, v) in phi.terms() {
            let n = a + b;
            if n >= m {
                k += v.abs() * binom(n, m) * rho.powi((n - m) as i32);
            }
        }
        if k * amp > target {
            let need = ((k * amp / target).log2() / (m - 2) as f64).ceil();
            s = s.max(need as u32);
        }
    }
    s
}

fn binom(n: usize, k: usize) -> f64 {
    (0..k).fold(1.0, |acc, i| acc * (n - i) as f64 / (i + 1) as f64)
}

/// Rescales `φ` on the `σα × α⁻¹` box `s`, which must be `(φ, Aσ)`-flat.
pub fn rescale_phase(phi: &BivariatePoly, s: &Parallelogram, sigma: f64, a: f64) -> Result<RescaleResult> {
    s.check()?;
    if !(sigma > 0.0 && sigma <= 1.0) {
        return Err(Error::Input(format!("sigma {sigma} outside (0, 1]")));
    }
    let rep = flat_defect(phi, s)?;
    if rep.defect > a * sigma {
        return Err(Error::NotFlat {
            defect: rep.defect,
            bound: a * sigma,
        });
    }
    let (rigid, long, short) = rigid_motion(s);
    let alpha = 1.0 / long;
    let tol = 1e-9;
    if alpha < 1.0 - tol || alpha > (1.0 / sigma) * (1.0 + tol) {
        return Err(Error::Input(format!("alpha {alpha} outside [1, 1/sigma]")));
    }
    if (short - sigma * alpha).abs() > 1e-6 * short {
        return Err(Error::Input(format!(
            "box is {short} x {long}, expected sigma*alpha = {}",
            sigma * alpha
        )));
    }
    let l = Mat2::diag(long, short);
    let to_unit = rigid.compose(&AffineMap2::linear(l));
    let pre = phi.compose_affine(&to_unit)?;
    let (phi_t, shear) = normalize(&pre, sigma)?;
    let map = to_unit.compose(&AffineMap2::linear(shear));
    let inv = map.inverse()?;
    let domain = s.map(&inv);
    let split_level = split_level(&phi_t, &domain);
    Ok(RescaleResult {
        map,
        rigid,
        shear,
        phi: phi_t,
        sigma,
        alpha,
        domain,
        split_level,
    })
}

impl RescaleResult {
    /// Piece `(i, j)` of the normalization split, with its own recentring,
    /// scaling and shear.
    pub fn piece(&self, i: u32, j: u32) -> Result<RescaleResult> {
        let n = 1u32 << self.split_level;
        if i >= n || j >= n {
            return Err(Error::Input(format!("piece ({i}, {j}) outside {n} x {n}")));
        }
        let h = 1.0 / n as f64;
        let sub_box = Parallelogram::new(
            self.domain.at([
                -1.0 + (2.0 * i as f64 + 1.0) * h,
                -1.0 + (2.0 * j as f64 + 1.0) * h,
            ]),
            scale(self.domain.e1, h),
            scale(self.domain.e2, h),
        )?;
        let c = sub_box.center;
        let zoom = AffineMap2::new(Mat2::diag(h, h), c);
        let pre = self.phi.compose_affine(&zoom)?;
        let (phi_t, shear) = normalize(&pre, h * h)?;
        let local = zoom.compose(&AffineMap2::linear(shear));
        let map = self.map.compose(&local);
        let domain = sub_box.map(&local.inverse()?);
        Ok(RescaleResult {
            map,
            rigid: self.rigid,
            shear,
            phi: phi_t,
            sigma: self.sigma * h * h,
            alpha: self.alpha,
            domain,
            split_level: 0,
        })
    }
}

#[derive(Clone, Debug, Serialize)]
pub struct CoeffAudit {
    pub worst_ratio: f64,
    pub worst_term: (usize, usize),
    pub factor: f64,
    pub passed: bool,
}

pub const AUDIT_FACTOR: f64 = 100.0;

/// Checks the coefficients of `φ ∘ rigid` (affine part removed) against
/// `σα^j`, `σ(σα)^{-j}` and `σ^{1-k}α^{j-k}` with constant [`AUDIT_FACTOR`].
pub fn verify_coeff_bounds(result: &RescaleResult, phi: &BivariatePoly) -> Result<CoeffAudit> {
    let b = strip_affine(&phi.compose_affine(&result.rigid)?);
    let (s, a) = (result.sigma, result.alpha);
    let mut worst = (0.0f64, (0, 0));
    for (j, k, v) in b.terms() {
        if j + k < 2 || (j, k) == (1, 1) {
            continue;
        }
        let bound = if k == 0 {
            s * a.powi(j as i32)
        } else if j == 0 {
            s * (s * a).powi(-(k as i32))
        } else {
            s.powi(1 - k as i32) * a.powi(j as i32 - k as i32)
        };
        let r = v.abs() / (AUDIT_FACTOR * bound);
        if r > worst.0 {
            worst = (r, (j, k));
        }
    }
    Ok(CoeffAudit {
        worst_ratio: worst.0,
        worst_term: worst.1,
        factor: AUDIT_FACTOR,
        passed: worst.0 <= 1.0,
    })
}

/// Maps a cover of the rescaled phase back, re-certifying each member at
/// scale `delta` for the original phase.
pub fn pullback_cover(
    cover: &FlatCover,
    result: &RescaleResult,
    phi: &BivariatePoly,
    delta: f64,
    a: f64,
) -> Result<FlatCover> {
    let mut members = Vec::with_capacity(cover.members.len());
    for m in &cover.members {
        let p = m.map(&result.map);
        if !is_flat(phi, &p, delta, a)? {
            return Err(Error::NotFlat {
                defect: flat_defect(phi, &p)?.defect,
                bound: a * delta,
            });
        }
        members.push(p);
    }
    Ok(FlatCover::new(delta, a, phi.hash_id(), CoverKind::Pullback, members))
}
