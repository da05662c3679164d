//! Frequency lattices `(δℤ × αδℤ) ∩ [0,1]²`, multiplicities of lattice
//! points in flat sets, the `|a + √2 b|` gap, and exact discrete
//! restriction ratios.

use std::collections::HashMap;

use num_complex::Complex64;
use rayon::prelude::*;
use serde::Serialize;

use crate::cover::{build_cover_sparse, CoverKind, FlatCover};
use crate::error::{Error, Result};
use crate::flatness::is_flat;
use crate::geometry::{dilate, dot, norm, sub, tiling, Parallelogram, Point2, Tag};
use crate::poly2::BivariatePoly;

#[derive(Clone, Debug, Serialize)]
pub struct FrequencyLattice {
    pub delta: f64,
    pub alpha: f64,
    /// `(m, n)` with point `(mδ, nαδ)`.
    pub points: Vec<(i64, i64)>,
}

impl FrequencyLattice {
    pub fn point(&self, i: usize) -> Point2 {
        let (m, n) = self.points[i];
        [m as f64 * self.delta, n as f64 * self.alpha * self.delta]
    }

    pub fn coords(&self) -> Vec<Point2> {
        (0..self.points.len()).map(|i| self.point(i)).collect()
    }

    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }

    /// `δ⁻¹` as an integer.
    pub fn inv_delta(&self) -> i64 {
        (1.0 / self.delta).round() as i64
    }
}

pub fn lambda_grid(delta: f64, alpha: f64) -> Result<FrequencyLattice> {
    let inv = 1.0 / delta;
    if !(delta > 0.0 && delta <= 1.0) || (inv - inv.round()).abs() > 1e-9 {
        return Err(Error::Input(format!("1/delta = {inv} is not an integer")));
    }
    if !(alpha > 0.0 && alpha.is_finite()) {
        return Err(Error::Input(format!("alpha = {alpha}")));
    }
    let nm = inv.round() as i64;
    let nn = (inv / alpha + 1e-12).floor() as i64;
    let points = (0..=nm).flat_map(|m| (0..=nn).map(move |n| (m, n))).collect();
    Ok(FrequencyLattice {
        delta,
        alpha,
        points,
    })
}

/// Euclidean distance from `p` to the closed parallelogram `s`.
fn dist_to(s: &Parallelogram, p: Point2) -> f64 {
    if s.contains_closed(p, 0.0) {
        return 0.0;
    }
    let v = s.vertices();
    (0..4)
        .map(|i| {
            let (a, b) = (v[i], v[(i + 1) % 4]);
            let ab = sub(b, a);
            let t = (dot(sub(p, a), ab) / dot(ab, ab)).clamp(0.0, 1.0);
            norm(sub(p, [a[0] + t * ab[0], a[1] + t * ab[1]]))
        })
        .fold(f64::INFINITY, f64::min)
}

fn in_flat_set(s: &Parallelogram, grown: &Parallelogram, p: Point2, tol: f64) -> bool {
    grown.contains_closed(p, 0.0) && dist_to(s, p) <= tol
}

/// `#{ξ ∈ Λ : ξ ∈ dilate(S, 1 + tol), dist(ξ, S) ≤ tol}`. The slab `S × ℝ`
/// is vertical, so the lifted condition is the planar distance.
pub fn points_in_flat_set(lattice: &FrequencyLattice, s: &Parallelogram, tol: f64) -> usize {
    let grown = dilate(s, 1.0 + tol);
    (0..lattice.len())
        .filter(|&i| in_flat_set(s, &grown, lattice.point(i), tol))
        .count()
}

#[derive(Clone, Debug, Serialize)]
pub struct Multiplicity {
    pub max: usize,
    /// `histogram[k]` = number of members holding exactly `k` points.
    pub histogram: Vec<usize>,
    pub members: usize,
}

/// Largest number of lattice points in one member over the cover.
pub fn max_flat_multiplicity(cover: &FlatCover, lattice: &FrequencyLattice, tol: f64) -> Multiplicity {
    let pts = lattice.coords();
    let mut order: Vec<usize> = (0..pts.len()).collect();
    order.sort_by(|&a, &b| pts[a][0].total_cmp(&pts[b][0]));
    let xs: Vec<f64> = order.iter().map(|&i| pts[i][0]).collect();
    let counts: Vec<usize> = cover
        .members
        .par_iter()
        .map(|m| {
            let grown = dilate(m, 1.0 + tol);
            let (lo, hi) = grown.bbox();
            let a = xs.partition_point(|&x| x < lo[0] - tol);
            let b = xs.partition_point(|&x| x <= hi[0] + tol);
            order[a..b]
                .iter()
                .filter(|&&i| {
                    let p = pts[i];
                    p[1] >= lo[1] - tol && p[1] <= hi[1] + tol && in_flat_set(m, &grown, p, tol)
                })
                .count()
        })
        .collect();
    let max = counts.iter().cloned().max().unwrap_or(0);
    let mut histogram = vec![0; max + 1];
    for c in &counts {
        histogram[*c] += 1;
    }
    Multiplicity {
        max,
        histogram,
        members: counts.len(),
    }
}

/// Flat sets at scale `δ^d` holding the lattice points: the sparse saddle
/// tiling for indefinite phases, occupied squares of a uniform dyadic grid
/// otherwise.
pub fn lattice_cover(phi: &BivariatePoly, lattice: &FrequencyLattice, d: u32, a: f64) -> Result<FlatCover> {
    let scale = lattice.delta.powi(d as i32);
    let pts = lattice.coords();
    let saddle = pts.iter().all(|&p| phi.hessian(p).det() < 0.0);
    if saddle {
        let (cover, uncovered) = build_cover_sparse(phi, scale, a, &pts)?;
        if let Some(p) = uncovered.first() {
            return Err(Error::Uncovered(p[0], p[1]));
        }
        return Ok(cover);
    }
    let domain = Parallelogram::unit_square();
    let mut side = scale.sqrt();
    for _ in 0..60 {
        let tl = tiling(side, side, 0.0, &domain)?;
        let mut idx: Vec<(i64, i64)> = pts.iter().map(|&p| tl.index_of(p)).collect();
        idx.sort_unstable();
        idx.dedup();
        let tiles: Vec<Parallelogram> = idx.iter().map(|&(i, j)| tl.tile(i, j)).collect();
        let flat: Result<Vec<bool>> = tiles.par_iter().map(|t| is_flat(phi, t, scale, a)).collect();
        if flat?.into_iter().all(|f| f) {
            let members = tiles
                .into_iter()
                .map(|t| match t.tag {
                    Tag::Tile { i, j, .. } => t.with_tag(Tag::Tile {
                        alpha: 1.0 / side,
                        beta: 0,
                        i,
                        j,
                    }),
                    _ => t,
                })
                .collect();
            return Ok(FlatCover::new(scale, a, phi.hash_id(), CoverKind::Sparse, members));
        }
        side /= 2.0;
    }
    Err(Error::EmptyCover)
}

#[derive(Clone, Debug, Serialize)]
pub struct PellReport {
    /// `min_b |a + √2 b| b^{1+ε′}`.
    pub min_value: f64,
    pub b: u64,
    pub a: i64,
}

/// Nearest integer to `√2 b`, exactly.
pub fn nearest_sqrt2_multiple(b: u64) -> u64 {
    let t = 2 * (b as u128) * (b as u128);
    let mut r = (t as f64).sqrt() as u128;
    while r * r > t {
        r -= 1;
    }
    while (r + 1) * (r + 1) <= t {
        r += 1;
    }
    // r ≤ √t < r+1; choose r+1 iff (2r+1)² < 4t
    if (2 * r + 1) * (2 * r + 1) < 4 * t {
        (r + 1) as u64
    } else {
        r as u64
    }
}

/// `|√2 b − c|` from the exact integer `2b² − c²`.
pub fn sqrt2_gap(b: u64, c: u64) -> f64 {
    let num = 2 * (b as i128) * (b as i128) - (c as i128) * (c as i128);
    (num as f64).abs() / (std::f64::consts::SQRT_2 * b as f64 + c as f64)
}

pub fn pell_gap(b_max: u64, eps: f64) -> Result<PellReport> {
    if b_max == 0 || b_max > 1_000_000 {
        return Err(Error::Input(format!("b_max = {b_max} outside [1, 1e6]")));
    }
    let best = (1..=b_max)
        .into_par_iter()
        .map(|b| {
            let c = nearest_sqrt2_multiple(b);
            (sqrt2_gap(b, c) * (b as f64).powf(1.0 + eps), b, c)
        })
        .reduce(
            || (f64::INFINITY, 0, 0),
            |x, y| if y.0 < x.0 || (y.0 == x.0 && y.1 < x.1) { y } else { x },
        );
    Ok(PellReport {
        min_value: best.0,
        b: best.1,
        a: -(best.2 as i64),
    })
}

/// Best approximations: the `b ≤ b_max` where `|a + √2 b|` reaches a new
/// minimum, as `(b, a, gap)`.
pub fn best_approximations(b_max: u64) -> Vec<(u64, i64, f64)> {
    let mut out = Vec::new();
    let mut best = f64::INFINITY;
    for b in 1..=b_max {
        let c = nearest_sqrt2_multiple(b);
        let g = sqrt2_gap(b, c);
        if g < best {
            best = g;
            out.push((b, -(c as i64), g));
        }
    }
    out
}

#[derive(Clone, Debug, Serialize)]
pub struct RestrictionReport {
    pub ratio: f64,
    /// `‖f‖_{L^p_#}` over one period of the box.
    pub lhs: f64,
    pub l2: f64,
    pub p: f64,
    /// Integer generator replacing `αδ · δ^{-d}` in the second frequency coordinate.
    pub generator: i64,
}

/// Integer coefficients `(q₂₀, q₁₁, q₀₂)` with `φ(mδ, nαδ) = δ²(q₂₀m² + q₁₁mn + q₀₂n²)`.
fn integer_form(phi: &BivariatePoly, alpha: f64) -> Result<[i64; 3]> {
    if phi.effective_degree() > 2 || phi.terms().iter().any(|&(j, k, v)| j + k < 2 && v != 0.0) {
        return Err(Error::Unsupported("exact energies need a quadratic form".into()));
    }
    let raw = [phi.coeff(2, 0), phi.coeff(1, 1) * alpha, phi.coeff(0, 2) * alpha * alpha];
    let mut out = [0i64; 3];
    for (o, r) in out.iter_mut().zip(raw) {
        if (r - r.round()).abs() > 1e-9 {
            return Err(Error::Unsupported(format!(
                "coefficient {r} is not an integer on the lattice"
            )));
        }
        *o = r.round() as i64;
    }
    Ok(out)
}

/// `‖Σ a_ξ e(x·(ξ, φ(ξ)))‖_{L^p_#(B_{δ^{-d}})} / ‖a‖₂` for `p ∈ {2, 4}`, exactly
/// on one period of the torus.
pub fn discrete_restriction_ratio(
    lattice: &FrequencyLattice,
    weights: &[Complex64],
    phi: &BivariatePoly,
    p: f64,
    d: u32,
) -> Result<RestrictionReport> {
    if weights.len() != lattice.len() {
        return Err(Error::Input("one weight per lattice point".into()));
    }
    if p != 2.0 && p != 4.0 {
        return Err(Error::Unsupported(format!("p = {p}; exact torus norms cover p = 2 and p = 4")));
    }
    let q = integer_form(phi, lattice.alpha)?;
    let inv = lattice.inv_delta();
    let r = lattice.delta.powi(-(d as i32));
    let generator = (lattice.alpha * lattice.delta * r).round() as i64;
    if generator == 0 {
        return Err(Error::Aliasing("alpha delta^{1-d} rounds to 0".into()));
    }
    let l2 = weights.iter().map(|w| w.norm_sqr()).sum::<f64>().sqrt();
    // Keys (m, n, form): k1 = m δ^{1-d}, k2 = n g, k3 = form δ^{2-d} are
    // injective linear images, so additive structure is that of the keys.
    let key = |&(m, n): &(i64, i64)| (m, n, q[0] * m * m + q[1] * m * n + q[2] * n * n);
    let keys: Vec<(i64, i64, i64)> = lattice.points.iter().map(key).collect();
    let lhs = if p == 2.0 {
        l2
    } else {
        energy(&keys, weights, inv).powf(0.25)
    };
    Ok(RestrictionReport {
        ratio: lhs / l2,
        lhs,
        l2,
        p,
        generator,
    })
}

/// `Σ_s |Σ_{k+k'=s} a_k a_{k'}|²`, grouped by the first key coordinate sum.
fn energy(keys: &[(i64, i64, i64)], w: &[Complex64], inv: i64) -> f64 {
    let mut by_m: HashMap<i64, Vec<usize>> = HashMap::new();
    for (i, k) in keys.iter().enumerate() {
        by_m.entry(k.0).or_default().push(i);
    }
    let ms: Vec<i64> = {
        let mut v: Vec<i64> = by_m.keys().cloned().collect();
        v.sort_unstable();
        v
    };
    (0..=2 * inv)
        .into_par_iter()
        .map(|s1| {
            let mut sums: HashMap<(i64, i64), Complex64> = HashMap::new();
            for &m in &ms {
                let m2 = s1 - m;
                if m2 < m {
                    continue;
                }
                let (Some(a), Some(b)) = (by_m.get(&m), by_m.get(&m2)) else {
                    continue;
                };
                for &i in a {
                    for &j in b {
                        if m == m2 && j < i {
                            continue;
                        }
                        let mult = if i == j { 1.0 } else { 2.0 };
                        let kk = (keys[i].1 + keys[j].1, keys[i].2 + keys[j].2);
                        *sums.entry(kk).or_default() += w[i] * w[j] * mult;
                    }
                }
            }
            let mut cells: Vec<((i64, i64), Complex64)> = sums.into_iter().collect();
            cells.sort_unstable_by_key(|c| c.0);
            cells.iter().map(|c| c.1.norm_sqr()).sum::<f64>()
        })
        .collect::<Vec<f64>>()
        .iter()
        .sum()
}

/// Ratio of the flat-set multiplicities `max(α = alpha_rat) / max(α = √2)`.
pub fn cross_ratio(phi: &BivariatePoly, delta: f64, d: u32, a: f64) -> Result<f64> {
    let count = |alpha: f64| -> Result<usize> {
        let l = lambda_grid(delta, alpha)?;
        let c = lattice_cover(phi, &l, d, a)?;
        Ok(max_flat_multiplicity(&c, &l, delta.powi(d as i32)).max)
    };
    Ok(count(1.0)? as f64 / count(std::f64::consts::SQRT_2)?.max(1) as f64)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn grid_examples() {
        assert_eq!(lambda_grid(0.25, 1.0).unwrap().len(), 25);
        let l = lambda_grid(0.25, std::f64::consts::SQRT_2).unwrap();
        assert_eq!(l.len(), 15);
        assert!(l.coords().iter().all(|p| p[1] <= 1.0));
        assert!(lambda_grid(0.3, 1.0).is_err());
    }

    #[test]
    fn pell_examples() {
        assert_eq!(nearest_sqrt2_multiple(1), 1);
        assert!((sqrt2_gap(1, 1) - (2f64.sqrt() - 1.0)).abs() < 1e-15);
        assert_eq!(nearest_sqrt2_multiple(5), 7);
        let r = pell_gap(1, 0.0).unwrap();
        assert_eq!((r.b, r.a), (1, -1));
        let bs: Vec<u64> = best_approximations(1000).iter().map(|x| x.0).collect();
        assert_eq!(bs, vec![1, 2, 5, 12, 29, 70, 169, 408, 985]);
    }

    #[test]
    fn counting_basics() {
        let l = lambda_grid(1.0 / 8.0, 1.0).unwrap();
        let far = Parallelogram::axis_box(2.0, 3.0, 2.0, 3.0).unwrap();
        assert_eq!(points_in_flat_set(&l, &far, 1e-9), 0);
        let all = Parallelogram::axis_box(0.0, 1.0, 0.0, 1.0).unwrap();
        assert_eq!(points_in_flat_set(&l, &all, 1e-9), 81);
        let diag = Parallelogram::rect_centered([0.5, 0.5], [1.0, 1.0], 2f64.sqrt(), 1e-6).unwrap();
        assert_eq!(points_in_flat_set(&l, &diag, 1e-9), 9);
    }

    #[test]
    fn restriction_examples() {
        let phi = BivariatePoly::saddle_diag();
        let l = lambda_grid(1.0 / 4.0, 1.0).unwrap();
        let one = FrequencyLattice {
            points: vec![(1, 2)],
            ..l.clone()
        };
        let r = discrete_restriction_ratio(&one, &[Complex64::new(0.3, 0.4)], &phi, 4.0, 3).unwrap();
        assert!((r.ratio - 1.0).abs() < 1e-12);
        let w: Vec<Complex64> = (0..l.len()).map(|i| Complex64::from_polar(1.0, i as f64)).collect();
        let r = discrete_restriction_ratio(&l, &w, &phi, 2.0, 3).unwrap();
        assert!((r.ratio - 1.0).abs() < 1e-12);
    }
}
