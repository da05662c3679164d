//! Flat covers: canonical caps, the axis family for `ξ₁ξ₂`, the rotated
//! rectangle cover of perturbed hyperbolic paraboloids, and the recursive
//! cover for general polynomial phases.

use std::collections::{HashMap, HashSet};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::flatness::{flat_defect, is_flat, null_pair};
use crate::geometry::{
    comparable, dot, tiling, Parallelogram, Point2, Tag, Tiling, Vec2,
};
use crate::poly2::BivariatePoly;

pub const SCHEMA_VERSION: u32 = 1;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CoverKind {
    Canonical,
    HpAxis,
    Hp,
    General,
    Sparse,
    Pullback,
    Custom,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct FlatCover {
    pub schema_version: u32,
    pub delta: f64,
    #[serde(rename = "A")]
    pub a: f64,
    pub phase_hash: String,
    pub kind: CoverKind,
    pub members: Vec<Parallelogram>,
}

impl FlatCover {
    pub fn new(delta: f64, a: f64, phase_hash: String, kind: CoverKind, members: Vec<Parallelogram>) -> Self {
        FlatCover {
            schema_version: SCHEMA_VERSION,
            delta,
            a,
            phase_hash,
            kind,
            members,
        }
    }

    pub fn len(&self) -> usize {
        self.members.len()
    }

    pub fn is_empty(&self) -> bool {
        self.members.is_empty()
    }

    pub fn keys(&self) -> HashSet<[i64; 6]> {
        self.members.iter().map(|m| m.geom_key()).collect()
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string(self)?)
    }

    pub fn from_json(s: &str) -> Result<Self> {
        let c: FlatCover = serde_json::from_str(s)?;
        for m in &c.members {
            m.check()?;
        }
        Ok(c)
    }
}

/// `log₂ δ⁻¹` when `δ⁻¹` is a power of two.
pub fn dyadic_exponent(delta: f64) -> Result<u32> {
    let l = (1.0 / delta).log2();
    let r = l.round();
    if !(delta > 0.0 && delta <= 1.0) || (l - r).abs() > 1e-9 {
        return Err(Error::Input(format!("delta {delta} is not 2^-L")));
    }
    Ok(r as u32)
}

fn unit_tiling(w: f64, h: f64, theta: f64) -> Tiling {
    tiling(w, h, theta, &Parallelogram::unit_square()).expect("positive tile size")
}

fn tagged(t: Parallelogram, alpha: f64, beta: i64) -> Parallelogram {
    match t.tag {
        Tag::Tile { i, j, .. } => t.with_tag(Tag::Tile { alpha, beta, i, j }),
        _ => t,
    }
}

/// The `δ^{1/2}`-square partition of `[0,1]²`.
pub fn canonical_caps(delta: f64) -> Result<FlatCover> {
    dyadic_exponent(delta)?;
    let s = delta.sqrt();
    let members = unit_tiling(s, s, 0.0)
        .tiles()
        .map(|t| tagged(t, 1.0 / s, 0))
        .collect();
    Ok(FlatCover::new(delta, 1.0, String::new(), CoverKind::Canonical, members))
}

/// All axis tilings by `2^{-k} × 2^{k-L}` rectangles, `k = 0..=L`.
pub fn hp_axis_family(delta: f64) -> Result<FlatCover> {
    let l = dyadic_exponent(delta)? as i32;
    let mut members = Vec::new();
    for k in 0..=l {
        let w = 2f64.powi(-k);
        let h = 2f64.powi(k - l);
        let alpha = 1.0 / w.max(h);
        for t in unit_tiling(w, h, 0.0).tiles() {
            members.push(tagged(t, alpha, 0));
        }
    }
    Ok(FlatCover::new(delta, 1.0, BivariatePoly::hyperbolic().hash_id(), CoverKind::HpAxis, members))
}

/// Checks the perturbed hyperbolic normal form up to an affine part.
pub fn check_normal_form(phi: &BivariatePoly) -> Result<()> {
    let d = phi.effective_degree().max(2) as i32;
    let bound = 10f64.powi(-10 * d);
    if (phi.coeff(1, 1) - 1.0).abs() > 1e-12 {
        return Err(Error::NotNormalForm(format!(
            "coefficient of xi1 xi2 is {}",
            phi.coeff(1, 1)
        )));
    }
    for (j, k, v) in phi.terms() {
        if j + k >= 2 && (j, k) != (1, 1) && v.abs() > bound {
            return Err(Error::NotNormalForm(format!(
                "|a_{j},{k}| = {v:e} exceeds 1e-{}",
                10 * d
            )));
        }
    }
    Ok(())
}

#[derive(Clone, Copy, Debug, Default)]
pub struct BuildOptions {
    /// 33-point comparability sample instead of 9.
    pub dense_check: bool,
}

/// Shared tiling engine for saddle regions.
struct SaddleSpec<'a> {
    phi: &'a BivariatePoly,
    /// Scale setting tile dimensions `δ_eff α × α⁻¹`.
    delta_eff: f64,
    /// Scale of the flatness requirement.
    delta: f64,
    a: f64,
    dense: bool,
}

fn wrap_half_pi(x: f64) -> f64 {
    let pi = std::f64::consts::PI;
    let mut y = x.rem_euclid(pi);
    if y > pi / 2.0 {
        y -= pi;
    }
    y
}

fn angle_mod_pi(v: Vec2) -> f64 {
    v[1].atan2(v[0]).rem_euclid(std::f64::consts::PI)
}

fn sample_points(t: &Parallelogram, dense: bool) -> Vec<Point2> {
    if !dense {
        let mut v = vec![t.center];
        v.extend(t.vertices());
        v.extend(t.edge_midpoints());
        return v;
    }
    let mut v = vec![t.center];
    let steps: Vec<f64> = (0..8).map(|i| -1.0 + 0.25 * i as f64).collect();
    for &s in &steps {
        v.push(t.at([s, -1.0]));
        v.push(t.at([1.0, s]));
        v.push(t.at([-s, 1.0]));
        v.push(t.at([-1.0, -s]));
    }
    v
}

impl<'a> SaddleSpec<'a> {
    fn alphas(&self) -> Vec<f64> {
        let top = self.delta_eff.powf(-0.5);
        let mut v = Vec::new();
        let mut a = 1.0;
        while a <= top * (1.0 + 1e-12) {
            v.push(a);
            a *= 2.0;
        }
        let last = *v.last().unwrap_or(&1.0);
        if (top - last).abs() > 1e-9 * top && top > 1.0 {
            v.push(top);
        }
        v
    }

    fn step(&self, alpha: f64) -> f64 {
        self.delta_eff * alpha * alpha
    }

    fn beta_count(&self, alpha: f64) -> i64 {
        (std::f64::consts::PI / self.step(alpha)).ceil() as i64
    }

    /// Null-angle intervals of the two directions over a region.
    fn angle_intervals(&self, lo: Point2, hi: Point2) -> Vec<(f64, f64)> {
        let n = 17;
        let mut grid: Vec<Vec<Option<(f64, f64)>>> = vec![vec![None; n]; n];
        for (a, row) in grid.iter_mut().enumerate() {
            for (b, cell) in row.iter_mut().enumerate() {
                let p = [
                    lo[0] + (hi[0] - lo[0]) * a as f64 / (n - 1) as f64,
                    lo[1] + (hi[1] - lo[1]) * b as f64 / (n - 1) as f64,
                ];
                if let Ok((w, v)) = null_pair(self.phi, p) {
                    *cell = Some((angle_mod_pi(w), angle_mod_pi(v)));
                }
            }
        }
        let valid: Vec<(f64, f64)> = grid.iter().flatten().flatten().cloned().collect();
        if valid.is_empty() {
            return Vec::new();
        }
        let mut out = Vec::new();
        for which in 0..2 {
            let pick = |x: (f64, f64)| if which == 0 { x.0 } else { x.1 };
            let r = pick(valid[0]);
            let (mut mn, mut mx) = (0.0f64, 0.0f64);
            for &x in &valid {
                let d = wrap_half_pi(pick(x) - r);
                mn = mn.min(d);
                mx = mx.max(d);
            }
            let mut jump = 0.0f64;
            for a in 0..n {
                for b in 0..n {
                    if let Some(x) = grid[a][b] {
                        for (c, d) in [(a + 1, b), (a, b + 1)] {
                            if c < n && d < n {
                                if let Some(y) = grid[c][d] {
                                    jump = jump.max(wrap_half_pi(pick(x) - pick(y)).abs());
                                }
                            }
                        }
                    }
                }
            }
            out.push((r + mn - jump - 1e-9, r + mx + jump + 1e-9));
        }
        out
    }

    fn beta_candidates(&self, alpha: f64, lo: Point2, hi: Point2) -> Vec<i64> {
        let nb = self.beta_count(alpha);
        let step = self.step(alpha);
        let s0 = 2.0 * self.a * self.delta_eff * alpha * alpha;
        if s0 >= 1.0 {
            return (0..nb).collect();
        }
        let rho = s0.asin() * (1.0 + 1e-9) + 1e-12;
        let pi = std::f64::consts::PI;
        let mut set = std::collections::BTreeSet::new();
        for (l, h) in self.angle_intervals(lo, hi) {
            if h - l + 2.0 * rho >= pi {
                return (0..nb).collect();
            }
            for shift in [-2.0 * pi, -pi, 0.0, pi, 2.0 * pi] {
                let a = ((l - rho + shift) / step).ceil() as i64;
                let b = ((h + rho + shift) / step).floor() as i64;
                for beta in a.max(0)..=b.min(nb - 1) {
                    set.insert(beta);
                }
            }
        }
        set.into_iter().collect()
    }

    fn comparable_along(&self, t: &Parallelogram, pts: &[Point2], dir_ref: Vec2, alpha: f64) -> bool {
        pts.iter().all(|&z| {
            let Ok((w, v)) = null_pair(self.phi, z) else {
                return false;
            };
            let d = if dot(w, dir_ref).abs() >= dot(v, dir_ref).abs() { w } else { v };
            match Parallelogram::rect_centered(z, d, 1.0 / alpha, self.delta_eff * alpha) {
                Ok(b) => comparable(&b, t, self.a),
                Err(_) => false,
            }
        })
    }

    fn accept(&self, t: &Parallelogram, alpha: f64) -> bool {
        let Ok((wc, vc)) = null_pair(self.phi, t.center) else {
            return false;
        };
        let pts = sample_points(t, self.dense);
        let ok = self.comparable_along(t, &pts, wc, alpha) || self.comparable_along(t, &pts, vc, alpha);
        ok && is_flat(self.phi, t, self.delta, self.a).unwrap_or(false)
    }

    /// Accepted tiles of every surviving tiling over `domain`, grouped by
    /// tiling `(alpha, beta)`.
    fn dense(&self, domain: &Parallelogram) -> Vec<(f64, i64, Tiling, Vec<Parallelogram>)> {
        let jobs: Vec<(f64, i64, Tiling)> = self
            .alphas()
            .into_iter()
            .flat_map(|alpha| {
                let (lo, hi) = domain.bbox();
                let pad = 0.5 / alpha + self.delta_eff * alpha;
                let lo = [lo[0] - pad, lo[1] - pad];
                let hi = [hi[0] + pad, hi[1] + pad];
                self.beta_candidates(alpha, lo, hi)
                    .into_iter()
                    .map(move |beta| {
                        let theta = beta as f64 * self.step(alpha);
                        let tl = tiling(1.0 / alpha, self.delta_eff * alpha, theta, domain)
                            .expect("positive tile size");
                        (alpha, beta, tl)
                    })
                    .collect::<Vec<_>>()
            })
            .collect();
        jobs.into_par_iter()
            .map(|(alpha, beta, tl)| {
                let tiles: Vec<Parallelogram> = tl
                    .tiles()
                    .filter(|t| self.accept(t, alpha))
                    .map(|t| tagged(t, alpha, beta))
                    .collect();
                (alpha, beta, tl, tiles)
            })
            .filter(|x| !x.3.is_empty())
            .collect()
    }
}

fn collect_members(groups: &[(f64, i64, Tiling, Vec<Parallelogram>)]) -> Vec<Parallelogram> {
    let mut seen = HashSet::new();
    let mut out = Vec::new();
    for g in groups {
        for t in &g.3 {
            if seen.insert(t.geom_key()) {
                out.push(*t);
            }
        }
    }
    out
}

fn tile_indices(tiles: &[Parallelogram]) -> HashSet<(i64, i64)> {
    tiles
        .iter()
        .filter_map(|t| match t.tag {
            Tag::Tile { i, j, .. } => Some((i, j)),
            _ => None,
        })
        .collect()
}

/// The rotated-rectangle cover for a phase in perturbed hyperbolic normal form.
pub fn build_cover_hp(phi: &BivariatePoly, delta: f64, a: f64) -> Result<FlatCover> {
    build_cover_hp_with(phi, delta, a, BuildOptions::default())
}

pub fn build_cover_hp_with(
    phi: &BivariatePoly,
    delta: f64,
    a: f64,
    opts: BuildOptions,
) -> Result<FlatCover> {
    check_normal_form(phi)?;
    if !(delta > 0.0 && delta < 1.0) || a < 1.0 {
        return Err(Error::Input(format!("delta {delta}, A {a}")));
    }
    let spec = SaddleSpec {
        phi,
        delta_eff: delta,
        delta,
        a,
        dense: opts.dense_check,
    };
    let groups = spec.dense(&Parallelogram::unit_square());
    let members = collect_members(&groups);
    if members.is_empty() {
        return Err(Error::EmptyCover);
    }
    Ok(FlatCover::new(delta, a, phi.hash_id(), CoverKind::Hp, members))
}

/// Saddle tiling restricted to tiles containing at least one of `points`.
/// Returns the cover and the points left uncovered.
pub fn build_cover_sparse(
    phi: &BivariatePoly,
    delta: f64,
    a: f64,
    points: &[Point2],
) -> Result<(FlatCover, Vec<Point2>)> {
    let lambda = points
        .iter()
        .map(|&p| (-phi.hessian(p).det()).max(0.0).sqrt())
        .fold(0.0f64, f64::max);
    if lambda <= 0.0 {
        return Err(Error::Unsupported("sparse cover needs a saddle phase".into()));
    }
    let spec = SaddleSpec {
        phi,
        delta_eff: delta / lambda,
        delta,
        a,
        dense: false,
    };
    let domain = Parallelogram::unit_square();
    let mut jobs = Vec::new();
    for alpha in spec.alphas() {
        let pad = 0.5 / alpha + spec.delta_eff * alpha;
        for beta in spec.beta_candidates(alpha, [-pad, -pad], [1.0 + pad, 1.0 + pad]) {
            let theta = beta as f64 * spec.step(alpha);
            let tl = tiling(1.0 / alpha, spec.delta_eff * alpha, theta, &domain)?;
            jobs.push((alpha, beta, tl));
        }
    }
    let groups: Vec<(f64, i64, Tiling, Vec<Parallelogram>)> = jobs
        .into_par_iter()
        .map(|(alpha, beta, tl)| {
            let mut idx: Vec<(i64, i64)> = points.iter().map(|&p| tl.index_of(p)).collect();
            idx.sort_unstable();
            idx.dedup();
            let tiles = idx
                .into_iter()
                .map(|(i, j)| tl.tile(i, j))
                .filter(|t| spec.accept(t, alpha))
                .map(|t| tagged(t, alpha, beta))
                .collect();
            (alpha, beta, tl, tiles)
        })
        .filter(|g: &(f64, i64, Tiling, Vec<Parallelogram>)| !g.3.is_empty())
        .collect();
    let accepted: Vec<(Tiling, HashSet<(i64, i64)>)> =
        groups.iter().map(|g| (g.2, tile_indices(&g.3))).collect();
    let uncovered = points
        .iter()
        .filter(|&&p| !accepted.iter().any(|(tl, set)| set.contains(&tl.index_of(p))))
        .cloned()
        .collect();
    let members = collect_members(&groups);
    Ok((
        FlatCover::new(delta, a, phi.hash_id(), CoverKind::Sparse, members),
        uncovered,
    ))
}

#[derive(Clone, Debug, Serialize)]
pub struct DichotomyReport {
    pub curved: Vec<Parallelogram>,
    pub flat: Vec<Parallelogram>,
    /// Curved squares where `|det H| > 1/(2M)` could not be certified.
    pub unverified: Vec<Parallelogram>,
}

/// Certified range of `|p|` over the axis square with centre `c` and half-side `r`.
fn abs_range(p: &BivariatePoly, c: Point2, r: f64) -> (f64, f64) {
    let q = p.shifted(c);
    let mut rem = 0.0;
    for (j, k, v) in q.terms() {
        if j + k > 0 {
            rem += v.abs() * r.powi((j + k) as i32);
        }
    }
    let v0 = q.coeff(0, 0).abs();
    ((v0 - rem).max(0.0), v0 + rem)
}

/// Classifies the `M₁⁻¹`-squares of `[0,1]²` by whether they meet
/// `{|det H| > M⁻¹}` (sampled at centre, vertices and a 5×5 interior grid).
pub fn curved_flat_dichotomy(phi: &BivariatePoly, m: f64, m1: usize) -> DichotomyReport {
    let det = phi.hessian_det();
    let side = 1.0 / m1 as f64;
    let cells: Vec<(usize, usize)> = (0..m1).flat_map(|i| (0..m1).map(move |j| (i, j))).collect();
    let classified: Vec<(Parallelogram, bool, bool)> = cells
        .par_iter()
        .map(|&(i, j)| {
            let x0 = i as f64 * side;
            let y0 = j as f64 * side;
            let sq = Parallelogram::axis_box(x0, x0 + side, y0, y0 + side).unwrap();
            let mut curved = false;
            for a in 0..=4 {
                for b in 0..=4 {
                    let p = [x0 + side * a as f64 / 4.0, y0 + side * b as f64 / 4.0];
                    if det.eval(p).abs() > 1.0 / m {
                        curved = true;
                    }
                }
            }
            let verified = !curved || abs_range(&det, sq.center, side / 2.0).0 > 0.5 / m;
            (sq, curved, verified)
        })
        .collect();
    let mut rep = DichotomyReport {
        curved: Vec::new(),
        flat: Vec::new(),
        unverified: Vec::new(),
    };
    for (sq, curved, verified) in classified {
        if curved {
            if !verified {
                rep.unverified.push(sq);
            }
            rep.curved.push(sq);
        } else {
            rep.flat.push(sq);
        }
    }
    rep
}

#[derive(Clone, Copy, Debug)]
pub struct GeneralOptions {
    pub eps: f64,
    pub m: f64,
    pub dense_check: bool,
}

impl Default for GeneralOptions {
    fn default() -> Self {
        GeneralOptions {
            eps: 0.1,
            m: 16.0,
            dense_check: false,
        }
    }
}

struct General<'a> {
    phi: &'a BivariatePoly,
    det: BivariatePoly,
    delta: f64,
    a: f64,
    opts: GeneralOptions,
    max_depth: u32,
}

fn axis_square(x0: f64, y0: f64, s: f64) -> Parallelogram {
    Parallelogram::axis_box(x0, x0 + s, y0, y0 + s).unwrap()
}

fn grid_points(sq: &Parallelogram, n: usize) -> Vec<Point2> {
    let mut v = Vec::with_capacity(n * n);
    for a in 0..n {
        for b in 0..n {
            v.push(sq.at([
                -1.0 + (2.0 * a as f64 + 1.0) / n as f64,
                -1.0 + (2.0 * b as f64 + 1.0) / n as f64,
            ]));
        }
    }
    v
}

impl<'a> General<'a> {
    fn leaf(&self, p: Parallelogram, depth: u32) -> Parallelogram {
        p.with_tag(Tag::Depth { depth })
    }

    fn flat_at(&self, p: &Parallelogram) -> bool {
        flat_defect(self.phi, p)
            .map(|r| r.defect <= self.delta)
            .unwrap_or(false)
    }

    fn square(&self, x0: f64, y0: f64, s: f64, depth: u32) -> Result<Vec<Parallelogram>> {
        let sq = axis_square(x0, y0, s);
        if self.flat_at(&sq) {
            return Ok(vec![self.leaf(sq, depth)]);
        }
        let (lo, hi) = abs_range(&self.det, sq.center, s / 2.0);
        let sign = self.det.eval(sq.center);
        if lo >= 0.5 / self.opts.m {
            let res = if sign < 0.0 {
                self.saddle(&sq, hi, depth)
            } else {
                Some(self.elliptic(x0, y0, s, depth))
            };
            if let Some(v) = res {
                return Ok(v);
            }
        } else if hi <= 1.0 / self.opts.m {
            if let Some(v) = self.strips(&sq, depth) {
                return Ok(v);
            }
        }
        if depth >= self.max_depth {
            return Ok(self.elliptic(x0, y0, s, depth));
        }
        let h = s / 2.0;
        let parts: Vec<Result<Vec<Parallelogram>>> = [(0.0, 0.0), (h, 0.0), (0.0, h), (h, h)]
            .par_iter()
            .map(|&(dx, dy)| self.square(x0 + dx, y0 + dy, h, depth + 1))
            .collect();
        let mut out = Vec::new();
        for p in parts {
            out.extend(p?);
        }
        Ok(out)
    }

    /// Tiles of the saddle engine over `sq`, if they cover it.
    fn saddle(&self, sq: &Parallelogram, det_hi: f64, depth: u32) -> Option<Vec<Parallelogram>> {
        let lambda = det_hi.sqrt();
        let spec = SaddleSpec {
            phi: self.phi,
            delta_eff: (self.delta / lambda).min(0.25),
            delta: self.delta,
            a: self.a,
            dense: self.opts.dense_check,
        };
        let groups = spec.dense(sq);
        let sets: Vec<HashSet<(i64, i64)>> = groups.iter().map(|g| tile_indices(&g.3)).collect();
        let covered = grid_points(sq, 24).into_iter().all(|p| {
            groups
                .iter()
                .zip(&sets)
                .any(|(g, set)| set.contains(&g.2.index_of(p)))
        });
        covered.then(|| {
            collect_members(&groups)
                .into_iter()
                .map(|t| match t.tag {
                    Tag::Tile { .. } => t,
                    _ => self.leaf(t, depth),
                })
                .collect()
        })
    }

    /// Uniform dyadic square partition of `sq` at the coarsest flat level.
    fn elliptic(&self, x0: f64, y0: f64, s: f64, depth: u32) -> Vec<Parallelogram> {
        let mut k = 0;
        loop {
            let n = 1usize << k;
            let side = s / n as f64;
            let squares: Vec<Parallelogram> = (0..n)
                .flat_map(|i| (0..n).map(move |j| (i, j)))
                .map(|(i, j)| axis_square(x0 + i as f64 * side, y0 + j as f64 * side, side))
                .collect();
            if side <= 1e-9 || squares.par_iter().all(|q| self.flat_at(q)) {
                return squares
                    .into_iter()
                    .map(|q| self.leaf(q, depth + k))
                    .collect();
            }
            k += 1;
        }
    }

    /// Rotation making `φ` nearly independent of the second variable, then
    /// greedy maximal strips across `sq`.
    fn strips(&self, sq: &Parallelogram, depth: u32) -> Option<Vec<Parallelogram>> {
        let theta = self.best_rotation(sq);
        let (s, c) = theta.sin_cos();
        let u = [c, s];
        let n = [-s, c];
        let verts = sq.vertices();
        let pu: Vec<f64> = verts.iter().map(|&v| dot(v, u)).collect();
        let pn: Vec<f64> = verts.iter().map(|&v| dot(v, n)).collect();
        let (u0, u1) = (pu.iter().cloned().fold(f64::INFINITY, f64::min), pu.iter().cloned().fold(f64::NEG_INFINITY, f64::max));
        let (n0, n1) = (pn.iter().cloned().fold(f64::INFINITY, f64::min), pn.iter().cloned().fold(f64::NEG_INFINITY, f64::max));
        let strip = |a: f64, b: f64| {
            let center = [
                u[0] * (a + b) / 2.0 + n[0] * (n0 + n1) / 2.0,
                u[1] * (a + b) / 2.0 + n[1] * (n0 + n1) / 2.0,
            ];
            Parallelogram::new(
                center,
                [u[0] * (b - a) / 2.0, u[1] * (b - a) / 2.0],
                [n[0] * (n1 - n0) / 2.0, n[1] * (n1 - n0) / 2.0],
            )
            .ok()
        };
        let width = u1 - u0;
        let min_w = width / 4096.0;
        let mut out = Vec::new();
        let mut a = u0;
        while a < u1 - 1e-15 {
            let fits = |b: f64| strip(a, b).map(|p| self.flat_at(&p)).unwrap_or(false);
            if !fits((a + min_w).min(u1)) {
                return None;
            }
            let b = if fits(u1) {
                u1
            } else {
                let (mut lo, mut hi) = ((a + min_w).min(u1), u1);
                while hi - lo > 1e-13 * width.max(1.0) {
                    let mid = (lo + hi) / 2.0;
                    if fits(mid) {
                        lo = mid;
                    } else {
                        hi = mid;
                    }
                }
                lo
            };
            out.push(self.leaf(strip(a, b)?, depth));
            a = b;
        }
        Some(out)
    }

    fn best_rotation(&self, sq: &Parallelogram) -> f64 {
        let pts = grid_points(sq, 5);
        let cost = |theta: f64| {
            let (s, c) = f64::sin_cos(theta);
            let u = [c, s];
            let n = [-s, c];
            pts.iter()
                .map(|&p| {
                    let h = self.phi.hessian(p);
                    let hn = h.apply(n);
                    dot(n, hn).abs() + dot(u, hn).abs()
                })
                .fold(0.0f64, f64::max)
        };
        let pi = std::f64::consts::PI;
        let k = 64;
        let mut best = (f64::INFINITY, 0.0);
        for i in 0..k {
            let t = pi * i as f64 / k as f64;
            let v = cost(t);
            if v < best.0 {
                best = (v, t);
            }
        }
        let g = (5f64.sqrt() - 1.0) / 2.0;
        let (mut a, mut b) = (best.1 - pi / k as f64, best.1 + pi / k as f64);
        for _ in 0..60 {
            let c = b - g * (b - a);
            let d = a + g * (b - a);
            if cost(c) <= cost(d) {
                b = d;
            } else {
                a = c;
            }
        }
        let t = (a + b) / 2.0;
        if cost(t) <= best.0 {
            t
        } else {
            best.1
        }
    }
}

/// Recursive cover for a general polynomial phase on `[0,1]²`.
pub fn build_cover_general(
    phi: &BivariatePoly,
    delta: f64,
    a: f64,
    opts: GeneralOptions,
) -> Result<FlatCover> {
    if !(delta > 0.0 && delta < 1.0) || a < 1.0 {
        return Err(Error::Input(format!("delta {delta}, A {a}")));
    }
    if phi.terms().iter().any(|t| t.2.abs() > 1.0 + 1e-12) {
        return Err(Error::Input("coefficients must be at most 1 in magnitude".into()));
    }
    let log_m = (1.0 / delta).ln() / opts.m.ln();
    let max_depth = (4.0 * log_m).ceil() as u32 + 8;
    let g = General {
        phi,
        det: phi.hessian_det(),
        delta,
        a,
        opts,
        max_depth,
    };
    let members = g.square(0.0, 0.0, 1.0, 0)?;
    let mut seen = HashSet::new();
    let mut out = Vec::new();
    for m in members {
        if !is_flat(phi, &m, delta, a)? {
            return Err(Error::Recursion(max_depth));
        }
        if seen.insert(m.geom_key()) {
            out.push(m);
        }
    }
    Ok(FlatCover::new(delta, a, phi.hash_id(), CoverKind::General, out))
}

#[derive(Clone, Debug, Serialize, Deserialize, PartialEq)]
pub struct OverlapProfile {
    pub max: u32,
    pub mean: f64,
    pub min: u32,
    /// `histogram[k]` = number of sample points in exactly `k` members.
    pub histogram: Vec<u64>,
}

/// Multiplicity counts at the cell centres of an `n × n` grid on `[0,1]²`.
pub fn overlap_profile(cover: &FlatCover, n: usize) -> Result<OverlapProfile> {
    if n < 64 {
        return Err(Error::Input(format!("grid {n} < 64")));
    }
    let counts = sample_counts(&cover.members, n);
    let max = counts.iter().cloned().max().unwrap_or(0);
    let min = counts.iter().cloned().min().unwrap_or(0);
    let mut histogram = vec![0u64; max as usize + 1];
    for &c in &counts {
        histogram[c as usize] += 1;
    }
    let mean = counts.iter().map(|&c| c as f64).sum::<f64>() / counts.len() as f64;
    Ok(OverlapProfile {
        max,
        mean,
        min,
        histogram,
    })
}

fn sample_counts(members: &[Parallelogram], n: usize) -> Vec<u32> {
    let nf = n as f64;
    members
        .par_chunks(256)
        .fold(
            || vec![0u32; n * n],
            |mut acc, chunk| {
                for m in chunk {
                    let (lo, hi) = m.bbox();
                    let i0 = ((lo[0] * nf - 0.5).floor().max(0.0)) as usize;
                    let i1 = ((hi[0] * nf - 0.5).ceil().min(nf - 1.0)).max(-1.0);
                    let j0 = ((lo[1] * nf - 0.5).floor().max(0.0)) as usize;
                    let j1 = ((hi[1] * nf - 0.5).ceil().min(nf - 1.0)).max(-1.0);
                    if i1 < 0.0 || j1 < 0.0 {
                        continue;
                    }
                    for i in i0..=(i1 as usize) {
                        for j in j0..=(j1 as usize) {
                            let p = [(i as f64 + 0.5) / nf, (j as f64 + 0.5) / nf];
                            if m.contains(p) {
                                acc[i * n + j] += 1;
                            }
                        }
                    }
                }
                acc
            },
        )
        .reduce(
            || vec![0u32; n * n],
            |mut a, b| {
                for (x, y) in a.iter_mut().zip(b) {
                    *x += y;
                }
                a
            },
        )
}

#[derive(Clone, Debug, Serialize)]
pub struct Offender {
    pub index: usize,
    pub defect: f64,
    pub bound: f64,
}

#[derive(Clone, Debug, Serialize)]
pub struct VerifyReport {
    pub schema_version: u32,
    pub all_flat: bool,
    pub covers_domain: bool,
    pub overlap_ok: bool,
    pub overlap_max: u32,
    pub overlap_bound: f64,
    pub uncovered_samples: usize,
    pub worst: Vec<Offender>,
    pub passed: bool,
}

/// Overlap bound used by [`verify_cover`]: `4A log₂δ⁻¹` for tiling covers,
/// `4A δ^{-ε}` times the same logarithm for recursive covers.
pub fn overlap_bound(kind: CoverKind, delta: f64, a: f64, eps: f64) -> f64 {
    let l = (1.0 / delta).log2().max(1.0);
    match kind {
        CoverKind::General => 4.0 * a * l * delta.powf(-eps),
        _ => 4.0 * a * l,
    }
}

pub fn verify_cover(
    cover: &FlatCover,
    phi: &BivariatePoly,
    delta: f64,
    a: f64,
    eps: f64,
    grid: usize,
) -> Result<VerifyReport> {
    let bound = a * delta;
    let defects: Vec<f64> = cover
        .members
        .par_iter()
        .map(|m| flat_defect(phi, m).map(|r| r.defect).unwrap_or(f64::INFINITY))
        .collect();
    let mut worst: Vec<Offender> = defects
        .iter()
        .enumerate()
        .filter(|(_, &d)| d > bound)
        .map(|(index, &defect)| Offender {
            index,
            defect,
            bound,
        })
        .collect();
    let all_flat = worst.is_empty();
    worst.sort_by(|x, y| y.defect.total_cmp(&x.defect));
    worst.truncate(5);
    let prof = overlap_profile(cover, grid)?;
    let uncovered = prof.histogram.first().cloned().unwrap_or(0) as usize;
    let covers_domain = cover.kind == CoverKind::Sparse || uncovered == 0;
    let ob = overlap_bound(cover.kind, delta, a, eps);
    let overlap_ok = prof.max as f64 <= ob;
    Ok(VerifyReport {
        schema_version: SCHEMA_VERSION,
        all_flat,
        covers_domain,
        overlap_ok,
        overlap_max: prof.max,
        overlap_bound: ob,
        uncovered_samples: uncovered,
        worst,
        passed: all_flat && covers_domain && overlap_ok,
    })
}

/// Groups tiling members by `(alpha, beta)` label.
pub fn members_by_tiling(cover: &FlatCover) -> HashMap<(u64, i64), Vec<Parallelogram>> {
    let mut map: HashMap<(u64, i64), Vec<Parallelogram>> = HashMap::new();
    for m in &cover.members {
        if let Tag::Tile { alpha, beta, .. } = m.tag {
            map.entry((alpha.to_bits(), beta)).or_default().push(*m);
        }
    }
    map
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn canonical_examples() {
        assert_eq!(canonical_caps(0.25).unwrap().len(), 4);
        let c = canonical_caps(2f64.powi(-8)).unwrap();
        assert_eq!(c.len(), 256);
        assert_eq!(overlap_profile(&c, 64).unwrap().max, 1);
        let phi = BivariatePoly::hyperbolic();
        assert!(c
            .members
            .iter()
            .all(|m| is_flat(&phi, m, 2f64.powi(-8), 2.0).unwrap()));
        assert!(canonical_caps(0.3).is_err());
    }

    #[test]
    fn axis_family_examples() {
        let d = 2f64.powi(-8);
        let f = hp_axis_family(d).unwrap();
        let p = overlap_profile(&f, 64).unwrap();
        assert_eq!((p.max, p.min), (9, 9));
        let phi = BivariatePoly::hyperbolic();
        assert!(f
            .members
            .iter()
            .all(|m| flat_defect(&phi, m).unwrap().defect == d));
        let strip = Parallelogram::axis_box(0.0, 1.0, 0.0, d).unwrap();
        assert!(f.keys().contains(&strip.geom_key()));
    }

    #[test]
    fn normal_form_check() {
        assert!(check_normal_form(&BivariatePoly::hyperbolic()).is_ok());
        assert!(check_normal_form(&BivariatePoly::saddle_diag()).is_err());
        let p = BivariatePoly::from_terms(3, &[(1, 1, 1.0), (3, 0, 1e-31), (0, 0, 2.0)]).unwrap();
        assert!(check_normal_form(&p).is_ok());
        let p = BivariatePoly::from_terms(3, &[(1, 1, 1.0), (3, 0, 1e-20)]).unwrap();
        assert!(check_normal_form(&p).is_err());
    }

    #[test]
    fn hp_cover_small() {
        let d = 2f64.powi(-8);
        let phi = BivariatePoly::hyperbolic();
        let c = build_cover_hp(&phi, d, 4.0).unwrap();
        let keys = c.keys();
        for m in canonical_caps(d).unwrap().members {
            assert!(keys.contains(&m.geom_key()));
        }
        let axis = hp_axis_family(d).unwrap();
        for m in &axis.members {
            if m.e1[0] >= m.e2[1] {
                assert!(keys.contains(&m.geom_key()), "{m:?}");
            }
        }
        let rep = verify_cover(&c, &phi, d, 4.0, 0.1, 128).unwrap();
        assert!(rep.passed, "{rep:?}");
        assert!(rep.overlap_max as f64 <= 4.0 * 4.0 * 8.0);
    }

    #[test]
    fn dichotomy_examples() {
        let r = curved_flat_dichotomy(&BivariatePoly::hyperbolic(), 2.0, 8);
        assert_eq!((r.curved.len(), r.flat.len()), (64, 0));
        let r = curved_flat_dichotomy(&BivariatePoly::from_terms(2, &[(2, 0, 1.0)]).unwrap(), 4.0, 8);
        assert_eq!((r.curved.len(), r.flat.len()), (0, 64));
    }

    #[test]
    fn general_parabolic_strips() {
        let d = 2f64.powi(-8);
        let phi = BivariatePoly::from_terms(2, &[(2, 0, 1.0)]).unwrap();
        let c = build_cover_general(&phi, d, 16.0, GeneralOptions::default()).unwrap();
        for m in &c.members {
            let (w, h) = m.side_lengths();
            let (w, h) = if (m.e1[1]).abs() < 1e-12 { (w, h) } else { (h, w) };
            assert!((h - 1.0).abs() < 1e-9, "{m:?}");
            assert!(w <= d.sqrt() * (1.0 + 1e-9));
        }
        let full = c.members.iter().filter(|m| (m.side_lengths().0 - d.sqrt()).abs() < 1e-9).count();
        assert!(full >= 15);
    }

    #[test]
    fn verify_detects_failures() {
        let d = 2f64.powi(-8);
        let phi = BivariatePoly::hyperbolic();
        let mut c = canonical_caps(d).unwrap();
        assert!(verify_cover(&c, &phi, d, 2.0, 0.1, 64).unwrap().passed);
        c.members[17] = crate::geometry::dilate(&c.members[17], 3.0);
        assert!(!verify_cover(&c, &phi, d, 2.0, 0.1, 64).unwrap().all_flat);
        let mut c = canonical_caps(d).unwrap();
        c.members.remove(5);
        let r = verify_cover(&c, &phi, d, 2.0, 0.1, 64).unwrap();
        assert!(!r.covers_domain && r.all_flat);
    }
}
