//! Parallelograms, affine maps of the plane, comparability and rotated tilings.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub type Point2 = [f64; 2];
pub type Vec2 = [f64; 2];

/// Half-open tie shift used by [`Parallelogram::contains`].
pub const MEMBERSHIP_EPS: f64 = 1e-12;

pub fn add(a: Vec2, b: Vec2) -> Vec2 {
    [a[0] + b[0], a[1] + b[1]]
}

pub fn sub(a: Vec2, b: Vec2) -> Vec2 {
    [a[0] - b[0], a[1] - b[1]]
}

pub fn scale(a: Vec2, c: f64) -> Vec2 {
    [a[0] * c, a[1] * c]
}

pub fn dot(a: Vec2, b: Vec2) -> f64 {
    a[0] * b[0] + a[1] * b[1]
}

pub fn cross(a: Vec2, b: Vec2) -> f64 {
    a[0] * b[1] - a[1] * b[0]
}

pub fn norm(a: Vec2) -> f64 {
    a[0].hypot(a[1])
}

/// Row-major 2x2 matrix.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Mat2(pub [[f64; 2]; 2]);

impl Mat2 {
    pub const IDENTITY: Mat2 = Mat2([[1.0, 0.0], [0.0, 1.0]]);

    pub fn new(a: f64, b: f64, c: f64, d: f64) -> Self {
        Mat2([[a, b], [c, d]])
    }

    pub fn from_cols(c1: Vec2, c2: Vec2) -> Self {
        Mat2([[c1[0], c2[0]], [c1[1], c2[1]]])
    }

    pub fn diag(a: f64, d: f64) -> Self {
        Mat2::new(a, 0.0, 0.0, d)
    }

    /// Counterclockwise rotation by `theta`.
    pub fn rotation(theta: f64) -> Self {
        let (s, c) = theta.sin_cos();
        Mat2::new(c, -s, s, c)
    }

    pub fn col(&self, j: usize) -> Vec2 {
        [self.0[0][j], self.0[1][j]]
    }

    pub fn det(&self) -> f64 {
        self.0[0][0] * self.0[1][1] - self.0[0][1] * self.0[1][0]
    }

    pub fn transpose(&self) -> Self {
        Mat2::new(self.0[0][0], self.0[1][0], self.0[0][1], self.0[1][1])
    }

    pub fn apply(&self, v: Vec2) -> Vec2 {
        [
            self.0[0][0] * v[0] + self.0[0][1] * v[1],
            self.0[1][0] * v[0] + self.0[1][1] * v[1],
        ]
    }

    pub fn mul(&self, o: &Mat2) -> Mat2 {
        let a = &self.0;
        let b = &o.0;
        Mat2([
            [
                a[0][0] * b[0][0] + a[0][1] * b[1][0],
                a[0][0] * b[0][1] + a[0][1] * b[1][1],
            ],
            [
                a[1][0] * b[0][0] + a[1][1] * b[1][0],
                a[1][0] * b[0][1] + a[1][1] * b[1][1],
            ],
        ])
    }

    pub fn inverse(&self) -> Option<Mat2> {
        let d = self.det();
        let scale = self.0.iter().flatten().fold(0.0f64, |m, x| m.max(x.abs()));
        if d == 0.0 || !d.is_finite() || d.abs() <= 1e-15 * scale * scale {
            return None;
        }
        Some(Mat2::new(
            self.0[1][1] / d,
            -self.0[0][1] / d,
            -self.0[1][0] / d,
            self.0[0][0] / d,
        ))
    }
}

/// `x -> linear * x + translation`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct AffineMap2 {
    pub linear: Mat2,
    pub translation: Vec2,
}

impl AffineMap2 {
    pub const IDENTITY: AffineMap2 = AffineMap2 {
        linear: Mat2::IDENTITY,
        translation: [0.0, 0.0],
    };

    pub fn new(linear: Mat2, translation: Vec2) -> Self {
        AffineMap2 { linear, translation }
    }

    pub fn linear(linear: Mat2) -> Self {
        AffineMap2::new(linear, [0.0, 0.0])
    }

    pub fn translation(t: Vec2) -> Self {
        AffineMap2::new(Mat2::IDENTITY, t)
    }

    pub fn apply(&self, p: Point2) -> Point2 {
        add(self.linear.apply(p), self.translation)
    }

    /// `self ∘ inner`.
    pub fn compose(&self, inner: &AffineMap2) -> AffineMap2 {
        AffineMap2 {
            linear: self.linear.mul(&inner.linear),
            translation: self.apply(inner.translation),
        }
    }

    pub fn inverse(&self) -> Result<AffineMap2> {
        let inv = self
            .linear
            .inverse()
            .ok_or_else(|| Error::Singular("affine map".into()))?;
        Ok(AffineMap2 {
            linear: inv,
            translation: scale(inv.apply(self.translation), -1.0),
        })
    }
}

/// Provenance label carried by a parallelogram.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize, Default)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Tag {
    #[default]
    None,
    /// Tile `(i, j)` of the tiling with parameters `alpha`, `beta`.
    Tile { alpha: f64, beta: i64, i: i64, j: i64 },
    /// Leaf of a recursive construction.
    Depth { depth: u32 },
}

impl Tag {
    fn is_none(&self) -> bool {
        matches!(self, Tag::None)
    }
}

/// `center + s1 e1 + s2 e2`, `s ∈ [-1, 1]²`. The edges are half-extents.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Parallelogram {
    pub center: Point2,
    pub e1: Vec2,
    pub e2: Vec2,
    #[serde(default, skip_serializing_if = "Tag::is_none")]
    pub tag: Tag,
}

impl Parallelogram {
    pub fn new(center: Point2, e1: Vec2, e2: Vec2) -> Result<Self> {
        let p = Parallelogram {
            center,
            e1,
            e2,
            tag: Tag::None,
        };
        p.check()?;
        Ok(p)
    }

    pub fn check(&self) -> Result<()> {
        let all = [self.center, self.e1, self.e2];
        if all.iter().flatten().any(|x| !x.is_finite()) {
            return Err(Error::Degenerate("non-finite parallelogram".into()));
        }
        let d = cross(self.e1, self.e2).abs();
        if d == 0.0 || d <= 1e-14 * norm(self.e1) * norm(self.e2) {
            return Err(Error::Degenerate("parallelogram edges are dependent".into()));
        }
        Ok(())
    }

    /// The axis box `[x0, x1] × [y0, y1]`.
    pub fn axis_box(x0: f64, x1: f64, y0: f64, y1: f64) -> Result<Self> {
        Parallelogram::new(
            [(x0 + x1) / 2.0, (y0 + y1) / 2.0],
            [(x1 - x0) / 2.0, 0.0],
            [0.0, (y1 - y0) / 2.0],
        )
    }

    pub fn unit_square() -> Self {
        Parallelogram {
            center: [0.5, 0.5],
            e1: [0.5, 0.0],
            e2: [0.0, 0.5],
            tag: Tag::None,
        }
    }

    /// Rectangle with lower-left corner `corner`, side `w` along angle `theta`
    /// and side `h` along the perpendicular.
    pub fn rect_from_corner(corner: Point2, w: f64, h: f64, theta: f64) -> Result<Self> {
        let (s, c) = theta.sin_cos();
        let e1 = [c * w / 2.0, s * w / 2.0];
        let e2 = [-s * h / 2.0, c * h / 2.0];
        Parallelogram::new(add(add(corner, e1), e2), e1, e2)
    }

    /// Rectangle centred at `center` with side `long` along the unit vector
    /// `dir` and side `short` across it.
    pub fn rect_centered(center: Point2, dir: Vec2, long: f64, short: f64) -> Result<Self> {
        let n = norm(dir);
        if n == 0.0 || !n.is_finite() {
            return Err(Error::Degenerate("zero direction".into()));
        }
        let u = scale(dir, 1.0 / n);
        let v = [-u[1], u[0]];
        Parallelogram::new(center, scale(u, long / 2.0), scale(v, short / 2.0))
    }

    pub fn with_tag(mut self, tag: Tag) -> Self {
        self.tag = tag;
        self
    }

    /// Columns are `e1`, `e2`.
    pub fn edge_matrix(&self) -> Mat2 {
        Mat2::from_cols(self.e1, self.e2)
    }

    pub fn area(&self) -> f64 {
        4.0 * cross(self.e1, self.e2).abs()
    }

    /// Counterclockwise vertices.
    pub fn vertices(&self) -> [Point2; 4] {
        let c = self.center;
        let (a, b) = (self.e1, self.e2);
        let v = [
            sub(sub(c, a), b),
            sub(add(c, a), b),
            add(add(c, a), b),
            add(sub(c, a), b),
        ];
        if cross(a, b) > 0.0 {
            v
        } else {
            [v[3], v[2], v[1], v[0]]
        }
    }

    /// Edge midpoints, in the order `-e2, +e1, +e2, -e1`.
    pub fn edge_midpoints(&self) -> [Point2; 4] {
        let c = self.center;
        [
            sub(c, self.e2),
            add(c, self.e1),
            add(c, self.e2),
            sub(c, self.e1),
        ]
    }

    /// Coordinates `s` with `p = center + s1 e1 + s2 e2`.
    pub fn local_coords(&self, p: Point2) -> Point2 {
        let d = sub(p, self.center);
        let det = cross(self.e1, self.e2);
        [cross(d, self.e2) / det, cross(self.e1, d) / det]
    }

    pub fn at(&self, s: Point2) -> Point2 {
        add(self.center, add(scale(self.e1, s[0]), scale(self.e2, s[1])))
    }

    /// Half-open membership: lower/left edges in, upper/right edges out.
    pub fn contains(&self, p: Point2) -> bool {
        let s = self.local_coords(p);
        let lo = -1.0 - MEMBERSHIP_EPS;
        let hi = 1.0 - MEMBERSHIP_EPS;
        s[0] >= lo && s[0] < hi && s[1] >= lo && s[1] < hi
    }

    /// Closed membership with slack `tol` in local coordinates.
    pub fn contains_closed(&self, p: Point2, tol: f64) -> bool {
        let s = self.local_coords(p);
        s[0].abs() <= 1.0 + tol && s[1].abs() <= 1.0 + tol
    }

    pub fn map(&self, l: &AffineMap2) -> Parallelogram {
        Parallelogram {
            center: l.apply(self.center),
            e1: l.linear.apply(self.e1),
            e2: l.linear.apply(self.e2),
            tag: self.tag,
        }
    }

    pub fn bbox(&self) -> (Point2, Point2) {
        let hx = self.e1[0].abs() + self.e2[0].abs();
        let hy = self.e1[1].abs() + self.e2[1].abs();
        (
            [self.center[0] - hx, self.center[1] - hy],
            [self.center[0] + hx, self.center[1] + hy],
        )
    }

    /// Lengths of the two edge vectors (full side lengths).
    pub fn side_lengths(&self) -> (f64, f64) {
        (2.0 * norm(self.e1), 2.0 * norm(self.e2))
    }

    /// Hashable geometry key, independent of edge signs and order.
    pub fn geom_key(&self) -> [i64; 6] {
        let canon = |e: Vec2| -> Vec2 {
            if e[0] < -1e-15 || (e[0].abs() <= 1e-15 && e[1] < 0.0) {
                scale(e, -1.0)
            } else {
                e
            }
        };
        let (mut a, mut b) = (canon(self.e1), canon(self.e2));
        if (a[0], a[1]) > (b[0], b[1]) {
            std::mem::swap(&mut a, &mut b);
        }
        let q = |x: f64| (x * 1e11).round() as i64;
        [
            q(self.center[0]),
            q(self.center[1]),
            q(a[0]),
            q(a[1]),
            q(b[0]),
            q(b[1]),
        ]
    }
}

/// Same centre, edges scaled by `c`.
pub fn dilate(s: &Parallelogram, c: f64) -> Parallelogram {
    Parallelogram {
        center: s.center,
        e1: scale(s.e1, c),
        e2: scale(s.e2, c),
        tag: s.tag,
    }
}

fn contained_in(inner: &Parallelogram, outer: &Parallelogram) -> bool {
    inner
        .vertices()
        .iter()
        .all(|v| outer.contains_closed(*v, 1e-12))
}

/// `r1 ⊆ 2A r2` and `r2 ⊆ 2A r1`.
pub fn comparable(r1: &Parallelogram, r2: &Parallelogram, a: f64) -> bool {
    contained_in(r1, &dilate(r2, 2.0 * a)) && contained_in(r2, &dilate(r1, 2.0 * a))
}

/// Projection interval of a parallelogram onto `axis`.
fn project(s: &Parallelogram, axis: Vec2) -> (f64, f64) {
    let c = dot(s.center, axis);
    let r = dot(s.e1, axis).abs() + dot(s.e2, axis).abs();
    (c - r, c + r)
}

/// True when the interiors intersect (separating axis test).
pub fn interiors_intersect(a: &Parallelogram, b: &Parallelogram) -> bool {
    let axes = [
        [-a.e1[1], a.e1[0]],
        [-a.e2[1], a.e2[0]],
        [-b.e1[1], b.e1[0]],
        [-b.e2[1], b.e2[0]],
    ];
    for ax in axes {
        let n = norm(ax);
        let ax = scale(ax, 1.0 / n);
        let (a0, a1) = project(a, ax);
        let (b0, b1) = project(b, ax);
        let tol = 1e-12 * (1.0 + a1.abs().max(b1.abs()));
        if a1 <= b0 + tol || b1 <= a0 + tol {
            return false;
        }
    }
    true
}

/// Tiling of the plane by `w × h` rectangles with long side at angle
/// `theta`, anchored at the domain's lower-left corner, restricted to the
/// tiles meeting the domain interior.
pub fn tile_rotated_rectangles(
    w: f64,
    h: f64,
    theta: f64,
    domain: &Parallelogram,
) -> Result<Vec<Parallelogram>> {
    Ok(tiling(w, h, theta, domain)?.tiles().collect())
}

/// A rotated rectangle lattice; tiles are addressed by integer `(i, j)`.
#[derive(Clone, Copy, Debug)]
pub struct Tiling {
    pub w: f64,
    pub h: f64,
    pub theta: f64,
    pub anchor: Point2,
    pub u: Vec2,
    pub n: Vec2,
    pub domain: Parallelogram,
    pub i_range: (i64, i64),
    pub j_range: (i64, i64),
}

pub fn tiling(w: f64, h: f64, theta: f64, domain: &Parallelogram) -> Result<Tiling> {
    if !(w > 0.0 && h > 0.0 && w.is_finite() && h.is_finite()) {
        return Err(Error::Degenerate(format!("tile size {w} x {h}")));
    }
    domain.check()?;
    let (s, c) = theta.sin_cos();
    let u = [c, s];
    let n = [-s, c];
    let anchor = sub(sub(domain.center, domain.e1), domain.e2);
    let (pu0, pu1) = project(domain, u);
    let (pn0, pn1) = project(domain, n);
    let au = dot(anchor, u);
    let an = dot(anchor, n);
    let i_range = (
        ((pu0 - au) / w).floor() as i64 - 1,
        ((pu1 - au) / w).ceil() as i64 + 1,
    );
    let j_range = (
        ((pn0 - an) / h).floor() as i64 - 1,
        ((pn1 - an) / h).ceil() as i64 + 1,
    );
    Ok(Tiling {
        w,
        h,
        theta,
        anchor,
        u,
        n,
        domain: *domain,
        i_range,
        j_range,
    })
}

impl Tiling {
    pub fn tile(&self, i: i64, j: i64) -> Parallelogram {
        let corner = add(
            self.anchor,
            add(scale(self.u, i as f64 * self.w), scale(self.n, j as f64 * self.h)),
        );
        let e1 = scale(self.u, self.w / 2.0);
        let e2 = scale(self.n, self.h / 2.0);
        Parallelogram {
            center: add(add(corner, e1), e2),
            e1,
            e2,
            tag: Tag::Tile {
                alpha: 0.0,
                beta: 0,
                i,
                j,
            },
        }
    }

    /// Index of the tile containing `p` (half-open lower/left convention).
    pub fn index_of(&self, p: Point2) -> (i64, i64) {
        let d = sub(p, self.anchor);
        let a = dot(d, self.u) / self.w + MEMBERSHIP_EPS;
        let b = dot(d, self.n) / self.h + MEMBERSHIP_EPS;
        (a.floor() as i64, b.floor() as i64)
    }

    /// Tiles whose interior meets the domain interior.
    pub fn tiles(&self) -> impl Iterator<Item = Parallelogram> + '_ {
        let axis_aligned = self.domain.e1[1] == 0.0
            && self.domain.e2[0] == 0.0
            && self.theta == 0.0;
        // The anchor is a domain point; its tile may only touch the domain.
        let anchor_tile = self.index_of(self.anchor);
        (self.j_range.0..self.j_range.1).flat_map(move |j| {
            (self.i_range.0..self.i_range.1).filter_map(move |i| {
                let t = self.tile(i, j);
                let keep = if axis_aligned {
                    let (lo, hi) = t.bbox();
                    let (dlo, dhi) = self.domain.bbox();
                    let tol = 1e-12;
                    lo[0] < dhi[0] - tol
                        && hi[0] > dlo[0] + tol
                        && lo[1] < dhi[1] - tol
                        && hi[1] > dlo[1] + tol
                } else {
                    interiors_intersect(&t, &self.domain)
                } || (i, j) == anchor_tile;
                keep.then_some(t)
            })
        })
    }
}

pub fn point_membership(s: &Parallelogram, p: Point2) -> bool {
    s.contains(p)
}

fn polygon_area(poly: &[Point2]) -> f64 {
    let n = poly.len();
    if n < 3 {
        return 0.0;
    }
    let mut acc = 0.0;
    for i in 0..n {
        acc += cross(poly[i], poly[(i + 1) % n]);
    }
    acc.abs() / 2.0
}

/// Area of `s1 ∩ s2` by Sutherland-Hodgman clipping.
pub fn intersection_area(s1: &Parallelogram, s2: &Parallelogram) -> f64 {
    let mut poly: Vec<Point2> = s1.vertices().to_vec();
    let clip = s2.vertices();
    for k in 0..4 {
        let a = clip[k];
        let b = clip[(k + 1) % 4];
        let edge = sub(b, a);
        let inside = |p: Point2| cross(edge, sub(p, a)) >= 0.0;
        let mut out = Vec::with_capacity(poly.len() + 2);
        for i in 0..poly.len() {
            let cur = poly[i];
            let prev = poly[(i + poly.len() - 1) % poly.len()];
            let (ci, pi) = (inside(cur), inside(prev));
            if ci != pi {
                let d = sub(cur, prev);
                let denom = cross(edge, d);
                if denom != 0.0 {
                    let t = cross(edge, sub(a, prev)) / denom;
                    out.push(add(prev, scale(d, t)));
                }
            }
            if ci {
                out.push(cur);
            }
        }
        poly = out;
        if poly.is_empty() {
            return 0.0;
        }
    }
    polygon_area(&poly)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn unit() -> Parallelogram {
        Parallelogram::unit_square()
    }

    #[test]
    fn dilate_examples() {
        let s = unit();
        assert_eq!(dilate(&s, 1.0), s);
        let d = dilate(&s, 2.0);
        assert_eq!(d.center, s.center);
        assert!((d.area() - 4.0).abs() < 1e-15);
    }

    #[test]
    fn comparable_examples() {
        let s = unit();
        assert!(comparable(&s, &s, 1.0));
        let a = 3.0;
        let far = s.map(&AffineMap2::translation([10.0 * a, 0.0]));
        assert!(!comparable(&s, &far, a));
    }

    #[test]
    fn tiling_examples() {
        let d = unit();
        assert_eq!(tile_rotated_rectangles(0.5, 0.5, 0.0, &d).unwrap().len(), 4);
        let strips = tile_rotated_rectangles(1.0, 0.25, 0.0, &d).unwrap();
        assert_eq!(strips.len(), 4);
        assert!(strips.iter().all(|t| (t.e1[0] - 0.5).abs() < 1e-15));
    }

    #[test]
    fn rotated_tiling_partitions_samples() {
        let d = unit();
        let tiles = tile_rotated_rectangles(0.3, 0.07, 0.7, &d).unwrap();
        for a in 0..40 {
            for b in 0..40 {
                let p = [(a as f64 + 0.37) / 40.0, (b as f64 + 0.61) / 40.0];
                let n = tiles.iter().filter(|t| t.contains(p)).count();
                assert_eq!(n, 1, "{p:?}");
            }
        }
    }

    #[test]
    fn domain_corner_is_covered_under_rotation() {
        let d = unit();
        for theta in [0.0, 1e-3, 0.5, 1.0, 2.0, 3.0] {
            let tiles = tile_rotated_rectangles(0.25, 0.125, theta, &d).unwrap();
            for p in [[0.0, 0.0], [0.5, 0.0], [0.0, 0.5]] {
                let n = tiles.iter().filter(|t| t.contains(p)).count();
                assert_eq!(n, 1, "theta {theta} point {p:?}");
            }
        }
    }

    #[test]
    fn index_of_matches_membership() {
        let d = unit();
        let t = tiling(0.3, 0.11, 0.4, &d).unwrap();
        for k in 0..200 {
            let p = [(k as f64 * 0.618) % 1.0, (k as f64 * 0.377) % 1.0];
            let (i, j) = t.index_of(p);
            assert!(t.tile(i, j).contains(p));
        }
    }

    #[test]
    fn intersection_examples() {
        let s = unit();
        assert!((intersection_area(&s, &s) - 1.0).abs() < 1e-14);
        let far = s.map(&AffineMap2::translation([3.0, 0.0]));
        assert_eq!(intersection_area(&s, &far), 0.0);
        let half = s.map(&AffineMap2::translation([0.5, 0.0]));
        assert!((intersection_area(&s, &half) - 0.5).abs() < 1e-14);
    }

    #[test]
    fn membership_half_open() {
        let s = unit();
        assert!(point_membership(&s, [0.0, 0.0]));
        assert!(!point_membership(&s, [1.0, 0.5]));
        assert!(!point_membership(&s, [0.5, 1.0]));
    }

    #[test]
    fn json_shape() {
        let s = unit();
        let v: serde_json::Value = serde_json::to_value(s).unwrap();
        assert_eq!(v["center"], serde_json::json!([0.5, 0.5]));
        assert!(v.get("tag").is_none());
        let back: Parallelogram =
            serde_json::from_str(r#"{"center":[0,0],"e1":[1,0],"e2":[0,2]}"#).unwrap();
        assert_eq!(back.e2, [0.0, 2.0]);
    }

    #[test]
    fn affine_inverse_roundtrip() {
        let l = AffineMap2::new(Mat2::new(2.0, 1.0, -0.5, 3.0), [0.2, -1.0]);
        let inv = l.inverse().unwrap();
        let p = [0.3, 0.9];
        let q = inv.apply(l.apply(p));
        assert!((q[0] - p[0]).abs() < 1e-14 && (q[1] - p[1]).abs() < 1e-14);
        assert!(AffineMap2::linear(Mat2::new(1.0, 2.0, 2.0, 4.0)).inverse().is_err());
    }
}
