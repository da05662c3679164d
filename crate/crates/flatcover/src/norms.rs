//! Exponential sums over lifted frequencies, `L^p_#` norms on boxes,
//! decoupling ratios, slope fits and the Stein–Tomas check.
//!
//! Norms are evaluated by the first applicable strategy: a single
//! frequency, a one-dimensional progression, a product of one-dimensional
//! sums, a slab of two-dimensional torus transforms, or direct sampling.

use std::collections::HashMap;
use std::sync::{Arc, Mutex};

use num_complex::Complex64;
use rayon::prelude::*;
use rustfft::{Fft, FftPlanner};
use serde::Serialize;

use crate::cover::FlatCover;
use crate::error::{Error, Result};
use crate::geometry::{Parallelogram, Point2};
use crate::poly2::BivariatePoly;

const TAU: f64 = std::f64::consts::TAU;

fn e(t: f64) -> Complex64 {
    Complex64::from_polar(1.0, TAU * t)
}

#[derive(Clone, Debug)]
pub struct ExpSum {
    pub phase: BivariatePoly,
    pub phase_id: String,
    pub freqs: Vec<Point2>,
    pub weights: Vec<Complex64>,
}

impl ExpSum {
    pub fn new(phase: BivariatePoly, freqs: Vec<Point2>, weights: Vec<Complex64>) -> Result<Self> {
        if freqs.len() != weights.len() {
            return Err(Error::Input("frequency and weight counts differ".into()));
        }
        if freqs.iter().flatten().any(|x| !x.is_finite())
            || weights.iter().any(|w| !w.re.is_finite() || !w.im.is_finite())
        {
            return Err(Error::Input("non-finite frequency or weight".into()));
        }
        let mut keys: Vec<(u64, u64)> = freqs.iter().map(|f| (f[0].to_bits(), f[1].to_bits())).collect();
        keys.sort_unstable();
        if keys.windows(2).any(|w| w[0] == w[1]) {
            return Err(Error::Input("duplicate frequency".into()));
        }
        let phase_id = phase.hash_id();
        Ok(ExpSum {
            phase,
            phase_id,
            freqs,
            weights,
        })
    }

    pub fn unit(phase: BivariatePoly, freqs: Vec<Point2>) -> Result<Self> {
        let w = vec![Complex64::new(1.0, 0.0); freqs.len()];
        ExpSum::new(phase, freqs, w)
    }

    pub fn len(&self) -> usize {
        self.freqs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.freqs.is_empty()
    }

    pub fn lifted(&self, i: usize) -> [f64; 3] {
        let f = self.freqs[i];
        [f[0], f[1], self.phase.eval(f)]
    }

    pub fn eval(&self, x: [f64; 3]) -> Complex64 {
        (0..self.len())
            .map(|i| {
                let l = self.lifted(i);
                self.weights[i] * e(x[0] * l[0] + x[1] * l[1] + x[2] * l[2])
            })
            .sum()
    }

    pub fn restrict(&self, idx: &[usize]) -> ExpSum {
        ExpSum {
            phase: self.phase.clone(),
            phase_id: self.phase_id.clone(),
            freqs: idx.iter().map(|&i| self.freqs[i]).collect(),
            weights: idx.iter().map(|&i| self.weights[i]).collect(),
        }
    }

    pub fn l2_weights(&self) -> f64 {
        self.weights.iter().map(|w| w.norm_sqr()).sum::<f64>().sqrt()
    }

    pub fn modulated(&self, c: Complex64) -> ExpSum {
        let mut out = self.clone();
        for w in &mut out.weights {
            *w *= c;
        }
        out
    }
}

/// Axis cube `center + [−side/2, side/2]³` in physical space.
#[derive(Clone, Copy, Debug, Serialize)]
pub struct PhysBox {
    pub center: [f64; 3],
    pub side: f64,
}

impl PhysBox {
    /// The centred box of side `R`.
    pub fn centered(side: f64) -> Self {
        PhysBox {
            center: [0.0; 3],
            side,
        }
    }

    fn lo(&self, i: usize) -> f64 {
        self.center[i] - self.side / 2.0
    }
}

#[derive(Clone, Debug)]
pub struct GridField {
    pub bx: PhysBox,
    pub n: usize,
    /// Values at cell centres, index `(i * n + j) * n + k`.
    pub values: Vec<Complex64>,
}

/// Direct evaluation at the `n³` cell centres.
pub fn sample_exp_sum(f: &ExpSum, bx: PhysBox, n: usize) -> Result<GridField> {
    let mut max = 0.0f64;
    for i in 0..f.len() {
        for c in f.lifted(i) {
            max = max.max(c.abs());
        }
    }
    let need = 2.0 * bx.side * max;
    if (n as f64) < need {
        return Err(Error::Aliasing(format!("n = {n} below Nyquist margin {need:.1}")));
    }
    let h = bx.side / n as f64;
    let coord = |ax: usize, i: usize| bx.lo(ax) + (i as f64 + 0.5) * h;
    let lifted: Vec<[f64; 3]> = (0..f.len()).map(|i| f.lifted(i)).collect();
    let values = (0..n * n)
        .into_par_iter()
        .flat_map_iter(|ij| {
            let (i, j) = (ij / n, ij % n);
            let lifted = &lifted;
            (0..n).map(move |k| {
                let x = [coord(0, i), coord(1, j), coord(2, k)];
                lifted
                    .iter()
                    .zip(&f.weights)
                    .map(|(l, w)| w * e(x[0] * l[0] + x[1] * l[1] + x[2] * l[2]))
                    .sum::<Complex64>()
            })
        })
        .collect();
    Ok(GridField { bx, n, values })
}

/// Riemann-sum norm of a sampled field; `p = ∞` gives the maximum.
pub fn lp_norm(field: &GridField, p: f64, normalized: bool) -> Result<f64> {
    if !(p >= 1.0) {
        return Err(Error::Input(format!("p = {p} < 1")));
    }
    if p.is_infinite() {
        return Ok(field.values.iter().map(|v| v.norm()).fold(0.0, f64::max));
    }
    let s: f64 = field
        .values
        .par_chunks(4096)
        .map(|c| c.iter().map(|v| v.norm().powf(p)).sum::<f64>())
        .collect::<Vec<f64>>()
        .iter()
        .sum();
    let cell = (field.bx.side / field.n as f64).powi(3);
    let total = s * cell;
    let vol = field.bx.side.powi(3);
    Ok(if normalized { total / vol } else { total }.powf(1.0 / p))
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum NormMethod {
    Empty,
    Single,
    Progression,
    Product,
    Slab,
    Direct,
}

/// Integer coefficients of a 1D progression `x_i = min x + k_i b`.
#[derive(Clone, Debug)]
struct Progression {
    step: f64,
    ks: Vec<i64>,
}

fn progression_1d(xs: &[f64]) -> Option<Progression> {
    let mut s: Vec<f64> = xs.to_vec();
    s.sort_by(f64::total_cmp);
    let origin = s[0];
    if s.len() == 1 {
        return Some(Progression {
            step: 0.0,
            ks: vec![0],
        });
    }
    let span = s[s.len() - 1] - origin;
    let step = s
        .windows(2)
        .map(|w| w[1] - w[0])
        .filter(|&d| d > 1e-12 * span.max(1e-300))
        .fold(f64::INFINITY, f64::min);
    if !step.is_finite() {
        return None;
    }
    let mut ks = Vec::with_capacity(xs.len());
    for &x in xs {
        let t = (x - origin) / step;
        let k = t.round();
        if (t - k).abs() > 1e-7 {
            return None;
        }
        ks.push(k as i64);
    }
    Some(Progression { step, ks })
}

/// `|P(s)|^p` statistics for `P(s) = Σ c_k e(k s)`, `k ≥ 0`.
struct LineSum<'a> {
    ks: &'a [i64],
    span: usize,
    p: f64,
}

impl<'a> LineSum<'a> {
    fn new(ks: &'a [i64], p: f64) -> Self {
        let span = ks.iter().cloned().max().unwrap_or(0) as usize;
        LineSum { ks, span, p }
    }

    fn torus_size(&self) -> usize {
        let p = self.p;
        if p.is_finite() && p.fract() == 0.0 && (p as i64) % 2 == 0 {
            (p as usize / 2) * self.span + 1
        } else {
            16 * (self.span + 1) * (p.min(16.0).ceil() as usize / 2 + 1)
        }
    }

    fn stat(&self, vals: impl Iterator<Item = f64>) -> (f64, usize) {
        if self.p.is_infinite() {
            (vals.fold(0.0, f64::max), 1)
        } else {
            let mut n = 0;
            let s = vals
                .map(|v| {
                    n += 1;
                    v.powf(self.p)
                })
                .sum();
            (s, n)
        }
    }

    /// Mean (or max) of `|P|^p` over one period.
    fn torus(&self, c: &[Complex64], fft: &dyn Fft<f64>, buf: &mut Vec<Complex64>) -> f64 {
        let m = fft.len();
        buf.clear();
        buf.resize(m, Complex64::new(0.0, 0.0));
        for (&k, &v) in self.ks.iter().zip(c) {
            buf[k as usize % m] += v;
        }
        fft.process(buf);
        let (s, n) = self.stat(buf.iter().map(|v| v.norm()));
        if self.p.is_infinite() {
            s
        } else {
            s / n as f64
        }
    }

    /// Mean (or max) over `s ∈ [s0, s0 + t]`.
    fn interval(&self, c: &[Complex64], s0: f64, t: f64, fft: &dyn Fft<f64>, buf: &mut Vec<Complex64>) -> f64 {
        let whole = (t + 1e-9).floor();
        let frac = t - whole;
        let tor = if whole >= 1.0 { self.torus(c, fft, buf) } else { 0.0 };
        if frac <= 1e-9 * t.max(1.0) {
            return tor;
        }
        let fine = 16 * (self.span + 1) * (self.p.min(16.0).ceil() as usize / 2 + 1);
        let npts = ((frac * fine as f64).ceil() as usize).max(8);
        let start = s0 + whole;
        let hs = frac / npts as f64;
        let vals = (0..npts).map(|i| {
            let s = start + (i as f64 + 0.5) * hs;
            self.ks
                .iter()
                .zip(c)
                .map(|(&k, &v)| v * e(k as f64 * s))
                .sum::<Complex64>()
                .norm()
        });
        let (ps, _) = self.stat(vals);
        if self.p.is_infinite() {
            tor.max(ps)
        } else {
            (tor * whole + ps * hs) / t
        }
    }
}

fn plan(m: usize) -> Arc<dyn Fft<f64>> {
    FftPlanner::new().plan_fft_inverse(m)
}

/// Period count `R |b|` along an axis when it is a positive integer.
fn integer_periods(r: f64, b: f64) -> Option<f64> {
    let t = (r * b).abs();
    let k = t.round();
    (k >= 1.0 && (t - k).abs() <= 1e-9 * k.max(1.0)).then_some(k)
}

/// Norm evaluation context shared across the members of a cover.
pub struct NormEngine {
    pub bx: PhysBox,
    pub p: f64,
    /// Midpoint spacing in `x₃`.
    pub h3: f64,
    /// Largest direct grid (`n³`) allowed as a fallback.
    pub direct_limit: usize,
    cache: Mutex<HashMap<Vec<u64>, Arc<Vec<f64>>>>,
}

#[derive(Clone, Copy, Debug, Serialize)]
pub struct NormValue {
    pub value: f64,
    pub method: NormMethod,
}

impl NormEngine {
    /// Engine for sums whose lifted heights span at most `height_range`.
    pub fn new(bx: PhysBox, p: f64, height_range: f64) -> Result<Self> {
        if !(p >= 1.0) {
            return Err(Error::Input(format!("p = {p} < 1")));
        }
        let pe = if p.is_finite() { p } else { 16.0 };
        let h3 = 1.0 / (pe * height_range.max(1e-3) + 1.0);
        Ok(NormEngine {
            bx,
            p,
            h3,
            direct_limit: 1 << 21,
            cache: Mutex::new(HashMap::new()),
        })
    }

    pub fn for_sum(f: &ExpSum, bx: PhysBox, p: f64) -> Result<Self> {
        NormEngine::new(bx, p, height_range(f))
    }

    fn x3_samples(&self) -> Vec<f64> {
        let n = (self.bx.side / self.h3).ceil() as usize;
        let h = self.bx.side / n as f64;
        (0..n).map(|i| self.bx.lo(2) + (i as f64 + 0.5) * h).collect()
    }

    fn finish(&self, mean: f64) -> f64 {
        if self.p.is_infinite() {
            mean
        } else {
            mean.powf(1.0 / self.p)
        }
    }

    /// `L^p_#` norm over the box.
    pub fn norm(&self, f: &ExpSum) -> Result<NormValue> {
        if f.is_empty() {
            return Ok(NormValue {
                value: 0.0,
                method: NormMethod::Empty,
            });
        }
        if f.len() == 1 {
            return Ok(NormValue {
                value: f.weights[0].norm(),
                method: NormMethod::Single,
            });
        }
        if let Some(v) = self.progression(f) {
            return Ok(NormValue {
                value: v,
                method: NormMethod::Progression,
            });
        }
        if let Some(v) = self.product(f) {
            return Ok(NormValue {
                value: v,
                method: NormMethod::Product,
            });
        }
        if let Some(v) = self.slab(f, None)? {
            return Ok(NormValue {
                value: v,
                method: NormMethod::Slab,
            });
        }
        let mut max = 0.0f64;
        for i in 0..f.len() {
            for c in f.lifted(i) {
                max = max.max(c.abs());
            }
        }
        let n = ((2.0 * self.bx.side * max).ceil() as usize).max(8);
        if n.pow(3).saturating_mul(f.len()) > self.direct_limit.saturating_mul(64) || n.pow(3) > self.direct_limit {
            return Err(Error::Unsupported(format!(
                "no fast strategy applies and a direct grid needs n = {n}"
            )));
        }
        let g = sample_exp_sum(f, self.bx, n)?;
        Ok(NormValue {
            value: lp_norm(&g, self.p, true)?,
            method: NormMethod::Direct,
        })
    }

    /// Collinear lifted frequencies in arithmetic progression.
    fn progression(&self, f: &ExpSum) -> Option<f64> {
        let pts: Vec<[f64; 3]> = (0..f.len()).map(|i| f.lifted(i)).collect();
        let far = pts
            .iter()
            .cloned()
            .max_by(|a, b| dist2(a, &pts[0]).total_cmp(&dist2(b, &pts[0])))?;
        let d = [far[0] - pts[0][0], far[1] - pts[0][1], far[2] - pts[0][2]];
        let dd = d[0] * d[0] + d[1] * d[1] + d[2] * d[2];
        if dd == 0.0 {
            return None;
        }
        let mut ts = Vec::with_capacity(pts.len());
        for q in &pts {
            let r = [q[0] - pts[0][0], q[1] - pts[0][1], q[2] - pts[0][2]];
            let t = (r[0] * d[0] + r[1] * d[1] + r[2] * d[2]) / dd;
            let res = (0..3).map(|i| (r[i] - t * d[i]).abs()).fold(0.0, f64::max);
            if res > 1e-12 * dd.sqrt().max(1.0) {
                return None;
            }
            ts.push(t);
        }
        let pr = progression_1d(&ts)?;
        let b = [d[0] * pr.step, d[1] * pr.step, d[2] * pr.step];
        let ks: Vec<i64> = pr.ks.iter().map(|k| k - pr.ks.iter().min().unwrap()).collect();
        let line = LineSum::new(&ks, self.p);
        let fft = plan(line.torus_size());
        let mut buf = Vec::new();
        let r = self.bx.side;
        let periodic = (0..3).any(|i| integer_periods(r, b[i]).is_some());
        let v = if periodic {
            line.torus(&f.weights, fft.as_ref(), &mut buf)
        } else {
            let nz: Vec<usize> = (0..3).filter(|&i| b[i].abs() > 1e-15).collect();
            if nz.len() != 1 {
                return None;
            }
            let i = nz[0];
            let (bi, t) = (b[i].abs(), r * b[i].abs());
            line.interval(&f.weights, bi * self.bx.lo(i), t, fft.as_ref(), &mut buf)
        };
        Some(self.finish(v))
    }

    /// Separable phase, product frequency set, rank-one weights.
    fn product(&self, f: &ExpSum) -> Option<f64> {
        let phi = &f.phase;
        if phi.terms().iter().any(|&(j, k, v)| j >= 1 && k >= 1 && v != 0.0) {
            return None;
        }
        let uniq = |ax: usize| {
            let mut v: Vec<f64> = f.freqs.iter().map(|q| q[ax]).collect();
            v.sort_by(f64::total_cmp);
            v.dedup();
            v
        };
        let (xs, ys) = (uniq(0), uniq(1));
        if xs.len() * ys.len() != f.len() || xs.len() < 2 || ys.len() < 2 {
            return None;
        }
        let pos = |v: &[f64], x: f64| v.binary_search_by(|a| a.total_cmp(&x)).ok();
        let mut a = vec![Complex64::new(0.0, 0.0); f.len()];
        for (q, w) in f.freqs.iter().zip(&f.weights) {
            a[pos(&xs, q[0])? * ys.len() + pos(&ys, q[1])?] = *w;
        }
        let a00 = a[0];
        if a00.norm() == 0.0 {
            return None;
        }
        let scale = a.iter().map(|w| w.norm()).fold(0.0, f64::max);
        for i in 0..xs.len() {
            for j in 0..ys.len() {
                let lhs = a[i * ys.len() + j] * a00;
                let rhs = a[i * ys.len()] * a[j];
                if (lhs - rhs).norm() > 1e-12 * scale * scale {
                    return None;
                }
            }
        }
        let u: Vec<Complex64> = (0..xs.len()).map(|i| a[i * ys.len()]).collect();
        let v: Vec<Complex64> = (0..ys.len()).map(|j| a[j] / a00).collect();
        let c0 = phi.eval([0.0, 0.0]);
        let h1: Vec<f64> = xs.iter().map(|&x| phi.eval([x, 0.0])).collect();
        let h2: Vec<f64> = ys.iter().map(|&y| phi.eval([0.0, y]) - c0).collect();
        let a1 = self.factor(0, &xs, &u, &h1)?;
        let a2 = self.factor(1, &ys, &v, &h2)?;
        let m = if self.p.is_infinite() {
            a1.iter().zip(a2.iter()).map(|(x, y)| x * y).fold(0.0, f64::max)
        } else {
            a1.iter().zip(a2.iter()).map(|(x, y)| x * y).sum::<f64>() / a1.len() as f64
        };
        Some(self.finish(m))
    }

    /// `x₃ ↦ mean_{x_ax} |Σ c_i e(x_ax ξ_i + x₃ h_i)|^p` on the engine's `x₃` grid, cached.
    fn factor(&self, ax: usize, pos: &[f64], c: &[Complex64], h: &[f64]) -> Option<Arc<Vec<f64>>> {
        let mut key: Vec<u64> = vec![ax as u64];
        for i in 0..pos.len() {
            key.extend([pos[i].to_bits(), c[i].re.to_bits(), c[i].im.to_bits(), h[i].to_bits()]);
        }
        if let Some(v) = self.cache.lock().unwrap().get(&key) {
            return Some(v.clone());
        }
        let pr = progression_1d(pos)?;
        let r = self.bx.side;
        let periodic = integer_periods(r, pr.step).is_some();
        let line = LineSum::new(&pr.ks, self.p);
        let fft = plan(line.torus_size());
        let s0 = pr.step * self.bx.lo(ax);
        let t = r * pr.step;
        let vals: Vec<f64> = self
            .x3_samples()
            .par_iter()
            .map_init(Vec::new, |buf, &x3| {
                let cc: Vec<Complex64> = c.iter().zip(h).map(|(w, &hh)| w * e(x3 * hh)).collect();
                if periodic {
                    line.torus(&cc, fft.as_ref(), buf)
                } else {
                    line.interval(&cc, s0, t, fft.as_ref(), buf)
                }
            })
            .collect();
        let arc = Arc::new(vals);
        self.cache.lock().unwrap().insert(key, arc.clone());
        Some(arc)
    }

    /// 2D torus transform per `x₃` slice; frequencies on a grid whose
    /// steps give whole periods across the box. A separable envelope
    /// `env(x₁)env(x₂)env(x₃)` multiplies the field before the norm and
    /// needs exactly one period per axis.
    fn slab(&self, f: &ExpSum, env: Option<&(dyn Fn(f64) -> f64 + Sync)>) -> Result<Option<f64>> {
        let px: Vec<f64> = f.freqs.iter().map(|q| q[0]).collect();
        let py: Vec<f64> = f.freqs.iter().map(|q| q[1]).collect();
        let (Some(gx), Some(gy)) = (progression_1d(&px), progression_1d(&py)) else {
            return Ok(None);
        };
        let r = self.bx.side;
        let per = |g: &Progression| {
            if g.ks.iter().all(|&k| k == 0) {
                Some(1.0)
            } else {
                integer_periods(r, g.step)
            }
        };
        let (Some(qx), Some(qy)) = (per(&gx), per(&gy)) else {
            return Ok(None);
        };
        if env.is_some() && (qx != 1.0 || qy != 1.0) {
            return Ok(None);
        }
        let span = |g: &Progression| g.ks.iter().cloned().max().unwrap_or(0) as usize;
        let (sx, sy) = (span(&gx), span(&gy));
        let pe = self.p.is_finite() && self.p.fract() == 0.0 && (self.p as i64) % 2 == 0;
        let size = |s: usize| {
            if pe {
                (self.p as usize / 2) * s + 1 + env.is_some() as usize
            } else {
                16 * (s + 1)
            }
        };
        let (mx, my) = (size(sx), size(sy));
        if mx.saturating_mul(my) > 1 << 24 {
            return Ok(None);
        }
        let mut planner = FftPlanner::new();
        let fx = planner.plan_fft_inverse(mx);
        let fy = planner.plan_fft_inverse(my);
        let heights: Vec<f64> = f.freqs.iter().map(|&q| f.phase.eval(q)).collect();
        let x3s = self.x3_samples();
        // sample j on an axis sits at s = s_lo + (j + 1/2)/m, one period
        let shift = |g: &Progression, ax: usize, m: usize| g.step * self.bx.lo(ax) + 0.5 / m as f64;
        let (shx, shy) = (shift(&gx, 0, mx), shift(&gy, 1, my));
        let axis_env = |ax: usize, m: usize| -> Vec<f64> {
            (0..m)
                .map(|i| {
                    let x = self.bx.lo(ax) + (i as f64 + 0.5) * r / m as f64;
                    env.map_or(1.0, |e| e(x))
                })
                .collect()
        };
        let (ex, ey) = (axis_env(0, mx), axis_env(1, my));
        let mut rows: Vec<usize> = gx.ks.iter().map(|&k| k as usize % mx).collect();
        rows.sort_unstable();
        rows.dedup();
        let p = self.p;
        let pow = move |v2: f64| match p {
            p if p == 2.0 => v2,
            p if p == 4.0 => v2 * v2,
            p if p == 6.0 => v2 * v2 * v2,
            p => v2.powf(p / 2.0),
        };
        let stats: Vec<f64> = x3s
            .par_iter()
            .map(|&x3| {
                let mut grid = vec![Complex64::new(0.0, 0.0); mx * my];
                for i in 0..f.len() {
                    let (kx, ky) = (gx.ks[i] as usize, gy.ks[i] as usize);
                    let ph = kx as f64 * shx + ky as f64 * shy;
                    grid[(kx % mx) * my + ky % my] += f.weights[i] * e(x3 * heights[i] + ph);
                }
                for &row in &rows {
                    fy.process(&mut grid[row * my..(row + 1) * my]);
                }
                let mut t = vec![Complex64::new(0.0, 0.0); mx * my];
                for &i in &rows {
                    for j in 0..my {
                        t[j * mx + i] = grid[i * my + j];
                    }
                }
                drop(grid);
                let e3 = env.map_or(1.0, |e| e(x3));
                let mut acc = 0.0f64;
                for (j, col) in t.chunks_mut(mx).enumerate() {
                    fx.process(col);
                    let wj = ey[j] * e3;
                    for (i, v) in col.iter().enumerate() {
                        let w = ex[i] * wj;
                        let v2 = v.norm_sqr() * w * w;
                        if p.is_infinite() {
                            acc = acc.max(v2.sqrt());
                        } else {
                            acc += pow(v2);
                        }
                    }
                }
                acc
            })
            .collect();
        let m = if self.p.is_infinite() {
            stats.iter().cloned().fold(0.0, f64::max)
        } else {
            stats.iter().sum::<f64>() / (stats.len() * mx * my) as f64
        };
        Ok(Some(self.finish(m)))
    }
}

fn dist2(a: &[f64; 3], b: &[f64; 3]) -> f64 {
    (0..3).map(|i| (a[i] - b[i]).powi(2)).sum()
}

/// Range of lifted heights.
pub fn height_range(f: &ExpSum) -> f64 {
    let hs = f.freqs.iter().map(|&q| f.phase.eval(q));
    let (lo, hi) = hs.fold((f64::INFINITY, f64::NEG_INFINITY), |(a, b), h| (a.min(h), b.max(h)));
    if lo.is_finite() {
        hi - lo
    } else {
        0.0
    }
}

/// `L^p_#` norm of the sum over the box by the first applicable strategy.
pub fn lp_norm_sum(f: &ExpSum, bx: PhysBox, p: f64) -> Result<NormValue> {
    NormEngine::for_sum(f, bx, p)?.norm(f)
}

#[derive(Clone, Debug, Serialize)]
pub struct RatioReport {
    pub lhs: f64,
    pub rhs: f64,
    pub ratio: f64,
    pub members_used: usize,
    pub method: NormMethod,
}

/// Frequency indices lying in each member (half-open membership).
pub fn assign_members(f: &ExpSum, cover: &FlatCover) -> Result<Vec<Vec<usize>>> {
    let mut order: Vec<usize> = (0..f.len()).collect();
    order.sort_by(|&a, &b| f.freqs[a][0].total_cmp(&f.freqs[b][0]));
    let xs: Vec<f64> = order.iter().map(|&i| f.freqs[i][0]).collect();
    let sets: Vec<Vec<usize>> = cover
        .members
        .par_iter()
        .map(|m| {
            let (lo, hi) = m.bbox();
            let a = xs.partition_point(|&x| x < lo[0] - 1e-12);
            let b = xs.partition_point(|&x| x <= hi[0] + 1e-12);
            let mut v: Vec<usize> = order[a..b]
                .iter()
                .cloned()
                .filter(|&i| m.contains(f.freqs[i]))
                .collect();
            v.sort_unstable();
            v
        })
        .collect();
    let mut hit = vec![false; f.len()];
    for s in &sets {
        for &i in s {
            hit[i] = true;
        }
    }
    if let Some(i) = hit.iter().position(|h| !h) {
        return Err(Error::Uncovered(f.freqs[i][0], f.freqs[i][1]));
    }
    Ok(sets)
}

/// `‖f‖_p / (Σ_S ‖f_S‖_p²)^{1/2}` over the box, with `L^p_#` norms.
pub fn decoupling_ratio(f: &ExpSum, cover: &FlatCover, p: f64, bx: PhysBox) -> Result<RatioReport> {
    let sets = assign_members(f, cover)?;
    let engine = NormEngine::for_sum(f, bx, p)?;
    let lhs = engine.norm(f)?;
    let used: Vec<&Vec<usize>> = sets.iter().filter(|s| !s.is_empty()).collect();
    let parts: Vec<Result<f64>> = used
        .par_iter()
        .map(|s| {
            if s.len() == f.len() {
                Ok(lhs.value)
            } else {
                engine.norm(&f.restrict(s)).map(|v| v.value)
            }
        })
        .collect();
    let mut rhs2 = 0.0;
    for v in parts {
        rhs2 += v?.powi(2);
    }
    let rhs = rhs2.sqrt();
    Ok(RatioReport {
        lhs: lhs.value,
        rhs,
        ratio: lhs.value / rhs,
        members_used: used.len(),
        method: lhs.method,
    })
}

#[derive(Clone, Debug, Serialize)]
pub struct SweepReport {
    pub points: Vec<(f64, f64)>,
    pub slope: f64,
    pub intercept: f64,
    /// Root-mean-square residual of the log-log fit.
    pub residual: f64,
}

/// Least-squares fit of `log₂ ratio = intercept + slope · log₂ δ⁻¹`.
pub fn slope_fit(points: &[(f64, f64)]) -> Result<SweepReport> {
    if points.len() < 4 {
        return Err(Error::Input(format!("{} sweep points, need at least 4", points.len())));
    }
    if points.iter().any(|&(d, r)| !(d > 0.0) || !(r > 0.0)) {
        return Err(Error::Input("sweep points must be positive".into()));
    }
    let xs: Vec<f64> = points.iter().map(|p| (1.0 / p.0).log2()).collect();
    let ys: Vec<f64> = points.iter().map(|p| p.1.log2()).collect();
    let n = xs.len() as f64;
    let mx = xs.iter().sum::<f64>() / n;
    let my = ys.iter().sum::<f64>() / n;
    let sxx: f64 = xs.iter().map(|x| (x - mx).powi(2)).sum();
    if sxx == 0.0 {
        return Err(Error::Input("sweep needs distinct deltas".into()));
    }
    let sxy: f64 = xs.iter().zip(&ys).map(|(x, y)| (x - mx) * (y - my)).sum();
    let slope = sxy / sxx;
    let intercept = my - slope * mx;
    let residual = (xs
        .iter()
        .zip(&ys)
        .map(|(x, y)| (y - intercept - slope * x).powi(2))
        .sum::<f64>()
        / n)
        .sqrt();
    Ok(SweepReport {
        points: points.to_vec(),
        slope,
        intercept,
        residual,
    })
}

/// `(j δ^{1/2}, 0)`, `0 ≤ j δ^{1/2} < 1`, on `ξ₁ξ₂` with unit weights.
pub fn line_example(delta: f64) -> Result<ExpSum> {
    crate::cover::dyadic_exponent(delta)?;
    let s = delta.sqrt();
    let n = (1.0 / s - 1e-9).ceil() as usize;
    let freqs = (0..n).map(|j| [j as f64 * s, 0.0]).collect();
    ExpSum::unit(BivariatePoly::hyperbolic(), freqs)
}

/// The `δ`-net `{(m₁δ, m₂δ)}` inside `region` with unit weights.
pub fn bump_example(phi: &BivariatePoly, region: &Parallelogram, delta: f64) -> Result<ExpSum> {
    if !(delta > 0.0 && delta <= 1.0) {
        return Err(Error::Input(format!("delta {delta}")));
    }
    let (lo, hi) = region.bbox();
    if lo[0] < -1e-12 || lo[1] < -1e-12 || hi[0] > 1.0 + 1e-12 || hi[1] > 1.0 + 1e-12 {
        return Err(Error::Input("region must lie in [0,1]^2".into()));
    }
    let n = (1.0 / delta).round() as i64;
    let mut freqs = Vec::new();
    for m1 in 0..=n {
        for m2 in 0..=n {
            let q = [m1 as f64 * delta, m2 as f64 * delta];
            if region.contains(q) {
                freqs.push(q);
            }
        }
    }
    ExpSum::unit(phi.clone(), freqs)
}

/// `⌈δ⁻¹⌉` points `(mδ, aδ)` of the strip `[0,1] × [aδ, aδ + δ]` on `ξ₁ξ₂`.
pub fn strip_example(delta: f64, a: f64) -> Result<ExpSum> {
    if !(delta > 0.0 && delta <= 1.0) || !(a >= 0.0 && a < 1.0 / delta) {
        return Err(Error::Input(format!("delta {delta}, a {a}")));
    }
    let n = (1.0 / delta - 1e-9).ceil() as usize;
    let freqs = (0..n).map(|m| [m as f64 * delta, a * delta]).collect();
    ExpSum::unit(BivariatePoly::hyperbolic(), freqs)
}

#[derive(Clone, Debug, Serialize)]
pub struct SteinTomasReport {
    pub ratio: f64,
    pub lhs: f64,
    pub l2: f64,
    pub normalization: &'static str,
}

pub const STEIN_TOMAS_NORMALIZATION: &str = "ratio = delta^(1-3/p) * ||env * f||_{L^p_#(B)} / ||a||_2, \
B = centred cube of side 1/delta, env(x) = prod_i sinc(delta x_i) (transform of the delta-cube)";

fn sinc(x: f64) -> f64 {
    if x == 0.0 {
        1.0
    } else {
        (std::f64::consts::PI * x).sin() / (std::f64::consts::PI * x)
    }
}

/// Discretised Stein–Tomas ratio for frequencies on the `δ` grid.
pub fn stein_tomas_ratio(f: &ExpSum, delta: f64, p: f64) -> Result<SteinTomasReport> {
    if !(p >= 4.0) {
        return Err(Error::Input(format!("p = {p} < 4")));
    }
    let h = f.phase.hessian([0.0, 0.0]);
    if f.phase.effective_degree() != 2 || !(h.det() < 0.0) {
        return Err(Error::Unsupported("Stein-Tomas check needs a hyperbolic quadratic".into()));
    }
    let bx = PhysBox::centered(1.0 / delta);
    let engine = NormEngine::for_sum(f, bx, p)?;
    let env = move |x: f64| sinc(delta * x);
    let lhs = engine
        .slab(f, Some(&env))?
        .ok_or_else(|| Error::Unsupported("frequencies must lie on the delta grid".into()))?;
    let l2 = f.l2_weights();
    let pw = if p.is_infinite() { 1.0 } else { 1.0 - 3.0 / p };
    Ok(SteinTomasReport {
        ratio: delta.powf(pw) * lhs / l2,
        lhs,
        l2,
        normalization: STEIN_TOMAS_NORMALIZATION,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::cover::{canonical_caps, hp_axis_family};

    fn hp() -> BivariatePoly {
        BivariatePoly::hyperbolic()
    }

    #[test]
    fn field_examples() {
        let f = ExpSum::new(hp(), vec![[0.3, 0.2]], vec![Complex64::new(0.6, 0.8)]).unwrap();
        let g = sample_exp_sum(&f, PhysBox::centered(4.0), 8).unwrap();
        assert!(g.values.iter().all(|v| (v.norm() - 1.0).abs() < 1e-12));
        for p in [1.0, 2.0, 4.0, f64::INFINITY] {
            assert!((lp_norm(&g, p, true).unwrap() - 1.0).abs() < 1e-12);
        }
        let f2 = ExpSum::unit(hp(), vec![[0.0, 0.0], [0.5, 0.0]]).unwrap();
        assert!((f2.eval([0.0; 3]) - Complex64::new(2.0, 0.0)).norm() < 1e-12);
        assert!(sample_exp_sum(&f2, PhysBox::centered(16.0), 8).is_err());
    }

    #[test]
    fn line_example_counts_and_containment() {
        assert_eq!(line_example(1.0 / 16.0).unwrap().len(), 4);
        assert_eq!(line_example(1.0 / 32.0).unwrap().len(), 6);
        let d = 1.0 / 256.0;
        let f = line_example(d).unwrap();
        let strip = Parallelogram::axis_box(0.0, 1.0, 0.0, d).unwrap();
        let one = FlatCover::new(d, 1.0, String::new(), crate::cover::CoverKind::Custom, vec![strip]);
        let r = decoupling_ratio(&f, &one, 4.0, PhysBox::centered(1.0 / d)).unwrap();
        assert!((r.ratio - 1.0).abs() < 1e-12);
    }

    #[test]
    fn line_vs_caps_energy() {
        // ‖f‖₄⁴ is the number of solutions of j1 + j2 = j3 + j4
        let d = 1.0 / 256.0;
        let f = line_example(d).unwrap();
        let n = f.len() as f64;
        let energy = (2.0 * n.powi(3) + n) / 3.0;
        let v = lp_norm_sum(&f, PhysBox::centered(1.0 / d), 4.0).unwrap();
        assert_eq!(v.method, NormMethod::Progression);
        assert!((v.value.powi(4) - energy).abs() < 1e-6 * energy);
        let r = decoupling_ratio(&f, &canonical_caps(d).unwrap(), 4.0, PhysBox::centered(1.0 / d)).unwrap();
        assert!((r.ratio - (energy.powf(0.25) / n.sqrt())).abs() < 1e-9);
    }

    #[test]
    fn partial_period_matches_direct() {
        let d = 1.0 / 8.0;
        let f = line_example(d).unwrap();
        let bx = PhysBox::centered(8.0);
        let fast = lp_norm_sum(&f, bx, 4.0).unwrap();
        let slow = lp_norm(&sample_exp_sum(&f, bx, 128).unwrap(), 4.0, true).unwrap();
        assert!((fast.value - slow).abs() < 1e-3 * slow, "{} {}", fast.value, slow);
    }

    #[test]
    fn strategies_agree_on_small_sums() {
        let bx = PhysBox::centered(4.0);
        let phi = BivariatePoly::elliptic();
        let f = bump_example(&phi, &Parallelogram::unit_square(), 0.25).unwrap();
        let fast = lp_norm_sum(&f, bx, 4.0).unwrap();
        assert_eq!(fast.method, NormMethod::Product);
        let n = 96;
        let direct = lp_norm(&sample_exp_sum(&f, bx, n).unwrap(), 4.0, true).unwrap();
        assert!((fast.value - direct).abs() < 2e-3 * direct, "{} {direct}", fast.value);
        let w: Vec<Complex64> = (0..f.len()).map(|i| e(0.37 * i as f64 * i as f64)).collect();
        let g = ExpSum::new(phi, f.freqs.clone(), w).unwrap();
        let eng = NormEngine::for_sum(&g, bx, 4.0).unwrap();
        let slab = eng.slab(&g, None).unwrap().unwrap();
        let direct = lp_norm(&sample_exp_sum(&g, bx, n).unwrap(), 4.0, true).unwrap();
        assert!((slab - direct).abs() < 2e-3 * direct, "{slab} {direct}");
    }

    #[test]
    fn parseval_on_partition() {
        let d = 1.0 / 64.0;
        let f = bump_example(&hp(), &Parallelogram::unit_square(), 1.0 / 8.0).unwrap();
        let r = decoupling_ratio(&f, &canonical_caps(d).unwrap(), 2.0, PhysBox::centered(8.0)).unwrap();
        assert!(r.ratio <= 1.02 && r.ratio >= 0.98, "{r:?}");
    }

    #[test]
    fn uncovered_frequency_errors() {
        let f = ExpSum::unit(hp(), vec![[1.5, 0.0], [0.0, 0.0]]).unwrap();
        assert!(matches!(
            decoupling_ratio(&f, &canonical_caps(1.0 / 16.0).unwrap(), 4.0, PhysBox::centered(16.0)),
            Err(Error::Uncovered(..))
        ));
    }

    #[test]
    fn slope_fit_examples() {
        let ds = [2f64.powi(-6), 2f64.powi(-8), 2f64.powi(-10), 2f64.powi(-12)];
        let flat: Vec<(f64, f64)> = ds.iter().map(|&d| (d, 1.0)).collect();
        assert!(slope_fit(&flat).unwrap().slope.abs() < 1e-12);
        let pw: Vec<(f64, f64)> = ds.iter().map(|&d| (d, d.powf(-0.125))).collect();
        assert!((slope_fit(&pw).unwrap().slope - 0.125).abs() < 1e-6);
        assert!(slope_fit(&pw[..3]).is_err());
    }

    #[test]
    fn strip_examples() {
        let d = 1.0 / 64.0;
        let f = strip_example(d, 0.0).unwrap();
        assert_eq!(f.len(), 64);
        let r = decoupling_ratio(&f, &hp_axis_family(d).unwrap(), 4.0, PhysBox::centered(64.0)).unwrap();
        assert!(r.ratio <= 1.0 + 1e-9);
        let c = decoupling_ratio(&f, &canonical_caps(d).unwrap(), 4.0, PhysBox::centered(64.0)).unwrap();
        assert!(c.ratio > 1.3);
    }

    #[test]
    fn stein_tomas_small() {
        let d = 1.0 / 8.0;
        let f = bump_example(&BivariatePoly::saddle_diag(), &Parallelogram::unit_square(), d).unwrap();
        let r = stein_tomas_ratio(&f, d, 4.0).unwrap();
        assert!(r.ratio > 0.0 && r.ratio < 2.0);
        let inf = stein_tomas_ratio(&f, d, f64::INFINITY).unwrap();
        assert!(inf.ratio <= 1.0 + 1e-12);
        let one = ExpSum::unit(BivariatePoly::saddle_diag(), vec![[0.25, 0.5]]).unwrap();
        let r1 = stein_tomas_ratio(&one, d, 4.0).unwrap();
        assert!(r1.ratio > 0.0 && r1.ratio <= d.powf(0.25));
    }
}
