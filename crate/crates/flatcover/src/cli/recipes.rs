//! Experiments expressed as data, and the runners behind `reproduce`.

use num_complex::Complex64;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::cover::{self, build_cover_hp, canonical_caps, hp_axis_family, overlap_profile, FlatCover};
use crate::error::{Error, Result};
use crate::flatness::{flat_defect, is_flat};
use crate::geometry::{scale, Parallelogram};
use crate::lattice;
use crate::norms::{
    bump_example, decoupling_ratio, line_example, slope_fit, stein_tomas_ratio, strip_example, ExpSum,
    NormMethod, PhysBox, SweepReport,
};
use crate::poly2::BivariatePoly;
use crate::rescale::{rescale_phase, verify_coeff_bounds};

/// Built-in recipes, one per acceptance experiment.
pub const BUILTIN: &str = include_str!("recipes.json");

#[derive(Clone, Copy, Debug, Serialize, Deserialize, PartialEq, Eq, clap::ValueEnum)]
#[serde(rename_all = "snake_case")]
pub enum PhaseName {
    Hyperbolic,
    Elliptic,
    SaddleDiag,
}

impl PhaseName {
    pub fn poly(self) -> BivariatePoly {
        match self {
            PhaseName::Hyperbolic => BivariatePoly::hyperbolic(),
            PhaseName::Elliptic => BivariatePoly::elliptic(),
            PhaseName::SaddleDiag => BivariatePoly::saddle_diag(),
        }
    }
}

#[derive(Clone, Copy, Debug, Serialize, Deserialize, PartialEq, Eq, clap::ValueEnum)]
#[serde(rename_all = "snake_case")]
pub enum Example {
    /// Points `(jδ^{1/2}, 0)` on `ξ₁ξ₂`.
    Line,
    /// One row of the `δ` grid at height `1/2` on `ξ₁ξ₂`.
    Strip,
    /// Full `δ` grid on `ξ₁² + ξ₂²`.
    Bump,
}

impl Example {
    pub fn build(self, delta: f64) -> Result<ExpSum> {
        match self {
            Example::Line => line_example(delta),
            Example::Strip => strip_example(delta, 0.5 / delta),
            Example::Bump => bump_example(&BivariatePoly::elliptic(), &Parallelogram::unit_square(), delta),
        }
    }
}

#[derive(Clone, Copy, Debug, Serialize, Deserialize, PartialEq, Eq, clap::ValueEnum)]
#[serde(rename_all = "snake_case")]
pub enum CoverChoice {
    Canonical,
    HpAxis,
    Hp,
}

impl CoverChoice {
    pub fn build(self, phi: &BivariatePoly, delta: f64, a: f64) -> Result<FlatCover> {
        match self {
            CoverChoice::Canonical => canonical_caps(delta),
            CoverChoice::HpAxis => hp_axis_family(delta),
            CoverChoice::Hp => build_cover_hp(phi, delta, a),
        }
    }
}

#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Experiment {
    /// Max `|defect − w h|` over random axis boxes for `ξ₁ξ₂`.
    FlatClosedForm { boxes: usize, seed: u64 },
    /// Number of canonical caps failing `is_flat`.
    CapsFlat {
        l_min: u32,
        l_max: u32,
        a_plain: f64,
        a_perturbed: f64,
        perturbed: usize,
        seed: u64,
    },
    /// Max sampled overlap of the hyperbolic cover over `4A log₂δ⁻¹`.
    Overlap { l_min: u32, l_max: u32, a: f64, grid: usize },
    /// Max `|overlap − (log₂δ⁻¹ + 1)|` for the axis family.
    AxisOverlap { l_min: u32, l_max: u32, grid: usize },
    /// Fitted slope of a decoupling ratio sweep.
    Sweep {
        example: Example,
        cover: CoverChoice,
        p: f64,
        l_min: u32,
        l_max: u32,
    },
    /// Largest slope over seeds of the Stein–Tomas ratio with random phases.
    SteinTomas { p: f64, l_min: u32, l_max: u32, seeds: Vec<u64> },
    /// Max excess of the rescaling identity error over its tolerance.
    RescaleIdentity { pairs: usize, levels: Vec<u32>, seed: u64 },
    /// Worst coefficient audit ratio over rescaled members.
    RescaleAudit { pairs: usize, levels: Vec<u32>, seed: u64 },
    /// Max flat-set multiplicity, optionally divided by `δ^{-1/2}/4` and
    /// minimised over `δ`.
    Multiplicity {
        phase: PhaseName,
        alpha: f64,
        levels: Vec<u32>,
        d: u32,
        scaled: bool,
    },
    /// `min |a + √2 b| b^{1+ε}`.
    Pell { b_max: u64, eps: f64 },
    /// Slope of the discrete restriction ratio over `δ = 1/inv_deltas[i]`, or
    /// max `|ratio − 1|` at `p = 2`.
    Restriction {
        phase: PhaseName,
        alpha: f64,
        p: f64,
        inv_deltas: Vec<u32>,
        d: u32,
    },
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct Check {
    pub label: String,
    pub experiment: Experiment,
    #[serde(default)]
    pub lo: Option<f64>,
    #[serde(default)]
    pub hi: Option<f64>,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct Recipe {
    pub id: String,
    pub criterion: u32,
    pub checks: Vec<Check>,
}

#[derive(Clone, Debug, Serialize)]
pub struct CheckOutcome {
    pub label: String,
    pub measured: f64,
    pub lo: Option<f64>,
    pub hi: Option<f64>,
    pub passed: bool,
}

#[derive(Clone, Debug, Serialize)]
pub struct Outcome {
    pub schema_version: u32,
    pub id: String,
    pub criterion: u32,
    pub checks: Vec<CheckOutcome>,
    pub passed: bool,
}

pub fn parse_recipes(s: &str) -> Result<Vec<Recipe>> {
    Ok(serde_json::from_str(s)?)
}

pub fn builtin() -> Vec<Recipe> {
    parse_recipes(BUILTIN).expect("built-in recipes parse")
}

pub fn find<'a>(recipes: &'a [Recipe], id: &str) -> Result<&'a Recipe> {
    recipes
        .iter()
        .find(|r| r.id == id)
        .ok_or_else(|| Error::Input(format!("unknown recipe id {id:?}")))
}

pub fn run(recipe: &Recipe) -> Result<Outcome> {
    let mut checks = Vec::new();
    for c in &recipe.checks {
        let measured = measure(&c.experiment)?;
        let passed = measured.is_finite()
            && c.lo.is_none_or(|lo| measured >= lo)
            && c.hi.is_none_or(|hi| measured <= hi);
        checks.push(CheckOutcome {
            label: c.label.clone(),
            measured,
            lo: c.lo,
            hi: c.hi,
            passed,
        });
    }
    let passed = checks.iter().all(|c| c.passed);
    Ok(Outcome {
        schema_version: cover::SCHEMA_VERSION,
        id: recipe.id.clone(),
        criterion: recipe.criterion,
        checks,
        passed,
    })
}

fn levels(l_min: u32, l_max: u32) -> Result<Vec<f64>> {
    if l_min > l_max || l_max > 30 {
        return Err(Error::Input(format!("levels {l_min}..{l_max}")));
    }
    Ok((l_min..=l_max).map(|l| 0.5f64.powi(l as i32)).collect())
}

pub fn measure(e: &Experiment) -> Result<f64> {
    match e {
        Experiment::FlatClosedForm { boxes, seed } => {
            let mut rng = ChaCha8Rng::seed_from_u64(*seed);
            let phi = BivariatePoly::hyperbolic();
            let mut worst = 0.0f64;
            for _ in 0..*boxes {
                let (x0, y0) = (rng.gen_range(0.0..0.9), rng.gen_range(0.0..0.9));
                let (w, h) = (rng.gen_range(1e-3..0.1), rng.gen_range(1e-3..0.1));
                let s = Parallelogram::axis_box(x0, x0 + w, y0, y0 + h)?;
                let got = flat_defect(&phi, &s)?.defect;
                let (ww, hh) = s.side_lengths();
                worst = worst.max((got - ww * hh).abs());
            }
            Ok(worst)
        }
        Experiment::CapsFlat {
            l_min,
            l_max,
            a_plain,
            a_perturbed,
            perturbed,
            seed,
        } => {
            let mut rng = ChaCha8Rng::seed_from_u64(*seed);
            let mut phases = vec![(BivariatePoly::hyperbolic(), *a_plain)];
            for _ in 0..*perturbed {
                phases.push((perturbed_phase(&mut rng)?, *a_perturbed));
            }
            let mut failures = 0usize;
            for d in levels(*l_min, *l_max)? {
                let caps = canonical_caps(d)?;
                for (phi, a) in &phases {
                    for m in &caps.members {
                        if !is_flat(phi, m, d, *a)? {
                            failures += 1;
                        }
                    }
                }
            }
            Ok(failures as f64)
        }
        Experiment::Overlap { l_min, l_max, a, grid } => {
            let phi = BivariatePoly::hyperbolic();
            let mut worst = 0.0f64;
            for d in levels(*l_min, *l_max)? {
                let c = build_cover_hp(&phi, d, *a)?;
                let prof = overlap_profile(&c, *grid)?;
                worst = worst.max(prof.max as f64 / cover::overlap_bound(c.kind, d, *a, 0.0));
            }
            Ok(worst)
        }
        Experiment::AxisOverlap { l_min, l_max, grid } => {
            let mut worst = 0.0f64;
            for d in levels(*l_min, *l_max)? {
                let prof = overlap_profile(&hp_axis_family(d)?, *grid)?;
                let want = (1.0 / d).log2() + 1.0;
                worst = worst.max((prof.max as f64 - want).abs()).max((prof.min as f64 - want).abs());
            }
            Ok(worst)
        }
        Experiment::Sweep {
            example,
            cover,
            p,
            l_min,
            l_max,
        } => Ok(sweep(*example, *cover, *p, &levels(*l_min, *l_max)?, 4.0)?.1.slope),
        Experiment::SteinTomas { p, l_min, l_max, seeds } => {
            let mut worst = f64::NEG_INFINITY;
            for &seed in seeds {
                let mut rng = ChaCha8Rng::seed_from_u64(seed);
                let mut pts = Vec::new();
                for d in levels(*l_min, *l_max)? {
                    let f = random_saddle_grid(d, &mut rng)?;
                    pts.push((d, stein_tomas_ratio(&f, d, *p)?.ratio));
                }
                worst = worst.max(slope_fit(&pts)?.slope);
            }
            Ok(worst)
        }
        Experiment::RescaleIdentity { pairs, levels: ls, seed } => {
            let mut worst = 0.0f64;
            for &l in ls {
                let d = 0.5f64.powi(l as i32);
                let phi = BivariatePoly::hyperbolic();
                let c = build_cover_hp(&phi, d, 4.0)?;
                let r = rescale_check(&phi, &c, pairs / ls.len().max(1), *seed + l as u64)?;
                worst = worst.max(r.worst_excess);
            }
            Ok(worst)
        }
        Experiment::RescaleAudit { pairs, levels: ls, seed } => {
            let mut worst = 0.0f64;
            for &l in ls {
                let d = 0.5f64.powi(l as i32);
                let phi = BivariatePoly::hyperbolic();
                let c = build_cover_hp(&phi, d, 4.0)?;
                let r = rescale_check(&phi, &c, pairs / ls.len().max(1), *seed + l as u64)?;
                worst = worst.max(r.worst_audit);
            }
            Ok(worst)
        }
        Experiment::Multiplicity {
            phase,
            alpha,
            levels: ls,
            d,
            scaled,
        } => {
            let phi = phase.poly();
            let mut out = if *scaled { f64::INFINITY } else { 0.0 };
            for &l in ls {
                let delta = 0.5f64.powi(l as i32);
                let lat = lattice::lambda_grid(delta, *alpha)?;
                let c = lattice::lattice_cover(&phi, &lat, *d, 4.0)?;
                let m = lattice::max_flat_multiplicity(&c, &lat, delta.powi(*d as i32)).max as f64;
                out = if *scaled {
                    out.min(m / (delta.powf(-0.5) / 4.0))
                } else {
                    out.max(m)
                };
            }
            Ok(out)
        }
        Experiment::Pell { b_max, eps } => Ok(lattice::pell_gap(*b_max, *eps)?.min_value),
        Experiment::Restriction {
            phase,
            alpha,
            p,
            inv_deltas,
            d,
        } => {
            let phi = phase.poly();
            let mut pts = Vec::new();
            for &n in inv_deltas {
                let delta = 1.0 / n as f64;
                let lat = lattice::lambda_grid(delta, *alpha)?;
                let w = vec![Complex64::new(1.0, 0.0); lat.len()];
                pts.push((delta, lattice::discrete_restriction_ratio(&lat, &w, &phi, *p, *d)?.ratio));
            }
            if *p == 2.0 {
                Ok(pts.iter().map(|q| (q.1 - 1.0).abs()).fold(0.0, f64::max))
            } else {
                Ok(slope_fit(&pts)?.slope)
            }
        }
    }
}

/// `ξ₁ξ₂` plus coefficients at the normal-form tolerance and a random affine part.
pub fn perturbed_phase(rng: &mut ChaCha8Rng) -> Result<BivariatePoly> {
    let mut terms = vec![(1, 1, 1.0), (1, 0, rng.gen_range(-1.0..1.0)), (0, 1, rng.gen_range(-1.0..1.0))];
    for (j, k) in [(2, 0), (0, 2), (3, 0), (2, 1), (1, 2), (0, 3)] {
        terms.push((j, k, rng.gen_range(-1.0..1.0) * 1e-30));
    }
    let phi = BivariatePoly::from_terms(3, &terms)?;
    cover::check_normal_form(&phi)?;
    Ok(phi)
}

/// Full `δ` grid on `ξ₁² − ξ₂²` with unimodular random weights.
pub fn random_saddle_grid(delta: f64, rng: &mut ChaCha8Rng) -> Result<ExpSum> {
    let f = bump_example(&BivariatePoly::saddle_diag(), &Parallelogram::unit_square(), delta)?;
    let w = (0..f.len())
        .map(|_| Complex64::from_polar(1.0, rng.gen_range(0.0..std::f64::consts::TAU)))
        .collect();
    ExpSum::new(f.phase, f.freqs, w)
}

#[derive(Clone, Debug, Serialize)]
pub struct SweepRow {
    pub delta: f64,
    pub log2_inv_delta: f64,
    pub lhs: f64,
    pub rhs: f64,
    pub ratio: f64,
    pub members_used: usize,
    pub method: NormMethod,
}

pub fn sweep(
    example: Example,
    cover: CoverChoice,
    p: f64,
    deltas: &[f64],
    a: f64,
) -> Result<(Vec<SweepRow>, SweepReport)> {
    let mut rows = Vec::new();
    for &d in deltas {
        let f = example.build(d)?;
        let c = cover.build(&f.phase, d, a)?;
        let r = decoupling_ratio(&f, &c, p, PhysBox::centered(1.0 / d))?;
        rows.push(SweepRow {
            delta: d,
            log2_inv_delta: (1.0 / d).log2(),
            lhs: r.lhs,
            rhs: r.rhs,
            ratio: r.ratio,
            members_used: r.members_used,
            method: r.method,
        });
    }
    let pts: Vec<(f64, f64)> = rows.iter().map(|r| (r.delta, r.ratio)).collect();
    let rep = slope_fit(&pts)?;
    Ok((rows, rep))
}

#[derive(Clone, Debug, Serialize)]
pub struct RescaleCheck {
    pub schema_version: u32,
    pub pairs: usize,
    pub worst_identity_error: f64,
    /// Max of `error − tolerance`; non-positive when every pair passes.
    pub worst_excess: f64,
    pub worst_audit: f64,
    pub passed: bool,
}

/// Rescales random members of `cover` and compares defects of random
/// sub-boxes on both sides of the identity, plus the coefficient audit.
pub fn rescale_check(phi: &BivariatePoly, cover: &FlatCover, pairs: usize, seed: u64) -> Result<RescaleCheck> {
    if cover.is_empty() {
        return Err(Error::EmptyCover);
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let sigma = cover.delta;
    let (mut worst_err, mut worst_excess, mut worst_audit) = (0.0f64, f64::NEG_INFINITY, 0.0f64);
    for _ in 0..pairs {
        let s = cover.members[rng.gen_range(0..cover.len())];
        let r = rescale_phase(phi, &s, sigma, cover.a)?;
        let sub = Parallelogram::new(
            r.domain.at([rng.gen_range(-0.5..0.5), rng.gen_range(-0.5..0.5)]),
            scale(r.domain.e1, rng.gen_range(0.05..0.5)),
            scale(r.domain.e2, rng.gen_range(0.05..0.5)),
        )?;
        let lhs = flat_defect(phi, &sub.map(&r.map))?;
        let rhs = flat_defect(&r.phi, &sub)?;
        let err = (lhs.defect - sigma * rhs.defect).abs();
        let tol = 1e-9 + (lhs.defect - lhs.lower) + sigma * (rhs.defect - rhs.lower);
        worst_err = worst_err.max(err);
        worst_excess = worst_excess.max(err - tol);
        worst_audit = worst_audit.max(verify_coeff_bounds(&r, phi)?.worst_ratio);
    }
    Ok(RescaleCheck {
        schema_version: cover::SCHEMA_VERSION,
        pairs,
        worst_identity_error: worst_err,
        worst_excess,
        worst_audit,
        passed: worst_excess <= 0.0 && worst_audit <= 1.0,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn builtin_recipes_cover_every_criterion() {
        let r = builtin();
        let mut crit: Vec<u32> = r.iter().map(|x| x.criterion).collect();
        crit.sort_unstable();
        crit.dedup();
        assert_eq!(crit, (1..=10).collect::<Vec<_>>());
        assert!(find(&r, "overlap-log").is_ok());
        assert!(find(&r, "line-slope-p4").is_ok());
        assert!(find(&r, "nope").is_err());
    }

    #[test]
    fn closed_form_recipe_runs() {
        let v = measure(&Experiment::FlatClosedForm { boxes: 20, seed: 3 }).unwrap();
        assert!(v <= 1e-12);
    }
}
