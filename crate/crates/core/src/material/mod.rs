//! Stored-energy densities `W(x, y_α; ξ)`.
//!
//! Five closed-form families are provided, each with an analytic
//! ξ-gradient and a growth constant β computed at construction. Periodic
//! coefficients are indexed through `frac(y) ∈ [0, 1)`; a jump belongs to
//! the interval on its right (left-closed convention). An optional
//! mollification width replaces each jump by a linear ramp.

mod hypotheses;

pub use hypotheses::{check_hypotheses, HypothesisOutcome, HypothesisReport, Witness};

use serde::{Deserialize, Serialize};
use std::f64::consts::PI;

use crate::error::{Error, Result};
use crate::tensor::{Frobenius, Mat3x3};

/// Radius of the ball on which β is made tight.
pub const BETA_RADIUS: f64 = 1e6;

/// Largest accepted mollification width.
pub const MAX_MOLLIFY: f64 = 0.05;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "family", rename_all = "snake_case", deny_unknown_fields)]
pub enum LawFamily {
    /// `‖ξ‖²`
    HomogeneousQuadratic,
    /// `a(y₁)‖ξ‖²` with `a = a1` on `[0, θ)` and `a2` on `[θ, 1)`.
    LaminateQuadratic {
        a1: f64,
        a2: f64,
        theta: f64,
        #[serde(default)]
        mollify: f64,
    },
    /// `a(y_α)‖ξ‖^p` on a 2×2 checkerboard, `a1` on `[0,½)²`.
    CheckerboardPower {
        a1: f64,
        a2: f64,
        p: u32,
        #[serde(default)]
        mollify: f64,
    },
    /// `(ξ₁₁² − 1)² + c(‖ξ‖² − ξ₁₁²)`
    #[serde(rename = "double_well11")]
    DoubleWell11 { c: f64 },
    /// Convex hull of [`LawFamily::DoubleWell11`] in the `ξ₁₁` entry.
    #[serde(rename = "relaxed_double_well11")]
    RelaxedDoubleWell11 { c: f64 },
    /// `m(x_α) W_base(y_α; ξ)` with `m = 1 + amplitude·sin(πx₁)sin(πx₂)`.
    MacroModulated { base: Box<LawFamily>, amplitude: f64 },
}

/// A coefficient jump of a periodic law, at `pos` along in-plane axis `axis`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Interface {
    pub axis: usize,
    pub pos: f64,
}

/// A validated stored-energy density with its growth exponent and constant.
#[derive(Debug, Clone, PartialEq)]
pub struct MaterialLaw {
    family: LawFamily,
    p: u32,
    beta: f64,
    beta_override: Option<f64>,
}

/// Wire form of a law: the family block plus an optional `"beta"` override.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "serde_json::Value", into = "serde_json::Value")]
pub struct LawSpec {
    pub family: LawFamily,
    pub beta: Option<f64>,
}

impl TryFrom<serde_json::Value> for LawSpec {
    type Error = String;

    fn try_from(mut value: serde_json::Value) -> std::result::Result<Self, String> {
        let beta = match value.as_object_mut() {
            Some(obj) => match obj.remove("beta") {
                None | Some(serde_json::Value::Null) => None,
                Some(b) => Some(b.as_f64().ok_or("\"beta\" must be a number")?),
            },
            None => return Err("law block must be an object".into()),
        };
        let family = serde_json::from_value(value).map_err(|e| e.to_string())?;
        Ok(LawSpec { family, beta })
    }
}

impl From<LawSpec> for serde_json::Value {
    fn from(spec: LawSpec) -> serde_json::Value {
        let mut v = serde_json::to_value(&spec.family).expect("law family serializes");
        if let (Some(b), Some(obj)) = (spec.beta, v.as_object_mut()) {
            obj.insert("beta".into(), b.into());
        }
        v
    }
}

impl LawFamily {
    fn validate(&self) -> Result<()> {
        let bad = |m: &str| Err(Error::InvalidInput(m.to_string()));
        let positive = |v: f64| v.is_finite() && v > 0.0;
        match self {
            LawFamily::HomogeneousQuadratic => Ok(()),
            LawFamily::LaminateQuadratic { a1, a2, theta, mollify } => {
                if !positive(*a1) || !positive(*a2) {
                    return bad("laminate coefficients must be positive");
                }
                if !(*theta > 0.0 && *theta < 1.0) {
                    return bad("laminate volume fraction must lie in (0, 1)");
                }
                check_mollify(*mollify, theta.min(1.0 - theta))
            }
            LawFamily::CheckerboardPower { a1, a2, p, mollify } => {
                if !positive(*a1) || !positive(*a2) {
                    return bad("checkerboard coefficients must be positive");
                }
                if *p != 2 && *p != 4 {
                    return bad("checkerboard exponent must be 2 or 4");
                }
                check_mollify(*mollify, 0.5)
            }
            LawFamily::DoubleWell11 { c } | LawFamily::RelaxedDoubleWell11 { c } => {
                if !positive(*c) {
                    return bad("double-well rest weight must be positive");
                }
                Ok(())
            }
            LawFamily::MacroModulated { base, amplitude } => {
                if matches!(**base, LawFamily::MacroModulated { .. }) {
                    return bad("nested macro modulation is not supported");
                }
                if !(amplitude.is_finite() && amplitude.abs() < 1.0) {
                    return bad("modulation amplitude must satisfy |amplitude| < 1");
                }
                base.validate()
            }
        }
    }

    fn exponent(&self) -> u32 {
        match self {
            LawFamily::HomogeneousQuadratic | LawFamily::LaminateQuadratic { .. } => 2,
            LawFamily::CheckerboardPower { p, .. } => *p,
            LawFamily::DoubleWell11 { .. } | LawFamily::RelaxedDoubleWell11 { .. } => 4,
            LawFamily::MacroModulated { base, .. } => base.exponent(),
        }
    }

    /// Range `[lo, hi]` of the scalar coefficient multiplying the unit shape.
    fn coefficient_range(&self) -> (f64, f64) {
        match self {
            LawFamily::HomogeneousQuadratic | LawFamily::DoubleWell11 { .. } | LawFamily::RelaxedDoubleWell11 { .. } => {
                (1.0, 1.0)
            }
            LawFamily::LaminateQuadratic { a1, a2, .. } | LawFamily::CheckerboardPower { a1, a2, .. } => {
                (a1.min(*a2), a1.max(*a2))
            }
            LawFamily::MacroModulated { base, amplitude } => {
                let (lo, hi) = base.coefficient_range();
                (lo * (1.0 - amplitude.abs()), hi * (1.0 + amplitude.abs()))
            }
        }
    }

    fn unit_shape(&self) -> &LawFamily {
        match self {
            LawFamily::MacroModulated { base, .. } => base,
            other => other,
        }
    }
}

fn check_mollify(s: f64, room: f64) -> Result<()> {
    if !(0.0..=MAX_MOLLIFY).contains(&s) {
        return Err(Error::InvalidInput(format!("mollify width must lie in [0, {MAX_MOLLIFY}]")));
    }
    if s >= room {
        return Err(Error::InvalidInput("mollify ramps would overlap".into()));
    }
    Ok(())
}

impl MaterialLaw {
    pub fn new(family: LawFamily) -> Result<Self> {
        family.validate()?;
        let p = family.exponent();
        let beta = tight_beta(&family, p);
        Ok(MaterialLaw { family, p, beta, beta_override: None })
    }

    pub fn from_spec(spec: &LawSpec) -> Result<Self> {
        let law = Self::new(spec.family.clone())?;
        match spec.beta {
            Some(b) => law.with_beta(b),
            None => Ok(law),
        }
    }

    pub fn spec(&self) -> LawSpec {
        LawSpec { family: self.family.clone(), beta: self.beta_override }
    }

    /// Replaces the computed β by a user value (used to build deliberately
    /// inconsistent laws for the hypothesis checker).
    pub fn with_beta(mut self, beta: f64) -> Result<Self> {
        if !(beta.is_finite() && beta > 0.0) {
            return Err(Error::InvalidInput("beta must be positive".into()));
        }
        self.beta = beta;
        self.beta_override = Some(beta);
        Ok(self)
    }

    pub fn homogeneous_quadratic() -> Self {
        Self::new(LawFamily::HomogeneousQuadratic).expect("valid")
    }

    pub fn laminate(a1: f64, a2: f64, theta: f64) -> Result<Self> {
        Self::new(LawFamily::LaminateQuadratic { a1, a2, theta, mollify: 0.0 })
    }

    pub fn checkerboard(a1: f64, a2: f64, p: u32) -> Result<Self> {
        Self::new(LawFamily::CheckerboardPower { a1, a2, p, mollify: 0.0 })
    }

    pub fn double_well(c: f64) -> Result<Self> {
        Self::new(LawFamily::DoubleWell11 { c })
    }

    pub fn modulated(base: LawFamily, amplitude: f64) -> Result<Self> {
        Self::new(LawFamily::MacroModulated { base: Box::new(base), amplitude })
    }

    pub fn family(&self) -> &LawFamily {
        &self.family
    }

    pub fn p(&self) -> u32 {
        self.p
    }

    pub fn beta(&self) -> f64 {
        self.beta
    }

    /// True iff `W` varies with the macroscopic point.
    pub fn depends_on_x(&self) -> bool {
        matches!(self.family, LawFamily::MacroModulated { .. })
    }

    /// Stable textual identity of the law, used for cache keys and hashes.
    pub fn fingerprint(&self) -> String {
        serde_json::to_string(&self.spec()).expect("law spec serializes")
    }

    /// Coefficient jumps within one period, empty for y-independent or
    /// mollified laws.
    pub fn interfaces(&self) -> Vec<Interface> {
        match self.family.unit_shape() {
            LawFamily::LaminateQuadratic { theta, mollify, .. } if *mollify == 0.0 => {
                vec![Interface { axis: 0, pos: 0.0 }, Interface { axis: 0, pos: *theta }]
            }
            LawFamily::CheckerboardPower { mollify, .. } if *mollify == 0.0 => vec![
                Interface { axis: 0, pos: 0.0 },
                Interface { axis: 0, pos: 0.5 },
                Interface { axis: 1, pos: 0.0 },
                Interface { axis: 1, pos: 0.5 },
            ],
            _ => Vec::new(),
        }
    }

    /// True when every coefficient jump falls on a multiple of `1/divisions`.
    pub fn interfaces_aligned(&self, divisions: f64) -> bool {
        self.interfaces().iter().all(|i| {
            let v = i.pos * divisions;
            (v - v.round()).abs() < 1e-9
        })
    }

    /// `W(x, y_α; ξ)`.
    pub fn evaluate(&self, x: [f64; 3], y: [f64; 2], xi: &Mat3x3) -> Result<f64> {
        if !xi.is_finite() {
            return Err(Error::NonFinite);
        }
        Ok(self.energy(x, y, xi))
    }

    /// `∂W/∂ξ (x, y_α; ξ)`.
    pub fn gradient_xi(&self, x: [f64; 3], y: [f64; 2], xi: &Mat3x3) -> Result<Mat3x3> {
        if !xi.is_finite() {
            return Err(Error::NonFinite);
        }
        Ok(self.energy_and_gradient(x, y, xi).1)
    }

    /// Unchecked energy for inner loops.
    pub fn energy(&self, x: [f64; 3], y: [f64; 2], xi: &Mat3x3) -> f64 {
        let coeff = self.coefficient(x, y);
        coeff * shape_energy(self.family.unit_shape(), xi)
    }

    /// Unchecked energy and ξ-gradient for inner loops.
    pub fn energy_and_gradient(&self, x: [f64; 3], y: [f64; 2], xi: &Mat3x3) -> (f64, Mat3x3) {
        let coeff = self.coefficient(x, y);
        let (w, g) = shape_energy_and_gradient(self.family.unit_shape(), xi);
        (coeff * w, coeff * g)
    }

    fn coefficient(&self, x: [f64; 3], y: [f64; 2]) -> f64 {
        match &self.family {
            LawFamily::MacroModulated { base, amplitude } => modulation(*amplitude, x) * base_coefficient(base, y),
            other => base_coefficient(other, y),
        }
    }
}

fn modulation(amplitude: f64, x: [f64; 3]) -> f64 {
    1.0 + amplitude * (PI * x[0]).sin() * (PI * x[1]).sin()
}

fn base_coefficient(family: &LawFamily, y: [f64; 2]) -> f64 {
    match family {
        LawFamily::LaminateQuadratic { a1, a2, theta, mollify } => {
            let s = two_phase_sign(y[0], *theta, *mollify);
            0.5 * (a1 + a2) + 0.5 * (a1 - a2) * s
        }
        LawFamily::CheckerboardPower { a1, a2, mollify, .. } => {
            let s = two_phase_sign(y[0], 0.5, *mollify) * two_phase_sign(y[1], 0.5, *mollify);
            0.5 * (a1 + a2) + 0.5 * (a1 - a2) * s
        }
        _ => 1.0,
    }
}

/// `+1` on `[0, split)`, `−1` on `[split, 1)` (periodically), with linear
/// ramps of total width `s` centred on both jumps when `s > 0`.
fn two_phase_sign(y: f64, split: f64, s: f64) -> f64 {
    let f = y - y.floor();
    if s == 0.0 {
        return if f < split { 1.0 } else { -1.0 };
    }
    let half = 0.5 * s;
    // jump at 0 goes −1 → +1, jump at `split` goes +1 → −1
    let d0 = if f > 0.5 { f - 1.0 } else { f };
    if d0.abs() < half {
        return -1.0 + 2.0 * (d0 + half) / s;
    }
    let d1 = f - split;
    if d1.abs() < half {
        return 1.0 - 2.0 * (d1 + half) / s;
    }
    if f < split {
        1.0
    } else {
        -1.0
    }
}

/// Squared norm of every entry except `ξ₁₁`.
fn rest_norm_sq(xi: &Mat3x3) -> f64 {
    let mut s = 0.0;
    for (i, row) in xi.0.iter().enumerate() {
        for (j, v) in row.iter().enumerate() {
            if i != 0 || j != 0 {
                s += v * v;
            }
        }
    }
    s
}

fn shape_energy(shape: &LawFamily, xi: &Mat3x3) -> f64 {
    match shape {
        LawFamily::HomogeneousQuadratic | LawFamily::LaminateQuadratic { .. } => xi.norm_sq(),
        LawFamily::CheckerboardPower { p, .. } => {
            let n2 = xi.norm_sq();
            if *p == 2 {
                n2
            } else {
                n2 * n2
            }
        }
        LawFamily::DoubleWell11 { c } => {
            let t = xi.0[0][0];
            let w = t * t - 1.0;
            w * w + c * rest_norm_sq(xi)
        }
        LawFamily::RelaxedDoubleWell11 { c } => {
            let t = xi.0[0][0];
            convex_well(t) + c * rest_norm_sq(xi)
        }
        LawFamily::MacroModulated { .. } => unreachable!("modulation is stripped before shape evaluation"),
    }
}

fn shape_energy_and_gradient(shape: &LawFamily, xi: &Mat3x3) -> (f64, Mat3x3) {
    match shape {
        LawFamily::HomogeneousQuadratic | LawFamily::LaminateQuadratic { .. } => (xi.norm_sq(), 2.0 * *xi),
        LawFamily::CheckerboardPower { p, .. } => {
            let n2 = xi.norm_sq();
            if *p == 2 {
                (n2, 2.0 * *xi)
            } else {
                (n2 * n2, (4.0 * n2) * *xi)
            }
        }
        LawFamily::DoubleWell11 { c } => {
            let t = xi.0[0][0];
            let w = t * t - 1.0;
            let mut g = (2.0 * c) * *xi;
            g.0[0][0] = 4.0 * t * w;
            (w * w + c * rest_norm_sq(xi), g)
        }
        LawFamily::RelaxedDoubleWell11 { c } => {
            let t = xi.0[0][0];
            let mut g = (2.0 * c) * *xi;
            g.0[0][0] = if t.abs() <= 1.0 { 0.0 } else { 4.0 * t * (t * t - 1.0) };
            (convex_well(t) + c * rest_norm_sq(xi), g)
        }
        LawFamily::MacroModulated { .. } => unreachable!("modulation is stripped before shape evaluation"),
    }
}

/// Convex envelope of `t ↦ (t² − 1)²`.
pub fn convex_well(t: f64) -> f64 {
    if t.abs() <= 1.0 {
        0.0
    } else {
        let w = t * t - 1.0;
        w * w
    }
}

/// The closed-form relaxation of [`LawFamily::DoubleWell11`] with the same
/// rest weight. The nonconvexity sits in the single entry `ξ₁₁`, a rank-one
/// direction, so convexifying that entry gives the quasiconvex envelope.
pub fn relaxed_double_well(c: f64) -> Result<MaterialLaw> {
    MaterialLaw::new(LawFamily::RelaxedDoubleWell11 { c })
}

/// Tightest β on `‖ξ‖ ≤ BETA_RADIUS` for the bracket
/// `(1/β)|ξ|^p − β ≤ W ≤ β(1 + |ξ|^p)`.
fn tight_beta(family: &LawFamily, p: u32) -> f64 {
    let (lo, hi) = family.coefficient_range();
    let r = BETA_RADIUS;
    let rp = r.powi(p as i32);
    match family.unit_shape() {
        LawFamily::HomogeneousQuadratic | LawFamily::LaminateQuadratic { .. } | LawFamily::CheckerboardPower { .. } => {
            let upper = hi * rp / (1.0 + rp);
            // worst case of s^p/β − β ≤ lo s^p sits at s = R
            let lower = 2.0 * rp / (lo * rp + (lo * lo * rp * rp + 4.0 * rp).sqrt());
            upper.max(lower)
        }
        shape => {
            // W depends on ξ only through (ξ₁₁, rest norm); sweep the
            // quarter-plane of (t, r) = s (cos θ, sin θ)
            let n_radii = 2000;
            let n_angles = 181;
            let mut upper: f64 = 0.0;
            let mut lower: f64 = 0.0;
            let radii = std::iter::once(0.0).chain((0..n_radii).map(|k| {
                let a = k as f64 / (n_radii - 1) as f64;
                1e-3 * (r / 1e-3).powf(a)
            }));
            for s in radii {
                for a in 0..n_angles {
                    let th = 0.5 * PI * a as f64 / (n_angles - 1) as f64;
                    let (t, rr) = if a == n_angles - 1 { (0.0, s) } else { (s * th.cos(), s * th.sin()) };
                    let mut xi = Mat3x3::ZERO;
                    xi.0[0][0] = t;
                    xi.0[1][1] = rr;
                    let w = shape_energy(shape, &xi);
                    let sp = s.powi(p as i32);
                    upper = upper.max(hi * w / (1.0 + sp));
                    let wl = lo * w;
                    if sp > 0.0 {
                        lower = lower.max(2.0 * sp / (wl + (wl * wl + 4.0 * sp).sqrt()));
                    }
                }
            }
            upper.max(lower) * (1.0 + 1e-9)
        }
    }
}
