//! Body and surface loads and their reduction to a membrane load.

use serde::{Deserialize, Serialize};

use super::Rect;
use crate::error::{Error, Result};
use crate::tensor::Vec3;

/// A load density sampled pointwise at `x = (x₁, x₂, x₃)`.
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum LoadField {
    #[default]
    Zero,
    Constant {
        value: [f64; 3],
    },
    /// `value + gradient · x`, with `gradient[i][d] = ∂f_i/∂x_d`.
    Affine {
        value: [f64; 3],
        gradient: [[f64; 3]; 3],
    },
    /// `Σ_k coeffs[k] x₃^k`.
    PolynomialX3 {
        coeffs: Vec<[f64; 3]>,
    },
    /// Nodal samples on a uniform `(nx+1) × (ny+1)` grid over `omega`,
    /// bilinearly interpolated and constant in `x₃`. `values[i][j]` sits at
    /// the `i`-th `x₁` and `j`-th `x₂` grid line.
    Grid {
        #[serde(default)]
        omega: Rect,
        values: Vec<Vec<[f64; 3]>>,
    },
}

impl LoadField {
    pub fn validate(&self) -> Result<()> {
        let finite = |v: &[f64; 3]| v.iter().all(|c| c.is_finite());
        let ok = match self {
            LoadField::Zero => true,
            LoadField::Constant { value } => finite(value),
            LoadField::Affine { value, gradient } => finite(value) && gradient.iter().all(finite),
            LoadField::PolynomialX3 { coeffs } => coeffs.iter().all(finite),
            LoadField::Grid { omega, values } => {
                omega.validate()?;
                let rows = values.len();
                if rows < 2 || values.iter().any(|r| r.len() < 2 || r.len() != values[0].len()) {
                    return Err(Error::InvalidInput("grid load needs a rectangular array of at least 2×2 samples".into()));
                }
                values.iter().flatten().all(finite)
            }
        };
        if ok {
            Ok(())
        } else {
            Err(Error::InvalidInput("load values must be finite".into()))
        }
    }

    pub fn is_zero(&self) -> bool {
        matches!(self, LoadField::Zero)
    }

    pub fn eval(&self, x: [f64; 3]) -> Vec3 {
        let mut out = Vec3::ZERO;
        for c in self.x3_coefficients([x[0], x[1]]).iter().rev() {
            out = x[2] * out + *c;
        }
        out
    }

    /// Coefficients `c_k(x_α)` with `f(x_α, x₃) = Σ_k c_k(x_α) x₃^k`.
    pub fn x3_coefficients(&self, x: [f64; 2]) -> Vec<Vec3> {
        match self {
            LoadField::Zero => Vec::new(),
            LoadField::Constant { value } => vec![Vec3(*value)],
            LoadField::Affine { value, gradient } => {
                let mut c0 = *value;
                for (o, row) in c0.iter_mut().zip(gradient) {
                    *o += row[0] * x[0] + row[1] * x[1];
                }
                vec![Vec3(c0), Vec3(gradient.map(|row| row[2]))]
            }
            LoadField::PolynomialX3 { coeffs } => coeffs.iter().map(|c| Vec3(*c)).collect(),
            LoadField::Grid { omega, values } => {
                let (nx, ny) = (values.len() - 1, values[0].len() - 1);
                let locate = |v: f64, lo: f64, hi: f64, n: usize| {
                    let u = ((v - lo) / (hi - lo) * n as f64).clamp(0.0, n as f64);
                    let i = (u.floor() as usize).min(n - 1);
                    (i, u - i as f64)
                };
                let (i, a) = locate(x[0], omega.x[0], omega.x[1], nx);
                let (j, b) = locate(x[1], omega.y[0], omega.y[1], ny);
                let mut out = [0.0; 3];
                for (c, o) in out.iter_mut().enumerate() {
                    *o = (1.0 - a) * (1.0 - b) * values[i][j][c]
                        + a * (1.0 - b) * values[i + 1][j][c]
                        + (1.0 - a) * b * values[i][j + 1][c]
                        + a * b * values[i + 1][j + 1][c];
                }
                vec![Vec3(out)]
            }
        }
    }
}

/// Body force `f` on `Ω` and tractions `g⁺`, `g⁻` on the faces `x₃ = ±1`.
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct LoadSpec {
    pub f: LoadField,
    pub g_plus: LoadField,
    pub g_minus: LoadField,
}

impl LoadSpec {
    pub fn validate(&self) -> Result<()> {
        self.f.validate()?;
        self.g_plus.validate()?;
        self.g_minus.validate()
    }

    pub fn is_zero(&self) -> bool {
        self.f.is_zero() && self.g_plus.is_zero() && self.g_minus.is_zero()
    }
}

/// Gauss–Legendre nodes and weights on `(−1, 1)`.
pub fn gauss_legendre(n: usize) -> Vec<(f64, f64)> {
    let mut out = vec![(0.0, 0.0); n];
    for i in 0..n.div_ceil(2) {
        let mut x = (std::f64::consts::PI * (i as f64 + 0.75) / (n as f64 + 0.5)).cos();
        let mut dp = 0.0;
        for _ in 0..100 {
            let (mut p0, mut p1) = (1.0, x);
            for k in 2..=n {
                let p2 = ((2 * k - 1) as f64 * x * p1 - (k - 1) as f64 * p0) / k as f64;
                p0 = p1;
                p1 = p2;
            }
            dp = n as f64 * (x * p1 - p0) / (x * x - 1.0);
            let dx = p1 / dp;
            x -= dx;
            if dx.abs() < 1e-16 {
                break;
            }
        }
        let w = 2.0 / ((1.0 - x * x) * dp * dp);
        out[i] = (-x, w);
        out[n - 1 - i] = (x, w);
    }
    out
}

/// `x_α ↦ s·f̄(x_α) + g⁺(x_α) + g⁻(x_α)` with `f̄ = ½∫_I f(·, x₃) dx₃`.
#[derive(Debug, Clone, PartialEq)]
pub struct ReducedLoad {
    loads: LoadSpec,
    quadrature_n: usize,
    body_scale: f64,
}

/// `½ Σ_q w_q z_q^k` for the `n`-point Gauss rule. Degrees the rule
/// integrates exactly take the exact moment `½∫_I x₃^k`.
fn half_moment(n: usize, k: usize) -> f64 {
    if k < 2 * n {
        if k % 2 == 1 {
            0.0
        } else {
            1.0 / (k + 1) as f64
        }
    } else {
        gauss_legendre(n).iter().map(|(z, w)| 0.5 * w * z.powi(k as i32)).sum()
    }
}

impl ReducedLoad {
    pub fn zero() -> Self {
        ReducedLoad { loads: LoadSpec::default(), quadrature_n: 2, body_scale: 1.0 }
    }

    /// Scales the body contribution. The 3D body-load work `∫_Ω f·u`
    /// converges to `2∫_ω f̄·v`, so the load matching a film experiment uses
    /// scale 2.
    pub fn with_body_scale(mut self, scale: f64) -> Self {
        self.body_scale = scale;
        self
    }

    pub fn is_zero(&self) -> bool {
        self.loads.is_zero()
    }

    pub fn eval(&self, x: [f64; 2]) -> Vec3 {
        let mut out = Vec3::ZERO;
        for (k, c) in self.loads.f.x3_coefficients(x).into_iter().enumerate() {
            let m = half_moment(self.quadrature_n, k);
            if m != 0.0 {
                out += (self.body_scale * m) * c;
            }
        }
        out + self.loads.g_plus.eval([x[0], x[1], 1.0]) + self.loads.g_minus.eval([x[0], x[1], -1.0])
    }
}

/// Reduces 3D loads to the membrane load, integrating `f` across the
/// thickness with the `quadrature_n`-point Gauss rule (applied to the
/// `x₃`-polynomial coefficients of `f`).
pub fn reduce_loads(loads: &LoadSpec, quadrature_n: usize) -> Result<ReducedLoad> {
    if quadrature_n < 2 {
        return Err(Error::InvalidInput("quadrature_n must be at least 2".into()));
    }
    loads.validate()?;
    Ok(ReducedLoad { loads: loads.clone(), quadrature_n, body_scale: 1.0 })
}
