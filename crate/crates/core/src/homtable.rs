//! Memoized evaluation, slice tables, persistence and continuity probing
//! of the homogenized density `W_hom(x_α; ξ̄)`.

use std::collections::HashMap;
use std::path::Path;
use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::RwLock;

use serde::{Deserialize, Serialize};

use crate::cell::{whom_estimate, CellDiscretization, MinimizeOptions, WhomEstimate};
use crate::error::{Error, Result};
use crate::material::{LawSpec, MaterialLaw};
use crate::tensor::{frobenius, Frobenius, Mat3x2};

pub const TABLE_SCHEMA_VERSION: u32 = 1;

/// Anything that can evaluate an effective membrane density.
pub trait EffectiveDensity: Sync {
    fn value(&self, x_alpha: [f64; 2], xi_bar: &Mat3x2) -> Result<f64>;

    /// Value and `ξ̄`-gradient. Defaults to central differences of `value`.
    fn value_and_gradient(&self, x_alpha: [f64; 2], xi_bar: &Mat3x2) -> Result<(f64, Mat3x2)> {
        Ok((self.value(x_alpha, xi_bar)?, central_gradient(self, x_alpha, xi_bar)?))
    }

    /// Growth exponent used by continuity ratios and `L^p` distances.
    fn p(&self) -> u32 {
        2
    }
}

/// Central differences of an effective density in `ξ̄`, step `1e-4 (1 + ‖ξ̄‖)`.
pub fn central_gradient<D: EffectiveDensity + ?Sized>(density: &D, x: [f64; 2], xi: &Mat3x2) -> Result<Mat3x2> {
    let h = 1e-4 * (1.0 + frobenius(xi));
    let mut out = Mat3x2::ZERO;
    for i in 0..3 {
        for j in 0..2 {
            let mut plus = *xi;
            let mut minus = *xi;
            plus.0[i][j] += h;
            minus.0[i][j] -= h;
            out.0[i][j] = (density.value(x, &plus)? - density.value(x, &minus)?) / (2.0 * h);
        }
    }
    Ok(out)
}

/// `Σ_k w_k ξ̄_k²` over the six entries (row-major). With unit weights this
/// is `‖ξ̄‖²`, the effective density of the homogeneous quadratic law.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DiagonalQuadratic {
    pub weights: [f64; 6],
}

impl DiagonalQuadratic {
    pub fn norm_squared() -> Self {
        DiagonalQuadratic { weights: [1.0; 6] }
    }

    /// Closed-form effective density of a quadratic laminate varying in `y₁`:
    /// harmonic mean for `∂₁`, arithmetic mean for `∂₂`.
    pub fn laminate(a1: f64, a2: f64, theta: f64) -> Self {
        let harmonic = 1.0 / (theta / a1 + (1.0 - theta) / a2);
        let arithmetic = theta * a1 + (1.0 - theta) * a2;
        DiagonalQuadratic { weights: [harmonic, arithmetic, harmonic, arithmetic, harmonic, arithmetic] }
    }
}

impl EffectiveDensity for DiagonalQuadratic {
    fn value(&self, _x: [f64; 2], xi_bar: &Mat3x2) -> Result<f64> {
        Ok(xi_bar.to_flat().iter().zip(&self.weights).map(|(v, w)| w * v * v).sum())
    }

    fn value_and_gradient(&self, x: [f64; 2], xi_bar: &Mat3x2) -> Result<(f64, Mat3x2)> {
        let flat = xi_bar.to_flat();
        let grad = Mat3x2::from_flat(std::array::from_fn(|k| 2.0 * self.weights[k] * flat[k]));
        Ok((self.value(x, xi_bar)?, grad))
    }
}

/// Settings every cache miss is solved with.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CacheDefaults {
    pub disc: CellDiscretization,
    pub t_max: usize,
    pub rtol: f64,
    pub opts: MinimizeOptions,
}

impl Default for CacheDefaults {
    fn default() -> Self {
        CacheDefaults { disc: CellDiscretization::default(), t_max: 4, rtol: 1e-3, opts: MinimizeOptions::default() }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
struct CacheKey {
    x: [u64; 2],
    xi: [u64; 6],
    grid: [usize; 3],
}

/// Memo table keyed on exact bit patterns of `(x_α, ξ̄)`.
#[derive(Debug)]
pub struct WHomCache {
    fingerprint: String,
    ignores_x: bool,
    defaults: CacheDefaults,
    entries: RwLock<HashMap<CacheKey, WhomEstimate>>,
    solves: AtomicUsize,
    solver_iterations: AtomicUsize,
}

impl WHomCache {
    pub fn new(law: &MaterialLaw, defaults: CacheDefaults) -> Self {
        WHomCache {
            fingerprint: law.fingerprint(),
            ignores_x: !law.depends_on_x(),
            defaults,
            entries: RwLock::new(HashMap::new()),
            solves: AtomicUsize::new(0),
            solver_iterations: AtomicUsize::new(0),
        }
    }

    pub fn defaults(&self) -> &CacheDefaults {
        &self.defaults
    }

    pub fn len(&self) -> usize {
        self.entries.read().expect("cache lock").len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// Number of `whom_estimate` runs performed on misses.
    pub fn solves(&self) -> usize {
        self.solves.load(Ordering::Relaxed)
    }

    /// Total optimizer iterations spent on misses.
    pub fn solver_iterations(&self) -> usize {
        self.solver_iterations.load(Ordering::Relaxed)
    }

    fn key(&self, x_alpha: [f64; 2], xi_bar: &Mat3x2) -> CacheKey {
        // an x-independent law gives bit-identical solves at every x_α
        let x = if self.ignores_x { [0.0, 0.0] } else { x_alpha };
        let d = &self.defaults;
        CacheKey {
            x: x.map(f64::to_bits),
            xi: xi_bar.to_flat().map(f64::to_bits),
            grid: [d.disc.n_per_unit, d.disc.n_thick, d.t_max],
        }
    }

    /// Full estimate (with trace) for `(x_α, ξ̄)`, solving on a miss.
    pub fn estimate(&self, law: &MaterialLaw, x_alpha: [f64; 2], xi_bar: &Mat3x2) -> Result<WhomEstimate> {
        let given = law.fingerprint();
        if given != self.fingerprint {
            return Err(Error::FingerprintMismatch { cached: self.fingerprint.clone(), given });
        }
        let key = self.key(x_alpha, xi_bar);
        if let Some(hit) = self.entries.read().expect("cache lock").get(&key) {
            return Ok(hit.clone());
        }
        let d = &self.defaults;
        let est = whom_estimate(law, x_alpha, xi_bar, &d.disc, d.t_max, d.rtol, &d.opts)?;
        self.solves.fetch_add(1, Ordering::Relaxed);
        let iters: usize = est.trace.iter().map(|p| p.iterations).sum();
        self.solver_iterations.fetch_add(iters, Ordering::Relaxed);
        self.entries.write().expect("cache lock").insert(key, est.clone());
        Ok(est)
    }
}

/// `W_hom(x_α; ξ̄)` through the cache.
pub fn whom(cache: &WHomCache, law: &MaterialLaw, x_alpha: [f64; 2], xi_bar: &Mat3x2) -> Result<f64> {
    cache.estimate(law, x_alpha, xi_bar).map(|e| e.value)
}

/// A law paired with its cache, usable wherever an effective density is expected.
pub struct HomogenizedDensity<'a> {
    pub law: &'a MaterialLaw,
    pub cache: &'a WHomCache,
}

impl EffectiveDensity for HomogenizedDensity<'_> {
    fn value(&self, x_alpha: [f64; 2], xi_bar: &Mat3x2) -> Result<f64> {
        whom(self.cache, self.law, x_alpha, xi_bar)
    }

    fn value_and_gradient(&self, x_alpha: [f64; 2], xi_bar: &Mat3x2) -> Result<(f64, Mat3x2)> {
        let est = self.cache.estimate(self.law, x_alpha, xi_bar)?;
        Ok((est.value, est.gradient))
    }

    fn p(&self) -> u32 {
        self.law.p()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SliceSpec {
    pub base: [f64; 6],
    pub d1: [f64; 6],
    pub d2: [f64; 6],
    pub s_range: [f64; 2],
    pub t_range: [f64; 2],
    pub n: usize,
}

impl SliceSpec {
    fn validate(&self) -> Result<()> {
        if self.n < 2 {
            return Err(Error::InvalidInput("slice resolution n must be at least 2".into()));
        }
        let (a, b) = (Mat3x2::from_flat(self.d1), Mat3x2::from_flat(self.d2));
        let gram = a.norm_sq() * b.norm_sq() - a.dot(&b).powi(2);
        if !(gram > 1e-12 * a.norm_sq() * b.norm_sq()) {
            return Err(Error::InvalidInput("slice directions must be linearly independent".into()));
        }
        Ok(())
    }

    fn coordinate(range: [f64; 2], n: usize, i: usize) -> f64 {
        range[0] + (range[1] - range[0]) * i as f64 / (n - 1) as f64
    }

    pub fn s(&self, i: usize) -> f64 {
        Self::coordinate(self.s_range, self.n, i)
    }

    pub fn t(&self, j: usize) -> f64 {
        Self::coordinate(self.t_range, self.n, j)
    }

    /// `ξ̄₀ + s D₁ + t D₂`.
    pub fn point(&self, s: f64, t: f64) -> Mat3x2 {
        Mat3x2::from_flat(self.base) + s * Mat3x2::from_flat(self.d1) + t * Mat3x2::from_flat(self.d2)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TableGrid {
    #[serde(rename = "T_max")]
    pub t_max: usize,
    pub n_per_unit: usize,
    pub n_thick: usize,
    pub rtol: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TableFailure {
    pub i: usize,
    pub j: usize,
    pub error: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TableMetadata {
    pub tool_version: String,
    pub seed: u64,
    /// Largest difference between neighbouring table values.
    pub mesh_modulus: f64,
    #[serde(default)]
    pub config_hash: Option<String>,
}

/// `W_hom` sampled on a 2D affine slice of `R^{3×2}`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct WHomTable {
    pub schema_version: u32,
    pub law: LawSpec,
    pub x_alpha: [f64; 2],
    pub slice: SliceSpec,
    pub grid: TableGrid,
    /// `values[i][j]` at `(s_i, t_j)`; `None` where the solve failed.
    pub values: Vec<Vec<Option<f64>>>,
    #[serde(default)]
    pub failures: Vec<TableFailure>,
    pub metadata: TableMetadata,
}

impl WHomTable {
    pub fn value(&self, i: usize, j: usize) -> Option<f64> {
        self.values[i][j]
    }

    /// Bilinear interpolation inside the slice rectangle.
    pub fn interpolate(&self, s: f64, t: f64) -> Option<f64> {
        let n = self.slice.n;
        let locate = |range: [f64; 2], v: f64| -> Option<(usize, f64)> {
            let u = (v - range[0]) / (range[1] - range[0]) * (n - 1) as f64;
            if !(-1e-12..=(n - 1) as f64 + 1e-12).contains(&u) {
                return None;
            }
            let i = (u.floor().max(0.0) as usize).min(n - 2);
            Some((i, (u - i as f64).clamp(0.0, 1.0)))
        };
        let (i, a) = locate(self.slice.s_range, s)?;
        let (j, b) = locate(self.slice.t_range, t)?;
        let v = |i: usize, j: usize| self.values[i][j];
        Some(
            (1.0 - a) * (1.0 - b) * v(i, j)?
                + a * (1.0 - b) * v(i + 1, j)?
                + (1.0 - a) * b * v(i, j + 1)?
                + a * b * v(i + 1, j + 1)?,
        )
    }
}

/// Tabulates `W_hom(x_α; ξ̄₀ + s D₁ + t D₂)` on an `n × n` grid. Node
/// solves run concurrently; failed nodes are recorded rather than aborting.
pub fn tabulate_slice(law: &MaterialLaw, cache: &WHomCache, x_alpha: [f64; 2], slice: &SliceSpec) -> Result<WHomTable> {
    slice.validate()?;
    let n = slice.n;
    let exec = cache.defaults.opts.exec;
    let results = exec.map_range(n * n, |k| {
        let (i, j) = (k / n, k % n);
        whom(cache, law, x_alpha, &slice.point(slice.s(i), slice.t(j)))
    });
    let mut values = vec![vec![None; n]; n];
    let mut failures = Vec::new();
    for (k, r) in results.into_iter().enumerate() {
        let (i, j) = (k / n, k % n);
        match r {
            Ok(v) => values[i][j] = Some(v),
            Err(e @ Error::FingerprintMismatch { .. }) => return Err(e),
            Err(e) => failures.push(TableFailure { i, j, error: e.to_string() }),
        }
    }
    let mut modulus: f64 = 0.0;
    for i in 0..n {
        for j in 0..n {
            for (a, b) in [(i + 1, j), (i, j + 1)] {
                if a < n && b < n {
                    if let (Some(u), Some(v)) = (values[i][j], values[a][b]) {
                        modulus = modulus.max((u - v).abs());
                    }
                }
            }
        }
    }
    let d = cache.defaults;
    Ok(WHomTable {
        schema_version: TABLE_SCHEMA_VERSION,
        law: law.spec(),
        x_alpha,
        slice: slice.clone(),
        grid: TableGrid { t_max: d.t_max, n_per_unit: d.disc.n_per_unit, n_thick: d.disc.n_thick, rtol: d.rtol },
        values,
        failures,
        metadata: TableMetadata {
            tool_version: env!("CARGO_PKG_VERSION").to_string(),
            seed: d.opts.seed,
            mesh_modulus: modulus,
            config_hash: None,
        },
    })
}

pub fn save_table(table: &WHomTable, path: &Path) -> Result<()> {
    let mut text = serde_json::to_string_pretty(table).map_err(|e| Error::InvalidInput(e.to_string()))?;
    text.push('\n');
    std::fs::write(path, text)?;
    Ok(())
}

fn byte_offset(text: &str, line: usize, column: usize) -> usize {
    let before: usize = text.split_inclusive('\n').take(line.saturating_sub(1)).map(str::len).sum();
    (before + column).min(text.len())
}

pub fn parse_table(text: &str) -> Result<WHomTable> {
    let parse_err =
        |e: serde_json::Error| Error::Parse { offset: byte_offset(text, e.line(), e.column()), message: e.to_string() };
    let raw: serde_json::Value = serde_json::from_str(text).map_err(parse_err)?;
    let found = raw.get("schema_version").and_then(|v| v.as_u64()).unwrap_or(0) as u32;
    if found != TABLE_SCHEMA_VERSION {
        return Err(Error::SchemaMismatch { expected: TABLE_SCHEMA_VERSION, found });
    }
    serde_json::from_str(text).map_err(parse_err)
}

pub fn load_table(path: &Path) -> Result<WHomTable> {
    parse_table(&std::fs::read_to_string(path)?)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ContinuityProbe {
    pub max_ratio: f64,
    /// `(s, W_hom)` along the segment, `s ∈ [0, 1]`.
    pub samples: Vec<(f64, f64)>,
}

/// Largest `|ΔW| / ((1 + ‖ξ̄₁‖^{p−1} + ‖ξ̄₂‖^{p−1}) ‖ξ̄₁ − ξ̄₂‖)` over
/// consecutive samples of the segment `[a, b]`.
pub fn continuity_probe<D: EffectiveDensity + ?Sized>(
    density: &D,
    x_alpha: [f64; 2],
    a: &Mat3x2,
    b: &Mat3x2,
    n_points: usize,
) -> Result<ContinuityProbe> {
    if n_points < 2 {
        return Err(Error::InvalidInput("continuity probe needs at least 2 points".into()));
    }
    let p = density.p() as i32;
    let point = |k: usize| {
        let s = k as f64 / (n_points - 1) as f64;
        (s, *a + s * (*b - *a))
    };
    let mut samples = Vec::with_capacity(n_points);
    for k in 0..n_points {
        let (s, xi) = point(k);
        samples.push((s, density.value(x_alpha, &xi)?));
    }
    let mut max_ratio: f64 = 0.0;
    for k in 1..n_points {
        let (x1, x2) = (point(k - 1).1, point(k).1);
        let dist = frobenius(&(x1 - x2));
        if dist == 0.0 {
            continue;
        }
        let weight = 1.0 + frobenius(&x1).powi(p - 1) + frobenius(&x2).powi(p - 1);
        max_ratio = max_ratio.max((samples[k].1 - samples[k - 1].1).abs() / (weight * dist));
    }
    Ok(ContinuityProbe { max_ratio, samples })
}
