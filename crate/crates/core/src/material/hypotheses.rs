//! Sampled verification of the growth bracket, y-periodicity and
//! (y, ξ)-continuity of a law.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::MaterialLaw;
use crate::error::{Error, Result};
use crate::tensor::{Frobenius, Mat3x3};

const SAMPLE_RADIUS: f64 = 10.0;
const PERIODIC_SHIFTS: [[f64; 2]; 3] = [[1.0, 0.0], [0.0, 1.0], [2.0, -3.0]];
const PERIODIC_TOL: f64 = 1e-12;
/// Relative size of the last continuity increment that still counts as a jump.
const CONTINUITY_TOL: f64 = 1e-4;
const PROBE_STEPS: i32 = 6;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Witness {
    pub x: [f64; 3],
    pub y: [f64; 2],
    pub xi: [[f64; 3]; 3],
    pub value: f64,
    pub detail: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HypothesisOutcome {
    pub name: String,
    pub passed: bool,
    pub checked: usize,
    pub skipped: usize,
    pub witness: Option<Witness>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HypothesisReport {
    pub law: super::LawSpec,
    pub p: u32,
    pub beta: f64,
    pub sample_count: usize,
    pub seed: u64,
    pub outcomes: Vec<HypothesisOutcome>,
}

impl HypothesisReport {
    pub fn all_passed(&self) -> bool {
        self.outcomes.iter().all(|o| o.passed)
    }

    /// First failing hypothesis as an error.
    pub fn into_result(self) -> Result<HypothesisReport> {
        match self.outcomes.iter().find(|o| !o.passed) {
            None => Ok(self),
            Some(o) => Err(Error::Hypothesis {
                name: o.name.clone(),
                detail: o.witness.as_ref().map(|w| format!("{} at x={:?}, y={:?}", w.detail, w.x, w.y)).unwrap_or_default(),
            }),
        }
    }
}

struct Tally {
    outcome: HypothesisOutcome,
}

impl Tally {
    fn new(name: &str) -> Self {
        Tally { outcome: HypothesisOutcome { name: name.into(), passed: true, checked: 0, skipped: 0, witness: None } }
    }

    fn record(&mut self, ok: bool, witness: impl FnOnce() -> Witness) {
        self.outcome.checked += 1;
        if !ok && self.outcome.passed {
            self.outcome.passed = false;
            self.outcome.witness = Some(witness());
        }
    }
}

fn random_unit(rng: &mut ChaCha8Rng) -> Mat3x3 {
    loop {
        let mut m = Mat3x3::ZERO;
        for v in m.0.iter_mut().flatten() {
            *v = rng.gen_range(-1.0..1.0);
        }
        let n = m.norm_sq().sqrt();
        if n > 1e-3 {
            return (1.0 / n) * m;
        }
    }
}

/// Periodic distance from `y` to the nearest declared interface on `axis`.
fn distance_to_interface(law: &MaterialLaw, y: [f64; 2]) -> f64 {
    law.interfaces()
        .iter()
        .map(|i| {
            let f = y[i.axis] - y[i.axis].floor();
            let d = (f - i.pos).abs();
            d.min(1.0 - d)
        })
        .fold(f64::INFINITY, f64::min)
}

/// Samples `(x, y_α, ξ)` pseudo-randomly and checks the growth bracket,
/// integer-shift periodicity and continuity in `(y_α, ξ)`. The continuity
/// probe skips points whose probe path could cross a declared coefficient
/// jump.
pub fn check_hypotheses(law: &MaterialLaw, sample_count: usize, seed: u64) -> Result<HypothesisReport> {
    if sample_count == 0 {
        return Err(Error::InvalidInput("sample_count must be at least 1".into()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let beta = law.beta();
    let p = law.p() as i32;
    let mut h3 = Tally::new("H3");
    let mut h4 = Tally::new("H4");
    let mut h1 = Tally::new("H1");
    let min_step = 10f64.powi(-PROBE_STEPS);

    for _ in 0..sample_count {
        let x = [rng.gen::<f64>(), rng.gen::<f64>(), rng.gen_range(-1.0..=1.0)];
        let y = [rng.gen::<f64>(), rng.gen::<f64>()];
        let xi = rng.gen_range(0.0..=SAMPLE_RADIUS) * random_unit(&mut rng);
        let w = law.evaluate(x, y, &xi)?;
        let witness = |detail: String| Witness { x, y, xi: xi.0, value: w, detail };

        let np = xi.norm_sq().sqrt().powi(p);
        let tol = 1e-12 * (1.0 + w.abs());
        let lower = np / beta - beta;
        let upper = beta * (1.0 + np);
        h3.record(lower <= w + tol && w <= upper + tol, || witness(format!("W={w} outside [{lower}, {upper}] for beta={beta}")));

        for shift in PERIODIC_SHIFTS {
            let ws = law.evaluate(x, [y[0] + shift[0], y[1] + shift[1]], &xi)?;
            h4.record((ws - w).abs() <= PERIODIC_TOL * (1.0 + w.abs()), || {
                witness(format!("shift {shift:?} changes W from {w} to {ws}"))
            });
        }

        let dy = {
            let a: f64 = rng.gen_range(0.0..std::f64::consts::TAU);
            [a.cos(), a.sin()]
        };
        let dxi = random_unit(&mut rng);
        if distance_to_interface(law, y) <= min_step.max(1e-9) {
            h1.outcome.skipped += 1;
            continue;
        }
        let mut increments = Vec::with_capacity(PROBE_STEPS as usize);
        for k in 1..=PROBE_STEPS {
            let d = 10f64.powi(-k);
            let yd = [y[0] + d * dy[0], y[1] + d * dy[1]];
            let wd = law.evaluate(x, yd, &(xi + d * dxi))?;
            increments.push((wd - w).abs());
        }
        let last = *increments.last().expect("nonempty");
        h1.record(last <= CONTINUITY_TOL * (1.0 + w.abs()), || witness(format!("increments {increments:?} do not vanish")));
    }

    Ok(HypothesisReport {
        law: law.spec(),
        p: law.p(),
        beta,
        sample_count,
        seed,
        outcomes: vec![h1.outcome, h3.outcome, h4.outcome],
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::material::{relaxed_double_well, LawFamily};

    fn outcome<'a>(r: &'a HypothesisReport, name: &str) -> &'a HypothesisOutcome {
        r.outcomes.iter().find(|o| o.name == name).unwrap()
    }

    #[test]
    fn homogeneous_passes() {
        let r = check_hypotheses(&MaterialLaw::homogeneous_quadratic(), 100, 1).unwrap();
        assert!(r.all_passed());
        assert_eq!(outcome(&r, "H4").checked, 300);
    }

    #[test]
    fn laminate_passes_and_skips_nothing_generic() {
        let law = MaterialLaw::laminate(1.0, 4.0, 0.5).unwrap();
        let r = check_hypotheses(&law, 100, 2).unwrap();
        assert!(r.all_passed(), "{r:?}");
        let h1 = outcome(&r, "H1");
        assert_eq!(h1.checked + h1.skipped, 100);
    }

    #[test]
    fn every_family_passes() {
        let laws = [
            MaterialLaw::checkerboard(1.0, 3.0, 4).unwrap(),
            MaterialLaw::double_well(1.0).unwrap(),
            relaxed_double_well(1.0).unwrap(),
            MaterialLaw::modulated(LawFamily::LaminateQuadratic { a1: 1.0, a2: 2.0, theta: 0.4, mollify: 0.01 }, 0.4).unwrap(),
        ];
        for law in laws {
            let r = check_hypotheses(&law, 500, 9).unwrap();
            assert!(r.all_passed(), "{r:?}");
        }
    }

    #[test]
    fn corrupted_beta_fails_with_witness() {
        let law = MaterialLaw::laminate(1.0, 4.0, 0.5).unwrap().with_beta(1.5).unwrap();
        let r = check_hypotheses(&law, 100, 3).unwrap();
        let h3 = outcome(&r, "H3");
        assert!(!h3.passed);
        assert!(h3.witness.is_some());
        match r.into_result() {
            Err(Error::Hypothesis { name, .. }) => assert_eq!(name, "H3"),
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn zero_samples_rejected() {
        assert!(check_hypotheses(&MaterialLaw::homogeneous_quadratic(), 0, 0).is_err());
    }

    #[test]
    fn interface_distance_uses_period() {
        let law = MaterialLaw::laminate(1.0, 4.0, 0.3).unwrap();
        assert!(distance_to_interface(&law, [0.999_999_999_9, 0.5]) < 1e-9);
        assert!((distance_to_interface(&law, [0.2, 0.5]) - 0.1).abs() < 1e-12);
        assert!(distance_to_interface(&MaterialLaw::homogeneous_quadratic(), [0.0, 0.0]).is_infinite());
    }
}
