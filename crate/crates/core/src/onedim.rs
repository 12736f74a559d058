//! Exact one-dimensional effective Hamiltonian.
//!
//! For `½p² + h(x)` on the circle with `max h = 0` the effective Hamiltonian
//! vanishes on `[−L, L]`, `L = ∫₀¹ √(−2h)`, and outside it is the unique
//! `H > 0` with `|p| = ∫₀¹ √(2(H − h))`. Sums over the two coordinates give the
//! effective Hamiltonian of separable planar potentials, which serves as the
//! reference for every other engine.

use std::f64::consts::PI;

use serde::{Deserialize, Serialize};

use crate::potential::{FourierTerm, PotentialSpec};
use crate::quadrature;

const TWO_PI: f64 = 2.0 * PI;
const QUAD_TOL: f64 = 1e-13;
const ROOT_TOL: f64 = 1e-12;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Term1 {
    pub amp: f64,
    pub k: i64,
    #[serde(default)]
    pub phase: f64,
}

/// `h(x) = offset + Σ amp cos(2πkx + phase)`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct OneDimPotential {
    pub terms: Vec<Term1>,
    pub offset: f64,
}

impl OneDimPotential {
    pub fn zero() -> Self {
        Self { terms: Vec::new(), offset: 0.0 }
    }

    /// `amp · (cos 2πx − 1)`.
    pub fn cosine(amp: f64) -> Self {
        Self {
            terms: vec![Term1 { amp, k: 1, phase: 0.0 }],
            offset: -amp,
        }
    }

    /// Shifts the offset so that `max h = 0`.
    pub fn normalized(&self) -> Self {
        let (x, _) = self.maximum();
        let mut out = self.clone();
        out.offset -= self.value(x);
        out
    }

    pub fn value(&self, x: f64) -> f64 {
        self.offset
            + self
                .terms
                .iter()
                .map(|t| t.amp * (TWO_PI * t.k as f64 * x + t.phase).cos())
                .sum::<f64>()
    }

    fn d1(&self, x: f64) -> f64 {
        self.terms
            .iter()
            .map(|t| -t.amp * TWO_PI * t.k as f64 * (TWO_PI * t.k as f64 * x + t.phase).sin())
            .sum()
    }

    fn d2(&self, x: f64) -> f64 {
        self.terms
            .iter()
            .map(|t| {
                let w = TWO_PI * t.k as f64;
                -t.amp * w * w * (w * x + t.phase).cos()
            })
            .sum()
    }

    fn is_constant(&self) -> bool {
        self.terms.iter().all(|t| t.amp == 0.0 || t.k == 0)
    }

    fn polish(&self, mut x: f64) -> f64 {
        for _ in 0..60 {
            let (g, h) = (self.d1(x), self.d2(x));
            if g.abs() < 1e-15 || h >= 0.0 {
                break;
            }
            let step = -g / h;
            x += step;
            if step.abs() < 1e-16 {
                break;
            }
        }
        x
    }

    /// Polished global maximizer in `[0, 1)` and the maximum value.
    pub fn maximum(&self) -> (f64, f64) {
        self.maxima().into_iter().next().unwrap_or((0.0, self.offset))
    }

    /// All polished local maxima, largest first.
    fn maxima(&self) -> Vec<(f64, f64)> {
        const N: usize = 4096;
        let vals: Vec<f64> = (0..N).map(|i| self.value(i as f64 / N as f64)).collect();
        let mut out: Vec<(f64, f64)> = Vec::new();
        for i in 0..N {
            let v = vals[i];
            if v >= vals[(i + N - 1) % N] && v >= vals[(i + 1) % N] {
                let x = self.polish(i as f64 / N as f64).rem_euclid(1.0);
                if out.iter().all(|(y, _)| circ_dist(x, *y) > 1e-9) {
                    out.push((x, self.value(x)));
                }
            }
        }
        out.sort_by(|a, b| b.1.total_cmp(&a.1));
        out
    }

    /// Zeros of `h` in `[0, 1)`, i.e. its maximizers when `max h = 0`.
    fn zero_set(&self) -> Vec<f64> {
        let mut z: Vec<f64> = self
            .maxima()
            .into_iter()
            .filter(|(_, v)| v.abs() <= 1e-12)
            .map(|(x, _)| x)
            .collect();
        z.sort_by(f64::total_cmp);
        z
    }

    pub fn min_value(&self) -> f64 {
        const N: usize = 4096;
        (0..N)
            .map(|i| self.value(i as f64 / N as f64))
            .fold(f64::INFINITY, f64::min)
    }

    /// `∫₀¹ f(h(x)) dx` with the period split at the zeros of `h`, where
    /// integrands of the form `√(c − h)` lose smoothness.
    fn integrate<F: Fn(f64) -> f64>(&self, cuts: &[f64], f: F) -> f64 {
        let g = |x: f64| f(self.value(x));
        cuts.windows(2)
            .map(|w| quadrature::adaptive(&g, w[0], w[1], QUAD_TOL))
            .sum()
    }

    /// Cell boundaries for [`Self::integrate`]: the zeros of `h` closed up
    /// by one period.
    fn cuts(&self) -> Vec<f64> {
        let zeros = self.zero_set();
        let mut cuts = if zeros.is_empty() { vec![0.0] } else { zeros };
        cuts.push(cuts[0] + 1.0);
        cuts
    }

    /// Lift `1 ↦ 2` of the two-dimensional embedding along coordinate `axis`.
    pub fn embed(&self, axis: usize) -> PotentialSpec {
        let terms = self
            .terms
            .iter()
            .map(|t| FourierTerm {
                amp: t.amp,
                k: if axis == 0 { [t.k, 0] } else { [0, t.k] },
                phase: t.phase,
            })
            .collect();
        PotentialSpec::new(terms, self.offset)
    }
}

fn circ_dist(x: f64, y: f64) -> f64 {
    let d = (x - y).rem_euclid(1.0);
    d.min(1.0 - d)
}

/// `V(x) = h₁(x₁) + h₂(x₂)` as a planar potential.
pub fn separable_spec(h1: &OneDimPotential, h2: &OneDimPotential) -> PotentialSpec {
    let mut spec = h1.embed(0);
    let other = h2.embed(1);
    spec.terms.extend(other.terms);
    spec.offset += other.offset;
    spec.template = Some("separable".into());
    spec
}

/// `L = ∫₀¹ √(−2h(x)) dx`.
pub fn critical_momentum(h: &OneDimPotential) -> f64 {
    if h.is_constant() {
        return (-2.0 * h.offset).max(0.0).sqrt();
    }
    h.integrate(&h.cuts(), |v| (-2.0 * v).max(0.0).sqrt())
}

/// Rotation number map `H ↦ ∫₀¹ √(2(H − h))` and its derivative.
fn momentum_of_level(h: &OneDimPotential, cuts: &[f64], level: f64) -> (f64, f64) {
    if h.is_constant() {
        let r = (2.0 * (level - h.offset)).max(0.0).sqrt();
        return (r, if r > 0.0 { 1.0 / r } else { f64::INFINITY });
    }
    let m = h.integrate(cuts, |v| (2.0 * (level - v)).max(0.0).sqrt());
    let dm = h.integrate(cuts, |v| 1.0 / (2.0 * (level - v)).max(1e-300).sqrt());
    (m, dm)
}

pub fn hbar_1d(h: &OneDimPotential, p: f64) -> f64 {
    let target = p.abs();
    if target <= critical_momentum(h) {
        return 0.0;
    }
    if h.is_constant() {
        return 0.5 * target * target + h.offset;
    }
    // The map level ↦ momentum is strictly increasing; the root lies in
    // (0, ½p² − min h].
    let (mut lo, mut hi) = (0.0, 0.5 * target * target - h.min_value());
    let cuts = h.cuts();
    let mut x = 0.5 * (lo + hi);
    for _ in 0..200 {
        let (m, dm) = momentum_of_level(h, &cuts, x);
        let f = m - target;
        if f.abs() < 1e-14 {
            break;
        }
        if f > 0.0 {
            hi = x;
        } else {
            lo = x;
        }
        if hi - lo <= ROOT_TOL {
            x = 0.5 * (lo + hi);
            break;
        }
        let newton = x - f / dm;
        x = if dm.is_finite() && newton > lo && newton < hi {
            newton
        } else {
            0.5 * (lo + hi)
        };
    }
    x
}

pub fn hbar_separable(h1: &OneDimPotential, h2: &OneDimPotential, p: [f64; 2]) -> f64 {
    hbar_1d(h1, p[0]) + hbar_1d(h2, p[1])
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn critical_momentum_closed_forms() {
        // √(2(1 − cos 2πx)) = 2|sin πx| integrates to 4/π.
        let l = critical_momentum(&OneDimPotential::cosine(1.0));
        assert!((l - 4.0 / PI).abs() < 1e-10, "{l}");
        assert_eq!(critical_momentum(&OneDimPotential::zero()), 0.0);
        let l4 = critical_momentum(&OneDimPotential::cosine(4.0));
        assert!((l4 - 8.0 / PI).abs() < 1e-10);
    }

    #[test]
    fn shifted_maximum() {
        let h = OneDimPotential {
            terms: vec![Term1 { amp: 1.0, k: 1, phase: 1.0 }],
            offset: 0.0,
        }
        .normalized();
        assert!((critical_momentum(&h) - 4.0 / PI).abs() < 1e-10);
    }

    #[test]
    fn hbar_values() {
        let h = OneDimPotential::cosine(1.0);
        assert_eq!(hbar_1d(&h, 0.0), 0.0);
        assert_eq!(hbar_1d(&h, 4.0 / PI), 0.0);
        assert!((hbar_1d(&OneDimPotential::zero(), 1.5) - 1.125).abs() < 1e-12);
        let zero = OneDimPotential::zero();
        assert_eq!(hbar_separable(&h, &h, [0.0, 0.0]), 0.0);
        assert_eq!(hbar_separable(&h, &h, [4.0 / PI, 4.0 / PI]), 0.0);
        assert!((hbar_separable(&zero, &h, [1.0, 0.0]) - 0.5).abs() < 1e-12);
    }

    #[test]
    fn root_satisfies_defining_relation() {
        let h = OneDimPotential::cosine(1.0);
        for p in [1.3, 1.5, 2.0, 3.7] {
            let hb = hbar_1d(&h, p);
            let m = quadrature::adaptive(
                &|x: f64| (2.0 * (hb - h.value(x))).sqrt(),
                0.0,
                1.0,
                1e-14,
            );
            assert!((m - p).abs() < 1e-9, "p = {p}: {m}");
            // ½p² + min h ≤ H̄ ≤ ½p² + max h
            assert!(hb <= 0.5 * p * p + 1e-12 && hb >= 0.5 * p * p - 2.0 - 1e-12);
        }
    }

    #[test]
    fn embedding_is_separable_sum() {
        let h1 = OneDimPotential::cosine(1.0);
        let h2 = OneDimPotential::cosine(2.0);
        let v = separable_spec(&h1, &h2);
        let x = crate::Point::new(0.3, 0.8);
        assert!((v.value(&x) - h1.value(0.3) - h2.value(0.8)).abs() < 1e-14);
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(32))]

        #[test]
        fn even_in_p(amp in 0.1f64..3.0, p in 0.0f64..4.0) {
            let h = OneDimPotential::cosine(amp);
            prop_assert_eq!(hbar_1d(&h, p), hbar_1d(&h, -p));
        }

        #[test]
        fn flat_exactly_on_critical_interval(amp in 0.1f64..3.0, t in 0.0f64..2.0) {
            let h = OneDimPotential::cosine(amp);
            let l = critical_momentum(&h);
            let v = hbar_1d(&h, t * l);
            if t <= 1.0 {
                prop_assert_eq!(v, 0.0);
            } else if t > 1.0 + 1e-6 {
                prop_assert!(v > 0.0);
            }
        }

        #[test]
        fn monotone_and_convex(amp in 0.1f64..3.0, p0 in 0.0f64..3.0, dp in 0.01f64..0.5) {
            let h = OneDimPotential {
                terms: vec![Term1 { amp, k: 1, phase: 0.0 }, Term1 { amp: 0.3, k: 2, phase: 0.4 }],
                offset: 0.0,
            }.normalized();
            let (a, m, b) = (hbar_1d(&h, p0), hbar_1d(&h, p0 + dp), hbar_1d(&h, p0 + 2.0 * dp));
            prop_assert!(a <= m + 1e-10 && m <= b + 1e-10);
            prop_assert!(m <= 0.5 * (a + b) + 1e-9);
        }

        #[test]
        fn monotone_in_potential(amp in 0.1f64..3.0, extra in 0.0f64..2.0, p in 0.0f64..5.0) {
            // amp(cos−1) ≥ (amp+extra)(cos−1) pointwise
            let upper = OneDimPotential::cosine(amp);
            let lower = OneDimPotential::cosine(amp + extra);
            prop_assert!(hbar_1d(&lower, p) <= hbar_1d(&upper, p) + 1e-10);
        }
    }
}
