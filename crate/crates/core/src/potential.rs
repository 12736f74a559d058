//! Periodic potentials on the plane given as finite real Fourier sums.
//!
//! A potential is `V(x) = offset + Σ amp · cos(2π k·x + phase)` with integer
//! wavevectors `k`, so it is exactly `Z²`-periodic and all derivatives are
//! available in closed form. Most of the toolkit assumes the normalization
//! `max V = 0` with a unique, non-degenerate maximizer at the lattice points.

use std::f64::consts::PI;

use nalgebra::{Matrix2, SymmetricEigen, Vector2};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub type Point = Vector2<f64>;

const TWO_PI: f64 = 2.0 * PI;

/// Relative tolerance below which two Hessian eigenvalues are considered equal.
pub const EIGEN_TOL: f64 = 1e-8;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct FourierTerm {
    pub amp: f64,
    pub k: [i64; 2],
    #[serde(default)]
    pub phase: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PotentialSpec {
    pub terms: Vec<FourierTerm>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub template: Option<String>,
    #[serde(default)]
    pub offset: f64,
}

/// Outcome of [`PotentialSpec::normalized`]: where the maximum was found and what
/// was left over after shifting.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Normalization {
    pub maximizer: [f64; 2],
    pub shift: f64,
    /// `V(maximizer)` after the shift; zero up to rounding.
    pub residual: f64,
}

impl PotentialSpec {
    pub fn new(terms: Vec<FourierTerm>, offset: f64) -> Self {
        Self {
            terms,
            template: None,
            offset,
        }
    }

    /// `V ≡ value`.
    pub fn constant(value: f64) -> Self {
        Self::new(Vec::new(), value)
    }

    /// `V = amp1 (cos 2πx₁ − 1) + amp2 (cos 2πx₂ − 1)`.
    pub fn separable(amp1: f64, amp2: f64) -> Self {
        let terms = vec![
            FourierTerm { amp: amp1, k: [1, 0], phase: 0.0 },
            FourierTerm { amp: amp2, k: [0, 1], phase: 0.0 },
        ];
        Self {
            terms,
            template: Some("separable".into()),
            offset: -(amp1 + amp2),
        }
    }

    /// The default separable potential plus `eps · cos 2π(x₁ + x₂)`, renormalized.
    pub fn perturbed_separable(eps: f64) -> Self {
        let mut spec = Self::separable(1.0, 1.0);
        spec.terms.push(FourierTerm { amp: eps, k: [1, 1], phase: 0.0 });
        spec.offset -= eps;
        spec.template = Some("perturbed-separable".into());
        spec
    }

    /// Anisotropic separable base `(cos 2πx₁ − 1) + 2(cos 2πx₂ − 1)` minus
    /// `depth · (1 − cos 2πx₁)(1 − cos 2πx₂)`: the potential is unchanged on the
    /// lattice lines and pushed down by a barrier everywhere off them.
    pub fn annulus_barrier(depth: f64) -> Self {
        let (a1, a2) = (1.0, 2.0);
        let terms = vec![
            FourierTerm { amp: a1 + depth, k: [1, 0], phase: 0.0 },
            FourierTerm { amp: a2 + depth, k: [0, 1], phase: 0.0 },
            FourierTerm { amp: -0.5 * depth, k: [1, 1], phase: 0.0 },
            FourierTerm { amp: -0.5 * depth, k: [1, -1], phase: 0.0 },
        ];
        Self {
            terms,
            template: Some("annulus-barrier".into()),
            offset: -(a1 + a2 + depth),
        }
    }

    /// Multiplies `V` by `factor` (offset included).
    pub fn scaled(&self, factor: f64) -> Self {
        let mut out = self.clone();
        for t in &mut out.terms {
            t.amp *= factor;
        }
        out.offset *= factor;
        out
    }

    pub fn value(&self, x: &Point) -> f64 {
        self.offset
            + self
                .terms
                .iter()
                .map(|t| t.amp * (phase_of(t, x)).cos())
                .sum::<f64>()
    }

    pub fn gradient(&self, x: &Point) -> Point {
        let mut g = Point::zeros();
        for t in &self.terms {
            let s = -t.amp * phase_of(t, x).sin() * TWO_PI;
            g.x += s * t.k[0] as f64;
            g.y += s * t.k[1] as f64;
        }
        g
    }

    /// Gradient and Hessian; the Hessian is assembled from `k kᵀ` so it is
    /// symmetric bit-for-bit.
    pub fn derivatives(&self, x: &Point) -> (Point, Matrix2<f64>) {
        let mut g = Point::zeros();
        let (mut hxx, mut hxy, mut hyy) = (0.0, 0.0, 0.0);
        for t in &self.terms {
            let th = phase_of(t, x);
            let (s, c) = th.sin_cos();
            let (k1, k2) = (t.k[0] as f64, t.k[1] as f64);
            let gs = -t.amp * s * TWO_PI;
            g.x += gs * k1;
            g.y += gs * k2;
            let hc = -t.amp * c * TWO_PI * TWO_PI;
            hxx += hc * k1 * k1;
            hxy += hc * k1 * k2;
            hyy += hc * k2 * k2;
        }
        (g, Matrix2::new(hxx, hxy, hxy, hyy))
    }

    pub fn min_on_grid(&self, n: usize) -> f64 {
        let mut m = f64::INFINITY;
        for i in 0..n {
            for j in 0..n {
                m = m.min(self.value(&grid_point(i, j, n)));
            }
        }
        m
    }

    /// Largest and smallest grid value, with the location of the largest.
    fn scan(&self, n: usize) -> (Point, f64, f64) {
        let mut best = (Point::zeros(), f64::NEG_INFINITY);
        let mut lo = f64::INFINITY;
        for i in 0..n {
            for j in 0..n {
                let x = grid_point(i, j, n);
                let v = self.value(&x);
                if v > best.1 {
                    best = (x, v);
                }
                lo = lo.min(v);
            }
        }
        (best.0, best.1, lo)
    }

    /// Shifts the offset so that `max V = 0`: coarse grid scan followed by
    /// Newton polishing of the maximizer.
    pub fn normalized(&self) -> (PotentialSpec, Normalization) {
        let (x0, _, _) = self.scan(256);
        let xm = polish_maximum(self, x0);
        let shift = self.value(&xm);
        let mut out = self.clone();
        out.offset -= shift;
        let residual = out.value(&xm);
        let wrapped = wrap_unit(&xm);
        (
            out,
            Normalization {
                maximizer: [wrapped.x, wrapped.y],
                shift,
                residual,
            },
        )
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }

    pub fn from_json(s: &str) -> Result<Self> {
        let spec: Self = serde_json::from_str(s)?;
        for t in &spec.terms {
            if !t.amp.is_finite() || !t.phase.is_finite() {
                return Err(Error::InvalidInput("non-finite Fourier coefficient".into()));
            }
        }
        Ok(spec)
    }
}

fn phase_of(t: &FourierTerm, x: &Point) -> f64 {
    TWO_PI * (t.k[0] as f64 * x.x + t.k[1] as f64 * x.y) + t.phase
}

fn grid_point(i: usize, j: usize, n: usize) -> Point {
    Point::new(i as f64 / n as f64, j as f64 / n as f64)
}

/// Representative of `x` in `[-1/2, 1/2)²`.
pub fn wrap_centered(x: &Point) -> Point {
    x.map(|c| c - (c + 0.5).floor())
}

/// Representative of `x` in `[0, 1)²`.
pub fn wrap_unit(x: &Point) -> Point {
    x.map(|c| {
        let r = c - c.floor();
        if r >= 1.0 {
            0.0
        } else {
            r
        }
    })
}

pub fn torus_distance(x: &Point, y: &Point) -> f64 {
    wrap_centered(&(x - y)).norm()
}

/// Newton iteration on `DV = 0` started from a grid maximum, with a
/// backtracking fallback to gradient ascent when the Hessian is not negative
/// definite.
pub fn polish_maximum(spec: &PotentialSpec, start: Point) -> Point {
    let mut x = start;
    for _ in 0..100 {
        let (g, h) = spec.derivatives(&x);
        if g.norm() < 1e-14 {
            break;
        }
        let det = h.determinant();
        let step = if h[(0, 0)] < 0.0 && det > 0.0 {
            -(h.try_inverse().unwrap() * g)
        } else {
            g * 1e-3
        };
        let v0 = spec.value(&x);
        let mut t = 1.0;
        let mut moved = false;
        while t > 1e-12 {
            let cand = x + step * t;
            if spec.value(&cand) >= v0 - 1e-15 {
                x = cand;
                moved = true;
                break;
            }
            t *= 0.5;
        }
        if !moved {
            break;
        }
    }
    x
}

/// Eigenstructure of `D²V` at the maximizer together with the two candidate
/// values of the near-origin aperture constant.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CriticalData {
    pub maximizer: [f64; 2],
    /// `a²`, the smaller curvature (Hessian eigenvalue `−a²`).
    pub eig_small: f64,
    /// `b²`, the larger curvature.
    pub eig_large: f64,
    pub v_a: [f64; 2],
    pub v_b: [f64; 2],
    pub lambda_statement: f64,
    pub lambda_proof: f64,
}

impl CriticalData {
    pub fn from_curvatures(maximizer: [f64; 2], a: f64, b: f64, v_a: [f64; 2], v_b: [f64; 2]) -> Self {
        Self {
            maximizer,
            eig_small: a * a,
            eig_large: b * b,
            v_a,
            v_b,
            lambda_statement: lambda_statement(a, b),
            lambda_proof: lambda_proof(a, b),
        }
    }

    pub fn a(&self) -> f64 {
        self.eig_small.sqrt()
    }

    pub fn b(&self) -> f64 {
        self.eig_large.sqrt()
    }

    pub fn va(&self) -> Point {
        Point::new(self.v_a[0], self.v_a[1])
    }

    pub fn vb(&self) -> Point {
        Point::new(self.v_b[0], self.v_b[1])
    }
}

/// `λ = (a/b) √((b−a)/(b+a))`.
pub fn lambda_statement(a: f64, b: f64) -> f64 {
    a / b * ((b - a) / (b + a)).sqrt()
}

/// `λ² = a²(b−a) / (b²(b+4a))`, the smaller constant for which the
/// comparison estimate actually closes.
pub fn lambda_proof(a: f64, b: f64) -> f64 {
    (a * a * (b - a) / (b * b * (b + 4.0 * a))).sqrt()
}

/// Eigen-decomposition of the (negated) Hessian at a maximum without
/// distinctness checks: returns `(a, b, v_a, v_b)` with `a ≤ b`.
pub fn local_quadratic(hessian: &Matrix2<f64>) -> (f64, f64, Point, Point) {
    let eig = SymmetricEigen::new(*hessian);
    // -a² is the eigenvalue closest to zero.
    let (ia, ib) = if eig.eigenvalues[0] >= eig.eigenvalues[1] {
        (0, 1)
    } else {
        (1, 0)
    };
    let a = (-eig.eigenvalues[ia]).max(0.0).sqrt();
    let b = (-eig.eigenvalues[ib]).max(0.0).sqrt();
    let va = canonical_sign(eig.eigenvectors.column(ia).into_owned());
    let mut vb = canonical_sign(eig.eigenvectors.column(ib).into_owned());
    // Force an orthonormal, positively oriented frame.
    let perp = Point::new(-va.y, va.x);
    if perp.dot(&vb) < 0.0 {
        vb = -perp;
    } else {
        vb = perp;
    }
    (a, b, va, vb)
}

fn canonical_sign(v: Point) -> Point {
    let v = v.normalize();
    let lead = if v.x.abs() > 1e-12 { v.x } else { v.y };
    if lead < 0.0 {
        -v
    } else {
        v
    }
}

/// Polished local maxima of `V` found on an `n × n` grid, sorted by value
/// (largest first) and deduplicated on the torus.
fn local_maxima(spec: &PotentialSpec, n: usize) -> Vec<(Point, f64)> {
    let vals: Vec<f64> = (0..n * n)
        .map(|idx| spec.value(&grid_point(idx / n, idx % n, n)))
        .collect();
    let at = |i: usize, j: usize| vals[(i % n) * n + (j % n)];
    let mut found: Vec<(Point, f64)> = Vec::new();
    for i in 0..n {
        for j in 0..n {
            let v = at(i, j);
            let mut is_max = true;
            'nb: for di in [n - 1, 0, 1] {
                for dj in [n - 1, 0, 1] {
                    if (di, dj) != (0, 0) && at(i + di, j + dj) > v {
                        is_max = false;
                        break 'nb;
                    }
                }
            }
            if !is_max {
                continue;
            }
            let x = polish_maximum(spec, grid_point(i, j, n));
            let vx = spec.value(&x);
            if found.iter().all(|(y, _)| torus_distance(&x, y) > 1e-6) {
                found.push((wrap_unit(&x), vx));
            }
        }
    }
    found.sort_by(|a, b| b.1.total_cmp(&a.1));
    found
}

/// Tolerance for treating a secondary maximum as tied with the global one.
const TIE_TOL: f64 = 1e-8;

pub fn critical_data(spec: &PotentialSpec) -> Result<CriticalData> {
    let maxima = local_maxima(spec, 128);
    let (xm, vm) = maxima[0];
    if let Some((y, vy)) = maxima.get(1) {
        if vm - vy <= TIE_TOL {
            return Err(Error::MultipleMaxima { x: y.x, y: y.y, value: *vy });
        }
    }
    let (_, h) = spec.derivatives(&xm);
    let (a, b, va, vb) = local_quadratic(&h);
    let scale = (a * a).max(b * b).max(1.0);
    if a * a <= EIGEN_TOL * scale {
        return Err(Error::DegenerateMaximum(format!(
            "Hessian eigenvalue {:.3e} is not negative",
            -a * a
        )));
    }
    if (b * b - a * a) <= EIGEN_TOL * scale {
        return Err(Error::DegenerateMaximum(format!(
            "Hessian eigenvalues coincide ({:.6e}, {:.6e})",
            -a * a,
            -b * b
        )));
    }
    Ok(CriticalData::from_curvatures([xm.x, xm.y], a, b, [va.x, va.y], [vb.x, vb.y]))
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AssumptionReport {
    pub grid_n: usize,
    pub maximizer: [f64; 2],
    pub max_value: f64,
    pub unique_maximum: bool,
    pub distinct_eigenvalues: bool,
    pub negative_definite: bool,
    /// `min −V` over grid nodes other than the maximizer.
    pub min_gap: f64,
    pub failures: Vec<String>,
}

impl AssumptionReport {
    pub fn passed(&self) -> bool {
        self.failures.is_empty()
    }
}

pub fn check_assumption_m(spec: &PotentialSpec, grid_n: usize) -> Result<AssumptionReport> {
    if grid_n < 64 {
        return Err(Error::InvalidInput(format!("grid_n must be at least 64, got {grid_n}")));
    }
    let maxima = local_maxima(spec, grid_n);
    let (xm, vm) = maxima[0];
    let unique_maximum = maxima.get(1).is_none_or(|(_, v)| vm - v > TIE_TOL);

    let (_, h) = spec.derivatives(&xm);
    let (a, b, _, _) = local_quadratic(&h);
    let scale = (a * a).max(b * b).max(1.0);
    let negative_definite = a * a > EIGEN_TOL * scale;
    let distinct_eigenvalues = b * b - a * a > EIGEN_TOL * scale;

    let mut min_gap = f64::INFINITY;
    let excl = 0.5 / grid_n as f64;
    for i in 0..grid_n {
        for j in 0..grid_n {
            let x = grid_point(i, j, grid_n);
            if torus_distance(&x, &xm) > excl {
                min_gap = min_gap.min(vm - spec.value(&x));
            }
        }
    }

    let mut failures = Vec::new();
    if !unique_maximum {
        let (y, _) = maxima[1];
        failures.push(format!("MultipleMaxima: second maximum at ({:.6}, {:.6})", y.x, y.y));
    }
    if !negative_definite {
        failures.push("DegenerateMaximum: Hessian not negative definite".into());
    }
    if !distinct_eigenvalues {
        failures.push(format!(
            "DistinctEigenvalues: a² = {:.6e}, b² = {:.6e}",
            a * a,
            b * b
        ));
    }
    if min_gap.is_nan() || min_gap <= 0.0 {
        failures.push(format!("ZeroSet: min −V away from the maximizer is {min_gap:.3e}"));
    }
    Ok(AssumptionReport {
        grid_n,
        maximizer: [xm.x, xm.y],
        max_value: vm,
        unique_maximum,
        distinct_eigenvalues,
        negative_definite,
        min_gap,
        failures,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn p(x: f64, y: f64) -> Point {
        Point::new(x, y)
    }

    #[test]
    fn separable_values() {
        let v = PotentialSpec::separable(1.0, 1.0);
        assert_eq!(v.value(&p(0.0, 0.0)), 0.0);
        assert!((v.value(&p(0.5, 0.5)) + 4.0).abs() < 1e-14);
    }

    #[test]
    fn periodic_under_integer_shifts() {
        let v = PotentialSpec::annulus_barrier(0.7);
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        for _ in 0..100 {
            let x = p(rng.gen_range(-2.0..2.0), rng.gen_range(-2.0..2.0));
            let a = v.value(&x);
            assert!((a - v.value(&(x + p(1.0, 0.0)))).abs() < 1e-12);
            assert!((a - v.value(&(x + p(0.0, -3.0)))).abs() < 1e-12);
        }
    }

    #[test]
    fn hessian_at_maximum() {
        let four_pi2 = 4.0 * PI * PI;
        let (g, h) = PotentialSpec::separable(1.0, 1.0).derivatives(&p(0.0, 0.0));
        assert_eq!(g, Point::zeros());
        assert!((h[(0, 0)] + four_pi2).abs() < 1e-12 && (h[(1, 1)] + four_pi2).abs() < 1e-12);
        assert_eq!(h[(0, 1)], 0.0);
        let (_, h) = PotentialSpec::separable(1.0, 4.0).derivatives(&p(0.0, 0.0));
        assert!((h[(1, 1)] + 4.0 * four_pi2).abs() < 1e-11);
    }

    #[test]
    fn gradient_matches_central_differences() {
        let v = PotentialSpec::perturbed_separable(0.3);
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let step = 1e-5;
        for _ in 0..20 {
            let x = p(rng.gen(), rng.gen());
            let (g, h) = v.derivatives(&x);
            for d in 0..2 {
                let mut e = Point::zeros();
                e[d] = step;
                let fd = (v.value(&(x + e)) - v.value(&(x - e))) / (2.0 * step);
                assert!((fd - g[d]).abs() < 1e-6, "{fd} vs {}", g[d]);
                let fdg = (v.gradient(&(x + e)) - v.gradient(&(x - e))) / (2.0 * step);
                assert!((fdg - h.column(d)).norm() < 1e-5);
            }
            assert_eq!(h[(0, 1)], h[(1, 0)]);
        }
    }

    #[test]
    fn critical_data_anisotropic() {
        let cd = critical_data(&PotentialSpec::separable(1.0, 4.0)).unwrap();
        assert!((cd.a() - 2.0 * PI).abs() < 1e-9);
        assert!((cd.b() - 4.0 * PI).abs() < 1e-9);
        assert!((cd.va() - p(1.0, 0.0)).norm() < 1e-12);
        assert!((cd.vb() - p(0.0, 1.0)).norm() < 1e-12);
        assert!(cd.lambda_proof < cd.lambda_statement);
    }

    #[test]
    fn lambda_constants() {
        assert!((lambda_statement(1.0, 2.0) - 0.5 * (1.0f64 / 3.0).sqrt()).abs() < 1e-15);
        assert!((lambda_statement(1.0, 2.0) - 0.288675).abs() < 1e-6);
        assert!((lambda_proof(1.0, 2.0) - (1.0f64 / 24.0).sqrt()).abs() < 1e-15);
        assert!((lambda_proof(1.0, 2.0) - 0.204124).abs() < 1e-6);
    }

    #[test]
    fn isotropic_maximum_is_degenerate() {
        let err = critical_data(&PotentialSpec::separable(1.0, 1.0)).unwrap_err();
        assert!(matches!(err, Error::DegenerateMaximum(_)));
        let rep = check_assumption_m(&PotentialSpec::separable(1.0, 1.0), 64).unwrap();
        assert!(!rep.distinct_eigenvalues);
        assert!(rep.unique_maximum);
    }

    #[test]
    fn two_maxima_are_flagged() {
        // cos 4πx₁ has maxima at x₁ = 0 and x₁ = 1/2.
        let v = PotentialSpec::new(
            vec![
                FourierTerm { amp: 1.0, k: [2, 0], phase: 0.0 },
                FourierTerm { amp: 2.0, k: [0, 1], phase: 0.0 },
            ],
            -3.0,
        );
        assert!(matches!(critical_data(&v), Err(Error::MultipleMaxima { .. })));
        let rep = check_assumption_m(&v, 64).unwrap();
        assert!(!rep.unique_maximum);
        assert!(rep.min_gap <= 1e-12);
        assert!(!rep.passed());
    }

    #[test]
    fn assumption_m_holds_for_templates() {
        for v in [
            PotentialSpec::separable(1.0, 4.0),
            PotentialSpec::perturbed_separable(0.3),
            PotentialSpec::annulus_barrier(1.0),
        ] {
            let rep = check_assumption_m(&v, 64).unwrap();
            assert!(rep.passed(), "{:?}: {:?}", v.template, rep.failures);
            assert!(rep.min_gap > 0.0);
        }
    }

    #[test]
    fn normalization_reaches_zero() {
        let mut raw = PotentialSpec::perturbed_separable(0.3);
        raw.offset += 0.37;
        raw.terms[0].phase = 0.2;
        let (v, norm) = raw.normalized();
        assert!(norm.residual.abs() < 1e-14);
        let n = 1024;
        let mut m = f64::NEG_INFINITY;
        for i in 0..n {
            for j in 0..n {
                m = m.max(v.value(&grid_point(i, j, n)));
            }
        }
        assert!(m <= 1e-10 && m > -1e-4, "{m}");
    }

    #[test]
    fn json_shape() {
        let v = PotentialSpec::separable(1.0, 2.0);
        let s = v.to_json().unwrap();
        let raw: serde_json::Value = serde_json::from_str(&s).unwrap();
        assert_eq!(raw["terms"][1]["k"], serde_json::json!([0, 1]));
        assert_eq!(raw["template"], "separable");
        assert_eq!(PotentialSpec::from_json(&s).unwrap(), v);
        let bare = PotentialSpec::from_json(r#"{"terms":[{"amp":1.0,"k":[1,0]}]}"#).unwrap();
        assert_eq!(bare.offset, 0.0);
    }
}
