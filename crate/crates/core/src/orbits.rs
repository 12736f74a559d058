//! Characteristics `ξ̈ = −DV(ξ)`: integration, homoclinic shooting, tail
//! asymptotics near the maximum, and the Lyapunov–Perron construction of the
//! strong-stable orbit in the local quadratic model.

use std::f64::consts::PI;
use std::io::Write;

use nalgebra::Matrix2;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::potential::{local_quadratic, lambda_proof, CriticalData, Point, PotentialSpec};
use crate::quadrature::adaptive;

/// A smooth potential with derivatives.
pub trait Field: Sync {
    fn value(&self, x: &Point) -> f64;
    fn gradient(&self, x: &Point) -> Point;
    fn hessian(&self, x: &Point) -> Matrix2<f64>;
}

impl Field for PotentialSpec {
    fn value(&self, x: &Point) -> f64 {
        PotentialSpec::value(self, x)
    }
    fn gradient(&self, x: &Point) -> Point {
        PotentialSpec::gradient(self, x)
    }
    fn hessian(&self, x: &Point) -> Matrix2<f64> {
        self.derivatives(x).1
    }
}

/// `W(x) = −½(a² x₁² + b² x₂²)`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct QuadraticModel {
    pub a: f64,
    pub b: f64,
}

impl Field for QuadraticModel {
    fn value(&self, x: &Point) -> f64 {
        -0.5 * (self.a * self.a * x.x * x.x + self.b * self.b * x.y * x.y)
    }
    fn gradient(&self, x: &Point) -> Point {
        Point::new(-self.a * self.a * x.x, -self.b * self.b * x.y)
    }
    fn hessian(&self, _: &Point) -> Matrix2<f64> {
        Matrix2::new(-self.a * self.a, 0.0, 0.0, -self.b * self.b)
    }
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct Orbit {
    pub times: Vec<f64>,
    pub positions: Vec<[f64; 2]>,
    pub velocities: Vec<[f64; 2]>,
    /// `½|ξ̇|² + V(ξ)` per sample.
    pub energies: Vec<f64>,
    /// Energy at the first sample.
    pub energy: f64,
}

fn arr(p: Point) -> [f64; 2] {
    [p.x, p.y]
}

fn pt(a: [f64; 2]) -> Point {
    Point::new(a[0], a[1])
}

impl Orbit {
    fn push<F: Field + ?Sized>(&mut self, field: &F, t: f64, x: Point, v: Point) {
        let e = 0.5 * v.norm_squared() + field.value(&x);
        if self.times.is_empty() {
            self.energy = e;
        }
        self.times.push(t);
        self.positions.push(arr(x));
        self.velocities.push(arr(v));
        self.energies.push(e);
    }

    pub fn len(&self) -> usize {
        self.times.len()
    }

    pub fn is_empty(&self) -> bool {
        self.times.is_empty()
    }

    pub fn max_energy_drift(&self) -> f64 {
        self.energies
            .iter()
            .map(|e| (e - self.energy).abs())
            .fold(0.0, f64::max)
    }

    /// Samples `ξ(t)` with zero velocities filled by finite differences; for
    /// synthetic tails.
    pub fn from_positions(times: Vec<f64>, positions: Vec<[f64; 2]>) -> Self {
        let n = times.len();
        let velocities = (0..n)
            .map(|k| {
                let (i, j) = (k.saturating_sub(1), (k + 1).min(n - 1));
                let dt = times[j] - times[i];
                if dt == 0.0 {
                    [0.0, 0.0]
                } else {
                    [
                        (positions[j][0] - positions[i][0]) / dt,
                        (positions[j][1] - positions[i][1]) / dt,
                    ]
                }
            })
            .collect();
        Orbit {
            times,
            positions,
            velocities,
            energies: vec![0.0; n],
            energy: 0.0,
        }
    }

    /// Time reversal `ξ(−t)`, re-indexed to increasing times.
    pub fn reversed(&self) -> Orbit {
        let t_end = self.times.last().copied().unwrap_or(0.0);
        let mut out = Orbit::default();
        for k in (0..self.len()).rev() {
            out.times.push(t_end - self.times[k]);
            out.positions.push(self.positions[k]);
            out.velocities.push([-self.velocities[k][0], -self.velocities[k][1]]);
            out.energies.push(self.energies[k]);
        }
        out.energy = out.energies.first().copied().unwrap_or(0.0);
        out
    }

    pub fn write_csv<W: Write>(&self, mut out: W) -> Result<()> {
        writeln!(out, "t,x1,x2,v1,v2,energy")?;
        for k in 0..self.len() {
            let (x, v) = (self.positions[k], self.velocities[k]);
            writeln!(
                out,
                "{:.16e},{:.16e},{:.16e},{:.16e},{:.16e},{:.16e}",
                self.times[k], x[0], x[1], v[0], v[1], self.energies[k]
            )?;
        }
        Ok(())
    }
}

// Fourth-order symmetric composition of leapfrog steps.
const Y1: f64 = 1.351_207_191_959_657_6;
const Y0: f64 = -1.702_414_383_919_315_3;

struct Stepper<'a, F: Field + ?Sized> {
    field: &'a F,
    energy: f64,
    project: bool,
}

impl<F: Field + ?Sized> Stepper<'_, F> {
    fn step(&self, x: &mut Point, v: &mut Point, dt: f64) {
        for (i, &w) in [Y1, Y0, Y1].iter().enumerate() {
            let before = if i == 0 { 0.5 * w } else { 0.5 * (w + [Y1, Y0, Y1][i - 1]) };
            *x += *v * (before * dt);
            *v -= self.field.gradient(x) * (w * dt);
        }
        *x += *v * (0.5 * Y1 * dt);
        if self.project {
            let target = 2.0 * (self.energy - self.field.value(x));
            let s = v.norm();
            if target > 0.0 && s > 0.0 {
                *v *= target.sqrt() / s;
            }
        }
    }
}

#[derive(Clone, Copy, Debug)]
pub struct IntegrateOptions {
    /// Rescale the speed to the initial energy after every step.
    pub project: bool,
    /// `BlowUp` once `|ξ|∞` exceeds this.
    pub bound: f64,
}

impl Default for IntegrateOptions {
    fn default() -> Self {
        Self {
            project: true,
            bound: 50.0,
        }
    }
}

pub fn integrate_characteristic<F: Field + ?Sized>(
    field: &F,
    x0: [f64; 2],
    v0: [f64; 2],
    t_end: f64,
    dt: f64,
    opts: IntegrateOptions,
) -> Result<Orbit> {
    if !(dt > 0.0 && dt <= 1e-2) || !(t_end >= 0.0) {
        return Err(Error::InvalidInput(format!("need 0 < dt ≤ 1e-2 and T ≥ 0, got dt={dt}, T={t_end}")));
    }
    let steps = (t_end / dt).ceil().max(1.0) as usize;
    let h = t_end / steps as f64;
    let (mut x, mut v) = (pt(x0), pt(v0));
    let stepper = Stepper {
        field,
        energy: 0.5 * v.norm_squared() + field.value(&x),
        project: opts.project,
    };
    let mut orbit = Orbit::default();
    orbit.push(field, 0.0, x, v);
    for k in 1..=steps {
        stepper.step(&mut x, &mut v, h);
        let t = k as f64 * h;
        if x.amax() > opts.bound || !x.iter().all(|c| c.is_finite()) {
            return Err(Error::BlowUp { t });
        }
        orbit.push(field, t, x, v);
    }
    Ok(orbit)
}

/// Local quadratic data at the maximizer of a normalized potential, without
/// the distinct-eigenvalue requirement.
pub fn local_critical(spec: &PotentialSpec) -> CriticalData {
    let (_, norm) = spec.normalized();
    let m = Point::new(norm.maximizer[0], norm.maximizer[1]);
    let (_, h) = spec.derivatives(&m);
    let (a, b, va, vb) = local_quadratic(&h);
    CriticalData::from_curvatures(norm.maximizer, a, b, arr(va), arr(vb))
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum DirectionTag {
    AGeneric,
    BExceptional,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct LimitingDirection {
    pub direction: [f64; 2],
    pub tag: DirectionTag,
    /// Angle between the fitted direction and the returned eigendirection.
    pub residual: f64,
}

fn nearest_eigendirection(u: Point, crit: &CriticalData) -> LimitingDirection {
    let cands = [
        (crit.va(), DirectionTag::AGeneric),
        (-crit.va(), DirectionTag::AGeneric),
        (crit.vb(), DirectionTag::BExceptional),
        (-crit.vb(), DirectionTag::BExceptional),
    ];
    let (d, tag, ang) = cands
        .iter()
        .map(|(d, t)| (*d, *t, u.dot(d).clamp(-1.0, 1.0).acos()))
        .min_by(|a, b| a.2.total_cmp(&b.2))
        .unwrap();
    LimitingDirection {
        direction: arr(d),
        tag,
        residual: ang,
    }
}

/// Direction of `ξ(t) − x*` over the last decade of decay toward the nearest
/// lattice translate `x*` of the maximizer.
pub fn limiting_direction(orbit: &Orbit, crit: &CriticalData) -> Result<LimitingDirection> {
    let last = *orbit
        .positions
        .last()
        .ok_or_else(|| Error::NotConverging("empty orbit".into()))?;
    let m = crit.maximizer;
    let anchor = Point::new(
        m[0] + (last[0] - m[0]).round(),
        m[1] + (last[1] - m[1]).round(),
    );
    let rel: Vec<Point> = orbit.positions.iter().map(|p| pt(*p) - anchor).collect();
    let r_end = rel.last().unwrap().norm();
    if r_end == 0.0 {
        return Err(Error::NotConverging("tail sits on the maximizer".into()));
    }
    let start = rel.iter().rposition(|x| x.norm() >= 10.0 * r_end).ok_or_else(|| {
        Error::NotConverging("tail does not decay over a full decade".into())
    })?;
    let tail = &rel[start..];
    if tail.windows(2).any(|w| w[1].norm() > w[0].norm()) {
        return Err(Error::NotConverging("|ξ| is not monotone over the tail".into()));
    }
    Ok(nearest_eigendirection(tail.last().unwrap().normalize(), crit))
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct HomoclinicRecord {
    pub homology: [i64; 2],
    pub action: f64,
    /// `∫|ξ̇|² dt` over the integrated arc alone.
    pub arc_action: f64,
    /// Quadratic-model actions inside the departure and arrival balls.
    pub tail_actions: [f64; 2],
    pub launch_angle: f64,
    /// Distance from the last sample to the target lattice point.
    pub terminal_gap: f64,
    /// `(backward, forward)` limiting directions.
    pub limiting_dirs: [[f64; 2]; 2],
    pub r0: f64,
    #[serde(skip)]
    pub orbit: Orbit,
}

#[derive(Clone, Copy, Debug)]
pub struct ShootOptions {
    pub dt: f64,
    pub scan: usize,
    pub angle_tol: f64,
}

impl Default for ShootOptions {
    fn default() -> Self {
        Self {
            dt: 1e-3,
            scan: 1440,
            angle_tol: 1e-10,
        }
    }
}

struct Shot {
    connected: bool,
    signed_miss: f64,
    orbit: Option<Orbit>,
}

struct Shooter<'a> {
    spec: &'a PotentialSpec,
    crit: CriticalData,
    a: f64,
    b: f64,
    target: Point,
    w: [i64; 2],
    r0: f64,
    max_arc: f64,
    opts: ShootOptions,
}

impl Shooter<'_> {
    fn m(&self) -> Point {
        pt(self.crit.maximizer)
    }

    fn launch(&self, phi: f64) -> (Point, Point) {
        let (y1, y2) = (self.r0 * phi.cos(), self.r0 * phi.sin());
        let (va, vb) = (self.crit.va(), self.crit.vb());
        let x = self.m() + va * y1 + vb * y2;
        let mut v = va * (self.a * y1) + vb * (self.b * y2);
        let speed = (-2.0 * self.spec.value(&x)).max(0.0).sqrt();
        if v.norm() > 0.0 {
            v *= speed / v.norm();
        }
        (x, v)
    }

    fn fire(&self, phi: f64, keep: bool) -> Shot {
        let (mut x, mut v) = self.launch(phi);
        let stepper = Stepper {
            field: self.spec,
            energy: 0.0,
            project: true,
        };
        let mut orbit = keep.then(Orbit::default);
        if let Some(o) = orbit.as_mut() {
            o.push(self.spec, 0.0, x, v);
        }
        let m = self.m();
        let reach = (self.w[0] as f64).hypot(self.w[1] as f64) + 2.0;
        let (mut best, mut best_sign) = (f64::INFINITY, 0.0);
        let mut arc = 0.0;
        let dt = self.opts.dt;
        let mut t = 0.0;
        while arc < self.max_arc && t < 200.0 {
            let prev = x;
            stepper.step(&mut x, &mut v, dt);
            t += dt;
            arc += (x - prev).norm();
            if let Some(o) = orbit.as_mut() {
                o.push(self.spec, t, x, v);
            }
            let d = (self.target - x).norm();
            if d < best {
                best = d;
                let c = v.x * (self.target.y - x.y) - v.y * (self.target.x - x.x);
                best_sign = if c >= 0.0 { 1.0 } else { -1.0 };
            }
            if d < self.r0 {
                return Shot {
                    connected: true,
                    signed_miss: 0.0,
                    orbit,
                };
            }
            let rel = x - m;
            let u = Point::new(rel.x.round(), rel.y.round());
            if (u.x != 0.0 || u.y != 0.0) && (rel - u).norm() < self.r0 {
                break;
            }
            if rel.norm() > reach || (best < 0.3 && d > 2.0 * best + 0.2) {
                break;
            }
        }
        Shot {
            connected: false,
            signed_miss: best_sign * best,
            orbit,
        }
    }

    fn bisect(&self, mut lo: f64, mut hi: f64, mut f_lo: f64) -> Option<f64> {
        while hi - lo > self.opts.angle_tol {
            let mid = 0.5 * (lo + hi);
            let s = self.fire(mid, false);
            if s.connected {
                return Some(mid);
            }
            if (s.signed_miss >= 0.0) == (f_lo >= 0.0) {
                lo = mid;
                f_lo = s.signed_miss;
            } else {
                hi = mid;
            }
        }
        let mid = 0.5 * (lo + hi);
        self.fire(mid, false).connected.then_some(mid)
    }

    fn eigen_coords(&self, d: Point) -> (f64, f64) {
        (d.dot(&self.crit.va()), d.dot(&self.crit.vb()))
    }

    fn tail_action(&self, d: Point) -> f64 {
        let (y1, y2) = self.eigen_coords(d);
        0.5 * (self.a * y1 * y1 + self.b * y2 * y2)
    }

    fn record(&self, phi: f64) -> HomoclinicRecord {
        let orbit = self.fire(phi, true).orbit.unwrap_or_default();
        let n = orbit.len();
        let mut arc_action = 0.0;
        for k in 1..n {
            let s0 = pt(orbit.velocities[k - 1]).norm_squared();
            let s1 = pt(orbit.velocities[k]).norm_squared();
            arc_action += 0.5 * (s0 + s1) * (orbit.times[k] - orbit.times[k - 1]);
        }
        let start = pt(orbit.positions[0]) - self.m();
        let end = pt(orbit.positions[n - 1]) - self.target;
        let tails = [self.tail_action(start), self.tail_action(end)];
        let dir = |d: Point| {
            let (y1, y2) = self.eigen_coords(d);
            if y1.abs() > 1e-12 * d.norm() {
                arr(self.crit.va() * y1.signum())
            } else {
                arr(self.crit.vb() * y2.signum())
            }
        };
        let backward = limiting_direction(&orbit.reversed(), &self.crit)
            .map(|l| l.direction)
            .unwrap_or_else(|_| dir(start));
        let forward = limiting_direction(&orbit, &self.crit)
            .map(|l| l.direction)
            .unwrap_or_else(|_| dir(end));
        HomoclinicRecord {
            homology: self.w,
            action: arc_action + tails[0] + tails[1],
            arc_action,
            tail_actions: tails,
            launch_angle: phi,
            terminal_gap: end.norm(),
            limiting_dirs: [backward, forward],
            r0: self.r0,
            orbit,
        }
    }
}

/// Zero-energy orbit from the maximizer to its translate by `w`, found by
/// bisection on the launch angle along the linearized unstable manifold.
/// Among all connections found the least action wins; ties go to the smaller
/// angle.
pub fn shoot_homoclinic(spec: &PotentialSpec, w: [i64; 2], r0: f64, opts: ShootOptions) -> Result<HomoclinicRecord> {
    if !crate::metric::primitive(w) {
        return Err(Error::InvalidInput(format!("class {w:?} is not primitive")));
    }
    if !(1e-4..=1e-2).contains(&r0) {
        return Err(Error::InvalidInput(format!("r0 = {r0} outside [1e-4, 1e-2]")));
    }
    let crit = local_critical(spec);
    let (a, b) = (crit.a(), crit.b());
    let wn = (w[0] as f64).hypot(w[1] as f64);
    let shooter = Shooter {
        spec,
        target: pt(crit.maximizer) + Point::new(w[0] as f64, w[1] as f64),
        crit,
        a,
        b,
        w,
        r0,
        max_arc: 10.0 * wn,
        opts,
    };
    let n = opts.scan.max(8);
    let angles: Vec<f64> = (0..n).map(|k| 2.0 * PI * k as f64 / n as f64).collect();
    let shots: Vec<(bool, f64)> = angles
        .par_iter()
        .map(|&phi| {
            let s = shooter.fire(phi, false);
            (s.connected, s.signed_miss)
        })
        .collect();
    let mut brackets = Vec::new();
    for k in 0..n {
        let j = (k + 1) % n;
        let (hi_angle, _) = if j == 0 { (2.0 * PI, 0) } else { (angles[j], j) };
        if shots[k].0 {
            brackets.push((angles[k], angles[k], 0.0));
        } else if !shots[j].0
            && shots[k].1 * shots[j].1 < 0.0
            && shots[k].1.abs() < 0.5
            && shots[j].1.abs() < 0.5
        {
            brackets.push((angles[k], hi_angle, shots[k].1));
        }
    }
    let roots: Vec<f64> = brackets
        .par_iter()
        .filter_map(|&(lo, hi, f)| if lo == hi { Some(lo) } else { shooter.bisect(lo, hi, f) })
        .collect();
    let mut best: Option<HomoclinicRecord> = None;
    for phi in roots {
        let rec = shooter.record(phi.rem_euclid(2.0 * PI));
        let better = match &best {
            None => true,
            Some(b) => {
                rec.action < b.action - 1e-12
                    || ((rec.action - b.action).abs() <= 1e-12 && rec.launch_angle < b.launch_angle)
            }
        };
        if better {
            best = Some(rec);
        }
    }
    best.ok_or(Error::NoConnection { m: w[0], n: w[1] })
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DecayReport {
    /// Constant used in the bound.
    pub c: f64,
    /// Measured `min (2|DV|² − 2 ξ̇ᵀD²V ξ̇) / |ξ̇|²` along the samples, square-rooted.
    pub dominance: f64,
    pub dominance_ok: bool,
    /// Smallest `h(0)e^{−ct} + h(T)e^{−c(T−t)} − h(t)` over samples.
    pub worst_margin: f64,
    pub slack: f64,
    pub holds: bool,
    /// Rate and prefactor of the log-linear fit `|ξ − x*| + |ξ̇| ≤ M e^{−λt}`.
    pub fit_rate: f64,
    pub fit_prefactor: f64,
}

pub const DECAY_SLACK: f64 = 1e-6;

/// Quadratic-dominance constant `c` on the samples:
/// `h'' = 2|DV|² − 2ξ̇ᵀD²Vξ̇ ≥ c² h` for `h = |ξ̇|²`.
pub fn dominance_constant<F: Field + ?Sized>(field: &F, orbit: &Orbit) -> f64 {
    let mut c2 = f64::INFINITY;
    for k in 0..orbit.len() {
        let (x, v) = (pt(orbit.positions[k]), pt(orbit.velocities[k]));
        let h = v.norm_squared();
        if h == 0.0 {
            continue;
        }
        let g = field.gradient(&x);
        let hess = field.hessian(&x);
        let num = 2.0 * g.norm_squared() - 2.0 * v.dot(&(hess * v));
        c2 = c2.min(num / h);
    }
    if c2.is_finite() {
        c2.max(0.0).sqrt()
    } else {
        0.0
    }
}

/// Checks the two-sided exponential bound on `h(t) = |ξ̇(t)|²` over the whole
/// orbit, and fits the decay of `|ξ − anchor| + |ξ̇|`.
pub fn decay_check<F: Field + ?Sized>(field: &F, orbit: &Orbit, c: f64, anchor: [f64; 2]) -> DecayReport {
    let dominance = dominance_constant(field, orbit);
    let n = orbit.len();
    let h: Vec<f64> = orbit.velocities.iter().map(|v| pt(*v).norm_squared()).collect();
    let (t0, t1) = (orbit.times[0], orbit.times[n - 1]);
    let mut worst = f64::INFINITY;
    for k in 0..n {
        let t = orbit.times[k] - t0;
        let bound = h[0] * (-c * t).exp() + h[n - 1] * (-c * (t1 - t0 - t)).exp();
        worst = worst.min(bound - h[k]);
    }
    let (mut sx, mut sy, mut sxx, mut sxy, mut cnt) = (0.0, 0.0, 0.0, 0.0, 0.0);
    let logs: Vec<(f64, f64)> = (0..n)
        .filter_map(|k| {
            let g = (pt(orbit.positions[k]) - pt(anchor)).norm() + pt(orbit.velocities[k]).norm();
            (g > 0.0).then(|| (orbit.times[k] - t0, g.ln()))
        })
        .collect();
    for &(t, l) in &logs {
        sx += t;
        sy += l;
        sxx += t * t;
        sxy += t * l;
        cnt += 1.0;
    }
    let denom = cnt * sxx - sx * sx;
    let slope = if denom > 0.0 { (cnt * sxy - sx * sy) / denom } else { 0.0 };
    let rate = -slope;
    let prefactor = logs
        .iter()
        .map(|&(t, l)| (l + rate * t).exp())
        .fold(0.0, f64::max);
    DecayReport {
        c,
        dominance,
        dominance_ok: dominance + 1e-12 >= c,
        worst_margin: worst,
        slack: DECAY_SLACK,
        holds: worst >= -DECAY_SLACK,
        fit_rate: rate,
        fit_prefactor: prefactor,
    }
}

/// Samples of `orbit` within `radius` of `anchor` at its start or end.
pub fn tail_segment(orbit: &Orbit, anchor: [f64; 2], radius: f64, forward: bool) -> Orbit {
    let inside = |k: usize| (pt(orbit.positions[k]) - pt(anchor)).norm() <= radius;
    let n = orbit.len();
    let range: Vec<usize> = if forward {
        let first = (0..n).rev().take_while(|&k| inside(k)).last().unwrap_or(n);
        (first..n).collect()
    } else {
        (0..n).take_while(|&k| inside(k)).collect()
    };
    let mut out = Orbit::default();
    for k in range {
        out.times.push(orbit.times[k]);
        out.positions.push(orbit.positions[k]);
        out.velocities.push(orbit.velocities[k]);
        out.energies.push(orbit.energies[k]);
    }
    out.energy = out.energies.first().copied().unwrap_or(0.0);
    out
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct OverlapReport {
    /// Angle between the forward direction of the first record and the
    /// backward direction of the second.
    pub angle: f64,
    pub flagged: bool,
}

pub fn direction_overlap_probe(forward: [f64; 2], backward: [f64; 2]) -> OverlapReport {
    let (f, b) = (pt(forward).normalize(), pt(backward).normalize());
    let angle = f.dot(&b).clamp(-1.0, 1.0).acos();
    OverlapReport {
        angle,
        flagged: angle < 1e-3,
    }
}

pub fn records_overlap(rec1: &HomoclinicRecord, rec2: &HomoclinicRecord) -> OverlapReport {
    direction_overlap_probe(rec1.limiting_dirs[1], rec2.limiting_dirs[0])
}

/// Quadratic nonlinearity `F_i(x) = c_i0 x₁² + c_i1 x₁x₂ + c_i2 x₂²`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct QuadraticNonlinearity {
    pub f1: [f64; 3],
    pub f2: [f64; 3],
}

impl QuadraticNonlinearity {
    fn eval(c: &[f64; 3], x: [f64; 2]) -> f64 {
        c[0] * x[0] * x[0] + c[1] * x[0] * x[1] + c[2] * x[1] * x[1]
    }

    pub fn apply(&self, x: [f64; 2]) -> [f64; 2] {
        [Self::eval(&self.f1, x), Self::eval(&self.f2, x)]
    }

    /// Operator norm bound of `DF(x)` by its Frobenius norm.
    pub fn jacobian_norm(&self, x: [f64; 2]) -> f64 {
        let g = |c: &[f64; 3]| [2.0 * c[0] * x[0] + c[1] * x[1], c[1] * x[0] + 2.0 * c[2] * x[1]];
        let (r1, r2) = (g(&self.f1), g(&self.f2));
        (r1[0] * r1[0] + r1[1] * r1[1] + r2[0] * r2[0] + r2[1] * r2[1]).sqrt()
    }

    /// Largest `r ≤ cap` with `sup_{|x| ≤ r} |DF| ≤ k`, by the homogeneity of `DF`.
    pub fn radius_for(&self, k: f64, cap: f64) -> f64 {
        let unit = (0..360)
            .map(|i| {
                let t = i as f64 * PI / 180.0;
                self.jacobian_norm([t.cos(), t.sin()])
            })
            .fold(0.0, f64::max);
        if unit == 0.0 {
            cap
        } else {
            (k / unit).min(cap)
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LPProblem {
    pub a: f64,
    pub b: f64,
    pub nonlinearity: QuadraticNonlinearity,
    pub theta: f64,
    pub lambda0: f64,
    pub t_max: f64,
    pub step: f64,
    pub tolerance: f64,
    pub max_iterations: usize,
}

impl LPProblem {
    /// `F = (α x₂², 0)` with the default horizon `40/a`.
    pub fn quadratic_example(a: f64, b: f64, alpha: f64, theta: f64) -> Self {
        Self {
            a,
            b,
            nonlinearity: QuadraticNonlinearity {
                f1: [0.0, 0.0, alpha],
                f2: [0.0, 0.0, 0.0],
            },
            theta,
            lambda0: a + 0.1 * (b.min(2.0 * a) - a),
            t_max: 40.0 / a,
            step: 5e-3,
            tolerance: 1e-12,
            max_iterations: 200,
        }
    }

    /// `(b − a) / (2(λ₀ − a)(b − λ₀))`.
    pub fn derivative_bound(&self) -> f64 {
        (self.b - self.a) / (2.0 * (self.lambda0 - self.a) * (self.b - self.lambda0))
    }

    /// Radius on which `|DF|` stays below the derivative bound, capped at 1.
    pub fn r0(&self) -> f64 {
        self.nonlinearity.radius_for(self.derivative_bound(), 1.0)
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LPReport {
    pub iterations: usize,
    /// Weighted sup-norm gaps `sup e^{λ₀t}|ξ_{m+1} − ξ_m|`.
    pub gaps: Vec<f64>,
    /// Ratios of successive nonzero gaps.
    pub factors: Vec<f64>,
    pub max_factor: f64,
    pub r0: f64,
    /// `sup_t |ξ_m(t)| e^{bt} / |θ|` over all iterates.
    pub envelope: f64,
    /// Bound on the neglected `∫_{T_max}^∞` part of the first component.
    pub tail_bound: f64,
}

/// Picard iteration of `T_θ(ξ)(t) = (−∫_t^∞ e^{−a(t−s)}F₁ ds, θe^{−bt} + ∫_0^t e^{−b(t−s)}F₂ ds)`
/// on a uniform grid; each step's integrals use Simpson's rule with the
/// half-step value.
pub fn lyapunov_perron_orbit(prob: &LPProblem) -> Result<(Orbit, LPReport)> {
    let (a, b, l0) = (prob.a, prob.b, prob.lambda0);
    if !(0.0 < a && a < b) {
        return Err(Error::InvalidInput("need 0 < a < b".into()));
    }
    if !(a < l0 && l0 < b.min(2.0 * a)) {
        return Err(Error::InvalidInput(format!("λ₀ = {l0} outside (a, min(b, 2a))")));
    }
    let r0 = prob.r0();
    if prob.theta.abs() > r0 / 4.0 {
        return Err(Error::InvalidInput(format!("|θ| = {} exceeds r₀/4 = {}", prob.theta.abs(), r0 / 4.0)));
    }
    let n = (prob.t_max / prob.step).round() as usize;
    if n < 4 {
        return Err(Error::InvalidInput("time grid needs at least four steps".into()));
    }
    let h = prob.t_max / n as f64;
    let m = n + 1;
    let ts: Vec<f64> = (0..m).map(|j| h * j as f64).collect();
    let mut xi = vec![[0.0f64; 2]; m];
    let (ea, eb) = ((a * h).exp(), (-b * h).exp());
    let mut gaps = Vec::new();
    let mut factors = Vec::new();
    let mut envelope = 0.0f64;
    let mut iterations = 0;
    loop {
        if iterations >= prob.max_iterations {
            return Err(Error::ContractionFailure {
                ratio: factors.last().copied().unwrap_or(1.0),
            });
        }
        iterations += 1;
        let f: Vec<[f64; 2]> = xi.iter().map(|x| prob.nonlinearity.apply(*x)).collect();
        let mut next = vec![[0.0f64; 2]; m];
        // Second component forward: I(t+h) = e^{−bh} I(t) + ∫_t^{t+h} e^{−b(t+h−s)} F₂.
        let mut i2 = 0.0;
        next[0][1] = prob.theta;
        for k in 0..n {
            i2 = eb * i2 + cell_integral(n, k, h, |j| (-b * (ts[k + 1] - ts[j])).exp() * f[j][1]);
            next[k + 1][1] = prob.theta * (-b * ts[k + 1]).exp() + i2;
        }
        // First component backward: J(t) = ∫_t^{t+h} e^{a(s−t)} F₁ + e^{ah} J(t+h).
        let mut j1 = 0.0;
        for k in (0..n).rev() {
            j1 = ea * j1 + cell_integral(n, k, h, |j| (a * (ts[j] - ts[k])).exp() * f[j][0]);
            next[k][0] = -j1;
        }
        let gap = (0..m)
            .map(|j| {
                let d = [next[j][0] - xi[j][0], next[j][1] - xi[j][1]];
                d[0].hypot(d[1]) * (l0 * ts[j]).exp()
            })
            .fold(0.0, f64::max);
        if let Some(&prev) = gaps.last() {
            if prev > 0.0 && gap > 0.0 {
                let ratio: f64 = gap / prev;
                if ratio > 0.9 {
                    return Err(Error::ContractionFailure { ratio });
                }
                factors.push(ratio);
            }
        }
        gaps.push(gap);
        if prob.theta != 0.0 {
            for j in 0..m {
                envelope = envelope.max(next[j][0].hypot(next[j][1]) * (b * ts[j]).exp() / prob.theta.abs());
            }
        }
        xi = next;
        if gap <= prob.tolerance {
            break;
        }
    }
    let last = prob.nonlinearity.apply(xi[m - 1])[0].abs();
    let tail_bound = last / (2.0 * l0 - a).max(1e-12);
    let mut orbit = Orbit::default();
    let model = QuadraticModel { a, b };
    for j in 0..m {
        let x = Point::new(xi[j][0], xi[j][1]);
        orbit.push(&model, ts[j], x, Point::zeros());
    }
    for j in 0..m {
        let k0 = j.saturating_sub(1);
        let k1 = (j + 1).min(m - 1);
        let dt = ts[k1] - ts[k0];
        orbit.velocities[j] = [(xi[k1][0] - xi[k0][0]) / dt, (xi[k1][1] - xi[k0][1]) / dt];
    }
    let max_factor = factors.iter().copied().fold(0.0, f64::max);
    Ok((
        orbit,
        LPReport {
            iterations,
            gaps,
            factors,
            max_factor,
            r0,
            envelope,
            tail_bound,
        },
    ))
}

/// Fourth-order integral over `[t_k, t_{k+1}]` from four neighbouring
/// samples `g(j)`, one-sided at the ends of the grid `0..=n`.
fn cell_integral<G: Fn(usize) -> f64>(n: usize, k: usize, h: f64, g: G) -> f64 {
    let (base, w): (usize, [f64; 4]) = if k == 0 {
        (0, [9.0, 19.0, -5.0, 1.0])
    } else if k + 1 == n {
        (k - 2, [1.0, -5.0, 19.0, 9.0])
    } else {
        (k - 1, [-1.0, 13.0, 13.0, -1.0])
    };
    h / 24.0 * (0..4).map(|i| w[i] * g(base + i)).sum::<f64>()
}

/// `½[a(s₁² + s₂²) + b(β₁²s₁² + β₂²s₂²)]`, with each `βᵢ ∈ (0, λ]` for the
/// smaller of the two aperture constants.
pub fn near_origin_action(a: f64, b: f64, s1: f64, s2: f64, beta1: f64, beta2: f64) -> Result<f64> {
    let lambda = lambda_proof(a, b);
    for beta in [beta1, beta2] {
        if !(beta > 0.0 && beta <= lambda) {
            return Err(Error::BadBeta { beta, lambda });
        }
    }
    if s1 > 0.0 || s2 < 0.0 {
        return Err(Error::InvalidInput("need s1 ≤ 0 ≤ s2".into()));
    }
    Ok(two_ray_value(a, b, s1, s2, beta1, beta2))
}

/// The two-ray expression without admissibility checks.
pub fn two_ray_value(a: f64, b: f64, s1: f64, s2: f64, beta1: f64, beta2: f64) -> f64 {
    0.5 * (a * (s1 * s1 + s2 * s2) + b * (beta1 * beta1 * s1 * s1 + beta2 * beta2 * s2 * s2))
}

/// `∫ ½|η̇|² − W(η)` along the rays `η₁(t) = (s₁e^{−at}, −β₁s₁e^{−bt})`,
/// `t ≥ 0`, and `η₂(t) = (s₂e^{at}, β₂s₂e^{bt})`, `t ≤ 0`, truncated at `40/a`.
pub fn two_ray_quadrature(a: f64, b: f64, s1: f64, s2: f64, beta1: f64, beta2: f64) -> f64 {
    let model = QuadraticModel { a, b };
    let lag = |x: Point, v: Point| 0.5 * v.norm_squared() - model.value(&x);
    let t_end = 40.0 / a;
    let ray1 = |t: f64| {
        let (ea, eb) = ((-a * t).exp(), (-b * t).exp());
        lag(
            Point::new(s1 * ea, -beta1 * s1 * eb),
            Point::new(-a * s1 * ea, b * beta1 * s1 * eb),
        )
    };
    let ray2 = |t: f64| {
        let (ea, eb) = ((a * t).exp(), (b * t).exp());
        lag(
            Point::new(s2 * ea, beta2 * s2 * eb),
            Point::new(a * s2 * ea, b * beta2 * s2 * eb),
        )
    };
    adaptive(&ray1, 0.0, t_end, 1e-13) + adaptive(&ray2, -t_end, 0.0, 1e-13)
}

/// Zero-energy hyperbolic orbit of the quadratic model,
/// `ξ(t) = (ν(e^{at} − e^{−at}), c e^{bt} + d e^{−bt})` with `ν²a² = cd b²`,
/// on `[−t1, t2]`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct HyperbolicConnection {
    pub a: f64,
    pub b: f64,
    pub c: f64,
    pub d: f64,
    pub t1: f64,
    pub t2: f64,
}

impl HyperbolicConnection {
    pub fn nu(&self) -> f64 {
        (self.c * self.d).sqrt() * self.b / self.a
    }

    pub fn position(&self, t: f64) -> Point {
        let (a, b, nu) = (self.a, self.b, self.nu());
        Point::new(nu * ((a * t).exp() - (-a * t).exp()), self.c * (b * t).exp() + self.d * (-b * t).exp())
    }

    pub fn velocity(&self, t: f64) -> Point {
        let (a, b, nu) = (self.a, self.b, self.nu());
        Point::new(
            nu * a * ((a * t).exp() + (-a * t).exp()),
            b * (self.c * (b * t).exp() - self.d * (-b * t).exp()),
        )
    }

    pub fn action(&self) -> f64 {
        let model = QuadraticModel { a: self.a, b: self.b };
        let f = |t: f64| 0.5 * self.velocity(t).norm_squared() - model.value(&self.position(t));
        adaptive(&f, -self.t1, self.t2, 1e-13)
    }

    /// Two-ray value through the origin between the same endpoints.
    pub fn two_ray(&self) -> f64 {
        let (p, q) = (self.position(-self.t1), self.position(self.t2));
        let (s1, s2) = (p.x, q.x);
        two_ray_value(self.a, self.b, s1, s2, (p.y / s1).abs(), (q.y / s2).abs())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn quadratic_decay_closed_form() {
        let m = QuadraticModel { a: 1.0, b: 2.0 };
        let o = integrate_characteristic(&m, [1.0, 0.0], [-1.0, 0.0], 5.0, 1e-3, IntegrateOptions::default()).unwrap();
        for k in 0..o.len() {
            let t = o.times[k];
            assert!((o.positions[k][0] - (-t).exp()).abs() < 1e-8, "t={t}");
            assert_eq!(o.positions[k][1], 0.0);
        }
    }

    #[test]
    fn energy_conserved() {
        let spec = PotentialSpec::perturbed_separable(0.3);
        for project in [true, false] {
            let o = integrate_characteristic(
                &spec,
                [0.2, 0.3],
                [0.7, -0.4],
                10.0,
                1e-3,
                IntegrateOptions { project, bound: 50.0 },
            )
            .unwrap();
            assert!(o.max_energy_drift() < 1e-9, "{}", o.max_energy_drift());
        }
    }

    #[test]
    fn invariant_axis() {
        let spec = PotentialSpec::separable(1.0, 1.0);
        let o = integrate_characteristic(&spec, [0.3, 0.0], [1.1, 0.0], 10.0, 1e-3, IntegrateOptions::default()).unwrap();
        assert!(o.positions.iter().all(|p| p[1].abs() < 1e-12));
    }

    #[test]
    fn blow_up_and_bad_step() {
        let m = QuadraticModel { a: 1.0, b: 2.0 };
        let r = integrate_characteristic(&m, [1.0, 0.0], [1.0, 0.0], 10.0, 1e-3, IntegrateOptions { project: true, bound: 5.0 });
        assert!(matches!(r, Err(Error::BlowUp { .. })));
        assert!(integrate_characteristic(&m, [1.0, 0.0], [1.0, 0.0], 1.0, 0.1, IntegrateOptions::default()).is_err());
    }

    fn model_crit(a: f64, b: f64) -> CriticalData {
        CriticalData::from_curvatures([0.0, 0.0], a, b, [1.0, 0.0], [0.0, 1.0])
    }

    #[test]
    fn limiting_directions() {
        let crit = model_crit(1.0, 2.0);
        let ts: Vec<f64> = (0..=800).map(|k| k as f64 * 0.01).collect();
        let slow = Orbit::from_positions(ts.clone(), ts.iter().map(|t| [(-t).exp(), 1e-4 * (-2.0 * t).exp()]).collect());
        let d = limiting_direction(&slow, &crit).unwrap();
        assert_eq!(d.direction, [1.0, 0.0]);
        assert_eq!(d.tag, DirectionTag::AGeneric);
        let fast = Orbit::from_positions(ts.clone(), ts.iter().map(|t| [0.0, (-2.0 * t).exp()]).collect());
        let d = limiting_direction(&fast, &crit).unwrap();
        assert_eq!(d.direction, [0.0, 1.0]);
        assert_eq!(d.tag, DirectionTag::BExceptional);
        let grow = Orbit::from_positions(ts.clone(), ts.iter().map(|t| [1e-4 * t.exp(), 0.0]).collect());
        assert!(matches!(limiting_direction(&grow, &crit), Err(Error::NotConverging(_))));
    }

    #[test]
    fn generic_start_aligns_with_slow_direction() {
        let m = QuadraticModel { a: 1.0, b: 2.0 };
        // Zero-energy start on the stable manifold with both modes present.
        let x0 = [0.5, 0.5];
        let v0 = [-0.5, -1.0];
        let o = integrate_characteristic(&m, x0, v0, 7.0, 1e-3, IntegrateOptions::default()).unwrap();
        let d = limiting_direction(&o, &model_crit(1.0, 2.0));
        let d = d.unwrap();
        assert_eq!(d.direction, [1.0, 0.0]);
        assert!(d.residual < 1e-2);
    }

    #[test]
    fn decay_bound_on_model() {
        let m = QuadraticModel { a: 1.0, b: 2.0 };
        let ts: Vec<f64> = (0..=500).map(|k| k as f64 * 0.01).collect();
        let mut o = Orbit::from_positions(ts.clone(), ts.iter().map(|t| [(-t).exp(), 0.0]).collect());
        o.velocities = ts.iter().map(|t| [-(-t).exp(), 0.0]).collect();
        let r = decay_check(&m, &o, 1.0, [0.0, 0.0]);
        assert!(r.holds && r.worst_margin > 0.0);
        assert!(r.dominance >= 1.0);
        assert!((r.fit_rate - 1.0).abs() < 1e-9);
        let rest = Orbit::from_positions(ts.clone(), vec![[0.0, 0.0]; ts.len()]);
        let r = decay_check(&m, &rest, 1.0, [0.0, 0.0]);
        assert!(r.holds && r.worst_margin == 0.0);
    }

    #[test]
    fn lp_exact_example() {
        for theta in [0.1, -0.1] {
            let prob = LPProblem::quadratic_example(1.0, 2.0, 3.0, theta);
            let (o, rep) = lyapunov_perron_orbit(&prob).unwrap();
            let mut err = 0.0f64;
            for k in 0..o.len() {
                let t = o.times[k];
                let e1 = -3.0 * theta * theta / 3.0 * (-4.0 * t).exp();
                let e2 = theta * (-2.0 * t).exp();
                err = err.max((o.positions[k][0] - e1).abs()).max((o.positions[k][1] - e2).abs());
            }
            assert!(err <= 1e-8, "{err}");
            assert!(rep.max_factor <= 0.5);
            assert!(rep.envelope <= 3.0);
        }
    }

    #[test]
    fn lp_zero_theta() {
        let (o, _) = lyapunov_perron_orbit(&LPProblem::quadratic_example(1.0, 2.0, 3.0, 0.0)).unwrap();
        assert!(o.positions.iter().all(|p| *p == [0.0, 0.0]));
    }

    #[test]
    fn lp_rejects_window() {
        let mut p = LPProblem::quadratic_example(1.0, 2.0, 3.0, 0.1);
        p.lambda0 = 2.5;
        assert!(lyapunov_perron_orbit(&p).is_err());
        p.lambda0 = 1.1;
        p.theta = 5.0;
        assert!(lyapunov_perron_orbit(&p).is_err());
    }

    #[test]
    fn near_origin_formula() {
        assert_eq!(near_origin_action(1.0, 2.0, 0.0, 0.0, 0.1, 0.1).unwrap(), 0.0);
        let v = near_origin_action(1.0, 2.0, -1.0, 1.0, 0.2, 0.2).unwrap();
        assert!((v - 1.08).abs() < 1e-12);
        let q = two_ray_quadrature(1.0, 2.0, -1.0, 1.0, 0.2, 0.2);
        assert!((q - v).abs() < 1e-8);
        assert!(matches!(near_origin_action(1.0, 2.0, -1.0, 1.0, 0.3, 0.2), Err(Error::BadBeta { .. })));
    }

    #[test]
    fn hyperbolic_connection_has_zero_energy_and_exceeds_two_rays() {
        let h = HyperbolicConnection { a: 1.0, b: 2.0, c: 0.02, d: 0.03, t1: 3.0, t2: 4.0 };
        let m = QuadraticModel { a: 1.0, b: 2.0 };
        for t in [-3.0, 0.0, 2.5] {
            let e = 0.5 * h.velocity(t).norm_squared() + m.value(&h.position(t));
            assert!(e.abs() < 1e-10);
        }
        assert!(h.action() > h.two_ray());
    }

    #[test]
    fn overlap_probe() {
        assert!(direction_overlap_probe([1.0, 0.0], [1.0, 0.0]).flagged);
        let r = direction_overlap_probe([-1.0, 0.0], [1.0, 0.0]);
        assert!(!r.flagged && (r.angle - PI).abs() < 1e-12);
    }

    #[test]
    fn orbit_csv_and_reverse() {
        let m = QuadraticModel { a: 1.0, b: 2.0 };
        let o = integrate_characteristic(&m, [1.0, 0.0], [-1.0, 0.0], 0.01, 1e-3, IntegrateOptions::default()).unwrap();
        let mut buf = Vec::new();
        o.write_csv(&mut buf).unwrap();
        let s = String::from_utf8(buf).unwrap();
        assert!(s.starts_with("t,x1,x2,v1,v2,energy\n"));
        assert_eq!(s.lines().count(), o.len() + 1);
        let r = o.reversed();
        assert_eq!(r.positions[0], *o.positions.last().unwrap());
        assert!(r.times.windows(2).all(|w| w[1] > w[0]));
    }

    #[test]
    fn separable_axis_homoclinic() {
        let spec = PotentialSpec::separable(1.0, 1.0);
        let rec = shoot_homoclinic(&spec, [0, 1], 1e-3, ShootOptions::default()).unwrap();
        assert!((rec.action - 4.0 / PI).abs() < 1e-6, "{}", rec.action);
        assert!(rec.orbit.positions.iter().all(|p| p[0].abs() <= 1e-8));
        let energy = rec
            .orbit
            .positions
            .iter()
            .zip(&rec.orbit.velocities)
            .map(|(x, v)| (0.5 * (v[0] * v[0] + v[1] * v[1]) + spec.value(&pt(*x))).abs())
            .fold(0.0, f64::max);
        assert!(energy <= 1e-8, "{energy}");
    }

    #[test]
    fn separable_has_no_skew_connection() {
        let spec = PotentialSpec::separable(1.0, 1.0);
        assert!(matches!(
            shoot_homoclinic(&spec, [2, 1], 1e-3, ShootOptions::default()),
            Err(Error::NoConnection { .. })
        ));
    }

    #[test]
    fn perturbed_action_matches_metric() {
        let spec = PotentialSpec::perturbed_separable(0.3);
        let rec = shoot_homoclinic(&spec, [1, -1], 1e-3, ShootOptions::default()).unwrap();
        let sigma = crate::metric::support_value(&spec, [1, -1], 256, 2).unwrap();
        assert!((rec.action - sigma).abs() <= 3e-2, "{} vs {sigma}", rec.action);
        assert!(rec.terminal_gap < 1e-2);
    }
}
