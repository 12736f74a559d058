//! Numerical effective Hamiltonian via the large-time method.
//!
//! `w_t + ½|p + Dw|² + V = 0` is evolved on the periodic unit cell with a
//! monotone Lax–Friedrichs scheme until the time derivative `w_t` is spatially
//! constant; that constant is `−H̄(p)` and the zero-mean part of `w` is the
//! corrector `v`.

use std::io::Write;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::potential::{Point, PotentialSpec};

const CFL: f64 = 0.4;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SolverParams {
    pub grid_n: usize,
    /// Target spatial oscillation of the drift `w_t`.
    pub tol: f64,
    pub max_steps: usize,
    /// Start from the interpolated solution on the grid of half the size.
    pub warm_start: bool,
}

impl SolverParams {
    pub fn new(grid_n: usize, tol: f64) -> Self {
        Self {
            grid_n,
            tol,
            max_steps: 2_000_000,
            warm_start: true,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CorrectorField {
    pub grid_n: usize,
    pub p: [f64; 2],
    /// Row-major samples `v(i/n, j/n)` at index `i * n + j`.
    pub values: Vec<f64>,
    /// `H̄(p)`, with discretization-level negatives clamped to zero.
    pub hbar: f64,
    pub hbar_raw: f64,
    /// Sup-norm defect of the discrete cell equation.
    pub residual: f64,
    /// `residual · grid_n`: the constant in `residual ≤ C / grid_n`.
    pub residual_constant: f64,
    pub steps: usize,
    pub time: f64,
}

impl CorrectorField {
    pub fn at(&self, i: usize, j: usize) -> f64 {
        let n = self.grid_n;
        self.values[(i % n) * n + (j % n)]
    }

    /// Periodic bilinear interpolation.
    pub fn interpolate(&self, x: &Point) -> f64 {
        let n = self.grid_n as f64;
        let (sx, sy) = (x.x.rem_euclid(1.0) * n, x.y.rem_euclid(1.0) * n);
        let (i, j) = (sx.floor(), sy.floor());
        let (fx, fy) = (sx - i, sy - j);
        let (i, j) = (i as usize, j as usize);
        let v00 = self.at(i, j);
        let v10 = self.at(i + 1, j);
        let v01 = self.at(i, j + 1);
        let v11 = self.at(i + 1, j + 1);
        (1.0 - fx) * ((1.0 - fy) * v00 + fy * v01) + fx * ((1.0 - fy) * v10 + fy * v11)
    }

    pub fn oscillation(&self) -> f64 {
        let (lo, hi) = self
            .values
            .iter()
            .fold((f64::INFINITY, f64::NEG_INFINITY), |(l, h), &v| (l.min(v), h.max(v)));
        hi - lo
    }
}

#[inline(always)]
fn fmax(a: f64, b: f64) -> f64 {
    if a > b {
        a
    } else {
        b
    }
}

#[inline(always)]
fn fmin(a: f64, b: f64) -> f64 {
    if a < b {
        a
    } else {
        b
    }
}

/// Per-sweep statistics of the numerical Hamiltonian.
struct SweepStats {
    speed: [f64; 2],
    min: f64,
    max: f64,
    sum: f64,
}

/// Local Lax–Friedrichs numerical Hamiltonian. Along each axis the viscosity
/// is `θ = max(|p + q⁺|, |p + q⁻|)`, the largest `|∂H/∂q|` between the two
/// one-sided slopes, which keeps the scheme monotone.
fn lax_friedrichs(w: &[f64], pot: &[f64], n: usize, p: [f64; 2], theta_cap: f64, h: &mut [f64]) -> SweepStats {
    let inv_dx = n as f64;
    let mut st = SweepStats {
        speed: [0.0; 2],
        min: f64::INFINITY,
        max: f64::NEG_INFINITY,
        sum: 0.0,
    };
    let mut left = vec![0.0; n];
    let mut right = vec![0.0; n];
    for i in 0..n {
        let row = &w[i * n..(i + 1) * n];
        let up = &w[((i + 1) % n) * n..((i + 1) % n + 1) * n];
        let down = &w[((i + n - 1) % n) * n..((i + n - 1) % n + 1) * n];
        left[0] = row[n - 1];
        left[1..].copy_from_slice(&row[..n - 1]);
        right[..n - 1].copy_from_slice(&row[1..]);
        right[n - 1] = row[0];
        let prow = &pot[i * n..(i + 1) * n];
        let hrow = &mut h[i * n..(i + 1) * n];
        let (mut s0, mut s1, mut lo, mut hi) = (0.0f64, 0.0f64, f64::INFINITY, f64::NEG_INFINITY);
        for j in 0..n {
            let c = row[j];
            let q1p = (up[j] - c) * inv_dx;
            let q1m = (c - down[j]) * inv_dx;
            let q2p = (right[j] - c) * inv_dx;
            let q2m = (c - left[j]) * inv_dx;
            let u1 = p[0] + 0.5 * (q1p + q1m);
            let u2 = p[1] + 0.5 * (q2p + q2m);
            let th1 = fmin(fmax((p[0] + q1p).abs(), (p[0] + q1m).abs()), theta_cap);
            let th2 = fmin(fmax((p[1] + q2p).abs(), (p[1] + q2m).abs()), theta_cap);
            s0 = fmax(s0, th1);
            s1 = fmax(s1, th2);
            let v = 0.5 * (u1 * u1 + u2 * u2) - 0.5 * th1 * (q1p - q1m) - 0.5 * th2 * (q2p - q2m) + prow[j];
            hrow[j] = v;
            lo = fmin(lo, v);
            hi = fmax(hi, v);
        }
        let sum = hrow.iter().sum::<f64>();
        st.speed[0] = st.speed[0].max(s0);
        st.speed[1] = st.speed[1].max(s1);
        st.min = st.min.min(lo);
        st.max = st.max.max(hi);
        st.sum += sum;
    }
    st
}

fn sample_potential(spec: &PotentialSpec, n: usize) -> Vec<f64> {
    (0..n * n)
        .map(|idx| {
            spec.value(&Point::new(
                (idx / n) as f64 / n as f64,
                (idx % n) as f64 / n as f64,
            ))
        })
        .collect()
}

fn min_max(v: &[f64]) -> (f64, f64) {
    v.iter()
        .fold((f64::INFINITY, f64::NEG_INFINITY), |(l, h), &x| (l.min(x), h.max(x)))
}

/// Solves the cell problem at momentum `p` by the large-time method.
pub fn solve_cell(spec: &PotentialSpec, p: [f64; 2], params: &SolverParams) -> Result<CorrectorField> {
    let n = params.grid_n;
    if n < 32 || !n.is_power_of_two() {
        return Err(Error::InvalidInput(format!(
            "grid_n must be a power of two ≥ 32, got {n}"
        )));
    }
    if !(params.tol > 0.0) {
        return Err(Error::InvalidInput("tol must be positive".into()));
    }
    let pot = sample_potential(spec, n);
    let (vmin, vmax) = min_max(&pot);
    let dx = 1.0 / n as f64;
    let pnorm = (p[0] * p[0] + p[1] * p[1]).sqrt();
    let theta_cap = 2.0 * (pnorm + (2.0 * (vmax - vmin)).max(0.0).sqrt());

    // The scheme's consistency error at the maximizer is O(dx² |ΔV|) and can
    // push H̄ slightly below max V = 0 on the flat set.
    let lap_max = (0..n * n)
        .map(|idx| {
            let (_, hess) = spec.derivatives(&Point::new((idx / n) as f64 * dx, (idx % n) as f64 * dx));
            hess.trace().abs()
        })
        .fold(0.0, f64::max);
    let negative_allowance = params.tol.max(lap_max * dx * dx);
    // Bounds the first steps, before the slopes have developed.
    let speed_floor = pnorm + (2.0 * (vmax - vmin)).max(0.0).sqrt();
    let mut w = match params.warm_start && n >= 64 {
        true => {
            let coarse = SolverParams {
                grid_n: n / 2,
                ..params.clone()
            };
            match solve_cell(spec, p, &coarse) {
                Ok(c) => upsample(&c),
                Err(_) => vec![0.0; n * n],
            }
        }
        false => vec![0.0; n * n],
    };
    let mut h = vec![0.0; n * n];
    let mut time = 0.0;
    let mut last_osc = f64::INFINITY;
    for step in 0..params.max_steps {
        let st = lax_friedrichs(&w, &pot, n, p, theta_cap, &mut h);
        let osc = st.max - st.min;
        last_osc = osc;
        if osc <= params.tol && step > 0 {
            let hbar = st.sum / (n * n) as f64;
            let mean = w.iter().sum::<f64>() / (n * n) as f64;
            let values = w.iter().map(|x| x - mean).collect();
            let residual = h.iter().map(|h| (h - hbar).abs()).fold(0.0, f64::max);
            return Ok(CorrectorField {
                grid_n: n,
                p,
                values,
                hbar: clamp_hbar(hbar, negative_allowance)?,
                hbar_raw: hbar,
                residual,
                residual_constant: residual * n as f64,
                steps: step,
                time,
            });
        }
        let dt = CFL * dx / (st.speed[0] + st.speed[1]).max(speed_floor);
        for (wi, hi) in w.iter_mut().zip(&h) {
            *wi -= dt * hi;
        }
        time += dt;
        // keep w bounded; only differences matter
        if step % 1024 == 0 {
            let m = w.iter().sum::<f64>() / (n * n) as f64;
            w.iter_mut().for_each(|x| *x -= m);
        }
    }
    Err(Error::NoConvergence {
        max_steps: params.max_steps,
        drift_osc: last_osc,
    })
}

/// Corrector sampled on the grid of twice the resolution.
fn upsample(c: &CorrectorField) -> Vec<f64> {
    let n = 2 * c.grid_n;
    (0..n * n)
        .map(|idx| {
            let x = Point::new((idx / n) as f64 / n as f64, (idx % n) as f64 / n as f64);
            c.interpolate(&x)
        })
        .collect()
}

fn clamp_hbar(hbar: f64, allowance: f64) -> Result<f64> {
    if hbar >= 0.0 {
        Ok(hbar)
    } else if hbar >= -allowance {
        Ok(0.0)
    } else {
        Err(Error::InvalidInput(format!(
            "cell solver produced H̄ = {hbar:.3e} < 0 beyond tolerance"
        )))
    }
}

/// Flat-set threshold: `5e−3` at grid 128, halved per refinement.
pub fn default_eps_flat(grid_n: usize) -> f64 {
    5e-3 * 128.0 / grid_n as f64
}

/// Samples of `H̄` on the square momentum grid `[−p_max, p_max]²`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct HbarGrid {
    pub p_min: f64,
    pub p_max: f64,
    pub p_step: f64,
    /// Nodes per axis.
    pub count: usize,
    /// Row-major, `index = i₁ · count + i₂` for `p = (p_min + i₁ step, p_min + i₂ step)`;
    /// `NaN` marks nodes whose solve failed.
    pub hbar_values: Vec<f64>,
    pub residuals: Vec<f64>,
    pub potential_min: f64,
    pub potential_max: f64,
    pub params: Option<SolverParams>,
}

impl HbarGrid {
    fn layout(p_max: f64, p_step: f64) -> Result<usize> {
        if !(p_max > 0.0 && p_step > 0.0) {
            return Err(Error::InvalidInput("p box and step must be positive".into()));
        }
        let half = (p_max / p_step).round();
        if ((half * p_step) - p_max).abs() > 1e-9 * p_max {
            return Err(Error::InvalidInput(format!(
                "p_max = {p_max} is not a multiple of p_step = {p_step}"
            )));
        }
        Ok(2 * half as usize + 1)
    }

    pub fn node(&self, idx: usize) -> [f64; 2] {
        let (i, j) = (idx / self.count, idx % self.count);
        [
            self.p_min + i as f64 * self.p_step,
            self.p_min + j as f64 * self.p_step,
        ]
    }

    pub fn len(&self) -> usize {
        self.count * self.count
    }

    pub fn is_empty(&self) -> bool {
        self.count == 0
    }

    /// Index of `−p`.
    fn mirror(&self, idx: usize) -> usize {
        self.len() - 1 - idx
    }

    pub fn missing(&self) -> Vec<usize> {
        (0..self.len()).filter(|&k| self.hbar_values[k].is_nan()).collect()
    }

    /// Grid filled from a closed-form `H̄`, e.g. the separable oracle.
    pub fn from_fn<F: Fn([f64; 2]) -> f64 + Sync>(
        p_max: f64,
        p_step: f64,
        potential_range: (f64, f64),
        f: F,
    ) -> Result<Self> {
        let count = Self::layout(p_max, p_step)?;
        let mut g = Self {
            p_min: -p_max,
            p_max,
            p_step,
            count,
            hbar_values: vec![0.0; count * count],
            residuals: vec![0.0; count * count],
            potential_min: potential_range.0,
            potential_max: potential_range.1,
            params: None,
        };
        g.hbar_values = (0..g.len()).into_par_iter().map(|k| f(g.node(k))).collect();
        Ok(g)
    }

    pub fn write_csv<W: Write>(&self, mut out: W) -> Result<()> {
        writeln!(out, "p1,p2,hbar,residual")?;
        for k in 0..self.len() {
            let [p1, p2] = self.node(k);
            writeln!(
                out,
                "{:.16e},{:.16e},{:.16e},{:.16e}",
                p1, p2, self.hbar_values[k], self.residuals[k]
            )?;
        }
        Ok(())
    }

    /// Reads values back from CSV into a grid with the same layout.
    pub fn read_csv_values(&mut self, text: &str) -> Result<()> {
        let mut lines = text.lines().filter(|l| !l.starts_with('#'));
        if lines.next().map(str::trim) != Some("p1,p2,hbar,residual") {
            return Err(Error::InvalidInput("unexpected CSV header".into()));
        }
        let mut k = 0;
        for line in lines.filter(|l| !l.trim().is_empty()) {
            let f: Vec<f64> = line
                .split(',')
                .map(|x| x.trim().parse::<f64>())
                .collect::<std::result::Result<_, _>>()
                .map_err(|e| Error::InvalidInput(format!("bad CSV number: {e}")))?;
            if f.len() != 4 || k >= self.len() {
                return Err(Error::InvalidInput("CSV shape does not match grid".into()));
            }
            self.hbar_values[k] = f[2];
            self.residuals[k] = f[3];
            k += 1;
        }
        if k != self.len() {
            return Err(Error::InvalidInput("CSV has too few rows".into()));
        }
        Ok(())
    }
}

/// Solves the cell problem at every node of `[−p_max, p_max]²`. Only nodes up
/// to the centre (in row-major order) are solved; the rest are mirrored from
/// `H̄(p) = H̄(−p)`. Failed nodes are stored as `NaN`.
pub fn sweep_hbar_grid(spec: &PotentialSpec, p_max: f64, p_step: f64, params: &SolverParams) -> Result<HbarGrid> {
    let count = HbarGrid::layout(p_max, p_step)?;
    let n = params.grid_n;
    let pot = sample_potential(spec, n);
    let (vmin, vmax) = min_max(&pot);
    let mut grid = HbarGrid {
        p_min: -p_max,
        p_max,
        p_step,
        count,
        hbar_values: vec![f64::NAN; count * count],
        residuals: vec![f64::NAN; count * count],
        potential_min: vmin,
        potential_max: vmax,
        params: Some(params.clone()),
    };
    let half: Vec<usize> = (0..grid.len()).filter(|&k| k <= grid.mirror(k)).collect();
    let solved: Vec<(f64, f64)> = half
        .par_iter()
        .map(|&k| match solve_cell(spec, grid.node(k), params) {
            Ok(c) => (c.hbar, c.residual),
            Err(_) => (f64::NAN, f64::NAN),
        })
        .collect();
    for (&k, (h, r)) in half.iter().zip(solved) {
        let m = grid.mirror(k);
        grid.hbar_values[k] = h;
        grid.hbar_values[m] = h;
        grid.residuals[k] = r;
        grid.residuals[m] = r;
    }
    Ok(grid)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GlobalReport {
    /// `max |H̄(p) − H̄(−p)|`.
    pub evenness_defect: f64,
    /// Worst `H̄(c) − ½(H̄(c−d) + H̄(c+d))` over equally spaced node triples.
    pub convexity_violation: f64,
    /// Worst violation of `½|p|² + min V ≤ H̄ ≤ ½|p|² + max V`.
    pub bound_violation: f64,
    pub eps_flat: f64,
    pub flat_nodes: usize,
    /// Largest `|p₁|` and `|p₂|` over flat nodes.
    pub flat_extent: [f64; 2],
    pub missing_nodes: usize,
}

pub fn validate_global_properties(grid: &HbarGrid, eps_flat: f64) -> GlobalReport {
    let c = grid.count as i64;
    let val = |i: i64, j: i64| grid.hbar_values[(i * c + j) as usize];
    let mut even = 0.0f64;
    let mut bound = 0.0f64;
    let mut flat_nodes = 0;
    let mut flat_extent = [0.0f64; 2];
    for k in 0..grid.len() {
        let h = grid.hbar_values[k];
        if h.is_nan() {
            continue;
        }
        let m = grid.hbar_values[grid.mirror(k)];
        if !m.is_nan() {
            even = even.max((h - m).abs());
        }
        let p = grid.node(k);
        let kin = 0.5 * (p[0] * p[0] + p[1] * p[1]);
        bound = bound
            .max(kin + grid.potential_min - h)
            .max(h - kin - grid.potential_max);
        if h < eps_flat {
            flat_nodes += 1;
            flat_extent[0] = flat_extent[0].max(p[0].abs());
            flat_extent[1] = flat_extent[1].max(p[1].abs());
        }
    }
    let mut convex = f64::NEG_INFINITY;
    for i in 0..c {
        for j in 0..c {
            let mid = val(i, j);
            if mid.is_nan() {
                continue;
            }
            for di in 0..c {
                for dj in -c + 1..c {
                    if di == 0 && dj <= 0 {
                        continue;
                    }
                    let (a, b) = ((i - di, j - dj), (i + di, j + dj));
                    if a.0 < 0 || a.1 < 0 || a.1 >= c || b.0 >= c || b.1 < 0 || b.1 >= c {
                        continue;
                    }
                    let (ha, hb) = (val(a.0, a.1), val(b.0, b.1));
                    if ha.is_nan() || hb.is_nan() {
                        continue;
                    }
                    convex = convex.max(mid - 0.5 * (ha + hb));
                }
            }
        }
    }
    GlobalReport {
        evenness_defect: even,
        convexity_violation: convex.max(0.0),
        bound_violation: bound.max(0.0),
        eps_flat,
        flat_nodes,
        flat_extent,
        missing_nodes: grid.missing().len(),
    }
}

/// Largest node radius `r` such that every node with `|p| ≤ r` has
/// `H̄ < eps_flat`.
pub fn interior_point_check(grid: &HbarGrid, eps_flat: f64) -> Result<f64> {
    let mut nodes: Vec<(f64, f64)> = (0..grid.len())
        .map(|k| {
            let p = grid.node(k);
            ((p[0] * p[0] + p[1] * p[1]).sqrt(), grid.hbar_values[k])
        })
        .collect();
    nodes.sort_by(|a, b| a.0.total_cmp(&b.0));
    let mut r = None;
    for (radius, h) in nodes {
        if !(h < eps_flat) {
            break;
        }
        r = Some(radius);
    }
    match r {
        Some(r) if r > 0.0 => Ok(r),
        _ => Err(Error::NotInterior),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::onedim::{hbar_separable, OneDimPotential};

    #[test]
    fn free_particle() {
        let f = solve_cell(&PotentialSpec::constant(0.0), [1.0, 1.0], &SolverParams::new(32, 1e-9)).unwrap();
        assert!((f.hbar - 1.0).abs() < 1e-6);
    }

    #[test]
    fn flat_at_origin_coarse() {
        let f = solve_cell(&PotentialSpec::separable(1.0, 1.0), [0.0, 0.0], &SolverParams::new(64, 1e-3)).unwrap();
        assert!(f.hbar.abs() < 5e-3, "{}", f.hbar);
        assert!(f.values.iter().sum::<f64>().abs() < 1e-9);
        assert!(f.residual.is_finite());
    }

    #[test]
    fn rejects_bad_grid() {
        let spec = PotentialSpec::separable(1.0, 1.0);
        assert!(solve_cell(&spec, [0.0, 0.0], &SolverParams::new(48, 1e-3)).is_err());
        assert!(solve_cell(&spec, [0.0, 0.0], &SolverParams::new(64, 0.0)).is_err());
    }

    #[test]
    fn step_budget_exhaustion() {
        let mut params = SolverParams::new(32, 1e-6);
        params.max_steps = 10;
        params.warm_start = false;
        let r = solve_cell(&PotentialSpec::separable(1.0, 1.0), [2.0, 0.5], &params);
        assert!(matches!(r, Err(Error::NoConvergence { .. })));
    }

    #[test]
    fn clamping() {
        assert_eq!(clamp_hbar(-1e-4, 1e-3).unwrap(), 0.0);
        assert_eq!(clamp_hbar(0.25, 1e-3).unwrap(), 0.25);
        assert!(clamp_hbar(-1e-2, 1e-3).is_err());
    }

    fn oracle_grid(p_max: f64, step: f64) -> HbarGrid {
        let h = OneDimPotential::cosine(1.0);
        HbarGrid::from_fn(p_max, step, (-4.0, 0.0), |p| hbar_separable(&h, &h, p)).unwrap()
    }

    #[test]
    fn oracle_grid_is_convex_and_bounded() {
        let g = oracle_grid(2.0, 0.25);
        let r = validate_global_properties(&g, 5e-3);
        assert!(r.convexity_violation <= 1e-9, "{r:?}");
        assert_eq!(r.evenness_defect, 0.0);
        assert!(r.bound_violation <= 1e-12);
        assert!(r.flat_extent[0] >= 1.0 && r.flat_extent[0] < 1.5);
        let radius = interior_point_check(&g, 5e-3).unwrap();
        assert!(radius >= 1.0);
        assert!(matches!(interior_point_check(&g, 0.0), Err(Error::NotInterior)));
    }

    #[test]
    fn detects_nonconvexity() {
        let mut g = oracle_grid(1.0, 0.5);
        let centre = g.len() / 2;
        g.hbar_values[centre] = 1.0;
        assert!(validate_global_properties(&g, 5e-3).convexity_violation > 0.9);
    }

    #[test]
    fn csv_roundtrip() {
        let g = oracle_grid(1.0, 0.5);
        let mut buf = Vec::new();
        g.write_csv(&mut buf).unwrap();
        let text = String::from_utf8(buf).unwrap();
        assert!(text.starts_with("p1,p2,hbar,residual\n"));
        let mut h = g.clone();
        h.hbar_values.iter_mut().for_each(|v| *v = -1.0);
        h.read_csv_values(&text).unwrap();
        assert_eq!(g, h);
        let r = serde_json::to_string(&g).unwrap();
        assert!(r.contains("p_step"));
    }

    #[test]
    fn layout_rejects_off_lattice_box() {
        assert!(HbarGrid::from_fn(1.0, 0.3, (0.0, 0.0), |_| 0.0).is_err());
    }

    #[test]
    fn coarse_sweep_mirrors() {
        let spec = PotentialSpec::separable(1.0, 1.0);
        let g = sweep_hbar_grid(&spec, 1.0, 1.0, &SolverParams::new(32, 1e-3)).unwrap();
        assert_eq!(g.count, 3);
        assert!(g.missing().is_empty());
        let r = validate_global_properties(&g, default_eps_flat(32));
        assert_eq!(r.evenness_defect, 0.0);
    }
}
