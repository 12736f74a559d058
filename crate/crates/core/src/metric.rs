//! Maupertuis distance `∫ √(2(c − V)) |dx|` on the universal cover.
//!
//! Distances are shortest paths on a 16-neighbour lattice graph whose edge
//! weights are trapezoid averages of the node weights times the edge length.

use std::cmp::Ordering;
use std::collections::BinaryHeap;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::cell_pde::CorrectorField;
use crate::error::{Error, Result};
use crate::potential::{Point, PotentialSpec};

const STENCIL: [(i64, i64); 16] = [
    (1, 0),
    (-1, 0),
    (0, 1),
    (0, -1),
    (1, 1),
    (1, -1),
    (-1, 1),
    (-1, -1),
    (2, 1),
    (2, -1),
    (-2, 1),
    (-2, -1),
    (1, 2),
    (1, -2),
    (-1, 2),
    (-1, -2),
];

/// Default radius of the lattice-point traps used for homoclinic support values.
pub const TRAP_RADIUS: f64 = 0.25;

/// Weights below this are counted as zeros of the metric.
const ZERO_WEIGHT: f64 = 1e-6;

#[derive(Clone, Debug)]
pub struct MetricGrid {
    /// Nodes per unit length.
    pub resolution: usize,
    /// The cover is `[−window − 1, window + 1]²`.
    pub window: usize,
    pub level: f64,
    /// One periodic cell of weights, `cell[i * resolution + j]` at `(i, j) / resolution`.
    cell: Vec<f64>,
    /// Nodes whose radicand was negative and clamped to zero.
    pub clamped: usize,
    /// Zero-weight nodes of the cell other than the lattice point.
    pub extra_zeros: usize,
}

impl MetricGrid {
    /// Nodes per axis of the cover.
    pub fn side(&self) -> usize {
        2 * (self.window + 1) * self.resolution + 1
    }

    fn origin(&self) -> i64 {
        -((self.window + 1) as i64)
    }

    pub fn weight_at(&self, i: usize, j: usize) -> f64 {
        let r = self.resolution;
        self.cell[(i % r) * r + (j % r)]
    }

    pub fn node_point(&self, i: usize, j: usize) -> Point {
        let (o, r) = (self.origin() as f64, self.resolution as f64);
        Point::new(o + i as f64 / r, o + j as f64 / r)
    }

    /// Nearest node to `x`.
    pub fn snap(&self, x: &Point) -> Result<(usize, usize)> {
        let r = self.resolution as f64;
        let o = self.origin() as f64;
        let (i, j) = (((x.x - o) * r).round(), ((x.y - o) * r).round());
        let side = self.side() as f64;
        if !(i >= 0.0 && j >= 0.0 && i < side && j < side) {
            return Err(Error::OutOfWindow { x: x.x, y: x.y });
        }
        Ok((i as usize, j as usize))
    }

    fn lattice_node(&self, w: [i64; 2]) -> Result<usize> {
        let (i, j) = self.snap(&Point::new(w[0] as f64, w[1] as f64))?;
        Ok(i * self.side() + j)
    }
}

pub fn build_metric_grid(spec: &PotentialSpec, c: f64, resolution: usize, window: usize) -> Result<MetricGrid> {
    if !(c >= 0.0) {
        return Err(Error::BadLevel(c));
    }
    if resolution < 64 {
        return Err(Error::InvalidInput(format!("metric resolution {resolution} below 64")));
    }
    Ok(metric_grid_unchecked(spec, c, resolution, window))
}

fn metric_grid_unchecked(spec: &PotentialSpec, c: f64, resolution: usize, window: usize) -> MetricGrid {
    let r = resolution;
    let raw: Vec<f64> = (0..r * r)
        .into_par_iter()
        .map(|k| {
            let x = Point::new((k / r) as f64 / r as f64, (k % r) as f64 / r as f64);
            2.0 * (c - spec.value(&x))
        })
        .collect();
    let clamped = raw.iter().filter(|&&q| q < 0.0).count();
    let cell: Vec<f64> = raw.iter().map(|&q| q.max(0.0).sqrt()).collect();
    let extra_zeros = cell.iter().skip(1).filter(|&&w| w < ZERO_WEIGHT).count();
    MetricGrid {
        resolution,
        window,
        level: c,
        cell,
        clamped,
        extra_zeros,
    }
}

#[derive(Copy, Clone, PartialEq)]
struct Entry {
    dist: f64,
    node: usize,
}

impl Eq for Entry {}

impl Ord for Entry {
    // Reversed for a min-heap; ties go to the lexicographically smaller node.
    fn cmp(&self, other: &Self) -> Ordering {
        other.dist.total_cmp(&self.dist).then_with(|| other.node.cmp(&self.node))
    }
}

impl PartialOrd for Entry {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}

/// Which trap ball (if any) a node lies in; the source's own ball is free.
fn trap_of(grid: &MetricGrid, i: usize, j: usize, rho: f64, source: [i64; 2]) -> Option<[i64; 2]> {
    let x = grid.node_point(i, j);
    let u = [x.x.round() as i64, x.y.round() as i64];
    if u == source {
        return None;
    }
    let d = ((x.x - u[0] as f64).powi(2) + (x.y - u[1] as f64).powi(2)).sqrt();
    (d < rho).then_some(u)
}

/// Single-source shortest paths. `stop` is called on every settled node and
/// ends the search when it returns true. With `trap = Some((ρ, lattice source))`,
/// nodes within `ρ` of any other lattice point only relax into their own ball.
fn dijkstra<F: FnMut(usize, f64) -> bool>(
    grid: &MetricGrid,
    source: usize,
    trap: Option<(f64, [i64; 2])>,
    mut stop: F,
) -> Vec<f64> {
    let side = grid.side();
    let inv_r = 1.0 / grid.resolution as f64;
    let lengths: Vec<f64> = STENCIL
        .iter()
        .map(|&(a, b)| ((a * a + b * b) as f64).sqrt() * inv_r)
        .collect();
    let mut dist = vec![f64::INFINITY; side * side];
    let mut done = vec![false; side * side];
    let mut heap = BinaryHeap::new();
    dist[source] = 0.0;
    heap.push(Entry { dist: 0.0, node: source });
    while let Some(Entry { dist: d, node }) = heap.pop() {
        if done[node] {
            continue;
        }
        done[node] = true;
        if stop(node, d) {
            break;
        }
        let (i, j) = (node / side, node % side);
        let wi = grid.weight_at(i, j);
        let ball = trap.and_then(|(rho, s)| trap_of(grid, i, j, rho, s));
        for (k, &(a, b)) in STENCIL.iter().enumerate() {
            let (ni, nj) = (i as i64 + a, j as i64 + b);
            if ni < 0 || nj < 0 || ni >= side as i64 || nj >= side as i64 {
                continue;
            }
            let (ni, nj) = (ni as usize, nj as usize);
            let m = ni * side + nj;
            if done[m] {
                continue;
            }
            if let (Some(u), Some((rho, s))) = (ball, trap) {
                if trap_of(grid, ni, nj, rho, s) != Some(u) {
                    continue;
                }
            }
            let nd = d + 0.5 * (wi + grid.weight_at(ni, nj)) * lengths[k];
            if nd < dist[m] {
                dist[m] = nd;
                heap.push(Entry { dist: nd, node: m });
            }
        }
    }
    dist
}

/// Lattice distance between the nodes nearest to `x` and `y`.
pub fn geodesic_distance(grid: &MetricGrid, x: &Point, y: &Point) -> Result<f64> {
    let (xi, xj) = grid.snap(x)?;
    let (yi, yj) = grid.snap(y)?;
    let side = grid.side();
    let target = yi * side + yj;
    let dist = dijkstra(grid, xi * side + xj, None, |n, _| n == target);
    Ok(dist[target])
}

pub fn primitive(w: [i64; 2]) -> bool {
    fn gcd(a: i64, b: i64) -> i64 {
        if b == 0 {
            a.abs()
        } else {
            gcd(b, a % b)
        }
    }
    gcd(w[0], w[1]) == 1
}

/// `σ(w)`: distance at level 0 from the lattice point 0 to `w`.
pub fn support_value(spec: &PotentialSpec, w: [i64; 2], resolution: usize, window: usize) -> Result<f64> {
    if w == [0, 0] {
        return Err(Error::InvalidInput("support value of the zero class".into()));
    }
    let reach = w[0].unsigned_abs().max(w[1].unsigned_abs()) as usize;
    if window < reach + 1 {
        return Err(Error::InvalidInput(format!("window {window} too small for class {w:?}")));
    }
    let grid = build_metric_grid(spec, 0.0, resolution, window)?;
    let (a, b) = (grid.lattice_node(w)?, grid.lattice_node([-w[0], -w[1]])?);
    let mut seen = 0;
    let dist = dijkstra(&grid, grid.lattice_node([0, 0])?, None, |n, _| {
        if n == a || n == b {
            seen += 1;
        }
        seen == if a == b { 1 } else { 2 }
    });
    Ok(dist[a].min(dist[b]))
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SupportEntry {
    pub w: [i64; 2],
    pub sigma: f64,
    /// Support value restricted to paths that avoid small balls around the
    /// intermediate lattice points.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub sigma_homoclinic: Option<f64>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SupportTable {
    pub resolution: usize,
    pub window: usize,
    pub entries: Vec<SupportEntry>,
}

fn table_order(a: &[i64; 2], b: &[i64; 2]) -> Ordering {
    let na = a[0].abs().max(a[1].abs());
    let nb = b[0].abs().max(b[1].abs());
    na.cmp(&nb).then(a.cmp(b))
}

/// Primitive classes with `|w|∞ ≤ window`, in table order.
pub fn primitive_classes(window: usize) -> Vec<[i64; 2]> {
    let r = window as i64;
    let mut out: Vec<[i64; 2]> = (-r..=r)
        .flat_map(|m| (-r..=r).map(move |n| [m, n]))
        .filter(|&w| primitive(w))
        .collect();
    out.sort_by(table_order);
    out
}

impl SupportTable {
    pub fn get(&self, w: [i64; 2]) -> Option<&SupportEntry> {
        self.entries.iter().find(|e| e.w == w)
    }

    pub fn sigma(&self, w: [i64; 2]) -> Option<f64> {
        self.get(w).map(|e| e.sigma)
    }

    /// Entries with `|w|∞ ≤ window`.
    pub fn truncated(&self, window: usize) -> SupportTable {
        let r = window as i64;
        SupportTable {
            resolution: self.resolution,
            window: window.min(self.window),
            entries: self
                .entries
                .iter()
                .filter(|e| e.w[0].abs() <= r && e.w[1].abs() <= r)
                .cloned()
                .collect(),
        }
    }

    pub fn scaled(&self, factor: f64) -> SupportTable {
        let mut t = self.clone();
        for e in &mut t.entries {
            e.sigma *= factor;
            e.sigma_homoclinic = e.sigma_homoclinic.map(|s| s * factor);
        }
        t
    }

    /// Largest `|σ(w) − σ'(w)|` over classes present in both tables.
    pub fn gap(&self, other: &SupportTable) -> f64 {
        self.entries
            .iter()
            .filter_map(|e| other.sigma(e.w).map(|s| (e.sigma - s).abs()))
            .fold(0.0, f64::max)
    }
}

/// Support values of all primitive classes with `|w|∞ ≤ window` from one
/// single-source search at level 0. With `trap_radius`, a second search fills
/// in the homoclinic support values.
pub fn support_table(
    spec: &PotentialSpec,
    resolution: usize,
    window: usize,
    trap_radius: Option<f64>,
) -> Result<SupportTable> {
    if window == 0 {
        return Err(Error::InvalidInput("support table window must be ≥ 1".into()));
    }
    let grid = build_metric_grid(spec, 0.0, resolution, window)?;
    let src = grid.lattice_node([0, 0])?;
    let (plain, trapped) = rayon::join(
        || dijkstra(&grid, src, None, |_, _| false),
        || trap_radius.map(|rho| dijkstra(&grid, src, Some((rho, [0, 0])), |_, _| false)),
    );
    let mut entries = Vec::new();
    for w in primitive_classes(window) {
        let (a, b) = (grid.lattice_node(w)?, grid.lattice_node([-w[0], -w[1]])?);
        entries.push(SupportEntry {
            w,
            sigma: plain[a].min(plain[b]),
            sigma_homoclinic: trapped.as_ref().map(|d| d[a].min(d[b])),
        });
    }
    Ok(SupportTable {
        resolution,
        window,
        entries,
    })
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SubsolutionReport {
    pub p: [f64; 2],
    pub pairs: usize,
    /// Smallest `h(x,y) − p·(y−x) − v(y) + v(x)` over the sampled pairs.
    pub worst_margin: f64,
    pub slack: f64,
    pub violations: usize,
}

pub const SUBSOLUTION_SLACK: f64 = 3e-2;

/// Samples pairs `(x, y)` with `x` in the unit cell and `|y − x|∞ ≤ 1` and
/// checks `h(x,y) ≥ p·(y−x) + v(y) − v(x) − slack`.
pub fn subsolution_inequality_check(
    spec: &PotentialSpec,
    p: [f64; 2],
    corrector: &CorrectorField,
    samples: usize,
    resolution: usize,
    seed: u64,
) -> Result<SubsolutionReport> {
    let grid = build_metric_grid(spec, 0.0, resolution, 1)?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let sources = samples.clamp(1, 8);
    let mut jobs: Vec<(Point, Vec<Point>)> = Vec::new();
    for s in 0..sources {
        let x = Point::new(rng.gen::<f64>(), rng.gen::<f64>());
        let count = samples / sources + usize::from(s < samples % sources);
        let ys = (0..count)
            .map(|_| x + Point::new(rng.gen_range(-1.0..1.0), rng.gen_range(-1.0..1.0)))
            .collect();
        jobs.push((x, ys));
    }
    let margins: Vec<Vec<f64>> = jobs
        .par_iter()
        .map(|(x, ys)| {
            let (xi, xj) = grid.snap(x)?;
            let side = grid.side();
            let dist = dijkstra(&grid, xi * side + xj, None, |_, _| false);
            let xs = grid.node_point(xi, xj);
            ys.iter()
                .map(|y| {
                    let (yi, yj) = grid.snap(y)?;
                    let yn = grid.node_point(yi, yj);
                    let rhs = p[0] * (yn.x - xs.x) + p[1] * (yn.y - xs.y) + corrector.interpolate(&yn)
                        - corrector.interpolate(&xs);
                    Ok(dist[yi * side + yj] - rhs)
                })
                .collect::<Result<Vec<f64>>>()
        })
        .collect::<Result<_>>()?;
    let all: Vec<f64> = margins.into_iter().flatten().collect();
    Ok(SubsolutionReport {
        p,
        pairs: all.len(),
        worst_margin: all.iter().copied().fold(f64::INFINITY, f64::min),
        slack: SUBSOLUTION_SLACK,
        violations: all.iter().filter(|&&m| m < -SUBSOLUTION_SLACK).count(),
    })
}

/// Estimate of `ω(δ) = inf { h(x, y) : |x − y| ≥ δ }` over base points on a
/// `base × base` subgrid of the unit cell plus the maximizer node.
pub fn min_gap_omega(spec: &PotentialSpec, delta: f64, resolution: usize) -> Result<f64> {
    if !(delta > 0.0 && delta < 0.5) {
        return Err(Error::InvalidInput(format!("delta = {delta} outside (0, 0.5)")));
    }
    let grid = build_metric_grid(spec, 0.0, resolution, 1)?;
    let side = grid.side();
    let off = 2 * resolution;
    let base = 16usize;
    let mut starts: Vec<(usize, usize)> = (0..base * base)
        .map(|k| {
            let (a, b) = (k / base, k % base);
            (
                off + a * resolution / base,
                off + b * resolution / base,
            )
        })
        .collect();
    let (mi, mj) = (0..resolution * resolution)
        .map(|k| (k / resolution, k % resolution))
        .min_by(|a, b| grid.weight_at(a.0, a.1).total_cmp(&grid.weight_at(b.0, b.1)))
        .unwrap_or((0, 0));
    starts.push((off + mi, off + mj));
    let r = resolution as f64;
    let values: Vec<f64> = starts
        .par_iter()
        .map(|&(i, j)| {
            let mut hit = f64::INFINITY;
            dijkstra(&grid, i * side + j, None, |n, d| {
                let (a, b) = ((n / side) as f64 - i as f64, (n % side) as f64 - j as f64);
                if (a * a + b * b).sqrt() / r >= delta {
                    hit = d;
                    true
                } else {
                    false
                }
            });
            hit
        })
        .collect();
    Ok(values.into_iter().fold(f64::INFINITY, f64::min))
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::f64::consts::PI;

    fn sep() -> PotentialSpec {
        PotentialSpec::separable(1.0, 1.0)
    }

    #[test]
    fn weights() {
        let g = build_metric_grid(&sep(), 0.0, 64, 1).unwrap();
        assert_eq!(g.weight_at(0, 0), 0.0);
        assert!((g.weight_at(32, 32) - 8f64.sqrt()).abs() < 1e-12);
        assert_eq!(g.extra_zeros, 0);
        let flat = build_metric_grid(&PotentialSpec::constant(-1.0), 1.0, 64, 1).unwrap();
        assert!((flat.weight_at(5, 17) - 2.0).abs() < 1e-15);
        assert!(matches!(build_metric_grid(&sep(), -0.1, 64, 1), Err(Error::BadLevel(_))));
        assert!(build_metric_grid(&sep(), 0.0, 32, 1).is_err());
    }

    #[test]
    fn distances() {
        let g = build_metric_grid(&sep(), 0.0, 128, 1).unwrap();
        let o = Point::zeros();
        assert_eq!(geodesic_distance(&g, &o, &o).unwrap(), 0.0);
        let d = geodesic_distance(&g, &o, &Point::new(1.0, 0.0)).unwrap();
        assert!((d - 4.0 / PI).abs() < 2e-2, "{d}");
        let flat = build_metric_grid(&PotentialSpec::constant(-1.0), 0.0, 64, 1).unwrap();
        let d = geodesic_distance(&flat, &o, &Point::new(0.5, 0.0)).unwrap();
        assert!((d / (0.5 * 2f64.sqrt()) - 1.0).abs() < 0.03);
        assert!(matches!(
            geodesic_distance(&g, &o, &Point::new(3.0, 0.0)),
            Err(Error::OutOfWindow { .. })
        ));
    }

    #[test]
    fn triangle_and_level_monotonicity() {
        let spec = PotentialSpec::perturbed_separable(0.3);
        let g0 = build_metric_grid(&spec, 0.0, 64, 1).unwrap();
        let g1 = build_metric_grid(&spec, 0.5, 64, 1).unwrap();
        let pts = [Point::new(0.1, 0.2), Point::new(0.7, -0.4), Point::new(1.3, 0.9)];
        let d = |g: &MetricGrid, a: usize, b: usize| geodesic_distance(g, &pts[a], &pts[b]).unwrap();
        assert!(d(&g0, 0, 2) <= d(&g0, 0, 1) + d(&g0, 1, 2));
        for (a, b) in [(0, 1), (1, 2), (0, 2)] {
            assert!(d(&g0, a, b) <= d(&g1, a, b));
        }
    }

    #[test]
    fn support_values_separable() {
        let t = support_table(&sep(), 128, 2, Some(TRAP_RADIUS)).unwrap();
        let l = 4.0 / PI;
        let s10 = t.sigma([1, 0]).unwrap();
        assert!((s10 - l).abs() < 2e-2);
        assert!((t.sigma([1, 1]).unwrap() - 2.0 * s10).abs() < 2e-2);
        for e in &t.entries {
            assert_eq!(e.sigma, t.sigma([-e.w[0], -e.w[1]]).unwrap());
            assert!(e.sigma_homoclinic.unwrap() >= e.sigma);
        }
        // composite chains are penalised by the traps, the diagonal is not
        let h = |w| t.get(w).unwrap().sigma_homoclinic.unwrap();
        assert!((h([1, 1]) - t.sigma([1, 1]).unwrap()).abs() < 1e-6);
        assert!(h([2, 1]) > t.sigma([2, 1]).unwrap() + 0.05);
        let direct = support_value(&sep(), [1, 0], 128, 2).unwrap();
        assert_eq!(direct, s10);
        assert!(support_value(&sep(), [2, 0], 128, 2).is_err());
    }

    #[test]
    fn table_order_and_json() {
        let c = primitive_classes(2);
        assert_eq!(c.len(), 16);
        assert_eq!(c[0], [-1, -1]);
        assert!(c.iter().all(|&w| primitive(w)));
        let t = SupportTable {
            resolution: 64,
            window: 1,
            entries: vec![SupportEntry { w: [1, 0], sigma: 1.5, sigma_homoclinic: None }],
        };
        let j = serde_json::to_string(&t).unwrap();
        assert_eq!(j, r#"{"resolution":64,"window":1,"entries":[{"w":[1,0],"sigma":1.5}]}"#);
    }

    #[test]
    fn omega_positive_and_scaling() {
        let spec = sep();
        let w1 = min_gap_omega(&spec, 0.25, 64).unwrap();
        let w2 = min_gap_omega(&spec, 0.4, 64).unwrap();
        assert!(w1 > 0.0 && w2 >= w1);
        let w4 = min_gap_omega(&spec.scaled(4.0), 0.25, 64).unwrap();
        assert!((w4 - 2.0 * w1).abs() < 1e-12);
    }
}
