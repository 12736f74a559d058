//! Polygonal model of the flat set `F₀ = {p : p·w ≤ σ(w)}`, its edges,
//! normal cones and vertex structure.

use std::f64::consts::PI;
use std::fmt::Write as _;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::metric::{primitive, support_table, SupportTable};
use crate::potential::PotentialSpec;

/// Edges shorter than this are dropped from the intersection.
pub const MIN_EDGE: f64 = 1e-12;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PolyEdge {
    pub w: [i64; 2],
    pub sigma: f64,
}

/// Counterclockwise polygon; edge `k` runs from `vertices[k]` to
/// `vertices[k + 1]` and lies on `p·w = σ` for `edges[k]`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ConvexPolygon {
    pub vertices: Vec<[f64; 2]>,
    pub edges: Vec<PolyEdge>,
}

fn cross(a: [f64; 2], b: [f64; 2]) -> f64 {
    a[0] * b[1] - a[1] * b[0]
}

fn sub(a: [f64; 2], b: [f64; 2]) -> [f64; 2] {
    [a[0] - b[0], a[1] - b[1]]
}

fn norm(a: [f64; 2]) -> f64 {
    a[0].hypot(a[1])
}

fn dot(a: [f64; 2], b: [f64; 2]) -> f64 {
    a[0] * b[0] + a[1] * b[1]
}

fn wf(w: [i64; 2]) -> [f64; 2] {
    [w[0] as f64, w[1] as f64]
}

fn angle_of(w: [f64; 2]) -> f64 {
    w[1].atan2(w[0]).rem_euclid(2.0 * PI)
}

/// Counterclockwise angle from `a` to `b` in `[0, 2π)`.
fn ccw_gap(a: f64, b: f64) -> f64 {
    (b - a).rem_euclid(2.0 * PI)
}

/// Intersection of `p·u = s` and `p·v = t` by Cramer's rule with the integer
/// determinant as pivot.
fn meet(u: &PolyEdge, v: &PolyEdge) -> [f64; 2] {
    let det = (u.w[0] * v.w[1] - u.w[1] * v.w[0]) as f64;
    [
        (u.sigma * v.w[1] as f64 - v.sigma * u.w[1] as f64) / det,
        (u.w[0] as f64 * v.sigma - v.w[0] as f64 * u.sigma) / det,
    ]
}

impl ConvexPolygon {
    fn from_constraints(active: Vec<PolyEdge>) -> Self {
        let k = active.len();
        let vertices = (0..k).map(|i| meet(&active[(i + k - 1) % k], &active[i])).collect();
        ConvexPolygon {
            vertices,
            edges: active,
        }
    }

    pub fn len(&self) -> usize {
        self.vertices.len()
    }

    pub fn is_empty(&self) -> bool {
        self.vertices.is_empty()
    }

    pub fn edge_endpoints(&self, k: usize) -> ([f64; 2], [f64; 2]) {
        (self.vertices[k], self.vertices[(k + 1) % self.len()])
    }

    pub fn edge_length(&self, k: usize) -> f64 {
        let (a, b) = self.edge_endpoints(k);
        norm(sub(b, a))
    }

    pub fn area(&self) -> f64 {
        0.5 * (0..self.len())
            .map(|k| {
                let (a, b) = self.edge_endpoints(k);
                cross(a, b)
            })
            .sum::<f64>()
    }

    pub fn diameter(&self) -> f64 {
        let mut d = 0.0f64;
        for a in &self.vertices {
            for b in &self.vertices {
                d = d.max(norm(sub(*a, *b)));
            }
        }
        d
    }

    pub fn scaled(&self, factor: f64) -> Self {
        ConvexPolygon {
            vertices: self.vertices.iter().map(|v| [v[0] * factor, v[1] * factor]).collect(),
            edges: self
                .edges
                .iter()
                .map(|e| PolyEdge {
                    w: e.w,
                    sigma: e.sigma * factor,
                })
                .collect(),
        }
    }

    /// `max_k |v_k + v_{σ(k)}|` over the best matching of vertices with negated vertices.
    pub fn symmetry_defect(&self) -> f64 {
        self.vertices
            .iter()
            .map(|v| {
                self.vertices
                    .iter()
                    .map(|u| norm([u[0] + v[0], u[1] + v[1]]))
                    .fold(f64::INFINITY, f64::min)
            })
            .fold(0.0, f64::max)
    }

    /// Largest `p·w − σ(w)` over vertices and table entries.
    pub fn max_violation(&self, table: &SupportTable) -> f64 {
        let mut worst = f64::NEG_INFINITY;
        for v in &self.vertices {
            for e in &table.entries {
                worst = worst.max(dot(*v, wf(e.w)) - e.sigma);
            }
        }
        worst
    }

    /// `max_{p ∈ F₀} p·w`.
    pub fn support(&self, w: [i64; 2]) -> f64 {
        self.vertices
            .iter()
            .map(|v| dot(*v, wf(w)))
            .fold(f64::NEG_INFINITY, f64::max)
    }

    /// Nearest boundary point and its distance.
    fn project(&self, p: [f64; 2]) -> (usize, [f64; 2], f64) {
        let mut best = (0, self.vertices[0], f64::INFINITY);
        for k in 0..self.len() {
            let (a, b) = self.edge_endpoints(k);
            let d = sub(b, a);
            let t = (dot(sub(p, a), d) / dot(d, d)).clamp(0.0, 1.0);
            let q = [a[0] + t * d[0], a[1] + t * d[1]];
            let dist = norm(sub(p, q));
            if dist < best.2 {
                best = (k, q, dist);
            }
        }
        best
    }

    fn vertex_near(&self, p: [f64; 2], tol: f64) -> Option<usize> {
        (0..self.len())
            .filter(|&k| norm(sub(self.vertices[k], p)) <= tol)
            .min_by(|&a, &b| {
                norm(sub(self.vertices[a], p)).total_cmp(&norm(sub(self.vertices[b], p)))
            })
    }
}

/// Half-plane intersection of `{p : p·w ≤ σ(w)}` over the table entries.
pub fn build_f0(table: &SupportTable) -> Result<ConvexPolygon> {
    let mut cons: Vec<PolyEdge> = table
        .entries
        .iter()
        .map(|e| PolyEdge {
            w: e.w,
            sigma: e.sigma,
        })
        .collect();
    if cons.iter().any(|c| !(c.sigma > 0.0) || !c.sigma.is_finite()) {
        return Err(Error::EmptyInterior);
    }
    cons.sort_by(|a, b| angle_of(wf(a.w)).total_cmp(&angle_of(wf(b.w))).then(a.w.cmp(&b.w)));
    cons.dedup_by(|a, b| a.w == b.w);
    // Active constraints are the vertices of the hull of the dual points w/σ.
    let dual = |c: &PolyEdge| [c.w[0] as f64 / c.sigma, c.w[1] as f64 / c.sigma];
    let mut active = dual_hull(&cons, dual);
    loop {
        if active.len() < 3 {
            return Err(Error::EmptyInterior);
        }
        for i in 0..active.len() {
            let j = (i + 1) % active.len();
            if ccw_gap(angle_of(wf(active[i].w)), angle_of(wf(active[j].w))) >= PI {
                return Err(Error::InvalidInput("support table leaves F0 unbounded".into()));
            }
        }
        let poly = ConvexPolygon::from_constraints(active.clone());
        match (0..poly.len()).find(|&k| poly.edge_length(k) < MIN_EDGE) {
            Some(k) => {
                active.remove(k);
            }
            None => {
                if poly.area() <= 0.0 {
                    return Err(Error::EmptyInterior);
                }
                return Ok(poly);
            }
        }
    }
}

/// Hull vertices in angular order, dropping points on or inside the hull.
fn dual_hull<F: Fn(&PolyEdge) -> [f64; 2]>(sorted: &[PolyEdge], dual: F) -> Vec<PolyEdge> {
    let mut out: Vec<PolyEdge> = sorted.to_vec();
    loop {
        let k = out.len();
        if k < 3 {
            return out;
        }
        let drop = (0..k).find(|&i| {
            let (a, b, c) = (dual(&out[(i + k - 1) % k]), dual(&out[i]), dual(&out[(i + 1) % k]));
            cross(sub(b, a), sub(c, b)) <= 0.0
        });
        match drop {
            Some(i) => {
                out.remove(i);
            }
            None => return out,
        }
    }
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct F0Stage {
    pub window: usize,
    pub resolution: usize,
    pub table: SupportTable,
    pub polygon: ConvexPolygon,
}

/// Polygons for the paired schedule `(windows[i], resolutions[i])`. One
/// support table is computed per distinct resolution at the largest window
/// and truncated per stage.
pub fn refine_f0(spec: &PotentialSpec, windows: &[usize], resolutions: &[usize]) -> Result<Vec<F0Stage>> {
    if windows.len() != resolutions.len() || windows.is_empty() {
        return Err(Error::InvalidInput("window and resolution schedules must pair up".into()));
    }
    if windows.windows(2).any(|w| w[1] < w[0]) || resolutions.windows(2).any(|r| r[1] < r[0]) {
        return Err(Error::InvalidInput("refinement schedule must be non-decreasing".into()));
    }
    let max_window = *windows.iter().max().unwrap_or(&1);
    let mut distinct: Vec<usize> = resolutions.to_vec();
    distinct.dedup();
    let mut tables = Vec::new();
    for &r in &distinct {
        tables.push((r, support_table(spec, r, max_window, None)?));
    }
    windows
        .iter()
        .zip(resolutions)
        .map(|(&w, &r)| {
            let table = tables.iter().find(|t| t.0 == r).map(|t| t.1.truncated(w)).unwrap();
            let polygon = build_f0(&table)?;
            Ok(F0Stage {
                window: w,
                resolution: r,
                table,
                polygon,
            })
        })
        .collect()
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EdgeRecord {
    /// Index of the edge in the final polygon.
    pub index: usize,
    pub start: [f64; 2],
    pub end: [f64; 2],
    pub normal: [i64; 2],
    pub sigma: f64,
    pub length: f64,
    pub stable: bool,
}

/// Edges of the last polygon longer than `eps_edge`; those whose endpoints
/// move less than `eps_edge / 4` from the previous stage are stable.
pub fn detect_flat_edges(seq: &[ConvexPolygon], eps_edge: f64) -> Vec<EdgeRecord> {
    let Some(last) = seq.last() else {
        return Vec::new();
    };
    let prev = if seq.len() >= 2 { seq.get(seq.len() - 2) } else { None };
    (0..last.len())
        .filter(|&k| last.edge_length(k) > eps_edge)
        .map(|k| {
            let (a, b) = last.edge_endpoints(k);
            let w = last.edges[k].w;
            let stable = prev
                .and_then(|p| p.edges.iter().position(|e| e.w == w).map(|j| p.edge_endpoints(j)))
                .is_some_and(|(pa, pb)| norm(sub(pa, a)) < eps_edge / 4.0 && norm(sub(pb, b)) < eps_edge / 4.0);
            EdgeRecord {
                index: k,
                start: a,
                end: b,
                normal: w,
                sigma: last.edges[k].sigma,
                length: last.edge_length(k),
                stable,
            }
        })
        .collect()
}

/// Counterclockwise arc of unit normals, `[start, start + width]` in radians.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct NormalCone {
    pub start: f64,
    pub width: f64,
}

impl NormalCone {
    pub fn directions(&self, count: usize) -> Vec<[f64; 2]> {
        let n = count.max(1);
        (0..n)
            .map(|i| {
                let t = if n == 1 { 0.0 } else { i as f64 / (n - 1) as f64 };
                let a = self.start + t * self.width;
                [a.cos(), a.sin()]
            })
            .collect()
    }

    pub fn contains(&self, dir: [f64; 2], angle_tol: f64) -> bool {
        let g = ccw_gap(self.start, angle_of(dir));
        g <= self.width + angle_tol || 2.0 * PI - g <= angle_tol
    }
}

fn cone_at(poly: &ConvexPolygon, p: [f64; 2], tol: f64) -> Result<(NormalCone, Option<usize>, usize)> {
    let (k, _, dist) = poly.project(p);
    if dist > tol {
        return Err(Error::NotOnBoundary { x: p[0], y: p[1] });
    }
    if let Some(v) = poly.vertex_near(p, tol) {
        let n = poly.len();
        let a = angle_of(wf(poly.edges[(v + n - 1) % n].w));
        let b = angle_of(wf(poly.edges[v].w));
        return Ok((NormalCone { start: a, width: ccw_gap(a, b) }, Some(v), v));
    }
    Ok((
        NormalCone {
            start: angle_of(wf(poly.edges[k].w)),
            width: 0.0,
        },
        None,
        k,
    ))
}

pub fn normal_cone(poly: &ConvexPolygon, p: [f64; 2], tol: f64) -> Result<NormalCone> {
    cone_at(poly, p, tol).map(|c| c.0)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct HomologyFan {
    pub p: [f64; 2],
    pub classes: Vec<[i64; 2]>,
    pub tol: f64,
    /// Every class direction lies in the normal cone at `p` (vacuous inside).
    pub cone_consistent: bool,
}

/// Primitive classes with `p·w ≥ σ(w) − tol`, using the homoclinic support
/// values when the table carries them.
pub fn homology_fan(p: [f64; 2], table: &SupportTable, poly: &ConvexPolygon, tol: f64) -> HomologyFan {
    let classes: Vec<[i64; 2]> = table
        .entries
        .iter()
        .filter(|e| primitive(e.w))
        .filter(|e| dot(p, wf(e.w)) >= e.sigma_homoclinic.unwrap_or(e.sigma) - tol)
        .map(|e| e.w)
        .collect();
    let cone_consistent = match cone_at(poly, p, tol.max(1e-9)) {
        Ok((cone, _, _)) => classes.iter().all(|&w| cone.contains(wf(w), 1e-6)),
        Err(_) => true,
    };
    HomologyFan {
        p,
        classes,
        tol,
        cone_consistent,
    }
}

/// Orders `classes` as `{v₀, v₁}` or `{v₀, v₁, v₀ + v₁}` with `det(v₀, v₁) = 1`
/// if possible.
pub fn fan_basis(classes: &[[i64; 2]]) -> Option<([i64; 2], [i64; 2])> {
    let det = |a: [i64; 2], b: [i64; 2]| a[0] * b[1] - a[1] * b[0];
    for &a in classes {
        for &b in classes {
            if det(a, b) != 1 {
                continue;
            }
            let ok = match classes.len() {
                2 => true,
                3 => classes.contains(&[a[0] + b[0], a[1] + b[1]]),
                _ => false,
            };
            if ok {
                return Some((a, b));
            }
        }
    }
    None
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct VertexCheck {
    pub vertex: [f64; 2],
    /// Constraint of the outgoing edge (direction `+v₀⊥`).
    pub v0: [i64; 2],
    /// Constraint of the incoming edge (direction `−v₁⊥`).
    pub v1: [i64; 2],
    /// Determinant of the matrix with columns `v₁`, `v₀`.
    pub det: i64,
    /// Same with the columns swapped.
    pub det_swapped: i64,
    pub cone_ok: bool,
    pub unimodular: bool,
}

pub fn vertex_unimodular_check(poly: &ConvexPolygon, p: [f64; 2], eps_edge: f64) -> Result<VertexCheck> {
    let v = poly
        .vertex_near(p, 1e-9 * (1.0 + norm(p)))
        .ok_or(Error::NotAVertex { x: p[0], y: p[1] })?;
    let n = poly.len();
    let (inc, out) = ((v + n - 1) % n, v);
    let v0 = poly.edges[out].w;
    let v1 = poly.edges[inc].w;
    let perp = |w: [i64; 2]| {
        let d = [-(w[1] as f64), w[0] as f64];
        let l = norm(d);
        [d[0] / l, d[1] / l]
    };
    let vert = poly.vertices[v];
    // Edge directions leaving the vertex must be +v₀⊥ and −v₁⊥.
    let along = |other: [f64; 2]| {
        let d = sub(other, vert);
        let l = norm(d);
        ([d[0] / l, d[1] / l], l)
    };
    let (d_out, l_out) = along(poly.vertices[(v + 1) % n]);
    let (d_in, l_in) = along(poly.vertices[inc]);
    let p0 = perp(v0);
    let p1 = perp(v1);
    let angle_ok = |a: [f64; 2], b: [f64; 2]| cross(a, b).abs() < 1e-9 && dot(a, b) > 0.0;
    let cone_ok = angle_ok(d_out, p0) && angle_ok(d_in, [-p1[0], -p1[1]]) && l_out >= eps_edge && l_in >= eps_edge;
    let det = v1[0] * v0[1] - v0[0] * v1[1];
    Ok(VertexCheck {
        vertex: vert,
        v0,
        v1,
        det,
        det_swapped: -det,
        cone_ok,
        unimodular: det.abs() == 1,
    })
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum PointKind {
    EdgeInterior,
    Vertex,
    NonlinearCandidate,
    RationalNonlinearCandidate,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PointClassification {
    pub p: [f64; 2],
    pub kind: PointKind,
    pub cone: NormalCone,
    /// Rational class matching the estimated normal of a candidate.
    pub rational_class: Option<[i64; 2]>,
    /// Length of the run of unstable boundary containing `p`; shrinks under
    /// refinement when the model resolves a curved arc into flat pieces.
    pub unstable_arc: f64,
}

/// Classifies a boundary point against the stable edges of `poly`.
pub fn classify_boundary_point(
    p: [f64; 2],
    poly: &ConvexPolygon,
    edges: &[EdgeRecord],
    window: usize,
    tol: f64,
) -> Result<PointClassification> {
    let (cone, vertex, k) = cone_at(poly, p, tol)?;
    let n = poly.len();
    let stable = |i: usize| edges.iter().any(|e| e.index == i && e.stable);
    let linear = match vertex {
        Some(v) => stable(v) && stable((v + n - 1) % n),
        None => stable(k),
    };
    if linear {
        let kind = if vertex.is_some() { PointKind::Vertex } else { PointKind::EdgeInterior };
        return Ok(PointClassification {
            p,
            kind,
            cone,
            rational_class: None,
            unstable_arc: 0.0,
        });
    }
    // Walk to the stable edges on either side and replace the run by its chord.
    let first = vertex.map_or(k, |v| (v + n - 1) % n);
    let mut lo = first;
    let mut steps = 0;
    while !stable((lo + n - 1) % n) && steps < n {
        lo = (lo + n - 1) % n;
        steps += 1;
    }
    let mut hi = vertex.unwrap_or(k);
    steps = 0;
    while !stable((hi + 1) % n) && steps < n {
        hi = (hi + 1) % n;
        steps += 1;
    }
    let (a, b) = (poly.vertices[lo], poly.vertices[(hi + 1) % n]);
    let mut arc = 0.0;
    let mut i = lo;
    loop {
        arc += poly.edge_length(i);
        if i == hi {
            break;
        }
        i = (i + 1) % n;
    }
    let chord = sub(b, a);
    let normal = [chord[1], -chord[0]];
    let dir = angle_of(normal);
    let rational_class = crate::metric::primitive_classes(window)
        .into_iter()
        .filter(|&w| ccw_gap(dir, angle_of(wf(w))).min(ccw_gap(angle_of(wf(w)), dir)) < tol)
        .min_by_key(|w| w[0].abs().max(w[1].abs()));
    Ok(PointClassification {
        p,
        kind: if rational_class.is_some() {
            PointKind::RationalNonlinearCandidate
        } else {
            PointKind::NonlinearCandidate
        },
        cone,
        rational_class,
        unstable_arc: arc,
    })
}

/// SVG of the polygon: stable edges solid, others dashed, normals labelled,
/// vertices annotated with their determinant check when given.
pub fn polygon_svg(poly: &ConvexPolygon, edges: &[EdgeRecord], checks: &[VertexCheck], caption: &str) -> String {
    let extent = poly
        .vertices
        .iter()
        .flat_map(|v| [v[0].abs(), v[1].abs()])
        .fold(1e-9, f64::max)
        * 1.35;
    let size = 600.0;
    let map = |v: [f64; 2]| {
        (
            size * 0.5 + v[0] / extent * size * 0.5,
            size * 0.5 - v[1] / extent * size * 0.5,
        )
    };
    let mut s = String::new();
    let _ = writeln!(
        s,
        r#"<?xml version="1.0" encoding="UTF-8"?>
<svg xmlns="http://www.w3.org/2000/svg" version="1.1" width="{size}" height="{h}" viewBox="0 0 {size} {h}">"#,
        h = size + 40.0
    );
    let _ = writeln!(s, r#"<rect width="100%" height="100%" fill="white"/>"#);
    let (cx, cy) = map([0.0, 0.0]);
    let _ = writeln!(
        s,
        r##"<line x1="0" y1="{cy:.3}" x2="{size}" y2="{cy:.3}" stroke="#ccc"/><line x1="{cx:.3}" y1="0" x2="{cx:.3}" y2="{size}" stroke="#ccc"/>"##
    );
    for k in 0..poly.len() {
        let (a, b) = poly.edge_endpoints(k);
        let ((x1, y1), (x2, y2)) = (map(a), map(b));
        let stable = edges.iter().any(|e| e.index == k && e.stable);
        let style = if stable {
            r##"stroke="#1f5fbf" stroke-width="3""##
        } else {
            r##"stroke="#d0602a" stroke-width="1.5" stroke-dasharray="4 3""##
        };
        let _ = writeln!(s, r#"<line x1="{x1:.3}" y1="{y1:.3}" x2="{x2:.3}" y2="{y2:.3}" {style}/>"#);
        if stable {
            let w = poly.edges[k].w;
            let l = norm(wf(w));
            let (mx, my) = ((x1 + x2) * 0.5 + 16.0 * w[0] as f64 / l, (y1 + y2) * 0.5 - 16.0 * w[1] as f64 / l);
            let _ = writeln!(
                s,
                r#"<text x="{mx:.3}" y="{my:.3}" font-size="11" text-anchor="middle">({},{})</text>"#,
                w[0], w[1]
            );
        }
    }
    for c in checks {
        let (x, y) = map(c.vertex);
        let fill = if c.unimodular && c.cone_ok { "#2a9d4a" } else { "#c0392b" };
        let _ = writeln!(s, r#"<circle cx="{x:.3}" cy="{y:.3}" r="4" fill="{fill}"/>"#);
        let _ = writeln!(
            s,
            r#"<text x="{:.3}" y="{:.3}" font-size="10">det {}</text>"#,
            x + 6.0,
            y - 6.0,
            c.det
        );
    }
    let _ = writeln!(
        s,
        r#"<text x="10" y="{:.1}" font-size="12" font-family="monospace">{}</text>"#,
        size + 25.0,
        xml_escape(caption)
    );
    s.push_str("</svg>\n");
    s
}

pub fn xml_escape(s: &str) -> String {
    s.replace('&', "&amp;").replace('<', "&lt;").replace('>', "&gt;")
}
