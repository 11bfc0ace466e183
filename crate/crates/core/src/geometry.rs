//! Structured triangulation of the channel domain.
//!
//! The domain is `{(x, y) : x_left <= x <= x_right, bed(x) <= y <= eta(x)}`.
//! It is discretized by `n_x + 1` vertical columns of `n_y + 1` nodes each,
//! linearly spaced between the bed and the free surface. Node `i` of column
//! `j` has index `j * (n_y + 1) + i`, so the top node of every column is a
//! free-surface node and moving the surface only re-stretches columns.

use std::fmt;
use std::io::{self, Write};

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum BoundaryTag {
    GammaF,
    GammaL,
    GammaR,
    GammaB,
}

impl BoundaryTag {
    pub fn name(self) -> &'static str {
        match self {
            BoundaryTag::GammaF => "GammaF",
            BoundaryTag::GammaL => "GammaL",
            BoundaryTag::GammaR => "GammaR",
            BoundaryTag::GammaB => "GammaB",
        }
    }
}

impl fmt::Display for BoundaryTag {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

/// Channel bed as a single-valued function of `x`.
#[derive(Debug, Clone, PartialEq)]
pub enum BedProfile {
    Flat {
        level: f64,
    },
    /// Piecewise-linear bed through ordered `(x, y)` vertices, constant
    /// beyond the first and last vertex.
    Polyline(Vec<(f64, f64)>),
    /// Isosceles triangle on a floor at `y = 0`, centered at `x = 0`, with
    /// base angle `alpha` and base `2 * half_width`.
    Triangle {
        alpha: f64,
        half_width: f64,
    },
}

impl BedProfile {
    pub fn validate(&self) -> Result<()> {
        match self {
            BedProfile::Flat { level } if !level.is_finite() => {
                Err(Error::InvalidBed("non-finite level".into()))
            }
            BedProfile::Flat { .. } => Ok(()),
            BedProfile::Polyline(pts) => {
                if pts.is_empty() {
                    return Err(Error::InvalidBed("empty polyline".into()));
                }
                if pts.windows(2).any(|w| w[1].0 <= w[0].0) {
                    return Err(Error::InvalidBed(
                        "polyline x-coordinates must be strictly increasing".into(),
                    ));
                }
                Ok(())
            }
            BedProfile::Triangle { alpha, half_width } => {
                if !(*alpha > 0.0 && *alpha < std::f64::consts::FRAC_PI_2) {
                    return Err(Error::InvalidBed(format!(
                        "triangle angle must lie in (0, pi/2), got {alpha}"
                    )));
                }
                if !(*half_width > 0.0) {
                    return Err(Error::InvalidBed(format!(
                        "triangle half width must be positive, got {half_width}"
                    )));
                }
                Ok(())
            }
        }
    }

    pub fn height(&self, x: f64) -> f64 {
        match self {
            BedProfile::Flat { level } => *level,
            BedProfile::Polyline(pts) => {
                let first = pts[0];
                let last = pts[pts.len() - 1];
                if x <= first.0 {
                    return first.1;
                }
                if x >= last.0 {
                    return last.1;
                }
                let k = pts.partition_point(|p| p.0 <= x);
                let (x0, y0) = pts[k - 1];
                let (x1, y1) = pts[k];
                y0 + (y1 - y0) * (x - x0) / (x1 - x0)
            }
            BedProfile::Triangle { alpha, half_width } => {
                let apex = half_width * alpha.tan();
                (apex * (1.0 - x.abs() / half_width)).max(0.0)
            }
        }
    }

    /// Abscissae where the bed has a kink; these must be mesh stations.
    pub fn kinks(&self) -> Vec<f64> {
        match self {
            BedProfile::Flat { .. } => Vec::new(),
            BedProfile::Polyline(pts) => pts.iter().map(|p| p.0).collect(),
            BedProfile::Triangle { half_width, .. } => vec![-half_width, 0.0, *half_width],
        }
    }

    /// Apex height of a triangle bed, `w0 * tan(alpha)`.
    pub fn apex_height(&self) -> Option<f64> {
        match self {
            BedProfile::Triangle { alpha, half_width } => Some(half_width * alpha.tan()),
            _ => None,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MeshParams {
    pub n_x: usize,
    pub n_y: usize,
    pub x_left: f64,
    pub x_right: f64,
}

impl MeshParams {
    pub fn validate(&self) -> Result<()> {
        let mut problems = Vec::new();
        if self.n_x < 1 {
            problems.push(format!("n_x must be >= 1, got {}", self.n_x));
        }
        if self.n_y < 1 {
            problems.push(format!("n_y must be >= 1, got {}", self.n_y));
        }
        if !(self.x_left.is_finite() && self.x_right.is_finite() && self.x_left < self.x_right) {
            problems.push(format!(
                "need x_left < x_right, got [{}, {}]",
                self.x_left, self.x_right
            ));
        }
        if problems.is_empty() {
            Ok(())
        } else {
            Err(Error::InvalidParams(problems.join("; ")))
        }
    }
}

/// Splits `[x_left, x_right]` into `n_x` intervals so that every interior
/// kink is a station. Each kink-bounded segment is uniformly subdivided and
/// extra intervals go to whichever segment currently has the widest spacing.
pub fn station_abscissae(params: &MeshParams, kinks: &[f64]) -> Result<Vec<f64>> {
    params.validate()?;
    let (a, b) = (params.x_left, params.x_right);
    let span = b - a;
    let snap = 1e-12 * span;
    let mut breaks = vec![a];
    let mut inner: Vec<f64> = kinks
        .iter()
        .copied()
        .filter(|&k| k > a + snap && k < b - snap)
        .collect();
    inner.sort_by(f64::total_cmp);
    inner.dedup_by(|p, q| (*p - *q).abs() <= snap);
    breaks.extend(inner);
    breaks.push(b);

    let n_seg = breaks.len() - 1;
    if params.n_x < n_seg {
        return Err(Error::InvalidParams(format!(
            "n_x = {} is smaller than the {} bed segments",
            params.n_x, n_seg
        )));
    }
    let lengths: Vec<f64> = breaks.windows(2).map(|w| w[1] - w[0]).collect();
    let mut counts: Vec<usize> = lengths
        .iter()
        .map(|len| ((params.n_x as f64 * len / span) + 1e-9).floor().max(1.0) as usize)
        .collect();
    loop {
        let total: usize = counts.iter().sum();
        if total == params.n_x {
            break;
        }
        if total < params.n_x {
            let k = argmax_by(&lengths, &counts, |len, n| len / n as f64);
            counts[k] += 1;
        } else {
            // Remove from the segment whose spacing after removal stays narrowest.
            let k = (0..n_seg)
                .filter(|&s| counts[s] > 1)
                .min_by(|&p, &q| {
                    let sp = lengths[p] / (counts[p] - 1) as f64;
                    let sq = lengths[q] / (counts[q] - 1) as f64;
                    sp.total_cmp(&sq).then(p.cmp(&q))
                })
                .expect("n_x >= segment count");
            counts[k] -= 1;
        }
    }

    let mut xs = Vec::with_capacity(params.n_x + 1);
    for (s, &n) in counts.iter().enumerate() {
        let (x0, x1) = (breaks[s], breaks[s + 1]);
        for k in 0..n {
            xs.push(x0 + (x1 - x0) * k as f64 / n as f64);
        }
    }
    xs.push(b);
    Ok(xs)
}

fn argmax_by(lengths: &[f64], counts: &[usize], key: impl Fn(f64, usize) -> f64) -> usize {
    let mut best = 0;
    for s in 1..lengths.len() {
        if key(lengths[s], counts[s]) > key(lengths[best], counts[best]) {
            best = s;
        }
    }
    best
}

#[derive(Debug, Clone, PartialEq)]
pub struct Mesh {
    pub nodes: Vec<[f64; 2]>,
    /// Counter-clockwise node triples.
    pub triangles: Vec<[usize; 3]>,
    /// Closed counter-clockwise loop: bed, right wall, surface, left wall.
    pub boundary_edges: Vec<(usize, usize, BoundaryTag)>,
    /// Node indices of each column from bed to surface.
    pub columns: Vec<Vec<usize>>,
    pub stations: Vec<f64>,
    /// Bed height at each station.
    pub bed: Vec<f64>,
    pub n_y: usize,
}

pub fn build_mesh(
    params: &MeshParams,
    bed: &BedProfile,
    eta0: impl Fn(f64) -> f64,
) -> Result<Mesh> {
    params.validate()?;
    bed.validate()?;
    let stations = station_abscissae(params, &bed.kinks())?;
    let bed_heights: Vec<f64> = stations.iter().map(|&x| bed.height(x)).collect();
    let eta: Vec<f64> = stations.iter().map(|&x| eta0(x)).collect();
    for ((&x, &b), &e) in stations.iter().zip(&bed_heights).zip(&eta) {
        if !(e > b) {
            return Err(Error::NondegenerateDomainViolated { x, eta: e, bed: b });
        }
    }

    let m = params.n_y;
    let per_col = m + 1;
    let n_cols = stations.len();
    let mut nodes = Vec::with_capacity(n_cols * per_col);
    let mut columns = Vec::with_capacity(n_cols);
    for j in 0..n_cols {
        let col: Vec<usize> = (0..per_col).map(|i| j * per_col + i).collect();
        for i in 0..per_col {
            nodes.push([stations[j], column_height(bed_heights[j], eta[j], i, m)]);
        }
        columns.push(col);
    }

    let idx = |j: usize, i: usize| j * per_col + i;
    let mut triangles = Vec::with_capacity(2 * (n_cols - 1) * m);
    for j in 0..n_cols - 1 {
        for i in 0..m {
            let (bl, br, tr, tl) = (idx(j, i), idx(j + 1, i), idx(j + 1, i + 1), idx(j, i + 1));
            triangles.push([bl, br, tr]);
            triangles.push([bl, tr, tl]);
        }
    }

    let mut boundary_edges = Vec::with_capacity(2 * (n_cols - 1) + 2 * m);
    for j in 0..n_cols - 1 {
        boundary_edges.push((idx(j, 0), idx(j + 1, 0), BoundaryTag::GammaB));
    }
    for i in 0..m {
        boundary_edges.push((
            idx(n_cols - 1, i),
            idx(n_cols - 1, i + 1),
            BoundaryTag::GammaR,
        ));
    }
    for j in (0..n_cols - 1).rev() {
        boundary_edges.push((idx(j + 1, m), idx(j, m), BoundaryTag::GammaF));
    }
    for i in (0..m).rev() {
        boundary_edges.push((idx(0, i + 1), idx(0, i), BoundaryTag::GammaL));
    }

    Ok(Mesh {
        nodes,
        triangles,
        boundary_edges,
        columns,
        stations,
        bed: bed_heights,
        n_y: m,
    })
}

#[inline]
fn column_height(bed: f64, eta: f64, i: usize, m: usize) -> f64 {
    if i == m {
        eta
    } else {
        bed + (eta - bed) * (i as f64 / m as f64)
    }
}

impl Mesh {
    pub fn n_nodes(&self) -> usize {
        self.nodes.len()
    }

    pub fn n_stations(&self) -> usize {
        self.stations.len()
    }

    /// Index of the surface node of column `j`.
    pub fn surface_node(&self, j: usize) -> usize {
        self.columns[j][self.n_y]
    }

    pub fn surface_nodes(&self) -> Vec<usize> {
        (0..self.n_stations())
            .map(|j| self.surface_node(j))
            .collect()
    }

    pub fn surface_eta(&self) -> Vec<f64> {
        self.surface_nodes()
            .iter()
            .map(|&n| self.nodes[n][1])
            .collect()
    }

    /// Column and level of a node.
    pub fn node_position(&self, node: usize) -> (usize, usize) {
        (node / (self.n_y + 1), node % (self.n_y + 1))
    }

    /// Tag of a boundary node, `None` for interior nodes. Corner nodes take the
    /// lateral tag.
    pub fn node_tag(&self, node: usize) -> Option<BoundaryTag> {
        let (j, i) = self.node_position(node);
        if j == 0 {
            Some(BoundaryTag::GammaL)
        } else if j + 1 == self.n_stations() {
            Some(BoundaryTag::GammaR)
        } else if i == self.n_y {
            Some(BoundaryTag::GammaF)
        } else if i == 0 {
            Some(BoundaryTag::GammaB)
        } else {
            None
        }
    }

    /// All nodes lying on edges with `tag`, ordered along the boundary.
    /// `GammaF` is ordered by increasing `x` (the pinned node at `x_left`
    /// first); lateral walls and bed by increasing `y` and `x` respectively.
    pub fn boundary_nodes(&self, tag: BoundaryTag) -> Vec<usize> {
        let last = self.n_stations() - 1;
        match tag {
            BoundaryTag::GammaF => self.surface_nodes(),
            BoundaryTag::GammaB => (0..=last).map(|j| self.columns[j][0]).collect(),
            BoundaryTag::GammaL => self.columns[0].clone(),
            BoundaryTag::GammaR => self.columns[last].clone(),
        }
    }

    pub fn signed_area(&self, t: usize) -> f64 {
        let [a, b, c] = self.triangles[t];
        let (p, q, r) = (self.nodes[a], self.nodes[b], self.nodes[c]);
        0.5 * ((q[0] - p[0]) * (r[1] - p[1]) - (r[0] - p[0]) * (q[1] - p[1]))
    }

    pub fn total_area(&self) -> f64 {
        (0..self.triangles.len()).map(|t| self.signed_area(t)).sum()
    }

    /// Re-stretches every column linearly between the bed and `new_eta`.
    /// Topology is unchanged; columns whose elevation is unchanged keep their
    /// node coordinates bit-for-bit.
    pub fn update_surface(&self, new_eta: &[f64]) -> Result<Mesh> {
        if new_eta.len() != self.n_stations() {
            return Err(Error::MeshFieldMismatch {
                expected: self.n_stations(),
                got: new_eta.len(),
            });
        }
        for (j, &e) in new_eta.iter().enumerate() {
            if !(e > self.bed[j]) {
                return Err(Error::SurfacePenetratesBed {
                    x: self.stations[j],
                    eta: e,
                    bed: self.bed[j],
                });
            }
        }
        let mut out = self.clone();
        let m = self.n_y;
        for (j, col) in self.columns.iter().enumerate() {
            if new_eta[j] == self.nodes[col[m]][1] {
                continue;
            }
            for (i, &node) in col.iter().enumerate() {
                out.nodes[node][1] = column_height(self.bed[j], new_eta[j], i, m);
            }
        }
        Ok(out)
    }

    /// Vertical velocity of each node under a unit change of the surface
    /// elevation at its own column: `i / n_y` for level `i`.
    pub fn column_fraction(&self, node: usize) -> f64 {
        let (_, i) = self.node_position(node);
        i as f64 / self.n_y as f64
    }

    /// Plain-text node/element dump.
    pub fn write_text<W: Write>(&self, mut w: W) -> io::Result<()> {
        writeln!(w, "nodes {}", self.nodes.len())?;
        for p in &self.nodes {
            writeln!(
                w,
                "{} {}",
                crate::io::fmt_f64(p[0]),
                crate::io::fmt_f64(p[1])
            )?;
        }
        writeln!(w, "triangles {}", self.triangles.len())?;
        for t in &self.triangles {
            writeln!(w, "{} {} {}", t[0], t[1], t[2])?;
        }
        writeln!(w, "edges {}", self.boundary_edges.len())?;
        for (a, b, tag) in &self.boundary_edges {
            writeln!(w, "{a} {b} {tag}")?;
        }
        Ok(())
    }
}
