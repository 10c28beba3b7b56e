//! Planar triangle meshes: disc, annulus and holed-disc generators, local
//! red-green grading, exact point placement, P1 quadrature and the
//! `MESH2D v1` text format.

use std::collections::HashMap;
use std::f64::consts::PI;
use std::io::{BufRead, Write};

use nalgebra::{Matrix3, Vector3};
use thiserror::Error;

pub type Point = [f64; 2];
/// One value per mesh vertex.
pub type VertexField = Vec<f64>;
/// One value per boundary vertex, ordered as `TriangleMesh::boundary_vertices`.
pub type BoundaryField = Vec<f64>;

#[derive(Debug, Error)]
pub enum MeshError {
    #[error("invalid mesh parameter: {0}")]
    InvalidParameter(String),
    #[error("degenerate or inverted triangle {0} (signed area {1:e})")]
    DegenerateTriangle(usize, f64),
    #[error("edge ({0}, {1}) is shared by more than two triangles or inconsistently oriented")]
    NonManifoldEdge(usize, usize),
    #[error("invalid boundary: {0}")]
    Boundary(String),
    #[error("boundary loop index {0} out of range ({1} loops)")]
    LoopIndex(usize, usize),
    #[error("field length {got} does not match expected {expected}")]
    FieldLength { expected: usize, got: usize },
    #[error("cannot place point ({0}, {1}) on the mesh: {2}")]
    PointPlacement(f64, f64, String),
    #[error("mesh file line {line}: {msg}")]
    Parse { line: usize, msg: String },
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

/// Geometric carrier of a boundary loop, used to place refinement midpoints.
#[derive(Clone, Debug, PartialEq)]
pub enum BoundaryCurve {
    Circle { center: Point, radius: f64 },
    Polyline,
}

#[derive(Clone, Debug)]
pub struct TriangleMesh {
    vertices: Vec<Point>,
    triangles: Vec<[usize; 3]>,
    boundary_loops: Vec<Vec<usize>>,
    curves: Vec<BoundaryCurve>,
    on_boundary: Vec<bool>,
    boundary_vertices: Vec<usize>,
    boundary_ordinal: Vec<usize>,
    loop_of: Vec<usize>,
}

const NONE: usize = usize::MAX;

pub fn signed_area(a: Point, b: Point, c: Point) -> f64 {
    0.5 * ((b[0] - a[0]) * (c[1] - a[1]) - (b[1] - a[1]) * (c[0] - a[0]))
}

pub fn dist(a: Point, b: Point) -> f64 {
    ((a[0] - b[0]).powi(2) + (a[1] - b[1]).powi(2)).sqrt()
}

impl TriangleMesh {
    /// Builds a mesh from vertices and triangles, extracting boundary loops
    /// from the directed boundary edges (domain on the left).
    pub fn from_triangles(vertices: Vec<Point>, triangles: Vec<[usize; 3]>) -> Result<Self, MeshError> {
        let loops = extract_loops(vertices.len(), &triangles)?;
        Self::with_loops(vertices, triangles, loops)
    }

    /// Builds a mesh with explicitly given boundary loops. Loops may be given in
    /// either orientation; they are stored with the domain on the left.
    pub fn with_loops(
        vertices: Vec<Point>,
        triangles: Vec<[usize; 3]>,
        loops: Vec<Vec<usize>>,
    ) -> Result<Self, MeshError> {
        let nv = vertices.len();
        let scale = vertices
            .iter()
            .fold(0.0f64, |m, p| m.max(p[0].abs()).max(p[1].abs()))
            .max(1.0);
        for (t, tri) in triangles.iter().enumerate() {
            if tri.iter().any(|&v| v >= nv) || tri[0] == tri[1] || tri[1] == tri[2] || tri[0] == tri[2] {
                return Err(MeshError::InvalidParameter(format!("triangle {t} has invalid vertex indices")));
            }
            let a = signed_area(vertices[tri[0]], vertices[tri[1]], vertices[tri[2]]);
            if !(a > 1e-28 * scale * scale) {
                return Err(MeshError::DegenerateTriangle(t, a));
            }
        }
        let directed = directed_edges(&triangles)?;
        let mut boundary_edges: HashMap<usize, usize> = HashMap::new();
        for (&(a, b), _) in directed.iter() {
            if !directed.contains_key(&(b, a)) {
                boundary_edges.insert(a, b);
            }
        }
        let mut used = vec![false; nv];
        let mut fixed_loops = Vec::with_capacity(loops.len());
        let mut n_loop_edges = 0;
        for (l, lp) in loops.into_iter().enumerate() {
            let mut lp = lp;
            if lp.len() > 1 && lp.first() == lp.last() {
                lp.pop();
            }
            if lp.len() < 3 {
                return Err(MeshError::Boundary(format!("loop {l} has fewer than 3 vertices")));
            }
            if lp.iter().any(|&v| v >= nv) {
                return Err(MeshError::Boundary(format!("loop {l} references a missing vertex")));
            }
            let forward = lp.iter().enumerate().all(|(i, &a)| boundary_edges.get(&a) == Some(&lp[(i + 1) % lp.len()]));
            if !forward {
                lp.reverse();
                let ok = lp.iter().enumerate().all(|(i, &a)| boundary_edges.get(&a) == Some(&lp[(i + 1) % lp.len()]));
                if !ok {
                    return Err(MeshError::Boundary(format!("loop {l} does not follow boundary edges")));
                }
            }
            for &v in &lp {
                if used[v] {
                    return Err(MeshError::Boundary(format!("vertex {v} appears in more than one loop position")));
                }
                used[v] = true;
            }
            n_loop_edges += lp.len();
            fixed_loops.push(lp);
        }
        if n_loop_edges != boundary_edges.len() {
            return Err(MeshError::Boundary(format!(
                "loops cover {n_loop_edges} edges but the mesh has {} boundary edges",
                boundary_edges.len()
            )));
        }
        let mut mesh = TriangleMesh {
            vertices,
            triangles,
            boundary_loops: fixed_loops,
            curves: vec![],
            on_boundary: vec![],
            boundary_vertices: vec![],
            boundary_ordinal: vec![],
            loop_of: vec![],
        };
        mesh.finish();
        Ok(mesh)
    }

    fn finish(&mut self) {
        let nv = self.vertices.len();
        self.on_boundary = vec![false; nv];
        self.boundary_ordinal = vec![NONE; nv];
        self.loop_of = vec![NONE; nv];
        self.boundary_vertices.clear();
        for (l, lp) in self.boundary_loops.iter().enumerate() {
            for &v in lp {
                self.on_boundary[v] = true;
                self.boundary_ordinal[v] = self.boundary_vertices.len();
                self.loop_of[v] = l;
                self.boundary_vertices.push(v);
            }
        }
        self.curves = self.boundary_loops.iter().map(|lp| fit_curve(&self.vertices, lp)).collect();
    }

    pub fn vertices(&self) -> &[Point] {
        &self.vertices
    }
    pub fn triangles(&self) -> &[[usize; 3]] {
        &self.triangles
    }
    pub fn boundary_loops(&self) -> &[Vec<usize>] {
        &self.boundary_loops
    }
    pub fn curves(&self) -> &[BoundaryCurve] {
        &self.curves
    }
    pub fn n_vertices(&self) -> usize {
        self.vertices.len()
    }
    pub fn n_triangles(&self) -> usize {
        self.triangles.len()
    }
    pub fn n_boundary(&self) -> usize {
        self.boundary_vertices.len()
    }
    pub fn is_boundary(&self, v: usize) -> bool {
        self.on_boundary[v]
    }
    /// Boundary vertices in loop order, loops concatenated.
    pub fn boundary_vertices(&self) -> &[usize] {
        &self.boundary_vertices
    }
    /// Position of `v` in `boundary_vertices`, if it is a boundary vertex.
    pub fn boundary_ordinal(&self, v: usize) -> Option<usize> {
        let o = self.boundary_ordinal[v];
        (o != NONE).then_some(o)
    }
    pub fn loop_of(&self, v: usize) -> Option<usize> {
        let l = self.loop_of[v];
        (l != NONE).then_some(l)
    }

    pub fn triangle_area(&self, t: usize) -> f64 {
        let [a, b, c] = self.triangles[t];
        signed_area(self.vertices[a], self.vertices[b], self.vertices[c])
    }

    pub fn area(&self) -> f64 {
        (0..self.triangles.len()).map(|t| self.triangle_area(t)).sum()
    }

    /// Undirected edges, each listed once with the smaller index first.
    pub fn edges(&self) -> Vec<(usize, usize)> {
        let mut e: Vec<(usize, usize)> = self
            .triangles
            .iter()
            .flat_map(|t| (0..3).map(move |i| (t[i].min(t[(i + 1) % 3]), t[i].max(t[(i + 1) % 3]))))
            .collect();
        e.sort_unstable();
        e.dedup();
        e
    }

    pub fn max_edge_length(&self) -> f64 {
        self.edges().iter().map(|&(a, b)| dist(self.vertices[a], self.vertices[b])).fold(0.0, f64::max)
    }

    /// Boundary edges of every loop as (a, b) with the domain on the left.
    pub fn boundary_edges(&self) -> Vec<(usize, usize)> {
        self.boundary_loops
            .iter()
            .flat_map(|lp| (0..lp.len()).map(move |i| (lp[i], lp[(i + 1) % lp.len()])))
            .collect()
    }

    /// Row sums of the P1 mass matrix (one third of the incident triangle areas).
    pub fn vertex_areas(&self) -> Vec<f64> {
        let mut m = vec![0.0; self.vertices.len()];
        for (t, tri) in self.triangles.iter().enumerate() {
            let a = self.triangle_area(t) / 3.0;
            for &v in tri {
                m[v] += a;
            }
        }
        m
    }

    /// Row sums of the boundary mass matrix, per boundary ordinal.
    pub fn boundary_lengths(&self) -> Vec<f64> {
        let mut l = vec![0.0; self.boundary_vertices.len()];
        for (a, b) in self.boundary_edges() {
            let len = dist(self.vertices[a], self.vertices[b]);
            l[self.boundary_ordinal[a]] += 0.5 * len;
            l[self.boundary_ordinal[b]] += 0.5 * len;
        }
        l
    }

    pub fn nearest_vertex(&self, p: Point) -> usize {
        let mut best = 0;
        let mut bd = f64::INFINITY;
        for (i, &q) in self.vertices.iter().enumerate() {
            let d = dist(p, q);
            if d < bd {
                bd = d;
                best = i;
            }
        }
        best
    }

    /// Vertex adjacency lists, sorted.
    pub fn neighbors(&self) -> Vec<Vec<usize>> {
        let mut nb = vec![Vec::new(); self.vertices.len()];
        for (a, b) in self.edges() {
            nb[a].push(b);
            nb[b].push(a);
        }
        nb
    }

    /// Mean length of the edges incident to `v`.
    pub fn local_edge_length(&self, v: usize) -> f64 {
        let nb = self.neighbors();
        let n = nb[v].len().max(1) as f64;
        nb[v].iter().map(|&w| dist(self.vertices[v], self.vertices[w])).sum::<f64>() / n
    }

    /// Expands a boundary field into a vertex field that is zero in the interior.
    pub fn extend_boundary(&self, f: &[f64]) -> Vec<f64> {
        let mut out = vec![0.0; self.vertices.len()];
        for (i, &v) in self.boundary_vertices.iter().enumerate() {
            out[v] = f[i];
        }
        out
    }

    /// Restricts a vertex field to the boundary vertices.
    pub fn restrict_boundary(&self, f: &[f64]) -> Vec<f64> {
        self.boundary_vertices.iter().map(|&v| f[v]).collect()
    }

    /// Uniform red refinement: every triangle split into four.
    pub fn refine_uniform(&self) -> Result<TriangleMesh, MeshError> {
        self.refine_marked(&vec![true; self.triangles.len()])
    }

    /// Red-green refinement of the marked triangles. Marked triangles are split
    /// into four; the closure red-refines any triangle with two or more split
    /// edges and bisects triangles with exactly one. Boundary midpoints on
    /// circular loops are projected onto the circle.
    pub fn refine_marked(&self, marked: &[bool]) -> Result<TriangleMesh, MeshError> {
        if marked.len() != self.triangles.len() {
            return Err(MeshError::FieldLength { expected: self.triangles.len(), got: marked.len() });
        }
        let key = |a: usize, b: usize| (a.min(b), a.max(b));
        let mut red = marked.to_vec();
        let mut split: HashMap<(usize, usize), usize> = HashMap::new();
        loop {
            for (t, tri) in self.triangles.iter().enumerate() {
                if red[t] {
                    for i in 0..3 {
                        split.entry(key(tri[i], tri[(i + 1) % 3])).or_insert(NONE);
                    }
                }
            }
            let mut changed = false;
            for (t, tri) in self.triangles.iter().enumerate() {
                if !red[t] {
                    let n = (0..3).filter(|&i| split.contains_key(&key(tri[i], tri[(i + 1) % 3]))).count();
                    if n >= 2 {
                        red[t] = true;
                        changed = true;
                    }
                }
            }
            if !changed {
                break;
            }
        }
        let mut vertices = self.vertices.clone();
        let mut keys: Vec<(usize, usize)> = split.keys().copied().collect();
        keys.sort_unstable();
        for k in keys {
            let (a, b) = k;
            let (pa, pb) = (self.vertices[a], self.vertices[b]);
            let mut m = [(pa[0] + pb[0]) / 2.0, (pa[1] + pb[1]) / 2.0];
            if self.on_boundary[a] && self.on_boundary[b] && self.loop_of[a] == self.loop_of[b] {
                let l = self.loop_of[a];
                let lp = &self.boundary_loops[l];
                let ia = self.boundary_ordinal[a];
                let ib = self.boundary_ordinal[b];
                let start = self.boundary_ordinal[lp[0]];
                let n = lp.len();
                let adjacent = ((ia - start + 1) % n == ib - start) || ((ib - start + 1) % n == ia - start);
                if adjacent {
                    if let BoundaryCurve::Circle { center, radius } = self.curves[l] {
                        let d = dist(m, center);
                        if d > 0.0 {
                            m = [center[0] + (m[0] - center[0]) * radius / d, center[1] + (m[1] - center[1]) * radius / d];
                        }
                    }
                }
            }
            split.insert(k, vertices.len());
            vertices.push(m);
        }
        let mut triangles = Vec::with_capacity(self.triangles.len() * 2);
        for (t, &[a, b, c]) in self.triangles.iter().enumerate() {
            let mab = split.get(&key(a, b)).copied();
            let mbc = split.get(&key(b, c)).copied();
            let mca = split.get(&key(c, a)).copied();
            if red[t] {
                let (ab, bc, ca) = (mab.unwrap(), mbc.unwrap(), mca.unwrap());
                triangles.push([a, ab, ca]);
                triangles.push([ab, b, bc]);
                triangles.push([ca, bc, c]);
                triangles.push([ab, bc, ca]);
            } else if let Some(m) = mab {
                triangles.push([a, m, c]);
                triangles.push([m, b, c]);
            } else if let Some(m) = mbc {
                triangles.push([b, m, a]);
                triangles.push([m, c, a]);
            } else if let Some(m) = mca {
                triangles.push([c, m, b]);
                triangles.push([m, a, b]);
            } else {
                triangles.push([a, b, c]);
            }
        }
        let loops = self
            .boundary_loops
            .iter()
            .map(|lp| {
                let mut out = Vec::with_capacity(lp.len() * 2);
                for i in 0..lp.len() {
                    let (a, b) = (lp[i], lp[(i + 1) % lp.len()]);
                    out.push(a);
                    if let Some(&m) = split.get(&key(a, b)) {
                        out.push(m);
                    }
                }
                out
            })
            .collect();
        let mut mesh = TriangleMesh::with_loops(vertices, triangles, loops)?;
        // keep the parent's curve description; refitting would only add roundoff
        mesh.curves = self.curves.clone();
        Ok(mesh)
    }

    /// Geometric grading toward the given points: each level red-green refines
    /// the triangles within `ratio` local edge lengths of a point, halving the
    /// local mesh size and the refinement radius together.
    pub fn graded(&self, points: &[Point], levels: usize, ratio: f64) -> Result<TriangleMesh, MeshError> {
        let mut mesh = self.clone();
        for _ in 0..levels {
            let nb = mesh.neighbors();
            let radii: Vec<(Point, f64)> = points
                .iter()
                .map(|&p| {
                    let v = mesh.nearest_vertex(p);
                    let h = nb[v].iter().map(|&w| dist(mesh.vertices[v], mesh.vertices[w])).sum::<f64>()
                        / nb[v].len().max(1) as f64;
                    (p, ratio * h)
                })
                .collect();
            let marked: Vec<bool> = mesh
                .triangles
                .iter()
                .map(|tri| {
                    radii.iter().any(|&(p, r)| {
                        let c = centroid(&mesh.vertices, tri);
                        dist(c, p) < r || tri.iter().any(|&v| dist(mesh.vertices[v], p) < r)
                    })
                })
                .collect();
            mesh = mesh.refine_marked(&marked)?;
        }
        Ok(mesh)
    }

    /// Moves the nearest suitable vertex onto each point so that the points are
    /// exact mesh vertices. Points on a circular boundary loop snap to a vertex
    /// of that loop; other points snap to interior vertices. Returns the vertex
    /// index for each point.
    pub fn place_points(&mut self, points: &[Point]) -> Result<Vec<usize>, MeshError> {
        let mut out = Vec::with_capacity(points.len());
        for &p in points {
            let on_loop = self.curves.iter().position(|c| match c {
                BoundaryCurve::Circle { center, radius } => (dist(p, *center) - radius).abs() <= 1e-9 * radius.max(1.0),
                BoundaryCurve::Polyline => false,
            });
            let exact = self.vertices.iter().position(|&q| dist(q, p) <= 1e-12 * p[0].abs().max(p[1].abs()).max(1.0));
            let mut best = NONE;
            let mut bd = f64::INFINITY;
            if let Some(v) = exact.filter(|v| !out.contains(v)) {
                best = v;
                bd = dist(self.vertices[v], p);
            } else {
                for (v, &q) in self.vertices.iter().enumerate() {
                    let ok = match on_loop {
                        Some(l) => self.loop_of[v] == l,
                        None => !self.on_boundary[v],
                    };
                    if ok && !out.contains(&v) {
                        let d = dist(p, q);
                        if d < bd {
                            bd = d;
                            best = v;
                        }
                    }
                }
            }
            if best == NONE {
                return Err(MeshError::PointPlacement(p[0], p[1], "no candidate vertex".into()));
            }
            if bd > 0.0 {
                let old = self.vertices[best];
                self.vertices[best] = p;
                let bad = self.triangles.iter().enumerate().any(|(t, tri)| tri.contains(&best) && self.triangle_area(t) <= 0.0);
                if bad {
                    self.vertices[best] = old;
                    return Err(MeshError::PointPlacement(p[0], p[1], "snapping would invert a triangle".into()));
                }
            }
            out.push(best);
        }
        Ok(out)
    }
}

fn centroid(v: &[Point], tri: &[usize; 3]) -> Point {
    [
        (v[tri[0]][0] + v[tri[1]][0] + v[tri[2]][0]) / 3.0,
        (v[tri[0]][1] + v[tri[1]][1] + v[tri[2]][1]) / 3.0,
    ]
}

fn directed_edges(triangles: &[[usize; 3]]) -> Result<HashMap<(usize, usize), usize>, MeshError> {
    let mut directed = HashMap::with_capacity(triangles.len() * 3);
    for (t, tri) in triangles.iter().enumerate() {
        for i in 0..3 {
            let e = (tri[i], tri[(i + 1) % 3]);
            if directed.insert(e, t).is_some() {
                return Err(MeshError::NonManifoldEdge(e.0, e.1));
            }
        }
    }
    Ok(directed)
}

/// Follows directed boundary edges into closed loops.
fn extract_loops(nv: usize, triangles: &[[usize; 3]]) -> Result<Vec<Vec<usize>>, MeshError> {
    let directed = directed_edges(triangles)?;
    let mut next = vec![NONE; nv];
    let mut starts = Vec::new();
    for (&(a, b), _) in directed.iter() {
        if !directed.contains_key(&(b, a)) {
            if next[a] != NONE {
                return Err(MeshError::Boundary(format!("pinch vertex {a} has two outgoing boundary edges")));
            }
            next[a] = b;
            starts.push(a);
        }
    }
    starts.sort_unstable();
    let mut seen = vec![false; nv];
    let mut loops = Vec::new();
    for s in starts {
        if seen[s] {
            continue;
        }
        let mut lp = Vec::new();
        let mut v = s;
        while !seen[v] {
            seen[v] = true;
            lp.push(v);
            v = next[v];
            if v == NONE {
                return Err(MeshError::Boundary("open boundary chain".into()));
            }
        }
        if v != s {
            return Err(MeshError::Boundary(format!("boundary chain through {v} does not close")));
        }
        // start each loop at its smallest vertex index for a stable order
        let k = (0..lp.len())
            .min_by(|&i, &j| lp[i].cmp(&lp[j]))
            .unwrap();
        lp.rotate_left(k);
        loops.push(lp);
    }
    Ok(loops)
}

/// Least-squares circle fit; the loop is a circle if every vertex lies on the
/// fitted circle to 1e-9 relative.
fn fit_curve(vertices: &[Point], lp: &[usize]) -> BoundaryCurve {
    let mut ata = Matrix3::zeros();
    let mut atb = Vector3::zeros();
    let (mut cx, mut cy) = (0.0, 0.0);
    for &v in lp {
        cx += vertices[v][0];
        cy += vertices[v][1];
    }
    cx /= lp.len() as f64;
    cy /= lp.len() as f64;
    for &v in lp {
        let (x, y) = (vertices[v][0] - cx, vertices[v][1] - cy);
        let row = Vector3::new(x, y, 1.0);
        ata += row * row.transpose();
        atb += row * (-(x * x + y * y));
    }
    let Some(sol) = ata.lu().solve(&atb) else { return BoundaryCurve::Polyline };
    let center = [-sol[0] / 2.0 + cx, -sol[1] / 2.0 + cy];
    let r2 = sol[0] * sol[0] / 4.0 + sol[1] * sol[1] / 4.0 - sol[2];
    if !(r2 > 0.0) {
        return BoundaryCurve::Polyline;
    }
    let radius = r2.sqrt();
    let on = lp.iter().all(|&v| (dist(vertices[v], center) - radius).abs() <= 1e-9 * radius);
    if on {
        BoundaryCurve::Circle { center, radius }
    } else {
        BoundaryCurve::Polyline
    }
}

/// Concentric ring triangulation of a disc with `n` rings, ring i carrying 6i
/// points. Consecutive rings are zipped by exact angle comparison, so the mesh
/// is invariant under rotation by multiples of π/3.
fn ring_disc(center: Point, radius: f64, n: usize) -> (Vec<Point>, Vec<[usize; 3]>) {
    let mut verts = vec![center];
    for i in 1..=n {
        let r = radius * i as f64 / n as f64;
        for j in 0..6 * i {
            let th = 2.0 * PI * j as f64 / (6 * i) as f64;
            verts.push([center[0] + r * th.cos(), center[1] + r * th.sin()]);
        }
    }
    if n >= 1 {
        // pin the outer ring exactly on the circle
        let start = 1 + 3 * n * (n - 1);
        for j in 0..6 * n {
            let th = 2.0 * PI * j as f64 / (6 * n) as f64;
            verts[start + j] = [center[0] + radius * th.cos(), center[1] + radius * th.sin()];
        }
    }
    let ring = |i: usize, j: usize| -> usize {
        if i == 0 {
            0
        } else {
            1 + 3 * i * (i - 1) + j % (6 * i)
        }
    };
    let mut tris = Vec::with_capacity(6 * n * n);
    for j in 0..6.min(6 * n) {
        if n >= 1 {
            tris.push([0, ring(1, j), ring(1, j + 1)]);
        }
    }
    for i in 1..n {
        let (a, b) = (6 * i, 6 * (i + 1));
        let (mut j, mut k) = (0, 0);
        while j < a || k < b {
            // advance outer while its next angle does not exceed the inner one
            if k < b && (j == a || (k + 1) * a <= (j + 1) * b) {
                tris.push([ring(i, j), ring(i + 1, k), ring(i + 1, k + 1)]);
                k += 1;
            } else {
                tris.push([ring(i, j), ring(i + 1, k), ring(i, j + 1)]);
                j += 1;
            }
        }
    }
    (verts, tris)
}

/// Disc of the given radius; `refinement` level L uses 2·2^L rings
/// (level 6 gives 49 537 vertices).
pub fn build_disc_mesh(radius: f64, refinement: usize) -> Result<TriangleMesh, MeshError> {
    if !(radius > 0.0) || refinement > 12 {
        return Err(MeshError::InvalidParameter(format!("disc radius {radius}, refinement {refinement}")));
    }
    let (v, t) = ring_disc([0.0, 0.0], radius, 2 << refinement);
    TriangleMesh::from_triangles(v, t)
}

/// Annulus r_in < |x| < r_out with 24·2^L points per ring and geometrically
/// spaced rings, invariant under rotation by 2π/(24·2^L).
pub fn build_annulus_mesh(r_in: f64, r_out: f64, refinement: usize) -> Result<TriangleMesh, MeshError> {
    if !(r_in > 0.0 && r_in < r_out) || refinement > 12 {
        return Err(MeshError::InvalidParameter(format!("annulus radii {r_in}, {r_out}, refinement {refinement}")));
    }
    let n = 24usize << refinement;
    let layers = ((r_out / r_in).ln() * n as f64 / (2.0 * PI)).round().max((1usize << refinement) as f64) as usize;
    let mut verts = Vec::with_capacity(n * (layers + 1));
    for i in 0..=layers {
        let r = if i == layers { r_out } else { r_in * (r_out / r_in).powf(i as f64 / layers as f64) };
        for j in 0..n {
            let th = 2.0 * PI * j as f64 / n as f64;
            verts.push([r * th.cos(), r * th.sin()]);
        }
    }
    let id = |i: usize, j: usize| i * n + j % n;
    let mut tris = Vec::with_capacity(2 * n * layers);
    for i in 0..layers {
        for j in 0..n {
            tris.push([id(i, j), id(i + 1, j), id(i + 1, j + 1)]);
            tris.push([id(i, j), id(i + 1, j + 1), id(i, j + 1)]);
        }
    }
    TriangleMesh::from_triangles(verts, tris)
}

/// Disc with circular holes removed (triangles whose centroid lies inside a
/// hole are dropped). Hole boundaries are the resulting polygonal loops.
pub fn build_holed_disc_mesh(radius: f64, holes: &[(Point, f64)], refinement: usize) -> Result<TriangleMesh, MeshError> {
    if !(radius > 0.0) {
        return Err(MeshError::InvalidParameter(format!("disc radius {radius}")));
    }
    for &(c, r) in holes {
        if !(r > 0.0) || dist(c, [0.0, 0.0]) + r >= radius {
            return Err(MeshError::InvalidParameter(format!("hole at ({}, {}) radius {r} not inside the disc", c[0], c[1])));
        }
    }
    let (v, t) = ring_disc([0.0, 0.0], radius, 2 << refinement);
    let kept: Vec<[usize; 3]> = t
        .into_iter()
        .filter(|tri| {
            let c = centroid(&v, tri);
            !holes.iter().any(|&(hc, hr)| dist(c, hc) < hr)
        })
        .collect();
    // drop vertices no longer referenced and reindex
    let mut map = vec![NONE; v.len()];
    let mut verts = Vec::new();
    for tri in &kept {
        for &i in tri {
            if map[i] == NONE {
                map[i] = 0;
            }
        }
    }
    for (i, m) in map.iter_mut().enumerate() {
        if *m != NONE {
            *m = verts.len();
            verts.push(v[i]);
        }
    }
    let tris = kept.iter().map(|tri| [map[tri[0]], map[tri[1]], map[tri[2]]]).collect();
    let mesh = TriangleMesh::from_triangles(verts, tris)?;
    if mesh.boundary_loops.len() != 1 + holes.len() {
        return Err(MeshError::Boundary(format!(
            "expected {} boundary loops, found {}; holes overlap or are too small for the mesh",
            1 + holes.len(),
            mesh.boundary_loops.len()
        )));
    }
    Ok(mesh)
}

/// V − E + F.
pub fn euler_characteristic(mesh: &TriangleMesh) -> i64 {
    mesh.n_vertices() as i64 - mesh.edges().len() as i64 + mesh.n_triangles() as i64
}

/// Exact integral of the P1 interpolant of `field`.
pub fn integrate(field: &[f64], mesh: &TriangleMesh) -> Result<f64, MeshError> {
    if field.len() != mesh.n_vertices() {
        return Err(MeshError::FieldLength { expected: mesh.n_vertices(), got: field.len() });
    }
    Ok(mesh
        .triangles
        .iter()
        .enumerate()
        .map(|(t, tri)| mesh.triangle_area(t) / 3.0 * (field[tri[0]] + field[tri[1]] + field[tri[2]]))
        .sum())
}

/// Exact integral of the piecewise-linear boundary interpolant of `field`
/// (indexed by boundary ordinal), over all loops or over one loop.
pub fn boundary_integrate(field: &[f64], mesh: &TriangleMesh, loop_index: Option<usize>) -> Result<f64, MeshError> {
    if field.len() != mesh.n_boundary() {
        return Err(MeshError::FieldLength { expected: mesh.n_boundary(), got: field.len() });
    }
    if let Some(l) = loop_index {
        if l >= mesh.boundary_loops.len() {
            return Err(MeshError::LoopIndex(l, mesh.boundary_loops.len()));
        }
    }
    let mut s = 0.0;
    for (l, lp) in mesh.boundary_loops.iter().enumerate() {
        if loop_index.is_some_and(|k| k != l) {
            continue;
        }
        for i in 0..lp.len() {
            let (a, b) = (lp[i], lp[(i + 1) % lp.len()]);
            let len = dist(mesh.vertices[a], mesh.vertices[b]);
            s += 0.5 * len * (field[mesh.boundary_ordinal[a]] + field[mesh.boundary_ordinal[b]]);
        }
    }
    Ok(s)
}

pub fn write_mesh2d<W: Write>(mesh: &TriangleMesh, mut w: W) -> Result<(), MeshError> {
    writeln!(w, "MESH2D v1")?;
    writeln!(w, "{} {} {}", mesh.n_vertices(), mesh.n_triangles(), mesh.boundary_loops.len())?;
    for (i, p) in mesh.vertices.iter().enumerate() {
        writeln!(w, "{:?} {:?} {}", p[0], p[1], u8::from(mesh.on_boundary[i]))?;
    }
    for t in &mesh.triangles {
        writeln!(w, "{} {} {}", t[0], t[1], t[2])?;
    }
    for (l, lp) in mesh.boundary_loops.iter().enumerate() {
        write!(w, "{l}")?;
        for v in lp {
            write!(w, " {v}")?;
        }
        writeln!(w)?;
    }
    Ok(())
}

pub fn read_mesh2d<R: BufRead>(r: R) -> Result<TriangleMesh, MeshError> {
    let mut lines = r
        .lines()
        .enumerate()
        .map(|(i, l)| (i + 1, l))
        .filter(|(_, l)| l.as_ref().map(|s| !s.trim().is_empty() && !s.trim_start().starts_with('#')).unwrap_or(true));
    let mut next = |what: &str| -> Result<(usize, String), MeshError> {
        match lines.next() {
            Some((n, Ok(s))) => Ok((n, s)),
            Some((_, Err(e))) => Err(e.into()),
            None => Err(MeshError::Parse { line: 0, msg: format!("unexpected end of file, expected {what}") }),
        }
    };
    let (n, header) = next("header")?;
    if header.trim() != "MESH2D v1" {
        return Err(MeshError::Parse { line: n, msg: format!("bad header {header:?}") });
    }
    fn nums<T: std::str::FromStr>(n: usize, s: &str, want: Option<usize>) -> Result<Vec<T>, MeshError> {
        let v: Result<Vec<T>, _> = s.split_whitespace().map(str::parse).collect();
        let v = v.map_err(|_| MeshError::Parse { line: n, msg: format!("cannot parse {s:?}") })?;
        if want.is_some_and(|w| w != v.len()) {
            return Err(MeshError::Parse { line: n, msg: format!("expected {} fields", want.unwrap()) });
        }
        Ok(v)
    }
    let (n, counts) = next("counts")?;
    let c: Vec<usize> = nums(n, &counts, Some(3))?;
    let mut verts = Vec::with_capacity(c[0]);
    let mut flags = Vec::with_capacity(c[0]);
    for _ in 0..c[0] {
        let (n, s) = next("vertex")?;
        let v: Vec<f64> = nums(n, &s, Some(3))?;
        verts.push([v[0], v[1]]);
        flags.push((n, v[2] != 0.0));
    }
    let mut tris = Vec::with_capacity(c[1]);
    for _ in 0..c[1] {
        let (n, s) = next("triangle")?;
        let t: Vec<usize> = nums(n, &s, Some(3))?;
        tris.push([t[0], t[1], t[2]]);
    }
    let mut loops = Vec::with_capacity(c[2]);
    for k in 0..c[2] {
        let (n, s) = next("boundary loop")?;
        let t: Vec<usize> = nums(n, &s, None)?;
        if t.first() != Some(&k) {
            return Err(MeshError::Parse { line: n, msg: format!("expected loop id {k}") });
        }
        loops.push(t[1..].to_vec());
    }
    let mesh = TriangleMesh::with_loops(verts, tris, loops)?;
    for (i, &(n, f)) in flags.iter().enumerate() {
        if f != mesh.is_boundary(i) {
            return Err(MeshError::Parse { line: n, msg: format!("vertex {i} flag disagrees with the boundary loops") });
        }
    }
    Ok(mesh)
}

/// Uniform bucket grid over vertex positions for radius queries.
pub struct VertexGrid {
    origin: Point,
    cell: f64,
    nx: usize,
    ny: usize,
    buckets: Vec<Vec<usize>>,
}

impl VertexGrid {
    pub fn new(points: &[Point], cell: f64) -> Self {
        let (mut lo, mut hi) = ([f64::INFINITY; 2], [f64::NEG_INFINITY; 2]);
        for p in points {
            for d in 0..2 {
                lo[d] = lo[d].min(p[d]);
                hi[d] = hi[d].max(p[d]);
            }
        }
        let cell = cell.max(1e-12);
        let nx = (((hi[0] - lo[0]) / cell).floor() as usize + 1).min(4096);
        let ny = (((hi[1] - lo[1]) / cell).floor() as usize + 1).min(4096);
        let cell = cell.max((hi[0] - lo[0]) / nx as f64).max((hi[1] - lo[1]) / ny as f64) * (1.0 + 1e-12);
        let mut buckets = vec![Vec::new(); nx * ny];
        let g = VertexGrid { origin: lo, cell, nx, ny, buckets: vec![] };
        for (i, p) in points.iter().enumerate() {
            let (cx, cy) = g.cell_of(*p);
            buckets[cy * nx + cx].push(i);
        }
        VertexGrid { buckets, ..g }
    }

    fn cell_of(&self, p: Point) -> (usize, usize) {
        let cx = ((p[0] - self.origin[0]) / self.cell).floor().clamp(0.0, (self.nx - 1) as f64) as usize;
        let cy = ((p[1] - self.origin[1]) / self.cell).floor().clamp(0.0, (self.ny - 1) as f64) as usize;
        (cx, cy)
    }

    /// Indices of points within distance `r` of `p`.
    pub fn within(&self, points: &[Point], p: Point, r: f64, out: &mut Vec<usize>) {
        out.clear();
        let lo = self.cell_of([p[0] - r, p[1] - r]);
        let hi = self.cell_of([p[0] + r, p[1] + r]);
        for cy in lo.1..=hi.1 {
            for cx in lo.0..=hi.0 {
                for &i in &self.buckets[cy * self.nx + cx] {
                    if dist(points[i], p) <= r {
                        out.push(i);
                    }
                }
            }
        }
    }

    /// Index of a point within `tol` of `p`, if any.
    pub fn find(&self, points: &[Point], p: Point, tol: f64) -> Option<usize> {
        let mut v = Vec::new();
        self.within(points, p, tol, &mut v);
        v.into_iter().min_by(|&a, &b| dist(points[a], p).total_cmp(&dist(points[b], p)))
    }
}
