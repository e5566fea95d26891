//! Triangle meshes standing in for the CAD models.

use alloc::collections::BTreeMap;
use alloc::string::{String, ToString};
use alloc::vec::Vec;
use core::fmt::Write;

use nalgebra::Vector3;
#[allow(unused_imports)]
use num_traits::Float;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use thiserror::Error;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum MeshError {
    #[error("line {line}: {message}")]
    ParseError { line: usize, message: String },
    #[error("mesh has no faces")]
    EmptyMesh,
    #[error("triangle {triangle} references vertex {index} but the mesh has {count} vertices")]
    IndexOutOfRange { triangle: usize, index: u32, count: usize },
    #[error("vertex {0} has a non-finite coordinate")]
    NonFinite(usize),
    #[error("bounding box has zero extent")]
    DegenerateExtent,
}

/// Axis-aligned 3D bounding box.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Aabb {
    pub min: Vector3<f64>,
    pub max: Vector3<f64>,
}

impl Aabb {
    pub fn center(&self) -> Vector3<f64> {
        (self.min + self.max) * 0.5
    }

    pub fn extent(&self) -> Vector3<f64> {
        self.max - self.min
    }

    pub fn contains(&self, p: &Vector3<f64>, tolerance: f64) -> bool {
        (0..3).all(|i| p[i] >= self.min[i] - tolerance && p[i] <= self.max[i] + tolerance)
    }
}

/// Vertices (model units) and vertex-index triples.
#[derive(Debug, Clone, PartialEq)]
pub struct TriangleMesh {
    vertices: Vec<Vector3<f64>>,
    triangles: Vec<[u32; 3]>,
    model_id: String,
}

impl TriangleMesh {
    pub fn new(
        vertices: Vec<Vector3<f64>>,
        triangles: Vec<[u32; 3]>,
        model_id: impl Into<String>,
    ) -> Result<Self, MeshError> {
        if triangles.is_empty() {
            return Err(MeshError::EmptyMesh);
        }
        if let Some(i) = vertices.iter().position(|v| !v.iter().all(|c| c.is_finite())) {
            return Err(MeshError::NonFinite(i));
        }
        for (t, tri) in triangles.iter().enumerate() {
            if let Some(&index) = tri.iter().find(|&&i| i as usize >= vertices.len()) {
                return Err(MeshError::IndexOutOfRange { triangle: t, index, count: vertices.len() });
            }
        }
        Ok(TriangleMesh { vertices, triangles, model_id: model_id.into() })
    }

    pub fn vertices(&self) -> &[Vector3<f64>] {
        &self.vertices
    }

    pub fn triangles(&self) -> &[[u32; 3]] {
        &self.triangles
    }

    pub fn model_id(&self) -> &str {
        &self.model_id
    }

    pub fn with_model_id(mut self, model_id: impl Into<String>) -> Self {
        self.model_id = model_id.into();
        self
    }

    pub fn triangle(&self, t: usize) -> [Vector3<f64>; 3] {
        let [a, b, c] = self.triangles[t];
        [self.vertices[a as usize], self.vertices[b as usize], self.vertices[c as usize]]
    }

    pub fn triangle_area(&self, t: usize) -> f64 {
        let [a, b, c] = self.triangle(t);
        0.5 * (b - a).cross(&(c - a)).norm()
    }

    pub fn bounds(&self) -> Aabb {
        let mut min = Vector3::repeat(f64::INFINITY);
        let mut max = Vector3::repeat(f64::NEG_INFINITY);
        for v in &self.vertices {
            min = min.inf(v);
            max = max.sup(v);
        }
        Aabb { min, max }
    }

    /// Wavefront text with one `v` line per vertex and one `f` line per
    /// triangle. Coordinates are written in shortest round-trip form.
    pub fn to_obj(&self) -> String {
        let mut out = String::new();
        let _ = writeln!(out, "o {}", self.model_id);
        for v in &self.vertices {
            let _ = writeln!(out, "v {:?} {:?} {:?}", v.x, v.y, v.z);
        }
        for [a, b, c] in &self.triangles {
            let _ = writeln!(out, "f {} {} {}", a + 1, b + 1, c + 1);
        }
        out
    }
}

/// Parses wavefront geometry. Faces with more than three corners are split
/// into a fan around their first corner; texture, normal and material
/// statements are ignored.
pub fn load_mesh(text: &str, model_id: &str) -> Result<TriangleMesh, MeshError> {
    let mut vertices: Vec<Vector3<f64>> = Vec::new();
    let mut triangles = Vec::new();
    for (n, raw) in text.lines().enumerate() {
        let line = n + 1;
        let content = raw.split('#').next().unwrap_or("").trim();
        let mut tokens = content.split_whitespace();
        let Some(keyword) = tokens.next() else { continue };
        match keyword {
            "v" => {
                let mut xyz = [0.0; 3];
                for c in xyz.iter_mut() {
                    let tok = tokens.next().ok_or_else(|| parse_error(line, "vertex needs 3 coordinates"))?;
                    *c = tok
                        .parse::<f64>()
                        .map_err(|_| parse_error(line, "bad vertex coordinate"))?;
                    if !c.is_finite() {
                        return Err(parse_error(line, "non-finite vertex coordinate"));
                    }
                }
                vertices.push(Vector3::from(xyz));
            }
            "f" => {
                let mut corners = Vec::new();
                for tok in tokens {
                    let index_text = tok.split('/').next().unwrap_or("");
                    let index: i64 = index_text
                        .parse()
                        .map_err(|_| parse_error(line, "bad face index"))?;
                    let count = vertices.len() as i64;
                    let resolved = match index {
                        0 => return Err(parse_error(line, "face index 0 (indices are 1-based)")),
                        i if i > 0 => i - 1,
                        i => count + i,
                    };
                    if resolved < 0 || resolved >= count {
                        return Err(parse_error(line, "face index out of range"));
                    }
                    corners.push(resolved as u32);
                }
                if corners.len() < 3 {
                    return Err(parse_error(line, "face needs at least 3 corners"));
                }
                for k in 1..corners.len() - 1 {
                    triangles.push([corners[0], corners[k], corners[k + 1]]);
                }
            }
            _ => {}
        }
    }
    if triangles.is_empty() {
        return Err(MeshError::EmptyMesh);
    }
    TriangleMesh::new(vertices, triangles, model_id)
}

fn parse_error(line: usize, message: &str) -> MeshError {
    MeshError::ParseError { line, message: message.to_string() }
}

/// Centers the vertex bounding box on the origin and scales the longest box
/// edge to 1.
pub fn normalize_mesh(mesh: &TriangleMesh) -> Result<TriangleMesh, MeshError> {
    let bounds = mesh.bounds();
    let longest = bounds.extent().max();
    if !(longest > 0.0) {
        return Err(MeshError::DegenerateExtent);
    }
    let center = bounds.center();
    let scale = 1.0 / longest;
    let vertices = mesh.vertices.iter().map(|v| (v - center) * scale).collect();
    Ok(TriangleMesh { vertices, triangles: mesh.triangles.clone(), model_id: mesh.model_id.clone() })
}

/// Points for averaging over a model.
///
/// Returns every vertex when `n` is at least the vertex count, otherwise `n`
/// area-weighted uniform samples of the surface. Deterministic in `seed`.
pub fn sample_points(mesh: &TriangleMesh, n: usize, seed: u64) -> Vec<Vector3<f64>> {
    if n >= mesh.vertices.len() {
        return mesh.vertices.clone();
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut cumulative = Vec::with_capacity(mesh.triangles.len());
    let mut total = 0.0;
    for t in 0..mesh.triangles.len() {
        total += mesh.triangle_area(t);
        cumulative.push(total);
    }
    if !(total > 0.0) {
        // no surface to sample: draw vertices without replacement
        let mut indices: Vec<usize> = (0..mesh.vertices.len()).collect();
        for i in 0..n {
            let j = rng.random_range(i..indices.len());
            indices.swap(i, j);
        }
        return indices[..n].iter().map(|&i| mesh.vertices[i]).collect();
    }
    (0..n)
        .map(|_| {
            let target = rng.random::<f64>() * total;
            let t = cumulative.partition_point(|&c| c <= target).min(cumulative.len() - 1);
            let [a, b, c] = mesh.triangle(t);
            let r1 = rng.random::<f64>().sqrt();
            let r2 = rng.random::<f64>();
            a * (1.0 - r1) + b * (r1 * (1.0 - r2)) + c * (r1 * r2)
        })
        .collect()
}

/// Vertex-clustering decimation to at most `max_triangles` triangles.
///
/// Vertices are merged on a uniform grid over the bounding box; the grid is
/// refined by bisection on its resolution so that the result keeps as many
/// triangles as the budget allows. Collapsed and duplicate triangles are
/// dropped.
pub fn decimate(mesh: &TriangleMesh, max_triangles: usize) -> TriangleMesh {
    if mesh.triangles.len() <= max_triangles || max_triangles == 0 {
        return mesh.clone();
    }
    let mut lo = 1usize;
    let mut hi = 1024usize;
    let mut best = cluster(mesh, lo);
    while lo < hi {
        let mid = (lo + hi).div_ceil(2);
        let candidate = cluster(mesh, mid);
        if candidate.triangles.len() <= max_triangles {
            lo = mid;
            best = candidate;
        } else {
            hi = mid - 1;
        }
    }
    best
}

fn cluster(mesh: &TriangleMesh, resolution: usize) -> TriangleMesh {
    let bounds = mesh.bounds();
    let extent = bounds.extent();
    let cell = extent.max().max(f64::MIN_POSITIVE) / resolution as f64;
    let mut cells: BTreeMap<[i64; 3], (u32, Vector3<f64>, usize)> = BTreeMap::new();
    let mut remap = Vec::with_capacity(mesh.vertices.len());
    for v in &mesh.vertices {
        let key = [0, 1, 2].map(|i| {
            let k = ((v[i] - bounds.min[i]) / cell).floor() as i64;
            k.min(resolution as i64 - 1)
        });
        let next = cells.len() as u32;
        let entry = cells.entry(key).or_insert((next, Vector3::zeros(), 0));
        entry.1 += v;
        entry.2 += 1;
        remap.push(entry.0);
    }
    let mut vertices = alloc::vec![Vector3::zeros(); cells.len()];
    for (id, sum, count) in cells.values() {
        vertices[*id as usize] = sum / *count as f64;
    }
    let mut seen = BTreeMap::new();
    let mut triangles = Vec::new();
    for tri in &mesh.triangles {
        let t = tri.map(|i| remap[i as usize]);
        if t[0] == t[1] || t[1] == t[2] || t[0] == t[2] {
            continue;
        }
        let mut key = t;
        key.sort_unstable();
        if seen.insert(key, ()).is_none() {
            triangles.push(t);
        }
    }
    if triangles.is_empty() {
        // keep the mesh valid when everything collapsed
        triangles.push(remap_first(mesh, &remap));
    }
    TriangleMesh { vertices, triangles, model_id: mesh.model_id.clone() }
}

fn remap_first(mesh: &TriangleMesh, remap: &[u32]) -> [u32; 3] {
    mesh.triangles[0].map(|i| remap[i as usize])
}
