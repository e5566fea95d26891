use alloc::vec;
use alloc::vec::Vec;

use nalgebra::{Vector2, Vector3};
#[allow(unused_imports)]
use num_traits::Float;

use super::LocationField;
use crate::camera::{PoseParams, DEFAULT_NEAR_PLANE};
use crate::mesh::TriangleMesh;

#[derive(Clone, Copy)]
struct ClipVertex {
    camera: Vector3<f64>,
    model: Vector3<f64>,
}

impl ClipVertex {
    fn lerp(&self, other: &ClipVertex, t: f64) -> ClipVertex {
        ClipVertex {
            camera: self.camera + (other.camera - self.camera) * t,
            model: self.model + (other.model - self.model) * t,
        }
    }
}

/// Clips a polygon to `z > near` (camera frame).
fn clip_near(poly: &[ClipVertex], near: f64) -> Vec<ClipVertex> {
    let mut out = Vec::with_capacity(poly.len() + 1);
    for i in 0..poly.len() {
        let a = &poly[i];
        let b = &poly[(i + 1) % poly.len()];
        let a_in = a.camera.z > near;
        let b_in = b.camera.z > near;
        if a_in {
            out.push(*a);
        }
        if a_in != b_in {
            let t = (near - a.camera.z) / (b.camera.z - a.camera.z);
            let mut v = a.lerp(b, t);
            // keep the clipped vertex strictly in front
            v.camera.z = v.camera.z.max(near * (1.0 + 1e-9));
            out.push(v);
        }
    }
    out
}

#[inline]
fn edge(a: &Vector2<f64>, b: &Vector2<f64>, px: f64, py: f64) -> f64 {
    (b.x - a.x) * (py - a.y) - (b.y - a.y) * (px - a.x)
}

struct Target<'a> {
    field: &'a mut LocationField,
    depth: Vec<f64>,
    pose: &'a PoseParams,
}

impl Target<'_> {
    fn screen(&self, v: &ClipVertex) -> Vector2<f64> {
        self.pose.intrinsics().project_camera_point(&v.camera)
    }

    fn draw(&mut self, tri: [&ClipVertex; 3]) {
        let s = tri.map(|v| self.screen(v));
        let area = edge(&s[0], &s[1], s[2].x, s[2].y);
        if !(area.abs() > 0.0) || !area.is_finite() {
            return;
        }
        let (w, h) = (self.field.width(), self.field.height());
        let min_x = s.iter().map(|p| p.x).fold(f64::INFINITY, f64::min);
        let max_x = s.iter().map(|p| p.x).fold(f64::NEG_INFINITY, f64::max);
        let min_y = s.iter().map(|p| p.y).fold(f64::INFINITY, f64::min);
        let max_y = s.iter().map(|p| p.y).fold(f64::NEG_INFINITY, f64::max);
        // pixel x covers center x + 0.5
        let x0 = (min_x - 0.5).ceil().max(0.0);
        let x1 = (max_x - 0.5).floor().min(w as f64 - 1.0);
        let y0 = (min_y - 0.5).ceil().max(0.0);
        let y1 = (max_y - 0.5).floor().min(h as f64 - 1.0);
        if x0 > x1 || y0 > y1 {
            return;
        }
        let inv_z = tri.map(|v| 1.0 / v.camera.z);
        let sign = area.signum();
        let inv_area = 1.0 / area.abs();
        for y in (y0 as usize)..=(y1 as usize) {
            let py = y as f64 + 0.5;
            for x in (x0 as usize)..=(x1 as usize) {
                let px = x as f64 + 0.5;
                let b0 = edge(&s[1], &s[2], px, py) * sign;
                let b1 = edge(&s[2], &s[0], px, py) * sign;
                let b2 = edge(&s[0], &s[1], px, py) * sign;
                if b0 < 0.0 || b1 < 0.0 || b2 < 0.0 {
                    continue;
                }
                let q = [b0 * inv_area * inv_z[0], b1 * inv_area * inv_z[1], b2 * inv_area * inv_z[2]];
                let q_sum = q[0] + q[1] + q[2];
                if !(q_sum > 0.0) {
                    continue;
                }
                let z = 1.0 / q_sum;
                let i = y * w + x;
                if z < self.depth[i] {
                    self.depth[i] = z;
                    let p = (tri[0].model * q[0] + tri[1].model * q[1] + tri[2].model * q[2]) / q_sum;
                    self.field.set(x, y, Some([p.x as f32, p.y as f32, p.z as f32]));
                }
            }
        }
    }
}

/// Renders the location field of `mesh` seen under `pose`.
///
/// Pixels are sampled at their centers. Each covered pixel receives the
/// perspective-correct interpolation of the nearest triangle's vertex
/// coordinates; depth is the camera-frame `z` and equal depths keep the
/// earlier triangle. Geometry behind the near plane is clipped away.
pub fn rasterize_field(mesh: &TriangleMesh, pose: &PoseParams, width: usize, height: usize) -> LocationField {
    let mut field = LocationField::background(width, height);
    if width == 0 || height == 0 {
        return field;
    }
    let rotation = pose.rotation();
    let camera: Vec<Vector3<f64>> = mesh
        .vertices()
        .iter()
        .map(|v| {
            let mut c = rotation.rotate(v);
            c.z += pose.depth;
            c
        })
        .collect();
    let mut target = Target { field: &mut field, depth: vec![f64::INFINITY; width * height], pose };
    for tri in mesh.triangles() {
        let verts = tri.map(|i| ClipVertex { camera: camera[i as usize], model: mesh.vertices()[i as usize] });
        if verts.iter().all(|v| v.camera.z > DEFAULT_NEAR_PLANE) {
            target.draw([&verts[0], &verts[1], &verts[2]]);
            continue;
        }
        let poly = clip_near(&verts, DEFAULT_NEAR_PLANE);
        for k in 1..poly.len().saturating_sub(1) {
            target.draw([&poly[0], &poly[k], &poly[k + 1]]);
        }
    }
    field
}
