//! Procedural test models and the plain-text model format.

use std::path::Path;

use crate::error::{Error, Result};
use crate::{Point3, Rotation, Vec3};

/// Points on the faces of an axis-aligned box, on a face-centered grid of
/// roughly `spacing` (no duplicates along edges).
pub fn box_surface(center: Point3, half: Vec3, spacing: f64) -> Vec<Point3> {
    let mut out = Vec::new();
    let n = |len: f64| ((len / spacing).round() as usize).max(1);
    for axis in 0..3 {
        let (a, b) = ((axis + 1) % 3, (axis + 2) % 3);
        let (na, nb) = (n(2.0 * half[a]), n(2.0 * half[b]));
        for side in [-1.0, 1.0] {
            for i in 0..na {
                for j in 0..nb {
                    let mut p = [0.0; 3];
                    p[axis] = side * half[axis];
                    p[a] = -half[a] + (i as f64 + 0.5) * 2.0 * half[a] / na as f64;
                    p[b] = -half[b] + (j as f64 + 0.5) * 2.0 * half[b] / nb as f64;
                    out.push(center + Vec3::from_array(p));
                }
            }
        }
    }
    out
}

/// Lateral surface and caps of a cylinder along z.
fn cylinder_surface(center: Point3, radius: f64, half_height: f64, spacing: f64) -> Vec<Point3> {
    let mut out = Vec::new();
    let around = ((std::f64::consts::TAU * radius / spacing).round() as usize).max(3);
    let rings = ((2.0 * half_height / spacing).round() as usize).max(1);
    for r in 0..rings {
        let z = -half_height + (r as f64 + 0.5) * 2.0 * half_height / rings as f64;
        for k in 0..around {
            let a = std::f64::consts::TAU * (k as f64 + 0.5) / around as f64;
            out.push(center + Vec3::new(radius * a.cos(), radius * a.sin(), z));
        }
    }
    let radial = ((radius / spacing).round() as usize).max(1);
    for side in [-1.0, 1.0] {
        for ri in 0..radial {
            let rr = radius * (ri as f64 + 0.5) / radial as f64;
            let m = ((std::f64::consts::TAU * rr / spacing).round() as usize).max(3);
            for k in 0..m {
                let a = std::f64::consts::TAU * (k as f64 + 0.5) / m as f64;
                out.push(center + Vec3::new(rr * a.cos(), rr * a.sin(), side * half_height));
            }
        }
    }
    out
}

/// Two-finger-gripper-like point set (about 3000 points), symmetric under a
/// half-turn about the model z axis: a palm, two parallel fingers along +z and
/// a cylindrical flange along −z. Point `i + n/2` is the half-turn image of
/// point `i`.
pub fn gripper() -> Vec<Point3> {
    let s = 0.0033;
    let mut half = Vec::new();
    // palm (x ≥ 0 half; the mirror supplies the rest)
    half.extend(
        box_surface(
            Point3::new(0.02, 0.0, 0.0),
            Vec3::new(0.02, 0.016, 0.014),
            s,
        )
        .into_iter()
        .filter(|p| p.x > 1e-9),
    );
    // finger with a small inward pad
    half.extend(box_surface(
        Point3::new(0.032, 0.0, 0.045),
        Vec3::new(0.006, 0.011, 0.031),
        s,
    ));
    half.extend(box_surface(
        Point3::new(0.022, 0.0, 0.066),
        Vec3::new(0.004, 0.008, 0.007),
        s,
    ));
    // flange
    half.extend(
        cylinder_surface(Point3::new(0.0, 0.0, -0.032), 0.022, 0.018, s)
            .into_iter()
            .filter(|p| p.x > 1e-9),
    );
    let flip = Rotation::rz(std::f64::consts::PI);
    let mut out = half.clone();
    out.extend(half.iter().map(|&p| flip.rotate(p)));
    recenter_z(out)
}

/// Shifts points along z so the bounding box is centered at the origin
/// (keeps a z-axis symmetry intact).
fn recenter_z(mut pts: Vec<Point3>) -> Vec<Point3> {
    let (lo, hi) = pts
        .iter()
        .fold((f64::INFINITY, f64::NEG_INFINITY), |(l, h), p| {
            (l.min(p.z), h.max(p.z))
        });
    let mid = 0.5 * (lo + hi);
    for p in &mut pts {
        p.z -= mid;
    }
    pts
}

/// Cube surface of edge `edge` with `per_edge` samples along each edge.
pub fn cube(edge: f64, per_edge: usize) -> Vec<Point3> {
    let h = 0.5 * edge;
    box_surface(
        Point3::zeros(),
        Vec3::new(h, h, h),
        edge / per_edge.max(1) as f64,
    )
}

/// Asymmetric L-shaped block (two boxes of different size), centered near the
/// origin.
pub fn l_shape() -> Vec<Point3> {
    let s = 0.0025;
    let mut pts = box_surface(Point3::new(0.0, 0.0, 0.0), Vec3::new(0.05, 0.015, 0.02), s);
    pts.extend(box_surface(
        Point3::new(-0.035, 0.045, 0.005),
        Vec3::new(0.015, 0.03, 0.025),
        s,
    ));
    let c = pts.iter().fold(Point3::zeros(), |a, p| a + *p) / pts.len() as f64;
    pts.iter().map(|p| *p - c).collect()
}

/// Named procedural model: `gripper`, `cube` or `l_shape`.
pub fn builtin(name: &str) -> Option<Vec<Point3>> {
    match name {
        "gripper" => Some(gripper()),
        "cube" => Some(cube(0.08, 20)),
        "l_shape" | "l-shape" => Some(l_shape()),
        _ => None,
    }
}

/// Parses `x y z` lines (meters); `#` starts a comment.
pub fn parse_model(path: &Path, text: &str) -> Result<Vec<Point3>> {
    let mut out = Vec::new();
    for (no, line) in text.lines().enumerate() {
        let line = line.split('#').next().unwrap_or("").trim();
        if line.is_empty() {
            continue;
        }
        let vals: Vec<f64> = line
            .split_whitespace()
            .map(|t| t.parse::<f64>())
            .collect::<std::result::Result<_, _>>()
            .map_err(|e| Error::format(path, format!("line {}: {e}", no + 1)))?;
        if vals.len() != 3 || !vals.iter().all(|v| v.is_finite()) {
            return Err(Error::format(
                path,
                format!("line {}: expected three finite numbers", no + 1),
            ));
        }
        out.push(Point3::new(vals[0], vals[1], vals[2]));
    }
    if out.is_empty() {
        return Err(Error::EmptyModel);
    }
    Ok(out)
}

pub fn load_model(path: &Path) -> Result<Vec<Point3>> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    parse_model(path, &text)
}

/// Writes the model with shortest round-trip float formatting.
pub fn save_model(path: &Path, model: &[Point3]) -> Result<()> {
    let mut s = String::from("# x y z (meters)\n");
    for p in model {
        s.push_str(&format!("{} {} {}\n", p.x, p.y, p.z));
    }
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    }
    std::fs::write(path, s).map_err(|e| Error::io(path, e))
}
