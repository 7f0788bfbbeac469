//! Small geometric helpers shared by topology, refinement and the generator.

use crate::volume::Index3;

pub type Vec3 = [f64; 3];

#[inline]
pub fn sub(a: Vec3, b: Vec3) -> Vec3 {
    [a[0] - b[0], a[1] - b[1], a[2] - b[2]]
}

#[inline]
pub fn add(a: Vec3, b: Vec3) -> Vec3 {
    [a[0] + b[0], a[1] + b[1], a[2] + b[2]]
}

#[inline]
pub fn scale(a: Vec3, s: f64) -> Vec3 {
    [a[0] * s, a[1] * s, a[2] * s]
}

#[inline]
pub fn dot(a: Vec3, b: Vec3) -> f64 {
    a[0] * b[0] + a[1] * b[1] + a[2] * b[2]
}

#[inline]
pub fn cross(a: Vec3, b: Vec3) -> Vec3 {
    [
        a[1] * b[2] - a[2] * b[1],
        a[2] * b[0] - a[0] * b[2],
        a[0] * b[1] - a[1] * b[0],
    ]
}

#[inline]
pub fn norm(a: Vec3) -> f64 {
    dot(a, a).sqrt()
}

pub fn normalize(a: Vec3) -> Option<Vec3> {
    let n = norm(a);
    (n > 1e-12).then(|| scale(a, 1.0 / n))
}

/// Angle between two vectors in degrees; `None` if either is degenerate.
pub fn angle_deg(a: Vec3, b: Vec3) -> Option<f64> {
    let (na, nb) = (norm(a), norm(b));
    if na < 1e-12 || nb < 1e-12 {
        return None;
    }
    Some((dot(a, b) / (na * nb)).clamp(-1.0, 1.0).acos().to_degrees())
}

/// Physical position (mm, grid-aligned frame) of a voxel index.
#[inline]
pub fn to_mm(p: Index3, spacing: [f64; 3]) -> Vec3 {
    [p[0] as f64 * spacing[0], p[1] as f64 * spacing[1], p[2] as f64 * spacing[2]]
}

/// Physical length of one voxel step.
#[inline]
pub fn step_length(a: Index3, b: Index3, spacing: [f64; 3]) -> f64 {
    let mut s = 0.0;
    for ax in 0..3 {
        let d = (a[ax] as f64 - b[ax] as f64) * spacing[ax];
        s += d * d;
    }
    s.sqrt()
}

/// 26-connected digital straight line from `a` to `b`, both included.
pub fn digital_line(a: [i64; 3], b: [i64; 3]) -> Vec<[i64; 3]> {
    let d = [b[0] - a[0], b[1] - a[1], b[2] - a[2]];
    let n = d.iter().map(|v| v.abs()).max().unwrap_or(0);
    if n == 0 {
        return vec![a];
    }
    (0..=n)
        .map(|t| {
            let f = t as f64 / n as f64;
            [0, 1, 2].map(|ax| a[ax] + (d[ax] as f64 * f).round() as i64)
        })
        .collect()
}

pub fn segment_distance_sq(p: Vec3, a: Vec3, b: Vec3) -> f64 {
    let ab = sub(b, a);
    let len2 = dot(ab, ab);
    let t = if len2 > 0.0 { (dot(sub(p, a), ab) / len2).clamp(0.0, 1.0) } else { 0.0 };
    let q = add(a, scale(ab, t));
    let d = sub(p, q);
    dot(d, d)
}

/// Principal direction of a point cloud (unit vector), by power iteration on
/// the covariance matrix. `None` for fewer than two distinct points.
pub fn principal_direction(points: &[Vec3]) -> Option<Vec3> {
    if points.len() < 2 {
        return None;
    }
    let n = points.len() as f64;
    let mut c = [0.0; 3];
    for p in points {
        c = add(c, *p);
    }
    c = scale(c, 1.0 / n);
    let mut cov = [[0.0; 3]; 3];
    for p in points {
        let d = sub(*p, c);
        for r in 0..3 {
            for s in 0..3 {
                cov[r][s] += d[r] * d[s];
            }
        }
    }
    let trace = cov[0][0] + cov[1][1] + cov[2][2];
    if trace < 1e-18 {
        return None;
    }
    // Seed with the chord so the iteration starts near the answer.
    let mut v = normalize(sub(points[points.len() - 1], points[0])).unwrap_or([1.0, 1.0, 1.0]);
    for _ in 0..100 {
        let w = [0, 1, 2].map(|r| cov[r][0] * v[0] + cov[r][1] * v[1] + cov[r][2] * v[2]);
        let Some(w) = normalize(w) else { break };
        let delta = norm(sub(w, v));
        v = w;
        if delta < 1e-14 {
            break;
        }
    }
    Some(v)
}
