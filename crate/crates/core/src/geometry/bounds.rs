use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::{ConvexPolyhedron, Mat3, Vec3};
use crate::tolerances::SIMPLEX_EPS;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Ball {
    pub center: Vec3,
    pub radius: f64,
}

impl Ball {
    fn contains(&self, p: &Vec3) -> bool {
        (p - self.center).norm() <= self.radius * (1.0 + 1e-12) + 1e-14
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SphereBounds {
    pub inscribed_diameter: f64,
    pub circumscribed_diameter: f64,
}

pub fn sphere_bounds(poly: &ConvexPolyhedron) -> SphereBounds {
    SphereBounds {
        inscribed_diameter: 2.0 * inscribed_ball(poly).radius,
        circumscribed_diameter: 2.0 * circumscribed_ball(poly.vertices()).radius,
    }
}

/// Minimum enclosing ball (Welzl, move-to-front) of a point set.
pub fn circumscribed_ball(points: &[Vec3]) -> Ball {
    let mut pts = points.to_vec();
    // Fixed shuffle: expected linear time without giving up determinism.
    pts.shuffle(&mut ChaCha8Rng::seed_from_u64(0x5eed));
    let mut support = Vec::with_capacity(4);
    let end = pts.len();
    move_to_front(&mut pts, end, &mut support)
}

fn move_to_front(pts: &mut [Vec3], end: usize, support: &mut Vec<Vec3>) -> Ball {
    let mut ball = ball_through(support);
    if support.len() == 4 {
        return ball;
    }
    for i in 0..end {
        if !ball.contains(&pts[i]) {
            support.push(pts[i]);
            ball = move_to_front(pts, i, support);
            support.pop();
            pts[..=i].rotate_right(1);
        }
    }
    ball
}

/// Smallest ball with all of `s` (at most 4 points) on its boundary.
fn ball_through(s: &[Vec3]) -> Ball {
    match s.len() {
        0 => Ball {
            center: Vec3::zeros(),
            radius: -1.0,
        },
        1 => Ball {
            center: s[0],
            radius: 0.0,
        },
        2 => Ball {
            center: (s[0] + s[1]) * 0.5,
            radius: 0.5 * (s[0] - s[1]).norm(),
        },
        3 => {
            let (ab, ac) = (s[1] - s[0], s[2] - s[0]);
            let n = ab.cross(&ac);
            let denom = 2.0 * n.norm_squared();
            if denom <= 1e-300 {
                return widest_pair(s);
            }
            let off = (n.cross(&ab) * ac.norm_squared() + ac.cross(&n) * ab.norm_squared()) / denom;
            Ball {
                center: s[0] + off,
                radius: off.norm(),
            }
        }
        _ => {
            let a = s[0];
            let m = Mat3::from_rows(&[
                (s[1] - a).transpose(),
                (s[2] - a).transpose(),
                (s[3] - a).transpose(),
            ]) * 2.0;
            let rhs = Vec3::new(
                (s[1] - a).norm_squared(),
                (s[2] - a).norm_squared(),
                (s[3] - a).norm_squared(),
            );
            match m.lu().solve(&rhs) {
                Some(off) if off.iter().all(|x| x.is_finite()) => Ball {
                    center: a + off,
                    radius: off.norm(),
                },
                _ => {
                    // Coplanar support: best of the 3-point subsets that covers all four.
                    let mut best: Option<Ball> = None;
                    for skip in 0..4 {
                        let sub: Vec<Vec3> = (0..4).filter(|&k| k != skip).map(|k| s[k]).collect();
                        let b = ball_through(&sub);
                        if s.iter().all(|p| b.contains(p))
                            && best.map_or(true, |c| b.radius < c.radius)
                        {
                            best = Some(b);
                        }
                    }
                    best.unwrap_or_else(|| widest_pair(s))
                }
            }
        }
    }
}

fn widest_pair(s: &[Vec3]) -> Ball {
    let mut best = (0, 0, -1.0);
    for i in 0..s.len() {
        for j in (i + 1)..s.len() {
            let d = (s[i] - s[j]).norm();
            if d > best.2 {
                best = (i, j, d);
            }
        }
    }
    ball_through(&[s[best.0], s[best.1]])
}

/// Largest ball inside the polyhedron: maximise `r` subject to
/// `n_f . x + r <= b_f` for every face plane. Solved exactly as a small
/// linear program with a dense Bland-rule simplex.
pub fn inscribed_ball(poly: &ConvexPolyhedron) -> Ball {
    let origin = poly.vertices().iter().sum::<Vec3>() / poly.vertices().len() as f64;
    let planes: Vec<_> = (0..poly.faces().len()).map(|f| poly.face_plane(f)).collect();
    // Variables: u+ (3), u- (3), r; x = origin + u+ - u-.
    let nvar = 7;
    let rows: Vec<(Vec<f64>, f64)> = planes
        .iter()
        .map(|p| {
            let n = p.normal;
            let row = vec![n.x, n.y, n.z, -n.x, -n.y, -n.z, 1.0];
            (row, (p.offset - n.dot(&origin)).max(0.0))
        })
        .collect();
    let mut objective = vec![0.0; nvar];
    objective[6] = 1.0;
    let x = simplex_max(&objective, &rows);
    let center = origin + Vec3::new(x[0] - x[3], x[1] - x[4], x[2] - x[5]);
    Ball {
        center,
        radius: x[6],
    }
}

/// Maximises `c . x` subject to `A x <= b`, `x >= 0`, with `b >= 0`.
/// The problems passed here are always bounded.
fn simplex_max(c: &[f64], rows: &[(Vec<f64>, f64)]) -> Vec<f64> {
    let n = c.len();
    let m = rows.len();
    let width = n + m + 1;
    let rhs = width - 1;
    let mut t = vec![0.0; (m + 1) * width];
    for (i, (a, b)) in rows.iter().enumerate() {
        t[i * width..i * width + n].copy_from_slice(a);
        t[i * width + n + i] = 1.0;
        t[i * width + rhs] = *b;
    }
    let obj = m * width;
    for j in 0..n {
        t[obj + j] = -c[j];
    }
    let mut basis: Vec<usize> = (n..n + m).collect();

    for _ in 0..50 * (n + m) {
        let Some(enter) = (0..n + m).find(|&j| t[obj + j] < -SIMPLEX_EPS) else {
            break;
        };
        let mut leave: Option<(usize, f64)> = None;
        for i in 0..m {
            let a = t[i * width + enter];
            if a > SIMPLEX_EPS {
                let ratio = t[i * width + rhs] / a;
                leave = match leave {
                    None => Some((i, ratio)),
                    Some((li, lr)) => {
                        if ratio < lr - 1e-15 || (ratio <= lr + 1e-15 && basis[i] < basis[li]) {
                            Some((i, ratio))
                        } else {
                            Some((li, lr))
                        }
                    }
                };
            }
        }
        let Some((row, _)) = leave else {
            break;
        };
        let pivot = t[row * width + enter];
        for j in 0..width {
            t[row * width + j] /= pivot;
        }
        for i in 0..=m {
            if i == row {
                continue;
            }
            let f = t[i * width + enter];
            if f != 0.0 {
                for j in 0..width {
                    t[i * width + j] -= f * t[row * width + j];
                }
            }
        }
        basis[row] = enter;
    }
    let mut x = vec![0.0; n];
    for (i, &b) in basis.iter().enumerate() {
        if b < n {
            x[b] = t[i * width + rhs];
        }
    }
    x
}
