//! Procedural paired gray/depth faces.
//!
//! Each subject is a seeded parametric head: an ellipsoid cranium with two
//! spherical eye sockets carved out and a wedge-shaped nose added. Frames
//! ray-cast that solid from a pinhole camera at the origin looking down
//! `+z`. The depth map stores the hit `z` in millimeters; the gray image
//! shades the same hit with a Lambertian point light next to the camera
//! (inverse-square falloff), so gray determines depth.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::data::{DepthMap, FaceSample, GrayImage, Image, Pose};
use crate::error::{Error, Result};

/// Depth of every background pixel (mm).
pub const FAR_PLANE_MM: u16 = 2000;
/// Gray level of the background.
pub const BACKGROUND_GRAY: u8 = 10;
/// Focal length in pixels per pixel of image side.
pub const FOCAL_PER_PIXEL: f64 = 3.2;
/// Number of capture sequences per subject.
pub const SEQUENCES: u32 = 5;

const LIGHT_POS: V3 = V3(0.0, -150.0, 0.0);
const AMBIENT: f64 = 0.06;
const ALBEDO: f64 = 0.55;

#[derive(Debug, Clone, Copy, PartialEq)]
struct V3(f64, f64, f64);

impl V3 {
    fn add(self, o: V3) -> V3 {
        V3(self.0 + o.0, self.1 + o.1, self.2 + o.2)
    }
    fn sub(self, o: V3) -> V3 {
        V3(self.0 - o.0, self.1 - o.1, self.2 - o.2)
    }
    fn mul(self, s: f64) -> V3 {
        V3(self.0 * s, self.1 * s, self.2 * s)
    }
    fn dot(self, o: V3) -> f64 {
        self.0 * o.0 + self.1 * o.1 + self.2 * o.2
    }
    fn norm(self) -> f64 {
        self.dot(self).sqrt()
    }
    fn unit(self) -> V3 {
        self.mul(1.0 / self.norm())
    }
}

/// Row-major 3×3 rotation.
#[derive(Debug, Clone, Copy)]
struct M3([[f64; 3]; 3]);

impl M3 {
    fn mul(&self, o: &M3) -> M3 {
        let mut r = [[0.0; 3]; 3];
        for (i, row) in r.iter_mut().enumerate() {
            for (j, v) in row.iter_mut().enumerate() {
                *v = (0..3).map(|k| self.0[i][k] * o.0[k][j]).sum();
            }
        }
        M3(r)
    }
    fn apply(&self, v: V3) -> V3 {
        let m = &self.0;
        V3(
            m[0][0] * v.0 + m[0][1] * v.1 + m[0][2] * v.2,
            m[1][0] * v.0 + m[1][1] * v.1 + m[1][2] * v.2,
            m[2][0] * v.0 + m[2][1] * v.1 + m[2][2] * v.2,
        )
    }
    fn apply_t(&self, v: V3) -> V3 {
        let m = &self.0;
        V3(
            m[0][0] * v.0 + m[1][0] * v.1 + m[2][0] * v.2,
            m[0][1] * v.0 + m[1][1] * v.1 + m[2][1] * v.2,
            m[0][2] * v.0 + m[1][2] * v.1 + m[2][2] * v.2,
        )
    }

    /// `Rz(roll) · Rx(pitch) · Ry(yaw)`, angles in degrees.
    fn from_pose(p: &Pose) -> M3 {
        let (sy, cy) = p.yaw.to_radians().sin_cos();
        let (sp, cp) = p.pitch.to_radians().sin_cos();
        let (sr, cr) = p.roll.to_radians().sin_cos();
        let ry = M3([[cy, 0.0, sy], [0.0, 1.0, 0.0], [-sy, 0.0, cy]]);
        let rx = M3([[1.0, 0.0, 0.0], [0.0, cp, -sp], [0.0, sp, cp]]);
        let rz = M3([[cr, -sr, 0.0], [sr, cr, 0.0], [0.0, 0.0, 1.0]]);
        rz.mul(&rx).mul(&ry)
    }
}

/// Per-subject head shape and placement, in millimeters (head frame: x
/// right, y down, z away from the camera; the face looks toward `-z`).
#[derive(Debug, Clone, PartialEq)]
pub struct HeadGeometry {
    pub radii: [f64; 3],
    pub eye_radius: f64,
    pub eye_spread: f64,
    pub eye_height: f64,
    pub nose_length: f64,
    pub nose_height: f64,
    pub nose_width: f64,
    /// Typical camera-to-head-center distance.
    pub distance: f64,
}

impl HeadGeometry {
    pub fn sample(rng: &mut impl Rng) -> Self {
        Self {
            radii: [
                rng.random_range(70.0..95.0),
                rng.random_range(95.0..125.0),
                rng.random_range(85.0..110.0),
            ],
            eye_radius: rng.random_range(14.0..22.0),
            eye_spread: rng.random_range(28.0..40.0),
            eye_height: rng.random_range(15.0..30.0),
            nose_length: rng.random_range(18.0..35.0),
            nose_height: rng.random_range(35.0..55.0),
            nose_width: rng.random_range(22.0..36.0),
            distance: rng.random_range(750.0..1250.0),
        }
    }

    /// Flat parameter vector, for comparisons between subjects.
    pub fn params(&self) -> Vec<f64> {
        let mut v = self.radii.to_vec();
        v.extend([
            self.eye_radius,
            self.eye_spread,
            self.eye_height,
            self.nose_length,
            self.nose_height,
            self.nose_width,
            self.distance,
        ]);
        v
    }

    fn solid(&self) -> Solid {
        let [rx, ry, rz] = self.radii;
        let front_z = |x: f64, y: f64| -rz * (1.0 - (x / rx).powi(2) - (y / ry).powi(2)).max(0.0).sqrt();
        let eyes = [-1.0, 1.0].map(|side| {
            let (x, y) = (side * self.eye_spread, -self.eye_height);
            Sphere {
                center: V3(x, y, front_z(x, y) + 0.4 * self.eye_radius),
                radius: self.eye_radius,
            }
        });
        let y_top = -self.eye_height + 5.0;
        let y_bot = y_top + self.nose_height;
        let tip_z = front_z(0.0, y_bot) - self.nose_length;
        let base_z = -0.4 * rz;
        let half = self.nose_width / 2.0;
        // (x, z) cross-section triangle, with the vertex opposite each edge
        let tri = [(0.0, tip_z), (half, base_z), (-half, base_z)];
        let mut planes = vec![
            Plane { n: V3(0.0, -1.0, 0.0), d: -y_top },
            Plane { n: V3(0.0, 1.0, 0.0), d: y_bot },
        ];
        for i in 0..3 {
            let (p, q, o) = (tri[i], tri[(i + 1) % 3], tri[(i + 2) % 3]);
            let (ex, ez) = (q.0 - p.0, q.1 - p.1);
            let mut n = V3(-ez, 0.0, ex).unit();
            if n.0 * (o.0 - p.0) + n.2 * (o.1 - p.1) > 0.0 {
                n = n.mul(-1.0);
            }
            planes.push(Plane { n, d: n.0 * p.0 + n.2 * p.1 });
        }
        Solid {
            radii: self.radii,
            eyes,
            nose: planes,
        }
    }
}

struct Sphere {
    center: V3,
    radius: f64,
}

/// Half-space `n·p ≤ d` with outward unit normal `n`.
struct Plane {
    n: V3,
    d: f64,
}

/// Entry parameter and outward surface normal of a ray hit.
#[derive(Clone, Copy)]
struct Hit {
    t: f64,
    normal: V3,
}

/// Ray/solid interval `[enter, exit]` with the normal at each end.
#[derive(Clone, Copy)]
struct Span {
    enter: Hit,
    exit: Hit,
}

struct Solid {
    radii: [f64; 3],
    eyes: [Sphere; 2],
    nose: Vec<Plane>,
}

fn solve_quadratic(a: f64, b: f64, c: f64) -> Option<(f64, f64)> {
    let disc = b * b - 4.0 * a * c;
    if disc <= 0.0 {
        return None;
    }
    let s = disc.sqrt();
    Some(((-b - s) / (2.0 * a), (-b + s) / (2.0 * a)))
}

impl Solid {
    fn ellipsoid(&self, o: V3, d: V3) -> Option<Span> {
        let [rx, ry, rz] = self.radii;
        let (os, ds) = (V3(o.0 / rx, o.1 / ry, o.2 / rz), V3(d.0 / rx, d.1 / ry, d.2 / rz));
        let (t0, t1) = solve_quadratic(ds.dot(ds), 2.0 * os.dot(ds), os.dot(os) - 1.0)?;
        let normal = |t: f64| {
            let p = o.add(d.mul(t));
            V3(p.0 / (rx * rx), p.1 / (ry * ry), p.2 / (rz * rz)).unit()
        };
        Some(Span {
            enter: Hit { t: t0, normal: normal(t0) },
            exit: Hit { t: t1, normal: normal(t1) },
        })
    }

    fn sphere(s: &Sphere, o: V3, d: V3) -> Option<Span> {
        let oc = o.sub(s.center);
        let (t0, t1) = solve_quadratic(d.dot(d), 2.0 * oc.dot(d), oc.dot(oc) - s.radius * s.radius)?;
        let normal = |t: f64| o.add(d.mul(t)).sub(s.center).unit();
        Some(Span {
            enter: Hit { t: t0, normal: normal(t0) },
            exit: Hit { t: t1, normal: normal(t1) },
        })
    }

    fn convex(planes: &[Plane], o: V3, d: V3) -> Option<Span> {
        let mut enter = Hit { t: f64::NEG_INFINITY, normal: V3(0.0, 0.0, -1.0) };
        let mut exit = Hit { t: f64::INFINITY, normal: V3(0.0, 0.0, 1.0) };
        for p in planes {
            let nd = p.n.dot(d);
            let dist = p.d - p.n.dot(o);
            if nd.abs() < 1e-12 {
                if dist < 0.0 {
                    return None;
                }
                continue;
            }
            let t = dist / nd;
            if nd < 0.0 {
                if t > enter.t {
                    enter = Hit { t, normal: p.n };
                }
            } else if t < exit.t {
                exit = Hit { t, normal: p.n };
            }
        }
        (enter.t < exit.t).then_some(Span { enter, exit })
    }

    /// First hit with `t > 0` of `(ellipsoid − eyes) ∪ nose`.
    fn first_hit(&self, o: V3, d: V3) -> Option<Hit> {
        let mut spans: Vec<Span> = self.ellipsoid(o, d).into_iter().collect();
        for eye in &self.eyes {
            let Some(cut) = Self::sphere(eye, o, d) else { continue };
            let mut next = Vec::with_capacity(spans.len() + 1);
            for s in spans {
                if cut.exit.t <= s.enter.t || cut.enter.t >= s.exit.t {
                    next.push(s);
                    continue;
                }
                let flip = |h: Hit| Hit { t: h.t, normal: h.normal.mul(-1.0) };
                if s.enter.t < cut.enter.t {
                    next.push(Span { enter: s.enter, exit: flip(cut.enter) });
                }
                if cut.exit.t < s.exit.t {
                    next.push(Span { enter: flip(cut.exit), exit: s.exit });
                }
            }
            spans = next;
        }
        spans.extend(Self::convex(&self.nose, o, d));
        spans
            .iter()
            .filter(|s| s.exit.t > 0.0 && s.enter.t > 0.0)
            .map(|s| s.enter)
            .min_by(|a, b| a.t.total_cmp(&b.t))
    }
}

/// Per-frame placement of a head.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Placement {
    /// Head center in camera coordinates (mm).
    pub center: (f64, f64, f64),
    pub pose: Pose,
}

/// Renders one frame; returns the gray image, the depth map and the
/// projected head center.
pub fn render(geometry: &HeadGeometry, place: &Placement, size: usize) -> (GrayImage, DepthMap, (f64, f64)) {
    let solid = geometry.solid();
    let rot = M3::from_pose(&place.pose);
    let c = V3(place.center.0, place.center.1, place.center.2);
    let f = FOCAL_PER_PIXEL * size as f64;
    let half = size as f64 / 2.0;
    // ray origin in head coordinates (camera at the origin)
    let o = rot.apply_t(c.mul(-1.0));
    let mut gray = Vec::with_capacity(size * size);
    let mut depth = Vec::with_capacity(size * size);
    for py in 0..size {
        for px in 0..size {
            let dir = V3((px as f64 + 0.5 - half) / f, (py as f64 + 0.5 - half) / f, 1.0);
            match solid.first_hit(o, rot.apply_t(dir)) {
                Some(hit) => {
                    let p = dir.mul(hit.t);
                    let n = rot.apply(hit.normal);
                    let to_light = LIGHT_POS.sub(p);
                    let dist = to_light.norm();
                    let lambert = n.dot(to_light.mul(1.0 / dist)).max(0.0);
                    let falloff = (1000.0 / dist).powi(2);
                    let v = (AMBIENT + ALBEDO * lambert * falloff).clamp(0.0, 1.0);
                    gray.push((v * 255.0).round() as u8);
                    depth.push((p.2.round() as u16).clamp(1, FAR_PLANE_MM - 1));
                }
                None => {
                    gray.push(BACKGROUND_GRAY);
                    depth.push(FAR_PLANE_MM);
                }
            }
        }
    }
    let center_px = (half + f * c.0 / c.2, half + f * c.1 / c.2);
    (
        Image::new(size, size, gray).expect("sized"),
        Image::new(size, size, depth).expect("sized"),
        center_px,
    )
}

/// Sequence of frame `i` out of `frames`: five contiguous blocks.
pub fn sequence_of_frame(i: u32, frames: u32) -> u32 {
    1 + (i as u64 * SEQUENCES as u64 / frames as u64) as u32
}

/// Pose for a frame of the given sequence: 1, 2, 3 vary yaw, pitch, roll
/// alone; 4 varies all three within ±30°, 5 within ±15°.
fn sample_pose(rng: &mut impl Rng, sequence: u32) -> Pose {
    let mut a = || rng.random_range(-30.0..=30.0);
    match sequence {
        1 => Pose { yaw: a(), pitch: 0.0, roll: 0.0 },
        2 => Pose { yaw: 0.0, pitch: a(), roll: 0.0 },
        3 => Pose { yaw: 0.0, pitch: 0.0, roll: a() },
        4 => Pose { yaw: a(), pitch: a(), roll: a() },
        _ => Pose { yaw: a() / 2.0, pitch: a() / 2.0, roll: a() / 2.0 },
    }
}

fn subject_rng(seed: u64, subject: u32, stream: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(2 * subject as u64 + stream);
    rng
}

/// Geometry of `subject` under `seed`.
pub fn subject_geometry(seed: u64, subject: u32) -> HeadGeometry {
    HeadGeometry::sample(&mut subject_rng(seed, subject, 0))
}

/// `n_subjects × n_frames` samples, subjects numbered from 1, ordered by
/// (subject, sequence, frame).
pub fn synth_face_dataset(n_subjects: u32, n_frames: u32, size: usize, seed: u64) -> Result<Vec<FaceSample>> {
    if size == 0 || size % 16 != 0 {
        return Err(Error::Config(format!("image size {size} must be a positive multiple of 16")));
    }
    if n_subjects == 0 || n_frames == 0 {
        return Err(Error::Config("need at least one subject and one frame".into()));
    }
    let mut out = Vec::with_capacity((n_subjects * n_frames) as usize);
    for subject in 1..=n_subjects {
        let geometry = subject_geometry(seed, subject);
        let mut rng = subject_rng(seed, subject, 1);
        // keep the head inside the frame: ±4% of the field of view
        let span = 0.04 * size as f64 / (FOCAL_PER_PIXEL * size as f64);
        for frame in 0..n_frames {
            let sequence = sequence_of_frame(frame, n_frames);
            let pose = sample_pose(&mut rng, sequence);
            let z = geometry.distance + rng.random_range(-15.0..=15.0);
            let place = Placement {
                center: (rng.random_range(-span..=span) * z, rng.random_range(-span..=span) * z, z),
                pose,
            };
            let (gray, depth, head_center) = render(&geometry, &place, size);
            out.push(FaceSample {
                gray,
                depth,
                subject_id: subject,
                sequence_id: sequence,
                frame,
                head_center,
                pose,
            });
        }
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn deterministic_per_seed() {
        let a = synth_face_dataset(2, 5, 32, 11).unwrap();
        assert_eq!(a, synth_face_dataset(2, 5, 32, 11).unwrap());
        assert_ne!(a, synth_face_dataset(2, 5, 32, 12).unwrap());
    }

    #[test]
    fn background_is_far_and_head_nearer() {
        for s in synth_face_dataset(2, 10, 32, 3).unwrap() {
            assert_eq!(s.depth.get(0, 0), FAR_PLANE_MM);
            assert_eq!(s.gray.get(0, 0), BACKGROUND_GRAY);
            let (cx, cy) = s.head_center;
            let center = s.depth.get(cx as usize, cy as usize);
            assert!(center > 0 && center < FAR_PLANE_MM, "center depth {center}");
            assert!(s.depth.pixels().iter().all(|&d| d > 0 && d <= FAR_PLANE_MM));
            s.validate().unwrap();
        }
    }

    #[test]
    fn subjects_differ() {
        let g: Vec<_> = (1..=6).map(|s| subject_geometry(5, s).params()).collect();
        for i in 0..g.len() {
            for j in i + 1..g.len() {
                let d: f64 = g[i].iter().zip(&g[j]).map(|(a, b)| (a - b).powi(2)).sum();
                assert!(d > 0.0);
            }
        }
    }

    #[test]
    fn sequences_cover_one_to_five() {
        let seqs: Vec<u32> = (0..50).map(|i| sequence_of_frame(i, 50)).collect();
        assert_eq!(seqs[0], 1);
        assert_eq!(seqs[49], 5);
        assert!(seqs.windows(2).all(|w| w[0] <= w[1]));
        let d = synth_face_dataset(1, 50, 16, 0).unwrap();
        for s in d.iter().filter(|s| s.sequence_id == 2) {
            assert_eq!((s.pose.yaw, s.pose.roll), (0.0, 0.0));
        }
    }

    #[test]
    fn frontal_nose_is_nearest() {
        let g = subject_geometry(1, 1);
        let place = Placement { center: (0.0, 0.0, 1000.0), pose: Pose::default() };
        let (gray, depth, c) = render(&g, &place, 64);
        assert_eq!(c, (32.0, 32.0));
        let min = *depth.pixels().iter().min().unwrap();
        assert!((min as f64) < 1000.0 - g.radii[2]);
        assert!(gray.pixels().iter().any(|&v| v > 100));
    }

    #[test]
    fn rejects_bad_size() {
        assert!(synth_face_dataset(1, 1, 30, 0).is_err());
    }
}
