//! Ray-cast tabletop fixtures built from labeled primitives.
//!
//! None of this reads or imitates the real dataset; it exists so the pipeline
//! can be exercised against scenes whose part layout is known exactly.

use std::collections::BTreeMap;
use std::f64::consts::PI;
use std::fs;
use std::path::Path;

use image::{Rgb, RgbImage};
use nalgebra::{Point3, Rotation3, Unit, UnitQuaternion, Vector3};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::manifest::{write_manifest, Manifest, ManifestEntry};
use super::DatasetError;
use crate::geometry::{CameraIntrinsics, DepthImage, Mask2D, PointCloud};

/// Camera-frame depth of the table plane.
pub const TABLE_DEPTH: f64 = 0.6;

/// Classes the generator can build.
pub const SYNTHETIC_CLASSES: &[&str] = &["hammer", "knife", "screwdriver", "spoon", "pan", "toothbrush"];

pub fn default_intrinsics() -> CameraIntrinsics {
    CameraIntrinsics {
        fx: 240.0,
        fy: 240.0,
        cx: 128.0,
        cy: 96.0,
        width: 256,
        height: 192,
    }
}

#[derive(Clone, Debug, PartialEq)]
pub enum Primitive {
    Cylinder {
        center: Point3<f64>,
        axis: Unit<Vector3<f64>>,
        radius: f64,
        half_length: f64,
    },
    Cuboid {
        center: Point3<f64>,
        rotation: Rotation3<f64>,
        half_extents: Vector3<f64>,
    },
}

impl Primitive {
    /// Smallest positive ray parameter at which `origin + t·dir` hits the surface.
    pub fn intersect(&self, origin: &Point3<f64>, dir: &Vector3<f64>) -> Option<f64> {
        match self {
            Primitive::Cylinder {
                center,
                axis,
                radius,
                half_length,
            } => {
                let rot = frame_for(axis);
                let o = rot.inverse() * (origin - center);
                let d = rot.inverse() * dir;
                let mut best: Option<f64> = None;
                let mut keep = |t: f64| {
                    if t > 1e-12 && best.is_none_or(|b| t < b) {
                        best = Some(t);
                    }
                };
                let a = d.x * d.x + d.y * d.y;
                if a > 1e-18 {
                    let b = 2.0 * (o.x * d.x + o.y * d.y);
                    let c = o.x * o.x + o.y * o.y - radius * radius;
                    let disc = b * b - 4.0 * a * c;
                    if disc >= 0.0 {
                        for t in [(-b - disc.sqrt()) / (2.0 * a), (-b + disc.sqrt()) / (2.0 * a)] {
                            if (o.z + t * d.z).abs() <= *half_length {
                                keep(t);
                            }
                        }
                    }
                }
                if d.z.abs() > 1e-18 {
                    for cap in [-half_length, *half_length] {
                        let t = (cap - o.z) / d.z;
                        let (x, y) = (o.x + t * d.x, o.y + t * d.y);
                        if x * x + y * y <= radius * radius {
                            keep(t);
                        }
                    }
                }
                best
            }
            Primitive::Cuboid {
                center,
                rotation,
                half_extents,
            } => {
                let o = rotation.inverse() * (origin - center);
                let d = rotation.inverse() * dir;
                let (mut t0, mut t1) = (f64::NEG_INFINITY, f64::INFINITY);
                for k in 0..3 {
                    if d[k].abs() < 1e-18 {
                        if o[k].abs() > half_extents[k] {
                            return None;
                        }
                        continue;
                    }
                    let a = (-half_extents[k] - o[k]) / d[k];
                    let b = (half_extents[k] - o[k]) / d[k];
                    t0 = t0.max(a.min(b));
                    t1 = t1.min(a.max(b));
                }
                if t0 > t1 || t1 <= 1e-12 {
                    None
                } else if t0 > 1e-12 {
                    Some(t0)
                } else {
                    Some(t1)
                }
            }
        }
    }
}

fn frame_for(axis: &Unit<Vector3<f64>>) -> Rotation3<f64> {
    UnitQuaternion::rotation_between(&Vector3::z(), axis)
        .unwrap_or_else(|| UnitQuaternion::from_axis_angle(&Vector3::x_axis(), PI))
        .to_rotation_matrix()
}

#[derive(Clone, Debug, PartialEq)]
pub struct LabeledPrimitive {
    pub label: String,
    pub shape: Primitive,
}

#[derive(Clone, Debug, PartialEq)]
pub struct SyntheticObject {
    pub class: String,
    pub parts: Vec<LabeledPrimitive>,
}

/// Rendered observation with exact part masks (parts never overlap).
#[derive(Clone, Debug)]
pub struct RenderedScene {
    pub intrinsics: CameraIntrinsics,
    pub depth: DepthImage,
    pub rgb: RgbImage,
    pub object_mask: Mask2D,
    pub part_masks: BTreeMap<String, Mask2D>,
}

/// Lying-on-the-table cylinder along in-plane direction `dir`, starting `start` along it.
fn lying_cylinder(origin: Point3<f64>, dir: Vector3<f64>, start: f64, length: f64, radius: f64) -> Primitive {
    let mid = origin + dir * (start + length / 2.0);
    Primitive::Cylinder {
        center: Point3::new(mid.x, mid.y, TABLE_DEPTH - radius),
        axis: Unit::new_normalize(dir),
        radius,
        half_length: length / 2.0,
    }
}

fn lying_cuboid(origin: Point3<f64>, dir: Vector3<f64>, start: f64, length: f64, width: f64, height: f64) -> Primitive {
    let mid = origin + dir * (start + length / 2.0);
    let angle = dir.y.atan2(dir.x);
    Primitive::Cuboid {
        center: Point3::new(mid.x, mid.y, TABLE_DEPTH - height / 2.0),
        rotation: Rotation3::from_axis_angle(&Vector3::z_axis(), angle),
        half_extents: Vector3::new(length / 2.0, width / 2.0, height / 2.0),
    }
}

/// Builds a randomized instance of `class`; `None` for classes without a generator.
pub fn synthetic_object(class: &str, seed: u64) -> Option<SyntheticObject> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let theta = rng.random_range(0.0..2.0 * PI);
    let dir = Vector3::new(theta.cos(), theta.sin(), 0.0);
    let side = Vector3::new(-theta.sin(), theta.cos(), 0.0);
    let mut r = |lo: f64, hi: f64| rng.random_range(lo..hi);
    let offset = Point3::new(r(-0.02, 0.02), r(-0.02, 0.02), 0.0);

    let part = |label: &str, shape| LabeledPrimitive {
        label: label.into(),
        shape,
    };
    let parts = match class {
        "hammer" => {
            let (lh, rh) = (r(0.22, 0.28), r(0.011, 0.015));
            let (lk, rk) = (r(0.09, 0.12), r(0.017, 0.022));
            let start = offset - dir * (lh / 2.0);
            let head_mid = start + dir * lh;
            vec![
                part("handle", lying_cylinder(start, dir, 0.0, lh, rh)),
                part("head", lying_cylinder(head_mid - side * (lk / 2.0), side, 0.0, lk, rk)),
            ]
        }
        "knife" => {
            let (lh, rh) = (r(0.09, 0.12), r(0.009, 0.012));
            let (lb, wb) = (r(0.12, 0.17), r(0.025, 0.034));
            let start = offset - dir * ((lh + lb) / 2.0);
            vec![
                part("handle", lying_cylinder(start, dir, 0.0, lh, rh)),
                part("blade", lying_cuboid(start, dir, lh, lb, wb, 0.003)),
            ]
        }
        "screwdriver" => {
            let (lh, rh) = (r(0.09, 0.11), r(0.013, 0.016));
            let (ls, lt) = (r(0.08, 0.10), r(0.025, 0.03));
            let start = offset - dir * ((lh + ls + lt) / 2.0);
            vec![
                part("handle", lying_cylinder(start, dir, 0.0, lh, rh)),
                part("shaft", lying_cylinder(start, dir, lh, ls, 0.005)),
                part("tip", lying_cylinder(start, dir, lh + ls, lt, 0.0045)),
            ]
        }
        "spoon" => {
            let lh = r(0.12, 0.15);
            let (lb, wb) = (r(0.05, 0.06), r(0.035, 0.042));
            let start = offset - dir * ((lh + lb) / 2.0);
            vec![
                part("handle", lying_cuboid(start, dir, 0.0, lh, 0.013, 0.005)),
                part("bowl", lying_cuboid(start, dir, lh, lb, wb, 0.012)),
            ]
        }
        "pan" => {
            let (lh, rh) = (r(0.13, 0.16), r(0.011, 0.014));
            let (rb, hb) = (r(0.09, 0.11), r(0.035, 0.045));
            let start = offset - dir * ((lh + 2.0 * rb) / 2.0);
            let body_center = start + dir * (lh + rb);
            vec![
                part("handle", lying_cylinder(start, dir, 0.0, lh, rh)),
                part(
                    "body",
                    Primitive::Cylinder {
                        center: Point3::new(body_center.x, body_center.y, TABLE_DEPTH - hb / 2.0),
                        axis: Vector3::z_axis(),
                        radius: rb,
                        half_length: hb / 2.0,
                    },
                ),
            ]
        }
        "toothbrush" => {
            let (lh, lb) = (r(0.13, 0.15), r(0.025, 0.032));
            let start = offset - dir * ((lh + lb) / 2.0);
            vec![
                part("handle", lying_cuboid(start, dir, 0.0, lh, 0.013, 0.009)),
                part("brush head", lying_cuboid(start, dir, lh, lb, 0.013, 0.022)),
            ]
        }
        _ => return None,
    };
    Some(SyntheticObject {
        class: class.into(),
        parts,
    })
}

const PALETTE: [[u8; 3]; 4] = [[200, 60, 40], [50, 90, 200], [60, 170, 80], [210, 180, 40]];

/// Ray-casts `object` on the table from a camera looking straight down.
pub fn render(object: &SyntheticObject, intrinsics: &CameraIntrinsics) -> RenderedScene {
    let (w, h) = intrinsics.dims();
    let mut meters = vec![TABLE_DEPTH; w * h];
    let mut owner: Vec<Option<usize>> = vec![None; w * h];
    let origin = Point3::origin();
    for v in 0..h {
        for u in 0..w {
            let dir = Vector3::new(
                (u as f64 - intrinsics.cx) / intrinsics.fx,
                (v as f64 - intrinsics.cy) / intrinsics.fy,
                1.0,
            );
            let i = v * w + u;
            for (k, p) in object.parts.iter().enumerate() {
                if let Some(t) = p.shape.intersect(&origin, &dir) {
                    if t < meters[i] {
                        meters[i] = t;
                        owner[i] = Some(k);
                    }
                }
            }
        }
    }
    // store at millimeter precision, as the sensor format does
    for m in &mut meters {
        *m = (*m * 1000.0).round() / 1000.0;
    }
    let object_mask = Mask2D::from_fn(w, h, |u, v| owner[v * w + u].is_some());
    let mut part_masks = BTreeMap::new();
    for (k, p) in object.parts.iter().enumerate() {
        let m = Mask2D::from_fn(w, h, |u, v| owner[v * w + u] == Some(k));
        part_masks
            .entry(p.label.clone())
            .and_modify(|acc: &mut Mask2D| *acc = acc.union(&m).expect("same dims"))
            .or_insert(m);
    }
    let rgb = RgbImage::from_fn(w as u32, h as u32, |u, v| {
        let i = v as usize * w + u as usize;
        match owner[i] {
            None => Rgb([120, 110, 100]),
            Some(k) => {
                let shade = (1.0 - (meters[i] - 0.5) * 2.0).clamp(0.4, 1.0);
                let c = PALETTE[k % PALETTE.len()];
                Rgb(c.map(|x| (x as f64 * shade) as u8))
            }
        }
    });
    RenderedScene {
        intrinsics: *intrinsics,
        depth: DepthImage::from_meters(w, h, meters).expect("dims match"),
        rgb,
        object_mask,
        part_masks,
    }
}

/// What the fixture segmentation backend reports for each scene.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum BackendMode {
    /// Every ground-truth part mask.
    Perfect,
    /// Only the part named "handle", when the class has one.
    HandleOnly,
    /// No masks at all.
    Empty,
    /// Random drops, dilations and spill outside the object.
    Degraded,
}

impl BackendMode {
    pub const ALL: [BackendMode; 4] = [
        BackendMode::Perfect,
        BackendMode::HandleOnly,
        BackendMode::Empty,
        BackendMode::Degraded,
    ];

    pub fn dir_name(self) -> &'static str {
        match self {
            BackendMode::Perfect => "perfect",
            BackendMode::HandleOnly => "handle-only",
            BackendMode::Empty => "empty",
            BackendMode::Degraded => "degraded",
        }
    }
}

/// One backend output record as stored in a fixture directory.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct FixtureMask {
    pub label: String,
    pub mask: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub score: Option<f64>,
}

fn dilate(mask: &Mask2D, r: usize) -> Mask2D {
    let (w, h) = mask.dims();
    Mask2D::from_fn(w, h, |u, v| {
        let (u0, v0) = (u.saturating_sub(r), v.saturating_sub(r));
        let (u1, v1) = ((u + r).min(w - 1), (v + r).min(h - 1));
        (v0..=v1).any(|y| (u0..=u1).any(|x| mask.get(x, y)))
    })
}

/// Backend hypotheses for `scene` under `mode`, in taxonomy order.
pub fn backend_masks(class: &str, scene: &RenderedScene, mode: BackendMode, seed: u64) -> Vec<(String, Mask2D)> {
    let mut names: Vec<&String> = scene.part_masks.keys().collect();
    names.sort_by_key(|n| super::label_order_key(class, n));
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0x5eed);
    names
        .into_iter()
        .filter_map(|n| {
            let m = &scene.part_masks[n];
            match mode {
                BackendMode::Perfect => Some((n.clone(), m.clone())),
                BackendMode::HandleOnly => (n == "handle").then(|| (n.clone(), m.clone())),
                BackendMode::Empty => None,
                BackendMode::Degraded => {
                    if rng.random_bool(0.3) {
                        None
                    } else if rng.random_bool(0.5) {
                        Some((n.clone(), dilate(m, rng.random_range(1..=2))))
                    } else {
                        Some((n.clone(), m.clone()))
                    }
                }
            }
        })
        .filter(|(_, m)| !m.is_empty())
        .collect()
}

fn io_err(path: &Path, e: impl std::fmt::Display) -> DatasetError {
    DatasetError::Io {
        path: path.display().to_string(),
        message: e.to_string(),
    }
}

/// Writes a fixture dataset under `root`: `instances` scenes per class, a
/// `dataset.json` manifest, and one backend directory per mode at
/// `backend/<mode>/<scene>.json`.
pub fn write_suite(root: &Path, classes: &[&str], instances: usize, seed: u64) -> Result<Manifest, DatasetError> {
    let intr = default_intrinsics();
    fs::create_dir_all(root).map_err(|e| io_err(root, e))?;
    for mode in BackendMode::ALL {
        let d = root.join("backend").join(mode.dir_name());
        fs::create_dir_all(&d).map_err(|e| io_err(&d, e))?;
    }
    let mut entries = Vec::new();
    for (ci, class) in classes.iter().enumerate() {
        for inst in 0..instances {
            let scene_seed = seed
                .wrapping_mul(1_000_003)
                .wrapping_add((ci * 1000 + inst) as u64);
            let object = synthetic_object(class, scene_seed)
                .ok_or_else(|| DatasetError::Synthetic(format!("no generator for class '{class}'")))?;
            let scene = render(&object, &intr);
            let stem = format!("{}_{:02}", class.replace(' ', "_"), inst);
            let save_mask = |name: &str, m: &Mask2D| -> Result<String, DatasetError> {
                let file = format!("{stem}_{}.png", name.replace(' ', "_"));
                m.save_png(&root.join(&file)).map_err(|e| io_err(&root.join(&file), e))?;
                Ok(file)
            };
            let rgb = format!("{stem}_rgb.png");
            scene
                .rgb
                .save(root.join(&rgb))
                .map_err(|e| io_err(&root.join(&rgb), e))?;
            let depth = format!("{stem}_depth.png");
            scene
                .depth
                .save_png(&root.join(&depth))
                .map_err(|e| io_err(&root.join(&depth), e))?;
            let object_mask = save_mask("object", &scene.object_mask)?;
            let mut parts = BTreeMap::new();
            for (name, m) in &scene.part_masks {
                parts.insert(name.clone(), save_mask(&format!("gt_{name}"), m)?);
            }
            for mode in BackendMode::ALL {
                let dir = root.join("backend").join(mode.dir_name());
                let mut records = Vec::new();
                for (label, m) in backend_masks(class, &scene, mode, scene_seed) {
                    let file = format!("{stem}_{}.png", label.replace(' ', "_"));
                    m.save_png(&dir.join(&file)).map_err(|e| io_err(&dir.join(&file), e))?;
                    records.push(FixtureMask {
                        label,
                        mask: file,
                        score: Some(1.0),
                    });
                }
                let path = dir.join(format!("{stem}_rgb.json"));
                let text = serde_json::to_string_pretty(&records).expect("records serialize");
                fs::write(&path, text).map_err(|e| io_err(&path, e))?;
            }
            entries.push(ManifestEntry {
                object_class: class.to_string(),
                instance_id: format!("{inst:02}"),
                pose_id: "0".into(),
                rgb,
                depth,
                intrinsics: intr,
                object_mask,
                parts,
            });
        }
    }
    let manifest = Manifest { entries };
    write_manifest(root, &manifest)?;
    Ok(manifest)
}

/// Uniform samples on the surface of a rotated box.
pub fn sample_box_surface(
    center: Point3<f64>,
    rotation: Rotation3<f64>,
    half_extents: Vector3<f64>,
    n: usize,
    rng: &mut impl Rng,
) -> PointCloud {
    let e = half_extents;
    let areas = [e.y * e.z, e.y * e.z, e.x * e.z, e.x * e.z, e.x * e.y, e.x * e.y];
    let total: f64 = areas.iter().sum();
    let pts = (0..n)
        .map(|_| {
            let mut pick = rng.random_range(0.0..total);
            let mut face = 0;
            while face < 5 && pick >= areas[face] {
                pick -= areas[face];
                face += 1;
            }
            let a = rng.random_range(-1.0..1.0);
            let b = rng.random_range(-1.0..1.0);
            let sign = if face % 2 == 0 { 1.0 } else { -1.0 };
            let local = match face / 2 {
                0 => Vector3::new(sign * e.x, a * e.y, b * e.z),
                1 => Vector3::new(a * e.x, sign * e.y, b * e.z),
                _ => Vector3::new(a * e.x, b * e.y, sign * e.z),
            };
            center + rotation * local
        })
        .collect();
    PointCloud::new(pts).expect("finite samples")
}

/// Uniform samples on a closed cylinder (side and both caps).
pub fn sample_cylinder_surface(
    center: Point3<f64>,
    axis: Unit<Vector3<f64>>,
    radius: f64,
    half_length: f64,
    n: usize,
    rng: &mut impl Rng,
) -> PointCloud {
    let rot = frame_for(&axis);
    let side = 2.0 * PI * radius * 2.0 * half_length;
    let cap = PI * radius * radius;
    let pts = (0..n)
        .map(|_| {
            let phi = rng.random_range(0.0..2.0 * PI);
            let pick = rng.random_range(0.0..side + 2.0 * cap);
            let local = if pick < side {
                Vector3::new(radius * phi.cos(), radius * phi.sin(), rng.random_range(-half_length..half_length))
            } else {
                let rr = radius * rng.random::<f64>().sqrt();
                let z = if pick < side + cap { half_length } else { -half_length };
                Vector3::new(rr * phi.cos(), rr * phi.sin(), z)
            };
            center + rot * local
        })
        .collect();
    PointCloud::new(pts).expect("finite samples")
}

pub fn sample_sphere_surface(center: Point3<f64>, radius: f64, n: usize, rng: &mut impl Rng) -> PointCloud {
    let pts = (0..n)
        .map(|_| {
            let z: f64 = rng.random_range(-1.0..1.0);
            let phi = rng.random_range(0.0..2.0 * PI);
            let s = (1.0 - z * z).sqrt();
            center + Vector3::new(s * phi.cos(), s * phi.sin(), z) * radius
        })
        .collect();
    PointCloud::new(pts).expect("finite samples")
}

/// Samples on a flat rectangle spanned by `u` and `v` around `center`.
pub fn sample_plane_patch(
    center: Point3<f64>,
    u: Vector3<f64>,
    v: Vector3<f64>,
    n: usize,
    rng: &mut impl Rng,
) -> PointCloud {
    let pts = (0..n)
        .map(|_| center + u * rng.random_range(-1.0..1.0) + v * rng.random_range(-1.0..1.0))
        .collect();
    PointCloud::new(pts).expect("finite samples")
}
