use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

use super::image::Image;

/// 18-joint body model, in keypoint order.
pub const JOINT_NAMES: [&str; 18] = [
    "nose",
    "neck",
    "right_shoulder",
    "right_elbow",
    "right_wrist",
    "left_shoulder",
    "left_elbow",
    "left_wrist",
    "right_hip",
    "right_knee",
    "right_ankle",
    "left_hip",
    "left_knee",
    "left_ankle",
    "right_eye",
    "left_eye",
    "right_ear",
    "left_ear",
];

/// Limb connectivity over [`JOINT_NAMES`].
pub const EDGES: [[usize; 2]; 17] = [
    [1, 2],
    [1, 5],
    [2, 3],
    [3, 4],
    [5, 6],
    [6, 7],
    [1, 8],
    [8, 9],
    [9, 10],
    [1, 11],
    [11, 12],
    [12, 13],
    [1, 0],
    [0, 14],
    [14, 16],
    [0, 15],
    [15, 17],
];

/// Per-edge stroke colors in color mode.
pub const EDGE_PALETTE: [[u8; 3]; 17] = [
    [255, 0, 0],
    [255, 85, 0],
    [255, 170, 0],
    [255, 255, 0],
    [170, 255, 0],
    [85, 255, 0],
    [0, 255, 0],
    [0, 255, 85],
    [0, 255, 170],
    [0, 255, 255],
    [0, 170, 255],
    [0, 85, 255],
    [0, 0, 255],
    [85, 0, 255],
    [170, 0, 255],
    [255, 0, 255],
    [255, 0, 170],
];

pub const STROKE_WIDTH: usize = 3;
pub const JOINT_RADIUS: usize = 4;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Joint {
    pub x: f32,
    pub y: f32,
    pub visible: bool,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SkeletonPose {
    pub joints: [Joint; 18],
}

impl SkeletonPose {
    pub fn invisible() -> Self {
        Self {
            joints: [Joint {
                x: 0.0,
                y: 0.0,
                visible: false,
            }; 18],
        }
    }

    pub fn set(&mut self, name: &str, x: f32, y: f32) {
        let i = joint_index(name).expect("known joint name");
        self.joints[i] = Joint {
            x,
            y,
            visible: true,
        };
    }

    pub fn joint(&self, name: &str) -> Option<&Joint> {
        joint_index(name).map(|i| &self.joints[i])
    }

    pub fn visible_count(&self) -> usize {
        self.joints.iter().filter(|j| j.visible).count()
    }

    /// Visible joints must lie inside `h x w`.
    pub fn validate(&self, h: usize, w: usize) -> Result<()> {
        for (j, name) in self.joints.iter().zip(JOINT_NAMES) {
            if j.visible && !(j.x >= 0.0 && j.y >= 0.0 && j.x < w as f32 && j.y < h as f32) {
                return Err(Error::contract(format!(
                    "joint `{name}` at ({}, {}) outside {h}x{w}",
                    j.x, j.y
                )));
            }
        }
        Ok(())
    }

    pub fn to_json(&self) -> String {
        let doc = SkeletonJson {
            joints: self
                .joints
                .iter()
                .zip(JOINT_NAMES)
                .map(|(j, name)| JointJson {
                    name: name.to_owned(),
                    x: j.x,
                    y: j.y,
                    v: j.visible as u8,
                })
                .collect(),
            edges: EDGES.to_vec(),
        };
        serde_json::to_string_pretty(&doc).expect("skeleton serializes")
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let doc: SkeletonJson = serde_json::from_str(text)?;
        if doc.edges.iter().any(|e| e.iter().any(|&i| i >= 18)) {
            return Err(Error::contract("skeleton edge references unknown joint"));
        }
        let mut pose = Self::invisible();
        for j in doc.joints {
            let i = joint_index(&j.name)
                .ok_or_else(|| Error::contract(format!("unknown joint `{}`", j.name)))?;
            pose.joints[i] = Joint {
                x: j.x,
                y: j.y,
                visible: j.v != 0,
            };
        }
        Ok(pose)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.to_json()).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_json(&text).map_err(|e| Error::Format {
            path: path.into(),
            msg: e.to_string(),
        })
    }
}

pub fn joint_index(name: &str) -> Option<usize> {
    JOINT_NAMES.iter().position(|&n| n == name)
}

#[derive(Serialize, Deserialize)]
struct JointJson {
    name: String,
    x: f32,
    y: f32,
    v: u8,
}

#[derive(Serialize, Deserialize)]
struct SkeletonJson {
    joints: Vec<JointJson>,
    edges: Vec<[usize; 2]>,
}

/// Integer points of the Bresenham line from `a` to `b`, inclusive.
pub fn bresenham(a: (i64, i64), b: (i64, i64)) -> Vec<(i64, i64)> {
    let (mut x0, mut y0) = a;
    let (x1, y1) = b;
    let dx = (x1 - x0).abs();
    let dy = -(y1 - y0).abs();
    let sx = if x0 < x1 { 1 } else { -1 };
    let sy = if y0 < y1 { 1 } else { -1 };
    let mut err = dx + dy;
    let mut pts = Vec::new();
    loop {
        pts.push((x0, y0));
        if x0 == x1 && y0 == y1 {
            break;
        }
        let e2 = 2 * err;
        if e2 >= dy {
            err += dy;
            x0 += sx;
        }
        if e2 <= dx {
            err += dx;
            y0 += sy;
        }
    }
    pts
}

/// Pixels of a 3-px-wide segment: the Bresenham line widened by one pixel on
/// each side along the minor axis.
pub fn thick_segment(a: (i64, i64), b: (i64, i64)) -> Vec<(i64, i64)> {
    let horizontal = (b.0 - a.0).abs() >= (b.1 - a.1).abs();
    let half = (STROKE_WIDTH / 2) as i64;
    bresenham(a, b)
        .into_iter()
        .flat_map(|(x, y)| {
            (-half..=half).map(move |o| if horizontal { (x, y + o) } else { (x + o, y) })
        })
        .collect()
}

/// Pixels of a filled disc.
pub fn disc(center: (i64, i64), radius: usize) -> Vec<(i64, i64)> {
    let r = radius as i64;
    (-r..=r)
        .flat_map(|dy| (-r..=r).map(move |dx| (dx, dy)))
        .filter(|(dx, dy)| dx * dx + dy * dy <= r * r)
        .map(|(dx, dy)| (center.0 + dx, center.1 + dy))
        .collect()
}

fn plot(img: &mut Image, pts: &[(i64, i64)], rgb: [f32; 3]) {
    let (h, w) = (img.height() as i64, img.width() as i64);
    for &(x, y) in pts {
        if x >= 0 && y >= 0 && x < w && y < h {
            img.put(y as usize, x as usize, rgb);
        }
    }
}

fn to_px(j: &Joint) -> (i64, i64) {
    (j.x.round() as i64, j.y.round() as i64)
}

fn rgb8(c: [u8; 3]) -> [f32; 3] {
    c.map(|v| v as f32 / 255.0)
}

/// Draws the stick figure on black. Color mode uses [`EDGE_PALETTE`] for
/// edges and joints; gray mode uses white strokes.
pub fn rasterize_skeleton(pose: &SkeletonPose, h: usize, w: usize, color: bool) -> Result<Image> {
    pose.validate(h, w)?;
    let mut img = Image::black(h, w)?;
    for (k, [i, j]) in EDGES.iter().enumerate() {
        let (a, b) = (&pose.joints[*i], &pose.joints[*j]);
        if !(a.visible && b.visible) {
            continue;
        }
        let rgb = if color {
            rgb8(EDGE_PALETTE[k])
        } else {
            [1.0; 3]
        };
        plot(&mut img, &thick_segment(to_px(a), to_px(b)), rgb);
    }
    for (k, jt) in pose.joints.iter().enumerate() {
        if !jt.visible {
            continue;
        }
        let rgb = if color {
            rgb8(EDGE_PALETTE[k % EDGE_PALETTE.len()])
        } else {
            [1.0; 3]
        };
        plot(&mut img, &disc(to_px(jt), JOINT_RADIUS), rgb);
    }
    Ok(img)
}
