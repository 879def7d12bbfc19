//! Articulated stick-sprite rendering.

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::imaging::{luma, BinaryMask, BodyPart, Image, PoseMap, SkeletonPose};

/// Joint-angle slots, in radians. Shoulders and hips are measured from
/// straight down, positive pointing away from the body; elbows and knees are
/// relative to the parent segment, positive continuing outward.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Angle {
    RightShoulder = 0,
    RightElbow = 1,
    LeftShoulder = 2,
    LeftElbow = 3,
    RightHip = 4,
    RightKnee = 5,
    LeftHip = 6,
    LeftKnee = 7,
}

pub const ANGLE_LIMIT: f32 = 2.0;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ArticulatedFigure {
    pub angles: [f32; 8],
    pub torso_len: f32,
    pub torso_width: f32,
    pub upper_arm: f32,
    pub lower_arm: f32,
    pub upper_leg: f32,
    pub lower_leg: f32,
    pub head_radius: f32,
    pub arm_radius: f32,
    pub leg_radius: f32,
    /// Neck position in pixels.
    pub anchor: (f32, f32),
}

impl ArticulatedFigure {
    /// Default proportions for a square canvas of side `size`, centered,
    /// all angles zero.
    pub fn neutral(size: usize) -> Self {
        let s = size as f32 / 64.0;
        Self {
            angles: [0.0; 8],
            torso_len: 18.0 * s,
            torso_width: 14.0 * s,
            upper_arm: 10.0 * s,
            lower_arm: 9.0 * s,
            upper_leg: 12.0 * s,
            lower_leg: 11.0 * s,
            head_radius: 5.0 * s,
            arm_radius: 2.0 * s,
            leg_radius: 2.5 * s,
            anchor: (size as f32 / 2.0 - 0.5, 15.0 * s),
        }
    }

    /// Random proportions (+-10%), anchor jitter, and pose.
    pub fn random(rng: &mut impl Rng, size: usize) -> Self {
        let mut f = Self::neutral(size);
        let s = size as f32 / 64.0;
        let mut jitter = |v: &mut f32| *v *= rng.random_range(0.9..1.1);
        jitter(&mut f.torso_len);
        jitter(&mut f.torso_width);
        jitter(&mut f.upper_arm);
        jitter(&mut f.lower_arm);
        jitter(&mut f.upper_leg);
        jitter(&mut f.lower_leg);
        f.anchor.0 += rng.random_range(-3.0..3.0) * s;
        f.anchor.1 += rng.random_range(-1.0..1.0) * s;
        f.angles = random_angles(rng);
        f
    }

    pub fn with_angles(mut self, angles: [f32; 8]) -> Self {
        self.angles = angles;
        self
    }

    pub fn angle(&self, a: Angle) -> f32 {
        self.angles[a as usize]
    }

    pub fn validate_angles(&self) -> Result<()> {
        if self
            .angles
            .iter()
            .any(|a| !(-ANGLE_LIMIT..=ANGLE_LIMIT).contains(a))
        {
            return Err(Error::contract("joint angle outside [-2, 2] rad"));
        }
        Ok(())
    }

    /// Joint positions of the figure.
    pub fn joints(&self) -> FigureJoints {
        let (nx, ny) = self.anchor;
        let half = self.torso_width / 2.0;
        let r_sh = (nx - half, ny + 1.0);
        let l_sh = (nx + half, ny + 1.0);
        let hip_y = ny + self.torso_len;
        let r_hip = (nx - half * 0.55, hip_y);
        let l_hip = (nx + half * 0.55, hip_y);
        // side = -1 for the figure's right (image left).
        let limb = |origin: (f32, f32), side: f32, a: f32, len: f32| {
            (origin.0 + side * a.sin() * len, origin.1 + a.cos() * len)
        };
        use Angle::*;
        let r_el = limb(r_sh, -1.0, self.angle(RightShoulder), self.upper_arm);
        let r_wr = limb(
            r_el,
            -1.0,
            self.angle(RightShoulder) + self.angle(RightElbow),
            self.lower_arm,
        );
        let l_el = limb(l_sh, 1.0, self.angle(LeftShoulder), self.upper_arm);
        let l_wr = limb(
            l_el,
            1.0,
            self.angle(LeftShoulder) + self.angle(LeftElbow),
            self.lower_arm,
        );
        let r_kn = limb(r_hip, -1.0, self.angle(RightHip), self.upper_leg);
        let r_an = limb(
            r_kn,
            -1.0,
            self.angle(RightHip) + self.angle(RightKnee),
            self.lower_leg,
        );
        let l_kn = limb(l_hip, 1.0, self.angle(LeftHip), self.upper_leg);
        let l_an = limb(
            l_kn,
            1.0,
            self.angle(LeftHip) + self.angle(LeftKnee),
            self.lower_leg,
        );
        FigureJoints {
            head: (nx, ny - self.head_radius + 1.0),
            neck: (nx, ny),
            r_sh,
            r_el,
            r_wr,
            l_sh,
            l_el,
            l_wr,
            r_hip,
            r_kn,
            r_an,
            l_hip,
            l_kn,
            l_an,
        }
    }

    /// Axis-aligned extent `(x0, y0, x1, y1)` of everything drawn.
    fn extent(&self) -> (f32, f32, f32, f32) {
        let j = self.joints();
        let mut b = (
            f32::INFINITY,
            f32::INFINITY,
            f32::NEG_INFINITY,
            f32::NEG_INFINITY,
        );
        let mut grow = |p: (f32, f32), r: f32| {
            b.0 = b.0.min(p.0 - r);
            b.1 = b.1.min(p.1 - r);
            b.2 = b.2.max(p.0 + r);
            b.3 = b.3.max(p.1 + r);
        };
        grow(j.head, self.head_radius);
        for p in [j.r_sh, j.l_sh, j.r_el, j.l_el, j.r_wr, j.l_wr] {
            grow(p, self.arm_radius);
        }
        for p in [j.r_hip, j.l_hip, j.r_kn, j.l_kn, j.r_an, j.l_an] {
            grow(p, self.leg_radius);
        }
        let half = self.torso_width / 2.0;
        grow((j.neck.0 - half, j.neck.1), 0.0);
        grow((j.neck.0 + half, j.r_hip.1), 0.0);
        b
    }

    fn fits(&self, h: usize, w: usize) -> bool {
        let (x0, y0, x1, y1) = self.extent();
        x0 >= 0.0 && y0 >= 0.0 && x1 <= (w - 1) as f32 && y1 <= (h - 1) as f32
    }

    /// Shifts the anchor so the figure fits, trying at most `tries` times.
    pub fn fit_to(&self, h: usize, w: usize, tries: usize) -> Result<Self> {
        let mut f = *self;
        for _ in 0..tries {
            if f.fits(h, w) {
                return Ok(f);
            }
            let (x0, y0, x1, y1) = f.extent();
            let dx = if x0 < 0.0 {
                -x0
            } else if x1 > (w - 1) as f32 {
                (w - 1) as f32 - x1
            } else {
                0.0
            };
            let dy = if y0 < 0.0 {
                -y0
            } else if y1 > (h - 1) as f32 {
                (h - 1) as f32 - y1
            } else {
                0.0
            };
            // Round away from zero so sub-pixel overhangs still move the figure.
            f.anchor.0 += dx.signum() * dx.abs().ceil();
            f.anchor.1 += dy.signum() * dy.abs().ceil();
        }
        if f.fits(h, w) {
            Ok(f)
        } else {
            Err(Error::FigureOutOfBounds { h, w, tries })
        }
    }
}

/// Angles drawn from the ranges used for generation.
pub fn random_angles(rng: &mut impl Rng) -> [f32; 8] {
    let mut a = [0.0f32; 8];
    for side in 0..2 {
        a[2 * side] = rng.random_range(-0.3..1.9);
        a[2 * side + 1] = rng.random_range(-1.2..1.4);
        a[4 + 2 * side] = rng.random_range(-0.15..0.55);
        a[4 + 2 * side + 1] = rng.random_range(-0.6..0.6);
    }
    a
}

#[derive(Debug, Clone, Copy)]
pub struct FigureJoints {
    pub head: (f32, f32),
    pub neck: (f32, f32),
    pub r_sh: (f32, f32),
    pub r_el: (f32, f32),
    pub r_wr: (f32, f32),
    pub l_sh: (f32, f32),
    pub l_el: (f32, f32),
    pub l_wr: (f32, f32),
    pub r_hip: (f32, f32),
    pub r_kn: (f32, f32),
    pub r_an: (f32, f32),
    pub l_hip: (f32, f32),
    pub l_kn: (f32, f32),
    pub l_an: (f32, f32),
}

impl FigureJoints {
    pub fn skeleton(&self) -> SkeletonPose {
        let mut sk = SkeletonPose::invisible();
        for (name, p) in [
            ("nose", self.head),
            ("neck", self.neck),
            ("right_shoulder", self.r_sh),
            ("right_elbow", self.r_el),
            ("right_wrist", self.r_wr),
            ("left_shoulder", self.l_sh),
            ("left_elbow", self.l_el),
            ("left_wrist", self.l_wr),
            ("right_hip", self.r_hip),
            ("right_knee", self.r_kn),
            ("right_ankle", self.r_an),
            ("left_hip", self.l_hip),
            ("left_knee", self.l_kn),
            ("left_ankle", self.l_an),
        ] {
            sk.set(name, p.0, p.1);
        }
        sk
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum GarmentClass {
    Upper,
    Lower,
    Dress,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Pattern {
    Solid,
    Stripes,
    Checker,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GarmentSpec {
    pub class: GarmentClass,
    pub color: [f32; 3],
    pub pattern: Pattern,
    /// Pattern period in pixels.
    pub scale: usize,
}

pub const MAX_GARMENT_LUMA: f32 = 0.9;
pub const SKIN: [f32; 3] = [0.93, 0.77, 0.63];
/// Clothing on body regions the sampled garment does not cover.
pub const BASE_TOP: [f32; 3] = [0.55, 0.55, 0.5];
pub const BASE_BOTTOM: [f32; 3] = [0.25, 0.28, 0.4];

impl GarmentSpec {
    pub fn random(rng: &mut impl Rng, class: GarmentClass, size: usize) -> Self {
        let color = loop {
            let c = [
                rng.random_range(0.05..1.0),
                rng.random_range(0.05..1.0),
                rng.random_range(0.05..1.0),
            ];
            if luma(c) < MAX_GARMENT_LUMA - 0.05 {
                break c;
            }
        };
        let pattern = match rng.random_range(0..3) {
            0 => Pattern::Solid,
            1 => Pattern::Stripes,
            _ => Pattern::Checker,
        };
        let s = (size / 64).max(1);
        let scale = [8, 16][rng.random_range(0..2)] * s;
        Self {
            class,
            color,
            pattern,
            scale,
        }
    }

    pub fn random_class(rng: &mut impl Rng) -> GarmentClass {
        match rng.random_range(0..4) {
            0 | 1 => GarmentClass::Upper,
            2 => GarmentClass::Lower,
            _ => GarmentClass::Dress,
        }
    }

    /// Pattern color at pixel `(y, x)` relative to the neck.
    pub fn color_at(&self, dy: f32, dx: f32) -> [f32; 3] {
        let period = self.scale.max(2) as f32;
        let band = |v: f32| (v / (period / 2.0)).floor().rem_euclid(2.0) as i32;
        let alt = match self.pattern {
            Pattern::Solid => false,
            Pattern::Stripes => band(dy) == 1,
            Pattern::Checker => (band(dy) + band(dx)) % 2 == 1,
        };
        if alt {
            self.color.map(|c| c * 0.45)
        } else {
            self.color
        }
    }

    /// Meaningfully different garments (by pattern or color).
    pub fn distinct_from(&self, other: &GarmentSpec) -> bool {
        let dc: f32 = self
            .color
            .iter()
            .zip(&other.color)
            .map(|(a, b)| (a - b).abs())
            .sum();
        self.pattern != other.pattern || self.scale != other.scale || dc > 0.3
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum Region {
    Head,
    Torso,
    RightUpperArm,
    RightLowerArm,
    LeftUpperArm,
    LeftLowerArm,
    RightUpperLeg,
    RightLowerLeg,
    LeftUpperLeg,
    LeftLowerLeg,
}

impl Region {
    fn part(self) -> BodyPart {
        match self {
            Region::Head => BodyPart::Head,
            Region::Torso => BodyPart::Torso,
            Region::RightUpperArm => BodyPart::RightUpperArm,
            Region::RightLowerArm => BodyPart::RightLowerArm,
            Region::LeftUpperArm => BodyPart::LeftUpperArm,
            Region::LeftLowerArm => BodyPart::LeftLowerArm,
            Region::RightUpperLeg | Region::RightLowerLeg => BodyPart::RightLeg,
            Region::LeftUpperLeg | Region::LeftLowerLeg => BodyPart::LeftLeg,
        }
    }

    fn covered_by(self, class: GarmentClass) -> bool {
        use Region::*;
        match class {
            GarmentClass::Upper => matches!(self, Torso | RightUpperArm | LeftUpperArm),
            GarmentClass::Lower => matches!(
                self,
                RightUpperLeg | RightLowerLeg | LeftUpperLeg | LeftLowerLeg
            ),
            GarmentClass::Dress => matches!(self, Torso | RightUpperLeg | LeftUpperLeg),
        }
    }

    fn base_color(self) -> [f32; 3] {
        use Region::*;
        match self {
            Head | RightLowerArm | LeftLowerArm => SKIN,
            RightUpperArm | LeftUpperArm => SKIN,
            Torso => BASE_TOP,
            RightUpperLeg | RightLowerLeg | LeftUpperLeg | LeftLowerLeg => BASE_BOTTOM,
        }
    }
}

enum Shape {
    Disc((f32, f32), f32),
    Capsule((f32, f32), (f32, f32), f32),
    Rect(f32, f32, f32, f32),
}

impl Shape {
    fn contains(&self, x: f32, y: f32) -> bool {
        match *self {
            Shape::Disc((cx, cy), r) => (x - cx).powi(2) + (y - cy).powi(2) <= r * r,
            Shape::Capsule(a, b, r) => seg_dist2((x, y), a, b) <= r * r,
            Shape::Rect(x0, y0, x1, y1) => x >= x0 && x <= x1 && y >= y0 && y <= y1,
        }
    }
}

fn seg_dist2(p: (f32, f32), a: (f32, f32), b: (f32, f32)) -> f32 {
    let (vx, vy) = (b.0 - a.0, b.1 - a.1);
    let len2 = vx * vx + vy * vy;
    let t = if len2 > 0.0 {
        (((p.0 - a.0) * vx + (p.1 - a.1) * vy) / len2).clamp(0.0, 1.0)
    } else {
        0.0
    };
    let (qx, qy) = (a.0 + t * vx, a.1 + t * vy);
    (p.0 - qx).powi(2) + (p.1 - qy).powi(2)
}

/// Painter's order: legs, torso, arms, head.
fn shapes(f: &ArticulatedFigure) -> Vec<(Region, Shape)> {
    let j = f.joints();
    let half = f.torso_width / 2.0;
    vec![
        (
            Region::RightUpperLeg,
            Shape::Capsule(j.r_hip, j.r_kn, f.leg_radius),
        ),
        (
            Region::LeftUpperLeg,
            Shape::Capsule(j.l_hip, j.l_kn, f.leg_radius),
        ),
        (
            Region::RightLowerLeg,
            Shape::Capsule(j.r_kn, j.r_an, f.leg_radius),
        ),
        (
            Region::LeftLowerLeg,
            Shape::Capsule(j.l_kn, j.l_an, f.leg_radius),
        ),
        (
            Region::Torso,
            Shape::Rect(j.neck.0 - half, j.neck.1, j.neck.0 + half, j.r_hip.1),
        ),
        (
            Region::RightUpperArm,
            Shape::Capsule(j.r_sh, j.r_el, f.arm_radius),
        ),
        (
            Region::LeftUpperArm,
            Shape::Capsule(j.l_sh, j.l_el, f.arm_radius),
        ),
        (
            Region::RightLowerArm,
            Shape::Capsule(j.r_el, j.r_wr, f.arm_radius),
        ),
        (
            Region::LeftLowerArm,
            Shape::Capsule(j.l_el, j.l_wr, f.arm_radius),
        ),
        (Region::Head, Shape::Disc(j.head, f.head_radius)),
    ]
}

/// A rendered figure plus its annotations.
#[derive(Debug, Clone, PartialEq)]
pub struct Rendered {
    pub image: Image,
    pub pose_map: PoseMap,
    pub skeleton: SkeletonPose,
    /// Pixels showing the garment are editable (`0`).
    pub garment_region: BinaryMask,
    /// The figure after re-anchoring.
    pub figure: ArticulatedFigure,
}

pub const FIT_TRIES: usize = 10;

/// Draws the figure wearing `garment` on a white `h x w` canvas.
pub fn render_figure(
    fig: &ArticulatedFigure,
    garment: &GarmentSpec,
    h: usize,
    w: usize,
) -> Result<Rendered> {
    fig.validate_angles()?;
    let fig = fig.fit_to(h, w, FIT_TRIES)?;
    let mut image = Image::white(h, w)?;
    let mut pose_map = PoseMap::background(h, w);
    let mut garment_region = BinaryMask::all_keep(h, w);
    let (nx, ny) = fig.anchor;
    let shapes = shapes(&fig);
    for y in 0..h {
        for x in 0..w {
            let (px, py) = (x as f32, y as f32);
            let Some((region, _)) = shapes.iter().rev().find(|(_, s)| s.contains(px, py)) else {
                continue;
            };
            pose_map.set(y, x, region.part());
            if region.covered_by(garment.class) {
                image.put(y, x, garment.color_at(py - ny, px - nx));
                garment_region.set_keep(y, x, false);
            } else {
                image.put(y, x, region.base_color());
            }
        }
    }
    let skeleton = fig.joints().skeleton();
    skeleton.validate(h, w)?;
    Ok(Rendered {
        image,
        pose_map,
        skeleton,
        garment_region,
        figure: fig,
    })
}

/// The garment alone on white, worn by an invisible neutral-ish figure
/// centered on the canvas.
pub fn render_flat_lay(garment: &GarmentSpec, size: usize) -> Result<Image> {
    let mut fig = ArticulatedFigure::neutral(size);
    fig.angles[Angle::RightShoulder as usize] = 0.45;
    fig.angles[Angle::LeftShoulder as usize] = 0.45;
    fig.angles[Angle::RightHip as usize] = 0.12;
    fig.angles[Angle::LeftHip as usize] = 0.12;
    let r = render_figure(&fig, garment, size, size)?;
    // Center the garment's bounding box vertically.
    let bounds = r.garment_region.editable_bounds();
    let shift = bounds.map_or(0, |b| {
        let mid = (b.y0 + b.y1) as isize / 2;
        size as isize / 2 - mid
    });
    let mut out = Image::white(size, size)?;
    for y in 0..size {
        for x in 0..size {
            if r.garment_region.editable(y, x) {
                let ty = y as isize + shift;
                if ty >= 0 && (ty as usize) < size {
                    out.put(ty as usize, x, r.image.get(y, x));
                }
            }
        }
    }
    Ok(out)
}
