//! Layered 2-d avatars: skeleton, body shapes, labels and joint raster.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::geometry::{segment_distance, Capsule, Ellipse, Ribbon, Vec2};
use super::{labels, WorldConfig};
use crate::error::{Error, Result};
use crate::raster::{quantize, FloatImage, LabelMap, Mask, Rgb8, View};

/// Skeleton and body proportions, in base-image pixel coordinates.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Pose {
    /// Pixels per body unit (a standing figure is ~95 units tall).
    pub unit: f32,
    pub cx: f32,
    pub top: f32,
    pub torso_width: f32,
    pub shoulder: [Vec2; 2],
    pub elbow: [Vec2; 2],
    pub wrist: [Vec2; 2],
    pub hip: [Vec2; 2],
    pub knee: [Vec2; 2],
    pub ankle: [Vec2; 2],
    pub hairline: f32,
    pub long_hair: bool,
}

impl Pose {
    /// Point on the body midline at unit height `y`, offset `dx` units.
    pub fn mid(&self, dx: f32, y: f32) -> Vec2 {
        Vec2::new(self.cx + dx * self.unit, self.top + y * self.unit)
    }

    pub fn u(&self, v: f32) -> f32 {
        v * self.unit
    }

    fn sample(cfg: &WorldConfig, rng: &mut ChaCha8Rng) -> Pose {
        let base = (cfg.height as f32 / 96.0).min(cfg.width as f32 / 64.0);
        let scale = rng.random_range(0.93..1.0f32);
        let unit = base * scale;
        let cx = cfg.width as f32 / 2.0 + rng.random_range(-2.0..2.0f32) * base;
        let top = (cfg.height as f32 - 95.0 * unit) / 2.0;
        let torso_width = rng.random_range(0.92..1.08f32);
        let mut pose = Pose {
            unit,
            cx,
            top,
            torso_width,
            shoulder: [Vec2::new(0.0, 0.0); 2],
            elbow: [Vec2::new(0.0, 0.0); 2],
            wrist: [Vec2::new(0.0, 0.0); 2],
            hip: [Vec2::new(0.0, 0.0); 2],
            knee: [Vec2::new(0.0, 0.0); 2],
            ankle: [Vec2::new(0.0, 0.0); 2],
            hairline: rng.random_range(8.0..10.5f32),
            long_hair: rng.random_bool(0.4),
        };
        for side in 0..2 {
            // side 0 is image-left; outward means -x there
            let out = if side == 0 { -1.0 } else { 1.0 };
            let a_upper = rng.random_range(8.0..26.0f32).to_radians();
            let a_fore = a_upper + rng.random_range(-4.0..16.0f32).to_radians();
            let shoulder = pose.mid(out * 10.5 * torso_width, 24.0);
            let elbow = shoulder.add(Vec2::from_down_angle(out * a_upper).scale(14.0 * unit));
            let wrist = elbow.add(Vec2::from_down_angle(out * a_fore).scale(13.0 * unit));
            let a_thigh = rng.random_range(2.0..7.0f32).to_radians();
            let a_shin = a_thigh + rng.random_range(-2.0..2.0f32).to_radians();
            let hip = pose.mid(out * 4.8 * torso_width, 56.0);
            let knee = hip.add(Vec2::from_down_angle(out * a_thigh).scale(18.0 * unit));
            let ankle = knee.add(Vec2::from_down_angle(out * a_shin).scale(16.5 * unit));
            pose.shoulder[side] = shoulder;
            pose.elbow[side] = elbow;
            pose.wrist[side] = wrist;
            pose.hip[side] = hip;
            pose.knee[side] = knee;
            pose.ankle[side] = ankle;
        }
        pose
    }

    pub fn head(&self) -> Ellipse {
        Ellipse { center: self.mid(0.0, 11.0), rx: self.u(6.0), ry: self.u(7.5) }
    }

    /// Skeleton segments used for the joint raster.
    pub fn bones(&self) -> Vec<(Vec2, Vec2)> {
        let neck = self.mid(0.0, 21.0);
        let pelvis = self.mid(0.0, 56.0);
        let mut b = vec![
            (self.head().center, neck),
            (neck, pelvis),
            (self.shoulder[0], self.shoulder[1]),
            (self.hip[0], self.hip[1]),
        ];
        for s in 0..2 {
            b.push((self.shoulder[s], self.elbow[s]));
            b.push((self.elbow[s], self.wrist[s]));
            b.push((self.hip[s], self.knee[s]));
            b.push((self.knee[s], self.ankle[s]));
        }
        b
    }

    fn hand(&self, side: usize) -> Ellipse {
        let dir = self.wrist[side].sub(self.elbow[side]);
        let dir = dir.scale(1.0 / dir.len());
        Ellipse { center: self.wrist[side].add(dir.scale(self.u(1.5))), rx: self.u(2.2), ry: self.u(2.2) }
    }

    fn foot(&self, side: usize) -> Ellipse {
        let out = if side == 0 { -1.0 } else { 1.0 };
        Ellipse {
            center: self.ankle[side].add(Vec2::new(out * self.u(2.2), self.u(1.6))),
            rx: self.u(3.6),
            ry: self.u(1.7),
        }
    }

    fn torso(&self) -> Ribbon {
        Ribbon {
            a: self.mid(0.0, 21.0),
            b: self.mid(0.0, 52.0),
            half_a: self.u(10.5 * self.torso_width),
            half_b: self.u(8.5 * self.torso_width),
        }
    }

    fn pelvis(&self) -> Ribbon {
        Ribbon {
            a: self.mid(0.0, 50.0),
            b: self.mid(0.0, 58.0),
            half_a: self.u(8.8 * self.torso_width),
            half_b: self.u(9.2 * self.torso_width),
        }
    }

    /// Body label at `p`, before garments.
    pub fn body_label(&self, p: Vec2) -> u8 {
        let head = self.head();
        let cap = Ellipse { center: self.mid(0.0, 9.5), rx: self.u(6.7), ry: self.u(6.6) };
        if cap.contains(p) && (p.y < self.mid(0.0, self.hairline).y || !head.contains(p)) && p.y < self.mid(0.0, 12.5).y
        {
            return labels::HAIR;
        }
        if head.contains(p) {
            return labels::FACE;
        }
        let neck = Capsule { a: self.mid(0.0, 17.0), b: self.mid(0.0, 22.0), radius: self.u(2.6) };
        let u = self.unit;
        if neck.contains(p)
            || self.torso().local(p).is_some()
            || self.pelvis().local(p).is_some()
            || Capsule::new(self.shoulder[0], self.shoulder[1], 3.0 * u).contains(p)
        {
            return labels::SKIN;
        }
        for s in 0..2 {
            if Capsule::new(self.shoulder[s], self.elbow[s], 2.8 * u).contains(p)
                || Capsule::new(self.elbow[s], self.wrist[s], 2.3 * u).contains(p)
                || self.hand(s).contains(p)
            {
                return labels::ARMS;
            }
            if Capsule::new(self.hip[s], self.knee[s], 4.0 * u).contains(p)
                || Capsule::new(self.knee[s], self.ankle[s], 3.0 * u).contains(p)
                || self.foot(s).contains(p)
            {
                return labels::LEGS;
            }
        }
        if self.long_hair {
            let back = Ribbon { a: self.mid(0.0, 8.0), b: self.mid(0.0, 26.0), half_a: self.u(7.0), half_b: self.u(7.5) };
            if back.local(p).is_some() {
                return labels::HAIR;
            }
        }
        labels::BACKGROUND
    }

    /// True inside the eyes or mouth.
    fn face_feature(&self, p: Vec2) -> Option<[f32; 3]> {
        for dx in [-2.5, 2.5] {
            let eye = Ellipse { center: self.mid(dx, 11.5), rx: self.u(0.9), ry: self.u(0.9) };
            if eye.contains(p) {
                return Some([40.0, 30.0, 30.0]);
            }
        }
        let mouth = Ellipse { center: self.mid(0.0, 15.0), rx: self.u(1.8), ry: self.u(0.6) };
        mouth.contains(p).then_some([150.0, 60.0, 60.0])
    }
}

/// Synthetic person.
#[derive(Clone, Debug, PartialEq)]
pub struct AvatarSample {
    pub seed: u64,
    pub config: WorldConfig,
    pub pose: Pose,
    pub body_image: FloatImage,
    pub joints: FloatImage,
    pub parsing: LabelMap,
    /// `(x0, y0, x1, y1)`, exclusive upper corner.
    pub face_bbox: (usize, usize, usize, usize),
    pub skin_tone: Rgb8,
    pub hair_color: Rgb8,
    pub background: Rgb8,
}

const SKIN_PALETTE: [Rgb8; 6] =
    [[236, 200, 170], [224, 180, 145], [198, 150, 115], [170, 120, 90], [130, 90, 65], [95, 65, 48]];
const HAIR_PALETTE: [Rgb8; 5] = [[30, 22, 18], [70, 45, 25], [120, 80, 40], [190, 160, 100], [150, 40, 30]];

impl AvatarSample {
    /// Shaded skin multiplier at `p`; smooth and at most 1.
    pub fn skin_shade(&self, p: Vec2) -> f32 {
        let d = (p.x - self.pose.cx) / (40.0 * self.pose.unit);
        0.92 + 0.08 * (std::f32::consts::PI * d).cos()
    }

    pub fn background_at(&self, p: Vec2) -> [f32; 3] {
        let f = 1.0 - 0.08 * (p.y / self.config.height as f32).clamp(0.0, 1.0);
        self.background.map(|c| c as f32 * f)
    }

    /// Unclothed appearance and label at a continuous point.
    pub fn body_at(&self, p: Vec2) -> (u8, [f32; 3]) {
        let label = self.pose.body_label(p);
        let color = match label {
            labels::BACKGROUND => self.background_at(p),
            labels::HAIR => self.hair_color.map(|c| c as f32),
            labels::FACE => self.pose.face_feature(p).unwrap_or(self.skin_tone.map(|c| c as f32)),
            _ => {
                let s = self.skin_shade(p);
                self.skin_tone.map(|c| c as f32 * s)
            }
        };
        (label, color)
    }

    pub fn height(&self) -> usize {
        self.config.height
    }

    pub fn width(&self) -> usize {
        self.config.width
    }

    pub fn face_mask(&self) -> Mask {
        let mut m = Mask::new(self.height(), self.width());
        for (i, &l) in self.parsing.data.iter().enumerate() {
            m.data[i] = l == labels::FACE;
        }
        m
    }

    /// Joint raster evaluated through `view` at `out_h x out_w`.
    pub fn joints_view(&self, view: View, out_h: usize, out_w: usize) -> FloatImage {
        let bones = self.pose.bones();
        let width = 0.8 * self.pose.unit;
        let mut out = FloatImage::new(1, out_h, out_w);
        for i in 0..out_h {
            for j in 0..out_w {
                let (x, y) = view.inverse((j as f32 + 0.5, i as f32 + 0.5), out_h, out_w);
                let p = Vec2::new(x, y);
                let d = bones.iter().map(|&(a, b)| segment_distance(p, a, b)).fold(f32::INFINITY, f32::min);
                out.set(0, i, j, (255.0 * (1.0 - d / width)).max(0.0).round());
            }
        }
        out
    }
}

/// Deterministic avatar for `(seed, config)`.
pub fn gen_avatar(seed: u64, config: &WorldConfig) -> Result<AvatarSample> {
    config.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0xa7a7_0000_0000_0001);
    let pose = Pose::sample(config, &mut rng);
    let jitter = |rng: &mut ChaCha8Rng, c: Rgb8, amp: i32| -> Rgb8 {
        let d = rng.random_range(-amp..=amp);
        c.map(|v| (v as i32 + d + rng.random_range(-3..=3)).clamp(0, 255) as u8)
    };
    let skin_base = SKIN_PALETTE[rng.random_range(0..SKIN_PALETTE.len())];
    let skin_tone = jitter(&mut rng, skin_base, 10);
    let hair_base = HAIR_PALETTE[rng.random_range(0..HAIR_PALETTE.len())];
    let hair_color = jitter(&mut rng, hair_base, 8);
    let background = [rng.random_range(200..=245u8), rng.random_range(200..=245u8), rng.random_range(200..=245u8)];
    let (h, w) = (config.height, config.width);
    let mut avatar = AvatarSample {
        seed,
        config: config.clone(),
        pose,
        body_image: FloatImage::new(3, h, w),
        joints: FloatImage::new(1, h, w),
        parsing: LabelMap::new(h, w),
        face_bbox: (0, 0, 0, 0),
        skin_tone,
        hair_color,
        background,
    };
    for i in 0..h {
        for j in 0..w {
            let (label, color) = avatar.body_at(Vec2::new(j as f32 + 0.5, i as f32 + 0.5));
            avatar.parsing.set(i, j, label);
            avatar.body_image.set_pixel(i, j, color.map(|c| quantize(c) as f32));
        }
    }
    avatar.joints = avatar.joints_view(View::full(h, w), h, w);
    avatar.face_bbox = avatar
        .face_mask()
        .bbox()
        .ok_or_else(|| Error::Config(format!("avatar {seed} has no face pixels at {h}x{w}")))?;
    Ok(avatar)
}
