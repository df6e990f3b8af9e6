//! Analytic 2-d shapes evaluated at continuous points.

use serde::{Deserialize, Serialize};

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Vec2 {
    pub x: f32,
    pub y: f32,
}

impl Vec2 {
    pub const fn new(x: f32, y: f32) -> Self {
        Self { x, y }
    }

    pub fn add(self, o: Vec2) -> Vec2 {
        Vec2::new(self.x + o.x, self.y + o.y)
    }

    pub fn sub(self, o: Vec2) -> Vec2 {
        Vec2::new(self.x - o.x, self.y - o.y)
    }

    pub fn scale(self, s: f32) -> Vec2 {
        Vec2::new(self.x * s, self.y * s)
    }

    pub fn dot(self, o: Vec2) -> f32 {
        self.x * o.x + self.y * o.y
    }

    pub fn len(self) -> f32 {
        self.dot(self).sqrt()
    }

    pub fn lerp(self, o: Vec2, t: f32) -> Vec2 {
        self.add(o.sub(self).scale(t))
    }

    /// Unit vector at `angle` radians from straight down, rotating toward +x.
    pub fn from_down_angle(angle: f32) -> Vec2 {
        Vec2::new(angle.sin(), angle.cos())
    }
}

/// Distance from `p` to segment `ab`.
pub fn segment_distance(p: Vec2, a: Vec2, b: Vec2) -> f32 {
    let ab = b.sub(a);
    let l2 = ab.dot(ab);
    let t = if l2 > 0.0 { (p.sub(a).dot(ab) / l2).clamp(0.0, 1.0) } else { 0.0 };
    p.sub(a.add(ab.scale(t))).len()
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Capsule {
    pub a: Vec2,
    pub b: Vec2,
    pub radius: f32,
}

impl Capsule {
    pub fn new(a: Vec2, b: Vec2, radius: f32) -> Self {
        Self { a, b, radius }
    }

    pub fn contains(&self, p: Vec2) -> bool {
        segment_distance(p, self.a, self.b) <= self.radius
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Ellipse {
    pub center: Vec2,
    pub rx: f32,
    pub ry: f32,
}

impl Ellipse {
    pub fn contains(&self, p: Vec2) -> bool {
        let dx = (p.x - self.center.x) / self.rx;
        let dy = (p.y - self.center.y) / self.ry;
        dx * dx + dy * dy <= 1.0
    }
}

/// A strip along the segment `a -> b` whose half-width varies linearly
/// from `half_a` to `half_b`.
///
/// Local coordinates: `t in [0, 1]` along the axis, `s in [-1, 1]` across it
/// (positive to the right of the direction of travel in image space).
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Ribbon {
    pub a: Vec2,
    pub b: Vec2,
    pub half_a: f32,
    pub half_b: f32,
}

impl Ribbon {
    pub fn length(&self) -> f32 {
        self.b.sub(self.a).len()
    }

    /// `(s, t)` of `p`, or `None` outside the strip.
    pub fn local(&self, p: Vec2) -> Option<(f32, f32)> {
        let axis = self.b.sub(self.a);
        let len = axis.len();
        if len <= 0.0 {
            return None;
        }
        let dir = axis.scale(1.0 / len);
        let nrm = Vec2::new(dir.y, -dir.x);
        let d = p.sub(self.a);
        let t = d.dot(dir) / len;
        if !(0.0..=1.0).contains(&t) {
            return None;
        }
        let half = self.half_a + (self.half_b - self.half_a) * t;
        let s = d.dot(nrm) / half;
        (-1.0..=1.0).contains(&s).then_some((s, t))
    }

    /// Inverse of [`Ribbon::local`].
    pub fn point(&self, s: f32, t: f32) -> Vec2 {
        let axis = self.b.sub(self.a);
        let len = axis.len();
        let dir = axis.scale(1.0 / len);
        let nrm = Vec2::new(dir.y, -dir.x);
        let half = self.half_a + (self.half_b - self.half_a) * t;
        self.a.add(dir.scale(t * len)).add(nrm.scale(s * half))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn ribbon_local_point_roundtrip() {
        let r = Ribbon { a: Vec2::new(10.0, 5.0), b: Vec2::new(14.0, 30.0), half_a: 4.0, half_b: 2.5 };
        for &(s, t) in &[(0.0, 0.5), (-0.9, 0.1), (0.7, 0.95)] {
            let p = r.point(s, t);
            let (s2, t2) = r.local(p).unwrap();
            assert!((s - s2).abs() < 1e-4 && (t - t2).abs() < 1e-4);
        }
        assert!(r.local(Vec2::new(0.0, 0.0)).is_none());
    }

    #[test]
    fn vertical_ribbon_positive_s_is_image_right() {
        let r = Ribbon { a: Vec2::new(10.0, 0.0), b: Vec2::new(10.0, 10.0), half_a: 2.0, half_b: 2.0 };
        let (s, _) = r.local(Vec2::new(11.0, 5.0)).unwrap();
        assert!(s > 0.0);
    }
}
