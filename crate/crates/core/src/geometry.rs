//! Axis-aligned bounding boxes and the box transforms shared by every stage.
//!
//! Coordinates are continuous pixels with the origin at the top-left corner of
//! the frame. Rasterization to integer pixels only happens in
//! [`BBox::to_pixel_rect`].

use std::fmt;

use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Error, PartialEq)]
pub enum GeometryError {
    #[error("box must have positive finite size, got w={w} h={h}")]
    Degenerate { w: f64, h: f64 },
    #[error("box coordinates must be finite")]
    NonFinite,
    #[error("frame dimensions must be positive, got {width}x{height}")]
    BadFrame { width: u32, height: u32 },
}

/// Width and height of a frame in pixels.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct FrameDims {
    pub width: u32,
    pub height: u32,
}

impl FrameDims {
    pub fn new(width: u32, height: u32) -> Result<Self, GeometryError> {
        if width == 0 || height == 0 {
            return Err(GeometryError::BadFrame { width, height });
        }
        Ok(Self { width, height })
    }

    /// The whole frame as a box.
    pub fn bounds(&self) -> BBox {
        BBox {
            x: 0.0,
            y: 0.0,
            w: self.width as f64,
            h: self.height as f64,
        }
    }
}

impl Default for FrameDims {
    fn default() -> Self {
        Self {
            width: 1920,
            height: 1080,
        }
    }
}

impl fmt::Display for FrameDims {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}x{}", self.width, self.height)
    }
}

/// Axis-aligned rectangle: left edge `x`, top edge `y`, width `w`, height `h`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BBox {
    pub x: f64,
    pub y: f64,
    pub w: f64,
    pub h: f64,
}

/// Integer pixel rectangle produced at crop time.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct PixelRect {
    pub x: i64,
    pub y: i64,
    pub w: i64,
    pub h: i64,
}

impl BBox {
    pub fn new(x: f64, y: f64, w: f64, h: f64) -> Result<Self, GeometryError> {
        if !(x.is_finite() && y.is_finite()) {
            return Err(GeometryError::NonFinite);
        }
        if !(w.is_finite() && h.is_finite() && w > 0.0 && h > 0.0) {
            return Err(GeometryError::Degenerate { w, h });
        }
        Ok(Self { x, y, w, h })
    }

    pub fn from_corners(x0: f64, y0: f64, x1: f64, y1: f64) -> Result<Self, GeometryError> {
        Self::new(x0, y0, x1 - x0, y1 - y0)
    }

    pub fn right(&self) -> f64 {
        self.x + self.w
    }

    pub fn bottom(&self) -> f64 {
        self.y + self.h
    }

    pub fn area(&self) -> f64 {
        self.w * self.h
    }

    pub fn center(&self) -> (f64, f64) {
        (self.x + self.w / 2.0, self.y + self.h / 2.0)
    }

    pub fn aspect(&self) -> f64 {
        self.w / self.h
    }

    pub fn intersection_area(&self, other: &BBox) -> f64 {
        let iw = self.right().min(other.right()) - self.x.max(other.x);
        let ih = self.bottom().min(other.bottom()) - self.y.max(other.y);
        if iw <= 0.0 || ih <= 0.0 {
            0.0
        } else {
            iw * ih
        }
    }

    /// Smallest rectangle enclosing both boxes.
    pub fn union_rect(&self, other: &BBox) -> BBox {
        let x0 = self.x.min(other.x);
        let y0 = self.y.min(other.y);
        BBox {
            x: x0,
            y: y0,
            w: self.right().max(other.right()) - x0,
            h: self.bottom().max(other.bottom()) - y0,
        }
    }

    /// True when `inner` lies within `self`, allowing `tol` pixels of slack.
    pub fn contains(&self, inner: &BBox, tol: f64) -> bool {
        inner.x >= self.x - tol
            && inner.y >= self.y - tol
            && inner.right() <= self.right() + tol
            && inner.bottom() <= self.bottom() + tol
    }

    pub fn translate(&self, dx: f64, dy: f64) -> BBox {
        BBox {
            x: self.x + dx,
            y: self.y + dy,
            ..*self
        }
    }

    /// Re-expresses a box given in the coordinates of `patch` in the parent frame.
    pub fn to_parent(&self, patch: &BBox) -> BBox {
        self.translate(patch.x, patch.y)
    }

    /// Expresses a parent-frame box relative to the origin of `patch`.
    pub fn to_local(&self, patch: &BBox) -> BBox {
        self.translate(-patch.x, -patch.y)
    }

    /// Intersection with `region`, or `None` when they do not overlap.
    pub fn clip_to(&self, region: &BBox) -> Option<BBox> {
        let x0 = self.x.max(region.x);
        let y0 = self.y.max(region.y);
        let x1 = self.right().min(region.right());
        let y1 = self.bottom().min(region.bottom());
        (x1 > x0 && y1 > y0).then(|| BBox {
            x: x0,
            y: y0,
            w: x1 - x0,
            h: y1 - y0,
        })
    }

    /// Clips to the frame. A box lying wholly outside the frame is returned unchanged.
    pub fn clip(&self, frame: FrameDims) -> BBox {
        self.clip_to(&frame.bounds()).unwrap_or(*self)
    }

    pub fn inside(&self, frame: FrameDims) -> bool {
        frame.bounds().contains(self, 1e-9)
    }

    /// Integer crop rectangle; corners round half away from zero.
    pub fn to_pixel_rect(&self) -> PixelRect {
        let x0 = self.x.round() as i64;
        let y0 = self.y.round() as i64;
        let x1 = self.right().round() as i64;
        let y1 = self.bottom().round() as i64;
        PixelRect {
            x: x0,
            y: y0,
            w: x1 - x0,
            h: y1 - y0,
        }
    }

    /// Grows each side independently and clips.
    fn grow(&self, left: f64, top: f64, right: f64, bottom: f64, frame: FrameDims) -> BBox {
        BBox {
            x: self.x - left,
            y: self.y - top,
            w: self.w + left + right,
            h: self.h + top + bottom,
        }
        .clip(frame)
    }
}

impl fmt::Display for BBox {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{} {} {} {}", self.x, self.y, self.w, self.h)
    }
}

/// Intersection over union. Zero for disjoint boxes.
pub fn iou(a: &BBox, b: &BBox) -> f64 {
    let inter = a.intersection_area(b);
    if inter == 0.0 {
        return 0.0;
    }
    let union = a.area() + b.area() - inter;
    (inter / union).clamp(0.0, 1.0)
}

/// Grows every side by `margin` times the box's own width (left/right) or
/// height (top/bottom), then clips to the frame.
pub fn expand_margin(b: &BBox, margin: f64, frame: FrameDims) -> BBox {
    let dx = margin.max(0.0) * b.w;
    let dy = margin.max(0.0) * b.h;
    b.grow(dx, dy, dx, dy, frame)
}

/// Widens a box symmetrically about its center until `w / h` reaches
/// `target_w_over_h`. Boxes already at least that wide are left alone.
pub fn enlarge_to_aspect(b: &BBox, target_w_over_h: f64, frame: FrameDims) -> BBox {
    if target_w_over_h <= 0.0 || b.aspect() >= target_w_over_h {
        return *b;
    }
    let extra = (target_w_over_h * b.h - b.w) / 2.0;
    b.grow(extra, 0.0, extra, 0.0, frame)
}

/// Moves each edge outward by `pad` pixels, then clips.
pub fn pad_pixels(b: &BBox, pad: f64, frame: FrameDims) -> BBox {
    let pad = pad.max(0.0);
    b.grow(pad, pad, pad, pad, frame)
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;
    use proptest::prelude::*;

    const HD: FrameDims = FrameDims {
        width: 1920,
        height: 1080,
    };

    fn bb(x: f64, y: f64, w: f64, h: f64) -> BBox {
        BBox::new(x, y, w, h).unwrap()
    }

    fn assert_box(actual: BBox, expected: (f64, f64, f64, f64)) {
        assert_abs_diff_eq!(actual.x, expected.0, epsilon = 1e-9);
        assert_abs_diff_eq!(actual.y, expected.1, epsilon = 1e-9);
        assert_abs_diff_eq!(actual.w, expected.2, epsilon = 1e-9);
        assert_abs_diff_eq!(actual.h, expected.3, epsilon = 1e-9);
    }

    #[test]
    fn iou_examples() {
        assert_eq!(iou(&bb(0., 0., 10., 10.), &bb(0., 0., 10., 10.)), 1.0);
        assert_eq!(iou(&bb(0., 0., 10., 10.), &bb(20., 20., 5., 5.)), 0.0);
        // intersection 2, union 4
        assert_eq!(iou(&bb(0., 0., 2., 2.), &bb(0., 0., 1., 2.)), 0.5);
    }

    #[test]
    fn touching_edges_do_not_overlap() {
        assert_eq!(iou(&bb(0., 0., 10., 10.), &bb(10., 0., 10., 10.)), 0.0);
    }

    #[test]
    fn rejects_degenerate_boxes() {
        assert!(BBox::new(0., 0., 0., 5.).is_err());
        assert!(BBox::new(0., 0., 5., -1.).is_err());
        assert!(BBox::new(f64::NAN, 0., 5., 5.).is_err());
        assert!(FrameDims::new(0, 10).is_err());
    }

    #[test]
    fn margin_examples() {
        assert_box(expand_margin(&bb(100., 100., 100., 40.), 0.10, HD), (90., 96., 120., 48.));
        // left and top are clipped at the frame edge; right and bottom keep their growth
        assert_box(expand_margin(&bb(0., 0., 100., 40.), 0.10, HD), (0., 0., 110., 44.));
        let b = bb(13., 17., 31., 9.);
        assert_eq!(expand_margin(&b, 0.0, HD), b);
    }

    #[test]
    fn aspect_examples() {
        // motorcycle plate, 1.17:1
        let moto = bb(500., 300., 117., 100.);
        let out = enlarge_to_aspect(&moto, 2.75, HD);
        assert_abs_diff_eq!(out.w, 117.0 * 2.75 / 1.17, epsilon = 1e-9);
        assert_abs_diff_eq!(out.center().0, moto.center().0, epsilon = 1e-9);
        assert_eq!(out.h, moto.h);

        let car = bb(500., 300., 150., 50.);
        assert_eq!(enlarge_to_aspect(&car, 2.75, HD), car);

        let square = bb(50., 0., 10., 10.);
        assert_eq!(enlarge_to_aspect(&square, 1.0, HD), square);
    }

    #[test]
    fn aspect_clipped_at_frame_edge() {
        let b = bb(0., 0., 10., 10.);
        let out = enlarge_to_aspect(&b, 3.0, HD);
        assert_box(out, (0., 0., 20., 10.));
    }

    #[test]
    fn pad_examples() {
        assert_box(pad_pixels(&bb(10., 10., 5., 8.), 1.0, HD), (9., 9., 7., 10.));
        let small = FrameDims::new(100, 100).unwrap();
        assert_box(pad_pixels(&bb(0., 0., 5., 8.), 2.0, small), (0., 0., 7., 10.));
        let b = bb(3., 4., 5., 6.);
        assert_eq!(pad_pixels(&b, 0.0, HD), b);
    }

    #[test]
    fn pixel_rect_rounds_half_away_from_zero() {
        let r = bb(1.5, 2.4, 3.0, 3.2).to_pixel_rect();
        assert_eq!(r, PixelRect { x: 2, y: 2, w: 3, h: 4 });
    }

    #[test]
    fn local_and_parent_roundtrip() {
        let patch = bb(100., 50., 300., 200.);
        let b = bb(120., 90., 30., 10.);
        assert_eq!(b.to_local(&patch).to_parent(&patch), b);
    }

    fn any_box() -> impl Strategy<Value = BBox> {
        (0.0..1800.0f64, 0.0..1000.0f64, 0.5..120.0f64, 0.5..80.0f64)
            .prop_map(|(x, y, w, h)| BBox { x, y, w, h })
    }

    proptest! {
        #[test]
        fn iou_symmetric_and_bounded(a in any_box(), b in any_box()) {
            let ab = iou(&a, &b);
            prop_assert_eq!(ab, iou(&b, &a));
            prop_assert!((0.0..=1.0).contains(&ab));
            prop_assert!((iou(&a, &a) - 1.0).abs() < 1e-12);
        }

        #[test]
        fn margin_monotone(b in any_box(), m1 in 0.0..0.5f64, dm in 0.0..0.5f64) {
            let small = expand_margin(&b, m1, HD);
            let large = expand_margin(&b, m1 + dm, HD);
            prop_assert!(large.contains(&small, 1e-9));
            prop_assert!(large.inside(HD));
        }

        #[test]
        fn aspect_reaches_target_unless_clipped(b in any_box(), target in 0.2..4.0f64) {
            let out = enlarge_to_aspect(&b, target, HD);
            prop_assert!(out.inside(HD) || out == b);
            if b.aspect() >= target {
                prop_assert_eq!(out, b);
            } else if out.x > 0.0 && out.right() < HD.width as f64 {
                prop_assert!((out.w - target * out.h).abs() <= 1.0);
            }
        }

        #[test]
        fn pad_stays_in_frame(b in any_box(), pad in 0.0..10.0f64) {
            let out = pad_pixels(&b, pad, HD);
            prop_assert!(out.inside(HD));
            prop_assert!(out.contains(&b.clip(HD), 1e-9));
        }
    }
}
