//! Boxes, heatmap grids and Gaussian centre-heatmap targets.

use crate::error::{Error, Result};
use crate::tensor::Tensor3;

/// Axis-aligned box in pixel corner coordinates, `x2 > x1` and `y2 > y1`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BBox {
    x1: f64,
    y1: f64,
    x2: f64,
    y2: f64,
}

impl BBox {
    pub fn new(x1: f64, y1: f64, x2: f64, y2: f64) -> Result<Self> {
        let finite = [x1, y1, x2, y2].iter().all(|v| v.is_finite());
        if !finite || x2 <= x1 || y2 <= y1 {
            return Err(Error::DegenerateBox { x1, y1, x2, y2 });
        }
        Ok(Self { x1, y1, x2, y2 })
    }

    pub fn from_center(cx: f64, cy: f64, w: f64, h: f64) -> Result<Self> {
        Self::new(cx - w / 2.0, cy - h / 2.0, cx + w / 2.0, cy + h / 2.0)
    }

    pub fn x1(&self) -> f64 {
        self.x1
    }
    pub fn y1(&self) -> f64 {
        self.y1
    }
    pub fn x2(&self) -> f64 {
        self.x2
    }
    pub fn y2(&self) -> f64 {
        self.y2
    }

    pub fn corners(&self) -> [f64; 4] {
        [self.x1, self.y1, self.x2, self.y2]
    }

    pub fn cx(&self) -> f64 {
        (self.x1 + self.x2) / 2.0
    }

    pub fn cy(&self) -> f64 {
        (self.y1 + self.y2) / 2.0
    }

    pub fn w(&self) -> f64 {
        self.x2 - self.x1
    }

    pub fn h(&self) -> f64 {
        self.y2 - self.y1
    }

    pub fn area(&self) -> f64 {
        self.w() * self.h()
    }

    pub fn translate(&self, dx: f64, dy: f64) -> Self {
        Self {
            x1: self.x1 + dx,
            y1: self.y1 + dy,
            x2: self.x2 + dx,
            y2: self.y2 + dy,
        }
    }

    /// Intersection with `[0, width] x [0, height]`, `None` when nothing is left.
    pub fn clip(&self, width: f64, height: f64) -> Option<Self> {
        Self::new(
            self.x1.max(0.0),
            self.y1.max(0.0),
            self.x2.min(width),
            self.y2.min(height),
        )
        .ok()
    }

    pub fn inside(&self, width: f64, height: f64) -> bool {
        self.x1 >= 0.0 && self.y1 >= 0.0 && self.x2 <= width && self.y2 <= height
    }
}

/// Midpoint of a box's corners.
pub fn center_of(b: &BBox) -> (f64, f64) {
    (b.cx(), b.cy())
}

/// Image size plus the number of pixels per heatmap cell.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct GridSpec {
    image_w: usize,
    image_h: usize,
    stride: usize,
}

impl GridSpec {
    pub fn new(image_w: usize, image_h: usize, stride: usize) -> Result<Self> {
        if stride == 0 || image_w == 0 || image_h == 0 {
            return Err(Error::InvalidGrid("sizes and stride must be positive".into()));
        }
        if image_w % stride != 0 || image_h % stride != 0 {
            return Err(Error::InvalidGrid(format!(
                "image {image_w}x{image_h} is not divisible by stride {stride}"
            )));
        }
        Ok(Self {
            image_w,
            image_h,
            stride,
        })
    }

    pub fn image_w(&self) -> usize {
        self.image_w
    }
    pub fn image_h(&self) -> usize {
        self.image_h
    }
    pub fn stride(&self) -> usize {
        self.stride
    }
    pub fn grid_w(&self) -> usize {
        self.image_w / self.stride
    }
    pub fn grid_h(&self) -> usize {
        self.image_h / self.stride
    }
}

/// Gaussian spread in heatmap cells: `max(min(w, h) / stride, 1) / 3`.
pub fn heatmap_sigma(b: &BBox, spec: &GridSpec) -> f64 {
    let side = b.w().min(b.h()) / spec.stride as f64;
    side.max(1.0) / 3.0
}

#[derive(Debug, Clone, PartialEq)]
pub struct HeatmapTarget {
    pub grid: Tensor3,
    /// Per-object spread, in cells, in input order.
    pub sigma_map: Vec<f64>,
}

fn clip_to_image(index: usize, b: &BBox, spec: &GridSpec) -> Result<BBox> {
    b.clip(spec.image_w as f64, spec.image_h as f64)
        .ok_or(Error::BoxOutsideImage {
            index,
            x1: b.x1,
            y1: b.y1,
            x2: b.x2,
            y2: b.y2,
            width: spec.image_w,
            height: spec.image_h,
        })
}

/// Adds one object's truncated Gaussian into `grid` and returns its sigma.
fn splat(grid: &mut Tensor3, b: &BBox, spec: &GridSpec) -> f64 {
    let stride = spec.stride as f64;
    let sigma = heatmap_sigma(b, spec);
    let radius = b.w().min(b.h()) / stride;
    let (cx, cy) = (b.cx() / stride, b.cy() / stride);
    let two_var = 2.0 * sigma * sigma;

    // cells whose centres (x + 0.5, y + 0.5) can fall inside the disc
    let x_lo = (cx - radius - 0.5).floor().max(0.0) as usize;
    let y_lo = (cy - radius - 0.5).floor().max(0.0) as usize;
    let x_hi = ((cx + radius - 0.5).ceil().max(0.0) as usize).min(spec.grid_w() - 1);
    let y_hi = ((cy + radius - 0.5).ceil().max(0.0) as usize).min(spec.grid_h() - 1);
    for y in y_lo..=y_hi {
        let dy = y as f64 + 0.5 - cy;
        for x in x_lo..=x_hi {
            let dx = x as f64 + 0.5 - cx;
            let d2 = dx * dx + dy * dy;
            if d2 <= radius * radius {
                let i = y * spec.grid_w() + x;
                grid.data_mut()[i] += (-d2 / two_var).exp();
            }
        }
    }
    sigma
}

/// Unclamped response of a single object (clipped to the image first).
pub fn render_single(b: &BBox, spec: &GridSpec) -> Result<Tensor3> {
    let clipped = clip_to_image(0, b, spec)?;
    let mut grid = Tensor3::zeros(1, spec.grid_h(), spec.grid_w());
    splat(&mut grid, &clipped, spec);
    Ok(grid)
}

/// Sum of per-object truncated Gaussians, clamped to `[0, 1]`.
///
/// Cells are evaluated at their centres; an object contributes only to cells
/// within `min(w, h) / stride` cells of its centre. Boxes crossing the image
/// border are clipped; boxes with no overlap at all are rejected.
pub fn render_heatmap(boxes: &[BBox], spec: &GridSpec) -> Result<HeatmapTarget> {
    let mut grid = Tensor3::zeros(1, spec.grid_h(), spec.grid_w());
    let mut sigma_map = Vec::with_capacity(boxes.len());
    for (i, b) in boxes.iter().enumerate() {
        let clipped = clip_to_image(i, b, spec)?;
        sigma_map.push(splat(&mut grid, &clipped, spec));
    }
    grid.data_mut().iter_mut().for_each(|v| *v = v.min(1.0));
    Ok(HeatmapTarget { grid, sigma_map })
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn bx(x1: f64, y1: f64, x2: f64, y2: f64) -> BBox {
        BBox::new(x1, y1, x2, y2).unwrap()
    }

    #[test]
    fn center_examples() {
        assert_eq!(center_of(&bx(0.0, 0.0, 10.0, 10.0)), (5.0, 5.0));
        assert_eq!(center_of(&bx(2.0, 4.0, 8.0, 6.0)), (5.0, 5.0));
        assert_eq!(center_of(&bx(0.0, 0.0, 7.0, 3.0)), (3.5, 1.5));
    }

    #[test]
    fn degenerate_boxes_rejected() {
        assert!(BBox::new(1.0, 1.0, 1.0, 5.0).is_err());
        assert!(BBox::new(1.0, 5.0, 3.0, 2.0).is_err());
        assert!(BBox::new(f64::NAN, 0.0, 1.0, 1.0).is_err());
    }

    #[test]
    fn views_agree() {
        let b = bx(2.0, 4.0, 8.0, 10.0);
        assert_eq!((b.cx(), b.cy(), b.w(), b.h()), (5.0, 7.0, 6.0, 6.0));
        let c = BBox::from_center(5.0, 7.0, 6.0, 6.0).unwrap();
        assert_eq!(b, c);
    }

    #[test]
    fn grid_requires_divisibility() {
        assert!(GridSpec::new(64, 64, 8).is_ok());
        assert!(GridSpec::new(60, 64, 8).is_err());
        assert!(GridSpec::new(64, 64, 0).is_err());
    }

    #[test]
    fn sigma_examples() {
        let spec = GridSpec::new(640, 640, 8).unwrap();
        assert!((heatmap_sigma(&bx(0.0, 0.0, 24.0, 24.0), &spec) - 1.0).abs() < 1e-15);
        assert!((heatmap_sigma(&bx(0.0, 0.0, 8.0, 8.0), &spec) - 1.0 / 3.0).abs() < 1e-15);
        assert!((heatmap_sigma(&bx(0.0, 0.0, 6.0, 48.0), &spec) - 1.0 / 3.0).abs() < 1e-15);
    }

    #[test]
    fn on_cell_center_is_one() {
        let spec = GridSpec::new(128, 128, 8).unwrap();
        // centre (60, 60) px = (7.5, 7.5) cells = centre of cell (7, 7)
        let hm = render_heatmap(&[bx(48.0, 48.0, 72.0, 72.0)], &spec).unwrap();
        assert_eq!(hm.grid.get(0, 7, 7), 1.0);
        assert_eq!(hm.sigma_map, vec![1.0]);
    }

    #[test]
    fn response_at_one_sigma() {
        // 48 px box at stride 8: sigma = 6 / 3 = 2 cells, radius 6 cells
        let spec = GridSpec::new(128, 128, 8).unwrap();
        let hm = render_heatmap(&[bx(36.0, 36.0, 84.0, 84.0)], &spec).unwrap();
        assert!((hm.sigma_map[0] - 2.0).abs() < 1e-15);
        let v = hm.grid.get(0, 7, 9);
        assert!((v - (-0.5f64).exp()).abs() < 1e-12);
        assert!((v - 0.6065).abs() < 1e-4);
    }

    #[test]
    fn coincident_objects_clamp_to_one() {
        let spec = GridSpec::new(128, 128, 8).unwrap();
        let b = bx(48.0, 48.0, 72.0, 72.0);
        let hm = render_heatmap(&[b, b], &spec).unwrap();
        assert_eq!(hm.grid.get(0, 7, 7), 1.0);
        let single = render_single(&b, &spec).unwrap();
        assert!((single.get(0, 7, 7) - 1.0).abs() < 1e-15);
    }

    #[test]
    fn zero_outside_truncation_disc() {
        let spec = GridSpec::new(128, 128, 8).unwrap();
        // radius 3 cells around (7.5, 7.5)
        let hm = render_heatmap(&[bx(48.0, 48.0, 72.0, 72.0)], &spec).unwrap();
        for y in 0..16 {
            for x in 0..16 {
                let (dx, dy) = (x as f64 + 0.5 - 7.5, y as f64 + 0.5 - 7.5);
                if (dx * dx + dy * dy).sqrt() > 3.0 {
                    assert_eq!(hm.grid.get(0, y, x), 0.0, "cell ({x}, {y})");
                }
            }
        }
        assert!(hm.grid.get(0, 7, 10) > 0.0);
    }

    #[test]
    fn box_outside_image_is_rejected_with_position() {
        let spec = GridSpec::new(64, 64, 8).unwrap();
        let err = render_heatmap(&[bx(10.0, 10.0, 20.0, 20.0), bx(70.0, 0.0, 80.0, 5.0)], &spec)
            .unwrap_err();
        let msg = err.to_string();
        assert!(msg.contains("box 1") && msg.contains("70"), "{msg}");
    }

    #[test]
    fn straddling_box_is_clipped() {
        let spec = GridSpec::new(64, 64, 8).unwrap();
        let hm = render_heatmap(&[bx(-8.0, 0.0, 24.0, 16.0)], &spec).unwrap();
        // clipped to (0, 0, 24, 16): centre (12, 8) px, sigma from min side 16 px
        assert!((hm.sigma_map[0] - 2.0 / 3.0).abs() < 1e-15);
    }

    fn arb_box() -> impl Strategy<Value = BBox> {
        (0.0..100.0f64, 0.0..100.0f64, 2.0..28.0f64, 2.0..28.0f64)
            .prop_map(|(x, y, w, h)| BBox::new(x, y, x + w, y + h).unwrap())
    }

    proptest! {
        #[test]
        fn clamped_sum_of_singles(boxes in prop::collection::vec(arb_box(), 0..=5)) {
            let spec = GridSpec::new(128, 128, 8).unwrap();
            let hm = render_heatmap(&boxes, &spec).unwrap();
            let mut want = vec![0.0; 256];
            for b in &boxes {
                let s = render_single(b, &spec).unwrap();
                for (w, v) in want.iter_mut().zip(s.data()) {
                    *w += v;
                }
            }
            for (got, w) in hm.grid.data().iter().zip(&want) {
                prop_assert!((got - w.min(1.0)).abs() < 1e-12);
                prop_assert!((0.0..=1.0).contains(got));
            }
        }

        #[test]
        fn support_inside_union_of_discs(boxes in prop::collection::vec(arb_box(), 1..=5)) {
            let spec = GridSpec::new(128, 128, 8).unwrap();
            let hm = render_heatmap(&boxes, &spec).unwrap();
            for y in 0..16 {
                for x in 0..16 {
                    let covered = boxes.iter().any(|b| {
                        let b = b.clip(128.0, 128.0).unwrap();
                        let (dx, dy) = (x as f64 + 0.5 - b.cx() / 8.0, y as f64 + 0.5 - b.cy() / 8.0);
                        (dx * dx + dy * dy).sqrt() <= b.w().min(b.h()) / 8.0
                    });
                    if !covered {
                        prop_assert_eq!(hm.grid.get(0, y, x), 0.0);
                    }
                }
            }
        }

        #[test]
        fn radially_monotone(b in arb_box()) {
            let spec = GridSpec::new(128, 128, 8).unwrap();
            let g = render_single(&b, &spec).unwrap();
            let b = b.clip(128.0, 128.0).unwrap();
            let mut cells: Vec<(f64, f64)> = Vec::new();
            for y in 0..16 {
                for x in 0..16 {
                    let (dx, dy) = (x as f64 + 0.5 - b.cx() / 8.0, y as f64 + 0.5 - b.cy() / 8.0);
                    let d = (dx * dx + dy * dy).sqrt();
                    if d <= b.w().min(b.h()) / 8.0 {
                        cells.push((d, g.get(0, y, x)));
                    }
                }
            }
            cells.sort_by(|a, b| a.0.partial_cmp(&b.0).unwrap());
            for pair in cells.windows(2) {
                if pair[1].0 > pair[0].0 {
                    prop_assert!(pair[1].1 <= pair[0].1 + 1e-15);
                }
            }
        }

        #[test]
        fn shift_by_one_stride_shifts_one_cell(
            cx in 4usize..10, cy in 4usize..10, hw in 1usize..3, hh in 1usize..3,
        ) {
            let spec = GridSpec::new(128, 128, 8).unwrap();
            let (cx, cy) = (cx as f64 * 8.0, cy as f64 * 8.0);
            let (hw, hh) = (hw as f64 * 8.0, hh as f64 * 8.0);
            let b = BBox::new(cx - hw, cy - hh, cx + hw, cy + hh).unwrap();
            let a = render_heatmap(&[b], &spec).unwrap().grid;
            let s = render_heatmap(&[b.translate(8.0, 8.0)], &spec).unwrap().grid;
            for y in 0..15 {
                for x in 0..15 {
                    prop_assert_eq!(a.get(0, y, x), s.get(0, y + 1, x + 1));
                }
            }
        }
    }
}
