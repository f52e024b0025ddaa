//! Rotations and translations acting on points, coordinate grids and
//! discrete images, plus the centre-of-mass canonicalization rule.
//!
//! Coordinates live on `[-1, 1]²`. Pixel `(row, col)` of a side-`s` image sits
//! at `x = -1 + (2·col + 1)/s`, `y = 1 - (2·row + 1)/s`, so row 0 is the top of
//! the picture and `y` points up. Flattened pixel index is `row·s + col`.
//! The grid is closed under negation, which makes quarter-turn rotations exact
//! pixel permutations under nearest-neighbour sampling.

use std::f64::consts::TAU;

/// Reduces an angle to `[0, 2π)`.
pub fn wrap_angle(a: f64) -> f64 {
    let r = a.rem_euclid(TAU);
    if r >= TAU {
        0.0
    } else {
        r
    }
}

/// Rotation `θ` plus translation `τ`, acting on points as `p ↦ R_θ(p + τ)`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Pose {
    theta: f64,
    pub tau: [f64; 2],
}

impl Pose {
    pub fn new(theta: f64, tau: [f64; 2]) -> Self {
        Self {
            theta: wrap_angle(theta),
            tau,
        }
    }

    pub fn identity() -> Self {
        Self::new(0.0, [0.0, 0.0])
    }

    pub fn rotation(theta: f64) -> Self {
        Self::new(theta, [0.0, 0.0])
    }

    pub fn theta(&self) -> f64 {
        self.theta
    }

    /// Pose whose point map is the inverse of this one's.
    pub fn inverse(&self) -> Self {
        let [tx, ty] = rotate([self.tau[0], self.tau[1]], self.theta);
        Self::new(-self.theta, [-tx, -ty])
    }

    /// Single pose equal to applying `self` first and `next` second.
    pub fn then(&self, next: &Pose) -> Self {
        let [ux, uy] = rotate(next.tau, -self.theta);
        Self::new(self.theta + next.theta, [self.tau[0] + ux, self.tau[1] + uy])
    }
}

fn rotate(p: [f64; 2], theta: f64) -> [f64; 2] {
    let (s, c) = theta.sin_cos();
    [c * p[0] - s * p[1], s * p[0] + c * p[1]]
}

/// `R_θ(p + τ)`.
pub fn transform_point(pose: &Pose, p: [f64; 2]) -> [f64; 2] {
    rotate([p[0] + pose.tau[0], p[1] + pose.tau[1]], pose.theta)
}

/// `R_θ⁻¹ p - τ`, the inverse of [`transform_point`].
pub fn inverse_transform_point(pose: &Pose, p: [f64; 2]) -> [f64; 2] {
    let [x, y] = rotate(p, -pose.theta);
    [x - pose.tau[0], y - pose.tau[1]]
}

/// Square grid of pixel centres on `[-1, 1]²`.
#[derive(Debug, Clone, PartialEq)]
pub struct GridSpec {
    side: usize,
    points: Vec<f64>,
}

impl GridSpec {
    pub fn new(side: usize) -> Self {
        let mut points = Vec::with_capacity(2 * side * side);
        for row in 0..side {
            for col in 0..side {
                points.push(Self::center(side, col));
                points.push(-Self::center(side, row));
            }
        }
        Self { side, points }
    }

    fn center(side: usize, k: usize) -> f64 {
        ((2 * k + 1) as f64 - side as f64) / side as f64
    }

    pub fn side(&self) -> usize {
        self.side
    }

    /// Number of gridpoints `P = s²`.
    pub fn len(&self) -> usize {
        self.side * self.side
    }

    pub fn is_empty(&self) -> bool {
        self.side == 0
    }

    /// Distance between neighbouring pixel centres.
    pub fn spacing(&self) -> f64 {
        2.0 / self.side as f64
    }

    /// Flat `[P, 2]` array of gridpoints in row-major pixel order.
    pub fn points(&self) -> &[f64] {
        &self.points
    }

    pub fn point(&self, p: usize) -> [f64; 2] {
        [self.points[2 * p], self.points[2 * p + 1]]
    }

    pub fn index(&self, row: usize, col: usize) -> usize {
        row * self.side + col
    }

    pub fn row_col(&self, p: usize) -> (usize, usize) {
        (p / self.side, p % self.side)
    }

    /// Pixel whose centre is nearest to `q`, or `None` outside `[-1, 1]²`.
    pub fn nearest(&self, q: [f64; 2]) -> Option<usize> {
        let [x, y] = q;
        if !(-1.0..=1.0).contains(&x) || !(-1.0..=1.0).contains(&y) {
            return None;
        }
        let s = self.side as f64;
        let col = (((x + 1.0) * s / 2.0).floor() as usize).min(self.side - 1);
        let row = (((1.0 - y) * s / 2.0).floor() as usize).min(self.side - 1);
        Some(self.index(row, col))
    }
}

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum ImageError {
    #[error("expected {expected} pixel values for {channels}×{side}², got {got}")]
    PixelCount {
        channels: usize,
        side: usize,
        expected: usize,
        got: usize,
    },
    #[error("unsupported channel count {0} (expected 1 or 3)")]
    Channels(usize),
    #[error("pixel value {0} is not finite")]
    NonFinite(f64),
}

/// `C×P` image sampled on a [`GridSpec`]; channel-major storage.
#[derive(Debug, Clone, PartialEq)]
pub struct DiscreteImage {
    channels: usize,
    side: usize,
    pixels: Vec<f64>,
}

impl DiscreteImage {
    pub fn new(channels: usize, side: usize, pixels: Vec<f64>) -> Result<Self, ImageError> {
        if channels != 1 && channels != 3 {
            return Err(ImageError::Channels(channels));
        }
        let expected = channels * side * side;
        if pixels.len() != expected {
            return Err(ImageError::PixelCount {
                channels,
                side,
                expected,
                got: pixels.len(),
            });
        }
        if let Some(bad) = pixels.iter().find(|v| !v.is_finite()) {
            return Err(ImageError::NonFinite(*bad));
        }
        Ok(Self {
            channels,
            side,
            pixels,
        })
    }

    pub fn zeros(channels: usize, side: usize) -> Self {
        Self {
            channels,
            side,
            pixels: vec![0.0; channels * side * side],
        }
    }

    pub fn channels(&self) -> usize {
        self.channels
    }

    pub fn side(&self) -> usize {
        self.side
    }

    pub fn num_pixels(&self) -> usize {
        self.side * self.side
    }

    pub fn pixels(&self) -> &[f64] {
        &self.pixels
    }

    pub fn pixels_mut(&mut self) -> &mut [f64] {
        &mut self.pixels
    }

    pub fn into_pixels(self) -> Vec<f64> {
        self.pixels
    }

    pub fn get(&self, channel: usize, p: usize) -> f64 {
        self.pixels[channel * self.num_pixels() + p]
    }

    pub fn grid(&self) -> GridSpec {
        GridSpec::new(self.side)
    }

    /// Pixels reordered pixel-major (`[P, C]`), the layout the decoder emits.
    pub fn pixel_major(&self) -> Vec<f64> {
        let p = self.num_pixels();
        let mut out = vec![0.0; self.pixels.len()];
        for c in 0..self.channels {
            for i in 0..p {
                out[i * self.channels + c] = self.pixels[c * p + i];
            }
        }
        out
    }

    /// Inverse of [`DiscreteImage::pixel_major`].
    pub fn from_pixel_major(channels: usize, side: usize, data: &[f64]) -> Result<Self, ImageError> {
        let p = side * side;
        let mut pixels = vec![0.0; data.len()];
        for c in 0..channels {
            for i in 0..p.min(data.len() / channels.max(1)) {
                pixels[c * p + i] = data[i * channels + c];
            }
        }
        Self::new(channels, side, pixels)
    }

    /// Copy with every value clamped into `[0, 1]`.
    pub fn clamped(&self) -> Self {
        Self {
            channels: self.channels,
            side: self.side,
            pixels: self.pixels.iter().map(|v| v.clamp(0.0, 1.0)).collect(),
        }
    }
}

/// Nearest-neighbour resampling: output pixel at `g` takes the input pixel
/// nearest to `transform_point(pose, g)`, or 0 when that falls off the frame.
pub fn transform_image(pose: &Pose, img: &DiscreteImage) -> DiscreteImage {
    let grid = img.grid();
    let p_count = grid.len();
    let mut out = DiscreteImage::zeros(img.channels, img.side);
    for p in 0..p_count {
        if let Some(src) = grid.nearest(transform_point(pose, grid.point(p))) {
            for c in 0..img.channels {
                out.pixels[c * p_count + p] = img.pixels[c * p_count + src];
            }
        }
    }
    out
}

/// Rotates image content by `θ` about the frame centre: the pushed-forward
/// image whose centre of mass moves by `R_θ`. Equal to
/// `transform_image(&Pose::rotation(-θ), img)`.
pub fn rotate_image(theta: f64, img: &DiscreteImage) -> DiscreteImage {
    transform_image(&Pose::rotation(-theta), img)
}

/// Pushes image content forward by `pose`: content at `q` moves to
/// `transform_point(pose, q)`.
pub fn push_image(pose: &Pose, img: &DiscreteImage) -> DiscreteImage {
    transform_image(&pose.inverse(), img)
}

/// Intensity-weighted mean gridpoint using per-pixel L1 norms across
/// channels; `(0, 0)` for an all-zero image.
pub fn center_of_mass(img: &DiscreteImage) -> [f64; 2] {
    let grid = img.grid();
    let p_count = grid.len();
    let (mut mx, mut my, mut total) = (0.0, 0.0, 0.0);
    for p in 0..p_count {
        let w: f64 = (0..img.channels).map(|c| img.pixels[c * p_count + p].abs()).sum();
        if w != 0.0 {
            let [x, y] = grid.point(p);
            mx += w * x;
            my += w * y;
            total += w;
        }
    }
    if total == 0.0 {
        [0.0, 0.0]
    } else {
        [mx / total, my / total]
    }
}

/// Norm below which the centre of mass is treated as the origin.
pub const DEGENERATE_COM: f64 = 1e-9;

/// `τ = -m` and the `θ ∈ [0, 2π)` with `m = ‖τ‖(cos θ, -sin θ)`; `θ = 0`
/// when `m` is (numerically) the origin.
pub fn canonical_pose_from_com(m: [f64; 2]) -> Pose {
    let norm = m[0].hypot(m[1]);
    let theta = if norm < DEGENERATE_COM {
        0.0
    } else {
        (-m[1]).atan2(m[0])
    };
    Pose::new(theta, [-m[0], -m[1]])
}

/// `‖τ‖(cos θ, -sin θ)`, the centre of mass a pose is consistent with.
pub fn com_from_pose(pose: &Pose) -> [f64; 2] {
    let r = pose.tau[0].hypot(pose.tau[1]);
    [r * pose.theta.cos(), -r * pose.theta.sin()]
}

/// Half-open angular distance used when comparing wrapped angles, in `[0, π]`.
pub fn angular_distance(a: f64, b: f64) -> f64 {
    let d = wrap_angle(a - b);
    d.min(TAU - d)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use std::f64::consts::PI;

    fn close(a: [f64; 2], b: [f64; 2], tol: f64) -> bool {
        (a[0] - b[0]).abs() <= tol && (a[1] - b[1]).abs() <= tol
    }

    #[test]
    fn transform_point_examples() {
        assert!(close(transform_point(&Pose::identity(), [0.5, -0.5]), [0.5, -0.5], 1e-15));
        assert!(close(transform_point(&Pose::rotation(PI / 2.0), [1.0, 0.0]), [0.0, 1.0], 1e-15));
        assert!(close(transform_point(&Pose::new(0.0, [1.0, 0.0]), [0.5, 0.5]), [1.5, 0.5], 1e-15));
    }

    #[test]
    fn inverse_transform_examples() {
        let any = Pose::rotation(1.234);
        assert!(close(inverse_transform_point(&any, [0.0, 0.0]), [0.0, 0.0], 1e-15));
        assert!(close(inverse_transform_point(&Pose::rotation(PI), [1.0, 1.0]), [-1.0, -1.0], 1e-15));
        let pose = Pose::new(PI / 2.0, [0.3, 0.1]);
        let q = [0.37, -0.81];
        assert!(close(inverse_transform_point(&pose, transform_point(&pose, q)), q, 1e-12));
    }

    #[test]
    fn wrap_angle_examples() {
        assert_eq!(wrap_angle(TAU), 0.0);
        assert!((wrap_angle(-PI / 2.0) - 1.5 * PI).abs() < 1e-12);
        assert!((wrap_angle(7.5 * PI) - 1.5 * PI).abs() < 1e-12);
    }

    #[test]
    fn grid_is_symmetric_and_row_major() {
        let g = GridSpec::new(5);
        assert_eq!(g.len(), 25);
        for p in 0..g.len() {
            let [x, y] = g.point(p);
            let q = g.nearest([-x, -y]).unwrap();
            assert_eq!(g.point(q), [-x, -y]);
            let (r, c) = g.row_col(p);
            assert_eq!(g.index(r, c), p);
            assert_eq!(g.nearest([x, y]), Some(p));
        }
        assert_eq!(g.point(0), [-0.8, 0.8]);
        assert_eq!(g.nearest([1.0, -1.0]), Some(24));
        assert_eq!(g.nearest([1.0001, 0.0]), None);
    }

    fn ramp(side: usize) -> DiscreteImage {
        let n = side * side;
        DiscreteImage::new(1, side, (0..n).map(|i| i as f64 / n as f64).collect()).unwrap()
    }

    #[test]
    fn identity_transform_is_bitwise_identity() {
        let img = ramp(7);
        assert_eq!(transform_image(&Pose::identity(), &img), img);
    }

    #[test]
    fn quarter_turn_is_index_permutation() {
        // Output pixel g reads the input at R(g) = (-y, x), which is pixel
        // (row', col') = (s-1-col, row).
        for side in [4, 5, 8] {
            let img = ramp(side);
            let out = transform_image(&Pose::rotation(PI / 2.0), &img);
            for row in 0..side {
                for col in 0..side {
                    let src = (side - 1 - col) * side + row;
                    assert_eq!(out.get(0, row * side + col), img.get(0, src));
                }
            }
        }
    }

    #[test]
    fn half_turn_twice_is_lossless() {
        let img = ramp(6);
        let twice = transform_image(&Pose::rotation(PI), &transform_image(&Pose::rotation(PI), &img));
        assert_eq!(twice, img);
    }

    #[test]
    fn center_of_mass_examples() {
        let flat = DiscreteImage::new(1, 4, vec![0.5; 16]).unwrap();
        let m = center_of_mass(&flat);
        assert!(m[0].abs() < 1e-15 && m[1].abs() < 1e-15);

        let grid = GridSpec::new(4);
        let mut single = DiscreteImage::zeros(1, 4);
        single.pixels_mut()[6] = 0.7;
        assert_eq!(center_of_mass(&single), grid.point(6));

        let mut pair = DiscreteImage::zeros(1, 4);
        pair.pixels_mut()[1] = 1.0;
        pair.pixels_mut()[14] = 1.0;
        assert_eq!(grid.point(14), [-grid.point(1)[0], -grid.point(1)[1]]);
        assert_eq!(center_of_mass(&pair), [0.0, 0.0]);

        assert_eq!(center_of_mass(&DiscreteImage::zeros(1, 4)), [0.0, 0.0]);
    }

    #[test]
    fn canonical_pose_examples() {
        let p = canonical_pose_from_com([0.3, 0.0]);
        assert_eq!(p.theta(), 0.0);
        assert_eq!(p.tau, [-0.3, -0.0]);

        // cos θ = 0 and -sin θ = -1 give θ = π/2.
        let p = canonical_pose_from_com([0.0, -0.3]);
        assert!((p.theta() - 0.5 * PI).abs() < 1e-12);
        assert_eq!(p.tau, [-0.0, 0.3]);
        let back = com_from_pose(&p);
        assert!(close(back, [0.0, -0.3], 1e-12));

        let p = canonical_pose_from_com([0.0, 0.0]);
        assert_eq!(p.theta(), 0.0);
        assert_eq!(p.tau, [-0.0, -0.0]);
    }

    #[test]
    fn rotate_image_moves_com_forward() {
        let mut img = DiscreteImage::zeros(1, 8);
        let grid = img.grid();
        let p = grid.nearest([0.6, 0.1]).unwrap();
        img.pixels_mut()[p] = 1.0;
        let m = center_of_mass(&rotate_image(PI / 2.0, &img));
        let expect = rotate(grid.point(p), PI / 2.0);
        assert!(close(m, expect, 1e-12), "{m:?} vs {expect:?}");
    }

    proptest! {
        #[test]
        fn group_law(t1 in 0.0..TAU, t2 in 0.0..TAU,
                     a in -1.0..1.0f64, b in -1.0..1.0f64, c in -1.0..1.0f64, d in -1.0..1.0f64,
                     x in -1.0..1.0f64, y in -1.0..1.0f64) {
            let p1 = Pose::new(t1, [a, b]);
            let p2 = Pose::new(t2, [c, d]);
            let two_step = transform_point(&p2, transform_point(&p1, [x, y]));
            let one_step = transform_point(&p1.then(&p2), [x, y]);
            prop_assert!(close(two_step, one_step, 1e-12));
            let back = transform_point(&p1.inverse(), transform_point(&p1, [x, y]));
            prop_assert!(close(back, [x, y], 1e-12));
        }

        #[test]
        fn wrap_is_periodic(a in -50.0..50.0f64, k in -5i32..5) {
            let shifted = wrap_angle(a + TAU * k as f64);
            prop_assert!(angular_distance(shifted, wrap_angle(a)) < 1e-9);
            prop_assert!((0.0..TAU).contains(&shifted));
        }

        #[test]
        fn canonical_pose_reproduces_com(mx in -1.0..1.0f64, my in -1.0..1.0f64) {
            let pose = canonical_pose_from_com([mx, my]);
            prop_assert!(close(com_from_pose(&pose), [mx, my], 1e-12));
        }

        #[test]
        fn com_is_scale_invariant(seed in 0u64..1000, c in 0.01..10.0f64) {
            use rand::{Rng, SeedableRng};
            let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
            let px: Vec<f64> = (0..36).map(|_| rng.gen_range(0.0..1.0)).collect();
            let img = DiscreteImage::new(1, 6, px.clone()).unwrap();
            let scaled = DiscreteImage::new(1, 6, px.iter().map(|v| v * c).collect()).unwrap();
            prop_assert!(close(center_of_mass(&img), center_of_mass(&scaled), 1e-12));
        }
    }
}
