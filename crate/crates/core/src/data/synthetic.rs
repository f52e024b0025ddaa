use rand::Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use super::{stream_rng, DataError, LabeledDataset, Split};
use crate::geometry::{DiscreteImage, GridSpec};

/// Every primitive must fit inside this radius before posing.
pub const FIT_RADIUS: f64 = 0.7;

/// Sub-samples per pixel side when rasterising coverage.
const SUPERSAMPLE: usize = 4;

const PURPOSE_SHAPE: u64 = 1;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Primitive {
    Disc,
    Annulus,
    Cross,
    Bar,
    Wedge,
    TwoDot,
}

/// Parametric class template. `size` and `thickness` are sampled uniformly
/// per image; their meaning depends on the primitive:
///
/// * disc: radius / unused
/// * annulus: outer radius / ring width
/// * cross, bar: arm half-length / half-width
/// * wedge: radius / half-angle in radians
/// * two-dot: centre offset / dot radius
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ShapeRecipe {
    pub class_id: u32,
    pub primitive: Primitive,
    pub size: [f64; 2],
    pub thickness: [f64; 2],
    pub intensity: [f64; 2],
    pub noise_std: f64,
}

impl ShapeRecipe {
    /// Largest distance from the origin any lit point can have.
    pub fn max_radius(&self) -> f64 {
        let (s, t) = (self.size[1], self.thickness[1]);
        match self.primitive {
            Primitive::Disc | Primitive::Annulus => s,
            Primitive::Cross | Primitive::Bar => s.hypot(t),
            Primitive::Wedge => {
                // After centring, the farthest point is the apex or an arc end.
                let mut r: f64 = 0.0;
                for size in self.size {
                    for alpha in self.thickness {
                        let c = wedge_centroid(size, alpha);
                        r = r.max(c).max((size * size + c * c - 2.0 * size * c * alpha.cos()).max(0.0).sqrt());
                        r = r.max(size - c);
                    }
                }
                r
            }
            Primitive::TwoDot => s + t,
        }
    }

    pub fn validate(&self) -> Result<(), DataError> {
        let bad = |reason: String| {
            Err(DataError::Recipe {
                class: self.class_id,
                reason,
            })
        };
        for (name, r) in [("size", self.size), ("thickness", self.thickness), ("intensity", self.intensity)] {
            if !(r[0].is_finite() && r[1].is_finite() && r[0] <= r[1] && r[0] >= 0.0) {
                return bad(format!("{name} range {r:?} must be finite, non-negative and ordered"));
            }
        }
        if self.intensity[1] > 1.0 {
            return bad("intensity must lie in [0, 1]".into());
        }
        if !(self.noise_std.is_finite() && self.noise_std >= 0.0) {
            return bad("noise_std must be >= 0".into());
        }
        if self.size[0] <= 0.0 {
            return bad("size must be positive".into());
        }
        if self.primitive == Primitive::Wedge && self.thickness[1] > std::f64::consts::PI {
            return bad("wedge half-angle must be at most pi".into());
        }
        let r = self.max_radius();
        if r > FIT_RADIUS {
            return bad(format!("shape reaches radius {r:.3}, beyond the fit radius {FIT_RADIUS}"));
        }
        Ok(())
    }
}

/// Distance from the apex to the centroid of a circular sector.
fn wedge_centroid(radius: f64, half_angle: f64) -> f64 {
    if half_angle <= 0.0 {
        2.0 * radius / 3.0
    } else {
        2.0 * radius * half_angle.sin() / (3.0 * half_angle)
    }
}

/// Six well separated classes, one per primitive.
pub fn default_recipes() -> Vec<ShapeRecipe> {
    let r = |class_id, primitive, size: [f64; 2], thickness: [f64; 2]| ShapeRecipe {
        class_id,
        primitive,
        size,
        thickness,
        intensity: [0.7, 1.0],
        noise_std: 0.02,
    };
    vec![
        r(0, Primitive::Disc, [0.25, 0.35], [0.0, 0.0]),
        r(1, Primitive::Annulus, [0.4, 0.5], [0.1, 0.14]),
        r(2, Primitive::Cross, [0.4, 0.5], [0.07, 0.1]),
        r(3, Primitive::Bar, [0.4, 0.55], [0.07, 0.1]),
        r(4, Primitive::Wedge, [0.45, 0.55], [0.45, 0.6]),
        r(5, Primitive::TwoDot, [0.25, 0.35], [0.1, 0.14]),
    ]
}

/// Indicator of one sampled shape, centred so its centroid is the origin.
struct Shape {
    primitive: Primitive,
    size: f64,
    thickness: f64,
    shift: [f64; 2],
}

impl Shape {
    fn sample<R: Rng>(recipe: &ShapeRecipe, rng: &mut R) -> Self {
        let pick = |r: [f64; 2], rng: &mut R| if r[0] < r[1] { rng.gen_range(r[0]..=r[1]) } else { r[0] };
        let size = pick(recipe.size, rng);
        let thickness = pick(recipe.thickness, rng);
        let shift = match recipe.primitive {
            Primitive::Wedge => [wedge_centroid(size, thickness), 0.0],
            _ => [0.0, 0.0],
        };
        Self {
            primitive: recipe.primitive,
            size,
            thickness,
            shift,
        }
    }

    fn contains(&self, x: f64, y: f64) -> bool {
        let (x, y) = (x + self.shift[0], y + self.shift[1]);
        let (s, t) = (self.size, self.thickness);
        let r = x.hypot(y);
        match self.primitive {
            Primitive::Disc => r <= s,
            Primitive::Annulus => r <= s && r >= s - t,
            Primitive::Cross => (x.abs() <= s && y.abs() <= t) || (y.abs() <= s && x.abs() <= t),
            Primitive::Bar => x.abs() <= s && y.abs() <= t,
            Primitive::Wedge => r <= s && y.atan2(x).abs() <= t,
            Primitive::TwoDot => (x - s).hypot(y) <= t || (x + s).hypot(y) <= t,
        }
    }

    /// Fraction of the pixel square around `centre` covered by the shape.
    fn coverage(&self, centre: [f64; 2], spacing: f64) -> f64 {
        let step = spacing / SUPERSAMPLE as f64;
        let mut hits = 0;
        for a in 0..SUPERSAMPLE {
            for b in 0..SUPERSAMPLE {
                let x = centre[0] - spacing / 2.0 + (a as f64 + 0.5) * step;
                let y = centre[1] - spacing / 2.0 + (b as f64 + 0.5) * step;
                hits += self.contains(x, y) as usize;
            }
        }
        hits as f64 / (SUPERSAMPLE * SUPERSAMPLE) as f64
    }
}

fn render(recipe: &ShapeRecipe, grid: &GridSpec, rng: &mut impl Rng) -> Result<DiscreteImage, DataError> {
    let shape = Shape::sample(recipe, rng);
    let intensity = if recipe.intensity[0] < recipe.intensity[1] {
        rng.gen_range(recipe.intensity[0]..=recipe.intensity[1])
    } else {
        recipe.intensity[0]
    };
    let noise = Normal::new(0.0, recipe.noise_std).expect("validated noise");
    let pixels = (0..grid.len())
        .map(|p| {
            let v = intensity * shape.coverage(grid.point(p), grid.spacing());
            let n = if recipe.noise_std > 0.0 { noise.sample(rng) } else { 0.0 };
            (v + n).clamp(0.0, 1.0)
        })
        .collect();
    Ok(DiscreteImage::new(1, grid.side(), pixels)?)
}

/// Renders `n_per_class` images per recipe, interleaving classes. Each image
/// draws from its own generator keyed by `(seed, index)`. All images are
/// tagged train; see [`LabeledDataset::assign_test_split`].
pub fn generate_synthetic(
    n_per_class: usize,
    recipes: &[ShapeRecipe],
    side: usize,
    seed: u64,
) -> Result<LabeledDataset, DataError> {
    if n_per_class == 0 {
        return Err(DataError::Consistency("n_per_class must be at least 1".into()));
    }
    if recipes.is_empty() {
        return Err(DataError::Consistency("no recipes given".into()));
    }
    for (i, r) in recipes.iter().enumerate() {
        r.validate()?;
        if r.class_id as usize != i {
            return Err(DataError::Recipe {
                class: r.class_id,
                reason: format!("class ids must be 0..n in order; found {} at position {i}", r.class_id),
            });
        }
    }
    let grid = GridSpec::new(side);
    let total = n_per_class * recipes.len();
    let mut images = Vec::with_capacity(total);
    let mut labels = Vec::with_capacity(total);
    for i in 0..total {
        let recipe = &recipes[i % recipes.len()];
        let mut rng = stream_rng(seed, i as u64, PURPOSE_SHAPE);
        images.push(render(recipe, &grid, &mut rng)?);
        labels.push(recipe.class_id);
    }
    Ok(LabeledDataset {
        images,
        labels,
        n_classes: recipes.len(),
        poses: None,
        splits: vec![Split::Train; total],
    })
}
