use rand::Rng;

use crate::error::{Error, Result};
use crate::field::{Aabb, DecomposedField, RankLayout};
use crate::real::Real;
use crate::render::OccupancyGrid;
use crate::shading::ShadingConfig;

/// A trained radiance field: single-channel density decomposition, SH color
/// decomposition, bounding box and optional occupancy grid.
#[derive(Clone, Debug, PartialEq)]
pub struct FieldPair<T: Real = f32> {
    pub aabb: Aabb,
    pub shading: ShadingConfig,
    pub density: DecomposedField<T>,
    pub color: DecomposedField<T>,
    pub occupancy: Option<OccupancyGrid>,
}

impl<T: Real> FieldPair<T> {
    pub fn new(
        aabb: Aabb,
        shading: ShadingConfig,
        density: DecomposedField<T>,
        color: DecomposedField<T>,
        occupancy: Option<OccupancyGrid>,
    ) -> Result<Self> {
        if density.channels() != 1 {
            return Err(Error::Shape(format!(
                "density field must have one channel, has {}",
                density.channels()
            )));
        }
        if color.channels() != shading.color_channels() {
            return Err(Error::Shape(format!(
                "color field has {} channels, SH degree {} needs {}",
                color.channels(),
                shading.sh_degree,
                shading.color_channels()
            )));
        }
        Ok(Self {
            aabb,
            shading,
            density,
            color,
            occupancy,
        })
    }

    /// Zero-initialized model with both fields on the same grid.
    pub fn zeros(
        aabb: Aabb,
        resolution: [usize; 3],
        density_layout: RankLayout,
        color_layout: RankLayout,
        shading: ShadingConfig,
    ) -> Result<Self> {
        let density = DecomposedField::zeros(1, resolution, density_layout)?;
        let color = DecomposedField::zeros(shading.color_channels(), resolution, color_layout)?;
        Self::new(aabb, shading, density, color, None)
    }

    /// Training initialization: small uniform factors, unit-scale density
    /// weights and `±1/√R` color weights.
    pub fn init_random<R: Rng + ?Sized>(
        aabb: Aabb,
        resolution: [usize; 3],
        density_layout: RankLayout,
        color_layout: RankLayout,
        shading: ShadingConfig,
        rng: &mut R,
    ) -> Result<Self> {
        let mut m = Self::zeros(aabb, resolution, density_layout, color_layout, shading)?;
        m.density.randomize(rng, 0.1, 0.0);
        m.density.weights_mut().iter_mut().for_each(|w| *w = T::one());
        let ws = 1.0 / (m.color.rank() as f64).sqrt();
        m.color.randomize(rng, 0.1, ws);
        Ok(m)
    }

    pub fn cast<U: Real>(&self) -> FieldPair<U> {
        FieldPair {
            aabb: self.aabb,
            shading: self.shading,
            density: self.density.cast(),
            color: self.color.cast(),
            occupancy: self.occupancy.clone(),
        }
    }

    pub fn parameter_count(&self) -> usize {
        self.density.parameter_count() + self.color.parameter_count()
    }

    /// Normalized coordinate of a world point, clamped to the unit cube.
    #[inline]
    pub fn local_coord(&self, p: [f64; 3]) -> [T; 3] {
        let u = self.aabb.normalize(p);
        std::array::from_fn(|a| T::from_f64(u[a].clamp(0.0, 1.0)))
    }

    /// Applies `f` to both fields, keeping everything else.
    pub fn map_fields(
        &self,
        mut f: impl FnMut(&DecomposedField<T>) -> Result<DecomposedField<T>>,
    ) -> Result<Self> {
        Self::new(
            self.aabb,
            self.shading,
            f(&self.density)?,
            f(&self.color)?,
            self.occupancy.clone(),
        )
    }
}
