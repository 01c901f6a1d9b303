//! Uniform cell-centered 2-D grid, field containers and finite-difference
//! operators.
//!
//! All fields are collocated at cell centers `x_min + (i + 1/2) dx`.
//! Derivatives use second-order central differences; ghost cells are either
//! mirror images (homogeneous Neumann, the default) or periodic wraps.
//! `laplacian` is the composition of `divergence` and `gradient` stencils,
//! so the discrete divergence theorem `∫ Δf = 0` holds exactly under both
//! boundary rules.

use crate::error::{Error, Result};
use crate::scalar::Scalar;

/// Ghost-cell rule applied by the difference operators and the PDE steppers.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Boundary {
    /// Mirror ghost cells; no-flux walls.
    Neumann,
    /// Torus wrap.
    Periodic,
}

/// Uniform rectangular grid. Cheap to copy; fields embed it by value.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Grid<T> {
    pub x_min: T,
    pub x_max: T,
    pub y_min: T,
    pub y_max: T,
    pub nx: usize,
    pub ny: usize,
    pub dx: T,
    pub dy: T,
}

impl<T: Scalar> Grid<T> {
    pub fn new(x_min: T, x_max: T, y_min: T, y_max: T, nx: usize, ny: usize) -> Result<Self> {
        if !(x_min < x_max) || !(y_min < y_max) {
            return Err(Error::Config(format!(
                "degenerate domain bounds [{x_min},{x_max}]x[{y_min},{y_max}]"
            )));
        }
        if nx < 4 || ny < 4 {
            return Err(Error::Config(format!(
                "cell counts must be >= 4, got nx={nx}, ny={ny}"
            )));
        }
        let dx = (x_max - x_min) / T::from_count(nx);
        let dy = (y_max - y_min) / T::from_count(ny);
        if !dx.is_finite() || !dy.is_finite() || dx <= T::zero() || dy <= T::zero() {
            return Err(Error::Config("non-finite grid spacing".into()));
        }
        Ok(Self { x_min, x_max, y_min, y_max, nx, ny, dx, dy })
    }

    /// Square grid on `[-5,5]^2`, the default simulation domain.
    pub fn square(half_width: T, n: usize) -> Result<Self> {
        Self::new(-half_width, half_width, -half_width, half_width, n, n)
    }

    #[inline]
    pub fn n_cells(&self) -> usize {
        self.nx * self.ny
    }

    #[inline]
    pub fn cell_area(&self) -> T {
        self.dx * self.dy
    }

    /// Flat index of cell `(ix, iy)`; rows run over y.
    #[inline]
    pub fn idx(&self, ix: usize, iy: usize) -> usize {
        debug_assert!(ix < self.nx && iy < self.ny);
        iy * self.nx + ix
    }

    #[inline]
    pub fn cell_x(&self, ix: usize) -> T {
        self.x_min + (T::from_count(ix) + T::from_f(0.5)) * self.dx
    }

    #[inline]
    pub fn cell_y(&self, iy: usize) -> T {
        self.y_min + (T::from_count(iy) + T::from_f(0.5)) * self.dy
    }

    pub fn contains(&self, x: T, y: T) -> bool {
        x >= self.x_min && x <= self.x_max && y >= self.y_min && y <= self.y_max
    }

    /// Cell whose center is nearest to `(x, y)`; clamped to the domain.
    pub fn nearest_cell(&self, x: T, y: T) -> (usize, usize) {
        let fx = ((x - self.x_min) / self.dx).floor();
        let fy = ((y - self.y_min) / self.dy).floor();
        let ix = fx.to_usize().unwrap_or(0).min(self.nx - 1);
        let iy = fy.to_usize().unwrap_or(0).min(self.ny - 1);
        (ix, iy)
    }
}

/// Resolve a possibly out-of-range index against the ghost rule.
#[inline]
fn ghost(i: isize, n: usize, bc: Boundary) -> usize {
    let n = n as isize;
    let j = match bc {
        Boundary::Neumann => {
            if i < 0 {
                -1 - i
            } else if i >= n {
                2 * n - 1 - i
            } else {
                i
            }
        }
        Boundary::Periodic => i.rem_euclid(n),
    };
    debug_assert!(j >= 0 && j < n);
    j as usize
}

/// Real-valued grid function.
#[derive(Clone, Debug, PartialEq)]
pub struct ScalarField<T> {
    grid: Grid<T>,
    values: Vec<T>,
}

impl<T: Scalar> ScalarField<T> {
    pub fn zeros(grid: Grid<T>) -> Self {
        Self { grid, values: vec![T::zero(); grid.n_cells()] }
    }

    pub fn constant(grid: Grid<T>, v: T) -> Self {
        Self { grid, values: vec![v; grid.n_cells()] }
    }

    pub fn from_fn(grid: Grid<T>, mut f: impl FnMut(T, T) -> T) -> Self {
        let mut values = Vec::with_capacity(grid.n_cells());
        for iy in 0..grid.ny {
            for ix in 0..grid.nx {
                values.push(f(grid.cell_x(ix), grid.cell_y(iy)));
            }
        }
        Self { grid, values }
    }

    pub fn from_values(grid: Grid<T>, values: Vec<T>) -> Result<Self> {
        if values.len() != grid.n_cells() {
            return Err(Error::Input(format!(
                "field length {} does not match grid with {} cells",
                values.len(),
                grid.n_cells()
            )));
        }
        Ok(Self { grid, values })
    }

    #[inline]
    pub fn grid(&self) -> &Grid<T> {
        &self.grid
    }

    #[inline]
    pub fn values(&self) -> &[T] {
        &self.values
    }

    #[inline]
    pub fn values_mut(&mut self) -> &mut [T] {
        &mut self.values
    }

    #[inline]
    pub fn at(&self, ix: usize, iy: usize) -> T {
        self.values[self.grid.idx(ix, iy)]
    }

    #[inline]
    pub fn set(&mut self, ix: usize, iy: usize, v: T) {
        let i = self.grid.idx(ix, iy);
        self.values[i] = v;
    }

    pub fn min_value(&self) -> T {
        self.values.iter().copied().fold(T::infinity(), T::min)
    }

    pub fn max_value(&self) -> T {
        self.values.iter().copied().fold(T::neg_infinity(), T::max)
    }

    pub fn is_finite(&self) -> bool {
        self.values.iter().all(|v| v.is_finite())
    }

    /// Midpoint quadrature `Σ f dx dy`, summed in index order.
    pub fn integrate(&self) -> T {
        let mut acc = T::zero();
        for v in &self.values {
            acc += *v;
        }
        acc * self.grid.cell_area()
    }

    /// Central-difference gradient with ghost cells per `bc`.
    pub fn gradient(&self, bc: Boundary) -> VectorField<T> {
        let g = self.grid;
        let half = T::from_f(0.5);
        let inv2dx = half / g.dx;
        let inv2dy = half / g.dy;
        let mut vx = vec![T::zero(); g.n_cells()];
        let mut vy = vec![T::zero(); g.n_cells()];
        for iy in 0..g.ny {
            for ix in 0..g.nx {
                let xl = self.values[g.idx(ghost(ix as isize - 1, g.nx, bc), iy)];
                let xr = self.values[g.idx(ghost(ix as isize + 1, g.nx, bc), iy)];
                let yl = self.values[g.idx(ix, ghost(iy as isize - 1, g.ny, bc))];
                let yr = self.values[g.idx(ix, ghost(iy as isize + 1, g.ny, bc))];
                let k = g.idx(ix, iy);
                vx[k] = (xr - xl) * inv2dx;
                vy[k] = (yr - yl) * inv2dy;
            }
        }
        VectorField { grid: g, x: vx, y: vy }
    }

    /// Discrete Laplacian matching the `divergence(gradient(·))` stencil on
    /// interior cells and integrating to zero under both ghost rules.
    pub fn laplacian(&self, bc: Boundary) -> ScalarField<T> {
        let g = self.grid;
        let quarter = T::from_f(0.25);
        let cx = quarter / (g.dx * g.dx);
        let cy = quarter / (g.dy * g.dy);
        let two = T::from_f(2.0);
        let mut out = vec![T::zero(); g.n_cells()];
        for iy in 0..g.ny {
            for ix in 0..g.nx {
                let c = self.values[g.idx(ix, iy)];
                let xl = self.values[g.idx(ghost(ix as isize - 2, g.nx, bc), iy)];
                let xr = self.values[g.idx(ghost(ix as isize + 2, g.nx, bc), iy)];
                let yl = self.values[g.idx(ix, ghost(iy as isize - 2, g.ny, bc))];
                let yr = self.values[g.idx(ix, ghost(iy as isize + 2, g.ny, bc))];
                out[g.idx(ix, iy)] = (xr - two * c + xl) * cx + (yr - two * c + yl) * cy;
            }
        }
        ScalarField { grid: g, values: out }
    }

    pub fn linear_combination(a: T, f: &Self, b: T, g: &Self) -> Result<Self> {
        if f.grid != g.grid {
            return Err(Error::Input("fields live on different grids".into()));
        }
        let values = f
            .values
            .iter()
            .zip(&g.values)
            .map(|(&u, &v)| a * u + b * v)
            .collect();
        Ok(Self { grid: f.grid, values })
    }
}

/// Two-component grid function (one value pair per cell).
#[derive(Clone, Debug, PartialEq)]
pub struct VectorField<T> {
    grid: Grid<T>,
    x: Vec<T>,
    y: Vec<T>,
}

impl<T: Scalar> VectorField<T> {
    pub fn zeros(grid: Grid<T>) -> Self {
        let n = grid.n_cells();
        Self { grid, x: vec![T::zero(); n], y: vec![T::zero(); n] }
    }

    pub fn from_components(grid: Grid<T>, x: Vec<T>, y: Vec<T>) -> Result<Self> {
        if x.len() != grid.n_cells() || y.len() != grid.n_cells() {
            return Err(Error::Input("component length does not match grid".into()));
        }
        Ok(Self { grid, x, y })
    }

    #[inline]
    pub fn grid(&self) -> &Grid<T> {
        &self.grid
    }

    #[inline]
    pub fn x(&self) -> &[T] {
        &self.x
    }

    #[inline]
    pub fn y(&self) -> &[T] {
        &self.y
    }

    pub fn is_finite(&self) -> bool {
        self.x.iter().chain(self.y.iter()).all(|v| v.is_finite())
    }

    /// Central-difference divergence with ghost cells per `bc`.
    pub fn divergence(&self, bc: Boundary) -> ScalarField<T> {
        let g = self.grid;
        let half = T::from_f(0.5);
        let inv2dx = half / g.dx;
        let inv2dy = half / g.dy;
        let mut out = vec![T::zero(); g.n_cells()];
        for iy in 0..g.ny {
            for ix in 0..g.nx {
                let xl = self.x[g.idx(ghost(ix as isize - 1, g.nx, bc), iy)];
                let xr = self.x[g.idx(ghost(ix as isize + 1, g.nx, bc), iy)];
                let yl = self.y[g.idx(ix, ghost(iy as isize - 1, g.ny, bc))];
                let yr = self.y[g.idx(ix, ghost(iy as isize + 1, g.ny, bc))];
                out[g.idx(ix, iy)] = (xr - xl) * inv2dx + (yr - yl) * inv2dy;
            }
        }
        ScalarField { grid: g, values: out }
    }
}

/// Nonnegative grid function with unit mass.
#[derive(Clone, Debug, PartialEq)]
pub struct DensityField<T> {
    field: ScalarField<T>,
}

impl<T: Scalar> DensityField<T> {
    /// Normalizes `field` to unit mass, clamping negative round-off at zero.
    pub fn from_scalar(field: ScalarField<T>) -> Result<Self> {
        let mut d = Self { field };
        d.normalize()?;
        Ok(d)
    }

    #[inline]
    pub fn grid(&self) -> &Grid<T> {
        self.field.grid()
    }

    #[inline]
    pub fn values(&self) -> &[T] {
        self.field.values()
    }

    #[inline]
    pub fn at(&self, ix: usize, iy: usize) -> T {
        self.field.at(ix, iy)
    }

    #[inline]
    pub fn as_scalar(&self) -> &ScalarField<T> {
        &self.field
    }

    pub fn into_scalar(self) -> ScalarField<T> {
        self.field
    }

    pub fn mass(&self) -> T {
        self.field.integrate()
    }

    pub fn min_value(&self) -> T {
        self.field.min_value()
    }

    pub fn max_value(&self) -> T {
        self.field.max_value()
    }

    /// Clamp negative round-off at zero and rescale to unit mass.
    pub fn normalize(&mut self) -> Result<()> {
        for v in self.field.values_mut() {
            if *v < T::zero() {
                *v = T::zero();
            }
        }
        let mass = self.field.integrate();
        if !(mass > T::zero()) || !mass.is_finite() {
            return Err(Error::DegenerateDensity(format!(
                "total mass {mass} is not positive"
            )));
        }
        let inv = T::one() / mass;
        for v in self.field.values_mut() {
            *v *= inv;
        }
        Ok(())
    }

    /// Mean position `∫ x dρ`.
    pub fn mean(&self) -> (T, T) {
        let g = *self.grid();
        let mut mx = T::zero();
        let mut my = T::zero();
        for iy in 0..g.ny {
            for ix in 0..g.nx {
                let w = self.field.at(ix, iy);
                mx += w * g.cell_x(ix);
                my += w * g.cell_y(iy);
            }
        }
        let a = g.cell_area();
        (mx * a, my * a)
    }

    /// Second moment `∫ ‖x - c‖² dρ` about the point `c`.
    pub fn second_moment(&self, c: (T, T)) -> T {
        let g = *self.grid();
        let mut acc = T::zero();
        for iy in 0..g.ny {
            for ix in 0..g.nx {
                let dx = g.cell_x(ix) - c.0;
                let dy = g.cell_y(iy) - c.1;
                acc += self.field.at(ix, iy) * (dx * dx + dy * dy);
            }
        }
        acc * g.cell_area()
    }
}

/// Isotropic Gaussian evaluated at cell centers, renormalized to unit mass
/// on the grid (tails outside the domain are discarded).
pub fn gaussian_density<T: Scalar>(
    grid: Grid<T>,
    center: (T, T),
    variance: T,
) -> Result<DensityField<T>> {
    if !(variance > T::zero()) {
        return Err(Error::Config(format!("variance must be positive, got {variance}")));
    }
    if !grid.contains(center.0, center.1) {
        return Err(Error::Config(format!(
            "gaussian center ({}, {}) lies outside the domain",
            center.0, center.1
        )));
    }
    let inv2v = T::from_f(0.5) / variance;
    let field = ScalarField::from_fn(grid, |x, y| {
        let dx = x - center.0;
        let dy = y - center.1;
        (-(dx * dx + dy * dy) * inv2v).exp()
    });
    DensityField::from_scalar(field)
}

/// Component of a Gaussian mixture.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct GaussianSpec<T> {
    pub center: (T, T),
    pub variance: T,
    pub weight: T,
}

impl<T: Scalar> GaussianSpec<T> {
    pub fn new(center: (T, T), variance: T) -> Self {
        Self { center, variance, weight: T::one() }
    }
}

/// Normalized weighted sum of isotropic Gaussians.
pub fn gaussian_mixture_density<T: Scalar>(
    grid: Grid<T>,
    components: &[GaussianSpec<T>],
) -> Result<DensityField<T>> {
    if components.is_empty() {
        return Err(Error::Config("mixture needs at least one component".into()));
    }
    let mut acc = ScalarField::zeros(grid);
    for spec in components {
        if !(spec.weight > T::zero()) {
            return Err(Error::Config(format!(
                "mixture weight must be positive, got {}",
                spec.weight
            )));
        }
        let part = gaussian_density(grid, spec.center, spec.variance)?;
        acc = ScalarField::linear_combination(T::one(), &acc, spec.weight, part.as_scalar())?;
    }
    DensityField::from_scalar(acc)
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::{assert_abs_diff_eq, assert_relative_eq};

    fn unit_grid(n: usize) -> Grid<f64> {
        Grid::new(0.0, 1.0, 0.0, 1.0, n, n).unwrap()
    }

    #[test]
    fn paper_grid_spacing() {
        let g: Grid<f64> = Grid::new(-5.0, 5.0, -5.0, 5.0, 60, 60).unwrap();
        assert_relative_eq!(g.dx, 1.0 / 6.0, max_relative = 1e-15);
        assert_relative_eq!(g.dy, 1.0 / 6.0, max_relative = 1e-15);
    }

    #[test]
    fn quarter_spacing_grid() {
        let g: Grid<f64> = Grid::new(0.0, 1.0, 0.0, 1.0, 4, 4).unwrap();
        assert_relative_eq!(g.dx, 0.25);
        assert_relative_eq!(g.dy, 0.25);
    }

    #[test]
    fn rejects_degenerate_grids() {
        assert!(Grid::<f64>::new(-5.0, 5.0, -5.0, 5.0, 3, 60).is_err());
        assert!(Grid::<f64>::new(5.0, -5.0, -5.0, 5.0, 60, 60).is_err());
        assert!(Grid::<f64>::new(0.0, 0.0, 0.0, 1.0, 8, 8).is_err());
    }

    #[test]
    fn gaussian_has_unit_mass_and_peak_at_center() {
        let g = Grid::new(-5.0, 5.0, -5.0, 5.0, 60, 60).unwrap();
        let rho = gaussian_density(g, (-3.0, -3.0), 0.85).unwrap();
        assert_abs_diff_eq!(rho.mass(), 1.0, epsilon = 1e-10);
        let (pix, piy) = g.nearest_cell(-3.0, -3.0);
        let peak = rho.at(pix, piy);
        assert!(rho.values().iter().all(|&v| v <= peak));
    }

    #[test]
    fn gaussian_second_moment_matches_quadrature_oracle() {
        let g = Grid::new(-5.0, 5.0, -5.0, 5.0, 60, 60).unwrap();
        let rho = gaussian_density(g, (0.0, 0.0), 0.35).unwrap();
        // Direct quadrature of the analytic density on a fine grid.
        let fine = Grid::new(-5.0, 5.0, -5.0, 5.0, 400, 400).unwrap();
        let fine_rho = gaussian_density(fine, (0.0, 0.0), 0.35).unwrap();
        let oracle = fine_rho.second_moment((0.0, 0.0));
        let m2 = rho.second_moment((0.0, 0.0));
        assert_relative_eq!(m2, oracle, max_relative = 1e-3);
        // Analytic value 2*variance, within 3% after domain truncation.
        assert_relative_eq!(m2, 0.70, max_relative = 0.03);
    }

    #[test]
    fn gaussian_rejects_bad_inputs() {
        let g = unit_grid(8);
        assert!(gaussian_density(g, (0.5, 0.5), 0.0).is_err());
        assert!(gaussian_density(g, (2.0, 0.5), 0.1).is_err());
    }

    #[test]
    fn operators_vanish_on_constants() {
        for bc in [Boundary::Neumann, Boundary::Periodic] {
            let f = ScalarField::constant(unit_grid(8), 3.25);
            let grad = f.gradient(bc);
            let lap = f.laplacian(bc);
            assert!(grad.x().iter().chain(grad.y()).all(|&v| v == 0.0));
            assert!(lap.values().iter().all(|&v| v == 0.0));
        }
    }

    #[test]
    fn laplacian_of_paraboloid_is_four_in_the_interior() {
        let g = Grid::new(-5.0, 5.0, -5.0, 5.0, 60, 60).unwrap();
        let f = ScalarField::from_fn(g, |x, y| x * x + y * y);
        let lap = f.laplacian(Boundary::Neumann);
        for iy in 2..g.ny - 2 {
            for ix in 2..g.nx - 2 {
                assert_abs_diff_eq!(lap.at(ix, iy), 4.0, epsilon = 1e-9);
            }
        }
    }

    #[test]
    fn divergence_of_gradient_matches_laplacian_on_interior() {
        let g = Grid::new(-1.0, 2.0, 0.0, 1.0, 12, 9).unwrap();
        let f = ScalarField::from_fn(g, |x: f64, y: f64| (3.0 * x).sin() * (2.0 * y).cos() + x * y);
        for bc in [Boundary::Neumann, Boundary::Periodic] {
            let lap = f.laplacian(bc);
            let divgrad = f.gradient(bc).divergence(bc);
            for iy in 1..g.ny - 1 {
                for ix in 1..g.nx - 1 {
                    assert_abs_diff_eq!(lap.at(ix, iy), divgrad.at(ix, iy), epsilon = 1e-12);
                }
            }
        }
    }

    #[test]
    fn laplacian_integrates_to_zero() {
        let g = Grid::new(-2.0, 2.0, -1.0, 3.0, 17, 11).unwrap();
        let f = ScalarField::from_fn(g, |x: f64, y: f64| (x * y).exp().sin() + x * x * y);
        for bc in [Boundary::Neumann, Boundary::Periodic] {
            let total = f.laplacian(bc).integrate();
            assert_abs_diff_eq!(total, 0.0, epsilon = 1e-10);
        }
    }

    #[test]
    fn operators_converge_at_second_order() {
        // Periodic-compatible smooth test function; global error must shrink
        // by at least 3.5x when dx halves.
        let tau = std::f64::consts::TAU;
        let exact_lap = |x: f64, y: f64| {
            -(tau * tau) * ((tau * x).sin() * (tau * y).cos())
                - (tau * tau) * ((tau * x).sin() * (tau * y).cos())
        };
        let mut errors = Vec::new();
        for n in [16, 32, 64] {
            let g = Grid::new(0.0, 1.0, 0.0, 1.0, n, n).unwrap();
            let f = ScalarField::from_fn(g, |x, y| (tau * x).sin() * (tau * y).cos());
            let lap = f.laplacian(Boundary::Periodic);
            let mut err: f64 = 0.0;
            for iy in 0..n {
                for ix in 0..n {
                    let e = (lap.at(ix, iy) - exact_lap(g.cell_x(ix), g.cell_y(iy))).abs();
                    err = err.max(e);
                }
            }
            errors.push(err);
        }
        assert!(errors[0] / errors[1] >= 3.5, "ratios {errors:?}");
        assert!(errors[1] / errors[2] >= 3.5, "ratios {errors:?}");
    }

    #[test]
    fn integrate_constant_over_unit_square() {
        let f = ScalarField::constant(unit_grid(13), 1.0);
        assert_relative_eq!(f.integrate(), 1.0, max_relative = 1e-14);
    }

    #[test]
    fn normalize_rejects_zero_field() {
        let z = ScalarField::zeros(unit_grid(8));
        assert!(DensityField::from_scalar(z).is_err());
    }

    #[test]
    fn normalize_clamps_roundoff_negatives() {
        let g = unit_grid(8);
        let mut f = ScalarField::constant(g, 1.0);
        f.set(0, 0, -1e-14);
        let d = DensityField::from_scalar(f).unwrap();
        assert_abs_diff_eq!(d.mass(), 1.0, epsilon = 1e-10);
        assert_eq!(d.at(0, 0), 0.0);
        assert!(d.values().iter().all(|&v| v >= 0.0));
    }

    #[test]
    fn works_in_f32_too() {
        let g: Grid<f32> = Grid::new(-5.0_f32, 5.0, -5.0, 5.0, 16, 16).unwrap();
        let rho = gaussian_density(g, (0.0_f32, 0.0), 0.85_f32).unwrap();
        assert!((rho.mass() - 1.0).abs() < 1e-5);
    }

    #[test]
    fn mixture_density_is_normalized() {
        let g = Grid::new(-5.0, 5.0, -5.0, 5.0, 40, 40).unwrap();
        let specs = [
            GaussianSpec { center: (1.0, 1.0), variance: 0.3, weight: 2.0 },
            GaussianSpec { center: (-2.0, 0.5), variance: 0.8, weight: 1.0 },
        ];
        let d = gaussian_mixture_density(g, &specs).unwrap();
        assert_abs_diff_eq!(d.mass(), 1.0, epsilon = 1e-10);
    }
}

#[cfg(test)]
mod prop_tests {
    use super::*;
    use proptest::prelude::*;

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(24))]

        // Linearity of the difference operators.
        #[test]
        fn operators_are_linear(a in -3.0f64..3.0, b in -3.0f64..3.0, seed in 0u64..1000) {
            let g = Grid::new(-1.0, 1.0, -1.0, 1.0, 8, 8).unwrap();
            let f1 = ScalarField::from_fn(g, |x: f64, y: f64| ((x * 7.1 + seed as f64).sin() + y).cos());
            let f2 = ScalarField::from_fn(g, |x, y| (x - y * 2.0).tanh());
            let combo = ScalarField::linear_combination(a, &f1, b, &f2).unwrap();
            for bc in [Boundary::Neumann, Boundary::Periodic] {
                let lhs = combo.laplacian(bc);
                let rhs = ScalarField::linear_combination(
                    a, &f1.laplacian(bc), b, &f2.laplacian(bc)).unwrap();
                for (u, v) in lhs.values().iter().zip(rhs.values()) {
                    prop_assert!((u - v).abs() <= 1e-11 * (1.0 + u.abs().max(v.abs())));
                }
            }
        }

        // Discrete divergence theorem under both ghost rules.
        #[test]
        fn laplacian_has_zero_integral(seed in 0u64..1000) {
            let g = Grid::new(-2.0, 1.0, 0.0, 2.0, 11, 7).unwrap();
            let s = seed as f64 * 0.37;
            let f = ScalarField::from_fn(g, |x: f64, y: f64| (x * 1.3 + s).sin() * (y * 2.7 - s).cos() + x);
            for bc in [Boundary::Neumann, Boundary::Periodic] {
                prop_assert!(f.laplacian(bc).integrate().abs() < 1e-10);
            }
        }
    }
}
