//! Time series of face controls with box bounds.

use crate::error::{Error, Result};
use crate::geometry::{Grid, VectorField};

/// A lower or upper bound: one constant, or one face field per step.
#[derive(Debug, Clone, PartialEq)]
pub enum Bound {
    Constant(f64),
    Series(Vec<VectorField>),
}

impl Bound {
    #[inline]
    fn at(&self, n: usize, k: usize) -> f64 {
        match self {
            Bound::Constant(c) => *c,
            Bound::Series(s) => s[n].data()[k],
        }
    }

    fn check_shape(&self, grid: &Grid, n: usize) -> Result<()> {
        match self {
            Bound::Constant(c) if c.is_nan() => Err(Error::NonFinite("bound is NaN".into())),
            Bound::Constant(_) => Ok(()),
            Bound::Series(s) if s.len() != n => {
                Err(Error::Shape(format!("bound series has {} entries, control has {n}", s.len())))
            }
            Bound::Series(s) => s.iter().try_for_each(|f| grid.check_same(f.grid())),
        }
    }
}

/// Componentwise box `lower <= v <= upper`.
#[derive(Debug, Clone, PartialEq)]
pub struct BoxBounds {
    pub lower: Bound,
    pub upper: Bound,
}

impl BoxBounds {
    pub fn new(lower: Bound, upper: Bound) -> Self {
        Self { lower, upper }
    }

    pub fn constant(lower: f64, upper: f64) -> Self {
        Self::new(Bound::Constant(lower), Bound::Constant(upper))
    }

    pub fn unbounded() -> Self {
        Self::constant(f64::NEG_INFINITY, f64::INFINITY)
    }

    /// True when the zero control is admissible; otherwise the box cannot
    /// meet the divergence-free fields in general.
    pub fn contains_zero(&self, grid: &Grid, n: usize) -> bool {
        (0..n).all(|s| (0..grid.n_faces()).all(|k| self.lower.at(s, k) <= 0.0 && 0.0 <= self.upper.at(s, k)))
    }

    fn check(&self, grid: &Grid, n: usize) -> Result<()> {
        self.lower.check_shape(grid, n)?;
        self.upper.check_shape(grid, n)?;
        for s in 0..n {
            for k in 0..grid.n_faces() {
                let (a, b) = (self.lower.at(s, k), self.upper.at(s, k));
                if a > b {
                    return Err(Error::InvalidArgument(format!(
                        "empty box at step {s}, face {k}: lower {a} > upper {b}"
                    )));
                }
            }
        }
        Ok(())
    }
}

/// Controls `v^0..v^{N-1}`, `v^n` acting on `[t_n, t_{n+1})`.
///
/// The inner product is the `L^2(Q)` quadrature: `dt` per step, cell
/// volume per face, with half weight on wall faces (trapezoidal rule in
/// the normal direction).
#[derive(Debug, Clone, PartialEq)]
pub struct ControlField {
    grid: Grid,
    dt: f64,
    values: Vec<VectorField>,
    bounds: BoxBounds,
}

impl ControlField {
    pub fn new(grid: Grid, dt: f64, values: Vec<VectorField>, bounds: BoxBounds) -> Result<Self> {
        if !(dt > 0.0) {
            return Err(Error::InvalidArgument(format!("dt must be positive, got {dt}")));
        }
        for v in &values {
            grid.check_same(v.grid())?;
        }
        bounds.check(&grid, values.len())?;
        Ok(Self { grid, dt, values, bounds })
    }

    pub fn zeros(grid: Grid, dt: f64, n: usize) -> Self {
        Self::new(grid, dt, vec![VectorField::zeros(grid); n], BoxBounds::unbounded()).expect("valid")
    }

    /// The same field at every step.
    pub fn constant_in_time(field: VectorField, dt: f64, n: usize) -> Result<Self> {
        let grid = *field.grid();
        Self::new(grid, dt, vec![field; n], BoxBounds::unbounded())
    }

    pub fn with_bounds(self, bounds: BoxBounds) -> Result<Self> {
        Self::new(self.grid, self.dt, self.values, bounds)
    }

    /// A field with the same grid, step and bounds but new values.
    pub fn with_values(&self, values: Vec<VectorField>) -> Result<Self> {
        if values.len() != self.values.len() {
            return Err(Error::Shape(format!("expected {} steps, got {}", self.values.len(), values.len())));
        }
        for v in &values {
            self.grid.check_same(v.grid())?;
        }
        Ok(Self {
            grid: self.grid,
            dt: self.dt,
            values,
            bounds: self.bounds.clone(),
        })
    }

    pub fn grid(&self) -> &Grid {
        &self.grid
    }

    pub fn dt(&self) -> f64 {
        self.dt
    }

    pub fn n_steps(&self) -> usize {
        self.values.len()
    }

    pub fn values(&self) -> &[VectorField] {
        &self.values
    }

    pub fn values_mut(&mut self) -> &mut [VectorField] {
        &mut self.values
    }

    pub fn bounds(&self) -> &BoxBounds {
        &self.bounds
    }

    fn check_compatible(&self, other: &Self) -> Result<()> {
        self.grid.check_same(&other.grid)?;
        if self.values.len() != other.values.len() {
            return Err(Error::Shape(format!(
                "controls have {} and {} steps",
                self.values.len(),
                other.values.len()
            )));
        }
        Ok(())
    }

    /// Quadrature weight of face `k` relative to the cell volume.
    #[inline]
    pub(crate) fn face_weight(grid: &Grid, k: usize) -> f64 {
        if VectorField::is_wall_face(grid, k) {
            0.5
        } else {
            1.0
        }
    }

    pub fn dot(&self, other: &Self) -> Result<f64> {
        self.check_compatible(other)?;
        let g = self.grid;
        let mut s = 0.0;
        for (a, b) in self.values.iter().zip(&other.values) {
            for (k, (x, y)) in a.data().iter().zip(b.data()).enumerate() {
                s += Self::face_weight(&g, k) * x * y;
            }
        }
        Ok(s * g.cell_volume() * self.dt)
    }

    pub fn norm(&self) -> f64 {
        self.dot(self).expect("compatible").sqrt()
    }

    pub fn zip_map(&self, other: &Self, f: impl Fn(f64, f64) -> f64) -> Result<Self> {
        self.check_compatible(other)?;
        let values = self.values.iter().zip(&other.values).map(|(a, b)| a.zip_map(b, &f)).collect();
        self.with_values(values)
    }

    pub fn map(&self, f: impl Fn(f64) -> f64) -> Self {
        self.with_values(self.values.iter().map(|v| v.map(&f)).collect()).expect("same shape")
    }

    /// `self + a * x`.
    pub fn axpy(&self, a: f64, x: &Self) -> Result<Self> {
        self.zip_map(x, |p, q| p + a * q)
    }

    pub fn sub(&self, other: &Self) -> Result<Self> {
        self.zip_map(other, |p, q| p - q)
    }

    pub fn scaled(&self, a: f64) -> Self {
        self.map(|x| a * x)
    }

    /// Componentwise clamp onto the box.
    pub fn project_box(&self) -> Self {
        let values = self
            .values
            .iter()
            .enumerate()
            .map(|(n, v)| {
                let d = v
                    .data()
                    .iter()
                    .enumerate()
                    .map(|(k, &x)| x.max(self.bounds.lower.at(n, k)).min(self.bounds.upper.at(n, k)))
                    .collect();
                VectorField::from_data(self.grid, d).expect("clamped values are finite")
            })
            .collect();
        self.with_values(values).expect("same shape")
    }

    pub fn is_admissible(&self) -> bool {
        self.values.iter().enumerate().all(|(n, v)| {
            v.data()
                .iter()
                .enumerate()
                .all(|(k, &x)| self.bounds.lower.at(n, k) <= x && x <= self.bounds.upper.at(n, k))
        })
    }

    /// Per-sample activity: `Some(true)` at the upper bound, `Some(false)`
    /// at the lower bound, `None` strictly inside (up to `tol`).
    pub(crate) fn active(&self, n: usize, k: usize, tol: f64) -> Option<bool> {
        let x = self.values[n].data()[k];
        if x >= self.bounds.upper.at(n, k) - tol {
            Some(true)
        } else if x <= self.bounds.lower.at(n, k) + tol {
            Some(false)
        } else {
            None
        }
    }
}

/// `project_box` as a free function.
pub fn project_box(w: &ControlField) -> ControlField {
    w.project_box()
}

/// `|| v - P(v - s g) ||` in the control norm.
pub fn kkt_residual(v: &ControlField, g: &ControlField, s: f64) -> Result<f64> {
    if !(s > 0.0) {
        return Err(Error::InvalidArgument(format!("step must be positive, got {s}")));
    }
    let trial = v.axpy(-s, g)?.project_box();
    Ok(v.sub(&trial)?.norm())
}
