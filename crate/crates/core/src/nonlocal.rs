//! Interaction kernels and bounded-domain convolutions.
//!
//! All convolutions integrate over the domain only (zero extension), so
//! they are linear, not circular: each operator is evaluated with an FFT
//! on a padded lattice large enough that no wrap-around reaches the
//! sampled window.

use std::fmt;
use std::sync::Arc;

use num_complex::Complex64;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rustfft::{Fft, FftPlanner};

use crate::error::{Error, Result};
use crate::geometry::{Grid, ScalarField, VectorField};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum KernelFamily {
    /// `a exp(-r^2 / (2 l^2))`
    Gaussian,
    /// `a exp(-r / l)`
    ExpDecay,
    /// `-a ln(max(r, r_reg))`
    RegularizedNewtonian,
}

impl KernelFamily {
    pub const NAMES: [&'static str; 3] = ["gaussian", "exp-decay", "regularized-newtonian"];

    pub fn name(self) -> &'static str {
        match self {
            KernelFamily::Gaussian => "gaussian",
            KernelFamily::ExpDecay => "exp-decay",
            KernelFamily::RegularizedNewtonian => "regularized-newtonian",
        }
    }

    pub fn parse(s: &str) -> Option<Self> {
        match s {
            "gaussian" => Some(KernelFamily::Gaussian),
            "exp-decay" => Some(KernelFamily::ExpDecay),
            "regularized-newtonian" => Some(KernelFamily::RegularizedNewtonian),
            _ => None,
        }
    }
}

impl fmt::Display for KernelFamily {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

/// Radial interaction kernel `K(x) = K~(|x|)`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Kernel {
    pub family: KernelFamily,
    pub length: f64,
    pub amplitude: f64,
    /// Core regularization radius; `None` means half the grid spacing.
    pub r_reg: Option<f64>,
}

impl Kernel {
    pub fn gaussian(length: f64, amplitude: f64) -> Self {
        Self {
            family: KernelFamily::Gaussian,
            length,
            amplitude,
            r_reg: None,
        }
    }

    pub fn exp_decay(length: f64, amplitude: f64) -> Self {
        Self {
            family: KernelFamily::ExpDecay,
            length,
            amplitude,
            r_reg: None,
        }
    }

    pub fn regularized_newtonian(amplitude: f64, r_reg: Option<f64>) -> Self {
        Self {
            family: KernelFamily::RegularizedNewtonian,
            length: 1.0,
            amplitude,
            r_reg,
        }
    }

    /// The kernel that vanishes identically.
    pub fn zero() -> Self {
        Self::gaussian(1.0, 0.0)
    }

    fn core_radius(&self, grid: &Grid) -> f64 {
        self.r_reg.unwrap_or(0.5 * grid.hx.min(grid.hy))
    }

    /// Radial profile `K~(r)`.
    pub fn profile(&self, r: f64, r_reg: f64) -> f64 {
        let a = self.amplitude;
        match self.family {
            KernelFamily::Gaussian => a * (-r * r / (2.0 * self.length * self.length)).exp(),
            KernelFamily::ExpDecay => a * (-r / self.length).exp(),
            KernelFamily::RegularizedNewtonian => -a * r.max(r_reg).ln(),
        }
    }

    /// `K~'(r)`.
    pub fn profile_d1(&self, r: f64, r_reg: f64) -> f64 {
        let a = self.amplitude;
        match self.family {
            KernelFamily::Gaussian => {
                let l2 = self.length * self.length;
                -a * r / l2 * (-r * r / (2.0 * l2)).exp()
            }
            KernelFamily::ExpDecay => -a / self.length * (-r / self.length).exp(),
            KernelFamily::RegularizedNewtonian => {
                if r > r_reg {
                    -a / r
                } else {
                    0.0
                }
            }
        }
    }

    pub fn value(&self, x: f64, y: f64, r_reg: f64) -> f64 {
        self.profile(x.hypot(y), r_reg)
    }

    /// `grad K(x, y)`; zero at the origin.
    pub fn grad(&self, x: f64, y: f64, r_reg: f64) -> (f64, f64) {
        let r = x.hypot(y);
        if r == 0.0 {
            return (0.0, 0.0);
        }
        let d = self.profile_d1(r, r_reg) / r;
        (d * x, d * y)
    }
}

/// Kernel samples on an offset lattice, already multiplied by the cell
/// volume. Entry `[ty * width + tx]` belongs to the offset
/// `((tx - ox) * hx + sx, (ty - oy) * hy + sy)`.
#[derive(Debug, Clone, PartialEq)]
pub struct KernelTable {
    pub width: usize,
    pub height: usize,
    pub values: Vec<f64>,
}

impl KernelTable {
    pub fn at(&self, tx: usize, ty: usize) -> f64 {
        self.values[ty * self.width + tx]
    }
}

/// Discrete convolution `out[i, j] = sum_{k, l} T(i - k, j - l) in[k, l]`
/// between two lattices with a fixed offset table, evaluated by padded FFT.
struct ConvPlan {
    n_in: (usize, usize),
    n_out: (usize, usize),
    padded: (usize, usize),
    table: KernelTable,
    spectrum: Vec<Complex64>,
    fwd_x: Arc<dyn Fft<f64>>,
    fwd_y: Arc<dyn Fft<f64>>,
    inv_x: Arc<dyn Fft<f64>>,
    inv_y: Arc<dyn Fft<f64>>,
}

impl fmt::Debug for ConvPlan {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("ConvPlan")
            .field("n_in", &self.n_in)
            .field("n_out", &self.n_out)
            .field("padded", &self.padded)
            .finish()
    }
}

/// Half-offsets of one axis: the output site `i` sits at
/// `(2 i + out_shift) h / 2`, the input site `k` at `(2 k + in_shift) h / 2`.
#[derive(Clone, Copy)]
struct AxisLayout {
    n_in: usize,
    n_out: usize,
    in_shift: i64,
    out_shift: i64,
    h: f64,
}

impl AxisLayout {
    fn table_len(&self) -> usize {
        self.n_in + self.n_out - 1
    }
    /// Physical offset of table entry `t` (output minus input position).
    /// Computed from an integer number of half-spacings so that opposite
    /// offsets are exact negatives.
    fn offset(&self, t: usize) -> f64 {
        let d = t as i64 - (self.n_in as i64 - 1);
        (2 * d + self.out_shift - self.in_shift) as f64 * (0.5 * self.h)
    }
}

impl ConvPlan {
    fn new(
        planner: &mut FftPlanner<f64>,
        ax: AxisLayout,
        ay: AxisLayout,
        sample: impl Fn(f64, f64) -> f64,
        vol: f64,
    ) -> Result<Self> {
        let (w, h) = (ax.table_len(), ay.table_len());
        let mut values = Vec::with_capacity(w * h);
        for ty in 0..h {
            let y = ay.offset(ty);
            for tx in 0..w {
                let v = sample(ax.offset(tx), y) * vol;
                if !v.is_finite() {
                    return Err(Error::NonFinite(format!(
                        "kernel sample at offset ({}, {y}); singular core needs r_reg > 0",
                        ax.offset(tx)
                    )));
                }
                values.push(v);
            }
        }
        let table = KernelTable { width: w, height: h, values };
        let padded = (w, h);
        let fwd_x = planner.plan_fft_forward(padded.0);
        let fwd_y = planner.plan_fft_forward(padded.1);
        let inv_x = planner.plan_fft_inverse(padded.0);
        let inv_y = planner.plan_fft_inverse(padded.1);
        let mut plan = Self {
            n_in: (ax.n_in, ay.n_in),
            n_out: (ax.n_out, ay.n_out),
            padded,
            table,
            spectrum: Vec::new(),
            fwd_x,
            fwd_y,
            inv_x,
            inv_y,
        };
        let mut buf: Vec<Complex64> = plan.table.values.iter().map(|&v| Complex64::new(v, 0.0)).collect();
        plan.fft2(&mut buf, false);
        plan.spectrum = buf;
        Ok(plan)
    }

    fn fft2(&self, buf: &mut [Complex64], inverse: bool) {
        let (px, py) = self.padded;
        let (fx, fy) = if inverse {
            (&self.inv_x, &self.inv_y)
        } else {
            (&self.fwd_x, &self.fwd_y)
        };
        for row in buf.chunks_exact_mut(px) {
            fx.process(row);
        }
        let mut col = vec![Complex64::new(0.0, 0.0); py];
        for x in 0..px {
            for y in 0..py {
                col[y] = buf[y * px + x];
            }
            fy.process(&mut col);
            for y in 0..py {
                buf[y * px + x] = col[y];
            }
        }
    }

    fn apply(&self, input: &[f64]) -> Vec<f64> {
        let (px, py) = self.padded;
        let (nix, niy) = self.n_in;
        let (nox, noy) = self.n_out;
        let mut buf = vec![Complex64::new(0.0, 0.0); px * py];
        for y in 0..niy {
            for x in 0..nix {
                buf[y * px + x] = Complex64::new(input[y * nix + x], 0.0);
            }
        }
        self.fft2(&mut buf, false);
        for (b, s) in buf.iter_mut().zip(&self.spectrum) {
            *b *= s;
        }
        self.fft2(&mut buf, true);
        let norm = 1.0 / (px * py) as f64;
        let mut out = Vec::with_capacity(nox * noy);
        for y in 0..noy {
            for x in 0..nox {
                out.push(buf[(y + niy - 1) * px + (x + nix - 1)].re * norm);
            }
        }
        out
    }

    /// Direct `O(N^2)` evaluation with the same table.
    fn apply_direct(&self, input: &[f64]) -> Vec<f64> {
        let (nix, niy) = self.n_in;
        let (nox, noy) = self.n_out;
        let mut out = vec![0.0; nox * noy];
        for y in 0..noy {
            for x in 0..nox {
                let mut s = 0.0;
                for l in 0..niy {
                    for k in 0..nix {
                        let v = input[l * nix + k];
                        if v != 0.0 {
                            s += self.table.at(x + nix - 1 - k, y + niy - 1 - l) * v;
                        }
                    }
                }
                out[y * nox + x] = s;
            }
        }
        out
    }
}

/// Sampled kernel with FFT plans for every convolution the solver uses.
#[derive(Debug)]
pub struct DiscreteKernel {
    grid: Grid,
    kernel: Kernel,
    r_reg: f64,
    is_zero: bool,
    // cells -> cells
    k_cc: ConvPlan,
    gx_cc: ConvPlan,
    gy_cc: ConvPlan,
    // cells -> x-faces / y-faces
    gx_cf: ConvPlan,
    gy_cf: ConvPlan,
    // x-faces / y-faces -> cells
    gx_fc: ConvPlan,
    gy_fc: ConvPlan,
}

/// Which evaluation path a convolution uses.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ConvPath {
    Fft,
    Direct,
}

impl DiscreteKernel {
    /// Samples `K` and `grad K` at cell-center and face offsets.
    pub fn build(kernel: Kernel, grid: Grid) -> Result<Self> {
        let r_reg = kernel.core_radius(&grid);
        if !(kernel.length > 0.0) && kernel.family != KernelFamily::RegularizedNewtonian {
            return Err(Error::InvalidArgument(format!("kernel length {} must be positive", kernel.length)));
        }
        let vol = grid.cell_volume();
        let mut planner = FftPlanner::new();
        let (nx, ny, hx, hy) = (grid.nx, grid.ny, grid.hx, grid.hy);
        let axis = |n_in, n_out, in_shift, out_shift, h| AxisLayout { n_in, n_out, in_shift, out_shift, h };
        let (cx, cy) = (axis(nx, nx, 1, 1, hx), axis(ny, ny, 1, 1, hy));
        let k = move |x: f64, y: f64| kernel.value(x, y, r_reg);
        let gx = move |x: f64, y: f64| kernel.grad(x, y, r_reg).0;
        let gy = move |x: f64, y: f64| kernel.grad(x, y, r_reg).1;
        let k_cc = ConvPlan::new(&mut planner, cx, cy, k, vol)?;
        let gx_cc = ConvPlan::new(&mut planner, cx, cy, gx, vol)?;
        let gy_cc = ConvPlan::new(&mut planner, cx, cy, gy, vol)?;
        let gx_cf = ConvPlan::new(&mut planner, axis(nx, nx + 1, 1, 0, hx), cy, gx, vol)?;
        let gy_cf = ConvPlan::new(&mut planner, cx, axis(ny, ny + 1, 1, 0, hy), gy, vol)?;
        let gx_fc = ConvPlan::new(&mut planner, axis(nx + 1, nx, 0, 1, hx), cy, gx, vol)?;
        let gy_fc = ConvPlan::new(&mut planner, cx, axis(ny + 1, ny, 0, 1, hy), gy, vol)?;
        Ok(Self {
            grid,
            kernel,
            r_reg,
            is_zero: kernel.amplitude == 0.0,
            k_cc,
            gx_cc,
            gy_cc,
            gx_cf,
            gy_cf,
            gx_fc,
            gy_fc,
        })
    }

    pub fn grid(&self) -> &Grid {
        &self.grid
    }

    pub fn kernel(&self) -> &Kernel {
        &self.kernel
    }

    pub fn core_radius(&self) -> f64 {
        self.r_reg
    }

    /// `K` samples on the `(2nx-1) x (2ny-1)` cell-offset lattice times the
    /// cell volume; the center entry is offset `(0, 0)`.
    pub fn k_table(&self) -> &KernelTable {
        &self.k_cc.table
    }

    pub fn grad_tables(&self) -> (&KernelTable, &KernelTable) {
        (&self.gx_cc.table, &self.gy_cc.table)
    }

    /// Replaces the `K` table, e.g. to probe the self-adjointness check with
    /// a perturbed kernel.
    pub fn with_k_table(mut self, values: Vec<f64>) -> Result<Self> {
        if values.len() != self.k_cc.table.values.len() {
            return Err(Error::Shape("kernel table size".into()));
        }
        self.k_cc.table.values = values;
        let mut buf: Vec<Complex64> = self.k_cc.table.values.iter().map(|&v| Complex64::new(v, 0.0)).collect();
        self.k_cc.fft2(&mut buf, false);
        self.k_cc.spectrum = buf;
        self.is_zero = false;
        Ok(self)
    }

    fn check(&self, g: &Grid) -> Result<()> {
        self.grid.check_same(g)
    }

    fn run(&self, plan: &ConvPlan, input: &[f64], path: ConvPath) -> Vec<f64> {
        if self.is_zero {
            return vec![0.0; plan.n_out.0 * plan.n_out.1];
        }
        match path {
            ConvPath::Fft => plan.apply(input),
            ConvPath::Direct => plan.apply_direct(input),
        }
    }

    /// `(K * phi)(x_i) = sum_j K(x_i - x_j) phi_j hx hy`.
    pub fn conv_scalar(&self, phi: &ScalarField) -> Result<ScalarField> {
        self.conv_scalar_with(phi, ConvPath::Fft)
    }

    pub fn conv_scalar_with(&self, phi: &ScalarField, path: ConvPath) -> Result<ScalarField> {
        self.check(phi.grid())?;
        ScalarField::from_values(self.grid, self.run(&self.k_cc, phi.values(), path))
    }

    /// Normal components of `grad K * phi` sampled at the face centers
    /// (walls included).
    pub fn conv_grad(&self, phi: &ScalarField) -> Result<VectorField> {
        self.conv_grad_with(phi, ConvPath::Fft)
    }

    pub fn conv_grad_with(&self, phi: &ScalarField, path: ConvPath) -> Result<VectorField> {
        self.check(phi.grid())?;
        let x = self.run(&self.gx_cf, phi.values(), path);
        let y = self.run(&self.gy_cf, phi.values(), path);
        VectorField::from_components(self.grid, x, y)
    }

    /// Both components of `grad K * phi` at cell centers.
    pub fn conv_grad_centers(&self, phi: &ScalarField) -> Result<(ScalarField, ScalarField)> {
        self.check(phi.grid())?;
        Ok((
            ScalarField::from_values(self.grid, self.run(&self.gx_cc, phi.values(), ConvPath::Fft))?,
            ScalarField::from_values(self.grid, self.run(&self.gy_cc, phi.values(), ConvPath::Fft))?,
        ))
    }

    /// `(grad K .* w)(x_i) = sum_f grad K(x_i - y_f) . w_f hx hy`, with the
    /// face field integrated by face quadrature (each face carries the
    /// normal component it stores).
    ///
    /// With these face tables `<conv_grad_dot(w), chi> = -<w, conv_grad(chi)>`
    /// holds exactly up to roundoff, the discrete form of the odd symmetry of
    /// `grad K`.
    pub fn conv_grad_dot(&self, w: &VectorField) -> Result<ScalarField> {
        self.conv_grad_dot_with(w, ConvPath::Fft)
    }

    pub fn conv_grad_dot_with(&self, w: &VectorField, path: ConvPath) -> Result<ScalarField> {
        self.check(w.grid())?;
        let a = self.run(&self.gx_fc, w.x(), path);
        let b = self.run(&self.gy_fc, w.y(), path);
        ScalarField::from_values(self.grid, a.iter().zip(&b).map(|(p, q)| p + q).collect())
    }

    /// Transpose of the face-sampled [`conv_grad`](Self::conv_grad).
    pub(crate) fn conv_grad_transpose(&self, w: &VectorField) -> ScalarField {
        self.conv_grad_dot(w).expect("same grid").scaled(-1.0)
    }
}

/// Largest normalized defect `|<K*a, b> - <a, K*b>| / (|a| |b|)` over random
/// pairs.
pub fn self_adjointness_check(dk: &DiscreteKernel, trials: usize, seed: u64) -> Result<f64> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let g = *dk.grid();
    let mut worst = 0.0f64;
    for _ in 0..trials.max(1) {
        let a = random_field(g, &mut rng);
        let b = random_field(g, &mut rng);
        let lhs = dk.conv_scalar(&a)?.dot(&b);
        let rhs = a.dot(&dk.conv_scalar(&b)?);
        let scale = a.norm() * b.norm();
        if scale > 0.0 {
            worst = worst.max((lhs - rhs).abs() / scale);
        }
    }
    Ok(worst)
}

fn random_field(g: Grid, rng: &mut impl Rng) -> ScalarField {
    let v = (0..g.n_cells()).map(|_| rng.gen_range(-1.0..1.0)).collect();
    ScalarField::from_values(g, v).expect("finite")
}

/// Per-exponent estimate of `sup ||D(grad K * psi)||_p / ||psi||_p`.
#[derive(Debug, Clone, PartialEq)]
pub struct AdmissibilityEstimate {
    pub p: f64,
    pub constant: f64,
}

/// Lebesgue norm with quadrature weights.
fn lp_norm(g: &Grid, values: impl Iterator<Item = f64>, p: f64) -> f64 {
    let s: f64 = values.map(|v| v.abs().powf(p)).sum();
    (s * g.cell_volume()).powf(1.0 / p)
}

/// Central difference of a cell field along x (one-sided at the walls).
fn center_diff(g: &Grid, v: &[f64], along_x: bool) -> Vec<f64> {
    let mut out = vec![0.0; g.n_cells()];
    for j in 0..g.ny {
        for i in 0..g.nx {
            let (n, h, k) = if along_x { (g.nx, g.hx, i) } else { (g.ny, g.hy, j) };
            let at = |kk: usize| if along_x { v[g.cell(kk, j)] } else { v[g.cell(i, kk)] };
            out[g.cell(i, j)] = if k == 0 {
                (at(1) - at(0)) / h
            } else if k == n - 1 {
                (at(n - 1) - at(n - 2)) / h
            } else {
                (at(k + 1) - at(k - 1)) / (2.0 * h)
            };
        }
    }
    out
}

/// Empirical operator norms of `psi -> D(grad K * psi)` from `L^p` to
/// `L^p`, over a family of smooth random test fields.
///
/// The test fields are random combinations of low cosine modes defined in
/// physical coordinates, so estimates on different resolutions of the same
/// domain probe the same functions.
pub fn admissibility_probe(
    dk: &DiscreteKernel,
    p_list: &[f64],
    trials: usize,
    seed: u64,
) -> Result<Vec<AdmissibilityEstimate>> {
    let g = *dk.grid();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let modes = 4usize;
    let mut best = vec![0.0f64; p_list.len()];
    for _ in 0..trials.max(10) {
        let coef: Vec<f64> = (0..modes * modes).map(|_| rng.gen_range(-1.0..1.0)).collect();
        let psi = ScalarField::from_fn(g, |x, y| {
            let mut s = 0.0;
            for a in 0..modes {
                for b in 0..modes {
                    s += coef[a * modes + b]
                        * (std::f64::consts::PI * a as f64 * x / g.lx).cos()
                        * (std::f64::consts::PI * b as f64 * y / g.ly).cos();
                }
            }
            s
        });
        let (jx, jy) = dk.conv_grad_centers(&psi)?;
        let d = [
            center_diff(&g, jx.values(), true),
            center_diff(&g, jx.values(), false),
            center_diff(&g, jy.values(), true),
            center_diff(&g, jy.values(), false),
        ];
        let frob: Vec<f64> = (0..g.n_cells())
            .map(|c| d.iter().map(|a| a[c] * a[c]).sum::<f64>().sqrt())
            .collect();
        for (k, &p) in p_list.iter().enumerate() {
            let denom = lp_norm(&g, psi.values().iter().copied(), p);
            if denom > 0.0 {
                best[k] = best[k].max(lp_norm(&g, frob.iter().copied(), p) / denom);
            }
        }
    }
    Ok(p_list
        .iter()
        .zip(best)
        .map(|(&p, constant)| AdmissibilityEstimate { p, constant })
        .collect())
}

/// Admissibility estimates of one kernel on a sequence of grids, with a
/// stability verdict: the relative change between consecutive resolutions
/// must stay below `max_change` for every exponent.
#[derive(Debug, Clone)]
pub struct RefinementSweep {
    pub grids: Vec<Grid>,
    pub estimates: Vec<Vec<AdmissibilityEstimate>>,
    pub max_relative_change: f64,
    pub stable: bool,
}

pub fn admissibility_sweep(
    kernel: Kernel,
    grids: &[Grid],
    p_list: &[f64],
    trials: usize,
    seed: u64,
    max_change: f64,
) -> Result<RefinementSweep> {
    let mut estimates = Vec::new();
    for g in grids {
        let dk = DiscreteKernel::build(kernel, *g)?;
        estimates.push(admissibility_probe(&dk, p_list, trials, seed)?);
    }
    let mut worst = 0.0f64;
    for w in estimates.windows(2) {
        for (a, b) in w[0].iter().zip(&w[1]) {
            if a.constant > 0.0 {
                worst = worst.max((b.constant - a.constant).abs() / a.constant);
            }
        }
    }
    Ok(RefinementSweep {
        grids: grids.to_vec(),
        estimates,
        max_relative_change: worst,
        stable: worst <= max_change,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn grid() -> Grid {
        Grid::new(12, 9, 1.2, 0.9).unwrap()
    }

    fn gauss() -> Kernel {
        Kernel::gaussian(0.2, 1.0)
    }

    fn rand_scalar(g: Grid, seed: u64) -> ScalarField {
        random_field(g, &mut ChaCha8Rng::seed_from_u64(seed))
    }

    fn spike(g: Grid, i: usize, j: usize) -> ScalarField {
        let mut f = ScalarField::zeros(g);
        f.values_mut()[g.cell(i, j)] = 1.0;
        f
    }

    /// Direct quadrature of `sum_c K(x - x_c) phi_c hx hy` at an arbitrary point.
    fn direct_at(k: &Kernel, r_reg: f64, phi: &ScalarField, x: f64, y: f64, comp: usize) -> f64 {
        let g = *phi.grid();
        let mut s = 0.0;
        for j in 0..g.ny {
            for i in 0..g.nx {
                let (cx, cy) = g.cell_center(i, j);
                let v = match comp {
                    0 => k.value(x - cx, y - cy, r_reg),
                    1 => k.grad(x - cx, y - cy, r_reg).0,
                    _ => k.grad(x - cx, y - cy, r_reg).1,
                };
                s += v * phi.at(i, j);
            }
        }
        s * g.cell_volume()
    }

    #[test]
    fn tables_are_symmetric_and_peaked() {
        let g = grid();
        let dk = DiscreteKernel::build(gauss(), g).unwrap();
        let t = dk.k_table();
        assert_eq!((t.width, t.height), (2 * g.nx - 1, 2 * g.ny - 1));
        let n = t.values.len();
        let max = t.values.iter().cloned().fold(f64::MIN, f64::max);
        assert_eq!(t.at(g.nx - 1, g.ny - 1), max);
        for k in 0..n {
            assert_eq!(t.values[k], t.values[n - 1 - k]);
        }
        let (gx, gy) = dk.grad_tables();
        for k in 0..n {
            assert_eq!(gx.values[k], -gx.values[n - 1 - k]);
            assert_eq!(gy.values[k], -gy.values[n - 1 - k]);
        }
        let mut direct = 0.0;
        for dy in -(g.ny as i64 - 1)..g.ny as i64 {
            for dx in -(g.nx as i64 - 1)..g.nx as i64 {
                direct += gauss().value(dx as f64 * g.hx, dy as f64 * g.hy, 0.0) * g.cell_volume();
            }
        }
        let sum: f64 = t.values.iter().sum();
        assert!((sum - direct).abs() < 1e-13 * direct.abs().max(1.0));
    }

    #[test]
    fn conv_scalar_linear_and_matches_direct() {
        let g = grid();
        let dk = DiscreteKernel::build(gauss(), g).unwrap();
        assert_eq!(dk.conv_scalar(&ScalarField::zeros(g)).unwrap().max_abs(), 0.0);
        let (a, b) = (rand_scalar(g, 1), rand_scalar(g, 2));
        let lhs = dk.conv_scalar(&a.scaled(2.0).add(&b.scaled(-3.0))).unwrap();
        let rhs = dk.conv_scalar(&a).unwrap().scaled(2.0).add(&dk.conv_scalar(&b).unwrap().scaled(-3.0));
        assert!(lhs.sub(&rhs).max_abs() < 1e-12);

        let s = spike(g, 3, 4);
        let c = dk.conv_scalar(&s).unwrap();
        for j in 0..g.ny {
            for i in 0..g.nx {
                let (x, y) = g.cell_center(i, j);
                let d = direct_at(&gauss(), 0.0, &s, x, y, 0);
                assert!((c.at(i, j) - d).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn spike_responses_translate() {
        let g = Grid::new(16, 16, 1.0, 1.0).unwrap();
        let dk = DiscreteKernel::build(gauss(), g).unwrap();
        let a = dk.conv_scalar_with(&spike(g, 5, 6), ConvPath::Direct).unwrap();
        let b = dk.conv_scalar_with(&spike(g, 7, 9), ConvPath::Direct).unwrap();
        for j in 0..g.ny - 3 {
            for i in 0..g.nx - 2 {
                assert_eq!(a.at(i, j), b.at(i + 2, j + 3));
            }
        }
    }

    #[test]
    fn fft_matches_direct_sum() {
        for (nx, ny) in [(8, 8), (13, 7), (32, 32)] {
            let g = Grid::new(nx, ny, 1.0, 0.8).unwrap();
            for kernel in [gauss(), Kernel::exp_decay(0.3, 2.0), Kernel::regularized_newtonian(1.0, None)] {
                let dk = DiscreteKernel::build(kernel, g).unwrap();
                let phi = rand_scalar(g, 3);
                let w = VectorField::from_data(g, (0..g.n_faces()).map(|k| (k as f64 * 0.37).sin()).collect()).unwrap();
                let pairs = [
                    (dk.conv_scalar(&phi).unwrap().into_values(), dk.conv_scalar_with(&phi, ConvPath::Direct).unwrap().into_values()),
                    (dk.conv_grad(&phi).unwrap().into_data(), dk.conv_grad_with(&phi, ConvPath::Direct).unwrap().into_data()),
                    (dk.conv_grad_dot(&w).unwrap().into_values(), dk.conv_grad_dot_with(&w, ConvPath::Direct).unwrap().into_values()),
                ];
                for (f, d) in pairs {
                    let diff = f.iter().zip(&d).fold(0.0f64, |m, (a, b)| m.max((a - b).abs()));
                    assert!(diff <= 1e-11, "{kernel:?} {nx}x{ny}: {diff}");
                }
            }
        }
    }

    #[test]
    fn conv_grad_matches_direct_at_faces() {
        let g = grid();
        let k = Kernel::exp_decay(0.25, 1.5);
        let dk = DiscreteKernel::build(k, g).unwrap();
        for phi in [spike(g, 2, 7), ScalarField::constant(g, 1.0)] {
            let w = dk.conv_grad(&phi).unwrap();
            for j in 0..g.ny {
                for i in 0..=g.nx {
                    let (x, y) = g.xface_center(i, j);
                    assert!((w.data()[g.xface(i, j)] - direct_at(&k, 0.0, &phi, x, y, 1)).abs() < 1e-12);
                }
            }
            for j in 0..=g.ny {
                for i in 0..g.nx {
                    let (x, y) = g.yface_center(i, j);
                    assert!((w.data()[g.yface(i, j)] - direct_at(&k, 0.0, &phi, x, y, 2)).abs() < 1e-12);
                }
            }
        }
        let (cx, _) = dk.conv_grad_centers(&spike(g, 5, 5)).unwrap();
        let (x, y) = g.cell_center(8, 3);
        assert!((cx.at(8, 3) - direct_at(&k, 0.0, &spike(g, 5, 5), x, y, 1)).abs() < 1e-12);
    }

    #[test]
    fn conv_grad_of_symmetric_field_is_odd() {
        let g = Grid::new(14, 14, 1.0, 1.0).unwrap();
        let dk = DiscreteKernel::build(gauss(), g).unwrap();
        let phi = ScalarField::from_fn(g, |x, y| (-((x - 0.5).powi(2) + (y - 0.5).powi(2)) * 8.0).exp());
        let w = dk.conv_grad(&phi).unwrap();
        let d = w.data();
        for j in 0..g.ny {
            for i in 0..=g.nx {
                assert!((d[g.xface(i, j)] + d[g.xface(g.nx - i, g.ny - 1 - j)]).abs() < 1e-10);
            }
        }
        for j in 0..=g.ny {
            for i in 0..g.nx {
                assert!((d[g.yface(i, j)] + d[g.yface(g.nx - 1 - i, g.ny - j)]).abs() < 1e-10);
            }
        }
        assert_eq!(dk.conv_grad(&ScalarField::zeros(g)).unwrap().max_abs(), 0.0);
    }

    #[test]
    fn conv_grad_dot_is_minus_transpose() {
        let g = grid();
        let dk = DiscreteKernel::build(gauss(), g).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        assert_eq!(dk.conv_grad_dot(&VectorField::zeros(g)).unwrap().max_abs(), 0.0);
        for _ in 0..10 {
            let chi = random_field(g, &mut rng);
            let w = VectorField::from_data(g, (0..g.n_faces()).map(|_| rng.gen_range(-1.0..1.0)).collect()).unwrap();
            let lhs = dk.conv_grad_dot(&w).unwrap().dot(&chi);
            let rhs = w.dot(&dk.conv_grad(&chi).unwrap());
            assert!((lhs + rhs).abs() < 1e-11 * w.norm() * chi.norm());
        }
        // a single face value picks out one column of the face table
        let mut w = VectorField::zeros(g);
        w.data_mut()[g.xface(4, 2)] = 1.0;
        let c = dk.conv_grad_dot(&w).unwrap();
        let (fx, fy) = g.xface_center(4, 2);
        for j in 0..g.ny {
            for i in 0..g.nx {
                let (x, y) = g.cell_center(i, j);
                let expected = gauss().grad(x - fx, y - fy, 0.0).0 * g.cell_volume();
                assert!((c.at(i, j) - expected).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn self_adjointness() {
        let g = grid();
        let dk = DiscreteKernel::build(gauss(), g).unwrap();
        assert!(self_adjointness_check(&dk, 20, 1).unwrap() <= 1e-12);
        let zero = DiscreteKernel::build(Kernel::zero(), g).unwrap();
        assert_eq!(self_adjointness_check(&zero, 5, 1).unwrap(), 0.0);
        let mut t = dk.k_table().values.clone();
        let n = t.len();
        for (k, v) in t.iter_mut().enumerate().take(n / 2) {
            *v += 0.05 * (1.0 + (k % 7) as f64);
        }
        let skew = DiscreteKernel::build(gauss(), g).unwrap().with_k_table(t).unwrap();
        assert!(self_adjointness_check(&skew, 5, 1).unwrap() > 1e-3);
    }

    #[test]
    fn singular_core_is_rejected() {
        let g = grid();
        let err = DiscreteKernel::build(Kernel::regularized_newtonian(1.0, Some(0.0)), g).unwrap_err();
        assert!(matches!(err, Error::NonFinite(_)));
        assert!(DiscreteKernel::build(Kernel::regularized_newtonian(1.0, None), g).is_ok());
        assert!(DiscreteKernel::build(Kernel::gaussian(0.0, 1.0), g).is_err());
    }

    #[test]
    fn grid_mismatch_is_rejected() {
        let dk = DiscreteKernel::build(gauss(), grid()).unwrap();
        let other = Grid::unit_square(8).unwrap();
        assert!(dk.conv_scalar(&ScalarField::zeros(other)).is_err());
        assert!(dk.conv_grad_dot(&VectorField::zeros(other)).is_err());
    }

    #[test]
    fn admissibility_probe_behaviour() {
        let g = Grid::unit_square(16).unwrap();
        let zero = DiscreteKernel::build(Kernel::zero(), g).unwrap();
        for e in admissibility_probe(&zero, &[2.0, 4.0], 10, 1).unwrap() {
            assert_eq!(e.constant, 0.0);
        }
        let grids = [Grid::unit_square(16).unwrap(), Grid::unit_square(32).unwrap()];
        let sweep = admissibility_sweep(gauss(), &grids, &[2.0], 20, 7, 0.25).unwrap();
        assert!(sweep.stable, "{sweep:?}");

        let newton = DiscreteKernel::build(Kernel::regularized_newtonian(1.0, None), g).unwrap();
        let est = admissibility_probe(&newton, &[2.0, 4.0], 20, 3).unwrap();
        assert!(est.iter().all(|e| e.constant.is_finite() && e.constant > 0.0));
        let ratio = est[1].constant / est[0].constant;
        assert!((2.0 / 3.0..=6.0).contains(&ratio), "C4/C2 = {ratio}");
    }
}
