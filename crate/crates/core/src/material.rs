//! Constitutive laws: degenerate mobility, singular potential, viscosity and
//! the functions derived from them.
//!
//! The evolution only ever needs `m`, `lambda = m F''`, `B` and `nu`, all of
//! which extend continuously to the closed interval `[-1, 1]`. Singular
//! quantities (`F'`, `F''`, `F'''`, `M'`) are only used by diagnostics and
//! are evaluated at arguments clamped to `[-1 + delta, 1 - delta]`.

use crate::error::{Error, Result};
use crate::geometry::ScalarField;
use crate::nonlocal::DiscreteKernel;

/// Default clamp width for singular evaluations.
pub const DEFAULT_DELTA_EVAL: f64 = 1e-9;

/// A bundle of constitutive laws with analytic derivatives.
pub trait MaterialLaws: Send + Sync {
    fn name(&self) -> &str;

    fn mobility(&self, s: f64) -> f64;
    fn mobility_d1(&self, s: f64) -> f64;
    fn mobility_d2(&self, s: f64) -> f64;

    /// `F(s)`; may be absent when only the derived laws are known.
    fn potential(&self, _s: f64) -> Option<f64> {
        None
    }
    /// `F'(s)` on the open interval.
    fn potential_d1(&self, _s: f64) -> Option<f64> {
        None
    }
    fn potential_d2(&self, s: f64) -> f64;
    fn potential_d3(&self, s: f64) -> f64;

    fn lambda(&self, s: f64) -> f64;
    fn lambda_d1(&self, s: f64) -> f64;
    fn lambda_d2(&self, s: f64) -> f64;
    /// `B(s) = int_0^s lambda`.
    fn kirchhoff(&self, s: f64) -> f64;

    /// `M` with `m M'' = 1`, `M(0) = M'(0) = 0`.
    fn entropy(&self, s: f64) -> f64;
    fn entropy_d1(&self, s: f64) -> f64;

    fn viscosity(&self, s: f64) -> f64;
    fn viscosity_d1(&self, s: f64) -> f64;
    fn viscosity_d2(&self, s: f64) -> f64;

    /// Lower bound `alpha_0` of `lambda`.
    fn alpha0(&self) -> f64;
    /// Lower bound `c_0` of `F''`.
    fn c0(&self) -> f64;
    /// Lower bound `nu_1` of the viscosity.
    fn nu1(&self) -> f64;

    fn delta_eval(&self) -> f64 {
        DEFAULT_DELTA_EVAL
    }

    // Clamped evaluations used by the solver. Coefficients clamp to
    // [-1, 1]; their derivatives vanish outside so that tangents remain the
    // exact derivative of the clamped map.

    fn mobility_clamped(&self, s: f64) -> f64 {
        self.mobility(s.clamp(-1.0, 1.0))
    }
    fn mobility_d1_clamped(&self, s: f64) -> f64 {
        if s.abs() <= 1.0 {
            self.mobility_d1(s)
        } else {
            0.0
        }
    }
    fn lambda_clamped(&self, s: f64) -> f64 {
        self.lambda(s.clamp(-1.0, 1.0))
    }
    fn lambda_d1_clamped(&self, s: f64) -> f64 {
        if s.abs() <= 1.0 {
            self.lambda_d1(s)
        } else {
            0.0
        }
    }
    fn viscosity_clamped(&self, s: f64) -> f64 {
        self.viscosity(s.clamp(-1.0, 1.0))
    }
    fn viscosity_d1_clamped(&self, s: f64) -> f64 {
        if s.abs() <= 1.0 {
            self.viscosity_d1(s)
        } else {
            0.0
        }
    }
}

/// Viscosity law `nu(s)` interpolating linearly between the two pure phases.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LinearViscosity {
    /// Viscosity of the phase `s = -1`.
    pub minus: f64,
    /// Viscosity of the phase `s = +1`.
    pub plus: f64,
}

impl LinearViscosity {
    pub fn constant(nu: f64) -> Self {
        Self { minus: nu, plus: nu }
    }
    fn value(&self, s: f64) -> f64 {
        0.5 * (self.minus * (1.0 - s) + self.plus * (1.0 + s))
    }
    fn slope(&self) -> f64 {
        0.5 * (self.plus - self.minus)
    }
    fn lower(&self) -> f64 {
        self.minus.min(self.plus)
    }
}

#[inline]
fn xlogx(x: f64) -> f64 {
    if x == 0.0 {
        0.0
    } else {
        x * x.ln()
    }
}

/// `m(s) = 1 - s^2` with the logarithmic potential
/// `F(s) = (1+s) ln(1+s) + (1-s) ln(1-s)`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LogDegenerate {
    pub viscosity: LinearViscosity,
    pub delta_eval: f64,
}

impl LogDegenerate {
    pub fn new(viscosity: LinearViscosity) -> Self {
        Self {
            viscosity,
            delta_eval: DEFAULT_DELTA_EVAL,
        }
    }
}

/// The builtin degenerate-mobility / logarithmic-potential pair with unit
/// viscosity.
pub fn builtin_log_mobility() -> LogDegenerate {
    LogDegenerate::new(LinearViscosity::constant(1.0))
}

impl MaterialLaws for LogDegenerate {
    fn name(&self) -> &str {
        "log-degenerate"
    }
    fn mobility(&self, s: f64) -> f64 {
        1.0 - s * s
    }
    fn mobility_d1(&self, s: f64) -> f64 {
        -2.0 * s
    }
    fn mobility_d2(&self, _s: f64) -> f64 {
        -2.0
    }
    fn potential(&self, s: f64) -> Option<f64> {
        (s.abs() <= 1.0).then(|| xlogx(1.0 + s) + xlogx(1.0 - s))
    }
    fn potential_d1(&self, s: f64) -> Option<f64> {
        (s.abs() < 1.0).then(|| (1.0 + s).ln() - (1.0 - s).ln())
    }
    fn potential_d2(&self, s: f64) -> f64 {
        2.0 / (1.0 - s * s)
    }
    fn potential_d3(&self, s: f64) -> f64 {
        1.0 / ((1.0 - s) * (1.0 - s)) - 1.0 / ((1.0 + s) * (1.0 + s))
    }
    fn lambda(&self, _s: f64) -> f64 {
        2.0
    }
    fn lambda_d1(&self, _s: f64) -> f64 {
        0.0
    }
    fn lambda_d2(&self, _s: f64) -> f64 {
        0.0
    }
    fn kirchhoff(&self, s: f64) -> f64 {
        2.0 * s
    }
    fn entropy(&self, s: f64) -> f64 {
        // s artanh(s) + ln(1 - s^2) / 2, written so the pure phases are finite
        0.5 * (xlogx(1.0 + s) + xlogx(1.0 - s))
    }
    fn entropy_d1(&self, s: f64) -> f64 {
        s.atanh()
    }
    fn viscosity(&self, s: f64) -> f64 {
        self.viscosity.value(s)
    }
    fn viscosity_d1(&self, _s: f64) -> f64 {
        self.viscosity.slope()
    }
    fn viscosity_d2(&self, _s: f64) -> f64 {
        0.0
    }
    fn alpha0(&self) -> f64 {
        2.0
    }
    fn c0(&self) -> f64 {
        2.0
    }
    fn nu1(&self) -> f64 {
        self.viscosity.lower()
    }
    fn delta_eval(&self) -> f64 {
        self.delta_eval
    }
}

/// Regression baseline: constant mobility with a quartic double well plus
/// a convexifying quadratic, `F(s) = (s^2 - 1)^2 / 4 + c s^2 / 2`.
///
/// This pair violates the degeneracy hypothesis on the mobility and is only
/// usable with validation overridden.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ConstantMobilityQuartic {
    pub convexity: f64,
    pub viscosity: LinearViscosity,
}

impl ConstantMobilityQuartic {
    pub fn new(convexity: f64, viscosity: LinearViscosity) -> Self {
        Self { convexity, viscosity }
    }
}

impl MaterialLaws for ConstantMobilityQuartic {
    fn name(&self) -> &str {
        "constant-mobility-quartic"
    }
    fn mobility(&self, _s: f64) -> f64 {
        1.0
    }
    fn mobility_d1(&self, _s: f64) -> f64 {
        0.0
    }
    fn mobility_d2(&self, _s: f64) -> f64 {
        0.0
    }
    fn potential(&self, s: f64) -> Option<f64> {
        let w = s * s - 1.0;
        Some(0.25 * w * w + 0.5 * self.convexity * s * s)
    }
    fn potential_d1(&self, s: f64) -> Option<f64> {
        Some(s * s * s - s + self.convexity * s)
    }
    fn potential_d2(&self, s: f64) -> f64 {
        3.0 * s * s - 1.0 + self.convexity
    }
    fn potential_d3(&self, s: f64) -> f64 {
        6.0 * s
    }
    fn lambda(&self, s: f64) -> f64 {
        self.potential_d2(s)
    }
    fn lambda_d1(&self, s: f64) -> f64 {
        6.0 * s
    }
    fn lambda_d2(&self, _s: f64) -> f64 {
        6.0
    }
    fn kirchhoff(&self, s: f64) -> f64 {
        s * s * s + (self.convexity - 1.0) * s
    }
    fn entropy(&self, s: f64) -> f64 {
        0.5 * s * s
    }
    fn entropy_d1(&self, s: f64) -> f64 {
        s
    }
    fn viscosity(&self, s: f64) -> f64 {
        self.viscosity.value(s)
    }
    fn viscosity_d1(&self, _s: f64) -> f64 {
        self.viscosity.slope()
    }
    fn viscosity_d2(&self, _s: f64) -> f64 {
        0.0
    }
    fn alpha0(&self) -> f64 {
        self.convexity - 1.0
    }
    fn c0(&self) -> f64 {
        self.convexity - 1.0
    }
    fn nu1(&self) -> f64 {
        self.viscosity.lower()
    }
    // These coefficients do not degenerate, so clamping the state would
    // only hide out-of-range values.
    fn mobility_clamped(&self, s: f64) -> f64 {
        self.mobility(s)
    }
    fn lambda_clamped(&self, s: f64) -> f64 {
        self.lambda(s)
    }
    fn lambda_d1_clamped(&self, s: f64) -> f64 {
        self.lambda_d1(s)
    }
}

/// Names of the builtin law bundles addressable from configuration.
pub const BUILTIN_LAWS: [&str; 2] = ["log-degenerate", "constant-mobility-quartic"];

/// Selector for [`eval_clamped`].
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Law {
    Mobility,
    MobilityD1,
    MobilityD2,
    Potential,
    PotentialD1,
    PotentialD2,
    PotentialD3,
    Lambda,
    LambdaD1,
    LambdaD2,
    Kirchhoff,
    Entropy,
    EntropyD1,
    Viscosity,
    ViscosityD1,
    ViscosityD2,
}

impl Law {
    /// Laws that blow up at the pure phases.
    pub fn is_singular(self) -> bool {
        matches!(
            self,
            Law::PotentialD1 | Law::PotentialD2 | Law::PotentialD3 | Law::Entropy | Law::EntropyD1
        )
    }
}

/// Evaluates the selected law at `s` clamped to `[-1, 1]`, or to
/// `[-1 + delta, 1 - delta]` for the singular laws.
pub fn eval_clamped(laws: &dyn MaterialLaws, law: Law, s: f64) -> Result<f64> {
    if !s.is_finite() {
        return Err(Error::NonFinite(format!("law argument {s}")));
    }
    let bound = if law.is_singular() { 1.0 - laws.delta_eval() } else { 1.0 };
    let s = s.clamp(-bound, bound);
    let v = match law {
        Law::Mobility => laws.mobility(s),
        Law::MobilityD1 => laws.mobility_d1(s),
        Law::MobilityD2 => laws.mobility_d2(s),
        Law::Potential => laws.potential(s).ok_or(Error::MissingLaw("F"))?,
        Law::PotentialD1 => laws.potential_d1(s).ok_or(Error::MissingLaw("F'"))?,
        Law::PotentialD2 => laws.potential_d2(s),
        Law::PotentialD3 => laws.potential_d3(s),
        Law::Lambda => laws.lambda(s),
        Law::LambdaD1 => laws.lambda_d1(s),
        Law::LambdaD2 => laws.lambda_d2(s),
        Law::Kirchhoff => laws.kirchhoff(s),
        Law::Entropy => laws.entropy(s),
        Law::EntropyD1 => laws.entropy_d1(s),
        Law::Viscosity => laws.viscosity(s),
        Law::ViscosityD1 => laws.viscosity_d1(s),
        Law::ViscosityD2 => laws.viscosity_d2(s),
    };
    Ok(v)
}

/// Result of checking one hypothesis on sampled arguments.
#[derive(Debug, Clone, PartialEq)]
pub struct HypothesisCheck {
    pub name: &'static str,
    pub description: &'static str,
    pub passed: bool,
    /// Sample where the check is worst (or first violated).
    pub worst_sample: f64,
    /// Value of the checked quantity at `worst_sample`.
    pub worst_value: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ValidationReport {
    pub law_name: String,
    pub checks: Vec<HypothesisCheck>,
}

impl ValidationReport {
    pub fn all_passed(&self) -> bool {
        self.checks.iter().all(|c| c.passed)
    }

    pub fn check(&self, name: &str) -> Option<&HypothesisCheck> {
        self.checks.iter().find(|c| c.name == name)
    }
}

/// Validation options; `tail_width` is the `epsilon_0` of the monotone-tail
/// conditions.
#[derive(Debug, Clone, Copy)]
pub struct ValidationOptions {
    pub n_samples: usize,
    pub tail_width: f64,
}

impl Default for ValidationOptions {
    fn default() -> Self {
        Self {
            n_samples: 2001,
            tail_width: 0.1,
        }
    }
}

fn closed_samples(n: usize) -> Vec<f64> {
    (0..n).map(|k| -1.0 + 2.0 * k as f64 / (n - 1) as f64).collect()
}

fn open_samples(n: usize, delta: f64) -> Vec<f64> {
    let a = -1.0 + delta;
    let w = 2.0 * (1.0 - delta);
    (0..n).map(|k| a + w * k as f64 / (n - 1) as f64).collect()
}

/// Minimum of `f` over `samples`, as `(argmin, min)`.
fn sample_min(samples: &[f64], f: impl Fn(f64) -> f64) -> (f64, f64) {
    samples
        .iter()
        .map(|&s| (s, f(s)))
        .fold((f64::NAN, f64::INFINITY), |best, cur| if cur.1 < best.1 || cur.1.is_nan() { cur } else { best })
}

/// Checks the hypotheses on the laws by sampling. Never fails; each
/// hypothesis is reported with its worst offending sample.
pub fn validate(laws: &dyn MaterialLaws, opts: ValidationOptions) -> ValidationReport {
    let n = opts.n_samples.max(100);
    let delta = laws.delta_eval();
    let closed = closed_samples(n);
    let open = open_samples(n, delta);
    let interior: Vec<f64> = closed[1..n - 1].to_vec();
    let mut checks = Vec::new();

    // H1: m >= 0, m = 0 exactly at +-1, monotone tails.
    let mut h1 = HypothesisCheck {
        name: "H1",
        description: "m >= 0, m(s) = 0 iff s = +-1, monotone tails",
        passed: true,
        worst_sample: f64::NAN,
        worst_value: 0.0,
    };
    for s in [-1.0, 1.0] {
        let v = laws.mobility(s);
        if v != 0.0 && h1.passed {
            h1 = HypothesisCheck { passed: false, worst_sample: s, worst_value: v, ..h1 };
        }
    }
    let (s_min, m_min) = sample_min(&interior, |s| laws.mobility(s));
    if h1.passed {
        h1.worst_sample = s_min;
        h1.worst_value = m_min;
        if !(m_min > 0.0) {
            h1.passed = false;
        }
    }
    if h1.passed {
        let eps = opts.tail_width;
        let upper: Vec<f64> = closed.iter().copied().filter(|&s| s >= 1.0 - eps).collect();
        let lower: Vec<f64> = closed.iter().copied().filter(|&s| s <= -1.0 + eps).collect();
        let tail_ok = upper.windows(2).all(|w| laws.mobility(w[1]) <= laws.mobility(w[0]))
            && lower.windows(2).all(|w| laws.mobility(w[1]) >= laws.mobility(w[0]));
        if !tail_ok {
            h1.passed = false;
        }
    }
    checks.push(h1);

    // H3: F'' monotone on the tails.
    {
        let eps = opts.tail_width;
        let upper: Vec<f64> = open.iter().copied().filter(|&s| s >= 1.0 - eps).collect();
        let lower: Vec<f64> = open.iter().copied().filter(|&s| s <= -1.0 + eps).collect();
        let bad_up = upper
            .windows(2)
            .find(|w| laws.potential_d2(w[1]) < laws.potential_d2(w[0]));
        let bad_lo = lower
            .windows(2)
            .find(|w| laws.potential_d2(w[1]) > laws.potential_d2(w[0]));
        let bad = bad_up.or(bad_lo).map(|w| w[1]);
        checks.push(HypothesisCheck {
            name: "H3",
            description: "F'' nondecreasing towards the pure phases",
            passed: bad.is_none(),
            worst_sample: bad.unwrap_or(f64::NAN),
            worst_value: bad.map_or(0.0, |s| laws.potential_d2(s)),
        });
    }

    // H4: F'' >= c0 > 0.
    {
        let (s, v) = sample_min(&open, |s| laws.potential_d2(s));
        let c0 = laws.c0();
        checks.push(HypothesisCheck {
            name: "H4",
            description: "F''(s) >= c0 > 0",
            passed: c0 > 0.0 && v >= c0 * (1.0 - 1e-12),
            worst_sample: s,
            worst_value: v,
        });
    }

    // H5: lambda >= alpha0 > 0 on [-1, 1].
    {
        let (s, v) = sample_min(&closed, |s| laws.lambda(s));
        let a0 = laws.alpha0();
        checks.push(HypothesisCheck {
            name: "H5",
            description: "lambda(s) >= alpha0 > 0",
            passed: a0 > 0.0 && v >= a0 * (1.0 - 1e-12),
            worst_sample: s,
            worst_value: v,
        });
    }

    // lambda = m F'' on the open interval (H2).
    {
        let (s, v) = open
            .iter()
            .map(|&s| {
                let l = laws.lambda(s);
                (s, (laws.mobility(s) * laws.potential_d2(s) - l).abs() / l.abs().max(1.0))
            })
            .fold((f64::NAN, 0.0), |b, c| if c.1 > b.1 { c } else { b });
        checks.push(HypothesisCheck {
            name: "H2",
            description: "lambda = m F'' on (-1, 1)",
            passed: v <= 1e-8,
            worst_sample: s,
            worst_value: v,
        });
    }

    // (V): nu >= nu1 > 0.
    {
        let (s, v) = sample_min(&closed, |s| laws.viscosity(s));
        let nu1 = laws.nu1();
        checks.push(HypothesisCheck {
            name: "V",
            description: "nu(s) >= nu1 > 0",
            passed: nu1 > 0.0 && v >= nu1 * (1.0 - 1e-12),
            worst_sample: s,
            worst_value: v,
        });
    }

    ValidationReport {
        law_name: laws.name().to_string(),
        checks,
    }
}

/// Diagnostic chemical potential `F'(phi) - K * phi`, with `F'` evaluated at
/// the singular clamp.
pub fn chemical_potential(
    phi: &ScalarField,
    dk: &DiscreteKernel,
    laws: &dyn MaterialLaws,
) -> Result<ScalarField> {
    phi.grid().check_same(dk.grid())?;
    let conv = dk.conv_scalar(phi)?;
    let mut out = Vec::with_capacity(phi.values().len());
    for (&s, &k) in phi.values().iter().zip(conv.values()) {
        out.push(eval_clamped(laws, Law::PotentialD1, s)? - k);
    }
    ScalarField::from_values(*phi.grid(), out)
}

/// Admissibility of an initial phase field.
#[derive(Debug, Clone, PartialEq)]
pub struct InitialAdmissibility {
    pub admissible: bool,
    /// `max|phi0| - 1`, clipped below at 0.
    pub bound_excess: f64,
    /// Cell with the largest bound violation.
    pub worst_cell: Option<usize>,
    /// `sum F(phi0) hx hy`.
    pub potential_integral: f64,
    /// `sum M(phi0) hx hy`.
    pub entropy_integral: f64,
    /// Largest normal boundary flux `[grad B(phi0) - m(phi0) grad K*phi0] . n`.
    pub boundary_flux_residual: f64,
    pub messages: Vec<String>,
}

/// Checks `|phi0| <= 1`, integrability of `F(phi0)` and `M(phi0)`, and
/// reports the discrete residual of the no-flux compatibility condition.
///
/// The compatibility residual only produces a warning message; it never
/// makes the datum inadmissible.
pub fn initial_admissibility(
    phi0: &ScalarField,
    dk: &DiscreteKernel,
    laws: &dyn MaterialLaws,
) -> InitialAdmissibility {
    let g = *phi0.grid();
    let vol = g.cell_volume();
    let mut messages = Vec::new();
    let (worst_cell, max_abs) = phi0
        .values()
        .iter()
        .enumerate()
        .fold((None, 0.0f64), |(c, m), (k, v)| if v.abs() > m { (Some(k), v.abs()) } else { (c, m) });
    let bound_excess = (max_abs - 1.0).max(0.0);
    let mut admissible = phi0.is_finite();
    if bound_excess > 0.0 {
        admissible = false;
        messages.push(format!(
            "|phi0| exceeds 1 by {bound_excess:e} at cell {}",
            worst_cell.unwrap_or(0)
        ));
    }
    let mut potential_integral = 0.0;
    let mut entropy_integral = 0.0;
    if bound_excess == 0.0 {
        for &s in phi0.values() {
            // F and M extend continuously to the pure phases for the
            // admissible laws; evaluate them unclamped
            match laws.potential(s) {
                Some(f) => potential_integral += f * vol,
                None => {
                    if let Ok(f) = eval_clamped(laws, Law::Potential, s) {
                        potential_integral += f * vol;
                    }
                }
            }
            entropy_integral += laws.entropy(s) * vol;
        }
        if !potential_integral.is_finite() || !entropy_integral.is_finite() {
            admissible = false;
            messages.push("F(phi0) or M(phi0) is not integrable".to_string());
        }
    }

    let boundary_flux_residual = compatibility_residual(phi0, dk, laws);
    if boundary_flux_residual > 1e-6 {
        messages.push(format!(
            "no-flux compatibility residual {boundary_flux_residual:e} (warning only)"
        ));
    }
    InitialAdmissibility {
        admissible,
        bound_excess,
        worst_cell,
        potential_integral,
        entropy_integral,
        boundary_flux_residual,
        messages,
    }
}

/// One-sided normal difference of `B(phi0)` at the wall (the ghost-free
/// closure) minus the normal nonlocal flux at the wall faces.
fn compatibility_residual(phi0: &ScalarField, dk: &DiscreteKernel, laws: &dyn MaterialLaws) -> f64 {
    let g = *phi0.grid();
    let b = phi0.map(|s| laws.kirchhoff(s.clamp(-1.0, 1.0)));
    let Ok(j) = dk.conv_grad(phi0) else {
        return f64::NAN;
    };
    let jd = j.data();
    let m = |c: usize| laws.mobility_clamped(phi0.values()[c]);
    let bv = b.values();
    let mut worst = 0.0f64;
    for jj in 0..g.ny {
        // left wall, outward normal -x
        let (c0, c1) = (g.cell(0, jj), g.cell(1, jj));
        let db = (bv[c1] - bv[c0]) / g.hx;
        worst = worst.max((-(db - m(c0) * jd[g.xface(0, jj)])).abs());
        let (c0, c1) = (g.cell(g.nx - 1, jj), g.cell(g.nx - 2, jj));
        let db = (bv[c0] - bv[c1]) / g.hx;
        worst = worst.max((db - m(c0) * jd[g.xface(g.nx, jj)]).abs());
    }
    for ii in 0..g.nx {
        let (c0, c1) = (g.cell(ii, 0), g.cell(ii, 1));
        let db = (bv[c1] - bv[c0]) / g.hy;
        worst = worst.max((db - m(c0) * jd[g.yface(ii, 0)]).abs());
        let (c0, c1) = (g.cell(ii, g.ny - 1), g.cell(ii, g.ny - 2));
        let db = (bv[c0] - bv[c1]) / g.hy;
        worst = worst.max((db - m(c0) * jd[g.yface(ii, g.ny)]).abs());
    }
    worst
}
