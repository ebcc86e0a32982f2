//! TOML run configuration.
//!
//! Parsing collects every problem it finds instead of stopping at the
//! first one. Unknown keys are reported as warnings. See `presets/` for
//! annotated examples of every section.

use std::path::{Path, PathBuf};

use toml::{Table, Value};

use crate::error::{Error, Result};
use crate::forward::SolverConfig;
use crate::material::LinearViscosity;
use crate::nonlocal::{Kernel, KernelFamily};
use crate::optimize::OptimizerConfig;

pub const LAW_NAMES: [&str; 2] = ["log-degenerate", "constant-mobility-quartic"];
pub const INITIAL_PRESETS: [&str; 4] = ["stripe", "pure-phase", "random-seeded", "file"];

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GridSpec {
    pub nx: usize,
    pub ny: usize,
    pub lx: f64,
    pub ly: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct LawSpec {
    pub name: String,
    pub viscosity: LinearViscosity,
    /// Convexity constant of the quartic baseline.
    pub convexity: f64,
    /// Run even when the hypothesis validation fails.
    pub override_validation: bool,
}

#[derive(Debug, Clone, PartialEq)]
pub enum InitialSpec {
    /// `a tanh((y - ly/2 - w cos(2 pi x / lx + phase)) / width)`.
    Stripe {
        amplitude: f64,
        width: f64,
        wave: f64,
        phase: f64,
    },
    PurePhase {
        value: f64,
    },
    /// `mean + noise * U(-1, 1)` per cell, clipped to `[-1, 1]`, plus an
    /// optional projected random velocity.
    RandomSeeded {
        seed: u64,
        mean: f64,
        noise: f64,
        velocity: f64,
    },
    /// Last snapshot of a trajectory file.
    File {
        path: PathBuf,
    },
}

#[derive(Debug, Clone, PartialEq)]
pub enum TargetSpec {
    Zero,
    /// Uncontrolled run started from another initial condition.
    Reference(InitialSpec),
    /// Snapshots of a trajectory file.
    File(PathBuf),
}

#[derive(Debug, Clone, PartialEq)]
pub struct OptimizeSpec {
    pub lower: f64,
    pub upper: f64,
    pub beta: [f64; 4],
    pub gamma: f64,
    pub targets: TargetSpec,
    pub optimizer: OptimizerConfig,
    /// Start from this control file instead of zero.
    pub start: Option<PathBuf>,
}

#[derive(Debug, Clone, PartialEq)]
pub enum ControlSpec {
    Zero,
    File(PathBuf),
    Optimize(OptimizeSpec),
}

/// Parameters of `grad-check` and `lin-check`.
#[derive(Debug, Clone, PartialEq)]
pub struct CheckSpec {
    pub seed: u64,
    pub directions: usize,
    pub eps: f64,
    /// Amplitude of the random base control and directions.
    pub scale: f64,
    /// Largest accepted relative FD-vs-adjoint error.
    pub grad_tol: f64,
    pub taylor_eps: Vec<f64>,
    /// Largest accepted `r(eps_last) / r(eps_first)`.
    pub taylor_ratio: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct OutputSpec {
    pub dir: PathBuf,
    pub trajectory: String,
    pub diagnostics: String,
    pub history: String,
    pub control: String,
    /// Times at which phase-field plot dumps are written.
    pub plot_times: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct RunConfig {
    pub grid: GridSpec,
    pub solver: SolverConfig,
    pub kernel: Kernel,
    pub law: LawSpec,
    pub initial: InitialSpec,
    pub control: ControlSpec,
    pub check: CheckSpec,
    pub output: OutputSpec,
    /// Unknown keys and other non-fatal findings.
    pub warnings: Vec<String>,
}

/// Table reader that records which keys were consumed.
struct Section<'a> {
    path: String,
    table: Option<&'a Table>,
    used: Vec<String>,
}

struct Ctx {
    errors: Vec<String>,
    warnings: Vec<String>,
}

impl<'a> Section<'a> {
    fn new(path: &str, table: Option<&'a Table>) -> Self {
        Self {
            path: path.to_string(),
            table,
            used: Vec::new(),
        }
    }

    fn key(&self, k: &str) -> String {
        if self.path.is_empty() {
            k.to_string()
        } else {
            format!("{}.{k}", self.path)
        }
    }

    fn raw(&mut self, k: &str) -> Option<&'a Value> {
        self.used.push(k.to_string());
        self.table.and_then(|t| t.get(k))
    }

    fn sub(&mut self, ctx: &mut Ctx, k: &str) -> Section<'a> {
        let path = self.key(k);
        match self.raw(k) {
            None => Section::new(&path, None),
            Some(Value::Table(t)) => Section::new(&path, Some(t)),
            Some(_) => {
                ctx.errors.push(format!("{path} must be a table"));
                Section::new(&path, None)
            }
        }
    }

    fn f64(&mut self, ctx: &mut Ctx, k: &str, default: f64) -> f64 {
        match self.raw(k) {
            None => default,
            Some(Value::Float(x)) => *x,
            Some(Value::Integer(i)) => *i as f64,
            Some(_) => {
                ctx.errors.push(format!("{} must be a number", self.key(k)));
                default
            }
        }
    }

    fn opt_f64(&mut self, ctx: &mut Ctx, k: &str) -> Option<f64> {
        let present = self.table.is_some_and(|t| t.contains_key(k));
        let v = self.f64(ctx, k, f64::NAN);
        present.then_some(v)
    }

    fn uint(&mut self, ctx: &mut Ctx, k: &str, default: u64) -> u64 {
        match self.raw(k) {
            None => default,
            Some(Value::Integer(i)) if *i >= 0 => *i as u64,
            Some(_) => {
                ctx.errors.push(format!("{} must be a non-negative integer", self.key(k)));
                default
            }
        }
    }

    fn bool(&mut self, ctx: &mut Ctx, k: &str, default: bool) -> bool {
        match self.raw(k) {
            None => default,
            Some(Value::Boolean(b)) => *b,
            Some(_) => {
                ctx.errors.push(format!("{} must be true or false", self.key(k)));
                default
            }
        }
    }

    fn string(&mut self, ctx: &mut Ctx, k: &str, default: &str) -> String {
        match self.raw(k) {
            None => default.to_string(),
            Some(Value::String(s)) => s.clone(),
            Some(_) => {
                ctx.errors.push(format!("{} must be a string", self.key(k)));
                default.to_string()
            }
        }
    }

    fn f64_list(&mut self, ctx: &mut Ctx, k: &str, default: &[f64]) -> Vec<f64> {
        match self.raw(k) {
            None => default.to_vec(),
            Some(Value::Array(a)) => {
                let mut out = Vec::with_capacity(a.len());
                for v in a {
                    match v {
                        Value::Float(x) => out.push(*x),
                        Value::Integer(i) => out.push(*i as f64),
                        _ => {
                            ctx.errors.push(format!("{} must be a list of numbers", self.key(k)));
                            return default.to_vec();
                        }
                    }
                }
                out
            }
            Some(_) => {
                ctx.errors.push(format!("{} must be a list of numbers", self.key(k)));
                default.to_vec()
            }
        }
    }

    /// Warns about keys nobody asked for.
    fn finish(self, ctx: &mut Ctx) {
        if let Some(t) = self.table {
            for k in t.keys() {
                if !self.used.iter().any(|u| u == k) {
                    ctx.warnings.push(format!("unknown key {}", self.key(k)));
                }
            }
        }
    }
}

fn require(ctx: &mut Ctx, ok: bool, msg: impl FnOnce() -> String) {
    if !ok {
        ctx.errors.push(msg());
    }
}

fn positive(ctx: &mut Ctx, key: &str, x: f64) {
    require(ctx, x > 0.0 && x.is_finite(), || format!("{key} must be positive, got {x}"));
}

fn read_initial(ctx: &mut Ctx, mut s: Section<'_>, base: &Path) -> InitialSpec {
    let preset = s.string(ctx, "preset", "stripe");
    let key = s.key("preset");
    let spec = match preset.as_str() {
        "stripe" => {
            let amplitude = s.f64(ctx, "amplitude", 0.9);
            let width = s.f64(ctx, "width", 0.08);
            let wave = s.f64(ctx, "wave", 0.08);
            let phase = s.f64(ctx, "phase", 0.0);
            require(ctx, amplitude.abs() <= 1.0, || format!("{} must lie in [-1, 1]", s.key("amplitude")));
            positive(ctx, &s.key("width"), width);
            InitialSpec::Stripe {
                amplitude,
                width,
                wave,
                phase,
            }
        }
        "pure-phase" => {
            let value = s.f64(ctx, "value", 1.0);
            require(ctx, value == 1.0 || value == -1.0, || format!("{} must be 1 or -1", s.key("value")));
            InitialSpec::PurePhase { value }
        }
        "random-seeded" => {
            let seed = s.uint(ctx, "seed", 0);
            let mean = s.f64(ctx, "mean", 0.0);
            let noise = s.f64(ctx, "noise", 0.5);
            let velocity = s.f64(ctx, "velocity", 0.0);
            require(ctx, mean.abs() <= 1.0, || format!("{} must lie in [-1, 1]", s.key("mean")));
            require(ctx, noise >= 0.0, || format!("{} must be non-negative", s.key("noise")));
            require(ctx, velocity >= 0.0, || format!("{} must be non-negative", s.key("velocity")));
            InitialSpec::RandomSeeded {
                seed,
                mean,
                noise,
                velocity,
            }
        }
        "file" => {
            let p = s.string(ctx, "path", "");
            require(ctx, !p.is_empty(), || format!("{} is required for the file preset", s.key("path")));
            InitialSpec::File { path: base.join(p) }
        }
        other => {
            ctx.errors.push(format!(
                "{key}: unknown preset {other:?}, expected one of {}",
                INITIAL_PRESETS.join(", ")
            ));
            InitialSpec::PurePhase { value: 1.0 }
        }
    };
    s.finish(ctx);
    spec
}

fn read_kernel(ctx: &mut Ctx, mut s: Section<'_>) -> Kernel {
    let family = s.string(ctx, "family", "gaussian");
    let length = s.f64(ctx, "length", 0.1);
    let amplitude = s.f64(ctx, "amplitude", 1.0);
    let r_reg = s.opt_f64(ctx, "r_reg");
    let fam = KernelFamily::parse(&family).unwrap_or_else(|| {
        ctx.errors.push(format!(
            "{}: unknown kernel family {family:?}, expected one of {}",
            s.key("family"),
            KernelFamily::NAMES.join(", ")
        ));
        KernelFamily::Gaussian
    });
    positive(ctx, &s.key("length"), length);
    require(ctx, amplitude >= 0.0 && amplitude.is_finite(), || {
        format!("{} must be non-negative", s.key("amplitude"))
    });
    if let Some(r) = r_reg {
        require(ctx, r >= 0.0, || format!("{} must be non-negative", s.key("r_reg")));
    }
    s.finish(ctx);
    Kernel {
        family: fam,
        length,
        amplitude,
        r_reg,
    }
}

fn read_law(ctx: &mut Ctx, mut s: Section<'_>) -> LawSpec {
    let name = s.string(ctx, "name", "log-degenerate");
    let nu = s.f64(ctx, "viscosity", 1.0);
    let minus = s.opt_f64(ctx, "viscosity_minus").unwrap_or(nu);
    let plus = s.opt_f64(ctx, "viscosity_plus").unwrap_or(nu);
    let convexity = s.f64(ctx, "convexity", 1.0);
    let override_validation = s.bool(ctx, "override_validation", false);
    require(ctx, LAW_NAMES.contains(&name.as_str()), || {
        format!("{}: unknown law {name:?}, expected one of {}", s.key("name"), LAW_NAMES.join(", "))
    });
    positive(ctx, &s.key("viscosity_minus"), minus);
    positive(ctx, &s.key("viscosity_plus"), plus);
    s.finish(ctx);
    LawSpec {
        name,
        viscosity: LinearViscosity { minus, plus },
        convexity,
        override_validation,
    }
}

fn read_optimizer(ctx: &mut Ctx, mut s: Section<'_>, gamma: f64) -> OptimizerConfig {
    let d = OptimizerConfig::default();
    // 1/gamma turns the KKT residual into |v - P(-p/gamma)|
    let step = if gamma > 0.0 { 1.0 / gamma } else { d.initial_step };
    let opt = OptimizerConfig {
        max_iter: s.uint(ctx, "max_iter", d.max_iter as u64) as usize,
        initial_step: s.f64(ctx, "initial_step", step),
        sigma: s.f64(ctx, "sigma", d.sigma),
        backtrack: s.f64(ctx, "backtrack", d.backtrack),
        kkt_tol: s.f64(ctx, "kkt_tol", d.kkt_tol),
        max_trials: s.uint(ctx, "max_trials", d.max_trials as u64) as usize,
    };
    if let Err(Error::Config(errs)) = opt.validate() {
        ctx.errors.extend(errs.into_iter().map(|e| format!("{}: {e}", s.path)));
    }
    s.finish(ctx);
    opt
}

fn read_control(ctx: &mut Ctx, mut s: Section<'_>, base: &Path) -> ControlSpec {
    let mode = s.string(ctx, "mode", "zero");
    let spec = match mode.as_str() {
        "zero" => ControlSpec::Zero,
        "file" => {
            let p = s.string(ctx, "path", "");
            require(ctx, !p.is_empty(), || format!("{} is required when mode = \"file\"", s.key("path")));
            ControlSpec::File(base.join(p))
        }
        "optimize" => ControlSpec::Optimize(read_optimize(ctx, &mut s, base)),
        other => {
            ctx.errors.push(format!(
                "{}: unknown mode {other:?}, expected zero, file or optimize",
                s.key("mode")
            ));
            ControlSpec::Zero
        }
    };
    s.finish(ctx);
    spec
}

fn read_optimize(ctx: &mut Ctx, s: &mut Section<'_>, base: &Path) -> OptimizeSpec {
    let mut b = s.sub(ctx, "bounds");
    let lower = b.f64(ctx, "lower", f64::NEG_INFINITY);
    let upper = b.f64(ctx, "upper", f64::INFINITY);
    require(ctx, lower <= upper, || format!("{}: lower {lower} exceeds upper {upper}", b.path));
    if lower > 0.0 || upper < 0.0 {
        ctx.warnings.push(format!(
            "{}: the box excludes 0, so it may contain no divergence-free control",
            b.path
        ));
    }
    b.finish(ctx);

    let mut w = s.sub(ctx, "weights");
    let list = w.f64_list(ctx, "beta", &[0.0, 1.0, 0.0, 1.0]);
    let gamma = w.f64(ctx, "gamma", 1e-2);
    let mut beta = [0.0; 4];
    if list.len() == 4 {
        beta.copy_from_slice(&list);
    } else {
        ctx.errors.push(format!("{} must have 4 entries, got {}", w.key("beta"), list.len()));
    }
    require(ctx, beta.iter().chain([&gamma]).all(|x| *x >= 0.0 && x.is_finite()), || {
        format!("{}: beta and gamma must be finite and non-negative", w.path)
    });
    require(ctx, beta.iter().chain([&gamma]).any(|x| *x != 0.0), || {
        format!("{}: beta and gamma must not all vanish", w.path)
    });
    w.finish(ctx);

    let mut t = s.sub(ctx, "targets");
    let kind = t.string(ctx, "kind", "zero");
    let targets = match kind.as_str() {
        "zero" => TargetSpec::Zero,
        "reference" => {
            let init = t.sub(ctx, "initial");
            TargetSpec::Reference(read_initial(ctx, init, base))
        }
        "file" => {
            let p = t.string(ctx, "path", "");
            require(ctx, !p.is_empty(), || format!("{} is required when kind = \"file\"", t.key("path")));
            TargetSpec::File(base.join(p))
        }
        other => {
            ctx.errors.push(format!(
                "{}: unknown target kind {other:?}, expected zero, reference or file",
                t.key("kind")
            ));
            TargetSpec::Zero
        }
    };
    t.finish(ctx);

    let o = s.sub(ctx, "optimizer");
    let optimizer = read_optimizer(ctx, o, gamma);
    let start = match s.string(ctx, "start", "").as_str() {
        "" => None,
        p => Some(base.join(p)),
    };
    OptimizeSpec {
        lower,
        upper,
        beta,
        gamma,
        targets,
        optimizer,
        start,
    }
}

fn read_check(ctx: &mut Ctx, mut s: Section<'_>) -> CheckSpec {
    let c = CheckSpec {
        seed: s.uint(ctx, "seed", 0),
        directions: s.uint(ctx, "directions", 5) as usize,
        eps: s.f64(ctx, "eps", 1e-5),
        scale: s.f64(ctx, "scale", 1.0),
        grad_tol: s.f64(ctx, "grad_tol", 1e-6),
        taylor_eps: s.f64_list(ctx, "taylor_eps", &[1e-2, 1e-3, 1e-4]),
        taylor_ratio: s.f64(ctx, "taylor_ratio", 0.2),
    };
    require(ctx, c.directions > 0, || format!("{} must be positive", s.key("directions")));
    positive(ctx, &s.key("eps"), c.eps);
    positive(ctx, &s.key("scale"), c.scale);
    positive(ctx, &s.key("grad_tol"), c.grad_tol);
    positive(ctx, &s.key("taylor_ratio"), c.taylor_ratio);
    require(
        ctx,
        c.taylor_eps.len() >= 2 && c.taylor_eps.iter().all(|e| *e > 0.0) && c.taylor_eps.windows(2).all(|w| w[1] < w[0]),
        || format!("{} must hold at least two positive, decreasing values", s.key("taylor_eps")),
    );
    s.finish(ctx);
    c
}

fn read_output(ctx: &mut Ctx, mut s: Section<'_>, base: &Path) -> OutputSpec {
    let o = OutputSpec {
        dir: base.join(s.string(ctx, "dir", "out")),
        trajectory: s.string(ctx, "trajectory", "trajectory.nchs"),
        diagnostics: s.string(ctx, "diagnostics", "diagnostics.csv"),
        history: s.string(ctx, "history", "history.csv"),
        control: s.string(ctx, "control", "control.nchs"),
        plot_times: s.f64_list(ctx, "plot_times", &[]),
    };
    s.finish(ctx);
    o
}

fn read_solver(ctx: &mut Ctx, time: &mut Section<'_>, tol: &mut Section<'_>) -> SolverConfig {
    let dt = time.f64(ctx, "dt", f64::NAN);
    if time.table.is_none_or(|t| !t.contains_key("dt")) {
        ctx.errors.push("time.dt is required".into());
    }
    let steps = time.table.is_some_and(|t| t.contains_key("steps"));
    let t_final = if steps {
        let n = time.uint(ctx, "steps", 0);
        n as f64 * dt
    } else {
        time.f64(ctx, "t_final", f64::NAN)
    };
    if !steps && time.table.is_none_or(|t| !t.contains_key("t_final")) {
        ctx.errors.push("one of time.t_final or time.steps is required".into());
    }
    let d = SolverConfig::with_steps(1.0, 0).expect("defaults are valid");
    let cfg = SolverConfig {
        dt,
        t_final,
        tol_div: tol.f64(ctx, "div", d.tol_div),
        tol_bound: tol.f64(ctx, "bound", d.tol_bound),
        tol_poisson: tol.f64(ctx, "poisson", d.tol_poisson),
        tol_linear: tol.f64(ctx, "linear", d.tol_linear),
        cfl_safety: tol.f64(ctx, "cfl_safety", d.cfl_safety),
        max_linear_iter: tol.uint(ctx, "max_linear_iter", d.max_linear_iter as u64) as usize,
    };
    if !(dt > 0.0) {
        if !dt.is_nan() {
            ctx.errors.push(format!("time.dt must be positive, got {dt}"));
        }
    } else if !t_final.is_nan() {
        if let Err(e) = cfg.validate() {
            ctx.errors.push(format!("time/tolerances: {e}"));
        }
    }
    cfg
}

/// Parses a configuration. Relative paths are resolved against `base`.
pub fn parse_config_in(text: &str, base: &Path) -> Result<RunConfig> {
    let root: Table = text
        .parse()
        .map_err(|e: toml::de::Error| Error::Config(vec![format!("syntax error: {}", e.message().trim())]))?;
    let mut ctx = Ctx {
        errors: Vec::new(),
        warnings: Vec::new(),
    };
    let mut top = Section::new("", Some(&root));

    let mut g = top.sub(&mut ctx, "grid");
    let grid = GridSpec {
        nx: g.uint(&mut ctx, "nx", 32) as usize,
        ny: g.uint(&mut ctx, "ny", 32) as usize,
        lx: g.f64(&mut ctx, "lx", 1.0),
        ly: g.f64(&mut ctx, "ly", 1.0),
    };
    require(&mut ctx, grid.nx >= 4 && grid.ny >= 4, || "grid.nx and grid.ny must be at least 4".into());
    positive(&mut ctx, "grid.lx", grid.lx);
    positive(&mut ctx, "grid.ly", grid.ly);
    g.finish(&mut ctx);

    let mut time = top.sub(&mut ctx, "time");
    let mut tol = top.sub(&mut ctx, "tolerances");
    let solver = read_solver(&mut ctx, &mut time, &mut tol);
    time.finish(&mut ctx);
    tol.finish(&mut ctx);

    let k = top.sub(&mut ctx, "kernel");
    let kernel = read_kernel(&mut ctx, k);
    let l = top.sub(&mut ctx, "material");
    let law = read_law(&mut ctx, l);
    let i = top.sub(&mut ctx, "initial");
    let initial = read_initial(&mut ctx, i, base);
    let c = top.sub(&mut ctx, "control");
    let control = read_control(&mut ctx, c, base);
    let ch = top.sub(&mut ctx, "check");
    let check = read_check(&mut ctx, ch);
    let o = top.sub(&mut ctx, "output");
    let output = read_output(&mut ctx, o, base);
    top.finish(&mut ctx);

    if !ctx.errors.is_empty() {
        return Err(Error::Config(ctx.errors));
    }
    Ok(RunConfig {
        grid,
        solver,
        kernel,
        law,
        initial,
        control,
        check,
        output,
        warnings: ctx.warnings,
    })
}

/// [`parse_config_in`] with paths relative to the working directory.
pub fn parse_config(text: &str) -> Result<RunConfig> {
    parse_config_in(text, Path::new(""))
}

/// Reads a configuration file; relative paths resolve against its directory
/// and every referenced input file must exist.
pub fn load_config(path: &Path) -> Result<RunConfig> {
    let text = std::fs::read_to_string(path)
        .map_err(|e| std::io::Error::new(e.kind(), format!("{}: {e}", path.display())))?;
    let base = path.parent().unwrap_or(Path::new(""));
    let cfg = parse_config_in(&text, base)?;
    let missing: Vec<String> = cfg
        .input_files()
        .into_iter()
        .filter(|p| !p.exists())
        .map(|p| format!("referenced file {} does not exist", p.display()))
        .collect();
    if !missing.is_empty() {
        return Err(Error::Config(missing));
    }
    Ok(cfg)
}

impl RunConfig {
    /// Every file the run reads.
    pub fn input_files(&self) -> Vec<PathBuf> {
        let mut out = Vec::new();
        if let InitialSpec::File { path } = &self.initial {
            out.push(path.clone());
        }
        match &self.control {
            ControlSpec::File(p) => out.push(p.clone()),
            ControlSpec::Optimize(o) => {
                if let Some(p) = &o.start {
                    out.push(p.clone());
                }
                match &o.targets {
                    TargetSpec::File(p) => out.push(p.clone()),
                    TargetSpec::Reference(InitialSpec::File { path }) => out.push(path.clone()),
                    _ => {}
                }
            }
            ControlSpec::Zero => {}
        }
        out
    }

    pub fn optimize_spec(&self) -> Result<&OptimizeSpec> {
        match &self.control {
            ControlSpec::Optimize(o) => Ok(o),
            _ => Err(Error::Config(vec![
                "this command needs control.mode = \"optimize\" for the cost weights".into(),
            ])),
        }
    }

    pub fn output_path(&self, name: &str) -> PathBuf {
        self.output.dir.join(name)
    }
}

/// Annotated configuration of the stripe benchmark.
pub const STRIPE_PRESET: &str = include_str!("../../presets/stripe.toml");
/// Annotated configuration of the tracking benchmark.
pub const TRACKING_PRESET: &str = include_str!("../../presets/tracking.toml");

pub fn preset(name: &str) -> Option<&'static str> {
    match name {
        "stripe" => Some(STRIPE_PRESET),
        "tracking" => Some(TRACKING_PRESET),
        _ => None,
    }
}
