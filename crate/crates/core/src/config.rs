//! Run configuration: a flat sectioned key-value text format with strict
//! validation (unknown keys rejected, duplicates reported with both line
//! numbers), environment-variable overrides, and canonical serialization.

use std::collections::BTreeMap;

use crate::error::{CoreError, Result};
use crate::grid::{
    build_activity_grid, build_theta_grid, build_velocity_quadrature, PhaseGrid, SpaceGrid,
};
use crate::kernels::KernelSet;
use crate::kinetic::{InitialProfile, KineticState};
use crate::moments::equilibrium_field;
use crate::params::{turning_ratio, DimensionalInputs, ModelParams};
use crate::sweep::SweepConfig;

/// Prefix for environment overrides: `CELLFLOW_<SECTION>_<KEY>`.
pub const ENV_PREFIX: &str = "CELLFLOW";

#[derive(Debug, Clone, PartialEq)]
pub struct GridConfig {
    pub n: usize,
    pub s: f64,
    pub x_cells: usize,
    pub box_length: f64,
    pub v_radial: usize,
    pub v_angular: usize,
    pub theta_count: usize,
    pub y_subdivision: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ParamsConfig {
    pub k1: f64,
    pub k_m1: f64,
    pub k2: f64,
    pub k_m2: f64,
    pub kappa: f64,
    pub r_l: f64,
    pub d_l: f64,
    pub alpha1: f64,
    pub psi_m: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct KernelsConfig {
    /// Exactly one of λ, β is given; the other follows from the
    /// compatibility relation. Specifying neither defaults λ to 1.
    pub lambda: Option<f64>,
    pub beta: Option<f64>,
    pub chi: f64,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum ScalingMode {
    Scaled,
    Dimensional,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ScalingConfig {
    pub mode: ScalingMode,
    pub eps: f64,
    pub a: f64,
    pub b: f64,
    pub d: f64,
    // Dimensional inputs (used when mode = dimensional).
    pub tau: f64,
    pub s2: f64,
    pub r0: f64,
    pub f_bar: f64,
    pub p_l: f64,
    pub p_h: f64,
    pub p_c: f64,
    pub g_bar: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct RunSection {
    pub t_final: f64,
    /// 0 means automatic CFL choice.
    pub dt: f64,
    pub initial: InitialProfile,
    pub rho_base: f64,
    pub rho_amp: f64,
    pub u0: f64,
    pub qbar0: f64,
    pub qbar_amp: f64,
    pub l0: f64,
    pub seed: u64,
    pub series_every: usize,
    pub snapshot_every: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SweepSection {
    pub eps_list: Vec<f64>,
    pub t_final: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct PicardSection {
    pub t0: f64,
    pub tol: f64,
    pub max_iter: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct OutputSection {
    pub dir: String,
}

/// Fully validated configuration.
#[derive(Debug, Clone, PartialEq)]
pub struct RunConfig {
    pub grid: GridConfig,
    pub params: ParamsConfig,
    pub kernels: KernelsConfig,
    pub scaling: ScalingConfig,
    pub run: RunSection,
    pub sweep: SweepSection,
    pub picard: PicardSection,
    pub output: OutputSection,
}

impl Default for RunConfig {
    fn default() -> Self {
        RunConfig {
            grid: GridConfig {
                n: 1,
                s: 0.5,
                x_cells: 64,
                box_length: 2.0,
                v_radial: 8,
                v_angular: 2,
                theta_count: 2,
                y_subdivision: 6,
            },
            params: ParamsConfig {
                k1: 1.0,
                k_m1: 1.0,
                k2: 1.0,
                k_m2: 1.0,
                kappa: 0.5,
                r_l: 0.1,
                d_l: 1.0,
                alpha1: 0.7,
                psi_m: 2.5,
            },
            kernels: KernelsConfig { lambda: None, beta: None, chi: 0.3 },
            scaling: ScalingConfig {
                mode: ScalingMode::Scaled,
                eps: 1.0,
                a: 0.5,
                b: 1.0,
                d: 1.0,
                tau: 10.0,
                s2: 0.2,
                r0: 1.0,
                f_bar: 1.0,
                p_l: 1.0,
                p_h: 0.1,
                p_c: 0.1,
                g_bar: 0.31622776601683794,
            },
            run: RunSection {
                t_final: 0.5,
                dt: 0.0,
                initial: InitialProfile::SineWave,
                rho_base: 1.0,
                rho_amp: 0.25,
                u0: 0.05,
                qbar0: 0.8,
                qbar_amp: 0.3,
                l0: 0.0,
                seed: 42,
                series_every: 10,
                snapshot_every: 0,
            },
            sweep: SweepSection { eps_list: vec![0.2, 0.1, 0.05, 0.025], t_final: 0.5 },
            picard: PicardSection { t0: 0.05, tol: 1e-6, max_iter: 25 },
            output: OutputSection { dir: "out".into() },
        }
    }
}

/// Known keys per section, used both for parsing and serialization order.
const SECTIONS: &[(&str, &[&str])] = &[
    ("grid", &["n", "s", "x_cells", "box_length", "v_radial", "v_angular", "theta_count", "y_subdivision"]),
    ("params", &["k1", "k_m1", "k2", "k_m2", "kappa", "r_l", "d_l", "alpha1", "psi_m"]),
    ("kernels", &["lambda", "beta", "chi"]),
    ("scaling", &["mode", "eps", "a", "b", "d", "tau", "s2", "r0", "f_bar", "p_l", "p_h", "p_c", "g_bar"]),
    (
        "run",
        &[
            "t_final", "dt", "initial", "rho_base", "rho_amp", "u0", "qbar0", "qbar_amp", "l0",
            "seed", "series_every", "snapshot_every",
        ],
    ),
    ("sweep", &["eps_list", "t_final"]),
    ("picard", &["t0", "tol", "max_iter"]),
    ("output", &["dir"]),
];

fn known_section(name: &str) -> Option<&'static [&'static str]> {
    SECTIONS.iter().find(|(s, _)| *s == name).map(|(_, keys)| *keys)
}

struct RawEntry {
    line: usize,
    value: String,
}

/// Tokenize the sectioned key-value text; comments start with '#'.
fn tokenize(text: &str) -> Result<BTreeMap<(String, String), RawEntry>> {
    let mut entries: BTreeMap<(String, String), RawEntry> = BTreeMap::new();
    let mut section: Option<String> = None;
    for (idx, raw_line) in text.lines().enumerate() {
        let line_no = idx + 1;
        let line = match raw_line.find('#') {
            Some(pos) => &raw_line[..pos],
            None => raw_line,
        }
        .trim();
        if line.is_empty() {
            continue;
        }
        if let Some(name) = line.strip_prefix('[') {
            let name = name.strip_suffix(']').ok_or(CoreError::Parse {
                line: line_no,
                msg: format!("malformed section header `{line}`"),
            })?;
            if known_section(name).is_none() {
                return Err(CoreError::Parse {
                    line: line_no,
                    msg: format!("unknown section `[{name}]`"),
                });
            }
            section = Some(name.to_string());
            continue;
        }
        let sec = section.clone().ok_or(CoreError::Parse {
            line: line_no,
            msg: "key-value pair before any [section] header".into(),
        })?;
        let (key, value) = line.split_once('=').ok_or(CoreError::Parse {
            line: line_no,
            msg: format!("expected `key = value`, got `{line}`"),
        })?;
        let key = key.trim().to_string();
        let value = value.trim().to_string();
        let keys = known_section(&sec).unwrap();
        if !keys.contains(&key.as_str()) {
            return Err(CoreError::Parse {
                line: line_no,
                msg: format!("unknown key `{key}` in section [{sec}]"),
            });
        }
        if let Some(prev) = entries.get(&(sec.clone(), key.clone())) {
            return Err(CoreError::Parse {
                line: line_no,
                msg: format!(
                    "duplicate key `{key}` in section [{sec}] (first defined at line {})",
                    prev.line
                ),
            });
        }
        entries.insert((sec, key), RawEntry { line: line_no, value });
    }
    Ok(entries)
}

struct Reader {
    entries: BTreeMap<(String, String), RawEntry>,
}

impl Reader {
    fn get(&self, sec: &str, key: &str) -> Option<&RawEntry> {
        self.entries.get(&(sec.to_string(), key.to_string()))
    }

    fn f64(&self, sec: &str, key: &str, default: f64) -> Result<f64> {
        match self.get(sec, key) {
            None => Ok(default),
            Some(e) => e.value.parse::<f64>().map_err(|_| CoreError::Parse {
                line: e.line,
                msg: format!("expected a real number for {sec}.{key}, got `{}`", e.value),
            }),
        }
    }

    fn usize(&self, sec: &str, key: &str, default: usize) -> Result<usize> {
        match self.get(sec, key) {
            None => Ok(default),
            Some(e) => e.value.parse::<usize>().map_err(|_| CoreError::Parse {
                line: e.line,
                msg: format!("expected a nonnegative integer for {sec}.{key}, got `{}`", e.value),
            }),
        }
    }

    fn u64(&self, sec: &str, key: &str, default: u64) -> Result<u64> {
        match self.get(sec, key) {
            None => Ok(default),
            Some(e) => e.value.parse::<u64>().map_err(|_| CoreError::Parse {
                line: e.line,
                msg: format!("expected an integer for {sec}.{key}, got `{}`", e.value),
            }),
        }
    }

    fn string(&self, sec: &str, key: &str, default: &str) -> String {
        self.get(sec, key).map(|e| e.value.clone()).unwrap_or_else(|| default.to_string())
    }

    fn f64_opt(&self, sec: &str, key: &str) -> Result<Option<f64>> {
        match self.get(sec, key) {
            None => Ok(None),
            Some(e) => e
                .value
                .parse::<f64>()
                .map(Some)
                .map_err(|_| CoreError::Parse {
                    line: e.line,
                    msg: format!("expected a real number for {sec}.{key}, got `{}`", e.value),
                }),
        }
    }

    fn f64_list(&self, sec: &str, key: &str, default: &[f64]) -> Result<Vec<f64>> {
        match self.get(sec, key) {
            None => Ok(default.to_vec()),
            Some(e) => e
                .value
                .split(',')
                .map(|tok| {
                    tok.trim().parse::<f64>().map_err(|_| CoreError::Parse {
                        line: e.line,
                        msg: format!("expected a comma-separated real list for {sec}.{key}"),
                    })
                })
                .collect(),
        }
    }
}

fn parse_profile(text: &str, line: usize) -> Result<InitialProfile> {
    match text {
        "uniform" => Ok(InitialProfile::Uniform),
        "gaussian" => Ok(InitialProfile::GaussianBump),
        "two-bumps" => Ok(InitialProfile::TwoBumps),
        "sine" => Ok(InitialProfile::SineWave),
        other => Err(CoreError::Parse {
            line,
            msg: format!(
                "unknown initial profile `{other}` (expected uniform | gaussian | two-bumps | sine)"
            ),
        }),
    }
}

fn profile_name(p: InitialProfile) -> &'static str {
    match p {
        InitialProfile::Uniform => "uniform",
        InitialProfile::GaussianBump => "gaussian",
        InitialProfile::TwoBumps => "two-bumps",
        InitialProfile::SineWave => "sine",
    }
}

/// Parse config text into a validated configuration.
pub fn parse_config(text: &str) -> Result<RunConfig> {
    let reader = Reader { entries: tokenize(text)? };
    let d = RunConfig::default();

    let grid = GridConfig {
        n: reader.usize("grid", "n", d.grid.n)?,
        s: reader.f64("grid", "s", d.grid.s)?,
        x_cells: reader.usize("grid", "x_cells", d.grid.x_cells)?,
        box_length: reader.f64("grid", "box_length", d.grid.box_length)?,
        v_radial: reader.usize("grid", "v_radial", d.grid.v_radial)?,
        v_angular: reader.usize("grid", "v_angular", d.grid.v_angular)?,
        theta_count: reader.usize("grid", "theta_count", d.grid.theta_count)?,
        y_subdivision: reader.usize("grid", "y_subdivision", d.grid.y_subdivision)?,
    };
    let params = ParamsConfig {
        k1: reader.f64("params", "k1", d.params.k1)?,
        k_m1: reader.f64("params", "k_m1", d.params.k_m1)?,
        k2: reader.f64("params", "k2", d.params.k2)?,
        k_m2: reader.f64("params", "k_m2", d.params.k_m2)?,
        kappa: reader.f64("params", "kappa", d.params.kappa)?,
        r_l: reader.f64("params", "r_l", d.params.r_l)?,
        d_l: reader.f64("params", "d_l", d.params.d_l)?,
        alpha1: reader.f64("params", "alpha1", d.params.alpha1)?,
        psi_m: reader.f64("params", "psi_m", d.params.psi_m)?,
    };
    let kernels = KernelsConfig {
        lambda: reader.f64_opt("kernels", "lambda")?,
        beta: reader.f64_opt("kernels", "beta")?,
        chi: reader.f64("kernels", "chi", d.kernels.chi)?,
    };
    let mode = match reader.string("scaling", "mode", "scaled").as_str() {
        "scaled" => ScalingMode::Scaled,
        "dimensional" => ScalingMode::Dimensional,
        other => {
            let line = reader.get("scaling", "mode").map(|e| e.line).unwrap_or(0);
            return Err(CoreError::Parse {
                line,
                msg: format!("unknown scaling mode `{other}` (expected scaled | dimensional)"),
            });
        }
    };
    let scaling = ScalingConfig {
        mode,
        eps: reader.f64("scaling", "eps", d.scaling.eps)?,
        a: reader.f64("scaling", "a", d.scaling.a)?,
        b: reader.f64("scaling", "b", d.scaling.b)?,
        d: reader.f64("scaling", "d", d.scaling.d)?,
        tau: reader.f64("scaling", "tau", d.scaling.tau)?,
        s2: reader.f64("scaling", "s2", d.scaling.s2)?,
        r0: reader.f64("scaling", "r0", d.scaling.r0)?,
        f_bar: reader.f64("scaling", "f_bar", d.scaling.f_bar)?,
        p_l: reader.f64("scaling", "p_l", d.scaling.p_l)?,
        p_h: reader.f64("scaling", "p_h", d.scaling.p_h)?,
        p_c: reader.f64("scaling", "p_c", d.scaling.p_c)?,
        g_bar: reader.f64("scaling", "g_bar", d.scaling.g_bar)?,
    };
    let initial = match reader.get("run", "initial") {
        Some(e) => parse_profile(&e.value, e.line)?,
        None => d.run.initial,
    };
    let run = RunSection {
        t_final: reader.f64("run", "t_final", d.run.t_final)?,
        dt: reader.f64("run", "dt", d.run.dt)?,
        initial,
        rho_base: reader.f64("run", "rho_base", d.run.rho_base)?,
        rho_amp: reader.f64("run", "rho_amp", d.run.rho_amp)?,
        u0: reader.f64("run", "u0", d.run.u0)?,
        qbar0: reader.f64("run", "qbar0", d.run.qbar0)?,
        qbar_amp: reader.f64("run", "qbar_amp", d.run.qbar_amp)?,
        l0: reader.f64("run", "l0", d.run.l0)?,
        seed: reader.u64("run", "seed", d.run.seed)?,
        series_every: reader.usize("run", "series_every", d.run.series_every)?,
        snapshot_every: reader.usize("run", "snapshot_every", d.run.snapshot_every)?,
    };
    let sweep = SweepSection {
        eps_list: reader.f64_list("sweep", "eps_list", &d.sweep.eps_list)?,
        t_final: reader.f64("sweep", "t_final", d.sweep.t_final)?,
    };
    let picard = PicardSection {
        t0: reader.f64("picard", "t0", d.picard.t0)?,
        tol: reader.f64("picard", "tol", d.picard.tol)?,
        max_iter: reader.usize("picard", "max_iter", d.picard.max_iter)?,
    };
    let output = OutputSection { dir: reader.string("output", "dir", &d.output.dir) };

    let cfg = RunConfig { grid, params, kernels, scaling, run, sweep, picard, output };
    cfg.validate()?;
    Ok(cfg)
}

/// Apply `CELLFLOW_<SECTION>_<KEY>` environment overrides on top of the text,
/// then parse. Section is matched greedily against the known section names.
pub fn parse_config_with_env(text: &str) -> Result<RunConfig> {
    let mut amended = String::from(text);
    for (section, keys) in SECTIONS {
        for key in *keys {
            let var = format!(
                "{}_{}_{}",
                ENV_PREFIX,
                section.to_uppercase(),
                key.to_uppercase()
            );
            if let Ok(value) = std::env::var(&var) {
                amended.push_str(&format!("\n[{section}]\n{key} = {value}\n"));
            }
        }
    }
    // Re-tokenize from scratch: later occurrences must override, so strip the
    // duplicate-rejection by rebuilding the text without the overridden keys.
    match parse_config(&amended) {
        Ok(cfg) => Ok(cfg),
        Err(CoreError::Parse { msg, .. }) if msg.starts_with("duplicate key") => {
            // An env var overrides a key also present in the file: rebuild the
            // file without those keys, then re-append the overrides.
            let mut filtered = String::new();
            let mut section = String::new();
            for line in text.lines() {
                let bare = line.split('#').next().unwrap_or("").trim();
                if bare.starts_with('[') {
                    section = bare.trim_matches(['[', ']']).to_string();
                    filtered.push_str(line);
                    filtered.push('\n');
                    continue;
                }
                if let Some((key, _)) = bare.split_once('=') {
                    let var = format!(
                        "{}_{}_{}",
                        ENV_PREFIX,
                        section.to_uppercase(),
                        key.trim().to_uppercase()
                    );
                    if std::env::var(&var).is_ok() {
                        continue; // dropped in favor of the override
                    }
                }
                filtered.push_str(line);
                filtered.push('\n');
            }
            for (section, keys) in SECTIONS {
                for key in *keys {
                    let var = format!(
                        "{}_{}_{}",
                        ENV_PREFIX,
                        section.to_uppercase(),
                        key.to_uppercase()
                    );
                    if let Ok(value) = std::env::var(&var) {
                        filtered.push_str(&format!("\n[{section}]\n{key} = {value}\n"));
                    }
                }
            }
            parse_config(&filtered)
        }
        Err(e) => Err(e),
    }
}

impl RunConfig {
    /// Constraint validation across sections.
    pub fn validate(&self) -> Result<()> {
        let g = &self.grid;
        if g.n != 1 && g.n != 2 {
            return Err(CoreError::Config(format!("grid.n must be 1 or 2, got {}", g.n)));
        }
        if !(0.0..1.0).contains(&g.s) {
            return Err(CoreError::Config(format!("grid.s must satisfy 0 <= s < 1, got {}", g.s)));
        }
        if g.x_cells < 2 || g.v_radial < 2 || g.y_subdivision < 1 {
            return Err(CoreError::Config("grid counts too small".into()));
        }
        let s = &self.scaling;
        if !(s.a > 0.0 && s.a < 1.0) {
            return Err(CoreError::Config(format!(
                "scaling.a must satisfy 0 < a < 1, got {}",
                s.a
            )));
        }
        if s.b < 1.0 || s.d < 1.0 {
            return Err(CoreError::Config(format!(
                "scaling exponents must satisfy b, d >= 1, got b = {}, d = {}",
                s.b, s.d
            )));
        }
        if s.eps <= 0.0 {
            return Err(CoreError::Config(format!("scaling.eps must be positive, got {}", s.eps)));
        }
        if let (Some(_), Some(_)) = (self.kernels.lambda, self.kernels.beta) {
            return Err(CoreError::Config(
                "give either kernels.lambda or kernels.beta; the other follows from the compatibility relation"
                    .into(),
            ));
        }
        if self.run.t_final <= 0.0 || self.sweep.t_final <= 0.0 || self.picard.t0 <= 0.0 {
            return Err(CoreError::Config("time horizons must be positive".into()));
        }
        if !(0.0..=1.0).contains(&self.params.alpha1) {
            return Err(CoreError::Config(format!(
                "params.alpha1 must lie in [0, 1], got {}",
                self.params.alpha1
            )));
        }
        // Full model-parameter validation (includes rates and the kernel tie).
        self.model_params()?.validate(g.n, g.s)?;
        Ok(())
    }

    /// Scaled model parameters implied by the configuration.
    pub fn model_params(&self) -> Result<ModelParams> {
        let ratio = turning_ratio(self.grid.n, self.grid.s);
        let (lambda, beta) = match (self.kernels.lambda, self.kernels.beta) {
            (Some(l), None) => (l, l * ratio),
            (None, Some(b)) => (b / ratio, b),
            (None, None) => (1.0, ratio),
            (Some(_), Some(_)) => unreachable!("rejected in validate"),
        };
        let mut p = ModelParams {
            k1: self.params.k1,
            km1: self.params.k_m1,
            k2: self.params.k2,
            km2: self.params.k_m2,
            kappa: self.params.kappa,
            r_l: self.params.r_l,
            d_l: self.params.d_l,
            alpha1: self.params.alpha1,
            alpha2: 1.0 - self.params.alpha1,
            lambda,
            beta,
            chi: self.kernels.chi,
            psi_m: self.params.psi_m,
            eps: self.scaling.eps,
            a: self.scaling.a,
            b: self.scaling.b,
            d: self.scaling.d,
        };
        if self.scaling.mode == ScalingMode::Dimensional {
            let din = DimensionalInputs {
                tau: self.scaling.tau,
                r_len: self.scaling.s2 * self.scaling.tau,
                s2: self.scaling.s2,
                r0: self.scaling.r0,
                f_bar: self.scaling.f_bar,
                p_l: self.scaling.p_l,
                p_h: self.scaling.p_h,
                p_c: self.scaling.p_c,
                g_bar: self.scaling.g_bar,
                kappa: self.params.kappa,
                r_l: self.params.r_l,
                d_l: self.scaling.s2 * self.scaling.s2 * self.scaling.tau,
                k1: self.params.k1,
                km1: self.params.k_m1,
                k2: self.params.k2,
                km2: self.params.k_m2,
            };
            let sp = crate::params::nondimensionalize(self.grid.n, &din)?;
            p.eps = sp.eps;
            p.a = sp.a;
            p.b = sp.b;
            p.d = sp.d;
            p.kappa = sp.kappa_hat;
            p.r_l = sp.r_l_hat;
            p.d_l = sp.d_l_hat;
            p.k1 = sp.k1_hat;
            p.km1 = sp.km1_hat;
            p.k2 = sp.k2_hat;
            p.km2 = sp.km2_hat;
        }
        Ok(p)
    }

    /// Build the full phase grid.
    pub fn build_grid(&self) -> Result<PhaseGrid> {
        let space = SpaceGrid::new(self.grid.n, self.grid.x_cells, self.grid.box_length)?;
        let vel = build_velocity_quadrature(self.grid.n, self.grid.s, self.grid.v_radial, self.grid.v_angular)?;
        let theta = build_theta_grid(self.grid.n, self.grid.theta_count)?;
        let act = build_activity_grid(self.grid.y_subdivision)?;
        PhaseGrid::new(space, vel, theta, act)
    }

    pub fn build_kernels(&self, grid: &PhaseGrid) -> Result<KernelSet> {
        KernelSet::build(&self.model_params()?, &grid.vel, &grid.theta)
    }

    /// Sweep settings with the run-section profile amplitudes.
    pub fn sweep_config(&self) -> SweepConfig {
        SweepConfig {
            eps_list: self.sweep.eps_list.clone(),
            t_final: self.sweep.t_final,
            rho_base: self.run.rho_base,
            rho_amp: self.run.rho_amp,
            u0: self.run.u0,
            qbar_base: self.run.qbar0,
            qbar_amp: self.run.qbar_amp,
        }
    }

    /// Initial kinetic state: well-prepared equilibrium on the configured
    /// density/velocity profile, isotropic fibers, constant chemoattractant.
    pub fn initial_state(&self, grid: &PhaseGrid, kernels: &KernelSet) -> Result<KineticState> {
        let nx = grid.space.total_cells();
        let len = grid.space.length;
        let mut rho = Vec::with_capacity(nx);
        let mut u = Vec::with_capacity(nx);
        let mut state = KineticState::zeros(grid);
        for ixf in 0..nx {
            let (ix, _) = grid.space.unflatten(ixf);
            let x = grid.space.center(ix);
            rho.push(crate::kinetic::profile_value(
                self.run.initial,
                self.run.rho_base,
                self.run.rho_amp,
                x,
                len,
            ));
            u.push([self.run.u0, 0.0]);
            let qbar = self.run.qbar0
                + self.run.qbar_amp * (2.0 * std::f64::consts::PI * x / len).cos();
            for it in 0..grid.theta.len() {
                state.q[[ixf, it]] = qbar / grid.theta.measure;
            }
            state.l[ixf] = self.run.l0;
        }
        state.f = equilibrium_field(&rho, &u, grid, kernels)?;
        Ok(state)
    }

    /// Canonical text form; parsing it reproduces the configuration.
    pub fn serialize(&self) -> String {
        let mut out = String::new();
        let g = &self.grid;
        out.push_str("[grid]\n");
        out.push_str(&format!("n = {}\n", g.n));
        out.push_str(&format!("s = {}\n", g.s));
        out.push_str(&format!("x_cells = {}\n", g.x_cells));
        out.push_str(&format!("box_length = {}\n", g.box_length));
        out.push_str(&format!("v_radial = {}\n", g.v_radial));
        out.push_str(&format!("v_angular = {}\n", g.v_angular));
        out.push_str(&format!("theta_count = {}\n", g.theta_count));
        out.push_str(&format!("y_subdivision = {}\n\n", g.y_subdivision));

        let p = &self.params;
        out.push_str("[params]\n");
        out.push_str(&format!("k1 = {}\n", p.k1));
        out.push_str(&format!("k_m1 = {}\n", p.k_m1));
        out.push_str(&format!("k2 = {}\n", p.k2));
        out.push_str(&format!("k_m2 = {}\n", p.k_m2));
        out.push_str(&format!("kappa = {}\n", p.kappa));
        out.push_str(&format!("r_l = {}\n", p.r_l));
        out.push_str(&format!("d_l = {}\n", p.d_l));
        out.push_str(&format!("alpha1 = {}\n", p.alpha1));
        out.push_str(&format!("psi_m = {}\n\n", p.psi_m));

        out.push_str("[kernels]\n");
        if let Some(l) = self.kernels.lambda {
            out.push_str(&format!("lambda = {}\n", l));
        }
        if let Some(b) = self.kernels.beta {
            out.push_str(&format!("beta = {}\n", b));
        }
        out.push_str(&format!("chi = {}\n\n", self.kernels.chi));

        let s = &self.scaling;
        out.push_str("[scaling]\n");
        out.push_str(&format!(
            "mode = {}\n",
            if s.mode == ScalingMode::Scaled { "scaled" } else { "dimensional" }
        ));
        out.push_str(&format!("eps = {}\n", s.eps));
        out.push_str(&format!("a = {}\n", s.a));
        out.push_str(&format!("b = {}\n", s.b));
        out.push_str(&format!("d = {}\n", s.d));
        out.push_str(&format!("tau = {}\n", s.tau));
        out.push_str(&format!("s2 = {}\n", s.s2));
        out.push_str(&format!("r0 = {}\n", s.r0));
        out.push_str(&format!("f_bar = {}\n", s.f_bar));
        out.push_str(&format!("p_l = {}\n", s.p_l));
        out.push_str(&format!("p_h = {}\n", s.p_h));
        out.push_str(&format!("p_c = {}\n", s.p_c));
        out.push_str(&format!("g_bar = {}\n\n", s.g_bar));

        let r = &self.run;
        out.push_str("[run]\n");
        out.push_str(&format!("t_final = {}\n", r.t_final));
        out.push_str(&format!("dt = {}\n", r.dt));
        out.push_str(&format!("initial = {}\n", profile_name(r.initial)));
        out.push_str(&format!("rho_base = {}\n", r.rho_base));
        out.push_str(&format!("rho_amp = {}\n", r.rho_amp));
        out.push_str(&format!("u0 = {}\n", r.u0));
        out.push_str(&format!("qbar0 = {}\n", r.qbar0));
        out.push_str(&format!("qbar_amp = {}\n", r.qbar_amp));
        out.push_str(&format!("l0 = {}\n", r.l0));
        out.push_str(&format!("seed = {}\n", r.seed));
        out.push_str(&format!("series_every = {}\n", r.series_every));
        out.push_str(&format!("snapshot_every = {}\n\n", r.snapshot_every));

        out.push_str("[sweep]\n");
        let list: Vec<String> = self.sweep.eps_list.iter().map(|e| e.to_string()).collect();
        out.push_str(&format!("eps_list = {}\n", list.join(", ")));
        out.push_str(&format!("t_final = {}\n\n", self.sweep.t_final));

        out.push_str("[picard]\n");
        out.push_str(&format!("t0 = {}\n", self.picard.t0));
        out.push_str(&format!("tol = {}\n", self.picard.tol));
        out.push_str(&format!("max_iter = {}\n\n", self.picard.max_iter));

        out.push_str("[output]\n");
        out.push_str(&format!("dir = {}\n", self.output.dir));
        out
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn minimal_config_fills_defaults() {
        let cfg = parse_config("[grid]\nn = 1\n").unwrap();
        assert_eq!(cfg.grid.x_cells, 64);
        assert_eq!(cfg.run.seed, 42);
    }

    #[test]
    fn bad_exponent_rejected_with_constraint() {
        let err = parse_config("[scaling]\na = 1.5\n").unwrap_err();
        let msg = err.to_string();
        assert!(msg.contains("0 < a < 1"), "{msg}");
    }

    #[test]
    fn duplicate_key_reports_both_lines() {
        let text = "[grid]\nn = 1\ns = 0.5\nn = 2\n";
        let err = parse_config(text).unwrap_err();
        let msg = err.to_string();
        assert!(msg.contains("line 4"), "{msg}");
        assert!(msg.contains("line 2"), "{msg}");
    }

    #[test]
    fn unknown_key_rejected() {
        let err = parse_config("[grid]\nbogus = 3\n").unwrap_err();
        assert!(err.to_string().contains("unknown key"));
        let err = parse_config("[nosuch]\nx = 1\n").unwrap_err();
        assert!(err.to_string().contains("unknown section"));
    }

    #[test]
    fn serialize_round_trip() {
        let mut cfg = RunConfig::default();
        cfg.grid.x_cells = 32;
        cfg.kernels.lambda = Some(2.0);
        cfg.run.initial = InitialProfile::TwoBumps;
        cfg.sweep.eps_list = vec![0.3, 0.15, 0.075];
        let text = cfg.serialize();
        let parsed = parse_config(&text).unwrap();
        assert_eq!(parsed, cfg);
    }

    #[test]
    fn lambda_and_beta_conflict() {
        let err = parse_config("[kernels]\nlambda = 1.0\nbeta = 2.0\n").unwrap_err();
        assert!(err.to_string().contains("either"));
    }

    #[test]
    fn model_params_derive_beta_from_lambda() {
        let cfg = parse_config("[kernels]\nlambda = 2.0\n").unwrap();
        let p = cfg.model_params().unwrap();
        assert!((p.beta - 2.0 * turning_ratio(1, 0.5)).abs() < 1e-14);
        // And the reverse direction.
        let cfg = parse_config("[kernels]\nbeta = 3.0\n").unwrap();
        let p = cfg.model_params().unwrap();
        assert!((p.lambda - 3.0 / turning_ratio(1, 0.5)).abs() < 1e-14);
    }

    #[test]
    fn env_override_applies() {
        // Serialized access to the process environment from one test only.
        std::env::set_var("CELLFLOW_GRID_X_CELLS", "16");
        let cfg = parse_config_with_env("[grid]\nx_cells = 64\n").unwrap();
        std::env::remove_var("CELLFLOW_GRID_X_CELLS");
        assert_eq!(cfg.grid.x_cells, 16);
    }

    #[test]
    fn builds_grid_and_state() {
        let cfg = RunConfig::default();
        let grid = cfg.build_grid().unwrap();
        let kernels = cfg.build_kernels(&grid).unwrap();
        let state = cfg.initial_state(&grid, &kernels).unwrap();
        assert!(state.total_mass(&grid) > 0.0);
    }
}
