//! Subcommand bodies. Each one writes its artifacts into the output directory
//! and finishes with a `run.json` manifest.

use std::path::{Path, PathBuf};
use std::time::Instant;

use ebara::closedloop::{
    reduce_closed_loop, simulate_dae, simulate_reduced, write_trajectory_csv, ClosedLoopSystem, ClosedLoopTransfer,
    InputSignal, TimeGrid, Trajectory,
};
use ebara::ekba::{ExtendedBasis, PairMode, SaddleOperator};
use ebara::mmio::{read_dense, write_dense};
use ebara::mor::{
    build_reduced, compare_on_grid, log_grid, write_sweep_csv, FullTransfer, ReducedForm, ReducedModel, SweepResult,
    TransferFunction,
};
use ebara::oracle::{build_projector, pencil_finite_spectrum, ThetaSystem};
use ebara::riccati::{ebara_solve, feedback_gain, write_residual_csv, EbaraOptions, FeedbackGain, RiccatiSolution};
use ebara::sysmodel::{generate_synthetic, load_system, write_system, GridSpec};
use ebara::{Complex64, DescriptorSystem, Execution, Stability, SyntheticSpec};
use nalgebra::DMatrix;
use serde_json::{json, Map, Value};

use crate::config::RunConfig;
use crate::CliError;

const DEFAULT_M: usize = 10;

/// Collects what ends up in `run.json`.
struct Manifest {
    command: &'static str,
    artifacts: Vec<String>,
    stats: Map<String, Value>,
    timings: Map<String, Value>,
    clock: Instant,
}

impl Manifest {
    fn new(command: &'static str) -> Self {
        Self {
            command,
            artifacts: Vec::new(),
            stats: Map::new(),
            timings: Map::new(),
            clock: Instant::now(),
        }
    }

    /// Records the time since the previous lap under `stage`.
    fn lap(&mut self, stage: &str) {
        self.timings
            .insert(stage.into(), json!(self.clock.elapsed().as_secs_f64()));
        self.clock = Instant::now();
    }

    fn stat(&mut self, key: &str, value: Value) {
        self.stats.insert(key.into(), value);
    }

    fn artifact(&mut self, path: &Path) {
        self.artifacts.push(path.display().to_string());
    }

    fn write(self, cfg: &RunConfig) -> Result<(), CliError> {
        let doc = json!({
            "command": self.command,
            "version": env!("CARGO_PKG_VERSION"),
            "config": cfg,
            "artifacts": self.artifacts,
            "stats": self.stats,
            "wall_time_secs": self.timings,
        });
        let text = serde_json::to_string_pretty(&doc).map_err(|e| CliError::Config(e.to_string()))?;
        std::fs::write(cfg.out_dir().join("run.json"), text + "\n")?;
        Ok(())
    }
}

pub fn run(command: &'static str, cfg: &RunConfig) -> Result<(), CliError> {
    let mut manifest = Manifest::new(command);
    let out = cfg.out_dir();
    match command {
        "gen" => gen(cfg, &out, &mut manifest)?,
        "reduce" => reduce(cfg, &out, &mut manifest)?,
        "bode" => bode(cfg, &out, &mut manifest)?,
        "riccati" => {
            riccati(cfg, &out, &mut manifest)?;
        }
        "stabilize" => stabilize(cfg, &out, &mut manifest)?,
        "simulate" => simulate(cfg, &out, &mut manifest)?,
        "verify" => verify(cfg, &mut manifest)?,
        other => return Err(CliError::Config(format!("unknown command {other}"))),
    }
    manifest.write(cfg)
}

fn execution(cfg: &RunConfig) -> Execution {
    if cfg.sequential == Some(true) {
        Execution::Sequential
    } else {
        Execution::Parallel
    }
}

fn form(cfg: &RunConfig) -> Result<ReducedForm, CliError> {
    match cfg.form.as_deref().unwrap_or("state-space") {
        "state-space" | "state_space" => Ok(ReducedForm::StateSpace),
        "generalized" => Ok(ReducedForm::Generalized),
        other => Err(CliError::Config(format!(
            "unknown form {other:?} (expected state-space or generalized)"
        ))),
    }
}

fn load(cfg: &RunConfig, manifest: &mut Manifest) -> Result<DescriptorSystem, CliError> {
    let sys = load_system(cfg.require_system()?)?;
    manifest.stat("n_v", json!(sys.n_v()));
    manifest.stat("n_p", json!(sys.n_p()));
    manifest.stat("n_b", json!(sys.n_b()));
    manifest.stat("n_c", json!(sys.n_c()));
    manifest.lap("load");
    Ok(sys)
}

fn gen(cfg: &RunConfig, out: &Path, manifest: &mut Manifest) -> Result<(), CliError> {
    let stability = match cfg.unstable.unwrap_or(0) {
        0 => Stability::Stable,
        count => Stability::Unstable {
            count,
            shift: cfg.shift.unwrap_or(0.5),
        },
    };
    let (n_b, n_c, seed) = (cfg.nb.unwrap_or(2), cfg.nc.unwrap_or(2), cfg.seed.unwrap_or(0));
    let spec = match cfg.grid {
        Some(cells) => SyntheticSpec::on_grid(
            GridSpec {
                cells,
                viscosity: cfg.viscosity.unwrap_or(1.0),
                convection: cfg.convection.unwrap_or(0.0),
            },
            n_b,
            n_c,
            stability,
            seed,
        ),
        None => SyntheticSpec::new(cfg.nv.unwrap_or(60), cfg.np.unwrap_or(8), n_b, n_c, stability, seed),
    };
    let sys = generate_synthetic(&spec)?;
    manifest.lap("generate");
    let path = write_system(&sys, out)?;
    manifest.artifact(&path);
    for name in ["M", "A", "G", "B", "C"] {
        manifest.artifact(&out.join(format!("{name}.mtx")));
    }
    manifest.stat("n_v", json!(sys.n_v()));
    manifest.stat("n_p", json!(sys.n_p()));
    manifest.lap("write");
    Ok(())
}

fn open_loop_model(
    sys: &DescriptorSystem,
    m: usize,
    form: ReducedForm,
    exec: Execution,
) -> Result<ReducedModel, CliError> {
    let op = SaddleOperator::new(sys, PairMode::ForwardPair, exec)?;
    let basis = ExtendedBasis::build(&op, PairMode::ForwardPair, m)?;
    Ok(build_reduced(&basis, sys, form, m.min(basis.usable_order()))?)
}

fn write_model(out: &Path, model: &ReducedModel, manifest: &mut Manifest) -> Result<(), CliError> {
    let mut put = |name: &str, mat: &DMatrix<f64>| -> Result<(), CliError> {
        let path = out.join(name);
        write_dense(&path, mat)?;
        manifest.artifact(&path);
        Ok(())
    };
    match model {
        ReducedModel::StateSpace { t, b, c } => {
            put("reduced_T.mtx", t)?;
            put("reduced_B.mtx", b)?;
            put("reduced_C.mtx", c)?;
        }
        ReducedModel::Generalized { m, a, b, c } => {
            put("reduced_M.mtx", m)?;
            put("reduced_A.mtx", a)?;
            put("reduced_B.mtx", b)?;
            put("reduced_C.mtx", c)?;
        }
    }
    Ok(())
}

fn reduce(cfg: &RunConfig, out: &Path, manifest: &mut Manifest) -> Result<(), CliError> {
    let sys = load(cfg, manifest)?;
    let model = open_loop_model(&sys, cfg.m.unwrap_or(DEFAULT_M), form(cfg)?, execution(cfg))?;
    manifest.stat("order", json!(model.order()));
    manifest.lap("reduce");
    write_model(out, &model, manifest)
}

fn record_sweep(out: &Path, name: &str, sweep: &SweepResult, manifest: &mut Manifest) -> Result<(), CliError> {
    let path = out.join(name);
    write_sweep_csv(&path, sweep)?;
    manifest.artifact(&path);
    manifest.stat("hinf_sample", json!(sweep.hinf_sample));
    manifest.stat("skipped_frequencies", json!(sweep.skipped));
    Ok(())
}

fn bode(cfg: &RunConfig, out: &Path, manifest: &mut Manifest) -> Result<(), CliError> {
    let sys = load(cfg, manifest)?;
    let exec = execution(cfg);
    let model = open_loop_model(&sys, cfg.m.unwrap_or(DEFAULT_M), form(cfg)?, exec)?;
    manifest.stat("order", json!(model.order()));
    manifest.lap("reduce");
    let full = FullTransfer::new(&sys)?;
    let grid = log_grid(cfg.omega_lo(), cfg.omega_hi(), cfg.points());
    let sweep = compare_on_grid(&full, &model, &grid, exec)?;
    manifest.lap("sweep");
    record_sweep(out, "bode.csv", &sweep, manifest)
}

fn ebara_options(cfg: &RunConfig) -> EbaraOptions {
    let d = EbaraOptions::default();
    EbaraOptions {
        tol: cfg.tol.unwrap_or(d.tol),
        dtol: cfg.dtol.unwrap_or(d.dtol),
        m_max: cfg.m_max.unwrap_or(d.m_max),
        check_every: cfg.check_every.unwrap_or(d.check_every),
        exec: execution(cfg),
    }
}

/// Runs EBARA, writes `residuals.csv`, `Z.mtx` and `K.mtx`, and fails unless converged.
fn riccati(cfg: &RunConfig, out: &Path, manifest: &mut Manifest) -> Result<(DescriptorSystem, FeedbackGain), CliError> {
    let sys = load(cfg, manifest)?;
    let sol: RiccatiSolution = ebara_solve(&sys, &ebara_options(cfg), None)?;
    manifest.lap("riccati");
    manifest.stat("iterations", json!(sol.iterations));
    manifest.stat("status", json!(format!("{:?}", sol.status)));
    manifest.stat("rank", json!(sol.rank()));
    manifest.stat("residuals", json!(sol.residual_history()));
    manifest.stat(
        "riccati_iteration_secs",
        json!(sol.records.iter().map(|r| r.elapsed_secs).collect::<Vec<_>>()),
    );
    let path = out.join("residuals.csv");
    write_residual_csv(&path, &sol)?;
    manifest.artifact(&path);
    let gain = feedback_gain(&sol.z, &sys);
    for (name, mat) in [("Z.mtx", &sol.z), ("K.mtx", &gain.matrix())] {
        let path = out.join(name);
        write_dense(&path, mat)?;
        manifest.artifact(&path);
    }
    manifest.lap("write");
    sol.require_converged()?;
    Ok((sys, gain))
}

fn stabilize(cfg: &RunConfig, out: &Path, manifest: &mut Manifest) -> Result<(), CliError> {
    let (sys, gain) = riccati(cfg, out, manifest)?;
    let exec = execution(cfg);
    let dense_gain = gain.matrix();
    let cl = ClosedLoopSystem::new(sys, gain, exec)?;
    manifest.lap("closed_loop");
    // The spectrum check is dense; skip it quietly above the oracle cap.
    if let Ok(spec) = pencil_finite_spectrum(cl.base(), Some(&dense_gain)) {
        let open = pencil_finite_spectrum(cl.base(), None)?;
        let max_re = |s: &[Complex64]| s.iter().map(|z| z.re).fold(f64::NEG_INFINITY, f64::max);
        manifest.stat("open_loop_max_real", json!(max_re(&open)));
        manifest.stat("closed_loop_max_real", json!(max_re(&spec)));
        manifest.lap("spectrum");
    }
    let (_, model) = reduce_closed_loop(&cl, cfg.m.unwrap_or(DEFAULT_M), form(cfg)?)?;
    manifest.stat("order", json!(model.order()));
    manifest.lap("reduce");
    let full = ClosedLoopTransfer::new(&cl)?;
    let grid = log_grid(cfg.omega_lo(), cfg.omega_hi(), cfg.points());
    let sweep = compare_on_grid(&full, &model, &grid, exec)?;
    manifest.lap("sweep");
    record_sweep(out, "closed_bode.csv", &sweep, manifest)
}

fn parse_input(spec: &str) -> Result<InputSignal, CliError> {
    let number = |s: &str| {
        s.trim()
            .parse::<f64>()
            .map_err(|_| CliError::Config(format!("bad number {s:?} in input {spec:?}")))
    };
    let parts: Vec<&str> = spec.split(':').collect();
    match parts.as_slice() {
        ["zero"] => Ok(InputSignal::Zero),
        ["const", v] => Ok(InputSignal::Constant(number(v)?)),
        ["step", at, v] => Ok(InputSignal::Step {
            at: number(at)?,
            value: number(v)?,
        }),
        _ => Ok(InputSignal::read_csv(&PathBuf::from(spec))?),
    }
}

fn read_gain(path: &Path, sys: &DescriptorSystem) -> Result<FeedbackGain, CliError> {
    let k = read_dense(path)?;
    if k.shape() != (sys.n_b(), sys.n_v()) {
        return Err(ebara::Error::DimensionMismatch(format!(
            "gain {} is {}×{}, system needs {}×{}",
            path.display(),
            k.nrows(),
            k.ncols(),
            sys.n_b(),
            sys.n_v()
        ))
        .into());
    }
    Ok(FeedbackGain {
        left: DMatrix::identity(sys.n_b(), sys.n_b()),
        right: k,
    })
}

fn write_traj(out: &Path, name: &str, traj: &Trajectory, manifest: &mut Manifest) -> Result<(), CliError> {
    let path = out.join(name);
    write_trajectory_csv(&path, traj)?;
    manifest.artifact(&path);
    Ok(())
}

fn simulate(cfg: &RunConfig, out: &Path, manifest: &mut Manifest) -> Result<(), CliError> {
    let sys = load(cfg, manifest)?;
    let exec = execution(cfg);
    let gain = cfg.gain.as_deref().map(|p| read_gain(p, &sys)).transpose()?;
    let input = parse_input(cfg.input.as_deref().unwrap_or("const:1"))?;
    let grid = TimeGrid::new(cfg.h.unwrap_or(0.01), cfg.horizon.unwrap_or(10.0))?;
    let traj = simulate_dae(&sys, gain.as_ref(), &input, grid, None)?;
    manifest.lap("simulate");
    manifest.stat("steps", json!(grid.steps()));
    manifest.stat("cost", json!(traj.cost));
    manifest.stat("constraint_violation", json!(traj.constraint_violation));
    write_traj(out, "trajectory.csv", &traj, manifest)?;

    let Some(m) = cfg.m else { return Ok(()) };
    let model = match gain {
        Some(gain) => reduce_closed_loop(&ClosedLoopSystem::new(sys, gain, exec)?, m, ReducedForm::StateSpace)?.1,
        None => open_loop_model(&sys, m, ReducedForm::StateSpace, exec)?,
    };
    manifest.lap("reduce");
    let reduced = simulate_reduced(&model, &input, grid)?;
    manifest.lap("simulate_reduced");
    let err = (&traj.outputs - &reduced.outputs)
        .row_iter()
        .map(|r| r.norm())
        .fold(0.0, f64::max);
    manifest.stat("order", json!(model.order()));
    manifest.stat("max_output_error", json!(err));
    write_traj(out, "reduced_trajectory.csv", &reduced, manifest)
}

/// Dense cross-checks on a bundle small enough for the oracle.
fn verify(cfg: &RunConfig, manifest: &mut Manifest) -> Result<(), CliError> {
    let sys = load(cfg, manifest)?;
    let proj = build_projector(&sys)?;
    let errors = proj.identity_errors(&sys.m().to_dense(), &sys.g().to_dense());
    let theta = ThetaSystem::new(&sys, &proj);
    let full = FullTransfer::new(&sys)?;
    let mut tf_err: f64 = 0.0;
    for s in [
        Complex64::new(0.0, 1.0),
        Complex64::new(0.5, -3.0),
        Complex64::new(2.0, 10.0),
    ] {
        let (f, o) = (full.eval(s)?, theta.transfer(s)?);
        tf_err = tf_err.max((&f - &o).norm() / o.norm().max(1.0));
    }
    manifest.lap("verify");
    let checks = [
        ("projector_identities", errors.max(), 1e-9),
        ("transfer_identity", tf_err, 1e-8),
    ];
    let report: Vec<Value> = checks
        .iter()
        .map(|&(name, value, tol)| json!({ "check": name, "value": value, "tol": tol, "pass": value <= tol }))
        .collect();
    println!(
        "{}",
        serde_json::to_string(&report).map_err(|e| CliError::Config(e.to_string()))?
    );
    manifest.stat("checks", json!(report));
    match checks.iter().find(|c| !(c.1 <= c.2)) {
        Some((name, value, tol)) => Err(CliError::Verification(format!("{name}: {value:e} > {tol:e}"))),
        None => Ok(()),
    }
}
