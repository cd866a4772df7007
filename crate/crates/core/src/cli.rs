//! Batch driver behind the `igabem` binary: reads a JSON run configuration,
//! runs one experiment and writes CSV results plus a JSON manifest.

use std::fs::{self, File};
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};
use std::sync::Arc;
use std::time::Instant;

use num_complex::Complex64;
use serde::{Deserialize, Serialize};

use crate::analytic::{ExactField, MfsSolution, RigidSphere, SineProductField};
use crate::assembly::{
    assemble_many, best_approximation, incident_direction, solve, AssemblyJob, BieFormulation,
    BoundaryCondition, Discretization,
};
use crate::error::{Error, Result};
use crate::geometry::GeometrySpec;
use crate::kernels::{Domain, SPEED_OF_SOUND};
use crate::nurbs::SurfaceMesh;
use crate::postprocess::{
    direction, far_field, h_max, l2_surface_error, num, observed_order, target_strength,
    write_error_csv, ErrorRow, FarFieldSweep, Traces,
};
use crate::quadrature::{QuadConfig, Scheme};
use crate::vec3::{v3, Vec3};

/// Environment variable that overrides the configured output directory.
pub const OUT_DIR_ENV: &str = "IGABEM_OUT_DIR";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MeshConfig {
    /// Mesh level; 1 is the coarsest exact parametrization.
    pub refinements: usize,
    /// Degree after elevation; defaults to the geometry's own degree.
    #[serde(default)]
    pub degree: Option<usize>,
    /// Continuity across inserted knots; defaults to `degree - 1`.
    #[serde(default)]
    pub continuity: Option<usize>,
}

/// Boundary data of the problem.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum ProblemSpec {
    /// Sound-hard scatterer under the plane wave given in `physics`.
    RigidPlaneWave,
    /// Neumann data of a point source at the origin.
    PulsatingSphere,
    /// Neumann data of a point-source superposition.
    Mfs { layout: MfsLayout },
    /// Interior problem with `sin(k x1/√3) sin(k x2/√3) sin(k x3/√3)`.
    TorusSine,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum MfsLayout {
    /// 27 sources at `a/4 (c_i, c_j, c_l)`.
    Cube {
        a: f64,
    },
    Line {
        start: f64,
        end: f64,
        n: usize,
    },
    Points {
        sources: Vec<[f64; 3]>,
    },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Physics {
    #[serde(default)]
    pub frequencies: Option<Vec<f64>>,
    #[serde(default)]
    pub k: Option<Vec<f64>>,
    #[serde(default = "default_c_f")]
    pub c_f: f64,
    #[serde(default = "default_p_inc")]
    pub p_inc: Complex64,
    /// Incident azimuth (degrees).
    #[serde(default)]
    pub alpha_s: f64,
    /// Incident elevation (degrees).
    #[serde(default)]
    pub beta_s: f64,
}

fn default_c_f() -> f64 {
    SPEED_OF_SOUND
}

fn default_p_inc() -> Complex64 {
    Complex64::new(1.0, 0.0)
}

/// Azimuth grid `start, start + step, …` up to `end` inclusive (degrees).
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AngleGrid {
    pub start: f64,
    pub end: f64,
    pub step: f64,
}

impl AngleGrid {
    pub fn values(&self) -> Result<Vec<f64>> {
        if !(self.step > 0.0) || self.end < self.start {
            return Err(Error::Config(format!("bad angle grid {self:?}")));
        }
        let n = ((self.end - self.start) / self.step + 1e-9).floor() as usize;
        Ok((0..=n).map(|i| self.start + i as f64 * self.step).collect())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case", deny_unknown_fields)]
pub enum Experiment {
    Solve,
    FreqSweep,
    Bistatic {
        phi: AngleGrid,
        #[serde(default)]
        theta_deg: f64,
    },
    Monostatic {
        phi: AngleGrid,
        #[serde(default)]
        theta_deg: f64,
    },
    Convergence {
        refinements: Vec<usize>,
        #[serde(default)]
        degrees: Vec<usize>,
    },
    QuadBench {
        #[serde(default = "default_old_grid")]
        old_s1: Vec<f64>,
        #[serde(default = "default_new_grid")]
        new_s1: Vec<f64>,
        #[serde(default)]
        n_eqp2: Vec<usize>,
    },
    MfsVerify {
        refinements: Vec<usize>,
    },
}

fn default_old_grid() -> Vec<f64> {
    (1..=12).map(f64::from).collect()
}

fn default_new_grid() -> Vec<f64> {
    (1..=12).map(|i| f64::from(i) / 5.0).collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    pub geometry: GeometrySpec,
    pub mesh: MeshConfig,
    /// Labels such as `CCBIE`, `GBM`, `CRCBIE2`.
    pub formulations: Vec<String>,
    #[serde(default)]
    pub quadrature: QuadConfig,
    pub physics: Physics,
    pub problem: ProblemSpec,
    pub experiment: Experiment,
    #[serde(default)]
    pub output_dir: Option<PathBuf>,
}

impl RunConfig {
    pub fn from_path(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path)
            .map_err(|e| Error::Config(format!("cannot read {}: {e}", path.display())))?;
        let cfg: RunConfig = serde_json::from_str(&text)
            .map_err(|e| Error::Config(format!("{}: {e}", path.display())))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<()> {
        self.geometry
            .validate()
            .map_err(|e| Error::Config(e.to_string()))?;
        let levels: Vec<usize> = match &self.experiment {
            Experiment::Convergence { refinements, .. } | Experiment::MfsVerify { refinements } => {
                refinements.clone()
            }
            _ => vec![self.mesh.refinements],
        };
        if levels.is_empty() || levels.contains(&0) {
            return Err(Error::Config("mesh levels must be at least 1".into()));
        }
        for p in self.degrees() {
            if p < self.geometry.base_degree() {
                return Err(Error::Config(format!(
                    "degree {p} is below the minimum {} of {:?}",
                    self.geometry.base_degree(),
                    self.geometry
                )));
            }
        }
        if self.formulations.is_empty() {
            return Err(Error::Config("at least one formulation is required".into()));
        }
        let forms = self.parsed_formulations()?;
        self.wavenumbers()?;
        if !(self.physics.c_f > 0.0) {
            return Err(Error::Config("c_f must be positive".into()));
        }
        if self.physics.p_inc.norm() == 0.0 || !self.physics.p_inc.is_finite() {
            return Err(Error::Config("p_inc must be finite and nonzero".into()));
        }
        if let ProblemSpec::Mfs { layout } = &self.problem {
            let ok = match layout {
                MfsLayout::Cube { a } => *a > 0.0,
                MfsLayout::Line { n, .. } => *n > 0,
                MfsLayout::Points { sources } => !sources.is_empty(),
            };
            if !ok {
                return Err(Error::Config(format!("bad MFS layout {layout:?}")));
            }
        }
        let rigid = self.problem == ProblemSpec::RigidPlaneWave;
        match &self.experiment {
            Experiment::Monostatic { .. } | Experiment::Bistatic { .. } if !rigid => {
                return Err(Error::Config(
                    "bistatic and monostatic sweeps need a rigid_plane_wave problem".into(),
                ))
            }
            Experiment::MfsVerify { .. } if !matches!(self.problem, ProblemSpec::Mfs { .. }) => {
                return Err(Error::Config("mfs_verify needs an mfs problem".into()))
            }
            Experiment::QuadBench { .. } if rigid => {
                return Err(Error::Config(
                    "quad_bench needs a problem with a known trace".into(),
                ))
            }
            Experiment::Monostatic { phi, .. } | Experiment::Bistatic { phi, .. } => {
                phi.values()?;
            }
            _ => {}
        }
        if self.problem == ProblemSpec::TorusSine && forms.iter().any(|f| f.psi_family().is_some())
        {
            return Err(Error::Config(
                "regularized formulations are set up for exterior problems".into(),
            ));
        }
        Ok(())
    }

    fn degrees(&self) -> Vec<usize> {
        match &self.experiment {
            Experiment::Convergence { degrees, .. } if !degrees.is_empty() => degrees.clone(),
            _ => vec![self.mesh.degree.unwrap_or(self.geometry.base_degree())],
        }
    }

    pub fn parsed_formulations(&self) -> Result<Vec<BieFormulation>> {
        let domain = self.domain();
        self.formulations
            .iter()
            .map(|s| Ok(s.parse::<BieFormulation>()?.with_domain(domain)))
            .collect()
    }

    fn domain(&self) -> Domain {
        if self.problem == ProblemSpec::TorusSine {
            Domain::Interior
        } else {
            Domain::Exterior
        }
    }

    /// Wavenumbers from either `k` or `frequencies`.
    pub fn wavenumbers(&self) -> Result<Vec<f64>> {
        let ks = match (&self.physics.k, &self.physics.frequencies) {
            (Some(_), Some(_)) => {
                return Err(Error::Config(
                    "give either k or frequencies, not both".into(),
                ))
            }
            (None, None) => return Err(Error::Config("give k or frequencies".into())),
            (Some(k), None) => k.clone(),
            (None, Some(f)) => f
                .iter()
                .map(|f| 2.0 * std::f64::consts::PI * f / self.physics.c_f)
                .collect(),
        };
        if ks.is_empty() || ks.iter().any(|k| !(*k >= 0.0) || !k.is_finite()) {
            return Err(Error::Config(format!("invalid wavenumber list {ks:?}")));
        }
        Ok(ks)
    }
}

/// Command-line settings that take precedence over the configuration.
#[derive(Debug, Clone, Default)]
pub struct Overrides {
    pub out: Option<PathBuf>,
    pub threads: Option<usize>,
    pub seed: Option<u64>,
}

/// Run record written next to the results.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct Manifest {
    pub status: String,
    pub error: Option<String>,
    pub version: String,
    pub config: RunConfig,
    pub seed: Option<u64>,
    pub threads: usize,
    pub meshes: Vec<MeshInfo>,
    pub artifacts: Vec<String>,
    pub timings: Vec<Timing>,
    pub wall_seconds: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MeshInfo {
    pub label: String,
    pub n_el: usize,
    pub n_dofs: usize,
    pub h_max: f64,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct Timing {
    pub stage: String,
    pub seconds: f64,
}

/// Exit status for an error: 2 for configuration problems, 3 for numerical failures.
pub fn exit_code(e: &Error) -> i32 {
    match e {
        Error::Config(_) | Error::Json(_) => 2,
        _ => 3,
    }
}

/// Resolves the output directory: flag, then environment, then config, then `out`.
pub fn output_dir(cfg: &RunConfig, ov: &Overrides) -> PathBuf {
    ov.out
        .clone()
        .or_else(|| std::env::var_os(OUT_DIR_ENV).map(PathBuf::from))
        .or_else(|| cfg.output_dir.clone())
        .unwrap_or_else(|| PathBuf::from("out"))
}

/// Loads, validates and runs a configuration file. The manifest is written
/// even when the experiment fails.
pub fn run(config_path: &Path, ov: &Overrides) -> Result<Manifest> {
    let cfg = RunConfig::from_path(config_path)?;
    if let Some(n) = ov.threads {
        if n == 0 {
            return Err(Error::Config("--threads must be at least 1".into()));
        }
        // the global pool can only be set once per process
        let _ = rayon::ThreadPoolBuilder::new()
            .num_threads(n)
            .build_global();
    }
    let dir = output_dir(&cfg, ov);
    run_config(&cfg, &dir, ov.seed)
}

/// Runs a validated configuration into `dir`.
pub fn run_config(cfg: &RunConfig, dir: &Path, seed: Option<u64>) -> Result<Manifest> {
    cfg.validate()?;
    fs::create_dir_all(dir)?;
    let start = Instant::now();
    let mut ctx = RunCtx {
        cfg,
        dir,
        artifacts: Vec::new(),
        timings: Vec::new(),
        meshes: Vec::new(),
    };
    let result = ctx.execute();
    let manifest = Manifest {
        status: if result.is_ok() { "ok" } else { "failed" }.into(),
        error: result.as_ref().err().map(|e| e.to_string()),
        version: env!("CARGO_PKG_VERSION").into(),
        config: cfg.clone(),
        seed,
        threads: rayon::current_num_threads(),
        meshes: ctx.meshes,
        artifacts: ctx.artifacts,
        timings: ctx.timings,
        wall_seconds: start.elapsed().as_secs_f64(),
    };
    let f = BufWriter::new(File::create(dir.join("manifest.json"))?);
    serde_json::to_writer_pretty(f, &manifest)?;
    result.map(|_| manifest)
}

struct RunCtx<'a> {
    cfg: &'a RunConfig,
    dir: &'a Path,
    artifacts: Vec<String>,
    timings: Vec<Timing>,
    meshes: Vec<MeshInfo>,
}

/// Boundary data for one wavenumber and the exact pressure when known.
struct Problem {
    bc: BoundaryCondition,
    exact: Option<Arc<dyn ExactField>>,
    /// Neumann field for the Kirchhoff integrals (`None` for rigid).
    neumann: Option<Arc<dyn ExactField>>,
}

impl RunCtx<'_> {
    fn execute(&mut self) -> Result<()> {
        match &self.cfg.experiment {
            Experiment::Solve => self.solve_each(),
            Experiment::FreqSweep => self.freq_sweep(),
            Experiment::Bistatic { phi, theta_deg } => self.bistatic(phi.values()?, *theta_deg),
            Experiment::Monostatic { phi, theta_deg } => self.monostatic(phi.values()?, *theta_deg),
            Experiment::Convergence { refinements, .. } => {
                self.convergence(refinements.clone(), self.cfg.degrees())
            }
            Experiment::MfsVerify { refinements } => {
                self.convergence(refinements.clone(), self.cfg.degrees())
            }
            Experiment::QuadBench {
                old_s1,
                new_s1,
                n_eqp2,
            } => self.quad_bench(old_s1, new_s1, n_eqp2),
        }
    }

    fn timed<T>(&mut self, stage: String, f: impl FnOnce() -> Result<T>) -> Result<T> {
        let t = Instant::now();
        let out = f();
        self.timings.push(Timing {
            stage,
            seconds: t.elapsed().as_secs_f64(),
        });
        out
    }

    fn create(&mut self, name: &str) -> Result<BufWriter<File>> {
        self.artifacts.push(name.to_string());
        Ok(BufWriter::new(File::create(self.dir.join(name))?))
    }

    fn mesh(&mut self, degree: Option<usize>, m: usize) -> Result<SurfaceMesh> {
        let mesh = self
            .cfg
            .geometry
            .mesh_with_continuity(degree, self.cfg.mesh.continuity, m)?;
        let p = degree.unwrap_or(self.cfg.geometry.base_degree());
        let label = format!("m{m}_p{p}");
        if !self.meshes.iter().any(|i| i.label == label) {
            self.meshes.push(MeshInfo {
                label,
                n_el: mesh.elements.len(),
                n_dofs: mesh.n_dofs,
                h_max: h_max(&mesh),
            });
        }
        Ok(mesh)
    }

    fn default_mesh(&mut self) -> Result<SurfaceMesh> {
        self.mesh(self.cfg.mesh.degree, self.cfg.mesh.refinements)
    }

    fn incident(&self) -> Vec3 {
        incident_direction(self.cfg.physics.alpha_s, self.cfg.physics.beta_s)
    }

    fn problem(&self, k: f64) -> Result<Problem> {
        let ph = &self.cfg.physics;
        let field = |f: Arc<dyn ExactField>| Problem {
            bc: BoundaryCondition::NeumannFromField(f.clone()),
            exact: Some(f.clone()),
            neumann: Some(f),
        };
        Ok(match &self.cfg.problem {
            ProblemSpec::RigidPlaneWave => {
                let d = self.incident();
                let exact: Option<Arc<dyn ExactField>> = match self.cfg.geometry {
                    GeometrySpec::SpherePar1 { radius } | GeometrySpec::SpherePar2 { radius }
                        if k > 0.0 =>
                    {
                        Some(Arc::new(RigidSphere::new(k, radius, ph.p_inc, d)?))
                    }
                    _ => None,
                };
                Problem {
                    bc: BoundaryCondition::plane_wave(ph.p_inc, d),
                    exact,
                    neumann: None,
                }
            }
            ProblemSpec::PulsatingSphere => field(Arc::new(MfsSolution::point(k))),
            ProblemSpec::Mfs { layout } => field(Arc::new(match layout {
                MfsLayout::Cube { a } => MfsSolution::cube_layout(k, *a),
                MfsLayout::Line { start, end, n } => MfsSolution::line_layout(k, *start, *end, *n),
                MfsLayout::Points { sources } => {
                    MfsSolution::new(k, sources.iter().map(|s| v3(s[0], s[1], s[2])).collect())
                }
            })),
            ProblemSpec::TorusSine => field(Arc::new(SineProductField { k })),
        })
    }

    fn jobs(&self, k: f64, forms: &[BieFormulation], bc: &BoundaryCondition) -> Vec<AssemblyJob> {
        forms
            .iter()
            .map(|&formulation| AssemblyJob {
                k,
                formulation,
                bc: bc.clone(),
            })
            .collect()
    }

    /// Solves every formulation at `k`, grouping by discretization. Returns
    /// the first solution column per formulation in input order.
    fn solve_all(
        &mut self,
        mesh: &SurfaceMesh,
        k: f64,
        forms: &[BieFormulation],
        bc: &BoundaryCondition,
        quad: &QuadConfig,
        tag: &str,
    ) -> Result<Vec<(Vec<Vec<Complex64>>, usize)>> {
        let mut out: Vec<Option<(Vec<Vec<Complex64>>, usize)>> = vec![None; forms.len()];
        for disc in [Discretization::Collocation, Discretization::Galerkin] {
            let idx: Vec<usize> = (0..forms.len())
                .filter(|&i| forms[i].discretization == disc)
                .collect();
            if idx.is_empty() {
                continue;
            }
            let sub: Vec<BieFormulation> = idx.iter().map(|&i| forms[i]).collect();
            let jobs = self.jobs(k, &sub, bc);
            let systems = self.timed(format!("assemble {tag} {disc:?}"), || {
                assemble_many(mesh, &jobs, quad)
            })?;
            for (&i, sys) in idx.iter().zip(&systems) {
                let sol = self.timed(format!("solve {tag} {}", forms[i]), || solve(sys))?;
                let cols = (0..sol.coeffs.ncols()).map(|c| sol.column(c)).collect();
                out[i] = Some((cols, sys.n_qp1));
            }
        }
        Ok(out
            .into_iter()
            .map(|o| o.expect("every formulation is solved"))
            .collect())
    }

    fn traces(&self, pr: &Problem, coeffs: Vec<Complex64>) -> Traces {
        match &pr.neumann {
            Some(f) => Traces::neumann_from_field(coeffs, f.clone()),
            None => Traces::rigid(coeffs),
        }
    }

    fn surface_error(&self, mesh: &SurfaceMesh, pr: &Problem, u: &[Complex64]) -> Result<f64> {
        match &pr.exact {
            Some(f) => Ok(l2_surface_error(mesh, u, &|x| f.value(x))?
                .relative
                .unwrap_or(f64::NAN)),
            None => Ok(f64::NAN),
        }
    }

    fn solve_each(&mut self) -> Result<()> {
        let mesh = self.default_mesh()?;
        let forms = self.cfg.parsed_formulations()?;
        let ks = self.cfg.wavenumbers()?;
        let mut w = self.create("solve_summary.csv")?;
        writeln!(w, "k,formulation,n_dofs,n_qp1,error_rel")?;
        for (ki, &k) in ks.iter().enumerate() {
            let pr = self.problem(k)?;
            let sols = self.solve_all(
                &mesh,
                k,
                &forms,
                &pr.bc,
                &self.cfg.quadrature.clone(),
                &format!("k{ki}"),
            )?;
            for (f, (cols, nq)) in forms.iter().zip(&sols) {
                let err = self.surface_error(&mesh, &pr, &cols[0])?;
                writeln!(w, "{},{},{},{},{}", num(k), f, mesh.n_dofs, nq, num(err))?;
                let mut s = self.create(&format!("solution_{f}_k{ki}.csv"))?;
                writeln!(s, "dof,re_p,im_p")?;
                for (i, v) in cols[0].iter().enumerate() {
                    writeln!(s, "{},{},{}", i, num(v.re), num(v.im))?;
                }
                s.flush()?;
            }
        }
        w.flush()?;
        Ok(())
    }

    fn freq_sweep(&mut self) -> Result<()> {
        let mesh = self.default_mesh()?;
        let forms = self.cfg.parsed_formulations()?;
        let ks = self.cfg.wavenumbers()?;
        let back = -self.incident();
        let p_inc = self.cfg.physics.p_inc;
        let mut w = self.create("freq_sweep.csv")?;
        writeln!(w, "k,frequency_hz,formulation,n_dofs,error_rel,TS_dB")?;
        for (ki, &k) in ks.iter().enumerate() {
            let pr = self.problem(k)?;
            let sols = self.solve_all(
                &mesh,
                k,
                &forms,
                &pr.bc,
                &self.cfg.quadrature.clone(),
                &format!("k{ki}"),
            )?;
            for (f, (cols, _)) in forms.iter().zip(sols) {
                let err = self.surface_error(&mesh, &pr, &cols[0])?;
                let p0 = far_field(
                    &mesh,
                    &self.traces(&pr, cols[0].clone()),
                    k,
                    &[back],
                    self.cfg.quadrature.n_eqp1,
                )?[0];
                let freq = k * self.cfg.physics.c_f / (2.0 * std::f64::consts::PI);
                writeln!(
                    w,
                    "{},{},{},{},{},{}",
                    num(k),
                    num(freq),
                    f,
                    mesh.n_dofs,
                    num(err),
                    num(target_strength(p0, p_inc)?)
                )?;
            }
        }
        w.flush()?;
        Ok(())
    }

    fn bistatic(&mut self, phi: Vec<f64>, theta: f64) -> Result<()> {
        let mesh = self.default_mesh()?;
        let forms = self.cfg.parsed_formulations()?;
        let ks = self.cfg.wavenumbers()?;
        let p_inc = self.cfg.physics.p_inc;
        let thetas = vec![theta; phi.len()];
        let dirs: Vec<Vec3> = phi.iter().map(|&p| direction(p, theta)).collect();
        for (ki, &k) in ks.iter().enumerate() {
            let pr = self.problem(k)?;
            let sols = self.solve_all(
                &mesh,
                k,
                &forms,
                &pr.bc,
                &self.cfg.quadrature.clone(),
                &format!("k{ki}"),
            )?;
            for (f, (cols, _)) in forms.iter().zip(sols) {
                let p0 = far_field(
                    &mesh,
                    &self.traces(&pr, cols[0].clone()),
                    k,
                    &dirs,
                    self.cfg.quadrature.n_eqp1,
                )?;
                let sweep = FarFieldSweep::new(phi.clone(), thetas.clone(), p0, p_inc)?;
                let mut w = self.create(&format!("bistatic_{f}_k{ki}.csv"))?;
                sweep.write_csv(&mut w)?;
                w.flush()?;
            }
        }
        Ok(())
    }

    /// One right-hand side per aspect angle; the incident wave arrives from
    /// the observation direction.
    fn monostatic(&mut self, phi: Vec<f64>, theta: f64) -> Result<()> {
        let mesh = self.default_mesh()?;
        let forms = self.cfg.parsed_formulations()?;
        let ks = self.cfg.wavenumbers()?;
        let p_inc = self.cfg.physics.p_inc;
        let dirs: Vec<Vec3> = phi.iter().map(|&p| direction(p, theta)).collect();
        let bc = BoundaryCondition::RigidPlaneWave {
            amplitude: p_inc,
            directions: phi.iter().map(|&p| incident_direction(p, theta)).collect(),
        };
        for (ki, &k) in ks.iter().enumerate() {
            let sols = self.solve_all(
                &mesh,
                k,
                &forms,
                &bc,
                &self.cfg.quadrature.clone(),
                &format!("k{ki}"),
            )?;
            for (f, (cols, _)) in forms.iter().zip(sols) {
                let mut p0 = Vec::with_capacity(dirs.len());
                for (c, d) in cols.into_iter().zip(&dirs) {
                    p0.push(
                        far_field(
                            &mesh,
                            &Traces::rigid(c),
                            k,
                            &[*d],
                            self.cfg.quadrature.n_eqp1,
                        )?[0],
                    );
                }
                let sweep = FarFieldSweep::new(phi.clone(), vec![theta; phi.len()], p0, p_inc)?;
                let mut w = self.create(&format!("monostatic_{f}_k{ki}.csv"))?;
                sweep.write_csv(&mut w)?;
                w.flush()?;
            }
        }
        Ok(())
    }

    /// Error tables per formulation and degree, plus the best approximation
    /// and the observed orders.
    fn convergence(&mut self, levels: Vec<usize>, degrees: Vec<usize>) -> Result<()> {
        let forms = self.cfg.parsed_formulations()?;
        let ks = self.cfg.wavenumbers()?;
        let quad = self.cfg.quadrature;
        let mut rates = self.create("rates.csv")?;
        writeln!(rates, "k,degree,formulation,observed_order")?;
        for (ki, &k) in ks.iter().enumerate() {
            let pr = self.problem(k)?;
            let exact = pr
                .exact
                .clone()
                .ok_or_else(|| Error::Config("convergence needs a known exact solution".into()))?;
            for &p in &degrees {
                let mut rows: Vec<Vec<ErrorRow>> = vec![Vec::new(); forms.len() + 1];
                for &m in &levels {
                    let mesh = self.mesh(Some(p), m)?;
                    let h = h_max(&mesh);
                    let id = format!("m{m}");
                    let sols = self.solve_all(
                        &mesh,
                        k,
                        &forms,
                        &pr.bc,
                        &quad,
                        &format!("k{ki} p{p} m{m}"),
                    )?;
                    for (i, (cols, _)) in sols.iter().enumerate() {
                        let e = l2_surface_error(&mesh, &cols[0], &|x| exact.value(x))?
                            .relative
                            .unwrap_or(f64::NAN);
                        rows[i].push(ErrorRow {
                            mesh_id: id.clone(),
                            n_dofs: mesh.n_dofs,
                            h_max: h,
                            error_rel: e,
                        });
                    }
                    let ba = best_approximation(&mesh, |x| exact.value(x), quad.n_eqp1 + 3)?;
                    let e = l2_surface_error(&mesh, &ba, &|x| exact.value(x))?
                        .relative
                        .unwrap_or(f64::NAN);
                    rows[forms.len()].push(ErrorRow {
                        mesh_id: id,
                        n_dofs: mesh.n_dofs,
                        h_max: h,
                        error_rel: e,
                    });
                }
                let labels: Vec<String> = forms
                    .iter()
                    .map(|f| f.to_string())
                    .chain(["BA".to_string()])
                    .collect();
                for (label, r) in labels.iter().zip(&rows) {
                    let mut w = self.create(&format!("convergence_{label}_p{p}_k{ki}.csv"))?;
                    write_error_csv(&mut w, r)?;
                    w.flush()?;
                    let hs: Vec<f64> = r.iter().map(|r| r.h_max).collect();
                    let es: Vec<f64> = r.iter().map(|r| r.error_rel).collect();
                    let order = if r.len() >= 2 {
                        observed_order(&hs, &es).unwrap_or(f64::NAN)
                    } else {
                        f64::NAN
                    };
                    writeln!(rates, "{},{},{},{}", num(k), p, label, num(order))?;
                }
            }
        }
        rates.flush()?;
        Ok(())
    }

    fn quad_bench(&mut self, old_s1: &[f64], new_s1: &[f64], n_eqp2: &[usize]) -> Result<()> {
        let mesh = self.default_mesh()?;
        let forms = self.cfg.parsed_formulations()?;
        let ks = self.cfg.wavenumbers()?;
        let base = self.cfg.quadrature;
        let mut w = self.create("quad_bench.csv")?;
        writeln!(w, "k,formulation,scheme,parameter,value,n_qp1,error_rel")?;
        let mut runs: Vec<(&str, &str, f64, QuadConfig)> = Vec::new();
        for &s in old_s1 {
            runs.push((
                "old",
                "s1",
                s,
                QuadConfig {
                    scheme: Scheme::OldAdaptive,
                    s1: s,
                    ..base
                },
            ));
        }
        for &s in new_s1 {
            runs.push((
                "new",
                "s1",
                s,
                QuadConfig {
                    scheme: Scheme::NewAdaptive,
                    s1: s,
                    ..base
                },
            ));
        }
        for &n in n_eqp2 {
            runs.push((
                if base.scheme == Scheme::OldAdaptive {
                    "old"
                } else {
                    "new"
                },
                "n_eqp2",
                n as f64,
                QuadConfig { n_eqp2: n, ..base },
            ));
        }
        for (ki, &k) in ks.iter().enumerate() {
            let pr = self.problem(k)?;
            for (ri, (scheme, param, value, quad)) in runs.iter().enumerate() {
                let sols =
                    self.solve_all(&mesh, k, &forms, &pr.bc, quad, &format!("k{ki} run{ri}"))?;
                for (f, (cols, nq)) in forms.iter().zip(&sols) {
                    let err = self.surface_error(&mesh, &pr, &cols[0])?;
                    writeln!(
                        w,
                        "{},{},{},{},{},{},{}",
                        num(k),
                        f,
                        scheme,
                        param,
                        num(*value),
                        nq,
                        num(err)
                    )?;
                }
            }
        }
        w.flush()?;
        Ok(())
    }
}
