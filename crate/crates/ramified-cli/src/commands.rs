//! Command implementations. Every command reads the shared run context,
//! writes its artifacts into the output directory, and reports failures
//! through [`CliError`]. Output files never embed paths or timestamps, so
//! identical config + seed yields byte-identical artifacts.

use std::fmt::Write as _;
use std::path::{Path, PathBuf};
use std::sync::Arc;

use rand::SeedableRng;
use rand_chacha::ChaCha20Rng;

use ramified_core::energy::{laplacian_matrix, spectral_gap};
use ramified_core::forms::harmonic_basis;
use ramified_core::hydro::{ns_boundary_solution, solve_neumann, verify_weak_ns};
use ramified_core::linalg::sorted_symmetric_eigen;
use ramified_core::pde::{solve_drift, solve_quasilinear};
use ramified_core::quantum::{
    assemble_magnetic_hamiltonian, dirac_assemble, dirac_spectrum, dirac_square_block_spectra,
};
use ramified_core::{
    cycle_rank, io, DriftCoefficient, EdgeNonlinearity, LevelGraph, MagneticConfig,
    MagneticConvention, MeasureWeights, NeumannData, OneForm, ScalarField, SolveDiagnostics,
};

use crate::config::{
    ConventionChoice, DriftChoice, MagneticSection, NonlinearityChoice, RunConfig,
};
use crate::CliError;

pub struct RunContext {
    pub config: RunConfig,
    pub base_dir: PathBuf,
    pub out_dir: PathBuf,
    pub verbose: u8,
}

impl RunContext {
    pub fn new(
        config_path: &Path,
        out_dir_flag: Option<PathBuf>,
        verbose: u8,
    ) -> Result<Self, CliError> {
        let (config, base_dir) = RunConfig::load(config_path)?;
        // Input paths resolve against the config file; the output
        // directory is taken relative to the working directory.
        let out_dir = out_dir_flag
            .or_else(|| config.out_dir.clone())
            .unwrap_or_else(|| PathBuf::from("out"));
        Ok(RunContext { config, base_dir, out_dir, verbose })
    }

    fn prepare(&self) -> Result<(Arc<LevelGraph>, MeasureWeights), CliError> {
        std::fs::create_dir_all(&self.out_dir)
            .map_err(|e| CliError::solver(format!("cannot create output directory: {e}")))?;
        let built = self.config.build_graph(&self.base_dir)?;
        self.note(&format!(
            "graph: {} | measure: {}",
            built.0.describe(),
            self.config.fractal.measure.name()
        ));
        Ok(built)
    }

    fn rng(&self) -> ChaCha20Rng {
        ChaCha20Rng::seed_from_u64(self.config.seed)
    }

    fn out(&self, name: &str) -> PathBuf {
        self.out_dir.join(name)
    }

    fn note(&self, message: &str) {
        if self.verbose > 0 {
            eprintln!("{message}");
        }
    }

    fn write_diagnostics(&self, text: &str) -> Result<(), CliError> {
        std::fs::write(self.out("diagnostics.txt"), text)
            .map_err(|e| CliError::solver(format!("cannot write diagnostics: {e}")))
    }
}

fn output<T>(result: ramified_core::Result<T>) -> Result<T, CliError> {
    result.map_err(|e| match e {
        ramified_core::Error::Io(io) => CliError::solver(format!("cannot write output: {io}")),
        other => CliError::from(other),
    })
}

fn diagnostics_text(command: &str, graph: &LevelGraph, diag: &SolveDiagnostics) -> String {
    let mut text = String::new();
    let _ = writeln!(text, "command: {command}");
    let _ = writeln!(text, "graph: {}", graph.describe());
    let _ = writeln!(text, "converged: {}", diag.converged);
    let _ = writeln!(text, "iterations: {}", diag.iterations);
    let _ = writeln!(text, "residual: {}", io::format_float(diag.residual));
    let _ = writeln!(text, "conditions: {}", diag.condition_report);
    let _ = writeln!(text, "residual_history:");
    for (i, r) in diag.residual_history.iter().enumerate() {
        let _ = writeln!(text, "  {i} {}", io::format_float(*r));
    }
    text
}

/// `build`: export the graph tables and a summary.
pub fn cmd_build(ctx: &RunContext) -> Result<(), CliError> {
    let (graph, m) = ctx.prepare()?;
    output(io::write_vertices(&graph, &ctx.out("vertices.csv")))?;
    output(io::write_edges(&graph, &ctx.out("edges.csv")))?;
    output(io::write_measure(&m, &ctx.out("measure.csv")))?;

    let rank = cycle_rank(&graph).map_err(CliError::from)?;
    let gap = spectral_gap(&m).map_err(CliError::from)?;
    let mut summary = String::from("key,value\n");
    let _ = writeln!(summary, "name,{}", graph.describe());
    let _ = writeln!(summary, "level,{}", ctx.config.fractal.level);
    let _ = writeln!(summary, "vertices,{}", graph.vertex_count());
    let _ = writeln!(summary, "edges,{}", graph.edge_count());
    let _ = writeln!(summary, "cycle_rank,{rank}");
    let _ = writeln!(summary, "boundary_size,{}", graph.boundary().len());
    let _ = writeln!(summary, "measure,{}", ctx.config.fractal.measure.name());
    let _ = writeln!(summary, "spectral_gap,{}", io::format_float(gap));
    std::fs::write(ctx.out("summary.csv"), summary)
        .map_err(|e| CliError::solver(format!("cannot write summary: {e}")))?;
    ctx.note("wrote vertices.csv, edges.csv, measure.csv, summary.csv");
    Ok(())
}

/// `solve quasilinear`: weak solution of `∂*a(∂u) = f`.
pub fn cmd_solve_quasilinear(ctx: &RunContext) -> Result<(), CliError> {
    let (graph, m) = ctx.prepare()?;
    let pde = ctx
        .config
        .pde
        .as_ref()
        .ok_or_else(|| CliError::usage("solve quasilinear needs a [pde] section"))?;
    let source_spec = pde
        .source
        .as_ref()
        .ok_or_else(|| CliError::usage("solve quasilinear needs pde.source"))?;
    let mut rng = ctx.rng();
    let f = source_spec.resolve(&ctx.base_dir, &graph, &m, &mut rng)?;
    let nonlinearity = match pde.nonlinearity {
        NonlinearityChoice::Identity => EdgeNonlinearity::identity(),
        NonlinearityChoice::ScaledMonotone => {
            EdgeNonlinearity::scaled_monotone(pde.base, pde.gain).map_err(CliError::from)?
        }
    };
    let (u, diag) = solve_quasilinear(&m, &nonlinearity, &f, ctx.config.tolerances.solver)
        .map_err(CliError::from)?;
    output(io::write_field(&f, &ctx.out("source.csv")))?;
    output(io::write_field(&u, &ctx.out("solution.csv")))?;
    ctx.write_diagnostics(&diagnostics_text("solve quasilinear", &graph, &diag))?;
    ctx.note(&format!(
        "quasilinear solve: {} iterations, residual {:.3e}",
        diag.iterations, diag.residual
    ));
    if !diag.converged {
        return Err(CliError::solver(format!(
            "quasilinear solver did not converge (residual {:.3e} after {} iterations)",
            diag.residual, diag.iterations
        )));
    }
    Ok(())
}

/// `solve drift`: fixed point of `−Au + b(∂u) + ϱu = 0`.
pub fn cmd_solve_drift(ctx: &RunContext) -> Result<(), CliError> {
    let (graph, m) = ctx.prepare()?;
    let pde = ctx
        .config
        .pde
        .as_ref()
        .ok_or_else(|| CliError::usage("solve drift needs a [pde] section"))?;
    let mut rng = ctx.rng();
    let drift = match pde.drift {
        DriftChoice::Zero => DriftCoefficient::zero(),
        DriftChoice::FiberPairing => {
            let w = pde
                .drift_form
                .as_ref()
                .ok_or_else(|| CliError::usage("fiber_pairing drift needs pde.drift_form"))?
                .resolve(&ctx.base_dir, &graph, &mut rng)?;
            DriftCoefficient::fiber_pairing(&m, w).map_err(CliError::from)?
        }
        DriftChoice::Affine => {
            let w = pde
                .drift_form
                .as_ref()
                .ok_or_else(|| CliError::usage("affine drift needs pde.drift_form"))?
                .resolve(&ctx.base_dir, &graph, &mut rng)?;
            let offset = pde
                .offset
                .as_ref()
                .ok_or_else(|| CliError::usage("affine drift needs pde.offset"))?
                .resolve(&ctx.base_dir, &graph, &m, &mut rng)?;
            DriftCoefficient::affine(&m, offset, w).map_err(CliError::from)?
        }
    };
    let (u, diag) =
        solve_drift(&m, &drift, pde.rho, ctx.config.tolerances.solver).map_err(CliError::from)?;
    output(io::write_field(&u, &ctx.out("solution.csv")))?;
    ctx.write_diagnostics(&diagnostics_text("solve drift", &graph, &diag))?;
    ctx.note(&format!(
        "drift solve: {} iterations, residual {:.3e}",
        diag.iterations, diag.residual
    ));
    if !diag.converged {
        return Err(CliError::solver(format!(
            "drift solver did not converge (residual {:.3e} after {} iterations); \
             try a larger rho",
            diag.residual, diag.iterations
        )));
    }
    Ok(())
}

/// `solve neumann`: potential, flow and pressure for prescribed boundary
/// fluxes.
pub fn cmd_solve_neumann(ctx: &RunContext) -> Result<(), CliError> {
    let (graph, m) = ctx.prepare()?;
    let section = ctx
        .config
        .neumann
        .as_ref()
        .ok_or_else(|| CliError::usage("solve neumann needs a [neumann] section"))?;
    let data = match &section.boundary {
        Some(boundary) => {
            NeumannData::new(&graph, boundary.clone(), section.fluxes.clone())
                .map_err(CliError::from)?
        }
        None => NeumannData::on_graph_boundary(&graph, section.fluxes.clone())
            .map_err(CliError::from)?,
    };
    let h = solve_neumann(&data).map_err(CliError::from)?;
    let (u, pressure) = ns_boundary_solution(&m, &data).map_err(CliError::from)?;
    output(io::write_field(&h, &ctx.out("solution.csv")))?;
    output(io::write_form(&u, &ctx.out("flow.csv")))?;
    output(io::write_measure(&pressure, &ctx.out("pressure.csv")))?;

    let mut text = String::new();
    let _ = writeln!(text, "command: solve neumann");
    let _ = writeln!(text, "graph: {}", graph.describe());
    let _ = writeln!(text, "boundary vertices: {:?}", data.boundary());
    let _ = writeln!(text, "boundary fluxes:");
    for (p, phi) in data.boundary().iter().zip(data.fluxes()) {
        let _ = writeln!(text, "  {p} {}", io::format_float(*phi));
    }
    ctx.write_diagnostics(&text)?;
    ctx.note("wrote solution.csv, flow.csv, pressure.csv");
    Ok(())
}

/// `solve ns-verify`: check stationarity of a divergence-free datum (or of
/// every harmonic-basis element when no datum is given).
pub fn cmd_ns_verify(ctx: &RunContext) -> Result<(), CliError> {
    let (graph, m) = ctx.prepare()?;
    let section = ctx.config.ns_verify.as_ref();
    let tol = ctx.config.tolerances.verification;
    let mut rng = ctx.rng();

    let data: Vec<(String, OneForm)> = match section.and_then(|s| s.form.as_ref()) {
        Some(source) => vec![(
            "input".to_owned(),
            source.resolve(&ctx.base_dir, &graph, &mut rng)?,
        )],
        None => harmonic_basis(&m)
            .map_err(CliError::from)?
            .into_iter()
            .enumerate()
            .map(|(i, w)| (format!("basis_{i}"), w))
            .collect(),
    };

    let mut csv = String::from("label,harmonic_residual,max_weak_residual,passes\n");
    let mut failures = 0usize;
    for (label, u0) in &data {
        let report = verify_weak_ns(&m, u0, tol).map_err(CliError::from)?;
        let max_weak = report
            .weak_residuals
            .iter()
            .fold(0.0f64, |acc, r| acc.max(r.abs()));
        let _ = writeln!(
            csv,
            "{label},{},{},{}",
            io::format_float(report.harmonic_residual),
            io::format_float(max_weak),
            u8::from(report.is_weak_solution)
        );
        if !report.is_weak_solution {
            failures += 1;
        }
        ctx.note(&format!(
            "{label}: weak solution = {}, note: {}",
            report.is_weak_solution, report.note
        ));
    }
    std::fs::write(ctx.out("ns_report.csv"), csv)
        .map_err(|e| CliError::solver(format!("cannot write report: {e}")))?;
    if failures > 0 {
        return Err(CliError::verification(format!(
            "{failures} of {} tested forms fail the stationarity check (see ns_report.csv)",
            data.len()
        )));
    }
    Ok(())
}

fn magnetic_config(
    ctx: &RunContext,
    graph: &Arc<LevelGraph>,
    section: Option<&MagneticSection>,
) -> Result<MagneticConfig, CliError> {
    let default = MagneticSection::default();
    let section = section.unwrap_or(&default);
    let mut rng = ctx.rng();
    let a = match &section.vector_potential {
        Some(source) => source.resolve(&ctx.base_dir, graph, &mut rng)?,
        None => OneForm::zeros(graph),
    };
    let v = match &section.electric_potential {
        Some(source) => {
            // The electric potential is measure-independent input; resolve
            // against the run measure for the random generator only.
            let m = ramified_core::self_similar_measure(graph).map_err(CliError::from)?;
            source.resolve(&ctx.base_dir, graph, &m, &mut rng)?
        }
        None => ScalarField::zeros(graph),
    };
    let convention = match section.convention {
        ConventionChoice::Linear => MagneticConvention::Linear,
        ConventionChoice::Exponential => MagneticConvention::Exponential,
    };
    MagneticConfig::new(a, v, convention).map_err(CliError::from)
}

pub enum SpectrumKind {
    Generator,
    FormLaplacian,
    Magnetic,
    Dirac,
}

/// `spectrum <target>`: eigenvalues of `−A`, `Δ₁`, `H^{a,V}` or `D`.
pub fn cmd_spectrum(ctx: &RunContext, kind: SpectrumKind) -> Result<(), CliError> {
    let (graph, m) = ctx.prepare()?;
    let mut diagnostics = String::new();
    let _ = writeln!(diagnostics, "graph: {}", graph.describe());

    let values: Vec<f64> = match kind {
        SpectrumKind::Generator => {
            let _ = writeln!(diagnostics, "command: spectrum generator");
            let mut sym = laplacian_matrix(&graph);
            let n = graph.vertex_count();
            for x in 0..n {
                let inv_sqrt = 1.0 / m.value(x).sqrt();
                for y in 0..n {
                    sym[(x, y)] *= inv_sqrt;
                }
                for y in 0..n {
                    sym[(y, x)] *= inv_sqrt;
                }
            }
            let (values, _) = sorted_symmetric_eigen(sym);
            values.iter().copied().collect()
        }
        SpectrumKind::FormLaplacian => {
            let _ = writeln!(diagnostics, "command: spectrum form-laplacian");
            let d = dirac_assemble(&m).map_err(CliError::from)?;
            let (_, form_block) = dirac_square_block_spectra(&d).map_err(CliError::from)?;
            // The 1-form Laplacian is nonpositive; its spectrum is the
            // negation of the block spectrum, re-sorted ascending.
            let mut values: Vec<f64> = form_block.iter().map(|ev| -ev).collect();
            values.sort_by(|p, q| p.partial_cmp(q).expect("finite eigenvalues"));
            values
        }
        SpectrumKind::Magnetic => {
            let _ = writeln!(diagnostics, "command: spectrum magnetic");
            let cfg = magnetic_config(ctx, &graph, ctx.config.magnetic.as_ref())?;
            let sup = cfg.vector_potential_sup(&m).map_err(CliError::from)?;
            let _ = writeln!(
                diagnostics,
                "convention: {}",
                match cfg.convention() {
                    MagneticConvention::Linear => "linear",
                    MagneticConvention::Exponential => "exponential",
                }
            );
            let _ = writeln!(
                diagnostics,
                "vector_potential_fiber_sup: {}",
                io::format_float(sup)
            );
            let h = assemble_magnetic_hamiltonian(&cfg, &m).map_err(CliError::from)?;
            h.spectrum()
        }
        SpectrumKind::Dirac => {
            let _ = writeln!(diagnostics, "command: spectrum dirac");
            let _ = writeln!(
                diagnostics,
                "dirac section: {}",
                if ctx.config.dirac.is_some() { "explicit" } else { "default" }
            );
            let d = dirac_assemble(&m).map_err(CliError::from)?;
            dirac_spectrum(&d).map_err(CliError::from)?
        }
    };

    let _ = writeln!(diagnostics, "eigenvalues: {}", values.len());
    output(io::write_spectrum(&values, &ctx.out("spectrum.csv")))?;
    ctx.write_diagnostics(&diagnostics)?;
    ctx.note(&format!("wrote spectrum.csv ({} eigenvalues)", values.len()));
    Ok(())
}
