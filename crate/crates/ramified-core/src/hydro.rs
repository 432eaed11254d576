//! The topologically one-dimensional Navier–Stokes analog on graph levels:
//! convection functional, weak-solution verification, Neumann boundary
//! problems and pressure recovery.
//!
//! The convection trilinear functional is
//!
//! ```text
//! conv(u; v) = −⟨(∂*v)·u, u⟩_H,
//! ```
//!
//! with the midpoint action of the scalar `∂*v` on the form `u`. It
//! vanishes structurally whenever `∂*v = 0` — the action by the zero field
//! is the zero form — so divergence-free test forms never see convection.
//!
//! Consequently a divergence-free initial datum `u₀` makes the constant
//! trajectory `u(t) ≡ u₀` a weak solution of the momentum equation: tested
//! against the harmonic basis, the time-derivative, convection and
//! viscosity terms vanish separately. Nonzero stationary flows therefore
//! exist exactly when the graph has cycles; on trees only `u₀ = 0`
//! passes.
//!
//! The boundary-driven flow comes from a Neumann problem: a function `h`,
//! harmonic off the boundary set `B`, whose Neumann derivatives
//! `(dh)_p = Σ_{y~p} c_py (h(p) − h(y))` match prescribed fluxes `φ` with
//! `Σφ = 0`. The flow is `u = ∂h` and the pressure is the signed measure
//! `p = −½ Γ(h,h)`. The sign of `(dh)_p` is chosen so that Gauss–Green
//! reads `E(h,v) = Σ_{p∈B} (dh)_p v(p)` for `h` harmonic off `B`, which
//! makes `Σφ = 0` the exact solvability condition.

use nalgebra::DVector;

use crate::energy::{energy_measure, laplacian_matrix};
use crate::error::{Error, Result};
use crate::fields::{MeasureWeights, ScalarField};
use crate::forms::{self, action_scalar, derivation, divergence, harmonic_basis, inner, OneForm};
use crate::fractal::{check_same_graph, LevelGraph};
use crate::linalg;
use std::sync::Arc;

/// Prescribed Neumann fluxes on a boundary set: `(dh)_p = φ(p)` for
/// `p ∈ B`. Construction enforces `Σφ = 0`, the exact solvability
/// condition.
#[derive(Clone, Debug)]
pub struct NeumannData {
    graph: Arc<LevelGraph>,
    boundary: Vec<usize>,
    fluxes: Vec<f64>,
}

impl NeumannData {
    pub fn new(
        graph: &Arc<LevelGraph>,
        boundary: Vec<usize>,
        fluxes: Vec<f64>,
    ) -> Result<Self> {
        if boundary.is_empty() {
            return Err(Error::Precondition(
                "Neumann data needs a nonempty boundary set".to_owned(),
            ));
        }
        if boundary.len() != fluxes.len() {
            return Err(Error::Dimension(format!(
                "{} boundary vertices but {} fluxes",
                boundary.len(),
                fluxes.len()
            )));
        }
        let mut seen = std::collections::BTreeSet::new();
        for &p in &boundary {
            if p >= graph.vertex_count() {
                return Err(Error::Precondition(format!(
                    "boundary vertex {p} out of range for {}",
                    graph.describe()
                )));
            }
            if !seen.insert(p) {
                return Err(Error::Precondition(format!(
                    "boundary vertex {p} listed twice"
                )));
            }
        }
        if fluxes.iter().any(|f| !f.is_finite()) {
            return Err(Error::Precondition("fluxes must be finite".to_owned()));
        }
        let scale = fluxes.iter().fold(0.0f64, |acc, f| acc.max(f.abs()));
        let total: f64 = crate::fields::kahan_sum(fluxes.iter().copied());
        if total.abs() > 1e-12 * (1.0 + scale) {
            return Err(Error::Precondition(format!(
                "fluxes must sum to zero for solvability, got Σφ = {total:.6e}"
            )));
        }
        Ok(NeumannData {
            graph: Arc::clone(graph),
            boundary,
            fluxes,
        })
    }

    /// Neumann data from the graph's own boundary set.
    pub fn on_graph_boundary(graph: &Arc<LevelGraph>, fluxes: Vec<f64>) -> Result<Self> {
        NeumannData::new(graph, graph.boundary().to_vec(), fluxes)
    }

    pub fn graph(&self) -> &Arc<LevelGraph> {
        &self.graph
    }

    pub fn boundary(&self) -> &[usize] {
        &self.boundary
    }

    pub fn fluxes(&self) -> &[f64] {
        &self.fluxes
    }
}

/// Verification record for a candidate stationary weak solution.
#[derive(Clone, Debug)]
pub struct NSReport {
    /// Whether `u₀` is divergence-free and the constant trajectory passes
    /// every weak test; implies both residual families are at or below the
    /// tolerance used.
    pub is_weak_solution: bool,
    /// `‖∂*u₀‖_∞`, the harmonicity defect of the datum.
    pub harmonic_residual: f64,
    /// Convection values `−⟨(∂*v)u₀, u₀⟩_H` against the harmonic test
    /// basis.
    pub convection_values: Vec<f64>,
    /// Total weak residual per test form: `|convection + ⟨∂*u₀, ∂*v⟩|`.
    pub weak_residuals: Vec<f64>,
    /// Stationarity commentary for human consumption.
    pub note: String,
}

/// The convection functional `−⟨(∂*v)·u, u⟩_H`: quadratic in `u`, linear
/// in `∂*v`, and exactly zero when `∂*v` vanishes.
pub fn convection(m: &MeasureWeights, u: &OneForm, v: &OneForm) -> Result<f64> {
    check_same_graph(m.graph(), u.graph())?;
    check_same_graph(m.graph(), v.graph())?;
    let transported = action_scalar(&divergence(m, v)?, u)?;
    Ok(-inner(&transported, u)?)
}

/// Check whether the constant trajectory `u(t) ≡ u₀` is a weak solution of
/// the momentum equation: `u₀` must be divergence-free, and the integrated
/// weak identity must hold against the harmonic test basis.
pub fn verify_weak_ns(m: &MeasureWeights, u0: &OneForm, tol: f64) -> Result<NSReport> {
    check_same_graph(m.graph(), u0.graph())?;
    if !(tol > 0.0) {
        return Err(Error::Precondition(format!(
            "tolerance must be positive, got {tol}"
        )));
    }
    let div = divergence(m, u0)?;
    let harmonic_residual = div.max_abs();
    let basis = harmonic_basis(m)?;
    let mut convection_values = Vec::with_capacity(basis.len());
    let mut weak_residuals = Vec::with_capacity(basis.len());
    for v in &basis {
        let conv = convection(m, u0, v)?;
        let viscosity = div.l2_inner(&divergence(m, v)?, m)?;
        convection_values.push(conv);
        weak_residuals.push((conv + viscosity).abs());
    }
    let tests_pass = weak_residuals.iter().all(|r| *r <= tol);
    let is_weak_solution = harmonic_residual <= tol && tests_pass;
    let note = if is_weak_solution {
        format!(
            "divergence-free datum: the constant trajectory is the unique weak solution; {} harmonic test(s) passed",
            basis.len()
        )
    } else if harmonic_residual > tol {
        format!(
            "datum is not divergence-free (‖∂*u₀‖∞ = {harmonic_residual:.3e}); every weak solution is harmonic and stationary"
        )
    } else {
        "harmonic datum failed an integrated weak test".to_owned()
    };
    Ok(NSReport {
        is_weak_solution,
        harmonic_residual,
        convection_values,
        weak_residuals,
        note,
    })
}

/// The Neumann derivative `(dh)_p = Σ_{y~p} c_py (h(p) − h(y))`. For `h`
/// harmonic off a set `B`, Gauss–Green gives
/// `E(h,v) = Σ_{p∈B} (dh)_p v(p)` for every `v`, exactly.
pub fn neumann_derivative(h: &ScalarField, p: usize) -> Result<f64> {
    let graph = h.graph();
    if p >= graph.vertex_count() {
        return Err(Error::Precondition(format!(
            "vertex {p} out of range for {}",
            graph.describe()
        )));
    }
    Ok(graph
        .neighbors(p)
        .map(|(y, e)| graph.edges()[e].conductance * (h.value(p) - h.value(y)))
        .sum())
}

/// Solve the Neumann problem: `h` harmonic off `B` with `(dh)_p = φ(p)`,
/// normalized to zero (unweighted) mean. Unique up to the additive
/// constant that the normalization removes.
pub fn solve_neumann(data: &NeumannData) -> Result<ScalarField> {
    let graph = data.graph();
    if !graph.is_connected() {
        return Err(Error::Disconnected(graph.describe()));
    }
    let n = graph.vertex_count();
    // (Lh)(x) = (dh)_x, so the problem is exactly Lh = φ extended by zero;
    // consistency is Σφ = 0, enforced by the data type.
    let mut rhs = DVector::zeros(n);
    for (p, phi) in data.boundary().iter().zip(data.fluxes()) {
        rhs[*p] = *phi;
    }
    let l = laplacian_matrix(graph);
    let free: Vec<usize> = (1..n).collect();
    let reduced = l.select_rows(free.iter()).select_columns(free.iter());
    let rhs_red = DVector::from_iterator(n - 1, free.iter().map(|&x| rhs[x]));
    let sol = linalg::solve_symmetric(&reduced, &rhs_red)?;
    let mut values = DVector::zeros(n);
    for (i, &x) in free.iter().enumerate() {
        values[x] = sol[i];
    }
    let mean = values.sum() / n as f64;
    values.add_scalar_mut(-mean);
    let h = ScalarField::from_vector(graph, values)?;

    // Defensive residual audit: Neumann derivatives match everywhere.
    let scale = 1.0 + data.fluxes().iter().fold(0.0f64, |a, f| a.max(f.abs()));
    for x in 0..n {
        let derivative = neumann_derivative(&h, x)?;
        let target = rhs[x];
        if (derivative - target).abs() > 1e-10 * scale {
            return Err(Error::Verification(format!(
                "Neumann residual {:.3e} at vertex {x}",
                (derivative - target).abs()
            )));
        }
    }
    Ok(h)
}

/// The boundary-driven stationary flow: `u = ∂h_φ` with the Neumann
/// solution `h_φ`, and the pressure as the signed measure `p = −½Γ(h,h)`.
/// The flow is verified against the boundary weak formulation:
/// `⟨u, ∂ψ⟩_H = 0` for every `ψ` vanishing on `B`.
pub fn ns_boundary_solution(
    m: &MeasureWeights,
    data: &NeumannData,
) -> Result<(OneForm, MeasureWeights)> {
    check_same_graph(m.graph(), data.graph())?;
    let h = solve_neumann(data)?;
    let u = derivation(&h);
    let pressure = energy_measure(&h, &h)?.scale(-0.5);

    // ⟨u, ∂1_x⟩_H = (dh)_x = 0 for interior x; audit against the interior
    // indicator basis.
    let graph = data.graph();
    let boundary: std::collections::BTreeSet<usize> =
        data.boundary().iter().copied().collect();
    let flux = forms::net_flux(&u);
    let scale = 1.0 + u.norm_h();
    for x in 0..graph.vertex_count() {
        if boundary.contains(&x) {
            continue;
        }
        if flux[x].abs() > 1e-10 * scale {
            return Err(Error::Verification(format!(
                "boundary weak formulation fails at interior vertex {x}: ⟨u, ∂1_x⟩ = {:.3e}",
                -flux[x]
            )));
        }
    }
    Ok((u, pressure))
}
