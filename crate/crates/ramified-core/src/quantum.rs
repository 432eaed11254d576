//! Complexified fields and forms, magnetic quadratic forms and
//! Hamiltonians, and the block Dirac operator.
//!
//! Complex inner products are linear in the first argument and
//! conjugate-linear in the second. A real form `a` (the vector potential)
//! and a real field `V` (the electric potential) induce the magnetic form
//!
//! ```text
//! E^{a,V}(f,g) = ⟨(−i∂−a)f, (−i∂−a)g⟩_H + ⟨fV, g⟩_{L₂(m)},
//! ```
//!
//! whose generator is the magnetic Hamiltonian `H^{a,V}` with
//! `⟨H^{a,V}f, g⟩_{L₂(m)} = E^{a,V}(f,g)`; it is self-adjoint in the
//! `m`-weighted inner product and nonnegative when `V ≥ 0`.
//!
//! Two discretizations of the covariant derivative are shipped:
//!
//! - **linear**: the literal `(−i∂−a)f` with the midpoint module action,
//!   `−i(f(y)−f(x)) − ((f(x)+f(y))/2)·a(x,y)`;
//! - **exponential**: Peierls phases with the edge phase `θ_xy = a(x,y)`
//!   split symmetrically between the endpoints,
//!   `−i(e^{−iθ_xy/2}f(y) − e^{+iθ_xy/2}f(x))`.
//!
//! The symmetric splitting makes the two conventions agree to first order
//! in the field strength (a one-sided phase factor would disagree already
//! at first order), while only `θ mod 2π` ever enters quadratic
//! quantities. Gauge transformations `a ↦ a + ∂λ` leave the exponential
//! spectra exactly invariant — the transformed derivative differs by the
//! unimodular edge factor `e^{i(λ(x)+λ(y))/2}` — whereas the linear
//! convention is gauge covariant only up to higher-order defects.
//!
//! The Dirac operator acts on `L₂(m) ⊕ H` as `D(f, v) = (∂†v, ∂f)` with
//! the true adjoint `∂† = −∂*`, making `D` symmetric in the combined inner
//! product; `D²` is block diagonal with blocks `∂†∂ = −A` and `∂∂† = −Δ₁`,
//! and `dim ker D = 1 + cycle rank`.

use std::sync::Arc;

use nalgebra::{DMatrix, DVector};
use num_complex::Complex64;

use crate::error::{Error, Result};
use crate::fields::{MeasureWeights, ScalarField};
use crate::forms::{fiber_view, OneForm};
use crate::fractal::{check_same_graph, LevelGraph};
use crate::linalg::{sorted_hermitian_eigen, sorted_symmetric_eigen};

/// A complex-valued vertex function.
#[derive(Clone, Debug)]
pub struct ComplexScalarField {
    graph: Arc<LevelGraph>,
    values: DVector<Complex64>,
}

impl ComplexScalarField {
    pub fn new(graph: &Arc<LevelGraph>, values: Vec<Complex64>) -> Result<Self> {
        Self::from_vector(graph, DVector::from_vec(values))
    }

    pub fn from_vector(graph: &Arc<LevelGraph>, values: DVector<Complex64>) -> Result<Self> {
        if values.len() != graph.vertex_count() {
            return Err(Error::Dimension(format!(
                "field has {} values but {} has {} vertices",
                values.len(),
                graph.describe(),
                graph.vertex_count()
            )));
        }
        if values.iter().any(|v| !v.re.is_finite() || !v.im.is_finite()) {
            return Err(Error::Precondition(
                "complex field values must be finite".to_owned(),
            ));
        }
        Ok(ComplexScalarField { graph: Arc::clone(graph), values })
    }

    pub fn from_fn(
        graph: &Arc<LevelGraph>,
        f: impl FnMut(usize) -> Complex64,
    ) -> Result<Self> {
        let values =
            DVector::from_iterator(graph.vertex_count(), (0..graph.vertex_count()).map(f));
        Self::from_vector(graph, values)
    }

    /// Complexification of a real field.
    pub fn from_real(f: &ScalarField) -> Self {
        ComplexScalarField {
            graph: Arc::clone(f.graph()),
            values: f.values().map(|x| Complex64::new(x, 0.0)),
        }
    }

    pub fn zeros(graph: &Arc<LevelGraph>) -> Self {
        ComplexScalarField {
            graph: Arc::clone(graph),
            values: DVector::zeros(graph.vertex_count()),
        }
    }

    pub fn graph(&self) -> &Arc<LevelGraph> {
        &self.graph
    }

    pub fn values(&self) -> &DVector<Complex64> {
        &self.values
    }

    pub fn value(&self, x: usize) -> Complex64 {
        self.values[x]
    }

    /// Hermitian inner product `Σ_x m(x) f(x) conj(g(x))`: linear in
    /// `self`, conjugate-linear in `other`.
    pub fn l2_inner(&self, other: &Self, m: &MeasureWeights) -> Result<Complex64> {
        check_same_graph(&self.graph, &other.graph)?;
        check_same_graph(&self.graph, m.graph())?;
        Ok((0..self.values.len())
            .map(|x| self.values[x] * other.values[x].conj() * m.value(x))
            .sum())
    }

    pub fn l2_norm_squared(&self, m: &MeasureWeights) -> Result<f64> {
        Ok(self.l2_inner(self, m)?.re)
    }

    pub fn scale(&self, factor: Complex64) -> Self {
        ComplexScalarField {
            graph: Arc::clone(&self.graph),
            values: self.values.map(|v| v * factor),
        }
    }

    pub fn add(&self, other: &Self) -> Result<Self> {
        check_same_graph(&self.graph, &other.graph)?;
        Ok(ComplexScalarField {
            graph: Arc::clone(&self.graph),
            values: &self.values + &other.values,
        })
    }

    pub fn sub(&self, other: &Self) -> Result<Self> {
        check_same_graph(&self.graph, &other.graph)?;
        Ok(ComplexScalarField {
            graph: Arc::clone(&self.graph),
            values: &self.values - &other.values,
        })
    }
}

/// A complex-valued 1-form, stored on canonical edges like its real
/// counterpart.
#[derive(Clone, Debug)]
pub struct ComplexOneForm {
    graph: Arc<LevelGraph>,
    values: DVector<Complex64>,
}

impl ComplexOneForm {
    pub fn from_vector(graph: &Arc<LevelGraph>, values: DVector<Complex64>) -> Result<Self> {
        if values.len() != graph.edge_count() {
            return Err(Error::Dimension(format!(
                "form has {} values but {} has {} edges",
                values.len(),
                graph.describe(),
                graph.edge_count()
            )));
        }
        Ok(ComplexOneForm { graph: Arc::clone(graph), values })
    }

    pub fn from_real(v: &OneForm) -> Self {
        ComplexOneForm {
            graph: Arc::clone(v.graph()),
            values: v.values().map(|x| Complex64::new(x, 0.0)),
        }
    }

    pub fn graph(&self) -> &Arc<LevelGraph> {
        &self.graph
    }

    pub fn values(&self) -> &DVector<Complex64> {
        &self.values
    }

    pub fn value(&self, edge: usize) -> Complex64 {
        self.values[edge]
    }

    /// Hermitian inner product `Σ_e c_e v_e conj(w_e)`.
    pub fn inner_h(&self, other: &Self) -> Result<Complex64> {
        check_same_graph(&self.graph, &other.graph)?;
        Ok(self
            .graph
            .edges()
            .iter()
            .enumerate()
            .map(|(i, e)| self.values[i] * other.values[i].conj() * e.conductance)
            .sum())
    }

    pub fn norm_h(&self) -> f64 {
        self.inner_h(self).expect("same graph").re.sqrt()
    }

    pub fn sub(&self, other: &Self) -> Result<Self> {
        check_same_graph(&self.graph, &other.graph)?;
        Ok(ComplexOneForm {
            graph: Arc::clone(&self.graph),
            values: &self.values - &other.values,
        })
    }
}

/// The complexified derivation `(∂f)(x,y) = f(y) − f(x)`.
pub fn derivation_complex(f: &ComplexScalarField) -> ComplexOneForm {
    let graph = &f.graph;
    let values = DVector::from_iterator(
        graph.edge_count(),
        graph.edges().iter().map(|e| f.values[e.dst] - f.values[e.src]),
    );
    ComplexOneForm { graph: Arc::clone(graph), values }
}

/// Which discretization of the covariant derivative to use.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum MagneticConvention {
    /// `(−i∂−a)f` with the midpoint action; literal but only approximately
    /// gauge covariant.
    Linear,
    /// Symmetrically split Peierls phases; exactly gauge invariant
    /// spectra.
    Exponential,
}

/// A magnetic field configuration: real vector potential `a`, real
/// electric potential `V`, and the convention used to discretize the
/// covariant derivative.
#[derive(Clone, Debug)]
pub struct MagneticConfig {
    a: OneForm,
    potential: ScalarField,
    convention: MagneticConvention,
}

impl MagneticConfig {
    pub fn new(
        a: OneForm,
        potential: ScalarField,
        convention: MagneticConvention,
    ) -> Result<Self> {
        check_same_graph(a.graph(), potential.graph())?;
        Ok(MagneticConfig { a, potential, convention })
    }

    /// A configuration with `a = 0`, `V = 0`.
    pub fn free(graph: &Arc<LevelGraph>, convention: MagneticConvention) -> Self {
        MagneticConfig {
            a: OneForm::zeros(graph),
            potential: ScalarField::zeros(graph),
            convention,
        }
    }

    pub fn vector_potential(&self) -> &OneForm {
        &self.a
    }

    pub fn electric_potential(&self) -> &ScalarField {
        &self.potential
    }

    pub fn convention(&self) -> MagneticConvention {
        self.convention
    }

    pub fn graph(&self) -> &Arc<LevelGraph> {
        self.a.graph()
    }

    /// The essential-sup fiber norm of the vector potential — finite on
    /// every finite graph, reported for interface fidelity.
    pub fn vector_potential_sup(&self, m: &MeasureWeights) -> Result<f64> {
        Ok(fiber_view(m, &self.a)?.sup())
    }

    /// Per-edge endpoint coefficients `(coeff of f(src), coeff of f(dst))`
    /// of the covariant derivative on the canonical edge `e`.
    fn edge_coefficients(&self, e: usize) -> (Complex64, Complex64) {
        let i = Complex64::new(0.0, 1.0);
        let a = self.a.value(e);
        match self.convention {
            MagneticConvention::Linear => (i - a * 0.5, -i - a * 0.5),
            MagneticConvention::Exponential => {
                let half = Complex64::new(0.0, 0.5 * a);
                (i * half.exp(), -i * (-half).exp())
            }
        }
    }
}

/// The covariant derivative `(−i∂−a)f` in the configured convention.
pub fn magnetic_derivative(
    cfg: &MagneticConfig,
    f: &ComplexScalarField,
) -> Result<ComplexOneForm> {
    check_same_graph(cfg.graph(), &f.graph)?;
    let graph = cfg.graph();
    let values = DVector::from_iterator(
        graph.edge_count(),
        graph.edges().iter().enumerate().map(|(idx, e)| {
            let (cs, cd) = cfg.edge_coefficients(idx);
            cs * f.values[e.src] + cd * f.values[e.dst]
        }),
    );
    Ok(ComplexOneForm { graph: Arc::clone(graph), values })
}

/// The sesquilinear magnetic form
/// `E^{a,V}(f,g) = ⟨(−i∂−a)f, (−i∂−a)g⟩_H + ⟨fV, g⟩_{L₂(m)}`.
pub fn magnetic_form(
    cfg: &MagneticConfig,
    m: &MeasureWeights,
    f: &ComplexScalarField,
    g: &ComplexScalarField,
) -> Result<Complex64> {
    check_same_graph(cfg.graph(), m.graph())?;
    let df = magnetic_derivative(cfg, f)?;
    let dg = magnetic_derivative(cfg, g)?;
    let kinetic = df.inner_h(&dg)?;
    check_same_graph(m.graph(), &f.graph)?;
    check_same_graph(m.graph(), &g.graph)?;
    let potential: Complex64 = (0..m.graph().vertex_count())
        .map(|x| {
            f.values[x] * g.values[x].conj() * (cfg.potential.value(x) * m.value(x))
        })
        .sum();
    Ok(kinetic + potential)
}

/// The magnetic Hamiltonian `H^{a,V}` with
/// `⟨Hf, g⟩_{L₂(m)} = E^{a,V}(f,g)`, kept together with its Hermitian
/// symmetrization `M^{1/2} H M^{−1/2}`.
#[derive(Clone, Debug)]
pub struct MagneticHamiltonian {
    matrix: DMatrix<Complex64>,
    symmetrized: DMatrix<Complex64>,
    m: MeasureWeights,
}

impl MagneticHamiltonian {
    /// The operator matrix in the vertex basis (self-adjoint with respect
    /// to the `m`-weighted inner product, not entrywise Hermitian).
    pub fn matrix(&self) -> &DMatrix<Complex64> {
        &self.matrix
    }

    /// The entrywise-Hermitian conjugation `M^{1/2} H M^{−1/2}`, sharing
    /// the spectrum of `H`.
    pub fn symmetrized(&self) -> &DMatrix<Complex64> {
        &self.symmetrized
    }

    pub fn measure(&self) -> &MeasureWeights {
        &self.m
    }

    pub fn apply(&self, f: &ComplexScalarField) -> Result<ComplexScalarField> {
        check_same_graph(self.m.graph(), &f.graph)?;
        ComplexScalarField::from_vector(self.m.graph(), &self.matrix * &f.values)
    }

    /// All eigenvalues, real and sorted ascending, with multiplicity.
    pub fn spectrum(&self) -> Vec<f64> {
        let (values, _) = sorted_hermitian_eigen(self.symmetrized.clone());
        values.iter().copied().collect()
    }
}

/// Assemble `H^{a,V}`. The weighted matrix `M·H = B†CB + M·V` is exactly
/// Hermitian by construction, so `H` is self-adjoint in `L₂(m)`; for
/// `a = 0`, `V = 0` it reduces to `−A`.
pub fn assemble_magnetic_hamiltonian(
    cfg: &MagneticConfig,
    m: &MeasureWeights,
) -> Result<MagneticHamiltonian> {
    check_same_graph(cfg.graph(), m.graph())?;
    m.ensure_strictly_positive()?;
    let graph = m.graph();
    let n = graph.vertex_count();

    // K = B†CB + M·V, with B the per-edge covariant difference.
    let mut k = DMatrix::<Complex64>::zeros(n, n);
    for (idx, e) in graph.edges().iter().enumerate() {
        let (cs, cd) = cfg.edge_coefficients(idx);
        let c = Complex64::new(e.conductance, 0.0);
        k[(e.src, e.src)] += c * cs.conj() * cs;
        k[(e.src, e.dst)] += c * cs.conj() * cd;
        k[(e.dst, e.src)] += c * cd.conj() * cs;
        k[(e.dst, e.dst)] += c * cd.conj() * cd;
    }
    for x in 0..n {
        k[(x, x)] += Complex64::new(m.value(x) * cfg.potential.value(x), 0.0);
    }

    let mut matrix = k.clone();
    let mut symmetrized = k;
    for x in 0..n {
        let inv = 1.0 / m.value(x);
        let half = m.value(x).sqrt();
        for y in 0..n {
            matrix[(x, y)] *= inv;
            symmetrized[(x, y)] *= 1.0 / half;
        }
        for y in 0..n {
            symmetrized[(y, x)] *= 1.0 / half;
        }
    }
    Ok(MagneticHamiltonian { matrix, symmetrized, m: m.clone() })
}

/// The gauge transformation `a ↦ a + ∂λ` (the electric potential and the
/// convention are unchanged). In the exponential convention the spectrum
/// of `H^{a,V}` is exactly invariant; in the linear convention only up to
/// a defect vanishing with `λ`.
pub fn gauge_transform(cfg: &MagneticConfig, lambda: &ScalarField) -> Result<MagneticConfig> {
    check_same_graph(cfg.graph(), lambda.graph())?;
    let shifted = cfg.a.add(&crate::forms::derivation(lambda))?;
    Ok(MagneticConfig {
        a: shifted,
        potential: cfg.potential.clone(),
        convention: cfg.convention,
    })
}

/// The block Dirac operator `D(f, v) = (∂†v, ∂f)` on `L₂(m) ⊕ H`, with
/// `∂† = −∂*` the true adjoint of the derivation. Holds the symmetrized
/// matrix `[[0, Gᵀ], [G, 0]]`, `G = C^{1/2} ∂ M^{−1/2}`, whose spectrum is
/// that of `D`.
#[derive(Clone, Debug)]
pub struct DiracOperator {
    m: MeasureWeights,
    symmetrized: DMatrix<f64>,
}

impl DiracOperator {
    pub fn measure(&self) -> &MeasureWeights {
        &self.m
    }

    pub fn graph(&self) -> &Arc<LevelGraph> {
        self.m.graph()
    }

    /// The symmetrized block matrix of size `(V + E)²`.
    pub fn symmetrized(&self) -> &DMatrix<f64> {
        &self.symmetrized
    }

    /// Apply `D` to a pair: `D(f, v) = (∂†v, ∂f)`.
    pub fn apply(&self, f: &ScalarField, v: &OneForm) -> Result<(ScalarField, OneForm)> {
        check_same_graph(self.m.graph(), f.graph())?;
        check_same_graph(self.m.graph(), v.graph())?;
        let divergence = crate::forms::divergence(&self.m, v)?;
        let scalar_out = divergence.scale(-1.0);
        let form_out = crate::forms::derivation(f);
        Ok((scalar_out, form_out))
    }
}

/// Assemble the Dirac operator for the given measure.
pub fn dirac_assemble(m: &MeasureWeights) -> Result<DiracOperator> {
    m.ensure_strictly_positive()?;
    let graph = m.graph();
    let n = graph.vertex_count();
    let e_count = graph.edge_count();
    let dim = n + e_count;
    let mut sym = DMatrix::<f64>::zeros(dim, dim);
    for (i, e) in graph.edges().iter().enumerate() {
        // G = C^{1/2} ∂ M^{−1/2}: row i has −√(c/m_src) at src and
        // +√(c/m_dst) at dst.
        let src_entry = -(e.conductance / m.value(e.src)).sqrt();
        let dst_entry = (e.conductance / m.value(e.dst)).sqrt();
        sym[(n + i, e.src)] = src_entry;
        sym[(e.src, n + i)] = src_entry;
        sym[(n + i, e.dst)] = dst_entry;
        sym[(e.dst, n + i)] = dst_entry;
    }
    Ok(DiracOperator { m: m.clone(), symmetrized: sym })
}

/// All eigenvalues of `D`, sorted ascending with multiplicity. The
/// multiset is symmetric under negation, and the kernel dimension is
/// `1 + cycle rank`.
pub fn dirac_spectrum(d: &DiracOperator) -> Result<Vec<f64>> {
    let (values, _) = sorted_symmetric_eigen(d.symmetrized.clone());
    Ok(values.iter().copied().collect())
}

/// Spectra of the two blocks of `D²`: `(spec(−A), spec(−Δ₁))`, each sorted
/// ascending.
pub fn dirac_square_block_spectra(d: &DiracOperator) -> Result<(Vec<f64>, Vec<f64>)> {
    let graph = d.m.graph();
    let n = graph.vertex_count();
    let dim = d.symmetrized.nrows();
    let g_block = d.symmetrized.view((n, 0), (dim - n, n)).into_owned();
    let scalar_block = g_block.transpose() * &g_block;
    let form_block = &g_block * g_block.transpose();
    let (scalar_spec, _) = sorted_symmetric_eigen(scalar_block);
    let (form_spec, _) = sorted_symmetric_eigen(form_block);
    Ok((
        scalar_spec.iter().copied().collect(),
        form_spec.iter().copied().collect(),
    ))
}
