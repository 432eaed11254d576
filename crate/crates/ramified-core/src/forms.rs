//! The Hilbert space of 1-forms at graph level.
//!
//! A 1-form assigns an antisymmetric value `v(x,y) = −v(y,x)` to every
//! edge; one value per canonical edge is stored. The space carries the
//! inner product
//!
//! ```text
//! ⟨v, w⟩_H = Σ_{edges {x,y}} c_xy v(x,y) w(x,y),
//! ```
//!
//! matching the no-½ energy convention so that the derivation
//! `(∂f)(x,y) = f(y) − f(x)` is an isometry on gradients:
//! `‖∂f‖²_H = E(f,f)` exactly.
//!
//! Scalar functions act on forms through the midpoint rule
//! `(g·v)(x,y) = ((g(x)+g(y))/2)·v(x,y)`; this is the unique symmetric
//! action for which the Leibniz rule `∂(fg) = f·∂g + g·∂f`, the energy
//! measure identity, and the divergence product rule
//! `∂*(g·∂f) = g·Af + dΓ(f,g)/dm` all hold exactly at every level, and it
//! makes left and right multiplication agree.
//!
//! The divergence `(∂*v)(x) = m(x)⁻¹ Σ_{y~x} c_xy v(x,y)` is the negative
//! adjoint of the derivation: `⟨u, ∂*v⟩_{L₂(m)} = −⟨∂u, v⟩_H`. Its kernel —
//! the harmonic forms — is the orthogonal complement of the exact forms and
//! has dimension equal to the cycle rank of the graph, which is the
//! graph-level substitute for the first cohomology of the limit set.

use std::sync::Arc;

use nalgebra::DVector;

use crate::energy::laplacian_matrix;
use crate::error::{Error, Result};
use crate::fields::{MeasureWeights, ScalarField};
use crate::fractal::{check_same_graph, LevelGraph};
use crate::linalg;

/// An element of the 1-form space `H`: one real value per canonical edge,
/// with the reversed orientation implied by antisymmetry.
#[derive(Clone, Debug)]
pub struct OneForm {
    graph: Arc<LevelGraph>,
    values: DVector<f64>,
}

impl OneForm {
    /// Wrap per-edge values in canonical orientation (`src < dst`).
    pub fn new(graph: &Arc<LevelGraph>, values: Vec<f64>) -> Result<Self> {
        Self::from_vector(graph, DVector::from_vec(values))
    }

    pub fn from_vector(graph: &Arc<LevelGraph>, values: DVector<f64>) -> Result<Self> {
        if values.len() != graph.edge_count() {
            return Err(Error::Dimension(format!(
                "form has {} values but {} has {} edges",
                values.len(),
                graph.describe(),
                graph.edge_count()
            )));
        }
        if let Some(e) = values.iter().position(|v| !v.is_finite()) {
            return Err(Error::Precondition(format!(
                "form value on edge {e} is not finite"
            )));
        }
        Ok(OneForm { graph: Arc::clone(graph), values })
    }

    pub fn zeros(graph: &Arc<LevelGraph>) -> Self {
        OneForm {
            graph: Arc::clone(graph),
            values: DVector::zeros(graph.edge_count()),
        }
    }

    pub fn from_fn(graph: &Arc<LevelGraph>, f: impl FnMut(usize) -> f64) -> Result<Self> {
        let values =
            DVector::from_iterator(graph.edge_count(), (0..graph.edge_count()).map(f));
        Self::from_vector(graph, values)
    }

    pub fn graph(&self) -> &Arc<LevelGraph> {
        &self.graph
    }

    /// Values in canonical edge order.
    pub fn values(&self) -> &DVector<f64> {
        &self.values
    }

    /// Value on the canonical edge with the given index.
    pub fn value(&self, edge: usize) -> f64 {
        self.values[edge]
    }

    /// Oriented value `v(x, y)`, antisymmetric under swapping the
    /// endpoints; `None` if `{x,y}` is not an edge.
    pub fn oriented_value(&self, x: usize, y: usize) -> Option<f64> {
        let idx = self.graph.edge_position(x, y)?;
        Some(if x < y { self.values[idx] } else { -self.values[idx] })
    }

    pub fn add(&self, other: &OneForm) -> Result<OneForm> {
        check_same_graph(&self.graph, &other.graph)?;
        Ok(OneForm {
            graph: Arc::clone(&self.graph),
            values: &self.values + &other.values,
        })
    }

    pub fn sub(&self, other: &OneForm) -> Result<OneForm> {
        check_same_graph(&self.graph, &other.graph)?;
        Ok(OneForm {
            graph: Arc::clone(&self.graph),
            values: &self.values - &other.values,
        })
    }

    pub fn scale(&self, factor: f64) -> OneForm {
        OneForm {
            graph: Arc::clone(&self.graph),
            values: &self.values * factor,
        }
    }

    pub fn norm_h(&self) -> f64 {
        inner(self, self).expect("same graph").sqrt()
    }
}

/// Orthogonal Hodge decomposition `v = ∂f + w` of a 1-form.
#[derive(Clone, Debug)]
pub struct HodgeParts {
    /// The potential `f` solving `Af = ∂*v`, normalized to mean zero in
    /// `L₂(m)`.
    pub potential: ScalarField,
    /// The exact part `∂f`.
    pub exact: OneForm,
    /// The co-closed remainder `w = v − ∂f ∈ ker ∂*`.
    pub harmonic: OneForm,
}

/// Fiberwise norms of a 1-form: `‖v_x‖²_{H,x} = (2m(x))⁻¹ Σ_{y~x} c_xy
/// v(x,y)²`, the direct-integral picture of `H` over the vertex set.
#[derive(Clone, Debug)]
pub struct FiberView {
    norms_squared: Vec<f64>,
    measure: MeasureWeights,
}

impl FiberView {
    /// `‖v_x‖_{H,x}`.
    pub fn norm(&self, x: usize) -> f64 {
        self.norms_squared[x].sqrt()
    }

    pub fn norm_squared(&self, x: usize) -> f64 {
        self.norms_squared[x]
    }

    pub fn norms_squared(&self) -> &[f64] {
        &self.norms_squared
    }

    pub fn measure(&self) -> &MeasureWeights {
        &self.measure
    }

    /// `Σ_x m(x) ‖v_x‖²_{H,x}`; equals `‖v‖²_H` exactly.
    pub fn integral(&self) -> f64 {
        self.norms_squared
            .iter()
            .zip(self.measure.values().iter())
            .map(|(&n2, &m)| m * n2)
            .sum()
    }

    /// `sup_x ‖v_x‖_{H,x}`; always finite on a finite graph, so every form
    /// is an essentially bounded section of the fiber bundle.
    pub fn sup(&self) -> f64 {
        self.norms_squared
            .iter()
            .fold(0.0f64, |acc, &n2| acc.max(n2))
            .sqrt()
    }

    /// Uniform boundedness of the fibers; trivially true at graph level and
    /// reported for interface fidelity.
    pub fn is_uniformly_bounded(&self) -> bool {
        self.sup().is_finite()
    }
}

/// The derivation `∂`: `(∂f)(x,y) = f(y) − f(x)`.
pub fn derivation(f: &ScalarField) -> OneForm {
    let graph = f.graph();
    let values = DVector::from_iterator(
        graph.edge_count(),
        graph.edges().iter().map(|e| f.value(e.dst) - f.value(e.src)),
    );
    OneForm { graph: Arc::clone(graph), values }
}

/// The inner product `⟨v, w⟩_H = Σ_edges c_xy v(x,y) w(x,y)`.
pub fn inner(v: &OneForm, w: &OneForm) -> Result<f64> {
    check_same_graph(&v.graph, &w.graph)?;
    Ok(v
        .graph
        .edges()
        .iter()
        .enumerate()
        .map(|(i, e)| e.conductance * v.values[i] * w.values[i])
        .sum())
}

/// The midpoint module action `(g·v)(x,y) = ((g(x)+g(y))/2) v(x,y)`.
pub fn action_scalar(g: &ScalarField, v: &OneForm) -> Result<OneForm> {
    check_same_graph(g.graph(), &v.graph)?;
    let graph = &v.graph;
    let values = DVector::from_iterator(
        graph.edge_count(),
        graph
            .edges()
            .iter()
            .enumerate()
            .map(|(i, e)| 0.5 * (g.value(e.src) + g.value(e.dst)) * v.values[i]),
    );
    Ok(OneForm { graph: Arc::clone(graph), values })
}

/// The simple tensor `a ⊗ b` realized as the form `b·∂a`. Sums of such
/// tensors fill the whole edge space on connected graphs.
pub fn embed_simple_tensor(a: &ScalarField, b: &ScalarField) -> Result<OneForm> {
    action_scalar(b, &derivation(a))
}

/// The divergence `(∂*v)(x) = m(x)⁻¹ Σ_{y~x} c_xy v(x,y)`; satisfies
/// `⟨u, ∂*v⟩_{L₂(m)} = −⟨∂u, v⟩_H` for every `u`.
pub fn divergence(m: &MeasureWeights, v: &OneForm) -> Result<ScalarField> {
    check_same_graph(m.graph(), &v.graph)?;
    m.ensure_strictly_positive()?;
    let graph = &v.graph;
    let mut out = net_flux(v);
    for x in 0..graph.vertex_count() {
        out[x] /= m.value(x);
    }
    ScalarField::from_vector(graph, out)
}

/// `m(x)·(∂*v)(x) = Σ_{y~x} c_xy v(x,y)`, the measure-free net flux.
pub(crate) fn net_flux(v: &OneForm) -> DVector<f64> {
    let graph = &v.graph;
    let mut out = DVector::zeros(graph.vertex_count());
    for (i, e) in graph.edges().iter().enumerate() {
        let flux = e.conductance * v.values[i];
        out[e.src] += flux;
        out[e.dst] -= flux;
    }
    out
}

/// Hodge decomposition `v = ∂f + w` with `f ⊥ constants` in `L₂(m)` and
/// `w ∈ ker ∂*`; the parts are H-orthogonal and `∂*v = Af`.
pub fn hodge_decompose(m: &MeasureWeights, v: &OneForm) -> Result<HodgeParts> {
    check_same_graph(m.graph(), &v.graph)?;
    m.ensure_strictly_positive()?;
    let graph = &v.graph;
    if !graph.is_connected() {
        return Err(Error::Disconnected(graph.describe()));
    }
    let n = graph.vertex_count();

    // Af = ∂*v reads (Lf)(x) = −Σ_y c_xy v(x,y); the right side sums to
    // zero by antisymmetry, so grounding one vertex makes the system
    // uniquely solvable.
    let rhs_full = -net_flux(v);
    let l = laplacian_matrix(graph);
    let free: Vec<usize> = (1..n).collect();
    let l_red = l.select_rows(free.iter()).select_columns(free.iter());
    let rhs = DVector::from_iterator(n - 1, free.iter().map(|&x| rhs_full[x]));
    let f_red = linalg::solve_symmetric(&l_red, &rhs)?;
    let mut f_values = DVector::zeros(n);
    for (idx, &x) in free.iter().enumerate() {
        f_values[x] = f_red[idx];
    }
    let potential = ScalarField::from_vector(graph, f_values)?.center(m)?;
    let exact = derivation(&potential);
    let harmonic = v.sub(&exact)?;

    // The remainder must be co-closed; a failure here indicates a solver
    // breakdown, not bad input.
    let residual_flux = net_flux(&harmonic);
    let min_m = m.values().iter().cloned().fold(f64::INFINITY, f64::min);
    let scale = 1.0 + v.norm_h();
    let residual = residual_flux
        .iter()
        .fold(0.0f64, |acc, &r| acc.max(r.abs()))
        / min_m;
    if residual > 1e-10 * scale {
        return Err(Error::Verification(format!(
            "Hodge remainder is not divergence-free: residual {residual:.3e}"
        )));
    }
    Ok(HodgeParts { potential, exact, harmonic })
}

/// An H-orthonormal basis of `ker ∂*`, one element per independent cycle.
///
/// The basis is built from the fundamental cycles of a breadth-first
/// spanning tree: a unit flow around a cycle, divided edgewise by the
/// conductance, has zero net flux at every vertex exactly. The kernel of
/// the divergence does not depend on the reference measure; the measure
/// argument only fixes the ambient space.
pub fn harmonic_basis(m: &MeasureWeights) -> Result<Vec<OneForm>> {
    m.ensure_strictly_positive()?;
    let graph = m.graph();
    if !graph.is_connected() {
        return Err(Error::Disconnected(graph.describe()));
    }
    let n = graph.vertex_count();

    // Breadth-first spanning tree with parent pointers.
    let mut parent: Vec<Option<(usize, usize)>> = vec![None; n]; // (parent vertex, edge idx)
    let mut depth = vec![0usize; n];
    let mut visited = vec![false; n];
    let mut tree_edge = vec![false; graph.edge_count()];
    let mut queue = std::collections::VecDeque::new();
    visited[0] = true;
    queue.push_back(0);
    while let Some(x) = queue.pop_front() {
        for (y, e) in graph.neighbors(x) {
            if !visited[y] {
                visited[y] = true;
                parent[y] = Some((x, e));
                depth[y] = depth[x] + 1;
                tree_edge[e] = true;
                queue.push_back(y);
            }
        }
    }

    // One circulation per non-tree edge: flow 1 along (src → dst), then
    // back through the tree from dst to src.
    let mut raw: Vec<DVector<f64>> = Vec::new();
    for (idx, e) in graph.edges().iter().enumerate() {
        if tree_edge[idx] {
            continue;
        }
        let mut coeffs = DVector::zeros(graph.edge_count());
        // Unit flow along the chord, oriented src → dst.
        coeffs[idx] += 1.0 / e.conductance;
        // Tree path dst → src: climb both endpoints to their meeting point.
        let (mut a, mut b) = (e.dst, e.src); // flow runs a → … → b
        while depth[a] > depth[b] {
            let (p, pe) = parent[a].expect("non-root has a parent");
            // Traversed step a → p.
            coeffs[pe] += flow_sign(graph, pe, a) / graph.edges()[pe].conductance;
            a = p;
        }
        while depth[b] > depth[a] {
            let (p, pe) = parent[b].expect("non-root has a parent");
            // The path runs p → b here, against the climb.
            coeffs[pe] += flow_sign(graph, pe, p) / graph.edges()[pe].conductance;
            b = p;
        }
        while a != b {
            let (pa, ea) = parent[a].expect("non-root has a parent");
            let (pb, eb) = parent[b].expect("non-root has a parent");
            coeffs[ea] += flow_sign(graph, ea, a) / graph.edges()[ea].conductance;
            coeffs[eb] += flow_sign(graph, eb, pb) / graph.edges()[eb].conductance;
            a = pa;
            b = pb;
        }
        raw.push(coeffs);
    }

    let edges = graph.edges();
    let basis_vectors = linalg::modified_gram_schmidt(
        raw,
        |u, v| {
            edges
                .iter()
                .enumerate()
                .map(|(i, e)| e.conductance * u[i] * v[i])
                .sum()
        },
        1e-10,
    );
    debug_assert_eq!(
        basis_vectors.len(),
        graph.edge_count() + 1 - graph.vertex_count()
    );
    basis_vectors
        .into_iter()
        .map(|values| OneForm::from_vector(graph, values))
        .collect()
}

/// Sign of a unit flow leaving `from` over canonical edge `edge`.
fn flow_sign(graph: &LevelGraph, edge: usize, from: usize) -> f64 {
    if graph.edges()[edge].src == from {
        1.0
    } else {
        -1.0
    }
}

/// The 1-form Laplacian `Δ₁ = ∂∂*`; self-adjoint in `⟨·,·⟩_H` with
/// `⟨Δ₁v, v⟩_H = −‖∂*v‖²_{L₂(m)} ≤ 0`.
pub fn form_laplacian_apply(m: &MeasureWeights, v: &OneForm) -> Result<OneForm> {
    let div = divergence(m, v)?;
    Ok(derivation(&div))
}

/// The fiberwise pairing `x ↦ ⟨v_x, w_x⟩_{H,x} = (2m(x))⁻¹ Σ_{y~x} c_xy
/// v(x,y) w(x,y)`, the polarization of the fiber norms. Integrating it
/// against `m` recovers `⟨v, w⟩_H`.
pub fn fiber_pairing(m: &MeasureWeights, v: &OneForm, w: &OneForm) -> Result<ScalarField> {
    check_same_graph(m.graph(), &v.graph)?;
    check_same_graph(m.graph(), &w.graph)?;
    m.ensure_strictly_positive()?;
    let graph = &v.graph;
    let mut sums = DVector::zeros(graph.vertex_count());
    for (i, e) in graph.edges().iter().enumerate() {
        let contribution = e.conductance * v.values[i] * w.values[i];
        sums[e.src] += contribution;
        sums[e.dst] += contribution;
    }
    for x in 0..graph.vertex_count() {
        sums[x] /= 2.0 * m.value(x);
    }
    ScalarField::from_vector(graph, sums)
}

/// Fiberwise norms of `v` with respect to `m`; the direct-integral
/// identity `Σ_x m(x)‖v_x‖² = ‖v‖²_H` holds exactly.
pub fn fiber_view(m: &MeasureWeights, v: &OneForm) -> Result<FiberView> {
    check_same_graph(m.graph(), &v.graph)?;
    m.ensure_strictly_positive()?;
    let graph = &v.graph;
    let mut sums = vec![0.0; graph.vertex_count()];
    for (i, e) in graph.edges().iter().enumerate() {
        let contribution = e.conductance * v.values[i] * v.values[i];
        sums[e.src] += contribution;
        sums[e.dst] += contribution;
    }
    let norms_squared: Vec<f64> = sums
        .iter()
        .enumerate()
        .map(|(x, &s)| s / (2.0 * m.value(x)))
        .collect();
    Ok(FiberView { norms_squared, measure: m.clone() })
}
