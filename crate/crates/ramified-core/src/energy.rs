//! The Dirichlet energy form and its derived objects.
//!
//! On a level graph with conductances `c_xy` the energy form is
//!
//! ```text
//! E(f, g) = Σ_{edges {x,y}} c_xy (f(x) − f(y)) (g(x) − g(y)),
//! ```
//!
//! summed once per undirected edge (no ½ prefactor; the matching edge inner
//! product on 1-forms also carries no ½, so that `‖∂f‖²_H = E(f,f)` holds
//! exactly). Together with a strictly positive reference measure `m` it
//! determines
//!
//! - the mutual energy measures `Γ(g,h)`, vertex-supported with
//!   `Γ(g,h)(x) = ½ Σ_{y~x} c_xy (g(x)−g(y))(h(x)−h(y))`,
//! - the generator `(Af)(x) = m(x)⁻¹ Σ_{y~x} c_xy (f(y)−f(x))`, which
//!   satisfies `⟨Af, g⟩_{L₂(m)} = −E(f, g)` exactly,
//! - spectral-gap and Poincaré constants,
//! - harmonic extensions, Dirichlet (Green) solves, the conductance
//!   renormalization check, and Kusuoka-type reference measures.

use std::sync::Arc;

use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};
use crate::fields::{MeasureWeights, ScalarField};
use crate::fractal::{build_level, check_same_graph, FractalSpec, LevelGraph};
use crate::linalg;

/// Total energy together with the contribution of each edge.
#[derive(Clone, Debug)]
pub struct EnergyReport {
    /// `E(f, g)`, equal to the sum of `per_edge`.
    pub energy: f64,
    /// `c_xy (f(x)−f(y))(g(x)−g(y))` per canonical edge.
    pub per_edge: Vec<f64>,
}

/// The mutual energy `E(g1, g2)`; symmetric and bilinear, nonnegative on
/// the diagonal.
pub fn energy(g1: &ScalarField, g2: &ScalarField) -> Result<f64> {
    Ok(energy_report(g1, g2)?.energy)
}

/// Energy with per-edge contributions, for diagnostics.
pub fn energy_report(g1: &ScalarField, g2: &ScalarField) -> Result<EnergyReport> {
    check_same_graph(g1.graph(), g2.graph())?;
    let graph = g1.graph();
    let mut per_edge = Vec::with_capacity(graph.edge_count());
    let mut total = 0.0;
    for e in graph.edges() {
        let contribution = e.conductance
            * (g1.value(e.src) - g1.value(e.dst))
            * (g2.value(e.src) - g2.value(e.dst));
        per_edge.push(contribution);
        total += contribution;
    }
    Ok(EnergyReport { energy: total, per_edge })
}

/// The mutual energy measure `Γ(g, h)`, a signed vertex measure with
/// `Σ_x Γ(g,h)(x) = E(g,h)` and `Γ(g,g) ≥ 0` pointwise. It satisfies the
/// defining identity
/// `2 Σ_x f(x) Γ(g,h)(x) = E(fg,h) + E(fh,g) − E(gh,f)` exactly.
pub fn energy_measure(g: &ScalarField, h: &ScalarField) -> Result<MeasureWeights> {
    check_same_graph(g.graph(), h.graph())?;
    let graph = g.graph();
    let mut weights = vec![0.0; graph.vertex_count()];
    for e in graph.edges() {
        let half = 0.5 * e.conductance * (g.value(e.src) - g.value(e.dst))
            * (h.value(e.src) - h.value(e.dst));
        weights[e.src] += half;
        weights[e.dst] += half;
    }
    MeasureWeights::signed(graph, weights)
}

/// Apply the L₂(m)-generator: `(Af)(x) = m(x)⁻¹ Σ_{y~x} c_xy (f(y)−f(x))`.
pub fn generator_apply(m: &MeasureWeights, f: &ScalarField) -> Result<ScalarField> {
    check_same_graph(m.graph(), f.graph())?;
    m.ensure_strictly_positive()?;
    let graph = f.graph();
    let mut out = vec![0.0; graph.vertex_count()];
    for e in graph.edges() {
        let diff = f.value(e.dst) - f.value(e.src);
        out[e.src] += e.conductance * diff;
        out[e.dst] -= e.conductance * diff;
    }
    for (x, v) in out.iter_mut().enumerate() {
        *v /= m.value(x);
    }
    ScalarField::new(graph, out)
}

/// The graph Laplacian `L` with `(Lf)(x) = Σ_{y~x} c_xy (f(x) − f(y))`, so
/// that `E(f,g) = fᵀ L g` and `A = −M⁻¹L`.
pub fn laplacian_matrix(graph: &LevelGraph) -> DMatrix<f64> {
    let n = graph.vertex_count();
    let mut l = DMatrix::zeros(n, n);
    for e in graph.edges() {
        l[(e.src, e.src)] += e.conductance;
        l[(e.dst, e.dst)] += e.conductance;
        l[(e.src, e.dst)] -= e.conductance;
        l[(e.dst, e.src)] -= e.conductance;
    }
    l
}

/// Matrix of the generator `A = −M⁻¹L` in the vertex basis.
pub fn generator_matrix(m: &MeasureWeights) -> Result<DMatrix<f64>> {
    m.ensure_strictly_positive()?;
    let graph = m.graph();
    let mut a = laplacian_matrix(graph);
    for x in 0..graph.vertex_count() {
        let scale = -1.0 / m.value(x);
        a.row_mut(x).scale_mut(scale);
    }
    Ok(a)
}

/// `M^{−1/2} L M^{−1/2}`, the symmetric form of `−A`; positive
/// semidefinite with kernel `M^{1/2}·constants` on connected graphs.
pub(crate) fn symmetrized_laplacian(m: &MeasureWeights) -> DMatrix<f64> {
    let graph = m.graph();
    let n = graph.vertex_count();
    let inv_sqrt: Vec<f64> = (0..n).map(|x| 1.0 / m.value(x).sqrt()).collect();
    let mut s = laplacian_matrix(graph);
    for x in 0..n {
        for y in 0..n {
            s[(x, y)] *= inv_sqrt[x] * inv_sqrt[y];
        }
    }
    s
}

/// Matrix-free application of `M^{−1/2} L M^{−1/2}`.
fn symmetrized_apply(m: &MeasureWeights, v: &DVector<f64>) -> DVector<f64> {
    let graph = m.graph();
    let n = graph.vertex_count();
    let mut scaled = DVector::zeros(n);
    for x in 0..n {
        scaled[x] = v[x] / m.value(x).sqrt();
    }
    let mut out = DVector::zeros(n);
    for e in graph.edges() {
        let diff = scaled[e.src] - scaled[e.dst];
        out[e.src] += e.conductance * diff;
        out[e.dst] -= e.conductance * diff;
    }
    for x in 0..n {
        out[x] /= m.value(x).sqrt();
    }
    out
}

/// The spectral gap `λ₁`: the smallest nonzero eigenvalue of `−A` in
/// `L₂(m)`. The best constant in `∫(f − f_X)² dm ≤ c E(f)` is `c = 1/λ₁`.
///
/// Uses a dense symmetric eigendecomposition below
/// [`linalg::DENSE_EIGEN_THRESHOLD`] vertices and a deflated Lanczos
/// iteration above it.
pub fn spectral_gap(m: &MeasureWeights) -> Result<f64> {
    m.ensure_strictly_positive()?;
    let graph = m.graph();
    if !graph.is_connected() {
        return Err(Error::Disconnected(graph.describe()));
    }
    let n = graph.vertex_count();
    if n < linalg::DENSE_EIGEN_THRESHOLD {
        let (values, _) = linalg::sorted_symmetric_eigen(symmetrized_laplacian(m));
        Ok(values[1])
    } else {
        // Kernel of the symmetrized operator: M^{1/2} applied to constants.
        let mut kernel = DVector::from_iterator(n, (0..n).map(|x| m.value(x).sqrt()));
        let norm = kernel.norm();
        kernel /= norm;
        linalg::lanczos_smallest(
            n,
            |v| symmetrized_apply(m, v),
            &[kernel],
            linalg::EIGEN_TOLERANCE,
            600,
        )
    }
}

/// The Poincaré constant `c_P = 1/λ₁`: the best constant in
/// `‖f‖²_{L₂(m)} ≤ c_P E(f)` over mean-zero `f`. On a finite connected
/// graph the variance inequality and the mean-zero inequality share the
/// optimal constant, so this is exactly `1/spectral_gap(m)`.
pub fn poincare_constant(m: &MeasureWeights) -> Result<f64> {
    Ok(1.0 / spectral_gap(m)?)
}

/// Harmonic extension: the unique field equal to `values` on `b` and
/// harmonic (`(Lf)(x) = 0`) at every other vertex. Independent of the
/// reference measure.
pub fn harmonic_extension(
    graph: &Arc<LevelGraph>,
    b: &[usize],
    values: &[f64],
) -> Result<ScalarField> {
    if b.is_empty() {
        return Err(Error::Precondition(
            "harmonic extension needs a nonempty boundary set".to_owned(),
        ));
    }
    if b.len() != values.len() {
        return Err(Error::Dimension(format!(
            "{} boundary vertices but {} boundary values",
            b.len(),
            values.len()
        )));
    }
    let n = graph.vertex_count();
    let mut is_b = vec![false; n];
    for &x in b {
        if x >= n {
            return Err(Error::Dimension(format!(
                "boundary vertex {x} out of range for {}",
                graph.describe()
            )));
        }
        if is_b[x] {
            return Err(Error::Precondition(format!(
                "boundary vertex {x} listed twice"
            )));
        }
        is_b[x] = true;
    }
    let interior: Vec<usize> = (0..n).filter(|&x| !is_b[x]).collect();
    let mut out = vec![0.0; n];
    for (&x, &v) in b.iter().zip(values) {
        out[x] = v;
    }
    if interior.is_empty() {
        return ScalarField::new(graph, out);
    }
    let l = laplacian_matrix(graph);
    let lii = l.select_rows(interior.iter()).select_columns(interior.iter());
    let lib = l.select_rows(interior.iter()).select_columns(b.iter());
    let ub = DVector::from_iterator(b.len(), values.iter().copied());
    let rhs = -(&lib * &ub);
    let ui = linalg::solve_symmetric(&lii, &rhs)?;
    for (idx, &x) in interior.iter().enumerate() {
        out[x] = ui[idx];
    }
    ScalarField::new(graph, out)
}

/// Green-operator solve: the unique `u` with `u ≡ 0` on `b` and
/// `(Au)(x) = f(x)` for every `x ∉ b`.
pub fn dirichlet_solve(
    m: &MeasureWeights,
    b: &[usize],
    f: &ScalarField,
) -> Result<ScalarField> {
    check_same_graph(m.graph(), f.graph())?;
    m.ensure_strictly_positive()?;
    if b.is_empty() {
        return Err(Error::Precondition(
            "Dirichlet solve needs a nonempty boundary set".to_owned(),
        ));
    }
    let graph = f.graph();
    let n = graph.vertex_count();
    let mut is_b = vec![false; n];
    for &x in b {
        if x >= n {
            return Err(Error::Dimension(format!(
                "boundary vertex {x} out of range for {}",
                graph.describe()
            )));
        }
        is_b[x] = true;
    }
    let interior: Vec<usize> = (0..n).filter(|&x| !is_b[x]).collect();
    let mut out = vec![0.0; n];
    if interior.is_empty() {
        return ScalarField::new(graph, out);
    }
    // Interior rows of Au = f read −(Lu)(x)/m(x) = f(x) with u ≡ 0 on b.
    let l = laplacian_matrix(graph);
    let lii = l.select_rows(interior.iter()).select_columns(interior.iter());
    let rhs = DVector::from_iterator(
        interior.len(),
        interior.iter().map(|&x| -m.value(x) * f.value(x)),
    );
    let ui = linalg::solve_symmetric(&lii, &rhs)?;
    for (idx, &x) in interior.iter().enumerate() {
        out[x] = ui[idx];
    }
    ScalarField::new(graph, out)
}

/// Verify the conductance renormalization of a spec.
///
/// For each indicator boundary datum, the minimum-energy (harmonic)
/// extension from level 0 to level 1 is computed on the *unrenormalized*
/// level-1 graph (unit base conductances). The returned value is the ratio
/// of the extended level-1 energy to the level-0 energy, averaged over the
/// indicator basis; for a correctly renormalized spec every ratio equals
/// `1/r_c`, which is what makes `r_c`-scaled conductances energy-compatible
/// across levels.
pub fn extension_energy_factor(spec: &FractalSpec) -> Result<f64> {
    spec.validate()?;
    let level0 = build_level(spec, 0)?;
    let level1 = build_level(spec, 1)?;
    let rc = *spec.conductance_renormalization.numer() as f64
        / *spec.conductance_renormalization.denom() as f64;
    // Undo the per-level conductance multiplier to get unit base weights.
    let raw_edges: Vec<(usize, usize, f64)> = level1
        .edges()
        .iter()
        .map(|e| (e.src, e.dst, e.conductance / rc))
        .collect();
    let raw = LevelGraph::custom(
        "unrenormalized-level-1",
        level1.vertex_count(),
        &raw_edges,
        level1.boundary(),
        None,
    )?;
    let k = spec.boundary_size;
    let mut ratio_sum = 0.0;
    for j in 0..k {
        let data: Vec<f64> = (0..k).map(|i| if i == j { 1.0 } else { 0.0 }).collect();
        let f0 = ScalarField::from_fn(&level0, |x| data[x])?;
        let e0 = energy(&f0, &f0)?;
        let extension = harmonic_extension(&raw, raw.boundary(), &data)?;
        let e1 = energy(&extension, &extension)?;
        // Indicator data always has positive level-0 energy (the level-0
        // cell is a complete graph), so the ratio is well defined.
        ratio_sum += e1 / e0;
    }
    Ok(ratio_sum / k as f64)
}

/// Kusuoka-type reference measure: `ν = Σ_i Γ(h_i, h_i)` over an
/// energy-orthonormal basis `{h_i}` of the boundary-harmonic functions
/// modulo constants. Nonnegative with total mass `boundary_size − 1`, and
/// independent of the basis choice.
///
/// The measure argument only identifies the graph; `ν` itself does not
/// depend on it.
pub fn kusuoka_measure(m: &MeasureWeights) -> Result<MeasureWeights> {
    let graph = m.graph();
    let b = graph.boundary().to_vec();
    if b.len() < 2 {
        return Err(Error::Precondition(format!(
            "Kusuoka measure needs at least two boundary vertices, {} has {}",
            graph.describe(),
            b.len()
        )));
    }
    // Harmonic functions with indicator boundary data span the harmonics
    // (their sum is the constant 1); Gram–Schmidt in the energy inner
    // product drops that constant direction automatically.
    let mut raw: Vec<DVector<f64>> = Vec::with_capacity(b.len());
    for j in 0..b.len() {
        let data: Vec<f64> = (0..b.len()).map(|i| if i == j { 1.0 } else { 0.0 }).collect();
        let h = harmonic_extension(graph, &b, &data)?;
        raw.push(h.values().clone());
    }
    let l = laplacian_matrix(graph);
    let basis = linalg::modified_gram_schmidt(raw, |u, v| (u.transpose() * &l * v)[0], 1e-8);
    let mut nu = MeasureWeights::signed(graph, vec![0.0; graph.vertex_count()])?;
    for h in &basis {
        let field = ScalarField::from_vector(graph, h.clone())?;
        nu = nu.add(&energy_measure(&field, &field)?)?;
    }
    Ok(nu)
}
