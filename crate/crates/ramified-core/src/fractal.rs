//! Finitely ramified fractal specifications and their level-n graph
//! approximations.
//!
//! A [`FractalSpec`] describes a self-similar cell structure: how many
//! contraction cells the set splits into, how many boundary corners a cell
//! has, and which corners of which cells coincide after one subdivision.
//! [`build_level`] realizes the spec as a finite weighted graph at
//! subdivision depth `n`. Every level-n cell spans a complete graph on its
//! corners, and every edge carries conductance `r_c^n`, where `r_c` is the
//! per-level conductance renormalization of the spec; this is the scaling
//! under which the graph energies form a compatible sequence as `n` grows.
//!
//! Vertices are addressed canonically by `(cell address, corner)`, where the
//! cell address is the word of contraction indices leading to the cell. A
//! vertex shared by several cells takes the lexicographically least such
//! pair as its canonical key, and vertices are numbered in key order, so the
//! construction is reproducible run to run.

use std::collections::{BTreeMap, BTreeSet};
use std::hash::{Hash, Hasher};
use std::sync::Arc;

use num_rational::Ratio;
use petgraph::unionfind::UnionFind;
use serde::Deserialize;

use crate::error::{Error, Result};
use crate::fields::MeasureWeights;

/// Gluing table for one subdivision step: each class lists the
/// `(cell index, corner index)` pairs that collapse to a single vertex.
pub type Identifications = Vec<Vec<(usize, usize)>>;

/// Optional planar realization of a spec by homotheties
/// `F_i(p) = ratio·p + (1−ratio)·anchor_i`.
///
/// `corners` are the coordinates of the root cell's corners; the vertex with
/// canonical key `(a_1…a_n, j)` is drawn at `F_{a_1}∘…∘F_{a_n}(corners[j])`.
/// The embedding is cosmetic output data and is not required to be
/// compatible with the identification table.
#[derive(Clone, Debug, PartialEq)]
pub struct Embedding {
    /// Contraction ratio of every similitude, in (0, 1).
    pub ratio: f64,
    /// Fixed-point anchors, one per cell.
    pub anchors: Vec<[f64; 2]>,
    /// Coordinates of the root cell corners, one per boundary vertex.
    pub corners: Vec<[f64; 2]>,
}

/// Declarative description of a finitely ramified self-similar cell
/// structure.
///
/// The level-1 graph consists of `cell_count` complete graphs on
/// `boundary_size` corners each, glued according to `identifications`.
/// Deeper levels iterate the same substitution inside every cell.
#[derive(Clone, Debug, PartialEq)]
pub struct FractalSpec {
    /// Identifier used in labels and error messages.
    pub name: String,
    /// Number of contraction cells per subdivision step.
    pub cell_count: usize,
    /// Number of boundary corners of a cell (and of the whole set).
    pub boundary_size: usize,
    /// Corner gluings performed by one subdivision step.
    pub identifications: Identifications,
    /// Per-level conductance multiplier `r_c`, kept as an exact rational and
    /// applied as `r_c^n` in floating point once at assembly.
    pub conductance_renormalization: Ratio<i64>,
    /// Cell weights of the self-similar measure; must sum to 1 exactly.
    pub measure_weights: Vec<Ratio<i64>>,
    /// Optional planar embedding used for coordinate export.
    pub embedding: Option<Embedding>,
}

impl FractalSpec {
    /// The unit interval: two half-cells meeting at the midpoint,
    /// conductance doubling per level, uniform length measure.
    ///
    /// This is the degenerate sanity case: level n is a path of `2^n` edges
    /// with conductance `2^n` each, so the linear function has energy 1 at
    /// every level.
    pub fn interval() -> Self {
        FractalSpec {
            name: "interval".to_owned(),
            cell_count: 2,
            boundary_size: 2,
            identifications: vec![vec![(0, 1), (1, 0)]],
            conductance_renormalization: Ratio::new(2, 1),
            measure_weights: vec![Ratio::new(1, 2), Ratio::new(1, 2)],
            embedding: Some(Embedding {
                ratio: 0.5,
                anchors: vec![[0.0, 0.0], [1.0, 0.0]],
                corners: vec![[0.0, 0.0], [1.0, 0.0]],
            }),
        }
    }

    /// The Sierpinski gasket: three cells, each pair sharing a midpoint
    /// vertex, conductance renormalization `5/3`, uniform measure `1/3` per
    /// cell.
    pub fn gasket() -> Self {
        let h = 3f64.sqrt() / 2.0;
        let corners = vec![[0.0, 0.0], [1.0, 0.0], [0.5, h]];
        FractalSpec {
            name: "gasket".to_owned(),
            cell_count: 3,
            boundary_size: 3,
            identifications: vec![
                vec![(0, 1), (1, 0)],
                vec![(0, 2), (2, 0)],
                vec![(1, 2), (2, 1)],
            ],
            conductance_renormalization: Ratio::new(5, 3),
            measure_weights: vec![Ratio::new(1, 3); 3],
            embedding: Some(Embedding {
                ratio: 0.5,
                anchors: corners.clone(),
                corners,
            }),
        }
    }

    /// Look up a built-in spec by name.
    pub fn builtin(name: &str) -> Option<Self> {
        match name {
            "interval" => Some(Self::interval()),
            "gasket" => Some(Self::gasket()),
            _ => None,
        }
    }

    /// Parse a custom spec from its TOML description. See the repository
    /// README for the schema; rationals are written as `[numerator,
    /// denominator]` pairs so that measure weights stay exact.
    pub fn from_toml_str(text: &str) -> Result<Self> {
        let raw: RawSpec =
            toml::from_str(text).map_err(|e| Error::Parse(format!("fractal spec: {e}")))?;
        let spec = FractalSpec {
            name: raw.name,
            cell_count: raw.cell_count,
            boundary_size: raw.boundary_size,
            identifications: raw
                .identifications
                .into_iter()
                .map(|class| class.into_iter().map(|[c, p]| (c, p)).collect())
                .collect(),
            conductance_renormalization: Ratio::new(
                raw.conductance_renormalization[0],
                raw.conductance_renormalization[1],
            ),
            measure_weights: raw
                .measure_weights
                .into_iter()
                .map(|[n, d]| Ratio::new(n, d))
                .collect(),
            embedding: raw.embedding.map(|e| {
                let corners = e.corners.unwrap_or_else(|| e.anchors.clone());
                Embedding { ratio: e.ratio, anchors: e.anchors, corners }
            }),
        };
        spec.validate()?;
        Ok(spec)
    }

    /// Check the structural invariants of the spec, including that the
    /// identification table produces a connected level-1 graph.
    pub fn validate(&self) -> Result<()> {
        let fail = |reason: String| Error::InvalidSpec { name: self.name.clone(), reason };
        if self.cell_count == 0 || self.cell_count > u8::MAX as usize {
            return Err(fail(format!(
                "cell_count must be in 1..=255, got {}",
                self.cell_count
            )));
        }
        if self.boundary_size < 2 {
            return Err(fail(format!(
                "boundary_size must be at least 2, got {}",
                self.boundary_size
            )));
        }
        if self.boundary_size > self.cell_count {
            // Boundary corner j persists as corner j of cell j under
            // subdivision, so each corner needs an anchoring cell.
            return Err(fail(format!(
                "boundary_size ({}) cannot exceed cell_count ({}): corner j must be \
                 anchored by cell j",
                self.boundary_size, self.cell_count
            )));
        }
        if self.conductance_renormalization <= Ratio::new(0, 1) {
            return Err(fail(format!(
                "conductance renormalization must be positive, got {}",
                self.conductance_renormalization
            )));
        }
        if self.measure_weights.len() != self.cell_count {
            return Err(fail(format!(
                "expected {} measure weights, got {}",
                self.cell_count,
                self.measure_weights.len()
            )));
        }
        if self.measure_weights.iter().any(|w| *w <= Ratio::new(0, 1)) {
            return Err(fail("measure weights must be strictly positive".to_owned()));
        }
        let total: Ratio<i64> = self.measure_weights.iter().sum();
        if total != Ratio::new(1, 1) {
            return Err(fail(format!("measure weights must sum to 1, got {total}")));
        }
        let mut seen = BTreeSet::new();
        for class in &self.identifications {
            if class.len() < 2 {
                return Err(fail(
                    "identification classes need at least two members".to_owned(),
                ));
            }
            let mut cells_in_class = BTreeSet::new();
            for &(cell, corner) in class {
                if cell >= self.cell_count || corner >= self.boundary_size {
                    return Err(fail(format!(
                        "identification entry (cell {cell}, corner {corner}) out of range"
                    )));
                }
                if !seen.insert((cell, corner)) {
                    return Err(fail(format!(
                        "(cell {cell}, corner {corner}) appears in more than one \
                         identification class"
                    )));
                }
                if !cells_in_class.insert(cell) {
                    return Err(fail(format!(
                        "identification class glues two corners of cell {cell} together"
                    )));
                }
            }
        }
        if let Some(embedding) = &self.embedding {
            if !(embedding.ratio > 0.0 && embedding.ratio < 1.0) {
                return Err(fail(format!(
                    "embedding ratio must lie in (0, 1), got {}",
                    embedding.ratio
                )));
            }
            if embedding.anchors.len() != self.cell_count {
                return Err(fail(format!(
                    "embedding needs {} anchors, got {}",
                    self.cell_count,
                    embedding.anchors.len()
                )));
            }
            if embedding.corners.len() != self.boundary_size {
                return Err(fail(format!(
                    "embedding needs {} corner coordinates, got {}",
                    self.boundary_size,
                    embedding.corners.len()
                )));
            }
        }
        // Connectivity of the level-1 graph: cells are internally complete,
        // so the graph is connected iff the identifications join the cells.
        let parts = assemble_parts(self, 1)?;
        let components = connected_components(parts.vertex_count, parts.edges.keys().copied());
        if components.iter().any(|&c| c != 0) {
            let (a, b) = disconnected_cell_pair(&parts, &components, self.cell_count);
            return Err(fail(format!(
                "identifications leave the level-1 graph disconnected \
                 (cells {a} and {b} are not joined)"
            )));
        }
        let mut boundary_seen = BTreeSet::new();
        for (j, &v) in parts.boundary.iter().enumerate() {
            if !boundary_seen.insert(v) {
                return Err(fail(format!(
                    "identifications glue boundary corner {j} onto another boundary corner"
                )));
            }
        }
        Ok(())
    }
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct RawSpec {
    name: String,
    cell_count: usize,
    boundary_size: usize,
    identifications: Vec<Vec<[usize; 2]>>,
    conductance_renormalization: [i64; 2],
    measure_weights: Vec<[i64; 2]>,
    embedding: Option<RawEmbedding>,
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct RawEmbedding {
    ratio: f64,
    anchors: Vec<[f64; 2]>,
    corners: Option<Vec<[f64; 2]>>,
}

/// One undirected edge in canonical orientation `src < dst` with its
/// conductance `c_xy > 0`.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Edge {
    pub src: usize,
    pub dst: usize,
    pub conductance: f64,
}

/// A finite weighted graph approximating a fractal at subdivision level `n`.
///
/// The graph stores its vertices in canonical (deterministic) order, each
/// undirected edge exactly once with `src < dst`, the ordered boundary
/// vertex set, and — when built from a spec — the self-similar measure and
/// optional planar coordinates.
#[derive(Debug)]
pub struct LevelGraph {
    level: usize,
    name: String,
    spec: Option<FractalSpec>,
    labels: Vec<String>,
    coords: Option<Vec<[f64; 2]>>,
    edges: Vec<Edge>,
    boundary: Vec<usize>,
    adjacency: Vec<Vec<(usize, usize)>>,
    self_similar: Option<Vec<f64>>,
    connected: bool,
    fingerprint: u64,
}

impl LevelGraph {
    /// Subdivision depth of the graph.
    pub fn level(&self) -> usize {
        self.level
    }

    /// Name of the originating spec, or the name given to a custom graph.
    pub fn name(&self) -> &str {
        &self.name
    }

    /// The spec the graph was built from, if any.
    pub fn spec(&self) -> Option<&FractalSpec> {
        self.spec.as_ref()
    }

    pub fn vertex_count(&self) -> usize {
        self.labels.len()
    }

    pub fn edge_count(&self) -> usize {
        self.edges.len()
    }

    /// All edges in canonical orientation, sorted by `(src, dst)`.
    pub fn edges(&self) -> &[Edge] {
        &self.edges
    }

    /// Canonical `address:corner` label of a vertex (or `v<i>` for custom
    /// graphs).
    pub fn label(&self, vertex: usize) -> &str {
        &self.labels[vertex]
    }

    /// Planar coordinates, when the spec carried an embedding.
    pub fn coords(&self) -> Option<&[[f64; 2]]> {
        self.coords.as_deref()
    }

    /// The ordered boundary vertex set.
    pub fn boundary(&self) -> &[usize] {
        &self.boundary
    }

    pub fn is_boundary(&self, vertex: usize) -> bool {
        self.boundary.contains(&vertex)
    }

    /// Neighbors of `x` as `(neighbor, edge index)` pairs.
    pub fn neighbors(&self, x: usize) -> impl Iterator<Item = (usize, usize)> + '_ {
        self.adjacency[x].iter().copied()
    }

    pub fn degree(&self, x: usize) -> usize {
        self.adjacency[x].len()
    }

    /// Position of the canonical edge `{x, y}` in the edge list, if present.
    pub fn edge_position(&self, x: usize, y: usize) -> Option<usize> {
        let key = (x.min(y), x.max(y));
        self.edges
            .binary_search_by_key(&key, |e| (e.src, e.dst))
            .ok()
    }

    pub fn is_connected(&self) -> bool {
        self.connected
    }

    /// Short human-readable description used in error messages.
    pub fn describe(&self) -> String {
        format!(
            "{} level {} ({} vertices)",
            self.name,
            self.level,
            self.vertex_count()
        )
    }

    /// Structural hash used to decide whether two independently built
    /// graphs are interchangeable.
    pub fn fingerprint(&self) -> u64 {
        self.fingerprint
    }

    /// Wrap an explicit edge list as a graph, bypassing the substitution
    /// machinery.
    ///
    /// Intended for tests and imported data. Orientation is canonicalized,
    /// parallel edges are merged by adding their conductances, and
    /// self-loops are rejected. Connectivity is *not* required here;
    /// operations that need it check at call time.
    pub fn custom(
        name: &str,
        vertex_count: usize,
        edges: &[(usize, usize, f64)],
        boundary: &[usize],
        coords: Option<Vec<[f64; 2]>>,
    ) -> Result<Arc<Self>> {
        let fail = |reason: String| Error::InvalidSpec { name: name.to_owned(), reason };
        if vertex_count == 0 {
            return Err(fail("graph needs at least one vertex".to_owned()));
        }
        let mut merged: BTreeMap<(usize, usize), f64> = BTreeMap::new();
        for &(x, y, c) in edges {
            if x >= vertex_count || y >= vertex_count {
                return Err(fail(format!("edge ({x}, {y}) out of range")));
            }
            if x == y {
                return Err(fail(format!("self-loop at vertex {x}")));
            }
            if !(c > 0.0 && c.is_finite()) {
                return Err(fail(format!("conductance of edge ({x}, {y}) must be positive")));
            }
            *merged.entry((x.min(y), x.max(y))).or_insert(0.0) += c;
        }
        for &b in boundary {
            if b >= vertex_count {
                return Err(fail(format!("boundary vertex {b} out of range")));
            }
        }
        let edge_list: Vec<Edge> = merged
            .into_iter()
            .map(|((src, dst), conductance)| Edge { src, dst, conductance })
            .collect();
        let labels = (0..vertex_count).map(|i| format!("v{i}")).collect();
        if let Some(c) = &coords {
            if c.len() != vertex_count {
                return Err(fail(format!(
                    "expected {vertex_count} coordinates, got {}",
                    c.len()
                )));
            }
        }
        Ok(Arc::new(Self::from_parts(
            0,
            name.to_owned(),
            None,
            labels,
            coords,
            edge_list,
            boundary.to_vec(),
            None,
        )))
    }

    #[allow(clippy::too_many_arguments)]
    fn from_parts(
        level: usize,
        name: String,
        spec: Option<FractalSpec>,
        labels: Vec<String>,
        coords: Option<Vec<[f64; 2]>>,
        edges: Vec<Edge>,
        boundary: Vec<usize>,
        self_similar: Option<Vec<f64>>,
    ) -> Self {
        let vertex_count = labels.len();
        let mut adjacency = vec![Vec::new(); vertex_count];
        for (idx, e) in edges.iter().enumerate() {
            adjacency[e.src].push((e.dst, idx));
            adjacency[e.dst].push((e.src, idx));
        }
        let components = connected_components(vertex_count, edges.iter().map(|e| (e.src, e.dst)));
        let connected = components.iter().all(|&c| c == 0);
        let mut hasher = std::collections::hash_map::DefaultHasher::new();
        level.hash(&mut hasher);
        name.hash(&mut hasher);
        labels.hash(&mut hasher);
        boundary.hash(&mut hasher);
        for e in &edges {
            e.src.hash(&mut hasher);
            e.dst.hash(&mut hasher);
            e.conductance.to_bits().hash(&mut hasher);
        }
        let fingerprint = hasher.finish();
        LevelGraph {
            level,
            name,
            spec,
            labels,
            coords,
            edges,
            boundary,
            adjacency,
            self_similar,
            connected,
            fingerprint,
        }
    }

    pub(crate) fn self_similar_weights(&self) -> Option<&[f64]> {
        self.self_similar.as_deref()
    }
}

/// `true` when the two references denote interchangeable graphs: either the
/// same allocation or structurally identical builds.
pub fn same_graph(a: &Arc<LevelGraph>, b: &Arc<LevelGraph>) -> bool {
    Arc::ptr_eq(a, b) || a.fingerprint == b.fingerprint
}

/// Error helper for binary operations on mismatched graphs.
pub(crate) fn check_same_graph(a: &Arc<LevelGraph>, b: &Arc<LevelGraph>) -> Result<()> {
    if same_graph(a, b) {
        Ok(())
    } else {
        Err(Error::GraphMismatch {
            left: a.describe(),
            right: b.describe(),
        })
    }
}

/// Build the level-`n` graph approximation of a spec.
///
/// Vertices are ordered lexicographically by canonical `(address, corner)`
/// key, every edge carries conductance `r_c^n` (computed in exact rational
/// arithmetic and rounded once), and the boundary vertex `j` is the corner
/// `j` of the cell with address `j^n`. Two calls with equal arguments
/// produce identical graphs.
pub fn build_level(spec: &FractalSpec, n: usize) -> Result<Arc<LevelGraph>> {
    spec.validate()?;
    let parts = assemble_parts(spec, n)?;
    let components = connected_components(parts.vertex_count, parts.edges.keys().copied());
    if components.iter().any(|&c| c != 0) {
        // validate() guarantees level-1 connectivity, which propagates to
        // every level; this is a defensive check.
        let (a, b) = disconnected_cell_pair(&parts, &components, spec.cell_count);
        return Err(Error::InvalidSpec {
            name: spec.name.clone(),
            reason: format!("level-{n} graph is disconnected (cells {a} and {b})"),
        });
    }

    let conductance = ratio_pow_f64(spec.conductance_renormalization, n)?;
    let edges: Vec<Edge> = parts
        .edges
        .iter()
        .map(|(&(src, dst), &multiplicity)| Edge {
            src,
            dst,
            conductance: multiplicity as f64 * conductance,
        })
        .collect();

    // Self-similar measure: each level-n cell carries the product of the
    // per-step weights along its address and splits it equally among its
    // corners. Exact rational accumulation, rounded to f64 once per vertex.
    let k = spec.boundary_size;
    let mut measure = vec![Ratio::<i128>::new(0, 1); parts.vertex_count];
    for cell in &parts.cells {
        let mut mass = Ratio::<i128>::new(1, k as i128);
        for &step in &cell.address {
            let w = spec.measure_weights[step as usize];
            mass = checked_mul(mass, promote(w)).ok_or_else(|| {
                Error::Precondition(format!(
                    "measure weights overflow exact arithmetic at level {n}"
                ))
            })?;
        }
        for &corner in &cell.corners {
            measure[corner] += mass;
        }
    }
    let self_similar: Vec<f64> = measure.iter().map(ratio_to_f64).collect();

    let labels: Vec<String> = parts
        .keys
        .iter()
        .map(|(address, corner)| render_label(address, *corner, spec.cell_count))
        .collect();

    let coords = spec.embedding.as_ref().map(|embedding| {
        parts
            .keys
            .iter()
            .map(|(address, corner)| {
                let mut p = embedding.corners[*corner as usize];
                for &step in address.iter().rev() {
                    let a = embedding.anchors[step as usize];
                    p = [
                        embedding.ratio * p[0] + (1.0 - embedding.ratio) * a[0],
                        embedding.ratio * p[1] + (1.0 - embedding.ratio) * a[1],
                    ];
                }
                p
            })
            .collect()
    });

    Ok(Arc::new(LevelGraph::from_parts(
        n,
        spec.name.clone(),
        Some(spec.clone()),
        labels,
        coords,
        edges,
        parts.boundary,
        Some(self_similar),
    )))
}

/// Number of independent cycles `|E| − |V| + 1` of a connected graph.
pub fn cycle_rank(graph: &LevelGraph) -> Result<usize> {
    if !graph.is_connected() {
        return Err(Error::Disconnected(graph.describe()));
    }
    Ok(graph.edge_count() + 1 - graph.vertex_count())
}

/// The self-similar reference measure of a graph built from a spec: the
/// vertex weight is the total mass of the incident cells divided equally
/// among each cell's corners. Weights sum to 1.
pub fn self_similar_measure(graph: &Arc<LevelGraph>) -> Result<MeasureWeights> {
    let weights = graph.self_similar_weights().ok_or_else(|| {
        Error::Precondition(format!(
            "{} was not built from a fractal spec; no self-similar measure is attached",
            graph.describe()
        ))
    })?;
    MeasureWeights::reference(graph, weights.to_vec())
}

struct CellOut {
    address: Vec<u8>,
    corners: Vec<usize>,
}

struct GraphParts {
    vertex_count: usize,
    keys: Vec<(Vec<u8>, u8)>,
    edges: BTreeMap<(usize, usize), usize>,
    boundary: Vec<usize>,
    cells: Vec<CellOut>,
}

/// Run the substitution `n` times and return raw combinatorial data:
/// canonical vertex keys, edge multiplicities, boundary vertices and the
/// final cells. Assumes the spec passed static validation.
fn assemble_parts(spec: &FractalSpec, n: usize) -> Result<GraphParts> {
    let k = spec.boundary_size;
    let big_n = spec.cell_count;

    // Level 0: a single cell whose corners are the boundary.
    let mut cells: Vec<CellOut> = vec![CellOut {
        address: Vec::new(),
        corners: (0..k).collect(),
    }];
    let mut keys: Vec<(Vec<u8>, u8)> = (0..k).map(|j| (Vec::new(), j as u8)).collect();
    // Index (within `cells`) of the cell with address j^level, per corner j.
    let mut boundary_cell: Vec<usize> = vec![0; k];

    for _ in 0..n {
        let prev_cell_count = cells.len();
        let node = |ci: usize, sub: usize, corner: usize| (ci * big_n + sub) * k + corner;
        let mut uf = UnionFind::<usize>::new(prev_cell_count * big_n * k);

        // Gluings introduced by this subdivision step, inside each parent.
        for ci in 0..prev_cell_count {
            for class in &spec.identifications {
                let (c0, p0) = class[0];
                for &(c1, p1) in &class[1..] {
                    uf.union(node(ci, c0, p0), node(ci, c1, p1));
                }
            }
        }
        // Gluings inherited from the parent level: corner j of a parent cell
        // is corner j of its j-th child, so parents sharing a vertex keep
        // sharing it.
        let mut incidences: Vec<Vec<usize>> = vec![Vec::new(); keys.len()];
        for (ci, cell) in cells.iter().enumerate() {
            for (p, &v) in cell.corners.iter().enumerate() {
                incidences[v].push(node(ci, p, p));
            }
        }
        for nodes in &incidences {
            for pair in nodes.windows(2) {
                uf.union(pair[0], pair[1]);
            }
        }

        // Canonical key per equivalence class, then vertices in key order.
        let mut class_keys: BTreeMap<usize, (Vec<u8>, u8)> = BTreeMap::new();
        for (ci, cell) in cells.iter().enumerate() {
            for sub in 0..big_n {
                let mut address = cell.address.clone();
                address.push(sub as u8);
                for corner in 0..k {
                    let root = uf.find_mut(node(ci, sub, corner));
                    let key = (address.clone(), corner as u8);
                    let entry = class_keys.entry(root).or_insert_with(|| key.clone());
                    if key < *entry {
                        *entry = key;
                    }
                }
            }
        }
        let mut sorted: Vec<(&(Vec<u8>, u8), &usize)> =
            class_keys.iter().map(|(root, key)| (key, root)).collect();
        sorted.sort();
        let mut vertex_of_root: BTreeMap<usize, usize> = BTreeMap::new();
        let mut next_keys = Vec::with_capacity(sorted.len());
        for (idx, (key, &root)) in sorted.into_iter().enumerate() {
            vertex_of_root.insert(root, idx);
            next_keys.push(key.clone());
        }

        let mut next_cells = Vec::with_capacity(prev_cell_count * big_n);
        for ci in 0..prev_cell_count {
            for sub in 0..big_n {
                let mut address = cells[ci].address.clone();
                address.push(sub as u8);
                let corners: Vec<usize> = (0..k)
                    .map(|corner| vertex_of_root[&uf.find_mut(node(ci, sub, corner))])
                    .collect();
                next_cells.push(CellOut { address, corners });
            }
        }
        for (j, bc) in boundary_cell.iter_mut().enumerate() {
            *bc = *bc * big_n + j;
        }
        cells = next_cells;
        keys = next_keys;
    }

    // Every cell spans a complete graph on its corners; a repeated corner
    // would mean the identifications collapsed an edge of some cell.
    let mut edges: BTreeMap<(usize, usize), usize> = BTreeMap::new();
    for cell in &cells {
        for p in 0..k {
            for q in (p + 1)..k {
                let (a, b) = (cell.corners[p], cell.corners[q]);
                if a == b {
                    return Err(Error::InvalidSpec {
                        name: spec.name.clone(),
                        reason: format!(
                            "identifications collapse corners {p} and {q} of cell {} \
                             to one vertex",
                            render_address(&cell.address, spec.cell_count)
                        ),
                    });
                }
                *edges.entry((a.min(b), a.max(b))).or_insert(0) += 1;
            }
        }
    }

    let boundary: Vec<usize> = boundary_cell
        .iter()
        .enumerate()
        .map(|(j, &ci)| cells[ci].corners[j])
        .collect();

    Ok(GraphParts {
        vertex_count: keys.len(),
        keys,
        edges,
        boundary,
        cells,
    })
}

fn render_address(address: &[u8], cell_count: usize) -> String {
    if address.is_empty() {
        return String::new();
    }
    if cell_count <= 10 {
        address.iter().map(|d| d.to_string()).collect()
    } else {
        address
            .iter()
            .map(|d| d.to_string())
            .collect::<Vec<_>>()
            .join(".")
    }
}

fn render_label(address: &[u8], corner: u8, cell_count: usize) -> String {
    format!("{}:{corner}", render_address(address, cell_count))
}

/// Component id (the smallest vertex index in the component) per vertex.
fn connected_components(
    vertex_count: usize,
    edges: impl IntoIterator<Item = (usize, usize)>,
) -> Vec<usize> {
    let mut uf = UnionFind::<usize>::new(vertex_count);
    for (a, b) in edges {
        uf.union(a, b);
    }
    let mut smallest: BTreeMap<usize, usize> = BTreeMap::new();
    let mut out = vec![0; vertex_count];
    for (v, slot) in out.iter_mut().enumerate() {
        let root = uf.find_mut(v);
        *slot = *smallest.entry(root).or_insert(v);
    }
    out
}

/// Pick one cell from each of two different components, for error messages.
fn disconnected_cell_pair(
    parts: &GraphParts,
    components: &[usize],
    cell_count: usize,
) -> (String, String) {
    let first = components[0];
    let other_vertex = components.iter().position(|&c| c != first).unwrap_or(0);
    let cell_of = |v: usize| {
        parts
            .cells
            .iter()
            .find(|cell| cell.corners.contains(&v))
            .map(|cell| render_address(&cell.address, cell_count))
            .unwrap_or_else(|| "?".to_owned())
    };
    (cell_of(0), cell_of(other_vertex))
}

fn promote(r: Ratio<i64>) -> Ratio<i128> {
    Ratio::new(*r.numer() as i128, *r.denom() as i128)
}

fn checked_mul(a: Ratio<i128>, b: Ratio<i128>) -> Option<Ratio<i128>> {
    let numer = a.numer().checked_mul(*b.numer())?;
    let denom = a.denom().checked_mul(*b.denom())?;
    Some(Ratio::new(numer, denom))
}

fn ratio_to_f64(r: &Ratio<i128>) -> f64 {
    *r.numer() as f64 / *r.denom() as f64
}

/// `r^n` computed exactly in rationals and converted to f64 once.
fn ratio_pow_f64(r: Ratio<i64>, n: usize) -> Result<f64> {
    let mut acc = Ratio::<i128>::new(1, 1);
    for _ in 0..n {
        acc = checked_mul(acc, promote(r)).ok_or_else(|| {
            Error::Precondition(format!(
                "conductance renormalization {r}^{n} overflows exact arithmetic"
            ))
        })?;
    }
    Ok(ratio_to_f64(&acc))
}
