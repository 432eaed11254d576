//! Vertex-indexed data: scalar fields and measures.
//!
//! A [`ScalarField`] is a real function on the vertices of a fixed
//! [`LevelGraph`]; a [`MeasureWeights`] assigns a weight to every vertex and
//! represents a measure `m`, either a strictly positive reference measure or
//! a signed measure such as a mutual energy measure. Both carry a reference
//! to their graph, and binary operations refuse to mix graphs.

use std::sync::Arc;

use nalgebra::DVector;

use crate::error::{Error, Result};
use crate::fractal::{check_same_graph, LevelGraph};

/// Compensated (Kahan) summation, so that cached measure totals carry the
/// representation error of the weights rather than the accumulation error
/// of a long naive sum.
pub(crate) fn kahan_sum(values: impl IntoIterator<Item = f64>) -> f64 {
    let mut sum = 0.0;
    let mut carry = 0.0;
    for v in values {
        let y = v - carry;
        let t = sum + y;
        carry = (t - sum) - y;
        sum = t;
    }
    sum
}

/// A real-valued function on the vertices of a level graph.
#[derive(Clone, Debug)]
pub struct ScalarField {
    graph: Arc<LevelGraph>,
    values: DVector<f64>,
}

impl ScalarField {
    /// Wrap a vector of vertex values; the length must match the graph and
    /// every entry must be finite.
    pub fn new(graph: &Arc<LevelGraph>, values: Vec<f64>) -> Result<Self> {
        Self::from_vector(graph, DVector::from_vec(values))
    }

    pub fn from_vector(graph: &Arc<LevelGraph>, values: DVector<f64>) -> Result<Self> {
        if values.len() != graph.vertex_count() {
            return Err(Error::Dimension(format!(
                "field has {} values but {} has {} vertices",
                values.len(),
                graph.describe(),
                graph.vertex_count()
            )));
        }
        if let Some(x) = values.iter().position(|v| !v.is_finite()) {
            return Err(Error::Precondition(format!(
                "field value at vertex {x} is not finite"
            )));
        }
        Ok(ScalarField { graph: Arc::clone(graph), values })
    }

    pub fn from_fn(graph: &Arc<LevelGraph>, f: impl FnMut(usize) -> f64) -> Result<Self> {
        let values = DVector::from_iterator(
            graph.vertex_count(),
            (0..graph.vertex_count()).map(f),
        );
        Self::from_vector(graph, values)
    }

    pub fn constant(graph: &Arc<LevelGraph>, value: f64) -> Self {
        ScalarField {
            graph: Arc::clone(graph),
            values: DVector::from_element(graph.vertex_count(), value),
        }
    }

    pub fn zeros(graph: &Arc<LevelGraph>) -> Self {
        Self::constant(graph, 0.0)
    }

    /// Indicator of a single vertex.
    pub fn indicator(graph: &Arc<LevelGraph>, vertex: usize) -> Result<Self> {
        if vertex >= graph.vertex_count() {
            return Err(Error::Dimension(format!(
                "vertex {vertex} out of range for {}",
                graph.describe()
            )));
        }
        let mut f = Self::zeros(graph);
        f.values[vertex] = 1.0;
        Ok(f)
    }

    pub fn graph(&self) -> &Arc<LevelGraph> {
        &self.graph
    }

    pub fn values(&self) -> &DVector<f64> {
        &self.values
    }

    pub fn value(&self, x: usize) -> f64 {
        self.values[x]
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn add(&self, other: &ScalarField) -> Result<ScalarField> {
        check_same_graph(&self.graph, &other.graph)?;
        Ok(ScalarField {
            graph: Arc::clone(&self.graph),
            values: &self.values + &other.values,
        })
    }

    pub fn sub(&self, other: &ScalarField) -> Result<ScalarField> {
        check_same_graph(&self.graph, &other.graph)?;
        Ok(ScalarField {
            graph: Arc::clone(&self.graph),
            values: &self.values - &other.values,
        })
    }

    pub fn scale(&self, factor: f64) -> ScalarField {
        ScalarField {
            graph: Arc::clone(&self.graph),
            values: &self.values * factor,
        }
    }

    /// Pointwise product `fg`, the algebra multiplication of vertex
    /// functions.
    pub fn pointwise_mul(&self, other: &ScalarField) -> Result<ScalarField> {
        check_same_graph(&self.graph, &other.graph)?;
        Ok(ScalarField {
            graph: Arc::clone(&self.graph),
            values: self.values.component_mul(&other.values),
        })
    }

    /// Add a constant to every vertex.
    pub fn shift(&self, constant: f64) -> ScalarField {
        ScalarField {
            graph: Arc::clone(&self.graph),
            values: self.values.add_scalar(constant),
        }
    }

    /// `⟨f, g⟩_{L₂(m)} = Σ_x m(x) f(x) g(x)`.
    pub fn l2_inner(&self, other: &ScalarField, m: &MeasureWeights) -> Result<f64> {
        check_same_graph(&self.graph, &other.graph)?;
        check_same_graph(&self.graph, m.graph())?;
        Ok(self
            .values
            .iter()
            .zip(other.values.iter())
            .zip(m.values().iter())
            .map(|((&f, &g), &w)| w * f * g)
            .sum())
    }

    /// `‖f‖²_{L₂(m)}`.
    pub fn l2_norm_squared(&self, m: &MeasureWeights) -> Result<f64> {
        self.l2_inner(self, m)
    }

    /// The m-average `f_X = (∫ f dm) / m(X)`.
    pub fn weighted_mean(&self, m: &MeasureWeights) -> Result<f64> {
        check_same_graph(&self.graph, m.graph())?;
        if m.total() == 0.0 {
            return Err(Error::Precondition(
                "cannot average against a measure of total mass zero".to_owned(),
            ));
        }
        let integral: f64 = self
            .values
            .iter()
            .zip(m.values().iter())
            .map(|(&f, &w)| w * f)
            .sum();
        Ok(integral / m.total())
    }

    /// Subtract the m-average, producing a mean-zero field.
    pub fn center(&self, m: &MeasureWeights) -> Result<ScalarField> {
        let mean = self.weighted_mean(m)?;
        Ok(self.shift(-mean))
    }

    pub fn max_abs(&self) -> f64 {
        self.values.iter().fold(0.0f64, |acc, v| acc.max(v.abs()))
    }
}

/// Vertex weights representing a measure on the graph.
///
/// Reference measures are strictly positive everywhere (every nonempty open
/// set is charged); energy measures `Γ(g,h)` with `g ≠ h` may be signed and
/// are constructed through [`MeasureWeights::signed`].
#[derive(Clone, Debug)]
pub struct MeasureWeights {
    graph: Arc<LevelGraph>,
    values: DVector<f64>,
    total: f64,
}

impl MeasureWeights {
    /// A strictly positive reference measure.
    pub fn reference(graph: &Arc<LevelGraph>, values: Vec<f64>) -> Result<Self> {
        let m = Self::signed(graph, values)?;
        m.ensure_strictly_positive()?;
        Ok(m)
    }

    /// A possibly signed measure (used for energy measures).
    pub fn signed(graph: &Arc<LevelGraph>, values: Vec<f64>) -> Result<Self> {
        if values.len() != graph.vertex_count() {
            return Err(Error::Dimension(format!(
                "measure has {} weights but {} has {} vertices",
                values.len(),
                graph.describe(),
                graph.vertex_count()
            )));
        }
        if let Some(x) = values.iter().position(|v| !v.is_finite()) {
            return Err(Error::Precondition(format!(
                "measure weight at vertex {x} is not finite"
            )));
        }
        let total = kahan_sum(values.iter().copied());
        Ok(MeasureWeights {
            graph: Arc::clone(graph),
            values: DVector::from_vec(values),
            total,
        })
    }

    /// The uniform probability measure `1/|V|` per vertex.
    pub fn uniform(graph: &Arc<LevelGraph>) -> Self {
        let n = graph.vertex_count();
        MeasureWeights {
            graph: Arc::clone(graph),
            values: DVector::from_element(n, 1.0 / n as f64),
            total: 1.0,
        }
    }

    pub fn graph(&self) -> &Arc<LevelGraph> {
        &self.graph
    }

    pub fn values(&self) -> &DVector<f64> {
        &self.values
    }

    pub fn value(&self, x: usize) -> f64 {
        self.values[x]
    }

    /// Cached sum of all weights.
    pub fn total(&self) -> f64 {
        self.total
    }

    pub fn is_strictly_positive(&self) -> bool {
        self.values.iter().all(|&v| v > 0.0)
    }

    pub fn is_nonnegative(&self) -> bool {
        self.values.iter().all(|&v| v >= 0.0)
    }

    /// Error unless the measure charges every vertex positively.
    pub fn ensure_strictly_positive(&self) -> Result<()> {
        match self.values.iter().position(|&v| v <= 0.0) {
            None => Ok(()),
            Some(x) => Err(Error::NonPositiveMeasure {
                vertex: x,
                value: self.values[x],
            }),
        }
    }

    pub fn scale(&self, factor: f64) -> MeasureWeights {
        MeasureWeights {
            graph: Arc::clone(&self.graph),
            values: &self.values * factor,
            total: self.total * factor,
        }
    }

    pub fn add(&self, other: &MeasureWeights) -> Result<MeasureWeights> {
        check_same_graph(&self.graph, &other.graph)?;
        let values = &self.values + &other.values;
        let total = kahan_sum(values.iter().copied());
        Ok(MeasureWeights {
            graph: Arc::clone(&self.graph),
            values,
            total,
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::fractal::{build_level, FractalSpec};
    use approx::assert_relative_eq;

    fn triangle() -> Arc<LevelGraph> {
        build_level(&FractalSpec::gasket(), 0).unwrap()
    }

    #[test]
    fn field_length_must_match_graph() {
        let g = triangle();
        assert!(ScalarField::new(&g, vec![0.0, 1.0]).is_err());
        assert!(ScalarField::new(&g, vec![0.0, 1.0, 2.0]).is_ok());
    }

    #[test]
    fn non_finite_values_are_rejected() {
        let g = triangle();
        assert!(ScalarField::new(&g, vec![0.0, f64::NAN, 1.0]).is_err());
        assert!(MeasureWeights::signed(&g, vec![0.0, f64::INFINITY, 1.0]).is_err());
    }

    #[test]
    fn graphs_may_not_be_mixed() {
        let g = triangle();
        let h = build_level(&FractalSpec::interval(), 1).unwrap();
        let f = ScalarField::zeros(&g);
        let other = ScalarField::zeros(&h);
        assert!(matches!(f.add(&other), Err(Error::GraphMismatch { .. })));
    }

    #[test]
    fn structurally_equal_graphs_are_interchangeable() {
        let a = build_level(&FractalSpec::gasket(), 1).unwrap();
        let b = build_level(&FractalSpec::gasket(), 1).unwrap();
        let f = ScalarField::constant(&a, 1.0);
        let g = ScalarField::constant(&b, 2.0);
        assert!(f.add(&g).is_ok());
    }

    #[test]
    fn reference_measures_must_be_strictly_positive() {
        let g = triangle();
        let err = MeasureWeights::reference(&g, vec![1.0, 0.0, 1.0]).unwrap_err();
        assert!(matches!(
            err,
            Error::NonPositiveMeasure { vertex: 1, .. }
        ));
    }

    #[test]
    fn weighted_mean_and_centering() {
        let g = triangle();
        let m = MeasureWeights::reference(&g, vec![0.25, 0.5, 0.25]).unwrap();
        let f = ScalarField::new(&g, vec![1.0, 2.0, 3.0]).unwrap();
        assert_relative_eq!(f.weighted_mean(&m).unwrap(), 2.0);
        let centered = f.center(&m).unwrap();
        assert_relative_eq!(centered.weighted_mean(&m).unwrap(), 0.0, epsilon = 1e-15);
    }

    #[test]
    fn l2_inner_uses_the_measure() {
        let g = triangle();
        let m = MeasureWeights::uniform(&g);
        let f = ScalarField::new(&g, vec![3.0, 0.0, 0.0]).unwrap();
        assert_relative_eq!(f.l2_norm_squared(&m).unwrap(), 3.0);
    }
}
