//! Weak solvers for the quasilinear equation `∂*a(∂u) = f` and the drift
//! equation `−Au + b(∂u) + ϱu = 0`, plus first-order perturbations of the
//! generator and their semigroup positivity.
//!
//! Nonlinearities `a` act edgewise, `a(v)(x,y) = φ(|v(x,y)|)·v(x,y)`: these
//! are the measurable bundle maps of the edge space, keep solver assembly
//! local, and make the structure conditions checkable by sampling. The
//! conditions carry named constants:
//!
//! - growth `c₀`: `‖a(v)‖_H ≤ c₀(1 + ‖v‖_H)`;
//! - coercivity `c₁, c₂`: `⟨a(v), v⟩_H ≥ c₁‖v‖²_H − c₂`;
//! - strict monotonicity `c₃`: `⟨a(v) − a(w), v − w⟩_H ≥ c₃‖v − w‖²_H`.
//!
//! A weak solution of `∂*a(∂u) = f` satisfies `⟨a(∂u), ∂v⟩_H =
//! −⟨f, v⟩_{L₂(m)}` for every test field `v`. Testing against constants
//! forces `∫ f dm = 0`, which is enforced rather than silently projected.
//!
//! Drift coefficients `b` map forms to scalar fields subject to
//! `‖b(v)‖_{L₂(m)} ≤ c₅(1 + ‖v‖_H)`; the fiberwise pairing against a fixed
//! form `w` is the model case, and the same pairing defines the perturbed
//! generator `L^Q u = Au + ⟨b_x, (∂u)_x⟩_{H,x}` whose quadratic form is
//! `Q(f,g) = E(f,g) − Σ_x m(x) g(x) ⟨b_x, (∂f)_x⟩_{H,x}`.

use nalgebra::{DMatrix, DVector};

use crate::energy::{generator_apply, generator_matrix, laplacian_matrix};
use crate::error::{Error, Result};
use crate::fields::{MeasureWeights, ScalarField};
use crate::forms::{self, derivation, fiber_pairing, fiber_view, OneForm};
use crate::fractal::check_same_graph;
use crate::linalg::Factorization;

/// Hard iteration budget for the damped fixed-point solver.
pub const MAX_FIXED_POINT_ITERATIONS: usize = 20_000;

/// Hard iteration budget for the Picard drift solver.
pub const MAX_PICARD_ITERATIONS: usize = 500;

/// Named structure constants of an edge nonlinearity.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct GrowthConstants {
    /// `‖a(v)‖_H ≤ c₀(1 + ‖v‖_H)`.
    pub c0: f64,
    /// `⟨a(v), v⟩_H ≥ c₁‖v‖²_H − c₂`.
    pub c1: f64,
    pub c2: f64,
    /// `⟨a(v) − a(w), v − w⟩_H ≥ c₃‖v − w‖²_H`; `c₃ > 0` means strictly
    /// monotone.
    pub c3: f64,
}

/// The shape of the edgewise map `t ↦ φ(|t|)·t`.
#[derive(Clone, Debug)]
pub enum NonlinearityKind {
    /// `a(v) = v`.
    Identity,
    /// `φ(s) = base + gain/(1+s)`: strictly monotone for `base > 0`,
    /// `gain ≥ 0`, with derivative range `[base, base + gain]`.
    ScaledMonotone { base: f64, gain: f64 },
    /// `φ` given by piecewise-linear interpolation of `(s, φ(s))`
    /// breakpoints, held constant beyond the last breakpoint.
    UserTable { breakpoints: Vec<(f64, f64)> },
}

/// An edgewise nonlinearity together with its structure constants. The
/// constants are verified on a sampled grid of edge values at construction;
/// maps violating growth, coercivity or monotonicity are rejected.
#[derive(Clone, Debug)]
pub struct EdgeNonlinearity {
    kind: NonlinearityKind,
    constants: GrowthConstants,
}

impl EdgeNonlinearity {
    /// The identity map; constants `c₀ = c₁ = c₃ = 1`, `c₂ = 0`.
    pub fn identity() -> Self {
        EdgeNonlinearity {
            kind: NonlinearityKind::Identity,
            constants: GrowthConstants { c0: 1.0, c1: 1.0, c2: 0.0, c3: 1.0 },
        }
    }

    /// `φ(s) = base + gain/(1+s)`; requires `base > 0` and `gain ≥ 0`.
    pub fn scaled_monotone(base: f64, gain: f64) -> Result<Self> {
        if !(base > 0.0) || !(gain >= 0.0) || !base.is_finite() || !gain.is_finite() {
            return Err(Error::InvalidSpec {
                name: "edge nonlinearity".to_owned(),
                reason: format!(
                    "scaled_monotone needs base > 0 and gain ≥ 0, got base={base}, gain={gain}"
                ),
            });
        }
        let candidate = EdgeNonlinearity {
            kind: NonlinearityKind::ScaledMonotone { base, gain },
            constants: GrowthConstants {
                c0: base + gain,
                c1: base,
                c2: 0.0,
                c3: base,
            },
        };
        candidate.check_sampled()?;
        Ok(candidate)
    }

    /// A tabulated multiplier with caller-supplied constants; the table and
    /// the constants are cross-checked on a sampled grid.
    pub fn user_table(
        breakpoints: Vec<(f64, f64)>,
        constants: GrowthConstants,
    ) -> Result<Self> {
        if breakpoints.is_empty() {
            return Err(Error::InvalidSpec {
                name: "edge nonlinearity".to_owned(),
                reason: "table needs at least one breakpoint".to_owned(),
            });
        }
        for window in breakpoints.windows(2) {
            if !(window[1].0 > window[0].0) {
                return Err(Error::InvalidSpec {
                    name: "edge nonlinearity".to_owned(),
                    reason: "table abscissae must be strictly increasing".to_owned(),
                });
            }
        }
        if breakpoints
            .iter()
            .any(|&(s, phi)| s < 0.0 || !s.is_finite() || !phi.is_finite())
        {
            return Err(Error::InvalidSpec {
                name: "edge nonlinearity".to_owned(),
                reason: "table entries must be finite with nonnegative abscissae".to_owned(),
            });
        }
        if [constants.c0, constants.c1, constants.c2, constants.c3]
            .iter()
            .any(|c| !c.is_finite())
            || constants.c3 < 0.0
        {
            return Err(Error::InvalidSpec {
                name: "edge nonlinearity".to_owned(),
                reason: "constants must be finite with c₃ ≥ 0".to_owned(),
            });
        }
        let candidate = EdgeNonlinearity {
            kind: NonlinearityKind::UserTable { breakpoints },
            constants,
        };
        candidate.check_sampled()?;
        Ok(candidate)
    }

    pub fn kind(&self) -> &NonlinearityKind {
        &self.kind
    }

    pub fn constants(&self) -> GrowthConstants {
        self.constants
    }

    /// The multiplier `φ(s)` at `s = |t|`.
    pub fn multiplier(&self, s: f64) -> f64 {
        let s = s.abs();
        match &self.kind {
            NonlinearityKind::Identity => 1.0,
            NonlinearityKind::ScaledMonotone { base, gain } => base + gain / (1.0 + s),
            NonlinearityKind::UserTable { breakpoints } => {
                if s <= breakpoints[0].0 {
                    return breakpoints[0].1;
                }
                let last = breakpoints.len() - 1;
                if s >= breakpoints[last].0 {
                    return breakpoints[last].1;
                }
                let hi = breakpoints.partition_point(|&(bs, _)| bs < s);
                let (s0, p0) = breakpoints[hi - 1];
                let (s1, p1) = breakpoints[hi];
                p0 + (p1 - p0) * (s - s0) / (s1 - s0)
            }
        }
    }

    /// The scalar map `ψ(t) = φ(|t|)·t` applied to one edge value.
    pub fn evaluate(&self, t: f64) -> f64 {
        self.multiplier(t) * t
    }

    /// Edgewise application `a(v)(x,y) = ψ(v(x,y))`.
    pub fn apply(&self, v: &OneForm) -> OneForm {
        OneForm::from_fn(v.graph(), |e| self.evaluate(v.value(e)))
            .expect("finite values map to finite values")
    }

    /// One-line summary of the verified structure conditions.
    pub fn condition_report(&self) -> String {
        let c = self.constants;
        format!(
            "growth c0={:.3e}, coercivity c1={:.3e} c2={:.3e}, monotonicity c3={:.3e} (sampled checks passed)",
            c.c0, c.c1, c.c2, c.c3
        )
    }

    /// Sampled verification of growth, coercivity and (strict)
    /// monotonicity on a grid of edge values.
    fn check_sampled(&self) -> Result<()> {
        let mut samples: Vec<f64> = Vec::new();
        let mut push = |t: f64| samples.push(t);
        for k in 0..=64 {
            push(-8.0 + 0.25 * k as f64);
        }
        for t in [20.0, 100.0] {
            push(t);
            push(-t);
        }
        if let NonlinearityKind::UserTable { breakpoints } = &self.kind {
            for window in breakpoints.windows(2) {
                let mid = 0.5 * (window[0].0 + window[1].0);
                samples.push(mid);
                samples.push(-mid);
            }
            for &(s, _) in breakpoints {
                samples.push(s);
                samples.push(-s);
            }
        }

        let c = self.constants;
        for &t in &samples {
            let psi = self.evaluate(t);
            if !psi.is_finite() {
                return Err(self.reject(format!("ψ({t}) is not finite")));
            }
            if psi.abs() > c.c0 * (1.0 + t.abs()) * (1.0 + 1e-12) + 1e-12 {
                return Err(self.reject(format!(
                    "growth violated at t={t}: |ψ(t)|={} > c0(1+|t|)={}",
                    psi.abs(),
                    c.c0 * (1.0 + t.abs())
                )));
            }
            if psi * t < c.c1 * t * t - c.c2 - 1e-9 * (1.0 + t * t) {
                return Err(self.reject(format!(
                    "coercivity violated at t={t}: ψ(t)t={} < c1·t²−c2={}",
                    psi * t,
                    c.c1 * t * t - c.c2
                )));
            }
        }
        for (i, &t) in samples.iter().enumerate() {
            for &u in &samples[i + 1..] {
                let gap = (self.evaluate(t) - self.evaluate(u)) * (t - u);
                let dt2 = (t - u) * (t - u);
                if gap < c.c3 * dt2 - 1e-9 * (1.0 + dt2) {
                    return Err(self.reject(format!(
                        "monotonicity violated on ({t}, {u}): (ψ(t)−ψ(u))(t−u)={gap} < c3(t−u)²={}",
                        c.c3 * dt2
                    )));
                }
            }
        }
        Ok(())
    }

    fn reject(&self, reason: String) -> Error {
        Error::InvalidSpec { name: "edge nonlinearity".to_owned(), reason }
    }
}

/// The shape of a drift coefficient `b: H → L₂(m)`.
#[derive(Clone, Debug)]
pub enum DriftKind {
    /// `b(v) = 0`.
    Zero,
    /// `b(v)(x) = ⟨w_x, v_x⟩_{H,x}` for a fixed form `w`.
    FiberPairing { w: OneForm },
    /// `b(v) = β + ⟨w_·, v_·⟩` with a fixed offset field `β`.
    Affine { offset: ScalarField, w: OneForm },
}

/// A drift coefficient with its verified growth constant `c₅`:
/// `‖b(v)‖_{L₂(m)} ≤ c₅(1 + ‖v‖_H)`.
#[derive(Clone, Debug)]
pub struct DriftCoefficient {
    kind: DriftKind,
    c5: f64,
}

impl DriftCoefficient {
    pub fn zero() -> Self {
        DriftCoefficient { kind: DriftKind::Zero, c5: 0.0 }
    }

    /// Pairing against the fibers of a fixed form; `c₅ = sup_x ‖w_x‖_{H,x}`.
    pub fn fiber_pairing(m: &MeasureWeights, w: OneForm) -> Result<Self> {
        check_same_graph(m.graph(), w.graph())?;
        let c5 = fiber_view(m, &w)?.sup();
        let coefficient = DriftCoefficient { kind: DriftKind::FiberPairing { w }, c5 };
        coefficient.check_sampled(m)?;
        Ok(coefficient)
    }

    /// Affine drift `b(v) = β + ⟨w_·, v_·⟩`;
    /// `c₅ = max(‖β‖_{L₂(m)}, sup_x ‖w_x‖_{H,x})`.
    pub fn affine(m: &MeasureWeights, offset: ScalarField, w: OneForm) -> Result<Self> {
        check_same_graph(m.graph(), offset.graph())?;
        check_same_graph(m.graph(), w.graph())?;
        let sup_w = fiber_view(m, &w)?.sup();
        let off_norm = offset.l2_norm_squared(m)?.sqrt();
        let c5 = sup_w.max(off_norm);
        let coefficient = DriftCoefficient {
            kind: DriftKind::Affine { offset, w },
            c5,
        };
        coefficient.check_sampled(m)?;
        Ok(coefficient)
    }

    pub fn kind(&self) -> &DriftKind {
        &self.kind
    }

    /// The verified growth constant `c₅`.
    pub fn growth_constant(&self) -> f64 {
        self.c5
    }

    /// Whether `b(0) = 0`, in which case the drift equation has the zero
    /// solution.
    pub fn vanishes_at_zero(&self) -> bool {
        match &self.kind {
            DriftKind::Zero | DriftKind::FiberPairing { .. } => true,
            DriftKind::Affine { offset, .. } => offset.max_abs() == 0.0,
        }
    }

    /// Evaluate `b(v)` as a scalar field.
    pub fn apply(&self, m: &MeasureWeights, v: &OneForm) -> Result<ScalarField> {
        check_same_graph(m.graph(), v.graph())?;
        match &self.kind {
            DriftKind::Zero => Ok(ScalarField::zeros(m.graph())),
            DriftKind::FiberPairing { w } => fiber_pairing(m, w, v),
            DriftKind::Affine { offset, w } => fiber_pairing(m, w, v)?.add(offset),
        }
    }

    /// Sampled verification of the growth bound on a deterministic family
    /// of test forms.
    fn check_sampled(&self, m: &MeasureWeights) -> Result<()> {
        let graph = m.graph();
        let mut tests: Vec<OneForm> = vec![
            OneForm::from_fn(graph, |_| 1.0)?,
            OneForm::from_fn(graph, |e| if e % 2 == 0 { 1.0 } else { -2.0 })?,
        ];
        for k in 0..graph.edge_count().min(6) {
            tests.push(OneForm::from_fn(graph, |e| {
                if e == k {
                    1.0 + k as f64
                } else {
                    0.0
                }
            })?);
        }
        for v in &tests {
            let image = self.apply(m, v)?;
            let lhs = image.l2_norm_squared(m)?.sqrt();
            let bound = self.c5 * (1.0 + v.norm_h());
            if lhs > bound * (1.0 + 1e-10) + 1e-12 {
                return Err(Error::InvalidSpec {
                    name: "drift coefficient".to_owned(),
                    reason: format!(
                        "growth violated: ‖b(v)‖={lhs:.6e} > c5(1+‖v‖)={bound:.6e}"
                    ),
                });
            }
        }
        Ok(())
    }
}

/// Outcome of an iterative solve. `converged` implies the reported weak
/// residual is at or below the tolerance that was requested.
#[derive(Clone, Debug)]
pub struct SolveDiagnostics {
    /// Number of update steps performed.
    pub iterations: usize,
    /// Weak residual of the returned iterate, measured against the
    /// vertex-indicator test basis.
    pub residual: f64,
    pub converged: bool,
    /// Human-readable summary of the structure conditions and the solver
    /// configuration.
    pub condition_report: String,
    /// Weak residual before each update step (first entry: initial guess).
    pub residual_history: Vec<f64>,
}

/// Weak residual of `∂*a(∂u) = f` against the vertex indicators:
/// `max_x |⟨a(∂u), ∂1_x⟩_H + ⟨f, 1_x⟩_{L₂(m)}| = max_x m(x)|(∂*a(∂u) − f)(x)|`.
fn quasilinear_residual(m: &MeasureWeights, image: &OneForm, f: &ScalarField) -> f64 {
    let flux = forms::net_flux(image);
    (0..m.graph().vertex_count())
        .map(|x| (flux[x] - m.value(x) * f.value(x)).abs())
        .fold(0.0, f64::max)
}

/// Solve `Au = g` for the `m`-mean-zero `u`; `g` must integrate to zero
/// against `m`, which the callers guarantee structurally.
fn generator_solve(
    factor: &Factorization,
    m: &MeasureWeights,
    rhs_weighted: &DVector<f64>,
) -> Result<ScalarField> {
    let n = m.graph().vertex_count();
    let reduced = DVector::from_iterator(n - 1, (1..n).map(|x| -rhs_weighted[x]));
    let solution = factor.solve(&reduced)?;
    let mut values = DVector::zeros(n);
    for x in 1..n {
        values[x] = solution[x - 1];
    }
    ScalarField::from_vector(m.graph(), values)?.center(m)
}

/// Weak solution of the quasilinear equation `∂*a(∂u) = f`:
/// `⟨a(∂u), ∂v⟩_H = −⟨f, v⟩_{L₂(m)}` for all `v`, returned `m`-mean-zero.
///
/// Solved by the damped fixed-point iteration
/// `u ← u − τ A⁻¹(∂*a(∂u) − f)` with `τ = c₃/(2c₀²)`, which contracts in
/// the energy norm for strictly monotone `a`; the damping is halved
/// adaptively whenever the residual fails to decrease. Convergence is
/// declared when the indicator-basis weak residual drops below `tol`.
pub fn solve_quasilinear(
    m: &MeasureWeights,
    a: &EdgeNonlinearity,
    f: &ScalarField,
    tol: f64,
) -> Result<(ScalarField, SolveDiagnostics)> {
    let start = ScalarField::zeros(m.graph());
    solve_quasilinear_from(m, a, f, tol, &start)
}

/// [`solve_quasilinear`] from a caller-chosen initial iterate; strict
/// monotonicity makes the limit independent of the start.
pub fn solve_quasilinear_from(
    m: &MeasureWeights,
    a: &EdgeNonlinearity,
    f: &ScalarField,
    tol: f64,
    start: &ScalarField,
) -> Result<(ScalarField, SolveDiagnostics)> {
    check_same_graph(m.graph(), f.graph())?;
    check_same_graph(m.graph(), start.graph())?;
    m.ensure_strictly_positive()?;
    if !(tol > 0.0) {
        return Err(Error::Precondition(format!(
            "tolerance must be positive, got {tol}"
        )));
    }
    let graph = m.graph();
    if !graph.is_connected() {
        return Err(Error::Disconnected(graph.describe()));
    }
    let constants = a.constants();
    if !(constants.c3 > 0.0) {
        return Err(Error::Precondition(format!(
            "uniqueness needs a strictly monotone nonlinearity (c₃ > 0), got c₃ = {}",
            constants.c3
        )));
    }
    let one = ScalarField::constant(graph, 1.0);
    let integral = f.l2_inner(&one, m)?;
    if integral.abs() > 1e-10 * (1.0 + f.max_abs()) {
        return Err(Error::Precondition(format!(
            "right side must integrate to zero against m (solvability against constant test fields); got ∫f dm = {integral:.6e}"
        )));
    }

    let n = graph.vertex_count();
    let l = laplacian_matrix(graph);
    let free: Vec<usize> = (1..n).collect();
    let factor =
        Factorization::new(&l.select_rows(free.iter()).select_columns(free.iter()))?;

    let mut tau = constants.c3 / (2.0 * constants.c0 * constants.c0);
    let mut u = start.center(m)?;
    let mut history = Vec::new();
    let mut iterations = 0usize;
    let mut residual;
    loop {
        let image = a.apply(&derivation(&u));
        residual = quasilinear_residual(m, &image, f);
        history.push(residual);
        if residual <= tol || iterations >= MAX_FIXED_POINT_ITERATIONS {
            break;
        }
        if iterations > 0 && residual > history[iterations - 1] {
            tau *= 0.5;
            if tau < 1e-10 {
                break;
            }
        }
        // rhs_weighted = m·(∂*a(∂u) − f) as a plain vector.
        let flux = forms::net_flux(&image);
        let rhs_weighted = DVector::from_iterator(
            n,
            (0..n).map(|x| flux[x] - m.value(x) * f.value(x)),
        );
        let correction = generator_solve(&factor, m, &rhs_weighted)?;
        u = u.add(&correction.scale(-tau))?.center(m)?;
        iterations += 1;
    }

    let converged = residual <= tol;
    let report = format!(
        "{}; damping τ={tau:.3e}{}",
        a.condition_report(),
        if converged {
            String::new()
        } else {
            format!("; no convergence in {iterations} iterations — residual {residual:.3e}")
        }
    );
    Ok((
        u,
        SolveDiagnostics {
            iterations,
            residual,
            converged,
            condition_report: report,
            residual_history: history,
        },
    ))
}

/// Weak solution of the drift equation `−Au + b(∂u) + ϱu = 0` by Picard
/// iteration: each step solves the linear problem
/// `(−A + ϱ)u_{k+1} = −b(∂u_k)`, which contracts for `ϱ` large enough
/// relative to the growth constant of `b`.
pub fn solve_drift(
    m: &MeasureWeights,
    b: &DriftCoefficient,
    rho: f64,
    tol: f64,
) -> Result<(ScalarField, SolveDiagnostics)> {
    m.ensure_strictly_positive()?;
    if !(rho > 0.0) {
        return Err(Error::Precondition(format!(
            "drift equation needs ϱ > 0, got {rho}"
        )));
    }
    if !(tol > 0.0) {
        return Err(Error::Precondition(format!(
            "tolerance must be positive, got {tol}"
        )));
    }
    let graph = m.graph();
    let n = graph.vertex_count();

    // (−A + ϱ)u = g in L₂(m) reads (L + ϱM)u = Mg weighted by the measure;
    // the left side is symmetric positive definite.
    let mut system = laplacian_matrix(graph);
    for x in 0..n {
        system[(x, x)] += rho * m.value(x);
    }
    let factor = Factorization::new(&system)?;

    let mut u = ScalarField::zeros(graph);
    let mut history = Vec::new();
    let mut iterations = 0usize;
    let mut residual;
    let mut last_update = f64::INFINITY;
    let mut contraction = f64::NAN;
    loop {
        let drift = b.apply(m, &derivation(&u))?;
        let au = generator_apply(m, &u)?;
        residual = (0..n)
            .map(|x| {
                m.value(x)
                    * (-au.value(x) + drift.value(x) + rho * u.value(x)).abs()
            })
            .fold(0.0, f64::max);
        history.push(residual);
        if residual <= tol || iterations >= MAX_PICARD_ITERATIONS {
            break;
        }
        let rhs = DVector::from_iterator(n, (0..n).map(|x| -m.value(x) * drift.value(x)));
        let next = ScalarField::from_vector(graph, factor.solve(&rhs)?)?;
        let update = next.sub(&u)?.max_abs();
        if last_update.is_finite() && last_update > 0.0 {
            contraction = update / last_update;
        }
        last_update = update;
        u = next;
        iterations += 1;
    }

    let converged = residual <= tol;
    let report = format!(
        "ϱ={rho:.3e}, growth c5={:.3e}, contraction estimate {}{}",
        b.growth_constant(),
        if contraction.is_finite() {
            format!("{contraction:.3}")
        } else {
            "n/a".to_owned()
        },
        if converged {
            String::new()
        } else {
            format!("; no convergence in {iterations} iterations — try a larger ϱ")
        }
    );
    Ok((
        u,
        SolveDiagnostics {
            iterations,
            residual,
            converged,
            condition_report: report,
            residual_history: history,
        },
    ))
}

/// Matrix of the perturbed generator
/// `L^Q u(x) = Au(x) + ⟨b_x, (∂u)_x⟩_{H,x}` in the vertex basis. Its
/// quadratic form is `Q(f,g) = E(f,g) − Σ_x m(x) g(x)⟨b_x, (∂f)_x⟩_{H,x}`,
/// i.e. `⟨L^Q f, g⟩_{L₂(m)} = −Q(f,g)`.
pub fn perturbed_generator(m: &MeasureWeights, b: &OneForm) -> Result<DMatrix<f64>> {
    check_same_graph(m.graph(), b.graph())?;
    m.ensure_strictly_positive()?;
    let graph = m.graph();
    let mut lq = generator_matrix(m)?;
    for (i, e) in graph.edges().iter().enumerate() {
        // ⟨b_x, (∂u)_x⟩ = (2m(x))⁻¹ Σ_y c_xy b(x,y)(u(y) − u(x)).
        let src_coeff = e.conductance * b.value(i) / (2.0 * m.value(e.src));
        lq[(e.src, e.dst)] += src_coeff;
        lq[(e.src, e.src)] -= src_coeff;
        let dst_coeff = e.conductance * (-b.value(i)) / (2.0 * m.value(e.dst));
        lq[(e.dst, e.src)] += dst_coeff;
        lq[(e.dst, e.dst)] -= dst_coeff;
    }
    Ok(lq)
}

/// Positivity report for the semigroup `exp(tL)` of a generator matrix.
#[derive(Clone, Debug)]
pub struct PositivityReport {
    pub time: f64,
    /// All entries of `exp(tL)` at or above `−1e−12`.
    pub is_positive: bool,
    pub min_entry: f64,
    /// Coordinates of the most negative entry when positivity fails.
    pub witness: Option<(usize, usize)>,
    /// Discrete sufficient condition: every off-diagonal entry of `L` is
    /// nonnegative (for the perturbed generator this is the midpoint factor
    /// `1 + b(x,y)/2 ≥ 0`, guaranteed by `|b| ≤ 2`). When it holds,
    /// `exp(tL)` is entrywise nonnegative for every `t > 0`.
    pub metzler: bool,
}

/// Compute `exp(tL)` by scaling and squaring and report entrywise
/// positivity of the semigroup at time `t`.
pub fn semigroup_positivity(l: &DMatrix<f64>, t: f64) -> Result<PositivityReport> {
    if !(t > 0.0) {
        return Err(Error::Precondition(format!(
            "semigroup time must be positive, got {t}"
        )));
    }
    if l.nrows() != l.ncols() {
        return Err(Error::Dimension(format!(
            "generator must be square, got {}×{}",
            l.nrows(),
            l.ncols()
        )));
    }
    let metzler = (0..l.nrows()).all(|x| {
        (0..l.ncols()).all(|y| x == y || l[(x, y)] >= -1e-12)
    });
    let semigroup = (l * t).exp();
    let mut min_entry = f64::INFINITY;
    let mut witness = (0, 0);
    for x in 0..semigroup.nrows() {
        for y in 0..semigroup.ncols() {
            if semigroup[(x, y)] < min_entry {
                min_entry = semigroup[(x, y)];
                witness = (x, y);
            }
        }
    }
    let is_positive = min_entry >= -1e-12;
    Ok(PositivityReport {
        time: t,
        is_positive,
        min_entry,
        witness: if is_positive { None } else { Some(witness) },
        metzler,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::energy::energy;
    use crate::fractal::{build_level, self_similar_measure, FractalSpec};
    use crate::linalg;
    use approx::assert_relative_eq;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;
    use std::sync::Arc;

    fn triangle_setup() -> (Arc<crate::LevelGraph>, MeasureWeights) {
        let g = build_level(&FractalSpec::gasket(), 0).unwrap();
        let m = self_similar_measure(&g).unwrap();
        (g, m)
    }

    fn random_mean_zero(
        graph: &Arc<crate::LevelGraph>,
        m: &MeasureWeights,
        rng: &mut ChaCha8Rng,
    ) -> ScalarField {
        ScalarField::from_fn(graph, |_| rng.gen_range(-1.0..1.0))
            .unwrap()
            .center(m)
            .unwrap()
    }

    #[test]
    fn nonlinearity_constructors_validate() {
        assert!(EdgeNonlinearity::identity().constants().c3 > 0.0);
        assert!(EdgeNonlinearity::scaled_monotone(1.0, 1.0).is_ok());
        assert!(EdgeNonlinearity::scaled_monotone(-1.0, 1.0).is_err());
        assert!(EdgeNonlinearity::scaled_monotone(0.0, 1.0).is_err());

        // A decreasing multiplier that destroys monotonicity of ψ(t)=φ(|t|)t.
        let bad = EdgeNonlinearity::user_table(
            vec![(0.0, 1.0), (1.0, 0.01), (2.0, 0.001)],
            GrowthConstants { c0: 1.0, c1: 0.0, c2: 1.0, c3: 0.0 },
        );
        assert!(bad.is_err());

        // An honest table: constant multiplier 2.
        let good = EdgeNonlinearity::user_table(
            vec![(0.0, 2.0), (1.0, 2.0)],
            GrowthConstants { c0: 2.0, c1: 2.0, c2: 0.0, c3: 2.0 },
        )
        .unwrap();
        assert_eq!(good.evaluate(3.0), 6.0);
        assert_eq!(good.evaluate(-3.0), -6.0);

        // Overstated growth constant is caught.
        let lying = EdgeNonlinearity::user_table(
            vec![(0.0, 2.0), (1.0, 2.0)],
            GrowthConstants { c0: 0.5, c1: 0.1, c2: 0.0, c3: 0.1 },
        );
        assert!(lying.is_err());
    }

    #[test]
    fn scaled_monotone_multiplier_shape() {
        let a = EdgeNonlinearity::scaled_monotone(1.0, 1.0).unwrap();
        assert_eq!(a.multiplier(0.0), 2.0);
        assert_relative_eq!(a.multiplier(1.0), 1.5);
        assert_relative_eq!(a.evaluate(1.0), 1.5);
        assert_relative_eq!(a.evaluate(-1.0), -1.5);
    }

    #[test]
    fn quasilinear_identity_matches_hand_solve_on_the_triangle() {
        let (g, m) = triangle_setup();
        let f = ScalarField::new(&g, vec![2.0, -1.0, -1.0]).unwrap();
        let (u, diag) =
            solve_quasilinear(&m, &EdgeNonlinearity::identity(), &f, 1e-12).unwrap();
        assert!(diag.converged);
        // On mean-zero fields of the unit triangle A acts as −9·id, so
        // u = f/(−9).
        let expected = [-2.0 / 9.0, 1.0 / 9.0, 1.0 / 9.0];
        for x in 0..3 {
            assert_relative_eq!(u.value(x), expected[x], epsilon = 1e-10);
        }
        assert!(u.weighted_mean(&m).unwrap().abs() <= 1e-13);
    }

    #[test]
    fn quasilinear_zero_right_side_returns_zero() {
        let (g, m) = triangle_setup();
        let f = ScalarField::zeros(&g);
        let (u, diag) =
            solve_quasilinear(&m, &EdgeNonlinearity::identity(), &f, 1e-12).unwrap();
        assert_eq!(u.max_abs(), 0.0);
        assert!(diag.converged);
        assert_eq!(diag.iterations, 0);
    }

    #[test]
    fn quasilinear_identity_equals_linear_galerkin_solution() {
        let mut rng = ChaCha8Rng::seed_from_u64(101);
        let graph = build_level(&FractalSpec::gasket(), 1).unwrap();
        let m = self_similar_measure(&graph).unwrap();
        let f = random_mean_zero(&graph, &m, &mut rng);
        let (u, diag) =
            solve_quasilinear(&m, &EdgeNonlinearity::identity(), &f, 1e-13).unwrap();
        assert!(diag.converged);

        // Direct grounded linear solve of Au = f.
        let n = graph.vertex_count();
        let l = crate::energy::laplacian_matrix(&graph);
        let free: Vec<usize> = (1..n).collect();
        let reduced = l.select_rows(free.iter()).select_columns(free.iter());
        let rhs =
            DVector::from_iterator(n - 1, (1..n).map(|x| -m.value(x) * f.value(x)));
        let sol = linalg::solve_symmetric(&reduced, &rhs).unwrap();
        let mut values = DVector::zeros(n);
        for x in 1..n {
            values[x] = sol[x - 1];
        }
        let direct = ScalarField::from_vector(&graph, values)
            .unwrap()
            .center(&m)
            .unwrap();
        for x in 0..n {
            assert_relative_eq!(u.value(x), direct.value(x), epsilon = 1e-9, max_relative = 1e-9);
        }
    }

    #[test]
    fn quasilinear_nonlinear_solution_is_unique_across_starts() {
        let mut rng = ChaCha8Rng::seed_from_u64(103);
        let graph = build_level(&FractalSpec::gasket(), 2).unwrap();
        let m = self_similar_measure(&graph).unwrap();
        let a = EdgeNonlinearity::scaled_monotone(1.0, 1.0).unwrap();
        let f = random_mean_zero(&graph, &m, &mut rng);
        let tol = 1e-9;

        let start1 = random_mean_zero(&graph, &m, &mut rng);
        let start2 = random_mean_zero(&graph, &m, &mut rng);
        let (u1, d1) = solve_quasilinear_from(&m, &a, &f, tol, &start1).unwrap();
        let (u2, d2) = solve_quasilinear_from(&m, &a, &f, tol, &start2).unwrap();
        assert!(d1.converged && d2.converged);
        assert!(d1.residual <= 1e-8 && d2.residual <= 1e-8);
        let distance = u1.sub(&u2).unwrap().max_abs();
        assert!(distance <= 10.0 * tol, "starts disagree by {distance}");

        // The weak equation holds against random test fields, not just
        // indicators.
        let image = a.apply(&derivation(&u1));
        for _ in 0..5 {
            let v = ScalarField::from_fn(&graph, |_| rng.gen_range(-1.0..1.0)).unwrap();
            let lhs = crate::forms::inner(&image, &derivation(&v)).unwrap();
            let rhs = -f.l2_inner(&v, &m).unwrap();
            assert!((lhs - rhs).abs() <= 1e-6, "weak equation defect {}", lhs - rhs);
        }
    }

    #[test]
    fn quasilinear_rejects_bad_inputs() {
        let (g, m) = triangle_setup();
        let unbalanced = ScalarField::new(&g, vec![1.0, 0.0, 0.0]).unwrap();
        let err =
            solve_quasilinear(&m, &EdgeNonlinearity::identity(), &unbalanced, 1e-10);
        assert!(matches!(err, Err(Error::Precondition(_))));

        // Merely monotone (c₃ = 0) is rejected by the solver.
        let flat = EdgeNonlinearity::user_table(
            vec![(0.0, 1.0), (1.0, 1.0)],
            GrowthConstants { c0: 1.0, c1: 1.0, c2: 0.0, c3: 0.0 },
        )
        .unwrap();
        let balanced = ScalarField::new(&g, vec![1.0, -1.0, 0.0]).unwrap();
        assert!(matches!(
            solve_quasilinear(&m, &flat, &balanced, 1e-10),
            Err(Error::Precondition(_))
        ));

        assert!(matches!(
            solve_quasilinear(&m, &EdgeNonlinearity::identity(), &balanced, 0.0),
            Err(Error::Precondition(_))
        ));
    }

    #[test]
    fn drift_zero_coefficient_means_zero_solution() {
        let (_, m) = triangle_setup();
        let (u, diag) = solve_drift(&m, &DriftCoefficient::zero(), 2.0, 1e-12).unwrap();
        assert_eq!(u.max_abs(), 0.0);
        assert!(diag.converged);
        assert_eq!(diag.iterations, 0);
    }

    #[test]
    fn drift_affine_matches_direct_linear_solve() {
        let mut rng = ChaCha8Rng::seed_from_u64(107);
        let graph = build_level(&FractalSpec::gasket(), 1).unwrap();
        let m = self_similar_measure(&graph).unwrap();
        let n = graph.vertex_count();
        let w = OneForm::from_fn(&graph, |_| rng.gen_range(-1.0..1.0)).unwrap();
        let offset = ScalarField::from_fn(&graph, |_| rng.gen_range(-1.0..1.0)).unwrap();
        let b = DriftCoefficient::affine(&m, offset.clone(), w.clone()).unwrap();
        let rho = 40.0;

        let (u, diag) = solve_drift(&m, &b, rho, 1e-12).unwrap();
        assert!(diag.converged, "report: {}", diag.condition_report);

        // Direct assembly: (−A + P + ϱ)u = −β with P the pairing part of
        // the perturbed generator.
        let a_mat = generator_matrix(&m).unwrap();
        let p_mat = perturbed_generator(&m, &w).unwrap() - &a_mat;
        let system = -&a_mat + &p_mat + DMatrix::identity(n, n) * rho;
        let rhs = DVector::from_iterator(n, (0..n).map(|x| -offset.value(x)));
        let direct = linalg::solve_lu(&system, &rhs).unwrap();
        for x in 0..n {
            assert_relative_eq!(u.value(x), direct[x], epsilon = 1e-10, max_relative = 1e-10);
        }
    }

    #[test]
    fn drift_contraction_improves_with_larger_rho() {
        let mut rng = ChaCha8Rng::seed_from_u64(109);
        let graph = build_level(&FractalSpec::gasket(), 1).unwrap();
        let m = self_similar_measure(&graph).unwrap();
        let w = OneForm::from_fn(&graph, |_| rng.gen_range(-1.0..1.0)).unwrap();
        let offset = ScalarField::from_fn(&graph, |_| rng.gen_range(-0.5..0.5)).unwrap();
        let b = DriftCoefficient::affine(&m, offset, w).unwrap();

        let (_, slow) = solve_drift(&m, &b, 8.0, 1e-11).unwrap();
        let (_, fast) = solve_drift(&m, &b, 16.0, 1e-11).unwrap();
        assert!(slow.converged && fast.converged);
        assert!(fast.iterations <= slow.iterations);

        // Residuals decrease monotonically in the contraction regime.
        for window in slow.residual_history.windows(2) {
            assert!(window[1] <= window[0] * (1.0 + 1e-9));
        }
    }

    #[test]
    fn drift_rejects_nonpositive_rho() {
        let (_, m) = triangle_setup();
        assert!(matches!(
            solve_drift(&m, &DriftCoefficient::zero(), 0.0, 1e-10),
            Err(Error::Precondition(_))
        ));
        assert!(matches!(
            solve_drift(&m, &DriftCoefficient::zero(), -1.0, 1e-10),
            Err(Error::Precondition(_))
        ));
    }

    #[test]
    fn perturbed_generator_without_drift_is_the_generator() {
        let (g, m) = triangle_setup();
        let b = OneForm::zeros(&g);
        let lq = perturbed_generator(&m, &b).unwrap();
        let a = generator_matrix(&m).unwrap();
        assert_eq!(lq, a);
    }

    #[test]
    fn perturbed_generator_annihilates_constants() {
        let mut rng = ChaCha8Rng::seed_from_u64(113);
        let graph = build_level(&FractalSpec::gasket(), 2).unwrap();
        let m = self_similar_measure(&graph).unwrap();
        let b = OneForm::from_fn(&graph, |_| rng.gen_range(-2.0..2.0)).unwrap();
        let lq = perturbed_generator(&m, &b).unwrap();
        let ones = DVector::from_element(graph.vertex_count(), 1.0);
        assert!((&lq * &ones).amax() <= 1e-12);
    }

    #[test]
    fn perturbed_generator_triangle_circulation_oracle() {
        let (g, m) = triangle_setup();
        // Circulation 0→1→2→0 in canonical edge order (0,1),(0,2),(1,2).
        let b = OneForm::new(&g, vec![1.0, -1.0, 1.0]).unwrap();
        let lq = perturbed_generator(&m, &b).unwrap();
        let expected = DMatrix::from_row_slice(
            3,
            3,
            &[-6.0, 4.5, 1.5, 1.5, -6.0, 4.5, 4.5, 1.5, -6.0],
        );
        assert_relative_eq!(lq, expected, epsilon = 1e-13);
    }

    #[test]
    fn perturbed_form_consistency() {
        let mut rng = ChaCha8Rng::seed_from_u64(127);
        let graph = build_level(&FractalSpec::gasket(), 1).unwrap();
        let m = self_similar_measure(&graph).unwrap();
        let b = OneForm::from_fn(&graph, |_| rng.gen_range(-1.0..1.0)).unwrap();
        let lq = perturbed_generator(&m, &b).unwrap();
        for _ in 0..10 {
            let f = ScalarField::from_fn(&graph, |_| rng.gen_range(-1.0..1.0)).unwrap();
            let g = ScalarField::from_fn(&graph, |_| rng.gen_range(-1.0..1.0)).unwrap();
            let image = ScalarField::from_vector(&graph, &lq * f.values()).unwrap();
            let lhs = image.l2_inner(&g, &m).unwrap();
            let pairing = fiber_pairing(&m, &b, &derivation(&f)).unwrap();
            let q = energy(&f, &g).unwrap()
                - (0..graph.vertex_count())
                    .map(|x| m.value(x) * g.value(x) * pairing.value(x))
                    .sum::<f64>();
            assert_relative_eq!(lhs, -q, epsilon = 1e-12, max_relative = 1e-11);
        }
    }

    #[test]
    fn semigroup_of_the_plain_generator_is_positive() {
        let (_, m) = triangle_setup();
        let a = generator_matrix(&m).unwrap();
        for t in [0.01, 0.5, 3.0, 25.0] {
            let report = semigroup_positivity(&a, t).unwrap();
            assert!(report.is_positive);
            assert!(report.metzler);
            assert!(report.witness.is_none());
        }
    }

    #[test]
    fn semigroup_with_small_drift_stays_positive() {
        let mut rng = ChaCha8Rng::seed_from_u64(131);
        let graph = build_level(&FractalSpec::gasket(), 1).unwrap();
        let m = self_similar_measure(&graph).unwrap();
        // |b| < 2 keeps every midpoint factor 1 + b/2 positive.
        let b = OneForm::from_fn(&graph, |_| rng.gen_range(-1.9..1.9)).unwrap();
        let lq = perturbed_generator(&m, &b).unwrap();
        for t in [0.1, 1.0, 10.0] {
            let report = semigroup_positivity(&lq, t).unwrap();
            assert!(report.metzler);
            assert!(report.is_positive);
        }
    }

    #[test]
    fn semigroup_with_adversarial_drift_loses_positivity() {
        let (g, m) = triangle_setup();
        let b = OneForm::new(&g, vec![-10.0, 0.0, 0.0]).unwrap();
        let lq = perturbed_generator(&m, &b).unwrap();
        // Off-diagonal (0,1) entry is 3(1 + b/2) = −12 < 0.
        assert!(lq[(0, 1)] < 0.0);
        let report = semigroup_positivity(&lq, 0.05).unwrap();
        assert!(!report.metzler);
        assert!(!report.is_positive);
        assert!(report.witness.is_some());
        assert!(report.min_entry < 0.0);
    }

    #[test]
    fn semigroup_rejects_nonpositive_time() {
        let (_, m) = triangle_setup();
        let a = generator_matrix(&m).unwrap();
        assert!(matches!(
            semigroup_positivity(&a, 0.0),
            Err(Error::Precondition(_))
        ));
    }

    #[test]
    fn drift_growth_constant_is_checked() {
        let (g, m) = triangle_setup();
        let w = OneForm::new(&g, vec![1.0, 1.0, 1.0]).unwrap();
        let b = DriftCoefficient::fiber_pairing(&m, w).unwrap();
        assert!(b.growth_constant() > 0.0);
        assert!(b.vanishes_at_zero());

        let offset = ScalarField::new(&g, vec![1.0, 2.0, 3.0]).unwrap();
        let affine =
            DriftCoefficient::affine(&m, offset, OneForm::zeros(&g)).unwrap();
        assert!(!affine.vanishes_at_zero());
        // b(0) = β exactly.
        let at_zero = affine.apply(&m, &OneForm::zeros(&g)).unwrap();
        assert_eq!(at_zero.value(1), 2.0);
    }
}
