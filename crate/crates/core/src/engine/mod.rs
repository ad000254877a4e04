//! Concrete fixed-point-free flows and homogeneous R^d-actions on flat tori
//! and mapping tori.

mod mapping_torus;
mod ode;
mod point;
pub(crate) mod torus;

use std::collections::hash_map::DefaultHasher;
use std::hash::{Hash, Hasher};

use nalgebra::DMatrix;
use smallvec::smallvec;

pub use mapping_torus::MappingTorus;
pub use ode::TorusField;
pub use point::{ChartPoint, Coords, ManifoldId, TangentVector};

use crate::error::{LabError, Result};
use crate::sampling::Halton;

/// Step used by central differences of flows.
pub const FD_STEP: f64 = 1e-5;

#[derive(Clone, Debug, PartialEq)]
pub enum Integrator {
    ClosedForm,
    Rk4 { step: f64 },
}

#[derive(Clone, Debug, PartialEq)]
pub enum SystemKind {
    /// `x -> x + t w` on `T^n`.
    TorusTranslationFlow {
        velocity: Vec<f64>,
    },
    /// Flow of a [`TorusField`], integrated with RK4.
    TorusOdeFlow {
        field: TorusField,
    },
    /// Unit-speed vertical flow on a mapping torus.
    SuspensionFlow {
        base: MappingTorus,
    },
    /// Unstable horocycle flow `(b, h) -> (b + t e^{-rate h} e_u, h)` of a
    /// hyperbolic mapping torus. Shares the manifold of the suspension flow
    /// but does not commute with it.
    SuspensionHorocycleFlow {
        base: MappingTorus,
    },
    DisjointUnion {
        components: Vec<SystemSpec>,
    },
    /// `x -> x + V v` on `T^n`; the columns of `V` span the orbits.
    TorusTranslationAction {
        directions: DMatrix<f64>,
    },
}

/// An immutable flow or action together with its manifold and metric.
#[derive(Clone, Debug, PartialEq)]
pub struct SystemSpec {
    kind: SystemKind,
    time_scale: f64,
    integrator: Integrator,
    metric_window: f64,
    manifold: ManifoldId,
    dim: usize,
    rank: usize,
}

enum Geometry<'a> {
    Torus,
    Mapping(&'a MappingTorus),
}

fn manifold_key(kind: &SystemKind, dim: usize) -> String {
    match kind {
        SystemKind::TorusTranslationFlow { .. }
        | SystemKind::TorusOdeFlow { .. }
        | SystemKind::TorusTranslationAction { .. } => format!("torus:{dim}"),
        SystemKind::SuspensionFlow { base } | SystemKind::SuspensionHorocycleFlow { base } => {
            base.key()
        }
        SystemKind::DisjointUnion { components } => {
            let keys: Vec<String> = components
                .iter()
                .map(|c| manifold_key(&c.kind, c.dim))
                .collect();
            format!("union[{}]", keys.join(","))
        }
    }
}

impl SystemSpec {
    fn build(kind: SystemKind, integrator: Integrator, dim: usize, rank: usize) -> Result<Self> {
        let mut hasher = DefaultHasher::new();
        manifold_key(&kind, dim).hash(&mut hasher);
        let mut spec = Self {
            kind,
            time_scale: 1.0,
            integrator,
            metric_window: 0.0,
            manifold: ManifoldId(hasher.finish()),
            dim,
            rank,
        };
        spec.metric_window = 0.25 * spec.diameter();
        spec.verify_fixed_point_free()?;
        Ok(spec)
    }

    pub fn torus_translation_flow(velocity: Vec<f64>) -> Result<Self> {
        if velocity.is_empty() || velocity.iter().any(|v| !v.is_finite()) {
            return Err(LabError::InvalidSystem(
                "velocity must be finite and non-empty".into(),
            ));
        }
        let dim = velocity.len();
        Self::build(
            SystemKind::TorusTranslationFlow { velocity },
            Integrator::ClosedForm,
            dim,
            1,
        )
    }

    pub fn torus_ode_flow(field: TorusField, step: f64) -> Result<Self> {
        if field.velocity.is_empty() || !(step.is_finite() && step > 0.0) {
            return Err(LabError::InvalidSystem(
                "ODE flow needs a field and a positive step".into(),
            ));
        }
        // Each component depends on a different coordinate, so the field has
        // a zero iff every component can vanish on its own.
        if field
            .velocity
            .iter()
            .all(|w| w.abs() <= field.modulation.abs())
        {
            return Err(LabError::InvalidSystem("the vector field has zeros".into()));
        }
        let dim = field.dim();
        Self::build(
            SystemKind::TorusOdeFlow { field },
            Integrator::Rk4 { step },
            dim,
            1,
        )
    }

    pub fn suspension_flow(matrix: [[i64; 2]; 2], roof: f64) -> Result<Self> {
        let base = MappingTorus::new(matrix, roof)?;
        Self::build(
            SystemKind::SuspensionFlow { base },
            Integrator::ClosedForm,
            3,
            1,
        )
    }

    pub fn suspension_horocycle_flow(matrix: [[i64; 2]; 2], roof: f64) -> Result<Self> {
        let base = MappingTorus::new(matrix, roof)?;
        if base.horocycle_velocity(0.0).is_none() {
            return Err(LabError::InvalidSystem(
                "horocycle flow needs a hyperbolic matrix with positive unstable eigenvalue".into(),
            ));
        }
        Self::build(
            SystemKind::SuspensionHorocycleFlow { base },
            Integrator::ClosedForm,
            3,
            1,
        )
    }

    pub fn disjoint_union(components: Vec<SystemSpec>) -> Result<Self> {
        let first = components
            .first()
            .ok_or_else(|| LabError::InvalidSystem("disjoint union needs components".into()))?;
        let rank = first.rank;
        if components.iter().any(|c| c.rank != rank) {
            return Err(LabError::InvalidSystem(
                "union components must share the rank".into(),
            ));
        }
        if components
            .iter()
            .any(|c| matches!(c.kind, SystemKind::DisjointUnion { .. }))
        {
            return Err(LabError::InvalidSystem(
                "nested disjoint unions are not supported".into(),
            ));
        }
        let dim = components.iter().map(|c| c.dim).max().unwrap_or(0);
        Self::build(
            SystemKind::DisjointUnion { components },
            Integrator::ClosedForm,
            dim,
            rank,
        )
    }

    pub fn torus_translation_action(directions: DMatrix<f64>) -> Result<Self> {
        let (dim, rank) = directions.shape();
        if rank == 0 || rank > dim {
            return Err(LabError::InvalidSystem(format!(
                "direction matrix must be dim x d with 1 <= d <= dim, got {dim} x {rank}"
            )));
        }
        if directions.iter().any(|v| !v.is_finite()) {
            return Err(LabError::InvalidSystem(
                "direction matrix must be finite".into(),
            ));
        }
        let sigma_min = directions
            .clone()
            .svd(false, false)
            .singular_values
            .iter()
            .copied()
            .fold(f64::INFINITY, f64::min);
        if sigma_min <= 1e-12 {
            return Err(LabError::DegenerateBasis { sigma_min });
        }
        Self::build(
            SystemKind::TorusTranslationAction { directions },
            Integrator::ClosedForm,
            dim,
            rank,
        )
    }

    /// The reparameterized system `t -> phi_{c t}` (or `v -> Phi_{c v}`).
    pub fn with_time_scale(mut self, c: f64) -> Result<Self> {
        if !(c.is_finite() && c != 0.0) {
            return Err(LabError::InvalidSystem(format!(
                "time scale must be finite and nonzero, got {c}"
            )));
        }
        self.time_scale *= c;
        Ok(self)
    }

    pub fn with_metric_window(mut self, window: f64) -> Result<Self> {
        if !(window.is_finite() && window > 0.0) {
            return Err(LabError::InvalidSystem(
                "metric window must be positive".into(),
            ));
        }
        self.metric_window = window;
        Ok(self)
    }

    /// The action `v -> Phi_{B v}` for a `d x d` matrix `B`.
    pub fn with_action_matrix(&self, b: &DMatrix<f64>) -> Result<Self> {
        if b.shape() != (self.rank, self.rank) {
            return Err(LabError::InvalidArgument(format!(
                "action matrix must be {0} x {0}",
                self.rank
            )));
        }
        match &self.kind {
            SystemKind::TorusTranslationAction { directions } => {
                let scaled = directions * b * self.time_scale;
                let mut spec = Self::torus_translation_action(scaled)?;
                spec.metric_window = self.metric_window;
                Ok(spec)
            }
            _ if self.rank == 1 => self.clone().with_time_scale(b[(0, 0)]),
            _ => Err(LabError::InvalidArgument(
                "action matrix on unsupported system".into(),
            )),
        }
    }

    /// The flow `t -> Phi_{t v}` of a translation action.
    pub fn flow_along(&self, v: &[f64]) -> Result<Self> {
        self.check_action_vector(v)?;
        match &self.kind {
            SystemKind::TorusTranslationAction { directions } => {
                let w = directions * nalgebra::DVector::from_column_slice(v) * self.time_scale;
                let mut spec = Self::torus_translation_flow(w.iter().copied().collect())?;
                spec.metric_window = self.metric_window;
                Ok(spec)
            }
            _ if self.rank == 1 => self.clone().with_time_scale(v[0]),
            _ => Err(LabError::InvalidArgument(
                "flow_along needs a translation action".into(),
            )),
        }
    }

    pub fn kind(&self) -> &SystemKind {
        &self.kind
    }

    pub fn time_scale(&self) -> f64 {
        self.time_scale
    }

    pub fn integrator(&self) -> &Integrator {
        &self.integrator
    }

    pub fn metric_window(&self) -> f64 {
        self.metric_window
    }

    pub fn manifold_id(&self) -> ManifoldId {
        self.manifold
    }

    /// Manifold dimension (the largest component dimension for unions).
    pub fn dim(&self) -> usize {
        self.dim
    }

    /// Action rank `d`; 1 for flows.
    pub fn rank(&self) -> usize {
        self.rank
    }

    pub fn is_flow(&self) -> bool {
        self.rank == 1
    }

    pub fn component_count(&self) -> usize {
        match &self.kind {
            SystemKind::DisjointUnion { components } => components.len(),
            _ => 1,
        }
    }

    /// Closed-form systems evaluate exactly; ODE systems carry RK4 error.
    pub fn is_closed_form(&self) -> bool {
        match &self.kind {
            SystemKind::DisjointUnion { components } => {
                components.iter().all(|c| c.is_closed_form())
            }
            SystemKind::TorusOdeFlow { .. } => false,
            _ => true,
        }
    }

    /// Every component lives on a flat torus, where `exp_x` is translation.
    pub fn is_flat_torus(&self) -> bool {
        match &self.kind {
            SystemKind::DisjointUnion { components } => {
                components.iter().all(|c| c.is_flat_torus())
            }
            SystemKind::SuspensionFlow { .. } | SystemKind::SuspensionHorocycleFlow { .. } => false,
            _ => true,
        }
    }

    fn component_dim(&self, component: usize) -> usize {
        match &self.kind {
            SystemKind::DisjointUnion { components } => components[component].dim,
            _ => self.dim,
        }
    }

    fn geometry(&self) -> Geometry<'_> {
        match &self.kind {
            SystemKind::SuspensionFlow { base } | SystemKind::SuspensionHorocycleFlow { base } => {
                Geometry::Mapping(base)
            }
            _ => Geometry::Torus,
        }
    }

    /// Diameter of the fundamental domain in the implemented metric.
    pub fn diameter(&self) -> f64 {
        match &self.kind {
            SystemKind::DisjointUnion { components } => {
                components.iter().map(|c| c.diameter()).fold(0.0, f64::max)
            }
            _ => match self.geometry() {
                Geometry::Torus => (self.dim as f64).sqrt() / 2.0,
                Geometry::Mapping(base) => base.diameter(),
            },
        }
    }

    /// Build a normalized point on `component`.
    pub fn point(&self, component: usize, coords: &[f64]) -> Result<ChartPoint> {
        if component >= self.component_count() {
            return Err(LabError::InvalidArgument(format!(
                "component {component} out of range"
            )));
        }
        if coords.len() != self.component_dim(component) {
            return Err(LabError::InvalidArgument(format!(
                "expected {} coordinates, got {}",
                self.component_dim(component),
                coords.len()
            )));
        }
        if coords.iter().any(|c| !c.is_finite()) {
            return Err(LabError::InvalidArgument(
                "coordinates must be finite".into(),
            ));
        }
        let mut c: Coords = coords.iter().copied().collect();
        self.normalize_coords(component, &mut c);
        Ok(ChartPoint::from_parts(self.manifold, component, c))
    }

    fn normalize_coords(&self, component: usize, c: &mut Coords) {
        match &self.kind {
            SystemKind::DisjointUnion { components } => {
                components[component].normalize_coords(0, c)
            }
            _ => match self.geometry() {
                Geometry::Torus => c.iter_mut().for_each(|v| *v = torus::wrap_unit(*v)),
                Geometry::Mapping(base) => base.normalize(c),
            },
        }
    }

    /// Number of unit-cube coordinates consumed by [`Self::point_from_unit`].
    pub fn sample_dim(&self) -> usize {
        match &self.kind {
            SystemKind::DisjointUnion { components } => {
                1 + components.iter().map(|c| c.sample_dim()).max().unwrap_or(0)
            }
            _ => self.dim,
        }
    }

    /// Map a point of the unit cube onto the manifold.
    pub fn point_from_unit(&self, u: &[f64]) -> ChartPoint {
        let (component, coords) = self.unit_coords(u);
        let mut c = coords;
        self.normalize_coords(component, &mut c);
        ChartPoint::from_parts(self.manifold, component, c)
    }

    fn unit_coords(&self, u: &[f64]) -> (usize, Coords) {
        match &self.kind {
            SystemKind::DisjointUnion { components } => {
                let m = components.len();
                let component = ((u[0] * m as f64) as usize).min(m - 1);
                (component, components[component].unit_coords(&u[1..]).1)
            }
            _ => match self.geometry() {
                Geometry::Torus => (0, u[..self.dim].iter().copied().collect()),
                Geometry::Mapping(base) => (0, smallvec![u[0], u[1], u[2] * base.roof()]),
            },
        }
    }

    pub fn check_point(&self, x: &ChartPoint) -> Result<()> {
        if x.manifold != self.manifold || x.component >= self.component_count() {
            Err(LabError::DomainMismatch)
        } else {
            Ok(())
        }
    }

    fn check_action_vector(&self, v: &[f64]) -> Result<()> {
        if v.len() != self.rank {
            return Err(LabError::InvalidArgument(format!(
                "action vector has length {}, expected {}",
                v.len(),
                self.rank
            )));
        }
        if v.iter().any(|c| !c.is_finite()) {
            return Err(LabError::InvalidArgument(
                "action vector must be finite".into(),
            ));
        }
        Ok(())
    }

    /// `phi_t(x)`.
    pub fn evaluate_flow(&self, t: f64, x: &ChartPoint) -> Result<ChartPoint> {
        self.check_point(x)?;
        if !t.is_finite() {
            return Err(LabError::InvalidArgument(format!(
                "time must be finite, got {t}"
            )));
        }
        if self.rank != 1 {
            return Err(LabError::InvalidArgument(
                "evaluate_flow needs a rank-1 system".into(),
            ));
        }
        let mut c = x.coords.clone();
        self.flow_coords(x.component, t, &mut c);
        Ok(ChartPoint::from_parts(self.manifold, x.component, c))
    }

    /// `Phi_v(x)`.
    pub fn evaluate_action(&self, v: &[f64], x: &ChartPoint) -> Result<ChartPoint> {
        self.check_point(x)?;
        self.check_action_vector(v)?;
        let mut c = x.coords.clone();
        self.action_coords(x.component, v, &mut c);
        Ok(ChartPoint::from_parts(self.manifold, x.component, c))
    }

    fn flow_coords(&self, component: usize, t: f64, c: &mut Coords) {
        let t = self.time_scale * t;
        match &self.kind {
            SystemKind::DisjointUnion { components } => components[component].flow_coords(0, t, c),
            SystemKind::TorusTranslationFlow { velocity } => {
                for (ci, w) in c.iter_mut().zip(velocity) {
                    *ci = torus::wrap_unit(*ci + t * w);
                }
            }
            SystemKind::TorusOdeFlow { field } => {
                let step = match self.integrator {
                    Integrator::Rk4 { step } => step,
                    Integrator::ClosedForm => unreachable!("ODE flows always carry an RK4 step"),
                };
                ode::rk4_integrate(field, 1.0, c, t, step);
                c.iter_mut().for_each(|v| *v = torus::wrap_unit(*v));
            }
            SystemKind::SuspensionFlow { base } => {
                c[2] += t;
                base.normalize(c);
            }
            SystemKind::SuspensionHorocycleFlow { base } => {
                let v = base
                    .horocycle_velocity(c[2])
                    .expect("validated at construction");
                c[0] = torus::wrap_unit(c[0] + t * v[0]);
                c[1] = torus::wrap_unit(c[1] + t * v[1]);
            }
            SystemKind::TorusTranslationAction { directions } => {
                for (i, ci) in c.iter_mut().enumerate() {
                    *ci = torus::wrap_unit(*ci + t * directions[(i, 0)]);
                }
            }
        }
    }

    fn action_coords(&self, component: usize, v: &[f64], c: &mut Coords) {
        match &self.kind {
            SystemKind::DisjointUnion { components } => {
                let scaled: Vec<f64> = v.iter().map(|vi| vi * self.time_scale).collect();
                components[component].action_coords(0, &scaled, c)
            }
            SystemKind::TorusTranslationAction { directions } => {
                for (i, ci) in c.iter_mut().enumerate() {
                    let shift: f64 = (0..self.rank).map(|j| directions[(i, j)] * v[j]).sum();
                    *ci = torus::wrap_unit(*ci + self.time_scale * shift);
                }
            }
            _ => self.flow_coords(component, v[0], c),
        }
    }

    /// The metric `d(x, y)`. Points on different components of a disjoint
    /// union are incomparable and sit at infinite distance.
    pub fn distance(&self, x: &ChartPoint, y: &ChartPoint) -> Result<f64> {
        self.check_point(x)?;
        self.check_point(y)?;
        if x.component != y.component {
            return Ok(f64::INFINITY);
        }
        Ok(self.distance_coords(x.component, &x.coords, &y.coords))
    }

    fn distance_coords(&self, component: usize, x: &[f64], y: &[f64]) -> f64 {
        match &self.kind {
            SystemKind::DisjointUnion { components } => {
                components[component].distance_coords(0, x, y)
            }
            _ => match self.geometry() {
                Geometry::Torus => torus::flat_distance(x, y),
                Geometry::Mapping(base) => base.distance(x, y),
            },
        }
    }

    /// Flat-chart displacement from `x` to `y` (minimal image; nearest lift on
    /// mapping tori).
    pub fn chart_delta(&self, x: &ChartPoint, y: &ChartPoint) -> Result<Vec<f64>> {
        self.check_point(x)?;
        self.check_point(y)?;
        if x.component != y.component {
            return Err(LabError::InvalidArgument(
                "points lie on different components".into(),
            ));
        }
        Ok(self.delta_coords(x.component, &x.coords, &y.coords))
    }

    fn delta_coords(&self, component: usize, x: &[f64], y: &[f64]) -> Vec<f64> {
        match &self.kind {
            SystemKind::DisjointUnion { components } => components[component].delta_coords(0, x, y),
            _ => match self.geometry() {
                Geometry::Torus => x
                    .iter()
                    .zip(y)
                    .map(|(a, b)| torus::minimal_image(*a, *b))
                    .collect(),
                Geometry::Mapping(base) => base.chart_delta(x, y).to_vec(),
            },
        }
    }

    /// `x + eps * dir` in the flat chart, normalized.
    pub fn displace(&self, x: &ChartPoint, dir: &[f64], eps: f64) -> Result<ChartPoint> {
        self.check_point(x)?;
        if dir.len() != x.dim() {
            return Err(LabError::InvalidArgument(
                "direction has wrong length".into(),
            ));
        }
        let mut c: Coords = x.coords.iter().zip(dir).map(|(a, d)| a + eps * d).collect();
        self.normalize_coords(x.component, &mut c);
        Ok(ChartPoint::from_parts(self.manifold, x.component, c))
    }

    /// `X_i(x)`, the generator of `t -> Phi(t e_i, x)` (`i` is 0-based).
    pub fn vector_field(&self, i: usize, x: &ChartPoint) -> Result<TangentVector> {
        self.check_point(x)?;
        if i >= self.rank {
            return Err(LabError::InvalidArgument(format!(
                "vector field index {i} out of range for rank {}",
                self.rank
            )));
        }
        let components = self.field_coords(x.component, i, &x.coords);
        Ok(TangentVector {
            base: x.clone(),
            components,
        })
    }

    fn field_coords(&self, component: usize, i: usize, c: &Coords) -> Vec<f64> {
        let s = self.time_scale;
        match &self.kind {
            SystemKind::DisjointUnion { components } => components[component]
                .field_coords(0, i, c)
                .into_iter()
                .map(|v| s * v)
                .collect(),
            SystemKind::TorusTranslationFlow { velocity } => {
                velocity.iter().map(|w| s * w).collect()
            }
            SystemKind::TorusOdeFlow { .. } => {
                let mut fwd = c.clone();
                let mut bwd = c.clone();
                self.flow_coords(0, FD_STEP, &mut fwd);
                self.flow_coords(0, -FD_STEP, &mut bwd);
                self.delta_coords(0, &bwd, &fwd)
                    .into_iter()
                    .map(|d| d / (2.0 * FD_STEP))
                    .collect()
            }
            SystemKind::SuspensionFlow { .. } => vec![0.0, 0.0, s],
            SystemKind::SuspensionHorocycleFlow { base } => {
                let v = base
                    .horocycle_velocity(c[2])
                    .expect("validated at construction");
                vec![s * v[0], s * v[1], 0.0]
            }
            SystemKind::TorusTranslationAction { directions } => {
                directions.column(i).iter().map(|v| s * v).collect()
            }
        }
    }

    /// Orbit samples `phi_{t0 + k dt}(x)` for `k = 0..n`. ODE systems march
    /// incrementally; closed-form systems evaluate each time directly.
    pub fn trajectory(
        &self,
        x: &ChartPoint,
        t0: f64,
        dt: f64,
        n: usize,
    ) -> Result<Vec<ChartPoint>> {
        let mut out = Vec::with_capacity(n);
        if self.is_closed_form() {
            for k in 0..n {
                out.push(self.evaluate_flow(t0 + k as f64 * dt, x)?);
            }
        } else {
            let mut cur = self.evaluate_flow(t0, x)?;
            for _ in 0..n {
                let next = self.evaluate_flow(dt, &cur)?;
                out.push(std::mem::replace(&mut cur, next));
            }
        }
        Ok(out)
    }

    fn verify_fixed_point_free(&self) -> Result<()> {
        let mut halton = Halton::new(self.sample_dim(), 0);
        let mut u = vec![0.0; self.sample_dim()];
        for _ in 0..1000 {
            halton.next_into(&mut u);
            let x = self.point_from_unit(&u);
            for i in 0..self.rank {
                let norm = self
                    .field_coords(x.component, i, &x.coords)
                    .iter()
                    .map(|v| v * v)
                    .sum::<f64>()
                    .sqrt();
                if !(norm > 1e-12) {
                    return Err(LabError::InvalidSystem(format!(
                        "generating field {i} vanishes near {:?}",
                        x.coords()
                    )));
                }
            }
        }
        Ok(())
    }
}
