use serde::Serialize;
use smallvec::SmallVec;

/// Coordinate storage; every manifold in the catalog has dimension <= 4.
pub type Coords = SmallVec<[f64; 4]>;

/// Identifies the phase space a point lives on. Two systems share an id
/// exactly when they act on the same manifold.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Default)]
pub struct ManifoldId(pub(crate) u64);

/// A point of a system's manifold, always stored in normalized form: torus
/// coordinates in `[0, 1)`, mapping-torus points as `(base, height)` with the
/// height in `[0, roof)`.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct ChartPoint {
    #[serde(skip)]
    pub(crate) manifold: ManifoldId,
    pub(crate) component: usize,
    pub(crate) coords: Coords,
}

impl ChartPoint {
    pub(crate) fn from_parts(manifold: ManifoldId, component: usize, coords: Coords) -> Self {
        Self {
            manifold,
            component,
            coords,
        }
    }

    pub fn manifold(&self) -> ManifoldId {
        self.manifold
    }

    /// Connected component index (always 0 outside disjoint unions).
    pub fn component(&self) -> usize {
        self.component
    }

    pub fn coords(&self) -> &[f64] {
        &self.coords
    }

    pub fn dim(&self) -> usize {
        self.coords.len()
    }
}

/// A tangent vector at `base`, expressed in the flat chart of the
/// fundamental domain.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct TangentVector {
    pub base: ChartPoint,
    pub components: Vec<f64>,
}

impl TangentVector {
    pub fn norm(&self) -> f64 {
        self.components.iter().map(|c| c * c).sum::<f64>().sqrt()
    }
}
