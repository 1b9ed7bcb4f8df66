//! The trace space `K^{E1' u V1}`, boundary subspaces, and couplings.
//!
//! Trace coordinates carry weight 1 on edge-endpoint coordinates and `mu_v`
//! on vertex coordinates; all projections and adjoints below use that
//! weighted product. A boundary condition is a subspace `X` of the trace
//! space together with a self-adjoint operator `L` on `X`; local (glueing)
//! conditions are direct sums of per-vertex blocks over the incidence sets
//! `E_{1,v}` (plus the vertex coordinate itself when `mu_v > 0`).

use alloc::collections::BTreeMap;
use alloc::string::{String, ToString};
use alloc::sync::Arc;
use alloc::vec::Vec;

use nalgebra::{DMatrix, DVector};
use num_traits::Float;

use crate::error::Error;
use crate::graph::{EdgeEnd, MetricGraph, Partition, TraceCoord};
use crate::linalg;
use crate::Result;

/// The ambient trace space: ordered coordinates and their weights.
#[derive(Debug, Clone, PartialEq)]
pub struct TraceSpace {
    pub coords: Vec<TraceCoord>,
    pub weights: Vec<f64>,
}

impl TraceSpace {
    /// Trace space of a graph in the deterministic coordinate order.
    pub fn build(graph: &MetricGraph, partition: &Partition) -> Self {
        let mut coords = Vec::new();
        let mut weights = Vec::new();
        for &(e, end) in &partition.e1_prime {
            coords.push(TraceCoord::Edge(e, end));
            weights.push(1.0);
        }
        for &v in &partition.v1 {
            coords.push(TraceCoord::Vertex(v));
            weights.push(graph.vertices()[v].mass);
        }
        Self { coords, weights }
    }

    /// A local (per-vertex) trace space.
    pub fn local(coords: Vec<TraceCoord>, weights: Vec<f64>) -> Self {
        Self { coords, weights }
    }

    pub fn dim(&self) -> usize {
        self.coords.len()
    }

    pub fn position(&self, coord: TraceCoord) -> Option<usize> {
        self.coords.iter().position(|&c| c == coord)
    }

    pub fn dot(&self, x: &DVector<f64>, y: &DVector<f64>) -> f64 {
        linalg::weighted_dot(x, y, &self.weights)
    }

    pub fn norm(&self, x: &DVector<f64>) -> f64 {
        linalg::weighted_norm(x, &self.weights)
    }

    /// Indices of the `V1` (vertex) coordinates.
    pub fn vertex_positions(&self) -> Vec<usize> {
        self.coords
            .iter()
            .enumerate()
            .filter_map(|(i, c)| matches!(c, TraceCoord::Vertex(_)).then_some(i))
            .collect()
    }
}

/// A subspace of the trace space, stored through a weighted-orthonormal
/// basis (columns of `basis`).
#[derive(Debug, Clone, PartialEq)]
pub struct Subspace {
    pub ambient: Arc<TraceSpace>,
    pub basis: DMatrix<f64>,
}

impl Subspace {
    /// Orthonormalize the given independent vectors against the weighted
    /// product.
    pub fn new(ambient: Arc<TraceSpace>, raw: &[DVector<f64>]) -> Result<Self> {
        let basis = linalg::weighted_orthonormalize(raw, &ambient.weights)?;
        Ok(Self { ambient, basis })
    }

    pub(crate) fn from_orthonormal(ambient: Arc<TraceSpace>, basis: DMatrix<f64>) -> Self {
        Self { ambient, basis }
    }

    /// The full trace space.
    pub fn full(ambient: Arc<TraceSpace>) -> Self {
        let n = ambient.dim();
        let mut basis = DMatrix::zeros(n, n);
        for i in 0..n {
            basis[(i, i)] = 1.0 / ambient.weights[i].sqrt();
        }
        Self { ambient, basis }
    }

    /// The zero subspace.
    pub fn zero(ambient: Arc<TraceSpace>) -> Self {
        let n = ambient.dim();
        Self { ambient, basis: DMatrix::zeros(n, 0) }
    }

    pub fn dim(&self) -> usize {
        self.basis.ncols()
    }

    /// Coefficients of the weighted-orthogonal projection onto the subspace.
    pub fn coefficients(&self, xi: &DVector<f64>) -> DVector<f64> {
        let w = &self.ambient.weights;
        let mut c = DVector::zeros(self.dim());
        for k in 0..self.dim() {
            let mut acc = 0.0;
            for i in 0..w.len() {
                acc += w[i] * self.basis[(i, k)] * xi[i];
            }
            c[k] = acc;
        }
        c
    }

    /// Weighted-orthogonal projection onto the subspace.
    pub fn project(&self, xi: &DVector<f64>) -> DVector<f64> {
        &self.basis * self.coefficients(xi)
    }

    /// Weighted distance from `xi` to the subspace.
    pub fn distance(&self, xi: &DVector<f64>) -> f64 {
        let r = xi - self.project(xi);
        self.ambient.norm(&r)
    }
}

/// One per-vertex block of a local boundary condition, in the local
/// coordinate order (incident `(e, j)` pairs sorted by edge index then end,
/// the vertex coordinate last for `V1` vertices).
#[derive(Debug, Clone, PartialEq)]
pub struct LocalBlock {
    pub vertex: usize,
    /// Positions of the local coordinates inside the global trace space.
    pub positions: Vec<usize>,
    pub space: Subspace,
    /// Local `L` in the local orthonormal basis.
    pub matrix: DMatrix<f64>,
}

/// Boundary data: the subspace `X`, the self-adjoint coupling `L` on it (in
/// the orthonormal basis), and the per-vertex blocks when the condition is
/// local.
#[derive(Debug, Clone, PartialEq)]
pub struct CouplingOperator {
    pub subspace: Subspace,
    pub matrix: DMatrix<f64>,
    pub blocks: Option<Vec<LocalBlock>>,
}

impl CouplingOperator {
    /// Neumann data: `X` is the full trace space and `L = 0`.
    pub fn neumann(ambient: Arc<TraceSpace>) -> Self {
        let subspace = Subspace::full(ambient);
        let d = subspace.dim();
        Self { subspace, matrix: DMatrix::zeros(d, d), blocks: None }
    }

    /// `L (P_X xi)` expressed in ambient coordinates.
    pub fn apply_ambient(&self, xi: &DVector<f64>) -> DVector<f64> {
        let c = self.subspace.coefficients(xi);
        &self.subspace.basis * (&self.matrix * c)
    }
}

/// Per-vertex incidence data over `E1`: edges starting at `v`, ending at
/// `v`, and the combined coordinate set `E_{1,v}` (a loop contributes both
/// of its ends).
#[derive(Debug, Clone, PartialEq, Default)]
pub struct IncidenceSet {
    pub starts: Vec<usize>,
    pub ends: Vec<usize>,
    pub coords: Vec<(usize, EdgeEnd)>,
}

/// Incidence sets for every vertex, in vertex order.
pub fn incidence_sets(graph: &MetricGraph, partition: &Partition) -> Vec<IncidenceSet> {
    let mut sets = alloc::vec![IncidenceSet::default(); graph.vertices().len()];
    for &e in &partition.e1 {
        let edge = &graph.edges()[e];
        if let Some(v) = graph.vertex_index(&edge.from) {
            sets[v].starts.push(e);
            sets[v].coords.push((e, EdgeEnd::Initial));
        }
        if let Some(v) = graph.vertex_index(&edge.to) {
            sets[v].ends.push(e);
            sets[v].coords.push((e, EdgeEnd::Terminal));
        }
    }
    for s in &mut sets {
        s.coords.sort();
    }
    sets
}

/// The per-vertex condition kinds understood by [`assemble_local`].
#[derive(Debug, Clone, PartialEq)]
pub enum VertexKind {
    /// Continuity across the vertex with a delta coupling of the given
    /// strength `l_v` (`<L 1, 1> = l_v`).
    ContinuityDelta { strength: f64 },
    /// Continuity with zero coupling (`l_v = 0`).
    Kirchhoff,
    /// Zero trace at the vertex: `X_v = {0}`.
    Dirichlet,
    /// No constraint: `X_v` is the full local space, `L_v = 0`.
    Free,
    /// Explicit local basis and coupling matrix (coefficients with respect
    /// to the provided basis vectors).
    Custom { basis: Vec<DVector<f64>>, coupling: DMatrix<f64> },
}

/// A local boundary condition: a kind per vertex (unlisted vertices default
/// to Kirchhoff).
#[derive(Debug, Clone, PartialEq, Default)]
pub struct LocalBc {
    pub kinds: BTreeMap<usize, VertexKind>,
}

impl LocalBc {
    pub fn kirchhoff() -> Self {
        Self::default()
    }

    pub fn with(mut self, vertex: usize, kind: VertexKind) -> Self {
        self.kinds.insert(vertex, kind);
        self
    }
}

fn local_trace_space(
    graph: &MetricGraph,
    partition: &Partition,
    incidence: &IncidenceSet,
    vertex: usize,
) -> TraceSpace {
    let mut coords: Vec<TraceCoord> = incidence.coords.iter().map(|&(e, j)| TraceCoord::Edge(e, j)).collect();
    let mut weights = alloc::vec![1.0; coords.len()];
    if partition.v1.contains(&vertex) {
        coords.push(TraceCoord::Vertex(vertex));
        weights.push(graph.vertices()[vertex].mass);
    }
    TraceSpace::local(coords, weights)
}

/// Convert a coupling matrix given in coefficients of `raw` basis vectors to
/// the orthonormal basis `u`, checking self-adjointness in the weighted
/// product.
fn coupling_to_orthonormal(
    raw: &[DVector<f64>],
    coupling: &DMatrix<f64>,
    u: &DMatrix<f64>,
    weights: &[f64],
    context: &str,
) -> Result<DMatrix<f64>> {
    let k = raw.len();
    if coupling.nrows() != k || coupling.ncols() != k {
        return Err(Error::DimensionMismatch { expected: k, got: coupling.nrows() });
    }
    if k == 0 {
        return Ok(DMatrix::zeros(0, 0));
    }
    let b = DMatrix::from_columns(raw);
    // Gram = B^T W B; self-adjointness of L is symmetry of Gram * L.
    let mut wb = b.clone();
    for i in 0..weights.len() {
        for j in 0..k {
            wb[(i, j)] *= weights[i];
        }
    }
    let gram = b.transpose() * &wb;
    let gl = &gram * coupling;
    let asym = (&gl - gl.transpose()).amax();
    if asym > 1e-10 * (1.0 + gl.amax()) {
        return Err(Error::NonSymmetricCoupling(context.to_string()));
    }
    // B = U R with R = U^T W B, so L_orth = R L R^{-1}.
    let mut wu = u.clone();
    for i in 0..weights.len() {
        for j in 0..u.ncols() {
            wu[(i, j)] *= weights[i];
        }
    }
    let r = wu.transpose() * &b;
    let r_inv = r.clone().try_inverse().ok_or(Error::DependentBasis(0))?;
    let l_orth = &r * coupling * r_inv;
    // symmetric up to roundoff by the check above; tidy it
    Ok(0.5 * (&l_orth + l_orth.transpose()))
}

/// Assemble a local boundary condition into global `(X, L)` with per-vertex
/// blocks. `X = direct sum of X_v`, `L = direct sum of L_v`.
pub fn assemble_local(
    graph: &MetricGraph,
    partition: &Partition,
    ambient: Arc<TraceSpace>,
    bc: &LocalBc,
) -> Result<CouplingOperator> {
    let incidence = incidence_sets(graph, partition);
    let mut blocks = Vec::new();
    let mut global_cols: Vec<DVector<f64>> = Vec::new();
    let mut block_spans: Vec<(usize, usize)> = Vec::new();
    let n = ambient.dim();

    for v in 0..graph.vertices().len() {
        let local_ts = local_trace_space(graph, partition, &incidence[v], v);
        let local_dim = local_ts.dim();
        if local_dim == 0 {
            continue;
        }
        let positions: Vec<usize> = local_ts
            .coords
            .iter()
            .map(|&c| ambient.position(c).expect("local coordinate present in global trace space"))
            .collect();
        let kind = bc.kinds.get(&v).unwrap_or(&VertexKind::Kirchhoff);
        let vertex_id = &graph.vertices()[v].id;
        let (raw, coupling): (Vec<DVector<f64>>, DMatrix<f64>) = match kind {
            VertexKind::Kirchhoff => {
                (alloc::vec![DVector::from_element(local_dim, 1.0)], DMatrix::zeros(1, 1))
            }
            VertexKind::ContinuityDelta { strength } => {
                let ones = DVector::from_element(local_dim, 1.0);
                let norm2 = local_ts.dot(&ones, &ones);
                (alloc::vec![ones], DMatrix::from_element(1, 1, strength / norm2))
            }
            VertexKind::Dirichlet => (Vec::new(), DMatrix::zeros(0, 0)),
            VertexKind::Free => {
                let cols = (0..local_dim)
                    .map(|i| {
                        let mut e = DVector::zeros(local_dim);
                        e[i] = 1.0;
                        e
                    })
                    .collect::<Vec<_>>();
                (cols, DMatrix::zeros(local_dim, local_dim))
            }
            VertexKind::Custom { basis, coupling } => {
                for b in basis {
                    if b.len() != local_dim {
                        return Err(Error::NonlocalBlock(vertex_id.clone()));
                    }
                }
                (basis.clone(), coupling.clone())
            }
        };
        let u = linalg::weighted_orthonormalize(&raw, &local_ts.weights)?;
        let l_orth = coupling_to_orthonormal(&raw, &coupling, &u, &local_ts.weights, vertex_id)?;
        let space = Subspace::from_orthonormal(Arc::new(local_ts), u.clone());
        let d_v = u.ncols();
        let start = global_cols.len();
        for k in 0..d_v {
            let mut col = DVector::zeros(n);
            for (row_local, &row_global) in positions.iter().enumerate() {
                col[row_global] = u[(row_local, k)];
            }
            global_cols.push(col);
        }
        block_spans.push((start, d_v));
        blocks.push(LocalBlock { vertex: v, positions, space, matrix: l_orth });
    }

    let d = global_cols.len();
    let basis = if d == 0 {
        DMatrix::zeros(n, 0)
    } else {
        DMatrix::from_columns(&global_cols)
    };
    let mut matrix = DMatrix::zeros(d, d);
    for (block, &(start, len)) in blocks.iter().zip(&block_spans) {
        for i in 0..len {
            for j in 0..len {
                matrix[(start + i, start + j)] = block.matrix[(i, j)];
            }
        }
    }
    // block embeddings have disjoint supports, so the global basis is
    // already weighted-orthonormal
    let subspace = Subspace::from_orthonormal(ambient, basis);
    Ok(CouplingOperator { subspace, matrix, blocks: Some(blocks) })
}

/// Assemble a global boundary condition from explicit basis vectors (in the
/// deterministic ambient coordinate order) and a coupling matrix given in
/// coefficients of those vectors.
pub fn assemble_global(
    ambient: Arc<TraceSpace>,
    basis: &[DVector<f64>],
    coupling: &DMatrix<f64>,
) -> Result<CouplingOperator> {
    let u = linalg::weighted_orthonormalize(basis, &ambient.weights)?;
    let l_orth = coupling_to_orthonormal(basis, coupling, &u, &ambient.weights, "global")?;
    let subspace = Subspace::from_orthonormal(ambient, u);
    Ok(CouplingOperator { subspace, matrix: l_orth, blocks: None })
}

/// Outcome of the density check `pr_{V1}(X) = K^{V1}` together with the
/// certificate vectors `xi^v` (value 1 at `v`, 0 at the other `V1`
/// vertices) when it holds.
#[derive(Debug, Clone, PartialEq)]
pub struct DensityCheck {
    pub holds: bool,
    /// `(vertex index, xi^v)` for each `V1` vertex, when available.
    pub certificates: Vec<(usize, DVector<f64>)>,
    /// `V1` vertices with no admissible certificate.
    pub failing: Vec<usize>,
}

/// Decide whether the form domain is dense: the projection of `X` onto the
/// `V1` coordinates must be surjective.
pub fn density_condition(x: &Subspace) -> DensityCheck {
    let vpos = x.ambient.vertex_positions();
    let k = vpos.len();
    if k == 0 {
        return DensityCheck { holds: true, certificates: Vec::new(), failing: Vec::new() };
    }
    let d = x.dim();
    let mut rows = DMatrix::zeros(k, d);
    for (r, &p) in vpos.iter().enumerate() {
        for c in 0..d {
            rows[(r, c)] = x.basis[(p, c)];
        }
    }
    let mut certificates = Vec::new();
    let mut failing = Vec::new();
    for (r, &p) in vpos.iter().enumerate() {
        let vertex = match x.ambient.coords[p] {
            TraceCoord::Vertex(v) => v,
            _ => unreachable!("vertex positions point at vertex coordinates"),
        };
        let mut e = DVector::zeros(k);
        e[r] = 1.0;
        match linalg::min_norm_solution(&rows, &e) {
            Some(c) => certificates.push((vertex, &x.basis * c)),
            None => failing.push(vertex),
        }
    }
    DensityCheck { holds: failing.is_empty(), certificates, failing }
}

/// `X0 = {x in X : pr_{V1} x = 0}` and the weighted orthogonal projection
/// `Q0` onto it (as an ambient matrix).
pub fn x0_and_q0(x: &Subspace) -> (Subspace, DMatrix<f64>) {
    let vpos = x.ambient.vertex_positions();
    let d = x.dim();
    let n = x.ambient.dim();
    let mut rows = DMatrix::zeros(vpos.len(), d);
    for (r, &p) in vpos.iter().enumerate() {
        for c in 0..d {
            rows[(r, c)] = x.basis[(p, c)];
        }
    }
    let kernel = linalg::kernel_basis(&rows);
    // columns U * kernel stay weighted-orthonormal because the kernel basis
    // is Euclidean-orthonormal in coefficient space
    let b0 = &x.basis * kernel;
    let mut q0 = DMatrix::zeros(n, n);
    for i in 0..n {
        for j in 0..n {
            let mut acc = 0.0;
            for k in 0..b0.ncols() {
                acc += b0[(i, k)] * b0[(j, k)];
            }
            q0[(i, j)] = acc * x.ambient.weights[j];
        }
    }
    (Subspace::from_orthonormal(x.ambient.clone(), b0), q0)
}
