//! Measure-aware meshes and the discrete extension map.
//!
//! A mesh for an `E1` edge contains the interval endpoints, every density
//! breakpoint, every atom, and uniform refinement nodes placed only inside
//! density segments. Gaps (open components of the support complement) never
//! receive interior nodes, so a piecewise-linear function on the mesh is
//! automatically affine across every gap — the defining property of the
//! extension map realized by [`iota`].
//!
//! Node masses are lumped: an atom node carries its atom mass, and every
//! node collects `w * len / 2` from each adjacent cell lying in a density
//! segment. Lumping keeps the mass matrix diagonal and positive and makes
//! the assembled operator an exact weighted graph Laplacian.

use alloc::vec::Vec;

use num_traits::Float;

use crate::error::Error;
use crate::graph::{Edge, MetricGraph, Partition, TraceCoord, EdgeEnd};
use crate::Result;

/// Mesh of a single positive-measure edge.
#[derive(Debug, Clone, PartialEq)]
pub struct EdgeMesh {
    /// Strictly increasing, starts at `a_e`, ends at `b_e`.
    pub nodes: Vec<f64>,
    /// Lumped node masses; all strictly positive.
    pub lumped_masses: Vec<f64>,
    /// Lengths of the cells between consecutive nodes.
    pub cell_lengths: Vec<f64>,
    /// Constant density weight per cell (zero on gap cells).
    pub cell_weights: Vec<f64>,
    /// Total measure of the edge (equals the lumped mass sum).
    pub total_mass: f64,
}

impl EdgeMesh {
    pub fn node_count(&self) -> usize {
        self.nodes.len()
    }
}

/// Build the mesh of an `E1` edge with refinement spacing at most `h_target`
/// inside density segments.
pub fn build_mesh(edge: &Edge, h_target: f64) -> Result<EdgeMesh> {
    if !(h_target > 0.0) {
        return Err(Error::NonPositiveStep(h_target));
    }
    if edge.measure.is_zero() {
        return Err(Error::ZeroMeasure);
    }
    let (a, b) = edge.interval;
    let mut mandatory: Vec<f64> = Vec::new();
    mandatory.push(a);
    mandatory.push(b);
    for s in &edge.measure.segments {
        mandatory.push(s.lo);
        mandatory.push(s.hi);
    }
    for at in &edge.measure.atoms {
        mandatory.push(at.position);
    }
    mandatory.sort_by(|x, y| x.partial_cmp(y).expect("finite nodes"));
    mandatory.dedup();

    let mut nodes: Vec<f64> = Vec::new();
    for w in mandatory.windows(2) {
        let (p, q) = (w[0], w[1]);
        nodes.push(p);
        // Refine only sub-intervals covered by a density segment.
        let mid = 0.5 * (p + q);
        let covered = edge.measure.segments.iter().any(|s| s.lo <= mid && mid <= s.hi);
        if covered {
            let n_sub = ((q - p) / h_target).ceil().max(1.0) as usize;
            for i in 1..n_sub {
                nodes.push(p + (q - p) * (i as f64) / (n_sub as f64));
            }
        }
    }
    nodes.push(b);

    let n = nodes.len();
    let mut cell_lengths = Vec::with_capacity(n - 1);
    let mut cell_weights = Vec::with_capacity(n - 1);
    let mut lumped = alloc::vec![0.0; n];
    for k in 0..n - 1 {
        let (p, q) = (nodes[k], nodes[k + 1]);
        let len = q - p;
        let mid = 0.5 * (p + q);
        let w = edge
            .measure
            .segments
            .iter()
            .find(|s| s.lo <= mid && mid <= s.hi)
            .map(|s| s.weight)
            .unwrap_or(0.0);
        cell_lengths.push(len);
        cell_weights.push(w);
        let half = 0.5 * w * len;
        lumped[k] += half;
        lumped[k + 1] += half;
    }
    for at in &edge.measure.atoms {
        let k = nodes
            .binary_search_by(|x| x.partial_cmp(&at.position).expect("finite nodes"))
            .expect("atom positions are mesh nodes");
        lumped[k] += at.mass;
    }
    let total_mass: f64 = lumped.iter().sum();
    Ok(EdgeMesh { nodes, lumped_masses: lumped, cell_lengths, cell_weights, total_mass })
}

/// A continuous piecewise-linear function with breakpoints at mesh nodes.
#[derive(Debug, Clone, PartialEq)]
pub struct PiecewiseLinear {
    pub nodes: Vec<f64>,
    pub values: Vec<f64>,
}

impl PiecewiseLinear {
    /// Per-cell slopes.
    pub fn slopes(&self) -> Vec<f64> {
        self.nodes
            .windows(2)
            .zip(self.values.windows(2))
            .map(|(x, v)| (v[1] - v[0]) / (x[1] - x[0]))
            .collect()
    }

    /// Evaluate anywhere on the edge interval (clamped at the ends).
    pub fn eval(&self, x: f64) -> f64 {
        let n = self.nodes.len();
        if x <= self.nodes[0] {
            return self.values[0];
        }
        if x >= self.nodes[n - 1] {
            return self.values[n - 1];
        }
        let k = match self.nodes.binary_search_by(|p| p.partial_cmp(&x).expect("finite")) {
            Ok(i) => return self.values[i],
            Err(i) => i - 1,
        };
        let t = (x - self.nodes[k]) / (self.nodes[k + 1] - self.nodes[k]);
        self.values[k] * (1.0 - t) + self.values[k + 1] * t
    }

    /// `int (f')^2 dx = sum (dv)^2 / dx`, exact for piecewise-linear `f`.
    pub fn dirichlet_energy(&self) -> f64 {
        self.nodes
            .windows(2)
            .zip(self.values.windows(2))
            .map(|(x, v)| {
                let dv = v[1] - v[0];
                dv * dv / (x[1] - x[0])
            })
            .sum()
    }
}

/// The discrete extension map: nodal values to the continuous representative
/// that is affine on cells and hence affine across gaps.
pub fn iota(values: &[f64], mesh: &EdgeMesh) -> Result<PiecewiseLinear> {
    if values.len() != mesh.nodes.len() {
        return Err(Error::LengthMismatch { expected: mesh.nodes.len(), got: values.len() });
    }
    Ok(PiecewiseLinear { nodes: mesh.nodes.clone(), values: values.into() })
}

/// Discrete derivative of `(iota f)'` with respect to the edge measure:
/// the slope jump across each node divided by its lumped mass. One-sided
/// slopes at the interval endpoints are taken against a zero exterior slope;
/// at an isolated atom the value is the exact atomic `d/dmu`.
pub fn discrete_dmu(values: &[f64], mesh: &EdgeMesh) -> Result<Vec<f64>> {
    if values.len() != mesh.nodes.len() {
        return Err(Error::LengthMismatch { expected: mesh.nodes.len(), got: values.len() });
    }
    let f = PiecewiseLinear { nodes: mesh.nodes.clone(), values: values.into() };
    let slopes = f.slopes();
    let n = mesh.nodes.len();
    let mut out = Vec::with_capacity(n);
    for k in 0..n {
        let left = if k > 0 { slopes[k - 1] } else { 0.0 };
        let right = if k + 1 < n { slopes[k] } else { 0.0 };
        out.push((right - left) / mesh.lumped_masses[k]);
    }
    Ok(out)
}

/// Global degree-of-freedom layout: per-edge node blocks for `E1` edges in
/// insertion order, then one DOF per `V1` vertex. The trace table enumerates
/// `E1' u V1` in the deterministic coordinate order and maps each trace
/// coordinate to its DOF.
#[derive(Debug, Clone, PartialEq)]
pub struct GlobalDofMap {
    /// Per edge: offset of its node block, `None` for `E0` edges.
    pub edge_offsets: Vec<Option<usize>>,
    /// Per edge: node count, 0 for `E0` edges.
    pub edge_node_counts: Vec<usize>,
    /// Per vertex: DOF index for `V1` vertices.
    pub vertex_dofs: Vec<Option<usize>>,
    pub n_dofs: usize,
    /// Trace coordinates in deterministic order.
    pub trace_coords: Vec<TraceCoord>,
    /// DOF index of each trace coordinate (same order as `trace_coords`).
    pub trace_dofs: Vec<usize>,
}

impl GlobalDofMap {
    pub fn build(graph: &MetricGraph, partition: &Partition, meshes: &[Option<EdgeMesh>]) -> Self {
        assert_eq!(meshes.len(), graph.edges().len(), "one mesh slot per edge");
        let mut edge_offsets = alloc::vec![None; graph.edges().len()];
        let mut edge_node_counts = alloc::vec![0; graph.edges().len()];
        let mut n = 0usize;
        for &e in &partition.e1 {
            let mesh = meshes[e].as_ref().expect("E1 edge must carry a mesh");
            edge_offsets[e] = Some(n);
            edge_node_counts[e] = mesh.node_count();
            n += mesh.node_count();
        }
        let mut vertex_dofs = alloc::vec![None; graph.vertices().len()];
        for &v in &partition.v1 {
            vertex_dofs[v] = Some(n);
            n += 1;
        }
        let mut trace_coords = Vec::new();
        let mut trace_dofs = Vec::new();
        for &(e, end) in &partition.e1_prime {
            let offset = edge_offsets[e].expect("E1 edge");
            let dof = match end {
                EdgeEnd::Initial => offset,
                EdgeEnd::Terminal => offset + edge_node_counts[e] - 1,
            };
            trace_coords.push(TraceCoord::Edge(e, end));
            trace_dofs.push(dof);
        }
        for &v in &partition.v1 {
            trace_coords.push(TraceCoord::Vertex(v));
            trace_dofs.push(vertex_dofs[v].expect("V1 vertex"));
        }
        Self { edge_offsets, edge_node_counts, vertex_dofs, n_dofs: n, trace_coords, trace_dofs }
    }

    /// DOF of node `k` of edge `e` (an `E1` edge).
    pub fn node_dof(&self, edge: usize, k: usize) -> usize {
        self.edge_offsets[edge].expect("E1 edge") + k
    }

    /// DOF indices that are neither edge-endpoint nodes nor vertex DOFs.
    pub fn interior_dofs(&self) -> Vec<usize> {
        let mut is_trace = alloc::vec![false; self.n_dofs];
        for &d in &self.trace_dofs {
            is_trace[d] = true;
        }
        (0..self.n_dofs).filter(|&d| !is_trace[d]).collect()
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::graph::{classify, DensitySegment, EdgeMeasure, MetricGraph, PointMass, Vertex};
    use alloc::string::ToString;
    use alloc::vec;

    fn lebesgue_edge() -> Edge {
        Edge {
            id: "e".to_string(),
            from: "a".to_string(),
            to: "b".to_string(),
            interval: (0.0, 1.0),
            measure: EdgeMeasure::lebesgue(0.0, 1.0),
        }
    }

    fn gap_atom_edge() -> Edge {
        Edge {
            id: "e".to_string(),
            from: "a".to_string(),
            to: "b".to_string(),
            interval: (0.0, 1.0),
            measure: EdgeMeasure {
                segments: vec![
                    DensitySegment { lo: 0.0, hi: 0.2, weight: 1.0 },
                    DensitySegment { lo: 0.8, hi: 1.0, weight: 1.0 },
                ],
                atoms: vec![PointMass { position: 0.5, mass: 1.0 }],
            },
        }
    }

    #[test]
    fn lebesgue_halving() {
        let mesh = build_mesh(&lebesgue_edge(), 0.5).unwrap();
        assert_eq!(mesh.nodes, vec![0.0, 0.5, 1.0]);
        assert_eq!(mesh.lumped_masses, vec![0.25, 0.5, 0.25]);
        assert_eq!(mesh.cell_lengths, vec![0.5, 0.5]);
    }

    #[test]
    fn gap_atom_mesh() {
        let mesh = build_mesh(&gap_atom_edge(), 1.0).unwrap();
        assert_eq!(mesh.nodes, vec![0.0, 0.2, 0.5, 0.8, 1.0]);
        let expect = [0.1, 0.1, 1.0, 0.1, 0.1];
        for (m, e) in mesh.lumped_masses.iter().zip(expect) {
            assert!((m - e).abs() < 1e-15);
        }
        let cells = [0.2, 0.3, 0.3, 0.2];
        for (c, e) in mesh.cell_lengths.iter().zip(cells) {
            assert!((c - e).abs() < 1e-15);
        }
        assert_eq!(mesh.cell_weights, vec![1.0, 0.0, 0.0, 1.0]);
    }

    #[test]
    fn halving_doubles_density_nodes_and_never_meshes_gaps() {
        let edge = gap_atom_edge();
        let coarse = build_mesh(&edge, 0.1).unwrap();
        let fine = build_mesh(&edge, 0.05).unwrap();
        let density_nodes = |m: &EdgeMesh| {
            m.nodes
                .iter()
                .filter(|&&x| (x > 0.0 && x < 0.2) || (x > 0.8 && x < 1.0))
                .count()
        };
        let d0 = density_nodes(&coarse);
        let d1 = density_nodes(&fine);
        assert!(d1 >= 2 * d0 - 1 && d1 <= 2 * d0 + 2, "{d0} vs {d1}");
        // no node strictly inside a gap
        for &x in &fine.nodes {
            assert!(!(x > 0.2 && x < 0.5) && !(x > 0.5 && x < 0.8));
        }
    }

    #[test]
    fn non_positive_step_is_an_error() {
        assert!(matches!(build_mesh(&lebesgue_edge(), 0.0), Err(Error::NonPositiveStep(_))));
    }

    #[test]
    fn mass_sum_matches_total_measure() {
        let edge = Edge {
            measure: EdgeMeasure {
                segments: vec![
                    DensitySegment { lo: 0.0, hi: 0.3, weight: 2.5 },
                    DensitySegment { lo: 0.3, hi: 0.4, weight: 0.5 },
                    DensitySegment { lo: 0.7, hi: 1.0, weight: 1.0 },
                ],
                atoms: vec![PointMass { position: 0.55, mass: 0.25 }, PointMass { position: 0.75, mass: 1.5 }],
            },
            ..lebesgue_edge()
        };
        let mesh = build_mesh(&edge, 0.037).unwrap();
        let total = edge.measure.total();
        assert!((mesh.total_mass - total).abs() <= 1e-12 * total);
        assert!(mesh.lumped_masses.iter().all(|&m| m > 0.0));
    }

    #[test]
    fn iota_tent() {
        let mesh = build_mesh(&lebesgue_edge(), 0.5).unwrap();
        let f = iota(&[0.0, 1.0, 0.0], &mesh).unwrap();
        assert_eq!(f.slopes(), vec![2.0, -2.0]);
        assert!((f.eval(0.25) - 0.5).abs() < 1e-15);
    }

    #[test]
    fn iota_constant_has_zero_energy() {
        let mesh = build_mesh(&lebesgue_edge(), 0.25).unwrap();
        let f = iota(&[3.0; 5], &mesh).unwrap();
        assert_eq!(f.dirichlet_energy(), 0.0);
    }

    #[test]
    fn iota_affine_across_gaps() {
        let mesh = build_mesh(&gap_atom_edge(), 1.0).unwrap();
        let f = iota(&[0.0, 1.0, 1.0, 1.0, 0.0], &mesh).unwrap();
        for (s, e) in f.slopes().iter().zip([5.0, 0.0, 0.0, -5.0]) {
            assert!((s - e).abs() < 1e-12);
        }
        // affine through both gaps
        assert!((f.eval(0.35) - 1.0).abs() < 1e-15);
        assert!((f.eval(0.65) - 1.0).abs() < 1e-15);
    }

    #[test]
    fn iota_length_mismatch() {
        let mesh = build_mesh(&lebesgue_edge(), 0.5).unwrap();
        assert!(matches!(iota(&[0.0, 1.0], &mesh), Err(Error::LengthMismatch { .. })));
    }

    #[test]
    fn dmu_of_tent() {
        let mesh = build_mesh(&lebesgue_edge(), 0.5).unwrap();
        let d = discrete_dmu(&[0.0, 1.0, 0.0], &mesh).unwrap();
        assert!((d[1] - (-8.0)).abs() < 1e-12, "slope jump -4 over mass 0.5");
    }

    #[test]
    fn dmu_of_affine_vanishes() {
        let mesh = build_mesh(&lebesgue_edge(), 0.125).unwrap();
        let values: Vec<f64> = mesh.nodes.iter().map(|x| 2.0 * x - 0.7).collect();
        let d = discrete_dmu(&values, &mesh).unwrap();
        for (k, v) in d.iter().enumerate() {
            if k > 0 && k + 1 < d.len() {
                assert!(v.abs() < 1e-12);
            }
        }
    }

    #[test]
    fn dmu_exact_at_isolated_atom() {
        let mesh = build_mesh(&gap_atom_edge(), 1.0).unwrap();
        // slopes (s-, s+) = (1, -1) across the atom node at 0.5 with mass 1:
        // the adjacent gap cells have length 0.3
        let values = [0.4, 0.4, 0.7, 0.4, 0.4];
        let f = iota(&values, &mesh).unwrap();
        let s = f.slopes();
        assert!((s[1] - 1.0).abs() < 1e-12 && (s[2] + 1.0).abs() < 1e-12);
        let d = discrete_dmu(&values, &mesh).unwrap();
        assert!((d[2] - (-2.0)).abs() < 1e-12);
    }

    #[test]
    fn energy_invariant_under_node_insertion() {
        let edge = lebesgue_edge();
        let coarse = build_mesh(&edge, 0.5).unwrap();
        let f = iota(&[0.3, -0.2, 0.9], &coarse).unwrap();
        let fine = build_mesh(&edge, 0.25).unwrap();
        let refined: Vec<f64> = fine.nodes.iter().map(|&x| f.eval(x)).collect();
        let g = iota(&refined, &fine).unwrap();
        assert!((f.dirichlet_energy() - g.dirichlet_energy()).abs() < 1e-14);
    }

    #[test]
    fn gap_values_independent_of_refinement() {
        let edge = gap_atom_edge();
        let coarse = build_mesh(&edge, 0.2).unwrap();
        let fine = build_mesh(&edge, 0.01).unwrap();
        // fix values at support breakpoints and atoms via a smooth profile
        let profile = |x: f64| (3.0 * x).sin();
        let fc = iota(&coarse.nodes.iter().map(|&x| profile(x)).collect::<Vec<_>>(), &coarse).unwrap();
        let ff = iota(&fine.nodes.iter().map(|&x| profile(x)).collect::<Vec<_>>(), &fine).unwrap();
        for &x in &[0.25, 0.35, 0.45, 0.55, 0.7, 0.79] {
            assert!((fc.eval(x) - ff.eval(x)).abs() < 1e-13, "gap affinity is forced at {x}");
        }
    }

    #[test]
    fn dof_map_layout() {
        let g = MetricGraph::new(
            vec![
                Vertex { id: "a".to_string(), mass: 0.0 },
                Vertex { id: "b".to_string(), mass: 1.5 },
            ],
            vec![
                Edge {
                    id: "z".to_string(),
                    from: "a".to_string(),
                    to: "b".to_string(),
                    interval: (0.0, 1.0),
                    measure: EdgeMeasure::zero(),
                },
                lebesgue_edge(),
            ],
        );
        let p = classify(&g);
        let meshes = vec![None, Some(build_mesh(&g.edges()[1], 0.5).unwrap())];
        let dofs = GlobalDofMap::build(&g, &p, &meshes);
        assert_eq!(dofs.n_dofs, 4);
        assert_eq!(dofs.edge_offsets, vec![None, Some(0)]);
        assert_eq!(dofs.vertex_dofs, vec![None, Some(3)]);
        assert_eq!(dofs.trace_dofs, vec![0, 2, 3]);
        assert_eq!(dofs.interior_dofs(), vec![1]);
        assert_eq!(
            dofs.trace_coords,
            vec![
                TraceCoord::Edge(1, EdgeEnd::Initial),
                TraceCoord::Edge(1, EdgeEnd::Terminal),
                TraceCoord::Vertex(1)
            ]
        );
    }
}
