//! Weighted metric graphs and their standing hypotheses.
//!
//! Every edge `e` carries an interval `[a_e, b_e]` and a finite measure
//! `mu_e` made of piecewise-constant density segments plus finitely many
//! interior atoms; every vertex carries a weight `mu_v >= 0`. A nonzero edge
//! measure must contain both interval endpoints in its support and give them
//! measure zero, which this representation enforces through density strips
//! touching `a_e` and `b_e` and a strict-interior restriction on atoms.
//!
//! Edges with `mu_e = 0` (the set `E0`) and vertices with `mu_v = 0` (`V0`)
//! carry no state; the partitions `E0/E1` and `V0/V1` drive everything
//! downstream.

use alloc::collections::BTreeMap;
use alloc::format;
use alloc::string::String;
use alloc::vec::Vec;

use num_traits::Float;

use crate::error::Error;
use crate::Result;

/// Which end of an edge a trace coordinate refers to: `Initial` is `a_e`
/// (the `(e, 0)` coordinate), `Terminal` is `b_e` (`(e, 1)`).
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum EdgeEnd {
    Initial,
    Terminal,
}

impl EdgeEnd {
    pub fn index(self) -> usize {
        match self {
            EdgeEnd::Initial => 0,
            EdgeEnd::Terminal => 1,
        }
    }
}

/// A coordinate of the trace space `K^{E1' u V1}`, in the deterministic
/// order: edges by insertion order with `(e, 0)` before `(e, 1)`, then
/// massed vertices by insertion order.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum TraceCoord {
    Edge(usize, EdgeEnd),
    Vertex(usize),
}

#[derive(Debug, Clone, PartialEq)]
pub struct Vertex {
    pub id: String,
    /// Weight `mu_v >= 0`; vertices with positive mass carry state.
    pub mass: f64,
}

/// One constant-density strip `w * dx` on `[lo, hi]`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DensitySegment {
    pub lo: f64,
    pub hi: f64,
    pub weight: f64,
}

/// A point mass strictly inside the edge interval.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PointMass {
    pub position: f64,
    pub mass: f64,
}

/// Edge measure: ordered density segments plus ordered interior atoms.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct EdgeMeasure {
    pub segments: Vec<DensitySegment>,
    pub atoms: Vec<PointMass>,
}

impl EdgeMeasure {
    /// The zero measure (an `E0` edge).
    pub fn zero() -> Self {
        Self::default()
    }

    /// Lebesgue measure on `[lo, hi]`.
    pub fn lebesgue(lo: f64, hi: f64) -> Self {
        Self {
            segments: alloc::vec![DensitySegment { lo, hi, weight: 1.0 }],
            atoms: Vec::new(),
        }
    }

    pub fn is_zero(&self) -> bool {
        self.segments.is_empty() && self.atoms.is_empty()
    }

    /// Total mass `sum w (hi - lo) + sum atom masses`.
    pub fn total(&self) -> f64 {
        let density: f64 = self.segments.iter().map(|s| s.weight * (s.hi - s.lo)).sum();
        let atomic: f64 = self.atoms.iter().map(|a| a.mass).sum();
        density + atomic
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Edge {
    pub id: String,
    /// Vertex id of `a_e` (the edge start).
    pub from: String,
    /// Vertex id of `b_e` (the edge end); loops (`from == to`) are allowed.
    pub to: String,
    pub interval: (f64, f64),
    pub measure: EdgeMeasure,
}

/// A finite directed metric graph. Immutable after construction.
#[derive(Debug, Clone, PartialEq)]
pub struct MetricGraph {
    vertices: Vec<Vertex>,
    edges: Vec<Edge>,
    vertex_index: BTreeMap<String, usize>,
}

impl MetricGraph {
    pub fn new(vertices: Vec<Vertex>, edges: Vec<Edge>) -> Self {
        let mut vertex_index = BTreeMap::new();
        for (i, v) in vertices.iter().enumerate() {
            vertex_index.entry(v.id.clone()).or_insert(i);
        }
        Self { vertices, edges, vertex_index }
    }

    pub fn vertices(&self) -> &[Vertex] {
        &self.vertices
    }

    pub fn edges(&self) -> &[Edge] {
        &self.edges
    }

    pub fn vertex_index(&self, id: &str) -> Option<usize> {
        self.vertex_index.get(id).copied()
    }

    /// Vertex index of the given end of edge `e`.
    pub fn endpoint(&self, edge: usize, end: EdgeEnd) -> Option<usize> {
        let e = &self.edges[edge];
        match end {
            EdgeEnd::Initial => self.vertex_index(&e.from),
            EdgeEnd::Terminal => self.vertex_index(&e.to),
        }
    }
}

/// The entity a validation violation refers to.
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum EntityRef {
    Vertex(String),
    Edge(String),
    Graph,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ViolationKind {
    NonFiniteNumber,
    NegativeMass,
    DuplicateId,
    UnknownVertex,
    BadInterval,
    BadSegment,
    OverlappingSegments,
    AtomOutOfRange,
    AtomAtEndpoint,
    DuplicateAtom,
    NonPositiveAtomMass,
    EndpointNotInSupport,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Violation {
    pub entity: EntityRef,
    pub kind: ViolationKind,
    pub message: String,
}

/// Result of [`validate`]; the graph is accepted downstream only when empty.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct ValidationReport {
    pub violations: Vec<Violation>,
}

impl ValidationReport {
    pub fn is_valid(&self) -> bool {
        self.violations.is_empty()
    }
}

/// The derived partitions `E0/E1`, `V0/V1` and the enumerated index set
/// `E1' = E1 x {0, 1}`.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Partition {
    pub e0: Vec<usize>,
    pub e1: Vec<usize>,
    pub v0: Vec<usize>,
    pub v1: Vec<usize>,
    pub e1_prime: Vec<(usize, EdgeEnd)>,
}

/// One piece of an edge-measure support: a closed interval or an isolated
/// atom.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum SupportPart {
    Interval(f64, f64),
    Point(f64),
}

/// Support of a nonzero edge measure, ordered by position, together with the
/// open gap components of the complement in `[a_e, b_e]`.
#[derive(Debug, Clone, PartialEq)]
pub struct Support {
    pub parts: Vec<SupportPart>,
    pub gaps: Vec<(f64, f64)>,
}

fn check_finite(x: f64, entity: &EntityRef, what: &str, out: &mut Vec<Violation>) -> bool {
    if x.is_finite() {
        true
    } else {
        out.push(Violation {
            entity: entity.clone(),
            kind: ViolationKind::NonFiniteNumber,
            message: format!("{what} is not a finite number"),
        });
        false
    }
}

/// Check every standing hypothesis and report all violations; violations are
/// data, not failures.
pub fn validate(graph: &MetricGraph) -> ValidationReport {
    let mut out = Vec::new();
    let mut seen_vertex = BTreeMap::new();
    for v in graph.vertices() {
        let entity = EntityRef::Vertex(v.id.clone());
        if let Some(()) = seen_vertex.insert(v.id.clone(), ()) {
            out.push(Violation {
                entity: entity.clone(),
                kind: ViolationKind::DuplicateId,
                message: format!("vertex id `{}` appears more than once", v.id),
            });
        }
        if check_finite(v.mass, &entity, "vertex mass", &mut out) && v.mass < 0.0 {
            out.push(Violation {
                entity,
                kind: ViolationKind::NegativeMass,
                message: format!("vertex `{}` has negative mass {}", v.id, v.mass),
            });
        }
    }

    let mut seen_edge = BTreeMap::new();
    for e in graph.edges() {
        let entity = EntityRef::Edge(e.id.clone());
        if let Some(()) = seen_edge.insert(e.id.clone(), ()) {
            out.push(Violation {
                entity: entity.clone(),
                kind: ViolationKind::DuplicateId,
                message: format!("edge id `{}` appears more than once", e.id),
            });
        }
        for end in [&e.from, &e.to] {
            if graph.vertex_index(end).is_none() {
                out.push(Violation {
                    entity: entity.clone(),
                    kind: ViolationKind::UnknownVertex,
                    message: format!("edge `{}` references unknown vertex `{}`", e.id, end),
                });
            }
        }
        let (a, b) = e.interval;
        let finite = check_finite(a, &entity, "interval start", &mut out)
            & check_finite(b, &entity, "interval end", &mut out);
        if finite && a >= b {
            out.push(Violation {
                entity: entity.clone(),
                kind: ViolationKind::BadInterval,
                message: format!("edge `{}` has empty interval [{a}, {b}]", e.id),
            });
            continue;
        }
        if !finite {
            continue;
        }
        validate_measure(e, &entity, &mut out);
    }
    ValidationReport { violations: out }
}

fn validate_measure(e: &Edge, entity: &EntityRef, out: &mut Vec<Violation>) {
    let (a, b) = e.interval;
    let m = &e.measure;
    let mut segments_ok = true;
    let mut prev_hi = f64::NEG_INFINITY;
    for (i, s) in m.segments.iter().enumerate() {
        let finite = check_finite(s.lo, entity, "segment bound", out)
            & check_finite(s.hi, entity, "segment bound", out)
            & check_finite(s.weight, entity, "segment weight", out);
        if !finite {
            segments_ok = false;
            continue;
        }
        if s.lo >= s.hi || s.lo < a || s.hi > b {
            segments_ok = false;
            out.push(Violation {
                entity: entity.clone(),
                kind: ViolationKind::BadSegment,
                message: format!(
                    "edge `{}` segment {} has bounds [{}, {}] outside [{a}, {b}] or empty",
                    e.id, i, s.lo, s.hi
                ),
            });
        }
        if s.weight <= 0.0 {
            segments_ok = false;
            out.push(Violation {
                entity: entity.clone(),
                kind: ViolationKind::BadSegment,
                message: format!("edge `{}` segment {} has non-positive weight {}", e.id, i, s.weight),
            });
        }
        if s.lo < prev_hi {
            segments_ok = false;
            out.push(Violation {
                entity: entity.clone(),
                kind: ViolationKind::OverlappingSegments,
                message: format!("edge `{}` segment {} overlaps or is out of order", e.id, i),
            });
        }
        prev_hi = s.hi.max(prev_hi);
    }

    let mut prev_pos = f64::NEG_INFINITY;
    for (i, atom) in m.atoms.iter().enumerate() {
        if !(check_finite(atom.position, entity, "atom position", out)
            & check_finite(atom.mass, entity, "atom mass", out))
        {
            continue;
        }
        if atom.mass <= 0.0 {
            out.push(Violation {
                entity: entity.clone(),
                kind: ViolationKind::NonPositiveAtomMass,
                message: format!("edge `{}` atom {} has non-positive mass {}", e.id, i, atom.mass),
            });
        }
        if atom.position == a || atom.position == b {
            out.push(Violation {
                entity: entity.clone(),
                kind: ViolationKind::AtomAtEndpoint,
                message: format!("atom at endpoint: edge `{}` places an atom at {}", e.id, atom.position),
            });
        } else if atom.position < a || atom.position > b {
            out.push(Violation {
                entity: entity.clone(),
                kind: ViolationKind::AtomOutOfRange,
                message: format!(
                    "edge `{}` atom {} at {} lies outside ({a}, {b})",
                    e.id, i, atom.position
                ),
            });
        }
        if atom.position <= prev_pos {
            out.push(Violation {
                entity: entity.clone(),
                kind: ViolationKind::DuplicateAtom,
                message: format!("edge `{}` atom {} is out of order or duplicated", e.id, i),
            });
        }
        prev_pos = atom.position;
    }

    // a_e, b_e in spt mu_e: some density strip must start at a_e and some
    // must end at b_e whenever the measure is nonzero.
    if !m.is_zero() && segments_ok {
        let starts_at_a = m.segments.first().map(|s| s.lo == a).unwrap_or(false);
        let ends_at_b = m.segments.last().map(|s| s.hi == b).unwrap_or(false);
        if !(starts_at_a && ends_at_b) {
            out.push(Violation {
                entity: entity.clone(),
                kind: ViolationKind::EndpointNotInSupport,
                message: format!(
                    "endpoints not in support: edge `{}` needs density strips touching both {a} and {b}",
                    e.id
                ),
            });
        }
    }
}

/// Split edges and vertices into the zero-measure and positive-measure parts
/// and enumerate `E1'` deterministically.
pub fn classify(graph: &MetricGraph) -> Partition {
    let mut p = Partition {
        e0: Vec::new(),
        e1: Vec::new(),
        v0: Vec::new(),
        v1: Vec::new(),
        e1_prime: Vec::new(),
    };
    for (i, e) in graph.edges().iter().enumerate() {
        if e.measure.is_zero() {
            p.e0.push(i);
        } else {
            p.e1.push(i);
            p.e1_prime.push((i, EdgeEnd::Initial));
            p.e1_prime.push((i, EdgeEnd::Terminal));
        }
    }
    for (i, v) in graph.vertices().iter().enumerate() {
        if v.mass == 0.0 {
            p.v0.push(i);
        } else {
            p.v1.push(i);
        }
    }
    p
}

/// Support of a nonzero measure: merged closed density intervals and
/// isolated atoms, ordered by position; the complement is the open gap set.
pub fn edge_support(measure: &EdgeMeasure, interval: (f64, f64)) -> Result<Support> {
    if measure.is_zero() {
        return Err(Error::ZeroMeasure);
    }
    // Merge touching/overlapping segments; support is purely topological.
    let mut merged: Vec<(f64, f64)> = Vec::new();
    for s in &measure.segments {
        match merged.last_mut() {
            Some((_, hi)) if s.lo <= *hi => *hi = hi.max(s.hi),
            _ => merged.push((s.lo, s.hi)),
        }
    }
    let mut parts: Vec<SupportPart> = Vec::new();
    let mut seg_iter = merged.iter().peekable();
    let mut atom_iter = measure.atoms.iter().peekable();
    loop {
        match (seg_iter.peek(), atom_iter.peek()) {
            (Some(&&(lo, hi)), Some(&&atom)) => {
                if atom.position < lo {
                    parts.push(SupportPart::Point(atom.position));
                    atom_iter.next();
                } else if atom.position <= hi {
                    // absorbed into the interval
                    atom_iter.next();
                } else {
                    parts.push(SupportPart::Interval(lo, hi));
                    seg_iter.next();
                }
            }
            (Some(&&(lo, hi)), None) => {
                parts.push(SupportPart::Interval(lo, hi));
                seg_iter.next();
            }
            (None, Some(&&atom)) => {
                parts.push(SupportPart::Point(atom.position));
                atom_iter.next();
            }
            (None, None) => break,
        }
    }
    let mut gaps = Vec::new();
    let mut cursor = interval.0;
    for p in &parts {
        let (lo, hi) = match *p {
            SupportPart::Interval(lo, hi) => (lo, hi),
            SupportPart::Point(x) => (x, x),
        };
        if lo > cursor {
            gaps.push((cursor, lo));
        }
        cursor = cursor.max(hi);
    }
    if cursor < interval.1 {
        gaps.push((cursor, interval.1));
    }
    Ok(Support { parts, gaps })
}

#[cfg(test)]
mod tests {
    use super::*;
    use alloc::string::ToString;
    use alloc::vec;

    fn vertex(id: &str, mass: f64) -> Vertex {
        Vertex { id: id.to_string(), mass }
    }

    fn edge(id: &str, from: &str, to: &str, interval: (f64, f64), measure: EdgeMeasure) -> Edge {
        Edge {
            id: id.to_string(),
            from: from.to_string(),
            to: to.to_string(),
            interval,
            measure,
        }
    }

    fn seg(lo: f64, hi: f64, weight: f64) -> DensitySegment {
        DensitySegment { lo, hi, weight }
    }

    fn atom(position: f64, mass: f64) -> PointMass {
        PointMass { position, mass }
    }

    #[test]
    fn lebesgue_edge_is_valid() {
        let g = MetricGraph::new(
            vec![vertex("a", 0.0), vertex("b", 0.0)],
            vec![edge("e", "a", "b", (0.0, 1.0), EdgeMeasure::lebesgue(0.0, 1.0))],
        );
        assert!(validate(&g).is_valid());
    }

    #[test]
    fn lone_atom_misses_endpoints() {
        let m = EdgeMeasure { segments: vec![], atoms: vec![atom(0.5, 1.0)] };
        let g = MetricGraph::new(
            vec![vertex("a", 0.0), vertex("b", 0.0)],
            vec![edge("e", "a", "b", (0.0, 1.0), m)],
        );
        let report = validate(&g);
        assert_eq!(report.violations.len(), 1);
        assert_eq!(report.violations[0].kind, ViolationKind::EndpointNotInSupport);
    }

    #[test]
    fn atom_at_endpoint_is_rejected() {
        let m = EdgeMeasure {
            segments: vec![seg(0.0, 1.0, 1.0)],
            atoms: vec![atom(0.0, 1.0)],
        };
        let g = MetricGraph::new(
            vec![vertex("a", 0.0), vertex("b", 0.0)],
            vec![edge("e", "a", "b", (0.0, 1.0), m)],
        );
        let report = validate(&g);
        assert!(report
            .violations
            .iter()
            .any(|v| v.kind == ViolationKind::AtomAtEndpoint && v.message.contains("atom at endpoint")));
    }

    #[test]
    fn classify_quantum_graph() {
        let g = MetricGraph::new(
            vec![vertex("a", 0.0), vertex("b", 0.0)],
            vec![
                edge("e1", "a", "b", (0.0, 1.0), EdgeMeasure::lebesgue(0.0, 1.0)),
                edge("e2", "a", "b", (0.0, 2.0), EdgeMeasure::lebesgue(0.0, 2.0)),
            ],
        );
        let p = classify(&g);
        assert_eq!(p.e1, vec![0, 1]);
        assert!(p.e0.is_empty());
        assert!(p.v1.is_empty());
        assert_eq!(p.v0.len(), 2);
        assert_eq!(p.e1_prime.len(), 4);
        assert_eq!(p.e1_prime[0], (0, EdgeEnd::Initial));
        assert_eq!(p.e1_prime[1], (0, EdgeEnd::Terminal));
    }

    #[test]
    fn classify_pure_vertex_diffusion() {
        let g = MetricGraph::new(
            vec![vertex("a", 1.0)],
            vec![edge("e", "a", "a", (0.0, 1.0), EdgeMeasure::zero())],
        );
        let p = classify(&g);
        assert!(p.e1.is_empty());
        assert_eq!(p.e0, vec![0]);
        assert_eq!(p.v1, vec![0]);
    }

    #[test]
    fn classify_mixed_counts() {
        let g = MetricGraph::new(
            vec![vertex("a", 0.0), vertex("b", 0.5)],
            vec![
                edge("z", "a", "b", (0.0, 1.0), EdgeMeasure::zero()),
                edge("l", "a", "b", (0.0, 1.0), EdgeMeasure::lebesgue(0.0, 1.0)),
            ],
        );
        let p = classify(&g);
        assert_eq!(p.e1_prime.len(), 2);
        assert_eq!(p.v1, vec![1]);
    }

    #[test]
    fn support_with_gaps_and_atom() {
        let m = EdgeMeasure {
            segments: vec![seg(0.0, 0.2, 1.0), seg(0.8, 1.0, 1.0)],
            atoms: vec![atom(0.5, 1.0)],
        };
        let s = edge_support(&m, (0.0, 1.0)).unwrap();
        assert_eq!(
            s.parts,
            vec![
                SupportPart::Interval(0.0, 0.2),
                SupportPart::Point(0.5),
                SupportPart::Interval(0.8, 1.0)
            ]
        );
        assert_eq!(s.gaps, vec![(0.2, 0.5), (0.5, 0.8)]);
    }

    #[test]
    fn support_full_interval() {
        let m = EdgeMeasure { segments: vec![seg(0.0, 1.0, 2.0)], atoms: vec![] };
        let s = edge_support(&m, (0.0, 1.0)).unwrap();
        assert_eq!(s.parts, vec![SupportPart::Interval(0.0, 1.0)]);
        assert!(s.gaps.is_empty());
    }

    #[test]
    fn adjacent_segments_merge() {
        let m = EdgeMeasure {
            segments: vec![seg(0.0, 0.5, 1.0), seg(0.5, 1.0, 3.0)],
            atoms: vec![],
        };
        let s = edge_support(&m, (0.0, 1.0)).unwrap();
        assert_eq!(s.parts, vec![SupportPart::Interval(0.0, 1.0)]);
        assert!(s.gaps.is_empty());
    }

    #[test]
    fn zero_measure_has_no_support() {
        assert_eq!(edge_support(&EdgeMeasure::zero(), (0.0, 1.0)), Err(Error::ZeroMeasure));
    }

    #[test]
    fn partitions_are_exhaustive_and_disjoint() {
        let g = MetricGraph::new(
            vec![vertex("a", 0.0), vertex("b", 2.0), vertex("c", 0.0)],
            vec![
                edge("e1", "a", "b", (0.0, 1.0), EdgeMeasure::lebesgue(0.0, 1.0)),
                edge("e2", "b", "c", (0.0, 1.0), EdgeMeasure::zero()),
            ],
        );
        let p = classify(&g);
        assert_eq!(p.e0.len() + p.e1.len(), g.edges().len());
        assert_eq!(p.v0.len() + p.v1.len(), g.vertices().len());
        for e in &p.e0 {
            assert!(!p.e1.contains(e));
        }
        for v in &p.v0 {
            assert!(!p.v1.contains(v));
        }
    }
}
