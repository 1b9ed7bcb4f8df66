//! Sublattice and Stonean-sublattice detection for boundary subspaces, and
//! the matching generator conditions on the coupling operator.
//!
//! A sublattice of `K^n` is a subspace closed under the pointwise modulus;
//! equivalently it is spanned by nonnegative vectors with pairwise disjoint
//! supports — the extreme rays of the cone `X ∩ K^n_+`. A sublattice is
//! Stonean when additionally `x ∧ 1 ∈ X` for real `x ∈ X`, which forces the
//! rays to be indicator vectors. Rays are found constructively by
//! enumerating candidate zero sets, and every verdict is cross-validated by
//! a seeded randomized closure oracle; a disagreement is a hard error, never
//! a silent fallback.
//!
//! Lattice operations (`|x|`, `x ∧ y`, `x ∧ 1`) act coordinatewise and do
//! not see the trace weights; only projections onto `X` use the weighted
//! product.

use alloc::format;
use alloc::vec::Vec;

use nalgebra::{DMatrix, DVector};
use num_traits::Float;
use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::error::Error;
use crate::linalg;
use crate::trace::{CouplingOperator, Subspace};
use crate::Result;

/// Relative tolerance of the randomized closure oracle.
const ORACLE_TOL: f64 = 1e-9;
/// Number of random subspace samples drawn by the oracle.
const ORACLE_SAMPLES: usize = 200;
/// Entries below this fraction of the largest ray entry count as zero.
const SUPPORT_TOL: f64 = 1e-9;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum WitnessKind {
    /// `|x|` leaves `X`.
    ModulusEscapes,
    /// `x ∧ 1` leaves `X`.
    MinWithOneEscapes,
}

/// A vector of `X` violating the tested closure property.
#[derive(Debug, Clone, PartialEq)]
pub struct LatticeWitness {
    pub vector: DVector<f64>,
    pub kind: WitnessKind,
    pub distance: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct LatticeClassification {
    pub is_sublattice: bool,
    pub is_stonean: bool,
    /// Disjoint-support nonnegative rays spanning `X` (columns), scaled to
    /// maximum entry 1; exact indicator vectors in the Stonean case.
    pub lattice_basis: Option<DMatrix<f64>>,
    pub witness: Option<LatticeWitness>,
}

/// Iterate all `k`-subsets of `0..n` in lexicographic order.
struct Combinations {
    n: usize,
    k: usize,
    state: Option<Vec<usize>>,
}

impl Combinations {
    fn new(n: usize, k: usize) -> Self {
        let state = (k <= n).then(|| (0..k).collect());
        Self { n, k, state }
    }
}

impl Iterator for Combinations {
    type Item = Vec<usize>;

    fn next(&mut self) -> Option<Vec<usize>> {
        let current = self.state.clone()?;
        // advance
        let mut next = current.clone();
        let mut i = self.k;
        loop {
            if i == 0 {
                self.state = None;
                break;
            }
            i -= 1;
            if next[i] + 1 <= self.n - (self.k - i) {
                next[i] += 1;
                for j in i + 1..self.k {
                    next[j] = next[j - 1] + 1;
                }
                self.state = Some(next);
                break;
            }
        }
        Some(current)
    }
}

/// Extreme rays of `X ∩ R^n_+`, each scaled to maximum entry 1, entries
/// below the support tolerance snapped to zero.
fn extreme_rays(x: &Subspace) -> Vec<DVector<f64>> {
    let n = x.ambient.dim();
    let d = x.dim();
    let mut rays: Vec<DVector<f64>> = Vec::new();
    if d == 0 {
        return rays;
    }
    for zeros in Combinations::new(n, d - 1) {
        let mut rows = DMatrix::zeros(zeros.len(), d);
        for (r, &i) in zeros.iter().enumerate() {
            for c in 0..d {
                rows[(r, c)] = x.basis[(i, c)];
            }
        }
        let kernel = linalg::kernel_basis(&rows);
        if kernel.ncols() != 1 {
            continue;
        }
        let mut ray = &x.basis * kernel.column(0).into_owned();
        let scale = ray.amax();
        if scale == 0.0 {
            continue;
        }
        // sign-definite on its numerical support?
        let mut pos = false;
        let mut neg = false;
        for i in 0..n {
            if ray[i] > SUPPORT_TOL * scale {
                pos = true;
            } else if ray[i] < -SUPPORT_TOL * scale {
                neg = true;
            }
        }
        if pos && neg {
            continue;
        }
        if neg {
            ray = -ray;
        }
        let max = ray.max();
        for i in 0..n {
            ray[i] = if ray[i] > SUPPORT_TOL * scale { ray[i] / max } else { 0.0 };
        }
        let duplicate = rays.iter().any(|r| (r - &ray).amax() <= 1e-8);
        if !duplicate {
            rays.push(ray);
        }
    }
    rays.sort_by(|a, b| {
        let fa = a.iter().position(|&v| v > 0.0).unwrap_or(usize::MAX);
        let fb = b.iter().position(|&v| v > 0.0).unwrap_or(usize::MAX);
        fa.cmp(&fb)
    });
    rays
}

fn supports_disjoint(rays: &[DVector<f64>]) -> bool {
    if rays.is_empty() {
        return true;
    }
    let n = rays[0].len();
    let mut owned = alloc::vec![false; n];
    for ray in rays {
        for i in 0..n {
            if ray[i] > 0.0 {
                if owned[i] {
                    return false;
                }
                owned[i] = true;
            }
        }
    }
    true
}

/// Classify `X` as (Stonean) sublattice or not; the constructive verdict is
/// cross-validated by the seeded randomized modulus-closure oracle and a
/// disagreement fails hard.
pub fn classify_lattice(x: &Subspace, seed: u64) -> Result<LatticeClassification> {
    let n = x.ambient.dim();
    let d = x.dim();
    if d == 0 {
        return Ok(LatticeClassification {
            is_sublattice: true,
            is_stonean: true,
            lattice_basis: Some(DMatrix::zeros(n, 0)),
            witness: None,
        });
    }

    let rays = extreme_rays(x);
    let constructive_sublattice = rays.len() == d && supports_disjoint(&rays);
    let constructive_stonean = constructive_sublattice
        && rays.iter().all(|ray| {
            let on: Vec<f64> = ray.iter().copied().filter(|&v| v > 0.0).collect();
            let lo = on.iter().cloned().fold(f64::INFINITY, f64::min);
            on.iter().all(|&v| (v - lo).abs() <= 1e-9 * lo.max(1.0))
        });

    // randomized closure oracle
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut modulus_witness: Option<LatticeWitness> = None;
    let mut min_witness: Option<LatticeWitness> = None;
    for _ in 0..ORACLE_SAMPLES {
        let mut c = DVector::zeros(d);
        for i in 0..d {
            c[i] = rng.random_range(-1.0..1.0);
        }
        let v = &x.basis * c;
        let nrm = x.ambient.norm(&v);
        if nrm < 1e-12 {
            continue;
        }
        let modulus = v.map(f64::abs);
        let dist = x.distance(&modulus);
        if dist > ORACLE_TOL * nrm && modulus_witness.is_none() {
            modulus_witness = Some(LatticeWitness {
                vector: v.clone(),
                kind: WitnessKind::ModulusEscapes,
                distance: dist,
            });
        }
        if constructive_sublattice && modulus_witness.is_none() {
            for scale in [0.1, 1.0, 10.0] {
                let y = &v * (scale / nrm);
                let clipped = y.map(|t| t.min(1.0));
                let dist = x.distance(&clipped);
                if dist > ORACLE_TOL * scale.max(1.0) && min_witness.is_none() {
                    min_witness = Some(LatticeWitness {
                        vector: y,
                        kind: WitnessKind::MinWithOneEscapes,
                        distance: dist,
                    });
                }
            }
        }
    }

    let oracle_sublattice = modulus_witness.is_none();
    if oracle_sublattice != constructive_sublattice {
        return Err(Error::OracleDisagreement(format!(
            "sublattice: constructive={constructive_sublattice}, oracle={oracle_sublattice}"
        )));
    }
    if constructive_sublattice {
        let oracle_stonean = min_witness.is_none();
        if oracle_stonean != constructive_stonean {
            return Err(Error::OracleDisagreement(format!(
                "stonean: constructive={constructive_stonean}, oracle={oracle_stonean}"
            )));
        }
    }

    let lattice_basis = constructive_sublattice.then(|| {
        let mut basis = DMatrix::zeros(n, rays.len());
        for (k, ray) in rays.iter().enumerate() {
            for i in 0..n {
                // Stonean rays are exact indicators
                basis[(i, k)] = if constructive_stonean {
                    if ray[i] > 0.0 {
                        1.0
                    } else {
                        0.0
                    }
                } else {
                    ray[i]
                };
            }
        }
        basis
    });
    let witness = if !constructive_sublattice {
        modulus_witness
    } else if !constructive_stonean {
        min_witness
    } else {
        None
    };
    Ok(LatticeClassification {
        is_sublattice: constructive_sublattice,
        is_stonean: constructive_stonean,
        lattice_basis,
        witness,
    })
}

/// Coefficient matrix of `L` in the disjoint-support lattice basis:
/// `L r_j = sum_i coeff[i][j] r_i` (exact because the rays are
/// weighted-orthogonal).
pub(crate) fn lattice_coefficient_matrix(
    coupling: &CouplingOperator,
    rays: &DMatrix<f64>,
) -> DMatrix<f64> {
    let k = rays.ncols();
    let mut coeff = DMatrix::zeros(k, k);
    let ts = &coupling.subspace.ambient;
    let norms: Vec<f64> = (0..k)
        .map(|i| {
            let r = rays.column(i).into_owned();
            ts.dot(&r, &r)
        })
        .collect();
    for j in 0..k {
        let lr = coupling.apply_ambient(&rays.column(j).into_owned());
        for i in 0..k {
            coeff[(i, j)] = ts.dot(&lr, &rays.column(i).into_owned()) / norms[i];
        }
    }
    coeff
}

fn metzler_margin(coeff: &DMatrix<f64>) -> f64 {
    let k = coeff.nrows();
    let mut worst = f64::NEG_INFINITY;
    for i in 0..k {
        for j in 0..k {
            if i != j {
                worst = worst.max(coeff[(i, j)]);
            }
        }
    }
    worst
}

fn neg_tol(coeff: &DMatrix<f64>) -> f64 {
    1e-10 * coeff.amax().max(1.0)
}

/// Positivity of `(e^{-tL})_{t>=0}` on the sublattice cone: the coefficient
/// matrix of `L` in the lattice basis must be Metzler (`-L` off-diagonally
/// nonnegative). The verdict is cross-checked by sampling the exponential.
pub fn check_l_positive(coupling: &CouplingOperator, cls: &LatticeClassification) -> Result<bool> {
    let rays = cls.lattice_basis.as_ref().ok_or(Error::NotSublattice)?;
    if !cls.is_sublattice {
        return Err(Error::NotSublattice);
    }
    if rays.ncols() == 0 {
        return Ok(true);
    }
    let coeff = lattice_coefficient_matrix(coupling, rays);
    let verdict = rays.ncols() < 2 || metzler_margin(&coeff) <= neg_tol(&coeff);
    if verdict {
        for t in [0.10_f64, 1.0, 10.0] {
            let e = linalg::expm(&(-&coeff * t));
            debug_assert!(e.min() >= -1e-8 * e.amax().max(1.0), "exponential sampling contradicts the Metzler verdict");
        }
    }
    Ok(verdict)
}

/// Submarkov property of `(e^{-tL})_{t>=0}` on a Stonean sublattice: Metzler
/// plus nonnegative row sums of the coefficient matrix in the indicator
/// basis (so the order unit is not pushed above itself).
pub fn check_l_submarkov(coupling: &CouplingOperator, cls: &LatticeClassification) -> Result<bool> {
    if !cls.is_stonean {
        return Err(Error::NotStonean);
    }
    let rays = cls.lattice_basis.as_ref().ok_or(Error::NotStonean)?;
    if rays.ncols() == 0 {
        return Ok(true);
    }
    let coeff = lattice_coefficient_matrix(coupling, rays);
    let tol = neg_tol(&coeff);
    let metzler = rays.ncols() < 2 || metzler_margin(&coeff) <= tol;
    let rows_ok = (0..coeff.nrows()).all(|i| {
        let s: f64 = (0..coeff.ncols()).map(|j| coeff[(i, j)]).sum();
        s >= -tol
    });
    Ok(metzler && rows_ok)
}

/// Per-vertex hypothesis verdicts for local boundary conditions.
#[derive(Debug, Clone, PartialEq)]
pub struct VertexHypotheses {
    pub vertex: usize,
    pub is_sublattice: bool,
    pub is_stonean: bool,
    pub l_positive: Option<bool>,
    pub l_submarkov: Option<bool>,
}

/// Verdicts on the structural hypotheses of the positivity / submarkov
/// criteria, per vertex when the boundary condition is local.
#[derive(Debug, Clone, PartialEq)]
pub struct TheoremCheck {
    pub pos_hypotheses: bool,
    pub submarkov_hypotheses: bool,
    pub per_vertex: Option<Vec<VertexHypotheses>>,
}

/// Check the hypotheses `X (Stonean) sublattice` and `e^{-tL}` positive /
/// submarkov; for local conditions the verdict decomposes over the vertex
/// blocks and the global verdict is their conjunction.
pub fn theorem_check(coupling: &CouplingOperator, seed: u64) -> Result<TheoremCheck> {
    if let Some(blocks) = &coupling.blocks {
        let mut per_vertex = Vec::new();
        let mut pos_all = true;
        let mut sub_all = true;
        for block in blocks {
            let local = CouplingOperator {
                subspace: block.space.clone(),
                matrix: block.matrix.clone(),
                blocks: None,
            };
            let cls = classify_lattice(&block.space, seed.wrapping_add(block.vertex as u64))?;
            let l_positive = cls
                .is_sublattice
                .then(|| check_l_positive(&local, &cls))
                .transpose()?;
            let l_submarkov = cls
                .is_stonean
                .then(|| check_l_submarkov(&local, &cls))
                .transpose()?;
            let pos_v = cls.is_sublattice && l_positive == Some(true);
            let sub_v = cls.is_stonean && l_submarkov == Some(true);
            pos_all &= pos_v;
            sub_all &= sub_v;
            per_vertex.push(VertexHypotheses {
                vertex: block.vertex,
                is_sublattice: cls.is_sublattice,
                is_stonean: cls.is_stonean,
                l_positive,
                l_submarkov,
            });
        }
        Ok(TheoremCheck { pos_hypotheses: pos_all, submarkov_hypotheses: sub_all, per_vertex: Some(per_vertex) })
    } else {
        let cls = classify_lattice(&coupling.subspace, seed)?;
        let pos = cls.is_sublattice && check_l_positive(coupling, &cls)?;
        let sub = cls.is_stonean && check_l_submarkov(coupling, &cls)?;
        Ok(TheoremCheck { pos_hypotheses: pos, submarkov_hypotheses: sub, per_vertex: None })
    }
}
