//! The heat flow `e^{-tH}` and its positivity / submarkov verdicts.
//!
//! Evolution is exact on the discrete operator: states are spectral sums
//! over the `M`-orthonormal eigenpairs. Positivity is decided on the
//! canonical positive coordinates of the constrained space — interior mesh
//! nodes together with the disjoint-support lattice rays of `X`. In those
//! coordinates the positive cone of nodal vectors is the coordinate cone,
//! and `e^{-tH}` is entrywise nonnegative for all `t >= 0` precisely when
//! `X` is a sublattice and the reduced generator is Metzler (off-diagonal
//! entries nonpositive). Time sampling of the kernel serves as a secondary
//! witness generator; on its own it can miss small-`t` violations.

use alloc::string::String;
use alloc::string::ToString;
use alloc::vec::Vec;

use nalgebra::{DMatrix, DVector};
use num_traits::Float;

use crate::error::Error;
use crate::lattice::classify_lattice;
use crate::operator::{ConstrainedOperator, DiscreteSystem};
use crate::Result;

/// Default sampling grid for kernel witnesses.
pub const SAMPLE_TIMES: [f64; 5] = [1e-3, 1e-2, 1e-1, 1.0, 10.0];

/// Trajectory of the heat flow plus per-time kernel diagnostics.
#[derive(Debug, Clone, PartialEq)]
pub struct EvolutionResult {
    pub times: Vec<f64>,
    /// Nodal (and vertex) state vectors, one per time.
    pub states: Vec<DVector<f64>>,
    /// Smallest entry of the kernel matrix of `e^{-tH}` per time.
    pub min_entry_kernel: Vec<f64>,
    /// `max(e^{-tH} 1 - 1)` per time.
    pub max_one_excess: Vec<f64>,
    /// `M`-norm of the part of the initial datum outside the constrained
    /// space (zero when `f0` satisfies the boundary conditions).
    pub projection_residual: f64,
}

/// Evolve `u' = -Hu` from `f0` over the given strictly increasing
/// nonnegative times. Initial data outside the constrained space is
/// `M`-orthogonally projected onto it and the residual reported.
pub fn evolve(op: &ConstrainedOperator, f0: &DVector<f64>, times: &[f64]) -> Result<EvolutionResult> {
    for &t in times {
        if t < 0.0 {
            return Err(Error::NegativeTime(t));
        }
    }
    if times.windows(2).any(|w| w[1] <= w[0]) {
        return Err(Error::TimesNotIncreasing);
    }
    let coeff = op.mode_coefficients(f0);
    let projected = &op.modes * &coeff;
    let diff = f0 - &projected;
    let m = op.mass_diagonal();
    let mut res2 = 0.0;
    for i in 0..diff.len() {
        res2 += m[i] * diff[i] * diff[i];
    }
    let projection_residual = res2.sqrt();

    let mut states = Vec::with_capacity(times.len());
    let mut min_entry_kernel = Vec::with_capacity(times.len());
    let mut max_one_excess = Vec::with_capacity(times.len());
    let ones = DVector::from_element(op.n_dofs, 1.0);
    for &t in times {
        let mut ct = coeff.clone();
        for i in 0..op.dim {
            ct[i] *= (-t * op.eigenvalues[i]).exp();
        }
        states.push(&op.modes * ct);
        let kernel = op.kernel(t);
        min_entry_kernel.push(kernel.min());
        let k1 = &kernel * &ones;
        max_one_excess.push((0..k1.len()).map(|i| k1[i] - 1.0).fold(f64::NEG_INFINITY, f64::max));
    }
    Ok(EvolutionResult { times: times.into(), states, min_entry_kernel, max_one_excess, projection_residual })
}

/// A sampled kernel diagnostic at one time.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SampledPoint {
    pub t: f64,
    pub min_kernel_entry: f64,
    pub max_one_excess: f64,
}

/// Most violating sampled kernel entry.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct KernelWitness {
    pub t: f64,
    pub row: usize,
    pub col: usize,
    pub value: f64,
}

/// An offending entry of the reduced generator.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GeneratorEntry {
    pub row: usize,
    pub col: usize,
    pub value: f64,
}

/// Verdict of a positivity or submarkov check.
#[derive(Debug, Clone, PartialEq)]
pub struct SemigroupVerdict {
    pub holds_for_all_t: bool,
    /// Whether `X` is a sublattice (both checks) and Stonean (submarkov).
    pub is_sublattice: bool,
    pub is_stonean: Option<bool>,
    /// Worst off-diagonal (positivity) or row-sum (submarkov) breach of the
    /// reduced generator, when the structural test got that far.
    pub generator_violation: Option<GeneratorEntry>,
    pub sampled: Vec<SampledPoint>,
    pub witness: Option<KernelWitness>,
    pub note: String,
}

const NOTE: &str = "the verdict certifies the spatially discretized semigroup; \
with lumped masses the reduced-generator criterion is the exact discrete \
counterpart of the continuum condition";

/// The generator of the flow in the canonical positive coordinates:
/// interior nodes plus the lattice rays of `X`. Returns the row-scaled
/// Galerkin matrix `D^{-1} E^T A E` and the diagonal `D = E^T M E`.
fn reduced_generator(
    system: &DiscreteSystem,
    rays: &DMatrix<f64>,
) -> (DMatrix<f64>, DVector<f64>) {
    let interior = system.dof_map.interior_dofs();
    let trace_dofs = &system.dof_map.trace_dofs;
    let n = system.n_dofs();
    let n_red = interior.len() + rays.ncols();
    let mut e = DMatrix::zeros(n, n_red);
    for (pos, &dof) in interior.iter().enumerate() {
        e[(dof, pos)] = 1.0;
    }
    for k in 0..rays.ncols() {
        for (i, &dof) in trace_dofs.iter().enumerate() {
            e[(dof, interior.len() + k)] = rays[(i, k)];
        }
    }
    let ae = &system.form_matrix * &e;
    let raw = e.transpose() * ae;
    let mut d = DVector::zeros(n_red);
    for k in 0..n_red {
        let mut acc = 0.0;
        for i in 0..n {
            acc += system.mass[i] * e[(i, k)] * e[(i, k)];
        }
        d[k] = acc;
    }
    let mut g = raw;
    for i in 0..n_red {
        for j in 0..n_red {
            g[(i, j)] /= d[i];
        }
    }
    (g, d)
}

fn sample_kernel(op: &ConstrainedOperator) -> (Vec<SampledPoint>, Option<KernelWitness>, Option<KernelWitness>) {
    let ones = DVector::from_element(op.n_dofs, 1.0);
    let mut sampled = Vec::new();
    let mut neg_witness: Option<KernelWitness> = None;
    let mut excess_witness: Option<KernelWitness> = None;
    for &t in SAMPLE_TIMES.iter() {
        let kernel = op.kernel(t);
        let mut min_entry = f64::INFINITY;
        let mut min_pos = (0usize, 0usize);
        for i in 0..kernel.nrows() {
            for j in 0..kernel.ncols() {
                if kernel[(i, j)] < min_entry {
                    min_entry = kernel[(i, j)];
                    min_pos = (i, j);
                }
            }
        }
        if op.n_dofs == 0 {
            min_entry = 0.0;
        }
        let k1 = &kernel * &ones;
        let mut excess = f64::NEG_INFINITY;
        let mut excess_row = 0usize;
        for i in 0..k1.len() {
            if k1[i] - 1.0 > excess {
                excess = k1[i] - 1.0;
                excess_row = i;
            }
        }
        if op.n_dofs == 0 {
            excess = 0.0;
        }
        sampled.push(SampledPoint { t, min_kernel_entry: min_entry, max_one_excess: excess });
        let worse_neg = neg_witness.map(|w| min_entry < w.value).unwrap_or(min_entry < -1e-12);
        if worse_neg {
            neg_witness = Some(KernelWitness { t, row: min_pos.0, col: min_pos.1, value: min_entry });
        }
        let worse_exc = excess_witness.map(|w| excess > w.value).unwrap_or(excess > 1e-12);
        if worse_exc {
            excess_witness = Some(KernelWitness { t, row: excess_row, col: excess_row, value: excess });
        }
    }
    (sampled, neg_witness, excess_witness)
}

/// Decide whether `e^{-tH}` is positivity preserving for every `t >= 0`.
///
/// Exact criterion: `X` must be a sublattice (otherwise even the projection
/// onto the constrained space has a negative entry) and the generator in
/// interior-plus-ray coordinates must be Metzler. Kernel samples at the
/// fixed time grid provide the witness when the criterion fails.
pub fn check_positive(
    system: &DiscreteSystem,
    op: &ConstrainedOperator,
    seed: u64,
) -> Result<SemigroupVerdict> {
    let cls = classify_lattice(&system.coupling.subspace, seed)?;
    let (sampled, neg_witness, _) = sample_kernel(op);
    if !cls.is_sublattice {
        return Ok(SemigroupVerdict {
            holds_for_all_t: false,
            is_sublattice: false,
            is_stonean: None,
            generator_violation: None,
            sampled,
            witness: neg_witness,
            note: NOTE.to_string(),
        });
    }
    let rays = cls.lattice_basis.as_ref().expect("sublattice carries rays");
    let (g, _) = reduced_generator(system, rays);
    let tol = 1e-10 * g.amax().max(1.0);
    let mut violation: Option<GeneratorEntry> = None;
    for i in 0..g.nrows() {
        for j in 0..g.ncols() {
            if i != j && g[(i, j)] > tol {
                let worse = violation.map(|v| g[(i, j)] > v.value).unwrap_or(true);
                if worse {
                    violation = Some(GeneratorEntry { row: i, col: j, value: g[(i, j)] });
                }
            }
        }
    }
    let holds = violation.is_none();
    Ok(SemigroupVerdict {
        holds_for_all_t: holds,
        is_sublattice: true,
        is_stonean: None,
        generator_violation: violation,
        sampled,
        witness: if holds { None } else { neg_witness },
        note: NOTE.to_string(),
    })
}

/// Decide whether `e^{-tH}` is submarkovian for every `t >= 0`: positivity
/// plus a Stonean `X` and nonnegative row sums of the reduced generator
/// against the order unit (`H 1 >= 0` in the reduced coordinates).
pub fn check_submarkov(
    system: &DiscreteSystem,
    op: &ConstrainedOperator,
    seed: u64,
) -> Result<SemigroupVerdict> {
    let positive = check_positive(system, op, seed)?;
    let cls = classify_lattice(&system.coupling.subspace, seed)?;
    let (sampled, neg_witness, excess_witness) = sample_kernel(op);
    if !positive.holds_for_all_t || !cls.is_stonean {
        return Ok(SemigroupVerdict {
            holds_for_all_t: false,
            is_sublattice: cls.is_sublattice,
            is_stonean: Some(cls.is_stonean),
            generator_violation: positive.generator_violation,
            sampled,
            witness: excess_witness.or(neg_witness),
            note: NOTE.to_string(),
        });
    }
    let rays = cls.lattice_basis.as_ref().expect("sublattice carries rays");
    let (g, d) = reduced_generator(system, rays);
    // order unit in reduced coordinates: M-projection of the nodal ones
    let interior = system.dof_map.interior_dofs();
    let trace_dofs = &system.dof_map.trace_dofs;
    let n_red = g.nrows();
    let mut unit = DVector::from_element(n_red, 1.0);
    for k in 0..rays.ncols() {
        let mut acc = 0.0;
        for (i, &dof) in trace_dofs.iter().enumerate() {
            acc += system.mass[dof] * rays[(i, k)];
        }
        unit[interior.len() + k] = acc / d[interior.len() + k];
    }
    let gu = &g * unit;
    let tol = 1e-10 * g.amax().max(1.0);
    let mut violation: Option<GeneratorEntry> = None;
    for i in 0..n_red {
        if gu[i] < -tol {
            let worse = violation.map(|v| gu[i] < v.value).unwrap_or(true);
            if worse {
                violation = Some(GeneratorEntry { row: i, col: i, value: gu[i] });
            }
        }
    }
    let holds = violation.is_none();
    Ok(SemigroupVerdict {
        holds_for_all_t: holds,
        is_sublattice: true,
        is_stonean: Some(true),
        generator_violation: violation,
        sampled,
        witness: if holds { None } else { excess_witness },
        note: NOTE.to_string(),
    })
}
