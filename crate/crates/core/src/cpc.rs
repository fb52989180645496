//! Common principal components of a family of PSD matrices.
//!
//! Two estimators are provided:
//!
//! * [`fg_cpc`] minimizes the mean off-diagonal energy of `B^T psi_i B` by
//!   cyclic plane rotations of column pairs (Flury–Gautschi structure). For a
//!   pair `(l, m)` rotated by `theta`, with `u_i = (a_i - d_i) / 2` and `c_i`
//!   the pair's off-diagonal entry, the diagonal energy changes with
//!   `sum_i (u_i cos 2theta + c_i sin 2theta)^2`, a quadratic form in
//!   `(cos 2theta, sin 2theta)`. Its maximizer is the leading eigenvector of
//!   a 2x2 matrix, so each pair update is exact and the objective never
//!   increases. A fixed point satisfies the stationarity system
//!   `sum_i (a_i - d_i) c_i = 0` for every pair.
//! * [`fast_cpc`] takes the eigenvectors of the sample sum, which is
//!   consistent for Wishart families sharing a scale matrix.

use std::borrow::Borrow;

use nalgebra::DMatrix;

use crate::error::{Error, Result};
use crate::linalg;
use crate::psd::{OrthonormalFrame, PsdMatrix};

pub const DEFAULT_FG_TOL: f64 = 1e-8;
pub const DEFAULT_FG_MAX_SWEEPS: usize = 200;

/// Rotations smaller than this are treated as "no move" when detecting
/// stagnation.
const MIN_ROTATION: f64 = 1e-14;

#[derive(Clone, Debug)]
pub struct CpcSolution {
    pub frame: OrthonormalFrame,
    /// Mean squared residual of the sample under `frame`.
    pub objective: f64,
    pub stationarity_residual: f64,
    pub iterations: usize,
    pub converged: bool,
    /// Objective before the first sweep followed by the value after each sweep.
    pub objective_trace: Vec<f64>,
}

/// Starting frame for [`fg_cpc`].
#[derive(Clone, Debug, Default)]
pub enum CpcInit {
    /// Eigenvectors of the sample mean (the [`fast_cpc`] estimate).
    #[default]
    EigenOfMean,
    Frame(OrthonormalFrame),
}

fn sample_dim<M: Borrow<PsdMatrix>>(sample: &[M]) -> Result<usize> {
    let first = sample.first().ok_or(Error::EmptySample)?.borrow().dim();
    for m in sample {
        if m.borrow().dim() != first {
            return Err(Error::DimMismatch {
                expected: first,
                found: m.borrow().dim(),
            });
        }
    }
    Ok(first)
}

fn rotate_all<M: Borrow<PsdMatrix>>(sample: &[M], b: &OrthonormalFrame) -> Result<Vec<DMatrix<f64>>> {
    let p = sample_dim(sample)?;
    if b.dim() != p {
        return Err(Error::DimMismatch {
            expected: p,
            found: b.dim(),
        });
    }
    Ok(sample
        .iter()
        .map(|m| linalg::congruence(m.borrow().as_matrix(), b.as_matrix()))
        .collect())
}

fn mean_off_diagonal(rotated: &[DMatrix<f64>]) -> f64 {
    rotated.iter().map(linalg::off_diagonal_sq).sum::<f64>() / rotated.len() as f64
}

fn stationarity_of_rotated(rotated: &[DMatrix<f64>]) -> f64 {
    let p = rotated[0].nrows();
    let mut acc = 0.0;
    for l in 0..p {
        for m in (l + 1)..p {
            let g: f64 = rotated
                .iter()
                .map(|a| (a[(l, l)] - a[(m, m)]) * a[(l, m)])
                .sum();
            acc += g * g;
        }
    }
    acc.sqrt() / rotated.len() as f64
}

/// `(1/n) sum_i ||psi_i - P_B(psi_i)||_F^2`.
pub fn cpc_objective<M: Borrow<PsdMatrix>>(sample: &[M], b: &OrthonormalFrame) -> Result<f64> {
    Ok(mean_off_diagonal(&rotate_all(sample, b)?))
}

/// Norm of the pairwise stationarity conditions, divided by `n`.
///
/// For columns `l < m` of `B` the condition is
/// `beta_l^T (sum_i (beta_l^T psi_i beta_l - beta_m^T psi_i beta_m) psi_i) beta_m = 0`.
pub fn stationarity_residual<M: Borrow<PsdMatrix>>(sample: &[M], b: &OrthonormalFrame) -> Result<f64> {
    Ok(stationarity_of_rotated(&rotate_all(sample, b)?))
}

/// Eigenvectors of the sample sum.
pub fn fast_cpc<M: Borrow<PsdMatrix>>(sample: &[M]) -> Result<CpcSolution> {
    let p = sample_dim(sample)?;
    let omega = PsdMatrix::sum(p, sample.iter().map(|m| m.borrow()));
    let (_, mut vectors) = linalg::symmetric_eigen(omega.as_matrix())?;
    linalg::canonicalize_signs(&mut vectors);
    let frame = OrthonormalFrame::from_trusted(vectors);
    let rotated = rotate_all(sample, &frame)?;
    let objective = mean_off_diagonal(&rotated);
    Ok(CpcSolution {
        frame,
        objective,
        stationarity_residual: stationarity_of_rotated(&rotated),
        iterations: 1,
        converged: true,
        objective_trace: vec![objective],
    })
}

/// Least-squares common principal components by cyclic pairwise rotations.
///
/// Stops once the stationarity residual drops below `tol`, or when a full
/// sweep makes no rotation above machine precision. Hitting `max_sweeps`
/// first returns the last (and best) iterate with `converged = false`.
pub fn fg_cpc<M: Borrow<PsdMatrix>>(
    sample: &[M],
    init: &CpcInit,
    max_sweeps: usize,
    tol: f64,
) -> Result<CpcSolution> {
    let p = sample_dim(sample)?;
    let start = match init {
        CpcInit::EigenOfMean => fast_cpc(sample)?.frame,
        CpcInit::Frame(f) => f.clone(),
    };
    let mut frame = start.into_matrix();
    let mut rotated = rotate_all(sample, &OrthonormalFrame::from_trusted(frame.clone()))?;

    let mut trace = vec![mean_off_diagonal(&rotated)];
    let mut residual = stationarity_of_rotated(&rotated);
    let mut converged = residual < tol;
    let mut sweeps = 0;

    while !converged && sweeps < max_sweeps {
        sweeps += 1;
        let mut largest = 0.0f64;
        for l in 0..p {
            for m in (l + 1)..p {
                let theta = optimal_pair_angle(&rotated, l, m);
                if theta.abs() <= MIN_ROTATION {
                    continue;
                }
                largest = largest.max(theta.abs());
                let (s, c) = theta.sin_cos();
                rotate_pair_columns(&mut frame, l, m, c, s);
                for a in rotated.iter_mut() {
                    rotate_pair_columns(a, l, m, c, s);
                    rotate_pair_rows(a, l, m, c, s);
                }
            }
        }
        trace.push(mean_off_diagonal(&rotated));
        residual = stationarity_of_rotated(&rotated);
        if residual < tol || largest <= MIN_ROTATION {
            converged = true;
        }
    }

    // Columns by descending mean projection index, then the sign convention.
    let mut order: Vec<usize> = (0..p).collect();
    let weight = |j: usize| rotated.iter().map(|a| a[(j, j)]).sum::<f64>();
    order.sort_by(|&i, &j| weight(j).total_cmp(&weight(i)));
    let mut ordered = DMatrix::from_fn(p, p, |r, c| frame[(r, order[c])]);
    linalg::canonicalize_signs(&mut ordered);
    // Re-orthonormalization is unnecessary: every update is an exact rotation.
    let frame = OrthonormalFrame::from_trusted(ordered);

    Ok(CpcSolution {
        frame,
        objective: *trace.last().expect("trace starts non-empty"),
        stationarity_residual: residual,
        iterations: sweeps,
        converged,
        objective_trace: trace,
    })
}

/// [`fg_cpc`] with the default initialization, sweep cap, and tolerance.
pub fn fg_cpc_default<M: Borrow<PsdMatrix>>(sample: &[M]) -> Result<CpcSolution> {
    fg_cpc(sample, &CpcInit::EigenOfMean, DEFAULT_FG_MAX_SWEEPS, DEFAULT_FG_TOL)
}

// Rotation angle maximizing the diagonal energy of the (l, m) block.
fn optimal_pair_angle(rotated: &[DMatrix<f64>], l: usize, m: usize) -> f64 {
    let (mut uu, mut uc, mut cc) = (0.0, 0.0, 0.0);
    for a in rotated {
        let u = 0.5 * (a[(l, l)] - a[(m, m)]);
        let c = a[(l, m)];
        uu += u * u;
        uc += u * c;
        cc += c * c;
    }
    // Major axis of [[uu, uc], [uc, cc]] sits at angle 2theta.
    0.25 * (2.0 * uc).atan2(uu - cc)
}

// B <- B G with col l' = c col_l + s col_m and col m' = -s col_l + c col_m.
fn rotate_pair_columns(a: &mut DMatrix<f64>, l: usize, m: usize, c: f64, s: f64) {
    for k in 0..a.nrows() {
        let x = a[(k, l)];
        let y = a[(k, m)];
        a[(k, l)] = c * x + s * y;
        a[(k, m)] = -s * x + c * y;
    }
}

// A <- G^T A.
fn rotate_pair_rows(a: &mut DMatrix<f64>, l: usize, m: usize, c: f64, s: f64) {
    for k in 0..a.ncols() {
        let x = a[(l, k)];
        let y = a[(m, k)];
        a[(l, k)] = c * x + s * y;
        a[(m, k)] = -s * x + c * y;
    }
}

/// `sum_i [log det diag(B^T psi_i B) - log det(B^T psi_i B)]`.
///
/// Non-negative by Hadamard's inequality and zero exactly when `B`
/// diagonalizes every member. Every member must be positive definite.
pub fn flury_criterion<M: Borrow<PsdMatrix>>(sample: &[M], b: &OrthonormalFrame) -> Result<f64> {
    let rotated = rotate_all(sample, b)?;
    let mut total = 0.0;
    for a in rotated {
        let chol = a.clone().cholesky().ok_or(Error::SingularMatrix)?;
        let l = chol.l_dirty();
        let mut log_det = 0.0;
        let mut log_diag = 0.0;
        for j in 0..a.nrows() {
            let ljj = l[(j, j)];
            if !(ljj > 0.0) || !(a[(j, j)] > 0.0) {
                return Err(Error::SingularMatrix);
            }
            log_det += 2.0 * ljj.ln();
            log_diag += a[(j, j)].ln();
        }
        total += log_diag - log_det;
    }
    Ok(total)
}

/// Largest principal angle between matched columns of two frames.
///
/// Columns are matched greedily on `|a_i . b_j|` (largest first) since a CPC
/// frame is identified only up to column order and sign.
pub fn frame_angle(a: &OrthonormalFrame, b: &OrthonormalFrame) -> Result<f64> {
    if a.dim() != b.dim() {
        return Err(Error::DimMismatch {
            expected: a.dim(),
            found: b.dim(),
        });
    }
    let p = a.dim();
    let dots = (a.as_matrix().transpose() * b.as_matrix()).abs();
    let mut used_a = vec![false; p];
    let mut used_b = vec![false; p];
    let mut worst: f64 = 0.0;
    for _ in 0..p {
        let mut best = (0, 0, -1.0);
        for i in (0..p).filter(|&i| !used_a[i]) {
            for j in (0..p).filter(|&j| !used_b[j]) {
                if dots[(i, j)] > best.2 {
                    best = (i, j, dots[(i, j)]);
                }
            }
        }
        used_a[best.0] = true;
        used_b[best.1] = true;
        worst = worst.max(best.2.min(1.0).acos());
    }
    Ok(worst)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::psd::{random_orthonormal, random_psd, sym_eigen};
    use crate::linalg::reconstruct;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn psi21() -> PsdMatrix {
        PsdMatrix::from_rows(&[vec![2.0, 1.0], vec![1.0, 2.0]]).unwrap()
    }

    fn common_family(p: usize, n: usize, seed: u64) -> (OrthonormalFrame, Vec<PsdMatrix>) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let u = random_orthonormal(p, &mut rng);
        let sample = (0..n)
            .map(|_| {
                let d: Vec<f64> = (0..p).map(|_| rng.random_range(0.5..5.0)).collect();
                PsdMatrix::from_trusted(reconstruct(&d, u.as_matrix()))
            })
            .collect();
        (u, sample)
    }

    #[test]
    fn objective_examples() {
        let diag = vec![
            PsdMatrix::from_diagonal(&[1.0, 2.0]).unwrap(),
            PsdMatrix::from_diagonal(&[3.0, 0.5]).unwrap(),
        ];
        assert_eq!(cpc_objective(&diag, &OrthonormalFrame::identity(2)).unwrap(), 0.0);

        let e = sym_eigen(&psi21()).unwrap();
        assert!(cpc_objective(&[psi21()], &e.vectors).unwrap() < 1e-28);

        let pair = vec![psi21(), PsdMatrix::from_diagonal(&[3.0, 1.0]).unwrap()];
        assert_eq!(cpc_objective(&pair, &OrthonormalFrame::identity(2)).unwrap(), 1.0);

        let empty: Vec<PsdMatrix> = vec![];
        assert!(matches!(
            cpc_objective(&empty, &OrthonormalFrame::identity(2)),
            Err(Error::EmptySample)
        ));
        let mixed = vec![psi21(), PsdMatrix::identity(3)];
        assert!(matches!(
            cpc_objective(&mixed, &OrthonormalFrame::identity(2)),
            Err(Error::DimMismatch { .. })
        ));
    }

    #[test]
    fn fg_single_matrix_is_pca() {
        let sol = fg_cpc_default(&[psi21()]).unwrap();
        let h = std::f64::consts::FRAC_1_SQRT_2;
        let expected = DMatrix::from_row_slice(2, 2, &[h, h, h, -h]);
        assert!((sol.frame.as_matrix() - expected).norm() < 1e-12);
        assert!(sol.stationarity_residual < 1e-8);
        assert!(sol.converged);
    }

    #[test]
    fn fg_recovers_exact_common_frame() {
        let (u, sample) = common_family(4, 12, 8);
        // Start far away so the sweeps do the work.
        let init = CpcInit::Frame(random_orthonormal(4, &mut ChaCha8Rng::seed_from_u64(99)));
        let sol = fg_cpc(&sample, &init, DEFAULT_FG_MAX_SWEEPS, DEFAULT_FG_TOL).unwrap();
        assert!(sol.converged);
        assert!(frame_angle(&sol.frame, &u).unwrap() < 1e-6);
        assert!(sol.objective < 1e-14);
    }

    #[test]
    fn fg_matches_angle_grid_on_two_matrices() {
        let a = PsdMatrix::from_rows(&[vec![3.0, 1.0], vec![1.0, 2.0]]).unwrap();
        let b = PsdMatrix::from_rows(&[vec![1.0, -0.4], vec![-0.4, 4.0]]).unwrap();
        let sample = vec![a, b];
        // Grid oracle: maximize total squared diagonal over rotation angles
        // in [0, pi/2) at 1e-4 resolution.
        let mut best = (0.0, f64::NEG_INFINITY);
        let steps = (std::f64::consts::FRAC_PI_2 / 1e-4) as usize;
        for k in 0..steps {
            let t = k as f64 * 1e-4;
            let r = OrthonormalFrame::rotation_2d(t);
            let score: f64 = sample
                .iter()
                .map(|m| {
                    let rot = linalg::congruence(m.as_matrix(), r.as_matrix());
                    rot[(0, 0)].powi(2) + rot[(1, 1)].powi(2)
                })
                .sum();
            if score > best.1 {
                best = (t, score);
            }
        }
        let sol = fg_cpc_default(&sample).unwrap();
        let oracle = OrthonormalFrame::rotation_2d(best.0);
        assert!(frame_angle(&sol.frame, &oracle).unwrap() < 1e-3);
    }

    #[test]
    fn fast_examples() {
        let sample = vec![
            PsdMatrix::from_diagonal(&[1.0, 2.0]).unwrap(),
            PsdMatrix::from_diagonal(&[3.0, 4.0]).unwrap(),
        ];
        let sol = fast_cpc(&sample).unwrap();
        assert_eq!(sol.frame.as_matrix(), &DMatrix::from_row_slice(2, 2, &[0.0, 1.0, 1.0, 0.0]));
        assert_eq!(sol.iterations, 1);

        let single = fast_cpc(&[psi21()]).unwrap();
        let e = sym_eigen(&psi21()).unwrap();
        assert!((single.frame.as_matrix() - e.vectors.as_matrix()).norm() < 1e-14);
    }

    #[test]
    fn stationarity_examples() {
        let e = sym_eigen(&psi21()).unwrap();
        assert!(stationarity_residual(&[psi21()], &e.vectors).unwrap() < 1e-14);

        let (u, sample) = common_family(4, 6, 2);
        assert!(stationarity_residual(&sample, &u).unwrap() < 1e-10);

        let mut rng = ChaCha8Rng::seed_from_u64(21);
        let sample: Vec<_> = (0..10).map(|_| random_psd(4, 0.0, 5.0, &mut rng).unwrap()).collect();
        let b = random_orthonormal(4, &mut rng);
        let before = stationarity_residual(&sample, &b).unwrap();
        assert!(before > 0.0);
        // One sweep always lowers the objective; the residual is a gradient
        // norm and only shrinks reliably over the full run.
        let one = fg_cpc(&sample, &CpcInit::Frame(b.clone()), 1, 0.0).unwrap();
        assert_eq!(one.iterations, 1);
        assert!(one.objective_trace[1] < one.objective_trace[0]);
        let full = fg_cpc(&sample, &CpcInit::Frame(b), DEFAULT_FG_MAX_SWEEPS, DEFAULT_FG_TOL).unwrap();
        assert!(full.stationarity_residual < before);
        assert!(full.stationarity_residual < DEFAULT_FG_TOL);
    }

    #[test]
    fn flury_examples() {
        let e = sym_eigen(&psi21()).unwrap();
        assert!(flury_criterion(&[psi21()], &e.vectors).unwrap().abs() < 1e-12);
        let v = flury_criterion(&[psi21()], &OrthonormalFrame::identity(2)).unwrap();
        assert!((v - (4f64.ln() - 3f64.ln())).abs() < 1e-14);
        assert!((v - 0.2877).abs() < 1e-4);
        let singular = PsdMatrix::from_diagonal(&[1.0, 0.0]).unwrap();
        assert!(matches!(
            flury_criterion(&[singular], &OrthonormalFrame::identity(2)),
            Err(Error::SingularMatrix)
        ));
    }

    #[test]
    fn flury_zero_iff_diagonalized() {
        let (u, sample) = common_family(3, 5, 17);
        assert!(flury_criterion(&sample, &u).unwrap().abs() < 1e-10);
        let other = random_orthonormal(3, &mut ChaCha8Rng::seed_from_u64(4));
        assert!(flury_criterion(&sample, &other).unwrap() > 1e-3);
    }

    #[test]
    fn fg_objective_non_increasing_and_stationary() {
        for seed in 0..20 {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let sample: Vec<_> = (0..15).map(|_| random_psd(5, 0.0, 10.0, &mut rng).unwrap()).collect();
            let init = CpcInit::Frame(random_orthonormal(5, &mut rng));
            let sol = fg_cpc(&sample, &init, DEFAULT_FG_MAX_SWEEPS, DEFAULT_FG_TOL).unwrap();
            for w in sol.objective_trace.windows(2) {
                assert!(w[1] <= w[0] * (1.0 + 1e-12) + 1e-15, "seed {seed}: {w:?}");
            }
            assert!(sol.converged, "seed {seed}");
            assert!(sol.stationarity_residual < 1e-7);
            let again = cpc_objective(&sample, &sol.frame).unwrap();
            assert!((again - sol.objective).abs() <= 1e-10 * sol.objective.max(1.0));
            assert!(sol.frame.deviation() < 1e-10);
            let flury = flury_criterion(&sample, &sol.frame).unwrap();
            assert!(flury >= -1e-12);
        }
    }

    #[test]
    fn fg_and_fast_agree_on_commuting_family() {
        let (_, sample) = common_family(5, 9, 31);
        let fg = fg_cpc_default(&sample).unwrap();
        let fast = fast_cpc(&sample).unwrap();
        assert!(frame_angle(&fg.frame, &fast.frame).unwrap() < 1e-6);
    }

    #[test]
    fn fg_is_equivariant() {
        let mut rng = ChaCha8Rng::seed_from_u64(77);
        let sample: Vec<_> = (0..8).map(|_| random_psd(4, 0.0, 6.0, &mut rng).unwrap()).collect();
        let q = random_orthonormal(4, &mut rng);
        let init = random_orthonormal(4, &mut rng);
        let rotated: Vec<_> = sample.iter().map(|m| m.conjugate(&q)).collect();
        let a = fg_cpc(&sample, &CpcInit::Frame(init.clone()), 200, 1e-10).unwrap();
        let b = fg_cpc(&rotated, &CpcInit::Frame(init.left_mul(&q)), 200, 1e-10).unwrap();
        assert!(frame_angle(&a.frame.left_mul(&q), &b.frame).unwrap() < 1e-6);
        assert!((a.objective - b.objective).abs() < 1e-9);
    }

    #[test]
    fn fg_reports_non_convergence() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let sample: Vec<_> = (0..10).map(|_| random_psd(5, 0.0, 10.0, &mut rng).unwrap()).collect();
        let init = CpcInit::Frame(random_orthonormal(5, &mut rng));
        let sol = fg_cpc(&sample, &init, 1, 1e-300).unwrap();
        assert!(!sol.converged);
        assert_eq!(sol.iterations, 1);
        assert_eq!(sol.objective_trace.len(), 2);
    }

    #[test]
    fn frame_angle_ignores_order_and_sign() {
        let mut rng = ChaCha8Rng::seed_from_u64(6);
        let f = random_orthonormal(4, &mut rng);
        let mut m = f.permute_columns(&[2, 0, 3, 1]).into_matrix();
        m.column_mut(1).neg_mut();
        let g = OrthonormalFrame::new(m).unwrap();
        assert!(frame_angle(&f, &g).unwrap() < 1e-7);
        let r = OrthonormalFrame::rotation_2d(0.3);
        assert!((frame_angle(&OrthonormalFrame::identity(2), &r).unwrap() - 0.3).abs() < 1e-12);
    }
}
