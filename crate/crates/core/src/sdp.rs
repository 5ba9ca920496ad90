//! Facially reduced semidefinite relaxation of the binary quadratic flow
//! model. The binary vector x is lifted to Y = [1; x][1; x]^T; flow
//! conservation becomes the single equation <B^T B, Y> = 0 with
//! B = [-b | A], which holds exactly when Y lives on the face V R V^T cut
//! out by an orthonormal basis V of ker(B). Conflicts zero out matrix
//! entries, and the arrow operator ties the diagonal to the first row.
//!
//! The module also handles exposing vectors: a nonzero PSD matrix
//! W = V^T (arrow*(z) - psi*(y)) V with <z, e0> <= 0 proves that every
//! feasible Y satisfies <W, V^T Y V> = 0, shrinking the feasible face.
//! Because W is only determined up to the arbitrary orthonormal choice of V,
//! verification aligns the candidate with the achievable operator subspace
//! over orthogonal rotations (eigenbasis matching plus a Givens-rotation
//! polish) before measuring the least-squares residual in (z, y).

use crate::linalg::{psd_project_dense, sym_eig_dense, SymMatrix};
use crate::model::FlowModel;
use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use thiserror::Error;

#[derive(Debug, Error)]
pub enum SdpError {
    #[error("exposing vector is {got}x{got} but the reduced face has dimension {want}")]
    CertificateDimension { got: usize, want: usize },
}

/// The relaxation data: lifted objective, kernel basis of the flow
/// constraints, and conflict positions in lifted (1-based) coordinates.
#[derive(Debug, Clone)]
pub struct SdpRelaxation {
    /// Lifted matrix dimension n + 1; index 0 is the homogenization row.
    pub dim: usize,
    /// Lifted objective [[kappa, c^T/2], [c/2, Q]].
    pub q_lifted: SymMatrix,
    /// Orthonormal basis of ker([-b | A]), shape (n+1) x r.
    pub v_basis: DMatrix<f64>,
    /// Conflict pairs (p, q), p < q, in lifted coordinates (arc e is 1 + e).
    pub conflicts: Vec<(usize, usize)>,
    /// The homogenized constraint matrix B = [-b | A] itself.
    pub b_mat: DMatrix<f64>,
}

impl SdpRelaxation {
    pub fn build(model: &FlowModel) -> Self {
        let n = model.num_arcs();
        let m = model.num_vertices;
        let mut b_mat = DMatrix::zeros(m, n + 1);
        for v in 0..m {
            b_mat[(v, 0)] = -model.b[v];
        }
        let a = model.incidence_dense();
        for e in 0..n {
            for v in 0..m {
                b_mat[(v, e + 1)] = a[(v, e)];
            }
        }
        let v_basis = nullspace_basis(&b_mat);

        let q_lifted = SymMatrix::from_fn(n + 1, |i, j| match (i, j) {
            (0, 0) => model.kappa,
            (0, f) => 0.5 * model.c[f - 1],
            (e, f) => model.q.get(e - 1, f - 1),
        });

        let conflicts = model
            .conflicts
            .iter()
            .map(|&(p, q)| (p + 1, q + 1))
            .collect();

        Self {
            dim: n + 1,
            q_lifted,
            v_basis,
            conflicts,
            b_mat,
        }
    }

    /// Dimension of the reduced face (rank of the kernel basis).
    pub fn r(&self) -> usize {
        self.v_basis.ncols()
    }

    /// Aggregated flow constraint matrix M_A = B^T B; every feasible lifted
    /// Y satisfies <M_A, Y> = 0.
    pub fn m_a(&self) -> SymMatrix {
        SymMatrix::new(self.b_mat.transpose() * &self.b_mat)
            .expect("Gram matrix is square and finite")
    }

    /// Checks a candidate exposing vector. The candidate is aligned with the
    /// achievable subspace over orthogonal rotations of the reduced face
    /// before the least-squares residual in (z, y) is measured; `z_e0` and
    /// the recovered multipliers come from the aligned projection.
    pub fn verify_exposing_vector(
        &self,
        w: &SymMatrix,
        opts: &CertOptions,
    ) -> Result<SlaterCertificate, SdpError> {
        let r = self.r();
        if w.dim() != r {
            return Err(SdpError::CertificateDimension {
                got: w.dim(),
                want: r,
            });
        }
        if r == 0 {
            return Ok(SlaterCertificate {
                w: w.clone(),
                z: Vec::new(),
                y: Vec::new(),
                residual: 0.0,
                z_e0: 0.0,
                min_eig_w: 0.0,
                valid: false,
            });
        }
        let space = CertSpace::new(self);
        Ok(self.verify_in_space(&space, w, opts))
    }

    fn verify_in_space(
        &self,
        space: &CertSpace,
        w: &SymMatrix,
        opts: &CertOptions,
    ) -> SlaterCertificate {
        let r = self.r();
        let w_norm = w.norm_fro();
        let min_eig_w = if r == 0 {
            0.0
        } else {
            sym_eig_dense(w.as_dmatrix()).values[0]
        };
        let target = opts.affine_tol * (1.0 + w_norm);

        let mut best_o = DMatrix::identity(r, r);
        let mut best_resid = space.residual(w.as_dmatrix(), &best_o);
        if opts.align_restarts > 0 && best_resid > target {
            let mut rng = ChaCha8Rng::seed_from_u64(opts.seed);
            'starts: for start in 0..=opts.align_restarts {
                let mut o = if start == 0 {
                    DMatrix::identity(r, r)
                } else {
                    random_orthogonal(r, &mut rng)
                };
                procrustes_align(space, w.as_dmatrix(), &mut o, opts.align_iters);
                givens_polish(space, w.as_dmatrix(), &mut o, opts.polish_sweeps);
                let resid = space.residual(w.as_dmatrix(), &o);
                if resid < best_resid {
                    best_resid = resid;
                    best_o = o;
                    if best_resid <= target {
                        break 'starts;
                    }
                }
            }
        }

        let rotated = &best_o * w.as_dmatrix() * best_o.transpose();
        let projected = space.project(&svec(&rotated));
        let (z, y) = space.recover(&projected);
        let z_e0 = z.first().copied().unwrap_or(0.0);
        let residual = (svec(&rotated) - &projected).norm();
        let valid = w_norm > opts.nonzero_tol
            && residual <= target
            && min_eig_w >= -opts.eig_floor
            && z_e0 <= opts.z0_tol;
        SlaterCertificate {
            w: w.clone(),
            z,
            y,
            residual,
            z_e0,
            min_eig_w,
            valid,
        }
    }

    /// Searches for an exposing vector by alternating projection between the
    /// achievable affine set (with <z, e0> <= 0) and the PSD cone,
    /// renormalizing to Frobenius norm one each sweep so the iteration
    /// cannot collapse to zero. Returns the first candidate within affine
    /// residual `tol`, scaled by (1 + ||W||_F), that passes the remaining
    /// default checks, or `None`. Certificates are typically singular, so the
    /// affine set meets the cone tangentially and the iteration converges
    /// sublinearly; pair generous iteration caps with the tolerance actually
    /// required rather than demanding machine precision.
    pub fn find_exposing_vector(&self, max_iters: usize, tol: f64) -> Option<SlaterCertificate> {
        let r = self.r();
        if r == 0 {
            return None;
        }
        let space = CertSpace::new(self);
        let opts = CertOptions {
            affine_tol: tol,
            align_restarts: 0,
            ..CertOptions::default()
        };
        let mut rng = ChaCha8Rng::seed_from_u64(0x5eed);
        let mut w = DMatrix::identity(r, r).unscale((r as f64).sqrt());
        for iter in 0..max_iters {
            let wa = unsvec(&space.project(&svec(&w)), r);
            let wp = psd_project_dense(&wa);
            let norm = wp.norm();
            if norm < 1e-12 {
                // The iterate collapsed onto the zero matrix; restart from a
                // fresh random PSD seed.
                let g = DMatrix::<f64>::from_fn(r, r, |_, _| rng.gen_range(-1.0..1.0));
                let seed = &g * g.transpose();
                w = seed.unscale(seed.norm().max(1e-12));
                continue;
            }
            w = wp.unscale(norm);
            if iter % 8 == 7 || iter + 1 == max_iters {
                let resid = (svec(&w) - space.project(&svec(&w))).norm();
                if resid <= tol * (1.0 + w.norm()) {
                    let cert = self.verify_in_space(
                        &space,
                        &SymMatrix::new(w.clone()).expect("iterate is symmetric"),
                        &opts,
                    );
                    if cert.valid {
                        return Some(cert);
                    }
                }
            }
        }
        None
    }
}

/// A verified (or rejected) exposing-vector certificate: the candidate W,
/// the recovered multipliers, and the measured violations.
#[derive(Debug, Clone)]
pub struct SlaterCertificate {
    pub w: SymMatrix,
    pub z: Vec<f64>,
    pub y: Vec<f64>,
    pub residual: f64,
    pub z_e0: f64,
    pub min_eig_w: f64,
    pub valid: bool,
}

/// Tolerances and effort knobs for certificate verification.
#[derive(Debug, Clone)]
pub struct CertOptions {
    /// Affine residual bound, scaled by (1 + ||W||_F).
    pub affine_tol: f64,
    /// Eigenvalues of W may dip this far below zero.
    pub eig_floor: f64,
    /// Upper bound on <z, e0>.
    pub z0_tol: f64,
    /// Candidates with Frobenius norm at or below this are rejected as zero.
    pub nonzero_tol: f64,
    /// Random restarts for the orthogonal alignment (0 = identity only).
    pub align_restarts: usize,
    /// Eigenbasis-matching iterations per restart.
    pub align_iters: usize,
    /// Givens coordinate-descent sweeps after each alignment.
    pub polish_sweeps: usize,
    pub seed: u64,
}

impl Default for CertOptions {
    fn default() -> Self {
        Self {
            affine_tol: 1e-6,
            eig_floor: 1e-8,
            z0_tol: 1e-8,
            nonzero_tol: 1e-8,
            align_restarts: 8,
            align_iters: 200,
            polish_sweeps: 48,
            seed: 0x51a7e5,
        }
    }
}

/// arrow(Y): component 0 is Y_00, component p is Y_pp - (Y_0p + Y_p0) / 2.
/// Feasible lifted matrices satisfy arrow(Y) = e0.
pub fn arrow(y: &DMatrix<f64>) -> DVector<f64> {
    let n1 = y.nrows();
    let mut out = DVector::zeros(n1);
    out[0] = y[(0, 0)];
    for p in 1..n1 {
        out[p] = y[(p, p)] - 0.5 * (y[(0, p)] + y[(p, 0)]);
    }
    out
}

/// Adjoint of [`arrow`]: <arrow_star(z), Y> = <z, arrow(Y)> for all Y.
pub fn arrow_star(z: &[f64]) -> DMatrix<f64> {
    let n1 = z.len();
    let mut out = DMatrix::zeros(n1, n1);
    out[(0, 0)] = z[0];
    for p in 1..n1 {
        out[(p, p)] = z[p];
        out[(0, p)] = -0.5 * z[p];
        out[(p, 0)] = -0.5 * z[p];
    }
    out
}

/// psi(Y): the symmetrized conflict entries Y_pq + Y_qp, one per conflict.
pub fn psi(y: &DMatrix<f64>, conflicts: &[(usize, usize)]) -> Vec<f64> {
    conflicts
        .iter()
        .map(|&(p, q)| y[(p, q)] + y[(q, p)])
        .collect()
}

/// Adjoint of [`psi`]: places y_c at the two entries of each conflict pair.
pub fn psi_star(y: &[f64], dim: usize, conflicts: &[(usize, usize)]) -> DMatrix<f64> {
    let mut out = DMatrix::zeros(dim, dim);
    for (&(p, q), &v) in conflicts.iter().zip(y) {
        out[(p, q)] += v;
        out[(q, p)] += v;
    }
    out
}

/// Orthonormal basis of the null space of `b`, computed from the spectrum of
/// the Gram matrix b^T b: eigenvectors whose eigenvalue is numerically zero
/// relative to the largest one. The noise floor of a symmetric
/// eigendecomposition is on the order of eps times the largest eigenvalue,
/// so the cutoff scales linearly with lambda_max.
pub fn nullspace_basis(b: &DMatrix<f64>) -> DMatrix<f64> {
    let n = b.ncols();
    let gram = SymMatrix::new(b.transpose() * b).expect("Gram matrix is square and finite");
    let eig = sym_eig_dense(gram.as_dmatrix());
    let lam_max = eig.values[n - 1].max(0.0);
    let lam_tol = (b.nrows().max(n) as f64 * f64::EPSILON * lam_max).max(1e-30);
    let r = eig.values.iter().take_while(|&&l| l <= lam_tol).count();
    let mut v = DMatrix::zeros(n, r);
    for i in 0..r {
        v.set_column(i, &eig.vectors.column(i));
    }
    v
}

// --- symmetric vectorization -------------------------------------------------

pub(crate) fn svec_dim(r: usize) -> usize {
    r * (r + 1) / 2
}

/// Isometric vectorization of a symmetric matrix: diagonal entries verbatim,
/// off-diagonal entries scaled by sqrt(2), upper triangle in row-major order.
pub(crate) fn svec(m: &DMatrix<f64>) -> DVector<f64> {
    let r = m.nrows();
    let mut out = DVector::zeros(svec_dim(r));
    let sq2 = std::f64::consts::SQRT_2;
    let mut k = 0;
    for i in 0..r {
        out[k] = m[(i, i)];
        k += 1;
        for j in (i + 1)..r {
            out[k] = sq2 * 0.5 * (m[(i, j)] + m[(j, i)]);
            k += 1;
        }
    }
    out
}

pub(crate) fn unsvec(t: &DVector<f64>, r: usize) -> DMatrix<f64> {
    let mut out = DMatrix::zeros(r, r);
    let inv_sq2 = 1.0 / std::f64::consts::SQRT_2;
    let mut k = 0;
    for i in 0..r {
        out[(i, i)] = t[k];
        k += 1;
        for j in (i + 1)..r {
            out[(i, j)] = t[k] * inv_sq2;
            out[(j, i)] = t[k] * inv_sq2;
            k += 1;
        }
    }
    out
}

// --- achievable certificate subspace -----------------------------------------

/// The set of reduced-face matrices of the form
/// V^T (arrow_star(z) - psi_star(y)) V, in svec coordinates: an explicit
/// generator matrix, an orthonormal basis of its range, the linear
/// functional recovering <z, e0> from a point of the range, and the
/// pseudo-inverse for multiplier recovery.
struct CertSpace {
    r: usize,
    /// Lifted dimension n + 1: the z block of a recovered multiplier vector.
    n1: usize,
    u_range: DMatrix<f64>,
    pinv: DMatrix<f64>,
    /// d-vector c with c . t = z_0 of the minimum-norm preimage of t.
    z0_fn: DVector<f64>,
    /// Component of `z0_fn` inside the range, and its squared norm.
    z0_in_range: DVector<f64>,
    z0_gram: f64,
}

impl CertSpace {
    fn new(sdp: &SdpRelaxation) -> Self {
        let r = sdp.r();
        let n1 = sdp.dim;
        let d = svec_dim(r);
        let cols = n1 + sdp.conflicts.len();
        let v = &sdp.v_basis;

        // Column for generator G: svec(V^T G V). Using rows of V keeps each
        // column O(r^2): (V^T E_ab V)_{ij} = V_{a,i} V_{b,j}.
        let row = |a: usize| v.row(a).transpose();
        let mut op = DMatrix::zeros(d, cols);
        for p in 0..n1 {
            // arrow_star(e_0) = E_00; arrow_star(e_p) = E_pp - E_0p/2 - E_p0/2.
            let col = if p == 0 {
                let v0 = row(0);
                svec(&(&v0 * v0.transpose()))
            } else {
                let vp = row(p);
                let v0 = row(0);
                let m =
                    &vp * vp.transpose() - (&v0 * vp.transpose() + &vp * v0.transpose()).scale(0.5);
                svec(&m)
            };
            op.set_column(p, &col);
        }
        for (c, &(p, q)) in sdp.conflicts.iter().enumerate() {
            let vp = row(p);
            let vq = row(q);
            // -psi_star(e_c) contributes -(E_pq + E_qp).
            let m = -(&vp * vq.transpose() + &vq * vp.transpose());
            op.set_column(n1 + c, &svec(&m));
        }

        let svd = op.clone().svd(true, true);
        let sigma_max = svd.singular_values.iter().cloned().fold(0.0f64, f64::max);
        let tol = d.max(cols) as f64 * f64::EPSILON * sigma_max;
        let rank = svd
            .singular_values
            .iter()
            .filter(|&&s| s > tol.max(1e-13))
            .count();
        let u_full = svd.u.as_ref().expect("SVD with u requested");
        let mut u_range = DMatrix::zeros(d, rank);
        // nalgebra sorts singular values in descending order.
        for i in 0..rank {
            u_range.set_column(i, &u_full.column(i));
        }
        let pinv = svd
            .pseudo_inverse(tol.max(1e-13))
            .expect("pseudo-inverse of a finite matrix");
        let z0_fn = pinv.row(0).transpose();
        let z0_in_range = &u_range * (u_range.transpose() * &z0_fn);
        let z0_gram = z0_in_range.norm_squared();
        Self {
            r,
            n1,
            u_range,
            pinv,
            z0_fn,
            z0_in_range,
            z0_gram,
        }
    }

    /// Orthogonal projection of a svec point onto the range of the generator
    /// matrix intersected with the half-space <z, e0> <= 0 (enforced as the
    /// hyperplane z_0 = 0 whenever the unconstrained projection violates it).
    fn project(&self, t: &DVector<f64>) -> DVector<f64> {
        let mut ta = &self.u_range * (self.u_range.transpose() * t);
        if self.z0_gram > 1e-20 {
            let z0 = self.z0_fn.dot(&ta);
            if z0 > 0.0 {
                ta -= self.z0_in_range.scale(z0 / self.z0_gram);
            }
        }
        ta
    }

    /// Multipliers (z, y) of the minimum-norm preimage of an achievable
    /// point: the first n + 1 coordinates are z, the rest y.
    fn recover(&self, ta: &DVector<f64>) -> (Vec<f64>, Vec<f64>) {
        let p = &self.pinv * ta;
        let z = p.iter().take(self.n1).copied().collect();
        let y = p.iter().skip(self.n1).copied().collect();
        (z, y)
    }

    /// Distance from the rotated candidate O W O^T to the achievable set.
    fn residual(&self, w: &DMatrix<f64>, o: &DMatrix<f64>) -> f64 {
        let rotated = o * w * o.transpose();
        let t = svec(&rotated);
        (&t - self.project(&t)).norm()
    }
}

/// Alternating eigenbasis matching: project the rotated candidate onto the
/// achievable set, then re-align the candidate's eigenvectors with the
/// projection's.
fn procrustes_align(space: &CertSpace, w: &DMatrix<f64>, o: &mut DMatrix<f64>, iters: usize) {
    let eig_w = sym_eig_dense(w);
    let mut last = f64::INFINITY;
    for _ in 0..iters {
        let rotated = &*o * w * o.transpose();
        let t = svec(&rotated);
        let ta = space.project(&t);
        let resid = (&t - &ta).norm();
        if resid >= last - 1e-15 {
            break;
        }
        last = resid;
        let w_hat = unsvec(&ta, space.r);
        let eig_hat = sym_eig_dense(&w_hat);
        *o = &eig_hat.vectors * eig_w.vectors.transpose();
    }
}

/// Coordinate descent over Givens rotations: for each plane (i, j), a
/// golden-section search over the rotation angle that most reduces the
/// distance to the achievable set.
fn givens_polish(space: &CertSpace, w: &DMatrix<f64>, o: &mut DMatrix<f64>, sweeps: usize) {
    let r = space.r;
    if r < 2 {
        return;
    }
    let golden = 0.5 * (3.0 - 5.0f64.sqrt());
    let mut best = space.residual(w, o);
    for _ in 0..sweeps {
        let before_sweep = best;
        for i in 0..r {
            for j in (i + 1)..r {
                let eval = |theta: f64, o: &DMatrix<f64>| -> f64 {
                    let mut rotated = o.clone();
                    apply_givens(&mut rotated, i, j, theta);
                    space.residual(w, &rotated)
                };
                // Golden-section search on [-0.5, 0.5].
                let (mut lo, mut hi) = (-0.5f64, 0.5f64);
                let mut m1 = lo + golden * (hi - lo);
                let mut m2 = hi - golden * (hi - lo);
                let mut f1 = eval(m1, o);
                let mut f2 = eval(m2, o);
                for _ in 0..40 {
                    if f1 <= f2 {
                        hi = m2;
                        m2 = m1;
                        f2 = f1;
                        m1 = lo + golden * (hi - lo);
                        f1 = eval(m1, o);
                    } else {
                        lo = m1;
                        m1 = m2;
                        f1 = f2;
                        m2 = hi - golden * (hi - lo);
                        f2 = eval(m2, o);
                    }
                }
                let (theta, val) = if f1 <= f2 { (m1, f1) } else { (m2, f2) };
                if val < best - 1e-16 {
                    apply_givens(o, i, j, theta);
                    best = val;
                }
            }
        }
        if before_sweep - best <= 1e-15 {
            break;
        }
    }
}

/// Left-multiplies `o` by the Givens rotation in plane (i, j).
fn apply_givens(o: &mut DMatrix<f64>, i: usize, j: usize, theta: f64) {
    let (s, c) = theta.sin_cos();
    for col in 0..o.ncols() {
        let a = o[(i, col)];
        let b = o[(j, col)];
        o[(i, col)] = c * a - s * b;
        o[(j, col)] = s * a + c * b;
    }
}

/// Random orthogonal matrix from the QR factorization of a Gaussian sample.
fn random_orthogonal(r: usize, rng: &mut ChaCha8Rng) -> DMatrix<f64> {
    loop {
        let g = DMatrix::from_fn(r, r, |_, _| {
            // Box-Muller keeps the dependency surface small.
            let u1: f64 = rng.gen_range(1e-12..1.0);
            let u2: f64 = rng.gen_range(0.0..1.0);
            (-2.0 * u1.ln()).sqrt() * (2.0 * std::f64::consts::PI * u2).cos()
        });
        let qr = g.qr();
        let q = qr.q();
        if q.ncols() == r {
            return q;
        }
    }
}
