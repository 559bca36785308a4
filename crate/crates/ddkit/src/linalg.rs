//! Small dense complex linear algebra helpers shared by the simulation modules.

use nalgebra::{DMatrix, DVector, SymmetricEigen};
use num_complex::Complex64;

pub type C64 = Complex64;
pub type Mat = DMatrix<C64>;

pub const ZERO: C64 = C64::new(0.0, 0.0);
pub const ONE: C64 = C64::new(1.0, 0.0);
pub const I: C64 = C64::new(0.0, 1.0);

pub fn c(re: f64, im: f64) -> C64 {
    C64::new(re, im)
}

pub fn eye(n: usize) -> Mat {
    Mat::identity(n, n)
}

/// Pauli matrix by index: 0 = I, 1 = X, 2 = Y, 3 = Z.
pub fn pauli(k: usize) -> Mat {
    match k {
        0 => eye(2),
        1 => Mat::from_row_slice(2, 2, &[ZERO, ONE, ONE, ZERO]),
        2 => Mat::from_row_slice(2, 2, &[ZERO, -I, I, ZERO]),
        3 => Mat::from_row_slice(2, 2, &[ONE, ZERO, ZERO, -ONE]),
        _ => panic!("pauli index {k} out of range"),
    }
}

pub fn kron(a: &Mat, b: &Mat) -> Mat {
    a.kronecker(b)
}

pub fn dagger(a: &Mat) -> Mat {
    a.adjoint()
}

/// Largest singular value.
pub fn op_norm(a: &Mat) -> f64 {
    if a.nrows() == 0 || a.ncols() == 0 {
        return 0.0;
    }
    a.clone()
        .svd(false, false)
        .singular_values
        .iter()
        .cloned()
        .fold(0.0, f64::max)
}

pub fn hermitian_part(a: &Mat) -> Mat {
    (a + a.adjoint()) * c(0.5, 0.0)
}

pub fn is_hermitian(a: &Mat, tol: f64) -> bool {
    op_norm(&(a - a.adjoint())) <= tol
}

pub fn unitarity_defect(u: &Mat) -> f64 {
    op_norm(&(u.adjoint() * u - eye(u.nrows())))
}

/// min over θ of ‖a − e^{iθ} b‖ with θ = arg tr(b† a).
pub fn phase_aligned_distance(a: &Mat, b: &Mat) -> f64 {
    let tr = (b.adjoint() * a).trace();
    let phase = if tr.norm() > 0.0 { tr / tr.norm() } else { ONE };
    op_norm(&(a - b * phase))
}

/// Spectral decomposition of a Hermitian matrix (the input is symmetrized first).
pub fn eigh(h: &Mat) -> (DVector<f64>, Mat) {
    let e = SymmetricEigen::new(hermitian_part(h));
    (e.eigenvalues, e.eigenvectors)
}

/// exp(−i t H) for Hermitian H.
pub fn expm_hermitian(h: &Mat, t: f64) -> Mat {
    let (vals, vecs) = eigh(h);
    unitary_from_eig(&vals, &vecs, t)
}

pub fn unitary_from_eig(vals: &DVector<f64>, vecs: &Mat, t: f64) -> Mat {
    let n = vals.len();
    let mut scaled = vecs.clone();
    for j in 0..n {
        let ph = C64::from_polar(1.0, -vals[j] * t);
        for i in 0..n {
            scaled[(i, j)] *= ph;
        }
    }
    scaled * vecs.adjoint()
}

/// Tr_B of an operator on (system dim ds) ⊗ (bath dim db).
pub fn partial_trace_bath(a: &Mat, ds: usize, db: usize) -> Mat {
    let mut out = Mat::zeros(ds, ds);
    for i in 0..ds {
        for j in 0..ds {
            let mut s = ZERO;
            for k in 0..db {
                s += a[(i * db + k, j * db + k)];
            }
            out[(i, j)] = s;
        }
    }
    out
}

/// Tr_S of an operator on (system dim ds) ⊗ (bath dim db).
pub fn partial_trace_system(a: &Mat, ds: usize, db: usize) -> Mat {
    let mut out = Mat::zeros(db, db);
    for i in 0..ds {
        out += a.view((i * db, i * db), (db, db));
    }
    out
}

/// Unitary factor of the polar decomposition, W V† from the SVD W Σ V†.
pub fn polar_unitary(m: &Mat) -> Mat {
    let n = m.nrows();
    if op_norm(m) < 1e-300 {
        return eye(n);
    }
    let svd = m.clone().svd(true, true);
    let u = svd.u.expect("svd u");
    let vt = svd.v_t.expect("svd v_t");
    u * vt
}

/// Decompose an operator on 2 ⊗ db as Σ_α σ^α ⊗ B^α with B^α = ½ Tr_S[(σ^α ⊗ I) a].
pub fn pauli_components(a: &Mat, db: usize) -> [Mat; 4] {
    let idb = eye(db);
    std::array::from_fn(|k| partial_trace_system(&(kron(&pauli(k), &idb) * a), 2, db) * c(0.5, 0.0))
}

/// Integer power by repeated squaring.
pub fn mat_pow(a: &Mat, mut n: u64) -> Mat {
    let mut result = eye(a.nrows());
    let mut base = a.clone();
    while n > 0 {
        if n & 1 == 1 {
            result = &base * &result;
        }
        n >>= 1;
        if n > 0 {
            base = &base * &base;
        }
    }
    result
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn pauli_algebra() {
        let (x, y, z) = (pauli(1), pauli(2), pauli(3));
        assert!(op_norm(&(&x * &y - &z * I)) < 1e-15);
        assert!(op_norm(&(&x * &x - eye(2))) < 1e-15);
    }

    #[test]
    fn expm_of_pauli() {
        let u = expm_hermitian(&pauli(1), std::f64::consts::FRAC_PI_2);
        assert!(op_norm(&(u + pauli(1) * I)) < 1e-14);
    }

    #[test]
    fn phase_alignment_ignores_global_phase() {
        let u = expm_hermitian(&pauli(2), 0.3);
        let v = &u * C64::from_polar(1.0, 1.1);
        assert!(phase_aligned_distance(&u, &v) < 1e-14);
    }

    #[test]
    fn partial_traces_of_product() {
        let a = pauli(1) + pauli(3);
        let b = pauli(2) * c(2.0, 0.0) + eye(2);
        let ab = kron(&a, &b);
        assert!(op_norm(&(partial_trace_bath(&ab, 2, 2) - &a * b.trace())) < 1e-14);
        assert!(op_norm(&(partial_trace_system(&ab, 2, 2) - &b * a.trace())) < 1e-14);
    }

    #[test]
    fn pauli_components_roundtrip() {
        let db = 2;
        let mut h = Mat::zeros(4, 4);
        for k in 0..4 {
            h += kron(&pauli(k), &(pauli((k + 1) % 4) * c(k as f64 + 0.5, 0.0)));
        }
        let comps = pauli_components(&h, db);
        let mut back = Mat::zeros(4, 4);
        for k in 0..4 {
            back += kron(&pauli(k), &comps[k]);
        }
        assert!(op_norm(&(back - h)) < 1e-14);
    }

    #[test]
    fn power_matches_repeated_product() {
        let u = expm_hermitian(&(pauli(1) + pauli(3) * c(0.4, 0.0)), 0.7);
        let mut p = eye(2);
        for _ in 0..13 {
            p = &u * &p;
        }
        assert!(op_norm(&(mat_pow(&u, 13) - p)) < 1e-13);
    }
}
