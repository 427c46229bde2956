//! Small symmetric matrices (1x1 and 2x2) with a deterministic closed-form
//! eigendecomposition.
//!
//! Eigenvalues are returned in ascending order; each eigenvector is
//! normalized so that its first nonzero component is positive. This fixes the
//! decomposition (hence everything built from it) across runs and platforms.

/// Symmetric matrix of dimension 1 or 2, stored as [m11, m12, m22].
/// For `dim == 1` only `m11` is meaningful.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SymMat {
    pub dim: usize,
    pub m: [f64; 3],
}

/// Eigendecomposition of a [`SymMat`]. `values[i]`/`vectors[i]` are paired;
/// for `dim == 1` only index 0 is meaningful (index 1 is zero-padded and must
/// be ignored by consumers, which all iterate `0..dim`).
#[derive(Debug, Clone, Copy)]
pub struct Eigen {
    pub dim: usize,
    pub values: [f64; 2],
    pub vectors: [[f64; 2]; 2],
}

impl SymMat {
    pub fn zero(dim: usize) -> Self {
        debug_assert!(dim == 1 || dim == 2);
        SymMat { dim, m: [0.0; 3] }
    }

    pub fn identity(dim: usize) -> Self {
        let mut s = Self::zero(dim);
        s.m[0] = 1.0;
        if dim == 2 {
            s.m[2] = 1.0;
        }
        s
    }

    pub fn scalar(v: f64) -> Self {
        SymMat { dim: 1, m: [v, 0.0, 0.0] }
    }

    pub fn new2(m11: f64, m12: f64, m22: f64) -> Self {
        SymMat { dim: 2, m: [m11, m12, m22] }
    }

    pub fn diag(dim: usize, d0: f64, d1: f64) -> Self {
        match dim {
            1 => Self::scalar(d0),
            _ => Self::new2(d0, 0.0, d1),
        }
    }

    /// Scaled identity `v * I`.
    pub fn iso(dim: usize, v: f64) -> Self {
        Self::diag(dim, v, v)
    }

    /// R(theta) diag(d0, d1) R(theta)^T (2x2 only).
    pub fn from_rotation(theta: f64, d0: f64, d1: f64) -> Self {
        let (s, c) = theta.sin_cos();
        let m11 = d0 * c * c + d1 * s * s;
        let m22 = d0 * s * s + d1 * c * c;
        let m12 = (d0 - d1) * s * c;
        Self::new2(m11, m12, m22)
    }

    pub fn trace(&self) -> f64 {
        if self.dim == 1 {
            self.m[0]
        } else {
            self.m[0] + self.m[2]
        }
    }

    /// Frobenius pairing `sum_ij a_ij b_ij`.
    pub fn frob(&self, other: &SymMat) -> f64 {
        debug_assert_eq!(self.dim, other.dim);
        if self.dim == 1 {
            self.m[0] * other.m[0]
        } else {
            self.m[0] * other.m[0] + 2.0 * self.m[1] * other.m[1] + self.m[2] * other.m[2]
        }
    }

    pub fn add(&self, other: &SymMat) -> SymMat {
        debug_assert_eq!(self.dim, other.dim);
        SymMat {
            dim: self.dim,
            m: [
                self.m[0] + other.m[0],
                self.m[1] + other.m[1],
                self.m[2] + other.m[2],
            ],
        }
    }

    pub fn scale(&self, s: f64) -> SymMat {
        SymMat {
            dim: self.dim,
            m: [self.m[0] * s, self.m[1] * s, self.m[2] * s],
        }
    }

    /// `self += w * other`, in place (hot path of the quadrature sums).
    #[inline]
    pub fn add_scaled(&mut self, other: &SymMat, w: f64) {
        self.m[0] += w * other.m[0];
        self.m[1] += w * other.m[1];
        self.m[2] += w * other.m[2];
    }

    /// Deterministic eigendecomposition (ascending eigenvalues, sign-fixed
    /// eigenvectors).
    pub fn eigen(&self) -> Eigen {
        if self.dim == 1 {
            return Eigen {
                dim: 1,
                values: [self.m[0], 0.0],
                vectors: [[1.0, 0.0], [0.0, 1.0]],
            };
        }
        let (a, b, c) = (self.m[0], self.m[1], self.m[2]);
        if b == 0.0 {
            // Already diagonal; order the axis eigenpairs.
            return if a <= c {
                Eigen {
                    dim: 2,
                    values: [a, c],
                    vectors: [[1.0, 0.0], [0.0, 1.0]],
                }
            } else {
                Eigen {
                    dim: 2,
                    values: [c, a],
                    vectors: [[0.0, 1.0], [1.0, 0.0]],
                }
            };
        }
        let mean = 0.5 * (a + c);
        let delta = 0.5 * (a - c);
        let r = delta.hypot(b); // > 0 since b != 0
        let e_lo = mean - r;
        let e_hi = mean + r;
        // Eigenvector for e_hi from whichever matrix row is better conditioned.
        let d_hi = if (e_hi - a).abs() >= (e_hi - c).abs() {
            [b, e_hi - a]
        } else {
            [e_hi - c, b]
        };
        let n = d_hi[0].hypot(d_hi[1]);
        let mut v_hi = [d_hi[0] / n, d_hi[1] / n];
        sign_fix(&mut v_hi);
        let mut v_lo = [-v_hi[1], v_hi[0]];
        sign_fix(&mut v_lo);
        Eigen {
            dim: 2,
            values: [e_lo, e_hi],
            vectors: [v_lo, v_hi],
        }
    }

    /// Sum of absolute eigenvalues.
    pub fn nuclear_norm(&self) -> f64 {
        let e = self.eigen();
        let mut acc = 0.0;
        for i in 0..self.dim {
            acc += e.values[i].abs();
        }
        acc
    }

    /// Largest absolute entry (cheap magnitude gauge for tolerances).
    pub fn max_abs(&self) -> f64 {
        if self.dim == 1 {
            self.m[0].abs()
        } else {
            self.m[0].abs().max(self.m[1].abs()).max(self.m[2].abs())
        }
    }
}

impl Eigen {
    /// Reassemble `sum_i coeff[i] v_i v_i^T` over the meaningful eigenpairs.
    pub fn reconstruct(&self, coeffs: [f64; 2]) -> SymMat {
        if self.dim == 1 {
            return SymMat::scalar(coeffs[0]);
        }
        let mut m = [0.0; 3];
        for i in 0..2 {
            let v = self.vectors[i];
            m[0] += coeffs[i] * v[0] * v[0];
            m[1] += coeffs[i] * v[0] * v[1];
            m[2] += coeffs[i] * v[1] * v[1];
        }
        SymMat { dim: 2, m }
    }
}

fn sign_fix(v: &mut [f64; 2]) {
    if v[0] < 0.0 || (v[0] == 0.0 && v[1] < 0.0) {
        v[0] = -v[0];
        v[1] = -v[1];
    }
}
