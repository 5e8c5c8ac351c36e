use nalgebra::{DMatrix, DVector};

use super::{FeederError, FeederModel};

/// Linear operators of the branch-flow model on an ordered feeder.
///
/// With branch `j` identified with its child node `j`:
///
/// ```text
/// P = C p - D_R l        Q = C q - D_X l
/// V = v0 1 + M_p p + M_q q - H l
/// ```
///
/// Matrix index `i` refers to internal node `i + 1`.
#[derive(Debug, Clone)]
pub struct SensitivityMatrices {
    pub v0: f64,
    /// `(n+1) x n` node-branch incidence matrix, row 0 is the substation.
    pub b: DMatrix<f64>,
    pub a: DMatrix<f64>,
    pub c: DMatrix<f64>,
    pub d_r: DMatrix<f64>,
    pub d_x: DMatrix<f64>,
    pub m_p: DMatrix<f64>,
    pub m_q: DMatrix<f64>,
    pub h: DMatrix<f64>,
    pub z2: DMatrix<f64>,
    pub r: DVector<f64>,
    pub x: DVector<f64>,
}

impl SensitivityMatrices {
    pub fn build(model: &FeederModel) -> Result<Self, FeederError> {
        if !model.is_ordered() {
            return Err(FeederError::NotOrdered);
        }
        let n = model.n();
        let mut b = DMatrix::zeros(n + 1, n);
        for (k, br) in model.branches().iter().enumerate() {
            b[(br.from, k)] = 1.0;
            b[(br.to, k)] = 1.0;
        }
        // A = [0 I] B - I
        let mut a = b.rows(1, n).into_owned();
        for i in 0..n {
            a[(i, i)] -= 1.0;
        }
        for i in 0..n {
            for j in 0..=i {
                if a[(i, j)] != 0.0 {
                    return Err(FeederError::SingularOrdering(j));
                }
            }
        }

        let c = unit_upper_inverse(&a);
        let r = DVector::from_iterator(n, model.branches().iter().map(|b| b.r));
        let x = DVector::from_iterator(n, model.branches().iter().map(|b| b.x));
        let rd = DMatrix::from_diagonal(&r);
        let xd = DMatrix::from_diagonal(&x);
        let z2 = DMatrix::from_diagonal(&r.zip_map(&x, |r, x| r * r + x * x));

        let ca = &c * &a;
        let d_r = &ca * &rd;
        let d_x = &ca * &xd;
        let ct = c.transpose();
        let m_p = 2.0 * &ct * &rd * &c;
        let m_q = 2.0 * &ct * &xd * &c;
        let h = &ct * (2.0 * (&rd * &d_r + &xd * &d_x) + &z2);

        Ok(Self {
            v0: model.v0(),
            b,
            a,
            c,
            d_r,
            d_x,
            m_p,
            m_q,
            h,
            z2,
            r,
            x,
        })
    }

    pub fn n(&self) -> usize {
        self.c.nrows()
    }

    /// Branch flows for given injections and squared currents.
    pub fn flows(&self, p: &DVector<f64>, q: &DVector<f64>, l: &DVector<f64>) -> (DVector<f64>, DVector<f64>) {
        (&self.c * p - &self.d_r * l, &self.c * q - &self.d_x * l)
    }

    /// Node voltages for given injections and squared currents.
    pub fn voltages(&self, p: &DVector<f64>, q: &DVector<f64>, l: &DVector<f64>) -> DVector<f64> {
        DVector::from_element(self.n(), self.v0) + &self.m_p * p + &self.m_q * q - &self.h * l
    }
}

/// Inverse of `I - A` for strictly upper triangular `A`, by back substitution
/// on the rows: `row_i(C) = e_i + sum_k A[i,k] row_k(C)`.
fn unit_upper_inverse(a: &DMatrix<f64>) -> DMatrix<f64> {
    let n = a.nrows();
    let mut c = DMatrix::<f64>::identity(n, n);
    for i in (0..n).rev() {
        for k in i + 1..n {
            let aik = a[(i, k)];
            if aik != 0.0 {
                for j in k..n {
                    let v = c[(k, j)];
                    if v != 0.0 {
                        c[(i, j)] += aik * v;
                    }
                }
            }
        }
    }
    c
}

impl FeederModel {
    /// Builds the sensitivity matrices; the model must be ordered.
    pub fn build_sensitivities(&self) -> Result<SensitivityMatrices, FeederError> {
        SensitivityMatrices::build(self)
    }
}
