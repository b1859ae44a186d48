//! Fixed-size dense kernels: 3x3 elimination with partial pivoting and a
//! scaling-and-squaring matrix exponential.

use nalgebra::{Matrix3, Matrix4, Vector3};

/// Upper limit on the 1-norm condition estimate before a 3x3 system is
/// considered singular.
pub const MAX_CONDITION: f64 = 1e12;

/// `PA = LU` for a 3x3 matrix, unit lower triangle stored below the diagonal.
#[derive(Debug, Clone, Copy)]
pub struct Lu3 {
    lu: Matrix3<f64>,
    perm: [usize; 3],
}

impl Lu3 {
    /// Returns `None` when a pivot is exactly zero.
    pub fn factor(a: &Matrix3<f64>) -> Option<Self> {
        let mut lu = *a;
        let mut perm = [0, 1, 2];
        for col in 0..3 {
            let (mut piv, mut best) = (col, lu[(col, col)].abs());
            for row in col + 1..3 {
                if lu[(row, col)].abs() > best {
                    piv = row;
                    best = lu[(row, col)].abs();
                }
            }
            if best == 0.0 || !best.is_finite() {
                return None;
            }
            if piv != col {
                lu.swap_rows(piv, col);
                perm.swap(piv, col);
            }
            for row in col + 1..3 {
                let f = lu[(row, col)] / lu[(col, col)];
                lu[(row, col)] = f;
                for k in col + 1..3 {
                    lu[(row, k)] -= f * lu[(col, k)];
                }
            }
        }
        Some(Lu3 { lu, perm })
    }

    pub fn solve(&self, b: &Vector3<f64>) -> Vector3<f64> {
        let mut y = Vector3::new(b[self.perm[0]], b[self.perm[1]], b[self.perm[2]]);
        for i in 1..3 {
            for k in 0..i {
                y[i] -= self.lu[(i, k)] * y[k];
            }
        }
        for i in (0..3).rev() {
            for k in i + 1..3 {
                y[i] -= self.lu[(i, k)] * y[k];
            }
            y[i] /= self.lu[(i, i)];
        }
        y
    }

    pub fn inverse(&self) -> Matrix3<f64> {
        let mut inv = Matrix3::zeros();
        for j in 0..3 {
            let col = self.solve(&Vector3::ith(j, 1.0));
            inv.set_column(j, &col);
        }
        inv
    }
}

fn norm1(a: &Matrix3<f64>) -> f64 {
    (0..3)
        .map(|j| a.column(j).iter().map(|x| x.abs()).sum::<f64>())
        .fold(0.0, f64::max)
}

/// `||A||_1 ||A^-1||_1`, infinite for an exactly singular matrix.
pub fn condition_number(a: &Matrix3<f64>) -> f64 {
    match Lu3::factor(a) {
        Some(lu) => norm1(a) * norm1(&lu.inverse()),
        None => f64::INFINITY,
    }
}

/// Solves `a x = b`, refusing systems whose condition estimate exceeds
/// [`MAX_CONDITION`]. The error carries the estimate.
pub fn solve_guarded(a: &Matrix3<f64>, b: &Vector3<f64>) -> Result<Vector3<f64>, f64> {
    let lu = Lu3::factor(a).ok_or(f64::INFINITY)?;
    let cond = norm1(a) * norm1(&lu.inverse());
    if !(cond <= MAX_CONDITION) {
        return Err(cond);
    }
    Ok(lu.solve(b))
}

// (12 - k)! 6! / (12! k! (6 - k)!)
const PADE6: [f64; 7] = [
    1.0,
    1.0 / 2.0,
    5.0 / 44.0,
    1.0 / 66.0,
    1.0 / 792.0,
    1.0 / 15840.0,
    1.0 / 665280.0,
];

/// `exp(m)` by scaling and squaring with a diagonal (6,6) Pade approximant.
pub fn expm(m: &Matrix4<f64>) -> Matrix4<f64> {
    let norm = (0..4)
        .map(|i| m.row(i).iter().map(|x| x.abs()).sum::<f64>())
        .fold(0.0, f64::max);
    let squarings = if norm > 0.5 {
        (norm / 0.5).log2().ceil() as i32
    } else {
        0
    };
    let a = m / 2f64.powi(squarings);

    let id = Matrix4::identity();
    let mut power = id;
    let mut even = id * PADE6[0];
    let mut odd = Matrix4::zeros();
    for (k, coef) in PADE6.iter().enumerate().skip(1) {
        power *= a;
        if k % 2 == 0 {
            even += power * *coef;
        } else {
            odd += power * *coef;
        }
    }
    let num = even + odd;
    let den = even - odd;
    let mut r = den
        .lu()
        .solve(&num)
        .expect("Pade denominator is nonsingular for ||A|| <= 1/2");
    for _ in 0..squarings {
        r = r * r;
    }
    r
}
