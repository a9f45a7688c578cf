//! Small dense helpers that the generic code needs and ndarray lacks.

use ndarray::{Array1, Array2, ArrayView1};

use crate::scalar::Scalar;

pub(crate) fn sq_dist<T: Scalar>(a: ArrayView1<T>, b: ArrayView1<T>) -> T {
    a.iter().zip(b.iter()).map(|(&x, &y)| (x - y) * (x - y)).sum()
}

/// Eigen-decomposition of a symmetric matrix by cyclic Jacobi rotations.
///
/// Returns eigenvalues in descending order and the matching unit
/// eigenvectors as columns.
pub(crate) fn symmetric_eigen<T: Scalar>(mut a: Array2<T>) -> (Vec<T>, Array2<T>) {
    let n = a.nrows();
    assert_eq!(n, a.ncols(), "symmetric_eigen needs a square matrix");
    let mut v = Array2::<T>::eye(n);
    let scale: T = a.iter().map(|&x| x * x).sum::<T>().sqrt();
    let threshold = T::epsilon() * scale * T::lit(1e-2);

    for _sweep in 0..100 {
        let off: T = (0..n)
            .flat_map(|i| (0..n).filter(move |&j| j != i).map(move |j| (i, j)))
            .map(|(i, j)| a[[i, j]] * a[[i, j]])
            .sum::<T>()
            .sqrt();
        if off <= threshold || off == T::zero() {
            break;
        }
        for p in 0..n {
            for q in p + 1..n {
                let apq = a[[p, q]];
                if apq == T::zero() {
                    continue;
                }
                let theta = (a[[q, q]] - a[[p, p]]) / (T::lit(2.0) * apq);
                let t = theta.signum() / (theta.abs() + (theta * theta + T::one()).sqrt());
                let c = T::one() / (t * t + T::one()).sqrt();
                let s = t * c;
                for k in 0..n {
                    let akp = a[[k, p]];
                    let akq = a[[k, q]];
                    a[[k, p]] = c * akp - s * akq;
                    a[[k, q]] = s * akp + c * akq;
                }
                for k in 0..n {
                    let apk = a[[p, k]];
                    let aqk = a[[q, k]];
                    a[[p, k]] = c * apk - s * aqk;
                    a[[q, k]] = s * apk + c * aqk;
                }
                for k in 0..n {
                    let vkp = v[[k, p]];
                    let vkq = v[[k, q]];
                    v[[k, p]] = c * vkp - s * vkq;
                    v[[k, q]] = s * vkp + c * vkq;
                }
            }
        }
    }

    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&i, &j| a[[j, j]].partial_cmp(&a[[i, i]]).unwrap_or(std::cmp::Ordering::Equal));
    let values = order.iter().map(|&i| a[[i, i]]).collect();
    let mut vectors = Array2::zeros((n, n));
    for (dst, &src) in order.iter().enumerate() {
        vectors.column_mut(dst).assign(&v.column(src));
    }
    (values, vectors)
}

/// Makes the rows of `rows` orthonormal in place (modified Gram-Schmidt),
/// replacing rows that collapse with unused standard basis vectors.
pub(crate) fn orthonormalize_rows<T: Scalar>(rows: &mut Array2<T>) {
    let (r, d) = rows.dim();
    let tiny = T::lit(1e-10);
    let mut next_basis = 0usize;
    for i in 0..r {
        loop {
            let mut row: Array1<T> = rows.row(i).to_owned();
            for j in 0..i {
                let prev = rows.row(j);
                let dot: T = row.iter().zip(prev.iter()).map(|(&a, &b)| a * b).sum();
                row.iter_mut().zip(prev.iter()).for_each(|(a, &b)| *a -= dot * b);
            }
            let norm = row.iter().map(|&x| x * x).sum::<T>().sqrt();
            if norm > tiny {
                row.mapv_inplace(|x| x / norm);
                rows.row_mut(i).assign(&row);
                break;
            }
            assert!(next_basis < d, "cannot complete an orthonormal basis");
            let mut e = Array1::zeros(d);
            e[next_basis] = T::one();
            next_basis += 1;
            rows.row_mut(i).assign(&e);
        }
    }
}
