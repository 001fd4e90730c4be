//! Attack evaluation: prediction shift on unseen entries, per-item averages, and
//! a paired t-test on where fake users place their ratings.

use alloc::format;
use alloc::vec::Vec;

use nalgebra::DMatrix;

use crate::error::{Error, Result};
use crate::ratings::{Mask, MaliciousMatrix, SparseRatings};

/// `√(Σ_{unseen}(M̄_ij − M̂_ij)² / |unseen|)`.
pub fn rmse_unseen(mhat: &DMatrix<f64>, mbar: &DMatrix<f64>, unseen: &Mask) -> Result<f64> {
    if mhat.shape() != mbar.shape() || mhat.shape() != (unseen.rows(), unseen.cols()) {
        return Err(Error::ShapeMismatch(format!(
            "predictions {:?}, baseline {:?}, mask {}x{}",
            mhat.shape(),
            mbar.shape(),
            unseen.rows(),
            unseen.cols()
        )));
    }
    let mut count = 0usize;
    let mut ss = 0.0;
    for (i, j) in unseen.iter_set() {
        let d = mbar[(i, j)] - mhat[(i, j)];
        ss += d * d;
        count += 1;
    }
    if count == 0 {
        return Err(Error::DegenerateMask);
    }
    Ok(libm::sqrt(ss / count as f64))
}

/// Mean prediction for `item` over all normal users.
pub fn avg_item_rating(mhat: &DMatrix<f64>, item: usize) -> Result<f64> {
    if item >= mhat.ncols() {
        return Err(Error::IndexOutOfRange { user: 0, item });
    }
    if mhat.nrows() == 0 {
        return Err(Error::EmptyObservations);
    }
    Ok(mhat.column(item).sum() / mhat.nrows() as f64)
}

/// Result of a two-sided t-test.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TTest {
    pub t: f64,
    pub p: f64,
}

/// Two-sided paired t-test on `a_k − b_k`. Zero-variance differences give `(0, 1)`.
pub fn paired_t_test(a: &[f64], b: &[f64]) -> Result<TTest> {
    if a.len() != b.len() {
        return Err(Error::ShapeMismatch(format!(
            "paired samples of lengths {} and {}",
            a.len(),
            b.len()
        )));
    }
    let n = a.len();
    if n < 2 {
        return Err(Error::InvalidParameter(format!(
            "a paired t-test needs at least 2 pairs, got {n}"
        )));
    }
    let d: Vec<f64> = a.iter().zip(b).map(|(x, y)| x - y).collect();
    let mean = d.iter().sum::<f64>() / n as f64;
    let var = d.iter().map(|x| (x - mean) * (x - mean)).sum::<f64>() / (n - 1) as f64;
    // spread below round-off of the mean counts as no spread
    if !(var > (f64::EPSILON * mean) * (f64::EPSILON * mean) * n as f64) {
        return Ok(TTest { t: 0.0, p: 1.0 });
    }
    let t = mean / libm::sqrt(var / n as f64);
    let p = student_t_two_sided(t, (n - 1) as f64);
    Ok(TTest { t, p })
}

/// Pairs each item's rated fraction among normal users with its rated fraction
/// among fake users and runs [`paired_t_test`] over the items.
pub fn item_choice_t_test(normal: &SparseRatings, malicious: &MaliciousMatrix) -> Result<TTest> {
    let n = normal.num_items();
    if malicious.num_items() != n {
        return Err(Error::ShapeMismatch(format!(
            "{n} items for normal users, {} for fake users",
            malicious.num_items()
        )));
    }
    if normal.num_users() == 0 || malicious.num_malicious() == 0 {
        return Err(Error::EmptyObservations);
    }
    let m = normal.num_users() as f64;
    let mm = malicious.num_malicious() as f64;
    let f_normal: Vec<f64> = (0..n).map(|j| normal.col_positions(j).len() as f64 / m).collect();
    let f_mal: Vec<f64> = (0..n)
        .map(|j| malicious.col_positions(j).len() as f64 / mm)
        .collect();
    paired_t_test(&f_normal, &f_mal)
}

/// Pairs each fake user's mean item popularity with the popularity expected of an
/// item picked by a normal user, and runs [`paired_t_test`] over the fake users.
///
/// Popularity is the rated fraction `f_j = |Ω′_j|/m`; a normal user's rated item is
/// item `j` with probability `f_j / Σf`, so the expected popularity is `Σf² / Σf`.
/// Fake users without ratings are skipped.
pub fn popularity_t_test(normal: &SparseRatings, malicious: &MaliciousMatrix) -> Result<TTest> {
    let n = normal.num_items();
    if malicious.num_items() != n {
        return Err(Error::ShapeMismatch(format!(
            "{n} items for normal users, {} for fake users",
            malicious.num_items()
        )));
    }
    if normal.is_empty() {
        return Err(Error::EmptyObservations);
    }
    let m = normal.num_users() as f64;
    let f: Vec<f64> = (0..n).map(|j| normal.col_positions(j).len() as f64 / m).collect();
    let expected = f.iter().map(|x| x * x).sum::<f64>() / f.iter().sum::<f64>();
    let observed: Vec<f64> = (0..malicious.num_malicious())
        .filter(|&i| !malicious.row(i).is_empty())
        .map(|i| {
            let row = malicious.row(i);
            row.iter().map(|r| f[r.item]).sum::<f64>() / row.len() as f64
        })
        .collect();
    let reference = alloc::vec![expected; observed.len()];
    paired_t_test(&observed, &reference)
}

/// `P(|T| ≥ |t|)` for Student's t with `dof` degrees of freedom.
pub fn student_t_two_sided(t: f64, dof: f64) -> f64 {
    if t.is_nan() || !(dof > 0.0) {
        return f64::NAN;
    }
    if t.is_infinite() {
        return 0.0;
    }
    let x = dof / (dof + t * t);
    regularized_beta(x, dof / 2.0, 0.5).clamp(0.0, 1.0)
}

/// `P(T ≤ t)` for Student's t with `dof` degrees of freedom.
pub fn student_t_cdf(t: f64, dof: f64) -> f64 {
    let tail = student_t_two_sided(t, dof) / 2.0;
    if t >= 0.0 {
        1.0 - tail
    } else {
        tail
    }
}

/// Regularized incomplete beta `I_x(a, b)`.
pub fn regularized_beta(x: f64, a: f64, b: f64) -> f64 {
    if !(0.0..=1.0).contains(&x) || !(a > 0.0 && b > 0.0) {
        return f64::NAN;
    }
    if x == 0.0 || x == 1.0 {
        return x;
    }
    let ln_front = libm::lgamma(a + b) - libm::lgamma(a) - libm::lgamma(b)
        + a * libm::log(x)
        + b * libm::log1p(-x);
    let front = libm::exp(ln_front);
    // the continued fraction converges fast on this side of the mean
    if x < (a + 1.0) / (a + b + 2.0) {
        front * beta_fraction(x, a, b) / a
    } else {
        1.0 - front * beta_fraction(1.0 - x, b, a) / b
    }
}

/// Modified Lentz evaluation of the incomplete beta continued fraction.
fn beta_fraction(x: f64, a: f64, b: f64) -> f64 {
    const TINY: f64 = 1e-300;
    const EPS: f64 = 1e-15;
    let qab = a + b;
    let qap = a + 1.0;
    let qam = a - 1.0;
    let mut c = 1.0;
    let mut d = 1.0 - qab * x / qap;
    if libm::fabs(d) < TINY {
        d = TINY;
    }
    d = 1.0 / d;
    let mut h = d;
    for m in 1..=1000 {
        let m = m as f64;
        let m2 = 2.0 * m;
        let aa = m * (b - m) * x / ((qam + m2) * (a + m2));
        d = 1.0 + aa * d;
        if libm::fabs(d) < TINY {
            d = TINY;
        }
        c = 1.0 + aa / c;
        if libm::fabs(c) < TINY {
            c = TINY;
        }
        d = 1.0 / d;
        h *= d * c;
        let aa = -(a + m) * (qab + m) * x / ((a + m2) * (qap + m2));
        d = 1.0 + aa * d;
        if libm::fabs(d) < TINY {
            d = TINY;
        }
        c = 1.0 + aa / c;
        if libm::fabs(c) < TINY {
            c = TINY;
        }
        d = 1.0 / d;
        let del = d * c;
        h *= del;
        if libm::fabs(del - 1.0) < EPS {
            break;
        }
    }
    h
}
