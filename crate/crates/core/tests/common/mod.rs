//! Independent reference implementations shared by the integration tests.

#![allow(dead_code)]

use num_complex::Complex64;
use rand::Rng;
use rand_chacha::ChaCha8Rng;

pub fn c(re: f64, im: f64) -> Complex64 {
    Complex64::new(re, im)
}

pub fn random_complex(rng: &mut ChaCha8Rng) -> Complex64 {
    c(rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0))
}

pub fn norm(v: &[Complex64]) -> f64 {
    v.iter().map(|x| x.norm_sqr()).sum::<f64>().sqrt()
}

/// `B B^H` for a random `d x (d + 2)` matrix `B`, as dense rows.
pub fn random_hpd(d: usize, rng: &mut ChaCha8Rng) -> Vec<Vec<Complex64>> {
    let b: Vec<Vec<Complex64>> = (0..d)
        .map(|_| (0..d + 2).map(|_| random_complex(rng)).collect())
        .collect();
    (0..d)
        .map(|i| {
            (0..d)
                .map(|j| (0..d + 2).map(|k| b[i][k] * b[j][k].conj()).sum())
                .collect()
        })
        .collect()
}

/// Gaussian elimination with partial pivoting on the dense system.
pub fn gauss_solve(a: &[Vec<Complex64>], b: &[Complex64]) -> Vec<Complex64> {
    let d = b.len();
    let mut m: Vec<Vec<Complex64>> = a
        .iter()
        .zip(b)
        .map(|(row, &rhs)| row.iter().copied().chain(std::iter::once(rhs)).collect())
        .collect();
    for col in 0..d {
        let pivot = (col..d)
            .max_by(|&i, &j| m[i][col].norm().total_cmp(&m[j][col].norm()))
            .unwrap();
        m.swap(col, pivot);
        for row in col + 1..d {
            let f = m[row][col] / m[col][col];
            for k in col..=d {
                let v = m[col][k];
                m[row][k] -= f * v;
            }
        }
    }
    let mut x = vec![c(0.0, 0.0); d];
    for row in (0..d).rev() {
        let mut acc = m[row][d];
        for k in row + 1..d {
            acc -= m[row][k] * x[k];
        }
        x[row] = acc / m[row][row];
    }
    x
}
