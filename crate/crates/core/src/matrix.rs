//! Small dense integer matrices for iteration-space transformations.
//! Depth is capped at 5, so cofactor expansion is fine everywhere.

pub type IMat = Vec<Vec<i64>>;

pub fn identity(n: usize) -> IMat {
    (0..n)
        .map(|r| (0..n).map(|c| i64::from(r == c)).collect())
        .collect()
}

pub fn mat_mul(a: &IMat, b: &IMat) -> IMat {
    let n = a.len();
    let m = b[0].len();
    let k = b.len();
    let mut out = vec![vec![0i64; m]; n];
    for r in 0..n {
        for t in 0..k {
            let av = a[r][t];
            if av == 0 {
                continue;
            }
            for c in 0..m {
                out[r][c] += av * b[t][c];
            }
        }
    }
    out
}

pub fn mat_vec(a: &IMat, x: &[i64]) -> Vec<i64> {
    a.iter()
        .map(|row| row.iter().zip(x).map(|(c, v)| c * v).sum())
        .collect()
}

pub fn det(m: &IMat) -> i64 {
    let n = m.len();
    match n {
        0 => 1,
        1 => m[0][0],
        _ => {
            let mut sum = 0i64;
            for c in 0..n {
                if m[0][c] == 0 {
                    continue;
                }
                let minor: IMat = m[1..]
                    .iter()
                    .map(|row| {
                        row.iter()
                            .enumerate()
                            .filter(|(i, _)| *i != c)
                            .map(|(_, v)| *v)
                            .collect()
                    })
                    .collect();
                let sign = if c % 2 == 0 { 1 } else { -1 };
                sum += sign * m[0][c] * det(&minor);
            }
            sum
        }
    }
}

/// Inverse of a unimodular matrix (|det| = 1), which is again integer.
pub fn inverse_unimodular(m: &IMat) -> IMat {
    let n = m.len();
    let d = det(m);
    assert!(d == 1 || d == -1, "matrix is not unimodular (det = {d})");
    let mut adj = vec![vec![0i64; n]; n];
    for r in 0..n {
        for c in 0..n {
            let minor: IMat = (0..n)
                .filter(|&i| i != r)
                .map(|i| {
                    (0..n)
                        .filter(|&j| j != c)
                        .map(|j| m[i][j])
                        .collect()
                })
                .collect();
            let sign = if (r + c) % 2 == 0 { 1 } else { -1 };
            // adjugate is the transposed cofactor matrix
            adj[c][r] = sign * det(&minor);
        }
    }
    for row in &mut adj {
        for v in row {
            *v *= d;
        }
    }
    adj
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn inverse_roundtrip() {
        let m = vec![vec![1, 0, 0], vec![2, 1, 0], vec![0, -1, 1]];
        let inv = inverse_unimodular(&m);
        assert_eq!(mat_mul(&m, &inv), identity(3));
        assert_eq!(mat_mul(&inv, &m), identity(3));
    }

    #[test]
    fn det_of_permutation_is_signed() {
        let swap = vec![vec![0, 1], vec![1, 0]];
        assert_eq!(det(&swap), -1);
        let inv = inverse_unimodular(&swap);
        assert_eq!(inv, swap);
    }
}
