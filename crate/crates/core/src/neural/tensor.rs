//! Row-major f64 matrices and the three matmul variants backprop needs.

#[derive(Debug, Clone, PartialEq)]
pub struct Mat {
    pub rows: usize,
    pub cols: usize,
    pub data: Vec<f64>,
}

impl Mat {
    pub fn zeros(rows: usize, cols: usize) -> Self {
        Mat {
            rows,
            cols,
            data: vec![0.0; rows * cols],
        }
    }

    pub fn from_rows(rows: Vec<Vec<f64>>) -> Self {
        let r = rows.len();
        let c = rows.first().map_or(0, Vec::len);
        let mut data = Vec::with_capacity(r * c);
        for row in rows {
            debug_assert_eq!(row.len(), c);
            data.extend(row);
        }
        Mat { rows: r, cols: c, data }
    }

    #[inline]
    pub fn row(&self, r: usize) -> &[f64] {
        &self.data[r * self.cols..(r + 1) * self.cols]
    }

    #[inline]
    pub fn row_mut(&mut self, r: usize) -> &mut [f64] {
        &mut self.data[r * self.cols..(r + 1) * self.cols]
    }

    pub fn shape(&self) -> (usize, usize) {
        (self.rows, self.cols)
    }
}

/// C = A . B
pub fn matmul_nn(a: &Mat, b: &Mat) -> Mat {
    debug_assert_eq!(a.cols, b.rows);
    let mut c = Mat::zeros(a.rows, b.cols);
    for i in 0..a.rows {
        let arow = a.row(i);
        let crow = c.row_mut(i);
        for (k, &av) in arow.iter().enumerate() {
            if av == 0.0 {
                continue;
            }
            let brow = b.row(k);
            for (cv, &bv) in crow.iter_mut().zip(brow) {
                *cv += av * bv;
            }
        }
    }
    c
}

/// C = A . B^T
pub fn matmul_nt(a: &Mat, b: &Mat) -> Mat {
    debug_assert_eq!(a.cols, b.cols);
    let mut c = Mat::zeros(a.rows, b.rows);
    let k = a.cols;
    let k4 = k - k % 4;
    for i in 0..a.rows {
        let arow = a.row(i);
        let crow = c.row_mut(i);
        for j in 0..b.rows {
            let brow = b.row(j);
            // four running sums break the serial FP dependency chain
            let (mut s0, mut s1, mut s2, mut s3) = (0.0, 0.0, 0.0, 0.0);
            let mut t = 0;
            while t < k4 {
                s0 += arow[t] * brow[t];
                s1 += arow[t + 1] * brow[t + 1];
                s2 += arow[t + 2] * brow[t + 2];
                s3 += arow[t + 3] * brow[t + 3];
                t += 4;
            }
            let mut s = (s0 + s1) + (s2 + s3);
            while t < k {
                s += arow[t] * brow[t];
                t += 1;
            }
            crow[j] = s;
        }
    }
    c
}

/// C = A^T . B
pub fn matmul_tn(a: &Mat, b: &Mat) -> Mat {
    debug_assert_eq!(a.rows, b.rows);
    let mut c = Mat::zeros(a.cols, b.cols);
    for k in 0..a.rows {
        let arow = a.row(k);
        let brow = b.row(k);
        for (i, &av) in arow.iter().enumerate() {
            if av == 0.0 {
                continue;
            }
            let crow = c.row_mut(i);
            for (cv, &bv) in crow.iter_mut().zip(brow) {
                *cv += av * bv;
            }
        }
    }
    c
}

pub fn add_into(dst: &mut Mat, src: &Mat) {
    debug_assert_eq!(dst.shape(), src.shape());
    for (d, s) in dst.data.iter_mut().zip(&src.data) {
        *d += s;
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn matmul_variants_agree() {
        let a = Mat::from_rows(vec![vec![1.0, 2.0], vec![3.0, 4.0], vec![5.0, 6.0]]);
        let b = Mat::from_rows(vec![vec![7.0, 8.0, 9.0], vec![10.0, 11.0, 12.0]]);
        let nn = matmul_nn(&a, &b);
        assert_eq!(nn.row(0), &[27.0, 30.0, 33.0]);

        // a . b == a . (b^T)^T
        let bt = Mat::from_rows(vec![
            vec![7.0, 10.0],
            vec![8.0, 11.0],
            vec![9.0, 12.0],
        ]);
        assert_eq!(matmul_nt(&a, &bt), nn);

        // (a^T . a) is symmetric
        let ata = matmul_tn(&a, &a);
        assert_eq!(ata.row(0)[1], ata.row(1)[0]);
    }
}
