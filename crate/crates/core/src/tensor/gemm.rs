use super::Real;

/// A strided `rows x cols` view into a flat buffer.
#[derive(Debug, Clone, Copy)]
pub struct MatRef {
    pub offset: usize,
    pub rows: usize,
    pub cols: usize,
    pub row_stride: usize,
    pub col_stride: usize,
}

impl MatRef {
    /// Contiguous row-major matrix.
    pub fn dense(rows: usize, cols: usize) -> Self {
        Self { offset: 0, rows, cols, row_stride: cols, col_stride: 1 }
    }

    /// Column block `[col0, col0 + cols)` of a row-major matrix with `width` columns.
    pub fn block(rows: usize, width: usize, col0: usize, cols: usize) -> Self {
        Self { offset: col0, rows, cols, row_stride: width, col_stride: 1 }
    }

    pub fn t(self) -> Self {
        Self { offset: self.offset, rows: self.cols, cols: self.rows, row_stride: self.col_stride, col_stride: self.row_stride }
    }

    fn max_index(&self) -> usize {
        if self.rows == 0 || self.cols == 0 {
            return self.offset;
        }
        self.offset + (self.rows - 1) * self.row_stride + (self.cols - 1) * self.col_stride
    }
}

/// `c = alpha * a * b + beta * c` with bounds checked strided views.
///
/// Panics on inconsistent dimensions or out of bounds views; callers
/// validate user-facing shapes before reaching here.
#[allow(clippy::too_many_arguments)]
pub fn gemm<F: Real>(alpha: F, a: &[F], av: MatRef, b: &[F], bv: MatRef, beta: F, c: &mut [F], cv: MatRef) {
    assert_eq!(av.cols, bv.rows, "gemm inner dimension");
    assert_eq!(av.rows, cv.rows, "gemm output rows");
    assert_eq!(bv.cols, cv.cols, "gemm output cols");
    if cv.rows == 0 || cv.cols == 0 {
        return;
    }
    assert!(cv.max_index() < c.len(), "gemm output view out of bounds");
    if av.cols == 0 {
        // Empty inner product; scale c by beta only.
        for i in 0..cv.rows {
            for j in 0..cv.cols {
                let idx = cv.offset + i * cv.row_stride + j * cv.col_stride;
                c[idx] = if beta == F::zero() { F::zero() } else { beta * c[idx] };
            }
        }
        return;
    }
    assert!(av.max_index() < a.len(), "gemm lhs view out of bounds");
    assert!(bv.max_index() < b.len(), "gemm rhs view out of bounds");
    // SAFETY: all three views were bounds checked above.
    unsafe {
        F::raw_gemm(
            av.rows,
            av.cols,
            bv.cols,
            alpha,
            a.as_ptr().add(av.offset),
            av.row_stride as isize,
            av.col_stride as isize,
            b.as_ptr().add(bv.offset),
            bv.row_stride as isize,
            bv.col_stride as isize,
            beta,
            c.as_mut_ptr().add(cv.offset),
            cv.row_stride as isize,
            cv.col_stride as isize,
        );
    }
}
