//! Same-size 2-D cross-correlation with mirror padding, via im2col + gemm.
//!
//! Images are processed in row tiles. Tiles run in parallel but results are
//! stitched and reduced in tile order, so output never depends on the
//! worker count.

use ndarray::{s, Array1, Array2, Array3, ArrayView1, ArrayView2, ArrayView3};
use rayon::prelude::*;

use crate::num::{reflect, Real};

/// Target pixel count per tile.
const TILE_PX: usize = 4096;

fn tiles(h: usize, w: usize) -> Vec<(usize, usize)> {
    let rows = (TILE_PX / w.max(1)).max(1);
    (0..h).step_by(rows).map(|y0| (y0, (y0 + rows).min(h))).collect()
}

fn column_table(w: usize, k: usize) -> Vec<Vec<usize>> {
    let r = (k / 2) as isize;
    (0..k)
        .map(|dx| (0..w).map(|x| reflect(x as isize + dx as isize - r, w)).collect())
        .collect()
}

/// Rows `(c, dy, dx)` x columns `(y, x)` for output rows `y0..y1`.
fn im2col<T: Real>(x: &[T], dims: (usize, usize, usize), k: usize, y0: usize, y1: usize, xi: &[Vec<usize>]) -> Array2<T> {
    let (c_in, h, w) = dims;
    let r = (k / 2) as isize;
    let px = (y1 - y0) * w;
    let mut col = vec![T::zero(); c_in * k * k * px];
    for c in 0..c_in {
        let plane = &x[c * h * w..(c + 1) * h * w];
        for dy in 0..k {
            for (dx, table) in xi.iter().enumerate() {
                let row = (c * k + dy) * k + dx;
                let dst = &mut col[row * px..(row + 1) * px];
                for (ty, y) in (y0..y1).enumerate() {
                    let sy = reflect(y as isize + dy as isize - r, h);
                    let src = &plane[sy * w..(sy + 1) * w];
                    for (o, &j) in dst[ty * w..(ty + 1) * w].iter_mut().zip(table) {
                        *o = src[j];
                    }
                }
            }
        }
    }
    Array2::from_shape_vec((c_in * k * k, px), col).expect("sized above")
}

/// `relu?(W * x + b)` with `W` shaped `(out, in*k*k)`.
pub(crate) fn forward<T: Real>(
    x: ArrayView3<'_, T>,
    weight: ArrayView2<'_, T>,
    bias: ArrayView1<'_, T>,
    k: usize,
    relu: bool,
) -> Array3<T> {
    let (_, h, w) = x.dim();
    let out_ch = weight.nrows();
    let xi = column_table(w, k);
    let x = x.as_standard_layout();
    let xs = x.as_slice().expect("standard layout");
    let parts: Vec<Array2<T>> = tiles(h, w)
        .into_par_iter()
        .map(|(y0, y1)| {
            let col = im2col(xs, x.dim(), k, y0, y1, &xi);
            let mut z = weight.dot(&col);
            for (mut row, &b) in z.outer_iter_mut().zip(bias) {
                if relu {
                    row.mapv_inplace(|v| (v + b).max(T::zero()));
                } else {
                    row.mapv_inplace(|v| v + b);
                }
            }
            z
        })
        .collect();
    let mut out = Array3::<T>::zeros((out_ch, h, w));
    for ((y0, y1), z) in tiles(h, w).into_iter().zip(parts) {
        for o in 0..out_ch {
            let src = z.row(o);
            out.slice_mut(s![o, y0..y1, ..])
                .iter_mut()
                .zip(src.iter())
                .for_each(|(d, &v)| *d = v);
        }
    }
    out
}

pub(crate) struct ConvGrad<T> {
    pub weight: Array2<f64>,
    pub bias: Array1<f64>,
    pub input: Option<Array3<T>>,
}

/// Gradients of a conv layer given the gradient at its (pre-activation) output.
pub(crate) fn backward<T: Real>(
    x: ArrayView3<'_, T>,
    weight: ArrayView2<'_, T>,
    dout: ArrayView3<'_, T>,
    k: usize,
    need_input: bool,
) -> ConvGrad<T> {
    let (c_in, h, w) = x.dim();
    let out_ch = weight.nrows();
    let r = k / 2;
    let xi = column_table(w, k);
    let ranges = tiles(h, w);
    let x = x.as_standard_layout();
    let xs = x.as_slice().expect("standard layout");

    struct Part<T> {
        dw: Array2<T>,
        db: Array1<f64>,
        band: Option<(usize, Array3<T>)>,
    }

    let parts: Vec<Part<T>> = ranges
        .par_iter()
        .map(|&(y0, y1)| {
            let col = im2col(xs, (c_in, h, w), k, y0, y1, &xi);
            let px = (y1 - y0) * w;
            let d = Array2::from_shape_vec((out_ch, px), dout.slice(s![.., y0..y1, ..]).iter().copied().collect())
                .expect("tile shape");
            let dw = d.dot(&col.t());
            let db = d.outer_iter().map(|row| row.iter().map(|v| v.as_f64()).sum()).collect();
            let band = need_input.then(|| {
                let dcol = weight.t().dot(&d);
                let lo = y0.saturating_sub(r);
                let hi = (y1 + r).min(h);
                let rows = hi - lo;
                let mut buf = vec![T::zero(); c_in * rows * w];
                for c in 0..c_in {
                    let plane = &mut buf[c * rows * w..(c + 1) * rows * w];
                    for dy in 0..k {
                        for (dx, table) in xi.iter().enumerate() {
                            let src = dcol.row((c * k + dy) * k + dx);
                            let src = src.as_slice().expect("fresh array");
                            for (ty, y) in (y0..y1).enumerate() {
                                let sy = reflect(y as isize + dy as isize - r as isize, h) - lo;
                                let dst = &mut plane[sy * w..(sy + 1) * w];
                                for (&g, &j) in src[ty * w..(ty + 1) * w].iter().zip(table) {
                                    dst[j] = dst[j] + g;
                                }
                            }
                        }
                    }
                }
                let buf = Array3::from_shape_vec((c_in, rows, w), buf).expect("sized above");
                (lo, buf)
            });
            Part { dw, db, band }
        })
        .collect();

    let mut dw = Array2::<f64>::zeros(weight.dim());
    let mut db = Array1::<f64>::zeros(out_ch);
    let mut dx = need_input.then(|| Array3::<T>::zeros((c_in, h, w)));
    for part in parts {
        dw.zip_mut_with(&part.dw, |a, &b| *a += b.as_f64());
        db += &part.db;
        if let (Some(dx), Some((lo, band))) = (dx.as_mut(), part.band) {
            let rows = band.dim().1;
            let mut dst = dx.slice_mut(s![.., lo..lo + rows, ..]);
            dst.zip_mut_with(&band, |a, &b| *a = *a + b);
        }
    }
    ConvGrad { weight: dw, bias: db, input: dx }
}
