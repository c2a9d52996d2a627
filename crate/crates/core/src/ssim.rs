//! SSIM with an 11x11 Gaussian window (sigma 1.5), per channel, and its
//! analytic gradient with respect to the first image.
//!
//! Local statistics come from separable convolutions with symmetric padding
//! (edge pixel included in the reflection). The gradient therefore needs the
//! adjoint of that padded convolution: a scatter with the same reflected
//! indexing, not another convolution.

use crate::image::ImageBuffer;
use crate::scalar::Real;

const RADIUS: usize = 5;
const TAPS: usize = 2 * RADIUS + 1;
const SIGMA: f64 = 1.5;
/// Stabilizers from the standard SSIM constants K1 = 0.01, K2 = 0.03 at
/// unit dynamic range.
const C1: f64 = 1e-4;
const C2: f64 = 9e-4;

fn kernel<T: Real>() -> [T; TAPS] {
    let mut k = [0.0f64; TAPS];
    let mut sum = 0.0;
    for (i, v) in k.iter_mut().enumerate() {
        let d = i as f64 - RADIUS as f64;
        *v = (-0.5 * d * d / (SIGMA * SIGMA)).exp();
        sum += *v;
    }
    let mut out = [T::zero(); TAPS];
    for i in 0..TAPS {
        out[i] = T::c(k[i] / sum);
    }
    out
}

/// Symmetric (edge-repeating) reflection of an out-of-range index.
#[inline]
fn reflect(mut i: isize, n: usize) -> usize {
    let n = n as isize;
    loop {
        if i < 0 {
            i = -1 - i;
        } else if i >= n {
            i = 2 * n - 1 - i;
        } else {
            return i as usize;
        }
    }
}

/// Separable padded convolution.
fn conv<T: Real>(src: &[T], w: usize, h: usize, k: &[T; TAPS]) -> Vec<T> {
    let mut rows = vec![T::zero(); w * h];
    for y in 0..h {
        for x in 0..w {
            let mut acc = T::zero();
            for t in 0..TAPS {
                let sx = reflect(x as isize + t as isize - RADIUS as isize, w);
                acc += k[t] * src[y * w + sx];
            }
            rows[y * w + x] = acc;
        }
    }
    let mut out = vec![T::zero(); w * h];
    for y in 0..h {
        for x in 0..w {
            let mut acc = T::zero();
            for t in 0..TAPS {
                let sy = reflect(y as isize + t as isize - RADIUS as isize, h);
                acc += k[t] * rows[sy * w + x];
            }
            out[y * w + x] = acc;
        }
    }
    out
}

/// Adjoint of [`conv`]: scatters through the same reflected taps.
fn conv_adjoint<T: Real>(src: &[T], w: usize, h: usize, k: &[T; TAPS]) -> Vec<T> {
    let mut cols = vec![T::zero(); w * h];
    for y in 0..h {
        for x in 0..w {
            let v = src[y * w + x];
            for t in 0..TAPS {
                let sy = reflect(y as isize + t as isize - RADIUS as isize, h);
                cols[sy * w + x] += k[t] * v;
            }
        }
    }
    let mut out = vec![T::zero(); w * h];
    for y in 0..h {
        for x in 0..w {
            let v = cols[y * w + x];
            for t in 0..TAPS {
                let sx = reflect(x as isize + t as isize - RADIUS as isize, w);
                out[y * w + sx] += k[t] * v;
            }
        }
    }
    out
}

struct ChannelStats<T> {
    mu_x: Vec<T>,
    mu_y: Vec<T>,
    sxx: Vec<T>,
    syy: Vec<T>,
    sxy: Vec<T>,
}

fn channel_stats<T: Real>(x: &[T], y: &[T], w: usize, h: usize, k: &[T; TAPS]) -> ChannelStats<T> {
    let mu_x = conv(x, w, h, k);
    let mu_y = conv(y, w, h, k);
    let xx: Vec<T> = x.iter().map(|v| *v * *v).collect();
    let yy: Vec<T> = y.iter().map(|v| *v * *v).collect();
    let xy: Vec<T> = x.iter().zip(y).map(|(a, b)| *a * *b).collect();
    let mut sxx = conv(&xx, w, h, k);
    let mut syy = conv(&yy, w, h, k);
    let mut sxy = conv(&xy, w, h, k);
    for p in 0..w * h {
        sxx[p] -= mu_x[p] * mu_x[p];
        syy[p] -= mu_y[p] * mu_y[p];
        sxy[p] -= mu_x[p] * mu_y[p];
    }
    ChannelStats {
        mu_x,
        mu_y,
        sxx,
        syy,
        sxy,
    }
}

fn ssim_map<T: Real>(st: &ChannelStats<T>, n: usize) -> Vec<T> {
    let (c1, c2) = (T::c(C1), T::c(C2));
    let two = T::c(2.0);
    (0..n)
        .map(|p| {
            let a1 = two * st.mu_x[p] * st.mu_y[p] + c1;
            let a2 = two * st.sxy[p] + c2;
            let b1 = st.mu_x[p] * st.mu_x[p] + st.mu_y[p] * st.mu_y[p] + c1;
            let b2 = st.sxx[p] + st.syy[p] + c2;
            a1 * a2 / (b1 * b2)
        })
        .collect()
}

/// Mean SSIM over pixels and channels.
pub fn ssim<T: Real>(x: &ImageBuffer<T>, y: &ImageBuffer<T>) -> T {
    assert_eq!((x.width(), x.height()), (y.width(), y.height()));
    let (w, h) = (x.width(), x.height());
    let k = kernel::<T>();
    let n = w * h;
    let mut total = T::zero();
    for ch in 0..3 {
        let xc = x.channel(ch);
        let yc = y.channel(ch);
        let st = channel_stats(&xc, &yc, w, h, &k);
        total += ssim_map(&st, n).into_iter().sum::<T>();
    }
    total / T::from_usize(3 * n).unwrap()
}

/// Mean SSIM and its gradient with respect to `x`.
pub fn ssim_with_grad<T: Real>(
    x: &ImageBuffer<T>,
    y: &ImageBuffer<T>,
) -> (T, ImageBuffer<T>) {
    assert_eq!((x.width(), x.height()), (y.width(), y.height()));
    let (w, h) = (x.width(), x.height());
    let k = kernel::<T>();
    let n = w * h;
    let upstream = T::one() / T::from_usize(3 * n).unwrap();
    let (c1, c2) = (T::c(C1), T::c(C2));
    let two = T::c(2.0);

    let mut total = T::zero();
    let mut grad = ImageBuffer::new(w, h);
    for ch in 0..3 {
        let xc = x.channel(ch);
        let yc = y.channel(ch);
        let st = channel_stats(&xc, &yc, w, h, &k);

        let mut g_mu = vec![T::zero(); n];
        let mut g_xx = vec![T::zero(); n];
        let mut g_xy = vec![T::zero(); n];
        for p in 0..n {
            let a1 = two * st.mu_x[p] * st.mu_y[p] + c1;
            let a2 = two * st.sxy[p] + c2;
            let b1 = st.mu_x[p] * st.mu_x[p] + st.mu_y[p] * st.mu_y[p] + c1;
            let b2 = st.sxx[p] + st.syy[p] + c2;
            let denom = b1 * b2;
            let s = a1 * a2 / denom;
            total += s;

            let ds_da1 = a2 / denom;
            let ds_da2 = a1 / denom;
            let ds_db1 = -s / b1;
            let ds_db2 = -s / b2;
            // mu_x feeds A1 and B1 directly, and sxy / sxx through the
            // centered-moment identities.
            g_mu[p] = upstream
                * (ds_da1 * two * st.mu_y[p] + ds_db1 * two * st.mu_x[p]
                    - ds_da2 * two * st.mu_y[p]
                    - ds_db2 * two * st.mu_x[p]);
            g_xx[p] = upstream * ds_db2;
            g_xy[p] = upstream * ds_da2 * two;
        }

        let back_mu = conv_adjoint(&g_mu, w, h, &k);
        let back_xx = conv_adjoint(&g_xx, w, h, &k);
        let back_xy = conv_adjoint(&g_xy, w, h, &k);
        let data = grad.data_mut();
        for p in 0..n {
            data[3 * p + ch] = back_mu[p] + two * xc[p] * back_xx[p] + yc[p] * back_xy[p];
        }
    }
    (total * upstream, grad)
}
