use super::adam::LayerParams;
use super::tensor::{gemm, Scalar, Tensor4};
use super::NnError;

/// Unfolds one `c x h x w` image into `(c*k*k) x (h*w)` columns for a
/// stride-1 convolution with zero "same" padding.
fn im2col<T: Scalar>(x: &[T], c: usize, h: usize, w: usize, k: usize, col: &mut [T]) {
    let hw = h * w;
    let r = (k / 2) as isize;
    for ci in 0..c {
        let src = &x[ci * hw..(ci + 1) * hw];
        for ky in 0..k {
            for kx in 0..k {
                let row = (ci * k + ky) * k + kx;
                let dst = &mut col[row * hw..(row + 1) * hw];
                let dy = ky as isize - r;
                let dx = kx as isize - r;
                let x0 = (-dx).max(0) as usize;
                let x1 = (w as isize - dx).min(w as isize) as usize;
                for y in 0..h {
                    let d = &mut dst[y * w..(y + 1) * w];
                    let sy = y as isize + dy;
                    if sy < 0 || sy >= h as isize {
                        d.fill(T::zero());
                        continue;
                    }
                    let s = &src[sy as usize * w..(sy as usize + 1) * w];
                    d[..x0].fill(T::zero());
                    d[x1..].fill(T::zero());
                    let sx0 = (x0 as isize + dx) as usize;
                    d[x0..x1].copy_from_slice(&s[sx0..sx0 + (x1 - x0)]);
                }
            }
        }
    }
}

/// Adjoint of [`im2col`]: accumulates columns back into the image.
fn col2im<T: Scalar>(col: &[T], c: usize, h: usize, w: usize, k: usize, x: &mut [T]) {
    let hw = h * w;
    let r = (k / 2) as isize;
    for ci in 0..c {
        let dst = &mut x[ci * hw..(ci + 1) * hw];
        for ky in 0..k {
            for kx in 0..k {
                let row = (ci * k + ky) * k + kx;
                let src = &col[row * hw..(row + 1) * hw];
                let dy = ky as isize - r;
                let dx = kx as isize - r;
                let x0 = (-dx).max(0) as usize;
                let x1 = (w as isize - dx).min(w as isize) as usize;
                for y in 0..h {
                    let sy = y as isize + dy;
                    if sy < 0 || sy >= h as isize {
                        continue;
                    }
                    let s = &src[y * w..(y + 1) * w];
                    let base = sy as usize * w;
                    let sx0 = (x0 as isize + dx) as usize;
                    for (t, &v) in dst[base + sx0..base + sx0 + (x1 - x0)].iter_mut().zip(&s[x0..x1]) {
                        *t += v;
                    }
                }
            }
        }
    }
}

fn check_conv<T: Scalar>(x: &Tensor4<T>, p: &LayerParams<T>) -> Result<(), NnError> {
    if x.c != p.in_ch {
        return Err(NnError::Shape(format!("conv expects {} input channels, got {}", p.in_ch, x.c)));
    }
    if p.k % 2 == 0 {
        return Err(NnError::Shape(format!("kernel size {} must be odd", p.k)));
    }
    Ok(())
}

/// Stride-1 cross-correlation with "same" zero padding plus bias.
pub fn conv2d_forward<T: Scalar>(x: &Tensor4<T>, p: &LayerParams<T>) -> Result<Tensor4<T>, NnError> {
    check_conv(x, p)?;
    let (hw, kk) = (x.plane_len(), p.in_ch * p.k * p.k);
    let mut y = Tensor4::zeros(x.n, p.out_ch, x.h, x.w);
    let mut col = if p.k == 1 { Vec::new() } else { vec![T::zero(); kk * hw] };
    for b in 0..x.n {
        let src: &[T] = if p.k == 1 {
            x.image(b)
        } else {
            im2col(x.image(b), x.c, x.h, x.w, p.k, &mut col);
            &col
        };
        let out = y.image_mut(b);
        for (o, &bias) in out.chunks_mut(hw).zip(&p.bias) {
            o.fill(bias);
        }
        gemm(p.out_ch, kk, hw, T::one(), &p.weight, false, src, false, T::one(), out);
    }
    Ok(y)
}

/// Accumulates kernel and bias gradients; returns the input gradient if
/// `need_dx`.
pub fn conv2d_backward<T: Scalar>(
    x: &Tensor4<T>,
    p: &mut LayerParams<T>,
    dy: &Tensor4<T>,
    need_dx: bool,
) -> Result<Option<Tensor4<T>>, NnError> {
    check_conv(x, p)?;
    if dy.dims() != [x.n, p.out_ch, x.h, x.w] {
        return Err(NnError::Shape(format!("conv output gradient {:?} vs input {:?}", dy.dims(), x.dims())));
    }
    let (hw, kk) = (x.plane_len(), p.in_ch * p.k * p.k);
    let mut col = if p.k == 1 { Vec::new() } else { vec![T::zero(); kk * hw] };
    let mut dcol = if need_dx && p.k != 1 { vec![T::zero(); kk * hw] } else { Vec::new() };
    let mut dx = need_dx.then(|| Tensor4::zeros(x.n, x.c, x.h, x.w));
    for b in 0..x.n {
        let g = dy.image(b);
        for (gb, plane) in p.grad_b.iter_mut().zip(g.chunks(hw)) {
            *gb += plane.iter().copied().sum::<T>();
        }
        let src: &[T] = if p.k == 1 {
            x.image(b)
        } else {
            im2col(x.image(b), x.c, x.h, x.w, p.k, &mut col);
            &col
        };
        gemm(p.out_ch, hw, kk, T::one(), g, false, src, true, T::one(), &mut p.grad_w);
        if let Some(dx) = dx.as_mut() {
            if p.k == 1 {
                gemm(kk, p.out_ch, hw, T::one(), &p.weight, true, g, false, T::zero(), dx.image_mut(b));
            } else {
                gemm(kk, p.out_ch, hw, T::one(), &p.weight, true, g, false, T::zero(), &mut dcol);
                col2im(&dcol, x.c, x.h, x.w, p.k, dx.image_mut(b));
            }
        }
    }
    Ok(dx)
}

pub fn relu_forward<T: Scalar>(x: &mut Tensor4<T>) {
    for v in x.data.iter_mut() {
        if !(*v > T::zero()) {
            *v = T::zero();
        }
    }
}

/// Masks `dy` in place using the forward output `y`.
pub fn relu_backward<T: Scalar>(y: &Tensor4<T>, dy: &mut Tensor4<T>) {
    for (g, &v) in dy.data.iter_mut().zip(&y.data) {
        if !(v > T::zero()) {
            *g = T::zero();
        }
    }
}

pub fn sigmoid_forward<T: Scalar>(x: &mut Tensor4<T>) {
    for v in x.data.iter_mut() {
        *v = T::one() / (T::one() + (-*v).exp());
    }
}

/// Scales `dy` in place by `y (1 - y)` using the forward output `y`.
pub fn sigmoid_backward<T: Scalar>(y: &Tensor4<T>, dy: &mut Tensor4<T>) {
    for (g, &v) in dy.data.iter_mut().zip(&y.data) {
        *g *= v * (T::one() - v);
    }
}

/// Clamp margin keeping the logit of an input intensity finite.
pub const LOGIT_MARGIN: f64 = 1e-3;

fn clamp_intensity<T: Scalar>(v: T) -> T {
    v.max(T::of(LOGIT_MARGIN)).min(T::of(1.0 - LOGIT_MARGIN))
}

/// `y = sigmoid(logit(clamp(x)) + d)`: a sigmoid head centred on the image
/// `x`, so that `d = 0` reproduces the (clamped) image.
pub fn logit_skip_forward<T: Scalar>(x: &Tensor4<T>, d: &Tensor4<T>) -> Result<Tensor4<T>, NnError> {
    if x.dims() != d.dims() {
        return Err(NnError::Shape(format!("logit skip: image {:?} vs correction {:?}", x.dims(), d.dims())));
    }
    let data = x
        .data
        .iter()
        .zip(&d.data)
        .map(|(&a, &b)| {
            let a = clamp_intensity(a);
            let z = (a / (T::one() - a)).ln() + b;
            T::one() / (T::one() + (-z).exp())
        })
        .collect();
    Tensor4::from_vec(x.n, x.c, x.h, x.w, data)
}

/// Gradients with respect to the image and the correction.
pub fn logit_skip_backward<T: Scalar>(x: &Tensor4<T>, y: &Tensor4<T>, dy: &Tensor4<T>) -> (Tensor4<T>, Tensor4<T>) {
    let mut dd = dy.clone();
    sigmoid_backward(y, &mut dd);
    let (lo, hi) = (T::of(LOGIT_MARGIN), T::of(1.0 - LOGIT_MARGIN));
    let mut dx = dd.clone();
    for (g, &a) in dx.data.iter_mut().zip(&x.data) {
        *g = if a > lo && a < hi { *g / (a * (T::one() - a)) } else { T::zero() };
    }
    (dx, dd)
}

fn check_even<T: Scalar>(x: &Tensor4<T>) -> Result<(), NnError> {
    if x.h % 2 != 0 || x.w % 2 != 0 {
        return Err(NnError::OddDims { h: x.h, w: x.w });
    }
    Ok(())
}

/// Offset of the first maximum of each 2x2 window, scanned row-major.
#[inline]
fn window_argmax<T: Scalar>(plane: &[T], w: usize, y: usize, x: usize) -> usize {
    let base = 2 * y * w + 2 * x;
    let mut best = base;
    for o in [base + 1, base + w, base + w + 1] {
        if plane[o] > plane[best] {
            best = o;
        }
    }
    best
}

pub fn maxpool2x2_forward<T: Scalar>(x: &Tensor4<T>) -> Result<Tensor4<T>, NnError> {
    check_even(x)?;
    let (ho, wo) = (x.h / 2, x.w / 2);
    let mut y = Tensor4::zeros(x.n, x.c, ho, wo);
    for b in 0..x.n {
        for c in 0..x.c {
            let src = x.plane(b, c);
            let dst = y.plane_mut(b, c);
            for yy in 0..ho {
                for xx in 0..wo {
                    dst[yy * wo + xx] = src[window_argmax(src, x.w, yy, xx)];
                }
            }
        }
    }
    Ok(y)
}

/// Routes each output gradient to the first maximum of its window.
pub fn maxpool2x2_backward<T: Scalar>(x: &Tensor4<T>, dy: &Tensor4<T>) -> Result<Tensor4<T>, NnError> {
    check_even(x)?;
    let (ho, wo) = (x.h / 2, x.w / 2);
    if dy.dims() != [x.n, x.c, ho, wo] {
        return Err(NnError::Shape("maxpool gradient shape".into()));
    }
    let mut dx = Tensor4::zeros(x.n, x.c, x.h, x.w);
    for b in 0..x.n {
        for c in 0..x.c {
            let src = x.plane(b, c);
            let g = dy.plane(b, c);
            let d = dx.plane_mut(b, c);
            for yy in 0..ho {
                for xx in 0..wo {
                    d[window_argmax(src, x.w, yy, xx)] += g[yy * wo + xx];
                }
            }
        }
    }
    Ok(dx)
}

/// Nearest-neighbour 2x upsampling.
pub fn upsample2x_forward<T: Scalar>(x: &Tensor4<T>) -> Tensor4<T> {
    let (h, w) = (2 * x.h, 2 * x.w);
    let mut y = Tensor4::zeros(x.n, x.c, h, w);
    for b in 0..x.n {
        for c in 0..x.c {
            let src = x.plane(b, c);
            let dst = y.plane_mut(b, c);
            for yy in 0..h {
                let s = &src[(yy / 2) * x.w..(yy / 2 + 1) * x.w];
                for (xx, d) in dst[yy * w..(yy + 1) * w].iter_mut().enumerate() {
                    *d = s[xx / 2];
                }
            }
        }
    }
    y
}

pub fn upsample2x_backward<T: Scalar>(dy: &Tensor4<T>) -> Result<Tensor4<T>, NnError> {
    check_even(dy)?;
    let (h, w) = (dy.h / 2, dy.w / 2);
    let mut dx = Tensor4::zeros(dy.n, dy.c, h, w);
    for b in 0..dy.n {
        for c in 0..dy.c {
            let g = dy.plane(b, c);
            let d = dx.plane_mut(b, c);
            for yy in 0..dy.h {
                for xx in 0..dy.w {
                    d[(yy / 2) * w + xx / 2] += g[yy * dy.w + xx];
                }
            }
        }
    }
    Ok(dx)
}

/// Stacks tensors along the channel axis.
pub fn concat_channels_forward<T: Scalar>(xs: &[&Tensor4<T>]) -> Result<Tensor4<T>, NnError> {
    let first = xs.first().ok_or_else(|| NnError::Shape("concat of nothing".into()))?;
    let (n, h, w) = (first.n, first.h, first.w);
    if xs.iter().any(|x| x.n != n || x.h != h || x.w != w) {
        return Err(NnError::Shape("concat operands differ in batch or spatial size".into()));
    }
    let c: usize = xs.iter().map(|x| x.c).sum();
    let mut data = Vec::with_capacity(n * c * h * w);
    for b in 0..n {
        for x in xs {
            data.extend_from_slice(x.image(b));
        }
    }
    Tensor4::from_vec(n, c, h, w, data)
}

/// Splits a concatenated gradient back into per-operand pieces.
pub fn concat_channels_backward<T: Scalar>(dy: &Tensor4<T>, channels: &[usize]) -> Result<Vec<Tensor4<T>>, NnError> {
    if channels.iter().sum::<usize>() != dy.c {
        return Err(NnError::Shape("concat split does not cover all channels".into()));
    }
    let p = dy.plane_len();
    let mut out: Vec<Tensor4<T>> = channels.iter().map(|&c| Tensor4::zeros(dy.n, c, dy.h, dy.w)).collect();
    for b in 0..dy.n {
        let src = dy.image(b);
        let mut off = 0;
        for (t, &c) in out.iter_mut().zip(channels) {
            t.image_mut(b).copy_from_slice(&src[off..off + c * p]);
            off += c * p;
        }
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    use super::*;

    fn random_tensor(rng: &mut ChaCha8Rng, n: usize, c: usize, h: usize, w: usize) -> Tensor4<f64> {
        Tensor4::from_vec(n, c, h, w, (0..n * c * h * w).map(|_| rng.random_range(-1.0..1.0)).collect()).unwrap()
    }

    fn dot(a: &Tensor4<f64>, b: &Tensor4<f64>) -> f64 {
        a.data.iter().zip(&b.data).map(|(x, y)| x * y).sum()
    }

    /// Checks `n_checks` random coordinates of `grad` against central
    /// differences of `f`.
    fn check_grad(
        x: &mut Vec<f64>,
        grad: &[f64],
        f: &mut dyn FnMut(&[f64]) -> f64,
        rng: &mut ChaCha8Rng,
        n_checks: usize,
    ) {
        let d = 1e-4;
        for _ in 0..n_checks {
            let i = rng.random_range(0..x.len());
            let orig = x[i];
            x[i] = orig + d;
            let fp = f(x);
            x[i] = orig - d;
            let fm = f(x);
            x[i] = orig;
            let fd = (fp - fm) / (2.0 * d);
            let tol = 1e-4 * fd.abs().max(grad[i].abs()).max(1e-6);
            assert!((fd - grad[i]).abs() <= tol, "coordinate {i}: fd {fd} vs analytic {}", grad[i]);
        }
    }

    #[test]
    fn identity_kernel_reproduces_input() {
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let x = random_tensor(&mut rng, 2, 3, 5, 4);
        let mut p = LayerParams::zeros(3, 3, 3);
        for c in 0..3 {
            p.weight[(c * 3 + c) * 9 + 4] = 1.0;
        }
        assert_eq!(conv2d_forward(&x, &p).unwrap(), x);
    }

    #[test]
    fn ones_kernel_on_constant_input() {
        let x = Tensor4::from_vec(1, 1, 4, 4, vec![0.5; 16]).unwrap();
        let mut p = LayerParams::zeros(1, 1, 3);
        p.weight.fill(1.0);
        p.bias[0] = 0.25;
        let y = conv2d_forward(&x, &p).unwrap();
        assert_eq!(y.data[5], 9.0 * 0.5 + 0.25);
        assert_eq!(y.data[0], 4.0 * 0.5 + 0.25);
    }

    #[test]
    fn conv_rejects_channel_mismatch() {
        let x = Tensor4::<f64>::zeros(1, 2, 4, 4);
        assert!(conv2d_forward(&x, &LayerParams::zeros(1, 3, 3)).is_err());
    }

    #[test]
    fn conv_gradients_match_finite_differences() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        for &k in &[1usize, 3] {
            let x = random_tensor(&mut rng, 2, 3, 5, 6);
            let mut p = LayerParams::<f64>::he_normal(4, 3, k, &mut rng);
            for b in p.bias.iter_mut() {
                *b = rng.random_range(-0.5..0.5);
            }
            let r = random_tensor(&mut rng, 2, 4, 5, 6);
            let dx = conv2d_backward(&x, &mut p, &r, true).unwrap().unwrap();
            // input
            let mut xv = x.data.clone();
            let p0 = p.clone();
            check_grad(
                &mut xv,
                &dx.data,
                &mut |v| dot(&conv2d_forward(&Tensor4::from_vec(2, 3, 5, 6, v.to_vec()).unwrap(), &p0).unwrap(), &r),
                &mut rng,
                100,
            );
            // weights
            let mut wv = p.weight.clone();
            let gw = p.grad_w.clone();
            check_grad(
                &mut wv,
                &gw,
                &mut |v| {
                    let mut q = p0.clone();
                    q.weight = v.to_vec();
                    dot(&conv2d_forward(&x, &q).unwrap(), &r)
                },
                &mut rng,
                100,
            );
            let mut bv = p.bias.clone();
            let gb = p.grad_b.clone();
            check_grad(
                &mut bv,
                &gb,
                &mut |v| {
                    let mut q = p0.clone();
                    q.bias = v.to_vec();
                    dot(&conv2d_forward(&x, &q).unwrap(), &r)
                },
                &mut rng,
                4,
            );
        }
    }

    #[test]
    fn maxpool_tie_break_and_increasing() {
        let x = Tensor4::from_vec(1, 1, 2, 4, vec![1.0; 8]).unwrap();
        let dy = Tensor4::from_vec(1, 1, 1, 2, vec![1.0, 2.0]).unwrap();
        let dx = maxpool2x2_backward(&x, &dy).unwrap();
        assert_eq!(dx.data, vec![1.0, 0.0, 2.0, 0.0, 0.0, 0.0, 0.0, 0.0]);
        let inc = Tensor4::from_vec(1, 1, 2, 4, (0..8).map(|v| v as f64).collect()).unwrap();
        assert_eq!(maxpool2x2_forward(&inc).unwrap().data, vec![5.0, 7.0]);
        let dx = maxpool2x2_backward(&inc, &dy).unwrap();
        assert_eq!(dx.data, vec![0.0, 0.0, 0.0, 0.0, 0.0, 1.0, 0.0, 2.0]);
        assert!(matches!(maxpool2x2_forward(&Tensor4::<f64>::zeros(1, 1, 3, 4)), Err(NnError::OddDims { .. })));
    }

    #[test]
    fn maxpool_gradient_away_from_ties() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let x = random_tensor(&mut rng, 2, 2, 6, 4);
        let r = random_tensor(&mut rng, 2, 2, 3, 2);
        let dx = maxpool2x2_backward(&x, &r).unwrap();
        // random continuous values: window maxima are separated by far more than the step
        let mut xv = x.data.clone();
        check_grad(
            &mut xv,
            &dx.data,
            &mut |v| dot(&maxpool2x2_forward(&Tensor4::from_vec(2, 2, 6, 4, v.to_vec()).unwrap()).unwrap(), &r),
            &mut rng,
            100,
        );
    }

    #[test]
    fn upsample_adjoint_and_gradient() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let x = random_tensor(&mut rng, 1, 2, 3, 2);
        let y = upsample2x_forward(&x);
        assert_eq!(y.dims(), [1, 2, 6, 4]);
        assert_eq!(y.data[0], x.data[0]);
        assert_eq!(y.data[4 + 1], x.data[0]);
        let r = random_tensor(&mut rng, 1, 2, 6, 4);
        let dx = upsample2x_backward(&r).unwrap();
        assert!((dot(&y, &r) - dot(&x, &dx)).abs() < 1e-12);
        let mut xv = x.data.clone();
        check_grad(
            &mut xv,
            &dx.data,
            &mut |v| dot(&upsample2x_forward(&Tensor4::from_vec(1, 2, 3, 2, v.to_vec()).unwrap()), &r),
            &mut rng,
            12,
        );
    }

    #[test]
    fn concat_then_split_is_identity() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let a = random_tensor(&mut rng, 2, 1, 3, 3);
        let b = random_tensor(&mut rng, 2, 3, 3, 3);
        let y = concat_channels_forward(&[&a, &b]).unwrap();
        assert_eq!(y.c, 4);
        let parts = concat_channels_backward(&y, &[1, 3]).unwrap();
        assert_eq!(parts[0], a);
        assert_eq!(parts[1], b);
        assert!(concat_channels_forward(&[&a, &random_tensor(&mut rng, 2, 1, 2, 3)]).is_err());
    }

    #[test]
    fn activations() {
        let mut x = Tensor4::from_vec(1, 1, 1, 3, vec![-1.0, 0.0, 2.0]).unwrap();
        let mut s = x.clone();
        relu_forward(&mut x);
        assert_eq!(x.data, vec![0.0, 0.0, 2.0]);
        let mut g = Tensor4::from_vec(1, 1, 1, 3, vec![1.0, 1.0, 1.0]).unwrap();
        relu_backward(&x, &mut g);
        assert_eq!(g.data, vec![0.0, 0.0, 1.0]);
        sigmoid_forward(&mut s);
        assert_eq!(s.data[1], 0.5);
        let mut g = Tensor4::from_vec(1, 1, 1, 3, vec![1.0, 1.0, 1.0]).unwrap();
        sigmoid_backward(&s, &mut g);
        assert_eq!(g.data[1], 0.25);
        // finite differences of sigmoid
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let x = random_tensor(&mut rng, 1, 2, 3, 3);
        let r = random_tensor(&mut rng, 1, 2, 3, 3);
        let mut y = x.clone();
        sigmoid_forward(&mut y);
        let mut g = r.clone();
        sigmoid_backward(&y, &mut g);
        let mut xv = x.data.clone();
        check_grad(
            &mut xv,
            &g.data,
            &mut |v| {
                let mut t = Tensor4::from_vec(1, 2, 3, 3, v.to_vec()).unwrap();
                sigmoid_forward(&mut t);
                dot(&t, &r)
            },
            &mut rng,
            18,
        );
    }
}
