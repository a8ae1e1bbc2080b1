use super::{gemm, Element, MatRef, Tensor};
use crate::error::{Error, Result};

/// Spatial bookkeeping for a 2-D cross-correlation on one example.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct ConvGeometry {
    pub channels: usize,
    pub height: usize,
    pub width: usize,
    pub kh: usize,
    pub kw: usize,
    pub stride: usize,
    pub padding: usize,
    pub out_h: usize,
    pub out_w: usize,
}

impl ConvGeometry {
    pub fn new(
        channels: usize,
        height: usize,
        width: usize,
        kh: usize,
        kw: usize,
        stride: usize,
        padding: usize,
    ) -> Result<Self> {
        if stride == 0 {
            return Err(Error::InvalidArgument("conv2d stride must be at least 1".into()));
        }
        let (ph, pw) = (height + 2 * padding, width + 2 * padding);
        if kh == 0 || kw == 0 || kh > ph || kw > pw {
            return Err(Error::InvalidShape {
                op: "conv2d",
                detail: format!(
                    "kernel {kh}×{kw} does not fit padded input {ph}×{pw}: non-positive output extent"
                ),
            });
        }
        Ok(ConvGeometry {
            channels,
            height,
            width,
            kh,
            kw,
            stride,
            padding,
            out_h: (ph - kh) / stride + 1,
            out_w: (pw - kw) / stride + 1,
        })
    }

    pub fn patch_len(&self) -> usize {
        self.channels * self.kh * self.kw
    }

    pub fn positions(&self) -> usize {
        self.out_h * self.out_w
    }

    pub fn input_len(&self) -> usize {
        self.channels * self.height * self.width
    }

    /// Input coordinate hit by kernel tap `(ki, kj)` at output `(oh, ow)`, if inside the image.
    #[inline]
    fn source(&self, oh: usize, ow: usize, ki: usize, kj: usize) -> Option<(usize, usize)> {
        let y = (oh * self.stride + ki).checked_sub(self.padding)?;
        let x = (ow * self.stride + kj).checked_sub(self.padding)?;
        (y < self.height && x < self.width).then_some((y, x))
    }
}

fn conv_geometry<T: Element>(x: &Tensor<T>, w: &Tensor<T>, stride: usize, padding: usize) -> Result<ConvGeometry> {
    if x.ndim() != 4 || w.ndim() != 4 || x.shape()[1] != w.shape()[1] {
        return Err(Error::ShapeMismatch {
            op: "conv2d",
            lhs: x.shape().to_vec(),
            rhs: w.shape().to_vec(),
        });
    }
    let s = x.shape();
    ConvGeometry::new(s[1], s[2], s[3], w.shape()[2], w.shape()[3], stride, padding)
}

/// Unfolds one `C×H×W` example into a `(C·kh·kw) × (out_h·out_w)` patch matrix.
pub fn im2col<T: Element>(x: &[T], g: &ConvGeometry) -> Vec<T> {
    let p = g.positions();
    let mut cols = vec![T::zero(); g.patch_len() * p];
    for c in 0..g.channels {
        let plane = &x[c * g.height * g.width..(c + 1) * g.height * g.width];
        for ki in 0..g.kh {
            for kj in 0..g.kw {
                let row = ((c * g.kh + ki) * g.kw + kj) * p;
                for oh in 0..g.out_h {
                    for ow in 0..g.out_w {
                        if let Some((y, xx)) = g.source(oh, ow, ki, kj) {
                            cols[row + oh * g.out_w + ow] = plane[y * g.width + xx];
                        }
                    }
                }
            }
        }
    }
    cols
}

/// Adjoint of [`im2col`]: scatters patch-matrix entries back, accumulating into `dx`.
pub fn col2im<T: Element>(cols: &[T], g: &ConvGeometry, dx: &mut [T]) {
    let p = g.positions();
    for c in 0..g.channels {
        let plane = &mut dx[c * g.height * g.width..(c + 1) * g.height * g.width];
        for ki in 0..g.kh {
            for kj in 0..g.kw {
                let row = ((c * g.kh + ki) * g.kw + kj) * p;
                for oh in 0..g.out_h {
                    for ow in 0..g.out_w {
                        if let Some((y, xx)) = g.source(oh, ow, ki, kj) {
                            plane[y * g.width + xx] += cols[row + oh * g.out_w + ow];
                        }
                    }
                }
            }
        }
    }
}

/// Zero-padded cross-correlation `x: B×C×H×W`, `w: F×C×kh×kw` -> `B×F×H'×W'`.
///
/// Uses the im2col + GEMM path; [`conv2d_direct`] is the loop reference.
pub fn conv2d<T: Element>(x: &Tensor<T>, w: &Tensor<T>, stride: usize, padding: usize) -> Result<Tensor<T>> {
    conv2d_im2col(x, w, stride, padding)
}

pub fn conv2d_im2col<T: Element>(x: &Tensor<T>, w: &Tensor<T>, stride: usize, padding: usize) -> Result<Tensor<T>> {
    let g = conv_geometry(x, w, stride, padding)?;
    let (b, f) = (x.shape()[0], w.shape()[0]);
    let (k, p) = (g.patch_len(), g.positions());
    let mut out = vec![T::zero(); b * f * p];
    for (i, out_b) in out.chunks_mut(f * p).enumerate() {
        let cols = im2col(x.row(i), &g);
        gemm(
            T::one(),
            MatRef::new(w.data(), f, k),
            MatRef::new(&cols, k, p),
            T::zero(),
            out_b,
        );
    }
    Tensor::new(vec![b, f, g.out_h, g.out_w], out)
}

pub fn conv2d_direct<T: Element>(x: &Tensor<T>, w: &Tensor<T>, stride: usize, padding: usize) -> Result<Tensor<T>> {
    let g = conv_geometry(x, w, stride, padding)?;
    let (b, f) = (x.shape()[0], w.shape()[0]);
    let mut out = Tensor::zeros(&[b, f, g.out_h, g.out_w]);
    let wd = w.data();
    for bi in 0..b {
        let xb = x.row(bi);
        let ob = out.row_mut(bi);
        for fi in 0..f {
            for oh in 0..g.out_h {
                for ow in 0..g.out_w {
                    let mut acc = T::zero();
                    for c in 0..g.channels {
                        for ki in 0..g.kh {
                            for kj in 0..g.kw {
                                if let Some((y, xx)) = g.source(oh, ow, ki, kj) {
                                    acc += wd[((fi * g.channels + c) * g.kh + ki) * g.kw + kj]
                                        * xb[(c * g.height + y) * g.width + xx];
                                }
                            }
                        }
                    }
                    ob[(fi * g.out_h + oh) * g.out_w + ow] = acc;
                }
            }
        }
    }
    Ok(out)
}

/// Gradient of a conv2d output adjoint `delta: B×F×H'×W'` with respect to its input.
pub fn conv2d_input_grad<T: Element>(
    delta: &Tensor<T>,
    w: &Tensor<T>,
    input_shape: &[usize],
    stride: usize,
    padding: usize,
) -> Result<Tensor<T>> {
    let probe = Tensor::<T>::zeros(&[1, input_shape[1], input_shape[2], input_shape[3]]);
    let g = conv_geometry(&probe, w, stride, padding)?;
    let (b, f) = (input_shape[0], w.shape()[0]);
    if delta.shape() != [b, f, g.out_h, g.out_w] {
        return Err(Error::ShapeMismatch {
            op: "conv2d_input_grad",
            lhs: delta.shape().to_vec(),
            rhs: vec![b, f, g.out_h, g.out_w],
        });
    }
    let (k, p) = (g.patch_len(), g.positions());
    let mut dx = Tensor::zeros(input_shape);
    let mut dcols = vec![T::zero(); k * p];
    for bi in 0..b {
        gemm(
            T::one(),
            MatRef::new(w.data(), f, k).t(),
            MatRef::new(delta.row(bi), f, p),
            T::zero(),
            &mut dcols,
        );
        col2im(&dcols, &g, dx.row_mut(bi));
    }
    Ok(dx)
}

/// Batch-summed weight gradient of a conv2d layer.
pub fn conv2d_weight_grad<T: Element>(
    delta: &Tensor<T>,
    x: &Tensor<T>,
    weight_shape: &[usize],
    stride: usize,
    padding: usize,
) -> Result<Tensor<T>> {
    let probe = Tensor::<T>::zeros(weight_shape);
    let g = conv_geometry(x, &probe, stride, padding)?;
    let (b, f) = (x.shape()[0], weight_shape[0]);
    let (k, p) = (g.patch_len(), g.positions());
    if delta.shape() != [b, f, g.out_h, g.out_w] {
        return Err(Error::ShapeMismatch {
            op: "conv2d_weight_grad",
            lhs: delta.shape().to_vec(),
            rhs: vec![b, f, g.out_h, g.out_w],
        });
    }
    let mut dw = vec![T::zero(); f * k];
    for bi in 0..b {
        let cols = im2col(x.row(bi), &g);
        gemm(
            T::one(),
            MatRef::new(delta.row(bi), f, p),
            MatRef::new(&cols, k, p).t(),
            T::one(),
            &mut dw,
        );
    }
    Tensor::new(weight_shape.to_vec(), dw)
}

/// Output of a max-pool along with the flat input index chosen for every output cell.
#[derive(Clone, Debug)]
pub struct MaxPool<T> {
    pub out: Tensor<T>,
    pub argmax: Vec<usize>,
}

/// Non-overlapping or strided max-pool over `B×C×H×W`; ties resolve to the first maximum.
pub fn max_pool2d<T: Element>(x: &Tensor<T>, kernel: usize, stride: usize) -> Result<MaxPool<T>> {
    if x.ndim() != 4 || kernel == 0 || stride == 0 {
        return Err(Error::InvalidShape {
            op: "max_pool2d",
            detail: format!("input {:?}, kernel {kernel}, stride {stride}", x.shape()),
        });
    }
    let [b, c, h, w] = [x.shape()[0], x.shape()[1], x.shape()[2], x.shape()[3]];
    if h < kernel || w < kernel {
        return Err(Error::InvalidShape {
            op: "max_pool2d",
            detail: format!("spatial extent {h}×{w} smaller than pooling window {kernel}"),
        });
    }
    let (oh, ow) = ((h - kernel) / stride + 1, (w - kernel) / stride + 1);
    let mut out = Vec::with_capacity(b * c * oh * ow);
    let mut argmax = Vec::with_capacity(out.capacity());
    let xd = x.data();
    for plane in 0..b * c {
        let base = plane * h * w;
        for i in 0..oh {
            for j in 0..ow {
                let mut best = base + i * stride * w + j * stride;
                for di in 0..kernel {
                    for dj in 0..kernel {
                        let idx = base + (i * stride + di) * w + j * stride + dj;
                        if xd[idx] > xd[best] {
                            best = idx;
                        }
                    }
                }
                out.push(xd[best]);
                argmax.push(best);
            }
        }
    }
    Ok(MaxPool {
        out: Tensor::new(vec![b, c, oh, ow], out)?,
        argmax,
    })
}

pub fn max_pool2d_backward<T: Element>(delta: &Tensor<T>, argmax: &[usize], input_shape: &[usize]) -> Tensor<T> {
    let mut dx = Tensor::zeros(input_shape);
    let d = dx.data_mut();
    for (&idx, &g) in argmax.iter().zip(delta.data()) {
        d[idx] += g;
    }
    dx
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn all_ones_kernel_sums_window() {
        let x = Tensor::<f64>::full(&[1, 1, 3, 3], 1.0);
        let w = Tensor::full(&[1, 1, 3, 3], 1.0);
        let y = conv2d(&x, &w, 1, 0).unwrap();
        assert_eq!(y.shape(), &[1, 1, 1, 1]);
        assert_eq!(y.data(), &[9.0]);
    }

    #[test]
    fn delta_kernel_is_identity_with_same_padding() {
        let x = Tensor::<f64>::from_fn(&[2, 1, 5, 4], |i| (i as f64 * 0.37).sin());
        let mut w = Tensor::zeros(&[1, 1, 3, 3]);
        w.data_mut()[4] = 1.0;
        assert_eq!(conv2d(&x, &w, 1, 1).unwrap(), x);
        assert_eq!(conv2d_direct(&x, &w, 1, 1).unwrap(), x);
    }

    #[test]
    fn output_extent_floors() {
        let g = ConvGeometry::new(1, 7, 6, 3, 3, 2, 1).unwrap();
        assert_eq!((g.out_h, g.out_w), (4, 3));
    }

    #[test]
    fn kernel_larger_than_padded_input_is_rejected() {
        let x = Tensor::<f64>::zeros(&[1, 1, 2, 2]);
        let w = Tensor::zeros(&[1, 1, 5, 5]);
        assert!(conv2d(&x, &w, 1, 0).is_err());
        assert!(ConvGeometry::new(1, 4, 4, 3, 3, 0, 0).is_err());
    }

    #[test]
    fn pool_picks_first_of_ties() {
        let x = Tensor::<f64>::from_f64(&[1, 1, 2, 2], &[1.0, 1.0, 0.0, 1.0]).unwrap();
        let p = max_pool2d(&x, 2, 2).unwrap();
        assert_eq!(p.argmax, vec![0]);
        assert_eq!(p.out.data(), &[1.0]);
    }
}
