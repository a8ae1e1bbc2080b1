use super::{Element, Tensor};
use crate::error::{Error, Result};

pub const DEFAULT_GROUP_NORM_EPS: f64 = 1e-5;

/// Forward intermediates needed to differentiate group normalization.
#[derive(Clone, Debug)]
pub struct GroupNormSaved<T> {
    /// Normalized input before the affine transform.
    pub xhat: Tensor<T>,
    /// `1/sqrt(var + eps)` per (example, group).
    pub inv_std: Vec<T>,
    pub groups: usize,
}

fn check<T: Element>(x: &Tensor<T>, groups: usize, gamma: &Tensor<T>, beta: &Tensor<T>, eps: f64) -> Result<usize> {
    if x.ndim() < 2 {
        return Err(Error::InvalidShape {
            op: "group_norm",
            detail: format!("expected at least B×C, got {:?}", x.shape()),
        });
    }
    let c = x.shape()[1];
    if groups == 0 || !c.is_multiple_of(groups) {
        return Err(Error::InvalidArgument(format!(
            "group_norm: {c} channels are not divisible into {groups} groups"
        )));
    }
    if gamma.shape() != [c] || beta.shape() != [c] {
        return Err(Error::ShapeMismatch {
            op: "group_norm affine",
            lhs: gamma.shape().to_vec(),
            rhs: beta.shape().to_vec(),
        });
    }
    if !(eps > 0.0) {
        return Err(Error::InvalidArgument("group_norm eps must be positive".into()));
    }
    Ok(c)
}

/// Per-example, per-channel-group normalization followed by a per-channel affine map.
/// Statistics never cross the batch axis.
pub fn group_norm<T: Element>(
    x: &Tensor<T>,
    num_groups: usize,
    gamma: &Tensor<T>,
    beta: &Tensor<T>,
    eps: f64,
) -> Result<Tensor<T>> {
    group_norm_saved(x, num_groups, gamma, beta, eps).map(|(y, _)| y)
}

pub fn group_norm_saved<T: Element>(
    x: &Tensor<T>,
    num_groups: usize,
    gamma: &Tensor<T>,
    beta: &Tensor<T>,
    eps: f64,
) -> Result<(Tensor<T>, GroupNormSaved<T>)> {
    let c = check(x, num_groups, gamma, beta, eps)?;
    let b = x.batch();
    let spatial = x.row_len() / c;
    let group_len = (c / num_groups) * spatial;
    let n = T::lit(group_len as f64);
    let mut xhat = Tensor::zeros(x.shape());
    let mut y = Tensor::zeros(x.shape());
    let mut inv_std = Vec::with_capacity(b * num_groups);
    for bi in 0..b {
        let xb = x.row(bi);
        let hb = xhat.row_mut(bi);
        for g in 0..num_groups {
            let span = g * group_len..(g + 1) * group_len;
            let mean = xb[span.clone()].iter().copied().sum::<T>() / n;
            let var = xb[span.clone()].iter().map(|&v| (v - mean) * (v - mean)).sum::<T>() / n;
            let is = T::one() / (var + T::lit(eps)).sqrt();
            inv_std.push(is);
            for i in span {
                hb[i] = (xb[i] - mean) * is;
            }
        }
        let yb = y.row_mut(bi);
        let hb = xhat.row(bi);
        for ch in 0..c {
            let (ga, be) = (gamma.data()[ch], beta.data()[ch]);
            for i in ch * spatial..(ch + 1) * spatial {
                yb[i] = ga * hb[i] + be;
            }
        }
    }
    Ok((
        y,
        GroupNormSaved {
            xhat,
            inv_std,
            groups: num_groups,
        },
    ))
}

/// Batch-summed gradients of group normalization.
#[derive(Clone, Debug)]
pub struct GroupNormGrads<T> {
    pub dx: Tensor<T>,
    pub dgamma: Tensor<T>,
    pub dbeta: Tensor<T>,
}

pub fn group_norm_backward<T: Element>(
    dy: &Tensor<T>,
    saved: &GroupNormSaved<T>,
    gamma: &Tensor<T>,
) -> Result<GroupNormGrads<T>> {
    dy.check_same_shape(&saved.xhat, "group_norm_backward")?;
    let c = gamma.len();
    let b = dy.batch();
    let spatial = dy.row_len() / c;
    let groups = saved.groups;
    let group_len = (c / groups) * spatial;
    let n = T::lit(group_len as f64);
    let mut dx = Tensor::zeros(dy.shape());
    let mut dgamma = Tensor::zeros(&[c]);
    let mut dbeta = Tensor::zeros(&[c]);
    let mut dxhat = vec![T::zero(); dy.row_len()];
    for bi in 0..b {
        let (dyb, hb) = (dy.row(bi), saved.xhat.row(bi));
        for ch in 0..c {
            let ga = gamma.data()[ch];
            for i in ch * spatial..(ch + 1) * spatial {
                dxhat[i] = dyb[i] * ga;
                dgamma.data_mut()[ch] += dyb[i] * hb[i];
                dbeta.data_mut()[ch] += dyb[i];
            }
        }
        let dxb = dx.row_mut(bi);
        for g in 0..groups {
            let span = g * group_len..(g + 1) * group_len;
            let s1: T = dxhat[span.clone()].iter().copied().sum();
            let s2: T = span.clone().map(|i| dxhat[i] * hb[i]).sum();
            let is = saved.inv_std[bi * groups + g];
            for i in span {
                dxb[i] = is / n * (n * dxhat[i] - s1 - hb[i] * s2);
            }
        }
    }
    Ok(GroupNormGrads { dx, dgamma, dbeta })
}
