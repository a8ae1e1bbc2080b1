use crate::autodiff::{Graph, ParamTree};
use crate::error::{invalid, Result};
use crate::tensor::Element;

use super::ClipMethod;

/// `v·min(1, C/‖v‖)`; a zero gradient is returned unchanged.
pub fn clip<T: Element>(v: &ParamTree<T>, c: f64) -> Result<ParamTree<T>> {
    check_clip(c)?;
    let mut out = v.clone();
    out.scale_mut(T::lit(clip_weight(v.norm().as_f64(), c)));
    Ok(out)
}

fn check_clip(c: f64) -> Result<()> {
    if c > 0.0 {
        Ok(())
    } else {
        Err(invalid(format!("clip norm must be positive, got {c}")))
    }
}

/// `min(1, C/n)` with weight 1 for zero norms.
pub fn clip_weight(norm: f64, c: f64) -> f64 {
    if norm > c {
        c / norm
    } else {
        1.0
    }
}

/// Sum of clipped per-example gradients for one recorded batch.
#[derive(Clone, Debug)]
pub struct ClippedSum<T: Element> {
    pub grads: ParamTree<T>,
    /// Pre-clip per-example gradient norms (empty when clipping is off).
    pub norms: Vec<f64>,
}

impl<T: Element> ClippedSum<T> {
    pub fn clipped_count(&self, c: f64) -> usize {
        self.norms.iter().filter(|&&n| n > c).count()
    }
}

/// `Σᵢ clip(∇ℓᵢ)`, where `ℓᵢ` includes `decay/2·‖θ‖²` when `decay > 0`.
///
/// `clip_norm = None` returns the plain gradient sum.
pub fn clipped_grad_sum<T: Element>(
    graph: &Graph<'_, T>,
    clip_norm: Option<f64>,
    decay: f64,
    method: ClipMethod,
) -> Result<ClippedSum<T>> {
    let lam = T::lit(decay);
    let b = graph.batch();
    let Some(c) = clip_norm else {
        return Ok(ClippedSum {
            grads: graph.weighted_backward_with_decay(&vec![T::one(); b], lam)?,
            norms: Vec::new(),
        });
    };
    check_clip(c)?;
    match method {
        ClipMethod::Fast => {
            let norms: Vec<f64> = graph
                .per_example_grad_norms_with_decay(lam)?
                .data()
                .iter()
                .map(|n| n.as_f64())
                .collect();
            let w: Vec<T> = norms.iter().map(|&n| T::lit(clip_weight(n, c))).collect();
            Ok(ClippedSum {
                grads: graph.weighted_backward_with_decay(&w, lam)?,
                norms,
            })
        }
        ClipMethod::Naive => {
            let params = graph.params();
            let mut sum = params.zeros_like_trainable();
            let mut norms = Vec::with_capacity(b);
            for mut g in graph.per_example_grads()? {
                if decay != 0.0 {
                    for p in params.trainable() {
                        g.value_mut(&p.name)?.axpy(lam, &p.value)?;
                    }
                }
                let n = g.norm().as_f64();
                norms.push(n);
                g.scale_mut(T::lit(clip_weight(n, c)));
                sum.axpy(T::one(), &g)?;
            }
            Ok(ClippedSum { grads: sum, norms })
        }
    }
}
