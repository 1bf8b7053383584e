//! DeepLIFT with the rescale rule, computed on the reference model's layers.

use super::{make_baseline, AttributionError, AttributionSnapshot, AttributionVector, BaselineStrategy, Method};
use crate::matrix::EmbeddingMatrix;
use crate::model::{target_index, Activation, ModelParams, Target};
use crate::oracle::GradientOracle;
use crate::tokenize::TokenizedText;

/// Below this pre-activation difference the secant slope is replaced by the
/// derivative at the midpoint.
pub const RESCALE_EPSILON: f64 = 1e-7;

fn multiplier(act: Activation, z: f64, z0: f64, h: f64, h0: f64) -> f64 {
    if act == Activation::Identity {
        return 1.0;
    }
    let dz = z - z0;
    if dz.abs() < RESCALE_EPSILON {
        act.derivative(0.5 * (z + z0))
    } else {
        (h - h0) / dz
    }
}

/// Rescale-rule contributions of every input entry to
/// `F(x) - F(x0)` for the given target.
pub fn deeplift_rescale(
    params: &ModelParams,
    x: &EmbeddingMatrix,
    x0: &EmbeddingMatrix,
    target: Target,
) -> Result<AttributionVector, AttributionError> {
    x.same_shape(x0)?;
    params.check_target(target)?;
    let t = params.trace(x, None)?;
    let t0 = params.trace(x0, None)?;
    let act = params.arch.activation;

    let mut m_out = vec![0.0; params.head.out];
    m_out[target_index(target)] = 1.0;
    let mut m = params.head.back(&m_out);
    for (li, layer) in params.layers.iter().enumerate().rev() {
        let m_z: Vec<f64> = m
            .iter()
            .enumerate()
            .map(|(j, &g)| g * multiplier(act, t.pre[li][j], t0.pre[li][j], t.post[li][j], t0.post[li][j]))
            .collect();
        m = layer.back(&m_z);
    }
    // pooling is linear, so its multipliers are its gradient
    let m_x = params.unpool(x, None, &t, &m);
    let delta = x.sub(x0)?;
    let mut entries = m_x;
    for (e, d) in entries.as_mut_slice().iter_mut().zip(delta.as_slice()) {
        *e *= d;
    }
    let k = target_index(target);
    Ok(AttributionVector::from_entries(
        entries,
        t.out[k],
        t0.out[k],
        AttributionSnapshot::new(Method::DeepLift),
    ))
}

/// DeepLIFT through an oracle. Only oracles that expose the built-in
/// model's parameters are supported.
pub fn deeplift<O: GradientOracle + ?Sized>(
    oracle: &mut O,
    x: &EmbeddingMatrix,
    tokens: &TokenizedText,
    strategy: BaselineStrategy,
    target: Target,
) -> Result<AttributionVector, AttributionError> {
    let params = oracle.builtin().ok_or(AttributionError::UnsupportedOracle)?;
    let x0 = make_baseline(x, tokens, strategy, &oracle.descriptor().references)?;
    let mut a = deeplift_rescale(params, x, &x0, target)?;
    a.config.baseline = Some(strategy);
    Ok(a)
}
