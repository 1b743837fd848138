//! Adam with global-norm gradient clipping.

use crate::error::{Error, Result};
use crate::gradcore::{ParameterStore, RealArray};
use std::collections::BTreeMap;

pub const BETA1: f64 = 0.9;
pub const BETA2: f64 = 0.999;
pub const EPSILON: f64 = 1e-8;

/// First/second moment accumulators mirroring the trainable parameters.
#[derive(Debug, Clone, Default)]
pub struct OptimizerState {
    pub first_moment: BTreeMap<String, RealArray<f32>>,
    pub second_moment: BTreeMap<String, RealArray<f32>>,
    pub step: u64,
}

impl OptimizerState {
    fn moment(
        &mut self,
        which: Which,
        name: &str,
        rows: usize,
        cols: usize,
    ) -> &mut RealArray<f32> {
        let map = match which {
            Which::First => &mut self.first_moment,
            Which::Second => &mut self.second_moment,
        };
        map.entry(name.to_string())
            .or_insert_with(|| RealArray::zeros(rows, cols))
    }
}

enum Which {
    First,
    Second,
}

/// Clip gradients to a global L2 norm of `clip`, then apply one
/// bias-corrected Adam update to every trainable parameter.
///
/// Aborts with a numeric error (no state mutated) if any gradient entry
/// is non-finite.
pub fn adam_step(
    params: &mut ParameterStore<f32>,
    grads: &BTreeMap<String, RealArray<f32>>,
    state: &mut OptimizerState,
    lr: f64,
    clip: f64,
) -> Result<()> {
    let mut sq_norm = 0.0f64;
    for (name, p) in params.iter() {
        if !p.trainable {
            continue;
        }
        let g = grads
            .get(name)
            .ok_or_else(|| Error::UnknownParameter(format!("gradient for `{name}`")))?;
        for &v in g.data() {
            let v = f64::from(v);
            if !v.is_finite() {
                return Err(Error::Numeric("adam_step gradient"));
            }
            sq_norm += v * v;
        }
    }
    let norm = sq_norm.sqrt();
    let rescale = if clip > 0.0 && norm > clip {
        clip / norm
    } else {
        1.0
    };

    state.step += 1;
    let t = state.step as i32;
    let bias1 = 1.0 - BETA1.powi(t);
    let bias2 = 1.0 - BETA2.powi(t);

    let names: Vec<String> = params
        .iter()
        .filter(|(_, p)| p.trainable)
        .map(|(n, _)| n.clone())
        .collect();
    for name in names {
        let grad = &grads[&name];
        let [rows, cols] = grad.shape();
        {
            let m = state.moment(Which::First, &name, rows, cols);
            for (mv, &gv) in m.data_mut().iter_mut().zip(grad.data()) {
                let g = f64::from(gv) * rescale;
                *mv = (BETA1 * f64::from(*mv) + (1.0 - BETA1) * g) as f32;
            }
        }
        {
            let v = state.moment(Which::Second, &name, rows, cols);
            for (vv, &gv) in v.data_mut().iter_mut().zip(grad.data()) {
                let g = f64::from(gv) * rescale;
                *vv = (BETA2 * f64::from(*vv) + (1.0 - BETA2) * g * g) as f32;
            }
        }
        let m = state.first_moment[&name].clone();
        let v = state.second_moment[&name].clone();
        let param = params.get_mut(&name)?;
        for i in 0..param.array.len() {
            let m_hat = f64::from(m.data()[i]) / bias1;
            let v_hat = f64::from(v.data()[i]) / bias2;
            let update = lr * m_hat / (v_hat.sqrt() + EPSILON);
            param.array.data_mut()[i] = (f64::from(param.array.data()[i]) - update) as f32;
        }
    }
    Ok(())
}
