//! Central-difference verification of tape gradients.
//!
//! Checks run in 64-bit. Coordinates whose ±h evaluations take different
//! branches through a nondifferentiable point (ReLU sign, min tie,
//! max-pool argmax) are skipped and counted instead of failed.

use super::array::RealArray;
use super::params::{BoundParams, ParameterStore};
use super::tape::{Tape, Var, PRIMITIVE_NAMES};
use crate::error::{Error, Result};
use crate::rng::SeededRng;

#[derive(Debug, Clone, Default)]
pub struct GradCheckReport {
    pub max_rel_error: f64,
    pub checked: usize,
    pub skipped: usize,
    pub worst_coordinate: Option<(String, usize)>,
}

impl GradCheckReport {
    pub fn merge(&mut self, other: &GradCheckReport) {
        if other.max_rel_error > self.max_rel_error {
            self.max_rel_error = other.max_rel_error;
            self.worst_coordinate = other.worst_coordinate.clone();
        }
        self.checked += other.checked;
        self.skipped += other.skipped;
    }
}

/// Compare tape gradients of a scalar loss against central differences
/// (f(θ+h) − f(θ−h)) / 2h for every trainable coordinate.
///
/// `loss_fn` must be deterministic: it is re-evaluated many times at
/// perturbed parameters.
pub fn grad_check<F>(store: &ParameterStore<f64>, step: f64, loss_fn: F) -> Result<GradCheckReport>
where
    F: Fn(&Tape<f64>, &BoundParams<f64>) -> Result<Var<f64>>,
{
    let evaluate = |s: &ParameterStore<f64>| -> Result<(f64, (u64, u64, u64))> {
        let tape = Tape::new();
        let bound = s.bind(&tape);
        let loss = loss_fn(&tape, &bound)?;
        let value = loss.item();
        if !value.is_finite() {
            return Err(Error::Numeric("grad_check loss"));
        }
        Ok((value, tape.branch_signature()))
    };

    // Analytic gradients once, at the base point.
    let tape = Tape::new();
    let bound = store.bind(&tape);
    let loss = loss_fn(&tape, &bound)?;
    if !loss.item().is_finite() {
        return Err(Error::Numeric("grad_check loss"));
    }
    let grads = tape.backward(&loss)?;
    let analytic = bound.collect_grads(&grads);

    let mut working = store.clone();
    let mut report = GradCheckReport::default();
    let names: Vec<String> = store
        .iter()
        .filter(|(_, p)| p.trainable)
        .map(|(n, _)| n.clone())
        .collect();

    for name in names {
        let coords = store.get(&name)?.array.len();
        for i in 0..coords {
            let original = working.get(&name)?.array.data()[i];

            working.get_mut(&name)?.array.data_mut()[i] = original + step;
            let (up, sig_up) = evaluate(&working)?;
            working.get_mut(&name)?.array.data_mut()[i] = original - step;
            let (down, sig_down) = evaluate(&working)?;
            working.get_mut(&name)?.array.data_mut()[i] = original;

            if sig_up != sig_down {
                report.skipped += 1;
                continue;
            }
            let numeric = (up - down) / (2.0 * step);
            let a = analytic[&name].data()[i];
            let rel = (a - numeric).abs() / a.abs().max(numeric.abs()).max(1.0);
            report.checked += 1;
            if rel > report.max_rel_error {
                report.max_rel_error = rel;
                report.worst_coordinate = Some((name.clone(), i));
            }
        }
    }
    Ok(report)
}

fn random_array(rng: &mut SeededRng, rows: usize, cols: usize, lo: f64, hi: f64) -> RealArray<f64> {
    let data: Vec<f64> = (0..rows * cols).map(|_| rng.uniform_in(lo, hi)).collect();
    RealArray::new(rows, cols, data).expect("valid shape")
}

/// Gradient-check one registered primitive at `points` random points.
/// The loss is sum(primitive(..) ⊙ C) for a fixed random C, so every
/// output coordinate receives a distinct upstream gradient.
pub fn check_primitive(
    name: &str,
    points: usize,
    step: f64,
    rng: &mut SeededRng,
) -> Result<GradCheckReport> {
    if !PRIMITIVE_NAMES.contains(&name) {
        return Err(Error::Config(format!("unknown primitive `{name}`")));
    }
    let mut report = GradCheckReport::default();
    for _ in 0..points {
        let rows = 2 + rng.below(3);
        let cols = 2 + rng.below(3);
        let mut store = ParameterStore::<f64>::new();
        let point = build_primitive_point(name, rows, cols, &mut store, rng);
        let one = grad_check(&store, step, |tape, bound| (point.build)(tape, bound))?;
        report.merge(&one);
    }
    Ok(report)
}

struct PrimitivePoint {
    build: Box<dyn Fn(&Tape<f64>, &BoundParams<f64>) -> Result<Var<f64>>>,
}

fn build_primitive_point(
    name: &str,
    rows: usize,
    cols: usize,
    store: &mut ParameterStore<f64>,
    rng: &mut SeededRng,
) -> PrimitivePoint {
    let weight = random_array(rng, rows, cols, -1.0, 1.0);
    let weighted_sum = move |out: Var<f64>, c: &RealArray<f64>| -> Result<Var<f64>> {
        let cvar = out.tape().constant(c.clone());
        out.mul(&cvar)?.sum()
    };

    match name {
        "matmul" => {
            let k = 2 + rng.below(3);
            let ta = rng.bernoulli(0.5);
            let tb = rng.bernoulli(0.5);
            let a_shape = if ta { (k, rows) } else { (rows, k) };
            let b_shape = if tb { (cols, k) } else { (k, cols) };
            store.insert("a", random_array(rng, a_shape.0, a_shape.1, -1.0, 1.0));
            store.insert("b", random_array(rng, b_shape.0, b_shape.1, -1.0, 1.0));
            PrimitivePoint {
                build: Box::new(move |_, p| {
                    let out = p.get("a")?.matmul_t(p.get("b")?, ta, tb)?;
                    weighted_sum(out, &weight)
                }),
            }
        }
        "add" | "sub" | "elementwise-mul" | "elementwise-min" => {
            store.insert("a", random_array(rng, rows, cols, -1.0, 1.0));
            store.insert("b", random_array(rng, rows, cols, -1.0, 1.0));
            let which = name.to_string();
            PrimitivePoint {
                build: Box::new(move |_, p| {
                    let a = p.get("a")?;
                    let b = p.get("b")?;
                    let out = match which.as_str() {
                        "add" => a.add(b)?,
                        "sub" => a.sub(b)?,
                        "elementwise-mul" => a.mul(b)?,
                        _ => a.min(b)?,
                    };
                    weighted_sum(out, &weight)
                }),
            }
        }
        "relu" | "sigmoid" | "tanh" | "exp" => {
            store.insert("a", random_array(rng, rows, cols, -1.5, 1.5));
            let which = name.to_string();
            PrimitivePoint {
                build: Box::new(move |_, p| {
                    let a = p.get("a")?;
                    let out = match which.as_str() {
                        "relu" => a.relu()?,
                        "sigmoid" => a.sigmoid()?,
                        "tanh" => a.tanh()?,
                        _ => a.exp()?,
                    };
                    weighted_sum(out, &weight)
                }),
            }
        }
        "log" => {
            store.insert("a", random_array(rng, rows, cols, 0.5, 2.0));
            PrimitivePoint {
                build: Box::new(move |_, p| weighted_sum(p.get("a")?.log()?, &weight)),
            }
        }
        "concat" => {
            let axis = rng.below(2);
            store.insert("a", random_array(rng, rows, cols, -1.0, 1.0));
            store.insert("b", random_array(rng, rows, cols, -1.0, 1.0));
            let double = if axis == 0 {
                random_array(rng, rows * 2, cols, -1.0, 1.0)
            } else {
                random_array(rng, rows, cols * 2, -1.0, 1.0)
            };
            PrimitivePoint {
                build: Box::new(move |tape, p| {
                    let out = tape.concat(axis, &[p.get("a")?, p.get("b")?])?;
                    weighted_sum(out, &double)
                }),
            }
        }
        "masked-softmax" => {
            let axis = rng.below(2);
            store.insert("a", random_array(rng, rows, cols, -1.0, 1.0));
            let mut mask = vec![true; rows * cols];
            for m in mask.iter_mut() {
                *m = rng.bernoulli(0.75);
            }
            // Keep at least one unmasked entry per slice.
            let slices = if axis == 1 { rows } else { cols };
            let slice_len = if axis == 1 { cols } else { rows };
            for s in 0..slices {
                let any = (0..slice_len).any(|i| {
                    let (r, c) = if axis == 1 { (s, i) } else { (i, s) };
                    mask[r * cols + c]
                });
                if !any {
                    let i = rng.below(slice_len);
                    let (r, c) = if axis == 1 { (s, i) } else { (i, s) };
                    mask[r * cols + c] = true;
                }
            }
            PrimitivePoint {
                build: Box::new(move |_, p| {
                    let out = p.get("a")?.masked_softmax(axis, Some(&mask))?;
                    weighted_sum(out, &weight)
                }),
            }
        }
        "max-pool" => {
            store.insert("a", random_array(rng, rows, cols, -1.0, 1.0));
            let col_weight = random_array(rng, rows, 1, -1.0, 1.0);
            PrimitivePoint {
                build: Box::new(move |_, p| weighted_sum(p.get("a")?.max_pool()?, &col_weight)),
            }
        }
        "gather-rows" => {
            store.insert("a", random_array(rng, rows, cols, -1.0, 1.0));
            let axis = rng.below(2);
            let dim = if axis == 0 { rows } else { cols };
            let indices: Vec<usize> = (0..dim + 1).map(|_| rng.below(dim)).collect();
            let out_shape = if axis == 0 {
                (indices.len(), cols)
            } else {
                (rows, indices.len())
            };
            let gweight = random_array(rng, out_shape.0, out_shape.1, -1.0, 1.0);
            PrimitivePoint {
                build: Box::new(move |_, p| {
                    let a = p.get("a")?;
                    let out = if axis == 0 {
                        a.gather_rows(&indices)?
                    } else {
                        a.gather_cols(&indices)?
                    };
                    weighted_sum(out, &gweight)
                }),
            }
        }
        "scalar-scale" => {
            store.insert("a", random_array(rng, rows, cols, -1.0, 1.0));
            let factor = rng.uniform_in(-2.0, 2.0);
            PrimitivePoint {
                build: Box::new(move |_, p| weighted_sum(p.get("a")?.scale(factor)?, &weight)),
            }
        }
        "sum-reduce" => {
            store.insert("a", random_array(rng, rows, cols, -1.0, 1.0));
            let factor = rng.uniform_in(-2.0, 2.0);
            PrimitivePoint {
                build: Box::new(move |_, p| p.get("a")?.sum()?.scale(factor)),
            }
        }
        other => unreachable!("unregistered primitive `{other}`"),
    }
}

/// Sweep every registered primitive.
pub fn check_all_primitives(
    points: usize,
    step: f64,
    seed: u64,
) -> Result<Vec<(&'static str, GradCheckReport)>> {
    let mut out = Vec::new();
    for &name in PRIMITIVE_NAMES {
        let mut rng = SeededRng::new(seed).fork(name);
        out.push((name, check_primitive(name, points, step, &mut rng)?));
    }
    Ok(out)
}
