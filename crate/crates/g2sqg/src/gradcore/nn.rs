//! Recurrent cells and stochastic layers composed from tape primitives.

use super::array::{Real, RealArray};
use super::params::{BoundParams, ParameterStore};
use super::tape::Var;
use crate::error::Result;
use crate::rng::SeededRng;

/// bias (d×1) replicated across `n` columns.
pub fn broadcast_cols<T: Real>(bias: &Var<T>, n: usize) -> Result<Var<T>> {
    if n == 1 {
        return Ok(bias.clone());
    }
    let ones = bias.tape().ones(1, n);
    bias.matmul(&ones)
}

/// w·x + b with the bias broadcast over columns of x.
pub fn affine<T: Real>(w: &Var<T>, x: &Var<T>, b: &Var<T>) -> Result<Var<T>> {
    let wx = w.matmul(x)?;
    wx.add(&broadcast_cols(b, wx.cols())?)
}

/// Parameter names for one GRU cell; weights apply to the aggregated
/// input, recurrent weights to the previous state.
#[derive(Clone, Debug)]
pub struct GruParamNames {
    pub prefix: String,
}

impl GruParamNames {
    pub fn new(prefix: &str) -> Self {
        GruParamNames {
            prefix: prefix.to_string(),
        }
    }

    fn name(&self, which: &str) -> String {
        format!("{}/{}", self.prefix, which)
    }

    pub fn register<T: Real>(
        &self,
        store: &mut ParameterStore<T>,
        state_dim: usize,
        input_dim: usize,
        rng: &mut SeededRng,
    ) {
        for gate in ["z", "r", "h"] {
            store.insert_init(&self.name(&format!("w_{gate}")), state_dim, input_dim, rng);
            store.insert_init(&self.name(&format!("u_{gate}")), state_dim, state_dim, rng);
            store.insert_zeros(&self.name(&format!("b_{gate}")), state_dim, 1);
        }
    }

    fn gate<T: Real>(
        &self,
        params: &BoundParams<T>,
        which: &str,
        input: &Var<T>,
        state: &Var<T>,
    ) -> Result<Var<T>> {
        let w = params.get(&self.name(&format!("w_{which}")))?;
        let u = params.get(&self.name(&format!("u_{which}")))?;
        let b = params.get(&self.name(&format!("b_{which}")))?;
        let pre = w
            .matmul(input)?
            .add(&u.matmul(state)?)?
            .add(&broadcast_cols(b, input.cols())?)?;
        Ok(pre)
    }

    /// GRU update: z = σ(..), r = σ(..), h̃ = tanh(..),
    /// h' = (1−z)⊙h_prev + z⊙h̃. Columns are processed in parallel, so
    /// `h_prev` and `input` may be d×N.
    pub fn step<T: Real>(
        &self,
        params: &BoundParams<T>,
        h_prev: &Var<T>,
        input: &Var<T>,
    ) -> Result<Var<T>> {
        let z = self.gate(params, "z", input, h_prev)?.sigmoid()?;
        let r = self.gate(params, "r", input, h_prev)?.sigmoid()?;
        let gated_state = r.mul(h_prev)?;
        let candidate = self.gate(params, "h", input, &gated_state)?.tanh()?;
        let ones = h_prev.tape().ones(z.rows(), z.cols());
        let keep = ones.sub(&z)?;
        keep.mul(h_prev)?.add(&z.mul(&candidate)?)
    }
}

/// Parameter names for one LSTM cell.
#[derive(Clone, Debug)]
pub struct LstmParamNames {
    pub prefix: String,
}

impl LstmParamNames {
    pub fn new(prefix: &str) -> Self {
        LstmParamNames {
            prefix: prefix.to_string(),
        }
    }

    fn name(&self, which: &str) -> String {
        format!("{}/{}", self.prefix, which)
    }

    pub fn register<T: Real>(
        &self,
        store: &mut ParameterStore<T>,
        state_dim: usize,
        input_dim: usize,
        rng: &mut SeededRng,
    ) {
        for gate in ["f", "i", "o", "g"] {
            store.insert_init(&self.name(&format!("w_{gate}")), state_dim, input_dim, rng);
            store.insert_init(&self.name(&format!("u_{gate}")), state_dim, state_dim, rng);
            store.insert_zeros(&self.name(&format!("b_{gate}")), state_dim, 1);
        }
    }

    fn gate<T: Real>(
        &self,
        params: &BoundParams<T>,
        which: &str,
        x: &Var<T>,
        h: &Var<T>,
    ) -> Result<Var<T>> {
        let w = params.get(&self.name(&format!("w_{which}")))?;
        let u = params.get(&self.name(&format!("u_{which}")))?;
        let b = params.get(&self.name(&format!("b_{which}")))?;
        w.matmul(x)?
            .add(&u.matmul(h)?)?
            .add(&broadcast_cols(b, x.cols())?)
    }

    /// LSTM update: f,i,o = σ(..), g = tanh(..),
    /// c = f⊙c_prev + i⊙g, h = o⊙tanh(c). Returns (h, c).
    pub fn step<T: Real>(
        &self,
        params: &BoundParams<T>,
        x: &Var<T>,
        h_prev: &Var<T>,
        c_prev: &Var<T>,
    ) -> Result<(Var<T>, Var<T>)> {
        let f = self.gate(params, "f", x, h_prev)?.sigmoid()?;
        let i = self.gate(params, "i", x, h_prev)?.sigmoid()?;
        let o = self.gate(params, "o", x, h_prev)?.sigmoid()?;
        let g = self.gate(params, "g", x, h_prev)?.tanh()?;
        let c = f.mul(c_prev)?.add(&i.mul(&g)?)?;
        let h = o.mul(&c.tanh()?)?;
        Ok((h, c))
    }
}

/// Names for a bidirectional LSTM: `<prefix>/fw` and `<prefix>/bw`, each
/// with hidden size `state_dim` so outputs are 2·state_dim per position.
#[derive(Clone, Debug)]
pub struct BiLstmParamNames {
    pub forward: LstmParamNames,
    pub backward: LstmParamNames,
    pub half_dim: usize,
}

impl BiLstmParamNames {
    pub fn new(prefix: &str, half_dim: usize) -> Self {
        BiLstmParamNames {
            forward: LstmParamNames::new(&format!("{prefix}/fw")),
            backward: LstmParamNames::new(&format!("{prefix}/bw")),
            half_dim,
        }
    }

    pub fn register<T: Real>(
        &self,
        store: &mut ParameterStore<T>,
        input_dim: usize,
        rng: &mut SeededRng,
    ) {
        self.forward.register(store, self.half_dim, input_dim, rng);
        self.backward.register(store, self.half_dim, input_dim, rng);
    }

    /// Run over the columns of `input` (features × positions); output is
    /// (2·half_dim) × positions, forward states stacked over backward.
    pub fn run<T: Real>(&self, params: &BoundParams<T>, input: &Var<T>) -> Result<Var<T>> {
        let n = input.cols();
        let tape = input.tape().clone();
        let run_dir = |cell: &LstmParamNames, order: Vec<usize>| -> Result<Vec<Var<T>>> {
            let mut h = tape.zeros(self.half_dim, 1);
            let mut c = tape.zeros(self.half_dim, 1);
            let mut states = vec![None; n];
            for t in order {
                let x = input.gather_cols(&[t])?;
                let (nh, nc) = cell.step(params, &x, &h, &c)?;
                states[t] = Some(nh.clone());
                h = nh;
                c = nc;
            }
            Ok(states.into_iter().map(Option::unwrap).collect())
        };
        let fw = run_dir(&self.forward, (0..n).collect())?;
        let bw = run_dir(&self.backward, (0..n).rev().collect())?;
        let fw_refs: Vec<&Var<T>> = fw.iter().collect();
        let bw_refs: Vec<&Var<T>> = bw.iter().collect();
        let fw_mat = tape.concat(1, &fw_refs)?;
        let bw_mat = tape.concat(1, &bw_refs)?;
        tape.concat(0, &[&fw_mat, &bw_mat])
    }
}

/// Variational dropout: one Bernoulli(1−rate) keep decision per feature
/// row, shared across all positions, with inverted 1/(1−rate) scaling.
/// Identity in evaluation mode or at rate 0.
pub fn variational_dropout<T: Real>(
    x: &Var<T>,
    rate: f64,
    training: bool,
    rng: &mut SeededRng,
) -> Result<Var<T>> {
    if !(0.0..1.0).contains(&rate) {
        return Err(crate::error::Error::Config(format!(
            "dropout rate must be in [0, 1), got {rate}"
        )));
    }
    if !training || rate == 0.0 {
        return Ok(x.clone());
    }
    let [rows, cols] = x.shape();
    let keep_scale = 1.0 / (1.0 - rate);
    let mut mask = RealArray::zeros(rows, cols);
    for r in 0..rows {
        let keep = rng.bernoulli(1.0 - rate);
        if keep {
            for c in 0..cols {
                mask.set(r, c, T::from_f64(keep_scale));
            }
        }
    }
    x.mul(&x.tape().constant(mask))
}
