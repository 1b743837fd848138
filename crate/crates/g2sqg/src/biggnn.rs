//! Bidirectional gated graph encoder: per hop, aggregate the incoming
//! and outgoing neighborhoods separately, fuse them with a learned gate,
//! and update node states with a GRU shared across hops.

use crate::error::Result;
use crate::gradcore::{affine, BoundParams, GruParamNames, ParameterStore, Real, RealArray, Var};
use crate::rng::SeededRng;
use crate::textgraph::{DynamicGraph, StaticGraph};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Direction {
    Incoming,
    Outgoing,
}

/// Which aggregation feeds the first argument of the fuse gate.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum DirectionOrder {
    #[default]
    InOut,
    OutIn,
}

impl std::str::FromStr for DirectionOrder {
    type Err = crate::error::Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "in-out" => Ok(DirectionOrder::InOut),
            "out-in" => Ok(DirectionOrder::OutIn),
            other => Err(crate::error::Error::Config(format!(
                "gnn.direction_order must be `in-out` or `out-in`, got `{other}`"
            ))),
        }
    }
}

/// The graph a forward pass aggregates over.
pub enum GraphRef<'a, T: Real> {
    Static(&'a StaticGraph),
    Dynamic(&'a DynamicGraph<T>),
}

impl<T: Real> GraphRef<'_, T> {
    pub fn node_count(&self) -> usize {
        match self {
            GraphRef::Static(g) => g.node_count(),
            GraphRef::Dynamic(g) => g.node_count(),
        }
    }
}

#[derive(Debug, Clone)]
pub struct BiggnnParamNames {
    pub gru: GruParamNames,
    pub fuse_w: String,
    pub fuse_b: String,
    pub readout_w: String,
    pub readout_b: String,
    pub init_cell_w: String,
    pub init_cell_b: String,
    pub init_state_w: String,
    pub init_state_b: String,
}

impl BiggnnParamNames {
    pub fn new() -> Self {
        BiggnnParamNames {
            gru: GruParamNames::new("gnn/gru"),
            fuse_w: "gnn/fuse/w".into(),
            fuse_b: "gnn/fuse/b".into(),
            readout_w: "gnn/readout/w".into(),
            readout_b: "gnn/readout/b".into(),
            init_cell_w: "gnn/init_cell/w".into(),
            init_cell_b: "gnn/init_cell/b".into(),
            init_state_w: "gnn/init_state/w".into(),
            init_state_b: "gnn/init_state/b".into(),
        }
    }

    /// One parameter set regardless of hop count.
    pub fn register<T: Real>(&self, store: &mut ParameterStore<T>, d: usize, rng: &mut SeededRng) {
        self.gru.register(store, d, d, rng);
        store.insert_init(&self.fuse_w, d, 4 * d, rng);
        store.insert_zeros(&self.fuse_b, d, 1);
        store.insert_init(&self.readout_w, d, d, rng);
        store.insert_zeros(&self.readout_b, d, 1);
        store.insert_init(&self.init_cell_w, d, d, rng);
        store.insert_zeros(&self.init_cell_b, d, 1);
        store.insert_init(&self.init_state_w, d, d, rng);
        store.insert_zeros(&self.init_state_b, d, 1);
    }
}

impl Default for BiggnnParamNames {
    fn default() -> Self {
        Self::new()
    }
}

/// Neighborhood aggregation. Static graphs take the plain average of
/// the direction's neighbors plus the node itself; dynamic graphs take
/// the row-stochastic weighted average from the learned adjacency.
/// Either way each output column is a convex combination that includes
/// the node's own state.
pub fn aggregate<T: Real>(
    states: &Var<T>,
    graph: &GraphRef<'_, T>,
    direction: Direction,
) -> Result<Var<T>> {
    match graph {
        GraphRef::Static(g) => {
            let n = g.node_count();
            let mut weights = RealArray::zeros(n, n);
            for v in 0..n {
                let neighbors = match direction {
                    Direction::Incoming => g.incoming(v),
                    Direction::Outgoing => g.outgoing(v),
                };
                let share = T::from_f64(1.0 / (1.0 + neighbors.len() as f64));
                weights.set(v, v, share);
                for &u in neighbors {
                    weights.set(v, u, share);
                }
            }
            states.matmul_nt(&states.tape().constant(weights))
        }
        GraphRef::Dynamic(g) => match direction {
            Direction::Incoming => states.matmul_nt(&g.a_in),
            Direction::Outgoing => states.matmul(&g.a_out_t),
        },
    }
}

/// Gated sum of two information sources:
/// z = σ(W_z·[a; b; a⊙b; a−b] + b_z), out = z⊙a + (1−z)⊙b.
pub fn fuse<T: Real>(
    a: &Var<T>,
    b: &Var<T>,
    params: &BoundParams<T>,
    names: &BiggnnParamNames,
) -> Result<Var<T>> {
    let tape = a.tape().clone();
    let features = tape.concat(0, &[a, b, &a.mul(b)?, &a.sub(b)?])?;
    let z = affine(
        params.get(&names.fuse_w)?,
        &features,
        params.get(&names.fuse_b)?,
    )?
    .sigmoid()?;
    let ones = tape.ones(z.rows(), z.cols());
    z.mul(a)?.add(&ones.sub(&z)?.mul(b)?)
}

/// `hops` rounds of {aggregate both directions, fuse, GRU update} with
/// one shared parameter set. Zero hops returns the input unchanged.
pub fn encode<T: Real>(
    x: &Var<T>,
    graph: &GraphRef<'_, T>,
    hops: usize,
    order: DirectionOrder,
    params: &BoundParams<T>,
    names: &BiggnnParamNames,
) -> Result<Var<T>> {
    let mut states = x.clone();
    for _ in 0..hops {
        let incoming = aggregate(&states, graph, Direction::Incoming)?;
        let outgoing = aggregate(&states, graph, Direction::Outgoing)?;
        let (first, second) = match order {
            DirectionOrder::InOut => (&incoming, &outgoing),
            DirectionOrder::OutIn => (&outgoing, &incoming),
        };
        let neighborhood = fuse(first, second, params, names)?;
        states = names.gru.step(params, &states, &neighborhood)?;
    }
    Ok(states)
}

/// Graph-level readout: element-wise max over a linear projection of the
/// node states, then two separate affine maps for the decoder's initial
/// cell and hidden states.
pub fn graph_readout<T: Real>(
    node_states: &Var<T>,
    params: &BoundParams<T>,
    names: &BiggnnParamNames,
) -> Result<(Var<T>, Var<T>, Var<T>)> {
    let projected = affine(
        params.get(&names.readout_w)?,
        node_states,
        params.get(&names.readout_b)?,
    )?;
    let graph_embedding = projected.max_pool()?;
    let c0 = affine(
        params.get(&names.init_cell_w)?,
        &graph_embedding,
        params.get(&names.init_cell_b)?,
    )?;
    let s0 = affine(
        params.get(&names.init_state_w)?,
        &graph_embedding,
        params.get(&names.init_state_b)?,
    )?;
    Ok((graph_embedding, c0, s0))
}
