//! Passage-graph construction: syntax-based static graphs from
//! dependency heads and sentence-boundary links, and semantics-aware
//! dynamic graphs from learned self-attention with top-K sparsification.

use crate::corpus::PassageExample;
use crate::error::{Error, Result};
use crate::gradcore::{Real, RealArray, Var};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum GraphKind {
    Static,
    Dynamic,
}

impl std::str::FromStr for GraphKind {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "static" => Ok(GraphKind::Static),
            "dynamic" => Ok(GraphKind::Dynamic),
            other => Err(Error::Config(format!(
                "graph.kind must be `static` or `dynamic`, got `{other}`"
            ))),
        }
    }
}

/// Directed adjacency over passage tokens: one edge head→dependent per
/// parsed token, plus a bidirectional pair linking the boundary tokens
/// of consecutive sentences.
#[derive(Debug, Clone)]
pub struct StaticGraph {
    n: usize,
    incoming: Vec<Vec<usize>>,
    outgoing: Vec<Vec<usize>>,
}

impl StaticGraph {
    pub fn node_count(&self) -> usize {
        self.n
    }

    /// Nodes u with an edge u→v.
    pub fn incoming(&self, v: usize) -> &[usize] {
        &self.incoming[v]
    }

    /// Nodes w with an edge v→w.
    pub fn outgoing(&self, v: usize) -> &[usize] {
        &self.outgoing[v]
    }
}

/// Pure function of (dep_head, sent_bounds).
pub fn build_static_graph(ex: &PassageExample) -> StaticGraph {
    let n = ex.passage_len();
    let mut graph = StaticGraph {
        n,
        incoming: vec![Vec::new(); n],
        outgoing: vec![Vec::new(); n],
    };
    let add_edge = |g: &mut StaticGraph, from: usize, to: usize| {
        if from == to {
            return;
        }
        if !g.outgoing[from].contains(&to) {
            g.outgoing[from].push(to);
        }
        if !g.incoming[to].contains(&from) {
            g.incoming[to].push(from);
        }
    };
    for (dependent, &head) in ex.dep_head.iter().enumerate() {
        if head >= 0 {
            add_edge(&mut graph, head as usize, dependent);
        }
    }
    for window in ex.sent_bounds.windows(2) {
        let last_of_prev = window[0].1 - 1;
        let first_of_next = window[1].0;
        add_edge(&mut graph, last_of_prev, first_of_next);
        add_edge(&mut graph, first_of_next, last_of_prev);
    }
    graph
}

/// Learned graph: two row-normalized sparse weight matrices over the
/// same attention scores, one per direction. `a_in` is the incoming
/// matrix A⊣ itself; the outgoing matrix A⊢ is kept transposed
/// (`a_out_t`) so both directions aggregate by a plain matrix product.
pub struct DynamicGraph<T: Real> {
    pub a_in: Var<T>,
    pub a_out_t: Var<T>,
    pub keep_in: Vec<bool>,
    pub keep_out: Vec<bool>,
    pub k: usize,
}

impl<T: Real> DynamicGraph<T> {
    pub fn node_count(&self) -> usize {
        self.a_in.rows()
    }

    /// A⊣ as a plain array (rows sum to 1).
    pub fn incoming_matrix(&self) -> RealArray<T> {
        self.a_in.to_array()
    }

    /// A⊢ as a plain array (rows sum to 1).
    pub fn outgoing_matrix(&self) -> RealArray<T> {
        self.a_out_t.to_array().transposed()
    }
}

/// Dense self-attention adjacency A = ReLU(U·H)ᵀ · ReLU(U·H); a Gram
/// matrix, hence symmetric with nonnegative diagonal.
pub fn dynamic_adjacency<T: Real>(h: &Var<T>, u: &Var<T>) -> Result<Var<T>> {
    let projected = u.matmul(h)?.relu()?;
    projected.matmul_tn(&projected)
}

/// Per row, keep the `k` largest entries with the diagonal always kept
/// (ties broken toward the lower column index); each kept row is then
/// softmax-normalized. The outgoing side applies the same rule to the
/// transposed scores. Gradients flow through kept scores only.
pub fn sparsify_normalize<T: Real>(scores: &Var<T>, k: usize) -> Result<DynamicGraph<T>> {
    let [n, cols] = scores.shape();
    if n != cols {
        return Err(Error::Shape {
            op: "sparsify_normalize",
            lhs: vec![n, cols],
            rhs: vec![n, n],
        });
    }
    if k == 0 {
        return Err(Error::Config("knn.k must be at least 1".into()));
    }
    let keep = k.min(n);
    let values = scores.to_array();

    // keep_in[r·n + c]: entry (r, c) participates in row r's softmax.
    let top_k_rows = |by_row: &dyn Fn(usize, usize) -> T| -> Vec<bool> {
        let mut mask = vec![false; n * n];
        for r in 0..n {
            let mut order: Vec<usize> = (0..n).filter(|&c| c != r).collect();
            order.sort_by(|&a, &b| {
                by_row(r, b)
                    .partial_cmp(&by_row(r, a))
                    .expect("finite scores")
                    .then(a.cmp(&b))
            });
            mask[r * n + r] = true;
            for &c in order.iter().take(keep - 1) {
                mask[r * n + c] = true;
            }
        }
        mask
    };
    let keep_in = top_k_rows(&|r, c| values.at(r, c));
    // Outgoing side sparsifies the transpose: row v of Āᵀ is column v of Ā.
    let keep_out_rows = top_k_rows(&|r, c| values.at(c, r));
    // Lay the outgoing mask over A's storage for a column-axis softmax.
    let mut keep_out = vec![false; n * n];
    for v in 0..n {
        for u in 0..n {
            if keep_out_rows[v * n + u] {
                keep_out[u * n + v] = true;
            }
        }
    }

    let a_in = scores.masked_softmax(1, Some(&keep_in))?;
    let a_out_t = scores.masked_softmax(0, Some(&keep_out))?;
    Ok(DynamicGraph {
        a_in,
        a_out_t,
        keep_in,
        keep_out,
        k: keep,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::corpus::example_from_json;
    use crate::gradcore::{ParameterStore, Tape};
    use crate::rng::SeededRng;

    fn example(passage: &[&str], heads: &[i64], bounds: &[(usize, usize)]) -> PassageExample {
        let n = passage.len();
        let json = serde_json::json!({
            "id": "g",
            "passage_tokens": passage,
            "answer_tokens": [passage[0]],
            "pos": vec!["X"; n],
            "ner": vec!["O"; n],
            "dep_head": heads,
            "sent_bounds": bounds,
        });
        example_from_json(&json.to_string()).unwrap()
    }

    #[test]
    fn dependency_edge_points_head_to_dependent() {
        // "dogs bark", heads [1, −1] → single edge 1→0
        let ex = example(&["dogs", "bark"], &[1, -1], &[(0, 2)]);
        let g = build_static_graph(&ex);
        assert_eq!(g.node_count(), 2);
        assert_eq!(g.outgoing(1), &[0]);
        assert_eq!(g.incoming(0), &[1]);
        assert!(g.outgoing(0).is_empty());
        assert!(g.incoming(1).is_empty());
    }

    #[test]
    fn sentence_boundaries_link_both_directions() {
        let ex = example(&["hi", "yo"], &[-1, -1], &[(0, 1), (1, 2)]);
        let g = build_static_graph(&ex);
        assert_eq!(g.outgoing(0), &[1]);
        assert_eq!(g.outgoing(1), &[0]);
        assert_eq!(g.incoming(0), &[1]);
        assert_eq!(g.incoming(1), &[0]);
    }

    #[test]
    fn node_count_matches_passage_and_duplicates_collapse() {
        let ex = example(
            &["a", "b", "c", "d", "e"],
            &[1, -1, 3, -1, 3],
            &[(0, 2), (2, 5)],
        );
        let g = build_static_graph(&ex);
        assert_eq!(g.node_count(), 5);
        for v in 0..5 {
            let mut sorted = g.outgoing(v).to_vec();
            sorted.sort_unstable();
            sorted.dedup();
            assert_eq!(sorted.len(), g.outgoing(v).len(), "no duplicate edges");
        }
    }

    #[test]
    fn gram_adjacency_is_symmetric_and_zero_for_zero_weights() {
        let tape = Tape::<f64>::new();
        let mut rng = SeededRng::new(3);
        let h_data: Vec<f64> = (0..12).map(|_| rng.uniform_in(-1.0, 1.0)).collect();
        let h = tape.leaf(RealArray::new(3, 4, h_data).unwrap());
        let u_data: Vec<f64> = (0..6).map(|_| rng.uniform_in(-1.0, 1.0)).collect();
        let u = tape.leaf(RealArray::new(2, 3, u_data).unwrap());
        let a = dynamic_adjacency(&h, &u).unwrap();
        let av = a.to_array();
        for i in 0..4 {
            for j in 0..4 {
                assert_eq!(av.at(i, j), av.at(j, i), "A = Aᵀ exactly");
            }
            assert!(av.at(i, i) >= 0.0);
        }
        let zero_u = tape.zeros(2, 3);
        let a0 = dynamic_adjacency(&h, &zero_u).unwrap();
        assert!(a0.to_array().data().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn gram_matches_high_precision_recomputation() {
        let tape = Tape::<f64>::new();
        let h =
            tape.leaf(RealArray::from_rows(&[vec![0.3, -0.7, 1.1], vec![0.9, 0.2, -0.4]]).unwrap());
        let u = tape.leaf(RealArray::from_rows(&[vec![0.5, -1.0], vec![0.25, 0.75]]).unwrap());
        let a = dynamic_adjacency(&h, &u).unwrap();
        // Independent recomputation straight from the definition.
        let hv = h.to_array();
        let uv = u.to_array();
        let mut proj = [[0.0f64; 3]; 2];
        for r in 0..2 {
            for c in 0..3 {
                let mut acc = 0.0;
                for k in 0..2 {
                    acc += uv.at(r, k) * hv.at(k, c);
                }
                proj[r][c] = acc.max(0.0);
            }
        }
        for i in 0..3 {
            for j in 0..3 {
                let expect: f64 = (0..2).map(|r| proj[r][i] * proj[r][j]).sum();
                assert!((a.to_array().at(i, j) - expect).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn rows_have_exactly_min_k_n_positive_entries_summing_to_one() {
        let mut rng = SeededRng::new(17);
        for &(n, k) in &[(6usize, 3usize), (5, 10), (4, 1), (7, 7)] {
            let tape = Tape::<f64>::new();
            let data: Vec<f64> = (0..n * n).map(|_| rng.uniform_in(-2.0, 2.0)).collect();
            let scores = tape.leaf(RealArray::new(n, n, data).unwrap());
            let graph = sparsify_normalize(&scores, k).unwrap();
            let expected = k.min(n);
            for matrix in [graph.incoming_matrix(), graph.outgoing_matrix()] {
                for r in 0..n {
                    let row: Vec<f64> = (0..n).map(|c| matrix.at(r, c)).collect();
                    let positives = row.iter().filter(|&&v| v > 0.0).count();
                    let zeros = row.iter().filter(|&&v| v == 0.0).count();
                    assert_eq!(positives, expected, "n={n} k={k} row={r}");
                    assert_eq!(zeros, n - expected, "masked entries exactly 0");
                    assert!(matrix.at(r, r) > 0.0, "diagonal kept");
                    let sum: f64 = row.iter().sum();
                    assert!((sum - 1.0).abs() < 1e-6);
                }
            }
        }
    }

    #[test]
    fn k_at_least_n_is_a_full_softmax() {
        let tape = Tape::<f64>::new();
        let scores = tape.leaf(RealArray::full(3, 3, 0.5));
        let graph = sparsify_normalize(&scores, 10).unwrap();
        assert!(graph.keep_in.iter().all(|&b| b));
        let a_in = graph.incoming_matrix();
        for r in 0..3 {
            for c in 0..3 {
                assert!((a_in.at(r, c) - 1.0 / 3.0).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn masked_entries_get_exactly_zero_gradient_and_kept_match_fd() {
        let n = 5;
        let k = 2;
        let mut rng = SeededRng::new(23);
        let mut store = ParameterStore::<f64>::new();
        let data: Vec<f64> = (0..n * n).map(|_| rng.uniform_in(-1.0, 1.0)).collect();
        store.insert("scores", RealArray::new(n, n, data).unwrap());
        let wdata: Vec<f64> = (0..n * n).map(|_| rng.uniform_in(-1.0, 1.0)).collect();
        let weights = RealArray::new(n, n, wdata).unwrap();

        let run = |s: &ParameterStore<f64>| -> (f64, RealArray<f64>, Vec<bool>, Vec<bool>) {
            let tape = Tape::new();
            let bound = s.bind(&tape);
            let scores = bound.get("scores").unwrap();
            let graph = sparsify_normalize(scores, k).unwrap();
            let wleaf = tape.constant(weights.clone());
            let loss = graph
                .a_in
                .mul(&wleaf)
                .unwrap()
                .sum()
                .unwrap()
                .add(&graph.a_out_t.mul(&wleaf).unwrap().sum().unwrap())
                .unwrap();
            let grads = tape.backward(&loss).unwrap();
            (
                loss.item(),
                grads.wrt(scores).unwrap().clone(),
                graph.keep_in,
                graph.keep_out,
            )
        };
        let (_, g, keep_in, keep_out) = run(&store);
        for idx in 0..n * n {
            if !keep_in[idx] && !keep_out[idx] {
                assert_eq!(g.data()[idx], 0.0, "masked-out entry {idx}");
            }
        }

        // Kept entries match central differences.
        let h = 1e-6;
        let mut worst: f64 = 0.0;
        for idx in 0..n * n {
            if !keep_in[idx] && !keep_out[idx] {
                continue;
            }
            let mut up = store.clone();
            up.get_mut("scores").unwrap().array.data_mut()[idx] += h;
            let mut down = store.clone();
            down.get_mut("scores").unwrap().array.data_mut()[idx] -= h;
            let numeric = (run(&up).0 - run(&down).0) / (2.0 * h);
            let analytic = g.data()[idx];
            let rel = (analytic - numeric).abs() / analytic.abs().max(numeric.abs()).max(1.0);
            worst = worst.max(rel);
        }
        assert!(worst < 1e-4, "kept-entry gradients match FD, worst {worst}");
    }
}
