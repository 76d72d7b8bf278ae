//! Node-type aware multi-head graph attention.
//!
//! Per layer and head, with `x` the head's slice of the layer input and `r`
//! the one-hot node type:
//!
//! ```text
//! c_mn   = a · [ [x_m || r_m] W_q || [x_n || r_n] W_k ]
//! α_m·   = softmax over neighbours of LeakyReLU(c_m·)
//! out_m  = ELU( Σ_o α_mo x_o W_v )
//! ```
//!
//! Head outputs are concatenated, so every layer keeps width `d_h`.

use alloc::format;
use alloc::vec::Vec;

use serde::{Deserialize, Serialize};

use crate::graph::{NodeType, Pooling, QuisgGraph};
use crate::{Error, ParamId, ParameterStore, Result, Tape, Tensor, Var};

pub const DEFAULT_LEAKY_SLOPE: f64 = 0.2;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct GatConfig {
    pub layers: usize,
    pub heads: usize,
    pub d_model: usize,
    pub leaky_slope: f64,
}

impl GatConfig {
    pub fn d_head(&self) -> usize {
        self.d_model / self.heads
    }

    pub fn validate(&self) -> Result<()> {
        if self.heads == 0 || self.d_model == 0 || !self.d_model.is_multiple_of(self.heads) {
            return Err(Error::Config(format!(
                "gat width {} is not divisible by {} heads",
                self.d_model, self.heads
            )));
        }
        Ok(())
    }
}

#[derive(Clone, Copy, Debug)]
pub struct HeadParams {
    pub wq: ParamId,
    pub wk: ParamId,
    pub a: ParamId,
    pub wv: ParamId,
}

#[derive(Clone, Debug)]
pub struct Gat {
    cfg: GatConfig,
    layers: Vec<Vec<HeadParams>>,
}

pub struct GatOutput {
    pub states: Var,
    /// Attention per layer and head, `n × n` with zeros off the neighbourhood.
    pub attention: Vec<Vec<Tensor>>,
}

fn names(prefix: &str, l: usize, h: usize) -> [alloc::string::String; 4] {
    ["wq", "wk", "a", "wv"].map(|p| format!("{prefix}.l{l}.h{h}.{p}"))
}

impl Gat {
    pub fn register(store: &mut ParameterStore, prefix: &str, cfg: GatConfig) -> Result<Self> {
        cfg.validate()?;
        let d = cfg.d_head();
        let t = NodeType::COUNT;
        let layers = (0..cfg.layers)
            .map(|l| {
                (0..cfg.heads)
                    .map(|h| {
                        let [wq, wk, a, wv] = names(prefix, l, h);
                        Ok(HeadParams {
                            wq: store.uniform(&wq, d + t, d, d + t)?,
                            wk: store.uniform(&wk, d + t, d, d + t)?,
                            a: store.uniform(&a, 1, 2 * d, 2 * d)?,
                            wv: store.uniform(&wv, d, d, d)?,
                        })
                    })
                    .collect::<Result<Vec<_>>>()
            })
            .collect::<Result<_>>()?;
        Ok(Self { cfg, layers })
    }

    pub fn attach(store: &ParameterStore, prefix: &str, cfg: GatConfig) -> Result<Self> {
        cfg.validate()?;
        let layers = (0..cfg.layers)
            .map(|l| {
                (0..cfg.heads)
                    .map(|h| {
                        let [wq, wk, a, wv] = names(prefix, l, h);
                        Ok(HeadParams {
                            wq: store.require(&wq)?,
                            wk: store.require(&wk)?,
                            a: store.require(&a)?,
                            wv: store.require(&wv)?,
                        })
                    })
                    .collect::<Result<Vec<_>>>()
            })
            .collect::<Result<_>>()?;
        Ok(Self { cfg, layers })
    }

    pub fn config(&self) -> GatConfig {
        self.cfg
    }

    pub fn head_params(&self, layer: usize, head: usize) -> HeadParams {
        self.layers[layer][head]
    }

    /// Runs all layers from `init` (`n × d_h`).
    pub fn forward(&self, tape: &mut Tape, store: &ParameterStore, graph: &QuisgGraph, init: Var) -> Result<GatOutput> {
        let types: Vec<NodeType> = graph.nodes().iter().map(|v| v.node_type).collect();
        self.forward_typed(tape, store, graph.adjacency(), &types, init)
    }

    /// Same as [`Gat::forward`] on a bare adjacency and type list.
    pub fn forward_typed(
        &self,
        tape: &mut Tape,
        store: &ParameterStore,
        adjacency: &[bool],
        types: &[NodeType],
        init: Var,
    ) -> Result<GatOutput> {
        let n = types.len();
        let [rows, cols] = tape.shape(init);
        if rows != n || cols != self.cfg.d_model || adjacency.len() != n * n {
            return Err(Error::Dimension {
                op: "gat",
                detail: format!(
                    "{n} nodes, adjacency of {}, states {rows}x{cols}, width {}",
                    adjacency.len(),
                    self.cfg.d_model
                ),
            });
        }
        let mut onehot = Tensor::zeros(n, NodeType::COUNT);
        for (i, t) in types.iter().enumerate() {
            onehot.set(i, t.index(), 1.0);
        }
        let r = tape.constant(onehot)?;
        let d = self.cfg.d_head();

        let mut h = init;
        let mut attention = Vec::with_capacity(self.layers.len());
        for layer in &self.layers {
            let mut outs = Vec::with_capacity(layer.len());
            let mut alphas = Vec::with_capacity(layer.len());
            for (hi, p) in layer.iter().enumerate() {
                let x = tape.slice_cols(h, hi * d, d)?;
                let xr = tape.concat_cols(&[x, r])?;
                let wq = tape.param(store, p.wq)?;
                let wk = tape.param(store, p.wk)?;
                let q = tape.matmul(xr, wq)?;
                let k = tape.matmul(xr, wk)?;
                let a = tape.param(store, p.a)?;
                let aq = tape.slice_cols(a, 0, d)?;
                let ak = tape.slice_cols(a, d, d)?;
                let aq = tape.transpose(aq)?;
                let ak = tape.transpose(ak)?;
                let u = tape.matmul(q, aq)?; // n × 1, source term
                let v = tape.matmul(k, ak)?; // n × 1, neighbour term
                let c = tape.outer_sum(u, v)?; // c[m][o] = u[m] + v[o]
                let c = tape.leaky_relu(c, self.cfg.leaky_slope)?;
                let alpha = tape.masked_softmax(c, adjacency)?;
                let wv = tape.param(store, p.wv)?;
                let msg = tape.matmul(x, wv)?;
                let agg = tape.matmul(alpha, msg)?;
                outs.push(tape.elu(agg)?);
                alphas.push(tape.value(alpha).clone());
            }
            h = tape.concat_cols(&outs)?;
            attention.push(alphas);
        }
        Ok(GatOutput { states: h, attention })
    }
}

/// Initial node states pooled from encoder rows.
pub fn pool_node_inits(tape: &mut Tape, hidden: Var, graph: &QuisgGraph) -> Result<Var> {
    let groups: Vec<Vec<usize>> = graph
        .nodes()
        .iter()
        .map(|v| match v.pooling {
            Pooling::Single => v.rows[..1].to_vec(),
            Pooling::Mean => v.rows.clone(),
        })
        .collect();
    tape.pool_rows(hidden, &groups)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::gradcheck::finite_diff_check;
    use alloc::vec;
    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn cfg(layers: usize, heads: usize, d: usize) -> GatConfig {
        GatConfig {
            layers,
            heads,
            d_model: d,
            leaky_slope: DEFAULT_LEAKY_SLOPE,
        }
    }

    fn random_states(n: usize, d: usize, seed: u64) -> Tensor {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        Tensor::from_vec(n, d, (0..n * d).map(|_| rng.gen_range(-1.0..1.0)).collect()).unwrap()
    }

    fn elu(x: f64) -> f64 {
        if x > 0.0 {
            x
        } else {
            x.exp_m1()
        }
    }

    #[test]
    fn heads_must_divide_width() {
        let mut s = ParameterStore::new(0);
        assert!(matches!(Gat::register(&mut s, "g", cfg(1, 3, 8)), Err(Error::Config(_))));
    }

    #[test]
    fn parameter_shapes() {
        let mut s = ParameterStore::new(0);
        let g = Gat::register(&mut s, "g", cfg(2, 2, 8)).unwrap();
        let p = g.head_params(1, 1);
        assert_eq!(s.get(p.wq).shape(), [8, 4]);
        assert_eq!(s.get(p.wk).shape(), [8, 4]);
        assert_eq!(s.get(p.a).shape(), [1, 8]);
        assert_eq!(s.get(p.wv).shape(), [4, 4]);
        assert_eq!(s.name(p.a), "g.l1.h1.a");
    }

    #[test]
    fn isolated_node_attends_to_itself() {
        let mut s = ParameterStore::new(1);
        let g = Gat::register(&mut s, "g", cfg(1, 1, 3)).unwrap();
        let x = random_states(2, 3, 5);
        let adj = [true, false, false, true];
        let mut t = Tape::new();
        let init = t.constant(x.clone()).unwrap();
        let out = g.forward_typed(&mut t, &s, &adj, &[NodeType::Qw, NodeType::Dw], init).unwrap();
        assert_eq!(out.attention[0][0].data(), &[1.0, 0.0, 0.0, 1.0]);
        let wv = s.get(g.head_params(0, 0).wv);
        let hv = crate::tape::matmul(&x, wv);
        for (a, b) in t.value(out.states).data().iter().zip(hv.data()) {
            assert_eq!(*a, elu(*b));
        }
    }

    #[test]
    fn symmetric_nodes_get_identical_outputs() {
        let mut s = ParameterStore::new(2);
        let g = Gat::register(&mut s, "g", cfg(2, 2, 4)).unwrap();
        // Node 0 is a hub; 1 and 2 are leaves with identical states and types.
        let mut x = random_states(3, 4, 9);
        let row1 = x.row(1).to_vec();
        x.row_mut(2).copy_from_slice(&row1);
        let adj = [true, true, true, true, true, false, true, false, true];
        let mut t = Tape::new();
        let init = t.constant(x).unwrap();
        let out = g.forward_typed(&mut t, &s, &adj, &[NodeType::Qw, NodeType::Dw, NodeType::Dw], init).unwrap();
        assert_eq!(t.value(out.states).row(1), t.value(out.states).row(2));
    }

    /// Dense recomputation straight from the formulas, one head, one layer.
    fn dense_oracle(x: &Tensor, types: &[NodeType], adj: &[bool], wq: &Tensor, wk: &Tensor, a: &Tensor, wv: &Tensor) -> Tensor {
        let n = x.rows();
        let d = x.cols();
        let ext = |m: usize| -> Vec<f64> {
            let mut v = x.row(m).to_vec();
            v.extend((0..4).map(|t| if types[m].index() == t { 1.0 } else { 0.0 }));
            v
        };
        let proj = |v: &[f64], w: &Tensor| -> Vec<f64> { (0..d).map(|j| (0..v.len()).map(|i| v[i] * w.get(i, j)).sum()).collect() };
        let mut out = Tensor::zeros(n, d);
        for m in 0..n {
            let qm = proj(&ext(m), wq);
            let mut scores = vec![f64::NEG_INFINITY; n];
            for o in 0..n {
                if adj[m * n + o] {
                    let ko = proj(&ext(o), wk);
                    let c: f64 = (0..d).map(|j| a.get(0, j) * qm[j] + a.get(0, d + j) * ko[j]).sum();
                    scores[o] = if c > 0.0 { c } else { 0.2 * c };
                }
            }
            let mx = scores.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
            let z: f64 = scores.iter().map(|s| (s - mx).exp()).sum();
            for j in 0..d {
                let mut acc = 0.0;
                for o in 0..n {
                    let alpha = (scores[o] - mx).exp() / z;
                    let msg: f64 = (0..d).map(|i| x.get(o, i) * wv.get(i, j)).sum();
                    acc += alpha * msg;
                }
                out.set(m, j, elu(acc));
            }
        }
        out
    }

    #[test]
    fn matches_dense_oracle() {
        let mut s = ParameterStore::new(3);
        let g = Gat::register(&mut s, "g", cfg(1, 1, 3)).unwrap();
        let x = random_states(4, 3, 11);
        let types = [NodeType::Qw, NodeType::Qs, NodeType::Ds, NodeType::Dw];
        #[rustfmt::skip]
        let adj = [
            true, true, false, true,
            true, true, true, false,
            false, true, true, true,
            true, false, true, true,
        ];
        let mut t = Tape::new();
        let init = t.constant(x.clone()).unwrap();
        let out = g.forward_typed(&mut t, &s, &adj, &types, init).unwrap();
        let p = g.head_params(0, 0);
        let expect = dense_oracle(&x, &types, &adj, s.get(p.wq), s.get(p.wk), s.get(p.a), s.get(p.wv));
        assert!(t.value(out.states).max_abs_diff(&expect) < 1e-12);
    }

    #[test]
    fn node_type_changes_output() {
        let mut s = ParameterStore::new(4);
        let g = Gat::register(&mut s, "g", cfg(1, 2, 4)).unwrap();
        let x = random_states(3, 4, 13);
        let adj = [true; 9];
        let run = |types: &[NodeType]| {
            let mut t = Tape::new();
            let init = t.constant(x.clone()).unwrap();
            let out = g.forward_typed(&mut t, &s, &adj, types, init).unwrap();
            t.value(out.states).clone()
        };
        let a = run(&[NodeType::Qw, NodeType::Ds, NodeType::Dw]);
        let b = run(&[NodeType::Qw, NodeType::Qs, NodeType::Dw]);
        assert!(a.max_abs_diff(&b) > 1e-9);
    }

    #[test]
    fn gradcheck_two_layers_two_heads() {
        let mut s = ParameterStore::new(5);
        let g = Gat::register(&mut s, "g", cfg(2, 2, 4)).unwrap();
        s.with_value("x", random_states(4, 4, 17)).unwrap();
        let x = s.require("x").unwrap();
        let types = [NodeType::Qw, NodeType::Qs, NodeType::Ds, NodeType::Dw];
        let adj = [true, true, false, true, true, true, true, false, false, true, true, true, true, false, true, true];
        let f = |st: &ParameterStore, t: &mut Tape| {
            let init = t.param(st, x)?;
            let out = g.forward_typed(t, st, &adj, &types, init)?;
            let sq = t.mul(out.states, out.states)?;
            t.sum(sq)
        };
        let report = finite_diff_check(f, &s, 1e-5, 1e-4).unwrap();
        assert!(report.passed(), "{report:?}");
    }

    fn permute(x: &Tensor, perm: &[usize]) -> Tensor {
        let mut out = Tensor::zeros(x.rows(), x.cols());
        for (new, &old) in perm.iter().enumerate() {
            out.row_mut(new).copy_from_slice(x.row(old));
        }
        out
    }

    proptest! {
        #[test]
        fn attention_rows_normalised(seed in 0u64..1000, n in 1usize..7, heads_pow in 0u32..3, layers in 1usize..4) {
            let heads = 1usize << heads_pow;
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let mut adj = vec![false; n * n];
            for i in 0..n {
                adj[i * n + i] = true;
                for j in i + 1..n {
                    let e = rng.gen_bool(0.4);
                    adj[i * n + j] = e;
                    adj[j * n + i] = e;
                }
            }
            let all = [NodeType::Qw, NodeType::Qs, NodeType::Ds, NodeType::Dw];
            let types: Vec<NodeType> = (0..n).map(|_| all[rng.gen_range(0..4)]).collect();
            let mut s = ParameterStore::new(seed);
            let g = Gat::register(&mut s, "g", cfg(layers, heads, 4)).unwrap();
            let mut t = Tape::new();
            let init = t.constant(random_states(n, 4, seed)).unwrap();
            let out = g.forward_typed(&mut t, &s, &adj, &types, init).unwrap();
            for alpha in out.attention.iter().flatten() {
                for m in 0..n {
                    let row = alpha.row(m);
                    prop_assert!((row.iter().sum::<f64>() - 1.0).abs() <= 1e-12);
                    for o in 0..n {
                        if !adj[m * n + o] {
                            prop_assert_eq!(row[o], 0.0);
                        }
                    }
                }
            }
        }

        #[test]
        fn permutation_equivariant(seed in 0u64..500, n in 2usize..6) {
            let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0xabc);
            let mut adj = vec![false; n * n];
            for i in 0..n {
                adj[i * n + i] = true;
                for j in i + 1..n {
                    let e = rng.gen_bool(0.5);
                    adj[i * n + j] = e;
                    adj[j * n + i] = e;
                }
            }
            let all = [NodeType::Qw, NodeType::Qs, NodeType::Ds, NodeType::Dw];
            let types: Vec<NodeType> = (0..n).map(|_| all[rng.gen_range(0..4)]).collect();
            let mut perm: Vec<usize> = (0..n).collect();
            perm.reverse();
            perm.rotate_left(seed as usize % n);
            let padj: Vec<bool> = (0..n * n).map(|k| adj[perm[k / n] * n + perm[k % n]]).collect();
            let ptypes: Vec<NodeType> = perm.iter().map(|&p| types[p]).collect();

            let mut s = ParameterStore::new(seed);
            let g = Gat::register(&mut s, "g", cfg(2, 2, 4)).unwrap();
            let x = random_states(n, 4, seed);
            let mut t = Tape::new();
            let a = t.constant(x.clone()).unwrap();
            let b = t.constant(permute(&x, &perm)).unwrap();
            let oa = g.forward_typed(&mut t, &s, &adj, &types, a).unwrap();
            let ob = g.forward_typed(&mut t, &s, &padj, &ptypes, b).unwrap();
            prop_assert!(permute(t.value(oa.states), &perm).max_abs_diff(t.value(ob.states)) <= 1e-10);
        }
    }
}
