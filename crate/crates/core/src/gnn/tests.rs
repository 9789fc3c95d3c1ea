use super::*;
use crate::graph::{build_wknn_graph, EdgeFeature, EmpiricalDistribution, GraphConfig};

struct Fixture {
    graph: SpatialGraph,
    x: Matrix,
    observed: Vec<bool>,
    params: GnnParams,
}

fn fixture(n: usize, f: usize, k: usize, dims: (usize, usize, usize), seed: u64) -> Fixture {
    let mut r = rng::stream(seed, &[]);
    let coords: Vec<(f64, f64)> =
        (0..n).map(|_| (rng::uniform(&mut r) * 10.0, rng::uniform(&mut r) * 4.0)).collect();
    let dists: Vec<_> = (0..n)
        .map(|_| EmpiricalDistribution::new((0..4).map(|_| rng::uniform(&mut r)).collect()).unwrap())
        .collect();
    let graph = build_wknn_graph(&coords, &dists, &GraphConfig { k, ..Default::default() }, |a, b| (a + b) % 3 != 0)
        .unwrap();
    let x = Matrix::from_vec(n, f, (0..n * f).map(|_| rng::normal(&mut r)).collect());
    let observed = (0..n).map(|i| i % 3 == 0).collect();
    let (hidden, layers, filter_hidden) = dims;
    let mut params = init_params(GnnDims { feature_dim: f, hidden, layers, filter_hidden }, seed).unwrap();
    // Non-trivial biases and gains so that no path is silent.
    for v in params.data.iter_mut() {
        *v += 0.1 * rng::normal(&mut r);
    }
    Fixture { graph, x, observed, params }
}

fn naive_relu(v: f64) -> f64 {
    v.max(0.0)
}

/// Straightforward eval-mode forward pass with materialised per-edge
/// filters.
fn naive_forward(fx: &Fixture) -> Vec<Vec<f64>> {
    let p = &fx.params;
    let dims = p.dims;
    let (n, d, h, f) = (fx.graph.n_nodes(), dims.hidden, dims.filter_hidden, dims.feature_dim);
    let mut z: Vec<Vec<f64>> = (0..n)
        .map(|k| {
            let mut row = fx.x.row(k).to_vec();
            row.push(if fx.observed[k] { 1.0 } else { 0.0 });
            row
        })
        .collect();
    for l in 0..dims.layers {
        let din = dims.layer_in(l);
        let lo = p.layer(l);
        let w_agg = p.slice(lo.w_agg, d * 2 * din);
        let b_agg = p.slice(lo.b_agg, d);
        let gain = p.slice(lo.ln_gain, d);
        let bias = p.slice(lo.ln_bias, d);
        let w1 = p.slice(lo.filter_w1, h * EDGE_DIM);
        let b1 = p.slice(lo.filter_b1, h);
        let w2 = p.slice(lo.filter_w2, d * d * h);
        let b2 = p.slice(lo.filter_b2, d * d);
        let ws = p.slice(lo.w_self, d * d);
        let mut zt = Vec::with_capacity(n);
        for k in 0..n {
            let nb: Vec<usize> = fx.graph.neighbors(k).iter().map(|&(u, _)| u).collect();
            let mut m = vec![0.0; din];
            if nb.is_empty() {
                m.clone_from(&z[k]);
            } else {
                for &u in &nb {
                    for i in 0..din {
                        m[i] += z[u][i] / nb.len() as f64;
                    }
                }
            }
            let cat: Vec<f64> = z[k].iter().chain(&m).copied().collect();
            let a: Vec<f64> = (0..d)
                .map(|i| naive_relu(b_agg[i] + (0..2 * din).map(|j| w_agg[i * 2 * din + j] * cat[j]).sum::<f64>()))
                .collect();
            let mu = a.iter().sum::<f64>() / d as f64;
            let var = a.iter().map(|v| (v - mu).powi(2)).sum::<f64>() / d as f64;
            zt.push((0..d).map(|i| (a[i] - mu) / (var + LN_EPS).sqrt() * gain[i] + bias[i]).collect::<Vec<f64>>());
        }
        let mut next = Vec::with_capacity(n);
        for k in 0..n {
            let mut s: Vec<f64> = (0..d).map(|i| (0..d).map(|j| ws[i * d + j] * zt[k][j]).sum()).collect();
            for &(u, e) in fx.graph.neighbors(k) {
                let inp = fx.graph.edge_input(k, e);
                let q: Vec<f64> = (0..h)
                    .map(|hb| naive_relu(b1[hb] + (0..EDGE_DIM).map(|c| w1[hb * EDGE_DIM + c] * inp[c]).sum::<f64>()))
                    .collect();
                for i in 0..d {
                    for j in 0..d {
                        let theta =
                            (b2[i * d + j] + (0..h).map(|hb| w2[(i * d + j) * h + hb] * q[hb]).sum::<f64>()) / d as f64;
                        s[i] += theta * zt[u][j];
                    }
                }
            }
            let mut out: Vec<f64> = s.into_iter().map(naive_relu).collect();
            for i in 0..din.min(d) {
                out[i] += z[k][i];
            }
            next.push(out);
        }
        z = next;
    }
    let (ow, ob) = p.out_offsets();
    let w = p.slice(ow, f * d);
    let b = p.slice(ob, f);
    (0..n)
        .map(|k| (0..f).map(|i| fx.x.get(k, i) + b[i] + (0..d).map(|j| w[i * d + j] * z[k][j]).sum::<f64>()).collect())
        .collect()
}

fn assert_close(got: &Matrix, want: &[Vec<f64>], tol: f64) {
    for (k, row) in want.iter().enumerate() {
        for (i, w) in row.iter().enumerate() {
            let g = got.get(k, i);
            assert!((g - w).abs() <= tol * (1.0 + w.abs()), "node {k} feature {i}: {g} vs {w}");
        }
    }
}

#[test]
fn matches_naive_implementation() {
    let fx = fixture(14, 6, 3, (8, 2, 4), 11);
    let out = infer_inductive(&fx.graph, &fx.x, &fx.observed, &fx.params).unwrap();
    assert_close(&out, &naive_forward(&fx), 1e-11);
}

#[test]
fn matches_naive_with_unequal_widths() {
    // Input narrower than hidden in layer 0, wider in a single layer net.
    let fx = fixture(12, 3, 4, (5, 3, 2), 12);
    let out = infer_inductive(&fx.graph, &fx.x, &fx.observed, &fx.params).unwrap();
    assert_close(&out, &naive_forward(&fx), 1e-11);
    let fx = fixture(12, 9, 4, (4, 1, 3), 13);
    let out = infer_inductive(&fx.graph, &fx.x, &fx.observed, &fx.params).unwrap();
    assert_close(&out, &naive_forward(&fx), 1e-11);
}

#[test]
fn zero_parameters_return_the_input() {
    let mut fx = fixture(10, 4, 3, (6, 2, 3), 3);
    fx.params.data.iter_mut().for_each(|v| *v = 0.0);
    let out = infer_inductive(&fx.graph, &fx.x, &fx.observed, &fx.params).unwrap();
    assert_eq!(out, fx.x);
}

#[test]
fn silent_filters_reduce_to_self_map() {
    let mut fx = fixture(10, 4, 3, (6, 2, 3), 4);
    let d = 6;
    for l in 0..2 {
        let lo = fx.params.layer(l);
        fx.params.slice_mut(lo.filter_w2, d * d * 3).iter_mut().for_each(|v| *v = 0.0);
        fx.params.slice_mut(lo.filter_b2, d * d).iter_mut().for_each(|v| *v = 0.0);
        let ws = fx.params.slice_mut(lo.w_self, d * d);
        ws.iter_mut().for_each(|v| *v = 0.0);
        (0..d).for_each(|i| ws[i * d + i] = 1.0);
    }
    let trace = forward(&fx.graph, &fx.x, &fx.observed, &fx.params, None).unwrap();
    for lt in &trace.layers {
        assert_eq!(lt.ecc_pre, lt.z_tilde);
    }
    assert_close(&trace.output, &naive_forward(&fx), 1e-11);
}

#[test]
fn isolated_node_aggregates_itself() {
    let coords = vec![(0.0, 0.0), (1.0, 0.0), (5.0, 5.0)];
    let feat = EdgeFeature { dx: 1.0, dy: 0.0, d_euc: 1.0, w_dist: 0.2, los: true };
    let edges = vec![crate::graph::GraphEdge { u: 0, v: 1, feature: feat, weight: 0.8 }];
    let graph = SpatialGraph::from_parts(coords, edges, 1, Default::default(), 1.0, 1.0).unwrap();
    let mut fx = fixture(3, 2, 1, (4, 2, 2), 5);
    fx.graph = graph;
    let trace = forward(&fx.graph, &fx.x, &fx.observed, &fx.params, None).unwrap();
    let c = &trace.layers[0].concat;
    assert_eq!(&c.row(2)[..3], &c.row(2)[3..]);
    assert_close(&trace.output, &naive_forward(&fx), 1e-11);
}

fn linear_loss(out: &Matrix, c: &Matrix) -> f64 {
    dot(&out.data, &c.data)
}

fn fd_check(fx: &Fixture, train: Option<&TrainPass>) {
    let mut r = rng::stream(99, &[]);
    let c = Matrix::from_vec(fx.x.rows, fx.x.cols, (0..fx.x.data.len()).map(|_| rng::normal(&mut r)).collect());
    let trace = forward(&fx.graph, &fx.x, &fx.observed, &fx.params, train).unwrap();
    let g = backward(&trace, &fx.graph, &fx.params, &c).unwrap();
    let step = 1e-6;
    let mut p = fx.params.clone();
    let mut worst: f64 = 0.0;
    for s in fx.params.specs() {
        for idx in s.offset..s.offset + s.len() {
            let orig = p.data[idx];
            p.data[idx] = orig + step;
            let up = linear_loss(&forward(&fx.graph, &fx.x, &fx.observed, &p, train).unwrap().output, &c);
            p.data[idx] = orig - step;
            let dn = linear_loss(&forward(&fx.graph, &fx.x, &fx.observed, &p, train).unwrap().output, &c);
            p.data[idx] = orig;
            let fd = (up - dn) / (2.0 * step);
            let err = (fd - g.data[idx]).abs() / (fd.abs() + g.data[idx].abs()).max(1e-3);
            assert!(err < 1e-4, "{} [{}]: analytic {} vs numeric {fd}", s.name, idx - s.offset, g.data[idx]);
            worst = worst.max(err);
        }
    }
    assert!(worst < 1e-4);
}

#[test]
fn gradients_match_finite_differences_eval() {
    // 10 nodes, N = 2 antennas, L = 4 subcarriers (2NL = 16 features).
    fd_check(&fixture(10, 16, 3, (8, 2, 4), 21), None);
}

#[test]
fn gradients_match_finite_differences_train() {
    let tp = TrainPass { seed: 5, dropout: 0.3, neighbor_sample: Some(2) };
    fd_check(&fixture(10, 16, 3, (8, 2, 4), 22), Some(&tp));
}

#[test]
fn zero_output_gradient_gives_zero_gradients() {
    let fx = fixture(10, 4, 3, (6, 2, 3), 6);
    let trace = forward(&fx.graph, &fx.x, &fx.observed, &fx.params, None).unwrap();
    let g = backward(&trace, &fx.graph, &fx.params, &Matrix::zeros(10, 4)).unwrap();
    assert!(g.data.iter().all(|&v| v == 0.0));
}

#[test]
fn backward_is_linear_in_output_gradient() {
    let fx = fixture(10, 4, 3, (6, 2, 3), 7);
    let mut r = rng::stream(8, &[]);
    let mut rand = || Matrix::from_vec(10, 4, (0..40).map(|_| rng::normal(&mut r)).collect());
    let (a, b) = (rand(), rand());
    let mut sum = a.clone();
    axpy(2.5, &b.data, &mut sum.data);
    let trace = forward(&fx.graph, &fx.x, &fx.observed, &fx.params, None).unwrap();
    let ga = backward(&trace, &fx.graph, &fx.params, &a).unwrap();
    let gb = backward(&trace, &fx.graph, &fx.params, &b).unwrap();
    let gs = backward(&trace, &fx.graph, &fx.params, &sum).unwrap();
    for i in 0..gs.len() {
        let want = ga.data[i] + 2.5 * gb.data[i];
        assert!((gs.data[i] - want).abs() < 1e-10 * (1.0 + want.abs()));
    }
}

#[test]
fn deterministic_passes() {
    let fx = fixture(12, 4, 3, (6, 2, 3), 9);
    let a = infer_inductive(&fx.graph, &fx.x, &fx.observed, &fx.params).unwrap();
    assert_eq!(a, infer_inductive(&fx.graph, &fx.x, &fx.observed, &fx.params).unwrap());
    let tp = TrainPass { seed: 1, dropout: 0.5, neighbor_sample: Some(2) };
    let t1 = forward(&fx.graph, &fx.x, &fx.observed, &fx.params, Some(&tp)).unwrap().output;
    let t2 = forward(&fx.graph, &fx.x, &fx.observed, &fx.params, Some(&tp)).unwrap().output;
    assert_eq!(t1, t2);
    let other = TrainPass { seed: 2, ..tp };
    assert_ne!(t1, forward(&fx.graph, &fx.x, &fx.observed, &fx.params, Some(&other)).unwrap().output);
    assert_ne!(t1, a);
}

#[test]
fn permutation_equivariance() {
    let n = 12;
    let fx = fixture(n, 4, 3, (6, 2, 3), 10);
    let perm: Vec<usize> = (0..n).map(|i| (i * 5 + 3) % n).collect();
    let mut edges = Vec::new();
    for e in fx.graph.edges() {
        let (pu, pv) = (perm[e.u], perm[e.v]);
        let mut ne = e.clone();
        if pu < pv {
            ne.u = pu;
            ne.v = pv;
        } else {
            ne.u = pv;
            ne.v = pu;
            ne.feature = e.feature.reversed();
        }
        edges.push(ne);
    }
    let mut coords = vec![(0.0, 0.0); n];
    let mut x = Matrix::zeros(n, 4);
    let mut observed = vec![false; n];
    for i in 0..n {
        coords[perm[i]] = fx.graph.coords()[i];
        x.row_mut(perm[i]).copy_from_slice(fx.x.row(i));
        observed[perm[i]] = fx.observed[i];
    }
    let g2 = SpatialGraph::from_parts(coords, edges, 3, fx.graph.metric(), fx.graph.tau_w(), fx.graph.dist_scale())
        .unwrap();
    let a = infer_inductive(&fx.graph, &fx.x, &fx.observed, &fx.params).unwrap();
    let b = infer_inductive(&g2, &x, &observed, &fx.params).unwrap();
    for i in 0..n {
        for (u, v) in a.row(i).iter().zip(b.row(perm[i])) {
            assert!((u - v).abs() < 1e-12);
        }
    }
}

#[test]
fn subgraph_inference_matches_full_graph() {
    let fx = fixture(40, 4, 3, (6, 2, 3), 14);
    let full = infer_inductive(&fx.graph, &fx.x, &fx.observed, &fx.params).unwrap();
    let targets = [17, 3, 29];
    let sub = infer_nodes(&fx.graph, &fx.x, &fx.observed, &fx.params, &targets).unwrap();
    for (r, &t) in targets.iter().enumerate() {
        for (u, v) in sub.row(r).iter().zip(full.row(t)) {
            assert!((u - v).abs() < 1e-12);
        }
    }
}

#[test]
fn perturbation_outside_receptive_field_is_invisible() {
    let fx = fixture(80, 4, 3, (6, 2, 3), 15);
    let target = 0;
    let near = fx.graph.khop_nodes(&[target], receptive_hops(&fx.params.dims));
    let far = (0..80).find(|i| near.binary_search(i).is_err()).expect("graph wider than the receptive field");
    let mut x = fx.x.clone();
    x.row_mut(far).iter_mut().for_each(|v| *v += 10.0);
    let a = infer_inductive(&fx.graph, &fx.x, &fx.observed, &fx.params).unwrap();
    let b = infer_inductive(&fx.graph, &x, &fx.observed, &fx.params).unwrap();
    assert_eq!(a.row(target), b.row(target));
    assert_ne!(a.row(far), b.row(far));
}

#[test]
fn appended_node_leaves_distant_predictions() {
    let mut fx = fixture(40, 4, 3, (6, 2, 3), 16);
    let before = infer_inductive(&fx.graph, &fx.x, &fx.observed, &fx.params).unwrap();
    let mut r = rng::stream(16, &[1]);
    let dists: Vec<_> = (0..41)
        .map(|_| EmpiricalDistribution::new((0..4).map(|_| rng::uniform(&mut r)).collect()).unwrap())
        .collect();
    let new = fx.graph.append_nodes(&[(5.0, 2.0)], &dists, |_, _| true).unwrap();
    assert_eq!(new, 40..41);
    let mut x = Matrix::zeros(41, 4);
    x.data[..160].copy_from_slice(&fx.x.data);
    fx.observed.push(false);
    let after = infer_inductive(&fx.graph, &x, &fx.observed, &fx.params).unwrap();
    let near = fx.graph.khop_nodes(&[40], receptive_hops(&fx.params.dims));
    let mut untouched = 0;
    for k in 0..40 {
        if near.binary_search(&k).is_err() {
            assert_eq!(before.row(k), after.row(k));
            untouched += 1;
        }
    }
    assert!(untouched > 0);
}

#[test]
fn stale_trace_is_rejected_and_inference_is_pure() {
    let fx = fixture(10, 4, 3, (6, 2, 3), 17);
    let trace = forward(&fx.graph, &fx.x, &fx.observed, &fx.params, None).unwrap();
    let digest = fx.params.digest();
    let _ = infer_inductive(&fx.graph, &fx.x, &fx.observed, &fx.params).unwrap();
    let _ = infer_nodes(&fx.graph, &fx.x, &fx.observed, &fx.params, &[1, 2]).unwrap();
    assert_eq!(fx.params.digest(), digest);
    let mut p = fx.params.clone();
    p.data[0] += 1e-9;
    assert!(backward(&trace, &fx.graph, &p, &Matrix::zeros(10, 4)).is_err());
}

#[test]
fn rejects_bad_inputs() {
    let fx = fixture(10, 4, 3, (6, 2, 3), 18);
    assert!(infer_inductive(&fx.graph, &Matrix::zeros(10, 5), &fx.observed, &fx.params).is_err());
    assert!(infer_inductive(&fx.graph, &Matrix::zeros(9, 4), &fx.observed[..9], &fx.params).is_err());
    let mut x = fx.x.clone();
    x.data[3] = f64::NAN;
    assert!(infer_inductive(&fx.graph, &x, &fx.observed, &fx.params).is_err());
    assert!(infer_nodes(&fx.graph, &fx.x, &fx.observed, &fx.params, &[10]).is_err());
}
