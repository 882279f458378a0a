//! Independent reference implementations shared by the integration tests.
#![allow(dead_code)]

use geoloc25d::localizer::{ConnectivityGraph, LocationRecord};
use rand::seq::SliceRandom;
use rand::Rng;
use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha8Rng;

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

fn unit(v: &[f64]) -> Vec<f64> {
    let mut n = 0.0;
    for x in v {
        n += x * x;
    }
    let n = n.sqrt();
    v.iter().map(|x| x / n).collect()
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    let mut s = 0.0;
    for i in 0..a.len() {
        s += a[i] * b[i];
    }
    s
}

/// `-log(exp(d(z, h_i)/tau) / sum_k exp(d(z, h_k)/tau))` evaluated directly.
fn nce(z: &[f64], i: usize, bank: &[Vec<f64>], tau: f64) -> f64 {
    let mut denom = 0.0;
    for h in bank {
        denom += (dot(z, h) / tau).exp();
    }
    -((dot(z, &bank[i]) / tau).exp() / denom).ln()
}

fn pair_term(a: &[Vec<f64>], b: &[Vec<f64>], tau: f64) -> f64 {
    let bsz = a.len();
    let mut s = 0.0;
    for i in 0..bsz {
        s += nce(&a[i], i, b, tau) + nce(&b[i], i, a, tau);
    }
    s / (2.0 * bsz as f64)
}

/// Scalar-loop losses `(pano, map, cross, total)` over raw embeddings given
/// as row lists. The cross-modal term averages the two unit embeddings of
/// each item and re-normalizes.
pub fn oracle_losses(
    q1: &[Vec<f64>],
    q2: &[Vec<f64>],
    r1: &[Vec<f64>],
    r2: &[Vec<f64>],
    tau: f64,
    lambda1: f64,
    lambda2: f64,
) -> [f64; 4] {
    let u = |m: &[Vec<f64>]| m.iter().map(|v| unit(v)).collect::<Vec<_>>();
    let (uq1, uq2, ur1, ur2) = (u(q1), u(q2), u(r1), u(r2));
    let avg = |a: &[Vec<f64>], b: &[Vec<f64>]| {
        a.iter()
            .zip(b)
            .map(|(x, y)| unit(&x.iter().zip(y).map(|(p, q)| 0.5 * (p + q)).collect::<Vec<_>>()))
            .collect::<Vec<_>>()
    };
    let pano = pair_term(&uq1, &uq2, tau);
    let map = pair_term(&ur1, &ur2, tau);
    let cross = pair_term(&avg(&uq1, &uq2), &avg(&ur1, &ur2), tau);
    [pano, map, cross, pano + lambda1 * map + lambda2 * cross]
}

pub fn rows(m: &ndarray::Array2<f64>) -> Vec<Vec<f64>> {
    m.rows().into_iter().map(|r| r.to_vec()).collect()
}

/// Connected random graph on `n` nodes with ids `10 * i + 3`: a random
/// spanning tree plus extra edges with probability `p`.
pub fn random_graph(n: usize, p: f64, seed: u64) -> ConnectivityGraph {
    let mut r = rng(seed);
    let mut adj = vec![Vec::<usize>::new(); n];
    let mut order: Vec<usize> = (0..n).collect();
    order.shuffle(&mut r);
    for i in 1..n {
        let j = order[r.random_range(0..i)];
        adj[order[i]].push(j);
        adj[j].push(order[i]);
    }
    for a in 0..n {
        for b in a + 1..n {
            if !adj[a].contains(&b) && r.random::<f64>() < p {
                adj[a].push(b);
                adj[b].push(a);
            }
        }
    }
    let id = |i: usize| (10 * i + 3) as u64;
    ConnectivityGraph::new(
        (0..n)
            .map(|i| LocationRecord {
                id: id(i),
                x: i as f64,
                y: 0.0,
                yaw: 0.0,
                neighbors: adj[i].iter().map(|&j| id(j)).collect(),
            })
            .collect(),
    )
    .unwrap()
}

fn sq(a: &[f64], b: &[f64]) -> f64 {
    let mut s = 0.0;
    for i in 0..a.len() {
        let d = a[i] - b[i];
        s += d * d;
    }
    s
}

/// Rank-1 window suffix and score over every walk of `t` steps, found by
/// exhaustive enumeration. `emb[i]` embeds the i-th record of `graph`.
pub fn brute_force_best(
    graph: &ConnectivityGraph,
    emb: &[Vec<f64>],
    queries: &[Vec<f64>],
    t: usize,
    window: usize,
) -> Option<(Vec<u64>, f64)> {
    let recs = graph.records();
    let slot = |id: u64| recs.iter().position(|r| r.id == id).unwrap();
    let mut best: Option<(Vec<u64>, f64)> = None;
    let mut walk = Vec::with_capacity(t);
    fn rec(
        graph: &ConnectivityGraph,
        emb: &[Vec<f64>],
        queries: &[Vec<f64>],
        t: usize,
        window: usize,
        walk: &mut Vec<usize>,
        score: f64,
        best: &mut Option<(Vec<u64>, f64)>,
        slot: &dyn Fn(u64) -> usize,
    ) {
        let recs = graph.records();
        if walk.len() == t {
            let suffix: Vec<u64> = walk[t.saturating_sub(window)..].iter().map(|&i| recs[i].id).collect();
            let better = match best {
                None => true,
                Some((s, b)) => score < *b || (score == *b && suffix < *s),
            };
            if better {
                *best = Some((suffix, score));
            }
            return;
        }
        let last = *walk.last().unwrap();
        for n in graph.neighbors(recs[last].id) {
            let j = slot(n);
            walk.push(j);
            let s = score + sq(&queries[walk.len() - 1], &emb[j]);
            rec(graph, emb, queries, t, window, walk, s, best, slot);
            walk.pop();
        }
    }
    for start in 0..recs.len() {
        walk.clear();
        walk.push(start);
        let s = sq(&queries[0], &emb[start]);
        rec(graph, emb, queries, t, window, &mut walk, s, &mut best, &slot);
    }
    best
}

/// Eigenvalues of a symmetric matrix by cyclic Jacobi rotations, descending.
pub fn jacobi_eigenvalues(m: &ndarray::Array2<f64>) -> Vec<f64> {
    let n = m.nrows();
    let mut a = m.clone();
    for _ in 0..100 {
        let mut off = 0.0;
        for p in 0..n {
            for q in p + 1..n {
                off += a[[p, q]] * a[[p, q]];
            }
        }
        if off < 1e-30 {
            break;
        }
        for p in 0..n {
            for q in p + 1..n {
                if a[[p, q]].abs() < 1e-300 {
                    continue;
                }
                let theta = (a[[q, q]] - a[[p, p]]) / (2.0 * a[[p, q]]);
                let t = theta.signum() / (theta.abs() + (theta * theta + 1.0).sqrt());
                let t = if theta == 0.0 { 1.0 } else { t };
                let c = 1.0 / (t * t + 1.0).sqrt();
                let s = t * c;
                for k in 0..n {
                    let akp = a[[k, p]];
                    let akq = a[[k, q]];
                    a[[k, p]] = c * akp - s * akq;
                    a[[k, q]] = s * akp + c * akq;
                }
                for k in 0..n {
                    let apk = a[[p, k]];
                    let aqk = a[[q, k]];
                    a[[p, k]] = c * apk - s * aqk;
                    a[[q, k]] = s * apk + c * aqk;
                }
            }
        }
    }
    let mut ev: Vec<f64> = (0..n).map(|i| a[[i, i]]).collect();
    ev.sort_by(|x, y| y.total_cmp(x));
    ev
}

/// Sample covariance with divisor `m - 1`.
pub fn covariance(x: &ndarray::Array2<f64>) -> ndarray::Array2<f64> {
    let (m, d) = x.dim();
    let mean: Vec<f64> = (0..d).map(|j| x.column(j).sum() / m as f64).collect();
    let mut c = ndarray::Array2::zeros((d, d));
    for r in x.rows() {
        for i in 0..d {
            for j in 0..d {
                c[[i, j]] += (r[i] - mean[i]) * (r[j] - mean[j]);
            }
        }
    }
    c / (m as f64 - 1.0)
}

/// Minimum distance between any two selected points.
pub fn min_pairwise(points: &[[f64; 3]], idx: &[usize]) -> f64 {
    let mut best = f64::INFINITY;
    for a in 0..idx.len() {
        for b in a + 1..idx.len() {
            let (p, q) = (points[idx[a]], points[idx[b]]);
            let d = ((p[0] - q[0]).powi(2) + (p[1] - q[1]).powi(2) + (p[2] - q[2]).powi(2)).sqrt();
            best = best.min(d);
        }
    }
    best
}
