//! Acceptance suite: one PASS/FAIL line per criterion, non-zero exit status
//! if any criterion fails.

mod common;

use std::path::Path;
use std::process::Command;
use std::time::{Duration, Instant};

use geoloc25d::contrastive::{gradient_check, modal_losses, LinearEncoderPair, LossConfig, TrainBatch, TrainConfig};
use geoloc25d::embedindex::{
    pca_fit, pca_reconstruct, pca_transform, pca_transform_rows, recall_at, EmbeddingIndex, TopK,
};
use geoloc25d::fusion::{grid_sample_bilinear, project_point_to_pixel, FeatureGrid, GridMeta};
use geoloc25d::localizer::{
    evaluate_route_traces, route_init_with, route_step_with, success_curve, ConnectivityGraph, QuerySequence,
    RouteConfig, RouteDatabase,
};
use geoloc25d::mapgen::{sample_mesh, Category, Frame, SemanticMesh, SemanticPointCloud, Triangle};
use geoloc25d::pointops::{fps, rps};
use geoloc25d::synthcity::{generate_city, generate_routes, paired_features, CitySpec, GroundViewParams, SectorEncoderSpec};
use ndarray::{Array2, Array3};
use rand::Rng;

type Outcome = Result<String, String>;

fn check(cond: bool, detail: String) -> Outcome {
    if cond {
        Ok(detail)
    } else {
        Err(detail)
    }
}

fn c1_gradient() -> Outcome {
    let t = Instant::now();
    let r = gradient_check(20, 4, 8, 1e-5, &LossConfig::default(), 1).map_err(|e| e.to_string())?;
    let el = t.elapsed();
    check(
        r.max_rel_error < 1e-5 && el < Duration::from_secs(5),
        format!("max rel error {:.3e} over {} entries in {:.2?}", r.max_rel_error, r.entries, el),
    )
}

fn c2_loss_oracle() -> Outcome {
    let mut worst = 0.0f64;
    let mut r = common::rng(2);
    for t in 0..50 {
        let b = r.random_range(1..=8);
        let d = r.random_range(2..=12);
        let mut m = || Array2::from_shape_fn((b, d), |_| r.random_range(-2.0..2.0));
        let batch = TrainBatch::new(m(), m(), m(), m()).unwrap();
        let cfg = LossConfig {
            tau: [0.07, 0.1, 0.5][t % 3],
            lambda1: [1.0, 0.5, 2.0][t % 3],
            lambda2: [1.0, 1.5, 0.0][t % 3],
            ..LossConfig::default()
        };
        let got = modal_losses(&batch, &cfg).map_err(|e| e.to_string())?;
        let want = common::oracle_losses(
            &common::rows(&batch.q_t1),
            &common::rows(&batch.q_t2),
            &common::rows(&batch.r_t1),
            &common::rows(&batch.r_t2),
            cfg.tau,
            cfg.lambda1,
            cfg.lambda2,
        );
        for (g, w) in [got.pano, got.map, got.cross, got.total].iter().zip(want) {
            worst = worst.max((g - w).abs());
        }
    }
    check(worst <= 1e-10, format!("max |difference| {worst:.3e} over 50 batches"))
}

fn c3_projection() -> Outcome {
    let meta = GridMeta::new(224, 224, 152.0, 152.0, 0.0, 0.0).unwrap();
    let e = [
        (project_point_to_pixel([-76.0, 0.0], &meta)[0], 0.0),
        (project_point_to_pixel([75.0, 0.0], &meta)[0], 223.0),
        (project_point_to_pixel([0.0, 0.0], &meta)[0], 76.0 * 223.0 / 151.0),
    ];
    let proj_err = e.iter().map(|(a, b)| (a - b).abs()).fold(0.0, f64::max);
    let gm = GridMeta::new(64, 64, 64.0, 64.0, 0.0, 0.0).unwrap();
    let grid = FeatureGrid::new(gm, Array3::from_shape_fn((64, 64, 1), |(y, x, _)| 2.0 * x as f64 + 3.0 * y as f64))
        .unwrap();
    let coords: Vec<[f64; 2]> = (0..64)
        .flat_map(|i| (0..64).map(move |j| [i as f64 * 63.0 / 64.0 + 0.37, j as f64 * 63.0 / 64.0 + 0.11]))
        .collect();
    let vals = grid_sample_bilinear(&grid, &coords);
    let affine_err = coords
        .iter()
        .enumerate()
        .map(|(k, c)| (vals[[k, 0]] - (2.0 * c[0] + 3.0 * c[1])).abs())
        .fold(0.0, f64::max);
    check(
        proj_err <= 1e-9 && affine_err <= 1e-6,
        format!("projection error {proj_err:.3e}, affine sweep error {affine_err:.3e}"),
    )
}

fn c4_sampling() -> Outcome {
    let (a, b, c) = ([0.0, 0.0, 0.0], [7.0, 1.0, 0.0], [2.0, 5.0, 0.0]);
    let tri = Triangle::new(a, b, c, Category::new(3).unwrap()).unwrap();
    let area = geoloc25d::mapgen::triangle_area(&tri);
    let mesh = SemanticMesh { triangles: vec![tri] };
    let det = (b[0] - a[0]) * (c[1] - a[1]) - (c[0] - a[0]) * (b[1] - a[1]);
    let mut passed = 0;
    for trial in 0..10 {
        let cloud = sample_mesh(&mesh, 1e4 / area, 100 + trial).unwrap();
        let mut counts = [0f64; 4];
        for p in &cloud.positions {
            let l2 = ((p[0] - a[0]) * (c[1] - a[1]) - (c[0] - a[0]) * (p[1] - a[1])) / det;
            let l3 = ((b[0] - a[0]) * (p[1] - a[1]) - (p[0] - a[0]) * (b[1] - a[1])) / det;
            let l1 = 1.0 - l2 - l3;
            let k = if l1 > 0.5 {
                0
            } else if l2 > 0.5 {
                1
            } else if l3 > 0.5 {
                2
            } else {
                3
            };
            counts[k] += 1.0;
        }
        let e = cloud.len() as f64 / 4.0;
        let chi2: f64 = counts.iter().map(|o| (o - e) * (o - e) / e).sum();
        if chi2 < 11.345 {
            passed += 1;
        }
    }
    let mut r = common::rng(4);
    let tris: Vec<Triangle> = (0..7)
        .map(|_| {
            let mut v = || [r.random_range(-20.0..20.0), r.random_range(-20.0..20.0), r.random_range(0.0..10.0)];
            Triangle::new(v(), v(), v(), Category::new(1).unwrap()).unwrap()
        })
        .collect();
    let mesh = SemanticMesh { triangles: tris };
    let density = 1e3 / mesh.total_area();
    let mean = (0..100).map(|s| sample_mesh(&mesh, density, s).unwrap().len() as f64).sum::<f64>() / 100.0;
    let rel = (mean - 1e3).abs() / 1e3;
    check(
        passed >= 9 && rel <= 0.01,
        format!("chi-square passed {passed}/10, mean count {mean:.2} (rel error {rel:.4})"),
    )
}

fn c5_fps() -> Outcome {
    let mut wins = 0;
    for trial in 0..100u64 {
        let mut r = common::rng(500 + trial);
        let pts: Vec<[f64; 3]> = (0..1024)
            .map(|_| [r.random_range(-1.0..1.0), r.random_range(-1.0..1.0), r.random_range(-1.0..1.0)])
            .collect();
        let cloud = SemanticPointCloud::new(pts.clone(), vec![Category::new(0).unwrap(); 1024], Frame::Normalized)
            .unwrap();
        let f = fps(&cloud, 128, 0).unwrap();
        let g = rps(&cloud, 128, trial).unwrap();
        if common::min_pairwise(&pts, &f.indices) > common::min_pairwise(&pts, &g.indices) {
            wins += 1;
        }
    }
    check(wins >= 95, format!("FPS wider than RPS in {wins}/100 trials"))
}

fn c6_pca() -> Outcome {
    let mut r = common::rng(6);
    // exact rank-4 data in 10 dimensions
    let a = Array2::from_shape_fn((60, 4), |_| r.random_range(-3.0..3.0));
    let b = Array2::from_shape_fn((4, 10), |_| r.random_range(-1.0..1.0));
    let shift = Array2::from_shape_fn((1, 10), |_| r.random_range(-5.0..5.0));
    let x = a.dot(&b) + &shift;
    let m = pca_fit(x.view(), 4).map_err(|e| e.to_string())?;
    let mut recon = 0.0f64;
    for row in x.rows() {
        let y = pca_transform(&m, row).unwrap();
        let back = pca_reconstruct(&m, y.view()).unwrap();
        recon = recon.max((&back - &row).iter().map(|v| v.abs()).fold(0.0, f64::max));
    }

    let s = 1.5f64;
    let h = 0.75f64.sqrt();
    let x2 = ndarray::array![[s, s], [-s, -s], [h, -h], [-h, h]];
    let m2 = pca_fit(x2.view(), 2).map_err(|e| e.to_string())?;
    let r2 = std::f64::consts::FRAC_1_SQRT_2;
    let closed = [
        (m2.eigenvalues[0] - 3.0).abs(),
        (m2.eigenvalues[1] - 1.0).abs(),
        (m2.components[[0, 0]].abs() - r2).abs(),
        (m2.components[[0, 1]].abs() - r2).abs(),
        (m2.components[[1, 0]].abs() - r2).abs(),
        (m2.components[[1, 1]].abs() - r2).abs(),
        (m2.components[[0, 0]] * m2.components[[0, 1]] - 0.5).abs(),
        (m2.components[[1, 0]] * m2.components[[1, 1]] + 0.5).abs(),
    ]
    .into_iter()
    .fold(0.0, f64::max);

    let x3 = Array2::from_shape_fn((80, 8), |(_, j)| r.random_range(-1.0..1.0) * (8 - j) as f64);
    let oracle = common::jacobi_eigenvalues(&common::covariance(&x3));
    let mut monotone = true;
    let mut eig_err = 0.0f64;
    let mut prev_err = f64::INFINITY;
    for k in 1..=7 {
        let mk = pca_fit(x3.view(), k).map_err(|e| e.to_string())?;
        monotone &= mk.eigenvalues.windows(2).all(|w| w[0] >= w[1]);
        for (e, o) in mk.eigenvalues.iter().zip(&oracle) {
            eig_err = eig_err.max((e - o).abs());
        }
        let y = pca_transform_rows(&mk, x3.view()).unwrap();
        let back = y.dot(&mk.components) + &mk.mean;
        let err: f64 = (&back - &x3).iter().map(|v| v * v).sum();
        monotone &= err <= prev_err + 1e-8;
        prev_err = err;
    }
    check(
        recon <= 1e-8 && closed <= 1e-9 && monotone && eig_err <= 1e-8,
        format!(
            "rank-4 reconstruction {recon:.3e}, 2x2 closed form {closed:.3e}, eigenvalues vs Jacobi {eig_err:.3e}, monotone {monotone}"
        ),
    )
}

fn c7_knn() -> Outcome {
    let mut r = common::rng(7);
    let mut mismatches = 0;
    for _ in 0..200 {
        let m: usize = r.random_range(1..=500);
        let d: usize = r.random_range(1..=8);
        let mut ids: Vec<u64> = (0..m as u64).map(|i| i * 3 + 1).collect();
        rand::seq::SliceRandom::shuffle(ids.as_mut_slice(), &mut r);
        // small integer coordinates force many exact ties
        let v = Array2::from_shape_fn((m, d), |_| r.random_range(-2..=2) as f64);
        let index = EmbeddingIndex::new(ids.clone(), v.clone(), false).unwrap();
        let q: Vec<f64> = (0..d).map(|_| r.random_range(-2..=2) as f64).collect();
        let k = r.random_range(1..=m);
        let got = index.knn_query(ndarray::ArrayView1::from(q.as_slice()), k).unwrap();
        let mut all: Vec<(f64, u64)> = (0..m)
            .map(|i| {
                let mut s = 0.0;
                for j in 0..d {
                    s += (q[j] - v[[i, j]]) * (q[j] - v[[i, j]]);
                }
                (s, ids[i])
            })
            .collect();
        all.sort_by(|a, b| a.0.partial_cmp(&b.0).unwrap().then(a.1.cmp(&b.1)));
        let same = got.len() == k
            && got
                .iter()
                .zip(&all[..k])
                .all(|(g, w)| g.id == w.1 && g.distance == w.0.sqrt());
        if !same {
            mismatches += 1;
        }
    }
    check(mismatches == 0, format!("{mismatches} mismatching databases out of 200"))
}

fn c8_routes() -> Outcome {
    let mut worst = 0.0f64;
    let mut wrong = 0;
    let mut cases = 0;
    for g in 0..50u64 {
        let mut r = common::rng(800 + g);
        let n = r.random_range(2..=12);
        let graph = common::random_graph(n, 0.25, 900 + g);
        let emb: Vec<Vec<f64>> = (0..n).map(|_| (0..4).map(|_| r.random_range(-1.0..1.0)).collect()).collect();
        let queries: Vec<Vec<f64>> = (0..6).map(|_| (0..4).map(|_| r.random_range(-1.0..1.0)).collect()).collect();
        let ids: Vec<u64> = graph.records().iter().map(|x| x.id).collect();
        let flat: Vec<f64> = emb.iter().flatten().copied().collect();
        let index = EmbeddingIndex::new(ids, Array2::from_shape_vec((n, 4), flat).unwrap(), false).unwrap();
        let db = RouteDatabase::new(&graph, &index).unwrap();
        let cfg = RouteConfig::without_culling();
        let q = |t: usize| ndarray::ArrayView1::from(queries[t].as_slice());
        let mut state = route_init_with(&db, q(0), cfg).unwrap();
        for t in 1..=6 {
            if t > 1 {
                state = route_step_with(&state, &db, q(t - 1)).unwrap();
            }
            let best = state.best().unwrap();
            let (suffix, score) = common::brute_force_best(&graph, &emb, &queries, t, cfg.window).unwrap();
            cases += 1;
            if best.suffix != suffix {
                wrong += 1;
            }
            worst = worst.max((best.score - score).abs());
        }
    }
    check(
        wrong == 0 && worst <= 1e-12,
        format!("{wrong} suffix mismatches in {cases} cases, max score difference {worst:.3e}"),
    )
}

struct Pipeline {
    graph: ConnectivityGraph,
    db: EmbeddingIndex,
    queries: EmbeddingIndex,
    map_train: Array2<f64>,
    top1: f64,
    routes: Vec<QuerySequence>,
    route_curve: Vec<f64>,
    elapsed: Duration,
}

fn pipeline() -> Pipeline {
    let t = Instant::now();
    let city = generate_city(&CitySpec::default()).unwrap();
    let cloud = sample_mesh(&city.mesh, 0.1, 0).unwrap();
    let enc = SectorEncoderSpec::default();
    let view = GroundViewParams::default();
    let train = paired_features(&cloud, &city.graph, &enc, &view, 1).unwrap();
    let test = paired_features(&cloud, &city.graph, &enc, &view, 2).unwrap();
    let mut model = LinearEncoderPair::new(enc.dim(), enc.dim(), 128, 0, true).unwrap();
    let cfg = TrainConfig {
        epochs: 50,
        ..TrainConfig::default()
    };
    geoloc25d::contrastive::toy_train(&train, &mut model, &cfg).unwrap();
    let db = EmbeddingIndex::new(test.ids.clone(), model.embed_map(test.map.view()).unwrap(), false).unwrap();
    let q = model.embed_ground(test.ground.view()).unwrap();
    let top1 = recall_at(&db, q.view(), &test.ids, TopK::Count(1)).unwrap();
    let queries = EmbeddingIndex::new(test.ids.clone(), q, false).unwrap();
    let walks = generate_routes(&city.graph, 500, 40, 3).unwrap();
    let routes: Vec<QuerySequence> = walks.iter().map(|w| QuerySequence::from_walk(w, &queries).unwrap()).collect();
    let traces = evaluate_route_traces(&city.graph, &db, &routes, RouteConfig::default()).unwrap();
    let route_curve = success_curve(&traces);
    let elapsed = t.elapsed();
    Pipeline {
        map_train: model.embed_map(train.map.view()).unwrap(),
        graph: city.graph,
        db,
        queries,
        top1,
        routes,
        route_curve,
        elapsed,
    }
}

fn c9_end_to_end(p: &Pipeline) -> Outcome {
    let by10 = p.route_curve[9];
    check(
        p.top1 >= 0.90 && by10 >= 0.99 && p.elapsed < Duration::from_secs(300),
        format!(
            "{} locations, Top-1 {:.4}, route success at step 5 {:.4} and step 10 {:.4}, pipeline {:.1?}",
            p.db.len(),
            p.top1,
            p.route_curve[4],
            by10,
            p.elapsed
        ),
    )
}

fn c10_culling(p: &Pipeline) -> Outcome {
    // exhaustive tracking costs about half a second per route, so the
    // comparison runs on the first 100 of the 500 evaluation routes
    let subset = &p.routes[..100];
    let culled = success_curve(&evaluate_route_traces(&p.graph, &p.db, subset, RouteConfig::default()).unwrap());
    let full = success_curve(&evaluate_route_traces(&p.graph, &p.db, subset, RouteConfig::without_culling()).unwrap());
    let gap = (culled[39] - full[39]).abs();

    let db = RouteDatabase::new(&p.graph, &p.db).unwrap();
    let mut bound_ok = true;
    let mut worst_excess = 0i64;
    for route in &p.routes[..20] {
        let mut s = route_init_with(&db, route.queries.row(0), RouteConfig::default()).unwrap();
        let initial = s.len() as f64;
        for t in 2..=route.len() {
            s = route_step_with(&s, &db, route.queries.row(t - 1)).unwrap();
            if t >= 9 {
                let steps = (t - 1) as i32;
                let bound = 100f64.max((initial / 2f64.powi(steps)).ceil()) as usize;
                worst_excess = worst_excess.max(s.len() as i64 - bound as i64);
                bound_ok &= s.len() <= bound;
            }
        }
    }
    check(
        gap <= 0.01 && bound_ok,
        format!(
            "step-40 success culled {:.4} vs exhaustive {:.4} (gap {:.4}); growth bound held {bound_ok} (max excess {worst_excess})",
            culled[39], full[39], gap
        ),
    )
}

fn c11_dimension(p: &Pipeline) -> Outcome {
    let recall = |k: usize| {
        let m = pca_fit(p.map_train.view(), k).unwrap();
        let db = EmbeddingIndex::new(p.db.ids().to_vec(), pca_transform_rows(&m, p.db.vectors()).unwrap(), false)
            .unwrap();
        let q = pca_transform_rows(&m, p.queries.vectors()).unwrap();
        recall_at(&db, q.view(), p.queries.ids(), TopK::Count(1)).unwrap()
    };
    let (r16, r128) = (recall(16), recall(128));
    check(r16 < r128, format!("Top-1 with 16-D PCA {r16:.4}, with 128-D PCA {r128:.4}"))
}

fn run_cli(bin: &Path, dir: &Path) -> Result<Vec<(String, Vec<u8>)>, String> {
    let p = |f: &str| dir.join(f).to_string_lossy().into_owned();
    let steps: Vec<Vec<String>> = vec![
        vec!["synthcity", "--out-dir", &p(""), "--grid-w", "8", "--grid-h", "8", "--routes", "30", "--seed", "5"],
        vec!["mesh2cloud", "--mesh", &p("city.mesh"), "--out", &p("crop.p25d"), "--center", "70,70", "--heading", "0.3", "--seed", "5"],
        vec!["sample", "--cloud", &p("crop.p25d"), "--out", &p("fps.p25d"), "--k", "256"],
        vec!["sample", "--cloud", &p("crop.p25d"), "--out", &p("rps.p25d"), "--k", "256", "--strategy", "rps", "--seed", "5"],
        vec!["train", "--features", &p("train_features.bin"), "--out", &p("model.lenc"), "--trace", &p("loss.csv"), "--epochs", "5", "--dim", "32", "--seed", "5"],
        vec!["index", "--features", &p("query_features.bin"), "--model", &p("model.lenc"), "--out", &p("db.eidx")],
        vec!["index", "--features", &p("query_features.bin"), "--model", &p("model.lenc"), "--side", "ground", "--out", &p("queries.eidx")],
        vec!["pca", "fit", "--index", &p("db.eidx"), "--k", "16", "--out", &p("pca.pcam")],
        vec!["pca", "transform", "--model", &p("pca.pcam"), "--index", &p("db.eidx"), "--out", &p("db16.eidx")],
        vec!["query", "--index", &p("db.eidx"), "--queries", &p("queries.eidx"), "--recall-out", &p("recall.csv")],
        vec!["query", "--index", &p("db.eidx"), "--queries", &p("queries.eidx"), "--id", "7"],
        vec!["route-eval", "--graph", &p("graph.jsonl"), "--index", &p("db.eidx"), "--queries", &p("queries.eidx"), "--routes", &p("routes.txt"), "--out", &p("curve.csv"), "--trace-out", &p("trace.csv")],
        vec!["gradcheck", "--batches", "3", "--out", &p("grad.csv"), "--seed", "5"],
    ]
    .into_iter()
    .map(|v| v.into_iter().map(String::from).collect())
    .collect();
    let mut out = Vec::new();
    for (i, args) in steps.iter().enumerate() {
        let o = Command::new(bin).args(args).output().map_err(|e| e.to_string())?;
        if !o.status.success() {
            return Err(format!("`{}` failed: {}", args.join(" "), String::from_utf8_lossy(&o.stderr)));
        }
        out.push((format!("stdout of step {i}"), o.stdout));
    }
    let mut files: Vec<_> = std::fs::read_dir(dir).unwrap().map(|e| e.unwrap().path()).collect();
    files.sort();
    for f in files {
        out.push((f.file_name().unwrap().to_string_lossy().into_owned(), std::fs::read(&f).unwrap()));
    }
    Ok(out)
}

fn c12_determinism() -> Outcome {
    let bin = Path::new(env!("CARGO_BIN_EXE_geoloc25d"));
    let (a, b) = (tempfile::tempdir().unwrap(), tempfile::tempdir().unwrap());
    let ra = run_cli(bin, a.path())?;
    let rb = run_cli(bin, b.path())?;
    // stdout mentions no paths, so it must match as well
    let differing: Vec<&str> = ra
        .iter()
        .zip(&rb)
        .filter(|(x, y)| x != y)
        .map(|(x, _)| x.0.as_str())
        .collect();
    check(
        ra.len() == rb.len() && differing.is_empty(),
        format!("{} artifacts compared, differing: {:?}", ra.len(), differing),
    )
}

fn main() {
    let mut results: Vec<(&str, Outcome)> = Vec::new();
    let mut report = |name: &'static str, o: Outcome| {
        let (tag, detail) = match &o {
            Ok(d) => ("PASS", d.clone()),
            Err(d) => ("FAIL", d.clone()),
        };
        println!("[{tag}] {name}: {detail}");
        results.push((name, o));
    };
    report("1 gradient check", c1_gradient());
    report("2 loss oracle", c2_loss_oracle());
    report("3 projection and bilinear exactness", c3_projection());
    report("4 mesh sampling statistics", c4_sampling());
    report("5 FPS spread vs RPS", c5_fps());
    report("6 PCA", c6_pca());
    report("7 kNN oracle", c7_knn());
    report("8 route oracle", c8_routes());
    let p = pipeline();
    report("9 end-to-end synthetic", c9_end_to_end(&p));
    report("10 culling fidelity", c10_culling(&p));
    report("11 dimension trend", c11_dimension(&p));
    report("12 CLI determinism", c12_determinism());
    let failed = results.iter().filter(|(_, o)| o.is_err()).count();
    println!("acceptance: {} passed, {failed} failed", results.len() - failed);
    if failed > 0 {
        std::process::exit(1);
    }
}
