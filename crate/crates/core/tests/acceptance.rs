//! Acceptance suite. Runs every criterion in order, prints one PASS/FAIL
//! line each and exits non-zero if any criterion fails.

use std::collections::VecDeque;
use std::process::ExitCode;
use std::time::{Duration, Instant};

use nalgebra::DMatrix;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use cusp::encoding::CurvatureEncoder;
use cusp::filter::{build_filter_bank, GprWeights};
use cusp::graph::{block_features, generate, random_connected, Csr, GraphKind, SbmParams};
use cusp::laplacian::{self, curvature_weight};
use cusp::manifold::{estimate_signature, EstimateConfig, Kind, Signature};
use cusp::model::{gradient_check, CuspConfig, Session, Task};
use cusp::orc::{self, edge_orc, orc_bounds, wasserstein_exact, Measure, OrcConfig, OrcMethod, OrcResult};
use cusp::stereo;
use cusp::{Exec, Graph, Mat};

type Criterion = (&'static str, fn() -> Outcome);

struct Outcome {
    pass: bool,
    detail: String,
}

fn outcome(pass: bool, detail: String) -> Outcome {
    Outcome { pass, detail }
}

fn secs(d: Duration) -> String {
    format!("{:.1} s", d.as_secs_f64())
}

// ---------------------------------------------------------------------------
// Independent oracles

/// Dense two-phase simplex with Bland's rule: `min cᵀx` s.t. `Ax = b`,
/// `x ≥ 0`, `b ≥ 0`.
fn lp_min(a: &[Vec<f64>], b: &[f64], c: &[f64]) -> f64 {
    const TOL: f64 = 1e-12;
    let (m, n) = (a.len(), c.len());
    let width = n + m + 1;
    let mut t: Vec<Vec<f64>> = (0..m)
        .map(|i| {
            let mut row = a[i].clone();
            row.extend((0..m).map(|k| if k == i { 1.0 } else { 0.0 }));
            row.push(b[i]);
            row
        })
        .collect();
    let mut basis: Vec<usize> = (n..n + m).collect();

    let pivot = |t: &mut Vec<Vec<f64>>, basis: &mut Vec<usize>, r: usize, col: usize| {
        let p = t[r][col];
        for v in t[r].iter_mut() {
            *v /= p;
        }
        let pr = t[r].clone();
        for (i, row) in t.iter_mut().enumerate() {
            if i != r && row[col] != 0.0 {
                let f = row[col];
                for (x, y) in row.iter_mut().zip(&pr) {
                    *x -= f * y;
                }
            }
        }
        basis[r] = col;
    };

    let run = |t: &mut Vec<Vec<f64>>, basis: &mut Vec<usize>, cost: &[f64], allowed: usize| loop {
        let reduced = |j: usize| cost[j] - (0..m).map(|i| cost[basis[i]] * t[i][j]).sum::<f64>();
        let Some(enter) = (0..allowed).find(|&j| !basis.contains(&j) && reduced(j) < -TOL) else {
            return;
        };
        let mut leave: Option<usize> = None;
        for i in 0..m {
            if t[i][enter] > TOL {
                let ratio = t[i][width - 1] / t[i][enter];
                leave = match leave {
                    None => Some(i),
                    Some(l) => {
                        let best = t[l][width - 1] / t[l][enter];
                        if ratio < best - TOL || (ratio <= best + TOL && basis[i] < basis[l]) {
                            Some(i)
                        } else {
                            Some(l)
                        }
                    }
                };
            }
        }
        let r = leave.expect("bounded transport LP");
        pivot(t, basis, r, enter);
    };

    let phase1: Vec<f64> = (0..n + m).map(|j| if j < n { 0.0 } else { 1.0 }).collect();
    run(&mut t, &mut basis, &phase1, n + m);
    for r in 0..m {
        if basis[r] >= n {
            if let Some(col) = (0..n).find(|&j| t[r][j].abs() > 1e-9) {
                pivot(&mut t, &mut basis, r, col);
            }
        }
    }
    let mut phase2 = c.to_vec();
    phase2.extend(std::iter::repeat_n(0.0, m));
    run(&mut t, &mut basis, &phase2, n);
    (0..m).map(|i| phase2[basis[i]] * t[i][width - 1]).sum()
}

fn hop_distances(g: &Graph) -> Vec<Vec<f64>> {
    (0..g.n())
        .map(|s| {
            let mut d = vec![f64::INFINITY; g.n()];
            d[s] = 0.0;
            let mut q = VecDeque::from([s]);
            while let Some(x) = q.pop_front() {
                for y in g.neighbors(x) {
                    if d[y].is_infinite() {
                        d[y] = d[x] + 1.0;
                        q.push_back(y);
                    }
                }
            }
            d
        })
        .collect()
}

fn lazy_walk(g: &Graph, x: usize, delta: f64) -> (Vec<usize>, Vec<f64>) {
    let nb: Vec<usize> = g.neighbors(x).collect();
    let share = (1.0 - delta) / nb.len() as f64;
    let mut support = vec![x];
    let mut mass = vec![delta];
    for v in nb {
        support.push(v);
        mass.push(share);
    }
    (support, mass)
}

fn transport_lp(mu: &(Vec<usize>, Vec<f64>), nu: &(Vec<usize>, Vec<f64>), dist: &[Vec<f64>]) -> f64 {
    let (p, q) = (mu.0.len(), nu.0.len());
    let mut a = Vec::new();
    let mut b = Vec::new();
    for i in 0..p {
        a.push((0..p * q).map(|k| if k / q == i { 1.0 } else { 0.0 }).collect());
        b.push(mu.1[i]);
    }
    for j in 0..q {
        a.push((0..p * q).map(|k| if k % q == j { 1.0 } else { 0.0 }).collect());
        b.push(nu.1[j]);
    }
    let c: Vec<f64> = (0..p * q).map(|k| dist[mu.0[k / q]][nu.0[k % q]]).collect();
    lp_min(&a, &b, &c)
}

fn sym_eigen(m: &Mat) -> (Vec<f64>, DMatrix<f64>) {
    let dm = DMatrix::from_fn(m.rows(), m.cols(), |i, j| m[(i, j)]);
    let e = dm.symmetric_eigen();
    (e.eigenvalues.iter().copied().collect(), e.eigenvectors)
}

fn random_graph(rng: &mut ChaCha8Rng, n_lo: usize, n_hi: usize, p_lo: f64, p_hi: f64) -> Graph {
    let n = rng.random_range(n_lo..=n_hi);
    let p = rng.random_range(p_lo..=p_hi);
    random_connected(n, p, rng)
}

fn random_vec(rng: &mut ChaCha8Rng, d: usize, radius: f64) -> Vec<f64> {
    let v: Vec<f64> = (0..d).map(|_| rng.random_range(-1.0..1.0)).collect();
    let n = v.iter().map(|x| x * x).sum::<f64>().sqrt().max(1e-12);
    let r = radius * rng.random::<f64>();
    v.iter().map(|x| x * r / n).collect()
}

fn max_diff(a: &[f64], b: &[f64]) -> f64 {
    assert_eq!(a.len(), b.len());
    a.iter().zip(b).map(|(x, y)| (x - y).abs()).fold(0.0, f64::max)
}

fn exact_cfg(delta: f64) -> OrcConfig {
    OrcConfig {
        exec: Exec::Sequential,
        ..OrcConfig::default()
    }
    .with_delta(delta)
    .with_method(OrcMethod::Exact)
}

// ---------------------------------------------------------------------------
// Criteria

fn orc_oracle_equivalence() -> Outcome {
    let start = Instant::now();
    let mut rng = ChaCha8Rng::seed_from_u64(101);
    let mut worst: f64 = 0.0;
    let mut problems = 0usize;
    for _ in 0..500 {
        let g = random_graph(&mut rng, 2, 8, 0.2, 0.9);
        let dist = hop_distances(&g);
        let delta = [0.0, 0.25, 0.5, rng.random::<f64>()][rng.random_range(0..4)];
        let cfg = exact_cfg(delta);
        for e in g.edges() {
            let (u, v) = (e.u, e.v);
            let oracle = transport_lp(&lazy_walk(&g, u, delta), &lazy_walk(&g, v, delta), &dist);
            let lib = 1.0 - edge_orc(&g, u, v, &cfg).unwrap();
            worst = worst.max((lib - oracle).abs());
            problems += 1;
        }
        let (x, y) = (rng.random_range(0..g.n()), rng.random_range(0..g.n()));
        let (mx, my) = (lazy_walk(&g, x, delta), lazy_walk(&g, y, delta));
        let oracle = transport_lp(&mx, &my, &dist);
        let lib = wasserstein_exact(
            &Measure::new(mx.0.clone(), mx.1.clone()).unwrap(),
            &Measure::new(my.0.clone(), my.1.clone()).unwrap(),
            |a, b| Some(dist[a][b]),
        )
        .unwrap();
        worst = worst.max((lib - oracle).abs());
        problems += 1;
    }
    let t = start.elapsed();
    outcome(
        worst <= 1e-9 && t < Duration::from_secs(60),
        format!("{problems} transport problems, max |Δ| = {worst:.2e}, {}", secs(t)),
    )
}

fn bounds_bracket() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(202);
    let mut edges = 0usize;
    let mut worst: f64 = f64::NEG_INFINITY;
    for _ in 0..200 {
        let g = random_graph(&mut rng, 3, 30, 0.1, 0.6);
        let res = orc::compute_all(&g, &exact_cfg(0.0)).unwrap();
        for (&(u, v), &k) in res.edges().iter().zip(res.edge_values()) {
            let b = orc_bounds(&g, u, v).unwrap();
            worst = worst.max(b.lower - k).max(k - b.upper);
            edges += 1;
        }
    }
    outcome(
        worst <= 1e-9,
        format!("{edges} edges, worst bound violation {worst:.2e}"),
    )
}

fn k3_values() -> Outcome {
    let g = generate(&GraphKind::Complete(3)).unwrap();
    let lazy = edge_orc(&g, 0, 1, &exact_cfg(0.5)).unwrap();
    let plain = edge_orc(&g, 0, 1, &exact_cfg(0.0)).unwrap();
    let b = orc_bounds(&g, 0, 1).unwrap();
    let ok = (lazy - 0.75).abs() < 1e-12 && (plain - 0.5).abs() < 1e-12 && (b.approx - 0.5).abs() < 1e-12;
    outcome(
        ok,
        format!("orc(0.5) = {lazy}, orc(0) = {plain}, bounds approx = {}", b.approx),
    )
}

fn laplacian_spectrum() -> Outcome {
    let start = Instant::now();
    let mut rng = ChaCha8Rng::seed_from_u64(404);
    let (mut lo, mut hi, mut resid, mut cross) = (f64::INFINITY, f64::NEG_INFINITY, 0.0f64, 0.0f64);
    for _ in 0..200 {
        let g = random_graph(&mut rng, 3, 40, 0.1, 0.7);
        let ks: Vec<f64> = (0..g.m()).map(|_| rng.random_range(-1.0..=0.99)).collect();
        let res = OrcResult::from_edge_values(&g, ks, OrcMethod::Exact, false).unwrap();
        let cl = laplacian::build(&g, &res).unwrap();
        let rep = laplacian::verify_spectrum(&cl).unwrap();
        let (ev, _) = sym_eigen(&cl.l_norm);
        let ev_min = ev.iter().copied().fold(f64::INFINITY, f64::min);
        let ev_max = ev.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        cross = cross.max((ev_min - rep.min_eig).abs()).max((ev_max - rep.max_eig).abs());
        lo = lo.min(rep.min_eig).min(ev_min);
        hi = hi.max(rep.max_eig).max(ev_max);
        resid = resid.max(rep.kernel_vector_residual);
    }
    let t = start.elapsed();
    outcome(
        lo >= -1e-9 && hi <= 2.0 + 1e-9 && resid <= 1e-8 && cross <= 1e-9 && t < Duration::from_secs(120),
        format!(
            "min eig {lo:.3e}, max eig {hi:.6}, kernel residual {resid:.2e}, solver agreement {cross:.1e}, {}",
            secs(t)
        ),
    )
}

fn weight_anchors() -> Outcome {
    let w0 = curvature_weight(0.0).unwrap();
    let wm = curvature_weight(-1.0).unwrap();
    let e0 = (w0 - (-1.0f64).exp()).abs();
    let em = (wm - 1.0 / 1.0f64.exp().sqrt()).abs();
    let grid: Vec<f64> = (0..1000)
        .map(|i| curvature_weight(-1.0 + 2.0 * i as f64 / 999.0).unwrap())
        .collect();
    let monotone = grid.windows(2).all(|w| w[1] < w[0]);
    outcome(
        e0 <= 1e-12 && em <= 1e-12 && monotone,
        format!("|w(0) − 1/e| = {e0:.1e}, |w(−1) − 1/√e| = {em:.1e}, strictly decreasing: {monotone}"),
    )
}

fn stereo_algebra() -> Outcome {
    const CASES: usize = 10_000;
    let mut rng = ChaCha8Rng::seed_from_u64(606);

    let mut round = 0.0f64;
    for _ in 0..CASES {
        let d = rng.random_range(1..=8);
        let kappa = rng.random_range(-2.0..2.0);
        let v = random_vec(&mut rng, d, 0.5);
        round = round.max(max_diff(&stereo::log0(&stereo::exp0(&v, kappa).unwrap(), kappa).unwrap(), &v));
        let x = stereo::exp0(&random_vec(&mut rng, d, 0.5), kappa).unwrap();
        round = round.max(max_diff(&stereo::exp0(&stereo::log0(&x, kappa).unwrap(), kappa).unwrap(), &x));
        let w = random_vec(&mut rng, d, 0.3);
        let y = stereo::exp_map(&x, &w, kappa).unwrap();
        round = round.max(max_diff(&stereo::log_map(&x, &y, kappa).unwrap(), &w));
        round = round.max(max_diff(&stereo::exp_map(&x, &stereo::log_map(&x, &y, kappa).unwrap(), kappa).unwrap(), &y));
    }

    let mut flat = 0.0f64;
    for _ in 0..CASES {
        let d = rng.random_range(1..=6);
        let x = random_vec(&mut rng, d, 0.5);
        let y = random_vec(&mut rng, d, 0.5);
        let z = random_vec(&mut rng, d, 0.5);
        let r = rng.random_range(-2.0..2.0);
        let a: Vec<f64> = (0..3).map(|_| rng.random_range(0.05..1.0)).collect();
        let xm = Mat::from_rows(&[x.clone(), y.clone(), z.clone()]).unwrap();
        let wm = Mat::from_fn(d, d, |_, _| rng.random_range(-0.5..0.5));
        let am = Mat::from_fn(3, 3, |_, _| rng.random_range(0.0..0.5));
        let am = Csr::from_dense(&am);
        let eval = |k: f64| -> Vec<f64> {
            let mut out = Vec::new();
            out.extend(stereo::exp0(&x, k).unwrap());
            out.extend(stereo::log0(&x, k).unwrap());
            out.extend(stereo::mobius_add(&x, &y, k).unwrap());
            out.extend(stereo::exp_map(&x, &y, k).unwrap());
            out.extend(stereo::log_map(&x, &y, k).unwrap());
            out.push(stereo::distance(&x, &y, k).unwrap());
            out.extend(stereo::scale(r, &x, k).unwrap());
            out.extend(stereo::gyromidpoint(&[&x, &y, &z], &a, k).unwrap());
            out.extend(stereo::right_matmul(&xm, &wm, k).unwrap().into_vec());
            out.extend(stereo::left_matmul(&am, &xm, k).unwrap().into_vec());
            out
        };
        let base = eval(0.0);
        flat = flat.max(max_diff(&eval(1e-6), &base)).max(max_diff(&eval(-1e-6), &base));
    }

    let mut closed = 0.0f64;
    for _ in 0..CASES {
        let (n, d, e) = (rng.random_range(1..=4), rng.random_range(1..=6), rng.random_range(1..=6));
        let kappa = rng.random_range(-2.0..2.0);
        let rows: Vec<Vec<f64>> = (0..n)
            .map(|_| stereo::exp0(&random_vec(&mut rng, d, 0.5), kappa).unwrap())
            .collect();
        let x = Mat::from_rows(&rows).unwrap();
        let w = Mat::from_fn(d, e, |_, _| rng.random_range(-1.0..1.0) / (d as f64).sqrt());
        let fast = stereo::right_matmul(&x, &w, kappa).unwrap();
        let tangent = stereo::log0_rows(&x, kappa).unwrap().matmul(&w).unwrap();
        let mut slow = stereo::exp0_rows(&tangent, kappa).unwrap();
        for i in 0..n {
            stereo::project(slow.row_mut(i), kappa);
        }
        closed = closed.max(fast.sub(&slow).unwrap().max_abs());
    }

    outcome(
        round <= 1e-8 && flat <= 1e-4 && closed <= 1e-9,
        format!("round-trip {round:.1e}, flat limit {flat:.1e}, right-matmul closed form {closed:.1e} ({CASES} cases each)"),
    )
}

fn cusp_adjacency(g: &Graph) -> (laplacian::CuspLaplacian, Vec<f64>, DMatrix<f64>) {
    let res = orc::compute_all(g, &exact_cfg(0.5)).unwrap();
    let cl = laplacian::build(g, &res).unwrap();
    let (ev, u) = sym_eigen(&cl.a_norm);
    (cl, ev, u)
}

fn filter_response_bounds() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(707);
    let mut worst_ratio: f64 = 0.0;
    let mut checked = 0usize;
    for _ in 0..50 {
        let g = random_graph(&mut rng, 4, 30, 0.1, 0.6);
        let (_, ev, _) = cusp_adjacency(&g);
        for alpha in [0.1, 0.3, 0.5, 0.9] {
            let w = GprWeights::ppr(alpha, 10).unwrap();
            let g1 = w.response(1.0);
            for &lam in ev.iter().filter(|l| l.abs() < 1.0 - 1e-9) {
                worst_ratio = worst_ratio.max((w.response(lam) / g1).abs());
                checked += 1;
            }
        }
    }
    let hp_error = |alpha: f64| {
        let w = GprWeights::highpass(alpha, 64).unwrap();
        (0..20_000)
            .map(|i| -1.0 + 2.0 * i as f64 / 20_000.0)
            .map(|lam| (w.response(lam) - 1.0 / (1.0 + alpha * lam)).abs())
            .fold(0.0, f64::max)
    };
    // 2α^64 sits above f64 resolution and above the exact tail α^65/(1−α)
    let mut worst_hp: f64 = 0.0;
    let mut hp_ok = true;
    for alpha in [0.6, 0.62, 0.64, 0.66] {
        let err = hp_error(alpha);
        let bound = 2.0 * f64::powi(alpha, 64);
        hp_ok &= err <= bound;
        worst_hp = worst_hp.max(err / bound);
    }
    let err_half = hp_error(0.5);
    outcome(
        worst_ratio < 1.0 && hp_ok,
        format!(
            "max |g(λ)/g(1)| = {worst_ratio:.6} over {checked} eigenvalues; high-pass error / 2α^64 ≤ {worst_hp:.3} for α ∈ [0.6, 0.66]; α = 0.5 error {err_half:.1e} (rounding level)"
        ),
    )
}

fn flat_filter_equivalence() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(808);
    let l = 10;
    let mut worst: f64 = 0.0;
    for t in 0..20 {
        let g = random_graph(&mut rng, 4, 30, 0.1, 0.6);
        let (cl, ev, u) = cusp_adjacency(&g);
        let d = rng.random_range(1..=5);
        let h0 = Mat::from_fn(g.n(), d, |_, _| rng.random_range(-1.0..1.0));
        let w = if t % 2 == 0 {
            GprWeights::ppr([0.1, 0.3, 0.5, 0.9][t / 2 % 4], l).unwrap()
        } else {
            GprWeights::custom((0..=l).map(|_| rng.random_range(-1.0..1.0)).collect()).unwrap()
        };
        let sig = Signature::euclidean(d).unwrap();
        let bank = build_filter_bank(&cl.a_norm_csr(), &h0, &vec![w.clone(); l + 1], l, &sig, Exec::Sequential).unwrap();
        let gl = DMatrix::from_diagonal(&nalgebra::DVector::from_iterator(ev.len(), ev.iter().map(|&x| w.response(x))));
        let h = DMatrix::from_fn(g.n(), d, |i, j| h0[(i, j)]);
        let closed = &u * gl * u.transpose() * h;
        let entry = &bank.entries[l];
        for i in 0..g.n() {
            for j in 0..d {
                worst = worst.max((entry[(i, j)] - closed[(i, j)]).abs());
            }
        }
    }
    outcome(worst <= 1e-8, format!("max |Δ| = {worst:.2e} on 20 graphs"))
}

fn bochner_kernel() -> Outcome {
    let encoder = |d: usize, seed: u64| {
        CurvatureEncoder::gaussian(d, 1.0, seed, Signature::euclidean(d).unwrap()).unwrap()
    };
    let mut rng = ChaCha8Rng::seed_from_u64(909);
    let enc = encoder(4096, 9);
    let mut shift: f64 = 0.0;
    for _ in 0..1000 {
        let (a, b, t) = (rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0));
        shift = shift.max((enc.kernel(a + t, b + t) - enc.kernel(a, b)).abs());
    }
    let grid: Vec<f64> = (0..41).map(|i| -1.0 + i as f64 / 20.0).collect();
    let mut target: f64 = 0.0;
    for &a in &grid {
        for &b in &grid {
            target = target.max((enc.kernel(a, b) - (-(a - b) * (a - b) / 2.0).exp()).abs());
        }
    }
    let rms = |d: usize| {
        let mut sq = 0.0;
        let mut count = 0.0;
        for seed in 0..200 {
            let e = encoder(d, 10_000 + seed);
            for k in 1..=10 {
                let delta = 0.2 * k as f64;
                let err = e.kernel(delta, 0.0) - (-delta * delta / 2.0).exp();
                sq += err * err;
                count += 1.0;
            }
        }
        (sq / count).sqrt()
    };
    let ratios: Vec<f64> = [(256, 512), (512, 1024)].iter().map(|&(lo, hi)| rms(lo) / rms(hi)).collect();
    let sqrt2 = 2.0f64.sqrt();
    let scaling = ratios.iter().all(|r| (r / sqrt2 - 1.0).abs() <= 0.3);
    outcome(
        shift <= 1e-12 && target <= 0.05 && scaling,
        format!(
            "translation {shift:.1e}, Gaussian target {target:.4} at d_C = 4096, halving ratios {:.3} / {:.3} (√2 = {sqrt2:.3})",
            ratios[0], ratios[1]
        ),
    )
}

fn sbm_graph(blocks: Vec<usize>, p_in: f64, p_out: f64, dim: usize, signal: f64, noise: f64, seed: u64) -> Graph {
    let g = generate(&GraphKind::Sbm(SbmParams {
        blocks,
        p_in,
        p_out,
        seed,
    }))
    .unwrap();
    let f = block_features(g.labels().unwrap(), dim, signal, noise, seed + 1).unwrap();
    g.with_features(f).unwrap()
}

fn gradient_check_criterion() -> Outcome {
    let g = sbm_graph(vec![6, 6], 0.6, 0.15, 3, 1.0, 0.5, 11);
    let mut cfg = CuspConfig::default();
    cfg.orc.exec = Exec::Sequential;
    cfg.model.signature = Some("H:2:-1,S:2:1,E:2:0".parse().unwrap());
    cfg.model.d_c = 3;
    cfg.model.d_pool = 4;
    cfg.model.l = 3;
    let s = Session::new(&g, &cfg).unwrap();
    let r = gradient_check(&s, &s.init_params().unwrap(), 24, 1).unwrap();
    outcome(
        r.probes.len() >= 20 && r.max_rel_error <= 1e-4,
        format!(
            "{} probes ({} excluded at projection boundaries), max relative error {:.2e}",
            r.probes.len(),
            r.excluded.len(),
            r.max_rel_error
        ),
    )
}

fn end_to_end() -> Outcome {
    let limit = Duration::from_secs(300);
    let mut cfg = CuspConfig::default();
    cfg.orc.exec = Exec::Sequential;

    let start = Instant::now();
    let homo = sbm_graph(vec![100, 100], 0.1, 0.01, 16, 1.0, 1.0, 7);
    let f1 = cusp::model::train(&homo, &cfg).unwrap().metrics.test;
    let t_homo = start.elapsed();

    let hetero = sbm_graph(vec![100, 100], 0.01, 0.1, 16, 0.5, 1.0, 8);
    let start = Instant::now();
    let trained = cusp::model::train(&hetero, &cfg).unwrap().metrics.test;
    let t_trained = start.elapsed();
    let mut frozen_cfg = cfg.clone();
    frozen_cfg.model.train_gamma = false;
    let start = Instant::now();
    let frozen = cusp::model::train(&hetero, &frozen_cfg).unwrap().metrics.test;
    let t_frozen = start.elapsed();

    let lp = sbm_graph(vec![100; 5], 0.2, 0.005, 16, 1.0, 1.0, 9);
    let mut lp_cfg = cfg.clone();
    lp_cfg.train.task = Task::Lp;
    let start = Instant::now();
    let auc = cusp::model::train(&lp, &lp_cfg).unwrap().metrics.test;
    let t_lp = start.elapsed();

    let slowest = [t_homo, t_trained, t_frozen, t_lp].into_iter().max().unwrap();
    outcome(
        f1 >= 0.9 && trained >= frozen && auc >= 0.8 && slowest <= limit,
        format!(
            "homophilic F1 {f1:.3}; heterophilic trained γ {trained:.3} vs frozen {frozen:.3}; LP AUC {auc:.3}; slowest run {}",
            secs(slowest)
        ),
    )
}

fn signature_estimation() -> Outcome {
    let hist: Vec<(f64, f64)> = (0..200)
        .map(|i| {
            let k = -1.0 + 2.0 * i as f64 / 199.0;
            let bump = |c: f64| (-(k - c) * (k - c) / (2.0 * 0.05 * 0.05)).exp();
            (k, bump(-0.45) + bump(0.25))
        })
        .collect();
    let cfg = EstimateConfig {
        h_max: 1,
        s_max: 1,
        preferred_dims: Some((16, 16, 16)),
        ..Default::default()
    };
    let s = estimate_signature(&hist, &cfg).unwrap();
    let c = s.components();
    let ok = c.len() == 2
        && c[0].kind == Kind::H
        && c[1].kind == Kind::S
        && (c[0].curvature + 0.45).abs() <= 0.05
        && (c[1].curvature - 0.25).abs() <= 0.05;
    outcome(ok, format!("estimated {}", s.to_string_rounded(3)))
}

fn main() -> ExitCode {
    let criteria: [Criterion; 12] = [
        ("orc oracle equivalence", orc_oracle_equivalence),
        ("curvature bounds bracket exact orc", bounds_bracket),
        ("K3 analytic values", k3_values),
        ("laplacian spectrum", laplacian_spectrum),
        ("curvature weight anchors", weight_anchors),
        ("stereographic algebra", stereo_algebra),
        ("filter low-pass and high-pass", filter_response_bounds),
        ("flat filter equivalence", flat_filter_equivalence),
        ("random Fourier kernel", bochner_kernel),
        ("gradient check", gradient_check_criterion),
        ("end-to-end learning", end_to_end),
        ("signature estimation", signature_estimation),
    ];
    let mut failed = 0;
    for (i, (name, run)) in criteria.iter().enumerate() {
        let o = run();
        let tag = if o.pass { "PASS" } else { "FAIL" };
        println!("{tag} {:>2} {name}: {}", i + 1, o.detail);
        failed += usize::from(!o.pass);
    }
    println!("{} of {} criteria passed", criteria.len() - failed, criteria.len());
    if failed == 0 {
        ExitCode::SUCCESS
    } else {
        ExitCode::FAILURE
    }
}
