//! Reference implementations used only by tests: naive nested-loop kernels,
//! a finite-difference gradient checker, a brute-force DBSCAN and a direct
//! transcription of the ensemble vote.

#![allow(dead_code)]

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rtcnet::net::{Architecture, Network};
use rtcnet::tensor::Tensor;

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

pub fn uniform_vec(rng: &mut impl Rng, n: usize, lo: f64, hi: f64) -> Vec<f64> {
    (0..n).map(|_| rng.random_range(lo..hi)).collect()
}

pub fn max_rel_err(a: &[f64], b: &[f64]) -> f64 {
    assert_eq!(a.len(), b.len());
    a.iter()
        .zip(b)
        .map(|(x, y)| (x - y).abs() / x.abs().max(y.abs()).max(1e-12))
        .fold(0.0, f64::max)
}

// ---------------------------------------------------------------- kernels

/// `x` is `[ci][a][r][d]`, `w` is `[co][ci][ka][kr][kd]`; stride 1, zero
/// padding `pad` on every spatial axis.
pub fn naive_conv3d(
    x: &[f64],
    [ci, a, r, d]: [usize; 4],
    w: &[f64],
    [co, ka, kr, kd]: [usize; 4],
    b: &[f64],
    pad: usize,
) -> (Vec<f64>, [usize; 4]) {
    let (ao, ro, dout) = (a + 2 * pad - ka + 1, r + 2 * pad - kr + 1, d + 2 * pad - kd + 1);
    let mut y = vec![0.0; co * ao * ro * dout];
    for o in 0..co {
        for i in 0..ao {
            for j in 0..ro {
                for k in 0..dout {
                    let mut s = b[o];
                    for c in 0..ci {
                        for p in 0..ka {
                            for q in 0..kr {
                                for t in 0..kd {
                                    let (ii, jj, kk) = (
                                        (i + p) as isize - pad as isize,
                                        (j + q) as isize - pad as isize,
                                        (k + t) as isize - pad as isize,
                                    );
                                    if ii < 0
                                        || jj < 0
                                        || kk < 0
                                        || ii >= a as isize
                                        || jj >= r as isize
                                        || kk >= d as isize
                                    {
                                        continue;
                                    }
                                    let xv = x[((c * a + ii as usize) * r + jj as usize) * d + kk as usize];
                                    let wv = w[(((o * ci + c) * ka + p) * kr + q) * kd + t];
                                    s += xv * wv;
                                }
                            }
                        }
                    }
                    y[((o * ao + i) * ro + j) * dout + k] = s;
                }
            }
        }
    }
    (y, [co, ao, ro, dout])
}

pub fn naive_conv1d(x: &[f64], [ci, l]: [usize; 2], w: &[f64], [co, k]: [usize; 2], b: &[f64], pad: usize) -> Vec<f64> {
    let lo = l + 2 * pad - k + 1;
    let mut y = vec![0.0; co * lo];
    for o in 0..co {
        for i in 0..lo {
            let mut s = b[o];
            for c in 0..ci {
                for t in 0..k {
                    let src = (i + t) as isize - pad as isize;
                    if src >= 0 && (src as usize) < l {
                        s += x[c * l + src as usize] * w[(o * ci + c) * k + t];
                    }
                }
            }
            y[o * lo + i] = s;
        }
    }
    y
}

/// Gradients `(dx, dw, db)` of `sum(y * gy)` for [`naive_conv3d`].
pub fn naive_conv3d_backward(
    x: &[f64],
    [ci, a, r, d]: [usize; 4],
    w: &[f64],
    [co, ka, kr, kd]: [usize; 4],
    gy: &[f64],
    pad: usize,
) -> (Vec<f64>, Vec<f64>, Vec<f64>) {
    let (ao, ro, dout) = (a + 2 * pad - ka + 1, r + 2 * pad - kr + 1, d + 2 * pad - kd + 1);
    let mut gx = vec![0.0; x.len()];
    let mut gw = vec![0.0; w.len()];
    let mut gb = vec![0.0; co];
    for o in 0..co {
        for i in 0..ao {
            for j in 0..ro {
                for k in 0..dout {
                    let g = gy[((o * ao + i) * ro + j) * dout + k];
                    gb[o] += g;
                    for c in 0..ci {
                        for p in 0..ka {
                            for q in 0..kr {
                                for t in 0..kd {
                                    let (ii, jj, kk) = (
                                        (i + p) as isize - pad as isize,
                                        (j + q) as isize - pad as isize,
                                        (k + t) as isize - pad as isize,
                                    );
                                    if ii < 0
                                        || jj < 0
                                        || kk < 0
                                        || ii >= a as isize
                                        || jj >= r as isize
                                        || kk >= d as isize
                                    {
                                        continue;
                                    }
                                    let xi = ((c * a + ii as usize) * r + jj as usize) * d + kk as usize;
                                    let wi = (((o * ci + c) * ka + p) * kr + q) * kd + t;
                                    gx[xi] += g * w[wi];
                                    gw[wi] += g * x[xi];
                                }
                            }
                        }
                    }
                }
            }
        }
    }
    (gx, gw, gb)
}

pub fn naive_conv1d_backward(
    x: &[f64],
    [ci, l]: [usize; 2],
    w: &[f64],
    [co, k]: [usize; 2],
    gy: &[f64],
    pad: usize,
) -> (Vec<f64>, Vec<f64>, Vec<f64>) {
    let lo = l + 2 * pad - k + 1;
    let mut gx = vec![0.0; x.len()];
    let mut gw = vec![0.0; w.len()];
    let mut gb = vec![0.0; co];
    for o in 0..co {
        for i in 0..lo {
            let g = gy[o * lo + i];
            gb[o] += g;
            for c in 0..ci {
                for t in 0..k {
                    let src = (i + t) as isize - pad as isize;
                    if src >= 0 && (src as usize) < l {
                        gx[c * l + src as usize] += g * w[(o * ci + c) * k + t];
                        gw[(o * ci + c) * k + t] += g * x[c * l + src as usize];
                    }
                }
            }
        }
    }
    (gx, gw, gb)
}

/// Max over each window without padding; ties go to the first element.
pub fn naive_maxpool3d(x: &[f64], [c, a, r, d]: [usize; 4], k: [usize; 3], s: [usize; 3]) -> (Vec<f64>, Vec<usize>) {
    let ao = (a - k[0]) / s[0] + 1;
    let ro = (r - k[1]) / s[1] + 1;
    let dout = (d - k[2]) / s[2] + 1;
    let mut y = Vec::new();
    let mut arg = Vec::new();
    for ch in 0..c {
        for i in 0..ao {
            for j in 0..ro {
                for t in 0..dout {
                    let mut best = None::<(f64, usize)>;
                    for p in 0..k[0] {
                        for q in 0..k[1] {
                            for u in 0..k[2] {
                                let idx = ((ch * a + i * s[0] + p) * r + j * s[1] + q) * d + t * s[2] + u;
                                if best.is_none_or(|(v, _)| x[idx] > v) {
                                    best = Some((x[idx], idx));
                                }
                            }
                        }
                    }
                    let (v, idx) = best.unwrap();
                    y.push(v);
                    arg.push(idx);
                }
            }
        }
    }
    (y, arg)
}

/// Padded positions act as -inf.
pub fn naive_maxpool1d(x: &[f64], [c, l]: [usize; 2], k: usize, s: usize, pad: usize) -> (Vec<f64>, Vec<usize>) {
    let lo = (l + 2 * pad - k) / s + 1;
    let mut y = Vec::new();
    let mut arg = Vec::new();
    for ch in 0..c {
        for i in 0..lo {
            let mut best = None::<(f64, usize)>;
            for t in 0..k {
                let src = (i * s + t) as isize - pad as isize;
                if src < 0 || src as usize >= l {
                    continue;
                }
                let idx = ch * l + src as usize;
                if best.is_none_or(|(v, _)| x[idx] > v) {
                    best = Some((x[idx], idx));
                }
            }
            let (v, idx) = best.unwrap();
            y.push(v);
            arg.push(idx);
        }
    }
    (y, arg)
}

// ------------------------------------------------------ gradient checking

#[derive(Debug, Clone, Copy)]
pub struct GradCheck {
    pub max_rel_err: f64,
    pub checked: usize,
    pub skipped: usize,
}

/// Compares backpropagated gradients of `L = sum_k r_k * logit_k` with
/// central differences. Perturbations that flip a ReLU or max-pool branch
/// are skipped, since the difference quotient then straddles a kink. At
/// most `per_tensor` entries of each parameter tensor are checked.
pub fn check_network_gradients(
    net: &Network<f64>,
    block: &[f64],
    features: &[f64],
    weights: &[f64],
    eps: f64,
    per_tensor: usize,
    rng: &mut impl Rng,
) -> GradCheck {
    let base = net.forward(block, features).unwrap();
    let mut grads = net.zero_grads();
    net.backward(&base, weights, &mut grads).unwrap();
    let loss = |n: &Network<f64>| {
        let t = n.forward(block, features).unwrap();
        let l: f64 = t.logits().iter().zip(weights).map(|(a, b)| a * b).sum();
        (l, t)
    };
    let mut out = GradCheck {
        max_rel_err: 0.0,
        checked: 0,
        skipped: 0,
    };
    let mut probe = net.clone();
    for (ti, g) in grads.iter().enumerate() {
        let n = g.len();
        let picks: Vec<usize> = if n <= per_tensor {
            (0..n).collect()
        } else {
            (0..per_tensor).map(|_| rng.random_range(0..n)).collect()
        };
        for i in picks {
            let orig = probe.params()[ti].data()[i];
            probe.params_mut()[ti].data_mut()[i] = orig + eps;
            let (lp, tp) = loss(&probe);
            probe.params_mut()[ti].data_mut()[i] = orig - eps;
            let (lm, tm) = loss(&probe);
            probe.params_mut()[ti].data_mut()[i] = orig;
            if !tp.same_branches(&base) || !tm.same_branches(&base) {
                out.skipped += 1;
                continue;
            }
            let numeric = (lp - lm) / (2.0 * eps);
            let analytic = g.data()[i];
            let err = (numeric - analytic).abs() / numeric.abs().max(analytic.abs()).max(1e-8);
            out.max_rel_err = out.max_rel_err.max(err);
            out.checked += 1;
        }
    }
    out
}

pub fn random_network(arch: Architecture, seed: u64) -> Network<f64> {
    // Re-draw parameters (biases included) so that no entry sits at zero.
    let mut r = rng(seed);
    let specs = arch.param_specs();
    let params = specs
        .iter()
        .map(|s| {
            let bound = (6.0 / s.fan_in as f64).sqrt();
            let n = s.shape.iter().product();
            Tensor::new(s.shape.clone(), uniform_vec(&mut r, n, -bound, bound)).unwrap()
        })
        .collect();
    Network::from_params(arch, params).unwrap()
}

// ----------------------------------------------------------------- DBSCAN

/// O(n^3) DBSCAN: neighbor matrix, transitive closure of core-core
/// adjacency, then canonical labels. Components are numbered by their
/// smallest core index; a border point joins the lowest-numbered component
/// it touches.
pub fn brute_force_dbscan(points: &[[f64; 3]], gamma_xy: f64, gamma_v: f64, min_points: usize) -> Vec<Option<usize>> {
    let n = points.len();
    let near = |i: usize, j: usize| {
        let (p, q) = (points[i], points[j]);
        let (dx, dy) = (p[0] - q[0], p[1] - q[1]);
        dx * dx + dy * dy <= gamma_xy * gamma_xy && (p[2] - q[2]).abs() <= gamma_v
    };
    let core: Vec<bool> = (0..n)
        .map(|i| (0..n).filter(|&j| near(i, j)).count() >= min_points)
        .collect();
    let mut reach = vec![vec![false; n]; n];
    for i in 0..n {
        for j in 0..n {
            reach[i][j] = core[i] && core[j] && near(i, j);
        }
    }
    for k in 0..n {
        for i in 0..n {
            if !reach[i][k] {
                continue;
            }
            for j in 0..n {
                if reach[k][j] {
                    reach[i][j] = true;
                }
            }
        }
    }
    let root: Vec<Option<usize>> = (0..n)
        .map(|i| core[i].then(|| (0..n).find(|&j| reach[i][j]).unwrap_or(i).min(i)))
        .collect();
    let mut roots: Vec<usize> = root.iter().flatten().copied().collect();
    roots.sort_unstable();
    roots.dedup();
    let label_of = |r: usize| roots.binary_search(&r).unwrap();
    (0..n)
        .map(|i| {
            if let Some(r) = root[i] {
                return Some(label_of(r));
            }
            (0..n)
                .filter(|&j| core[j] && near(i, j))
                .map(|j| label_of(root[j].unwrap()))
                .min()
        })
        .collect()
}

/// Relabels clusters by first appearance so partitions compare directly.
pub fn canonical_partition(labels: &[Option<usize>]) -> Vec<Option<usize>> {
    let mut map = std::collections::HashMap::new();
    labels
        .iter()
        .map(|l| {
            l.map(|l| {
                let next = map.len();
                *map.entry(l).or_insert(next)
            })
        })
        .collect()
}

// ------------------------------------------------------------------- vote

/// The weighting rule written out term by term.
pub fn transcribed_vote(ova: [f64; 4], ovo: [[f64; 4]; 4]) -> [f64; 4] {
    let w = |c: usize, j: usize| ovo[c][j] * (ova[c] + ova[j]);
    let raw = [
        w(0, 1) + w(0, 2) + w(0, 3),
        w(1, 0) + w(1, 2) + w(1, 3),
        w(2, 0) + w(2, 1) + w(2, 3),
        w(3, 0) + w(3, 1) + w(3, 2),
    ];
    let total = raw[0] + raw[1] + raw[2] + raw[3];
    if total > 0.0 {
        raw.map(|x| x / total)
    } else {
        [0.25; 4]
    }
}

/// Random member table with `ovo[j][c] = 1 - ovo[c][j]`.
pub fn random_member_table(rng: &mut impl Rng) -> ([f64; 4], [[f64; 4]; 4]) {
    let ova = std::array::from_fn(|_| rng.random::<f64>());
    let mut ovo = [[0.0; 4]; 4];
    for c in 0..4 {
        for j in c + 1..4 {
            let p: f64 = rng.random();
            ovo[c][j] = p;
            ovo[j][c] = 1.0 - p;
        }
    }
    (ova, ovo)
}

// ----------------------------------------------------------------- sweeps

fn t(shape: &[usize], data: Vec<f64>) -> Tensor<f64> {
    Tensor::new(shape.to_vec(), data).unwrap()
}

/// Worst relative error of conv3d, conv1d and both max-pools (forward and
/// backward) against the naive loops over `cases` random tensors each.
pub fn kernel_oracle_sweep(seed: u64, cases: usize) -> f64 {
    use rtcnet::tensor::*;
    let mut r = rng(seed);
    let mut worst: f64 = 0.0;
    for _ in 0..cases {
        // conv3d
        let ci = r.random_range(1..=3);
        let co = r.random_range(1..=4);
        let dims = [r.random_range(1..=5), r.random_range(1..=5), r.random_range(1..=12)];
        let k = [r.random_range(1..=3), r.random_range(1..=3), r.random_range(1..=3)];
        let pad = r.random_range(0..=1);
        if (0..3).all(|i| dims[i] + 2 * pad >= k[i]) {
            let xs = [ci, dims[0], dims[1], dims[2]];
            let ws = [co, k[0], k[1], k[2]];
            let x = uniform_vec(&mut r, xs.iter().product(), -1.0, 1.0);
            let w = uniform_vec(&mut r, co * ci * k.iter().product::<usize>(), -1.0, 1.0);
            let b = uniform_vec(&mut r, co, -1.0, 1.0);
            let (want, ys) = naive_conv3d(&x, xs, &w, ws, &b, pad);
            let wt = t(&[co, ci, k[0], k[1], k[2]], w.clone());
            let got = conv3d(&t(&xs, x.clone()), &wt, &t(&[co], b), pad).unwrap();
            assert_eq!(got.shape(), &ys);
            worst = worst.max(max_rel_err(got.data(), &want));
            let gy = uniform_vec(&mut r, want.len(), -1.0, 1.0);
            let (gx, gw, gb) = naive_conv3d_backward(&x, xs, &w, ws, &gy, pad);
            let g = conv3d_backward(&t(&xs, x), &wt, &t(&ys, gy), pad, true).unwrap();
            worst = worst
                .max(max_rel_err(g.input.unwrap().data(), &gx))
                .max(max_rel_err(g.weight.data(), &gw))
                .max(max_rel_err(g.bias.data(), &gb));
        }

        // conv1d
        let ci = r.random_range(1..=6);
        let co = r.random_range(1..=6);
        let l = r.random_range(1..=20);
        let k = r.random_range(1..=7);
        let pad = r.random_range(0..=3);
        if l + 2 * pad >= k {
            let x = uniform_vec(&mut r, ci * l, -1.0, 1.0);
            let w = uniform_vec(&mut r, co * ci * k, -1.0, 1.0);
            let b = uniform_vec(&mut r, co, -1.0, 1.0);
            let want = naive_conv1d(&x, [ci, l], &w, [co, k], &b, pad);
            let wt = t(&[co, ci, k], w.clone());
            let got = conv1d(&t(&[ci, l], x.clone()), &wt, &t(&[co], b), pad).unwrap();
            worst = worst.max(max_rel_err(got.data(), &want));
            let gy = uniform_vec(&mut r, want.len(), -1.0, 1.0);
            let (gx, gw, gb) = naive_conv1d_backward(&x, [ci, l], &w, [co, k], &gy, pad);
            let g = conv1d_backward(&t(&[ci, l], x), &wt, &t(got.shape(), gy), pad, true).unwrap();
            worst = worst
                .max(max_rel_err(g.input.unwrap().data(), &gx))
                .max(max_rel_err(g.weight.data(), &gw))
                .max(max_rel_err(g.bias.data(), &gb));
        }

        // maxpool3d
        let c = r.random_range(1..=3);
        let kk = [r.random_range(1..=2), r.random_range(1..=2), r.random_range(1..=2)];
        let ss = [r.random_range(1..=2), r.random_range(1..=2), r.random_range(1..=2)];
        let dims = [
            r.random_range(kk[0]..=6),
            r.random_range(kk[1]..=6),
            r.random_range(kk[2]..=10),
        ];
        let xs = [c, dims[0], dims[1], dims[2]];
        let x = uniform_vec(&mut r, xs.iter().product(), -1.0, 1.0);
        let (want, arg) = naive_maxpool3d(&x, xs, kk, ss);
        let got = maxpool3d(&t(&xs, x.clone()), kk, ss).unwrap();
        worst = worst.max(max_rel_err(got.output.data(), &want));
        if got.argmax != arg {
            worst = f64::INFINITY;
        }
        let gy = uniform_vec(&mut r, want.len(), -1.0, 1.0);
        let mut gx = vec![0.0; x.len()];
        for (g, &i) in gy.iter().zip(&arg) {
            gx[i] += g;
        }
        let back = maxpool3d_backward(&xs, &got.argmax, &t(got.output.shape(), gy)).unwrap();
        worst = worst.max(max_rel_err(back.data(), &gx));

        // maxpool1d, kernel 3 stride 2 padding 1 as in the network
        let c = r.random_range(1..=4);
        let l = 2 * r.random_range(1..=16);
        let x = uniform_vec(&mut r, c * l, -1.0, 1.0);
        let (want, arg) = naive_maxpool1d(&x, [c, l], 3, 2, 1);
        let got = maxpool1d(&t(&[c, l], x.clone()), 3, 2, 1).unwrap();
        worst = worst.max(max_rel_err(got.output.data(), &want));
        if got.argmax != arg {
            worst = f64::INFINITY;
        }
        let gy = uniform_vec(&mut r, want.len(), -1.0, 1.0);
        let mut gx = vec![0.0; x.len()];
        for (g, &i) in gy.iter().zip(&arg) {
            gx[i] += g;
        }
        let back = maxpool1d_backward(&[c, l], &got.argmax, &t(got.output.shape(), gy)).unwrap();
        worst = worst.max(max_rel_err(back.data(), &gx));
    }
    worst
}

/// Instances on which the library DBSCAN and the brute-force oracle give
/// different partitions, out of `cases` random instances.
pub fn dbscan_oracle_sweep(seed: u64, cases: usize) -> usize {
    let mut r = rng(seed);
    let mut mismatches = 0;
    for case in 0..cases {
        let n = r.random_range(0..=40);
        let spread = r.random_range(1.0..6.0);
        // Snap to a coarse grid so that ties on the thresholds occur.
        let points: Vec<[f64; 3]> = (0..n)
            .map(|_| {
                [
                    (r.random_range(-spread..spread) * 4.0_f64).round() / 4.0,
                    (r.random_range(-spread..spread) * 4.0_f64).round() / 4.0,
                    (r.random_range(-3.0..3.0) * 4.0_f64).round() / 4.0,
                ]
            })
            .collect();
        let min_points = 1 + case % 3;
        let gxy = [0.5, 1.0, 1.5][r.random_range(0..3)];
        let gv = [0.5, 1.0, 2.0][r.random_range(0..3)];
        let got = rtcnet::clustering::dbscan(&points, gxy, gv, min_points);
        let want = brute_force_dbscan(&points, gxy, gv, min_points);
        if canonical_partition(&got) != canonical_partition(&want) {
            mismatches += 1;
        }
    }
    mismatches
}

/// Largest absolute difference between the library vote and the
/// transcribed rule over `cases` random member tables.
pub fn vote_sweep(seed: u64, cases: usize) -> f64 {
    let mut r = rng(seed);
    let mut worst: f64 = 0.0;
    for _ in 0..cases {
        let (ova, ovo) = random_member_table(&mut r);
        let got = rtcnet::ensemble::vote_from_probabilities(&rtcnet::ensemble::MemberProbabilities { ova, ovo });
        let want = transcribed_vote(ova, ovo);
        for c in 0..4 {
            worst = worst.max((got.scores.0[c] - want[c]).abs());
        }
    }
    worst
}

/// Gradient check of the full network on `samples` random inputs for the
/// given architecture. Returns the worst relative error and the number of
/// compared entries.
pub fn network_gradient_sweep(arch: Architecture, seed: u64, samples: usize, per_tensor: usize) -> GradCheck {
    let mut r = rng(seed);
    let mut total = GradCheck {
        max_rel_err: 0.0,
        checked: 0,
        skipped: 0,
    };
    for s in 0..samples {
        let net = random_network(arch, seed.wrapping_add(s as u64));
        let block = uniform_vec(&mut r, arch.block.len(), -1.5, 1.5);
        let features = uniform_vec(&mut r, arch.n_features(), -1.5, 1.5);
        let weights = uniform_vec(&mut r, arch.n_out, -1.0, 1.0);
        let g = check_network_gradients(&net, &block, &features, &weights, 1e-3, per_tensor, &mut r);
        total.max_rel_err = total.max_rel_err.max(g.max_rel_err);
        total.checked += g.checked;
        total.skipped += g.skipped;
    }
    total
}

// ---------------------------------------------------------- metric cases

fn proposal(class: rtcnet::RoadClass, members: &[usize]) -> rtcnet::ObjectProposal {
    rtcnet::ObjectProposal {
        class_label: class,
        member_indices: members.to_vec(),
        mean_scores: rtcnet::ClassScores::uniform(),
        centroid_xy_m: [0.0, 0.0],
        mean_v_r_mps: 0.0,
    }
}

fn annotation(id: u64, class: rtcnet::RoadClass, targets: &[usize]) -> rtcnet::Annotation {
    rtcnet::Annotation {
        object_id: id,
        class_label: class,
        target_indices: targets.to_vec(),
    }
}

/// Hand-checked metric cases as `(name, passed)`.
pub fn metric_unit_cases() -> Vec<(&'static str, bool)> {
    use rtcnet::metrics::*;
    use rtcnet::RoadClass::{self, *};
    let mut out = Vec::new();

    // 3 shared targets of a 4-target union: IoU 0.75, a true positive.
    let props = [proposal(Car, &[0, 1, 2, 3])];
    let annos = [annotation(1, Car, &[1, 2, 3])];
    let r = object_detection_f1(&[FrameObjects {
        proposals: &props,
        annotations: &annos,
    }]);
    let m = &r.matches;
    out.push((
        "iou 3/4 is a true positive",
        intersection_union(&[0, 1, 2, 3], &[1, 2, 3]) == (3, 4)
            && m.len() == 1
            && m[0].iou == 0.75
            && r.class(Car).unwrap().counts == Counts { tp: 1, fp: 0, fn_: 0 },
    ));

    // Exactly one half passes, just below fails.
    out.push((
        "iou boundary",
        iou_passes(2, 4) && !iou_passes(1, 3) && !iou_passes(49, 99) && iou_passes(50, 100),
    ));

    // Two proposals on one pedestrian: one TP, the duplicate is an FP.
    let props = [proposal(Pedestrian, &[0, 1]), proposal(Pedestrian, &[0, 1, 2])];
    let annos = [annotation(1, Pedestrian, &[0, 1])];
    let r = object_detection_f1(&[FrameObjects {
        proposals: &props,
        annotations: &annos,
    }]);
    let c = r.class(Pedestrian).unwrap();
    out.push((
        "duplicate detection is a false positive",
        c.counts == Counts { tp: 1, fp: 1, fn_: 0 }
            && r.matches[0].proposal_id == 0
            && (c.f1 - 2.0 / 3.0).abs() < 1e-15,
    ));

    // Wrong class never matches.
    let props = [proposal(Cyclist, &[0, 1])];
    let r = object_detection_f1(&[FrameObjects {
        proposals: &props,
        annotations: &annos,
    }]);
    out.push((
        "class mismatch is FP plus FN",
        r.class(Cyclist).unwrap().counts == Counts { tp: 0, fp: 1, fn_: 0 }
            && r.class(Pedestrian).unwrap().counts == Counts { tp: 0, fp: 0, fn_: 1 },
    ));

    // Target-wise hand count. Truth: P P C car O; predicted: P C C car car.
    let truth = [Pedestrian, Pedestrian, Cyclist, Car, Other];
    let pred = [Pedestrian, Cyclist, Cyclist, Car, Car];
    let r = target_f1(&pred, &truth).unwrap();
    let f1 = |c: RoadClass| r.per_class[c.index()].f1;
    // ped: tp1 fn1 -> 2/3; cyc: tp1 fp1 -> 2/3; car: tp1 fp1 -> 2/3; other: fn1 -> 0
    out.push((
        "target f1 hand count",
        (f1(Pedestrian) - 2.0 / 3.0).abs() < 1e-15
            && (f1(Cyclist) - 2.0 / 3.0).abs() < 1e-15
            && (f1(Car) - 2.0 / 3.0).abs() < 1e-15
            && f1(Other) == 0.0
            && (r.macro_f1 - 0.5).abs() < 1e-15
            && r.confusion.0[Pedestrian.index()][Cyclist.index()] == 1,
    ));
    out.push((
        "macro f1 skips absent classes",
        macro_f1(&[0, 0, 1], &[0, 0, 1], 4) == 1.0,
    ));

    // ROC on perfectly separated scores.
    let scores: Vec<f64> = (0..200).map(|i| i as f64 / 200.0).collect();
    let labels: Vec<bool> = (0..200).map(|i| i >= 120).collect();
    let roc = roc_curve(&scores, &labels, 50).unwrap();
    out.push(("auc 1 on separable scores", roc.auc == 1.0));

    // ROC on random scores.
    let mut r = rng(99);
    let scores = uniform_vec(&mut r, 4000, 0.0, 1.0);
    let labels: Vec<bool> = (0..4000).map(|_| r.random::<bool>()).collect();
    let roc = roc_curve(&scores, &labels, 200).unwrap();
    out.push(("auc near 0.5 on random scores", (roc.auc - 0.5).abs() <= 0.05));

    out.push((
        "roc rejects single-class labels",
        roc_curve(&[0.1, 0.2], &[true, true], 10).is_err(),
    ));
    out
}

// --------------------------------------------------------- format sweeps

pub fn random_geometry(r: &mut impl Rng) -> rtcnet::CubeGeometry {
    rtcnet::CubeGeometry::new(
        r.random_range(2..10),
        r.random_range(2..8),
        r.random_range(2..16),
        r.random_range(0.1..1.0),
        r.random_range(0.01..0.1),
        r.random_range(0.05..0.5),
        r.random_range(0.0..2.0),
        -r.random_range(0.05..0.3),
    )
}

/// A frame that passes `validate_frame`, with full-precision floats.
pub fn random_frame(r: &mut impl Rng, g: rtcnet::CubeGeometry, frame_id: u64) -> rtcnet::Frame {
    use rtcnet::{Annotation, Frame, RadarCube, RadarTarget, RoadClass};
    let n = r.random_range(0..8);
    let targets: Vec<RadarTarget> = (0..n)
        .map(|_| {
            RadarTarget::new(
                r.random_range(g.range_min_m.max(0.01)..g.range_max_m()),
                r.random_range(g.azimuth_min_rad..g.azimuth_max_rad()),
                r.random_range(-5.0..5.0),
                r.random_range(-20.0..30.0),
            )
        })
        .collect();
    let mut free: Vec<usize> = (0..n).collect();
    let mut annotations = Vec::new();
    let mut id = 0;
    while !free.is_empty() && r.random::<f64>() < 0.6 {
        let k = r.random_range(1..=free.len());
        let mut idx: Vec<usize> = free.drain(..k).collect();
        idx.sort_unstable();
        annotations.push(Annotation {
            object_id: id,
            class_label: RoadClass::ALL[r.random_range(0..4)],
            target_indices: idx,
        });
        id += 1;
    }
    let mut cube = RadarCube::zeros(g);
    for v in &mut cube.values {
        *v = r.random_range(0.0f32..8.0);
    }
    Frame {
        frame_id,
        ego_speed_mps: r.random_range(0.0..10.0),
        targets,
        cube,
        annotations,
    }
}

pub fn random_model(r: &mut impl Rng) -> rtcnet::model::RtcNetModel {
    use rtcnet::model::{LabelMapping, RtcNetModel, TrainConfig};
    use rtcnet::net::Ablation;
    use rtcnet::preprocess::{CropConfig, NormalizationStats};
    use rtcnet::RoadClass;
    let crop = CropConfig::default();
    let ablation = [Ablation::None, Ablation::NoRcs, Ablation::NoSpeed, Ablation::NoLowLevel][r.random_range(0..4)];
    let mapping = match r.random_range(0..3) {
        0 => LabelMapping::MultiClass,
        1 => LabelMapping::OneVsAll {
            class: RoadClass::ALL[r.random_range(0..4)],
        },
        _ => LabelMapping::OneVsOne {
            first: RoadClass::Pedestrian,
            second: RoadClass::ALL[r.random_range(1..4)],
        },
    };
    let arch = Architecture::new(mapping.n_out(), ablation, crop.block_shape()).unwrap();
    let stats = NormalizationStats {
        feature_mean: std::array::from_fn(|_| r.random_range(-5.0..5.0)),
        feature_std: std::array::from_fn(|_| r.random_range(0.1..5.0)),
        cube_mean: r.random_range(0.0..3.0),
        cube_std: r.random_range(0.1..2.0),
    };
    RtcNetModel {
        network: Network::init(arch, r.random()),
        mapping,
        normalization: stats,
        crop,
        geometry: r.random::<bool>().then(|| random_geometry(r)),
        train_config: TrainConfig {
            seed: r.random(),
            epochs: r.random_range(1..20),
            ablation,
            ..TrainConfig::default()
        },
    }
}

pub fn random_detections(r: &mut impl Rng) -> rtcnet::io::Detections {
    use rtcnet::io::{Detections, FrameDetections, ProposalRecord, TargetRecord};
    use rtcnet::RoadClass;
    let clustered = r.random::<bool>();
    let mut ids: Vec<u64> = (0..r.random_range(0..6)).map(|_| r.random_range(0..1000)).collect();
    ids.sort_unstable();
    ids.dedup();
    let frames = ids
        .into_iter()
        .map(|frame_id| {
            let with_ova = r.random::<bool>();
            let targets = (0..r.random_range(0..5))
                .map(|index| {
                    let scores: [f64; 4] = std::array::from_fn(|_| r.random());
                    TargetRecord {
                        frame_id,
                        index,
                        scores,
                        predicted_class: RoadClass::ALL[r.random_range(0..4)],
                        ova_scores: with_ova.then(|| std::array::from_fn(|_| r.random())),
                        degenerate: r.random(),
                    }
                })
                .collect();
            let proposals = if clustered {
                (0..r.random_range(0..3))
                    .map(|_| ProposalRecord {
                        frame_id,
                        class_label: RoadClass::ROAD_USERS[r.random_range(0..3)],
                        member_indices: (0..r.random_range(1..4)).collect(),
                        mean_scores: std::array::from_fn(|_| r.random()),
                        centroid_xy_m: [r.random_range(-30.0..30.0), r.random_range(-30.0..30.0)],
                        mean_v_r_mps: r.random_range(-10.0..10.0),
                    })
                    .collect()
            } else {
                Vec::new()
            };
            FrameDetections {
                frame_id,
                targets,
                proposals,
            }
        })
        .collect();
    Detections { clustered, frames }
}

fn dir_bytes(dir: &std::path::Path) -> Vec<(std::path::PathBuf, Vec<u8>)> {
    let mut out = Vec::new();
    let mut stack = vec![dir.to_path_buf()];
    while let Some(d) = stack.pop() {
        for e in std::fs::read_dir(&d).unwrap() {
            let p = e.unwrap().path();
            if p.is_dir() {
                stack.push(p);
            } else {
                out.push((p.strip_prefix(dir).unwrap().to_path_buf(), std::fs::read(&p).unwrap()));
            }
        }
    }
    out.sort();
    out
}

/// Write, read back, compare, write again and compare bytes, for
/// `cases` random datasets, checkpoints and detection files. Returns the
/// first failure.
pub fn format_round_trip_sweep(seed: u64, cases: usize) -> Result<(), String> {
    use rtcnet::io::*;
    let mut r = rng(seed);
    let root = tempfile::tempdir().map_err(|e| e.to_string())?;
    for case in 0..cases {
        let g = random_geometry(&mut r);
        let n = r.random_range(0..4);
        let frames: Vec<_> = (0..n)
            .map(|i| random_frame(&mut r, g, 3 * i as u64 + case as u64))
            .collect();
        let a = root.path().join(format!("a{case}"));
        let b = root.path().join(format!("b{case}"));
        write_dataset(&a, g, None, &frames).map_err(|e| format!("case {case}: {e}"))?;
        let back = read_dataset(&a).map_err(|e| format!("case {case}: {e}"))?;
        if back.frames != frames {
            return Err(format!("case {case}: dataset frames differ after round trip"));
        }
        write_dataset(&b, back.meta.geometry, back.meta.normalization, &back.frames).map_err(|e| e.to_string())?;
        if dir_bytes(&a) != dir_bytes(&b) {
            return Err(format!("case {case}: dataset bytes differ"));
        }

        let m = random_model(&mut r);
        let bytes = encode_checkpoint(&m).map_err(|e| e.to_string())?;
        let path = root.path().join(format!("m{case}.rtck"));
        write_checkpoint(&m, &path).map_err(|e| e.to_string())?;
        let back = read_checkpoint(&path).map_err(|e| format!("case {case}: {e}"))?;
        if back != m || encode_checkpoint(&back).map_err(|e| e.to_string())? != bytes {
            return Err(format!("case {case}: checkpoint differs after round trip"));
        }
        if std::fs::read(&path).map_err(|e| e.to_string())? != bytes {
            return Err(format!("case {case}: checkpoint file bytes differ from encoding"));
        }

        let d = random_detections(&mut r);
        let path = root.path().join(format!("d{case}.jsonl"));
        write_detections(&d, &path).map_err(|e| e.to_string())?;
        let back = read_detections(&path).map_err(|e| format!("case {case}: {e}"))?;
        let bytes = encode_detections(&back).map_err(|e| e.to_string())?;
        if back != d || bytes != std::fs::read(&path).map_err(|e| e.to_string())? {
            return Err(format!("case {case}: detections differ after round trip"));
        }
        if bytes.iter().filter(|&&c| c == b'\n').count() != d.record_count() {
            return Err(format!("case {case}: record count mismatch"));
        }
    }
    Ok(())
}
