//! Independent reference implementations and the acceptance checks built on them.
#![allow(dead_code)]

use std::time::Instant;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use peaknetfp::autodiff::{Graph, Tensor, Var};
use peaknetfp::encoder::Fingerprint;
use peaknetfp::encoder::{
    bind, forward, query_ball_group, sample_anchors, BranchSpec, CloudPlan, DistanceSpace, Encoder,
    LayerSpec, Mode, ModelParams, StageSpec,
};
use peaknetfp::eval::{run_sweep, synth_corpus, Artifacts, CorpusConfig, EvalConfig, System};
use peaknetfp::index::{dot, FingerprintDB, IvfPqConfig, IvfPqIndex};
use peaknetfp::pipeline::{build_quad_db, model_id, Fingerprinter, PipelineConfig};
use peaknetfp::quadfp::{quad_hash, GridPeak, Quad, QuadDB, QuadEntry};
use peaknetfp::signal::{extract_peaks, peakfile, MelSpectrogram, Peak};
use peaknetfp::training::{ntxent_loss, ntxent_value, train, TrainOptions, TrainingSet};

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

/// Outcome of one check: pass/fail plus the measured numbers.
pub struct Verdict {
    pub pass: bool,
    pub detail: String,
}

impl Verdict {
    fn new(pass: bool, detail: String) -> Self {
        Self { pass, detail }
    }
}

// ---------------------------------------------------------------------------------------------
// finite differences

/// Scalar loss `sum(out * r)` with a fixed random `r`, so every output entry matters.
fn projected(g: &mut Graph<f64>, out: Var, seed: u64) -> Var {
    let shape = g.value(out).shape().to_vec();
    let n = g.value(out).len();
    let mut r = rng(seed);
    let w = Tensor::new(shape, (0..n).map(|_| r.gen_range(-1.0..1.0)).collect()).unwrap();
    let w = g.constant(w);
    let p = g.mul(out, w).unwrap();
    g.sum(p).unwrap()
}

/// Largest per-entry relative error between backprop and central differences over all
/// inputs. Entries where both gradients are below `floor` in magnitude are compared against
/// `floor` instead.
pub fn fd_check(
    inputs: &[Tensor<f64>],
    f: &dyn Fn(&mut Graph<f64>, &[Var]) -> Var,
    h: f64,
    floor: f64,
) -> f64 {
    let eval = |xs: &[Tensor<f64>], grads: bool| {
        let mut g = Graph::new();
        let vars: Vec<Var> = xs.iter().map(|t| g.param(t.clone())).collect();
        let out = f(&mut g, &vars);
        let loss = projected(&mut g, out, 99);
        let value = g.value(loss).item();
        let gr = grads.then(|| {
            let gs = g.backward(loss).unwrap();
            vars.iter()
                .zip(xs)
                .map(|(v, t)| gs.get(*v).map_or(vec![0.0; t.len()], |x| x.data().to_vec()))
                .collect::<Vec<_>>()
        });
        (value, gr)
    };
    let analytic = eval(inputs, true).1.unwrap();
    let mut worst: f64 = 0.0;
    for (k, t) in inputs.iter().enumerate() {
        for i in 0..t.len() {
            let mut up = inputs.to_vec();
            up[k].data_mut()[i] += h;
            let mut dn = inputs.to_vec();
            dn[k].data_mut()[i] -= h;
            let numeric = (eval(&up, false).0 - eval(&dn, false).0) / (2.0 * h);
            let a = analytic[k][i];
            let err = (a - numeric).abs() / a.abs().max(numeric.abs()).max(floor);
            worst = worst.max(err);
        }
    }
    worst
}

fn rand_tensor(r: &mut ChaCha8Rng, shape: &[usize], lo: f64, hi: f64) -> Tensor<f64> {
    let n = shape.iter().product();
    Tensor::new(
        shape.to_vec(),
        (0..n).map(|_| r.gen_range(lo..hi)).collect(),
    )
    .unwrap()
}

/// Values bounded away from zero, for ops with a kink there.
fn away_from_zero(r: &mut ChaCha8Rng, shape: &[usize]) -> Tensor<f64> {
    let n = shape.iter().product();
    let data = (0..n)
        .map(|_| {
            let m = r.gen_range(0.1..1.0);
            if r.gen() {
                m
            } else {
                -m
            }
        })
        .collect();
    Tensor::new(shape.to_vec(), data).unwrap()
}

type Builder = Box<dyn Fn(&mut Graph<f64>, &[Var]) -> Var>;

/// Every primitive with a gradient, each on small random inputs.
pub fn primitive_cases(seed: u64) -> Vec<(&'static str, Vec<Tensor<f64>>, Builder)> {
    let mut r = rng(seed);
    let mut cases: Vec<(&'static str, Vec<Tensor<f64>>, Builder)> = Vec::new();
    macro_rules! case {
        ($name:expr, [$($t:expr),*], $f:expr) => {
            cases.push(($name, vec![$($t),*], Box::new($f)))
        };
    }
    case!(
        "matmul",
        [
            rand_tensor(&mut r, &[3, 4], -1.0, 1.0),
            rand_tensor(&mut r, &[4, 5], -1.0, 1.0)
        ],
        |g, v| { g.matmul(v[0], v[1]).unwrap() }
    );
    case!(
        "matmul_nt",
        [
            rand_tensor(&mut r, &[3, 4], -1.0, 1.0),
            rand_tensor(&mut r, &[5, 4], -1.0, 1.0)
        ],
        |g, v| { g.matmul_nt(v[0], v[1]).unwrap() }
    );
    case!(
        "linear",
        [
            rand_tensor(&mut r, &[6, 3], -1.0, 1.0),
            rand_tensor(&mut r, &[3, 4], -1.0, 1.0),
            rand_tensor(&mut r, &[4], -1.0, 1.0)
        ],
        |g, v| g.linear(v[0], v[1], Some(v[2])).unwrap()
    );
    case!(
        "linear_no_bias",
        [
            rand_tensor(&mut r, &[6, 3], -1.0, 1.0),
            rand_tensor(&mut r, &[3, 2], -1.0, 1.0)
        ],
        |g, v| { g.linear(v[0], v[1], None).unwrap() }
    );
    case!(
        "add_bias",
        [
            rand_tensor(&mut r, &[3, 4], -1.0, 1.0),
            rand_tensor(&mut r, &[4], -1.0, 1.0)
        ],
        |g, v| { g.add_bias(v[0], v[1]).unwrap() }
    );
    case!(
        "add",
        [
            rand_tensor(&mut r, &[3, 4], -1.0, 1.0),
            rand_tensor(&mut r, &[3, 4], -1.0, 1.0)
        ],
        |g, v| { g.add(v[0], v[1]).unwrap() }
    );
    case!(
        "mul",
        [
            rand_tensor(&mut r, &[3, 4], -1.0, 1.0),
            rand_tensor(&mut r, &[3, 4], -1.0, 1.0)
        ],
        |g, v| { g.mul(v[0], v[1]).unwrap() }
    );
    case!(
        "scale",
        [rand_tensor(&mut r, &[3, 4], -1.0, 1.0)],
        |g, v| g.scale(v[0], -1.7).unwrap()
    );
    case!("relu", [away_from_zero(&mut r, &[4, 5])], |g, v| g
        .relu(v[0])
        .unwrap());
    case!("log", [rand_tensor(&mut r, &[3, 4], 0.5, 2.0)], |g, v| g
        .log(v[0])
        .unwrap());
    case!("exp", [rand_tensor(&mut r, &[3, 4], -1.0, 1.0)], |g, v| g
        .exp(v[0])
        .unwrap());
    case!("sum", [rand_tensor(&mut r, &[3, 4], -1.0, 1.0)], |g, v| g
        .sum(v[0])
        .unwrap());
    case!("mean", [rand_tensor(&mut r, &[3, 4], -1.0, 1.0)], |g, v| g
        .mean(v[0])
        .unwrap());
    case!(
        "concat_cols",
        [
            rand_tensor(&mut r, &[3, 2], -1.0, 1.0),
            rand_tensor(&mut r, &[3, 4], -1.0, 1.0)
        ],
        |g, v| { g.concat_cols(&[v[0], v[1]]).unwrap() }
    );
    case!(
        "gather_rows",
        [rand_tensor(&mut r, &[5, 3], -1.0, 1.0)],
        |g, v| { g.gather_rows(v[0], &[4, 0, 0, 2, 4, 1]).unwrap() }
    );
    case!(
        "reduce_max_groups",
        [rand_tensor(&mut r, &[8, 3], -1.0, 1.0)],
        |g, v| { g.reduce_max_groups(v[0], 4).unwrap() }
    );
    case!(
        "l2_normalize_rows",
        [rand_tensor(&mut r, &[4, 5], -1.0, 1.0)],
        |g, v| { g.l2_normalize_rows(v[0]).unwrap() }
    );
    case!(
        "masked_log_softmax",
        [rand_tensor(&mut r, &[4, 4], -2.0, 2.0)],
        |g, v| { g.masked_log_softmax(v[0]).unwrap() }
    );
    case!("pick", [rand_tensor(&mut r, &[4, 4], -1.0, 1.0)], |g, v| {
        g.pick(v[0], &[(0, 1), (1, 0), (2, 3), (3, 2), (2, 3)])
            .unwrap()
    });
    case!(
        "batch_norm",
        [
            rand_tensor(&mut r, &[6, 3], -1.0, 1.0),
            rand_tensor(&mut r, &[3], 0.5, 1.5),
            rand_tensor(&mut r, &[3], -0.5, 0.5)
        ],
        |g, v| g.batch_norm(v[0], v[1], v[2], 1e-5).unwrap().0
    );
    case!(
        "batch_norm_eval",
        [
            rand_tensor(&mut r, &[6, 3], -1.0, 1.0),
            rand_tensor(&mut r, &[3], 0.5, 1.5),
            rand_tensor(&mut r, &[3], -0.5, 0.5)
        ],
        |g, v| g
            .batch_norm_eval(v[0], v[1], v[2], &[0.1, -0.2, 0.3], &[0.5, 1.5, 2.0], 1e-5)
            .unwrap()
    );
    case!(
        "ntxent",
        [rand_tensor(&mut r, &[6, 4], -1.0, 1.0)],
        |g, v| {
            let z = g.l2_normalize_rows(v[0]).unwrap();
            ntxent_loss(g, z, 0.1).unwrap()
        }
    );
    cases
}

/// Small encoder: 16 peaks, two branches per stage, 8-d output.
pub fn reduced_spec() -> LayerSpec {
    LayerSpec {
        n_peaks: 16,
        sa1: StageSpec {
            n_anchors: 8,
            branches: vec![
                BranchSpec::new(2, 0.3, &[3, 4]),
                BranchSpec::new(4, 0.5, &[4, 4]),
            ],
        },
        sa2: StageSpec {
            n_anchors: 4,
            branches: vec![
                BranchSpec::new(2, 0.5, &[4, 4]),
                BranchSpec::new(4, 0.8, &[4, 5]),
            ],
        },
        global_mlp: vec![6, 8],
        ..LayerSpec::default()
    }
}

pub fn random_cloud(r: &mut ChaCha8Rng, n: usize) -> Vec<Peak> {
    (0..n)
        .map(|_| Peak::new(r.gen(), r.gen(), r.gen()))
        .collect()
}

/// Encoder (training-mode batch norm) followed by NT-Xent over two positive pairs, as a
/// function of every trainable tensor.
pub fn composite_error(seed: u64) -> f64 {
    let spec = reduced_spec();
    let params = ModelParams::<f64>::init(&spec, seed).unwrap();
    let mut r = rng(seed);
    let clouds: Vec<Vec<Peak>> = (0..4).map(|_| random_cloud(&mut r, spec.n_peaks)).collect();
    let plans: Vec<CloudPlan> = clouds
        .iter()
        .map(|c| CloudPlan::new(c, &spec).unwrap())
        .collect();
    let inputs: Vec<Tensor<f64>> = params.trainable().into_iter().cloned().collect();
    let f = move |g: &mut Graph<f64>, vars: &[Var]| {
        let mut p = params.clone();
        for (dst, &v) in p.trainable_mut().into_iter().zip(vars) {
            *dst = g.value(v).clone();
        }
        // rebind so the graph's leaves are exactly `vars`
        let bound = bind_over(g, &p, vars);
        let (z, _) = forward(g, &p, &bound, &plans, Mode::Train).unwrap();
        ntxent_loss(g, z, 0.5).unwrap()
    };
    // pre-batch-norm biases have an analytic gradient of exactly zero, so a floor well above
    // the ~1e-10 difference noise keeps those entries from dominating
    fd_check(&inputs, &f, 1e-5, 1e-4)
}

/// Layer variables pointing at existing leaves, in `ModelParams::trainable` order.
fn bind_over(
    g: &mut Graph<f64>,
    p: &ModelParams<f64>,
    vars: &[Var],
) -> Vec<peaknetfp::encoder::LayerVars> {
    let template = bind(g, p, false);
    let mut it = vars.iter().copied();
    template
        .into_iter()
        .map(|mut lv| {
            lv.weight = it.next().unwrap();
            if lv.feat_weight.is_some() {
                lv.feat_weight = it.next();
            }
            lv.bias = it.next().unwrap();
            lv.gamma = it.next().unwrap();
            lv.beta = it.next().unwrap();
            lv
        })
        .collect()
}

pub fn criterion_gradients() -> Verdict {
    let t0 = Instant::now();
    let mut worst_prim: f64 = 0.0;
    let mut worst_name = "";
    for (name, inputs, f) in primitive_cases(1) {
        let e = fd_check(&inputs, f.as_ref(), 1e-6, 1e-6);
        if e > worst_prim {
            worst_prim = e;
            worst_name = name;
        }
    }
    let composite = composite_error(3);
    let secs = t0.elapsed().as_secs_f64();
    Verdict::new(
        worst_prim < 1e-5 && composite < 1e-4 && secs < 60.0,
        format!("primitives max rel err {worst_prim:.2e} ({worst_name}), composite {composite:.2e}, {secs:.1}s"),
    )
}

// ---------------------------------------------------------------------------------------------
// NT-Xent

/// Double loop over anchors and candidates, straight from the definition.
pub fn naive_ntxent(z: &[Vec<f32>], tau: f64) -> f64 {
    let n = z.len();
    let s = |i: usize, j: usize| -> f64 {
        z[i].iter()
            .zip(&z[j])
            .map(|(a, b)| *a as f64 * *b as f64)
            .sum()
    };
    let mut total = 0.0;
    for i in 0..n {
        let j = if i % 2 == 0 { i + 1 } else { i - 1 };
        let num = (s(i, j) / tau).exp();
        let mut den = 0.0;
        for k in 0..n {
            if k != i {
                den += (s(i, k) / tau).exp();
            }
        }
        total += -(num / den).ln();
    }
    total / n as f64
}

pub fn unit_rows(r: &mut ChaCha8Rng, n: usize, d: usize) -> Vec<Vec<f32>> {
    (0..n)
        .map(|_| {
            let v: Vec<f32> = (0..d).map(|_| r.gen_range(-1.0f32..1.0)).collect();
            let norm = v.iter().map(|x| x * x).sum::<f32>().sqrt();
            v.into_iter().map(|x| x / norm).collect()
        })
        .collect()
}

pub fn criterion_ntxent() -> Verdict {
    let mut r = rng(2);
    let mut worst: f64 = 0.0;
    for b in 0..100 {
        let pairs = r.gen_range(2..=8);
        let tau = [0.05, 0.1, 1.0][b % 3];
        let z = unit_rows(&mut r, 2 * pairs, 16);
        let got = ntxent_value(&z, tau).unwrap();
        worst = worst.max((got - naive_ntxent(&z, tau)).abs());
    }
    let e = |i: usize| {
        (0..4)
            .map(|k| if k == i { 1.0 } else { 0.0 })
            .collect::<Vec<f32>>()
    };
    let ortho = ntxent_value(&[e(0), e(0), e(1), e(1)], 1.0).unwrap();
    let expect = -(std::f64::consts::E / (std::f64::consts::E + 2.0)).ln();
    Verdict::new(
        worst <= 1e-6 && (ortho - expect).abs() <= 1e-12,
        format!(
            "max |diff| {worst:.2e} over 100 batches; orthogonal case {ortho:.6} vs {expect:.6}"
        ),
    )
}

// ---------------------------------------------------------------------------------------------
// peaks

/// Full scan for strict 3x3 maxima, full sort, normalization and cyclic padding.
pub fn brute_force_peaks(spec: &MelSpectrogram, n_peaks: usize) -> Vec<Peak> {
    let (nm, nf) = (spec.n_mels as i64, spec.n_frames as i64);
    let mut found: Vec<(f32, usize, usize)> = Vec::new();
    for m in 0..nm {
        for t in 0..nf {
            let v = spec.at(m as usize, t as usize);
            let neighbours = [
                (-1, -1),
                (-1, 0),
                (-1, 1),
                (0, -1),
                (0, 1),
                (1, -1),
                (1, 0),
                (1, 1),
            ];
            let strict = neighbours.iter().all(|(dm, dt)| {
                let (mm, tt) = (m + dm, t + dt);
                mm < 0 || tt < 0 || mm >= nm || tt >= nf || v > spec.at(mm as usize, tt as usize)
            });
            if strict {
                found.push((v, t as usize, m as usize));
            }
        }
    }
    // strongest first, then earlier, then lower
    found.sort_by(|x, y| {
        y.0.partial_cmp(&x.0)
            .unwrap()
            .then(x.1.cmp(&y.1))
            .then(x.2.cmp(&y.2))
    });
    found.truncate(n_peaks);
    if found.is_empty() {
        return vec![Peak::new(0.0, 0.0, 0.0); n_peaks];
    }
    let hi = found.iter().map(|p| p.0).fold(f32::MIN, f32::max);
    let lo = found.iter().map(|p| p.0).fold(f32::MAX, f32::min);
    let mut out: Vec<Peak> = found
        .iter()
        .map(|&(v, t, m)| {
            let a = if hi > lo { (v - lo) / (hi - lo) } else { 1.0 };
            Peak::new(t as f32 / nf as f32, m as f32 / nm as f32, a)
        })
        .collect();
    let k = out.len();
    for i in k..n_peaks {
        out.push(out[i % k]);
    }
    out.sort_by(|x, y| {
        y.a.partial_cmp(&x.a)
            .unwrap()
            .then(x.t.partial_cmp(&y.t).unwrap())
            .then(x.f.partial_cmp(&y.f).unwrap())
    });
    out
}

/// Random 256 x 32 matrix; `levels` > 0 quantizes values to force ties and plateaus.
pub fn random_spectrogram(r: &mut ChaCha8Rng, levels: u32) -> MelSpectrogram {
    let mut s = MelSpectrogram::zeros(256, 32, 256, 8000);
    for v in &mut s.values {
        *v = if levels == 0 {
            r.gen::<f32>()
        } else {
            r.gen_range(0..levels) as f32 * 0.25
        };
    }
    s
}

pub fn criterion_peaks() -> Verdict {
    let mut r = rng(3);
    let mut bad = 0;
    let mut min_found = usize::MAX;
    for i in 0..100 {
        // continuous, coarse (many ties) and near-flat (few maxima, padding) matrices
        let levels = [0, 4, 2][i % 3];
        let s = random_spectrogram(&mut r, levels);
        let got = extract_peaks(&s, 256);
        let want = brute_force_peaks(&s, 256);
        let bits = |p: &[Peak]| {
            p.iter()
                .flat_map(|q| q.coords().map(f32::to_bits))
                .collect::<Vec<_>>()
        };
        if bits(&got) != bits(&want) {
            bad += 1;
        }
        min_found = min_found.min(peaknetfp::signal::local_maxima(&s).len());
    }
    Verdict::new(
        bad == 0,
        format!("{bad}/100 mismatches (fewest maxima in a matrix: {min_found})"),
    )
}

// ---------------------------------------------------------------------------------------------
// query ball

/// All-pairs scan: in-radius points by (distance, t, f, a, index), padded with the nearest.
pub fn brute_force_ball(
    points: &[Peak],
    anchors: &[usize],
    radius: f32,
    g: usize,
    space: DistanceSpace,
) -> Vec<usize> {
    let mut out = Vec::new();
    for &a in anchors {
        let c = points[a];
        let mut inside: Vec<(f32, usize)> = Vec::new();
        for (i, p) in points.iter().enumerate() {
            let (dt, df, da) = (c.t - p.t, c.f - p.f, c.a - p.a);
            let d2 = match space {
                DistanceSpace::Tfa => dt * dt + df * df + da * da,
                DistanceSpace::Tf => dt * dt + df * df,
            };
            if d2 <= radius * radius {
                inside.push((d2, i));
            }
        }
        inside.sort_by(|x, y| {
            let (p, q) = (points[x.1], points[y.1]);
            x.0.partial_cmp(&y.0)
                .unwrap()
                .then(p.t.partial_cmp(&q.t).unwrap())
                .then(p.f.partial_cmp(&q.f).unwrap())
                .then(p.a.partial_cmp(&q.a).unwrap())
                .then(x.1.cmp(&y.1))
        });
        let mut grp: Vec<usize> = inside.iter().take(g).map(|x| x.1).collect();
        let pad = grp.first().copied().unwrap_or(a);
        while grp.len() < g {
            grp.push(pad);
        }
        out.extend(grp);
    }
    out
}

/// Peaks on the quantized grid a real cloud lives on, with duplicates from cyclic padding.
pub fn grid_cloud(r: &mut ChaCha8Rng, n: usize) -> Vec<Peak> {
    let distinct = r.gen_range(n / 4..=n);
    let base: Vec<Peak> = (0..distinct)
        .map(|_| {
            Peak::new(
                r.gen_range(0..32) as f32 / 32.0,
                r.gen_range(0..256) as f32 / 256.0,
                r.gen_range(0..64) as f32 / 63.0,
            )
        })
        .collect();
    let mut pts: Vec<Peak> = (0..n).map(|i| base[i % distinct]).collect();
    pts.shuffle(r);
    pts
}

pub fn criterion_ball() -> Verdict {
    let spec = LayerSpec::default();
    let mut r = rng(4);
    let mut bad = 0;
    let mut checks = 0;
    for i in 0..100 {
        let pts = if i % 2 == 0 {
            grid_cloud(&mut r, 256)
        } else {
            random_cloud(&mut r, 256)
        };
        let space = if i % 5 == 4 {
            DistanceSpace::Tf
        } else {
            DistanceSpace::Tfa
        };
        let anchors = sample_anchors(&pts, spec.sa1.n_anchors).unwrap();
        for b in spec.sa1.branches.iter().chain(&spec.sa2.branches) {
            checks += 1;
            if query_ball_group(&pts, &anchors, b.radius, b.group_size, space)
                != brute_force_ball(&pts, &anchors, b.radius, b.group_size, space)
            {
                bad += 1;
            }
        }
    }
    Verdict::new(
        bad == 0,
        format!("{bad}/{checks} (cloud, G, R) groupings differ"),
    )
}

// ---------------------------------------------------------------------------------------------
// encoder symmetry

pub fn criterion_symmetry() -> Verdict {
    let spec = LayerSpec::default();
    let params = ModelParams::<f32>::init(&spec, 5).unwrap();
    let count = params.param_count();
    let enc = Encoder::new(params);
    let mut r = rng(5);
    let mut pts = grid_cloud(&mut r, 256);
    let base = enc.embed_points(&[&pts]).unwrap().remove(0);
    let mut same = 0;
    for _ in 0..50 {
        pts.shuffle(&mut r);
        if enc.embed_points(&[&pts]).unwrap()[0].values == base.values {
            same += 1;
        }
    }
    let norm_err = (base.norm() - 1.0).abs();
    let dev = (count as f64 - 169_000.0) / 169_000.0;
    Verdict::new(
        same == 50 && norm_err <= 1e-5 && dev.abs() <= 0.05,
        format!(
            "{same}/50 permutations bit-identical, |norm-1| {norm_err:.1e}, {count} parameters ({:+.1}% vs 169k)",
            dev * 100.0
        ),
    )
}

// ---------------------------------------------------------------------------------------------
// quads

pub fn random_quad(r: &mut ChaCha8Rng) -> Quad {
    let p = |t: f64, f: f64| GridPeak {
        t,
        f,
        strength: 1.0,
    };
    let a = p(r.gen_range(0.0..1000.0), r.gen_range(0.0..256.0));
    let up: bool = r.gen();
    let (w, h) = (
        r.gen_range(1.0..64.0),
        r.gen_range(1.0..64.0) * if up { 1.0 } else { -1.0 },
    );
    let b = p(a.t + w, a.f + h);
    let mut inner = || {
        p(
            a.t + w * r.gen_range(0.01..0.99),
            a.f + h * r.gen_range(0.01..0.99),
        )
    };
    Quad::new(a, b, inner(), inner())
}

pub fn criterion_quads() -> Verdict {
    let mut r = rng(6);
    let mut worst: f64 = 0.0;
    for _ in 0..1000 {
        let q = random_quad(&mut r);
        let (st, sf) = (r.gen_range(0.5..=2.0), r.gen_range(0.5..=2.0));
        let (h0, h1) = (
            quad_hash(&q).unwrap(),
            quad_hash(&q.scaled(st, sf)).unwrap(),
        );
        for k in 0..4 {
            worst = worst.max((h0[k] - h1[k]).abs());
        }
    }
    let entries: Vec<QuadEntry> = (0..5000)
        .map(|i| QuadEntry::new(&random_quad(&mut r), i % 7).unwrap())
        .collect();
    let db = QuadDB::new(
        (0..7).map(|i| format!("t{i}")).collect(),
        entries.clone(),
        0.01,
    );
    let mut bad = 0;
    for i in 0..300 {
        let h = if i % 2 == 0 {
            entries[r.gen_range(0..entries.len())]
                .hash
                .map(|v| v + r.gen_range(-0.01..0.01))
        } else {
            [r.gen(), r.gen(), r.gen(), r.gen()]
        };
        let eps = [0.01, 0.03, 0.005][i % 3];
        let scan: Vec<u32> = (0..entries.len() as u32)
            .filter(|&j| (0..4).all(|k| (entries[j as usize].hash[k] - h[k]).abs() <= eps))
            .collect();
        if db.range(&h, eps) != scan {
            bad += 1;
        }
    }
    Verdict::new(
        worst <= 1e-9 && bad == 0,
        format!("max hash drift {worst:.1e} over 1000 quads; {bad}/300 range queries differ from a scan"),
    )
}

// ---------------------------------------------------------------------------------------------
// retrieval

pub fn unit_fps(r: &mut ChaCha8Rng, n: usize, d: usize) -> Vec<Fingerprint> {
    unit_rows(r, n, d)
        .into_iter()
        .map(|values| Fingerprint { values })
        .collect()
}

/// Full scan, descending score, lower row first on ties.
pub fn brute_force_topk(rows: &[Fingerprint], q: &[f32], k: usize) -> Vec<usize> {
    let mut all: Vec<(f32, usize)> = rows
        .iter()
        .enumerate()
        .map(|(i, r)| (dot(q, &r.values), i))
        .collect();
    all.sort_by(|x, y| y.0.partial_cmp(&x.0).unwrap().then(x.1.cmp(&y.1)));
    all.into_iter().take(k).map(|x| x.1).collect()
}

/// Query near a database row: `row + sigma * noise`, renormalized.
pub fn perturbed(r: &mut ChaCha8Rng, row: &[f32], sigma: f32) -> Vec<f32> {
    let v: Vec<f32> = row
        .iter()
        .map(|x| {
            // Box-Muller
            let (u1, u2): (f32, f32) = (r.gen_range(1e-7..1.0), r.gen());
            x + sigma * (-2.0 * u1.ln()).sqrt() * (std::f32::consts::TAU * u2).cos()
        })
        .collect();
    let n = v.iter().map(|x| x * x).sum::<f32>().sqrt();
    v.into_iter().map(|x| x / n).collect()
}

pub struct RetrievalNumbers {
    pub exact_bad: usize,
    pub degenerate_bad: usize,
    pub recall_near: f64,
    pub recall_random_overlap: f64,
}

pub fn retrieval_numbers() -> RetrievalNumbers {
    let mut r = rng(7);
    let mut exact_bad = 0;
    for _ in 0..100 {
        let rows = unit_fps(&mut r, 300, 32);
        let db = FingerprintDB::from_tracks(&[("a".into(), rows.clone())]).unwrap();
        let q = &unit_rows(&mut r, 1, 32)[0];
        let got: Vec<usize> = db
            .search_exact(q, 20)
            .unwrap()
            .iter()
            .map(|h| h.row)
            .collect();
        if got != brute_force_topk(&rows, q, 20) {
            exact_bad += 1;
        }
    }

    // one-dimensional sub-quantizers with a codeword per row reproduce every vector
    let mut degenerate_bad = 0;
    for inst in 0..10 {
        let rows = unit_fps(&mut r, 200, 128);
        let db = FingerprintDB::from_tracks(&[("a".into(), rows.clone())]).unwrap();
        let cfg = IvfPqConfig {
            n_list: Some(4),
            m: 128,
            seed: inst,
            ..IvfPqConfig::default()
        };
        let ix = IvfPqIndex::build(&db, &cfg).unwrap();
        for _ in 0..10 {
            let q = &unit_rows(&mut r, 1, 128)[0];
            let got: Vec<usize> = ix
                .search(q, 20, Some(ix.n_list))
                .unwrap()
                .iter()
                .map(|h| h.row)
                .collect();
            if got != brute_force_topk(&rows, q, 20) {
                degenerate_bad += 1;
            }
        }
    }

    let rows = unit_fps(&mut r, 10_000, 128);
    let db = FingerprintDB::from_tracks(&[("a".into(), rows.clone())]).unwrap();
    let ix = IvfPqIndex::build(&db, &IvfPqConfig::default()).unwrap();
    let (mut hit, mut overlap) = (0usize, 0usize);
    let n_q = 200;
    for _ in 0..n_q {
        let target = r.gen_range(0..rows.len());
        let q = perturbed(&mut r, &rows[target].values, 0.05);
        let truth = brute_force_topk(&rows, &q, 1)[0];
        let got: Vec<usize> = ix
            .search(&q, 20, None)
            .unwrap()
            .iter()
            .map(|h| h.row)
            .collect();
        hit += got.contains(&truth) as usize;

        let q = &unit_rows(&mut r, 1, 128)[0];
        let exact = brute_force_topk(&rows, q, 20);
        let approx: Vec<usize> = ix
            .search(q, 20, None)
            .unwrap()
            .iter()
            .map(|h| h.row)
            .collect();
        overlap += approx.iter().filter(|x| exact.contains(x)).count();
    }
    RetrievalNumbers {
        exact_bad,
        degenerate_bad,
        recall_near: hit as f64 / n_q as f64,
        recall_random_overlap: overlap as f64 / (20 * n_q) as f64,
    }
}

pub fn criterion_retrieval() -> Verdict {
    let n = retrieval_numbers();
    Verdict::new(
        n.exact_bad == 0 && n.degenerate_bad == 0 && n.recall_near >= 0.9,
        format!(
            "exact {}/100 differ; degenerate IVFPQ {}/100 rankings differ; recall@20 of the exact nearest {:.3} \
             (near-duplicate queries); top-20 overlap for structureless random queries {:.3} (informational)",
            n.exact_bad, n.degenerate_bad, n.recall_near, n.recall_random_overlap
        ),
    )
}

// ---------------------------------------------------------------------------------------------
// desk experiment

pub const DESK_EPOCHS: usize = 2;
pub const DESK_QUERIES: usize = 40;

pub struct DeskResult {
    pub train_secs: f64,
    pub hr: Vec<(System, f64, f64)>,
}

impl DeskResult {
    pub fn get(&self, sys: System, s: f64) -> f64 {
        self.hr
            .iter()
            .find(|x| x.0 == sys && x.1 == s)
            .map(|x| x.2)
            .unwrap()
    }
}

pub fn desk_experiment() -> DeskResult {
    let mut cfg = PipelineConfig::default();
    cfg.training.epochs = DESK_EPOCHS;
    cfg.training.checkpoint_every = 0;
    let clips = synth_corpus(&CorpusConfig::default());
    let set = TrainingSet::from_clips(
        &cfg.analyzer().unwrap(),
        &clips,
        cfg.segments,
        cfg.model.n_peaks,
    )
    .unwrap();
    let t0 = Instant::now();
    let out = train(&set, &cfg.model, &cfg.training, &TrainOptions::default()).unwrap();
    let train_secs = t0.elapsed().as_secs_f64();
    let id = model_id(&out.params);
    let fp = Fingerprinter::new(cfg.clone(), out.params).unwrap();
    let db = fp.build_db(&clips).unwrap();
    let qdb = build_quad_db(&cfg, &clips).unwrap();
    let art = Artifacts {
        config: &cfg,
        tracks: &clips,
        peaknet: Some((&fp, &db, None)),
        quad: Some(&qdb),
        checkpoint_id: Some(id),
    };
    let ec = EvalConfig {
        factors: vec![1.0, 0.9, 1.1, 0.5, 2.0],
        lengths: vec![10.0],
        n_queries: DESK_QUERIES,
        seed: 11,
        ..EvalConfig::default()
    };
    let report = run_sweep(&ec, &art).unwrap();
    DeskResult {
        train_secs,
        hr: report
            .cells
            .iter()
            .map(|c| (c.system, c.factor, c.hr_at_1))
            .collect(),
    }
}

pub fn criterion_desk() -> Verdict {
    let d = desk_experiment();
    let p = |s| d.get(System::Peaknetfp, s);
    let q = |s| d.get(System::Quadfp, s);
    let pass = d.train_secs <= 1800.0
        && p(1.0) == 1.0
        && p(0.9) >= 0.9
        && p(1.1) >= 0.9
        && p(0.5) > q(0.5)
        && p(2.0) > q(2.0);
    Verdict::new(
        pass,
        format!(
            "{:.0}s training; PeakNetFP HR@1 s=1 {:.3}, 0.9 {:.3}, 1.1 {:.3}, 0.5 {:.3}, 2 {:.3}; \
             QuadFP 0.5 {:.3}, 2 {:.3} (1 {:.3}, 0.9 {:.3}, 1.1 {:.3})",
            d.train_secs,
            p(1.0),
            p(0.9),
            p(1.1),
            p(0.5),
            p(2.0),
            q(0.5),
            q(2.0),
            q(1.0),
            q(0.9),
            q(1.1)
        ),
    )
}

// ---------------------------------------------------------------------------------------------
// determinism

pub fn peak_file_bytes(n_tracks: usize) -> Vec<u8> {
    let cfg = PipelineConfig::default();
    let analyzer = cfg.analyzer().unwrap();
    let corpus = CorpusConfig {
        n_tracks,
        duration_secs: 8.0,
        ..CorpusConfig::default()
    };
    let mut clouds = Vec::new();
    for (id, clip) in synth_corpus(&corpus) {
        clouds.extend(
            peaknetfp::signal::clip_to_clouds(&analyzer, &clip, &cfg.segments, 256, &id).unwrap(),
        );
    }
    let mut buf = Vec::new();
    peakfile::write_peaks(&mut buf, &clouds).unwrap();
    buf
}

/// `(epoch, step, loss bits, lr bits)` of the first ten steps.
pub fn first_log_records() -> Vec<(usize, usize, u64, u64)> {
    let mut cfg = PipelineConfig::default();
    cfg.training.epochs = 1;
    cfg.training.steps_per_epoch = Some(10);
    cfg.training.batch_pairs = 4;
    cfg.training.seed = 17;
    let corpus = CorpusConfig {
        n_tracks: 4,
        duration_secs: 6.0,
        ..CorpusConfig::default()
    };
    let clips = synth_corpus(&corpus);
    let set = TrainingSet::from_clips(&cfg.analyzer().unwrap(), &clips, cfg.segments, 256).unwrap();
    let out = train(&set, &cfg.model, &cfg.training, &TrainOptions::default()).unwrap();
    out.log
        .iter()
        .take(10)
        .map(|r| (r.epoch, r.step, r.loss.to_bits(), r.lr.to_bits()))
        .collect()
}

pub fn eval_report_bytes() -> Vec<u8> {
    let cfg = PipelineConfig::default();
    let corpus = CorpusConfig {
        n_tracks: 4,
        duration_secs: 12.0,
        ..CorpusConfig::default()
    };
    let clips = synth_corpus(&corpus);
    let params = ModelParams::init(&cfg.model, 21).unwrap();
    let id = model_id(&params);
    let fp = Fingerprinter::new(cfg.clone(), params).unwrap();
    let db = fp.build_db(&clips).unwrap();
    let qdb = build_quad_db(&cfg, &clips).unwrap();
    let art = Artifacts {
        config: &cfg,
        tracks: &clips,
        peaknet: Some((&fp, &db, None)),
        quad: Some(&qdb),
        checkpoint_id: Some(id),
    };
    let ec = EvalConfig {
        factors: vec![0.8, 1.25],
        lengths: vec![3.0],
        n_queries: 4,
        seed: 5,
        ..EvalConfig::default()
    };
    let mut buf = Vec::new();
    run_sweep(&ec, &art).unwrap().write_jsonl(&mut buf).unwrap();
    buf
}

pub fn criterion_determinism() -> Verdict {
    let peaks = peak_file_bytes(3) == peak_file_bytes(3);
    let (l1, l2) = (first_log_records(), first_log_records());
    let logs = l1 == l2 && l1.len() == 10;
    let reports = eval_report_bytes() == eval_report_bytes();
    Verdict::new(
        peaks && logs && reports,
        format!("peak files identical: {peaks}; first 10 log records identical: {logs}; reports identical: {reports}"),
    )
}
