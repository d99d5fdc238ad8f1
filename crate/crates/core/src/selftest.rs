//! Quick in-process oracle checks behind the `selftest` subcommand. Each check compares a
//! production routine against a direct scan on small random inputs.

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::autodiff::{Graph, Tensor};
use crate::encoder::{
    query_ball_group, DistanceSpace, Encoder, Fingerprint, LayerSpec, ModelParams,
};
use crate::index::{dot, FingerprintDB};
use crate::quadfp::{quad_hash, GridPeak, Quad};
use crate::signal::{local_maxima, MelSpectrogram, Peak};
use crate::training::{ntxent_loss, ntxent_value};

pub struct CheckResult {
    pub name: &'static str,
    pub outcome: std::result::Result<(), String>,
}

type Check = fn(&mut ChaCha8Rng) -> std::result::Result<(), String>;

const CHECKS: [(&str, Check); 7] = [
    ("peak extraction", check_peaks),
    ("query ball", check_ball),
    ("nt-xent", check_ntxent),
    ("gradients", check_gradients),
    ("quad hash", check_quads),
    ("exact search", check_mips),
    ("encoder symmetry", check_encoder),
];

pub fn run(seed: u64) -> Vec<CheckResult> {
    CHECKS
        .iter()
        .map(|&(name, f)| {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            CheckResult {
                name,
                outcome: f(&mut rng),
            }
        })
        .collect()
}

fn ensure(ok: bool, msg: impl FnOnce() -> String) -> std::result::Result<(), String> {
    if ok {
        Ok(())
    } else {
        Err(msg())
    }
}

fn check_peaks(rng: &mut ChaCha8Rng) -> std::result::Result<(), String> {
    for case in 0..20 {
        let (n_mels, n_frames) = (256, 32);
        let mut spec = MelSpectrogram::zeros(n_mels, n_frames, 256, 8000);
        for v in &mut spec.values {
            *v = rng.gen_range(0..6) as f32;
        }
        let mut expect = Vec::new();
        for m in 0..n_mels as i64 {
            for t in 0..n_frames as i64 {
                let v = spec.at(m as usize, t as usize);
                let mut strict = true;
                for dm in -1..=1i64 {
                    for dt in -1..=1i64 {
                        let (mm, tt) = (m + dm, t + dt);
                        if (dm, dt) == (0, 0)
                            || mm < 0
                            || tt < 0
                            || mm >= n_mels as i64
                            || tt >= n_frames as i64
                        {
                            continue;
                        }
                        strict &= v > spec.at(mm as usize, tt as usize);
                    }
                }
                if strict {
                    expect.push((m as usize, t as usize));
                }
            }
        }
        let mut got: Vec<_> = local_maxima(&spec)
            .iter()
            .map(|p| (p.mel, p.frame))
            .collect();
        got.sort_unstable();
        ensure(got == expect, || {
            format!(
                "case {case}: {} maxima, scan found {}",
                got.len(),
                expect.len()
            )
        })?;
    }
    Ok(())
}

fn random_cloud(rng: &mut ChaCha8Rng, n: usize) -> Vec<Peak> {
    (0..n)
        .map(|_| {
            Peak::new(
                rng.gen_range(0..32) as f32 / 32.0,
                rng.gen_range(0..256) as f32 / 256.0,
                rng.gen(),
            )
        })
        .collect()
}

fn check_ball(rng: &mut ChaCha8Rng) -> std::result::Result<(), String> {
    let spec = LayerSpec::default();
    let settings: Vec<(usize, f32)> = spec
        .sa1
        .branches
        .iter()
        .chain(&spec.sa2.branches)
        .map(|b| (b.group_size, b.radius))
        .collect();
    for case in 0..20 {
        let pts = random_cloud(rng, 256);
        let anchors: Vec<usize> = (0..16).map(|_| rng.gen_range(0..pts.len())).collect();
        for &(g, r) in &settings {
            let got = query_ball_group(&pts, &anchors, r, g, DistanceSpace::Tfa);
            let mut expect = Vec::new();
            for &a in &anchors {
                let mut all: Vec<(f32, usize)> = Vec::new();
                for (i, p) in pts.iter().enumerate() {
                    let (dt, df, da) = (pts[a].t - p.t, pts[a].f - p.f, pts[a].a - p.a);
                    let d2 = dt * dt + df * df + da * da;
                    if d2 <= r * r {
                        all.push((d2, i));
                    }
                }
                all.sort_by(|x, y| {
                    let (p, q) = (&pts[x.1], &pts[y.1]);
                    x.0.total_cmp(&y.0)
                        .then(p.t.total_cmp(&q.t))
                        .then(p.f.total_cmp(&q.f))
                        .then(p.a.total_cmp(&q.a))
                        .then(x.1.cmp(&y.1))
                });
                let mut grp: Vec<usize> = all.iter().take(g).map(|x| x.1).collect();
                let fill = grp.first().copied().unwrap_or(a);
                grp.resize(g, fill);
                expect.extend(grp);
            }
            ensure(got == expect, || {
                format!("case {case}: G={g} R={r} groups differ")
            })?;
        }
    }
    Ok(())
}

fn unit_rows(rng: &mut ChaCha8Rng, n: usize, d: usize) -> Vec<Vec<f32>> {
    (0..n)
        .map(|_| {
            let v: Vec<f32> = (0..d).map(|_| rng.gen_range(-1.0..1.0)).collect();
            let norm = v.iter().map(|x| x * x).sum::<f32>().sqrt();
            v.iter().map(|x| x / norm).collect()
        })
        .collect()
}

/// Direct double loop over all anchors and their candidates.
pub fn naive_ntxent(z: &[Vec<f32>], tau: f64) -> f64 {
    let n = z.len();
    let sim = |i: usize, j: usize| {
        z[i].iter()
            .zip(&z[j])
            .map(|(a, b)| *a as f64 * *b as f64)
            .sum::<f64>()
            / tau
    };
    let mut total = 0.0;
    for i in 0..n {
        let pos = i ^ 1;
        let mut denom = 0.0;
        for k in 0..n {
            if k != i {
                denom += sim(i, k).exp();
            }
        }
        total -= (sim(i, pos).exp() / denom).ln();
    }
    total / n as f64
}

fn check_ntxent(rng: &mut ChaCha8Rng) -> std::result::Result<(), String> {
    for case in 0..20 {
        let pairs = rng.gen_range(2..=8);
        let tau = [0.05, 0.1, 1.0][case % 3];
        let z = unit_rows(rng, 2 * pairs, 16);
        let (got, want) = (
            ntxent_value(&z, tau).map_err(|e| e.to_string())?,
            naive_ntxent(&z, tau),
        );
        ensure((got - want).abs() <= 1e-6 * want.abs().max(1.0), || {
            format!("case {case}: {got} vs {want}")
        })?;
    }
    Ok(())
}

fn check_gradients(rng: &mut ChaCha8Rng) -> std::result::Result<(), String> {
    let x: Vec<f64> = (0..8 * 5).map(|_| rng.gen_range(-1.0..1.0)).collect();
    let w0: Vec<f64> = (0..5 * 4).map(|_| rng.gen_range(-1.0..1.0)).collect();
    let loss = |w: &[f64]| -> crate::Result<(f64, Vec<f64>)> {
        let mut g = Graph::<f64>::new();
        let xv = g.constant(Tensor::matrix(8, 5, x.clone())?);
        let wv = g.param(Tensor::matrix(5, 4, w.to_vec())?);
        let h = g.matmul(xv, wv)?;
        let h = g.relu(h)?;
        let z = g.l2_normalize_rows(h)?;
        let l = ntxent_loss(&mut g, z, 0.5)?;
        let grads = g.backward(l)?;
        Ok((
            g.value(l).item(),
            grads.get(wv).map(|t| t.data().to_vec()).unwrap_or_default(),
        ))
    };
    let (_, analytic) = loss(&w0).map_err(|e| e.to_string())?;
    let h = 1e-6;
    for i in 0..w0.len() {
        let (mut up, mut dn) = (w0.clone(), w0.clone());
        up[i] += h;
        dn[i] -= h;
        let fu = loss(&up).map_err(|e| e.to_string())?.0;
        let fd = loss(&dn).map_err(|e| e.to_string())?.0;
        let numeric = (fu - fd) / (2.0 * h);
        let err = (numeric - analytic[i]).abs() / numeric.abs().max(analytic[i].abs()).max(1e-4);
        ensure(err < 1e-4, || {
            format!("weight {i}: analytic {} vs numeric {numeric}", analytic[i])
        })?;
    }
    Ok(())
}

fn check_quads(rng: &mut ChaCha8Rng) -> std::result::Result<(), String> {
    for case in 0..200 {
        let a = GridPeak {
            t: rng.gen_range(0.0..100.0),
            f: rng.gen_range(0.0..256.0),
            strength: 1.0,
        };
        let b = GridPeak {
            t: a.t + rng.gen_range(1.0..64.0),
            f: a.f + rng.gen_range(1.0..50.0),
            strength: 1.0,
        };
        let mut inner = || GridPeak {
            t: rng.gen_range(a.t..b.t),
            f: rng.gen_range(a.f..b.f),
            strength: 1.0,
        };
        let q = Quad::new(a, b, inner(), inner());
        let (st, sf) = (rng.gen_range(0.5..2.0), rng.gen_range(0.5..2.0));
        let h0 = quad_hash(&q).map_err(|e| e.to_string())?;
        let h1 = quad_hash(&q.scaled(st, sf)).map_err(|e| e.to_string())?;
        let worst = h0
            .iter()
            .zip(&h1)
            .map(|(x, y)| (x - y).abs())
            .fold(0.0, f64::max);
        ensure(worst <= 1e-9, || {
            format!("case {case}: hash moved by {worst}")
        })?;
    }
    Ok(())
}

fn check_mips(rng: &mut ChaCha8Rng) -> std::result::Result<(), String> {
    for case in 0..20 {
        let rows = unit_rows(rng, 200, 32);
        let fps: Vec<Fingerprint> = rows
            .iter()
            .map(|v| Fingerprint { values: v.clone() })
            .collect();
        let db = FingerprintDB::from_tracks(&[("t".into(), fps)]).map_err(|e| e.to_string())?;
        let q = &unit_rows(rng, 1, 32)[0];
        let mut all: Vec<(f32, usize)> = rows
            .iter()
            .enumerate()
            .map(|(i, r)| (dot(q, r), i))
            .collect();
        all.sort_by(|x, y| y.0.total_cmp(&x.0).then(x.1.cmp(&y.1)));
        let got: Vec<usize> = db
            .search_exact(q, 10)
            .map_err(|e| e.to_string())?
            .iter()
            .map(|h| h.row)
            .collect();
        let want: Vec<usize> = all[..10].iter().map(|x| x.1).collect();
        ensure(got == want, || format!("case {case}: ranking differs"))?;
    }
    Ok(())
}

fn check_encoder(rng: &mut ChaCha8Rng) -> std::result::Result<(), String> {
    let spec = LayerSpec::default();
    let enc = Encoder::new(ModelParams::init(&spec, 7).map_err(|e| e.to_string())?);
    let mut pts = random_cloud(rng, spec.n_peaks);
    let base = enc
        .embed_points(&[&pts])
        .map_err(|e| e.to_string())?
        .remove(0);
    ensure((base.norm() - 1.0).abs() <= 1e-5, || {
        format!("norm {}", base.norm())
    })?;
    for _ in 0..3 {
        pts.shuffle(rng);
        let fp = enc
            .embed_points(&[&pts])
            .map_err(|e| e.to_string())?
            .remove(0);
        ensure(fp.values == base.values, || {
            "fingerprint changed under permutation".into()
        })?;
    }
    Ok(())
}
