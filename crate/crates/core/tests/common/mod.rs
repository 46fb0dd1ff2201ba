#![allow(dead_code)]

use koopflow::koopman::KoopmanModel;
use koopflow::net::Mlp;
use koopflow::numlin::{matrix_exp, RealMatrix};
use koopflow::systems::Trajectory;
use ndarray::Array2;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub const FD_STEP: f64 = 1e-5;

/// Central differences of `f` around `params`, one coordinate at a time.
pub fn fd_gradient(params: &[f64], f: impl Fn(&[f64]) -> f64) -> Vec<f64> {
    let mut p = params.to_vec();
    (0..p.len())
        .map(|i| {
            let orig = p[i];
            p[i] = orig + FD_STEP;
            let up = f(&p);
            p[i] = orig - FD_STEP;
            let down = f(&p);
            p[i] = orig;
            (up - down) / (2.0 * FD_STEP)
        })
        .collect()
}

/// `‖a − b‖ / max(‖a‖, ‖b‖)`, zero when both vanish.
pub fn rel_err(a: &[f64], b: &[f64]) -> f64 {
    let norm = |v: &[f64]| v.iter().map(|x| x * x).sum::<f64>().sqrt();
    let diff: Vec<f64> = a.iter().zip(b).map(|(x, y)| x - y).collect();
    let scale = norm(a).max(norm(b));
    if scale == 0.0 {
        0.0
    } else {
        norm(&diff) / scale
    }
}

/// Model n=2, d=4 with two hidden layers of width 8, a random `K` near the
/// identity and random trajectories of length `len`.
pub fn tiny_problem(seed: u64, len: usize, count: usize) -> (KoopmanModel, Vec<Trajectory>) {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut model = KoopmanModel::init(2, 4, &[8, 8], seed).unwrap();
    randomize_biases(&mut model.encoder, &mut rng);
    randomize_biases(&mut model.decoder, &mut rng);
    let k: Vec<f64> = (0..16)
        .map(|i| f64::from(u8::from(i % 5 == 0)) + rng.random_range(-0.3..0.3))
        .collect();
    model.k = RealMatrix::from_vec(4, 4, k).unwrap();
    let trajs = (0..count)
        .map(|_| {
            let states = Array2::from_shape_simple_fn((len, 2), || rng.random_range(-1.0..1.0));
            Trajectory::new(0.0, 0.1, states, vec![0.0, 0.0]).unwrap()
        })
        .collect();
    (model, trajs)
}

fn randomize_biases(net: &mut Mlp, rng: &mut ChaCha8Rng) {
    let mut flat = Vec::new();
    net.write_params(&mut flat);
    let mut pos = 0;
    for l in net.layers() {
        pos += l.w.len();
        for v in &mut flat[pos..pos + l.b.len()] {
            *v = rng.random_range(-0.2..0.2);
        }
        pos += l.b.len();
    }
    net.read_params(&flat).unwrap();
}

/// Smallest |pre-activation| over every encoder input row and every latent
/// vector any loss can decode (rollouts from each start and encodings).
pub fn min_preactivation(model: &KoopmanModel, trajs: &[Trajectory]) -> f64 {
    let mut min = f64::INFINITY;
    for t in trajs {
        min = min.min(model.encoder.min_abs_preactivation(t.states.view()));
        let z = model.encoder.forward_batch(t.states.view()).unwrap();
        min = min.min(model.decoder.min_abs_preactivation(z.view()));
        let kt = model.k.transpose().to_array();
        let mut roll = z.clone();
        for _ in 1..t.len() {
            roll = roll.dot(&kt);
            min = min.min(model.decoder.min_abs_preactivation(roll.view()));
        }
    }
    min
}

/// Observations on circles of radius 0.5..1 rotating by `theta` per sample.
pub fn rotation_data(count: usize, len: usize, theta: f64, dt: f64, seed: u64) -> Vec<Trajectory> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..count)
        .map(|_| {
            let r = rng.random_range(0.5..1.0);
            let phase = rng.random_range(-std::f64::consts::PI..std::f64::consts::PI);
            let states = Array2::from_shape_fn((len, 2), |(k, j)| {
                let a = phase + theta * k as f64;
                r * if j == 0 { a.cos() } else { a.sin() }
            });
            Trajectory::new(0.0, dt, states, vec![r * phase.cos(), r * phase.sin()]).unwrap()
        })
        .collect()
}

/// Random model with the given architecture and `K = exp(S)` for a random
/// skew `S`, so `K` is orthogonal with a real logarithm.
pub fn random_model(n: usize, d: usize, hidden: &[usize], seed: u64) -> KoopmanModel {
    let mut m = KoopmanModel::init(n, d, hidden, seed).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0xabc);
    m.k = matrix_exp(&random_skew(d, 0.3, &mut rng), 1.0).unwrap();
    m
}

/// Skew-symmetric matrix with upper entries uniform in `(-scale, scale)`.
pub fn random_skew(d: usize, scale: f64, rng: &mut ChaCha8Rng) -> RealMatrix {
    let mut s = Array2::zeros((d, d));
    for i in 0..d {
        for j in i + 1..d {
            let v = rng.random_range(-scale..scale);
            s[[i, j]] = v;
            s[[j, i]] = -v;
        }
    }
    RealMatrix::from_array(&s)
}

/// Orthogonal matrix from Gram–Schmidt on a uniform random matrix.
pub fn random_orthogonal(d: usize, rng: &mut ChaCha8Rng) -> RealMatrix {
    let mut a: Array2<f64> = Array2::from_shape_simple_fn((d, d), || rng.random_range(-1.0..1.0));
    for j in 0..d {
        for i in 0..j {
            let dot = a.column(i).dot(&a.column(j));
            let ci = a.column(i).to_owned();
            let mut cj = a.column_mut(j);
            cj.scaled_add(-dot, &ci);
        }
        let norm: f64 = a.column(j).dot(&a.column(j));
        let norm = norm.sqrt();
        a.column_mut(j).mapv_inplace(|v| v / norm);
    }
    RealMatrix::from_array(&a)
}
