#![allow(dead_code)]

use hpalf_tensor::check::difference_err;
use hpalf_tensor::{Bound, ParamStore, Tape, Tensor, Var};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

pub fn uniform(shape: &[usize], lo: f64, hi: f64, seed: u64) -> Tensor<f64> {
    let mut r = rng(seed);
    let n = shape.iter().product();
    let data: Vec<f64> = (0..n).map(|_| r.random_range(lo..hi)).collect();
    Tensor::from_vec(shape, data).unwrap()
}

pub fn set_param(store: &mut ParamStore<f64>, name: &str, f: impl Fn(usize, &mut f64)) {
    let id = store.id(name).unwrap();
    for (i, v) in store.get_mut(id).value.data_mut().iter_mut().enumerate() {
        f(i, v);
    }
}

pub fn param_values(store: &ParamStore<f64>, name: &str) -> Vec<f64> {
    store.by_name(name).unwrap().value.data().to_vec()
}

pub fn max_abs_diff(a: &[f64], b: &[f64]) -> f64 {
    assert_eq!(a.len(), b.len());
    a.iter().zip(b).map(|(x, y)| (x - y).abs()).fold(0.0, f64::max)
}

/// Worst relative error between the reverse-sweep parameter gradient of a
/// scalar functional and central differences over a random subset of
/// coordinates of every trainable tensor.
pub fn param_grad_check<M>(
    model: &mut M,
    store: fn(&mut M) -> &mut ParamStore<f64>,
    f: impl Fn(&mut M, &mut Tape<f64>, &Bound) -> Var,
    h: f64,
    coords_per_tensor: usize,
    seed: u64,
) -> (f64, String) {
    let eval = |model: &mut M| -> f64 {
        let mut tape = Tape::new();
        let p = tape.bind(store(model)).unwrap();
        let root = f(model, &mut tape, &p);
        tape.value(root).item()
    };
    let mut tape = Tape::new();
    let p = tape.bind(store(model)).unwrap();
    let root = f(model, &mut tape, &p);
    let grads = tape.backward(root).unwrap();
    store(model).zero_grad();
    tape.accumulate(&grads, store(model)).unwrap();

    let mut r = rng(seed);
    let mut worst = (0.0, String::new());
    let ids: Vec<_> = store(model)
        .iter()
        .filter(|(_, t)| t.requires_grad)
        .map(|(id, _)| id)
        .collect();
    for id in ids {
        let n = store(model).get(id).value.numel();
        for _ in 0..coords_per_tensor.min(n) {
            let c = r.random_range(0..n);
            let orig = store(model).get(id).value.data()[c];
            store(model).get_mut(id).value.data_mut()[c] = orig + h;
            let up = eval(model);
            store(model).get_mut(id).value.data_mut()[c] = orig - h;
            let down = eval(model);
            store(model).get_mut(id).value.data_mut()[c] = orig;
            let numeric = (up - down) / (2.0 * h);
            let pt = store(model).get(id);
            let analytic = pt.grad.as_ref().map_or(0.0, |g| g.data()[c]);
            let e = difference_err(analytic, up, down, h);
            if e > worst.0 || e.is_nan() {
                worst = (e, format!("{}[{c}]: analytic {analytic:e} numeric {numeric:e}", pt.name));
            }
        }
    }
    worst
}

/// `sum(x * r)` for a fixed random `r`.
pub fn projection(tape: &mut Tape<f64>, x: Var, seed: u64) -> Var {
    let r = uniform(tape.shape(x), -1.0, 1.0, seed);
    let r = tape.constant(r).unwrap();
    let m = tape.mul(x, r).unwrap();
    tape.sum(m).unwrap()
}
