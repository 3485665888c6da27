//! Helpers shared by the integration tests.
#![allow(dead_code)]

use std::collections::{BTreeSet, HashMap, HashSet};

use bttrack_core::moteval::{group_by_frame, MotFrames, MotRecord};
use bttrack_core::tensor::{grad_check, Bound, ParamStore};
use bttrack_core::tracker::iou;
use bttrack_core::{Error, Graph, Tensor, Var};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

pub const EPS: f64 = 1e-5;

/// Run `f` on a graph where every store tensor plus `input` is a free
/// variable, and return the grad-check error of `sum(probe ⊙ f)`. Returns
/// `None` when some relu input lies too close to zero for central
/// differences to be meaningful, or some gradient entry is so small that
/// the relative error only measures rounding noise.
pub fn check_block(
    store: &ParamStore,
    input: Tensor,
    seed: u64,
    f: impl Fn(&mut Graph, &Bound, Var) -> Result<Var, Error>,
) -> Option<f64> {
    check_inputs(store, vec![input], seed, |g, p, x| f(g, p, x[0]))
}

/// [`check_block`] with several free inputs after the store tensors.
pub fn check_inputs(
    store: &ParamStore,
    inputs: Vec<Tensor>,
    seed: u64,
    f: impl Fn(&mut Graph, &Bound, &[Var]) -> Result<Var, Error>,
) -> Option<f64> {
    let mut params = store.tensors().to_vec();
    params.extend(inputs);
    let n = store.len();
    let objective = |g: &mut Graph, v: &[Var]| {
        let p = Bound::from_vars(&v[..n]);
        let y = f(g, &p, &v[n..])?;
        let probe = Tensor::randn(&mut rng(seed ^ 0x5eed), g.shape(y), 1.0)?;
        let probe = g.constant(probe);
        let y = g.mul(y, probe)?;
        Ok(g.sum(y))
    };
    let mut g = Graph::new();
    let vars: Vec<Var> = params.iter().map(|t| g.param(t.clone())).collect();
    let out = objective(&mut g, &vars).unwrap();
    if g.kink_margin() < 100.0 * EPS {
        return None;
    }
    g.backward(out).unwrap();
    let tiny = vars
        .iter()
        .filter_map(|&v| g.grad(v))
        .flat_map(|t| t.data().to_vec())
        .any(|d| d != 0.0 && d.abs() < 1e-6);
    if tiny {
        return None;
    }
    Some(grad_check(objective, &params, EPS).unwrap())
}

/// Grad-check error for the first draw of `seed` that keeps clear of relu kinks.
pub fn smooth_check(seed: u64, attempt: impl Fn(u64) -> Option<f64>) -> f64 {
    (0..20)
        .find_map(|k| attempt(seed + 1000 * k))
        .expect("no kink-free draw in 20 attempts")
}


pub fn rnd(seed: u64, shape: &[usize]) -> Tensor {
    Tensor::randn(&mut rng(seed), shape, 1.0).unwrap()
}

/// Weighted sum against a fixed random tensor, so every output entry gets a
/// distinct upstream gradient.
pub fn probe(g: &mut Graph, y: Var, seed: u64) -> Result<Var, Error> {
    let shape = g.shape(y).to_vec();
    let w = g.constant(rnd(seed ^ 0xabcdef, &shape));
    let p = g.mul(y, w)?;
    Ok(g.sum(p))
}

type OpFn = Box<dyn Fn(&mut Graph, &[Var]) -> Result<Var, Error>>;

/// One differentiable tape operation with random inputs.
pub struct OpCase {
    pub name: &'static str,
    pub inputs: Vec<Tensor>,
    pub f: OpFn,
}

fn case(name: &'static str, inputs: Vec<Tensor>, f: impl Fn(&mut Graph, &[Var]) -> Result<Var, Error> + 'static) -> OpCase {
    OpCase {
        name,
        inputs,
        f: Box::new(f),
    }
}

/// Every differentiable operation of the tape.
pub fn op_cases(seed: u64) -> Vec<OpCase> {
    let s = seed * 10;
    let m = |k: u64| rnd(s + k, &[3, 5]);
    let p = |k: u64| rnd(s + k, &[2, 4]);
    vec![
        case("neg", vec![m(0)], |g, v| Ok(g.neg(v[0]))),
        case("scale", vec![m(0)], |g, v| Ok(g.scale(v[0], -1.7))),
        case("add_scalar", vec![m(0)], |g, v| Ok(g.add_scalar(v[0], 0.3))),
        case("abs", vec![m(0)], |g, v| Ok(g.abs(v[0]))),
        case("relu", vec![m(0)], |g, v| Ok(g.relu(v[0]))),
        case("sigmoid", vec![m(0)], |g, v| Ok(g.sigmoid(v[0]))),
        case("exp", vec![m(0)], |g, v| Ok(g.exp(v[0]))),
        case("log", vec![m(0)], |g, v| {
            let a = g.abs(v[0]);
            let a = g.add_scalar(a, 0.5);
            Ok(g.log(a))
        }),
        case("sin", vec![m(0)], |g, v| Ok(g.sin(v[0]))),
        case("cos", vec![m(0)], |g, v| Ok(g.cos(v[0]))),
        case("softmax_rows", vec![m(0)], |g, v| Ok(g.softmax_rows(v[0]))),
        case("log_softmax_rows", vec![m(0)], |g, v| Ok(g.log_softmax_rows(v[0]))),
        case("mean", vec![m(0)], |g, v| Ok(g.mean(v[0]))),
        case("sum", vec![m(0)], |g, v| Ok(g.sum(v[0]))),
        case("add", vec![p(0), p(1)], |g, v| g.add(v[0], v[1])),
        case("sub", vec![p(0), p(1)], |g, v| g.sub(v[0], v[1])),
        case("mul", vec![p(0), p(1)], |g, v| g.mul(v[0], v[1])),
        case("div", vec![p(0), p(1)], |g, v| {
            let e = g.exp(v[1]);
            g.div(v[0], e)
        }),
        case("maximum", vec![p(0), p(1)], |g, v| g.maximum(v[0], v[1])),
        case("minimum", vec![p(0), p(1)], |g, v| g.minimum(v[0], v[1])),
        case("concat", vec![p(0), p(1)], |g, v| g.concat(&[v[0], v[1]], 1)),
        case("matmul", vec![rnd(s, &[3, 4]), rnd(s + 1, &[4, 2])], |g, v| g.matmul(v[0], v[1])),
        case("bmm", vec![rnd(s, &[2, 3, 4]), rnd(s + 1, &[2, 4, 2])], |g, v| g.bmm(v[0], v[1])),
        case("linear", vec![rnd(s, &[2, 3, 4]), rnd(s + 1, &[4, 5]), rnd(s + 2, &[5])], |g, v| {
            g.linear(v[0], v[1], Some(v[2]))
        }),
        case("reshape", vec![rnd(s, &[2, 6])], |g, v| g.reshape(v[0], &[3, 4])),
        case("permute", vec![rnd(s, &[2, 3, 4])], |g, v| g.permute(v[0], &[2, 0, 1])),
        case("transpose_last", vec![rnd(s, &[2, 3, 4])], |g, v| g.transpose_last(v[0])),
        case("slice", vec![m(0)], |g, v| g.slice(v[0], 1, 1, 3)),
        case("index_rows", vec![rnd(s, &[4, 3])], |g, v| g.index_rows(v[0], &[2, 0, 2])),
        case("pick", vec![rnd(s, &[4, 3])], |g, v| g.pick(v[0], &[2, 0, 1, 1])),
        case("weighted_sum", vec![rnd(s, &[3, 4]), rnd(s + 1, &[3, 4])], |g, v| g.weighted_sum(v[0], v[1])),
        case("add_channel_bias", vec![rnd(s, &[2, 3, 2, 2]), rnd(s + 1, &[3])], |g, v| {
            g.add_channel_bias(v[0], v[1])
        }),
        case("layer_norm", vec![rnd(s, &[2, 3, 8]), rnd(s + 1, &[8]), rnd(s + 2, &[8])], |g, v| {
            g.layer_norm(v[0], v[1], v[2])
        }),
        case("conv2d", vec![rnd(s, &[1, 2, 5, 5]), rnd(s + 1, &[3, 2, 3, 3]), rnd(s + 2, &[3])], |g, v| {
            g.conv2d(v[0], v[1], Some(v[2]), 2, 1)
        }),
        case("conv2d_depthwise", vec![rnd(s, &[2, 4, 5, 5]), rnd(s + 1, &[4, 3, 3]), rnd(s + 2, &[4])], |g, v| {
            g.conv2d_depthwise(v[0], v[1], Some(v[2]))
        }),
        case("butterfly", vec![rnd(s, &[1, 8, 2, 3]), rnd(s + 1, &[3, 8, 2])], |g, v| g.butterfly(v[0], v[1])),
        case("max_pool2d", vec![rnd(s, &[1, 2, 5, 5])], |g, v| g.max_pool2d(v[0], 3, 2, 1)),
        case("adaptive_avg_pool2d", vec![rnd(s, &[1, 2, 5, 7])], |g, v| g.adaptive_avg_pool2d(v[0], 2, 3)),
    ]
}

/// Grad-check error of `sum(probe ⊙ op)` for every op, each on the first
/// draw of `seed` without near-zero gradient entries (see [`check_inputs`]).
pub fn op_errors(seed: u64) -> Vec<(&'static str, f64)> {
    let names: Vec<&str> = op_cases(seed).iter().map(|o| o.name).collect();
    names
        .into_iter()
        .map(|name| {
            let err = smooth_check(seed, |s| {
                let op = op_cases(s).into_iter().find(|o| o.name == name).expect("same catalog");
                let objective = |g: &mut Graph, v: &[Var]| {
                    let y = (op.f)(g, v)?;
                    probe(g, y, s)
                };
                let mut g = Graph::new();
                let vars: Vec<Var> = op.inputs.iter().map(|t| g.param(t.clone())).collect();
                let out = objective(&mut g, &vars).unwrap();
                g.backward(out).unwrap();
                let tiny = vars
                    .iter()
                    .filter_map(|&v| g.grad(v))
                    .any(|t| t.data().iter().any(|&d| d != 0.0 && d.abs() < 1e-6));
                (!tiny).then(|| grad_check(objective, &op.inputs, EPS).unwrap())
            });
            (name, err)
        })
        .collect()
}

/// Minimum total over all assignments of the zero-padded square matrix, ties
/// broken by the lexicographically smallest row → column vector. Returns the
/// total and the pairs that fall inside the original matrix.
pub fn brute_force_assignment(cost: &[Vec<f64>]) -> (f64, Vec<(usize, usize)>) {
    let rows = cost.len();
    let cols = cost.first().map_or(0, Vec::len);
    let n = rows.max(cols);
    let c = |i: usize, j: usize| if i < rows && j < cols { cost[i][j] } else { 0.0 };
    let mut best: Option<(f64, Vec<usize>)> = None;
    let mut perm: Vec<usize> = (0..n).collect();
    permute(&mut perm, 0, &mut |p| {
        let total: f64 = (0..n).map(|i| c(i, p[i])).sum();
        let better = match &best {
            None => true,
            Some((bt, bp)) => total < *bt - 1e-9 || ((total - *bt).abs() <= 1e-9 && p < &bp[..]),
        };
        if better {
            best = Some((total, p.to_vec()));
        }
    });
    let (total, p) = best.unwrap_or((0.0, Vec::new()));
    let pairs = (0..rows).filter(|&i| p[i] < cols).map(|i| (i, p[i])).collect();
    (total, pairs)
}

fn permute(p: &mut Vec<usize>, k: usize, visit: &mut impl FnMut(&[usize])) {
    if k == p.len() {
        visit(p);
        return;
    }
    for i in k..p.len() {
        p.swap(k, i);
        permute(p, k + 1, visit);
        p.swap(k, i);
    }
}

pub fn random_cost(seed: u64, max: usize) -> Vec<Vec<f64>> {
    use rand::Rng;
    let mut r = rng(seed);
    let (rows, cols) = (r.random_range(1..=max), r.random_range(1..=max));
    (0..rows).map(|_| (0..cols).map(|_| r.random_range(-5.0..5.0)).collect()).collect()
}

/// Reference CLEAR-MOT evaluator: carry over continuing pairs, then
/// enumerate every partial matching of the rest and keep the one with the
/// largest total IoU. Returns `(fp, fn, ids, matches)` per frame.
pub fn reference_clear_mot(gt: &MotFrames, pred: &MotFrames, thr: f64) -> Vec<(u64, u64, u64, u64)> {
    let frames: BTreeSet<u64> = gt.keys().chain(pred.keys()).copied().collect();
    let empty = Vec::new();
    let mut last: HashMap<i64, i64> = HashMap::new();
    let mut out = Vec::new();
    for f in frames {
        let g = gt.get(&f).unwrap_or(&empty);
        let p = pred.get(&f).unwrap_or(&empty);
        let ov = |i: usize, j: usize| iou(&g[i].bbox(), &p[j].bbox());
        let mut taken = vec![false; p.len()];
        let mut pairs = Vec::new();
        let mut free = Vec::new();
        for i in 0..g.len() {
            let carried = last
                .get(&g[i].id)
                .and_then(|pid| p.iter().position(|r| r.id == *pid))
                .filter(|&j| !taken[j] && ov(i, j) >= thr);
            match carried {
                Some(j) => {
                    taken[j] = true;
                    pairs.push((i, j));
                }
                None => free.push(i),
            }
        }
        let mut best = (0.0, Vec::new());
        search(&free, 0, &mut taken, &mut Vec::new(), 0.0, &mut best, &|i, j| {
            let v = ov(i, j);
            (v >= thr).then_some(v)
        });
        let mut ids = 0;
        for &(i, j) in &best.1 {
            if last.get(&g[i].id).is_some_and(|&prev| prev != p[j].id) {
                ids += 1;
            }
            pairs.push((i, j));
        }
        for &(i, j) in &pairs {
            last.insert(g[i].id, p[j].id);
        }
        let m = pairs.len() as u64;
        out.push((p.len() as u64 - m, g.len() as u64 - m, ids, m));
    }
    out
}

fn search(
    free: &[usize],
    k: usize,
    taken: &mut Vec<bool>,
    cur: &mut Vec<(usize, usize)>,
    total: f64,
    best: &mut (f64, Vec<(usize, usize)>),
    gain: &dyn Fn(usize, usize) -> Option<f64>,
) {
    if k == free.len() {
        if total > best.0 {
            *best = (total, cur.clone());
        }
        return;
    }
    search(free, k + 1, taken, cur, total, best, gain);
    for j in 0..taken.len() {
        if taken[j] {
            continue;
        }
        if let Some(v) = gain(free[k], j) {
            taken[j] = true;
            cur.push((free[k], j));
            search(free, k + 1, taken, cur, total + v, best, gain);
            cur.pop();
            taken[j] = false;
        }
    }
}

/// Up to five objects drifting over ten frames; predictions jitter, drop
/// out, swap ids and add clutter.
pub fn mot_scenario(seed: u64) -> (MotFrames, MotFrames) {
    use rand::Rng;
    let mut r = rng(seed);
    let rec = |f, id, x, y, w, h| MotRecord::new(f, id, x, y, w, h, 1.0);
    let n = r.random_range(1..=5);
    let mut objs: Vec<[f64; 4]> = (0..n)
        .map(|_| [r.random_range(0.0..80.0), r.random_range(0.0..80.0), r.random_range(8.0..20.0), r.random_range(8.0..20.0)])
        .collect();
    let mut pid: Vec<i64> = (0..n as i64).map(|k| 100 + k).collect();
    let (mut gt, mut pred) = (Vec::new(), Vec::new());
    for f in 1..=10u64 {
        for (k, o) in objs.iter_mut().enumerate() {
            o[0] += r.random_range(-3.0..3.0);
            o[1] += r.random_range(-3.0..3.0);
            if r.random_bool(0.9) {
                gt.push(rec(f, k as i64 + 1, o[0], o[1], o[2], o[3]));
            }
            if r.random_bool(0.1) {
                pid[k] = r.random_range(100..110);
            }
            if r.random_bool(0.8) {
                let j = r.random_range(-3.0..3.0);
                pred.push((f, pid[k], o[0] + j, o[1] - j, o[2] * r.random_range(0.8..1.2), o[3]));
            }
        }
        for _ in 0..r.random_range(0..2) {
            pred.push((f, r.random_range(100..110), r.random_range(0.0..80.0), r.random_range(0.0..80.0), 10.0, 10.0));
        }
    }
    // Predicted ids must stay unique within a frame.
    let mut seen = HashSet::new();
    let pred = pred
        .into_iter()
        .filter(|p| seen.insert((p.0, p.1)))
        .map(|(f, id, x, y, w, h)| rec(f, id, x, y, w, h));
    (group_by_frame(gt), group_by_frame(pred))
}
