//! Tape ops paired with input shapes, each checked as `sum(R * op)`.

use gatesid_core::diffkernel::{grad_check, GradCheckOptions, GradCheckReport, ParamStore, Tape, Tensor, Var};
use gatesid_core::rng::stream;
use gatesid_core::Result;
use rand::Rng as _;

pub const OP_TOLERANCE: f64 = 1e-4;

pub type Build = fn(&mut Tape, &[Var]) -> Result<Var>;

pub struct Case {
    pub name: &'static str,
    pub shapes: &'static [&'static [usize]],
    /// Keeps inputs away from kinks and poles.
    pub domain: fn(f64) -> f64,
    pub build: Build,
}

pub fn unbounded(x: f64) -> f64 {
    x
}

pub fn positive(x: f64) -> f64 {
    0.2 + x.abs()
}

pub fn off_kink(x: f64) -> f64 {
    if x.abs() < 0.05 {
        x.signum() * 0.05 + x
    } else {
        x
    }
}

pub fn cases() -> Vec<Case> {
    vec![
        Case { name: "add", shapes: &[&[3, 2], &[3, 2]], domain: unbounded, build: |t, v| t.add(v[0], v[1]) },
        Case { name: "sub", shapes: &[&[3, 2], &[3, 2]], domain: unbounded, build: |t, v| t.sub(v[0], v[1]) },
        Case { name: "mul", shapes: &[&[3, 2], &[3, 2]], domain: unbounded, build: |t, v| t.mul(v[0], v[1]) },
        Case { name: "add_bias", shapes: &[&[3, 2], &[2]], domain: unbounded, build: |t, v| t.add_bias(v[0], v[1]) },
        Case { name: "matmul", shapes: &[&[3, 4], &[4, 2]], domain: unbounded, build: |t, v| t.matmul(v[0], v[1]) },
        Case { name: "matmul_t", shapes: &[&[3, 4], &[2, 4]], domain: unbounded, build: |t, v| t.matmul_t(v[0], v[1]) },
        Case { name: "affine", shapes: &[&[2, 3]], domain: unbounded, build: |t, v| t.affine(v[0], -1.7, 0.3) },
        Case { name: "scale", shapes: &[&[2, 3]], domain: unbounded, build: |t, v| t.scale(v[0], 2.5) },
        Case {
            name: "mul_const",
            shapes: &[&[2, 2]],
            domain: unbounded,
            build: |t, v| t.mul_const(v[0], &Tensor::new(vec![2, 2], vec![1.0, -2.0, 0.5, 3.0]).unwrap()),
        },
        Case {
            name: "add_const",
            shapes: &[&[2, 2]],
            domain: unbounded,
            build: |t, v| {
                let x = t.add_const(v[0], &Tensor::new(vec![2, 2], vec![1.0, -2.0, 0.5, 3.0]).unwrap())?;
                t.mul(x, x)
            },
        },
        Case { name: "sigmoid", shapes: &[&[2, 3]], domain: unbounded, build: |t, v| t.sigmoid(v[0]) },
        Case { name: "relu", shapes: &[&[2, 3]], domain: off_kink, build: |t, v| t.relu(v[0]) },
        Case { name: "exp", shapes: &[&[2, 3]], domain: unbounded, build: |t, v| t.exp(v[0]) },
        Case { name: "log", shapes: &[&[2, 3]], domain: positive, build: |t, v| t.log(v[0]) },
        Case { name: "softmax_rows", shapes: &[&[3, 4]], domain: unbounded, build: |t, v| t.softmax_rows(v[0], None) },
        Case {
            name: "masked_softmax_rows",
            shapes: &[&[2, 3]],
            domain: unbounded,
            build: |t, v| t.softmax_rows(v[0], Some(&[true, false, true, true, true, false])),
        },
        Case { name: "log_softmax_rows", shapes: &[&[3, 4]], domain: unbounded, build: |t, v| t.log_softmax_rows(v[0]) },
        Case {
            name: "concat_cols",
            shapes: &[&[2, 3], &[2, 1]],
            domain: unbounded,
            build: |t, v| {
                let c = t.concat_cols(&[v[0], v[1], v[0]])?;
                t.mul(c, c)
            },
        },
        Case { name: "slice_cols", shapes: &[&[2, 5]], domain: unbounded, build: |t, v| t.slice_cols(v[0], 1, 3) },
        Case {
            name: "gather",
            shapes: &[&[4, 3]],
            domain: unbounded,
            build: |t, v| {
                let g = t.gather(v[0], &[Some(2), None, Some(2), Some(0)])?;
                t.mul(g, g)
            },
        },
        Case {
            name: "reshape",
            shapes: &[&[2, 6]],
            domain: unbounded,
            build: |t, v| {
                let r = t.reshape(v[0], &[3, 4])?;
                t.exp(r)
            },
        },
        Case {
            name: "sum",
            shapes: &[&[2, 3]],
            domain: unbounded,
            build: |t, v| {
                let s = t.sum(v[0])?;
                t.mul(s, s)
            },
        },
        Case {
            name: "mean",
            shapes: &[&[2, 3]],
            domain: unbounded,
            build: |t, v| {
                let s = t.mean(v[0])?;
                t.exp(s)
            },
        },
        Case { name: "scale_rows", shapes: &[&[3, 4], &[3, 1]], domain: unbounded, build: |t, v| t.scale_rows(v[0], v[1]) },
        Case {
            name: "batched_matvec",
            shapes: &[&[2, 3, 4], &[2, 4]],
            domain: unbounded,
            build: |t, v| t.batched_matvec(v[0], v[1]),
        },
        Case {
            name: "weighted_sum",
            shapes: &[&[2, 3], &[2, 3, 4]],
            domain: unbounded,
            build: |t, v| t.weighted_sum(v[0], v[1]),
        },
        Case { name: "normalize_rows", shapes: &[&[3, 4]], domain: positive, build: |t, v| t.normalize_rows(v[0]) },
        Case {
            name: "cosine_matrix",
            shapes: &[&[3, 4], &[2, 4]],
            domain: positive,
            build: |t, v| t.cosine_matrix(v[0], v[1]),
        },
        Case {
            name: "diag",
            shapes: &[&[3, 3]],
            domain: unbounded,
            build: |t, v| {
                let d = t.diag(v[0])?;
                t.mul(d, d)
            },
        },
        Case {
            name: "bce_with_logits",
            shapes: &[&[4, 1]],
            domain: unbounded,
            build: |t, v| t.bce_with_logits(v[0], &[1.0, 0.0, 0.0, 1.0]),
        },
        Case {
            name: "mse",
            shapes: &[&[2, 2]],
            domain: unbounded,
            build: |t, v| t.mse(v[0], &Tensor::new(vec![2, 2], vec![0.1, -0.3, 2.0, 0.0]).unwrap()),
        },
    ]
}

/// Checks `sum(R * op(inputs))` for a fixed random `R`, so no op is
/// checked only through an identity such as `sum(softmax) = 1`.
pub fn check_case(case: &Case, seed: u64) -> GradCheckReport {
    let mut rng = stream(seed, case.name);
    let mut store = ParamStore::new();
    let ids: Vec<_> = case
        .shapes
        .iter()
        .enumerate()
        .map(|(i, shape)| {
            let n: usize = shape.iter().product();
            let data = (0..n).map(|_| (case.domain)(rng.random_range(-1.5..1.5))).collect();
            store.add(format!("x{i}"), Tensor::new(shape.to_vec(), data).unwrap()).unwrap()
        })
        .collect();
    let weights_seed: u64 = rng.random();
    let build = case.build;
    grad_check(
        |tape, store| {
            let vars: Vec<Var> = ids.iter().map(|&id| tape.param(store, id)).collect();
            let out = build(tape, &vars)?;
            let shape = tape.value(out).shape().to_vec();
            let mut r = stream(weights_seed, "weights");
            let w: Vec<f64> = (0..tape.value(out).len()).map(|_| r.random_range(-1.0..1.0)).collect();
            let weighted = tape.mul_const(out, &Tensor::new(shape, w)?)?;
            tape.sum(weighted)
        },
        &mut store,
        OP_TOLERANCE,
        &GradCheckOptions::default(),
    )
    .unwrap()
}

