use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rawnet::numerics::{
    grad_check, softmax, Activation, DualFcVars, GradCheckConfig, GruVars, NumericsError, Tape,
    Tensor,
};

const INSTANCES: u64 = 100;

fn rand_tensor(rng: &mut ChaCha8Rng, shape: &[usize], scale: f64) -> Tensor {
    let n: usize = shape.iter().product();
    Tensor::new(
        shape.to_vec(),
        (0..n).map(|_| rng.random_range(-scale..scale)).collect(),
    )
    .unwrap()
}

fn assert_close(a: &[f64], b: &[f64], tol: f64) {
    assert_eq!(a.len(), b.len());
    for (x, y) in a.iter().zip(b) {
        assert!((x - y).abs() <= tol, "{a:?} vs {b:?}");
    }
}

fn cfg(seed: u64) -> GradCheckConfig {
    GradCheckConfig {
        seed,
        ..GradCheckConfig::default()
    }
}

// ---------------------------------------------------------------- conv1d

#[test]
fn conv1d_identity_kernel_subsamples() {
    let mut tape = Tape::new();
    let x = tape.constant(Tensor::matrix(1, 4, vec![1.0, 2.0, 3.0, 4.0]).unwrap());
    let w = tape.constant(Tensor::new(vec![1, 1, 1], vec![1.0]).unwrap());
    let b = tape.constant(Tensor::vector(vec![0.0]));
    let y = tape.conv1d(x, w, b, 2).unwrap();
    assert_eq!(tape.value(y).data(), &[1.0, 3.0]);
}

#[test]
fn conv1d_box_filter() {
    let mut tape = Tape::new();
    let x = tape.constant(Tensor::matrix(1, 4, vec![1.0; 4]).unwrap());
    let w = tape.constant(Tensor::new(vec![1, 1, 2], vec![1.0, 1.0]).unwrap());
    let b = tape.constant(Tensor::vector(vec![0.0]));
    let y = tape.conv1d(x, w, b, 1).unwrap();
    assert_eq!(tape.value(y).data(), &[2.0, 2.0, 2.0]);
}

#[test]
fn conv1d_errors_name_the_problem() {
    let mut tape = Tape::new();
    let x = tape.constant(Tensor::matrix(2, 4, vec![0.0; 8]).unwrap());
    let w = tape.constant(Tensor::new(vec![1, 3, 2], vec![0.0; 6]).unwrap());
    let b = tape.constant(Tensor::vector(vec![0.0]));
    match tape.conv1d(x, w, b, 1) {
        Err(NumericsError::ShapeMismatch { what, .. }) => assert!(what.contains("channels")),
        other => panic!("unexpected {other:?}"),
    }
    let w = tape.constant(Tensor::new(vec![1, 2, 5], vec![0.0; 10]).unwrap());
    assert!(matches!(
        tape.conv1d(x, w, b, 1),
        Err(NumericsError::InputTooShort { len: 4, need: 5, .. })
    ));
    let b2 = tape.constant(Tensor::vector(vec![0.0, 0.0]));
    let w = tape.constant(Tensor::new(vec![1, 2, 2], vec![0.0; 4]).unwrap());
    assert!(matches!(
        tape.conv1d(x, w, b2, 1),
        Err(NumericsError::ShapeMismatch { what: "bias length", .. })
    ));
}

#[test]
fn conv1d_backward_identity_and_zero_seed() {
    let mut tape = Tape::new();
    let x = tape.param(Tensor::matrix(1, 5, vec![0.3, -1.0, 2.0, 0.5, 4.0]).unwrap());
    let w = tape.param(Tensor::new(vec![1, 1, 1], vec![1.0]).unwrap());
    let b = tape.param(Tensor::vector(vec![0.0]));
    let y = tape.conv1d(x, w, b, 1).unwrap();
    let seed = [1.0, 2.0, -1.0, 0.5, 3.0];
    tape.backward_with(y, &seed).unwrap();
    assert_eq!(tape.grad(x).unwrap(), &seed);

    tape.backward_with(y, &[0.0; 5]).unwrap();
    assert!(tape.grad(x).unwrap().iter().all(|&g| g == 0.0));
    assert!(tape.grad(w).unwrap().iter().all(|&g| g == 0.0));
    assert!(tape.grad(b).unwrap().iter().all(|&g| g == 0.0));
}

#[test]
fn conv1d_matches_finite_differences() {
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    for i in 0..INSTANCES {
        let c_in = rng.random_range(1..=3);
        let c_out = rng.random_range(1..=3);
        let k = rng.random_range(1..=4);
        let stride = rng.random_range(1..=3);
        let len = rng.random_range(k..=16);
        let inputs = [
            rand_tensor(&mut rng, &[c_in, len], 1.0),
            rand_tensor(&mut rng, &[c_out, c_in, k], 1.0),
            rand_tensor(&mut rng, &[c_out], 1.0),
        ];
        let r = grad_check("conv1d", &inputs, |t, v| t.conv1d(v[0], v[1], v[2], stride), &cfg(i)).unwrap();
        assert!(r.passed, "instance {i}: {r:?}");
    }
}

// --------------------------------------------------------------- maxpool

#[test]
fn maxpool_picks_window_max_and_first_tie() {
    let mut tape = Tape::new();
    let x = tape.param(Tensor::matrix(1, 4, vec![1.0, 3.0, 2.0, 4.0]).unwrap());
    let y = tape.maxpool1d(x, 2).unwrap();
    assert_eq!(tape.value(y).data(), &[3.0, 4.0]);

    let mut tape = Tape::new();
    let x = tape.param(Tensor::matrix(1, 2, vec![5.0, 5.0]).unwrap());
    let y = tape.maxpool1d(x, 2).unwrap();
    assert_eq!(tape.value(y).data(), &[5.0]);
    tape.backward(y).unwrap();
    assert_eq!(tape.grad(x).unwrap(), &[1.0, 0.0]);

    assert!(matches!(
        tape.maxpool1d(x, 3),
        Err(NumericsError::InputTooShort { .. })
    ));
}

#[test]
fn maxpool_matches_finite_differences() {
    let mut rng = ChaCha8Rng::seed_from_u64(12);
    for i in 0..INSTANCES {
        let c = rng.random_range(1..=3);
        let width = rng.random_range(1..=4);
        let len = rng.random_range(width..=16);
        let inputs = [rand_tensor(&mut rng, &[c, len], 1.0)];
        let r = grad_check("maxpool", &inputs, |t, v| t.maxpool1d(v[0], width), &cfg(i)).unwrap();
        assert!(r.passed, "instance {i}: {r:?}");
    }
}

// ----------------------------------------------------------------- dense

#[test]
fn dense_identity_and_zero() {
    let mut tape = Tape::new();
    let x = tape.constant(Tensor::vector(vec![0.5, -2.0, 3.0]));
    let mut eye = vec![0.0; 9];
    for i in 0..3 {
        eye[i * 3 + i] = 1.0;
    }
    let w = tape.constant(Tensor::matrix(3, 3, eye).unwrap());
    let b = tape.constant(Tensor::zeros(&[3]));
    let y = tape.dense(x, w, b, Activation::None).unwrap();
    assert_eq!(tape.value(y).data(), &[0.5, -2.0, 3.0]);
    assert_eq!(tape.value(y).shape(), &[3]);

    let w0 = tape.constant(Tensor::zeros(&[3, 3]));
    let y = tape.dense(x, w0, b, Activation::Tanh).unwrap();
    assert_eq!(tape.value(y).data(), &[0.0; 3]);

    let bad = tape.constant(Tensor::zeros(&[2, 4]));
    assert!(matches!(
        tape.dense(x, bad, b, Activation::None),
        Err(NumericsError::ShapeMismatch { .. })
    ));
}

#[test]
fn dense_matches_finite_differences() {
    let mut rng = ChaCha8Rng::seed_from_u64(13);
    let acts = [
        Activation::None,
        Activation::Tanh,
        Activation::Relu,
        Activation::Sigmoid,
    ];
    for i in 0..INSTANCES {
        let n = rng.random_range(1..=5);
        let m = rng.random_range(1..=5);
        let rows = rng.random_range(1..=3);
        let act = acts[i as usize % acts.len()];
        let inputs = [
            rand_tensor(&mut rng, &[rows, n], 1.0),
            rand_tensor(&mut rng, &[m, n], 1.0),
            rand_tensor(&mut rng, &[m], 1.0),
        ];
        let r = grad_check("dense", &inputs, |t, v| t.dense(v[0], v[1], v[2], act), &cfg(i)).unwrap();
        assert!(r.passed, "instance {i} ({act}): {r:?}");
    }
}

// ------------------------------------------------------------------- gru

fn gru_inputs(rng: &mut ChaCha8Rng, n: usize, m: usize) -> Vec<Tensor> {
    vec![
        rand_tensor(rng, &[3 * m, n], 0.8),
        rand_tensor(rng, &[3 * m, m], 0.8),
        rand_tensor(rng, &[3 * m], 0.5),
    ]
}

#[test]
fn gru_zero_params_halves_state() {
    let mut tape = Tape::new();
    let x = tape.constant(Tensor::vector(vec![0.7, -0.2]));
    let h = tape.constant(Tensor::vector(vec![0.4, -0.8, 1.0]));
    let p = GruVars {
        w: tape.constant(Tensor::zeros(&[9, 2])),
        u: tape.constant(Tensor::zeros(&[9, 3])),
        b: tape.constant(Tensor::zeros(&[9])),
    };
    let y = tape.gru_step(x, h, p).unwrap();
    assert_eq!(tape.value(y).data(), &[0.2, -0.4, 0.5]);
}

#[test]
fn gru_saturated_update_gate_takes_candidate() {
    let (n, m) = (2, 2);
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let u = rand_tensor(&mut rng, &[3 * m, m], 1.0);
    let mut b = vec![0.0; 3 * m];
    b[0] = 1e3;
    b[1] = 1e3;
    b[4] = 0.3;
    b[5] = -0.6;
    let hp = [0.5, -0.25];
    let mut tape = Tape::new();
    let x = tape.constant(Tensor::zeros(&[n]));
    let h = tape.constant(Tensor::vector(hp.to_vec()));
    let p = GruVars {
        w: tape.constant(Tensor::zeros(&[3 * m, n])),
        u: tape.constant(u.clone()),
        b: tape.constant(Tensor::vector(b.clone())),
    };
    let y = tape.gru_step(x, h, p).unwrap();
    // Reference candidate computed by hand from the gate equations.
    let ud = u.data();
    let sig = |v: f64| 1.0 / (1.0 + (-v).exp());
    let r: Vec<f64> = (0..m)
        .map(|j| sig(b[m + j] + ud[(m + j) * m] * hp[0] + ud[(m + j) * m + 1] * hp[1]))
        .collect();
    let cand: Vec<f64> = (0..m)
        .map(|j| {
            let row = (2 * m + j) * m;
            (b[2 * m + j] + ud[row] * r[0] * hp[0] + ud[row + 1] * r[1] * hp[1]).tanh()
        })
        .collect();
    assert_close(tape.value(y).data(), &cand, 1e-12);
}

#[test]
fn gru_three_step_unroll_matches_finite_differences() {
    let mut rng = ChaCha8Rng::seed_from_u64(14);
    for i in 0..INSTANCES {
        let n = rng.random_range(1..=4);
        let m = rng.random_range(1..=4);
        let mut inputs = gru_inputs(&mut rng, n, m);
        for _ in 0..3 {
            inputs.push(rand_tensor(&mut rng, &[n], 1.0));
        }
        inputs.push(rand_tensor(&mut rng, &[m], 0.9));
        let r = grad_check(
            "gru",
            &inputs,
            |t, v| {
                let p = GruVars {
                    w: v[0],
                    u: v[1],
                    b: v[2],
                };
                let mut h = v[6];
                for &x in &v[3..6] {
                    h = t.gru_step(x, h, p)?;
                }
                Ok(h)
            },
            &cfg(i),
        )
        .unwrap();
        assert!(r.passed, "instance {i}: {r:?}");
    }
}

#[test]
fn gru_sequence_matches_finite_differences() {
    let mut rng = ChaCha8Rng::seed_from_u64(15);
    for i in 0..INSTANCES {
        let n = rng.random_range(1..=4);
        let m = rng.random_range(1..=4);
        let steps = rng.random_range(1..=6);
        let mut inputs = gru_inputs(&mut rng, n, m);
        inputs.push(rand_tensor(&mut rng, &[steps, n], 1.0));
        inputs.push(rand_tensor(&mut rng, &[m], 0.9));
        let r = grad_check(
            "gru_sequence",
            &inputs,
            |t, v| {
                let p = GruVars {
                    w: v[0],
                    u: v[1],
                    b: v[2],
                };
                t.gru_sequence(v[3], v[4], p)
            },
            &cfg(i),
        )
        .unwrap();
        assert!(r.passed, "instance {i}: {r:?}");
    }
}

#[test]
fn gru_sequence_equals_chained_steps() {
    let mut rng = ChaCha8Rng::seed_from_u64(16);
    let (n, m, steps) = (3, 4, 5);
    let params = gru_inputs(&mut rng, n, m);
    let xs = rand_tensor(&mut rng, &[steps, n], 1.0);
    let mut tape = Tape::new();
    let p = GruVars {
        w: tape.constant(params[0].clone()),
        u: tape.constant(params[1].clone()),
        b: tape.constant(params[2].clone()),
    };
    let h0 = tape.constant(Tensor::zeros(&[m]));
    let xv = tape.constant(xs.clone());
    let seq = tape.gru_sequence(xv, h0, p).unwrap();
    let mut h = h0;
    for row in xs.data().chunks(n) {
        let x = tape.constant(Tensor::vector(row.to_vec()));
        h = tape.gru_step(x, h, p).unwrap();
    }
    assert_close(
        &tape.value(seq).data()[(steps - 1) * m..],
        tape.value(h).data(),
        1e-12,
    );
}

// ------------------------------------------------------------- embedding

#[test]
fn embedding_lookup_and_accumulation() {
    let table: Vec<f64> = (0..256 * 4).map(|i| ((i % 4) == (i / 4) % 4) as u8 as f64).collect();
    let mut tape = Tape::new();
    let e = tape.param(Tensor::matrix(256, 4, table).unwrap());
    let row0 = tape.embedding_lookup(e, 0).unwrap();
    assert_eq!(tape.value(row0).data(), &[1.0, 0.0, 0.0, 0.0]);
    assert_eq!(tape.value(row0).shape(), &[4]);

    let a = tape.embedding_lookup(e, 7).unwrap();
    let b = tape.embedding_lookup(e, 7).unwrap();
    let both = tape.concat_cols(&[a, b]).unwrap();
    tape.backward_with(both, &[1.0, 2.0, 3.0, 4.0, 10.0, 20.0, 30.0, 40.0])
        .unwrap();
    let g = tape.grad(e).unwrap();
    assert_eq!(&g[7 * 4..8 * 4], &[11.0, 22.0, 33.0, 44.0]);
    assert_eq!(g.iter().filter(|&&v| v != 0.0).count(), 4);

    assert!(matches!(
        tape.embedding_lookup(e, 256),
        Err(NumericsError::IndexOutOfRange { index: 256, .. })
    ));
}

#[test]
fn embedding_matches_finite_differences() {
    let mut rng = ChaCha8Rng::seed_from_u64(17);
    for i in 0..INSTANCES {
        let vocab = rng.random_range(1..=8);
        let d = rng.random_range(1..=4);
        let count = rng.random_range(1..=6);
        let levels: Vec<usize> = (0..count).map(|_| rng.random_range(0..vocab)).collect();
        let inputs = [rand_tensor(&mut rng, &[vocab, d], 1.0)];
        let r = grad_check("embedding", &inputs, |t, v| t.embedding(v[0], &levels), &cfg(i)).unwrap();
        assert!(r.passed, "instance {i}: {r:?}");
    }
}

// ---------------------------------------------------------------- dualfc

fn dualfc_vars(t: &mut Tape, params: &[Tensor]) -> DualFcVars {
    DualFcVars {
        w1: t.constant(params[0].clone()),
        w2: t.constant(params[1].clone()),
        b1: t.constant(params[2].clone()),
        b2: t.constant(params[3].clone()),
        a1: t.constant(params[4].clone()),
        a2: t.constant(params[5].clone()),
    }
}

#[test]
fn dualfc_degenerate_gates_give_zero() {
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    let (n, m) = (3, 5);
    let x = rand_tensor(&mut rng, &[n], 2.0);
    let case1 = vec![
        Tensor::zeros(&[m, n]),
        rand_tensor(&mut rng, &[m, n], 1.0),
        Tensor::zeros(&[m]),
        rand_tensor(&mut rng, &[m], 1.0),
        Tensor::filled(&[m], 1.0),
        Tensor::zeros(&[m]),
    ];
    let case2 = vec![
        rand_tensor(&mut rng, &[m, n], 1.0),
        rand_tensor(&mut rng, &[m, n], 1.0),
        rand_tensor(&mut rng, &[m], 1.0),
        rand_tensor(&mut rng, &[m], 1.0),
        Tensor::zeros(&[m]),
        Tensor::zeros(&[m]),
    ];
    for params in [case1, case2] {
        let mut tape = Tape::new();
        let xv = tape.constant(x.clone());
        let p = dualfc_vars(&mut tape, &params);
        let y = tape.dualfc(xv, p).unwrap();
        assert_eq!(tape.value(y).data(), &[0.0; 5]);
    }
}

#[test]
fn dualfc_matches_finite_differences() {
    let mut rng = ChaCha8Rng::seed_from_u64(18);
    for i in 0..INSTANCES {
        let n = rng.random_range(1..=4);
        let m = rng.random_range(1..=5);
        let rows = rng.random_range(1..=3);
        let inputs = [
            rand_tensor(&mut rng, &[rows, n], 1.0),
            rand_tensor(&mut rng, &[m, n], 1.0),
            rand_tensor(&mut rng, &[m, n], 1.0),
            rand_tensor(&mut rng, &[m], 1.0),
            rand_tensor(&mut rng, &[m], 1.0),
            rand_tensor(&mut rng, &[m], 1.0),
            rand_tensor(&mut rng, &[m], 1.0),
        ];
        let r = grad_check(
            "dualfc",
            &inputs,
            |t, v| {
                let p = DualFcVars {
                    w1: v[1],
                    w2: v[2],
                    b1: v[3],
                    b2: v[4],
                    a1: v[5],
                    a2: v[6],
                };
                t.dualfc(v[0], p)
            },
            &cfg(i),
        )
        .unwrap();
        assert!(r.passed, "instance {i}: {r:?}");
    }
}

// -------------------------------------------------------- cross-entropy

#[test]
fn cross_entropy_uniform_and_saturated() {
    let mut tape = Tape::new();
    let l = tape.param(Tensor::zeros(&[256]));
    let loss = tape.softmax_cross_entropy(l, &[17]).unwrap();
    assert!((tape.value(loss).data()[0] - 256f64.ln()).abs() < 1e-12);
    assert!((256f64.ln() - 5.5452).abs() < 1e-4);
    for p in tape.softmax_probs(loss).unwrap() {
        assert!((p - 1.0 / 256.0).abs() < 1e-15);
    }
    tape.backward(loss).unwrap();
    let g = tape.grad(l).unwrap();
    assert!((g[17] - (1.0 / 256.0 - 1.0)).abs() < 1e-15);

    let mut hot = vec![0.0; 256];
    hot[3] = 1e6;
    let mut tape = Tape::new();
    let l = tape.constant(Tensor::vector(hot));
    let loss = tape.softmax_cross_entropy(l, &[3]).unwrap();
    assert!(tape.value(loss).data()[0].abs() < 1e-12);
}

#[test]
fn cross_entropy_rejects_non_finite_and_bad_targets() {
    let mut tape = Tape::new();
    let mut v = vec![0.0; 256];
    v[9] = f64::NAN;
    let l = tape.constant(Tensor::vector(v));
    assert!(matches!(
        tape.softmax_cross_entropy(l, &[0]),
        Err(NumericsError::NonFinite { .. })
    ));
    let l = tape.constant(Tensor::zeros(&[256]));
    assert!(matches!(
        tape.softmax_cross_entropy(l, &[256]),
        Err(NumericsError::IndexOutOfRange { .. })
    ));
}

#[test]
fn cross_entropy_matches_finite_differences() {
    let mut rng = ChaCha8Rng::seed_from_u64(19);
    for i in 0..INSTANCES {
        let rows = rng.random_range(1..=3);
        let targets: Vec<usize> = (0..rows).map(|_| rng.random_range(0..256)).collect();
        let inputs = [rand_tensor(&mut rng, &[rows, 256], 3.0)];
        let r = grad_check("xent", &inputs, |t, v| t.softmax_cross_entropy(v[0], &targets), &cfg(i)).unwrap();
        assert!(r.passed, "instance {i}: {r:?}");
    }
}

// ------------------------------------------------------ structural ops

#[test]
fn structural_ops_match_finite_differences() {
    let mut rng = ChaCha8Rng::seed_from_u64(20);
    for i in 0..20 {
        let c = rng.random_range(1..=3);
        let len = rng.random_range(1..=6);
        let inputs = [
            rand_tensor(&mut rng, &[c, len], 1.0),
            rand_tensor(&mut rng, &[len, 2], 1.0),
        ];
        let r = grad_check(
            "structural",
            &inputs,
            |t, v| {
                let tr = t.transpose(v[0])?;
                let rep = t.repeat_rows(tr, 3)?;
                let rep2 = t.repeat_rows(v[1], 3)?;
                let cat = t.concat_cols(&[rep, rep2])?;
                let act = t.activation(cat, Activation::Tanh)?;
                let summed = t.add(act, act)?;
                Ok(summed)
            },
            &cfg(i),
        )
        .unwrap();
        assert!(r.passed, "instance {i}: {r:?}");
    }
}

#[test]
fn reflect_pad_matches_finite_differences() {
    let mut rng = ChaCha8Rng::seed_from_u64(21);
    for i in 0..20 {
        let c = rng.random_range(1..=3);
        let len = rng.random_range(1..=6);
        let (left, right) = (rng.random_range(0..=7), rng.random_range(0..=7));
        let inputs = [rand_tensor(&mut rng, &[c, len], 1.0)];
        let r = grad_check("reflect_pad", &inputs, |t, v| t.reflect_pad(v[0], left, right), &cfg(i)).unwrap();
        assert!(r.passed, "instance {i}: {r:?}");
    }
}

#[test]
fn reflect_pad_degenerates_to_edge_copy() {
    let mut tape = Tape::new();
    let x = tape.constant(Tensor::matrix(1, 1, vec![2.5]).unwrap());
    let y = tape.reflect_pad(x, 1, 1).unwrap();
    assert_eq!(tape.value(y).data(), &[2.5, 2.5, 2.5]);
    let x = tape.constant(Tensor::matrix(1, 3, vec![1.0, 2.0, 3.0]).unwrap());
    let y = tape.reflect_pad(x, 2, 2).unwrap();
    assert_eq!(tape.value(y).data(), &[3.0, 2.0, 1.0, 2.0, 3.0, 2.0, 1.0]);
}

// --------------------------------------------------- gradcheck harness

#[test]
fn grad_check_dense_identity_is_tight() {
    let mut eye = vec![0.0; 16];
    for i in 0..4 {
        eye[i * 4 + i] = 1.0;
    }
    let inputs = [
        Tensor::vector(vec![0.1, -0.4, 0.8, 0.3]),
        Tensor::matrix(4, 4, eye).unwrap(),
        Tensor::zeros(&[4]),
    ];
    let r = grad_check(
        "dense",
        &inputs,
        |t, v| t.dense(v[0], v[1], v[2], Activation::Tanh),
        &cfg(42),
    )
    .unwrap();
    assert!(r.passed);
    assert!(r.max_rel_error <= 1e-6, "{r:?}");
}

#[test]
fn grad_check_catches_sign_flip() {
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let inputs = [
        rand_tensor(&mut rng, &[4], 1.0),
        rand_tensor(&mut rng, &[3, 4], 1.0),
        rand_tensor(&mut rng, &[3], 1.0),
    ];
    let planted = GradCheckConfig {
        plant_sign_flip: true,
        ..cfg(1)
    };
    let r = grad_check(
        "dense",
        &inputs,
        |t, v| t.dense(v[0], v[1], v[2], Activation::None),
        &planted,
    )
    .unwrap();
    assert!(!r.passed);
    assert!((r.max_rel_error - 2.0).abs() < 1e-6, "{r:?}");
}

#[test]
fn grad_check_sets_aside_relu_kinks() {
    // Preactivation 3e-6 sits inside the ±1e-5 probe, so the bias probe
    // straddles the ReLU corner.
    let inputs = [
        Tensor::vector(vec![1.0]),
        Tensor::matrix(1, 1, vec![1.0]).unwrap(),
        Tensor::vector(vec![-1.0 + 3e-6]),
    ];
    let r = grad_check(
        "relu",
        &inputs,
        |t, v| t.dense(v[0], v[1], v[2], Activation::Relu),
        &cfg(0),
    )
    .unwrap();
    assert!(r.passed, "{r:?}");
    assert_eq!(r.kinks, 3);

    let planted = GradCheckConfig {
        plant_sign_flip: true,
        ..cfg(0)
    };
    let inputs = [
        Tensor::vector(vec![1.0]),
        Tensor::matrix(1, 1, vec![1.0]).unwrap(),
        Tensor::vector(vec![0.5]),
    ];
    let r = grad_check(
        "relu",
        &inputs,
        |t, v| t.dense(v[0], v[1], v[2], Activation::Relu),
        &planted,
    )
    .unwrap();
    assert!(!r.passed);
    assert_eq!(r.kinks, 0);
}

// ------------------------------------------------------------ tape laws

#[test]
fn grad_before_backward_is_a_tape_error() {
    let mut tape = Tape::new();
    let x = tape.param(Tensor::vector(vec![1.0]));
    assert!(matches!(tape.grad(x), Err(NumericsError::Tape(_))));
    let y = tape.activation(x, Activation::Tanh).unwrap();
    let mut other = Tape::new();
    assert!(other.backward(y).is_err());
}

#[test]
fn two_consumers_sum_their_contributions() {
    let mut tape = Tape::new();
    let x = tape.param(Tensor::vector(vec![0.3, -0.7]));
    let a = tape.activation(x, Activation::Tanh).unwrap();
    let b = tape.activation(x, Activation::Sigmoid).unwrap();
    let s = tape.add(a, b).unwrap();
    tape.backward_with(s, &[1.0, 1.0]).unwrap();
    let g = tape.grad(x).unwrap();
    for (i, &xv) in [0.3f64, -0.7].iter().enumerate() {
        let sig = 1.0 / (1.0 + (-xv).exp());
        let want = (1.0 - xv.tanh().powi(2)) + sig * (1.0 - sig);
        assert!((g[i] - want).abs() < 1e-12);
    }
}

#[test]
fn split_batch_gradients_sum_to_joint_pass() {
    let mut rng = ChaCha8Rng::seed_from_u64(6);
    let w = rand_tensor(&mut rng, &[256, 5], 1.0);
    let b = rand_tensor(&mut rng, &[256], 1.0);
    let xs = [rand_tensor(&mut rng, &[4, 5], 1.0), rand_tensor(&mut rng, &[4, 5], 1.0)];
    let targets = [[1usize, 2, 3, 4], [200, 100, 0, 255]];

    let item = |t: &mut Tape, wv, bv, k: usize| {
        let x = t.constant(xs[k].clone());
        let logits = t.dense(x, wv, bv, Activation::None).unwrap();
        t.softmax_cross_entropy(logits, &targets[k]).unwrap()
    };

    let mut joint = Tape::new();
    let (wj, bj) = (joint.param(w.clone()), joint.param(b.clone()));
    let l0 = item(&mut joint, wj, bj, 0);
    let l1 = item(&mut joint, wj, bj, 1);
    let total = joint.add(l0, l1).unwrap();
    joint.backward(total).unwrap();

    let mut summed = vec![0.0; w.len()];
    for k in 0..2 {
        let mut t = Tape::new();
        let (wv, bv) = (t.param(w.clone()), t.param(b.clone()));
        let l = item(&mut t, wv, bv, k);
        t.backward(l).unwrap();
        for (s, g) in summed.iter_mut().zip(t.grad(wv).unwrap()) {
            *s += g;
        }
    }
    assert_close(joint.grad(wj).unwrap(), &summed, 1e-10);
}

#[test]
fn forward_and_backward_stay_finite() {
    let mut rng = ChaCha8Rng::seed_from_u64(7);
    let mut tape = Tape::new();
    let x = tape.param(rand_tensor(&mut rng, &[6, 3], 50.0));
    let p = GruVars {
        w: tape.param(rand_tensor(&mut rng, &[12, 3], 5.0)),
        u: tape.param(rand_tensor(&mut rng, &[12, 4], 5.0)),
        b: tape.param(rand_tensor(&mut rng, &[12], 5.0)),
    };
    let h0 = tape.param(Tensor::zeros(&[4]));
    let h = tape.gru_sequence(x, h0, p).unwrap();
    tape.backward_with(h, &[1.0; 24]).unwrap();
    assert!(tape.value(h).is_finite());
    for v in [x, p.w, p.u, p.b, h0] {
        assert!(tape.grad(v).unwrap().iter().all(|g| g.is_finite()));
    }
}

proptest! {
    #[test]
    fn conv1d_output_length_law(len in 1usize..64, k in 1usize..8, s in 1usize..6) {
        prop_assume!(len >= k);
        let mut tape = Tape::new();
        let x = tape.constant(Tensor::zeros(&[1, len]));
        let w = tape.constant(Tensor::zeros(&[2, 1, k]));
        let b = tape.constant(Tensor::zeros(&[2]));
        let y = tape.conv1d(x, w, b, s).unwrap();
        prop_assert_eq!(tape.value(y).shape(), &[2, (len - k) / s + 1]);
    }

    #[test]
    fn softmax_is_a_shift_invariant_distribution(
        logits in prop::collection::vec(-30.0f64..30.0, 1..300),
        shift in -100.0f64..100.0,
    ) {
        let p = softmax(&logits);
        prop_assert!(p.iter().all(|&v| v >= 0.0));
        prop_assert!((p.iter().sum::<f64>() - 1.0).abs() <= 1e-9);
        let shifted: Vec<f64> = logits.iter().map(|l| l + shift).collect();
        for (a, b) in p.iter().zip(softmax(&shifted)) {
            prop_assert!((a - b).abs() <= 1e-9);
        }
    }
}
