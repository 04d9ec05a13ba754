//! Finite-difference validation of every tape primitive.
//!
//! Each primitive is wrapped in a random scalar loss (weighted sum of the
//! output) and its reverse-mode gradient is compared entry by entry against
//! central differences with step 1e-5 on small random inputs.

use hbnn_core::autodiff::{ParamId, ParamStore, Tape, Transform, Var};
use hbnn_core::numerics::{Matrix, RngState};
use hbnn_core::oracle::finite_diff_grad;

const FD_STEP: f64 = 1e-5;
const TOL: f64 = 1e-4;

fn rel_err(a: f64, b: f64) -> f64 {
    (a - b).abs() / a.abs().max(b.abs()).max(1.0)
}

/// Compares reverse-mode gradients of `build`'s scalar output against
/// central finite differences for every listed parameter.
fn check_gradients(
    name: &str,
    store: &mut ParamStore,
    ids: &[ParamId],
    build: impl Fn(&mut Tape, &ParamStore) -> Var,
) {
    let mut tape = Tape::new();
    let root = build(&mut tape, store);
    assert_eq!(tape.shape(root), (1, 1), "{name}: loss must be scalar");
    let grads = tape.backward(root).unwrap();

    let fd = finite_diff_grad(store, ids, FD_STEP, |s| {
        let mut t = Tape::new();
        let r = build(&mut t, s);
        t.value(r).scalar_value()
    });

    for (k, &id) in ids.iter().enumerate() {
        let zero = Matrix::zeros(store.value(id).rows(), store.value(id).cols());
        let analytic = grads.get(id).unwrap_or(&zero);
        let numeric = &fd[k];
        for i in 0..numeric.rows() {
            for j in 0..numeric.cols() {
                let e = rel_err(analytic.get(i, j), numeric.get(i, j));
                assert!(
                    e < TOL,
                    "{name}: param {k} entry ({i},{j}): autodiff {} vs fd {} (rel {e})",
                    analytic.get(i, j),
                    numeric.get(i, j)
                );
            }
        }
    }
}

/// Random weights turning a matrix output into a scalar that senses every
/// entry.
fn weighted_sum(t: &mut Tape, v: Var, rng: &mut RngState) -> Var {
    let (r, c) = t.shape(v);
    let w = t.constant(rng.sample_standard_normal(r, c));
    let prod = t.mul(v, w);
    t.reduce_sum(prod)
}

#[test]
fn elementwise_binary_ops() {
    let mut rng = RngState::new(101);
    let mut store = ParamStore::new();
    let a = store.add("a", rng.sample_standard_normal(3, 4), Transform::Identity);
    // keep b away from zero so division stays smooth
    let b = store.add(
        "b",
        rng.sample_standard_normal(3, 4).map(|x| x + 3.0),
        Transform::Identity,
    );
    let mut w_rng = RngState::new(7);
    for (name, op) in [
        ("add", 0u8),
        ("sub", 1),
        ("mul", 2),
        ("div", 3),
    ] {
        let w = w_rng.clone();
        check_gradients(name, &mut store, &[a, b], |t, s| {
            let va = t.param(s, a);
            let vb = t.param(s, b);
            let out = match op {
                0 => t.add(va, vb),
                1 => t.sub(va, vb),
                2 => t.mul(va, vb),
                _ => t.div(va, vb),
            };
            weighted_sum(t, out, &mut w.clone())
        });
        w_rng.next_u64();
    }
}

#[test]
fn broadcast_combinations() {
    let mut rng = RngState::new(102);
    let mut store = ParamStore::new();
    let col = store.add("col", rng.sample_standard_normal(4, 1), Transform::Identity);
    let row = store.add(
        "row",
        rng.sample_standard_normal(1, 5).map(|x| x + 2.5),
        Transform::Identity,
    );
    let full = store.add("full", rng.sample_standard_normal(4, 5), Transform::Identity);
    let scalar = store.add("scalar", Matrix::scalar(1.7), Transform::Identity);

    let w = RngState::new(11);
    check_gradients("col+row broadcast", &mut store, &[col, row], |t, s| {
        let c = t.param(s, col);
        let r = t.param(s, row);
        let out = t.add(c, r);
        weighted_sum(t, out, &mut w.clone())
    });
    check_gradients("full*col broadcast", &mut store, &[full, col], |t, s| {
        let f = t.param(s, full);
        let c = t.param(s, col);
        let out = t.mul(f, c);
        weighted_sum(t, out, &mut w.clone())
    });
    check_gradients("full/row broadcast", &mut store, &[full, row], |t, s| {
        let f = t.param(s, full);
        let r = t.param(s, row);
        let out = t.div(f, r);
        weighted_sum(t, out, &mut w.clone())
    });
    check_gradients("scalar*full", &mut store, &[scalar, full], |t, s| {
        let sc = t.param(s, scalar);
        let f = t.param(s, full);
        let out = t.mul(sc, f);
        weighted_sum(t, out, &mut w.clone())
    });
}

#[test]
fn matmul_and_transpose() {
    let mut rng = RngState::new(103);
    let mut store = ParamStore::new();
    let a = store.add("a", rng.sample_standard_normal(3, 4), Transform::Identity);
    let b = store.add("b", rng.sample_standard_normal(4, 2), Transform::Identity);
    let w = RngState::new(13);
    check_gradients("matmul", &mut store, &[a, b], |t, s| {
        let va = t.param(s, a);
        let vb = t.param(s, b);
        let out = t.matmul(va, vb);
        weighted_sum(t, out, &mut w.clone())
    });
    check_gradients("transpose-matmul", &mut store, &[a, b], |t, s| {
        let va = t.param(s, a);
        let vb = t.param(s, b);
        let at = t.transpose(va);
        let bt = t.transpose(vb);
        let out = t.matmul(bt, at);
        weighted_sum(t, out, &mut w.clone())
    });
}

#[test]
fn elementwise_unary_ops() {
    let mut rng = RngState::new(104);
    let mut store = ParamStore::new();
    // offset keeps relu kinks, log/sqrt domains, and arccos boundaries away
    let pos = store.add(
        "pos",
        rng.sample_standard_normal(3, 3).map(|x| x.abs() + 0.5),
        Transform::Identity,
    );
    let free = store.add(
        "free",
        rng.sample_standard_normal(3, 3).map(|x| x + 0.3 * x.signum()),
        Transform::Identity,
    );
    let inner = store.add(
        "inner",
        rng.sample_standard_normal(3, 3).map(|x| 0.8 * (x / 3.0).tanh()),
        Transform::Identity,
    );
    let w = RngState::new(17);

    for (name, op) in [("relu", 0u8), ("softplus", 1), ("square", 2), ("neg", 3), ("sin", 4), ("cos", 5), ("exp", 6)] {
        check_gradients(name, &mut store, &[free], |t, s| {
            let v = t.param(s, free);
            let out = match op {
                0 => t.relu(v),
                1 => t.softplus(v),
                2 => t.square(v),
                3 => t.neg(v),
                4 => t.sin(v),
                5 => t.cos(v),
                _ => t.exp(v),
            };
            weighted_sum(t, out, &mut w.clone())
        });
    }
    for (name, op) in [("log", 0u8), ("sqrt", 1)] {
        check_gradients(name, &mut store, &[pos], |t, s| {
            let v = t.param(s, pos);
            let out = match op {
                0 => t.log(v),
                _ => t.sqrt(v),
            };
            weighted_sum(t, out, &mut w.clone())
        });
    }
    check_gradients("arccos", &mut store, &[inner], |t, s| {
        let v = t.param(s, inner);
        let out = t.arccos(v);
        weighted_sum(t, out, &mut w.clone())
    });
}

#[test]
fn reductions_and_structure() {
    let mut rng = RngState::new(105);
    let mut store = ParamStore::new();
    let a = store.add("a", rng.sample_standard_normal(4, 4), Transform::Identity);
    let col = store.add("col", rng.sample_standard_normal(4, 1), Transform::Identity);
    let w = RngState::new(19);

    check_gradients("reduce_sum", &mut store, &[a], |t, s| {
        let v = t.param(s, a);
        t.reduce_sum(v)
    });
    check_gradients("reduce_mean", &mut store, &[a], |t, s| {
        let v = t.param(s, a);
        t.reduce_mean(v)
    });
    check_gradients("tril_strict", &mut store, &[a], |t, s| {
        let v = t.param(s, a);
        let out = t.tril_strict(v);
        weighted_sum(t, out, &mut w.clone())
    });
    check_gradients("diag_embed", &mut store, &[col], |t, s| {
        let v = t.param(s, col);
        let out = t.diag_embed(v);
        weighted_sum(t, out, &mut w.clone())
    });
    check_gradients("concat_cols", &mut store, &[a, col], |t, s| {
        let va = t.param(s, a);
        let vc = t.param(s, col);
        let out = t.concat_cols(&[vc, va, vc]);
        weighted_sum(t, out, &mut w.clone())
    });
}

#[test]
fn softplus_transform_in_chain() {
    let mut rng = RngState::new(106);
    let mut store = ParamStore::new();
    let p = store.add(
        "p",
        rng.sample_standard_normal(2, 3),
        Transform::SoftplusPositive,
    );
    let w = RngState::new(23);
    check_gradients("softplus transform", &mut store, &[p], |t, s| {
        let v = t.param(s, p); // constrained view
        let out = t.log(v);
        weighted_sum(t, out, &mut w.clone())
    });
}

#[test]
fn cholesky_through_spd_construction() {
    // A = B B^T + 2I built on tape, so perturbations stay symmetric.
    let mut rng = RngState::new(107);
    let mut store = ParamStore::new();
    let b = store.add("b", rng.sample_standard_normal(4, 4), Transform::Identity);
    let w = RngState::new(29);
    check_gradients("cholesky(BB^T + 2I)", &mut store, &[b], |t, s| {
        let vb = t.param(s, b);
        let bt = t.transpose(vb);
        let bbt = t.matmul(vb, bt);
        let eye = t.constant(Matrix::identity(4).scale(2.0));
        let a = t.add(bbt, eye);
        let l = t.cholesky(a).unwrap();
        weighted_sum(t, l, &mut w.clone())
    });
}

#[test]
fn cholesky_direct_symmetric_parameter() {
    // The forward pass reads only the lower triangle, so finite differences
    // on upper entries must be zero and lower entries carry the full
    // sensitivity of the symmetric pair.
    let mut rng = RngState::new(108);
    let mut store = ParamStore::new();
    let b = rng.sample_standard_normal(4, 4);
    let spd = b.matmul(&b.transpose()).add_diagonal(2.0);
    let a = store.add("a", spd, Transform::Identity);
    let w = RngState::new(31);
    check_gradients("cholesky(symmetric param)", &mut store, &[a], |t, s| {
        let va = t.param(s, a);
        let l = t.cholesky(va).unwrap();
        weighted_sum(t, l, &mut w.clone())
    });
}

#[test]
fn triangular_solves_and_log_det() {
    let mut rng = RngState::new(109);
    let mut store = ParamStore::new();
    let b = store.add("b", rng.sample_standard_normal(3, 3), Transform::Identity);
    let rhs = store.add("rhs", rng.sample_standard_normal(3, 2), Transform::Identity);
    let w = RngState::new(37);

    check_gradients("solve_lower", &mut store, &[b, rhs], |t, s| {
        let vb = t.param(s, b);
        let bt = t.transpose(vb);
        let bbt = t.matmul(vb, bt);
        let eye = t.constant(Matrix::identity(3).scale(1.5));
        let a = t.add(bbt, eye);
        let l = t.cholesky(a).unwrap();
        let r = t.param(s, rhs);
        let x = t.solve_lower(l, r);
        weighted_sum(t, x, &mut w.clone())
    });

    check_gradients("solve_upper", &mut store, &[b, rhs], |t, s| {
        let vb = t.param(s, b);
        let bt = t.transpose(vb);
        let bbt = t.matmul(vb, bt);
        let eye = t.constant(Matrix::identity(3).scale(1.5));
        let a = t.add(bbt, eye);
        let l = t.cholesky(a).unwrap();
        let r = t.param(s, rhs);
        let x = t.solve_upper(l, r);
        weighted_sum(t, x, &mut w.clone())
    });

    check_gradients("log_det_from_chol", &mut store, &[b], |t, s| {
        let vb = t.param(s, b);
        let bt = t.transpose(vb);
        let bbt = t.matmul(vb, bt);
        let eye = t.constant(Matrix::identity(3).scale(1.5));
        let a = t.add(bbt, eye);
        let l = t.cholesky(a).unwrap();
        t.log_det_from_chol(l)
    });
}

#[test]
fn solve_lower_against_directly_parameterized_factor() {
    // Lower factor assembled from a strict-lower matrix and a positive
    // diagonal, mirroring how variational covariance factors are stored.
    let mut rng = RngState::new(110);
    let mut store = ParamStore::new();
    let strict = store.add("strict", rng.sample_standard_normal(3, 3), Transform::Identity);
    let diag = store.add(
        "diag",
        rng.sample_standard_normal(3, 1),
        Transform::SoftplusPositive,
    );
    let rhs = store.add("rhs", rng.sample_standard_normal(3, 2), Transform::Identity);
    let w = RngState::new(41);
    check_gradients("solve vs built factor", &mut store, &[strict, diag, rhs], |t, s| {
        let sl = t.param(s, strict);
        let sl = t.tril_strict(sl);
        let d = t.param(s, diag);
        let dm = t.diag_embed(d);
        let l = t.add(sl, dm);
        let r = t.param(s, rhs);
        let x = t.solve_lower(l, r);
        weighted_sum(t, x, &mut w.clone())
    });
}
