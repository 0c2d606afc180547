use std::sync::Arc;

use super::*;
use rand::Rng;
use rocp_core::graph::{make_splits, SplitAssignment};
use rocp_core::models::{Arch, GraphInputs, Model, ModelConfig};
use rocp_core::rocp::{
    epoch_objective, rocp_loss, size_loss, smooth_quantile, soft_membership, SizeLossKind, SizeTerm,
    SmoothingConfig,
};
use rocp_core::{Matrix, SparseMatrix, Tape};

const INSTANCES: u64 = 10;
const OP_TOL: f64 = 1e-4;
const END_TO_END_TOL: f64 = 1e-3;

fn check_op<G, F>(name: &str, gen: G, f: F)
where
    G: Fn(&mut rand_chacha::ChaCha8Rng) -> Vec<Matrix>,
    F: Fn(&mut Tape, &[rocp_core::tensor::Var], u64) -> rocp_core::Result<rocp_core::tensor::Var>,
{
    for seed in 0..INSTANCES {
        let mut g = rng(seed);
        let inputs = gen(&mut g);
        let err = op_grad_error(&inputs, |t, v| f(t, v, seed));
        assert!(err < OP_TOL, "{name} instance {seed}: relative error {err:e}");
    }
}

fn random_sparse(g: &mut rand_chacha::ChaCha8Rng, rows: usize, cols: usize, density: f64) -> SparseMatrix {
    let mut trips = Vec::new();
    for i in 0..rows {
        for j in 0..cols {
            if g.random_bool(density) {
                trips.push((i, j, g.random_range(-1.0..1.0)));
            }
        }
    }
    SparseMatrix::from_triplets(rows, cols, &trips).unwrap()
}

pub fn matmul_grad() {
    check_op(
        "matmul",
        |g| vec![random_matrix(g, 3, 4, 1.0), random_matrix(g, 4, 2, 1.0)],
        |t, v, s| {
            let m = t.matmul(v[0], v[1])?;
            Ok(weighted_sum(t, m, s))
        },
    );
}

pub fn spmm_grad() {
    for seed in 0..INSTANCES {
        let mut g = rng(seed);
        let s = Arc::new(random_sparse(&mut g, 5, 5, 0.3));
        let d = random_matrix(&mut g, 5, 3, 1.0);
        let err = op_grad_error(&[d], |t, v| {
            let m = t.spmm(&s, v[0])?;
            Ok(weighted_sum(t, m, seed))
        });
        assert!(err < OP_TOL, "spmm instance {seed}: {err:e}");
    }
}

pub fn elementwise_binary_grads() {
    let gen = |g: &mut rand_chacha::ChaCha8Rng| vec![random_matrix(g, 3, 4, 2.0), random_matrix(g, 3, 4, 2.0)];
    check_op("add", gen, |t, v, s| {
        let m = t.add(v[0], v[1])?;
        Ok(weighted_sum(t, m, s))
    });
    check_op("sub", gen, |t, v, s| {
        let m = t.sub(v[0], v[1])?;
        Ok(weighted_sum(t, m, s))
    });
    check_op("mul", gen, |t, v, s| {
        let m = t.mul(v[0], v[1])?;
        Ok(weighted_sum(t, m, s))
    });
    check_op("concat_cols", gen, |t, v, s| {
        let m = t.concat_cols(v[0], v[1])?;
        Ok(weighted_sum(t, m, s))
    });
}

pub fn broadcast_grads() {
    check_op(
        "add_row",
        |g| vec![random_matrix(g, 4, 3, 1.0), random_matrix(g, 1, 3, 1.0)],
        |t, v, s| {
            let m = t.add_row(v[0], v[1])?;
            Ok(weighted_sum(t, m, s))
        },
    );
    check_op(
        "add_scalar",
        |g| vec![random_matrix(g, 4, 3, 1.0), random_matrix(g, 1, 1, 1.0)],
        |t, v, s| {
            let m = t.add_scalar(v[0], v[1])?;
            Ok(weighted_sum(t, m, s))
        },
    );
}

pub fn unary_grads() {
    let smooth = |g: &mut rand_chacha::ChaCha8Rng| vec![random_matrix(g, 3, 4, 2.0)];
    let kinked = |g: &mut rand_chacha::ChaCha8Rng| vec![away_from_zero(g, 3, 4, 0.05, 2.0)];
    check_op("add_const", smooth, |t, v, s| {
        let m = t.add_const(v[0], 0.7);
        Ok(weighted_sum(t, m, s))
    });
    check_op("scale", smooth, |t, v, s| {
        let m = t.scale(v[0], -1.7);
        Ok(weighted_sum(t, m, s))
    });
    check_op("sigmoid", smooth, |t, v, s| {
        let m = t.sigmoid(v[0]);
        Ok(weighted_sum(t, m, s))
    });
    check_op("softmax_rows", smooth, |t, v, s| {
        let m = t.softmax_rows(v[0]);
        Ok(weighted_sum(t, m, s))
    });
    check_op("transpose", smooth, |t, v, s| {
        let m = t.transpose(v[0]);
        Ok(weighted_sum(t, m, s))
    });
    check_op("relu", kinked, |t, v, s| {
        let m = t.relu(v[0]);
        Ok(weighted_sum(t, m, s))
    });
    check_op("leaky_relu", kinked, |t, v, s| {
        let m = t.leaky_relu(v[0], 0.2);
        Ok(weighted_sum(t, m, s))
    });
    check_op("elu", kinked, |t, v, s| {
        let m = t.elu(v[0], 1.0);
        Ok(weighted_sum(t, m, s))
    });
}

pub fn reduction_and_gather_grads() {
    let gen = |g: &mut rand_chacha::ChaCha8Rng| vec![random_matrix(g, 5, 3, 1.0)];
    check_op("sum", gen, |t, v, _| {
        let m = t.mul(v[0], v[0])?;
        Ok(t.sum(m))
    });
    check_op("reduce_mean", gen, |t, v, _| {
        let m = t.mul(v[0], v[0])?;
        t.reduce_mean(m)
    });
    check_op("row_mean", gen, |t, v, s| {
        let m = t.row_mean(v[0])?;
        Ok(weighted_sum(t, m, s))
    });
    check_op("gather_rows", gen, |t, v, s| {
        let m = t.gather_rows(v[0], &[4, 0, 0, 2])?;
        Ok(weighted_sum(t, m, s))
    });
    check_op("gather_entries", gen, |t, v, s| {
        let m = t.gather_entries(v[0], &[(1, 2), (3, 0), (1, 2)])?;
        Ok(weighted_sum(t, m, s))
    });
}

pub fn dropout_grad() {
    check_op(
        "dropout",
        |g| vec![random_matrix(g, 6, 4, 1.0)],
        |t, v, s| {
            let mut g = rng(s + 100);
            let m = t.dropout(v[0], 0.5, &mut g)?;
            Ok(weighted_sum(t, m, s))
        },
    );
}

pub fn cross_entropy_grad() {
    check_op(
        "masked_cross_entropy",
        |g| vec![random_matrix(g, 6, 4, 2.0)],
        |t, v, s| {
            let labels: Vec<usize> = (0..6).map(|i| (i + s as usize) % 4).collect();
            t.masked_cross_entropy(v[0], &labels, &[0, 2, 3, 5])
        },
    );
}

pub fn soft_rank_grad() {
    check_op(
        "soft_rank",
        |g| vec![random_matrix(g, 8, 1, 1.0)],
        |t, v, s| {
            let m = t.soft_rank(v[0], 0.1)?;
            Ok(weighted_sum(t, m, s))
        },
    );
}

pub fn attention_grad() {
    for seed in 0..INSTANCES {
        let g0 = small_sbm(8, 2, seed);
        let adj = rocp_core::graph::with_self_loops(&g0);
        let mut g = rng(seed);
        let inputs = vec![
            random_matrix(&mut g, 8, 3, 1.0),
            random_matrix(&mut g, 8, 1, 1.0),
            random_matrix(&mut g, 8, 1, 1.0),
        ];
        let err = op_grad_error(&inputs, |t, v| {
            let m = t.attention_aggregate(v[0], v[1], v[2], &adj, 0.2)?;
            Ok(weighted_sum(t, m, seed))
        });
        assert!(err < OP_TOL, "attention instance {seed}: {err:e}");
    }
}

pub fn smooth_quantile_grad() {
    check_op(
        "smooth_quantile",
        |g| vec![Matrix::from_fn(12, 1, |_, _| g.random_range(0.0..1.0))],
        |t, v, _| smooth_quantile(t, v[0], 0.1 * (1.0 + 1.0 / 12.0), 0.1),
    );
}

pub fn soft_membership_grad() {
    check_op(
        "soft_membership",
        |g| {
            vec![
                Matrix::from_fn(5, 4, |_, _| g.random_range(0.0..1.0)),
                Matrix::scalar(g.random_range(0.1..0.5)),
            ]
        },
        |t, v, s| {
            let m = soft_membership(t, v[0], v[1], 0.1)?;
            Ok(weighted_sum(t, m, s))
        },
    );
}

pub fn size_loss_grads() {
    for kind in [SizeLossKind::Linear, SizeLossKind::Clamped] {
        check_op(
            "size_loss",
            |g| vec![Matrix::from_fn(6, 4, |_, _| g.random_range(0.0..1.0))],
            |t, v, _| {
                // τ = 0.3 keeps some clamped rows active
                let m = t.sigmoid(v[0]);
                size_loss(t, m, 0.3, kind)
            },
        );
    }
}

pub fn rocp_loss_composite_grad() {
    check_op(
        "rocp_loss",
        |g| vec![random_matrix(g, 10, 3, 2.0)],
        |t, v, s| {
            let labels: Vec<usize> = (0..10).map(|i| (i * 7 + s as usize) % 3).collect();
            let probs = t.softmax_rows(v[0]);
            let entries: Vec<(usize, usize)> = (4..8).map(|i| (i, labels[i])).collect();
            let scores = t.gather_entries(probs, &entries)?;
            let thr = smooth_quantile(t, scores, 0.25, 0.1)?;
            let pred = t.gather_rows(probs, &[8, 9])?;
            let memberships = soft_membership(t, pred, thr, 0.1)?;
            let term = SizeTerm {
                memberships,
                lambda: 0.5,
                tau: 1.0,
                kind: SizeLossKind::Linear,
            };
            Ok(rocp_loss(t, v[0], &labels, &[0, 1, 2, 3], Some(term))?.total)
        },
    );
}

fn tiny_config(arch: Arch) -> ModelConfig {
    ModelConfig {
        hidden_dim: 4,
        gat_heads: 2,
        appnp_iters: 3,
        ..ModelConfig::default_for(arch)
    }
}

/// Initialized model with every parameter jittered, so zero biases do not
/// put pre-activations exactly on the ReLU kink.
fn jittered_model(config: ModelConfig, d: usize, seed: u64) -> Model {
    let mut model = Model::init(config, d, 3, seed).unwrap();
    let mut g = rng(seed + 1000);
    for v in &mut model.params.values {
        for x in v.as_mut_slice() {
            *x += g.random_range(-0.1..0.1);
        }
    }
    model
}

/// Kink entries allowed per check: at most 10% of all parameter entries.
fn assert_model_check(c: GradCheck, tol: f64, what: &str) {
    assert!(c.worst < tol, "{what}: relative error {:e}", c.worst);
    assert!(c.kinks * 10 <= c.entries, "{what}: {} of {} entries straddle a kink", c.kinks, c.entries);
}

fn model_objective_check(arch: Arch, seed: u64, training: bool) -> GradCheck {
    let g = small_sbm(10, 3, seed);
    let inputs = GraphInputs::new(&g);
    let model = jittered_model(tiny_config(arch), g.num_features(), seed);
    let train_rows: Vec<usize> = (0..10).step_by(2).collect();
    grad_check(&model.params.values, |tape, vals| {
        let mut m = model.clone();
        m.params.values = vals.to_vec();
        let mut drop = rng(seed + 7);
        let rng_arg: Option<&mut dyn rand::RngCore> = if training { Some(&mut drop) } else { None };
        let (logits, params) = m.forward(tape, &inputs, rng_arg)?;
        let loss = tape.masked_cross_entropy(logits, &inputs.labels, &train_rows)?;
        Ok((loss, params))
    })
}

pub fn gnn_forward_cross_entropy_grads() {
    for arch in Arch::ALL {
        for seed in 0..INSTANCES {
            let c = model_objective_check(arch, seed, seed % 2 == 1);
            assert_model_check(c, OP_TOL, &format!("{arch} instance {seed}"));
        }
    }
}

pub fn full_epoch_objective_grad() {
    for arch in Arch::ALL {
        for seed in 0..INSTANCES {
            let g = small_sbm(24, 3, seed);
            let inputs = GraphInputs::new(&g);
            let splits = SplitAssignment {
                train: (0..6).collect(),
                valid: (6..18).collect(),
                calib: (18..21).collect(),
                test: (21..24).collect(),
            };
            let cfg = SmoothingConfig {
                lambda: 0.5,
                ..SmoothingConfig::default()
            };
            let model = jittered_model(tiny_config(arch), g.num_features(), seed);
            let c = grad_check(&model.params.values, |tape, vals| {
                let mut m = model.clone();
                m.params.values = vals.to_vec();
                let (loss, params) = epoch_objective(tape, &m, &inputs, &splits, &cfg, seed, 3)?;
                Ok((loss.total, params))
            });
            assert_model_check(c, END_TO_END_TOL, &format!("{arch} epoch objective instance {seed}"));
        }
    }
}

pub fn one_layer_gcn_rocp_objective_grad() {
    for seed in 0..INSTANCES {
        let g = small_sbm(10, 3, seed);
        let inputs = GraphInputs::new(&g);
        let splits = SplitAssignment {
            train: vec![0, 1, 2],
            valid: vec![3, 4, 5, 6, 7],
            calib: vec![8],
            test: vec![9],
        };
        let cfg = SmoothingConfig {
            lambda: 1.0,
            calib_frac: 0.6,
            ..SmoothingConfig::default()
        };
        let config = ModelConfig {
            num_layers: 1,
            ..ModelConfig::default_for(Arch::Gcn)
        };
        let model = jittered_model(config, g.num_features(), seed);
        let c = grad_check(&model.params.values, |tape, vals| {
            let mut m = model.clone();
            m.params.values = vals.to_vec();
            let (loss, params) = epoch_objective(tape, &m, &inputs, &splits, &cfg, seed, 0)?;
            Ok((loss.total, params))
        });
        assert_eq!(c.kinks, 0);
        assert!(c.worst < END_TO_END_TOL, "instance {seed}: {:e}", c.worst);
    }
}

pub fn generated_splits_feed_the_objective() {
    let g = small_sbm(60, 3, 1);
    let splits = make_splits(&g, 5, 20, 2).unwrap();
    let inputs = GraphInputs::new(&g);
    let model = Model::init(tiny_config(Arch::Gcn), g.num_features(), 3, 0).unwrap();
    let mut tape = Tape::new();
    let (loss, _) = epoch_objective(&mut tape, &model, &inputs, &splits, &SmoothingConfig::default(), 0, 0).unwrap();
    assert!(loss.size.is_some());
    assert!(tape.value(loss.total).item().is_finite());
}

/// Every gradient case, by name.
pub const ALL: &[(&str, fn())] = &[
    ("matmul_grad", matmul_grad),
    ("spmm_grad", spmm_grad),
    ("elementwise_binary_grads", elementwise_binary_grads),
    ("broadcast_grads", broadcast_grads),
    ("unary_grads", unary_grads),
    ("reduction_and_gather_grads", reduction_and_gather_grads),
    ("dropout_grad", dropout_grad),
    ("cross_entropy_grad", cross_entropy_grad),
    ("soft_rank_grad", soft_rank_grad),
    ("attention_grad", attention_grad),
    ("smooth_quantile_grad", smooth_quantile_grad),
    ("soft_membership_grad", soft_membership_grad),
    ("size_loss_grads", size_loss_grads),
    ("rocp_loss_composite_grad", rocp_loss_composite_grad),
    ("gnn_forward_cross_entropy_grads", gnn_forward_cross_entropy_grads),
    ("full_epoch_objective_grad", full_epoch_objective_grad),
    ("one_layer_gcn_rocp_objective_grad", one_layer_gcn_rocp_objective_grad),
    ("generated_splits_feed_the_objective", generated_splits_feed_the_objective),
];
