#![allow(dead_code)]

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rocp_core::graph::{generate_sbm, GraphDataset, SbmConfig};
use rocp_core::{Matrix, Result, Tape};
use rocp_core::tensor::Var;

pub mod grad_cases;
pub mod oracles;

pub const STEP: f64 = 1e-4;

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

pub fn random_matrix(rng: &mut ChaCha8Rng, rows: usize, cols: usize, scale: f64) -> Matrix {
    Matrix::from_fn(rows, cols, |_, _| rng.random_range(-scale..scale))
}

/// Entries uniform in `±[gap, scale]`, away from the kink at zero.
pub fn away_from_zero(rng: &mut ChaCha8Rng, rows: usize, cols: usize, gap: f64, scale: f64) -> Matrix {
    Matrix::from_fn(rows, cols, |_, _| {
        let m = rng.random_range(gap..scale);
        if rng.random_bool(0.5) {
            m
        } else {
            -m
        }
    })
}

/// Reduces `v` to a scalar with fixed random weights so every output entry matters.
pub fn weighted_sum(tape: &mut Tape, v: Var, seed: u64) -> Var {
    let (r, c) = tape.shape(v);
    let mut g = rng(seed ^ 0xABCD);
    let w = tape.constant(random_matrix(&mut g, r, c, 1.0));
    let prod = tape.mul(v, w).unwrap();
    tape.sum(prod)
}

fn rel_err(a: f64, n: f64) -> f64 {
    (a - n).abs() / a.abs().max(n.abs()).max(1e-3)
}

/// Outcome of a finite-difference comparison.
#[derive(Debug, Clone, Copy, Default)]
pub struct GradCheck {
    /// Worst relative error over entries not classified as kinks.
    pub worst: f64,
    /// Entries whose ±STEP probe straddles a kink of a piecewise-linear
    /// activation, detected by inconsistent second differences.
    pub kinks: usize,
    pub entries: usize,
}

/// Compares the tape gradient with central finite differences.
///
/// `build` records a scalar objective given parameter values and returns it
/// together with the leaves holding those values.
pub fn grad_check<F>(values: &[Matrix], build: F) -> GradCheck
where
    F: Fn(&mut Tape, &[Matrix]) -> Result<(Var, Vec<Var>)>,
{
    let mut tape = Tape::new();
    let (loss, leaves) = build(&mut tape, values).expect("objective builds");
    let base = tape.value(loss).item();
    let mut grads = tape.backward(loss).expect("backward");
    let analytic: Vec<Matrix> = leaves.iter().map(|&l| grads.take(l)).collect();

    let eval = |vals: &[Matrix]| {
        let mut t = Tape::new();
        let (l, _) = build(&mut t, vals).expect("objective builds");
        t.value(l).item()
    };
    let mut out = GradCheck::default();
    let mut vals = values.to_vec();
    for (pi, g) in analytic.iter().enumerate() {
        for idx in 0..vals[pi].len() {
            out.entries += 1;
            let orig = vals[pi].as_slice()[idx];
            vals[pi].as_mut_slice()[idx] = orig + STEP;
            let up = eval(&vals);
            vals[pi].as_mut_slice()[idx] = orig - STEP;
            let down = eval(&vals);
            vals[pi].as_mut_slice()[idx] = orig;
            let a = g.as_slice()[idx];
            let numeric = (up - down) / (2.0 * STEP);
            let e = rel_err(a, numeric);
            if e > 1e-4 {
                // second differences at STEP and STEP/2 agree for smooth objectives
                // and differ by O(jump/STEP) when the probe crosses a kink
                let half = STEP / 2.0;
                vals[pi].as_mut_slice()[idx] = orig + half;
                let up_half = eval(&vals);
                vals[pi].as_mut_slice()[idx] = orig - half;
                let down_half = eval(&vals);
                vals[pi].as_mut_slice()[idx] = orig;
                let d2 = (up - 2.0 * base + down) / (STEP * STEP);
                let d2_half = (up_half - 2.0 * base + down_half) / (half * half);
                if (d2 - d2_half).abs() > 1e-2 * d2.abs().max(d2_half.abs()).max(1.0) {
                    out.kinks += 1;
                    continue;
                }
                if std::env::var_os("GRAD_DEBUG").is_some() {
                    eprintln!("param {pi} entry {idx}: analytic {a} numeric {numeric}");
                }
            }
            out.worst = out.worst.max(e);
        }
    }
    out
}

/// Worst relative error with no kink allowance.
pub fn max_grad_error<F>(values: &[Matrix], build: F) -> f64
where
    F: Fn(&mut Tape, &[Matrix]) -> Result<(Var, Vec<Var>)>,
{
    let c = grad_check(values, build);
    if c.kinks > 0 {
        f64::INFINITY
    } else {
        c.worst
    }
}

/// Gradient check for an objective whose inputs are all trainable leaves.
pub fn op_grad_error<F>(values: &[Matrix], f: F) -> f64
where
    F: Fn(&mut Tape, &[Var]) -> Result<Var>,
{
    max_grad_error(values, |tape, vals| {
        let leaves: Vec<Var> = vals.iter().map(|v| tape.param(v.clone())).collect();
        let out = f(tape, &leaves)?;
        Ok((out, leaves))
    })
}

/// Small homophilous SBM used across integration tests.
pub fn small_sbm(nodes: usize, classes: usize, seed: u64) -> GraphDataset {
    generate_sbm(&SbmConfig {
        nodes,
        classes,
        p_in: 0.3,
        p_out: 0.03,
        features: 6,
        feature_signal: 1.0,
        seed,
    })
    .expect("valid sbm config")
}
