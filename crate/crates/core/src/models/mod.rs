//! Transductive node classifiers: GCN, GAT, GraphSAGE (mean) and APPNP.
//!
//! Every architecture maps the full feature matrix to an `n × K` logit matrix
//! in one pass over the whole graph. Parameters live outside the tape in a
//! [`ModelParams`] list and are registered as leaves on every forward pass.

use std::fmt;
use std::str::FromStr;
use std::sync::Arc;

use rand::{Rng, RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Result, RocpError};
use crate::graph::{neighbor_mean_operator, normalize, with_self_loops, GraphDataset};
use crate::tensor::{softmax_rows, Matrix, SparseMatrix, Tape, Var};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Arch {
    Gcn,
    Gat,
    Sage,
    Appnp,
}

impl Arch {
    pub const ALL: [Arch; 4] = [Arch::Gcn, Arch::Gat, Arch::Sage, Arch::Appnp];

    pub fn name(self) -> &'static str {
        match self {
            Arch::Gcn => "gcn",
            Arch::Gat => "gat",
            Arch::Sage => "sage",
            Arch::Appnp => "appnp",
        }
    }
}

impl fmt::Display for Arch {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Arch {
    type Err = RocpError;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "gcn" => Ok(Arch::Gcn),
            "gat" => Ok(Arch::Gat),
            "sage" | "graphsage" => Ok(Arch::Sage),
            "appnp" => Ok(Arch::Appnp),
            other => Err(RocpError::InvalidArgument(format!("unknown architecture `{other}`"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelConfig {
    pub arch: Arch,
    pub hidden_dim: usize,
    pub num_layers: usize,
    pub dropout: f64,
    pub gat_heads: usize,
    pub gat_slope: f64,
    pub appnp_alpha: f64,
    pub appnp_iters: usize,
}

impl ModelConfig {
    /// Canonical settings for each architecture on citation benchmarks.
    pub fn default_for(arch: Arch) -> Self {
        Self {
            arch,
            hidden_dim: if arch == Arch::Gat { 8 } else { 64 },
            num_layers: 2,
            dropout: 0.5,
            gat_heads: 8,
            gat_slope: 0.2,
            appnp_alpha: 0.1,
            appnp_iters: 10,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(RocpError::InvalidArgument(m));
        if self.hidden_dim == 0 {
            return bad("hidden_dim must be at least 1".into());
        }
        if self.num_layers == 0 {
            return bad("num_layers must be at least 1".into());
        }
        if !(0.0..1.0).contains(&self.dropout) {
            return bad(format!("dropout {} outside [0, 1)", self.dropout));
        }
        if self.arch == Arch::Gat && self.gat_heads == 0 {
            return bad("gat_heads must be at least 1".into());
        }
        if !(self.appnp_alpha > 0.0 && self.appnp_alpha <= 1.0) {
            return bad(format!("appnp_alpha {} outside (0, 1]", self.appnp_alpha));
        }
        Ok(())
    }
}

/// Named trainable matrices in a fixed layout determined by the config.
#[derive(Debug, Clone, PartialEq)]
pub struct ModelParams {
    pub names: Vec<String>,
    pub values: Vec<Matrix>,
}

impl ModelParams {
    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn shapes(&self) -> Vec<(usize, usize)> {
        self.values.iter().map(Matrix::shape).collect()
    }
}

fn glorot<R: Rng>(rng: &mut R, fan_in: usize, fan_out: usize) -> Matrix {
    let limit = (6.0 / (fan_in + fan_out) as f64).sqrt();
    Matrix::from_fn(fan_in, fan_out, |_, _| rng.random_range(-limit..=limit))
}

/// Graph operators shared by all forward passes over one dataset.
#[derive(Debug, Clone)]
pub struct GraphInputs {
    pub features: Matrix,
    pub norm_adj: Arc<SparseMatrix>,
    pub mean_adj: Arc<SparseMatrix>,
    pub attn_adj: Arc<SparseMatrix>,
    pub labels: Vec<usize>,
    pub num_classes: usize,
}

impl GraphInputs {
    pub fn new(g: &GraphDataset) -> Self {
        Self {
            features: g.features().clone(),
            norm_adj: Arc::clone(normalize(g).matrix()),
            mean_adj: neighbor_mean_operator(g),
            attn_adj: with_self_loops(g),
            labels: g.labels().to_vec(),
            num_classes: g.num_classes(),
        }
    }

    pub fn num_nodes(&self) -> usize {
        self.features.rows()
    }
}

/// Layer widths `[d, h, …, h, K]` for `num_layers` layers.
fn widths(cfg: &ModelConfig, d: usize, k: usize) -> Vec<usize> {
    let mut w = vec![d];
    w.extend(std::iter::repeat_n(cfg.hidden_dim, cfg.num_layers - 1));
    w.push(k);
    w
}

/// A configured architecture with its parameters.
#[derive(Debug, Clone, PartialEq)]
pub struct Model {
    pub config: ModelConfig,
    pub params: ModelParams,
    pub num_features: usize,
    pub num_classes: usize,
}

impl Model {
    /// Glorot-uniform weights and zero biases, deterministic in `seed`.
    pub fn init(config: ModelConfig, d: usize, k: usize, seed: u64) -> Result<Self> {
        config.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut names = Vec::new();
        let mut values = Vec::new();
        let mut add = |name: String, m: Matrix| {
            names.push(name);
            values.push(m);
        };
        let w = widths(&config, d, k);
        match config.arch {
            Arch::Gcn | Arch::Appnp => {
                for l in 0..config.num_layers {
                    add(format!("layer{l}.weight"), glorot(&mut rng, w[l], w[l + 1]));
                    add(format!("layer{l}.bias"), Matrix::zeros(1, w[l + 1]));
                }
            }
            Arch::Sage => {
                for l in 0..config.num_layers {
                    add(format!("layer{l}.weight"), glorot(&mut rng, 2 * w[l], w[l + 1]));
                    add(format!("layer{l}.bias"), Matrix::zeros(1, w[l + 1]));
                }
            }
            Arch::Gat => {
                let heads = config.gat_heads;
                let mut fan_in = d;
                for l in 0..config.num_layers {
                    let last = l + 1 == config.num_layers;
                    let out = if last { k } else { config.hidden_dim };
                    for h in 0..heads {
                        add(format!("layer{l}.head{h}.weight"), glorot(&mut rng, fan_in, out));
                        add(format!("layer{l}.head{h}.att_src"), glorot(&mut rng, out, 1));
                        add(format!("layer{l}.head{h}.att_dst"), glorot(&mut rng, out, 1));
                    }
                    let width = if last { out } else { out * heads };
                    add(format!("layer{l}.bias"), Matrix::zeros(1, width));
                    fan_in = width;
                }
            }
        }
        Ok(Self {
            config,
            params: ModelParams { names, values },
            num_features: d,
            num_classes: k,
        })
    }

    /// Records the forward pass on `tape`.
    ///
    /// Dropout is active exactly when `dropout_rng` is given. Returns the logits and
    /// the parameter leaves in the order of `self.params`.
    pub fn forward(
        &self,
        tape: &mut Tape,
        inputs: &GraphInputs,
        mut dropout_rng: Option<&mut dyn RngCore>,
    ) -> Result<(Var, Vec<Var>)> {
        if inputs.features.cols() != self.num_features {
            return Err(RocpError::Shape {
                op: "forward",
                lhs: inputs.features.shape(),
                rhs: (self.num_features, self.num_classes),
            });
        }
        let params: Vec<Var> = self.params.values.iter().map(|p| tape.param(p.clone())).collect();
        let cfg = &self.config;
        let mut h = tape.constant(inputs.features.clone());
        let mut apply_dropout = |tape: &mut Tape, v: Var| -> Result<Var> {
            match dropout_rng.as_deref_mut() {
                Some(rng) => tape.dropout(v, cfg.dropout, rng),
                None => Ok(v),
            }
        };
        let layers = cfg.num_layers;

        let logits = match cfg.arch {
            Arch::Gcn => {
                for l in 0..layers {
                    h = apply_dropout(tape, h)?;
                    let xw = tape.matmul(h, params[2 * l])?;
                    let agg = tape.spmm(&inputs.norm_adj, xw)?;
                    h = tape.add_row(agg, params[2 * l + 1])?;
                    if l + 1 < layers {
                        h = tape.relu(h);
                    }
                    check(tape, h, l)?;
                }
                h
            }
            Arch::Sage => {
                for l in 0..layers {
                    h = apply_dropout(tape, h)?;
                    let nbr = tape.spmm(&inputs.mean_adj, h)?;
                    let cat = tape.concat_cols(h, nbr)?;
                    let lin = tape.matmul(cat, params[2 * l])?;
                    h = tape.add_row(lin, params[2 * l + 1])?;
                    if l + 1 < layers {
                        h = tape.relu(h);
                    }
                    check(tape, h, l)?;
                }
                h
            }
            Arch::Appnp => {
                for l in 0..layers {
                    h = apply_dropout(tape, h)?;
                    let lin = tape.matmul(h, params[2 * l])?;
                    h = tape.add_row(lin, params[2 * l + 1])?;
                    if l + 1 < layers {
                        h = tape.relu(h);
                    }
                    check(tape, h, l)?;
                }
                let alpha = cfg.appnp_alpha;
                let z0 = h;
                let teleport = tape.scale(z0, alpha);
                let mut z = z0;
                if alpha < 1.0 {
                    for _ in 0..cfg.appnp_iters {
                        let prop = tape.spmm(&inputs.norm_adj, z)?;
                        let damped = tape.scale(prop, 1.0 - alpha);
                        z = tape.add(damped, teleport)?;
                    }
                }
                check(tape, z, layers)?;
                z
            }
            Arch::Gat => {
                let heads = cfg.gat_heads;
                let per_layer = 3 * heads + 1;
                for l in 0..layers {
                    let last = l + 1 == layers;
                    let base = l * per_layer;
                    h = apply_dropout(tape, h)?;
                    let mut combined: Option<Var> = None;
                    for hd in 0..heads {
                        let w = params[base + 3 * hd];
                        let wh = tape.matmul(h, w)?;
                        let src = tape.matmul(wh, params[base + 3 * hd + 1])?;
                        let dst = tape.matmul(wh, params[base + 3 * hd + 2])?;
                        let out = tape.attention_aggregate(wh, src, dst, &inputs.attn_adj, cfg.gat_slope)?;
                        combined = Some(match combined {
                            None => out,
                            Some(acc) if last => tape.add(acc, out)?,
                            Some(acc) => tape.concat_cols(acc, out)?,
                        });
                    }
                    let mut out = combined.expect("at least one head");
                    if last && heads > 1 {
                        out = tape.scale(out, 1.0 / heads as f64);
                    }
                    h = tape.add_row(out, params[base + per_layer - 1])?;
                    if !last {
                        h = tape.elu(h, 1.0);
                    }
                    check(tape, h, l)?;
                }
                h
            }
        };
        Ok((logits, params))
    }

    /// Evaluation-mode logits (dropout off).
    pub fn logits(&self, inputs: &GraphInputs) -> Result<Matrix> {
        let mut tape = Tape::new();
        let (out, _) = self.forward(&mut tape, inputs, None)?;
        Ok(tape.value(out).clone())
    }

    /// Evaluation-mode class probabilities.
    pub fn predict_proba(&self, inputs: &GraphInputs) -> Result<Matrix> {
        Ok(predict_proba(&self.logits(inputs)?))
    }

    /// Attention weights of every head in the first GAT layer, aligned with
    /// `inputs.attn_adj.values()`. Empty for other architectures.
    pub fn first_layer_attention(&self, inputs: &GraphInputs) -> Result<Vec<Vec<f64>>> {
        if self.config.arch != Arch::Gat {
            return Ok(Vec::new());
        }
        let x = &inputs.features;
        (0..self.config.gat_heads)
            .map(|hd| {
                let wh = x.matmul(&self.params.values[3 * hd])?;
                let src = wh.matmul(&self.params.values[3 * hd + 1])?;
                let dst = wh.matmul(&self.params.values[3 * hd + 2])?;
                Ok(crate::tensor::attention_weights(&inputs.attn_adj, &src, &dst, self.config.gat_slope).1)
            })
            .collect()
    }
}

fn check(tape: &Tape, v: Var, layer: usize) -> Result<()> {
    if tape.value(v).is_finite() {
        Ok(())
    } else {
        Err(RocpError::NonFiniteActivation(format!("layer{layer}")))
    }
}

/// Row-wise softmax of logits.
pub fn predict_proba(logits: &Matrix) -> Matrix {
    softmax_rows(logits)
}
