//! Decision-level fusion of per-channel classifiers.
//!
//! Two schemes: the sum rule adds the members' posterior matrices and takes
//! the per-column argmax; the fused hybrid network drops each member's output
//! layer and wires all hidden layers to one shared output layer, keeping the
//! input-to-hidden connections block-diagonal (each hidden block sees only
//! its own channel).

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::mlp::{self, init_weights, Batch, MlpModel, Network};
use crate::scg::{StopRule, TrainReport};

/// Elementwise sum of `C x M` posterior matrices and the per-column argmax
/// (lowest category index on ties). Each entry is summed in ascending order
/// of its terms, so the result does not depend on member order even in the
/// last bit.
pub fn sum_rule_fuse(members: &[DMatrix<f64>]) -> Result<(DMatrix<f64>, Vec<usize>)> {
    let first = members
        .first()
        .ok_or_else(|| Error::InvalidArgument("no members to fuse".into()))?;
    let shape = first.shape();
    if let Some(m) = members.iter().find(|m| m.shape() != shape) {
        return Err(Error::InvalidArgument(format!(
            "posterior shape {:?} does not match {:?}",
            m.shape(),
            shape
        )));
    }
    let mut terms = Vec::with_capacity(members.len());
    let fused = DMatrix::from_fn(shape.0, shape.1, |i, j| {
        terms.clear();
        terms.extend(members.iter().map(|m| m[(i, j)]));
        terms.sort_by(f64::total_cmp);
        terms.iter().sum()
    });
    let predictions = argmax_columns(&fused);
    Ok((fused, predictions))
}

pub fn argmax_columns(m: &DMatrix<f64>) -> Vec<usize> {
    m.column_iter()
        .map(|col| {
            let mut best = 0;
            for c in 1..col.len() {
                if col[c] > col[best] {
                    best = c;
                }
            }
            best
        })
        .collect()
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FusionMode {
    #[default]
    SumRule,
    /// Fused network initialised from the trained members.
    Fpt,
    /// Fused network with random initialisation.
    Fnpt,
}

impl FusionMode {
    pub fn name(&self) -> &'static str {
        match self {
            FusionMode::SumRule => "sum_rule",
            FusionMode::Fpt => "fpt",
            FusionMode::Fnpt => "fnpt",
        }
    }
}

impl std::str::FromStr for FusionMode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "sum_rule" => Ok(FusionMode::SumRule),
            "fpt" => Ok(FusionMode::Fpt),
            "fnpt" => Ok(FusionMode::Fnpt),
            other => Err(Error::Config(format!(
                "unknown fusion mode '{other}' (expected sum_rule, fpt or fnpt)"
            ))),
        }
    }
}

/// K channel inputs concatenated into one layer, K hidden blocks, one dense
/// output layer. Input-to-hidden weights across blocks are pinned to zero.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FusedHybridNetwork {
    network: Network,
    input_sizes: Vec<usize>,
    hidden_sizes: Vec<usize>,
    mode: FusionMode,
}

impl FusedHybridNetwork {
    pub fn network(&self) -> &Network {
        &self.network
    }

    pub fn input_sizes(&self) -> &[usize] {
        &self.input_sizes
    }

    pub fn hidden_sizes(&self) -> &[usize] {
        &self.hidden_sizes
    }

    pub fn mode(&self) -> FusionMode {
        self.mode
    }

    pub fn n_out(&self) -> usize {
        self.network.n_out()
    }

    /// `true` for every parameter that may be non-zero.
    pub fn mask(&self) -> Vec<bool> {
        block_mask(&self.input_sizes, &self.hidden_sizes, self.network.n_out())
    }

    /// Whether every cross-block input-to-hidden weight is exactly zero.
    pub fn mask_holds(&self) -> bool {
        self.network
            .params()
            .iter()
            .zip(self.mask())
            .all(|(&w, keep)| keep || w == 0.0)
    }

    fn concat_inputs(&self, inputs: &[&DMatrix<f64>]) -> Result<DMatrix<f64>> {
        if inputs.len() != self.input_sizes.len() {
            return Err(Error::DimensionMismatch {
                expected: self.input_sizes.len(),
                got: inputs.len(),
            });
        }
        let rows = inputs[0].nrows();
        for (x, &n) in inputs.iter().zip(&self.input_sizes) {
            if x.ncols() != n {
                return Err(Error::DimensionMismatch {
                    expected: n,
                    got: x.ncols(),
                });
            }
            if x.nrows() != rows {
                return Err(Error::DimensionMismatch {
                    expected: rows,
                    got: x.nrows(),
                });
            }
        }
        Ok(concat_columns(inputs))
    }

    /// Pre-softmax outputs, one row per sample.
    pub fn logits_rows(&self, inputs: &[&DMatrix<f64>]) -> Result<DMatrix<f64>> {
        self.network.logits_rows(&self.concat_inputs(inputs)?)
    }

    /// Posterior matrix `C x batch`.
    pub fn forward(&self, inputs: &[&DMatrix<f64>]) -> Result<DMatrix<f64>> {
        self.network.forward(&self.concat_inputs(inputs)?)
    }

    pub fn predict(&self, inputs: &[&DMatrix<f64>]) -> Result<Vec<usize>> {
        self.network.predict(&self.concat_inputs(inputs)?)
    }
}

pub(crate) fn concat_columns(inputs: &[&DMatrix<f64>]) -> DMatrix<f64> {
    let rows = inputs.first().map_or(0, |x| x.nrows());
    let total: usize = inputs.iter().map(|x| x.ncols()).sum();
    let mut out = DMatrix::zeros(rows, total);
    let mut col = 0;
    for x in inputs {
        out.columns_mut(col, x.ncols()).copy_from(*x);
        col += x.ncols();
    }
    out
}

fn block_of(sizes: &[usize]) -> Vec<usize> {
    sizes
        .iter()
        .enumerate()
        .flat_map(|(b, &n)| std::iter::repeat_n(b, n))
        .collect()
}

fn block_mask(input_sizes: &[usize], hidden_sizes: &[usize], n_out: usize) -> Vec<bool> {
    let in_block = block_of(input_sizes);
    let hid_block = block_of(hidden_sizes);
    let n_in = in_block.len();
    let n_hidden = hid_block.len();
    let mut mask = vec![true; mlp::param_count(n_in, n_hidden, n_out)];
    for (h, &hb) in hid_block.iter().enumerate() {
        for (i, &ib) in in_block.iter().enumerate() {
            mask[h * n_in + i] = hb == ib;
        }
    }
    mask
}

/// Assembles a fused network. For [`FusionMode::Fpt`] the input-to-hidden
/// blocks and hidden biases are copied from the members, the output weights
/// are the members' output weights side by side, and the output bias is the
/// sum of the members' output biases, so the initial logits equal the sum of
/// the member logits. For [`FusionMode::Fnpt`] the same assembly is applied
/// to freshly initialised members seeded from `seed`.
pub fn build_fhn(members: &[MlpModel], mode: FusionMode, seed: u64) -> Result<FusedHybridNetwork> {
    let first = members
        .first()
        .ok_or_else(|| Error::InvalidArgument("FHN needs at least one member".into()))?;
    let n_out = first.n_out();
    if let Some(m) = members.iter().find(|m| m.n_out() != n_out) {
        return Err(Error::InvalidArgument(format!(
            "members disagree on category count ({} vs {n_out})",
            m.n_out()
        )));
    }
    let sources: Vec<MlpModel> = match mode {
        FusionMode::Fpt => members.to_vec(),
        FusionMode::Fnpt => members
            .iter()
            .enumerate()
            .map(|(k, m)| {
                init_weights(
                    m.n_in(),
                    m.n_hidden(),
                    n_out,
                    crate::seed::derive(seed, &format!("fnpt-block{k}")),
                )
            })
            .collect::<Result<_>>()?,
        FusionMode::SumRule => return Err(Error::InvalidArgument("sum_rule does not build a fused network".into())),
    };

    let input_sizes: Vec<usize> = sources.iter().map(MlpModel::n_in).collect();
    let hidden_sizes: Vec<usize> = sources.iter().map(MlpModel::n_hidden).collect();
    let n_in: usize = input_sizes.iter().sum();
    let n_hidden: usize = hidden_sizes.iter().sum();
    let mut net = Network::zeros(n_in, n_hidden, n_out);
    let off = net.offsets();
    let params = net.params_mut();

    let (mut in0, mut h0) = (0, 0);
    for m in &sources {
        let src = &m.network;
        for h in 0..src.n_hidden() {
            for i in 0..src.n_in() {
                params[(h0 + h) * n_in + in0 + i] = src.w1(h, i);
            }
            params[off.b1 + h0 + h] = src.b1(h);
            for c in 0..n_out {
                params[off.w2 + c * n_hidden + h0 + h] = src.w2(c, h);
            }
        }
        for c in 0..n_out {
            params[off.b2 + c] += src.b2(c);
        }
        in0 += src.n_in();
        h0 += src.n_hidden();
    }

    Ok(FusedHybridNetwork {
        network: net,
        input_sizes,
        hidden_sizes,
        mode,
    })
}

/// Per-channel inputs with shared labels.
#[derive(Debug, Clone, Copy)]
pub struct MultiBatch<'a> {
    pub inputs: &'a [&'a DMatrix<f64>],
    pub labels: &'a [usize],
}

/// Trains every unmasked parameter of the fused network with the same SCG
/// and early-stopping procedure as a single member.
pub fn train_fhn(
    fhn: &FusedHybridNetwork,
    learn: MultiBatch<'_>,
    val: MultiBatch<'_>,
    rule: StopRule,
) -> Result<(FusedHybridNetwork, TrainReport)> {
    let x_learn = fhn.concat_inputs(learn.inputs)?;
    let x_val = fhn.concat_inputs(val.inputs)?;
    let mask = fhn.mask();
    let (network, report) = mlp::train_network(
        &fhn.network,
        Some(&mask),
        Batch::new(&x_learn, learn.labels),
        Batch::new(&x_val, val.labels),
        rule,
    )?;
    Ok((FusedHybridNetwork { network, ..fhn.clone() }, report))
}
