use std::sync::Arc;

/// Index value that produces a zero row in [`Op::Gather`].
pub const ZERO_ROW: u32 = u32::MAX;

/// Differentiable primitives. Shapes are interpreted as matrices whose column
/// count is the trailing dimension.
#[derive(Debug, Clone, PartialEq)]
pub enum Op {
    Leaf,
    Add,
    Sub,
    Mul,
    Scale(f64),
    AddScalar(f64),
    /// `[N, C] + [C]`
    AddRow,
    /// `[N, C] ⊙ [C]`
    MulRow,
    /// `[N, K] × [K, M]`
    MatMul,
    /// Multi-head softmax attention over packed `q|k|v` rows `[G·L, 3C]`
    /// grouped in runs of `group_len` tokens. Output `[G·L, C]`.
    Attention { heads: usize, group_len: usize },
    /// Row softmax over the trailing dimension.
    Softmax,
    /// tanh-approximated GELU.
    Gelu,
    Square,
    Sqrt,
    /// `[.., 2] → [..]`, modulus of (re, im) pairs. Subgradient 0 at the origin.
    Magnitude,
    /// Sum over the trailing dimension.
    SumLast,
    Sum,
    Mean,
    /// Row gather `out[i] = in[index[i]]`; [`ZERO_ROW`] yields zeros.
    Gather { index: Arc<[u32]> },
    Reshape { shape: Vec<usize> },
    /// Bilinear 2× upsampling (half-pixel centres, edge clamped) of
    /// `images` feature maps stored as `[images·h·w, C]`.
    Upsample2x { images: usize, height: usize, width: usize },
    /// Per-column standardization using batch statistics.
    BatchNorm { eps: f64 },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum OpKind {
    Leaf,
    Add,
    Sub,
    Mul,
    Scale,
    AddScalar,
    AddRow,
    MulRow,
    MatMul,
    Attention,
    Softmax,
    Gelu,
    Square,
    Sqrt,
    Magnitude,
    SumLast,
    Sum,
    Mean,
    Gather,
    Reshape,
    Upsample2x,
    BatchNorm,
}

impl OpKind {
    pub const ALL: [OpKind; 22] = [
        OpKind::Leaf,
        OpKind::Add,
        OpKind::Sub,
        OpKind::Mul,
        OpKind::Scale,
        OpKind::AddScalar,
        OpKind::AddRow,
        OpKind::MulRow,
        OpKind::MatMul,
        OpKind::Attention,
        OpKind::Softmax,
        OpKind::Gelu,
        OpKind::Square,
        OpKind::Sqrt,
        OpKind::Magnitude,
        OpKind::SumLast,
        OpKind::Sum,
        OpKind::Mean,
        OpKind::Gather,
        OpKind::Reshape,
        OpKind::Upsample2x,
        OpKind::BatchNorm,
    ];
}

impl Op {
    pub fn kind(&self) -> OpKind {
        match self {
            Op::Leaf => OpKind::Leaf,
            Op::Add => OpKind::Add,
            Op::Sub => OpKind::Sub,
            Op::Mul => OpKind::Mul,
            Op::Scale(_) => OpKind::Scale,
            Op::AddScalar(_) => OpKind::AddScalar,
            Op::AddRow => OpKind::AddRow,
            Op::MulRow => OpKind::MulRow,
            Op::MatMul => OpKind::MatMul,
            Op::Attention { .. } => OpKind::Attention,
            Op::Softmax => OpKind::Softmax,
            Op::Gelu => OpKind::Gelu,
            Op::Square => OpKind::Square,
            Op::Sqrt => OpKind::Sqrt,
            Op::Magnitude => OpKind::Magnitude,
            Op::SumLast => OpKind::SumLast,
            Op::Sum => OpKind::Sum,
            Op::Mean => OpKind::Mean,
            Op::Gather { .. } => OpKind::Gather,
            Op::Reshape { .. } => OpKind::Reshape,
            Op::Upsample2x { .. } => OpKind::Upsample2x,
            Op::BatchNorm { .. } => OpKind::BatchNorm,
        }
    }

    pub fn arity(&self) -> usize {
        match self {
            Op::Leaf => 0,
            Op::Add | Op::Sub | Op::Mul | Op::AddRow | Op::MulRow | Op::MatMul => 2,
            _ => 1,
        }
    }
}

/// Forward by-products kept for the backward pass.
#[derive(Debug, Clone, Default, PartialEq)]
pub enum Aux<R> {
    #[default]
    None,
    /// Attention probabilities `[G, heads, L, L]`.
    Probs(Vec<R>),
    /// Batch-norm column means and inverse standard deviations.
    Norm { mean: Vec<R>, inv_std: Vec<R> },
}
