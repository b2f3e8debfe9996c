//! Multi-head scaled dot-product attention with reference key/value injection.

use super::tape::softmax_rows;
use super::tensor::Matrix;
use super::DiffusionError;

/// Keys and values of one self-attention layer, one row per token.
#[derive(Debug, Clone, PartialEq)]
pub struct KvPair {
    pub keys: Matrix,
    pub values: Matrix,
}

impl KvPair {
    pub fn new(keys: Matrix, values: Matrix) -> Result<Self, DiffusionError> {
        if keys.rows != values.rows {
            return Err(DiffusionError::LayerShapeMismatch(format!(
                "{} keys but {} values",
                keys.rows, values.rows
            )));
        }
        Ok(Self { keys, values })
    }

    pub fn tokens(&self) -> usize {
        self.keys.rows
    }
}

#[derive(Debug, Clone)]
pub struct AttentionOutput {
    /// Queries × value width.
    pub output: Matrix,
    /// One queries × keys weight matrix per head.
    pub weights: Vec<Matrix>,
}

fn check_heads(what: &str, m: &Matrix, heads: usize) -> Result<usize, DiffusionError> {
    if heads == 0 || !m.cols.is_multiple_of(heads) {
        return Err(DiffusionError::LayerShapeMismatch(format!(
            "{what} width {} is not divisible into {heads} heads",
            m.cols
        )));
    }
    Ok(m.cols / heads)
}

/// Runs attention of `queries` over `kv`. Keys whose `key_mask` entry is
/// false get a logit of −∞.
pub fn attend(queries: &Matrix, kv: &KvPair, heads: usize, key_mask: Option<&[bool]>) -> Result<AttentionOutput, DiffusionError> {
    let dq = check_heads("query", queries, heads)?;
    let dk = check_heads("key", &kv.keys, heads)?;
    let dv = check_heads("value", &kv.values, heads)?;
    if dq != dk {
        return Err(DiffusionError::LayerShapeMismatch(format!(
            "query head dim {dq} differs from key head dim {dk}"
        )));
    }
    if let Some(m) = key_mask {
        if m.len() != kv.tokens() {
            return Err(DiffusionError::LayerShapeMismatch(format!(
                "key mask has {} entries for {} keys",
                m.len(),
                kv.tokens()
            )));
        }
    }
    let scale = 1.0 / (dq as f64).sqrt();
    let mut output = Matrix::zeros(queries.rows, kv.values.cols);
    let mut weights = Vec::with_capacity(heads);
    for h in 0..heads {
        let q = queries.col_slice(h * dq, dq);
        let k = kv.keys.col_slice(h * dk, dk);
        let v = kv.values.col_slice(h * dv, dv);
        let mut logits = q.matmul(&k.transpose()).scale(scale);
        if let Some(mask) = key_mask {
            for r in 0..logits.rows {
                for (c, keep) in mask.iter().enumerate() {
                    if !keep {
                        logits.set(r, c, f64::NEG_INFINITY);
                    }
                }
            }
        }
        let w = softmax_rows(&logits);
        let o = w.matmul(&v);
        for r in 0..o.rows {
            for c in 0..dv {
                output.set(r, h * dv + c, o.get(r, c));
            }
        }
        weights.push(w);
    }
    Ok(AttentionOutput { output, weights })
}

/// Concatenates the reference layer's keys/values after the main layer's
/// along the token axis. Both layers must share head count and head width.
pub fn inject_reference_kv(main: &KvPair, reference: &KvPair, heads: usize) -> Result<KvPair, DiffusionError> {
    for (what, a, b) in [("key", &main.keys, &reference.keys), ("value", &main.values, &reference.values)] {
        let da = check_heads(what, a, heads)?;
        let db = check_heads(what, b, heads)?;
        if da != db {
            return Err(DiffusionError::LayerShapeMismatch(format!(
                "main {what} head dim {da} differs from reference {db}"
            )));
        }
    }
    KvPair::new(
        main.keys.concat_rows(&reference.keys),
        main.values.concat_rows(&reference.values),
    )
}

/// Attention of main-path queries over main ⧺ reference keys/values. With
/// `mask_reference` the reference tokens are excluded via −∞ logits.
pub fn attend_with_reference(
    queries: &Matrix,
    main: &KvPair,
    reference: &KvPair,
    heads: usize,
    mask_reference: bool,
) -> Result<AttentionOutput, DiffusionError> {
    let joint = inject_reference_kv(main, reference, heads)?;
    let mask: Option<Vec<bool>> =
        mask_reference.then(|| (0..joint.tokens()).map(|i| i < main.tokens()).collect());
    attend(queries, &joint, heads, mask.as_deref())
}
