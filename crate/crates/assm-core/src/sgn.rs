//! Semantic guided neighboring: a stable permutation that gathers pixels
//! sharing a prompt label into adjacent runs, and its exact inverse.

use alloc::format;
use alloc::vec;
use alloc::vec::Vec;

use crate::error::{Error, Result};
use crate::tensor::Tensor;

/// The unfold permutation, its inverse, and the start offset of each label
/// group in the permuted sequence (length T+1).
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct SemanticPlan {
    pub perm: Vec<usize>,
    pub inv_perm: Vec<usize>,
    pub group_offsets: Vec<usize>,
}

impl SemanticPlan {
    pub fn len(&self) -> usize {
        self.perm.len()
    }

    pub fn is_empty(&self) -> bool {
        self.perm.is_empty()
    }

    pub fn identity(l: usize) -> SemanticPlan {
        SemanticPlan {
            perm: (0..l).collect(),
            inv_perm: (0..l).collect(),
            group_offsets: vec![0, l],
        }
    }
}

/// Stable counting sort of indices by label; groups are concatenated in
/// ascending label order.
pub fn build_plan(labels: &[usize], t: usize) -> Result<SemanticPlan> {
    let l = labels.len();
    if let Some(&bad) = labels.iter().find(|&&lb| lb >= t) {
        return Err(Error::Domain(format!(
            "label {bad} out of range for {t} prompts"
        )));
    }
    let mut counts = vec![0usize; t];
    for &lb in labels {
        counts[lb] += 1;
    }
    let mut group_offsets = vec![0usize; t + 1];
    for i in 0..t {
        group_offsets[i + 1] = group_offsets[i] + counts[i];
    }
    let mut cursor = group_offsets[..t].to_vec();
    let mut perm = vec![0usize; l];
    for (idx, &lb) in labels.iter().enumerate() {
        perm[cursor[lb]] = idx;
        cursor[lb] += 1;
    }
    let mut inv_perm = vec![0usize; l];
    for (i, &p) in perm.iter().enumerate() {
        inv_perm[p] = i;
    }
    Ok(SemanticPlan {
        perm,
        inv_perm,
        group_offsets,
    })
}

fn gather_rows(x: &Tensor, order: &[usize], op: &str) -> Result<Tensor> {
    if x.rank() != 2 || x.shape()[0] != order.len() {
        return Err(Error::Dimension(format!(
            "{op}: input {:?} vs plan length {}",
            x.shape(),
            order.len()
        )));
    }
    let c = x.shape()[1];
    let mut out = Tensor::zeros(&[order.len(), c]);
    for (i, &src) in order.iter().enumerate() {
        out.data_mut()[i * c..(i + 1) * c].copy_from_slice(x.row(src));
    }
    Ok(out)
}

/// out[i] = x[perm[i]]
pub fn sgn_unfold(x: &Tensor, plan: &SemanticPlan) -> Result<Tensor> {
    gather_rows(x, &plan.perm, "sgn_unfold")
}

/// Exact inverse of `sgn_unfold`.
pub fn sgn_fold(y: &Tensor, plan: &SemanticPlan) -> Result<Tensor> {
    gather_rows(y, &plan.inv_perm, "sgn_fold")
}
