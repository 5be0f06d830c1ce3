use crate::autodiff::{GatherMap, Tape, Var};
use crate::error::{MptError, Result};
use crate::tensor::{Element, Tensor};

/// Learnable per-head logit offsets indexed by relative position in a window.
#[derive(Clone, Debug, PartialEq)]
pub struct RelPosBias<T: Element = f32> {
    /// `[(2M−1)², heads]`.
    pub table: Tensor<T>,
    pub m: usize,
    pub heads: usize,
}

impl<T: Element> RelPosBias<T> {
    pub fn zeros(m: usize, heads: usize) -> Self {
        RelPosBias {
            table: Tensor::zeros([(2 * m - 1) * (2 * m - 1), heads]),
            m,
            heads,
        }
    }

    /// `[heads, M², M²]` bias.
    pub fn expand(&self) -> Result<Tensor<T>> {
        let tape = Tape::no_grad();
        Ok(rel_pos_bias(&tape.constant(self.table.clone()), self.m, self.heads)?.to_tensor())
    }
}

/// Bin of every (query, key) position pair in an `m × m` window, `[m², m²]` flattened.
pub fn rel_pos_index(m: usize) -> Vec<usize> {
    let span = 2 * m - 1;
    let mut idx = Vec::with_capacity(m * m * m * m);
    for p in 0..m * m {
        let (pi, pj) = (p / m, p % m);
        for q in 0..m * m {
            let (qi, qj) = (q / m, q % m);
            idx.push((pi + m - 1 - qi) * span + (pj + m - 1 - qj));
        }
    }
    idx
}

/// Gathers the `[heads, M², M²]` bias from a `[(2M−1)², heads]` table.
pub fn rel_pos_bias<'t, T: Element>(table: &Var<'t, T>, m: usize, heads: usize) -> Result<Var<'t, T>> {
    let bins = (2 * m - 1) * (2 * m - 1);
    if m == 0 || table.shape() != [bins, heads] {
        return Err(MptError::shape(
            "rel_pos_bias",
            format!("table {:?} for window {} with {} heads", table.shape(), m, heads),
        ));
    }
    let bin = rel_pos_index(m);
    let mm = m * m;
    let mut idx = Vec::with_capacity(heads * mm * mm);
    for head in 0..heads {
        idx.extend(bin.iter().map(|&b| (b * heads + head) as u32));
    }
    table.gather(&GatherMap::new(idx, bins * heads, vec![heads, mm, mm])?)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn unit_window_has_one_bin() {
        assert_eq!(rel_pos_index(1), vec![0]);
        let b = RelPosBias::<f64> {
            table: Tensor::full([1, 1], 0.3),
            m: 1,
            heads: 1,
        };
        assert_eq!(b.expand().unwrap().data(), &[0.3]);
    }

    #[test]
    fn window_two_bins() {
        let idx = rel_pos_index(2);
        assert_eq!(idx.len(), 16);
        let mut distinct = idx.clone();
        distinct.sort_unstable();
        distinct.dedup();
        assert_eq!(distinct.len(), 9);
        let zero_offset = idx[0];
        assert_eq!(zero_offset, 4);
        for i in 0..4 {
            assert_eq!(idx[i * 4 + i], zero_offset);
        }
        assert!(idx.iter().all(|&b| b < 9));
    }

    #[test]
    fn table_size_is_checked() {
        let tape = Tape::<f64>::no_grad();
        assert!(rel_pos_bias(&tape.constant(Tensor::zeros([8, 1])), 2, 1).is_err());
    }
}
