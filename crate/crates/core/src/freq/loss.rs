use crate::autodiff::Var;
use crate::error::{MptError, Result};
use crate::tensor::{Element, Tensor};

/// Guard added to every ratio denominator.
pub const EPS_DIV: f64 = 1e-8;

/// Stacked Haar bands of a differentiable image batch, channels `LL|LH|HL|HH`.
fn stacked<'t, T: Element>(x: &Var<'t, T>) -> Result<(Var<'t, T>, usize)> {
    let c = *x.shape().last().ok_or_else(|| MptError::shape("haar", "rank 0"))?;
    Ok((x.haar_dwt()?, c))
}

/// `LH | HL | HH` of a differentiable image batch.
pub fn f_high_var<'t, T: Element>(x: &Var<'t, T>) -> Result<Var<'t, T>> {
    let (s, c) = stacked(x)?;
    s.slice_last(c, 3 * c)
}

pub fn f_low_var<'t, T: Element>(x: &Var<'t, T>) -> Result<Var<'t, T>> {
    let (s, c) = stacked(x)?;
    s.slice_last(0, c)
}

/// Images and reblurred pair entering the contrastive terms, all `[n, H, W, C]`.
#[derive(Clone)]
pub struct ContrastiveBatch<'t, T: Element = f32> {
    /// Absent for unlabeled extra data.
    pub gt: Option<Var<'t, T>>,
    pub input: Var<'t, T>,
    pub output: Var<'t, T>,
    pub b_in: Option<Var<'t, T>>,
    pub b_out: Option<Var<'t, T>>,
    pub kernel_sizes: Vec<usize>,
}

impl<'t, T: Element> ContrastiveBatch<'t, T> {
    fn gt(&self) -> Result<&Var<'t, T>> {
        self.gt
            .as_ref()
            .ok_or_else(|| MptError::invalid("efcr", "ground truth required"))
    }

    fn pair(&self) -> Result<(&Var<'t, T>, &Var<'t, T>)> {
        match (&self.b_in, &self.b_out) {
            (Some(i), Some(o)) => Ok((i, o)),
            _ => Err(MptError::invalid("efcr", "reblurred pair (B_in, B_out) required")),
        }
    }

    pub fn len(&self) -> usize {
        self.input.shape().first().copied().unwrap_or(0)
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }
}

/// Per-sample `(l_pos, l_neg)`, each of shape `[n]`.
pub fn cr_basic<'t, T: Element>(b: &ContrastiveBatch<'t, T>) -> Result<(Var<'t, T>, Var<'t, T>)> {
    let gt = b.gt()?;
    let (so, c) = stacked(&b.output)?;
    let (sg, _) = stacked(gt)?;
    let (si, _) = stacked(&b.input)?;
    let ho = so.slice_last(c, 3 * c)?;
    let pos = ho
        .mean_abs_diff_per_sample(&sg.slice_last(c, 3 * c)?)?
        .add(&so.slice_last(0, c)?.mean_abs_diff_per_sample(&sg.slice_last(0, c)?)?)?;
    let neg = ho.mean_abs_diff_per_sample(&si.slice_last(c, 3 * c)?)?;
    Ok((pos, neg))
}

/// Per-sample high-frequency-only positive term.
pub fn cr_pos_high<'t, T: Element>(b: &ContrastiveBatch<'t, T>) -> Result<Var<'t, T>> {
    f_high_var(&b.output)?.mean_abs_diff_per_sample(&f_high_var(b.gt()?)?)
}

/// Per-sample high-frequency negative term.
pub fn cr_neg_high<'t, T: Element>(b: &ContrastiveBatch<'t, T>) -> Result<Var<'t, T>> {
    f_high_var(&b.output)?.mean_abs_diff_per_sample(&f_high_var(&b.input)?)
}

/// Per-sample extended term on the reblurred pair.
pub fn cr_extended<'t, T: Element>(b: &ContrastiveBatch<'t, T>) -> Result<Var<'t, T>> {
    let (b_in, b_out) = b.pair()?;
    let hb_in = f_high_var(b_in)?;
    let num = f_high_var(b_out)?.mean_abs_diff_per_sample(&hb_in)?;
    let den = f_high_var(&b.input)?
        .mean_abs_diff_per_sample(&hb_in)?
        .add_scalar(EPS_DIV);
    num.div(&den)
}

/// `(1/n) Σ l_pos / (l_neg + l_ext + ε)` as a scalar.
pub fn cr_ratio<'t, T: Element>(l_pos: &Var<'t, T>, l_neg: &Var<'t, T>, l_ext: &Var<'t, T>) -> Result<Var<'t, T>> {
    let den = l_neg.add(l_ext)?.add_scalar(EPS_DIV);
    Ok(l_pos.div(&den)?.mean())
}

/// Scalar record of one step's objective.
#[derive(Clone, Copy, Debug, Default, PartialEq)]
pub struct LossTerms {
    pub l1: f64,
    /// Sample means of the per-sample terms.
    pub l_pos: f64,
    pub l_neg: f64,
    pub l_ext: f64,
    pub l_cr: f64,
    pub total: f64,
    pub beta: f64,
    pub n: usize,
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct SampleTerms {
    pub l_pos: f64,
    pub l_neg: f64,
    pub l_ext: f64,
}

/// Combines precomputed per-sample terms: `total = l1 + β·l_cr`.
pub fn efcr_total(l1: f64, terms: &[SampleTerms], beta: f64) -> Result<LossTerms> {
    if terms.is_empty() {
        return Err(MptError::invalid("efcr_total", "n must be at least 1"));
    }
    let n = terms.len() as f64;
    let l_cr = terms
        .iter()
        .map(|t| t.l_pos / (t.l_neg + t.l_ext + EPS_DIV))
        .sum::<f64>()
        / n;
    let mean = |f: fn(&SampleTerms) -> f64| terms.iter().map(f).sum::<f64>() / n;
    Ok(LossTerms {
        l1,
        l_pos: mean(|t| t.l_pos),
        l_neg: mean(|t| t.l_neg),
        l_ext: mean(|t| t.l_ext),
        l_cr,
        total: l1 + beta * l_cr,
        beta,
        n: terms.len(),
    })
}

/// Differentiable objective plus its scalar record.
pub fn efcr_objective<'t, T: Element>(
    l1: &Var<'t, T>,
    l_pos: &Var<'t, T>,
    l_neg: &Var<'t, T>,
    l_ext: &Var<'t, T>,
    beta: f64,
) -> Result<(Var<'t, T>, LossTerms)> {
    let l_cr = cr_ratio(l_pos, l_neg, l_ext)?;
    let total = l1.add(&l_cr.scale(beta))?;
    let mean = |v: &Var<'t, T>| v.value().mean().to_f64c();
    let terms = LossTerms {
        l1: l1.value().item().to_f64c(),
        l_pos: mean(l_pos),
        l_neg: mean(l_neg),
        l_ext: mean(l_ext),
        l_cr: l_cr.value().item().to_f64c(),
        total: total.value().item().to_f64c(),
        beta,
        n: l_pos.value().numel(),
    };
    Ok((total, terms))
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum ExMode {
    /// Extra pairs have ground truth: high-frequency `l_pos′, l_neg′, l_ext′`.
    LabeledExtra,
    /// Extra images lack ground truth: main `l_pos, l_neg` with extra `l_ext′`.
    UnlabeledExtra,
}

/// Per-sample `(l_pos, l_neg, l_ext)` of the extra-data variant.
pub fn efcr_ex<'t, T: Element>(
    main: &ContrastiveBatch<'t, T>,
    extra: &ContrastiveBatch<'t, T>,
    mode: ExMode,
) -> Result<(Var<'t, T>, Var<'t, T>, Var<'t, T>)> {
    let l_ext = cr_extended(extra)?;
    let (pos, neg) = match mode {
        ExMode::LabeledExtra => (cr_pos_high(extra)?, cr_neg_high(extra)?),
        ExMode::UnlabeledExtra => cr_basic(main)?,
    };
    if pos.shape() != l_ext.shape() {
        return Err(MptError::shape(
            "efcr_ex",
            format!("main batch {:?} vs extra batch {:?}", pos.shape(), l_ext.shape()),
        ));
    }
    Ok((pos, neg, l_ext))
}

/// Non-differentiable per-sample extended term on plain tensors.
pub fn l_ext_value<T: Element>(input: &Tensor<T>, b_in: &Tensor<T>, b_out: &Tensor<T>) -> Result<f64> {
    let hi = super::f_high(input)?;
    let hb = super::f_high(b_in)?;
    let ho = super::f_high(b_out)?;
    let mad = |a: &Tensor<T>, b: &Tensor<T>| a.data().iter().zip(b.data()).map(|(&x, &y)| (x - y).abs().to_f64c()).sum::<f64>() / a.numel().max(1) as f64;
    Ok(mad(&ho, &hb) / (mad(&hi, &hb) + EPS_DIV))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::autodiff::Tape;

    fn img<'t>(tape: &'t Tape<f64>, vals: &[f64]) -> Var<'t, f64> {
        tape.constant(Tensor::from_f64([1, 2, 2, 1], vals).unwrap())
    }

    #[test]
    fn total_arithmetic_example() {
        let t = efcr_total(
            0.5,
            &[SampleTerms {
                l_pos: 2.0,
                l_neg: 1.0,
                l_ext: 1.0,
            }],
            1e-5,
        )
        .unwrap();
        assert!((t.total - 0.50001).abs() < 1e-6);
    }

    #[test]
    fn beta_zero_is_l1() {
        let s = SampleTerms {
            l_pos: 3.0,
            l_neg: 0.5,
            l_ext: 0.2,
        };
        assert_eq!(efcr_total(0.25, &[s], 0.0).unwrap().total, 0.25);
        let one = efcr_total(0.25, &[s], 1.0).unwrap().l_cr;
        let two = efcr_total(0.25, &[s, s], 1.0).unwrap().l_cr;
        assert!((one - two).abs() < 1e-15);
    }

    #[test]
    fn hand_values_on_one_block() {
        // single 2x2 block: bands are (LL, LH, HL, HH)
        let tape = Tape::<f64>::no_grad();
        let out = img(&tape, &[1.0, 2.0, 3.0, 4.0]); // 5, 2, 1, 0
        let gt = img(&tape, &[0.0, 0.0, 0.0, 2.0]); // 1, 1, 1, 1
        let inp = img(&tape, &[1.0, 1.0, 1.0, 1.0]); // 2, 0, 0, 0
        let b = ContrastiveBatch {
            gt: Some(gt),
            input: inp.clone(),
            output: out,
            b_in: Some(inp.clone()),
            b_out: Some(img(&tape, &[0.0, 0.0, 0.0, 0.0])),
            kernel_sizes: vec![3],
        };
        let (pos, neg) = cr_basic(&b).unwrap();
        // high: |2-1|+|1-1|+|0-1| over 3, low: |5-1|
        assert!((pos.value().item() - (2.0 / 3.0 + 4.0)).abs() < 1e-12);
        assert!((neg.value().item() - 1.0).abs() < 1e-12);
        // constant input equals B_in: denominator collapses to the guard
        let ext = cr_extended(&b).unwrap();
        assert_eq!(ext.value().item(), 0.0);
    }

    #[test]
    fn identical_output_and_gt_has_zero_pos() {
        let tape = Tape::<f64>::no_grad();
        let x = img(&tape, &[0.1, 0.7, 0.3, 0.2]);
        let b = ContrastiveBatch {
            gt: Some(x.clone()),
            input: img(&tape, &[0.0, 1.0, 0.0, 1.0]),
            output: x,
            b_in: None,
            b_out: None,
            kernel_sizes: vec![],
        };
        assert_eq!(cr_basic(&b).unwrap().0.value().item(), 0.0);
        assert!(cr_extended(&b).is_err());
    }
}
