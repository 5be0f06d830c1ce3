//! Haar frequency bands and the frequency contrastive losses.

mod haar;
mod loss;
mod reblur;

pub use haar::{
    f_high, f_low, haar_dwt, haar_forward_stacked, haar_idwt, haar_inverse_stacked, FrequencyBands, HH, HL, LH, LL,
};
pub use loss::{
    cr_basic, cr_extended, cr_neg_high, cr_pos_high, cr_ratio, efcr_ex, efcr_objective, efcr_total, f_high_var,
    f_low_var, l_ext_value, ContrastiveBatch, ExMode, LossTerms, SampleTerms, EPS_DIV,
};
pub use reblur::{gaussian_blur, gaussian_kernel_1d, gaussian_reblur, gaussian_sigma, reflect_conv_taps, REBLUR_SIZES};
