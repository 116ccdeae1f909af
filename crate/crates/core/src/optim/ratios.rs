use crate::error::Result;
use crate::tensor::{col_max_norms, l2_norm, max_norm, row_max_norms, Tensor};

/// Weight-, row-, column- and element-wise trust ratios for one matrix.
#[derive(Debug, Clone, PartialEq)]
pub struct TrustRatios {
    pub b: f64,
    pub r: Tensor,
    pub c: Tensor,
    pub s: Tensor,
}

/// `num / den`, or 1 when either side is zero.
pub fn safe_ratio(num: f64, den: f64) -> f64 {
    if num == 0.0 || den == 0.0 {
        1.0
    } else {
        num / den
    }
}

/// LAMB's `|w|_2 / |d|_2` with `d = u + λw`.
pub fn lamb_trust_ratio(w: &Tensor, d: &Tensor) -> Result<f64> {
    w.expect_same_shape(d)?;
    Ok(safe_ratio(l2_norm(w.data())?, l2_norm(d.data())?))
}

/// Max-norm ratios at every granularity; `s[i,j] = max(max(r[i], c[j]), b)`.
pub fn merit_trust_ratios(w: &Tensor, d: &Tensor) -> Result<TrustRatios> {
    w.expect_same_shape(d)?;
    let (m, n) = w.matrix_dims()?;
    let b = safe_ratio(max_norm(w.data())?, max_norm(d.data())?);
    let r = ratio_vec(&row_max_norms(w)?, &row_max_norms(d)?);
    let c = ratio_vec(&col_max_norms(w)?, &col_max_norms(d)?);
    let mut s = Vec::with_capacity(m * n);
    for &ri in r.data() {
        for &cj in c.data() {
            s.push(ri.max(cj).max(b));
        }
    }
    Ok(TrustRatios {
        b,
        r,
        c,
        s: Tensor::from_parts_unchecked(vec![m, n], s),
    })
}

fn ratio_vec(num: &Tensor, den: &Tensor) -> Tensor {
    let data = num
        .data()
        .iter()
        .zip(den.data())
        .map(|(&a, &b)| safe_ratio(a, b))
        .collect();
    Tensor::from_parts_unchecked(num.shape().to_vec(), data)
}
