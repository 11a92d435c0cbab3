use super::EvalError;

fn ln_choose(n: u64, k: u64) -> f64 {
    let k = k.min(n - k);
    (1..=k).map(|i| ((n - k + i) as f64).ln() - (i as f64).ln()).sum()
}

/// One-sided upper tail `P(X >= successes)` for `X ~ Binomial(n, p0)`.
///
/// Terms are summed in log space, so `p0^k` underflowing for large `n` does
/// not zero the result.
pub fn binomial_test(successes: u64, n: u64, p0: f64) -> Result<f64, EvalError> {
    if successes > n {
        return Err(EvalError::InvalidParams(format!("successes {successes} > n {n}")));
    }
    if !(p0 > 0.0 && p0 < 1.0) {
        return Err(EvalError::InvalidParams(format!("p0 {p0} outside (0, 1)")));
    }
    if successes == 0 {
        return Ok(1.0);
    }
    let (lp, lq) = (p0.ln(), (-p0).ln_1p());
    let mut term = ln_choose(n, successes) + successes as f64 * lp + (n - successes) as f64 * lq;
    let mut logs = Vec::with_capacity((n - successes + 1) as usize);
    for j in successes..=n {
        logs.push(term);
        if j < n {
            term += ((n - j) as f64).ln() - ((j + 1) as f64).ln() + lp - lq;
        }
    }
    let max = logs.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let sum: f64 = logs.iter().map(|l| (l - max).exp()).sum();
    Ok((max + sum.ln()).exp().clamp(0.0, 1.0))
}

/// Sample Pearson product-moment correlation.
pub fn pearson(xs: &[f64], ys: &[f64]) -> Result<f64, EvalError> {
    if xs.len() != ys.len() {
        return Err(EvalError::LengthMismatch {
            left: xs.len(),
            right: ys.len(),
        });
    }
    if xs.len() < 2 {
        return Err(EvalError::InsufficientData);
    }
    let n = xs.len() as f64;
    let mx = xs.iter().sum::<f64>() / n;
    let my = ys.iter().sum::<f64>() / n;
    let (mut sxy, mut sxx, mut syy) = (0.0, 0.0, 0.0);
    for (x, y) in xs.iter().zip(ys) {
        let (dx, dy) = (x - mx, y - my);
        sxy += dx * dy;
        sxx += dx * dx;
        syy += dy * dy;
    }
    if sxx == 0.0 || syy == 0.0 {
        return Err(EvalError::ConstantSeries);
    }
    Ok((sxy / (sxx.sqrt() * syy.sqrt())).clamp(-1.0, 1.0))
}
