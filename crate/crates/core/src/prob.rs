//! Binomial primitives and the truncated tally distribution carried between rounds.
//!
//! A [`TallyPmf`] holds the probability that the audit is still running with
//! exactly `k` winner ballots among the relevant ballots drawn so far. After a
//! round's decision the mass at and above that round's `kmin` is removed
//! ("lopped"), and the next round's draws are folded in by convolution with a
//! binomial.

use rustfft::num_complex::Complex;
use rustfft::FftPlanner;
use serde::{Deserialize, Serialize};
use statrs::function::factorial::ln_binomial;

use crate::error::{domain, Result};

/// Terms whose natural log falls below this are treated as zero. It keeps the
/// first term of a tail sum in normal (not subnormal) range.
const LN_NEGLIGIBLE: f64 = -700.0;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Hypothesis {
    /// Tied contest: each relevant ballot is a winner vote with probability 1/2.
    Null,
    /// Contest as announced: winner fraction `p` among relevant ballots.
    Alt { p: f64 },
}

impl Hypothesis {
    pub fn success_prob(&self) -> f64 {
        match self {
            Hypothesis::Null => 0.5,
            Hypothesis::Alt { p } => *p,
        }
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ConvolutionMethod {
    #[default]
    Direct,
    Fft,
}

/// Neumaier-compensated running sum.
#[derive(Debug, Clone, Copy, Default)]
pub struct CompensatedSum {
    sum: f64,
    comp: f64,
}

impl CompensatedSum {
    pub fn add(&mut self, x: f64) {
        let t = self.sum + x;
        if self.sum.abs() >= x.abs() {
            self.comp += (self.sum - t) + x;
        } else {
            self.comp += (x - t) + self.sum;
        }
        self.sum = t;
    }

    pub fn value(&self) -> f64 {
        self.sum + self.comp
    }
}

fn check_q(q: f64) -> Result<()> {
    if !(0.0..=1.0).contains(&q) || q.is_nan() {
        return Err(domain(format!("success probability {q} outside [0, 1]")));
    }
    Ok(())
}

fn ln_pmf_unchecked(k: u64, n: u64, q: f64) -> f64 {
    if q == 0.0 {
        return if k == 0 { 0.0 } else { f64::NEG_INFINITY };
    }
    if q == 1.0 {
        return if k == n { 0.0 } else { f64::NEG_INFINITY };
    }
    ln_binomial(n, k) + k as f64 * q.ln() + (n - k) as f64 * (-q).ln_1p()
}

fn mode(n: u64, q: f64) -> u64 {
    (((n + 1) as f64 * q).floor() as u64).min(n)
}

/// Natural log of the binomial probability of `k` successes in `n` trials.
pub fn ln_binom_pmf(k: u64, n: u64, q: f64) -> Result<f64> {
    check_q(q)?;
    if k > n {
        return Err(domain(format!("winner count {k} exceeds draws {n}")));
    }
    Ok(ln_pmf_unchecked(k, n, q))
}

pub fn binom_pmf(k: u64, n: u64, q: f64) -> Result<f64> {
    ln_binom_pmf(k, n, q).map(f64::exp)
}

/// `P[X >= k]` for `X ~ Binomial(n, q)`.
///
/// Sums from the largest non-negligible `x` down towards `k` so that the
/// smallest addends are accumulated first.
pub fn binom_tail(k: u64, n: u64, q: f64) -> Result<f64> {
    check_q(q)?;
    if k > n + 1 {
        return Err(domain(format!(
            "tail index {k} exceeds draws + 1 = {}",
            n + 1
        )));
    }
    if k == 0 {
        return Ok(1.0);
    }
    if k == n + 1 || q == 0.0 {
        return Ok(0.0);
    }
    if q == 1.0 {
        return Ok(1.0);
    }
    let m = mode(n, q);
    // Largest x >= max(k, m) with a representable term; ln pmf is concave so
    // it is decreasing on [m, n].
    let start = k.max(m);
    if ln_pmf_unchecked(start, n, q) < LN_NEGLIGIBLE {
        return Ok(0.0);
    }
    let (mut lo, mut hi) = (start, n);
    while lo < hi {
        let mid = lo + (hi - lo).div_ceil(2);
        if ln_pmf_unchecked(mid, n, q) >= LN_NEGLIGIBLE {
            lo = mid;
        } else {
            hi = mid - 1;
        }
    }
    let top = lo;
    let odds_down = (1.0 - q) / q;
    let mut term = ln_pmf_unchecked(top, n, q).exp();
    let mut acc = CompensatedSum::default();
    let mut x = top;
    loop {
        acc.add(term);
        if x == k {
            break;
        }
        // term(x-1) = term(x) * x / (n - x + 1) * (1-q)/q
        term *= x as f64 / (n - x + 1) as f64 * odds_down;
        x -= 1;
        if x < m && (term == 0.0 || term < acc.value() * 1e-20) {
            break;
        }
    }
    Ok(acc.value().min(1.0))
}

/// Dense `Binomial(n, q)` pmf, built outward from the mode and normalised.
pub fn binom_pmf_vec(n: u64, q: f64) -> Result<Vec<f64>> {
    check_q(q)?;
    let len = n as usize + 1;
    let mut v = vec![0.0; len];
    if q == 0.0 {
        v[0] = 1.0;
        return Ok(v);
    }
    if q == 1.0 {
        v[len - 1] = 1.0;
        return Ok(v);
    }
    let m = mode(n, q);
    let odds = q / (1.0 - q);
    v[m as usize] = ln_pmf_unchecked(m, n, q).exp();
    for x in m..n {
        let next = v[x as usize] * (n - x) as f64 / (x + 1) as f64 * odds;
        if next == 0.0 {
            break;
        }
        v[x as usize + 1] = next;
    }
    for x in (1..=m).rev() {
        let next = v[x as usize] * x as f64 / (n - x + 1) as f64 / odds;
        if next == 0.0 {
            break;
        }
        v[x as usize - 1] = next;
    }
    let mut total = CompensatedSum::default();
    for &t in &v {
        total.add(t);
    }
    let total = total.value();
    for t in &mut v {
        *t /= total;
    }
    Ok(v)
}

fn nonzero_window(v: &[f64]) -> Option<(usize, usize)> {
    let lo = v.iter().position(|&x| x != 0.0)?;
    let hi = v.iter().rposition(|&x| x != 0.0)?;
    Some((lo, hi))
}

/// Probability mass over the cumulative winner count, for audits still running.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TallyPmf {
    hypothesis: Hypothesis,
    draws_total: u64,
    mass: Vec<f64>,
    removed_total: f64,
}

impl TallyPmf {
    /// Point mass at zero before any ballot is drawn.
    pub fn initial(hypothesis: Hypothesis) -> Result<Self> {
        check_q(hypothesis.success_prob())?;
        Ok(TallyPmf {
            hypothesis,
            draws_total: 0,
            mass: vec![1.0],
            removed_total: 0.0,
        })
    }

    /// Binomial pmf after a single round of `n` draws.
    pub fn fresh(hypothesis: Hypothesis, n: u64) -> Result<Self> {
        Ok(TallyPmf {
            hypothesis,
            draws_total: n,
            mass: binom_pmf_vec(n, hypothesis.success_prob())?,
            removed_total: 0.0,
        })
    }

    pub(crate) fn from_parts(
        hypothesis: Hypothesis,
        draws_total: u64,
        mass: Vec<f64>,
        removed_total: f64,
    ) -> Self {
        debug_assert!(!mass.is_empty() && mass.len() as u64 <= draws_total + 1);
        TallyPmf {
            hypothesis,
            draws_total,
            mass,
            removed_total,
        }
    }

    pub fn hypothesis(&self) -> Hypothesis {
        self.hypothesis
    }

    pub fn draws_total(&self) -> u64 {
        self.draws_total
    }

    pub fn support_max(&self) -> u64 {
        self.mass.len() as u64 - 1
    }

    pub fn mass(&self) -> &[f64] {
        &self.mass
    }

    /// Mass at `k`, zero outside the support.
    pub fn at(&self, k: u64) -> f64 {
        self.mass.get(k as usize).copied().unwrap_or(0.0)
    }

    /// Total mass removed by all truncations so far.
    pub fn removed_total(&self) -> f64 {
        self.removed_total
    }

    pub fn total_mass(&self) -> f64 {
        let mut acc = CompensatedSum::default();
        for &x in self.mass.iter().rev() {
            acc.add(x);
        }
        acc.value()
    }

    /// Mass at `k` and above.
    pub fn upper_tail(&self, k: u64) -> f64 {
        let mut acc = CompensatedSum::default();
        for &x in self.mass.iter().skip(k as usize).rev() {
            acc.add(x);
        }
        acc.value()
    }

    /// All upper tails: entry `k` is the mass at `k` and above, for `k` in
    /// `0..=support_max + 1`.
    pub fn upper_tails(&self) -> Vec<f64> {
        let mut out = vec![0.0; self.mass.len() + 1];
        let mut acc = CompensatedSum::default();
        for k in (0..self.mass.len()).rev() {
            acc.add(self.mass[k]);
            out[k] = acc.value();
        }
        out
    }

    /// Zero the mass at `k >= kmin`, returning the truncated pmf and the removed mass.
    ///
    /// A `kmin` beyond the support is a no-op.
    pub fn truncate_above(&self, kmin: u64) -> Result<(TallyPmf, f64)> {
        if kmin == 0 {
            return Err(domain("kmin = 0 would remove the entire distribution"));
        }
        if kmin > self.support_max() {
            return Ok((self.clone(), 0.0));
        }
        let removed = self.upper_tail(kmin);
        let mut mass = self.mass.clone();
        mass.truncate(kmin as usize);
        Ok((
            TallyPmf {
                hypothesis: self.hypothesis,
                draws_total: self.draws_total,
                mass,
                removed_total: self.removed_total + removed,
            },
            removed,
        ))
    }

    pub fn convolve_round(&self, new_draws: u64) -> Result<TallyPmf> {
        self.convolve_round_with(new_draws, ConvolutionMethod::Direct)
    }

    /// Fold in `new_draws` ballots drawn with this pmf's success probability.
    pub fn convolve_round_with(
        &self,
        new_draws: u64,
        method: ConvolutionMethod,
    ) -> Result<TallyPmf> {
        if new_draws == 0 {
            return Err(domain("a round must draw at least one ballot"));
        }
        let q = self.hypothesis.success_prob();
        let out_len = self.mass.len() + new_draws as usize;
        let mass = if new_draws == 1 {
            let mut out = vec![0.0; out_len];
            for (k, &f) in self.mass.iter().enumerate() {
                out[k] += f * (1.0 - q);
                out[k + 1] += f * q;
            }
            out
        } else {
            let b = binom_pmf_vec(new_draws, q)?;
            match method {
                ConvolutionMethod::Direct => convolve_direct(&self.mass, &b),
                ConvolutionMethod::Fft => convolve_fft(&self.mass, &b),
            }
        };
        debug_assert_eq!(mass.len(), out_len);
        Ok(TallyPmf {
            hypothesis: self.hypothesis,
            draws_total: self.draws_total + new_draws,
            mass,
            removed_total: self.removed_total,
        })
    }
}

/// Direct convolution restricted to the nonzero windows of both inputs.
pub fn convolve_direct(f: &[f64], b: &[f64]) -> Vec<f64> {
    let mut out = vec![0.0; f.len() + b.len() - 1];
    let (Some((flo, fhi)), Some((blo, bhi))) = (nonzero_window(f), nonzero_window(b)) else {
        return out;
    };
    for (k, slot) in out
        .iter_mut()
        .enumerate()
        .take(fhi + bhi + 1)
        .skip(flo + blo)
    {
        let jlo = flo.max(k.saturating_sub(bhi));
        let jhi = fhi.min(k - blo);
        let mut acc = CompensatedSum::default();
        for j in jlo..=jhi {
            acc.add(f[j] * b[k - j]);
        }
        *slot = acc.value();
    }
    out
}

/// FFT convolution; negative round-off is clamped to zero.
pub fn convolve_fft(f: &[f64], b: &[f64]) -> Vec<f64> {
    let len = f.len() + b.len() - 1;
    let mut planner = FftPlanner::<f64>::new();
    let fwd = planner.plan_fft_forward(len);
    let inv = planner.plan_fft_inverse(len);
    let pad = |v: &[f64]| {
        let mut c: Vec<Complex<f64>> = v.iter().map(|&x| Complex::new(x, 0.0)).collect();
        c.resize(len, Complex::new(0.0, 0.0));
        c
    };
    let mut fa = pad(f);
    let mut fb = pad(b);
    fwd.process(&mut fa);
    fwd.process(&mut fb);
    for (x, y) in fa.iter_mut().zip(&fb) {
        *x *= *y;
    }
    inv.process(&mut fa);
    let scale = 1.0 / len as f64;
    fa.iter().map(|c| (c.re * scale).max(0.0)).collect()
}
