//! Ordering-equality bounds and the numeric oracles that check them.
//!
//! With `alpha = delta_net / delta_noise` and `n` simultaneous commands,
//! every target order has probability between `(1 - alpha)^n / n!` and
//! `((1 + alpha)^n - n alpha^n) / n!`; the gap is `epsilon_general`.
//! Everything here is exact except the Monte Carlo estimator.

use num_bigint::BigInt;
use num_rational::BigRational;
use num_traits::{One, Signed, ToPrimitive, Zero};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use thiserror::Error;

use crate::adversary::{AdversaryError, AdversaryStrategy};
use crate::consensus::derive_noise;
use crate::domain::{CommandId, Micros};
use crate::sro::{RevealRequest, SroError, SroHandle};

/// Largest `n` accepted by the exact integrator.
pub const MAX_INTEGRATE_N: usize = 4;

const MC_CHUNK: u64 = 1 << 14;

#[derive(Debug, Error, PartialEq)]
pub enum AnalysisError {
    #[error("alpha = {0} is outside the allowed range")]
    AlphaOutOfRange(String),
    #[error("n = {0} is out of range")]
    InvalidN(usize),
    #[error("exact integration supports n <= {MAX_INTEGRATE_N}, got {0}")]
    IntegrateTooLarge(usize),
    #[error("target order is not a permutation of 0..{0}")]
    BadTarget(usize),
    #[error("assigned timestamp {0} is outside [0, delta_net]")]
    TimestampOutOfRange(String),
    #[error("bounds must be non-negative")]
    NegativeBound,
    #[error("noise bound must be positive")]
    NonPositiveNoise,
    #[error("cannot parse `{0}` as a decimal")]
    ParseDecimal(String),
    #[error("Monte Carlo needs at least 1000 trials, got {0}")]
    TooFewTrials(u64),
    #[error("adaptive strategies have no fixed assignment")]
    AdaptiveStrategy,
    #[error(transparent)]
    Adversary(#[from] AdversaryError),
}

pub type Rational = BigRational;

fn int(x: i64) -> Rational {
    Rational::from_integer(BigInt::from(x))
}

fn factorial(n: usize) -> Rational {
    (1..=n as i64).fold(Rational::one(), |acc, k| acc * int(k))
}

fn pow(x: &Rational, n: usize) -> Rational {
    num_traits::pow(x.clone(), n)
}

fn check_alpha(alpha: &Rational, allow_one: bool) -> Result<(), AnalysisError> {
    let ok = alpha.is_positive() && (alpha < &Rational::one() || (allow_one && alpha.is_one()));
    if ok {
        Ok(())
    } else {
        Err(AnalysisError::AlphaOutOfRange(alpha.to_string()))
    }
}

/// Exact decimal such as `0.2`, `1e-4` or `3/7`.
pub fn parse_decimal(s: &str) -> Result<Rational, AnalysisError> {
    let err = || AnalysisError::ParseDecimal(s.to_string());
    let s = s.trim();
    if let Some((n, d)) = s.split_once('/') {
        let n: BigInt = n.trim().parse().map_err(|_| err())?;
        let d: BigInt = d.trim().parse().map_err(|_| err())?;
        if d.is_zero() {
            return Err(err());
        }
        return Ok(Rational::new(n, d));
    }
    let (mantissa, exp) = match s.find(['e', 'E']) {
        Some(i) => (&s[..i], s[i + 1..].parse::<i32>().map_err(|_| err())?),
        None => (s, 0),
    };
    let (neg, digits) = match mantissa.strip_prefix('-') {
        Some(rest) => (true, rest),
        None => (false, mantissa.strip_prefix('+').unwrap_or(mantissa)),
    };
    let (whole, frac) = digits.split_once('.').unwrap_or((digits, ""));
    if whole.is_empty() && frac.is_empty() {
        return Err(err());
    }
    if !whole
        .chars()
        .chain(frac.chars())
        .all(|c| c.is_ascii_digit())
    {
        return Err(err());
    }
    let numer: BigInt = format!("{whole}{frac}").parse().map_err(|_| err())?;
    let scale = exp - frac.len() as i32;
    let ten = BigInt::from(10);
    let mut q = if scale >= 0 {
        Rational::from_integer(numer * num_traits::pow(ten, scale as usize))
    } else {
        Rational::new(numer, num_traits::pow(ten, (-scale) as usize))
    };
    if neg {
        q = -q;
    }
    Ok(q)
}

pub fn to_f64(q: &Rational) -> f64 {
    q.to_f64().unwrap_or(f64::NAN)
}

/// A bound query for `n` simultaneous commands.
#[derive(Debug, Clone, PartialEq)]
pub struct BoundQuery {
    pub n: usize,
    pub alpha: Rational,
    pub delta_net: Micros,
    pub delta_noise: Micros,
}

impl BoundQuery {
    pub fn new(n: usize, delta_net: Micros, delta_noise: Micros) -> Result<Self, AnalysisError> {
        if n < 2 {
            return Err(AnalysisError::InvalidN(n));
        }
        if delta_net < 0 {
            return Err(AnalysisError::NegativeBound);
        }
        if delta_noise <= 0 {
            return Err(AnalysisError::NonPositiveNoise);
        }
        let alpha = Rational::new(BigInt::from(delta_net), BigInt::from(delta_noise));
        check_alpha(&alpha, false)?;
        Ok(BoundQuery {
            n,
            alpha,
            delta_net,
            delta_noise,
        })
    }

    pub fn epsilon(&self) -> Rational {
        epsilon_general(self.n, &self.alpha).expect("validated")
    }

    pub fn bounds(&self) -> (Rational, Rational) {
        order_prob_bounds(self.n, &self.alpha).expect("validated")
    }

    pub fn delta(&self) -> Micros {
        self.delta_net + self.delta_noise
    }
}

/// `1 - (1 - alpha)^2`: bound on `|Pr[a before b] - Pr[b before a]|`.
pub fn epsilon_pair(alpha: &Rational) -> Result<Rational, AnalysisError> {
    check_alpha(alpha, true)?;
    Ok(Rational::one() - pow(&(Rational::one() - alpha), 2))
}

/// `((1 + alpha)^n - (1 - alpha)^n - n alpha^n) / n!`.
pub fn epsilon_general(n: usize, alpha: &Rational) -> Result<Rational, AnalysisError> {
    let (lo, hi) = order_prob_bounds(n, alpha)?;
    Ok(hi - lo)
}

/// Tight `(lower, upper)` bounds on the probability of any fixed order.
pub fn order_prob_bounds(
    n: usize,
    alpha: &Rational,
) -> Result<(Rational, Rational), AnalysisError> {
    if n == 0 {
        return Err(AnalysisError::InvalidN(n));
    }
    check_alpha(alpha, true)?;
    let one = Rational::one();
    if n == 1 {
        // A single command is always in order; the closed forms only hold
        // from n = 2.
        return Ok((one.clone(), one));
    }
    let nf = factorial(n);
    let lower = pow(&(&one - alpha), n) / &nf;
    let upper = (pow(&(&one + alpha), n) - int(n as i64) * pow(alpha, n)) / &nf;
    Ok((lower, upper))
}

/// Linearizability window `delta_net + delta_noise`.
pub fn delta_linearizability(
    delta_net: Micros,
    delta_noise: Micros,
) -> Result<Micros, AnalysisError> {
    if delta_net < 0 || delta_noise < 0 {
        return Err(AnalysisError::NegativeBound);
    }
    delta_net
        .checked_add(delta_noise)
        .ok_or(AnalysisError::NegativeBound)
}

/// Polynomial with rational coefficients, lowest degree first.
#[derive(Debug, Clone, PartialEq)]
struct Poly(Vec<Rational>);

impl Poly {
    fn constant(c: Rational) -> Self {
        Poly(vec![c])
    }

    fn eval(&self, x: &Rational) -> Rational {
        self.0
            .iter()
            .rev()
            .fold(Rational::zero(), |acc, c| acc * x + c)
    }

    fn antiderivative(&self) -> Self {
        let mut out = vec![Rational::zero()];
        out.extend(
            self.0
                .iter()
                .enumerate()
                .map(|(i, c)| c / int(i as i64 + 1)),
        );
        Poly(out)
    }

    fn shifted(mut self, c: &Rational) -> Self {
        self.0[0] += c;
        self
    }

    fn scaled(self, s: &Rational) -> Self {
        Poly(self.0.into_iter().map(|c| c * s).collect())
    }
}

/// Piecewise polynomial: `pieces[0]` covers `(-inf, breaks[0])`, `pieces[i]`
/// covers `[breaks[i-1], breaks[i])` and the last covers `[breaks[last], inf)`.
#[derive(Debug, Clone)]
struct Piecewise {
    breaks: Vec<Rational>,
    pieces: Vec<Poly>,
}

impl Piecewise {
    fn piece_index(&self, x: &Rational) -> usize {
        self.breaks.partition_point(|b| b <= x)
    }

    fn eval(&self, x: &Rational) -> Rational {
        self.pieces[self.piece_index(x)].eval(x)
    }

    /// Continuous antiderivative, zero on the leftmost piece.
    fn antiderivative(&self) -> Piecewise {
        debug_assert!(self.pieces[0].0.iter().all(Zero::is_zero));
        let mut pieces = vec![Poly::constant(Rational::zero())];
        for (i, p) in self.pieces.iter().enumerate().skip(1) {
            let b = &self.breaks[i - 1];
            let prev = pieces[i - 1].eval(b);
            let raw = p.antiderivative();
            let c = prev - raw.eval(b);
            pieces.push(raw.shifted(&c));
        }
        Piecewise {
            breaks: self.breaks.clone(),
            pieces,
        }
    }

    /// `x -> (F(clamp(x, lo, hi)) - F(lo)) * scale` where `F` is `self`.
    fn clamped_increment(&self, lo: &Rational, hi: &Rational, scale: &Rational) -> Piecewise {
        let base = self.eval(lo);
        let mut breaks = vec![lo.clone()];
        breaks.extend(self.breaks.iter().filter(|b| *b > lo && *b < hi).cloned());
        breaks.push(hi.clone());
        let mut pieces = vec![Poly::constant(Rational::zero())];
        for w in breaks.windows(2) {
            let src = &self.pieces[self.piece_index(&w[0])];
            pieces.push(src.clone().shifted(&-base.clone()).scaled(scale));
        }
        pieces.push(Poly::constant((self.eval(hi) - &base) * scale));
        Piecewise { breaks, pieces }
    }
}

/// Exact probability that commands with assigned timestamps `ats` (offsets
/// in `[0, delta_net]`) and independent noise uniform on `[0, delta_noise)`
/// land in `target` order.
pub fn order_prob_integrate(
    ats: &[Rational],
    delta_net: &Rational,
    delta_noise: &Rational,
    target: &[usize],
) -> Result<Rational, AnalysisError> {
    let n = ats.len();
    if n == 0 {
        return Err(AnalysisError::InvalidN(0));
    }
    if n > MAX_INTEGRATE_N {
        return Err(AnalysisError::IntegrateTooLarge(n));
    }
    if !delta_noise.is_positive() {
        return Err(AnalysisError::NonPositiveNoise);
    }
    let mut seen = vec![false; n];
    if target.len() != n
        || !target
            .iter()
            .all(|&i| i < n && !std::mem::replace(&mut seen[i], true))
    {
        return Err(AnalysisError::BadTarget(n));
    }
    if let Some(a) = ats.iter().find(|a| a.is_negative() || *a > delta_net) {
        return Err(AnalysisError::TimestampOutOfRange(a.to_string()));
    }
    let inv_d = delta_noise.recip();
    // G_0 is the constant 1; G_j(x) = Pr[X_1 < ... < X_j, X_j < x].
    let mut g = Piecewise {
        breaks: vec![Rational::zero()],
        pieces: vec![
            Poly::constant(Rational::zero()),
            Poly::constant(Rational::one()),
        ],
    };
    for (step, &idx) in target.iter().enumerate() {
        let lo = &ats[idx];
        let hi = lo + delta_noise;
        let antiderivative = if step == 0 {
            // Integral of the constant 1 from an arbitrary origin below lo.
            Piecewise {
                breaks: vec![lo.clone()],
                pieces: vec![
                    Poly::constant(Rational::zero()),
                    Poly(vec![-lo.clone(), Rational::one()]),
                ],
            }
        } else {
            g.antiderivative()
        };
        g = antiderivative.clamped_increment(lo, &hi, &inv_d);
    }
    Ok(g.pieces.last().expect("nonempty").eval(&Rational::zero()))
}

/// Convenience wrapper over microsecond inputs.
pub fn order_prob_integrate_micros(
    ats: &[Micros],
    delta_net: Micros,
    delta_noise: Micros,
    target: &[usize],
) -> Result<Rational, AnalysisError> {
    let ats: Vec<Rational> = ats.iter().map(|&a| int(a)).collect();
    order_prob_integrate(&ats, &int(delta_net), &int(delta_noise), target)
}

/// Binomial estimate of a probability.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct McEstimate {
    pub hits: u64,
    pub trials: u64,
}

impl McEstimate {
    pub fn estimate(&self) -> f64 {
        self.hits as f64 / self.trials as f64
    }

    pub fn stderr(&self) -> f64 {
        let p = self.estimate();
        (p * (1.0 - p) / self.trials as f64).sqrt()
    }

    /// Standard deviation of the estimator if the true value were `p`.
    pub fn sigma_at(&self, p: f64) -> f64 {
        (p * (1.0 - p) / self.trials as f64).sqrt()
    }

    /// `|estimate - expected|` in units of the sigma at `expected`.
    pub fn z_score(&self, expected: f64) -> f64 {
        let s = self.sigma_at(expected);
        let d = (self.estimate() - expected).abs();
        if s == 0.0 {
            if d == 0.0 {
                0.0
            } else {
                f64::INFINITY
            }
        } else {
            d / s
        }
    }
}

/// Runs `trials` independent Bernoulli trials in parallel chunks, each chunk
/// with its own ChaCha stream; the result does not depend on thread count.
pub fn parallel_trials<F>(trials: u64, seed: u64, trial: F) -> McEstimate
where
    F: Fn(&mut ChaCha8Rng) -> bool + Sync,
{
    let chunks = trials.div_ceil(MC_CHUNK);
    let hits = (0..chunks)
        .into_par_iter()
        .map(|c| {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            rng.set_stream(c);
            let len = MC_CHUNK.min(trials - c * MC_CHUNK);
            (0..len).filter(|_| trial(&mut rng)).count() as u64
        })
        .sum();
    McEstimate { hits, trials }
}

fn strictly_increasing(xs: &[Micros]) -> bool {
    xs.windows(2).all(|w| w[0] < w[1])
}

/// Monte Carlo probability that `n` commands under `strategy` land in index
/// order. Equal modified timestamps count against the order.
pub fn order_prob_monte_carlo(
    strategy: &AdversaryStrategy,
    n: usize,
    delta_net: Micros,
    delta_noise: Micros,
    trials: u64,
    seed: u64,
) -> Result<McEstimate, AnalysisError> {
    if trials < 1000 {
        return Err(AnalysisError::TooFewTrials(trials));
    }
    if n == 0 {
        return Err(AnalysisError::InvalidN(n));
    }
    if delta_noise <= 0 {
        return Err(AnalysisError::NonPositiveNoise);
    }
    if strategy.is_adaptive() && delta_noise <= delta_net {
        return Err(AdversaryError::NoiseTooSmall {
            delta_net,
            delta_noise,
        }
        .into());
    }
    Ok(parallel_trials(trials, seed, |rng| {
        strictly_increasing(&strategy.play(n, delta_net, delta_noise, rng))
    }))
}

/// Exact probability of index order for a non-adaptive strategy.
pub fn strategy_exact_probability(
    strategy: &AdversaryStrategy,
    n: usize,
    delta_net: Micros,
    delta_noise: Micros,
) -> Result<Rational, AnalysisError> {
    let ats = strategy
        .fixed_assignment(n, delta_net)
        .ok_or(AnalysisError::AdaptiveStrategy)?;
    let target: Vec<usize> = (0..ats.len()).collect();
    order_prob_integrate_micros(&ats, delta_net, delta_noise, &target)
}

/// Attempts to invert two commands invoked `gap` apart. The adversary gives
/// the earlier command the latest admissible timestamp and the later one its
/// earliest; noise comes from the oracle's value for a fresh slot per trial.
/// Returns the number of inversions.
pub fn falsify_linearizability(
    sro: &SroHandle,
    delta_net: Micros,
    delta_noise: Micros,
    gap: Micros,
    trials: u64,
) -> Result<u64, SroError> {
    let first = CommandId::from_label("early");
    let second = CommandId::from_label("late");
    (0..trials)
        .into_par_iter()
        .map(|k| {
            let req = RevealRequest::new(k, sro.certificate(k))?;
            let r = sro.reveal(&req)?;
            let m1 = delta_net + derive_noise(&r, &first, delta_noise);
            let m2 = gap + derive_noise(&r, &second, delta_noise);
            Ok(u64::from(m2 <= m1))
        })
        .sum()
}
