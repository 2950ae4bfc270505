//! Constant-product pool, sandwich payoffs and liquidation races.

use num_bigint::BigInt;
use num_rational::BigRational;
use num_traits::{One, Signed, ToPrimitive, Zero};
use thiserror::Error;

use crate::analysis::{order_prob_bounds, AnalysisError};
use crate::domain::{CommandId, Ledger};

pub type Amount = BigRational;

#[derive(Debug, Error, PartialEq)]
pub enum AttackError {
    #[error("reserves must be positive")]
    NonPositiveReserve,
    #[error("swap amount must be non-negative")]
    NegativeAmount,
    #[error("buying {amount} would drain a reserve of {reserve}")]
    Drain { amount: String, reserve: String },
    #[error("probabilities sum to {0}, expected 1")]
    BadDistribution(f64),
    #[error("probability {0} is outside [0, 1]")]
    BadProbability(f64),
    #[error(transparent)]
    Analysis(#[from] AnalysisError),
}

fn whole(x: i64) -> Amount {
    Amount::from_integer(BigInt::from(x))
}

/// `reserve_a * reserve_b` stays constant under every swap.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct AmmPool {
    reserve_a: Amount,
    reserve_b: Amount,
}

impl AmmPool {
    pub fn new(reserve_a: Amount, reserve_b: Amount) -> Result<Self, AttackError> {
        if !reserve_a.is_positive() || !reserve_b.is_positive() {
            return Err(AttackError::NonPositiveReserve);
        }
        Ok(AmmPool {
            reserve_a,
            reserve_b,
        })
    }

    pub fn from_integers(a: i64, b: i64) -> Result<Self, AttackError> {
        Self::new(whole(a), whole(b))
    }

    pub fn reserve_a(&self) -> &Amount {
        &self.reserve_a
    }

    pub fn reserve_b(&self) -> &Amount {
        &self.reserve_b
    }

    pub fn k(&self) -> Amount {
        &self.reserve_a * &self.reserve_b
    }

    /// Takes `amount_a` of token A out; returns the new pool and the token B
    /// paid in.
    pub fn swap_buy_a(&self, amount_a: &Amount) -> Result<(AmmPool, Amount), AttackError> {
        if amount_a.is_negative() {
            return Err(AttackError::NegativeAmount);
        }
        if amount_a >= &self.reserve_a {
            return Err(AttackError::Drain {
                amount: amount_a.to_string(),
                reserve: self.reserve_a.to_string(),
            });
        }
        let new_a = &self.reserve_a - amount_a;
        let new_b = self.k() / &new_a;
        let cost = &new_b - &self.reserve_b;
        Ok((
            AmmPool {
                reserve_a: new_a,
                reserve_b: new_b,
            },
            cost,
        ))
    }

    /// Puts `amount_a` of token A in; returns the new pool and the token B
    /// paid out.
    pub fn swap_sell_a(&self, amount_a: &Amount) -> Result<(AmmPool, Amount), AttackError> {
        if amount_a.is_negative() {
            return Err(AttackError::NegativeAmount);
        }
        let new_a = &self.reserve_a + amount_a;
        let new_b = self.k() / &new_a;
        let received = &self.reserve_b - &new_b;
        Ok((
            AmmPool {
                reserve_a: new_a,
                reserve_b: new_b,
            },
            received,
        ))
    }
}

/// The three transactions of a sandwich.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum SandwichTx {
    /// Victim buys A (`i1`).
    Victim,
    /// Attacker buys A ahead of the victim (`i2`).
    Front,
    /// Attacker sells A after the victim (`i3`).
    Back,
}

impl SandwichTx {
    pub fn label(&self) -> &'static str {
        match self {
            SandwichTx::Victim => "i1",
            SandwichTx::Front => "i2",
            SandwichTx::Back => "i3",
        }
    }
}

use SandwichTx::{Back, Front, Victim};

/// All six execution orders; the first is the successful sandwich.
pub const ALL_ORDERS: [[SandwichTx; 3]; 6] = [
    [Front, Victim, Back],
    [Back, Victim, Front],
    [Victim, Front, Back],
    [Victim, Back, Front],
    [Front, Back, Victim],
    [Back, Front, Victim],
];

pub fn order_label(order: &[SandwichTx; 3]) -> String {
    order
        .iter()
        .map(|t| t.label())
        .collect::<Vec<_>>()
        .join("-")
}

pub fn order_index(order: &[SandwichTx; 3]) -> usize {
    ALL_ORDERS
        .iter()
        .position(|o| o == order)
        .expect("every permutation is listed")
}

#[derive(Debug, Clone, PartialEq)]
pub struct SandwichScenario {
    pub pool: AmmPool,
    pub victim_buy_a: Amount,
    pub attacker_buy_a: Amount,
    pub price_a: Amount,
    pub price_b: Amount,
}

impl SandwichScenario {
    /// Pool (75, 24), both parties trade 15 A, A at $100 and B at $200.
    pub fn reference() -> Self {
        SandwichScenario {
            pool: AmmPool::from_integers(75, 24).expect("positive"),
            victim_buy_a: whole(15),
            attacker_buy_a: whole(15),
            price_a: whole(100),
            price_b: whole(200),
        }
    }
}

/// Dollar P&L `(victim, attacker)` when the transactions execute in `order`.
/// Each trade is valued at the fixed prices: tokens received minus tokens
/// paid. The attacker's sell uses what its buy obtained, or an equal amount
/// of held inventory if the sell runs first.
pub fn sandwich_profits(
    s: &SandwichScenario,
    order: &[SandwichTx; 3],
) -> Result<(Amount, Amount), AttackError> {
    let mut pool = s.pool.clone();
    let mut victim = Amount::zero();
    let mut attacker = Amount::zero();
    for tx in order {
        match tx {
            Victim => {
                let (p, cost) = pool.swap_buy_a(&s.victim_buy_a)?;
                victim += &s.victim_buy_a * &s.price_a - cost * &s.price_b;
                pool = p;
            }
            Front => {
                let (p, cost) = pool.swap_buy_a(&s.attacker_buy_a)?;
                attacker += &s.attacker_buy_a * &s.price_a - cost * &s.price_b;
                pool = p;
            }
            Back => {
                let (p, got) = pool.swap_sell_a(&s.attacker_buy_a)?;
                attacker += got * &s.price_b - &s.attacker_buy_a * &s.price_a;
                pool = p;
            }
        }
    }
    Ok((victim, attacker))
}

/// Rounds a dollar amount to cents, half away from zero.
pub fn to_cents(x: &Amount) -> i64 {
    (x * whole(100))
        .round()
        .to_integer()
        .to_i64()
        .expect("amount fits in i64 cents")
}

fn check_distribution(probs: &[f64]) -> Result<(), AttackError> {
    if let Some(&p) = probs.iter().find(|p| !(0.0..=1.0).contains(*p)) {
        return Err(AttackError::BadProbability(p));
    }
    let total: f64 = probs.iter().sum();
    if (total - 1.0).abs() > 1e-9 {
        return Err(AttackError::BadDistribution(total));
    }
    Ok(())
}

/// Expected attacker dollars given a probability per order (indexed like
/// [`ALL_ORDERS`]).
pub fn expected_attacker_profit(
    s: &SandwichScenario,
    probs: &[f64; 6],
) -> Result<f64, AttackError> {
    check_distribution(probs)?;
    let mut total = 0.0;
    for (order, &p) in ALL_ORDERS.iter().zip(probs) {
        let (_, a) = sandwich_profits(s, order)?;
        total += p * a.to_f64().unwrap_or(f64::NAN);
    }
    Ok(total)
}

/// Largest expected attacker profit over any distribution whose order
/// probabilities lie within the equality bounds for three commands.
pub fn max_expected_profit_bound(
    s: &SandwichScenario,
    alpha: &BigRational,
) -> Result<Amount, AttackError> {
    let (lo, hi) = order_prob_bounds(3, alpha)?;
    let mut payoffs: Vec<Amount> = ALL_ORDERS
        .iter()
        .map(|o| sandwich_profits(s, o).map(|(_, a)| a))
        .collect::<Result<_, _>>()?;
    payoffs.sort_by(|a, b| b.cmp(a));
    let mut spare = Amount::one() - &lo * whole(6);
    let mut total = Amount::zero();
    for pay in payoffs {
        let extra = (&hi - &lo).min(spare.clone());
        spare -= &extra;
        total += (&lo + extra) * pay;
    }
    Ok(total)
}

/// Expected prize for each client given its chance of being ordered first.
pub fn liquidation_expected_values(
    prob_first: &[f64],
    prize_usd: f64,
) -> Result<Vec<f64>, AttackError> {
    check_distribution(prob_first)?;
    Ok(prob_first.iter().map(|p| p * prize_usd).collect())
}

/// Relative order of the three sandwich transactions in a ledger.
pub fn observed_order(
    ledger: &Ledger,
    ids: &[(SandwichTx, CommandId); 3],
) -> Option<[SandwichTx; 3]> {
    let mut placed: Vec<(usize, SandwichTx)> = ids
        .iter()
        .map(|(tx, id)| ledger.position(id).map(|p| (p, *tx)))
        .collect::<Option<_>>()?;
    placed.sort_by_key(|&(p, _)| p);
    Some([placed[0].1, placed[1].1, placed[2].1])
}
