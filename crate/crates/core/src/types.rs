//! Identifiers and the transaction model shared by every module.

use std::collections::BTreeSet;
use std::fmt;

use num_rational::Rational64;
use serde::{Deserialize, Serialize};

/// Exact rational used for rates and bound arithmetic.
pub type Rate = Rational64;

/// Integer simulation time in units.
pub type Time = u64;

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(transparent)]
pub struct ShardId(pub u32);

impl ShardId {
    pub fn index(self) -> usize {
        self.0 as usize
    }
}

impl fmt::Display for ShardId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "S{}", self.0)
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(transparent)]
pub struct TxnId(pub u64);

impl fmt::Display for TxnId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "T{}", self.0)
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(transparent)]
pub struct ClusterId(pub u32);

impl fmt::Display for ClusterId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "C{}", self.0)
    }
}

/// An account lives in exactly one shard's partition.
#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct AccountId {
    pub shard: ShardId,
    pub index: u32,
}

impl fmt::Display for AccountId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}:{}", self.shard.0, self.index)
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum Mode {
    Read,
    Write,
}

/// One account access: an optional `value >= min` guard and an additive effect.
///
/// Reads never carry an effect. A withdrawal is a write with a negative
/// `delta` guarded by `min = -delta`.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Access {
    pub account: AccountId,
    pub mode: Mode,
    pub min: Option<i64>,
    pub delta: i64,
}

impl Access {
    pub fn read(account: AccountId) -> Self {
        Self { account, mode: Mode::Read, min: None, delta: 0 }
    }

    pub fn read_at_least(account: AccountId, min: i64) -> Self {
        Self { account, mode: Mode::Read, min: Some(min), delta: 0 }
    }

    pub fn deposit(account: AccountId, amount: i64) -> Self {
        Self { account, mode: Mode::Write, min: None, delta: amount }
    }

    pub fn withdraw(account: AccountId, amount: i64) -> Self {
        Self { account, mode: Mode::Write, min: Some(amount), delta: -amount }
    }

    pub fn write(account: AccountId, delta: i64, min: Option<i64>) -> Self {
        Self { account, mode: Mode::Write, min, delta }
    }

    pub fn is_write(&self) -> bool {
        self.mode == Mode::Write
    }

    pub fn holds(&self, value: i64) -> bool {
        self.min.is_none_or(|m| value >= m)
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum TxnStatus {
    Pending,
    Scheduled,
    Precommitted,
    Committed,
    Aborted,
}

impl TxnStatus {
    pub fn is_final(self) -> bool {
        matches!(self, TxnStatus::Committed | TxnStatus::Aborted)
    }

    /// Lifecycle moves only forward.
    pub fn can_advance_to(self, next: TxnStatus) -> bool {
        use TxnStatus::*;
        matches!(
            (self, next),
            (Pending, Scheduled)
                | (Scheduled, Precommitted)
                | (Scheduled, Aborted)
                | (Precommitted, Committed)
        )
    }
}

impl fmt::Display for TxnStatus {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let s = match self {
            TxnStatus::Pending => "pending",
            TxnStatus::Scheduled => "scheduled",
            TxnStatus::Precommitted => "precommitted",
            TxnStatus::Committed => "committed",
            TxnStatus::Aborted => "aborted",
        };
        f.write_str(s)
    }
}

/// An injected transaction. Accesses are kept sorted by account so the
/// per-shard split is a contiguous run.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Transaction {
    pub id: TxnId,
    pub home: ShardId,
    pub gen_time: Time,
    pub accesses: Vec<Access>,
}

impl Transaction {
    pub fn new(id: TxnId, home: ShardId, gen_time: Time, mut accesses: Vec<Access>) -> Self {
        accesses.sort_by_key(|a| a.account);
        Self { id, home, gen_time, accesses }
    }

    /// Destination shards in ascending order.
    pub fn shards(&self) -> BTreeSet<ShardId> {
        self.accesses.iter().map(|a| a.account.shard).collect()
    }

    pub fn accesses_on(&self, shard: ShardId) -> impl Iterator<Item = &Access> {
        self.accesses.iter().filter(move |a| a.account.shard == shard)
    }

    pub fn is_intra_shard(&self) -> bool {
        self.accesses.iter().all(|a| a.account.shard == self.home)
    }
}

/// Parses `p/q` or an integer into an exact rate.
pub fn parse_rate(s: &str) -> Result<Rate, String> {
    let s = s.trim();
    let bad = || format!("not a rational: {s:?}");
    match s.split_once('/') {
        Some((p, q)) => {
            let p: i64 = p.trim().parse().map_err(|_| bad())?;
            let q: i64 = q.trim().parse().map_err(|_| bad())?;
            if q == 0 {
                return Err(bad());
            }
            Ok(Rate::new(p, q))
        }
        None => s.parse::<i64>().map(Rate::from_integer).map_err(|_| bad()),
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn rates_parse_exactly() {
        assert_eq!(parse_rate("1/64").unwrap(), Rate::new(1, 64));
        assert_eq!(parse_rate(" 2/4 ").unwrap(), Rate::new(1, 2));
        assert_eq!(parse_rate("1").unwrap(), Rate::from_integer(1));
        assert!(parse_rate("1/0").is_err());
        assert!(parse_rate("0.5").is_err());
    }

    #[test]
    fn status_moves_forward_only() {
        use TxnStatus::*;
        assert!(Pending.can_advance_to(Scheduled));
        assert!(Precommitted.can_advance_to(Committed));
        assert!(!Committed.can_advance_to(Pending));
        assert!(!Pending.can_advance_to(Committed));
    }
}
