//! Account identities and token balances.

use std::collections::BTreeMap;
use std::fmt;

use serde::{Deserialize, Serialize};

/// Identity of a participant (customer, trainer, or aggregator).
///
/// Sender identity is trusted from the simulator; there are no signatures.
#[derive(
    Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize, Default,
)]
#[serde(transparent)]
pub struct AccountId(pub u32);

impl fmt::Display for AccountId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "acct{}", self.0)
    }
}

/// Flat map of token balances.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct Accounts {
    balances: BTreeMap<AccountId, u64>,
}

impl Accounts {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn balance(&self, id: AccountId) -> u64 {
        self.balances.get(&id).copied().unwrap_or(0)
    }

    /// Mints tokens into an account. Used only for scenario setup.
    pub fn credit(&mut self, id: AccountId, amount: u64) {
        *self.balances.entry(id).or_insert(0) += amount;
    }

    /// Removes tokens; fails without mutating if the balance is short.
    pub fn debit(&mut self, id: AccountId, amount: u64) -> Result<(), InsufficientBalance> {
        let entry = self.balances.entry(id).or_insert(0);
        if *entry < amount {
            return Err(InsufficientBalance {
                account: id,
                have: *entry,
                need: amount,
            });
        }
        *entry -= amount;
        Ok(())
    }

    /// Sum over all accounts, for conservation checks.
    pub fn total(&self) -> u64 {
        self.balances.values().sum()
    }
}

#[derive(Debug, Clone, thiserror::Error, PartialEq, Eq)]
#[error("{account} holds {have} tokens, needs {need}")]
pub struct InsufficientBalance {
    pub account: AccountId,
    pub have: u64,
    pub need: u64,
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn debit_is_atomic() {
        let mut accts = Accounts::new();
        accts.credit(AccountId(1), 50);
        assert!(accts.debit(AccountId(1), 60).is_err());
        assert_eq!(accts.balance(AccountId(1)), 50);
        accts.debit(AccountId(1), 20).unwrap();
        assert_eq!(accts.balance(AccountId(1)), 30);
    }
}
