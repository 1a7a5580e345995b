//! Binds the contract state machine to the ledger's block-execution loop.
//!
//! Calls enter as encoded transactions; when a block is produced the deadline
//! hook runs first, then each included transaction is decoded and applied.
//! Emitted events land in the ledger's event log stamped with the block
//! height, and per-call outcomes stay queryable by `(sender, nonce)`.

use std::collections::BTreeMap;

use crate::account::AccountId;
use crate::ledger::{Block, EventRecord, Ledger, LedgerError, PendingReceipt};
use crate::SimTime;

use super::{CallResult, ContractCall, ContractError, EmittedEvent, FlContract};

/// Result of one included transaction.
#[derive(Debug, Clone, PartialEq)]
pub struct CallRecord {
    pub sender: AccountId,
    pub nonce: u64,
    pub block_height: u64,
    pub result: Result<CallResult, ContractError>,
}

#[derive(Debug, Clone)]
pub struct ContractHost {
    pub ledger: Ledger,
    pub contract: FlContract,
    outcomes: BTreeMap<(AccountId, u64), CallRecord>,
}

impl ContractHost {
    pub fn new(ledger: Ledger, contract: FlContract) -> Self {
        Self {
            ledger,
            contract,
            outcomes: BTreeMap::new(),
        }
    }

    /// Encodes and queues a call; returns the ledger receipt.
    pub fn submit_call(
        &mut self,
        sender: AccountId,
        call: &ContractCall,
        now: SimTime,
    ) -> Result<PendingReceipt, LedgerError> {
        self.ledger.submit(sender, call.encode(), now)
    }

    /// Produces blocks up to `time`, executing deadline hooks and included
    /// calls along the way.
    pub fn advance_to(&mut self, time: SimTime) -> Result<Vec<Block>, LedgerError> {
        let blocks = self.ledger.advance_to(time)?;
        for block in &blocks {
            for event in self.contract.on_block(block.timestamp) {
                self.record_event(event, block.height);
            }
            for tx in &block.txs {
                let result = match ContractCall::decode(&tx.payload) {
                    Ok(call) => self.contract.apply(tx.sender, call, block.timestamp),
                    Err(e) => Err(e),
                };
                let result = match result {
                    Ok((value, events)) => {
                        for event in events {
                            self.record_event(event, block.height);
                        }
                        Ok(value)
                    }
                    Err(e) => Err(e),
                };
                self.outcomes.insert(
                    (tx.sender, tx.nonce),
                    CallRecord {
                        sender: tx.sender,
                        nonce: tx.nonce,
                        block_height: block.height,
                        result,
                    },
                );
            }
        }
        Ok(blocks)
    }

    fn record_event(&mut self, event: EmittedEvent, block_height: u64) {
        self.ledger.record_event(EventRecord {
            kind: event.kind,
            round: event.round,
            emitter: event.emitter,
            block_height,
            data: event.data,
        });
    }

    /// Advances block by block until every listed transaction is included;
    /// returns the latest inclusion time.
    pub fn advance_until_included(
        &mut self,
        pending: &[(AccountId, u64)],
    ) -> Result<SimTime, LedgerError> {
        loop {
            if let Some(latest) = self.all_included(pending) {
                return Ok(latest);
            }
            let next = self.ledger.config().next_boundary(self.ledger.now());
            self.advance_to(next)?;
        }
    }

    fn all_included(&self, pending: &[(AccountId, u64)]) -> Option<SimTime> {
        pending
            .iter()
            .map(|(sender, nonce)| self.ledger.inclusion(*sender, *nonce).map(|(_, t)| t))
            .try_fold(f64::NEG_INFINITY, |acc, t| t.map(|t| acc.max(t)))
    }

    pub fn outcome(&self, sender: AccountId, nonce: u64) -> Option<&CallRecord> {
        self.outcomes.get(&(sender, nonce))
    }

    /// Outcome of a call, failing loudly if the transaction has not yet been
    /// included.
    pub fn expect_outcome(&self, receipt: &PendingReceipt) -> &CallRecord {
        self.outcome(receipt.sender, receipt.nonce)
            .expect("transaction not yet included")
    }
}
