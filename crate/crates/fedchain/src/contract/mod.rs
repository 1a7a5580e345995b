//! The training-project smart contract as an explicit state machine executed
//! by the ledger: registration, per-round event choreography, access control,
//! committee certification, and automated reward payout.
//!
//! Per-round event order is `key_request* -> key_achieved ->
//! local_training_finished -> global_model_updated`; in committee mode the
//! majority certification produces the final event. Every state-mutating call
//! validates fully before touching state, so a rejected call leaves the
//! contract bit-identical.
//!
//! Sender identity is trusted from the simulator (no signatures); payload
//! authenticity is the protection layer's job, not the ledger's.

pub mod calls;
pub mod host;

pub use calls::ContractCall;
pub use host::ContractHost;

use std::collections::{BTreeMap, BTreeSet};
use std::fmt;

use serde::{Deserialize, Serialize};

use crate::account::{AccountId, Accounts};
use crate::crypto::{Digest, PublicKey, WrappedKey};
use crate::dataplane::ContentId;
use crate::ledger::EventKind;
use crate::SimTime;

#[derive(
    Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize, Default,
)]
#[serde(transparent)]
pub struct ProjectId(pub u64);

impl fmt::Display for ProjectId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "project{}", self.0)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ProjectStatus {
    Open,
    Running,
    Finished,
}

/// Where a round stands in the `key_request* -> key_achieved ->
/// local_training_finished -> global_model_updated -> settlement` ladder.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum RoundPhase {
    /// Trainers may join; ends when the customer publishes wrapped keys.
    Joining,
    /// key_achieved emitted; trainers train and submit update refs.
    Training,
    /// local_training_finished emitted; awaiting publication (owner) or
    /// endorsements (committee).
    Aggregating,
    /// global_model_updated emitted; awaiting score submission.
    Settling,
    /// Rewards paid out.
    Done,
    /// Voided at a deadline; fees were refunded.
    Aborted,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainerRecord {
    pub pubkey: PublicKey,
    pub fee_paid: u64,
}

/// Per-round contract record.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RoundState {
    pub round: u64,
    pub phase: RoundPhase,
    pub enrolled: BTreeSet<AccountId>,
    /// Fees paid for this round, kept for abort refunds.
    pub fees: BTreeMap<AccountId, u64>,
    pub wrapped_keys: BTreeMap<AccountId, WrappedKey>,
    /// Ciphertext of the round's base model, anchored for fallback fetches.
    pub base_model_ref: Option<ContentId>,
    pub update_refs: BTreeMap<AccountId, ContentId>,
    /// Commitment to the published next global model (digest of its
    /// canonical plaintext serialization).
    pub global_model_ref: Option<ContentId>,
    pub contribution_digest: Option<Digest>,
    pub endorsements: BTreeMap<AccountId, Digest>,
    #[serde(skip)]
    endorsement_payloads: BTreeMap<Digest, (ContentId, Digest)>,
    pub certified_providers: Vec<AccountId>,
    /// Settled fixed-point scores (score * 10^6).
    pub contributions: BTreeMap<AccountId, i64>,
    pub settled: bool,
    pub training_deadline: Option<SimTime>,
    pub endorse_deadline: Option<SimTime>,
}

impl RoundState {
    fn new(round: u64) -> Self {
        Self {
            round,
            phase: RoundPhase::Joining,
            enrolled: BTreeSet::new(),
            fees: BTreeMap::new(),
            wrapped_keys: BTreeMap::new(),
            base_model_ref: None,
            update_refs: BTreeMap::new(),
            global_model_ref: None,
            contribution_digest: None,
            endorsements: BTreeMap::new(),
            endorsement_payloads: BTreeMap::new(),
            certified_providers: Vec::new(),
            contributions: BTreeMap::new(),
            settled: false,
            training_deadline: None,
            endorse_deadline: None,
        }
    }
}

/// Immutable creation parameters of a project.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ProjectConfig {
    /// Hash of the training configuration.
    pub config_digest: Digest,
    /// Tokens deposited into the treasury.
    pub budget: u64,
    /// Minimum per-round join fee.
    pub required_fee: u64,
    /// Fixed budget settled per round.
    pub round_budget: u64,
    pub planned_rounds: u64,
    /// Aggregator committee; empty selects owner-executed mode.
    pub committee: Vec<AccountId>,
    pub customer_pubkey: PublicKey,
    /// Seconds after key_achieved before the training deadline fires; also
    /// the endorsement window in committee mode.
    pub round_deadline: SimTime,
}

/// Full on-contract record of a training project.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ProjectState {
    pub project_id: ProjectId,
    pub customer: AccountId,
    pub customer_pubkey: PublicKey,
    pub config_digest: Digest,
    pub required_fee: u64,
    pub round_budget: u64,
    pub planned_rounds: u64,
    pub round_deadline: SimTime,
    pub trainers: BTreeMap<AccountId, TrainerRecord>,
    pub aggregators: Vec<AccountId>,
    pub treasury: u64,
    pub rounds: BTreeMap<u64, RoundState>,
    pub current_round: u64,
    pub status: ProjectStatus,
}

impl ProjectState {
    pub fn is_committee(&self) -> bool {
        !self.aggregators.is_empty()
    }

    pub fn round(&self, round: u64) -> Result<&RoundState, ContractError> {
        self.rounds.get(&round).ok_or(ContractError::RoundClosed)
    }

    fn round_mut(&mut self, round: u64) -> Result<&mut RoundState, ContractError> {
        self.rounds.get_mut(&round).ok_or(ContractError::RoundClosed)
    }
}

/// Contract-executed transfer of reward tokens for one round.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct RewardAllocation {
    pub round: u64,
    pub payouts: BTreeMap<AccountId, u64>,
    pub refund: u64,
}

/// Event produced while executing a call; the host stamps the block height.
#[derive(Debug, Clone, PartialEq)]
pub struct EmittedEvent {
    pub kind: EventKind,
    pub round: u64,
    pub emitter: AccountId,
    pub data: BTreeMap<String, String>,
}

impl EmittedEvent {
    fn new(kind: EventKind, round: u64, emitter: AccountId) -> Self {
        Self {
            kind,
            round,
            emitter,
            data: BTreeMap::new(),
        }
    }

    fn with(mut self, key: &str, value: impl ToString) -> Self {
        self.data.insert(key.to_string(), value.to_string());
        self
    }
}

/// Value returned by a successful call, surfaced through the host.
#[derive(Debug, Clone, PartialEq)]
pub enum CallResult {
    None,
    ProjectCreated(ProjectId),
    Settled(RewardAllocation),
}

#[derive(Debug, Clone, thiserror::Error, PartialEq)]
pub enum ContractError {
    #[error("unknown project {0}")]
    UnknownProject(ProjectId),
    #[error("deposit missing or empty budget")]
    InsufficientDeposit,
    #[error("invalid project config: {0}")]
    InvalidConfig(&'static str),
    #[error("unauthorized: {0}")]
    Unauthorized(&'static str),
    #[error("trainer already joined this round")]
    DuplicateJoin,
    #[error("round is not accepting this call")]
    RoundClosed,
    #[error("only the customer can update project-critical state")]
    NotCustomer,
    #[error("wrapped keys missing enrolled trainer {0}")]
    MissingTrainerKey(AccountId),
    #[error("account is not enrolled in this round")]
    NotEnrolled,
    #[error("round key not yet published")]
    TooEarly,
    #[error("update reference already submitted")]
    DuplicateUpdate,
    #[error("call not valid in this execution mode")]
    WrongMode,
    #[error("account is not a committee member")]
    NotCommitteeMember,
    #[error("aggregator already endorsed this round")]
    AlreadyEndorsed,
    #[error("round has no certified result")]
    NotCertified,
    #[error("scores digest does not match the committed digest")]
    DigestMismatch,
    #[error("invalid scores: {0}")]
    InvalidScores(&'static str),
    #[error("round already settled")]
    AlreadySettled,
    #[error("treasury cannot cover the round budget")]
    InsufficientTreasury,
    #[error("malformed call payload: {0}")]
    MalformedCall(&'static str),
}

/// The contract world: a key registry, token balances, and projects.
///
/// Mutated only through [`FlContract::apply`] (driven by the ledger's block
/// execution) plus explicit setup credits.
#[derive(Debug, Clone, Default)]
pub struct FlContract {
    accounts: Accounts,
    keys: BTreeMap<AccountId, PublicKey>,
    projects: BTreeMap<ProjectId, ProjectState>,
    next_project: u64,
    clock: SimTime,
}

impl FlContract {
    pub fn new() -> Self {
        Self::default()
    }

    /// Mints setup funds for an account.
    pub fn fund(&mut self, id: AccountId, amount: u64) {
        self.accounts.credit(id, amount);
    }

    pub fn balance(&self, id: AccountId) -> u64 {
        self.accounts.balance(id)
    }

    pub fn registered_key(&self, id: AccountId) -> Option<PublicKey> {
        self.keys.get(&id).copied()
    }

    pub fn project(&self, id: ProjectId) -> Option<&ProjectState> {
        self.projects.get(&id)
    }

    pub fn projects(&self) -> impl Iterator<Item = &ProjectState> {
        self.projects.values()
    }

    /// Sum of all balances and treasuries; constant over any call sequence
    /// after setup funding.
    pub fn total_tokens(&self) -> u64 {
        self.accounts.total() + self.projects.values().map(|p| p.treasury).sum::<u64>()
    }

    /// Full project state as JSON, for inspection tooling.
    pub fn dump_project_json(&self, id: ProjectId) -> Result<String, ContractError> {
        let project = self
            .projects
            .get(&id)
            .ok_or(ContractError::UnknownProject(id))?;
        Ok(serde_json::to_string_pretty(project).expect("project state serializes"))
    }

    /// Dispatches a decoded call. `now` is the executing block's timestamp.
    pub fn apply(
        &mut self,
        sender: AccountId,
        call: ContractCall,
        now: SimTime,
    ) -> Result<(CallResult, Vec<EmittedEvent>), ContractError> {
        self.clock = now;
        match call {
            ContractCall::RegisterKey { pubkey } => {
                self.keys.insert(sender, pubkey);
                Ok((CallResult::None, Vec::new()))
            }
            ContractCall::CreateProject { config } => self
                .create_project(sender, config)
                .map(|id| (CallResult::ProjectCreated(id), Vec::new())),
            ContractCall::JoinRound {
                project,
                round,
                fee,
            } => self
                .join_round(sender, project, round, fee)
                .map(|ev| (CallResult::None, ev)),
            ContractCall::PublishWrappedKeys {
                project,
                round,
                base_model,
                wrapped,
            } => self
                .publish_wrapped_keys(sender, project, round, base_model, wrapped)
                .map(|ev| (CallResult::None, ev)),
            ContractCall::SubmitUpdateRef {
                project,
                round,
                cid,
            } => self
                .submit_update_ref(sender, project, round, cid)
                .map(|ev| (CallResult::None, ev)),
            ContractCall::PublishGlobalModel {
                project,
                round,
                model,
                contribution_digest,
            } => self
                .publish_global_model(sender, project, round, model, contribution_digest)
                .map(|ev| (CallResult::None, ev)),
            ContractCall::Endorse {
                project,
                round,
                model,
                contribution_digest,
            } => self
                .endorse(sender, project, round, model, contribution_digest)
                .map(|ev| (CallResult::None, ev)),
            ContractCall::SubmitContributions {
                project,
                round,
                scores,
            } => self
                .submit_contributions(sender, project, round, &scores)
                .map(|(alloc, ev)| (CallResult::Settled(alloc), ev)),
        }
    }

    /// Creates a project funded from the customer's balance. The committee
    /// list selects committee-executed mode; empty means owner-executed.
    pub fn create_project(
        &mut self,
        customer: AccountId,
        config: ProjectConfig,
    ) -> Result<ProjectId, ContractError> {
        if config.budget == 0 {
            return Err(ContractError::InsufficientDeposit);
        }
        if config.planned_rounds == 0 {
            return Err(ContractError::InvalidConfig("planned_rounds must be >= 1"));
        }
        if !(config.round_deadline > 0.0) {
            return Err(ContractError::InvalidConfig("round_deadline must be > 0"));
        }
        let mut committee = config.committee.clone();
        committee.sort();
        committee.dedup();
        if committee.len() != config.committee.len() {
            return Err(ContractError::InvalidConfig("duplicate committee member"));
        }
        if committee.contains(&customer) {
            return Err(ContractError::InvalidConfig(
                "customer cannot sit on the committee",
            ));
        }
        self.accounts
            .debit(customer, config.budget)
            .map_err(|_| ContractError::InsufficientDeposit)?;

        let id = ProjectId(self.next_project + 1);
        self.next_project += 1;
        let mut rounds = BTreeMap::new();
        rounds.insert(1, RoundState::new(1));
        self.projects.insert(
            id,
            ProjectState {
                project_id: id,
                customer,
                customer_pubkey: config.customer_pubkey,
                config_digest: config.config_digest,
                required_fee: config.required_fee,
                round_budget: config.round_budget,
                planned_rounds: config.planned_rounds,
                round_deadline: config.round_deadline,
                trainers: BTreeMap::new(),
                aggregators: committee,
                treasury: config.budget,
                rounds,
                current_round: 1,
                status: ProjectStatus::Open,
            },
        );
        Ok(id)
    }

    /// Enrolls a fee-paying, key-holding trainer into the current round and
    /// emits `key_request`.
    pub fn join_round(
        &mut self,
        trainer: AccountId,
        project_id: ProjectId,
        round: u64,
        fee: u64,
    ) -> Result<Vec<EmittedEvent>, ContractError> {
        let pubkey = self.keys.get(&trainer).copied();
        let project = self
            .projects
            .get(&project_id)
            .ok_or(ContractError::UnknownProject(project_id))?;
        if project.status == ProjectStatus::Finished {
            return Err(ContractError::RoundClosed);
        }
        if round != project.current_round {
            return Err(ContractError::RoundClosed);
        }
        let state = project.round(round)?;
        if state.phase != RoundPhase::Joining {
            return Err(ContractError::RoundClosed);
        }
        if trainer == project.customer || project.aggregators.contains(&trainer) {
            return Err(ContractError::Unauthorized(
                "customers and aggregators cannot train",
            ));
        }
        let Some(pubkey) = pubkey else {
            return Err(ContractError::Unauthorized("no registered public key"));
        };
        if fee < project.required_fee {
            return Err(ContractError::Unauthorized("fee below the required fee"));
        }
        if state.enrolled.contains(&trainer) {
            return Err(ContractError::DuplicateJoin);
        }
        if self.accounts.balance(trainer) < fee {
            return Err(ContractError::Unauthorized("balance cannot cover the fee"));
        }

        self.accounts
            .debit(trainer, fee)
            .expect("balance checked above");
        let project = self.projects.get_mut(&project_id).expect("checked");
        project.treasury += fee;
        project.status = ProjectStatus::Running;
        project
            .trainers
            .entry(trainer)
            .and_modify(|r| {
                r.fee_paid += fee;
                r.pubkey = pubkey;
            })
            .or_insert(TrainerRecord {
                pubkey,
                fee_paid: fee,
            });
        let state = project.round_mut(round).expect("checked");
        state.enrolled.insert(trainer);
        state.fees.insert(trainer, fee);
        Ok(vec![
            EmittedEvent::new(EventKind::KeyRequest, round, trainer).with("trainer", trainer)
        ])
    }

    /// Stores the wrapped round keys (one per enrolled trainer) plus the
    /// anchored base-model ciphertext id, and emits `key_achieved`.
    pub fn publish_wrapped_keys(
        &mut self,
        caller: AccountId,
        project_id: ProjectId,
        round: u64,
        base_model: ContentId,
        wrapped: Vec<(AccountId, WrappedKey)>,
    ) -> Result<Vec<EmittedEvent>, ContractError> {
        let project = self
            .projects
            .get(&project_id)
            .ok_or(ContractError::UnknownProject(project_id))?;
        if caller != project.customer {
            return Err(ContractError::NotCustomer);
        }
        if round != project.current_round {
            return Err(ContractError::RoundClosed);
        }
        let state = project.round(round)?;
        if state.phase != RoundPhase::Joining {
            return Err(ContractError::RoundClosed);
        }
        if state.enrolled.is_empty() {
            return Err(ContractError::InvalidConfig("no enrolled trainers"));
        }
        let provided: BTreeSet<AccountId> = wrapped.iter().map(|(id, _)| *id).collect();
        if provided.len() != wrapped.len() {
            return Err(ContractError::InvalidConfig("duplicate wrapped-key entry"));
        }
        for trainer in &state.enrolled {
            if !provided.contains(trainer) {
                return Err(ContractError::MissingTrainerKey(*trainer));
            }
        }
        for id in &provided {
            if !state.enrolled.contains(id) {
                return Err(ContractError::NotEnrolled);
            }
        }

        let deadline = self.clock + project.round_deadline;
        let customer = project.customer;
        let project = self.projects.get_mut(&project_id).expect("checked");
        let state = project.round_mut(round).expect("checked");
        state.wrapped_keys = wrapped.into_iter().collect();
        state.base_model_ref = Some(base_model);
        state.phase = RoundPhase::Training;
        state.training_deadline = Some(deadline);
        Ok(vec![EmittedEvent::new(EventKind::KeyAchieved, round, customer)
            .with("trainers", state.enrolled.len())])
    }

    /// Records a trainer's encrypted-update reference; emits
    /// `local_training_finished` exactly once, when the last enrolled trainer
    /// submits.
    pub fn submit_update_ref(
        &mut self,
        trainer: AccountId,
        project_id: ProjectId,
        round: u64,
        cid: ContentId,
    ) -> Result<Vec<EmittedEvent>, ContractError> {
        let project = self
            .projects
            .get(&project_id)
            .ok_or(ContractError::UnknownProject(project_id))?;
        let state = project.round(round)?;
        match state.phase {
            RoundPhase::Joining => return Err(ContractError::TooEarly),
            RoundPhase::Training => {}
            _ => return Err(ContractError::RoundClosed),
        }
        if !state.enrolled.contains(&trainer) {
            return Err(ContractError::NotEnrolled);
        }
        if state.update_refs.contains_key(&trainer) {
            return Err(ContractError::DuplicateUpdate);
        }

        let committee = project.is_committee();
        let clock = self.clock;
        let deadline = clock + project.round_deadline;
        let project = self.projects.get_mut(&project_id).expect("checked");
        let state = project.round_mut(round).expect("checked");
        state.update_refs.insert(trainer, cid);
        if state.update_refs.len() == state.enrolled.len() {
            state.phase = RoundPhase::Aggregating;
            if committee {
                state.endorse_deadline = Some(deadline);
            }
            let submissions = state.update_refs.len();
            return Ok(vec![EmittedEvent::new(
                EventKind::LocalTrainingFinished,
                round,
                trainer,
            )
            .with("submissions", submissions)
            .with("trigger", "all-submitted")]);
        }
        Ok(Vec::new())
    }

    /// Owner-executed publication of the aggregated model commitment plus
    /// the contribution digest; emits `global_model_updated` and opens the
    /// next round.
    pub fn publish_global_model(
        &mut self,
        caller: AccountId,
        project_id: ProjectId,
        round: u64,
        model: ContentId,
        contribution_digest: Digest,
    ) -> Result<Vec<EmittedEvent>, ContractError> {
        let project = self
            .projects
            .get(&project_id)
            .ok_or(ContractError::UnknownProject(project_id))?;
        if project.is_committee() {
            return Err(ContractError::WrongMode);
        }
        if caller != project.customer {
            return Err(ContractError::NotCustomer);
        }
        let state = project.round(round)?;
        if state.phase != RoundPhase::Aggregating {
            return Err(ContractError::RoundClosed);
        }

        let customer = project.customer;
        let project = self.projects.get_mut(&project_id).expect("checked");
        let state = project.round_mut(round).expect("checked");
        state.global_model_ref = Some(model);
        state.contribution_digest = Some(contribution_digest);
        state.phase = RoundPhase::Settling;
        let event = EmittedEvent::new(EventKind::GlobalModelUpdated, round, customer)
            .with("model", model);
        Self::open_next_round(project, round);
        Ok(vec![event])
    }

    /// Committee endorsement of an aggregation result. When any result digest
    /// reaches a strict majority, that version is adopted, its endorsers
    /// become the certified providers, and `global_model_updated` fires.
    pub fn endorse(
        &mut self,
        aggregator: AccountId,
        project_id: ProjectId,
        round: u64,
        model: ContentId,
        contribution_digest: Digest,
    ) -> Result<Vec<EmittedEvent>, ContractError> {
        let project = self
            .projects
            .get(&project_id)
            .ok_or(ContractError::UnknownProject(project_id))?;
        if !project.is_committee() {
            return Err(ContractError::WrongMode);
        }
        if !project.aggregators.contains(&aggregator) {
            return Err(ContractError::NotCommitteeMember);
        }
        let state = project.round(round)?;
        if state.phase != RoundPhase::Aggregating {
            return Err(ContractError::RoundClosed);
        }
        if state.endorsements.contains_key(&aggregator) {
            return Err(ContractError::AlreadyEndorsed);
        }

        let committee_size = project.aggregators.len();
        let result_digest = result_digest(model, contribution_digest);
        let project = self.projects.get_mut(&project_id).expect("checked");
        let state = project.round_mut(round).expect("checked");
        state.endorsements.insert(aggregator, result_digest);
        state
            .endorsement_payloads
            .entry(result_digest)
            .or_insert((model, contribution_digest));

        let matching = state
            .endorsements
            .values()
            .filter(|d| **d == result_digest)
            .count();
        if matching * 2 > committee_size {
            let providers: Vec<AccountId> = state
                .endorsements
                .iter()
                .filter(|(_, d)| **d == result_digest)
                .map(|(id, _)| *id)
                .collect();
            let (model, contribution) = state.endorsement_payloads[&result_digest];
            state.certified_providers = providers;
            state.global_model_ref = Some(model);
            state.contribution_digest = Some(contribution);
            state.phase = RoundPhase::Settling;
            let event = EmittedEvent::new(EventKind::GlobalModelUpdated, round, aggregator)
                .with("model", model)
                .with("endorsements", matching);
            Self::open_next_round(project, round);
            return Ok(vec![event]);
        }
        Ok(Vec::new())
    }

    /// Certified aggregators for a round in ascending account order; in
    /// owner mode the customer is the sole provider.
    pub fn certified_providers(
        &self,
        project_id: ProjectId,
        round: u64,
    ) -> Result<Vec<AccountId>, ContractError> {
        let project = self
            .projects
            .get(&project_id)
            .ok_or(ContractError::UnknownProject(project_id))?;
        if !project.is_committee() {
            return Ok(vec![project.customer]);
        }
        let state = project.round(round)?;
        if state.certified_providers.is_empty() {
            return Err(ContractError::NotCertified);
        }
        let mut providers = state.certified_providers.clone();
        providers.sort();
        Ok(providers)
    }

    /// Verifies the score submission against the committed digest and
    /// executes the payout: proportional over clipped scores, remainder
    /// refunded, round marked settled.
    pub fn submit_contributions(
        &mut self,
        caller: AccountId,
        project_id: ProjectId,
        round: u64,
        scores: &[(AccountId, i64)],
    ) -> Result<(RewardAllocation, Vec<EmittedEvent>), ContractError> {
        let project = self
            .projects
            .get(&project_id)
            .ok_or(ContractError::UnknownProject(project_id))?;
        let state = project.round(round)?;
        if state.settled {
            return Err(ContractError::AlreadySettled);
        }
        if state.phase != RoundPhase::Settling {
            return Err(ContractError::RoundClosed);
        }
        if project.is_committee() {
            if !state.certified_providers.contains(&caller) {
                return Err(ContractError::Unauthorized(
                    "only certified providers may settle",
                ));
            }
        } else if caller != project.customer {
            return Err(ContractError::NotCustomer);
        }
        if !scores.windows(2).all(|w| w[0].0 < w[1].0) {
            return Err(ContractError::InvalidScores(
                "scores must be strictly ascending by trainer",
            ));
        }
        let scored: BTreeSet<AccountId> = scores.iter().map(|(id, _)| *id).collect();
        let participants: BTreeSet<AccountId> = state.update_refs.keys().copied().collect();
        if scored != participants {
            return Err(ContractError::InvalidScores(
                "scores must cover exactly the round's submitted trainers",
            ));
        }
        let digest = crate::contribution::scores_digest(round, scores);
        if Some(digest) != state.contribution_digest {
            return Err(ContractError::DigestMismatch);
        }
        if project.treasury < project.round_budget {
            return Err(ContractError::InsufficientTreasury);
        }

        let customer = project.customer;
        let round_budget = project.round_budget;
        let allocation = crate::contribution::allocate(round, scores, round_budget);
        let project = self.projects.get_mut(&project_id).expect("checked");
        project.treasury -= round_budget;
        for (trainer, amount) in &allocation.payouts {
            self.accounts.credit(*trainer, *amount);
        }
        self.accounts.credit(customer, allocation.refund);
        let state = project.round_mut(round).expect("checked");
        state.contributions = scores.iter().copied().collect();
        state.settled = true;
        state.phase = RoundPhase::Done;
        Ok((allocation, Vec::new()))
    }

    /// Deadline hook, run once per produced block with the block timestamp.
    ///
    /// Training deadline: with at least one submission the round proceeds
    /// (emitting `local_training_finished`), otherwise it is voided.
    /// Endorsement deadline: an uncertified committee round is voided. A
    /// voided round refunds this round's fees and the project moves on.
    pub fn on_block(&mut self, now: SimTime) -> Vec<EmittedEvent> {
        self.clock = now;
        enum Action {
            Abort,
            FinishTraining { submissions: usize },
        }
        let mut due: Vec<(ProjectId, u64, Action)> = Vec::new();
        for (id, project) in &self.projects {
            let round = project.current_round;
            let Ok(state) = project.round(round) else {
                continue;
            };
            match state.phase {
                RoundPhase::Training
                    if state.training_deadline.is_some_and(|d| now >= d) =>
                {
                    if state.update_refs.is_empty() {
                        due.push((*id, round, Action::Abort));
                    } else {
                        due.push((
                            *id,
                            round,
                            Action::FinishTraining {
                                submissions: state.update_refs.len(),
                            },
                        ));
                    }
                }
                RoundPhase::Aggregating
                    if project.is_committee()
                        && state.endorse_deadline.is_some_and(|d| now >= d) =>
                {
                    due.push((*id, round, Action::Abort));
                }
                _ => {}
            }
        }
        let mut events = Vec::new();
        for (id, round, action) in due {
            match action {
                Action::Abort => self.abort_round(id, round),
                Action::FinishTraining { submissions } => {
                    let project = self.projects.get_mut(&id).expect("exists");
                    let committee = project.is_committee();
                    let customer = project.customer;
                    let deadline = now + project.round_deadline;
                    let state = project.round_mut(round).expect("exists");
                    state.phase = RoundPhase::Aggregating;
                    if committee {
                        state.endorse_deadline = Some(deadline);
                    }
                    events.push(
                        EmittedEvent::new(EventKind::LocalTrainingFinished, round, customer)
                            .with("submissions", submissions)
                            .with("trigger", "deadline"),
                    );
                }
            }
        }
        events
    }

    /// Voids a round: refunds the round's fees from the treasury and moves
    /// the project to the next round (or finishes it).
    fn abort_round(&mut self, project_id: ProjectId, round: u64) {
        let project = self.projects.get_mut(&project_id).expect("exists");
        let state = project.round_mut(round).expect("exists");
        state.phase = RoundPhase::Aborted;
        let fees = std::mem::take(&mut state.fees);
        for (trainer, fee) in fees {
            project.treasury -= fee;
            self.accounts.credit(trainer, fee);
        }
        Self::open_next_round(project, round);
    }

    fn open_next_round(project: &mut ProjectState, finished_round: u64) {
        if finished_round < project.planned_rounds {
            let next = finished_round + 1;
            project.current_round = next;
            project.rounds.insert(next, RoundState::new(next));
        } else {
            project.status = ProjectStatus::Finished;
        }
    }
}

/// Digest a committee member endorses: binds the model commitment and the
/// contribution digest together.
pub fn result_digest(model: ContentId, contribution_digest: Digest) -> Digest {
    let mut bytes = Vec::with_capacity(64);
    bytes.extend_from_slice(&model.0);
    bytes.extend_from_slice(&contribution_digest.0);
    Digest::of(&bytes)
}

#[cfg(test)]
mod tests;
